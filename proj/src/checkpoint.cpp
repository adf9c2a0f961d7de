#include "midol/checkpoint.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "midol/config.hpp"

namespace midol {

namespace {

using Json = nlohmann::json;

// Every array in a fixed order: student, teacher, then the two moment sets
// named after the student parameter they track.
std::vector<std::pair<std::string, const DenseArray*>> all_arrays(const ModelState& s) {
    std::vector<std::pair<std::string, const DenseArray*>> out;
    const auto student = s.student_params();
    for (const auto& p : student) out.push_back(p);
    for (const auto& p : s.teacher_params()) out.push_back(p);
    for (std::size_t i = 0; i < student.size(); ++i)
        out.emplace_back("adam.m." + student[i].first, &s.adam.first[i]);
    for (std::size_t i = 0; i < student.size(); ++i)
        out.emplace_back("adam.v." + student[i].first, &s.adam.second[i]);
    return out;
}

std::vector<std::pair<std::string, DenseArray*>> all_arrays(ModelState& s) {
    std::vector<std::pair<std::string, DenseArray*>> out;
    const auto student = s.student_params();
    for (const auto& p : student) out.push_back(p);
    for (const auto& p : s.teacher_params()) out.push_back(p);
    for (std::size_t i = 0; i < student.size(); ++i)
        out.emplace_back("adam.m." + student[i].first, &s.adam.first[i]);
    for (std::size_t i = 0; i < student.size(); ++i)
        out.emplace_back("adam.v." + student[i].first, &s.adam.second[i]);
    return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config,
                     const ModelState& state) {
    Json arrays = Json::array();
    for (const auto& [name, a] : all_arrays(state))
        arrays.push_back({{"name", name}, {"shape", a->shape()}, {"data", a->storage()}});
    const Json doc = {{"config", config_to_json(config)}, {"step", state.step}, {"arrays", arrays}};

    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << kCheckpointMagic << '\n' << doc.dump() << '\n';
    if (!f) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read checkpoint " + path.string());
    std::string magic;
    std::getline(f, magic);
    if (magic != kCheckpointMagic)
        throw std::runtime_error(path.string() + ": not a checkpoint (bad magic line)");

    Json doc;
    try {
        doc = Json::parse(f);
    } catch (const Json::exception& e) {
        throw std::runtime_error(path.string() + ": malformed checkpoint body: " + e.what());
    }
    try {
        Checkpoint ck;
        ck.config = config_from_json(doc.at("config"));
        ck.config.validate();
        ck.state = init_model(ck.config);
        ck.state.step = doc.at("step").get<std::size_t>();

        std::map<std::string, const Json*> stored;
        for (const Json& a : doc.at("arrays")) stored[a.at("name").get<std::string>()] = &a;
        auto slots = all_arrays(ck.state);
        if (stored.size() != slots.size())
            throw std::runtime_error("expected " + std::to_string(slots.size()) + " arrays, found " +
                                     std::to_string(stored.size()));
        for (auto& [name, slot] : slots) {
            auto it = stored.find(name);
            if (it == stored.end()) throw std::runtime_error("missing array '" + name + "'");
            auto shape = it->second->at("shape").get<std::vector<std::size_t>>();
            if (shape != slot->shape())
                throw std::runtime_error("array '" + name + "' has shape that disagrees with the config");
            *slot = DenseArray(std::move(shape), it->second->at("data").get<std::vector<double>>());
        }
        return ck;
    } catch (const Json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

}  // namespace midol
