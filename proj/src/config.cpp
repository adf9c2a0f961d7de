#include "midol/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace midol {

namespace {

template <class Config, class F>
void for_each_field(Config& c, F&& f) {
    f("steps", c.steps);
    f("batch", c.batch);
    f("learning_rate", c.learning_rate);
    f("weight_decay", c.weight_decay);
    f("beta1", c.beta1);
    f("beta2", c.beta2);
    f("ema_momentum", c.ema_momentum);
    f("sinkhorn_iters", c.sinkhorn_iters);
    f("sinkhorn_epsilon", c.sinkhorn_epsilon);
    f("temperature", c.temperature);
    f("seed", c.seed);
    f("enable_moe", c.enable_moe);
    f("enable_route", c.enable_route);
    f("enable_cst", c.enable_cst);
    f("experts", c.experts);
    f("modalities", c.modalities);
    f("views", c.views);
    f("grad_clip", c.grad_clip);
    f("eval_every", c.eval_every);
    f("eval_samples", c.eval_samples);
}

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
    throw std::invalid_argument("config key '" + std::string(key) + "': expected " + expected +
                                ", got '" + std::string(value) + "'");
}

template <class T>
void parse_into(std::string_view key, std::string_view value, T& out) {
    if constexpr (std::is_same_v<T, bool>) {
        if (value == "true" || value == "1") out = true;
        else if (value == "false" || value == "0") out = false;
        else bad_value(key, value, "true or false");
    } else {
        T v{};
        const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
        if (ec != std::errc() || ptr != value.data() + value.size() || value.empty())
            bad_value(key, value, std::is_floating_point_v<T> ? "a number" : "a non-negative integer");
        out = v;
    }
}

std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
template <class T>
std::string format_value(T v) {
    return std::to_string(v);
}

}  // namespace

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    TrainConfig c;
    for_each_field(c, [&](const char* name, auto&) { keys.emplace_back(name); });
    return keys;
}

void apply_setting(TrainConfig& config, std::string_view key, std::string_view value) {
    bool found = false;
    for_each_field(config, [&](const char* name, auto& field) {
        if (key == name) {
            parse_into(key, trim(value), field);
            found = true;
        }
    });
    if (!found) throw std::invalid_argument("unknown config key '" + std::string(key) + "'");
}

TrainConfig parse_config_text(std::string_view text, TrainConfig base) {
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = trim(text.substr(0, nl));
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": expected key=value");
        apply_setting(base, trim(line.substr(0, eq)), line.substr(eq + 1));
    }
    return base;
}

TrainConfig parse_config(const std::optional<std::filesystem::path>& path,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
    TrainConfig config;
    if (path) {
        std::ifstream f(*path);
        if (!f) throw std::runtime_error("cannot read config file " + path->string());
        std::stringstream ss;
        ss << f.rdbuf();
        config = parse_config_text(ss.str(), config);
    }
    for (const auto& [key, value] : overrides) apply_setting(config, key, value);
    config.validate();
    return config;
}

std::string format_config(const TrainConfig& config) {
    std::string out;
    for_each_field(config, [&](const char* name, const auto& field) {
        out += name;
        out += '=';
        out += format_value(field);
        out += '\n';
    });
    return out;
}

nlohmann::json config_to_json(const TrainConfig& config) {
    nlohmann::json j = nlohmann::json::object();
    for_each_field(config, [&](const char* name, const auto& field) { j[name] = field; });
    return j;
}

TrainConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("config JSON must be an object");
    TrainConfig c;
    for (const auto& [key, value] : j.items()) {
        bool found = false;
        for_each_field(c, [&](const char* name, auto& field) {
            if (key != name) return;
            found = true;
            using T = std::decay_t<decltype(field)>;
            try {
                field = value.template get<T>();
            } catch (const nlohmann::json::exception&) {
                throw std::invalid_argument("config key '" + key + "': wrong JSON type");
            }
        });
        if (!found) throw std::invalid_argument("unknown config key '" + key + "'");
    }
    return c;
}

}  // namespace midol
