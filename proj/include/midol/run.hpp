#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "midol/trainer.hpp"

namespace midol {

inline constexpr const char* kVersion = "0.1.0";

struct RunManifest {
    std::string version = kVersion;
    std::string subcommand;
    std::uint64_t seed = 0;
    TrainConfig config;
    std::string started_at;
    std::optional<std::string> finished_at;
    std::optional<int> exit_status;
    std::map<std::string, std::string> artifacts;  // label -> path relative to the run dir
};

nlohmann::json manifest_to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const nlohmann::json& j);

/// Writes to a sibling temporary file, then renames it over `path`.
void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j);

/// `<base>/<UTC timestamp>-<subcommand>`, with -2, -3, ... appended when
/// the name is taken. Creates `base` as needed.
std::filesystem::path create_run_dir(const std::filesystem::path& base,
                                     const std::string& subcommand);

struct CliOptions {
    std::string subcommand;
    std::optional<std::filesystem::path> config_path;
    std::vector<std::pair<std::string, std::string>> overrides;  // applied after the file
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out;
    std::optional<std::filesystem::path> dump_routing;
    std::optional<std::filesystem::path> dump_data;
    std::optional<std::filesystem::path> checkpoint;  // evaluate
    std::size_t tables = 1000;                          // verify-identities
    std::size_t max_cardinality = 4;
    std::size_t points = 100;                           // gradcheck
};

/// Output directory: --out, else $MIDOL_OUT, else ./runs.
std::filesystem::path output_base(const CliOptions& options);

/// Runs one subcommand. JSON goes to `out`, diagnostics to `err`. Returns
/// 0 iff every check of the suite passed; 2 for an unknown subcommand.
int dispatch(const CliOptions& options, std::ostream& out, std::ostream& err);

/// Flag parsing in front of dispatch. Usage errors return 2.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace midol
