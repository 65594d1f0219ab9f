#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cellxai/hypersearch.hpp"
#include "cellxai/io.hpp"
#include "cellxai/loadgen.hpp"
#include "cellxai/xai.hpp"
#include "json.hpp"

/// Experiment configuration, run manifests and the pipeline commands.
namespace cellxai::cli {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kOutputRootEnv = "CELLXAI_OUT";
inline constexpr const char* kResolvedConfig = "config.resolved.json";
inline constexpr const char* kManifest = "manifest.json";

/// Architecture given explicitly instead of taken from a search.
struct NetworkChoice {
    hypersearch::Mode mode = hypersearch::Mode::recurrent;
    std::size_t width = 16;
    std::size_t depth = 2;
    tensornet::Activation activation = tensornet::Activation::rect;  ///< dense mode
    hypersearch::CellType cell_type = hypersearch::CellType::lstm;   ///< recurrent mode

    friend bool operator==(const NetworkChoice&, const NetworkChoice&) = default;
};

struct SearchSettings {
    std::size_t max_epochs = 51;
    double eta = 3.7;
    hypersearch::SearchDomain domain;
    hypersearch::EarlyStopPolicy early_stop;

    friend bool operator==(const SearchSettings&, const SearchSettings&) = default;
};

struct TrainSettings {
    std::size_t epochs = 300;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    std::size_t bptt_truncation = 0;
    std::optional<NetworkChoice> network;  ///< empty: use the search's best configuration

    friend bool operator==(const TrainSettings&, const TrainSettings&) = default;
};

struct ExplainSettings {
    std::size_t samples = 10;  ///< leading test-split positions explained by default
    std::size_t top_k = 3;

    friend bool operator==(const ExplainSettings&, const ExplainSettings&) = default;
};

struct ExperimentConfig {
    ModelKind model_kind = ModelKind::elastoplastic;
    constitutive::MaterialParams material = constitutive::default_params(ModelKind::elastoplastic);
    loadgen::SequenceSpec sequence;  ///< model_kind and seed mirror the fields above
    std::size_t total_samples = 512;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    io::Precision precision = io::Precision::f32;
    SearchSettings search;
    TrainSettings train;
    ExplainSettings explain;
    std::string output_dir;  ///< empty: derived from the output root

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Defaults for a model kind: dense search domain for hyperelasticity,
/// recurrent otherwise.
ExperimentConfig default_config(ModelKind kind);

/// Parses a configuration document. Missing keys take defaults; unknown keys,
/// wrong types and invalid values are all collected into one UsageError.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const fs::path& path);

/// Throws UsageError listing every violation.
void validate(const ExperimentConfig& config);

/// Fully resolved document, every default expanded.
nlohmann::json to_json(const ExperimentConfig& config);

struct ArtifactEntry {
    std::string sha256;
    std::uintmax_t bytes = 0;
    std::string stage;
    std::string written_at;
};

/// Artifacts of a run directory keyed by path relative to it.
struct RunManifest {
    std::string tool_version = kToolVersion;
    std::string config_digest;
    std::map<std::string, ArtifactEntry> artifacts;
    std::map<std::string, std::string> stages;  ///< stage -> completion time

    bool has_stage(const std::string& stage) const { return stages.count(stage) != 0; }
    std::vector<std::string> stage_artifacts(const std::string& stage) const;
};

RunManifest load_manifest(const fs::path& run_dir);  ///< empty manifest when absent
void save_manifest(const fs::path& run_dir, const RunManifest& manifest);

/// Throws IntegrityError naming the first missing or altered file.
void verify_artifacts(const fs::path& run_dir, const RunManifest& manifest, const std::vector<std::string>& stages);

/// Replaces the stage's artifact records with `files` and drops dependent stages.
void record_stage(const fs::path& run_dir, RunManifest& manifest, const std::string& stage,
                  const std::vector<fs::path>& files, const std::string& config_text);

struct GenerateResult {
    std::size_t records = 0;
    loadgen::SplitSizes split{};
};

struct SearchOutcome {
    hypersearch::SearchResult result;
    std::size_t planned_epochs = 0;
};

struct TrainOutcome {
    tensornet::TrainStatus status = tensornet::TrainStatus::completed;
    hypersearch::HyperConfig hyper;
    tensornet::History history;
    double train_mse = 0.0;
    double valid_mse = 0.0;
    double test_mse = 0.0;
};

struct ExplainOutcome {
    std::vector<std::size_t> test_positions;
    std::vector<xai::ExplanationReport> reports;
};

/// Stages write under the run directory: dataset/, search/, model/, explain/, report.md.
GenerateResult cmd_generate(const ExperimentConfig& config, const fs::path& run_dir);
SearchOutcome cmd_search(const ExperimentConfig& config, const fs::path& run_dir,
                         std::optional<std::size_t> stop_after_brackets = std::nullopt);
TrainOutcome cmd_train(const ExperimentConfig& config, const fs::path& run_dir);
ExplainOutcome cmd_explain(const ExperimentConfig& config, const fs::path& run_dir,
                           std::optional<std::size_t> test_position = std::nullopt);
std::string cmd_report(const fs::path& run_dir);

/// Output directory: explicit path, then config.output_dir, then
/// $CELLXAI_OUT (or ./runs) joined with "<model_kind>-seed<seed>".
fs::path resolve_run_dir(const std::optional<fs::path>& out, const ExperimentConfig& config);

/// Entry point of the command-line tool; returns the process exit code
/// (0 success, 1 usage or I/O, 2 numeric failure, 3 integrity failure).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cellxai::cli
