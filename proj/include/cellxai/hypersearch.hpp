#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cellxai/train.hpp"

/// Hyperband search with successive halving and moving-average early stopping.
namespace cellxai::hypersearch {

enum class Mode { dense, recurrent };
enum class CellType { lstm, gru, recurrent_tanh, recurrent_rect };

std::string_view to_string(Mode mode);
std::string_view to_string(CellType cell);
Mode parse_mode(std::string_view name);
CellType parse_cell_type(std::string_view name);

/// Every layer of a configuration shares one width and one activation or cell
/// type. Depth counts the linear output head, so depth L has L - 1 hidden layers.
struct SearchDomain {
    Mode mode = Mode::recurrent;
    std::vector<std::size_t> widths;
    std::vector<std::size_t> depths;
    std::vector<double> learning_rates;
    std::vector<std::size_t> batch_sizes;
    std::vector<tensornet::Activation> activations;  ///< dense mode only
    std::vector<CellType> cell_types;                ///< recurrent mode only

    /// Widths 4..128 step 4, depths 2..6, five learning rates, batches 32/64/128.
    static SearchDomain standard(Mode mode);

    friend bool operator==(const SearchDomain&, const SearchDomain&) = default;
};

void validate(const SearchDomain& domain);

struct HyperConfig {
    Mode mode = Mode::recurrent;
    std::size_t width = 4;
    std::size_t depth = 2;
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    tensornet::Activation activation = tensornet::Activation::linear;  ///< dense mode
    CellType cell_type = CellType::lstm;                               ///< recurrent mode
    std::uint64_t seed = 0;        ///< search seed the draw came from
    std::uint64_t draw_index = 0;  ///< position in the search's configuration stream

    tensornet::NetworkConfig network(std::size_t input_dim, std::size_t output_dim) const;

    friend bool operator==(const HyperConfig&, const HyperConfig&) = default;
};

/// Uniform independent draw per active axis. The draw depends only on
/// (seed, draw_index), so any configuration can be regenerated from its provenance.
HyperConfig sample_configuration(const SearchDomain& domain, std::uint64_t seed, std::uint64_t draw_index);

struct Round {
    std::size_t configs = 0;  ///< C_h
    double budget = 0.0;      ///< n_h before integerization
    std::size_t epochs = 0;   ///< max(1, floor(n_h))

    friend bool operator==(const Round&, const Round&) = default;
};

struct BracketPlan {
    std::size_t s = 0;
    std::size_t initial_configs = 0;  ///< C
    double base_epochs = 0.0;         ///< n
    std::vector<Round> rounds;

    /// Epochs the plan consumes with warm continuation and no early stopping.
    std::size_t planned_epochs() const;
};

/// Brackets ordered s = h down to 0.
std::vector<BracketPlan> plan_brackets(std::size_t max_epochs, double eta);

/// Largest h with eta^h <= N.
std::size_t max_bracket(std::size_t max_epochs, double eta);

struct EarlyStopPolicy {
    bool enabled = true;
    std::size_t window = 5;
    std::size_t patience = 10;
    double min_relative_improvement = 1e-3;

    friend bool operator==(const EarlyStopPolicy&, const EarlyStopPolicy&) = default;
};

/// True when the window-average validation MSE has not improved on its best
/// value by the relative factor for `patience` consecutive epochs.
bool early_stop_check(const std::vector<double>& valid_mse, const EarlyStopPolicy& policy);

enum class TrialStatus { running, halted, early_stopped, diverged, completed };

std::string_view to_string(TrialStatus status);
TrialStatus parse_trial_status(std::string_view name);

struct TrialRecord {
    HyperConfig config;
    std::size_t bracket = 0;
    std::size_t epochs_completed = 0;
    tensornet::History history;
    TrialStatus status = TrialStatus::running;
    double final_validation_mse = 0.0;  ///< last finite validation entry; +inf when none

    friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

/// Orders finite losses first, then by loss, then by draw index.
bool ranks_before(const TrialRecord& a, const TrialRecord& b);

/// A trainable trial that resumes from its last completed epoch.
class TrialSession {
public:
    virtual ~TrialSession() = default;
    virtual tensornet::TrainStatus advance(std::size_t target_epochs, const tensornet::EpochCallback& callback) = 0;
    virtual const tensornet::History& history() const = 0;
};

using SessionFactory = std::function<std::unique_ptr<TrialSession>(const HyperConfig&)>;

/// Sessions training the configuration on `data` from an initialization seeded
/// by the configuration's provenance.
template <typename S>
SessionFactory trainer_factory(std::shared_ptr<const tensornet::TrainingData<S>> data, std::size_t input_dim,
                               std::size_t output_dim);

/// Seed used for a trial's initialization and shuffling.
std::uint64_t trial_seed(const HyperConfig& config);

/// One ledger event: a trial's state after a round, or a bracket-complete marker.
struct LedgerEvent {
    enum class Kind { round, bracket_complete } kind = Kind::round;
    std::size_t bracket = 0;
    std::size_t round = 0;
    TrialRecord trial;

    friend bool operator==(const LedgerEvent&, const LedgerEvent&) = default;
};

std::string to_json_line(const LedgerEvent& event);
LedgerEvent ledger_event_from_json(const std::string& line);

struct SearchOptions {
    std::size_t max_epochs = 51;  ///< N
    double eta = 3.7;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    EarlyStopPolicy early_stop;
    /// Stop cleanly after this many brackets have finished in total (simulated interruption).
    std::optional<std::size_t> stop_after_brackets;
};

/// Trials of one bracket, ranked and halved round by round. `draw_offset` is
/// the draw index of the bracket's first configuration.
std::vector<TrialRecord> run_bracket(const BracketPlan& plan, const SearchDomain& domain, const SessionFactory& factory,
                                     const SearchOptions& options, std::uint64_t draw_offset,
                                     const std::function<void(const LedgerEvent&)>& sink = {});

enum class SearchStatus { completed, interrupted, failed };

std::string_view to_string(SearchStatus status);

struct SearchResult {
    SearchStatus status = SearchStatus::completed;
    std::optional<TrialRecord> best;
    std::vector<TrialRecord> trials;
    std::vector<BracketPlan> plans;
    std::size_t completed_brackets = 0;

    std::size_t epochs_consumed() const;
};

/// Full Hyperband. With `ledger_path` set, events are appended to that JSONL
/// file and brackets already recorded there are reused rather than rerun.
SearchResult hyperband_search(const SearchDomain& domain, const SessionFactory& factory, const SearchOptions& options,
                              const std::optional<std::string>& ledger_path = std::nullopt);

/// Ledger events of all completed brackets; a trailing partial bracket is dropped.
std::vector<LedgerEvent> read_ledger(const std::string& path);

std::string to_json(const HyperConfig& config);
HyperConfig hyper_config_from_json(const std::string& text);

}  // namespace cellxai::hypersearch
