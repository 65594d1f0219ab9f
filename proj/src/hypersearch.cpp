#include "cellxai/hypersearch.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <thread>

#include "cellxai/errors.hpp"
#include "json.hpp"

namespace cellxai::hypersearch {

using nlohmann::json;
using tensornet::Activation;
using tensornet::LayerKind;

std::string_view to_string(Mode mode) { return mode == Mode::dense ? "dense" : "recurrent"; }

std::string_view to_string(CellType cell) {
    switch (cell) {
        case CellType::lstm: return "lstm";
        case CellType::gru: return "gru";
        case CellType::recurrent_tanh: return "recurrent-tanh";
        case CellType::recurrent_rect: return "recurrent-rect";
    }
    return "?";
}

Mode parse_mode(std::string_view name) {
    if (name == "dense") return Mode::dense;
    if (name == "recurrent") return Mode::recurrent;
    throw UsageError("unknown search mode '" + std::string(name) + "'");
}

CellType parse_cell_type(std::string_view name) {
    for (auto c : {CellType::lstm, CellType::gru, CellType::recurrent_tanh, CellType::recurrent_rect})
        if (to_string(c) == name) return c;
    throw UsageError("unknown cell type '" + std::string(name) + "'");
}

SearchDomain SearchDomain::standard(Mode mode) {
    SearchDomain d;
    d.mode = mode;
    for (std::size_t w = 4; w <= 128; w += 4) d.widths.push_back(w);
    d.depths = {2, 3, 4, 5, 6};
    d.learning_rates = {1e-2, 3e-3, 1e-3, 3e-4, 1e-4};
    d.batch_sizes = {32, 64, 128};
    if (mode == Mode::dense)
        d.activations = {Activation::rect, Activation::sig, Activation::tanh, Activation::elu, Activation::splus};
    else
        d.cell_types = {CellType::lstm, CellType::gru, CellType::recurrent_tanh, CellType::recurrent_rect};
    return d;
}

void validate(const SearchDomain& d) {
    std::vector<std::string> problems;
    if (d.widths.empty()) problems.push_back("no widths");
    if (std::find(d.widths.begin(), d.widths.end(), 0) != d.widths.end()) problems.push_back("zero width");
    if (d.depths.empty()) problems.push_back("no depths");
    if (std::any_of(d.depths.begin(), d.depths.end(), [](std::size_t v) { return v < 2; }))
        problems.push_back("depth must be at least 2 (one hidden layer plus the output head)");
    if (d.learning_rates.empty()) problems.push_back("no learning rates");
    if (std::any_of(d.learning_rates.begin(), d.learning_rates.end(), [](double v) { return !(v > 0.0); }))
        problems.push_back("learning rates must be positive");
    if (d.batch_sizes.empty()) problems.push_back("no batch sizes");
    if (std::find(d.batch_sizes.begin(), d.batch_sizes.end(), 0) != d.batch_sizes.end())
        problems.push_back("zero batch size");
    if (d.mode == Mode::dense) {
        if (d.activations.empty()) problems.push_back("dense mode needs activations");
        if (!d.cell_types.empty()) problems.push_back("dense mode takes no cell types");
    } else {
        if (d.cell_types.empty()) problems.push_back("recurrent mode needs cell types");
        if (!d.activations.empty()) problems.push_back("recurrent mode takes no dense activations");
    }
    if (problems.empty()) return;
    std::string msg = "invalid search domain:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw UsageError(msg);
}

tensornet::NetworkConfig HyperConfig::network(std::size_t input_dim, std::size_t output_dim) const {
    tensornet::NetworkConfig config;
    config.input_dim = input_dim;
    for (std::size_t l = 0; l + 1 < depth; ++l) {
        if (mode == Mode::dense) {
            config.layers.push_back({LayerKind::dense, width, activation});
            continue;
        }
        switch (cell_type) {
            case CellType::lstm: config.layers.push_back({LayerKind::lstm, width, Activation::tanh}); break;
            case CellType::gru: config.layers.push_back({LayerKind::gru, width, Activation::tanh}); break;
            case CellType::recurrent_tanh:
                config.layers.push_back({LayerKind::simple_rnn, width, Activation::tanh});
                break;
            case CellType::recurrent_rect:
                config.layers.push_back({LayerKind::simple_rnn, width, Activation::rect});
                break;
        }
    }
    config.layers.push_back({LayerKind::time_distributed_dense, output_dim, Activation::linear});
    return config;
}

namespace {

constexpr std::uint64_t kConfigStream = 1;
constexpr std::uint64_t kTrialStream = 2;

template <typename T>
const T& pick(const std::vector<T>& values, CounterRng& rng) {
    return values[rng.below(values.size())];
}

}  // namespace

HyperConfig sample_configuration(const SearchDomain& domain, std::uint64_t seed, std::uint64_t draw_index) {
    validate(domain);
    CounterRng rng = CounterRng(seed, kConfigStream).split(draw_index);
    HyperConfig c;
    c.mode = domain.mode;
    c.seed = seed;
    c.draw_index = draw_index;
    c.width = pick(domain.widths, rng);
    c.depth = pick(domain.depths, rng);
    c.learning_rate = pick(domain.learning_rates, rng);
    c.batch_size = pick(domain.batch_sizes, rng);
    if (domain.mode == Mode::dense) c.activation = pick(domain.activations, rng);
    else c.cell_type = pick(domain.cell_types, rng);
    return c;
}

std::uint64_t trial_seed(const HyperConfig& config) {
    return CounterRng(config.seed, kTrialStream).split(config.draw_index).next_u64();
}

std::size_t max_bracket(std::size_t max_epochs, double eta) {
    if (max_epochs < 1) throw UsageError("maximum epochs N must be at least 1");
    if (!(eta > 1.0) || !std::isfinite(eta)) throw UsageError("keep quotient eta must exceed 1");
    // Integer search avoids log() rounding at exact powers.
    std::size_t h = 0;
    double power = eta;
    while (power <= static_cast<double>(max_epochs) * (1.0 + 1e-12)) {
        ++h;
        power *= eta;
    }
    return h;
}

namespace {

std::size_t floor_safe(double x) { return static_cast<std::size_t>(std::floor(x + 1e-9)); }
std::size_t ceil_safe(double x) { return static_cast<std::size_t>(std::ceil(x - 1e-9)); }

}  // namespace

std::vector<BracketPlan> plan_brackets(std::size_t max_epochs, double eta) {
    const std::size_t h = max_bracket(max_epochs, eta);
    const double n_max = static_cast<double>(max_epochs);
    const double budget = static_cast<double>(h + 1) * n_max;
    std::vector<BracketPlan> plans;
    for (std::size_t s = h + 1; s-- > 0;) {
        BracketPlan plan;
        plan.s = s;
        const double eta_s = std::pow(eta, static_cast<double>(s));
        plan.initial_configs = ceil_safe(budget / n_max * eta_s / static_cast<double>(s + 1));
        plan.base_epochs = n_max / eta_s;
        for (std::size_t r = 0; r <= s; ++r) {
            Round round;
            round.configs = floor_safe(static_cast<double>(plan.initial_configs) / std::pow(eta, static_cast<double>(r)));
            // n * eta^r written as N / eta^(s - r) so the last round is exactly N.
            round.budget = n_max / std::pow(eta, static_cast<double>(s - r));
            round.epochs = std::max<std::size_t>(1, floor_safe(round.budget));
            round.configs = std::max<std::size_t>(round.configs, 1);
            plan.rounds.push_back(round);
        }
        plans.push_back(plan);
    }
    return plans;
}

std::size_t BracketPlan::planned_epochs() const {
    std::size_t total = 0, previous = 0;
    for (const auto& r : rounds) {
        total += r.configs * (r.epochs - std::min(previous, r.epochs));
        previous = r.epochs;
    }
    return total;
}

bool early_stop_check(const std::vector<double>& valid_mse, const EarlyStopPolicy& policy) {
    if (!policy.enabled || policy.window == 0 || valid_mse.size() < policy.window) return false;
    double best = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;
    double sum = 0.0;
    for (std::size_t t = 0; t < valid_mse.size(); ++t) {
        sum += valid_mse[t];
        if (t >= policy.window) sum -= valid_mse[t - policy.window];
        if (t + 1 < policy.window) continue;
        const double average = sum / static_cast<double>(policy.window);
        if (average < best * (1.0 - policy.min_relative_improvement) || !std::isfinite(best)) {
            best = average;
            stale = 0;
        } else {
            ++stale;
        }
    }
    return stale >= policy.patience;
}

std::string_view to_string(TrialStatus status) {
    switch (status) {
        case TrialStatus::running: return "running";
        case TrialStatus::halted: return "halted";
        case TrialStatus::early_stopped: return "early_stopped";
        case TrialStatus::diverged: return "diverged";
        case TrialStatus::completed: return "completed";
    }
    return "?";
}

TrialStatus parse_trial_status(std::string_view name) {
    for (auto s : {TrialStatus::running, TrialStatus::halted, TrialStatus::early_stopped, TrialStatus::diverged,
                   TrialStatus::completed})
        if (to_string(s) == name) return s;
    throw UsageError("unknown trial status '" + std::string(name) + "'");
}

std::string_view to_string(SearchStatus status) {
    switch (status) {
        case SearchStatus::completed: return "completed";
        case SearchStatus::interrupted: return "interrupted";
        case SearchStatus::failed: return "failed";
    }
    return "?";
}

bool ranks_before(const TrialRecord& a, const TrialRecord& b) {
    const bool fa = a.status != TrialStatus::diverged && std::isfinite(a.final_validation_mse);
    const bool fb = b.status != TrialStatus::diverged && std::isfinite(b.final_validation_mse);
    if (fa != fb) return fa;
    if (fa && a.final_validation_mse != b.final_validation_mse) return a.final_validation_mse < b.final_validation_mse;
    return a.config.draw_index < b.config.draw_index;
}

namespace {

template <typename S>
class TrainerSession final : public TrialSession {
public:
    TrainerSession(const HyperConfig& hc, std::shared_ptr<const tensornet::TrainingData<S>> data, std::size_t in,
                   std::size_t out)
        : data_(std::move(data)), trainer_(make_trainer(hc, in, out)) {}

    tensornet::TrainStatus advance(std::size_t target, const tensornet::EpochCallback& callback) override {
        return trainer_.run_until(*data_, target, callback);
    }
    const tensornet::History& history() const override { return trainer_.history(); }

private:
    static tensornet::Trainer<S> make_trainer(const HyperConfig& hc, std::size_t in, std::size_t out) {
        const auto config = hc.network(in, out);
        const std::uint64_t seed = trial_seed(hc);
        CounterRng rng(seed);
        tensornet::TrainConfig tc;
        tc.batch_size = hc.batch_size;
        tc.learning_rate = hc.learning_rate;
        tc.seed = seed;
        tc.epochs = std::numeric_limits<std::size_t>::max();
        return tensornet::Trainer<S>(config, tensornet::init_params<S>(config, rng), tc);
    }

    std::shared_ptr<const tensornet::TrainingData<S>> data_;
    tensornet::Trainer<S> trainer_;
};

double last_finite(const std::vector<double>& values) {
    for (auto it = values.rbegin(); it != values.rend(); ++it)
        if (std::isfinite(*it)) return *it;
    return std::numeric_limits<double>::infinity();
}

// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first failure.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                    }
                }
            });
    }
    if (failure) std::rethrow_exception(failure);
}

}  // namespace

template <typename S>
SessionFactory trainer_factory(std::shared_ptr<const tensornet::TrainingData<S>> data, std::size_t input_dim,
                               std::size_t output_dim) {
    if (!data) throw UsageError("trainer factory needs data");
    return [data, input_dim, output_dim](const HyperConfig& hc) -> std::unique_ptr<TrialSession> {
        return std::make_unique<TrainerSession<S>>(hc, data, input_dim, output_dim);
    };
}

template SessionFactory trainer_factory<float>(std::shared_ptr<const tensornet::TrainingData<float>>, std::size_t,
                                               std::size_t);
template SessionFactory trainer_factory<double>(std::shared_ptr<const tensornet::TrainingData<double>>, std::size_t,
                                                std::size_t);

std::vector<TrialRecord> run_bracket(const BracketPlan& plan, const SearchDomain& domain, const SessionFactory& factory,
                                     const SearchOptions& options, std::uint64_t draw_offset,
                                     const std::function<void(const LedgerEvent&)>& sink) {
    const std::size_t count = plan.initial_configs;
    std::vector<TrialRecord> trials(count);
    std::vector<std::unique_ptr<TrialSession>> sessions(count);
    for (std::size_t i = 0; i < count; ++i) {
        trials[i].config = sample_configuration(domain, options.seed, draw_offset + i);
        trials[i].bracket = plan.s;
        trials[i].final_validation_mse = std::numeric_limits<double>::infinity();
    }

    std::vector<std::size_t> active(count);
    for (std::size_t i = 0; i < count; ++i) active[i] = i;

    for (std::size_t r = 0; r < plan.rounds.size(); ++r) {
        const std::size_t target = plan.rounds[r].epochs;
        parallel_for(active.size(), options.workers, [&](std::size_t slot) {
            const std::size_t i = active[slot];
            auto& trial = trials[i];
            if (trial.status != TrialStatus::running) return;
            try {
                if (!sessions[i]) sessions[i] = factory(trial.config);
                const auto status = sessions[i]->advance(target, [&](std::size_t, const tensornet::History& h) {
                    return early_stop_check(h.valid_mse, options.early_stop);
                });
                if (status == tensornet::TrainStatus::diverged) trial.status = TrialStatus::diverged;
                else if (status == tensornet::TrainStatus::stopped) trial.status = TrialStatus::early_stopped;
            } catch (const NumericError&) {
                trial.status = TrialStatus::diverged;
            }
            if (sessions[i]) trial.history = sessions[i]->history();
            trial.epochs_completed = trial.history.train_mse.size();
            trial.final_validation_mse = last_finite(trial.history.valid_mse);
            // Trials that stop early free their memory; their record is final.
            if (trial.status != TrialStatus::running) sessions[i].reset();
        });

        const bool last = r + 1 == plan.rounds.size();
        std::vector<std::size_t> ranked = active;
        std::stable_sort(ranked.begin(), ranked.end(),
                         [&](std::size_t a, std::size_t b) { return ranks_before(trials[a], trials[b]); });
        std::vector<std::size_t> survivors;
        if (!last) {
            const std::size_t keep = std::max<std::size_t>(
                1, floor_safe(static_cast<double>(active.size()) / options.eta));
            for (std::size_t i : ranked)
                if (survivors.size() < keep && trials[i].status != TrialStatus::diverged) survivors.push_back(i);
            for (std::size_t i : active) {
                const bool kept = std::find(survivors.begin(), survivors.end(), i) != survivors.end();
                if (!kept && trials[i].status == TrialStatus::running) {
                    trials[i].status = TrialStatus::halted;
                    sessions[i].reset();
                }
            }
            std::sort(survivors.begin(), survivors.end());
        } else {
            for (std::size_t i : active)
                if (trials[i].status == TrialStatus::running) trials[i].status = TrialStatus::completed;
        }
        if (sink)
            for (std::size_t i : active) sink({LedgerEvent::Kind::round, plan.s, r, trials[i]});
        if (last || survivors.empty()) break;
        active = std::move(survivors);
    }
    if (sink) sink({LedgerEvent::Kind::bracket_complete, plan.s, plan.rounds.size(), {}});
    return trials;
}

std::size_t SearchResult::epochs_consumed() const {
    std::size_t total = 0;
    for (const auto& t : trials) total += t.epochs_completed;
    return total;
}

namespace {

json config_json(const HyperConfig& c) {
    json j = {{"mode", to_string(c.mode)},
              {"width", c.width},
              {"depth", c.depth},
              {"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},
              {"seed", c.seed},
              {"draw_index", c.draw_index}};
    if (c.mode == Mode::dense) j["activation"] = tensornet::to_string(c.activation);
    else j["cell_type"] = to_string(c.cell_type);
    return j;
}

HyperConfig config_from(const json& j) {
    HyperConfig c;
    c.mode = parse_mode(j.at("mode").get<std::string>());
    c.width = j.at("width").get<std::size_t>();
    c.depth = j.at("depth").get<std::size_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.draw_index = j.at("draw_index").get<std::uint64_t>();
    if (c.mode == Mode::dense) c.activation = tensornet::parse_activation(j.at("activation").get<std::string>());
    else c.cell_type = parse_cell_type(j.at("cell_type").get<std::string>());
    return c;
}

json trial_json(const TrialRecord& t) {
    return {{"config", config_json(t.config)},
            {"bracket", t.bracket},
            {"epochs_completed", t.epochs_completed},
            {"train_mse", t.history.train_mse},
            {"valid_mse", t.history.valid_mse},
            {"status", to_string(t.status)},
            {"final_validation_mse",
             std::isfinite(t.final_validation_mse) ? json(t.final_validation_mse) : json(nullptr)}};
}

TrialRecord trial_from(const json& j) {
    TrialRecord t;
    t.config = config_from(j.at("config"));
    t.bracket = j.at("bracket").get<std::size_t>();
    t.epochs_completed = j.at("epochs_completed").get<std::size_t>();
    t.history.train_mse = j.at("train_mse").get<std::vector<double>>();
    t.history.valid_mse = j.at("valid_mse").get<std::vector<double>>();
    t.status = parse_trial_status(j.at("status").get<std::string>());
    const auto& f = j.at("final_validation_mse");
    t.final_validation_mse = f.is_null() ? std::numeric_limits<double>::infinity() : f.get<double>();
    return t;
}

}  // namespace

std::string to_json(const HyperConfig& config) { return config_json(config).dump(2); }

HyperConfig hyper_config_from_json(const std::string& text) {
    try {
        return config_from(json::parse(text));
    } catch (const json::exception& e) {
        throw UsageError(std::string("malformed configuration document: ") + e.what());
    }
}

std::string to_json_line(const LedgerEvent& e) {
    if (e.kind == LedgerEvent::Kind::bracket_complete)
        return json{{"event", "bracket_complete"}, {"bracket", e.bracket}, {"rounds", e.round}}.dump();
    return json{{"event", "round"}, {"bracket", e.bracket}, {"round", e.round}, {"trial", trial_json(e.trial)}}.dump();
}

LedgerEvent ledger_event_from_json(const std::string& line) {
    try {
        const json j = json::parse(line);
        LedgerEvent e;
        e.bracket = j.at("bracket").get<std::size_t>();
        const auto kind = j.at("event").get<std::string>();
        if (kind == "bracket_complete") {
            e.kind = LedgerEvent::Kind::bracket_complete;
            e.round = j.at("rounds").get<std::size_t>();
        } else if (kind == "round") {
            e.round = j.at("round").get<std::size_t>();
            e.trial = trial_from(j.at("trial"));
        } else {
            throw UsageError("unknown ledger event '" + kind + "'");
        }
        return e;
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("malformed ledger line: ") + e.what());
    }
}

std::vector<LedgerEvent> read_ledger(const std::string& path) {
    std::vector<LedgerEvent> all, committed;
    std::ifstream in(path);
    if (!in) return committed;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            all.push_back(ledger_event_from_json(line));
        } catch (const IntegrityError&) {
            break;  // a torn final line from an interrupted write
        }
        if (all.back().kind == LedgerEvent::Kind::bracket_complete) {
            committed.insert(committed.end(), all.begin(), all.end());
            all.clear();
        }
    }
    return committed;
}

SearchResult hyperband_search(const SearchDomain& domain, const SessionFactory& factory, const SearchOptions& options,
                              const std::optional<std::string>& ledger_path) {
    validate(domain);
    SearchResult result;
    result.plans = plan_brackets(options.max_epochs, options.eta);

    std::map<std::size_t, std::map<std::uint64_t, TrialRecord>> recorded;
    std::ofstream ledger;
    if (ledger_path) {
        const auto committed = read_ledger(*ledger_path);
        for (const auto& e : committed)
            if (e.kind == LedgerEvent::Kind::round) recorded[e.bracket][e.trial.config.draw_index] = e.trial;
        // Rewrite the committed prefix so a torn tail never survives.
        const std::string tmp = *ledger_path + ".tmp";
        {
            std::ofstream out(tmp, std::ios::trunc);
            if (!out) throw IoError("cannot write ledger " + tmp);
            for (const auto& e : committed) out << to_json_line(e) << '\n';
        }
        std::filesystem::rename(tmp, *ledger_path);
        ledger.open(*ledger_path, std::ios::app);
        if (!ledger) throw IoError("cannot append to ledger " + *ledger_path);
    }
    std::mutex ledger_mutex;
    auto sink = [&](const LedgerEvent& e) {
        if (!ledger.is_open()) return;
        std::lock_guard lock(ledger_mutex);
        ledger << to_json_line(e) << '\n';
        ledger.flush();
    };

    std::uint64_t offset = 0;
    for (const auto& plan : result.plans) {
        if (options.stop_after_brackets && result.completed_brackets >= *options.stop_after_brackets) {
            result.status = SearchStatus::interrupted;
            break;
        }
        const auto found = recorded.find(plan.s);
        if (found != recorded.end()) {
            for (const auto& [draw, trial] : found->second) result.trials.push_back(trial);
        } else {
            auto trials = run_bracket(plan, domain, factory, options, offset, sink);
            result.trials.insert(result.trials.end(), trials.begin(), trials.end());
        }
        offset += plan.initial_configs;
        ++result.completed_brackets;
    }

    for (const auto& t : result.trials)
        if (t.status != TrialStatus::diverged && std::isfinite(t.final_validation_mse))
            if (!result.best || ranks_before(t, *result.best)) result.best = t;
    if (result.status == SearchStatus::completed && !result.best) result.status = SearchStatus::failed;
    return result;
}

}  // namespace cellxai::hypersearch
