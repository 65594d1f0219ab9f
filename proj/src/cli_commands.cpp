#include <algorithm>
#include <charconv>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "cellxai/cli.hpp"
#include "cellxai/errors.hpp"

namespace cellxai::cli {

using nlohmann::json;
using tensornet::Tensor;

namespace {

const fs::path kDatasetDir = "dataset";
const fs::path kSearchDir = "search";
const fs::path kModelDir = "model";
const fs::path kExplainDir = "explain";

/// Shortest round-trip decimal form.
std::string num(double v) {
    char buf[40];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::string sci(double v, int digits = 3) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*e", digits, v);
    return buf;
}

std::string resolved_text(const ExperimentConfig& config) { return to_json(config).dump(2) + "\n"; }

/// Rewrites the resolved config and records it under its own stage.
void write_config(const fs::path& run_dir, RunManifest& manifest, const ExperimentConfig& config) {
    const std::string text = resolved_text(config);
    io::write_atomic(run_dir / kResolvedConfig, text);
    record_stage(run_dir, manifest, "config", {run_dir / kResolvedConfig}, text);
}

/// Dataset of the run, checked against its digests and against the configuration.
loadgen::Dataset checked_dataset(const ExperimentConfig& config, const fs::path& run_dir, const RunManifest& manifest) {
    if (!manifest.has_stage("generate"))
        throw UsageError("run directory " + run_dir.string() + " has no dataset; run 'generate' first");
    verify_artifacts(run_dir, manifest, {"generate"});
    auto data = io::load_dataset(run_dir / kDatasetDir);
    if (!(data.spec == config.sequence) || !(data.material == config.material) || data.size() != config.total_samples)
        throw UsageError("configuration does not match the dataset in " + run_dir.string() +
                         " (model kind, material, sequence settings and seed must agree)");
    return data;
}

template <typename S>
tensornet::SequenceData<S> split_data(const loadgen::Dataset& data, const std::vector<std::size_t>& indices) {
    const std::size_t steps = data.spec.seq_len, channels = data.target_channels();
    auto in = loadgen::stack_inputs(data, indices, true);
    auto out = loadgen::stack_targets(data, indices, true);
    return {Tensor<double>({indices.size(), steps, data.input_channels()}, std::move(in)).cast<S>(),
            Tensor<double>({indices.size(), steps, channels}, std::move(out)).cast<S>()};
}

json parsed(const std::string& text) { return json::parse(text); }

template <typename S>
SearchOutcome run_search(const ExperimentConfig& config, const loadgen::Dataset& data, const fs::path& dir,
                         std::optional<std::size_t> stop_after) {
    auto td = std::make_shared<tensornet::TrainingData<S>>();
    td->train = split_data<S>(data, data.split.train);
    td->valid = split_data<S>(data, data.split.valid);
    const auto factory = hypersearch::trainer_factory<S>(td, data.input_channels(), data.target_channels());

    hypersearch::SearchOptions options;
    options.max_epochs = config.search.max_epochs;
    options.eta = config.search.eta;
    options.seed = config.seed;
    options.workers = config.workers;
    options.early_stop = config.search.early_stop;
    options.stop_after_brackets = stop_after;
    fs::create_directories(dir);
    SearchOutcome out;
    out.result = hypersearch::hyperband_search(config.search.domain, factory, options, (dir / "ledger.jsonl").string());
    for (const auto& p : out.result.plans) out.planned_epochs += p.planned_epochs();
    return out;
}

std::string history_csv(const tensornet::History& h) {
    std::string out = "epoch,train_mse,valid_mse\n";
    for (std::size_t e = 0; e < h.train_mse.size(); ++e)
        out += std::to_string(e + 1) + "," + num(h.train_mse[e]) + "," +
               (e < h.valid_mse.size() ? num(h.valid_mse[e]) : std::string("nan")) + "\n";
    return out;
}

hypersearch::HyperConfig choose_network(const ExperimentConfig& config, const fs::path& run_dir,
                                        const RunManifest& manifest, std::string& source) {
    if (config.train.network) {
        const auto& n = *config.train.network;
        hypersearch::HyperConfig hc;
        hc.mode = n.mode;
        hc.width = n.width;
        hc.depth = n.depth;
        hc.activation = n.activation;
        hc.cell_type = n.cell_type;
        hc.learning_rate = config.train.learning_rate;
        hc.batch_size = config.train.batch_size;
        hc.seed = config.seed;
        source = "explicit";
        return hc;
    }
    const fs::path best = run_dir / kSearchDir / "best_config.json";
    if (!manifest.has_stage("search") || !fs::exists(best))
        throw UsageError("no train.network given and no completed search in " + run_dir.string());
    verify_artifacts(run_dir, manifest, {"search"});
    source = "search";
    return hypersearch::hyper_config_from_json(io::read_file(best));
}

template <typename S>
TrainOutcome run_train(const ExperimentConfig& config, const loadgen::Dataset& data, const fs::path& dir,
                       const hypersearch::HyperConfig& hc, const std::string& source, std::vector<fs::path>& files) {
    tensornet::TrainingData<S> td{split_data<S>(data, data.split.train), split_data<S>(data, data.split.valid)};
    const auto test = split_data<S>(data, data.split.test);
    const auto net = hc.network(data.input_channels(), data.target_channels());
    CounterRng rng(config.seed);
    auto params = tensornet::init_params<S>(net, rng);
    tensornet::TrainConfig tc;
    tc.batch_size = hc.batch_size;
    tc.epochs = config.train.epochs;
    tc.learning_rate = hc.learning_rate;
    tc.seed = config.seed;
    tc.bptt_truncation = config.train.bptt_truncation;
    tensornet::Trainer<S> trainer(net, std::move(params), tc);

    TrainOutcome out;
    out.hyper = hc;
    out.status = trainer.run_until(td, config.train.epochs);
    out.history = trainer.history();

    io::write_atomic(dir / "history.csv", history_csv(out.history));
    files.push_back(dir / "history.csv");
    json final = nullptr;
    if (out.status != tensornet::TrainStatus::diverged) {
        out.train_mse = tensornet::evaluate_mse(net, trainer.params(), td.train);
        out.valid_mse = tensornet::evaluate_mse(net, trainer.params(), td.valid);
        out.test_mse = tensornet::evaluate_mse(net, trainer.params(), test);
        final = {{"train_mse", out.train_mse}, {"valid_mse", out.valid_mse}, {"test_mse", out.test_mse}};
        const auto saved = io::save_model<S>(dir, {net, trainer.params(), data.normalization, config.seed});
        files.insert(files.end(), saved.begin(), saved.end());
    }
    static constexpr const char* status_names[] = {"running", "completed", "stopped", "diverged"};
    const json report = {{"status", status_names[static_cast<int>(out.status)]},
                         {"epochs_requested", config.train.epochs},
                         {"epochs_completed", out.history.train_mse.size()},
                         {"precision", std::string(io::to_string(io::precision_of<S>()))},
                         {"network_source", source},
                         {"hyper_config", parsed(hypersearch::to_json(hc))},
                         {"network", io::to_json(net)},
                         {"mse_space", "standardized"},
                         {"final", final}};
    io::write_atomic(dir / "train_report.json", report.dump(2) + "\n");
    files.push_back(dir / "train_report.json");
    return out;
}

template <typename S>
ExplainOutcome run_explain(const ExperimentConfig& config, const loadgen::Dataset& data, const fs::path& run_dir,
                           const RunManifest& manifest, std::optional<std::size_t> position,
                           std::vector<fs::path>& files) {
    const auto model = io::load_model<S>(run_dir / kModelDir);
    if (!model.config.has_recurrence())
        throw UsageError("explanations need a recurrent model; the trained model is dense");
    const auto& test = data.split.test;
    ExplainOutcome out;
    if (position) {
        if (*position >= test.size())
            throw UsageError("sample " + std::to_string(*position) + " is out of range (test split has " +
                             std::to_string(test.size()) + " samples)");
        out.test_positions = {*position};
    } else {
        for (std::size_t p = 0; p < std::min(config.explain.samples, test.size()); ++p) out.test_positions.push_back(p);
    }

    const auto kind = data.spec.model_kind;
    const auto targets = target_names(kind);
    const auto histories = history_names(kind);
    const std::string model_id = manifest.artifacts.at((kModelDir / io::kModelBuffer).generic_string()).sha256;
    const std::size_t steps = data.spec.seq_len;
    const fs::path dir = run_dir / kExplainDir;

    json summary = json::array();
    for (auto p : out.test_positions) {
        const std::size_t idx = test[p];
        const auto& record = data.records[idx];
        const auto x = Tensor<double>({1, steps, 1}, loadgen::stack_inputs(data, std::vector<std::size_t>{idx}, true))
                           .cast<S>();
        std::vector<xai::NamedSeries> series;
        for (std::size_t h = 0; h < histories.size(); ++h) series.push_back({histories[h], record.histories[h]});
        auto report = xai::explain(model.config, model.params, x, series, config.explain.top_k);
        report.sample_id = "test-" + std::to_string(p) + "/record-" + std::to_string(idx);
        report.model_id = model_id;

        const auto pred = tensornet::forward_sequence(model.config, model.params, x).outputs;
        std::string csv = "increment," + std::string(to_string(driving_quantity(kind)));
        for (const auto& t : targets) csv += ",reference_" + t + ",predicted_" + t;
        for (const auto& h : histories) csv += ",history_" + h;
        for (std::size_t k = 0; k < report.top_scores.size(); ++k) csv += ",pc" + std::to_string(k + 1);
        for (std::size_t k = 0; k < report.top_scores.size(); ++k) csv += ",pc" + std::to_string(k + 1) + "_scaled";
        csv += "\n";
        for (std::size_t t = 0; t < steps; ++t) {
            csv += std::to_string(t) + "," + num(record.input[t]);
            for (std::size_t c = 0; c < targets.size(); ++c) {
                const auto& stats = model.normalization.targets.at(c);
                const double predicted = static_cast<double>(pred.at(0, t, c)) * stats.divisor() + stats.mean;
                csv += "," + num(record.targets[c][t]) + "," + num(predicted);
            }
            for (const auto& h : record.histories) csv += "," + num(h[t]);
            for (const auto& s : report.top_scores) csv += "," + num(s[t]);
            for (const auto& s : report.top_scaled_scores) csv += "," + num(s[t]);
            csv += "\n";
        }
        const std::string stem = "sample_" + std::to_string(p);
        io::write_atomic(dir / (stem + ".json"), xai::to_json(report) + "\n");
        io::write_atomic(dir / (stem + ".csv"), csv);
        files.push_back(dir / (stem + ".json"));
        files.push_back(dir / (stem + ".csv"));

        json best = json::object();
        for (const auto& h : histories) best[h] = report.best_abs_r(h);
        summary.push_back({{"test_position", p},
                           {"record", idx},
                           {"best_abs_r", best},
                           {"top_linear_importance", report.top_linear_importance()}});
        out.reports.push_back(std::move(report));
    }
    json means = json::object();
    for (const auto& h : histories) means[h] = xai::corpus_mean_abs_r(out.reports, h);
    const json doc = {{"model_id", model_id}, {"samples", summary}, {"mean_best_abs_r", means}};
    io::write_atomic(dir / "summary.json", doc.dump(2) + "\n");
    files.push_back(dir / "summary.json");
    return out;
}

}  // namespace

GenerateResult cmd_generate(const ExperimentConfig& config, const fs::path& run_dir) {
    validate(config);
    auto manifest = load_manifest(run_dir);
    const auto data = loadgen::generate_dataset(config.sequence, config.material, config.total_samples, config.workers);
    const auto files = io::save_dataset(run_dir / kDatasetDir, data);
    write_config(run_dir, manifest, config);
    record_stage(run_dir, manifest, "generate", files, resolved_text(config));
    save_manifest(run_dir, manifest);
    return {data.size(), {data.split.train.size(), data.split.valid.size(), data.split.test.size()}};
}

SearchOutcome cmd_search(const ExperimentConfig& config, const fs::path& run_dir,
                         std::optional<std::size_t> stop_after_brackets) {
    validate(config);
    auto manifest = load_manifest(run_dir);
    const auto data = checked_dataset(config, run_dir, manifest);
    write_config(run_dir, manifest, config);
    const fs::path dir = run_dir / kSearchDir;
    auto out = config.precision == io::Precision::f32 ? run_search<float>(config, data, dir, stop_after_brackets)
                                                      : run_search<double>(config, data, dir, stop_after_brackets);
    const auto& r = out.result;
    json best = nullptr;
    if (r.best) best = parsed(hypersearch::to_json(r.best->config));
    const json summary = {{"status", std::string(hypersearch::to_string(r.status))},
                          {"completed_brackets", r.completed_brackets},
                          {"planned_brackets", r.plans.size()},
                          {"trials", r.trials.size()},
                          {"epochs_consumed", r.epochs_consumed()},
                          {"planned_epochs", out.planned_epochs},
                          {"best", best},
                          {"best_validation_mse", r.best ? json(r.best->final_validation_mse) : json(nullptr)}};
    std::vector<fs::path> files{dir / "ledger.jsonl", dir / "summary.json"};
    io::write_atomic(dir / "summary.json", summary.dump(2) + "\n");
    const fs::path best_path = dir / "best_config.json";
    if (r.status == hypersearch::SearchStatus::completed && r.best) {
        io::write_atomic(best_path, hypersearch::to_json(r.best->config) + "\n");
        files.push_back(best_path);
    } else if (fs::exists(best_path)) {
        fs::remove(best_path);
    }
    record_stage(run_dir, manifest, "search", files, resolved_text(config));
    save_manifest(run_dir, manifest);
    return out;
}

TrainOutcome cmd_train(const ExperimentConfig& config, const fs::path& run_dir) {
    validate(config);
    auto manifest = load_manifest(run_dir);
    const auto data = checked_dataset(config, run_dir, manifest);
    std::string source;
    const auto hc = choose_network(config, run_dir, manifest, source);
    write_config(run_dir, manifest, config);
    const fs::path dir = run_dir / kModelDir;
    for (const char* stale : {io::kModelManifest, io::kModelBuffer})
        if (fs::exists(dir / stale)) fs::remove(dir / stale);
    std::vector<fs::path> files;
    auto out = config.precision == io::Precision::f32 ? run_train<float>(config, data, dir, hc, source, files)
                                                      : run_train<double>(config, data, dir, hc, source, files);
    record_stage(run_dir, manifest, "train", files, resolved_text(config));
    save_manifest(run_dir, manifest);
    return out;
}

ExplainOutcome cmd_explain(const ExperimentConfig& config, const fs::path& run_dir,
                           std::optional<std::size_t> test_position) {
    validate(config);
    auto manifest = load_manifest(run_dir);
    const auto data = checked_dataset(config, run_dir, manifest);
    if (!manifest.has_stage("train") || !fs::exists(run_dir / kModelDir / io::kModelManifest))
        throw UsageError("run directory " + run_dir.string() + " has no trained model; run 'train' first");
    verify_artifacts(run_dir, manifest, {"train"});
    std::vector<fs::path> files;
    const auto precision = io::saved_precision(run_dir / kModelDir);
    auto out = precision == io::Precision::f32
                   ? run_explain<float>(config, data, run_dir, manifest, test_position, files)
                   : run_explain<double>(config, data, run_dir, manifest, test_position, files);
    write_config(run_dir, manifest, config);
    record_stage(run_dir, manifest, "explain", files, resolved_text(config));
    save_manifest(run_dir, manifest);
    return out;
}

namespace {

std::string table_row(const std::vector<std::string>& cells) {
    std::string row = "|";
    for (const auto& c : cells) row += " " + c + " |";
    return row + "\n";
}

std::string table_rule(std::size_t columns) {
    std::string row = "|";
    for (std::size_t i = 0; i < columns; ++i) row += "---|";
    return row + "\n";
}

std::string absent(const std::string& stage) { return "_absent: the " + stage + " stage has not been run._\n\n"; }

std::string describe(const hypersearch::HyperConfig& c) {
    std::string arch = c.mode == hypersearch::Mode::dense ? std::string(tensornet::to_string(c.activation))
                                                          : std::string(hypersearch::to_string(c.cell_type));
    return arch + " depth " + std::to_string(c.depth) + " width " + std::to_string(c.width) + ", lr " +
           num(c.learning_rate) + ", batch " + std::to_string(c.batch_size);
}

void dataset_section(std::ostringstream& md, const fs::path& run_dir) {
    const json d = io::read_json(run_dir / kDatasetDir / io::kDatasetManifest);
    md << "## Dataset\n\n";
    md << "- model kind: " << d.at("model_kind").get<std::string>() << "\n";
    md << "- records: " << d.at("records").get<std::size_t>() << ", increments: " << d.at("increments").get<std::size_t>()
       << "\n";
    const auto& split = d.at("split");
    md << "- split (train/valid/test): " << split.at("train").size() << "/" << split.at("valid").size() << "/"
       << split.at("test").size() << "\n";
    md << "- material: " << d.at("material").dump() << "\n";
    md << "- seed: " << d.at("sequence_spec").at("seed").get<std::uint64_t>() << "\n\n";
    md << table_row({"channel", "role", "mean", "stddev"}) << table_rule(4);
    const auto& norm = d.at("normalization");
    const auto inputs = d.at("input_names").get<std::vector<std::string>>();
    const auto targets = d.at("target_names").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < inputs.size(); ++i)
        md << table_row({inputs[i], "input", sci(norm.at("inputs")[i].at("mean").get<double>()),
                         sci(norm.at("inputs")[i].at("stddev").get<double>())});
    for (std::size_t i = 0; i < targets.size(); ++i)
        md << table_row({targets[i], "target", sci(norm.at("targets")[i].at("mean").get<double>()),
                         sci(norm.at("targets")[i].at("stddev").get<double>())});
    md << "\n";
}

void search_section(std::ostringstream& md, const fs::path& run_dir) {
    const fs::path dir = run_dir / kSearchDir;
    const json s = io::read_json(dir / "summary.json");
    md << "## Search\n\n";
    md << "- status: " << s.at("status").get<std::string>() << "\n";
    md << "- brackets completed: " << s.at("completed_brackets").get<std::size_t>() << " of "
       << s.at("planned_brackets").get<std::size_t>() << "\n";
    md << "- epochs consumed: " << s.at("epochs_consumed").get<std::size_t>() << " (plan without early stopping: "
       << s.at("planned_epochs").get<std::size_t>() << ")\n";
    if (!s.at("best").is_null())
        md << "- best: " << describe(hypersearch::hyper_config_from_json(s.at("best").dump()))
           << ", validation MSE " << sci(s.at("best_validation_mse").get<double>()) << "\n";
    md << "\n";

    std::map<std::pair<std::size_t, std::uint64_t>, hypersearch::TrialRecord> latest;
    for (const auto& e : hypersearch::read_ledger((dir / "ledger.jsonl").string()))
        if (e.kind == hypersearch::LedgerEvent::Kind::round) latest[{e.bracket, e.trial.config.draw_index}] = e.trial;
    std::vector<hypersearch::TrialRecord> trials;
    for (auto& [key, t] : latest) trials.push_back(t);
    std::sort(trials.begin(), trials.end(), hypersearch::ranks_before);
    md << "Top trials by final validation MSE:\n\n";
    md << table_row({"rank", "bracket", "draw", "configuration", "epochs", "status", "validation MSE"})
       << table_rule(7);
    for (std::size_t i = 0; i < std::min<std::size_t>(5, trials.size()); ++i) {
        const auto& t = trials[i];
        md << table_row({std::to_string(i + 1), std::to_string(t.bracket), std::to_string(t.config.draw_index),
                         describe(t.config), std::to_string(t.epochs_completed),
                         std::string(hypersearch::to_string(t.status)), sci(t.final_validation_mse)});
    }
    md << "\n";
}

void train_section(std::ostringstream& md, const fs::path& run_dir) {
    const fs::path dir = run_dir / kModelDir;
    const json r = io::read_json(dir / "train_report.json");
    md << "## Training\n\n";
    md << "- status: " << r.at("status").get<std::string>() << "\n";
    md << "- network (" << r.at("network_source").get<std::string>()
       << "): " << describe(hypersearch::hyper_config_from_json(r.at("hyper_config").dump())) << "\n";
    md << "- precision: " << r.at("precision").get<std::string>() << ", epochs: "
       << r.at("epochs_completed").get<std::size_t>() << " of " << r.at("epochs_requested").get<std::size_t>() << "\n";
    if (!r.at("final").is_null()) {
        const auto& f = r.at("final");
        md << "- final MSE (standardized): train " << sci(f.at("train_mse").get<double>()) << ", validation "
           << sci(f.at("valid_mse").get<double>()) << ", test " << sci(f.at("test_mse").get<double>()) << "\n";
    }
    md << "\n";

    std::istringstream csv(io::read_file(dir / "history.csv"));
    std::string line;
    std::getline(csv, line);
    std::vector<std::string> rows;
    while (std::getline(csv, line))
        if (!line.empty()) rows.push_back(line);
    md << "Loss curve:\n\n" << table_row({"epoch", "train MSE", "validation MSE"}) << table_rule(3);
    const std::size_t stride = std::max<std::size_t>(1, rows.size() / 10);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (i % stride != 0 && i + 1 != rows.size()) continue;
        std::vector<std::string> cells;
        std::istringstream fields(rows[i]);
        std::string field;
        while (std::getline(fields, field, ',')) cells.push_back(field);
        if (cells.size() != 3) continue;
        md << table_row({cells[0], sci(std::stod(cells[1])), sci(std::stod(cells[2]))});
    }
    md << "\n";
}

void explain_section(std::ostringstream& md, const fs::path& run_dir) {
    const json s = io::read_json(run_dir / kExplainDir / "summary.json");
    md << "## Explanation\n\n";
    std::vector<std::string> names;
    for (const auto& [name, value] : s.at("mean_best_abs_r").items()) names.push_back(name);
    std::vector<std::string> header{"sample", "record"};
    for (const auto& n : names) header.push_back("best abs r, " + n);
    header.push_back("top-k linear importance");
    md << table_row(header) << table_rule(header.size());
    for (const auto& sample : s.at("samples")) {
        std::vector<std::string> row{std::to_string(sample.at("test_position").get<std::size_t>()),
                                     std::to_string(sample.at("record").get<std::size_t>())};
        for (const auto& n : names) row.push_back(num(std::round(sample.at("best_abs_r").at(n).get<double>() * 1e4) / 1e4));
        row.push_back(num(std::round(sample.at("top_linear_importance").get<double>() * 1e4) / 1e4));
        md << table_row(row);
    }
    md << "\n";
    for (const auto& n : names)
        md << "- mean best |r| for " << n << ": " << num(std::round(s.at("mean_best_abs_r").at(n).get<double>() * 1e4) / 1e4)
           << "\n";
    md << "\n";
}

}  // namespace

std::string cmd_report(const fs::path& run_dir) {
    if (!fs::exists(run_dir / kManifest)) throw UsageError("no run manifest in " + run_dir.string());
    auto manifest = load_manifest(run_dir);
    std::vector<std::string> stages;
    for (const auto& [stage, when] : manifest.stages) stages.push_back(stage);
    stages.push_back("config");
    verify_artifacts(run_dir, manifest, stages);

    std::ostringstream md;
    md << "# Run report\n\n";
    md << "- run directory: " << run_dir.string() << "\n";
    md << "- tool version: " << manifest.tool_version << "\n";
    md << "- config digest: " << manifest.config_digest << "\n\n";
    try {
        if (manifest.has_stage("generate")) dataset_section(md, run_dir);
        else md << "## Dataset\n\n" << absent("generate");
        if (manifest.has_stage("search")) search_section(md, run_dir);
        else md << "## Search\n\n" << absent("search");
        if (manifest.has_stage("train")) train_section(md, run_dir);
        else md << "## Training\n\n" << absent("train");
        if (manifest.has_stage("explain")) explain_section(md, run_dir);
        else md << "## Explanation\n\n" << absent("explain");
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("malformed stage document: ") + e.what());
    }
    const std::string text = md.str();
    io::write_atomic(run_dir / "report.md", text);
    record_stage(run_dir, manifest, "report", {run_dir / "report.md"}, io::read_file(run_dir / kResolvedConfig));
    save_manifest(run_dir, manifest);
    return text;
}

namespace {

struct CommonFlags {
    std::optional<std::string> config;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::optional<std::string> precision;
};

void add_common(CLI::App& cmd, CommonFlags& f) {
    cmd.add_option("--config", f.config, "Experiment configuration (JSON)");
    cmd.add_option("--out", f.out, "Run directory");
    cmd.add_option("--seed", f.seed, "Seed for data, search and training");
    cmd.add_option("--workers", f.workers, "Worker threads");
    cmd.add_option("--precision", f.precision, "Floating-point precision")->check(CLI::IsMember({"f32", "f64"}));
}

/// Configuration from --config, else the run directory's resolved config, else defaults.
std::pair<ExperimentConfig, fs::path> resolve(const CommonFlags& f) {
    const std::optional<fs::path> out = f.out ? std::optional<fs::path>(*f.out) : std::nullopt;
    ExperimentConfig config;
    fs::path run_dir;
    if (f.config) {
        config = load_config(*f.config);
        if (f.seed) config.seed = *f.seed;
        run_dir = resolve_run_dir(out, config);
    } else {
        ExperimentConfig base = default_config(ModelKind::elastoplastic);
        if (f.seed) base.seed = *f.seed;
        run_dir = resolve_run_dir(out, base);
        config = fs::exists(run_dir / kResolvedConfig) ? load_config(run_dir / kResolvedConfig) : base;
    }
    if (f.seed) config.seed = *f.seed;
    config.sequence.seed = config.seed;
    if (f.workers) config.workers = *f.workers;
    if (f.precision) config.precision = io::parse_precision(*f.precision);
    validate(config);
    return {config, run_dir};
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Recurrent surrogate models of material response with cell-state explanations", "cellxai"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    CommonFlags flags;
    std::optional<std::size_t> sample, stop_after;
    auto* generate = app.add_subcommand("generate", "Generate loading sequences and reference responses");
    auto* search = app.add_subcommand("search", "Hyperband architecture search");
    auto* train = app.add_subcommand("train", "Train the chosen architecture");
    auto* explain = app.add_subcommand("explain", "Explain cell states of the trained model");
    auto* report = app.add_subcommand("report", "Summarize a run directory");
    for (auto* cmd : {generate, search, train, explain, report}) add_common(*cmd, flags);
    search->add_option("--stop-after-brackets", stop_after, "Stop after this many brackets in total");
    explain->add_option("--sample", sample, "Test-split position to explain");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (report->parsed()) {
            const auto run_dir = resolve(flags).second;
            cmd_report(run_dir);
            out << "report written to " << (run_dir / "report.md").string() << "\n";
            return 0;
        }
        const auto [config, run_dir] = resolve(flags);
        if (generate->parsed()) {
            const auto r = cmd_generate(config, run_dir);
            out << "generated " << r.records << " records (split " << r.split.train << "/" << r.split.valid << "/"
                << r.split.test << ") in " << (run_dir / kDatasetDir).string() << "\n";
        } else if (search->parsed()) {
            const auto r = cmd_search(config, run_dir, stop_after).result;
            out << "search " << hypersearch::to_string(r.status) << ": " << r.completed_brackets << " of "
                << r.plans.size() << " brackets, " << r.trials.size() << " trials, " << r.epochs_consumed()
                << " epochs\n";
            if (r.status == hypersearch::SearchStatus::failed) {
                err << "error: every trial diverged\n";
                return 2;
            }
            if (r.status == hypersearch::SearchStatus::interrupted) out << "rerun 'search' to resume from the ledger\n";
            else if (r.best)
                out << "best: " << describe(r.best->config) << ", validation MSE " << sci(r.best->final_validation_mse)
                    << "\n";
        } else if (train->parsed()) {
            const auto r = cmd_train(config, run_dir);
            if (r.status == tensornet::TrainStatus::diverged) {
                err << "error: training diverged after " << r.history.train_mse.size()
                    << " epochs; partial history kept in " << (run_dir / kModelDir / "history.csv").string() << "\n";
                return 2;
            }
            out << "trained " << describe(r.hyper) << " for " << r.history.train_mse.size() << " epochs: train "
                << sci(r.train_mse) << ", validation " << sci(r.valid_mse) << ", test " << sci(r.test_mse) << "\n";
        } else if (explain->parsed()) {
            const auto r = cmd_explain(config, run_dir, sample);
            out << "explained " << r.reports.size() << " test samples in " << (run_dir / kExplainDir).string() << "\n";
        }
        return 0;
    } catch (const IntegrityError& e) {
        err << "integrity error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return 2;
    } catch (const DomainError& e) {
        err << "numeric error: " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << "\n";
        return 1;
    } catch (const fs::filesystem_error& e) {
        err << "I/O error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace cellxai::cli
