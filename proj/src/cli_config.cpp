#include <chrono>
#include <cmath>
#include <ctime>
#include <set>
#include <sstream>

#include "cellxai/cli.hpp"
#include "cellxai/errors.hpp"

namespace cellxai::cli {

using nlohmann::json;
using hypersearch::Mode;

ExperimentConfig default_config(ModelKind kind) {
    ExperimentConfig c;
    c.model_kind = kind;
    c.material = constitutive::default_params(kind);
    c.sequence.model_kind = kind;
    c.sequence.ramp_palette = loadgen::legal_ramps(kind);
    c.search.domain = hypersearch::SearchDomain::standard(kind == ModelKind::hyperelastic ? Mode::dense : Mode::recurrent);
    return c;
}

namespace {

bool non_negative_integer(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

/// Reads one JSON object, collecting every problem instead of stopping at the first.
class Reader {
public:
    Reader(const json& doc, std::string path, std::vector<std::string>& errors)
        : doc_(doc), path_(std::move(path)), errors_(errors) {
        if (!doc_.is_object()) fail("", "must be an object");
    }

    ~Reader() {
        if (!doc_.is_object()) return;
        for (const auto& [key, value] : doc_.items())
            if (!seen_.count(key)) errors_.push_back(where(key) + ": unknown key");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return doc_.is_object() && doc_.contains(key);
    }

    const json& at(const std::string& key) const { return doc_.at(key); }

    void size(const std::string& key, std::size_t& out) {
        if (!has(key)) return;
        const auto& v = doc_.at(key);
        if (non_negative_integer(v)) out = v.get<std::size_t>();
        else fail(key, "must be a non-negative integer");
    }

    void u64(const std::string& key, std::uint64_t& out) {
        if (!has(key)) return;
        const auto& v = doc_.at(key);
        if (non_negative_integer(v)) out = v.get<std::uint64_t>();
        else fail(key, "must be a non-negative integer");
    }

    void number(const std::string& key, double& out) {
        if (!has(key)) return;
        const auto& v = doc_.at(key);
        if (v.is_number()) out = v.get<double>();
        else fail(key, "must be a number");
    }

    void boolean(const std::string& key, bool& out) {
        if (!has(key)) return;
        const auto& v = doc_.at(key);
        if (v.is_boolean()) out = v.get<bool>();
        else fail(key, "must be true or false");
    }

    void string(const std::string& key, std::string& out) {
        if (!has(key)) return;
        const auto& v = doc_.at(key);
        if (v.is_string()) out = v.get<std::string>();
        else fail(key, "must be a string");
    }

    /// Parses a string with `parse`, recording its error message on failure.
    template <typename T, typename F>
    void named(const std::string& key, T& out, F parse) {
        std::string text;
        if (!has(key)) return;
        if (!doc_.at(key).is_string()) return fail(key, "must be a string");
        try {
            out = parse(doc_.at(key).get<std::string>());
        } catch (const UsageError& e) {
            fail(key, e.what());
        }
    }

    template <typename T, typename F>
    void list(const std::string& key, std::vector<T>& out, F element) {
        if (!has(key)) return;
        const auto& v = doc_.at(key);
        if (!v.is_array()) return fail(key, "must be an array");
        std::vector<T> parsed;
        for (std::size_t i = 0; i < v.size(); ++i) {
            try {
                parsed.push_back(element(v[i]));
            } catch (const std::exception& e) {
                return fail(key + "[" + std::to_string(i) + "]", e.what());
            }
        }
        out = std::move(parsed);
    }

    void fail(const std::string& key, const std::string& message) { errors_.push_back(where(key) + ": " + message); }

    std::string where(const std::string& key) const {
        if (key.empty()) return path_.empty() ? "config" : path_;
        return path_.empty() ? key : path_ + "." + key;
    }

private:
    const json& doc_;
    std::string path_;
    std::vector<std::string>& errors_;
    std::set<std::string> seen_;
};

std::size_t as_size(const json& v) {
    if (!non_negative_integer(v)) throw UsageError("must be a non-negative integer");
    return v.get<std::size_t>();
}

double as_number(const json& v) {
    if (!v.is_number()) throw UsageError("must be a number");
    return v.get<double>();
}

template <typename F>
auto as_named(F parse) {
    return [parse](const json& v) {
        if (!v.is_string()) throw UsageError("must be a string");
        return parse(v.get<std::string>());
    };
}

void read_material(Reader& r, constitutive::MaterialParams& params) {
    std::visit(
        [&](auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, constitutive::NeoHookeParams>) {
                r.number("mu", p.mu);
            } else if constexpr (std::is_same_v<P, constitutive::PoyntingThomsonParams>) {
                r.number("e_inf", p.e_inf);
                r.number("e_branch", p.e_branch);
                r.number("tau_branch", p.tau_branch);
            } else {
                r.number("e_mod", p.e_mod);
                r.number("sigma_y", p.sigma_y);
                r.number("k_iso", p.k_iso);
                r.number("h_kin", p.h_kin);
            }
        },
        params);
}

void read_network(Reader& r, NetworkChoice& n) {
    r.named("mode", n.mode, hypersearch::parse_mode);
    r.size("width", n.width);
    r.size("depth", n.depth);
    r.named("activation", n.activation, tensornet::parse_activation);
    r.named("cell_type", n.cell_type, hypersearch::parse_cell_type);
}

void read_domain(Reader& r, hypersearch::SearchDomain& d) {
    if (r.has("mode")) {
        Mode mode = d.mode;
        r.named("mode", mode, hypersearch::parse_mode);
        if (mode != d.mode) d = hypersearch::SearchDomain::standard(mode);
    }
    r.list("widths", d.widths, as_size);
    r.list("depths", d.depths, as_size);
    r.list("learning_rates", d.learning_rates, as_number);
    r.list("batch_sizes", d.batch_sizes, as_size);
    r.list("activations", d.activations, as_named(tensornet::parse_activation));
    r.list("cell_types", d.cell_types, as_named(hypersearch::parse_cell_type));
}

void check_errors(const std::vector<std::string>& errors) {
    if (errors.empty()) return;
    std::string message = "invalid configuration (" + std::to_string(errors.size()) + " problem" +
                          (errors.size() == 1 ? "" : "s") + "):";
    for (const auto& e : errors) message += "\n  - " + e;
    throw UsageError(message);
}

void collect_violations(const ExperimentConfig& c, std::vector<std::string>& errors) {
    try {
        std::visit([](const auto& p) { constitutive::validate(p); }, c.material);
    } catch (const std::exception& e) {
        errors.push_back(std::string("material: ") + e.what());
    }
    if (constitutive::model_kind(c.material) != c.model_kind) errors.push_back("material: does not match model_kind");
    try {
        loadgen::validate(c.sequence);
    } catch (const std::exception& e) {
        errors.push_back(std::string("sequence: ") + e.what());
    }
    if (c.sequence.model_kind != c.model_kind || c.sequence.seed != c.seed)
        errors.push_back("sequence: model_kind and seed must mirror the top-level values");
    const auto sizes = loadgen::split_sizes(c.total_samples);
    if (sizes.train == 0 || sizes.valid == 0 || sizes.test == 0)
        errors.push_back("sequence.total_samples: " + std::to_string(c.total_samples) +
                         " leaves an empty train, validation or test split");
    if (c.workers == 0) errors.push_back("workers: must be at least 1");

    if (c.search.max_epochs == 0) errors.push_back("search.max_epochs: must be at least 1");
    if (!(c.search.eta > 1.0) || !std::isfinite(c.search.eta)) errors.push_back("search.eta: must be greater than 1");
    try {
        hypersearch::validate(c.search.domain);
    } catch (const std::exception& e) {
        errors.push_back(std::string("search.domain: ") + e.what());
    }
    const auto& es = c.search.early_stop;
    if (es.window == 0) errors.push_back("search.early_stop.window: must be at least 1");
    if (es.patience == 0) errors.push_back("search.early_stop.patience: must be at least 1");
    if (!(es.min_relative_improvement >= 0.0)) errors.push_back("search.early_stop.min_relative_improvement: must be >= 0");

    if (c.train.epochs == 0) errors.push_back("train.epochs: must be at least 1");
    if (c.train.batch_size == 0) errors.push_back("train.batch_size: must be at least 1");
    if (!(c.train.learning_rate > 0.0) || !std::isfinite(c.train.learning_rate))
        errors.push_back("train.learning_rate: must be positive");
    if (c.train.network) {
        if (c.train.network->width == 0) errors.push_back("train.network.width: must be at least 1");
        if (c.train.network->depth < 2)
            errors.push_back("train.network.depth: must be at least 2 (one hidden layer plus the output head)");
    }
    if (c.explain.top_k == 0) errors.push_back("explain.top_k: must be at least 1");
}

}  // namespace

void validate(const ExperimentConfig& config) {
    std::vector<std::string> errors;
    collect_violations(config, errors);
    check_errors(errors);
}

ExperimentConfig parse_config(const json& doc) {
    std::vector<std::string> errors;
    ModelKind kind = ModelKind::elastoplastic;
    if (doc.is_object() && doc.contains("model_kind")) {
        if (!doc.at("model_kind").is_string()) errors.push_back("model_kind: must be a string");
        else try {
                kind = parse_model_kind(doc.at("model_kind").get<std::string>());
            } catch (const UsageError& e) {
                errors.push_back(std::string("model_kind: ") + e.what());
            }
    }
    ExperimentConfig c = default_config(kind);
    {
        Reader top(doc, "", errors);
        top.has("model_kind");
        top.u64("seed", c.seed);
        top.size("workers", c.workers);
        top.named("precision", c.precision, io::parse_precision);
        top.string("output_dir", c.output_dir);

        if (top.has("material")) {
            Reader r(top.at("material"), "material", errors);
            read_material(r, c.material);
        }
        if (top.has("sequence")) {
            Reader r(top.at("sequence"), "sequence", errors);
            r.size("seq_len", c.sequence.seq_len);
            r.size("phases", c.sequence.phases);
            r.list("ramp_palette", c.sequence.ramp_palette, as_named(parse_ramp_kind));
            r.size("total_samples", c.total_samples);
        }
        if (top.has("search")) {
            Reader r(top.at("search"), "search", errors);
            r.size("max_epochs", c.search.max_epochs);
            r.number("eta", c.search.eta);
            if (r.has("domain")) {
                Reader d(r.at("domain"), "search.domain", errors);
                read_domain(d, c.search.domain);
            }
            if (r.has("early_stop")) {
                Reader e(r.at("early_stop"), "search.early_stop", errors);
                e.boolean("enabled", c.search.early_stop.enabled);
                e.size("window", c.search.early_stop.window);
                e.size("patience", c.search.early_stop.patience);
                e.number("min_relative_improvement", c.search.early_stop.min_relative_improvement);
            }
        }
        if (top.has("train")) {
            Reader r(top.at("train"), "train", errors);
            r.size("epochs", c.train.epochs);
            r.size("batch_size", c.train.batch_size);
            r.number("learning_rate", c.train.learning_rate);
            r.size("bptt_truncation", c.train.bptt_truncation);
            if (r.has("network") && !r.at("network").is_null()) {
                NetworkChoice n;
                n.mode = c.search.domain.mode;
                Reader nr(r.at("network"), "train.network", errors);
                read_network(nr, n);
                c.train.network = n;
            }
        }
        if (top.has("explain")) {
            Reader r(top.at("explain"), "explain", errors);
            r.size("samples", c.explain.samples);
            r.size("top_k", c.explain.top_k);
        }
    }
    if (c.sequence.ramp_palette.empty()) c.sequence.ramp_palette = loadgen::legal_ramps(kind);
    c.sequence.model_kind = c.model_kind;
    c.sequence.seed = c.seed;
    collect_violations(c, errors);
    check_errors(errors);
    return c;
}

ExperimentConfig load_config(const fs::path& path) { return parse_config(io::read_json(path)); }

json to_json(const ExperimentConfig& c) {
    json palette = json::array();
    for (auto k : c.sequence.ramp_palette) palette.push_back(std::string(to_string(k)));
    const auto& d = c.search.domain;
    json activations = json::array(), cells = json::array();
    for (auto a : d.activations) activations.push_back(std::string(tensornet::to_string(a)));
    for (auto t : d.cell_types) cells.push_back(std::string(hypersearch::to_string(t)));
    json network = nullptr;
    if (c.train.network) {
        const auto& n = *c.train.network;
        network = {{"mode", std::string(hypersearch::to_string(n.mode))},
                   {"width", n.width},
                   {"depth", n.depth},
                   {"activation", std::string(tensornet::to_string(n.activation))},
                   {"cell_type", std::string(hypersearch::to_string(n.cell_type))}};
    }
    return {
        {"model_kind", std::string(to_string(c.model_kind))},
        {"material", io::to_json(c.material)},
        {"sequence",
         {{"seq_len", c.sequence.seq_len},
          {"phases", c.sequence.phases},
          {"ramp_palette", palette},
          {"total_samples", c.total_samples}}},
        {"seed", c.seed},
        {"workers", c.workers},
        {"precision", std::string(io::to_string(c.precision))},
        {"search",
         {{"max_epochs", c.search.max_epochs},
          {"eta", c.search.eta},
          {"domain",
           {{"mode", std::string(hypersearch::to_string(d.mode))},
            {"widths", d.widths},
            {"depths", d.depths},
            {"learning_rates", d.learning_rates},
            {"batch_sizes", d.batch_sizes},
            {"activations", activations},
            {"cell_types", cells}}},
          {"early_stop",
           {{"enabled", c.search.early_stop.enabled},
            {"window", c.search.early_stop.window},
            {"patience", c.search.early_stop.patience},
            {"min_relative_improvement", c.search.early_stop.min_relative_improvement}}}}},
        {"train",
         {{"epochs", c.train.epochs},
          {"batch_size", c.train.batch_size},
          {"learning_rate", c.train.learning_rate},
          {"bptt_truncation", c.train.bptt_truncation},
          {"network", network}}},
        {"explain", {{"samples", c.explain.samples}, {"top_k", c.explain.top_k}}},
        {"output_dir", c.output_dir},
    };
}

fs::path resolve_run_dir(const std::optional<fs::path>& out, const ExperimentConfig& config) {
    if (out) return *out;
    if (!config.output_dir.empty()) return config.output_dir;
    const char* root = std::getenv(kOutputRootEnv);
    const fs::path base = root && *root ? fs::path(root) : fs::path("runs");
    return base / (std::string(to_string(config.model_kind)) + "-seed" + std::to_string(config.seed));
}

namespace {

std::string utc_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Stages whose outputs depend on the given stage.
std::vector<std::string> dependents(const std::string& stage) {
    if (stage == "generate") return {"search", "train", "explain", "report"};
    if (stage == "search" || stage == "explain") return {"report"};
    if (stage == "train") return {"explain", "report"};
    return {};
}

}  // namespace

std::vector<std::string> RunManifest::stage_artifacts(const std::string& stage) const {
    std::vector<std::string> out;
    for (const auto& [path, entry] : artifacts)
        if (entry.stage == stage) out.push_back(path);
    return out;
}

RunManifest load_manifest(const fs::path& run_dir) {
    RunManifest m;
    const fs::path path = run_dir / kManifest;
    if (!fs::exists(path)) return m;
    const json doc = io::read_json(path);
    try {
        m.tool_version = doc.at("tool_version").get<std::string>();
        m.config_digest = doc.at("config_digest").get<std::string>();
        m.stages = doc.at("stages").get<std::map<std::string, std::string>>();
        for (const auto& [key, e] : doc.at("artifacts").items())
            m.artifacts[key] = {e.at("sha256").get<std::string>(), e.at("bytes").get<std::uintmax_t>(),
                                e.at("stage").get<std::string>(), e.at("written_at").get<std::string>()};
    } catch (const json::exception& e) {
        throw IntegrityError("malformed run manifest " + path.string() + ": " + e.what());
    }
    return m;
}

void save_manifest(const fs::path& run_dir, const RunManifest& m) {
    json artifacts = json::object();
    for (const auto& [key, e] : m.artifacts)
        artifacts[key] = {{"sha256", e.sha256}, {"bytes", e.bytes}, {"stage", e.stage}, {"written_at", e.written_at}};
    const json doc = {{"tool_version", m.tool_version},
                      {"config_digest", m.config_digest},
                      {"stages", m.stages},
                      {"artifacts", artifacts}};
    io::write_atomic(run_dir / kManifest, doc.dump(2) + "\n");
}

void verify_artifacts(const fs::path& run_dir, const RunManifest& m, const std::vector<std::string>& stages) {
    for (const auto& [key, e] : m.artifacts) {
        if (std::find(stages.begin(), stages.end(), e.stage) == stages.end()) continue;
        const fs::path file = run_dir / key;
        if (!fs::exists(file)) throw IntegrityError("artifact missing: " + file.string());
        if (io::file_sha256(file) != e.sha256) throw IntegrityError("artifact digest mismatch: " + file.string());
    }
}

void record_stage(const fs::path& run_dir, RunManifest& m, const std::string& stage,
                  const std::vector<fs::path>& files, const std::string& config_text) {
    auto stale = dependents(stage);
    stale.push_back(stage);
    for (auto it = m.artifacts.begin(); it != m.artifacts.end();) {
        if (std::find(stale.begin(), stale.end(), it->second.stage) != stale.end()) it = m.artifacts.erase(it);
        else ++it;
    }
    for (const auto& s : stale) m.stages.erase(s);

    const std::string now = utc_now();
    for (const auto& file : files) {
        const std::string key = fs::relative(file, run_dir).generic_string();
        m.artifacts[key] = {io::file_sha256(file), fs::file_size(file), stage, now};
    }
    m.stages[stage] = now;
    m.tool_version = kToolVersion;
    m.config_digest = io::sha256_hex(config_text);
}

}  // namespace cellxai::cli
