#include "cellxai/xai.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cellxai/errors.hpp"
#include "json.hpp"

namespace cellxai::xai {

using nlohmann::json;

template <typename S>
StateMatrix collect_cell_states(const tensornet::NetworkConfig& config, const tensornet::ModelParams<S>& params,
                                const tensornet::Tensor<S>& input) {
    if (!config.has_recurrence())
        throw UsageError("cell-state explanations require at least one recurrent layer");
    if (input.rank() != 3 || input.dim(0) != 1) throw UsageError("explanations take a single sample (1, T, input)");
    const auto result = tensornet::forward_sequence(config, params, input, true);
    const auto& layers = result.trace->layers;

    const std::size_t steps = input.dim(1);
    std::size_t units = 0;
    StateMatrix out;
    for (const auto& layer : layers) {
        out.layer_widths.push_back(layer.cell.dim(2));
        units += layer.cell.dim(2);
    }
    out.values.resize(static_cast<Eigen::Index>(steps), static_cast<Eigen::Index>(units));
    Eigen::Index col = 0;
    for (const auto& layer : layers) {
        const std::size_t width = layer.cell.dim(2);
        for (std::size_t t = 0; t < steps; ++t)
            for (std::size_t k = 0; k < width; ++k)
                out.values(static_cast<Eigen::Index>(t), col + static_cast<Eigen::Index>(k)) =
                    static_cast<double>(layer.cell.at(0, t, k));
        col += static_cast<Eigen::Index>(width);
    }
    return out;
}

Eigen::MatrixXd PcaResult::scaled_scores() const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(scores.rows(), scores.cols());
    for (Eigen::Index f = 0; f < scores.cols(); ++f)
        if (singular_values[f] > 0.0) out.col(f) = scores.col(f) / std::sqrt(singular_values[f]);
    return out;
}

Eigen::MatrixXd PcaResult::reconstruct() const {
    return (scores * components.transpose()).rowwise() + mean.transpose();
}

PcaResult pca(const Eigen::MatrixXd& states) {
    const Eigen::Index rows = states.rows(), cols = states.cols();
    if (rows < 2) throw UsageError("PCA needs at least two increments");
    if (cols < 1) throw UsageError("PCA needs at least one unit");
    if (!states.allFinite()) throw NumericError("cell-state matrix contains non-finite entries");

    PcaResult out;
    out.mean = states.colwise().mean().transpose();
    const Eigen::MatrixXd centered = states.rowwise() - out.mean.transpose();

    if (cols <= rows) {
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(centered.transpose() * centered);
        if (eig.info() != Eigen::Success) throw NumericError("Gram eigen-solve failed");
        // Eigen returns ascending eigenvalues.
        out.components = eig.eigenvectors().rowwise().reverse();
        out.singular_values = eig.eigenvalues().reverse().cwiseMax(0.0).cwiseSqrt();
    } else {
        const Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeFullV);
        out.components = svd.matrixV();
        out.singular_values = Eigen::VectorXd::Zero(cols);
        out.singular_values.head(svd.singularValues().size()) = svd.singularValues();
    }

    const double largest = out.singular_values.size() ? out.singular_values[0] : 0.0;
    for (Eigen::Index f = 0; f < cols; ++f) {
        if (out.singular_values[f] <= kRankTolerance * largest || largest == 0.0) out.singular_values[f] = 0.0;
        else ++out.rank;
        Eigen::Index pivot = 0;
        out.components.col(f).cwiseAbs().maxCoeff(&pivot);
        if (out.components(pivot, f) < 0.0) out.components.col(f) *= -1.0;
    }
    out.scores = centered * out.components;
    return out;
}

ImportanceRatios importance_ratios(std::span<const double> singular_values) {
    ImportanceRatios out;
    out.linear.assign(singular_values.size(), 0.0);
    out.squared.assign(singular_values.size(), 0.0);
    double sum = 0.0, sum_sq = 0.0;
    for (double s : singular_values) {
        if (s < 0.0 || !std::isfinite(s)) throw UsageError("singular values must be finite and non-negative");
        sum += s;
        sum_sq += s * s;
    }
    if (sum == 0.0) {
        out.degenerate = true;
        return out;
    }
    for (std::size_t i = 0; i < singular_values.size(); ++i) {
        out.linear[i] = singular_values[i] / sum;
        out.squared[i] = singular_values[i] * singular_values[i] / sum_sq;
    }
    return out;
}

Alignment affine_align(std::span<const double> score, std::span<const double> history) {
    if (score.size() != history.size()) throw UsageError("alignment series differ in length");
    if (score.size() < 2) throw UsageError("alignment needs at least two increments");
    const double n = static_cast<double>(score.size());
    const double mx = std::accumulate(score.begin(), score.end(), 0.0) / n;
    const double my = std::accumulate(history.begin(), history.end(), 0.0) / n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < score.size(); ++i) {
        const double dx = score[i] - mx, dy = history[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    Alignment out;
    const auto flat = [n](double ss, double mean) { return ss <= 1e-24 * n * std::max(1.0, mean * mean); };
    if (flat(sxx, mx)) {
        out.degenerate = true;
        out.intercept = my;
        return out;
    }
    out.slope = sxy / sxx;
    out.intercept = my - out.slope * mx;
    if (flat(syy, my)) {
        out.degenerate = true;
        return out;
    }
    out.pearson_r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    out.r_squared = out.pearson_r * out.pearson_r;
    return out;
}

double ExplanationReport::best_abs_r(const std::string& history) const {
    double best = 0.0;
    for (const auto& entry : alignments)
        if (entry.history == history) best = std::max(best, std::abs(entry.stats.pearson_r));
    return best;
}

double ExplanationReport::top_linear_importance() const {
    const std::size_t k = std::min(top_scores.size(), importance.linear.size());
    return std::accumulate(importance.linear.begin(), importance.linear.begin() + static_cast<std::ptrdiff_t>(k), 0.0);
}

ExplanationReport explain_states(const StateMatrix& states, const std::vector<NamedSeries>& histories,
                                 std::size_t top_k) {
    for (const auto& h : histories)
        if (h.values.size() != states.increments())
            throw UsageError("history '" + h.name + "' has " + std::to_string(h.values.size()) +
                             " increments, states have " + std::to_string(states.increments()));

    const auto result = pca(states.values);
    ExplanationReport report;
    report.increments = states.increments();
    report.layer_widths = states.layer_widths;
    report.singular_values.assign(result.singular_values.data(),
                                  result.singular_values.data() + result.singular_values.size());
    report.importance = importance_ratios(report.singular_values);

    const std::size_t k = std::min(top_k, states.units());
    const Eigen::MatrixXd scaled = result.scaled_scores();
    for (std::size_t f = 0; f < k; ++f) {
        const auto col = static_cast<Eigen::Index>(f);
        report.top_scores.emplace_back(result.scores.col(col).data(),
                                       result.scores.col(col).data() + result.scores.rows());
        report.top_scaled_scores.emplace_back(scaled.col(col).data(), scaled.col(col).data() + scaled.rows());
    }
    if (report.importance.degenerate) return report;

    for (std::size_t f = 0; f < k; ++f)
        for (const auto& h : histories) {
            Alignment stats;
            // Components past the numerical rank carry rounding noise only.
            if (f < result.rank) stats = affine_align(report.top_scores[f], h.values);
            else stats.degenerate = true;
            report.alignments.push_back({f, h.name, stats});
        }
    return report;
}

template <typename S>
ExplanationReport explain(const tensornet::NetworkConfig& config, const tensornet::ModelParams<S>& params,
                          const tensornet::Tensor<S>& input, const std::vector<NamedSeries>& histories,
                          std::size_t top_k) {
    return explain_states(collect_cell_states(config, params, input), histories, top_k);
}

double corpus_mean_abs_r(std::span<const ExplanationReport> reports, const std::string& history) {
    if (reports.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& r : reports) sum += r.best_abs_r(history);
    return sum / static_cast<double>(reports.size());
}

namespace {

json alignment_json(const Alignment& a) {
    return {{"slope", a.slope},
            {"intercept", a.intercept},
            {"pearson_r", a.pearson_r},
            {"r_squared", a.r_squared},
            {"degenerate", a.degenerate}};
}

}  // namespace

std::string to_json(const ExplanationReport& report) {
    json alignments = json::array();
    for (const auto& e : report.alignments)
        alignments.push_back({{"component", e.component}, {"history", e.history}, {"stats", alignment_json(e.stats)}});
    const json doc = {
        {"sample_id", report.sample_id},
        {"model_id", report.model_id},
        {"increments", report.increments},
        {"layer_widths", report.layer_widths},
        {"singular_values", report.singular_values},
        {"importance",
         {{"linear", report.importance.linear},
          {"squared", report.importance.squared},
          {"degenerate", report.importance.degenerate}}},
        {"top_scores", report.top_scores},
        {"top_scaled_scores", report.top_scaled_scores},
        {"alignments", alignments},
    };
    return doc.dump(2);
}

ExplanationReport report_from_json(const std::string& text) {
    try {
        const json doc = json::parse(text);
        ExplanationReport r;
        r.sample_id = doc.at("sample_id").get<std::string>();
        r.model_id = doc.at("model_id").get<std::string>();
        r.increments = doc.at("increments").get<std::size_t>();
        r.layer_widths = doc.at("layer_widths").get<std::vector<std::size_t>>();
        r.singular_values = doc.at("singular_values").get<std::vector<double>>();
        const auto& imp = doc.at("importance");
        r.importance.linear = imp.at("linear").get<std::vector<double>>();
        r.importance.squared = imp.at("squared").get<std::vector<double>>();
        r.importance.degenerate = imp.at("degenerate").get<bool>();
        r.top_scores = doc.at("top_scores").get<std::vector<std::vector<double>>>();
        r.top_scaled_scores = doc.at("top_scaled_scores").get<std::vector<std::vector<double>>>();
        for (const auto& e : doc.at("alignments")) {
            const auto& s = e.at("stats");
            r.alignments.push_back({e.at("component").get<std::size_t>(), e.at("history").get<std::string>(),
                                    {s.at("slope").get<double>(), s.at("intercept").get<double>(),
                                     s.at("pearson_r").get<double>(), s.at("r_squared").get<double>(),
                                     s.at("degenerate").get<bool>()}});
        }
        return r;
    } catch (const json::exception& e) {
        throw UsageError(std::string("malformed explanation report: ") + e.what());
    }
}

#define CELLXAI_INSTANTIATE(S)                                                                                  \
    template StateMatrix collect_cell_states<S>(const tensornet::NetworkConfig&, const tensornet::ModelParams<S>&, \
                                                const tensornet::Tensor<S>&);                                    \
    template ExplanationReport explain<S>(const tensornet::NetworkConfig&, const tensornet::ModelParams<S>&,     \
                                          const tensornet::Tensor<S>&, const std::vector<NamedSeries>&,          \
                                          std::size_t);

CELLXAI_INSTANTIATE(float)
CELLXAI_INSTANTIATE(double)

#undef CELLXAI_INSTANTIATE

}  // namespace cellxai::xai
