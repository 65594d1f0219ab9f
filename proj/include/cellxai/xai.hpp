#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cellxai/network.hpp"

/// Principal-component explanations of recurrent cell states.
namespace cellxai::xai {

/// Cell states of every recurrent layer, concatenated along the unit axis.
/// Rows are increments.
struct StateMatrix {
    Eigen::MatrixXd values;
    std::vector<std::size_t> layer_widths;

    std::size_t increments() const { return static_cast<std::size_t>(values.rows()); }
    std::size_t units() const { return static_cast<std::size_t>(values.cols()); }
};

/// LSTM layers contribute c_t, GRU layers their hidden state and simple RNN
/// layers their internal state c_t. `input` is one sample shaped (1, T, input_dim).
template <typename S>
StateMatrix collect_cell_states(const tensornet::NetworkConfig& config, const tensornet::ModelParams<S>& params,
                                const tensornet::Tensor<S>& input);

struct PcaResult {
    Eigen::VectorXd mean;             ///< per-unit temporal mean
    Eigen::MatrixXd components;       ///< F x F, columns are right-singular vectors
    Eigen::VectorXd singular_values;  ///< length F, non-increasing, zero-padded
    Eigen::MatrixXd scores;           ///< T x F, centered states times components
    std::size_t rank = 0;

    /// Scores divided column-wise by sqrt(sigma); columns with sigma = 0 are zero.
    Eigen::MatrixXd scaled_scores() const;
    Eigen::MatrixXd reconstruct() const;
};

/// Singular values below this fraction of the largest are set to zero.
inline constexpr double kRankTolerance = 1e-10;

/// PCA via the eigen-decomposition of the F x F Gram matrix when F <= T and a
/// full SVD otherwise. Each component is signed so that its largest-magnitude
/// entry is positive.
PcaResult pca(const Eigen::MatrixXd& states);

struct ImportanceRatios {
    std::vector<double> linear;   ///< sigma_f / sum sigma
    std::vector<double> squared;  ///< sigma_f^2 / sum sigma^2
    bool degenerate = false;      ///< all singular values zero

    friend bool operator==(const ImportanceRatios&, const ImportanceRatios&) = default;
};

ImportanceRatios importance_ratios(std::span<const double> singular_values);

/// Least-squares fit history ~ slope * score + intercept.
struct Alignment {
    double slope = 0.0;
    double intercept = 0.0;
    double pearson_r = 0.0;
    double r_squared = 0.0;
    bool degenerate = false;  ///< score or history has zero variance; r reported as 0

    friend bool operator==(const Alignment&, const Alignment&) = default;
};

Alignment affine_align(std::span<const double> score, std::span<const double> history);

struct AlignmentEntry {
    std::size_t component = 0;
    std::string history;
    Alignment stats;

    friend bool operator==(const AlignmentEntry&, const AlignmentEntry&) = default;
};

struct NamedSeries {
    std::string name;
    std::vector<double> values;

    friend bool operator==(const NamedSeries&, const NamedSeries&) = default;
};

struct ExplanationReport {
    std::string sample_id;
    std::string model_id;
    std::size_t increments = 0;
    std::vector<std::size_t> layer_widths;
    std::vector<double> singular_values;
    ImportanceRatios importance;
    std::vector<std::vector<double>> top_scores;         ///< top-k score series
    std::vector<std::vector<double>> top_scaled_scores;  ///< same, scaled by 1/sqrt(sigma)
    std::vector<AlignmentEntry> alignments;              ///< every (top-k component, history) pair

    /// Largest |r| over the top-k components for one history variable.
    double best_abs_r(const std::string& history) const;
    /// Sum of linear importance over the top-k components.
    double top_linear_importance() const;

    friend bool operator==(const ExplanationReport&, const ExplanationReport&) = default;
};

/// Explanation for one sample. `histories` are the reference model's history
/// variables on the same increments.
ExplanationReport explain_states(const StateMatrix& states, const std::vector<NamedSeries>& histories,
                                 std::size_t top_k = 3);

template <typename S>
ExplanationReport explain(const tensornet::NetworkConfig& config, const tensornet::ModelParams<S>& params,
                          const tensornet::Tensor<S>& input, const std::vector<NamedSeries>& histories,
                          std::size_t top_k = 3);

/// Mean over samples of best_abs_r for one history variable.
double corpus_mean_abs_r(std::span<const ExplanationReport> reports, const std::string& history);

std::string to_json(const ExplanationReport& report);
ExplanationReport report_from_json(const std::string& text);

}  // namespace cellxai::xai
