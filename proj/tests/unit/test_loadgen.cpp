#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "cellxai/errors.hpp"
#include "cellxai/loadgen.hpp"

using namespace cellxai;
using namespace cellxai::loadgen;
using namespace cellxai::constitutive;

namespace {

SequenceSpec spec_for(ModelKind kind, std::size_t len = 200, std::size_t phases = 5, std::uint64_t seed = 1) {
    SequenceSpec spec;
    spec.seq_len = len;
    spec.phases = phases;
    spec.model_kind = kind;
    spec.seed = seed;
    return spec;
}

}  // namespace

TEST(SampleControls, CountAndDeterminism) {
    const auto spec = spec_for(ModelKind::elastoplastic);
    CounterRng a(42), b(42);
    const auto ca = sample_controls(spec, a);
    const auto cb = sample_controls(spec, b);
    EXPECT_EQ(ca.size(), 6u);
    EXPECT_EQ(ca, cb);
}

TEST(SampleControls, StandardNormalMoments) {
    SequenceSpec spec = spec_for(ModelKind::elastoplastic, 100000, 99999);
    CounterRng rng(2024);
    const auto draws = sample_controls(spec, rng);
    ASSERT_EQ(draws.size(), 100000u);
    double mean = 0.0;
    for (double d : draws) mean += d;
    mean /= draws.size();
    double var = 0.0;
    for (double d : draws) var += (d - mean) * (d - mean);
    var /= draws.size();
    EXPECT_LT(std::abs(mean), 0.02);
    EXPECT_GT(var, 0.97);
    EXPECT_LT(var, 1.03);
}

TEST(RampValue, HandValues) {
    EXPECT_DOUBLE_EQ(ramp_value(RampKind::linear, 0.5), 0.5);
    EXPECT_DOUBLE_EQ(ramp_value(RampKind::quadratic, 0.5), 0.25);
    EXPECT_NEAR(ramp_value(RampKind::half_sine, 0.5), 0.7071067811865476, 1e-15);
    EXPECT_NEAR(ramp_value(RampKind::square_root, 0.25), 0.5, 1e-15);
    EXPECT_NEAR(ramp_value(RampKind::sine, 0.5), 0.5, 1e-15);
    EXPECT_NEAR(ramp_value(RampKind::exponential, 0.5), (std::exp(0.5) - 1) / (std::exp(1.0) - 1), 1e-15);
    EXPECT_EQ(ramp_value(RampKind::constant, 0.7), 0.0);
}

TEST(RampValue, EndpointsAndMonotonicity) {
    for (auto kind : {RampKind::linear, RampKind::quadratic, RampKind::square_root, RampKind::exponential,
                      RampKind::sine, RampKind::half_sine}) {
        EXPECT_NEAR(ramp_value(kind, 0.0), 0.0, 1e-15) << to_string(kind);
        EXPECT_NEAR(ramp_value(kind, 1.0), 1.0, 1e-15) << to_string(kind);
        double prev = 0.0;
        for (int i = 0; i <= 1000; ++i) {
            const double v = ramp_value(kind, i / 1000.0);
            EXPECT_GE(v, prev - 1e-15);
            prev = v;
        }
    }
}

TEST(RampValue, RejectsOutOfRange) {
    EXPECT_THROW(ramp_value(RampKind::linear, -0.1), DomainError);
    EXPECT_THROW(ramp_value(RampKind::linear, 1.5), DomainError);
}

TEST(AssembleSequence, LinearTriangle) {
    auto spec = spec_for(ModelKind::elastoplastic, 8, 2);
    const std::vector<double> controls{0.0, 1.0, 0.0};
    const std::vector<RampKind> kinds{RampKind::linear, RampKind::linear};
    const auto seq = assemble_sequence(controls, kinds, spec);
    const std::vector<double> expected{0.25, 0.5, 0.75, 1.0, 0.75, 0.5, 0.25, 0.0};
    ASSERT_EQ(seq.values.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_DOUBLE_EQ(seq.values[i], expected[i]);
    EXPECT_EQ(seq.phase_boundaries, (std::vector<std::size_t>{0, 4, 8}));
    EXPECT_DOUBLE_EQ(seq.dt, 1.0 / 8);
}

TEST(AssembleSequence, ConstantPhaseHolds) {
    auto spec = spec_for(ModelKind::viscoelastic, 9, 3);
    const std::vector<double> controls{0.0, 2.0, -5.0, 1.0};
    const std::vector<RampKind> kinds{RampKind::linear, RampKind::constant, RampKind::linear};
    const auto seq = assemble_sequence(controls, kinds, spec);
    for (std::size_t i = 3; i < 6; ++i) EXPECT_DOUBLE_EQ(seq.values[i], 2.0);
    EXPECT_DOUBLE_EQ(seq.values[8], 1.0);
    EXPECT_NEAR(seq.values[6], 2.0 + (1.0 - 2.0) / 3.0, 1e-15);
}

TEST(AssembleSequence, ContinuousAcrossPhases) {
    auto spec = spec_for(ModelKind::elastoplastic, 203, 5);
    CounterRng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const auto seq = random_sequence(spec, rng);
        for (std::size_t w = 1; w < spec.phases; ++w) {
            const std::size_t b = seq.phase_boundaries[w];
            const std::size_t n = seq.phase_boundaries[w + 1] - b;
            ASSERT_GT(b, 0u);
            // The next phase starts from the value the previous one ended on.
            const double start = seq.values[b - 1];
            const double target = seq.values[b + n - 1];
            if (seq.ramp_kinds[w] == RampKind::constant) continue;
            EXPECT_NEAR(seq.values[b], start + (target - start) * ramp_value(seq.ramp_kinds[w], 1.0 / n), 1e-12);
        }
        EXPECT_EQ(seq.phase_boundaries.back(), 203u);
    }
}

TEST(AssembleSequence, MismatchedLengthsAreUsageErrors) {
    auto spec = spec_for(ModelKind::elastoplastic, 10, 2);
    const std::vector<double> controls{0.0, 1.0};
    const std::vector<RampKind> kinds{RampKind::linear, RampKind::linear};
    EXPECT_THROW(assemble_sequence(controls, kinds, spec), UsageError);
}

TEST(AssembleSequence, HyperelasticMapsToStretch) {
    auto spec = spec_for(ModelKind::hyperelastic, 6, 3);
    const std::vector<double> controls{0.0, -3.0, 5.0, 0.5};
    const std::vector<RampKind> kinds(3, RampKind::linear);
    const auto seq = assemble_sequence(controls, kinds, spec);
    EXPECT_DOUBLE_EQ(seq.values[1], 0.2);
    EXPECT_DOUBLE_EQ(seq.values[3], 3.0);
    EXPECT_DOUBLE_EQ(seq.values[5], 1.5);
    EXPECT_EQ(seq.quantity, DrivingQuantity::stretch);
}

TEST(Palette, LegalityPerModel) {
    auto spec = spec_for(ModelKind::viscoelastic);
    spec.ramp_palette = {RampKind::quadratic};
    EXPECT_THROW(validate(spec), UsageError);
    spec.model_kind = ModelKind::hyperelastic;
    spec.ramp_palette = {RampKind::constant};
    EXPECT_THROW(validate(spec), UsageError);
    EXPECT_EQ(legal_ramps(ModelKind::elastoplastic).size(), 6u);
}

TEST(GenerateDataset, SplitSizes) {
    EXPECT_EQ(split_sizes(100).train, 70u);
    EXPECT_EQ(split_sizes(100).valid, 15u);
    EXPECT_EQ(split_sizes(100).test, 15u);
    const auto s = split_sizes(512);
    EXPECT_EQ(s.train, 358u);
    EXPECT_EQ(s.valid, 77u);
    EXPECT_EQ(s.test, 77u);
}

TEST(GenerateDataset, PartitionIsDisjointAndExhaustive) {
    const auto data = generate_dataset(spec_for(ModelKind::elastoplastic, 40), PrandtlReussParams{}, 100);
    std::set<std::size_t> seen;
    for (const auto* part : {&data.split.train, &data.split.valid, &data.split.test})
        for (std::size_t i : *part) EXPECT_TRUE(seen.insert(i).second);
    EXPECT_EQ(seen.size(), 100u);
    EXPECT_EQ(data.split.train.size(), 70u);
}

TEST(GenerateDataset, DeterministicAndWorkerIndependent) {
    const auto spec = spec_for(ModelKind::viscoelastic, 50, 5, 77);
    const auto a = generate_dataset(spec, PoyntingThomsonParams{}, 30);
    const auto b = generate_dataset(spec, PoyntingThomsonParams{}, 30, 3);
    for (std::size_t i = 0; i < 30; ++i) {
        EXPECT_EQ(a.records[i].input, b.records[i].input);
        EXPECT_EQ(a.records[i].targets, b.records[i].targets);
    }
    EXPECT_EQ(a.split.train, b.split.train);

    auto other = spec;
    other.seed = 78;
    const auto c = generate_dataset(other, PoyntingThomsonParams{}, 30);
    EXPECT_NE(a.records[0].input, c.records[0].input);
    EXPECT_EQ(a.split.train.size(), c.split.train.size());
}

TEST(GenerateDataset, StandardizedTrainingChannels) {
    const auto data = generate_dataset(spec_for(ModelKind::elastoplastic, 60), PrandtlReussParams{}, 50);
    const auto x = stack_inputs(data, data.split.train, true);
    const auto y = stack_targets(data, data.split.train, true);
    auto moments = [](const std::vector<double>& v, std::size_t channels, std::size_t c) {
        double mean = 0.0, sq = 0.0;
        std::size_t n = 0;
        for (std::size_t i = c; i < v.size(); i += channels, ++n) mean += v[i];
        mean /= n;
        for (std::size_t i = c; i < v.size(); i += channels) sq += (v[i] - mean) * (v[i] - mean);
        return std::pair{mean, std::sqrt(sq / n)};
    };
    const auto [mx, sx] = moments(x, 1, 0);
    EXPECT_LT(std::abs(mx), 1e-10);
    EXPECT_NEAR(sx, 1.0, 1e-10);
    for (std::size_t c = 0; c < 2; ++c) {
        const auto [m, s] = moments(y, 2, c);
        EXPECT_LT(std::abs(m), 1e-10);
        EXPECT_NEAR(s, 1.0, 1e-10);
    }
}

TEST(GenerateDataset, HyperelasticStaysPositiveWithLinearRamps) {
    const auto data = generate_dataset(spec_for(ModelKind::hyperelastic, 100, 5, 3), NeoHookeParams{}, 200);
    for (const auto& seq : data.sequences) {
        EXPECT_GE(*std::min_element(seq.values.begin(), seq.values.end()), kMinStretch);
        for (auto k : seq.ramp_kinds) EXPECT_EQ(k, RampKind::linear);
    }
}

TEST(GenerateDataset, RampKindsDrawnFromPalette) {
    const auto data = generate_dataset(spec_for(ModelKind::viscoelastic, 100, 5, 4), PoyntingThomsonParams{}, 100);
    std::set<RampKind> used;
    for (const auto& seq : data.sequences) used.insert(seq.ramp_kinds.begin(), seq.ramp_kinds.end());
    EXPECT_EQ(used, (std::set<RampKind>{RampKind::linear, RampKind::constant}));
}

TEST(GenerateDataset, RejectsTinyOrMismatched) {
    EXPECT_THROW(generate_dataset(spec_for(ModelKind::elastoplastic), PrandtlReussParams{}, 5), UsageError);
    EXPECT_THROW(generate_dataset(spec_for(ModelKind::elastoplastic), NeoHookeParams{}, 20), UsageError);
}

TEST(Standardize, RoundTripAndDegenerate) {
    CounterRng rng(6);
    std::vector<double> values(1000);
    for (double& v : values) v = 3.0 + 2.0 * rng.normal();
    const auto stats = channel_stats(values);
    const auto back = destandardize(standardize(values, stats), stats);
    for (std::size_t i = 0; i < values.size(); ++i) EXPECT_NEAR(back[i], values[i], 1e-12);
    const std::vector<double> at_mean{stats.mean};
    EXPECT_NEAR(standardize(at_mean, stats)[0], 0.0, 1e-15);

    const std::vector<double> constant(10, 0.1);
    const auto flat = channel_stats(constant);
    EXPECT_TRUE(flat.degenerate);
    const auto scaled = standardize(constant, flat);
    for (std::size_t i = 0; i < constant.size(); ++i) EXPECT_NEAR(scaled[i] + flat.mean, constant[i], 1e-15);
}
