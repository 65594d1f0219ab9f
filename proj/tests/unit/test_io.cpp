#include <gtest/gtest.h>

#include <bit>
#include <filesystem>
#include <unistd.h>

#include "cellxai/errors.hpp"
#include "cellxai/io.hpp"

using namespace cellxai;
using namespace cellxai::io;

namespace cellxai::tensornet {
void PrintTo(LayerKind kind, std::ostream* os) { *os << to_string(kind); }
}  // namespace cellxai::tensornet

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("cellxai-io-" + name + "-" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

template <typename S>
SavedModel<S> sample_model(tensornet::LayerKind kind, std::uint64_t seed) {
    tensornet::NetworkConfig config;
    config.input_dim = 1;
    config.layers = {{kind, 5, tensornet::Activation::tanh}, {tensornet::LayerKind::time_distributed_dense, 2,
                                                               tensornet::Activation::linear}};
    CounterRng rng(seed);
    SavedModel<S> m;
    m.config = config;
    m.params = tensornet::init_params<S>(config, rng);
    m.normalization = {{{0.25, 1.5, false}}, {{-0.125, 0.75, false}, {0.0, 1.0, true}}};
    m.seed = seed;
    return m;
}

loadgen::Dataset small_dataset(ModelKind kind) {
    loadgen::SequenceSpec spec;
    spec.seq_len = 30;
    spec.model_kind = kind;
    spec.seed = 11;
    return loadgen::generate_dataset(spec, constitutive::default_params(kind), 20);
}

}  // namespace

TEST(Digest, KnownVectors) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(AtomicWrite, ReplacesContentAndLeavesNoTemporary) {
    const auto dir = fresh_dir("atomic");
    write_atomic(dir / "sub" / "a.txt", "first");
    write_atomic(dir / "sub" / "a.txt", "second");
    EXPECT_EQ(read_file(dir / "sub" / "a.txt"), "second");
    EXPECT_FALSE(fs::exists(dir / "sub" / "a.txt.tmp"));
    EXPECT_EQ(file_sha256(dir / "sub" / "a.txt"), sha256_hex("second"));
}

TEST(AtomicWrite, UnwritablePathIsIoError) {
    const auto dir = fresh_dir("unwritable");
    write_atomic(dir / "plain", "x");
    EXPECT_THROW(write_atomic(dir / "plain" / "child.txt", "y"), IoError);
    EXPECT_THROW(read_file(dir / "missing"), IoError);
}

TEST(Buffers, LittleEndianLayout) {
    const std::string f = encode_le(std::vector<float>{1.0f});
    EXPECT_EQ(f, std::string("\x00\x00\x80\x3f", 4));
    const std::string d = encode_le(std::vector<double>{-2.0});
    EXPECT_EQ(d, std::string("\x00\x00\x00\x00\x00\x00\x00\xc0", 8));
    EXPECT_THROW(decode_le<double>(std::string(7, '\0')), IntegrityError);
}

TEST(Buffers, RoundTripIsBitwise) {
    const std::vector<double> values{0.1, -0.0, 1e-310, 3.141592653589793, -1e300};
    const auto back = decode_le<double>(encode_le(values));
    ASSERT_EQ(back.size(), values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
        EXPECT_EQ(std::bit_cast<std::uint64_t>(back[i]), std::bit_cast<std::uint64_t>(values[i]));
}

TEST(Precision, Names) {
    EXPECT_EQ(parse_precision("f32"), Precision::f32);
    EXPECT_EQ(to_string(Precision::f64), "f64");
    EXPECT_THROW(parse_precision("f16"), UsageError);
}

class ModelRoundTrip : public ::testing::TestWithParam<tensornet::LayerKind> {};

TEST_P(ModelRoundTrip, FloatAndDoubleAreBitwise) {
    const auto dir = fresh_dir("model-" + std::string(tensornet::to_string(GetParam())));
    const auto m32 = sample_model<float>(GetParam(), 3);
    save_model(dir / "f32", m32);
    EXPECT_EQ(saved_precision(dir / "f32"), Precision::f32);
    EXPECT_EQ(load_model<float>(dir / "f32"), m32);

    const auto m64 = sample_model<double>(GetParam(), 4);
    save_model(dir / "f64", m64);
    EXPECT_EQ(load_model<double>(dir / "f64"), m64);
    EXPECT_THROW(load_model<float>(dir / "f64"), UsageError);
}

INSTANTIATE_TEST_SUITE_P(Kinds, ModelRoundTrip,
                         ::testing::Values(tensornet::LayerKind::dense, tensornet::LayerKind::simple_rnn,
                                           tensornet::LayerKind::lstm, tensornet::LayerKind::gru),
                         [](const auto& info) { return std::string(tensornet::to_string(info.param)); });

TEST(ModelPersistence, TamperedBufferIsIntegrityError) {
    const auto dir = fresh_dir("tamper");
    save_model(dir, sample_model<float>(tensornet::LayerKind::lstm, 5));
    auto bytes = read_file(dir / kModelBuffer);
    bytes[3] ^= 0x01;
    write_atomic(dir / kModelBuffer, bytes);
    EXPECT_THROW(load_model<float>(dir), IntegrityError);
}

TEST(ModelPersistence, ManifestListsTensorsInLayoutOrder) {
    const auto dir = fresh_dir("manifest");
    const auto m = sample_model<double>(tensornet::LayerKind::gru, 6);
    save_model(dir, m);
    const auto doc = read_json(dir / kModelManifest);
    const auto layout = tensornet::parameter_layout(m.config);
    ASSERT_EQ(doc.at("tensors").size(), layout.size());
    std::size_t offset = 0;
    for (std::size_t i = 0; i < layout.size(); ++i) {
        EXPECT_EQ(doc.at("tensors")[i].at("name").get<std::string>(), layout[i].name);
        EXPECT_EQ(doc.at("tensors")[i].at("offset").get<std::size_t>(), offset);
        offset += tensornet::Tensor<double>::element_count(layout[i].shape);
    }
    EXPECT_EQ(fs::file_size(dir / kModelBuffer), offset * sizeof(double));
    EXPECT_EQ(doc.at("seed").get<std::uint64_t>(), 6u);
}

TEST(DatasetPersistence, RoundTripRestoresEverything) {
    for (auto kind : {ModelKind::hyperelastic, ModelKind::elastoplastic, ModelKind::viscoelastic}) {
        const auto dir = fresh_dir("dataset-" + std::string(to_string(kind)));
        const auto data = small_dataset(kind);
        save_dataset(dir, data);
        const auto back = load_dataset(dir);
        EXPECT_EQ(back.spec, data.spec);
        EXPECT_EQ(back.material, data.material);
        ASSERT_EQ(back.size(), data.size());
        for (std::size_t i = 0; i < data.size(); ++i) {
            EXPECT_EQ(back.records[i].input, data.records[i].input);
            EXPECT_EQ(back.records[i].targets, data.records[i].targets);
            EXPECT_EQ(back.records[i].histories, data.records[i].histories);
            EXPECT_EQ(back.sequences[i].values, data.sequences[i].values);
            EXPECT_EQ(back.sequences[i].dt, data.sequences[i].dt);
            EXPECT_EQ(back.sequences[i].phase_boundaries, data.sequences[i].phase_boundaries);
            EXPECT_EQ(back.sequences[i].ramp_kinds, data.sequences[i].ramp_kinds);
            EXPECT_EQ(back.sequences[i].quantity, data.sequences[i].quantity);
        }
        EXPECT_EQ(back.split.train, data.split.train);
        EXPECT_EQ(back.split.valid, data.split.valid);
        EXPECT_EQ(back.split.test, data.split.test);
        for (std::size_t c = 0; c < data.normalization.targets.size(); ++c) {
            EXPECT_EQ(back.normalization.targets[c].mean, data.normalization.targets[c].mean);
            EXPECT_EQ(back.normalization.targets[c].stddev, data.normalization.targets[c].stddev);
        }
    }
}

TEST(DatasetPersistence, HyperelasticRampMetadataIsAllLinear) {
    const auto dir = fresh_dir("ramps");
    save_dataset(dir, small_dataset(ModelKind::hyperelastic));
    const auto doc = read_json(dir / kDatasetManifest);
    ASSERT_EQ(doc.at("sequences").size(), 20u);
    for (const auto& s : doc.at("sequences")) {
        ASSERT_EQ(s.at("ramp_kinds").size(), 5u);
        for (const auto& k : s.at("ramp_kinds")) EXPECT_EQ(k.get<std::string>(), "linear");
    }
}

TEST(DatasetPersistence, TamperedBufferIsIntegrityError) {
    const auto dir = fresh_dir("dataset-tamper");
    save_dataset(dir, small_dataset(ModelKind::viscoelastic));
    auto bytes = read_file(dir / "targets.f64");
    bytes[10] ^= 0x40;
    write_atomic(dir / "targets.f64", bytes);
    EXPECT_THROW(load_dataset(dir), IntegrityError);
}

TEST(DatasetPersistence, BufferShapesFollowSchema) {
    const auto dir = fresh_dir("dataset-shapes");
    save_dataset(dir, small_dataset(ModelKind::elastoplastic));
    const auto doc = read_json(dir / kDatasetManifest);
    const auto& buffers = doc.at("buffers");
    EXPECT_EQ(buffers[0].at("shape").get<std::vector<std::size_t>>(), (std::vector<std::size_t>{20, 30}));
    EXPECT_EQ(buffers[1].at("shape").get<std::vector<std::size_t>>(), (std::vector<std::size_t>{20, 30, 2}));
    EXPECT_EQ(buffers[2].at("shape").get<std::vector<std::size_t>>(), (std::vector<std::size_t>{20, 30, 2}));
    EXPECT_EQ(fs::file_size(dir / "targets.f64"), 20u * 30u * 2u * 8u);
}
