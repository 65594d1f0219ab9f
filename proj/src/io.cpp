#include "cellxai/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include "cellxai/errors.hpp"

namespace cellxai::io {

using nlohmann::json;

std::string sha256_hex(std::string_view bytes) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest, &length) != 1)
        throw IoError("SHA-256 computation failed");
    std::ostringstream out;
    out << std::hex << std::setfill('0');
    for (unsigned int i = 0; i < length; ++i) out << std::setw(2) << static_cast<int>(digest[i]);
    return out.str();
}

std::string file_sha256(const fs::path& path) { return sha256_hex(read_file(path)); }

void write_atomic(const fs::path& path, std::string_view bytes) {
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw IoError("write to " + tmp.string() + " failed");
    }
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    if (in.bad()) throw IoError("read from " + path.string() + " failed");
    return buffer.str();
}

json read_json(const fs::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw UsageError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

std::string_view to_string(Precision precision) { return precision == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(std::string_view name) {
    if (name == "f32") return Precision::f32;
    if (name == "f64") return Precision::f64;
    throw UsageError("unknown precision '" + std::string(name) + "' (expected f32 or f64)");
}

namespace {

template <typename U>
U byteswap(U v) {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) out = (out << 8) | ((v >> (8 * i)) & 0xff);
    return out;
}

template <typename S>
using Bits = std::conditional_t<sizeof(S) == 4, std::uint32_t, std::uint64_t>;

}  // namespace

template <typename S>
std::string encode_le(const std::vector<S>& values) {
    std::string out(values.size() * sizeof(S), '\0');
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto bits = std::bit_cast<Bits<S>>(values[i]);
        if constexpr (std::endian::native == std::endian::big) bits = byteswap(bits);
        std::memcpy(out.data() + i * sizeof(S), &bits, sizeof(S));
    }
    return out;
}

template <typename S>
std::vector<S> decode_le(std::string_view bytes) {
    if (bytes.size() % sizeof(S) != 0)
        throw IntegrityError("buffer of " + std::to_string(bytes.size()) + " bytes is not a whole number of values");
    std::vector<S> out(bytes.size() / sizeof(S));
    for (std::size_t i = 0; i < out.size(); ++i) {
        Bits<S> bits;
        std::memcpy(&bits, bytes.data() + i * sizeof(S), sizeof(S));
        if constexpr (std::endian::native == std::endian::big) bits = byteswap(bits);
        out[i] = std::bit_cast<S>(bits);
    }
    return out;
}

json to_json(const constitutive::MaterialParams& params) {
    using namespace constitutive;
    return std::visit(
        [](const auto& p) -> json {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, NeoHookeParams>) return {{"mu", p.mu}};
            else if constexpr (std::is_same_v<P, PoyntingThomsonParams>)
                return {{"e_inf", p.e_inf}, {"e_branch", p.e_branch}, {"tau_branch", p.tau_branch}};
            else return {{"e_mod", p.e_mod}, {"sigma_y", p.sigma_y}, {"k_iso", p.k_iso}, {"h_kin", p.h_kin}};
        },
        params);
}

constitutive::MaterialParams material_from_json(const json& doc, ModelKind kind) {
    using namespace constitutive;
    auto params = default_params(kind);
    std::visit(
        [&](auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, NeoHookeParams>) p.mu = doc.at("mu").get<double>();
            else if constexpr (std::is_same_v<P, PoyntingThomsonParams>) {
                p.e_inf = doc.at("e_inf").get<double>();
                p.e_branch = doc.at("e_branch").get<double>();
                p.tau_branch = doc.at("tau_branch").get<double>();
            } else {
                p.e_mod = doc.at("e_mod").get<double>();
                p.sigma_y = doc.at("sigma_y").get<double>();
                p.k_iso = doc.at("k_iso").get<double>();
                p.h_kin = doc.at("h_kin").get<double>();
            }
        },
        params);
    return params;
}

json to_json(const loadgen::SequenceSpec& spec) {
    json palette = json::array();
    for (auto k : spec.ramp_palette) palette.push_back(std::string(to_string(k)));
    return {{"seq_len", spec.seq_len},
            {"phases", spec.phases},
            {"model_kind", std::string(to_string(spec.model_kind))},
            {"ramp_palette", palette},
            {"seed", spec.seed}};
}

loadgen::SequenceSpec sequence_spec_from_json(const json& doc) {
    loadgen::SequenceSpec spec;
    spec.seq_len = doc.at("seq_len").get<std::size_t>();
    spec.phases = doc.at("phases").get<std::size_t>();
    spec.model_kind = parse_model_kind(doc.at("model_kind").get<std::string>());
    for (const auto& k : doc.at("ramp_palette")) spec.ramp_palette.push_back(parse_ramp_kind(k.get<std::string>()));
    spec.seed = doc.at("seed").get<std::uint64_t>();
    return spec;
}

namespace {

json stats_json(const std::vector<loadgen::ChannelStats>& stats) {
    json out = json::array();
    for (const auto& s : stats) out.push_back({{"mean", s.mean}, {"stddev", s.stddev}, {"degenerate", s.degenerate}});
    return out;
}

std::vector<loadgen::ChannelStats> stats_from_json(const json& doc) {
    std::vector<loadgen::ChannelStats> out;
    for (const auto& s : doc)
        out.push_back({s.at("mean").get<double>(), s.at("stddev").get<double>(), s.at("degenerate").get<bool>()});
    return out;
}

}  // namespace

json to_json(const loadgen::Normalization& normalization) {
    return {{"inputs", stats_json(normalization.inputs)}, {"targets", stats_json(normalization.targets)}};
}

loadgen::Normalization normalization_from_json(const json& doc) {
    return {stats_from_json(doc.at("inputs")), stats_from_json(doc.at("targets"))};
}

json to_json(const tensornet::NetworkConfig& config) {
    json layers = json::array();
    for (const auto& l : config.layers)
        layers.push_back({{"kind", std::string(tensornet::to_string(l.kind))},
                          {"width", l.width},
                          {"activation", std::string(tensornet::to_string(l.activation))}});
    return {{"input_dim", config.input_dim}, {"layers", layers}};
}

tensornet::NetworkConfig network_config_from_json(const json& doc) {
    tensornet::NetworkConfig config;
    config.input_dim = doc.at("input_dim").get<std::size_t>();
    for (const auto& l : doc.at("layers"))
        config.layers.push_back({tensornet::parse_layer_kind(l.at("kind").get<std::string>()),
                                 l.at("width").get<std::size_t>(),
                                 tensornet::parse_activation(l.at("activation").get<std::string>())});
    tensornet::validate(config);
    return config;
}

template <typename S>
std::vector<fs::path> save_model(const fs::path& dir, const SavedModel<S>& model) {
    const auto layout = tensornet::parameter_layout(model.config);
    if (layout.size() != model.params.size()) throw UsageError("parameters do not match the network layout");
    std::vector<S> flat;
    json tensors = json::array();
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto& t = model.params.tensors[i];
        if (t.shape() != layout[i].shape) throw UsageError("tensor '" + layout[i].name + "' has the wrong shape");
        tensors.push_back({{"name", model.params.names[i]}, {"shape", t.shape()}, {"offset", flat.size()}});
        flat.insert(flat.end(), t.buffer().begin(), t.buffer().end());
    }
    const std::string buffer = encode_le(flat);
    const json manifest = {{"network", to_json(model.config)},
                           {"normalization", to_json(model.normalization)},
                           {"seed", model.seed},
                           {"precision", std::string(to_string(precision_of<S>()))},
                           {"byte_order", "little"},
                           {"buffer", kModelBuffer},
                           {"buffer_sha256", sha256_hex(buffer)},
                           {"values", flat.size()},
                           {"tensors", tensors}};
    write_atomic(dir / kModelBuffer, buffer);
    write_atomic(dir / kModelManifest, manifest.dump(2) + "\n");
    return {dir / kModelManifest, dir / kModelBuffer};
}

Precision saved_precision(const fs::path& dir) {
    try {
        return parse_precision(read_json(dir / kModelManifest).at("precision").get<std::string>());
    } catch (const json::exception& e) {
        throw UsageError(std::string("malformed model manifest: ") + e.what());
    }
}

template <typename S>
SavedModel<S> load_model(const fs::path& dir) {
    const json manifest = read_json(dir / kModelManifest);
    try {
        const auto precision = parse_precision(manifest.at("precision").get<std::string>());
        if (precision != precision_of<S>())
            throw UsageError("model was saved in " + std::string(to_string(precision)) + ", requested " +
                             std::string(to_string(precision_of<S>())));
        const std::string buffer = read_file(dir / manifest.at("buffer").get<std::string>());
        if (sha256_hex(buffer) != manifest.at("buffer_sha256").get<std::string>())
            throw IntegrityError("model buffer digest mismatch: " + (dir / kModelBuffer).string());
        const auto flat = decode_le<S>(buffer);
        if (flat.size() != manifest.at("values").get<std::size_t>())
            throw IntegrityError("model buffer holds " + std::to_string(flat.size()) + " values");

        SavedModel<S> model;
        model.config = network_config_from_json(manifest.at("network"));
        model.normalization = normalization_from_json(manifest.at("normalization"));
        model.seed = manifest.at("seed").get<std::uint64_t>();
        const auto layout = tensornet::parameter_layout(model.config);
        const auto& tensors = manifest.at("tensors");
        if (tensors.size() != layout.size()) throw IntegrityError("model tensor table does not match the network");
        for (std::size_t i = 0; i < layout.size(); ++i) {
            const auto shape = tensors[i].at("shape").get<std::vector<std::size_t>>();
            const auto offset = tensors[i].at("offset").get<std::size_t>();
            const auto count = tensornet::Tensor<S>::element_count(shape);
            if (shape != layout[i].shape || offset + count > flat.size())
                throw IntegrityError("tensor '" + layout[i].name + "' disagrees with the network layout");
            model.params.names.push_back(tensors[i].at("name").get<std::string>());
            model.params.tensors.emplace_back(
                shape, std::vector<S>(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                                      flat.begin() + static_cast<std::ptrdiff_t>(offset + count)));
        }
        return model;
    } catch (const json::exception& e) {
        throw UsageError(std::string("malformed model manifest: ") + e.what());
    }
}

namespace {

struct BufferSpec {
    const char* file;
    std::vector<std::size_t> shape;
};

}  // namespace

std::vector<fs::path> save_dataset(const fs::path& dir, const loadgen::Dataset& data) {
    const std::size_t m = data.size();
    const std::size_t steps = m ? data.records.front().size() : data.spec.seq_len;
    const std::size_t c = data.target_channels();
    const std::size_t h = m ? data.records.front().histories.size() : 0;

    std::vector<double> inputs, targets, histories;
    inputs.reserve(m * steps);
    targets.reserve(m * steps * c);
    histories.reserve(m * steps * h);
    json sequences = json::array();
    for (std::size_t i = 0; i < m; ++i) {
        const auto& r = data.records[i];
        if (r.size() != steps || r.targets.size() != c || r.histories.size() != h)
            throw UsageError("record " + std::to_string(i) + " has inconsistent dimensions");
        inputs.insert(inputs.end(), r.input.begin(), r.input.end());
        for (std::size_t t = 0; t < steps; ++t) {
            for (const auto& ch : r.targets) targets.push_back(ch[t]);
            for (const auto& ch : r.histories) histories.push_back(ch[t]);
        }
        const auto& s = data.sequences[i];
        json kinds = json::array();
        for (auto k : s.ramp_kinds) kinds.push_back(std::string(to_string(k)));
        sequences.push_back({{"dt", s.dt},
                             {"quantity", std::string(to_string(s.quantity))},
                             {"phase_boundaries", s.phase_boundaries},
                             {"ramp_kinds", kinds}});
    }

    const BufferSpec specs[] = {{"inputs.f64", {m, steps}},
                                {"targets.f64", {m, steps, c}},
                                {"histories.f64", {m, steps, h}}};
    const std::vector<double>* sources[] = {&inputs, &targets, &histories};
    json buffers = json::array();
    std::vector<fs::path> written;
    for (std::size_t b = 0; b < 3; ++b) {
        const std::string bytes = encode_le(*sources[b]);
        write_atomic(dir / specs[b].file, bytes);
        written.push_back(dir / specs[b].file);
        buffers.push_back({{"file", specs[b].file},
                           {"dtype", "float64"},
                           {"byte_order", "little"},
                           {"shape", specs[b].shape},
                           {"sha256", sha256_hex(bytes)}});
    }
    const ModelKind kind = data.spec.model_kind;
    const json manifest = {{"records", m},
                           {"increments", steps},
                           {"model_kind", std::string(to_string(kind))},
                           {"sequence_spec", to_json(data.spec)},
                           {"material", to_json(data.material)},
                           {"input_names", {std::string(to_string(driving_quantity(kind)))}},
                           {"target_names", target_names(kind)},
                           {"history_names", history_names(kind)},
                           {"split", {{"train", data.split.train}, {"valid", data.split.valid}, {"test", data.split.test}}},
                           {"normalization", to_json(data.normalization)},
                           {"buffers", buffers},
                           {"sequences", sequences}};
    write_atomic(dir / kDatasetManifest, manifest.dump(2) + "\n");
    written.insert(written.begin(), dir / kDatasetManifest);
    return written;
}

loadgen::Dataset load_dataset(const fs::path& dir) {
    const json manifest = read_json(dir / kDatasetManifest);
    try {
        loadgen::Dataset data;
        data.spec = sequence_spec_from_json(manifest.at("sequence_spec"));
        data.material = material_from_json(manifest.at("material"), data.spec.model_kind);
        const auto m = manifest.at("records").get<std::size_t>();
        const auto steps = manifest.at("increments").get<std::size_t>();

        std::vector<std::vector<double>> arrays;
        std::vector<std::vector<std::size_t>> shapes;
        for (const auto& b : manifest.at("buffers")) {
            const fs::path file = dir / b.at("file").get<std::string>();
            const std::string bytes = read_file(file);
            if (sha256_hex(bytes) != b.at("sha256").get<std::string>())
                throw IntegrityError("dataset buffer digest mismatch: " + file.string());
            shapes.push_back(b.at("shape").get<std::vector<std::size_t>>());
            arrays.push_back(decode_le<double>(bytes));
            if (arrays.back().size() != tensornet::Tensor<double>::element_count(shapes.back()))
                throw IntegrityError("dataset buffer " + file.string() + " does not match its shape");
        }
        if (arrays.size() != 3) throw IntegrityError("dataset manifest must list three buffers");
        const std::size_t c = shapes[1].at(2), h = shapes[2].at(2);
        if (shapes[0] != std::vector<std::size_t>{m, steps} || shapes[1][0] != m || shapes[2][0] != m)
            throw IntegrityError("dataset buffers disagree with the record count");

        const auto& sequences = manifest.at("sequences");
        if (sequences.size() != m) throw IntegrityError("dataset sequence metadata does not match the record count");
        for (std::size_t i = 0; i < m; ++i) {
            MaterialRecord r;
            r.input.assign(arrays[0].begin() + static_cast<std::ptrdiff_t>(i * steps),
                           arrays[0].begin() + static_cast<std::ptrdiff_t>((i + 1) * steps));
            r.targets.assign(c, std::vector<double>(steps));
            r.histories.assign(h, std::vector<double>(steps));
            for (std::size_t t = 0; t < steps; ++t) {
                for (std::size_t k = 0; k < c; ++k) r.targets[k][t] = arrays[1][(i * steps + t) * c + k];
                for (std::size_t k = 0; k < h; ++k) r.histories[k][t] = arrays[2][(i * steps + t) * h + k];
            }
            LoadingSequence s;
            s.values = r.input;
            s.dt = sequences[i].at("dt").get<double>();
            s.quantity = driving_quantity(data.spec.model_kind);
            s.phase_boundaries = sequences[i].at("phase_boundaries").get<std::vector<std::size_t>>();
            for (const auto& k : sequences[i].at("ramp_kinds")) s.ramp_kinds.push_back(parse_ramp_kind(k.get<std::string>()));
            data.records.push_back(std::move(r));
            data.sequences.push_back(std::move(s));
        }
        const auto& split = manifest.at("split");
        data.split.train = split.at("train").get<std::vector<std::size_t>>();
        data.split.valid = split.at("valid").get<std::vector<std::size_t>>();
        data.split.test = split.at("test").get<std::vector<std::size_t>>();
        for (const auto* part : {&data.split.train, &data.split.valid, &data.split.test})
            for (auto idx : *part)
                if (idx >= m) throw IntegrityError("split index " + std::to_string(idx) + " out of range");
        data.normalization = normalization_from_json(manifest.at("normalization"));
        return data;
    } catch (const json::exception& e) {
        throw UsageError(std::string("malformed dataset manifest: ") + e.what());
    }
}

#define CELLXAI_INSTANTIATE(S)                                                                \
    template std::string encode_le<S>(const std::vector<S>&);                                 \
    template std::vector<S> decode_le<S>(std::string_view);                                   \
    template std::vector<fs::path> save_model<S>(const fs::path&, const SavedModel<S>&);        \
    template SavedModel<S> load_model<S>(const fs::path&);

CELLXAI_INSTANTIATE(float)
CELLXAI_INSTANTIATE(double)

#undef CELLXAI_INSTANTIATE

}  // namespace cellxai::io
