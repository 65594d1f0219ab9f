#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cellxai/loadgen.hpp"
#include "cellxai/network.hpp"
#include "json.hpp"

/// File persistence: digests, atomic writes, models and datasets.
namespace cellxai::io {

namespace fs = std::filesystem;

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const fs::path& path);

/// Writes to a sibling temporary file, then renames it over `path`.
void write_atomic(const fs::path& path, std::string_view bytes);
std::string read_file(const fs::path& path);
nlohmann::json read_json(const fs::path& path);

enum class Precision { f32, f64 };

std::string_view to_string(Precision precision);
Precision parse_precision(std::string_view name);

template <typename S>
constexpr Precision precision_of() {
    return sizeof(S) == 4 ? Precision::f32 : Precision::f64;
}

/// Little-endian byte image of a float buffer.
template <typename S>
std::string encode_le(const std::vector<S>& values);
template <typename S>
std::vector<S> decode_le(std::string_view bytes);

nlohmann::json to_json(const constitutive::MaterialParams& params);
constitutive::MaterialParams material_from_json(const nlohmann::json& doc, ModelKind kind);
nlohmann::json to_json(const loadgen::SequenceSpec& spec);
loadgen::SequenceSpec sequence_spec_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const loadgen::Normalization& normalization);
loadgen::Normalization normalization_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const tensornet::NetworkConfig& config);
tensornet::NetworkConfig network_config_from_json(const nlohmann::json& doc);

inline constexpr const char* kModelManifest = "model.json";
inline constexpr const char* kModelBuffer = "model.bin";

template <typename S>
struct SavedModel {
    tensornet::NetworkConfig config;
    tensornet::ModelParams<S> params;
    loadgen::Normalization normalization;
    std::uint64_t seed = 0;

    friend bool operator==(const SavedModel&, const SavedModel&) = default;
};

/// model.json (layers, normalization, seed, precision, tensor table) plus
/// model.bin holding every tensor back to back in manifest order.
template <typename S>
std::vector<fs::path> save_model(const fs::path& dir, const SavedModel<S>& model);

/// Precision recorded in a saved model's manifest.
Precision saved_precision(const fs::path& dir);

/// Throws UsageError when S differs from the saved precision and
/// IntegrityError when the buffer disagrees with the manifest.
template <typename S>
SavedModel<S> load_model(const fs::path& dir);

inline constexpr const char* kDatasetManifest = "dataset.json";

/// dataset.json (spec, material, split, normalization, per-sequence ramp
/// metadata and a buffer schema) plus float64 buffers inputs.f64
/// (M, T), targets.f64 (M, T, C) and histories.f64 (M, T, H).
std::vector<fs::path> save_dataset(const fs::path& dir, const loadgen::Dataset& data);
loadgen::Dataset load_dataset(const fs::path& dir);

}  // namespace cellxai::io
