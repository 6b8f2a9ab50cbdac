#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "availnet/availability_model.hpp"
#include "availnet/duration_model.hpp"
#include "availnet/geo_cluster.hpp"

namespace availnet {

enum class ArtifactType : std::uint8_t { cluster = 1, stage1 = 2, stage2 = 3 };

const char* artifact_name(ArtifactType type);

inline constexpr std::uint32_t kContainerVersion = 1;

/// Single-file model artifact:
///   "AVMC" | u32 version | u8 type | u64 n + config JSON (UTF-8)
///   | u32 count, (u32 n + id)* | u32 count, (u32 n + name, u32 rank, u64 dims, f64 payload)*
///   | u32 CRC-32 of every preceding byte
/// All integers and floats little-endian.
struct ModelContainer {
    ArtifactType type = ArtifactType::cluster;
    nlohmann::json config = nlohmann::json::object();
    std::vector<std::string> vocabulary;
    std::map<std::string, Tensor> tensors;

    friend bool operator==(const ModelContainer&, const ModelContainer&) = default;
};

std::string serialize_container(const ModelContainer& c);
/// Verifies magic, version and checksum before decoding.
ModelContainer parse_container(std::string_view bytes);

void save_container(const std::string& path, const ModelContainer& c);
ModelContainer load_container(const std::string& path);
/// Throws ArtifactTypeError unless the file holds an artifact of `expected` type.
ModelContainer load_container(const std::string& path, ArtifactType expected);

// Config snapshots. The *_from_json readers start from `base`, override the
// keys present, and reject unknown keys.
nlohmann::json to_json(const Stage1Config& cfg);
Stage1Config stage1_config_from_json(const nlohmann::json& j, Stage1Config base = {});
nlohmann::json to_json(const Stage2Config& cfg);
Stage2Config stage2_config_from_json(const nlohmann::json& j, Stage2Config base = {});
nlohmann::json to_json(const EncodingConfig& cfg);
EncodingConfig encoding_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GafOptions& opt);
GafOptions gaf_options_from_json(const nlohmann::json& j, GafOptions base = {});

ModelContainer to_container(const ClusterModel& model);
ClusterModel cluster_from_container(const ModelContainer& c);

ModelContainer to_container(const Stage1Model& model);
Stage1Model stage1_from_container(const ModelContainer& c);

/// `extra` is stored verbatim under config["extra"].
ModelContainer to_container(const Stage2Model& model, const nlohmann::json& extra = nlohmann::json::object());
Stage2Model stage2_from_container(const ModelContainer& c);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::string& path);

}  // namespace availnet
