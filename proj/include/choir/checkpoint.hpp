#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "choir/common.hpp"
#include "choir/model.hpp"

namespace choir {

inline nlohmann::json to_json(const ModelConfig& cfg) {
    return {{"vocab_size", cfg.vocab_size}, {"d_model", cfg.d_model},         {"num_heads", cfg.num_heads},
            {"num_layers", cfg.num_layers}, {"d_ff", cfg.d_ff},               {"max_len", cfg.max_len},
            {"max_rel_dist", cfg.max_rel_dist}, {"use_absolute_pe", cfg.use_absolute_pe},
            {"dropout", cfg.dropout},       {"seed", cfg.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    try {
        cfg.vocab_size = j.at("vocab_size").get<int>();
        cfg.d_model = j.at("d_model").get<int>();
        cfg.num_heads = j.at("num_heads").get<int>();
        cfg.num_layers = j.at("num_layers").get<int>();
        cfg.d_ff = j.at("d_ff").get<int>();
        cfg.max_len = j.at("max_len").get<int>();
        cfg.max_rel_dist = j.at("max_rel_dist").get<int>();
        cfg.use_absolute_pe = j.at("use_absolute_pe").get<bool>();
        cfg.dropout = j.at("dropout").get<double>();
        cfg.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("model config json: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

// On-disk layout: u32 little-endian header length, JSON header (format tag,
// version, model config, tensor directory with byte offsets, free-form
// extra), then raw little-endian f32 tensor data in directory order.
// Raw f32 I/O assumes a little-endian host.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
    ModelConfig config;
    std::map<std::string, Mat<float>> tensors;
    nlohmann::json extra;
};

inline void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                            const std::vector<std::pair<std::string, const Mat<float>*>>& tensors,
                            const nlohmann::json& extra = nlohmann::json::object()) {
    nlohmann::json dir = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, mat] : tensors) {
        dir.push_back({{"name", name},
                       {"shape", {mat->rows(), mat->cols()}},
                       {"offset", offset}});
        offset += static_cast<std::uint64_t>(mat->size()) * sizeof(float);
    }
    nlohmann::json header = {{"format", "choir-checkpoint"},
                             {"version", kCheckpointVersion},
                             {"config", to_json(cfg)},
                             {"tensors", std::move(dir)},
                             {"extra", extra}};
    std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("checkpoint: cannot open " + path.string() + " for writing");
    auto header_len = static_cast<std::uint32_t>(header_text.size());
    std::uint8_t len_bytes[4] = {static_cast<std::uint8_t>(header_len & 0xff),
                                 static_cast<std::uint8_t>((header_len >> 8) & 0xff),
                                 static_cast<std::uint8_t>((header_len >> 16) & 0xff),
                                 static_cast<std::uint8_t>((header_len >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(len_bytes), 4);
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [name, mat] : tensors)
        out.write(reinterpret_cast<const char*>(mat->data()),
                  static_cast<std::streamsize>(static_cast<std::uint64_t>(mat->size()) * sizeof(float)));
    if (!out) throw data_error("checkpoint: write failed for " + path.string());
}

inline CheckpointData load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("checkpoint: cannot open " + path.string());
    std::uint8_t len_bytes[4];
    if (!in.read(reinterpret_cast<char*>(len_bytes), 4)) throw data_error("checkpoint: truncated header length");
    std::uint32_t header_len = static_cast<std::uint32_t>(len_bytes[0]) |
                               (static_cast<std::uint32_t>(len_bytes[1]) << 8) |
                               (static_cast<std::uint32_t>(len_bytes[2]) << 16) |
                               (static_cast<std::uint32_t>(len_bytes[3]) << 24);
    std::string header_text(header_len, '\0');
    if (!in.read(header_text.data(), header_len)) throw data_error("checkpoint: truncated header");
    nlohmann::json header = nlohmann::json::parse(header_text, nullptr, false);
    if (header.is_discarded()) throw data_error("checkpoint: header is not valid json");

    CheckpointData data;
    try {
        if (header.at("format").get<std::string>() != "choir-checkpoint")
            throw data_error("checkpoint: unrecognized format tag");
        if (header.at("version").get<std::uint32_t>() != kCheckpointVersion)
            throw data_error("checkpoint: unsupported version");
        data.config = model_config_from_json(header.at("config"));
        data.extra = header.value("extra", nlohmann::json::object());

        std::uint64_t expected_offset = 0;
        for (const auto& entry : header.at("tensors")) {
            std::string name = entry.at("name").get<std::string>();
            auto rows = entry.at("shape").at(0).get<Eigen::Index>();
            auto cols = entry.at("shape").at(1).get<Eigen::Index>();
            auto offset = entry.at("offset").get<std::uint64_t>();
            if (rows < 0 || cols < 0) throw data_error("checkpoint: negative shape for tensor " + name);
            if (offset != expected_offset) throw data_error("checkpoint: offset mismatch for tensor " + name);
            Mat<float> mat(rows, cols);
            if (!in.read(reinterpret_cast<char*>(mat.data()),
                         static_cast<std::streamsize>(static_cast<std::uint64_t>(mat.size()) * sizeof(float))))
                throw data_error("checkpoint: truncated tensor data for " + name);
            expected_offset += static_cast<std::uint64_t>(mat.size()) * sizeof(float);
            if (!data.tensors.emplace(std::move(name), std::move(mat)).second)
                throw data_error("checkpoint: duplicate tensor name");
        }
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("checkpoint: malformed header: ") + e.what());
    }
    char probe;
    if (in.read(&probe, 1)) throw data_error("checkpoint: trailing bytes after tensor data");
    return data;
}

inline void save_model(const std::filesystem::path& path, const ModelConfig& cfg, const ModelParams<float>& params,
                       const nlohmann::json& extra = nlohmann::json::object()) {
    std::vector<std::pair<std::string, const Mat<float>*>> tensors;
    for (auto& [name, mat] : tensor_directory(const_cast<ModelParams<float>&>(params)))
        tensors.emplace_back(name, mat);
    save_checkpoint(path, cfg, tensors, extra);
}

// Loads model tensors by name with shape checks; extra tensors (optimizer
// state) stay available in the returned CheckpointData.
inline ModelParams<float> params_from_checkpoint(const CheckpointData& data) {
    ModelParams<float> params = ModelParams<float>::zeros(data.config);
    for (auto& [name, mat] : tensor_directory(params)) {
        auto it = data.tensors.find(name);
        if (it == data.tensors.end()) throw data_error("checkpoint: missing tensor " + name);
        if (it->second.rows() != mat->rows() || it->second.cols() != mat->cols())
            throw data_error("checkpoint: shape mismatch for tensor " + name);
        *mat = it->second;
    }
    return params;
}

}  // namespace choir
