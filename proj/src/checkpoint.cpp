// SPDX-License-Identifier: Apache-2.0

#include "loralab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace loralab {

namespace {

void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

void put_f32_le(std::string& out, float f) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

float get_f32_le(const unsigned char* p) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return std::bit_cast<float>(bits);
}

}  // namespace

void save_checkpoint_file(const CheckpointData& ckpt, const std::string& path) {
    nlohmann::ordered_json header;
    header["version"] = kCheckpointVersion;
    header["config"] = ckpt.config;
    header["trained_steps"] = ckpt.trained_steps;
    nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    for (const auto& t : ckpt.tensors) {
        const std::uint64_t nbytes = static_cast<std::uint64_t>(t.data.size()) * 4;
        nlohmann::ordered_json e;
        e["name"] = t.name;
        e["shape"] = t.shape;
        e["dtype"] = "f32";
        e["offset"] = offset;
        e["nbytes"] = nbytes;
        manifest.push_back(std::move(e));
        offset += nbytes;
    }
    header["manifest"] = std::move(manifest);
    const std::string header_text = header.dump();

    std::string blob;
    blob.reserve(8 + header_text.size() + offset);
    put_u64_le(blob, header_text.size());
    blob += header_text;
    for (const auto& t : ckpt.tensors)
        for (float f : t.data) put_f32_le(blob, f);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open checkpoint '" + path + "' for writing");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw CheckpointError("write to checkpoint '" + path + "' failed");
}

CheckpointData load_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());

    if (blob.size() < 8) throw CheckpointError("checkpoint truncated: " + std::to_string(blob.size()) +
                                               " bytes, need at least 8 for the header length");
    const std::uint64_t header_len = get_u64_le(bytes);
    if (8 + header_len > blob.size())
        throw CheckpointError("checkpoint truncated: header claims " + std::to_string(header_len) +
                              " bytes but only " + std::to_string(blob.size() - 8) + " remain");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(blob.begin() + 8, blob.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }

    const int version = header.value("version", -1);
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")");

    const std::uint64_t payload_size = blob.size() - 8 - header_len;
    const unsigned char* payload = bytes + 8 + header_len;

    CheckpointData ckpt;
    ckpt.config = header.value("config", nlohmann::ordered_json::object());
    ckpt.trained_steps = header.value("trained_steps", std::int64_t(0));
    std::uint64_t prev_end = 0;
    for (const auto& e : header.at("manifest")) {
        TensorEntry t;
        t.name = e.at("name").get<std::string>();
        t.shape = e.at("shape").get<Shape>();
        const std::string dtype = e.at("dtype").get<std::string>();
        if (dtype != "f32") throw CheckpointError("tensor '" + t.name + "' has unsupported dtype '" + dtype + "'");
        const std::uint64_t offset = e.at("offset").get<std::uint64_t>();
        const std::uint64_t nbytes = e.at("nbytes").get<std::uint64_t>();
        const std::uint64_t expect = static_cast<std::uint64_t>(shape_numel(t.shape)) * 4;
        if (nbytes != expect)
            throw CheckpointError("tensor '" + t.name + "': manifest nbytes " + std::to_string(nbytes) +
                                  " does not match shape " + shape_str(t.shape));
        if (offset < prev_end)
            throw CheckpointError("tensor '" + t.name + "': manifest offset " + std::to_string(offset) +
                                  " overlaps the previous entry ending at " + std::to_string(prev_end));
        if (offset + nbytes > payload_size)
            throw CheckpointError("payload truncated at offset " + std::to_string(payload_size) + ": tensor '" +
                                  t.name + "' needs bytes [" + std::to_string(offset) + ", " +
                                  std::to_string(offset + nbytes) + ")");
        prev_end = offset + nbytes;
        t.data.resize(static_cast<std::size_t>(nbytes / 4));
        for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = get_f32_le(payload + offset + 4 * i);
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

}  // namespace loralab
