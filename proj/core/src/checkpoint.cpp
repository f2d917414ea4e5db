#include "ffebm/checkpoint.hpp"

#include "ffebm/error.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

namespace ffebm {

namespace {

constexpr char kMagic[6] = {'F', 'F', 'E', 'B', 'M', '\0'};
constexpr std::size_t kPreambleSize = sizeof kMagic + 2 + 4;

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, std::size_t bytes) {
    for (std::size_t i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_le(const std::uint8_t* p, std::size_t bytes) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TensorMap& tensors) {
    nlohmann::json entries = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : tensors) {
        entries.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "f64"}, {"offset", offset}});
        offset += t.numel() * 8;
    }
    const std::string header = nlohmann::json{{"tensors", entries}}.dump();

    std::vector<std::uint8_t> out(kMagic, kMagic + sizeof kMagic);
    put_le(out, kCheckpointVersion, 2);
    put_le(out, header.size(), 4);
    out.insert(out.end(), header.begin(), header.end());
    out.reserve(out.size() + offset);
    for (const auto& [name, t] : tensors) {
        for (Scalar v : t.data()) {
            std::uint64_t bits = 0;
            std::memcpy(&bits, &v, sizeof bits);
            put_le(out, bits, 8);
        }
    }
    return out;
}

TensorMap decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < kPreambleSize || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw FormatError("checkpoint: bad magic");
    }
    const auto version = static_cast<std::uint16_t>(get_le(bytes.data() + 6, 2));
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
    const std::size_t header_len = get_le(bytes.data() + 8, 4);
    if (bytes.size() < kPreambleSize + header_len) throw FormatError("checkpoint: truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + kPreambleSize, bytes.begin() + kPreambleSize + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: corrupted header: ") + e.what());
    }
    const std::uint8_t* payload = bytes.data() + kPreambleSize + header_len;
    const std::size_t payload_size = bytes.size() - kPreambleSize - header_len;

    TensorMap out;
    try {
        for (const auto& e : header.at("tensors")) {
            const auto name = e.at("name").get<std::string>();
            const auto shape = e.at("shape").get<Shape>();
            const auto dtype = e.at("dtype").get<std::string>();
            const auto offset = e.at("offset").get<std::size_t>();
            const std::size_t width = dtype == "f64" ? 8 : (dtype == "f32" ? 4 : 0);
            if (width == 0) throw FormatError("checkpoint: unsupported dtype '" + dtype + "'");
            const std::size_t n = shape_numel(shape);
            if (offset > payload_size || n * width > payload_size - offset) {
                throw FormatError("checkpoint: truncated payload for '" + name + "'");
            }
            Tensor t(shape);
            for (std::size_t i = 0; i < n; ++i) {
                const std::uint8_t* p = payload + offset + i * width;
                if (width == 8) {
                    const std::uint64_t bits = get_le(p, 8);
                    std::memcpy(&t[i], &bits, 8);
                } else {
                    const auto bits = static_cast<std::uint32_t>(get_le(p, 4));
                    float f = 0;
                    std::memcpy(&f, &bits, 4);
                    t[i] = f;
                }
            }
            if (!out.emplace(name, std::move(t)).second) throw FormatError("checkpoint: duplicate tensor '" + name + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
    }
    return out;
}

void save_checkpoint(const TensorMap& tensors, const std::string& path) {
    const auto bytes = encode_checkpoint(tensors);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write checkpoint '" + path + "'");
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw IoError("failed writing checkpoint '" + path + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move checkpoint into '" + path + "'");
}

TensorMap load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace ffebm
