#pragma once

#include <cstdint>
#include <cstring>
#include <string>

#include "bicd/dataset_io.hpp"
#include "bicd/model.hpp"

namespace bicd {

inline constexpr const char* kCheckpointFormatVersion = "1";

inline json to_json(const ModelConfig& c) {
    return json{{"dim", c.dim},       {"hidden", c.hidden}, {"hidden_att", c.hidden_att},
                {"dropout", c.dropout}, {"p0", c.p0},       {"beta", c.beta},
                {"omega_mode", omega_mode_name(c.omega_mode)}, {"rank_tol", c.rank_tol}};
}

inline ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.dim = j.at("dim").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.hidden_att = j.at("hidden_att").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.p0 = j.at("p0").get<double>();
    c.beta = j.at("beta").get<double>();
    c.omega_mode = parse_omega_mode(j.at("omega_mode").get<std::string>());
    c.rank_tol = j.at("rank_tol").get<double>();
    c.validate();
    return c;
}

struct Checkpoint {
    ModelConfig model;
    Variant variant = Variant::full;
    ModelParams params;
    json extra = json::object();  // free-form provenance (seed, epochs, manifest hash)
};

/// Layout: u64 LE header length, JSON header, f64 LE parameter blocks in
/// header order, u32 LE CRC32 of everything before it.
inline std::string encode_checkpoint(Checkpoint ck) {
    json params = json::array();
    std::string blocks;
    ck.params.for_each([&](const std::string& name, Tensor& t) {
        params.push_back({{"name", name}, {"shape", t.shape()}});
        const std::size_t off = blocks.size();
        blocks.resize(off + 8 * t.size());
        std::memcpy(blocks.data() + off, t.storage().data(), 8 * t.size());
    });
    const json header{{"format_version", kCheckpointFormatVersion},
                      {"model", to_json(ck.model)},
                      {"variant", variant_name(ck.variant)},
                      {"params", params},
                      {"extra", ck.extra}};
    const std::string hs = header.dump();
    std::string out(8, '\0');
    const std::uint64_t hlen = hs.size();
    std::memcpy(out.data(), &hlen, 8);
    out += hs;
    out += blocks;
    const std::uint32_t crc = crc32_bytes(out);
    out.append(reinterpret_cast<const char*>(&crc), 4);
    return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& what = "checkpoint") {
    if (bytes.size() < 12) throw DataError(what + ": truncated");
    std::uint32_t crc = 0;
    std::memcpy(&crc, bytes.data() + bytes.size() - 4, 4);
    const std::string_view body = bytes.substr(0, bytes.size() - 4);
    if (crc32_bytes(body) != crc) throw DataError(what + ": checksum mismatch");
    std::uint64_t hlen = 0;
    std::memcpy(&hlen, body.data(), 8);
    if (hlen > body.size() - 8) throw DataError(what + ": header length out of range");

    Checkpoint ck;
    try {
        const json header = json::parse(body.substr(8, hlen));
        const auto version = header.at("format_version").get<std::string>();
        if (version != kCheckpointFormatVersion)
            throw DataError(what + ": unsupported checkpoint format version \"" + version + "\"");
        ck.model = model_config_from_json(header.at("model"));
        ck.variant = parse_variant(header.at("variant").get<std::string>());
        ck.extra = header.value("extra", json::object());
        RngStream dummy(0, 0);
        ck.params = init_params(ck.model, dummy);

        const auto& plist = header.at("params");
        std::size_t idx = 0, off = 8 + hlen;
        ck.params.for_each([&](const std::string& name, Tensor& t) {
            if (idx >= plist.size()) throw DataError(what + ": missing parameter " + name);
            const auto& pj = plist.at(idx++);
            if (pj.at("name").get<std::string>() != name)
                throw DataError(what + ": expected parameter " + name + ", found " + pj.at("name").get<std::string>());
            const auto shape = pj.at("shape").get<Shape>();
            if (shape != t.shape())
                throw DataError(what + ": parameter " + name + " has shape " + shape_str(shape) + ", model expects " +
                                shape_str(t.shape()));
            if (off + 8 * t.size() > body.size()) throw DataError(what + ": truncated parameter block " + name);
            std::memcpy(t.storage().data(), body.data() + off, 8 * t.size());
            off += 8 * t.size();
        });
        if (idx != plist.size()) throw DataError(what + ": unexpected extra parameters");
        if (off != body.size()) throw DataError(what + ": trailing bytes after parameter blocks");
    } catch (const json::exception& e) {
        throw DataError(what + ": malformed header: " + e.what());
    } catch (const ConfigError& e) {
        throw DataError(what + ": " + e.what());
    }
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const fs::path& path) { write_file(path, encode_checkpoint(ck)); }

inline Checkpoint load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path), path.string()); }

}  // namespace bicd
