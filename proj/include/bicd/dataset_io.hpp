#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "bicd/datagen.hpp"
#include "json.hpp"

namespace bicd {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kDatasetFormatVersion = "1";

static_assert(std::endian::native == std::endian::little, "raw tensor files assume a little-endian host");

inline std::uint32_t crc32_bytes(std::string_view bytes) {
    uLong c = ::crc32(0L, Z_NULL, 0);
    return static_cast<std::uint32_t>(
        ::crc32(c, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

inline std::string hex32(std::uint32_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(8) << std::setfill('0') << v;
    return os.str();
}

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& p, std::string_view bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + p.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + p.string());
}

// ---------------------------------------------------------------------------
// JSON mirrors of the config structs

inline json to_json(const GenConfig& c) {
    return json{{"n_nodes", c.n_nodes},
                {"n_confounders", c.n_confounders},
                {"pervasiveness", c.pervasiveness},
                {"samples_per_skeleton", c.samples_per_skeleton},
                {"train_skeletons", c.train_skeletons},
                {"valid_skeletons", c.valid_skeletons},
                {"test_skeletons", c.test_skeletons},
                {"expected_degree", c.expected_degree},
                {"weight_lo", c.weight_lo},
                {"weight_hi", c.weight_hi},
                {"noise_sigma", c.noise_sigma},
                {"dim", c.dim},
                {"endogenous_fraction", c.endogenous_fraction}};
}

/// Overlays the keys present in j onto c. Unknown keys are rejected.
inline void overlay_json(GenConfig& c, const json& j) {
    for (const auto& [key, v] : j.items()) {
        if (key == "n_nodes") c.n_nodes = v.get<std::size_t>();
        else if (key == "n_confounders") c.n_confounders = v.get<std::size_t>();
        else if (key == "pervasiveness") c.pervasiveness = v.get<double>();
        else if (key == "samples_per_skeleton") c.samples_per_skeleton = v.get<std::size_t>();
        else if (key == "train_skeletons") c.train_skeletons = v.get<std::size_t>();
        else if (key == "valid_skeletons") c.valid_skeletons = v.get<std::size_t>();
        else if (key == "test_skeletons") c.test_skeletons = v.get<std::size_t>();
        else if (key == "expected_degree") c.expected_degree = v.get<double>();
        else if (key == "weight_lo") c.weight_lo = v.get<double>();
        else if (key == "weight_hi") c.weight_hi = v.get<double>();
        else if (key == "noise_sigma") c.noise_sigma = v.get<double>();
        else if (key == "dim") c.dim = v.get<std::size_t>();
        else if (key == "endogenous_fraction") c.endogenous_fraction = v.get<double>();
        else throw ConfigError("unknown generation key '" + key + "'");
    }
}

// ---------------------------------------------------------------------------
// Raw float32 tensor blocks

inline std::string encode_f32(const std::vector<const Tensor*>& blocks) {
    std::string out;
    for (const Tensor* t : blocks)
        for (double v : t->storage()) {
            const float f = static_cast<float>(v);
            char buf[4];
            std::memcpy(buf, &f, 4);
            out.append(buf, 4);
        }
    return out;
}

inline Tensor decode_f32_block(std::string_view bytes, std::size_t offset, std::size_t rows, std::size_t cols) {
    Tensor t = Tensor::matrix(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) {
        float f;
        std::memcpy(&f, bytes.data() + offset + 4 * i, 4);
        t[i] = static_cast<double>(f);
    }
    return t;
}

inline Tensor quantize_f32(Tensor t) {
    for (auto& v : t.storage()) v = static_cast<double>(static_cast<float>(v));
    return t;
}

/// The bundle as it reads back from disk: sample tensors rounded to float32.
inline DatasetBundle as_stored(DatasetBundle b) {
    for (auto& recs : b.samples)
        for (auto& r : recs) {
            r.x = quantize_f32(std::move(r.x));
            r.l_true = quantize_f32(std::move(r.l_true));
            r.e_true = quantize_f32(std::move(r.e_true));
            r.c_true = quantize_f32(std::move(r.c_true));
        }
    return b;
}

// ---------------------------------------------------------------------------

namespace detail {

inline json skeleton_json(const SkeletonSpec& s) {
    return json{{"id", s.id},
                {"n_nodes", s.n_nodes},
                {"n_confounders", s.n_confounders},
                {"noise_sigma", s.noise_sigma},
                {"A", s.adjacency.storage()},
                {"B", s.loadings.storage()},
                {"confounder_parent", s.confounder_parent},
                {"confounder_parent_weight", s.confounder_parent_weight}};
}

inline std::string sample_file(const char* kind, std::size_t m) { return std::string(kind) + "_" + std::to_string(m) + ".f32"; }

}  // namespace detail

/// Writes manifest.json, skeleton_<m>.json and the four raw sample files per
/// skeleton. Output bytes depend only on the bundle.
inline void write_dataset(const DatasetBundle& b, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());

    json files = json::object();
    json skeletons = json::array();
    auto emit = [&](const std::string& name, const std::string& bytes) {
        write_file(dir / name, bytes);
        files[name] = crc32_bytes(bytes);
    };

    for (const auto& s : b.skeletons) {
        const auto& recs = b.samples.at(s.id);
        emit("skeleton_" + std::to_string(s.id) + ".json", detail::skeleton_json(s).dump() + "\n");
        std::vector<const Tensor*> xs, ls, cs, es;
        for (const auto& r : recs) {
            xs.push_back(&r.x);
            ls.push_back(&r.l_true);
            cs.push_back(&r.c_true);
            es.push_back(&r.e_true);
        }
        emit(detail::sample_file("samples", s.id), encode_f32(xs));
        emit(detail::sample_file("confounders", s.id), encode_f32(ls));
        emit(detail::sample_file("ctrue", s.id), encode_f32(cs));
        emit(detail::sample_file("etrue", s.id), encode_f32(es));
        skeletons.push_back(
            {{"id", s.id}, {"n_nodes", s.n_nodes}, {"n_confounders", s.n_confounders}, {"n_samples", recs.size()}});
    }

    const auto& m = b.manifest;
    json manifest{{"format_version", kDatasetFormatVersion},
                  {"name", m.name},
                  {"seed", m.seed},
                  {"D", m.gen.dim},
                  {"preset", m.preset},
                  {"graph_model", m.graph_model},
                  {"generation", to_json(m.gen)},
                  {"splits", {{"train", m.train_ids}, {"valid", m.valid_ids}, {"test", m.test_ids}}},
                  {"skeletons", skeletons},
                  {"files", files}};
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

/// CRC32 of manifest.json, as 8 hex digits.
inline std::string manifest_hash(const fs::path& dir) { return hex32(crc32_bytes(read_file(dir / "manifest.json"))); }

inline DatasetBundle read_dataset(const fs::path& dir) {
    const fs::path mpath = dir / "manifest.json";
    if (!fs::exists(mpath)) throw DataError("no manifest.json in " + dir.string());
    json mj;
    try {
        mj = json::parse(read_file(mpath));
    } catch (const json::exception& e) {
        throw DataError("malformed manifest.json: " + std::string(e.what()));
    }

    try {
        const auto version = mj.at("format_version").get<std::string>();
        if (version != kDatasetFormatVersion)
            throw DataError("unsupported dataset format version \"" + version + "\" (expected \"" +
                            kDatasetFormatVersion + "\")");

        DatasetBundle b;
        auto& m = b.manifest;
        m.name = mj.at("name").get<std::string>();
        m.seed = mj.at("seed").get<std::uint64_t>();
        m.preset = mj.value("preset", "");
        m.graph_model = mj.value("graph_model", "erdos-renyi");
        overlay_json(m.gen, mj.at("generation"));
        if (mj.at("D").get<std::size_t>() != m.gen.dim) throw DataError("manifest D disagrees with generation.dim");
        m.train_ids = mj.at("splits").at("train").get<std::vector<std::size_t>>();
        m.valid_ids = mj.at("splits").at("valid").get<std::vector<std::size_t>>();
        m.test_ids = mj.at("splits").at("test").get<std::vector<std::size_t>>();
        const json& files = mj.at("files");
        const std::size_t dim = m.gen.dim;

        auto load = [&](const std::string& name) {
            if (!files.contains(name)) throw DataError("manifest lists no checksum for " + name);
            std::string bytes = read_file(dir / name);
            return bytes;
        };
        auto verify = [&](const std::string& name, const std::string& bytes) {
            if (crc32_bytes(bytes) != files.at(name).get<std::uint32_t>())
                throw DataError("checksum mismatch in " + name);
        };

        for (const auto& sj : mj.at("skeletons")) {
            const auto id = sj.at("id").get<std::size_t>();
            const auto n_nodes = sj.at("n_nodes").get<std::size_t>();
            const auto n_conf = sj.at("n_confounders").get<std::size_t>();
            const auto n = sj.at("n_samples").get<std::size_t>();
            if (id != b.skeletons.size()) throw DataError("skeleton ids must be dense and ordered");

            const std::string sname = "skeleton_" + std::to_string(id) + ".json";
            const std::string sbytes = load(sname);
            verify(sname, sbytes);
            const json spec = json::parse(sbytes);
            SkeletonSpec s;
            s.id = id;
            s.n_nodes = n_nodes;
            s.n_confounders = n_conf;
            s.noise_sigma = spec.at("noise_sigma").get<double>();
            auto a = spec.at("A").get<std::vector<double>>();
            auto bl = spec.at("B").get<std::vector<double>>();
            if (a.size() != n_nodes * n_nodes || bl.size() != n_nodes * n_conf)
                throw DataError("shape mismatch in " + sname);
            s.adjacency = Tensor({n_nodes, n_nodes}, std::move(a));
            s.loadings = Tensor({n_nodes, n_conf}, std::move(bl));
            s.confounder_parent = spec.at("confounder_parent").get<std::vector<std::int64_t>>();
            s.confounder_parent_weight = spec.at("confounder_parent_weight").get<std::vector<double>>();

            struct Block {
                const char* kind;
                std::size_t rows;
            };
            const Block blocks[] = {{"samples", n_nodes}, {"confounders", n_conf}, {"ctrue", n_nodes}, {"etrue", n_nodes}};
            std::vector<SampleRecord> recs(n);
            for (const auto& blk : blocks) {
                const std::string fname = detail::sample_file(blk.kind, id);
                const std::string bytes = load(fname);
                const std::size_t per = blk.rows * dim;
                if (bytes.size() != 4 * per * n)
                    throw DataError("shape mismatch in " + fname + ": " + std::to_string(bytes.size()) +
                                    " bytes, expected " + std::to_string(4 * per * n));
                verify(fname, bytes);
                for (std::size_t r = 0; r < n; ++r) {
                    Tensor t = decode_f32_block(bytes, 4 * per * r, blk.rows, dim);
                    const std::string kind = blk.kind;
                    if (kind == "samples") recs[r].x = std::move(t);
                    else if (kind == "confounders") recs[r].l_true = std::move(t);
                    else if (kind == "ctrue") recs[r].c_true = std::move(t);
                    else recs[r].e_true = std::move(t);
                }
            }
            b.skeletons.push_back(std::move(s));
            b.samples.push_back(std::move(recs));
        }

        // Split lists must be disjoint and refer to existing skeletons.
        std::vector<int> seen(b.skeletons.size(), 0);
        for (Split sp : {Split::train, Split::valid, Split::test})
            for (std::size_t id : m.split_ids(sp)) {
                if (id >= seen.size()) throw DataError("split refers to unknown skeleton " + std::to_string(id));
                if (seen[id]++) throw DataError("skeleton " + std::to_string(id) + " appears in more than one split");
            }
        return b;
    } catch (const json::exception& e) {
        throw DataError("malformed dataset metadata: " + std::string(e.what()));
    }
}

}  // namespace bicd
