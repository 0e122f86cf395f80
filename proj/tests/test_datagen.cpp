#include <gtest/gtest.h>

#include <filesystem>
#include <functional>
#include <map>

#include "bicd/dataset_io.hpp"
#include "test_util.hpp"

using namespace bicd;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("bicd_test_" + name);
    fs::remove_all(p);
    return p;
}

GenConfig small_config() {
    GenConfig c;
    c.n_nodes = 6;
    c.n_confounders = 2;
    c.expected_degree = 2;
    c.samples_per_skeleton = 4;
    c.train_skeletons = 3;
    c.valid_skeletons = 2;
    c.test_skeletons = 2;
    c.dim = 2;
    return c;
}

// Node-by-node structural equations, evaluated by memoised recursion on parents.
Tensor recursive_oracle(const SkeletonSpec& s, const SampleRecord& r) {
    const std::size_t n = s.n_nodes, d = r.x.cols();
    Tensor x = Tensor::matrix(n, d);
    std::vector<bool> done(n, false);
    std::function<void(std::size_t)> eval = [&](std::size_t j) {
        if (done[j]) return;
        for (std::size_t dd = 0; dd < d; ++dd) {
            double v = r.e_true(j, dd);
            for (std::size_t k = 0; k < s.n_confounders; ++k) v += s.loadings(j, k) * r.l_true(k, dd);
            x(j, dd) = v;
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (s.adjacency(j, i) == 0.0) continue;
            eval(i);
            for (std::size_t dd = 0; dd < d; ++dd) x(j, dd) += s.adjacency(j, i) * x(i, dd);
        }
        done[j] = true;
    };
    for (std::size_t j = n; j-- > 0;) eval(j);
    return x;
}

}  // namespace

TEST(SampleSkeleton, TwoNodesForcedEdge) {
    GenConfig c;
    c.n_nodes = 2;
    c.expected_degree = 1;  // edge probability 1 / (N - 1) = 1
    RngStream rng(1, 0);
    for (int t = 0; t < 10; ++t) {
        auto s = sample_skeleton(c, rng);
        EXPECT_EQ(s.edge_count(), 1u);
        EXPECT_NE(s.adjacency(1, 0), 0.0);
        EXPECT_GE(std::abs(s.adjacency(1, 0)), 0.5);
        EXPECT_LE(std::abs(s.adjacency(1, 0)), 1.5);
    }
}

TEST(SampleSkeleton, DegenerateConfigRejected) {
    GenConfig c;
    c.n_nodes = 1;
    RngStream rng(1, 0);
    EXPECT_THROW(sample_skeleton(c, rng), ConfigError);
    c.n_nodes = 5;
    c.expected_degree = 5;
    EXPECT_THROW(sample_skeleton(c, rng), ConfigError);
    c.expected_degree = 2;
    c.pervasiveness = 0.0;
    EXPECT_THROW(sample_skeleton(c, rng), ConfigError);
}

TEST(SampleSkeleton, StrictlyLowerTriangular) {
    RngStream rng(2, 0);
    GenConfig c;
    c.n_nodes = 30;
    for (int t = 0; t < 50; ++t) {
        auto s = sample_skeleton(c, rng);
        for (std::size_t i = 0; i < 30; ++i)
            for (std::size_t j = i; j < 30; ++j) EXPECT_EQ(s.adjacency(i, j), 0.0);
    }
}

TEST(SampleSkeleton, NeighbourhoodSizeCalibration) {
    GenConfig c;
    c.n_nodes = 20;
    c.expected_degree = 5;
    RngStream rng(3, 0);
    double total = 0.0;
    const int reps = 10000;
    for (int t = 0; t < reps; ++t) total += 2.0 * static_cast<double>(sample_skeleton(c, rng).edge_count()) / 20.0;
    EXPECT_NEAR(total / reps, 5.0, 0.1);
}

TEST(SampleSkeleton, PervasivenessCalibration) {
    GenConfig c;
    c.n_nodes = 50;
    c.n_confounders = 1;
    c.pervasiveness = 0.7;
    RngStream rng(4, 0);
    double hits = 0.0, cells = 0.0;
    for (int t = 0; t < 10000; ++t) {
        auto s = sample_skeleton(c, rng);
        for (double v : s.loadings.storage()) hits += v != 0.0;
        cells += 50.0;
    }
    const double p = hits / cells;
    EXPECT_NEAR(p, 0.7, 0.02);
    // Within 3 standard errors as well.
    EXPECT_LT(std::abs(p - 0.7), 3.0 * std::sqrt(0.7 * 0.3 / cells));
}

TEST(SampleRecords, NoSourcesMeansZeroData) {
    GenConfig c = small_config();
    c.n_confounders = 0;
    c.noise_sigma = 0.0;
    RngStream rng(5, 0);
    auto s = sample_skeleton(c, rng);
    for (const auto& r : sample_records(s, 3, 2, rng)) {
        EXPECT_EQ(r.x.max_abs(), 0.0);
        EXPECT_EQ(r.l_true.size(), 0u);
    }
}

TEST(SampleRecords, ZeroNoiseMeansAllSignalFromConfounders) {
    GenConfig c = small_config();
    c.noise_sigma = 0.0;
    RngStream rng(6, 0);
    auto s = sample_skeleton(c, rng);
    for (const auto& r : sample_records(s, 5, 2, rng)) EXPECT_LT(max_abs_diff(r.x, r.c_true), 1e-9);
}

TEST(SampleRecords, MatchesRecursiveOracleAndDenseSolve) {
    GenConfig c = small_config();
    RngStream rng(7, 0);
    for (int t = 0; t < 20; ++t) {
        auto s = sample_skeleton(c, rng);
        Tensor ia = Tensor::identity(6);
        for (std::size_t i = 0; i < 36; ++i) ia[i] -= s.adjacency[i];
        const Tensor inv = bicd::testing::dense_inverse(ia);
        for (const auto& r : sample_records(s, 3, 2, rng)) {
            EXPECT_LT(max_abs_diff(r.x, recursive_oracle(s, r)), 1e-10);
            EXPECT_LT(max_abs_diff(r.c_true, matmul_plain(inv, matmul_plain(s.loadings, r.l_true))), 1e-10);
            EXPECT_LT(reconstruction_residual(s, r), 1e-9);
        }
    }
}

TEST(SampleRecords, EndogenousConfoundersKeepIdentity) {
    GenConfig c = small_config();
    c.endogenous_fraction = 1.0;
    RngStream rng(8, 0);
    for (int t = 0; t < 20; ++t) {
        auto s = sample_skeleton(c, rng);
        for (std::size_t k = 0; k < 2; ++k) {
            ASSERT_GE(s.confounder_parent[k], 0);
            for (std::size_t j = 0; j <= static_cast<std::size_t>(s.confounder_parent[k]); ++j)
                EXPECT_EQ(s.loadings(j, k), 0.0);
        }
        for (const auto& r : sample_records(s, 3, 2, rng)) EXPECT_LT(reconstruction_residual(s, r), 1e-9);
    }
}

TEST(Presets, TableRows) {
    auto c1 = preset_config("syn1");
    EXPECT_EQ(c1.samples_per_skeleton, 5u);
    EXPECT_EQ(c1.n_confounders, 1u);
    EXPECT_EQ(c1.n_nodes, 50u);
    EXPECT_DOUBLE_EQ(c1.pervasiveness, 0.7);
    EXPECT_EQ(c1.train_skeletons, 450u);
    EXPECT_EQ(c1.valid_skeletons, 100u);
    EXPECT_EQ(c1.test_skeletons, 200u);

    auto c7 = preset_config("syn7");
    EXPECT_EQ(c7.n_nodes, 100u);
    EXPECT_EQ(c7.n_confounders, 1u);
    EXPECT_EQ(c7.samples_per_skeleton, 50u);
    EXPECT_DOUBLE_EQ(c7.pervasiveness, 0.7);

    auto c5 = preset_config("syn5");
    EXPECT_EQ(c5.n_confounders, 10u);
    EXPECT_EQ(c5.n_nodes, 50u);
    EXPECT_EQ(c5.samples_per_skeleton, 50u);

    EXPECT_DOUBLE_EQ(preset_config("syn8").pervasiveness, 0.1);
    EXPECT_DOUBLE_EQ(preset_config("syn9").pervasiveness, 0.4);
    EXPECT_EQ(preset_config("syn6").n_nodes, 20u);
    EXPECT_EQ(preset_config("syn4").n_confounders, 5u);
    EXPECT_EQ(preset_config("syn2").samples_per_skeleton, 10u);
}

TEST(Presets, ScaleShrinksOnlySkeletonCounts) {
    auto full = preset_config("syn3");
    auto c = preset_config("syn3", 0.1);
    EXPECT_EQ(c.train_skeletons, 45u);
    EXPECT_EQ(c.valid_skeletons, 10u);
    EXPECT_EQ(c.test_skeletons, 20u);
    EXPECT_EQ(c.samples_per_skeleton, full.samples_per_skeleton);
    EXPECT_EQ(c.n_nodes, full.n_nodes);
    EXPECT_EQ(c.n_confounders, full.n_confounders);
}

TEST(Presets, UnknownNameListsValidOnes) {
    try {
        preset_config("syn10");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("syn1, syn2"), std::string::npos);
    }
}

TEST(GenerateDataset, SplitsDisjointAndCountsMatch) {
    auto b = build_preset("syn6", 11, 0.02);
    const auto& m = b.manifest;
    EXPECT_EQ(m.train_ids.size(), 9u);
    EXPECT_EQ(m.valid_ids.size(), 2u);
    EXPECT_EQ(m.test_ids.size(), 4u);
    std::map<std::size_t, int> seen;
    for (auto sp : {Split::train, Split::valid, Split::test})
        for (auto id : m.split_ids(sp)) EXPECT_EQ(seen[id]++, 0);
    for (const auto& recs : b.samples) EXPECT_EQ(recs.size(), 50u);
}

TEST(GenerateDataset, OrderIndependentStreams) {
    GenConfig c = small_config();
    auto b = generate_dataset(c, 99, "x");
    // Skeleton 4 regenerated alone from its own stream.
    RngStream rng(99, 4);
    auto s = sample_skeleton(c, rng, 4);
    auto recs = sample_records(s, c.samples_per_skeleton, c.dim, rng);
    EXPECT_EQ(s.adjacency, b.skeletons[4].adjacency);
    EXPECT_EQ(recs[2].x, b.samples[4][2].x);
}

TEST(DatasetIo, RoundTripIsBitIdentical) {
    auto b = generate_dataset(small_config(), 5, "rt");
    auto dir = temp_dir("rt");
    write_dataset(b, dir);
    auto r = read_dataset(dir);
    auto expect = as_stored(b);
    ASSERT_EQ(r.skeletons.size(), expect.skeletons.size());
    for (std::size_t m = 0; m < r.skeletons.size(); ++m) {
        EXPECT_EQ(r.skeletons[m].adjacency, expect.skeletons[m].adjacency);
        EXPECT_EQ(r.skeletons[m].loadings, expect.skeletons[m].loadings);
        for (std::size_t s = 0; s < r.samples[m].size(); ++s) {
            EXPECT_EQ(r.samples[m][s].x, expect.samples[m][s].x);
            EXPECT_EQ(r.samples[m][s].l_true, expect.samples[m][s].l_true);
            EXPECT_EQ(r.samples[m][s].c_true, expect.samples[m][s].c_true);
            EXPECT_EQ(r.samples[m][s].e_true, expect.samples[m][s].e_true);
        }
    }
    EXPECT_EQ(r.manifest.train_ids, b.manifest.train_ids);
    EXPECT_EQ(r.manifest.gen.n_nodes, 6u);

    // Rewriting what was read reproduces the same bytes.
    auto dir2 = temp_dir("rt2");
    write_dataset(r, dir2);
    for (const auto& entry : fs::directory_iterator(dir))
        EXPECT_EQ(read_file(entry.path()), read_file(dir2 / entry.path().filename())) << entry.path();
}

TEST(DatasetIo, SameSeedSameBytes) {
    auto d1 = temp_dir("seed1"), d2 = temp_dir("seed2");
    write_dataset(generate_dataset(small_config(), 8, "s"), d1);
    write_dataset(generate_dataset(small_config(), 8, "s"), d2);
    std::size_t n = 0;
    for (const auto& entry : fs::directory_iterator(d1)) {
        EXPECT_EQ(read_file(entry.path()), read_file(d2 / entry.path().filename()));
        ++n;
    }
    EXPECT_EQ(n, 1u + 7u * 5u);
    EXPECT_EQ(manifest_hash(d1), manifest_hash(d2));
}

TEST(DatasetIo, TruncatedFileIsShapeMismatch) {
    auto dir = temp_dir("trunc");
    write_dataset(generate_dataset(small_config(), 5, "t"), dir);
    const auto p = dir / "samples_2.f32";
    auto bytes = read_file(p);
    write_file(p, bytes.substr(0, bytes.size() - 4));
    try {
        read_dataset(dir);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("shape mismatch in samples_2.f32"), std::string::npos);
    }
}

TEST(DatasetIo, CorruptedFileIsChecksumMismatch) {
    auto dir = temp_dir("crc");
    write_dataset(generate_dataset(small_config(), 5, "t"), dir);
    const auto p = dir / "ctrue_1.f32";
    auto bytes = read_file(p);
    bytes[3] ^= 0x40;
    write_file(p, bytes);
    try {
        read_dataset(dir);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("checksum mismatch in ctrue_1.f32"), std::string::npos);
    }
}

TEST(DatasetIo, UnsupportedVersion) {
    auto dir = temp_dir("ver");
    write_dataset(generate_dataset(small_config(), 5, "t"), dir);
    auto j = json::parse(read_file(dir / "manifest.json"));
    j["format_version"] = "2";
    write_file(dir / "manifest.json", j.dump());
    try {
        read_dataset(dir);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("unsupported dataset format version \"2\""), std::string::npos);
    }
    EXPECT_THROW(read_dataset(temp_dir("missing")), DataError);
}
