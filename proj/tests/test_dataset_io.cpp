/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#include "scamap/dataset.hpp"
#include "scamap/error.hpp"
#include "scamap/leaksim.hpp"
#include "support/test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

using namespace scamap;

namespace {

sim::SimConfig small_config() {
    sim::SimConfig cfg;
    cfg.grid_size = 8;
    cfg.n_traces = 12;
    cfg.poi_coords.clear();
    cfg.poi_coords.reserve(16);
    for (int b = 0; b < 16; ++b)
        cfg.poi_coords.push_back({b / 4, b % 4 + 2});
    cfg.noise_std_power = 0.1;
    cfg.rng_seed = 5;
    return cfg;
}

void write_via_streamer(const data::Dataset &ds, const std::filesystem::path &dir) {
    data::DatasetWriter writer(dir, ds.manifest, ds.pois);
    for (int i = 0; i < ds.n_traces(); ++i) {
        aes::PlaintextBytes pt;
        aes::LabelBytes lb;
        std::copy_n(ds.plaintext(static_cast<std::size_t>(i)).begin(), 16, pt.begin());
        std::copy_n(ds.label(static_cast<std::size_t>(i)).begin(), 16, lb.begin());
        writer.append(ds.trace(static_cast<std::size_t>(i)), pt, lb);
    }
    writer.finish();
}

} // namespace

TEST_CASE("dataset round trip is byte-identical") {
    auto ds = testutil::make_dataset(small_config());
    testutil::TempDir tmp("scamap-ds");
    const auto dir1 = tmp.path() / "a";
    const auto dir2 = tmp.path() / "b";

    data::write_dataset(ds, dir1);
    auto loaded = data::read_dataset(dir1);
    CHECK(loaded.traces == ds.traces);
    CHECK(loaded.plaintexts == ds.plaintexts);
    CHECK(loaded.labels == ds.labels);
    CHECK(loaded.pois == ds.pois);
    CHECK(loaded.manifest.modality == ds.manifest.modality);
    CHECK(loaded.manifest.key == ds.manifest.key);

    data::write_dataset(loaded, dir2);
    for (const char *f : {"manifest.json", "traces.f32", "plaintexts.u8", "labels.u8",
                          "pois.txt"})
        CHECK_MESSAGE(testutil::same_bytes(dir1 / f, dir2 / f), f);
}

TEST_CASE("streaming writer produces the same bytes as the one-shot writer") {
    auto ds = testutil::make_dataset(small_config());
    testutil::TempDir tmp("scamap-ds");
    const auto dir1 = tmp.path() / "oneshot";
    const auto dir2 = tmp.path() / "streamed";
    data::write_dataset(ds, dir1);
    write_via_streamer(ds, dir2);
    for (const char *f : {"traces.f32", "plaintexts.u8", "labels.u8", "pois.txt"})
        CHECK_MESSAGE(testutil::same_bytes(dir1 / f, dir2 / f), f);
}

TEST_CASE("writer rejects a trace count that differs from the manifest") {
    auto ds = testutil::make_dataset(small_config());
    testutil::TempDir tmp("scamap-ds");
    data::DatasetWriter writer(tmp.path() / "short", ds.manifest, ds.pois);
    aes::PlaintextBytes pt{};
    aes::LabelBytes lb{};
    writer.append(ds.trace(0), pt, lb);
    try {
        writer.finish();
        FAIL("expected a throw");
    } catch (const Error &e) {
        CHECK(e.kind() == ErrorKind::Data);
    }
}

TEST_CASE("an unfinished dataset directory does not read back") {
    auto ds = testutil::make_dataset(small_config());
    testutil::TempDir tmp("scamap-ds");
    const auto dir = tmp.path() / "partial";
    {
        data::DatasetWriter writer(dir, ds.manifest, ds.pois);
        aes::PlaintextBytes pt{};
        aes::LabelBytes lb{};
        writer.append(ds.trace(0), pt, lb);
        // no finish(): manifest.json must be absent
    }
    CHECK(!std::filesystem::exists(dir / "manifest.json"));
    CHECK_THROWS_AS(data::read_dataset(dir), Error);
}

TEST_CASE("corrupted components map to data errors") {
    auto ds = testutil::make_dataset(small_config());
    testutil::TempDir tmp("scamap-ds");
    const auto dir = tmp.path() / "ds";
    data::write_dataset(ds, dir);

    auto expect_data_error = [&] {
        try {
            data::read_dataset(dir);
            FAIL_CHECK("expected a throw");
        } catch (const Error &e) {
            CHECK(e.kind() == ErrorKind::Data);
        }
    };

    SUBCASE("truncated traces") {
        std::filesystem::resize_file(dir / "traces.f32", 10);
        expect_data_error();
    }
    SUBCASE("missing plaintexts") {
        std::filesystem::remove(dir / "plaintexts.u8");
        expect_data_error();
    }
    SUBCASE("unsupported format version") {
        auto j = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
        j["format_version"] = 99;
        std::ofstream(dir / "manifest.json") << j.dump();
        expect_data_error();
    }
    SUBCASE("malformed manifest json") {
        std::ofstream(dir / "manifest.json") << "{not json";
        expect_data_error();
    }
    SUBCASE("wrong poi line count") {
        std::ofstream(dir / "pois.txt") << "1 2\n3 4\n";
        expect_data_error();
    }
}

TEST_CASE("label mismatches are counted, not fatal") {
    auto ds = testutil::make_dataset(small_config());
    testutil::TempDir tmp("scamap-ds");
    const auto dir = tmp.path() / "ds";
    data::write_dataset(ds, dir);

    // Flip two label bytes on disk.
    std::fstream f(dir / "labels.u8", std::ios::in | std::ios::out | std::ios::binary);
    for (std::streamoff off : {0, 20}) {
        f.seekg(off);
        char c;
        f.get(c);
        f.seekp(off);
        f.put(static_cast<char>(c ^ 0x01));
    }
    f.close();

    data::ReadReport report;
    auto loaded = data::read_dataset(dir, &report);
    CHECK(report.label_mismatches == 2);
    CHECK(loaded.n_traces() == ds.n_traces());
}

TEST_CASE("manifest without a key skips label checking") {
    auto ds = testutil::make_dataset(small_config());
    ds.manifest.key.reset();
    testutil::TempDir tmp("scamap-ds");
    const auto dir = tmp.path() / "ds";
    data::write_dataset(ds, dir);

    std::fstream f(dir / "labels.u8", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put(static_cast<char>(0x7F));
    f.close();

    data::ReadReport report;
    data::read_dataset(dir, &report);
    CHECK(report.label_mismatches == 0);
}

TEST_CASE("dataset validate rejects inconsistent shapes") {
    auto ds = testutil::make_dataset(small_config());
    auto broken = ds;
    broken.traces.pop_back();
    CHECK_THROWS_AS(broken.validate(), Error);

    broken = ds;
    broken.pois.pop_back();
    CHECK_THROWS_AS(broken.validate(), Error);

    broken = ds;
    broken.labels.resize(broken.labels.size() - 16);
    CHECK_THROWS_AS(broken.validate(), Error);
}

TEST_CASE("split indices are disjoint, sized, and seed-deterministic") {
    data::SplitSpec spec;
    spec.n_train = 50;
    spec.n_val = 20;
    spec.n_test = 25;
    spec.shuffle_seed = 77;

    const auto s = data::split_indices(100, spec);
    CHECK(s.train.size() == 50);
    CHECK(s.val.size() == 20);
    CHECK(s.test.size() == 25);

    std::set<std::uint32_t> all;
    for (const auto *part : {&s.train, &s.val, &s.test})
        for (auto i : *part) {
            CHECK(i < 100u);
            CHECK(all.insert(i).second); // no overlap anywhere
        }
    CHECK(all.size() == 95);

    const auto again = data::split_indices(100, spec);
    CHECK(again.train == s.train);
    CHECK(again.val == s.val);
    CHECK(again.test == s.test);

    spec.shuffle_seed = 78;
    CHECK(data::split_indices(100, spec).train != s.train);

    spec.shuffle_seed = 77;
    spec.n_test = 31; // 50 + 20 + 31 > 100
    CHECK_THROWS_AS(data::split_indices(100, spec), Error);
}

TEST_CASE("test permutations depend only on (seed, index)") {
    data::PermutationStream stream;
    CHECK(stream.n_perms == 100); // protocol default
    stream.base_seed = 9;

    const auto p0 = data::test_permutation(40, stream, 0);
    const auto p1 = data::test_permutation(40, stream, 1);
    CHECK(p0.size() == 40);
    CHECK(p0 != p1);
    CHECK(data::test_permutation(40, stream, 0) == p0);

    auto sorted = p0;
    std::sort(sorted.begin(), sorted.end());
    for (std::uint32_t i = 0; i < 40; ++i)
        CHECK(sorted[i] == i);

    data::PermutationStream other;
    other.base_seed = 10;
    CHECK(data::test_permutation(40, other, 0) != p0);
}
