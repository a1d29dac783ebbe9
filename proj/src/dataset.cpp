/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#include "scamap/dataset.hpp"

#include "scamap/error.hpp"
#include "scamap/rng.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

namespace scamap::data {

namespace fs = std::filesystem;
using nlohmann::json;

// The .f32/.u8 blobs are written as raw native buffers; the format contract
// says little-endian, so refuse to build where that would be wrong.
static_assert(std::endian::native == std::endian::little,
              "dataset blobs are little-endian; big-endian hosts need swapping");

namespace {

void write_file(const fs::path &path, const void *data, std::size_t bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error::data("cannot open " + path.string() + " for writing");
    out.write(static_cast<const char *>(data), static_cast<std::streamsize>(bytes));
    if (!out)
        throw Error::data("write failed for " + path.string());
}

std::vector<char> read_file(const fs::path &path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in)
        throw Error::data("missing dataset component: " + path.string());
    auto size = static_cast<std::size_t>(in.tellg());
    std::vector<char> buf(size);
    in.seekg(0);
    in.read(buf.data(), static_cast<std::streamsize>(size));
    if (!in)
        throw Error::data("read failed for " + path.string());
    return buf;
}

json load_json(const fs::path &path) {
    std::ifstream in(path);
    if (!in)
        throw Error::data("missing dataset component: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error &e) {
        throw Error::data("cannot parse " + path.string() + ": " + e.what());
    }
    return j;
}

} // namespace

json DatasetManifest::to_json() const {
    json j;
    j["format_version"] = format_version;
    j["n_traces"] = n_traces;
    j["height"] = height;
    j["width"] = width;
    j["modality"] = modality_name(modality);
    j["source"] = source;
    if (key)
        j["key_hex"] = aes::key_to_hex(*key);
    if (!config_hash.empty())
        j["config_hash"] = config_hash;
    return j;
}

DatasetManifest DatasetManifest::from_json(const json &j) {
    DatasetManifest m;
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kFormatVersion)
        throw Error::data("unsupported dataset format_version " +
                          std::to_string(m.format_version) + " (reader supports " +
                          std::to_string(kFormatVersion) + ")");
    m.n_traces = j.at("n_traces").get<int>();
    m.height = j.at("height").get<int>();
    m.width = j.at("width").get<int>();
    m.modality = modality_from_name(j.at("modality").get<std::string>());
    m.source = j.value("source", json{{"kind", "external"}});
    if (j.contains("key_hex"))
        m.key = aes::key_from_hex(j.at("key_hex").get<std::string>());
    m.config_hash = j.value("config_hash", std::string{});
    return m;
}

void Dataset::validate() const {
    const auto n = static_cast<std::size_t>(manifest.n_traces);
    if (manifest.n_traces <= 0 || manifest.height <= 0 || manifest.width <= 0)
        throw Error::data("dataset has non-positive shape");
    if (traces.size() != n * pixels_per_trace())
        throw Error::data("traces size mismatch: have " +
                          std::to_string(traces.size()) + " values, manifest implies " +
                          std::to_string(n * pixels_per_trace()));
    if (plaintexts.size() != n * 16)
        throw Error::data("plaintexts size mismatch");
    if (labels.size() != n * 16)
        throw Error::data("labels size mismatch");
    if (pois.size() != 16)
        throw Error::data("expected 16 POIs, got " + std::to_string(pois.size()));
    for (const auto &p : pois)
        if (p.row < 0 || p.row >= manifest.height || p.col < 0 || p.col >= manifest.width)
            throw Error::data("POI outside the grid");
}

void write_dataset(const Dataset &ds, const fs::path &dir) {
    ds.validate();
    fs::create_directories(dir);
    write_file(dir / "traces.f32", ds.traces.data(), ds.traces.size() * sizeof(float));
    write_file(dir / "plaintexts.u8", ds.plaintexts.data(), ds.plaintexts.size());
    write_file(dir / "labels.u8", ds.labels.data(), ds.labels.size());

    std::ostringstream pois;
    for (const auto &p : ds.pois)
        pois << p.row << " " << p.col << "\n";
    const std::string pois_text = pois.str();
    write_file(dir / "pois.txt", pois_text.data(), pois_text.size());

    // Manifest last: its presence marks a complete write.
    const std::string manifest = ds.manifest.to_json().dump(2) + "\n";
    write_file(dir / "manifest.json", manifest.data(), manifest.size());
}

Dataset read_dataset(const fs::path &dir, ReadReport *report) {
    Dataset ds;
    ds.manifest = DatasetManifest::from_json(load_json(dir / "manifest.json"));
    const auto n = static_cast<std::size_t>(ds.manifest.n_traces);

    auto traces_raw = read_file(dir / "traces.f32");
    const std::size_t expected = n * ds.pixels_per_trace() * sizeof(float);
    if (traces_raw.size() != expected)
        throw Error::data("traces.f32 shape mismatch: " +
                          std::to_string(traces_raw.size()) + " bytes, expected " +
                          std::to_string(expected));
    ds.traces.resize(n * ds.pixels_per_trace());
    std::memcpy(ds.traces.data(), traces_raw.data(), traces_raw.size());

    auto pt_raw = read_file(dir / "plaintexts.u8");
    if (pt_raw.size() != n * 16)
        throw Error::data("plaintexts.u8 shape mismatch");
    ds.plaintexts.assign(pt_raw.begin(), pt_raw.end());

    auto label_raw = read_file(dir / "labels.u8");
    if (label_raw.size() != n * 16)
        throw Error::data("labels.u8 shape mismatch");
    ds.labels.assign(label_raw.begin(), label_raw.end());

    {
        auto pois_raw = read_file(dir / "pois.txt");
        std::istringstream in(std::string(pois_raw.begin(), pois_raw.end()));
        PixelCoord p;
        while (in >> p.row >> p.col)
            ds.pois.push_back(p);
        if (ds.pois.size() != 16)
            throw Error::data("pois.txt must hold 16 'row col' lines, got " +
                              std::to_string(ds.pois.size()));
    }

    ds.validate();

    // Integrity check when the key is known: stored labels must be
    // recomputable. A mismatch is a warning, not an error, so datasets can
    // still be inspected.
    if (ds.manifest.key) {
        std::size_t mismatches = 0;
        for (std::size_t i = 0; i < n; ++i) {
            aes::PlaintextBytes pt;
            std::copy_n(ds.plaintext(i).begin(), 16, pt.begin());
            const auto expect = aes::first_round_labels(pt, *ds.manifest.key);
            for (int b = 0; b < 16; ++b)
                if (ds.label(i)[b] != expect[b])
                    ++mismatches;
        }
        if (mismatches > 0)
            std::cerr << "warning: " << dir.string() << ": " << mismatches
                      << " label bytes disagree with plaintexts + key\n";
        if (report)
            report->label_mismatches = mismatches;
    }
    return ds;
}

// -- DatasetWriter ------------------------------------------------------------

struct DatasetWriter::Impl {
    fs::path dir;
    DatasetManifest manifest;
    std::ofstream traces, plaintexts, labels;
    int written = 0;
    bool finished = false;
};

DatasetWriter::DatasetWriter(const fs::path &dir, const DatasetManifest &manifest,
                             const std::vector<PixelCoord> &pois)
    : impl_(std::make_unique<Impl>()) {
    impl_->dir = dir;
    impl_->manifest = manifest;
    fs::create_directories(dir);

    auto open = [](std::ofstream &f, const fs::path &p) {
        f.open(p, std::ios::binary | std::ios::trunc);
        if (!f)
            throw Error::data("cannot open " + p.string() + " for writing");
    };
    open(impl_->traces, dir / "traces.f32");
    open(impl_->plaintexts, dir / "plaintexts.u8");
    open(impl_->labels, dir / "labels.u8");

    if (pois.size() != 16)
        throw Error::data("expected 16 POIs");
    std::ostringstream text;
    for (const auto &p : pois)
        text << p.row << " " << p.col << "\n";
    const std::string s = text.str();
    write_file(dir / "pois.txt", s.data(), s.size());
}

DatasetWriter::~DatasetWriter() = default;

void DatasetWriter::append(std::span<const float> trace, const aes::PlaintextBytes &pt,
                           const aes::LabelBytes &labels) {
    const std::size_t pixels = static_cast<std::size_t>(impl_->manifest.height) *
                               impl_->manifest.width;
    if (trace.size() != pixels)
        throw Error::data("trace size mismatch in DatasetWriter::append");
    impl_->traces.write(reinterpret_cast<const char *>(trace.data()),
                        static_cast<std::streamsize>(trace.size() * sizeof(float)));
    impl_->plaintexts.write(reinterpret_cast<const char *>(pt.data()), 16);
    impl_->labels.write(reinterpret_cast<const char *>(labels.data()), 16);
    ++impl_->written;
}

void DatasetWriter::finish() {
    if (impl_->finished)
        return;
    if (impl_->written != impl_->manifest.n_traces)
        throw Error::data("DatasetWriter: wrote " + std::to_string(impl_->written) +
                          " traces, manifest says " +
                          std::to_string(impl_->manifest.n_traces));
    impl_->traces.close();
    impl_->plaintexts.close();
    impl_->labels.close();
    if (!impl_->traces || !impl_->plaintexts || !impl_->labels)
        throw Error::data("flush failed while finishing dataset " +
                          impl_->dir.string());
    const std::string manifest = impl_->manifest.to_json().dump(2) + "\n";
    write_file(impl_->dir / "manifest.json", manifest.data(), manifest.size());
    impl_->finished = true;
}

// -- Splits and permutations --------------------------------------------------

Split split_indices(int n, const SplitSpec &spec) {
    if (spec.n_train < 0 || spec.n_val < 0 || spec.n_test < 0)
        throw Error::config("split sizes must be non-negative");
    const long total =
        static_cast<long>(spec.n_train) + spec.n_val + spec.n_test;
    if (total > n)
        throw Error::config("split needs " + std::to_string(total) +
                            " traces but the dataset has " + std::to_string(n));

    SplitMix64 rng(derive_stream(spec.shuffle_seed, 0x5B117ULL));
    auto order = random_permutation(static_cast<std::uint32_t>(n), rng);

    Split s;
    auto it = order.begin();
    s.train.assign(it, it + spec.n_train);
    it += spec.n_train;
    s.val.assign(it, it + spec.n_val);
    it += spec.n_val;
    s.test.assign(it, it + spec.n_test);
    return s;
}

std::vector<std::uint32_t> test_permutation(int n_test, const PermutationStream &stream,
                                            int perm_index) {
    if (n_test < 1)
        throw Error::config("test_permutation needs n_test >= 1");
    SplitMix64 rng(derive_stream(stream.base_seed,
                                 0x9E12ULL + static_cast<std::uint64_t>(perm_index)));
    return random_permutation(static_cast<std::uint32_t>(n_test), rng);
}

} // namespace scamap::data
