/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#include "scamap/keyrank.hpp"

#include "scamap/error.hpp"
#include "scamap/parallel.hpp"
#include "scamap/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace scamap::rank {

using nlohmann::json;

nn::Tensor<double> floored_log_probs(const nn::Tensor<float> &probs, double floor) {
    if (probs.rank() != 2 || probs.dim(1) != 256)
        throw Error::data("expected an [N,256] probability matrix, got " +
                          nn::shape_string(probs.shape));
    const int N = probs.dim(0);
    nn::Tensor<double> logp({N, 256});
    for (int i = 0; i < N; ++i) {
        const float *p = probs.data() + static_cast<std::size_t>(i) * 256;
        double *lp = logp.data() + static_cast<std::size_t>(i) * 256;
        double sum = 0;
        for (int c = 0; c < 256; ++c) {
            if (p[c] < 0)
                throw Error::data("negative probability in row " + std::to_string(i));
            sum += p[c];
            lp[c] = std::log(std::max(static_cast<double>(p[c]), floor));
        }
        if (std::abs(sum - 1.0) > 1e-4)
            throw Error::data("probability row " + std::to_string(i) +
                              " sums to " + std::to_string(sum));
    }
    return logp;
}

RankCurve rank_curve_logp(const nn::Tensor<double> &logp,
                          std::span<const std::uint8_t> pt_bytes, int byte_index,
                          std::uint8_t true_key_byte,
                          std::span<const std::uint32_t> perm) {
    const int N = logp.dim(0);
    if (pt_bytes.size() != static_cast<std::size_t>(N))
        throw Error::data("plaintext byte count does not match probability rows");
    for (auto j : perm)
        if (j >= static_cast<std::uint32_t>(N))
            throw Error::data("permutation index out of range");

    RankCurve curve;
    curve.byte_index = byte_index;
    curve.ranks.reserve(perm.size());

    std::array<double, 256> L{};
    for (auto j : perm) {
        const double *lp = logp.data() + static_cast<std::size_t>(j) * 256;
        const std::uint8_t pt = pt_bytes[j];
        for (int k = 0; k < 256; ++k)
            L[static_cast<std::size_t>(k)] +=
                lp[aes::sbox(static_cast<std::uint8_t>(pt ^ k))];
        const double Lt = L[true_key_byte];
        int r = 0;
        for (int k = 0; k < 256; ++k)
            if (L[static_cast<std::size_t>(k)] > Lt)
                ++r;
        curve.ranks.push_back(r);
    }

    if (!perm.empty()) {
        const auto [lo, hi] = std::minmax_element(L.begin(), L.end());
        curve.tie_degenerate = *lo == *hi;
    }
    return curve;
}

RankCurve rank_curve(const nn::Tensor<float> &probs, std::span<const std::uint8_t> pt_bytes,
                     int byte_index, std::uint8_t true_key_byte,
                     std::span<const std::uint32_t> perm) {
    return rank_curve_logp(floored_log_probs(probs), pt_bytes, byte_index, true_key_byte,
                           perm);
}

std::optional<int> mtd(const RankCurve &curve) {
    const auto &r = curve.ranks;
    if (r.empty() || r.back() != 0)
        return std::nullopt;
    int last_nonzero = 0; // 1-based; 0 means the curve is zero throughout
    for (int i = static_cast<int>(r.size()); i >= 1; --i)
        if (r[static_cast<std::size_t>(i - 1)] != 0) {
            last_nonzero = i;
            break;
        }
    return last_nonzero + 1;
}

MtdResult aggregate_curves(const std::array<std::vector<RankCurve>, 16> &curves,
                           int n_test) {
    MtdResult out;
    out.n_test = n_test;

    bool any_usable = false;
    bool any_na_byte = false;
    double rank_total = 0;
    std::size_t rank_count = 0;
    double mtd_total = 0;
    double worst = 0;

    for (int b = 0; b < 16; ++b) {
        auto &be = out.bytes[static_cast<std::size_t>(b)];
        const auto &bc = curves[static_cast<std::size_t>(b)];
        be.n_permutations = static_cast<int>(bc.size());
        if (bc.empty()) {
            any_na_byte = true;
            continue;
        }
        any_usable = true;
        out.n_perms = std::max(out.n_perms, be.n_permutations);

        auto &mean_curve = out.mean_rank_curve[static_cast<std::size_t>(b)];
        mean_curve.assign(static_cast<std::size_t>(n_test), 0.0);
        double mtd_sum = 0;
        int mtd_n = 0;
        double final_sum = 0;
        for (const auto &c : bc) {
            if (static_cast<int>(c.ranks.size()) != n_test)
                throw Error::internal("rank curve length does not match n_test");
            if (auto m = mtd(c)) {
                mtd_sum += *m;
                ++mtd_n;
            } else {
                ++be.na_permutations;
            }
            final_sum += c.ranks.back();
            be.tie_degenerate = be.tie_degenerate || c.tie_degenerate;
            for (int i = 0; i < n_test; ++i)
                mean_curve[static_cast<std::size_t>(i)] += c.ranks[static_cast<std::size_t>(i)];
        }
        for (auto &v : mean_curve)
            v /= static_cast<double>(bc.size());
        be.mean_final_rank = final_sum / static_cast<double>(bc.size());
        rank_total += final_sum;
        rank_count += bc.size();

        if (mtd_n > 0) {
            be.mean_mtd = mtd_sum / mtd_n;
            mtd_total += *be.mean_mtd;
            worst = std::max(worst, *be.mean_mtd);
        } else {
            any_na_byte = true;
        }
    }

    if (!any_usable)
        throw Error::evaluation("no byte produced a usable rank curve");

    out.average_rank = rank_total / static_cast<double>(rank_count);
    if (!any_na_byte) {
        out.average_mtd = mtd_total / 16.0;
        out.worst_mtd = worst;
    }
    return out;
}

MtdResult evaluate(const std::array<const nn::Tensor<float> *, 16> &probs,
                   std::span<const std::uint8_t> plaintexts, const aes::KeyBytes &key,
                   int n_test, const data::PermutationStream &perms) {
    if (n_test < 1)
        throw Error::config("evaluate needs n_test >= 1");
    if (plaintexts.size() != static_cast<std::size_t>(n_test) * 16)
        throw Error::data("plaintext matrix does not match n_test");

    // Permutations are shared across bytes: permutation p reorders the same
    // trace set for every byte's accumulation.
    std::vector<std::vector<std::uint32_t>> orders;
    orders.reserve(static_cast<std::size_t>(perms.n_perms));
    for (int p = 0; p < perms.n_perms; ++p)
        orders.push_back(data::test_permutation(n_test, perms, p));

    std::array<std::vector<RankCurve>, 16> curves;
    for (int b = 0; b < 16; ++b) {
        if (!probs[static_cast<std::size_t>(b)])
            continue;
        const auto logp = floored_log_probs(*probs[static_cast<std::size_t>(b)]);
        std::vector<std::uint8_t> pt_col(static_cast<std::size_t>(n_test));
        for (int i = 0; i < n_test; ++i)
            pt_col[static_cast<std::size_t>(i)] =
                plaintexts[static_cast<std::size_t>(i) * 16 + static_cast<std::size_t>(b)];

        auto &bc = curves[static_cast<std::size_t>(b)];
        bc.resize(orders.size());
        parallel_for(0, static_cast<std::int64_t>(orders.size()), [&](std::int64_t p) {
            bc[static_cast<std::size_t>(p)] =
                rank_curve_logp(logp, pt_col, b, key[static_cast<std::size_t>(b)],
                                orders[static_cast<std::size_t>(p)]);
        });
    }

    auto out = aggregate_curves(curves, n_test);
    out.n_perms = perms.n_perms;
    return out;
}

// -- Reports ------------------------------------------------------------------

namespace {

json opt_to_json(const std::optional<double> &v) {
    if (v)
        return *v;
    return nullptr;
}

std::optional<double> opt_from_json(const json &j) {
    if (j.is_null())
        return std::nullopt;
    return j.get<double>();
}

} // namespace

json report_to_json(const RankReport &report) {
    const auto &r = report.result;
    json bytes = json::array();
    for (int b = 0; b < 16; ++b) {
        const auto &be = r.bytes[static_cast<std::size_t>(b)];
        bytes.push_back({{"byte", b},
                         {"mean_mtd", opt_to_json(be.mean_mtd)},
                         {"na_permutations", be.na_permutations},
                         {"n_permutations", be.n_permutations},
                         {"mean_final_rank", be.mean_final_rank},
                         {"tie_degenerate", be.tie_degenerate}});
    }
    return {{"format_version", 1},
            {"method", report.method},
            {"config_hash", report.config_hash},
            {"context", report.context},
            {"n_perms", r.n_perms},
            {"n_test", r.n_test},
            {"aggregate",
             {{"average_mtd", opt_to_json(r.average_mtd)},
              {"worst_mtd", opt_to_json(r.worst_mtd)},
              {"average_rank", r.average_rank}}},
            {"bytes", bytes}};
}

RankReport report_from_json(const json &j) {
    if (j.at("format_version").get<int>() != 1)
        throw Error::data("unsupported report format_version");
    RankReport rep;
    rep.method = j.at("method").get<std::string>();
    rep.config_hash = j.value("config_hash", std::string{});
    rep.context = j.value("context", json{});
    rep.result.n_perms = j.at("n_perms").get<int>();
    rep.result.n_test = j.at("n_test").get<int>();
    const auto &agg = j.at("aggregate");
    rep.result.average_mtd = opt_from_json(agg.at("average_mtd"));
    rep.result.worst_mtd = opt_from_json(agg.at("worst_mtd"));
    rep.result.average_rank = agg.at("average_rank").get<double>();
    for (const auto &bj : j.at("bytes")) {
        const int b = bj.at("byte").get<int>();
        if (b < 0 || b > 15)
            throw Error::data("report byte index out of range");
        auto &be = rep.result.bytes[static_cast<std::size_t>(b)];
        be.mean_mtd = opt_from_json(bj.at("mean_mtd"));
        be.na_permutations = bj.at("na_permutations").get<int>();
        be.n_permutations = bj.at("n_permutations").get<int>();
        be.mean_final_rank = bj.at("mean_final_rank").get<double>();
        be.tie_degenerate = bj.at("tie_degenerate").get<bool>();
    }
    return rep;
}

void write_report(const std::filesystem::path &dir, const RankReport &report) {
    std::filesystem::create_directories(dir / "curves");
    {
        std::ofstream out(dir / "report.json", std::ios::trunc);
        if (!out)
            throw Error::data("cannot open " + (dir / "report.json").string());
        out << report_to_json(report).dump(2) << "\n";
        if (!out)
            throw Error::data("write failed for " + (dir / "report.json").string());
    }
    for (int b = 0; b < 16; ++b) {
        const auto &curve = report.result.mean_rank_curve[static_cast<std::size_t>(b)];
        if (curve.empty())
            continue;
        char name[32];
        std::snprintf(name, sizeof name, "byte_%02d.csv", b);
        std::ofstream out(dir / "curves" / name, std::ios::trunc);
        if (!out)
            throw Error::data("cannot open curve file for byte " + std::to_string(b));
        out << "i,mean_rank\n";
        for (std::size_t i = 0; i < curve.size(); ++i) {
            char line[64];
            std::snprintf(line, sizeof line, "%zu,%.6g\n", i + 1, curve[i]);
            out << line;
        }
        if (!out)
            throw Error::data("write failed for curve file of byte " + std::to_string(b));
    }
}

RankReport read_report(const std::filesystem::path &dir) {
    std::ifstream in(dir / "report.json");
    if (!in)
        throw Error::data("missing report component: " + (dir / "report.json").string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error &e) {
        throw Error::data("cannot parse " + (dir / "report.json").string() + ": " + e.what());
    }
    return report_from_json(j);
}

} // namespace scamap::rank
