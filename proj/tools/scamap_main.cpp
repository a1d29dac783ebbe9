/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

// Command-line front end. One workspace directory per experiment:
//
//   workspace/
//     dataset/        simulate
//     features/       select-features
//     models/<tag>/   train
//     eval/<tag>/     evaluate (and eval/cpa/ for the cpa command)
//     report/         report
//
// Every artifact records the hash of the config that produced it, so a
// rerun with the same config is byte-identical and a mismatch is visible.

#include <CLI11.hpp>

#include "scamap/attack.hpp"
#include "scamap/config.hpp"
#include "scamap/dataset.hpp"
#include "scamap/error.hpp"
#include "scamap/keyrank.hpp"
#include "scamap/leaksim.hpp"
#include "scamap/parallel.hpp"
#include "scamap/preprocess.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace scamap;

namespace {

struct TrainOverrides {
    std::optional<std::string> model;
    int itl = -1; // -1 keeps the config value; 0/1 override
    std::optional<int> itl_iterations;
    std::vector<int> byte_order;
    std::string tag;
};

config::ExperimentConfig load_config(const std::string &path) {
    return config::ExperimentConfig::load(path);
}

void apply_overrides(config::ExperimentConfig &cfg, const TrainOverrides &ov) {
    if (ov.model)
        cfg.training.model = nn::model_kind_from_name(*ov.model);
    if (ov.itl >= 0)
        cfg.training.itl = ov.itl != 0;
    if (ov.itl_iterations)
        cfg.training.itl_iterations = *ov.itl_iterations;
    if (!ov.byte_order.empty()) {
        if (ov.byte_order.size() != 16)
            throw Error::config("--byte-order must list all 16 bytes");
        std::copy(ov.byte_order.begin(), ov.byte_order.end(),
                  cfg.training.byte_order.begin());
    }
    cfg.validate();
}

std::string fmt_opt(const std::optional<double> &v) {
    if (!v)
        return "NA";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", *v);
    return buf;
}

data::Dataset open_dataset(const fs::path &ws) {
    return data::read_dataset(ws / "dataset");
}

data::Split make_split(const config::ExperimentConfig &cfg, const data::Dataset &ds) {
    return data::split_indices(ds.n_traces(), cfg.split);
}

void warn_hash_mismatch(const config::ExperimentConfig &cfg, const std::string &seen,
                        const std::string &what) {
    if (!seen.empty() && seen != cfg.hash())
        std::cerr << "warning: " << what << " was produced by config " << seen
                  << ", current config hashes to " << cfg.hash() << "\n";
}

// -- simulate -----------------------------------------------------------------

int cmd_simulate(const config::ExperimentConfig &cfg, const fs::path &ws) {
    const sim::SimConfig &sc = cfg.simulation;
    sc.validate();

    data::DatasetManifest manifest;
    manifest.n_traces = sc.n_traces;
    manifest.height = sc.grid_size;
    manifest.width = sc.grid_size;
    manifest.modality = sc.modality;
    manifest.key = sc.key;
    manifest.config_hash = cfg.hash();
    manifest.source = {{"kind", "simulated"}, {"sim", cfg.to_json().at("simulation")}};

    const auto mask = sim::background_mask(sc);
    data::DatasetWriter writer(ws / "dataset", manifest, sc.resolved_pois());
    for (int i = 0; i < sc.n_traces; ++i) {
        const auto sample = sim::gen_trace(sc, mask, static_cast<std::uint64_t>(i));
        writer.append(sample.map.values, sample.plaintext, sample.labels);
    }
    writer.finish();
    std::cout << "wrote " << sc.n_traces << " " << modality_name(sc.modality) << " maps ("
              << sc.grid_size << "x" << sc.grid_size << ") to " << (ws / "dataset").string()
              << " [config " << cfg.hash() << "]\n";
    return 0;
}

// -- select-features ----------------------------------------------------------

int cmd_select_features(const config::ExperimentConfig &cfg, const fs::path &ws) {
    const data::Dataset ds = open_dataset(ws);
    warn_hash_mismatch(cfg, ds.manifest.config_hash, "dataset");
    const data::Split split = make_split(cfg, ds);

    std::vector<prep::PipelineResult> results;
    results.reserve(16);
    for (int b = 0; b < 16; ++b) {
        results.push_back(prep::run_pipeline(ds, split, b, cfg.selection));
        const auto &sel = results.back().selected;
        std::cout << "byte " << b << ": selected";
        for (const auto &p : sel.pixels)
            std::cout << " (" << p.row << "," << p.col << ")";
        std::cout << "\n";
    }
    prep::write_feature_sets(ws / "features", results);
    std::cout << "wrote feature stages for 16 bytes to " << (ws / "features").string()
              << " [config " << cfg.hash() << "]\n";
    return 0;
}

// -- train --------------------------------------------------------------------

int cmd_train(config::ExperimentConfig cfg, const fs::path &ws, const TrainOverrides &ov) {
    apply_overrides(cfg, ov);
    const std::string tag = ov.tag.empty() ? cfg.default_tag() : ov.tag;

    const data::Dataset ds = open_dataset(ws);
    warn_hash_mismatch(cfg, ds.manifest.config_hash, "dataset");
    const data::Split split = make_split(cfg, ds);

    const attack::AttackPlan plan = cfg.plan();
    std::vector<prep::PipelineResult> features;
    const attack::InputStage stage = plan.stage();
    if (stage != attack::InputStage::FullMap)
        features = prep::read_feature_sets(ws / "features", ds.height(), ds.width(),
                                           cfg.selection);

    attack::ByteModelSet set =
        plan.itl ? attack::train_itl(plan, ds, split, features.empty() ? nullptr : &features,
                                     cfg.selection.filter)
                 : attack::train_independent(plan, ds, split,
                                             features.empty() ? nullptr : &features,
                                             cfg.selection.filter);

    for (int b = 0; b < 16; ++b) {
        const auto &tb = set.bytes[static_cast<std::size_t>(b)];
        if (tb.trained)
            std::cout << "byte " << b << ": val loss " << tb.history.best_val_loss
                      << " (epoch " << tb.history.best_epoch << ")\n";
        else
            std::cout << "byte " << b << ": FAILED (" << tb.failure << ")\n";
    }
    if (set.trained_count() == 0)
        throw Error::training("training diverged on all 16 bytes");

    nlohmann::json context;
    context["name"] = cfg.name;
    context["tag"] = tag;
    context["model"] = nn::model_kind_name(plan.model);
    context["itl"] = plan.itl;
    context["itl_iterations"] = plan.itl_iterations;
    context["input_stage"] = attack::input_stage_name(stage);
    context["n_train"] = cfg.split.n_train;
    context["n_val"] = cfg.split.n_val;
    context["n_test"] = cfg.split.n_test;
    context["config_hash"] = cfg.hash();
    attack::save_model_set(ws / "models" / tag, set, context);
    std::cout << "wrote " << set.trained_count() << "/16 byte models to "
              << (ws / "models" / tag).string() << " [config " << cfg.hash() << "]\n";
    return 0;
}

// -- evaluate -----------------------------------------------------------------

int cmd_evaluate(config::ExperimentConfig cfg, const fs::path &ws, const TrainOverrides &ov) {
    apply_overrides(cfg, ov);
    const std::string tag = ov.tag.empty() ? cfg.default_tag() : ov.tag;

    const data::Dataset ds = open_dataset(ws);
    warn_hash_mismatch(cfg, ds.manifest.config_hash, "dataset");
    const data::Split split = make_split(cfg, ds);
    if (!ds.manifest.key)
        throw Error::data("dataset carries no key; rank evaluation needs it");

    attack::ByteModelSet set = attack::load_model_set(ws / "models" / tag);

    std::array<nn::Tensor<float>, 16> probs;
    std::array<const nn::Tensor<float> *, 16> probs_ptr{};
    for (int b = 0; b < 16; ++b) {
        auto &tb = set.bytes[static_cast<std::size_t>(b)];
        if (!tb.trained)
            continue;
        const nn::Tensor<float> x = attack::gather_stage_inputs(ds, split.test, tb);
        probs[static_cast<std::size_t>(b)] = attack::predict_probs(tb, x);
        probs_ptr[static_cast<std::size_t>(b)] = &probs[static_cast<std::size_t>(b)];
    }

    std::vector<std::uint8_t> pt_flat(split.test.size() * 16);
    for (std::size_t i = 0; i < split.test.size(); ++i) {
        const auto pt = ds.plaintext(split.test[i]);
        std::copy(pt.begin(), pt.end(), pt_flat.begin() + static_cast<std::ptrdiff_t>(i) * 16);
    }

    data::PermutationStream stream;
    stream.n_perms = cfg.evaluation.n_perms;
    stream.base_seed = cfg.seeds.evaluation;
    rank::MtdResult result =
        rank::evaluate(probs_ptr, pt_flat, *ds.manifest.key,
                       static_cast<int>(split.test.size()), stream);

    rank::RankReport report;
    report.method = tag;
    report.config_hash = cfg.hash();
    report.context = attack::load_model_set_context(ws / "models" / tag);
    report.context["n_perms"] = cfg.evaluation.n_perms;
    report.result = result;
    rank::write_report(ws / "eval" / tag, report);

    for (int b = 0; b < 16; ++b) {
        const auto &be = result.bytes[static_cast<std::size_t>(b)];
        std::cout << "byte " << b << ": mtd " << fmt_opt(be.mean_mtd) << " rank "
                  << be.mean_final_rank << " (" << be.na_permutations << "/"
                  << be.n_permutations << " perms N/A)\n";
    }
    std::cout << tag << ": average mtd " << fmt_opt(result.average_mtd) << ", worst mtd "
              << fmt_opt(result.worst_mtd) << ", average rank " << result.average_rank
              << " [config " << cfg.hash() << "]\n";
    std::cout << "wrote report to " << (ws / "eval" / tag).string() << "\n";
    return 0;
}

// -- cpa ----------------------------------------------------------------------

int cmd_cpa(const config::ExperimentConfig &cfg, const fs::path &ws) {
    const data::Dataset ds = open_dataset(ws);
    warn_hash_mismatch(cfg, ds.manifest.config_hash, "dataset");
    const data::Split split = make_split(cfg, ds);
    if (!ds.manifest.key)
        throw Error::data("dataset carries no key; CPA evaluation needs it");

    data::PermutationStream stream;
    stream.n_perms = cfg.evaluation.n_perms;
    stream.base_seed = cfg.seeds.evaluation;
    rank::MtdResult result = attack::cpa_evaluate(ds, split.test, *ds.manifest.key,
                                                  stream, cfg.evaluation.cpa_top_k);

    rank::RankReport report;
    report.method = "cpa";
    report.config_hash = cfg.hash();
    report.context = {{"name", cfg.name},
                      {"model", "cpa"},
                      {"itl", false},
                      {"n_train", cfg.split.n_train},
                      {"n_test", cfg.split.n_test},
                      {"n_perms", cfg.evaluation.n_perms},
                      {"modality", modality_name(ds.manifest.modality)}};
    report.result = result;
    rank::write_report(ws / "eval" / "cpa", report);

    std::cout << "cpa: average mtd " << fmt_opt(result.average_mtd) << ", worst mtd "
              << fmt_opt(result.worst_mtd) << ", average rank " << result.average_rank
              << " [config " << cfg.hash() << "]\n";
    std::cout << "wrote report to " << (ws / "eval" / "cpa").string() << "\n";
    return 0;
}

// -- report -------------------------------------------------------------------

struct RunRow {
    std::string method;
    int n_train = 0;
    std::optional<double> average_mtd, worst_mtd;
    double average_rank = 0;
    int cracked = 0; // bytes with a defined mean MTD
    std::string config_hash;
};

RunRow row_from_report(const rank::RankReport &r) {
    RunRow row;
    row.method = r.method;
    row.n_train = r.context.value("n_train", 0);
    row.average_mtd = r.result.average_mtd;
    row.worst_mtd = r.result.worst_mtd;
    row.average_rank = r.result.average_rank;
    for (const auto &b : r.result.bytes)
        row.cracked += b.mean_mtd.has_value() ? 1 : 0;
    row.config_hash = r.config_hash;
    return row;
}

void write_summary_csv(const fs::path &path, const std::vector<RunRow> &rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw Error::data("cannot open " + path.string());
    out << "method,n_train,average_mtd,worst_mtd,average_rank,cracked_bytes,config_hash\n";
    for (const auto &r : rows) {
        out << r.method << "," << r.n_train << "," << fmt_opt(r.average_mtd) << ","
            << fmt_opt(r.worst_mtd) << "," << r.average_rank << "," << r.cracked << "/16,"
            << r.config_hash << "\n";
    }
}

void write_summary_md(const fs::path &path, const std::vector<RunRow> &rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw Error::data("cannot open " + path.string());
    out << "| Method | Train traces | Average MTD | Worst MTD | Average Rank | Cracked |\n";
    out << "|---|---|---|---|---|---|\n";
    for (const auto &r : rows) {
        char rank_buf[32];
        std::snprintf(rank_buf, sizeof(rank_buf), "%.2f", r.average_rank);
        out << "| " << r.method << " | " << r.n_train << " | " << fmt_opt(r.average_mtd)
            << " | " << fmt_opt(r.worst_mtd) << " | " << rank_buf << " | " << r.cracked
            << "/16 |\n";
    }
}

/// Average-MTD-vs-training-size polylines, one per method, as a small
/// self-contained SVG.
void write_sweep_svg(const fs::path &path, const std::vector<RunRow> &rows) {
    std::vector<RunRow> pts;
    for (const auto &r : rows)
        if (r.average_mtd && r.n_train > 0)
            pts.push_back(r);
    if (pts.size() < 2)
        return;

    double x_min = 1e300, x_max = -1e300, y_min = 0, y_max = -1e300;
    for (const auto &p : pts) {
        x_min = std::min(x_min, static_cast<double>(p.n_train));
        x_max = std::max(x_max, static_cast<double>(p.n_train));
        y_max = std::max(y_max, *p.average_mtd);
    }
    if (x_max <= x_min)
        x_max = x_min + 1;
    y_max *= 1.05;
    if (y_max <= 0)
        y_max = 1;

    const double W = 640, H = 400, ml = 60, mr = 20, mt = 20, mb = 45;
    auto X = [&](double v) { return ml + (v - x_min) / (x_max - x_min) * (W - ml - mr); };
    auto Y = [&](double v) { return H - mb - (v - y_min) / (y_max - y_min) * (H - mt - mb); };

    std::map<std::string, std::vector<const RunRow *>> series;
    for (const auto &p : pts)
        series[p.method].push_back(&p);
    for (auto &[_, v] : series)
        std::sort(v.begin(), v.end(),
                  [](const RunRow *a, const RunRow *b) { return a->n_train < b->n_train; });

    const char *colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw Error::data("cannot open " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << W << " " << H
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
        << H - mb << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
        << H - mb << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double yv = y_min + (y_max - y_min) * t / 4;
        out << "<text x=\"" << ml - 8 << "\" y=\"" << Y(yv) + 4
            << "\" text-anchor=\"end\">" << static_cast<int>(yv + 0.5) << "</text>\n";
        out << "<line x1=\"" << ml - 4 << "\" y1=\"" << Y(yv) << "\" x2=\"" << ml
            << "\" y2=\"" << Y(yv) << "\" stroke=\"black\"/>\n";
    }
    std::vector<double> xticks;
    for (const auto &p : pts)
        xticks.push_back(p.n_train);
    std::sort(xticks.begin(), xticks.end());
    xticks.erase(std::unique(xticks.begin(), xticks.end()), xticks.end());
    for (double xv : xticks) {
        out << "<text x=\"" << X(xv) << "\" y=\"" << H - mb + 18
            << "\" text-anchor=\"middle\">" << static_cast<int>(xv) << "</text>\n";
        out << "<line x1=\"" << X(xv) << "\" y1=\"" << H - mb << "\" x2=\"" << X(xv)
            << "\" y2=\"" << H - mb + 4 << "\" stroke=\"black\"/>\n";
    }
    out << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 8
        << "\" text-anchor=\"middle\">training traces</text>\n";
    out << "<text x=\"14\" y=\"" << (mt + H - mb) / 2
        << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " << (mt + H - mb) / 2
        << ")\">average MTD (traces)</text>\n";

    int ci = 0;
    double ly = mt + 8;
    for (const auto &[method, v] : series) {
        const char *color = colors[ci % 6];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (const auto *p : v)
            out << X(p->n_train) << "," << Y(*p->average_mtd) << " ";
        out << "\"/>\n";
        for (const auto *p : v)
            out << "<circle cx=\"" << X(p->n_train) << "\" cy=\"" << Y(*p->average_mtd)
                << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        out << "<text x=\"" << W - mr - 6 << "\" y=\"" << ly << "\" text-anchor=\"end\" fill=\""
            << color << "\">" << method << "</text>\n";
        ly += 16;
        ++ci;
    }
    out << "</svg>\n";
}

int cmd_report(const fs::path &ws, std::vector<std::string> run_dirs) {
    if (run_dirs.empty()) {
        const fs::path eval_dir = ws / "eval";
        if (fs::is_directory(eval_dir))
            for (const auto &e : fs::directory_iterator(eval_dir))
                if (e.is_directory() && fs::exists(e.path() / "report.json"))
                    run_dirs.push_back(e.path().string());
        std::sort(run_dirs.begin(), run_dirs.end());
    }
    if (run_dirs.empty())
        throw Error::data("no evaluation reports found; run evaluate or cpa first, or pass --run");

    std::vector<RunRow> rows;
    for (const auto &d : run_dirs)
        rows.push_back(row_from_report(rank::read_report(d)));
    std::sort(rows.begin(), rows.end(), [](const RunRow &a, const RunRow &b) {
        return a.method == b.method ? a.n_train < b.n_train : a.method < b.method;
    });

    const fs::path out_dir = ws / "report";
    fs::create_directories(out_dir);
    write_summary_csv(out_dir / "summary.csv", rows);
    write_summary_md(out_dir / "summary.md", rows);

    // Sweep outputs only say something when a method appears at several
    // training sizes.
    std::map<std::string, std::vector<const RunRow *>> by_method;
    for (const auto &r : rows)
        by_method[r.method].push_back(&r);
    bool has_sweep = false;
    for (const auto &[_, v] : by_method) {
        std::vector<int> sizes;
        for (const auto *p : v)
            sizes.push_back(p->n_train);
        std::sort(sizes.begin(), sizes.end());
        sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
        if (sizes.size() >= 2)
            has_sweep = true;
    }
    if (has_sweep) {
        std::ofstream out(out_dir / "sweep.csv", std::ios::trunc);
        if (!out)
            throw Error::data("cannot open " + (out_dir / "sweep.csv").string());
        out << "method,n_train,average_mtd,worst_mtd,average_rank\n";
        for (const auto &r : rows)
            out << r.method << "," << r.n_train << "," << fmt_opt(r.average_mtd) << ","
                << fmt_opt(r.worst_mtd) << "," << r.average_rank << "\n";
        write_sweep_svg(out_dir / "sweep.svg", rows);
    }

    std::ifstream md(out_dir / "summary.md");
    std::cout << md.rdbuf();
    std::cout << "wrote report to " << out_dir.string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"location-based side-channel analysis: simulate leakage maps, select "
                 "POI features, train profiled attacks, and measure key ranks"};
    app.require_subcommand(1);

    int threads = 0;
    app.add_option("--threads", threads, "worker threads (0 = hardware default)");

    std::string config_path, workspace;
    TrainOverrides ov;
    std::vector<std::string> run_dirs;

    auto add_common = [&](CLI::App *sub, bool need_config) {
        if (need_config)
            sub->add_option("-c,--config", config_path, "experiment config JSON")
                ->required();
        sub->add_option("-w,--workspace", workspace, "workspace directory")->required();
    };
    auto add_train_flags = [&](CLI::App *sub) {
        sub->add_option("--model", ov.model, "override training.model (lr|mlp|cnn)");
        sub->add_flag("--itl{1},--no-itl{0}", ov.itl,
                      "override training.itl on or off");
        sub->add_option("--itl-iterations", ov.itl_iterations,
                        "override training.itl_iterations");
        sub->add_option("--byte-order", ov.byte_order,
                        "override training.byte_order (16 comma-separated bytes)")
            ->delimiter(',');
        sub->add_option("--tag", ov.tag, "models/<tag> directory (default: method name)");
    };

    CLI::App *simulate = app.add_subcommand("simulate", "generate a synthetic dataset");
    add_common(simulate, true);
    CLI::App *select = app.add_subcommand("select-features",
                                          "screen and select POI pixels per key byte");
    add_common(select, true);
    CLI::App *train = app.add_subcommand("train", "train per-byte profiled models");
    add_common(train, true);
    add_train_flags(train);
    CLI::App *evaluate = app.add_subcommand("evaluate",
                                            "rank the key with trained models");
    add_common(evaluate, true);
    add_train_flags(evaluate);
    CLI::App *cpa = app.add_subcommand("cpa", "correlation-based baseline attack");
    add_common(cpa, true);
    CLI::App *report = app.add_subcommand("report", "summarize evaluation reports");
    report->add_option("-w,--workspace", workspace, "workspace directory")->required();
    report->add_option("--run", run_dirs, "evaluation directories (default: workspace/eval/*)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        set_max_threads(threads);
        const fs::path ws = workspace;
        if (simulate->parsed())
            return cmd_simulate(load_config(config_path), ws);
        if (select->parsed())
            return cmd_select_features(load_config(config_path), ws);
        if (train->parsed())
            return cmd_train(load_config(config_path), ws, ov);
        if (evaluate->parsed())
            return cmd_evaluate(load_config(config_path), ws, ov);
        if (cpa->parsed())
            return cmd_cpa(load_config(config_path), ws);
        if (report->parsed())
            return cmd_report(ws, run_dirs);
    } catch (const Error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception &e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
