#include "chrep/cli.hpp"

#include "chrep/calibration.hpp"
#include "chrep/error.hpp"
#include "chrep/experiment.hpp"
#include "chrep/metrics.hpp"
#include "chrep/report.hpp"
#include "chrep/rng.hpp"
#include "chrep/synth.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace chrep {

namespace fs = std::filesystem;

namespace {

struct Common {
    std::optional<std::uint64_t> seed;
    std::string config;
    std::string out;
};

void add_common(CLI::App* sub, Common& c, bool out_required = true) {
    sub->add_option("--seed", c.seed, "Root seed (overrides the config)");
    sub->add_option("--config", c.config, "JSON config file");
    auto* o = sub->add_option("--out", c.out, "Output directory");
    if (out_required) o->required();
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + p.string());
    os << text;
}

ExperimentConfig experiment_config(const Common& c) {
    ExperimentConfig cfg = c.config.empty() ? reference_config() : load_experiment_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    return cfg;
}

struct FoldContext {
    ExperimentConfig cfg;
    std::optional<CohortStore> store;
    std::vector<std::size_t> hvg;
    std::string fold;
    std::uint64_t seed = 0;
};

FoldContext fold_context(const Common& c, const std::string& fold, std::uint64_t replicate, const fs::path& out) {
    FoldContext fc;
    fc.cfg = experiment_config(c);
    fc.cfg.validate();
    fc.store.emplace(open_cohort(fc.cfg, out));
    fc.hvg = resolve_hvg(fc.cfg, *fc.store);
    fc.fold = fold.empty() ? fc.store->manifest().slides.front() : fold;
    fc.cfg.encoder.g = fc.hvg.size();
    fc.cfg.encoder.d_img = fc.store->manifest().d_img;
    fc.seed = cell_seed(fc.cfg.seed, replicate, fc.fold);
    return fc;
}

std::string matrix_csv(const std::vector<std::string>& ids, const std::vector<std::string>& cols, const Tensor2& m) {
    std::ostringstream os;
    os << "spot_id";
    for (const auto& c : cols) os << "," << c;
    os << "\n";
    for (std::size_t r = 0; r < m.rows(); ++r) {
        os << ids[r];
        for (std::size_t j = 0; j < m.cols(); ++j) os << "," << format_double(m(r, j));
        os << "\n";
    }
    return os.str();
}

int cmd_gen(const Common& c) {
    SynthConfig s;
    if (!c.config.empty()) {
        std::ifstream is(c.config);
        if (!is) throw ConfigError("cannot open config " + c.config);
        try {
            s = nlohmann::json::parse(is).get<SynthConfig>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(c.config + ": " + e.what());
        }
    }
    if (c.seed) s.seed = *c.seed;
    const Cohort cohort = generate_synthetic(s, c.out);
    std::cout << "wrote " << cohort.slides.size() << " slides, " << cohort.total_spots() << " spots to " << c.out << "\n";
    return kExitOk;
}

int cmd_train(const Common& c, const std::string& fold, std::uint64_t replicate, const std::string& objective) {
    const fs::path out(c.out);
    FoldContext fc = fold_context(c, fold, replicate, out);
    const Variant v = variant_from_name(objective == "full" ? "full" : "obj_" + objective);
    const FoldData fd = load_fold(*fc.store, fc.fold, fc.hvg, fc.cfg.lognorm_scale);
    EncoderConfig enc = fc.cfg.encoder;
    enc.seed = fc.seed;
    TrainConfig tc = fc.cfg.train;
    tc.seed = fc.seed;
    const Stage1Result r = train_stage1(fd.train, enc, v.objective.apply(fc.cfg.loss), tc);
    fs::create_directories(out);
    write_archive(out / "model.chrt", r.params.to_archive());
    write_text(out / "trace.csv", trace_csv(r.trace));
    nlohmann::json meta = {{"fold", fc.fold}, {"replicate", replicate}, {"objective", v.objective.name},
                           {"cell_seed", fc.seed}, {"checksum", r.params.checksum()}};
    write_text(out / "train.json", meta.dump(2) + "\n");
    std::cout << "trained fold " << fc.fold << " -> " << (out / "model.chrt").string() << "\n";
    return kExitOk;
}

int cmd_calibrate(const Common& c, const std::string& fold, std::uint64_t replicate, const std::string& checkpoint,
                  const std::string& design) {
    const fs::path out(c.out);
    FoldContext fc = fold_context(c, fold, replicate, out);
    const auto cv = calib_variant_from_string(design);
    if (!cv) throw ConfigError("unknown calibration design '" + design + "'");
    const ModelParams params = ModelParams::from_archive(read_archive(checkpoint));
    const FoldData fd = load_fold(*fc.store, fc.fold, fc.hvg, fc.cfg.lognorm_scale);
    const GalleryBank bank = build_gallery(params, fd.train, fc.fold);
    CalibConfig cc = fc.cfg.calibration;
    cc.seed = derive_seed(fc.seed, "calib");
    const CalibrationModel model = fit_calibration(*cv, params, bank, cc, fc.cfg.loss);
    fs::create_directories(out);
    write_gallery(bank, out / "gallery.chrt");
    if (model.net) write_archive(out / "correction.chrt", model.net->to_archive());
    nlohmann::json meta = {{"fold", fc.fold},
                           {"replicate", replicate},
                           {"design", to_string(*cv)},
                           {"calibration", model.cfg},
                           {"train_delta_sq", model.train_delta_sq}};
    write_text(out / "calibration.json", meta.dump(2) + "\n");
    std::string trace = "epoch,L_reg,L_delta,total\n";
    for (const auto& t : model.trace) {
        trace += std::to_string(t.epoch) + "," + format_double(t.reg) + "," + format_double(t.delta) + "," +
                 format_double(t.total) + "\n";
    }
    write_text(out / "calib_trace.csv", trace);
    std::cout << "calibrated fold " << fc.fold << " (" << to_string(*cv) << ")\n";
    return kExitOk;
}

int cmd_eval(const Common& c, const std::string& fold, std::uint64_t replicate, const std::string& checkpoint,
             const std::string& calib_dir) {
    const fs::path out(c.out);
    FoldContext fc = fold_context(c, fold, replicate, out);
    const ModelParams params = ModelParams::from_archive(read_archive(checkpoint));
    const fs::path cdir(calib_dir);
    std::ifstream is(cdir / "calibration.json");
    if (!is) throw ConfigError("no calibration.json in " + cdir.string());
    const auto meta = nlohmann::json::parse(is);
    CalibrationModel model;
    model.variant = *calib_variant_from_string(meta.at("design").get<std::string>());
    model.cfg = meta.at("calibration").get<CalibConfig>();
    model.train_delta_sq = meta.value("train_delta_sq", 0.0);
    if (fs::exists(cdir / "correction.chrt")) model.net = CorrectionNet::from_archive(read_archive(cdir / "correction.chrt"));
    const GalleryBank bank = read_gallery(cdir / "gallery.chrt");

    const FoldData fd = load_fold(*fc.store, fc.fold, fc.hvg, fc.cfg.lognorm_scale);
    const PreparedSlide test = load_test_slide(*fc.store, fd, fc.hvg, fc.cfg.lognorm_scale);
    const Tensor2 z = encode_image(test.data.feats, params);
    const CalibrationOutput co = apply_calibration(model, params, bank, z);
    std::vector<std::string> genes;
    for (std::size_t j : fc.hvg) genes.push_back(fc.store->manifest().gene_names[j]);
    const MetricsReport m = evaluate(fc.fold, test.g_std, co.predictions, test.data.expr_log, genes, fc.cfg.heg_k);
    fs::create_directories(out);
    write_text(out / "predictions.csv", matrix_csv(test.data.spot_ids, genes, co.predictions));
    nlohmann::json mj = {{"fold", fc.fold}, {"replicate", replicate}, {"design", to_string(model.variant)}};
    mj["metrics"] = m;
    write_text(out / "metrics.json", mj.dump(2) + "\n");
    write_text(out / "per_gene_pcc.csv", per_gene_pcc_csv(fc.fold, m));
    const std::vector<SlideQuartiles> q{{fc.fold, quartiles(m.per_gene_pcc)}};
    write_text(out / "slide_quartiles.csv", slide_quartiles_csv(q));
    std::cout << "fold " << fc.fold << ": PCC(ACG) " << m.pcc_acg << ", MSE " << m.mse << ", MAE " << m.mae << "\n";
    return kExitOk;
}

int cmd_run(const Common& c, std::size_t threads) {
    ExperimentConfig cfg = experiment_config(c);
    if (threads) cfg.threads = threads;
    const ExperimentResult r = run_experiment(cfg, c.out);
    std::cout << r.cells.size() << " cells, " << r.n_failed() << " failed; summary in "
              << (fs::path(c.out) / "summary.md").string() << "\n";
    if (r.any_numeric_failure()) return kExitNumeric;
    return r.n_failed() ? kExitConfig : kExitOk;
}

int cmd_report(const Common& c) {
    if (!fs::is_directory(c.out)) throw ConfigError("no such directory: " + c.out);
    const auto rows = write_summary(c.out);
    std::cout << rows.size() << " aggregate rows written to " << (fs::path(c.out) / "summary.csv").string() << "\n";
    return kExitOk;
}

} // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"chrep: histology-to-expression representation learning with post-hoc calibration"};
    app.require_subcommand(1);

    Common gen_c, train_c, cal_c, eval_c, run_c, report_c;
    std::string fold, checkpoint, calib_dir, design = "estimate_correction", objective = "full";
    std::uint64_t replicate = 0;
    std::size_t threads = 0;

    auto* gen = app.add_subcommand("gen", "Generate a synthetic cohort from a synth config");
    add_common(gen, gen_c);

    auto* train = app.add_subcommand("train", "Stage-1 training for one fold; writes model.chrt");
    add_common(train, train_c);
    train->add_option("--fold", fold, "Held-out slide (default: first slide)");
    train->add_option("--replicate", replicate, "Replicate index");
    train->add_option("--objective", objective, "full, reg_con, topo_reg, con_topo or reg_only");

    auto* cal = app.add_subcommand("calibrate", "Build the gallery and fit a calibration design for one fold");
    add_common(cal, cal_c);
    cal->add_option("--fold", fold, "Held-out slide (default: first slide)");
    cal->add_option("--replicate", replicate, "Replicate index");
    cal->add_option("--checkpoint", checkpoint, "Stage-1 checkpoint")->required();
    cal->add_option("--design", design, "estimate_only, correction_only, no_constraint or estimate_correction");

    auto* ev = app.add_subcommand("eval", "Predict the held-out slide and write metrics files");
    add_common(ev, eval_c);
    ev->add_option("--fold", fold, "Held-out slide (default: first slide)");
    ev->add_option("--replicate", replicate, "Replicate index");
    ev->add_option("--checkpoint", checkpoint, "Stage-1 checkpoint")->required();
    ev->add_option("--calibration", calib_dir, "Directory written by calibrate")->required();

    auto* run = app.add_subcommand("run", "Full leave-one-slide-out experiment grid");
    add_common(run, run_c);
    run->add_option("--threads", threads, "Worker threads for independent cells");

    auto* report = app.add_subcommand("report", "Aggregate an output tree into summary.md and summary.csv");
    add_common(report, report_c);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kExitConfig;
    }

    try {
        if (*gen) return cmd_gen(gen_c);
        if (*train) return cmd_train(train_c, fold, replicate, objective);
        if (*cal) return cmd_calibrate(cal_c, fold, replicate, checkpoint, design);
        if (*ev) return cmd_eval(eval_c, fold, replicate, checkpoint, calib_dir);
        if (*run) return cmd_run(run_c, threads);
        if (*report) return cmd_report(report_c);
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}

} // namespace chrep
