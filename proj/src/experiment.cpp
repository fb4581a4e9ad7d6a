#include "chrep/experiment.hpp"

#include "chrep/error.hpp"
#include "chrep/report.hpp"
#include "chrep/rng.hpp"
#include "chrep/warnings.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <thread>
#include <variant>

namespace chrep {

namespace fs = std::filesystem;

LossWeights ObjectiveVariant::apply(LossWeights w) const {
    if (!topology) w.lambda_spa = 0.0;
    if (!regression) w.lambda_reg = 0.0;
    if (!contrastive) w.lambda_con = 0.0;
    return w;
}

std::vector<std::string> all_variant_names() {
    return {"full",        "cal_estimate_only", "cal_correction_only", "cal_no_constraint",
            "obj_reg_con", "obj_topo_reg",      "obj_con_topo",        "obj_reg_only"};
}

Variant variant_from_name(const std::string& name) {
    const ObjectiveVariant full_obj{"full", true, true, true};
    if (name == "full") return {name, full_obj, CalibVariant::Full};
    if (name == "cal_estimate_only") return {name, full_obj, CalibVariant::EstimateOnly};
    if (name == "cal_correction_only") return {name, full_obj, CalibVariant::CorrectionOnly};
    if (name == "cal_no_constraint") return {name, full_obj, CalibVariant::NoConstraint};
    if (name == "obj_reg_con") return {name, {"reg_con", false, true, true}, CalibVariant::Full};
    if (name == "obj_topo_reg") return {name, {"topo_reg", true, true, false}, CalibVariant::Full};
    if (name == "obj_con_topo") return {name, {"con_topo", true, false, true}, CalibVariant::Full};
    if (name == "obj_reg_only") return {name, {"reg_only", false, true, false}, CalibVariant::Full};
    throw ConfigError("unknown variant '" + name + "'");
}

void ExperimentConfig::validate() const {
    if (!cohort && !synth) throw ConfigError("experiment: either \"cohort\" or \"synth\" is required");
    if (cohort && !fs::exists(*cohort / "manifest.json")) {
        throw ConfigError("experiment: no manifest.json under " + cohort->string());
    }
    if (synth) synth->validate();
    if (variants.empty()) throw ConfigError("experiment: at least one variant is required");
    for (const auto& v : variants) variant_from_name(v);
    if (seeds.empty()) throw ConfigError("experiment: at least one seed is required");
    if (!(lognorm_scale > 0.0)) throw ConfigError("experiment: lognorm_scale must be positive");
    if (threads < 1) throw ConfigError("experiment: threads must be >= 1");
    loss.validate();
    calibration.validate();
    if (train.batch_size < 2) throw ConfigError("experiment: train.batch_size must be >= 2");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = nlohmann::json::object();
    j["cohort"] = c.cohort ? nlohmann::json(c.cohort->string()) : nlohmann::json(nullptr);
    j["synth"] = c.synth ? nlohmann::json(*c.synth) : nlohmann::json(nullptr);
    j["n_hvg"] = c.n_hvg;
    j["lognorm_scale"] = c.lognorm_scale;
    j["encoder"] = c.encoder;
    j["loss"] = c.loss;
    j["train"] = c.train;
    j["calibration"] = c.calibration;
    j["variants"] = c.variants;
    j["seed"] = c.seed;
    j["seeds"] = c.seeds;
    j["heg_k"] = c.heg_k;
    j["folds"] = c.folds;
    j["threads"] = c.threads;
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    static const std::set<std::string> known{"cohort", "synth",  "n_hvg", "lognorm_scale", "encoder",
                                             "loss",   "train",  "calibration", "variants", "seed",
                                             "seeds",  "heg_k",  "folds", "threads"};
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw ConfigError("experiment config: unknown key '" + k + "'");
    if (j.contains("cohort") && !j["cohort"].is_null()) c.cohort = fs::path(j["cohort"].get<std::string>());
    if (j.contains("synth") && !j["synth"].is_null()) c.synth = j["synth"].get<SynthConfig>();
    c.n_hvg = j.value("n_hvg", c.n_hvg);
    c.lognorm_scale = j.value("lognorm_scale", c.lognorm_scale);
    if (j.contains("encoder")) c.encoder = j["encoder"].get<EncoderConfig>();
    if (j.contains("loss")) c.loss = j["loss"].get<LossWeights>();
    if (j.contains("train")) c.train = j["train"].get<TrainConfig>();
    if (j.contains("calibration")) c.calibration = j["calibration"].get<CalibConfig>();
    c.variants = j.value("variants", c.variants);
    c.seed = j.value("seed", c.seed);
    c.seeds = j.value("seeds", c.seeds);
    c.heg_k = j.value("heg_k", c.heg_k);
    c.folds = j.value("folds", c.folds);
    c.threads = j.value("threads", c.threads);
}

ExperimentConfig load_experiment_config(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    ExperimentConfig c;
    try {
        c = j.get<ExperimentConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    if (c.cohort && c.cohort->is_relative()) c.cohort = path.parent_path() / *c.cohort;
    return c;
}

ExperimentConfig reference_config() {
    ExperimentConfig c;
    c.synth = SynthConfig{};
    c.encoder.d_hidden = 64;
    c.encoder.d_embed = 64;
    c.encoder.d_proj = 32;
    c.train.epochs = 40;
    c.train.batch_size = 64;
    c.calibration.epochs = 30;
    c.calibration.batch_size = 128;
    c.seeds = {0, 1, 2};
    return c;
}

std::uint64_t cell_seed(std::uint64_t root, std::uint64_t replicate, const std::string& test_slide) {
    return derive_seed(derive_seed(root, "replicate", replicate), "fold/" + test_slide);
}

std::size_t ExperimentResult::n_failed() const {
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const CellResult& c) { return !c.ok; }));
}

bool ExperimentResult::any_numeric_failure() const {
    return std::any_of(cells.begin(), cells.end(), [](const CellResult& c) { return !c.ok && c.error_kind == "numeric"; });
}

CohortStore open_cohort(const ExperimentConfig& cfg, const fs::path& out, AccessLog* log) {
    if (cfg.cohort) return CohortStore(*cfg.cohort, log);
    const fs::path dir = out / "cohort";
    generate_synthetic(*cfg.synth, dir);
    return CohortStore(dir, log);
}

std::vector<std::size_t> resolve_hvg(const ExperimentConfig& cfg, const CohortStore& store) {
    const auto& m = store.manifest();
    const std::size_t g_all = m.gene_names.size();
    if (cfg.n_hvg == 0 || cfg.n_hvg == g_all) {
        std::vector<std::size_t> all(g_all);
        for (std::size_t j = 0; j < g_all; ++j) all[j] = j;
        return all;
    }
    if (m.hvg_index) {
        auto h = *m.hvg_index;
        std::sort(h.begin(), h.end());
        if (h.size() != cfg.n_hvg) {
            throw ConfigError("manifest hvg_index has " + std::to_string(h.size()) + " genes, config asks for " +
                              std::to_string(cfg.n_hvg));
        }
        return h;
    }
    Cohort all = store.load_all();
    return select_hvg(all, cfg.n_hvg, cfg.lognorm_scale);
}

FoldData load_fold(const CohortStore& store, const std::string& test_slide, std::span<const std::size_t> hvg,
                   double scale) {
    const auto& slides = store.manifest().slides;
    if (slides.size() < 2) throw ConfigError("leave-one-slide-out needs at least 2 slides");
    if (std::find(slides.begin(), slides.end(), test_slide) == slides.end()) {
        throw InvalidFold("unknown slide '" + test_slide + "'");
    }
    FoldData f;
    f.test_slide = test_slide;
    for (const auto& s : slides)
        if (s != test_slide) f.train_slides.push_back(s);
    f.cohort = store.load(f.train_slides);
    f.cohort.hvg_index.assign(hvg.begin(), hvg.end());
    f.standardizer = fit_standardizer(f.cohort, f.train_slides, scale);
    f.train = prepare_slides(f.cohort, f.train_slides, f.standardizer, scale);
    return f;
}

PreparedSlide load_test_slide(const CohortStore& store, const FoldData& fold, std::span<const std::size_t> hvg,
                              double scale) {
    Cohort c = store.load(std::vector<std::string>{fold.test_slide});
    c.hvg_index.assign(hvg.begin(), hvg.end());
    const std::vector<std::string> ids{fold.test_slide};
    return prepare_slides(c, ids, fold.standardizer, scale).front();
}

namespace {

std::string error_kind(const std::exception& e) {
    if (dynamic_cast<const NumericError*>(&e)) return "numeric";
    if (dynamic_cast<const ConfigError*>(&e)) return "config";
    if (dynamic_cast<const ContractError*>(&e)) return "contract";
    if (dynamic_cast<const Error*>(&e)) return "module";
    return "internal";
}

struct Failure {
    std::string kind;
    std::string message;
};

struct Stage1Cell {
    std::uint64_t replicate = 0;
    std::string objective;
    std::optional<Failure> failure;
    std::optional<Stage1Result> stage1;
    std::optional<GalleryBank> bank;
    std::map<CalibVariant, std::variant<CalibrationModel, Failure>> calib;
};

void write_text(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + p.string());
    os << text;
    if (!os) throw IoError("write failed for " + p.string());
}

std::string calib_trace_csv(std::span<const CalibEpoch> trace) {
    std::string s = "epoch,L_reg,L_delta,total\n";
    for (const auto& t : trace) {
        s += std::to_string(t.epoch) + "," + format_double(t.reg) + "," + format_double(t.delta) + "," +
             format_double(t.total) + "\n";
    }
    return s;
}

double mean_sq_rows(const Tensor2& m) {
    if (m.rows() == 0) return 0.0;
    double s = 0.0;
    for (double v : m.data()) s += v * v;
    return s / static_cast<double>(m.rows());
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg_in, const fs::path& out, AccessLog* log) {
    cfg_in.validate();
    ExperimentConfig cfg = cfg_in;
    fs::create_directories(out);
    if (log) log->set_phase("cohort");
    CohortStore store = open_cohort(cfg, out, log);
    const auto& manifest = store.manifest();
    if (manifest.slides.size() < 2) throw ConfigError("leave-one-slide-out needs at least 2 slides");

    if (log) log->set_phase("cohort:hvg");
    const std::vector<std::size_t> hvg = resolve_hvg(cfg, store);
    std::vector<std::string> gene_names;
    for (std::size_t j : hvg) gene_names.push_back(manifest.gene_names[j]);
    cfg.encoder.g = hvg.size();
    cfg.encoder.d_img = manifest.d_img;
    cfg.encoder.validate();

    std::vector<std::string> folds = cfg.folds.empty() ? manifest.slides : cfg.folds;
    std::vector<Variant> variants;
    for (const auto& name : cfg.variants) variants.push_back(variant_from_name(name));
    std::vector<ObjectiveVariant> objectives;
    std::map<std::string, std::set<CalibVariant>> calib_needed;
    for (const auto& v : variants) {
        if (!calib_needed.count(v.objective.name)) objectives.push_back(v.objective);
        calib_needed[v.objective.name].insert(v.calibration);
    }

    {
        nlohmann::json resolved = cfg;
        resolved["hvg_index"] = hvg;
        write_text(out / "config.json", resolved.dump(2) + "\n");
    }

    ExperimentResult result;
    for (const auto& test : folds) {
        std::cerr << "[chrep] fold " << test << "\n";
        if (log) log->set_phase("fold:" + test + ":train");
        std::optional<FoldData> fold;
        std::optional<Failure> fold_failure;
        try {
            fold = load_fold(store, test, hvg, cfg.lognorm_scale);
        } catch (const std::exception& e) {
            fold_failure = Failure{error_kind(e), e.what()};
        }

        std::vector<Stage1Cell> trained;
        for (auto rep : cfg.seeds)
            for (const auto& obj : objectives) trained.push_back({rep, obj.name, fold_failure, {}, {}, {}});

        if (fold) {
            parallel_for(trained.size(), cfg.threads, [&](std::size_t i) {
                Stage1Cell& cell = trained[i];
                const auto obj = std::find_if(objectives.begin(), objectives.end(),
                                              [&](const ObjectiveVariant& o) { return o.name == cell.objective; });
                const std::uint64_t s = cell_seed(cfg.seed, cell.replicate, test);
                try {
                    EncoderConfig enc = cfg.encoder;
                    enc.seed = s;
                    TrainConfig tc = cfg.train;
                    tc.seed = s;
                    cell.stage1 = train_stage1(fold->train, enc, obj->apply(cfg.loss), tc);
                    cell.bank = build_gallery(cell.stage1->params, fold->train, test);
                } catch (const std::exception& e) {
                    cell.failure = Failure{error_kind(e), e.what()};
                    return;
                }
                for (CalibVariant cv : calib_needed[cell.objective]) {
                    CalibConfig cc = cfg.calibration;
                    cc.seed = derive_seed(s, "calib");
                    try {
                        cell.calib.emplace(cv, fit_calibration(cv, cell.stage1->params, *cell.bank, cc, cfg.loss));
                    } catch (const std::exception& e) {
                        cell.calib.emplace(cv, Failure{error_kind(e), e.what()});
                    }
                }
            });
        }

        if (log) log->set_phase("fold:" + test + ":eval");
        std::optional<PreparedSlide> held_out;
        if (fold) {
            try {
                held_out = load_test_slide(store, *fold, hvg, cfg.lognorm_scale);
            } catch (const std::exception& e) {
                fold_failure = Failure{error_kind(e), e.what()};
            }
        }

        for (const auto& v : variants) {
            for (auto rep : cfg.seeds) {
                CellResult cr;
                cr.variant = v.name;
                cr.fold = test;
                cr.replicate = rep;
                const fs::path dir = out / v.name / test / std::to_string(rep);
                fs::remove_all(dir);
                const auto it = std::find_if(trained.begin(), trained.end(), [&](const Stage1Cell& c) {
                    return c.replicate == rep && c.objective == v.objective.name;
                });
                std::optional<Failure> failure = fold_failure ? fold_failure : it->failure;
                if (!failure) {
                    const auto& slot = it->calib.at(v.calibration);
                    if (const auto* f = std::get_if<Failure>(&slot)) failure = *f;
                }
                if (!failure) {
                    try {
                        const auto& model = std::get<CalibrationModel>(it->calib.at(v.calibration));
                        const Tensor2 test_z = encode_image(held_out->data.feats, it->stage1->params);
                        const CalibrationOutput co = apply_calibration(model, it->stage1->params, *it->bank, test_z);
                        cr.metrics = evaluate(test, held_out->g_std, co.predictions, held_out->data.expr_log, gene_names,
                                              cfg.heg_k);
                        cr.train_delta_sq = co.train_delta_sq;
                        cr.test_delta_sq = mean_sq_rows(co.delta);
                        cr.ok = true;

                        nlohmann::json mj = nlohmann::json::object();
                        mj["variant"] = v.name;
                        mj["objective"] = {{"name", v.objective.name},
                                           {"topology", v.objective.topology},
                                           {"regression", v.objective.regression},
                                           {"contrastive", v.objective.contrastive}};
                        mj["calibration"] = {{"design", to_string(v.calibration)},
                                             {"lambda_delta", model.cfg.lambda_delta},
                                             {"train_delta_sq", cr.train_delta_sq},
                                             {"test_delta_sq", cr.test_delta_sq}};
                        mj["fold"] = test;
                        mj["replicate"] = rep;
                        mj["cell_seed"] = cell_seed(cfg.seed, rep, test);
                        mj["settings"] = {{"encoder", cfg.encoder},
                                          {"loss", v.objective.apply(cfg.loss)},
                                          {"train", cfg.train},
                                          {"calibration", model.cfg}};
                        mj["metrics"] = cr.metrics;
                        write_text(dir / "metrics.json", mj.dump(2) + "\n");
                        write_text(dir / "trace.csv", trace_csv(it->stage1->trace));
                        write_text(dir / "calib_trace.csv", calib_trace_csv(model.trace));
                        write_text(dir / "per_gene_pcc.csv", per_gene_pcc_csv(test, cr.metrics));
                        const std::vector<SlideQuartiles> q{{test, quartiles(cr.metrics.per_gene_pcc)}};
                        write_text(dir / "slide_quartiles.csv", slide_quartiles_csv(q));
                    } catch (const std::exception& e) {
                        failure = Failure{error_kind(e), e.what()};
                        cr.ok = false;
                    }
                }
                if (failure) {
                    cr.error_kind = failure->kind;
                    cr.error = failure->message;
                    nlohmann::json ej = {{"variant", v.name},
                                         {"fold", test},
                                         {"replicate", rep},
                                         {"error_kind", failure->kind},
                                         {"error", failure->message}};
                    write_text(dir / "error.json", ej.dump(2) + "\n");
                    std::cerr << "[chrep] cell " << v.name << "/" << test << "/" << rep << " failed: " << failure->message
                              << "\n";
                }
                result.cells.push_back(std::move(cr));
            }
        }
    }
    if (log) log->set_phase("report");
    write_summary(out);
    return result;
}

} // namespace chrep
