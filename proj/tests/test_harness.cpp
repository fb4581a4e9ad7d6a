#include "chrep/cli.hpp"
#include "chrep/error.hpp"
#include "chrep/experiment.hpp"
#include "chrep/report.hpp"
#include "chrep/synth.hpp"
#include "support.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace chrep;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

SynthConfig tiny_synth(std::size_t slides = 2) {
    SynthConfig s;
    s.n_slides = slides;
    s.spots_per_slide = 30;
    s.g = 5;
    s.d_img = 4;
    s.seed = 3;
    return s;
}

ExperimentConfig tiny_experiment(std::size_t slides = 2) {
    ExperimentConfig c;
    c.synth = tiny_synth(slides);
    c.encoder.d_hidden = 8;
    c.encoder.d_embed = 6;
    c.encoder.d_proj = 4;
    c.train.epochs = 2;
    c.train.batch_size = 16;
    c.calibration.hidden = 8;
    c.calibration.epochs = 2;
    c.calibration.batch_size = 16;
    c.calibration.k_gallery = 5;
    c.seeds = {0};
    c.heg_k = {3};
    c.variants = {"full"};
    return c;
}

int run_cli_process(const std::string& args) {
    const std::string cmd = std::string(CHREP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool under(const fs::path& p, const fs::path& dir) {
    const auto rel = fs::relative(p, dir);
    return !rel.empty() && rel.native().rfind("..", 0) != 0;
}

} // namespace

TEST_SUITE("harness") {

TEST_CASE("synthetic cohorts are reproducible byte for byte") {
    testing::TempDir a("synth_a");
    testing::TempDir b("synth_b");
    generate_synthetic(tiny_synth(), a.path());
    generate_synthetic(tiny_synth(), b.path());
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a.path())) {
        if (!e.is_regular_file()) continue;
        ++files;
        CHECK(slurp(e.path()) == slurp(b.path() / fs::relative(e.path(), a.path())));
    }
    CHECK(files == 1 + 3 * 2);
    const Cohort c = CohortStore(a.path()).load_all();
    CHECK(c.slide_ids() == std::vector<std::string>{"slide00", "slide01"});
    CHECK(c.gene_names.front() == "gene000");
}

TEST_CASE("generated counts and shapes") {
    SynthConfig s = tiny_synth();
    s.spots_per_slide = 1;
    const Cohort one = generate_synthetic(s);
    CHECK(one.slide("slide00").size() == 1);
    one.validate();
    const Cohort c = generate_synthetic(tiny_synth());
    for (const auto& id : c.slide_ids())
        for (const auto& spot : c.slide(id)) {
            CHECK(spot.feat.size() == 4);
            for (double v : spot.expr_raw) {
                CHECK(v >= 0.0);
                CHECK(v == std::round(v));
            }
        }
    SynthConfig bad = tiny_synth();
    bad.shift_strength = -1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("without shift every slide shares the feature distribution") {
    SynthConfig s;
    s.n_slides = 4;
    s.spots_per_slide = 400;
    s.shift_strength = 0.0;
    s.seed = 5;
    const Cohort c = generate_synthetic(s);
    const std::size_t d = s.d_img;
    std::vector<std::vector<double>> mean(4, std::vector<double>(d, 0.0)), var(4, std::vector<double>(d, 0.0));
    const auto ids = c.slide_ids();
    for (std::size_t k = 0; k < 4; ++k) {
        const auto& spots = c.slide(ids[k]);
        const double n = static_cast<double>(spots.size());
        for (const auto& sp : spots)
            for (std::size_t j = 0; j < d; ++j) mean[k][j] += sp.feat[j] / n;
        for (const auto& sp : spots)
            for (std::size_t j = 0; j < d; ++j) var[k][j] += (sp.feat[j] - mean[k][j]) * (sp.feat[j] - mean[k][j]) / (n - 1);
    }
    for (std::size_t a = 0; a < 4; ++a)
        for (std::size_t b = a + 1; b < 4; ++b)
            for (std::size_t j = 0; j < d; ++j) {
                const double se = std::sqrt(var[a][j] / 400.0 + var[b][j] / 400.0);
                CHECK(std::abs(mean[a][j] - mean[b][j]) < 3.0 * se);
            }
}

TEST_CASE("objective variants zero exactly the dropped weights") {
    const LossWeights w;
    const LossWeights reg_con = variant_from_name("obj_reg_con").objective.apply(w);
    CHECK(reg_con.lambda_spa == 0.0);
    CHECK(reg_con.lambda_con == w.lambda_con);
    CHECK(reg_con.lambda_reg == w.lambda_reg);
    const LossWeights con_topo = variant_from_name("obj_con_topo").objective.apply(w);
    CHECK(con_topo.lambda_reg == 0.0);
    CHECK(con_topo.lambda_spa == w.lambda_spa);
    const LossWeights topo_reg = variant_from_name("obj_topo_reg").objective.apply(w);
    CHECK(topo_reg.lambda_con == 0.0);
    const LossWeights reg_only = variant_from_name("obj_reg_only").objective.apply(w);
    CHECK(reg_only.lambda_con == 0.0);
    CHECK(reg_only.lambda_spa == 0.0);
    CHECK(variant_from_name("cal_no_constraint").calibration == CalibVariant::NoConstraint);
    CHECK(variant_from_name("full").calibration == CalibVariant::Full);
    CHECK_THROWS_AS(variant_from_name("bogus"), ConfigError);
    CHECK(all_variant_names().size() == 8);
}

TEST_CASE("experiment config parsing") {
    const ExperimentConfig c = tiny_experiment();
    nlohmann::json j = c;
    const ExperimentConfig back = j.get<ExperimentConfig>();
    CHECK(nlohmann::json(back) == j);
    j["mystery"] = 1;
    CHECK_THROWS_AS(j.get<ExperimentConfig>(), ConfigError);
    ExperimentConfig none = tiny_experiment();
    none.variants.clear();
    CHECK_THROWS_AS(none.validate(), ConfigError);
    ExperimentConfig missing = tiny_experiment();
    missing.synth.reset();
    missing.cohort = "/definitely/not/here";
    CHECK_THROWS_AS(missing.validate(), ConfigError);
    CHECK(cell_seed(0, 0, "slide00") != cell_seed(0, 1, "slide00"));
    CHECK(cell_seed(0, 0, "slide00") != cell_seed(0, 0, "slide01"));
    CHECK(cell_seed(4, 2, "a") == cell_seed(4, 2, "a"));
}

TEST_CASE("shipped configs parse") {
    const fs::path dir = CHREP_SOURCE_DIR "/tools/configs";
    const ExperimentConfig ref = load_experiment_config(dir / "reference.json");
    CHECK(nlohmann::json(ref) == nlohmann::json(reference_config()));
    CHECK_NOTHROW(load_experiment_config(dir / "small.json"));
    std::ifstream in(dir / "synth.json");
    const SynthConfig sc = nlohmann::json::parse(in).get<SynthConfig>();
    CHECK(nlohmann::json(sc) == nlohmann::json(SynthConfig{}));
}

TEST_CASE("two slides, one seed, one variant") {
    testing::TempDir out("run2");
    const ExperimentResult r = run_experiment(tiny_experiment(), out.path());
    CHECK(r.cells.size() == 2);
    CHECK(r.n_failed() == 0);
    CHECK(fs::exists(out.path() / "full" / "slide00" / "0" / "metrics.json"));
    CHECK(fs::exists(out.path() / "full" / "slide01" / "0" / "metrics.json"));
    CHECK(fs::exists(out.path() / "full" / "slide00" / "0" / "trace.csv"));
    CHECK(fs::exists(out.path() / "full" / "slide00" / "0" / "per_gene_pcc.csv"));
    CHECK(fs::exists(out.path() / "summary.md"));
    CHECK(fs::exists(out.path() / "summary.csv"));
    CHECK(fs::exists(out.path() / "config.json"));

    const auto j = nlohmann::json::parse(slurp(out.path() / "full" / "slide00" / "0" / "metrics.json"));
    CHECK(j["metrics"]["fold_id"] == "slide00");
    CHECK(j["metrics"]["n_spots"] == 30);
}

TEST_CASE("aggregates are means of per-fold values") {
    testing::TempDir out("agg");
    ExperimentConfig c = tiny_experiment(3);
    c.seeds = {0, 1};
    c.variants = {"full", "obj_reg_only"};
    run_experiment(c, out.path());
    const auto cells = collect_cells(out.path());
    CHECK(cells.size() == 3 * 2 * 2);
    const auto rows = aggregate(cells);
    for (const std::string v : {"full", "obj_reg_only"}) {
        for (const std::string m : {"pcc_acg", "mse", "mae"}) {
            std::map<std::string, std::vector<double>> by_fold;
            for (const auto& cell : cells)
                if (cell.variant == v) by_fold[cell.fold].push_back(cell.values.at(m));
            double total = 0;
            for (const auto& [f, vals] : by_fold) total += (vals[0] + vals[1]) / 2.0;
            const auto row = find_row(rows, v, m);
            REQUIRE(row.has_value());
            CHECK(std::abs(row->mean - total / 3.0) < 1e-12);
            CHECK(row->n_folds == 3);
            CHECK(row->n_seeds == 2);
        }
    }
    CHECK_THROWS_AS(write_summary(out.path() / "empty_nothing"), ConfigError);
}

TEST_CASE("a failing cell is recorded and the others continue") {
    testing::TempDir out("fail");
    ExperimentConfig c = tiny_experiment();
    c.folds = {"slide00", "nope"};
    const ExperimentResult r = run_experiment(c, out.path());
    CHECK(r.n_failed() == 1);
    CHECK(r.cells.size() == 2);
    CHECK(fs::exists(out.path() / "full" / "slide00" / "0" / "metrics.json"));
    CHECK(fs::exists(out.path() / "full" / "nope" / "0" / "error.json"));
    CHECK(fs::exists(out.path() / "summary.csv"));
}

TEST_CASE("held-out slide files are untouched while its fold trains") {
    testing::TempDir out("leak");
    ExperimentConfig c = tiny_experiment(3);
    c.variants = {"full", "cal_correction_only"};
    AccessLog log;
    run_experiment(c, out.path(), &log);
    const fs::path root = out.path() / "cohort";
    for (const std::string s : {"slide00", "slide01", "slide02"}) {
        std::size_t train_reads = 0, eval_reads = 0;
        for (const auto& e : log.entries()) {
            if (e.phase == "fold:" + s + ":train") {
                ++train_reads;
                CHECK_FALSE(under(e.path, root / s));
            }
            if (e.phase == "fold:" + s + ":eval") {
                ++eval_reads;
                CHECK(under(e.path, root / s));
            }
        }
        CHECK(train_reads > 0);
        CHECK(eval_reads > 0);
    }
}

TEST_CASE("command line") {
    testing::TempDir tmp("cli");
    const std::string dir = tmp.path().string();
    CHECK(run_cli_process("--help") == 0);
    CHECK(run_cli_process("") == kExitConfig);
    CHECK(run_cli_process("gen --bogus --out " + dir + "/x") == kExitConfig);
    CHECK(run_cli_process("train") == kExitConfig);
    fs::create_directories(tmp.path() / "empty");
    CHECK(run_cli_process("report --out " + dir + "/empty") == kExitConfig);

    std::ofstream(tmp.path() / "synth.json") << nlohmann::json(tiny_synth()).dump();
    REQUIRE(run_cli_process("gen --config " + dir + "/synth.json --out " + dir + "/data") == 0);
    CHECK(fs::exists(tmp.path() / "data" / "manifest.json"));

    nlohmann::json exp = tiny_experiment();
    exp["synth"] = nullptr;
    exp["cohort"] = "data";
    std::ofstream(tmp.path() / "exp.json") << exp.dump();
    const std::string cfg = " --config " + dir + "/exp.json";
    REQUIRE(run_cli_process("train" + cfg + " --fold slide01 --out " + dir + "/train") == 0);
    CHECK(fs::exists(tmp.path() / "train" / "model.chrt"));
    REQUIRE(run_cli_process("calibrate" + cfg + " --fold slide01 --checkpoint " + dir + "/train/model.chrt --out " + dir +
                            "/cal") == 0);
    CHECK(fs::exists(tmp.path() / "cal" / "gallery.chrt"));
    CHECK(fs::exists(tmp.path() / "cal" / "correction.chrt"));
    REQUIRE(run_cli_process("eval" + cfg + " --fold slide01 --checkpoint " + dir + "/train/model.chrt --calibration " +
                            dir + "/cal --out " + dir + "/eval") == 0);
    const auto m = nlohmann::json::parse(slurp(tmp.path() / "eval" / "metrics.json"));
    CHECK(m.contains("metrics"));

    std::ofstream(tmp.path() / "broken.json") << "{not json";
    CHECK(run_cli_process("run --config " + dir + "/broken.json --out " + dir + "/r") == kExitConfig);
}

}
