#include "chrep/report.hpp"

#include "chrep/cohort.hpp"
#include "chrep/error.hpp"
#include "chrep/experiment.hpp"
#include "chrep/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace chrep {

namespace fs = std::filesystem;

namespace {

nlohmann::json read_json(const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw IoError("cannot open " + p.string());
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(p.string() + ": " + e.what());
    }
}

std::vector<fs::path> sorted_dirs(const fs::path& p) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(p))
        if (e.is_directory()) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

bool is_uint(const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double mean_of(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    return m / static_cast<double>(v.size());
}

std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

} // namespace

std::vector<CellRecord> collect_cells(const fs::path& out) {
    std::vector<CellRecord> cells;
    if (!fs::is_directory(out)) return cells;
    for (const auto& vdir : sorted_dirs(out)) {
        for (const auto& fdir : sorted_dirs(vdir)) {
            for (const auto& rdir : sorted_dirs(fdir)) {
                const std::string rep = rdir.filename().string();
                if (!is_uint(rep)) continue;
                CellRecord c;
                c.variant = vdir.filename().string();
                c.fold = fdir.filename().string();
                c.replicate = std::stoull(rep);
                if (fs::exists(rdir / "metrics.json")) {
                    const auto j = read_json(rdir / "metrics.json");
                    const MetricsReport m = j.at("metrics").get<MetricsReport>();
                    c.ok = true;
                    if (std::isfinite(m.pcc_acg)) c.values["pcc_acg"] = m.pcc_acg;
                    for (const auto& [k, v] : m.pcc_heg)
                        if (std::isfinite(v)) c.values["pcc_heg@" + std::to_string(k)] = v;
                    c.values["mse"] = m.mse;
                    c.values["mae"] = m.mae;
                    if (j.contains("calibration")) {
                        c.values["delta_sq_train"] = j["calibration"].value("train_delta_sq", 0.0);
                        c.values["delta_sq_test"] = j["calibration"].value("test_delta_sq", 0.0);
                    }
                    c.per_gene_pcc = m.per_gene_pcc;
                } else if (fs::exists(rdir / "error.json")) {
                    const auto j = read_json(rdir / "error.json");
                    c.error_kind = j.value("error_kind", std::string("unknown"));
                    c.error = j.value("error", std::string());
                } else {
                    continue;
                }
                cells.push_back(std::move(c));
            }
        }
    }
    return cells;
}

std::vector<AggregateRow> aggregate(const std::vector<CellRecord>& cells) {
    std::map<std::string, std::vector<const CellRecord*>> by_variant;
    for (const auto& c : cells) by_variant[c.variant].push_back(&c);
    std::vector<AggregateRow> rows;
    for (const auto& [variant, vc] : by_variant) {
        std::set<std::string> metrics;
        std::size_t failed = 0;
        for (const auto* c : vc) {
            if (!c->ok) ++failed;
            for (const auto& [k, v] : c->values) metrics.insert(k);
        }
        for (const auto& metric : metrics) {
            std::map<std::string, std::vector<double>> per_fold;
            std::map<std::uint64_t, std::vector<double>> per_seed;
            std::size_t n = 0;
            for (const auto* c : vc) {
                const auto it = c->values.find(metric);
                if (!c->ok || it == c->values.end()) continue;
                per_fold[c->fold].push_back(it->second);
                per_seed[c->replicate].push_back(it->second);
                ++n;
            }
            if (n == 0) continue;
            std::vector<double> fold_means, seed_means;
            for (const auto& [f, v] : per_fold) fold_means.push_back(mean_of(v));
            for (const auto& [s, v] : per_seed) seed_means.push_back(mean_of(v));
            AggregateRow r;
            r.variant = variant;
            r.metric = metric;
            r.mean = mean_of(fold_means);
            r.std_over_folds = sample_std(fold_means);
            r.std_over_seeds = sample_std(seed_means);
            r.n_folds = fold_means.size();
            r.n_seeds = seed_means.size();
            r.n_cells = n;
            r.n_failed = failed;
            rows.push_back(r);
        }
    }
    return rows;
}

std::optional<AggregateRow> find_row(const std::vector<AggregateRow>& rows, const std::string& variant,
                                     const std::string& metric) {
    for (const auto& r : rows)
        if (r.variant == variant && r.metric == metric) return r;
    return std::nullopt;
}

namespace {

std::string cell_text(const std::vector<AggregateRow>& rows, const std::string& variant, const std::string& metric) {
    const auto r = find_row(rows, variant, metric);
    if (!r) return "n/a";
    return fixed4(r->mean) + " ± " + fixed4(r->std_over_folds) + " (seeds ± " + fixed4(r->std_over_seeds) + ")";
}

std::string mark(bool b) {
    return b ? "✓" : "×";
}

struct TableRow {
    std::string label;
    std::string variant;
};

void table(std::ostringstream& md, const std::vector<AggregateRow>& rows, const std::vector<std::string>& metric_cols,
           const std::vector<TableRow>& layout, bool calibration_table) {
    md << (calibration_table ? "| Variant | Estimate | Correction | Constraint |" : "| Variant | Topology | Regression | Contrastive |");
    for (const auto& m : metric_cols) md << " " << m << " |";
    md << "\n|---|---|---|---|";
    for (std::size_t i = 0; i < metric_cols.size(); ++i) md << "---|";
    md << "\n";
    for (const auto& tr : layout) {
        const Variant v = variant_from_name(tr.variant);
        md << "| " << tr.label << " (`" << tr.variant << "`) | ";
        if (calibration_table) {
            const bool est = v.calibration != CalibVariant::CorrectionOnly;
            const bool cor = v.calibration != CalibVariant::EstimateOnly;
            const bool con = v.calibration == CalibVariant::Full;
            md << mark(est) << " | " << mark(cor) << " | " << mark(con) << " |";
        } else {
            md << mark(v.objective.topology) << " | " << mark(v.objective.regression) << " | "
               << mark(v.objective.contrastive) << " |";
        }
        for (const auto& m : metric_cols) md << " " << cell_text(rows, tr.variant, m) << " |";
        md << "\n";
    }
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + p.string());
    os << text;
}

} // namespace

std::vector<AggregateRow> write_summary(const fs::path& out) {
    const auto cells = collect_cells(out);
    if (cells.empty()) throw ConfigError("no result cells under " + out.string());
    const auto rows = aggregate(cells);

    std::ostringstream csv;
    csv << "variant,metric,mean,std_over_folds,std_over_seeds,n_folds,n_seeds,n_cells,n_failed\n";
    for (const auto& r : rows) {
        csv << r.variant << "," << r.metric << "," << format_double(r.mean) << "," << format_double(r.std_over_folds) << ","
            << format_double(r.std_over_seeds) << "," << r.n_folds << "," << r.n_seeds << "," << r.n_cells << ","
            << r.n_failed << "\n";
    }
    write_file(out / "summary.csv", csv.str());

    std::set<std::string> variants;
    std::set<std::string> metric_set;
    for (const auto& r : rows) {
        variants.insert(r.variant);
        if (r.metric.rfind("delta_sq", 0) != 0) metric_set.insert(r.metric);
    }
    for (const auto& c : cells) variants.insert(c.variant);
    std::vector<std::string> metric_cols;
    if (metric_set.count("pcc_acg")) metric_cols.push_back("pcc_acg");
    for (const auto& m : metric_set)
        if (m.rfind("pcc_heg@", 0) == 0) metric_cols.push_back(m);
    for (const char* m : {"mse", "mae"})
        if (metric_set.count(m)) metric_cols.push_back(m);

    std::ostringstream md;
    md << "# Experiment summary\n\n";
    md << "Values are mean ± std over folds (per-fold values averaged over replicates), followed by the std over "
          "replicates (per-replicate values averaged over folds).\n\n";
    if (fs::exists(out / "config.json")) {
        const auto cfg = read_json(out / "config.json");
        md << "## Settings\n\n";
        md << "- encoder: " << cfg.value("encoder", nlohmann::json::object()).dump() << "\n";
        md << "- loss: " << cfg.value("loss", nlohmann::json::object()).dump() << "\n";
        md << "- stage-1 training: " << cfg.value("train", nlohmann::json::object()).dump() << "\n";
        md << "- calibration: " << cfg.value("calibration", nlohmann::json::object()).dump() << "\n";
        md << "- root seed: " << cfg.value("seed", 0) << ", replicates: " << cfg.value("seeds", nlohmann::json::array()).dump()
           << "\n";
        if (cfg.contains("synth") && !cfg["synth"].is_null()) md << "- synthetic cohort: " << cfg["synth"].dump() << "\n";
        md << "\n";
    }

    const std::vector<TableRow> cal_layout{{"Estimate only", "cal_estimate_only"},
                                           {"Correction only", "cal_correction_only"},
                                           {"No constraint", "cal_no_constraint"},
                                           {"Estimate + Correction", "full"}};
    const std::vector<TableRow> obj_layout{{"Regression + Contrastive", "obj_reg_con"},
                                           {"Topology + Regression", "obj_topo_reg"},
                                           {"Contrastive + Topology", "obj_con_topo"},
                                           {"Regression only", "obj_reg_only"},
                                           {"Full objective", "full"}};
    auto present = [&](const std::vector<TableRow>& layout) {
        std::vector<TableRow> keep;
        for (const auto& r : layout)
            if (variants.count(r.variant)) keep.push_back(r);
        return keep;
    };
    const auto cal_rows = present(cal_layout);
    if (!cal_rows.empty()) {
        md << "## Calibration designs\n\n";
        table(md, rows, metric_cols, cal_rows, true);
        md << "\n";
    }
    const auto obj_rows = present(obj_layout);
    if (!obj_rows.empty()) {
        md << "## Representation objectives\n\n";
        table(md, rows, metric_cols, obj_rows, false);
        md << "\n";
    }
    std::vector<std::string> others;
    for (const auto& v : variants) {
        bool known = false;
        for (const auto& r : cal_layout) known |= r.variant == v;
        for (const auto& r : obj_layout) known |= r.variant == v;
        if (!known) others.push_back(v);
    }
    if (!others.empty()) {
        md << "## Other variants\n\n| Variant |";
        for (const auto& m : metric_cols) md << " " << m << " |";
        md << "\n|---|";
        for (std::size_t i = 0; i < metric_cols.size(); ++i) md << "---|";
        md << "\n";
        for (const auto& v : others) {
            md << "| " << v << " |";
            for (const auto& m : metric_cols) md << " " << cell_text(rows, v, m) << " |";
            md << "\n";
        }
        md << "\n";
    }

    md << "## Correction magnitude\n\n| Variant | mean ‖Δ‖² train | mean ‖Δ‖² held-out |\n|---|---|---|\n";
    for (const auto& v : variants) {
        const auto tr = find_row(rows, v, "delta_sq_train");
        const auto te = find_row(rows, v, "delta_sq_test");
        if (!tr || !te) continue;
        md << "| " << v << " | " << format_double(tr->mean) << " | " << format_double(te->mean) << " |\n";
    }
    md << "\n";

    std::size_t n_failed = 0;
    for (const auto& c : cells) n_failed += c.ok ? 0 : 1;
    md << "## Cells\n\n" << cells.size() << " cells, " << n_failed << " failed.\n";
    if (n_failed) {
        md << "\n| Variant | Fold | Replicate | Kind | Error |\n|---|---|---|---|---|\n";
        for (const auto& c : cells) {
            if (c.ok) continue;
            md << "| " << c.variant << " | " << c.fold << " | " << c.replicate << " | " << c.error_kind << " | " << c.error
               << " |\n";
        }
    }
    write_file(out / "summary.md", md.str());

    for (const auto& v : variants) {
        std::ostringstream q;
        q << "replicate," << "slide_id,n_defined,min,q1,median,q3,max\n";
        for (const auto& c : cells) {
            if (c.variant != v || !c.ok) continue;
            const std::vector<SlideQuartiles> one{{c.fold, quartiles(c.per_gene_pcc)}};
            const std::string body = slide_quartiles_csv(one);
            q << c.replicate << "," << body.substr(body.find('\n') + 1);
        }
        if (fs::is_directory(out / v)) write_file(out / v / "slide_quartiles.csv", q.str());
    }
    return rows;
}

} // namespace chrep
