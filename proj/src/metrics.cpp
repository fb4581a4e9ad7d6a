#include "chrep/metrics.hpp"

#include "chrep/cohort.hpp"
#include "chrep/error.hpp"
#include "chrep/warnings.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace chrep {

std::optional<double> pcc_gene(std::span<const double> truth, std::span<const double> pred) {
    if (truth.size() != pred.size()) {
        throw ShapeError("pcc_gene: lengths " + std::to_string(truth.size()) + " and " + std::to_string(pred.size()));
    }
    const std::size_t n = truth.size();
    if (n < 2) return std::nullopt;
    double mt = 0.0, mp = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mt += truth[i];
        mp += pred[i];
    }
    mt /= static_cast<double>(n);
    mp /= static_cast<double>(n);
    double stt = 0.0, spp = 0.0, stp = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = truth[i] - mt;
        const double b = pred[i] - mp;
        stt += a * a;
        spp += b * b;
        stp += a * b;
    }
    if (stt / static_cast<double>(n) < kPccMinVar || spp / static_cast<double>(n) < kPccMinVar) return std::nullopt;
    const double r = stp / std::sqrt(stt * spp);
    return std::clamp(r, -1.0, 1.0);
}

std::vector<std::optional<double>> pcc_per_gene(const Tensor2& truth, const Tensor2& pred) {
    if (!truth.same_shape(pred)) throw ShapeError("pcc_per_gene: " + truth.shape_str() + " vs " + pred.shape_str());
    std::vector<std::optional<double>> out(truth.cols());
    for (std::size_t j = 0; j < truth.cols(); ++j) out[j] = pcc_gene(truth.col(j), pred.col(j));
    return out;
}

PccSetResult pcc_set(std::span<const std::optional<double>> per_gene, std::span<const std::size_t> genes) {
    PccSetResult r;
    double sum = 0.0;
    auto take = [&](std::size_t j) {
        if (j >= per_gene.size()) throw ShapeError("pcc_set: gene index " + std::to_string(j) + " out of range");
        if (per_gene[j]) {
            sum += *per_gene[j];
            ++r.n_defined;
        } else {
            ++r.n_excluded;
        }
    };
    if (genes.empty()) {
        for (std::size_t j = 0; j < per_gene.size(); ++j) take(j);
    } else {
        for (std::size_t j : genes) take(j);
    }
    r.value = r.n_defined ? sum / static_cast<double>(r.n_defined) : std::numeric_limits<double>::quiet_NaN();
    return r;
}

PccSetResult pcc_set(const Tensor2& truth, const Tensor2& pred, std::span<const std::size_t> genes) {
    return pcc_set(pcc_per_gene(truth, pred), genes);
}

std::vector<std::size_t> heg_set(const Tensor2& truth_lognorm, std::size_t k) {
    const std::size_t g = truth_lognorm.cols();
    if (k > g) {
        warn("heg_set: K=" + std::to_string(k) + " clipped to G=" + std::to_string(g));
        k = g;
    }
    std::vector<double> mean(g, 0.0);
    for (std::size_t r = 0; r < truth_lognorm.rows(); ++r)
        for (std::size_t j = 0; j < g; ++j) mean[j] += truth_lognorm(r, j);
    std::vector<std::size_t> idx(g);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return mean[a] > mean[b]; });
    idx.resize(k);
    return idx;
}

ErrorMetrics error_metrics(const Tensor2& truth_std, const Tensor2& pred) {
    if (!truth_std.same_shape(pred)) throw ShapeError("error_metrics: " + truth_std.shape_str() + " vs " + pred.shape_str());
    if (truth_std.empty()) throw InvalidInput("error_metrics: empty input");
    ErrorMetrics e;
    for (std::size_t i = 0; i < truth_std.size(); ++i) {
        const double d = pred[i] - truth_std[i];
        e.mse += d * d;
        e.mae += std::abs(d);
    }
    e.mse /= static_cast<double>(truth_std.size());
    e.mae /= static_cast<double>(truth_std.size());
    return e;
}

double quantile(std::span<const double> values, double p) {
    if (values.empty()) throw InvalidInput("quantile: empty input");
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    const double pos = std::clamp(p, 0.0, 1.0) * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] + frac * (v[hi] - v[lo]);
}

std::optional<Quartiles> quartiles(std::span<const std::optional<double>> values) {
    std::vector<double> v;
    for (const auto& x : values)
        if (x) v.push_back(*x);
    if (v.empty()) return std::nullopt;
    std::sort(v.begin(), v.end());
    return Quartiles{v.front(), quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75), v.back(), v.size()};
}

std::vector<SlideQuartiles> slide_distribution(const std::map<std::string, std::vector<std::optional<double>>>& per_slide) {
    std::vector<SlideQuartiles> out;
    for (const auto& [id, pccs] : per_slide) out.push_back({id, quartiles(pccs)});
    return out;
}

std::string slide_quartiles_csv(std::span<const SlideQuartiles> rows) {
    std::ostringstream os;
    os << "slide_id,n_defined,min,q1,median,q3,max\n";
    for (const auto& r : rows) {
        os << r.slide_id << ",";
        if (!r.q) {
            os << "0,,,,,\n";
            continue;
        }
        os << r.q->n << "," << format_double(r.q->min) << "," << format_double(r.q->q1) << ","
           << format_double(r.q->median) << "," << format_double(r.q->q3) << "," << format_double(r.q->max) << "\n";
    }
    return os.str();
}

namespace {

nlohmann::json num_or_null(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

double num_or_nan(const nlohmann::json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

} // namespace

void to_json(nlohmann::json& j, const MetricsReport& r) {
    j = nlohmann::json::object();
    j["fold_id"] = r.fold_id;
    j["n_spots"] = r.n_spots;
    j["pcc_acg"] = num_or_null(r.pcc_acg);
    j["n_genes_defined"] = r.n_defined;
    j["n_genes_excluded"] = r.n_excluded;
    nlohmann::json heg = nlohmann::json::object();
    for (const auto& [k, v] : r.pcc_heg) heg[std::to_string(k)] = num_or_null(v);
    j["pcc_heg"] = heg;
    j["mse"] = r.mse;
    j["mae"] = r.mae;
    nlohmann::json genes = nlohmann::json::array();
    for (std::size_t i = 0; i < r.per_gene_pcc.size(); ++i) {
        const std::string name = i < r.gene_names.size() ? r.gene_names[i] : std::to_string(i);
        genes.push_back({{"gene", name}, {"pcc", r.per_gene_pcc[i] ? nlohmann::json(*r.per_gene_pcc[i]) : nlohmann::json(nullptr)}});
    }
    j["per_gene_pcc"] = genes;
}

void from_json(const nlohmann::json& j, MetricsReport& r) {
    r.fold_id = j.at("fold_id").get<std::string>();
    r.n_spots = j.at("n_spots").get<std::size_t>();
    r.pcc_acg = num_or_nan(j.at("pcc_acg"));
    r.n_defined = j.value("n_genes_defined", std::size_t{0});
    r.n_excluded = j.value("n_genes_excluded", std::size_t{0});
    r.pcc_heg.clear();
    for (const auto& [k, v] : j.at("pcc_heg").items()) r.pcc_heg[std::stoul(k)] = num_or_nan(v);
    r.mse = j.at("mse").get<double>();
    r.mae = j.at("mae").get<double>();
    r.gene_names.clear();
    r.per_gene_pcc.clear();
    for (const auto& e : j.value("per_gene_pcc", nlohmann::json::array())) {
        r.gene_names.push_back(e.at("gene").get<std::string>());
        r.per_gene_pcc.push_back(e.at("pcc").is_null() ? std::nullopt : std::optional<double>(e.at("pcc").get<double>()));
    }
}

MetricsReport evaluate(const std::string& fold_id, const Tensor2& truth_std, const Tensor2& pred,
                       const Tensor2& truth_lognorm, std::span<const std::string> gene_names,
                       std::span<const std::size_t> heg_ks) {
    if (!truth_std.same_shape(truth_lognorm)) {
        throw ShapeError("evaluate: standardized " + truth_std.shape_str() + " vs log-normalized " + truth_lognorm.shape_str());
    }
    if (!pred.all_finite()) throw NumericError("evaluate: non-finite prediction");
    MetricsReport r;
    r.fold_id = fold_id;
    r.n_spots = truth_std.rows();
    r.gene_names.assign(gene_names.begin(), gene_names.end());
    r.per_gene_pcc = pcc_per_gene(truth_std, pred);
    const PccSetResult acg = pcc_set(r.per_gene_pcc);
    r.pcc_acg = acg.value;
    r.n_defined = acg.n_defined;
    r.n_excluded = acg.n_excluded;
    for (std::size_t k : heg_ks) {
        const auto genes = heg_set(truth_lognorm, k);
        r.pcc_heg[k] = pcc_set(r.per_gene_pcc, genes).value;
    }
    const ErrorMetrics e = error_metrics(truth_std, pred);
    r.mse = e.mse;
    r.mae = e.mae;
    return r;
}

std::string per_gene_pcc_csv(const std::string& slide_id, const MetricsReport& r) {
    std::ostringstream os;
    os << "slide_id,gene,pcc,defined\n";
    for (std::size_t i = 0; i < r.per_gene_pcc.size(); ++i) {
        const std::string name = i < r.gene_names.size() ? r.gene_names[i] : std::to_string(i);
        os << slide_id << "," << name << ",";
        if (r.per_gene_pcc[i]) {
            os << format_double(*r.per_gene_pcc[i]) << ",1\n";
        } else {
            os << ",0\n";
        }
    }
    return os.str();
}

} // namespace chrep
