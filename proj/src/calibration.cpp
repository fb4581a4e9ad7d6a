#include "chrep/calibration.hpp"

#include "chrep/error.hpp"
#include "chrep/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace chrep {

namespace fs = std::filesystem;

void CalibConfig::validate() const {
    if (k_gallery < 1) throw ConfigError("calibration: k_gallery must be >= 1");
    if (!(tau_t > 0.0)) throw ConfigError("calibration: tau_t must be positive");
    if (!(lambda_delta >= 0.0)) throw ConfigError("calibration: lambda_delta must be >= 0");
    if (hidden < 1) throw ConfigError("calibration: hidden must be >= 1");
    if (batch_size < 2) throw ConfigError("calibration: batch_size must be >= 2");
}

void to_json(nlohmann::json& j, const CalibConfig& c) {
    j = nlohmann::json{{"k_gallery", c.k_gallery}, {"tau_t", c.tau_t},   {"lambda_delta", c.lambda_delta},
                       {"hidden", c.hidden},       {"epochs", c.epochs}, {"batch_size", c.batch_size},
                       {"adam", c.adam},           {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, CalibConfig& c) {
    c.k_gallery = j.value("k_gallery", c.k_gallery);
    c.tau_t = j.value("tau_t", c.tau_t);
    c.lambda_delta = j.value("lambda_delta", c.lambda_delta);
    c.hidden = j.value("hidden", c.hidden);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("adam")) c.adam = j["adam"].get<AdamConfig>();
    c.adam.lr = j.value("lr", c.adam.lr);
    c.seed = j.value("seed", c.seed);
}

std::optional<std::size_t> GalleryBank::find(const SpotKey& key) const {
    for (std::size_t i = 0; i < origin.size(); ++i)
        if (origin[i] == key) return i;
    return std::nullopt;
}

Tensor2 l2_normalize_rows(const Tensor2& m) {
    Tensor2 out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        double ss = 0.0;
        for (double v : m.row(r)) ss += v * v;
        const double d = std::max(std::sqrt(ss), ad::kGuardEps);
        for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(r, c) / d;
    }
    return out;
}

GalleryBank build_gallery(const ModelParams& params, std::span<const PreparedSlide> train, std::string fold_id) {
    if (train.empty()) throw InvalidFold("build_gallery: empty training set");
    GalleryBank bank;
    bank.fold_id = std::move(fold_id);
    std::vector<Tensor2> zs, gs;
    for (const auto& s : train) {
        zs.push_back(encode_image(s.data.feats, params));
        gs.push_back(s.g_std);
        for (const auto& id : s.data.spot_ids) bank.origin.push_back({s.data.slide_id, id});
    }
    bank.z = vstack(zs);
    bank.g_std = vstack(gs);
    if (bank.z.rows() == 0) throw InvalidFold("build_gallery: empty training set");
    bank.z_unit = l2_normalize_rows(bank.z);
    return bank;
}

GalleryBank build_gallery(const ModelParams& params, const LosoFold& fold, const Cohort& cohort, double scale) {
    if (fold.train_slides.empty()) throw InvalidFold("build_gallery: fold has no training slides");
    const auto slides = prepare_slides(cohort, fold.train_slides, fold.standardizer, scale);
    return build_gallery(params, slides, fold.test_slide);
}

namespace {

std::vector<double> unit(std::span<const double> z) {
    double ss = 0.0;
    for (double v : z) ss += v * v;
    const double d = std::max(std::sqrt(ss), ad::kGuardEps);
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] / d;
    return out;
}

constexpr std::size_t kNoExclude = static_cast<std::size_t>(-1);

Neighbors top_k(std::span<const double> q_unit, const GalleryBank& bank, std::size_t k, std::size_t exclude, std::vector<double>& sims, std::vector<std::size_t>& order) {
    const std::size_t n = bank.size();
    const std::size_t d = bank.z_unit.cols();
    if (q_unit.size() != d) {
        throw ShapeError("retrieve: query has " + std::to_string(q_unit.size()) + " dims, bank has " + std::to_string(d));
    }
    if (k < 1) throw ConfigError("retrieve: k must be >= 1");
    sims.resize(n);
    order.clear();
    for (std::size_t j = 0; j < n; ++j) {
        const double* row = bank.z_unit.data().data() + j * d;
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += q_unit[c] * row[c];
        sims[j] = s;
        if (j != exclude) order.push_back(j);
    }
    if (order.empty()) throw RetrievalError("retrieve: no candidates left in the gallery");
    const std::size_t kk = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk), order.end(),
                      [&](std::size_t a, std::size_t b) { return sims[a] > sims[b] || (sims[a] == sims[b] && a < b); });
    Neighbors nb;
    nb.index.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk));
    nb.sim.reserve(kk);
    for (std::size_t i : nb.index) nb.sim.push_back(sims[i]);
    return nb;
}

void weighted_sum(const GalleryBank& bank, const Neighbors& nb, std::span<const double> w, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t t = 0; t < nb.index.size(); ++t) {
        const auto row = bank.g_std.row(nb.index[t]);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += w[t] * row[j];
    }
}

} // namespace

Neighbors retrieve(std::span<const double> z_q, const GalleryBank& bank, std::size_t k,
                   std::optional<std::size_t> exclude) {
    std::vector<double> sims;
    std::vector<std::size_t> order;
    return top_k(unit(z_q), bank, k, exclude.value_or(kNoExclude), sims, order);
}

Neighbors retrieve(std::span<const double> z_q, const GalleryBank& bank, std::size_t k, const SpotKey& exclude) {
    return retrieve(z_q, bank, k, bank.find(exclude));
}

std::vector<double> neighbor_weights(std::span<const double> sims, double tau_t) {
    if (!(tau_t > 0.0)) throw ConfigError("neighbor_weights: tau_t must be positive");
    if (sims.empty()) return {};
    const double m = *std::max_element(sims.begin(), sims.end());
    std::vector<double> w(sims.size());
    double total = 0.0;
    for (std::size_t i = 0; i < sims.size(); ++i) total += w[i] = std::exp((sims[i] - m) / tau_t);
    for (auto& v : w) v /= total;
    return w;
}

EstimateResult estimate(std::span<const double> z_q, const GalleryBank& bank, const CalibConfig& cfg,
                        std::optional<std::size_t> exclude) {
    EstimateResult r;
    r.neighbors = retrieve(z_q, bank, cfg.k_gallery, exclude);
    r.weights = neighbor_weights(r.neighbors.sim, cfg.tau_t);
    r.g.resize(bank.g_std.cols());
    weighted_sum(bank, r.neighbors, r.weights, r.g);
    return r;
}

BatchEstimate estimate_all(const Tensor2& queries, const GalleryBank& bank, const CalibConfig& cfg,
                           bool leave_self_out) {
    if (leave_self_out && queries.rows() != bank.size()) {
        throw ShapeError("estimate_all: leave-self-out needs one query per bank row");
    }
    const std::size_t n = bank.size();
    std::size_t k = cfg.k_gallery;
    if (leave_self_out) {
        if (n < 2) throw RetrievalError("estimate_all: gallery too small for self-exclusion");
        k = std::min(k, n - 1);
    } else {
        k = std::min(k, n);
    }
    const Tensor2 q_unit = l2_normalize_rows(queries);
    BatchEstimate out;
    out.g = Tensor2(queries.rows(), bank.g_std.cols());
    out.neighbors.resize(queries.rows());
    std::vector<double> sims;
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < queries.rows(); ++i) {
        Neighbors nb = top_k(q_unit.row(i), bank, k, leave_self_out ? i : kNoExclude, sims, order);
        const auto w = neighbor_weights(nb.sim, cfg.tau_t);
        weighted_sum(bank, nb, w, out.g.row(i));
        out.neighbors[i] = std::move(nb.index);
    }
    return out;
}

CorrectionNet CorrectionNet::init(std::size_t d_embed, std::size_t hidden, std::size_t g, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "calib/init"));
    CorrectionNet net;
    net.mlp = make_mlp(d_embed, hidden, g, 2, rng);
    net.mlp.layers.back().w.fill(0.0);
    net.mlp.layers.back().b.fill(0.0);
    return net;
}

Tensor2 CorrectionNet::forward(const Tensor2& z) const {
    return mlp_forward(z, mlp);
}

std::vector<double> CorrectionNet::forward(std::span<const double> z) const {
    return forward(Tensor2::row_vector(z)).vec();
}

TensorArchive CorrectionNet::to_archive() const {
    TensorArchive a;
    a.header["kind"] = "chrep.correction";
    a.header["version"] = 1;
    a.header["layers"] = mlp.layers.size();
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
        a.tensors.push_back({"layer" + std::to_string(i) + ".w", mlp.layers[i].w});
        a.tensors.push_back({"layer" + std::to_string(i) + ".b", mlp.layers[i].b});
    }
    return a;
}

CorrectionNet CorrectionNet::from_archive(const TensorArchive& archive) {
    if (!archive.header.contains("version")) throw InvalidInput("correction checkpoint: missing version field");
    if (archive.header.value("kind", std::string()) != "chrep.correction") {
        throw InvalidInput("correction checkpoint: wrong kind");
    }
    CorrectionNet net;
    const auto layers = archive.header.at("layers").get<std::size_t>();
    for (std::size_t i = 0; i < layers; ++i) {
        Linear l;
        l.w = archive.at("layer" + std::to_string(i) + ".w");
        l.b = archive.at("layer" + std::to_string(i) + ".b");
        net.mlp.layers.push_back(std::move(l));
    }
    return net;
}

CorrectionResult train_correction(const Tensor2& z, const Tensor2& base, const Tensor2& target,
                                  const CalibConfig& cfg, const LossWeights& reg_form) {
    cfg.validate();
    if (z.rows() != base.rows() || z.rows() != target.rows() || !base.same_shape(target)) {
        throw ShapeError("train_correction: z " + z.shape_str() + ", base " + base.shape_str() + ", target " +
                         target.shape_str());
    }
    CorrectionResult res{CorrectionNet::init(z.cols(), cfg.hidden, target.cols(), cfg.seed), {}};
    if (cfg.epochs == 0) return res;

    std::vector<Tensor2> values;
    for (const auto& l : res.net.mlp.layers) {
        values.push_back(l.w);
        values.push_back(l.b);
    }
    Adam adam(cfg.adam, values);
    Rng rng(derive_seed(cfg.seed, "calib/batches"));
    std::vector<std::size_t> idx(z.rows());
    std::iota(idx.begin(), idx.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(idx);
        CalibEpoch tr;
        tr.epoch = epoch;
        std::size_t nb = 0;
        for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(idx.size(), start + cfg.batch_size);
            if (end - start < 2) continue;
            const std::span<const std::size_t> rows(idx.data() + start, end - start);
            ad::Graph g;
            MlpVars mv;
            std::vector<ad::Var> leaves;
            for (std::size_t i = 0; i < values.size(); i += 2) {
                LinearVars lv;
                lv.w = g.param(values[i]);
                lv.b = g.param(values[i + 1]);
                leaves.push_back(lv.w);
                leaves.push_back(lv.b);
                mv.layers.push_back(lv);
            }
            ad::Var delta = mlp_forward(g.constant(z.gather_rows(rows)), mv);
            ad::Var pred = ad::add(g.constant(base.gather_rows(rows)), delta);
            ad::Var reg = loss_reg(pred, g.constant(target.gather_rows(rows)), reg_form.lambda_mae, reg_form.lambda_pcc);
            ad::Var mag = ad::scale(ad::sum(ad::square(delta)), 1.0 / static_cast<double>(rows.size()));
            ad::Var total = cfg.lambda_delta > 0.0 ? ad::add(reg, ad::scale(mag, cfg.lambda_delta)) : reg;
            g.backward(total);
            std::vector<Tensor2> grads;
            for (const auto& l : leaves) grads.push_back(l.grad());
            adam.step(values, grads);
            tr.reg += reg.item();
            tr.delta += mag.item();
            tr.total += total.item();
            ++nb;
        }
        if (nb == 0) throw InvalidFold("train_correction: fewer than 2 training spots");
        tr.reg /= static_cast<double>(nb);
        tr.delta /= static_cast<double>(nb);
        tr.total /= static_cast<double>(nb);
        res.trace.push_back(tr);
    }
    for (std::size_t i = 0; i < res.net.mlp.layers.size(); ++i) {
        res.net.mlp.layers[i].w = values[2 * i];
        res.net.mlp.layers[i].b = values[2 * i + 1];
    }
    return res;
}

CorrectionResult train_correction(const ModelParams& params, const GalleryBank& bank, const CalibConfig& cfg,
                                  const LossWeights& reg_form) {
    const auto before = params.checksum();
    const BatchEstimate base = estimate_all(bank.z, bank, cfg, true);
    CorrectionResult res = train_correction(bank.z, base.g, bank.g_std, cfg, reg_form);
    if (params.checksum() != before) throw ContractError("train_correction: stage-1 parameters changed");
    return res;
}

std::vector<double> predict(std::span<const double> z_q, const GalleryBank& bank, const CorrectionNet& net,
                            const CalibConfig& cfg) {
    auto g = estimate(z_q, bank, cfg).g;
    const auto delta = net.forward(z_q);
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += delta[j];
    return g;
}

Tensor2 predict_all(const Tensor2& queries, const GalleryBank& bank, const CorrectionNet& net, const CalibConfig& cfg) {
    Tensor2 g = estimate_all(queries, bank, cfg, false).g;
    const Tensor2 delta = net.forward(queries);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
    return g;
}

const char* to_string(CalibVariant v) {
    switch (v) {
    case CalibVariant::EstimateOnly: return "estimate_only";
    case CalibVariant::CorrectionOnly: return "correction_only";
    case CalibVariant::NoConstraint: return "no_constraint";
    case CalibVariant::Full: return "estimate_correction";
    }
    return "unknown";
}

std::optional<CalibVariant> calib_variant_from_string(const std::string& s) {
    for (auto v : {CalibVariant::EstimateOnly, CalibVariant::CorrectionOnly, CalibVariant::NoConstraint, CalibVariant::Full})
        if (s == to_string(v)) return v;
    return std::nullopt;
}

namespace {

double mean_sq_rows(const Tensor2& m) {
    if (m.rows() == 0) return 0.0;
    double s = 0.0;
    for (double v : m.data()) s += v * v;
    return s / static_cast<double>(m.rows());
}

} // namespace

CalibrationModel fit_calibration(CalibVariant variant, const ModelParams& params, const GalleryBank& bank,
                                 const CalibConfig& cfg, const LossWeights& reg_form) {
    cfg.validate();
    const auto before = params.checksum();
    CalibrationModel model;
    model.variant = variant;
    model.cfg = cfg;
    if (variant != CalibVariant::Full) model.cfg.lambda_delta = 0.0;
    if (variant != CalibVariant::EstimateOnly) {
        const Tensor2 base = variant == CalibVariant::CorrectionOnly ? regress(bank.z, params)
                                                                     : estimate_all(bank.z, bank, model.cfg, true).g;
        CorrectionResult res = train_correction(bank.z, base, bank.g_std, model.cfg, reg_form);
        model.train_delta_sq = mean_sq_rows(res.net.forward(bank.z));
        model.trace = std::move(res.trace);
        model.net = std::move(res.net);
    }
    if (params.checksum() != before) throw ContractError("fit_calibration: stage-1 parameters changed");
    return model;
}

CalibrationOutput apply_calibration(const CalibrationModel& model, const ModelParams& params, const GalleryBank& bank,
                                    const Tensor2& test_z) {
    CalibrationOutput out;
    out.train_delta_sq = model.train_delta_sq;
    out.trace = model.trace;
    out.net = model.net;
    out.predictions = model.variant == CalibVariant::CorrectionOnly ? regress(test_z, params)
                                                                    : estimate_all(test_z, bank, model.cfg, false).g;
    if (model.net) {
        out.delta = model.net->forward(test_z);
        for (std::size_t i = 0; i < out.predictions.size(); ++i) out.predictions[i] += out.delta[i];
    } else {
        out.delta = Tensor2(test_z.rows(), bank.g_std.cols());
    }
    return out;
}

CalibrationOutput run_calibration(CalibVariant variant, const ModelParams& params, const GalleryBank& bank,
                                  const Tensor2& test_z, const CalibConfig& cfg, const LossWeights& reg_form) {
    return apply_calibration(fit_calibration(variant, params, bank, cfg, reg_form), params, bank, test_z);
}

void write_gallery(const GalleryBank& bank, const fs::path& path) {
    TensorArchive a;
    a.header["kind"] = "chrep.gallery";
    a.header["version"] = 1;
    a.header["fold_id"] = bank.fold_id;
    a.header["d_embed"] = bank.z.cols();
    a.header["G"] = bank.g_std.cols();
    a.header["N_tr"] = bank.size();
    a.tensors.push_back({"z", bank.z});
    a.tensors.push_back({"g_std", bank.g_std});
    write_archive(path, a);
    fs::path origin = path;
    origin.replace_extension(".origin.csv");
    std::ofstream os(origin, std::ios::trunc);
    if (!os) throw IoError("cannot open " + origin.string());
    os << "row,slide_id,spot_id\n";
    for (std::size_t i = 0; i < bank.origin.size(); ++i)
        os << i << "," << bank.origin[i].slide_id << "," << bank.origin[i].spot_id << "\n";
}

GalleryBank read_gallery(const fs::path& path) {
    const TensorArchive a = read_archive(path);
    if (a.header.value("kind", std::string()) != "chrep.gallery") throw InvalidInput(path.string() + ": not a gallery");
    GalleryBank bank;
    bank.fold_id = a.header.value("fold_id", std::string());
    bank.z = a.at("z");
    bank.g_std = a.at("g_std");
    bank.z_unit = l2_normalize_rows(bank.z);
    fs::path origin = path;
    origin.replace_extension(".origin.csv");
    std::ifstream is(origin);
    if (!is) throw IoError("cannot open " + origin.string());
    std::stringstream ss;
    ss << is.rdbuf();
    const auto rows = parse_csv(ss.str());
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != 3) throw InvalidInput(origin.string() + ": malformed row");
        bank.origin.push_back({rows[r][1], rows[r][2]});
    }
    if (bank.origin.size() != bank.z.rows() || bank.g_std.rows() != bank.z.rows()) {
        throw InvalidInput(path.string() + ": row counts disagree");
    }
    return bank;
}

} // namespace chrep
