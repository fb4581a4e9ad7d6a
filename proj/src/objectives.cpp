#include "chrep/objectives.hpp"

#include "chrep/error.hpp"
#include "chrep/rng.hpp"
#include "chrep/warnings.hpp"

#include <cmath>
#include <numeric>

namespace chrep {

void LossWeights::validate() const {
    for (double l : {lambda_mae, lambda_pcc, lambda_con, lambda_reg, lambda_spa})
        if (!(l >= 0.0)) throw ConfigError("loss weights must be >= 0");
    if (alpha.empty()) throw ConfigError("loss: alpha needs one entry per hop (h_hop >= 1)");
    if (k_knn < 1) throw ConfigError("loss: k_knn must be >= 1");
}

void to_json(nlohmann::json& j, const LossWeights& w) {
    j = nlohmann::json{{"lambda_mae", w.lambda_mae}, {"lambda_pcc", w.lambda_pcc}, {"lambda_con", w.lambda_con},
                       {"lambda_reg", w.lambda_reg}, {"lambda_spa", w.lambda_spa}, {"alpha", w.alpha},
                       {"h_hop", w.h_hop()},         {"k_knn", w.k_knn}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
    w.lambda_mae = j.value("lambda_mae", w.lambda_mae);
    w.lambda_pcc = j.value("lambda_pcc", w.lambda_pcc);
    w.lambda_con = j.value("lambda_con", w.lambda_con);
    w.lambda_reg = j.value("lambda_reg", w.lambda_reg);
    w.lambda_spa = j.value("lambda_spa", w.lambda_spa);
    w.alpha = j.value("alpha", w.alpha);
    w.k_knn = j.value("k_knn", w.k_knn);
    if (j.contains("h_hop") && j["h_hop"].get<std::size_t>() != w.alpha.size()) {
        throw ConfigError("loss: h_hop must equal the length of alpha");
    }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"adam", c.adam}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("adam")) c.adam = j["adam"].get<AdamConfig>();
    c.adam.lr = j.value("lr", c.adam.lr);
    c.seed = j.value("seed", c.seed);
}

namespace {

double column_variance(const Tensor2& m, std::size_t c) {
    const double n = static_cast<double>(m.rows());
    double mu = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) mu += m(r, c);
    mu /= n;
    double v = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) v += (m(r, c) - mu) * (m(r, c) - mu);
    return v / n;
}

} // namespace

ad::Var loss_reg(ad::Var pred, ad::Var target, double lambda_mae, double lambda_pcc) {
    ad::Graph& g = *pred.graph();
    if (!pred.value().same_shape(target.value())) {
        throw ShapeError("loss_reg: prediction " + pred.value().shape_str() + " vs target " + target.value().shape_str());
    }
    const std::size_t b = pred.rows(), genes = pred.cols();
    ad::Var diff = ad::sub(pred, target);
    ad::Var loss = ad::mean(ad::square(diff));
    if (lambda_mae != 0.0) loss = ad::add(loss, ad::scale(ad::mean(ad::abs(diff)), lambda_mae));
    if (lambda_pcc == 0.0) return loss;
    if (b < 2) {
        warn("loss_reg: batch of " + std::to_string(b) + " row(s); PCC term skipped");
        return loss;
    }

    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < genes; ++j)
        if (column_variance(pred.value(), j) >= kPccAdmissibleVar && column_variance(target.value(), j) >= kPccAdmissibleVar)
            keep.push_back(j);
    if (keep.empty()) return ad::add_scalar(loss, lambda_pcc);

    ad::Var p = pred, t = target;
    if (keep.size() != genes) {
        Tensor2 sel(genes, keep.size());
        for (std::size_t c = 0; c < keep.size(); ++c) sel(keep[c], c) = 1.0;
        ad::Var s = g.constant(std::move(sel));
        p = ad::matmul(pred, s);
        t = ad::matmul(target, s);
    }
    ad::Var pc = ad::sub(p, ad::col_mean(p));
    ad::Var tc = ad::sub(t, ad::col_mean(t));
    ad::Var cov = ad::col_sum(ad::mul(pc, tc));
    ad::Var vp = ad::col_sum(ad::square(pc));
    ad::Var vt = ad::col_sum(ad::square(tc));
    ad::Var pcc = ad::div(cov, ad::sqrt(ad::mul(vp, vt)), 0.0);
    // λ(1 − mean PCC)
    ad::Var term = ad::add_scalar(ad::scale(ad::mean(pcc), -lambda_pcc), lambda_pcc);
    return ad::add(loss, term);
}

ad::Var loss_contrastive(ad::Var p_m, ad::Var p_g, ad::Var tau) {
    ad::Graph& g = *p_m.graph();
    if (!p_m.value().same_shape(p_g.value())) {
        throw ShapeError("loss_contrastive: " + p_m.value().shape_str() + " vs " + p_g.value().shape_str());
    }
    if (tau.rows() != 1 || tau.cols() != 1) throw ShapeError("loss_contrastive: tau must be 1x1");
    if (!(tau.item() > 0.0)) throw ContractError("loss_contrastive: temperature must be positive");
    for (const ad::Var* v : {&p_m, &p_g}) {
        const Tensor2& m = v->value();
        for (std::size_t r = 0; r < m.rows(); ++r) {
            double ss = 0.0;
            for (double x : m.row(r)) ss += x * x;
            if (std::abs(std::sqrt(ss) - 1.0) > 1e-9) {
                throw ContractError("loss_contrastive: row " + std::to_string(r) + " is not unit-norm");
            }
        }
    }
    const std::size_t b = p_m.rows();
    ad::Var logits = ad::div(ad::matmul(p_m, p_g, false, true), tau, 0.0);
    ad::Var eye = g.constant(Tensor2::identity(b));
    const double inv_b = 1.0 / static_cast<double>(b);
    ad::Var l_mg = ad::scale(ad::sum(ad::mul(ad::row_log_softmax(logits), eye)), -inv_b);
    ad::Var l_gm = ad::scale(ad::sum(ad::mul(ad::row_log_softmax(ad::transpose(logits)), eye)), -inv_b);
    return ad::scale(ad::add(l_mg, l_gm), 0.5);
}

Tensor2 normalize_similarity(const Tensor2& m) {
    Tensor2 out = m;
    for (std::size_t i = 0; i < std::min(m.rows(), m.cols()); ++i) out(i, i) = 0.0;
    double ss = 0.0;
    for (double v : out.data()) ss += v * v;
    const double n = std::sqrt(ss);
    if (n < 1e-12) {
        out.fill(0.0);
        return out;
    }
    for (auto& v : out.data()) v /= n;
    return out;
}

ad::Var loss_spa(ad::Var f_g, const TopoPrior& prior) {
    ad::Graph& g = *f_g.graph();
    const std::size_t b = f_g.rows();
    if (!(prior.a_topo.rows() == b && prior.a_topo.cols() == b)) {
        throw ShapeError("loss_spa: prior is " + prior.a_topo.shape_str() + " for batch of " + std::to_string(b));
    }
    if (b < 2) {
        warn("loss_spa: batch smaller than 2; topology loss is 0");
        return g.constant(Tensor2::scalar(0.0));
    }
    Tensor2 offdiag(b, b, 1.0);
    for (std::size_t i = 0; i < b; ++i) offdiag(i, i) = 0.0;
    ad::Var n = ad::row_l2_normalize(f_g);
    ad::Var s = ad::mul(ad::matmul(n, n, false, true), g.constant(std::move(offdiag)));
    ad::Var frob = ad::sqrt(ad::sum(ad::square(s)));
    ad::Var s_norm = frob.item() < 1e-12 ? g.constant(Tensor2(b, b)) : ad::div(s, frob, 0.0);
    ad::Var a_norm = g.constant(normalize_similarity(prior.a_topo));
    return ad::sum(ad::square(ad::sub(s_norm, a_norm)));
}

Batch make_batch(const PreparedSlide& slide, std::span<const std::size_t> rows) {
    Batch b;
    b.feats = slide.data.feats.gather_rows(rows);
    b.coords = slide.data.coords.gather_rows(rows);
    b.coords_unit = slide.data.coords_unit.gather_rows(rows);
    b.g_std = slide.g_std.gather_rows(rows);
    return b;
}

namespace {

template <typename F>
ad::Var named_term(const char* name, F&& f) {
    try {
        ad::Var v = f();
        if (!std::isfinite(v.item())) throw NumericError(std::string(name) + ": non-finite value");
        return v;
    } catch (const NumericError& e) {
        throw NumericError(std::string("loss term ") + name + ": " + e.what());
    }
}

} // namespace

LossTerms total_loss(ad::Graph& g, const Batch& batch, const ModelVars& m, const LossWeights& w,
                     const TopoPrior* prior) {
    LossTerms out;
    const bool need_img = w.lambda_reg > 0.0 || w.lambda_con > 0.0;
    const bool need_gene = w.lambda_con > 0.0 || w.lambda_spa > 0.0;
    ad::Var f_h, f_g;
    ad::Var target = g.constant(batch.g_std);
    if (need_img) f_h = encode_image(g.constant(batch.feats), m);
    if (need_gene) f_g = encode_gene(target, m);

    ad::Var total = g.constant(Tensor2::scalar(0.0));
    if (w.lambda_reg > 0.0) {
        out.reg = named_term("L_reg", [&] { return loss_reg(regress(f_h, m), target, w.lambda_mae, w.lambda_pcc); });
        total = ad::add(total, ad::scale(out.reg, w.lambda_reg));
    }
    if (w.lambda_con > 0.0) {
        out.con = named_term("L_con", [&] {
            ad::Var f_m = fuse(f_h, encode_coord(g.constant(batch.coords_unit), m), m);
            return loss_contrastive(project(f_m, m.proj_m), project(f_g, m.proj_g), temperature(m));
        });
        total = ad::add(total, ad::scale(out.con, w.lambda_con));
    }
    if (w.lambda_spa > 0.0) {
        out.spa = named_term("L_spa", [&] {
            if (prior != nullptr) return loss_spa(f_g, *prior);
            const TopoPrior built = build_topo_prior(batch.coords, w.k_knn, w.alpha);
            return loss_spa(f_g, built);
        });
        total = ad::add(total, ad::scale(out.spa, w.lambda_spa));
    }
    out.total = total;
    return out;
}

Stage1Result train_stage1(std::span<const PreparedSlide> train, const EncoderConfig& enc, const LossWeights& w,
                          const TrainConfig& cfg) {
    w.validate();
    if (train.empty()) throw InvalidFold("train_stage1: no training slides");
    if (cfg.batch_size < 2) throw ConfigError("train_stage1: batch_size must be >= 2");
    for (const auto& s : train) {
        if (s.data.feats.cols() != enc.d_img || s.g_std.cols() != enc.g) {
            throw ShapeError("train_stage1: slide " + s.data.slide_id + " does not match the encoder dimensions");
        }
    }
    Stage1Result res{ModelParams::init(enc), {}};
    if (cfg.epochs == 0) return res;

    std::vector<Tensor2> values;
    for (auto& t : res.params.named()) values.push_back(std::move(t.value));
    Adam adam(cfg.adam, values);
    Rng rng(derive_seed(cfg.seed, "stage1/batches"));

    struct BatchRef {
        std::size_t slide;
        std::vector<std::size_t> rows;
    };

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<BatchRef> batches;
        for (std::size_t s = 0; s < train.size(); ++s) {
            std::vector<std::size_t> idx(train[s].data.n_spots());
            std::iota(idx.begin(), idx.end(), 0);
            rng.shuffle(idx);
            for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
                const std::size_t end = std::min(idx.size(), start + cfg.batch_size);
                if (end - start < 2) continue;
                batches.push_back({s, std::vector<std::size_t>(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                                               idx.begin() + static_cast<std::ptrdiff_t>(end))});
            }
        }
        if (batches.empty()) throw InvalidFold("train_stage1: no training slide has 2 or more spots");
        rng.shuffle(batches);

        EpochTrace tr;
        tr.epoch = epoch;
        for (const auto& br : batches) {
            const Batch batch = make_batch(train[br.slide], br.rows);
            ad::Graph g;
            std::vector<ad::Var> leaves;
            leaves.reserve(values.size());
            for (const auto& v : values) leaves.push_back(g.param(v));
            const ModelVars mv = bind_model(res.params, leaves);
            const LossTerms terms = total_loss(g, batch, mv, w);
            g.backward(terms.total);
            std::vector<Tensor2> grads;
            grads.reserve(leaves.size());
            for (const auto& l : leaves) grads.push_back(l.grad());
            adam.step(values, grads);

            if (terms.reg.valid()) tr.reg += terms.reg.item();
            if (terms.con.valid()) tr.con += terms.con.item();
            if (terms.spa.valid()) tr.spa += terms.spa.item();
            tr.total += terms.total.item();
        }
        const double nb = static_cast<double>(batches.size());
        tr.reg /= nb;
        tr.con /= nb;
        tr.spa /= nb;
        tr.total /= nb;
        res.trace.push_back(tr);
    }
    res.params.assign(values);
    return res;
}

Stage1Result train_stage1(const LosoFold& fold, const Cohort& cohort, const EncoderConfig& enc, const LossWeights& w,
                          const TrainConfig& cfg, double scale) {
    if (fold.train_slides.empty()) throw InvalidFold("train_stage1: fold has no training slides");
    for (const auto& s : fold.train_slides)
        if (s == fold.test_slide) throw InvalidFold("train_stage1: test slide listed among training slides");
    const auto slides = prepare_slides(cohort, fold.train_slides, fold.standardizer, scale);
    return train_stage1(slides, enc, w, cfg);
}

std::string trace_csv(std::span<const EpochTrace> trace) {
    std::string s = "epoch,L_reg,L_con,L_spa,total\n";
    for (const auto& t : trace) {
        s += std::to_string(t.epoch) + "," + format_double(t.reg) + "," + format_double(t.con) + "," +
             format_double(t.spa) + "," + format_double(t.total) + "\n";
    }
    return s;
}

} // namespace chrep
