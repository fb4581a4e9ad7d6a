#include "chrep/autodiff.hpp"
#include "chrep/cohort.hpp"
#include "chrep/error.hpp"
#include "chrep/gradcheck.hpp"
#include "chrep/objectives.hpp"
#include "chrep/rng.hpp"
#include "chrep/synth.hpp"
#include "chrep/topology.hpp"
#include "chrep/warnings.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

using namespace chrep;

namespace {

double value_of(const std::function<ad::Var(ad::Graph&)>& f) {
    ad::Graph g;
    return f(g).item();
}

Tensor2 unit_rows(Tensor2 t) {
    for (std::size_t i = 0; i < t.rows(); ++i) {
        double n = 0;
        for (double v : t.row(i)) n += v * v;
        for (double& v : t.row(i)) v /= std::sqrt(n);
    }
    return t;
}

// All-pairs hop counts by Floyd-Warshall.
std::vector<std::vector<std::size_t>> hop_distances(const Tensor2& a) {
    const std::size_t n = a.rows();
    const std::size_t inf = std::numeric_limits<std::size_t>::max() / 4;
    std::vector<std::vector<std::size_t>> d(n, std::vector<std::size_t>(n, inf));
    for (std::size_t i = 0; i < n; ++i) {
        d[i][i] = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (a(i, j) != 0.0) d[i][j] = 1;
    }
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
    return d;
}

Tensor2 random_graph(std::size_t n, double p, Rng& rng) {
    Tensor2 a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (rng.uniform() < p) a(i, j) = a(j, i) = 1.0;
    return a;
}

EncoderConfig tiny_encoder(std::size_t d_img, std::size_t g) {
    EncoderConfig c;
    c.d_img = d_img;
    c.d_hidden = 8;
    c.d_embed = 6;
    c.d_proj = 4;
    c.g = g;
    c.seed = 2;
    return c;
}

} // namespace

TEST_SUITE("objectives") {

TEST_CASE("regression loss examples") {
    const Tensor2 t = Tensor2::from_rows({{1}, {2}, {3}, {4}});
    const Tensor2 p = Tensor2::from_rows({{1}, {3}, {2}, {4}});
    const double v = value_of([&](ad::Graph& g) { return loss_reg(g.constant(p), g.constant(t), 0.0, 1.0); });
    CHECK(std::abs(v - 0.7) < 1e-12);
    const double w = value_of([&](ad::Graph& g) { return loss_reg(g.constant(p), g.constant(t), 0.5, 0.0); });
    CHECK(std::abs(w - 0.75) < 1e-12);

    Rng rng(3);
    const Tensor2 x = testing::random_tensor(6, 3, rng);
    CHECK(std::abs(value_of([&](ad::Graph& g) { return loss_reg(g.constant(x), g.constant(x), 0.5, 0.5); })) < 1e-12);
    Tensor2 neg = x;
    for (auto& e : neg.data()) e = -e;
    const double flip = value_of([&](ad::Graph& g) { return loss_reg(g.constant(neg), g.constant(x), 0.0, 0.7); });
    double mse = 0;
    for (double e : x.data()) mse += 4 * e * e;
    mse /= static_cast<double>(x.size());
    CHECK(std::abs(flip - (mse + 2 * 0.7)) < 1e-12);
    CHECK_THROWS_AS(value_of([&](ad::Graph& g) { return loss_reg(g.constant(x), g.constant(Tensor2(6, 2)), 0.5, 0.5); }),
                    ShapeError);
}

TEST_CASE("regression loss with degenerate genes or a single row") {
    const Tensor2 t = Tensor2::from_rows({{1, 5}, {2, 5}, {3, 5}});
    const Tensor2 p = Tensor2::from_rows({{1, 5}, {2, 5}, {3, 5}});
    CHECK(std::abs(value_of([&](ad::Graph& g) { return loss_reg(g.constant(p), g.constant(t), 0.0, 1.0); })) < 1e-12);
    const Tensor2 c = Tensor2::from_rows({{5}, {5}, {5}});
    CHECK(std::abs(value_of([&](ad::Graph& g) { return loss_reg(g.constant(c), g.constant(c), 0.0, 0.4); }) - 0.4) < 1e-12);
    take_warnings();
    const Tensor2 one = Tensor2::from_rows({{1, 2}});
    const Tensor2 other = Tensor2::from_rows({{2, 2}});
    CHECK(std::abs(value_of([&](ad::Graph& g) { return loss_reg(g.constant(one), g.constant(other), 0.0, 1.0); }) - 0.5) <
          1e-12);
    CHECK(take_warnings().size() == 1);
}

TEST_CASE("regression loss is non-negative") {
    Rng rng(9);
    for (int i = 0; i < 30; ++i) {
        const Tensor2 a = testing::random_tensor(5, 3, rng);
        const Tensor2 b = testing::random_tensor(5, 3, rng);
        CHECK(value_of([&](ad::Graph& g) { return loss_reg(g.constant(a), g.constant(b), 0.5, 0.5); }) >= 0.0);
    }
}

TEST_CASE("contrastive loss closed forms") {
    auto con = [](const Tensor2& a, const Tensor2& b, double tau) {
        return value_of([&](ad::Graph& g) {
            return loss_contrastive(g.constant(a), g.constant(b), g.constant(Tensor2::scalar(tau)));
        });
    };
    CHECK(std::abs(con(Tensor2::from_rows({{1, 0}}), Tensor2::from_rows({{0, 1}}), 0.07)) < 1e-15);
    for (std::size_t b : {2, 4, 8}) {
        Tensor2 same(b, 3);
        for (std::size_t i = 0; i < b; ++i) same(i, 1) = 1.0;
        CHECK(std::abs(con(same, same, 0.5) - std::log(static_cast<double>(b))) < 1e-10);
    }
    const Tensor2 eye = Tensor2::identity(2);
    CHECK(std::abs(con(eye, eye, 1.0) + std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))) < 1e-12);
    CHECK(std::abs(con(eye, eye, 1.0) - 0.31326168751822286) < 1e-8);
    CHECK_THROWS_AS(con(Tensor2::from_rows({{2, 0}, {0, 1}}), eye, 1.0), ContractError);
}

TEST_CASE("contrastive loss is invariant to a shared rotation") {
    Rng rng(17);
    const Tensor2 a = unit_rows(testing::random_tensor(5, 2, rng));
    const Tensor2 b = unit_rows(testing::random_tensor(5, 2, rng));
    const double th = 0.9;
    const Tensor2 r = Tensor2::from_rows({{std::cos(th), -std::sin(th)}, {std::sin(th), std::cos(th)}});
    auto rot = [&](const Tensor2& x) {
        Tensor2 y(x.rows(), 2);
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < 2; ++j) y(i, j) = x(i, 0) * r(0, j) + x(i, 1) * r(1, j);
        return y;
    };
    auto con = [](const Tensor2& x, const Tensor2& y) {
        return value_of([&](ad::Graph& g) {
            return loss_contrastive(g.constant(x), g.constant(y), g.constant(Tensor2::scalar(0.3)));
        });
    };
    const double base = con(a, b);
    CHECK(base >= 0.0);
    CHECK(std::abs(con(rot(a), rot(b)) - base) < 1e-10);
}

TEST_CASE("kNN graph") {
    const Tensor2 line = Tensor2::from_rows({{0, 0}, {1, 0}, {2, 0}});
    CHECK(build_knn_graph(line, 1) == Tensor2::from_rows({{0, 1, 0}, {1, 0, 1}, {0, 1, 0}}));
    Rng rng(4);
    const Tensor2 pts = testing::random_tensor(6, 2, rng);
    Tensor2 full(6, 6, 1.0);
    for (std::size_t i = 0; i < 6; ++i) full(i, i) = 0.0;
    CHECK(build_knn_graph(pts, 5) == full);
    take_warnings();
    CHECK(build_knn_graph(pts, 9) == full);
    CHECK(take_warnings().size() == 1);
    const Tensor2 dup = Tensor2::from_rows({{0, 0}, {0, 0}, {3, 0}});
    CHECK(build_knn_graph(dup, 1) == Tensor2::from_rows({{0, 1, 1}, {1, 0, 0}, {1, 0, 0}}));
}

TEST_CASE("kNN graph is relabeling equivariant") {
    Rng rng(21);
    for (int t = 0; t < 10; ++t) {
        const Tensor2 pts = testing::random_tensor(9, 2, rng);
        std::vector<std::size_t> perm(9);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        Tensor2 pp(9, 2);
        for (std::size_t i = 0; i < 9; ++i) pp(i, 0) = pts(perm[i], 0), pp(i, 1) = pts(perm[i], 1);
        const Tensor2 a = build_knn_graph(pts, 3);
        const Tensor2 b = build_knn_graph(pp, 3);
        for (std::size_t i = 0; i < 9; ++i)
            for (std::size_t j = 0; j < 9; ++j) CHECK(b(i, j) == a(perm[i], perm[j]));
    }
}

TEST_CASE("multi-hop shells") {
    const Tensor2 path = Tensor2::from_rows({{0, 1, 0}, {1, 0, 1}, {0, 1, 0}});
    const auto hops = multihop(path, 2);
    REQUIRE(hops.size() == 2);
    CHECK(hops[0] == path);
    CHECK(hops[1] == Tensor2::from_rows({{0, 0, 1}, {0, 0, 0}, {1, 0, 0}}));
    const auto one = multihop(path, 1);
    REQUIRE(one.size() == 1);
    CHECK(one[0] == path);
}

TEST_CASE("multi-hop shells match a shortest-path brute force") {
    Rng rng(99);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 2 + rng.below(11);
        const std::size_t h = 1 + rng.below(4);
        const Tensor2 a = random_graph(n, rng.uniform(0.1, 0.6), rng);
        const auto hops = multihop(a, h);
        const auto d = hop_distances(a);
        REQUIRE(hops.size() == h);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                std::size_t members = 0;
                for (std::size_t k = 0; k < h; ++k) {
                    CHECK(hops[k](i, j) == hops[k](j, i));
                    CHECK(hops[k](i, j) == (d[i][j] == k + 1 ? 1.0 : 0.0));
                    members += hops[k](i, j) != 0.0;
                }
                CHECK(members <= 1);
                if (i == j) CHECK(members == 0);
            }
    }
}

TEST_CASE("topology loss examples") {
    const Tensor2 line = Tensor2::from_rows({{0, 0}, {1, 0}, {2, 0}});
    const std::vector<double> alpha{1.0, 0.5};
    const TopoPrior prior = build_topo_prior(line, 1, alpha);
    CHECK(prior.a_topo == Tensor2::from_rows({{0, 1, 0.5}, {1, 0, 1}, {0.5, 1, 0}}));

    const Tensor2 fg = Tensor2::from_rows({{1, 0}, {1, 0}, {0, 1}});
    const double got = value_of([&](ad::Graph& g) { return loss_spa(g.constant(fg), prior); });
    const double na = std::sqrt(2 * (1.0 + 1.0 + 0.25));
    const double ns = std::sqrt(2.0);
    const double s01 = 1.0 / ns, a01 = 1.0 / na, a12 = 1.0 / na, a02 = 0.5 / na;
    const double want = 2 * ((s01 - a01) * (s01 - a01) + a12 * a12 + a02 * a02);
    CHECK(std::abs(got - want) < 1e-12);

    TopoPrior empty;
    empty.a_topo = Tensor2(3, 3);
    const Tensor2 ortho = Tensor2::from_rows({{1, 0, 0}, {0, 2, 0}, {0, 0, 3}});
    CHECK(std::abs(value_of([&](ad::Graph& g) { return loss_spa(g.constant(ortho), empty); })) < 1e-15);

    // Rows whose cosine similarity reproduces the prior exactly.
    TopoPrior eq;
    eq.a_topo = Tensor2::from_rows({{0, 0.5, 0}, {0.5, 0, 0}, {0, 0, 0}});
    const double c = std::sqrt(0.5);
    const Tensor2 match = Tensor2::from_rows({{1, 0, 0}, {c, c, 0}, {0, 0, 1}});
    CHECK(value_of([&](ad::Graph& g) { return loss_spa(g.constant(match), eq); }) < 1e-10);

    TopoPrior single;
    single.a_topo = Tensor2(1, 1);
    take_warnings();
    CHECK(value_of([&](ad::Graph& g) { return loss_spa(g.constant(Tensor2::from_rows({{1, 2}})), single); }) == 0.0);
    CHECK(take_warnings().size() == 1);
}

TEST_CASE("topology loss scale invariance") {
    Rng rng(5);
    const Tensor2 pts = testing::random_tensor(7, 2, rng);
    const Tensor2 fg = testing::random_tensor(7, 4, rng);
    const std::vector<double> a1{1.0, 0.5};
    const std::vector<double> a3{3.0, 1.5};
    const TopoPrior p1 = build_topo_prior(pts, 2, a1);
    const TopoPrior p3 = build_topo_prior(pts, 2, a3);
    Tensor2 scaled = fg;
    for (std::size_t i = 0; i < 7; ++i)
        for (double& v : scaled.row(i)) v *= 0.5 + static_cast<double>(i);
    const double base = value_of([&](ad::Graph& g) { return loss_spa(g.constant(fg), p1); });
    CHECK(std::abs(value_of([&](ad::Graph& g) { return loss_spa(g.constant(scaled), p1); }) - base) < 1e-12);
    CHECK(std::abs(value_of([&](ad::Graph& g) { return loss_spa(g.constant(fg), p3); }) - base) < 1e-12);
    CHECK(base >= 0.0);
    CHECK(base <= 4.0);
}

TEST_CASE("individual loss gradients") {
    Rng rng(41);
    for (int t = 0; t < 3; ++t) {
        const Tensor2 target = testing::random_tensor(6, 4, rng);
        CHECK(check_gradient([&](ad::Graph& g, std::span<const ad::Var> l) {
                  return loss_reg(l[0], g.constant(target), 0.5, 0.5);
              }, {testing::random_tensor(6, 4, rng)}).max_rel_error < 1e-5);
        CHECK(check_gradient([&](ad::Graph& g, std::span<const ad::Var> l) {
                  return loss_contrastive(ad::row_l2_normalize(l[0]), ad::row_l2_normalize(l[1]), ad::exp(l[2]));
              }, {testing::random_tensor(6, 3, rng), testing::random_tensor(6, 3, rng), Tensor2::scalar(-1.0)})
                  .max_rel_error < 1e-5);
        const TopoPrior prior = build_topo_prior(testing::random_tensor(6, 2, rng), 2, std::vector<double>{1.0, 0.5});
        CHECK(check_gradient([&](ad::Graph&, std::span<const ad::Var> l) { return loss_spa(l[0], prior); },
                             {testing::random_tensor(6, 5, rng)})
                  .max_rel_error < 1e-5);
    }
}

TEST_CASE("total loss") {
    Rng rng(8);
    Batch b;
    b.feats = testing::random_tensor(5, 4, rng);
    b.coords = testing::random_tensor(5, 2, rng, 0, 10);
    b.coords_unit = unit_coords(b.coords);
    b.g_std = testing::random_tensor(5, 3, rng);
    const ModelParams p = ModelParams::init(tiny_encoder(4, 3));

    LossWeights zero;
    zero.lambda_con = zero.lambda_reg = zero.lambda_spa = 0.0;
    {
        ad::Graph g;
        const LossTerms t = total_loss(g, b, bind_model(g, p, true), zero);
        CHECK(t.total.item() == 0.0);
        CHECK_FALSE(t.reg.valid());
    }
    LossWeights w;
    w.k_knn = 2;
    ad::Graph g;
    const LossTerms t = total_loss(g, b, bind_model(g, p, true), w);
    CHECK(std::abs(t.total.item() - (t.con.item() + t.reg.item() + 0.1 * t.spa.item())) < 1e-12);

    LossWeights no_spa = w;
    no_spa.lambda_spa = 0.0;
    ad::Graph g2;
    const LossTerms t2 = total_loss(g2, b, bind_model(g2, p, true), no_spa);
    CHECK_FALSE(t2.spa.valid());
    CHECK(std::abs(t2.total.item() - (t.con.item() + t.reg.item())) < 1e-12);

    const auto leaves = testing::generic_leaves(p, rng);
    const auto r = check_gradient(
        [&](ad::Graph& gg, std::span<const ad::Var> l) { return total_loss(gg, b, bind_model(p, l), w).total; }, leaves);
    CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("loss weight validation") {
    LossWeights w;
    w.validate();
    w.lambda_spa = -1.0;
    CHECK_THROWS_AS(w.validate(), ConfigError);
    w = LossWeights{};
    w.alpha.clear();
    CHECK_THROWS_AS(w.validate(), ConfigError);
}

TEST_CASE("stage-1 training") {
    SynthConfig sc;
    sc.n_slides = 3;
    sc.spots_per_slide = 60;
    sc.g = 6;
    sc.d_img = 5;
    sc.seed = 4;
    Cohort cohort = generate_synthetic(sc);
    cohort.hvg_index = {0, 1, 2, 3, 4, 5};
    const auto folds = make_folds(cohort);
    const EncoderConfig enc = tiny_encoder(5, 6);
    const LossWeights w;
    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.seed = 11;

    cfg.epochs = 0;
    const auto none = train_stage1(folds[0], cohort, enc, w, cfg);
    CHECK(none.trace.empty());
    CHECK(none.params.checksum() == ModelParams::init(enc).checksum());

    cfg.epochs = 8;
    cfg.adam.lr = 3e-3;
    const auto a = train_stage1(folds[0], cohort, enc, w, cfg);
    const auto b = train_stage1(folds[0], cohort, enc, w, cfg);
    CHECK(a.params.checksum() == b.params.checksum());
    CHECK(trace_csv(a.trace) == trace_csv(b.trace));
    REQUIRE(a.trace.size() == 8);
    CHECK(a.trace.back().total < a.trace.front().total);
    CHECK(trace_csv(a.trace).rfind("epoch,", 0) == 0);
}

}
