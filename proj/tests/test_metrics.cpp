#include "chrep/error.hpp"
#include "chrep/metrics.hpp"
#include "chrep/rng.hpp"
#include "chrep/warnings.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace chrep;

namespace {

double loop_pcc(const Tensor2& t, const Tensor2& p, std::size_t j) {
    const std::size_t n = t.rows();
    double mt = 0, mp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mt += t(i, j);
        mp += p(i, j);
    }
    mt /= static_cast<double>(n);
    mp /= static_cast<double>(n);
    double num = 0, vt = 0, vp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        num += (t(i, j) - mt) * (p(i, j) - mp);
        vt += (t(i, j) - mt) * (t(i, j) - mt);
        vp += (p(i, j) - mp) * (p(i, j) - mp);
    }
    return num / std::sqrt(vt * vp);
}

Tensor2 permute_rows(const Tensor2& t, const std::vector<std::size_t>& perm) {
    Tensor2 out(t.rows(), t.cols());
    for (std::size_t i = 0; i < perm.size(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) out(i, j) = t(perm[i], j);
    return out;
}

} // namespace

TEST_SUITE("metrics") {

TEST_CASE("gene correlation examples") {
    const std::vector<double> x{1, 2, 3, 4};
    CHECK(std::abs(*pcc_gene(x, x) - 1.0) < 1e-12);
    const std::vector<double> y{1, 3, 2, 4};
    CHECK(std::abs(*pcc_gene(x, y) - 0.8) < 1e-12);
    const std::vector<double> aff{9, 11, 13, 15};
    CHECK(std::abs(*pcc_gene(x, aff) - 1.0) < 1e-12);
    const std::vector<double> neg{-3, -5, -7, -9};
    CHECK(std::abs(*pcc_gene(x, neg) + 1.0) < 1e-12);
}

TEST_CASE("correlation is undefined for constant columns or a single spot") {
    const std::vector<double> x{1, 2, 3};
    const std::vector<double> c{2, 2, 2};
    CHECK_FALSE(pcc_gene(x, c).has_value());
    CHECK_FALSE(pcc_gene(c, x).has_value());
    CHECK_FALSE(pcc_gene(std::vector<double>{1.0}, std::vector<double>{2.0}).has_value());
    CHECK_THROWS_AS(pcc_gene(x, std::vector<double>{1, 2}), ShapeError);
}

TEST_CASE("affine invariance on random data") {
    Rng rng(7);
    for (int t = 0; t < 20; ++t) {
        std::vector<double> x(30);
        for (auto& v : x) v = rng.normal();
        const double a = rng.uniform(0.1, 10.0), b = rng.uniform(-50, 50);
        std::vector<double> up(30), down(30);
        for (std::size_t i = 0; i < 30; ++i) {
            up[i] = a * x[i] + b;
            down[i] = -a * x[i] + b;
        }
        CHECK(std::abs(*pcc_gene(x, up) - 1.0) < 1e-12);
        CHECK(std::abs(*pcc_gene(x, down) + 1.0) < 1e-12);
    }
}

TEST_CASE("correlation set matches a scalar loop") {
    Rng rng(11);
    for (int t = 0; t < 20; ++t) {
        const Tensor2 truth = testing::random_tensor(5, 4, rng);
        const Tensor2 pred = testing::random_tensor(5, 4, rng);
        double sum = 0;
        for (std::size_t j = 0; j < 4; ++j) sum += loop_pcc(truth, pred, j);
        const auto r = pcc_set(truth, pred);
        CHECK(std::abs(r.value - sum / 4.0) < 1e-12);
        CHECK(r.n_defined == 4);
        CHECK(r.n_excluded == 0);
    }
}

TEST_CASE("correlation set over subsets and undefined genes") {
    Rng rng(3);
    Tensor2 truth = testing::random_tensor(6, 3, rng);
    const Tensor2 pred = testing::random_tensor(6, 3, rng);
    const std::vector<std::size_t> one{1};
    CHECK(pcc_set(truth, pred, one).value == *pcc_gene(truth.col(1), pred.col(1)));
    CHECK(std::abs(pcc_set(truth, truth).value - 1.0) < 1e-12);

    for (std::size_t i = 0; i < 6; ++i) truth(i, 2) = 1.0;
    const auto r = pcc_set(truth, pred);
    CHECK(r.n_defined == 2);
    CHECK(r.n_excluded == 1);
    CHECK(std::abs(r.value - (loop_pcc(truth, pred, 0) + loop_pcc(truth, pred, 1)) / 2.0) < 1e-12);
    const std::vector<std::size_t> only_const{2};
    CHECK(std::isnan(pcc_set(truth, pred, only_const).value));
}

TEST_CASE("correlations stay in range") {
    Rng rng(5);
    for (int t = 0; t < 50; ++t) {
        const Tensor2 a = testing::random_tensor(3, 2, rng);
        Tensor2 b = a;
        for (auto& v : b.data()) v = v * 1e8 + 1e-3 * rng.normal();
        for (const auto& v : pcc_per_gene(a, b)) {
            REQUIRE(v.has_value());
            CHECK(*v <= 1.0);
            CHECK(*v >= -1.0);
        }
    }
}

TEST_CASE("highly expressed gene set") {
    const Tensor2 means = Tensor2::from_rows({{3, 1, 2}});
    CHECK(heg_set(means, 2) == std::vector<std::size_t>{0, 2});
    CHECK(heg_set(means, 3) == std::vector<std::size_t>{0, 2, 1});
    const Tensor2 tied = Tensor2::from_rows({{1, 2, 2}, {1, 2, 2}});
    CHECK(heg_set(tied, 1) == std::vector<std::size_t>{1});
    take_warnings();
    CHECK(heg_set(means, 10).size() == 3);
    CHECK(take_warnings().size() == 1);
}

TEST_CASE("ranking by standardized values would change the set") {
    // Gene 0 is highly expressed but flat; gene 1 is low but variable.
    const Tensor2 lognorm = Tensor2::from_rows({{5.0, 0.1}, {5.2, 0.9}, {4.8, 0.2}});
    CHECK(heg_set(lognorm, 1) == std::vector<std::size_t>{0});
    Tensor2 shifted = lognorm;
    for (std::size_t i = 0; i < 3; ++i) {
        shifted(i, 0) -= 5.0;
        shifted(i, 1) += 0.5;
    }
    CHECK(heg_set(shifted, 1) == std::vector<std::size_t>{1});
}

TEST_CASE("error metrics") {
    const Tensor2 truth = Tensor2::from_rows({{0.5, -1.0}});
    const Tensor2 pred = Tensor2::from_rows({{1.5, -3.0}});
    const auto e = error_metrics(truth, pred);
    CHECK(std::abs(e.mse - 2.5) < 1e-15);
    CHECK(std::abs(e.mae - 1.5) < 1e-15);
    const auto z = error_metrics(truth, truth);
    CHECK(z.mse == 0.0);
    CHECK(z.mae == 0.0);
    Rng rng(2);
    const Tensor2 a = testing::random_tensor(4, 3, rng);
    const Tensor2 b = testing::random_tensor(4, 3, rng);
    CHECK(error_metrics(a, b).mse > 0.0);
    CHECK(error_metrics(a, b).mae > 0.0);
    CHECK_THROWS_AS(error_metrics(a, Tensor2(4, 2)), ShapeError);
}

TEST_CASE("quartiles") {
    const std::vector<std::optional<double>> two{0.0, 1.0};
    CHECK(quartiles(two)->median == 0.5);
    const std::vector<std::optional<double>> four{4.0, 2.0, std::nullopt, 1.0, 3.0};
    const auto q = *quartiles(four);
    CHECK(q.min == 1.0);
    CHECK(std::abs(q.q1 - 1.75) < 1e-15);
    CHECK(std::abs(q.median - 2.5) < 1e-15);
    CHECK(std::abs(q.q3 - 3.25) < 1e-15);
    CHECK(q.max == 4.0);
    CHECK(q.n == 4);
    const std::vector<std::optional<double>> single{0.3};
    const auto s = *quartiles(single);
    CHECK(s.min == 0.3);
    CHECK(s.q1 == 0.3);
    CHECK(s.median == 0.3);
    CHECK(s.q3 == 0.3);
    CHECK(s.max == 0.3);
    const std::vector<std::optional<double>> none{std::nullopt};
    CHECK_FALSE(quartiles(none).has_value());
}

TEST_CASE("slide quartile table") {
    std::map<std::string, std::vector<std::optional<double>>> per;
    per["b"] = {0.0, 1.0};
    per["a"] = {std::nullopt};
    const auto rows = slide_distribution(per);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].slide_id == "a");
    CHECK_FALSE(rows[0].q.has_value());
    const std::string csv = slide_quartiles_csv(rows);
    CHECK(csv.rfind("slide_id,n_defined,min,q1,median,q3,max\n", 0) == 0);
    CHECK(csv.find("b,2,") != std::string::npos);
}

TEST_CASE("metrics are invariant to a consistent spot permutation") {
    Rng rng(19);
    const Tensor2 truth = testing::random_tensor(9, 5, rng);
    const Tensor2 pred = testing::random_tensor(9, 5, rng);
    const Tensor2 lognorm = testing::random_tensor(9, 5, rng, 0, 3);
    std::vector<std::size_t> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    const std::vector<std::string> names{"a", "b", "c", "d", "e"};
    const std::vector<std::size_t> ks{2, 5};
    const auto a = evaluate("f", truth, pred, lognorm, names, ks);
    const auto b = evaluate("f", permute_rows(truth, perm), permute_rows(pred, perm), permute_rows(lognorm, perm),
                            names, ks);
    CHECK(std::abs(a.pcc_acg - b.pcc_acg) < 1e-12);
    CHECK(std::abs(a.mse - b.mse) < 1e-12);
    CHECK(std::abs(a.mae - b.mae) < 1e-12);
    for (const auto& [k, v] : a.pcc_heg) CHECK(std::abs(v - b.pcc_heg.at(k)) < 1e-12);
}

TEST_CASE("evaluation report") {
    Rng rng(23);
    const Tensor2 truth = testing::random_tensor(6, 3, rng);
    const Tensor2 lognorm = Tensor2::from_rows({{1, 5, 3}, {1, 5, 3}, {1, 5, 3}, {1, 5, 3}, {1, 5, 3}, {1, 5, 3}});
    const std::vector<std::string> names{"a", "b", "c"};
    const std::vector<std::size_t> ks{1, 3};
    const auto r = evaluate("s9", truth, truth, lognorm, names, ks);
    CHECK(r.fold_id == "s9");
    CHECK(r.n_spots == 6);
    CHECK(std::abs(r.pcc_acg - 1.0) < 1e-12);
    CHECK(r.mse == 0.0);
    CHECK(std::abs(r.pcc_heg.at(1) - 1.0) < 1e-12);
    CHECK(r.per_gene_pcc.size() == 3);

    nlohmann::json j = r;
    const MetricsReport back = j.get<MetricsReport>();
    CHECK(back.pcc_acg == r.pcc_acg);
    CHECK(back.pcc_heg == r.pcc_heg);
    CHECK(back.gene_names == r.gene_names);

    const std::string csv = per_gene_pcc_csv("s9", r);
    CHECK(csv.rfind("slide_id,gene,pcc,defined\n", 0) == 0);

    Tensor2 bad = truth;
    bad(0, 0) = std::nan("");
    CHECK_THROWS_AS(evaluate("s9", truth, bad, lognorm, names, ks), NumericError);
}

}
