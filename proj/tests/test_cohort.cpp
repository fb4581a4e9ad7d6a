#include "chrep/cohort.hpp"
#include "chrep/error.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace chrep;

TEST_SUITE("cohort") {

TEST_CASE("lognorm examples") {
    CHECK(lognorm(std::vector<double>{0, 0, 0}, 1e4) == std::vector<double>{0, 0, 0});
    const auto a = lognorm(std::vector<double>{10, 0}, 1.0);
    CHECK(a[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(a[1] == 0.0);
    const auto b = lognorm(std::vector<double>{5, 5}, 2.0);
    CHECK(b[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(b[1] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK_THROWS_AS(lognorm(std::vector<double>{1, -1}), InvalidInput);
}

TEST_CASE("lognorm is monotone per gene for a fixed total") {
    const auto lo = lognorm(std::vector<double>{2, 8});
    const auto hi = lognorm(std::vector<double>{3, 7});
    CHECK(hi[0] > lo[0]);
    CHECK(hi[1] < lo[1]);
}

TEST_CASE("variance ranking breaks ties by lower index") {
    CHECK(top_variance_genes(std::vector<double>{0.1, 0.5, 0.5}, 2) == std::vector<std::size_t>{1, 2});
    CHECK(top_variance_genes(std::vector<double>{0.5, 0.5, 0.5}, 2) == std::vector<std::size_t>{0, 1});
    CHECK_THROWS_AS(top_variance_genes(std::vector<double>{1.0}, 2), ConfigError);
}

TEST_CASE("select_hvg never picks a constant gene while a variable one remains") {
    Cohort c = testing::random_cohort(2, 6, 4, 2, 3);
    for (auto& [id, spots] : c.slides)
        for (auto& s : spots) s.expr_raw[2] = 0.0;
    const auto h = select_hvg(c, 3);
    CHECK(std::find(h.begin(), h.end(), 2) == h.end());
    CHECK(std::is_sorted(h.begin(), h.end()));
    CHECK(c.hvg_index == h);
    CHECK(select_hvg(c, 4) == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK_THROWS_AS(select_hvg(c, 5), ConfigError);
}

TEST_CASE("standardizer statistics") {
    const std::vector<Tensor2> one{Tensor2::from_rows({{3.0}})};
    const Standardizer a = fit_standardizer(one);
    CHECK(a.mu == std::vector<double>{3.0});
    CHECK(a.sigma == std::vector<double>{0.0});
    const std::vector<Tensor2> two{Tensor2::from_rows({{1.0}, {3.0}})};
    const Standardizer b = fit_standardizer(two);
    CHECK(b.mu[0] == 2.0);
    CHECK(b.sigma[0] == 1.0);
    CHECK_THROWS_AS(fit_standardizer(std::vector<Tensor2>{}), InvalidFold);
}

TEST_CASE("standardize and invert") {
    Standardizer s{{2, 2}, {1, 2}, kStandardizeEps};
    const auto z = s.apply(std::vector<double>{2, 4});
    CHECK(z[0] == 0.0);
    CHECK(z[1] == doctest::Approx(2.0 / (2.0 + 1e-8)).epsilon(1e-15));
    CHECK(std::abs(z[1] - 1.0) < 1e-8);
    CHECK(s.apply(std::vector<double>{2, 2}) == std::vector<double>{0, 0});
    const std::vector<double> g{1.25, -3.5};
    const auto back = s.invert(s.apply(g));
    CHECK(std::abs(back[0] - g[0]) < 1e-9);
    CHECK(std::abs(back[1] - g[1]) < 1e-9);
    CHECK_THROWS_AS(s.apply(std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("folds partition the slides") {
    Cohort c = testing::random_cohort(3, 5, 4, 2, 9);
    const auto folds = make_folds(c);
    REQUIRE(folds.size() == 3);
    CHECK(folds[0].test_slide == "s0");
    CHECK(folds[0].train_slides == std::vector<std::string>{"s1", "s2"});
    CHECK(folds[1].train_slides == std::vector<std::string>{"s0", "s2"});
    CHECK(folds[2].train_slides == std::vector<std::string>{"s0", "s1"});
    CHECK(folds[0].standardizer.mu != folds[1].standardizer.mu);

    Cohort single = testing::random_cohort(1, 5, 4, 2, 9);
    CHECK_THROWS_AS(make_folds(single), ConfigError);
}

TEST_CASE("fold standardizer matches a brute-force recomputation") {
    Cohort c = testing::random_cohort(3, 7, 5, 2, 21);
    const auto folds = make_folds(c);
    for (const auto& f : folds) {
        for (std::size_t j = 0; j < 5; ++j) {
            double m = 0.0, n = 0.0;
            for (const auto& id : f.train_slides)
                for (const auto& s : c.slide(id)) {
                    m += lognorm(s.expr_raw)[j];
                    n += 1.0;
                }
            CHECK(f.standardizer.mu[j] == doctest::Approx(m / n).epsilon(1e-12));
        }
    }
}

TEST_CASE("standardized training expression is centered with unit scale") {
    for (std::uint64_t seed : {1, 2, 3}) {
        Cohort c = testing::random_cohort(4, 9, 6, 2, seed);
        for (const auto& f : make_folds(c)) {
            const auto prepared = prepare_slides(c, f.train_slides, f.standardizer);
            std::vector<double> sum(6, 0.0), sq(6, 0.0);
            double n = 0.0;
            for (const auto& p : prepared) {
                for (std::size_t r = 0; r < p.g_std.rows(); ++r) {
                    for (std::size_t j = 0; j < 6; ++j) {
                        sum[j] += p.g_std(r, j);
                        sq[j] += p.g_std(r, j) * p.g_std(r, j);
                    }
                    n += 1.0;
                }
            }
            for (std::size_t j = 0; j < 6; ++j) {
                const double mean = sum[j] / n;
                const double sd = std::sqrt(sq[j] / n - mean * mean);
                const double sigma = f.standardizer.sigma[j];
                CHECK(std::abs(mean) < 1e-9);
                CHECK(std::abs(sd - sigma / (sigma + kStandardizeEps)) < 1e-6);
            }
        }
    }
}

TEST_CASE("mutating the held-out slide leaves the fold standardizer unchanged") {
    Cohort c = testing::random_cohort(3, 6, 4, 2, 5);
    const auto before = make_folds(c);
    for (auto& s : c.slides.at("s1")) {
        for (auto& v : s.expr_raw) v = v * 3 + 11;
        for (auto& v : s.feat) v = -v;
    }
    const auto after = make_folds(c);
    CHECK(after[1].standardizer.mu == before[1].standardizer.mu);
    CHECK(after[1].standardizer.sigma == before[1].standardizer.sigma);
    CHECK(after[0].standardizer.mu != before[0].standardizer.mu);
}

TEST_CASE("unit coordinates") {
    const Tensor2 u = unit_coords(Tensor2::from_rows({{0, 5}, {10, 5}, {5, 5}}));
    CHECK(u == Tensor2::from_rows({{0, 0.5}, {1, 0.5}, {0.5, 0.5}}));
}

TEST_CASE("invalid cohorts are rejected") {
    Cohort c = testing::random_cohort(2, 3, 3, 2, 1);
    c.slides.at("s0")[0].feat.push_back(1.0);
    CHECK_THROWS_AS(c.validate(), InvalidInput);
    Cohort d = testing::random_cohort(2, 3, 3, 2, 1);
    d.slides.at("s1")[1].spot_id = d.slides.at("s1")[0].spot_id;
    CHECK_THROWS_AS(d.validate(), InvalidInput);
}

TEST_CASE("cohort directory round trip and access logging") {
    testing::TempDir tmp("cohort");
    Cohort c = testing::random_cohort(2, 4, 3, 2, 17);
    c.hvg_index = {0, 2};
    write_cohort(c, tmp.path());

    AccessLog log;
    log.set_phase("load");
    CohortStore store(tmp.path(), &log);
    CHECK(store.manifest().slides == std::vector<std::string>{"s0", "s1"});
    CHECK(store.manifest().d_img == 2);
    REQUIRE(store.manifest().hvg_index.has_value());
    CHECK(*store.manifest().hvg_index == std::vector<std::size_t>{0, 2});

    const Cohort back = store.load_all();
    CHECK(back.gene_names == c.gene_names);
    CHECK(back.hvg_index == c.hvg_index);
    for (const auto& id : c.slide_ids()) {
        const auto& a = c.slide(id);
        const auto& b = back.slide(id);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].spot_id == b[i].spot_id);
            CHECK(a[i].coord == b[i].coord);
            CHECK(a[i].feat == b[i].feat);
            CHECK(a[i].expr_raw == b[i].expr_raw);
        }
    }
    const auto entries = log.entries();
    CHECK(entries.size() == 1 + 3 * 2);
    for (const auto& e : entries) CHECK(e.phase == "load");

    log.set_phase("only-s1");
    store.load(std::vector<std::string>{"s1"});
    for (const auto& e : log.entries())
        if (e.phase == "only-s1") CHECK(e.path.parent_path().filename() == "s1");
}

TEST_CASE("slide files are joined on spot_id") {
    testing::TempDir tmp("join");
    Cohort c = testing::random_cohort(2, 3, 2, 1, 4);
    write_cohort(c, tmp.path());
    // Reverse the coordinate rows; the loader must still match them by id.
    const auto p = tmp.path() / "s0" / "coords.csv";
    std::ifstream is(p);
    std::vector<std::string> lines;
    for (std::string l; std::getline(is, l);) lines.push_back(l);
    is.close();
    std::ofstream os(p, std::ios::trunc);
    os << lines[0] << "\n";
    for (std::size_t i = lines.size() - 1; i >= 1; --i) os << lines[i] << "\n";
    os.close();
    const Cohort back = CohortStore(tmp.path()).load_all();
    for (std::size_t i = 0; i < 3; ++i) CHECK(back.slide("s0")[i].coord == c.slide("s0")[i].coord);

    std::ofstream bad(tmp.path() / "s1" / "feats.csv", std::ios::trunc);
    bad << "spot_id,f0\np0,1\n";
    bad.close();
    CHECK_THROWS_AS(CohortStore(tmp.path()).load_all(), InvalidInput);
}

TEST_CASE("csv helpers") {
    const auto rows = parse_csv("a,b\n1,2\n");
    REQUIRE(rows.size() == 2);
    CHECK(rows[1] == std::vector<std::string>{"1", "2"});
    CHECK(std::stod(format_double(0.1)) == 0.1);
    CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}

}
