#ifndef CHREP_TESTS_SUPPORT_HPP
#define CHREP_TESTS_SUPPORT_HPP

#include "chrep/cohort.hpp"
#include "chrep/encoders.hpp"
#include "chrep/rng.hpp"
#include "chrep/tensor.hpp"

#include <unistd.h>

#include <filesystem>
#include <string>

namespace testing {

inline chrep::Tensor2 random_tensor(std::size_t r, std::size_t c, chrep::Rng& rng, double lo = -2.0, double hi = 2.0) {
    chrep::Tensor2 t(r, c);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

/// Parameter leaves in named() order with biases moved off zero, so relu
/// units are not evaluated exactly at their kink.
inline std::vector<chrep::Tensor2> generic_leaves(const chrep::ModelParams& p, chrep::Rng& rng) {
    std::vector<chrep::Tensor2> out;
    for (const auto& n : p.named()) {
        chrep::Tensor2 v = n.value;
        if (n.name.size() > 2 && n.name.compare(n.name.size() - 2, 2, ".b") == 0)
            for (auto& x : v.data()) x += rng.uniform(-0.1, 0.1);
        out.push_back(std::move(v));
    }
    return out;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("chrep_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

/// Small random cohort: counts in [0, 20), features in [-1, 1].
inline chrep::Cohort random_cohort(std::size_t n_slides, std::size_t spots, std::size_t genes, std::size_t d_img,
                                   std::uint64_t seed) {
    chrep::Rng rng(seed);
    chrep::Cohort c;
    c.name = "random";
    for (std::size_t j = 0; j < genes; ++j) c.gene_names.push_back("g" + std::to_string(j));
    for (std::size_t s = 0; s < n_slides; ++s) {
        const std::string id = "s" + std::to_string(s);
        auto& v = c.slides[id];
        for (std::size_t i = 0; i < spots; ++i) {
            chrep::SpotRecord r;
            r.slide_id = id;
            r.spot_id = "p" + std::to_string(i);
            r.coord = {rng.uniform(0, 10), rng.uniform(0, 10)};
            for (std::size_t d = 0; d < d_img; ++d) r.feat.push_back(rng.uniform(-1, 1));
            for (std::size_t j = 0; j < genes; ++j) r.expr_raw.push_back(static_cast<double>(rng.below(20 + 5 * s)));
            v.push_back(std::move(r));
        }
    }
    c.hvg_index.resize(genes);
    for (std::size_t j = 0; j < genes; ++j) c.hvg_index[j] = j;
    return c;
}

} // namespace testing

#endif
