#ifndef CHREP_RNG_HPP
#define CHREP_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace chrep {

/// Derives an independent child seed from a parent seed and a named stream.
///
/// The scheme is splitmix64(parent ^ fnv1a64(stream) ^ splitmix64(index)). Every
/// random consumer in the pipeline takes its seed from this function, keyed by
/// names like "fold/<slide>", "replicate/<n>", "stage1/init", "stage1/batches",
/// "calib/init", "calib/batches", "synth/slide/<n>".
std::uint64_t derive_seed(std::uint64_t parent, std::string_view stream, std::uint64_t index = 0);

std::uint64_t splitmix64(std::uint64_t x);

/// Seeded generator whose outputs are fully specified (no implementation-defined
/// standard distributions), so draws are reproducible across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Standard normal via Box-Muller (no cached second value).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

} // namespace chrep

#endif
