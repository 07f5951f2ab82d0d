#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace apt {

// Deterministic random source. All sampling in the project goes through this
// wrapper instead of <random> distributions, whose outputs are
// implementation-defined; mt19937_64 itself is specified bit-exactly.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive bounds.
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(gen_() % span);
    }

    // Standard normal via Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u = 1.0 - uniform(); // avoid log(0)
        double v = uniform();
        double r = std::sqrt(-2.0 * std::log(u));
        double theta = 6.283185307179586 * v;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = gen_() % i;
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent child stream; splitmix-style mixing so nearby ids decorrelate.
    Rng fork(std::uint64_t stream_id) {
        std::uint64_t z = gen_() + 0x9e3779b97f4a7c15ULL * (stream_id + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return Rng(z ^ (z >> 31));
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace apt
