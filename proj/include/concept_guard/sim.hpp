#pragma once

// Deterministic toy denoising loop for exercising the filter end to end.
//
// The "denoiser" is linear: eps(z, p) = A z + B pool(p). Each step applies
// classifier-free guidance against the null embedding,
//
//   z <- z - eta * [(1 + omega) eps(z, p_t) - omega eps(z, null)],
//
// once for a baseline run that always conditions on the original prompt and
// once for a filtered run that takes p_t from embedding_at and routes the
// conditional prediction through latent_hook. Both runs start from the same
// seeded z0, so any divergence comes from the filter alone.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "concept_guard/error.hpp"
#include "concept_guard/linalg.hpp"
#include "concept_guard/pipeline.hpp"
#include "concept_guard/spectral.hpp"
#include "concept_guard/token_filter.hpp"

namespace concept_guard {

inline constexpr double kDivergenceLimit = 1e12;

struct SimConfig {
    double omega = 1.0;
    double eta = 0.1;
    std::size_t channels = 4;
    std::size_t height = 8;
    std::size_t width = 8;
    std::uint64_t seed = 0;
    FilterConfig filter;  ///< filter.totalSteps is the number of denoising steps

    long long steps() const noexcept { return filter.totalSteps; }

    void validate() const {
        filter.validate();
        detail::require(omega >= 0.0 && std::isfinite(omega), ErrorCode::InvalidParameter, "omega must be >= 0");
        detail::require(eta > 0.0 && std::isfinite(eta), ErrorCode::InvalidParameter, "eta must be > 0");
        detail::require(channels >= 1 && height >= 1 && width >= 1, ErrorCode::InvalidParameter,
                        "latent dims must be >= 1");
    }
};

struct Trajectory {
    std::vector<LatentGrid> baseline;  ///< latent after each step
    std::vector<LatentGrid> filtered;
    Vector divergence;                 ///< |filtered - baseline| after each step
    std::vector<long long> activeSteps;  ///< steps that used the filtered embedding
    FilterResult filter;
};

namespace detail {

// Uniform in [-1, 1) from the top 53 bits; avoids the implementation-defined
// standard distributions so a seed means the same numbers everywhere.
class UniformSource {
public:
    explicit UniformSource(std::uint64_t seed) : engine_(seed) {}
    double next() { return static_cast<double>(engine_() >> 11) * 0x1.0p-52 - 1.0; }

private:
    std::mt19937_64 engine_;
};

struct LinearDenoiser {
    std::size_t latentSize;
    std::size_t embedDim;
    Vector a;  // latentSize x latentSize, row-major
    Vector b;  // latentSize x embedDim, row-major

    LinearDenoiser(std::size_t l, std::size_t d, UniformSource& rng) : latentSize(l), embedDim(d), a(l * l), b(l * d) {
        for (auto& x : a) x = rng.next();
        for (auto& x : b) x = rng.next();
        // Scale by the largest absolute row sum so |A|_inf <= 1.
        double maxRow = 0.0;
        for (std::size_t i = 0; i < l; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < l; ++j) s += std::abs(a[i * l + j]);
            maxRow = std::max(maxRow, s);
        }
        if (maxRow > 0.0)
            for (auto& x : a) x /= maxRow;
        const double bs = 1.0 / std::sqrt(static_cast<double>(d));
        for (auto& x : b) x *= bs;
    }

    Vector predict(std::span<const double> z, std::span<const double> cond) const {
        Vector out(latentSize);
        for (std::size_t i = 0; i < latentSize; ++i)
            out[i] = dot({a.data() + i * latentSize, latentSize}, z) + dot({b.data() + i * embedDim, embedDim}, cond);
        return out;
    }
};

inline void guided_update(Vector& z, const Vector& epsCond, const Vector& epsNull, double omega, double eta) {
    for (std::size_t i = 0; i < z.size(); ++i) z[i] -= eta * ((1.0 + omega) * epsCond[i] - omega * epsNull[i]);
}

inline void check_bounded(const Vector& z, long long step) {
    const double n = norm2(z);
    if (!std::isfinite(n) || n > kDivergenceLimit)
        fail(ErrorCode::NumericDivergence, "latent norm exceeded 1e12 at step " + std::to_string(step));
}

}  // namespace detail

inline Trajectory simulate(const SimConfig& config, const PromptEmbedding& prompt, const ConceptSubspace& subspace) {
    config.validate();
    const std::size_t d = prompt.dim();
    const std::size_t l = config.channels * config.height * config.width;

    detail::UniformSource rng(config.seed);
    const detail::LinearDenoiser denoiser(l, d, rng);
    Vector z0(l);
    for (auto& x : z0) x = rng.next();

    Trajectory traj{{}, {}, {}, {}, prepare(prompt, subspace, config.filter)};
    const FilterResult& fr = traj.filter;

    const Vector nullCond = config.filter.nullEmbedding.value_or(Vector(d, 0.0));
    detail::require(nullCond.size() == d, ErrorCode::InvalidDimensions, "null embedding length != D");
    const Vector condOrig = pooled(prompt, prompt.embeddings);
    const Vector condSafe = pooled(prompt, fr.pSafe);

    const auto asGrid = [&](Vector v) { return LatentGrid(config.channels, config.height, config.width, std::move(v)); };

    Vector zb = z0, zf = z0;
    for (long long t = 0; t < config.steps(); ++t) {
        const DenseMatrix& pt = embedding_at(fr, prompt.embeddings, t);
        const bool active = &pt == &fr.pSafe;
        if (active) traj.activeSteps.push_back(t);

        {
            const Vector eps = denoiser.predict(zb, condOrig);
            const Vector epsNull = denoiser.predict(zb, nullCond);
            detail::guided_update(zb, eps, epsNull, config.omega, config.eta);
        }
        {
            Vector eps = denoiser.predict(zf, active ? condSafe : condOrig);
            if (active && config.filter.spectralEnabled) {
                const LatentGrid hOrig = asGrid(denoiser.predict(zf, condOrig));
                eps = latent_hook(fr, t, hOrig, asGrid(std::move(eps)), config.filter).data;
            }
            const Vector epsNull = denoiser.predict(zf, nullCond);
            detail::guided_update(zf, eps, epsNull, config.omega, config.eta);
        }
        detail::check_bounded(zb, t);
        detail::check_bounded(zf, t);

        Vector diff(l);
        for (std::size_t i = 0; i < l; ++i) diff[i] = zf[i] - zb[i];
        traj.divergence.push_back(norm2(diff));
        traj.baseline.push_back(asGrid(zb));
        traj.filtered.push_back(asGrid(zf));
    }
    return traj;
}

}  // namespace concept_guard
