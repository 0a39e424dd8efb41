#include <cmath>

#include <catch_amalgamated.hpp>

#include "concept_guard/spectral.hpp"
#include "oracles.hpp"

using namespace concept_guard;

namespace {

LatentGrid random_grid(oracle::Rng& rng, std::size_t c, std::size_t h, std::size_t w) {
    std::vector<double> v(c * h * w);
    for (auto& x : v) x = rng.normal();
    return LatentGrid(c, h, w, std::move(v));
}

double energy(const LatentGrid& g) {
    double s = 0;
    for (double x : g.data) s += x * x;
    return s;
}

double max_abs(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("build_lowfreq_mask", "[spectral]") {
    REQUIRE(build_lowfreq_mask(4, 4, 1.0).count() == 16);
    REQUIRE(build_lowfreq_mask(4, 4, 0.0).count() == 0);

    const auto half = build_lowfreq_mask(4, 4, 0.5);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c) REQUIRE(half(r, c) == (r >= 1 && r <= 2 && c >= 1 && c <= 2));

    // DC (shifted centre) is inside for any rho > 0
    for (std::size_t h : {1, 2, 3, 5, 8, 9})
        for (std::size_t w : {1, 4, 7}) {
            const auto m = build_lowfreq_mask(h, w, 0.01);
            REQUIRE(m(h / 2, w / 2));
            REQUIRE(m.count() == 1);
        }
    REQUIRE(build_lowfreq_mask(10, 10, 0.3).count() == 9);
    REQUIRE(build_lowfreq_mask(5, 3, 0.5).count() == 3 * 2);

    REQUIRE_THROWS_AS(build_lowfreq_mask(4, 4, 1.5), Error);
    REQUIRE_THROWS_AS(build_lowfreq_mask(4, 4, -0.1), Error);
}

TEST_CASE("forward transform agrees with the direct DFT and round-trips", "[spectral][oracle]") {
    oracle::Rng rng(17);
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{1, 1}, {2, 2}, {3, 5}, {4, 4}, {7, 6}, {16, 16}}) {
        const auto g = random_grid(rng, 1, h, w);
        const auto fast = spectral::forward_2d(g.data.data(), h, w);
        const auto slow = oracle::dft2(g.data, h, w);
        double scale = 0;
        for (const auto& z : slow) scale = std::max(scale, std::abs(z));
        for (std::size_t k = 0; k < h * w; ++k) REQUIRE(std::abs(fast[k] - slow[k]) <= 1e-10 * scale);

        const auto back = spectral::inverse_2d(fast, h, w);
        double err = 0, ref = 0;
        for (std::size_t k = 0; k < h * w; ++k) {
            err = std::max(err, std::abs(back[k] - g.data[k]));
            ref = std::max(ref, std::abs(g.data[k]));
        }
        REQUIRE(err <= 1e-10 * ref);
    }
}

TEST_CASE("reattend 2x2 example", "[spectral]") {
    const LatentGrid orig(1, 2, 2, {0, 0, 0, 0});
    const LatentGrid safe(1, 2, 2, {1, 1, 1, 1});

    // independent check of the claim: only the DC bin is nonzero, value 4
    const auto f = oracle::dft2(safe.data, 2, 2);
    REQUIRE(std::abs(f[0] - std::complex<double>(4, 0)) < 1e-12);
    for (std::size_t k = 1; k < 4; ++k) REQUIRE(std::abs(f[k]) < 1e-12);
    // scaling DC by 0.5 and inverting by the direct sum gives 0.5 everywhere
    std::vector<std::complex<double>> g = f;
    g[0] *= 0.5;
    std::vector<double> re(4), im(4);
    for (std::size_t k = 0; k < 4; ++k) re[k] = g[k].real(), im[k] = g[k].imag();
    const auto inv = oracle::dft2(re, 2, 2, true);
    for (const auto& z : inv) REQUIRE(std::abs(z / 4.0 - std::complex<double>(0.5, 0)) < 1e-12);

    const auto res = reattend_detailed(orig, safe, build_lowfreq_mask(2, 2, 1.0), 0.5);
    REQUIRE(res.output.data == std::vector<double>{0.5, 0.5, 0.5, 0.5});
    REQUIRE(res.scaledBins == 1);
}

TEST_CASE("reattend no-ops", "[spectral]") {
    oracle::Rng rng(3);
    const auto a = random_grid(rng, 3, 6, 5);
    const auto b = random_grid(rng, 3, 6, 5);
    const auto mask = build_lowfreq_mask(6, 5, 0.5);

    SECTION("equal inputs") { REQUIRE(reattend(a, a, mask, 0.8).data == a.data); }
    SECTION("s = 1") { REQUIRE(max_abs(reattend(a, b, mask, 1.0).data, b.data) <= 1e-10); }
    SECTION("empty mask") { REQUIRE(max_abs(reattend(a, b, build_lowfreq_mask(6, 5, 0.0), 0.5).data, b.data) <= 1e-10); }
}

TEST_CASE("reattend only touches eligible low-frequency bins", "[spectral]") {
    oracle::Rng rng(4);
    const auto a = random_grid(rng, 1, 8, 8);
    const auto b = random_grid(rng, 1, 8, 8);
    const auto mask = build_lowfreq_mask(8, 8, 0.25);
    const auto out = reattend(a, b, mask, 0.5);
    const auto fa = oracle::dft2(a.data, 8, 8);
    const auto fb = oracle::dft2(b.data, 8, 8);
    const auto fo = oracle::dft2(out.data, 8, 8);
    for (std::size_t u = 0; u < 8; ++u)
        for (std::size_t v = 0; v < 8; ++v) {
            const std::size_t k = u * 8 + v;
            const std::size_t pu = (8 - u) % 8, pv = (8 - v) % 8;
            const bool inMask = mask((u + 4) % 8, (v + 4) % 8) || mask((pu + 4) % 8, (pv + 4) % 8);
            const bool larger = std::abs(fb[k]) > std::abs(fa[k]);
            const auto want = inMask && larger ? 0.5 * fb[k] : fb[k];
            REQUIRE(std::abs(fo[k] - want) <= 1e-9);
        }
}

TEST_CASE("less comparison scales the other side", "[spectral]") {
    const LatentGrid orig(1, 2, 2, {2, 2, 2, 2});
    const LatentGrid safe(1, 2, 2, {1, 1, 1, 1});
    const auto mask = build_lowfreq_mask(2, 2, 1.0);
    REQUIRE(reattend(orig, safe, mask, 0.5, SpectralComparison::Greater).data == safe.data);
    REQUIRE(reattend(orig, safe, mask, 0.5, SpectralComparison::Less).data == std::vector<double>{0.5, 0.5, 0.5, 0.5});
}

TEST_CASE("reattend properties on random pairs", "[spectral][property]") {
    oracle::Rng rng(2718);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t c = rng.index(1, 4), h = rng.index(1, 16), w = rng.index(1, 16);
        const auto a = random_grid(rng, c, h, w);
        const auto b = random_grid(rng, c, h, w);
        const double rho = rng.uniform(0, 1), s = rng.uniform(0.05, 1.0);
        const auto mask = build_lowfreq_mask(h, w, rho);
        const auto res = reattend_detailed(a, b, mask, s);
        REQUIRE(energy(res.output) <= energy(b) * (1 + 1e-8));
        REQUIRE(res.maxImag <= 1e-9 * std::max(res.maxReal, 1e-300));
        const auto again = reattend(a, b, mask, s);
        REQUIRE(again.data == res.output.data);
    }
}

TEST_CASE("reattend argument checks", "[spectral][errors]") {
    const LatentGrid a(1, 2, 2), b(1, 2, 3);
    REQUIRE_THROWS_AS(reattend(a, b, build_lowfreq_mask(2, 2, 1.0), 0.5), Error);
    REQUIRE_THROWS_AS(reattend(a, a, build_lowfreq_mask(2, 2, 1.0), 0.0), Error);
    REQUIRE_THROWS_AS(reattend(a, a, build_lowfreq_mask(2, 2, 1.0), 1.5), Error);
    REQUIRE_THROWS_AS(reattend(a, a, build_lowfreq_mask(3, 2, 1.0), 0.5), Error);
}
