#pragma once

// Fourier-domain re-attention of latent features.
//
// Both branches' features are transformed per channel with a 2-D DFT. Inside
// the low-frequency window, a coefficient of the filtered branch is scaled by
// s when its magnitude exceeds the unfiltered branch's coefficient at the
// same bin; everything outside the window passes through. The result is
// transformed back and the real part returned.
//
// Real inputs have Hermitian spectra, so the scaling pattern must be
// Hermitian too or the inverse picks up an imaginary part. The window is
// therefore closed under k -> -k before use and each conjugate pair is
// decided once, on its lower linear index.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "concept_guard/error.hpp"

namespace concept_guard {

inline constexpr double kDefaultRho = 0.25;
inline constexpr double kDefaultAttenuation = 0.8;

/// Latent feature map laid out as [channel][row][col].
struct LatentGrid {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> data;

    LatentGrid() = default;
    LatentGrid(std::size_t c, std::size_t h, std::size_t w, std::vector<double> values)
        : channels(c), height(h), width(w), data(std::move(values)) {
        detail::require(c >= 1 && h >= 1 && w >= 1, ErrorCode::InvalidDimensions, "latent grid dims must be >= 1");
        detail::require(data.size() == c * h * w, ErrorCode::InvalidDimensions, "latent data length != C*H*W");
        detail::require(std::all_of(data.begin(), data.end(), [](double x) { return std::isfinite(x); }),
                        ErrorCode::NonFiniteInput, "latent grid has non-finite entries");
    }
    LatentGrid(std::size_t c, std::size_t h, std::size_t w) : LatentGrid(c, h, w, std::vector<double>(c * h * w, 0.0)) {}

    std::size_t plane() const noexcept { return height * width; }
    double& at(std::size_t c, std::size_t r, std::size_t col) { return data[c * plane() + r * width + col]; }
    double at(std::size_t c, std::size_t r, std::size_t col) const { return data[c * plane() + r * width + col]; }

    bool same_shape(const LatentGrid& o) const noexcept {
        return channels == o.channels && height == o.height && width == o.width;
    }

    friend bool operator==(const LatentGrid&, const LatentGrid&) = default;
};

/// Low-frequency window in the frequency-shifted layout (DC at
/// [H/2][W/2]), row-major.
struct FreqMask {
    std::size_t height = 0;
    std::size_t width = 0;
    double rho = 0.0;
    std::vector<bool> grid;

    bool operator()(std::size_t r, std::size_t c) const { return grid[r * width + c]; }
    std::size_t count() const { return static_cast<std::size_t>(std::count(grid.begin(), grid.end(), true)); }
};

enum class SpectralComparison { Greater, Less };

namespace detail {

// ceil(rho * n), ignoring floating noise in the product (0.3 * 10 must give 3).
inline std::size_t window_extent(double rho, std::size_t n) {
    if (rho <= 0.0) return 0;
    const double x = rho * static_cast<double>(n);
    auto k = static_cast<std::size_t>(std::ceil(x - 1e-9 * std::max(1.0, x)));
    return std::clamp<std::size_t>(k, 1, n);
}

}  // namespace detail

/// Centered ceil(rho*H) x ceil(rho*W) rectangle. The DC bin is included
/// whenever rho > 0.
inline FreqMask build_lowfreq_mask(std::size_t height, std::size_t width, double rho) {
    detail::require(height >= 1 && width >= 1, ErrorCode::InvalidDimensions, "mask dims must be >= 1");
    detail::require(rho >= 0.0 && rho <= 1.0, ErrorCode::InvalidParameter, "rho must lie in [0, 1]");
    FreqMask m{height, width, rho, std::vector<bool>(height * width, false)};
    const std::size_t nh = detail::window_extent(rho, height);
    const std::size_t nw = detail::window_extent(rho, width);
    const std::size_t r0 = height / 2 - nh / 2;
    const std::size_t c0 = width / 2 - nw / 2;
    for (std::size_t r = r0; r < r0 + nh; ++r)
        for (std::size_t c = c0; c < c0 + nw; ++c) m.grid[r * width + c] = true;
    return m;
}

namespace spectral {

using Complex = std::complex<double>;

// Length-1 transforms are the identity; kissfft does not handle them.
inline void fft_1d(Eigen::FFT<double>& fft, std::vector<Complex>& out, const std::vector<Complex>& in, bool inverse) {
    if (in.size() == 1) {
        out = in;
        return;
    }
    if (inverse)
        fft.inv(out, in);
    else
        fft.fwd(out, in);
}

/// Unnormalised forward 2-D DFT of an H x W row-major plane.
inline std::vector<Complex> forward_2d(const double* plane, std::size_t h, std::size_t w) {
    Eigen::FFT<double> fft;
    std::vector<Complex> out(h * w);
    std::vector<Complex> in(w), tmp(w);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) in[c] = plane[r * w + c];
        fft_1d(fft, tmp, in, false);
        std::copy(tmp.begin(), tmp.end(), out.begin() + static_cast<std::ptrdiff_t>(r * w));
    }
    std::vector<Complex> col(h), colOut(h);
    for (std::size_t c = 0; c < w; ++c) {
        for (std::size_t r = 0; r < h; ++r) col[r] = out[r * w + c];
        fft_1d(fft, colOut, col, false);
        for (std::size_t r = 0; r < h; ++r) out[r * w + c] = colOut[r];
    }
    return out;
}

/// Inverse of forward_2d, including the 1/(H*W) factor. Complex output.
inline std::vector<Complex> inverse_2d(const std::vector<Complex>& spec, std::size_t h, std::size_t w) {
    Eigen::FFT<double> fft;
    std::vector<Complex> out = spec;
    std::vector<Complex> col(h), colOut(h);
    for (std::size_t c = 0; c < w; ++c) {
        for (std::size_t r = 0; r < h; ++r) col[r] = out[r * w + c];
        fft_1d(fft, colOut, col, true);
        for (std::size_t r = 0; r < h; ++r) out[r * w + c] = colOut[r];
    }
    std::vector<Complex> row(w), rowOut(w);
    for (std::size_t r = 0; r < h; ++r) {
        std::copy(out.begin() + static_cast<std::ptrdiff_t>(r * w), out.begin() + static_cast<std::ptrdiff_t>((r + 1) * w),
                  row.begin());
        fft_1d(fft, rowOut, row, true);
        std::copy(rowOut.begin(), rowOut.end(), out.begin() + static_cast<std::ptrdiff_t>(r * w));
    }
    return out;
}

}  // namespace spectral

struct ReattendResult {
    LatentGrid output;
    std::size_t scaledBins = 0;  ///< over all channels
    double maxImag = 0.0;        ///< largest |imag| left after the inverse transform
    double maxReal = 0.0;
};

inline ReattendResult reattend_detailed(const LatentGrid& hOrig, const LatentGrid& hSafe, const FreqMask& mask,
                                        double s = kDefaultAttenuation,
                                        SpectralComparison compare = SpectralComparison::Greater) {
    detail::require(hOrig.same_shape(hSafe), ErrorCode::InvalidDimensions, "latent shapes differ");
    detail::require(mask.height == hSafe.height && mask.width == hSafe.width, ErrorCode::InvalidDimensions,
                    "mask shape != latent plane shape");
    detail::require(s > 0.0 && s <= 1.0, ErrorCode::InvalidParameter, "attenuation s must lie in (0, 1]");

    const std::size_t h = hSafe.height, w = hSafe.width, plane = hSafe.plane();
    const auto shiftedIn = [&](std::size_t u, std::size_t v) { return mask((u + h / 2) % h, (v + w / 2) % w); };
    const auto partner = [&](std::size_t k) { return ((h - k / w) % h) * w + (w - k % w) % w; };

    // Eligible bins in natural (unshifted) order, closed under conjugation.
    std::vector<bool> eligible(plane, false);
    for (std::size_t k = 0; k < plane; ++k) {
        const std::size_t p = partner(k);
        eligible[k] = shiftedIn(k / w, k % w) || shiftedIn(p / w, p % w);
    }

    ReattendResult res{hSafe, 0, 0.0, 0.0};
    for (std::size_t ch = 0; ch < hSafe.channels; ++ch) {
        const auto fo = spectral::forward_2d(hOrig.data.data() + ch * plane, h, w);
        auto fs = spectral::forward_2d(hSafe.data.data() + ch * plane, h, w);

        std::vector<bool> hit(plane, false);
        std::size_t scaled = 0;
        for (std::size_t k = 0; k < plane; ++k) {
            if (!eligible[k]) continue;
            const std::size_t key = std::min(k, partner(k));
            const double ms = std::abs(fs[key]);
            const double mo = std::abs(fo[key]);
            hit[k] = compare == SpectralComparison::Greater ? ms > mo : ms < mo;
            scaled += hit[k] ? 1 : 0;
        }
        if (scaled == 0) continue;  // nothing changes: keep the input bitwise

        for (std::size_t k = 0; k < plane; ++k)
            if (hit[k]) fs[k] *= s;
        res.scaledBins += scaled;

        const auto back = spectral::inverse_2d(fs, h, w);
        for (std::size_t k = 0; k < plane; ++k) {
            res.output.data[ch * plane + k] = back[k].real();
            res.maxImag = std::max(res.maxImag, std::abs(back[k].imag()));
            res.maxReal = std::max(res.maxReal, std::abs(back[k].real()));
        }
    }
    return res;
}

inline LatentGrid reattend(const LatentGrid& hOrig, const LatentGrid& hSafe, const FreqMask& mask,
                           double s = kDefaultAttenuation, SpectralComparison compare = SpectralComparison::Greater) {
    return reattend_detailed(hOrig, hSafe, mask, s, compare).output;
}

}  // namespace concept_guard
