#pragma once

// Token-level filtering: leave-one-out proximity of each prompt token to a
// concept subspace, trigger detection, projection of tokens into the
// prompt's own input space with the concept component removed, selective
// blending, and the threshold that decides how many denoising steps see the
// filtered embedding.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "concept_guard/error.hpp"
#include "concept_guard/linalg.hpp"

namespace concept_guard {

inline constexpr double kDefaultAlpha = 0.01;
inline constexpr double kDefaultGamma = 10.0;

/// N x D token embeddings of one prompt. Rows flagged invalid are padding
/// and never take part in pooling.
struct PromptEmbedding {
    std::vector<std::string> tokens;
    DenseMatrix embeddings;
    std::vector<bool> valid;

    explicit PromptEmbedding(DenseMatrix e, std::vector<std::string> labels = {}, std::vector<bool> validFlags = {})
        : tokens(std::move(labels)), embeddings(std::move(e)), valid(std::move(validFlags)) {
        if (tokens.empty()) tokens.assign(embeddings.rows(), std::string{});
        if (valid.empty()) valid.assign(embeddings.rows(), true);
        detail::require(tokens.size() == embeddings.rows() && valid.size() == embeddings.rows(),
                        ErrorCode::InvalidDimensions, "token labels / valid flags must match embedding rows");
        detail::require(valid_count() >= 1, ErrorCode::DegeneratePrompt, "prompt has no valid tokens");
    }

    std::size_t size() const noexcept { return embeddings.rows(); }
    std::size_t dim() const noexcept { return embeddings.cols(); }

    std::size_t valid_count() const noexcept {
        std::size_t n = 0;
        for (bool v : valid) n += v ? 1 : 0;
        return n;
    }

    std::vector<std::size_t> valid_indices() const {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < valid.size(); ++i)
            if (valid[i]) idx.push_back(i);
        return idx;
    }
};

/// Span of the concept phrase embeddings, one column per phrase. K = 0 is
/// allowed and means "nothing to filter": the projector is the zero map.
struct ConceptSubspace {
    std::vector<std::string> labels;
    Projector projector;

    static ConceptSubspace empty(std::size_t dim, double tolerance = kDefaultPinvTolerance) {
        return ConceptSubspace{{}, Projector::zero(dim, tolerance)};
    }

    static ConceptSubspace from_basis(DenseMatrix basis, std::vector<std::string> labels = {},
                                      double tolerance = kDefaultPinvTolerance) {
        if (labels.empty()) labels.assign(basis.cols(), std::string{});
        detail::require(labels.size() == basis.cols(), ErrorCode::InvalidDimensions, "one label per concept column");
        return ConceptSubspace{std::move(labels), Projector(std::move(basis), tolerance)};
    }

    std::size_t dim() const noexcept { return projector.dim(); }
    std::size_t size() const noexcept { return projector.has_basis() ? projector.basis().cols() : 0; }
};

struct ProximityReport {
    Vector distances;  ///< |(I - P_C) mean of valid tokens except i|; 0 on padding
    Vector looMeans;   ///< mean of the other valid tokens' distances; 0 on padding
    std::vector<bool> valid;
    std::vector<bool> mask;  ///< empty until detect_triggers runs
};

using TriggerMask = std::vector<bool>;

enum class BlendMode { Projected, Null };

namespace detail {

// Mean of `values` taken relative to the first one, so a set of identical
// values reproduces that value exactly.
template <typename Get>
double shifted_mean(std::span<const std::size_t> idx, Get&& get) {
    const double ref = get(idx.front());
    double acc = 0.0;
    for (std::size_t k = 1; k < idx.size(); ++k) acc += get(idx[k]) - ref;
    return ref + acc / static_cast<double>(idx.size());
}

inline Vector mean_rows(const DenseMatrix& m, std::span<const std::size_t> idx) {
    Vector out(m.cols());
    for (std::size_t c = 0; c < m.cols(); ++c)
        out[c] = shifted_mean(idx, [&](std::size_t r) { return m(r, c); });
    return out;
}

inline void require_valid_index(const PromptEmbedding& prompt, std::size_t i) {
    require(i < prompt.size(), ErrorCode::InvalidIndex, "token index out of range");
    require(prompt.valid[i], ErrorCode::InvalidIndex, "token index refers to padding");
}

inline void require_two_valid(const PromptEmbedding& prompt) {
    require(prompt.valid_count() >= 2, ErrorCode::DegeneratePrompt, "need at least two valid tokens");
}

}  // namespace detail

/// Mean over valid tokens.
inline Vector pooled(const PromptEmbedding& prompt, const DenseMatrix& rows) {
    detail::require(rows.rows() == prompt.size(), ErrorCode::InvalidDimensions, "row count != prompt length");
    const auto idx = prompt.valid_indices();
    return detail::mean_rows(rows, idx);
}

inline Vector pooled(const PromptEmbedding& prompt) { return pooled(prompt, prompt.embeddings); }

/// Mean of the valid tokens with token `i` left out.
inline Vector masked_pooled(const PromptEmbedding& prompt, std::size_t i) {
    detail::require_two_valid(prompt);
    detail::require_valid_index(prompt, i);
    std::vector<std::size_t> idx;
    for (std::size_t j : prompt.valid_indices())
        if (j != i) idx.push_back(j);
    return detail::mean_rows(prompt.embeddings, idx);
}

/// D x n_valid matrix whose columns are the leave-one-out means of the valid
/// tokens, in token order.
inline DenseMatrix input_space_basis(const PromptEmbedding& prompt) {
    detail::require_two_valid(prompt);
    std::vector<Vector> cols;
    for (std::size_t i : prompt.valid_indices()) cols.push_back(masked_pooled(prompt, i));
    return DenseMatrix::from_columns(cols);
}

/// Distances of every leave-one-out mean to the concept subspace, plus the
/// leave-one-out averages of those distances. The mask is left empty.
inline ProximityReport concept_distances(const PromptEmbedding& prompt, const ConceptSubspace& subspace) {
    detail::require_two_valid(prompt);
    detail::require(subspace.dim() == prompt.dim(), ErrorCode::InvalidDimensions, "concept dimension != embedding dimension");
    const std::size_t n = prompt.size();
    ProximityReport report{Vector(n, 0.0), Vector(n, 0.0), prompt.valid, {}};
    const auto idx = prompt.valid_indices();
    for (std::size_t i : idx) report.distances[i] = norm2(residual(subspace.projector, masked_pooled(prompt, i)));
    for (std::size_t i : idx) {
        std::vector<std::size_t> others;
        for (std::size_t j : idx)
            if (j != i) others.push_back(j);
        report.looMeans[i] = detail::shifted_mean(others, [&](std::size_t j) { return report.distances[j]; });
    }
    return report;
}

/// Flags token i when its distance strictly exceeds (1 + alpha) times the
/// mean distance of the other valid tokens. Padding is never flagged.
inline TriggerMask detect_triggers(const ProximityReport& report, double alpha = kDefaultAlpha) {
    detail::require(alpha >= 0.0 && std::isfinite(alpha), ErrorCode::InvalidParameter, "alpha must be finite and >= 0");
    const std::size_t n = report.distances.size();
    detail::require(report.looMeans.size() == n && report.valid.size() == n, ErrorCode::InvalidDimensions,
                    "malformed proximity report");
    std::size_t nValid = 0;
    for (bool v : report.valid) nValid += v ? 1 : 0;
    detail::require(nValid >= 2, ErrorCode::DegeneratePrompt, "need at least two valid tokens");
    TriggerMask mask(n, false);
    for (std::size_t i = 0; i < n; ++i)
        mask[i] = report.valid[i] && report.distances[i] > (1.0 + alpha) * report.looMeans[i];
    return mask;
}

/// Row i = P_I (I - P_C) E[i], where P_I projects onto the columns of
/// `inputBasis`.
inline DenseMatrix project_tokens(const PromptEmbedding& prompt, const Projector& inputProjector,
                                  const ConceptSubspace& subspace) {
    detail::require(inputProjector.dim() == prompt.dim() && subspace.dim() == prompt.dim(), ErrorCode::InvalidDimensions,
                    "basis dimension != embedding dimension");
    DenseMatrix out(prompt.size(), prompt.dim());
    for (std::size_t i = 0; i < prompt.size(); ++i) {
        const Vector r = inputProjector.apply(residual(subspace.projector, prompt.embeddings.row(i)));
        std::copy(r.begin(), r.end(), out.row(i).begin());
    }
    return out;
}

inline DenseMatrix project_tokens(const PromptEmbedding& prompt, const DenseMatrix& inputBasis,
                                  const ConceptSubspace& subspace, double tolerance = kDefaultPinvTolerance) {
    detail::require(inputBasis.rows() == prompt.dim(), ErrorCode::InvalidDimensions, "input basis must be D x n");
    return project_tokens(prompt, Projector(inputBasis, tolerance), subspace);
}

/// Replaces flagged rows by the projected row (or the null embedding) and
/// keeps every other row, padding included, untouched.
inline DenseMatrix blend(const PromptEmbedding& prompt, const DenseMatrix& projected, const TriggerMask& mask,
                         BlendMode mode = BlendMode::Projected, std::optional<Vector> nullEmbedding = std::nullopt) {
    detail::require(projected.rows() == prompt.size() && projected.cols() == prompt.dim(), ErrorCode::InvalidDimensions,
                    "projected shape != prompt shape");
    detail::require(mask.size() == prompt.size(), ErrorCode::InvalidDimensions, "mask length != prompt length");
    const Vector null = nullEmbedding.value_or(Vector(prompt.dim(), 0.0));
    detail::require(null.size() == prompt.dim(), ErrorCode::InvalidDimensions, "null embedding length != D");
    detail::require_finite(null, "null embedding has non-finite entries");

    DenseMatrix out = prompt.embeddings;
    for (std::size_t i = 0; i < prompt.size(); ++i) {
        if (!mask[i] || !prompt.valid[i]) continue;
        const auto src = mode == BlendMode::Projected ? projected.row(i) : std::span<const double>(null);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    const double na = norm2(a);
    const double nb = norm2(b);
    detail::require(na > 0.0 && nb > 0.0, ErrorCode::DegeneratePrompt, "cosine of a zero vector");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

/// gamma * sigmoid(1 - cos(pool(E), pool(projected))).
inline double self_validation_threshold(const PromptEmbedding& prompt, const DenseMatrix& projected,
                                        double gamma = kDefaultGamma) {
    detail::require(gamma >= 0.0 && std::isfinite(gamma), ErrorCode::InvalidParameter, "gamma must be finite and >= 0");
    const double c = cosine_similarity(pooled(prompt), pooled(prompt, projected));
    return gamma * sigmoid(1.0 - c);
}

/// Rounds half away from zero.
inline long long round_steps(double tPrime) { return std::llround(tPrime); }

/// The filtered embedding applies on steps 0..round(t') inclusive.
inline bool filtered_step(long long t, double tPrime) { return t <= round_steps(tPrime); }

inline const DenseMatrix& select_for_timestep(long long t, double tPrime, const DenseMatrix& safeEmb,
                                              const DenseMatrix& origEmb) {
    return filtered_step(t, tPrime) ? safeEmb : origEmb;
}

}  // namespace concept_guard
