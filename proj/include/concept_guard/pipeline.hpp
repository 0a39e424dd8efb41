#pragma once

// One prompt through the whole text-side filter, plus the per-step embedding
// selector and latent hook a host denoising loop calls.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "concept_guard/error.hpp"
#include "concept_guard/linalg.hpp"
#include "concept_guard/spectral.hpp"
#include "concept_guard/token_filter.hpp"

namespace concept_guard {

inline const std::vector<std::string>& default_special_tokens() {
    static const std::vector<std::string> tokens{"<|startoftext|>", "<|endoftext|>", "<s>", "</s>",
                                                 "[CLS]",           "[SEP]",         "<bos>", "<eos>"};
    return tokens;
}

struct FilterConfig {
    double alpha = kDefaultAlpha;
    double gamma = kDefaultGamma;
    double s = kDefaultAttenuation;
    double rho = kDefaultRho;
    long long totalSteps = 50;
    double pinvTolerance = kDefaultPinvTolerance;
    BlendMode blendMode = BlendMode::Projected;
    SpectralComparison spectralComparison = SpectralComparison::Greater;
    bool spectralEnabled = true;
    std::optional<Vector> nullEmbedding;
    bool excludeSpecialTokens = false;
    std::vector<std::string> specialTokens = default_special_tokens();

    void validate() const {
        detail::require(alpha >= 0.0 && std::isfinite(alpha), ErrorCode::InvalidParameter, "alpha must be >= 0");
        detail::require(gamma >= 0.0 && std::isfinite(gamma), ErrorCode::InvalidParameter, "gamma must be >= 0");
        detail::require(s > 0.0 && s <= 1.0, ErrorCode::InvalidParameter, "s must lie in (0, 1]");
        detail::require(rho >= 0.0 && rho <= 1.0, ErrorCode::InvalidParameter, "rho must lie in [0, 1]");
        detail::require(totalSteps >= 1, ErrorCode::InvalidParameter, "totalSteps must be >= 1");
        detail::require(pinvTolerance >= 0.0 && std::isfinite(pinvTolerance), ErrorCode::InvalidParameter,
                        "pinvTolerance must be >= 0");
        if (nullEmbedding) detail::require_finite(*nullEmbedding, "null embedding has non-finite entries");
    }
};

struct FilterDiagnostics {
    double pooledCosine = 1.0;
    Vector residualToConcept;  ///< |P_C pProj[i]| per token
    double elapsedMicros = 0.0;
};

struct FilterResult {
    TriggerMask mask;
    ProximityReport report;
    DenseMatrix pProj;
    DenseMatrix pSafe;
    double tPrime = 0.0;
    long long roundedT = 0;
    long long totalSteps = 1;
    bool degenerate = false;  ///< fewer than two usable tokens; result is a pass-through
    FilterDiagnostics diagnostics;
};

/// Copy of `prompt` with the configured special tokens marked as padding.
inline PromptEmbedding effective_prompt(const PromptEmbedding& prompt, const FilterConfig& config) {
    if (!config.excludeSpecialTokens) return prompt;
    std::vector<bool> valid = prompt.valid;
    for (std::size_t i = 0; i < prompt.size(); ++i)
        if (std::find(config.specialTokens.begin(), config.specialTokens.end(), prompt.tokens[i]) !=
            config.specialTokens.end())
            valid[i] = false;
    return PromptEmbedding(prompt.embeddings, prompt.tokens, std::move(valid));
}

namespace detail {

inline FilterResult pass_through(const PromptEmbedding& prompt, const FilterConfig& config) {
    const std::size_t n = prompt.size();
    ProximityReport report{Vector(n, 0.0), Vector(n, 0.0), prompt.valid, std::vector<bool>(n, false)};
    FilterResult r{TriggerMask(n, false), std::move(report), prompt.embeddings, prompt.embeddings, 0.0, 0,
                   config.totalSteps, true, {}};
    r.diagnostics.residualToConcept.assign(n, 0.0);
    return r;
}

}  // namespace detail

/// Runs distances -> triggers -> input basis -> projection -> blend ->
/// threshold and keeps every intermediate. Prompts with fewer than two
/// usable tokens come back as an unfiltered pass-through flagged
/// `degenerate` instead of failing.
inline FilterResult prepare(const PromptEmbedding& prompt, const ConceptSubspace& subspace, const FilterConfig& config) {
    config.validate();
    detail::require(subspace.dim() == prompt.dim(), ErrorCode::InvalidDimensions, "concept dimension != embedding dimension");
    if (config.nullEmbedding)
        detail::require(config.nullEmbedding->size() == prompt.dim(), ErrorCode::InvalidDimensions,
                        "null embedding length != D");
    const auto start = std::chrono::steady_clock::now();

    std::optional<PromptEmbedding> eff;
    try {
        eff.emplace(effective_prompt(prompt, config));
    } catch (const Error& e) {
        if (e.code() != ErrorCode::DegeneratePrompt) throw;
    }
    if (!eff || eff->valid_count() < 2) return detail::pass_through(eff ? *eff : prompt, config);

    const Vector pooledOrig = pooled(*eff);
    if (norm2(pooledOrig) == 0.0) return detail::pass_through(*eff, config);

    ProximityReport report = concept_distances(*eff, subspace);
    if (subspace.projector.rank() == 0) {
        // Nothing to filter: identity on the embeddings, cosine exactly 1.
        FilterResult r{TriggerMask(eff->size(), false), std::move(report), eff->embeddings, eff->embeddings,
                       config.gamma * sigmoid(0.0), 0, config.totalSteps, false, {}};
        r.roundedT = round_steps(r.tPrime);
        r.report.mask = r.mask;
        r.diagnostics.residualToConcept.assign(eff->size(), 0.0);
        r.diagnostics.elapsedMicros =
            std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start).count();
        return r;
    }
    TriggerMask mask = detect_triggers(report, config.alpha);
    report.mask = mask;

    const Projector inputProjector(input_space_basis(*eff), config.pinvTolerance);
    DenseMatrix pProj = project_tokens(*eff, inputProjector, subspace);
    DenseMatrix pSafe = blend(*eff, pProj, mask, config.blendMode, config.nullEmbedding);

    // A projection that wipes out the whole pooled prompt counts as orthogonal.
    const Vector pooledProj = pooled(*eff, pProj);
    const double cosine = norm2(pooledProj) > 0.0 ? cosine_similarity(pooledOrig, pooledProj) : 0.0;
    const double tPrime = config.gamma * sigmoid(1.0 - cosine);

    FilterResult r{std::move(mask), std::move(report), std::move(pProj), std::move(pSafe), tPrime,
                   round_steps(tPrime), config.totalSteps, false, {}};
    r.diagnostics.pooledCosine = cosine;
    r.diagnostics.residualToConcept.resize(eff->size());
    for (std::size_t i = 0; i < eff->size(); ++i)
        r.diagnostics.residualToConcept[i] = norm2(subspace.projector.apply(r.pProj.row(i)));
    r.diagnostics.elapsedMicros =
        std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start).count();
    return r;
}

/// Embedding the conditional branch should use at step t (0 = first,
/// noisiest step).
inline const DenseMatrix& embedding_at(const FilterResult& result, const DenseMatrix& originalE, long long t) {
    detail::require(t >= 0 && t < result.totalSteps, ErrorCode::InvalidParameter, "step index out of range");
    detail::require(originalE.rows() == result.pSafe.rows() && originalE.cols() == result.pSafe.cols(),
                    ErrorCode::InvalidDimensions, "original embedding shape != filtered shape");
    return t <= result.roundedT ? result.pSafe : originalE;
}

/// Latent features for step t: re-attended while the filtered embedding is
/// active and spectral filtering is on, otherwise hSafe untouched.
inline LatentGrid latent_hook(const FilterResult& result, long long t, const LatentGrid& hOrig, const LatentGrid& hSafe,
                              const FilterConfig& config) {
    detail::require(hOrig.same_shape(hSafe), ErrorCode::InvalidDimensions, "latent shapes differ");
    if (!config.spectralEnabled || t > result.roundedT) return hSafe;
    return reattend(hOrig, hSafe, build_lowfreq_mask(hSafe.height, hSafe.width, config.rho), config.s,
                    config.spectralComparison);
}

}  // namespace concept_guard
