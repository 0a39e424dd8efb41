#pragma once

// JSON reports and configuration. Field names here are a stable schema that
// downstream tools parse; see README for the full listing.

#include <algorithm>
#include <string>
#include <vector>

#include "json.hpp"

#include "concept_guard/error.hpp"
#include "concept_guard/pipeline.hpp"
#include "concept_guard/sim.hpp"

namespace concept_guard::report {

using nlohmann::json;

inline json mask_json(const std::vector<bool>& mask) {
    json out = json::array();
    for (bool m : mask) out.push_back(m ? 1 : 0);
    return out;
}

/// Distances and trigger decisions plus the threshold.
inline json analysis(const FilterResult& r) {
    return json{{"distances", r.report.distances},
                {"looMeans", r.report.looMeans},
                {"mask", mask_json(r.mask)},
                {"pooledCosine", r.diagnostics.pooledCosine},
                {"tPrime", r.tPrime},
                {"roundedT", r.roundedT},
                {"degenerate", r.degenerate}};
}

inline json filter_report(const FilterResult& r, const FilterConfig& config) {
    json out = analysis(r);
    out["residualToConcept"] = r.diagnostics.residualToConcept;
    out["blendMode"] = config.blendMode == BlendMode::Projected ? "projected" : "null";
    out["alpha"] = config.alpha;
    out["gamma"] = config.gamma;
    out["totalSteps"] = r.totalSteps;
    return out;
}

inline json trajectory(const Trajectory& t, const SimConfig& config) {
    json steps = json::array();
    for (std::size_t i = 0; i < t.divergence.size(); ++i)
        steps.push_back({{"step", i},
                         {"divergence", t.divergence[i]},
                         {"baselineNorm", norm2(t.baseline[i].data)},
                         {"filteredNorm", norm2(t.filtered[i].data)}});
    return json{{"seed", config.seed},
                {"steps", config.steps()},
                {"tPrime", t.filter.tPrime},
                {"roundedT", t.filter.roundedT},
                {"mask", mask_json(t.filter.mask)},
                {"activeSteps", t.activeSteps},
                {"divergence", t.divergence},
                {"maxDivergence", t.divergence.empty() ? 0.0 : *std::max_element(t.divergence.begin(), t.divergence.end())},
                {"trajectory", steps},
                {"baselineFinal", t.baseline.empty() ? Vector{} : t.baseline.back().data},
                {"filteredFinal", t.filtered.empty() ? Vector{} : t.filtered.back().data}};
}

namespace detail {

inline void schema(bool ok, const std::string& what) { concept_guard::detail::require(ok, ErrorCode::SchemaError, what.c_str()); }

inline void only_keys(const json& obj, std::initializer_list<const char*> keys, const std::string& where) {
    for (const auto& [k, _] : obj.items()) {
        bool known = false;
        for (const char* allowed : keys) known = known || k == allowed;
        schema(known, "unknown key \"" + k + "\" in " + where);
    }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        schema(false, std::string("bad type for \"") + key + "\"");
    }
}

}  // namespace detail

inline FilterConfig filter_config(const json& j) {
    detail::schema(j.is_object(), "filter config must be an object");
    detail::only_keys(j,
                      {"alpha", "gamma", "s", "rho", "totalSteps", "pinvTolerance", "blendMode", "spectralComparison",
                       "spectralEnabled", "nullEmbedding", "excludeSpecialTokens", "specialTokens"},
                      "filter config");
    FilterConfig c;
    detail::read(j, "alpha", c.alpha);
    detail::read(j, "gamma", c.gamma);
    detail::read(j, "s", c.s);
    detail::read(j, "rho", c.rho);
    detail::read(j, "totalSteps", c.totalSteps);
    detail::read(j, "pinvTolerance", c.pinvTolerance);
    detail::read(j, "spectralEnabled", c.spectralEnabled);
    detail::read(j, "excludeSpecialTokens", c.excludeSpecialTokens);
    detail::read(j, "specialTokens", c.specialTokens);
    if (j.contains("nullEmbedding")) {
        Vector v;
        detail::read(j, "nullEmbedding", v);
        c.nullEmbedding = std::move(v);
    }
    std::string mode = "projected", cmp = "greater";
    detail::read(j, "blendMode", mode);
    detail::read(j, "spectralComparison", cmp);
    detail::schema(mode == "projected" || mode == "null", "blendMode must be \"projected\" or \"null\"");
    detail::schema(cmp == "greater" || cmp == "less", "spectralComparison must be \"greater\" or \"less\"");
    c.blendMode = mode == "projected" ? BlendMode::Projected : BlendMode::Null;
    c.spectralComparison = cmp == "greater" ? SpectralComparison::Greater : SpectralComparison::Less;
    return c;
}

/// Paths found in a simulation config, relative to the config file.
struct SimInputs {
    std::string prompt;
    std::string concepts;
    std::string conceptEmbeddings;
};

inline SimConfig sim_config(const json& j, SimInputs* inputs = nullptr) {
    detail::schema(j.is_object(), "simulation config must be an object");
    detail::only_keys(j, {"steps", "omega", "eta", "latent", "seed", "filter", "prompt", "concepts", "conceptEmbeddings"},
                      "simulation config");
    SimConfig c;
    if (j.contains("filter")) c.filter = filter_config(j.at("filter"));
    detail::read(j, "steps", c.filter.totalSteps);
    detail::read(j, "omega", c.omega);
    detail::read(j, "eta", c.eta);
    detail::read(j, "seed", c.seed);
    if (j.contains("latent")) {
        const auto& lat = j.at("latent");
        detail::schema(lat.is_object(), "latent must be an object");
        detail::only_keys(lat, {"channels", "height", "width"}, "latent");
        detail::read(lat, "channels", c.channels);
        detail::read(lat, "height", c.height);
        detail::read(lat, "width", c.width);
    }
    if (inputs) {
        detail::read(j, "prompt", inputs->prompt);
        detail::read(j, "concepts", inputs->concepts);
        detail::read(j, "conceptEmbeddings", inputs->conceptEmbeddings);
    }
    c.validate();
    return c;
}

}  // namespace concept_guard::report
