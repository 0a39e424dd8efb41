#pragma once

// Concept vocabularies: a JSON list of concepts and their phrases plus an
// SFEB file with one embedding per phrase.
//
//   {"concepts": [{"label": "Nudity", "phrases": ["sexual acts", "pornography"]}, ...]}
//
// The embedding file is either
//   [D, K]     one column per phrase, or
//   [K, L, D]  L token embeddings per phrase, averaged over the tokens whose
//              valid flag is set (all tokens when there is no token table).
// Columns/phrases follow (concept order, phrase order).

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "concept_guard/error.hpp"
#include "concept_guard/sfeb.hpp"
#include "concept_guard/token_filter.hpp"

namespace concept_guard {

struct ConceptEntry {
    std::string label;
    std::vector<std::string> phrases;
};

inline std::vector<ConceptEntry> parse_vocabulary(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        detail::fail(ErrorCode::FormatError, std::string("concept vocabulary is not valid JSON: ") + e.what());
    }
    const auto schema = [](bool ok, const char* what) { detail::require(ok, ErrorCode::SchemaError, what); };
    schema(doc.is_object() && doc.contains("concepts") && doc["concepts"].is_array(),
           "vocabulary needs a top-level \"concepts\" array");

    std::vector<ConceptEntry> out;
    std::set<std::string> seen;
    for (const auto& c : doc["concepts"]) {
        schema(c.is_object() && c.contains("label") && c["label"].is_string(), "concept needs a string \"label\"");
        schema(c.contains("phrases") && c["phrases"].is_array(), "concept needs a \"phrases\" array");
        ConceptEntry entry{c["label"].get<std::string>(), {}};
        schema(!entry.label.empty(), "concept labels must be non-empty");
        schema(seen.insert(entry.label).second, "concept labels must be unique");
        for (const auto& p : c["phrases"]) {
            schema(p.is_string(), "phrases must be strings");
            entry.phrases.push_back(p.get<std::string>());
        }
        out.push_back(std::move(entry));
    }
    return out;
}

/// D x K phrase matrix from a [D, K] or [K, L, D] container.
inline DenseMatrix phrase_matrix(const sfeb::Container& c) {
    if (c.dims.size() == 2) return sfeb::to_matrix(c);
    const std::size_t k = c.dims[0], l = c.dims[1], d = c.dims[2];
    if (c.tokens) detail::require(c.tokens->size() == k * l, ErrorCode::SchemaError, "token table length != K*L");
    DenseMatrix m(d, k);
    for (std::size_t j = 0; j < k; ++j) {
        std::vector<std::size_t> idx;
        for (std::size_t t = 0; t < l; ++t)
            if (!c.tokens || (*c.tokens)[j * l + t].valid) idx.push_back(t);
        detail::require(!idx.empty(), ErrorCode::SchemaError, "phrase has no valid tokens");
        for (std::size_t x = 0; x < d; ++x)
            m(x, j) = detail::shifted_mean(idx, [&](std::size_t t) { return double(c.payload[(j * l + t) * d + x]); });
    }
    return m;
}

/// Builds the concept subspace. When the vocabulary has no phrases the
/// embedding file is not read and `dim` (normally the prompt's D) fixes the
/// dimension of the empty subspace.
inline ConceptSubspace load_concepts(const std::filesystem::path& jsonPath,
                                     const std::optional<std::filesystem::path>& embPath,
                                     std::optional<std::size_t> dim = std::nullopt,
                                     double tolerance = kDefaultPinvTolerance) {
    std::ifstream in(jsonPath);
    if (!in) detail::fail(ErrorCode::IoError, "cannot open " + jsonPath.string());
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto entries = parse_vocabulary(text);

    std::vector<std::string> labels;
    for (const auto& e : entries)
        for (const auto& p : e.phrases) labels.push_back(e.label + ":" + p);

    if (labels.empty()) {
        detail::require(dim.has_value(), ErrorCode::SchemaError, "empty vocabulary needs an embedding dimension");
        return ConceptSubspace::empty(*dim, tolerance);
    }
    detail::require(embPath.has_value(), ErrorCode::SchemaError, "vocabulary has phrases but no embedding file");
    DenseMatrix basis = phrase_matrix(sfeb::read_container(*embPath));
    detail::require(basis.cols() == labels.size(), ErrorCode::SchemaError,
                    "phrase count in vocabulary != columns in embedding file");
    if (dim) detail::require(basis.rows() == *dim, ErrorCode::InvalidDimensions, "concept dimension != prompt dimension");
    return ConceptSubspace::from_basis(std::move(basis), std::move(labels), tolerance);
}

}  // namespace concept_guard
