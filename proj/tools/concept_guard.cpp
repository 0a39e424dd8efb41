// concept-guard: command-line front end for the embedding filter.
//
// Exit codes: 0 success, 1 internal error, 2 input/format error,
// 3 numeric or degenerate-input error.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "concept_guard/concept_guard.hpp"

namespace fs = std::filesystem;
namespace cg = concept_guard;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;

int exit_code(cg::ErrorCode code) {
    switch (code) {
        case cg::ErrorCode::DegeneratePrompt:
        case cg::ErrorCode::NonFiniteInput:
        case cg::ErrorCode::NumericDivergence: return kExitNumeric;
        default: return kExitInput;
    }
}

void setup_logging() {
    auto logger = spdlog::stderr_logger_mt("concept-guard");
    logger->set_pattern("[%l] %v");
    auto level = spdlog::level::warn;
    if (const char* env = std::getenv("CONCEPT_GUARD_LOG")) {
        const std::string v = env;
        if (v == "error") level = spdlog::level::err;
        else if (v == "warn") level = spdlog::level::warn;
        else if (v == "info") level = spdlog::level::info;
        else if (v == "debug") level = spdlog::level::debug;
    }
    logger->set_level(level);
    spdlog::set_default_logger(logger);
}

// Outputs are staged in memory and only written once the command succeeded;
// if a later write fails, earlier ones from the same command are removed.
class OutputSet {
public:
    void add(fs::path path, std::vector<std::uint8_t> bytes) { pending_.push_back({std::move(path), std::move(bytes)}); }

    void add_json(fs::path path, const json& j) {
        const std::string text = j.dump(2) + "\n";
        add(std::move(path), std::vector<std::uint8_t>(text.begin(), text.end()));
    }

    void commit() {
        std::vector<fs::path> done;
        try {
            for (const auto& [path, bytes] : pending_) {
                cg::sfeb::write_bytes_atomic(path, bytes);
                done.push_back(path);
            }
        } catch (...) {
            std::error_code ec;
            for (const auto& p : done) fs::remove(p, ec);
            throw;
        }
    }

private:
    std::vector<std::pair<fs::path, std::vector<std::uint8_t>>> pending_;
};

struct FilterInputs {
    std::string prompt;
    std::string concepts;
    std::string conceptEmb;
};

struct Loaded {
    cg::PromptEmbedding prompt;
    std::optional<std::vector<cg::sfeb::TokenEntry>> tokens;
    cg::ConceptSubspace subspace;
};

Loaded load_inputs(const FilterInputs& in, const cg::FilterConfig& config) {
    const auto container = cg::sfeb::read_container(in.prompt);
    cg::PromptEmbedding prompt = cg::sfeb::to_prompt(container);
    std::optional<fs::path> emb;
    if (!in.conceptEmb.empty()) emb = in.conceptEmb;
    auto subspace = cg::load_concepts(in.concepts, emb, prompt.dim(), config.pinvTolerance);
    spdlog::info("prompt {} tokens x {} dims, {} concept phrases (rank {})", prompt.size(), prompt.dim(), subspace.size(),
                 subspace.projector.rank());
    return {std::move(prompt), container.tokens, std::move(subspace)};
}

void add_filter_options(CLI::App* cmd, FilterInputs& in, cg::FilterConfig& config) {
    cmd->add_option("--prompt", in.prompt, "Prompt embedding container [N, D]")->required();
    cmd->add_option("--concepts", in.concepts, "Concept vocabulary JSON")->required();
    cmd->add_option("--concept-emb", in.conceptEmb, "Concept phrase embeddings [D, K] or [K, L, D]");
    cmd->add_option("--alpha", config.alpha, "Trigger sensitivity")->check(CLI::NonNegativeNumber);
    cmd->add_option("--gamma", config.gamma, "Threshold scale")->check(CLI::NonNegativeNumber);
    cmd->add_option("--pinv-tol", config.pinvTolerance, "Relative singular-value cutoff");
    cmd->add_flag("--exclude-special", config.excludeSpecialTokens, "Treat begin/end tokens as padding");
}

int run_analyze(const FilterInputs& in, const cg::FilterConfig& config, const std::string& out) {
    const auto loaded = load_inputs(in, config);
    const auto result = cg::prepare(loaded.prompt, loaded.subspace, config);
    if (result.degenerate) {
        spdlog::error("prompt has fewer than two usable tokens");
        return kExitNumeric;
    }
    const json j = cg::report::analysis(result);
    if (out.empty()) {
        std::cout << j.dump(2) << "\n";
    } else {
        OutputSet outputs;
        outputs.add_json(out, j);
        outputs.commit();
    }
    return kExitOk;
}

int run_filter(const FilterInputs& in, const cg::FilterConfig& config, const std::string& outSafe,
               const std::string& outReport) {
    const auto loaded = load_inputs(in, config);
    const auto result = cg::prepare(loaded.prompt, loaded.subspace, config);
    if (result.degenerate) spdlog::warn("prompt has fewer than two usable tokens; passing it through unfiltered");
    spdlog::debug("prepare took {:.1f} us", result.diagnostics.elapsedMicros);

    OutputSet outputs;
    outputs.add(outSafe, cg::sfeb::encode(cg::sfeb::from_matrix(result.pSafe, loaded.tokens)));
    outputs.add_json(outReport, cg::report::filter_report(result, config));
    outputs.commit();
    return kExitOk;
}

int run_spectral(const std::string& orig, const std::string& safe, double rho, double scale, const std::string& compare,
                 const std::string& out) {
    const auto hOrig = cg::sfeb::to_latent(cg::sfeb::read_container(orig));
    const auto safeContainer = cg::sfeb::read_container(safe);
    const auto hSafe = cg::sfeb::to_latent(safeContainer);
    const auto mask = cg::build_lowfreq_mask(hSafe.height, hSafe.width, rho);
    const auto cmp = compare == "less" ? cg::SpectralComparison::Less : cg::SpectralComparison::Greater;
    const auto res = cg::reattend_detailed(hOrig, hSafe, mask, scale, cmp);
    spdlog::info("scaled {} bins, max |imag| {:.3g}", res.scaledBins, res.maxImag);

    OutputSet outputs;
    auto c = cg::sfeb::from_latent(res.output);
    c.tokens = safeContainer.tokens;
    outputs.add(out, cg::sfeb::encode(c));
    outputs.commit();
    return kExitOk;
}

// Built-in planted-trigger prompt: token 0 lies along the single concept
// direction, the two fillers are orthogonal to it.
std::pair<cg::PromptEmbedding, cg::ConceptSubspace> demo_inputs() {
    cg::PromptEmbedding prompt(cg::DenseMatrix::from_rows({{1, 0}, {0, 1}, {0, 1}}), {"trigger", "filler", "filler"});
    return {std::move(prompt), cg::ConceptSubspace::from_basis(cg::DenseMatrix::from_columns({{1, 0}}), {"demo:concept"})};
}

int run_simulate(const std::string& configPath, std::optional<std::uint64_t> seed, const std::string& out) {
    std::ifstream in(configPath);
    if (!in) throw cg::Error(cg::ErrorCode::IoError, "cannot open " + configPath);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw cg::Error(cg::ErrorCode::FormatError, std::string("config is not valid JSON: ") + e.what());
    }
    cg::report::SimInputs inputs;
    cg::SimConfig config = cg::report::sim_config(j, &inputs);
    if (seed) config.seed = *seed;

    const fs::path base = fs::path(configPath).parent_path();
    const auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

    std::optional<cg::PromptEmbedding> prompt;
    std::optional<cg::ConceptSubspace> subspace;
    if (inputs.prompt.empty()) {
        auto [p, s] = demo_inputs();
        prompt.emplace(std::move(p));
        subspace.emplace(std::move(s));
    } else {
        prompt.emplace(cg::sfeb::to_prompt(cg::sfeb::read_container(resolve(inputs.prompt))));
        if (inputs.concepts.empty()) {
            subspace.emplace(cg::ConceptSubspace::empty(prompt->dim(), config.filter.pinvTolerance));
        } else {
            std::optional<fs::path> emb;
            if (!inputs.conceptEmbeddings.empty()) emb = resolve(inputs.conceptEmbeddings);
            subspace.emplace(cg::load_concepts(resolve(inputs.concepts), emb, prompt->dim(), config.filter.pinvTolerance));
        }
    }

    const auto traj = cg::simulate(config, *prompt, *subspace);
    OutputSet outputs;
    outputs.add_json(out, cg::report::trajectory(traj, config));
    outputs.commit();
    return kExitOk;
}

int run_inspect(const std::string& path) {
    const auto bytes = cg::sfeb::read_bytes(path);
    const auto header = cg::sfeb::inspect(bytes);
    std::cout << "file: " << path << "\n";
    std::cout << "version: " << header.version << "\n";
    std::cout << "dtype: " << (header.dtype == cg::sfeb::kDtypeF32 ? "f32" : "unknown") << "\n";
    std::cout << "dims: [";
    for (std::size_t i = 0; i < header.dims.size(); ++i) std::cout << (i ? "," : "") << header.dims[i];
    std::cout << "]\n";
    if (!header.crcOk()) {
        std::cout << "crc: MISMATCH\n";
        return kExitInput;
    }
    const auto c = cg::sfeb::decode(bytes);
    std::cout << "tokens: " << (c.tokens ? std::to_string(c.tokens->size()) : std::string("none")) << "\n";
    std::cout << "crc: OK\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();

    CLI::App app{"Embedding-space concept filter for text-conditioned diffusion"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);

    cg::FilterConfig analyzeCfg, filterCfg;
    FilterInputs analyzeIn, filterIn;
    std::string analyzeOut, outSafe, outReport, mode = "projected";

    auto* analyze = app.add_subcommand("analyze", "Per-token concept distances and trigger mask");
    add_filter_options(analyze, analyzeIn, analyzeCfg);
    analyze->add_option("--out", analyzeOut, "Report JSON (stdout when omitted)");

    auto* filter = app.add_subcommand("filter", "Write the filtered prompt embedding and a report");
    add_filter_options(filter, filterIn, filterCfg);
    filter->add_option("--mode", mode, "Replacement for triggered tokens")->check(CLI::IsMember({"projected", "null"}));
    filter->add_option("--out-safe", outSafe, "Filtered embedding container")->required();
    filter->add_option("--out-report", outReport, "Report JSON")->required();

    std::string origPath, safePath, spectralOut, compare = "greater";
    double rho = cg::kDefaultRho, scale = cg::kDefaultAttenuation;
    auto* spectral = app.add_subcommand("spectral", "Fourier re-attention of [C, H, W] latents");
    spectral->add_option("--orig", origPath, "Latent from the original prompt")->required();
    spectral->add_option("--safe", safePath, "Latent from the filtered prompt")->required();
    spectral->add_option("--rho", rho, "Low-frequency window fraction")->check(CLI::Range(0.0, 1.0));
    spectral->add_option("--scale", scale, "Attenuation s in (0, 1]");
    spectral->add_option("--compare", compare, "Scale when safe magnitude is greater or less")
        ->check(CLI::IsMember({"greater", "less"}));
    spectral->add_option("--out", spectralOut, "Output latent container")->required();

    std::string simConfig, simOut;
    std::optional<std::uint64_t> simSeed;
    auto* simulate = app.add_subcommand("simulate", "Run the toy guided denoising loop");
    simulate->add_option("--config", simConfig, "Simulation config JSON")->required();
    simulate->add_option("--seed", simSeed, "Overrides the config seed");
    simulate->add_option("--out", simOut, "Trajectory JSON")->required();

    std::string inspectPath;
    auto* inspect = app.add_subcommand("inspect", "Print container header and CRC status");
    inspect->add_option("file", inspectPath, "Container to inspect")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitInput;
    }

    try {
        if (*analyze) return run_analyze(analyzeIn, analyzeCfg, analyzeOut);
        if (*filter) {
            filterCfg.blendMode = mode == "null" ? cg::BlendMode::Null : cg::BlendMode::Projected;
            return run_filter(filterIn, filterCfg, outSafe, outReport);
        }
        if (*spectral) return run_spectral(origPath, safePath, rho, scale, compare, spectralOut);
        if (*simulate) return run_simulate(simConfig, simSeed, simOut);
        if (*inspect) return run_inspect(inspectPath);
    } catch (const cg::Error& e) {
        spdlog::error("{}", e.what());
        return exit_code(e.code());
    } catch (const std::exception& e) {
        spdlog::error("internal error: {}", e.what());
        return kExitInternal;
    }
    return kExitInternal;
}
