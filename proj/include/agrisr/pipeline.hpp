#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "agrisr/classify.hpp"
#include "agrisr/indices.hpp"
#include "agrisr/raster.hpp"
#include "agrisr/sr.hpp"

namespace agrisr {

// 2x2 block holdout: quadrant 0 = top-left, 1 = top-right, 2 =
// bottom-left, 3 = bottom-right. The same quadrant (scaled) is held out
// at every resolution so the error rates compare identical test ground.
struct SplitSpec {
    int test_quadrant = 3;

    bool in_test(int x, int y, int width, int height) const;
};

struct SRConfig {
    std::string kind = "patch_linear";  // interp_baseline | patch_linear | conv_net
    int patch_size_lo = 7;
    int stride = 1;
    double ridge_lambda = 1e-3;
    ConvArch arch;
    int epochs = 30;
    double learning_rate = 0.2;
    int batch_size = 16;

    nlohmann::json to_json() const;
    static SRConfig from_json(const nlohmann::json& j);
};

struct ClfConfig {
    ClassifierConfig classifier;
    PatchFeatureSpec features;
    int stride = 2;

    nlohmann::json to_json() const;
    static ClfConfig from_json(const nlohmann::json& j);
};

struct PipelineConfig {
    double phi = 0.2;  // relative-improvement acceptance threshold
    int scale_factor = 2;
    std::vector<std::string> sr_input_bands;   // empty = all scheduled bands
    std::vector<std::string> sr_target_bands;  // empty = same as inputs
    std::vector<SRConfig> sr_registry;
    std::vector<ClfConfig> clf_registry;
    int max_iterations = 8;
    std::uint64_t seed = 0;
    SplitSpec split;
    double similarity_data_range = 1.0;

    void validate() const;
    nlohmann::json to_json() const;
    static PipelineConfig from_json(const nlohmann::json& j);
};

struct IterationReport {
    int combo_index = 0;
    int sr_index = 0;
    int clf_index = 0;
    std::string status = "ok";  // or "error: ..."
    double epsilon_low = 1.0;
    double epsilon_high = 1.0;
    double epsilon_sr = 1.0;
    double relative_improvement = 0.0;
    bool low_res_sufficient = false;
    std::optional<SimilarityReport> sr_similarity;
    std::optional<EvalResult> eval_low, eval_high, eval_sr;
};

struct PipelineReport {
    double epsilon_low = 1.0;
    double epsilon_high = 1.0;
    double epsilon_sr = 1.0;
    double relative_improvement = 0.0;
    double phi = 0.0;
    std::string decision = "rejected_exhausted";  // or "accepted"
    bool low_res_sufficient = false;
    std::vector<IterationReport> iterations;
    nlohmann::json config_echo;
    std::vector<std::pair<std::string, double>> timings_s;

    nlohmann::json to_json() const;
};

struct PipelineRun {
    PipelineReport report;
    std::optional<SRModel> chosen_sr;    // accepted model, or the best-improvement one
    std::optional<BandStack> sr_output;  // its enhancement of the first scheduled stack
};

// Block-majority label pooling. A block goes unlabeled when at least
// half its cells are unlabeled; class ties resolve to the lowest id.
LabelRaster label_downsample(const LabelRaster& labels, int factor);

// The accept/reject pipeline: trains and tests a classifier on the
// scheduled maps (epsilon_low), the on-demand maps (epsilon_high) and
// the SR-enhanced scheduled maps (epsilon_sr), stepping through the
// (SR config x classifier config) registry cross-product, SR-major,
// until (epsilon_low - epsilon_sr) / epsilon_low >= phi or the
// iteration budget runs out. A frozen spatial split feeds every error
// rate; iteration failures score as epsilon = 1 and do not abort.
PipelineRun run_algorithm1(const SensorEnsemble& ensemble, const LabelRaster& labels,
                           const PipelineConfig& config);

void write_pipeline_report(const PipelineReport& report, const std::filesystem::path& path);
PipelineReport read_pipeline_report(const std::filesystem::path& path);

}  // namespace agrisr
