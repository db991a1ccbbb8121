#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "agrisr/conv.hpp"
#include "agrisr/raster.hpp"

namespace agrisr {

struct SRTaskSpec {
    std::vector<std::string> input_bands;
    std::vector<std::string> target_bands;
    int scale_factor = 2;  // 1 = pure channel synthesis
    int patch_size_lo = 7;  // odd
    int stride = 1;

    void validate() const;
    nlohmann::json to_json() const;
    static SRTaskSpec from_json(const nlohmann::json& j);
};

// Paired (lo, hi) patches, flattened band-major row-major, float32.
struct PatchDataset {
    SRTaskSpec task;
    int lo_dim = 0;  // patch_size_lo^2 * |input_bands|
    int hi_dim = 0;  // (patch_size_lo * scale_factor)^2 * |target_bands|
    std::vector<std::vector<float>> lo;
    std::vector<std::vector<float>> hi;

    std::size_t size() const { return lo.size(); }
};

using PatchKeep = std::function<bool(int lo_center_x, int lo_center_y)>;

// Pairs every scheduled stack with the on-demand stack sharing its date.
// Patches walk the stride grid (plus edge-aligned final positions),
// skipping any patch that touches NaN; the pair order is a deterministic
// shuffle driven by the seed.
PatchDataset make_training_pairs(const SensorEnsemble& ensemble, const SRTaskSpec& task,
                                 std::uint64_t seed, const PatchKeep& keep = nullptr);

PatchDataset make_training_pairs(const BandStack& lo_stack, const BandStack& hi_stack,
                                 const SRTaskSpec& task, std::uint64_t seed,
                                 const PatchKeep& keep = nullptr);

struct BandNorm {
    double lo = 0.0;
    double hi = 1.0;
};

struct SRModel {
    enum class Kind { interp_baseline, patch_linear, conv_net };

    Kind kind = Kind::interp_baseline;
    SRTaskSpec task;
    std::vector<BandNorm> input_norm;   // per input band, frozen at fit time
    std::vector<BandNorm> target_norm;  // per target band

    // patch_linear: (lo_dim + 1) x hi_dim, row-major, bias row last
    std::vector<double> weights;
    // conv_net
    ConvNet net;

    std::uint64_t seed = 0;
    int epochs = 0;
    double training_mse = 0.0;
    std::vector<std::pair<double, double>> loss_curve;  // (train, val) per epoch
};

const char* sr_kind_name(SRModel::Kind k);
SRModel::Kind sr_kind_from_name(const std::string& s);

// No-learning control arm: bicubic upscale of the input bands. Channel
// synthesis (factor 1) is unsupported.
SRModel fit_interp_baseline(const SRTaskSpec& task);

// Ridge-regularized least squares from flattened lo patch (+ bias) to
// flattened hi patch, solved by Cholesky on the normal equations.
// Patches are min-max normalized per band with stats frozen into the
// model. Order-free: permuting the pairs leaves W unchanged.
SRModel fit_patch_linear(const PatchDataset& pairs, double ridge_lambda);

// Mini-batch SGD on MSE. Deterministic given the seed; records a
// (train, val) loss curve with the last tenth of the shuffled pairs
// held out for validation. Throws divergence naming the epoch if the
// loss goes non-finite.
SRModel fit_conv_net(const PatchDataset& pairs, const ConvArch& arch, int epochs,
                     double learning_rate, int batch_size, std::uint64_t seed);

// Runs the model over a full stack. Output carries the target bands at
// scale_factor x resolution; overlapping patch predictions are blended
// by uniform averaging; NaN inputs poison the affected output footprint.
BandStack apply_sr(const SRModel& model, const BandStack& stack);

struct BandSimilarity {
    std::string band;
    double mse = 0;
    double psnr_db = 0;
    double ssim = 0;
};

struct SimilarityReport {
    double mse = 0;
    double psnr_db = 0;  // +infinity when mse == 0
    double ssim = 0;
    std::vector<BandSimilarity> per_band;

    nlohmann::json to_json() const;
};

// MSE over jointly finite cells, PSNR = 10 log10(range^2 / MSE), mean
// SSIM over sliding 8x8 uniform windows (k1 = 0.01, k2 = 0.03).
SimilarityReport similarity(const BandStack& predicted, const BandStack& reference,
                            double data_range);

void save_model(const SRModel& model, const std::filesystem::path& path);
SRModel load_model(const std::filesystem::path& path);

void write_loss_curve_csv(const SRModel& model, const std::filesystem::path& path);

}  // namespace agrisr
