#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "agrisr/indices.hpp"
#include "agrisr/raster.hpp"

namespace agrisr {

struct PatchFeatureSpec {
    int patch_size = 5;  // odd
    std::vector<std::string> bands;
    std::vector<std::string> derived_indices;  // subset of {NDVI, GNDVI, GRVI}

    int dimensionality() const {
        return patch_size * patch_size *
               static_cast<int>(bands.size() + derived_indices.size());
    }
    void validate() const;
    nlohmann::json to_json() const;
    static PatchFeatureSpec from_json(const nlohmann::json& j);
};

struct FeatureDataset {
    PatchFeatureSpec spec;
    std::vector<ClassInfo> classes;
    std::vector<std::vector<float>> features;
    std::vector<int> labels;                   // class ids
    std::vector<std::pair<int, int>> centers;  // pixel coords, for bookkeeping

    std::size_t size() const { return features.size(); }
};

using CenterKeep = std::function<bool(int x, int y)>;

// One feature vector per stride-grid center whose center cell is labeled
// and whose patch is NaN-free across all bands and derived index planes.
// Label = the center cell's class. Deterministic row-major order.
FeatureDataset extract_labeled_patches(const BandStack& stack, const LabelRaster& labels,
                                       const PatchFeatureSpec& spec, int stride,
                                       const CenterKeep& keep = nullptr);

struct EvalResult {
    struct PerClass {
        int class_id = 0;
        std::string name;
        double precision = 0, recall = 0, f1 = 0;
        long long support = 0;
    };
    double error_rate = 0;  // 1 - trace/total
    std::vector<PerClass> per_class;
    std::vector<std::vector<long long>> confusion;  // [true][predicted]
    long long sample_count = 0;

    nlohmann::json to_json() const;
};

// Builds the full EvalResult contract from (true, predicted) id pairs.
EvalResult tally_predictions(const std::vector<ClassInfo>& classes,
                             const std::vector<int>& truth, const std::vector<int>& predicted);

struct ClassifierConfig {
    enum class Kind { logistic_multinomial, knn };
    Kind kind = Kind::logistic_multinomial;
    // logistic
    int epochs = 40;
    double learning_rate = 0.1;
    double l2 = 1e-4;
    int batch_size = 32;
    // knn
    int k = 3;

    nlohmann::json to_json() const;
    static ClassifierConfig from_json(const nlohmann::json& j);
};

struct Classifier {
    ClassifierConfig config;
    PatchFeatureSpec feature_spec;
    std::vector<ClassInfo> classes;
    // per-dimension z-score frozen from the training split
    std::vector<double> feat_mean, feat_scale;
    // logistic: W is |classes| x D, bias |classes|
    std::vector<double> weights, bias;
    // knn exemplars (standardized)
    std::vector<std::vector<float>> exemplars;
    std::vector<int> exemplar_labels;
    // metadata
    std::uint64_t seed = 0;
    double training_accuracy = 0;

    int predict(std::span<const float> feature) const;
};

// logistic: mini-batch SGD on cross-entropy with L2, deterministic by
// seed; knn: stores standardized exemplars. Ties (vote or argmax)
// resolve to the lowest class id.
Classifier train_classifier(const FeatureDataset& dataset, const ClassifierConfig& config,
                            std::uint64_t seed);

EvalResult evaluate(const Classifier& classifier, const FeatureDataset& dataset);

void write_confusion_csv(const EvalResult& result, const std::filesystem::path& path);

}  // namespace agrisr
