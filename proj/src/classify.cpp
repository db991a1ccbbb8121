#include "agrisr/classify.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "agrisr/parallel.hpp"

namespace agrisr {

using nlohmann::json;

void PatchFeatureSpec::validate() const {
    if (patch_size <= 0 || patch_size % 2 == 0)
        raise(ErrorCode::invalid_argument, "patch_size must be odd and positive");
    if (bands.empty() && derived_indices.empty())
        raise(ErrorCode::invalid_argument, "feature spec selects no planes");
    for (const auto& idx : derived_indices) vegetation_index_from_name(idx);
}

json PatchFeatureSpec::to_json() const {
    return json{{"patch_size", patch_size},
                {"bands", bands},
                {"derived_indices", derived_indices}};
}

PatchFeatureSpec PatchFeatureSpec::from_json(const json& j) {
    PatchFeatureSpec s;
    s.patch_size = j.value("patch_size", 5);
    s.bands = j.value("bands", std::vector<std::string>{});
    s.derived_indices = j.value("derived_indices", std::vector<std::string>{});
    s.validate();
    return s;
}

FeatureDataset extract_labeled_patches(const BandStack& stack, const LabelRaster& labels,
                                       const PatchFeatureSpec& spec, int stride,
                                       const CenterKeep& keep) {
    spec.validate();
    if (stride <= 0) raise(ErrorCode::invalid_argument, "stride must be positive");
    if (stack.width != labels.width || stack.height != labels.height)
        raise(ErrorCode::invalid_argument, "stack/label dims mismatch");

    // gather the planes the features draw from: named bands then indices
    std::vector<const std::vector<float>*> planes;
    std::vector<BandStack> index_stacks;  // keep index planes alive
    for (const auto& b : spec.bands) planes.push_back(&stack.planes[stack.require_band(b)]);
    for (const auto& idx : spec.derived_indices) {
        index_stacks.push_back(compute_index(stack, vegetation_index_from_name(idx)));
        planes.push_back(&index_stacks.back().planes[0]);
    }

    const int p = spec.patch_size;
    const int r = p / 2;
    const int w = stack.width, h = stack.height;

    FeatureDataset ds;
    ds.spec = spec;
    ds.classes = labels.classes;
    for (int cy = r; cy + r < h; cy += stride)
        for (int cx = r; cx + r < w; cx += stride) {
            const std::int32_t label = labels.at(cy, cx);
            if (label == LabelRaster::unlabeled) continue;
            if (keep && !keep(cx, cy)) continue;
            std::vector<float> feat;
            feat.reserve(spec.dimensionality());
            bool nan = false;
            for (const auto* plane : planes) {
                for (int dy = -r; dy <= r && !nan; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        const float v = (*plane)[static_cast<std::size_t>(cy + dy) * w + cx + dx];
                        if (std::isnan(v)) {
                            nan = true;
                            break;
                        }
                        feat.push_back(v);
                    }
                if (nan) break;
            }
            if (nan) continue;
            ds.features.push_back(std::move(feat));
            ds.labels.push_back(label);
            ds.centers.emplace_back(cx, cy);
        }
    if (ds.features.empty()) raise(ErrorCode::empty_dataset, "no usable labeled patches");
    return ds;
}

EvalResult tally_predictions(const std::vector<ClassInfo>& classes,
                             const std::vector<int>& truth, const std::vector<int>& predicted) {
    if (truth.size() != predicted.size() || truth.empty())
        raise(ErrorCode::invalid_argument, "prediction/truth size mismatch");

    std::vector<ClassInfo> sorted = classes;
    std::sort(sorted.begin(), sorted.end(),
              [](const ClassInfo& a, const ClassInfo& b) { return a.id < b.id; });
    std::vector<int> id_to_row;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (sorted[i].id >= static_cast<int>(id_to_row.size()))
            id_to_row.resize(sorted[i].id + 1, -1);
        id_to_row[sorted[i].id] = static_cast<int>(i);
    }
    const int k = static_cast<int>(sorted.size());

    EvalResult res;
    res.confusion.assign(k, std::vector<long long>(k, 0));
    res.sample_count = static_cast<long long>(truth.size());
    long long correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int tr = id_to_row.at(truth[i]);
        const int pr = id_to_row.at(predicted[i]);
        if (tr < 0 || pr < 0) raise(ErrorCode::invalid_argument, "prediction uses unknown class");
        ++res.confusion[tr][pr];
        if (tr == pr) ++correct;
    }
    res.error_rate = 1.0 - static_cast<double>(correct) / res.sample_count;

    for (int c = 0; c < k; ++c) {
        EvalResult::PerClass pc;
        pc.class_id = sorted[c].id;
        pc.name = sorted[c].name;
        long long tp = res.confusion[c][c];
        long long support = 0, predicted_n = 0;
        for (int j = 0; j < k; ++j) {
            support += res.confusion[c][j];
            predicted_n += res.confusion[j][c];
        }
        pc.support = support;
        pc.precision = predicted_n ? static_cast<double>(tp) / predicted_n : 0.0;
        pc.recall = support ? static_cast<double>(tp) / support : 0.0;
        pc.f1 = (pc.precision + pc.recall) > 0
                    ? 2 * pc.precision * pc.recall / (pc.precision + pc.recall)
                    : 0.0;
        res.per_class.push_back(pc);
    }
    return res;
}

json EvalResult::to_json() const {
    json j;
    j["error_rate"] = error_rate;
    j["sample_count"] = sample_count;
    json jpc = json::array();
    for (const auto& pc : per_class)
        jpc.push_back({{"class_id", pc.class_id},
                       {"name", pc.name},
                       {"precision", pc.precision},
                       {"recall", pc.recall},
                       {"f1", pc.f1},
                       {"support", pc.support}});
    j["per_class"] = jpc;
    j["confusion"] = confusion;
    return j;
}

json ClassifierConfig::to_json() const {
    json j;
    j["kind"] = kind == Kind::logistic_multinomial ? "logistic" : "knn";
    if (kind == Kind::logistic_multinomial) {
        j["epochs"] = epochs;
        j["learning_rate"] = learning_rate;
        j["l2"] = l2;
        j["batch_size"] = batch_size;
    } else {
        j["k"] = k;
    }
    return j;
}

ClassifierConfig ClassifierConfig::from_json(const json& j) {
    ClassifierConfig c;
    const std::string kind = j.value("kind", "logistic");
    if (kind == "logistic" || kind == "logistic_multinomial")
        c.kind = Kind::logistic_multinomial;
    else if (kind == "knn")
        c.kind = Kind::knn;
    else
        raise(ErrorCode::invalid_argument, "unknown classifier kind '" + kind + "'");
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.l2 = j.value("l2", c.l2);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.k = j.value("k", c.k);
    return c;
}

namespace {

template <typename T>
void deterministic_shuffle(std::vector<T>& v, std::uint64_t seed) {
    std::uint64_t state = seed;
    for (std::size_t i = v.size(); i > 1; --i) {
        state = mix64(state);
        std::swap(v[i - 1], v[state % i]);
    }
}

std::vector<float> standardize(const Classifier& c, std::span<const float> feature) {
    std::vector<float> out(feature.size());
    for (std::size_t i = 0; i < feature.size(); ++i)
        out[i] = static_cast<float>((feature[i] - c.feat_mean[i]) * c.feat_scale[i]);
    return out;
}

int logistic_argmax(const Classifier& c, const std::vector<float>& z) {
    const std::size_t d = z.size();
    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < c.classes.size(); ++r) {
        double s = c.bias[r];
        const double* w = c.weights.data() + r * d;
        for (std::size_t i = 0; i < d; ++i) s += w[i] * z[i];
        if (s > best_score) {  // ties keep the earlier (lower) class id
            best_score = s;
            best = static_cast<int>(r);
        }
    }
    return best;
}

int knn_vote(const Classifier& c, const std::vector<float>& z) {
    struct Neighbor {
        double dist;
        int class_id;
        std::size_t index;
    };
    std::vector<Neighbor> neighbors(c.exemplars.size());
    for (std::size_t i = 0; i < c.exemplars.size(); ++i) {
        double dist = 0;
        const auto& e = c.exemplars[i];
        for (std::size_t j = 0; j < e.size(); ++j) {
            const double diff = static_cast<double>(e[j]) - z[j];
            dist += diff * diff;
        }
        neighbors[i] = {dist, c.exemplar_labels[i], i};
    }
    const std::size_t k = std::min<std::size_t>(c.config.k, neighbors.size());
    std::partial_sort(neighbors.begin(), neighbors.begin() + k, neighbors.end(),
                      [](const Neighbor& a, const Neighbor& b) {
                          if (a.dist != b.dist) return a.dist < b.dist;
                          if (a.class_id != b.class_id) return a.class_id < b.class_id;
                          return a.index < b.index;
                      });
    std::vector<long long> votes;
    for (std::size_t i = 0; i < k; ++i) {
        const int id = neighbors[i].class_id;
        if (id >= static_cast<int>(votes.size())) votes.resize(id + 1, 0);
        ++votes[id];
    }
    int best = -1;
    long long best_n = 0;
    for (std::size_t id = 0; id < votes.size(); ++id)
        if (votes[id] > best_n) {  // ties keep the lower id
            best_n = votes[id];
            best = static_cast<int>(id);
        }
    return best;
}

}  // namespace

int Classifier::predict(std::span<const float> feature) const {
    const std::vector<float> z = standardize(*this, feature);
    if (config.kind == ClassifierConfig::Kind::knn) return knn_vote(*this, z);
    const int row = logistic_argmax(*this, z);
    return classes[row].id;
}

Classifier train_classifier(const FeatureDataset& dataset, const ClassifierConfig& config,
                            std::uint64_t seed) {
    if (dataset.features.empty()) raise(ErrorCode::empty_dataset, "empty training dataset");

    std::vector<int> present;
    for (int l : dataset.labels)
        if (std::find(present.begin(), present.end(), l) == present.end()) present.push_back(l);
    if (present.size() < 2)
        raise(ErrorCode::degenerate_labels, "training data contains a single class");

    Classifier c;
    c.config = config;
    c.feature_spec = dataset.spec;
    c.classes = dataset.classes;
    std::sort(c.classes.begin(), c.classes.end(),
              [](const ClassInfo& a, const ClassInfo& b) { return a.id < b.id; });
    c.seed = seed;

    const std::size_t d = dataset.features[0].size();
    const std::size_t n = dataset.features.size();

    c.feat_mean.assign(d, 0.0);
    c.feat_scale.assign(d, 1.0);
    for (const auto& f : dataset.features)
        for (std::size_t i = 0; i < d; ++i) c.feat_mean[i] += f[i];
    for (auto& m : c.feat_mean) m /= static_cast<double>(n);
    std::vector<double> var(d, 0.0);
    for (const auto& f : dataset.features)
        for (std::size_t i = 0; i < d; ++i) {
            const double diff = f[i] - c.feat_mean[i];
            var[i] += diff * diff;
        }
    for (std::size_t i = 0; i < d; ++i) {
        const double sd = std::sqrt(var[i] / n);
        c.feat_scale[i] = sd > 1e-12 ? 1.0 / sd : 1.0;
    }

    std::vector<std::vector<float>> z(n);
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i)
        z[i] = standardize(c, dataset.features[i]);

    std::vector<int> label_row(n);
    {
        std::vector<int> id_to_row;
        for (std::size_t r = 0; r < c.classes.size(); ++r) {
            if (c.classes[r].id >= static_cast<int>(id_to_row.size()))
                id_to_row.resize(c.classes[r].id + 1, -1);
            id_to_row[c.classes[r].id] = static_cast<int>(r);
        }
        for (std::size_t i = 0; i < n; ++i) label_row[i] = id_to_row.at(dataset.labels[i]);
    }

    if (config.kind == ClassifierConfig::Kind::knn) {
        c.exemplars = z;
        c.exemplar_labels = dataset.labels;
    } else {
        const std::size_t k = c.classes.size();
        c.weights.assign(k * d, 0.0);
        c.bias.assign(k, 0.0);

        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;

        std::vector<double> logits(k), probs(k);
        std::vector<double> grad_w(k * d), grad_b(k);
        for (int epoch = 0; epoch < config.epochs; ++epoch) {
            deterministic_shuffle(order, derive_seed(seed, 0xCE0 + epoch));
            for (std::size_t start = 0; start < n; start += config.batch_size) {
                const std::size_t stop = std::min(n, start + config.batch_size);
                std::fill(grad_w.begin(), grad_w.end(), 0.0);
                std::fill(grad_b.begin(), grad_b.end(), 0.0);
                for (std::size_t s = start; s < stop; ++s) {
                    const auto& x = z[order[s]];
                    double zmax = -std::numeric_limits<double>::infinity();
                    for (std::size_t r = 0; r < k; ++r) {
                        double v = c.bias[r];
                        const double* w = c.weights.data() + r * d;
                        for (std::size_t i = 0; i < d; ++i) v += w[i] * x[i];
                        logits[r] = v;
                        zmax = std::max(zmax, v);
                    }
                    double denom = 0;
                    for (std::size_t r = 0; r < k; ++r) {
                        probs[r] = std::exp(logits[r] - zmax);
                        denom += probs[r];
                    }
                    if (!std::isfinite(denom) || denom <= 0)
                        raise(ErrorCode::divergence,
                              "non-finite softmax at epoch " + std::to_string(epoch));
                    for (std::size_t r = 0; r < k; ++r) {
                        const double err =
                            probs[r] / denom - (static_cast<int>(r) == label_row[order[s]] ? 1 : 0);
                        grad_b[r] += err;
                        double* gw = grad_w.data() + r * d;
                        for (std::size_t i = 0; i < d; ++i) gw[i] += err * x[i];
                    }
                }
                const double inv = 1.0 / static_cast<double>(stop - start);
                for (std::size_t r = 0; r < k; ++r) {
                    c.bias[r] -= config.learning_rate * grad_b[r] * inv;
                    double* w = c.weights.data() + r * d;
                    const double* gw = grad_w.data() + r * d;
                    for (std::size_t i = 0; i < d; ++i)
                        w[i] -= config.learning_rate * (gw[i] * inv + config.l2 * w[i]);
                }
            }
        }
    }

    long long correct = 0;
#pragma omp parallel for schedule(static) reduction(+ : correct)
    for (long long i = 0; i < static_cast<long long>(n); ++i)
        if (c.predict(dataset.features[i]) == dataset.labels[i]) ++correct;
    c.training_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return c;
}

EvalResult evaluate(const Classifier& classifier, const FeatureDataset& dataset) {
    if (dataset.features.empty()) raise(ErrorCode::empty_dataset, "empty evaluation dataset");
    if (dataset.spec.patch_size != classifier.feature_spec.patch_size ||
        dataset.spec.bands != classifier.feature_spec.bands ||
        dataset.spec.derived_indices != classifier.feature_spec.derived_indices)
        raise(ErrorCode::invalid_argument, "dataset feature spec does not match the classifier");

    std::vector<int> predicted(dataset.size());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(dataset.size()); ++i)
        predicted[i] = classifier.predict(dataset.features[i]);
    return tally_predictions(classifier.classes, dataset.labels, predicted);
}

void write_confusion_csv(const EvalResult& result, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) raise(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
    out << "true\\predicted";
    for (const auto& pc : result.per_class) out << ',' << pc.name;
    out << '\n';
    for (std::size_t r = 0; r < result.confusion.size(); ++r) {
        out << result.per_class[r].name;
        for (long long v : result.confusion[r]) out << ',' << v;
        out << '\n';
    }
}

}  // namespace agrisr
