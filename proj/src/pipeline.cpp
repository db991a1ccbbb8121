#include "agrisr/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>

#include "agrisr/parallel.hpp"

namespace agrisr {

using nlohmann::json;

bool SplitSpec::in_test(int x, int y, int width, int height) const {
    const int qx = x < width / 2 ? 0 : 1;
    const int qy = y < height / 2 ? 0 : 1;
    return qy * 2 + qx == test_quadrant;
}

json SRConfig::to_json() const {
    json j;
    j["kind"] = kind;
    j["patch_size_lo"] = patch_size_lo;
    j["stride"] = stride;
    if (kind == "patch_linear") j["ridge_lambda"] = ridge_lambda;
    if (kind == "conv_net") {
        j["arch"] = arch.to_json();
        j["epochs"] = epochs;
        j["learning_rate"] = learning_rate;
        j["batch_size"] = batch_size;
    }
    return j;
}

SRConfig SRConfig::from_json(const json& j) {
    SRConfig c;
    c.kind = j.value("kind", c.kind);
    sr_kind_from_name(c.kind);  // validates
    c.patch_size_lo = j.value("patch_size_lo", c.patch_size_lo);
    c.stride = j.value("stride", c.stride);
    c.ridge_lambda = j.value("ridge_lambda", c.ridge_lambda);
    if (j.contains("arch")) c.arch = ConvArch::from_json(j["arch"]);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    return c;
}

json ClfConfig::to_json() const {
    json j = classifier.to_json();
    j["features"] = features.to_json();
    j["stride"] = stride;
    return j;
}

ClfConfig ClfConfig::from_json(const json& j) {
    ClfConfig c;
    c.classifier = ClassifierConfig::from_json(j);
    if (j.contains("features")) c.features = PatchFeatureSpec::from_json(j["features"]);
    c.stride = j.value("stride", c.stride);
    return c;
}

void PipelineConfig::validate() const {
    if (phi < 0 || phi >= 1) raise(ErrorCode::invalid_argument, "phi must be in [0, 1)");
    if (sr_registry.empty() || clf_registry.empty())
        raise(ErrorCode::invalid_argument, "registries must be non-empty");
    if (max_iterations <= 0) raise(ErrorCode::invalid_argument, "max_iterations must be positive");
    if (split.test_quadrant < 0 || split.test_quadrant > 3)
        raise(ErrorCode::invalid_argument, "test_quadrant must be in [0, 3]");
}

json PipelineConfig::to_json() const {
    json j;
    j["phi"] = phi;
    j["scale_factor"] = scale_factor;
    j["sr_input_bands"] = sr_input_bands;
    j["sr_target_bands"] = sr_target_bands;
    json jsr = json::array(), jclf = json::array();
    for (const auto& c : sr_registry) jsr.push_back(c.to_json());
    for (const auto& c : clf_registry) jclf.push_back(c.to_json());
    j["sr_registry"] = jsr;
    j["clf_registry"] = jclf;
    j["max_iterations"] = max_iterations;
    j["seed"] = seed;
    j["split"] = {{"test_quadrant", split.test_quadrant}};
    j["similarity_data_range"] = similarity_data_range;
    return j;
}

PipelineConfig PipelineConfig::from_json(const json& j) {
    PipelineConfig c;
    c.phi = j.at("phi").get<double>();
    c.scale_factor = j.value("scale_factor", c.scale_factor);
    c.sr_input_bands = j.value("sr_input_bands", c.sr_input_bands);
    c.sr_target_bands = j.value("sr_target_bands", c.sr_target_bands);
    for (const auto& js : j.value("sr_registry", json::array()))
        c.sr_registry.push_back(SRConfig::from_json(js));
    for (const auto& jc : j.value("clf_registry", json::array()))
        c.clf_registry.push_back(ClfConfig::from_json(jc));
    c.max_iterations = j.value("max_iterations", c.max_iterations);
    c.seed = j.value("seed", c.seed);
    if (j.contains("split")) c.split.test_quadrant = j["split"].value("test_quadrant", 3);
    c.similarity_data_range = j.value("similarity_data_range", c.similarity_data_range);
    c.validate();
    return c;
}

LabelRaster label_downsample(const LabelRaster& labels, int factor) {
    if (factor <= 0) raise(ErrorCode::invalid_argument, "factor must be positive");
    if (factor == 1) return labels;
    if (labels.width % factor != 0 || labels.height % factor != 0)
        raise(ErrorCode::invalid_argument, "factor must divide label dims");
    const int ow = labels.width / factor, oh = labels.height / factor;
    LabelRaster out = LabelRaster::make(ow, oh, labels.classes);

    int max_id = -1;
    for (const auto& c : labels.classes) max_id = std::max(max_id, c.id);

#pragma omp parallel for schedule(static)
    for (int oy = 0; oy < oh; ++oy) {
        std::vector<int> votes(max_id + 1);
        for (int ox = 0; ox < ow; ++ox) {
            std::fill(votes.begin(), votes.end(), 0);
            int unlabeled = 0;
            for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx) {
                    const std::int32_t v = labels.at(oy * factor + dy, ox * factor + dx);
                    if (v == LabelRaster::unlabeled)
                        ++unlabeled;
                    else
                        ++votes[v];
                }
            const int block = factor * factor;
            if (2 * unlabeled >= block) continue;  // stays unlabeled
            int best = -1, best_n = 0;
            for (int id = 0; id <= max_id; ++id)
                if (votes[id] > best_n) {  // ties keep the lower id
                    best_n = votes[id];
                    best = id;
                }
            if (best >= 0) out.set(oy, ox, best);
        }
    }
    return out;
}

namespace {

json json_double(double v) {
    if (std::isinf(v)) return v > 0 ? json("inf") : json("-inf");
    if (std::isnan(v)) return json(nullptr);
    return json(v);
}

json iteration_to_json(const IterationReport& it) {
    json j;
    j["combo_index"] = it.combo_index;
    j["sr_index"] = it.sr_index;
    j["clf_index"] = it.clf_index;
    j["status"] = it.status;
    j["epsilon_low"] = json_double(it.epsilon_low);
    j["epsilon_high"] = json_double(it.epsilon_high);
    j["epsilon_sr"] = json_double(it.epsilon_sr);
    j["relative_improvement"] = json_double(it.relative_improvement);
    j["low_res_sufficient"] = it.low_res_sufficient;
    if (it.sr_similarity) j["similarity"] = it.sr_similarity->to_json();
    if (it.eval_low) j["eval_low"] = it.eval_low->to_json();
    if (it.eval_high) j["eval_high"] = it.eval_high->to_json();
    if (it.eval_sr) j["eval_sr"] = it.eval_sr->to_json();
    return j;
}

struct StackPair {
    const BandStack* lo = nullptr;
    const BandStack* hi = nullptr;
};

// classification data for one resolution level, pooled across stacks
struct LevelData {
    FeatureDataset train;
    FeatureDataset test;
};

FeatureDataset concat(FeatureDataset a, FeatureDataset&& b) {
    for (auto& f : b.features) a.features.push_back(std::move(f));
    for (int l : b.labels) a.labels.push_back(l);
    for (auto c : b.centers) a.centers.push_back(c);
    return a;
}

LevelData extract_level(const std::vector<const BandStack*>& stacks, const LabelRaster& labels,
                        const ClfConfig& cfg, const SplitSpec& split) {
    LevelData out;
    bool first = true;
    for (const auto* stack : stacks) {
        auto train_part = extract_labeled_patches(
            *stack, labels, cfg.features, cfg.stride, [&](int x, int y) {
                return !split.in_test(x, y, stack->width, stack->height);
            });
        auto test_part = extract_labeled_patches(
            *stack, labels, cfg.features, cfg.stride, [&](int x, int y) {
                return split.in_test(x, y, stack->width, stack->height);
            });
        if (first) {
            out.train = std::move(train_part);
            out.test = std::move(test_part);
            first = false;
        } else {
            out.train = concat(std::move(out.train), std::move(train_part));
            out.test = concat(std::move(out.test), std::move(test_part));
        }
    }
    return out;
}

double eval_epsilon(const LevelData& data, const ClfConfig& cfg, std::uint64_t seed,
                    EvalResult& eval_out) {
    Classifier clf = train_classifier(data.train, cfg.classifier, seed);
    eval_out = evaluate(clf, data.test);
    return eval_out.error_rate;
}

}  // namespace

PipelineRun run_algorithm1(const SensorEnsemble& ensemble, const LabelRaster& labels,
                           const PipelineConfig& config) {
    using clock = std::chrono::steady_clock;
    const auto t_start = clock::now();
    auto seconds_since = [](clock::time_point t0) {
        return std::chrono::duration<double>(clock::now() - t0).count();
    };

    config.validate();
    ensemble.validate();
    labels.validate();
    if (ensemble.scheduled_sets.empty() || ensemble.on_demand_sets.empty())
        raise(ErrorCode::invalid_argument,
              "algorithm needs at least one scheduled and one on-demand set");

    // date-matched (scheduled, on-demand) stack pairs
    std::vector<StackPair> pairs;
    for (const auto& sset : ensemble.scheduled_sets)
        for (const auto& lo : sset.maps)
            for (const auto& dset : ensemble.on_demand_sets)
                for (const auto& hi : dset.maps)
                    if (hi.acquisition_date == lo.acquisition_date)
                        pairs.push_back({&lo, &hi});
    if (pairs.empty())
        raise(ErrorCode::invalid_argument, "no date-matched scheduled/on-demand stacks");
    for (const auto& p : pairs) {
        if (p.lo->width * config.scale_factor != p.hi->width ||
            p.lo->height * config.scale_factor != p.hi->height)
            raise(ErrorCode::resolution_mismatch,
                  "stack dims do not differ by the configured scale factor");
        if (p.hi->width != labels.width || p.hi->height != labels.height)
            raise(ErrorCode::invalid_argument, "labels must live at the on-demand resolution");
    }

    LabelRaster lo_labels = label_downsample(labels, config.scale_factor);

    SRTaskSpec base_task;
    base_task.input_bands = config.sr_input_bands;
    base_task.target_bands = config.sr_target_bands;
    if (base_task.input_bands.empty())
        for (const auto& b : pairs[0].lo->bands) base_task.input_bands.push_back(b.name);
    if (base_task.target_bands.empty()) base_task.target_bands = base_task.input_bands;
    base_task.scale_factor = config.scale_factor;

    PipelineRun run;
    PipelineReport& report = run.report;
    report.phi = config.phi;
    report.config_echo = config.to_json();

    std::vector<const BandStack*> lo_stacks, hi_stacks;
    for (const auto& p : pairs) {
        lo_stacks.push_back(p.lo);
        hi_stacks.push_back(p.hi);
    }

    // cache per classifier config (steps 1 and 2 do not depend on SR)
    struct ClfBaseline {
        bool ok = false;
        std::string error;
        double eps_low = 1.0, eps_high = 1.0;
        EvalResult eval_low, eval_high;
    };
    std::vector<std::optional<ClfBaseline>> baselines(config.clf_registry.size());

    double best_ok_improvement = -std::numeric_limits<double>::infinity();
    int best_iter = -1;

    int combo = 0;
    bool accepted = false;
    const auto t_iter0 = clock::now();
    for (std::size_t sr_i = 0; sr_i < config.sr_registry.size() && !accepted; ++sr_i) {
        const SRConfig& sr_cfg = config.sr_registry[sr_i];

        // step 3: fit the SR model once per SR config, training patches
        // drawn from the train region only
        std::optional<SRModel> sr_model;
        std::vector<BandStack> sr_stacks;
        std::string sr_error;
        try {
            SRTaskSpec task = base_task;
            task.patch_size_lo = sr_cfg.patch_size_lo;
            task.stride = sr_cfg.stride;
            const std::uint64_t sr_seed = derive_seed(config.seed, 0x5A00 + sr_i);
            const SRModel::Kind kind = sr_kind_from_name(sr_cfg.kind);
            if (kind == SRModel::Kind::interp_baseline) {
                sr_model = fit_interp_baseline(task);
            } else {
                PatchDataset ds;
                bool first = true;
                for (const auto& p : pairs) {
                    PatchDataset part = make_training_pairs(
                        *p.lo, *p.hi, task, sr_seed, [&](int x, int y) {
                            return !config.split.in_test(x, y, p.lo->width, p.lo->height);
                        });
                    if (first) {
                        ds = std::move(part);
                        first = false;
                    } else {
                        for (auto& v : part.lo) ds.lo.push_back(std::move(v));
                        for (auto& v : part.hi) ds.hi.push_back(std::move(v));
                    }
                }
                if (kind == SRModel::Kind::patch_linear)
                    sr_model = fit_patch_linear(ds, sr_cfg.ridge_lambda);
                else
                    sr_model = fit_conv_net(ds, sr_cfg.arch, sr_cfg.epochs, sr_cfg.learning_rate,
                                            sr_cfg.batch_size, sr_seed);
            }
            for (const auto* lo : lo_stacks) sr_stacks.push_back(apply_sr(*sr_model, *lo));
        } catch (const Error& e) {
            sr_error = e.what();
            sr_model.reset();
            sr_stacks.clear();
        }

        for (std::size_t clf_i = 0; clf_i < config.clf_registry.size() && !accepted; ++clf_i) {
            if (combo >= config.max_iterations) break;
            const ClfConfig& clf_cfg = config.clf_registry[clf_i];
            const std::uint64_t it_seed = derive_seed(config.seed, combo);

            IterationReport it;
            it.combo_index = combo;
            it.sr_index = static_cast<int>(sr_i);
            it.clf_index = static_cast<int>(clf_i);

            // steps 1 and 2 (cached per classifier config)
            if (!baselines[clf_i]) {
                ClfBaseline base;
                try {
                    LevelData lo_data = extract_level(lo_stacks, lo_labels, clf_cfg, config.split);
                    base.eps_low =
                        eval_epsilon(lo_data, clf_cfg, derive_seed(config.seed, 0x10 + clf_i),
                                     base.eval_low);
                    LevelData hi_data = extract_level(hi_stacks, labels, clf_cfg, config.split);
                    base.eps_high =
                        eval_epsilon(hi_data, clf_cfg, derive_seed(config.seed, 0x20 + clf_i),
                                     base.eval_high);
                    base.ok = true;
                } catch (const Error& e) {
                    base.error = e.what();
                }
                baselines[clf_i] = std::move(base);
            }
            const ClfBaseline& base = *baselines[clf_i];
            if (base.ok) {
                it.epsilon_low = base.eps_low;
                it.epsilon_high = base.eps_high;
                it.eval_low = base.eval_low;
                it.eval_high = base.eval_high;
            } else {
                it.status = "error: " + base.error;
            }

            if (base.ok && it.epsilon_low == 0.0) {
                // scheduled maps already classify perfectly; SR is moot
                it.low_res_sufficient = true;
                it.epsilon_sr = 0.0;
                it.relative_improvement = 0.0;
                accepted = true;
                report.low_res_sufficient = true;
                best_iter = combo;
                if (sr_model) {
                    run.chosen_sr = *sr_model;
                    if (!sr_stacks.empty()) run.sr_output = sr_stacks[0];
                }
                report.iterations.push_back(std::move(it));
                ++combo;
                break;
            }

            // step 4 on the SR-enhanced maps
            if (base.ok) {
                if (!sr_model) {
                    it.status = "error: " + sr_error;
                    it.epsilon_sr = 1.0;
                } else {
                    try {
                        std::vector<const BandStack*> sr_ptrs;
                        for (const auto& s : sr_stacks) sr_ptrs.push_back(&s);
                        LevelData sr_data = extract_level(sr_ptrs, labels, clf_cfg, config.split);
                        EvalResult eval_sr;
                        it.epsilon_sr = eval_epsilon(sr_data, clf_cfg, it_seed, eval_sr);
                        it.eval_sr = std::move(eval_sr);
                        it.sr_similarity =
                            similarity(sr_stacks[0],
                                       select_bands(*pairs[0].hi, base_task.target_bands),
                                       config.similarity_data_range);
                    } catch (const Error& e) {
                        it.status = "error: " + std::string(e.what());
                        it.epsilon_sr = 1.0;
                    }
                }
                it.relative_improvement =
                    (it.epsilon_low - it.epsilon_sr) / it.epsilon_low;
                if (it.status == "ok" && it.relative_improvement > best_ok_improvement) {
                    best_ok_improvement = it.relative_improvement;
                    best_iter = combo;
                    if (sr_model) {
                        run.chosen_sr = *sr_model;
                        if (!sr_stacks.empty()) run.sr_output = sr_stacks[0];
                    }
                }
                if (it.relative_improvement >= config.phi && it.status == "ok") accepted = true;
            }

            report.iterations.push_back(std::move(it));
            ++combo;
        }
        if (combo >= config.max_iterations) break;
    }
    report.timings_s.emplace_back("iterations", seconds_since(t_iter0));

    report.decision = accepted ? "accepted" : "rejected_exhausted";
    if (best_iter < 0 && !report.iterations.empty()) best_iter = 0;
    if (best_iter >= 0) {
        const IterationReport& chosen = report.iterations[best_iter];
        report.epsilon_low = chosen.epsilon_low;
        report.epsilon_high = chosen.epsilon_high;
        report.epsilon_sr = chosen.epsilon_sr;
        report.relative_improvement = chosen.relative_improvement;
    }
    report.timings_s.emplace_back("total", seconds_since(t_start));
    return run;
}

json PipelineReport::to_json() const {
    json j;
    j["epsilon_low"] = json_double(epsilon_low);
    j["epsilon_high"] = json_double(epsilon_high);
    j["epsilon_sr"] = json_double(epsilon_sr);
    j["relative_improvement"] = json_double(relative_improvement);
    j["phi"] = phi;
    j["decision"] = decision;
    j["low_res_sufficient"] = low_res_sufficient;
    json jit = json::array();
    for (const auto& it : iterations) jit.push_back(iteration_to_json(it));
    j["iterations"] = jit;
    j["config"] = config_echo;
    json jt;
    for (const auto& [k, v] : timings_s) jt[k] = v;
    j["timings"] = jt;
    return j;
}

void write_pipeline_report(const PipelineReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) raise(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
    out << report.to_json().dump(2) << "\n";
}

PipelineReport read_pipeline_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::io, "cannot open '" + path.string() + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        raise(ErrorCode::io, "bad pipeline report: " + std::string(e.what()));
    }
    PipelineReport r;
    auto as_double = [](const json& v) {
        if (v.is_string()) return v == "inf" ? std::numeric_limits<double>::infinity()
                                             : -std::numeric_limits<double>::infinity();
        if (v.is_null()) return std::numeric_limits<double>::quiet_NaN();
        return v.get<double>();
    };
    r.epsilon_low = as_double(j.at("epsilon_low"));
    r.epsilon_high = as_double(j.at("epsilon_high"));
    r.epsilon_sr = as_double(j.at("epsilon_sr"));
    r.relative_improvement = as_double(j.at("relative_improvement"));
    r.phi = j.at("phi").get<double>();
    r.decision = j.at("decision").get<std::string>();
    r.low_res_sufficient = j.value("low_res_sufficient", false);
    for (const auto& jit : j.value("iterations", json::array())) {
        IterationReport it;
        it.combo_index = jit.value("combo_index", 0);
        it.sr_index = jit.value("sr_index", 0);
        it.clf_index = jit.value("clf_index", 0);
        it.status = jit.value("status", "ok");
        it.epsilon_low = as_double(jit.at("epsilon_low"));
        it.epsilon_high = as_double(jit.at("epsilon_high"));
        it.epsilon_sr = as_double(jit.at("epsilon_sr"));
        it.relative_improvement = as_double(jit.at("relative_improvement"));
        it.low_res_sufficient = jit.value("low_res_sufficient", false);
        r.iterations.push_back(std::move(it));
    }
    r.config_echo = j.value("config", json::object());
    return r;
}

}  // namespace agrisr
