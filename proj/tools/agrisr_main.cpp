// agrisr: synthesize fields, audit sensor ensembles, train and evaluate
// SR models and classifiers, and run the accept/reject pipeline.
//
// Exit codes: 0 success/accepted/all-pass, 1 rejected or failed checks,
// 2 usage or config error, 3 runtime divergence.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "agrisr/audit.hpp"
#include "agrisr/bsf.hpp"
#include "agrisr/classify.hpp"
#include "agrisr/parallel.hpp"
#include "agrisr/pipeline.hpp"
#include "agrisr/sr.hpp"
#include "agrisr/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace agrisr;

namespace {

int exit_code_for(const Error& e) {
    return e.code() == ErrorCode::divergence ? 3 : 2;
}

json load_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::io, "cannot open '" + path.string() + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        raise(ErrorCode::io, "bad JSON in '" + path.string() + "': " + e.what());
    }
    return j;
}

fs::path resolve(const fs::path& base_file, const std::string& p) {
    fs::path path(p);
    if (path.is_absolute()) return path;
    return base_file.parent_path() / path;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) raise(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
    out << text;
}

// ---------------------------------------------------------------- images

void write_pgm(const fs::path& path, std::span<const float> plane, int w, int h) {
    float lo = std::numeric_limits<float>::infinity(), hi = -lo;
    for (float v : plane)
        if (!std::isnan(v)) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    const float range = hi > lo ? hi - lo : 1.0f;
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
    out << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const float v = plane[static_cast<std::size_t>(y) * w + x];
            row[x] = std::isnan(v)
                         ? 0
                         : static_cast<unsigned char>(std::clamp((v - lo) / range, 0.0f, 1.0f) * 255.0f);
        }
        out.write(reinterpret_cast<const char*>(row.data()), w);
    }
}

void write_labels_ppm(const fs::path& path, const LabelRaster& labels) {
    static const unsigned char palette[][3] = {
        {230, 70, 60},  {70, 160, 230}, {90, 200, 90},   {240, 200, 60},
        {180, 90, 220}, {90, 220, 210}, {240, 140, 180}, {150, 150, 150}};
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
    out << "P6\n" << labels.width << " " << labels.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(labels.width) * 3);
    for (int y = 0; y < labels.height; ++y) {
        for (int x = 0; x < labels.width; ++x) {
            const std::int32_t id = labels.at(y, x);
            const unsigned char* c =
                id == LabelRaster::unlabeled ? nullptr : palette[id % 8];
            row[x * 3 + 0] = c ? c[0] : 0;
            row[x * 3 + 1] = c ? c[1] : 0;
            row[x * 3 + 2] = c ? c[2] : 0;
        }
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size()));
    }
}

// ---------------------------------------------------------------- synth

int cmd_synth(const fs::path& spec_path, const fs::path& out_dir, long long seed_override) {
    FieldSpec spec = read_field_spec(spec_path);
    if (seed_override >= 0) spec.seed = static_cast<std::uint64_t>(seed_override);
    fs::create_directories(out_dir);

    FieldOutput field = generate_field(spec);

    std::vector<ManifestRow> rows;
    std::vector<fs::path> written;

    const std::string od_name = "on_demand_" + spec.dates.front() + ".bsf";
    write_bsf(field.on_demand, out_dir / od_name);
    written.push_back(out_dir / od_name);
    rows.push_back({2, MapKind::on_demand, od_name, spec.dates.front()});

    for (std::size_t d = 0; d < spec.dates.size(); ++d) {
        PixelShift offset{static_cast<double>(spec.registration_offsets_px[d].first),
                          static_cast<double>(spec.registration_offsets_px[d].second), 1.0};
        BandStack od = field.on_demand;
        od.acquisition_date = spec.dates[d];
        BandStack sched =
            simulate_scheduled(od, spec.scheduled_factor, spec.scheduled_noise_sigma, offset,
                               spec.date_gains[d], derive_seed(spec.seed, 0xDA7E + d));
        const std::string name = "scheduled_" + spec.dates[d] + ".bsf";
        write_bsf(sched, out_dir / name);
        written.push_back(out_dir / name);
        rows.push_back({1, MapKind::scheduled, name, spec.dates[d]});
    }

    write_manifest(rows, out_dir / "manifest.csv");
    written.push_back(out_dir / "manifest.csv");
    write_labels(field.truth, out_dir / "labels.lbl");
    written.push_back(out_dir / "labels.lbl");
    write_regime_spec(field.regimes, out_dir / "regimes.json");
    written.push_back(out_dir / "regimes.json");
    write_field_spec(spec, out_dir / "field_spec.json");
    written.push_back(out_dir / "field_spec.json");

    std::cout << "synth: wrote " << written.size() << " files\n";
    for (const auto& p : written) std::cout << "  " << p.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- audit

int cmd_audit(const fs::path& manifest, double feature_size_m, const std::string& thresholds_path,
              const json& overrides, const fs::path& out_dir) {
    AuditThresholds thresholds;
    if (!thresholds_path.empty())
        thresholds = AuditThresholds::from_json(load_json(thresholds_path));
    if (!overrides.empty()) {
        json merged = thresholds.to_json();
        merged.update(overrides);
        thresholds = AuditThresholds::from_json(merged);
    }

    SensorEnsemble ensemble = load_ensemble(manifest);
    ChecklistReport report = audit(ensemble, feature_size_m, thresholds);

    fs::create_directories(out_dir);
    write_audit_report(report, out_dir / "audit_report.json");
    std::cout << report.summary_line() << "\n";
    for (const auto& n : report.notes) std::cout << "  note: " << n << "\n";
    if (report.any_fail()) return 1;
    if (report.any_warn()) std::cerr << "audit: warnings present (see report)\n";
    return 0;
}

// ---------------------------------------------------------------- train-sr

SRTaskSpec task_from_config(const json& cfg, const SRConfig& sr_cfg) {
    SRTaskSpec task = SRTaskSpec::from_json(cfg.at("sr_task"));
    task.patch_size_lo = sr_cfg.patch_size_lo;
    task.stride = sr_cfg.stride;
    return task;
}

int cmd_train_sr(const fs::path& config_path, const fs::path& out_dir, long long seed_override) {
    const json cfg = load_json(config_path);
    const std::uint64_t seed = seed_override >= 0 ? static_cast<std::uint64_t>(seed_override)
                                                  : cfg.value("seed", 0ULL);
    SensorEnsemble ensemble = load_ensemble(resolve(config_path, cfg.at("manifest")));
    SRConfig sr_cfg = SRConfig::from_json(cfg.at("sr_config"));
    SRTaskSpec task = task_from_config(cfg, sr_cfg);

    SRModel model;
    const SRModel::Kind kind = sr_kind_from_name(sr_cfg.kind);
    if (kind == SRModel::Kind::interp_baseline) {
        model = fit_interp_baseline(task);
    } else {
        PatchDataset pairs = make_training_pairs(ensemble, task, seed);
        if (kind == SRModel::Kind::patch_linear)
            model = fit_patch_linear(pairs, sr_cfg.ridge_lambda);
        else
            model = fit_conv_net(pairs, sr_cfg.arch, sr_cfg.epochs, sr_cfg.learning_rate,
                                 sr_cfg.batch_size, seed);
    }

    fs::create_directories(out_dir);
    save_model(model, out_dir / "sr_model.srm");
    if (!model.loss_curve.empty()) write_loss_curve_csv(model, out_dir / "loss_curve.csv");
    std::cout << "train-sr: kind=" << sr_kind_name(model.kind)
              << " training_mse=" << model.training_mse << "\n";
    return 0;
}

// ---------------------------------------------------------------- eval-sr

int cmd_eval_sr(const fs::path& config_path, const fs::path& model_path,
                const fs::path& out_dir) {
    const json cfg = load_json(config_path);
    SensorEnsemble ensemble = load_ensemble(resolve(config_path, cfg.at("manifest")));
    SRModel model = load_model(model_path);
    const double data_range = cfg.value("similarity_data_range", 1.0);

    const BandStack* lo = nullptr;
    const BandStack* hi = nullptr;
    for (const auto& sset : ensemble.scheduled_sets)
        for (const auto& m : sset.maps) {
            for (const auto& dset : ensemble.on_demand_sets)
                for (const auto& h : dset.maps)
                    if (h.acquisition_date == m.acquisition_date) {
                        lo = &m;
                        hi = &h;
                    }
        }
    if (!lo) raise(ErrorCode::invalid_argument, "no date-matched scheduled/on-demand pair");

    BandStack enhanced = apply_sr(model, *lo);
    SimilarityReport rep =
        similarity(enhanced, select_bands(*hi, model.task.target_bands), data_range);

    fs::create_directories(out_dir);
    write_text(out_dir / "similarity.json", rep.to_json().dump(2) + "\n");
    write_bsf(enhanced, out_dir / "sr_output.bsf");
    std::cout << "eval-sr: mse=" << rep.mse << " psnr_db=" << rep.psnr_db
              << " ssim=" << rep.ssim << "\n";
    return 0;
}

// ---------------------------------------------------------------- train-clf

int cmd_train_clf(const fs::path& config_path, const fs::path& out_dir,
                  long long seed_override) {
    const json cfg = load_json(config_path);
    const std::uint64_t seed = seed_override >= 0 ? static_cast<std::uint64_t>(seed_override)
                                                  : cfg.value("seed", 0ULL);
    SensorEnsemble ensemble = load_ensemble(resolve(config_path, cfg.at("manifest")));
    LabelRaster labels = read_labels(resolve(config_path, cfg.at("labels")));
    ClfConfig clf_cfg = ClfConfig::from_json(cfg.at("clf_config"));
    SplitSpec split;
    if (cfg.contains("split")) split.test_quadrant = cfg["split"].value("test_quadrant", 3);
    const std::string level = cfg.value("clf_level", "on_demand");

    const BandStack* stack = nullptr;
    if (level == "on_demand") {
        for (const auto& s : ensemble.on_demand_sets)
            if (!s.maps.empty()) stack = &s.maps.front();
    } else if (level == "scheduled") {
        for (const auto& s : ensemble.scheduled_sets)
            if (!s.maps.empty()) stack = &s.maps.front();
    } else {
        raise(ErrorCode::invalid_argument, "clf_level must be 'on_demand' or 'scheduled'");
    }
    if (!stack) raise(ErrorCode::invalid_argument, "no stack at level '" + level + "'");

    LabelRaster level_labels = labels;
    if (stack->width != labels.width || stack->height != labels.height) {
        if (labels.width % stack->width != 0)
            raise(ErrorCode::invalid_argument, "labels do not divide down to the stack dims");
        level_labels = label_downsample(labels, labels.width / stack->width);
    }

    FeatureDataset train = extract_labeled_patches(
        *stack, level_labels, clf_cfg.features, clf_cfg.stride, [&](int x, int y) {
            return !split.in_test(x, y, stack->width, stack->height);
        });
    FeatureDataset test = extract_labeled_patches(
        *stack, level_labels, clf_cfg.features, clf_cfg.stride, [&](int x, int y) {
            return split.in_test(x, y, stack->width, stack->height);
        });

    Classifier clf = train_classifier(train, clf_cfg.classifier, seed);
    EvalResult eval = evaluate(clf, test);

    fs::create_directories(out_dir);
    json out = eval.to_json();
    out["level"] = level;
    out["training_accuracy"] = clf.training_accuracy;
    write_text(out_dir / "eval_result.json", out.dump(2) + "\n");
    write_confusion_csv(eval, out_dir / "confusion.csv");
    std::cout << "train-clf: level=" << level << " error_rate=" << eval.error_rate << "\n";
    return 0;
}

// ---------------------------------------------------------------- pipeline

int cmd_pipeline(const fs::path& config_path, const fs::path& out_dir, long long seed_override) {
    const json cfg = load_json(config_path);
    const fs::path manifest_path = resolve(config_path, cfg.at("manifest"));
    SensorEnsemble ensemble = load_ensemble(manifest_path);
    LabelRaster labels = read_labels(resolve(config_path, cfg.at("labels")));
    PipelineConfig pcfg = PipelineConfig::from_json(cfg.at("pipeline"));
    if (seed_override >= 0) pcfg.seed = static_cast<std::uint64_t>(seed_override);

    PipelineRun run = run_algorithm1(ensemble, labels, pcfg);

    fs::create_directories(out_dir);
    json report_json = run.report.to_json();

    json artifacts;
    if (run.chosen_sr) {
        save_model(*run.chosen_sr, out_dir / "sr_model.srm");
        artifacts["sr_model"] = "sr_model.srm";
        if (!run.chosen_sr->loss_curve.empty()) {
            write_loss_curve_csv(*run.chosen_sr, out_dir / "loss_curve.csv");
            artifacts["loss_curve"] = "loss_curve.csv";
        }
    }
    if (run.sr_output) {
        write_bsf(*run.sr_output, out_dir / "sr_output.bsf");
        artifacts["sr_output"] = "sr_output.bsf";
    }
    // first scheduled/on-demand stack paths for the report renderer
    for (const auto& row : read_manifest(manifest_path)) {
        const std::string key = row.kind == MapKind::scheduled ? "scheduled" : "on_demand";
        if (!artifacts.contains(key))
            artifacts[key] = fs::relative(resolve(manifest_path, row.path), out_dir).string();
    }
    artifacts["labels"] = fs::relative(resolve(config_path, cfg.at("labels")), out_dir).string();
    report_json["artifacts"] = artifacts;

    write_text(out_dir / "report.json", report_json.dump(2) + "\n");

    std::cout << "pipeline: decision=" << run.report.decision
              << " epsilon_low=" << run.report.epsilon_low
              << " epsilon_sr=" << run.report.epsilon_sr
              << " relative_improvement=" << run.report.relative_improvement << "\n";
    return run.report.decision == "accepted" ? 0 : 1;
}

// ---------------------------------------------------------------- report

int cmd_report(const fs::path& report_path, const fs::path& out_dir) {
    const json j = load_json(report_path);
    fs::create_directories(out_dir);

    auto num = [](const json& v) -> std::string {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_null()) return "nan";
        std::ostringstream ss;
        ss << v.get<double>();
        return ss.str();
    };

    std::ostringstream text;
    text << "Pipeline decision: " << j.at("decision").get<std::string>() << "\n";
    text << "  phi:                  " << num(j.at("phi")) << "\n";
    text << "  epsilon_low:          " << num(j.at("epsilon_low")) << "\n";
    text << "  epsilon_high:         " << num(j.at("epsilon_high")) << "\n";
    text << "  epsilon_sr:           " << num(j.at("epsilon_sr")) << "\n";
    text << "  relative_improvement: " << num(j.at("relative_improvement")) << "\n";
    if (j.value("low_res_sufficient", false))
        text << "  note: scheduled maps already classify perfectly\n";
    text << "\niterations:\n";

    std::ostringstream csv;
    csv << "combo,sr_index,clf_index,status,epsilon_low,epsilon_high,epsilon_sr,"
           "relative_improvement\n";
    for (const auto& it : j.value("iterations", json::array())) {
        text << "  #" << it.value("combo_index", 0) << " sr=" << it.value("sr_index", 0)
             << " clf=" << it.value("clf_index", 0) << " status=" << it.value("status", "?")
             << " eps_l=" << num(it.at("epsilon_low")) << " eps_h=" << num(it.at("epsilon_high"))
             << " eps_sr=" << num(it.at("epsilon_sr"))
             << " improvement=" << num(it.at("relative_improvement")) << "\n";
        csv << it.value("combo_index", 0) << ',' << it.value("sr_index", 0) << ','
            << it.value("clf_index", 0) << ',' << it.value("status", "?") << ','
            << num(it.at("epsilon_low")) << ',' << num(it.at("epsilon_high")) << ','
            << num(it.at("epsilon_sr")) << ',' << num(it.at("relative_improvement")) << '\n';

        if (it.contains("eval_sr") && it["eval_sr"].contains("confusion")) {
            std::ostringstream cm;
            const auto& conf = it["eval_sr"]["confusion"];
            const auto& per_class = it["eval_sr"]["per_class"];
            cm << "true\\predicted";
            for (const auto& pc : per_class) cm << ',' << pc.at("name").get<std::string>();
            cm << '\n';
            for (std::size_t r = 0; r < conf.size(); ++r) {
                cm << per_class[r].at("name").get<std::string>();
                for (const auto& v : conf[r]) cm << ',' << v.get<long long>();
                cm << '\n';
            }
            write_text(out_dir / ("confusion_sr_" + std::to_string(it.value("combo_index", 0)) +
                                  ".csv"),
                       cm.str());
        }
    }
    write_text(out_dir / "report.txt", text.str());
    write_text(out_dir / "iterations.csv", csv.str());

    // grayscale band dumps for the artifacts that exist
    const json artifacts = j.value("artifacts", json::object());
    auto dump_stack = [&](const std::string& key, const std::string& prefix) {
        if (!artifacts.contains(key)) return;
        const fs::path p = resolve(report_path, artifacts[key].get<std::string>());
        if (!fs::exists(p)) {
            std::cerr << "report: skipping missing artifact " << p << "\n";
            return;
        }
        BandStack stack = read_bsf(p);
        for (int b = 0; b < stack.band_count(); ++b)
            write_pgm(out_dir / (prefix + "_" + stack.bands[b].name + ".pgm"), stack.plane(b),
                      stack.width, stack.height);
    };
    dump_stack("scheduled", "input");
    dump_stack("sr_output", "sr");
    dump_stack("on_demand", "target");
    if (artifacts.contains("labels")) {
        const fs::path p = resolve(report_path, artifacts["labels"].get<std::string>());
        if (fs::exists(p)) write_labels_ppm(out_dir / "labels.ppm", read_labels(p));
    }

    std::cout << "report: rendered to " << out_dir.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"super-resolution evaluation toolkit for scheduled/on-demand field imagery"};
    app.require_subcommand(1);

    int threads = 0;
    long long seed = -1;
    std::string out_dir = "out";
    app.add_option("--threads", threads, "cap worker threads (0 = hardware)");
    app.add_option("--seed", seed, "override the config seed");
    app.add_option("--out", out_dir, "output directory");

    std::string spec_path, manifest_path, config_path, model_path, report_path, thresholds_path;
    double feature_size_m = 0;
    json audit_overrides = json::object();

    auto* synth = app.add_subcommand("synth", "generate a synthetic field from a spec file");
    synth->add_option("--spec", spec_path, "field spec JSON")->required();

    auto* auditcmd = app.add_subcommand("audit", "run the pre-flight feasibility checklist");
    auditcmd->add_option("--manifest", manifest_path, "ensemble manifest CSV")->required();
    auditcmd->add_option("--feature-size-m", feature_size_m, "targeted feature size in meters")
        ->required();
    auditcmd->add_option("--thresholds", thresholds_path, "thresholds JSON");
    double ov_ratio = -1, ov_gap = -1, ov_snr = -1, ov_reg = -1, ov_drift = -1;
    auditcmd->add_option("--min-feature-ratio", ov_ratio, "item 1 threshold override");
    auditcmd->add_option("--max-gap", ov_gap, "item 2 threshold override");
    auditcmd->add_option("--min-snr-db", ov_snr, "item 3 threshold override");
    auditcmd->add_option("--max-registration-px", ov_reg, "item 4 threshold override");
    auditcmd->add_option("--max-drift", ov_drift, "item 5 threshold override");

    auto* train_sr = app.add_subcommand("train-sr", "fit an SR model from a run config");
    train_sr->add_option("--config", config_path, "run config JSON")->required();

    auto* eval_sr = app.add_subcommand("eval-sr", "apply a saved SR model and score it");
    eval_sr->add_option("--config", config_path, "run config JSON")->required();
    eval_sr->add_option("--model", model_path, "saved SR model")->required();

    auto* train_clf = app.add_subcommand("train-clf", "train/evaluate a classifier");
    train_clf->add_option("--config", config_path, "run config JSON")->required();

    auto* pipeline = app.add_subcommand("pipeline", "run the accept/reject pipeline");
    pipeline->add_option("--config", config_path, "run config JSON")->required();

    auto* report = app.add_subcommand("report", "render a pipeline report to text/CSV/images");
    report->add_option("--report", report_path, "pipeline report JSON")->required();

    CLI11_PARSE(app, argc, argv);

    set_worker_threads(threads);

    try {
        if (synth->parsed()) return cmd_synth(spec_path, out_dir, seed);
        if (auditcmd->parsed()) {
            if (ov_ratio >= 0) audit_overrides["min_feature_pixel_ratio"] = ov_ratio;
            if (ov_gap >= 0) audit_overrides["max_resolution_gap"] = ov_gap;
            if (ov_snr >= 0) audit_overrides["min_snr_db"] = ov_snr;
            if (ov_reg >= 0) audit_overrides["max_registration_px"] = ov_reg;
            if (ov_drift >= 0) audit_overrides["max_cross_date_drift"] = ov_drift;
            return cmd_audit(manifest_path, feature_size_m, thresholds_path, audit_overrides,
                             out_dir);
        }
        if (train_sr->parsed()) return cmd_train_sr(config_path, out_dir, seed);
        if (eval_sr->parsed()) return cmd_eval_sr(config_path, model_path, out_dir);
        if (train_clf->parsed()) return cmd_train_clf(config_path, out_dir, seed);
        if (pipeline->parsed()) return cmd_pipeline(config_path, out_dir, seed);
        if (report->parsed()) return cmd_report(report_path, out_dir);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
