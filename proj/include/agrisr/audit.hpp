#pragma once

// Pre-flight feasibility audit of a sensor ensemble: five go/no-go
// checks (feature size vs pixel size, resolution gap, per-band SNR,
// registration error, cross-date drift) with config-overridable
// thresholds echoed into the report.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "agrisr/raster.hpp"

namespace agrisr {

enum class Verdict { pass, warn, fail };

const char* verdict_name(Verdict v);

struct AuditThresholds {
    double min_feature_pixel_ratio = 1.0;  // item 1: pass when ratio >= this
    double max_resolution_gap = 16.0;      // item 2: pass when gap <= this (warn above)
    double min_snr_db = 10.0;              // item 3: pass when every band >= this
    double max_registration_px = 2.0;      // item 4: pass when |shift| <= this
    double max_cross_date_drift = 0.1;     // item 5: pass when rel. mean shift <= this

    nlohmann::json to_json() const;
    static AuditThresholds from_json(const nlohmann::json& j);
};

struct BandSnr {
    std::string band;
    double snr_db = 0;
};

struct BandDrift {
    std::string band;
    std::string date;
    double relative_mean_shift = 0;
    double histogram_l1 = 0;  // 32-bin normalized histogram distance vs date 1
};

struct ChecklistReport {
    // item 1
    double feature_pixel_ratio = 0;
    Verdict item1 = Verdict::warn;
    // item 2
    double resolution_gap_factor = 0;
    Verdict item2 = Verdict::warn;
    // item 3
    std::vector<BandSnr> snr_db;
    double min_snr_db = 0;
    Verdict item3 = Verdict::warn;
    // item 4
    double registration_error_px = 0;
    double registration_confidence = 0;
    Verdict item4 = Verdict::warn;
    // item 5
    std::vector<BandDrift> cross_date_drift;
    double max_relative_mean_shift = 0;
    Verdict item5 = Verdict::warn;

    std::vector<std::string> notes;  // e.g. "item4: insufficient data"
    AuditThresholds thresholds;

    bool any_fail() const;
    bool any_warn() const;
    nlohmann::json to_json() const;
    std::string summary_line() const;
};

// feature_size_m: ground size of the feature the targeted states hinge
// on. Items 4 and 5 degrade to "warn: insufficient data" when the
// ensemble lacks the stacks they need.
ChecklistReport audit(const SensorEnsemble& ensemble, double feature_size_m,
                      const AuditThresholds& thresholds);

void write_audit_report(const ChecklistReport& report, const std::filesystem::path& path);

}  // namespace agrisr
