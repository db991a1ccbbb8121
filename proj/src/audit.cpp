#include "agrisr/audit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace agrisr {

using nlohmann::json;

const char* verdict_name(Verdict v) {
    switch (v) {
        case Verdict::pass: return "pass";
        case Verdict::warn: return "warn";
        case Verdict::fail: return "fail";
    }
    return "?";
}

json AuditThresholds::to_json() const {
    return json{{"min_feature_pixel_ratio", min_feature_pixel_ratio},
                {"max_resolution_gap", max_resolution_gap},
                {"min_snr_db", min_snr_db},
                {"max_registration_px", max_registration_px},
                {"max_cross_date_drift", max_cross_date_drift}};
}

AuditThresholds AuditThresholds::from_json(const json& j) {
    AuditThresholds t;
    t.min_feature_pixel_ratio = j.value("min_feature_pixel_ratio", t.min_feature_pixel_ratio);
    t.max_resolution_gap = j.value("max_resolution_gap", t.max_resolution_gap);
    t.min_snr_db = j.value("min_snr_db", t.min_snr_db);
    t.max_registration_px = j.value("max_registration_px", t.max_registration_px);
    t.max_cross_date_drift = j.value("max_cross_date_drift", t.max_cross_date_drift);
    return t;
}

namespace {

constexpr double kSnrCapDb = 99.0;

// SNR from the local-residual noise estimate: residual after 3x3 mean
// filtering, sigma from the median absolute residual (Gaussian
// consistency factor), corrected for the filter's variance shrink.
double band_snr_db(std::span<const float> plane, int w, int h) {
    std::vector<double> residuals;
    residuals.reserve(plane.size());
    double sum = 0, sumsq = 0;
    long long n = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float v = plane[static_cast<std::size_t>(y) * w + x];
            if (std::isnan(v)) continue;
            sum += v;
            sumsq += static_cast<double>(v) * v;
            ++n;
            double local = 0;
            int ln = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    const float s = plane[static_cast<std::size_t>(yy) * w + xx];
                    if (std::isnan(s)) continue;
                    local += s;
                    ++ln;
                }
            if (ln > 0) residuals.push_back(std::fabs(v - local / ln));
        }
    if (n < 9 || residuals.empty()) return 0.0;
    const double total_var = sumsq / n - (sum / n) * (sum / n);
    std::nth_element(residuals.begin(), residuals.begin() + residuals.size() / 2,
                     residuals.end());
    const double med = residuals[residuals.size() / 2];
    const double sigma_r = med / 0.6745;
    const double noise_var = sigma_r * sigma_r * 9.0 / 8.0;
    const double signal_var = std::max(0.0, total_var - noise_var);
    if (noise_var <= 0) return kSnrCapDb;
    if (signal_var <= 0) return -kSnrCapDb;
    return std::clamp(10.0 * std::log10(signal_var / noise_var), -kSnrCapDb, kSnrCapDb);
}

double finite_mean(std::span<const float> plane) {
    double sum = 0;
    long long n = 0;
    for (float v : plane)
        if (!std::isnan(v)) {
            sum += v;
            ++n;
        }
    return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

double histogram_l1(std::span<const float> a, std::span<const float> b, int bins) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (float v : a)
        if (!std::isnan(v)) {
            lo = std::min(lo, static_cast<double>(v));
            hi = std::max(hi, static_cast<double>(v));
        }
    for (float v : b)
        if (!std::isnan(v)) {
            lo = std::min(lo, static_cast<double>(v));
            hi = std::max(hi, static_cast<double>(v));
        }
    if (!(hi > lo)) return 0.0;
    std::vector<double> pa(bins, 0), pb(bins, 0);
    long long na = 0, nb = 0;
    auto accumulate = [&](std::span<const float> plane, std::vector<double>& p, long long& cnt) {
        for (float v : plane) {
            if (std::isnan(v)) continue;
            int bin = static_cast<int>((v - lo) / (hi - lo) * bins);
            bin = std::clamp(bin, 0, bins - 1);
            p[bin] += 1;
            ++cnt;
        }
    };
    accumulate(a, pa, na);
    accumulate(b, pb, nb);
    if (na == 0 || nb == 0) return 0.0;
    double dist = 0;
    for (int i = 0; i < bins; ++i) dist += std::fabs(pa[i] / na - pb[i] / nb);
    return dist;
}

}  // namespace

ChecklistReport audit(const SensorEnsemble& ensemble, double feature_size_m,
                      const AuditThresholds& thresholds) {
    if (feature_size_m <= 0) raise(ErrorCode::invalid_argument, "feature_size_m must be positive");
    ensemble.validate();
    bool any_scheduled = false;
    for (const auto& s : ensemble.scheduled_sets) any_scheduled |= !s.maps.empty();
    if (!any_scheduled) raise(ErrorCode::invalid_argument, "audit needs >= 1 scheduled stack");

    ChecklistReport rep;
    rep.thresholds = thresholds;

    // coarsest scheduled / finest on-demand pixel sizes are the binding ones
    double scheduled_px = 0;
    for (const auto& s : ensemble.scheduled_sets)
        for (const auto& m : s.maps) scheduled_px = std::max(scheduled_px, m.pixel_size_m);
    double on_demand_px = 0;
    bool any_on_demand = false;
    for (const auto& s : ensemble.on_demand_sets)
        for (const auto& m : s.maps) {
            on_demand_px = any_on_demand ? std::min(on_demand_px, m.pixel_size_m) : m.pixel_size_m;
            any_on_demand = true;
        }

    // item 1: feature size vs. scheduled pixel size
    rep.feature_pixel_ratio = feature_size_m / scheduled_px;
    rep.item1 = rep.feature_pixel_ratio >= thresholds.min_feature_pixel_ratio ? Verdict::pass
                                                                              : Verdict::fail;

    // item 2: resolution gap (heuristic bound -> warn, not fail)
    if (any_on_demand) {
        rep.resolution_gap_factor = scheduled_px / on_demand_px;
        rep.item2 = rep.resolution_gap_factor <= thresholds.max_resolution_gap ? Verdict::pass
                                                                               : Verdict::warn;
    } else {
        rep.item2 = Verdict::warn;
        rep.notes.push_back("item2: insufficient data (no on-demand maps)");
    }

    // item 3: per-band SNR of the first scheduled stack
    const BandStack* first_scheduled = nullptr;
    for (const auto& s : ensemble.scheduled_sets)
        if (!s.maps.empty()) {
            first_scheduled = &s.maps.front();
            break;
        }
    rep.min_snr_db = kSnrCapDb;
    for (int b = 0; b < first_scheduled->band_count(); ++b) {
        BandSnr snr;
        snr.band = first_scheduled->bands[b].name;
        snr.snr_db = band_snr_db(first_scheduled->plane(b), first_scheduled->width,
                                 first_scheduled->height);
        rep.min_snr_db = std::min(rep.min_snr_db, snr.snr_db);
        rep.snr_db.push_back(snr);
    }
    rep.item3 = rep.min_snr_db >= thresholds.min_snr_db ? Verdict::pass : Verdict::fail;

    // item 4: registration error between a date-matched pair, measured
    // at the scheduled resolution
    rep.item4 = Verdict::warn;
    bool item4_done = false;
    for (const auto& sset : ensemble.scheduled_sets) {
        for (const auto& lo : sset.maps) {
            for (const auto& dset : ensemble.on_demand_sets)
                for (const auto& hi : dset.maps) {
                    if (hi.acquisition_date != lo.acquisition_date) continue;
                    const double ratio = lo.pixel_size_m / hi.pixel_size_m;
                    const int factor = static_cast<int>(std::llround(ratio));
                    if (factor < 1 || std::fabs(ratio - factor) > 1e-6 * factor) continue;
                    if (hi.width != lo.width * factor || hi.height != lo.height * factor) continue;
                    std::string band;
                    for (const auto& lb : lo.bands)
                        if (hi.has_band(lb.name)) {
                            band = lb.name;
                            break;
                        }
                    if (band.empty()) continue;
                    try {
                        const BandStack ref =
                            factor == 1 ? hi : downscale(hi, factor);
                        const PixelShift shift = estimate_shift(ref, lo, band);
                        rep.registration_error_px =
                            std::sqrt(shift.dx_px * shift.dx_px + shift.dy_px * shift.dy_px);
                        rep.registration_confidence = shift.confidence;
                        rep.item4 = rep.registration_error_px <= thresholds.max_registration_px
                                        ? Verdict::pass
                                        : Verdict::fail;
                        item4_done = true;
                    } catch (const Error&) {
                        // degenerate or too-small grids: leave as warn
                    }
                    if (item4_done) break;
                }
            if (item4_done) break;
        }
        if (item4_done) break;
    }
    if (!item4_done) rep.notes.push_back("item4: insufficient data");

    // item 5: cross-date drift within each scheduled set vs. its first date
    bool item5_done = false;
    for (const auto& sset : ensemble.scheduled_sets) {
        if (sset.maps.size() < 2) continue;
        const BandStack& first = sset.maps.front();
        for (std::size_t d = 1; d < sset.maps.size(); ++d) {
            const BandStack& other = sset.maps[d];
            for (int b = 0; b < first.band_count(); ++b) {
                const int ob = other.band_index(first.bands[b].name);
                if (ob < 0) continue;
                BandDrift drift;
                drift.band = first.bands[b].name;
                drift.date = other.acquisition_date;
                const double m1 = finite_mean(first.plane(b));
                const double mi = finite_mean(other.plane(ob));
                if (std::isnan(m1) || std::isnan(mi) || std::fabs(m1) < 1e-12) continue;
                drift.relative_mean_shift = std::fabs(mi - m1) / std::fabs(m1);
                drift.histogram_l1 = histogram_l1(first.plane(b), other.plane(ob), 32);
                rep.max_relative_mean_shift =
                    std::max(rep.max_relative_mean_shift, drift.relative_mean_shift);
                rep.cross_date_drift.push_back(drift);
                item5_done = true;
            }
        }
    }
    if (item5_done) {
        rep.item5 = rep.max_relative_mean_shift <= thresholds.max_cross_date_drift
                        ? Verdict::pass
                        : Verdict::fail;
    } else {
        rep.item5 = Verdict::warn;
        rep.notes.push_back("item5: insufficient data (no multi-date scheduled set)");
    }
    return rep;
}

bool ChecklistReport::any_fail() const {
    for (Verdict v : {item1, item2, item3, item4, item5})
        if (v == Verdict::fail) return true;
    return false;
}

bool ChecklistReport::any_warn() const {
    for (Verdict v : {item1, item2, item3, item4, item5})
        if (v == Verdict::warn) return true;
    return false;
}

json ChecklistReport::to_json() const {
    json j;
    j["item1"] = {{"value", feature_pixel_ratio},
                  {"threshold", thresholds.min_feature_pixel_ratio},
                  {"verdict", verdict_name(item1)}};
    j["item2"] = {{"value", resolution_gap_factor},
                  {"threshold", thresholds.max_resolution_gap},
                  {"verdict", verdict_name(item2)}};
    json jsnr = json::array();
    for (const auto& s : snr_db) jsnr.push_back({{"band", s.band}, {"snr_db", s.snr_db}});
    j["item3"] = {{"value", min_snr_db},
                  {"threshold", thresholds.min_snr_db},
                  {"verdict", verdict_name(item3)},
                  {"per_band", jsnr}};
    j["item4"] = {{"value", registration_error_px},
                  {"confidence", registration_confidence},
                  {"threshold", thresholds.max_registration_px},
                  {"verdict", verdict_name(item4)}};
    json jdrift = json::array();
    for (const auto& d : cross_date_drift)
        jdrift.push_back({{"band", d.band},
                          {"date", d.date},
                          {"relative_mean_shift", d.relative_mean_shift},
                          {"histogram_l1", d.histogram_l1}});
    j["item5"] = {{"value", max_relative_mean_shift},
                  {"threshold", thresholds.max_cross_date_drift},
                  {"verdict", verdict_name(item5)},
                  {"per_band_date", jdrift}};
    j["notes"] = notes;
    j["thresholds"] = thresholds.to_json();
    return j;
}

std::string ChecklistReport::summary_line() const {
    std::ostringstream ss;
    ss << "audit:";
    ss << " item1=" << verdict_name(item1);
    ss << " item2=" << verdict_name(item2);
    ss << " item3=" << verdict_name(item3);
    ss << " item4=" << verdict_name(item4);
    ss << " item5=" << verdict_name(item5);
    return ss.str();
}

void write_audit_report(const ChecklistReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) raise(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
    out << report.to_json().dump(2) << "\n";
}

}  // namespace agrisr
