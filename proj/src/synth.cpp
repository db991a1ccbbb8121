#include "agrisr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "agrisr/parallel.hpp"

namespace agrisr {

using nlohmann::json;

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// uniform in [0, 1) from a hash
inline double hash_unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

// standard normal from a cell-indexed stream
inline double hash_gauss(std::uint64_t seed, std::uint64_t idx) {
    const std::uint64_t h1 = mix64(seed ^ mix64(idx));
    const std::uint64_t h2 = mix64(h1 ^ 0xda3e39cb94b95bdbULL);
    const double u1 = (static_cast<double>(h1 >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = hash_unit(h2);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

// lattice value noise in [-1, 1], bilinear between lattice points
double value_noise(std::uint64_t seed, double x, double y, int scale) {
    const double u = x / scale, v = y / scale;
    const long long ix = static_cast<long long>(std::floor(u));
    const long long iy = static_cast<long long>(std::floor(v));
    const double fx = u - ix, fy = v - iy;
    auto lattice = [&](long long lx, long long ly) {
        const std::uint64_t h =
            mix64(seed ^ mix64(static_cast<std::uint64_t>(lx) * 0x9E3779B1ULL +
                               static_cast<std::uint64_t>(ly) * 0x85EBCA77ULL + 0x165667B1ULL));
        return hash_unit(h) * 2.0 - 1.0;
    };
    const double v00 = lattice(ix, iy), v10 = lattice(ix + 1, iy);
    const double v01 = lattice(ix, iy + 1), v11 = lattice(ix + 1, iy + 1);
    return (v00 * (1 - fx) + v10 * fx) * (1 - fy) + (v01 * (1 - fx) + v11 * fx) * fy;
}

double band_wavelength(const std::string& name) {
    if (name == "blue") return 480;
    if (name == "green") return 560;
    if (name == "red") return 660;
    if (name == "nir") return 850;
    if (name == "thermal") return 10500;
    return 0;
}

}  // namespace

void FieldSpec::validate() const {
    if (width_px <= 0 || height_px <= 0 || pixel_size_m <= 0)
        raise(ErrorCode::invalid_spec, "non-positive field dims or pixel size");
    if (layout_kind != "strips" && layout_kind != "pivot")
        raise(ErrorCode::invalid_spec, "layout must be 'strips' or 'pivot'");
    if (layout_kind == "strips" && (strip_count <= 0 || strip_policies.empty()))
        raise(ErrorCode::invalid_spec, "strips layout needs a count and policies");
    if (layout_kind == "pivot" && (pivot_radius_px <= 0 || sector_policies.empty()))
        raise(ErrorCode::invalid_spec, "pivot layout needs a radius and sector policies");
    if (optical_bands.empty()) raise(ErrorCode::invalid_spec, "no optical bands");
    for (const auto& b : optical_bands) {
        auto p = plant_spectrum.find(b);
        auto s = soil_spectrum.find(b);
        if (p == plant_spectrum.end() || s == soil_spectrum.end())
            raise(ErrorCode::invalid_spec, "band '" + b + "' lacks plant/soil reflectance");
        if (p->second < 0 || p->second > 1 || s->second < 0 || s->second > 1)
            raise(ErrorCode::invalid_spec, "reflectance outside [0, 1] for band '" + b + "'");
    }
    const auto& policies = layout_kind == "strips" ? strip_policies : sector_policies;
    for (int p : policies) {
        if (!cover_response.count(p))
            raise(ErrorCode::invalid_spec, "policy " + std::to_string(p) + " lacks cover_response");
        if (!thermal_offset_c.count(p))
            raise(ErrorCode::invalid_spec, "policy " + std::to_string(p) + " lacks thermal_offset_c");
        const double f = cover_response.at(p);
        if (f < 0 || f > 1) raise(ErrorCode::invalid_spec, "cover fraction outside [0, 1]");
    }
    if (stripe_detail_scale_px <= 0)
        raise(ErrorCode::invalid_spec, "stripe_detail_scale_px must be positive");
    if (dates.empty()) raise(ErrorCode::invalid_spec, "need at least one date");
    for (const auto& d : dates) validate_date(d);
    if (date_gains.size() != dates.size() || registration_offsets_px.size() != dates.size())
        raise(ErrorCode::invalid_spec, "date_gains/registration_offsets must match dates");
    if (scheduled_factor != 1 && scheduled_factor != 2 && scheduled_factor != 4 &&
        scheduled_factor != 8 && scheduled_factor != 16)
        raise(ErrorCode::invalid_spec, "scheduled_factor must be one of {1,2,4,8,16}");
}

json FieldSpec::to_json() const {
    json j;
    j["width_px"] = width_px;
    j["height_px"] = height_px;
    j["pixel_size_m"] = pixel_size_m;
    json layout;
    layout["kind"] = layout_kind;
    if (layout_kind == "strips") {
        layout["count"] = strip_count;
        layout["policies"] = strip_policies;
    } else {
        layout["cx_px"] = pivot_cx_px;
        layout["cy_px"] = pivot_cy_px;
        layout["radius_px"] = pivot_radius_px;
        layout["sector_policies"] = sector_policies;
    }
    j["layout"] = layout;
    j["bands"] = optical_bands;
    j["plant_spectrum"] = plant_spectrum;
    j["soil_spectrum"] = soil_spectrum;
    json cover, offs;
    for (const auto& [p, f] : cover_response) cover[std::to_string(p)] = f;
    for (const auto& [p, t] : thermal_offset_c) offs[std::to_string(p)] = t;
    j["cover_response"] = cover;
    j["thermal_base_c"] = thermal_base_c;
    j["thermal_offset_c"] = offs;
    j["thermal_cover_gain_c"] = thermal_cover_gain_c;
    j["stripe_detail_scale_px"] = stripe_detail_scale_px;
    j["detail_amplitude"] = detail_amplitude;
    j["noise_sigma"] = noise_sigma;
    j["dates"] = dates;
    j["date_gains"] = date_gains;
    json joffs = json::array();
    for (const auto& [dx, dy] : registration_offsets_px) joffs.push_back({dx, dy});
    j["registration_offsets_px"] = joffs;
    j["scheduled_factor"] = scheduled_factor;
    j["scheduled_noise_sigma"] = scheduled_noise_sigma;
    j["seed"] = seed;
    return j;
}

FieldSpec FieldSpec::from_json(const json& j) {
    FieldSpec s;
    s.width_px = j.value("width_px", s.width_px);
    s.height_px = j.value("height_px", s.height_px);
    s.pixel_size_m = j.value("pixel_size_m", s.pixel_size_m);
    if (j.contains("layout")) {
        const auto& layout = j["layout"];
        s.layout_kind = layout.value("kind", s.layout_kind);
        s.strip_count = layout.value("count", s.strip_count);
        s.strip_policies = layout.value("policies", s.strip_policies);
        s.pivot_cx_px = layout.value("cx_px", s.pivot_cx_px);
        s.pivot_cy_px = layout.value("cy_px", s.pivot_cy_px);
        s.pivot_radius_px = layout.value("radius_px", s.pivot_radius_px);
        s.sector_policies = layout.value("sector_policies", s.sector_policies);
    }
    s.optical_bands = j.value("bands", s.optical_bands);
    if (j.contains("plant_spectrum"))
        s.plant_spectrum = j["plant_spectrum"].get<std::map<std::string, double>>();
    if (j.contains("soil_spectrum"))
        s.soil_spectrum = j["soil_spectrum"].get<std::map<std::string, double>>();
    auto read_policy_map = [&](const char* key, std::map<int, double>& dst) {
        if (!j.contains(key)) return;
        dst.clear();
        for (const auto& [k, v] : j[key].items()) dst[std::stoi(k)] = v.get<double>();
    };
    read_policy_map("cover_response", s.cover_response);
    read_policy_map("thermal_offset_c", s.thermal_offset_c);
    s.thermal_base_c = j.value("thermal_base_c", s.thermal_base_c);
    s.thermal_cover_gain_c = j.value("thermal_cover_gain_c", s.thermal_cover_gain_c);
    s.stripe_detail_scale_px = j.value("stripe_detail_scale_px", s.stripe_detail_scale_px);
    s.detail_amplitude = j.value("detail_amplitude", s.detail_amplitude);
    if (j.contains("noise_sigma"))
        s.noise_sigma = j["noise_sigma"].get<std::map<std::string, double>>();
    s.dates = j.value("dates", s.dates);
    s.date_gains = j.value("date_gains", s.date_gains);
    if (j.contains("registration_offsets_px")) {
        s.registration_offsets_px.clear();
        for (const auto& jo : j["registration_offsets_px"])
            s.registration_offsets_px.emplace_back(jo.at(0).get<int>(), jo.at(1).get<int>());
    }
    s.scheduled_factor = j.value("scheduled_factor", s.scheduled_factor);
    s.scheduled_noise_sigma = j.value("scheduled_noise_sigma", s.scheduled_noise_sigma);
    s.seed = j.value("seed", s.seed);
    s.validate();
    return s;
}

FieldSpec read_field_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::io, "cannot open field spec '" + path.string() + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        raise(ErrorCode::invalid_spec, "bad field spec: " + std::string(e.what()));
    }
    return FieldSpec::from_json(j);
}

void write_field_spec(const FieldSpec& spec, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) raise(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
    out << spec.to_json().dump(2) << "\n";
}

namespace {

RegimeSpec layout_regimes(const FieldSpec& spec) {
    RegimeSpec regimes;
    if (spec.layout_kind == "strips") {
        const int sw = spec.width_px / spec.strip_count;
        for (int i = 0; i < spec.strip_count; ++i) {
            RegimeRegion r;
            r.shape = RegimeRegion::Shape::rect;
            r.policy_percent = spec.strip_policies[i % spec.strip_policies.size()];
            r.x0 = i * sw;
            r.y0 = 0;
            r.w = (i == spec.strip_count - 1) ? spec.width_px - r.x0 : sw;
            r.h = spec.height_px;
            regimes.regions.push_back(r);
        }
    } else {
        const int n = static_cast<int>(spec.sector_policies.size());
        for (int i = 0; i < n; ++i) {
            RegimeRegion r;
            r.shape = RegimeRegion::Shape::sector;
            r.policy_percent = spec.sector_policies[i];
            r.cx_px = spec.pivot_cx_px;
            r.cy_px = spec.pivot_cy_px;
            r.r_inner_px = 0;
            r.r_outer_px = spec.pivot_radius_px;
            r.theta0_deg = 360.0 * i / n;
            r.theta1_deg = 360.0 * (i + 1) / n;
            regimes.regions.push_back(r);
        }
    }
    return regimes;
}

}  // namespace

FieldOutput generate_field(const FieldSpec& spec) {
    spec.validate();
    const int w = spec.width_px, h = spec.height_px;

    FieldOutput out;
    out.regimes = layout_regimes(spec);
    out.truth = rasterize_regimes(out.regimes, w, h);

    // policy lookup per cell via the truth raster + class names
    std::vector<int> class_policy(out.truth.classes.size());
    for (std::size_t i = 0; i < out.truth.classes.size(); ++i)
        class_policy[i] = std::stoi(out.truth.classes[i].name);  // "<percent>%"

    std::vector<BandInfo> infos;
    for (const auto& b : spec.optical_bands)
        infos.push_back({b, band_wavelength(b), "reflectance"});
    infos.push_back({"thermal", band_wavelength("thermal"), "deg_c"});
    out.on_demand = BandStack::make(w, h, infos, spec.pixel_size_m, spec.dates.front());

    const std::uint64_t tex_seed = derive_seed(spec.seed, 0x7e1);
    const int n_opt = static_cast<int>(spec.optical_bands.size());

    // cover fraction per cell: policy response + fine texture
    std::vector<float> cover(static_cast<std::size_t>(w) * h, 0.0f);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            const std::int32_t cls = out.truth.data[i];
            double f = 0.0;
            if (cls != LabelRaster::unlabeled) {
                f = spec.cover_response.at(class_policy[cls]);
                f += spec.detail_amplitude *
                     value_noise(tex_seed, x, y, spec.stripe_detail_scale_px);
                f = std::clamp(f, 0.0, 1.0);
            }
            cover[i] = static_cast<float>(f);
        }

    for (int b = 0; b < n_opt; ++b) {
        const std::string& name = spec.optical_bands[b];
        const double plant = spec.plant_spectrum.at(name);
        const double soil = spec.soil_spectrum.at(name);
        const double sigma = spec.noise_sigma.count(name) ? spec.noise_sigma.at(name) : 0.0;
        const std::uint64_t band_seed = derive_seed(spec.seed, 0xB0 + b);
        auto& plane = out.on_demand.planes[b];
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(plane.size()); ++i) {
            double v = soil + (plant - soil) * cover[i];
            if (sigma > 0) v += sigma * hash_gauss(band_seed, i);
            plane[i] = static_cast<float>(v);
        }
    }
    {
        const double sigma =
            spec.noise_sigma.count("thermal") ? spec.noise_sigma.at("thermal") : 0.0;
        const std::uint64_t band_seed = derive_seed(spec.seed, 0xB0 + n_opt);
        auto& plane = out.on_demand.planes[n_opt];
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(plane.size()); ++i) {
            const std::int32_t cls = out.truth.data[i];
            double offset =
                cls != LabelRaster::unlabeled ? spec.thermal_offset_c.at(class_policy[cls]) : 0.0;
            double v = spec.thermal_base_c + offset - spec.thermal_cover_gain_c * cover[i];
            if (sigma > 0) v += sigma * hash_gauss(band_seed, i);
            plane[i] = static_cast<float>(v);
        }
    }
    return out;
}

BandStack simulate_scheduled(const BandStack& on_demand, int factor, double noise_sigma,
                             const PixelShift& offset, double date_gain, std::uint64_t seed) {
    if (factor != 1 && factor != 2 && factor != 4 && factor != 8 && factor != 16)
        raise(ErrorCode::invalid_argument, "scheduled factor must be one of {1,2,4,8,16}");

    BandStack noisy = on_demand;
    for (int b = 0; b < noisy.band_count(); ++b) {
        const std::uint64_t band_seed = derive_seed(seed, 0x5C0 + b);
        auto& plane = noisy.planes[b];
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(plane.size()); ++i) {
            if (std::isnan(plane[i])) continue;
            double v = plane[i];
            if (noise_sigma > 0) v += noise_sigma * hash_gauss(band_seed, i);
            plane[i] = static_cast<float>(v * date_gain);
        }
    }
    // content moves by +offset, so estimate_shift against the un-shifted
    // reference recovers the offset as stated
    PixelShift inverse{-offset.dx_px, -offset.dy_px, 1.0};
    BandStack shifted =
        (offset.dx_px == 0 && offset.dy_px == 0) ? std::move(noisy) : apply_shift(noisy, inverse);
    return factor == 1 ? shifted : downscale(shifted, factor);
}

}  // namespace agrisr
