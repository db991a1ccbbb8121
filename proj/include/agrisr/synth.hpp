#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "agrisr/indices.hpp"
#include "agrisr/raster.hpp"

namespace agrisr {

// Fully controlled synthetic agricultural field: an irrigation layout
// (lateral strips or a center pivot), linear plant/soil spectral mixing
// driven by per-policy vegetation cover, a thermal response (hotter for
// drier, cooler under canopy), seeded value-noise texture at a chosen
// feature scale, per-band sensor noise, and per-date gain/registration
// pathologies for the scheduled simulations.
struct FieldSpec {
    int width_px = 256;
    int height_px = 256;
    double pixel_size_m = 0.025;

    std::string layout_kind = "strips";  // "strips" | "pivot"
    int strip_count = 8;
    std::vector<int> strip_policies = {0, 60, 100, 120};
    double pivot_cx_px = 128, pivot_cy_px = 128, pivot_radius_px = 120;
    std::vector<int> sector_policies = {0, 60, 100, 120};

    std::vector<std::string> optical_bands = {"red", "green", "blue", "nir"};
    std::map<std::string, double> plant_spectrum = {
        {"red", 0.06}, {"green", 0.22}, {"blue", 0.05}, {"nir", 0.55}};
    std::map<std::string, double> soil_spectrum = {
        {"red", 0.30}, {"green", 0.26}, {"blue", 0.18}, {"nir", 0.32}};

    std::map<int, double> cover_response = {{0, 0.25}, {60, 0.5}, {100, 0.7}, {120, 0.85}};
    double thermal_base_c = 34.0;
    std::map<int, double> thermal_offset_c = {{0, 6.0}, {60, 3.5}, {100, 1.5}, {120, 0.0}};
    double thermal_cover_gain_c = 8.0;

    int stripe_detail_scale_px = 4;
    double detail_amplitude = 0.2;
    std::map<std::string, double> noise_sigma = {
        {"red", 0.01}, {"green", 0.01}, {"blue", 0.01}, {"nir", 0.01}, {"thermal", 0.15}};

    std::vector<std::string> dates = {"2021-06-20"};
    std::vector<double> date_gains = {1.0};
    std::vector<std::pair<int, int>> registration_offsets_px = {{0, 0}};

    int scheduled_factor = 2;
    double scheduled_noise_sigma = 0.05;

    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static FieldSpec from_json(const nlohmann::json& j);
};

FieldSpec read_field_spec(const std::filesystem::path& path);
void write_field_spec(const FieldSpec& spec, const std::filesystem::path& path);

struct FieldOutput {
    BandStack on_demand;  // optical bands + "thermal"
    LabelRaster truth;
    RegimeSpec regimes;
};

// Deterministic by seed: identical spec + seed give byte-identical
// outputs.
FieldOutput generate_field(const FieldSpec& spec);

// Degrades an on-demand stack into a scheduled acquisition:
// per-band Gaussian noise, multiplicative calibration gain, a
// registration offset (content moves by +offset), then area-mean
// downscale by the factor.
BandStack simulate_scheduled(const BandStack& on_demand, int factor, double noise_sigma,
                             const PixelShift& offset, double date_gain, std::uint64_t seed);

}  // namespace agrisr
