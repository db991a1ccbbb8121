#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "agrisr/raster.hpp"

namespace agrisr {

struct ClassInfo {
    int id = 0;
    std::string name;
};

struct LabelRaster {
    static constexpr std::int32_t unlabeled = -1;

    int width = 0;
    int height = 0;
    std::vector<ClassInfo> classes;
    std::vector<std::int32_t> data;  // class id or unlabeled

    static LabelRaster make(int width, int height, std::vector<ClassInfo> classes);

    std::int32_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
    void set(int y, int x, std::int32_t id) { data[static_cast<std::size_t>(y) * width + x] = id; }
    const ClassInfo* find_class(int id) const;
    void validate() const;
};

void write_labels(const LabelRaster& labels, const std::filesystem::path& path);
LabelRaster read_labels(const std::filesystem::path& path);

// Irrigation-policy regions in pixel space. Regions must not overlap.
struct RegimeRegion {
    int policy_percent = 0;
    enum class Shape { rect, sector } shape = Shape::rect;
    // rect
    int x0 = 0, y0 = 0, w = 0, h = 0;
    // sector (annular wedge around a pivot)
    double cx_px = 0, cy_px = 0, r_inner_px = 0, r_outer_px = 0;
    double theta0_deg = 0, theta1_deg = 0;

    bool contains(int x, int y) const;
};

struct RegimeSpec {
    std::vector<RegimeRegion> regions;
};

void write_regime_spec(const RegimeSpec& spec, const std::filesystem::path& path);
RegimeSpec read_regime_spec(const std::filesystem::path& path);

enum class VegetationIndex { NDVI, GNDVI, GRVI };

VegetationIndex vegetation_index_from_name(const std::string& name);
const char* vegetation_index_name(VegetationIndex idx);

// Cellwise (A - B) / (A + B): NDVI = (nir - red) / (nir + red),
// GNDVI = (nir - green) / (nir + green), GRVI = (green - red) / (green + red).
// NaN where an input is NaN or the denominator is zero.
BandStack compute_index(const BandStack& stack, VegetationIndex index);

// Pseudo-irrigation binary labels from the thermal band: class 0
// "irrigated" below the threshold, class 1 "stressed_dry" at or above it,
// NaN cells unlabeled. morphology_clean runs one 3x3 majority pass.
LabelRaster thermal_threshold_labels(const BandStack& thermal, double threshold_temp,
                                     bool morphology_clean);

// Class ids are the ranks of the distinct policy percents (ascending);
// display names are "<percent>%". Cells outside every region stay
// unlabeled. Overlapping regions -> invalid-spec.
LabelRaster rasterize_regimes(const RegimeSpec& spec, int width, int height);

struct ClassHistogram {
    int class_id = 0;
    std::string class_name;
    std::vector<long long> counts;
    long long n = 0;
    double mean = 0;
    double stddev = 0;  // population
};

struct HistogramTable {
    std::vector<double> edges;  // bins + 1, shared across classes
    std::vector<ClassHistogram> rows;
};

// Per-class histograms of a single-band stack under a label raster.
// Edges span the global finite min..max of labeled cells; NaN excluded.
HistogramTable histogram_by_class(const BandStack& values, const LabelRaster& labels, int bins);

void write_histogram_csv(const HistogramTable& table, const std::filesystem::path& path);

}  // namespace agrisr
