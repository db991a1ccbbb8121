#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "agrisr/error.hpp"

namespace agrisr {

struct BandInfo {
    std::string name;
    double center_wavelength_nm = 0;  // 0 = unknown
    std::string units;
};

// A multi-band georeferenced raster at one date and one resolution.
// Square pixels; band planes are row-major float32; nodata is quiet NaN.
// Treated as immutable once built: operations return new stacks.
struct BandStack {
    int width = 0;
    int height = 0;
    double pixel_size_m = 0;
    std::string acquisition_date;  // YYYY-MM-DD
    std::vector<BandInfo> bands;
    std::vector<std::vector<float>> planes;

    static BandStack make(int width, int height, std::vector<BandInfo> bands,
                          double pixel_size_m, std::string date, float fill = 0.0f);

    std::size_t cell_count() const { return static_cast<std::size_t>(width) * height; }
    int band_count() const { return static_cast<int>(bands.size()); }

    float at(int band, int y, int x) const {
        return planes[band][static_cast<std::size_t>(y) * width + x];
    }
    void set(int band, int y, int x, float v) {
        planes[band][static_cast<std::size_t>(y) * width + x] = v;
    }
    std::span<const float> plane(int band) const { return planes[band]; }
    std::span<float> plane(int band) { return planes[band]; }

    // -1 when absent.
    int band_index(const std::string& name) const;
    // Throws missing-band.
    int require_band(const std::string& name) const;
    bool has_band(const std::string& name) const { return band_index(name) >= 0; }

    // Enforces the type invariants: plane sizes, positive pixel size,
    // unique band names, finite-or-NaN cells, well-formed date.
    void validate() const;
};

enum class MapKind { scheduled, on_demand };

const char* map_kind_name(MapKind k);
MapKind map_kind_from_name(const std::string& s);

// All maps of one sensor. Empty maps = the sensor has not acquired yet.
struct MapSet {
    int sensor_id = 0;
    MapKind kind = MapKind::scheduled;
    std::vector<BandStack> maps;

    void validate() const;  // shared band list and pixel size across maps
};

struct SensorEnsemble {
    std::vector<MapSet> scheduled_sets;
    std::vector<MapSet> on_demand_sets;

    void validate() const;  // >= 1 set total, distinct sensor ids
};

struct PixelShift {
    double dx_px = 0;
    double dy_px = 0;
    double confidence = 0;  // in [0, 1]
};

enum class UpscaleMethod { nearest, bilinear, bicubic };

UpscaleMethod upscale_method_from_name(const std::string& s);

// Area-mean pooling by an integer factor. NaN cells are excluded from the
// block mean; an all-NaN block stays NaN. Trailing rows/cols that do not
// fill a block are dropped. Block sums accumulate in double, row-major.
BandStack downscale(const BandStack& stack, int factor);

// Integer-factor interpolation. nearest replicates blocks exactly;
// bilinear/bicubic clamp at edges. Any NaN in the stencil poisons the
// output cell.
BandStack upscale(const BandStack& stack, int factor, UpscaleMethod method);

// Composes downscale/upscale (bilinear) to hit the target resolution,
// which must be an exact integer factor of the source; otherwise throws
// resolution-mismatch naming the bracketing achievable resolutions.
// Ratios beyond x64 are rejected.
BandStack resample_to_resolution(const BandStack& stack, double target_m_per_px);

BandStack crop(const BandStack& stack, int x0, int y0, int w, int h);

// Reorders/subsets bands by name; throws missing-band.
BandStack select_bands(const BandStack& stack, const std::vector<std::string>& names);

// Integer-pixel shift between two equal-dim single-band grids (>= 16x16)
// by exhaustive normalized cross-correlation over a +-search window.
// NaNs are replaced by the grid's finite mean before correlation.
// Returned (dx, dy) satisfies moving(x, y) ~= reference(x - dx, y - dy);
// confidence is the NCC peak clamped to [0, 1].
PixelShift estimate_shift(std::span<const float> reference, std::span<const float> moving,
                          int width, int height, int search_radius_px = 8);

PixelShift estimate_shift(const BandStack& reference, const BandStack& moving,
                          const std::string& band, int search_radius_px = 8);

// Translates all bands by (-dx, -dy), filling exposed borders with NaN,
// so that apply_shift(moving, estimate_shift(ref, moving)) re-registers
// moving onto ref for integer shifts. Fractional shifts are rounded.
BandStack apply_shift(const BandStack& stack, const PixelShift& shift);

// "YYYY-MM-DD" with sane month/day ranges; throws invalid-argument.
void validate_date(const std::string& date);

}  // namespace agrisr
