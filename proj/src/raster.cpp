#include "agrisr/raster.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <set>

#include "agrisr/parallel.hpp"

namespace agrisr {

namespace {

constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();

}  // namespace

BandStack BandStack::make(int width, int height, std::vector<BandInfo> bands,
                          double pixel_size_m, std::string date, float fill) {
    if (width <= 0 || height <= 0) raise(ErrorCode::invalid_argument, "non-positive raster dims");
    if (pixel_size_m <= 0) raise(ErrorCode::invalid_argument, "non-positive pixel_size_m");
    BandStack s;
    s.width = width;
    s.height = height;
    s.pixel_size_m = pixel_size_m;
    s.acquisition_date = std::move(date);
    s.bands = std::move(bands);
    s.planes.assign(s.bands.size(), std::vector<float>(s.cell_count(), fill));
    return s;
}

int BandStack::band_index(const std::string& name) const {
    for (std::size_t i = 0; i < bands.size(); ++i)
        if (bands[i].name == name) return static_cast<int>(i);
    return -1;
}

int BandStack::require_band(const std::string& name) const {
    int i = band_index(name);
    if (i < 0) raise(ErrorCode::missing_band, "band '" + name + "' not present");
    return i;
}

void BandStack::validate() const {
    if (width <= 0 || height <= 0) raise(ErrorCode::invalid_argument, "non-positive raster dims");
    if (pixel_size_m <= 0) raise(ErrorCode::invalid_argument, "non-positive pixel_size_m");
    if (planes.size() != bands.size())
        raise(ErrorCode::invalid_argument, "plane count does not match band count");
    std::set<std::string> names;
    for (const auto& b : bands)
        if (!names.insert(b.name).second)
            raise(ErrorCode::invalid_argument, "duplicate band name '" + b.name + "'");
    for (std::size_t b = 0; b < planes.size(); ++b) {
        if (planes[b].size() != cell_count())
            raise(ErrorCode::invalid_argument, "band '" + bands[b].name + "' has wrong cell count");
        for (float v : planes[b])
            if (std::isinf(v))
                raise(ErrorCode::invalid_argument, "band '" + bands[b].name + "' stores an infinity");
    }
    validate_date(acquisition_date);
}

const char* map_kind_name(MapKind k) {
    return k == MapKind::scheduled ? "scheduled" : "on_demand";
}

MapKind map_kind_from_name(const std::string& s) {
    if (s == "scheduled") return MapKind::scheduled;
    if (s == "on_demand") return MapKind::on_demand;
    raise(ErrorCode::invalid_argument, "unknown map kind '" + s + "'");
}

void MapSet::validate() const {
    if (maps.empty()) return;  // void state
    const auto& first = maps.front();
    for (const auto& m : maps) {
        if (m.bands.size() != first.bands.size())
            raise(ErrorCode::invalid_argument, "maps in a set must share the band list");
        for (std::size_t b = 0; b < m.bands.size(); ++b)
            if (m.bands[b].name != first.bands[b].name)
                raise(ErrorCode::invalid_argument, "maps in a set must share the band list");
        if (m.pixel_size_m != first.pixel_size_m)
            raise(ErrorCode::invalid_argument, "maps in a set must share pixel_size_m");
    }
}

void SensorEnsemble::validate() const {
    if (scheduled_sets.empty() && on_demand_sets.empty())
        raise(ErrorCode::invalid_argument, "ensemble has no map sets");
    std::set<int> ids;
    for (const auto& s : scheduled_sets) {
        s.validate();
        if (!ids.insert(s.sensor_id).second)
            raise(ErrorCode::invalid_argument, "duplicate sensor id");
    }
    for (const auto& s : on_demand_sets) {
        s.validate();
        if (!ids.insert(s.sensor_id).second)
            raise(ErrorCode::invalid_argument, "duplicate sensor id");
    }
}

UpscaleMethod upscale_method_from_name(const std::string& s) {
    if (s == "nearest") return UpscaleMethod::nearest;
    if (s == "bilinear") return UpscaleMethod::bilinear;
    if (s == "bicubic") return UpscaleMethod::bicubic;
    raise(ErrorCode::invalid_argument, "unknown upscale method '" + s + "'");
}

void validate_date(const std::string& date) {
    auto bad = [&] { raise(ErrorCode::invalid_argument, "date '" + date + "' is not YYYY-MM-DD"); };
    if (date.size() != 10 || date[4] != '-' || date[7] != '-') bad();
    for (int i : {0, 1, 2, 3, 5, 6, 8, 9})
        if (!std::isdigit(static_cast<unsigned char>(date[i]))) bad();
    int month = (date[5] - '0') * 10 + (date[6] - '0');
    int day = (date[8] - '0') * 10 + (date[9] - '0');
    if (month < 1 || month > 12 || day < 1 || day > 31) bad();
}

BandStack downscale(const BandStack& stack, int factor) {
    if (factor <= 0) raise(ErrorCode::invalid_argument, "downscale factor must be >= 1");
    if (factor == 1) return stack;
    const int ow = stack.width / factor;
    const int oh = stack.height / factor;
    if (ow == 0 || oh == 0)
        raise(ErrorCode::invalid_argument, "downscale factor exceeds raster dims");

    BandStack out = BandStack::make(ow, oh, stack.bands, stack.pixel_size_m * factor,
                                    stack.acquisition_date);
    for (int b = 0; b < stack.band_count(); ++b) {
        const auto& in = stack.planes[b];
        auto& dst = out.planes[b];
#pragma omp parallel for schedule(static)
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double sum = 0.0;
                int n = 0;
                for (int dy = 0; dy < factor; ++dy) {
                    const float* row = in.data() + static_cast<std::size_t>(oy * factor + dy) * stack.width;
                    for (int dx = 0; dx < factor; ++dx) {
                        float v = row[ox * factor + dx];
                        if (!std::isnan(v)) {
                            sum += v;
                            ++n;
                        }
                    }
                }
                dst[static_cast<std::size_t>(oy) * ow + ox] =
                    n > 0 ? static_cast<float>(sum / n) : kNaN;
            }
        }
    }
    return out;
}

namespace {

inline float sample_clamped(const std::vector<float>& p, int w, int h, int x, int y) {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return p[static_cast<std::size_t>(y) * w + x];
}

// Keys cubic convolution kernel, a = -0.5.
inline double cubic_weight(double t) {
    t = std::fabs(t);
    if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
    if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
    return 0.0;
}

}  // namespace

BandStack upscale(const BandStack& stack, int factor, UpscaleMethod method) {
    if (factor <= 0) raise(ErrorCode::invalid_argument, "upscale factor must be >= 1");
    if (factor == 1) return stack;
    const int ow = stack.width * factor;
    const int oh = stack.height * factor;
    BandStack out = BandStack::make(ow, oh, stack.bands, stack.pixel_size_m / factor,
                                    stack.acquisition_date);
    const int w = stack.width, h = stack.height;

    for (int b = 0; b < stack.band_count(); ++b) {
        const auto& in = stack.planes[b];
        auto& dst = out.planes[b];
#pragma omp parallel for schedule(static)
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                float v = kNaN;
                switch (method) {
                    case UpscaleMethod::nearest: {
                        v = in[static_cast<std::size_t>(oy / factor) * w + ox / factor];
                        break;
                    }
                    case UpscaleMethod::bilinear: {
                        double sx = (ox + 0.5) / factor - 0.5;
                        double sy = (oy + 0.5) / factor - 0.5;
                        int x0 = static_cast<int>(std::floor(sx));
                        int y0 = static_cast<int>(std::floor(sy));
                        double fx = sx - x0, fy = sy - y0;
                        double acc = 0.0;
                        bool nan = false;
                        for (int dy = 0; dy <= 1 && !nan; ++dy)
                            for (int dx = 0; dx <= 1; ++dx) {
                                float s = sample_clamped(in, w, h, x0 + dx, y0 + dy);
                                if (std::isnan(s)) { nan = true; break; }
                                double wgt = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
                                acc += wgt * s;
                            }
                        v = nan ? kNaN : static_cast<float>(acc);
                        break;
                    }
                    case UpscaleMethod::bicubic: {
                        double sx = (ox + 0.5) / factor - 0.5;
                        double sy = (oy + 0.5) / factor - 0.5;
                        int x0 = static_cast<int>(std::floor(sx));
                        int y0 = static_cast<int>(std::floor(sy));
                        double fx = sx - x0, fy = sy - y0;
                        double acc = 0.0;
                        bool nan = false;
                        for (int dy = -1; dy <= 2 && !nan; ++dy) {
                            double wy = cubic_weight(dy - fy);
                            for (int dx = -1; dx <= 2; ++dx) {
                                float s = sample_clamped(in, w, h, x0 + dx, y0 + dy);
                                if (std::isnan(s)) { nan = true; break; }
                                acc += wy * cubic_weight(dx - fx) * s;
                            }
                        }
                        v = nan ? kNaN : static_cast<float>(acc);
                        break;
                    }
                }
                dst[static_cast<std::size_t>(oy) * ow + ox] = v;
            }
        }
    }
    return out;
}

BandStack resample_to_resolution(const BandStack& stack, double target_m_per_px) {
    if (target_m_per_px <= 0) raise(ErrorCode::invalid_argument, "non-positive target resolution");
    const double ratio = target_m_per_px / stack.pixel_size_m;
    if (ratio > 64.0 || ratio < 1.0 / 64.0)
        raise(ErrorCode::resolution_mismatch, "target beyond x64 of source resolution");

    constexpr double kTol = 1e-9;
    if (std::fabs(ratio - 1.0) < kTol) return stack;

    if (ratio > 1.0) {  // coarser: downscale
        int k = static_cast<int>(std::llround(ratio));
        if (k >= 1 && std::fabs(ratio - k) < kTol * k) return downscale(stack, k);
        int lo = std::max(1, static_cast<int>(std::floor(ratio)));
        int hi = static_cast<int>(std::ceil(ratio));
        raise(ErrorCode::resolution_mismatch,
              "target " + std::to_string(target_m_per_px) + " m/px is not an integer factor of " +
                  std::to_string(stack.pixel_size_m) + " m/px; achievable: " +
                  std::to_string(stack.pixel_size_m * lo) + " or " +
                  std::to_string(stack.pixel_size_m * hi));
    }
    double inv = 1.0 / ratio;
    int k = static_cast<int>(std::llround(inv));
    if (k >= 1 && std::fabs(inv - k) < kTol * k) return upscale(stack, k, UpscaleMethod::bilinear);
    int lo = std::max(1, static_cast<int>(std::floor(inv)));
    int hi = static_cast<int>(std::ceil(inv));
    raise(ErrorCode::resolution_mismatch,
          "target " + std::to_string(target_m_per_px) + " m/px is not an integer factor of " +
              std::to_string(stack.pixel_size_m) + " m/px; achievable: " +
              std::to_string(stack.pixel_size_m / lo) + " or " +
              std::to_string(stack.pixel_size_m / hi));
}

BandStack crop(const BandStack& stack, int x0, int y0, int w, int h) {
    if (w <= 0 || h <= 0) raise(ErrorCode::invalid_argument, "zero-area crop window");
    if (x0 < 0 || y0 < 0 || x0 + w > stack.width || y0 + h > stack.height)
        raise(ErrorCode::invalid_argument, "crop window out of bounds");
    BandStack out = BandStack::make(w, h, stack.bands, stack.pixel_size_m, stack.acquisition_date);
    for (int b = 0; b < stack.band_count(); ++b)
        for (int y = 0; y < h; ++y) {
            const float* src = stack.planes[b].data() + static_cast<std::size_t>(y0 + y) * stack.width + x0;
            std::copy(src, src + w, out.planes[b].begin() + static_cast<std::size_t>(y) * w);
        }
    return out;
}

BandStack select_bands(const BandStack& stack, const std::vector<std::string>& names) {
    BandStack out;
    out.width = stack.width;
    out.height = stack.height;
    out.pixel_size_m = stack.pixel_size_m;
    out.acquisition_date = stack.acquisition_date;
    for (const auto& name : names) {
        const int i = stack.require_band(name);
        out.bands.push_back(stack.bands[i]);
        out.planes.push_back(stack.planes[i]);
    }
    return out;
}

namespace {

// NCC between ref(x, y) and mov(x + sx, y + sy) over their overlap.
// Returns -2 when the overlap is empty or degenerate.
double ncc_at_shift(const std::vector<float>& ref, const std::vector<float>& mov,
                    int w, int h, int sx, int sy) {
    const int x_lo = std::max(0, -sx), x_hi = std::min(w, w - sx);
    const int y_lo = std::max(0, -sy), y_hi = std::min(h, h - sy);
    const long long n = static_cast<long long>(x_hi - x_lo) * (y_hi - y_lo);
    if (n < 4) return -2.0;
    double sr = 0, sm = 0, srr = 0, smm = 0, srm = 0;
    for (int y = y_lo; y < y_hi; ++y) {
        const float* rrow = ref.data() + static_cast<std::size_t>(y) * w;
        const float* mrow = mov.data() + static_cast<std::size_t>(y + sy) * w + sx;
        for (int x = x_lo; x < x_hi; ++x) {
            double r = rrow[x], m = mrow[x];
            sr += r;
            sm += m;
            srr += r * r;
            smm += m * m;
            srm += r * m;
        }
    }
    const double var_r = srr - sr * sr / n;
    const double var_m = smm - sm * sm / n;
    if (var_r <= 0 || var_m <= 0) return -2.0;
    return (srm - sr * sm / n) / std::sqrt(var_r * var_m);
}

std::vector<float> fill_nan_with_mean(std::span<const float> g) {
    double sum = 0;
    std::size_t n = 0;
    for (float v : g)
        if (!std::isnan(v)) {
            sum += v;
            ++n;
        }
    if (n == 0) raise(ErrorCode::degenerate_input, "all-NaN grid");
    const float mean = static_cast<float>(sum / n);
    std::vector<float> out(g.begin(), g.end());
    for (float& v : out)
        if (std::isnan(v)) v = mean;
    return out;
}

}  // namespace

PixelShift estimate_shift(std::span<const float> reference, std::span<const float> moving,
                          int width, int height, int search_radius_px) {
    if (width < 16 || height < 16)
        raise(ErrorCode::invalid_argument, "estimate_shift needs grids >= 16x16");
    if (reference.size() != static_cast<std::size_t>(width) * height ||
        moving.size() != reference.size())
        raise(ErrorCode::invalid_argument, "estimate_shift needs equal-dim grids");
    if (search_radius_px < 1 || search_radius_px >= std::min(width, height) / 2)
        raise(ErrorCode::invalid_argument, "bad search radius");

    std::vector<float> ref = fill_nan_with_mean(reference);
    std::vector<float> mov = fill_nan_with_mean(moving);

    auto variance_of = [](const std::vector<float>& g) {
        double s = 0, ss = 0;
        for (float v : g) {
            s += v;
            ss += double(v) * v;
        }
        return ss / g.size() - (s / g.size()) * (s / g.size());
    };
    if (variance_of(ref) <= 0 || variance_of(mov) <= 0)
        raise(ErrorCode::degenerate_input, "constant-valued grid has no registration signal");

    const int S = search_radius_px;
    const int side = 2 * S + 1;
    std::vector<double> score(static_cast<std::size_t>(side) * side, -2.0);
#pragma omp parallel for schedule(static)
    for (int idx = 0; idx < side * side; ++idx) {
        int sy = idx / side - S;
        int sx = idx % side - S;
        score[idx] = ncc_at_shift(ref, mov, width, height, sx, sy);
    }

    int best = 0;
    for (int idx = 1; idx < side * side; ++idx)
        if (score[idx] > score[best]) best = idx;
    PixelShift result;
    result.dx_px = best % side - S;
    result.dy_px = best / side - S;
    result.confidence = std::clamp(score[best], 0.0, 1.0);
    return result;
}

PixelShift estimate_shift(const BandStack& reference, const BandStack& moving,
                          const std::string& band, int search_radius_px) {
    if (reference.width != moving.width || reference.height != moving.height)
        raise(ErrorCode::invalid_argument, "estimate_shift needs equal-dim stacks");
    int rb = reference.require_band(band);
    int mb = moving.require_band(band);
    return estimate_shift(reference.plane(rb), moving.plane(mb), reference.width,
                          reference.height, search_radius_px);
}

BandStack apply_shift(const BandStack& stack, const PixelShift& shift) {
    const int dx = static_cast<int>(std::llround(shift.dx_px));
    const int dy = static_cast<int>(std::llround(shift.dy_px));
    if (std::abs(dx) >= stack.width || std::abs(dy) >= stack.height)
        raise(ErrorCode::invalid_argument, "shift exceeds raster dims");
    if (dx == 0 && dy == 0) return stack;

    BandStack out = BandStack::make(stack.width, stack.height, stack.bands, stack.pixel_size_m,
                                    stack.acquisition_date, kNaN);
    for (int b = 0; b < stack.band_count(); ++b) {
        const auto& in = stack.planes[b];
        auto& dst = out.planes[b];
#pragma omp parallel for schedule(static)
        for (int y = 0; y < stack.height; ++y) {
            int sy = y + dy;
            if (sy < 0 || sy >= stack.height) continue;
            for (int x = 0; x < stack.width; ++x) {
                int sx = x + dx;
                if (sx < 0 || sx >= stack.width) continue;
                dst[static_cast<std::size_t>(y) * stack.width + x] =
                    in[static_cast<std::size_t>(sy) * stack.width + sx];
            }
        }
    }
    return out;
}

}  // namespace agrisr
