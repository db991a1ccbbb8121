#include "agrisr/refimpl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace agrisr::refimpl {

namespace {
constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();
}

std::vector<float> downscale_plane(std::span<const float> in, int w, int h, int factor) {
    const int ow = w / factor, oh = h / factor;
    std::vector<float> out(static_cast<std::size_t>(ow) * oh);
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
            double sum = 0.0;
            int n = 0;
            for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx) {
                    float v = in[static_cast<std::size_t>(oy * factor + dy) * w + ox * factor + dx];
                    if (!std::isnan(v)) {
                        sum += v;
                        ++n;
                    }
                }
            out[static_cast<std::size_t>(oy) * ow + ox] = n ? static_cast<float>(sum / n) : kNaN;
        }
    return out;
}

namespace {

double keys_cubic(double t) {
    t = std::fabs(t);
    if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
    if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
    return 0.0;
}

float clamped(std::span<const float> p, int w, int h, int x, int y) {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return p[static_cast<std::size_t>(y) * w + x];
}

}  // namespace

std::vector<float> upscale_plane_bicubic(std::span<const float> in, int w, int h, int factor) {
    const int ow = w * factor, oh = h * factor;
    std::vector<float> out(static_cast<std::size_t>(ow) * oh);
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
            double sx = (ox + 0.5) / factor - 0.5;
            double sy = (oy + 0.5) / factor - 0.5;
            int x0 = static_cast<int>(std::floor(sx));
            int y0 = static_cast<int>(std::floor(sy));
            double fx = sx - x0, fy = sy - y0;
            double acc = 0.0;
            bool nan = false;
            for (int dy = -1; dy <= 2 && !nan; ++dy) {
                double wy = keys_cubic(dy - fy);
                for (int dx = -1; dx <= 2; ++dx) {
                    float s = clamped(in, w, h, x0 + dx, y0 + dy);
                    if (std::isnan(s)) {
                        nan = true;
                        break;
                    }
                    acc += wy * keys_cubic(dx - fx) * s;
                }
            }
            out[static_cast<std::size_t>(oy) * ow + ox] = nan ? kNaN : static_cast<float>(acc);
        }
    return out;
}

ShiftScan scan_shifts(std::span<const float> ref, std::span<const float> mov,
                      int w, int h, int search_radius) {
    ShiftScan best;
    for (int sy = -search_radius; sy <= search_radius; ++sy)
        for (int sx = -search_radius; sx <= search_radius; ++sx) {
            const int x_lo = std::max(0, -sx), x_hi = std::min(w, w - sx);
            const int y_lo = std::max(0, -sy), y_hi = std::min(h, h - sy);
            const long long n = static_cast<long long>(x_hi - x_lo) * (y_hi - y_lo);
            if (n < 4) continue;
            double sr = 0, sm = 0, srr = 0, smm = 0, srm = 0;
            for (int y = y_lo; y < y_hi; ++y)
                for (int x = x_lo; x < x_hi; ++x) {
                    double r = ref[static_cast<std::size_t>(y) * w + x];
                    double m = mov[static_cast<std::size_t>(y + sy) * w + x + sx];
                    sr += r;
                    sm += m;
                    srr += r * r;
                    smm += m * m;
                    srm += r * m;
                }
            double var_r = srr - sr * sr / n;
            double var_m = smm - sm * sm / n;
            if (var_r <= 0 || var_m <= 0) continue;
            double ncc = (srm - sr * sm / n) / std::sqrt(var_r * var_m);
            if (ncc > best.peak) {
                best.peak = ncc;
                best.dx = sx;
                best.dy = sy;
            }
        }
    return best;
}

void gram_products(const std::vector<std::vector<double>>& xcols,
                   const std::vector<std::vector<double>>& ycols,
                   std::vector<double>& xtx, std::vector<double>& xty) {
    const std::size_t d = xcols.size(), dout = ycols.size();
    const std::size_t n = d ? xcols[0].size() : 0;
    xtx.assign(d * d, 0.0);
    xty.assign(d * dout, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < n; ++k) s += xcols[i][k] * xcols[j][k];
            xtx[i * d + j] = s;
            xtx[j * d + i] = s;
        }
        for (std::size_t j = 0; j < dout; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < n; ++k) s += xcols[i][k] * ycols[j][k];
            xty[i * dout + j] = s;
        }
    }
}

std::vector<double> conv2d_same(const std::vector<std::vector<double>>& channels,
                                int w, int h,
                                const std::vector<std::vector<double>>& kernels,
                                int ksize, double bias) {
    const int r = ksize / 2;
    std::vector<double> out(static_cast<std::size_t>(w) * h, bias);
    for (std::size_t c = 0; c < channels.size(); ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0;
                for (int ky = 0; ky < ksize; ++ky)
                    for (int kx = 0; kx < ksize; ++kx) {
                        int sy = y + ky - r, sx = x + kx - r;
                        if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                        acc += kernels[c][static_cast<std::size_t>(ky) * ksize + kx] *
                               channels[c][static_cast<std::size_t>(sy) * w + sx];
                    }
                out[static_cast<std::size_t>(y) * w + x] += acc;
            }
    return out;
}

double ssim_plane(std::span<const float> a, std::span<const float> b, int w, int h,
                  double data_range) {
    const int win = 8;
    const double c1 = (0.01 * data_range) * (0.01 * data_range);
    const double c2 = (0.03 * data_range) * (0.03 * data_range);
    double total = 0;
    long long windows = 0;
    for (int y0 = 0; y0 + win <= h; ++y0)
        for (int x0 = 0; x0 + win <= w; ++x0) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            bool nan = false;
            for (int dy = 0; dy < win && !nan; ++dy)
                for (int dx = 0; dx < win; ++dx) {
                    double va = a[static_cast<std::size_t>(y0 + dy) * w + x0 + dx];
                    double vb = b[static_cast<std::size_t>(y0 + dy) * w + x0 + dx];
                    if (std::isnan(va) || std::isnan(vb)) {
                        nan = true;
                        break;
                    }
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            if (nan) continue;
            const double n = win * win;
            double mu_a = sa / n, mu_b = sb / n;
            double var_a = saa / n - mu_a * mu_a;
            double var_b = sbb / n - mu_b * mu_b;
            double cov = sab / n - mu_a * mu_b;
            total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                     ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            ++windows;
        }
    return windows ? total / windows : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace agrisr::refimpl
