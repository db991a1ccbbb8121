#pragma once

// Serial reference implementations of the hot kernels. Straight loops,
// no OpenMP. The test suites check the parallel kernels against these,
// and the bench target times the two side by side.

#include <span>
#include <vector>

namespace agrisr::refimpl {

// Block-mean pooling of a single plane, NaN-excluding, double accumulator.
std::vector<float> downscale_plane(std::span<const float> in, int w, int h, int factor);

// Bicubic upscale of a single plane (Keys a=-0.5, edge clamp, NaN poison).
std::vector<float> upscale_plane_bicubic(std::span<const float> in, int w, int h, int factor);

// Exhaustive integer-shift NCC scan; returns (dx, dy, peak).
struct ShiftScan {
    int dx = 0, dy = 0;
    double peak = -2.0;
};
ShiftScan scan_shifts(std::span<const float> ref, std::span<const float> mov,
                      int w, int h, int search_radius);

// Dense Gram products for ridge fitting: xtx = X^T X (d x d), xty = X^T Y
// (d x dout) with X stored column-major as xcols[d][n], Y as ycols[dout][n].
void gram_products(const std::vector<std::vector<double>>& xcols,
                   const std::vector<std::vector<double>>& ycols,
                   std::vector<double>& xtx, std::vector<double>& xty);

// Valid-mode 2D convolution of a CHW image with one output channel's
// kernels plus bias, "same" zero padding.
std::vector<double> conv2d_same(const std::vector<std::vector<double>>& channels,
                                int w, int h,
                                const std::vector<std::vector<double>>& kernels,
                                int ksize, double bias);

// Mean SSIM over sliding 8x8 windows (uniform weights), skipping windows
// that touch NaN.
double ssim_plane(std::span<const float> a, std::span<const float> b, int w, int h,
                  double data_range);

}  // namespace agrisr::refimpl
