#include "agrisr/sr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>

#include "agrisr/parallel.hpp"

namespace agrisr {

using nlohmann::json;

namespace {

constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();

std::vector<int> grid_positions(int extent, int patch, int stride) {
    std::vector<int> pos;
    if (extent < patch) return pos;
    for (int x = 0; x + patch <= extent; x += stride) pos.push_back(x);
    if (pos.empty() || pos.back() != extent - patch) pos.push_back(extent - patch);
    return pos;
}

template <typename T>
void deterministic_shuffle(std::vector<T>& v, std::uint64_t seed) {
    std::uint64_t state = seed;
    for (std::size_t i = v.size(); i > 1; --i) {
        state = mix64(state);
        std::swap(v[i - 1], v[state % i]);
    }
}

}  // namespace

void SRTaskSpec::validate() const {
    if (input_bands.empty() || target_bands.empty())
        raise(ErrorCode::invalid_argument, "task band lists must be non-empty");
    if (scale_factor != 1 && scale_factor != 2 && scale_factor != 4 && scale_factor != 8 &&
        scale_factor != 16)
        raise(ErrorCode::invalid_argument, "scale_factor must be one of {1,2,4,8,16}");
    if (patch_size_lo <= 0 || patch_size_lo % 2 == 0)
        raise(ErrorCode::invalid_argument, "patch_size_lo must be odd and positive");
    if (stride <= 0) raise(ErrorCode::invalid_argument, "stride must be positive");
}

json SRTaskSpec::to_json() const {
    return json{{"input_bands", input_bands},
                {"target_bands", target_bands},
                {"scale_factor", scale_factor},
                {"patch_size_lo", patch_size_lo},
                {"stride", stride}};
}

SRTaskSpec SRTaskSpec::from_json(const json& j) {
    SRTaskSpec t;
    t.input_bands = j.at("input_bands").get<std::vector<std::string>>();
    t.target_bands = j.at("target_bands").get<std::vector<std::string>>();
    t.scale_factor = j.at("scale_factor").get<int>();
    t.patch_size_lo = j.value("patch_size_lo", 7);
    t.stride = j.value("stride", 1);
    t.validate();
    return t;
}

PatchDataset make_training_pairs(const BandStack& lo_stack, const BandStack& hi_stack,
                                 const SRTaskSpec& task, std::uint64_t seed,
                                 const PatchKeep& keep) {
    task.validate();
    const int f = task.scale_factor;
    if (lo_stack.width * f != hi_stack.width || lo_stack.height * f != hi_stack.height)
        raise(ErrorCode::resolution_mismatch,
              "stack dims do not differ by the task scale factor");
    const double ratio = lo_stack.pixel_size_m / hi_stack.pixel_size_m;
    if (std::fabs(ratio - f) > 1e-6 * f)
        raise(ErrorCode::resolution_mismatch,
              "stack resolutions do not differ by the task scale factor");

    std::vector<int> lo_bands, hi_bands;
    for (const auto& b : task.input_bands) lo_bands.push_back(lo_stack.require_band(b));
    for (const auto& b : task.target_bands) hi_bands.push_back(hi_stack.require_band(b));

    const int p = task.patch_size_lo;
    const int ph = p * f;
    PatchDataset ds;
    ds.task = task;
    ds.lo_dim = p * p * static_cast<int>(lo_bands.size());
    ds.hi_dim = ph * ph * static_cast<int>(hi_bands.size());

    const auto xs = grid_positions(lo_stack.width, p, task.stride);
    const auto ys = grid_positions(lo_stack.height, p, task.stride);
    for (int y0 : ys)
        for (int x0 : xs) {
            if (keep && !keep(x0 + p / 2, y0 + p / 2)) continue;
            std::vector<float> lo_patch;
            lo_patch.reserve(ds.lo_dim);
            bool nan = false;
            for (int b : lo_bands) {
                for (int dy = 0; dy < p && !nan; ++dy)
                    for (int dx = 0; dx < p; ++dx) {
                        float v = lo_stack.at(b, y0 + dy, x0 + dx);
                        if (std::isnan(v)) {
                            nan = true;
                            break;
                        }
                        lo_patch.push_back(v);
                    }
                if (nan) break;
            }
            if (nan) continue;
            std::vector<float> hi_patch;
            hi_patch.reserve(ds.hi_dim);
            for (int b : hi_bands) {
                for (int dy = 0; dy < ph && !nan; ++dy)
                    for (int dx = 0; dx < ph; ++dx) {
                        float v = hi_stack.at(b, y0 * f + dy, x0 * f + dx);
                        if (std::isnan(v)) {
                            nan = true;
                            break;
                        }
                        hi_patch.push_back(v);
                    }
                if (nan) break;
            }
            if (nan) continue;
            ds.lo.push_back(std::move(lo_patch));
            ds.hi.push_back(std::move(hi_patch));
        }

    if (ds.lo.empty()) raise(ErrorCode::empty_dataset, "no usable NaN-free patches");

    std::vector<std::size_t> order(ds.lo.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    deterministic_shuffle(order, derive_seed(seed, 0x9a1c));
    PatchDataset shuffled;
    shuffled.task = ds.task;
    shuffled.lo_dim = ds.lo_dim;
    shuffled.hi_dim = ds.hi_dim;
    shuffled.lo.reserve(order.size());
    shuffled.hi.reserve(order.size());
    for (std::size_t i : order) {
        shuffled.lo.push_back(std::move(ds.lo[i]));
        shuffled.hi.push_back(std::move(ds.hi[i]));
    }
    return shuffled;
}

PatchDataset make_training_pairs(const SensorEnsemble& ensemble, const SRTaskSpec& task,
                                 std::uint64_t seed, const PatchKeep& keep) {
    task.validate();
    ensemble.validate();

    PatchDataset all;
    all.task = task;
    bool found_pair = false;
    for (const auto& sset : ensemble.scheduled_sets)
        for (const auto& lo_stack : sset.maps) {
            const BandStack* hi_stack = nullptr;
            for (const auto& dset : ensemble.on_demand_sets)
                for (const auto& m : dset.maps)
                    if (m.acquisition_date == lo_stack.acquisition_date) {
                        hi_stack = &m;
                        break;
                    }
            if (!hi_stack) continue;
            found_pair = true;
            PatchDataset part = make_training_pairs(lo_stack, *hi_stack, task, seed, keep);
            all.lo_dim = part.lo_dim;
            all.hi_dim = part.hi_dim;
            for (auto& v : part.lo) all.lo.push_back(std::move(v));
            for (auto& v : part.hi) all.hi.push_back(std::move(v));
        }
    if (!found_pair)
        raise(ErrorCode::empty_dataset, "no date-matched scheduled/on-demand stack pairs");
    deterministic_shuffle(all.lo, derive_seed(seed, 0x77));  // keep lo/hi aligned: reshuffle both
    deterministic_shuffle(all.hi, derive_seed(seed, 0x77));
    return all;
}

const char* sr_kind_name(SRModel::Kind k) {
    switch (k) {
        case SRModel::Kind::interp_baseline: return "interp_baseline";
        case SRModel::Kind::patch_linear: return "patch_linear";
        case SRModel::Kind::conv_net: return "conv_net";
    }
    return "?";
}

SRModel::Kind sr_kind_from_name(const std::string& s) {
    if (s == "interp_baseline") return SRModel::Kind::interp_baseline;
    if (s == "patch_linear") return SRModel::Kind::patch_linear;
    if (s == "conv_net") return SRModel::Kind::conv_net;
    raise(ErrorCode::invalid_argument, "unknown SR model kind '" + s + "'");
}

namespace {

std::vector<BandNorm> patch_band_norms(const std::vector<std::vector<float>>& patches,
                                       int n_bands, int per_band) {
    std::vector<BandNorm> norms(n_bands);
    for (int b = 0; b < n_bands; ++b) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (const auto& patch : patches)
            for (int i = 0; i < per_band; ++i) {
                double v = patch[static_cast<std::size_t>(b) * per_band + i];
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        if (!(hi > lo)) hi = lo + 1.0;  // constant band
        norms[b] = {lo, hi};
    }
    return norms;
}

inline double norm_value(double v, const BandNorm& n) { return (v - n.lo) / (n.hi - n.lo); }
inline double denorm_value(double v, const BandNorm& n) { return v * (n.hi - n.lo) + n.lo; }

// Cholesky in place; A is n x n row-major SPD. Throws singular-system.
void cholesky(std::vector<double>& a, int n) {
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a[static_cast<std::size_t>(i) * n + j];
            for (int k = 0; k < j; ++k)
                s -= a[static_cast<std::size_t>(i) * n + k] * a[static_cast<std::size_t>(j) * n + k];
            if (i == j) {
                if (s <= 0.0)
                    raise(ErrorCode::singular_system,
                          "normal equations are singular; set ridge_lambda > 0");
                a[static_cast<std::size_t>(i) * n + j] = std::sqrt(s);
            } else {
                a[static_cast<std::size_t>(i) * n + j] = s / a[static_cast<std::size_t>(j) * n + j];
            }
        }
    }
}

// Solves L L^T x = b for one RHS, L lower triangular from cholesky().
void cholesky_solve(const std::vector<double>& l, int n, std::vector<double>& b) {
    for (int i = 0; i < n; ++i) {
        double s = b[i];
        for (int k = 0; k < i; ++k) s -= l[static_cast<std::size_t>(i) * n + k] * b[k];
        b[i] = s / l[static_cast<std::size_t>(i) * n + i];
    }
    for (int i = n - 1; i >= 0; --i) {
        double s = b[i];
        for (int k = i + 1; k < n; ++k) s -= l[static_cast<std::size_t>(k) * n + i] * b[k];
        b[i] = s / l[static_cast<std::size_t>(i) * n + i];
    }
}

}  // namespace

SRModel fit_interp_baseline(const SRTaskSpec& task) {
    task.validate();
    if (task.scale_factor == 1)
        raise(ErrorCode::unsupported_task, "interp baseline cannot synthesize channels (factor 1)");
    if (task.input_bands != task.target_bands)
        raise(ErrorCode::unsupported_task, "interp baseline needs target bands == input bands");
    SRModel m;
    m.kind = SRModel::Kind::interp_baseline;
    m.task = task;
    return m;
}

SRModel fit_patch_linear(const PatchDataset& pairs, double ridge_lambda) {
    if (pairs.lo.empty()) raise(ErrorCode::empty_dataset, "no training pairs");
    if (ridge_lambda < 0) raise(ErrorCode::invalid_argument, "ridge_lambda must be >= 0");
    const int n_in = static_cast<int>(pairs.task.input_bands.size());
    const int n_out = static_cast<int>(pairs.task.target_bands.size());
    const int p = pairs.task.patch_size_lo;
    const int ph = p * pairs.task.scale_factor;
    const int d = pairs.lo_dim + 1;  // + bias
    const int dout = pairs.hi_dim;
    const std::size_t n = pairs.lo.size();

    if (n < 10 * static_cast<std::size_t>(pairs.lo_dim))
        std::cerr << "[agrisr] warning: only " << n << " pairs for " << pairs.lo_dim
                  << "-dim patches; fit may be under-determined\n";

    SRModel m;
    m.kind = SRModel::Kind::patch_linear;
    m.task = pairs.task;
    m.input_norm = patch_band_norms(pairs.lo, n_in, p * p);
    m.target_norm = patch_band_norms(pairs.hi, n_out, ph * ph);

    // normalized design rows (+ bias)
    std::vector<std::vector<double>> xrows(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& row = xrows[i];
        row.resize(d);
        for (int j = 0; j < pairs.lo_dim; ++j)
            row[j] = norm_value(pairs.lo[i][j], m.input_norm[j / (p * p)]);
        row[d - 1] = 1.0;
    }
    std::vector<double> yscale(dout), yoff(dout);
    for (int j = 0; j < dout; ++j) {
        const BandNorm& bn = m.target_norm[j / (ph * ph)];
        yscale[j] = 1.0 / (bn.hi - bn.lo);
        yoff[j] = -bn.lo / (bn.hi - bn.lo);
    }

    // Gram products; one thread owns each row, pairs accumulate in fixed
    // ascending order so the result is worker-count independent.
    std::vector<double> xtx(static_cast<std::size_t>(d) * d, 0.0);
    std::vector<double> xty(static_cast<std::size_t>(d) * dout, 0.0);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < d; ++i) {
        double* xtx_row = xtx.data() + static_cast<std::size_t>(i) * d;
        double* xty_row = xty.data() + static_cast<std::size_t>(i) * dout;
        for (std::size_t k = 0; k < n; ++k) {
            const double xi = xrows[k][i];
            if (xi == 0.0) continue;
            const double* xr = xrows[k].data();
            for (int j = 0; j < d; ++j) xtx_row[j] += xi * xr[j];
            const float* hr = pairs.hi[k].data();
            for (int j = 0; j < dout; ++j) xty_row[j] += xi * (hr[j] * yscale[j] + yoff[j]);
        }
    }
    for (int i = 0; i < d - 1; ++i)  // bias unregularized
        xtx[static_cast<std::size_t>(i) * d + i] += ridge_lambda;

    cholesky(xtx, d);
    m.weights.assign(static_cast<std::size_t>(d) * dout, 0.0);
    std::vector<double> col(d);
#pragma omp parallel for schedule(static) firstprivate(col)
    for (int j = 0; j < dout; ++j) {
        for (int i = 0; i < d; ++i) col[i] = xty[static_cast<std::size_t>(i) * dout + j];
        cholesky_solve(xtx, d, col);
        for (int i = 0; i < d; ++i) m.weights[static_cast<std::size_t>(i) * dout + j] = col[i];
    }

    // training MSE in normalized space
    double sse = 0.0;
#pragma omp parallel for schedule(static) reduction(+ : sse)
    for (long long k = 0; k < static_cast<long long>(n); ++k) {
        const double* xr = xrows[k].data();
        const float* hr = pairs.hi[k].data();
        for (int j = 0; j < dout; ++j) {
            double pred = 0;
            for (int i = 0; i < d; ++i)
                pred += xr[i] * m.weights[static_cast<std::size_t>(i) * dout + j];
            const double diff = pred - (hr[j] * yscale[j] + yoff[j]);
            sse += diff * diff;
        }
    }
    m.training_mse = sse / (static_cast<double>(n) * dout);
    return m;
}

SRModel fit_conv_net(const PatchDataset& pairs, const ConvArch& arch, int epochs,
                     double learning_rate, int batch_size, std::uint64_t seed) {
    if (pairs.lo.empty()) raise(ErrorCode::empty_dataset, "no training pairs");
    if (epochs <= 0 || learning_rate <= 0 || batch_size <= 0)
        raise(ErrorCode::invalid_argument, "bad training hyperparameters");
    const int n_in = static_cast<int>(pairs.task.input_bands.size());
    const int n_out = static_cast<int>(pairs.task.target_bands.size());
    const int p = pairs.task.patch_size_lo;
    const int f = pairs.task.scale_factor;
    const int ph = p * f;
    ConvNet::validate_arch(arch, n_in, n_out, f);

    SRModel m;
    m.kind = SRModel::Kind::conv_net;
    m.task = pairs.task;
    m.seed = seed;
    m.epochs = epochs;
    m.input_norm = patch_band_norms(pairs.lo, n_in, p * p);
    m.target_norm = patch_band_norms(pairs.hi, n_out, ph * ph);
    m.net = ConvNet(arch, n_in, derive_seed(seed, 0xC0));

    const std::size_t n = pairs.lo.size();
    std::vector<DImage> lo_images(n), hi_images(n);
    for (std::size_t i = 0; i < n; ++i) {
        DImage li = DImage::make(n_in, p, p);
        for (int b = 0; b < n_in; ++b)
            for (int j = 0; j < p * p; ++j)
                li.planes[b][j] =
                    norm_value(pairs.lo[i][static_cast<std::size_t>(b) * p * p + j], m.input_norm[b]);
        DImage hi = DImage::make(n_out, ph, ph);
        for (int b = 0; b < n_out; ++b)
            for (int j = 0; j < ph * ph; ++j)
                hi.planes[b][j] = norm_value(pairs.hi[i][static_cast<std::size_t>(b) * ph * ph + j],
                                             m.target_norm[b]);
        lo_images[i] = std::move(li);
        hi_images[i] = std::move(hi);
    }

    std::vector<std::size_t> index(n);
    for (std::size_t i = 0; i < n; ++i) index[i] = i;
    deterministic_shuffle(index, derive_seed(seed, 0x51));
    const std::size_t n_val = n >= 10 ? n / 10 : 0;
    std::vector<std::size_t> train_idx(index.begin(), index.end() - n_val);
    std::vector<std::size_t> val_idx(index.end() - n_val, index.end());

    std::vector<double> grad(m.net.param_count());
    for (int epoch = 0; epoch < epochs; ++epoch) {
        deterministic_shuffle(train_idx, derive_seed(seed, 0xE000 + epoch));
        double epoch_loss = 0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < train_idx.size(); start += batch_size) {
            const std::size_t stop = std::min(train_idx.size(), start + batch_size);
            std::fill(grad.begin(), grad.end(), 0.0);
            double batch_loss = 0;
            for (std::size_t i = start; i < stop; ++i)
                batch_loss += m.net.loss_and_gradient(lo_images[train_idx[i]],
                                                      hi_images[train_idx[i]], grad);
            const double inv = 1.0 / static_cast<double>(stop - start);
            batch_loss *= inv;
            if (!std::isfinite(batch_loss))
                raise(ErrorCode::divergence,
                      "non-finite loss at epoch " + std::to_string(epoch));
            for (auto& g : grad) g *= inv;
            m.net.apply_gradient_step(grad, learning_rate);
            epoch_loss += batch_loss;
            ++n_batches;
        }
        epoch_loss /= std::max<std::size_t>(1, n_batches);

        double val_loss = epoch_loss;
        if (!val_idx.empty()) {
            double sse = 0;
            long long cells = 0;
            for (std::size_t i : val_idx) {
                DImage out = m.net.forward(lo_images[i]);
                for (int c = 0; c < out.channels; ++c)
                    for (std::size_t j = 0; j < out.planes[c].size(); ++j) {
                        const double diff = out.planes[c][j] - hi_images[i].planes[c][j];
                        sse += diff * diff;
                        ++cells;
                    }
            }
            val_loss = sse / cells;
        }
        m.loss_curve.emplace_back(epoch_loss, val_loss);
    }
    m.training_mse = m.loss_curve.empty() ? 0.0 : m.loss_curve.back().first;
    return m;
}

namespace {

BandInfo band_info_for(const BandStack& stack, const std::string& name) {
    int i = stack.band_index(name);
    if (i >= 0) return stack.bands[i];
    return BandInfo{name, 0, ""};
}

BandStack apply_patch_linear(const SRModel& m, const BandStack& stack) {
    const int f = m.task.scale_factor;
    const int p = m.task.patch_size_lo;
    const int ph = p * f;
    const int n_in = static_cast<int>(m.task.input_bands.size());
    const int n_out = static_cast<int>(m.task.target_bands.size());
    const int d = p * p * n_in + 1;
    const int dout = ph * ph * n_out;

    if (stack.width < p || stack.height < p)
        raise(ErrorCode::invalid_argument, "stack smaller than the model patch");
    std::vector<int> in_bands;
    for (const auto& b : m.task.input_bands) in_bands.push_back(stack.require_band(b));

    const int ow = stack.width * f, oh = stack.height * f;
    std::vector<BandInfo> out_infos;
    for (const auto& b : m.task.target_bands) out_infos.push_back(band_info_for(stack, b));
    BandStack out = BandStack::make(ow, oh, out_infos, stack.pixel_size_m / f,
                                    stack.acquisition_date, kNaN);

    std::vector<std::vector<double>> sums(n_out,
                                          std::vector<double>(static_cast<std::size_t>(ow) * oh, 0.0));
    std::vector<int> counts(static_cast<std::size_t>(ow) * oh, 0);

    const auto xs = grid_positions(stack.width, p, m.task.stride);
    const auto ys = grid_positions(stack.height, p, m.task.stride);

    // Rows of positions whose output bands cannot overlap run in
    // parallel; the color stepping keeps the accumulation order fixed.
    const int row_span = static_cast<int>((p + m.task.stride - 1) / m.task.stride);
    const int n_colors = std::max(1, row_span + 1);
    for (int color = 0; color < n_colors; ++color) {
#pragma omp parallel for schedule(static)
        for (int yi = color; yi < static_cast<int>(ys.size()); yi += n_colors) {
            const int y0 = ys[yi];
            std::vector<double> x(d), y(dout);
            for (int x0 : xs) {
                bool nan = false;
                int j = 0;
                for (std::size_t bi = 0; bi < in_bands.size(); ++bi) {
                    const int b = in_bands[bi];
                    const BandNorm& bn = m.input_norm[bi];
                    for (int dy = 0; dy < p && !nan; ++dy)
                        for (int dx = 0; dx < p; ++dx) {
                            float v = stack.at(b, y0 + dy, x0 + dx);
                            if (std::isnan(v)) {
                                nan = true;
                                break;
                            }
                            x[j++] = norm_value(v, bn);
                        }
                    if (nan) break;
                }
                if (nan) continue;
                x[d - 1] = 1.0;
                std::fill(y.begin(), y.end(), 0.0);
                for (int i = 0; i < d; ++i) {
                    const double xi = x[i];
                    if (xi == 0.0) continue;
                    const double* wrow = m.weights.data() + static_cast<std::size_t>(i) * dout;
                    for (int jj = 0; jj < dout; ++jj) y[jj] += xi * wrow[jj];
                }
                for (int b = 0; b < n_out; ++b)
                    for (int dy = 0; dy < ph; ++dy)
                        for (int dx = 0; dx < ph; ++dx) {
                            const std::size_t cell =
                                static_cast<std::size_t>(y0 * f + dy) * ow + x0 * f + dx;
                            sums[b][cell] +=
                                y[static_cast<std::size_t>(b) * ph * ph + dy * ph + dx];
                            if (b == 0) ++counts[cell];
                        }
            }
        }
    }

    for (int b = 0; b < n_out; ++b) {
        auto& plane = out.planes[b];
        const BandNorm& bn = m.target_norm[b];
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(plane.size()); ++i)
            if (counts[i] > 0)
                plane[i] = static_cast<float>(denorm_value(sums[b][i] / counts[i], bn));
    }
    return out;
}

BandStack apply_conv_net(const SRModel& m, const BandStack& stack) {
    const int f = m.task.scale_factor;
    const int n_in = static_cast<int>(m.task.input_bands.size());
    const int n_out = static_cast<int>(m.task.target_bands.size());
    std::vector<int> in_bands;
    for (const auto& b : m.task.input_bands) in_bands.push_back(stack.require_band(b));

    const int w = stack.width, h = stack.height;
    std::vector<char> nan_mask(static_cast<std::size_t>(w) * h, 0);
    DImage in = DImage::make(n_in, w, h);
    for (int b = 0; b < n_in; ++b) {
        const auto& src = stack.planes[in_bands[b]];
        const BandNorm& bn = m.input_norm[b];
        for (std::size_t i = 0; i < src.size(); ++i) {
            if (std::isnan(src[i])) {
                nan_mask[i] = 1;
                in.planes[b][i] = 0.5;  // normalized midpoint
            } else {
                in.planes[b][i] = norm_value(src[i], bn);
            }
        }
    }

    DImage result = m.net.forward(in);

    const int ow = w * f, oh = h * f;
    std::vector<BandInfo> out_infos;
    for (const auto& b : m.task.target_bands) out_infos.push_back(band_info_for(stack, b));
    BandStack out = BandStack::make(ow, oh, out_infos, stack.pixel_size_m / f,
                                    stack.acquisition_date, kNaN);

    // dilate the NaN mask by the receptive radius (in lo pixels)
    const int r = m.net.receptive_radius();
    std::vector<char> dilated(nan_mask.size(), 0);
    bool any_nan = std::find(nan_mask.begin(), nan_mask.end(), 1) != nan_mask.end();
    if (any_nan) {
#pragma omp parallel for schedule(static)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                bool hit = false;
                for (int dy = -r; dy <= r && !hit; ++dy) {
                    const int yy = y + dy;
                    if (yy < 0 || yy >= h) continue;
                    for (int dx = -r; dx <= r; ++dx) {
                        const int xx = x + dx;
                        if (xx < 0 || xx >= w) continue;
                        if (nan_mask[static_cast<std::size_t>(yy) * w + xx]) {
                            hit = true;
                            break;
                        }
                    }
                }
                dilated[static_cast<std::size_t>(y) * w + x] = hit ? 1 : 0;
            }
    }

    for (int b = 0; b < n_out; ++b) {
        const BandNorm& bn = m.target_norm[b];
        auto& plane = out.planes[b];
#pragma omp parallel for schedule(static)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                if (any_nan && dilated[static_cast<std::size_t>(y / f) * w + x / f]) continue;
                plane[static_cast<std::size_t>(y) * ow + x] = static_cast<float>(
                    denorm_value(result.planes[b][static_cast<std::size_t>(y) * ow + x], bn));
            }
    }
    return out;
}

}  // namespace

BandStack apply_sr(const SRModel& model, const BandStack& stack) {
    for (const auto& b : model.task.input_bands) stack.require_band(b);
    switch (model.kind) {
        case SRModel::Kind::interp_baseline:
            return upscale(select_bands(stack, model.task.input_bands), model.task.scale_factor,
                           UpscaleMethod::bicubic);
        case SRModel::Kind::patch_linear:
            return apply_patch_linear(model, stack);
        case SRModel::Kind::conv_net:
            return apply_conv_net(model, stack);
    }
    raise(ErrorCode::invalid_argument, "unknown model kind");
}

namespace {

double ssim_plane_omp(std::span<const float> a, std::span<const float> b, int w, int h,
                      double data_range) {
    const int win = std::min({8, w, h});
    const double c1 = (0.01 * data_range) * (0.01 * data_range);
    const double c2 = (0.03 * data_range) * (0.03 * data_range);
    const int ny = h - win + 1;
    std::vector<double> row_sum(ny, 0.0);
    std::vector<long long> row_cnt(ny, 0);
#pragma omp parallel for schedule(static)
    for (int y0 = 0; y0 < ny; ++y0) {
        double total = 0;
        long long cnt = 0;
        for (int x0 = 0; x0 + win <= w; ++x0) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            bool nan = false;
            for (int dy = 0; dy < win && !nan; ++dy)
                for (int dx = 0; dx < win; ++dx) {
                    const double va = a[static_cast<std::size_t>(y0 + dy) * w + x0 + dx];
                    const double vb = b[static_cast<std::size_t>(y0 + dy) * w + x0 + dx];
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
            const double n = static_cast<double>(win) * win;
            const double mu_a = sa / n, mu_b = sb / n;
            const double var_a = std::max(0.0, saa / n - mu_a * mu_a);
            const double var_b = std::max(0.0, sbb / n - mu_b * mu_b);
            const double cov = sab / n - mu_a * mu_b;
            total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                     ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            ++cnt;
        }
        row_sum[y0] = total;
        row_cnt[y0] = cnt;
    }
    double total = 0;
    long long cnt = 0;
    for (int y0 = 0; y0 < ny; ++y0) {
        total += row_sum[y0];
        cnt += row_cnt[y0];
    }
    if (cnt == 0) return std::numeric_limits<double>::quiet_NaN();
    return std::clamp(total / cnt, -1.0, 1.0);
}

double psnr_from_mse(double mse, double range) {
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(range * range / mse);
}

}  // namespace

SimilarityReport similarity(const BandStack& predicted, const BandStack& reference,
                            double data_range) {
    if (data_range <= 0) raise(ErrorCode::invalid_argument, "data_range must be positive");
    if (predicted.width != reference.width || predicted.height != reference.height)
        raise(ErrorCode::invalid_argument, "similarity needs equal dims");
    if (predicted.bands.size() != reference.bands.size())
        raise(ErrorCode::invalid_argument, "similarity needs equal band lists");
    for (std::size_t b = 0; b < predicted.bands.size(); ++b)
        if (predicted.bands[b].name != reference.bands[b].name)
            raise(ErrorCode::invalid_argument, "similarity needs equal band lists");

    SimilarityReport rep;
    double sse = 0;
    long long n_total = 0;
    double ssim_sum = 0;
    int ssim_bands = 0;
    for (int b = 0; b < predicted.band_count(); ++b) {
        const auto& pa = predicted.planes[b];
        const auto& pb = reference.planes[b];
        double band_sse = 0;
        long long band_n = 0;
#pragma omp parallel for schedule(static) reduction(+ : band_sse, band_n)
        for (long long i = 0; i < static_cast<long long>(pa.size()); ++i) {
            if (std::isnan(pa[i]) || std::isnan(pb[i])) continue;
            const double diff = static_cast<double>(pa[i]) - pb[i];
            band_sse += diff * diff;
            ++band_n;
        }
        BandSimilarity bs;
        bs.band = predicted.bands[b].name;
        bs.mse = band_n ? band_sse / band_n : std::numeric_limits<double>::quiet_NaN();
        bs.psnr_db = band_n ? psnr_from_mse(bs.mse, data_range)
                            : std::numeric_limits<double>::quiet_NaN();
        bs.ssim = ssim_plane_omp(pa, pb, predicted.width, predicted.height, data_range);
        if (!std::isnan(bs.ssim)) {
            ssim_sum += bs.ssim;
            ++ssim_bands;
        }
        rep.per_band.push_back(bs);
        sse += band_sse;
        n_total += band_n;
    }
    if (n_total == 0)
        raise(ErrorCode::degenerate_input, "no jointly finite cells to compare");
    rep.mse = sse / n_total;
    rep.psnr_db = psnr_from_mse(rep.mse, data_range);
    rep.ssim = ssim_bands ? ssim_sum / ssim_bands : std::numeric_limits<double>::quiet_NaN();
    return rep;
}

namespace {

json json_finite(double v) {
    if (std::isinf(v)) return v > 0 ? json("inf") : json("-inf");
    if (std::isnan(v)) return json(nullptr);
    return json(v);
}

}  // namespace

json SimilarityReport::to_json() const {
    json j;
    j["mse"] = json_finite(mse);
    j["psnr_db"] = json_finite(psnr_db);
    j["ssim"] = json_finite(ssim);
    json jb = json::array();
    for (const auto& b : per_band)
        jb.push_back({{"band", b.band},
                      {"mse", json_finite(b.mse)},
                      {"psnr_db", json_finite(b.psnr_db)},
                      {"ssim", json_finite(b.ssim)}});
    j["per_band"] = jb;
    return j;
}

void save_model(const SRModel& model, const std::filesystem::path& path) {
    json header;
    header["kind"] = sr_kind_name(model.kind);
    header["task"] = model.task.to_json();
    json jin = json::array(), jout = json::array();
    for (const auto& n : model.input_norm) jin.push_back({{"lo", n.lo}, {"hi", n.hi}});
    for (const auto& n : model.target_norm) jout.push_back({{"lo", n.lo}, {"hi", n.hi}});
    header["input_norm"] = jin;
    header["target_norm"] = jout;
    header["seed"] = model.seed;
    header["epochs"] = model.epochs;
    header["training_mse"] = model.training_mse;
    json jcurve = json::array();
    for (const auto& [t, v] : model.loss_curve) jcurve.push_back({t, v});
    header["loss_curve"] = jcurve;

    std::vector<double> params;
    if (model.kind == SRModel::Kind::patch_linear) {
        params = model.weights;
    } else if (model.kind == SRModel::Kind::conv_net) {
        header["arch"] = model.net.arch().to_json();
        header["in_channels"] = model.net.in_channels();
        params = model.net.flatten_params();
    }
    header["param_count"] = params.size();

    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
    out << "SRM1\n" << header.dump() << "\n";
    std::vector<float> blob(params.begin(), params.end());
    out.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!out) raise(ErrorCode::io, "write failed for '" + path.string() + "'");
}

SRModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::io, "cannot open '" + path.string() + "'");
    std::string magic, header_line;
    std::getline(in, magic);
    if (magic != "SRM1") raise(ErrorCode::io, "'" + path.string() + "' is not a model file");
    std::getline(in, header_line);
    json header = json::parse(header_line);

    SRModel m;
    m.kind = sr_kind_from_name(header.at("kind").get<std::string>());
    m.task = SRTaskSpec::from_json(header.at("task"));
    for (const auto& jn : header.at("input_norm"))
        m.input_norm.push_back({jn.at("lo").get<double>(), jn.at("hi").get<double>()});
    for (const auto& jn : header.at("target_norm"))
        m.target_norm.push_back({jn.at("lo").get<double>(), jn.at("hi").get<double>()});
    m.seed = header.value("seed", 0ULL);
    m.epochs = header.value("epochs", 0);
    m.training_mse = header.value("training_mse", 0.0);
    for (const auto& jc : header.value("loss_curve", json::array()))
        m.loss_curve.emplace_back(jc.at(0).get<double>(), jc.at(1).get<double>());

    const std::size_t n_params = header.at("param_count").get<std::size_t>();
    std::vector<float> blob(n_params);
    in.read(reinterpret_cast<char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(blob.size() * sizeof(float)))
        raise(ErrorCode::io, "truncated model parameters in '" + path.string() + "'");

    if (m.kind == SRModel::Kind::patch_linear) {
        m.weights.assign(blob.begin(), blob.end());
    } else if (m.kind == SRModel::Kind::conv_net) {
        ConvArch arch = ConvArch::from_json(header.at("arch"));
        m.net = ConvNet(arch, header.at("in_channels").get<int>(), 0);
        m.net.set_params(std::vector<double>(blob.begin(), blob.end()));
    }
    return m;
}

void write_loss_curve_csv(const SRModel& model, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) raise(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
    out << "epoch,train_mse,val_mse\n";
    for (std::size_t e = 0; e < model.loss_curve.size(); ++e)
        out << e << ',' << model.loss_curve[e].first << ',' << model.loss_curve[e].second << '\n';
}

}  // namespace agrisr
