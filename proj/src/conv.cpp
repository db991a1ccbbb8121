#include "agrisr/conv.hpp"

#include <cmath>
#include <random>

#include "agrisr/error.hpp"
#include "agrisr/parallel.hpp"

namespace agrisr {

using nlohmann::json;

namespace {

ConvLayerSpec::Act act_from_name(const std::string& s) {
    if (s == "linear") return ConvLayerSpec::Act::linear;
    if (s == "relu") return ConvLayerSpec::Act::relu;
    if (s == "tanh") return ConvLayerSpec::Act::tanh;
    raise(ErrorCode::invalid_architecture, "unknown activation '" + s + "'");
}

const char* act_name(ConvLayerSpec::Act a) {
    switch (a) {
        case ConvLayerSpec::Act::linear: return "linear";
        case ConvLayerSpec::Act::relu: return "relu";
        case ConvLayerSpec::Act::tanh: return "tanh";
    }
    return "?";
}

inline double activate(double z, ConvLayerSpec::Act a) {
    switch (a) {
        case ConvLayerSpec::Act::linear: return z;
        case ConvLayerSpec::Act::relu: return z > 0 ? z : 0.0;
        case ConvLayerSpec::Act::tanh: return std::tanh(z);
    }
    return z;
}

inline double activate_grad(double z, ConvLayerSpec::Act a) {
    switch (a) {
        case ConvLayerSpec::Act::linear: return 1.0;
        case ConvLayerSpec::Act::relu: return z > 0 ? 1.0 : 0.0;
        case ConvLayerSpec::Act::tanh: {
            double t = std::tanh(z);
            return 1.0 - t * t;
        }
    }
    return 1.0;
}

}  // namespace

ConvArch ConvArch::from_json(const json& j) {
    ConvArch arch;
    for (const auto& jl : j) {
        ConvLayerSpec l;
        const std::string op = jl.at("op").get<std::string>();
        if (op == "conv")
            l.op = ConvLayerSpec::Op::conv;
        else if (op == "deconv")
            l.op = ConvLayerSpec::Op::deconv;
        else
            raise(ErrorCode::invalid_architecture, "unknown layer op '" + op + "'");
        l.out_channels = jl.at("out_channels").get<int>();
        l.kernel = jl.value("kernel", l.op == ConvLayerSpec::Op::conv ? 3 : 2);
        l.stride = jl.value("stride", l.op == ConvLayerSpec::Op::conv ? 1 : 2);
        l.activation = act_from_name(jl.value("activation", "relu"));
        arch.layers.push_back(l);
    }
    return arch;
}

json ConvArch::to_json() const {
    json j = json::array();
    for (const auto& l : layers) {
        json jl;
        jl["op"] = l.op == ConvLayerSpec::Op::conv ? "conv" : "deconv";
        jl["out_channels"] = l.out_channels;
        jl["kernel"] = l.kernel;
        jl["stride"] = l.stride;
        jl["activation"] = act_name(l.activation);
        j.push_back(jl);
    }
    return j;
}

void ConvNet::validate_arch(const ConvArch& arch, int in_channels, int target_channels,
                            int scale_factor) {
    if (arch.layers.empty()) raise(ErrorCode::invalid_architecture, "empty architecture");
    if (arch.layers.size() > 10)
        raise(ErrorCode::invalid_architecture,
              "depth " + std::to_string(arch.layers.size()) + " exceeds the 10-layer envelope");
    int ch = in_channels;
    long long stride_product = 1;
    for (const auto& l : arch.layers) {
        if (l.out_channels <= 0) raise(ErrorCode::invalid_architecture, "non-positive channels");
        if (l.op == ConvLayerSpec::Op::conv) {
            if (l.kernel < 1 || l.kernel % 2 == 0)
                raise(ErrorCode::invalid_architecture, "conv kernels must be odd");
            if (l.stride != 1)
                raise(ErrorCode::invalid_architecture, "conv layers are stride 1");
        } else {
            if (l.stride < 2) raise(ErrorCode::invalid_architecture, "deconv stride must be >= 2");
            if (l.kernel != l.stride)
                raise(ErrorCode::invalid_architecture, "deconv kernel must equal its stride");
            stride_product *= l.stride;
        }
        if (l.param_count(ch) > 300000)
            raise(ErrorCode::invalid_architecture,
                  "layer exceeds the 300k-parameter envelope (" +
                      std::to_string(l.param_count(ch)) + ")");
        ch = l.out_channels;
    }
    if (ch != target_channels)
        raise(ErrorCode::invalid_architecture,
              "last layer emits " + std::to_string(ch) + " channels, task needs " +
                  std::to_string(target_channels));
    if (stride_product != scale_factor)
        raise(ErrorCode::invalid_architecture,
              "deconv strides multiply to " + std::to_string(stride_product) +
                  ", task scale factor is " + std::to_string(scale_factor));
}

ConvNet::ConvNet(const ConvArch& arch, int in_channels, std::uint64_t seed)
    : arch_(arch), in_channels_(in_channels) {
    int ch = in_channels;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto& spec = arch.layers[i];
        Layer l;
        l.spec = spec;
        l.in_channels = ch;
        const std::size_t nw =
            static_cast<std::size_t>(spec.kernel) * spec.kernel * ch * spec.out_channels;
        l.weights.resize(nw);
        l.bias.assign(spec.out_channels, 0.0);
        std::mt19937_64 rng(derive_seed(seed, i));
        const double scale = std::sqrt(2.0 / (static_cast<double>(spec.kernel) * spec.kernel * ch));
        std::normal_distribution<double> dist(0.0, scale);
        for (auto& w : l.weights) w = dist(rng);
        layers_.push_back(std::move(l));
        ch = spec.out_channels;
    }
}

int ConvNet::out_channels() const {
    return layers_.empty() ? in_channels_ : layers_.back().spec.out_channels;
}

int ConvNet::scale_factor() const {
    int f = 1;
    for (const auto& l : layers_)
        if (l.spec.op == ConvLayerSpec::Op::deconv) f *= l.spec.stride;
    return f;
}

int ConvNet::receptive_radius() const {
    // Conservative: ignores the shrink deconv upsampling applies to
    // later layers' reach, so it only overestimates.
    int r = 0;
    for (const auto& l : layers_) r += l.spec.kernel;
    return r;
}

DImage ConvNet::forward_layer(const Layer& l, const DImage& in) const {
    const int k = l.spec.kernel;
    if (l.spec.op == ConvLayerSpec::Op::conv) {
        const int r = k / 2;
        const int w = in.width, h = in.height;
        DImage out = DImage::make(l.spec.out_channels, w, h);
#pragma omp parallel for schedule(static)
        for (int oc = 0; oc < l.spec.out_channels; ++oc) {
            auto& dst = out.planes[oc];
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    double z = l.bias[oc];
                    for (int ic = 0; ic < l.in_channels; ++ic) {
                        const auto& src = in.planes[ic];
                        const double* wk =
                            l.weights.data() +
                            (static_cast<std::size_t>(oc) * l.in_channels + ic) * k * k;
                        for (int ky = 0; ky < k; ++ky) {
                            const int sy = y + ky - r;
                            if (sy < 0 || sy >= h) continue;
                            for (int kx = 0; kx < k; ++kx) {
                                const int sx = x + kx - r;
                                if (sx < 0 || sx >= w) continue;
                                z += wk[ky * k + kx] * src[static_cast<std::size_t>(sy) * w + sx];
                            }
                        }
                    }
                    dst[static_cast<std::size_t>(y) * w + x] = activate(z, l.spec.activation);
                }
        }
        return out;
    }
    // deconv, kernel == stride: each input pixel fills one k x k block
    const int s = l.spec.stride;
    const int ow = in.width * s, oh = in.height * s;
    DImage out = DImage::make(l.spec.out_channels, ow, oh);
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < l.spec.out_channels; ++oc) {
        auto& dst = out.planes[oc];
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double z = l.bias[oc];
                const int iy = oy / s, ix = ox / s;
                const int ky = oy % s, kx = ox % s;
                for (int ic = 0; ic < l.in_channels; ++ic)
                    z += l.weights[(static_cast<std::size_t>(oc) * l.in_channels + ic) * k * k +
                                   ky * k + kx] *
                         in.planes[ic][static_cast<std::size_t>(iy) * in.width + ix];
                dst[static_cast<std::size_t>(oy) * ow + ox] = activate(z, l.spec.activation);
            }
    }
    return out;
}

DImage ConvNet::forward(const DImage& in) const {
    if (in.channels != in_channels_)
        raise(ErrorCode::invalid_argument, "input channel count mismatch");
    DImage cur = in;
    for (const auto& l : layers_) cur = forward_layer(l, cur);
    return cur;
}

std::size_t ConvNet::param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
    return n;
}

std::vector<double> ConvNet::flatten_params() const {
    std::vector<double> flat;
    flat.reserve(param_count());
    for (const auto& l : layers_) {
        flat.insert(flat.end(), l.weights.begin(), l.weights.end());
        flat.insert(flat.end(), l.bias.begin(), l.bias.end());
    }
    return flat;
}

void ConvNet::set_params(const std::vector<double>& flat) {
    if (flat.size() != param_count())
        raise(ErrorCode::invalid_argument, "parameter vector size mismatch");
    std::size_t off = 0;
    for (auto& l : layers_) {
        std::copy(flat.begin() + off, flat.begin() + off + l.weights.size(), l.weights.begin());
        off += l.weights.size();
        std::copy(flat.begin() + off, flat.begin() + off + l.bias.size(), l.bias.begin());
        off += l.bias.size();
    }
}

void ConvNet::apply_gradient_step(const std::vector<double>& grad, double lr) {
    std::size_t off = 0;
    for (auto& l : layers_) {
        for (auto& w : l.weights) w -= lr * grad[off++];
        for (auto& b : l.bias) b -= lr * grad[off++];
    }
}

double ConvNet::loss_and_gradient(const DImage& in, const DImage& target,
                                  std::vector<double>& grad) const {
    // forward, caching pre-activations
    std::vector<DImage> acts;     // post-activation per layer boundary; acts[0] = input
    std::vector<DImage> preacts;  // z per layer
    acts.push_back(in);
    for (const auto& l : layers_) {
        // recompute z and a for this layer (forward_layer applies the
        // activation; reproduce it here to keep z)
        const DImage& a_prev = acts.back();
        Layer linear_layer = l;
        linear_layer.spec.activation = ConvLayerSpec::Act::linear;
        DImage z = forward_layer(linear_layer, a_prev);
        DImage a = z;
        for (int c = 0; c < a.channels; ++c)
            for (auto& v : a.planes[c]) v = activate(v, l.spec.activation);
        preacts.push_back(std::move(z));
        acts.push_back(std::move(a));
    }

    const DImage& out = acts.back();
    if (out.channels != target.channels || out.width != target.width ||
        out.height != target.height)
        raise(ErrorCode::invalid_argument, "target dims do not match network output");

    const double n_cells =
        static_cast<double>(out.channels) * out.width * out.height;
    double loss = 0.0;
    DImage d_act = DImage::make(out.channels, out.width, out.height);
    for (int c = 0; c < out.channels; ++c)
        for (std::size_t i = 0; i < out.planes[c].size(); ++i) {
            const double diff = out.planes[c][i] - target.planes[c][i];
            loss += diff * diff;
            d_act.planes[c][i] = 2.0 * diff / n_cells;
        }
    loss /= n_cells;

    if (grad.size() != param_count()) grad.assign(param_count(), 0.0);

    // backward
    std::size_t grad_off = param_count();
    for (int li = static_cast<int>(layers_.size()) - 1; li >= 0; --li) {
        const Layer& l = layers_[li];
        const DImage& z = preacts[li];
        const DImage& a_prev = acts[li];
        const int k = l.spec.kernel;

        // dZ = dA * act'(z)
        DImage d_z = d_act;
        for (int c = 0; c < d_z.channels; ++c)
            for (std::size_t i = 0; i < d_z.planes[c].size(); ++i)
                d_z.planes[c][i] *= activate_grad(z.planes[c][i], l.spec.activation);

        grad_off -= l.weights.size() + l.bias.size();
        double* d_w = grad.data() + grad_off;
        double* d_b = grad.data() + grad_off + l.weights.size();

        DImage d_prev = DImage::make(a_prev.channels, a_prev.width, a_prev.height);

        if (l.spec.op == ConvLayerSpec::Op::conv) {
            const int r = k / 2;
            const int w = a_prev.width, h = a_prev.height;
#pragma omp parallel for schedule(static)
            for (int oc = 0; oc < l.spec.out_channels; ++oc) {
                const auto& dz = d_z.planes[oc];
                double bsum = 0;
                for (double v : dz) bsum += v;
                d_b[oc] += bsum;
                for (int ic = 0; ic < l.in_channels; ++ic) {
                    double* wk = d_w + (static_cast<std::size_t>(oc) * l.in_channels + ic) * k * k;
                    const auto& ap = a_prev.planes[ic];
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            double s = 0;
                            for (int y = 0; y < h; ++y) {
                                const int sy = y + ky - r;
                                if (sy < 0 || sy >= h) continue;
                                for (int x = 0; x < w; ++x) {
                                    const int sx = x + kx - r;
                                    if (sx < 0 || sx >= w) continue;
                                    s += dz[static_cast<std::size_t>(y) * w + x] *
                                         ap[static_cast<std::size_t>(sy) * w + sx];
                                }
                            }
                            wk[ky * k + kx] += s;
                        }
                }
            }
#pragma omp parallel for schedule(static)
            for (int ic = 0; ic < l.in_channels; ++ic) {
                auto& dp = d_prev.planes[ic];
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        double s = 0;
                        for (int oc = 0; oc < l.spec.out_channels; ++oc) {
                            const double* wk =
                                l.weights.data() +
                                (static_cast<std::size_t>(oc) * l.in_channels + ic) * k * k;
                            const auto& dz = d_z.planes[oc];
                            for (int ky = 0; ky < k; ++ky) {
                                const int zy = y - ky + r;
                                if (zy < 0 || zy >= h) continue;
                                for (int kx = 0; kx < k; ++kx) {
                                    const int zx = x - kx + r;
                                    if (zx < 0 || zx >= w) continue;
                                    s += wk[ky * k + kx] *
                                         dz[static_cast<std::size_t>(zy) * w + zx];
                                }
                            }
                        }
                        dp[static_cast<std::size_t>(y) * w + x] = s;
                    }
            }
        } else {  // deconv, kernel == stride
            const int s = l.spec.stride;
            const int iw = a_prev.width, ih = a_prev.height;
            const int ow = iw * s;
#pragma omp parallel for schedule(static)
            for (int oc = 0; oc < l.spec.out_channels; ++oc) {
                const auto& dz = d_z.planes[oc];
                double bsum = 0;
                for (double v : dz) bsum += v;
                d_b[oc] += bsum;
                for (int ic = 0; ic < l.in_channels; ++ic) {
                    double* wk = d_w + (static_cast<std::size_t>(oc) * l.in_channels + ic) * k * k;
                    const auto& ap = a_prev.planes[ic];
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            double acc = 0;
                            for (int y = 0; y < ih; ++y)
                                for (int x = 0; x < iw; ++x)
                                    acc += dz[static_cast<std::size_t>(y * s + ky) * ow + x * s + kx] *
                                           ap[static_cast<std::size_t>(y) * iw + x];
                            wk[ky * k + kx] += acc;
                        }
                }
            }
#pragma omp parallel for schedule(static)
            for (int ic = 0; ic < l.in_channels; ++ic) {
                auto& dp = d_prev.planes[ic];
                for (int y = 0; y < ih; ++y)
                    for (int x = 0; x < iw; ++x) {
                        double acc = 0;
                        for (int oc = 0; oc < l.spec.out_channels; ++oc) {
                            const auto& dz = d_z.planes[oc];
                            const double* wk =
                                l.weights.data() +
                                (static_cast<std::size_t>(oc) * l.in_channels + ic) * k * k;
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx)
                                    acc += wk[ky * k + kx] *
                                           dz[static_cast<std::size_t>(y * s + ky) * ow + x * s + kx];
                        }
                        dp[static_cast<std::size_t>(y) * iw + x] = acc;
                    }
            }
        }
        d_act = std::move(d_prev);
    }
    return loss;
}

}  // namespace agrisr
