#pragma once

// Small convolution/deconvolution network trained by mini-batch SGD on
// mean-squared error. Double precision throughout; forward/backward are
// exact counterparts (checked against central finite differences in the
// tests). Deterministic given the seed.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace agrisr {

struct ConvLayerSpec {
    enum class Op { conv, deconv };
    enum class Act { linear, relu, tanh };

    Op op = Op::conv;
    int out_channels = 1;
    int kernel = 3;  // conv: odd, "same" zero padding; deconv: kernel == stride
    int stride = 1;  // deconv upsampling factor; conv is stride 1
    Act activation = Act::relu;

    long long param_count(int in_channels) const {
        return static_cast<long long>(kernel) * kernel * in_channels * out_channels +
               out_channels;
    }
};

struct ConvArch {
    std::vector<ConvLayerSpec> layers;

    static ConvArch from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

// Planar CHW image in doubles.
struct DImage {
    int channels = 0, width = 0, height = 0;
    std::vector<std::vector<double>> planes;

    static DImage make(int channels, int width, int height, double fill = 0.0) {
        DImage im;
        im.channels = channels;
        im.width = width;
        im.height = height;
        im.planes.assign(channels, std::vector<double>(static_cast<std::size_t>(width) * height, fill));
        return im;
    }
};

class ConvNet {
public:
    // Envelope: depth <= 10 layers, <= 300k parameters per layer, deconv
    // strides multiply to scale_factor, last layer emits target_channels.
    static void validate_arch(const ConvArch& arch, int in_channels, int target_channels,
                              int scale_factor);

    ConvNet() = default;
    ConvNet(const ConvArch& arch, int in_channels, std::uint64_t seed);

    const ConvArch& arch() const { return arch_; }
    int in_channels() const { return in_channels_; }
    int out_channels() const;
    int scale_factor() const;
    // Radius (in input pixels) of the receptive field; conservative.
    int receptive_radius() const;

    DImage forward(const DImage& in) const;

    // MSE between forward(in) and target plus the gradient w.r.t. every
    // parameter, appended onto grad (which must be zeroed/sized by the
    // caller via param_count()).
    double loss_and_gradient(const DImage& in, const DImage& target,
                             std::vector<double>& grad) const;

    std::size_t param_count() const;
    std::vector<double> flatten_params() const;
    void set_params(const std::vector<double>& flat);
    void apply_gradient_step(const std::vector<double>& grad, double lr);

private:
    struct Layer {
        ConvLayerSpec spec;
        int in_channels = 0;
        std::vector<double> weights;  // [out][in][ky][kx]
        std::vector<double> bias;     // [out]
    };

    DImage forward_layer(const Layer& l, const DImage& in) const;

    ConvArch arch_;
    int in_channels_ = 0;
    std::vector<Layer> layers_;
};

}  // namespace agrisr
