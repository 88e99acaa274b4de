#pragma once

// Small same-padding fully-convolutional segmentation network with explicit
// forward/backward passes and an AdamW optimizer.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ucmt/tensor.hpp"

namespace ucmt::gridnet {

inline constexpr double kLeakySlope = 0.01;
// Subtracted from every input value before the first layer (images live in [0,1]).
// Without it roughly half of init seeds collapse to all-background.
inline constexpr double kInputCenter = 0.5;

// channels = [Cin, c1, ..., C]; kernels[l] is the (odd) kernel size of layer l.
struct LayerSpec {
    std::vector<std::size_t> channels;
    std::vector<std::size_t> kernels;

    static LayerSpec uniform(std::vector<std::size_t> channels, std::size_t kernel = 3);

    [[nodiscard]] std::size_t layers() const noexcept { return kernels.size(); }
    [[nodiscard]] std::size_t in_channels() const { return channels.front(); }
    [[nodiscard]] std::size_t classes() const { return channels.back(); }
    [[nodiscard]] std::size_t parameter_count() const;

    // Throws ConfigError for zero layers, zero channels or even kernels.
    void validate() const;

    bool operator==(const LayerSpec&) const = default;
};

// Cin -> 8 -> 8 -> 8 -> classes, 3x3 kernels.
LayerSpec default_spec(std::size_t in_channels, std::size_t classes);

// Parameter tensors in declaration order: w0, b0, w1, b1, ...
// Weight l has shape [out, in, k, k]; bias l has shape [out].
struct NetParams {
    LayerSpec spec;
    std::vector<Tensor> tensors;
    std::uint64_t init_seed = 0;

    static NetParams zeros(const LayerSpec& spec);

    Tensor& weight(std::size_t layer) { return tensors[2 * layer]; }
    const Tensor& weight(std::size_t layer) const { return tensors[2 * layer]; }
    Tensor& bias(std::size_t layer) { return tensors[2 * layer + 1]; }
    const Tensor& bias(std::size_t layer) const { return tensors[2 * layer + 1]; }

    [[nodiscard]] std::size_t value_count() const noexcept;

    // Values and spec only; init_seed is provenance.
    bool operator==(const NetParams& other) const { return spec == other.spec && tensors == other.tensors; }
};

// Gradients share the parameter layout.
using NetGrads = NetParams;

// Uniform He fan-in initialization, zero biases, deterministic in (spec, seed).
NetParams init_params(const LayerSpec& spec, std::uint64_t seed);

// [B, Cin, H, W] -> logits [B, C, H, W]. Pure.
Tensor forward(const NetParams& params, const Tensor& batch);

// Forward pass that keeps every layer input for a later backward().
struct ForwardTrace {
    Tensor logits;
    // activations[b][l] is the input of layer l for sample b ([C_l, H, W]).
    std::vector<std::vector<std::vector<double>>> activations;
    std::size_t height = 0;
    std::size_t width = 0;
};

ForwardTrace forward_trace(const NetParams& params, const Tensor& batch);

// dL/dparams for upstream dL/dlogits. Per-sample gradients are reduced in
// batch-index order, so the result does not depend on the thread count.
NetGrads backward(const NetParams& params, const ForwardTrace& trace, const Tensor& grad_logits);
NetGrads backward(const NetParams& params, const Tensor& batch, const Tensor& grad_logits);

// Per-pixel softmax over the channel axis with max subtraction.
Tensor softmax_channels(const Tensor& logits);

// Pulls dL/dprobs back through softmax_channels.
Tensor softmax_backward(const Tensor& probs, const Tensor& grad_probs);

struct AdamWHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct AdamWState {
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    std::uint64_t step = 0;

    static AdamWState fresh(const NetParams& params);
};

// Decoupled weight decay Adam step with bias correction, in place.
// Throws DivergenceError naming the first non-finite gradient tensor.
void adamw_update(NetParams& params, const NetGrads& grads, AdamWState& state, const AdamWHyper& hyper);

// beta * p1 + (1 - beta) * p2, elementwise.
NetParams combine_params(const NetParams& p1, const NetParams& p2, double beta);

// target <- alpha * target + (1 - alpha) * source, elementwise.
void blend_into(NetParams& target, const NetParams& source, double alpha);

void require_same_spec(const NetParams& a, const NetParams& b, const char* what);

// Binary checkpoint: "UCMTNET1", u32 count + i32 spec integers
// [layers, Cin, k0, c1, k1, c2, ...], then every tensor as f64, all little-endian.
std::vector<std::uint8_t> encode_params(const NetParams& params);
NetParams decode_params(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");
void save_params(const NetParams& params, const std::filesystem::path& path);
NetParams load_params(const std::filesystem::path& path);

}  // namespace ucmt::gridnet
