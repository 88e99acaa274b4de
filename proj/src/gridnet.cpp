#include "ucmt/gridnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ucmt/errors.hpp"
#include "ucmt/parallel.hpp"
#include "ucmt/rng.hpp"
#include "ucmt/simd/conv_kernels.hpp"

namespace ucmt::gridnet {
namespace {

constexpr char kMagic[8] = {'U', 'C', 'M', 'T', 'N', 'E', 'T', '1'};

simd::ConvGeometry geometry(const LayerSpec& spec, std::size_t layer, std::size_t h, std::size_t w) {
    return {spec.channels[layer], spec.channels[layer + 1], spec.kernels[layer], h, w};
}

// Zero-pads `channels` planes of h x w by `pad` on each side into `out`.
void pad_planes(const double* src, std::size_t channels, std::size_t h, std::size_t w, std::size_t pad,
                std::vector<double>& out) {
    const std::size_t wp = w + 2 * pad;
    const std::size_t hp = h + 2 * pad;
    out.resize(channels * hp * wp);
    double* dst = out.data();
    for (std::size_t c = 0; c < channels; ++c) {
        std::fill(dst, dst + pad * wp, 0.0);
        dst += pad * wp;
        for (std::size_t y = 0; y < h; ++y) {
            const double* s = src + (c * h + y) * w;
            std::fill(dst, dst + pad, 0.0);
            std::copy(s, s + w, dst + pad);
            std::fill(dst + pad + w, dst + wp, 0.0);
            dst += wp;
        }
        std::fill(dst, dst + pad * wp, 0.0);
        dst += pad * wp;
    }
}

void leaky_inplace(std::vector<double>& v) {
    for (double& x : v) x = x > 0.0 ? x : kLeakySlope * x;
}

void check_batch(const NetParams& params, const Tensor& batch) {
    if (batch.rank() != 4 || batch.dim(1) != params.spec.in_channels()) {
        throw ShapeError("network input must be [B," + std::to_string(params.spec.in_channels()) +
                         ",H,W], got " + shape_string(batch.shape()));
    }
}

// Runs the layer chain for one image. With `keep` set, every layer input is
// moved into it; otherwise two scratch buffers are ping-ponged.
std::vector<double> forward_sample(const NetParams& params, std::span<const double> image, std::size_t h,
                                   std::size_t w, std::vector<std::vector<double>>* keep) {
    const auto& kernels = simd::active_kernels();
    const LayerSpec& spec = params.spec;
    // Scratch reused across calls; large fresh allocations are page-fault bound.
    thread_local std::vector<double> padded;
    thread_local std::vector<double> prev;
    thread_local std::vector<double> next;
    prev.resize(image.size());
    for (std::size_t i = 0; i < image.size(); ++i) prev[i] = image[i] - kInputCenter;
    for (std::size_t l = 0; l < spec.layers(); ++l) {
        const auto g = geometry(spec, l, h, w);
        pad_planes(prev.data(), g.in_channels, h, w, g.kernel / 2, padded);
        next.resize(g.out_channels * h * w);
        kernels.conv_forward(g, padded.data(), params.weight(l).data(), params.bias(l).data(), next.data());
        if (l + 1 < spec.layers()) leaky_inplace(next);
        if (keep != nullptr) keep->emplace_back(prev.begin(), prev.end());
        prev.swap(next);
    }
    return std::vector<double>(prev.begin(), prev.end());
}

// Weight l rearranged to [in, out, k, k] with both spatial axes reversed,
// so the input gradient is an ordinary forward convolution of grad_out.
std::vector<Tensor> flipped_weights(const NetParams& params) {
    std::vector<Tensor> out;
    for (std::size_t l = 0; l < params.spec.layers(); ++l) {
        const Tensor& wt = params.weight(l);
        const std::size_t co_n = wt.dim(0), ci_n = wt.dim(1), k = wt.dim(2);
        Tensor f({ci_n, co_n, k, k});
        for (std::size_t co = 0; co < co_n; ++co)
            for (std::size_t ci = 0; ci < ci_n; ++ci)
                for (std::size_t ky = 0; ky < k; ++ky)
                    for (std::size_t kx = 0; kx < k; ++kx)
                        f.at(ci, co, k - 1 - ky, k - 1 - kx) = wt.at(co, ci, ky, kx);
        out.push_back(std::move(f));
    }
    return out;
}

void backward_sample(const NetParams& params, const std::vector<Tensor>& flipped,
                     const std::vector<std::vector<double>>& acts, std::span<const double> grad_logits,
                     std::size_t h, std::size_t w, NetGrads& grads) {
    const auto& kernels = simd::active_kernels();
    const LayerSpec& spec = params.spec;
    thread_local std::vector<double> padded;
    thread_local std::vector<double> grad;
    thread_local std::vector<double> grad_in;
    grad.assign(grad_logits.begin(), grad_logits.end());
    for (std::size_t li = spec.layers(); li-- > 0;) {
        const auto g = geometry(spec, li, h, w);
        const std::size_t pad = g.kernel / 2;
        pad_planes(acts[li].data(), g.in_channels, h, w, pad, padded);
        kernels.conv_weight_grad(g, padded.data(), grad.data(), grads.weight(li).data(), grads.bias(li).data());
        if (li == 0) break;
        pad_planes(grad.data(), g.out_channels, h, w, pad, padded);
        const simd::ConvGeometry back{g.out_channels, g.in_channels, g.kernel, h, w};
        grad_in.resize(g.in_channels * h * w);
        kernels.conv_forward(back, padded.data(), flipped[li].data(), nullptr, grad_in.data());
        const auto& act = acts[li];
        for (std::size_t i = 0; i < grad_in.size(); ++i) {
            if (!(act[i] > 0.0)) grad_in[i] *= kLeakySlope;
        }
        grad.swap(grad_in);
    }
}

template <typename Op>
void zip_tensors(NetParams& target, const NetParams& source, Op op) {
    for (std::size_t t = 0; t < target.tensors.size(); ++t) {
        auto dst = target.tensors[t].values();
        auto src = source.tensors[t].values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = op(dst[i], src[i]);
    }
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
    std::uint64_t v = 0;
    static_assert(sizeof v == sizeof d);
    std::memcpy(&v, &d, sizeof v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class ByteReader {
public:
    ByteReader(const std::vector<std::uint8_t>& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw IoError(origin_ + ": truncated parameter checkpoint");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
        double d = 0.0;
        std::memcpy(&d, &v, sizeof d);
        return d;
    }
    bool magic_ok() {
        need(sizeof kMagic);
        const bool ok = std::equal(std::begin(kMagic), std::end(kMagic), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_));
        pos_ += sizeof kMagic;
        return ok;
    }
    [[nodiscard]] bool at_end() const { return pos_ == bytes_.size(); }
    [[nodiscard]] const std::string& origin() const { return origin_; }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

}  // namespace

LayerSpec LayerSpec::uniform(std::vector<std::size_t> channels, std::size_t kernel) {
    LayerSpec spec;
    spec.kernels.assign(channels.empty() ? 0 : channels.size() - 1, kernel);
    spec.channels = std::move(channels);
    return spec;
}

std::size_t LayerSpec::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < layers(); ++l) {
        n += channels[l + 1] * channels[l] * kernels[l] * kernels[l] + channels[l + 1];
    }
    return n;
}

void LayerSpec::validate() const {
    if (kernels.empty() || channels.size() != kernels.size() + 1) {
        throw ConfigError("layer spec needs at least one conv layer and channels = layers + 1");
    }
    for (std::size_t c : channels) {
        if (c == 0) throw ConfigError("layer spec has a zero channel count");
    }
    for (std::size_t k : kernels) {
        if (k == 0 || k % 2 == 0) throw ConfigError("kernel sizes must be odd for same padding, got " + std::to_string(k));
    }
}

LayerSpec default_spec(std::size_t in_channels, std::size_t classes) {
    return LayerSpec::uniform({in_channels, 8, 8, 8, classes}, 3);
}

NetParams NetParams::zeros(const LayerSpec& spec) {
    spec.validate();
    NetParams p;
    p.spec = spec;
    for (std::size_t l = 0; l < spec.layers(); ++l) {
        const std::size_t k = spec.kernels[l];
        p.tensors.emplace_back(Shape{spec.channels[l + 1], spec.channels[l], k, k});
        p.tensors.emplace_back(Shape{spec.channels[l + 1]});
    }
    return p;
}

std::size_t NetParams::value_count() const noexcept {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

NetParams init_params(const LayerSpec& spec, std::uint64_t seed) {
    NetParams p = NetParams::zeros(spec);
    p.init_seed = seed;
    const CounterRng root(seed);
    for (std::size_t l = 0; l < spec.layers(); ++l) {
        const double fan_in = static_cast<double>(spec.channels[l] * spec.kernels[l] * spec.kernels[l]);
        const double bound = std::sqrt(6.0 / fan_in);
        CounterRng rng = root.substream(l);
        for (double& v : p.weight(l).values()) v = rng.uniform(-bound, bound);
    }
    return p;
}

Tensor forward(const NetParams& params, const Tensor& batch) {
    check_batch(params, batch);
    const std::size_t b_n = batch.dim(0), h = batch.dim(2), w = batch.dim(3);
    Tensor out({b_n, params.spec.classes(), h, w});
    parallel_for(b_n, [&](std::size_t b) {
        auto logits = forward_sample(params, batch.item(b), h, w, nullptr);
        std::copy(logits.begin(), logits.end(), out.item(b).begin());
    });
    return out;
}

ForwardTrace forward_trace(const NetParams& params, const Tensor& batch) {
    check_batch(params, batch);
    const std::size_t b_n = batch.dim(0), h = batch.dim(2), w = batch.dim(3);
    ForwardTrace trace;
    trace.logits = Tensor({b_n, params.spec.classes(), h, w});
    trace.activations.resize(b_n);
    trace.height = h;
    trace.width = w;
    parallel_for(b_n, [&](std::size_t b) {
        auto logits = forward_sample(params, batch.item(b), h, w, &trace.activations[b]);
        std::copy(logits.begin(), logits.end(), trace.logits.item(b).begin());
    });
    return trace;
}

NetGrads backward(const NetParams& params, const ForwardTrace& trace, const Tensor& grad_logits) {
    require_same_shape(trace.logits, grad_logits, "backward: grad_logits vs logits");
    const std::size_t b_n = grad_logits.dim(0);
    const auto flipped = flipped_weights(params);
    std::vector<NetGrads> per_sample(b_n, NetParams::zeros(params.spec));
    parallel_for(b_n, [&](std::size_t b) {
        backward_sample(params, flipped, trace.activations[b], grad_logits.item(b), trace.height, trace.width,
                        per_sample[b]);
    });
    NetGrads total = NetParams::zeros(params.spec);
    for (const auto& g : per_sample) zip_tensors(total, g, [](double a, double s) { return a + s; });
    return total;
}

NetGrads backward(const NetParams& params, const Tensor& batch, const Tensor& grad_logits) {
    return backward(params, forward_trace(params, batch), grad_logits);
}

Tensor softmax_channels(const Tensor& logits) {
    if (logits.rank() != 4) throw ShapeError("softmax_channels expects [B,C,H,W], got " + shape_string(logits.shape()));
    const std::size_t b_n = logits.dim(0), c_n = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
    Tensor out(logits.shape());
    for (std::size_t b = 0; b < b_n; ++b) {
        const double* in = logits.data() + b * c_n * plane;
        double* o = out.data() + b * c_n * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            double mx = in[p];
            for (std::size_t c = 1; c < c_n; ++c) mx = std::max(mx, in[c * plane + p]);
            double sum = 0.0;
            for (std::size_t c = 0; c < c_n; ++c) {
                const double e = std::exp(in[c * plane + p] - mx);
                o[c * plane + p] = e;
                sum += e;
            }
            for (std::size_t c = 0; c < c_n; ++c) o[c * plane + p] /= sum;
        }
    }
    return out;
}

Tensor softmax_backward(const Tensor& probs, const Tensor& grad_probs) {
    require_same_shape(probs, grad_probs, "softmax_backward");
    const std::size_t b_n = probs.dim(0), c_n = probs.dim(1), plane = probs.dim(2) * probs.dim(3);
    Tensor out(probs.shape());
    for (std::size_t b = 0; b < b_n; ++b) {
        const double* p = probs.data() + b * c_n * plane;
        const double* g = grad_probs.data() + b * c_n * plane;
        double* o = out.data() + b * c_n * plane;
        for (std::size_t q = 0; q < plane; ++q) {
            double dot = 0.0;
            for (std::size_t c = 0; c < c_n; ++c) dot += p[c * plane + q] * g[c * plane + q];
            for (std::size_t c = 0; c < c_n; ++c) o[c * plane + q] = p[c * plane + q] * (g[c * plane + q] - dot);
        }
    }
    return out;
}

AdamWState AdamWState::fresh(const NetParams& params) {
    AdamWState s;
    for (const auto& t : params.tensors) {
        s.first_moment.emplace_back(t.shape());
        s.second_moment.emplace_back(t.shape());
    }
    return s;
}

void adamw_update(NetParams& params, const NetGrads& grads, AdamWState& state, const AdamWHyper& hyper) {
    if (!(hyper.lr >= 0.0) || hyper.beta1 < 0.0 || hyper.beta1 >= 1.0 || hyper.beta2 < 0.0 || hyper.beta2 >= 1.0) {
        throw ConfigError("AdamW needs lr >= 0 and betas in [0, 1)");
    }
    require_same_spec(params, grads, "adamw_update");
    if (state.first_moment.size() != params.tensors.size()) state = AdamWState::fresh(params);
    for (std::size_t t = 0; t < grads.tensors.size(); ++t) {
        if (!grads.tensors[t].all_finite()) {
            const std::size_t layer = t / 2;
            throw DivergenceError("non-finite gradient in " + std::string(t % 2 == 0 ? "weight" : "bias") +
                                  " of layer " + std::to_string(layer));
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
    for (std::size_t t = 0; t < params.tensors.size(); ++t) {
        auto p = params.tensors[t].values();
        auto g = grads.tensors[t].values();
        auto m = state.first_moment[t].values();
        auto v = state.second_moment[t].values();
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p[i] -= hyper.lr * (m_hat / (std::sqrt(v_hat) + hyper.eps) + hyper.weight_decay * p[i]);
        }
    }
}

void require_same_spec(const NetParams& a, const NetParams& b, const char* what) {
    if (!(a.spec == b.spec) || a.tensors.size() != b.tensors.size()) {
        throw ShapeError(std::string(what) + ": layer specs differ");
    }
}

NetParams combine_params(const NetParams& p1, const NetParams& p2, double beta) {
    require_same_spec(p1, p2, "combine_params");
    NetParams out = p1;
    out.init_seed = 0;
    zip_tensors(out, p2, [beta](double a, double b) { return beta * a + (1.0 - beta) * b; });
    return out;
}

void blend_into(NetParams& target, const NetParams& source, double alpha) {
    require_same_spec(target, source, "blend_into");
    zip_tensors(target, source, [alpha](double a, double b) { return alpha * a + (1.0 - alpha) * b; });
}

std::vector<std::uint8_t> encode_params(const NetParams& params) {
    const LayerSpec& spec = params.spec;
    std::vector<std::int32_t> ints{static_cast<std::int32_t>(spec.layers()),
                                   static_cast<std::int32_t>(spec.in_channels())};
    for (std::size_t l = 0; l < spec.layers(); ++l) {
        ints.push_back(static_cast<std::int32_t>(spec.kernels[l]));
        ints.push_back(static_cast<std::int32_t>(spec.channels[l + 1]));
    }
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_u32(out, static_cast<std::uint32_t>(ints.size()));
    for (std::int32_t v : ints) put_u32(out, static_cast<std::uint32_t>(v));
    for (const auto& t : params.tensors) {
        for (double d : t.values()) put_f64(out, d);
    }
    return out;
}

NetParams decode_params(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
    ByteReader in(bytes, origin);
    if (!in.magic_ok()) throw IoError(origin + ": not a UCMTNET1 checkpoint");
    const std::uint32_t count = in.u32();
    if (count < 2 || count > 4096) throw IoError(origin + ": implausible layer spec length");
    std::vector<std::uint32_t> ints(count);
    for (auto& v : ints) v = in.u32();
    const std::size_t layers = ints[0];
    if (count != 2 + 2 * layers) throw IoError(origin + ": layer spec length does not match layer count");
    LayerSpec spec;
    spec.channels.push_back(ints[1]);
    for (std::size_t l = 0; l < layers; ++l) {
        spec.kernels.push_back(ints[2 + 2 * l]);
        spec.channels.push_back(ints[3 + 2 * l]);
    }
    try {
        spec.validate();
    } catch (const ConfigError& e) {
        throw IoError(origin + ": " + e.what());
    }
    NetParams p = NetParams::zeros(spec);
    for (auto& t : p.tensors) {
        for (double& d : t.values()) d = in.f64();
    }
    if (!in.at_end()) throw IoError(origin + ": trailing bytes after parameters");
    return p;
}

void save_params(const NetParams& params, const std::filesystem::path& path) {
    const auto bytes = encode_params(params);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

NetParams load_params(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_params(bytes, path.string());
}

}  // namespace ucmt::gridnet
