#include "xfer/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace xfer::nn {

// ---------------------------------------------------------------- Normalize

Normalize::Normalize(std::vector<double> mean, std::vector<double> std)
    : mean_(std::move(mean)), std_(std::move(std)) {
    if (mean_.size() != std_.size()) throw std::invalid_argument("Normalize: mean/std mismatch");
    for (double s : std_)
        if (s <= 0.0) throw std::invalid_argument("Normalize: std must be positive");
}

Tensor Normalize::forward(const Tensor& in) {
    if (in.shape.size() != 3 || in.shape[0] != static_cast<int>(mean_.size()))
        throw std::invalid_argument("Normalize: expected CHW input with " +
                                    std::to_string(mean_.size()) + " channels, got " +
                                    in.shape_str());
    Tensor out = in;
    const int hw = in.shape[1] * in.shape[2];
    for (int c = 0; c < in.shape[0]; ++c) {
        const double m = mean_[static_cast<size_t>(c)];
        const double inv = 1.0 / std_[static_cast<size_t>(c)];
        for (int i = 0; i < hw; ++i) out[c * hw + i] = (out[c * hw + i] - m) * inv;
    }
    return out;
}

Tensor Normalize::backward(const Tensor& grad_out, bool) {
    Tensor g = grad_out;
    const int hw = g.shape[1] * g.shape[2];
    for (int c = 0; c < g.shape[0]; ++c) {
        const double inv = 1.0 / std_[static_cast<size_t>(c)];
        for (int i = 0; i < hw; ++i) g[c * hw + i] *= inv;
    }
    return g;
}

// ------------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_ch, int out_ch, int ksize, int pad, Rng& rng)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      ksize_(ksize),
      pad_(pad),
      weight_({out_ch, in_ch, ksize, ksize}),
      bias_({out_ch}),
      grad_weight_({out_ch, in_ch, ksize, ksize}),
      grad_bias_({out_ch}) {
    // He-style init
    const double scale = std::sqrt(2.0 / (in_ch * ksize * ksize));
    for (auto& w : weight_.data) w = rng.normal() * scale;
}

std::vector<int> Conv2d::output_shape(const std::vector<int>& s) const {
    if (s.size() != 3 || s[0] != in_ch_)
        throw std::invalid_argument("Conv2d: bad input shape");
    return {out_ch_, s[1] + 2 * pad_ - ksize_ + 1, s[2] + 2 * pad_ - ksize_ + 1};
}

Tensor Conv2d::forward(const Tensor& in) {
    const auto os = output_shape(in.shape);
    cached_in_ = in;
    Tensor out(os);
    const int H = in.shape[1], W = in.shape[2];
    const int OH = os[1], OW = os[2];
    for (int oc = 0; oc < out_ch_; ++oc) {
        const double b = bias_[oc];
        for (int oh = 0; oh < OH; ++oh) {
            for (int ow = 0; ow < OW; ++ow) {
                double acc = b;
                for (int ic = 0; ic < in_ch_; ++ic) {
                    for (int kh = 0; kh < ksize_; ++kh) {
                        const int ih = oh + kh - pad_;
                        if (ih < 0 || ih >= H) continue;
                        for (int kw = 0; kw < ksize_; ++kw) {
                            const int iw = ow + kw - pad_;
                            if (iw < 0 || iw >= W) continue;
                            acc += weight_[((oc * in_ch_ + ic) * ksize_ + kh) * ksize_ + kw] *
                                   in.at(ic, ih, iw);
                        }
                    }
                }
                out.at(oc, oh, ow) = acc;
            }
        }
    }
    return out;
}

Tensor Conv2d::backward(const Tensor& grad_out, bool accumulate_param_grads) {
    const Tensor& in = cached_in_;
    const int H = in.shape[1], W = in.shape[2];
    const int OH = grad_out.shape[1], OW = grad_out.shape[2];
    Tensor grad_in(in.shape);
    for (int oc = 0; oc < out_ch_; ++oc) {
        for (int oh = 0; oh < OH; ++oh) {
            for (int ow = 0; ow < OW; ++ow) {
                const double g = grad_out.at(oc, oh, ow);
                if (accumulate_param_grads) grad_bias_[oc] += g;
                for (int ic = 0; ic < in_ch_; ++ic) {
                    for (int kh = 0; kh < ksize_; ++kh) {
                        const int ih = oh + kh - pad_;
                        if (ih < 0 || ih >= H) continue;
                        for (int kw = 0; kw < ksize_; ++kw) {
                            const int iw = ow + kw - pad_;
                            if (iw < 0 || iw >= W) continue;
                            const int widx =
                                ((oc * in_ch_ + ic) * ksize_ + kh) * ksize_ + kw;
                            grad_in.at(ic, ih, iw) += weight_[widx] * g;
                            if (accumulate_param_grads)
                                grad_weight_[widx] += in.at(ic, ih, iw) * g;
                        }
                    }
                }
            }
        }
    }
    return grad_in;
}

// --------------------------------------------------------------------- ReLU

Tensor ReLU::forward(const Tensor& in) {
    cached_in_ = in;
    Tensor out = in;
    for (auto& v : out.data) v = std::max(0.0, v);
    return out;
}

Tensor ReLU::backward(const Tensor& grad_out, bool) {
    Tensor g = grad_out;
    for (size_t i = 0; i < g.data.size(); ++i)
        if (cached_in_.data[i] <= 0.0) g.data[i] = 0.0;
    return g;
}

// --------------------------------------------------------------------- Tanh

Tensor Tanh::forward(const Tensor& in) {
    Tensor out = in;
    for (auto& v : out.data) v = std::tanh(v);
    cached_out_ = out;
    return out;
}

Tensor Tanh::backward(const Tensor& grad_out, bool) {
    Tensor g = grad_out;
    for (size_t i = 0; i < g.data.size(); ++i)
        g.data[i] *= 1.0 - cached_out_.data[i] * cached_out_.data[i];
    return g;
}

// ----------------------------------------------------------------- MaxPool2

std::vector<int> MaxPool2::output_shape(const std::vector<int>& s) const {
    if (s.size() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0)
        throw std::invalid_argument("MaxPool2: spatial dims must be even");
    return {s[0], s[1] / 2, s[2] / 2};
}

Tensor MaxPool2::forward(const Tensor& in) {
    const auto os = output_shape(in.shape);
    in_shape_ = in.shape;
    Tensor out(os);
    argmax_.assign(out.data.size(), 0);
    const int C = os[0], OH = os[1], OW = os[2];
    for (int c = 0; c < C; ++c) {
        for (int oh = 0; oh < OH; ++oh) {
            for (int ow = 0; ow < OW; ++ow) {
                int best = -1;
                double bestv = -1e300;
                for (int dh = 0; dh < 2; ++dh) {
                    for (int dw = 0; dw < 2; ++dw) {
                        const int ih = 2 * oh + dh, iw = 2 * ow + dw;
                        const int idx = (c * in_shape_[1] + ih) * in_shape_[2] + iw;
                        if (in[idx] > bestv) {
                            bestv = in[idx];
                            best = idx;
                        }
                    }
                }
                const int oidx = (c * OH + oh) * OW + ow;
                out[oidx] = bestv;
                argmax_[static_cast<size_t>(oidx)] = best;
            }
        }
    }
    return out;
}

Tensor MaxPool2::backward(const Tensor& grad_out, bool) {
    Tensor grad_in(in_shape_);
    for (int i = 0; i < grad_out.size(); ++i)
        grad_in[argmax_[static_cast<size_t>(i)]] += grad_out[i];
    return grad_in;
}

// ----------------------------------------------------------------- AvgPool2

std::vector<int> AvgPool2::output_shape(const std::vector<int>& s) const {
    if (s.size() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0)
        throw std::invalid_argument("AvgPool2: spatial dims must be even");
    return {s[0], s[1] / 2, s[2] / 2};
}

Tensor AvgPool2::forward(const Tensor& in) {
    const auto os = output_shape(in.shape);
    in_shape_ = in.shape;
    Tensor out(os);
    const int C = os[0], OH = os[1], OW = os[2];
    for (int c = 0; c < C; ++c)
        for (int oh = 0; oh < OH; ++oh)
            for (int ow = 0; ow < OW; ++ow) {
                double s = 0.0;
                for (int dh = 0; dh < 2; ++dh)
                    for (int dw = 0; dw < 2; ++dw) s += in.at(c, 2 * oh + dh, 2 * ow + dw);
                out.at(c, oh, ow) = 0.25 * s;
            }
    return out;
}

Tensor AvgPool2::backward(const Tensor& grad_out, bool) {
    Tensor grad_in(in_shape_);
    const int C = grad_out.shape[0], OH = grad_out.shape[1], OW = grad_out.shape[2];
    for (int c = 0; c < C; ++c)
        for (int oh = 0; oh < OH; ++oh)
            for (int ow = 0; ow < OW; ++ow) {
                const double g = 0.25 * grad_out.at(c, oh, ow);
                for (int dh = 0; dh < 2; ++dh)
                    for (int dw = 0; dw < 2; ++dw) grad_in.at(c, 2 * oh + dh, 2 * ow + dw) += g;
            }
    return grad_in;
}

// ------------------------------------------------------------------ Flatten

std::vector<int> Flatten::output_shape(const std::vector<int>& s) const {
    return {Tensor::count(s)};
}

Tensor Flatten::forward(const Tensor& in) {
    in_shape_ = in.shape;
    return Tensor({in.size()}, in.data);
}

Tensor Flatten::backward(const Tensor& grad_out, bool) {
    return Tensor(in_shape_, grad_out.data);
}

// -------------------------------------------------------------------- Dense

Dense::Dense(int in_dim, int out_dim, Rng& rng)
    : in_dim_(in_dim),
      out_dim_(out_dim),
      weight_({out_dim, in_dim}),
      bias_({out_dim}),
      grad_weight_({out_dim, in_dim}),
      grad_bias_({out_dim}) {
    const double scale = std::sqrt(2.0 / in_dim);
    for (auto& w : weight_.data) w = rng.normal() * scale;
}

std::vector<int> Dense::output_shape(const std::vector<int>& s) const {
    if (s.size() != 1 || s[0] != in_dim_)
        throw std::invalid_argument("Dense: expected flat input of dim " +
                                    std::to_string(in_dim_));
    return {out_dim_};
}

Tensor Dense::forward(const Tensor& in) {
    if (in.size() != in_dim_) throw std::invalid_argument("Dense: bad input size");
    cached_in_ = in;
    Tensor out({out_dim_});
    for (int o = 0; o < out_dim_; ++o) {
        double acc = bias_[o];
        const double* wrow = &weight_.data[static_cast<size_t>(o * in_dim_)];
        for (int i = 0; i < in_dim_; ++i) acc += wrow[i] * in[i];
        out[o] = acc;
    }
    return out;
}

Tensor Dense::backward(const Tensor& grad_out, bool accumulate_param_grads) {
    Tensor grad_in({in_dim_});
    for (int o = 0; o < out_dim_; ++o) {
        const double g = grad_out[o];
        const double* wrow = &weight_.data[static_cast<size_t>(o * in_dim_)];
        for (int i = 0; i < in_dim_; ++i) grad_in[i] += wrow[i] * g;
        if (accumulate_param_grads) {
            grad_bias_[o] += g;
            double* gw = &grad_weight_.data[static_cast<size_t>(o * in_dim_)];
            for (int i = 0; i < in_dim_; ++i) gw[i] += cached_in_[i] * g;
        }
    }
    return grad_in;
}

// ------------------------------------------------------------------ Network

Network::Network(const Network& o) {
    layers_.reserve(o.layers_.size());
    for (const auto& l : o.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& o) {
    if (this != &o) {
        layers_.clear();
        for (const auto& l : o.layers_) layers_.push_back(l->clone());
        activations_.clear();
    }
    return *this;
}

Tensor Network::forward(const Tensor& in) {
    input_ = in;
    activations_.clear();
    activations_.reserve(layers_.size());
    Tensor x = in;
    for (auto& l : layers_) {
        x = l->forward(x);
        activations_.push_back(x);
    }
    return x;
}

const Tensor& Network::activation(int i) const {
    if (i < 0 || i >= static_cast<int>(activations_.size()))
        throw std::out_of_range("Network::activation: no cached activation at layer " +
                                std::to_string(i));
    return activations_[static_cast<size_t>(i)];
}

Tensor Network::backward(const Tensor& grad_logits, const std::map<int, Tensor>& injected,
                         bool accumulate_param_grads) {
    if (activations_.empty()) throw std::logic_error("Network::backward before forward");
    Tensor g = grad_logits;
    for (int i = num_layers() - 1; i >= 0; --i) {
        auto it = injected.find(i);
        if (it != injected.end()) {
            if (i == num_layers() - 1 && g.size() == 0) g = it->second;
            else g += it->second;
        }
        g = layers_[static_cast<size_t>(i)]->backward(g, accumulate_param_grads);
    }
    return g;
}

std::vector<Tensor*> Network::params() {
    std::vector<Tensor*> out;
    for (auto& l : layers_)
        for (auto* p : l->params()) out.push_back(p);
    return out;
}

std::vector<Tensor*> Network::param_grads() {
    std::vector<Tensor*> out;
    for (auto& l : layers_)
        for (auto* p : l->param_grads()) out.push_back(p);
    return out;
}

void Network::zero_grads() {
    for (auto* g : param_grads()) g->fill(0.0);
}

std::vector<int> Network::output_shape(const std::vector<int>& in_shape) const {
    std::vector<int> s = in_shape;
    for (const auto& l : layers_) s = l->output_shape(s);
    return s;
}

std::vector<int> Network::layer_output_shape(int i, const std::vector<int>& in_shape) const {
    std::vector<int> s = in_shape;
    for (int j = 0; j <= i; ++j) s = layers_[static_cast<size_t>(j)]->output_shape(s);
    return s;
}

// ------------------------------------------------------------------- losses

Tensor softmax(const Tensor& logits) {
    Tensor p = logits;
    double m = -1e300;
    for (double v : p.data) m = std::max(m, v);
    double z = 0.0;
    for (auto& v : p.data) {
        v = std::exp(v - m);
        z += v;
    }
    for (auto& v : p.data) v /= z;
    return p;
}

double cross_entropy(const Tensor& logits, int label, Tensor* grad_logits) {
    if (label < 0 || label >= logits.size())
        throw std::invalid_argument("cross_entropy: label out of range");
    double m = -1e300;
    for (double v : logits.data) m = std::max(m, v);
    double z = 0.0;
    for (double v : logits.data) z += std::exp(v - m);
    const double logz = std::log(z) + m;
    const double loss = logz - logits[label];
    if (grad_logits) {
        *grad_logits = logits;
        for (int i = 0; i < logits.size(); ++i)
            (*grad_logits)[i] = std::exp(logits[i] - logz);
        (*grad_logits)[label] -= 1.0;
    }
    return loss;
}

double sigmoid_bce(double z, double y, double* grad_z) {
    // log(1+e^z) - y*z, stable for both signs of z
    const double loss = std::max(z, 0.0) + std::log1p(std::exp(-std::fabs(z))) - y * z;
    if (grad_z) *grad_z = sigmoid(z) - y;
    return loss;
}

// ---------------------------------------------------------------- optimizer

SgdOptimizer::SgdOptimizer(std::vector<Tensor*> params, std::vector<Tensor*> grads, double lr,
                           double momentum)
    : params_(std::move(params)), grads_(std::move(grads)), lr_(lr), momentum_(momentum) {
    if (params_.size() != grads_.size())
        throw std::invalid_argument("SgdOptimizer: params/grads mismatch");
    velocity_.reserve(params_.size());
    for (auto* p : params_) velocity_.emplace_back(p->shape);
}

void SgdOptimizer::step() {
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& v = velocity_[i];
        Tensor& p = *params_[i];
        const Tensor& g = *grads_[i];
        for (size_t k = 0; k < p.data.size(); ++k) {
            v.data[k] = momentum_ * v.data[k] + g.data[k];
            p.data[k] -= lr_ * v.data[k];
        }
    }
}

}  // namespace xfer::nn
