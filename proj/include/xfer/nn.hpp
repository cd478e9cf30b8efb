#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "xfer/rng.hpp"
#include "xfer/tensor.hpp"

namespace xfer::nn {

/// One stage of a sequential network. forward() caches whatever backward()
/// needs, so a Layer instance is single-caller at a time.
class Layer {
public:
    virtual ~Layer() = default;
    virtual std::string kind() const = 0;
    virtual Tensor forward(const Tensor& in) = 0;
    /// grad w.r.t. this layer's input; optionally accumulates parameter grads.
    virtual Tensor backward(const Tensor& grad_out, bool accumulate_param_grads) = 0;
    virtual std::vector<Tensor*> params() { return {}; }
    virtual std::vector<Tensor*> param_grads() { return {}; }
    virtual std::unique_ptr<Layer> clone() const = 0;
    virtual std::vector<int> output_shape(const std::vector<int>& in_shape) const = 0;
};

/// Fixed per-channel (x - mean) / std, applied to raw [0,1] pixels.
class Normalize final : public Layer {
public:
    Normalize(std::vector<double> mean, std::vector<double> std);
    std::string kind() const override { return "normalize"; }
    Tensor forward(const Tensor& in) override;
    Tensor backward(const Tensor& grad_out, bool) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Normalize>(*this); }
    std::vector<int> output_shape(const std::vector<int>& s) const override { return s; }

private:
    std::vector<double> mean_, std_;
};

class Conv2d final : public Layer {
public:
    Conv2d(int in_ch, int out_ch, int ksize, int pad, Rng& rng);
    std::string kind() const override { return "conv2d"; }
    Tensor forward(const Tensor& in) override;
    Tensor backward(const Tensor& grad_out, bool accumulate_param_grads) override;
    std::vector<Tensor*> params() override { return {&weight_, &bias_}; }
    std::vector<Tensor*> param_grads() override { return {&grad_weight_, &grad_bias_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
    std::vector<int> output_shape(const std::vector<int>& s) const override;

private:
    int in_ch_, out_ch_, ksize_, pad_;
    Tensor weight_;  // (out_ch, in_ch, k, k)
    Tensor bias_;    // (out_ch)
    Tensor grad_weight_, grad_bias_;
    Tensor cached_in_;
};

class ReLU final : public Layer {
public:
    std::string kind() const override { return "relu"; }
    Tensor forward(const Tensor& in) override;
    Tensor backward(const Tensor& grad_out, bool) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }
    std::vector<int> output_shape(const std::vector<int>& s) const override { return s; }

private:
    Tensor cached_in_;
};

class Tanh final : public Layer {
public:
    std::string kind() const override { return "tanh"; }
    Tensor forward(const Tensor& in) override;
    Tensor backward(const Tensor& grad_out, bool) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Tanh>(*this); }
    std::vector<int> output_shape(const std::vector<int>& s) const override { return s; }

private:
    Tensor cached_out_;
};

/// 2x2, stride 2.
class MaxPool2 final : public Layer {
public:
    std::string kind() const override { return "maxpool2"; }
    Tensor forward(const Tensor& in) override;
    Tensor backward(const Tensor& grad_out, bool) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2>(*this); }
    std::vector<int> output_shape(const std::vector<int>& s) const override;

private:
    std::vector<int> in_shape_;
    std::vector<int> argmax_;
};

/// 2x2, stride 2.
class AvgPool2 final : public Layer {
public:
    std::string kind() const override { return "avgpool2"; }
    Tensor forward(const Tensor& in) override;
    Tensor backward(const Tensor& grad_out, bool) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<AvgPool2>(*this); }
    std::vector<int> output_shape(const std::vector<int>& s) const override;

private:
    std::vector<int> in_shape_;
};

class Flatten final : public Layer {
public:
    std::string kind() const override { return "flatten"; }
    Tensor forward(const Tensor& in) override;
    Tensor backward(const Tensor& grad_out, bool) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(*this); }
    std::vector<int> output_shape(const std::vector<int>& s) const override;

private:
    std::vector<int> in_shape_;
};

class Dense final : public Layer {
public:
    Dense(int in_dim, int out_dim, Rng& rng);
    std::string kind() const override { return "dense"; }
    Tensor forward(const Tensor& in) override;
    Tensor backward(const Tensor& grad_out, bool accumulate_param_grads) override;
    std::vector<Tensor*> params() override { return {&weight_, &bias_}; }
    std::vector<Tensor*> param_grads() override { return {&grad_weight_, &grad_bias_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }
    std::vector<int> output_shape(const std::vector<int>& s) const override;
    const Tensor& weight() const { return weight_; }
    const Tensor& bias() const { return bias_; }

private:
    int in_dim_, out_dim_;
    Tensor weight_;  // (out, in)
    Tensor bias_;    // (out)
    Tensor grad_weight_, grad_bias_;
    Tensor cached_in_;
};

/// Sequential network producing logits. forward() caches per-layer
/// activations so features can be read back and gradients injected at
/// intermediate sites. Not safe for concurrent use; clone() for that.
class Network {
public:
    Network() = default;
    Network(const Network& o);
    Network& operator=(const Network& o);
    Network(Network&&) = default;
    Network& operator=(Network&&) = default;

    void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
    int num_layers() const { return static_cast<int>(layers_.size()); }
    Layer& layer(int i) { return *layers_[static_cast<size_t>(i)]; }
    const Layer& layer(int i) const { return *layers_[static_cast<size_t>(i)]; }

    /// Logits for one input; caches all intermediate activations.
    Tensor forward(const Tensor& in);

    /// Output of layer i from the most recent forward().
    const Tensor& activation(int i) const;

    /// Backpropagate to the input. grad_logits seeds the top; injected maps
    /// layer index -> extra gradient added at that layer's output on the way
    /// down. Parameter grads accumulate only when requested.
    Tensor backward(const Tensor& grad_logits, const std::map<int, Tensor>& injected = {},
                    bool accumulate_param_grads = false);

    std::vector<Tensor*> params();
    std::vector<Tensor*> param_grads();
    void zero_grads();

    std::vector<int> output_shape(const std::vector<int>& in_shape) const;
    std::vector<int> layer_output_shape(int i, const std::vector<int>& in_shape) const;

private:
    std::vector<std::unique_ptr<Layer>> layers_;
    Tensor input_;
    std::vector<Tensor> activations_;
};

/// Numerically stable softmax of a logit vector.
Tensor softmax(const Tensor& logits);

/// Cross-entropy of logits against an integer label; grad is w.r.t. logits.
double cross_entropy(const Tensor& logits, int label, Tensor* grad_logits = nullptr);

/// Binary cross-entropy on a sigmoid pre-activation z against y in {0,1};
/// returns loss, sets dloss/dz.
double sigmoid_bce(double z, double y, double* grad_z);

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Plain SGD with momentum over a set of parameter/gradient tensors.
class SgdOptimizer {
public:
    SgdOptimizer(std::vector<Tensor*> params, std::vector<Tensor*> grads, double lr,
                 double momentum);
    void step();
    void set_lr(double lr) { lr_ = lr; }

private:
    std::vector<Tensor*> params_, grads_;
    std::vector<Tensor> velocity_;
    double lr_, momentum_;
};

}  // namespace xfer::nn
