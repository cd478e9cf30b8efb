#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "xfer/nn.hpp"

using namespace xfer;

namespace {

nn::Network conv_stack(int channels, int size, int classes, uint64_t seed) {
    Rng rng(seed);
    nn::Network net;
    net.add(std::make_unique<nn::Normalize>(std::vector<double>{0.5},
                                            std::vector<double>{0.25}));
    net.add(std::make_unique<nn::Conv2d>(channels, 4, 3, 1, rng));
    net.add(std::make_unique<nn::ReLU>());
    net.add(std::make_unique<nn::MaxPool2>());
    net.add(std::make_unique<nn::Conv2d>(4, 4, 3, 1, rng));
    net.add(std::make_unique<nn::Tanh>());
    net.add(std::make_unique<nn::AvgPool2>());
    net.add(std::make_unique<nn::Flatten>());
    net.add(std::make_unique<nn::Dense>(4 * (size / 4) * (size / 4), classes, rng));
    return net;
}

double ce_at(nn::Network& net, const Tensor& x, int label) {
    return nn::cross_entropy(net.forward(x), label);
}

}  // namespace

TEST_CASE("softmax: normalization, shift invariance, stability") {
    Tensor z({3});
    z[0] = 1.0;
    z[1] = -2.0;
    z[2] = 0.5;
    auto p = nn::softmax(z);
    double sum = 0.0;
    for (int k = 0; k < 3; ++k) {
        CHECK(p[k] > 0.0);
        sum += p[k];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

    Tensor shifted = z;
    for (int k = 0; k < 3; ++k) shifted[k] += 1000.0;
    auto q = nn::softmax(shifted);
    for (int k = 0; k < 3; ++k) CHECK(q[k] == doctest::Approx(p[k]).epsilon(1e-9));
    CHECK(q.all_finite());
}

TEST_CASE("cross entropy value and gradient") {
    Tensor z({2});
    z[0] = 0.3;
    z[1] = -0.7;
    Tensor g;
    const double loss = nn::cross_entropy(z, 0, &g);
    const double p0 = std::exp(0.3) / (std::exp(0.3) + std::exp(-0.7));
    CHECK(loss == doctest::Approx(-std::log(p0)).epsilon(1e-12));
    // dL/dz = softmax - onehot
    CHECK(g[0] == doctest::Approx(p0 - 1.0).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(1.0 - p0).epsilon(1e-12));

    double gz = 0.0;
    const double bce = nn::sigmoid_bce(0.4, 1.0, &gz);
    CHECK(bce == doctest::Approx(-std::log(nn::sigmoid(0.4))).epsilon(1e-12));
    CHECK(gz == doctest::Approx(nn::sigmoid(0.4) - 1.0).epsilon(1e-12));
}

TEST_CASE("input gradient through a mixed stack matches finite differences") {
    const int size = 8;
    auto net = conv_stack(1, size, 3, 5);
    Tensor x({1, size, size});
    Rng rng(7);
    for (int i = 0; i < x.size(); ++i) x[i] = rng.uniform();

    Tensor gl;
    nn::cross_entropy(net.forward(x), 1, &gl);
    Tensor gx = net.backward(gl);

    const double h = 1e-6;
    for (int t = 0; t < 12; ++t) {
        const int k = rng.uniform_int(x.size());
        Tensor xp = x, xm = x;
        xp[k] += h;
        xm[k] -= h;
        const double fd = (ce_at(net, xp, 1) - ce_at(net, xm, 1)) / (2 * h);
        const double scale = std::max({std::fabs(fd), std::fabs(gx[k]), 1e-7});
        CHECK(std::fabs(fd - gx[k]) / scale < 1e-3);
    }
}

TEST_CASE("parameter gradients match finite differences") {
    auto net = conv_stack(1, 8, 2, 9);
    Tensor x({1, 8, 8});
    Rng rng(13);
    for (int i = 0; i < x.size(); ++i) x[i] = rng.uniform();

    net.zero_grads();
    Tensor gl;
    nn::cross_entropy(net.forward(x), 0, &gl);
    net.backward(gl, {}, true);
    auto params = net.params();
    auto grads = net.param_grads();
    REQUIRE(params.size() == grads.size());

    const double h = 1e-6;
    for (size_t p = 0; p < params.size(); ++p) {
        for (int t = 0; t < 3; ++t) {
            const int k = rng.uniform_int(params[p]->size());
            const double orig = (*params[p])[k];
            (*params[p])[k] = orig + h;
            const double lp = ce_at(net, x, 0);
            (*params[p])[k] = orig - h;
            const double lm = ce_at(net, x, 0);
            (*params[p])[k] = orig;
            const double fd = (lp - lm) / (2 * h);
            const double got = (*grads[p])[k];
            const double scale = std::max({std::fabs(fd), std::fabs(got), 1e-7});
            CHECK(std::fabs(fd - got) / scale < 1e-3);
        }
    }
}

TEST_CASE("injected gradients add the derivative of an activation functional") {
    // With zero logit seed and an injection g at layer i's output, backward()
    // returns d<g, activation_i>/dx: check against finite differences of the
    // inner product with a fixed g.
    auto net = conv_stack(1, 8, 3, 21);
    Tensor x({1, 8, 8});
    Rng rng(3);
    for (int i = 0; i < x.size(); ++i) x[i] = rng.uniform();

    const int site = 4;  // second conv output
    auto logits = net.forward(x);
    Tensor g(net.activation(site).shape);
    for (int i = 0; i < g.size(); ++i) g[i] = rng.uniform(-1.0, 1.0);

    auto functional = [&](const Tensor& in) {
        net.forward(in);
        const auto& a = net.activation(site);
        double out = 0.0;
        for (int i = 0; i < a.size(); ++i) out += g[i] * a[i];
        return out;
    };

    net.forward(x);
    Tensor gx = net.backward(Tensor(logits.shape), {{site, g}});
    const double h = 1e-6;
    for (int t = 0; t < 8; ++t) {
        const int k = rng.uniform_int(x.size());
        Tensor xp = x, xm = x;
        xp[k] += h;
        xm[k] -= h;
        const double fd = (functional(xp) - functional(xm)) / (2 * h);
        const double scale = std::max({std::fabs(fd), std::fabs(gx[k]), 1e-7});
        CHECK(std::fabs(fd - gx[k]) / scale < 1e-3);
    }
}

TEST_CASE("network copies are independent and behavior-identical") {
    auto net = conv_stack(1, 8, 2, 2);
    nn::Network copy = net;
    Tensor x({1, 8, 8});
    Rng rng(1);
    for (int i = 0; i < x.size(); ++i) x[i] = rng.uniform();
    auto a = net.forward(x);
    auto b = copy.forward(x);
    for (int k = 0; k < a.size(); ++k) CHECK(a[k] == b[k]);

    // perturbing the copy leaves the original untouched
    (*copy.params()[0])[0] += 1.0;
    auto a2 = net.forward(x);
    for (int k = 0; k < a.size(); ++k) CHECK(a2[k] == a[k]);
}

TEST_CASE("sgd with momentum follows the hand recurrence on a scalar") {
    Tensor p({1}), g({1});
    p[0] = 1.0;
    nn::SgdOptimizer opt({&p}, {&g}, 0.1, 0.9);
    // v = m v + g; p -= lr v  (standard heavy-ball bookkeeping)
    g[0] = 2.0;
    opt.step();
    const double v1 = 2.0;
    CHECK(p[0] == doctest::Approx(1.0 - 0.1 * v1).epsilon(1e-12));
    g[0] = 1.0;
    opt.step();
    const double v2 = 0.9 * v1 + 1.0;
    CHECK(p[0] == doctest::Approx(1.0 - 0.1 * v1 - 0.1 * v2).epsilon(1e-12));
}
