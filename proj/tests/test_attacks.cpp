#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "xfer/attack.hpp"

using namespace xfer;
using testutil::TempDir;

namespace {

Tensor random_tensor(const std::vector<int>& shape, Rng& rng, double lo, double hi) {
    Tensor t(shape);
    for (int i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

/// 2-pixel affine whitebox: logits = W x (no bias), W set by hand.
model::ModelHandle affine_whitebox(double w00, double w01, double w10, double w11) {
    model::ModelHandle m;
    m.architecture_id = "hand-affine";
    m.label_space = testutil::toy_label_space(2);
    m.image_shape = {1, 1, 2};
    Rng rng(0);
    m.net.add(std::make_unique<nn::Flatten>());
    m.net.add(std::make_unique<nn::Dense>(2, 2, rng));
    auto params = m.net.params();
    (*params[0])[0] = w00;
    (*params[0])[1] = w01;
    (*params[0])[2] = w10;
    (*params[0])[3] = w11;
    (*params[1])[0] = 0.0;
    (*params[1])[1] = 0.0;
    return m;
}

}  // namespace

TEST_CASE("project_linf: trivials, brute-force oracle, idempotence, monotone feasibility") {
    const double eps = 16.0 / 255.0;
    Tensor clean({1, 2, 2});
    for (int i = 0; i < 4; ++i) clean[i] = 0.3;

    CHECK(atk::project_linf(clean, Tensor({1, 2, 2}), eps).max_abs() == 0.0);

    Tensor big({1, 2, 2});
    for (int i = 0; i < 4; ++i) big[i] = 0.5;
    auto clipped = atk::project_linf(clean, big, eps);
    for (int i = 0; i < 4; ++i) CHECK(clipped[i] == doctest::Approx(eps).epsilon(1e-12));

    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto c = random_tensor({1, 3, 3}, rng, 0.0, 1.0);
        auto d = random_tensor({1, 3, 3}, rng, -1.0, 1.0);
        auto p = atk::project_linf(c, d, eps);
        for (int i = 0; i < p.size(); ++i) {
            // scalar per-component reference
            double ref = std::clamp(d[i], -eps, eps);
            ref = std::clamp(c[i] + ref, 0.0, 1.0) - c[i];
            CHECK(p[i] == ref);
        }
        // exact idempotence
        auto pp = atk::project_linf(c, p, eps);
        for (int i = 0; i < p.size(); ++i) CHECK(pp[i] == p[i]);
        // feasible at eps stays feasible at every larger radius
        auto wider = atk::project_linf(c, p, eps * 2);
        for (int i = 0; i < p.size(); ++i) CHECK(wider[i] == p[i]);
    }
}

TEST_CASE("momentum_step: first step, zero gradient, hand recurrence") {
    atk::MomentumState s;
    Tensor g({2});
    g[0] = 3.0;
    g[1] = -1.0;
    auto dir = atk::momentum_step(g, s, 1.0);
    CHECK(dir[0] == 1.0);
    CHECK(dir[1] == -1.0);

    // zero gradient propagates the decayed state
    atk::MomentumState s2;
    s2.accum = Tensor({2});
    s2.accum[0] = -0.5;
    s2.accum[1] = 0.25;
    Tensor zero({2});
    auto dir2 = atk::momentum_step(zero, s2, 0.5);
    CHECK(s2.accum[0] == -0.25);
    CHECK(s2.accum[1] == 0.125);
    CHECK(dir2[0] == -1.0);
    CHECK(dir2[1] == 1.0);

    // three-step recurrence against a hand computation
    atk::MomentumState s3;
    Tensor g1({2}), g2({2}), g3({2});
    g1[0] = 1.0; g1[1] = 1.0;    // L1 = 2 -> accum (0.5, 0.5)
    g2[0] = -4.0; g2[1] = 0.0;   // L1 = 4 -> accum d*(0.5,0.5) + (-1, 0)
    g3[0] = 0.5; g3[1] = -0.5;   // L1 = 1 -> + (0.5, -0.5)
    const double d = 0.9;
    atk::momentum_step(g1, s3, d);
    atk::momentum_step(g2, s3, d);
    auto dir3 = atk::momentum_step(g3, s3, d);
    const double a0 = d * (d * 0.5 - 1.0) + 0.5;
    const double a1 = d * (d * 0.5 + 0.0) - 0.5;
    CHECK(s3.accum[0] == doctest::Approx(a0).epsilon(1e-12));
    CHECK(s3.accum[1] == doctest::Approx(a1).epsilon(1e-12));
    CHECK(dir3[0] == (a0 > 0 ? 1.0 : -1.0));
    CHECK(dir3[1] == (a1 > 0 ? 1.0 : -1.0));

    // decay 0 reduces to sign(grad)
    atk::MomentumState s4;
    s4.accum = Tensor({2});
    s4.accum[0] = 100.0;
    auto dir4 = atk::momentum_step(g, s4, 0.0);
    CHECK(dir4[0] == 1.0);
    CHECK(dir4[1] == -1.0);
}

TEST_CASE("attack config validation and serialization") {
    atk::AttackConfig c;
    CHECK_NOTHROW(c.validate(2));

    atk::AttackConfig bad = c;
    bad.alpha = bad.epsilon * 2;
    CHECK_THROWS_AS(bad.validate(1), std::invalid_argument);
    bad = c;
    bad.iters = 0;
    CHECK_THROWS_AS(bad.validate(1), std::invalid_argument);
    bad = c;
    bad.family = atk::Family::FDA;
    CHECK_THROWS_AS(bad.validate(1), std::invalid_argument);  // no layer sets
    bad.layer_sets = {{model::LayerId{{2}}}};
    bad.eta = {-1.0};
    CHECK_THROWS_AS(bad.validate(1), std::invalid_argument);
    bad.eta = {1e-4};
    CHECK_NOTHROW(bad.validate(1));

    auto round = atk::AttackConfig::from_json(bad.to_json());
    CHECK(round.digest() == bad.digest());
    CHECK(round.layer_sets[0][0].str() == "2");
}

TEST_CASE("tmim: epsilon 0 is a no-op") {
    auto m = affine_whitebox(2.0, -1.0, -1.0, 2.0);
    std::vector<model::ModelHandle*> ens{&m};
    atk::AttackConfig cfg;
    cfg.epsilon = 0.0;
    cfg.alpha = 0.0;
    Tensor clean = testutil::hot_image(2, 0);
    auto ex = atk::tmim_attack(cfg, ens, clean, 1);
    CHECK(ex.delta.max_abs() == 0.0);
    CHECK(model::predict(m, {ex.adversarial()}).labels[0] ==
          model::predict(m, {clean}).labels[0]);
    CHECK(ex.loss_trace.size() == static_cast<size_t>(cfg.iters));
}

TEST_CASE("tmim single step on an affine whitebox matches the closed form") {
    // logits = W x, proxy 0; dH/dx = W^T (softmax(Wx) - e0); one iteration
    // steps delta = -alpha * sign of that gradient.
    const double w00 = 1.5, w01 = -0.5, w10 = -1.0, w11 = 2.0;
    auto m = affine_whitebox(w00, w01, w10, w11);
    std::vector<model::ModelHandle*> ens{&m};
    atk::AttackConfig cfg;
    cfg.iters = 1;
    Tensor x({1, 1, 2});
    x[0] = 0.4;
    x[1] = 0.6;

    const double z0 = w00 * x[0] + w01 * x[1];
    const double z1 = w10 * x[0] + w11 * x[1];
    const double e0 = std::exp(z0), e1 = std::exp(z1);
    const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
    const double gx0 = w00 * (p0 - 1.0) + w10 * p1;
    const double gx1 = w01 * (p0 - 1.0) + w11 * p1;

    auto ex = atk::tmim_attack(cfg, ens, x, 0);
    CHECK(ex.delta[0] == doctest::Approx(-cfg.alpha * (gx0 > 0 ? 1.0 : -1.0)).epsilon(1e-12));
    CHECK(ex.delta[1] == doctest::Approx(-cfg.alpha * (gx1 > 0 ? 1.0 : -1.0)).epsilon(1e-12));
}

TEST_CASE("tmim drives tiny whiteboxes to the proxy and stays feasible") {
    auto w = testutil::tiny_world();
    auto m1 = testutil::tiny_classifier(w, "cnn-a", w.a_train, w.a_val);
    auto m2 = testutil::tiny_classifier(w, "cnn-b", w.a_train, w.a_val);
    std::vector<model::ModelHandle*> ens{&m1, &m2};
    atk::AttackConfig cfg;
    int hits = 0;
    const int n = 30;
    for (int i = 0; i < n; ++i) {
        auto ex = atk::tmim_attack(cfg, ens, w.b_val.inputs[static_cast<size_t>(i)], 1);
        CHECK(ex.satisfies_constraints(cfg.epsilon));
        CHECK(ex.loss_trace.size() == 10);
        bool all = true;
        for (auto* m : ens)
            if (model::predict(*m, {ex.adversarial()}).labels[0] != 1) all = false;
        if (all) ++hits;
    }
    CHECK(hits >= static_cast<int>(0.9 * n));
}

TEST_CASE("tmim and fda input gradients match central finite differences") {
    auto w = testutil::tiny_world();
    auto m = testutil::tiny_classifier(w, "cnn-a", w.a_train, w.a_val);
    auto layers = model::candidate_layers(m);
    std::vector<model::LayerId> set{layers[0], layers[1]};
    auto aux = model::train_aux_models(m, w.a_train, set, {1});

    Tensor x = w.b_val.inputs[0];
    Rng rng(21);
    const double h = 1e-6;

    SUBCASE("tmim loss = cross-entropy toward the proxy") {
        Tensor grad;
        model::input_gradient_ce(m, x, 1, &grad);
        for (int t = 0; t < 10; ++t) {
            const int k = rng.uniform_int(x.size());
            Tensor xp = x, xm = x;
            xp[k] += h;
            xm[k] -= h;
            const double fd = (model::input_gradient_ce(m, xp, 1, nullptr) -
                               model::input_gradient_ce(m, xm, 1, nullptr)) /
                              (2 * h);
            const double scale = std::max({std::fabs(fd), std::fabs(grad[k]), 1e-8});
            CHECK(std::fabs(fd - grad[k]) / scale < 1e-3);
        }
    }

    SUBCASE("fda loss with distance term") {
        Tensor delta(x.shape);
        Rng drng(4);
        for (int i = 0; i < delta.size(); ++i) delta[i] = drng.uniform(-0.01, 0.01);
        const double eta = 0.05;
        Tensor grad;
        atk::fda_loss(m, aux, x, delta, 1, set, eta, &grad);
        for (int t = 0; t < 10; ++t) {
            const int k = rng.uniform_int(delta.size());
            Tensor dp = delta, dm = delta;
            dp[k] += h;
            dm[k] -= h;
            const double fd = (atk::fda_loss(m, aux, x, dp, 1, set, eta) -
                               atk::fda_loss(m, aux, x, dm, 1, set, eta)) /
                              (2 * h);
            const double scale = std::max({std::fabs(fd), std::fabs(grad[k]), 1e-8});
            CHECK(std::fabs(fd - grad[k]) / scale < 1e-3);
        }
    }
}

TEST_CASE("fda_loss at delta 0 and against hand arithmetic") {
    // Whitebox whose attack layer is the flatten output (features = pixels).
    auto m = affine_whitebox(1.0, 0.0, 0.0, 1.0);
    const model::LayerId flat{{0}};

    model::AuxModelSet aux;
    model::Probe probe;
    probe.w1 = Tensor({1, 2});
    probe.w1[0] = 0.7;
    probe.w1[1] = -0.3;
    probe.b1 = Tensor({1});
    probe.b1[0] = 0.1;
    probe.w2 = Tensor({1, 1});
    probe.w2[0] = 1.2;
    probe.b2 = Tensor({1});
    probe.b2[0] = -0.2;
    aux.entries[{0, flat.str()}] = probe;

    Tensor x({1, 1, 2});
    x[0] = 0.8;
    x[1] = 0.2;

    // delta = 0: distance term exactly 0, loss = probe probability on x
    const double h = std::max(0.0, 0.7 * 0.8 - 0.3 * 0.2 + 0.1);
    const double p_clean = nn::sigmoid(1.2 * h - 0.2);
    CHECK(atk::fda_loss(m, aux, x, Tensor(x.shape), 0, {flat}, 0.5) ==
          doctest::Approx(p_clean).epsilon(1e-12));

    // nonzero delta: hand arithmetic for both terms
    Tensor d(x.shape);
    d[0] = 0.03;
    d[1] = -0.04;
    const double eta = 0.5;
    const double hp = std::max(0.0, 0.7 * (x[0] + d[0]) - 0.3 * (x[1] + d[1]) + 0.1);
    const double p_adv = nn::sigmoid(1.2 * hp - 0.2);
    const double dist = std::hypot(d[0], d[1]);
    const double den = std::hypot(x[0], x[1]);
    CHECK(atk::fda_loss(m, aux, x, d, 0, {flat}, eta) ==
          doctest::Approx(p_adv + eta * dist / den).epsilon(1e-9));

    // missing aux entry names the class and layer
    CHECK_THROWS_WITH_AS(atk::fda_loss(m, aux, x, d, 1, {flat}, eta),
                         doctest::Contains("class 1"), std::invalid_argument);
}

TEST_CASE("fda attack: epsilon 0 no-op and loss improvement on a desk batch") {
    auto w = testutil::tiny_world();
    auto m1 = testutil::tiny_classifier(w, "cnn-a", w.a_train, w.a_val);
    auto m2 = testutil::tiny_classifier(w, "cnn-b", w.a_train, w.a_val);
    auto l1 = model::candidate_layers(m1);
    auto l2 = model::candidate_layers(m2);
    auto aux1 = model::train_aux_models(m1, w.a_train, l1, {0, 1});
    auto aux2 = model::train_aux_models(m2, w.a_train, l2, {0, 1});
    std::vector<model::ModelHandle*> ens{&m1, &m2};
    std::vector<const model::AuxModelSet*> aux{&aux1, &aux2};

    atk::AttackConfig cfg;
    cfg.family = atk::Family::FDA;
    cfg.layer_sets = {{l1[0], l1[1]}, {l2[0], l2[1]}};
    cfg.eta = {1e-3, 1e-3};

    SUBCASE("epsilon 0") {
        auto z = cfg;
        z.epsilon = 0.0;
        z.alpha = 0.0;
        auto ex = atk::fda_attack(z, ens, aux, w.b_val.inputs[0], 1);
        CHECK(ex.delta.max_abs() == 0.0);
        CHECK(ex.loss_trace.front() == doctest::Approx(ex.loss_trace.back()));
    }

    SUBCASE("final loss beats the clean loss on >= 90% of a batch") {
        const int n = 20;
        int improved = 0;
        for (int i = 0; i < n; ++i) {
            auto ex = atk::fda_attack(cfg, ens, aux, w.b_val.inputs[static_cast<size_t>(i)], 1);
            CHECK(ex.satisfies_constraints(cfg.epsilon));
            double clean_loss = 0.0, final_loss = 0.0;
            for (size_t j = 0; j < ens.size(); ++j) {
                clean_loss += atk::fda_loss(*ens[j], *aux[j], ex.clean, Tensor(ex.clean.shape),
                                            1, cfg.layer_sets[j], cfg.eta[j]);
                final_loss += atk::fda_loss(*ens[j], *aux[j], ex.clean, ex.delta, 1,
                                            cfg.layer_sets[j], cfg.eta[j]);
            }
            if (final_loss >= clean_loss) ++improved;
        }
        CHECK(improved >= static_cast<int>(0.9 * n));
    }
}

TEST_CASE("attacks are deterministic: identical config gives bit-identical deltas") {
    auto w = testutil::tiny_world();
    auto m = testutil::tiny_classifier(w, "cnn-a", w.a_train, w.a_val);
    std::vector<model::ModelHandle*> ens{&m};
    atk::AttackConfig cfg;
    auto e1 = atk::tmim_attack(cfg, ens, w.b_val.inputs[0], 1);
    auto e2 = atk::tmim_attack(cfg, ens, w.b_val.inputs[0], 1);
    for (int i = 0; i < e1.delta.size(); ++i) CHECK(e1.delta[i] == e2.delta[i]);
}

TEST_CASE("greedy tuning: trivial candidate, constructed signal, rejections") {
    auto w = testutil::tiny_world();
    auto m1 = testutil::tiny_classifier(w, "cnn-a", w.a_train, w.a_val);
    auto m2 = testutil::tiny_classifier(w, "cnn-b", w.a_train, w.a_val);
    auto l1 = model::candidate_layers(m1);
    auto l2 = model::candidate_layers(m2);
    std::vector<model::ModelHandle*> wbs{&m1, &m2};

    atk::AttackConfig base;
    base.family = atk::Family::FDA;
    base.eta = {1e-3, 1e-3};
    std::vector<Tensor> tuning(w.b_val.inputs.begin(), w.b_val.inputs.begin() + 4);

    SUBCASE("single candidate is returned verbatim") {
        auto aux1 = model::train_aux_models(m1, w.a_train, {l1[0]}, {1});
        auto aux2 = model::train_aux_models(m2, w.a_train, {l2[0]}, {1});
        std::vector<const model::AuxModelSet*> aux{&aux1, &aux2};
        auto sets = atk::greedy_layer_tuning(wbs, aux, {{l1[0]}, {l2[0]}}, {1}, tuning, base, 4);
        REQUIRE(sets.size() == 2);
        CHECK(sets[0] == std::vector<model::LayerId>{l1[0]});
        CHECK(sets[1] == std::vector<model::LayerId>{l2[0]});
    }

    SUBCASE("greedy picks the only informative candidate first") {
        // Real probes on one candidate layer; constant (zero-weight) probes on
        // the others carry no proxy signal, so FDA through them goes nowhere.
        auto make_aux = [&](model::ModelHandle& m, const std::vector<model::LayerId>& cands,
                            const model::LayerId& live) {
            auto aux = model::train_aux_models(m, w.a_train, {live}, {1});
            for (const auto& c : cands) {
                if (c == live) continue;
                model::Probe dead;
                const auto f = model::extract_features(m, c, {w.a_train.inputs[0]})[0];
                const int width = f.shape.size() == 3 ? f.shape[0] : f.size();
                dead.w1 = Tensor({1, width});
                dead.b1 = Tensor({1});
                dead.w2 = Tensor({1, 1});
                dead.b2 = Tensor({1});
                aux.entries[{1, c.str()}] = dead;
            }
            return aux;
        };
        std::vector<model::LayerId> c1(l1.begin(), l1.begin() + 3);
        std::vector<model::LayerId> c2(l2.begin(), l2.begin() + 3);
        auto aux1 = make_aux(m1, c1, c1[1]);
        auto aux2 = make_aux(m2, c2, c2[1]);
        std::vector<const model::AuxModelSet*> aux{&aux1, &aux2};
        auto sets = atk::greedy_layer_tuning(wbs, aux, {c1, c2}, {1}, tuning, base, 2);
        CHECK(sets[0][0] == c1[1]);
        CHECK(sets[1][0] == c2[1]);
    }

    SUBCASE("rejections") {
        auto aux1 = model::train_aux_models(m1, w.a_train, {l1[0]}, {1});
        std::vector<const model::AuxModelSet*> aux{&aux1};
        std::vector<model::ModelHandle*> one{&m1};
        CHECK_THROWS_AS(
            atk::greedy_layer_tuning(one, aux, {{l1[0]}}, {1}, tuning, base, 4),
            std::invalid_argument);
        std::vector<const model::AuxModelSet*> aux2{&aux1, &aux1};
        CHECK_THROWS_AS(
            atk::greedy_layer_tuning(wbs, aux2, {{l1[0]}, {}}, {1}, tuning, base, 4),
            std::invalid_argument);
    }
}

TEST_CASE("adversarial batch round trip preserves constraints and metadata") {
    TempDir dir("batch");
    auto w = testutil::tiny_world();
    auto m = testutil::tiny_classifier(w, "cnn-a", w.a_train, w.a_val);
    std::vector<model::ModelHandle*> ens{&m};
    atk::AttackConfig cfg;
    std::vector<atk::AdversarialExample> batch;
    for (int i = 0; i < 4; ++i) {
        auto ex = atk::tmim_attack(cfg, ens, w.b_val.inputs[static_cast<size_t>(i)], 1);
        ex.target_set = {0};
        batch.push_back(std::move(ex));
    }
    atk::save_batch(dir.path / "b", batch, cfg, {"o00-hi"});

    auto manifest = io::load_json(dir.path / "b" / "manifest.json");
    CHECK(manifest.at("count").get<int>() == 4);
    for (const auto& ok : manifest.at("constraint_checks")) CHECK(ok.get<bool>());

    auto back = atk::load_batch(dir.path / "b");
    REQUIRE(back.size() == 4);
    for (size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].satisfies_constraints(cfg.epsilon));
        CHECK(back[i].proxy == 1);
        CHECK(back[i].target_set == std::vector<int>{0});
        CHECK(back[i].family == atk::Family::TMIM);
    }
}
