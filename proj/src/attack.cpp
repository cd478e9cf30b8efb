#include "xfer/attack.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace xfer::atk {

std::string family_name(Family f) { return f == Family::TMIM ? "tmim" : "fda"; }

Family parse_family(const std::string& s) {
    if (s == "tmim" || s == "TMIM") return Family::TMIM;
    if (s == "fda" || s == "FDA") return Family::FDA;
    throw std::invalid_argument("unknown attack family: " + s);
}

void AttackConfig::validate(size_t ensemble_size) const {
    if (epsilon < 0.0) throw std::invalid_argument("attack config: epsilon must be >= 0");
    if (alpha < 0.0 || alpha > epsilon)
        throw std::invalid_argument("attack config: need 0 <= alpha <= epsilon");
    if (iters < 1) throw std::invalid_argument("attack config: iters must be >= 1");
    for (double e : eta)
        if (e < 0.0) throw std::invalid_argument("attack config: eta must be >= 0");
    if (family == Family::FDA) {
        if (layer_sets.size() != ensemble_size || eta.size() != ensemble_size)
            throw std::invalid_argument(
                "attack config: FDA needs one layer set and one eta per ensemble member");
        for (const auto& set : layer_sets)
            if (set.empty())
                throw std::invalid_argument("attack config: empty FDA layer set");
    }
}

io::json AttackConfig::to_json() const {
    io::json sets = io::json::array();
    for (const auto& set : layer_sets) {
        io::json one = io::json::array();
        for (const auto& l : set) one.push_back(l.str());
        sets.push_back(one);
    }
    return {{"epsilon", epsilon},       {"alpha", alpha},
            {"iters", iters},           {"momentum_decay", momentum_decay},
            {"family", family_name(family)}, {"layer_sets", sets},
            {"eta", eta}};
}

AttackConfig AttackConfig::from_json(const io::json& j) {
    AttackConfig c;
    c.epsilon = j.at("epsilon").get<double>();
    c.alpha = j.at("alpha").get<double>();
    c.iters = j.at("iters").get<int>();
    c.momentum_decay = j.at("momentum_decay").get<double>();
    c.family = parse_family(j.at("family").get<std::string>());
    if (j.contains("layer_sets"))
        for (const auto& set : j.at("layer_sets")) {
            std::vector<model::LayerId> one;
            for (const auto& l : set) one.push_back(model::LayerId::parse(l.get<std::string>()));
            c.layer_sets.push_back(std::move(one));
        }
    if (j.contains("eta")) c.eta = j.at("eta").get<std::vector<double>>();
    return c;
}

bool AdversarialExample::satisfies_constraints(double epsilon, double tol) const {
    for (int i = 0; i < delta.size(); ++i) {
        if (std::fabs(delta[i]) > epsilon + tol) return false;
        const double x = clean[i] + delta[i];
        if (x < -tol || x > 1.0 + tol) return false;
    }
    return true;
}

Tensor project_linf(const Tensor& clean, const Tensor& delta, double epsilon) {
    if (!clean.same_shape(delta))
        throw std::invalid_argument("project_linf: shape mismatch");
    Tensor out = delta;
    for (int i = 0; i < out.size(); ++i) {
        double d = std::clamp(out[i], -epsilon, epsilon);
        d = std::clamp(clean[i] + d, 0.0, 1.0) - clean[i];
        out[i] = d;
    }
    return out;
}

Tensor momentum_step(const Tensor& grad, MomentumState& state, double decay) {
    if (state.accum.size() == 0) state.accum = Tensor(grad.shape);
    const double l1 = grad.l1_norm();
    Tensor next = state.accum * decay;
    if (l1 > 0.0) next += grad * (1.0 / l1);
    state.accum = next;
    Tensor direction(grad.shape);
    for (int i = 0; i < next.size(); ++i)
        direction[i] = next[i] > 0.0 ? 1.0 : (next[i] < 0.0 ? -1.0 : 0.0);
    return direction;
}

AdversarialExample tmim_attack(const AttackConfig& config,
                               std::vector<model::ModelHandle*>& ensemble, const Tensor& clean,
                               int proxy) {
    config.validate(ensemble.size());
    if (ensemble.empty()) throw std::invalid_argument("tmim_attack: empty ensemble");
    for (auto* m : ensemble)
        if (proxy < 0 || proxy >= m->num_classes())
            throw std::invalid_argument("tmim_attack: proxy class out of range for " +
                                        m->architecture_id);

    AdversarialExample ex;
    ex.clean = clean;
    ex.delta = Tensor(clean.shape);
    ex.proxy = proxy;
    ex.family = Family::TMIM;
    MomentumState state;
    for (int it = 0; it < config.iters; ++it) {
        Tensor grad(clean.shape);
        double loss = 0.0;
        for (auto* m : ensemble) {
            Tensor g;
            loss += model::input_gradient_ce(*m, ex.clean + ex.delta, proxy, &g);
            grad += g;
        }
        loss /= static_cast<double>(ensemble.size());
        grad *= 1.0 / static_cast<double>(ensemble.size());
        if (!std::isfinite(loss) || !grad.all_finite())
            throw std::runtime_error("tmim_attack: non-finite loss at iteration " +
                                     std::to_string(it));
        ex.loss_trace.push_back(loss);
        const Tensor direction = momentum_step(grad, state, config.momentum_decay);
        ex.delta -= direction * config.alpha;
        ex.delta = project_linf(ex.clean, ex.delta, config.epsilon);
    }
    return ex;
}

double fda_loss(model::ModelHandle& whitebox, const model::AuxModelSet& aux, const Tensor& clean,
                const Tensor& delta, int proxy, const std::vector<model::LayerId>& layers,
                double eta, Tensor* grad_delta) {
    if (layers.empty()) throw std::invalid_argument("fda_loss: empty layer set");
    for (const auto& l : layers)
        if (!aux.has(proxy, l)) aux.at(proxy, l);  // throws naming (class, layer)

    // clean-feature reference pass
    std::vector<Tensor> clean_features;
    std::vector<int> layer_idx;
    whitebox.net.forward(clean);
    for (const auto& l : layers) {
        layer_idx.push_back(model::resolve_layer(whitebox, l));
        clean_features.push_back(whitebox.net.activation(layer_idx.back()));
    }

    const Tensor logits = whitebox.net.forward(clean + delta);
    const double inv_n = 1.0 / static_cast<double>(layers.size());
    double loss = 0.0;
    std::map<int, Tensor> injected;
    for (size_t i = 0; i < layers.size(); ++i) {
        const Tensor& f = whitebox.net.activation(layer_idx[i]);
        const Tensor& f0 = clean_features[i];
        Tensor probe_grad;
        const double p = aux.at(proxy, layers[i]).prob(f, grad_delta ? &probe_grad : nullptr);
        const Tensor diff = f - f0;
        const double dist = diff.l2_norm();
        const double den = std::max(f0.l2_norm(), 1e-12);
        loss += inv_n * (p + eta * dist / den);
        if (grad_delta) {
            Tensor g = probe_grad;
            if (dist > 0.0) g += diff * (eta / (dist * den));
            g *= inv_n;
            auto [it, fresh] = injected.emplace(layer_idx[i], g);
            if (!fresh) it->second += g;
        }
    }
    if (grad_delta) {
        Tensor zero_logits(logits.shape);
        *grad_delta = whitebox.net.backward(zero_logits, injected);
    }
    return loss;
}

AdversarialExample fda_attack(const AttackConfig& config,
                              std::vector<model::ModelHandle*>& ensemble,
                              const std::vector<const model::AuxModelSet*>& aux_sets,
                              const Tensor& clean, int proxy) {
    config.validate(ensemble.size());
    if (ensemble.empty()) throw std::invalid_argument("fda_attack: empty ensemble");
    if (aux_sets.size() != ensemble.size())
        throw std::invalid_argument("fda_attack: one aux model set per ensemble member");

    AdversarialExample ex;
    ex.clean = clean;
    ex.delta = Tensor(clean.shape);
    ex.proxy = proxy;
    ex.family = Family::FDA;
    MomentumState state;
    for (int it = 0; it < config.iters; ++it) {
        Tensor grad(clean.shape);
        double loss = 0.0;
        for (size_t m = 0; m < ensemble.size(); ++m) {
            Tensor g;
            loss += fda_loss(*ensemble[m], *aux_sets[m], ex.clean, ex.delta, proxy,
                             config.layer_sets[m], config.eta[m], &g);
            grad += g;
        }
        loss /= static_cast<double>(ensemble.size());
        grad *= 1.0 / static_cast<double>(ensemble.size());
        if (!std::isfinite(loss) || !grad.all_finite())
            throw std::runtime_error("fda_attack: non-finite loss at iteration " +
                                     std::to_string(it));
        ex.loss_trace.push_back(loss);
        // ascent
        const Tensor direction = momentum_step(grad, state, config.momentum_decay);
        ex.delta += direction * config.alpha;
        ex.delta = project_linf(ex.clean, ex.delta, config.epsilon);
    }
    return ex;
}

std::vector<std::vector<model::LayerId>> greedy_layer_tuning(
    std::vector<model::ModelHandle*>& whiteboxes,
    const std::vector<const model::AuxModelSet*>& aux_per_model,
    const std::vector<std::vector<model::LayerId>>& candidate_layers_per_model,
    const std::vector<int>& proxy_classes, const std::vector<Tensor>& tuning_data,
    const AttackConfig& base_config, int max_set_size) {
    if (whiteboxes.size() < 2)
        throw std::invalid_argument("greedy_layer_tuning: need at least two whiteboxes");
    if (candidate_layers_per_model.size() != whiteboxes.size())
        throw std::invalid_argument("greedy_layer_tuning: one candidate list per whitebox");
    for (const auto& cands : candidate_layers_per_model)
        if (cands.empty())
            throw std::invalid_argument("greedy_layer_tuning: empty candidate layer list");
    if (proxy_classes.empty())
        throw std::invalid_argument("greedy_layer_tuning: no proxy classes");

    // cross-whitebox targeted success of single-model FDA attacks with the
    // given layer set, averaged over proxies, evaluators, and tuning images
    auto score_set = [&](size_t attacker, const std::vector<model::LayerId>& set) {
        AttackConfig cfg = base_config;
        cfg.family = Family::FDA;
        cfg.layer_sets = {set};
        cfg.eta = {base_config.eta.size() > attacker ? base_config.eta[attacker] : 0.0};
        std::vector<model::ModelHandle*> one{whiteboxes[attacker]};
        std::vector<const model::AuxModelSet*> one_aux{aux_per_model[attacker]};
        int hits = 0, total = 0;
        for (int proxy : proxy_classes) {
            for (const auto& x : tuning_data) {
                auto ex = fda_attack(cfg, one, one_aux, x, proxy);
                std::vector<Tensor> adv{ex.adversarial()};
                for (size_t j = 0; j < whiteboxes.size(); ++j) {
                    if (j == attacker) continue;
                    auto pred = model::predict(*whiteboxes[j], adv);
                    if (pred.labels[0] == proxy) ++hits;
                    ++total;
                }
            }
        }
        return total ? static_cast<double>(hits) / total : 0.0;
    };

    std::vector<std::vector<model::LayerId>> result;
    for (size_t m = 0; m < whiteboxes.size(); ++m) {
        std::vector<model::LayerId> chosen;
        std::set<std::string> used;
        double best_score = -1.0;
        while (static_cast<int>(chosen.size()) < max_set_size) {
            int best_cand = -1;
            double best_cand_score = best_score;
            for (size_t c = 0; c < candidate_layers_per_model[m].size(); ++c) {
                const auto& cand = candidate_layers_per_model[m][c];
                if (used.count(cand.str())) continue;
                auto trial = chosen;
                trial.push_back(cand);
                const double s = score_set(m, trial);
                if (s > best_cand_score) {
                    best_cand_score = s;
                    best_cand = static_cast<int>(c);
                }
            }
            if (best_cand < 0) break;  // strict improvement only
            chosen.push_back(candidate_layers_per_model[m][static_cast<size_t>(best_cand)]);
            used.insert(chosen.back().str());
            best_score = best_cand_score;
        }
        if (chosen.empty()) chosen.push_back(candidate_layers_per_model[m][0]);
        result.push_back(std::move(chosen));
    }
    return result;
}

void save_batch(const std::filesystem::path& dir, const std::vector<AdversarialExample>& batch,
                const AttackConfig& config, const std::vector<std::string>& target_names) {
    if (batch.empty()) throw std::invalid_argument("save_batch: empty batch");
    std::filesystem::create_directories(dir);
    std::vector<Tensor> cleans, deltas;
    io::json checks = io::json::array();
    io::json traces = io::json::array();
    for (const auto& ex : batch) {
        // Pre-round to the storage precision (float32) and nudge toward zero
        // so the constraints hold exactly after a round-trip.
        Tensor clean = ex.clean, delta = ex.delta;
        for (int i = 0; i < clean.size(); ++i) {
            clean[i] = static_cast<double>(static_cast<float>(clean[i]));
            float df = static_cast<float>(delta[i]);
            while (std::fabs(static_cast<double>(df)) > config.epsilon ||
                   clean[i] + static_cast<double>(df) < 0.0 ||
                   clean[i] + static_cast<double>(df) > 1.0)
                df = std::nextafterf(df, 0.0f);
            delta[i] = static_cast<double>(df);
        }
        AdversarialExample q = ex;
        q.clean = clean;
        q.delta = delta;
        checks.push_back(q.satisfies_constraints(config.epsilon));
        cleans.push_back(std::move(clean));
        deltas.push_back(std::move(delta));
        traces.push_back(ex.loss_trace);
    }
    io::write_xadv(dir / "clean.xadv", io::stack(cleans));
    io::write_xadv(dir / "delta.xadv", io::stack(deltas));
    io::save_json(dir / "manifest.json",
                  {{"config", config.to_json()},
                   {"config_digest", config.digest()},
                   {"family", family_name(batch[0].family)},
                   {"proxy", batch[0].proxy},
                   {"target_set", batch[0].target_set},
                   {"target_names", target_names},
                   {"count", batch.size()},
                   {"constraint_checks", checks},
                   {"loss_traces", traces}});
}

std::vector<AdversarialExample> load_batch(const std::filesystem::path& dir) {
    auto manifest = io::load_json(dir / "manifest.json");
    auto cleans = io::unstack(io::read_xadv(dir / "clean.xadv"));
    auto deltas = io::unstack(io::read_xadv(dir / "delta.xadv"));
    if (cleans.size() != deltas.size())
        throw std::runtime_error("adversarial batch: clean/delta count mismatch");
    std::vector<AdversarialExample> out;
    const Family fam = parse_family(manifest.at("family").get<std::string>());
    const int proxy = manifest.at("proxy").get<int>();
    const auto targets = manifest.at("target_set").get<std::vector<int>>();
    for (size_t i = 0; i < cleans.size(); ++i) {
        AdversarialExample ex;
        ex.clean = std::move(cleans[i]);
        ex.delta = std::move(deltas[i]);
        ex.proxy = proxy;
        ex.target_set = targets;
        ex.family = fam;
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace xfer::atk
