#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "xfer/model.hpp"
#include "xfer/tensor.hpp"

namespace xfer::atk {

enum class Family { TMIM, FDA };
std::string family_name(Family f);
Family parse_family(const std::string& s);

struct AttackConfig {
    double epsilon = 16.0 / 255.0;
    double alpha = 2.0 / 255.0;
    int iters = 10;
    double momentum_decay = 1.0;
    Family family = Family::TMIM;
    // FDA only: one layer set and one feature-distance weight per ensemble member
    std::vector<std::vector<model::LayerId>> layer_sets;
    std::vector<double> eta;

    void validate(size_t ensemble_size) const;
    io::json to_json() const;
    static AttackConfig from_json(const io::json& j);
    std::string digest() const { return io::digest(to_json()); }
};

struct AdversarialExample {
    Tensor clean;
    Tensor delta;
    int proxy = -1;
    std::vector<int> target_set;
    Family family = Family::TMIM;
    std::vector<double> loss_trace;

    Tensor adversarial() const { return clean + delta; }
    bool satisfies_constraints(double epsilon, double tol = 1e-9) const;
};

/// Clamp delta to the L-inf ball, then fold the [0,1] pixel box back into
/// delta. Idempotent.
Tensor project_linf(const Tensor& clean, const Tensor& delta, double epsilon);

/// Accumulator for the momentum sign step: state' = decay*state +
/// grad/||grad||_1 (gradient term skipped when its L1 norm is zero),
/// direction = sign(state').
struct MomentumState {
    Tensor accum;
};

Tensor momentum_step(const Tensor& grad, MomentumState& state, double decay);

/// Decision-space attack: momentum-iterative descent of the mean ensemble
/// cross-entropy toward the proxy class, projected each step.
AdversarialExample tmim_attack(const AttackConfig& config,
                               std::vector<model::ModelHandle*>& ensemble, const Tensor& clean,
                               int proxy);

/// Feature-space objective of one ensemble member:
/// (1/|L|) sum_l [ p(proxy | f_l(x+d)) + eta * ||f_l(x+d)-f_l(x)||_2 /
/// max(||f_l(x)||_2, 1e-12) ]. Optionally returns the gradient w.r.t. delta.
double fda_loss(model::ModelHandle& whitebox, const model::AuxModelSet& aux, const Tensor& clean,
                const Tensor& delta, int proxy, const std::vector<model::LayerId>& layers,
                double eta, Tensor* grad_delta = nullptr);

/// Feature-space attack: momentum-iterative ascent of the mean ensemble FDA
/// loss, projected each step.
AdversarialExample fda_attack(const AttackConfig& config,
                              std::vector<model::ModelHandle*>& ensemble,
                              const std::vector<const model::AuxModelSet*>& aux_sets,
                              const Tensor& clean, int proxy);

/// Greedy growth of each whitebox's FDA layer set, scored by targeted
/// success of attacks transferred between the whiteboxes themselves (no
/// blackbox queries). Stops at max_set_size or when no candidate strictly
/// improves.
std::vector<std::vector<model::LayerId>> greedy_layer_tuning(
    std::vector<model::ModelHandle*>& whiteboxes,
    const std::vector<const model::AuxModelSet*>& aux_per_model,
    const std::vector<std::vector<model::LayerId>>& candidate_layers_per_model,
    const std::vector<int>& proxy_classes, const std::vector<Tensor>& tuning_data,
    const AttackConfig& base_config, int max_set_size = 4);

/// Adversarial batch persistence: clean.xadv + delta.xadv + manifest.json
/// (config digest, proxy, target set, per-example constraint booleans).
void save_batch(const std::filesystem::path& dir, const std::vector<AdversarialExample>& batch,
                const AttackConfig& config, const std::vector<std::string>& target_names);
std::vector<AdversarialExample> load_batch(const std::filesystem::path& dir);

}  // namespace xfer::atk
