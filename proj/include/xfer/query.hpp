#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xfer/attack.hpp"
#include "xfer/model.hpp"
#include "xfer/tensor.hpp"

namespace xfer::query {

struct BudgetExhausted : std::runtime_error {
    BudgetExhausted() : std::runtime_error("query budget exhausted") {}
};

/// Monotone per-oracle query counter with a hard cap.
class QueryLedger {
public:
    explicit QueryLedger(int budget = 5000) : budget_(budget) {}

    int budget() const { return budget_; }
    int used() const { return used_; }
    int headroom() const { return budget_ - used_; }

    /// Charge n queries; throws BudgetExhausted (charging nothing) when the
    /// cap would be crossed.
    void charge(int n);

    struct Record {
        std::string example_id;
        int queries = 0;
        std::string outcome;
    };
    void record_example(const std::string& id, int queries, const std::string& outcome);
    const std::vector<Record>& per_example() const { return records_; }

    void save(const std::filesystem::path& path) const;
    static QueryLedger load(const std::filesystem::path& path);

private:
    int budget_;
    int used_ = 0;
    std::vector<Record> records_;
};

enum class OracleMode { LabelOnly, Score };

/// Anything that answers score queries under a ledger. Every scores() call
/// charges exactly one query.
class ScoreOracle {
public:
    virtual ~ScoreOracle() = default;
    virtual Tensor scores(const Tensor& x) = 0;
    virtual QueryLedger& ledger() = 0;
};

/// Blackbox model access point; every input element charges the ledger once.
class OracleHandle final : public ScoreOracle {
public:
    OracleHandle(model::ModelHandle& blackbox, OracleMode mode, QueryLedger& ledger)
        : model_(&blackbox), mode_(mode), ledger_(&ledger) {}

    int num_classes() const { return model_->num_classes(); }
    OracleMode mode() const { return mode_; }
    QueryLedger& ledger() override { return *ledger_; }

    /// One charged label query per element.
    std::vector<int> labels(const std::vector<Tensor>& batch);
    /// Evaluation-side label, uncharged. Used only to judge final outcomes
    /// (the zero-budget outcome must equal the pure transfer outcome), never
    /// inside the attack loop.
    int evaluate_label(const Tensor& x);
    /// Charged probability-vector query; requires score mode.
    Tensor scores(const Tensor& x) override;

private:
    model::ModelHandle* model_;
    OracleMode mode_;
    QueryLedger* ledger_;
};

/// Margin loss over the oracle's score vector:
/// log p(target set) - max_{j not in set} log p(j). Positive iff the
/// top prediction is inside the target set.
double margin_loss(const Tensor& probs, const std::vector<int>& target_set);

/// Random gradient-free estimate of the gradient of loss_spec(scores(x)):
/// ghat = (1/q) sum_i [(L(x + sigma u_i) - L(x)) / sigma] u_i, u_i uniform
/// on the unit sphere. Probes pass through `project` (when given) before
/// querying so no query leaves the feasible set. Consumes exactly q+1
/// queries; throws BudgetExhausted without charging if headroom < q+1.
Tensor rgf_estimate(ScoreOracle& oracle, const std::function<double(const Tensor&)>& loss_spec,
                    const Tensor& x, int directions, double sigma, Rng& rng,
                    const std::function<Tensor(const Tensor&)>& project = nullptr);

struct HybridResult {
    atk::AdversarialExample example;
    int queries_used = 0;
    bool success = false;
    /// Refinement queries consumed up to the first success; -1 when the
    /// attack never succeeded.
    int queries_at_success = -1;
};

struct HybridConfig {
    double epsilon = 16.0 / 255.0;
    double alpha = 2.0 / 255.0;
    int rgf_directions = 20;
    double rgf_sigma = 1e-3;
    uint64_t seed = 11;
};

/// Transfer-warm-started RGF refinement: from the transfer perturbation (or
/// zero), repeat {gradient estimate, sign step, project, one charged label
/// query as the success check} until the oracle predicts inside the target
/// set or the budget runs out. Budget 0 reproduces the pure transfer
/// outcome with zero refinement queries.
HybridResult hybrid_attack(const std::optional<atk::AdversarialExample>& transfer, const Tensor& clean,
                           OracleHandle& oracle, const std::vector<int>& target_set,
                           const HybridConfig& config, const std::string& example_id = "");

struct CurveTable {
    std::vector<std::string> variants;
    std::vector<int> checkpoints;
    std::vector<std::vector<double>> tsuc;  // [variant][checkpoint]

    void save_csv(const std::filesystem::path& path) const;
};

/// Cumulative targeted-success fraction per variant at each refinement-query
/// checkpoint, from per-example queries-at-success counts (-1 = never).
CurveTable tsuc_vs_queries(const std::map<std::string, std::vector<int>>& success_queries,
                           const std::vector<int>& checkpoints);

}  // namespace xfer::query
