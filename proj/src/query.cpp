#include "xfer/query.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace xfer::query {

// -------------------------------------------------------------- QueryLedger

void QueryLedger::charge(int n) {
    if (n < 0) throw std::invalid_argument("ledger: negative charge");
    if (used_ + n > budget_) throw BudgetExhausted();
    used_ += n;
}

void QueryLedger::record_example(const std::string& id, int queries,
                                 const std::string& outcome) {
    records_.push_back({id, queries, outcome});
}

void QueryLedger::save(const std::filesystem::path& path) const {
    io::json recs = io::json::array();
    for (const auto& r : records_)
        recs.push_back({{"example_id", r.example_id},
                        {"queries", r.queries},
                        {"outcome", r.outcome}});
    io::save_json(path, {{"budget", budget_}, {"used", used_}, {"per_example", recs}});
}

QueryLedger QueryLedger::load(const std::filesystem::path& path) {
    auto j = io::load_json(path);
    QueryLedger l(j.at("budget").get<int>());
    l.used_ = j.at("used").get<int>();
    for (const auto& r : j.at("per_example"))
        l.records_.push_back({r.at("example_id").get<std::string>(),
                              r.at("queries").get<int>(),
                              r.at("outcome").get<std::string>()});
    return l;
}

// ------------------------------------------------------------- OracleHandle

std::vector<int> OracleHandle::labels(const std::vector<Tensor>& batch) {
    ledger_->charge(static_cast<int>(batch.size()));
    return model::predict(*model_, batch).labels;
}

int OracleHandle::evaluate_label(const Tensor& x) {
    return model::predict(*model_, {x}).labels[0];
}

Tensor OracleHandle::scores(const Tensor& x) {
    if (mode_ != OracleMode::Score)
        throw std::logic_error("oracle: score queries not available in label-only mode");
    ledger_->charge(1);
    return model::predict(*model_, {x}).probs[0];
}

// -------------------------------------------------------------- margin loss

double margin_loss(const Tensor& probs, const std::vector<int>& target_set) {
    if (target_set.empty()) throw std::invalid_argument("margin_loss: empty target set");
    std::vector<bool> in_set(static_cast<size_t>(probs.size()), false);
    double p_target = 0.0;
    for (int t : target_set) {
        if (t < 0 || t >= probs.size())
            throw std::invalid_argument("margin_loss: target index out of range");
        in_set[static_cast<size_t>(t)] = true;
        p_target += probs[t];
    }
    double best_other = 0.0;
    bool any_other = false;
    for (int j = 0; j < probs.size(); ++j) {
        if (in_set[static_cast<size_t>(j)]) continue;
        best_other = any_other ? std::max(best_other, probs[j]) : probs[j];
        any_other = true;
    }
    if (!any_other) throw std::invalid_argument("margin_loss: target set covers all classes");
    return std::log(std::max(p_target, 1e-300)) - std::log(std::max(best_other, 1e-300));
}

// ------------------------------------------------------------- RGF estimate

Tensor rgf_estimate(ScoreOracle& oracle, const std::function<double(const Tensor&)>& loss_spec,
                    const Tensor& x, int directions, double sigma, Rng& rng,
                    const std::function<Tensor(const Tensor&)>& project) {
    if (sigma <= 0.0) throw std::invalid_argument("rgf_estimate: sigma must be positive");
    if (directions < 1) throw std::invalid_argument("rgf_estimate: need at least one direction");
    if (oracle.ledger().headroom() < directions + 1) throw BudgetExhausted();

    const double base = loss_spec(oracle.scores(x));
    Tensor ghat(x.shape);
    const int d = x.size();
    for (int i = 0; i < directions; ++i) {
        const auto u = rng.unit_sphere(d);
        Tensor probe = x;
        for (int k = 0; k < d; ++k) probe[k] += sigma * u[static_cast<size_t>(k)];
        if (project) probe = project(probe);
        const double forward = loss_spec(oracle.scores(probe));
        const double coef = (forward - base) / sigma;
        for (int k = 0; k < d; ++k) ghat[k] += coef * u[static_cast<size_t>(k)];
    }
    ghat *= 1.0 / directions;
    return ghat;
}

// ------------------------------------------------------------ hybrid attack

HybridResult hybrid_attack(const std::optional<atk::AdversarialExample>& transfer,
                           const Tensor& clean, OracleHandle& oracle,
                           const std::vector<int>& target_set, const HybridConfig& config,
                           const std::string& example_id) {
    HybridResult out;
    out.example.clean = clean;
    out.example.delta = transfer ? transfer->delta : Tensor(clean.shape);
    out.example.proxy = transfer ? transfer->proxy : -1;
    out.example.target_set = target_set;
    out.example.family = transfer ? transfer->family : atk::Family::TMIM;
    if (transfer && !transfer->satisfies_constraints(config.epsilon))
        throw std::invalid_argument("hybrid_attack: warm start violates the epsilon constraint");

    const auto in_target = [&](int label) {
        return std::find(target_set.begin(), target_set.end(), label) != target_set.end();
    };

    // Initial success is judged evaluation-side (uncharged) so the
    // zero-budget outcome equals the pure transfer outcome.
    const int start_used = oracle.ledger().used();
    if (in_target(oracle.evaluate_label(out.example.adversarial()))) {
        out.success = true;
        out.queries_at_success = 0;
        oracle.ledger().record_example(example_id, 0, "transfer");
        return out;
    }

    Rng rng(config.seed);
    Tensor x = out.example.adversarial();
    const auto project = [&](const Tensor& cand) {
        Tensor d = cand;
        d -= clean;
        return clean + atk::project_linf(clean, d, config.epsilon);
    };
    const auto loss = [&](const Tensor& probs) { return margin_loss(probs, target_set); };

    try {
        // One estimate (q+1 queries) plus one label query per round.
        while (oracle.ledger().headroom() >= config.rgf_directions + 2) {
            const Tensor ghat = rgf_estimate(oracle, loss, x, config.rgf_directions,
                                             config.rgf_sigma, rng, project);
            for (int k = 0; k < x.size(); ++k) {
                const double g = ghat[k];
                x[k] += config.alpha * (g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0));
            }
            x = project(x);
            if (in_target(oracle.labels({x})[0])) {
                out.success = true;
                out.queries_at_success = oracle.ledger().used() - start_used;
                break;
            }
        }
    } catch (const BudgetExhausted&) {
        // Budget ran dry mid-round; keep the last feasible iterate.
    }

    Tensor d = x;
    d -= clean;
    out.example.delta = d;
    out.queries_used = oracle.ledger().used() - start_used;
    oracle.ledger().record_example(example_id, out.queries_used,
                                   out.success ? "success" : "fail");
    return out;
}

// ---------------------------------------------------------------- curves

void CurveTable::save_csv(const std::filesystem::path& path) const {
    std::vector<std::vector<std::string>> rows{{"variant", "checkpoint", "tsuc"}};
    for (size_t v = 0; v < variants.size(); ++v)
        for (size_t c = 0; c < checkpoints.size(); ++c)
            rows.push_back({variants[v], std::to_string(checkpoints[c]),
                            std::to_string(tsuc[v][c])});
    io::write_csv(path, rows);
}

CurveTable tsuc_vs_queries(const std::map<std::string, std::vector<int>>& success_queries,
                           const std::vector<int>& checkpoints) {
    for (size_t i = 1; i < checkpoints.size(); ++i)
        if (checkpoints[i] < checkpoints[i - 1])
            throw std::invalid_argument("tsuc_vs_queries: checkpoints must ascend");
    CurveTable table;
    table.checkpoints = checkpoints;
    for (const auto& [variant, counts] : success_queries) {
        table.variants.push_back(variant);
        std::vector<double> row;
        for (int cp : checkpoints) {
            int hits = 0;
            for (int q : counts)
                if (q >= 0 && q <= cp) ++hits;
            row.push_back(counts.empty() ? 0.0 : static_cast<double>(hits) / counts.size());
        }
        table.tsuc.push_back(std::move(row));
    }
    return table;
}

}  // namespace xfer::query
