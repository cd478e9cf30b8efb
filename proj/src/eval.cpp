#include "xfer/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

namespace xfer::eval {

namespace {

bool in_set(int label, const std::vector<int>& target_set) {
    return std::find(target_set.begin(), target_set.end(), label) != target_set.end();
}

void validate_target_set(const std::vector<int>& target_set, int num_classes) {
    if (target_set.empty()) throw std::invalid_argument("eval: empty target set");
    for (int t : target_set)
        if (t < 0 || t >= num_classes)
            throw std::invalid_argument("eval: target class " + std::to_string(t) +
                                        " outside the blackbox label space [0, " +
                                        std::to_string(num_classes) + ")");
}

std::string pct1(double frac) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * frac);
    return buf;
}

}  // namespace

void EvalResult::check_invariants() const {
    if (error < -1e-12 || error > 1.0 + 1e-12 || tsuc < -1e-12 || tsuc > 1.0 + 1e-12)
        throw std::logic_error("eval: metric outside [0,1]");
    if (tsuc > error + 1e-12)
        throw std::logic_error("eval: tsuc exceeds error (" + std::to_string(tsuc) + " > " +
                               std::to_string(error) + ")");
    int n_sum = 0;
    double err_sum = 0.0, tsuc_sum = 0.0;
    for (const auto& [cls, s] : per_source_class) {
        n_sum += s.n;
        err_sum += s.n * s.error;
        tsuc_sum += s.n * s.tsuc;
    }
    if (n_sum != n_attacked)
        throw std::logic_error("eval: per-class counts sum to " + std::to_string(n_sum) +
                               ", expected " + std::to_string(n_attacked));
    if (n_attacked > 0) {
        if (std::abs(err_sum / n_attacked - error) > 1e-9 ||
            std::abs(tsuc_sum / n_attacked - tsuc) > 1e-9)
            throw std::logic_error("eval: per-class decomposition does not reconstruct aggregates");
    }
}

io::json EvalResult::to_json() const {
    io::json per = io::json::object();
    for (const auto& [cls, s] : per_source_class)
        per[std::to_string(cls)] = {{"n", s.n}, {"error", s.error}, {"tsuc", s.tsuc}};
    return {{"blackbox_id", blackbox_id}, {"target_set", target_set},
            {"target_name", target_name}, {"proxy", proxy},
            {"family", family},           {"n_attacked", n_attacked},
            {"error", error},             {"tsuc", tsuc},
            {"per_source_class", per}};
}

EvalResult EvalResult::from_json(const io::json& j) {
    EvalResult r;
    r.blackbox_id = j.at("blackbox_id").get<std::string>();
    r.target_set = j.at("target_set").get<std::vector<int>>();
    r.target_name = j.at("target_name").get<std::string>();
    r.proxy = j.at("proxy").get<std::string>();
    r.family = j.at("family").get<std::string>();
    r.n_attacked = j.at("n_attacked").get<int>();
    r.error = j.at("error").get<double>();
    r.tsuc = j.at("tsuc").get<double>();
    for (const auto& [key, v] : j.at("per_source_class").items())
        r.per_source_class[std::stoi(key)] = {v.at("n").get<int>(), v.at("error").get<double>(),
                                              v.at("tsuc").get<double>()};
    r.check_invariants();
    return r;
}

void EvalResult::save(const std::filesystem::path& path) const { io::save_json(path, to_json()); }
EvalResult EvalResult::load(const std::filesystem::path& path) {
    return from_json(io::load_json(path));
}

std::vector<int> filter_clean(model::ModelHandle& blackbox, const ds::LabeledDataset& data,
                              const std::vector<int>& target_set) {
    validate_target_set(target_set, blackbox.num_classes());
    if (data.spec.num_classes() != blackbox.num_classes())
        throw std::invalid_argument("filter_clean: dataset label space (" +
                                    std::to_string(data.spec.num_classes()) +
                                    " classes) does not match the blackbox (" +
                                    std::to_string(blackbox.num_classes()) + ")");
    auto pred = model::predict(blackbox, data.inputs);
    std::vector<int> eligible;
    for (int i = 0; i < data.size(); ++i) {
        const int truth = data.labels[static_cast<size_t>(i)];
        if (pred.labels[static_cast<size_t>(i)] == truth && !in_set(truth, target_set))
            eligible.push_back(i);
    }
    return eligible;
}

EvalResult compute_metrics(const std::vector<atk::AdversarialExample>& batch,
                           const std::vector<int>& true_labels, model::ModelHandle& blackbox,
                           const std::vector<int>& target_set, const std::string& blackbox_id,
                           const std::string& proxy) {
    validate_target_set(target_set, blackbox.num_classes());
    if (batch.size() != true_labels.size())
        throw std::invalid_argument("compute_metrics: batch/label count mismatch");
    for (int t : true_labels) {
        if (t < 0 || t >= blackbox.num_classes())
            throw std::invalid_argument("compute_metrics: true label outside the label space");
        if (in_set(t, target_set))
            throw std::invalid_argument(
                "compute_metrics: true class inside the target set; batch must come from "
                "filter_clean output");
    }

    EvalResult r;
    r.blackbox_id = blackbox_id;
    r.target_set = target_set;
    r.proxy = proxy;
    r.family = batch.empty() ? "" : atk::family_name(batch[0].family);
    r.n_attacked = static_cast<int>(batch.size());

    std::map<int, int> n_by_class, err_by_class, tsuc_by_class;
    int errors = 0, hits = 0;
    for (size_t i = 0; i < batch.size(); ++i) {
        const Tensor adv = batch[i].adversarial();
        const int pred = model::predict(blackbox, {adv}).labels[0];
        const int truth = true_labels[i];
        const bool wrong = pred != truth;
        const bool hit = in_set(pred, target_set);
        n_by_class[truth] += 1;
        if (wrong) {
            ++errors;
            err_by_class[truth] += 1;
        }
        if (hit) {
            ++hits;
            tsuc_by_class[truth] += 1;
        }
    }
    if (r.n_attacked > 0) {
        r.error = static_cast<double>(errors) / r.n_attacked;
        r.tsuc = static_cast<double>(hits) / r.n_attacked;
    }
    for (const auto& [cls, n] : n_by_class)
        r.per_source_class[cls] = {n, static_cast<double>(err_by_class[cls]) / n,
                                   static_cast<double>(tsuc_by_class[cls]) / n};
    r.check_invariants();
    return r;
}

Breakdown source_class_breakdown(const EvalResult& result, const ds::LabelSpaceSpec* names) {
    if (result.per_source_class.empty())
        throw std::invalid_argument("source_class_breakdown: no per-class data");
    Breakdown out;
    for (const auto& [cls, s] : result.per_source_class) {
        BreakdownRow row;
        row.cls = cls;
        row.n = s.n;
        row.tsuc = s.tsuc;
        if (names && cls < names->num_classes())
            row.name = names->classes[static_cast<size_t>(cls)].name;
        else
            row.name = "class-" + std::to_string(cls);
        out.rows.push_back(row);
    }
    std::stable_sort(out.rows.begin(), out.rows.end(),
                     [](const BreakdownRow& a, const BreakdownRow& b) { return a.tsuc > b.tsuc; });
    out.range = out.rows.front().tsuc - out.rows.back().tsuc;
    return out;
}

void Report::save(const std::filesystem::path& dir, const std::string& stem) const {
    std::filesystem::create_directories(dir);
    io::write_csv(dir / (stem + ".csv"), csv_rows);
    io::write_text(dir / (stem + ".txt"), text);
}

Report render_report(const std::vector<EvalResult>& results, Layout layout) {
    if (results.empty()) throw std::invalid_argument("render_report: no results");
    for (const auto& r : results) r.check_invariants();

    // Row key = attack identity; column key = blackbox.
    struct RowKey {
        std::string family, proxy, target;
        bool operator<(const RowKey& o) const {
            return std::tie(family, proxy, target) < std::tie(o.family, o.proxy, o.target);
        }
    };
    std::vector<std::string> blackboxes;
    std::map<RowKey, std::map<std::string, const EvalResult*>> grid;
    std::map<RowKey, std::vector<int>> row_target_sets;
    for (const auto& r : results) {
        RowKey key{r.family, r.proxy, r.target_name};
        auto it = row_target_sets.find(key);
        if (it == row_target_sets.end())
            row_target_sets[key] = r.target_set;
        else if (it->second != r.target_set)
            throw std::invalid_argument("render_report: inconsistent target sets for " +
                                        key.family + "/" + key.proxy);
        if (grid[key].count(r.blackbox_id))
            throw std::invalid_argument("render_report: duplicate result for blackbox " +
                                        r.blackbox_id);
        grid[key][r.blackbox_id] = &r;
        if (std::find(blackboxes.begin(), blackboxes.end(), r.blackbox_id) == blackboxes.end())
            blackboxes.push_back(r.blackbox_id);
    }
    std::sort(blackboxes.begin(), blackboxes.end());

    Report rep;
    std::vector<std::string> header{"family", "proxy", "target"};
    if (layout == Layout::PerBlackbox)
        for (const auto& b : blackboxes) header.push_back(b);
    header.push_back("avg");
    rep.csv_rows.push_back(header);

    std::string text;
    for (const auto& col : header) text += col + "\t";
    text += "\n";

    for (const auto& [key, by_bb] : grid) {
        std::vector<std::string> row{key.family, key.proxy, key.target};
        double err_sum = 0.0, tsuc_sum = 0.0;
        int present = 0;
        std::vector<std::string> cells;
        for (const auto& b : blackboxes) {
            auto it = by_bb.find(b);
            if (it == by_bb.end()) {
                cells.push_back("-");
                continue;
            }
            err_sum += it->second->error;
            tsuc_sum += it->second->tsuc;
            ++present;
            cells.push_back(pct1(it->second->error) + " / " + pct1(it->second->tsuc));
        }
        if (layout == Layout::PerBlackbox)
            row.insert(row.end(), cells.begin(), cells.end());
        row.push_back(present ? pct1(err_sum / present) + " / " + pct1(tsuc_sum / present) : "-");
        rep.csv_rows.push_back(row);
        for (const auto& cell : row) text += cell + "\t";
        text += "\n";
    }
    rep.text = text;
    return rep;
}

}  // namespace xfer::eval
