#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xfer/attack.hpp"
#include "xfer/dataset.hpp"
#include "xfer/model.hpp"

namespace xfer::eval {

struct ClassStats {
    int n = 0;
    double error = 0.0;
    double tsuc = 0.0;
};

struct EvalResult {
    std::string blackbox_id;
    std::vector<int> target_set;
    std::string target_name;
    std::string proxy;
    std::string family;
    int n_attacked = 0;
    double error = 0.0;
    double tsuc = 0.0;
    std::map<int, ClassStats> per_source_class;

    /// Throws unless tsuc <= error, per-class counts sum to n_attacked, and
    /// the n-weighted per-class means reconstruct the aggregates (1e-9).
    void check_invariants() const;

    io::json to_json() const;
    static EvalResult from_json(const io::json& j);
    void save(const std::filesystem::path& path) const;
    static EvalResult load(const std::filesystem::path& path);
};

/// Indices of examples the blackbox classifies correctly and whose true
/// class is outside the target set. Empty output is allowed.
std::vector<int> filter_clean(model::ModelHandle& blackbox, const ds::LabeledDataset& data,
                              const std::vector<int>& target_set);

/// error = fraction predicted != true class; tsuc = fraction predicted
/// inside the target set (any member counts). true_labels are the clean
/// images' classes in the blackbox's label space; the batch must come from
/// filter_clean output so no true class lies in the target set.
EvalResult compute_metrics(const std::vector<atk::AdversarialExample>& batch,
                           const std::vector<int>& true_labels, model::ModelHandle& blackbox,
                           const std::vector<int>& target_set,
                           const std::string& blackbox_id = "", const std::string& proxy = "");

struct BreakdownRow {
    int cls = -1;
    std::string name;
    int n = 0;
    double tsuc = 0.0;
};

struct Breakdown {
    std::vector<BreakdownRow> rows;  // descending tsuc
    double range = 0.0;              // max - min
};

Breakdown source_class_breakdown(const EvalResult& result,
                                 const ds::LabelSpaceSpec* names = nullptr);

enum class Layout { PerBlackbox, Averaged };

struct Report {
    std::vector<std::vector<std::string>> csv_rows;
    std::string text;

    void save(const std::filesystem::path& dir, const std::string& stem) const;
};

/// "error / tSuc" table in percent, one decimal place; one column per
/// blackbox plus an unweighted-average column.
Report render_report(const std::vector<EvalResult>& results, Layout layout);

}  // namespace xfer::eval
