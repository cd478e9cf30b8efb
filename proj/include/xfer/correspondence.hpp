#pragma once

#include <functional>
#include <string>
#include <vector>

#include "xfer/dataset.hpp"
#include "xfer/tensor.hpp"

namespace xfer::corr {

/// Label-only oracle: blackbox class index per input. Score access is a
/// separate capability owned by the query module.
using LabelOracle = std::function<std::vector<int>(const std::vector<Tensor>&)>;

/// Row-normalized whitebox-class x blackbox-class prediction-frequency
/// matrix. values * samples_per_class is an integer count matrix.
struct CorrespondenceMatrix {
    std::vector<std::string> rows;  // whitebox superclass names
    std::vector<std::string> cols;  // blackbox superclass names
    std::vector<std::vector<double>> values;
    int samples_per_class = 0;
    uint64_t seed = 0;
    std::string oracle_digest;

    double at(int a, int b) const { return values[static_cast<size_t>(a)][static_cast<size_t>(b)]; }
    int col_index(const std::string& name) const;  // -1 when absent
    /// Argmax column of a row, ties resolved toward the lower column index.
    int row_argmax(int a) const;

    void save(const std::filesystem::path& csv_path) const;  // CSV + .json sidecar
    static CorrespondenceMatrix load(const std::filesystem::path& csv_path);
};

/// Forward `samples_per_class` seed-chosen examples of every whitebox class
/// through the oracle and tally where the predictions land. Consumes exactly
/// |rows| * samples_per_class oracle calls.
CorrespondenceMatrix build_matrix(const LabelOracle& oracle,
                                  const ds::LabeledDataset& whitebox_data,
                                  const std::vector<std::string>& blackbox_class_names,
                                  int samples_per_class, uint64_t seed,
                                  const std::string& oracle_digest = "");

struct ProxyRanking {
    std::string target;
    std::vector<std::pair<std::string, double>> ranked;  // (whitebox class, score), desc
};

/// Rank whitebox classes as proxies for a target set of blackbox classes;
/// the score of a row is the sum over the target columns. Ties break toward
/// the lower whitebox class index.
ProxyRanking select_proxy(const CorrespondenceMatrix& matrix,
                          const std::vector<std::string>& target_set, int k);

/// Fraction of rows whose argmax column agrees between two matrices over the
/// same row/col orderings.
double consistency_score(const CorrespondenceMatrix& m1, const CorrespondenceMatrix& m2);

/// Entries at or above twice the uniform baseline (2/|cols|).
std::vector<std::tuple<std::string, std::string, double>> hotspots(
    const CorrespondenceMatrix& matrix);

}  // namespace xfer::corr
