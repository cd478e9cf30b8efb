#include "xfer/correspondence.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "xfer/rng.hpp"

namespace xfer::corr {

int CorrespondenceMatrix::col_index(const std::string& name) const {
    for (size_t i = 0; i < cols.size(); ++i)
        if (cols[i] == name) return static_cast<int>(i);
    return -1;
}

int CorrespondenceMatrix::row_argmax(int a) const {
    const auto& row = values[static_cast<size_t>(a)];
    int best = 0;
    for (size_t b = 1; b < row.size(); ++b)
        if (row[b] > row[static_cast<size_t>(best)]) best = static_cast<int>(b);
    return best;
}

namespace {
std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace

void CorrespondenceMatrix::save(const std::filesystem::path& csv_path) const {
    std::vector<std::vector<std::string>> table;
    std::vector<std::string> header{""};
    header.insert(header.end(), cols.begin(), cols.end());
    table.push_back(header);
    for (size_t a = 0; a < rows.size(); ++a) {
        std::vector<std::string> row{rows[a]};
        for (double v : values[a]) row.push_back(fmt(v));
        table.push_back(row);
    }
    io::write_csv(csv_path, table);
    auto sidecar = csv_path;
    sidecar += ".json";
    io::save_json(sidecar, {{"seed", seed},
                            {"samples_per_class", samples_per_class},
                            {"oracle_digest", oracle_digest}});
}

CorrespondenceMatrix CorrespondenceMatrix::load(const std::filesystem::path& csv_path) {
    auto table = io::read_csv(csv_path);
    if (table.size() < 2) throw std::runtime_error("correspondence csv too short");
    CorrespondenceMatrix m;
    m.cols.assign(table[0].begin() + 1, table[0].end());
    for (size_t r = 1; r < table.size(); ++r) {
        m.rows.push_back(table[r][0]);
        std::vector<double> row;
        for (size_t c = 1; c < table[r].size(); ++c) row.push_back(std::stod(table[r][c]));
        if (row.size() != m.cols.size())
            throw std::runtime_error("correspondence csv: ragged row " + table[r][0]);
        m.values.push_back(std::move(row));
    }
    auto sidecar = csv_path;
    sidecar += ".json";
    if (std::filesystem::exists(sidecar)) {
        auto j = io::load_json(sidecar);
        m.seed = j.at("seed").get<uint64_t>();
        m.samples_per_class = j.at("samples_per_class").get<int>();
        m.oracle_digest = j.at("oracle_digest").get<std::string>();
    }
    return m;
}

CorrespondenceMatrix build_matrix(const LabelOracle& oracle,
                                  const ds::LabeledDataset& whitebox_data,
                                  const std::vector<std::string>& blackbox_class_names,
                                  int samples_per_class, uint64_t seed,
                                  const std::string& oracle_digest) {
    if (samples_per_class < 1)
        throw std::invalid_argument("build_matrix: samples_per_class must be >= 1");
    const int A = whitebox_data.spec.num_classes();
    const int B = static_cast<int>(blackbox_class_names.size());

    std::vector<std::vector<int>> per_class(static_cast<size_t>(A));
    for (int i = 0; i < whitebox_data.size(); ++i)
        per_class[static_cast<size_t>(whitebox_data.labels[static_cast<size_t>(i)])].push_back(i);
    for (int a = 0; a < A; ++a)
        if (static_cast<int>(per_class[static_cast<size_t>(a)].size()) < samples_per_class)
            throw std::invalid_argument(
                "build_matrix: class " + whitebox_data.spec.classes[static_cast<size_t>(a)].name +
                " has only " + std::to_string(per_class[static_cast<size_t>(a)].size()) +
                " examples, need " + std::to_string(samples_per_class));

    CorrespondenceMatrix m;
    m.rows = whitebox_data.spec.class_names();
    m.cols = blackbox_class_names;
    m.values.assign(static_cast<size_t>(A), std::vector<double>(static_cast<size_t>(B), 0.0));
    m.samples_per_class = samples_per_class;
    m.seed = seed;
    m.oracle_digest = oracle_digest;

    Rng rng(seed);
    int calls_done = 0;
    for (int a = 0; a < A; ++a) {
        const auto& pool = per_class[static_cast<size_t>(a)];
        auto perm = rng.permutation(static_cast<int>(pool.size()));
        std::vector<Tensor> batch;
        batch.reserve(static_cast<size_t>(samples_per_class));
        for (int i = 0; i < samples_per_class; ++i)
            batch.push_back(
                whitebox_data.inputs[static_cast<size_t>(pool[static_cast<size_t>(perm[static_cast<size_t>(i)])])]);
        std::vector<int> preds;
        try {
            preds = oracle(batch);
        } catch (const std::exception& e) {
            throw std::runtime_error("build_matrix: oracle failed after " +
                                     std::to_string(calls_done) + " calls: " + e.what());
        }
        if (static_cast<int>(preds.size()) != samples_per_class)
            throw std::runtime_error("build_matrix: oracle returned wrong count");
        for (int p : preds) {
            if (p < 0 || p >= B)
                throw std::runtime_error("build_matrix: oracle label " + std::to_string(p) +
                                         " outside blackbox label space");
            m.values[static_cast<size_t>(a)][static_cast<size_t>(p)] += 1.0;
        }
        calls_done += samples_per_class;
        for (auto& v : m.values[static_cast<size_t>(a)]) v /= samples_per_class;
    }
    return m;
}

ProxyRanking select_proxy(const CorrespondenceMatrix& matrix,
                          const std::vector<std::string>& target_set, int k) {
    if (k < 1) throw std::invalid_argument("select_proxy: k must be >= 1");
    if (target_set.empty()) throw std::invalid_argument("select_proxy: empty target set");
    std::vector<int> col_idx;
    for (const auto& t : target_set) {
        const int c = matrix.col_index(t);
        if (c < 0) throw std::invalid_argument("select_proxy: unknown target class " + t);
        col_idx.push_back(c);
    }
    std::vector<std::pair<double, int>> scored;  // (-score, row) sorts ties by row index
    for (size_t a = 0; a < matrix.rows.size(); ++a) {
        double s = 0.0;
        for (int c : col_idx) s += matrix.values[a][static_cast<size_t>(c)];
        scored.push_back({-s, static_cast<int>(a)});
    }
    std::sort(scored.begin(), scored.end());
    ProxyRanking out;
    out.target = target_set[0];
    for (size_t i = 1; i < target_set.size(); ++i) out.target += "+" + target_set[i];
    for (int i = 0; i < k && i < static_cast<int>(scored.size()); ++i)
        out.ranked.push_back({matrix.rows[static_cast<size_t>(scored[static_cast<size_t>(i)].second)],
                              -scored[static_cast<size_t>(i)].first});
    return out;
}

double consistency_score(const CorrespondenceMatrix& m1, const CorrespondenceMatrix& m2) {
    if (m1.rows != m2.rows || m1.cols != m2.cols)
        throw std::invalid_argument("consistency_score: row/col label mismatch");
    if (m1.rows.empty()) throw std::invalid_argument("consistency_score: empty matrix");
    int agree = 0;
    for (size_t a = 0; a < m1.rows.size(); ++a)
        if (m1.row_argmax(static_cast<int>(a)) == m2.row_argmax(static_cast<int>(a))) ++agree;
    return static_cast<double>(agree) / m1.rows.size();
}

std::vector<std::tuple<std::string, std::string, double>> hotspots(
    const CorrespondenceMatrix& matrix) {
    const double threshold = 2.0 / static_cast<double>(matrix.cols.size());
    std::vector<std::tuple<std::string, std::string, double>> out;
    for (size_t a = 0; a < matrix.rows.size(); ++a)
        for (size_t b = 0; b < matrix.cols.size(); ++b)
            if (matrix.values[a][b] >= threshold)
                out.push_back({matrix.rows[a], matrix.cols[b], matrix.values[a][b]});
    std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
        return std::get<2>(x) > std::get<2>(y);
    });
    return out;
}

}  // namespace xfer::corr
