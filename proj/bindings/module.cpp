#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "xfer/pipeline.hpp"

namespace py = pybind11;
using namespace xfer;

namespace {

Tensor to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<int> shape;
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(static_cast<int>(a.shape(i)));
    std::vector<double> data(a.data(), a.data() + a.size());
    return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<double> out(shape);
    std::copy(t.data.begin(), t.data.end(), out.mutable_data());
    return out;
}

/// Score oracle backed by a python callable x -> score vector.
class PyOracle final : public query::ScoreOracle {
public:
    PyOracle(py::function fn, int budget) : fn_(std::move(fn)), ledger_(budget) {}
    Tensor scores(const Tensor& x) override {
        ledger_.charge(1);
        return to_tensor(fn_(to_array(x)).cast<py::array_t<double>>());
    }
    query::QueryLedger& ledger() override { return ledger_; }

private:
    py::function fn_;
    query::QueryLedger ledger_;
};

}  // namespace

PYBIND11_MODULE(_xfer, m) {
    m.doc() = "Cross-label-space transfer attack toolkit (native core)";

    // ------------------------------------------------------------- models
    py::class_<model::ModelHandle>(m, "Model")
        .def_static("load",
                    [](const std::filesystem::path& dir) { return model::load_model(dir); })
        .def_property_readonly("architecture",
                               [](const model::ModelHandle& h) { return h.architecture_id; })
        .def_property_readonly("num_classes",
                               [](const model::ModelHandle& h) { return h.num_classes(); })
        .def_property_readonly("val_accuracy",
                               [](const model::ModelHandle& h) { return h.val_accuracy; })
        .def_property_readonly(
            "class_names",
            [](const model::ModelHandle& h) { return h.label_space.class_names(); })
        .def("predict",
             [](model::ModelHandle& h, const std::vector<py::array_t<double>>& batch) {
                 std::vector<Tensor> xs;
                 for (const auto& a : batch) xs.push_back(to_tensor(a));
                 auto p = model::predict(h, xs);
                 std::vector<py::array_t<double>> probs;
                 for (const auto& row : p.probs) probs.push_back(to_array(row));
                 return py::make_tuple(p.labels, probs);
             },
             py::arg("batch"), "Batch of CHW arrays -> (labels, probability rows)");

    // ------------------------------------------------------------- attacks
    m.def(
        "project_linf",
        [](const py::array_t<double>& clean, const py::array_t<double>& delta, double epsilon) {
            return to_array(atk::project_linf(to_tensor(clean), to_tensor(delta), epsilon));
        },
        py::arg("clean"), py::arg("delta"), py::arg("epsilon"),
        "Project a perturbation onto the L-inf ball intersected with the [0,1] box");

    m.def(
        "tmim_attack",
        [](std::vector<model::ModelHandle*> ensemble, const py::array_t<double>& clean,
           int proxy, double epsilon, double alpha, int iters, double momentum_decay) {
            atk::AttackConfig cfg;
            cfg.epsilon = epsilon;
            cfg.alpha = alpha;
            cfg.iters = iters;
            cfg.momentum_decay = momentum_decay;
            auto ex = atk::tmim_attack(cfg, ensemble, to_tensor(clean), proxy);
            return py::make_tuple(to_array(ex.delta), ex.loss_trace);
        },
        py::arg("ensemble"), py::arg("clean"), py::arg("proxy"),
        py::arg("epsilon") = 16.0 / 255.0, py::arg("alpha") = 2.0 / 255.0,
        py::arg("iters") = 10, py::arg("momentum_decay") = 1.0,
        "Momentum-iterative proxy-targeted attack; returns (delta, loss trace)");

    // ------------------------------------------------------- correspondence
    m.def(
        "load_matrix",
        [](const std::filesystem::path& path) {
            auto mat = corr::CorrespondenceMatrix::load(path);
            py::array_t<double> values({mat.rows.size(), mat.cols.size()});
            auto v = values.mutable_unchecked<2>();
            for (size_t a = 0; a < mat.rows.size(); ++a)
                for (size_t b = 0; b < mat.cols.size(); ++b) v(a, b) = mat.values[a][b];
            return py::make_tuple(mat.rows, mat.cols, values);
        },
        py::arg("path"), "Correspondence CSV -> (row names, column names, matrix)");

    // --------------------------------------------------------------- query
    m.def(
        "margin_loss",
        [](const py::array_t<double>& probs, const std::vector<int>& target_set) {
            return query::margin_loss(to_tensor(probs), target_set);
        },
        py::arg("probs"), py::arg("target_set"));

    m.def(
        "rgf_estimate",
        [](py::function score_fn, py::function loss_fn, const py::array_t<double>& x,
           int directions, double sigma, uint64_t seed, int budget) {
            PyOracle oracle(std::move(score_fn), budget);
            Rng rng(seed);
            auto loss = [&loss_fn](const Tensor& s) {
                return loss_fn(to_array(s)).cast<double>();
            };
            auto g = query::rgf_estimate(oracle, loss, to_tensor(x), directions, sigma, rng);
            return py::make_tuple(to_array(g), oracle.ledger().used());
        },
        py::arg("score_fn"), py::arg("loss_fn"), py::arg("x"), py::arg("directions") = 20,
        py::arg("sigma") = 1e-3, py::arg("seed") = 11, py::arg("budget") = 5000,
        "Gradient-free estimate of d loss(score(x)) / dx; returns (estimate, queries used)");

    m.def(
        "tsuc_vs_queries",
        [](const std::map<std::string, std::vector<int>>& success_queries,
           const std::vector<int>& checkpoints) {
            auto t = query::tsuc_vs_queries(success_queries, checkpoints);
            std::map<std::string, std::vector<double>> out;
            for (size_t v = 0; v < t.variants.size(); ++v) out[t.variants[v]] = t.tsuc[v];
            return out;
        },
        py::arg("success_queries"), py::arg("checkpoints"));

    // ------------------------------------------------------------ pipeline
    m.def(
        "run_pipeline",
        [](const py::dict& config, const std::vector<std::string>& stages) {
            const auto j = io::json::parse(
                py::module_::import("json").attr("dumps")(config).cast<std::string>());
            auto statuses = pipe::run_pipeline(pipe::ExperimentConfig::from_json(j), stages);
            py::list out;
            for (const auto& s : statuses) {
                py::dict d;
                d["stage"] = s.stage;
                d["skipped"] = s.skipped;
                d["digest"] = s.digest;
                out.append(d);
            }
            return out;
        },
        py::arg("config"), py::arg("stages") = std::vector<std::string>{},
        "Run the experiment pipeline (or a stage subset) from a config dict");

    m.def("stage_order", [] { return pipe::stage_order(); });
}
