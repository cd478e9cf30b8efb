#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

#include "xfer/pipeline.hpp"

namespace {

struct GlobalOpts {
    std::string config_path;
    uint64_t seed = 0;
    bool seed_set = false;
    std::string out;
};

xfer::pipe::ExperimentConfig make_config(const GlobalOpts& g) {
    xfer::pipe::ExperimentConfig c;
    if (!g.config_path.empty()) c = xfer::pipe::ExperimentConfig::load(g.config_path);
    if (g.seed_set) c.seed = g.seed;
    if (!g.out.empty()) c.output_root = g.out;
    return c;
}

void print_status(const std::vector<xfer::pipe::StageStatus>& statuses) {
    for (const auto& s : statuses)
        std::printf("%-16s %s  digest=%s\n", s.stage.c_str(),
                    s.skipped ? "up-to-date" : "done      ", s.digest.c_str());
}

void run_stages(const GlobalOpts& g, const std::vector<std::string>& stages) {
    print_status(xfer::pipe::run_pipeline(make_config(g), stages));
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

void cmd_proxy(const std::string& matrix_path, const std::string& target, int k) {
    auto m = xfer::corr::CorrespondenceMatrix::load(matrix_path);
    auto ranking = xfer::corr::select_proxy(m, split_commas(target), k);
    std::printf("target %s\n", ranking.target.c_str());
    for (const auto& [name, score] : ranking.ranked)
        std::printf("  %-12s %.6f\n", name.c_str(), score);
}

void cmd_evaluate_direct(const std::string& adv_dir, const std::string& blackboxes,
                         const std::string& target, const std::string& out_dir) {
    namespace fs = std::filesystem;
    auto batch = xfer::atk::load_batch(adv_dir);
    auto idx = xfer::io::load_json(fs::path(adv_dir) / "indices.json");
    const auto truths = idx.at("true_labels").get<std::vector<int>>();
    const std::string proxy = idx.value("proxy_name", "");

    fs::create_directories(out_dir);
    for (const auto& stem : split_commas(blackboxes)) {
        auto bb = xfer::model::load_model(stem);
        std::vector<int> target_set;
        for (const auto& name : split_commas(target)) {
            const int t = bb.label_space.class_index(name);
            if (t < 0) throw std::runtime_error("unknown target class '" + name + "'");
            target_set.push_back(t);
        }
        // Eligibility: clean image correctly classified, true class outside
        // the target set.
        std::vector<xfer::atk::AdversarialExample> subset;
        std::vector<int> labels;
        for (size_t i = 0; i < batch.size(); ++i) {
            const int pred = xfer::model::predict(bb, {batch[i].clean}).labels[0];
            const bool in_target = std::find(target_set.begin(), target_set.end(), truths[i]) !=
                                   target_set.end();
            if (pred != truths[i] || in_target) continue;
            auto ex = batch[i];
            ex.target_set = target_set;
            subset.push_back(std::move(ex));
            labels.push_back(truths[i]);
        }
        const std::string bb_id = fs::path(stem).filename().string();
        auto r = xfer::eval::compute_metrics(subset, labels, bb, target_set, bb_id, proxy);
        r.target_name = target;
        r.save(fs::path(out_dir) / ("result-" + bb_id + ".json"));
        std::printf("%-16s n=%d  error %.1f  tsuc %.1f\n", bb_id.c_str(), r.n_attacked,
                    100.0 * r.error, 100.0 * r.tsuc);
    }
}

void cmd_report_direct(const std::string& results_dir, const std::string& layout,
                       const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(results_dir))
        if (e.path().extension() == ".json" &&
            e.path().filename().string().rfind("result-", 0) == 0)
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<xfer::eval::EvalResult> results;
    for (const auto& f : files) results.push_back(xfer::eval::EvalResult::load(f));
    if (results.empty()) throw std::runtime_error("no result-*.json files in " + results_dir);
    const auto lay = layout == "averaged" ? xfer::eval::Layout::Averaged
                                          : xfer::eval::Layout::PerBlackbox;
    auto rep = xfer::eval::render_report(results, lay);
    const std::string dest = out_dir.empty() ? results_dir : out_dir;
    rep.save(dest, "report-" + layout);
    std::fputs(rep.text.c_str(), stdout);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Disjoint-label-space transfer attack toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOpts g;
    app.add_option("--config", g.config_path, "Experiment config JSON");
    app.add_option_function<uint64_t>(
        "--seed",
        [&g](uint64_t v) {
            g.seed = v;
            g.seed_set = true;
        },
        "Seed override");
    app.add_option("--out", g.out, "Output root override");

    // Stage subcommands share the global options.
    const std::vector<std::pair<std::string, std::string>> stage_cmds = {
        {"build-splits", "splits"},       {"train", "train"},
        {"train-aux", "train-aux"},       {"correspondence", "correspondence"},
        {"tune-layers", "tune-layers"},   {"attack", "attack"},
        {"query-attack", "query-attack"},
    };
    for (const auto& [cmd, stage] : stage_cmds)
        app.add_subcommand(cmd, "Run the " + stage + " stage")
            ->callback([&g, stage = stage]() { run_stages(g, {stage}); });

    // evaluate: config-driven stage, or direct mode on an attack directory.
    std::string adv_dir, blackboxes, target, eval_out;
    auto* ev = app.add_subcommand("evaluate", "Compute error/tSuc metrics");
    ev->add_option("--adv", adv_dir, "Adversarial batch directory (direct mode)");
    ev->add_option("--blackboxes", blackboxes, "Comma-separated checkpoint stems");
    ev->add_option("--target", target, "Target class name(s), comma-separated");
    ev->add_option("--eval-out", eval_out, "Result directory (direct mode)");
    ev->callback([&]() {
        if (adv_dir.empty()) {
            run_stages(g, {"evaluate"});
        } else {
            if (blackboxes.empty() || target.empty() || eval_out.empty())
                throw CLI::ValidationError(
                    "evaluate", "--adv requires --blackboxes, --target, and --eval-out");
            cmd_evaluate_direct(adv_dir, blackboxes, target, eval_out);
        }
    });

    // report: config-driven stage, or direct mode on a results directory.
    std::string results_dir, layout = "averaged", report_out;
    auto* rp = app.add_subcommand("report", "Render result tables");
    rp->add_option("--results", results_dir, "Directory of result-*.json (direct mode)");
    rp->add_option("--layout", layout, "per-blackbox | averaged")
        ->check(CLI::IsMember({"per-blackbox", "averaged"}));
    rp->add_option("--report-out", report_out, "Report directory (direct mode)");
    rp->callback([&]() {
        if (results_dir.empty())
            run_stages(g, {"report"});
        else
            cmd_report_direct(results_dir, layout, report_out);
    });

    // proxy: rank proxy classes from a correspondence matrix.
    std::string matrix_path, proxy_target;
    int proxy_k = 5;
    auto* px = app.add_subcommand("proxy", "Rank proxy classes for a target set");
    px->add_option("--matrix", matrix_path, "Correspondence CSV")->required();
    px->add_option("--target", proxy_target, "Target class name(s), comma-separated")->required();
    px->add_option("--k", proxy_k, "Ranking size");
    px->callback([&]() { cmd_proxy(matrix_path, proxy_target, proxy_k); });

    // pipeline: run a stage subset (default all) in canonical order.
    std::string stages_arg;
    auto* pl = app.add_subcommand("pipeline", "Run pipeline stages in order");
    pl->add_option("--stages", stages_arg, "Comma-separated stage subset (default: all)");
    pl->callback([&]() { run_stages(g, split_commas(stages_arg)); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
