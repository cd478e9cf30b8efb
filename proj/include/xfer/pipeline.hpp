#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "xfer/attack.hpp"
#include "xfer/correspondence.hpp"
#include "xfer/dataset.hpp"
#include "xfer/eval.hpp"
#include "xfer/io.hpp"
#include "xfer/model.hpp"
#include "xfer/query.hpp"

namespace xfer::pipe {

/// Strict, versioned experiment configuration. Unknown JSON keys are
/// rejected; absent keys take the defaults below.
struct ExperimentConfig {
    int version = 1;
    uint64_t seed = 7;
    std::filesystem::path output_root = "runs/desk";

    ds::BaseDatasetDesc base;
    std::string mapping_path;    // empty -> canonical desk mapping
    std::string partition_path;  // empty -> canonical desk partition

    std::vector<std::string> whitebox_archs = {"cnn-a", "cnn-b"};
    std::vector<std::string> blackbox_archs = {"cnn-c", "cnn-d", "cnn-f", "cnn-g"};
    model::TrainHyper train;

    int corr_samples_per_class = 20;
    int top_pairs = 3;

    atk::AttackConfig attack;  // family/layer_sets/eta are filled per stage
    std::vector<double> eta = {1e-4};  // broadcast across whiteboxes when size 1
    int max_layer_set = 4;
    int tuning_examples = 16;
    int attack_examples = 60;  // clean images per correspondence pair

    int query_budget = 5000;
    int query_directions = 20;
    double query_sigma = 1e-3;
    std::vector<int> query_checkpoints = {0, 100, 250, 500};
    int query_examples = 20;

    io::json to_json() const;
    static ExperimentConfig from_json(const io::json& j);
    static ExperimentConfig load(const std::filesystem::path& path);
    std::string digest() const { return io::digest(to_json()); }

    std::vector<double> eta_per_whitebox() const;
};

/// Canonical stage order; run_pipeline executes any subset in this order.
const std::vector<std::string>& stage_order();

struct StageStatus {
    std::string stage;
    bool skipped = false;  // digests unchanged, nothing re-done
    std::string digest;
};

/// Runs the requested stages (empty = all) under <output_root>/{splits,
/// models,aux,correspondence,attacks,query,eval}. Each stage records a
/// manifest with its input digest; re-running with unchanged digests is a
/// no-op. Missing prerequisites raise an error naming the stage to run.
std::vector<StageStatus> run_pipeline(const ExperimentConfig& config,
                                      std::vector<std::string> stages = {});

// Individual stages (used by the pipeline and the CLI subcommands).
StageStatus stage_splits(const ExperimentConfig& config);
StageStatus stage_train(const ExperimentConfig& config);
StageStatus stage_correspondence(const ExperimentConfig& config);
StageStatus stage_train_aux(const ExperimentConfig& config);
StageStatus stage_tune_layers(const ExperimentConfig& config);
StageStatus stage_attack(const ExperimentConfig& config);
StageStatus stage_query_attack(const ExperimentConfig& config);
StageStatus stage_evaluate(const ExperimentConfig& config);
StageStatus stage_report(const ExperimentConfig& config);

/// (proxy class on the A side, target class on the B side) pairs picked from
/// the blackbox-averaged correspondence matrix, strongest cells first.
struct PairSelection {
    int proxy_index = -1;
    std::string proxy_name;
    int target_index = -1;
    std::string target_name;
    double score = 0.0;
};
std::vector<PairSelection> load_pairs(const ExperimentConfig& config);

}  // namespace xfer::pipe
