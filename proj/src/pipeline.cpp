#include "xfer/pipeline.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "xfer/rng.hpp"

namespace xfer::pipe {

namespace {

uint64_t fnv64(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

uint64_t derive_seed(uint64_t base, const std::string& tag) { return base ^ fnv64(tag); }

void check_keys(const io::json& j, const std::set<std::string>& allowed,
                const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key))
            throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
}

std::filesystem::path stage_dir(const ExperimentConfig& c, const std::string& name) {
    return c.output_root / name;
}

std::filesystem::path manifest_path(const ExperimentConfig& c, const std::string& dir,
                                    const std::string& stage) {
    return stage_dir(c, dir) / (stage + ".manifest.json");
}

bool up_to_date(const std::filesystem::path& manifest, const std::string& digest) {
    if (!std::filesystem::exists(manifest)) return false;
    auto j = io::load_json(manifest);
    return j.value("digest", "") != "" && j["digest"] == digest;
}

void write_manifest(const ExperimentConfig& c, const std::filesystem::path& manifest,
                    const std::string& stage, const std::string& digest,
                    io::json extra = io::json::object()) {
    extra["stage"] = stage;
    extra["digest"] = digest;
    extra["seed"] = c.seed;
    extra["config_digest"] = c.digest();
    io::save_json(manifest, extra);
}

std::string require_stage(const ExperimentConfig& c, const std::string& needed_by,
                          const std::string& dir, const std::string& stage) {
    auto m = manifest_path(c, dir, stage);
    if (!std::filesystem::exists(m))
        throw std::runtime_error("stage '" + needed_by + "' requires artifacts from stage '" +
                                 stage + "'; run stage '" + stage + "' first");
    return io::load_json(m).value("digest", "");
}

struct World {
    ds::BaseDatasetDesc base;
    ds::EnvironmentPair env;
};

World load_world(const ExperimentConfig& c) {
    World w;
    w.base = ds::BaseDatasetDesc::load(stage_dir(c, "splits") / "base.json");
    w.env = ds::load_environment(stage_dir(c, "splits") / "environment.json");
    return w;
}

model::ModelHandle load_wb(const ExperimentConfig& c, const std::string& arch) {
    return model::load_model(stage_dir(c, "models") / ("wb-" + arch));
}
model::ModelHandle load_bb(const ExperimentConfig& c, const std::string& arch) {
    return model::load_model(stage_dir(c, "models") / ("bb-" + arch));
}

std::filesystem::path pair_dir(const ExperimentConfig& c, const std::string& family, int k) {
    return stage_dir(c, "attacks") / family / ("pair-" + std::to_string(k));
}

}  // namespace

std::vector<double> ExperimentConfig::eta_per_whitebox() const {
    if (eta.size() == whitebox_archs.size()) return eta;
    if (eta.size() == 1) return std::vector<double>(whitebox_archs.size(), eta[0]);
    throw std::invalid_argument("config: eta must have one entry or one per whitebox");
}

io::json ExperimentConfig::to_json() const {
    return {{"version", version},
            {"seed", seed},
            {"output_root", output_root.string()},
            {"base", base.to_json()},
            {"mapping_path", mapping_path},
            {"partition_path", partition_path},
            {"whitebox_archs", whitebox_archs},
            {"blackbox_archs", blackbox_archs},
            {"train",
             {{"epochs", train.epochs},
              {"batch_size", train.batch_size},
              {"lr", train.lr},
              {"momentum", train.momentum},
              {"lr_decay", train.lr_decay},
              {"decay_every", train.decay_every}}},
            {"correspondence",
             {{"samples_per_class", corr_samples_per_class}, {"top_pairs", top_pairs}}},
            {"attack",
             {{"epsilon", attack.epsilon},
              {"alpha", attack.alpha},
              {"iters", attack.iters},
              {"momentum_decay", attack.momentum_decay},
              {"eta", eta},
              {"max_layer_set", max_layer_set},
              {"tuning_examples", tuning_examples},
              {"examples_per_pair", attack_examples}}},
            {"query",
             {{"budget", query_budget},
              {"directions", query_directions},
              {"sigma", query_sigma},
              {"checkpoints", query_checkpoints},
              {"examples", query_examples}}}};
}

ExperimentConfig ExperimentConfig::from_json(const io::json& j) {
    check_keys(j, {"version", "seed", "output_root", "base", "mapping_path", "partition_path",
                   "whitebox_archs", "blackbox_archs", "train", "correspondence", "attack",
                   "query"},
               "top level");
    ExperimentConfig c;
    c.version = j.value("version", 1);
    if (c.version != 1)
        throw std::invalid_argument("config: unsupported version " + std::to_string(c.version));
    c.seed = j.value("seed", c.seed);
    if (j.contains("output_root")) c.output_root = j.at("output_root").get<std::string>();
    if (j.contains("base")) {
        check_keys(j.at("base"),
                   {"name", "seed", "image_size", "channels", "fine_classes", "fine_per_coarse",
                    "train_per_class", "val_per_class"},
                   "base");
        c.base = ds::BaseDatasetDesc::from_json(j.at("base"));
    }
    c.mapping_path = j.value("mapping_path", c.mapping_path);
    c.partition_path = j.value("partition_path", c.partition_path);
    if (j.contains("whitebox_archs"))
        c.whitebox_archs = j.at("whitebox_archs").get<std::vector<std::string>>();
    if (j.contains("blackbox_archs"))
        c.blackbox_archs = j.at("blackbox_archs").get<std::vector<std::string>>();
    if (j.contains("train")) {
        const auto& t = j.at("train");
        check_keys(t, {"epochs", "batch_size", "lr", "momentum", "lr_decay", "decay_every"},
                   "train");
        c.train.epochs = t.value("epochs", c.train.epochs);
        c.train.batch_size = t.value("batch_size", c.train.batch_size);
        c.train.lr = t.value("lr", c.train.lr);
        c.train.momentum = t.value("momentum", c.train.momentum);
        c.train.lr_decay = t.value("lr_decay", c.train.lr_decay);
        c.train.decay_every = t.value("decay_every", c.train.decay_every);
    }
    if (j.contains("correspondence")) {
        const auto& co = j.at("correspondence");
        check_keys(co, {"samples_per_class", "top_pairs"}, "correspondence");
        c.corr_samples_per_class = co.value("samples_per_class", c.corr_samples_per_class);
        c.top_pairs = co.value("top_pairs", c.top_pairs);
    }
    if (j.contains("attack")) {
        const auto& a = j.at("attack");
        check_keys(a,
                   {"epsilon", "alpha", "iters", "momentum_decay", "eta", "max_layer_set",
                    "tuning_examples", "examples_per_pair"},
                   "attack");
        c.attack.epsilon = a.value("epsilon", c.attack.epsilon);
        c.attack.alpha = a.value("alpha", c.attack.alpha);
        c.attack.iters = a.value("iters", c.attack.iters);
        c.attack.momentum_decay = a.value("momentum_decay", c.attack.momentum_decay);
        if (a.contains("eta")) c.eta = a.at("eta").get<std::vector<double>>();
        c.max_layer_set = a.value("max_layer_set", c.max_layer_set);
        c.tuning_examples = a.value("tuning_examples", c.tuning_examples);
        c.attack_examples = a.value("examples_per_pair", c.attack_examples);
    }
    if (j.contains("query")) {
        const auto& q = j.at("query");
        check_keys(q, {"budget", "directions", "sigma", "checkpoints", "examples"}, "query");
        c.query_budget = q.value("budget", c.query_budget);
        c.query_directions = q.value("directions", c.query_directions);
        c.query_sigma = q.value("sigma", c.query_sigma);
        if (q.contains("checkpoints"))
            c.query_checkpoints = q.at("checkpoints").get<std::vector<int>>();
        c.query_examples = q.value("examples", c.query_examples);
    }
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    return from_json(io::load_json(path));
}

const std::vector<std::string>& stage_order() {
    static const std::vector<std::string> order = {
        "splits",  "train",        "correspondence", "train-aux", "tune-layers",
        "attack",  "query-attack", "evaluate",       "report"};
    return order;
}

// ---------------------------------------------------------------- splits

StageStatus stage_splits(const ExperimentConfig& c) {
    const auto dir = stage_dir(c, "splits");
    const std::string digest = io::digest(io::json{
        {"base", c.base.to_json()}, {"mapping", c.mapping_path}, {"partition", c.partition_path}});
    const auto manifest = manifest_path(c, "splits", "splits");
    if (up_to_date(manifest, digest)) return {"splits", true, digest};

    std::filesystem::create_directories(dir);
    c.base.save(dir / "base.json");
    const auto mapping_file = dir / "mapping.txt";
    const auto partition_file = dir / "partition.txt";
    if (c.mapping_path.empty())
        io::write_text(mapping_file, ds::desk_mapping_text(c.base));
    else
        io::write_text(mapping_file, io::read_text(c.mapping_path));
    if (c.partition_path.empty())
        io::write_text(partition_file, ds::desk_partition_text(c.base));
    else
        io::write_text(partition_file, io::read_text(c.partition_path));

    auto supers = ds::build_superclasses(mapping_file, c.base);
    auto partition = ds::parse_partition(partition_file);
    auto env = ds::build_environment(supers, partition, c.base.name);
    ds::save_environment(dir / "environment.json", env);

    write_manifest(c, manifest, "splits", digest,
                   {{"classes_a", env.split_a.num_classes()},
                    {"classes_b", env.split_b.num_classes()}});
    return {"splits", false, digest};
}

// ----------------------------------------------------------------- train

StageStatus stage_train(const ExperimentConfig& c) {
    const std::string splits_digest = require_stage(c, "train", "splits", "splits");
    const std::string digest = io::digest(io::json{{"splits", splits_digest},
                                                   {"wb", c.whitebox_archs},
                                                   {"bb", c.blackbox_archs},
                                                   {"train", c.to_json().at("train")},
                                                   {"seed", c.seed}});
    const auto manifest = manifest_path(c, "models", "train");
    if (up_to_date(manifest, digest)) return {"train", true, digest};

    auto w = load_world(c);
    const auto a_train = ds::materialize(w.base, w.env.split_a, ds::Role::Train);
    const auto a_val = ds::materialize(w.base, w.env.split_a, ds::Role::Validation);
    const auto b_train = ds::materialize(w.base, w.env.split_b, ds::Role::Train);
    const auto b_val = ds::materialize(w.base, w.env.split_b, ds::Role::Validation);

    std::filesystem::create_directories(stage_dir(c, "models"));
    io::json acc = io::json::object();
    for (const auto& arch : c.whitebox_archs) {
        auto hyper = c.train;
        hyper.seed = derive_seed(c.seed, "train:wb:" + arch);
        auto m = model::train_classifier(a_train, arch, hyper, &a_val);
        model::save_model(stage_dir(c, "models") / ("wb-" + arch), m);
        acc["wb-" + arch] = m.val_accuracy;
    }
    for (const auto& arch : c.blackbox_archs) {
        auto hyper = c.train;
        hyper.seed = derive_seed(c.seed, "train:bb:" + arch);
        auto m = model::train_classifier(b_train, arch, hyper, &b_val);
        model::save_model(stage_dir(c, "models") / ("bb-" + arch), m);
        acc["bb-" + arch] = m.val_accuracy;
    }
    write_manifest(c, manifest, "train", digest, {{"val_accuracy", acc}});
    return {"train", false, digest};
}

// -------------------------------------------------------- correspondence

StageStatus stage_correspondence(const ExperimentConfig& c) {
    const std::string train_digest = require_stage(c, "correspondence", "models", "train");
    const std::string digest =
        io::digest(io::json{{"train", train_digest},
                            {"samples_per_class", c.corr_samples_per_class},
                            {"top_pairs", c.top_pairs},
                            {"seed", c.seed}});
    const auto manifest = manifest_path(c, "correspondence", "correspondence");
    if (up_to_date(manifest, digest)) return {"correspondence", true, digest};

    auto w = load_world(c);
    const auto a_train = ds::materialize(w.base, w.env.split_a, ds::Role::Train);
    const auto b_names = w.env.split_b.class_names();
    const auto dir = stage_dir(c, "correspondence");
    std::filesystem::create_directories(dir);

    std::vector<corr::CorrespondenceMatrix> matrices;
    for (const auto& arch : c.blackbox_archs) {
        auto bb = load_bb(c, arch);
        corr::LabelOracle oracle = [&bb](const std::vector<Tensor>& batch) {
            return model::predict(bb, batch).labels;
        };
        auto m = corr::build_matrix(oracle, a_train, b_names, c.corr_samples_per_class,
                                    derive_seed(c.seed, "corr:" + arch),
                                    io::digest("bb-" + arch + ":" + std::to_string(bb.seed)));
        m.save(dir / (arch + ".csv"));
        matrices.push_back(std::move(m));
    }

    // Blackbox-averaged matrix drives pair selection.
    corr::CorrespondenceMatrix mean = matrices[0];
    for (size_t k = 1; k < matrices.size(); ++k)
        for (size_t a = 0; a < mean.values.size(); ++a)
            for (size_t b = 0; b < mean.values[a].size(); ++b)
                mean.values[a][b] += matrices[k].values[a][b];
    for (auto& row : mean.values)
        for (auto& v : row) v /= static_cast<double>(matrices.size());
    mean.oracle_digest = "mean";
    mean.save(dir / "mean.csv");

    struct Cell {
        double neg_score;
        int a, b;
        bool operator<(const Cell& o) const {
            return std::tie(neg_score, a, b) < std::tie(o.neg_score, o.a, o.b);
        }
    };
    std::vector<Cell> cells;
    for (size_t a = 0; a < mean.rows.size(); ++a)
        for (size_t b = 0; b < mean.cols.size(); ++b)
            cells.push_back({-mean.values[a][b], static_cast<int>(a), static_cast<int>(b)});
    std::sort(cells.begin(), cells.end());

    io::json pairs = io::json::array();
    for (int k = 0; k < c.top_pairs && k < static_cast<int>(cells.size()); ++k)
        pairs.push_back({{"proxy_index", cells[static_cast<size_t>(k)].a},
                         {"proxy_name", mean.rows[static_cast<size_t>(cells[static_cast<size_t>(k)].a)]},
                         {"target_index", cells[static_cast<size_t>(k)].b},
                         {"target_name", mean.cols[static_cast<size_t>(cells[static_cast<size_t>(k)].b)]},
                         {"score", -cells[static_cast<size_t>(k)].neg_score}});
    io::save_json(dir / "pairs.json", pairs);

    write_manifest(c, manifest, "correspondence", digest, {{"pairs", pairs}});
    return {"correspondence", false, digest};
}

std::vector<PairSelection> load_pairs(const ExperimentConfig& c) {
    auto j = io::load_json(stage_dir(c, "correspondence") / "pairs.json");
    std::vector<PairSelection> out;
    for (const auto& p : j)
        out.push_back({p.at("proxy_index").get<int>(), p.at("proxy_name").get<std::string>(),
                       p.at("target_index").get<int>(), p.at("target_name").get<std::string>(),
                       p.at("score").get<double>()});
    return out;
}

// ------------------------------------------------------------- train-aux

StageStatus stage_train_aux(const ExperimentConfig& c) {
    const std::string train_digest = require_stage(c, "train-aux", "models", "train");
    const std::string corr_digest =
        require_stage(c, "train-aux", "correspondence", "correspondence");
    const std::string digest = io::digest(
        io::json{{"train", train_digest}, {"corr", corr_digest}, {"seed", c.seed}});
    const auto manifest = manifest_path(c, "aux", "train-aux");
    if (up_to_date(manifest, digest)) return {"train-aux", true, digest};

    auto w = load_world(c);
    const auto a_train = ds::materialize(w.base, w.env.split_a, ds::Role::Train);
    std::set<int> proxy_set;
    for (const auto& p : load_pairs(c)) proxy_set.insert(p.proxy_index);
    std::vector<int> proxies(proxy_set.begin(), proxy_set.end());

    std::filesystem::create_directories(stage_dir(c, "aux"));
    for (const auto& arch : c.whitebox_archs) {
        auto wb = load_wb(c, arch);
        auto aux = model::train_aux_models(wb, a_train, model::candidate_layers(wb), proxies,
                                           derive_seed(c.seed, "aux:" + arch));
        model::save_aux(stage_dir(c, "aux") / ("wb-" + arch + "-aux.json"), aux);
    }
    write_manifest(c, manifest, "train-aux", digest, {{"proxy_classes", proxies}});
    return {"train-aux", false, digest};
}

// ----------------------------------------------------------- tune-layers

StageStatus stage_tune_layers(const ExperimentConfig& c) {
    const std::string aux_digest = require_stage(c, "tune-layers", "aux", "train-aux");
    const std::string digest =
        io::digest(io::json{{"aux", aux_digest},
                            {"max_layer_set", c.max_layer_set},
                            {"tuning_examples", c.tuning_examples},
                            {"eta", c.eta},
                            {"seed", c.seed}});
    const auto manifest = manifest_path(c, "aux", "tune-layers");
    if (up_to_date(manifest, digest)) return {"tune-layers", true, digest};

    auto w = load_world(c);
    const auto b_val = ds::materialize(w.base, w.env.split_b, ds::Role::Validation);

    std::vector<model::ModelHandle> whiteboxes;
    std::vector<model::AuxModelSet> aux_sets;
    for (const auto& arch : c.whitebox_archs) {
        whiteboxes.push_back(load_wb(c, arch));
        aux_sets.push_back(model::load_aux(stage_dir(c, "aux") / ("wb-" + arch + "-aux.json")));
    }
    std::vector<model::ModelHandle*> wb_ptrs;
    std::vector<const model::AuxModelSet*> aux_ptrs;
    std::vector<std::vector<model::LayerId>> candidates;
    for (size_t i = 0; i < whiteboxes.size(); ++i) {
        wb_ptrs.push_back(&whiteboxes[i]);
        aux_ptrs.push_back(&aux_sets[i]);
        candidates.push_back(model::candidate_layers(whiteboxes[i]));
    }

    std::set<int> proxy_set;
    for (const auto& p : load_pairs(c)) proxy_set.insert(p.proxy_index);
    std::vector<int> proxies(proxy_set.begin(), proxy_set.end());

    Rng rng(derive_seed(c.seed, "tune"));
    auto perm = rng.permutation(b_val.size());
    std::vector<Tensor> tuning;
    for (int i = 0; i < c.tuning_examples && i < b_val.size(); ++i)
        tuning.push_back(b_val.inputs[static_cast<size_t>(perm[static_cast<size_t>(i)])]);

    atk::AttackConfig base = c.attack;
    base.family = atk::Family::FDA;
    base.eta = c.eta_per_whitebox();

    auto sets = atk::greedy_layer_tuning(wb_ptrs, aux_ptrs, candidates, proxies, tuning, base,
                                         c.max_layer_set);
    io::json out = io::json::object();
    for (size_t i = 0; i < c.whitebox_archs.size(); ++i) {
        io::json ids = io::json::array();
        for (const auto& l : sets[i]) ids.push_back(l.str());
        out[c.whitebox_archs[i]] = ids;
    }
    io::save_json(stage_dir(c, "aux") / "layer_sets.json", out);
    write_manifest(c, manifest, "tune-layers", digest, {{"layer_sets", out}});
    return {"tune-layers", false, digest};
}

namespace {

std::vector<std::vector<model::LayerId>> load_layer_sets(const ExperimentConfig& c) {
    auto j = io::load_json(stage_dir(c, "aux") / "layer_sets.json");
    std::vector<std::vector<model::LayerId>> sets;
    for (const auto& arch : c.whitebox_archs) {
        std::vector<model::LayerId> ids;
        for (const auto& s : j.at(arch)) ids.push_back(model::LayerId::parse(s.get<std::string>()));
        sets.push_back(std::move(ids));
    }
    return sets;
}

}  // namespace

// ---------------------------------------------------------------- attack

StageStatus stage_attack(const ExperimentConfig& c) {
    const std::string train_digest = require_stage(c, "attack", "models", "train");
    const std::string corr_digest = require_stage(c, "attack", "correspondence", "correspondence");
    const std::string tune_digest = require_stage(c, "attack", "aux", "tune-layers");
    const std::string digest = io::digest(io::json{{"train", train_digest},
                                                   {"corr", corr_digest},
                                                   {"tune", tune_digest},
                                                   {"attack", c.to_json().at("attack")},
                                                   {"seed", c.seed}});
    const auto manifest = manifest_path(c, "attacks", "attack");
    if (up_to_date(manifest, digest)) return {"attack", true, digest};

    auto w = load_world(c);
    const auto b_val = ds::materialize(w.base, w.env.split_b, ds::Role::Validation);

    std::vector<model::ModelHandle> whiteboxes;
    std::vector<model::AuxModelSet> aux_sets;
    for (const auto& arch : c.whitebox_archs) {
        whiteboxes.push_back(load_wb(c, arch));
        aux_sets.push_back(model::load_aux(stage_dir(c, "aux") / ("wb-" + arch + "-aux.json")));
    }
    std::vector<model::ModelHandle*> wb_ptrs;
    std::vector<const model::AuxModelSet*> aux_ptrs;
    for (size_t i = 0; i < whiteboxes.size(); ++i) {
        wb_ptrs.push_back(&whiteboxes[i]);
        aux_ptrs.push_back(&aux_sets[i]);
    }

    atk::AttackConfig tmim_cfg = c.attack;
    tmim_cfg.family = atk::Family::TMIM;
    tmim_cfg.layer_sets.clear();
    tmim_cfg.eta.clear();

    atk::AttackConfig fda_cfg = c.attack;
    fda_cfg.family = atk::Family::FDA;
    fda_cfg.layer_sets = load_layer_sets(c);
    fda_cfg.eta = c.eta_per_whitebox();

    const auto pairs = load_pairs(c);
    for (size_t k = 0; k < pairs.size(); ++k) {
        const auto& p = pairs[k];
        // Seeded sample of B-split validation images outside the target class.
        Rng rng(derive_seed(c.seed, "attack:pair:" + std::to_string(k)));
        auto perm = rng.permutation(b_val.size());
        std::vector<int> indices;
        for (int i = 0; i < b_val.size() && static_cast<int>(indices.size()) < c.attack_examples;
             ++i) {
            const int idx = perm[static_cast<size_t>(i)];
            if (b_val.labels[static_cast<size_t>(idx)] != p.target_index) indices.push_back(idx);
        }

        for (const auto family : {atk::Family::TMIM, atk::Family::FDA}) {
            const auto& cfg = family == atk::Family::TMIM ? tmim_cfg : fda_cfg;
            std::vector<atk::AdversarialExample> batch;
            for (int idx : indices) {
                const auto& clean = b_val.inputs[static_cast<size_t>(idx)];
                auto ex = family == atk::Family::TMIM
                              ? atk::tmim_attack(cfg, wb_ptrs, clean, p.proxy_index)
                              : atk::fda_attack(cfg, wb_ptrs, aux_ptrs, clean, p.proxy_index);
                ex.target_set = {p.target_index};
                batch.push_back(std::move(ex));
            }
            const auto dir = pair_dir(c, atk::family_name(family), static_cast<int>(k));
            atk::save_batch(dir, batch, cfg, {p.target_name});
            std::vector<int> truths;
            for (int idx : indices) truths.push_back(b_val.labels[static_cast<size_t>(idx)]);
            io::save_json(dir / "indices.json",
                          {{"indices", indices},
                           {"true_labels", truths},
                           {"proxy_index", p.proxy_index},
                           {"proxy_name", p.proxy_name},
                           {"target_index", p.target_index},
                           {"target_name", p.target_name}});
        }
    }
    write_manifest(c, manifest, "attack", digest, {{"pairs", static_cast<int>(pairs.size())}});
    return {"attack", false, digest};
}

// ---------------------------------------------------------- query-attack

StageStatus stage_query_attack(const ExperimentConfig& c) {
    const std::string attack_digest = require_stage(c, "query-attack", "attacks", "attack");
    const std::string digest = io::digest(io::json{{"attack", attack_digest},
                                                   {"query", c.to_json().at("query")},
                                                   {"seed", c.seed}});
    const auto manifest = manifest_path(c, "query", "query-attack");
    if (up_to_date(manifest, digest)) return {"query-attack", true, digest};

    auto w = load_world(c);
    const auto pairs = load_pairs(c);
    if (pairs.empty()) throw std::runtime_error("query-attack: no correspondence pairs");
    const auto& p = pairs[0];

    const auto dir = pair_dir(c, "fda", 0);
    auto batch = atk::load_batch(dir);
    auto idx_json = io::load_json(dir / "indices.json");
    auto bb = load_bb(c, c.blackbox_archs[0]);

    const int n = std::min<int>(c.query_examples, static_cast<int>(batch.size()));
    std::map<std::string, std::vector<int>> success_queries;
    io::json per_example = io::json::array();
    std::filesystem::create_directories(stage_dir(c, "query"));

    for (const std::string variant : {"rgf", "fda+rgf"}) {
        for (int i = 0; i < n; ++i) {
            query::QueryLedger ledger(c.query_budget);
            query::OracleHandle oracle(bb, query::OracleMode::Score, ledger);
            query::HybridConfig hc;
            hc.epsilon = c.attack.epsilon;
            hc.alpha = c.attack.alpha;
            hc.rgf_directions = c.query_directions;
            hc.rgf_sigma = c.query_sigma;
            hc.seed = derive_seed(c.seed, "query:" + variant + ":" + std::to_string(i));
            std::optional<atk::AdversarialExample> warm;
            if (variant == "fda+rgf") warm = batch[static_cast<size_t>(i)];
            const std::string id = variant + ":" + std::to_string(i);
            auto res = query::hybrid_attack(warm, batch[static_cast<size_t>(i)].clean, oracle,
                                            {p.target_index}, hc, id);
            success_queries[variant].push_back(res.queries_at_success);
            per_example.push_back({{"id", id},
                                   {"queries_used", res.queries_used},
                                   {"success", res.success},
                                   {"queries_at_success", res.queries_at_success}});
        }
    }

    auto curve = query::tsuc_vs_queries(success_queries, c.query_checkpoints);
    curve.save_csv(stage_dir(c, "query") / "curve.csv");
    io::save_json(stage_dir(c, "query") / "results.json",
                  {{"pair", {{"proxy", p.proxy_name}, {"target", p.target_name}}},
                   {"budget", c.query_budget},
                   {"per_example", per_example}});
    write_manifest(c, manifest, "query-attack", digest, {{"examples", n}});
    return {"query-attack", false, digest};
}

// -------------------------------------------------------------- evaluate

StageStatus stage_evaluate(const ExperimentConfig& c) {
    const std::string attack_digest = require_stage(c, "evaluate", "attacks", "attack");
    const std::string digest =
        io::digest(io::json{{"attack", attack_digest}, {"seed", c.seed}});
    const auto manifest = manifest_path(c, "eval", "evaluate");
    if (up_to_date(manifest, digest)) return {"evaluate", true, digest};

    auto w = load_world(c);
    const auto b_val = ds::materialize(w.base, w.env.split_b, ds::Role::Validation);
    const auto pairs = load_pairs(c);
    std::filesystem::create_directories(stage_dir(c, "eval"));

    for (const auto& bb_arch : c.blackbox_archs) {
        auto bb = load_bb(c, bb_arch);
        for (size_t k = 0; k < pairs.size(); ++k) {
            const auto& p = pairs[k];
            const auto eligible_vec = eval::filter_clean(bb, b_val, {p.target_index});
            const std::set<int> eligible(eligible_vec.begin(), eligible_vec.end());
            for (const std::string family : {"tmim", "fda"}) {
                const auto dir = pair_dir(c, family, static_cast<int>(k));
                auto batch = atk::load_batch(dir);
                auto idx_json = io::load_json(dir / "indices.json");
                const auto indices = idx_json.at("indices").get<std::vector<int>>();
                const auto truths = idx_json.at("true_labels").get<std::vector<int>>();
                std::vector<atk::AdversarialExample> subset;
                std::vector<int> labels;
                for (size_t i = 0; i < indices.size(); ++i) {
                    if (!eligible.count(indices[i])) continue;
                    subset.push_back(batch[i]);
                    labels.push_back(truths[i]);
                }
                auto r = eval::compute_metrics(subset, labels, bb, {p.target_index}, bb_arch,
                                               p.proxy_name);
                r.target_name = p.target_name;
                r.save(stage_dir(c, "eval") / ("result-" + family + "-pair" + std::to_string(k) +
                                               "-" + bb_arch + ".json"));

                // Zero-perturbation baseline must read 0/0 on eligible images.
                if (family == "tmim") {
                    auto zeroed = subset;
                    for (auto& ex : zeroed) ex.delta = Tensor(ex.clean.shape);
                    auto base = eval::compute_metrics(zeroed, labels, bb, {p.target_index},
                                                      bb_arch, p.proxy_name);
                    if (base.error != 0.0 || base.tsuc != 0.0)
                        throw std::logic_error(
                            "evaluate: zero-perturbation baseline is not 0/0 on " + bb_arch);
                }
            }
        }
    }
    write_manifest(c, manifest, "evaluate", digest);
    return {"evaluate", false, digest};
}

// ---------------------------------------------------------------- report

StageStatus stage_report(const ExperimentConfig& c) {
    const std::string eval_digest = require_stage(c, "report", "eval", "evaluate");
    const std::string digest = io::digest(io::json{{"eval", eval_digest}});
    const auto manifest = manifest_path(c, "eval", "report");
    if (up_to_date(manifest, digest)) return {"report", true, digest};

    std::vector<eval::EvalResult> results;
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(stage_dir(c, "eval")))
        if (entry.path().filename().string().rfind("result-", 0) == 0) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) results.push_back(eval::EvalResult::load(f));
    if (results.empty()) throw std::runtime_error("report: no evaluation results found");

    eval::render_report(results, eval::Layout::PerBlackbox)
        .save(stage_dir(c, "eval"), "report-per-blackbox");
    eval::render_report(results, eval::Layout::Averaged)
        .save(stage_dir(c, "eval"), "report-averaged");
    write_manifest(c, manifest, "report", digest,
                   {{"results", static_cast<int>(results.size())}});
    return {"report", false, digest};
}

// ---------------------------------------------------------------- runner

std::vector<StageStatus> run_pipeline(const ExperimentConfig& config,
                                      std::vector<std::string> stages) {
    const auto& order = stage_order();
    if (stages.empty()) stages = order;
    for (const auto& s : stages)
        if (std::find(order.begin(), order.end(), s) == order.end())
            throw std::invalid_argument("unknown stage '" + s + "'");

    std::vector<StageStatus> statuses;
    for (const auto& stage : order) {
        if (std::find(stages.begin(), stages.end(), stage) == stages.end()) continue;
        if (stage == "splits") statuses.push_back(stage_splits(config));
        else if (stage == "train") statuses.push_back(stage_train(config));
        else if (stage == "correspondence") statuses.push_back(stage_correspondence(config));
        else if (stage == "train-aux") statuses.push_back(stage_train_aux(config));
        else if (stage == "tune-layers") statuses.push_back(stage_tune_layers(config));
        else if (stage == "attack") statuses.push_back(stage_attack(config));
        else if (stage == "query-attack") statuses.push_back(stage_query_attack(config));
        else if (stage == "evaluate") statuses.push_back(stage_evaluate(config));
        else if (stage == "report") statuses.push_back(stage_report(config));
    }
    io::json summary = io::json::array();
    for (const auto& s : statuses)
        summary.push_back({{"stage", s.stage}, {"skipped", s.skipped}, {"digest", s.digest}});
    std::filesystem::create_directories(config.output_root);
    io::save_json(config.output_root / "pipeline.manifest.json",
                  {{"config_digest", config.digest()}, {"stages", summary}});
    return statuses;
}

}  // namespace xfer::pipe
