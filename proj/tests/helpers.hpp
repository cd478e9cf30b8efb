#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "xfer/dataset.hpp"
#include "xfer/model.hpp"

namespace testutil {

/// Unique scratch directory removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path = std::filesystem::temp_directory_path() /
               ("xfer-test-" + tag + "-" + std::to_string(::getpid()) + "-" +
                std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

/// Label space of n single-member classes named c0..c{n-1}.
inline xfer::ds::LabelSpaceSpec toy_label_space(int n, const std::string& name = "toy") {
    xfer::ds::LabelSpaceSpec spec;
    spec.name = name;
    spec.base_dataset = "toy";
    for (int i = 0; i < n; ++i) spec.classes.push_back({"c" + std::to_string(i), {i}});
    return spec;
}

/// Classifier over flat {1,1,n} inputs whose logits are 10x the pixels, so
/// predict() returns the argmax pixel.
inline xfer::model::ModelHandle identity_model(int n) {
    xfer::model::ModelHandle m;
    m.architecture_id = "hand-identity";
    m.label_space = toy_label_space(n);
    m.image_shape = {1, 1, n};
    xfer::Rng rng(0);
    m.net.add(std::make_unique<xfer::nn::Flatten>());
    auto dense = std::make_unique<xfer::nn::Dense>(n, n, rng);
    m.net.add(std::move(dense));
    auto params = m.net.params();
    xfer::Tensor& w = *params[0];
    xfer::Tensor& b = *params[1];
    for (int i = 0; i < w.size(); ++i) w[i] = 0.0;
    for (int i = 0; i < n; ++i) w[i * n + i] = 10.0;
    for (int i = 0; i < b.size(); ++i) b[i] = 0.0;
    return m;
}

/// One-hot-ish image for identity_model: pixel `hot` at 0.9, rest 0.1.
inline xfer::Tensor hot_image(int n, int hot) {
    xfer::Tensor t({1, 1, n});
    for (int i = 0; i < n; ++i) t[i] = i == hot ? 0.9 : 0.1;
    return t;
}

/// Small 2-class-per-side world for training-based tests.
struct TinyWorld {
    xfer::ds::BaseDatasetDesc base;
    xfer::ds::EnvironmentPair env;
    xfer::ds::LabeledDataset a_train, a_val, b_train, b_val;
};

inline TinyWorld tiny_world() {
    TinyWorld w;
    w.base.fine_classes = 20;  // 4 coarse classes -> 2 families x {lo,hi}
    w.base.fine_per_coarse = 5;
    w.base.image_size = 8;
    w.base.train_per_class = 12;
    w.base.val_per_class = 6;
    TempDir dir("world");
    const auto mapping = dir.path / "mapping.txt";
    const auto partition = dir.path / "partition.txt";
    xfer::io::write_text(mapping, xfer::ds::desk_mapping_text(w.base));
    xfer::io::write_text(partition, xfer::ds::desk_partition_text(w.base));
    auto supers = xfer::ds::build_superclasses(mapping, w.base);
    w.env = xfer::ds::build_environment(supers, xfer::ds::parse_partition(partition), w.base.name);
    w.a_train = xfer::ds::materialize(w.base, w.env.split_a, xfer::ds::Role::Train);
    w.a_val = xfer::ds::materialize(w.base, w.env.split_a, xfer::ds::Role::Validation);
    w.b_train = xfer::ds::materialize(w.base, w.env.split_b, xfer::ds::Role::Train);
    w.b_val = xfer::ds::materialize(w.base, w.env.split_b, xfer::ds::Role::Validation);
    return w;
}

inline xfer::model::ModelHandle tiny_classifier(const TinyWorld& w, const std::string& arch,
                                                const xfer::ds::LabeledDataset& train,
                                                const xfer::ds::LabeledDataset& val,
                                                uint64_t seed = 3) {
    xfer::model::TrainHyper hyper;
    hyper.epochs = 6;
    hyper.seed = seed;
    return xfer::model::train_classifier(train, arch, hyper, &val);
}

}  // namespace testutil
