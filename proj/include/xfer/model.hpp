#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xfer/dataset.hpp"
#include "xfer/nn.hpp"
#include "xfer/tensor.hpp"

namespace xfer::model {

/// Identifies one feature-producing site in an architecture. For the
/// sequential desk architectures the path is a single index into the layer
/// stack.
struct LayerId {
    std::vector<int> path;

    std::string str() const;
    static LayerId parse(const std::string& s);  // digits joined by '.'
    bool operator<(const LayerId& o) const { return path < o.path; }
    bool operator==(const LayerId& o) const { return path == o.path; }
};

std::vector<LayerId> parse_layer_list(const std::string& s);  // comma-separated

/// Trained classifier over one label space. Normalization is a layer inside
/// the network, so attacks operate on raw [0,1] pixels.
struct ModelHandle {
    std::string architecture_id;
    ds::LabelSpaceSpec label_space;
    std::vector<int> image_shape;  // {C, H, W}
    nn::Network net;
    double val_accuracy = 0.0;
    uint64_t seed = 0;

    int num_classes() const { return label_space.num_classes(); }
};

std::vector<std::string> list_architectures();
nn::Network make_network(const std::string& architecture_id, int num_classes,
                         const std::vector<int>& image_shape, uint64_t seed);

/// Candidate FDA attack layers per architecture (interior feature sites).
std::vector<LayerId> candidate_layers(const ModelHandle& model);

/// Layer index for a LayerId, throwing with the list of valid paths.
int resolve_layer(const ModelHandle& model, const LayerId& layer);

struct TrainHyper {
    int epochs = 10;
    int batch_size = 32;
    double lr = 0.05;
    double momentum = 0.9;
    double lr_decay = 0.5;
    int decay_every = 4;
    uint64_t seed = 1;
};

/// SGD training; throws on non-finite loss naming the epoch. Validation
/// accuracy is recorded on the handle when a validation set is given.
ModelHandle train_classifier(const ds::LabeledDataset& train, const std::string& architecture_id,
                             const TrainHyper& hyper,
                             const ds::LabeledDataset* validation = nullptr);

struct Prediction {
    std::vector<int> labels;
    std::vector<Tensor> probs;
};

Prediction predict(ModelHandle& model, const std::vector<Tensor>& batch);
double accuracy(ModelHandle& model, const ds::LabeledDataset& data);

std::vector<Tensor> extract_features(ModelHandle& model, const LayerId& layer,
                                     const std::vector<Tensor>& batch);

/// Loss and gradient w.r.t. the input pixels for cross-entropy against a
/// fixed label.
double input_gradient_ce(ModelHandle& model, const Tensor& x, int label, Tensor* grad_x);

/// Per-(class, layer) feature-distribution probe: global-average-pool of the
/// feature map, one hidden affine+ReLU, sigmoid output.
struct Probe {
    Tensor w1, b1, w2, b2;  // (hidden, C), (hidden), (1, hidden), (1)

    /// p(y = c | feature). Optionally returns d p / d feature.
    double prob(const Tensor& feature, Tensor* grad_feature = nullptr) const;

    io::json to_json() const;
    static Probe from_json(const io::json& j);
};

struct AuxModelSet {
    std::string whitebox_digest;
    std::map<std::pair<int, std::string>, Probe> entries;  // (class, layer.str())

    const Probe& at(int class_index, const LayerId& layer) const;
    bool has(int class_index, const LayerId& layer) const;
};

/// Trains one probe per (class, layer) on whitebox features, balancing
/// negatives by uniform sampling from the other classes.
AuxModelSet train_aux_models(ModelHandle& whitebox, const ds::LabeledDataset& dataset,
                             const std::vector<LayerId>& layers, const std::vector<int>& classes,
                             uint64_t seed = 99);

/// AUC of a probe over labeled GAP scores; used for held-out checks.
double probe_auc(const Probe& probe, const std::vector<Tensor>& features,
                 const std::vector<int>& is_positive);

void save_model(const std::filesystem::path& stem, const ModelHandle& model);
ModelHandle load_model(const std::filesystem::path& stem);

void save_aux(const std::filesystem::path& path, const AuxModelSet& aux);
AuxModelSet load_aux(const std::filesystem::path& path);

}  // namespace xfer::model
