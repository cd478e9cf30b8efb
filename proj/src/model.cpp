#include "xfer/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace xfer::model {

// ------------------------------------------------------------------ LayerId

std::string LayerId::str() const {
    std::string s;
    for (size_t i = 0; i < path.size(); ++i) {
        if (i) s += ".";
        s += std::to_string(path[i]);
    }
    return s;
}

LayerId LayerId::parse(const std::string& s) {
    LayerId id;
    std::istringstream in(s);
    std::string part;
    while (std::getline(in, part, '.')) {
        if (part.empty()) throw std::invalid_argument("bad layer id: " + s);
        id.path.push_back(std::stoi(part));
    }
    if (id.path.empty()) throw std::invalid_argument("empty layer id");
    return id;
}

std::vector<LayerId> parse_layer_list(const std::string& s) {
    std::vector<LayerId> out;
    std::istringstream in(s);
    std::string part;
    while (std::getline(in, part, ',')) {
        if (!part.empty()) out.push_back(LayerId::parse(part));
    }
    return out;
}

// ------------------------------------------------------------- architectures

std::vector<std::string> list_architectures() {
    return {"cnn-a", "cnn-b", "cnn-c", "cnn-d", "mlp-e", "cnn-f", "cnn-g"};
}

nn::Network make_network(const std::string& arch, int num_classes,
                         const std::vector<int>& image_shape, uint64_t seed) {
    if (image_shape.size() != 3) throw std::invalid_argument("image shape must be CHW");
    const int C = image_shape[0], H = image_shape[1], W = image_shape[2];
    Rng rng(seed ^ 0xa5a5a5a5ULL);
    nn::Network net;
    std::vector<double> mean(static_cast<size_t>(C), 0.5);
    std::vector<double> stdv(static_cast<size_t>(C), 0.25);
    auto flat_dim = [&]() { return Tensor::count(net.output_shape(image_shape)); };

    if (arch == "cnn-a") {
        net.add(std::make_unique<nn::Normalize>(mean, stdv));
        net.add(std::make_unique<nn::Conv2d>(C, 8, 3, 1, rng));
        net.add(std::make_unique<nn::ReLU>());
        net.add(std::make_unique<nn::AvgPool2>());
        net.add(std::make_unique<nn::Conv2d>(8, 16, 3, 1, rng));
        net.add(std::make_unique<nn::ReLU>());
        net.add(std::make_unique<nn::AvgPool2>());
        net.add(std::make_unique<nn::Flatten>());
        net.add(std::make_unique<nn::Dense>(flat_dim(), 64, rng));
        net.add(std::make_unique<nn::ReLU>());
        net.add(std::make_unique<nn::Dense>(64, num_classes, rng));
    } else if (arch == "cnn-b") {
        net.add(std::make_unique<nn::Normalize>(mean, stdv));
        net.add(std::make_unique<nn::Conv2d>(C, 12, 5, 2, rng));
        net.add(std::make_unique<nn::ReLU>());
        net.add(std::make_unique<nn::MaxPool2>());
        net.add(std::make_unique<nn::Conv2d>(12, 12, 3, 1, rng));
        net.add(std::make_unique<nn::ReLU>());
        net.add(std::make_unique<nn::AvgPool2>());
        net.add(std::make_unique<nn::Flatten>());
        net.add(std::make_unique<nn::Dense>(flat_dim(), 48, rng));
        net.add(std::make_unique<nn::ReLU>());
        net.add(std::make_unique<nn::Dense>(48, num_classes, rng));
    } else if (arch == "cnn-c") {
        net.add(std::make_unique<nn::Normalize>(mean, stdv));
        net.add(std::make_unique<nn::Conv2d>(C, 6, 3, 1, rng));
        net.add(std::make_unique<nn::ReLU>());
        net.add(std::make_unique<nn::MaxPool2>());
        net.add(std::make_unique<nn::Conv2d>(6, 12, 3, 1, rng));
        net.add(std::make_unique<nn::ReLU>());
        net.add(std::make_unique<nn::MaxPool2>());
        net.add(std::make_unique<nn::Flatten>());
        net.add(std::make_unique<nn::Dense>(flat_dim(), num_classes, rng));
    } else if (arch == "cnn-d") {
        net.add(std::make_unique<nn::Normalize>(mean, stdv));
        net.add(std::make_unique<nn::Conv2d>(C, 16, 7, 3, rng));
        net.add(std::make_unique<nn::ReLU>());
        net.add(std::make_unique<nn::AvgPool2>());
        net.add(std::make_unique<nn::AvgPool2>());
        net.add(std::make_unique<nn::Flatten>());
        net.add(std::make_unique<nn::Dense>(flat_dim(), num_classes, rng));
    } else if (arch == "mlp-e") {
        net.add(std::make_unique<nn::Normalize>(mean, stdv));
        net.add(std::make_unique<nn::Flatten>());
        net.add(std::make_unique<nn::Dense>(C * H * W, 96, rng));
        net.add(std::make_unique<nn::ReLU>());
        net.add(std::make_unique<nn::Dense>(96, 48, rng));
        net.add(std::make_unique<nn::ReLU>());
        net.add(std::make_unique<nn::Dense>(48, num_classes, rng));
    } else if (arch == "cnn-f") {
        net.add(std::make_unique<nn::Normalize>(mean, stdv));
        net.add(std::make_unique<nn::Conv2d>(C, 8, 5, 2, rng));
        net.add(std::make_unique<nn::Tanh>());
        net.add(std::make_unique<nn::AvgPool2>());
        net.add(std::make_unique<nn::Conv2d>(8, 8, 5, 2, rng));
        net.add(std::make_unique<nn::Tanh>());
        net.add(std::make_unique<nn::AvgPool2>());
        net.add(std::make_unique<nn::Flatten>());
        net.add(std::make_unique<nn::Dense>(flat_dim(), num_classes, rng));
    } else if (arch == "cnn-g") {
        net.add(std::make_unique<nn::Normalize>(mean, stdv));
        net.add(std::make_unique<nn::Conv2d>(C, 10, 3, 1, rng));
        net.add(std::make_unique<nn::ReLU>());
        net.add(std::make_unique<nn::Conv2d>(10, 10, 3, 1, rng));
        net.add(std::make_unique<nn::ReLU>());
        net.add(std::make_unique<nn::AvgPool2>());
        net.add(std::make_unique<nn::AvgPool2>());
        net.add(std::make_unique<nn::Flatten>());
        net.add(std::make_unique<nn::Dense>(flat_dim(), 32, rng));
        net.add(std::make_unique<nn::ReLU>());
        net.add(std::make_unique<nn::Dense>(32, num_classes, rng));
    } else {
        throw std::invalid_argument("unknown architecture: " + arch);
    }
    return net;
}

std::vector<LayerId> candidate_layers(const ModelHandle& model) {
    std::vector<LayerId> out;
    for (int i = 0; i < model.net.num_layers() - 1; ++i) {
        const std::string k = model.net.layer(i).kind();
        if (k == "relu" || k == "tanh" || k == "maxpool2" || k == "avgpool2")
            out.push_back(LayerId{{i}});
    }
    return out;
}

int resolve_layer(const ModelHandle& model, const LayerId& layer) {
    if (layer.path.size() == 1 && layer.path[0] >= 0 &&
        layer.path[0] < model.net.num_layers())
        return layer.path[0];
    std::string valid;
    for (int i = 0; i < model.net.num_layers(); ++i) {
        if (i) valid += " ";
        valid += std::to_string(i);
    }
    throw std::invalid_argument("layer " + layer.str() + " does not resolve in " +
                                model.architecture_id + "; valid paths: " + valid);
}

// ----------------------------------------------------------------- training

ModelHandle train_classifier(const ds::LabeledDataset& train, const std::string& arch,
                             const TrainHyper& hyper, const ds::LabeledDataset* validation) {
    if (train.size() == 0) throw std::invalid_argument("train_classifier: empty dataset");
    ModelHandle m;
    m.architecture_id = arch;
    m.label_space = train.spec;
    m.image_shape = train.inputs[0].shape;
    m.seed = hyper.seed;
    m.net = make_network(arch, m.num_classes(), m.image_shape, hyper.seed);

    nn::SgdOptimizer opt(m.net.params(), m.net.param_grads(), hyper.lr, hyper.momentum);
    Rng rng(hyper.seed);
    const int n = train.size();
    double lr = hyper.lr;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        if (epoch > 0 && hyper.decay_every > 0 && epoch % hyper.decay_every == 0) {
            lr *= hyper.lr_decay;
            opt.set_lr(lr);
        }
        auto order = rng.permutation(n);
        for (int start = 0; start < n; start += hyper.batch_size) {
            const int end = std::min(n, start + hyper.batch_size);
            m.net.zero_grads();
            double batch_loss = 0.0;
            for (int k = start; k < end; ++k) {
                const int idx = order[static_cast<size_t>(k)];
                Tensor logits = m.net.forward(train.inputs[static_cast<size_t>(idx)]);
                Tensor grad;
                batch_loss +=
                    nn::cross_entropy(logits, train.labels[static_cast<size_t>(idx)], &grad);
                grad *= 1.0 / (end - start);
                m.net.backward(grad, {}, true);
            }
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("training diverged (non-finite loss) at epoch " +
                                         std::to_string(epoch));
            opt.step();
        }
    }
    if (validation) m.val_accuracy = accuracy(m, *validation);
    return m;
}

Prediction predict(ModelHandle& model, const std::vector<Tensor>& batch) {
    Prediction out;
    out.labels.reserve(batch.size());
    out.probs.reserve(batch.size());
    for (const auto& x : batch) {
        if (x.shape != model.image_shape)
            throw std::invalid_argument("predict: input shape " + x.shape_str() +
                                        " does not match model input " +
                                        Tensor(model.image_shape).shape_str());
        Tensor p = nn::softmax(model.net.forward(x));
        int best = 0;
        for (int i = 1; i < p.size(); ++i)
            if (p[i] > p[best]) best = i;
        out.labels.push_back(best);
        out.probs.push_back(std::move(p));
    }
    return out;
}

double accuracy(ModelHandle& model, const ds::LabeledDataset& data) {
    if (data.size() == 0) return 0.0;
    auto pred = predict(model, data.inputs);
    int correct = 0;
    for (int i = 0; i < data.size(); ++i)
        if (pred.labels[static_cast<size_t>(i)] == data.labels[static_cast<size_t>(i)])
            ++correct;
    return static_cast<double>(correct) / data.size();
}

std::vector<Tensor> extract_features(ModelHandle& model, const LayerId& layer,
                                     const std::vector<Tensor>& batch) {
    const int idx = resolve_layer(model, layer);
    std::vector<Tensor> out;
    out.reserve(batch.size());
    for (const auto& x : batch) {
        model.net.forward(x);
        out.push_back(model.net.activation(idx));
    }
    return out;
}

double input_gradient_ce(ModelHandle& model, const Tensor& x, int label, Tensor* grad_x) {
    Tensor logits = model.net.forward(x);
    Tensor grad_logits;
    const double loss = nn::cross_entropy(logits, label, &grad_logits);
    if (grad_x) *grad_x = model.net.backward(grad_logits);
    return loss;
}

// ------------------------------------------------------------------- probes

namespace {
/// Global average pool: 3-D feature maps reduce to per-channel means, flat
/// features pass through.
Tensor gap(const Tensor& feature) {
    if (feature.shape.size() == 1) return feature;
    if (feature.shape.size() == 3) {
        const int C = feature.shape[0], hw = feature.shape[1] * feature.shape[2];
        Tensor g({C});
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int i = 0; i < hw; ++i) s += feature[c * hw + i];
            g[c] = s / hw;
        }
        return g;
    }
    throw std::invalid_argument("probe: unsupported feature rank");
}
}  // namespace

double Probe::prob(const Tensor& feature, Tensor* grad_feature) const {
    const Tensor g = gap(feature);
    const int C = g.size(), hidden = b1.size();
    if (w1.shape != std::vector<int>{hidden, C})
        throw std::invalid_argument("probe: feature width " + std::to_string(C) +
                                    " does not match probe input " + w1.shape_str());
    std::vector<double> h(static_cast<size_t>(hidden));
    for (int j = 0; j < hidden; ++j) {
        double acc = b1[j];
        for (int i = 0; i < C; ++i) acc += w1[j * C + i] * g[i];
        h[static_cast<size_t>(j)] = std::max(0.0, acc);
    }
    double z = b2[0];
    for (int j = 0; j < hidden; ++j) z += w2[j] * h[static_cast<size_t>(j)];
    const double p = nn::sigmoid(z);

    if (grad_feature) {
        // dp/dg = p(1-p) * w1^T (relu' . w2)
        Tensor dg({C});
        const double dz = p * (1.0 - p);
        for (int j = 0; j < hidden; ++j) {
            if (h[static_cast<size_t>(j)] <= 0.0) continue;
            const double dj = dz * w2[j];
            for (int i = 0; i < C; ++i) dg[i] += dj * w1[j * C + i];
        }
        if (feature.shape.size() == 1) {
            *grad_feature = dg;
        } else {
            const int hw = feature.shape[1] * feature.shape[2];
            Tensor gf(feature.shape);
            for (int c = 0; c < C; ++c) {
                const double v = dg[c] / hw;
                for (int i = 0; i < hw; ++i) gf[c * hw + i] = v;
            }
            *grad_feature = std::move(gf);
        }
    }
    return p;
}

io::json Probe::to_json() const {
    auto dump = [](const Tensor& t) {
        return io::json{{"shape", t.shape}, {"data", t.data}};
    };
    return {{"w1", dump(w1)}, {"b1", dump(b1)}, {"w2", dump(w2)}, {"b2", dump(b2)}};
}

Probe Probe::from_json(const io::json& j) {
    auto read = [&](const char* key) {
        return Tensor(j.at(key).at("shape").get<std::vector<int>>(),
                      j.at(key).at("data").get<std::vector<double>>());
    };
    return Probe{read("w1"), read("b1"), read("w2"), read("b2")};
}

const Probe& AuxModelSet::at(int class_index, const LayerId& layer) const {
    auto it = entries.find({class_index, layer.str()});
    if (it == entries.end())
        throw std::invalid_argument("aux model set: missing probe for (class " +
                                    std::to_string(class_index) + ", layer " + layer.str() +
                                    ")");
    return it->second;
}

bool AuxModelSet::has(int class_index, const LayerId& layer) const {
    return entries.count({class_index, layer.str()}) > 0;
}

namespace {
Probe train_probe(const std::vector<Tensor>& pos, const std::vector<Tensor>& neg, Rng& rng) {
    const int C = pos[0].size();
    const int hidden = 16;
    Probe p;
    p.w1 = Tensor({hidden, C});
    p.b1 = Tensor({hidden});
    p.w2 = Tensor({1, hidden});
    p.b2 = Tensor({1});
    const double s1 = std::sqrt(2.0 / C), s2 = std::sqrt(2.0 / hidden);
    for (auto& v : p.w1.data) v = rng.normal() * s1;
    for (auto& v : p.w2.data) v = rng.normal() * s2;

    struct Ex {
        const Tensor* g;
        double y;
    };
    std::vector<Ex> all;
    for (const auto& t : pos) all.push_back({&t, 1.0});
    for (const auto& t : neg) all.push_back({&t, 0.0});

    Tensor gw1(p.w1.shape), gb1(p.b1.shape), gw2(p.w2.shape), gb2(p.b2.shape);
    Tensor vw1(p.w1.shape), vb1(p.b1.shape), vw2(p.w2.shape), vb2(p.b2.shape);
    const double lr = 0.1, mom = 0.9;
    const int epochs = 40, batch = 32;
    const int n = static_cast<int>(all.size());
    for (int epoch = 0; epoch < epochs; ++epoch) {
        auto order = rng.permutation(n);
        for (int start = 0; start < n; start += batch) {
            const int end = std::min(n, start + batch);
            gw1.fill(0); gb1.fill(0); gw2.fill(0); gb2.fill(0);
            for (int k = start; k < end; ++k) {
                const Ex& ex = all[static_cast<size_t>(order[static_cast<size_t>(k)])];
                const Tensor& g = *ex.g;
                std::vector<double> h(hidden);
                for (int j = 0; j < hidden; ++j) {
                    double acc = p.b1[j];
                    for (int i = 0; i < C; ++i) acc += p.w1[j * C + i] * g[i];
                    h[static_cast<size_t>(j)] = std::max(0.0, acc);
                }
                double z = p.b2[0];
                for (int j = 0; j < hidden; ++j) z += p.w2[j] * h[static_cast<size_t>(j)];
                double dz;
                nn::sigmoid_bce(z, ex.y, &dz);
                dz /= (end - start);
                gb2[0] += dz;
                for (int j = 0; j < hidden; ++j) {
                    gw2[j] += dz * h[static_cast<size_t>(j)];
                    if (h[static_cast<size_t>(j)] <= 0.0) continue;
                    const double dh = dz * p.w2[j];
                    gb1[j] += dh;
                    for (int i = 0; i < C; ++i) gw1[j * C + i] += dh * g[i];
                }
            }
            auto upd = [&](Tensor& w, Tensor& v, const Tensor& gr) {
                for (size_t i = 0; i < w.data.size(); ++i) {
                    v.data[i] = mom * v.data[i] + gr.data[i];
                    w.data[i] -= lr * v.data[i];
                }
            };
            upd(p.w1, vw1, gw1);
            upd(p.b1, vb1, gb1);
            upd(p.w2, vw2, gw2);
            upd(p.b2, vb2, gb2);
        }
    }
    return p;
}
}  // namespace

AuxModelSet train_aux_models(ModelHandle& whitebox, const ds::LabeledDataset& dataset,
                             const std::vector<LayerId>& layers, const std::vector<int>& classes,
                             uint64_t seed) {
    AuxModelSet aux;
    aux.whitebox_digest = whitebox.label_space.digest();
    for (int c : classes) {
        if (c < 0 || c >= whitebox.num_classes())
            throw std::invalid_argument("train_aux_models: class " + std::to_string(c) +
                                        " outside whitebox label space");
        bool any = false;
        for (int l : dataset.labels)
            if (l == c) {
                any = true;
                break;
            }
        if (!any)
            throw std::invalid_argument("train_aux_models: class " + std::to_string(c) +
                                        " has zero training examples");
    }
    for (const auto& layer : layers) {
        const int lidx = resolve_layer(whitebox, layer);
        // cache pooled features once per layer
        std::vector<Tensor> pooled;
        pooled.reserve(static_cast<size_t>(dataset.size()));
        for (const auto& x : dataset.inputs) {
            whitebox.net.forward(x);
            pooled.push_back(gap(whitebox.net.activation(lidx)));
        }
        for (int c : classes) {
            Rng rng(seed ^ (static_cast<uint64_t>(c) * 0x9e3779b97f4a7c15ULL +
                            static_cast<uint64_t>(lidx) * 0xbf58476d1ce4e5b9ULL));
            std::vector<Tensor> pos;
            std::vector<int> neg_pool;
            for (int i = 0; i < dataset.size(); ++i) {
                if (dataset.labels[static_cast<size_t>(i)] == c)
                    pos.push_back(pooled[static_cast<size_t>(i)]);
                else
                    neg_pool.push_back(i);
            }
            std::vector<Tensor> neg;
            auto perm = rng.permutation(static_cast<int>(neg_pool.size()));
            for (size_t i = 0; i < pos.size() && i < perm.size(); ++i)
                neg.push_back(pooled[static_cast<size_t>(neg_pool[static_cast<size_t>(
                    perm[i])])]);
            aux.entries[{c, layer.str()}] = train_probe(pos, neg, rng);
        }
    }
    return aux;
}

double probe_auc(const Probe& probe, const std::vector<Tensor>& features,
                 const std::vector<int>& is_positive) {
    std::vector<std::pair<double, int>> scored;
    for (size_t i = 0; i < features.size(); ++i)
        scored.push_back({probe.prob(features[i]), is_positive[i]});
    std::sort(scored.begin(), scored.end());
    double rank_sum = 0.0;
    int npos = 0, nneg = 0;
    size_t i = 0;
    while (i < scored.size()) {
        size_t j = i;
        while (j < scored.size() && scored[j].first == scored[i].first) ++j;
        const double avg_rank = 0.5 * (i + j - 1) + 1.0;  // 1-based, ties averaged
        for (size_t k = i; k < j; ++k)
            if (scored[k].second) rank_sum += avg_rank;
        i = j;
    }
    for (const auto& [s, y] : scored) (y ? npos : nneg)++;
    if (npos == 0 || nneg == 0) return 0.5;
    return (rank_sum - npos * (npos + 1.0) / 2.0) / (static_cast<double>(npos) * nneg);
}

// -------------------------------------------------------------- persistence

namespace {
void write_tensor(std::ofstream& f, const Tensor& t) {
    uint32_t rank = static_cast<uint32_t>(t.shape.size());
    f.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
    for (int d : t.shape) {
        uint32_t u = static_cast<uint32_t>(d);
        f.write(reinterpret_cast<const char*>(&u), sizeof(u));
    }
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

Tensor read_tensor(std::ifstream& f) {
    uint32_t rank = 0;
    f.read(reinterpret_cast<char*>(&rank), sizeof(rank));
    if (!f || rank > 8) throw std::runtime_error("checkpoint: corrupt tensor header");
    std::vector<int> shape(rank);
    for (auto& d : shape) {
        uint32_t u = 0;
        f.read(reinterpret_cast<char*>(&u), sizeof(u));
        d = static_cast<int>(u);
    }
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!f) throw std::runtime_error("checkpoint: truncated tensor payload");
    return t;
}
}  // namespace

void save_model(const std::filesystem::path& stem, const ModelHandle& model) {
    auto bin = stem;
    bin += ".bin";
    if (bin.has_parent_path()) std::filesystem::create_directories(bin.parent_path());
    std::ofstream f(bin, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + bin.string());
    auto params = const_cast<ModelHandle&>(model).net.params();
    uint32_t count = static_cast<uint32_t>(params.size());
    f.write("XMDL", 4);
    f.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (auto* p : params) write_tensor(f, *p);

    auto sidecar = stem;
    sidecar += ".json";
    io::save_json(sidecar, {{"architecture_id", model.architecture_id},
                            {"label_space", model.label_space.to_json()},
                            {"label_space_digest", model.label_space.digest()},
                            {"image_shape", model.image_shape},
                            {"val_accuracy", model.val_accuracy},
                            {"seed", model.seed}});
}

ModelHandle load_model(const std::filesystem::path& stem) {
    auto sidecar = stem;
    sidecar += ".json";
    auto j = io::load_json(sidecar);
    ModelHandle m;
    m.architecture_id = j.at("architecture_id").get<std::string>();
    m.label_space = ds::LabelSpaceSpec::from_json(j.at("label_space"));
    m.image_shape = j.at("image_shape").get<std::vector<int>>();
    m.val_accuracy = j.at("val_accuracy").get<double>();
    m.seed = j.at("seed").get<uint64_t>();
    m.net = make_network(m.architecture_id, m.num_classes(), m.image_shape, m.seed);

    auto bin = stem;
    bin += ".bin";
    std::ifstream f(bin, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + bin.string());
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "XMDL", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + bin.string());
    uint32_t count = 0;
    f.read(reinterpret_cast<char*>(&count), sizeof(count));
    auto params = m.net.params();
    if (count != params.size())
        throw std::runtime_error("checkpoint: parameter count mismatch in " + bin.string());
    for (auto* p : params) {
        Tensor t = read_tensor(f);
        if (t.shape != p->shape)
            throw std::runtime_error("checkpoint: parameter shape mismatch in " + bin.string());
        *p = std::move(t);
    }
    return m;
}

void save_aux(const std::filesystem::path& path, const AuxModelSet& aux) {
    io::json entries = io::json::array();
    for (const auto& [key, probe] : aux.entries)
        entries.push_back(
            {{"class", key.first}, {"layer", key.second}, {"probe", probe.to_json()}});
    io::save_json(path, {{"whitebox_digest", aux.whitebox_digest}, {"entries", entries}});
}

AuxModelSet load_aux(const std::filesystem::path& path) {
    auto j = io::load_json(path);
    AuxModelSet aux;
    aux.whitebox_digest = j.at("whitebox_digest").get<std::string>();
    for (const auto& e : j.at("entries"))
        aux.entries[{e.at("class").get<int>(), e.at("layer").get<std::string>()}] =
            Probe::from_json(e.at("probe"));
    return aux;
}

}  // namespace xfer::model
