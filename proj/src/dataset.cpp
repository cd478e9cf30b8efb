#include "xfer/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "xfer/rng.hpp"

namespace xfer::ds {

std::string role_name(Role r) { return r == Role::Train ? "train" : "validation"; }

Role parse_role(const std::string& s) {
    if (s == "train") return Role::Train;
    if (s == "validation" || s == "val") return Role::Validation;
    throw std::invalid_argument("unknown role: " + s);
}

// ------------------------------------------------------------ LabelSpaceSpec

std::vector<std::string> LabelSpaceSpec::class_names() const {
    std::vector<std::string> out;
    out.reserve(classes.size());
    for (const auto& c : classes) out.push_back(c.name);
    return out;
}

std::vector<int> LabelSpaceSpec::all_base_ids() const {
    std::vector<int> out;
    for (const auto& c : classes) out.insert(out.end(), c.members.begin(), c.members.end());
    return out;
}

int LabelSpaceSpec::class_index(const std::string& cname) const {
    for (size_t i = 0; i < classes.size(); ++i)
        if (classes[i].name == cname) return static_cast<int>(i);
    return -1;
}

int LabelSpaceSpec::label_of_base(int base_id) const {
    for (size_t i = 0; i < classes.size(); ++i)
        for (int m : classes[i].members)
            if (m == base_id) return static_cast<int>(i);
    return -1;
}

io::json LabelSpaceSpec::to_json() const {
    io::json jc = io::json::array();
    for (const auto& c : classes) jc.push_back({{"name", c.name}, {"members", c.members}});
    return {{"name", name}, {"base_dataset", base_dataset}, {"classes", jc}};
}

LabelSpaceSpec LabelSpaceSpec::from_json(const io::json& j) {
    LabelSpaceSpec s;
    s.name = j.at("name").get<std::string>();
    s.base_dataset = j.at("base_dataset").get<std::string>();
    for (const auto& jc : j.at("classes"))
        s.classes.push_back({jc.at("name").get<std::string>(),
                             jc.at("members").get<std::vector<int>>()});
    return s;
}

std::string LabelSpaceSpec::digest() const { return io::digest(to_json()); }

// ------------------------------------------------------------ BaseDatasetDesc

io::json BaseDatasetDesc::to_json() const {
    return {{"name", name},
            {"seed", seed},
            {"image_size", image_size},
            {"channels", channels},
            {"fine_classes", fine_classes},
            {"fine_per_coarse", fine_per_coarse},
            {"train_per_class", train_per_class},
            {"val_per_class", val_per_class}};
}

BaseDatasetDesc BaseDatasetDesc::from_json(const io::json& j) {
    BaseDatasetDesc d;
    d.name = j.at("name").get<std::string>();
    d.seed = j.at("seed").get<uint64_t>();
    d.image_size = j.at("image_size").get<int>();
    d.channels = j.at("channels").get<int>();
    d.fine_classes = j.at("fine_classes").get<int>();
    d.fine_per_coarse = j.at("fine_per_coarse").get<int>();
    d.train_per_class = j.at("train_per_class").get<int>();
    d.val_per_class = j.at("val_per_class").get<int>();
    if (d.fine_classes % d.fine_per_coarse != 0)
        throw std::invalid_argument("base dataset: fine_classes must be a multiple of "
                                    "fine_per_coarse");
    return d;
}

BaseDatasetDesc BaseDatasetDesc::load(const std::filesystem::path& path) {
    return from_json(io::load_json(path));
}

void BaseDatasetDesc::save(const std::filesystem::path& path) const {
    io::save_json(path, to_json());
}

namespace {
uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}
}  // namespace

Tensor generate_example(const BaseDatasetDesc& base, int fine_class, Role role, int index) {
    if (fine_class < 0 || fine_class >= base.fine_classes)
        throw std::invalid_argument("generate_example: fine class out of range");
    if (index < 0 || index >= base.per_class(role))
        throw std::invalid_argument("generate_example: index out of range");

    const int coarse = fine_class / base.fine_per_coarse;
    const int num_families = std::max(1, base.coarse_classes() / 2);
    const int family = coarse % num_families;
    const int variant = coarse / num_families;
    const int fine = fine_class % base.fine_per_coarse;

    Rng rng(mix(mix(base.seed, static_cast<uint64_t>(fine_class)),
                mix(role == Role::Train ? 1 : 2, static_cast<uint64_t>(index))));

    const double theta = M_PI * family / num_families + rng.uniform(-0.06, 0.06);
    const double freq = (variant == 0 ? 2.5 : 3.25) + rng.uniform(-0.08, 0.08);
    const double phase =
        2.0 * M_PI * fine / base.fine_per_coarse + rng.uniform(-0.4, 0.4);
    const double amp = rng.uniform(0.035, 0.06);
    const double noise_sigma = 0.035;

    const int S = base.image_size;
    Tensor img({base.channels, S, S});
    const double cos_t = std::cos(theta), sin_t = std::sin(theta);
    for (int c = 0; c < base.channels; ++c) {
        for (int h = 0; h < S; ++h) {
            for (int w = 0; w < S; ++w) {
                const double u = (w - 0.5 * (S - 1)) / S;
                const double v = (h - 0.5 * (S - 1)) / S;
                const double t = u * cos_t + v * sin_t;
                double px = 0.5 + amp * std::cos(2.0 * M_PI * freq * t + phase) +
                            noise_sigma * rng.normal();
                img.at(c, h, w) = std::clamp(px, 0.0, 1.0);
            }
        }
    }
    return img;
}

// ----------------------------------------------------------- mapping parsing

namespace {
std::string strip(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}
}  // namespace

std::vector<SuperClass> build_superclasses(const std::filesystem::path& mapping_file,
                                           const BaseDatasetDesc& base) {
    std::istringstream in(io::read_text(mapping_file));
    std::vector<SuperClass> out;
    std::map<int, std::string> id_owner;
    std::set<std::string> names;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = strip(line);
        if (line.empty()) continue;
        auto colon = line.find(':');
        if (colon == std::string::npos)
            throw std::invalid_argument("mapping line " + std::to_string(lineno) +
                                        ": expected `name: id id ...`");
        SuperClass sc;
        sc.name = strip(line.substr(0, colon));
        if (sc.name.empty())
            throw std::invalid_argument("mapping line " + std::to_string(lineno) +
                                        ": empty superclass name");
        if (!names.insert(sc.name).second)
            throw std::invalid_argument("mapping: duplicate superclass name " + sc.name);
        std::istringstream ids(line.substr(colon + 1));
        int id;
        std::set<int> seen;
        while (ids >> id) {
            if (id < 0 || id >= base.fine_classes)
                throw std::invalid_argument("mapping: unknown base class id " +
                                            std::to_string(id) + " in superclass " + sc.name);
            if (!seen.insert(id).second)
                throw std::invalid_argument("mapping: duplicate id " + std::to_string(id) +
                                            " within superclass " + sc.name);
            auto [it, fresh] = id_owner.emplace(id, sc.name);
            if (!fresh)
                throw std::invalid_argument("mapping: base class id " + std::to_string(id) +
                                            " appears in both " + it->second + " and " +
                                            sc.name);
            sc.members.push_back(id);
        }
        if (sc.members.empty())
            throw std::invalid_argument("mapping: superclass " + sc.name + " has no members");
        out.push_back(std::move(sc));
    }
    return out;
}

std::pair<std::vector<std::string>, std::vector<std::string>> parse_partition(
    const std::filesystem::path& partition_file) {
    std::istringstream in(io::read_text(partition_file));
    std::vector<std::string> a, b;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = strip(line);
        if (line.empty()) continue;
        auto colon = line.find(':');
        if (colon == std::string::npos)
            throw std::invalid_argument("partition line " + std::to_string(lineno) +
                                        ": expected `A: ...` or `B: ...`");
        const std::string side = strip(line.substr(0, colon));
        std::istringstream names(line.substr(colon + 1));
        std::string n;
        while (names >> n) {
            if (side == "A") a.push_back(n);
            else if (side == "B") b.push_back(n);
            else
                throw std::invalid_argument("partition line " + std::to_string(lineno) +
                                            ": side must be A or B, got " + side);
        }
    }
    return {a, b};
}

EnvironmentPair build_environment(
    const std::vector<SuperClass>& superclasses,
    const std::pair<std::vector<std::string>, std::vector<std::string>>& partition,
    const std::string& base_dataset_name, const std::string& env_name) {
    std::map<std::string, const SuperClass*> by_name;
    for (const auto& sc : superclasses) by_name[sc.name] = &sc;

    std::set<std::string> set_a(partition.first.begin(), partition.first.end());
    for (const auto& n : partition.second)
        if (set_a.count(n))
            throw std::invalid_argument("partition: superclass " + n + " on both sides");

    auto assemble = [&](const std::vector<std::string>& names, const std::string& suffix) {
        LabelSpaceSpec spec;
        spec.name = env_name + "." + suffix;
        spec.base_dataset = base_dataset_name;
        for (const auto& n : names) {
            auto it = by_name.find(n);
            if (it == by_name.end())
                throw std::invalid_argument("partition: unknown superclass " + n);
            spec.classes.push_back(*it->second);
        }
        return spec;
    };

    EnvironmentPair env{assemble(partition.first, "A"), assemble(partition.second, "B")};

    // exhaustive base-id disjointness check, naming the colliding superclasses
    std::map<int, std::string> owner_a;
    for (const auto& c : env.split_a.classes)
        for (int id : c.members) owner_a[id] = c.name;
    for (const auto& c : env.split_b.classes)
        for (int id : c.members) {
            auto it = owner_a.find(id);
            if (it != owner_a.end())
                throw std::invalid_argument("environment: base class id " + std::to_string(id) +
                                            " shared by A superclass " + it->second +
                                            " and B superclass " + c.name);
        }
    return env;
}

LabeledDataset materialize(const BaseDatasetDesc& base, const LabelSpaceSpec& split, Role role) {
    LabeledDataset out;
    out.spec = split;
    out.role = role;
    const int per = base.per_class(role);
    for (int c = 0; c < base.fine_classes; ++c) {
        const int label = split.label_of_base(c);
        if (label < 0) {
            out.skipped += per;
            continue;
        }
        for (int i = 0; i < per; ++i) {
            out.inputs.push_back(generate_example(base, c, role, i));
            out.labels.push_back(label);
            out.base_labels.push_back(c);
        }
    }
    return out;
}

std::string desk_mapping_text(const BaseDatasetDesc& base) {
    const int num_families = std::max(1, base.coarse_classes() / 2);
    std::ostringstream out;
    out << "# superclass mapping over base dataset " << base.name << "\n";
    out << "# name: base-class ids (one superclass per line)\n";
    for (int k = 0; k < base.coarse_classes(); ++k) {
        const int family = k % num_families;
        const int variant = k / num_families;
        char name[32];
        std::snprintf(name, sizeof(name), "o%02d-%s", family, variant == 0 ? "lo" : "hi");
        out << name << ":";
        for (int j = 0; j < base.fine_per_coarse; ++j)
            out << " " << (k * base.fine_per_coarse + j);
        out << "\n";
    }
    return out.str();
}

std::string desk_partition_text(const BaseDatasetDesc& base) {
    const int num_families = std::max(1, base.coarse_classes() / 2);
    std::ostringstream out;
    out << "# A/B partition: low-frequency variants attack-side, high-frequency target-side\n";
    out << "A:";
    for (int f = 0; f < num_families; ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), " o%02d-lo", f);
        out << name;
    }
    out << "\nB:";
    for (int f = 0; f < num_families; ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), " o%02d-hi", f);
        out << name;
    }
    out << "\n";
    return out.str();
}

void save_environment(const std::filesystem::path& path, const EnvironmentPair& env) {
    io::json body = {{"split_a", env.split_a.to_json()}, {"split_b", env.split_b.to_json()}};
    body["digest"] = io::digest(io::json({body["split_a"], body["split_b"]}));
    io::save_json(path, body);
}

EnvironmentPair load_environment(const std::filesystem::path& path) {
    auto j = io::load_json(path);
    EnvironmentPair env{LabelSpaceSpec::from_json(j.at("split_a")),
                        LabelSpaceSpec::from_json(j.at("split_b"))};
    const auto want = io::digest(io::json({j.at("split_a"), j.at("split_b")}));
    if (j.contains("digest") && j.at("digest").get<std::string>() != want)
        throw std::runtime_error("environment file digest mismatch: " + path.string());
    return env;
}

}  // namespace xfer::ds
