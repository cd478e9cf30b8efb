#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xfer/io.hpp"
#include "xfer/tensor.hpp"

namespace xfer::ds {

enum class Role { Train, Validation };

std::string role_name(Role r);
Role parse_role(const std::string& s);

/// A named group of base-dataset class ids.
struct SuperClass {
    std::string name;
    std::vector<int> members;
};

/// A named, ordered set of superclasses over one base dataset.
struct LabelSpaceSpec {
    std::string name;
    std::vector<SuperClass> classes;
    std::string base_dataset;

    int num_classes() const { return static_cast<int>(classes.size()); }
    std::vector<std::string> class_names() const;
    std::vector<int> all_base_ids() const;
    int class_index(const std::string& name) const;  // -1 when absent
    /// Superclass index for a base label, or -1 when the label is in no
    /// superclass of this spec.
    int label_of_base(int base_id) const;
    std::string digest() const;
    io::json to_json() const;
    static LabelSpaceSpec from_json(const io::json& j);
};

/// Two label spaces over disjoint base-class-id sets.
struct EnvironmentPair {
    LabelSpaceSpec split_a;
    LabelSpaceSpec split_b;
};

/// Materialized examples for one split and role. Pixels in [0,1], labels are
/// superclass indices into `spec`.
struct LabeledDataset {
    LabelSpaceSpec spec;
    Role role = Role::Train;
    std::vector<Tensor> inputs;
    std::vector<int> labels;
    std::vector<int> base_labels;
    int skipped = 0;  // base examples whose label fell outside the split

    int size() const { return static_cast<int>(inputs.size()); }
};

/// Procedurally generated base dataset: `fine_classes` classes arranged as
/// coarse groups of `fine_per_coarse`, images are noisy oriented gratings
/// whose orientation is shared within a coarse-group family and whose
/// spatial frequency separates the two coarse groups of a family. Fully
/// deterministic in (seed, class, role, index).
struct BaseDatasetDesc {
    std::string name = "grating100";
    uint64_t seed = 7;
    int image_size = 16;
    int channels = 1;
    int fine_classes = 100;
    int fine_per_coarse = 5;
    int train_per_class = 60;
    int val_per_class = 12;

    int coarse_classes() const { return fine_classes / fine_per_coarse; }
    int per_class(Role r) const { return r == Role::Train ? train_per_class : val_per_class; }
    io::json to_json() const;
    static BaseDatasetDesc from_json(const io::json& j);
    static BaseDatasetDesc load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

/// Deterministic image for (fine class, role, index within class).
Tensor generate_example(const BaseDatasetDesc& base, int fine_class, Role role, int index);

/// Parse the superclass mapping file: one record per line,
/// `name: id id id ...`, `#` starts a comment. Rejects duplicate ids across
/// superclasses and ids outside the base dataset.
std::vector<SuperClass> build_superclasses(const std::filesystem::path& mapping_file,
                                           const BaseDatasetDesc& base);

/// Parse the partition file: lines `A: name name ...` / `B: name ...`,
/// accumulating; `#` comments.
std::pair<std::vector<std::string>, std::vector<std::string>> parse_partition(
    const std::filesystem::path& partition_file);

/// Assemble the A/B environment. Rejects name overlap between sides and any
/// base-id overlap between the two resulting label spaces.
EnvironmentPair build_environment(const std::vector<SuperClass>& superclasses,
                                  const std::pair<std::vector<std::string>,
                                                  std::vector<std::string>>& partition,
                                  const std::string& base_dataset_name,
                                  const std::string& env_name = "desk");

/// Generate every base example of the given role and keep those whose base
/// label belongs to the split; others are tallied in `skipped`.
LabeledDataset materialize(const BaseDatasetDesc& base, const LabelSpaceSpec& split, Role role);

/// Canonical desk-scale mapping/partition: 20 superclasses named
/// `oFF-lo`/`oFF-hi` over 10 orientation families, the `-lo` set on side A.
std::string desk_mapping_text(const BaseDatasetDesc& base);
std::string desk_partition_text(const BaseDatasetDesc& base);

void save_environment(const std::filesystem::path& path, const EnvironmentPair& env);
EnvironmentPair load_environment(const std::filesystem::path& path);

}  // namespace xfer::ds
