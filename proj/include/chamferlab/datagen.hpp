#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "chamferlab/matrix.hpp"

namespace chamferlab {

enum class DatasetFamily { GaussMixture, Rings, MoonsPerClass };

struct DatasetSpec {
  DatasetFamily family = DatasetFamily::GaussMixture;
  std::size_t dim = 2;
  std::size_t classes = 8;
  std::size_t groups = 1;
  std::size_t modes = 4;
  double spread = 0.3;
  // Mode centres are drawn in [-center_scale, center_scale]^d with at least
  // min_separation between any two centres.
  double center_scale = 10.0;
  double min_separation = 2.0;
  // Mode m has weight ∝ mode_decay^m; 1 gives balanced modes.
  double mode_decay = 1.0;
  // G×d additive translations per group. Empty with groups > 1 derives
  // shifts of length group_shift_scale in seeded directions.
  Matrix group_shifts;
  double group_shift_scale = 3.0;
  std::size_t points_per_class = 1000;
  std::uint64_t seed = 0;
  // Selects the point draws while `seed` fixes the layout; lets callers take
  // fresh samples from the same distribution.
  std::uint64_t draw_seed = 0;

  void validate() const;
};

struct LabeledSet {
  Matrix points;
  std::vector<int> class_labels;
  std::vector<int> group_labels;  // empty when the set is ungrouped
  std::size_t num_classes = 0;
  std::size_t num_groups = 1;

  std::size_t size() const { return points.rows(); }
  std::size_t dim() const { return points.cols(); }
  LabeledSet subset(std::span<const std::size_t> rows) const;
  std::vector<std::size_t> rows_of_class(int c) const;
};

struct ExemplarSet {
  std::size_t k = 0;
  Matrix points;                  // classes·k rows, class-major
  std::vector<int> class_labels;

  Matrix points_of_class(int c) const;
  LabeledSet as_labeled(std::size_t num_classes) const;
};

struct SplitResult {
  LabeledSet train;
  LabeledSet validation;
  ExemplarSet exemplars;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> validation_rows;
  std::vector<std::size_t> exemplar_rows;  // rows of the source set, ⊂ train_rows
};

// Resolved mode centres (classes·modes rows) and mode weights for a spec.
struct MixtureLayout {
  Matrix centers;
  std::vector<double> weights;
  Matrix group_shifts;
};
MixtureLayout mixture_layout(const DatasetSpec& spec);

LabeledSet generate(const DatasetSpec& spec);

inline constexpr std::size_t kDefaultValidationPerClass = 500;

// Per class: `validation_per_class` rows go to validation, the rest to train,
// and k exemplars are drawn without replacement from the train rows.
SplitResult split(const LabeledSet& set, std::size_t k, std::uint64_t seed,
                  std::size_t validation_per_class = kDefaultValidationPerClass);

// Same spec with every group shift multiplied by `factor` (OOD variant).
DatasetSpec scaled_shift_spec(const DatasetSpec& spec, double factor);

DatasetSpec dataset_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DatasetSpec& spec);
std::string family_name(DatasetFamily f);

// <base>.chlm points, <base>.labels.csv (index,class,group), <base>.json counts.
void save_labeled_set(const std::filesystem::path& base, const LabeledSet& set);
LabeledSet load_labeled_set(const std::filesystem::path& base);

}  // namespace chamferlab
