#include "chamferlab/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "chamferlab/errors.hpp"
#include "chamferlab/io.hpp"
#include "chamferlab/rng.hpp"

namespace chamferlab {
namespace {

constexpr std::uint64_t kLayoutStream = 7;
constexpr std::uint64_t kShiftStream = 11;
constexpr std::uint64_t kClassStreamBase = 1000;
constexpr std::uint64_t kSplitStreamBase = 5000;
constexpr std::uint64_t kExemplarStreamBase = 9000;

std::size_t pick_weighted(RngStream& rng, const std::vector<double>& cumulative) {
  const double u = rng.uniform() * cumulative.back();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
}

std::filesystem::path strip_chlm(std::filesystem::path base) {
  if (base.extension() == ".chlm") base.replace_extension();
  return base;
}

std::filesystem::path with_suffix(const std::filesystem::path& base, const std::string& suffix) {
  return std::filesystem::path(base.string() + suffix);
}

}  // namespace

void DatasetSpec::validate() const {
  if (dim < 2 || dim > 16) throw SpecError("dataset spec: dim must be in [2, 16], got " + std::to_string(dim));
  if (classes == 0) throw SpecError("dataset spec: classes must be >= 1");
  if (groups == 0) throw SpecError("dataset spec: groups must be >= 1");
  if (modes == 0) throw SpecError("dataset spec: modes per class must be >= 1");
  if (!(spread > 0.0)) throw SpecError("dataset spec: spread must be > 0");
  if (points_per_class == 0) throw SpecError("dataset spec: points_per_class must be >= 1");
  if (!(mode_decay > 0.0)) throw SpecError("dataset spec: mode_decay must be > 0");
  if (!group_shifts.empty() && (group_shifts.rows() != groups || group_shifts.cols() != dim)) {
    throw SpecError("dataset spec: group_shifts must be groups x dim");
  }
}

LabeledSet LabeledSet::subset(std::span<const std::size_t> rows) const {
  LabeledSet out;
  out.points = points.select_rows(rows);
  out.num_classes = num_classes;
  out.num_groups = num_groups;
  out.class_labels.reserve(rows.size());
  for (std::size_t r : rows) out.class_labels.push_back(class_labels[r]);
  if (!group_labels.empty()) {
    out.group_labels.reserve(rows.size());
    for (std::size_t r : rows) out.group_labels.push_back(group_labels[r]);
  }
  return out;
}

std::vector<std::size_t> LabeledSet::rows_of_class(int c) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < class_labels.size(); ++i)
    if (class_labels[i] == c) rows.push_back(i);
  return rows;
}

Matrix ExemplarSet::points_of_class(int c) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < class_labels.size(); ++i)
    if (class_labels[i] == c) rows.push_back(i);
  return points.select_rows(rows);
}

LabeledSet ExemplarSet::as_labeled(std::size_t num_classes) const {
  LabeledSet out;
  out.points = points;
  out.class_labels = class_labels;
  out.num_classes = num_classes;
  return out;
}

MixtureLayout mixture_layout(const DatasetSpec& spec) {
  spec.validate();
  MixtureLayout layout;
  const std::size_t n_centers = spec.classes * spec.modes;
  layout.centers = Matrix(n_centers, spec.dim);
  RngStream rng(spec.seed, kLayoutStream);
  const double min_sq = spec.min_separation * spec.min_separation;
  for (std::size_t i = 0; i < n_centers; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
      for (std::size_t c = 0; c < spec.dim; ++c) layout.centers(i, c) = spec.center_scale * (2.0 * rng.uniform() - 1.0);
      placed = true;
      for (std::size_t j = 0; j < i && placed; ++j)
        if (squared_distance(layout.centers.row(i), layout.centers.row(j)) < min_sq) placed = false;
    }
    if (!placed) throw SpecError("dataset spec: cannot place mode centres with the requested min_separation");
  }

  layout.weights.resize(spec.modes);
  double total = 0.0;
  for (std::size_t m = 0; m < spec.modes; ++m) total += layout.weights[m] = std::pow(spec.mode_decay, double(m));
  for (double& w : layout.weights) w /= total;

  if (!spec.group_shifts.empty()) {
    layout.group_shifts = spec.group_shifts;
  } else {
    layout.group_shifts = Matrix(spec.groups, spec.dim);
    RngStream srng(spec.seed, kShiftStream);
    for (std::size_t g = 1; g < spec.groups; ++g) {
      Matrix dir = gauss(srng, 1, spec.dim);
      const double n = frobenius_norm(dir);
      for (std::size_t c = 0; c < spec.dim; ++c) layout.group_shifts(g, c) = spec.group_shift_scale * dir(0, c) / n;
    }
  }
  return layout;
}

LabeledSet generate(const DatasetSpec& spec) {
  const MixtureLayout layout = mixture_layout(spec);
  std::vector<double> cumulative(layout.weights.size());
  double acc = 0.0;
  for (std::size_t m = 0; m < cumulative.size(); ++m) cumulative[m] = acc += layout.weights[m];

  LabeledSet set;
  set.num_classes = spec.classes;
  set.num_groups = spec.groups;
  set.points = Matrix(spec.classes * spec.points_per_class, spec.dim);
  set.class_labels.reserve(set.points.rows());
  if (spec.groups > 1) set.group_labels.reserve(set.points.rows());

  std::size_t row = 0;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    RngStream rng(spec.seed, kClassStreamBase + c + 100000 * spec.draw_seed);
    for (std::size_t i = 0; i < spec.points_per_class; ++i, ++row) {
      const std::size_t g = spec.groups > 1 ? rng.uniform_index(spec.groups) : 0;
      auto out = set.points.row(row);
      switch (spec.family) {
        case DatasetFamily::GaussMixture: {
          const std::size_t m = pick_weighted(rng, cumulative);
          const auto center = layout.centers.row(c * spec.modes + m);
          for (std::size_t d = 0; d < spec.dim; ++d) out[d] = center[d] + spec.spread * rng.normal();
          break;
        }
        case DatasetFamily::Rings: {
          // Class c is a ring of radius (c+1)·min_separation; modes are arcs on it.
          const std::size_t m = pick_weighted(rng, cumulative);
          const double radius = double(c + 1) * spec.min_separation;
          const double angle = 2.0 * std::numbers::pi * double(m) / double(spec.modes) +
                               (spec.spread / radius) * rng.normal();
          out[0] = radius * std::cos(angle) + spec.spread * rng.normal();
          out[1] = radius * std::sin(angle) + spec.spread * rng.normal();
          for (std::size_t d = 2; d < spec.dim; ++d) out[d] = spec.spread * rng.normal();
          break;
        }
        case DatasetFamily::MoonsPerClass: {
          // Two interleaved half circles anchored at the class's first mode centre.
          const auto center = layout.centers.row(c * spec.modes);
          const bool upper = rng.uniform() < 0.5;
          const double angle = std::numbers::pi * rng.uniform();
          const double x = upper ? std::cos(angle) : 1.0 - std::cos(angle);
          const double y = upper ? std::sin(angle) : 0.5 - std::sin(angle);
          out[0] = center[0] + x + spec.spread * rng.normal();
          out[1] = center[1] + y + spec.spread * rng.normal();
          for (std::size_t d = 2; d < spec.dim; ++d) out[d] = center[d] + spec.spread * rng.normal();
          break;
        }
      }
      for (std::size_t d = 0; d < spec.dim; ++d) out[d] += layout.group_shifts(g, d);
      set.class_labels.push_back(static_cast<int>(c));
      if (spec.groups > 1) set.group_labels.push_back(static_cast<int>(g));
    }
  }
  return set;
}

SplitResult split(const LabeledSet& set, std::size_t k, std::uint64_t seed, std::size_t validation_per_class) {
  SplitResult result;
  result.exemplars.k = k;
  std::vector<std::size_t> exemplar_rows;
  for (std::size_t c = 0; c < set.num_classes; ++c) {
    std::vector<std::size_t> rows = set.rows_of_class(static_cast<int>(c));
    if (rows.size() < k + validation_per_class || rows.size() <= validation_per_class) {
      throw SplitError("split: class " + std::to_string(c) + " has " + std::to_string(rows.size()) +
                       " points, needs at least " + std::to_string(std::max(k, std::size_t{1}) + validation_per_class));
    }
    // Canonical content order makes the draw independent of storage order.
    std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
      const auto ra = set.points.row(a);
      const auto rb = set.points.row(b);
      return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
    });
    RngStream rng(seed, kSplitStreamBase + c);
    const std::vector<std::size_t> perm = permutation(rng, rows.size());
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (i < validation_per_class) result.validation_rows.push_back(rows[perm[i]]);
      else train.push_back(rows[perm[i]]);
    }
    RngStream erng(seed, kExemplarStreamBase + c);
    const std::vector<std::size_t> pick = permutation(erng, train.size());
    for (std::size_t i = 0; i < k; ++i) {
      exemplar_rows.push_back(train[pick[i]]);
      result.exemplars.class_labels.push_back(static_cast<int>(c));
    }
    result.train_rows.insert(result.train_rows.end(), train.begin(), train.end());
  }
  std::sort(result.train_rows.begin(), result.train_rows.end());
  std::sort(result.validation_rows.begin(), result.validation_rows.end());
  result.train = set.subset(result.train_rows);
  result.validation = set.subset(result.validation_rows);
  result.exemplars.points = set.points.select_rows(exemplar_rows);
  result.exemplar_rows = std::move(exemplar_rows);
  return result;
}

DatasetSpec scaled_shift_spec(const DatasetSpec& spec, double factor) {
  DatasetSpec out = spec;
  out.group_shifts = factor * mixture_layout(spec).group_shifts;
  return out;
}

std::string family_name(DatasetFamily f) {
  switch (f) {
    case DatasetFamily::GaussMixture: return "gauss-mixture";
    case DatasetFamily::Rings: return "rings";
    case DatasetFamily::MoonsPerClass: return "moons-per-class";
  }
  return "unknown";
}

DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
  DatasetSpec s;
  const std::string family = j.value("family", std::string("gauss-mixture"));
  if (family == "gauss-mixture") s.family = DatasetFamily::GaussMixture;
  else if (family == "rings") s.family = DatasetFamily::Rings;
  else if (family == "moons-per-class") s.family = DatasetFamily::MoonsPerClass;
  else throw SpecError("dataset spec: unknown family '" + family + "'");
  s.dim = j.value("dim", s.dim);
  s.classes = j.value("classes", s.classes);
  s.groups = j.value("groups", s.groups);
  s.modes = j.value("modes", s.modes);
  s.spread = j.value("spread", s.spread);
  s.center_scale = j.value("center_scale", s.center_scale);
  s.min_separation = j.value("min_separation", s.min_separation);
  s.mode_decay = j.value("mode_decay", s.mode_decay);
  s.group_shift_scale = j.value("group_shift_scale", s.group_shift_scale);
  s.points_per_class = j.value("points_per_class", s.points_per_class);
  s.seed = j.value("seed", s.seed);
  s.draw_seed = j.value("draw_seed", s.draw_seed);
  if (j.contains("group_shifts")) {
    const auto& rows = j.at("group_shifts");
    if (!rows.empty()) {
      s.group_shifts = Matrix(rows.size(), rows.at(0).size());
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < s.group_shifts.cols(); ++c) s.group_shifts(r, c) = rows.at(r).at(c).get<double>();
    }
  }
  s.validate();
  return s;
}

nlohmann::json to_json(const DatasetSpec& s) {
  nlohmann::json j;
  j["family"] = family_name(s.family);
  j["dim"] = s.dim;
  j["classes"] = s.classes;
  j["groups"] = s.groups;
  j["modes"] = s.modes;
  j["spread"] = s.spread;
  j["center_scale"] = s.center_scale;
  j["min_separation"] = s.min_separation;
  j["mode_decay"] = s.mode_decay;
  j["group_shift_scale"] = s.group_shift_scale;
  j["points_per_class"] = s.points_per_class;
  j["seed"] = s.seed;
  j["draw_seed"] = s.draw_seed;
  if (!s.group_shifts.empty()) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < s.group_shifts.rows(); ++r) {
      auto row = s.group_shifts.row(r);
      rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    j["group_shifts"] = rows;
  }
  return j;
}

void save_labeled_set(const std::filesystem::path& base_in, const LabeledSet& set) {
  const auto base = strip_chlm(base_in);
  write_chlm(with_suffix(base, ".chlm"), set.points);
  std::ostringstream csv;
  csv << "index,class,group\n";
  for (std::size_t i = 0; i < set.size(); ++i)
    csv << i << ',' << set.class_labels[i] << ',' << (set.group_labels.empty() ? 0 : set.group_labels[i]) << '\n';
  write_text(with_suffix(base, ".labels.csv"), csv.str());
  nlohmann::ordered_json header;
  header["rows"] = set.size();
  header["dim"] = set.dim();
  header["classes"] = set.num_classes;
  header["groups"] = set.num_groups;
  header["grouped"] = !set.group_labels.empty();
  write_text(with_suffix(base, ".json"), header.dump(2) + "\n");
}

LabeledSet load_labeled_set(const std::filesystem::path& base_in) {
  const auto base = strip_chlm(base_in);
  LabeledSet set;
  set.points = read_chlm(with_suffix(base, ".chlm"));
  const auto header = nlohmann::json::parse(read_text(with_suffix(base, ".json")));
  set.num_classes = header.at("classes").get<std::size_t>();
  set.num_groups = header.at("groups").get<std::size_t>();
  const bool grouped = header.value("grouped", false);
  std::istringstream csv(read_text(with_suffix(base, ".labels.csv")));
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::size_t index = 0;
    int cls = 0;
    int grp = 0;
    char c1 = 0;
    char c2 = 0;
    std::istringstream ls(line);
    if (!(ls >> index >> c1 >> cls >> c2 >> grp)) throw FormatError("labels csv: malformed line '" + line + "'");
    set.class_labels.push_back(cls);
    if (grouped) set.group_labels.push_back(grp);
  }
  if (set.class_labels.size() != set.size()) throw FormatError("labels csv: row count does not match points");
  return set;
}

}  // namespace chamferlab
