#include "chamferlab/featspace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "chamferlab/errors.hpp"
#include "chamferlab/io.hpp"
#include "chamferlab/rng.hpp"

namespace chamferlab {
namespace {

constexpr std::size_t kNoExclude = std::numeric_limits<std::size_t>::max();

using Candidate = std::pair<double, std::size_t>;

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  const auto& rows = j.at("data");
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = rows.at(r).at(c).get<double>();
  return m;
}

std::filesystem::path strip_chlm(std::filesystem::path base) {
  if (base.extension() == ".chlm") base.replace_extension();
  return base;
}

}  // namespace

std::string projector_kind_name(ProjectorKind kind) {
  switch (kind) {
    case ProjectorKind::Identity: return "identity";
    case ProjectorKind::RandomLinear: return "random-linear";
    case ProjectorKind::TrainedEncoder: return "trained-encoder";
  }
  return "unknown";
}

std::string feature_source_name(FeatureSource source) { return source == FeatureSource::Real ? "real" : "generated"; }

Projector Projector::identity(std::size_t dim, bool l2_normalize) {
  Projector p;
  p.kind_ = ProjectorKind::Identity;
  p.in_dim_ = p.out_dim_ = dim;
  p.l2_normalize_ = l2_normalize;
  p.finalize();
  return p;
}

Projector Projector::linear(Matrix weight, bool l2_normalize) {
  Projector p;
  p.kind_ = ProjectorKind::RandomLinear;
  p.in_dim_ = weight.rows();
  p.out_dim_ = weight.cols();
  p.weight_ = std::move(weight);
  p.l2_normalize_ = l2_normalize;
  p.finalize();
  return p;
}

Projector Projector::random_linear(std::size_t dim, std::size_t out_dim, std::uint64_t seed, bool l2_normalize) {
  RngStream rng(seed, 41);
  return linear((1.0 / std::sqrt(double(dim))) * gauss(rng, dim, out_dim), l2_normalize);
}

Projector Projector::encoder(std::vector<Linear> layers, bool l2_normalize) {
  if (layers.empty()) throw ProjectorError("encoder projector needs at least one layer");
  for (std::size_t i = 1; i < layers.size(); ++i)
    if (layers[i].in() != layers[i - 1].out()) throw ProjectorError("encoder projector: layer sizes do not chain");
  Projector p;
  p.kind_ = ProjectorKind::TrainedEncoder;
  p.in_dim_ = layers.front().in();
  p.out_dim_ = layers.back().out();
  p.layers_ = std::move(layers);
  p.l2_normalize_ = l2_normalize;
  p.finalize();
  return p;
}

void Projector::finalize() {
  Fnv1a h;
  h.text(projector_kind_name(kind_)).u64(in_dim_).u64(out_dim_).u64(l2_normalize_ ? 1 : 0);
  h.matrix(weight_);
  for (const Linear& l : layers_) h.matrix(l.weight).matrix(l.bias);
  id_ = h.digest();
}

Matrix Projector::raw(const Matrix& batch) const {
  switch (kind_) {
    case ProjectorKind::Identity: return batch;
    case ProjectorKind::RandomLinear: return matmul(batch, weight_);
    case ProjectorKind::TrainedEncoder: return mlp_forward(batch, layers_, true);
  }
  return batch;
}

Matrix Projector::raw_vjp(const Matrix& batch, const Matrix& upstream) const {
  switch (kind_) {
    case ProjectorKind::Identity: return upstream;
    case ProjectorKind::RandomLinear: return matmul_nt(upstream, weight_);
    case ProjectorKind::TrainedEncoder: {
      Tape tape;
      const MlpVars vars = bind_layers(tape, layers_, false);
      Var x = tape.variable(batch);
      Var out = mlp_forward(x, vars, true);
      const Var inputs[] = {x};
      return tape.grad(weighted_sum(out, upstream), inputs)[0];
    }
  }
  return upstream;
}

Matrix Projector::apply(const Matrix& batch) const {
  if (batch.cols() != in_dim_) {
    throw ProjectorError("projector expects " + std::to_string(in_dim_) + " columns, got " + batch.shape_string());
  }
  Matrix z = raw(batch);
  if (l2_normalize_) {
    for (std::size_t r = 0; r < z.rows(); ++r) {
      auto row = z.row(r);
      double n = 0.0;
      for (double v : row) n += v * v;
      n = std::sqrt(n);
      if (n > 0.0)
        for (double& v : row) v /= n;
    }
  }
  return z;
}

Matrix Projector::vjp(const Matrix& batch, const Matrix& upstream) const {
  if (batch.cols() != in_dim_ || upstream.rows() != batch.rows() || upstream.cols() != out_dim_) {
    throw ProjectorError("projector vjp: inconsistent shapes " + batch.shape_string() + " / " + upstream.shape_string());
  }
  if (!l2_normalize_) return raw_vjp(batch, upstream);
  // f = z/‖z‖ ⇒ Jᵀu = (u − f(f·u))/‖z‖
  const Matrix z = raw(batch);
  Matrix dz(upstream.rows(), upstream.cols());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    double n = 0.0;
    for (double v : z.row(r)) n += v * v;
    n = std::sqrt(n);
    if (n == 0.0) continue;
    double fu = 0.0;
    for (std::size_t c = 0; c < z.cols(); ++c) fu += z(r, c) / n * upstream(r, c);
    for (std::size_t c = 0; c < z.cols(); ++c) dz(r, c) = (upstream(r, c) - z(r, c) / n * fu) / n;
  }
  return raw_vjp(batch, dz);
}

void Projector::save(const std::filesystem::path& file) const {
  nlohmann::json j;
  j["format"] = "chamferlab-projector";
  j["kind"] = projector_kind_name(kind_);
  j["in_dim"] = in_dim_;
  j["out_dim"] = out_dim_;
  j["l2_normalize"] = l2_normalize_;
  j["id"] = hex64(id_);
  if (kind_ == ProjectorKind::RandomLinear) j["weight"] = matrix_to_json(weight_);
  if (kind_ == ProjectorKind::TrainedEncoder) {
    nlohmann::json layers = nlohmann::json::array();
    for (const Linear& l : layers_) layers.push_back({{"weight", matrix_to_json(l.weight)}, {"bias", matrix_to_json(l.bias)}});
    j["layers"] = layers;
  }
  write_text(file, j.dump() + "\n");
}

Projector Projector::load(const std::filesystem::path& file) {
  const auto j = nlohmann::json::parse(read_text(file));
  const std::string kind = j.at("kind");
  const bool norm = j.value("l2_normalize", false);
  Projector p = [&] {
    if (kind == "identity") return identity(j.at("in_dim").get<std::size_t>(), norm);
    if (kind == "random-linear") {
      if (!j.contains("weight")) {
        return random_linear(j.at("in_dim").get<std::size_t>(), j.at("out_dim").get<std::size_t>(),
                             j.value("seed", std::uint64_t{0}), norm);
      }
      return linear(matrix_from_json(j.at("weight")), norm);
    }
    if (kind == "trained-encoder") {
      std::vector<Linear> layers;
      for (const auto& l : j.at("layers")) layers.push_back({matrix_from_json(l.at("weight")), matrix_from_json(l.at("bias"))});
      return encoder(std::move(layers), norm);
    }
    throw ProjectorError("unknown projector kind '" + kind + "'");
  }();
  return p;
}

FeatureSet FeatureSet::select(std::span<const std::size_t> rows) const {
  return FeatureSet{features.select_rows(rows), projector_id, source};
}

FeatureSet project(const Projector& p, const Matrix& batch, FeatureSource source) {
  return FeatureSet{p.apply(batch), p.id(), source};
}

Matrix project_vjp(const Projector& p, const Matrix& batch, const Matrix& upstream) { return p.vjp(batch, upstream); }

void require_same_space(const FeatureSet& a, const FeatureSet& b, const char* op) {
  if (a.projector_id != b.projector_id) {
    throw ProjectorError(std::string(op) + ": feature sets come from different projectors (" + hex64(a.projector_id) +
                         " vs " + hex64(b.projector_id) + ")");
  }
  if (a.dim() != b.dim()) throw DimensionError(std::string(op) + ": feature dimensions differ");
}

void save_feature_set(const std::filesystem::path& base_in, const FeatureSet& set) {
  const auto base = strip_chlm(base_in);
  write_chlm(base.string() + ".chlm", set.features);
  nlohmann::json j{{"projector_id", hex64(set.projector_id)}, {"source", feature_source_name(set.source)}};
  write_text(base.string() + ".json", j.dump(2) + "\n");
}

FeatureSet load_feature_set(const std::filesystem::path& base_in) {
  const auto base = strip_chlm(base_in);
  FeatureSet set;
  set.features = read_chlm(base.string() + ".chlm");
  const auto j = nlohmann::json::parse(read_text(base.string() + ".json"));
  set.projector_id = std::stoull(j.at("projector_id").get<std::string>(), nullptr, 16);
  set.source = j.at("source").get<std::string>() == "real" ? FeatureSource::Real : FeatureSource::Generated;
  return set;
}

NeighborIndex::NeighborIndex(Matrix points, NeighborStrategy strategy) : points_(std::move(points)), strategy_(strategy) {
  const std::size_t D = points_.cols();
  if (strategy_ == NeighborStrategy::Auto) strategy_ = (D <= 3 && points_.rows() > 64) ? NeighborStrategy::CellGrid : NeighborStrategy::Brute;
  if (strategy_ == NeighborStrategy::CellGrid && (D > 3 || D == 0 || points_.rows() == 0)) strategy_ = NeighborStrategy::Brute;
  if (strategy_ != NeighborStrategy::CellGrid) return;

  std::array<double, 3> lo{0, 0, 0};
  std::array<double, 3> hi{0, 0, 0};
  for (std::size_t d = 0; d < D; ++d) {
    lo[d] = hi[d] = points_(0, d);
    for (std::size_t r = 1; r < points_.rows(); ++r) {
      lo[d] = std::min(lo[d], points_(r, d));
      hi[d] = std::max(hi[d], points_(r, d));
    }
  }
  double volume = 1.0;
  for (std::size_t d = 0; d < D; ++d) volume *= std::max(hi[d] - lo[d], 1e-9);
  cell_size_ = std::pow(2.0 * volume / double(points_.rows()), 1.0 / double(D));
  if (!(cell_size_ > 0.0) || !std::isfinite(cell_size_)) cell_size_ = 1.0;
  origin_ = lo;
  for (std::size_t d = 0; d < 3; ++d)
    extent_[d] = d < D ? static_cast<std::int64_t>(std::floor((hi[d] - lo[d]) / cell_size_)) + 1 : 1;
  for (std::size_t r = 0; r < points_.rows(); ++r) cells_[cell_key(cell_of(points_.row(r)))].push_back(r);
}

std::array<std::int64_t, 3> NeighborIndex::cell_of(std::span<const double> p) const {
  std::array<std::int64_t, 3> c{0, 0, 0};
  for (std::size_t d = 0; d < p.size(); ++d) c[d] = static_cast<std::int64_t>(std::floor((p[d] - origin_[d]) / cell_size_));
  return c;
}

std::int64_t NeighborIndex::cell_key(const std::array<std::int64_t, 3>& c) const {
  return c[0] + extent_[0] * (c[1] + extent_[1] * c[2]);
}

KnnResult NeighborIndex::knn(const Matrix& queries, std::size_t k) const {
  if (k > points_.rows()) {
    throw RangeError("knn: k=" + std::to_string(k) + " exceeds backing size " + std::to_string(points_.rows()));
  }
  if (queries.cols() != points_.cols()) throw DimensionError("knn: query dimension mismatch");
  KnnResult res;
  res.k = k;
  res.indices.resize(queries.rows() * k);
  res.sq_distances.resize(queries.rows() * k);
  for (std::size_t q = 0; q < queries.rows(); ++q)
    knn_one(queries.row(q), k, kNoExclude, res.indices.data() + q * k, res.sq_distances.data() + q * k);
  return res;
}

KnnResult NeighborIndex::knn_self(std::size_t k) const {
  if (k + 1 > points_.rows()) {
    throw RangeError("knn_self: k=" + std::to_string(k) + " needs more than " + std::to_string(points_.rows()) + " points");
  }
  KnnResult res;
  res.k = k;
  res.indices.resize(points_.rows() * k);
  res.sq_distances.resize(points_.rows() * k);
  for (std::size_t q = 0; q < points_.rows(); ++q)
    knn_one(points_.row(q), k, q, res.indices.data() + q * k, res.sq_distances.data() + q * k);
  return res;
}

void NeighborIndex::knn_one(std::span<const double> q, std::size_t k, std::size_t exclude, std::size_t* out_idx,
                            double* out_d) const {
  if (k == 0) return;
  if (strategy_ == NeighborStrategy::CellGrid) grid_one(q, k, exclude, out_idx, out_d);
  else brute_one(q, k, exclude, out_idx, out_d);
}

void NeighborIndex::brute_one(std::span<const double> q, std::size_t k, std::size_t exclude, std::size_t* out_idx,
                              double* out_d) const {
  std::vector<Candidate> all;
  all.reserve(points_.rows());
  for (std::size_t r = 0; r < points_.rows(); ++r)
    if (r != exclude) all.emplace_back(squared_distance(q, points_.row(r)), r);
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end());
  for (std::size_t j = 0; j < k; ++j) {
    out_d[j] = all[j].first;
    out_idx[j] = all[j].second;
  }
}

void NeighborIndex::grid_one(std::span<const double> q, std::size_t k, std::size_t exclude, std::size_t* out_idx,
                             double* out_d) const {
  const std::size_t D = points_.cols();
  const auto qc = cell_of(q);
  std::int64_t r_start = 0;
  std::int64_t r_end = 0;
  for (std::size_t d = 0; d < D; ++d) {
    r_start = std::max({r_start, -qc[d], qc[d] - (extent_[d] - 1)});
    r_end = std::max({r_end, qc[d], (extent_[d] - 1) - qc[d]});
  }
  std::vector<Candidate> found;
  auto visit_cell = [&](const std::array<std::int64_t, 3>& c) {
    const auto it = cells_.find(cell_key(c));
    if (it == cells_.end()) return;
    for (std::size_t r : it->second)
      if (r != exclude) found.emplace_back(squared_distance(q, points_.row(r)), r);
  };

  for (std::int64_t ring = r_start; ring <= r_end; ++ring) {
    std::array<std::int64_t, 3> lo{0, 0, 0};
    std::array<std::int64_t, 3> hi{0, 0, 0};
    for (std::size_t d = 0; d < D; ++d) {
      lo[d] = std::max<std::int64_t>(qc[d] - ring, 0);
      hi[d] = std::min<std::int64_t>(qc[d] + ring, extent_[d] - 1);
    }
    std::array<std::int64_t, 3> c{};
    for (c[2] = lo[2]; c[2] <= hi[2]; ++c[2])
      for (c[1] = lo[1]; c[1] <= hi[1]; ++c[1])
        for (c[0] = lo[0]; c[0] <= hi[0]; ++c[0]) {
          std::int64_t cheb = 0;
          for (std::size_t d = 0; d < D; ++d) cheb = std::max(cheb, std::abs(c[d] - qc[d]));
          if (cheb == ring) visit_cell(c);
        }
    if (found.size() >= k) {
      std::nth_element(found.begin(), found.begin() + static_cast<std::ptrdiff_t>(k - 1), found.end());
      // Every unvisited point is at least ring·h away; one cell of slack
      // absorbs floor() rounding at cell boundaries.
      const double bound = double(ring - 1) * cell_size_;
      if (ring >= 1 && found[k - 1].first < bound * bound) break;
    }
  }
  std::partial_sort(found.begin(), found.begin() + static_cast<std::ptrdiff_t>(k), found.end());
  for (std::size_t j = 0; j < k; ++j) {
    out_d[j] = found[j].first;
    out_idx[j] = found[j].second;
  }
}

}  // namespace chamferlab
