#include "chamferlab/utility.hpp"

#include <sstream>

#include "chamferlab/errors.hpp"
#include "chamferlab/rng.hpp"
#include "chamferlab/tape.hpp"

namespace chamferlab {

Matrix Classifier::logits(const Matrix& x) const { return mlp_forward(x, layers, false); }

std::vector<int> Classifier::predict(const Matrix& x) const {
  const Matrix z = logits(x);
  std::vector<int> out(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < z.cols(); ++c)
      if (z(r, c) > z(r, best)) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

double Classifier::accuracy(const LabeledSet& data) const {
  if (data.size() == 0) return 0.0;
  const auto pred = predict(data.points);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.class_labels[i];
  return double(correct) / double(pred.size());
}

Projector Classifier::encoder(bool l2_normalize) const {
  return Projector::encoder(std::vector<Linear>(layers.begin(), layers.end() - 1), l2_normalize);
}

Classifier train_classifier(const LabeledSet& data, const ClassifierSpec& spec, std::uint64_t seed) {
  std::vector<bool> seen(data.num_classes, false);
  std::size_t present = 0;
  for (int l : data.class_labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= data.num_classes) throw RangeError("train_classifier: label out of range");
    if (!seen[l]) {
      seen[l] = true;
      ++present;
    }
  }
  if (present < 2) throw ContractError("train_classifier: need at least two classes in the training data");

  RngStream rng(seed, 51);
  Classifier clf;
  clf.classes = data.num_classes;
  std::size_t in = data.dim();
  for (std::size_t i = 0; i < spec.hidden_layers; ++i) {
    clf.layers.push_back(make_linear(in, spec.hidden_width, rng));
    in = spec.hidden_width;
  }
  clf.layers.push_back(make_linear(in, clf.classes, rng, 0.0));

  Optimizer opt(OptimizerKind::Adam, spec.learning_rate);
  const std::size_t B = std::min(spec.batch_size, data.size());
  for (std::size_t step = 0; step < spec.steps; ++step) {
    std::vector<std::size_t> rows(B);
    std::vector<int> labels(B);
    for (std::size_t i = 0; i < B; ++i) {
      rows[i] = rng.uniform_index(data.size());
      labels[i] = data.class_labels[rows[i]];
    }
    Tape tape;
    const MlpVars vars = bind_layers(tape, clf.layers, true);
    Var loss = cross_entropy(mlp_forward(tape.constant(data.points.select_rows(rows)), vars, false), labels);
    std::vector<Var> inputs;
    std::vector<Matrix*> params;
    for (std::size_t i = 0; i < clf.layers.size(); ++i) {
      inputs.push_back(vars.weights[i]);
      inputs.push_back(vars.biases[i]);
      params.push_back(&clf.layers[i].weight);
      params.push_back(&clf.layers[i].bias);
    }
    opt.step(params, tape.grad(loss, inputs));
  }
  return clf;
}

Generator oracle_generator(const DatasetSpec& spec) {
  return [spec](std::size_t n, std::uint64_t seed) {
    DatasetSpec s = spec;
    s.draw_seed = 1 + seed;
    s.points_per_class = std::max<std::size_t>(1, (n + spec.classes - 1) / spec.classes);
    LabeledSet full = generate(s);
    std::vector<std::size_t> rows;
    for (std::size_t c = 0; c < spec.classes; ++c) {
      const std::size_t take = n / spec.classes + (c < n % spec.classes ? 1 : 0);
      for (std::size_t i = 0; i < take; ++i) rows.push_back(c * s.points_per_class + i);
    }
    return full.subset(rows);
  };
}

UtilityData utility_data(const DatasetSpec& spec, std::size_t validation_per_class) {
  UtilityData d;
  const LabeledSet full = generate(spec);
  SplitResult s = split(full, 0, spec.seed, validation_per_class);
  d.real_train = std::move(s.train);
  d.validation = std::move(s.validation);
  DatasetSpec shifted = scaled_shift_spec(spec, 1.5);
  shifted.points_per_class = validation_per_class;
  shifted.draw_seed = spec.draw_seed + 0x5EED;
  d.shifted_validation = generate(shifted);
  return d;
}

std::vector<UtilityRun> utility_experiment(const Generator& generator, std::size_t n_synth, std::size_t n_real,
                                           const UtilityData& data, const ClassifierSpec& spec,
                                           const std::vector<std::uint64_t>& seeds) {
  std::vector<UtilityRun> runs;
  for (std::uint64_t seed : seeds) {
    LabeledSet train;
    train.num_classes = data.real_train.num_classes;
    train.points = Matrix(0, data.real_train.dim());
    if (n_synth > 0) {
      LabeledSet synth = generator(n_synth, seed);
      train.points = synth.points;
      train.class_labels = synth.class_labels;
    }
    if (n_real > 0) {
      RngStream rng(seed, 71);
      const auto perm = permutation(rng, data.real_train.size());
      std::vector<std::size_t> rows(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(std::min(n_real, perm.size())));
      const LabeledSet real = data.real_train.subset(rows);
      train.points = vstack(train.points, real.points);
      train.class_labels.insert(train.class_labels.end(), real.class_labels.begin(), real.class_labels.end());
    }
    const Classifier clf = train_classifier(train, spec, seed);
    UtilityRun run;
    run.seed = seed;
    run.n_synth = n_synth;
    run.n_real = n_real;
    run.mix = n_synth > 0 ? (n_real > 0 ? "mixed" : "synthetic-only") : "real-only";
    run.acc_id = clf.accuracy(data.validation);
    run.acc_ood = clf.accuracy(data.shifted_validation);
    runs.push_back(run);
  }
  return runs;
}

std::string utility_csv(const std::vector<UtilityRun>& runs) {
  std::ostringstream out;
  out.precision(17);
  out << "seed,mix,acc_id,acc_ood\n";
  for (const auto& r : runs) out << r.seed << ',' << r.mix << ',' << r.acc_id << ',' << r.acc_ood << '\n';
  return out.str();
}

}  // namespace chamferlab
