#include "chamferlab/sampler.hpp"

#include "chamferlab/diffusion.hpp"
#include "chamferlab/errors.hpp"

namespace chamferlab {

Matrix sample(const DenoiserModel& model, const NoiseSchedule& sched, std::span<const int> labels,
              const SamplingConfig& config, RngStream& rng, SampleStats* stats) {
  const std::size_t n = labels.size();
  const std::size_t T = sched.steps();
  if (config.guidance) config.guidance->validate();
  if (config.cads) config.cads->validate();
  for (int l : labels)
    if (l < 0 || l > model.null_token()) throw RangeError("sample: label " + std::to_string(l) + " out of range");

  SampleStats local;
  SampleStats& st = stats != nullptr ? *stats : local;
  RngStream cads_rng = rng.derive(0xCAD5);
  const Matrix base_cond = model.class_embedding(labels);
  const std::vector<int> nulls(n, model.null_token());
  const Matrix null_cond = model.class_embedding(nulls);

  Matrix x = gauss(rng, n, model.arch().dim);
  for (std::size_t t = T; t >= 1; --t) {
    const Matrix cond = config.cads ? cads_anneal(base_cond, t, T, *config.cads, cads_rng) : base_cond;
    Matrix eps = model.predict_with_embedding(x, t, cond);
    ++st.denoiser_calls;
    if (config.omega != 1.0) {
      const Matrix eps_u = model.predict_with_embedding(x, t, null_cond);
      ++st.denoiser_calls;
      ++st.unconditional_calls;
      eps = cfg_combine(eps, eps_u, config.omega);
    }
    if (config.guidance && config.guidance->gamma != 0.0 && config.guidance->scheduled(t)) {
      try {
        GuidanceInputs in{&model, labels, cond, config.omega};
        GuidanceResult g = guidance_step(x, t, eps, sched, *config.guidance, in);
        x = std::move(g.x_t);
        eps = std::move(g.eps);
        ++st.guidance_calls;
        st.guidance_losses.push_back(g.loss);
      } catch (const Error& e) {
        throw NumericalError("sample: guidance failed at step t=" + std::to_string(t) + ": " + e.what());
      }
    }
    x = ddpm_step(x, eps, t, sched, rng);
  }
  return x;
}

}  // namespace chamferlab

namespace chamferlab {

LabeledSet generate_per_class(const DenoiserModel& model, const NoiseSchedule& sched, const SamplingConfig& config,
                              std::size_t per_class, std::size_t batch, std::uint64_t seed) {
  if (batch == 0) throw ConfigError("generate_per_class: batch must be >= 1");
  LabeledSet out;
  out.num_classes = model.arch().classes;
  out.points = Matrix(0, model.arch().dim);
  for (std::size_t c = 0; c < out.num_classes; ++c) {
    std::size_t done = 0;
    for (std::size_t b = 0; done < per_class; ++b) {
      const std::size_t n = std::min(batch, per_class - done);
      const std::vector<int> labels(n, static_cast<int>(c));
      RngStream rng(seed, c * 1000 + b);
      out.points = vstack(out.points, sample(model, sched, labels, config, rng));
      out.class_labels.insert(out.class_labels.end(), labels.begin(), labels.end());
      done += n;
    }
  }
  return out;
}

}  // namespace chamferlab
