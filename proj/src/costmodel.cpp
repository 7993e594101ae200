#include "chamferlab/costmodel.hpp"

#include "chamferlab/errors.hpp"
#include "chamferlab/io.hpp"

namespace chamferlab {

void CostSpec::validate() const {
  if (steps < 1) throw ConfigError("cost spec: steps must be >= 1");
  if (denoiser_flops < 0 || decode_flops < 0 || projector_flops < 0 || exemplar_encode_flops < 0) {
    throw ConfigError("cost spec: costs must be >= 0");
  }
  if ((reference_encode_total && *reference_encode_total < 0) || (guidance_total && *guidance_total < 0) ||
      (overhead_total && *overhead_total < 0)) {
    throw ConfigError("cost spec: fixed totals must be >= 0");
  }
}

std::size_t guidance_step_count(std::size_t steps, std::size_t g_freq) { return g_freq == 0 ? 0 : steps / g_freq; }

CostReport total_flops(const CostSpec& s) {
  s.validate();
  CostReport r;
  const double T = double(s.steps);
  r.baseline_total = T * s.denoiser_flops + s.decode_flops;
  r.cfg_total = T * 2.0 * s.denoiser_flops + s.decode_flops;
  r.guidance_steps = guidance_step_count(s.steps, s.g_freq);
  r.reference_encode_total = s.reference_encode_total.value_or(double(s.k) * s.exemplar_encode_flops);
  r.guidance_total = s.guidance_total.value_or(double(r.guidance_steps) * (s.decode_flops + s.projector_flops));
  r.overhead_total = s.overhead_total.value_or(r.reference_encode_total + r.guidance_total);
  r.guided_total = T * s.denoiser_flops * (s.cfg_enabled ? 2.0 : 1.0) + s.decode_flops + r.overhead_total;
  r.efficiency_gain = r.cfg_total > 0.0 ? 1.0 - r.guided_total / r.cfg_total : 0.0;
  return r;
}

CostSpec cost_spec_from_json(const nlohmann::json& j) {
  CostSpec s;
  s.denoiser_flops = j.at("denoiser_flops");
  s.decode_flops = j.value("decode_flops", 0.0);
  s.projector_flops = j.value("projector_flops", 0.0);
  s.exemplar_encode_flops = j.value("exemplar_encode_flops", 0.0);
  s.steps = j.value("steps", s.steps);
  s.cfg_enabled = j.value("cfg_enabled", false);
  s.g_freq = j.value("g_freq", s.g_freq);
  s.k = j.value("k", s.k);
  if (j.contains("reference_encode_total")) s.reference_encode_total = j.at("reference_encode_total").get<double>();
  if (j.contains("guidance_total")) s.guidance_total = j.at("guidance_total").get<double>();
  if (j.contains("overhead_total")) s.overhead_total = j.at("overhead_total").get<double>();
  s.validate();
  return s;
}

CostSpec load_cost_spec(const std::filesystem::path& file) {
  try {
    return cost_spec_from_json(nlohmann::json::parse(read_text(file)));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cost spec " + file.string() + ": " + e.what());
  }
}

nlohmann::ordered_json to_json(const CostReport& r) {
  nlohmann::ordered_json j;
  j["baseline_total"] = r.baseline_total;
  j["cfg_total"] = r.cfg_total;
  j["guided_total"] = r.guided_total;
  j["efficiency_gain"] = r.efficiency_gain;
  j["guidance_steps"] = r.guidance_steps;
  j["reference_encode_total"] = r.reference_encode_total;
  j["guidance_total"] = r.guidance_total;
  j["overhead_total"] = r.overhead_total;
  return j;
}

}  // namespace chamferlab
