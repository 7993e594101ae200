#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>

#include <json.hpp>

namespace chamferlab {

// FLOP accounting for one generated sample. All costs are FLOPs.
struct CostSpec {
  double denoiser_flops = 0.0;          // one forward pass
  double decode_flops = 0.0;            // latent → image decode
  double projector_flops = 0.0;         // feature extraction per image during guidance
  double exemplar_encode_flops = 0.0;   // feature extraction per reference image
  std::size_t steps = 40;
  bool cfg_enabled = false;             // CFG on in the guided configuration
  std::size_t g_freq = 5;               // 0 disables guidance
  std::size_t k = 0;
  // Fixed intermediate totals; when present they replace the products
  // computed from the per-unit costs above.
  std::optional<double> reference_encode_total;
  std::optional<double> guidance_total;
  // Fixed sum of the two above, rounded on its own.
  std::optional<double> overhead_total;

  void validate() const;
};

struct CostReport {
  double baseline_total = 0.0;  // no CFG, no guidance
  double cfg_total = 0.0;       // CFG, no guidance
  double guided_total = 0.0;
  double efficiency_gain = 0.0;  // 1 − guided/cfg
  std::size_t guidance_steps = 0;
  double reference_encode_total = 0.0;
  double guidance_total = 0.0;
  double overhead_total = 0.0;  // reference encoding + guidance
};

// floor(T / g_freq)
std::size_t guidance_step_count(std::size_t steps, std::size_t g_freq);

CostReport total_flops(const CostSpec& spec);

CostSpec cost_spec_from_json(const nlohmann::json& j);
CostSpec load_cost_spec(const std::filesystem::path& file);
nlohmann::ordered_json to_json(const CostReport& report);

}  // namespace chamferlab
