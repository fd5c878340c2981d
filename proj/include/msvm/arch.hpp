#pragma once

// Declarative model variants and their analytic parameter / MAC accounting.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "msvm/ms2d.hpp"

namespace msvm {

enum class TokenMixer { ms2d, ss2d };

struct ArchSpec {
  std::string name = "custom";
  std::size_t in_channels = 3;
  std::size_t stem_dim = 48;  // channels after the 4x4 / stride-4 stem, equals stage_dims[0]
  std::size_t stem_patch = 4;
  std::vector<std::size_t> stage_depths{1, 2, 5, 2};
  std::vector<std::size_t> stage_dims{48, 96, 192, 384};
  std::size_t state_dim = 1;  // N
  TokenMixer mixer = TokenMixer::ms2d;
  Ms2dConfig ms2d;
  bool use_se = true;
  bool use_convffn = true;
  bool gated = true;  // multiplicative SiLU branch around the token mixer
  std::size_t ssm_ratio = 2;     // token-mixer width = ssm_ratio * d
  std::size_t ffn_ratio = 2;     // ConvFFN hidden width = ffn_ratio * d
  std::size_t se_reduction = 4;  // SE hidden width = max(1, width / se_reduction)
  std::size_t dt_rank = 0;       // 0: ceil(d / 16) for a stage of width d
  std::size_t num_classes = 1000;

  void validate() const;
  std::size_t num_stages() const { return stage_dims.size(); }
  std::size_t mixer_width(std::size_t stage) const { return ssm_ratio * stage_dims.at(stage); }
  std::size_t stage_dt_rank(std::size_t stage) const;
  std::size_t se_hidden(std::size_t stage) const;
  std::size_t mixer_groups() const;
};

// "nano", "micro", "tiny", plus "ss2d-nano" (SS2D ablation baseline) and "toy".
ArchSpec build_arch(const std::string& variant);
std::vector<std::string> known_variants();

// Table-4 style ladder at fixed dims / depths: SS2D baseline (N=8), +MS2D, +SE,
// +ConvFFN, N=1.
std::vector<ArchSpec> ablation_specs(std::vector<std::size_t> dims, std::vector<std::size_t> depths,
                                     std::size_t num_classes);

struct CostTargets {
  double params = 0;  // absolute count
  double flops = 0;   // MACs at 224x224
  double params_tolerance = 0.10;
  double flops_tolerance = 0.15;
};

std::optional<CostTargets> cost_targets(const std::string& variant);

// Stage operating resolution (input of stage i's blocks) for an H x W image.
std::vector<std::pair<std::size_t, std::size_t>> stage_resolutions(const ArchSpec& spec, std::size_t H,
                                                                   std::size_t W);

std::size_t count_params(const ArchSpec& spec);

struct CostReport {
  std::size_t params = 0;
  std::size_t macs = 0;          // total multiply-accumulates
  std::size_t spatial_macs = 0;  // part that scales with the token count
  std::size_t fixed_macs = 0;    // SE excitation and classifier
  std::size_t s6_macs = 0;       // 9 * tokens * D * N over all scans
  std::size_t scanned_tokens = 0;
};

// MAC convention: dense/conv = output elements * kernel elements * input channels
// (depthwise: * 1); selective scan = 9 * tokens * D * N; norms, activations,
// interpolation and elementwise products are free.
CostReport count_flops(const ArchSpec& spec, std::size_t H, std::size_t W);

const char* mixer_name(TokenMixer mixer);

}  // namespace msvm
