#include "msvm/arch.hpp"

#include <algorithm>

#include "msvm/errors.hpp"
#include "msvm/ops.hpp"

namespace msvm {

const char* mixer_name(TokenMixer mixer) { return mixer == TokenMixer::ms2d ? "ms2d" : "ss2d"; }

void ArchSpec::validate() const {
  if (stage_depths.size() != 4 || stage_dims.size() != 4)
    throw ConfigError("ArchSpec '" + name + "': expected 4 stage depths and 4 stage dims");
  for (std::size_t i = 0; i < 4; ++i) {
    if (stage_dims[i] == 0) throw ConfigError("ArchSpec '" + name + "': stage dims must be positive");
    if (i > 0 && stage_dims[i] != 2 * stage_dims[i - 1])
      throw ConfigError("ArchSpec '" + name + "': stage dims must double between stages");
  }
  if (stem_dim != stage_dims[0]) throw ConfigError("ArchSpec '" + name + "': stem_dim must equal stage_dims[0]");
  if (in_channels == 0 || stem_patch == 0 || state_dim == 0 || ssm_ratio == 0 || ffn_ratio == 0 ||
      se_reduction == 0 || num_classes == 0)
    throw ConfigError("ArchSpec '" + name + "': sizes and ratios must be positive");
  if (mixer == TokenMixer::ms2d) ms2d.validate();
}

std::size_t ArchSpec::stage_dt_rank(std::size_t stage) const {
  return dt_rank ? dt_rank : default_dt_rank(stage_dims.at(stage));
}

std::size_t ArchSpec::se_hidden(std::size_t stage) const {
  return std::max<std::size_t>(1, mixer_width(stage) / se_reduction);
}

std::size_t ArchSpec::mixer_groups() const {
  return mixer == TokenMixer::ms2d ? ms2d_param_groups(ms2d) : ss2d_param_groups(false);
}

namespace {

ArchSpec make(std::string name, std::size_t d, std::vector<std::size_t> depths) {
  ArchSpec s;
  s.name = std::move(name);
  s.stem_dim = d;
  s.stage_dims = {d, 2 * d, 4 * d, 8 * d};
  s.stage_depths = std::move(depths);
  return s;
}

}  // namespace

ArchSpec build_arch(const std::string& variant) {
  if (variant == "nano") return make("nano", 48, {1, 2, 5, 2});
  if (variant == "micro") return make("micro", 64, {1, 2, 5, 2});
  if (variant == "tiny") return make("tiny", 96, {1, 2, 9, 2});
  if (variant == "ss2d-nano") {
    ArchSpec s = make("ss2d-nano", 48, {1, 2, 4, 2});
    s.state_dim = 8;
    s.mixer = TokenMixer::ss2d;
    s.use_se = false;
    s.use_convffn = false;
    return s;
  }
  if (variant == "toy") {
    ArchSpec s = make("toy", 8, {1, 1, 1, 1});
    s.num_classes = 2;
    return s;
  }
  throw ConfigError("unknown architecture variant '" + variant + "'");
}

std::vector<std::string> known_variants() { return {"nano", "micro", "tiny", "ss2d-nano", "toy"}; }

std::vector<ArchSpec> ablation_specs(std::vector<std::size_t> dims, std::vector<std::size_t> depths,
                                     std::size_t num_classes) {
  ArchSpec base;
  base.stage_dims = std::move(dims);
  base.stem_dim = base.stage_dims.at(0);
  base.stage_depths = std::move(depths);
  base.num_classes = num_classes;

  std::vector<ArchSpec> ladder;
  ArchSpec s = base;
  s.name = "ss2d-baseline";
  s.mixer = TokenMixer::ss2d;
  s.use_se = false;
  s.use_convffn = false;
  s.state_dim = 8;
  ladder.push_back(s);
  s.name = "+ms2d";
  s.mixer = TokenMixer::ms2d;
  ladder.push_back(s);
  s.name = "+se";
  s.use_se = true;
  ladder.push_back(s);
  s.name = "+convffn";
  s.use_convffn = true;
  ladder.push_back(s);
  s.name = "n=1";
  s.state_dim = 1;
  ladder.push_back(s);
  for (const auto& a : ladder) a.validate();
  return ladder;
}

std::optional<CostTargets> cost_targets(const std::string& variant) {
  if (variant == "nano") return CostTargets{6.9e6, 0.9e9};
  if (variant == "micro") return CostTargets{11.9e6, 1.5e9};
  if (variant == "tiny") return CostTargets{33.0e6, 4.6e9};
  return std::nullopt;
}

std::vector<std::pair<std::size_t, std::size_t>> stage_resolutions(const ArchSpec& spec, std::size_t H,
                                                                   std::size_t W) {
  spec.validate();
  std::vector<std::pair<std::size_t, std::size_t>> res;
  std::size_t h = (H + spec.stem_patch - 1) / spec.stem_patch;
  std::size_t w = (W + spec.stem_patch - 1) / spec.stem_patch;
  for (std::size_t i = 0; i < spec.num_stages(); ++i) {
    res.emplace_back(h, w);
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  return res;
}

std::size_t count_params(const ArchSpec& spec) {
  spec.validate();
  const std::size_t P2 = spec.stem_patch * spec.stem_patch;
  std::size_t total = spec.stem_dim * P2 * spec.in_channels + spec.stem_dim + 2 * spec.stem_dim;
  for (std::size_t i = 0; i < spec.num_stages(); ++i) {
    const std::size_t d = spec.stage_dims[i], e = spec.mixer_width(i), N = spec.state_dim;
    const std::size_t R = spec.stage_dt_rank(i);
    const std::size_t inw = spec.gated ? 2 * e : e;
    std::size_t block = 2 * d;                // norm1
    block += inw * d + inw;                   // in_proj
    block += 9 * e + e;                       // depthwise conv
    if (spec.mixer == TokenMixer::ms2d) {
      block += (spec.ms2d.n_full() ? 9 * e : 0) + (spec.ms2d.n_down() ? 9 * e : 0);
      block += ms2d_param_groups(spec.ms2d) * ssm_param_count(e, N, R);
    } else {
      block += 4 * ssm_param_count(e, N, R);
    }
    block += 2 * e;                           // out_norm
    if (spec.use_se) {
      const std::size_t r = spec.se_hidden(i);
      block += r * e + r + e * r + e;
    }
    block += d * e + d;                       // out_proj
    if (spec.use_convffn) {
      const std::size_t f = spec.ffn_ratio * d;
      block += 2 * d + f * d + f + 9 * f + f + d * f + d;
    }
    total += spec.stage_depths[i] * block;
    if (i + 1 < spec.num_stages()) {
      const std::size_t n = spec.stage_dims[i + 1];
      total += n * 4 * d + n + 2 * n;         // 2x2 stride-2 conv + norm
    }
  }
  const std::size_t dl = spec.stage_dims.back();
  total += 2 * dl + spec.num_classes * dl + spec.num_classes;
  return total;
}

CostReport count_flops(const ArchSpec& spec, std::size_t H, std::size_t W) {
  spec.validate();
  CostReport rep;
  rep.params = count_params(spec);
  const auto res = stage_resolutions(spec, H, W);
  const std::size_t P2 = spec.stem_patch * spec.stem_patch;
  rep.spatial_macs += res[0].first * res[0].second * spec.stem_dim * P2 * spec.in_channels;
  for (std::size_t i = 0; i < spec.num_stages(); ++i) {
    const auto [h, w] = res[i];
    const std::size_t L = h * w;
    const std::size_t d = spec.stage_dims[i], e = spec.mixer_width(i), N = spec.state_dim;
    const std::size_t R = spec.stage_dt_rank(i);
    const std::size_t inw = spec.gated ? 2 * e : e;
    std::size_t block = L * d * inw + L * 9 * e + L * e * d;
    std::size_t tokens = 0;
    if (spec.mixer == TokenMixer::ms2d) {
      const auto cost = scan_cost(h, w, spec.ms2d);
      tokens = cost.total_tokens;
      if (spec.ms2d.n_full()) block += L * 9 * e;
      if (spec.ms2d.n_down())
        block += downsampled_extent(h, spec.ms2d.stride) * downsampled_extent(w, spec.ms2d.stride) * 9 * e;
    } else {
      tokens = 4 * L;
    }
    const std::size_t scan = s6_scan_macs(tokens, e, N);
    block += tokens * e * (2 * N + R) + tokens * R * e + scan;
    if (spec.use_convffn) {
      const std::size_t f = spec.ffn_ratio * d;
      block += L * d * f + L * 9 * f + L * f * d;
    }
    rep.spatial_macs += spec.stage_depths[i] * block;
    rep.s6_macs += spec.stage_depths[i] * scan;
    rep.scanned_tokens += spec.stage_depths[i] * tokens;
    if (spec.use_se) rep.fixed_macs += spec.stage_depths[i] * 2 * e * spec.se_hidden(i);
    if (i + 1 < spec.num_stages()) {
      const auto [hn, wn] = res[i + 1];
      rep.spatial_macs += hn * wn * spec.stage_dims[i + 1] * 4 * d;
    }
  }
  rep.fixed_macs += spec.stage_dims.back() * spec.num_classes;
  rep.macs = rep.spatial_macs + rep.fixed_macs;
  return rep;
}

}  // namespace msvm
