#include "dtop/cost.hpp"

#include <sstream>
#include <stdexcept>

namespace dtop {

void CostConfig::validate() const {
  if (tokens < 1 || dim < 1 || layers < 1 || heads < 1 || ffn_ratio < 1)
    throw ConfigError("cost config: positive dimensions required");
  if (dim % heads != 0) throw ConfigError("cost config: dim % heads != 0");
  int prev = 0;
  for (int b : stage_boundaries) {
    if (b < 1 || b > layers - 1 || b <= prev)
      throw ConfigError("cost config: bad stage boundaries");
    prev = b;
  }
  if (static_cast<int>(head_types.size()) != stages())
    throw ConfigError("cost config: one head type per stage required");
}

CostConfig CostConfig::from_model(const ModelConfig& m) {
  CostConfig c;
  c.tokens = m.backbone.tokens();
  c.dim = m.backbone.dim;
  c.layers = m.backbone.layers;
  c.heads = m.backbone.heads;
  c.ffn_ratio = m.backbone.ffn_ratio;
  c.patch = m.backbone.patch;
  c.channels = m.backbone.channels;
  c.classes = m.classes;
  c.stage_boundaries = m.backbone.stage_boundaries;
  const int M = c.stages();
  for (int s = 0; s < M; ++s)
    c.head_types.push_back(s == M - 1 ? m.decode_head : m.aux_head);
  return c;
}

OccupancySchedule OccupancySchedule::full(const CostConfig& cfg) {
  OccupancySchedule occ;
  occ.layers.assign(cfg.layers, cfg.tokens);
  occ.heads.assign(cfg.stages(), cfg.tokens);
  return occ;
}

OccupancySchedule OccupancySchedule::baseline(const CostConfig& cfg) {
  OccupancySchedule occ;
  occ.layers.assign(cfg.layers, cfg.tokens);
  occ.heads.assign(cfg.stages(), 0);
  occ.heads.back() = cfg.tokens;
  return occ;
}

std::uint64_t layer_macs(int n, int dim, int heads, int ffn_ratio) {
  (void)heads;  // head count does not change the MAC total
  if (n == 0) return 0;
  if (n < 0) throw ConfigError("layer_macs: negative token count");
  const std::uint64_t un = n, uc = dim;
  return 4 * un * uc * uc + 2 * un * un * uc +
         2 * static_cast<std::uint64_t>(ffn_ratio) * un * uc * uc;
}

std::uint64_t patch_embed_macs(int tokens, int dim, int channels, int patch) {
  return static_cast<std::uint64_t>(tokens) * dim * channels * patch * patch;
}

std::uint64_t head_macs(HeadType type, int n, int dim, int classes) {
  if (n == 0) return 0;
  const std::uint64_t un = n, uc = dim, uk = classes;
  if (type == HeadType::kFcn) return un * uc * uk;
  return 2 * uk * un * uc + 2 * (uk + un) * uc * uc + uk * uk * uc;
}

CostReport model_macs(const CostConfig& cfg, const OccupancySchedule& occ) {
  cfg.validate();
  if (static_cast<int>(occ.layers.size()) != cfg.layers)
    throw ConfigError("model_macs: occupancy length must equal layer count");
  if (static_cast<int>(occ.heads.size()) != cfg.stages())
    throw ConfigError("model_macs: head occupancy length must equal stages");
  CostReport r;
  r.patch_embed_macs =
      patch_embed_macs(cfg.tokens, cfg.dim, cfg.channels, cfg.patch);
  r.total = r.patch_embed_macs;
  for (int l = 0; l < cfg.layers; ++l) {
    const std::uint64_t m =
        layer_macs(occ.layers[l], cfg.dim, cfg.heads, cfg.ffn_ratio);
    r.layer_macs.push_back(m);
    r.total += m;
  }
  for (int s = 0; s < cfg.stages(); ++s) {
    const std::uint64_t m =
        head_macs(cfg.head_types[s], occ.heads[s], cfg.dim, cfg.classes);
    r.head_macs.push_back(m);
    r.total += m;
  }
  return r;
}

double dataset_average(const std::vector<CostReport>& reports) {
  if (reports.empty())
    throw std::invalid_argument("dataset_average: empty report list");
  double sum = 0;
  for (const auto& r : reports) sum += static_cast<double>(r.total);
  return sum / static_cast<double>(reports.size());
}

std::string format_cost_report(const CostConfig& cfg, const CostReport& r) {
  std::ostringstream os;
  os << "patch_embed_macs " << r.patch_embed_macs << "\n";
  for (int l = 0; l < cfg.layers; ++l)
    os << "layer" << l << "_macs " << r.layer_macs[l] << "\n";
  for (int s = 0; s < cfg.stages(); ++s)
    os << "head_stage" << (s + 1) << "_macs ("
       << head_type_name(cfg.head_types[s]) << ") " << r.head_macs[s] << "\n";
  os << "total_macs " << r.total << "\n";
  os << "total_gflops " << static_cast<double>(r.total) / 1e9 << "\n";
  return os.str();
}

std::string cost_report_csv(const CostConfig& cfg, const CostReport& r) {
  std::ostringstream os;
  os << "component,macs\n";
  os << "patch_embed," << r.patch_embed_macs << "\n";
  for (int l = 0; l < cfg.layers; ++l)
    os << "layer" << l << "," << r.layer_macs[l] << "\n";
  for (int s = 0; s < cfg.stages(); ++s)
    os << "head_stage" << (s + 1) << "," << r.head_macs[s] << "\n";
  os << "total," << r.total << "\n";
  return os.str();
}

}  // namespace dtop
