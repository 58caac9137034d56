#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "dtop/cost.hpp"
#include "dtop/engine.hpp"

using namespace dtop;

namespace {

CostConfig full_size(HeadType head) {
  CostConfig c;
  c.tokens = 1024;
  c.dim = 768;
  c.layers = 12;
  c.heads = 12;
  c.ffn_ratio = 4;
  c.patch = 16;
  c.classes = 150;
  c.stage_boundaries = {6, 8};
  c.head_types = {head, head, head};
  return c;
}

ModelConfig desk_model_config() {
  ModelConfig cfg;
  cfg.backbone.image_h = cfg.backbone.image_w = 32;
  cfg.backbone.patch = 4;
  cfg.backbone.dim = 64;
  cfg.backbone.layers = 6;
  cfg.backbone.heads = 4;
  cfg.backbone.stage_boundaries = {3, 4};
  cfg.classes = 4;
  return cfg;
}

}  // namespace

TEST_CASE("layer_macs closed form at ViT-Base scale") {
  // 12nC^2 = 7,247,757,312 and 2n^2C = 1,610,612,736 at n=1024, C=768
  CHECK(layer_macs(1024, 768, 12, 4) ==
        7247757312ull + 1610612736ull);
  CHECK(layer_macs(0, 768, 12, 4) == 0);

  // halving n exactly halves the linear terms and quarters the quadratic one
  const std::uint64_t full = layer_macs(1024, 768, 12, 4);
  const std::uint64_t half = layer_macs(512, 768, 12, 4);
  const std::uint64_t lin = 12ull * 1024 * 768 * 768;
  const std::uint64_t quad = 2ull * 1024 * 1024 * 768;
  CHECK(full == lin + quad);
  CHECK(half == lin / 2 + quad / 4);
  CHECK(half * 2 < full + lin);  // more than half of the quadratic term goes
}

TEST_CASE("full-size baseline calibrates against reported GFLOPs") {
  // SETR-style: FCN decode head, 107.7 GFLOPs reported
  CostConfig fcn = full_size(HeadType::kFcn);
  CostReport r = model_macs(fcn, OccupancySchedule::baseline(fcn));
  const double g = static_cast<double>(r.total) / 1e9;
  CHECK(std::abs(g - 107.7) / 107.7 < 0.05);

  // SegViT-style: ATM heads at every stage, 109.9 GFLOPs reported
  CostConfig atm = full_size(HeadType::kAtm);
  CostReport r2 = model_macs(atm, OccupancySchedule::full(atm));
  const double g2 = static_cast<double>(r2.total) / 1e9;
  CHECK(std::abs(g2 - 109.9) / 109.9 < 0.08);
}

TEST_CASE("occupancy zero past a boundary skips layers and heads") {
  CostConfig cfg = full_size(HeadType::kFcn);
  OccupancySchedule occ;
  occ.layers.assign(12, 0);
  for (int l = 0; l < 6; ++l) occ.layers[l] = cfg.tokens;
  occ.heads = {cfg.tokens, 0, 0};
  CostReport r = model_macs(cfg, occ);
  std::uint64_t expect = patch_embed_macs(1024, 768, 3, 16) +
                         6 * layer_macs(1024, 768, 12, 4) +
                         head_macs(HeadType::kFcn, 1024, 768, 150);
  CHECK(r.total == expect);

  occ.layers.resize(11);
  CHECK_THROWS_AS(model_macs(cfg, occ), ConfigError);
}

TEST_CASE("model_macs is monotone in every occupancy entry") {
  CostConfig cfg = full_size(HeadType::kAtm);
  OccupancySchedule occ = OccupancySchedule::full(cfg);
  const std::uint64_t base = model_macs(cfg, occ).total;
  for (std::size_t l = 0; l < occ.layers.size(); ++l) {
    OccupancySchedule lower = occ;
    lower.layers[l] -= 100;
    CHECK(model_macs(cfg, lower).total < base);
  }
  for (std::size_t s = 0; s < occ.heads.size(); ++s) {
    OccupancySchedule lower = occ;
    lower.heads[s] -= 100;
    CHECK(model_macs(cfg, lower).total < base);
  }
}

TEST_CASE("dataset_average basics") {
  CostReport a, b;
  a.total = 100;
  b.total = 200;
  CHECK(dataset_average({a}) == 100.0);
  CHECK(dataset_average({a, b}) == 150.0);
  CHECK_THROWS_AS(dataset_average({}), std::invalid_argument);
}

TEST_CASE("analytic model matches the instrumented MAC counter") {
  ModelConfig mcfg = desk_model_config();
  CostConfig ccfg = CostConfig::from_model(mcfg);
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    Model<double> m = init_model<double>(mcfg, seed);
    std::mt19937_64 rng(50 + seed);
    Tensor<double> image = randn<double>({3, 32, 32}, rng, 0.5);
    for (double p0 : {0.3, 0.6, 1.0}) {
      PruneConfig prune;
      prune.p0 = p0;
      reset_mac_count();
      DtopResult res = dtop_forward(image, m, prune);
      const std::uint64_t instrumented = mac_count();
      OccupancySchedule occ{res.layer_occupancy, res.head_occupancy};
      const std::uint64_t analytic = model_macs(ccfg, occ).total;
      const double gap =
          std::abs(double(analytic) - double(instrumented)) / instrumented;
      CHECK(gap < 0.01);
    }
  }
}

TEST_CASE("baseline total is invariant to stage boundaries when disabled") {
  ModelConfig a = desk_model_config();
  ModelConfig b = desk_model_config();
  b.backbone.stage_boundaries = {2};
  CostConfig ca = CostConfig::from_model(a), cb = CostConfig::from_model(b);
  CHECK(model_macs(ca, OccupancySchedule::baseline(ca)).total ==
        model_macs(cb, OccupancySchedule::baseline(cb)).total);
}
