#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "dtop/cost.hpp"
#include "dtop/engine.hpp"
#include "dtop/metrics.hpp"
#include "dtop/synth.hpp"
#include "dtop/train.hpp"

namespace dtop {

struct ImageEval {
  int index = 0;
  std::uint64_t macs = 0;
  std::vector<StageStats> stages;
};

struct EvalReport {
  double miou = 0.0;
  double avg_macs = 0.0;
  std::vector<std::uint64_t> exit_histogram;  // exits per stage; final stage
                                              // counts surviving tokens
  ConfusionMatrix confusion;
  std::vector<ImageEval> images;
};

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);
bool operator==(const EvalReport& a, const EvalReport& b);
std::string eval_report_csv(const EvalReport& r);

template <class S>
EvalReport evaluate(const Model<S>& model, const std::vector<Sample>& data,
                    const PruneConfig& prune) {
  if (data.empty()) throw ConfigError("evaluate: empty dataset");
  const auto& bcfg = model.cfg.backbone;
  const CostConfig ccfg = CostConfig::from_model(model.cfg);
  const int M = bcfg.stages();

  EvalReport rep;
  rep.confusion = ConfusionMatrix(model.cfg.classes);
  rep.exit_histogram.assign(M, 0);
  std::vector<CostReport> costs;

  for (std::size_t i = 0; i < data.size(); ++i) {
    Tensor<S> image = image_tensor<S>(data[i], bcfg);
    DtopResult res = dtop_forward(image, model, prune);
    rep.confusion.accumulate(upsample_labels(res.token_labels, bcfg),
                             data[i].labels);
    for (const auto& e : res.exits) rep.exit_histogram[e.stage - 1]++;
    if (!res.stats.empty() && res.stats.back().stage == M)
      rep.exit_histogram[M - 1] +=
          static_cast<std::uint64_t>(res.stats.back().active_after);

    OccupancySchedule occ{res.layer_occupancy, res.head_occupancy};
    CostReport cost = model_macs(ccfg, occ);
    costs.push_back(cost);

    ImageEval ie;
    ie.index = static_cast<int>(i);
    ie.macs = cost.total;
    ie.stages = res.stats;
    rep.images.push_back(std::move(ie));
  }
  rep.miou = miou(rep.confusion);
  rep.avg_macs = dataset_average(costs);
  return rep;
}

}  // namespace dtop
