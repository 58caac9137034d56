#include <sstream>

#include "dtop/eval.hpp"

namespace dtop {

using nlohmann::json;

namespace {

json stage_stats_to_json(const StageStats& s) {
  return json{{"stage", s.stage},
              {"active_before", s.active_before},
              {"exited", s.exited},
              {"retained_context", s.retained_context},
              {"active_after", s.active_after}};
}

StageStats stage_stats_from_json(const json& j) {
  StageStats s;
  s.stage = j.at("stage").get<int>();
  s.active_before = j.at("active_before").get<int>();
  s.exited = j.at("exited").get<int>();
  s.retained_context = j.at("retained_context").get<int>();
  s.active_after = j.at("active_after").get<int>();
  return s;
}

}  // namespace

json to_json(const EvalReport& r) {
  json images = json::array();
  for (const auto& im : r.images) {
    json stages = json::array();
    for (const auto& s : im.stages) stages.push_back(stage_stats_to_json(s));
    images.push_back(
        json{{"index", im.index}, {"macs", im.macs}, {"stages", stages}});
  }
  return json{{"miou", r.miou},
              {"avg_macs", r.avg_macs},
              {"exit_histogram", r.exit_histogram},
              {"confusion_classes", r.confusion.classes},
              {"confusion", r.confusion.counts},
              {"images", images}};
}

EvalReport eval_report_from_json(const json& j) {
  EvalReport r;
  r.miou = j.at("miou").get<double>();
  r.avg_macs = j.at("avg_macs").get<double>();
  r.exit_histogram = j.at("exit_histogram").get<std::vector<std::uint64_t>>();
  r.confusion = ConfusionMatrix(j.at("confusion_classes").get<int>());
  r.confusion.counts = j.at("confusion").get<std::vector<std::uint64_t>>();
  for (const auto& im : j.at("images")) {
    ImageEval ie;
    ie.index = im.at("index").get<int>();
    ie.macs = im.at("macs").get<std::uint64_t>();
    for (const auto& s : im.at("stages"))
      ie.stages.push_back(stage_stats_from_json(s));
    r.images.push_back(std::move(ie));
  }
  return r;
}

bool operator==(const EvalReport& a, const EvalReport& b) {
  return to_json(a) == to_json(b);
}

std::string eval_report_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "image,macs,stage,active_before,exited,retained_context,active_after\n";
  for (const auto& im : r.images)
    for (const auto& s : im.stages)
      os << im.index << "," << im.macs << "," << s.stage << ","
         << s.active_before << "," << s.exited << "," << s.retained_context
         << "," << s.active_after << "\n";
  return os.str();
}

}  // namespace dtop
