#pragma once

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "dtop/config.hpp"
#include "dtop/model.hpp"

namespace dtop {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Text container: magic line, one-line model config (JSON), then per
// parameter a "<key> <ndim> <dims...>" header line followed by one line of
// hexfloat values. Hexfloat keeps save/load round trips bit-exact.
inline constexpr const char* kCheckpointMagic = "DTOP-CKPT 1";

template <class S>
void save_model(const std::string& path, Model<S>& model) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path);
  out << kCheckpointMagic << "\n";
  out << to_json(model.cfg).dump() << "\n";
  for (auto& [name, t] : model_params(model)) {
    out << name << " " << t->shape.size();
    for (int d : t->shape) out << " " << d;
    out << "\n" << std::hexfloat;
    for (std::size_t i = 0; i < t->numel(); ++i) {
      if (i) out << " ";
      out << static_cast<double>((*t->data)[i]);
    }
    out << std::defaultfloat << "\n";
  }
  if (!out) throw CheckpointError("checkpoint write failed: " + path);
}

template <class S>
Model<S> load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic)
    throw CheckpointError("bad checkpoint magic in " + path);
  if (!std::getline(in, line))
    throw CheckpointError("missing model config in " + path);
  ModelConfig cfg = model_config_from_json(nlohmann::json::parse(line));
  Model<S> model = init_model<S>(cfg, 0);

  auto params = model_params(model);
  std::size_t loaded = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream hs(line);
    std::string name;
    int ndim = 0;
    hs >> name >> ndim;
    std::vector<int> shape(ndim);
    for (int& d : shape) hs >> d;
    if (!hs) throw CheckpointError("bad parameter header: " + line);
    Tensor<S>* target = nullptr;
    for (auto& [pname, t] : params)
      if (pname == name) target = t;
    if (!target) throw CheckpointError("unknown parameter key: " + name);
    if (target->shape != shape)
      throw CheckpointError("shape mismatch for parameter: " + name);
    if (!std::getline(in, line))
      throw CheckpointError("missing values for parameter: " + name);
    // strtod handles hexfloat tokens; stream extraction does not.
    std::istringstream vs(line);
    std::string tok;
    for (std::size_t i = 0; i < target->numel(); ++i) {
      if (!(vs >> tok))
        throw CheckpointError("bad value data for parameter: " + name);
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str())
        throw CheckpointError("bad value data for parameter: " + name);
      (*target->data)[i] = static_cast<S>(v);
    }
    ++loaded;
  }
  if (loaded != params.size())
    throw CheckpointError("checkpoint parameter count mismatch");
  return model;
}

}  // namespace dtop
