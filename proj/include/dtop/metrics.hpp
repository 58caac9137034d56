#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace dtop {

struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Row = ground truth class, column = predicted class.
struct ConfusionMatrix {
  int classes = 0;
  std::vector<std::uint64_t> counts;  // K x K

  explicit ConfusionMatrix(int k = 0)
      : classes(k), counts(static_cast<std::size_t>(k) * k, 0) {}

  std::uint64_t& at(int gt, int pred) {
    return counts[static_cast<std::size_t>(gt) * classes + pred];
  }
  std::uint64_t at(int gt, int pred) const {
    return counts[static_cast<std::size_t>(gt) * classes + pred];
  }

  void accumulate(const std::vector<int>& pred, const std::vector<int>& gt);
  std::uint64_t total() const;

  void add(const ConfusionMatrix& other);
};

// Mean IoU over classes with nonzero union; classes absent from both
// prediction and ground truth are excluded from the mean.
double miou(const ConfusionMatrix& confusion);

}  // namespace dtop
