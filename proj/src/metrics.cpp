#include "dtop/metrics.hpp"

namespace dtop {

void ConfusionMatrix::accumulate(const std::vector<int>& pred,
                                 const std::vector<int>& gt) {
  if (pred.size() != gt.size())
    throw MetricError("confusion: prediction/ground-truth size mismatch");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] >= classes || gt[i] < 0 || gt[i] >= classes)
      throw MetricError("confusion: class index out of range");
    at(gt[i], pred[i])++;
  }
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

void ConfusionMatrix::add(const ConfusionMatrix& other) {
  if (other.classes != classes)
    throw MetricError("confusion: class count mismatch");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

double miou(const ConfusionMatrix& confusion) {
  if (confusion.total() == 0)
    throw MetricError("miou: empty confusion matrix");
  const int k = confusion.classes;
  double sum = 0;
  int present = 0;
  for (int c = 0; c < k; ++c) {
    std::uint64_t tp = confusion.at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += confusion.at(o, c);
      fn += confusion.at(c, o);
    }
    const std::uint64_t uni = tp + fp + fn;
    if (uni == 0) continue;
    sum += static_cast<double>(tp) / static_cast<double>(uni);
    ++present;
  }
  return sum / present;
}

}  // namespace dtop
