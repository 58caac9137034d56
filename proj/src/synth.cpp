#include "dtop/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace dtop {

namespace {

const double kPalette[8][3] = {
    {0.12, 0.12, 0.15},  // background
    {0.85, 0.25, 0.20},
    {0.20, 0.80, 0.30},
    {0.25, 0.35, 0.90},
    {0.90, 0.85, 0.20},
    {0.80, 0.25, 0.80},
    {0.20, 0.85, 0.85},
    {0.60, 0.50, 0.30},
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

double class_base_color(int cls, int channel) {
  return kPalette[cls % 8][channel];
}

Sample generate_scene(const SynthSceneConfig& cfg, int index) {
  if (cfg.image % cfg.cell != 0)
    throw std::invalid_argument("generate_scene: image % cell != 0");
  if (cfg.classes < 2)
    throw std::invalid_argument("generate_scene: at least 2 classes");
  std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(index)));
  const int g = cfg.image / cfg.cell;

  std::vector<int> grid(static_cast<std::size_t>(g) * g, 0);
  std::uniform_int_distribution<int> n_shapes(cfg.shapes_min, cfg.shapes_max);
  std::uniform_int_distribution<int> cls_pick(1, cfg.classes - 1);
  std::uniform_int_distribution<int> pos(0, g - 1);
  const int shapes = n_shapes(rng);
  for (int s = 0; s < shapes; ++s) {
    const int cls = cls_pick(rng);
    switch (cls % 3) {
      case 1: {  // rectangle
        std::uniform_int_distribution<int> ext(2, std::max(2, g / 2));
        const int x0 = pos(rng), y0 = pos(rng);
        const int w = ext(rng), h = ext(rng);
        for (int y = y0; y < std::min(g, y0 + h); ++y)
          for (int x = x0; x < std::min(g, x0 + w); ++x) grid[y * g + x] = cls;
        break;
      }
      case 2: {  // disc
        std::uniform_int_distribution<int> rad(1, std::max(1, g / 3));
        const int cx = pos(rng), cy = pos(rng), r = rad(rng);
        for (int y = 0; y < g; ++y)
          for (int x = 0; x < g; ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)
              grid[y * g + x] = cls;
        break;
      }
      default: {  // stripe, one cell thick
        const int c = pos(rng);
        const bool horizontal = (rng() & 1) != 0;
        for (int t = 0; t < g; ++t)
          grid[horizontal ? c * g + t : t * g + c] = cls;
        break;
      }
    }
  }

  const int H = cfg.image, W = cfg.image;
  Sample sample;
  sample.labels.resize(static_cast<std::size_t>(H) * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      sample.labels[static_cast<std::size_t>(y) * W + x] =
          grid[(y / cfg.cell) * g + (x / cfg.cell)];

  sample.image.resize(3 * static_cast<std::size_t>(H) * W);
  std::uniform_real_distribution<double> jitter(-cfg.class_jitter,
                                                cfg.class_jitter);
  std::vector<double> cls_off(3 * static_cast<std::size_t>(cfg.classes));
  for (double& o : cls_off) o = jitter(rng);
  std::uniform_real_distribution<double> cell_noise(-cfg.cell_noise,
                                                    cfg.cell_noise);
  std::vector<double> cell_off(3 * static_cast<std::size_t>(g) * g);
  for (double& o : cell_off) o = cell_noise(rng);
  std::uniform_real_distribution<double> noise(-cfg.noise, cfg.noise);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const int cls = sample.labels[static_cast<std::size_t>(y) * W + x];
        const double v =
            class_base_color(cls, c) + cls_off[c * cfg.classes + cls] +
            cell_off[(static_cast<std::size_t>(c) * g + y / cfg.cell) * g +
                     x / cfg.cell] +
            noise(rng);
        sample.image[(static_cast<std::size_t>(c) * H + y) * W + x] =
            std::clamp(v, 0.0, 1.0);
      }
  return sample;
}

std::vector<int> token_labels(const std::vector<int>& pixel_labels, int h,
                              int w, int patch) {
  const int gh = h / patch, gw = w / patch;
  std::vector<int> out(static_cast<std::size_t>(gh) * gw);
  std::vector<int> counts;
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      counts.assign(counts.size(), 0);
      int max_cls = 0;
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px) {
          const int cls =
              pixel_labels[static_cast<std::size_t>(gy * patch + py) * w +
                           gx * patch + px];
          max_cls = std::max(max_cls, cls);
          if (cls >= static_cast<int>(counts.size()))
            counts.resize(cls + 1, 0);
          counts[cls]++;
        }
      int best = 0;
      for (int c = 1; c <= max_cls; ++c)
        if (counts[c] > counts[best]) best = c;
      out[static_cast<std::size_t>(gy) * gw + gx] = best;
    }
  return out;
}

}  // namespace dtop
