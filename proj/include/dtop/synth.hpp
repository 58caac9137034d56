#pragma once

#include <cstdint>
#include <vector>

namespace dtop {

// Flat-color scene generator. Shapes are rasterized on a coarse cell grid
// (cell x cell pixel blocks), so region boundaries align with the grid and
// per-pixel labels are exact. Class 0 is the background (large uniform,
// easy); class 3 draws thin stripes so per-image difficulty stays
// heterogeneous.
struct SynthSceneConfig {
  int image = 32;        // square images
  int classes = 4;       // K, including background
  int cell = 4;          // rasterization granularity in pixels
  int shapes_min = 2;
  int shapes_max = 4;
  double noise = 0.08;       // uniform per-pixel amplitude
  double cell_noise = 0.30;  // uniform per-cell color shift, shared within a
                             // cell so patch averaging cannot remove it
  double class_jitter = 0.15;  // per-image, per-class palette shift; an
                               // ambiguous cell is then only resolvable by
                               // comparing against clean cells of each class
                               // elsewhere in the same image
  std::uint64_t seed = 7;
};

struct Sample {
  std::vector<double> image;  // 3 * H * W, row-major per channel, in [0, 1]
  std::vector<int> labels;    // H * W
};

// Per-class base color, channel in {0,1,2}.
double class_base_color(int cls, int channel);

// Deterministic in (cfg.seed, index).
Sample generate_scene(const SynthSceneConfig& cfg, int index);

// Majority label of each P x P patch, lowest class index on ties.
std::vector<int> token_labels(const std::vector<int>& pixel_labels, int h,
                              int w, int patch);

}  // namespace dtop
