#include "dtop/viz.hpp"

#include <algorithm>
#include <fstream>

namespace dtop {

namespace {

std::ofstream open_out(const std::string& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw IoError("cannot write image file: " + path);
  return out;
}

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
}

}  // namespace

void write_ppm(const std::string& path, int w, int h,
               const std::vector<unsigned char>& rgb, bool binary) {
  auto out = open_out(path, binary);
  out << (binary ? "P6" : "P3") << "\n" << w << " " << h << "\n255\n";
  if (binary) {
    out.write(reinterpret_cast<const char*>(rgb.data()),
              static_cast<std::streamsize>(rgb.size()));
  } else {
    for (std::size_t i = 0; i < rgb.size(); ++i)
      out << int(rgb[i]) << ((i % 12 == 11) ? "\n" : " ");
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

void write_pgm(const std::string& path, int w, int h,
               const std::vector<unsigned char>& gray, bool binary) {
  auto out = open_out(path, binary);
  out << (binary ? "P5" : "P2") << "\n" << w << " " << h << "\n255\n";
  if (binary) {
    out.write(reinterpret_cast<const char*>(gray.data()),
              static_cast<std::streamsize>(gray.size()));
  } else {
    for (std::size_t i = 0; i < gray.size(); ++i)
      out << int(gray[i]) << ((i % 16 == 15) ? "\n" : " ");
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

void export_visuals(const Sample& sample, const std::vector<int>& pixel_pred,
                    const std::vector<ExitRecord>& exits,
                    const BackboneConfig& cfg, const std::string& prefix,
                    bool binary) {
  const int H = cfg.image_h, W = cfg.image_w;

  std::vector<unsigned char> rgb(3 * static_cast<std::size_t>(H) * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        rgb[(static_cast<std::size_t>(y) * W + x) * 3 + c] = to_byte(
            sample.image[(static_cast<std::size_t>(c) * H + y) * W + x]);
  write_ppm(prefix + "_input.ppm", W, H, rgb, binary);

  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int cls = pixel_pred[static_cast<std::size_t>(y) * W + x];
      for (int c = 0; c < 3; ++c)
        rgb[(static_cast<std::size_t>(y) * W + x) * 3 + c] =
            to_byte(class_base_color(cls, c));
    }
  write_ppm(prefix + "_pred.ppm", W, H, rgb, binary);

  const int M = cfg.stages();
  std::vector<int> exit_stage(cfg.tokens(), M + 1);  // M+1 = never exited
  for (const auto& e : exits) exit_stage[e.origin_index] = e.stage;
  const int gw = cfg.grid_w(), P = cfg.patch;
  for (int m = 1; m < M; ++m) {
    std::vector<unsigned char> gray(static_cast<std::size_t>(H) * W);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        gray[static_cast<std::size_t>(y) * W + x] =
            exit_stage[(y / P) * gw + (x / P)] <= m ? 255 : 0;
    write_pgm(prefix + "_stage" + std::to_string(m) + ".pgm", W, H, gray,
              binary);
  }
}

}  // namespace dtop
