#pragma once

#include <string>
#include <vector>

#include "dtop/backbone.hpp"
#include "dtop/engine.hpp"
#include "dtop/synth.hpp"

namespace dtop {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Portable pixel-map export of one run's artifacts:
//   <prefix>_input.ppm        the input image
//   <prefix>_pred.ppm         indexed-color prediction map
//   <prefix>_stage<m>.pgm     bright = token exited at or before stage m
// Plain (P3/P2) by default, binary (P6/P5) when binary = true.
void export_visuals(const Sample& sample, const std::vector<int>& pixel_pred,
                    const std::vector<ExitRecord>& exits,
                    const BackboneConfig& cfg, const std::string& prefix,
                    bool binary = false);

void write_ppm(const std::string& path, int w, int h,
               const std::vector<unsigned char>& rgb, bool binary);
void write_pgm(const std::string& path, int w, int h,
               const std::vector<unsigned char>& gray, bool binary);

}  // namespace dtop
