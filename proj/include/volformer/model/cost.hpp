#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "volformer/model/config.hpp"

namespace volformer {

struct LayerCost {
  std::string name;
  double macs = 0;                      // multiply-accumulates for one volume
  std::size_t activation_bytes = 0;     // live input + output (+ attention matrix) in float32
  std::size_t parameters = 0;
};

struct CostReport {
  double flops = 0;                     // 2 · multiply-accumulates, one volume forward
  std::size_t peak_activation_bytes = 0;
  std::size_t parameter_count = 0;
  std::vector<LayerCost> layers;
};

/// Analytic per-layer count for one forward pass of one sample.
///   conv  C_out·C_in·k³·out_voxels
///   SGA   2·N·h_s·C + 2·N·C·h_c          (linear in N)
///   DGA   3·N·C² + 2·N²·C + N·C² + 2·N·C·F  (quadratic in N)
CostReport estimate_cost(const ModelConfig& cfg);

}  // namespace volformer
