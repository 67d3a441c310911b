#pragma once

// Residual-stream access for engine tests. Not part of the analysis API:
// audits address neurons through NeuronRef only.

#include <vector>

#include "neuroaudit/model.hpp"

namespace neuroaudit {

namespace detail {

struct ResidualPatch {
  int layer = 0;  // residual stream after block `layer`
  std::size_t position = 0;
  int dim = 0;
  float value = 0.0f;
};

struct ResidualHooks {
  std::vector<ResidualPatch> patches;
  // When set, receives the residual after the final block, [seq_len][d_model].
  std::vector<float>* final_residual = nullptr;
};

}  // namespace detail

ForwardTrace run_with_hooks(const Model& model, std::span<const TokenId> tokens, std::span<const Patch> patches,
                            const ForwardOptions& options, const detail::ResidualHooks* hooks);

}  // namespace neuroaudit
