#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "neuroaudit/tensor_archive.hpp"
#include "neuroaudit/tokenizer.hpp"

namespace neuroaudit {

struct ModelConfig {
  int n_layers = 0;
  int d_model = 0;
  int n_heads = 0;
  int d_mlp = 0;
  int vocab_size = 0;
  int max_positions = 0;
  float layernorm_epsilon = 1e-5f;

  // Throws InvalidArgument when a count is non-positive, d_model is not a
  // multiple of n_heads, or d_mlp < d_model.
  void validate() const;
  static ModelConfig load(const std::filesystem::path& json_path);
  static ModelConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
};

// Only the post-GELU MLP hidden activation is addressable.
enum class Site { MlpHidden };

struct NeuronRef {
  int layer = 0;
  int index = 0;
  Site site = Site::MlpHidden;

  auto operator<=>(const NeuronRef&) const = default;
};

std::string to_string(const NeuronRef& ref);

// Overwrite one neuron's activation at one token position.
struct Patch {
  NeuronRef target;
  std::size_t position = 0;
  float value = 0.0f;
};

struct ForwardOptions {
  std::span<const NeuronRef> record;
  bool record_attention = false;
  // Compute logits for the final position only (all greedy decoding needs).
  bool last_logits_only = false;
};

class ForwardTrace {
 public:
  std::size_t seq_len() const { return seq_len_; }
  std::size_t vocab_size() const { return vocab_; }

  // Logits row for `position`; throws if that row was not computed.
  std::span<const float> logits_at(std::size_t position) const;
  std::span<const float> last_logits() const { return logits_at(seq_len_ - 1); }
  bool has_logits_at(std::size_t position) const {
    return position >= first_logit_position_ && position < seq_len_;
  }

  const std::vector<NeuronRef>& recorded() const { return recorded_; }
  // Activation of a recorded neuron; throws if `ref` was not requested.
  float activation(const NeuronRef& ref, std::size_t position) const;
  std::span<const float> activations(const NeuronRef& ref) const;

  // attention(layer, head) is a seq_len x seq_len row-major matrix; empty
  // unless ForwardOptions::record_attention was set.
  std::span<const float> attention(int layer, int head) const;

 private:
  friend class Model;

  std::size_t index_of(const NeuronRef& ref) const;

  std::size_t seq_len_ = 0;
  std::size_t vocab_ = 0;
  std::size_t first_logit_position_ = 0;
  std::vector<float> logits_;
  std::vector<NeuronRef> recorded_;
  std::vector<float> values_;  // [recorded][position]
  int n_heads_ = 0;
  std::vector<std::vector<float>> attention_;  // [layer * n_heads + head]
};

namespace detail {
struct ResidualHooks;
}

// Decoder-only GPT-2 style transformer: pre-LN blocks, tanh-GELU MLP, learned
// positions, output projection tied to the token embedding unless the
// archive carries "lm_head.weight". Immutable after construction; forward
// passes allocate their own scratch and may run concurrently.
class Model {
 public:
  Model(const TensorArchive& archive, ModelConfig config, Tokenizer tokenizer);

  const ModelConfig& config() const { return config_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }

  ForwardTrace forward(std::span<const TokenId> tokens, const ForwardOptions& options = {}) const;
  ForwardTrace forward_with_patches(std::span<const TokenId> tokens, std::span<const Patch> patches,
                                    const ForwardOptions& options = {}) const;

  void check_neuron(const NeuronRef& ref) const;

 private:
  friend ForwardTrace run_with_hooks(const Model&, std::span<const TokenId>, std::span<const Patch>,
                                     const ForwardOptions&, const detail::ResidualHooks*);

  struct Block {
    std::vector<float> ln1_g, ln1_b;
    std::vector<float> attn_w, attn_b;    // [d, 3d], [3d]
    std::vector<float> proj_w, proj_b;    // [d, d], [d]
    std::vector<float> ln2_g, ln2_b;
    std::vector<float> fc_w, fc_b;        // [d, d_mlp], [d_mlp]
    std::vector<float> fc_proj_w, fc_proj_b;  // [d_mlp, d], [d]
  };

  ForwardTrace run(std::span<const TokenId> tokens, std::span<const Patch> patches, const ForwardOptions& options,
                   const detail::ResidualHooks* hooks) const;

  ModelConfig config_;
  Tokenizer tokenizer_;
  std::vector<float> wte_;  // [vocab, d]
  std::vector<float> wpe_;  // [positions, d]
  std::vector<float> lm_head_;  // [vocab, d]; empty when tied to wte_
  std::vector<Block> blocks_;
  std::vector<float> lnf_g_, lnf_b_;
};

Model load_model(const std::filesystem::path& archive_path, const ModelConfig& config,
                 const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path);

// Argmax of the final position's logits; ties go to the lowest token id.
TokenId greedy_next(const ForwardTrace& trace);

namespace detail {

// In-place layer normalization without scale/shift; exposed for tests.
void normalize_row(std::span<float> row, float epsilon);

float gelu(float x);

}  // namespace detail

}  // namespace neuroaudit
