#include "neuroaudit/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"
#include "neuroaudit/error.hpp"
#include "neuroaudit/testing.hpp"

namespace neuroaudit {
namespace {

using nlohmann::json;

std::vector<float> take(const TensorArchive& archive, const std::string& name, std::vector<std::int64_t> shape) {
  if (!archive.contains(name)) throw FormatError("missing tensor '" + name + "'");
  const Tensor& t = archive.at(name);
  if (t.shape != shape) {
    std::ostringstream msg;
    msg << "tensor '" << name << "' has shape [";
    for (std::size_t i = 0; i < t.shape.size(); ++i) msg << (i ? "," : "") << t.shape[i];
    msg << "], expected [";
    for (std::size_t i = 0; i < shape.size(); ++i) msg << (i ? "," : "") << shape[i];
    msg << "]";
    throw FormatError(msg.str());
  }
  return t.data;
}

// out[t][j] = bias[j] + sum_i x[t][i] * w[i][j]
void linear(std::span<const float> x, std::size_t rows, std::size_t in, std::span<const float> w,
            std::span<const float> bias, std::size_t out_dim, std::span<float> out) {
  for (std::size_t t = 0; t < rows; ++t) {
    float* o = out.data() + t * out_dim;
    std::copy(bias.begin(), bias.end(), o);
    const float* xr = x.data() + t * in;
    for (std::size_t i = 0; i < in; ++i) {
      const float xv = xr[i];
      const float* wr = w.data() + i * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) o[j] += xv * wr[j];
    }
  }
}

void layer_norm(std::span<const float> x, std::size_t rows, std::size_t d, std::span<const float> g,
                std::span<const float> b, float eps, std::span<float> out) {
  for (std::size_t t = 0; t < rows; ++t) {
    std::span<float> row = out.subspan(t * d, d);
    std::copy_n(x.data() + t * d, d, row.data());
    detail::normalize_row(row, eps);
    for (std::size_t i = 0; i < d; ++i) row[i] = row[i] * g[i] + b[i];
  }
}

int get_int(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_number_integer()) throw ConfigError(std::string("model config lacks integer '") + key + "'");
  return it->get<int>();
}

}  // namespace

namespace detail {

void normalize_row(std::span<float> row, float epsilon) {
  const float n = static_cast<float>(row.size());
  float mean = 0.0f;
  for (float v : row) mean += v;
  mean /= n;
  float var = 0.0f;
  for (float v : row) var += (v - mean) * (v - mean);
  var /= n;
  const float inv = 1.0f / std::sqrt(var + epsilon);
  for (float& v : row) v = (v - mean) * inv;
}

float gelu(float x) {
  constexpr float kSqrt2OverPi = 0.7978845608028654f;
  return 0.5f * x * (1.0f + std::tanh(kSqrt2OverPi * (x + 0.044715f * x * x * x)));
}

}  // namespace detail

void ModelConfig::validate() const {
  if (n_layers <= 0 || d_model <= 0 || n_heads <= 0 || d_mlp <= 0 || vocab_size <= 0 || max_positions <= 0)
    throw InvalidArgument("model config counts must all be positive");
  if (d_model % n_heads != 0) throw InvalidArgument("d_model must be divisible by n_heads");
  if (d_mlp < d_model) throw InvalidArgument("d_mlp must be at least d_model");
  if (!(layernorm_epsilon > 0.0f) || !std::isfinite(layernorm_epsilon))
    throw InvalidArgument("layernorm_epsilon must be a small positive number");
}

ModelConfig ModelConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  ModelConfig c;
  c.n_layers = get_int(j, "n_layers");
  c.d_model = get_int(j, "d_model");
  c.n_heads = get_int(j, "n_heads");
  c.d_mlp = get_int(j, "d_mlp");
  c.vocab_size = get_int(j, "vocab_size");
  c.max_positions = get_int(j, "max_positions");
  if (j.contains("layernorm_epsilon")) c.layernorm_epsilon = j.at("layernorm_epsilon").get<float>();
  c.validate();
  return c;
}

ModelConfig ModelConfig::load(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw ConfigError("cannot open model config " + json_path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string ModelConfig::to_json_text() const {
  json j = {{"n_layers", n_layers},     {"d_model", d_model},     {"n_heads", n_heads},
            {"d_mlp", d_mlp},           {"vocab_size", vocab_size}, {"max_positions", max_positions},
            {"layernorm_epsilon", layernorm_epsilon}};
  return j.dump(2) + "\n";
}

std::string to_string(const NeuronRef& ref) {
  return "L" + std::to_string(ref.layer) + "/N" + std::to_string(ref.index);
}

std::span<const float> ForwardTrace::logits_at(std::size_t position) const {
  if (!has_logits_at(position))
    throw InvalidArgument("logits for position " + std::to_string(position) + " were not computed");
  return {logits_.data() + (position - first_logit_position_) * vocab_, vocab_};
}

std::size_t ForwardTrace::index_of(const NeuronRef& ref) const {
  const auto it = std::find(recorded_.begin(), recorded_.end(), ref);
  if (it == recorded_.end()) throw InvalidArgument("neuron " + to_string(ref) + " was not recorded");
  return static_cast<std::size_t>(it - recorded_.begin());
}

float ForwardTrace::activation(const NeuronRef& ref, std::size_t position) const {
  if (position >= seq_len_) throw InvalidArgument("position out of range");
  return values_[index_of(ref) * seq_len_ + position];
}

std::span<const float> ForwardTrace::activations(const NeuronRef& ref) const {
  return {values_.data() + index_of(ref) * seq_len_, seq_len_};
}

std::span<const float> ForwardTrace::attention(int layer, int head) const {
  const std::size_t slot = static_cast<std::size_t>(layer) * n_heads_ + head;
  if (slot >= attention_.size()) throw InvalidArgument("attention was not recorded");
  return attention_[slot];
}

Model::Model(const TensorArchive& archive, ModelConfig config, Tokenizer tokenizer)
    : config_(config), tokenizer_(std::move(tokenizer)) {
  config_.validate();
  if (tokenizer_.max_id() >= config_.vocab_size)
    throw FormatError("vocabulary id " + std::to_string(tokenizer_.max_id()) + " exceeds vocab_size " +
                      std::to_string(config_.vocab_size));
  const std::int64_t d = config_.d_model, v = config_.vocab_size, p = config_.max_positions, m = config_.d_mlp;
  wte_ = take(archive, "wte.weight", {v, d});
  wpe_ = take(archive, "wpe.weight", {p, d});
  if (archive.contains("lm_head.weight")) lm_head_ = take(archive, "lm_head.weight", {v, d});
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string h = "h." + std::to_string(l) + ".";
    Block b;
    b.ln1_g = take(archive, h + "ln_1.weight", {d});
    b.ln1_b = take(archive, h + "ln_1.bias", {d});
    b.attn_w = take(archive, h + "attn.c_attn.weight", {d, 3 * d});
    b.attn_b = take(archive, h + "attn.c_attn.bias", {3 * d});
    b.proj_w = take(archive, h + "attn.c_proj.weight", {d, d});
    b.proj_b = take(archive, h + "attn.c_proj.bias", {d});
    b.ln2_g = take(archive, h + "ln_2.weight", {d});
    b.ln2_b = take(archive, h + "ln_2.bias", {d});
    b.fc_w = take(archive, h + "mlp.c_fc.weight", {d, m});
    b.fc_b = take(archive, h + "mlp.c_fc.bias", {m});
    b.fc_proj_w = take(archive, h + "mlp.c_proj.weight", {m, d});
    b.fc_proj_b = take(archive, h + "mlp.c_proj.bias", {d});
    blocks_.push_back(std::move(b));
  }
  lnf_g_ = take(archive, "ln_f.weight", {d});
  lnf_b_ = take(archive, "ln_f.bias", {d});
}

Model load_model(const std::filesystem::path& archive_path, const ModelConfig& config,
                 const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path) {
  config.validate();
  auto tokenizer = Tokenizer::load(vocab_path, merges_path);
  return Model(TensorArchive::read(archive_path), config, std::move(tokenizer));
}

void Model::check_neuron(const NeuronRef& ref) const {
  if (ref.layer < 0 || ref.layer >= config_.n_layers || ref.index < 0 || ref.index >= config_.d_mlp)
    throw InvalidArgument("neuron " + to_string(ref) + " is outside the model");
}

ForwardTrace Model::forward(std::span<const TokenId> tokens, const ForwardOptions& options) const {
  return run(tokens, {}, options, nullptr);
}

ForwardTrace Model::forward_with_patches(std::span<const TokenId> tokens, std::span<const Patch> patches,
                                         const ForwardOptions& options) const {
  return run(tokens, patches, options, nullptr);
}

ForwardTrace run_with_hooks(const Model& model, std::span<const TokenId> tokens, std::span<const Patch> patches,
                            const ForwardOptions& options, const detail::ResidualHooks* hooks) {
  return model.run(tokens, patches, options, hooks);
}

ForwardTrace Model::run(std::span<const TokenId> tokens, std::span<const Patch> patches,
                        const ForwardOptions& options, const detail::ResidualHooks* hooks) const {
  const std::size_t T = tokens.size();
  const std::size_t D = config_.d_model, M = config_.d_mlp, V = config_.vocab_size;
  const std::size_t H = config_.n_heads, hd = D / H;
  if (T == 0) throw InvalidArgument("forward needs at least one token");
  if (T > static_cast<std::size_t>(config_.max_positions))
    throw InvalidArgument("sequence of " + std::to_string(T) + " tokens exceeds max_positions " +
                          std::to_string(config_.max_positions));
  for (TokenId id : tokens)
    if (id < 0 || id >= config_.vocab_size) throw InvalidArgument("token id " + std::to_string(id) + " out of range");

  // patches grouped per layer; duplicates rejected
  std::vector<std::vector<const Patch*>> layer_patches(config_.n_layers);
  {
    std::map<std::pair<NeuronRef, std::size_t>, bool> seen;
    for (const Patch& p : patches) {
      check_neuron(p.target);
      if (p.position >= T)
        throw InvalidArgument("patch position " + std::to_string(p.position) + " is outside a " +
                              std::to_string(T) + "-token input");
      if (!seen.emplace(std::pair{p.target, p.position}, true).second)
        throw InvalidArgument("duplicate patch for " + to_string(p.target) + " at position " +
                              std::to_string(p.position));
      layer_patches[p.target.layer].push_back(&p);
    }
  }
  if (hooks) {
    for (const auto& rp : hooks->patches)
      if (rp.layer < 0 || rp.layer >= config_.n_layers || rp.position >= T || rp.dim < 0 ||
          rp.dim >= config_.d_model)
        throw InvalidArgument("residual patch out of range");
  }

  ForwardTrace trace;
  trace.seq_len_ = T;
  trace.vocab_ = V;
  trace.n_heads_ = static_cast<int>(H);
  trace.recorded_.assign(options.record.begin(), options.record.end());
  for (const auto& r : trace.recorded_) check_neuron(r);
  trace.values_.assign(trace.recorded_.size() * T, 0.0f);
  std::vector<std::vector<std::size_t>> layer_records(config_.n_layers);
  for (std::size_t k = 0; k < trace.recorded_.size(); ++k) layer_records[trace.recorded_[k].layer].push_back(k);
  if (options.record_attention) trace.attention_.assign(config_.n_layers * H, std::vector<float>(T * T, 0.0f));

  std::vector<float> x(T * D), h(T * D), qkv(T * 3 * D), attn(T * D), tmp(T * D), fc(T * M);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < D; ++i) x[t * D + i] = wte_[tokens[t] * D + i] + wpe_[t * D + i];

  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  std::vector<float> scores(T);
  for (int l = 0; l < config_.n_layers; ++l) {
    const Block& b = blocks_[l];
    layer_norm(x, T, D, b.ln1_g, b.ln1_b, config_.layernorm_epsilon, h);
    linear(h, T, D, b.attn_w, b.attn_b, 3 * D, qkv);
    std::fill(attn.begin(), attn.end(), 0.0f);
    for (std::size_t head = 0; head < H; ++head) {
      for (std::size_t t = 0; t < T; ++t) {
        const float* q = qkv.data() + t * 3 * D + head * hd;
        float max_score = -std::numeric_limits<float>::infinity();
        for (std::size_t s = 0; s <= t; ++s) {
          const float* k = qkv.data() + s * 3 * D + D + head * hd;
          float dot = 0.0f;
          for (std::size_t i = 0; i < hd; ++i) dot += q[i] * k[i];
          scores[s] = dot * scale;
          max_score = std::max(max_score, scores[s]);
        }
        float sum = 0.0f;
        for (std::size_t s = 0; s <= t; ++s) {
          scores[s] = std::exp(scores[s] - max_score);
          sum += scores[s];
        }
        float* out = attn.data() + t * D + head * hd;
        for (std::size_t s = 0; s <= t; ++s) {
          const float w = scores[s] / sum;
          if (options.record_attention) trace.attention_[l * H + head][t * T + s] = w;
          const float* v = qkv.data() + s * 3 * D + 2 * D + head * hd;
          for (std::size_t i = 0; i < hd; ++i) out[i] += w * v[i];
        }
      }
    }
    linear(attn, T, D, b.proj_w, b.proj_b, D, tmp);
    for (std::size_t i = 0; i < T * D; ++i) x[i] += tmp[i];

    layer_norm(x, T, D, b.ln2_g, b.ln2_b, config_.layernorm_epsilon, h);
    linear(h, T, D, b.fc_w, b.fc_b, M, fc);
    for (float& v : fc) v = detail::gelu(v);
    for (const Patch* p : layer_patches[l]) fc[p->position * M + p->target.index] = p->value;
    for (std::size_t k : layer_records[l]) {
      const auto& ref = trace.recorded_[k];
      for (std::size_t t = 0; t < T; ++t) trace.values_[k * T + t] = fc[t * M + ref.index];
    }
    linear(fc, T, M, b.fc_proj_w, b.fc_proj_b, D, tmp);
    for (std::size_t i = 0; i < T * D; ++i) x[i] += tmp[i];

    if (hooks)
      for (const auto& rp : hooks->patches)
        if (rp.layer == l) x[rp.position * D + rp.dim] = rp.value;
  }
  if (hooks && hooks->final_residual) *hooks->final_residual = x;

  const std::size_t first = options.last_logits_only ? T - 1 : 0;
  const std::size_t rows = T - first;
  layer_norm(std::span<const float>(x).subspan(first * D, rows * D), rows, D, lnf_g_, lnf_b_,
             config_.layernorm_epsilon, std::span<float>(h).first(rows * D));
  const std::vector<float>& unembed = lm_head_.empty() ? wte_ : lm_head_;
  trace.first_logit_position_ = first;
  trace.logits_.assign(rows * V, 0.0f);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* hr = h.data() + r * D;
    float* lr = trace.logits_.data() + r * V;
    for (std::size_t v = 0; v < V; ++v) {
      const float* e = unembed.data() + v * D;
      float dot = 0.0f;
      for (std::size_t i = 0; i < D; ++i) dot += hr[i] * e[i];
      lr[v] = dot;
    }
  }
  return trace;
}

TokenId greedy_next(const ForwardTrace& trace) {
  const auto row = trace.last_logits();
  std::size_t best = 0;
  for (std::size_t v = 1; v < row.size(); ++v)
    if (row[v] > row[best]) best = v;
  return static_cast<TokenId>(best);
}

}  // namespace neuroaudit
