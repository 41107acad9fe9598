#pragma once

// FSMN language model.
//
//   X_0     = [E(w_{t-C}); ...; E(w_{t-1})]            (BOS-padded context)
//   H_l     = ReLU(W_l X_{l-1} + Wmem_{l-1} H~_{l-1} + b_l)
//   H~_l    = ReLU(H_l · M̄)                             (only if l carries memory)
//   logits  = W_out X_L + Wmem_L H~_L + b_out
//
// The Wmem term exists only when the previous layer has a memory block. All
// activations are stored time-major: one column per prediction position, the
// sentences of a batch concatenated along the column axis.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsmn/data.hpp"
#include "fsmn/linalg.hpp"
#include "fsmn/memory.hpp"

namespace fsmn {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t context_window = 2;
  std::size_t embed_dim = 200;
  std::vector<std::size_t> hidden_dims;
  std::set<std::size_t> memory_at;  // 1-based hidden layer indices
  std::size_t memory_order = 0;
  std::size_t dense_cap = kDefaultDenseCap;

  std::size_t layers() const { return hidden_dims.size(); }
  bool has_memory(std::size_t layer) const { return memory_at.count(layer + 1) != 0; }
  std::size_t input_dim() const { return context_window * embed_dim; }
  std::size_t layer_input_dim(std::size_t layer) const {
    return layer == 0 ? input_dim() : hidden_dims[layer - 1];
  }
  std::size_t layer_output_dim(std::size_t layer) const {
    return layer + 1 < layers() ? hidden_dims[layer + 1] : vocab_size;
  }

  void validate() const {
    if (vocab_size < kReservedTokens) throw ConfigError("vocab_size must cover the reserved tokens");
    if (context_window == 0) throw ConfigError("context_window must be >= 1");
    if (embed_dim == 0) throw ConfigError("embed_dim must be >= 1");
    if (hidden_dims.empty()) throw ConfigError("at least one hidden layer is required");
    for (auto d : hidden_dims)
      if (d == 0) throw ConfigError("hidden layer widths must be >= 1");
    for (auto l : memory_at) {
      if (l < 1 || l > hidden_dims.size()) {
        throw ConfigError("memory_at index " + std::to_string(l) + " outside 1.." +
                          std::to_string(hidden_dims.size()));
      }
    }
  }

  /// Architecture string in the "[2*200]-400(M)-400-10000" notation.
  std::string describe() const {
    std::string s = "[" + std::to_string(context_window) + "*" + std::to_string(embed_dim) + "]";
    for (std::size_t l = 0; l < layers(); ++l) {
      s += "-" + std::to_string(hidden_dims[l]);
      if (has_memory(l)) s += "(M)";
    }
    return s + "-" + std::to_string(vocab_size);
  }

  static ModelConfig ptb_preset(std::size_t vocab_size) {
    return {vocab_size, 2, 200, {400, 400}, {1}, 20, kDefaultDenseCap};
  }

  static ModelConfig ltcb_preset(std::size_t vocab_size, std::set<std::size_t> memory_at) {
    return {vocab_size, 2, 200, {600, 600, 600}, std::move(memory_at), 30, kDefaultDenseCap};
  }
};

enum class ParamGroup { embedding, weight, bias, taps, memory_weight, output };

inline const char* group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::embedding: return "embedding";
    case ParamGroup::weight: return "W";
    case ParamGroup::bias: return "b";
    case ParamGroup::taps: return "taps";
    case ParamGroup::memory_weight: return "W_mem";
    case ParamGroup::output: return "output";
  }
  return "?";
}

struct MemoryParams {
  Matrix taps;  // 1 x (order+1)
  Matrix proj;  // next-layer width x this-layer width
};

struct Parameters {
  Matrix embedding;  // vocab x embed_dim, one row per word
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;  // column vectors
  std::map<std::size_t, MemoryParams> memory;  // keyed by 0-based layer
  Matrix out_weight;
  Matrix out_bias;

  bool operator==(const Parameters& o) const {
    return embedding == o.embedding && weights == o.weights && biases == o.biases &&
           out_weight == o.out_weight && out_bias == o.out_bias && memory_equal(o);
  }

 private:
  bool memory_equal(const Parameters& o) const {
    if (memory.size() != o.memory.size()) return false;
    for (const auto& [l, m] : memory) {
      auto it = o.memory.find(l);
      if (it == o.memory.end() || !(m.taps == it->second.taps) || !(m.proj == it->second.proj))
        return false;
    }
    return true;
  }
};

struct TensorInfo {
  std::string name;
  ParamGroup group;
};

/// Visits every learnable tensor in a fixed order.
template <class Params, class Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  fn(TensorInfo{"embedding", ParamGroup::embedding}, p.embedding);
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const std::string idx = std::to_string(l + 1);
    fn(TensorInfo{"W" + idx, ParamGroup::weight}, p.weights[l]);
    fn(TensorInfo{"b" + idx, ParamGroup::bias}, p.biases[l]);
    if (auto it = p.memory.find(l); it != p.memory.end()) {
      fn(TensorInfo{"taps" + idx, ParamGroup::taps}, it->second.taps);
      fn(TensorInfo{"W_mem" + idx, ParamGroup::memory_weight}, it->second.proj);
    }
  }
  fn(TensorInfo{"W_out", ParamGroup::output}, p.out_weight);
  fn(TensorInfo{"b_out", ParamGroup::output}, p.out_bias);
}

inline std::size_t parameter_count(const Parameters& p) {
  std::size_t n = 0;
  for_each_tensor(p, [&](const TensorInfo&, const Matrix& m) { n += m.size(); });
  return n;
}

/// All tensors shaped for `config`, zero filled, taps included.
inline Parameters zero_parameters(const ModelConfig& config) {
  config.validate();
  Parameters p;
  p.embedding = Matrix(config.vocab_size, config.embed_dim);
  for (std::size_t l = 0; l < config.layers(); ++l) {
    p.weights.emplace_back(config.hidden_dims[l], config.layer_input_dim(l));
    p.biases.emplace_back(config.hidden_dims[l], 1);
    if (config.has_memory(l)) {
      p.memory[l] = MemoryParams{Matrix(1, config.memory_order + 1),
                                 Matrix(config.layer_output_dim(l), config.hidden_dims[l])};
    }
  }
  p.out_weight = Matrix(config.vocab_size, config.hidden_dims.back());
  p.out_bias = Matrix(config.vocab_size, 1);
  return p;
}

/// Uniform in [-1, 1) from the raw 53 high bits; platform independent.
inline double unit_symmetric(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-52 - 1.0;
}

/// Normalized (Glorot) uniform weights, zero biases, identity taps.
inline Parameters init_parameters(const ModelConfig& config, std::uint64_t seed) {
  Parameters p = zero_parameters(config);
  std::mt19937_64 rng(seed);
  auto glorot = [&rng](Matrix& w, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : w.values()) v = bound * unit_symmetric(rng);
  };
  glorot(p.embedding, config.vocab_size, config.embed_dim);
  for (std::size_t l = 0; l < config.layers(); ++l) {
    glorot(p.weights[l], p.weights[l].cols(), p.weights[l].rows());
    if (auto it = p.memory.find(l); it != p.memory.end()) {
      it->second.taps(0, 0) = 1.0;
      glorot(it->second.proj, it->second.proj.cols(), it->second.proj.rows());
    }
  }
  glorot(p.out_weight, p.out_weight.cols(), p.out_weight.rows());
  return p;
}

inline FilterCoeffs taps_of(const MemoryParams& m) { return FilterCoeffs(m.taps.values()); }

struct ForwardCache {
  Matrix input;                       // context embeddings, (C*e) x P
  std::vector<Matrix> pre;            // Z_l
  std::vector<Matrix> hidden;         // H_l
  std::map<std::size_t, Matrix> memory_pre;  // H_l · M̄
  std::map<std::size_t, Matrix> memory_out;  // H~_l
  std::vector<std::size_t> lengths;
};

struct ForwardResult {
  Matrix log_probs;  // vocab x P
  ForwardCache cache;
};

namespace detail {

inline void check_batch(const ModelConfig& config, const SentenceBatch& batch) {
  if (batch.positions() == 0 || batch.lengths.empty()) throw DataError("forward: empty batch");
  if (batch.context_window != config.context_window) {
    throw DataError("forward: batch context window " + std::to_string(batch.context_window) +
                    " differs from model's " + std::to_string(config.context_window));
  }
  auto check = [&](TokenId id) {
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
      throw DataError("forward: token id " + std::to_string(id) + " outside vocabulary of size " +
                      std::to_string(config.vocab_size));
    }
  };
  for (TokenId id : batch.context) check(id);
  for (TokenId id : batch.targets) check(id);
}

/// In-place column-wise log-softmax, walking rows so access stays contiguous.
inline void log_softmax_columns(Matrix& z) {
  const std::size_t n = z.cols();
  std::vector<double> mx(n, -std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const double* zr = z.row(r);
    for (std::size_t c = 0; c < n; ++c) mx[c] = std::max(mx[c], zr[c]);
  }
  std::vector<double> sum(n, 0.0);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const double* zr = z.row(r);
    for (std::size_t c = 0; c < n; ++c) sum[c] += std::exp(zr[c] - mx[c]);
  }
  for (std::size_t c = 0; c < n; ++c) sum[c] = mx[c] + std::log(sum[c]);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    double* zr = z.row(r);
    for (std::size_t c = 0; c < n; ++c) zr[c] -= sum[c];
  }
}

}  // namespace detail

inline ForwardResult forward(const Parameters& params, const ModelConfig& config,
                             const SentenceBatch& batch) {
  detail::check_batch(config, batch);
  const std::size_t positions = batch.positions();
  const std::size_t e = config.embed_dim;
  ForwardResult r;
  ForwardCache& c = r.cache;
  c.lengths = batch.lengths;

  c.input = Matrix(config.input_dim(), positions);
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t j = 0; j < config.context_window; ++j) {
      const double* emb = params.embedding.row(static_cast<std::size_t>(batch.context_at(p, j)));
      for (std::size_t k = 0; k < e; ++k) c.input(j * e + k, p) = emb[k];
    }
  }

  const Matrix* x = &c.input;
  const Matrix* mem_in = nullptr;
  const Matrix* mem_proj = nullptr;
  for (std::size_t l = 0; l < config.layers(); ++l) {
    Matrix z = matmul(params.weights[l], *x);
    if (mem_in) add_inplace(z, matmul(*mem_proj, *mem_in));
    add_column_inplace(z, params.biases[l]);
    c.hidden.push_back(relu(z));
    c.pre.push_back(std::move(z));
    mem_in = nullptr;
    if (auto it = params.memory.find(l); it != params.memory.end()) {
      const BlockDiagMemory m(taps_of(it->second), batch.lengths);
      Matrix mp = memory_product(c.hidden.back(), m, config.dense_cap);
      c.memory_out[l] = relu(mp);
      c.memory_pre[l] = std::move(mp);
      mem_in = &c.memory_out[l];
      mem_proj = &it->second.proj;
    }
    x = &c.hidden.back();
  }

  Matrix logits = matmul(params.out_weight, *x);
  if (mem_in) add_inplace(logits, matmul(*mem_proj, *mem_in));
  add_column_inplace(logits, params.out_bias);
  detail::log_softmax_columns(logits);
  r.log_probs = std::move(logits);
  return r;
}

/// Negative log-likelihood summed over each sentence of the batch.
inline std::vector<double> sentence_nll(const Matrix& log_probs, const SentenceBatch& batch) {
  std::vector<double> out;
  std::size_t p = 0;
  for (std::size_t len : batch.lengths) {
    double s = 0.0;
    for (std::size_t t = 0; t < len; ++t, ++p)
      s -= log_probs(static_cast<std::size_t>(batch.targets[p]), p);
    out.push_back(s);
  }
  return out;
}

inline double total_nll(const Matrix& log_probs, const SentenceBatch& batch) {
  double s = 0.0;
  for (std::size_t p = 0; p < batch.positions(); ++p)
    s -= log_probs(static_cast<std::size_t>(batch.targets[p]), p);
  return s;
}

inline double mean_loss(const Parameters& params, const ModelConfig& config,
                        const SentenceBatch& batch) {
  const auto r = forward(params, config, batch);
  return total_nll(r.log_probs, batch) / static_cast<double>(batch.positions());
}

struct LossAndGrad {
  double loss = 0.0;
  Parameters grads;
};

/// Mean NLL per prediction position and its exact gradient.
inline LossAndGrad loss_and_grad(const Parameters& params, const ModelConfig& config,
                                 const SentenceBatch& batch) {
  ForwardResult fw = forward(params, config, batch);
  const ForwardCache& c = fw.cache;
  const std::size_t positions = batch.positions();
  const double inv = 1.0 / static_cast<double>(positions);

  LossAndGrad out;
  out.loss = total_nll(fw.log_probs, batch) * inv;
  Parameters& g = out.grads;
  g = zero_parameters(config);

  // d logits = (softmax - onehot) / P
  Matrix delta = std::move(fw.log_probs);
  for (double& v : delta.values()) v = std::exp(v) * inv;
  for (std::size_t p = 0; p < positions; ++p)
    delta(static_cast<std::size_t>(batch.targets[p]), p) -= inv;

  const std::size_t last = config.layers() - 1;
  g.out_weight = matmul_bt(delta, c.hidden[last]);
  g.out_bias = row_sums(delta);
  Matrix d_hidden = matmul_at(params.out_weight, delta);
  Matrix d_mem_out;
  if (auto it = params.memory.find(last); it != params.memory.end()) {
    g.memory[last].proj = matmul_bt(delta, c.memory_out.at(last));
    d_mem_out = matmul_at(it->second.proj, delta);
  }

  for (std::size_t l = config.layers(); l-- > 0;) {
    if (auto it = params.memory.find(l); it != params.memory.end()) {
      const BlockDiagMemory m(taps_of(it->second), c.lengths);
      const Matrix d_mem_pre = relu_backward(c.memory_pre.at(l), std::move(d_mem_out));
      auto fg = fir_backward(c.hidden[l], d_mem_pre, m, config.dense_cap);
      add_inplace(d_hidden, fg.d_input);
      std::copy(fg.d_taps.begin(), fg.d_taps.end(), g.memory[l].taps.values().begin());
    }
    const Matrix dz = relu_backward(c.pre[l], std::move(d_hidden));
    const Matrix& x_in = l == 0 ? c.input : c.hidden[l - 1];
    g.weights[l] = matmul_bt(dz, x_in);
    g.biases[l] = row_sums(dz);
    if (l > 0) {
      if (auto it = params.memory.find(l - 1); it != params.memory.end()) {
        g.memory[l - 1].proj = matmul_bt(dz, c.memory_out.at(l - 1));
        d_mem_out = matmul_at(it->second.proj, dz);
      }
      d_hidden = matmul_at(params.weights[l], dz);
    } else {
      const Matrix d_input = matmul_at(params.weights[0], dz);
      const std::size_t e = config.embed_dim;
      for (std::size_t p = 0; p < positions; ++p) {
        for (std::size_t j = 0; j < config.context_window; ++j) {
          double* ge = g.embedding.row(static_cast<std::size_t>(batch.context_at(p, j)));
          for (std::size_t k = 0; k < e; ++k) ge[k] += d_input(j * e + k, p);
        }
      }
    }
  }
  return out;
}

struct NllTotals {
  double nll = 0.0;
  std::size_t positions = 0;

  double mean() const { return nll / static_cast<double>(positions); }
  double perplexity() const { return std::exp(mean()); }
};

inline NllTotals evaluate(const Parameters& params, const ModelConfig& config,
                          const std::vector<Sentence>& sentences, std::size_t batch_size = 64) {
  if (sentences.empty()) throw DataError("perplexity: empty dataset");
  NllTotals t;
  for (const auto& b : sequential_batches(sentences, batch_size, config.context_window)) {
    const auto r = forward(params, config, b);
    t.nll += total_nll(r.log_probs, b);
    t.positions += b.positions();
  }
  return t;
}

/// exp(mean NLL per predicted token), natural log.
inline double perplexity(const Parameters& params, const ModelConfig& config,
                         const std::vector<Sentence>& sentences, std::size_t batch_size = 64) {
  return evaluate(params, config, sentences, batch_size).perplexity();
}

// --- gradient checking -----------------------------------------------------

/// Moves taps and biases off their initial values. With identity taps the
/// memory pre-activation equals H exactly, which puts zero entries right on
/// the ReLU kink where central differences are meaningless.
inline void jitter_for_grad_check(Parameters& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5DEECE66DULL);
  for (auto& b : p.biases)
    for (double& v : b.values()) v = 0.1 * unit_symmetric(rng);
  for (double& v : p.out_bias.values()) v = 0.1 * unit_symmetric(rng);
  for (auto& [l, m] : p.memory)
    for (double& v : m.taps.values()) v += 0.5 * unit_symmetric(rng);
}

inline constexpr double kDefaultGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;
/// Below this magnitude the check reports absolute instead of relative error.
inline constexpr double kGradCheckAbsFloor = 1e-6;
inline constexpr std::size_t kGradCheckMaxParams = 10000;

struct GroupError {
  ParamGroup group;
  double max_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t absolute_count = 0;  // entries compared absolutely
};

struct GradCheckReport {
  std::vector<GroupError> groups;

  bool passed(double tolerance = kGradCheckTolerance) const {
    return std::all_of(groups.begin(), groups.end(),
                       [&](const GroupError& g) { return g.max_error < tolerance; });
  }
  const GroupError* find(ParamGroup g) const {
    for (const auto& e : groups)
      if (e.group == g) return &e;
    return nullptr;
  }
};

using GradientFn =
    std::function<LossAndGrad(const Parameters&, const ModelConfig&, const SentenceBatch&)>;

inline double gradient_error(double analytic, double numeric) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  const double diff = std::abs(analytic - numeric);
  return scale < kGradCheckAbsFloor ? diff : diff / scale;
}

/// Compares `gradient` (default: loss_and_grad) against central differences
/// of the mean loss, entry by entry.
inline GradCheckReport grad_check(const Parameters& params, const ModelConfig& config,
                                  const SentenceBatch& batch, double step = kDefaultGradCheckStep,
                                  const GradientFn& gradient = loss_and_grad) {
  if (parameter_count(params) > kGradCheckMaxParams) {
    throw ConfigError("grad_check: model has " + std::to_string(parameter_count(params)) +
                      " parameters; limit is " + std::to_string(kGradCheckMaxParams));
  }
  const LossAndGrad analytic = gradient(params, config, batch);
  std::vector<std::pair<TensorInfo, const Matrix*>> grads;
  for_each_tensor(analytic.grads,
                  [&](const TensorInfo& info, const Matrix& m) { grads.emplace_back(info, &m); });

  GradCheckReport report;
  Parameters probe = params;
  std::size_t k = 0;
  for_each_tensor(probe, [&](const TensorInfo& info, Matrix& tensor) {
    const Matrix& g = *grads[k++].second;
    auto slot = std::find_if(report.groups.begin(), report.groups.end(),
                             [&](const GroupError& e) { return e.group == info.group; });
    if (slot == report.groups.end()) {
      report.groups.push_back(GroupError{info.group, 0.0, {}, 0, 0, 0});
      slot = std::prev(report.groups.end());
    }
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double orig = tensor.data()[i];
      tensor.data()[i] = orig + step;
      const double up = mean_loss(probe, config, batch);
      tensor.data()[i] = orig - step;
      const double down = mean_loss(probe, config, batch);
      tensor.data()[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = g.data()[i];
      const double err = gradient_error(a, numeric);
      ++slot->checked;
      if (std::max(std::abs(a), std::abs(numeric)) < kGradCheckAbsFloor) ++slot->absolute_count;
      if (slot->worst_tensor.empty() || err > slot->max_error) {
        slot->max_error = err;
        slot->worst_tensor = info.name;
        slot->worst_index = i;
      }
    }
  });
  return report;
}

}  // namespace fsmn
