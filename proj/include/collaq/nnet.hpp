#pragma once

// Minimal differentiable function approximators: dense towers and a stacked
// multi-head attention block, with hand-written reverse-mode gradients and a
// finite-difference verifier. Everything is templated on the scalar type;
// training runs in 32-bit, verification instantiates the same code at 64-bit.
//
// All forwards are batched: inputs are (dim x batch) matrices and summation
// order is fixed, so runs are bit-reproducible.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "collaq/rng.hpp"

namespace collaq {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

struct AttentionSpec {
  int num_layers = 2;
  int model_dim = 32;
  int num_heads = 2;
};

/// Layer-size lists for the towers; first entry is the input width, last the
/// output width. Hidden layers use the rectifier, outputs are affine.
struct NetworkSpec {
  std::vector<int> alone_tower;     // o_alone dim -> hidden... -> |A|
  std::vector<int> collab_encoder;  // o_alone dim -> ... -> model_dim
  std::vector<int> token_encoder;   // token dim -> ... -> model_dim
  AttentionSpec attention;
  std::vector<int> collab_head;     // 2*model_dim -> hidden... -> |A|
  bool double_precision = false;

  int num_actions() const { return alone_tower.back(); }

  void validate() const {
    auto check_sizes = [](const std::vector<int>& sizes, const char* name) {
      if (sizes.size() < 2) throw std::invalid_argument(std::string(name) + ": need in and out");
      for (int d : sizes) {
        if (d <= 0) throw std::invalid_argument(std::string(name) + ": dims must be positive");
      }
    };
    check_sizes(alone_tower, "alone_tower");
    check_sizes(collab_encoder, "collab_encoder");
    check_sizes(token_encoder, "token_encoder");
    check_sizes(collab_head, "collab_head");
    if (attention.num_layers < 1 || attention.model_dim < 1 || attention.num_heads < 1)
      throw std::invalid_argument("attention: layers, dim and heads must be positive");
    if (attention.model_dim % attention.num_heads != 0)
      throw std::invalid_argument("attention: head count must divide model_dim");
    if (collab_encoder.back() != attention.model_dim ||
        token_encoder.back() != attention.model_dim)
      throw std::invalid_argument("encoders must emit model_dim embeddings");
    if (collab_head.front() != 2 * attention.model_dim)
      throw std::invalid_argument("collab_head input must be 2*model_dim (query ++ attention)");
    if (collab_head.back() != alone_tower.back())
      throw std::invalid_argument("towers must agree on the action count");
  }
};

template <typename S>
struct Tensor {
  std::string name;
  std::vector<int> shape;  // rank 1 = column vector, rank 2 = matrix
  Mat<S> value;
};

/// Ordered collection of named tensors. Insertion order is part of the
/// contract (checkpoints serialize in it).
template <typename S>
class ParamStore {
 public:
  Mat<S>& add(const std::string& name, int rows, int cols, bool vector_shape = false) {
    if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate tensor " + name);
    index_[name] = static_cast<int>(tensors_.size());
    Tensor<S> t;
    t.name = name;
    t.shape = vector_shape ? std::vector<int>{rows} : std::vector<int>{rows, cols};
    t.value = Mat<S>::Zero(rows, cols);
    tensors_.push_back(std::move(t));
    return tensors_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Mat<S>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown tensor " + name);
    return tensors_[it->second].value;
  }
  const Mat<S>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown tensor " + name);
    return tensors_[it->second].value;
  }

  const std::vector<Tensor<S>>& tensors() const { return tensors_; }
  std::vector<Tensor<S>>& tensors() { return tensors_; }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const Tensor<S>& t : tensors_) n += static_cast<std::size_t>(t.value.size());
    return n;
  }

  /// Same names and shapes, all values zero.
  ParamStore<S> zeros_like() const {
    ParamStore<S> out;
    for (const Tensor<S>& t : tensors_) {
      out.add(t.name, static_cast<int>(t.value.rows()), static_cast<int>(t.value.cols()),
              t.shape.size() == 1);
    }
    return out;
  }

  template <typename T>
  ParamStore<T> cast() const {
    ParamStore<T> out;
    for (const Tensor<S>& t : tensors_) {
      out.add(t.name, static_cast<int>(t.value.rows()), static_cast<int>(t.value.cols()),
              t.shape.size() == 1) = t.value.template cast<T>();
    }
    return out;
  }

  bool all_finite() const {
    for (const Tensor<S>& t : tensors_) {
      if (!t.value.allFinite()) return false;
    }
    return true;
  }

 private:
  std::vector<Tensor<S>> tensors_;
  std::unordered_map<std::string, int> index_;
};

namespace detail {

template <typename S>
inline void fill_uniform(Mat<S>& m, double bound, Rng& rng) {
  S* data = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    data[i] = static_cast<S>(rng.uniform(-bound, bound));
  }
}

inline double glorot_bound(int fan_in, int fan_out) {
  return std::sqrt(6.0 / (fan_in + fan_out));
}

}  // namespace detail

/// Adds an MLP's weights and biases under `prefix` (prefix.<layer>.W / .b).
/// Weights are uniform within the fan-based bound, biases zero.
template <typename S>
inline void add_mlp_params(ParamStore<S>& params, const std::string& prefix,
                           const std::vector<int>& sizes, Rng& rng) {
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::string base = prefix + "." + std::to_string(l);
    Mat<S>& w = params.add(base + ".W", sizes[l + 1], sizes[l]);
    detail::fill_uniform(w, detail::glorot_bound(sizes[l], sizes[l + 1]), rng);
    params.add(base + ".b", sizes[l + 1], 1, /*vector_shape=*/true);
  }
}

/// Adds per-layer attention projections under `prefix` (prefix.<layer>.Wq /
/// .Wk / .Wv / .Wo / .bo). Heads live in row blocks of the shared matrices.
template <typename S>
inline void add_attention_params(ParamStore<S>& params, const std::string& prefix,
                                 const AttentionSpec& spec, Rng& rng) {
  const int d = spec.model_dim;
  for (int l = 0; l < spec.num_layers; ++l) {
    const std::string base = prefix + "." + std::to_string(l);
    for (const char* name : {".Wq", ".Wk", ".Wv", ".Wo"}) {
      Mat<S>& w = params.add(base + name, d, d);
      detail::fill_uniform(w, detail::glorot_bound(d, d), rng);
    }
    params.add(base + ".bo", d, 1, /*vector_shape=*/true);
  }
}

/// Full CollaQ parameter set: alone tower, collab encoder, token encoder,
/// attention stack and collab head. Deterministic under the seed.
template <typename S>
inline ParamStore<S> init_params(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  ParamStore<S> params;
  add_mlp_params(params, "alone", spec.alone_tower, rng);
  add_mlp_params(params, "cenc", spec.collab_encoder, rng);
  add_mlp_params(params, "tenc", spec.token_encoder, rng);
  add_attention_params(params, "attn", spec.attention, rng);
  add_mlp_params(params, "head", spec.collab_head, rng);
  return params;
}

template <typename S>
struct MlpTrace {
  std::vector<Mat<S>> inputs;   // input to each layer
  std::vector<Mat<S>> preacts;  // affine output of each layer
};

template <typename S>
inline int mlp_layer_count(const ParamStore<S>& params, const std::string& prefix) {
  int n = 0;
  while (params.contains(prefix + "." + std::to_string(n) + ".W")) ++n;
  return n;
}

/// Affine + rectifier per hidden layer, affine output. Columns are batch
/// entries.
template <typename S>
inline Mat<S> mlp_forward(const ParamStore<S>& params, const std::string& prefix, const Mat<S>& x,
                          MlpTrace<S>* trace = nullptr) {
  const int layers = mlp_layer_count(params, prefix);
  if (layers == 0) throw std::invalid_argument("mlp_forward: no layers under " + prefix);
  Mat<S> h = x;
  for (int l = 0; l < layers; ++l) {
    const std::string base = prefix + "." + std::to_string(l);
    const Mat<S>& w = params.at(base + ".W");
    const Mat<S>& b = params.at(base + ".b");
    if (w.cols() != h.rows())
      throw std::invalid_argument("mlp_forward: input dim mismatch at " + base);
    if (trace) trace->inputs.push_back(h);
    Mat<S> z = (w * h).colwise() + b.col(0);
    if (trace) trace->preacts.push_back(z);
    h = (l + 1 < layers) ? z.cwiseMax(S(0)).eval() : std::move(z);
  }
  return h;
}

/// dL/dx for the traced forward; parameter gradients accumulate into `grads`.
template <typename S>
inline Mat<S> mlp_backward(const ParamStore<S>& params, const std::string& prefix,
                           const MlpTrace<S>& trace, const Mat<S>& upstream,
                           ParamStore<S>& grads) {
  const int layers = static_cast<int>(trace.inputs.size());
  Mat<S> delta = upstream;
  for (int l = layers - 1; l >= 0; --l) {
    const std::string base = prefix + "." + std::to_string(l);
    if (l + 1 < layers) {
      delta = (trace.preacts[l].array() > S(0)).template cast<S>().matrix().cwiseProduct(delta);
    }
    grads.at(base + ".W").noalias() += delta * trace.inputs[l].transpose();
    grads.at(base + ".b").col(0).noalias() += delta.rowwise().sum();
    if (l > 0) delta = (params.at(base + ".W").transpose() * delta).eval();
  }
  if (layers == 0) return upstream;
  return params.at(prefix + ".0.W").transpose() * delta;
}

template <typename S>
struct AttnLayerTrace {
  Mat<S> q_in;                 // d x B, query entering the layer
  Mat<S> q_proj;               // d x B, Wq * q_in (head blocks stacked)
  std::vector<Mat<S>> k_proj;  // per token, d x B
  std::vector<Mat<S>> v_proj;  // per token, d x B
  std::vector<Mat<S>> attn;    // per head, tokens x B softmax weights
  Mat<S> ctx;                  // d x B, head contexts stacked
  Mat<S> preact;               // d x B, residual + output projection
};

template <typename S>
struct AttnTrace {
  std::vector<AttnLayerTrace<S>> layers;
  int num_tokens = 0;
  bool empty_tokens = false;
};

/// Stacked scaled dot-product attention: the (layer-updated) query attends
/// over token keys/values, then residual + rectifier. The empty token list
/// yields the exact zero embedding regardless of parameters.
template <typename S>
inline Mat<S> attention_forward(const ParamStore<S>& params, const std::string& prefix,
                                const AttentionSpec& spec, const Mat<S>& query,
                                const std::vector<Mat<S>>& tokens, AttnTrace<S>* trace = nullptr) {
  const int d = spec.model_dim;
  const int heads = spec.num_heads;
  const int dh = d / heads;
  const int batch = static_cast<int>(query.cols());
  if (query.rows() != d) throw std::invalid_argument("attention_forward: query dim mismatch");
  for (const Mat<S>& t : tokens) {
    if (t.rows() != d || t.cols() != batch)
      throw std::invalid_argument("attention_forward: token dim mismatch");
  }
  const int n = static_cast<int>(tokens.size());
  if (trace) {
    trace->num_tokens = n;
    trace->empty_tokens = n == 0;
  }
  if (n == 0) return Mat<S>::Zero(d, batch);

  const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));
  Mat<S> q = query;
  for (int l = 0; l < spec.num_layers; ++l) {
    const std::string base = prefix + "." + std::to_string(l);
    AttnLayerTrace<S> layer;
    layer.q_in = q;
    layer.q_proj.noalias() = params.at(base + ".Wq") * q;
    layer.k_proj.resize(n);
    layer.v_proj.resize(n);
    for (int j = 0; j < n; ++j) {
      layer.k_proj[j].noalias() = params.at(base + ".Wk") * tokens[j];
      layer.v_proj[j].noalias() = params.at(base + ".Wv") * tokens[j];
    }
    layer.attn.resize(heads);
    layer.ctx.resize(d, batch);
    for (int h = 0; h < heads; ++h) {
      const auto qh = layer.q_proj.middleRows(h * dh, dh);
      Mat<S> scores(n, batch);
      for (int j = 0; j < n; ++j) {
        scores.row(j) =
            (qh.cwiseProduct(layer.k_proj[j].middleRows(h * dh, dh))).colwise().sum() * scale;
      }
      // Column-wise softmax with the max subtracted for stability.
      Mat<S> weights(n, batch);
      for (int b = 0; b < batch; ++b) {
        const S m = scores.col(b).maxCoeff();
        weights.col(b) = (scores.col(b).array() - m).exp();
        weights.col(b) /= weights.col(b).sum();
      }
      auto ctx_h = layer.ctx.middleRows(h * dh, dh);
      ctx_h.setZero();
      for (int j = 0; j < n; ++j) {
        ctx_h.noalias() +=
            layer.v_proj[j].middleRows(h * dh, dh) * weights.row(j).asDiagonal();
      }
      layer.attn[h] = std::move(weights);
    }
    layer.preact = q + ((params.at(base + ".Wo") * layer.ctx).colwise() +
                        params.at(base + ".bo").col(0));
    q = layer.preact.cwiseMax(S(0));
    if (trace) trace->layers.push_back(std::move(layer));
  }
  return q;
}

template <typename S>
struct AttnBackResult {
  Mat<S> d_query;
  std::vector<Mat<S>> d_tokens;
};

/// Exact reverse pass through the attention stack. Token gradients accumulate
/// across layers (keys/values are re-projected from the same embeddings).
template <typename S>
inline AttnBackResult<S> attention_backward(const ParamStore<S>& params, const std::string& prefix,
                                            const AttentionSpec& spec,
                                            const std::vector<Mat<S>>& tokens,
                                            const AttnTrace<S>& trace, const Mat<S>& upstream,
                                            ParamStore<S>& grads) {
  const int d = spec.model_dim;
  const int heads = spec.num_heads;
  const int dh = d / heads;
  const int n = trace.num_tokens;
  const int batch = static_cast<int>(upstream.cols());
  AttnBackResult<S> result;
  if (n == 0) {
    // Zero embedding: nothing flows to the query, tokens or parameters.
    result.d_query = Mat<S>::Zero(d, batch);
    return result;
  }
  const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));
  result.d_tokens.assign(n, Mat<S>::Zero(d, batch));

  Mat<S> dq = upstream;
  for (int l = spec.num_layers - 1; l >= 0; --l) {
    const std::string base = prefix + "." + std::to_string(l);
    const AttnLayerTrace<S>& layer = trace.layers[l];
    const Mat<S> dz =
        (layer.preact.array() > S(0)).template cast<S>().matrix().cwiseProduct(dq);
    grads.at(base + ".bo").col(0).noalias() += dz.rowwise().sum();
    grads.at(base + ".Wo").noalias() += dz * layer.ctx.transpose();
    const Mat<S> dctx = params.at(base + ".Wo").transpose() * dz;

    Mat<S> dqproj = Mat<S>::Zero(d, batch);
    std::vector<Mat<S>> dkproj(n, Mat<S>::Zero(d, batch));
    std::vector<Mat<S>> dvproj(n, Mat<S>::Zero(d, batch));
    for (int h = 0; h < heads; ++h) {
      const auto qh = layer.q_proj.middleRows(h * dh, dh);
      const auto dctx_h = dctx.middleRows(h * dh, dh);
      const Mat<S>& weights = layer.attn[h];
      Mat<S> dweights(n, batch);
      for (int j = 0; j < n; ++j) {
        dweights.row(j) =
            (dctx_h.cwiseProduct(layer.v_proj[j].middleRows(h * dh, dh))).colwise().sum();
        dvproj[j].middleRows(h * dh, dh).noalias() = dctx_h * weights.row(j).asDiagonal();
      }
      // Softmax backward per column: ds = w .* (dw - sum_k w_k dw_k).
      Mat<S> dscores(n, batch);
      const Mat<S> inner = (weights.cwiseProduct(dweights)).colwise().sum();
      for (int j = 0; j < n; ++j) {
        dscores.row(j) = weights.row(j).cwiseProduct(dweights.row(j) - inner.row(0));
      }
      auto dqh = dqproj.middleRows(h * dh, dh);
      for (int j = 0; j < n; ++j) {
        const auto kh = layer.k_proj[j].middleRows(h * dh, dh);
        dqh.noalias() += (kh * dscores.row(j).asDiagonal()) * scale;
        dkproj[j].middleRows(h * dh, dh).noalias() = (qh * dscores.row(j).asDiagonal()) * scale;
      }
    }
    grads.at(base + ".Wq").noalias() += dqproj * layer.q_in.transpose();
    for (int j = 0; j < n; ++j) {
      grads.at(base + ".Wk").noalias() += dkproj[j] * tokens[j].transpose();
      grads.at(base + ".Wv").noalias() += dvproj[j] * tokens[j].transpose();
      result.d_tokens[j].noalias() += params.at(base + ".Wk").transpose() * dkproj[j];
      result.d_tokens[j].noalias() += params.at(base + ".Wv").transpose() * dvproj[j];
    }
    dq = dz + params.at(base + ".Wq").transpose() * dqproj;  // residual + projection paths
  }
  result.d_query = std::move(dq);
  return result;
}

template <typename S>
struct CollabTrace {
  MlpTrace<S> encoder;
  std::vector<MlpTrace<S>> token_encoders;
  AttnTrace<S> attention;
  MlpTrace<S> head;
  Mat<S> enc_out;
  std::vector<Mat<S>> token_embeddings;
};

/// Q_collab: encode o_alone into the query, encode tokens, attend, then run
/// the head on [query ++ attention embedding]. An empty token list gives the
/// head a zero attention embedding.
template <typename S>
inline Mat<S> collab_forward(const ParamStore<S>& params, const NetworkSpec& spec,
                             const Mat<S>& o_alone, const std::vector<Mat<S>>& tokens,
                             CollabTrace<S>* trace = nullptr) {
  const int batch = static_cast<int>(o_alone.cols());
  const int d = spec.attention.model_dim;
  Mat<S> enc =
      mlp_forward(params, "cenc", o_alone, trace ? &trace->encoder : nullptr);
  std::vector<Mat<S>> embeddings;
  embeddings.reserve(tokens.size());
  if (trace) trace->token_encoders.resize(tokens.size());
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    embeddings.push_back(
        mlp_forward(params, "tenc", tokens[j], trace ? &trace->token_encoders[j] : nullptr));
  }
  Mat<S> attn_out = attention_forward(params, "attn", spec.attention, enc, embeddings,
                                      trace ? &trace->attention : nullptr);
  Mat<S> head_in(2 * d, batch);
  head_in.topRows(d) = enc;
  head_in.bottomRows(d) = attn_out;
  if (trace) {
    trace->enc_out = std::move(enc);
    trace->token_embeddings = std::move(embeddings);
  }
  return mlp_forward(params, "head", head_in, trace ? &trace->head : nullptr);
}

/// Reverse pass matching collab_forward; gradients accumulate into `grads`.
template <typename S>
inline void collab_backward(const ParamStore<S>& params, const NetworkSpec& spec,
                            const CollabTrace<S>& trace, const Mat<S>& upstream,
                            ParamStore<S>& grads) {
  const int d = spec.attention.model_dim;
  const Mat<S> d_head_in = mlp_backward(params, "head", trace.head, upstream, grads);
  Mat<S> d_enc = d_head_in.topRows(d);
  const Mat<S> d_attn_out = d_head_in.bottomRows(d);
  AttnBackResult<S> attn_back = attention_backward(
      params, "attn", spec.attention, trace.token_embeddings, trace.attention, d_attn_out, grads);
  d_enc += attn_back.d_query;
  mlp_backward(params, "cenc", trace.encoder, d_enc, grads);
  for (std::size_t j = 0; j < trace.token_encoders.size(); ++j) {
    mlp_backward(params, "tenc", trace.token_encoders[j], attn_back.d_tokens[j], grads);
  }
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  int coords_checked = 0;
};

/// Central-difference check of an analytic gradient on a random subsample of
/// coordinates. Relative error uses max(|analytic|, |numeric|, 1e-12) as the
/// denominator. The difference error over eps is U-shaped (truncation one
/// side, cancellation the other), so each coordinate may also try the
/// `refinements` ladder and keeps its best agreement. 64-bit stores only.
inline GradCheckResult finite_diff_gradcheck(ParamStore<double>& params,
                                             const ParamStore<double>& analytic,
                                             const std::function<double(const ParamStore<double>&)>& loss,
                                             double eps, int min_coords, Rng& rng,
                                             const std::vector<double>& refinements = {}) {
  const std::size_t total = params.total_count();
  if (total == 0) throw std::invalid_argument("finite_diff_gradcheck: empty parameter store");
  std::vector<double> ladder{eps};
  ladder.insert(ladder.end(), refinements.begin(), refinements.end());
  GradCheckResult result;
  const int coords = static_cast<int>(std::min<std::size_t>(total, static_cast<std::size_t>(min_coords)));
  const int tensor_count = static_cast<int>(params.tensors().size());
  for (int c = 0; c < coords; ++c) {
    // Uniform over tensors then entries keeps every tensor represented.
    const int ti = rng.uniform_int(tensor_count);
    auto& value = params.tensors()[ti].value;
    const int ei = rng.uniform_int(static_cast<int>(value.size()));
    double* entry = value.data() + ei;
    const double original = *entry;
    const double analytic_val = analytic.tensors()[ti].value.data()[ei];
    double best = std::numeric_limits<double>::infinity();
    for (double e : ladder) {
      *entry = original + e;
      const double plus = loss(params);
      *entry = original - e;
      const double minus = loss(params);
      *entry = original;
      if (!std::isfinite(plus) || !std::isfinite(minus))
        throw std::runtime_error("finite_diff_gradcheck: non-finite loss");
      const double numeric = (plus - minus) / (2.0 * e);
      const double denom = std::max({std::abs(analytic_val), std::abs(numeric), 1e-12});
      best = std::min(best, std::abs(analytic_val - numeric) / denom);
      if (best <= 1e-9) break;
    }
    result.max_rel_err = std::max(result.max_rel_err, best);
    ++result.coords_checked;
  }
  return result;
}

}  // namespace collaq
