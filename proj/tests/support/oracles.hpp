#pragma once

// Test-side oracles, independent of the library's implementation paths:
// brute-force enumeration over action sequences, Manhattan distances, and
// plain-loop recomputations of the network forwards.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "collaq/mdp.hpp"
#include "collaq/nnet.hpp"
#include "collaq/site_value.hpp"

namespace oracles {

/// Optimal value by enumerating every action sequence of length `horizon`,
/// with rewards paid on every visit (plain MDP semantics).
inline double brute_force_value(const collaq::TabularMdp& mdp, const collaq::RewardVector& r,
                                int state, int step = 0) {
  if (step >= mdp.horizon) return 0.0;
  double best = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < mdp.num_actions; ++a) {
    const double v =
        r.at(state, a) + mdp.discount * brute_force_value(mdp, r, mdp.next_state(state, a), step + 1);
    best = std::max(best, v);
  }
  return best;
}

/// Optimal value by sequence enumeration when each site pays at most once.
inline double brute_force_site_value(const collaq::TabularMdp& mdp,
                                     const std::vector<collaq::SiteAmount>& sites, int state,
                                     std::uint32_t remaining, int step = 0) {
  if (step >= mdp.horizon) return 0.0;
  double best = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < mdp.num_actions; ++a) {
    double reward = 0.0;
    std::uint32_t next_mask = remaining;
    for (std::size_t m = 0; m < sites.size(); ++m) {
      if (sites[m].state == state && sites[m].action == a && (remaining & (1u << m))) {
        reward = sites[m].amount;
        next_mask = remaining & ~(1u << m);
        break;
      }
    }
    const double v = reward + mdp.discount * brute_force_site_value(
                                  mdp, sites, mdp.next_state(state, a), next_mask, step + 1);
    best = std::max(best, v);
  }
  return best;
}

inline int manhattan(int width, int cell_a, int cell_b) {
  return std::abs(cell_a / width - cell_b / width) + std::abs(cell_a % width - cell_b % width);
}

/// Plain-loop MLP forward on a single column (affine + relu, affine output).
inline std::vector<double> naive_mlp(const collaq::ParamStore<double>& params,
                                     const std::string& prefix, std::vector<double> x) {
  int layer = 0;
  while (params.contains(prefix + "." + std::to_string(layer) + ".W")) {
    const auto& w = params.at(prefix + "." + std::to_string(layer) + ".W");
    const auto& b = params.at(prefix + "." + std::to_string(layer) + ".b");
    std::vector<double> y(w.rows());
    for (int r = 0; r < w.rows(); ++r) {
      double acc = b(r, 0);
      for (int c = 0; c < w.cols(); ++c) acc += w(r, c) * x[c];
      y[r] = acc;
    }
    const bool last = !params.contains(prefix + "." + std::to_string(layer + 1) + ".W");
    if (!last) {
      for (double& v : y) v = std::max(v, 0.0);
    }
    x = std::move(y);
    ++layer;
  }
  return x;
}

/// Plain-loop stacked attention for one query and token list.
inline std::vector<double> naive_attention(const collaq::ParamStore<double>& params,
                                           const std::string& prefix,
                                           const collaq::AttentionSpec& spec,
                                           std::vector<double> q,
                                           const std::vector<std::vector<double>>& tokens) {
  const int d = spec.model_dim;
  const int dh = d / spec.num_heads;
  if (tokens.empty()) return std::vector<double>(d, 0.0);
  for (int l = 0; l < spec.num_layers; ++l) {
    const std::string base = prefix + "." + std::to_string(l);
    const auto& wq = params.at(base + ".Wq");
    const auto& wk = params.at(base + ".Wk");
    const auto& wv = params.at(base + ".Wv");
    const auto& wo = params.at(base + ".Wo");
    const auto& bo = params.at(base + ".bo");
    auto project = [&](const Eigen::MatrixXd& w, const std::vector<double>& v) {
      std::vector<double> out(d, 0.0);
      for (int r = 0; r < d; ++r) {
        for (int c = 0; c < d; ++c) out[r] += w(r, c) * v[c];
      }
      return out;
    };
    const std::vector<double> qp = project(wq, q);
    std::vector<std::vector<double>> kp, vp;
    for (const auto& t : tokens) {
      kp.push_back(project(wk, t));
      vp.push_back(project(wv, t));
    }
    std::vector<double> ctx(d, 0.0);
    for (int h = 0; h < spec.num_heads; ++h) {
      std::vector<double> scores(tokens.size(), 0.0);
      for (std::size_t j = 0; j < tokens.size(); ++j) {
        for (int r = h * dh; r < (h + 1) * dh; ++r) scores[j] += qp[r] * kp[j][r];
        scores[j] /= std::sqrt(static_cast<double>(dh));
      }
      const double m = *std::max_element(scores.begin(), scores.end());
      double z = 0.0;
      std::vector<double> w(tokens.size());
      for (std::size_t j = 0; j < tokens.size(); ++j) {
        w[j] = std::exp(scores[j] - m);
        z += w[j];
      }
      for (std::size_t j = 0; j < tokens.size(); ++j) {
        for (int r = h * dh; r < (h + 1) * dh; ++r) ctx[r] += (w[j] / z) * vp[j][r];
      }
    }
    std::vector<double> next(d);
    for (int r = 0; r < d; ++r) {
      double acc = q[r] + bo(r, 0);
      for (int c = 0; c < d; ++c) acc += wo(r, c) * ctx[c];
      next[r] = std::max(acc, 0.0);
    }
    q = std::move(next);
  }
  return q;
}

/// Full collab stack on one observation, by plain loops.
inline std::vector<double> naive_collab(const collaq::ParamStore<double>& params,
                                        const collaq::NetworkSpec& spec,
                                        const std::vector<double>& o_alone,
                                        const std::vector<std::vector<double>>& tokens) {
  const std::vector<double> enc = naive_mlp(params, "cenc", o_alone);
  std::vector<std::vector<double>> embeddings;
  for (const auto& t : tokens) embeddings.push_back(naive_mlp(params, "tenc", t));
  const std::vector<double> attn = naive_attention(params, "attn", spec.attention, enc, embeddings);
  std::vector<double> head_in = enc;
  head_in.insert(head_in.end(), attn.begin(), attn.end());
  return naive_mlp(params, "head", head_in);
}

}  // namespace oracles
