#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mapvec/core/error.hpp"
#include "mapvec/core/matrix.hpp"
#include "mapvec/geometry.hpp"

namespace mapvec {

// Lower bound applied to the argument of the log in point relations.
inline constexpr double kRelLogEps = 1e-4;

struct SpeConfig {
  std::size_t dim = 32;  // encoding width per scalar
  double temperature = 10000.0;

  void validate() const {
    require(dim > 0 && dim % 2 == 0, "SPE dim must be a positive even integer");
    require(temperature > 0.0 && std::isfinite(temperature), "SPE temperature must be positive");
  }
};

// Sinusoidal encoding of each scalar: component 2k is
// sin(v / T^(2k/dim)) and 2k+1 the matching cosine. Scalars are
// concatenated in input order.
inline std::vector<double> spe(std::span<const double> values, const SpeConfig& cfg) {
  cfg.validate();
  std::vector<double> out;
  out.reserve(values.size() * cfg.dim);
  for (double v : values) {
    require_finite(v, "SPE input");
    for (std::size_t k = 0; k < cfg.dim / 2; ++k) {
      const double freq = std::pow(cfg.temperature, static_cast<double>(2 * k) /
                                                         static_cast<double>(cfg.dim));
      const double arg = v / freq;
      out.push_back(std::sin(arg));
      out.push_back(std::cos(arg));
    }
  }
  return out;
}

// N x N grid of fixed-width feature vectors.
struct PairFeatures {
  std::size_t n = 0;
  std::size_t width = 0;
  std::vector<double> values;

  PairFeatures(std::size_t n_, std::size_t width_) : n(n_), width(width_), values(n_ * n_ * width_) {}
  std::span<double> at(std::size_t i, std::size_t j) { return {values.data() + (i * n + j) * width, width}; }
  std::span<const double> at(std::size_t i, std::size_t j) const {
    return {values.data() + (i * n + j) * width, width};
  }
};

// Entry (i,j) = (ln max(x_i - x_j + 1, eps), ln max(y_i - y_j + 1, eps)) over
// normalized coordinates. The diagonal is exactly (0,0).
inline PairFeatures rel_pt(std::span<const Point2> points) {
  const std::size_t n = points.size();
  PairFeatures out(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      auto f = out.at(i, j);
      if (i == j) continue;
      f[0] = std::log(std::max(points[i].x - points[j].x + 1.0, kRelLogEps));
      f[1] = std::log(std::max(points[i].y - points[j].y + 1.0, kRelLogEps));
    }
  }
  return out;
}

// Turning similarity at each point: cosine of its incoming and outgoing
// edges. Polyline endpoints have only one adjacent edge and get 0.
inline std::vector<double> turning_similarity(const EdgeSet& edges, bool closed) {
  const std::size_t ne = edges.size();
  const std::size_t np = closed ? ne : ne + 1;
  std::vector<double> t(np, 0.0);
  for (std::size_t k = 0; k < np; ++k) {
    if (!closed && (k == 0 || k + 1 == np)) continue;
    const std::size_t incoming = (k + ne - 1) % ne;
    const std::size_t outgoing = k % ne;
    t[k] = cosine_similarity(edges.directions[incoming], edges.directions[outgoing]);
  }
  return t;
}

// Pairwise differences t_i - t_j.
inline Matrix rel_dir_from_turning(std::span<const double> t) {
  Matrix out(t.size(), t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (std::size_t j = 0; j < t.size(); ++j) out(i, j) = i == j ? 0.0 : t[i] - t[j];
  }
  return out;
}

inline Matrix rel_dir(const EdgeSet& edges, bool closed) {
  return rel_dir_from_turning(turning_similarity(edges, closed));
}

// Entry (i,j) = sgn(s_i - s_j) * chamfer(points_i, points_j).
inline Matrix rel_sd(std::span<const MapInstance> instances) {
  const std::size_t n = instances.size();
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double diff = instances[i].score - instances[j].score;
      const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      if (sign == 0.0) continue;
      const double cd = chamfer_distance(instances[i].points, instances[j].points);
      out(i, j) = sign * cd;
      out(j, i) = -sign * cd;
    }
  }
  return out;
}

// Projection from encoded relation features to one bias per attention head.
struct RelationWeights {
  Linear projection;  // heads x (scalars * spe.dim)

  std::size_t heads() const { return projection.out_features(); }
};

// One N x N matrix per attention head.
using HeadBias = std::vector<Matrix>;

namespace detail {
inline HeadBias project_relations(const PairFeatures& scalars, const RelationWeights& w,
                                  const SpeConfig& cfg) {
  w.projection.validate("relation projection");
  require(w.projection.in_features() == scalars.width * cfg.dim,
          "relation projection width does not match SPE output");
  const std::size_t n = scalars.n;
  HeadBias out(w.heads(), Matrix(n, n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto encoded = spe(scalars.at(i, j), cfg);
      const auto y = w.projection.apply(encoded);
      for (std::size_t h = 0; h < y.size(); ++h) out[h](i, j) = relu(y[h]);
    }
  }
  return out;
}
}  // namespace detail

// ReLU(Linear(SPE([rel_pt, rel_dir]))) for one instance's normalized points.
inline HeadBias point_relation_bias(std::span<const Point2> points, bool closed,
                                    const RelationWeights& w, const SpeConfig& cfg) {
  const auto pt = rel_pt(points);
  const auto dir = rel_dir(edge_directions(points, closed), closed);
  require(dir.rows() == points.size(), "point relation: edge/point count mismatch");
  PairFeatures scalars(points.size(), 3);
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = 0; j < points.size(); ++j) {
      auto f = scalars.at(i, j);
      f[0] = pt.at(i, j)[0];
      f[1] = pt.at(i, j)[1];
      f[2] = dir(i, j);
    }
  }
  return detail::project_relations(scalars, w, cfg);
}

// ReLU(Linear(SPE(rel_sd))) across instances.
inline HeadBias instance_relation_bias(std::span<const MapInstance> instances,
                                       const RelationWeights& w, const SpeConfig& cfg) {
  const auto sd = rel_sd(instances);
  PairFeatures scalars(instances.size(), 1);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    for (std::size_t j = 0; j < instances.size(); ++j) scalars.at(i, j)[0] = sd(i, j);
  }
  return detail::project_relations(scalars, w, cfg);
}

// ---------------------------------------------------------------------------
// Attention

struct AttentionWeights {
  std::size_t heads = 1;
  Linear q;
  Linear k;
  Linear v;
  Linear out;

  std::size_t d_model() const { return q.in_features(); }

  void validate() const {
    require(heads > 0, "attention needs at least one head");
    const std::size_t d = d_model();
    for (const Linear* l : {&q, &k, &v, &out}) {
      l->validate("attention projection");
      require(l->in_features() == d && l->out_features() == d,
              "attention projections must be d_model x d_model");
    }
    require(d % heads == 0, "d_model must be divisible by the head count");
  }
};

// Multi-head self-attention over the rows of `x`:
//   per head softmax(bias_h + Q_h K_h^T / sqrt(d_k)) V_h,
// heads concatenated and passed through the output projection. Without a
// bias this is plain scaled dot-product attention; both variants share this
// code path.
inline Matrix relation_self_attention(const Matrix& x, const HeadBias* bias,
                                      const AttentionWeights& w) {
  w.validate();
  require(x.cols() == w.d_model(), "attention input width mismatch");
  const std::size_t len = x.rows();
  const std::size_t dk = w.d_model() / w.heads;
  if (bias != nullptr) {
    require(bias->size() == w.heads, "attention bias head count mismatch");
    for (const auto& b : *bias) {
      require(b.rows() == len && b.cols() == len, "attention bias shape mismatch");
    }
  }
  const Matrix q = w.q.apply_rows(x);
  const Matrix k = w.k.apply_rows(x);
  const Matrix v = w.v.apply_rows(x);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  Matrix concat(len, w.d_model());
  std::vector<double> scores(len);
  for (std::size_t h = 0; h < w.heads; ++h) {
    const std::size_t off = h * dk;
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t j = 0; j < len; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dk; ++c) acc += q(i, off + c) * k(j, off + c);
        scores[j] = acc * scale;
        if (bias != nullptr) scores[j] += (*bias)[h](i, j);
      }
      softmax_inplace(scores);
      for (std::size_t c = 0; c < dk; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < len; ++j) acc += scores[j] * v(j, off + c);
        concat(i, off + c) = acc;
      }
    }
  }
  return w.out.apply_rows(concat);
}

inline Matrix relation_self_attention(const Matrix& x, const HeadBias& bias,
                                      const AttentionWeights& w) {
  return relation_self_attention(x, &bias, w);
}

inline Matrix plain_self_attention(const Matrix& x, const AttentionWeights& w) {
  return relation_self_attention(x, nullptr, w);
}

// Attention probabilities of one head, exposed for inspection and tests.
inline Matrix attention_weights(const Matrix& x, const HeadBias* bias, const AttentionWeights& w,
                                std::size_t head) {
  w.validate();
  require(head < w.heads, "head index out of range");
  const std::size_t dk = w.d_model() / w.heads;
  const Matrix q = w.q.apply_rows(x);
  const Matrix k = w.k.apply_rows(x);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  Matrix out(x.rows(), x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto row = out.row(i);
    for (std::size_t j = 0; j < x.rows(); ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < dk; ++c) acc += q(i, head * dk + c) * k(j, head * dk + c);
      row[j] = acc * scale + (bias ? (*bias)[head](i, j) : 0.0);
    }
    softmax_inplace(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Decoupled decoder layer

// Hierarchical queries: n_instances x n_points point queries, row
// i * n_points + k holds point k of instance i.
struct DecoderQuerySet {
  std::size_t n_instances = 100;
  std::size_t n_points = 20;
  Matrix embeddings;                    // (n_instances * n_points) x d_model
  std::vector<Point2> reference_points;  // normalized, one per point query
  std::vector<ClassProbs> class_probs;       // one per instance

  std::size_t d_model() const { return embeddings.cols(); }

  void validate() const {
    require(embeddings.rows() == n_instances * n_points, "query embedding count mismatch");
    require(reference_points.size() == n_instances * n_points, "reference point count mismatch");
    require(class_probs.size() == n_instances, "class probability count mismatch");
    for (const auto& probs : class_probs) {
      for (double p : probs) require(p >= 0.0 && p <= 1.0, "class probabilities must lie in [0,1]");
    }
  }
};

struct FeedForwardWeights {
  Linear fc1;
  Linear fc2;
};

struct DecoderLayerWeights {
  AttentionWeights instance_attention;
  AttentionWeights point_attention;
  FeedForwardWeights ffn;
  LayerNormParams norm1;
  LayerNormParams norm2;
  LayerNormParams norm3;
};

struct RelationBiases {
  std::vector<HeadBias> point;  // one per instance, each n_points x n_points
  HeadBias instance;            // n_instances x n_instances
};

// Builds the point- and instance-level biases from the layer's input
// reference points. Instance scores are the maximum class probability;
// reference polylines are treated as open.
inline RelationBiases compute_relation_biases(const DecoderQuerySet& qs,
                                              const RelationWeights& point_w,
                                              const RelationWeights& instance_w,
                                              const SpeConfig& point_spe,
                                              const SpeConfig& instance_spe) {
  qs.validate();
  RelationBiases out;
  std::vector<MapInstance> instances(qs.n_instances);
  for (std::size_t i = 0; i < qs.n_instances; ++i) {
    std::span<const Point2> pts(qs.reference_points.data() + i * qs.n_points, qs.n_points);
    out.point.push_back(point_relation_bias(pts, false, point_w, point_spe));
    instances[i].points.assign(pts.begin(), pts.end());
    instances[i].score = *std::max_element(qs.class_probs[i].begin(), qs.class_probs[i].end());
  }
  out.instance = instance_relation_bias(instances, instance_w, instance_spe);
  return out;
}

namespace detail {
inline void add_and_norm(Matrix& x, const Matrix& delta, const LayerNormParams& norm) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    const auto d = delta.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += d[c];
    layer_norm_inplace(row, norm);
  }
}
}  // namespace detail

// One decoder layer without cross-attention:
//   1. instance-level attention: for each point slot k, the n_instances
//      queries attend to each other with the instance bias;
//   2. point-level attention: within each instance, its n_points queries
//      attend to each other with that instance's point bias;
//   3. feed-forward block.
// Each step is followed by a residual connection and layer normalization.
// Null bias pointers give the vanilla decoupled layer.
inline DecoderQuerySet decoupled_decoder_layer(const DecoderQuerySet& qs,
                                               const std::vector<HeadBias>* point_bias,
                                               const HeadBias* instance_bias,
                                               const DecoderLayerWeights& w) {
  qs.validate();
  const std::size_t ni = qs.n_instances;
  const std::size_t np = qs.n_points;
  const std::size_t d = qs.d_model();
  if (point_bias != nullptr) require(point_bias->size() == ni, "one point bias per instance");

  DecoderQuerySet out = qs;
  Matrix& x = out.embeddings;

  Matrix delta(ni * np, d);
  for (std::size_t k = 0; k < np; ++k) {
    Matrix seq(ni, d);
    for (std::size_t i = 0; i < ni; ++i) {
      std::copy_n(x.row(i * np + k).begin(), d, seq.row(i).begin());
    }
    const Matrix y = relation_self_attention(seq, instance_bias, w.instance_attention);
    for (std::size_t i = 0; i < ni; ++i) {
      std::copy_n(y.row(i).begin(), d, delta.row(i * np + k).begin());
    }
  }
  detail::add_and_norm(x, delta, w.norm1);

  for (std::size_t i = 0; i < ni; ++i) {
    Matrix seq(np, d);
    for (std::size_t k = 0; k < np; ++k) {
      std::copy_n(x.row(i * np + k).begin(), d, seq.row(k).begin());
    }
    const HeadBias* bias = point_bias != nullptr ? &(*point_bias)[i] : nullptr;
    const Matrix y = relation_self_attention(seq, bias, w.point_attention);
    for (std::size_t k = 0; k < np; ++k) {
      std::copy_n(y.row(k).begin(), d, delta.row(i * np + k).begin());
    }
  }
  detail::add_and_norm(x, delta, w.norm2);

  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto hidden = w.ffn.fc1.apply(x.row(r));
    for (double& h : hidden) h = relu(h);
    const auto y = w.ffn.fc2.apply(hidden);
    std::copy(y.begin(), y.end(), delta.row(r).begin());
  }
  detail::add_and_norm(x, delta, w.norm3);
  return out;
}

inline DecoderQuerySet decoupled_decoder_layer(const DecoderQuerySet& qs, const RelationBiases& biases,
                                               const DecoderLayerWeights& w) {
  return decoupled_decoder_layer(qs, &biases.point, &biases.instance, w);
}

}  // namespace mapvec
