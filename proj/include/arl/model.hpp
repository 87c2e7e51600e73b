#pragma once

// Trainable linear embedding: observation -> projection -> L2 normalize.
// Stands in for a deep backbone at desk scale; the normalization Jacobian
// is applied here when chaining loss gradients back to the projection.

#include <vector>

#include "arl/core.hpp"
#include "arl/rng.hpp"

namespace arl {

struct EmbeddingModel {
  int embed_dim = 0;  // d
  int obs_dim = 0;    // p, d <= p
  std::vector<double> projection;  // row-major d x p

  static EmbeddingModel random_init(int embed_dim, int obs_dim, Rng& rng) {
    if (embed_dim < 2 || obs_dim < embed_dim)
      throw InvalidSpec("EmbeddingModel: need 2 <= d <= p");
    EmbeddingModel m;
    m.embed_dim = embed_dim;
    m.obs_dim = obs_dim;
    m.projection.resize(static_cast<size_t>(embed_dim) * obs_dim);
    double sd = 1.0 / std::sqrt(static_cast<double>(obs_dim));
    for (double& w : m.projection) w = sd * rng.normal();
    return m;
  }

  double& at(int r, int c) { return projection[static_cast<size_t>(r) * obs_dim + c]; }
  double at(int r, int c) const { return projection[static_cast<size_t>(r) * obs_dim + c]; }

  Vec project(const Vec& obs) const {
    if (static_cast<int>(obs.size()) != obs_dim)
      throw DimensionMismatch("project: observation dim");
    Vec e(embed_dim, 0.0);
    for (int r = 0; r < embed_dim; ++r) {
      const double* row = &projection[static_cast<size_t>(r) * obs_dim];
      double s = 0.0;
      for (int c = 0; c < obs_dim; ++c) s += row[c] * obs[c];
      e[r] = s;
    }
    return e;
  }

  // Unit feature; the pre-normalization norm is the sample's feature
  // magnitude used by the selection pipeline.
  UnitVector embed(const Vec& obs, double* magnitude = nullptr) const {
    return normalize(project(obs), magnitude);
  }

  // Chain an ambient gradient w.r.t. the unit feature back onto the
  // projection: g_e = (g_f - (f.g_f) f) / ||e||, grad_P += g_e obs^T.
  void embed_backward(const Vec& obs, const Vec& grad_feature,
                      std::vector<double>& grad_projection) const {
    Vec e = project(obs);
    double n = l2_norm(e);
    if (!(n > kNormEps)) throw DegenerateVector("embed_backward: zero projection");
    Vec f = e;
    scale(1.0 / n, f);
    double fg = dot(f, grad_feature);
    Vec ge(embed_dim);
    for (int r = 0; r < embed_dim; ++r) ge[r] = (grad_feature[r] - fg * f[r]) / n;
    if (grad_projection.size() != projection.size())
      throw DimensionMismatch("embed_backward: grad buffer shape");
    for (int r = 0; r < embed_dim; ++r) {
      double g = ge[r];
      double* row = &grad_projection[static_cast<size_t>(r) * obs_dim];
      for (int c = 0; c < obs_dim; ++c) row[c] += g * obs[c];
    }
  }
};

}  // namespace arl
