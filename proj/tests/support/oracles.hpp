#pragma once

// Independent reference implementations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "pcet/cloud.hpp"
#include "pcet/config.hpp"
#include "pcet/geom.hpp"
#include "pcet/tensor.hpp"

namespace oracle {

using pcet::Box3D;
using pcet::Rng;
using pcet::Vec3;
using pcet::ad::Graph;
using pcet::ad::Parameter;
using pcet::ad::Shape;
using pcet::ad::Tensor;

// O(n^2 k) greedy farthest point sampling, ties to the lowest index.
inline std::vector<std::size_t> brute_fps(const std::vector<Vec3>& pts, std::size_t k, std::size_t start) {
  std::vector<std::size_t> picked{start};
  while (picked.size() < k) {
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (std::find(picked.begin(), picked.end(), i) != picked.end()) continue;
      double d = std::numeric_limits<double>::infinity();
      for (std::size_t j : picked) {
        const double dx = pts[i].x - pts[j].x, dy = pts[i].y - pts[j].y, dz = pts[i].z - pts[j].z;
        d = std::min(d, dx * dx + dy * dy + dz * dz);
      }
      if (d > best) {
        best = d;
        arg = i;
      }
    }
    picked.push_back(arg);
  }
  return picked;
}

inline bool inside(const Vec3& p, const Box3D& b) {
  const double c = std::cos(b.yaw()), s = std::sin(b.yaw());
  const double dx = p.x - b.center().x, dy = p.y - b.center().y;
  const double lx = c * dx + s * dy, ly = -s * dx + c * dy, lz = p.z - b.center().z;
  return std::abs(lx) <= b.size().x / 2 && std::abs(ly) <= b.size().y / 2 && std::abs(lz) <= b.size().z / 2;
}

// IoU by uniform sampling over the axis-aligned hull of both boxes.
inline double monte_carlo_iou(const Box3D& a, const Box3D& b, std::size_t samples, Rng& rng) {
  Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (const Box3D* box : {&a, &b}) {
    for (const Vec3& c : box->corners()) {
      lo = {std::min(lo.x, c.x), std::min(lo.y, c.y), std::min(lo.z, c.z)};
      hi = {std::max(hi.x, c.x), std::max(hi.y, c.y), std::max(hi.z, c.z)};
    }
  }
  std::size_t in_a = 0, in_b = 0, both = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const Vec3 p{rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y), rng.uniform(lo.z, hi.z)};
    const bool ia = inside(p, a), ib = inside(p, b);
    in_a += ia;
    in_b += ib;
    both += ia && ib;
  }
  const double uni = static_cast<double>(in_a + in_b - both);
  return uni > 0 ? static_cast<double>(both) / uni : 0.0;
}

// Random overlapping-ish pair: b is a jittered copy of a.
inline std::pair<Box3D, Box3D> random_box_pair(Rng& rng) {
  const Vec3 size{rng.uniform(0.5, 4.0), rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
  const Box3D a({rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-1, 1)}, size, rng.uniform(-3.1, 3.1));
  const Vec3 size_b{size.x * rng.uniform(0.6, 1.4), size.y * rng.uniform(0.6, 1.4), size.z * rng.uniform(0.6, 1.4)};
  const Box3D b(a.center() + Vec3{rng.normal(0, 0.6), rng.normal(0, 0.6), rng.normal(0, 0.3)}, size_b,
                a.yaw() + rng.normal(0, 0.8));
  return {a, b};
}

inline std::vector<double> random_values(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal(0.0, scale);
  return v;
}

// Relative error between two gradient vectors, measured on their norms.
inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-10});
  return std::sqrt(diff) / denom;
}

struct Input {
  Shape shape;
  std::vector<double> values;
};

using LossFn = std::function<Tensor(Graph&, const std::vector<Tensor>&)>;

// Central-difference steps tried by the checks below. Large steps can cross a
// relu or max-pool switch point, small ones lose digits to cancellation; a
// correct gradient agrees at some step, a wrong one at none.
inline const std::vector<double> kSteps{1e-3, 1e-4, 1e-5, 1e-6, 1e-7};

// Central differences on every input element against Graph::backward.
// Returns the worst per-input relative error (best step per input).
inline double check_inputs(const LossFn& f, const std::vector<Input>& inputs,
                           const std::vector<double>& steps = kSteps) {
  auto evaluate = [&](const std::vector<Input>& in) {
    Graph g;
    std::vector<Tensor> leaves;
    for (const auto& x : in) leaves.push_back(g.variable(x.shape, x.values));
    return f(g, leaves).item();
  };
  Graph g;
  std::vector<Tensor> leaves;
  for (const auto& x : inputs) leaves.push_back(g.variable(x.shape, x.values));
  g.backward(f(g, leaves));

  double worst = 0.0;
  std::vector<Input> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (double h : steps) {
      std::vector<double> numeric(inputs[i].values.size());
      for (std::size_t j = 0; j < numeric.size(); ++j) {
        const double x0 = inputs[i].values[j];
        probe[i].values[j] = x0 + h;
        const double fp = evaluate(probe);
        probe[i].values[j] = x0 - h;
        const double fm = evaluate(probe);
        probe[i].values[j] = x0;
        numeric[j] = (fp - fm) / (2 * h);
      }
      best = std::min(best, relative_error(leaves[i].grad(), numeric));
    }
    worst = std::max(worst, best);
  }
  return worst;
}

// Directional-derivative check over a parameter list: for `directions` random
// unit directions v, compares <grad, v> against the central difference along v.
inline double check_params(const std::function<Tensor(Graph*)>& f, const std::vector<Parameter*>& params,
                           Rng& rng, std::size_t directions = 3, const std::vector<double>& steps = kSteps) {
  for (auto* p : params) p->zero_grad();
  {
    Graph g;
    g.backward(f(&g));
  }
  double worst = 0.0;
  for (std::size_t d = 0; d < directions; ++d) {
    std::vector<std::vector<double>> v;
    double norm = 0;
    for (auto* p : params) {
      v.push_back(random_values(p->value.size(), rng));
      for (double x : v.back()) norm += x * x;
    }
    norm = std::sqrt(norm);
    double analytic = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (std::size_t j = 0; j < v[i].size(); ++j) {
        v[i][j] /= norm;
        analytic += params[i]->grad[j] * v[i][j];
      }
    }
    auto shifted = [&](double s) {
      std::vector<std::vector<double>> saved;
      for (std::size_t i = 0; i < params.size(); ++i) {
        saved.push_back(params[i]->value);
        for (std::size_t j = 0; j < v[i].size(); ++j) params[i]->value[j] += s * v[i][j];
      }
      const double out = f(nullptr).item();
      for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = saved[i];
      return out;
    };
    double best = std::numeric_limits<double>::infinity();
    for (double h : steps) best = std::min(best, relative_error({analytic}, {(shifted(h) - shifted(-h)) / (2 * h)}));
    worst = std::max(worst, best);
  }
  return worst;
}

// Small backbone for fast model-level tests.
inline pcet::ModelConfig tiny_model() {
  pcet::ModelConfig m;
  m.backbone.template_points = 64;
  m.backbone.search_points = 128;
  m.backbone.stages = {{32, 64, 8, {8, 8}}, {16, 32, 8, {8, 8}}};
  return m;
}

// Fresh layers have zero biases, so a row whose hidden units are all dead puts
// the next pre-activation exactly on the relu kink. Random biases move every
// pre-activation off it.
inline void spread_biases(const std::vector<Parameter*>& params, Rng& rng, double scale = 0.1) {
  for (auto* p : params) {
    if (p->name.size() < 5 || p->name.compare(p->name.size() - 5, 5, ".bias") != 0) continue;
    for (double& b : p->value) b = rng.normal(0.0, scale);
  }
}

}  // namespace oracle
