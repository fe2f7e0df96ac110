#pragma once

// Finite-difference gradient harness shared by the unit and acceptance suites.
// Builds a fresh graph per probe, so it stays independent of any cached state
// in the implementation under test.

#include <cmath>
#include <functional>
#include <vector>

#include "attrmogen/core/graph.hpp"
#include "attrmogen/core/tensor.hpp"

namespace attrmogen::testing {

// Scalar loss as a function of a set of input tensors.
using LossFn = std::function<double(const std::vector<Tensor>&)>;

// Analytic gradients of the same loss for each input.
using GradFn = std::function<std::vector<Tensor>(const std::vector<Tensor>&)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t checked = 0;
};

inline GradCheckResult check_gradients(const LossFn& loss, const GradFn& grads,
                                       std::vector<Tensor> inputs,
                                       double h = 1e-5) {
  const std::vector<Tensor> analytic = grads(inputs);
  GradCheckResult res;
  for (size_t k = 0; k < inputs.size(); ++k) {
    for (int64_t i = 0; i < inputs[k].numel(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + h;
      const double fp = loss(inputs);
      inputs[k][i] = orig - h;
      const double fm = loss(inputs);
      inputs[k][i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = analytic[k][i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      res.max_rel_err = std::max(res.max_rel_err, std::abs(fd - an) / denom);
      ++res.checked;
    }
  }
  return res;
}

// Convenience wrapper for losses expressed directly as graph programs:
// the builder watches each input as a gradient-tracked leaf and returns the
// scalar root.
using GraphLoss =
    std::function<Graph::Id(Graph&, const std::vector<Graph::Id>&)>;

inline GradCheckResult check_graph_gradients(const GraphLoss& build,
                                             const std::vector<Tensor>& inputs,
                                             double h = 1e-5) {
  auto loss = [&](const std::vector<Tensor>& xs) {
    Graph g;
    std::vector<Graph::Id> ids;
    for (const Tensor& t : xs) ids.push_back(g.leaf(t, false));
    return g.value(build(g, ids))[0];
  };
  auto grads = [&](const std::vector<Tensor>& xs) {
    Graph g;
    std::vector<Graph::Id> ids;
    for (const Tensor& t : xs) ids.push_back(g.leaf(t, true));
    g.backward(build(g, ids));
    std::vector<Tensor> out;
    for (size_t k = 0; k < xs.size(); ++k)
      out.push_back(g.has_grad(ids[k]) ? g.grad(ids[k]) : Tensor(xs[k].shape()));
    return out;
  };
  return check_gradients(loss, grads, inputs, h);
}

}  // namespace attrmogen::testing
