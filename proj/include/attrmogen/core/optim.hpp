#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "attrmogen/core/graph.hpp"
#include "attrmogen/core/tensor.hpp"

namespace attrmogen {

// A named trainable tensor owned by a model struct.
struct NamedParam {
  std::string name;
  Tensor* tensor;
};

// Maps parameter tensors into a per-step graph as gradient-tracked leaves.
// `operator()` registers on first use and reuses the id afterwards.
class VarMap {
 public:
  VarMap(Graph& g, bool trainable) : g_(&g), trainable_(trainable) {}

  Graph::Id operator()(Tensor& t) {
    auto it = ids_.find(&t);
    if (it != ids_.end()) return it->second;
    const Graph::Id id = g_->leaf(t, trainable_);
    ids_.emplace(&t, id);
    return id;
  }

  bool has(const Tensor& t) const { return ids_.count(const_cast<Tensor*>(&t)) > 0; }

  Graph::Id id_of(const Tensor& t) const {
    auto it = ids_.find(const_cast<Tensor*>(&t));
    require(it != ids_.end(), ErrorClass::parameter, "tensor not watched");
    return it->second;
  }

  // Gradient accumulated for a watched tensor, if any flowed.
  const Tensor* grad_of(const Tensor& t) const {
    auto it = ids_.find(const_cast<Tensor*>(&t));
    if (it == ids_.end()) return nullptr;
    if (!g_->has_grad(it->second)) return nullptr;
    return &g_->grad(it->second);
  }

 private:
  Graph* g_;
  bool trainable_;
  std::unordered_map<Tensor*, Graph::Id> ids_;
};

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with per-parameter moment buffers keyed by parameter name.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  int64_t step_count() const { return t_; }

  // One update over `params` with gradients looked up through `vars`.
  // Parameters with no accumulated gradient are skipped.
  void step(const std::vector<NamedParam>& params, const VarMap& vars) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const NamedParam& p : params) {
      const Tensor* grad = vars.grad_of(*p.tensor);
      if (!grad) continue;
      State& st = state_for(p.name, *p.tensor);
      Tensor& w = *p.tensor;
      for (int64_t i = 0; i < w.numel(); ++i) {
        const double gh = (*grad)[i];
        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gh;
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gh * gh;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  // Clears moments for one row of a 2-D parameter (codebook re-seeding).
  void reset_row(const std::string& name, const Tensor& t, int64_t row) {
    auto it = state_.find(name);
    if (it == state_.end()) return;
    const int64_t d = t.dim(1);
    for (int64_t j = 0; j < d; ++j) {
      it->second.m[row * d + j] = 0.0;
      it->second.v[row * d + j] = 0.0;
    }
  }

 private:
  struct State {
    Tensor m;
    Tensor v;
  };

  State& state_for(const std::string& name, const Tensor& t) {
    auto it = state_.find(name);
    if (it == state_.end()) {
      State st;
      st.m = Tensor(t.shape());
      st.v = Tensor(t.shape());
      it = state_.emplace(name, std::move(st)).first;
    }
    return it->second;
  }

  AdamConfig cfg_;
  int64_t t_ = 0;
  std::unordered_map<std::string, State> state_;
};

}  // namespace attrmogen
