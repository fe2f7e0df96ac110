#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "attrmogen/core/graph.hpp"
#include "attrmogen/core/optim.hpp"
#include "attrmogen/core/rng.hpp"
#include "attrmogen/data/motion.hpp"
#include "attrmogen/nn/layers.hpp"

namespace attrmogen {

// Conv trunk + temporal mean pooling + linear head over the joint attribute
// classes. The same struct serves as the proxy network h(A|S) inside VQVAE
// training (stride-1 trunk on embeddings) and as the evaluation-side
// classifier on raw motions (strided trunk).
struct AttrClassifier {
  std::vector<Conv1dLayer> trunk;
  LinearLayer head;
  std::string schema_id;
  int joint_classes = 0;

  // Proxy over semantic embeddings [B, in_channels, T].
  static AttrClassifier for_embeddings(int64_t in_channels, int64_t width,
                                       const AttributeSchema& schema, Rng& rng) {
    AttrClassifier c;
    c.schema_id = schema.id;
    c.joint_classes = schema.joint_size();
    c.trunk.push_back(Conv1dLayer::init(in_channels, width, 3, 1, 1, rng));
    c.trunk.push_back(Conv1dLayer::init(width, width, 3, 1, 1, rng));
    c.head = LinearLayer::init(width, c.joint_classes, rng);
    return c;
  }

  // Classifier over raw motions [B, channels, L]; trunk mirrors the VQVAE
  // encoder topology (two strided stages).
  static AttrClassifier for_motions(int64_t channels, int64_t width,
                                    const AttributeSchema& schema, Rng& rng) {
    AttrClassifier c;
    c.schema_id = schema.id;
    c.joint_classes = schema.joint_size();
    c.trunk.push_back(Conv1dLayer::init(channels, width, 4, 2, 1, rng));
    c.trunk.push_back(Conv1dLayer::init(width, width, 3, 1, 1, rng));
    c.trunk.push_back(Conv1dLayer::init(width, width, 4, 2, 1, rng));
    c.trunk.push_back(Conv1dLayer::init(width, width, 3, 1, 1, rng));
    c.head = LinearLayer::init(width, c.joint_classes, rng);
    return c;
  }

  std::vector<NamedParam> parameters() {
    std::vector<NamedParam> out;
    for (size_t i = 0; i < trunk.size(); ++i)
      trunk[i].collect(out, "proxy.trunk" + std::to_string(i));
    head.collect(out, "proxy.head");
    return out;
  }

  Graph::Id logits(Graph& g, VarMap& vars, Graph::Id x_bct) {
    Graph::Id h = x_bct;
    for (auto& layer : trunk) h = g.relu(layer.apply(g, vars, h));
    return head.apply(g, vars, g.mean_last(h));
  }

  Graph::Id probs(Graph& g, VarMap& vars, Graph::Id x_bct) {
    return g.softmax_rows(logits(g, vars, x_bct));
  }

  // Deterministic softmax probabilities, no gradients.
  Tensor classify(const Tensor& x_bct) {
    Graph g;
    VarMap vars(g, false);
    return g.value(probs(g, vars, g.leaf(x_bct)));
  }

  // One optimizer step on mean cross-entropy against joint labels; the input
  // batch is a plain value, so nothing upstream can receive gradients.
  double update(const Tensor& x_bct, const std::vector<int64_t>& labels, Adam& opt) {
    for (int64_t y : labels)
      require(y >= 0 && y < joint_classes, ErrorClass::label, "label out of range");
    Graph g;
    VarMap vars(g, true);
    Graph::Id ce = g.cross_entropy_rows(logits(g, vars, g.leaf(x_bct)), labels);
    const double value = g.value(ce)[0];
    g.backward(ce);
    opt.step(parameters(), vars);
    return value;
  }
};

// ------------------------------------------------------------ linear probe

struct ProbeResult {
  double gender_accuracy = 0.0;
  double age_accuracy = 0.0;
};

namespace detail {

// Multinomial logistic regression trained full-batch; deterministic.
inline std::vector<int64_t> linear_head_predict(const Tensor& train_x,
                                                const std::vector<int64_t>& train_y,
                                                const Tensor& test_x, int64_t classes,
                                                int iterations = 300) {
  const int64_t d = train_x.dim(1);
  Tensor w({classes, d});
  Tensor b({classes});
  std::vector<NamedParam> params = {{"probe.w", &w}, {"probe.b", &b}};
  Adam opt({0.05, 0.9, 0.999, 1e-8});
  for (int it = 0; it < iterations; ++it) {
    Graph g;
    VarMap vars(g, true);
    Graph::Id ce =
        g.cross_entropy_rows(g.affine(g.leaf(train_x), vars(w), vars(b)), train_y);
    g.backward(ce);
    opt.step(params, vars);
  }
  Graph g;
  VarMap vars(g, false);
  const Tensor& logits = g.value(g.affine(g.leaf(test_x), vars(w), vars(b)));
  std::vector<int64_t> pred(static_cast<size_t>(test_x.dim(0)));
  for (int64_t i = 0; i < logits.dim(0); ++i) {
    int64_t best = 0;
    for (int64_t j = 1; j < logits.dim(1); ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    pred[static_cast<size_t>(i)] = best;
  }
  return pred;
}

inline double accuracy(const std::vector<int64_t>& pred,
                       const std::vector<int64_t>& truth) {
  require(pred.size() == truth.size() && !pred.empty(), ErrorClass::shape,
          "accuracy over empty or mismatched sets");
  int64_t hit = 0;
  for (size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace detail

// Fresh linear classifiers on frozen embeddings; accuracy per attribute on
// the held-out rows. A conservative measure of linearly decodable attribute
// information.
inline ProbeResult linear_probe(const Tensor& train_embeddings,
                                const std::vector<AttributeLabel>& train_labels,
                                const Tensor& test_embeddings,
                                const std::vector<AttributeLabel>& test_labels,
                                const AttributeSchema& schema) {
  require(train_embeddings.dim(0) == static_cast<int64_t>(train_labels.size()),
          ErrorClass::shape, "probe train size mismatch");
  require(test_embeddings.dim(0) == static_cast<int64_t>(test_labels.size()),
          ErrorClass::shape, "probe test size mismatch");
  auto head_labels = [](const std::vector<AttributeLabel>& ls, bool age) {
    std::vector<int64_t> out(ls.size());
    for (size_t i = 0; i < ls.size(); ++i)
      out[i] = age ? ls[i].age_group : ls[i].gender;
    return out;
  };
  for (bool age : {false, true}) {
    std::vector<int64_t> y = head_labels(train_labels, age);
    bool all_same = true;
    for (int64_t v : y) all_same = all_same && v == y[0];
    require(!all_same, ErrorClass::config,
            "probe training split is single-class for one attribute");
  }
  ProbeResult res;
  res.gender_accuracy = detail::accuracy(
      detail::linear_head_predict(train_embeddings, head_labels(train_labels, false),
                                  test_embeddings, schema.heads[1].cardinality),
      head_labels(test_labels, false));
  res.age_accuracy = detail::accuracy(
      detail::linear_head_predict(train_embeddings, head_labels(train_labels, true),
                                  test_embeddings, schema.heads[0].cardinality),
      head_labels(test_labels, true));
  return res;
}

}  // namespace attrmogen
