#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "attrmogen/core/graph.hpp"
#include "attrmogen/core/optim.hpp"
#include "attrmogen/core/rng.hpp"
#include "attrmogen/core/serialize.hpp"
#include "attrmogen/data/corpus.hpp"
#include "attrmogen/data/motion.hpp"
#include "attrmogen/nn/layers.hpp"

namespace attrmogen {

struct DecoupVqvaeConfig {
  int64_t channels = 16;
  int64_t n_codes = 512;
  int64_t code_dim = 128;
  int64_t width = 64;         // hidden width of encoder/decoder conv stacks
  int64_t downsample = 4;     // power of two; each factor 2 is one strided conv
  int64_t attr_dim = 32;
  int64_t attr_hidden = 64;
  double alpha = 0.01;        // entropy loss weight
  double lambda = 0.5;        // bottleneck loss weight
  double beta_commit = 0.25;
  int residual_levels = 1;    // config hook; only the single-codebook path is built
  int64_t batch_size = 64;
  int64_t iterations = 2000;
  uint64_t seed = 0;
  int64_t dead_code_iterations = 256;
  std::string counterfactual_policy = "exclude_original";
  // Diagnostic: build the counterfactual/entropy subgraphs even when their
  // weights are zero, to verify that zero weights change nothing.
  bool force_decoupling_graph = false;
  AdamConfig optimizer = {2e-4, 0.9, 0.999, 1e-8};

  void validate() const {
    require(alpha >= 0.0 && lambda >= 0.0, ErrorClass::config,
            "alpha and lambda must be >= 0");
    require(beta_commit >= 0.0, ErrorClass::config, "beta_commit must be >= 0");
    require(n_codes >= 1 && code_dim >= 1, ErrorClass::config, "bad codebook dims");
    require(channels >= 1 && width >= 1, ErrorClass::config, "bad widths");
    require(residual_levels == 1, ErrorClass::config,
            "only residual_levels = 1 is supported");
    require(batch_size >= 1 && iterations >= 0, ErrorClass::config,
            "bad batch/iteration counts");
    int64_t d = downsample;
    require(d >= 1, ErrorClass::config, "downsample must be >= 1");
    while (d % 2 == 0) d /= 2;
    require(d == 1, ErrorClass::config, "downsample must be a power of two");
    require(counterfactual_policy == "exclude_original", ErrorClass::config,
            "unknown counterfactual policy: " + counterfactual_policy);
  }
};

inline Json vqvae_config_to_json(const DecoupVqvaeConfig& c) {
  Json j;
  j["channels"] = c.channels;
  j["n_codes"] = c.n_codes;
  j["code_dim"] = c.code_dim;
  j["width"] = c.width;
  j["downsample"] = c.downsample;
  j["attr_dim"] = c.attr_dim;
  j["attr_hidden"] = c.attr_hidden;
  j["alpha"] = c.alpha;
  j["lambda"] = c.lambda;
  j["beta_commit"] = c.beta_commit;
  j["residual_levels"] = c.residual_levels;
  j["batch_size"] = c.batch_size;
  j["iterations"] = c.iterations;
  j["seed"] = c.seed;
  j["dead_code_iterations"] = c.dead_code_iterations;
  j["counterfactual_policy"] = c.counterfactual_policy;
  j["force_decoupling_graph"] = c.force_decoupling_graph;
  j["optimizer"] = Json{{"lr", c.optimizer.lr},
                        {"beta1", c.optimizer.beta1},
                        {"beta2", c.optimizer.beta2},
                        {"eps", c.optimizer.eps}};
  return j;
}

inline DecoupVqvaeConfig vqvae_config_from_json(const Json& j) {
  DecoupVqvaeConfig c;
  c.channels = j.at("channels").get<int64_t>();
  c.n_codes = j.at("n_codes").get<int64_t>();
  c.code_dim = j.at("code_dim").get<int64_t>();
  c.width = j.at("width").get<int64_t>();
  c.downsample = j.at("downsample").get<int64_t>();
  c.attr_dim = j.at("attr_dim").get<int64_t>();
  c.attr_hidden = j.at("attr_hidden").get<int64_t>();
  c.alpha = j.at("alpha").get<double>();
  c.lambda = j.at("lambda").get<double>();
  c.beta_commit = j.at("beta_commit").get<double>();
  c.residual_levels = j.at("residual_levels").get<int>();
  c.batch_size = j.at("batch_size").get<int64_t>();
  c.iterations = j.at("iterations").get<int64_t>();
  c.seed = j.at("seed").get<uint64_t>();
  c.dead_code_iterations = j.at("dead_code_iterations").get<int64_t>();
  c.counterfactual_policy = j.at("counterfactual_policy").get<std::string>();
  c.force_decoupling_graph = j.at("force_decoupling_graph").get<bool>();
  c.optimizer.lr = j.at("optimizer").at("lr").get<double>();
  c.optimizer.beta1 = j.at("optimizer").at("beta1").get<double>();
  c.optimizer.beta2 = j.at("optimizer").at("beta2").get<double>();
  c.optimizer.eps = j.at("optimizer").at("eps").get<double>();
  return c;
}

// --------------------------------------------------------------- quantizer

struct QuantizeResult {
  std::vector<int64_t> tokens;
  Tensor quantized;  // [N, code_dim], rows copied from the codebook
};

// Nearest code per row under L2; exact ties break to the lowest index.
// |r - c|^2 = |r|^2 - 2 r.c + |c|^2 via one GEMM; the |r|^2 term is constant
// per row, so the argmin uses |c|^2 - 2 r.c. Candidates within a small slack
// of the minimum are re-checked with the exact distance so the tie-break
// stays the true lowest-index nearest code.
inline QuantizeResult quantize_rows(const Tensor& rows, const Tensor& codebook) {
  require(codebook.ndim() == 2 && codebook.dim(0) >= 1, ErrorClass::config,
          "empty codebook");
  require(rows.ndim() == 2 && rows.dim(1) == codebook.dim(1), ErrorClass::shape,
          "embedding dim does not match codebook");
  const int64_t n = rows.dim(0), k = codebook.dim(0), d = codebook.dim(1);

  Tensor cross({n, k});
  emap(cross, n, k).noalias() = emap2(rows) * emap2(codebook).transpose();
  std::vector<double> code_sq(static_cast<size_t>(k));
  for (int64_t c = 0; c < k; ++c) {
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j) s += codebook.at(c, j) * codebook.at(c, j);
    code_sq[static_cast<size_t>(c)] = s;
  }

  auto exact_dist = [&](int64_t i, int64_t c) {
    double dist = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double diff = rows.at(i, j) - codebook.at(c, j);
      dist += diff * diff;
    }
    return dist;
  };

  QuantizeResult res;
  res.tokens.resize(static_cast<size_t>(n));
  res.quantized = Tensor({n, d});
  for (int64_t i = 0; i < n; ++i) {
    int64_t best = 0;
    double best_score = code_sq[0] - 2.0 * cross.at(i, 0);
    for (int64_t c = 1; c < k; ++c) {
      const double score = code_sq[static_cast<size_t>(c)] - 2.0 * cross.at(i, c);
      if (score < best_score) {
        best_score = score;
        best = c;
      }
    }
    // Exact re-check over near-minimal candidates (guards rounding ties).
    const double slack = 1e-9 * (1.0 + std::abs(best_score));
    int64_t chosen = -1;
    double chosen_d = 1e300;
    for (int64_t c = 0; c < k; ++c) {
      const double score = code_sq[static_cast<size_t>(c)] - 2.0 * cross.at(i, c);
      if (score <= best_score + slack) {
        const double dist = exact_dist(i, c);
        if (dist < chosen_d) {
          chosen_d = dist;
          chosen = c;
        }
      }
    }
    res.tokens[static_cast<size_t>(i)] = chosen;
    for (int64_t j = 0; j < d; ++j) res.quantized.at(i, j) = codebook.at(chosen, j);
  }
  return res;
}

// ------------------------------------------------------------------ losses

struct VqvaeLossIds {
  Graph::Id total;
  Graph::Id rec;
  Graph::Id embed;
  Graph::Id commit;
};

// L_rec + L_embed + beta * L_commit, each a mean over elements. `s` is the
// encoder output (rows), `s_q` the gathered codebook rows (differentiable
// into the codebook).
inline VqvaeLossIds vqvae_loss_graph(Graph& g, Graph::Id x, Graph::Id x_hat,
                                     Graph::Id s, Graph::Id s_q, double beta) {
  VqvaeLossIds out;
  out.rec = g.mse(x_hat, x);
  out.embed = g.mse(s_q, g.detach(s));
  out.commit = g.scale(g.mse(s, g.detach(s_q)), beta);
  out.total = g.add(g.add(out.rec, out.embed), out.commit);
  return out;
}

// Pure-value counterpart used by tests and by callers that only need numbers.
struct VqvaeLossValues {
  double total = 0.0, rec = 0.0, embed = 0.0, commit = 0.0;
};

inline VqvaeLossValues loss_vqvae(const Tensor& x, const Tensor& x_hat,
                                  const Tensor& s, const Tensor& s_quantized,
                                  double beta) {
  require(x.same_shape(x_hat), ErrorClass::shape, "x / x_hat shape mismatch");
  require(s.same_shape(s_quantized), ErrorClass::shape, "s / s_q shape mismatch");
  VqvaeLossValues v;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double d = x[i] - x_hat[i];
    v.rec += d * d;
  }
  v.rec /= static_cast<double>(x.numel());
  double e = 0.0;
  for (int64_t i = 0; i < s.numel(); ++i) {
    const double d = s[i] - s_quantized[i];
    e += d * d;
  }
  e /= static_cast<double>(s.numel());
  v.embed = e;
  v.commit = beta * e;
  v.total = v.rec + v.embed + v.commit;
  return v;
}

// Entropy loss value from explicit probability rows: sum_i sum_a p ln p,
// always in [-B ln|A|, 0]. Rows must sum to 1 within 1e-6.
inline double entropy_loss_from_probs(const Tensor& probs) {
  require(probs.ndim() == 2, ErrorClass::shape, "probs must be 2-D");
  double loss = 0.0;
  for (int64_t i = 0; i < probs.dim(0); ++i) {
    double row_sum = 0.0;
    for (int64_t j = 0; j < probs.dim(1); ++j) {
      const double p = probs.at(i, j);
      require(p >= -1e-12, ErrorClass::numeric, "negative probability");
      row_sum += p;
      if (p > 0.0) loss += p * std::log(p);
    }
    require(std::abs(row_sum - 1.0) <= 1e-6, ErrorClass::numeric,
            "classifier output row does not sum to 1");
  }
  return loss;
}

// Counterfactual attribute draw: uniform over the joint attribute space
// excluding the original class, so A- != A is guaranteed.
inline AttributeLabel counterfactual_attributes(const AttributeLabel& a,
                                                const AttributeSchema& schema,
                                                Rng& rng) {
  const int size = schema.joint_size();
  require(size >= 2, ErrorClass::policy,
          "attribute space of size 1 admits no counterfactual");
  const int orig = a.joint(schema);
  int64_t draw = rng.uniform_int(size - 1);
  if (draw >= orig) ++draw;
  return AttributeLabel::from_joint(static_cast<int>(draw), schema);
}

struct BottleneckResult {
  double loss = 0.0;
  Tensor similarity;  // D x D cosine matrix
  bool rank_deficient = false;  // D > B: similarity cannot be full rank
};

// || D~ - I ||_F^2 with D~_ij = cosine(S[:,i], S-[:,j]) over the batch
// dimension. Columns with norm <= 1e-8 contribute cosine 0.
inline BottleneckResult bottleneck_loss(const Tensor& s, const Tensor& s_minus) {
  require(s.ndim() == 2 && s.same_shape(s_minus), ErrorClass::shape,
          "bottleneck_loss expects equal B x D arrays");
  const int64_t b = s.dim(0), d = s.dim(1);
  BottleneckResult res;
  res.rank_deficient = d > b;
  auto col_norm = [](const Tensor& t, int64_t j) {
    double ss = 0.0;
    for (int64_t i = 0; i < t.dim(0); ++i) ss += t.at(i, j) * t.at(i, j);
    return std::sqrt(ss);
  };
  res.similarity = Tensor({d, d});
  for (int64_t i = 0; i < d; ++i) {
    const double ni = col_norm(s, i);
    for (int64_t j = 0; j < d; ++j) {
      const double nj = col_norm(s_minus, j);
      double dot = 0.0;
      for (int64_t r = 0; r < b; ++r) dot += s.at(r, i) * s_minus.at(r, j);
      const double cos = (ni > 1e-8 && nj > 1e-8) ? dot / (ni * nj) : 0.0;
      res.similarity.at(i, j) = cos;
      const double c = cos - (i == j ? 1.0 : 0.0);
      res.loss += c * c;
    }
  }
  return res;
}

inline Graph::Id bottleneck_loss_graph(Graph& g, Graph::Id s, Graph::Id s_minus) {
  return g.frob_identity_loss(
      g.matmul_tn(g.l2_normalize_cols(s), g.l2_normalize_cols(s_minus)));
}

// ------------------------------------------------------------------- model

// One-hot encoding of (age, gender) pairs, concatenated per head.
inline Tensor attribute_one_hot(const std::vector<AttributeLabel>& labels,
                                const AttributeSchema& schema) {
  int width = 0;
  for (const auto& h : schema.heads) width += h.cardinality;
  Tensor out({static_cast<int64_t>(labels.size()), width});
  for (size_t i = 0; i < labels.size(); ++i) {
    labels[i].validate(schema);
    out.at(static_cast<int64_t>(i), labels[i].age_group) = 1.0;
    out.at(static_cast<int64_t>(i),
           schema.heads[0].cardinality + labels[i].gender) = 1.0;
  }
  return out;
}

// Two-layer perceptron over concatenated one-hots.
struct AttributeEmbedder {
  LinearLayer fc1, fc2;

  static AttributeEmbedder init(const AttributeSchema& schema, int64_t hidden,
                                int64_t out_dim, Rng& rng) {
    int64_t in = 0;
    for (const auto& h : schema.heads) in += h.cardinality;
    AttributeEmbedder e;
    e.fc1 = LinearLayer::init(in, hidden, rng);
    e.fc2 = LinearLayer::init(hidden, out_dim, rng);
    return e;
  }

  Graph::Id apply(Graph& g, VarMap& vars, Graph::Id one_hot) {
    return fc2.apply(g, vars, g.relu(fc1.apply(g, vars, one_hot)));
  }

  void collect(std::vector<NamedParam>& out, const std::string& prefix) {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

// Temporal conv encoder: each factor-2 stage is a strided conv followed by a
// stride-1 conv, ending in a projection to code_dim.
struct MotionEncoder {
  std::vector<Conv1dLayer> stages;
  Conv1dLayer proj;

  static MotionEncoder init(const DecoupVqvaeConfig& cfg, Rng& rng) {
    MotionEncoder e;
    int64_t cin = cfg.channels;
    int64_t d = cfg.downsample;
    while (d > 1) {
      e.stages.push_back(Conv1dLayer::init(cin, cfg.width, 4, 2, 1, rng));
      e.stages.push_back(Conv1dLayer::init(cfg.width, cfg.width, 3, 1, 1, rng));
      cin = cfg.width;
      d /= 2;
    }
    if (e.stages.empty()) {
      e.stages.push_back(Conv1dLayer::init(cin, cfg.width, 3, 1, 1, rng));
      cin = cfg.width;
    }
    e.proj = Conv1dLayer::init(cin, cfg.code_dim, 3, 1, 1, rng);
    return e;
  }

  // x [B, C, L] -> [B, code_dim, T]
  Graph::Id apply(Graph& g, VarMap& vars, Graph::Id x) {
    Graph::Id h = x;
    for (auto& s : stages) h = g.relu(s.apply(g, vars, h));
    return proj.apply(g, vars, h);
  }

  void collect(std::vector<NamedParam>& out, const std::string& prefix) {
    for (size_t i = 0; i < stages.size(); ++i)
      stages[i].collect(out, prefix + ".stage" + std::to_string(i));
    proj.collect(out, prefix + ".proj");
  }
};

// Mirror of the encoder: stride-1 conv in, transposed convs up, linear out.
struct MotionDecoder {
  Conv1dLayer head;
  std::vector<ConvT1dLayer> ups;
  std::vector<Conv1dLayer> smooths;
  Conv1dLayer out;

  static MotionDecoder init(const DecoupVqvaeConfig& cfg, Rng& rng) {
    MotionDecoder d;
    d.head = Conv1dLayer::init(cfg.code_dim + cfg.attr_dim, cfg.width, 3, 1, 1, rng);
    int64_t f = cfg.downsample;
    while (f > 1) {
      d.ups.push_back(ConvT1dLayer::init(cfg.width, cfg.width, 4, 2, 1, rng));
      d.smooths.push_back(Conv1dLayer::init(cfg.width, cfg.width, 3, 1, 1, rng));
      f /= 2;
    }
    d.out = Conv1dLayer::init(cfg.width, cfg.channels, 3, 1, 1, rng);
    return d;
  }

  // z [B, code_dim + attr_dim, T] -> [B, C, T * downsample]
  Graph::Id apply(Graph& g, VarMap& vars, Graph::Id z) {
    Graph::Id h = g.relu(head.apply(g, vars, z));
    for (size_t i = 0; i < ups.size(); ++i) {
      h = g.relu(ups[i].apply(g, vars, h));
      h = g.relu(smooths[i].apply(g, vars, h));
    }
    return out.apply(g, vars, h);
  }

  void collect(std::vector<NamedParam>& out_params, const std::string& prefix) {
    head.collect(out_params, prefix + ".head");
    for (size_t i = 0; i < ups.size(); ++i) {
      ups[i].collect(out_params, prefix + ".up" + std::to_string(i));
      smooths[i].collect(out_params, prefix + ".smooth" + std::to_string(i));
    }
    out.collect(out_params, prefix + ".out");
  }
};

struct DecoupVqvae {
  DecoupVqvaeConfig config;
  AttributeSchema schema;
  MotionEncoder encoder;
  MotionDecoder decoder;
  AttributeEmbedder attr_embedder;
  Tensor codebook;  // [n_codes, code_dim]

  static DecoupVqvae init(const DecoupVqvaeConfig& cfg, const AttributeSchema& schema,
                          Rng& rng) {
    cfg.validate();
    DecoupVqvae m;
    m.config = cfg;
    m.schema = schema;
    m.encoder = MotionEncoder::init(cfg, rng);
    m.decoder = MotionDecoder::init(cfg, rng);
    m.attr_embedder = AttributeEmbedder::init(schema, cfg.attr_hidden, cfg.attr_dim, rng);
    m.codebook = Tensor::randn({cfg.n_codes, cfg.code_dim}, rng,
                               1.0 / std::sqrt(static_cast<double>(cfg.code_dim)));
    return m;
  }

  std::vector<NamedParam> parameters() {
    std::vector<NamedParam> out;
    encoder.collect(out, "encoder");
    decoder.collect(out, "decoder");
    attr_embedder.collect(out, "attr");
    out.push_back({"codebook", &codebook});
    return out;
  }

  // Builds the decoder input rows: semantic rows + broadcast attribute
  // embedding, reshaped to conv layout.
  Graph::Id decode_rows(Graph& g, VarMap& vars, Graph::Id s_rows,
                        const std::vector<AttributeLabel>& labels, int64_t B,
                        int64_t T) {
    Graph::Id one_hot = g.leaf(attribute_one_hot(labels, schema));
    Graph::Id a_emb = attr_embedder.apply(g, vars, one_hot);
    Graph::Id z_rows = g.concat_bcast_time(s_rows, a_emb, B, T);
    return decoder.apply(g, vars, g.rows_to_bct(z_rows, B, T));
  }
};

// ----------------------------------------------------- inference utilities

// Batch of motions -> conv layout [B, C, L]; motions store [L, C].
inline Tensor motions_to_batch(const std::vector<const MotionSequence*>& motions) {
  require(!motions.empty(), ErrorClass::shape, "empty batch");
  const int64_t L = motions[0]->frames, C = motions[0]->channels;
  Tensor x({static_cast<int64_t>(motions.size()), C, L});
  for (size_t b = 0; b < motions.size(); ++b) {
    require(motions[b]->frames == L && motions[b]->channels == C, ErrorClass::shape,
            "batch motions must share shape");
    for (int64_t t = 0; t < L; ++t)
      for (int64_t c = 0; c < C; ++c)
        x.at(static_cast<int64_t>(b), c, t) = motions[b]->at(t, c);
  }
  return x;
}

// Encoder forward without gradients: returns semantic rows [B*T, code_dim].
inline Tensor encode_rows(DecoupVqvae& model, const Tensor& x_bcl, int64_t* T_out) {
  require(x_bcl.ndim() == 3 && x_bcl.dim(1) == model.config.channels,
          ErrorClass::shape, "encode: channel count mismatch");
  require(x_bcl.dim(2) % model.config.downsample == 0, ErrorClass::shape,
          "encode: length must be divisible by the downsample factor");
  Graph g;
  VarMap vars(g, false);
  Graph::Id s3 = model.encoder.apply(g, vars, g.leaf(x_bcl));
  if (T_out) *T_out = g.value(s3).dim(2);
  return g.value(g.bct_to_rows(s3));
}

// Decoder forward without gradients: tokens (all same T) + labels -> motions
// in the normalized domain, [B, C, L].
inline Tensor decode_tokens(DecoupVqvae& model,
                            const std::vector<std::vector<int64_t>>& tokens,
                            const std::vector<AttributeLabel>& labels) {
  require(!tokens.empty() && tokens.size() == labels.size(), ErrorClass::shape,
          "decode: tokens/labels mismatch");
  const int64_t B = static_cast<int64_t>(tokens.size());
  const int64_t T = static_cast<int64_t>(tokens[0].size());
  std::vector<int64_t> flat;
  flat.reserve(static_cast<size_t>(B * T));
  for (const auto& seq : tokens) {
    require(static_cast<int64_t>(seq.size()) == T, ErrorClass::shape,
            "decode: ragged token sequences");
    for (int64_t tok : seq) {
      require(tok >= 0 && tok < model.config.n_codes, ErrorClass::corpus,
              "token id outside codebook");
      flat.push_back(tok);
    }
  }
  Graph g;
  VarMap vars(g, false);
  Graph::Id s_rows = g.gather_rows(vars(model.codebook), flat);
  Graph::Id x_hat = model.decode_rows(g, vars, s_rows, labels, B, T);
  return g.value(x_hat);
}

}  // namespace attrmogen
