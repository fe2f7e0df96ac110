#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "attrmogen/classifier/proxy.hpp"
#include "attrmogen/core/optim.hpp"
#include "attrmogen/core/rng.hpp"
#include "attrmogen/core/serialize.hpp"
#include "attrmogen/data/corpus.hpp"
#include "attrmogen/vqvae/vqvae.hpp"

namespace attrmogen {

struct LossRecord {
  double total = 0.0;
  double rec = 0.0;
  double embed = 0.0;
  double commit = 0.0;
  double entropy = 0.0;
  double bottleneck = 0.0;
};

// Recomputes the overall loss with the exact association order used during
// training; the additivity invariant compares bit-for-bit against `total`.
inline double overall_from_terms(const LossRecord& r, double alpha, double lambda,
                                 bool decoupled) {
  const double vq = (r.rec + r.embed) + r.commit;
  if (!decoupled) return vq;
  return (vq + alpha * r.entropy) + lambda * r.bottleneck;
}

inline std::string corpus_key(int64_t channels, int64_t frames,
                              const AttributeSchema& schema) {
  Json j;
  j["channels"] = channels;
  j["frames"] = frames;
  j["schema_id"] = schema.id;
  j["joint"] = schema.joint_size();
  return config_hash(j);
}

struct VqvaeCheckpoint {
  static constexpr int kFormatVersion = 1;

  DecoupVqvaeConfig config;
  AttributeSchema schema;
  ChannelStats stats;
  int64_t frames = 0;
  DecoupVqvae model;
  AttrClassifier proxy;
  std::vector<LossRecord> history;
  Json rng_states;
  std::string config_hash_hex;

  std::string schema_key() const {
    Json j;
    j["corpus"] = corpus_key(config.channels, frames, schema);
    j["downsample"] = config.downsample;
    j["code_dim"] = config.code_dim;
    j["n_codes"] = config.n_codes;
    return config_hash(j);
  }

  std::string corpus_compat_key() const {
    return corpus_key(config.channels, frames, schema);
  }

  void save(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    NamedTensors nt;
    blob_add_params(nt, model.parameters());
    blob_add_params(nt, proxy.parameters());
    nt.save(dir / "weights.bin");

    Json j;
    j["format_version"] = kFormatVersion;
    j["kind"] = "vqvae";
    j["config"] = vqvae_config_to_json(config);
    j["config_hash"] = config_hash_hex;
    j["schema"] = Json::object();
    j["schema"]["id"] = schema.id;
    j["schema"]["heads"] = Json::array();
    for (const auto& h : schema.heads)
      j["schema"]["heads"].push_back(Json{{"name", h.name}, {"cardinality", h.cardinality}});
    j["frames"] = frames;
    j["schema_key"] = schema_key();
    j["rng_states"] = rng_states;
    if (stats.computed) {
      j["channel_stats"] = Json::object();
      j["channel_stats"]["mean"] = stats.mean;
      j["channel_stats"]["std"] = stats.std;
      Json cl = Json::array();
      for (bool b : stats.clamped) cl.push_back(b);
      j["channel_stats"]["clamped"] = cl;
    }
    Json hist = Json::array();
    for (const LossRecord& r : history)
      hist.push_back(Json::array(
          {r.total, r.rec, r.embed, r.commit, r.entropy, r.bottleneck}));
    j["history"] = hist;
    write_json_file(dir / "checkpoint.json", j);
  }

  static VqvaeCheckpoint load(const std::filesystem::path& dir) {
    const Json j = read_json_file(dir / "checkpoint.json");
    require(j.at("format_version").get<int>() == kFormatVersion,
            ErrorClass::version_mismatch, "unsupported checkpoint version");
    require(j.at("kind").get<std::string>() == "vqvae", ErrorClass::schema,
            "checkpoint kind is not vqvae");
    VqvaeCheckpoint ck;
    ck.config = vqvae_config_from_json(j.at("config"));
    ck.config_hash_hex = j.at("config_hash").get<std::string>();
    ck.schema.id = j.at("schema").at("id").get<std::string>();
    ck.schema.heads.clear();
    for (const Json& h : j.at("schema").at("heads"))
      ck.schema.heads.push_back(
          {h.at("name").get<std::string>(), h.at("cardinality").get<int>()});
    ck.frames = j.at("frames").get<int64_t>();
    ck.rng_states = j.at("rng_states");
    if (j.contains("channel_stats")) {
      ck.stats.mean = j.at("channel_stats").at("mean").get<std::vector<double>>();
      ck.stats.std = j.at("channel_stats").at("std").get<std::vector<double>>();
      ck.stats.clamped.clear();
      for (const Json& b : j.at("channel_stats").at("clamped"))
        ck.stats.clamped.push_back(b.get<bool>());
      ck.stats.computed = true;
    }
    for (const Json& r : j.at("history")) {
      LossRecord lr;
      lr.total = r.at(0).get<double>();
      lr.rec = r.at(1).get<double>();
      lr.embed = r.at(2).get<double>();
      lr.commit = r.at(3).get<double>();
      lr.entropy = r.at(4).get<double>();
      lr.bottleneck = r.at(5).get<double>();
      ck.history.push_back(lr);
    }

    Rng dummy(0);
    ck.model = DecoupVqvae::init(ck.config, ck.schema, dummy);
    ck.proxy = AttrClassifier::for_embeddings(ck.config.code_dim, ck.config.width,
                                              ck.schema, dummy);
    NamedTensors nt = NamedTensors::load(dir / "weights.bin");
    blob_load_params(nt, ck.model.parameters());
    blob_load_params(nt, ck.proxy.parameters());
    return ck;
  }
};

namespace detail {

inline void check_finite_loss(double v, const char* term, int64_t iteration) {
  if (std::isnan(v) || std::isinf(v))
    fail(ErrorClass::numeric, std::string("NaN/Inf in ") + term + " at iteration " +
                                  std::to_string(iteration));
}

}  // namespace detail

// Alternating optimization: each iteration updates encoder/decoder/codebook/
// attribute-embedder on L_vqvae + alpha L_entropy + lambda L_bottleneck, then
// updates the proxy classifier on cross-entropy with the embeddings detached.
inline VqvaeCheckpoint train_decoup_vqvae(const DecoupVqvaeConfig& config,
                                          const Corpus& corpus) {
  config.validate();
  require(corpus.normalized, ErrorClass::config,
          "train_decoup_vqvae expects a normalized corpus");
  require(corpus.channels == config.channels, ErrorClass::shape,
          "corpus channels do not match config");
  const std::vector<size_t> train = corpus.split_indices(Split::train);
  require(!train.empty(), ErrorClass::config, "training split is empty");
  const int64_t frames = corpus.motions[train[0]].frames;
  for (size_t i : train)
    require(corpus.motions[i].frames == frames, ErrorClass::shape,
            "training records must share a frame count");
  require(frames % config.downsample == 0, ErrorClass::shape,
          "frame count must be divisible by the downsample factor");

  Rng init_rng(Rng::derive_seed(config.seed, 1));
  Rng batch_rng(Rng::derive_seed(config.seed, 2));
  Rng cf_rng(Rng::derive_seed(config.seed, 3));
  Rng reseed_rng(Rng::derive_seed(config.seed, 4));

  VqvaeCheckpoint ck;
  ck.config = config;
  ck.schema = corpus.schema;
  ck.stats = corpus.stats;
  ck.frames = frames;
  ck.model = DecoupVqvae::init(config, corpus.schema, init_rng);
  ck.proxy = AttrClassifier::for_embeddings(config.code_dim, config.width,
                                            corpus.schema, init_rng);
  ck.config_hash_hex = config_hash(vqvae_config_to_json(config));

  Adam opt_model(config.optimizer);
  Adam opt_proxy(config.optimizer);

  const bool decoupled =
      config.alpha != 0.0 || config.lambda != 0.0 || config.force_decoupling_graph;
  const int64_t B = config.batch_size;
  const int64_t T = frames / config.downsample;
  std::vector<int64_t> last_used(static_cast<size_t>(config.n_codes), 0);

  for (int64_t it = 1; it <= config.iterations; ++it) {
    // 1. Sample a batch (uniform with replacement over the training split).
    std::vector<const MotionSequence*> batch(static_cast<size_t>(B));
    std::vector<AttributeLabel> labels(static_cast<size_t>(B));
    std::vector<int64_t> joint_labels(static_cast<size_t>(B));
    for (int64_t b = 0; b < B; ++b) {
      const size_t idx =
          train[static_cast<size_t>(batch_rng.uniform_int(static_cast<int64_t>(train.size())))];
      batch[static_cast<size_t>(b)] = &corpus.motions[idx];
      labels[static_cast<size_t>(b)] = corpus.records[idx].attributes;
      joint_labels[static_cast<size_t>(b)] =
          corpus.records[idx].attributes.joint(corpus.schema);
    }
    const Tensor x_value = motions_to_batch(batch);

    // 2.-5. Joint update of encoder, decoder, codebook, attribute embedder.
    Graph g;
    VarMap vars(g, true);        // model parameters
    VarMap frozen(g, false);     // proxy parameters: grads flow through, not into
    Graph::Id x = g.leaf(x_value);
    Graph::Id s3 = ck.model.encoder.apply(g, vars, x);
    Graph::Id s_rows = g.bct_to_rows(s3);

    QuantizeResult q = quantize_rows(g.value(s_rows), ck.model.codebook);
    Graph::Id q_rows = g.gather_rows(vars(ck.model.codebook), q.tokens);
    Graph::Id s_ste = g.straight_through(s_rows, g.value(q_rows));

    Graph::Id x_hat = ck.model.decode_rows(g, vars, s_ste, labels, B, T);
    VqvaeLossIds vq = vqvae_loss_graph(g, x, x_hat, s_rows, q_rows, config.beta_commit);

    LossRecord rec;
    rec.rec = g.value(vq.rec)[0];
    rec.embed = g.value(vq.embed)[0];
    rec.commit = g.value(vq.commit)[0];
    detail::check_finite_loss(rec.rec, "L_rec", it);
    detail::check_finite_loss(rec.embed, "L_embed", it);
    detail::check_finite_loss(rec.commit, "L_commit", it);

    Graph::Id total = vq.total;
    if (decoupled) {
      // Entropy: proxy probabilities on the pre-quantization embedding.
      Graph::Id probs = ck.proxy.probs(g, frozen, s3);
      Graph::Id entropy = g.xlogx_sum(probs);

      // Counterfactual: decode the same quantized semantics under resampled
      // attributes, re-encode, and align pooled embeddings.
      std::vector<AttributeLabel> cf_labels(static_cast<size_t>(B));
      for (int64_t b = 0; b < B; ++b)
        cf_labels[static_cast<size_t>(b)] = counterfactual_attributes(
            labels[static_cast<size_t>(b)], corpus.schema, cf_rng);
      Graph::Id x_minus = ck.model.decode_rows(g, vars, s_ste, cf_labels, B, T);
      Graph::Id s_minus3 = ck.model.encoder.apply(g, vars, x_minus);
      Graph::Id bottleneck =
          bottleneck_loss_graph(g, g.mean_last(s3), g.mean_last(s_minus3));

      rec.entropy = g.value(entropy)[0];
      rec.bottleneck = g.value(bottleneck)[0];
      detail::check_finite_loss(rec.entropy, "L_entropy", it);
      detail::check_finite_loss(rec.bottleneck, "L_bottleneck", it);

      total = g.add(g.add(vq.total, g.scale(entropy, config.alpha)),
                    g.scale(bottleneck, config.lambda));
    }
    rec.total = g.value(total)[0];
    detail::check_finite_loss(rec.total, "L_overall", it);

    g.backward(total);
    opt_model.step(ck.model.parameters(), vars);

    // 6. Proxy classifier step on cross-entropy, embeddings detached.
    ck.proxy.update(g.value(s3), joint_labels, opt_proxy);

    // Dead-code handling: codes idle for too long restart at a random
    // encoder output row from the current batch.
    for (int64_t tok : q.tokens) last_used[static_cast<size_t>(tok)] = it;
    if (config.dead_code_iterations > 0) {
      const Tensor& rows = g.value(s_rows);
      for (int64_t c = 0; c < config.n_codes; ++c) {
        if (it - last_used[static_cast<size_t>(c)] >= config.dead_code_iterations) {
          const int64_t r = reseed_rng.uniform_int(rows.dim(0));
          for (int64_t jct = 0; jct < config.code_dim; ++jct)
            ck.model.codebook.at(c, jct) = rows.at(r, jct);
          opt_model.reset_row("codebook", ck.model.codebook, c);
          last_used[static_cast<size_t>(c)] = it;
        }
      }
    }

    ck.history.push_back(rec);
  }

  ck.rng_states = Json{{"batch", batch_rng.serialize()},
                       {"counterfactual", cf_rng.serialize()},
                       {"reseed", reseed_rng.serialize()}};
  return ck;
}

// ----------------------------------------------------- checkpoint helpers

// Tokenizes one corpus under a frozen checkpoint: per record, the nearest
// code index for each downsampled timestep.
inline std::vector<std::vector<int64_t>> tokenize_corpus(VqvaeCheckpoint& ck,
                                                         const Corpus& corpus,
                                                         const std::vector<size_t>& indices) {
  std::vector<std::vector<int64_t>> out;
  out.reserve(indices.size());
  for (size_t idx : indices) {
    std::vector<const MotionSequence*> one = {&corpus.motions[idx]};
    int64_t T = 0;
    Tensor rows = encode_rows(ck.model, motions_to_batch(one), &T);
    QuantizeResult q = quantize_rows(rows, ck.model.codebook);
    out.push_back(std::move(q.tokens));
  }
  return out;
}

// decode(encode(x), a): reconstruction through the quantizer.
inline MotionSequence reconstruct_motion(VqvaeCheckpoint& ck, const MotionSequence& m,
                                         const AttributeLabel& a) {
  std::vector<const MotionSequence*> one = {&m};
  int64_t T = 0;
  Tensor rows = encode_rows(ck.model, motions_to_batch(one), &T);
  QuantizeResult q = quantize_rows(rows, ck.model.codebook);
  Tensor x = decode_tokens(ck.model, {q.tokens}, {a});
  MotionSequence out(m.frames, m.channels, m.frame_rate_hz);
  for (int64_t t = 0; t < m.frames; ++t)
    for (int64_t c = 0; c < m.channels; ++c) out.at(t, c) = x.at(0, c, t);
  return out;
}

}  // namespace attrmogen
