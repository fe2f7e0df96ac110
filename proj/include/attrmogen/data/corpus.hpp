#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "attrmogen/core/errors.hpp"
#include "attrmogen/core/rng.hpp"
#include "attrmogen/core/serialize.hpp"
#include "attrmogen/data/motion.hpp"

namespace attrmogen {

enum class Split { train, val, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_name(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  fail(ErrorClass::io, "unknown split name: " + s);
}

struct CorpusRecord {
  std::string id;
  int64_t length = 0;
  int64_t channels = 0;
  AttributeLabel attributes;
  std::string text;
  int action_class = -1;  // synthetic corpus only; -1 when absent
  Split split = Split::train;
  int64_t offset = 0;  // byte offset into data.bin
};

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<bool> clamped;  // std fell below 1e-8 and was clamped to 1
  bool computed = false;
};

// Dataset container: a manifest plus in-memory motions. On disk this is
// manifest.json + data.bin (float32 LE, row-major frames x channels,
// concatenated records addressed by byte offsets).
struct Corpus {
  static constexpr int kFormatVersion = 1;

  int64_t channels = 0;
  double frame_rate_hz = 20.0;
  AttributeSchema schema;
  std::vector<double> split_ratio = {0.80, 0.05, 0.15};
  uint64_t seed = 0;
  ChannelStats stats;
  bool normalized = false;
  MirrorMap mirror_map;
  Json synth_spec;  // generator description, kept for the attribute oracle

  std::vector<CorpusRecord> records;
  std::vector<MotionSequence> motions;

  size_t size() const { return records.size(); }

  std::vector<size_t> split_indices(Split s) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < records.size(); ++i)
      if (records[i].split == s) out.push_back(i);
    return out;
  }

  // Deterministic split assignment: shuffle by the corpus seed, then cut at
  // the configured proportions (each count within one record of exact).
  void assign_splits() {
    require(split_ratio.size() == 3, ErrorClass::config, "split ratio needs 3 entries");
    const double total = split_ratio[0] + split_ratio[1] + split_ratio[2];
    require(std::abs(total - 1.0) < 1e-9, ErrorClass::config,
            "split ratio must sum to 1");
    std::vector<size_t> order(records.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(Rng::derive_seed(seed, 0x5eed5));
    rng.shuffle(order);
    const auto n = static_cast<double>(records.size());
    const auto n_train = static_cast<size_t>(std::llround(split_ratio[0] * n));
    const auto n_val = static_cast<size_t>(std::llround(split_ratio[1] * n));
    for (size_t r = 0; r < order.size(); ++r) {
      Split s = Split::test;
      if (r < n_train) s = Split::train;
      else if (r < n_train + n_val) s = Split::val;
      records[order[r]].split = s;
    }
  }
};

// Computes per-channel mean/std on the training split (population std) and
// standardizes every split in place. Constant channels (std < 1e-8) keep
// their scale: std is clamped to 1 so they pass through shifted only.
inline void normalize_corpus(Corpus& corpus) {
  const std::vector<size_t> train = corpus.split_indices(Split::train);
  require(!train.empty(), ErrorClass::config, "training split is empty");
  const int64_t C = corpus.channels;
  std::vector<double> mean(static_cast<size_t>(C), 0.0);
  std::vector<double> m2(static_cast<size_t>(C), 0.0);
  int64_t n = 0;
  for (size_t i : train) {
    const MotionSequence& m = corpus.motions[i];
    for (int64_t t = 0; t < m.frames; ++t)
      for (int64_t c = 0; c < C; ++c) mean[static_cast<size_t>(c)] += m.at(t, c);
    n += m.frames;
  }
  for (int64_t c = 0; c < C; ++c) mean[static_cast<size_t>(c)] /= static_cast<double>(n);
  for (size_t i : train) {
    const MotionSequence& m = corpus.motions[i];
    for (int64_t t = 0; t < m.frames; ++t)
      for (int64_t c = 0; c < C; ++c) {
        const double d = m.at(t, c) - mean[static_cast<size_t>(c)];
        m2[static_cast<size_t>(c)] += d * d;
      }
  }
  ChannelStats stats;
  stats.mean = mean;
  stats.std.resize(static_cast<size_t>(C));
  stats.clamped.resize(static_cast<size_t>(C));
  for (int64_t c = 0; c < C; ++c) {
    double sd = std::sqrt(m2[static_cast<size_t>(c)] / static_cast<double>(n));
    const bool clamp = sd < 1e-8;
    stats.clamped[static_cast<size_t>(c)] = clamp;
    stats.std[static_cast<size_t>(c)] = clamp ? 1.0 : sd;
  }
  stats.computed = true;

  for (MotionSequence& m : corpus.motions)
    for (int64_t t = 0; t < m.frames; ++t)
      for (int64_t c = 0; c < C; ++c)
        m.at(t, c) = (m.at(t, c) - stats.mean[static_cast<size_t>(c)]) /
                     stats.std[static_cast<size_t>(c)];

  corpus.stats = stats;
  corpus.normalized = true;
}

inline void denormalize_motion(MotionSequence& m, const ChannelStats& stats) {
  require(stats.computed, ErrorClass::config, "channel stats not computed");
  require(static_cast<size_t>(m.channels) == stats.mean.size(), ErrorClass::shape,
          "stats channel count mismatch");
  for (int64_t t = 0; t < m.frames; ++t)
    for (int64_t c = 0; c < m.channels; ++c)
      m.at(t, c) = m.at(t, c) * stats.std[static_cast<size_t>(c)] +
                   stats.mean[static_cast<size_t>(c)];
}

inline void normalize_motion(MotionSequence& m, const ChannelStats& stats) {
  require(stats.computed, ErrorClass::config, "channel stats not computed");
  for (int64_t t = 0; t < m.frames; ++t)
    for (int64_t c = 0; c < m.channels; ++c)
      m.at(t, c) = (m.at(t, c) - stats.mean[static_cast<size_t>(c)]) /
                   stats.std[static_cast<size_t>(c)];
}

// ------------------------------------------------------------------ disk IO

inline Json mirror_map_to_json(const MirrorMap& m) {
  return Json{{"perm", m.perm}, {"signs", m.signs}};
}

inline MirrorMap mirror_map_from_json(const Json& j) {
  MirrorMap m;
  m.perm = j.at("perm").get<std::vector<int>>();
  m.signs = j.at("signs").get<std::vector<double>>();
  return m;
}

inline void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream bin(dir / "data.bin", std::ios::binary);
  require(bin.good(), ErrorClass::io, "cannot open data.bin for write");

  const MirrorMap mirror = corpus.mirror_map.perm.empty()
                               ? MirrorMap::identity(corpus.channels)
                               : corpus.mirror_map;
  mirror.validate(corpus.channels);

  Json manifest;
  manifest["format_version"] = Corpus::kFormatVersion;
  manifest["channels"] = corpus.channels;
  manifest["frame_rate_hz"] = corpus.frame_rate_hz;
  manifest["schema"] = Json::object();
  manifest["schema"]["id"] = corpus.schema.id;
  manifest["schema"]["heads"] = Json::array();
  for (const auto& h : corpus.schema.heads)
    manifest["schema"]["heads"].push_back(Json{{"name", h.name}, {"cardinality", h.cardinality}});
  manifest["split_ratio"] = corpus.split_ratio;
  manifest["seed"] = corpus.seed;
  manifest["normalized"] = corpus.normalized;
  manifest["mirror_map"] = mirror_map_to_json(mirror);
  if (!corpus.synth_spec.is_null()) manifest["synth_spec"] = corpus.synth_spec;
  if (corpus.stats.computed) {
    manifest["channel_stats"] = Json::object();
    manifest["channel_stats"]["mean"] = corpus.stats.mean;
    manifest["channel_stats"]["std"] = corpus.stats.std;
    manifest["channel_stats"]["clamped"] = Json::array();
    for (bool b : corpus.stats.clamped) manifest["channel_stats"]["clamped"].push_back(b);
  }

  Json recs = Json::array();
  int64_t offset = 0;
  for (size_t i = 0; i < corpus.records.size(); ++i) {
    const CorpusRecord& r = corpus.records[i];
    const MotionSequence& m = corpus.motions[i];
    m.validate();
    require(m.channels == corpus.channels, ErrorClass::shape,
            "record channel count differs from corpus");
    Json jr;
    jr["id"] = r.id;
    jr["length"] = m.frames;
    jr["channels"] = m.channels;
    jr["age_group"] = r.attributes.age_group;
    jr["gender"] = r.attributes.gender;
    jr["text"] = r.text;
    if (r.action_class >= 0) jr["action_class"] = r.action_class;
    jr["split"] = split_name(r.split);
    jr["offset"] = offset;
    recs.push_back(jr);
    write_f32(bin, m.values.data(), m.values.numel());
    offset += m.values.numel() * 4;
  }
  manifest["records"] = recs;
  require(bin.good(), ErrorClass::io, "data.bin write failed");
  bin.close();
  write_json_file(dir / "manifest.json", manifest);
}

inline Corpus read_corpus(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  require(std::filesystem::exists(manifest_path), ErrorClass::io,
          "missing manifest.json in " + dir.string());
  const Json manifest = read_json_file(manifest_path);
  const int version = manifest.at("format_version").get<int>();
  require(version == Corpus::kFormatVersion, ErrorClass::version_mismatch,
          "corpus format version " + std::to_string(version) + " unsupported");

  Corpus corpus;
  corpus.channels = manifest.at("channels").get<int64_t>();
  corpus.frame_rate_hz = manifest.at("frame_rate_hz").get<double>();
  corpus.schema.id = manifest.at("schema").at("id").get<std::string>();
  corpus.schema.heads.clear();
  for (const Json& h : manifest.at("schema").at("heads"))
    corpus.schema.heads.push_back(
        {h.at("name").get<std::string>(), h.at("cardinality").get<int>()});
  corpus.split_ratio = manifest.at("split_ratio").get<std::vector<double>>();
  corpus.seed = manifest.at("seed").get<uint64_t>();
  corpus.normalized = manifest.value("normalized", false);
  corpus.mirror_map = mirror_map_from_json(manifest.at("mirror_map"));
  if (manifest.contains("synth_spec")) corpus.synth_spec = manifest.at("synth_spec");
  if (manifest.contains("channel_stats")) {
    corpus.stats.mean = manifest.at("channel_stats").at("mean").get<std::vector<double>>();
    corpus.stats.std = manifest.at("channel_stats").at("std").get<std::vector<double>>();
    corpus.stats.clamped.clear();
    for (const Json& b : manifest.at("channel_stats").at("clamped"))
      corpus.stats.clamped.push_back(b.get<bool>());
    corpus.stats.computed = true;
  }

  const auto bin_path = dir / "data.bin";
  require(std::filesystem::exists(bin_path), ErrorClass::io,
          "missing data.bin in " + dir.string());
  const int64_t file_size = static_cast<int64_t>(std::filesystem::file_size(bin_path));
  std::ifstream bin(bin_path, std::ios::binary);
  require(bin.good(), ErrorClass::io, "cannot open data.bin");

  for (const Json& jr : manifest.at("records")) {
    CorpusRecord r;
    r.id = jr.at("id").get<std::string>();
    r.length = jr.at("length").get<int64_t>();
    r.channels = jr.at("channels").get<int64_t>();
    require(r.channels == corpus.channels, ErrorClass::corpus,
            "record channels differ from corpus channels");
    r.attributes.age_group = jr.at("age_group").get<int>();
    r.attributes.gender = jr.at("gender").get<int>();
    r.attributes.schema_id = corpus.schema.id;
    r.attributes.validate(corpus.schema);
    r.text = jr.at("text").get<std::string>();
    r.action_class = jr.value("action_class", -1);
    r.split = split_from_name(jr.at("split").get<std::string>());
    r.offset = jr.at("offset").get<int64_t>();

    const int64_t bytes = r.length * r.channels * 4;
    require(r.offset >= 0 && r.offset + bytes <= file_size, ErrorClass::offset_range,
            "record " + r.id + " data offset out of range");

    MotionSequence m(r.length, r.channels, corpus.frame_rate_hz);
    bin.seekg(r.offset);
    read_f32(bin, m.values.data(), m.values.numel());
    corpus.records.push_back(std::move(r));
    corpus.motions.push_back(std::move(m));
  }
  corpus.mirror_map.validate(corpus.channels);
  return corpus;
}

}  // namespace attrmogen
