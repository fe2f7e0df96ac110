#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "attrmogen/data/corpus.hpp"
#include "attrmogen/data/motion.hpp"
#include "attrmogen/data/synth.hpp"

using namespace attrmogen;
namespace fs = std::filesystem;

namespace {

MotionSequence make_motion(const std::vector<std::vector<double>>& rows) {
  MotionSequence m(static_cast<int64_t>(rows.size()),
                   static_cast<int64_t>(rows[0].size()));
  for (size_t t = 0; t < rows.size(); ++t)
    for (size_t c = 0; c < rows[t].size(); ++c)
      m.at(static_cast<int64_t>(t), static_cast<int64_t>(c)) = rows[t][c];
  return m;
}

Corpus tiny_corpus() {
  SynthSpec spec;
  spec.seed = 123;
  return generate_corpus(spec, 2);
}

}  // namespace

TEST_CASE("mirror_motion applies permutation and signs") {
  // 2-channel motion [[1,2],[3,4]], swap channels and negate channel 0
  MotionSequence m = make_motion({{1, 2}, {3, 4}});
  MirrorMap map;
  map.perm = {1, 0};
  map.signs = {-1.0, -1.0};  // signs must cancel pairwise for an involution
  MotionSequence out = mirror_motion(m, map);
  REQUIRE(out.at(0, 0) == -2.0);
  REQUIRE(out.at(0, 1) == -1.0);
  REQUIRE(out.at(1, 0) == -4.0);
  REQUIRE(out.at(1, 1) == -3.0);
}

TEST_CASE("mirror_motion is an exact involution for random valid maps") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t C = 2 + rng.uniform_int(7);
    const int64_t L = 2 + rng.uniform_int(10);
    // Build a random involutive permutation from disjoint swaps.
    MirrorMap map = MirrorMap::identity(C);
    std::vector<int64_t> order(static_cast<size_t>(C));
    for (int64_t i = 0; i < C; ++i) order[static_cast<size_t>(i)] = i;
    rng.shuffle(order);
    for (size_t i = 0; i + 1 < order.size(); i += 2) {
      if (rng.uniform() < 0.7) {
        const int a = static_cast<int>(order[i]), b = static_cast<int>(order[i + 1]);
        map.perm[static_cast<size_t>(a)] = b;
        map.perm[static_cast<size_t>(b)] = a;
        const double s = rng.uniform() < 0.5 ? -1.0 : 1.0;
        map.signs[static_cast<size_t>(a)] = s;
        map.signs[static_cast<size_t>(b)] = s;
      }
    }
    // Fixed points may independently flip sign.
    for (int64_t c = 0; c < C; ++c)
      if (map.perm[static_cast<size_t>(c)] == c && rng.uniform() < 0.3)
        map.signs[static_cast<size_t>(c)] = -1.0;

    MotionSequence m(L, C);
    for (int64_t i = 0; i < m.values.numel(); ++i) m.values[i] = rng.normal();
    MotionSequence twice = mirror_motion(mirror_motion(m, map), map);
    for (int64_t i = 0; i < m.values.numel(); ++i)
      REQUIRE(twice.values[i] == m.values[i]);
  }
}

TEST_CASE("mirror identity map is a no-op and arity mismatch throws") {
  MotionSequence m = make_motion({{1, 2, 3}, {4, 5, 6}});
  MotionSequence out = mirror_motion(m, MirrorMap::identity(3));
  for (int64_t i = 0; i < m.values.numel(); ++i)
    REQUIRE(out.values[i] == m.values[i]);

  MirrorMap bad = MirrorMap::identity(2);
  REQUIRE_THROWS_MATCHES(mirror_motion(m, bad), Error,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("shape_error")));
}

TEST_CASE("gaussian_denoise keeps constants and reproduces kernel on impulse") {
  MotionSequence constant(32, 2);
  for (int64_t i = 0; i < constant.values.numel(); ++i) constant.values[i] = 3.5;
  MotionSequence out = gaussian_denoise(constant, 1.5);
  for (int64_t i = 0; i < out.values.numel(); ++i)
    REQUIRE(out.values[i] == Catch::Approx(3.5).margin(1e-6));

  // Unit impulse at the center of a long sequence reads back the kernel.
  const double sigma = 2.0;
  const int64_t L = 129, mid = 64;
  MotionSequence imp(L, 1);
  imp.at(mid, 0) = 1.0;
  MotionSequence k = gaussian_denoise(imp, sigma);
  const int64_t radius = static_cast<int64_t>(std::ceil(4.0 * sigma));
  double sum = 0.0;
  std::vector<double> expect(static_cast<size_t>(2 * radius + 1));
  for (int64_t j = -radius; j <= radius; ++j) {
    expect[static_cast<size_t>(j + radius)] =
        std::exp(-0.5 * static_cast<double>(j * j) / (sigma * sigma));
    sum += expect[static_cast<size_t>(j + radius)];
  }
  for (int64_t j = -radius; j <= radius; ++j)
    REQUIRE(k.at(mid + j, 0) ==
            Catch::Approx(expect[static_cast<size_t>(j + radius)] / sum).margin(1e-12));

  REQUIRE_THROWS_AS(gaussian_denoise(constant, 0.0), Error);
  REQUIRE_THROWS_AS(gaussian_denoise(constant, -1.0), Error);
}

TEST_CASE("gaussian_denoise reduces white-noise variance") {
  Rng rng(2024);
  MotionSequence noise(256, 1);
  for (int64_t t = 0; t < 256; ++t) noise.at(t, 0) = rng.normal();
  auto variance = [](const MotionSequence& m) {
    double mean = 0.0;
    for (int64_t t = 0; t < m.frames; ++t) mean += m.at(t, 0);
    mean /= static_cast<double>(m.frames);
    double v = 0.0;
    for (int64_t t = 0; t < m.frames; ++t) {
      const double d = m.at(t, 0) - mean;
      v += d * d;
    }
    return v / static_cast<double>(m.frames);
  };
  MotionSequence smooth = gaussian_denoise(noise, 2.0);
  REQUIRE(variance(smooth) < variance(noise));
}

TEST_CASE("gaussian_denoise is linear") {
  Rng rng(31);
  MotionSequence x(40, 3), y(40, 3);
  for (int64_t i = 0; i < x.values.numel(); ++i) {
    x.values[i] = rng.normal();
    y.values[i] = rng.normal();
  }
  const double a = 1.7, b = -0.6;
  MotionSequence combo(40, 3);
  for (int64_t i = 0; i < combo.values.numel(); ++i)
    combo.values[i] = a * x.values[i] + b * y.values[i];
  MotionSequence lhs = gaussian_denoise(combo, 1.2);
  MotionSequence dx = gaussian_denoise(x, 1.2);
  MotionSequence dy = gaussian_denoise(y, 1.2);
  for (int64_t i = 0; i < lhs.values.numel(); ++i)
    REQUIRE(lhs.values[i] ==
            Catch::Approx(a * dx.values[i] + b * dy.values[i]).margin(1e-6));
}

TEST_CASE("jitter_filter keeps constants and flags spikes") {
  MotionSequence constant(16, 2);
  for (int64_t i = 0; i < constant.values.numel(); ++i) constant.values[i] = 0.4;
  REQUIRE(jitter_filter(constant, 0.1, 1.0).keep);

  MotionSequence spike(16, 2);
  spike.at(7, 1) = 10.0;  // 10x the outlier threshold below
  JitterDecision d = jitter_filter(spike, 100.0, 1.0);
  REQUIRE_FALSE(d.keep);
  REQUIRE(d.outlier_exceeded);
  REQUIRE(d.abs_frame == 7);
  REQUIRE(d.abs_channel == 1);
}

TEST_CASE("jitter_filter decision matches the exact sinusoid step oracle") {
  // Smooth sinusoid, amplitude 1, one cycle over 64 frames.
  const int64_t L = 64;
  MotionSequence m(L, 1);
  for (int64_t t = 0; t < L; ++t)
    m.at(t, 0) = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) /
                          static_cast<double>(L));
  // Oracle: steps are 2 sin(pi/L) |cos(2 pi (t+1/2)/L)|, maximized at t=0,
  // so the exact max grid step is sin(2 pi / L) (~ 2 pi / L ~ 0.098).
  double max_step = 0.0;
  for (int64_t t = 1; t < L; ++t)
    max_step = std::max(max_step, std::abs(m.at(t, 0) - m.at(t - 1, 0)));
  const double exact = std::sin(2.0 * std::numbers::pi / static_cast<double>(L));
  REQUIRE(max_step == Catch::Approx(exact).margin(1e-12));

  const double vel_threshold = 0.05;
  JitterDecision d = jitter_filter(m, vel_threshold, 10.0);
  // The oracle decides: max step ~0.098 exceeds 0.05, so discard.
  REQUIRE(max_step > vel_threshold);
  REQUIRE_FALSE(d.keep);
  REQUIRE(d.velocity_exceeded);
}

TEST_CASE("normalize_corpus standardizes on the training split") {
  Corpus corpus = tiny_corpus();
  normalize_corpus(corpus);
  const auto train = corpus.split_indices(Split::train);
  const int64_t C = corpus.channels;
  std::vector<double> mean(static_cast<size_t>(C), 0.0),
      var(static_cast<size_t>(C), 0.0);
  int64_t n = 0;
  for (size_t i : train) {
    const MotionSequence& m = corpus.motions[i];
    for (int64_t t = 0; t < m.frames; ++t)
      for (int64_t c = 0; c < C; ++c) mean[static_cast<size_t>(c)] += m.at(t, c);
    n += m.frames;
  }
  for (auto& v : mean) v /= static_cast<double>(n);
  for (size_t i : train) {
    const MotionSequence& m = corpus.motions[i];
    for (int64_t t = 0; t < m.frames; ++t)
      for (int64_t c = 0; c < C; ++c) {
        const double d = m.at(t, c) - mean[static_cast<size_t>(c)];
        var[static_cast<size_t>(c)] += d * d;
      }
  }
  for (int64_t c = 0; c < C; ++c) {
    REQUIRE(std::abs(mean[static_cast<size_t>(c)]) < 1e-5);
    REQUIRE(std::abs(std::sqrt(var[static_cast<size_t>(c)] / static_cast<double>(n)) - 1.0) <
            1e-3);
  }
}

TEST_CASE("normalize_corpus clamps constant channels and inverts cleanly") {
  // Hand-built corpus: one record, channel 0 holds {1,3}, channel 1 all zero.
  Corpus corpus;
  corpus.channels = 2;
  MotionSequence m = make_motion({{1, 0}, {3, 0}});
  CorpusRecord r;
  r.id = "rec_0";
  r.length = 2;
  r.channels = 2;
  r.text = "a test clip";
  r.split = Split::train;
  corpus.records.push_back(r);
  corpus.motions.push_back(m);

  Corpus saved = corpus;
  normalize_corpus(corpus);
  // {1,3} standardizes to {-1,+1} under population std.
  REQUIRE(corpus.motions[0].at(0, 0) == Catch::Approx(-1.0));
  REQUIRE(corpus.motions[0].at(1, 0) == Catch::Approx(1.0));
  // All-zero channel: unchanged, mean 0, std clamped to 1.
  REQUIRE(corpus.motions[0].at(0, 1) == 0.0);
  REQUIRE(corpus.stats.mean[1] == 0.0);
  REQUIRE(corpus.stats.std[1] == 1.0);
  REQUIRE(corpus.stats.clamped[1]);

  // Denormalize with stored stats recovers the original values.
  MotionSequence back = corpus.motions[0];
  denormalize_motion(back, corpus.stats);
  for (int64_t i = 0; i < back.values.numel(); ++i)
    REQUIRE(back.values[i] == Catch::Approx(saved.motions[0].values[i]).margin(1e-5));

  // Re-normalizing an already-normalized corpus keeps means at 0.
  normalize_corpus(corpus);
  REQUIRE(std::abs(corpus.motions[0].at(0, 0) + 1.0) < 1e-9);
}

TEST_CASE("normalize_corpus rejects an empty training split") {
  Corpus corpus;
  corpus.channels = 2;
  REQUIRE_THROWS_MATCHES(normalize_corpus(corpus), Error,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("config_error")));
}

TEST_CASE("corpus write/read round trip is structurally exact") {
  Corpus corpus = tiny_corpus();
  normalize_corpus(corpus);
  const auto dir = fs::temp_directory_path() / "amg_corpus_rt";
  fs::remove_all(dir);
  write_corpus(corpus, dir);
  Corpus rt = read_corpus(dir);

  REQUIRE(rt.records.size() == corpus.records.size());
  REQUIRE(rt.channels == corpus.channels);
  REQUIRE(rt.normalized == corpus.normalized);
  for (size_t i = 0; i < rt.records.size(); ++i) {
    REQUIRE(rt.records[i].id == corpus.records[i].id);
    REQUIRE(rt.records[i].text == corpus.records[i].text);
    REQUIRE(rt.records[i].split == corpus.records[i].split);
    REQUIRE(rt.records[i].attributes == corpus.records[i].attributes);
    REQUIRE(rt.records[i].action_class == corpus.records[i].action_class);
  }
  // Values: float32 on disk; both sides pass through the same quantization,
  // so a second write is byte-identical.
  const auto dir2 = fs::temp_directory_path() / "amg_corpus_rt2";
  fs::remove_all(dir2);
  write_corpus(rt, dir2);
  for (const char* name : {"data.bin", "manifest.json"}) {
    std::ifstream f1(dir / name, std::ios::binary), f2(dir2 / name, std::ios::binary);
    std::vector<char> b1((std::istreambuf_iterator<char>(f1)), {});
    std::vector<char> b2((std::istreambuf_iterator<char>(f2)), {});
    REQUIRE(b1 == b2);
  }
}

TEST_CASE("corpus read detects bad offsets, truncation, version mismatch") {
  Corpus corpus = tiny_corpus();
  const auto dir = fs::temp_directory_path() / "amg_corpus_bad";
  fs::remove_all(dir);
  write_corpus(corpus, dir);

  SECTION("offset out of range") {
    Json manifest = read_json_file(dir / "manifest.json");
    manifest["records"].back()["offset"] = 1ll << 40;
    write_json_file(dir / "manifest.json", manifest);
    REQUIRE_THROWS_MATCHES(read_corpus(dir), Error,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("offset_error")));
  }
  SECTION("truncated data file") {
    const auto size = fs::file_size(dir / "data.bin");
    fs::resize_file(dir / "data.bin", size / 2);
    REQUIRE_THROWS_MATCHES(read_corpus(dir), Error,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("offset_error")));
  }
  SECTION("version mismatch") {
    Json manifest = read_json_file(dir / "manifest.json");
    manifest["format_version"] = 999;
    write_json_file(dir / "manifest.json", manifest);
    REQUIRE_THROWS_MATCHES(read_corpus(dir), Error,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("version_error")));
  }
}

TEST_CASE("empty corpus round trips") {
  Corpus corpus;
  corpus.channels = 16;
  const auto dir = fs::temp_directory_path() / "amg_corpus_empty";
  fs::remove_all(dir);
  write_corpus(corpus, dir);
  Corpus rt = read_corpus(dir);
  REQUIRE(rt.records.empty());
  REQUIRE(rt.channels == 16);
}

TEST_CASE("split assignment is deterministic and proportional") {
  SynthSpec spec;
  spec.seed = 9;
  Corpus a = generate_corpus(spec, 10);
  Corpus b = generate_corpus(spec, 10);
  for (size_t i = 0; i < a.records.size(); ++i)
    REQUIRE(a.records[i].split == b.records[i].split);

  const double n = static_cast<double>(a.records.size());
  REQUIRE(std::abs(static_cast<double>(a.split_indices(Split::train).size()) - 0.80 * n) <= 1.0);
  REQUIRE(std::abs(static_cast<double>(a.split_indices(Split::val).size()) - 0.05 * n) <= 1.0);
  REQUIRE(std::abs(static_cast<double>(a.split_indices(Split::test).size()) - 0.15 * n) <= 1.0);
}
