#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "attrmogen/data/synth.hpp"

using namespace attrmogen;

TEST_CASE("generation is bit-reproducible and counts records") {
  SynthSpec spec;
  spec.seed = 42;
  Corpus a = generate_corpus(spec, 2);
  Corpus b = generate_corpus(spec, 2);
  // K=8 classes x 4 ages x 2 genders x 2 per cell = 128 records
  REQUIRE(a.records.size() == 128);
  for (size_t i = 0; i < a.motions.size(); ++i)
    for (int64_t j = 0; j < a.motions[i].values.numel(); ++j)
      REQUIRE(a.motions[i].values[j] == b.motions[i].values[j]);
}

TEST_CASE("noise-free cells are deterministic and age scales RMS") {
  SynthSpec spec;
  spec.noise_std = 0.0;
  spec.seed = 0;
  Corpus corpus = generate_corpus(spec, 2);

  Corpus again = generate_corpus(spec, 2);
  for (size_t i = 0; i < corpus.motions.size(); ++i)
    for (int64_t j = 0; j < corpus.motions[i].values.numel(); ++j)
      REQUIRE(corpus.motions[i].values[j] == again.motions[i].values[j]);

  // Pooled RMS ratio between age 0 and age 3 on pattern channels tracks
  // amp[0]/amp[3] = 1.0/0.55; fractional cycles perturb it slightly because
  // the two rows also differ in speed.
  auto pooled_rms = [&](const MotionSequence& m) {
    double ss = 0.0;
    const int64_t cpat = spec.pattern_channels();
    for (int64_t c = 0; c < cpat; ++c)
      for (int64_t t = 0; t < m.frames; ++t) ss += m.at(t, c) * m.at(t, c);
    return std::sqrt(ss / static_cast<double>(cpat * m.frames));
  };
  const MotionSequence* age0 = nullptr;
  const MotionSequence* age3 = nullptr;
  for (size_t i = 0; i < corpus.records.size(); ++i) {
    const CorpusRecord& r = corpus.records[i];
    if (r.action_class == 0 && r.attributes.gender == 0) {
      if (r.attributes.age_group == 0 && !age0) age0 = &corpus.motions[i];
      if (r.attributes.age_group == 3 && !age3) age3 = &corpus.motions[i];
    }
  }
  REQUIRE(age0 != nullptr);
  REQUIRE(age3 != nullptr);
  const double ratio = pooled_rms(*age0) / pooled_rms(*age3);
  REQUIRE(ratio == Catch::Approx(1.0 / 0.55).epsilon(0.02));
}

TEST_CASE("spec invariants reject bad tables") {
  SynthSpec spec;
  spec.age_amplitude = {1.0, 1.1, 0.75, 0.55};  // not decreasing
  REQUIRE_THROWS_AS(spec.validate(), Error);

  SynthSpec spec2;
  spec2.noise_std = 10.0;  // prototypes no longer separable
  REQUIRE_THROWS_AS(spec2.validate(), Error);

  SynthSpec ok;
  REQUIRE_NOTHROW(ok.validate());
}

TEST_CASE("prototype pairwise distances clear the separability margin") {
  SynthSpec spec;
  spec.validate();
  double min_dist = 1e300;
  AttributeLabel base;  // age 0, gender 0
  for (int k = 0; k < spec.n_classes; ++k)
    for (int k2 = k + 1; k2 < spec.n_classes; ++k2) {
      double d2 = 0.0;
      for (int64_t c = 0; c < spec.pattern_channels(); ++c)
        for (int64_t t = 0; t < spec.frames; ++t) {
          const double d = spec.prototype(k, base, t, c) - spec.prototype(k2, base, t, c);
          d2 += d * d;
        }
      min_dist = std::min(min_dist, std::sqrt(d2));
    }
  const double required =
      10.0 * spec.noise_std *
      std::sqrt(static_cast<double>(spec.frames * spec.n_channels));
  REQUIRE(min_dist > required);
}

TEST_CASE("oracle inverts the noise-free generator on every cell") {
  SynthSpec spec;
  spec.noise_std = 0.0;
  spec.seed = 7;
  Corpus corpus = generate_corpus(spec, 2);
  for (size_t i = 0; i < corpus.records.size(); ++i) {
    OracleResult res = oracle_attributes(corpus.motions[i], spec);
    REQUIRE(res.label.age_group == corpus.records[i].attributes.age_group);
    REQUIRE(res.label.gender == corpus.records[i].attributes.gender);
  }
}

TEST_CASE("oracle accuracy at default noise is at least 0.99") {
  SynthSpec spec;
  // 8 per cell -> 512 records; two seeds give >1000 samples.
  int correct_age = 0, correct_gender = 0, total = 0;
  for (uint64_t seed : {2025ull, 2026ull}) {
    spec.seed = seed;
    Corpus corpus = generate_corpus(spec, 8);
    for (size_t i = 0; i < corpus.records.size(); ++i) {
      OracleResult res = oracle_attributes(corpus.motions[i], spec);
      correct_age += res.label.age_group == corpus.records[i].attributes.age_group;
      correct_gender += res.label.gender == corpus.records[i].attributes.gender;
      ++total;
    }
  }
  REQUIRE(total >= 1000);
  REQUIRE(static_cast<double>(correct_age) / total >= 0.99);
  REQUIRE(static_cast<double>(correct_gender) / total >= 0.99);
}

TEST_CASE("all-zero motion hits the documented tie-breaks") {
  SynthSpec spec;
  MotionSequence zero(spec.frames, spec.n_channels);
  OracleResult res = oracle_attributes(zero, spec);
  REQUIRE(res.label.gender == 0);     // sign(0) breaks to male
  REQUIRE(res.label.age_group == 3);  // closest row of the modulation table
}

TEST_CASE("oracle confidence is a positive margin on clean data") {
  SynthSpec spec;
  spec.noise_std = 0.0;
  Corpus corpus = generate_corpus(spec, 1);
  for (size_t i = 0; i < corpus.motions.size(); ++i) {
    OracleResult res = oracle_attributes(corpus.motions[i], spec);
    REQUIRE(res.confidence > 0.0);
  }
}

TEST_CASE("synth spec json round trips") {
  SynthSpec spec;
  spec.seed = 5;
  spec.noise_std = 0.03;
  Json j = synth_spec_to_json(spec);
  SynthSpec rt = synth_spec_from_json(j);
  REQUIRE(rt.seed == 5);
  REQUIRE(rt.noise_std == 0.03);
  REQUIRE(rt.templates.size() == 8);
  REQUIRE(synth_spec_to_json(rt) == j);
}
