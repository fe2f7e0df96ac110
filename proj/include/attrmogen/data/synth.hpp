#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "attrmogen/core/errors.hpp"
#include "attrmogen/core/rng.hpp"
#include "attrmogen/data/corpus.hpp"
#include "attrmogen/data/motion.hpp"

namespace attrmogen {

// Closed-form attribute-conditioned motion generator. Every class is a
// multichannel sinusoid with class-specific per-channel phases; age scales
// the amplitude and warps the time axis, gender shifts dedicated offset
// channels by +/- delta. The modulations are analytically invertible, which
// is what makes the attribute oracle below possible.
struct SynthSpec {
  int n_classes = 8;
  int64_t n_channels = 16;
  int64_t frames = 64;
  int n_offset_channels = 2;                 // trailing channels carry the gender offset
  double base_frequency = 8.0;               // cycles per clip before time warp
  std::vector<double> age_amplitude = {1.0, 0.9, 0.75, 0.55};
  std::vector<double> age_speed = {1.1, 1.0, 0.9, 0.7};
  double gender_offset = 0.3;
  double noise_std = 0.05;
  uint64_t seed = 0;
  std::vector<std::vector<std::string>> templates;  // per class; defaults below

  int64_t pattern_channels() const { return n_channels - n_offset_channels; }

  static std::vector<std::vector<std::string>> default_templates() {
    return {
        {"a person walks forward", "someone is walking at an even pace",
         "the figure walks across the floor"},
        {"a person runs forward", "someone is running quickly",
         "the figure runs across the floor"},
        {"a person jumps in place", "someone is jumping up and down",
         "the figure jumps repeatedly"},
        {"a person waves with one arm", "someone is waving to greet",
         "the figure waves a hand overhead"},
        {"a person squats down low", "someone is squatting slowly",
         "the figure squats and rises again"},
        {"a person kicks forward", "someone is kicking with the right leg",
         "the figure kicks out sharply"},
        {"a person spins around", "someone is spinning in a circle",
         "the figure spins on the spot"},
        {"a person bows politely", "someone is bowing from the waist",
         "the figure bows and straightens up"},
    };
  }

  // Class/channel phase table; golden-ratio spacing keeps prototypes apart.
  double phase(int cls, int64_t channel) const {
    constexpr double golden = 0.6180339887498949;
    const double f = (cls + 1) * (static_cast<double>(channel) + 1.0) * golden;
    return 2.0 * std::numbers::pi * (f - std::floor(f));
  }

  // Noise-free sample of class `cls` under the given attributes.
  double prototype(int cls, const AttributeLabel& a, int64_t t, int64_t c,
                   double instance_phase = 0.0) const {
    if (c >= pattern_channels()) {
      return (a.gender == 0 ? 1.0 : -1.0) * gender_offset;
    }
    const double amp = age_amplitude[static_cast<size_t>(a.age_group)];
    const double speed = age_speed[static_cast<size_t>(a.age_group)];
    const double omega = 2.0 * std::numbers::pi * base_frequency * speed /
                         static_cast<double>(frames);
    return amp * std::sin(omega * static_cast<double>(t) + phase(cls, c) + instance_phase);
  }

  // RMS of a unit-amplitude sinusoid (the amplitude table is relative to it).
  static constexpr double base_rms() { return 0.7071067811865476; }

  void validate() const {
    require(n_classes >= 2, ErrorClass::config, "need at least 2 classes");
    require(n_channels >= 2 && n_offset_channels >= 1 &&
                n_offset_channels < n_channels,
            ErrorClass::config, "bad channel layout");
    require(frames >= 8, ErrorClass::config, "frames too small");
    require(age_amplitude.size() == 4 && age_speed.size() == 4, ErrorClass::config,
            "attribute tables need 4 entries");
    for (size_t i = 0; i + 1 < age_amplitude.size(); ++i)
      require(age_amplitude[i] > age_amplitude[i + 1], ErrorClass::config,
              "age_amplitude must be strictly decreasing");
    for (double a : age_amplitude)
      require(a > 0.0, ErrorClass::config, "age_amplitude must be positive");
    for (double s : age_speed)
      require(s > 0.0, ErrorClass::config, "age_speed must be positive");
    require(gender_offset > 0.0, ErrorClass::config, "gender_offset must be positive");
    require(noise_std >= 0.0, ErrorClass::config, "noise_std must be >= 0");
    require(base_frequency * 1.2 < static_cast<double>(frames) / 2.0,
            ErrorClass::config, "base frequency too close to Nyquist");
    if (!templates.empty())
      require(static_cast<int>(templates.size()) == n_classes, ErrorClass::config,
              "templates must cover every class");

    // Separability: min pairwise L2 distance between unmodulated class
    // prototypes must clear 10x the expected noise norm.
    double min_dist = 1e300;
    for (int k = 0; k < n_classes; ++k)
      for (int k2 = k + 1; k2 < n_classes; ++k2) {
        double d2 = 0.0;
        const double omega =
            2.0 * std::numbers::pi * base_frequency / static_cast<double>(frames);
        for (int64_t c = 0; c < pattern_channels(); ++c)
          for (int64_t t = 0; t < frames; ++t) {
            const double v1 = std::sin(omega * static_cast<double>(t) + phase(k, c));
            const double v2 = std::sin(omega * static_cast<double>(t) + phase(k2, c));
            d2 += (v1 - v2) * (v1 - v2);
          }
        min_dist = std::min(min_dist, std::sqrt(d2));
      }
    const double required =
        10.0 * noise_std * std::sqrt(static_cast<double>(frames * n_channels));
    require(min_dist > required, ErrorClass::config,
            "class prototypes are not separable enough: min distance " +
                std::to_string(min_dist) + " <= " + std::to_string(required));
  }
};

inline Json synth_spec_to_json(const SynthSpec& s) {
  Json j;
  j["n_classes"] = s.n_classes;
  j["n_channels"] = s.n_channels;
  j["frames"] = s.frames;
  j["n_offset_channels"] = s.n_offset_channels;
  j["base_frequency"] = s.base_frequency;
  j["age_amplitude"] = s.age_amplitude;
  j["age_speed"] = s.age_speed;
  j["gender_offset"] = s.gender_offset;
  j["noise_std"] = s.noise_std;
  j["seed"] = s.seed;
  j["templates"] = s.templates.empty() ? SynthSpec::default_templates() : s.templates;
  return j;
}

inline SynthSpec synth_spec_from_json(const Json& j) {
  SynthSpec s;
  s.n_classes = j.at("n_classes").get<int>();
  s.n_channels = j.at("n_channels").get<int64_t>();
  s.frames = j.at("frames").get<int64_t>();
  s.n_offset_channels = j.at("n_offset_channels").get<int>();
  s.base_frequency = j.at("base_frequency").get<double>();
  s.age_amplitude = j.at("age_amplitude").get<std::vector<double>>();
  s.age_speed = j.at("age_speed").get<std::vector<double>>();
  s.gender_offset = j.at("gender_offset").get<double>();
  s.noise_std = j.at("noise_std").get<double>();
  s.seed = j.at("seed").get<uint64_t>();
  s.templates = j.at("templates").get<std::vector<std::vector<std::string>>>();
  return s;
}

// Emits n_per_cell motions for every (class, age_group, gender) cell.
// Deterministic given (spec, seed): records are generated in cell order and
// noise is drawn from one sequential stream.
inline Corpus generate_corpus(const SynthSpec& spec, int n_per_cell) {
  require(n_per_cell >= 1, ErrorClass::config, "n_per_cell must be >= 1");
  spec.validate();
  const auto templates =
      spec.templates.empty() ? SynthSpec::default_templates() : spec.templates;

  Corpus corpus;
  corpus.channels = spec.n_channels;
  corpus.seed = spec.seed;
  corpus.schema = default_schema();
  corpus.synth_spec = synth_spec_to_json(spec);
  corpus.mirror_map = MirrorMap::identity(spec.n_channels);

  Rng noise_rng(Rng::derive_seed(spec.seed, 0x0153));
  int64_t index = 0;
  for (int k = 0; k < spec.n_classes; ++k)
    for (int a = 0; a < 4; ++a)
      for (int g = 0; g < 2; ++g)
        for (int j = 0; j < n_per_cell; ++j) {
          AttributeLabel label;
          label.age_group = a;
          label.gender = g;
          const double instance_phase =
              2.0 * std::numbers::pi * static_cast<double>(j) /
              static_cast<double>(n_per_cell);
          MotionSequence m(spec.frames, spec.n_channels);
          for (int64_t t = 0; t < spec.frames; ++t)
            for (int64_t c = 0; c < spec.n_channels; ++c) {
              double v = spec.prototype(k, label, t, c, instance_phase);
              if (spec.noise_std > 0.0) v += noise_rng.normal(0.0, spec.noise_std);
              m.at(t, c) = v;
            }
          CorpusRecord rec;
          char buf[32];
          std::snprintf(buf, sizeof(buf), "rec_%05lld",
                        static_cast<long long>(index++));
          rec.id = buf;
          rec.length = spec.frames;
          rec.channels = spec.n_channels;
          rec.attributes = label;
          rec.text = templates[static_cast<size_t>(k)]
                              [static_cast<size_t>(j) % templates[static_cast<size_t>(k)].size()];
          rec.action_class = k;
          corpus.records.push_back(rec);
          corpus.motions.push_back(std::move(m));
        }
  corpus.assign_splits();
  return corpus;
}

struct OracleResult {
  AttributeLabel label;
  double confidence = 0.0;  // margin between best and second-best age distance
  double rms = 0.0;
  double frequency = 0.0;  // estimated cycles per clip
  double offset_mean = 0.0;
};

// Recovers (age_group, gender) from a raw (unnormalized) motion by inverting
// the generator's modulations: pooled RMS and dominant frequency pick the age
// row, the offset-channel sign picks the gender. Ties break to the lowest
// index; the all-zero motion maps to (age 3, gender 0).
inline OracleResult oracle_attributes(const MotionSequence& m, const SynthSpec& spec) {
  require(m.channels == spec.n_channels, ErrorClass::shape,
          "motion channel count does not match spec");
  const int64_t cpat = spec.pattern_channels();
  const int64_t L = m.frames;

  // Pooled RMS over pattern channels, per-channel mean removed.
  double ss = 0.0;
  for (int64_t c = 0; c < cpat; ++c) {
    double mean = 0.0;
    for (int64_t t = 0; t < L; ++t) mean += m.at(t, c);
    mean /= static_cast<double>(L);
    for (int64_t t = 0; t < L; ++t) {
      const double d = m.at(t, c) - mean;
      ss += d * d;
    }
  }
  const double rms = std::sqrt(ss / static_cast<double>(L * cpat));

  // Pooled magnitude spectrum; parabolic interpolation around the peak bin.
  const int64_t half = L / 2;
  std::vector<double> mag(static_cast<size_t>(half + 1), 0.0);
  for (int64_t b = 0; b <= half; ++b) {
    const double w = 2.0 * std::numbers::pi * static_cast<double>(b) /
                     static_cast<double>(L);
    for (int64_t c = 0; c < cpat; ++c) {
      double re = 0.0, im = 0.0;
      for (int64_t t = 0; t < L; ++t) {
        re += m.at(t, c) * std::cos(w * static_cast<double>(t));
        im -= m.at(t, c) * std::sin(w * static_cast<double>(t));
      }
      mag[static_cast<size_t>(b)] += std::sqrt(re * re + im * im);
    }
  }
  int64_t peak = 1;
  for (int64_t b = 2; b < half; ++b)
    if (mag[static_cast<size_t>(b)] > mag[static_cast<size_t>(peak)]) peak = b;
  double freq = 0.0;
  if (mag[static_cast<size_t>(peak)] > 0.0) {
    const double ym = mag[static_cast<size_t>(peak - 1)];
    const double y0 = mag[static_cast<size_t>(peak)];
    const double yp = mag[static_cast<size_t>(peak + 1)];
    const double denom = ym - 2.0 * y0 + yp;
    double delta = 0.0;
    if (std::abs(denom) > 1e-12) delta = 0.5 * (ym - yp) / denom;
    freq = static_cast<double>(peak) + std::clamp(delta, -0.5, 0.5);
  }

  // Gender from the offset-channel mean; sign(0) breaks to male (0).
  double off = 0.0;
  for (int64_t c = cpat; c < m.channels; ++c)
    for (int64_t t = 0; t < L; ++t) off += m.at(t, c);
  off /= static_cast<double>((m.channels - cpat) * L);

  OracleResult res;
  res.rms = rms;
  res.frequency = freq;
  res.offset_mean = off;
  res.label.gender = off < 0.0 ? 1 : 0;
  res.label.schema_id = default_schema().id;

  // Age: nearest row of the (amplitude, speed) modulation table, both terms
  // expressed relative to the unmodulated prototype.
  int best = 0;
  double best_d = 1e300, second_d = 1e300;
  for (int a = 0; a < 4; ++a) {
    const double t1 = rms / SynthSpec::base_rms() - spec.age_amplitude[static_cast<size_t>(a)];
    const double t2 = freq / spec.base_frequency - spec.age_speed[static_cast<size_t>(a)];
    const double d = t1 * t1 + t2 * t2;
    if (d < best_d) {
      second_d = best_d;
      best_d = d;
      best = a;
    } else if (d < second_d) {
      second_d = d;
    }
  }
  res.label.age_group = best;
  res.confidence = second_d - best_d;
  return res;
}

}  // namespace attrmogen
