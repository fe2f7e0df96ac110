#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "attrmogen/core/errors.hpp"
#include "attrmogen/core/tensor.hpp"

namespace attrmogen {

// Discrete attribute schema: an ordered list of heads with cardinalities.
// The joint class index is mixed-radix with the last head fastest, so the
// default (age:4, gender:2) gives joint = age*2 + gender.
struct AttributeSchema {
  struct Head {
    std::string name;
    int cardinality;
  };
  std::string id = "age4_gender2_v1";
  std::vector<Head> heads = {{"age", 4}, {"gender", 2}};

  int joint_size() const {
    int n = 1;
    for (const Head& h : heads) n *= h.cardinality;
    return n;
  }
};

inline AttributeSchema default_schema() { return AttributeSchema{}; }

struct AttributeLabel {
  int age_group = 0;  // 0..3
  int gender = 0;     // 0 male, 1 female
  std::string schema_id = "age4_gender2_v1";

  void validate(const AttributeSchema& schema) const {
    require(schema.id == schema_id, ErrorClass::schema,
            "label schema " + schema_id + " does not match " + schema.id);
    require(schema.heads.size() == 2, ErrorClass::schema,
            "default label type expects two heads");
    require(age_group >= 0 && age_group < schema.heads[0].cardinality,
            ErrorClass::label, "age_group out of range");
    require(gender >= 0 && gender < schema.heads[1].cardinality, ErrorClass::label,
            "gender out of range");
  }

  int joint(const AttributeSchema& schema) const {
    validate(schema);
    return age_group * schema.heads[1].cardinality + gender;
  }

  static AttributeLabel from_joint(int joint, const AttributeSchema& schema) {
    require(joint >= 0 && joint < schema.joint_size(), ErrorClass::label,
            "joint index out of range");
    AttributeLabel a;
    a.schema_id = schema.id;
    a.gender = joint % schema.heads[1].cardinality;
    a.age_group = joint / schema.heads[1].cardinality;
    return a;
  }

  bool operator==(const AttributeLabel& o) const {
    return age_group == o.age_group && gender == o.gender && schema_id == o.schema_id;
  }
};

struct TextPrompt {
  std::string text;
  std::optional<int> action_class;  // synthetic corpus only

  void validate() const {
    require(!text.empty(), ErrorClass::parameter, "text prompt is empty");
  }
};

// One motion clip: frames x channels of normalized features.
struct MotionSequence {
  int64_t frames = 0;
  int64_t channels = 0;
  Tensor values;  // [frames, channels]
  double frame_rate_hz = 20.0;

  MotionSequence() = default;
  MotionSequence(int64_t L, int64_t C, double fps = 20.0)
      : frames(L), channels(C), values({L, C}), frame_rate_hz(fps) {
    require(L >= 1 && C >= 1, ErrorClass::shape, "motion needs L >= 1 and C >= 1");
  }

  void validate() const {
    require(frames >= 1 && channels >= 1, ErrorClass::shape,
            "motion needs L >= 1 and C >= 1");
    require(values.ndim() == 2 && values.dim(0) == frames && values.dim(1) == channels,
            ErrorClass::shape, "motion value array does not match declared shape");
    require(frame_rate_hz > 0.0, ErrorClass::parameter, "frame rate must be positive");
    require(values.all_finite(), ErrorClass::numeric, "motion contains NaN/Inf");
  }

  double& at(int64_t t, int64_t c) { return values.at(t, c); }
  double at(int64_t t, int64_t c) const { return values.at(t, c); }
};

// Channel permutation plus sign flips; must be an involution.
struct MirrorMap {
  std::vector<int> perm;      // output channel c reads input channel perm[c]
  std::vector<double> signs;  // each entry +1 or -1

  static MirrorMap identity(int64_t channels) {
    MirrorMap m;
    m.perm.resize(static_cast<size_t>(channels));
    m.signs.assign(static_cast<size_t>(channels), 1.0);
    for (int64_t c = 0; c < channels; ++c) m.perm[static_cast<size_t>(c)] = static_cast<int>(c);
    return m;
  }

  void validate(int64_t channels) const {
    require(static_cast<int64_t>(perm.size()) == channels &&
                static_cast<int64_t>(signs.size()) == channels,
            ErrorClass::shape, "mirror map arity does not match channel count");
    std::vector<bool> seen(static_cast<size_t>(channels), false);
    for (int64_t c = 0; c < channels; ++c) {
      const int p = perm[static_cast<size_t>(c)];
      require(p >= 0 && p < channels, ErrorClass::shape, "mirror map index out of range");
      require(!seen[static_cast<size_t>(p)], ErrorClass::shape,
              "mirror map is not a permutation");
      seen[static_cast<size_t>(p)] = true;
      require(signs[static_cast<size_t>(c)] == 1.0 || signs[static_cast<size_t>(c)] == -1.0,
              ErrorClass::parameter, "mirror sign must be +1 or -1");
    }
    // Involution: perm o perm = id and the sign picked up twice cancels.
    for (int64_t c = 0; c < channels; ++c) {
      const int p = perm[static_cast<size_t>(c)];
      require(perm[static_cast<size_t>(p)] == c, ErrorClass::parameter,
              "mirror permutation is not an involution");
      require(signs[static_cast<size_t>(c)] * signs[static_cast<size_t>(p)] == 1.0,
              ErrorClass::parameter, "mirror signs do not cancel under involution");
    }
  }
};

inline MotionSequence mirror_motion(const MotionSequence& m, const MirrorMap& map) {
  map.validate(m.channels);
  MotionSequence out(m.frames, m.channels, m.frame_rate_hz);
  for (int64_t t = 0; t < m.frames; ++t)
    for (int64_t c = 0; c < m.channels; ++c)
      out.at(t, c) = map.signs[static_cast<size_t>(c)] * m.at(t, map.perm[static_cast<size_t>(c)]);
  return out;
}

// 1-D Gaussian smoothing along time, kernel truncated at 4 sigma, reflect
// padding (edge sample duplicated: ... x1 x0 | x0 x1 ...).
inline MotionSequence gaussian_denoise(const MotionSequence& m, double sigma) {
  require(sigma > 0.0, ErrorClass::parameter, "sigma must be > 0");
  const int64_t radius = static_cast<int64_t>(std::ceil(4.0 * sigma));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int64_t j = -radius; j <= radius; ++j) {
    const double w = std::exp(-0.5 * static_cast<double>(j * j) / (sigma * sigma));
    kernel[static_cast<size_t>(j + radius)] = w;
    sum += w;
  }
  for (double& w : kernel) w /= sum;

  const int64_t L = m.frames;
  auto reflect = [L](int64_t i) {
    while (i < 0 || i >= L) {
      if (i < 0) i = -i - 1;
      if (i >= L) i = 2 * L - 1 - i;
    }
    return i;
  };

  MotionSequence out(m.frames, m.channels, m.frame_rate_hz);
  for (int64_t c = 0; c < m.channels; ++c)
    for (int64_t t = 0; t < L; ++t) {
      double acc = 0.0;
      for (int64_t j = -radius; j <= radius; ++j)
        acc += kernel[static_cast<size_t>(j + radius)] * m.at(reflect(t + j), c);
      out.at(t, c) = acc;
    }
  return out;
}

struct JitterDecision {
  bool keep = true;
  double max_step = 0.0;       // largest frame-to-frame absolute difference
  int64_t step_frame = -1;     // frame index of that step (second of the pair)
  int64_t step_channel = -1;
  double max_abs = 0.0;        // largest absolute coordinate
  int64_t abs_frame = -1;
  int64_t abs_channel = -1;
  bool velocity_exceeded = false;
  bool outlier_exceeded = false;
};

// Pure predicate: discard when the per-frame step or the absolute value
// exceeds its threshold anywhere.
inline JitterDecision jitter_filter(const MotionSequence& m, double vel_threshold,
                                    double outlier_threshold) {
  require(vel_threshold > 0.0 && outlier_threshold > 0.0, ErrorClass::parameter,
          "jitter thresholds must be > 0");
  JitterDecision d;
  for (int64_t t = 0; t < m.frames; ++t)
    for (int64_t c = 0; c < m.channels; ++c) {
      const double a = std::abs(m.at(t, c));
      if (a > d.max_abs) {
        d.max_abs = a;
        d.abs_frame = t;
        d.abs_channel = c;
      }
      if (t > 0) {
        const double s = std::abs(m.at(t, c) - m.at(t - 1, c));
        if (s > d.max_step) {
          d.max_step = s;
          d.step_frame = t;
          d.step_channel = c;
        }
      }
    }
  d.velocity_exceeded = d.max_step > vel_threshold;
  d.outlier_exceeded = d.max_abs > outlier_threshold;
  d.keep = !d.velocity_exceeded && !d.outlier_exceeded;
  return d;
}

}  // namespace attrmogen
