#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "attrmogen/core/graph.hpp"
#include "attrmogen/core/optim.hpp"
#include "attrmogen/core/rng.hpp"
#include "attrmogen/core/serialize.hpp"
#include "attrmogen/core/tensor.hpp"

namespace attrmogen {

// Layers own their weights; forward passes take a Graph and a VarMap so the
// same struct serves training (grad-tracked leaves) and inference.

struct LinearLayer {
  Tensor w;  // [out, in]
  Tensor b;  // [out]

  static LinearLayer init(int64_t in, int64_t out, Rng& rng) {
    LinearLayer l;
    l.w = Tensor::randn({out, in}, rng, std::sqrt(2.0 / static_cast<double>(in)));
    l.b = Tensor({out});
    return l;
  }

  Graph::Id apply(Graph& g, VarMap& vars, Graph::Id x) {
    return g.affine(x, vars(w), vars(b));
  }

  void collect(std::vector<NamedParam>& out, const std::string& prefix) {
    out.push_back({prefix + ".w", &w});
    out.push_back({prefix + ".b", &b});
  }
};

struct Conv1dLayer {
  Tensor w;  // [cout, cin, k]
  Tensor b;  // [cout]
  int stride = 1;
  int pad = 0;

  static Conv1dLayer init(int64_t cin, int64_t cout, int64_t k, int stride, int pad,
                          Rng& rng) {
    Conv1dLayer l;
    l.w = Tensor::randn({cout, cin, k}, rng,
                        std::sqrt(2.0 / static_cast<double>(cin * k)));
    l.b = Tensor({cout});
    l.stride = stride;
    l.pad = pad;
    return l;
  }

  Graph::Id apply(Graph& g, VarMap& vars, Graph::Id x) {
    return g.conv1d(x, vars(w), vars(b), stride, pad);
  }

  void collect(std::vector<NamedParam>& out, const std::string& prefix) {
    out.push_back({prefix + ".w", &w});
    out.push_back({prefix + ".b", &b});
  }
};

struct ConvT1dLayer {
  Tensor w;  // [cin, cout, k]
  Tensor b;  // [cout]
  int stride = 1;
  int pad = 0;

  static ConvT1dLayer init(int64_t cin, int64_t cout, int64_t k, int stride, int pad,
                           Rng& rng) {
    ConvT1dLayer l;
    l.w = Tensor::randn({cin, cout, k}, rng,
                        std::sqrt(2.0 / static_cast<double>(cin * k)));
    l.b = Tensor({cout});
    l.stride = stride;
    l.pad = pad;
    return l;
  }

  Graph::Id apply(Graph& g, VarMap& vars, Graph::Id x) {
    return g.conv1d_transpose(x, vars(w), vars(b), stride, pad);
  }

  void collect(std::vector<NamedParam>& out, const std::string& prefix) {
    out.push_back({prefix + ".w", &w});
    out.push_back({prefix + ".b", &b});
  }
};

struct LayerNormLayer {
  Tensor gamma;
  Tensor beta;

  static LayerNormLayer init(int64_t dim) {
    LayerNormLayer l;
    l.gamma = Tensor::full({dim}, 1.0);
    l.beta = Tensor({dim});
    return l;
  }

  Graph::Id apply(Graph& g, VarMap& vars, Graph::Id x) {
    return g.layer_norm_rows(x, vars(gamma), vars(beta));
  }

  void collect(std::vector<NamedParam>& out, const std::string& prefix) {
    out.push_back({prefix + ".gamma", &gamma});
    out.push_back({prefix + ".beta", &beta});
  }
};

// Serialization helpers shared by the checkpoint containers.
inline void blob_add_params(NamedTensors& nt, const std::vector<NamedParam>& params) {
  for (const NamedParam& p : params) nt.add(p.name, *p.tensor);
}

inline void blob_load_params(const NamedTensors& nt,
                             const std::vector<NamedParam>& params) {
  for (const NamedParam& p : params) {
    const Tensor& t = nt.get(p.name);
    require(t.shape() == p.tensor->shape(), ErrorClass::schema,
            "checkpoint tensor " + p.name + " has shape " + t.shape_string() +
                ", expected " + p.tensor->shape_string());
    *p.tensor = t;
  }
}

// Checksum over parameter bytes; used by tests that assert "weights did not
// move".
inline uint64_t params_checksum(const std::vector<NamedParam>& params) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const NamedParam& p : params) {
    for (int64_t i = 0; i < p.tensor->numel(); ++i) {
      const double v = (*p.tensor)[i];
      const unsigned char* bytes = reinterpret_cast<const unsigned char*>(&v);
      for (size_t b = 0; b < sizeof(double); ++b) {
        h ^= bytes[b];
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

}  // namespace attrmogen
