#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "attrmogen/core/errors.hpp"
#include "attrmogen/core/tensor.hpp"

namespace attrmogen {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

inline EMap emap(Tensor& t, int64_t rows, int64_t cols) {
  return EMap(t.data(), rows, cols);
}
inline ECMap emap(const Tensor& t, int64_t rows, int64_t cols) {
  return ECMap(t.data(), rows, cols);
}
inline ECMap emap2(const Tensor& t) {
  require(t.ndim() == 2, ErrorClass::shape, "expected 2-D tensor");
  return ECMap(t.data(), t.dim(0), t.dim(1));
}

// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so the
// reverse of creation order is a valid topological order for backprop. One
// Graph instance is built per training step and discarded afterwards.
class Graph {
 public:
  using Id = int32_t;

  Id leaf(Tensor value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, nullptr);
  }

  const Tensor& value(Id id) const { return nodes_[static_cast<size_t>(id)].value; }

  Tensor& grad(Id id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_set) {
      n.grad = Tensor(n.value.shape());
      n.grad_set = true;
    }
    return n.grad;
  }

  bool has_grad(Id id) const { return nodes_[static_cast<size_t>(id)].grad_set; }
  bool requires_grad(Id id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

  void backward(Id root) {
    require(value(root).numel() == 1, ErrorClass::shape,
            "backward expects a scalar root");
    grad(root)[0] = 1.0;
    for (Id i = root; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.backward && n.grad_set && n.requires_grad) n.backward(*this);
    }
  }

  size_t size() const { return nodes_.size(); }

  // ---------------------------------------------------------------- basics

  Id detach(Id x) {
    return push(Tensor(value(x)), false, nullptr);
  }

  // Forward value is `quantized`; gradients pass through to `pre` unchanged.
  Id straight_through(Id pre, Tensor quantized) {
    require(quantized.same_shape(value(pre)), ErrorClass::shape,
            "straight_through shape mismatch");
    return unary(pre, std::move(quantized), [pre](Graph& g, Id self) {
      accumulate(g.grad(pre), g.grad(self));
    });
  }

  Id add(Id a, Id b) {
    check_same(a, b, "add");
    Tensor out(value(a));
    const Tensor& vb = value(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
    return binary(a, b, std::move(out), [a, b](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      if (g.requires_grad(a)) accumulate(g.grad(a), go);
      if (g.requires_grad(b)) accumulate(g.grad(b), go);
    });
  }

  Id sub(Id a, Id b) {
    check_same(a, b, "sub");
    Tensor out(value(a));
    const Tensor& vb = value(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= vb[i];
    return binary(a, b, std::move(out), [a, b](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      if (g.requires_grad(a)) accumulate(g.grad(a), go);
      if (g.requires_grad(b)) {
        Tensor& gb = g.grad(b);
        for (int64_t i = 0; i < go.numel(); ++i) gb[i] -= go[i];
      }
    });
  }

  Id mul(Id a, Id b) {
    check_same(a, b, "mul");
    Tensor out(value(a));
    const Tensor& vb = value(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= vb[i];
    return binary(a, b, std::move(out), [a, b](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      if (g.requires_grad(a)) {
        Tensor& ga = g.grad(a);
        const Tensor& vb2 = g.value(b);
        for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * vb2[i];
      }
      if (g.requires_grad(b)) {
        Tensor& gb = g.grad(b);
        const Tensor& va2 = g.value(a);
        for (int64_t i = 0; i < go.numel(); ++i) gb[i] += go[i] * va2[i];
      }
    });
  }

  Id scale(Id x, double c) {
    Tensor out(value(x));
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
    return unary(x, std::move(out), [x, c](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      Tensor& gx = g.grad(x);
      for (int64_t i = 0; i < go.numel(); ++i) gx[i] += c * go[i];
    });
  }

  Id add_scalar(Id x, double c) {
    Tensor out(value(x));
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += c;
    return unary(x, std::move(out), [x](Graph& g, Id self) {
      accumulate(g.grad(x), g.grad(self));
    });
  }

  Id relu(Id x) {
    Tensor out(value(x));
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(0.0, out[i]);
    return unary(x, std::move(out), [x](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      const Tensor& vx = g.value(x);
      Tensor& gx = g.grad(x);
      for (int64_t i = 0; i < go.numel(); ++i)
        if (vx[i] > 0.0) gx[i] += go[i];
    });
  }

  // ------------------------------------------------------------- matmuls

  Id matmul(Id a, Id b) {  // [m,k] x [k,n]
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    require(va.ndim() == 2 && vb.ndim() == 2 && va.dim(1) == vb.dim(0),
            ErrorClass::shape, "matmul shape mismatch");
    Tensor out({va.dim(0), vb.dim(1)});
    emap(out, out.dim(0), out.dim(1)).noalias() = emap2(va) * emap2(vb);
    return binary(a, b, std::move(out), [a, b](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      const Tensor& va2 = g.value(a);
      const Tensor& vb2 = g.value(b);
      ECMap mg(go.data(), va2.dim(0), vb2.dim(1));
      if (g.requires_grad(a)) {
        Tensor& ga = g.grad(a);
        emap(ga, va2.dim(0), va2.dim(1)).noalias() += mg * emap2(vb2).transpose();
      }
      if (g.requires_grad(b)) {
        Tensor& gb = g.grad(b);
        emap(gb, vb2.dim(0), vb2.dim(1)).noalias() += emap2(va2).transpose() * mg;
      }
    });
  }

  Id matmul_tn(Id a, Id b) {  // aᵀ·b : [k,m]ᵀ x [k,n] → [m,n]
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    require(va.ndim() == 2 && vb.ndim() == 2 && va.dim(0) == vb.dim(0),
            ErrorClass::shape, "matmul_tn shape mismatch");
    Tensor out({va.dim(1), vb.dim(1)});
    emap(out, out.dim(0), out.dim(1)).noalias() = emap2(va).transpose() * emap2(vb);
    return binary(a, b, std::move(out), [a, b](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      const Tensor& va2 = g.value(a);
      const Tensor& vb2 = g.value(b);
      ECMap mg(go.data(), va2.dim(1), vb2.dim(1));
      if (g.requires_grad(a)) {
        Tensor& ga = g.grad(a);
        emap(ga, va2.dim(0), va2.dim(1)).noalias() += emap2(vb2) * mg.transpose();
      }
      if (g.requires_grad(b)) {
        Tensor& gb = g.grad(b);
        emap(gb, vb2.dim(0), vb2.dim(1)).noalias() += emap2(va2) * mg;
      }
    });
  }

  Id matmul_nt(Id a, Id b) {  // a·bᵀ : [m,k] x [n,k]ᵀ → [m,n]
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    require(va.ndim() == 2 && vb.ndim() == 2 && va.dim(1) == vb.dim(1),
            ErrorClass::shape, "matmul_nt shape mismatch");
    Tensor out({va.dim(0), vb.dim(0)});
    emap(out, out.dim(0), out.dim(1)).noalias() = emap2(va) * emap2(vb).transpose();
    return binary(a, b, std::move(out), [a, b](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      const Tensor& va2 = g.value(a);
      const Tensor& vb2 = g.value(b);
      ECMap mg(go.data(), va2.dim(0), vb2.dim(0));
      if (g.requires_grad(a)) {
        Tensor& ga = g.grad(a);
        emap(ga, va2.dim(0), va2.dim(1)).noalias() += mg * emap2(vb2);
      }
      if (g.requires_grad(b)) {
        Tensor& gb = g.grad(b);
        emap(gb, vb2.dim(0), vb2.dim(1)).noalias() += mg.transpose() * emap2(va2);
      }
    });
  }

  Id add_rows_bcast(Id x, Id bias) {  // x [N,D] + bias [D]
    const Tensor& vx = value(x);
    const Tensor& vb = value(bias);
    require(vx.ndim() == 2 && vb.numel() == vx.dim(1), ErrorClass::shape,
            "add_rows_bcast shape mismatch");
    Tensor out(vx);
    const int64_t n = vx.dim(0), d = vx.dim(1);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < d; ++j) out[i * d + j] += vb[j];
    return binary(x, bias, std::move(out), [x, bias](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      const int64_t n2 = go.dim(0), d2 = go.dim(1);
      if (g.requires_grad(x)) accumulate(g.grad(x), go);
      if (g.requires_grad(bias)) {
        Tensor& gb = g.grad(bias);
        for (int64_t i = 0; i < n2; ++i)
          for (int64_t j = 0; j < d2; ++j) gb[j] += go[i * d2 + j];
      }
    });
  }

  // Row-major x [N,in] with weight [out,in]: y = x·Wᵀ + b.
  Id affine(Id x, Id w, Id b) { return add_rows_bcast(matmul_nt(x, w), b); }

  // -------------------------------------------------------- convolutions

  // x [B,Cin,L], w [Cout,Cin,k], b [Cout] → [B,Cout,Lout]
  Id conv1d(Id x, Id w, Id b, int stride, int pad) {
    const Tensor& vx = value(x);
    const Tensor& vw = value(w);
    require(vx.ndim() == 3 && vw.ndim() == 3 && vx.dim(1) == vw.dim(1),
            ErrorClass::shape, "conv1d shape mismatch");
    const int64_t B = vx.dim(0), cin = vx.dim(1), L = vx.dim(2);
    const int64_t cout = vw.dim(0), k = vw.dim(2);
    const int64_t lout = (L + 2 * pad - k) / stride + 1;
    require(lout >= 1, ErrorClass::shape, "conv1d output length < 1");

    Tensor out({B, cout, lout});
    Tensor cols({cin * k, lout});
    ECMap wm(vw.data(), cout, cin * k);
    for (int64_t bb = 0; bb < B; ++bb) {
      im2col(vx.data() + bb * cin * L, cin, L, k, stride, pad, lout, cols.data());
      EMap om(out.data() + bb * cout * lout, cout, lout);
      om.noalias() = wm * emap(cols, cin * k, lout);
    }
    if (b >= 0) {
      const Tensor& vb = value(b);
      require(vb.numel() == cout, ErrorClass::shape, "conv1d bias mismatch");
      for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t c = 0; c < cout; ++c)
          for (int64_t t = 0; t < lout; ++t) out.at(bb, c, t) += vb[c];
    }

    auto bw = [x, w, b, stride, pad](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      const Tensor& vx2 = g.value(x);
      const Tensor& vw2 = g.value(w);
      const int64_t B2 = vx2.dim(0), cin2 = vx2.dim(1), L2 = vx2.dim(2);
      const int64_t cout2 = vw2.dim(0), k2 = vw2.dim(2);
      const int64_t lout2 = go.dim(2);
      Tensor cols({cin2 * k2, lout2});
      ECMap wm2(vw2.data(), cout2, cin2 * k2);
      const bool need_x = g.requires_grad(x);
      const bool need_w = g.requires_grad(w);
      for (int64_t bb = 0; bb < B2; ++bb) {
        ECMap gom(go.data() + bb * cout2 * lout2, cout2, lout2);
        if (need_w) {
          im2col(vx2.data() + bb * cin2 * L2, cin2, L2, k2, stride, pad, lout2,
                 cols.data());
          Tensor& gw = g.grad(w);
          emap(gw, cout2, cin2 * k2).noalias() +=
              gom * emap(cols, cin2 * k2, lout2).transpose();
        }
        if (need_x) {
          Tensor gcols({cin2 * k2, lout2});
          emap(gcols, cin2 * k2, lout2).noalias() = wm2.transpose() * gom;
          Tensor& gx = g.grad(x);
          col2im_add(gcols.data(), cin2, L2, k2, stride, pad, lout2,
                     gx.data() + bb * cin2 * L2);
        }
      }
      if (b >= 0 && g.requires_grad(b)) {
        Tensor& gb = g.grad(b);
        for (int64_t bb = 0; bb < B2; ++bb)
          for (int64_t c = 0; c < cout2; ++c)
            for (int64_t t = 0; t < lout2; ++t) gb[c] += go.at(bb, c, t);
      }
    };
    Id id = push(std::move(out),
                 requires_grad(x) || requires_grad(w) || (b >= 0 && requires_grad(b)),
                 nullptr);
    set_backward(id, bw);
    return id;
  }

  // x [B,Cin,T], w [Cin,Cout,k], b [Cout] → [B,Cout,Lout], Lout=(T−1)s+k−2p
  Id conv1d_transpose(Id x, Id w, Id b, int stride, int pad) {
    const Tensor& vx = value(x);
    const Tensor& vw = value(w);
    require(vx.ndim() == 3 && vw.ndim() == 3 && vx.dim(1) == vw.dim(0),
            ErrorClass::shape, "conv1d_transpose shape mismatch");
    const int64_t B = vx.dim(0), cin = vx.dim(1), T = vx.dim(2);
    const int64_t cout = vw.dim(1), k = vw.dim(2);
    const int64_t lout = (T - 1) * stride + k - 2 * pad;
    require(lout >= 1, ErrorClass::shape, "conv1d_transpose output length < 1");

    Tensor out({B, cout, lout});
    Tensor cols({cout * k, T});
    ECMap wm(vw.data(), cin, cout * k);
    for (int64_t bb = 0; bb < B; ++bb) {
      ECMap xm(vx.data() + bb * cin * T, cin, T);
      emap(cols, cout * k, T).noalias() = wm.transpose() * xm;
      col2im_add(cols.data(), cout, lout, k, stride, pad, T,
                 out.data() + bb * cout * lout);
    }
    if (b >= 0) {
      const Tensor& vb = value(b);
      require(vb.numel() == cout, ErrorClass::shape, "conv1d_transpose bias mismatch");
      for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t c = 0; c < cout; ++c)
          for (int64_t t = 0; t < lout; ++t) out.at(bb, c, t) += vb[c];
    }

    auto bw = [x, w, b, stride, pad](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      const Tensor& vx2 = g.value(x);
      const Tensor& vw2 = g.value(w);
      const int64_t B2 = vx2.dim(0), cin2 = vx2.dim(1), T2 = vx2.dim(2);
      const int64_t cout2 = vw2.dim(1), k2 = vw2.dim(2);
      const int64_t lout2 = go.dim(2);
      Tensor gcols({cout2 * k2, T2});
      ECMap wm2(vw2.data(), cin2, cout2 * k2);
      const bool need_x = g.requires_grad(x);
      const bool need_w = g.requires_grad(w);
      for (int64_t bb = 0; bb < B2; ++bb) {
        im2col(go.data() + bb * cout2 * lout2, cout2, lout2, k2, stride, pad, T2,
               gcols.data());
        if (need_x) {
          Tensor& gx = g.grad(x);
          EMap gxm(gx.data() + bb * cin2 * T2, cin2, T2);
          gxm.noalias() += wm2 * emap(gcols, cout2 * k2, T2);
        }
        if (need_w) {
          ECMap xm(vx2.data() + bb * cin2 * T2, cin2, T2);
          Tensor& gw = g.grad(w);
          emap(gw, cin2, cout2 * k2).noalias() +=
              xm * emap(gcols, cout2 * k2, T2).transpose();
        }
      }
      if (b >= 0 && g.requires_grad(b)) {
        Tensor& gb = g.grad(b);
        for (int64_t bb = 0; bb < B2; ++bb)
          for (int64_t c = 0; c < cout2; ++c)
            for (int64_t t = 0; t < lout2; ++t) gb[c] += go.at(bb, c, t);
      }
    };
    Id id = push(std::move(out),
                 requires_grad(x) || requires_grad(w) || (b >= 0 && requires_grad(b)),
                 nullptr);
    set_backward(id, bw);
    return id;
  }

  // ----------------------------------------------------- layout reshapes

  // [B,C,T] → [B·T, C]: row (b·T + t) holds the channel vector at time t.
  Id bct_to_rows(Id x) {
    const Tensor& vx = value(x);
    require(vx.ndim() == 3, ErrorClass::shape, "bct_to_rows expects 3-D");
    const int64_t B = vx.dim(0), C = vx.dim(1), T = vx.dim(2);
    Tensor out({B * T, C});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t t = 0; t < T; ++t) out.at(b * T + t, c) = vx.at(b, c, t);
    return unary(x, std::move(out), [x](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      Tensor& gx = g.grad(x);
      const int64_t B2 = gx.dim(0), C2 = gx.dim(1), T2 = gx.dim(2);
      for (int64_t b = 0; b < B2; ++b)
        for (int64_t c = 0; c < C2; ++c)
          for (int64_t t = 0; t < T2; ++t) gx.at(b, c, t) += go.at(b * T2 + t, c);
    });
  }

  Id rows_to_bct(Id x, int64_t B, int64_t T) {
    const Tensor& vx = value(x);
    require(vx.ndim() == 2 && vx.dim(0) == B * T, ErrorClass::shape,
            "rows_to_bct shape mismatch");
    const int64_t C = vx.dim(1);
    Tensor out({B, C, T});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t t = 0; t < T; ++t) out.at(b, c, t) = vx.at(b * T + t, c);
    return unary(x, std::move(out), [x, B, T](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      Tensor& gx = g.grad(x);
      const int64_t C2 = gx.dim(1);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C2; ++c)
          for (int64_t t = 0; t < T; ++t) gx.at(b * T + t, c) += go.at(b, c, t);
    });
  }

  Id mean_last(Id x) {  // [B,C,T] → [B,C]
    const Tensor& vx = value(x);
    require(vx.ndim() == 3, ErrorClass::shape, "mean_last expects 3-D");
    const int64_t B = vx.dim(0), C = vx.dim(1), T = vx.dim(2);
    Tensor out({B, C});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (int64_t t = 0; t < T; ++t) s += vx.at(b, c, t);
        out.at(b, c) = s / static_cast<double>(T);
      }
    return unary(x, std::move(out), [x](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      Tensor& gx = g.grad(x);
      const int64_t B2 = gx.dim(0), C2 = gx.dim(1), T2 = gx.dim(2);
      const double inv = 1.0 / static_cast<double>(T2);
      for (int64_t b = 0; b < B2; ++b)
        for (int64_t c = 0; c < C2; ++c) {
          const double gv = go.at(b, c) * inv;
          for (int64_t t = 0; t < T2; ++t) gx.at(b, c, t) += gv;
        }
    });
  }

  // ------------------------------------------------- gathers and slices

  Id gather_rows(Id table, std::vector<int64_t> idx) {
    const Tensor& vt = value(table);
    require(vt.ndim() == 2, ErrorClass::shape, "gather_rows expects 2-D table");
    const int64_t D = vt.dim(1);
    Tensor out({static_cast<int64_t>(idx.size()), D});
    for (size_t i = 0; i < idx.size(); ++i) {
      require(idx[i] >= 0 && idx[i] < vt.dim(0), ErrorClass::shape,
              "gather index out of range");
      std::copy(vt.data() + idx[i] * D, vt.data() + (idx[i] + 1) * D,
                out.data() + static_cast<int64_t>(i) * D);
    }
    auto ix = std::make_shared<std::vector<int64_t>>(std::move(idx));
    return unary(table, std::move(out), [table, ix](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      Tensor& gt = g.grad(table);
      const int64_t D2 = gt.dim(1);
      for (size_t i = 0; i < ix->size(); ++i) {
        const int64_t r = (*ix)[i];
        for (int64_t j = 0; j < D2; ++j)
          gt[r * D2 + j] += go[static_cast<int64_t>(i) * D2 + j];
      }
    });
  }

  Id select_rows(Id x, std::vector<int64_t> idx) { return gather_rows(x, std::move(idx)); }

  Id slice_cols(Id x, int64_t c0, int64_t c1) {
    const Tensor& vx = value(x);
    require(vx.ndim() == 2 && 0 <= c0 && c0 < c1 && c1 <= vx.dim(1),
            ErrorClass::shape, "slice_cols range invalid");
    const int64_t n = vx.dim(0), d = vx.dim(1), w = c1 - c0;
    Tensor out({n, w});
    for (int64_t i = 0; i < n; ++i)
      std::copy(vx.data() + i * d + c0, vx.data() + i * d + c1, out.data() + i * w);
    return unary(x, std::move(out), [x, c0, c1](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      Tensor& gx = g.grad(x);
      const int64_t n2 = gx.dim(0), d2 = gx.dim(1), w2 = c1 - c0;
      for (int64_t i = 0; i < n2; ++i)
        for (int64_t j = 0; j < w2; ++j) gx[i * d2 + c0 + j] += go[i * w2 + j];
    });
  }

  Id hconcat(const std::vector<Id>& xs) {
    require(!xs.empty(), ErrorClass::shape, "hconcat of nothing");
    const int64_t n = value(xs[0]).dim(0);
    int64_t total = 0;
    for (Id id : xs) {
      require(value(id).ndim() == 2 && value(id).dim(0) == n, ErrorClass::shape,
              "hconcat row mismatch");
      total += value(id).dim(1);
    }
    Tensor out({n, total});
    int64_t off = 0;
    for (Id id : xs) {
      const Tensor& v = value(id);
      const int64_t w = v.dim(1);
      for (int64_t i = 0; i < n; ++i)
        std::copy(v.data() + i * w, v.data() + (i + 1) * w,
                  out.data() + i * total + off);
      off += w;
    }
    bool rg = false;
    for (Id id : xs) rg = rg || requires_grad(id);
    auto parts = std::make_shared<std::vector<Id>>(xs);
    Id id = push(std::move(out), rg, nullptr);
    set_backward(id, [parts, total](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      const int64_t n2 = go.dim(0);
      int64_t off2 = 0;
      for (Id p : *parts) {
        const int64_t w = g.value(p).dim(1);
        if (g.requires_grad(p)) {
          Tensor& gp = g.grad(p);
          for (int64_t i = 0; i < n2; ++i)
            for (int64_t j = 0; j < w; ++j) gp[i * w + j] += go[i * total + off2 + j];
        }
        off2 += w;
      }
    });
    return id;
  }

  // rows [B·T, Dc] with attr [B, Da] broadcast over T → [B·T, Dc+Da]
  Id concat_bcast_time(Id rows, Id attr, int64_t B, int64_t T) {
    const Tensor& vr = value(rows);
    const Tensor& va = value(attr);
    require(vr.ndim() == 2 && vr.dim(0) == B * T && va.ndim() == 2 && va.dim(0) == B,
            ErrorClass::shape, "concat_bcast_time shape mismatch");
    const int64_t dc = vr.dim(1), da = va.dim(1);
    Tensor out({B * T, dc + da});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t t = 0; t < T; ++t) {
        const int64_t r = b * T + t;
        std::copy(vr.data() + r * dc, vr.data() + (r + 1) * dc,
                  out.data() + r * (dc + da));
        std::copy(va.data() + b * da, va.data() + (b + 1) * da,
                  out.data() + r * (dc + da) + dc);
      }
    return binary(rows, attr, std::move(out), [rows, attr, B, T](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      const int64_t dc2 = g.value(rows).dim(1), da2 = g.value(attr).dim(1);
      const int64_t w = dc2 + da2;
      if (g.requires_grad(rows)) {
        Tensor& gr = g.grad(rows);
        for (int64_t r = 0; r < B * T; ++r)
          for (int64_t j = 0; j < dc2; ++j) gr[r * dc2 + j] += go[r * w + j];
      }
      if (g.requires_grad(attr)) {
        Tensor& ga = g.grad(attr);
        for (int64_t b = 0; b < B; ++b)
          for (int64_t t = 0; t < T; ++t)
            for (int64_t j = 0; j < da2; ++j)
              ga[b * da2 + j] += go[(b * T + t) * w + dc2 + j];
      }
    });
  }

  // Mean of table rows per bag (bag-of-words text stub).
  Id bag_mean(Id table, const std::vector<std::vector<int64_t>>& bags) {
    const Tensor& vt = value(table);
    require(vt.ndim() == 2, ErrorClass::shape, "bag_mean expects 2-D table");
    const int64_t D = vt.dim(1);
    Tensor out({static_cast<int64_t>(bags.size()), D});
    for (size_t i = 0; i < bags.size(); ++i) {
      require(!bags[i].empty(), ErrorClass::parameter, "empty bag");
      for (int64_t w : bags[i])
        for (int64_t j = 0; j < D; ++j)
          out.at(static_cast<int64_t>(i), j) += vt.at(w, j);
      const double inv = 1.0 / static_cast<double>(bags[i].size());
      for (int64_t j = 0; j < D; ++j) out.at(static_cast<int64_t>(i), j) *= inv;
    }
    auto bg = std::make_shared<std::vector<std::vector<int64_t>>>(bags);
    return unary(table, std::move(out), [table, bg](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      Tensor& gt = g.grad(table);
      const int64_t D2 = gt.dim(1);
      for (size_t i = 0; i < bg->size(); ++i) {
        const double inv = 1.0 / static_cast<double>((*bg)[i].size());
        for (int64_t w : (*bg)[i])
          for (int64_t j = 0; j < D2; ++j)
            gt.at(w, j) += go.at(static_cast<int64_t>(i), j) * inv;
      }
    });
  }

  // ------------------------------------------------------- reductions

  Id sum_all(Id x) {
    const Tensor& vx = value(x);
    double s = 0.0;
    for (int64_t i = 0; i < vx.numel(); ++i) s += vx[i];
    Tensor out({1});
    out[0] = s;
    return unary(x, std::move(out), [x](Graph& g, Id self) {
      const double gv = g.grad(self)[0];
      Tensor& gx = g.grad(x);
      for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += gv;
    });
  }

  Id mean_all(Id x) {
    const int64_t n = value(x).numel();
    return scale(sum_all(x), 1.0 / static_cast<double>(n));
  }

  Id mse(Id a, Id b) {
    check_same(a, b, "mse");
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    const int64_t n = va.numel();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double d = va[i] - vb[i];
      s += d * d;
    }
    Tensor out({1});
    out[0] = s / static_cast<double>(n);
    return binary(a, b, std::move(out), [a, b](Graph& g, Id self) {
      const double gv = g.grad(self)[0];
      const Tensor& va2 = g.value(a);
      const Tensor& vb2 = g.value(b);
      const int64_t n2 = va2.numel();
      const double c = 2.0 * gv / static_cast<double>(n2);
      if (g.requires_grad(a)) {
        Tensor& ga = g.grad(a);
        for (int64_t i = 0; i < n2; ++i) ga[i] += c * (va2[i] - vb2[i]);
      }
      if (g.requires_grad(b)) {
        Tensor& gb = g.grad(b);
        for (int64_t i = 0; i < n2; ++i) gb[i] -= c * (va2[i] - vb2[i]);
      }
    });
  }

  // ------------------------------------------------ rowwise nonlinearity

  Id softmax_rows(Id x) {
    const Tensor& vx = value(x);
    require(vx.ndim() == 2, ErrorClass::shape, "softmax_rows expects 2-D");
    const int64_t n = vx.dim(0), k = vx.dim(1);
    Tensor out(vx);
    for (int64_t i = 0; i < n; ++i) {
      double m = out[i * k];
      for (int64_t j = 1; j < k; ++j) m = std::max(m, out[i * k + j]);
      double z = 0.0;
      for (int64_t j = 0; j < k; ++j) {
        out[i * k + j] = std::exp(out[i * k + j] - m);
        z += out[i * k + j];
      }
      for (int64_t j = 0; j < k; ++j) out[i * k + j] /= z;
    }
    return unary(x, std::move(out), [x](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      const Tensor& p = g.value(self);
      Tensor& gx = g.grad(x);
      const int64_t n2 = p.dim(0), k2 = p.dim(1);
      for (int64_t i = 0; i < n2; ++i) {
        double dot = 0.0;
        for (int64_t j = 0; j < k2; ++j) dot += go[i * k2 + j] * p[i * k2 + j];
        for (int64_t j = 0; j < k2; ++j)
          gx[i * k2 + j] += p[i * k2 + j] * (go[i * k2 + j] - dot);
      }
    });
  }

  // Mean cross-entropy over rows; natural log.
  Id cross_entropy_rows(Id logits, std::vector<int64_t> labels) {
    const Tensor& vl = value(logits);
    require(vl.ndim() == 2 && vl.dim(0) == static_cast<int64_t>(labels.size()),
            ErrorClass::shape, "cross_entropy_rows shape mismatch");
    const int64_t n = vl.dim(0), k = vl.dim(1);
    for (int64_t y : labels)
      require(y >= 0 && y < k, ErrorClass::label, "label out of range");
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double m = vl[i * k];
      for (int64_t j = 1; j < k; ++j) m = std::max(m, vl[i * k + j]);
      double z = 0.0;
      for (int64_t j = 0; j < k; ++j) z += std::exp(vl[i * k + j] - m);
      loss += m + std::log(z) - vl[i * k + labels[static_cast<size_t>(i)]];
    }
    Tensor out({1});
    out[0] = loss / static_cast<double>(n);
    auto lb = std::make_shared<std::vector<int64_t>>(std::move(labels));
    return unary(logits, std::move(out), [logits, lb](Graph& g, Id self) {
      const double gv = g.grad(self)[0];
      const Tensor& vl2 = g.value(logits);
      Tensor& gl = g.grad(logits);
      const int64_t n2 = vl2.dim(0), k2 = vl2.dim(1);
      const double c = gv / static_cast<double>(n2);
      for (int64_t i = 0; i < n2; ++i) {
        double m = vl2[i * k2];
        for (int64_t j = 1; j < k2; ++j) m = std::max(m, vl2[i * k2 + j]);
        double z = 0.0;
        for (int64_t j = 0; j < k2; ++j) z += std::exp(vl2[i * k2 + j] - m);
        for (int64_t j = 0; j < k2; ++j) {
          const double p = std::exp(vl2[i * k2 + j] - m) / z;
          const double onehot = (j == (*lb)[static_cast<size_t>(i)]) ? 1.0 : 0.0;
          gl[i * k2 + j] += c * (p - onehot);
        }
      }
    });
  }

  // Σ_i Σ_j p·ln p with 0·ln 0 := 0 (the entropy loss body).
  Id xlogx_sum(Id probs) {
    const Tensor& vp = value(probs);
    double s = 0.0;
    for (int64_t i = 0; i < vp.numel(); ++i)
      if (vp[i] > 0.0) s += vp[i] * std::log(vp[i]);
    Tensor out({1});
    out[0] = s;
    return unary(probs, std::move(out), [probs](Graph& g, Id self) {
      const double gv = g.grad(self)[0];
      const Tensor& vp2 = g.value(probs);
      Tensor& gp = g.grad(probs);
      for (int64_t i = 0; i < vp2.numel(); ++i)
        if (vp2[i] > 0.0) gp[i] += gv * (std::log(vp2[i]) + 1.0);
    });
  }

  Id layer_norm_rows(Id x, Id gamma, Id beta, double eps = 1e-5) {
    const Tensor& vx = value(x);
    require(vx.ndim() == 2, ErrorClass::shape, "layer_norm_rows expects 2-D");
    const int64_t n = vx.dim(0), d = vx.dim(1);
    require(value(gamma).numel() == d && value(beta).numel() == d, ErrorClass::shape,
            "layer_norm affine mismatch");
    Tensor out({n, d});
    Tensor xhat({n, d});
    Tensor inv_sigma({n});
    const Tensor& vg = value(gamma);
    const Tensor& vb = value(beta);
    for (int64_t i = 0; i < n; ++i) {
      double mu = 0.0;
      for (int64_t j = 0; j < d; ++j) mu += vx[i * d + j];
      mu /= static_cast<double>(d);
      double var = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        const double c = vx[i * d + j] - mu;
        var += c * c;
      }
      var /= static_cast<double>(d);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_sigma[i] = is;
      for (int64_t j = 0; j < d; ++j) {
        const double xh = (vx[i * d + j] - mu) * is;
        xhat[i * d + j] = xh;
        out[i * d + j] = xh * vg[j] + vb[j];
      }
    }
    auto xh = std::make_shared<Tensor>(std::move(xhat));
    auto is = std::make_shared<Tensor>(std::move(inv_sigma));
    bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
    Id id = push(std::move(out), rg, nullptr);
    set_backward(id, [x, gamma, beta, xh, is](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      const Tensor& vg2 = g.value(gamma);
      const int64_t n2 = go.dim(0), d2 = go.dim(1);
      if (g.requires_grad(beta)) {
        Tensor& gb = g.grad(beta);
        for (int64_t i = 0; i < n2; ++i)
          for (int64_t j = 0; j < d2; ++j) gb[j] += go[i * d2 + j];
      }
      if (g.requires_grad(gamma)) {
        Tensor& gg = g.grad(gamma);
        for (int64_t i = 0; i < n2; ++i)
          for (int64_t j = 0; j < d2; ++j) gg[j] += go[i * d2 + j] * (*xh)[i * d2 + j];
      }
      if (g.requires_grad(x)) {
        Tensor& gx = g.grad(x);
        for (int64_t i = 0; i < n2; ++i) {
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (int64_t j = 0; j < d2; ++j) {
            const double dxh = go[i * d2 + j] * vg2[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * (*xh)[i * d2 + j];
          }
          mean_dxh /= static_cast<double>(d2);
          mean_dxh_xh /= static_cast<double>(d2);
          for (int64_t j = 0; j < d2; ++j) {
            const double dxh = go[i * d2 + j] * vg2[j];
            gx[i * d2 + j] +=
                (*is)[i] * (dxh - mean_dxh - (*xh)[i * d2 + j] * mean_dxh_xh);
          }
        }
      }
    });
    return id;
  }

  // Columns scaled to unit L2 norm; columns with norm ≤ zero_eps map to zero
  // (their cosine similarity is defined as 0).
  Id l2_normalize_cols(Id x, double zero_eps = 1e-8) {
    const Tensor& vx = value(x);
    require(vx.ndim() == 2, ErrorClass::shape, "l2_normalize_cols expects 2-D");
    const int64_t n = vx.dim(0), d = vx.dim(1);
    Tensor out({n, d});
    Tensor norms({d});
    for (int64_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (int64_t i = 0; i < n; ++i) s += vx[i * d + j] * vx[i * d + j];
      const double nr = std::sqrt(s);
      norms[j] = nr;
      if (nr > zero_eps)
        for (int64_t i = 0; i < n; ++i) out[i * d + j] = vx[i * d + j] / nr;
    }
    auto nm = std::make_shared<Tensor>(std::move(norms));
    return unary(x, std::move(out), [x, nm, zero_eps](Graph& g, Id self) {
      const Tensor& go = g.grad(self);
      const Tensor& vh = g.value(self);  // normalized columns
      Tensor& gx = g.grad(x);
      const int64_t n2 = go.dim(0), d2 = go.dim(1);
      for (int64_t j = 0; j < d2; ++j) {
        const double nr = (*nm)[j];
        if (nr <= zero_eps) continue;
        double dot = 0.0;
        for (int64_t i = 0; i < n2; ++i) dot += go[i * d2 + j] * vh[i * d2 + j];
        for (int64_t i = 0; i < n2; ++i)
          gx[i * d2 + j] += (go[i * d2 + j] - vh[i * d2 + j] * dot) / nr;
      }
    });
  }

  Id frob_identity_loss(Id m) {  // Σ (m − I)² for square m
    const Tensor& vm = value(m);
    require(vm.ndim() == 2 && vm.dim(0) == vm.dim(1), ErrorClass::shape,
            "frob_identity_loss expects square matrix");
    const int64_t d = vm.dim(0);
    double s = 0.0;
    for (int64_t i = 0; i < d; ++i)
      for (int64_t j = 0; j < d; ++j) {
        const double c = vm[i * d + j] - (i == j ? 1.0 : 0.0);
        s += c * c;
      }
    Tensor out({1});
    out[0] = s;
    return unary(m, std::move(out), [m](Graph& g, Id self) {
      const double gv = g.grad(self)[0];
      const Tensor& vm2 = g.value(m);
      Tensor& gm = g.grad(m);
      const int64_t d2 = vm2.dim(0);
      for (int64_t i = 0; i < d2; ++i)
        for (int64_t j = 0; j < d2; ++j)
          gm[i * d2 + j] += 2.0 * gv * (vm2[i * d2 + j] - (i == j ? 1.0 : 0.0));
    });
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Graph&)> backward;
    bool requires_grad = false;
    bool grad_set = false;
  };

  std::vector<Node> nodes_;

  Id push(Tensor v, bool rg, std::function<void(Graph&)> bw) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = rg;
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  template <typename F>
  void set_backward(Id id, F f) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.requires_grad) n.backward = [f, id](Graph& g) { f(g, id); };
  }

  template <typename F>
  Id unary(Id x, Tensor out, F bw) {
    Id id = push(std::move(out), requires_grad(x), nullptr);
    set_backward(id, bw);
    return id;
  }

  template <typename F>
  Id binary(Id a, Id b, Tensor out, F bw) {
    Id id = push(std::move(out), requires_grad(a) || requires_grad(b), nullptr);
    set_backward(id, bw);
    return id;
  }

  void check_same(Id a, Id b, const char* op) {
    require(value(a).same_shape(value(b)), ErrorClass::shape,
            std::string(op) + " shape mismatch " + value(a).shape_string() + " vs " +
                value(b).shape_string());
  }

  static void accumulate(Tensor& dst, const Tensor& src) {
    for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
  }

  // cols [C·k, Lout]: cols[(c·k+kk), t] = x[c, t·stride + kk − pad] or 0.
  static void im2col(const double* x, int64_t C, int64_t L, int64_t k, int64_t stride,
                     int64_t pad, int64_t lout, double* cols) {
    for (int64_t c = 0; c < C; ++c)
      for (int64_t kk = 0; kk < k; ++kk) {
        double* row = cols + (c * k + kk) * lout;
        for (int64_t t = 0; t < lout; ++t) {
          const int64_t src = t * stride + kk - pad;
          row[t] = (src >= 0 && src < L) ? x[c * L + src] : 0.0;
        }
      }
  }

  // Scatter-add inverse of im2col.
  static void col2im_add(const double* cols, int64_t C, int64_t L, int64_t k,
                         int64_t stride, int64_t pad, int64_t lout, double* x) {
    for (int64_t c = 0; c < C; ++c)
      for (int64_t kk = 0; kk < k; ++kk) {
        const double* row = cols + (c * k + kk) * lout;
        for (int64_t t = 0; t < lout; ++t) {
          const int64_t dst = t * stride + kk - pad;
          if (dst >= 0 && dst < L) x[c * L + dst] += row[t];
        }
      }
  }
};

}  // namespace attrmogen
