#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <utility>
#include <vector>

#include "latentlab/numerics/tape.hpp"

namespace latentlab::num {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline ConstMatMap view(const Tensor& t) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}
inline MatMap view(Tensor& t) {
  return MatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

inline void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

inline void axpy(Tensor& dst, const Tensor& src, double s = 1.0) {
  auto d = dst.data();
  auto x = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * x[i];
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace detail

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kCosineNormFloor = 1e-12;

// ---------------------------------------------------------------- plain math

/// Plain (non-tape) matrix product.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Tensor c({a.rows(), b.cols()});
  detail::view(c).noalias() = detail::view(a) * detail::view(b);
  return c;
}

inline Tensor softmax_rows(const Tensor& x) {
  Tensor y = x;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double& v : row) {
      v = std::exp(v - m);
      s += v;
    }
    for (double& v : row) v /= s;
  }
  return y;
}

inline double dot(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

inline double norm(std::span<const double> u) { return std::sqrt(dot(u, u)); }

/// u.v / (|u||v|); 0 when either norm is below 1e-12.
inline double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw ShapeError("cosine: length mismatch " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  }
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu < kCosineNormFloor || nv < kCosineNormFloor) return 0.0;
  const double c = dot(u, v) / (nu * nv);
  return std::clamp(c, -1.0, 1.0);
}

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(detail::kGeluC * (x + detail::kGeluA * x * x * x)));
}

inline double gelu_grad(double x) {
  const double u = detail::kGeluC * (x + detail::kGeluA * x * x * x);
  const double t = std::tanh(u);
  const double du = detail::kGeluC * (1.0 + 3.0 * detail::kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

// ------------------------------------------------------------- tape ops

inline Var matmul(Var a, Var b) {
  Tape& tp = *a.tape;
  Tensor c = matmul(a.value(), b.value());
  return tp.push(OpKind::MatMul, {a.id, b.id}, std::move(c), [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      detail::view(ga).noalias() += detail::view(g) * detail::view(t.value(b)).transpose();
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      detail::view(gb).noalias() += detail::view(t.value(a)).transpose() * detail::view(g);
    }
  });
}

/// a [m x k] times transpose(b) where b is [n x k].
inline Var matmul_bt(Var a, Var b) {
  Tape& tp = *a.tape;
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_matrix(av, "matmul_bt");
  detail::require_matrix(bv, "matmul_bt");
  if (av.cols() != bv.cols()) {
    throw ShapeError("matmul_bt: inner dimensions disagree for " + shape_str(av.shape()) + " x T" +
                     shape_str(bv.shape()));
  }
  Tensor c({av.rows(), bv.rows()});
  detail::view(c).noalias() = detail::view(av) * detail::view(bv).transpose();
  return tp.push(OpKind::MatMulBT, {a.id, b.id}, std::move(c), [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      detail::view(ga).noalias() += detail::view(g) * detail::view(t.value(b));
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      detail::view(gb).noalias() += detail::view(g).transpose() * detail::view(t.value(a));
    }
  });
}

inline Var add(Var a, Var b) {
  detail::require_same(a.value(), b.value(), "add");
  Tensor c = a.value();
  detail::axpy(c, b.value());
  return a.tape->push(OpKind::Add, {a.id, b.id}, std::move(c), [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    if (t.needs_grad(a)) detail::axpy(t.grad_buffer(a), g);
    if (t.needs_grad(b)) detail::axpy(t.grad_buffer(b), g);
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same(a.value(), b.value(), "sub");
  Tensor c = a.value();
  detail::axpy(c, b.value(), -1.0);
  return a.tape->push(OpKind::Sub, {a.id, b.id}, std::move(c), [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    if (t.needs_grad(a)) detail::axpy(t.grad_buffer(a), g);
    if (t.needs_grad(b)) detail::axpy(t.grad_buffer(b), g, -1.0);
  });
}

/// Adds a bias row (shape [n] or [1 x n]) to every row of a [m x n].
inline Var add_row(Var a, Var bias) {
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  if (bv.size() != av.cols()) {
    throw ShapeError("add_row: bias " + shape_str(bv.shape()) + " does not match " + shape_str(av.shape()));
  }
  Tensor c = av;
  for (std::size_t r = 0; r < c.rows(); ++r) {
    auto row = c.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bv[j];
  }
  return a.tape->push(OpKind::AddRow, {a.id, bias.id}, std::move(c),
                      [a = a.id, b = bias.id](Tape& t, std::size_t self) {
                        const Tensor& g = t.upstream(self);
                        if (t.needs_grad(a)) detail::axpy(t.grad_buffer(a), g);
                        if (t.needs_grad(b)) {
                          Tensor& gb = t.grad_buffer(b);
                          for (std::size_t r = 0; r < g.rows(); ++r) {
                            auto row = g.row(r);
                            for (std::size_t j = 0; j < row.size(); ++j) gb[j] += row[j];
                          }
                        }
                      });
}

inline Var add_scalar(Var a, double s) {
  Tensor c = a.value();
  for (double& v : c.data()) v += s;
  return a.tape->push(OpKind::AddScalar, {a.id}, std::move(c), [a = a.id](Tape& t, std::size_t self) {
    detail::axpy(t.grad_buffer(a), t.upstream(self));
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same(a.value(), b.value(), "mul");
  Tensor c = a.value();
  const auto bv = b.value().data();
  auto cv = c.data();
  for (std::size_t i = 0; i < cv.size(); ++i) cv[i] *= bv[i];
  return a.tape->push(OpKind::Mul, {a.id, b.id}, std::move(c), [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const auto g = t.upstream(self).data();
    if (t.needs_grad(a)) {
      auto ga = t.grad_buffer(a).data();
      const auto bv = t.value(b).data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(b)) {
      auto gb = t.grad_buffer(b).data();
      const auto av = t.value(a).data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var a, double s) {
  Tensor c = a.value();
  for (double& v : c.data()) v *= s;
  return a.tape->push(OpKind::Scale, {a.id}, std::move(c), [a = a.id, s](Tape& t, std::size_t self) {
    detail::axpy(t.grad_buffer(a), t.upstream(self), s);
  });
}

/// tanh-approximated GELU.
inline Var gelu(Var a) {
  Tensor c = a.value();
  for (double& v : c.data()) v = gelu(v);
  return a.tape->push(OpKind::Gelu, {a.id}, std::move(c), [a = a.id](Tape& t, std::size_t self) {
    const auto g = t.upstream(self).data();
    const auto x = t.value(a).data();
    auto ga = t.grad_buffer(a).data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gelu_grad(x[i]);
  });
}

/// Row-wise layer norm with learned gain and bias (both length n).
inline Var layer_norm(Var x, Var gain, Var bias) {
  const Tensor& xv = x.value();
  detail::require_matrix(xv, "layer_norm");
  const std::size_t m = xv.rows();
  const std::size_t n = xv.cols();
  if (gain.value().size() != n || bias.value().size() != n) {
    throw ShapeError("layer_norm: gain/bias length must equal " + std::to_string(n));
  }
  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto rstd = std::make_shared<std::vector<double>>(m);
  Tensor y(xv.shape());
  const auto gv = gain.value().data();
  const auto bv = bias.value().data();
  for (std::size_t r = 0; r < m; ++r) {
    auto in = xv.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
    (*rstd)[r] = rs;
    auto xh = xhat->row(r);
    auto out = y.row(r);
    for (std::size_t j = 0; j < n; ++j) {
      xh[j] = (in[j] - mean) * rs;
      out[j] = xh[j] * gv[j] + bv[j];
    }
  }
  return x.tape->push(
      OpKind::LayerNorm, {x.id, gain.id, bias.id}, std::move(y),
      [x = x.id, g = gain.id, b = bias.id, xhat, rstd](Tape& t, std::size_t self) {
        const Tensor& dy = t.upstream(self);
        const std::size_t m = dy.rows();
        const std::size_t n = dy.cols();
        const auto gv = t.value(g).data();
        if (t.needs_grad(g) || t.needs_grad(b)) {
          Tensor& gg = t.grad_buffer(g);
          Tensor& gb = t.grad_buffer(b);
          for (std::size_t r = 0; r < m; ++r) {
            auto d = dy.row(r);
            auto xh = xhat->row(r);
            for (std::size_t j = 0; j < n; ++j) {
              gg[j] += d[j] * xh[j];
              gb[j] += d[j];
            }
          }
        }
        if (t.needs_grad(x)) {
          Tensor& gx = t.grad_buffer(x);
          std::vector<double> dxh(n);
          for (std::size_t r = 0; r < m; ++r) {
            auto d = dy.row(r);
            auto xh = xhat->row(r);
            double mean_d = 0.0;
            double mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              dxh[j] = d[j] * gv[j];
              mean_d += dxh[j];
              mean_dx += dxh[j] * xh[j];
            }
            mean_d /= static_cast<double>(n);
            mean_dx /= static_cast<double>(n);
            auto out = gx.row(r);
            for (std::size_t j = 0; j < n; ++j) out[j] += (*rstd)[r] * (dxh[j] - mean_d - xh[j] * mean_dx);
          }
        }
      });
}

inline Var softmax_rows(Var x) {
  detail::require_matrix(x.value(), "softmax_rows");
  Tensor y = softmax_rows(x.value());
  return x.tape->push(OpKind::Softmax, {x.id}, std::move(y), [x = x.id](Tape& t, std::size_t self) {
    const Tensor& dy = t.upstream(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad_buffer(x);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      auto dr = dy.row(r);
      const double s = dot(yr, dr);
      auto out = gx.row(r);
      for (std::size_t j = 0; j < yr.size(); ++j) out[j] += yr[j] * (dr[j] - s);
    }
  });
}

/// Contiguous block of rows that forms one sequence inside a packed batch.
struct Segment {
  std::size_t offset;
  std::size_t length;
};

/// Fused multi-head causal self-attention. `qkv` is [N x 3d] holding the
/// query, key and value projections side by side; each segment attends only
/// within itself and only to positions at or before the query.
inline Var causal_attention(Var qkv, std::size_t n_heads, std::vector<Segment> segments) {
  const Tensor& in = qkv.value();
  detail::require_matrix(in, "causal_attention");
  if (in.cols() % 3 != 0) throw ShapeError("causal_attention: qkv width must be a multiple of 3");
  const std::size_t d = in.cols() / 3;
  if (n_heads == 0 || d % n_heads != 0) throw ShapeError("causal_attention: heads must divide width");
  const std::size_t hd = d / n_heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
  std::size_t covered = 0;
  std::size_t prob_count = 0;
  for (const Segment& s : segments) {
    if (s.offset != covered) throw ShapeError("causal_attention: segments must tile the rows in order");
    covered += s.length;
    prob_count += n_heads * s.length * (s.length + 1) / 2;
  }
  if (covered != in.rows()) throw ShapeError("causal_attention: segments do not cover every row");

  auto probs = std::make_shared<std::vector<double>>(prob_count);
  Tensor out({in.rows(), d});
  const std::size_t w = 3 * d;
  const double* base = in.data().data();
  std::size_t p = 0;
  for (const Segment& s : segments) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t i = 0; i < s.length; ++i) {
        const double* q = base + (s.offset + i) * w + h * hd;
        double* pr = probs->data() + p;
        double mx = -1e300;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* k = base + (s.offset + j) * w + d + h * hd;
          double acc = 0.0;
          for (std::size_t c = 0; c < hd; ++c) acc += q[c] * k[c];
          pr[j] = acc * sc;
          mx = std::max(mx, pr[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          pr[j] = std::exp(pr[j] - mx);
          z += pr[j];
        }
        double* o = &out(s.offset + i, h * hd);
        for (std::size_t j = 0; j <= i; ++j) {
          pr[j] /= z;
          const double* v = base + (s.offset + j) * w + 2 * d + h * hd;
          for (std::size_t c = 0; c < hd; ++c) o[c] += pr[j] * v[c];
        }
        p += i + 1;
      }
    }
  }
  return qkv.tape->push(
      OpKind::Attention, {qkv.id}, std::move(out),
      [src = qkv.id, n_heads, hd, d, sc, probs, segments = std::move(segments)](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        const double* base = t.value(src).data().data();
        double* gbase = t.grad_buffer(src).data().data();
        const std::size_t w = 3 * d;
        std::vector<double> dp;
        std::size_t p = 0;
        for (const Segment& s : segments) {
          for (std::size_t h = 0; h < n_heads; ++h) {
            for (std::size_t i = 0; i < s.length; ++i) {
              const double* pr = probs->data() + p;
              const double* go = g.data().data() + (s.offset + i) * d + h * hd;
              dp.assign(i + 1, 0.0);
              double acc = 0.0;
              for (std::size_t j = 0; j <= i; ++j) {
                const double* v = base + (s.offset + j) * w + 2 * d + h * hd;
                double* gv = gbase + (s.offset + j) * w + 2 * d + h * hd;
                double dd = 0.0;
                for (std::size_t c = 0; c < hd; ++c) {
                  dd += go[c] * v[c];
                  gv[c] += pr[j] * go[c];
                }
                dp[j] = dd;
                acc += pr[j] * dd;
              }
              const double* q = base + (s.offset + i) * w + h * hd;
              double* gq = gbase + (s.offset + i) * w + h * hd;
              for (std::size_t j = 0; j <= i; ++j) {
                const double ds = pr[j] * (dp[j] - acc) * sc;
                const double* k = base + (s.offset + j) * w + d + h * hd;
                double* gk = gbase + (s.offset + j) * w + d + h * hd;
                for (std::size_t c = 0; c < hd; ++c) {
                  gq[c] += ds * k[c];
                  gk[c] += ds * q[c];
                }
              }
              p += i + 1;
            }
          }
        }
      });
}

/// Rows of `table` picked by `ids` (embedding lookup).
inline Var gather_rows(Var table, std::vector<std::size_t> ids) {
  const Tensor& tv = table.value();
  detail::require_matrix(tv, "gather_rows");
  if (ids.empty()) throw ShapeError("gather_rows: empty index list");
  Tensor out({ids.size(), tv.cols()});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(ids[i]) + " out of range for " + shape_str(tv.shape()));
    }
    std::copy_n(tv.row(ids[i]).data(), tv.cols(), out.row(i).data());
  }
  return table.tape->push(OpKind::Gather, {table.id}, std::move(out),
                          [src = table.id, ids = std::move(ids)](Tape& t, std::size_t self) {
                            const Tensor& g = t.upstream(self);
                            Tensor& gt = t.grad_buffer(src);
                            for (std::size_t i = 0; i < ids.size(); ++i) {
                              auto dst = gt.row(ids[i]);
                              auto gr = g.row(i);
                              for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += gr[j];
                            }
                          });
}

inline Var select_rows(Var x, std::vector<std::size_t> rows) { return gather_rows(x, std::move(rows)); }

/// Copy of `base` whose rows listed in `rows` are replaced by the rows of `src`.
inline Var replace_rows(Var base, std::vector<std::size_t> rows, Var src) {
  const Tensor& bv = base.value();
  const Tensor& sv = src.value();
  if (sv.rows() != rows.size() || sv.cols() != bv.cols()) {
    throw ShapeError("replace_rows: source " + shape_str(sv.shape()) + " does not fit " + std::to_string(rows.size()) +
                     " rows of " + shape_str(bv.shape()));
  }
  Tensor out = bv;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= bv.rows()) throw ShapeError("replace_rows: row index out of range");
    std::copy_n(sv.row(i).data(), sv.cols(), out.row(rows[i]).data());
  }
  return base.tape->push(OpKind::ReplaceRows, {base.id, src.id}, std::move(out),
                         [b = base.id, s = src.id, rows = std::move(rows)](Tape& t, std::size_t self) {
                           const Tensor& g = t.upstream(self);
                           std::vector<char> replaced(g.rows(), 0);
                           for (std::size_t r : rows) replaced[r] = 1;
                           if (t.needs_grad(b)) {
                             Tensor& gb = t.grad_buffer(b);
                             for (std::size_t r = 0; r < g.rows(); ++r) {
                               if (replaced[r]) continue;
                               auto dst = gb.row(r);
                               auto gr = g.row(r);
                               for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += gr[j];
                             }
                           }
                           if (t.needs_grad(s)) {
                             Tensor& gs = t.grad_buffer(s);
                             for (std::size_t i = 0; i < rows.size(); ++i) {
                               auto dst = gs.row(i);
                               auto gr = g.row(rows[i]);
                               for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += gr[j];
                             }
                           }
                         });
}

inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->push(OpKind::Sum, {x.id}, Tensor({1}, {s}), [x = x.id](Tape& t, std::size_t self) {
    const double g = t.upstream(self)[0];
    for (double& v : t.grad_buffer(x).data()) v += g;
  });
}

inline Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->push(OpKind::Mean, {x.id}, Tensor({1}, {s / n}), [x = x.id, n](Tape& t, std::size_t self) {
    const double g = t.upstream(self)[0] / n;
    for (double& v : t.grad_buffer(x).data()) v += g;
  });
}

/// Mean cross-entropy of `logits` rows listed in `rows` against `targets`.
inline Var cross_entropy(Var logits, std::vector<std::size_t> rows, std::vector<std::size_t> targets) {
  const Tensor& lv = logits.value();
  detail::require_matrix(lv, "cross_entropy");
  if (rows.size() != targets.size() || rows.empty()) {
    throw ShapeError("cross_entropy: need equal, nonzero row and target counts");
  }
  const std::size_t v = lv.cols();
  auto probs = std::make_shared<Tensor>(Shape{rows.size(), v});
  double total = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= lv.rows() || targets[i] >= v) throw ShapeError("cross_entropy: index out of range");
    auto in = lv.row(rows[i]);
    auto pr = probs->row(i);
    const double m = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      pr[j] = std::exp(in[j] - m);
      z += pr[j];
    }
    for (double& p : pr) p /= z;
    total += -(in[targets[i]] - m - std::log(z));
  }
  const double n = static_cast<double>(rows.size());
  return logits.tape->push(
      OpKind::CrossEntropy, {logits.id}, Tensor({1}, {total / n}),
      [src = logits.id, rows = std::move(rows), targets = std::move(targets), probs, n](Tape& t, std::size_t self) {
        const double g = t.upstream(self)[0] / n;
        Tensor& gl = t.grad_buffer(src);
        for (std::size_t i = 0; i < rows.size(); ++i) {
          auto pr = probs->row(i);
          auto out = gl.row(rows[i]);
          for (std::size_t j = 0; j < pr.size(); ++j) out[j] += g * pr[j];
          out[targets[i]] -= g;
        }
      });
}

/// Row-wise cosine similarity of two [k x n] matrices, as a [k] vector.
/// Rows with a norm below 1e-12 yield 0 with zero gradient.
inline Var cosine_rows(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
    throw ShapeError("cosine_rows: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  const std::size_t k = av.rows();
  Tensor out({k});
  for (std::size_t r = 0; r < k; ++r) out[r] = cosine(av.row(r), bv.row(r));
  return a.tape->push(OpKind::CosineRows, {a.id, b.id}, std::move(out), [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    for (std::size_t r = 0; r < av.rows(); ++r) {
      auto ar = av.row(r);
      auto br = bv.row(r);
      const double na = norm(ar);
      const double nb = norm(br);
      if (na < kCosineNormFloor || nb < kCosineNormFloor) continue;
      const double c = dot(ar, br) / (na * nb);
      if (t.needs_grad(a)) {
        auto out = t.grad_buffer(a).row(r);
        for (std::size_t j = 0; j < ar.size(); ++j) out[j] += g[r] * (br[j] / (na * nb) - c * ar[j] / (na * na));
      }
      if (t.needs_grad(b)) {
        auto out = t.grad_buffer(b).row(r);
        for (std::size_t j = 0; j < br.size(); ++j) out[j] += g[r] * (ar[j] / (na * nb) - c * br[j] / (nb * nb));
      }
    }
  });
}

inline Var mean_squared_error(Var a, Var b) {
  detail::require_same(a.value(), b.value(), "mean_squared_error");
  const auto av = a.value().data();
  const auto bv = b.value().data();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  const double n = static_cast<double>(av.size());
  return a.tape->push(OpKind::MeanSquared, {a.id, b.id}, Tensor({1}, {s / n}),
                      [a = a.id, b = b.id, n](Tape& t, std::size_t self) {
                        const double g = t.upstream(self)[0] * 2.0 / n;
                        const auto av = t.value(a).data();
                        const auto bv = t.value(b).data();
                        if (t.needs_grad(a)) {
                          auto ga = t.grad_buffer(a).data();
                          for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g * (av[i] - bv[i]);
                        }
                        if (t.needs_grad(b)) {
                          auto gb = t.grad_buffer(b).data();
                          for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= g * (av[i] - bv[i]);
                        }
                      });
}

}  // namespace latentlab::num
