// Differentiable primitives used by the encoders and the decoder.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "nflat/rng.hpp"
#include "nflat/tensor.hpp"

namespace nflat {

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

// c[n x p] += a[n x k] * b[k x p]
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                     std::size_t p) {
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c + i * p;
    const double* arow = a + i * k;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = arow[t];
      if (av == 0.0) continue;
      const double* brow = b + t * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[n x k] += g[n x p] * b[k x p]^T
inline void gemm_acc_bt(const double* g, const double* b, double* c, std::size_t n,
                        std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* grow = g + i * p;
    double* crow = c + i * k;
    for (std::size_t t = 0; t < k; ++t) {
      const double* brow = b + t * p;
      double s = 0.0;
      for (std::size_t j = 0; j < p; ++j) s += grow[j] * brow[j];
      crow[t] += s;
    }
  }
}

// c[k x p] += a[n x k]^T * g[n x p]
inline void gemm_acc_at(const double* a, const double* g, double* c, std::size_t n,
                        std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * p;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = arow[t];
      if (av == 0.0) continue;
      double* crow = c + t * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * grow[j];
    }
  }
}

inline bool is_suffix(const Shape& full, const Shape& suffix) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

}  // namespace detail

/// a[..., n, k] x b[k, p] (weight broadcast) or a[..., n, k] x b[..., k, p].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const std::string err = "matmul shape mismatch: " + shape_str(sa) + " x " + shape_str(sb);
  detail::require(sa.size() >= 2 && sb.size() >= 2, err);
  const std::size_t n = sa[sa.size() - 2], k = sa.back();
  detail::require(sb[sb.size() - 2] == k, err);
  const std::size_t p = sb.back();
  const bool broadcast = sb.size() == 2;
  if (!broadcast) {
    detail::require(sa.size() == sb.size() &&
                        std::equal(sa.begin(), sa.end() - 2, sb.begin()),
                    err);
  }
  const std::size_t batch = a.numel() / (n * k);
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(p);

  std::vector<double> out(batch * n * p, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  if (broadcast) {
    detail::gemm_acc(ad, bd, out.data(), batch * n, k, p);
  } else {
    for (std::size_t q = 0; q < batch; ++q)
      detail::gemm_acc(ad + q * n * k, bd + q * k * p, out.data() + q * n * p, n, k, p);
  }
  return make_result(std::move(out_shape), std::move(out), {a, b},
                     [batch, n, k, p, broadcast](Node& self) {
                       Node& A = *self.inputs[0];
                       Node& B = *self.inputs[1];
                       const double* g = self.grad.data();
                       if (A.requires_grad) {
                         double* ga = A.ensure_grad().data();
                         if (broadcast) {
                           detail::gemm_acc_bt(g, B.value.data(), ga, batch * n, k, p);
                         } else {
                           for (std::size_t q = 0; q < batch; ++q)
                             detail::gemm_acc_bt(g + q * n * p, B.value.data() + q * k * p,
                                                 ga + q * n * k, n, k, p);
                         }
                       }
                       if (B.requires_grad) {
                         double* gb = B.ensure_grad().data();
                         if (broadcast) {
                           detail::gemm_acc_at(A.value.data(), g, gb, batch * n, k, p);
                         } else {
                           for (std::size_t q = 0; q < batch; ++q)
                             detail::gemm_acc_at(A.value.data() + q * n * k, g + q * n * p,
                                                 gb + q * k * p, n, k, p);
                         }
                       }
                     });
}

/// Elementwise a + b, where b's shape equals a's or a trailing suffix of it.
inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require(detail::is_suffix(a.shape(), b.shape()),
                  "add shape mismatch: " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
  const std::size_t inner = b.numel();
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i % inner];
  return make_result(a.shape(), std::move(out), {a, b}, [inner](Node& self) {
    Node& A = *self.inputs[0];
    Node& B = *self.inputs[1];
    if (A.requires_grad) {
      auto& ga = A.ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (B.requires_grad) {
      auto& gb = B.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % inner] += self.grad[i];
    }
  });
}

/// Elementwise a * b with the same broadcasting rule as add().
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require(detail::is_suffix(a.shape(), b.shape()),
                  "mul shape mismatch: " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  const std::size_t inner = b.numel();
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i % inner];
  return make_result(a.shape(), std::move(out), {a, b}, [inner](Node& self) {
    Node& A = *self.inputs[0];
    Node& B = *self.inputs[1];
    if (A.requires_grad) {
      auto& ga = A.ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * B.value[i % inner];
    }
    if (B.requires_grad) {
      auto& gb = B.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        gb[i % inner] += self.grad[i] * A.value[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& x : out) x *= s;
  return make_result(a.shape(), std::move(out), {a}, [s](Node& self) {
    auto& ga = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * self.grad[i];
  });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  return make_result(Shape{}, {s}, {a}, [](Node& self) {
    auto& ga = self.inputs[0]->ensure_grad();
    for (auto& g : ga) g += self.grad[0];
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  detail::require(shape_numel(shape) == a.numel(),
                  "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
    auto& ga = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& x : out) x = x > 0.0 ? x : 0.0;
  return make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    auto& ga = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (self.value[i] > 0.0) ga[i] += self.grad[i];
  });
}

/// Softmax over the last dimension, max-subtracted.
inline Tensor softmax_lastdim(const Tensor& x) {
  const std::size_t d = x.last_dim();
  detail::require(d >= 1, "softmax over empty last dimension");
  const std::size_t rows = x.numel() / d;
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * d;
    double* o = out.data() + r * d;
    const double mx = *std::max_element(in, in + d);
#ifndef NDEBUG
    for (std::size_t j = 0; j < d; ++j)
      if (std::isnan(in[j])) throw ContractError("softmax input contains NaN");
#endif
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < d; ++j) o[j] /= z;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows, d](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * d;
      const double* g = self.grad.data() + r * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += y[j] * g[j];
      for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += y[j] * (g[j] - dot);
    }
  });
}

inline constexpr double kLayerNormEps = 1e-12;

/// Normalizes each last-dim slice to zero mean and unit (population) variance,
/// then applies gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = kLayerNormEps) {
  const std::size_t d = x.last_dim();
  detail::require(gain.numel() == d && bias.numel() == d,
                  "layer_norm parameters " + shape_str(gain.shape()) + "/" +
                      shape_str(bias.shape()) + " do not match input " + shape_str(x.shape()));
  const std::size_t rows = x.numel() / d;
  const auto xd = x.data();
  const auto gd = gain.data();
  const auto bd = bias.data();
  std::vector<double> out(xd.size());
  std::vector<double> xhat(xd.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (in[j] - mean) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * gd[j] + bd[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gain, bias},
                     [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       Node& X = *self.inputs[0];
                       Node& G = *self.inputs[1];
                       Node& B = *self.inputs[2];
                       const double* g = self.grad.data();
                       if (G.requires_grad) {
                         auto& gg = G.ensure_grad();
                         for (std::size_t i = 0; i < rows * d; ++i) gg[i % d] += g[i] * xhat[i];
                       }
                       if (B.requires_grad) {
                         auto& gb = B.ensure_grad();
                         for (std::size_t i = 0; i < rows * d; ++i) gb[i % d] += g[i];
                       }
                       if (X.requires_grad) {
                         auto& gx = X.ensure_grad();
                         const double dd = static_cast<double>(d);
                         for (std::size_t r = 0; r < rows; ++r) {
                           double s1 = 0.0, s2 = 0.0;
                           for (std::size_t j = 0; j < d; ++j) {
                             const double gh = g[r * d + j] * G.value[j];
                             s1 += gh;
                             s2 += gh * xhat[r * d + j];
                           }
                           for (std::size_t j = 0; j < d; ++j) {
                             const double gh = g[r * d + j] * G.value[j];
                             gx[r * d + j] +=
                                 inv_std[r] * (gh - s1 / dd - xhat[r * d + j] * s2 / dd);
                           }
                         }
                       }
                     });
}

inline Tensor concat_lastdim(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const std::string err = "concat shape mismatch: " + shape_str(sa) + " ++ " + shape_str(sb);
  detail::require(sa.size() == sb.size() && !sa.empty(), err);
  detail::require(std::equal(sa.begin(), sa.end() - 1, sb.begin()), err);
  const std::size_t da = sa.back(), db = sb.back(), rows = a.numel() / std::max<std::size_t>(da, 1);
  Shape out_shape = sa;
  out_shape.back() = da + db;
  std::vector<double> out(rows * (da + db));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().data() + r * da, da, out.data() + r * (da + db));
    std::copy_n(b.data().data() + r * db, db, out.data() + r * (da + db) + da);
  }
  return make_result(std::move(out_shape), std::move(out), {a, b}, [rows, da, db](Node& self) {
    Node& A = *self.inputs[0];
    Node& B = *self.inputs[1];
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = self.grad.data() + r * (da + db);
      if (A.requires_grad) {
        auto& ga = A.ensure_grad();
        for (std::size_t j = 0; j < da; ++j) ga[r * da + j] += g[j];
      }
      if (B.requires_grad) {
        auto& gb = B.ensure_grad();
        for (std::size_t j = 0; j < db; ++j) gb[r * db + j] += g[da + j];
      }
    }
  });
}

/// [B, n, d] ++ [B, m, d] -> [B, n+m, d] along the sequence axis.
inline Tensor concat_seq(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  detail::require(sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[2] == sb[2],
                  "concat_seq shape mismatch: " + shape_str(sa) + " ++ " + shape_str(sb));
  const std::size_t B = sa[0], n = sa[1], m = sb[1], d = sa[2];
  std::vector<double> out(B * (n + m) * d);
  for (std::size_t r = 0; r < B; ++r) {
    std::copy_n(a.data().data() + r * n * d, n * d, out.data() + r * (n + m) * d);
    std::copy_n(b.data().data() + r * m * d, m * d, out.data() + (r * (n + m) + n) * d);
  }
  return make_result(Shape{B, n + m, d}, std::move(out), {a, b}, [B, n, m, d](Node& self) {
    Node& A = *self.inputs[0];
    Node& C = *self.inputs[1];
    for (std::size_t b = 0; b < B; ++b) {
      const double* g = self.grad.data() + b * (n + m) * d;
      if (A.requires_grad) {
        auto& ga = A.ensure_grad();
        for (std::size_t k = 0; k < n * d; ++k) ga[b * n * d + k] += g[k];
      }
      if (C.requires_grad) {
        auto& gc = C.ensure_grad();
        for (std::size_t k = 0; k < m * d; ++k) gc[b * m * d + k] += g[n * d + k];
      }
    }
  });
}

/// Rows [start, start+len) of a [B, T, d] tensor.
inline Tensor slice_seq(const Tensor& x, std::size_t start, std::size_t len) {
  const auto& sx = x.shape();
  detail::require(sx.size() == 3 && start + len <= sx[1],
                  "slice_seq out of range: " + shape_str(sx) + " [" + std::to_string(start) + ", +" +
                      std::to_string(len) + ")");
  const std::size_t B = sx[0], T = sx[1], d = sx[2];
  std::vector<double> out(B * len * d);
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(x.data().data() + (b * T + start) * d, len * d, out.data() + b * len * d);
  return make_result(Shape{B, len, d}, std::move(out), {x}, [B, T, d, start, len](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < len * d; ++k) gx[(b * T + start) * d + k] += self.grad[b * len * d + k];
  });
}

class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Gathers rows of table[rows x dim]; result is [ids.size() x dim].
inline Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  detail::require(table.rank() == 2, "embedding table must be 2-D, got " + shape_str(table.shape()));
  const std::size_t rows = table.dim(0), dim = table.dim(1);
  std::vector<double> out(ids.size() * dim);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw LookupError("embedding id " + std::to_string(ids[i]) + " outside table of " +
                        std::to_string(rows) + " rows");
    }
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * dim, dim,
                out.data() + i * dim);
  }
  return make_result(Shape{ids.size(), dim}, std::move(out), {table},
                     [ids = std::vector<int>(ids.begin(), ids.end()), dim](Node& self) {
                       auto& gt = self.inputs[0]->ensure_grad();
                       for (std::size_t i = 0; i < ids.size(); ++i) {
                         const std::size_t row = static_cast<std::size_t>(ids[i]) * dim;
                         for (std::size_t j = 0; j < dim; ++j) gt[row + j] += self.grad[i * dim + j];
                       }
                     });
}

/// Inverted dropout: kept units are scaled by 1/(1-rate); identity when not training.
inline Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout rate must lie in [0,1)");
  if (!training || rate == 0.0) return x;
  const double keep = 1.0 - rate;
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
  return make_result(x.shape(), std::move(out), {x}, [mask = std::move(mask)](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * mask[i];
  });
}

/// x W + b over the last dimension.
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add(matmul(x, weight), bias);
}

}  // namespace nflat
