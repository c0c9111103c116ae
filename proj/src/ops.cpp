#include "restok/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "restok/errors.hpp"

RESTOK_BEGIN_NAMESPACE

namespace {

using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const Mat>;
using MutMap = Eigen::Map<Mat>;

Tape& tape_of(Var v) {
  if (!v.valid()) throw StateError("operation on an empty Var");
  return *v.tape();
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected [rows x cols], got " +
                         shape_string(t.shape()));
  }
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename F, typename D>
Var unary(Var x, F f, D df) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return tape_of(x).record(std::move(out), {x}, [x, df](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (!gx) return;
    const Tensor& in = t.value(x);
    for (std::size_t i = 0; i < in.size(); ++i) (*gx)[i] += g[i] * df(in[i]);
  });
}

}  // namespace

void gemm(const Real* a, const Real* b, Real* c, int m, int k, int n, bool trans_a, bool trans_b,
          bool accumulate) {
  ConstMap A(a, trans_a ? k : m, trans_a ? m : k);
  ConstMap B(b, trans_b ? n : k, trans_b ? k : n);
  MutMap C(c, m, n);
  if (!accumulate) C.setZero();
  if (trans_a && trans_b) {
    C.noalias() += A.transpose() * B.transpose();
  } else if (trans_a) {
    C.noalias() += A.transpose() * B;
  } else if (trans_b) {
    C.noalias() += A * B.transpose();
  } else {
    C.noalias() += A * B;
  }
}

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix(A, "matmul");
  require_matrix(B, "matmul");
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul: inner extents differ " + shape_string(A.shape()) + " . " +
                         shape_string(B.shape()));
  }
  const int m = A.rows(), k = A.cols(), n = B.cols();
  Tensor out({m, n});
  gemm(A.data(), B.data(), out.data(), m, k, n, false, false, false);
  return tape_of(a).record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) {
      gemm(g.data(), t.value(b).data(), ga->data(), m, n, k, false, true, true);
    }
    if (Tensor* gb = t.grad_buffer(b)) {
      gemm(t.value(a).data(), g.data(), gb->data(), k, m, n, true, false, true);
    }
  });
}

Var linear(Var x, Var weight, Var bias) {
  const Tensor& X = x.value();
  const Tensor& W = weight.value();
  const Tensor& b = bias.value();
  require_matrix(X, "linear");
  require_matrix(W, "linear");
  if (X.cols() != W.rows() || static_cast<int>(b.size()) != W.cols()) {
    throw DimensionError("linear: " + shape_string(X.shape()) + " . " + shape_string(W.shape()) +
                         " + " + shape_string(b.shape()));
  }
  const int m = X.rows(), k = X.cols(), n = W.cols();
  Tensor out({m, n});
  for (int r = 0; r < m; ++r) std::copy(b.data(), b.data() + n, out.data() + std::size_t(r) * n);
  gemm(X.data(), W.data(), out.data(), m, k, n, false, false, true);
  return tape_of(x).record(std::move(out), {x, weight, bias},
                           [x, weight, bias, m, k, n](Tape& t, const Tensor& g) {
                             if (Tensor* gx = t.grad_buffer(x)) {
                               gemm(g.data(), t.value(weight).data(), gx->data(), m, n, k, false,
                                    true, true);
                             }
                             if (Tensor* gw = t.grad_buffer(weight)) {
                               gemm(t.value(x).data(), g.data(), gw->data(), k, m, n, true, false,
                                    true);
                             }
                             if (Tensor* gb = t.grad_buffer(bias)) {
                               for (int r = 0; r < m; ++r) {
                                 for (int c = 0; c < n; ++c) (*gb)[c] += g.at(r, c);
                               }
                             }
                           });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (Tensor* gb = t.grad_buffer(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) {
      const Tensor& B = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * B[i];
    }
    if (Tensor* gb = t.grad_buffer(b)) {
      const Tensor& A = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * A[i];
    }
  });
}

Var add_row(Var x, Var row) {
  const Tensor& X = x.value();
  const Tensor& R = row.value();
  require_matrix(X, "add_row");
  const int n = X.rows(), d = X.cols();
  if (static_cast<int>(R.size()) != d) {
    throw DimensionError("add_row: row " + shape_string(R.shape()) + " vs " +
                         shape_string(X.shape()));
  }
  Tensor out = X;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < d; ++c) out.at(r, c) += R[static_cast<std::size_t>(c)];
  }
  return tape_of(x).record(std::move(out), {x, row}, [x, row, n, d](Tape& t, const Tensor& g) {
    t.accumulate(x, g);
    if (Tensor* gr = t.grad_buffer(row)) {
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < d; ++c) (*gr)[static_cast<std::size_t>(c)] += g.at(r, c);
      }
    }
  });
}

Var scale(Var x, Real s) {
  Tensor out = x.value();
  for (auto& v : out.values()) v *= s;
  return tape_of(x).record(std::move(out), {x}, [x, s](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += s * g[i];
    }
  });
}

Var add_scalar(Var x, Real s) {
  Tensor out = x.value();
  for (auto& v : out.values()) v += s;
  return tape_of(x).record(std::move(out), {x},
                           [x](Tape& t, const Tensor& g) { t.accumulate(x, g); });
}

Var gelu(Var x) {
  constexpr Real c = Real(0.7978845608028654);  // sqrt(2/pi)
  constexpr Real a = Real(0.044715);
  const Tensor& in = x.value();
  Tensor out(in.shape());
  auto th = std::make_shared<std::vector<Real>>(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const Real v = in[i];
    (*th)[i] = std::tanh(c * (v + a * v * v * v));
    out[i] = Real(0.5) * v * (Real(1) + (*th)[i]);
  }
  return tape_of(x).record(std::move(out), {x}, [x, th](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (!gx) return;
    const Tensor& in = t.value(x);
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Real v = in[i], h = (*th)[i];
      (*gx)[i] += g[i] * (Real(0.5) * (Real(1) + h) +
                          Real(0.5) * v * (Real(1) - h * h) * c * (Real(1) + Real(3) * a * v * v));
    }
  });
}

Var relu(Var x) {
  return unary(
      x, [](Real v) { return v > 0 ? v : Real(0); }, [](Real v) { return v > 0 ? Real(1) : Real(0); });
}

Var tanh_act(Var x) {
  return unary(
      x, [](Real v) { return std::tanh(v); },
      [](Real v) {
        const Real th = std::tanh(v);
        return Real(1) - th * th;
      });
}

Var layer_norm(Var x, Var gain, Var bias, Real eps) {
  const Tensor& X = x.value();
  require_matrix(X, "layer_norm");
  const int n = X.rows(), d = X.cols();
  if (static_cast<int>(gain.value().size()) != d || static_cast<int>(bias.value().size()) != d) {
    throw DimensionError("layer_norm: affine parameters do not match width " + std::to_string(d));
  }
  auto xhat = std::make_shared<Tensor>(X.shape());
  auto rstd = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(n));
  Tensor out(X.shape());
  const Tensor& G = gain.value();
  const Tensor& B = bias.value();
  for (int r = 0; r < n; ++r) {
    Real mu = 0;
    for (int c = 0; c < d; ++c) mu += X.at(r, c);
    mu /= Real(d);
    Real var = 0;
    for (int c = 0; c < d; ++c) {
      const Real dv = X.at(r, c) - mu;
      var += dv * dv;
    }
    var /= Real(d);
    const Real rs = Real(1) / std::sqrt(var + eps);
    (*rstd)[static_cast<std::size_t>(r)] = rs;
    for (int c = 0; c < d; ++c) {
      const Real h = (X.at(r, c) - mu) * rs;
      xhat->at(r, c) = h;
      out.at(r, c) = h * G[static_cast<std::size_t>(c)] + B[static_cast<std::size_t>(c)];
    }
  }
  return tape_of(x).record(
      std::move(out), {x, gain, bias}, [x, gain, bias, xhat, rstd, n, d](Tape& t, const Tensor& g) {
        const Tensor& G = t.value(gain);
        if (Tensor* gg = t.grad_buffer(gain)) {
          for (int r = 0; r < n; ++r) {
            for (int c = 0; c < d; ++c) (*gg)[static_cast<std::size_t>(c)] += g.at(r, c) * xhat->at(r, c);
          }
        }
        if (Tensor* gb = t.grad_buffer(bias)) {
          for (int r = 0; r < n; ++r) {
            for (int c = 0; c < d; ++c) (*gb)[static_cast<std::size_t>(c)] += g.at(r, c);
          }
        }
        if (Tensor* gx = t.grad_buffer(x)) {
          std::vector<Real> dh(static_cast<std::size_t>(d));
          for (int r = 0; r < n; ++r) {
            Real m1 = 0, m2 = 0;
            for (int c = 0; c < d; ++c) {
              dh[static_cast<std::size_t>(c)] = g.at(r, c) * G[static_cast<std::size_t>(c)];
              m1 += dh[static_cast<std::size_t>(c)];
              m2 += dh[static_cast<std::size_t>(c)] * xhat->at(r, c);
            }
            m1 /= Real(d);
            m2 /= Real(d);
            const Real rs = (*rstd)[static_cast<std::size_t>(r)];
            for (int c = 0; c < d; ++c) {
              gx->at(r, c) += rs * (dh[static_cast<std::size_t>(c)] - m1 - xhat->at(r, c) * m2);
            }
          }
        }
      });
}

Var reshape(Var x, std::vector<int> shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return tape_of(x).record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const int d = parts.front().value().cols();
  int n = 0;
  for (const Var& p : parts) {
    require_matrix(p.value(), "concat_rows");
    if (p.value().cols() != d) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(p.shape()));
    }
    n += p.value().rows();
  }
  Tensor out({n, d});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    std::copy(v.data(), v.data() + v.size(), out.data() + off);
    off += v.size();
  }
  return tape_of(parts.front()).record(std::move(out), parts, [parts](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t len = t.value(p).size();
      if (Tensor* gp = t.grad_buffer(p)) {
        for (std::size_t i = 0; i < len; ++i) (*gp)[i] += g[off + i];
      }
      off += len;
    }
  });
}

Var slice_rows(Var x, int begin, int count) {
  const Tensor& X = x.value();
  require_matrix(X, "slice_rows");
  if (begin < 0 || count < 0 || begin + count > X.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                         ") out of " + shape_string(X.shape()));
  }
  const int d = X.cols();
  Tensor out({count, d});
  const std::size_t off = static_cast<std::size_t>(begin) * d;
  std::copy(X.data() + off, X.data() + off + out.size(), out.data());
  return tape_of(x).record(std::move(out), {x}, [x, off](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[off + i] += g[i];
    }
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  const Tensor& T = table.value();
  require_matrix(T, "gather_rows");
  const int d = T.cols();
  const int n = static_cast<int>(ids.size());
  Tensor out({n, d});
  for (int r = 0; r < n; ++r) {
    const int id = ids[static_cast<std::size_t>(r)];
    if (id < 0 || id >= T.rows()) {
      throw DimensionError("gather_rows: id " + std::to_string(id) + " outside table of " +
                           std::to_string(T.rows()) + " rows");
    }
    std::copy(T.data() + std::size_t(id) * d, T.data() + std::size_t(id + 1) * d,
              out.data() + std::size_t(r) * d);
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return tape_of(table).record(std::move(out), {table},
                               [table, saved = std::move(saved), d](Tape& t, const Tensor& g) {
                                 Tensor* gt = t.grad_buffer(table);
                                 if (!gt) return;
                                 for (std::size_t r = 0; r < saved.size(); ++r) {
                                   Real* dst = gt->data() + std::size_t(saved[r]) * d;
                                   const Real* src = g.data() + r * d;
                                   for (int c = 0; c < d; ++c) dst[c] += src[c];
                                 }
                               });
}

Var stop_gradient(Var x) {
  Tape& tape = tape_of(x);
  return tape.constant(tape.detach(x.value()));
}

Var straight_through(Var input, Var target) {
  require_same_shape(input.value(), target.value(), "straight_through");
  Tape& tape = tape_of(input);
  Tensor out = target.value();
  if (DetachJournal* j = tape.detach_journal()) {
    // replay as input + (target - input) frozen at the base point
    Tensor delta = target.value();
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] -= input.value()[i];
    delta = tape.detach(std::move(delta));
    if (j->replay) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = input.value()[i] + delta[i];
    }
  }
  return tape.record(std::move(out), {input}, [input](Tape& t, const Tensor& g) { t.accumulate(input, g); });
}

Var permute(Var x, std::span<const int> source, std::vector<int> shape) {
  const Tensor& X = x.value();
  if (shape_size(shape) != source.size()) {
    throw DimensionError("permute: index count does not match " + shape_string(shape));
  }
  Tensor out(std::move(shape));
  for (std::size_t i = 0; i < source.size(); ++i) {
    const int s = source[i];
    if (s < 0 || static_cast<std::size_t>(s) >= X.size()) throw DimensionError("permute: index out of range");
    out[i] = X[static_cast<std::size_t>(s)];
  }
  std::vector<int> src(source.begin(), source.end());
  return tape_of(x).record(std::move(out), {x}, [x, src = std::move(src)](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x)) {
      for (std::size_t i = 0; i < src.size(); ++i) (*gx)[static_cast<std::size_t>(src[i])] += g[i];
    }
  });
}

Var sum(Var x) {
  Real s = 0;
  for (Real v : x.value().values()) s += v;
  return tape_of(x).record(Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x)) {
      for (auto& v : gx->values()) v += g[0];
    }
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), Real(1) / Real(n));
}

Var mean_rows(Var x) {
  const Tensor& X = x.value();
  require_matrix(X, "mean_rows");
  const int n = X.rows(), d = X.cols();
  if (n == 0) throw DimensionError("mean_rows of an empty tensor");
  Tensor out({1, d});
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < d; ++c) out[static_cast<std::size_t>(c)] += X.at(r, c);
  }
  for (auto& v : out.values()) v /= Real(n);
  return tape_of(x).record(std::move(out), {x}, [x, n, d](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x)) {
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < d; ++c) gx->at(r, c) += g[static_cast<std::size_t>(c)] / Real(n);
      }
    }
  });
}

Var mse(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mse");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t n = A.size();
  if (n == 0) throw DimensionError("mse of empty tensors");
  Real s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Real dv = A[i] - B[i];
    s += dv * dv;
  }
  return tape_of(a).record(Tensor::scalar(s / Real(n)), {a, b}, [a, b, n](Tape& t, const Tensor& g) {
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    const Real k = Real(2) * g[0] / Real(n);
    if (Tensor* ga = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < n; ++i) (*ga)[i] += k * (A[i] - B[i]);
    }
    if (Tensor* gb = t.grad_buffer(b)) {
      for (std::size_t i = 0; i < n; ++i) (*gb)[i] -= k * (A[i] - B[i]);
    }
  });
}

Var l2_normalize_rows(Var x) {
  const Tensor& X = x.value();
  require_matrix(X, "l2_normalize_rows");
  const int n = X.rows(), d = X.cols();
  constexpr Real tiny = Real(1e-12);
  auto norms = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(n));
  Tensor out(X.shape());
  for (int r = 0; r < n; ++r) {
    Real s = 0;
    for (int c = 0; c < d; ++c) s += X.at(r, c) * X.at(r, c);
    const Real norm = std::sqrt(s);
    (*norms)[static_cast<std::size_t>(r)] = norm;
    if (norm > tiny) {
      for (int c = 0; c < d; ++c) out.at(r, c) = X.at(r, c) / norm;
    }
  }
  auto y = std::make_shared<Tensor>(out);
  return tape_of(x).record(std::move(out), {x}, [x, y, norms, n, d](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (!gx) return;
    for (int r = 0; r < n; ++r) {
      const Real norm = (*norms)[static_cast<std::size_t>(r)];
      if (!(norm > tiny)) continue;
      Real dot = 0;
      for (int c = 0; c < d; ++c) dot += y->at(r, c) * g.at(r, c);
      for (int c = 0; c < d; ++c) gx->at(r, c) += (g.at(r, c) - y->at(r, c) * dot) / norm;
    }
  });
}

Var cosine_rows(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "cosine_rows");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix(A, "cosine_rows");
  const int n = A.rows(), d = A.cols();
  constexpr Real tiny = Real(1e-12);
  auto norms = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(2 * n));
  Tensor out({n});
  for (int r = 0; r < n; ++r) {
    Real dot = 0, na = 0, nb = 0;
    for (int c = 0; c < d; ++c) {
      dot += A.at(r, c) * B.at(r, c);
      na += A.at(r, c) * A.at(r, c);
      nb += B.at(r, c) * B.at(r, c);
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    (*norms)[2 * std::size_t(r)] = na;
    (*norms)[2 * std::size_t(r) + 1] = nb;
    out[static_cast<std::size_t>(r)] = (na * nb > tiny) ? dot / (na * nb) : Real(0);
  }
  return tape_of(a).record(std::move(out), {a, b}, [a, b, norms, n, d](Tape& t, const Tensor& g) {
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    Tensor* ga = t.grad_buffer(a);
    Tensor* gb = t.grad_buffer(b);
    for (int r = 0; r < n; ++r) {
      const Real na = (*norms)[2 * std::size_t(r)];
      const Real nb = (*norms)[2 * std::size_t(r) + 1];
      if (!(na * nb > tiny)) continue;
      Real dot = 0;
      for (int c = 0; c < d; ++c) dot += A.at(r, c) * B.at(r, c);
      const Real cs = dot / (na * nb);
      const Real gr = g[static_cast<std::size_t>(r)];
      for (int c = 0; c < d; ++c) {
        if (ga) ga->at(r, c) += gr * (B.at(r, c) / (na * nb) - cs * A.at(r, c) / (na * na));
        if (gb) gb->at(r, c) += gr * (A.at(r, c) / (na * nb) - cs * B.at(r, c) / (nb * nb));
      }
    }
  });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  const Tensor& L = logits.value();
  require_matrix(L, "cross_entropy");
  const int n = L.rows(), k = L.cols();
  if (static_cast<int>(targets.size()) != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " rows");
  }
  auto probs = std::make_shared<Tensor>(L.shape());
  std::vector<int> tgt(targets.begin(), targets.end());
  int count = 0;
  double loss = 0;
  for (int r = 0; r < n; ++r) {
    Real mx = L.at(r, 0);
    for (int c = 1; c < k; ++c) mx = std::max(mx, L.at(r, c));
    double z = 0;
    for (int c = 0; c < k; ++c) {
      const Real e = std::exp(L.at(r, c) - mx);
      probs->at(r, c) = e;
      z += e;
    }
    for (int c = 0; c < k; ++c) probs->at(r, c) = static_cast<Real>(probs->at(r, c) / z);
    const int y = tgt[static_cast<std::size_t>(r)];
    if (y < 0) continue;
    if (y >= k) throw DimensionError("cross_entropy: target " + std::to_string(y) + " >= " + std::to_string(k));
    loss += std::log(z) + mx - L.at(r, y);
    ++count;
  }
  const Real value = count ? static_cast<Real>(loss / count) : Real(0);
  return tape_of(logits).record(
      Tensor::scalar(value), {logits},
      [logits, probs, tgt = std::move(tgt), count, k](Tape& t, const Tensor& g) {
        Tensor* gl = t.grad_buffer(logits);
        if (!gl || count == 0) return;
        const Real w = g[0] / Real(count);
        for (std::size_t r = 0; r < tgt.size(); ++r) {
          const int y = tgt[r];
          if (y < 0) continue;
          for (int c = 0; c < k; ++c) {
            gl->at(static_cast<int>(r), c) += w * (probs->at(static_cast<int>(r), c) - (c == y ? Real(1) : Real(0)));
          }
        }
      });
}

Var avg_pool2d(Var x, int factor) {
  const Tensor& X = x.value();
  require_rank(X, 3, "avg_pool2d");
  const int h = X.dim(0), w = X.dim(1), ch = X.dim(2);
  if (factor < 1 || h % factor != 0 || w % factor != 0) {
    throw GeometryError("avg_pool2d: extents " + shape_string(X.shape()) +
                        " not divisible by factor " + std::to_string(factor));
  }
  const int oh = h / factor, ow = w / factor;
  const Real inv = Real(1) / Real(factor * factor);
  Tensor out({oh, ow, ch});
  // Pairwise block sums keep the mean of a constant block exact for
  // power-of-two factors.
  std::vector<Real> buf(static_cast<std::size_t>(factor) * factor);
  for (int oi = 0; oi < oh; ++oi) {
    for (int oj = 0; oj < ow; ++oj) {
      for (int c = 0; c < ch; ++c) {
        std::size_t k = 0;
        for (int di = 0; di < factor; ++di) {
          for (int dj = 0; dj < factor; ++dj) {
            buf[k++] = X.data()[(std::size_t(oi * factor + di) * w + (oj * factor + dj)) * ch + c];
          }
        }
        for (std::size_t n = buf.size(); n > 1;) {
          const std::size_t half = (n + 1) / 2;
          for (std::size_t q = 0; q + half < n; ++q) buf[q] += buf[q + half];
          n = half;
        }
        out.data()[(std::size_t(oi) * ow + oj) * ch + c] = buf[0] * inv;
      }
    }
  }
  return tape_of(x).record(std::move(out), {x}, [x, h, w, ch, factor, ow, inv](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (!gx) return;
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        Real* dst = gx->data() + (std::size_t(i) * w + j) * ch;
        const Real* src = g.data() + (std::size_t(i / factor) * ow + j / factor) * ch;
        for (int c = 0; c < ch; ++c) dst[c] += src[c] * inv;
      }
    }
  });
}

Var nearest_resize(Var x, int out_h, int out_w) {
  const Tensor& X = x.value();
  require_rank(X, 3, "nearest_resize");
  const int h = X.dim(0), w = X.dim(1), ch = X.dim(2);
  if (out_h <= 0 || out_w <= 0 || h <= 0 || w <= 0) {
    throw GeometryError("nearest_resize: zero extent (" + shape_string(X.shape()) + " -> " +
                        std::to_string(out_h) + "x" + std::to_string(out_w) + ")");
  }
  std::vector<int> src_index(static_cast<std::size_t>(out_h) * out_w);
  for (int i = 0; i < out_h; ++i) {
    const int si = static_cast<int>(static_cast<long long>(i) * h / out_h);
    for (int j = 0; j < out_w; ++j) {
      const int sj = static_cast<int>(static_cast<long long>(j) * w / out_w);
      src_index[std::size_t(i) * out_w + j] = si * w + sj;
    }
  }
  Tensor out({out_h, out_w, ch});
  for (std::size_t o = 0; o < src_index.size(); ++o) {
    const Real* src = X.data() + std::size_t(src_index[o]) * ch;
    std::copy(src, src + ch, out.data() + o * ch);
  }
  return tape_of(x).record(std::move(out), {x},
                           [x, ch, src_index = std::move(src_index)](Tape& t, const Tensor& g) {
                             Tensor* gx = t.grad_buffer(x);
                             if (!gx) return;
                             for (std::size_t o = 0; o < src_index.size(); ++o) {
                               Real* dst = gx->data() + std::size_t(src_index[o]) * ch;
                               const Real* src = g.data() + o * ch;
                               for (int c = 0; c < ch; ++c) dst[c] += src[c];
                             }
                           });
}

RotarySections rotary_sections(int head_dim) {
  if (head_dim <= 0 || head_dim % 2 != 0) {
    throw DimensionError("rotary head dim must be positive and even, got " + std::to_string(head_dim));
  }
  const int pairs = head_dim / 2;
  RotarySections s;
  s.y = pairs / 3;
  s.x = pairs / 3;
  s.t = pairs - s.y - s.x;
  return s;
}

RotaryTable make_rotary_table(const PositionTriples& positions, int head_dim, Real theta) {
  const RotarySections sec = rotary_sections(head_dim);
  const int pairs = head_dim / 2;
  RotaryTable table;
  table.head_dim = head_dim;
  table.cos.resize(positions.size() * pairs);
  table.sin.resize(positions.size() * pairs);
  for (std::size_t tok = 0; tok < positions.size(); ++tok) {
    for (int p = 0; p < pairs; ++p) {
      const int axis = p < sec.t ? 0 : (p < sec.t + sec.y ? 1 : 2);
      const double freq = std::pow(static_cast<double>(theta), -2.0 * p / head_dim);
      const double angle = positions[tok][static_cast<std::size_t>(axis)] * freq;
      table.cos[tok * pairs + p] = static_cast<Real>(std::cos(angle));
      table.sin[tok * pairs + p] = static_cast<Real>(std::sin(angle));
    }
  }
  return table;
}

Var rope(Var x, std::shared_ptr<const RotaryTable> table, int heads) {
  const Tensor& X = x.value();
  require_matrix(X, "rope");
  const int n = X.rows(), d = X.cols();
  if (heads <= 0 || d % heads != 0) throw DimensionError("rope: width not divisible by heads");
  const int dh = d / heads;
  if (!table || table->head_dim != dh || table->tokens() != n) {
    throw DimensionError("rope: table does not match " + shape_string(X.shape()) + " with " +
                         std::to_string(heads) + " heads");
  }
  const int pairs = dh / 2;
  Tensor out(X.shape());
  for (int r = 0; r < n; ++r) {
    const Real* cs = table->cos.data() + std::size_t(r) * pairs;
    const Real* sn = table->sin.data() + std::size_t(r) * pairs;
    for (int h = 0; h < heads; ++h) {
      const Real* src = X.data() + std::size_t(r) * d + h * dh;
      Real* dst = out.data() + std::size_t(r) * d + h * dh;
      for (int p = 0; p < pairs; ++p) {
        const Real a = src[2 * p], b = src[2 * p + 1];
        dst[2 * p] = a * cs[p] - b * sn[p];
        dst[2 * p + 1] = a * sn[p] + b * cs[p];
      }
    }
  }
  return tape_of(x).record(std::move(out), {x}, [x, table, heads, n, d, dh, pairs](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (!gx) return;
    for (int r = 0; r < n; ++r) {
      const Real* cs = table->cos.data() + std::size_t(r) * pairs;
      const Real* sn = table->sin.data() + std::size_t(r) * pairs;
      for (int h = 0; h < heads; ++h) {
        const Real* src = g.data() + std::size_t(r) * d + h * dh;
        Real* dst = gx->data() + std::size_t(r) * d + h * dh;
        for (int p = 0; p < pairs; ++p) {
          const Real a = src[2 * p], b = src[2 * p + 1];
          dst[2 * p] += a * cs[p] + b * sn[p];
          dst[2 * p + 1] += -a * sn[p] + b * cs[p];
        }
      }
    }
  });
}

Var masked_attention(Var q, Var k, Var v, std::shared_ptr<const BoolMatrix> mask, int heads) {
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  require_matrix(Q, "attention");
  require_matrix(K, "attention");
  require_same_shape(K, V, "attention keys/values");
  const int tq = Q.rows(), tk = K.rows(), d = Q.cols();
  if (K.cols() != d) throw DimensionError("attention: query/key widths differ");
  if (heads <= 0 || d % heads != 0) throw DimensionError("attention: width not divisible by heads");
  if (!mask || mask->rows() != tq || mask->cols() != tk) {
    throw DimensionError("attention: mask " +
                         (mask ? std::to_string(mask->rows()) + "x" + std::to_string(mask->cols())
                               : std::string("missing")) +
                         " does not match " + std::to_string(tq) + "x" + std::to_string(tk));
  }
  const int dh = d / heads;
  const Real sc = Real(1) / std::sqrt(Real(dh));
  for (int i = 0; i < tq; ++i) {
    if (mask->row_count(i) == 0) throw MaskError("attention: mask row " + std::to_string(i) + " allows no key");
  }

  // Dense per-head scores. Masked entries get probability exactly 0, so a
  // masked key's value enters a row only as 0 * v and cannot change its bits.
  using Strided = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;
  using MutStrided = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;
  auto probs = std::make_shared<std::vector<Mat>>(static_cast<std::size_t>(heads));
  Tensor out({tq, d});
  for (int h = 0; h < heads; ++h) {
    Strided Qh(Q.data() + h * dh, tq, dh, Eigen::OuterStride<>(d));
    Strided Kh(K.data() + h * dh, tk, dh, Eigen::OuterStride<>(d));
    Strided Vh(V.data() + h * dh, tk, dh, Eigen::OuterStride<>(d));
    Mat& P = (*probs)[static_cast<std::size_t>(h)];
    P.noalias() = (Qh * Kh.transpose()) * sc;
    for (int i = 0; i < tq; ++i) {
      Real* p = P.data() + std::size_t(i) * tk;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (int j = 0; j < tk; ++j) {
        if ((*mask)(i, j)) mx = std::max(mx, p[j]);
      }
      Real z = 0;
      for (int j = 0; j < tk; ++j) {
        p[j] = (*mask)(i, j) ? std::exp(p[j] - mx) : Real(0);
        z += p[j];
      }
      const Real inv = Real(1) / z;
      for (int j = 0; j < tk; ++j) p[j] *= inv;
    }
    MutStrided Oh(out.data() + h * dh, tq, dh, Eigen::OuterStride<>(d));
    Oh.noalias() = P * Vh;
  }

  return tape_of(q).record(
      std::move(out), {q, k, v}, [q, k, v, probs, heads, tq, tk, d, dh, sc](Tape& t, const Tensor& g) {
        const Tensor& Q = t.value(q);
        const Tensor& K = t.value(k);
        const Tensor& V = t.value(v);
        Tensor* gq = t.grad_buffer(q);
        Tensor* gk = t.grad_buffer(k);
        Tensor* gv = t.grad_buffer(v);
        Mat dS;
        for (int h = 0; h < heads; ++h) {
          const Mat& P = (*probs)[static_cast<std::size_t>(h)];
          Strided Gh(g.data() + h * dh, tq, dh, Eigen::OuterStride<>(d));
          Strided Vh(V.data() + h * dh, tk, dh, Eigen::OuterStride<>(d));
          if (gv) {
            MutStrided dV(gv->data() + h * dh, tk, dh, Eigen::OuterStride<>(d));
            dV.noalias() += P.transpose() * Gh;
          }
          if (!gq && !gk) continue;
          dS.noalias() = Gh * Vh.transpose();
          for (int i = 0; i < tq; ++i) {
            Real* ds = dS.data() + std::size_t(i) * tk;
            const Real* p = P.data() + std::size_t(i) * tk;
            Real dot = 0;
            for (int j = 0; j < tk; ++j) dot += p[j] * ds[j];
            for (int j = 0; j < tk; ++j) ds[j] = p[j] * (ds[j] - dot) * sc;
          }
          if (gq) {
            Strided Kh(K.data() + h * dh, tk, dh, Eigen::OuterStride<>(d));
            MutStrided dQ(gq->data() + h * dh, tq, dh, Eigen::OuterStride<>(d));
            dQ.noalias() += dS * Kh;
          }
          if (gk) {
            Strided Qh(Q.data() + h * dh, tq, dh, Eigen::OuterStride<>(d));
            MutStrided dK(gk->data() + h * dh, tk, dh, Eigen::OuterStride<>(d));
            dK.noalias() += dS.transpose() * Qh;
          }
        }
      });
}

Var attention(Var q, Var k, Var v, std::shared_ptr<const BoolMatrix> mask,
              std::shared_ptr<const RotaryTable> q_pos, std::shared_ptr<const RotaryTable> k_pos,
              int heads) {
  Var qr = q_pos ? rope(q, std::move(q_pos), heads) : q;
  Var kr = k_pos ? rope(k, std::move(k_pos), heads) : k;
  return masked_attention(qr, kr, v, std::move(mask), heads);
}

RESTOK_END_NAMESPACE
