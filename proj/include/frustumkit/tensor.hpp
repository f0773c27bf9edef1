#pragma once

// Minimal dense tensor with reverse-mode automatic differentiation.
// A Tape records primitive ops eagerly; backward() traverses the record
// in exact reverse order and accumulates gradients. Everything is
// double precision and single threaded; independent tapes may run in
// parallel and merge gradients by summation.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "frustumkit/core.hpp"

namespace fk {

struct Tensor {
  std::vector<size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (element_count(shape) != data.size()) throw DataError("tensor shape/data mismatch");
  }

  static size_t element_count(const std::vector<size_t>& s) {
    return std::accumulate(s.begin(), s.end(), size_t{1}, std::multiplies<>());
  }
  static Tensor zeros(std::vector<size_t> s) {
    size_t n = element_count(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor vector(std::vector<double> v) {
    size_t n = v.size();
    return Tensor({n}, std::move(v));
  }

  size_t size() const { return data.size(); }
  size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  double& at(size_t i, size_t j) { return data[i * cols() + j]; }
  double at(size_t i, size_t j) const { return data[i * cols() + j]; }
  double scalar_value() const {
    if (size() != 1) throw DataError("tensor is not a scalar");
    return data[0];
  }
  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

struct NonFiniteLossError : NonFiniteError {
  NonFiniteLossError() : NonFiniteError("loss is not finite") {}
};

using ValueId = uint32_t;

class Tape {
 public:
  ValueId leaf(Tensor t) { return make(std::move(t), nullptr); }
  ValueId constant(Tensor t) { return make(std::move(t), nullptr); }

  const Tensor& value(ValueId id) const { return nodes_[id].value; }
  const Tensor& grad(ValueId id) const { return nodes_[id].grad; }
  size_t size() const { return nodes_.size(); }

  // ---- primitive ops -----------------------------------------------------

  // [M,K] x [K,N] -> [M,N]
  ValueId matmul(ValueId a, ValueId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols() != B.rows()) throw DataError("matmul inner dimension mismatch");
    const size_t M = A.rows(), K = A.cols(), N = B.cols();
    Tensor C = Tensor::zeros({M, N});
    mm(A.data.data(), B.data.data(), C.data.data(), M, K, N);
    return make(std::move(C), [this, a, b, M, K, N](ValueId out) {
      // dA += dC * B^T ; dB += A^T * dC
      const double* dC = grad(out).data.data();
      const double* Bd = value(b).data.data();
      const double* Ad = value(a).data.data();
      double* dA = grad_mut(a).data.data();
      double* dB = grad_mut(b).data.data();
      for (size_t i = 0; i < M; ++i)
        for (size_t k = 0; k < K; ++k) {
          double acc = 0.0;
          const double* dCrow = dC + i * N;
          const double* Brow = Bd + k * N;
          for (size_t j = 0; j < N; ++j) acc += dCrow[j] * Brow[j];
          dA[i * K + k] += acc;
        }
      for (size_t i = 0; i < M; ++i) {
        const double* dCrow = dC + i * N;
        const double* Arow = Ad + i * K;
        for (size_t k = 0; k < K; ++k) {
          const double aik = Arow[k];
          if (aik == 0.0) continue;
          double* dBrow = dB + k * N;
          for (size_t j = 0; j < N; ++j) dBrow[j] += aik * dCrow[j];
        }
      }
    });
  }

  ValueId add(ValueId a, ValueId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.shape != B.shape) throw DataError("add shape mismatch");
    Tensor C = A;
    for (size_t i = 0; i < C.size(); ++i) C.data[i] += B.data[i];
    return make(std::move(C), [this, a, b](ValueId out) {
      accumulate(a, grad(out).data, 1.0);
      accumulate(b, grad(out).data, 1.0);
    });
  }

  // a + k * b, shapes equal
  ValueId add_scaled(ValueId a, ValueId b, double k) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.shape != B.shape) throw DataError("add_scaled shape mismatch");
    Tensor C = A;
    for (size_t i = 0; i < C.size(); ++i) C.data[i] += k * B.data[i];
    return make(std::move(C), [this, a, b, k](ValueId out) {
      accumulate(a, grad(out).data, 1.0);
      accumulate(b, grad(out).data, k);
    });
  }

  ValueId scale(ValueId a, double k) {
    Tensor C = value(a);
    for (double& v : C.data) v *= k;
    return make(std::move(C), [this, a, k](ValueId out) { accumulate(a, grad(out).data, k); });
  }

  // [N,C] + bias[C] broadcast over rows
  ValueId add_row(ValueId x, ValueId bias) {
    const Tensor& X = value(x);
    const Tensor& B = value(bias);
    if (B.size() != X.cols()) throw DataError("bias width mismatch");
    Tensor C = X;
    const size_t n = X.rows(), c = X.cols();
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < c; ++j) C.data[i * c + j] += B.data[j];
    return make(std::move(C), [this, x, bias, n, c](ValueId out) {
      const double* dY = grad(out).data.data();
      accumulate(x, grad(out).data, 1.0);
      double* dB = grad_mut(bias).data.data();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < c; ++j) dB[j] += dY[i * c + j];
    });
  }

  // [N,C] - row[C] broadcast over rows (the T-Net shift)
  ValueId sub_row(ValueId x, ValueId row) {
    const Tensor& X = value(x);
    const Tensor& R = value(row);
    if (R.size() != X.cols()) throw DataError("row width mismatch");
    Tensor C = X;
    const size_t n = X.rows(), c = X.cols();
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < c; ++j) C.data[i * c + j] -= R.data[j];
    return make(std::move(C), [this, x, row, n, c](ValueId out) {
      const double* dY = grad(out).data.data();
      accumulate(x, grad(out).data, 1.0);
      double* dR = grad_mut(row).data.data();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < c; ++j) dR[j] -= dY[i * c + j];
    });
  }

  ValueId relu(ValueId x) {
    Tensor C = value(x);
    for (double& v : C.data) v = v > 0.0 ? v : 0.0;
    return make(std::move(C), [this, x](ValueId out) {
      const Tensor& X = value(x);
      const double* dY = grad(out).data.data();
      double* dX = grad_mut(x).data.data();
      for (size_t i = 0; i < X.size(); ++i)
        if (X.data[i] > 0.0) dX[i] += dY[i];
    });
  }

  // Per-channel max over rows: [N,C] -> [C]. Gradient routes to the
  // argmax row only; ties go to the lowest row index.
  ValueId max_rows(ValueId x) {
    const Tensor& X = value(x);
    const size_t n = X.rows(), c = X.cols();
    if (n == 0) throw DataError("max_rows on empty tensor");
    Tensor C = Tensor::zeros({c});
    std::vector<size_t> arg(c, 0);
    for (size_t j = 0; j < c; ++j) C.data[j] = X.data[j];
    for (size_t i = 1; i < n; ++i)
      for (size_t j = 0; j < c; ++j) {
        const double v = X.data[i * c + j];
        if (v > C.data[j]) {
          C.data[j] = v;
          arg[j] = i;
        }
      }
    return make(std::move(C), [this, x, arg = std::move(arg), c](ValueId out) {
      const double* dY = grad(out).data.data();
      double* dX = grad_mut(x).data.data();
      for (size_t j = 0; j < c; ++j) dX[arg[j] * c + j] += dY[j];
    });
  }

  // argmax row per channel (inference helper, value only)
  std::vector<size_t> argmax_rows(ValueId x) const {
    const Tensor& X = value(x);
    std::vector<size_t> arg(X.cols(), 0);
    for (size_t j = 0; j < X.cols(); ++j) {
      double best = X.at(0, j);
      for (size_t i = 1; i < X.rows(); ++i)
        if (X.at(i, j) > best) {
          best = X.at(i, j);
          arg[j] = i;
        }
    }
    return arg;
  }

  // [N,Ca],[N,Cb] -> [N,Ca+Cb]
  ValueId concat_cols(ValueId a, ValueId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rows() != B.rows()) throw DataError("concat_cols row mismatch");
    const size_t n = A.rows(), ca = A.cols(), cb = B.cols();
    Tensor C = Tensor::zeros({n, ca + cb});
    for (size_t i = 0; i < n; ++i) {
      std::copy_n(&A.data[i * ca], ca, &C.data[i * (ca + cb)]);
      std::copy_n(&B.data[i * cb], cb, &C.data[i * (ca + cb) + ca]);
    }
    return make(std::move(C), [this, a, b, n, ca, cb](ValueId out) {
      const double* dY = grad(out).data.data();
      double* dA = grad_mut(a).data.data();
      double* dB = grad_mut(b).data.data();
      for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < ca; ++j) dA[i * ca + j] += dY[i * (ca + cb) + j];
        for (size_t j = 0; j < cb; ++j) dB[i * cb + j] += dY[i * (ca + cb) + ca + j];
      }
    });
  }

  // [A],[B] -> [A+B]
  ValueId concat_vec(ValueId a, ValueId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    Tensor C = Tensor::zeros({A.size() + B.size()});
    std::copy(A.data.begin(), A.data.end(), C.data.begin());
    std::copy(B.data.begin(), B.data.end(), C.data.begin() + A.size());
    const size_t na = A.size(), nb = B.size();
    return make(std::move(C), [this, a, b, na, nb](ValueId out) {
      const double* dY = grad(out).data.data();
      double* dA = grad_mut(a).data.data();
      double* dB = grad_mut(b).data.data();
      for (size_t i = 0; i < na; ++i) dA[i] += dY[i];
      for (size_t i = 0; i < nb; ++i) dB[i] += dY[na + i];
    });
  }

  // [C] -> [N,C] row copies
  ValueId broadcast_row(ValueId v, size_t n) {
    const Tensor& V = value(v);
    const size_t c = V.size();
    Tensor C = Tensor::zeros({n, c});
    for (size_t i = 0; i < n; ++i) std::copy(V.data.begin(), V.data.end(), &C.data[i * c]);
    return make(std::move(C), [this, v, n, c](ValueId out) {
      const double* dY = grad(out).data.data();
      double* dV = grad_mut(v).data.data();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < c; ++j) dV[j] += dY[i * c + j];
    });
  }

  // [C] -> [1,C]; pure reshape
  ValueId reshape_row(ValueId x) {
    const Tensor& X = value(x);
    Tensor C({1, X.size()}, X.data);
    return make(std::move(C), [this, x](ValueId out) { accumulate(x, grad(out).data, 1.0); });
  }

  // any shape -> [n]; pure reshape
  ValueId flatten(ValueId x) {
    const Tensor& X = value(x);
    Tensor C({X.size()}, X.data);
    return make(std::move(C), [this, x](ValueId out) { accumulate(x, grad(out).data, 1.0); });
  }

  ValueId slice_vec(ValueId x, size_t begin, size_t len) {
    const Tensor& X = value(x);
    if (begin + len > X.size()) throw DataError("slice out of range");
    Tensor C = Tensor::zeros({len});
    std::copy_n(X.data.begin() + begin, len, C.data.begin());
    return make(std::move(C), [this, x, begin, len](ValueId out) {
      const double* dY = grad(out).data.data();
      double* dX = grad_mut(x).data.data();
      for (size_t i = 0; i < len; ++i) dX[begin + i] += dY[i];
    });
  }

  ValueId pick(ValueId x, size_t index) { return slice_vec(x, index, 1); }

  // Mean softmax cross-entropy over rows; labels are class indices.
  ValueId softmax_cross_entropy_rows(ValueId logits, std::vector<int> labels) {
    const Tensor& X = value(logits);
    const size_t n = X.rows(), c = X.cols();
    if (labels.size() != n) throw DataError("label count mismatch");
    Tensor probs = Tensor::zeros({n, c});
    double loss = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const double* row = &X.data[i * c];
      double mx = row[0];
      for (size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
      double denom = 0.0;
      for (size_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
      const double log_denom = std::log(denom);
      for (size_t j = 0; j < c; ++j) probs.data[i * c + j] = std::exp(row[j] - mx) / denom;
      const int y = labels[i];
      if (y < 0 || static_cast<size_t>(y) >= c) throw DataError("label out of range");
      loss += -(row[y] - mx - log_denom);
    }
    loss /= static_cast<double>(n);
    return make(Tensor::scalar(loss),
                [this, logits, labels = std::move(labels), probs = std::move(probs), n,
                 c](ValueId out) {
                  const double g = grad(out).data[0] / static_cast<double>(n);
                  double* dX = grad_mut(logits).data.data();
                  for (size_t i = 0; i < n; ++i)
                    for (size_t j = 0; j < c; ++j) {
                      const double ind = (static_cast<size_t>(labels[i]) == j) ? 1.0 : 0.0;
                      dX[i * c + j] += g * (probs.data[i * c + j] - ind);
                    }
                });
  }

  ValueId softmax_cross_entropy_vec(ValueId logits, int label) {
    const Tensor& X = value(logits);
    Tensor as_row({1, X.size()}, X.data);
    ValueId reshaped = make(std::move(as_row), [this, logits](ValueId out) {
      accumulate(logits, grad(out).data, 1.0);
    });
    return softmax_cross_entropy_rows(reshaped, {label});
  }

  // Sum of per-component Huber losses against a constant target.
  ValueId huber_to_const(ValueId x, std::vector<double> target, double delta = 1.0) {
    const Tensor& X = value(x);
    if (target.size() != X.size()) throw DataError("huber target size mismatch");
    double loss = 0.0;
    for (size_t i = 0; i < X.size(); ++i) {
      const double r = X.data[i] - target[i];
      loss += std::abs(r) <= delta ? 0.5 * r * r : delta * (std::abs(r) - delta / 2.0);
    }
    return make(Tensor::scalar(loss),
                [this, x, target = std::move(target), delta](ValueId out) {
                  const double g = grad(out).data[0];
                  const Tensor& X = value(x);
                  double* dX = grad_mut(x).data.data();
                  for (size_t i = 0; i < X.size(); ++i) {
                    const double r = X.data[i] - target[i];
                    dX[i] += g * (std::abs(r) <= delta ? r : delta * (r > 0 ? 1.0 : -1.0));
                  }
                });
  }

  // Corners of an oriented box from tape values center[3], size[3] (h,w,l)
  // and heading[1]; output [8,3] in the documented corner order.
  ValueId box_corners_op(ValueId center, ValueId size, ValueId heading) {
    static constexpr double sx[4] = {+0.5, -0.5, -0.5, +0.5};
    static constexpr double sz[4] = {+0.5, +0.5, -0.5, -0.5};
    const Tensor& C = value(center);
    const Tensor& S = value(size);
    const double theta = value(heading).scalar_value();
    if (C.size() != 3 || S.size() != 3) throw DataError("box_corners_op expects 3-vectors");
    const double h = S.data[0], w = S.data[1], l = S.data[2];
    const double c = std::cos(theta), s = std::sin(theta);
    Tensor out = Tensor::zeros({8, 3});
    for (int k = 0; k < 8; ++k) {
      const int r = k % 4;
      const double lx = sx[r] * l, ly = (k < 4 ? -0.5 : 0.5) * h, lz = sz[r] * w;
      // association matches box_corners() so values agree bitwise
      out.data[3 * k + 0] = C.data[0] + (c * lx + s * lz);
      out.data[3 * k + 1] = C.data[1] + ly;
      out.data[3 * k + 2] = C.data[2] + (-s * lx + c * lz);
    }
    return make(std::move(out), [this, center, size, heading, theta](ValueId out_id) {
      const double* dY = grad(out_id).data.data();
      const Tensor& S = value(size);
      const double h = S.data[0], w = S.data[1], l = S.data[2];
      const double c = std::cos(theta), s = std::sin(theta);
      double* dC = grad_mut(center).data.data();
      double* dS = grad_mut(size).data.data();
      double* dTheta = grad_mut(heading).data.data();
      for (int k = 0; k < 8; ++k) {
        const int r = k % 4;
        const double px = sx[r], py = (k < 4 ? -0.5 : 0.5), pz = sz[r];
        const double lx = px * l, ly = py * h, lz = pz * w;
        const double gx = dY[3 * k + 0], gy = dY[3 * k + 1], gz = dY[3 * k + 2];
        dC[0] += gx;
        dC[1] += gy;
        dC[2] += gz;
        // world = center + (c*lx + s*lz, ly, -s*lx + c*lz)
        dS[0] += gy * py;                                   // d/dh
        dS[1] += gx * s * pz + gz * c * pz;                 // d/dw
        dS[2] += gx * c * px + gz * -s * px;                // d/dl
        dTheta[0] += gx * (-s * lx + c * lz) + gz * (-c * lx - s * lz);
        (void)ly;
      }
    });
  }

  // Sum over rows of the Euclidean distance to a constant target row;
  // gradient is the unit direction, zero at coincident points.
  ValueId row_distance_sum(ValueId x, std::vector<double> target) {
    const Tensor& X = value(x);
    if (target.size() != X.size()) throw DataError("row_distance_sum target mismatch");
    const size_t n = X.rows(), c = X.cols();
    double loss = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double sq = 0.0;
      for (size_t j = 0; j < c; ++j) {
        const double d = X.data[i * c + j] - target[i * c + j];
        sq += d * d;
      }
      loss += std::sqrt(sq);
    }
    return make(Tensor::scalar(loss),
                [this, x, target = std::move(target), n, c](ValueId out) {
                  const double g = grad(out).data[0];
                  const Tensor& X = value(x);
                  double* dX = grad_mut(x).data.data();
                  for (size_t i = 0; i < n; ++i) {
                    double sq = 0.0;
                    for (size_t j = 0; j < c; ++j) {
                      const double d = X.data[i * c + j] - target[i * c + j];
                      sq += d * d;
                    }
                    const double norm = std::sqrt(sq);
                    if (norm < 1e-300) continue;
                    for (size_t j = 0; j < c; ++j) {
                      const double d = X.data[i * c + j] - target[i * c + j];
                      dX[i * c + j] += g * d / norm;
                    }
                  }
                });
  }

  // Batch normalization over the row (point) axis: per column j,
  // y = gamma_j * (x - mean_j) / sqrt(var_j + eps) + beta_j.
  ValueId batch_norm_rows(ValueId x, ValueId gamma, ValueId beta, double eps = 1e-5,
                          std::vector<double>* mean_out = nullptr,
                          std::vector<double>* var_out = nullptr) {
    const Tensor& X = value(x);
    const size_t n = X.rows(), c = X.cols();
    if (value(gamma).size() != c || value(beta).size() != c)
      throw DataError("batch_norm parameter width mismatch");
    if (n == 0) throw DataError("batch_norm on empty tensor");
    std::vector<double> mean(c, 0.0), var(c, 0.0), inv_std(c, 0.0);
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < c; ++j) mean[j] += X.data[i * c + j];
    for (size_t j = 0; j < c; ++j) mean[j] /= static_cast<double>(n);
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < c; ++j) {
        const double d = X.data[i * c + j] - mean[j];
        var[j] += d * d;
      }
    for (size_t j = 0; j < c; ++j) {
      var[j] /= static_cast<double>(n);
      inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
    }
    if (mean_out) *mean_out = mean;
    if (var_out) *var_out = var;

    Tensor Y = Tensor::zeros({n, c});
    Tensor xhat = Tensor::zeros({n, c});
    const Tensor& G = value(gamma);
    const Tensor& B = value(beta);
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < c; ++j) {
        const double h = (X.data[i * c + j] - mean[j]) * inv_std[j];
        xhat.data[i * c + j] = h;
        Y.data[i * c + j] = G.data[j] * h + B.data[j];
      }
    return make(std::move(Y), [this, x, gamma, beta, n, c, inv_std = std::move(inv_std),
                               xhat = std::move(xhat)](ValueId out) {
      const double* dY = grad(out).data.data();
      const Tensor& G = value(gamma);
      double* dX = grad_mut(x).data.data();
      double* dG = grad_mut(gamma).data.data();
      double* dB = grad_mut(beta).data.data();
      for (size_t j = 0; j < c; ++j) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (size_t i = 0; i < n; ++i) {
          sum_dy += dY[i * c + j];
          sum_dy_xhat += dY[i * c + j] * xhat.data[i * c + j];
        }
        dB[j] += sum_dy;
        dG[j] += sum_dy_xhat;
        const double gj = G.data[j];
        for (size_t i = 0; i < n; ++i) {
          const double dy = dY[i * c + j];
          dX[i * c + j] += gj * inv_std[j] *
                           (dy - sum_dy / n - xhat.data[i * c + j] * sum_dy_xhat / n);
        }
      }
    });
  }

  // Inference-time normalization against fixed running statistics.
  ValueId batch_norm_rows_inference(ValueId x, ValueId gamma, ValueId beta,
                                    const std::vector<double>& running_mean,
                                    const std::vector<double>& running_var,
                                    double eps = 1e-5) {
    const Tensor& X = value(x);
    const size_t n = X.rows(), c = X.cols();
    if (running_mean.size() != c || running_var.size() != c)
      throw DataError("batch_norm running stats width mismatch");
    Tensor Y = Tensor::zeros({n, c});
    const Tensor& G = value(gamma);
    const Tensor& B = value(beta);
    std::vector<double> inv_std(c);
    for (size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(running_var[j] + eps);
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < c; ++j)
        Y.data[i * c + j] =
            G.data[j] * (X.data[i * c + j] - running_mean[j]) * inv_std[j] + B.data[j];
    return make(std::move(Y),
                [this, x, gamma, beta, n, c, inv_std = std::move(inv_std),
                 running_mean](ValueId out) {
                  const double* dY = grad(out).data.data();
                  const Tensor& X = value(x);
                  const Tensor& G = value(gamma);
                  double* dX = grad_mut(x).data.data();
                  double* dG = grad_mut(gamma).data.data();
                  double* dB = grad_mut(beta).data.data();
                  for (size_t i = 0; i < n; ++i)
                    for (size_t j = 0; j < c; ++j) {
                      const double dy = dY[i * c + j];
                      dX[i * c + j] += dy * G.data[j] * inv_std[j];
                      dG[j] += dy * (X.data[i * c + j] - running_mean[j]) * inv_std[j];
                      dB[j] += dy;
                    }
                });
  }

  // Sum of all entries -> scalar.
  ValueId sum_all(ValueId x) {
    const Tensor& X = value(x);
    double s = 0.0;
    for (double v : X.data) s += v;
    return make(Tensor::scalar(s), [this, x](ValueId out) {
      const double g = grad(out).data[0];
      double* dX = grad_mut(x).data.data();
      for (size_t i = 0; i < value(x).size(); ++i) dX[i] += g;
    });
  }

  // Angle wrap to [-pi, pi); derivative is 1 away from the seam.
  ValueId wrap_angle_op(ValueId x) {
    const Tensor& X = value(x);
    Tensor C = X;
    for (double& v : C.data) v = wrap_angle(v);
    return make(std::move(C), [this, x](ValueId out) { accumulate(x, grad(out).data, 1.0); });
  }

  // Scalar minimum; gradient follows the smaller input (ties -> a).
  ValueId min2(ValueId a, ValueId b) {
    const double va = value(a).scalar_value();
    const double vb = value(b).scalar_value();
    const bool first = va <= vb;
    return make(Tensor::scalar(first ? va : vb), [this, a, b, first](ValueId out) {
      accumulate(first ? a : b, grad(out).data, 1.0);
    });
  }

  // x (*) constant vector, elementwise
  ValueId mul_cvec(ValueId x, std::vector<double> cv) {
    const Tensor& X = value(x);
    if (cv.size() != X.size()) throw DataError("mul_cvec size mismatch");
    Tensor C = X;
    for (size_t i = 0; i < C.size(); ++i) C.data[i] *= cv[i];
    return make(std::move(C), [this, x, cv = std::move(cv)](ValueId out) {
      const double* dY = grad(out).data.data();
      double* dX = grad_mut(x).data.data();
      for (size_t i = 0; i < cv.size(); ++i) dX[i] += dY[i] * cv[i];
    });
  }

  // x + constant vector
  ValueId add_cvec(ValueId x, std::vector<double> cv) {
    const Tensor& X = value(x);
    if (cv.size() != X.size()) throw DataError("add_cvec size mismatch");
    Tensor C = X;
    for (size_t i = 0; i < C.size(); ++i) C.data[i] += cv[i];
    return make(std::move(C), [this, x](ValueId out) { accumulate(x, grad(out).data, 1.0); });
  }

  // ---- backward ------------------------------------------------------------

  void backward(ValueId loss) {
    if (value(loss).size() != 1) throw DataError("backward needs a scalar loss");
    if (!std::isfinite(value(loss).data[0])) throw NonFiniteLossError();
    for (auto& node : nodes_) {
      node.grad.shape = node.value.shape;
      node.grad.data.assign(node.value.size(), 0.0);
    }
    nodes_[loss].grad.data[0] = 1.0;
    for (size_t i = nodes_.size(); i-- > 0;) {
      if (nodes_[i].back) nodes_[i].back(static_cast<ValueId>(i));
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(ValueId)> back;
  };

  ValueId make(Tensor value, std::function<void(ValueId)> back) {
    nodes_.push_back({std::move(value), Tensor{}, std::move(back)});
    return static_cast<ValueId>(nodes_.size() - 1);
  }

  Tensor& grad_mut(ValueId id) { return nodes_[id].grad; }

  void accumulate(ValueId id, const std::vector<double>& g, double k) {
    double* dst = grad_mut(id).data.data();
    for (size_t i = 0; i < g.size(); ++i) dst[i] += k * g[i];
  }

  // Simple blocked-free matmul; the j loop vectorizes.
  static void mm(const double* A, const double* B, double* C, size_t M, size_t K, size_t N) {
    for (size_t i = 0; i < M; ++i) {
      double* Crow = C + i * N;
      for (size_t k = 0; k < K; ++k) {
        const double aik = A[i * K + k];
        if (aik == 0.0) continue;
        const double* Brow = B + k * N;
        for (size_t j = 0; j < N; ++j) Crow[j] += aik * Brow[j];
      }
    }
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Adam optimizer with step-wise learning-rate halving.

struct AdamState {
  Tensor m, v;
  int64_t t = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

inline void adam_step(Tensor& param, const Tensor& grad, AdamState& state, double lr,
                      const AdamConfig& cfg = {}) {
  if (grad.shape != param.shape) throw DataError("adam gradient shape mismatch");
  if (state.m.data.empty()) {
    state.m = Tensor::zeros(param.shape);
    state.v = Tensor::zeros(param.shape);
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < param.size(); ++i) {
    const double g = grad.data[i];
    state.m.data[i] = cfg.beta1 * state.m.data[i] + (1.0 - cfg.beta1) * g;
    state.v.data[i] = cfg.beta2 * state.v.data[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m.data[i] / bc1;
    const double vhat = state.v.data[i] / bc2;
    param.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
}

// lr halves once per decay interval: lr0 * 0.5^floor(step / halve_every).
inline double lr_at_step(double lr0, int64_t step, int64_t halve_every) {
  if (halve_every <= 0) return lr0;
  return lr0 * std::pow(0.5, static_cast<double>(step / halve_every));
}

// EMA decay for batch-norm running statistics: starts at 0.5, the
// remaining momentum halves every interval, and the decay is clipped at
// 0.99.
inline double bn_decay_at_step(int64_t step, int64_t halve_every, double initial = 0.5,
                               double clip = 0.99) {
  if (halve_every <= 0) return clip;
  const double momentum =
      (1.0 - initial) * std::pow(0.5, static_cast<double>(step / halve_every));
  return std::min(clip, 1.0 - momentum);
}

// ---------------------------------------------------------------------------
// Central-difference gradient checking.

struct GradCheckReport {
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  size_t checked = 0;
  bool ok = true;
  std::string worst_label;
};

// fn builds a scalar loss from leaves created inside the given tape for
// the supplied input tensors. Each input component is perturbed by +-eps
// and the central difference is compared against the reverse-mode grad.
inline GradCheckReport gradient_check(
    const std::function<ValueId(Tape&, std::vector<ValueId>&)>& fn,
    std::vector<Tensor> inputs, double eps = 1e-3, double rel_tol = 1e-4,
    double abs_tol = 1e-6, const std::string& label = "") {
  GradCheckReport report;
  Tape tape;
  std::vector<ValueId> ids;
  for (auto& in : inputs) ids.push_back(tape.leaf(in));
  ValueId loss = fn(tape, ids);
  tape.backward(loss);
  std::vector<Tensor> analytic;
  for (ValueId id : ids) analytic.push_back(tape.grad(id));

  for (size_t which = 0; which < inputs.size(); ++which) {
    for (size_t i = 0; i < inputs[which].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Tensor> shifted = inputs;
        shifted[which].data[i] += delta;
        Tape t2;
        std::vector<ValueId> ids2;
        for (auto& in : shifted) ids2.push_back(t2.leaf(in));
        return t2.value(fn(t2, ids2)).scalar_value();
      };
      const double numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
      const double exact = analytic[which].data[i];
      const double abs_err = std::abs(numeric - exact);
      const double rel_err = abs_err / std::max(1.0e-12, std::max(std::abs(numeric), std::abs(exact)));
      ++report.checked;
      if (abs_err > report.max_abs_error) report.max_abs_error = abs_err;
      if (rel_err > report.max_rel_error) {
        report.max_rel_error = rel_err;
        report.worst_label = label;
      }
      if (abs_err > abs_tol && rel_err > rel_tol) report.ok = false;
    }
  }
  return report;
}

}  // namespace fk
