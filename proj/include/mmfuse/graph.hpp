#ifndef MMFUSE_GRAPH_HPP_
#define MMFUSE_GRAPH_HPP_

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mmfuse/error.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

namespace testhooks {
// Flips the sign of the relu backward rule. Exists so the gradient checker
// can prove it catches a broken derivative; never set outside tests.
inline bool negate_relu_backward = false;
}  // namespace testhooks

// --- raw accumulating matrix kernels (row-major, fixed loop order) ---
// Loop orders and lane counts are fixed, so a given binary is bit-
// reproducible run to run.

// C += A(m×k) · B(k×n). Four k-steps share one pass over the output row.
template <class T>
void mm_acc_nn(const T* __restrict a, const T* __restrict b, T* __restrict c,
               int m, int k, int n) {
  const int k4 = k & ~3;
  for (int i = 0; i < m; ++i) {
    const T* ai = a + static_cast<size_t>(i) * k;
    T* ci = c + static_cast<size_t>(i) * n;
    int p = 0;
    for (; p < k4; p += 4) {
      const T a0 = ai[p], a1 = ai[p + 1], a2 = ai[p + 2], a3 = ai[p + 3];
      const T* b0 = b + static_cast<size_t>(p) * n;
      const T* b1 = b0 + n;
      const T* b2 = b1 + n;
      const T* b3 = b2 + n;
      for (int j = 0; j < n; ++j) {
        ci[j] += (a0 * b0[j] + a1 * b1[j]) + (a2 * b2[j] + a3 * b3[j]);
      }
    }
    for (; p < k; ++p) {
      const T aip = ai[p];
      const T* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C += A(m×k) · B(n×k)ᵀ. Four fixed partial sums per dot product keep the
// reduction vectorizable.
template <class T>
void mm_acc_nt(const T* __restrict a, const T* __restrict b, T* __restrict c,
               int m, int k, int n) {
  const int k4 = k & ~3;
  for (int i = 0; i < m; ++i) {
    const T* ai = a + static_cast<size_t>(i) * k;
    T* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* bj = b + static_cast<size_t>(j) * k;
      T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
      for (int p = 0; p < k4; p += 4) {
        s0 += ai[p] * bj[p];
        s1 += ai[p + 1] * bj[p + 1];
        s2 += ai[p + 2] * bj[p + 2];
        s3 += ai[p + 3] * bj[p + 3];
      }
      T acc = (s0 + s1) + (s2 + s3);
      for (int p = k4; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C += A(k×m)ᵀ · B(k×n), blocked like mm_acc_nn.
template <class T>
void mm_acc_tn(const T* __restrict a, const T* __restrict b, T* __restrict c,
               int m, int k, int n) {
  const int k4 = k & ~3;
  int p = 0;
  for (; p < k4; p += 4) {
    const T* a0 = a + static_cast<size_t>(p) * m;
    const T* a1 = a0 + m;
    const T* a2 = a1 + m;
    const T* a3 = a2 + m;
    const T* b0 = b + static_cast<size_t>(p) * n;
    const T* b1 = b0 + n;
    const T* b2 = b1 + n;
    const T* b3 = b2 + n;
    for (int i = 0; i < m; ++i) {
      const T x0 = a0[i], x1 = a1[i], x2 = a2[i], x3 = a3[i];
      T* ci = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        ci[j] += (x0 * b0[j] + x1 * b1[j]) + (x2 * b2[j] + x3 * b3[j]);
      }
    }
  }
  for (; p < k; ++p) {
    const T* ap = a + static_cast<size_t>(p) * m;
    const T* bp = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const T api = ap[i];
      T* ci = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

// Reverse-mode tape over dense tensors. Nodes are appended in evaluation
// order, which is also a valid topological order, so backward() is a single
// descending sweep. Gradients accumulate across backward calls; each sweep
// propagates through scratch buffers so earlier accumulations are not
// double-counted.
template <class T>
class Graph {
 public:
  using NodeId = int;

  struct Sweep {
    std::vector<Tensor<T>> g;
    std::vector<char> touched;
  };
  using BackFn = std::function<void(Graph&, Sweep&, NodeId)>;

  // Leaf that gradients flow into (a parameter snapshot).
  NodeId leaf(Tensor<T> value) {
    return push(std::move(value), nullptr, true);
  }

  // Leaf excluded from differentiation.
  NodeId constant(Tensor<T> value) {
    return push(std::move(value), nullptr, false);
  }

  const Tensor<T>& value(NodeId id) const { return nodes_[check(id)].value; }

  bool requires_grad(NodeId id) const { return nodes_[check(id)].needs_grad; }

  // Accumulated gradient; zeros if no backward pass touched this node.
  const Tensor<T>& grad(NodeId id) {
    Node& n = nodes_[check(id)];
    if (!n.has_grad) {
      n.grad = Tensor<T>::zeros(n.value.shape);
      n.has_grad = true;
    }
    return n.grad;
  }

  void zero_grads() {
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor<T>();
    }
  }

  size_t size() const { return nodes_.size(); }

  // ---- operations ----

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor<T>& A = value(a);
    const Tensor<T>& B = value(b);
    require_rank2(A, "matmul lhs");
    require_rank2(B, "matmul rhs");
    if (A.shape[1] != B.shape[0]) {
      throw DimensionError("matmul: inner extents disagree, lhs " +
                           Tensor<T>::shape_str(A.shape) + " rhs " +
                           Tensor<T>::shape_str(B.shape));
    }
    const int m = A.shape[0], k = A.shape[1], n = B.shape[1];
    Tensor<T> out({m, n});
    mm_acc_nn(A.data.data(), B.data.data(), out.data.data(), m, k, n);
    return push(std::move(out),
                [a, b, m, k, n](Graph& g, Sweep& sw, NodeId self) {
                  const Tensor<T>& dc = sw.g[self];
                  if (g.nodes_[a].needs_grad) {
                    mm_acc_nt(dc.data.data(), g.value(b).data.data(),
                              g.acc(sw, a).data.data(), m, n, k);
                  }
                  if (g.nodes_[b].needs_grad) {
                    mm_acc_tn(g.value(a).data.data(), dc.data.data(),
                              g.acc(sw, b).data.data(), k, m, n);
                  }
                },
                nodes_[a].needs_grad || nodes_[b].needs_grad);
  }

  // A(m×k) · B(n×k)ᵀ -> m×n. Covers attention scores and the tied output
  // projection without a transpose node.
  NodeId matmul_nt(NodeId a, NodeId b) {
    const Tensor<T>& A = value(a);
    const Tensor<T>& B = value(b);
    require_rank2(A, "matmul_nt lhs");
    require_rank2(B, "matmul_nt rhs");
    if (A.shape[1] != B.shape[1]) {
      throw DimensionError("matmul_nt: inner extents disagree, lhs " +
                           Tensor<T>::shape_str(A.shape) + " rhs " +
                           Tensor<T>::shape_str(B.shape));
    }
    const int m = A.shape[0], k = A.shape[1], n = B.shape[0];
    Tensor<T> out({m, n});
    mm_acc_nt(A.data.data(), B.data.data(), out.data.data(), m, k, n);
    return push(std::move(out),
                [a, b, m, k, n](Graph& g, Sweep& sw, NodeId self) {
                  const Tensor<T>& dc = sw.g[self];
                  if (g.nodes_[a].needs_grad) {
                    // dA = dC · B
                    mm_acc_nn(dc.data.data(), g.value(b).data.data(),
                              g.acc(sw, a).data.data(), m, n, k);
                  }
                  if (g.nodes_[b].needs_grad) {
                    // dB = dCᵀ · A
                    mm_acc_tn(dc.data.data(), g.value(a).data.data(),
                              g.acc(sw, b).data.data(), n, m, k);
                  }
                },
                nodes_[a].needs_grad || nodes_[b].needs_grad);
  }

  NodeId add(NodeId a, NodeId b) { return binary(a, b, BinOp::Add); }
  NodeId sub(NodeId a, NodeId b) { return binary(a, b, BinOp::Sub); }
  NodeId mul(NodeId a, NodeId b) { return binary(a, b, BinOp::Mul); }

  NodeId scale(NodeId a, T s) {
    const Tensor<T>& A = value(a);
    Tensor<T> out(A.shape);
    for (int64_t i = 0; i < A.numel(); ++i) out.data[i] = A.data[i] * s;
    return push(std::move(out),
                [a, s](Graph& g, Sweep& sw, NodeId self) {
                  if (!g.nodes_[a].needs_grad) return;
                  const Tensor<T>& dc = sw.g[self];
                  Tensor<T>& da = g.acc(sw, a);
                  for (int64_t i = 0; i < dc.numel(); ++i)
                    da.data[i] += dc.data[i] * s;
                },
                nodes_[a].needs_grad);
  }

  NodeId relu(NodeId a) {
    const Tensor<T>& A = value(a);
    Tensor<T> out(A.shape);
    for (int64_t i = 0; i < A.numel(); ++i)
      out.data[i] = A.data[i] > T(0) ? A.data[i] : T(0);
    return push(std::move(out),
                [a](Graph& g, Sweep& sw, NodeId self) {
                  if (!g.nodes_[a].needs_grad) return;
                  const Tensor<T>& dc = sw.g[self];
                  const Tensor<T>& x = g.value(a);
                  Tensor<T>& da = g.acc(sw, a);
                  const T flip = testhooks::negate_relu_backward ? T(-1) : T(1);
                  // subgradient at 0 is 0
                  for (int64_t i = 0; i < dc.numel(); ++i)
                    if (x.data[i] > T(0)) da.data[i] += flip * dc.data[i];
                },
                nodes_[a].needs_grad);
  }

  // x(m×n) + b(n) broadcast over rows.
  NodeId add_bias(NodeId x, NodeId b) {
    const Tensor<T>& X = value(x);
    const Tensor<T>& B = value(b);
    require_rank2(X, "add_bias input");
    if (B.rank() != 1 || B.shape[0] != X.shape[1]) {
      throw DimensionError("add_bias: bias " + Tensor<T>::shape_str(B.shape) +
                           " does not match input " +
                           Tensor<T>::shape_str(X.shape));
    }
    const int m = X.shape[0], n = X.shape[1];
    Tensor<T> out({m, n});
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out.at(i, j) = X.at(i, j) + B.data[j];
    return push(std::move(out),
                [x, b, m, n](Graph& g, Sweep& sw, NodeId self) {
                  const Tensor<T>& dc = sw.g[self];
                  if (g.nodes_[x].needs_grad) {
                    Tensor<T>& dx = g.acc(sw, x);
                    for (int64_t i = 0; i < dc.numel(); ++i)
                      dx.data[i] += dc.data[i];
                  }
                  if (g.nodes_[b].needs_grad) {
                    Tensor<T>& db = g.acc(sw, b);
                    for (int i = 0; i < m; ++i)
                      for (int j = 0; j < n; ++j) db.data[j] += dc.at(i, j);
                  }
                },
                nodes_[x].needs_grad || nodes_[b].needs_grad);
  }

  NodeId softmax_rows(NodeId x) {
    const Tensor<T>& X = value(x);
    require_rank2(X, "softmax input");
    if (!X.all_finite()) {
      throw NumericError("softmax_rows: non-finite input");
    }
    const int m = X.shape[0], n = X.shape[1];
    Tensor<T> out({m, n});
    for (int i = 0; i < m; ++i) {
      T mx = X.at(i, 0);
      for (int j = 1; j < n; ++j) mx = X.at(i, j) > mx ? X.at(i, j) : mx;
      T sum = T(0);
      for (int j = 0; j < n; ++j) {
        const T e = std::exp(X.at(i, j) - mx);
        out.at(i, j) = e;
        sum += e;
      }
      const T inv = T(1) / sum;
      for (int j = 0; j < n; ++j) out.at(i, j) *= inv;
    }
    return push(std::move(out),
                [x, m, n](Graph& g, Sweep& sw, NodeId self) {
                  if (!g.nodes_[x].needs_grad) return;
                  const Tensor<T>& dy = sw.g[self];
                  const Tensor<T>& y = g.nodes_[self].value;
                  Tensor<T>& dx = g.acc(sw, x);
                  // dx = y ⊙ (dy − Σ_j dy⊙y)
                  for (int i = 0; i < m; ++i) {
                    T dot = T(0);
                    for (int j = 0; j < n; ++j) dot += dy.at(i, j) * y.at(i, j);
                    for (int j = 0; j < n; ++j)
                      dx.at(i, j) += y.at(i, j) * (dy.at(i, j) - dot);
                  }
                },
                nodes_[x].needs_grad);
  }

  // Per-row normalization over the last dimension, then affine.
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, T eps) {
    const Tensor<T>& X = value(x);
    const Tensor<T>& G = value(gain);
    const Tensor<T>& B = value(bias);
    require_rank2(X, "layer_norm input");
    const int m = X.shape[0], n = X.shape[1];
    if (G.rank() != 1 || G.shape[0] != n || B.rank() != 1 || B.shape[0] != n) {
      throw DimensionError(
          "layer_norm: gain " + Tensor<T>::shape_str(G.shape) + " / bias " +
          Tensor<T>::shape_str(B.shape) + " do not match input " +
          Tensor<T>::shape_str(X.shape));
    }
    Tensor<T> out({m, n});
    std::vector<T> mean(m), invstd(m);
    for (int i = 0; i < m; ++i) {
      T mu = T(0);
      for (int j = 0; j < n; ++j) mu += X.at(i, j);
      mu /= T(n);
      T var = T(0);
      for (int j = 0; j < n; ++j) {
        const T d = X.at(i, j) - mu;
        var += d * d;
      }
      var /= T(n);
      const T is = T(1) / std::sqrt(var + eps);
      mean[i] = mu;
      invstd[i] = is;
      for (int j = 0; j < n; ++j)
        out.at(i, j) = (X.at(i, j) - mu) * is * G.data[j] + B.data[j];
    }
    return push(
        std::move(out),
        [x, gain, bias, m, n, mean = std::move(mean),
         invstd = std::move(invstd)](Graph& g, Sweep& sw, NodeId self) {
          const Tensor<T>& dy = sw.g[self];
          const Tensor<T>& X2 = g.value(x);
          const Tensor<T>& G2 = g.value(gain);
          if (g.nodes_[x].needs_grad) {
            Tensor<T>& dx = g.acc(sw, x);
            for (int i = 0; i < m; ++i) {
              // dx = invstd (dxh − mean(dxh) − xh mean(dxh⊙xh)),  dxh = dy⊙g
              T s1 = T(0), s2 = T(0);
              for (int j = 0; j < n; ++j) {
                const T xh = (X2.at(i, j) - mean[i]) * invstd[i];
                const T dxh = dy.at(i, j) * G2.data[j];
                s1 += dxh;
                s2 += dxh * xh;
              }
              s1 /= T(n);
              s2 /= T(n);
              for (int j = 0; j < n; ++j) {
                const T xh = (X2.at(i, j) - mean[i]) * invstd[i];
                const T dxh = dy.at(i, j) * G2.data[j];
                dx.at(i, j) += invstd[i] * (dxh - s1 - xh * s2);
              }
            }
          }
          if (g.nodes_[gain].needs_grad) {
            Tensor<T>& dg = g.acc(sw, gain);
            for (int i = 0; i < m; ++i)
              for (int j = 0; j < n; ++j)
                dg.data[j] +=
                    dy.at(i, j) * (X2.at(i, j) - mean[i]) * invstd[i];
          }
          if (g.nodes_[bias].needs_grad) {
            Tensor<T>& db = g.acc(sw, bias);
            for (int i = 0; i < m; ++i)
              for (int j = 0; j < n; ++j) db.data[j] += dy.at(i, j);
          }
        },
        nodes_[x].needs_grad || nodes_[gain].needs_grad || nodes_[bias].needs_grad);
  }

  // Row lookup: out[i] = table[ids[i]]. Backward scatter-adds, so embedding
  // tables and hidden-state row selection share this op.
  NodeId gather_rows(NodeId table, std::vector<int> ids) {
    const Tensor<T>& Tb = value(table);
    require_rank2(Tb, "gather_rows table");
    if (ids.empty()) throw ContractError("gather_rows: empty id list");
    const int rows = Tb.shape[0], n = Tb.shape[1];
    for (int id : ids) {
      if (id < 0 || id >= rows) {
        throw CapacityError("gather_rows: id " + std::to_string(id) +
                            " out of bounds for table " +
                            Tensor<T>::shape_str(Tb.shape));
      }
    }
    const int m = static_cast<int>(ids.size());
    Tensor<T> out({m, n});
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out.at(i, j) = Tb.at(ids[i], j);
    return push(std::move(out),
                [table, ids = std::move(ids), n](Graph& g, Sweep& sw,
                                                 NodeId self) {
                  if (!g.nodes_[table].needs_grad) return;
                  const Tensor<T>& dc = sw.g[self];
                  Tensor<T>& dt = g.acc(sw, table);
                  for (size_t i = 0; i < ids.size(); ++i)
                    for (int j = 0; j < n; ++j)
                      dt.at(ids[i], j) += dc.at(static_cast<int>(i), j);
                },
                nodes_[table].needs_grad);
  }

  NodeId concat_rows(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no parts");
    const int n = value(parts[0]).shape[1];
    int m = 0;
    bool req = false;
    for (NodeId p : parts) {
      const Tensor<T>& P = value(p);
      require_rank2(P, "concat_rows part");
      if (P.shape[1] != n) {
        throw DimensionError("concat_rows: column mismatch, " +
                             Tensor<T>::shape_str(P.shape) + " vs " +
                             std::to_string(n) + " columns");
      }
      m += P.shape[0];
      req = req || nodes_[p].needs_grad;
    }
    Tensor<T> out({m, n});
    int r = 0;
    for (NodeId p : parts) {
      const Tensor<T>& P = value(p);
      for (int i = 0; i < P.shape[0]; ++i, ++r)
        for (int j = 0; j < n; ++j) out.at(r, j) = P.at(i, j);
    }
    return push(std::move(out),
                [parts, n](Graph& g, Sweep& sw, NodeId self) {
                  const Tensor<T>& dc = sw.g[self];
                  int r = 0;
                  for (NodeId p : parts) {
                    const int rows = g.value(p).shape[0];
                    if (g.nodes_[p].needs_grad) {
                      Tensor<T>& dp = g.acc(sw, p);
                      for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < n; ++j)
                          dp.at(i, j) += dc.at(r + i, j);
                    }
                    r += rows;
                  }
                },
                req);
  }

  NodeId slice_cols(NodeId x, int c0, int c1) {
    const Tensor<T>& X = value(x);
    require_rank2(X, "slice_cols input");
    if (c0 < 0 || c1 <= c0 || c1 > X.shape[1]) {
      throw DimensionError("slice_cols: range [" + std::to_string(c0) + "," +
                           std::to_string(c1) + ") invalid for " +
                           Tensor<T>::shape_str(X.shape));
    }
    const int m = X.shape[0], n = c1 - c0;
    Tensor<T> out({m, n});
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out.at(i, j) = X.at(i, c0 + j);
    return push(std::move(out),
                [x, c0, m, n](Graph& g, Sweep& sw, NodeId self) {
                  if (!g.nodes_[x].needs_grad) return;
                  const Tensor<T>& dc = sw.g[self];
                  Tensor<T>& dx = g.acc(sw, x);
                  for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) dx.at(i, c0 + j) += dc.at(i, j);
                },
                nodes_[x].needs_grad);
  }

  NodeId concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no parts");
    const int m = value(parts[0]).shape[0];
    int n = 0;
    bool req = false;
    for (NodeId p : parts) {
      const Tensor<T>& P = value(p);
      require_rank2(P, "concat_cols part");
      if (P.shape[0] != m) {
        throw DimensionError("concat_cols: row mismatch, " +
                             Tensor<T>::shape_str(P.shape) + " vs " +
                             std::to_string(m) + " rows");
      }
      n += P.shape[1];
      req = req || nodes_[p].needs_grad;
    }
    Tensor<T> out({m, n});
    int c = 0;
    for (NodeId p : parts) {
      const Tensor<T>& P = value(p);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < P.shape[1]; ++j) out.at(i, c + j) = P.at(i, j);
      c += P.shape[1];
    }
    return push(std::move(out),
                [parts, m](Graph& g, Sweep& sw, NodeId self) {
                  const Tensor<T>& dc = sw.g[self];
                  int c = 0;
                  for (NodeId p : parts) {
                    const int cols = g.value(p).shape[1];
                    if (g.nodes_[p].needs_grad) {
                      Tensor<T>& dp = g.acc(sw, p);
                      for (int i = 0; i < m; ++i)
                        for (int j = 0; j < cols; ++j)
                          dp.at(i, j) += dc.at(i, c + j);
                    }
                    c += cols;
                  }
                },
                req);
  }

  // Mean negative log-softmax over positions whose target != ignore_id.
  NodeId cross_entropy(NodeId logits, const std::vector<int>& targets,
                       int ignore_id) {
    const Tensor<T>& X = value(logits);
    require_rank2(X, "cross_entropy logits");
    const int m = X.shape[0], v = X.shape[1];
    if (static_cast<int>(targets.size()) != m) {
      throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                           " targets for " + std::to_string(m) + " rows");
    }
    int count = 0;
    for (int t : targets) {
      if (t == ignore_id) continue;
      if (t < 0 || t >= v) {
        throw ContractError("cross_entropy: target " + std::to_string(t) +
                            " outside [0," + std::to_string(v) + ")");
      }
      ++count;
    }
    if (count == 0) {
      throw ContractError(
          "cross_entropy: every position ignored, mean undefined");
    }
    // Softmax rows are kept for the backward rule.
    Tensor<T> probs({m, v});
    T loss = T(0);
    for (int i = 0; i < m; ++i) {
      T mx = X.at(i, 0);
      for (int j = 1; j < v; ++j) mx = X.at(i, j) > mx ? X.at(i, j) : mx;
      T sum = T(0);
      for (int j = 0; j < v; ++j) {
        const T e = std::exp(X.at(i, j) - mx);
        probs.at(i, j) = e;
        sum += e;
      }
      const T inv = T(1) / sum;
      for (int j = 0; j < v; ++j) probs.at(i, j) *= inv;
      if (targets[i] != ignore_id) {
        loss -= (X.at(i, targets[i]) - mx) - std::log(sum);
      }
    }
    loss /= T(count);
    return push(Tensor<T>::scalar(loss),
                [logits, targets, ignore_id, count, m, v,
                 probs = std::move(probs)](Graph& g, Sweep& sw, NodeId self) {
                  if (!g.nodes_[logits].needs_grad) return;
                  const T up = sw.g[self].data[0];
                  Tensor<T>& dx = g.acc(sw, logits);
                  const T scale = up / T(count);
                  for (int i = 0; i < m; ++i) {
                    if (targets[i] == ignore_id) continue;
                    for (int j = 0; j < v; ++j)
                      dx.at(i, j) += scale * probs.at(i, j);
                    dx.at(i, targets[i]) -= scale;
                  }
                },
                nodes_[logits].needs_grad);
  }

  // Mean absolute difference. sign(0) = 0 in the backward rule.
  NodeId l1_loss(NodeId a, NodeId b) {
    const Tensor<T>& A = value(a);
    const Tensor<T>& B = value(b);
    if (!A.same_shape(B)) {
      throw DimensionError("l1_loss: shapes " + Tensor<T>::shape_str(A.shape) +
                           " vs " + Tensor<T>::shape_str(B.shape));
    }
    T loss = T(0);
    for (int64_t i = 0; i < A.numel(); ++i)
      loss += std::abs(A.data[i] - B.data[i]);
    loss /= T(A.numel());
    return push(Tensor<T>::scalar(loss),
                [a, b](Graph& g, Sweep& sw, NodeId self) {
                  const T up = sw.g[self].data[0];
                  const Tensor<T>& A2 = g.value(a);
                  const Tensor<T>& B2 = g.value(b);
                  const T scale = up / T(A2.numel());
                  const bool need_a = g.nodes_[a].needs_grad;
                  const bool need_b = g.nodes_[b].needs_grad;
                  for (int64_t i = 0; i < A2.numel(); ++i) {
                    const T d = A2.data[i] - B2.data[i];
                    const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
                    if (need_a) g.acc(sw, a).data[i] += scale * s;
                    if (need_b) g.acc(sw, b).data[i] -= scale * s;
                  }
                },
                nodes_[a].needs_grad || nodes_[b].needs_grad);
  }

  // Binary cross-entropy on a single logit, numerically stable form.
  NodeId bce_with_logits(NodeId logit, T label) {
    const Tensor<T>& Z = value(logit);
    if (Z.numel() != 1) {
      throw ContractError("bce_with_logits: logit must be scalar, got " +
                          Tensor<T>::shape_str(Z.shape));
    }
    const T z = Z.data[0];
    const T loss = std::max(z, T(0)) - z * label +
                   std::log1p(std::exp(-std::abs(z)));
    return push(Tensor<T>::scalar(loss),
                [logit, label](Graph& g, Sweep& sw, NodeId self) {
                  if (!g.nodes_[logit].needs_grad) return;
                  const T up = sw.g[self].data[0];
                  const T z2 = g.value(logit).data[0];
                  const T sig = T(1) / (T(1) + std::exp(-z2));
                  g.acc(sw, logit).data[0] += up * (sig - label);
                },
                nodes_[logit].needs_grad);
  }

  // ---- reverse sweep ----

  void backward(NodeId root) {
    const Node& r = nodes_[check(root)];
    if (r.value.numel() != 1) {
      throw ContractError("backward: root must be scalar, got " +
                          Tensor<T>::shape_str(r.value.shape));
    }
    if (!r.needs_grad) return;
    Sweep sw;
    sw.g.resize(nodes_.size());
    sw.touched.assign(nodes_.size(), 0);
    acc(sw, root).data[0] = T(1);
    for (NodeId id = root; id >= 0; --id) {
      if (!sw.touched[id]) continue;
      Node& n = nodes_[id];
      if (n.back) n.back(*this, sw, id);
    }
    // Fold the sweep into the persistent accumulators.
    for (size_t i = 0; i < nodes_.size(); ++i) {
      if (!sw.touched[i]) continue;
      Node& n = nodes_[i];
      if (!n.has_grad) {
        n.grad = std::move(sw.g[i]);
        n.has_grad = true;
      } else {
        for (int64_t j = 0; j < n.grad.numel(); ++j)
          n.grad.data[j] += sw.g[i].data[j];
      }
    }
  }

 private:
  enum class BinOp { Add, Sub, Mul };

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackFn back;
    bool needs_grad = false;
    bool has_grad = false;
  };

  std::vector<Node> nodes_;

  NodeId check(NodeId id) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) {
      throw ContractError("invalid node id " + std::to_string(id));
    }
    return id;
  }

  static void require_rank2(const Tensor<T>& t, const char* what) {
    if (t.rank() != 2) {
      throw DimensionError(std::string(what) + " must be rank 2, got " +
                           Tensor<T>::shape_str(t.shape));
    }
  }

  Tensor<T>& acc(Sweep& sw, NodeId id) {
    if (!sw.touched[id]) {
      sw.g[id] = Tensor<T>::zeros(nodes_[id].value.shape);
      sw.touched[id] = 1;
    }
    return sw.g[id];
  }

  NodeId push(Tensor<T> value, BackFn back, bool needs_grad) {
    Node n;
    n.value = std::move(value);
    n.back = std::move(back);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeId binary(NodeId a, NodeId b, BinOp op) {
    const Tensor<T>& A = value(a);
    const Tensor<T>& B = value(b);
    if (!A.same_shape(B)) {
      throw DimensionError("elementwise: shapes " +
                           Tensor<T>::shape_str(A.shape) + " vs " +
                           Tensor<T>::shape_str(B.shape));
    }
    Tensor<T> out(A.shape);
    switch (op) {
      case BinOp::Add:
        for (int64_t i = 0; i < A.numel(); ++i)
          out.data[i] = A.data[i] + B.data[i];
        break;
      case BinOp::Sub:
        for (int64_t i = 0; i < A.numel(); ++i)
          out.data[i] = A.data[i] - B.data[i];
        break;
      case BinOp::Mul:
        for (int64_t i = 0; i < A.numel(); ++i)
          out.data[i] = A.data[i] * B.data[i];
        break;
    }
    return push(std::move(out),
                [a, b, op](Graph& g, Sweep& sw, NodeId self) {
                  const Tensor<T>& dc = sw.g[self];
                  const bool need_a = g.nodes_[a].needs_grad;
                  const bool need_b = g.nodes_[b].needs_grad;
                  switch (op) {
                    case BinOp::Add:
                      if (need_a) {
                        Tensor<T>& da = g.acc(sw, a);
                        for (int64_t i = 0; i < dc.numel(); ++i)
                          da.data[i] += dc.data[i];
                      }
                      if (need_b) {
                        Tensor<T>& db = g.acc(sw, b);
                        for (int64_t i = 0; i < dc.numel(); ++i)
                          db.data[i] += dc.data[i];
                      }
                      break;
                    case BinOp::Sub:
                      if (need_a) {
                        Tensor<T>& da = g.acc(sw, a);
                        for (int64_t i = 0; i < dc.numel(); ++i)
                          da.data[i] += dc.data[i];
                      }
                      if (need_b) {
                        Tensor<T>& db = g.acc(sw, b);
                        for (int64_t i = 0; i < dc.numel(); ++i)
                          db.data[i] -= dc.data[i];
                      }
                      break;
                    case BinOp::Mul:
                      if (need_a) {
                        Tensor<T>& da = g.acc(sw, a);
                        const Tensor<T>& B2 = g.value(b);
                        for (int64_t i = 0; i < dc.numel(); ++i)
                          da.data[i] += dc.data[i] * B2.data[i];
                      }
                      if (need_b) {
                        Tensor<T>& db = g.acc(sw, b);
                        const Tensor<T>& A2 = g.value(a);
                        for (int64_t i = 0; i < dc.numel(); ++i)
                          db.data[i] += dc.data[i] * A2.data[i];
                      }
                      break;
                  }
                },
                nodes_[a].needs_grad || nodes_[b].needs_grad);
  }
};

}  // namespace mmfuse

#endif  // MMFUSE_GRAPH_HPP_
