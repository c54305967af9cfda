#pragma once

// Differentiable operations on Var. Each op computes its value eagerly and,
// when an input is tracked by the active tape, records its local gradient rule.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "grace/tensor.hpp"

namespace grace {

/// Rows [offset, offset + length) of a packed matrix belonging to one sequence.
struct Segment {
  Index offset = 0;
  Index length = 0;
};

/// Half-open row range used by span pooling.
struct RowSpan {
  Index begin = 0;
  Index end = 0;
};

inline constexpr double kProbabilityFloor = 1e-12;

namespace detail {

inline void require_same_shape(Index ar, Index ac, Index br, Index bc, const char* op) {
  if (ar != br || ac != bc) {
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(ar) + "x" +
                     std::to_string(ac) + " vs " + std::to_string(br) + "x" + std::to_string(bc) + ")");
  }
}

template <typename Scalar>
void require_finite(const Mat<Scalar>& m, const char* op) {
  if (!m.allFinite()) throw NumericError(std::string(op) + ": non-finite input");
}

template <typename Scalar>
Mat<Scalar> softmax_rows(const Mat<Scalar>& x) {
  Mat<Scalar> y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar mx = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - mx).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

}  // namespace detail

/// Plain (non-recording) row-wise softmax.
template <typename Scalar>
Mat<Scalar> softmax_values(const Mat<Scalar>& x) {
  detail::require_finite(x, "softmax");
  return detail::softmax_rows(x);
}

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.cols() != b.rows()) detail::require_same_shape(a.cols(), 0, b.rows(), 0, "matmul");
  detail::Recorder<Scalar> rec;
  const bool ga = rec.track(a), gb = rec.track(b);
  auto an = a.node_ptr(), bn = b.node_ptr();
  return rec.finish(a.value() * b.value(), [an, bn, ga, gb](const Mat<Scalar>& g) {
    if (ga) an->accumulate(g * bn->value.transpose());
    if (gb) bn->accumulate(an->value.transpose() * g);
  });
}

/// a * b^T
template <typename Scalar>
Var<Scalar> matmul_nt(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.cols() != b.cols()) detail::require_same_shape(a.cols(), 0, b.cols(), 0, "matmul_nt");
  detail::Recorder<Scalar> rec;
  const bool ga = rec.track(a), gb = rec.track(b);
  auto an = a.node_ptr(), bn = b.node_ptr();
  return rec.finish(a.value() * b.value().transpose(), [an, bn, ga, gb](const Mat<Scalar>& g) {
    if (ga) an->accumulate(g * bn->value);
    if (gb) bn->accumulate(g.transpose() * an->value);
  });
}

/// x * w + b with b broadcast over rows.
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw ShapeError("linear: incompatible shapes");
  }
  detail::Recorder<Scalar> rec;
  const bool gx = rec.track(x), gw = rec.track(w), gb = rec.track(b);
  auto xn = x.node_ptr(), wn = w.node_ptr(), bn = b.node_ptr();
  Mat<Scalar> y = x.value() * w.value();
  y.rowwise() += b.value().row(0);
  return rec.finish(std::move(y), [xn, wn, bn, gx, gw, gb](const Mat<Scalar>& g) {
    if (gx) xn->accumulate(g * wn->value.transpose());
    if (gw) wn->accumulate(xn->value.transpose() * g);
    if (gb) bn->accumulate(g.colwise().sum());
  });
}

template <typename Scalar>
Var<Scalar> add_bias(const Var<Scalar>& x, const Var<Scalar>& b) {
  if (b.rows() != 1 || b.cols() != x.cols()) throw ShapeError("add_bias: bias must be 1 x cols");
  detail::Recorder<Scalar> rec;
  const bool gx = rec.track(x), gb = rec.track(b);
  auto xn = x.node_ptr(), bn = b.node_ptr();
  Mat<Scalar> y = x.value();
  y.rowwise() += b.value().row(0);
  return rec.finish(std::move(y), [xn, bn, gx, gb](const Mat<Scalar>& g) {
    if (gx) xn->accumulate(g);
    if (gb) bn->accumulate(g.colwise().sum());
  });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "add");
  detail::Recorder<Scalar> rec;
  const bool ga = rec.track(a), gb = rec.track(b);
  auto an = a.node_ptr(), bn = b.node_ptr();
  return rec.finish(a.value() + b.value(), [an, bn, ga, gb](const Mat<Scalar>& g) {
    if (ga) an->accumulate(g);
    if (gb) bn->accumulate(g);
  });
}

template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "sub");
  detail::Recorder<Scalar> rec;
  const bool ga = rec.track(a), gb = rec.track(b);
  auto an = a.node_ptr(), bn = b.node_ptr();
  return rec.finish(a.value() - b.value(), [an, bn, ga, gb](const Mat<Scalar>& g) {
    if (ga) an->accumulate(g);
    if (gb) bn->accumulate(-g);
  });
}

template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, Scalar s) {
  detail::Recorder<Scalar> rec;
  const bool ga = rec.track(a);
  auto an = a.node_ptr();
  return rec.finish(a.value() * s, [an, ga, s](const Mat<Scalar>& g) {
    if (ga) an->accumulate(g * s);
  });
}

template <typename Scalar>
Var<Scalar> cwise_product(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "cwise_product");
  detail::Recorder<Scalar> rec;
  const bool ga = rec.track(a), gb = rec.track(b);
  auto an = a.node_ptr(), bn = b.node_ptr();
  return rec.finish(a.value().cwiseProduct(b.value()), [an, bn, ga, gb](const Mat<Scalar>& g) {
    if (ga) an->accumulate(g.cwiseProduct(bn->value));
    if (gb) bn->accumulate(g.cwiseProduct(an->value));
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  detail::Recorder<Scalar> rec;
  const bool gx = rec.track(x);
  auto xn = x.node_ptr();
  return rec.finish(x.value().cwiseMax(Scalar(0)), [xn, gx](const Mat<Scalar>& g) {
    if (gx) xn->accumulate((xn->value.array() > Scalar(0)).select(g.array(), Scalar(0)).matrix());
  });
}

/// Exact GELU: x * Phi(x).
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& x) {
  detail::Recorder<Scalar> rec;
  const bool gx = rec.track(x);
  auto xn = x.node_ptr();
  const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
  Mat<Scalar> y = x.value().unaryExpr([inv_sqrt2](Scalar v) {
    return Scalar(0.5) * v * (Scalar(1) + std::erf(v * inv_sqrt2));
  });
  return rec.finish(std::move(y), [xn, gx, inv_sqrt2](const Mat<Scalar>& g) {
    if (!gx) return;
    const Scalar inv_sqrt2pi = Scalar(1) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
    Mat<Scalar> d = xn->value.unaryExpr([inv_sqrt2, inv_sqrt2pi](Scalar v) {
      const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(v * inv_sqrt2));
      return cdf + v * inv_sqrt2pi * std::exp(Scalar(-0.5) * v * v);
    });
    xn->accumulate(g.cwiseProduct(d));
  });
}

/// Row-wise layer normalization with learned gain and bias (each 1 x cols).
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Scalar eps = Scalar(1e-5)) {
  const Index n = x.rows(), d = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
    throw ShapeError("layer_norm: gain/bias must be 1 x cols");
  }
  detail::Recorder<Scalar> rec;
  const bool gx = rec.track(x), gg = rec.track(gamma), gbt = rec.track(beta);
  auto xn = x.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr();

  auto xhat = std::make_shared<Mat<Scalar>>(n, d);
  auto inv_std = std::make_shared<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(n);
  for (Index i = 0; i < n; ++i) {
    const auto row = x.value().row(i).array();
    const Scalar mu = row.mean();
    const Scalar var = (row - mu).square().mean();
    (*inv_std)(i) = Scalar(1) / std::sqrt(var + eps);
    xhat->row(i) = ((row - mu) * (*inv_std)(i)).matrix();
  }
  Mat<Scalar> y = xhat->array().rowwise() * gamma.value().row(0).array();
  y.rowwise() += beta.value().row(0);

  return rec.finish(std::move(y), [xn, gn, bn, gx, gg, gbt, xhat, inv_std, d](const Mat<Scalar>& g) {
    if (gg) gn->accumulate(g.cwiseProduct(*xhat).colwise().sum());
    if (gbt) bn->accumulate(g.colwise().sum());
    if (!gx) return;
    Mat<Scalar> dx(g.rows(), d);
    for (Index i = 0; i < g.rows(); ++i) {
      const auto dxhat = (g.row(i).array() * gn->value.row(0).array()).eval();
      const Scalar m1 = dxhat.mean();
      const Scalar m2 = (dxhat * xhat->row(i).array()).mean();
      dx.row(i) = ((dxhat - m1 - xhat->row(i).array() * m2) * (*inv_std)(i)).matrix();
    }
    xn->accumulate(dx);
  });
}

/// Softmax along `axis` (1: each row sums to one, 0: each column sums to one).
template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& x, int axis = 1) {
  if (axis != 0 && axis != 1) throw ShapeError("softmax: axis must be 0 or 1");
  detail::require_finite(x.value(), "softmax");
  detail::Recorder<Scalar> rec;
  const bool gx = rec.track(x);
  auto xn = x.node_ptr();
  Mat<Scalar> y = axis == 1 ? detail::softmax_rows<Scalar>(x.value())
                            : Mat<Scalar>(detail::softmax_rows<Scalar>(x.value().transpose()).transpose());
  auto yv = std::make_shared<Mat<Scalar>>(y);
  return rec.finish(std::move(y), [xn, gx, yv, axis](const Mat<Scalar>& g) {
    if (!gx) return;
    const Mat<Scalar> gy = g.cwiseProduct(*yv);
    if (axis == 1) {
      Mat<Scalar> dx = gy;
      dx -= yv->cwiseProduct(gy.rowwise().sum().replicate(1, yv->cols()));
      xn->accumulate(dx);
    } else {
      Mat<Scalar> dx = gy;
      dx -= yv->cwiseProduct(gy.colwise().sum().replicate(yv->rows(), 1));
      xn->accumulate(dx);
    }
  });
}

/// Rows of `table` selected by `ids` (embedding lookup, row subset).
template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& table, std::span<const int> ids) {
  for (int id : ids) {
    if (id < 0 || id >= table.rows()) throw ShapeError("gather_rows: index out of range");
  }
  detail::Recorder<Scalar> rec;
  const bool gt = rec.track(table);
  auto tn = table.node_ptr();
  Mat<Scalar> y(static_cast<Index>(ids.size()), table.cols());
  for (Index i = 0; i < y.rows(); ++i) y.row(i) = table.value().row(ids[i]);
  std::vector<int> idv(ids.begin(), ids.end());
  return rec.finish(std::move(y), [tn, gt, idv = std::move(idv)](const Mat<Scalar>& g) {
    if (!gt) return;
    Mat<Scalar>& acc = tn->grad_buffer();
    for (std::size_t i = 0; i < idv.size(); ++i) acc.row(idv[i]) += g.row(static_cast<Index>(i));
  });
}

template <typename Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) throw ShapeError("slice_cols: out of range");
  detail::Recorder<Scalar> rec;
  const bool gx = rec.track(x);
  auto xn = x.node_ptr();
  return rec.finish(x.value().middleCols(start, count), [xn, gx, start, count](const Mat<Scalar>& g) {
    if (gx) xn->grad_buffer().middleCols(start, count) += g;
  });
}

template <typename Scalar>
Var<Scalar> slice_rows(const Var<Scalar>& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) throw ShapeError("slice_rows: out of range");
  detail::Recorder<Scalar> rec;
  const bool gx = rec.track(x);
  auto xn = x.node_ptr();
  return rec.finish(x.value().middleRows(start, count), [xn, gx, start, count](const Mat<Scalar>& g) {
    if (gx) xn->grad_buffer().middleRows(start, count) += g;
  });
}

template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index n = parts.front().rows();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != n) throw ShapeError("concat_cols: row mismatch");
    total += p.cols();
  }
  detail::Recorder<Scalar> rec;
  std::vector<std::shared_ptr<Node<Scalar>>> nodes;
  std::vector<bool> tracked;
  Mat<Scalar> y(n, total);
  Index off = 0;
  for (const auto& p : parts) {
    y.middleCols(off, p.cols()) = p.value();
    off += p.cols();
    nodes.push_back(p.node_ptr());
    tracked.push_back(rec.track(p));
  }
  return rec.finish(std::move(y), [nodes, tracked](const Mat<Scalar>& g) {
    Index o = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const Index c = nodes[k]->value.cols();
      if (tracked[k]) nodes[k]->accumulate(g.middleCols(o, c));
      o += c;
    }
  });
}

/// Row i of the result is the element-wise max over rows spans[i].begin..end-1.
/// Gradient flows to the first maximizing row per column.
template <typename Scalar>
Var<Scalar> span_max_pool(const Var<Scalar>& x, std::span<const RowSpan> spans) {
  if (static_cast<Index>(spans.size()) != x.rows()) throw ShapeError("span_max_pool: one span per row");
  const Index n = x.rows(), d = x.cols();
  for (const auto& s : spans) {
    if (s.begin < 0 || s.end > n || s.begin >= s.end) throw ShapeError("span_max_pool: empty or invalid span");
  }
  detail::Recorder<Scalar> rec;
  const bool gx = rec.track(x);
  auto xn = x.node_ptr();
  Mat<Scalar> y(n, d);
  auto argmax = std::make_shared<Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(n, d);
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < d; ++c) {
      Index best = spans[i].begin;
      for (Index r = spans[i].begin + 1; r < spans[i].end; ++r) {
        if (x.value()(r, c) > x.value()(best, c)) best = r;
      }
      (*argmax)(i, c) = best;
      y(i, c) = x.value()(best, c);
    }
  }
  return rec.finish(std::move(y), [xn, gx, argmax](const Mat<Scalar>& g) {
    if (!gx) return;
    Mat<Scalar>& acc = xn->grad_buffer();
    for (Index i = 0; i < g.rows(); ++i) {
      for (Index c = 0; c < g.cols(); ++c) acc((*argmax)(i, c), c) += g(i, c);
    }
  });
}

/// Inverted dropout; identity when rate is zero.
template <typename Scalar, typename Rng>
Var<Scalar> dropout(const Var<Scalar>& x, Scalar rate, Rng& rng) {
  if (rate <= Scalar(0)) return x;
  if (rate >= Scalar(1)) throw NumericError("dropout: rate must be < 1");
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  const Scalar scale = Scalar(1) / (Scalar(1) - rate);
  auto mask = std::make_shared<Mat<Scalar>>(x.rows(), x.cols());
  for (Index i = 0; i < mask->size(); ++i) mask->data()[i] = keep(rng) ? scale : Scalar(0);
  detail::Recorder<Scalar> rec;
  const bool gx = rec.track(x);
  auto xn = x.node_ptr();
  return rec.finish(x.value().cwiseProduct(*mask), [xn, gx, mask](const Mat<Scalar>& g) {
    if (gx) xn->accumulate(g.cwiseProduct(*mask));
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  detail::Recorder<Scalar> rec;
  const bool gx = rec.track(x);
  auto xn = x.node_ptr();
  return rec.finish(Mat<Scalar>::Constant(1, 1, x.value().sum()), [xn, gx](const Mat<Scalar>& g) {
    if (gx) xn->accumulate(Mat<Scalar>::Constant(xn->value.rows(), xn->value.cols(), g(0, 0)));
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x) {
  return sum(x) * (Scalar(1) / static_cast<Scalar>(x.size()));
}

/// -(1/denominator) * sum_i weights[i] * log(max(probs[i, targets[i]], floor)).
/// Rows with zero weight are skipped; weights are constants.
template <typename Scalar>
Var<Scalar> weighted_nll(const Var<Scalar>& probs, std::span<const int> targets,
                         std::span<const Scalar> weights, Scalar denominator) {
  const Index n = probs.rows();
  if (static_cast<Index>(targets.size()) != n || static_cast<Index>(weights.size()) != n) {
    throw ShapeError("weighted_nll: targets/weights must have one entry per row");
  }
  if (!(denominator > Scalar(0))) throw NumericError("weighted_nll: denominator must be positive");
  const Scalar floor = static_cast<Scalar>(kProbabilityFloor);
  Scalar total = 0;
  for (Index i = 0; i < n; ++i) {
    if (weights[i] == Scalar(0)) continue;
    const int t = targets[i];
    if (t < 0 || t >= probs.cols()) throw ShapeError("weighted_nll: target out of range");
    total -= weights[i] * std::log(std::max(probs.value()(i, t), floor));
  }
  detail::Recorder<Scalar> rec;
  const bool gp = rec.track(probs);
  auto pn = probs.node_ptr();
  std::vector<int> tv(targets.begin(), targets.end());
  std::vector<Scalar> wv(weights.begin(), weights.end());
  return rec.finish(Mat<Scalar>::Constant(1, 1, total / denominator),
                    [pn, gp, tv = std::move(tv), wv = std::move(wv), denominator, floor](const Mat<Scalar>& g) {
                      if (!gp) return;
                      Mat<Scalar>& acc = pn->grad_buffer();
                      for (std::size_t i = 0; i < tv.size(); ++i) {
                        const Index r = static_cast<Index>(i);
                        const Scalar p = pn->value(r, tv[i]);
                        if (wv[i] == Scalar(0) || p < floor) continue;
                        acc(r, tv[i]) -= g(0, 0) * wv[i] / (denominator * p);
                      }
                    });
}

/// Mean over rows of sum_j p log(p / q), with q floored at 1e-12.
template <typename Scalar>
Var<Scalar> kl_divergence(const Var<Scalar>& p, const Var<Scalar>& q) {
  detail::require_same_shape(p.rows(), p.cols(), q.rows(), q.cols(), "kl_divergence");
  if (p.rows() == 0) throw ShapeError("kl_divergence: no rows");
  const Scalar floor = static_cast<Scalar>(kProbabilityFloor);
  const Scalar inv_rows = Scalar(1) / static_cast<Scalar>(p.rows());
  Scalar total = 0;
  for (Index i = 0; i < p.size(); ++i) {
    const Scalar pv = p.value().data()[i];
    if (pv > Scalar(0)) total += pv * std::log(pv / std::max(q.value().data()[i], floor));
  }
  detail::Recorder<Scalar> rec;
  const bool gp = rec.track(p), gq = rec.track(q);
  auto pn = p.node_ptr(), qn = q.node_ptr();
  return rec.finish(Mat<Scalar>::Constant(1, 1, total * inv_rows),
                    [pn, qn, gp, gq, floor, inv_rows](const Mat<Scalar>& g) {
                      const Scalar s = g(0, 0) * inv_rows;
                      const Index n = pn->value.size();
                      if (gp) {
                        Mat<Scalar>& acc = pn->grad_buffer();
                        for (Index i = 0; i < n; ++i) {
                          const Scalar pv = pn->value.data()[i];
                          if (pv > Scalar(0)) {
                            acc.data()[i] += s * (std::log(pv / std::max(qn->value.data()[i], floor)) + Scalar(1));
                          }
                        }
                      }
                      if (gq) {
                        Mat<Scalar>& acc = qn->grad_buffer();
                        for (Index i = 0; i < n; ++i) {
                          const Scalar qv = qn->value.data()[i];
                          if (qv >= floor) acc.data()[i] -= s * pn->value.data()[i] / qv;
                        }
                      }
                    });
}

/// Scaled dot-product attention over packed sequences.
///
/// q is (sum of query lengths) x h, k and v are (sum of key lengths) x h; query
/// segment s attends only to key segment s. The hidden dimension is split into
/// `heads` contiguous blocks. When `weights_out` is non-null it receives one
/// row-stochastic matrix per (segment, head), segment-major.
template <typename Scalar>
Var<Scalar> attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v, int heads,
                      std::span<const Segment> q_segments, std::span<const Segment> kv_segments,
                      std::vector<Mat<Scalar>>* weights_out = nullptr) {
  const Index h = q.cols();
  if (k.cols() != h || v.cols() != h || k.rows() != v.rows()) throw ShapeError("attention: q/k/v shape mismatch");
  if (heads <= 0 || h % heads != 0) throw ShapeError("attention: hidden size not divisible by heads");
  if (q_segments.size() != kv_segments.size()) throw ShapeError("attention: segment count mismatch");
  const Index dh = h / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  auto weights = std::make_shared<std::vector<Mat<Scalar>>>();
  weights->reserve(q_segments.size() * heads);
  Mat<Scalar> out = Mat<Scalar>::Zero(q.rows(), h);
  for (std::size_t s = 0; s < q_segments.size(); ++s) {
    const Segment qs = q_segments[s], ks = kv_segments[s];
    if (qs.offset + qs.length > q.rows() || ks.offset + ks.length > k.rows()) {
      throw ShapeError("attention: segment out of range");
    }
    for (int hd = 0; hd < heads; ++hd) {
      const auto qb = q.value().block(qs.offset, hd * dh, qs.length, dh);
      const auto kb = k.value().block(ks.offset, hd * dh, ks.length, dh);
      const auto vb = v.value().block(ks.offset, hd * dh, ks.length, dh);
      Mat<Scalar> a = detail::softmax_rows<Scalar>((qb * kb.transpose()) * scale);
      out.block(qs.offset, hd * dh, qs.length, dh).noalias() = a * vb;
      weights->push_back(std::move(a));
    }
  }
  if (weights_out != nullptr) *weights_out = *weights;

  detail::Recorder<Scalar> rec;
  const bool gq = rec.track(q), gk = rec.track(k), gv = rec.track(v);
  auto qn = q.node_ptr(), kn = k.node_ptr(), vn = v.node_ptr();
  std::vector<Segment> qsv(q_segments.begin(), q_segments.end()), ksv(kv_segments.begin(), kv_segments.end());
  return rec.finish(std::move(out), [=, qsv = std::move(qsv), ksv = std::move(ksv)](const Mat<Scalar>& g) {
    Mat<Scalar>* dq = gq ? &qn->grad_buffer() : nullptr;
    Mat<Scalar>* dk = gk ? &kn->grad_buffer() : nullptr;
    Mat<Scalar>* dv = gv ? &vn->grad_buffer() : nullptr;
    for (std::size_t s = 0; s < qsv.size(); ++s) {
      const Segment qs = qsv[s], ks = ksv[s];
      for (int hd = 0; hd < heads; ++hd) {
        const Mat<Scalar>& a = (*weights)[s * heads + hd];
        const auto go = g.block(qs.offset, hd * dh, qs.length, dh);
        const auto vb = vn->value.block(ks.offset, hd * dh, ks.length, dh);
        if (dv) dv->block(ks.offset, hd * dh, ks.length, dh).noalias() += a.transpose() * go;
        if (!dq && !dk) continue;
        Mat<Scalar> da = go * vb.transpose();
        const auto rowdot = (da.cwiseProduct(a)).rowwise().sum().eval();
        Mat<Scalar> ds = a.cwiseProduct(da - rowdot.replicate(1, da.cols())) * scale;
        if (dq) {
          dq->block(qs.offset, hd * dh, qs.length, dh).noalias() +=
              ds * kn->value.block(ks.offset, hd * dh, ks.length, dh);
        }
        if (dk) {
          dk->block(ks.offset, hd * dh, ks.length, dh).noalias() +=
              ds.transpose() * qn->value.block(qs.offset, hd * dh, qs.length, dh);
        }
      }
    }
  });
}

/// Returns p - onehot; the gradient of cross-entropy with respect to the logits
/// feeding a softmax.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> cross_entropy_grad_identity(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& p, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& onehot) {
  if (p.size() != onehot.size()) throw ShapeError("cross_entropy_grad_identity: dimension mismatch");
  return p - onehot;
}

}  // namespace grace
