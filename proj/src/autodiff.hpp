#pragma once

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mat.hpp"

namespace selfe::ad {

/// Reverse-mode tape over dense matrices. Nodes are appended in forward
/// order, so walking the tape backwards is a valid topological order.
/// Detached subgraphs are represented as plain constants: a value that
/// enters through constant() or detach() never propagates gradient.
///
/// With recording disabled the same code path performs a plain forward
/// evaluation (no closures are captured and backward() is unavailable).
template <typename T>
class Tape {
 public:
  using Ref = std::int32_t;

  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Ref constant(Mat<T> v) { return push(std::move(v), false); }

  /// Differentiable leaf (parameter copy). Gradient is readable after backward().
  Ref leaf(Mat<T> v) { return push(std::move(v), recording_); }

  const Mat<T>& value(Ref r) const { return nodes_[check(r)].val; }

  /// Gradient of the scalar output w.r.t. node r; zero matrix if the node
  /// never received any flow.
  Mat<T> grad(Ref r) const {
    const Node& n = nodes_[check(r)];
    if (n.grad.size() == 0) return Mat<T>::Zero(n.val.rows(), n.val.cols());
    return n.grad;
  }

  /// Reverse sweep from a 1x1 scalar node.
  void backward(Ref out) {
    if (!recording_) throw std::logic_error("Tape::backward: tape is not recording");
    Node& last = nodes_[check(out)];
    if (last.val.rows() != 1 || last.val.cols() != 1)
      throw std::invalid_argument("Tape::backward: output must be 1x1");
    ensure_grad(out);
    nodes_[out].grad(0, 0) = T(1);
    for (Ref i = static_cast<Ref>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.needs_grad && n.grad.size() != 0 && n.back) n.back(*this, n.grad);
    }
  }

  // ---- ops -----------------------------------------------------------

  Ref matmul(Ref a, Ref b) {
    Mat<T> v = value(a) * value(b);
    Ref out = push(std::move(v), needs(a) || needs(b));
    if (tracked(out)) {
      nodes_[out].back = [a, b](Tape& t, const Mat<T>& g) {
        if (t.needs(a)) t.accum(a, g * t.value(b).transpose());
        if (t.needs(b)) t.accum(b, t.value(a).transpose() * g);
      };
    }
    return out;
  }

  Ref add(Ref a, Ref b) {
    Mat<T> v = value(a) + value(b);
    Ref out = push(std::move(v), needs(a) || needs(b));
    if (tracked(out)) {
      nodes_[out].back = [a, b](Tape& t, const Mat<T>& g) {
        if (t.needs(a)) t.accum(a, g);
        if (t.needs(b)) t.accum(b, g);
      };
    }
    return out;
  }

  Ref sub(Ref a, Ref b) {
    Mat<T> v = value(a) - value(b);
    Ref out = push(std::move(v), needs(a) || needs(b));
    if (tracked(out)) {
      nodes_[out].back = [a, b](Tape& t, const Mat<T>& g) {
        if (t.needs(a)) t.accum(a, g);
        if (t.needs(b)) t.accum(b, -g);
      };
    }
    return out;
  }

  Ref cmul(Ref a, Ref b) {
    Mat<T> v = value(a).cwiseProduct(value(b));
    Ref out = push(std::move(v), needs(a) || needs(b));
    if (tracked(out)) {
      nodes_[out].back = [a, b](Tape& t, const Mat<T>& g) {
        if (t.needs(a)) t.accum(a, g.cwiseProduct(t.value(b)));
        if (t.needs(b)) t.accum(b, g.cwiseProduct(t.value(a)));
      };
    }
    return out;
  }

  Ref scale(Ref a, T c) {
    Mat<T> v = value(a) * c;
    Ref out = push(std::move(v), needs(a));
    if (tracked(out)) {
      nodes_[out].back = [a, c](Tape& t, const Mat<T>& g) { t.accum(a, g * c); };
    }
    return out;
  }

  /// Broadcast a 1xM bias over every row of an NxM matrix.
  Ref add_rowvec(Ref a, Ref bias) {
    if (value(bias).rows() != 1 || value(bias).cols() != value(a).cols())
      throw std::invalid_argument("add_rowvec: bias must be 1 x cols(a)");
    Mat<T> v = value(a).rowwise() + value(bias).row(0);
    Ref out = push(std::move(v), needs(a) || needs(bias));
    if (tracked(out)) {
      nodes_[out].back = [a, bias](Tape& t, const Mat<T>& g) {
        if (t.needs(a)) t.accum(a, g);
        if (t.needs(bias)) t.accum(bias, g.colwise().sum());
      };
    }
    return out;
  }

  Ref silu(Ref a) {
    const Mat<T>& x = value(a);
    Mat<T> sig = (T(1) / (T(1) + (-x.array()).exp())).matrix();
    Mat<T> v = x.cwiseProduct(sig);
    Ref out = push(std::move(v), needs(a));
    if (tracked(out)) {
      nodes_[out].back = [a, sig](Tape& t, const Mat<T>& g) {
        const Mat<T>& x = t.value(a);
        // d silu / dx = sig * (1 + x * (1 - sig))
        Mat<T> d = (sig.array() * (T(1) + x.array() * (T(1) - sig.array()))).matrix();
        t.accum(a, g.cwiseProduct(d));
      };
    }
    return out;
  }

  Ref concat_cols(const std::vector<Ref>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    Eigen::Index rows = value(parts[0]).rows(), cols = 0;
    bool any = false;
    for (Ref p : parts) {
      cols += value(p).cols();
      any = any || needs(p);
    }
    Mat<T> v(rows, cols);
    Eigen::Index at = 0;
    for (Ref p : parts) {
      v.middleCols(at, value(p).cols()) = value(p);
      at += value(p).cols();
    }
    Ref out = push(std::move(v), any);
    if (tracked(out)) {
      std::vector<Ref> ps = parts;
      nodes_[out].back = [ps](Tape& t, const Mat<T>& g) {
        Eigen::Index at = 0;
        for (Ref p : ps) {
          Eigen::Index w = t.value(p).cols();
          if (t.needs(p)) t.accum(p, g.middleCols(at, w));
          at += w;
        }
      };
    }
    return out;
  }

  /// Embedding lookup: output row i = table row rows[i].
  Ref gather_rows(Ref table, std::vector<int> rows) {
    const Mat<T>& tab = value(table);
    Mat<T> v(static_cast<Eigen::Index>(rows.size()), tab.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = tab.row(rows[i]);
    Ref out = push(std::move(v), needs(table));
    if (tracked(out)) {
      nodes_[out].back = [table, rows = std::move(rows)](Tape& t, const Mat<T>& g) {
        Mat<T> gt = Mat<T>::Zero(t.value(table).rows(), t.value(table).cols());
        for (std::size_t i = 0; i < rows.size(); ++i)
          gt.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
        t.accum(table, std::move(gt));
      };
    }
    return out;
  }

  /// Row i scaled by the constant coeffs[i].
  Ref scale_rows(Ref a, VecXd coeffs) {
    if (coeffs.size() != value(a).rows())
      throw std::invalid_argument("scale_rows: coefficient count mismatch");
    Vec<T> c = coeffs.template cast<T>();
    Mat<T> v = c.asDiagonal() * value(a);
    Ref out = push(std::move(v), needs(a));
    if (tracked(out)) {
      nodes_[out].back = [a, c](Tape& t, const Mat<T>& g) {
        t.accum(a, c.asDiagonal() * g);
      };
    }
    return out;
  }

  /// Per-row squared Euclidean norm, Nx1.
  Ref sqnorm_rows(Ref a) {
    Mat<T> v = value(a).rowwise().squaredNorm();
    Ref out = push(std::move(v), needs(a));
    if (tracked(out)) {
      nodes_[out].back = [a](Tape& t, const Mat<T>& g) {
        t.accum(a, T(2) * (g.col(0).asDiagonal() * t.value(a)));
      };
    }
    return out;
  }

  /// (1/n) * sum_i w_i * col_i for an Nx1 column and constant weights.
  Ref weighted_mean(Ref col, VecXd weights) {
    const Mat<T>& c = value(col);
    if (c.cols() != 1 || weights.size() != c.rows())
      throw std::invalid_argument("weighted_mean: expects Nx1 column and N weights");
    Vec<T> w = weights.template cast<T>();
    T n = static_cast<T>(c.rows());
    Mat<T> v(1, 1);
    v(0, 0) = c.col(0).dot(w) / n;
    Ref out = push(std::move(v), needs(col));
    if (tracked(out)) {
      nodes_[out].back = [col, w, n](Tape& t, const Mat<T>& g) {
        t.accum(col, (g(0, 0) / n) * w);
      };
    }
    return out;
  }

  Ref sum(Ref a) {
    Mat<T> v(1, 1);
    v(0, 0) = value(a).sum();
    Ref out = push(std::move(v), needs(a));
    if (tracked(out)) {
      nodes_[out].back = [a](Tape& t, const Mat<T>& g) {
        t.accum(a, Mat<T>::Constant(t.value(a).rows(), t.value(a).cols(), g(0, 0)));
      };
    }
    return out;
  }

  /// Stop-gradient: the value passes through, the history does not.
  Ref detach(Ref a) { return constant(value(a)); }

 private:
  struct Node {
    Mat<T> val;
    Mat<T> grad;  // empty until flow arrives
    bool needs_grad = false;
    std::function<void(Tape&, const Mat<T>&)> back;
  };

  bool needs(Ref r) const { return nodes_[check(r)].needs_grad; }
  bool tracked(Ref r) const { return recording_ && nodes_[check(r)].needs_grad; }

  Ref push(Mat<T> v, bool needs_grad) {
    nodes_.push_back(Node{std::move(v), {}, recording_ && needs_grad, nullptr});
    return static_cast<Ref>(nodes_.size() - 1);
  }

  void ensure_grad(Ref r) {
    Node& n = nodes_[r];
    if (n.grad.size() == 0) n.grad = Mat<T>::Zero(n.val.rows(), n.val.cols());
  }

  template <typename M>
  void accum(Ref r, M&& g) {
    ensure_grad(r);
    nodes_[r].grad += g;
  }

  Ref check(Ref r) const {
    if (r < 0 || static_cast<std::size_t>(r) >= nodes_.size())
      throw std::out_of_range("Tape: bad node reference");
    return r;
  }

  std::vector<Node> nodes_;
  bool recording_;
};

}  // namespace selfe::ad
