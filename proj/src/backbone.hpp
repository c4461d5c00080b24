#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "mat.hpp"
#include "rng.hpp"

namespace selfe {

enum class CondKind { Class, Null, Fake };

/// Discrete condition identity: a class label, the null condition, or the
/// fake-tagged twin of a class label (one embedding row per variant).
struct ConditionToken {
  CondKind kind = CondKind::Null;
  int id = 0;

  static ConditionToken cls(int id) { return {CondKind::Class, id}; }
  static ConditionToken null() { return {CondKind::Null, 0}; }
  static ConditionToken fake(int id) { return {CondKind::Fake, id}; }

  bool is_class() const { return kind == CondKind::Class; }
  bool is_null() const { return kind == CondKind::Null; }
  bool is_fake() const { return kind == CondKind::Fake; }

  /// Embedding-table row. Layout: [0, C) classes, C null, [C+1, 2C+1) fakes.
  int row(int n_classes) const {
    switch (kind) {
      case CondKind::Class:
        if (id < 0 || id >= n_classes) throw std::out_of_range("ConditionToken: class id " + std::to_string(id));
        return id;
      case CondKind::Null:
        return n_classes;
      case CondKind::Fake:
        if (id < 0 || id >= n_classes) throw std::out_of_range("ConditionToken: fake id " + std::to_string(id));
        return n_classes + 1 + id;
    }
    throw std::logic_error("ConditionToken: bad kind");
  }

  bool operator==(const ConditionToken& o) const { return kind == o.kind && id == o.id; }
};

struct NetworkConfig {
  int dim = 2;            // data dimensionality
  int hidden = 128;       // trunk width; also the time-embedding width
  int depth = 3;          // number of hidden layers
  int classes = 4;
  int cond_emb = 64;      // condition embedding width
  int time_feats = 32;    // sinusoidal feature count (pairs * 2)

  int table_rows() const { return 2 * classes + 1; }
  int input_width() const { return dim + hidden + cond_emb; }

  void validate() const {
    if (dim < 1 || hidden < 1 || depth < 1 || classes < 1 || cond_emb < 1)
      throw std::invalid_argument("NetworkConfig: all sizes must be positive");
    if (time_feats < 2 || time_feats % 2 != 0)
      throw std::invalid_argument("NetworkConfig: time_feats must be even and >= 2");
  }

  bool operator==(const NetworkConfig&) const = default;
};

/// Sinusoidal features for a unitless time value: 16 default frequency
/// pairs, geometric from 1 to 1e4 periods over the unit interval.
inline MatXd sinusoid_features(const VecXd& u, int time_feats) {
  int pairs = time_feats / 2;
  MatXd out(u.size(), time_feats);
  for (int j = 0; j < pairs; ++j) {
    double freq = std::pow(10.0, 4.0 * j / std::max(pairs - 1, 1));
    double w = 2.0 * M_PI * freq;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      out(i, 2 * j) = std::sin(w * u(i));
      out(i, 2 * j + 1) = std::cos(w * u(i));
    }
  }
  return out;
}

/// Conditional dual-time MLP. Parameters are stored in one flat declaration
/// order (the checkpoint order); indices below name the slots.
template <typename T>
struct Network {
  NetworkConfig cfg;
  std::vector<Mat<T>> params;

  // parameter slots
  enum : int { kCondTable = 0, kWt1, kBt1, kWt2, kBt2, kWs1, kBs1, kWs2, kBs2, kTrunk0 };
  int trunk_w(int layer) const { return kTrunk0 + 2 * layer; }      // layer 0..depth-1
  int trunk_b(int layer) const { return kTrunk0 + 2 * layer + 1; }
  int out_w() const { return kTrunk0 + 2 * cfg.depth; }
  int out_b() const { return kTrunk0 + 2 * cfg.depth + 1; }
  int n_params() const { return kTrunk0 + 2 * cfg.depth + 2; }

  static Network init(const NetworkConfig& cfg, Rng& rng) {
    cfg.validate();
    Network net;
    net.cfg = cfg;
    net.params.resize(static_cast<size_t>(net.n_params()));
    auto he = [&](int rows, int cols) {
      T stddev = static_cast<T>(std::sqrt(2.0 / rows));
      return (randn_mat<T>(rng, rows, cols) * stddev).eval();
    };
    net.params[kCondTable] = randn_mat<T>(rng, cfg.table_rows(), cfg.cond_emb) *
                             static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.cond_emb)));
    net.params[kWt1] = he(cfg.time_feats, cfg.hidden);
    net.params[kBt1] = Mat<T>::Zero(1, cfg.hidden);
    net.params[kWt2] = he(cfg.hidden, cfg.hidden);
    net.params[kBt2] = Mat<T>::Zero(1, cfg.hidden);
    net.params[kWs1] = he(cfg.time_feats, cfg.hidden);
    net.params[kBs1] = Mat<T>::Zero(1, cfg.hidden);
    net.params[kWs2] = he(cfg.hidden, cfg.hidden);
    net.params[kBs2] = Mat<T>::Zero(1, cfg.hidden);
    int in = cfg.input_width();
    for (int l = 0; l < cfg.depth; ++l) {
      net.params[static_cast<size_t>(net.trunk_w(l))] = he(l == 0 ? in : cfg.hidden, cfg.hidden);
      net.params[static_cast<size_t>(net.trunk_b(l))] = Mat<T>::Zero(1, cfg.hidden);
    }
    // Zero-initialized head: the untrained model predicts V = 0 (x0_hat = x_t).
    net.params[static_cast<size_t>(net.out_w())] = Mat<T>::Zero(cfg.hidden, cfg.dim);
    net.params[static_cast<size_t>(net.out_b())] = Mat<T>::Zero(1, cfg.dim);
    return net;
  }

  template <typename U>
  Network<U> cast() const {
    Network<U> out;
    out.cfg = cfg;
    out.params.reserve(params.size());
    for (const auto& p : params) out.params.push_back(p.template cast<U>());
    return out;
  }

  static Mat<T> silu(const Mat<T>& x) {
    return (x.array() * (T(1) / (T(1) + (-x.array()).exp()))).matrix();
  }

  /// Combined dual-time embedding e_t + e_s with the gap t - s feeding the
  /// second stack.
  Mat<T> time_embed(const VecXd& t, const VecXd& s) const {
    Mat<T> st = sinusoid_features(t, cfg.time_feats).template cast<T>();
    Mat<T> sg = sinusoid_features((t - s).eval(), cfg.time_feats).template cast<T>();
    Mat<T> et = silu((st * params[kWt1]).rowwise() + params[kBt1].row(0)) * params[kWt2];
    et = et.rowwise() + params[kBt2].row(0);
    Mat<T> es = silu((sg * params[kWs1]).rowwise() + params[kBs1].row(0)) * params[kWs2];
    es = es.rowwise() + params[kBs2].row(0);
    return et + es;
  }

  /// Batched velocity evaluation; rows are independent samples.
  Mat<T> velocity(const Mat<T>& x, const VecXd& t, const VecXd& s,
                  const std::vector<int>& cond_rows) const {
    Eigen::Index n = x.rows();
    if (t.size() != n || s.size() != n || static_cast<Eigen::Index>(cond_rows.size()) != n)
      throw std::invalid_argument("Network::velocity: batch size mismatch");
    Mat<T> emb(n, cfg.cond_emb);
    for (Eigen::Index i = 0; i < n; ++i) emb.row(i) = params[kCondTable].row(cond_rows[static_cast<size_t>(i)]);
    Mat<T> te = time_embed(t, s);
    Mat<T> h(n, cfg.input_width());
    h << x, te, emb;
    for (int l = 0; l < cfg.depth; ++l) {
      h = silu(((h * params[static_cast<size_t>(trunk_w(l))]).rowwise() +
                params[static_cast<size_t>(trunk_b(l))].row(0))
                   .eval());
    }
    Mat<T> v = (h * params[static_cast<size_t>(out_w())]).rowwise() +
               params[static_cast<size_t>(out_b())].row(0);
    return v;
  }

  Mat<T> predict_x0(const Mat<T>& x, const VecXd& t, const VecXd& s,
                    const std::vector<int>& cond_rows) const {
    Mat<T> v = velocity(x, t, s, cond_rows);
    return x - t.template cast<T>().asDiagonal() * v;
  }

  /// Single-sample velocity with input validation.
  Vec<T> predict_velocity(const Vec<T>& x, double t, double s, const ConditionToken& c) const {
    if (!x.allFinite()) throw std::invalid_argument("predict_velocity: non-finite input");
    if (!(s <= t + 1e-12)) throw std::invalid_argument("predict_velocity: requires s <= t");
    Mat<T> xb = x.transpose();
    VecXd tv = VecXd::Constant(1, t), sv = VecXd::Constant(1, s);
    return velocity(xb, tv, sv, {c.row(cfg.classes)}).row(0).transpose();
  }

  /// Single-sample clean estimate x_t - t * V.
  Vec<T> predict_x0_point(const Vec<T>& x, double t, double s, const ConditionToken& c) const {
    Vec<T> v = predict_velocity(x, t, s, c);
    return x - static_cast<T>(t) * v;
  }
};

/// EMA copy of a network's parameters; updated only through update().
template <typename T>
struct EmaShadow {
  Network<T> net;
  double decay = 0.9999;

  static EmaShadow from(const Network<T>& live, double decay) {
    return EmaShadow{live, decay};
  }

  void update(const Network<T>& live) {
    if (live.params.size() != net.params.size())
      throw std::invalid_argument("EmaShadow::update: parameter count mismatch");
    T d = static_cast<T>(decay), od = static_cast<T>(1.0 - decay);
    for (size_t i = 0; i < net.params.size(); ++i) {
      if (net.params[i].rows() != live.params[i].rows() || net.params[i].cols() != live.params[i].cols())
        throw std::invalid_argument("EmaShadow::update: shape mismatch at slot " + std::to_string(i));
      net.params[i] = d * net.params[i] + od * live.params[i];
    }
  }
};

/// A network bound into a tape: every parameter becomes a differentiable
/// leaf, shared across all forward passes recorded on that tape, so
/// gradients from multiple passes accumulate.
template <typename T>
struct TapeNet {
  const Network<T>* net = nullptr;
  std::vector<typename ad::Tape<T>::Ref> p;

  static TapeNet bind(ad::Tape<T>& tape, const Network<T>& n) {
    TapeNet b;
    b.net = &n;
    b.p.reserve(n.params.size());
    for (const auto& m : n.params) b.p.push_back(tape.leaf(m));
    return b;
  }

  using Ref = typename ad::Tape<T>::Ref;

  Ref time_embed(ad::Tape<T>& tp, const VecXd& t, const VecXd& s) const {
    const auto& cfg = net->cfg;
    Ref st = tp.constant(sinusoid_features(t, cfg.time_feats).template cast<T>());
    Ref sg = tp.constant(sinusoid_features((t - s).eval(), cfg.time_feats).template cast<T>());
    Ref et = tp.add_rowvec(tp.matmul(tp.silu(tp.add_rowvec(tp.matmul(st, p[Network<T>::kWt1]), p[Network<T>::kBt1])),
                                     p[Network<T>::kWt2]),
                           p[Network<T>::kBt2]);
    Ref es = tp.add_rowvec(tp.matmul(tp.silu(tp.add_rowvec(tp.matmul(sg, p[Network<T>::kWs1]), p[Network<T>::kBs1])),
                                     p[Network<T>::kWs2]),
                           p[Network<T>::kBs2]);
    return tp.add(et, es);
  }

  Ref velocity(ad::Tape<T>& tp, const Mat<T>& x, const VecXd& t, const VecXd& s,
               const std::vector<int>& cond_rows) const {
    const auto& cfg = net->cfg;
    Ref emb = tp.gather_rows(p[Network<T>::kCondTable], cond_rows);
    Ref te = time_embed(tp, t, s);
    Ref h = tp.concat_cols({tp.constant(x), te, emb});
    for (int l = 0; l < cfg.depth; ++l) {
      h = tp.silu(tp.add_rowvec(tp.matmul(h, p[static_cast<size_t>(net->trunk_w(l))]),
                                p[static_cast<size_t>(net->trunk_b(l))]));
    }
    return tp.add_rowvec(tp.matmul(h, p[static_cast<size_t>(net->out_w())]),
                         p[static_cast<size_t>(net->out_b())]);
  }

  /// x0_hat = x_t - t * V.
  Ref predict_x0(ad::Tape<T>& tp, const Mat<T>& x, const VecXd& t, const VecXd& s,
                 const std::vector<int>& cond_rows) const {
    Ref v = velocity(tp, x, t, s, cond_rows);
    return tp.sub(tp.constant(x), tp.scale_rows(v, t));
  }

  /// Parameter gradients in declaration order (zero for untouched slots).
  std::vector<Mat<T>> grads(const ad::Tape<T>& tp) const {
    std::vector<Mat<T>> g;
    g.reserve(p.size());
    for (auto r : p) g.push_back(tp.grad(r));
    return g;
  }
};

}  // namespace selfe
