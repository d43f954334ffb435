#pragma once

// Dense layers with explicit forward/backward passes. Layers are stateless
// with respect to activations: forward returns whatever the backward pass
// needs, so a frozen model can be evaluated from several threads.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cteinv/errors.hpp"
#include "cteinv/random.hpp"

namespace cteinv::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using ColVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix<T>::Zero(rows, cols)), grad(Matrix<T>::Zero(rows, cols)) {}

  std::size_t size() const { return static_cast<std::size_t>(value.size()); }
  void zero_grad() { grad.setZero(); }
};

template <typename T>
using ParamList = std::vector<Parameter<T>*>;

template <typename T>
std::size_t count_parameters(const ParamList<T>& ps) {
  std::size_t n = 0;
  for (const auto* p : ps) n += p->size();
  return n;
}

template <typename T>
void fill_uniform(Matrix<T>& m, Rng& rng, double bound) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void fill_normal(Matrix<T>& m, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(stddev * rng.normal());
}

// ---------------------------------------------------------------------------

/// y = x W + b, W stored as (in x out).
template <typename T>
struct Linear {
  Parameter<T> weight;
  Parameter<T> bias;

  Linear() = default;
  Linear(const std::string& name, Eigen::Index in, Eigen::Index out)
      : weight(name + ".weight", in, out), bias(name + ".bias", 1, out) {}

  Eigen::Index in_dim() const { return weight.value.rows(); }
  Eigen::Index out_dim() const { return weight.value.cols(); }

  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim()));
    fill_uniform(weight.value, rng, bound);
    fill_uniform(bias.value, rng, bound);
  }

  Matrix<T> forward(const Matrix<T>& x) const {
    Matrix<T> y = x * weight.value;
    y.rowwise() += bias.value.row(0);
    return y;
  }

  /// Accumulates parameter gradients, returns dL/dx.
  Matrix<T> backward(const Matrix<T>& x, const Matrix<T>& dy) {
    weight.grad.noalias() += x.transpose() * dy;
    bias.grad.row(0) += dy.colwise().sum();
    return dy * weight.value.transpose();
  }

  void collect(ParamList<T>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

// ---------------------------------------------------------------------------

template <typename T>
struct LayerNormCache {
  Matrix<T> xhat;
  ColVector<T> inv_std;
};

template <typename T>
struct LayerNorm {
  Parameter<T> gamma;
  Parameter<T> beta;
  T eps = T(1e-5);

  LayerNorm() = default;
  LayerNorm(const std::string& name, Eigen::Index dim, T epsilon = T(1e-5))
      : gamma(name + ".gamma", 1, dim), beta(name + ".beta", 1, dim), eps(epsilon) {
    gamma.value.setOnes();
  }

  Matrix<T> forward(const Matrix<T>& x, LayerNormCache<T>* cache = nullptr) const {
    const auto n = static_cast<T>(x.cols());
    ColVector<T> mean = x.rowwise().sum() / n;
    Matrix<T> centered = x.colwise() - mean;
    ColVector<T> var = centered.array().square().rowwise().sum() / n;
    ColVector<T> inv_std = (var.array() + eps).rsqrt();
    Matrix<T> xhat = centered.array().colwise() * inv_std.array();
    Matrix<T> y = xhat.array().rowwise() * gamma.value.row(0).array();
    y.rowwise() += beta.value.row(0);
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->inv_std = std::move(inv_std);
    }
    return y;
  }

  Matrix<T> backward(const LayerNormCache<T>& c, const Matrix<T>& dy) {
    gamma.grad.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    beta.grad.row(0) += dy.colwise().sum();
    const auto n = static_cast<T>(dy.cols());
    Matrix<T> dxhat = dy.array().rowwise() * gamma.value.row(0).array();
    ColVector<T> sum_dxhat = dxhat.rowwise().sum();
    ColVector<T> sum_dxhat_xhat = (dxhat.array() * c.xhat.array()).rowwise().sum();
    Matrix<T> dx = (n * dxhat.array()).matrix();
    dx.colwise() -= sum_dxhat;
    dx.array() -= c.xhat.array().colwise() * sum_dxhat_xhat.array();
    dx.array().colwise() *= c.inv_std.array() / n;
    return dx;
  }

  void collect(ParamList<T>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

// ---------------------------------------------------------------------------

/// Exact (erf) GELU.
template <typename T>
Matrix<T> gelu(const Matrix<T>& x) {
  return x.unaryExpr([](T v) { return T(0.5) * v * (T(1) + std::erf(v * T(0.70710678118654752440))); });
}

template <typename T>
Matrix<T> gelu_backward(const Matrix<T>& x, const Matrix<T>& dy) {
  const Matrix<T> d = x.unaryExpr([](T v) {
    const T cdf = T(0.5) * (T(1) + std::erf(v * T(0.70710678118654752440)));
    const T pdf = std::exp(T(-0.5) * v * v) * T(0.39894228040143267794);
    return cdf + v * pdf;
  });
  return dy.cwiseProduct(d);
}

/// Row-wise numerically stable softmax.
template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& x) {
  Matrix<T> y = x.colwise() - x.rowwise().maxCoeff();
  y = y.array().exp();
  ColVector<T> s = y.rowwise().sum();
  y.array().colwise() /= s.array();
  return y;
}

// ---------------------------------------------------------------------------

template <typename T>
struct AttentionCache {
  Matrix<T> q, k, v;               // projected, (rows x model_dim)
  std::vector<Matrix<T>> weights;  // per head, (q_rows x kv_rows)
  Matrix<T> context;               // concatenated head outputs
};

/// Multi-head scaled dot-product attention with optional causal mask.
template <typename T>
struct MultiHeadAttention {
  Linear<T> q_proj, k_proj, v_proj, out_proj;
  Eigen::Index heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, Eigen::Index model_dim, Eigen::Index n_heads)
      : q_proj(name + ".q", model_dim, model_dim),
        k_proj(name + ".k", model_dim, model_dim),
        v_proj(name + ".v", model_dim, model_dim),
        out_proj(name + ".out", model_dim, model_dim),
        heads(n_heads) {
    if (n_heads < 1 || model_dim % n_heads != 0) {
      throw InvalidArgument("attention heads (" + std::to_string(n_heads) + ") must divide model dim (" +
                            std::to_string(model_dim) + ")");
    }
  }

  void init(Rng& rng) {
    for (auto* l : {&q_proj, &k_proj, &v_proj, &out_proj}) l->init(rng);
  }

  Matrix<T> forward(const Matrix<T>& query_in, const Matrix<T>& kv_in, bool causal,
                    AttentionCache<T>* cache = nullptr) const {
    const Eigen::Index dim = q_proj.out_dim();
    const Eigen::Index hd = dim / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    Matrix<T> q = q_proj.forward(query_in);
    Matrix<T> k = k_proj.forward(kv_in);
    Matrix<T> v = v_proj.forward(kv_in);
    Matrix<T> context(query_in.rows(), dim);
    std::vector<Matrix<T>> weights;
    if (cache) weights.reserve(static_cast<std::size_t>(heads));
    for (Eigen::Index h = 0; h < heads; ++h) {
      Matrix<T> scores = (q.middleCols(h * hd, hd) * k.middleCols(h * hd, hd).transpose()) * scale;
      if (causal) {
        for (Eigen::Index i = 0; i < scores.rows(); ++i) {
          for (Eigen::Index j = i + 1; j < scores.cols(); ++j) {
            scores(i, j) = -std::numeric_limits<T>::infinity();
          }
        }
      }
      Matrix<T> a = softmax_rows(scores);
      context.middleCols(h * hd, hd).noalias() = a * v.middleCols(h * hd, hd);
      if (cache) weights.push_back(std::move(a));
    }
    Matrix<T> out = out_proj.forward(context);
    if (cache) {
      cache->q = std::move(q);
      cache->k = std::move(k);
      cache->v = std::move(v);
      cache->weights = std::move(weights);
      cache->context = std::move(context);
    }
    return out;
  }

  /// Returns (d query_in, d kv_in). For self-attention the caller sums both.
  std::pair<Matrix<T>, Matrix<T>> backward(const Matrix<T>& query_in, const Matrix<T>& kv_in,
                                           const AttentionCache<T>& c, const Matrix<T>& dout) {
    const Eigen::Index dim = q_proj.out_dim();
    const Eigen::Index hd = dim / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    Matrix<T> dcontext = out_proj.backward(c.context, dout);
    Matrix<T> dq(c.q.rows(), dim), dk(c.k.rows(), dim), dv(c.v.rows(), dim);
    for (Eigen::Index h = 0; h < heads; ++h) {
      const auto& a = c.weights[static_cast<std::size_t>(h)];
      const auto dctx_h = dcontext.middleCols(h * hd, hd);
      Matrix<T> da = dctx_h * c.v.middleCols(h * hd, hd).transpose();
      dv.middleCols(h * hd, hd).noalias() = a.transpose() * dctx_h;
      ColVector<T> row_dot = (da.array() * a.array()).rowwise().sum();
      Matrix<T> ds = a.array() * (da.colwise() - row_dot).array();
      ds *= scale;
      dq.middleCols(h * hd, hd).noalias() = ds * c.k.middleCols(h * hd, hd);
      dk.middleCols(h * hd, hd).noalias() = ds.transpose() * c.q.middleCols(h * hd, hd);
    }
    Matrix<T> dquery = q_proj.backward(query_in, dq);
    Matrix<T> dkv = k_proj.backward(kv_in, dk);
    dkv += v_proj.backward(kv_in, dv);
    return {std::move(dquery), std::move(dkv)};
  }

  void collect(ParamList<T>& out) {
    for (auto* l : {&q_proj, &k_proj, &v_proj, &out_proj}) l->collect(out);
  }
};

// ---------------------------------------------------------------------------

template <typename T>
struct CrossEntropyResult {
  double loss_sum = 0;       // summed over rows
  std::size_t correct = 0;   // argmax hits
  Matrix<T> dlogits;         // d(loss_sum * grad_scale)/dlogits
};

/// Argmax with ties broken by the lowest index.
template <typename Derived>
Eigen::Index argmax_row(const Eigen::MatrixBase<Derived>& row) {
  Eigen::Index best = 0;
  auto best_v = row(0, 0);
  for (Eigen::Index j = 1; j < row.cols(); ++j) {
    if (row(0, j) > best_v) {
      best_v = row(0, j);
      best = j;
    }
  }
  return best;
}

/// Softmax cross-entropy over rows of logits against integer targets. The
/// gradient is scaled by grad_scale (usually 1 / token count).
template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(const Matrix<T>& logits, const std::vector<std::int32_t>& targets,
                                            T grad_scale) {
  CrossEntropyResult<T> r;
  r.dlogits = softmax_rows(logits);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto t = static_cast<Eigen::Index>(targets[static_cast<std::size_t>(i)]);
    const double m = static_cast<double>(logits.row(i).maxCoeff());
    const double sum = (logits.row(i).array().template cast<double>() - m).exp().sum();
    r.loss_sum += m + std::log(sum) - static_cast<double>(logits(i, t));
    if (argmax_row(logits.row(i)) == t) ++r.correct;
    r.dlogits(i, t) -= T(1);
  }
  r.dlogits *= grad_scale;
  return r;
}

}  // namespace cteinv::nn
