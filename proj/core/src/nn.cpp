#include "vptsurv/nn.hpp"

#include <cmath>

#include "vptsurv/errors.hpp"
#include "vptsurv/random.hpp"

namespace vptsurv {

namespace {

void fill_uniform(Matrix& m, Rng& rng, double bound) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
}

void require_cols(const Matrix& x, Eigen::Index cols, const char* what) {
  if (x.cols() != cols) {
    throw InvalidArgument(std::string(what) + ": expected " + std::to_string(cols) +
                          " features, got " + std::to_string(x.cols()));
  }
}

}  // namespace

Linear::Linear(Eigen::Index in, Eigen::Index out) : weight(out, in), bias(1, out) {}

void Linear::init_uniform(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features()));
  fill_uniform(weight.value, rng, bound);
  fill_uniform(bias.value, rng, bound);
}

void Linear::init_zero() {
  weight.value.setZero();
  bias.value.setZero();
}

Matrix Linear::forward(const Matrix& x) const {
  require_cols(x, in_features(), "Linear");
  Matrix y(x.rows(), out_features());
  y.noalias() = x * weight.value.transpose();
  y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy, bool need_input_grad) {
  if (weight.trainable) weight.gradient().noalias() += dy.transpose() * x;
  if (bias.trainable) bias.gradient().row(0) += dy.colwise().sum();
  if (!need_input_grad) return {};
  Matrix dx(dy.rows(), in_features());
  dx.noalias() = dy * weight.value;
  return dx;
}

void Linear::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".weight", weight);
  fn(prefix + ".bias", bias);
}

LayerNorm::LayerNorm(Eigen::Index dim) : gamma(1, dim), beta(1, dim) { gamma.value.setOnes(); }

Matrix LayerNorm::forward(const Matrix& x, Cache* cache) const {
  require_cols(x, gamma.value.cols(), "LayerNorm");
  const auto n = x.rows();
  const double inv_d = 1.0 / static_cast<double>(x.cols());
  Matrix normalized(n, x.cols());
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = x.row(r).sum() * inv_d;
    const auto centered = x.row(r).array() - mu;
    const double var = centered.square().sum() * inv_d;
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    normalized.row(r) = centered * inv_std(r);
  }
  Matrix y = normalized.array().rowwise() * gamma.value.row(0).array();
  y.rowwise() += beta.value.row(0);
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Matrix LayerNorm::backward(const Cache& cache, const Matrix& dy) {
  const Matrix& xhat = cache.normalized;
  if (gamma.trainable) gamma.gradient().row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  if (beta.trainable) beta.gradient().row(0) += dy.colwise().sum();
  const double inv_d = 1.0 / static_cast<double>(dy.cols());
  Matrix dxhat = dy.array().rowwise() * gamma.value.row(0).array();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_d = dxhat.row(r).sum() * inv_d;
    const double mean_dx = dxhat.row(r).dot(xhat.row(r)) * inv_d;
    dx.row(r) = (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx) * cache.inv_std(r);
  }
  return dx;
}

void LayerNorm::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".gamma", gamma);
  fn(prefix + ".beta", beta);
}

Matrix gelu(const Matrix& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); });
}

Matrix gelu_backward(const Matrix& x, const Matrix& dy) {
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  Matrix dx(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
    dx.data()[i] = dy.data()[i] * (cdf + v * pdf);
  }
  return dx;
}

Matrix softmax_rows(const Matrix& scores) {
  Matrix p(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double m = scores.row(r).maxCoeff();
    p.row(r) = (scores.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

Matrix softmax_rows_backward(const Matrix& probs, const Matrix& dprobs) {
  const Eigen::VectorXd inner = (probs.array() * dprobs.array()).rowwise().sum();
  return probs.array() * (dprobs.colwise() - inner).array();
}

Matrix ScaledDotAttention::forward(const Matrix& q, const Matrix& k, const Matrix& v,
                                   Cache* cache) {
  if (k.rows() == 0) throw InvalidArgument("attention: empty key/value sequence");
  if (q.cols() != k.cols() || k.rows() != v.rows()) throw InvalidArgument("attention: shape mismatch");
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix scores(q.rows(), k.rows());
  scores.noalias() = (q * k.transpose()) * scale;
  Matrix probs = softmax_rows(scores);
  Matrix out(q.rows(), v.cols());
  out.noalias() = probs * v;
  if (cache) cache->probs = std::move(probs);
  return out;
}

ScaledDotAttention::Grads ScaledDotAttention::backward(const Matrix& q, const Matrix& k,
                                                       const Matrix& v, const Cache& cache,
                                                       const Matrix& dout) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Grads g;
  Matrix dprobs(dout.rows(), v.rows());
  dprobs.noalias() = dout * v.transpose();
  g.dv.noalias() = cache.probs.transpose() * dout;
  const Matrix dscores = softmax_rows_backward(cache.probs, dprobs) * scale;
  g.dq.noalias() = dscores * k;
  g.dk.noalias() = dscores.transpose() * q;
  return g;
}

MultiHeadAttention::MultiHeadAttention(Eigen::Index dim, int num_heads)
    : query(dim, dim), key(dim, dim), value(dim, dim), output(dim, dim), heads(num_heads) {
  if (num_heads < 1 || dim % num_heads != 0) {
    throw InvalidArgument("MultiHeadAttention: dim must be divisible by head count");
  }
}

void MultiHeadAttention::init_uniform(Rng& rng) {
  query.init_uniform(rng);
  key.init_uniform(rng);
  value.init_uniform(rng);
  output.init_uniform(rng);
}

Matrix MultiHeadAttention::forward(const Matrix& x_query, const Matrix& x_memory,
                                   Cache* cache) const {
  if (x_memory.rows() == 0) throw InvalidArgument("attention: empty memory");
  Matrix q = query.forward(x_query);
  Matrix k = key.forward(x_memory);
  Matrix v = value.forward(x_memory);
  const Eigen::Index dim = q.cols();
  const Eigen::Index head_dim = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Matrix context(q.rows(), dim);
  if (cache) cache->probs.resize(heads);
  Matrix scores(q.rows(), k.rows());
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index off = h * head_dim;
    scores.noalias() = q.middleCols(off, head_dim) * k.middleCols(off, head_dim).transpose();
    scores *= scale;
    Matrix probs = softmax_rows(scores);
    context.middleCols(off, head_dim).noalias() = probs * v.middleCols(off, head_dim);
    if (cache) cache->probs[h] = std::move(probs);
  }
  Matrix out = output.forward(context);
  if (cache) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->context = std::move(context);
  }
  return out;
}

MultiHeadAttention::Grads MultiHeadAttention::backward(const Matrix& x_query,
                                                       const Matrix& x_memory, const Cache& cache,
                                                       const Matrix& dout, bool need_input_grad) {
  const Eigen::Index dim = cache.q.cols();
  const Eigen::Index head_dim = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  const Matrix dcontext = output.backward(cache.context, dout);
  Matrix dq(cache.q.rows(), dim);
  Matrix dk(cache.k.rows(), dim);
  Matrix dv(cache.v.rows(), dim);
  Matrix dprobs(cache.q.rows(), cache.k.rows());
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index off = h * head_dim;
    const Matrix& probs = cache.probs[h];
    const auto dctx = dcontext.middleCols(off, head_dim);
    dprobs.noalias() = dctx * cache.v.middleCols(off, head_dim).transpose();
    dv.middleCols(off, head_dim).noalias() = probs.transpose() * dctx;
    const Matrix dscores = softmax_rows_backward(probs, dprobs) * scale;
    dq.middleCols(off, head_dim).noalias() = dscores * cache.k.middleCols(off, head_dim);
    dk.middleCols(off, head_dim).noalias() = dscores.transpose() * cache.q.middleCols(off, head_dim);
  }

  Grads g;
  g.dquery = query.backward(x_query, dq, need_input_grad);
  Matrix dmem_k = key.backward(x_memory, dk, need_input_grad);
  Matrix dmem_v = value.backward(x_memory, dv, need_input_grad);
  if (need_input_grad) g.dmemory = dmem_k + dmem_v;
  return g;
}

void MultiHeadAttention::visit(const std::string& prefix, const ParamVisitor& fn) {
  query.visit(prefix + ".query", fn);
  key.visit(prefix + ".key", fn);
  value.visit(prefix + ".value", fn);
  output.visit(prefix + ".output", fn);
}

FeedForward::FeedForward(Eigen::Index dim, Eigen::Index hidden) : fc1(dim, hidden), fc2(hidden, dim) {}

void FeedForward::init_uniform(Rng& rng) {
  fc1.init_uniform(rng);
  fc2.init_uniform(rng);
}

Matrix FeedForward::forward(const Matrix& x, Cache* cache) const {
  Matrix pre = fc1.forward(x);
  Matrix hidden = gelu(pre);
  Matrix out = fc2.forward(hidden);
  if (cache) {
    cache->pre = std::move(pre);
    cache->hidden = std::move(hidden);
  }
  return out;
}

Matrix FeedForward::backward(const Matrix& x, const Cache& cache, const Matrix& dy,
                             bool need_input_grad) {
  const Matrix dhidden = fc2.backward(cache.hidden, dy);
  const Matrix dpre = gelu_backward(cache.pre, dhidden);
  return fc1.backward(x, dpre, need_input_grad);
}

void FeedForward::visit(const std::string& prefix, const ParamVisitor& fn) {
  fc1.visit(prefix + ".fc1", fn);
  fc2.visit(prefix + ".fc2", fn);
}

}  // namespace vptsurv
