#include "vptsurv/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vptsurv/errors.hpp"

namespace vptsurv {

void DecoderConfig::validate() const {
  if (layers < 1) throw InvalidArgument("decoder: need at least one layer");
  if (heads < 1 || dim % heads != 0) throw InvalidArgument("decoder: dim must be divisible by heads");
  if (queries < 1) throw InvalidArgument("decoder: query count must be >= 1");
  if (bins < 1) throw InvalidArgument("decoder: bin count must be >= 1");
  if (mlp_ratio < 1) throw InvalidArgument("decoder: mlp ratio must be >= 1");
}

DecoderLayer::DecoderLayer(const DecoderConfig& c)
    : norm_self(c.dim),
      norm_cross(c.dim),
      norm_ffn(c.dim),
      self_attn(c.dim, c.heads),
      cross_attn(c.dim, c.heads),
      ffn(c.dim, static_cast<Eigen::Index>(c.dim) * c.mlp_ratio) {}

Matrix DecoderLayer::forward(const Matrix& q0, const Matrix& memory, Cache* cache) const {
  Matrix self_in = norm_self.forward(q0, cache ? &cache->norm_self : nullptr);
  Matrix q1 = q0 + self_attn.forward(self_in, self_in, cache ? &cache->self_attn : nullptr);
  Matrix cross_in = norm_cross.forward(q1, cache ? &cache->norm_cross : nullptr);
  Matrix q2 = q1 + cross_attn.forward(cross_in, memory, cache ? &cache->cross_attn : nullptr);
  Matrix ffn_in = norm_ffn.forward(q2, cache ? &cache->norm_ffn : nullptr);
  Matrix out = q2 + ffn.forward(ffn_in, cache ? &cache->ffn : nullptr);
  if (cache) {
    cache->q0 = q0;
    cache->q1 = std::move(q1);
    cache->q2 = std::move(q2);
    cache->self_in = std::move(self_in);
    cache->cross_in = std::move(cross_in);
    cache->ffn_in = std::move(ffn_in);
  }
  return out;
}

DecoderLayer::Grads DecoderLayer::backward(const Matrix& memory, const Cache& cache,
                                           const Matrix& dout) {
  Matrix dq2 = dout + norm_ffn.backward(cache.norm_ffn, ffn.backward(cache.ffn_in, cache.ffn, dout));
  auto cross = cross_attn.backward(cache.cross_in, memory, cache.cross_attn, dq2);
  Matrix dq1 = dq2 + norm_cross.backward(cache.norm_cross, cross.dquery);
  auto self = self_attn.backward(cache.self_in, cache.self_in, cache.self_attn, dq1);
  Matrix dself_in = self.dquery + self.dmemory;
  Grads g;
  g.dqueries = dq1 + norm_self.backward(cache.norm_self, dself_in);
  g.dmemory = std::move(cross.dmemory);
  return g;
}

void DecoderLayer::visit(const std::string& prefix, const ParamVisitor& fn) {
  norm_self.visit(prefix + ".norm_self", fn);
  self_attn.visit(prefix + ".self_attn", fn);
  norm_cross.visit(prefix + ".norm_cross", fn);
  cross_attn.visit(prefix + ".cross_attn", fn);
  norm_ffn.visit(prefix + ".norm_ffn", fn);
  ffn.visit(prefix + ".ffn", fn);
}

SurvivalDecoder::SurvivalDecoder(const DecoderConfig& cfg)
    : config(cfg),
      queries(cfg.queries, cfg.dim),
      input_center(1, cfg.dim, false),
      input_scale(1, cfg.dim, false),
      memory_norm(cfg.dim),
      final_norm(cfg.dim),
      head(cfg.dim, cfg.bins) {
  config.validate();
  input_scale.value.setOnes();
  layers.reserve(cfg.layers);
  for (int i = 0; i < cfg.layers; ++i) layers.emplace_back(cfg);
}

namespace {

std::vector<Eigen::Index> canonical_order(const Matrix& m) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (m(a, c) != m(b, c)) return m(a, c) < m(b, c);
    }
    return false;
  });
  return order;
}

}  // namespace

HazardPrediction SurvivalDecoder::decode(const Matrix& memory, Cache* cache) const {
  if (memory.rows() == 0) throw InvalidArgument("decode: no tile tokens");
  if (memory.cols() != config.dim) {
    throw InvalidArgument("decode: token dim " + std::to_string(memory.cols()) +
                          " does not match decoder dim " + std::to_string(config.dim));
  }
  if (!memory.allFinite()) throw InvalidArgument("decode: non-finite tile tokens");

  std::vector<Eigen::Index> order = canonical_order(memory);
  Matrix sorted(memory.rows(), memory.cols());
  for (std::size_t i = 0; i < order.size(); ++i) sorted.row(static_cast<Eigen::Index>(i)) = memory.row(order[i]);

  sorted.rowwise() -= input_center.value.row(0);
  sorted.array().rowwise() *= input_scale.value.row(0).array();
  Matrix normed = memory_norm.forward(sorted, cache ? &cache->memory_norm : nullptr);
  Matrix q = queries.value;
  if (cache) cache->layers.resize(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    q = layers[i].forward(q, normed, cache ? &cache->layers[i] : nullptr);
  }
  const Matrix z = final_norm.forward(q, cache ? &cache->final_norm : nullptr);
  const RowVector pooled = z.colwise().mean();
  const Matrix logits = head.forward(pooled);

  std::vector<double> sig(static_cast<std::size_t>(config.bins));
  for (int t = 0; t < config.bins; ++t) sig[t] = 1.0 / (1.0 + std::exp(-logits(0, t)));
  HazardPrediction pred = HazardPrediction::from_hazards(sig);

  if (cache) {
    cache->order = std::move(order);
    cache->memory = std::move(normed);
    cache->final_in = std::move(q);
    cache->pooled = pooled;
    cache->sigmoid = std::move(sig);
  }
  return pred;
}

Matrix SurvivalDecoder::backward(const Cache& cache, std::span<const double> dhazards) {
  if (static_cast<int>(dhazards.size()) != config.bins) {
    throw InvalidArgument("decoder backward: hazard gradient has wrong length");
  }
  Matrix dlogits(1, config.bins);
  for (int t = 0; t < config.bins; ++t) {
    const double s = cache.sigmoid[t];
    // Clamped bins are flat.
    const bool clamped = s < kHazardEpsilon || s > 1.0 - kHazardEpsilon;
    dlogits(0, t) = clamped ? 0.0 : dhazards[t] * s * (1.0 - s);
  }
  const Matrix dpooled = head.backward(cache.pooled, dlogits);
  const auto nq = cache.final_in.rows();
  const Matrix dz = dpooled.replicate(nq, 1) / static_cast<double>(nq);
  Matrix dq = final_norm.backward(cache.final_norm, dz);

  Matrix dmemory = Matrix::Zero(cache.memory.rows(), cache.memory.cols());
  for (std::size_t i = layers.size(); i-- > 0;) {
    auto g = layers[i].backward(cache.memory, cache.layers[i], dq);
    dq = std::move(g.dqueries);
    dmemory += g.dmemory;
  }
  if (queries.trainable) queries.gradient() += dq;

  Matrix dsorted = memory_norm.backward(cache.memory_norm, dmemory);
  dsorted.array().rowwise() *= input_scale.value.row(0).array();
  Matrix out(dsorted.rows(), dsorted.cols());
  for (std::size_t i = 0; i < cache.order.size(); ++i) out.row(cache.order[i]) = dsorted.row(static_cast<Eigen::Index>(i));
  return out;
}

void SurvivalDecoder::fit_input_standardization(const Matrix& features) {
  if (features.rows() == 0 || features.cols() != config.dim) {
    throw InvalidArgument("fit_input_standardization: need rows of width " + std::to_string(config.dim));
  }
  const RowVector mean = features.colwise().mean();
  const RowVector var = (features.rowwise() - mean).array().square().colwise().mean();
  input_center.value.row(0) = mean;
  for (Eigen::Index c = 0; c < var.cols(); ++c) {
    input_scale.value(0, c) = 1.0 / std::max(std::sqrt(var(c)), 1e-8);
  }
}

void SurvivalDecoder::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".queries", queries);
  fn(prefix + ".input_center", input_center);
  fn(prefix + ".input_scale", input_scale);
  memory_norm.visit(prefix + ".memory_norm", fn);
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(prefix + ".layers." + std::to_string(i), fn);
  final_norm.visit(prefix + ".final_norm", fn);
  head.visit(prefix + ".head", fn);
}

}  // namespace vptsurv
