#pragma once

#include <span>
#include <vector>

#include "vptsurv/nn.hpp"
#include "vptsurv/survival.hpp"

namespace vptsurv {

struct DecoderConfig {
  int layers = 2;
  int dim = 64;
  int heads = 4;
  int queries = 1;
  int bins = 4;
  int mlp_ratio = 4;

  void validate() const;
  friend bool operator==(const DecoderConfig&, const DecoderConfig&) = default;
};

/// Pre-norm block: self-attention over the queries, cross-attention from
/// queries to the tile tokens, FFN; each wrapped in a residual.
struct DecoderLayer {
  LayerNorm norm_self, norm_cross, norm_ffn;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ffn;

  struct Cache {
    Matrix q0, q1, q2;  // query state entering each sub-block
    Matrix self_in, cross_in, ffn_in;
    LayerNorm::Cache norm_self, norm_cross, norm_ffn;
    MultiHeadAttention::Cache self_attn, cross_attn;
    FeedForward::Cache ffn;
  };

  DecoderLayer() = default;
  explicit DecoderLayer(const DecoderConfig& config);

  Matrix forward(const Matrix& queries, const Matrix& memory, Cache* cache = nullptr) const;

  struct Grads {
    Matrix dqueries;
    Matrix dmemory;
  };
  Grads backward(const Matrix& memory, const Cache& cache, const Matrix& dout);

  void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Survival queries cross-attend to the pooled tile tokens; the mean query
/// state goes through a linear head and a per-bin sigmoid.
struct SurvivalDecoder {
  DecoderConfig config;
  Param queries;
  /// Frozen per-feature standardisation of the memory, (m - center) * scale,
  /// fitted once from frozen training features. Identity by default.
  Param input_center;
  Param input_scale;
  LayerNorm memory_norm;
  std::vector<DecoderLayer> layers;
  LayerNorm final_norm;
  Linear head;

  struct Cache {
    std::vector<Eigen::Index> order;  // canonical row order of the memory
    Matrix memory;                    // normalised, canonical order
    LayerNorm::Cache memory_norm;
    std::vector<DecoderLayer::Cache> layers;
    Matrix final_in;
    LayerNorm::Cache final_norm;
    RowVector pooled;                 // tau_hazard
    std::vector<double> sigmoid;      // unclamped head output
  };

  SurvivalDecoder() = default;
  explicit SurvivalDecoder(const DecoderConfig& cfg);

  /// Memory rows are put into a canonical (lexicographic) order first, so
  /// the result does not depend on tile order, bit for bit.
  HazardPrediction decode(const Matrix& memory, Cache* cache = nullptr) const;

  /// Sets the frozen standardisation from feature rows: center = column
  /// means, scale = 1 / max(column std, 1e-8).
  void fit_input_standardization(const Matrix& features);

  /// d(loss)/d(hazards) -> parameter gradients; returns d(loss)/d(memory)
  /// in the caller's row order.
  Matrix backward(const Cache& cache, std::span<const double> dhazards);

  void visit(const std::string& prefix, const ParamVisitor& fn);
};

}  // namespace vptsurv
