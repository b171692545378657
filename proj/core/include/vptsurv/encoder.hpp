#pragma once

#include <span>
#include <string>
#include <vector>

#include "vptsurv/image.hpp"
#include "vptsurv/nn.hpp"
#include "vptsurv/wsi.hpp"

namespace vptsurv {

/// `paper`: y = LN(FFN(Attn(x) + x)) + x.
/// `standard`: pre-norm ViT block, h = x + Attn(LN1(x)); y = h + FFN(LN2(h)).
enum class LayerForm { paper, standard };

std::string_view to_string(LayerForm form);
LayerForm layer_form_from_string(std::string_view name);

struct EncoderConfig {
  int depth = 4;
  int dim = 64;
  int heads = 4;
  int patch_size = 8;
  int tile_size = 32;
  int down_dim = 8;
  int mlp_ratio = 4;
  LayerForm layer_form = LayerForm::paper;
  std::vector<PromptKind> prompt_sources;  // empty -> self-prompt
  /// Input standardisation applied to every image before patch embedding,
  /// (v - pixel_mean) / pixel_std, as shipped with pretrained backbones.
  double pixel_mean = 0.0;
  double pixel_std = 1.0;

  static EncoderConfig desk();
  static EncoderConfig paper_shape();

  int tokens_per_tile() const {
    const int side = tile_size / patch_size;
    return side * side;
  }
  /// Throws InvalidArgument on inconsistent dimensions.
  void validate() const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Non-overlapping p x p patches -> linear projection -> + fixed 2-D
/// sinusoidal position table.
struct PatchEmbed {
  Linear proj;
  Matrix position;  // [tokens x dim], not a parameter
  int patch_size = 0;
  int tile_size = 0;

  PatchEmbed() = default;
  PatchEmbed(int tile, int patch, int dim);

  /// Patches of (tile - pixel_mean) / pixel_std, projected, plus positions.
  Matrix forward(const Image& tile, double pixel_mean = 0.0, double pixel_std = 1.0) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Fixed sin/cos table: first half of the channels encode the row, the
/// second half the column.
Matrix sinusoidal_position_table(int side, int dim);

/// One frozen backbone block in either form.
struct EncoderLayer {
  LayerForm form = LayerForm::paper;
  MultiHeadAttention attn;
  FeedForward ffn;
  LayerNorm norm1;
  LayerNorm norm2;  // standard form only

  struct Cache {
    MultiHeadAttention::Cache attn;
    FeedForward::Cache ffn;
    LayerNorm::Cache norm1;
    LayerNorm::Cache norm2;
    Matrix attn_in;   // standard: LN1(x)
    Matrix ffn_in;    // paper: Attn(x) + x; standard: LN2(h)
    Matrix ffn_out;   // paper: FFN output before LN
  };

  EncoderLayer() = default;
  EncoderLayer(const EncoderConfig& config);

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  Matrix backward(const Matrix& x, const Cache& cache, const Matrix& dy);

  void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Bottleneck prompt generator:
///   Prompt = up(Att(down(tokens), emb(source), emb(source)) + down(tokens)).
/// Att is single-head scaled dot-product attention with no projections.
struct Adaptor {
  Linear down;
  Linear embed;
  Linear up;

  struct Cache {
    Matrix query;   // down(tokens)
    Matrix keys;    // emb(source), also the values
    Matrix mixed;   // Att(...) + query
    ScaledDotAttention::Cache attention;
  };

  Adaptor() = default;
  Adaptor(int dim, int down_dim);

  Matrix forward(const Matrix& tokens, const Matrix& source, Cache* cache = nullptr) const;

  struct Grads {
    Matrix dtokens;
    Matrix dsource;
  };
  Grads backward(const Matrix& tokens, const Matrix& source, const Cache& cache, const Matrix& dout,
                 bool need_tokens_grad, bool need_source_grad);

  void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Frozen backbone plus one adaptor per layer.
struct VptEncoder {
  EncoderConfig config;
  PatchEmbed embed;
  std::vector<EncoderLayer> layers;
  std::vector<Adaptor> adaptors;

  struct TileCache {
    std::vector<Matrix> tokens;  // tau_0 .. tau_N
    Matrix source;               // embedded prompt sources; empty in self-prompt mode
    std::vector<EncoderLayer::Cache> layer;
    std::vector<Adaptor::Cache> adaptor;
  };

  VptEncoder() = default;
  explicit VptEncoder(const EncoderConfig& cfg);

  /// Prompt-source tokens: patch_embed of every prompt image, concatenated
  /// in the order given. Empty span -> empty matrix.
  Matrix embed_sources(std::span<const Image* const> prompts) const;

  /// tau_{i+1} = L_i(tau_i) + A_i(tau_i, src), src = tau_i when `source` is
  /// empty (self-prompt) and the embedded prompt sources otherwise.
  Matrix vpt_layer(int layer, const Matrix& tokens, const Matrix& source,
                   EncoderLayer::Cache* layer_cache = nullptr,
                   Adaptor::Cache* adaptor_cache = nullptr) const;

  /// Final tokens of one tile, mean-pooled to a single row.
  /// `use_adaptors == false` runs the plain backbone.
  RowVector encode_tile(const Image& tile, std::span<const Image* const> prompts,
                        TileCache* cache = nullptr, bool use_adaptors = true) const;

  /// Backpropagates d(loss)/d(pooled token) into adaptor gradients.
  void backward_tile(const TileCache& cache, const RowVector& dpooled);

  void visit(const std::string& prefix, const ParamVisitor& fn);
};

}  // namespace vptsurv
