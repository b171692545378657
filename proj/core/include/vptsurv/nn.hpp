#pragma once

// Minimal dense layers with hand-written backward passes. Every layer is a
// plain struct of parameters plus stateless forward/backward functions; the
// caller owns the activation caches. Tokens are rows.

#include <Eigen/Core>
#include <functional>
#include <string>
#include <vector>

namespace vptsurv {

class Rng;

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Param {
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Param() = default;
  Param(Eigen::Index rows, Eigen::Index cols, bool is_trainable = true)
      : value(Matrix::Zero(rows, cols)), trainable(is_trainable) {}

  Eigen::Index size() const { return value.size(); }

  /// Gradient accumulator, allocated on first use.
  Matrix& gradient() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
      grad = Matrix::Zero(value.rows(), value.cols());
    }
    return grad;
  }
  void zero_grad() {
    if (grad.size() > 0) grad.setZero();
  }
};

/// Callback used to enumerate parameters with hierarchical names.
using ParamVisitor = std::function<void(const std::string& name, Param& param)>;

/// y = x W^T + b, W is [out x in].
struct Linear {
  Param weight;
  Param bias;

  Linear() = default;
  Linear(Eigen::Index in, Eigen::Index out);

  Eigen::Index in_features() const { return weight.value.cols(); }
  Eigen::Index out_features() const { return weight.value.rows(); }

  /// Uniform(-1/sqrt(in), 1/sqrt(in)) weights and biases.
  void init_uniform(Rng& rng);
  void init_zero();

  Matrix forward(const Matrix& x) const;
  /// Accumulates parameter gradients when trainable; returns dx unless
  /// `need_input_grad` is false (then returns an empty matrix).
  Matrix backward(const Matrix& x, const Matrix& dy, bool need_input_grad = true);

  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct LayerNorm {
  Param gamma;
  Param beta;
  double eps = 1e-6;

  struct Cache {
    Matrix normalized;
    Eigen::VectorXd inv_std;
  };

  LayerNorm() = default;
  explicit LayerNorm(Eigen::Index dim);

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  Matrix backward(const Cache& cache, const Matrix& dy);

  void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Exact GELU, 0.5 x (1 + erf(x / sqrt 2)).
Matrix gelu(const Matrix& x);
Matrix gelu_backward(const Matrix& x, const Matrix& dy);

/// Row-wise softmax, numerically shifted.
Matrix softmax_rows(const Matrix& scores);
/// Given P = softmax(S) and dP, returns dS.
Matrix softmax_rows_backward(const Matrix& probs, const Matrix& dprobs);

/// Parameter-free scaled dot-product attention, softmax(Q K^T / sqrt(d)) V.
struct ScaledDotAttention {
  struct Cache {
    Matrix probs;
  };
  static Matrix forward(const Matrix& q, const Matrix& k, const Matrix& v, Cache* cache = nullptr);
  struct Grads {
    Matrix dq, dk, dv;
  };
  static Grads backward(const Matrix& q, const Matrix& k, const Matrix& v, const Cache& cache,
                        const Matrix& dout);
};

/// Multi-head attention with input and output projections.
struct MultiHeadAttention {
  Linear query, key, value, output;
  int heads = 1;

  struct Cache {
    Matrix q, k, v;                 // projected, [n x d]
    std::vector<Matrix> probs;      // per head
    Matrix context;                 // concatenated heads before output proj
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(Eigen::Index dim, int heads);

  void init_uniform(Rng& rng);

  /// Queries from `x_query`, keys and values from `x_memory`.
  Matrix forward(const Matrix& x_query, const Matrix& x_memory, Cache* cache = nullptr) const;

  struct Grads {
    Matrix dquery;
    Matrix dmemory;
  };
  /// `need_input_grad` false skips dquery/dmemory (left empty).
  Grads backward(const Matrix& x_query, const Matrix& x_memory, const Cache& cache,
                 const Matrix& dout, bool need_input_grad = true);

  void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Linear -> GELU -> Linear.
struct FeedForward {
  Linear fc1, fc2;

  struct Cache {
    Matrix pre;     // fc1 output
    Matrix hidden;  // gelu(pre)
  };

  FeedForward() = default;
  FeedForward(Eigen::Index dim, Eigen::Index hidden);

  void init_uniform(Rng& rng);
  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  Matrix backward(const Matrix& x, const Cache& cache, const Matrix& dy, bool need_input_grad = true);

  void visit(const std::string& prefix, const ParamVisitor& fn);
};

}  // namespace vptsurv
