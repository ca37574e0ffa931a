#pragma once

#include "ivgen/common.hpp"
#include "ivgen/stats.hpp"

#include <span>
#include <string>
#include <vector>

namespace ivgen {

/// Stacked gated-recurrent network with an affine head on the final hidden
/// state of the top layer. All parameters live in one flat vector; the
/// accessors below return views into it.
///
/// Per layer, gate blocks are stacked in the order (reset, update, candidate):
///   r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
///   z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
///   n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
///   h' = (1 - z) * n + z * h
class RecurrentNet {
 public:
  RecurrentNet() = default;
  RecurrentNet(Eigen::Index input_dim, Eigen::Index hidden_dim, Eigen::Index output_dim,
               int n_layers = 3);

  Eigen::Index input_dim() const { return input_dim_; }
  Eigen::Index hidden_dim() const { return hidden_dim_; }
  Eigen::Index output_dim() const { return output_dim_; }
  int n_layers() const { return n_layers_; }
  Eigen::Index n_params() const { return params_.size(); }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;
  using VectorMap = Eigen::Map<Vector>;
  using ConstVectorMap = Eigen::Map<const Vector>;

  struct LayerOffsets {
    Eigen::Index w_ih, w_hh, b_ih, b_hh, in_dim;
  };
  const LayerOffsets& layer(int l) const { return layers_[static_cast<std::size_t>(l)]; }
  Eigen::Index head_w_offset() const { return head_w_; }
  Eigen::Index head_b_offset() const { return head_b_; }

  ConstMatrixMap w_ih(int l) const;
  ConstMatrixMap w_hh(int l) const;
  ConstVectorMap b_ih(int l) const;
  ConstVectorMap b_hh(int l) const;
  ConstMatrixMap head_w() const;
  ConstVectorMap head_b() const;

  /// Named parameter tensors in layout order, as (name, rows, cols, offset).
  struct Tensor {
    std::string name;
    Eigen::Index rows, cols, offset;
  };
  std::vector<Tensor> tensors() const;

  /// Uniform(+-1/sqrt(fan_in)) gates and head, orthogonal candidate
  /// recurrent weights.
  void initialize(Rng& rng);

 private:
  Eigen::Index input_dim_ = 0;
  Eigen::Index hidden_dim_ = 0;
  Eigen::Index output_dim_ = 0;
  int n_layers_ = 0;
  std::vector<LayerOffsets> layers_;
  Eigen::Index head_w_ = 0;
  Eigen::Index head_b_ = 0;
  Vector params_;
};

/// Activations retained by a batched forward pass for the reverse pass.
struct RecurrentTape {
  struct Step {
    Matrix x, h_prev, r, z, n, hn;
  };
  std::vector<std::vector<Step>> layers;  // [layer][step]
  Matrix top;                             // final hidden state of the top layer
};

/// Batched forward pass. `steps[s]` is the (input_dim x N) matrix of inputs
/// at lag position s for N independent windows; hidden states start at zero.
/// Returns the (output_dim x N) head output.
Matrix recurrent_forward_batch(const RecurrentNet& net, std::span<const Matrix> steps,
                               RecurrentTape* tape = nullptr);

/// Gradient of sum(d_out .* output) with respect to every parameter.
Vector recurrent_backward(const RecurrentNet& net, const RecurrentTape& tape, const Matrix& d_out);

/// Single window, one row per time step, oldest first.
Vector recurrent_forward(const RecurrentNet& net, const Matrix& window);

/// Lower-triangle packing used by the diffusion head: row-major over the
/// lower triangle, so position (i, j), j <= i, sits at i(i+1)/2 + j.
constexpr Eigen::Index tril_index(Eigen::Index i, Eigen::Index j) { return i * (i + 1) / 2 + j; }
constexpr Eigen::Index tril_size(Eigen::Index d) { return d * (d + 1) / 2; }
Matrix unpack_tril(const Eigen::Ref<const Vector>& packed, Eigen::Index d);
Vector pack_tril(const Matrix& lower);

struct NsdeModel {
  RecurrentNet drift_net;
  RecurrentNet diff_net;
  Eigen::Index lag = 10;
  double dt = 1.0;
  double eps = 1e-3;
  Vector norm_center;
  Vector norm_scale;

  Eigen::Index state_dim() const { return drift_net.input_dim(); }
  Matrix normalize(const Matrix& raw_rows) const;
  Matrix denormalize(const Matrix& normalized_rows) const;
  void validate() const;
};

struct NsdeShape {
  Eigen::Index state_dim = 0;
  Eigen::Index hidden_dim = 64;
  Eigen::Index lag = 10;
  int n_layers = 3;
  double dt = 1.0;
  double eps = 1e-3;
};

/// Fresh model with initialized networks and identity normalization.
NsdeModel make_model(const NsdeShape& shape, Rng& rng);

/// Median / interquartile-range normalization statistics of a series.
void set_normalization(NsdeModel& model, const Matrix& raw_rows);

/// One-step conditional law b_{t+1} | F_t ~ N(mu, sigma), in normalized units.
struct ConditionalGaussian {
  Vector mu;
  Matrix l_chol;  // lower triangular network output
  Matrix sigma;   // (l_chol l_chol^T + eps I) dt
};

Vector drift(const NsdeModel& model, const Matrix& raw_window);
Matrix diffusion(const NsdeModel& model, const Matrix& raw_window);
ConditionalGaussian cond_step(const NsdeModel& model, const Matrix& raw_window);
/// Same as cond_step for a window already in normalized units.
ConditionalGaussian cond_step_normalized(const NsdeModel& model, const Matrix& window);
ConditionalGaussian make_conditional(const Vector& last, const Vector& nu, const Matrix& l_chol,
                                     double dt, double eps);

double log_density(const ConditionalGaussian& dist, const Vector& x);
Vector sample(const ConditionalGaussian& dist, Rng& rng);

}  // namespace ivgen
