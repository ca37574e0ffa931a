#include "ivgen/nsde.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <cmath>
#include <numbers>

namespace ivgen {
namespace {

Matrix sigmoid(const Matrix& a) { return (1.0 + (-a.array()).exp()).inverse().matrix(); }

}  // namespace

RecurrentNet::RecurrentNet(Eigen::Index input_dim, Eigen::Index hidden_dim, Eigen::Index output_dim,
                           int n_layers)
    : input_dim_(input_dim), hidden_dim_(hidden_dim), output_dim_(output_dim), n_layers_(n_layers) {
  if (input_dim <= 0 || hidden_dim <= 0 || output_dim <= 0 || n_layers <= 0) {
    fail(ErrorKind::shape, "recurrent net dimensions must be positive");
  }
  Eigen::Index offset = 0;
  const Eigen::Index g = 3 * hidden_dim;
  for (int l = 0; l < n_layers; ++l) {
    LayerOffsets o{};
    o.in_dim = l == 0 ? input_dim : hidden_dim;
    o.w_ih = offset;
    offset += g * o.in_dim;
    o.w_hh = offset;
    offset += g * hidden_dim;
    o.b_ih = offset;
    offset += g;
    o.b_hh = offset;
    offset += g;
    layers_.push_back(o);
  }
  head_w_ = offset;
  offset += output_dim * hidden_dim;
  head_b_ = offset;
  offset += output_dim;
  params_ = Vector::Zero(offset);
}

RecurrentNet::ConstMatrixMap RecurrentNet::w_ih(int l) const {
  const auto& o = layer(l);
  return {params_.data() + o.w_ih, 3 * hidden_dim_, o.in_dim};
}
RecurrentNet::ConstMatrixMap RecurrentNet::w_hh(int l) const {
  return {params_.data() + layer(l).w_hh, 3 * hidden_dim_, hidden_dim_};
}
RecurrentNet::ConstVectorMap RecurrentNet::b_ih(int l) const {
  return {params_.data() + layer(l).b_ih, 3 * hidden_dim_};
}
RecurrentNet::ConstVectorMap RecurrentNet::b_hh(int l) const {
  return {params_.data() + layer(l).b_hh, 3 * hidden_dim_};
}
RecurrentNet::ConstMatrixMap RecurrentNet::head_w() const {
  return {params_.data() + head_w_, output_dim_, hidden_dim_};
}
RecurrentNet::ConstVectorMap RecurrentNet::head_b() const { return {params_.data() + head_b_, output_dim_}; }

std::vector<RecurrentNet::Tensor> RecurrentNet::tensors() const {
  std::vector<Tensor> out;
  const Eigen::Index g = 3 * hidden_dim_;
  for (int l = 0; l < n_layers_; ++l) {
    const auto& o = layer(l);
    const std::string p = "gru" + std::to_string(l) + ".";
    out.push_back({p + "w_ih", g, o.in_dim, o.w_ih});
    out.push_back({p + "w_hh", g, hidden_dim_, o.w_hh});
    out.push_back({p + "b_ih", g, 1, o.b_ih});
    out.push_back({p + "b_hh", g, 1, o.b_hh});
  }
  out.push_back({"head.w", output_dim_, hidden_dim_, head_w_});
  out.push_back({"head.b", output_dim_, 1, head_b_});
  return out;
}

void RecurrentNet::initialize(Rng& rng) {
  const Eigen::Index h = hidden_dim_;
  auto uniform_fill = [&](Eigen::Index offset, Eigen::Index count, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < count; ++i) params_(offset + i) = u(rng);
  };
  for (int l = 0; l < n_layers_; ++l) {
    const auto& o = layer(l);
    const double in_bound = 1.0 / std::sqrt(static_cast<double>(o.in_dim));
    const double h_bound = 1.0 / std::sqrt(static_cast<double>(h));
    uniform_fill(o.w_ih, 3 * h * o.in_dim, in_bound);
    uniform_fill(o.w_hh, 3 * h * h, h_bound);
    uniform_fill(o.b_ih, 3 * h, h_bound);
    uniform_fill(o.b_hh, 3 * h, h_bound);

    // Candidate block of the recurrent weights: rows [2h, 3h).
    const Matrix gaussian = standard_normals(rng, h * h).reshaped(h, h);
    const Eigen::HouseholderQR<Matrix> qr(gaussian);
    Matrix q = qr.householderQ() * Matrix::Identity(h, h);
    const Vector signs = qr.matrixQR().diagonal().array().sign().matrix();
    for (Eigen::Index j = 0; j < h; ++j) {
      if (signs(j) < 0.0) q.col(j) = -q.col(j);
    }
    Eigen::Map<Matrix> w_hh(params_.data() + o.w_hh, 3 * h, h);
    w_hh.middleRows(2 * h, h) = q;
  }
  const double head_bound = 1.0 / std::sqrt(static_cast<double>(h));
  uniform_fill(head_w_, output_dim_ * h, head_bound);
  uniform_fill(head_b_, output_dim_, head_bound);
}

Matrix recurrent_forward_batch(const RecurrentNet& net, std::span<const Matrix> steps,
                               RecurrentTape* tape) {
  if (steps.empty()) fail(ErrorKind::shape, "recurrent forward needs at least one step");
  const Eigen::Index batch = steps.front().cols();
  const Eigen::Index h = net.hidden_dim();
  for (const auto& s : steps) {
    if (s.rows() != net.input_dim() || s.cols() != batch) {
      fail(ErrorKind::shape, "recurrent forward: input is " + std::to_string(s.rows()) + "x" +
                                 std::to_string(s.cols()) + ", expected " +
                                 std::to_string(net.input_dim()) + " rows");
    }
  }
  if (tape) {
    tape->layers.assign(static_cast<std::size_t>(net.n_layers()), {});
  }

  std::vector<Matrix> inputs(steps.begin(), steps.end());
  Matrix hidden;
  for (int l = 0; l < net.n_layers(); ++l) {
    const auto w_ih = net.w_ih(l);
    const auto w_hh = net.w_hh(l);
    const auto b_ih = net.b_ih(l);
    const auto b_hh = net.b_hh(l);
    hidden = Matrix::Zero(h, batch);
    std::vector<Matrix> outputs;
    outputs.reserve(inputs.size());
    for (auto& x : inputs) {
      Matrix gi = w_ih * x;
      gi.colwise() += b_ih;
      Matrix gh = w_hh * hidden;
      gh.colwise() += b_hh;
      Matrix r = sigmoid(gi.topRows(h) + gh.topRows(h));
      Matrix z = sigmoid(gi.middleRows(h, h) + gh.middleRows(h, h));
      Matrix hn = gh.bottomRows(h);
      Matrix n = (gi.bottomRows(h).array() + r.array() * hn.array()).tanh().matrix();
      Matrix next = ((1.0 - z.array()) * n.array() + z.array() * hidden.array()).matrix();
      if (tape) {
        tape->layers[static_cast<std::size_t>(l)].push_back(
            {std::move(x), hidden, std::move(r), std::move(z), std::move(n), std::move(hn)});
      }
      outputs.push_back(next);
      hidden = std::move(next);
    }
    inputs = std::move(outputs);
  }
  Matrix out = net.head_w() * hidden;
  out.colwise() += net.head_b();
  if (tape) tape->top = std::move(hidden);
  return out;
}

Vector recurrent_backward(const RecurrentNet& net, const RecurrentTape& tape, const Matrix& d_out) {
  const Eigen::Index h = net.hidden_dim();
  Vector grad = Vector::Zero(net.n_params());
  if (d_out.rows() != net.output_dim() || d_out.cols() != tape.top.cols()) {
    fail(ErrorKind::shape, "recurrent backward: output gradient shape mismatch");
  }

  Eigen::Map<Matrix>(grad.data() + net.head_w_offset(), net.output_dim(), h) = d_out * tape.top.transpose();
  Eigen::Map<Vector>(grad.data() + net.head_b_offset(), net.output_dim()) = d_out.rowwise().sum();

  const auto n_steps = tape.layers.front().size();
  // Gradient flowing into each step's hidden output from the layer above.
  std::vector<Matrix> d_hidden(n_steps, Matrix::Zero(h, d_out.cols()));
  d_hidden.back() = net.head_w().transpose() * d_out;

  for (int l = net.n_layers() - 1; l >= 0; --l) {
    const auto& o = net.layer(l);
    const auto& steps = tape.layers[static_cast<std::size_t>(l)];
    const auto w_ih = net.w_ih(l);
    const auto w_hh = net.w_hh(l);
    Eigen::Map<Matrix> g_w_ih(grad.data() + o.w_ih, 3 * h, o.in_dim);
    Eigen::Map<Matrix> g_w_hh(grad.data() + o.w_hh, 3 * h, h);
    Eigen::Map<Vector> g_b_ih(grad.data() + o.b_ih, 3 * h);
    Eigen::Map<Vector> g_b_hh(grad.data() + o.b_hh, 3 * h);

    std::vector<Matrix> d_inputs(n_steps);
    Matrix carry = Matrix::Zero(h, d_out.cols());
    Matrix gi(3 * h, d_out.cols());
    Matrix gh(3 * h, d_out.cols());
    for (std::size_t s = n_steps; s-- > 0;) {
      const auto& st = steps[s];
      const Matrix dh = d_hidden[s] + carry;
      const auto z = st.z.array();
      const auto n = st.n.array();
      const auto r = st.r.array();
      const Eigen::ArrayXXd dn = dh.array() * (1.0 - z);
      const Eigen::ArrayXXd dz = dh.array() * (st.h_prev.array() - n);
      const Eigen::ArrayXXd da_n = dn * (1.0 - n * n);
      const Eigen::ArrayXXd da_r = da_n * st.hn.array() * r * (1.0 - r);
      const Eigen::ArrayXXd da_z = dz * z * (1.0 - z);
      gi.topRows(h) = da_r.matrix();
      gi.middleRows(h, h) = da_z.matrix();
      gi.bottomRows(h) = da_n.matrix();
      gh.topRows(h) = da_r.matrix();
      gh.middleRows(h, h) = da_z.matrix();
      gh.bottomRows(h) = (da_n * r).matrix();

      g_w_ih.noalias() += gi * st.x.transpose();
      g_b_ih += gi.rowwise().sum();
      g_w_hh.noalias() += gh * st.h_prev.transpose();
      g_b_hh += gh.rowwise().sum();
      carry = (dh.array() * z).matrix();
      carry.noalias() += w_hh.transpose() * gh;
      if (l > 0) d_inputs[s] = w_ih.transpose() * gi;
    }
    if (l > 0) d_hidden = std::move(d_inputs);
  }
  return grad;
}

Vector recurrent_forward(const RecurrentNet& net, const Matrix& window) {
  if (window.cols() != net.input_dim() || window.rows() == 0) {
    fail(ErrorKind::shape, "window must have " + std::to_string(net.input_dim()) + " columns");
  }
  std::vector<Matrix> steps;
  steps.reserve(static_cast<std::size_t>(window.rows()));
  for (Eigen::Index s = 0; s < window.rows(); ++s) steps.emplace_back(window.row(s).transpose());
  return recurrent_forward_batch(net, steps).col(0);
}

Matrix unpack_tril(const Eigen::Ref<const Vector>& packed, Eigen::Index d) {
  if (packed.size() != tril_size(d)) fail(ErrorKind::shape, "packed triangle has the wrong length");
  Matrix lower = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) lower(i, j) = packed(tril_index(i, j));
  }
  return lower;
}

Vector pack_tril(const Matrix& lower) {
  const Eigen::Index d = lower.rows();
  Vector packed(tril_size(d));
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) packed(tril_index(i, j)) = lower(i, j);
  }
  return packed;
}

Matrix NsdeModel::normalize(const Matrix& raw) const {
  return ((raw.rowwise() - norm_center.transpose()).array().rowwise() / norm_scale.transpose().array()).matrix();
}

Matrix NsdeModel::denormalize(const Matrix& x) const {
  return ((x.array().rowwise() * norm_scale.transpose().array()).rowwise() + norm_center.transpose().array()).matrix();
}

void NsdeModel::validate() const {
  const Eigen::Index d = state_dim();
  if (!(eps > 0.0)) fail(ErrorKind::domain, "jitter eps must be positive");
  if (!(dt > 0.0)) fail(ErrorKind::domain, "Euler step dt must be positive");
  if (lag < 1) fail(ErrorKind::domain, "lag must be at least 1");
  if (drift_net.output_dim() != d || diff_net.input_dim() != d || diff_net.output_dim() != tril_size(d)) {
    fail(ErrorKind::shape, "drift/diffusion network dimensions are inconsistent");
  }
  if (norm_center.size() != d || norm_scale.size() != d) {
    fail(ErrorKind::shape, "normalization statistics have the wrong length");
  }
  if (!(norm_scale.array() > 0.0).all()) fail(ErrorKind::domain, "normalization scale must be positive");
}

NsdeModel make_model(const NsdeShape& shape, Rng& rng) {
  NsdeModel model;
  const Eigen::Index d = shape.state_dim;
  model.drift_net = RecurrentNet(d, shape.hidden_dim, d, shape.n_layers);
  model.diff_net = RecurrentNet(d, shape.hidden_dim, tril_size(d), shape.n_layers);
  model.drift_net.initialize(rng);
  model.diff_net.initialize(rng);
  model.lag = shape.lag;
  model.dt = shape.dt;
  model.eps = shape.eps;
  model.norm_center = Vector::Zero(d);
  model.norm_scale = Vector::Ones(d);
  model.validate();
  return model;
}

void set_normalization(NsdeModel& model, const Matrix& raw) {
  const Eigen::Index d = raw.cols();
  model.norm_center.resize(d);
  model.norm_scale.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    std::vector<double> col(raw.col(j).data(), raw.col(j).data() + raw.rows());
    const auto s = median_iqr(std::move(col));
    if (!(s.iqr > 0.0)) {
      fail(ErrorKind::ill_posed, "feature " + std::to_string(j) + " has zero interquartile range");
    }
    model.norm_center(j) = s.median;
    model.norm_scale(j) = s.iqr;
  }
}

namespace {

Matrix last_rows(const NsdeModel& model, const Matrix& window) {
  if (window.cols() != model.state_dim()) {
    fail(ErrorKind::shape, "window has " + std::to_string(window.cols()) + " columns, model state has " +
                               std::to_string(model.state_dim()));
  }
  if (window.rows() < model.lag) {
    fail(ErrorKind::shape, "window has " + std::to_string(window.rows()) + " rows, lag is " +
                               std::to_string(model.lag));
  }
  return window.bottomRows(model.lag);
}

}  // namespace

Vector drift(const NsdeModel& model, const Matrix& raw_window) {
  return recurrent_forward(model.drift_net, model.normalize(last_rows(model, raw_window)));
}

Matrix diffusion(const NsdeModel& model, const Matrix& raw_window) {
  const Vector packed = recurrent_forward(model.diff_net, model.normalize(last_rows(model, raw_window)));
  return unpack_tril(packed, model.state_dim());
}

ConditionalGaussian make_conditional(const Vector& last, const Vector& nu, const Matrix& l_chol,
                                     double dt, double eps) {
  ConditionalGaussian out;
  out.mu = last + nu * dt;
  out.l_chol = l_chol;
  out.sigma = (l_chol * l_chol.transpose() + eps * Matrix::Identity(l_chol.rows(), l_chol.rows())) * dt;
  return out;
}

ConditionalGaussian cond_step_normalized(const NsdeModel& model, const Matrix& window) {
  const Matrix w = last_rows(model, window);
  const Vector nu = recurrent_forward(model.drift_net, w);
  const Matrix l = unpack_tril(recurrent_forward(model.diff_net, w), model.state_dim());
  return make_conditional(w.row(w.rows() - 1).transpose(), nu, l, model.dt, model.eps);
}

ConditionalGaussian cond_step(const NsdeModel& model, const Matrix& raw_window) {
  return cond_step_normalized(model, model.normalize(last_rows(model, raw_window)));
}

double log_density(const ConditionalGaussian& dist, const Vector& x) {
  const Eigen::LLT<Matrix> llt(dist.sigma);
  if (llt.info() != Eigen::Success) fail(ErrorKind::numerical, "covariance is not positive definite");
  const Matrix& l = llt.matrixLLT();
  const Vector r = x - dist.mu;
  const Vector y = llt.matrixL().solve(r);
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  const double d = static_cast<double>(x.size());
  return -0.5 * (d * std::log(2.0 * std::numbers::pi) + log_det + y.squaredNorm());
}

Vector sample(const ConditionalGaussian& dist, Rng& rng) {
  const Eigen::LLT<Matrix> llt(dist.sigma);
  if (llt.info() != Eigen::Success) fail(ErrorKind::numerical, "covariance is not positive definite");
  return dist.mu + llt.matrixL() * standard_normals(rng, dist.mu.size());
}

}  // namespace ivgen
