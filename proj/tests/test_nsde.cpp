#include <doctest.h>

#include "ivgen/nsde.hpp"
#include "oracles.hpp"

using namespace ivgen;

namespace {

// Scalar-loop reference for the stacked recurrent net, in long double.
oracle::LVector reference_forward(const RecurrentNet& net, const Matrix& window) {
  const Eigen::Index h = net.hidden_dim();
  std::vector<oracle::LVector> inputs;
  for (Eigen::Index s = 0; s < window.rows(); ++s) inputs.push_back(window.row(s).transpose().cast<long double>());
  auto sig = [](long double a) { return 1.0L / (1.0L + std::exp(-a)); };
  for (int l = 0; l < net.n_layers(); ++l) {
    const auto wi = net.w_ih(l);
    const auto wh = net.w_hh(l);
    const auto bi = net.b_ih(l);
    const auto bh = net.b_hh(l);
    oracle::LVector state = oracle::LVector::Zero(h);
    std::vector<oracle::LVector> outputs;
    for (const auto& x : inputs) {
      oracle::LVector next(h);
      for (Eigen::Index k = 0; k < h; ++k) {
        long double gi[3], gh[3];
        for (int g = 0; g < 3; ++g) {
          const Eigen::Index row = g * h + k;
          gi[g] = bi(row);
          gh[g] = bh(row);
          for (Eigen::Index c = 0; c < x.size(); ++c) gi[g] += static_cast<long double>(wi(row, c)) * x(c);
          for (Eigen::Index c = 0; c < h; ++c) gh[g] += static_cast<long double>(wh(row, c)) * state(c);
        }
        const long double r = sig(gi[0] + gh[0]);
        const long double z = sig(gi[1] + gh[1]);
        const long double n = std::tanh(gi[2] + r * gh[2]);
        next(k) = (1.0L - z) * n + z * state(k);
      }
      state = next;
      outputs.push_back(state);
    }
    inputs = outputs;
  }
  oracle::LVector out(net.output_dim());
  for (Eigen::Index o = 0; o < net.output_dim(); ++o) {
    out(o) = net.head_b()(o);
    for (Eigen::Index k = 0; k < h; ++k) out(o) += static_cast<long double>(net.head_w()(o, k)) * inputs.back()(k);
  }
  return out;
}

NsdeModel random_model(Eigen::Index d, Eigen::Index hidden, Eigen::Index lag, std::uint64_t seed) {
  Rng rng(seed);
  NsdeShape shape;
  shape.state_dim = d;
  shape.hidden_dim = hidden;
  shape.lag = lag;
  return make_model(shape, rng);
}

Matrix random_window(Eigen::Index rows, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  return standard_normals(rng, rows * d).reshaped(rows, d);
}

}  // namespace

TEST_CASE("parameter count matches the declared dimensions") {
  const RecurrentNet net(5, 7, 15, 3);
  const Eigen::Index g = 3 * 7;
  CHECK(net.n_params() == (g * 5 + g * 7 + 2 * g) + 2 * (g * 7 + g * 7 + 2 * g) + 15 * 7 + 15);
  Eigen::Index total = 0;
  for (const auto& t : net.tensors()) total += t.rows * t.cols;
  CHECK(total == net.n_params());
  CHECK_THROWS_AS(RecurrentNet(0, 4, 1), Error);
}

TEST_CASE("zero network outputs the head bias") {
  RecurrentNet net(2, 4, 3);
  CHECK(recurrent_forward(net, random_window(5, 2, 1)).isZero(0.0));
  net.params().tail(3) << 1.0, -2.0, 0.5;
  CHECK(recurrent_forward(net, random_window(5, 2, 1)) == Eigen::Vector3d(1.0, -2.0, 0.5));
}

TEST_CASE("forward matches the scalar reference") {
  Rng rng(3);
  RecurrentNet net(2, 4, 3);
  net.initialize(rng);
  net.params() *= 1.7;  // push the gates away from their linear regime
  const Matrix window = random_window(3, 2, 4);
  const Vector got = recurrent_forward(net, window);
  const oracle::LVector want = reference_forward(net, window);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(std::abs(got(i) - static_cast<double>(want(i))) < 1e-12);

  // The batched pass agrees column by column.
  const Matrix other = random_window(3, 2, 5);
  std::vector<Matrix> steps;
  for (Eigen::Index s = 0; s < 3; ++s) {
    Matrix m(2, 2);
    m.col(0) = window.row(s).transpose();
    m.col(1) = other.row(s).transpose();
    steps.push_back(m);
  }
  const Matrix batch = recurrent_forward_batch(net, steps);
  CHECK((batch.col(0) - got).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((batch.col(1) - recurrent_forward(net, other)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("orthogonal candidate recurrent weights at initialization") {
  Rng rng(8);
  RecurrentNet net(3, 6, 2);
  net.initialize(rng);
  for (int l = 0; l < 3; ++l) {
    const Matrix q = net.w_hh(l).middleRows(12, 6);
    CHECK((q.transpose() * q - Matrix::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(net.w_ih(l).cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(static_cast<double>(net.layer(l).in_dim)));
  }
}

TEST_CASE("lower triangle packing") {
  Vector packed(6);
  packed << 1, 2, 3, 4, 5, 6;
  const Matrix l = unpack_tril(packed, 3);
  Matrix want(3, 3);
  want << 1, 0, 0, 2, 3, 0, 4, 5, 6;
  CHECK(l == want);
  CHECK(pack_tril(l) == packed);
  CHECK(tril_index(2, 1) == 4);
  CHECK(tril_size(36) == 666);
  CHECK_THROWS_AS(unpack_tril(packed, 4), Error);
}

TEST_CASE("zero nets give a jitter-only conditional") {
  NsdeShape shape;
  shape.state_dim = 3;
  shape.hidden_dim = 4;
  shape.lag = 2;
  Rng rng(0);
  auto model = make_model(shape, rng);
  model.drift_net.params().setZero();
  model.diff_net.params().setZero();
  const Matrix w = random_window(2, 3, 6);
  const auto c = cond_step(model, w);
  CHECK(c.mu == Vector(w.row(1).transpose()));
  CHECK((c.sigma - 1e-3 * Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-18);
  CHECK(drift(model, w).isZero(0.0));
  CHECK(diffusion(model, w).isZero(0.0));
}

TEST_CASE("windowing, normalization and dt linearity") {
  auto model = random_model(3, 5, 4, 11);
  const Matrix long_window = random_window(9, 3, 12);
  const auto a = cond_step(model, long_window);
  const auto b = cond_step(model, long_window.bottomRows(4));
  CHECK(a.mu == b.mu);
  CHECK(a.sigma == b.sigma);
  CHECK_THROWS_AS(cond_step(model, long_window.topRows(3)), Error);
  CHECK_THROWS_AS(cond_step(model, random_window(4, 2, 1)), Error);

  // Raw input with non-trivial statistics equals the normalized window with identity statistics.
  model.norm_center = Eigen::Vector3d(1.0, -2.0, 0.5);
  model.norm_scale = Eigen::Vector3d(2.0, 0.5, 3.0);
  const Matrix raw = model.denormalize(long_window.bottomRows(4));
  const Vector nu = drift(model, raw);
  auto identity = model;
  identity.norm_center.setZero();
  identity.norm_scale.setOnes();
  CHECK((nu - drift(identity, long_window.bottomRows(4))).cwiseAbs().maxCoeff() < 1e-14);

  const auto c1 = cond_step(model, raw);
  model.dt = 2.0;
  const auto c2 = cond_step(model, raw);
  CHECK(((c2.mu - c1.mu) - nu).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((c2.sigma - 2.0 * c1.sigma).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("covariance floor over random parameter draws") {
  Rng rng(21);
  for (int draw = 0; draw < 1000; ++draw) {
    NsdeShape shape;
    shape.state_dim = 3;
    shape.hidden_dim = 3;
    shape.lag = 2;
    shape.n_layers = 1;
    shape.dt = 0.5;
    auto model = make_model(shape, rng);
    model.diff_net.params() *= 3.0;
    const auto c = cond_step_normalized(model, standard_normals(rng, 6).reshaped(2, 3));
    CHECK(c.sigma.isApprox(c.sigma.transpose(), 0.0));
    const Eigen::SelfAdjointEigenSolver<Matrix> es(c.sigma);
    CHECK(es.eigenvalues().minCoeff() >= 1e-3 * 0.5 * (1.0 - 1e-9));
  }
}

TEST_CASE("drift gradient against finite differences") {
  auto model = random_model(3, 6, 4, 31);
  const Matrix w = random_window(4, 3, 32);
  std::vector<Matrix> steps;
  for (Eigen::Index s = 0; s < 4; ++s) steps.emplace_back(w.row(s).transpose());
  RecurrentTape tape;
  const Matrix nu = recurrent_forward_batch(model.drift_net, steps, &tape);
  const Vector grad = recurrent_backward(model.drift_net, tape, 2.0 * nu);
  auto& p = model.drift_net.params();
  for (Eigen::Index i = 0; i < p.size(); i += 7) {
    const double keep = p(i);
    p(i) = keep + 1e-6;
    const double up = drift(model, w).squaredNorm();
    p(i) = keep - 1e-6;
    const double down = drift(model, w).squaredNorm();
    p(i) = keep;
    const double fd = (up - down) / 2e-6;
    CHECK(std::abs(fd - grad(i)) <= 1e-5 * std::max(std::abs(grad(i)), 1e-1));
  }
}

TEST_CASE("drift is Lipschitz in the window for bounded parameters") {
  const auto model = random_model(4, 8, 5, 41);
  Rng rng(42);
  double worst = 0.0;
  for (int i = 0; i < 500; ++i) {
    const Matrix a = standard_normals(rng, 20).reshaped(5, 4);
    const Matrix b = a + 0.1 * standard_normals(rng, 20).reshaped(5, 4);
    worst = std::max(worst, (drift(model, a) - drift(model, b)).norm() / (a - b).norm());
  }
  CHECK(std::isfinite(worst));
  CHECK(worst < 10.0);
}

TEST_CASE("log density") {
  ConditionalGaussian one{Vector::Zero(1), Matrix::Zero(1, 1), Matrix::Identity(1, 1)};
  CHECK(log_density(one, Vector::Zero(1)) == doctest::Approx(-0.918938533204673).epsilon(1e-14));

  ConditionalGaussian diag{Eigen::Vector2d(0.5, -1.0), Matrix::Zero(2, 2), Matrix::Zero(2, 2)};
  diag.sigma.diagonal() << 0.3, 2.0;
  const Eigen::Vector2d x(0.1, 0.7);
  auto uni = [](double m, double v, double y) { return -0.5 * std::log(2 * M_PI * v) - 0.5 * (y - m) * (y - m) / v; };
  CHECK(log_density(diag, x) == doctest::Approx(uni(0.5, 0.3, 0.1) + uni(-1.0, 2.0, 0.7)).epsilon(1e-14));

  Rng rng(51);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = standard_normals(rng, 16).reshaped(4, 4);
    ConditionalGaussian g{standard_normals(rng, 4), Matrix::Zero(4, 4), a * a.transpose() + 0.1 * Matrix::Identity(4, 4)};
    const Vector y = standard_normals(rng, 4);
    const oracle::LMatrix s = g.sigma.cast<long double>();
    const oracle::LVector r = (y - g.mu).cast<long double>();
    const long double det = s.determinant();
    const long double quad = r.dot(s.inverse() * r);
    const long double want = -0.5L * (4.0L * std::log(2.0L * std::numbers::pi_v<long double>) + std::log(det) + quad);
    CHECK(std::abs(log_density(g, y) - static_cast<double>(want)) < 1e-10);
  }
}

TEST_CASE("sampling") {
  ConditionalGaussian tiny{Eigen::Vector2d(1.0, 2.0), Matrix::Zero(2, 2), 1e-30 * Matrix::Identity(2, 2)};
  Rng rng(1);
  CHECK((sample(tiny, rng) - tiny.mu).cwiseAbs().maxCoeff() < 1e-14);

  Matrix s(2, 2);
  s << 1.0, 0.6, 0.6, 2.0;
  ConditionalGaussian g{Eigen::Vector2d(0.0, 1.0), Matrix::Zero(2, 2), s};
  Rng a(7), b(7);
  CHECK(sample(g, a) == sample(g, b));

  const int n = 100000;
  Matrix draws(n, 2);
  for (int i = 0; i < n; ++i) draws.row(i) = sample(g, a).transpose();
  const Matrix c = draws.rowwise() - draws.colwise().mean();
  const Matrix cov = c.transpose() * c / (n - 1.0);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double se = std::sqrt((s(i, i) * s(j, j) + s(i, j) * s(i, j)) / n);
      CHECK(std::abs(cov(i, j) - s(i, j)) < 3.0 * se);
    }
  }
}

TEST_CASE("normalization statistics") {
  NsdeShape shape;
  shape.state_dim = 2;
  shape.hidden_dim = 2;
  shape.lag = 1;
  Rng rng(0);
  auto model = make_model(shape, rng);
  Matrix raw(5, 2);
  raw << 1, 10, 2, 10, 3, 10, 4, 10, 100, 10;
  CHECK_THROWS_AS(set_normalization(model, raw), Error);
  raw.col(1) << 0, 5, 10, 15, 20;
  set_normalization(model, raw);
  CHECK(model.norm_center(0) == 3.0);
  CHECK(model.norm_scale(0) == 2.0);
  CHECK((model.denormalize(model.normalize(raw)) - raw).cwiseAbs().maxCoeff() < 1e-12);
}
