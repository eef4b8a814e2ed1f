#include "qbi/kernels.hpp"
#include "qbi/target.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace qbi;

namespace {

DomainBox wide(int dim, double half = 1e6) {
  return DomainBox{Vector::Constant(dim, -half), Vector::Constant(dim, half)};
}

// U = x^4/4 + y^2/2 + 0.3 x y
bool quartic_grad(const Vector& th, Vector& g) {
  g.resize(2);
  g[0] = th[0] * th[0] * th[0] + 0.3 * th[1];
  g[1] = th[1] + 0.3 * th[0];
  return true;
}

Dataset precession_data(double omega, int n, double dt, std::uint64_t seed) {
  Rng rng = make_stream(seed);
  const auto spec = ModelSpec::precession(0.0, 10.0);
  Dataset data;
  for (int k = 1; k <= n; ++k) {
    Controls c;
    c.t = dt * k;
    data.push_back(simulate_outcome(spec, Vector::Constant(1, omega), c, rng));
  }
  return data;
}

}  // namespace

TEST_CASE("leapfrog free particle") {
  auto zero = [](const Vector& th, Vector& g) {
    g = Vector::Zero(th.size());
    return true;
  };
  const auto r = leapfrog(Vector::Zero(1), Vector::Ones(1), 0.1, 10, Matrix::Identity(1, 1), wide(1), zero);
  CHECK(r.theta[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(r.momentum[0] == doctest::Approx(1.0));
  CHECK_FALSE(r.divergent);
}

TEST_CASE("leapfrog energy on a harmonic potential") {
  auto harmonic = [](const Vector& th, Vector& g) {
    g = th;
    return true;
  };
  const double eps = 0.01;
  Vector th = Vector::Ones(1), p = Vector::Zero(1);
  const double h0 = 0.5;
  double max_dh = 0.0, max_dev = 0.0;
  for (int k = 1; k <= 10'000; ++k) {
    auto r = leapfrog(th, p, eps, 1, Matrix::Identity(1, 1), wide(1), harmonic);
    th = r.theta;
    p = r.momentum;
    max_dh = std::max(max_dh, std::abs(0.5 * th[0] * th[0] + 0.5 * p[0] * p[0] - h0));
    max_dev = std::max(max_dev, std::abs(th[0] - std::cos(eps * k)));
  }
  CHECK(max_dh < 1e-3);
  CHECK(max_dev < 1e-3);  // phase drift of the integrator is O(eps^2 t)
}

TEST_CASE("leapfrog reversibility") {
  Matrix minv(2, 2);
  minv << 1.3, 0.2, 0.2, 0.7;
  Vector th0(2), p0(2);
  th0 << 0.4, -0.2;
  p0 << 0.9, 0.35;
  for (double half : {1e6, 0.6}) {  // free space, then a box that forces reflections
    const auto box = wide(2, half);
    const auto f = leapfrog(th0, p0, 0.05, 60, minv, box, quartic_grad);
    const auto b = leapfrog(f.theta, -f.momentum, 0.05, 60, minv, box, quartic_grad);
    CAPTURE(half);
    CHECK_FALSE(f.divergent);
    if (half < 1) CHECK(f.reflections > 0);
    CHECK((b.theta - th0).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((b.momentum + p0).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("leapfrog map has unit Jacobian") {
  Matrix minv = Matrix::Identity(2, 2);
  minv(0, 0) = 1.5;
  Vector x0(4);
  x0 << 0.4, -0.2, 0.9, 0.35;
  for (double half : {1e6, 0.6}) {
    const auto box = wide(2, half);
    auto map = [&](const Vector& x) {
      const auto r = leapfrog(x.head(2), x.tail(2), 0.05, 30, minv, box, quartic_grad);
      Vector y(4);
      y << r.theta, r.momentum;
      return y;
    };
    Matrix jac(4, 4);
    const double h = 1e-6;
    for (int k = 0; k < 4; ++k) {
      Vector a = x0, b = x0;
      a[k] += h;
      b[k] -= h;
      jac.col(k) = (map(a) - map(b)) / (2 * h);
    }
    CAPTURE(half);
    CHECK(std::abs(jac.determinant() - 1.0) < 1e-8);
  }
}

TEST_CASE("reflection keeps the particle inside and mirrors the momentum") {
  DomainBox box{Vector::Zero(1), Vector::Ones(1)};
  Vector th = Vector::Constant(1, 0.9), p = Vector::Constant(1, 1.0);
  int refl = 0;
  REQUIRE(detail::advance_position(th, p, 0.3, Matrix::Identity(1, 1), box, refl));
  CHECK(th[0] == doctest::Approx(0.8));
  CHECK(p[0] == doctest::Approx(-1.0));
  CHECK(refl == 1);
}

TEST_CASE("metropolis and HMC acceptance formulas") {
  CHECK(metropolis_accept_prob({-1.0, false}, {-1.0, false}) == 1.0);
  CHECK(metropolis_accept_prob({-1.0, false}, {kLogLikelihoodFloor, true}) == 0.0);
  CHECK(hmc_accept_prob(1.0, 1.0 + std::log(2.0)) == doctest::Approx(0.5));
  CHECK(hmc_accept_prob(2.0, 1.0) == 1.0);
  CHECK(hmc_accept_prob(1.0, std::numeric_limits<double>::infinity()) == 0.0);
}

TEST_CASE("random walk Metropolis") {
  SUBCASE("flat target accepts every in-domain proposal") {
    FunctionTarget flat(wide(1), [](const Vector&) { return 0.0; },
                        [](const Vector& x) { return Vector::Zero(x.size()); });
    Rng rng = make_stream(1);
    auto s = make_state(flat, Vector::Zero(1));
    for (int i = 0; i < 1000; ++i) CHECK(rwm_step(s, flat, Matrix::Identity(1, 1), rng).accepted);
  }
  SUBCASE("proposals outside the domain are rejected") {
    FunctionTarget flat(DomainBox{Vector::Zero(1), Vector::Ones(1)}, [](const Vector&) { return 0.0; },
                        [](const Vector& x) { return Vector::Zero(x.size()); });
    Rng rng = make_stream(2);
    auto s = make_state(flat, Vector::Constant(1, 0.5));
    int accepted = 0;
    for (int i = 0; i < 1000; ++i) {
      const auto o = rwm_step(s, flat, Matrix::Constant(1, 1, 1e3), rng);
      accepted += o.accepted;
      CHECK(flat.domain().contains(s.theta));
    }
    CHECK(accepted < 10);
  }
  SUBCASE("long chain on a unit normal") {
    FunctionTarget normal(wide(1), [](const Vector& x) { return -0.5 * x.squaredNorm(); },
                          [](const Vector& x) { return Vector(-x); });
    Rng rng = make_stream(3);
    auto s = make_state(normal, Vector::Zero(1));
    const Matrix factor = rwm_proposal_factor(Matrix::Identity(1, 1), 2.4);
    const int n = 100'000;
    double sum = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
      rwm_step(s, normal, factor, rng);
      sum += s.theta[0];
      sq += s.theta[0] * s.theta[0];
    }
    const double mean = sum / n;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(sq / n - mean * mean - 1.0) < 0.05);
  }
  SUBCASE("scale adaptation moves toward the target rate") {
    RwmConfig cfg;
    CHECK(adapt_rwm_scale(1.0, 0.9, cfg) > 1.0);
    CHECK(adapt_rwm_scale(1.0, 0.1, cfg) < 1.0);
  }
}

TEST_CASE("HMC") {
  SUBCASE("tiny step size accepts almost surely") {
    FunctionTarget normal(wide(1), [](const Vector& x) { return -0.5 * x.squaredNorm(); },
                          [](const Vector& x) { return Vector(-x); });
    Rng rng = make_stream(4);
    auto s = make_state(normal, Vector::Constant(1, 0.3));
    for (int i = 0; i < 100; ++i) {
      const auto o = hmc_step(s, normal, MassMatrix::identity(1), {1e-4, 10}, rng);
      CHECK(o.accept_prob > 0.999);
    }
  }
  SUBCASE("precession posterior with a covariance-scaled mass") {
    const auto spec = ModelSpec::precession(0.0, 10.0);
    const auto data = precession_data(0.5, 20, 0.08, 17);
    DataTarget target(spec, data);
    // grid posterior for the starting point and the mass
    const int n = 200'000;
    std::vector<double> logp(n);
    double mx = -1e300;
    for (int i = 0; i < n; ++i) {
      const double w = 10.0 * (i + 0.5) / n;
      logp[i] = target.log_density(Vector::Constant(1, w)).value;
      mx = std::max(mx, logp[i]);
    }
    double z = 0, m1 = 0, m2 = 0;
    for (int i = 0; i < n; ++i) {
      const double w = 10.0 * (i + 0.5) / n, p = std::exp(logp[i] - mx);
      z += p;
      m1 += p * w;
      m2 += p * w * w;
    }
    m1 /= z;
    const double var = m2 / z - m1 * m1;
    const auto mass = MassMatrix::from_covariance(Matrix::Constant(1, 1, var));
    Rng rng = make_stream(5);
    auto s = make_state(target, Vector::Constant(1, m1));
    double acc = 0;
    for (int i = 0; i < 1000; ++i) acc += hmc_step(s, target, mass, {0.1, 10}, rng).accept_prob;
    CHECK(acc / 1000 >= 0.6);
  }
}

TEST_CASE("hybrid screen") {
  FunctionTarget normal(wide(1), [](const Vector& x) { return -0.5 * x.squaredNorm(); },
                        [](const Vector& x) { return Vector(-x); });
  Rng rng = make_stream(6);
  auto s = make_state(normal, Vector::Zero(1));
  const Matrix factor = Matrix::Identity(1, 1);
  const auto a = hybrid_step(s, normal, MassMatrix::identity(1), {0.1, 10}, factor, {}, rng, 0.5);
  CHECK_FALSE(a.rwm_applied);
  const auto b = hybrid_step(s, normal, MassMatrix::identity(1), {0.1, 10}, factor, {}, rng, 0.0);
  CHECK(b.rwm_applied);
}

TEST_CASE("Liu-West resampling") {
  DomainBox box = wide(1);
  Rng rng = make_stream(7);
  SUBCASE("a = 1 is a bootstrap") {
    Matrix x(1, 5);
    x << 1, 2, 3, 4, 5;
    auto e = WeightedEnsemble::uniform(x);
    const auto out = liu_west_resample(e, box, {1.0, 100}, rng);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double v = out.particles(0, i);
      CHECK((v == 1 || v == 2 || v == 3 || v == 4 || v == 5));
    }
  }
  SUBCASE("a = 0 draws from the fitted Gaussian") {
    const int n = 20'000;
    Matrix x(1, n);
    for (int i = 0; i < n; ++i) x(0, i) = i % 2 ? 1.0 : 2.0;  // mean 1.5, variance 0.25
    const auto out = liu_west_resample(WeightedEnsemble::uniform(x), box, {0.0, 100}, rng);
    const auto m = moments(out);
    CHECK(m.mean[0] == doctest::Approx(1.5).epsilon(0.01));
    CHECK(m.covariance(0, 0) == doctest::Approx(0.25).epsilon(0.05));
    int exact = 0;
    for (int i = 0; i < n; ++i) exact += out.particles(0, i) == 1.0 || out.particles(0, i) == 2.0;
    CHECK(exact == 0);
  }
  SUBCASE("a = 0.98 preserves the first two moments") {
    const int n = 10'000;
    Matrix x(1, n);
    for (int i = 0; i < n; ++i) x(0, i) = standard_normal(rng);
    const auto in = moments(WeightedEnsemble::uniform(x));
    const auto out = moments(liu_west_resample(WeightedEnsemble::uniform(x), box, {0.98, 100}, rng));
    CHECK(std::abs(out.mean[0] - in.mean[0]) < 4.0 / std::sqrt(n));
    CHECK(std::abs(out.covariance(0, 0) / in.covariance(0, 0) - 1.0) < 0.05);
  }
}

TEST_CASE("SGHMC reductions") {
  SUBCASE("no friction, full batch is plain leapfrog") {
    const auto spec = ModelSpec::precession(0.0, 10.0);
    const auto data = precession_data(0.5, 20, 0.08, 21);
    DataTarget target(spec, data);
    SghmcConfig cfg;
    cfg.epsilon = 0.01;
    cfg.steps = 25;
    cfg.batch = data.size();
    cfg.friction = false;
    const auto mass = MassMatrix::from_mass(Matrix::Constant(1, 1, 2.0));
    Vector theta = Vector::Constant(1, 0.6);
    Rng a = make_stream(9), b = make_stream(9);
    sghmc_step(theta, spec, data, 1.0, mass, cfg, a);
    const Vector p0 = mass.chol * Vector::Constant(1, standard_normal(b));
    auto grad_u = [&](const Vector& th, Vector& g) {
      if (!target.gradient(th, g)) return false;
      g = -g;
      return true;
    };
    const auto lf = leapfrog(Vector::Constant(1, 0.6), p0, cfg.epsilon, cfg.steps, mass.inverse, spec.domain, grad_u);
    CHECK(std::abs(theta[0] - lf.theta[0]) < 1e-10);
  }
  SUBCASE("flat potential, friction without noise decays momentum geometrically") {
    auto spec = ModelSpec::precession(-1e6, 1e6);
    const Dataset none;
    SghmcConfig cfg;
    cfg.epsilon = 0.1;
    cfg.steps = 20;
    cfg.friction = true;
    cfg.friction_offset = 0.5;
    cfg.inject_noise = false;
    const double m = 2.0;
    const auto mass = MassMatrix::from_mass(Matrix::Constant(1, 1, m));
    Vector theta = Vector::Zero(1);
    Rng a = make_stream(10), b = make_stream(10);
    sghmc_step(theta, spec, none, 1.0, mass, cfg, a);
    const double p0 = std::sqrt(m) * standard_normal(b);
    const double r = 1.0 / (1.0 + cfg.epsilon * cfg.friction_offset / m);
    const double expected = cfg.epsilon * p0 / m * (1.0 - std::pow(r, cfg.steps)) / (1.0 - r);
    CHECK(theta[0] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("Gaussian rejection filtering") {
  Rng rng = make_stream(12);
  Moments prior;
  prior.mean = Vector::Constant(1, 5.0);
  prior.covariance = Matrix::Constant(1, 1, 1.0);
  prior.std = Vector::Ones(1);
  const auto t1 = ModelSpec::t1_decay(0.0, 100.0);
  Datum d;
  d.outcome = 1;
  SUBCASE("uninformative datum keeps the prior") {
    d.controls.t = 0.0;  // P(1) = 1 everywhere
    GrfConfig cfg;
    cfg.samples = 10'000;
    const auto r = grf_update(prior, t1, d, cfg, rng);
    CHECK(r.updated);
    CHECK(std::abs(r.moments.mean[0] - 5.0) < 4.0 / std::sqrt(10'000.0));
  }
  SUBCASE("an increasing likelihood pushes the mean up") {
    d.controls.t = 5.0;
    const auto r = grf_update(prior, t1, d, {5000}, rng);
    CHECK(r.moments.mean[0] > 5.0);
  }
  SUBCASE("no acceptances leaves the prior and flags it") {
    auto narrow = ModelSpec::t1_decay(1.0, 10.0);
    d.controls.t = 1e6;
    const auto r = grf_update(prior, narrow, d, {100}, rng);
    CHECK_FALSE(r.updated);
    CHECK(r.drawn == 300);
    CHECK(r.moments.mean[0] == 5.0);
  }
}
