#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "lseg/gradcheck.hpp"
#include "lseg/nn.hpp"
#include "lseg/rng.hpp"
#include "lseg/tape.hpp"

using namespace lseg;

namespace {

// Independent triple-loop oracle for W*x + b.
Mat matmul_oracle(const Mat& w, const Mat& x, const Mat& b) {
  Mat y(w.rows, 1);
  for (int r = 0; r < w.rows; ++r) {
    double s = b[r];
    for (int c = 0; c < w.cols; ++c) s += w.at(r, c) * x[c];
    y[r] = s;
  }
  return y;
}

// Scalar-loop reference for one GRU step. The reset gate applies to h
// elementwise before the candidate's recurrent term.
Mat gru_oracle(const GruCell& cell, const Mat& x, const Mat& h) {
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  int hd = cell.hidden_dim();
  Mat z(hd, 1), r(hd, 1), out(hd, 1);
  for (int i = 0; i < hd; ++i) {
    double az = cell.bz[i], ar = cell.br[i];
    for (int j = 0; j < cell.input_dim(); ++j) {
      az += cell.wz.at(i, j) * x[j];
      ar += cell.wr.at(i, j) * x[j];
    }
    for (int j = 0; j < hd; ++j) {
      az += cell.uz.at(i, j) * h[j];
      ar += cell.ur.at(i, j) * h[j];
    }
    z[i] = sig(az);
    r[i] = sig(ar);
  }
  for (int i = 0; i < hd; ++i) {
    double ah = cell.bh[i];
    for (int j = 0; j < cell.input_dim(); ++j) ah += cell.wh.at(i, j) * x[j];
    for (int j = 0; j < hd; ++j) ah += cell.uh.at(i, j) * (r[j] * h[j]);
    double hc = std::tanh(ah);
    out[i] = (1.0 - z[i]) * h[i] + z[i] * hc;
  }
  return out;
}

double log_density(const DiagonalGaussian& g, const Mat& x) {
  double acc = 0.0;
  for (int i = 0; i < g.dim(); ++i) {
    double var = std::exp(g.log_var[i]);
    double d = x[i] - g.mean[i];
    acc += -0.5 * (d * d / var + g.log_var[i] + std::log(2.0 * M_PI));
  }
  return acc;
}

DiagonalGaussian random_gaussian(Rng& rng, int dim) {
  Mat mean(dim, 1), lv(dim, 1);
  rng.fill_normal(mean, 1.5);
  rng.fill_uniform(lv, -2.0, 2.0);
  return DiagonalGaussian(std::move(mean), std::move(lv));
}

}  // namespace

TEST_CASE("dense_forward identity and zero layers") {
  DenseLayer ident{Mat::identity(2), Mat(2, 1), Activation::Identity};
  Mat x = Mat::vec({1.0, 2.0});
  Mat y = dense_forward(ident, x);
  CHECK(y[0] == doctest::Approx(1.0));
  CHECK(y[1] == doctest::Approx(2.0));

  DenseLayer zero{Mat(2, 2), Mat::vec({3.0, 3.0}), Activation::Identity};
  Mat z = dense_forward(zero, Mat::vec({-4.0, 9.0}));
  CHECK(z[0] == doctest::Approx(3.0));
  CHECK(z[1] == doctest::Approx(3.0));
}

TEST_CASE("dense_forward matches the triple-loop oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    int in = rng.uniform_int(1, 9);
    int out = rng.uniform_int(1, 9);
    DenseLayer l = make_dense(in, out, Activation::Identity, rng);
    rng.fill_normal(l.b);
    Mat x(in, 1);
    rng.fill_normal(x);
    Mat got = dense_forward(l, x);
    Mat want = matmul_oracle(l.w, x, l.b);
    for (int i = 0; i < out; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("dense_forward rejects shape mismatch") {
  DenseLayer l{Mat(3, 2), Mat(3, 1), Activation::Identity};
  CHECK_THROWS_AS(dense_forward(l, Mat(4, 1)), shape_error);
}

TEST_CASE("gru_step zero cell keeps a zero state") {
  GruCell cell;
  cell.wz = cell.wr = cell.wh = Mat(3, 2);
  cell.uz = cell.ur = cell.uh = Mat(3, 3);
  cell.bz = cell.br = cell.bh = Mat(3, 1);
  Mat h = gru_step(cell, Mat(2, 1), Mat(3, 1));
  for (int i = 0; i < 3; ++i) CHECK(h[i] == doctest::Approx(0.0));
}

TEST_CASE("gru_step candidate bias gives 0.5*tanh(b)") {
  GruCell cell;
  cell.wz = cell.wr = cell.wh = Mat(2, 2);
  cell.uz = cell.ur = cell.uh = Mat(2, 2);
  cell.bz = cell.br = Mat(2, 1);
  cell.bh = Mat::vec({5.0, -3.0});
  Mat h = gru_step(cell, Mat(2, 1), Mat(2, 1));
  CHECK(h[0] == doctest::Approx(0.5 * std::tanh(5.0)));
  CHECK(h[1] == doctest::Approx(0.5 * std::tanh(-3.0)));
}

TEST_CASE("gru_step matches the scalar oracle") {
  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    int in = rng.uniform_int(1, 6);
    int hd = rng.uniform_int(1, 6);
    GruCell cell = make_gru(in, hd, rng);
    rng.fill_normal(cell.bz, 0.3);
    rng.fill_normal(cell.br, 0.3);
    Mat x(in, 1), h(hd, 1);
    rng.fill_normal(x);
    rng.fill_normal(h);
    Mat got = gru_step(cell, x, h);
    Mat want = gru_oracle(cell, x, h);
    for (int i = 0; i < hd; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("gru_step output bounded by max(|h|, 1)") {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    int in = rng.uniform_int(1, 5);
    int hd = rng.uniform_int(1, 5);
    GruCell cell = make_gru(in, hd, rng);
    Mat x(in, 1), h(hd, 1);
    rng.fill_normal(x, 2.0);
    rng.fill_normal(h, 2.0);
    Mat out = gru_step(cell, x, h);
    for (int i = 0; i < hd; ++i)
      CHECK(std::fabs(out[i]) <= std::max(std::fabs(h[i]), 1.0) + 1e-12);
  }
}

TEST_CASE("gaussian_kl identities") {
  Rng rng(33);
  DiagonalGaussian g = random_gaussian(rng, 5);
  CHECK(gaussian_kl(g, g) == doctest::Approx(0.0).epsilon(1e-15));

  DiagonalGaussian q(Mat::vec({0.0}), Mat::vec({0.0}));
  DiagonalGaussian p(Mat::vec({1.0}), Mat::vec({0.0}));
  CHECK(gaussian_kl(q, p) == doctest::Approx(0.5));
}

TEST_CASE("gaussian_kl non-negative over random pairs") {
  Rng rng(34);
  for (int trial = 0; trial < 10000; ++trial) {
    int dim = rng.uniform_int(1, 6);
    DiagonalGaussian q = random_gaussian(rng, dim);
    DiagonalGaussian p = random_gaussian(rng, dim);
    CHECK(gaussian_kl(q, p) >= -1e-12);
    CHECK(gaussian_kl(q, q) == doctest::Approx(0.0).epsilon(1e-15));
  }
}

TEST_CASE("gaussian_kl against a Monte-Carlo oracle") {
  Rng rng(35);
  for (int trial = 0; trial < 3; ++trial) {
    int dim = 3;
    DiagonalGaussian q = random_gaussian(rng, dim);
    DiagonalGaussian p = random_gaussian(rng, dim);
    const int n = 100000;
    double sum = 0.0, sum_sq = 0.0;
    Mat noise(dim, 1);
    for (int i = 0; i < n; ++i) {
      rng.fill_normal(noise);
      Mat x = reparam_sample(q, noise);
      double term = log_density(q, x) - log_density(p, x);
      sum += term;
      sum_sq += term * term;
    }
    double mc = sum / n;
    double var = (sum_sq / n - mc * mc) / n;
    double se = std::sqrt(std::max(var, 1e-300));
    double exact = gaussian_kl(q, p);
    CHECK(std::fabs(exact - mc) <= 3.0 * se + 1e-9);
  }
}

TEST_CASE("gaussian_kl rejects dimension mismatch") {
  DiagonalGaussian a = DiagonalGaussian::standard(2);
  DiagonalGaussian b = DiagonalGaussian::standard(3);
  CHECK_THROWS_AS(gaussian_kl(a, b), shape_error);
}

TEST_CASE("log-variance clamped on construction") {
  DiagonalGaussian g(Mat::vec({0.0, 0.0}), Mat::vec({-25.0, 25.0}));
  CHECK(g.log_var[0] == doctest::Approx(-10.0));
  CHECK(g.log_var[1] == doctest::Approx(10.0));
}

TEST_CASE("reparam_sample basics") {
  DiagonalGaussian g(Mat::vec({1.0, -2.0}), Mat::vec({0.0, 0.0}));
  Mat zero(2, 1);
  Mat s = reparam_sample(g, zero);
  CHECK(s[0] == doctest::Approx(1.0));
  CHECK(s[1] == doctest::Approx(-2.0));

  Mat n = Mat::vec({0.5, -0.25});
  Mat s2 = reparam_sample(g, n);
  CHECK(s2[0] == doctest::Approx(1.5));
  CHECK(s2[1] == doctest::Approx(-2.25));
}

TEST_CASE("reparam_sample is affine in the noise") {
  Rng rng(44);
  DiagonalGaussian g = random_gaussian(rng, 4);
  Mat n(4, 1);
  rng.fill_normal(n);
  Mat s1 = sub(reparam_sample(g, n), g.mean);
  Mat s3 = sub(reparam_sample(g, scale(n, 3.0)), g.mean);
  for (int i = 0; i < 4; ++i) CHECK(s3[i] == doctest::Approx(3.0 * s1[i]).epsilon(1e-12));
}

TEST_CASE("reparam_sample mean statistics") {
  Rng rng(45);
  DiagonalGaussian g = random_gaussian(rng, 2);
  const int n = 100000;
  Mat acc(2, 1);
  Mat noise(2, 1);
  for (int i = 0; i < n; ++i) {
    rng.fill_normal(noise);
    Mat s = reparam_sample(g, noise);
    acc[0] += s[0];
    acc[1] += s[1];
  }
  for (int i = 0; i < 2; ++i) {
    double sd = std::exp(0.5 * g.log_var[i]);
    CHECK(std::fabs(acc[i] / n - g.mean[i]) <= 3.0 * sd / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("adam_step leaves parameters alone on zero gradient without decay") {
  Mat w = Mat::vec({1.0, -2.0, 3.0});
  ParamStore store;
  store.add("w", &w);
  ParamStore::AdamConfig cfg;
  cfg.lr = 1e-2;
  cfg.weight_decay = 0.0;
  store.adam_step(cfg);
  CHECK(w[0] == doctest::Approx(1.0));
  CHECK(w[1] == doctest::Approx(-2.0));
  CHECK(w[2] == doctest::Approx(3.0));
  CHECK(store.step() == 1);
}

TEST_CASE("adam first step moves by about -lr*sign(g)") {
  Mat w = Mat::vec({0.7});
  ParamStore store;
  store.add("w", &w);
  store.grad(0)[0] = 2.5;
  ParamStore::AdamConfig cfg;
  cfg.lr = 1e-3;
  cfg.weight_decay = 0.0;
  store.adam_step(cfg);
  CHECK(w[0] == doctest::Approx(0.7 - 1e-3).epsilon(1e-6));
}

TEST_CASE("adam converges on a quadratic bowl") {
  Mat w = Mat::vec({1.0});
  ParamStore store;
  store.add("w", &w);
  ParamStore::AdamConfig cfg;
  cfg.lr = 1e-2;
  cfg.weight_decay = 0.0;
  for (int i = 0; i < 500; ++i) {
    store.grad(0)[0] = 2.0 * w[0];
    store.adam_step(cfg);
  }
  CHECK(std::fabs(w[0]) < 1e-2);
}

TEST_CASE("adam aborts on NaN gradients naming the parameter") {
  Mat w = Mat::vec({1.0});
  ParamStore store;
  store.add("encoder.w", &w);
  store.grad(0)[0] = std::nan("");
  ParamStore::AdamConfig cfg;
  try {
    store.adam_step(cfg);
    FAIL("expected numeric_error");
  } catch (const numeric_error& e) {
    CHECK(std::string(e.what()).find("encoder.w") != std::string::npos);
  }
}

TEST_CASE("grad_check on a linear loss is exact") {
  Mat w = Mat::vec({0.3, -0.4, 1.7});
  ParamStore store;
  store.add("w", &w);
  auto build = [&](Tape& tape) {
    ParamBinder binder(tape, store);
    return tape.sum(binder.use(&w));
  };
  GradCheckResult res = grad_check(build, store, 1e-4);
  CHECK(res.max_rel_error < 1e-8);
}

TEST_CASE("grad_check on dense+ReLU+MSE") {
  Rng rng(55);
  DenseLayer l1 = make_dense(4, 6, Activation::ReLU, rng);
  DenseLayer l2 = make_dense(6, 3, Activation::Identity, rng);
  rng.fill_normal(l1.b, 0.2);
  rng.fill_normal(l2.b, 0.2);
  Mat x(4, 1), target(3, 1);
  rng.fill_normal(x);
  rng.fill_normal(target);
  ParamStore store;
  store.add("l1.w", &l1.w);
  store.add("l1.b", &l1.b);
  store.add("l2.w", &l2.w);
  store.add("l2.b", &l2.b);
  auto build = [&](Tape& tape) {
    ParamBinder binder(tape, store);
    Tape::Ref h = dense_node(tape, binder, l1, tape.input(x));
    Tape::Ref y = dense_node(tape, binder, l2, h);
    return tape.sum(tape.square(tape.sub(y, tape.input(target))));
  };
  GradCheckResult res = grad_check(build, store, 1e-4);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("grad_check across every tape primitive") {
  Rng rng(56);
  Mat a(5, 1), b(5, 1);
  rng.fill_normal(a);
  rng.fill_normal(b);
  ParamStore store;
  store.add("a", &a);
  store.add("b", &b);
  auto build = [&](Tape& tape) {
    ParamBinder binder(tape, store);
    Tape::Ref ra = binder.use(&a);
    Tape::Ref rb = binder.use(&b);
    Tape::Ref mixed = tape.mul(tape.sigmoid(ra), tape.tanh_(rb));
    mixed = tape.add(mixed, tape.exp_(tape.scale(ra, 0.3)));
    mixed = tape.sub(mixed, tape.square(rb));
    mixed = tape.add(mixed, tape.softmax(ra));
    mixed = tape.mul_scalar(mixed, tape.topk_mean(rb, 2));
    Tape::Ref joined = tape.concat({mixed, tape.log_eps(tape.square(ra), 1e-6)});
    Tape::Ref sliced = tape.slice(joined, 2, 6);
    return tape.sum(tape.mul(sliced, sliced));
  };
  GradCheckResult res = grad_check(build, store, 1e-4);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("tape composites agree with the plain kernels") {
  Rng rng(57);
  DenseLayer layer = make_dense(5, 4, Activation::ReLU, rng);
  rng.fill_normal(layer.b, 0.5);
  GruCell cell = make_gru(3, 4, rng);
  Mat x(5, 1), gx(3, 1), gh(4, 1);
  rng.fill_normal(x);
  rng.fill_normal(gx);
  rng.fill_normal(gh);

  ParamStore store;
  store.add("layer.w", &layer.w);
  store.add("layer.b", &layer.b);
  store.add("cell.wz", &cell.wz);
  store.add("cell.uz", &cell.uz);
  store.add("cell.bz", &cell.bz);
  store.add("cell.wr", &cell.wr);
  store.add("cell.ur", &cell.ur);
  store.add("cell.br", &cell.br);
  store.add("cell.wh", &cell.wh);
  store.add("cell.uh", &cell.uh);
  store.add("cell.bh", &cell.bh);

  Tape tape;
  ParamBinder binder(tape, store);
  Tape::Ref dense_ref = dense_node(tape, binder, layer, tape.input(x));
  Tape::Ref gru_ref = gru_node(tape, binder, cell, tape.input(gx), tape.input(gh));

  Mat dense_plain = dense_forward(layer, x);
  Mat gru_plain = gru_step(cell, gx, gh);
  for (int i = 0; i < 4; ++i) {
    CHECK(tape.val(dense_ref)[i] == doctest::Approx(dense_plain[i]).epsilon(1e-14));
    CHECK(tape.val(gru_ref)[i] == doctest::Approx(gru_plain[i]).epsilon(1e-14));
  }

  // Gaussian composites against the plain functions.
  DiagonalGaussian q = random_gaussian(rng, 4);
  DiagonalGaussian p = random_gaussian(rng, 4);
  GaussNode qn = const_gauss_node(tape, q);
  GaussNode pn = const_gauss_node(tape, p);
  CHECK(tape.scalar(kl_node(tape, qn, pn)) == doctest::Approx(gaussian_kl(q, p)).epsilon(1e-12));
  Mat noise(4, 1);
  rng.fill_normal(noise);
  Tape::Ref sample = reparam_node(tape, qn, noise);
  Mat plain_sample = reparam_sample(q, noise);
  for (int i = 0; i < 4; ++i)
    CHECK(tape.val(sample)[i] == doctest::Approx(plain_sample[i]).epsilon(1e-14));
}

TEST_CASE("kernels are bit-deterministic across repeated runs") {
  auto run_once = [] {
    Rng rng(77);
    DenseLayer l = make_dense(6, 5, Activation::ReLU, rng);
    GruCell cell = make_gru(5, 5, rng);
    Mat x(6, 1);
    rng.fill_normal(x);
    Mat h = dense_forward(l, x);
    Mat out = gru_step(cell, h, Mat(5, 1));

    ParamStore store;
    store.add("w", &l.w);
    store.add("b", &l.b);
    Tape tape;
    ParamBinder binder(tape, store);
    Tape::Ref loss = tape.sum(tape.square(dense_node(tape, binder, l, tape.input(x))));
    tape.backward(loss);
    ParamStore::AdamConfig cfg;
    cfg.lr = 1e-3;
    store.adam_step(cfg);
    std::vector<double> bits;
    for (int i = 0; i < out.size(); ++i) bits.push_back(out[i]);
    for (int i = 0; i < l.w.size(); ++i) bits.push_back(l.w[i]);
    return bits;
  };
  auto a = run_once();
  auto b = run_once();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}
