#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "lseg/dfc.hpp"
#include "lseg/gradcheck.hpp"
#include "lseg/rng.hpp"

using namespace lseg;
using namespace lseg::dfc;
using dataio::CorpusVideo;
using dataio::FeatureSequence;

namespace {

void zero_params(ParamStore& store) {
  for (int i = 0; i < store.count(); ++i)
    for (int j = 0; j < store.value(i).size(); ++j) store.value(i)[j] = 0.0;
}

void zero_transition(DfcModel& m) {
  for (Mat* t : {&m.transition.wz, &m.transition.uz, &m.transition.bz,
                 &m.transition.wr, &m.transition.ur, &m.transition.br,
                 &m.transition.wh, &m.transition.uh, &m.transition.bh})
    for (int i = 0; i < t->size(); ++i) (*t)[i] = 0.0;
}

DfcConfig tiny_config(int f = 8) {
  DfcConfig cfg;
  cfg.feature_dim = f;
  cfg.encoder_widths = {24, 24};
  cfg.decoder_widths = {24, 24};
  cfg.latent1 = 8;
  cfg.latent2 = 8;
  cfg.gru_hidden = 12;
  cfg.head_hidden = 16;
  return cfg;
}

// Two-regime family: orthogonal prototypes with a mean shift at `boundary`.
FeatureSequence two_regime_video(int t_total, int boundary, int f, double sigma,
                                 Rng& rng, const std::string& id) {
  FeatureSequence fsq;
  fsq.video_id = id;
  fsq.data = Mat(t_total, f);
  int half = f / 2;
  for (int t = 0; t < t_total; ++t)
    for (int j = 0; j < f; ++j) {
      double proto = 0.0;
      if (t < boundary && j < half) proto = 1.0 / std::sqrt(static_cast<double>(half));
      if (t >= boundary && j >= half) proto = 1.0 / std::sqrt(static_cast<double>(f - half));
      fsq.data.at(t, j) = proto + sigma * rng.normal();
    }
  return fsq;
}

std::vector<CorpusVideo> two_regime_corpus(int n, int t_total, int f, double sigma,
                                           uint64_t seed) {
  Rng rng(seed);
  std::vector<CorpusVideo> corpus;
  for (int i = 0; i < n; ++i) {
    int boundary = rng.uniform_int(35, 65);
    CorpusVideo v;
    v.features = two_regime_video(t_total, boundary, f, sigma, rng,
                                  "two_regime_" + std::to_string(i));
    v.truth.video_id = v.features.video_id;
    v.truth.segments.push_back({boundary, t_total, 0});
    corpus.push_back(std::move(v));
  }
  return corpus;
}

struct TrainedFixture {
  std::unique_ptr<DfcModel> model;
  TrainedFixture() {
    model = make_dfc(tiny_config(8), 3);
    auto corpus = two_regime_corpus(48, 100, 8, 0.05, 11);
    TrainOptions opts;
    opts.epochs = 40;
    opts.batch_size = 16;
    opts.lr = 3e-3;
    opts.seed = 3;
    train_dfc(*model, corpus, opts);
  }
};

TrainedFixture& trained() {
  static TrainedFixture fixture;
  return fixture;
}

std::vector<double> snapshot(const ParamStore& store) {
  std::vector<double> out;
  for (int i = 0; i < store.count(); ++i)
    for (int j = 0; j < store.value(i).size(); ++j) out.push_back(store.value(i)[j]);
  return out;
}

ParamStore& mutable_params(DfcModel& m) { return m.params; }

}  // namespace

TEST_CASE("config validation") {
  DfcConfig bad = tiny_config();
  bad.beta0 = 0.05;  // below beta_min
  CHECK_THROWS_AS(bad.validate(), shape_error);
  bad = tiny_config();
  bad.alpha = 0.0;
  CHECK_THROWS_AS(bad.validate(), shape_error);
  bad = tiny_config();
  bad.latent2 = 0;
  CHECK_THROWS_AS(bad.validate(), shape_error);
}

TEST_CASE("encode/decode zero and identity configurations") {
  auto m = make_dfc(tiny_config(6), 1);
  zero_params(mutable_params(*m));
  Mat x(6, 1, 1.5);
  Mat f = encode(*m, x);
  for (int i = 0; i < f.size(); ++i) CHECK(f[i] == 0.0);
  Mat u = decode(*m, f);
  for (int i = 0; i < u.size(); ++i) CHECK(u[i] == 0.0);

  DfcConfig ident_cfg = tiny_config(6);
  ident_cfg.encoder_widths = {6};
  auto ident = make_dfc(ident_cfg, 1);
  ident->encoder[0].w = Mat::identity(6);
  ident->encoder[0].b = Mat(6, 1);
  Mat x2 = Mat::vec({1.0, -2.0, 3.0, 0.0, 0.25, -9.0});
  Mat f2 = encode(*ident, x2);
  for (int i = 0; i < 6; ++i) CHECK(f2[i] == doctest::Approx(x2[i]));
}

TEST_CASE("encode/decode match the layer-by-layer composition oracle") {
  Rng rng(4);
  auto m = make_dfc(tiny_config(8), 9);
  Mat x(8, 1);
  rng.fill_normal(x);
  Mat want = x;
  for (const DenseLayer& l : m->encoder) want = dense_forward(l, want);
  Mat got = encode(*m, x);
  for (int i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-14));
  Mat wdec = want;
  for (const DenseLayer& l : m->decoder) wdec = dense_forward(l, wdec);
  Mat gdec = decode(*m, got);
  for (int i = 0; i < gdec.size(); ++i)
    CHECK(gdec[i] == doctest::Approx(wdec[i]).epsilon(1e-14));
}

TEST_CASE("encode rejects dimension mismatch") {
  auto m = make_dfc(tiny_config(8), 9);
  CHECK_THROWS_AS(encode(*m, Mat(5, 1)), shape_error);
}

TEST_CASE("prior_static with zero head weights is standard normal") {
  auto m = make_dfc(tiny_config(6), 2);
  zero_params(mutable_params(*m));
  Mat f(m->cfg.encoder_out(), 1, 0.3);
  Mat d(m->cfg.gru_hidden, 1, -0.7);
  Mat u(m->cfg.decoder_out(), 1, 0.1);
  DiagonalGaussian p = prior_static(*m, f, d, u);
  for (int i = 0; i < p.dim(); ++i) {
    CHECK(p.mean[i] == 0.0);
    CHECK(p.log_var[i] == 0.0);
  }
}

TEST_CASE("change prior equals static prior at a transition fixed point") {
  auto m = make_dfc(tiny_config(6), 5);
  zero_transition(*m);
  Rng rng(6);
  Mat f(m->cfg.encoder_out(), 1), u(m->cfg.decoder_out(), 1), v(m->cfg.latent2, 1);
  rng.fill_normal(f);
  rng.fill_normal(u);
  rng.fill_normal(v);
  Mat d(m->cfg.gru_hidden, 1);  // committed state is the zero initial state
  auto [p_ch, d_next] = prior_change(*m, f, d, v, u);
  for (int i = 0; i < d_next.size(); ++i) CHECK(d_next[i] == 0.0);
  DiagonalGaussian p_st = prior_static(*m, f, d, u);
  for (int i = 0; i < p_st.dim(); ++i) {
    CHECK(p_ch.mean[i] == p_st.mean[i]);
    CHECK(p_ch.log_var[i] == p_st.log_var[i]);
  }
}

TEST_CASE("prior and posterior heads match a dense-stack oracle") {
  Rng rng(7);
  auto m = make_dfc(tiny_config(6), 8);
  Mat f(m->cfg.encoder_out(), 1), d(m->cfg.gru_hidden, 1), u(m->cfg.decoder_out(), 1);
  rng.fill_normal(f);
  rng.fill_normal(d);
  rng.fill_normal(u);
  Mat joint = concat_rows({&f, &d, &u});
  Mat hidden = dense_forward(m->prior2.hidden, joint);
  Mat raw = dense_forward(m->prior2.out, hidden);
  DiagonalGaussian got = prior_static(*m, f, d, u);
  for (int i = 0; i < m->cfg.latent2; ++i) {
    CHECK(got.mean[i] == doctest::Approx(raw[i]).epsilon(1e-14));
    double lv = std::min(10.0, std::max(-10.0, raw[m->cfg.latent2 + i]));
    CHECK(got.log_var[i] == doctest::Approx(lv).epsilon(1e-14));
  }
}

TEST_CASE("posterior equals static prior when heads share weights") {
  auto m = make_dfc(tiny_config(6), 10);
  m->post2.hidden.w = m->prior2.hidden.w;
  m->post2.hidden.b = m->prior2.hidden.b;
  m->post2.out.w = m->prior2.out.w;
  m->post2.out.b = m->prior2.out.b;
  Rng rng(11);
  Mat f(m->cfg.encoder_out(), 1), d(m->cfg.gru_hidden, 1), u(m->cfg.decoder_out(), 1);
  rng.fill_normal(f);
  rng.fill_normal(d);
  rng.fill_normal(u);
  DiagonalGaussian q = posterior(*m, f, d, u);
  DiagonalGaussian p = prior_static(*m, f, d, u);
  CHECK(gaussian_kl(q, p) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("boundary condition and beta dynamics") {
  CHECK(boundary_condition(1.0, 0.5, 0.9));       // 1.0 > 0.45
  CHECK(!boundary_condition(0.4, 0.5, 0.9));      // 0.4 < 0.45
  CHECK(!boundary_condition(0.0, 0.0, 0.5));      // degenerate case stays quiet

  DfcConfig cfg = tiny_config();
  CHECK(next_beta(0.5, true, cfg) == doctest::Approx(0.65));
  CHECK(next_beta(0.20, false, cfg) == doctest::Approx(0.15));  // clamped from 0.05
  CHECK(next_beta(0.9, true, cfg) == doctest::Approx(0.9));     // clamped from 1.05

  // Adversarial trajectories never leave [0.15, 0.9].
  Rng rng(12);
  double beta = cfg.beta0;
  for (int i = 0; i < 1000; ++i) {
    beta = next_beta(beta, rng.uniform() < 0.5, cfg);
    CHECK(beta >= 0.15);
    CHECK(beta <= 0.9);
  }
}

TEST_CASE("fixed-point transition turns every step into a change") {
  // With the transition forced to the fixed point, both priors coincide, so
  // D_st == D_ch and the condition reduces to beta < 1.
  auto m = make_dfc(tiny_config(6), 13);
  zero_transition(*m);
  m->cfg.warmup = 0;
  Rng rng(14);
  Mat x0(6, 1);
  rng.fill_normal(x0);
  DfcState st = init_state(*m, x0);
  for (int step = 0; step < 20; ++step) {
    Mat x(6, 1);
    rng.fill_normal(x);
    StepOutcome out = step_detect(*m, st, x);
    CHECK(out.d_st == doctest::Approx(out.d_ch).epsilon(1e-12));
    CHECK(out.is_change == (out.d_st > 0.0));
    CHECK(st.beta >= 0.15);
    CHECK(st.beta <= 0.9);
  }
  for (size_t i = 1; i < st.change_log.size(); ++i)
    CHECK(st.change_log[i].t > st.change_log[i - 1].t);
}

TEST_CASE("reset restores the initial recurrent state after a change") {
  auto m = make_dfc(tiny_config(6), 15);
  zero_transition(*m);
  m->cfg.warmup = 0;
  Rng rng(16);
  Mat x0(6, 1);
  rng.fill_normal(x0);
  DfcState st = init_state(*m, x0);
  Mat x1(6, 1);
  rng.fill_normal(x1);
  StepOutcome out = step_detect(*m, st, x1);
  REQUIRE(out.is_change);
  for (int i = 0; i < st.d.size(); ++i) CHECK(st.d[i] == 0.0);
  CHECK(st.change_log.size() == 1);
  CHECK(st.change_log[0].t == 1);
}

TEST_CASE("step_detect reports non-finite KL with time index") {
  auto m = make_dfc(tiny_config(6), 17);
  for (int i = 0; i < m->prior2.out.w.size(); ++i) m->prior2.out.w[i] = 1e308;
  Rng rng(18);
  Mat x0(6, 1), x1(6, 1);
  rng.fill_normal(x0);
  rng.fill_normal(x1);
  DfcState st = init_state(*m, x0);
  try {
    step_detect(*m, st, x1);
    FAIL("expected numeric_error");
  } catch (const numeric_error& e) {
    CHECK(std::string(e.what()).find("t=0") != std::string::npos);
  }
}

TEST_CASE("detect_sequence on a single snippet is empty") {
  auto m = make_dfc(tiny_config(8), 19);
  FeatureSequence fsq;
  fsq.video_id = "one";
  fsq.data = Mat(1, 8, 0.5);
  ChangePointSet cps = detect_sequence(*m, fsq);
  CHECK(cps.points.empty());
}

TEST_CASE("detect_sequence is deterministic and pure in the parameters") {
  auto m = make_dfc(tiny_config(8), 20);
  Rng rng(21);
  FeatureSequence fsq = two_regime_video(80, 40, 8, 0.05, rng, "probe");
  std::vector<double> before = snapshot(m->params);
  ChangePointSet a = detect_sequence(*m, fsq);
  ChangePointSet b = detect_sequence(*m, fsq);
  CHECK(a.points == b.points);
  std::vector<double> after = snapshot(m->params);
  REQUIRE(before.size() == after.size());
  for (size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("elbo floor: zero model on zero input hits the Gaussian constant") {
  auto m = make_dfc(tiny_config(4), 22);
  zero_params(mutable_params(*m));
  FeatureSequence fsq;
  fsq.video_id = "zeros";
  fsq.data = Mat(6, 4);
  ElboBreakdown bd = elbo_loss(*m, fsq, 77);
  double floor_ = 6.0 * (4.0 / 2.0) * std::log(2.0 * M_PI);
  CHECK(bd.total == doctest::Approx(floor_).epsilon(1e-12));
  CHECK(bd.kl_level1 == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(bd.kl_level2 == doctest::Approx(0.0).epsilon(1e-12));
  for (uint8_t c : bd.changes) CHECK(c == 0);
}

TEST_CASE("elbo decomposes into reconstruction plus KL terms") {
  auto m = make_dfc(tiny_config(8), 23);
  Rng rng(24);
  FeatureSequence fsq = two_regime_video(60, 30, 8, 0.1, rng, "decomp");
  ElboBreakdown bd = elbo_loss(*m, fsq, 5);
  CHECK(std::fabs(bd.total - (bd.reconstruction + bd.kl_level1 + bd.kl_level2)) < 1e-9);
  CHECK(bd.kl_level1 >= -1e-12);
  CHECK(bd.kl_level2 >= -1e-12);
  CHECK(bd.total >= bd.reconstruction - 1e-9);

  ElboBreakdown again = elbo_loss(*m, fsq, 5);
  CHECK(bd.total == again.total);
  ElboBreakdown other_noise = elbo_loss(*m, fsq, 6);
  CHECK(bd.total != other_noise.total);
}

TEST_CASE("one-step elbo passes the finite-difference check") {
  DfcConfig cfg;
  cfg.feature_dim = 5;
  cfg.encoder_widths = {8, 6};
  cfg.decoder_widths = {8, 6};
  cfg.latent1 = 3;
  cfg.latent2 = 3;
  cfg.gru_hidden = 5;
  cfg.head_hidden = 6;
  cfg.warmup = 0;
  auto m = make_dfc(cfg, 25);
  Rng rng(26);
  FeatureSequence fsq;
  fsq.video_id = "gc";
  fsq.data = Mat(2, 5);
  for (int i = 0; i < fsq.data.size(); ++i) fsq.data[i] = rng.normal();

  ElboOptions opts;
  opts.noise_seed = 31;
  ElboBreakdown probe = elbo_loss(*m, fsq, opts.noise_seed);
  std::vector<uint8_t> frozen = probe.changes;
  opts.replay_changes = &frozen;
  GradCheckResult res = grad_check(
      [&](Tape& tape) { return build_elbo(tape, *m, fsq, opts).first; }, m->params,
      1e-4);
  CHECK(res.max_rel_error < 1e-3);
}

TEST_CASE("train_dfc with zero learning rate is a no-op with a flat trace") {
  auto m = make_dfc(tiny_config(8), 27);
  auto corpus = two_regime_corpus(8, 60, 8, 0.05, 28);
  std::vector<double> before = snapshot(m->params);
  TrainOptions opts;
  opts.epochs = 3;
  opts.batch_size = 4;
  opts.lr = 0.0;
  opts.weight_decay = 0.0;
  opts.seed = 29;
  std::vector<double> trace = train_dfc(*m, corpus, opts);
  REQUIRE(trace.size() == 3);
  CHECK(trace[0] == trace[1]);
  CHECK(trace[1] == trace[2]);
  std::vector<double> after = snapshot(m->params);
  for (size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("train_dfc is deterministic per seed") {
  auto corpus = two_regime_corpus(8, 60, 8, 0.05, 30);
  TrainOptions opts;
  opts.epochs = 2;
  opts.batch_size = 4;
  opts.lr = 1e-3;
  opts.seed = 31;
  auto m1 = make_dfc(tiny_config(8), 32);
  auto m2 = make_dfc(tiny_config(8), 32);
  std::vector<double> t1 = train_dfc(*m1, corpus, opts);
  std::vector<double> t2 = train_dfc(*m2, corpus, opts);
  CHECK(t1 == t2);
  std::vector<double> s1 = snapshot(m1->params);
  std::vector<double> s2 = snapshot(m2->params);
  for (size_t i = 0; i < s1.size(); ++i) CHECK(s1[i] == s2[i]);
}

TEST_CASE("train_dfc rejects an empty corpus") {
  auto m = make_dfc(tiny_config(8), 33);
  CHECK_THROWS_AS(train_dfc(*m, {}, TrainOptions{}), shape_error);
}

TEST_CASE("training reduces the loss on the synthetic corpus") {
  auto m = make_dfc(tiny_config(8), 34);
  auto corpus = two_regime_corpus(64, 100, 8, 0.05, 35);
  TrainOptions opts;
  opts.epochs = 20;
  opts.batch_size = 16;
  opts.lr = 3e-3;
  opts.seed = 36;
  std::vector<double> trace = train_dfc(*m, corpus, opts);
  REQUIRE(trace.size() == 20);
  CHECK(trace[19] < 0.8 * trace[0]);
  CHECK(trace[19] < trace[0]);
}

TEST_CASE("trained detector flags the two-regime boundary within tolerance") {
  DfcModel& m = *trained().model;
  Rng rng(37);
  FeatureSequence probe = two_regime_video(100, 50, 8, 0.05, rng, "boundary50");
  ChangePointSet cps = detect_sequence(m, probe);
  int in_window = 0;
  for (int p : cps.points)
    if (p >= 48 && p <= 52) ++in_window;
  CHECK(in_window == 1);
}

TEST_CASE("trained detector stays quiet on a constant sequence") {
  DfcModel& m = *trained().model;
  FeatureSequence constant;
  constant.video_id = "constant";
  constant.data = Mat(80, 8);
  int half = 4;
  for (int t = 0; t < 80; ++t)
    for (int j = 0; j < half; ++j)
      constant.data.at(t, j) = 1.0 / std::sqrt(static_cast<double>(half));
  ChangePointSet cps = detect_sequence(m, constant);
  CHECK(cps.points.empty());
}

TEST_CASE("detected change count is non-increasing in beta0 when alpha is 0") {
  DfcModel& m = *trained().model;
  DfcConfig saved = m.cfg;
  Rng rng(38);
  std::vector<FeatureSequence> probes;
  for (int i = 0; i < 6; ++i)
    probes.push_back(two_regime_video(100, 40 + 4 * i, 8, 0.05, rng,
                                      "sweep_" + std::to_string(i)));
  std::vector<double> beta0s = {0.15, 0.3, 0.5, 0.7, 0.9};
  std::vector<int> counts;
  for (double b0 : beta0s) {
    m.cfg.alpha = 1e-12;  // effectively frozen beta (alpha must stay positive)
    m.cfg.beta0 = b0;
    m.cfg.beta_min = 0.15;
    m.cfg.beta_max = 0.9;
    int total = 0;
    for (const FeatureSequence& p : probes) total += detect_sequence(m, p).size();
    counts.push_back(total);
  }
  m.cfg = saved;
  for (size_t i = 1; i < counts.size(); ++i) CHECK(counts[i] <= counts[i - 1]);
}
