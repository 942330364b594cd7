#include "lseg/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "lseg/boundary.hpp"
#include "lseg/checkpoint.hpp"
#include "lseg/config.hpp"
#include "lseg/dataio.hpp"
#include "lseg/dfc.hpp"
#include "lseg/efc.hpp"
#include "lseg/eval.hpp"
#include "lseg/gradcheck.hpp"

namespace lseg::cli {

namespace fs = std::filesystem;
using config::RunConfig;

namespace {

// Snippet length per the feature extraction convention: 16 frames at 25 fps.
constexpr double kSecondsPerSnippet = 16.0 / 25.0;

// Removes this run's outputs when a command fails partway.
class OutputTracker {
 public:
  void track(const std::string& path) { paths_.push_back(path); }
  void commit() { paths_.clear(); }
  ~OutputTracker() {
    for (const std::string& p : paths_) {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
  }

 private:
  std::vector<std::string> paths_;
};

void require_exists(const std::string& path, const std::string& hint) {
  if (!fs::exists(path))
    throw dataio::io_error(dataio::io_error::Kind::Io,
                           path + " not found; " + hint);
}

int cmd_gen_data(const RunConfig& cfg) {
  OutputTracker tracker;
  tracker.track(cfg.train_dir());
  tracker.track(cfg.test_dir());
  auto train = dataio::generate_corpus(cfg.gen_spec("train"));
  auto test = dataio::generate_corpus(cfg.gen_spec("test"));
  dataio::write_corpus(cfg.train_dir(), train);
  dataio::write_corpus(cfg.test_dir(), test);
  config::write_manifest(cfg.corpus_dir, "gen-data", cfg);
  std::cout << "gen-data: wrote " << train.size() << " train / " << test.size()
            << " test videos to " << cfg.corpus_dir << "\n";
  tracker.commit();
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  require_exists(cfg.train_dir() + "/annotations.csv",
                 "run gen-data first or point paths.corpus_dir at a corpus");
  auto corpus = dataio::load_corpus(cfg.train_dir());

  OutputTracker tracker;
  fs::create_directories(cfg.output_dir);

  auto dfc_model = dfc::make_dfc(cfg.dfc, cfg.train_seed);
  dfc::TrainOptions dopt;
  dopt.epochs = cfg.epochs_dfc;
  dopt.batch_size = cfg.batch_size;
  dopt.lr = cfg.lr;
  dopt.weight_decay = cfg.weight_decay;
  dopt.seed = cfg.train_seed;
  std::vector<double> dfc_trace = dfc::train_dfc(*dfc_model, corpus, dopt);
  tracker.track(cfg.dfc_checkpoint);
  checkpoint::save_dfc(cfg.dfc_checkpoint, *dfc_model);

  auto efc_model = efc::make_efc(cfg.efc, cfg.train_seed + 1);
  efc::TrainOptions eopt;
  eopt.epochs = cfg.epochs_efc;
  eopt.batch_size = cfg.batch_size;
  eopt.lr = cfg.lr;
  eopt.weight_decay = cfg.weight_decay;
  eopt.seed = cfg.train_seed + 1;
  std::vector<double> efc_trace = efc::train_efc(*efc_model, corpus, eopt);
  tracker.track(cfg.efc_checkpoint);
  checkpoint::save_efc(cfg.efc_checkpoint, *efc_model);

  auto write_trace = [&](const std::string& path, const std::vector<double>& trace) {
    tracker.track(path);
    std::ofstream out(path, std::ios::trunc);
    out << "epoch,loss\n";
    out.precision(17);
    for (size_t i = 0; i < trace.size(); ++i) out << i + 1 << "," << trace[i] << "\n";
  };
  write_trace(cfg.output_dir + "/dfc_trace.csv", dfc_trace);
  write_trace(cfg.output_dir + "/efc_trace.csv", efc_trace);
  config::write_manifest(cfg.output_dir, "train", cfg);

  std::cout << "train: detector loss " << dfc_trace.front() << " -> "
            << dfc_trace.back() << " over " << dfc_trace.size() << " epochs\n";
  std::cout << "train: classifier loss " << efc_trace.front() << " -> "
            << efc_trace.back() << " over " << efc_trace.size() << " epochs\n";
  tracker.commit();
  return 0;
}

int cmd_detect(const RunConfig& cfg) {
  require_exists(cfg.dfc_checkpoint, "run train first");
  require_exists(cfg.efc_checkpoint, "run train first");
  std::string dir = cfg.split_dir(cfg.detect_split);
  require_exists(dir + "/annotations.csv", "run gen-data first");

  auto dfc_model = checkpoint::load_dfc(cfg.dfc_checkpoint);
  auto efc_model = checkpoint::load_efc(cfg.efc_checkpoint);
  auto corpus = dataio::load_corpus(dir);

  std::vector<dataio::VideoChangePoints> all_points;
  std::vector<dataio::PredictedSegment> all_segments;
  for (const dataio::CorpusVideo& video : corpus) {
    ChangePointSet raw = dfc::detect_sequence(*dfc_model, video.features);
    ChangePointSet pruned = boundary::lcs_prune(raw, video.features.data, cfg.lcs);
    efc::CasMap cas = efc::cas_forward(*efc_model, video.features);
    std::vector<Segment> segs = boundary::extract_segments(pruned, cas, cfg.lcs);
    all_points.push_back({video.features.video_id, pruned});
    for (const Segment& s : segs)
      all_segments.push_back({video.features.video_id, s});
  }

  OutputTracker tracker;
  fs::create_directories(cfg.output_dir);
  std::string seg_path = cfg.output_dir + "/segments.csv";
  std::string cp_path = cfg.output_dir + "/change_points.csv";
  tracker.track(seg_path);
  tracker.track(cp_path);
  dataio::write_segments(seg_path, all_segments);
  dataio::write_change_points(cp_path, all_points);
  config::write_manifest(cfg.output_dir, "detect", cfg);

  double total_sec = 0.0;
  for (const dataio::PredictedSegment& p : all_segments)
    total_sec += (p.seg.end - p.seg.start) * kSecondsPerSnippet;
  std::cout << "detect: " << all_segments.size() << " segments ("
            << total_sec << " s of action) across " << corpus.size()
            << " videos -> " << seg_path << "\n";
  tracker.commit();
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  std::string dir = cfg.split_dir(cfg.detect_split);
  require_exists(dir + "/annotations.csv", "run gen-data first");
  std::string seg_path = cfg.output_dir + "/segments.csv";
  require_exists(seg_path, "run detect first");

  auto corpus = dataio::load_corpus(dir);
  dataio::GroundTruth gt;
  for (const dataio::CorpusVideo& v : corpus) gt.videos.push_back(v.truth);

  auto predictions = dataio::read_segments(seg_path);
  eval::EvalReport report =
      eval::map_report(predictions, eval::ground_segments_of(gt), cfg.iou_thresholds);

  std::string cp_path = cfg.output_dir + "/change_points.csv";
  if (fs::exists(cp_path)) {
    auto detected = dataio::read_change_points(cp_path);
    eval::CpMatchCounts total;
    for (const dataio::CorpusVideo& v : corpus) {
      ChangePointSet truth_points =
          v.truth.change_points(v.features.snippet_count());
      ChangePointSet det;
      for (const dataio::VideoChangePoints& d : detected)
        if (d.video_id == v.features.video_id) det = d.points;
      eval::CpMatchCounts c =
          eval::match_change_points(det, truth_points, cfg.cp_tolerance);
      total.matched += c.matched;
      total.detected += c.detected;
      total.truth += c.truth;
    }
    eval::PrF1 pr = eval::prf1_from_counts(total);
    report.cp_precision = pr.precision;
    report.cp_recall = pr.recall;
    report.cp_f1 = pr.f1;
    report.has_change_points = true;
  }

  OutputTracker tracker;
  fs::create_directories(cfg.output_dir);
  std::string text_path = cfg.output_dir + "/report.txt";
  std::string csv_path = cfg.output_dir + "/report.csv";
  tracker.track(text_path);
  tracker.track(csv_path);
  {
    std::ofstream out(text_path, std::ios::trunc);
    out << report.to_text();
    out << "snippet_seconds=" << kSecondsPerSnippet << "\n";
  }
  {
    std::ofstream out(csv_path, std::ios::trunc);
    out << report.to_csv();
  }
  config::write_manifest(cfg.output_dir, "eval", cfg);
  std::cout << report.to_text();
  tracker.commit();
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg) {
  // Small shapes keep the finite-difference sweep fast; the checked math is
  // the full training loss of both models.
  dfc::DfcConfig dcfg;
  dcfg.feature_dim = 6;
  dcfg.encoder_widths = {10, 8};
  dcfg.decoder_widths = {10, 8};
  dcfg.latent1 = 4;
  dcfg.latent2 = 4;
  dcfg.gru_hidden = 6;
  dcfg.head_hidden = 8;
  dcfg.warmup = 0;
  auto dfc_model = dfc::make_dfc(dcfg, cfg.train_seed + 17);

  dataio::FeatureSequence two_step;
  two_step.video_id = "gradcheck";
  two_step.data = Mat(2, dcfg.feature_dim);
  Rng rng(cfg.train_seed + 23);
  for (int i = 0; i < two_step.data.size(); ++i) two_step.data[i] = rng.normal();

  dfc::ElboOptions probe;
  probe.noise_seed = cfg.train_seed + 29;
  dfc::ElboBreakdown bd = dfc::elbo_loss(*dfc_model, two_step, probe.noise_seed);
  std::vector<uint8_t> frozen = bd.changes;
  probe.replay_changes = &frozen;

  GradCheckResult dfc_res = grad_check(
      [&](Tape& tape) {
        return dfc::build_elbo(tape, *dfc_model, two_step, probe).first;
      },
      dfc_model->params);

  efc::EfcConfig ecfg;
  ecfg.feature_dim = 6;
  ecfg.num_classes = 2;
  ecfg.embed_widths = {10};
  auto efc_model = efc::make_efc(ecfg, cfg.train_seed + 31);
  dataio::FeatureSequence clip;
  clip.video_id = "gradcheck";
  clip.data = Mat(12, ecfg.feature_dim);
  for (int i = 0; i < clip.data.size(); ++i) clip.data[i] = rng.normal();
  Mat y(ecfg.num_classes, 1);
  y[0] = 1.0;
  efc::VideoLabel label(y);

  GradCheckResult efc_res = grad_check(
      [&](Tape& tape) { return efc::build_efc_loss(tape, *efc_model, clip, label); },
      efc_model->params);

  std::ostringstream out;
  out << "gradcheck_dfc_max_rel_error=" << dfc_res.max_rel_error << "\n";
  out << "gradcheck_dfc_worst=" << dfc_res.worst_param << "\n";
  out << "gradcheck_efc_max_rel_error=" << efc_res.max_rel_error << "\n";
  out << "gradcheck_efc_worst=" << efc_res.worst_param << "\n";
  std::cout << out.str();

  OutputTracker tracker;
  fs::create_directories(cfg.output_dir);
  std::string path = cfg.output_dir + "/gradcheck.txt";
  tracker.track(path);
  {
    std::ofstream f(path, std::ios::trunc);
    f << out.str();
  }
  config::write_manifest(cfg.output_dir, "gradcheck", cfg);
  tracker.commit();

  bool ok = dfc_res.max_rel_error < 1e-3 && efc_res.max_rel_error < 1e-3;
  if (!ok) std::cerr << "gradcheck: tolerance 1e-3 exceeded\n";
  return ok ? 0 : 1;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Change-point driven action localization toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Config file")->required();
    sub->add_option("--set", overrides, "Override section.key=value (repeatable)");
    sub->add_option("--out", out_dir, "Override paths.output_dir");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus");
  CLI::App* train = app.add_subcommand("train", "Train detector and classifier");
  CLI::App* detect = app.add_subcommand("detect", "Emit change-points and segments");
  CLI::App* evalc = app.add_subcommand("eval", "Score detections against ground truth");
  CLI::App* gradc = app.add_subcommand("gradcheck", "Finite-difference gradient audit");
  for (CLI::App* sub : {gen, train, detect, evalc, gradc}) add_common(sub);

  std::vector<const char*> argv;
  argv.push_back("lseg");
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (!out_dir.empty()) overrides.push_back("paths.output_dir=" + out_dir);
    RunConfig cfg = config::load_run_config(config_path, overrides);
    if (gen->parsed()) return cmd_gen_data(cfg);
    if (train->parsed()) return cmd_train(cfg);
    if (detect->parsed()) return cmd_detect(cfg);
    if (evalc->parsed()) return cmd_eval(cfg);
    if (gradc->parsed()) return cmd_gradcheck(cfg);
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace lseg::cli
