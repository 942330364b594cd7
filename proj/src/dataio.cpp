#include "lseg/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lseg/rng.hpp"

namespace lseg::dataio {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'L', 'S', 'E', 'G'};
constexpr uint32_t kFeatureVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

class Reader {
 public:
  Reader(std::string bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  double f64() {
    uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }

  std::string raw(size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(size_t n) {
    if (pos_ + n > bytes_.size())
      throw io_error(io_error::Kind::Truncated, path_ + ": truncated file");
  }
  std::string bytes_;
  std::string path_;
  size_t pos_ = 0;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error(io_error::Kind::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spew(const std::string& path, const std::string& bytes) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error(io_error::Kind::Io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw io_error(io_error::Kind::Io, "short write to " + path);
}

std::string format_double(double d) {
  std::ostringstream ss;
  ss.precision(17);
  ss << d;
  return ss.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

int parse_int(const std::string& s, const std::string& ctx) {
  try {
    size_t used = 0;
    int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw io_error(io_error::Kind::Malformed, ctx + ": bad integer '" + s + "'");
  }
}

double parse_double(const std::string& s, const std::string& ctx) {
  try {
    size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw io_error(io_error::Kind::Malformed, ctx + ": bad number '" + s + "'");
  }
}

}  // namespace

void write_features(const std::string& path, const FeatureSequence& fs_in) {
  if (fs_in.data.rows < 1 || fs_in.data.cols < 1)
    throw io_error(io_error::Kind::Validation, "write_features: empty matrix");
  if (!fs_in.data.all_finite())
    throw io_error(io_error::Kind::Validation, "write_features: non-finite values");
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kFeatureVersion);
  put_u32(out, static_cast<uint32_t>(fs_in.data.rows));
  put_u32(out, static_cast<uint32_t>(fs_in.data.cols));
  put_u64(out, 0);
  for (double d : fs_in.data.a) put_f64(out, d);
  spew(path, out);
}

FeatureSequence read_features(const std::string& path) {
  Reader r(slurp(path), path);
  std::string magic = r.raw(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw io_error(io_error::Kind::BadMagic, path + ": bad magic");
  uint32_t version = r.u32();
  if (version != kFeatureVersion)
    throw io_error(io_error::Kind::BadVersion,
                   path + ": unsupported version " + std::to_string(version));
  uint32_t t = r.u32();
  uint32_t f = r.u32();
  r.u64();  // reserved
  if (t < 1 || f < 1)
    throw io_error(io_error::Kind::Malformed, path + ": empty dimensions");
  FeatureSequence fseq;
  fseq.video_id = fs::path(path).stem().string();
  fseq.data = Mat(static_cast<int>(t), static_cast<int>(f));
  for (int i = 0; i < fseq.data.size(); ++i) fseq.data[i] = r.f64();
  if (!r.at_end())
    throw io_error(io_error::Kind::Malformed, path + ": trailing bytes");
  if (!fseq.data.all_finite())
    throw io_error(io_error::Kind::Validation, path + ": non-finite features");
  return fseq;
}

Mat VideoGroundTruth::label(int num_classes) const {
  if (segments.empty())
    throw io_error(io_error::Kind::Validation,
                   video_id + ": no annotations, label undefined");
  Mat y(num_classes, 1);
  for (const AnnotatedSegment& s : segments) {
    if (s.class_id < 0 || s.class_id >= num_classes)
      throw io_error(io_error::Kind::Validation,
                     video_id + ": class id out of range");
    y[s.class_id] = 1.0;
  }
  double total = 0.0;
  for (int i = 0; i < y.size(); ++i) total += y[i];
  for (int i = 0; i < y.size(); ++i) y[i] /= total;
  return y;
}

ChangePointSet VideoGroundTruth::change_points(int t_total) const {
  std::vector<int> pts;
  for (const AnnotatedSegment& s : segments) {
    if (s.start > 0) pts.push_back(s.start);
    if (s.end < t_total) pts.push_back(s.end);
  }
  return ChangePointSet::from(std::move(pts), t_total);
}

const VideoGroundTruth* GroundTruth::find(const std::string& video_id) const {
  for (const VideoGroundTruth& v : videos)
    if (v.video_id == video_id) return &v;
  return nullptr;
}

GroundTruth read_annotations(const std::string& path) {
  std::string text = slurp(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw io_error(io_error::Kind::Malformed, path + ": missing header line");
  {
    auto fields = split_csv(line);
    if (fields.size() != 4 || fields[0] != "video_id")
      throw io_error(io_error::Kind::Malformed, path + ": bad header line");
  }
  GroundTruth gt;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv(line);
    std::string ctx = path + ":" + std::to_string(line_no);
    if (fields.size() != 4)
      throw io_error(io_error::Kind::Malformed, ctx + ": expected 4 fields");
    AnnotatedSegment seg;
    seg.start = parse_int(fields[1], ctx);
    seg.end = parse_int(fields[2], ctx);
    seg.class_id = parse_int(fields[3], ctx);
    if (seg.start < 0 || seg.end <= seg.start)
      throw io_error(io_error::Kind::Validation,
                     ctx + ": bad interval [" + fields[1] + ", " + fields[2] + ")");
    if (seg.class_id < 0)
      throw io_error(io_error::Kind::Validation, ctx + ": negative class id");
    VideoGroundTruth* video = nullptr;
    for (VideoGroundTruth& v : gt.videos)
      if (v.video_id == fields[0]) video = &v;
    if (!video) {
      gt.videos.push_back(VideoGroundTruth{fields[0], {}});
      video = &gt.videos.back();
    }
    for (const AnnotatedSegment& other : video->segments)
      if (seg.start < other.end && other.start < seg.end)
        throw io_error(io_error::Kind::Validation,
                       ctx + ": overlaps earlier segment of " + fields[0]);
    video->segments.push_back(seg);
  }
  for (VideoGroundTruth& v : gt.videos)
    std::sort(v.segments.begin(), v.segments.end(),
              [](const AnnotatedSegment& a, const AnnotatedSegment& b) {
                return a.start < b.start;
              });
  return gt;
}

void write_annotations(const std::string& path, const GroundTruth& gt) {
  std::string out = "video_id,start,end,class_id\n";
  for (const VideoGroundTruth& v : gt.videos)
    for (const AnnotatedSegment& s : v.segments)
      out += v.video_id + "," + std::to_string(s.start) + "," +
             std::to_string(s.end) + "," + std::to_string(s.class_id) + "\n";
  spew(path, out);
}

void GenSpec::validate() const {
  if (num_videos < 1) throw io_error(io_error::Kind::Validation, "gen: num_videos < 1");
  if (t_min < 2 || t_max < t_min)
    throw io_error(io_error::Kind::Validation, "gen: bad snippet-count range");
  if (feature_dim < 1 || num_classes < 1)
    throw io_error(io_error::Kind::Validation, "gen: bad dimensions");
  if (noise_sigma < 0.0)
    throw io_error(io_error::Kind::Validation, "gen: negative noise sigma");
  if (min_segments < 1 || max_segments < min_segments)
    throw io_error(io_error::Kind::Validation, "gen: bad segment-count range");
  if (background_fraction <= 0.0 || background_fraction >= 1.0)
    throw io_error(io_error::Kind::Validation, "gen: background fraction must be in (0,1)");
  if (min_regime_len < 1)
    throw io_error(io_error::Kind::Validation, "gen: min regime length < 1");
  int regimes = 2 * max_segments + 1;
  if (regimes * min_regime_len > t_min)
    throw io_error(io_error::Kind::Validation,
                   "gen: infeasible: " + std::to_string(regimes) + " regimes x " +
                       std::to_string(min_regime_len) + " min length > T=" +
                       std::to_string(t_min));
  if (prototypes.size() > 0) {
    if (prototypes.rows != num_classes + 1 || prototypes.cols != feature_dim)
      throw io_error(io_error::Kind::Validation, "gen: prototype shape mismatch");
    for (int i = 0; i < prototypes.rows; ++i)
      for (int j = i + 1; j < prototypes.rows; ++j) {
        double c = cosine_similarity(row_of(prototypes, i), row_of(prototypes, j));
        if (std::fabs(c) > 0.999)
          throw io_error(io_error::Kind::Validation, "gen: collinear prototypes");
      }
  }
}

Mat default_prototypes(int num_classes, int feature_dim) {
  int n = num_classes + 1;
  if (feature_dim < n) throw io_error(io_error::Kind::Validation,
                                      "prototypes: feature dim below class count");
  Mat protos(n, feature_dim);
  int block = feature_dim / n;
  for (int c = 0; c < n; ++c) {
    int lo = c * block;
    int hi = (c == n - 1) ? feature_dim : lo + block;
    double v = 1.0 / std::sqrt(static_cast<double>(hi - lo));
    for (int j = lo; j < hi; ++j) protos.at(c, j) = v;
  }
  return protos;
}

namespace {

struct Regime {
  int len;
  int class_id;  // num_classes means background
};

std::vector<Regime> plan_regimes(const GenSpec& spec, int t, Rng& rng) {
  int n_act = rng.uniform_int(spec.min_segments, spec.max_segments);
  int n_reg = 2 * n_act + 1;
  int bg_total = static_cast<int>(std::lround(spec.background_fraction * t));
  int act_total = t - bg_total;
  int n_bg = n_act + 1;
  bg_total = std::max(bg_total, n_bg * spec.min_regime_len);
  act_total = t - bg_total;
  if (act_total < n_act * spec.min_regime_len) {
    act_total = n_act * spec.min_regime_len;
    bg_total = t - act_total;
  }

  // Dirichlet-free split: random proportional slack on top of the minimum.
  auto split = [&](int total, int parts) {
    std::vector<int> lens(static_cast<size_t>(parts), spec.min_regime_len);
    int slack = total - parts * spec.min_regime_len;
    std::vector<double> wts(static_cast<size_t>(parts));
    double sum = 0.0;
    for (double& w : wts) {
      w = 0.05 + rng.uniform();
      sum += w;
    }
    int used = 0;
    for (int i = 0; i < parts; ++i) {
      int extra = (i == parts - 1)
                      ? slack - used
                      : static_cast<int>(std::floor(slack * wts[static_cast<size_t>(i)] / sum));
      lens[static_cast<size_t>(i)] += extra;
      used += extra;
    }
    return lens;
  };

  std::vector<int> bg_lens = split(bg_total, n_bg);
  std::vector<int> act_lens = split(act_total, n_act);
  int video_class = rng.uniform_int(0, spec.num_classes - 1);

  std::vector<Regime> plan;
  plan.reserve(static_cast<size_t>(n_reg));
  for (int i = 0; i < n_act; ++i) {
    plan.push_back({bg_lens[static_cast<size_t>(i)], spec.num_classes});
    plan.push_back({act_lens[static_cast<size_t>(i)], video_class});
  }
  plan.push_back({bg_lens[static_cast<size_t>(n_act)], spec.num_classes});
  return plan;
}

}  // namespace

std::vector<CorpusVideo> generate_corpus(const GenSpec& spec) {
  spec.validate();
  Mat protos = spec.prototypes.size() > 0
                   ? spec.prototypes
                   : default_prototypes(spec.num_classes, spec.feature_dim);
  double drift = spec.effective_drift();
  Rng rng(spec.seed);
  std::vector<CorpusVideo> corpus;
  corpus.reserve(static_cast<size_t>(spec.num_videos));
  for (int v = 0; v < spec.num_videos; ++v) {
    int t = rng.uniform_int(spec.t_min, spec.t_max);
    std::vector<Regime> plan = plan_regimes(spec, t, rng);

    CorpusVideo video;
    video.features.video_id = "video_" + std::to_string(spec.seed) + "_" + std::to_string(v);
    video.features.data = Mat(t, spec.feature_dim);
    video.truth.video_id = video.features.video_id;

    int pos = 0;
    for (const Regime& reg : plan) {
      Mat dir(spec.feature_dim, 1);
      rng.fill_normal(dir);
      double norm = std::sqrt(squared_norm(dir));
      if (norm > 1e-12)
        for (int i = 0; i < dir.size(); ++i) dir[i] /= norm;
      double period = rng.uniform(40.0, 80.0);
      double phase = rng.uniform(0.0, 6.283185307179586);
      for (int s = 0; s < reg.len; ++s) {
        double wobble = std::sin(6.283185307179586 * s / period + phase);
        for (int jf = 0; jf < spec.feature_dim; ++jf) {
          double val = protos.at(reg.class_id, jf) + drift * wobble * dir[jf] +
                       spec.noise_sigma * rng.normal();
          video.features.data.at(pos + s, jf) = val;
        }
      }
      if (reg.class_id < spec.num_classes)
        video.truth.segments.push_back({pos, pos + reg.len, reg.class_id});
      pos += reg.len;
    }
    corpus.push_back(std::move(video));
  }
  return corpus;
}

void write_corpus(const std::string& dir, const std::vector<CorpusVideo>& corpus) {
  fs::create_directories(fs::path(dir) / "features");
  GroundTruth gt;
  for (const CorpusVideo& v : corpus) {
    write_features((fs::path(dir) / "features" / (v.features.video_id + ".feat")).string(),
                   v.features);
    gt.videos.push_back(v.truth);
  }
  write_annotations((fs::path(dir) / "annotations.csv").string(), gt);
}

std::vector<CorpusVideo> load_corpus(const std::string& dir) {
  fs::path base(dir);
  if (!fs::exists(base / "annotations.csv"))
    throw io_error(io_error::Kind::Io, dir + ": missing annotations.csv");
  GroundTruth gt = read_annotations((base / "annotations.csv").string());
  std::vector<CorpusVideo> corpus;
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(base / "features"))
    if (entry.path().extension() == ".feat") paths.push_back(entry.path());
  std::sort(paths.begin(), paths.end());
  for (const fs::path& p : paths) {
    CorpusVideo v;
    v.features = read_features(p.string());
    const VideoGroundTruth* truth = gt.find(v.features.video_id);
    if (!truth)
      throw io_error(io_error::Kind::Validation,
                     p.string() + ": no annotations for video");
    for (const AnnotatedSegment& s : truth->segments)
      if (s.end > v.features.snippet_count())
        throw io_error(io_error::Kind::Validation,
                       v.features.video_id + ": annotation beyond T");
    v.truth = *truth;
    corpus.push_back(std::move(v));
  }
  return corpus;
}

void write_segments(const std::string& path, const std::vector<PredictedSegment>& segs) {
  std::string out = "video_id,start,end,class_id,score\n";
  for (const PredictedSegment& p : segs)
    out += p.video_id + "," + std::to_string(p.seg.start) + "," +
           std::to_string(p.seg.end) + "," + std::to_string(p.seg.class_id) + "," +
           format_double(p.seg.score) + "\n";
  spew(path, out);
}

std::vector<PredictedSegment> read_segments(const std::string& path) {
  std::string text = slurp(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw io_error(io_error::Kind::Malformed, path + ": missing header line");
  std::vector<PredictedSegment> segs;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv(line);
    std::string ctx = path + ":" + std::to_string(line_no);
    if (fields.size() != 5)
      throw io_error(io_error::Kind::Malformed, ctx + ": expected 5 fields");
    PredictedSegment p;
    p.video_id = fields[0];
    p.seg.start = parse_int(fields[1], ctx);
    p.seg.end = parse_int(fields[2], ctx);
    p.seg.class_id = parse_int(fields[3], ctx);
    p.seg.score = parse_double(fields[4], ctx);
    segs.push_back(std::move(p));
  }
  return segs;
}

void write_change_points(const std::string& path,
                         const std::vector<VideoChangePoints>& cps) {
  std::string out = "video_id,snippet\n";
  for (const VideoChangePoints& v : cps)
    for (int p : v.points.points)
      out += v.video_id + "," + std::to_string(p) + "\n";
  spew(path, out);
}

std::vector<VideoChangePoints> read_change_points(const std::string& path) {
  std::string text = slurp(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw io_error(io_error::Kind::Malformed, path + ": missing header line");
  std::vector<VideoChangePoints> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv(line);
    std::string ctx = path + ":" + std::to_string(line_no);
    if (fields.size() != 2)
      throw io_error(io_error::Kind::Malformed, ctx + ": expected 2 fields");
    int snippet = parse_int(fields[1], ctx);
    VideoChangePoints* v = nullptr;
    for (VideoChangePoints& existing : out)
      if (existing.video_id == fields[0]) v = &existing;
    if (!v) {
      out.push_back(VideoChangePoints{fields[0], {}});
      v = &out.back();
    }
    v->points.points.push_back(snippet);
  }
  for (VideoChangePoints& v : out)
    std::sort(v.points.points.begin(), v.points.points.end());
  return out;
}

}  // namespace lseg::dataio
