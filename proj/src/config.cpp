#include "lseg/config.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace lseg::config {

using dataio::io_error;

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int to_int(const std::string& v, const std::string& key) {
  try {
    size_t used = 0;
    int x = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw io_error(io_error::Kind::Malformed, "config: bad integer for " + key);
  }
}

uint64_t to_u64(const std::string& v, const std::string& key) {
  try {
    size_t used = 0;
    unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<uint64_t>(x);
  } catch (const std::exception&) {
    throw io_error(io_error::Kind::Malformed, "config: bad seed for " + key);
  }
}

double to_double(const std::string& v, const std::string& key) {
  try {
    size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw io_error(io_error::Kind::Malformed, "config: bad number for " + key);
  }
}

std::vector<int> to_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_int(trim(item), key));
  if (out.empty()) throw io_error(io_error::Kind::Malformed, "config: empty list for " + key);
  return out;
}

std::vector<double> to_double_list(const std::string& v, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(trim(item), key));
  if (out.empty()) throw io_error(io_error::Kind::Malformed, "config: empty list for " + key);
  return out;
}

class KeyReader {
 public:
  explicit KeyReader(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string str(const std::string& key, const std::string& dflt) {
    used_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : it->second;
  }
  int num(const std::string& key, int dflt) {
    used_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : to_int(it->second, key);
  }
  uint64_t seed(const std::string& key, uint64_t dflt) {
    used_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : to_u64(it->second, key);
  }
  double real(const std::string& key, double dflt) {
    used_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : to_double(it->second, key);
  }
  std::vector<int> int_list(const std::string& key, std::vector<int> dflt) {
    used_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : to_int_list(it->second, key);
  }
  std::vector<double> double_list(const std::string& key, std::vector<double> dflt) {
    used_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : to_double_list(it->second, key);
  }

  void reject_unknown() const {
    for (const auto& [key, value] : kv_)
      if (!used_.count(key))
        throw io_error(io_error::Kind::Validation, "config: unknown key " + key);
  }

  const std::map<std::string, std::string>& raw() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
  std::set<std::string> used_;
};

}  // namespace

std::map<std::string, std::string> parse_ini(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw io_error(io_error::Kind::Malformed,
                       "config line " + std::to_string(line_no) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw io_error(io_error::Kind::Malformed,
                     "config line " + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw io_error(io_error::Kind::Malformed,
                     "config line " + std::to_string(line_no) + ": empty key");
    kv[section.empty() ? key : section + "." + key] = value;
  }
  return kv;
}

RunConfig parse_run_config(const std::string& text,
                           const std::vector<std::string>& overrides) {
  std::map<std::string, std::string> kv = parse_ini(text);
  for (const std::string& ov : overrides) {
    size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw io_error(io_error::Kind::Malformed, "--set expects section.key=value, got " + ov);
    kv[trim(ov.substr(0, eq))] = trim(ov.substr(eq + 1));
  }

  KeyReader r(std::move(kv));
  RunConfig c;

  c.corpus_dir = r.str("paths.corpus_dir", c.corpus_dir);
  c.output_dir = r.str("paths.output_dir", c.output_dir);
  c.dfc_checkpoint = r.str("paths.dfc_checkpoint", c.output_dir + "/dfc.ckpt");
  c.efc_checkpoint = r.str("paths.efc_checkpoint", c.output_dir + "/efc.ckpt");

  c.gen_seed = r.seed("gen.seed", c.gen_seed);
  c.train_videos = r.num("gen.train_videos", c.train_videos);
  c.test_videos = r.num("gen.test_videos", c.test_videos);
  c.gen_base.t_min = r.num("gen.t_min", c.gen_base.t_min);
  c.gen_base.t_max = r.num("gen.t_max", c.gen_base.t_max);
  c.gen_base.feature_dim = r.num("gen.feature_dim", c.gen_base.feature_dim);
  c.gen_base.num_classes = r.num("gen.num_classes", c.gen_base.num_classes);
  c.gen_base.noise_sigma = r.real("gen.noise_sigma", c.gen_base.noise_sigma);
  c.gen_base.drift_amp = r.real("gen.drift_amp", c.gen_base.drift_amp);
  c.gen_base.min_segments = r.num("gen.min_segments", c.gen_base.min_segments);
  c.gen_base.max_segments = r.num("gen.max_segments", c.gen_base.max_segments);
  c.gen_base.background_fraction =
      r.real("gen.background_fraction", c.gen_base.background_fraction);
  c.gen_base.min_regime_len = r.num("gen.min_regime_len", c.gen_base.min_regime_len);

  c.dfc.feature_dim = c.gen_base.feature_dim;
  c.dfc.encoder_widths = r.int_list("dfc.encoder_widths", c.dfc.encoder_widths);
  c.dfc.decoder_widths = r.int_list("dfc.decoder_widths", c.dfc.decoder_widths);
  c.dfc.latent1 = r.num("dfc.latent1", c.dfc.latent1);
  c.dfc.latent2 = r.num("dfc.latent2", c.dfc.latent2);
  c.dfc.gru_hidden = r.num("dfc.gru_hidden", c.dfc.gru_hidden);
  c.dfc.head_hidden = r.num("dfc.head_hidden", c.dfc.head_hidden);
  c.dfc.beta0 = r.real("dfc.beta0", c.dfc.beta0);
  c.dfc.alpha = r.real("dfc.alpha", c.dfc.alpha);
  c.dfc.beta_min = r.real("dfc.beta_min", c.dfc.beta_min);
  c.dfc.beta_max = r.real("dfc.beta_max", c.dfc.beta_max);
  c.dfc.warmup = r.num("dfc.warmup", c.dfc.warmup);
  c.dfc.static_kl_weight = r.real("dfc.static_kl_weight", c.dfc.static_kl_weight);
  c.dfc.validate();

  c.efc.feature_dim = c.gen_base.feature_dim;
  c.efc.num_classes = c.gen_base.num_classes;
  c.efc.embed_widths = r.int_list("efc.embed_widths", c.efc.embed_widths);
  c.efc.validate();

  c.lcs.cosine_threshold = r.real("lcs.cosine_threshold", c.lcs.cosine_threshold);
  c.lcs.redundancy_ratio = r.real("lcs.redundancy_ratio", c.lcs.redundancy_ratio);
  c.lcs.fg_threshold = r.real("lcs.fg_threshold", c.lcs.fg_threshold);
  c.lcs.validate();

  c.train_seed = r.seed("train.seed", c.train_seed);
  c.epochs_dfc = r.num("train.epochs_dfc", c.epochs_dfc);
  c.epochs_efc = r.num("train.epochs_efc", c.epochs_efc);
  c.batch_size = r.num("train.batch_size", c.batch_size);
  c.lr = r.real("train.lr", c.lr);
  c.weight_decay = r.real("train.weight_decay", c.weight_decay);

  c.detect_split = r.str("detect.split", c.detect_split);
  if (c.detect_split != "train" && c.detect_split != "test")
    throw io_error(io_error::Kind::Validation, "config: detect.split must be train or test");

  c.iou_thresholds = r.double_list("eval.iou_thresholds", c.iou_thresholds);
  c.cp_tolerance = r.num("eval.cp_tolerance", c.cp_tolerance);

  r.reject_unknown();

  std::ostringstream canon;
  for (const auto& [key, value] : r.raw()) canon << key << "=" << value << "\n";
  c.canonical_text = canon.str();
  c.config_hash = hash_text(c.canonical_text);
  return c;
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw io_error(io_error::Kind::Io, "cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), overrides);
}

dataio::GenSpec RunConfig::gen_spec(const std::string& split) const {
  dataio::GenSpec spec = gen_base;
  if (split == "train") {
    spec.seed = gen_seed;
    spec.num_videos = train_videos;
  } else if (split == "test") {
    spec.seed = gen_seed + 1;
    spec.num_videos = test_videos;
  } else {
    throw io_error(io_error::Kind::Validation, "unknown split " + split);
  }
  return spec;
}

std::string RunConfig::train_dir() const { return corpus_dir + "/train"; }
std::string RunConfig::test_dir() const { return corpus_dir + "/test"; }
std::string RunConfig::split_dir(const std::string& split) const {
  return split == "train" ? train_dir() : test_dir();
}

std::string hash_text(const std::string& text) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

void write_manifest(const std::string& dir, const std::string& command,
                    const RunConfig& cfg) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir + "/manifest.txt", std::ios::trunc);
  if (!out) throw io_error(io_error::Kind::Io, "cannot write manifest in " + dir);
  out << "command=" << command << "\n";
  out << "config_hash=" << cfg.config_hash << "\n";
  out << "gen_seed=" << cfg.gen_seed << "\n";
  out << "train_seed=" << cfg.train_seed << "\n";
  out << "toolkit_version=" << kToolkitVersion << "\n";
  out << "feature_format_version=1\n";
  out << "checkpoint_format_version=1\n";
}

}  // namespace lseg::config
