#include "lseg/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "lseg/dataio.hpp"

namespace lseg::checkpoint {

using dataio::io_error;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'L', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
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

  double f64() {
    need(8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= static_cast<uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
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
      throw io_error(io_error::Kind::Truncated, path_ + ": truncated checkpoint");
  }
  std::string bytes_;
  std::string path_;
  size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::string& path, uint32_t section,
                      const std::string& config_json, const ParamStore& params) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, section);
  put_u32(out, static_cast<uint32_t>(config_json.size()));
  out += config_json;
  put_u32(out, static_cast<uint32_t>(params.count()));
  for (int i = 0; i < params.count(); ++i) {
    const std::string& name = params.name(i);
    const Mat& m = params.value(i);
    put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<uint32_t>(m.rows));
    put_u32(out, static_cast<uint32_t>(m.cols));
    for (double d : m.a) put_f64(out, d);
  }
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw io_error(io_error::Kind::Io, "cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw io_error(io_error::Kind::Io, "short write to " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error(io_error::Kind::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  Reader r(ss.str(), path);

  std::string magic = r.raw(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw io_error(io_error::Kind::BadMagic, path + ": bad checkpoint magic");
  uint32_t version = r.u32();
  if (version != kVersion)
    throw io_error(io_error::Kind::BadVersion,
                   path + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.section = r.u32();
  uint32_t config_len = r.u32();
  ck.config_json = r.raw(config_len);
  uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    uint32_t name_len = r.u32();
    t.name = r.raw(name_len);
    uint32_t rows = r.u32();
    uint32_t cols = r.u32();
    t.value = Mat(static_cast<int>(rows), static_cast<int>(cols));
    for (int j = 0; j < t.value.size(); ++j) t.value[j] = r.f64();
    ck.tensors.push_back(std::move(t));
  }
  if (!r.at_end())
    throw io_error(io_error::Kind::Malformed, path + ": trailing bytes");
  return ck;
}

namespace {

void load_into(const Checkpoint& ck, ParamStore& params, const std::string& path) {
  if (static_cast<int>(ck.tensors.size()) != params.count())
    throw io_error(io_error::Kind::Validation,
                   path + ": tensor count mismatch");
  for (const NamedTensor& t : ck.tensors) {
    bool found = false;
    for (int i = 0; i < params.count(); ++i) {
      if (params.name(i) != t.name) continue;
      if (!params.value(i).same_shape(t.value))
        throw io_error(io_error::Kind::Validation,
                       path + ": shape mismatch for " + t.name);
      params.value(i) = t.value;
      found = true;
      break;
    }
    if (!found)
      throw io_error(io_error::Kind::Validation, path + ": unknown tensor " + t.name);
  }
}

}  // namespace

std::string dfc_config_json(const dfc::DfcConfig& cfg) {
  json j;
  j["feature_dim"] = cfg.feature_dim;
  j["encoder_widths"] = cfg.encoder_widths;
  j["decoder_widths"] = cfg.decoder_widths;
  j["latent1"] = cfg.latent1;
  j["latent2"] = cfg.latent2;
  j["gru_hidden"] = cfg.gru_hidden;
  j["head_hidden"] = cfg.head_hidden;
  j["beta0"] = cfg.beta0;
  j["alpha"] = cfg.alpha;
  j["beta_min"] = cfg.beta_min;
  j["beta_max"] = cfg.beta_max;
  j["warmup"] = cfg.warmup;
  j["static_kl_weight"] = cfg.static_kl_weight;
  return j.dump();
}

dfc::DfcConfig dfc_config_from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  dfc::DfcConfig cfg;
  cfg.feature_dim = j.at("feature_dim").get<int>();
  cfg.encoder_widths = j.at("encoder_widths").get<std::vector<int>>();
  cfg.decoder_widths = j.at("decoder_widths").get<std::vector<int>>();
  cfg.latent1 = j.at("latent1").get<int>();
  cfg.latent2 = j.at("latent2").get<int>();
  cfg.gru_hidden = j.at("gru_hidden").get<int>();
  cfg.head_hidden = j.at("head_hidden").get<int>();
  cfg.beta0 = j.at("beta0").get<double>();
  cfg.alpha = j.at("alpha").get<double>();
  cfg.beta_min = j.at("beta_min").get<double>();
  cfg.beta_max = j.at("beta_max").get<double>();
  cfg.warmup = j.at("warmup").get<int>();
  cfg.static_kl_weight = j.at("static_kl_weight").get<double>();
  return cfg;
}

std::string efc_config_json(const efc::EfcConfig& cfg) {
  json j;
  j["feature_dim"] = cfg.feature_dim;
  j["num_classes"] = cfg.num_classes;
  j["embed_widths"] = cfg.embed_widths;
  return j.dump();
}

efc::EfcConfig efc_config_from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  efc::EfcConfig cfg;
  cfg.feature_dim = j.at("feature_dim").get<int>();
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.embed_widths = j.at("embed_widths").get<std::vector<int>>();
  return cfg;
}

void save_dfc(const std::string& path, const dfc::DfcModel& model) {
  write_checkpoint(path, kSectionDfc, dfc_config_json(model.cfg), model.params);
}

std::unique_ptr<dfc::DfcModel> load_dfc(const std::string& path) {
  Checkpoint ck = read_checkpoint(path);
  if (ck.section != kSectionDfc)
    throw io_error(io_error::Kind::Validation, path + ": not a detector checkpoint");
  auto model = dfc::make_dfc(dfc_config_from_json(ck.config_json), 0);
  load_into(ck, model->params, path);
  return model;
}

void save_efc(const std::string& path, const efc::EfcModel& model) {
  write_checkpoint(path, kSectionEfc, efc_config_json(model.cfg), model.params);
}

std::unique_ptr<efc::EfcModel> load_efc(const std::string& path) {
  Checkpoint ck = read_checkpoint(path);
  if (ck.section != kSectionEfc)
    throw io_error(io_error::Kind::Validation, path + ": not a classifier checkpoint");
  auto model = efc::make_efc(efc_config_from_json(ck.config_json), 0);
  load_into(ck, model->params, path);
  return model;
}

}  // namespace lseg::checkpoint
