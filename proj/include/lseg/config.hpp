#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lseg/boundary.hpp"
#include "lseg/dataio.hpp"
#include "lseg/dfc.hpp"
#include "lseg/efc.hpp"

namespace lseg::config {

// Key-value config with [section] headers; '#' and ';' start comments.
// Flat view keyed "section.key". Overrides use the same "section.key=value"
// form.
std::map<std::string, std::string> parse_ini(const std::string& text);

struct RunConfig {
  std::string corpus_dir = "data";
  std::string output_dir = "out";
  std::string dfc_checkpoint;  // defaults to <output_dir>/dfc.ckpt
  std::string efc_checkpoint;  // defaults to <output_dir>/efc.ckpt

  uint64_t gen_seed = 7;
  int train_videos = 128;
  int test_videos = 32;
  dataio::GenSpec gen_base;  // num_videos/seed filled per split

  dfc::DfcConfig dfc;
  efc::EfcConfig efc;
  boundary::LcsConfig lcs;

  uint64_t train_seed = 1;
  int epochs_dfc = 60;
  int epochs_efc = 60;
  int batch_size = 16;
  double lr = 1e-4;
  double weight_decay = 5e-4;

  std::string detect_split = "test";

  std::vector<double> iou_thresholds = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  int cp_tolerance = 2;

  std::string canonical_text;
  std::string config_hash;

  dataio::GenSpec gen_spec(const std::string& split) const;
  std::string train_dir() const;
  std::string test_dir() const;
  std::string split_dir(const std::string& split) const;
};

RunConfig parse_run_config(const std::string& text,
                           const std::vector<std::string>& overrides);
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides);

// FNV-1a over the canonical "key=value" listing.
std::string hash_text(const std::string& text);

inline constexpr const char* kToolkitVersion = "0.1.0";

// Reproducibility record placed next to command outputs. Content is a pure
// function of the command and config, so reruns stay byte-identical.
void write_manifest(const std::string& dir, const std::string& command,
                    const RunConfig& cfg);

}  // namespace lseg::config
