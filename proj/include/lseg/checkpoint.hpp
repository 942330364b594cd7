#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "lseg/dfc.hpp"
#include "lseg/efc.hpp"
#include "lseg/mat.hpp"
#include "lseg/nn.hpp"

namespace lseg::checkpoint {

// Binary checkpoint, little-endian:
//   "LCKP" | u32 version=1 | u32 section | u32 config_len | config JSON
//   | u32 tensor_count | { u32 name_len | name | u32 rows | u32 cols | f64[] }*
inline constexpr uint32_t kSectionDfc = 1;
inline constexpr uint32_t kSectionEfc = 2;

struct NamedTensor {
  std::string name;
  Mat value;
};

struct Checkpoint {
  uint32_t section = 0;
  std::string config_json;
  std::vector<NamedTensor> tensors;
};

void write_checkpoint(const std::string& path, uint32_t section,
                      const std::string& config_json, const ParamStore& params);
Checkpoint read_checkpoint(const std::string& path);

void save_dfc(const std::string& path, const dfc::DfcModel& model);
std::unique_ptr<dfc::DfcModel> load_dfc(const std::string& path);

void save_efc(const std::string& path, const efc::EfcModel& model);
std::unique_ptr<efc::EfcModel> load_efc(const std::string& path);

std::string dfc_config_json(const dfc::DfcConfig& cfg);
dfc::DfcConfig dfc_config_from_json(const std::string& json_text);
std::string efc_config_json(const efc::EfcConfig& cfg);
efc::EfcConfig efc_config_from_json(const std::string& json_text);

}  // namespace lseg::checkpoint
