#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "numerics/params.hpp"
#include "train/optim.hpp"

namespace frn::train {

struct Record {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

/// FRNW v1: "FRNW", u32 version, u64 step, then records of
/// [u16 name length, name, u8 rank, rank x u32 dims, f32 data], little-endian.
struct Checkpoint {
  std::uint64_t step = 0;
  std::vector<Record> records;

  const Record* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Record name holding an opaque UTF-8 config document, one byte per f32.
inline constexpr const char* kConfigRecord = "meta/config_json";

/// Parameters, Adam moments under "adam.m/<name>" and "adam.v/<name>", and
/// the config text.
Checkpoint make_checkpoint(const ParameterStore& params, const Adam* adam, std::uint64_t step,
                           const std::string& config_json);

/// Copies parameter values (and moments when adam is given) in place. Every
/// parameter must be present with a matching shape.
void restore_checkpoint(const Checkpoint& ckpt, ParameterStore& params, Adam* adam);

std::string checkpoint_config(const Checkpoint& ckpt);

}  // namespace frn::train
