#pragma once

#include "fbn/data.hpp"
#include "fbn/pose_net.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fbn {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// `[section]` headers, `key = value` lines, `#` / `;` comments.
class Ini {
 public:
  static Ini parse(std::string_view text, const std::string& source = "<string>");
  static Ini load(const std::filesystem::path& path);

  bool has(const std::string& section) const { return sections_.count(section) != 0; }
  std::optional<std::string> get(const std::string& section, const std::string& key) const;
  void set(const std::string& section, const std::string& key, std::string value);
  const std::map<std::string, std::map<std::string, std::string>>& sections() const { return sections_; }
  // Line of a key (0 if set programmatically), for error messages.
  std::size_t line(const std::string& section, const std::string& key) const;
  const std::string& source() const { return source_; }

 private:
  std::string source_;
  std::map<std::string, std::map<std::string, std::string>> sections_;
  std::map<std::string, std::size_t> lines_;
};

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 4;
  double lr = 0.05;
  double momentum = 0.9;
  double lr_decay = 1.0;        // multiply lr by this every `decay_every` steps
  std::size_t decay_every = 0;  // 0 disables the schedule
  std::size_t warmup = 0;       // linear ramp over the first steps
  double clip_norm = 0.0;       // rescale the batch gradient to at most this global norm; 0 = off
  std::uint64_t init_seed = 1;
  std::uint64_t shuffle_seed = 1;
  std::size_t log_every = 100;
  std::size_t checkpoint_every = 0;
  bool augment = false;  // per-step augmentation of training samples

  double lr_at(std::size_t step) const;
  void validate() const;
};

struct RunConfig {
  NetworkConfig network;
  DataConfig data;             // training set (generated unless data_path is set)
  std::string data_path;
  std::size_t eval_count = 0;  // held-out set drawn with eval_seed
  std::uint64_t eval_seed = 2;
  TrainConfig training;

  DataConfig eval_data() const;
  void validate() const;
};

RunConfig run_config_from(const Ini& ini);
RunConfig load_run_config(const std::filesystem::path& path);
// Canonical text listing every key; run_config_from(Ini::parse(to_ini(c))) reproduces c.
std::string to_ini(const RunConfig& c);

DataConfig data_config_from(const Ini& ini);
// [data] section of a dataset meta file, graph included.
std::string data_ini(const DataConfig& c);

std::uint64_t config_digest(const RunConfig& c);

// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

}  // namespace fbn
