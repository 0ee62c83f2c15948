#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dgve/datasets.hpp"
#include "dgve/training.hpp"

namespace dgve {

struct SchedulerConfig {
  int64_t delta_t = 15;
  bool warm_start = true;  // frame 0 is always a key frame
  void validate() const;
};

// Everything a CLI invocation can set. Each field has exactly one key.
struct RunConfig {
  TrainConfig train;  // train.seed is the global seed, train.delta_t the key-frame interval
  bool warm_start = true;

  // Data synthesis and sampling.
  std::array<double, 3> split_ratios{0.7, 0.2, 0.1};
  int64_t patch = 64;         // HQ patch side
  int64_t pairs = 256;        // synthesized pairs per corpus
  std::vector<DegradationKind> kinds{kBasicKinds.begin(), kBasicKinds.end()};
  std::vector<DegradationLevel> levels{kAllLevels.begin(), kAllLevels.end()};
  int64_t synth_count = 16;   // images produced by `synth`
  int64_t synth_size = 192;
  int64_t synth_frames = 30;
  int64_t synth_clips = 2;
  int64_t synth_clip_size = 64;

  // Paths.
  std::string data_dir;
  std::string out_dir = "run";
  std::string input;
  std::string output;
  std::string checkpoint;
  std::string reference;
  std::string niqe_model;
  std::string split = "test";
  bool resume = false;

  // Inference.
  int64_t timing_repeats = 1;
  int64_t budget_height = 160, budget_width = 160;

  SchedulerConfig scheduler() const { return {train.delta_t, warm_start}; }
  void validate() const;
};

struct ConfigField {
  std::string key;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<ConfigField>& config_fields();
// Throws ParameterError on unknown keys or unparsable values.
void set_field(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_field(const RunConfig& cfg, const std::string& key);

// "key = value" lines for every field, in registry order.
std::string to_key_values(const RunConfig& cfg);
void apply_key_values(RunConfig& cfg, const std::string& text);
// Flattens nested TOML tables into dotted keys.
void apply_toml(RunConfig& cfg, const std::string& text, const std::string& source_name = "config");
RunConfig load_config_file(const std::filesystem::path& file);

std::string arch_to_key_values(const ArchConfig& arch);
ArchConfig arch_from_key_values(const std::string& text);

std::string join_kinds(const std::vector<DegradationKind>& kinds);
std::vector<DegradationKind> parse_kinds(const std::string& csv);
std::vector<DegradationLevel> parse_levels(const std::string& csv);

}  // namespace dgve
