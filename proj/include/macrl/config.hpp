#pragma once

// Flat key=value run configuration.
//
// A config file is plain text: one `key=value` per line, `#` starts a
// comment, blank lines are ignored, whitespace around key and value is
// trimmed. Every field of ModelConfig and TrainConfig is addressable by
// its field name (`enc_dim=64`, `mask_ratio=0.5`, ...), alongside a small
// set of dataset and output keys. Unknown keys are an error, not a
// warning: a typo like `masq_ratio` must not silently train with the
// default.
//
// emit_config writes the complete effective configuration, sorted by key,
// using shortest round-trip formatting for floats, so parsing the emitted
// text reproduces the RunConfig bit for bit.

#include <map>
#include <string>
#include <vector>

#include "macrl/model.hpp"
#include "macrl/train.hpp"

namespace macrl {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  // Dataset selection. "synth" generates the procedural stripes/checker
  // set; anything else is a path to a CIFAR-style binary file or a
  // directory holding data_batch_*.bin (+ optional test_batch.bin).
  std::string data = "synth";
  long long synth_n = 512;       // training examples when data == "synth"
  long long synth_test_n = 256;  // held-out examples when data == "synth"
  long long synth_size = 32;     // synthetic image side length
  long long synth_channels = 3;
  double synth_noise = 0.3;
  long long viz_count = 4;  // images rendered by attn-viz
};

// All recognized keys, sorted. Useful for diagnostics and tests.
std::vector<std::string> config_keys();

// Sets one field. Throws ConfigError naming the key if it is unknown or
// the value does not parse as the field's type.
void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value);

// Parses config-file text into ordered key/value pairs. Syntax errors
// (a non-comment line without '=', an empty key) throw ConfigError with
// the line number.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);

// Reads and applies a config file on top of cfg. Throws IoError if the
// file cannot be read, ConfigError for syntax or key errors.
void load_config_file(RunConfig& cfg, const std::string& path);

// Complete effective configuration as sorted `key=value` lines.
// parse_config_text(emit_config(c)) applied to a default RunConfig
// reproduces c exactly.
std::string emit_config(const RunConfig& cfg);

}  // namespace macrl
