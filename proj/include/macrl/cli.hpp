#pragma once

// Command-line driver.
//
// Subcommands: pretrain, finetune, linprobe, attn-viz. Each takes
//   --config FILE     flat key=value config (optional; defaults per stage)
//   --data PATH       "synth", a CIFAR-style .bin file, or a directory of
//                     data_batch_*.bin (+ optional test_batch.bin)
//   --out DIR         output directory (default "out")
//   --set key=value   repeatable config override, applied after the file
//   --seed N          overrides the config seed
// finetune, linprobe and attn-viz additionally require --ckpt FILE.
//
// Exit codes: 0 success; 1 bad usage or bad configuration (unknown flag or
// key, unparsable value, missing checkpoint argument, stage mismatch);
// 2 runtime failure (unreadable data, corrupt checkpoint, diverged loss,
// output I/O errors).
//
// A run writes into --out: effective.cfg (the complete configuration,
// re-parsable), metrics.csv (one row per optimizer step), final.ckpt, and
// step_<N>.ckpt at the ckpt_every cadence. attn-viz writes image pairs
// instead: img_<i>_orig.ppm and img_<i>_attn.ppm.

#include <iosfwd>
#include <string>
#include <vector>

#include "macrl/config.hpp"
#include "macrl/train.hpp"

namespace macrl {

// One parsed invocation.
struct RunSpec {
  std::string subcommand;  // pretrain | finetune | linprobe | attn-viz
  std::string config_path;
  std::string data_path;              // empty = leave cfg.data alone
  std::string checkpoint_in;
  std::string output_dir = "out";
  std::vector<std::string> overrides;  // raw key=value from --set
  bool has_seed = false;
  std::uint64_t seed = 0;
};

// Builds the effective RunConfig for a parsed invocation: stage defaults,
// then the config file, then --set pairs, then --data / --seed. Enforces
// stage consistency and validates. Throws ConfigError / IoError.
RunConfig build_run_config(const RunSpec& spec);

// Appends MetricsRow lines to a CSV file, writing the header only when the
// file starts empty, flushing after every row. Disengaged optional columns
// are left blank.
class MetricsWriter {
 public:
  static constexpr const char* kHeader = "step,epoch,lr,cl_loss,mim_loss,total_loss,accuracy";

  explicit MetricsWriter(const std::string& path);
  ~MetricsWriter();
  void write(const MetricsRow& row);

 private:
  struct Impl;
  Impl* impl_;
};

// Full driver: parse args (without the program name), run, report errors
// on err. Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace macrl
