#include "macrl/cli.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>

#include <CLI11.hpp>

#include "macrl/checkpoint.hpp"
#include "macrl/errors.hpp"
#include "macrl/viz.hpp"

namespace fs = std::filesystem;

namespace macrl {

namespace {

std::string fmt_num(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

Stage subcommand_stage(const std::string& sub) {
  if (sub == "finetune") return Stage::finetune;
  if (sub == "linprobe") return Stage::linprobe;
  return Stage::pretrain;  // pretrain and attn-viz both start from these defaults
}

struct LoadedData {
  Dataset train;
  Dataset test;
};

// Carves the tail off a single labeled set when no dedicated test file
// exists, so supervised stages always have something held out.
void split_tail(Dataset& train, Dataset& test, double frac = 0.1) {
  std::size_t n_test = static_cast<std::size_t>(static_cast<double>(train.size()) * frac);
  if (n_test == 0) return;
  test = train;
  test.records.assign(train.records.end() - static_cast<std::ptrdiff_t>(n_test),
                      train.records.end());
  train.records.resize(train.size() - n_test);
}

LoadedData resolve_dataset(const RunConfig& cfg) {
  LoadedData d;
  if (cfg.data == "synth") {
    int size = static_cast<int>(cfg.synth_size);
    int ch = static_cast<int>(cfg.synth_channels);
    d.train = synth_dataset(static_cast<int>(cfg.synth_n), size, ch, cfg.synth_noise,
                            cfg.train.seed);
    d.test = synth_dataset(static_cast<int>(cfg.synth_test_n), size, ch, cfg.synth_noise,
                           cfg.train.seed + 1);
    return d;
  }
  fs::path p(cfg.data);
  if (fs::is_directory(p)) {
    std::vector<fs::path> batches;
    for (const auto& entry : fs::directory_iterator(p)) {
      std::string name = entry.path().filename().string();
      if (name.rfind("data_batch_", 0) == 0 && name.size() > 4 &&
          name.substr(name.size() - 4) == ".bin")
        batches.push_back(entry.path());
    }
    if (batches.empty())
      throw IoError("no data_batch_*.bin files in '" + cfg.data + "'");
    std::sort(batches.begin(), batches.end());
    for (const auto& b : batches) {
      Dataset part = load_cifar_binary(b.string(), cfg.model.num_classes);
      if (d.train.records.empty()) {
        d.train = std::move(part);
      } else {
        d.train.records.insert(d.train.records.end(),
                               std::make_move_iterator(part.records.begin()),
                               std::make_move_iterator(part.records.end()));
      }
    }
    fs::path test_file = p / "test_batch.bin";
    if (fs::exists(test_file))
      d.test = load_cifar_binary(test_file.string(), cfg.model.num_classes);
    else
      split_tail(d.train, d.test);
    return d;
  }
  d.train = load_cifar_binary(cfg.data, cfg.model.num_classes);
  split_tail(d.train, d.test);
  return d;
}

void write_effective_config(const RunConfig& cfg, const fs::path& out_dir) {
  fs::path path = out_dir / "effective.cfg";
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << emit_config(cfg);
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

template <typename T>
TrainSinks<T> make_sinks(MetricsWriter& metrics, const fs::path& out_dir,
                         std::int64_t total_steps) {
  TrainSinks<T> sinks;
  sinks.metrics = [&metrics](const MetricsRow& row) { metrics.write(row); };
  sinks.checkpoint = [out_dir, total_steps](const Checkpoint<T>& ckpt) {
    fs::path path = ckpt.step >= total_steps ? out_dir / "final.ckpt"
                                             : out_dir / ("step_" + std::to_string(ckpt.step) +
                                                          ".ckpt");
    save_checkpoint(ckpt, path.string());
  };
  return sinks;
}

void dispatch(const RunSpec& spec, const RunConfig& cfg, std::ostream& out) {
  fs::path out_dir(spec.output_dir);
  fs::create_directories(out_dir);
  write_effective_config(cfg, out_dir);

  if (spec.subcommand == "attn-viz") {
    Checkpoint<float> ckpt = load_checkpoint<float>(spec.checkpoint_in);
    LoadedData data = resolve_dataset(cfg);
    const Dataset& pool = data.test.records.empty() ? data.train : data.test;
    auto written = attn_viz(ckpt.params, pool, cfg.viz_count, spec.output_dir);
    out << "wrote " << written.size() << " images to " << spec.output_dir << "\n";
    return;
  }

  LoadedData data = resolve_dataset(cfg);
  MetricsWriter metrics((out_dir / "metrics.csv").string());

  if (spec.subcommand == "pretrain") {
    std::int64_t spe = static_cast<std::int64_t>(data.train.size()) / cfg.train.batch_size;
    std::int64_t total = spe * cfg.train.epochs;
    auto sinks = make_sinks<float>(metrics, out_dir, total);
    Checkpoint<float> final_ckpt = pretrain<float>(cfg.model, cfg.train, data.train, &sinks);
    save_checkpoint(final_ckpt, (out_dir / "final.ckpt").string());
    out << "pretrained " << final_ckpt.step << " steps; wrote "
        << (out_dir / "final.ckpt").string() << "\n";
    return;
  }

  Checkpoint<float> start = load_checkpoint<float>(spec.checkpoint_in);
  auto sinks = make_sinks<float>(metrics, out_dir, std::numeric_limits<std::int64_t>::min());
  StageResult res;
  if (spec.subcommand == "finetune")
    res = finetune<float>(cfg.train, start, data.train, data.test, &sinks);
  else
    res = linear_probe<float>(cfg.train, start, data.train, data.test, &sinks);
  for (const auto& g : res.dropped_groups) out << "dropped checkpoint group: " << g << "\n";
  out << "initial accuracy " << fmt_num(res.initial_accuracy);
  if (!res.epoch_accuracy.empty()) out << ", final accuracy " << fmt_num(res.epoch_accuracy.back());
  out << "; wrote " << (out_dir / "final.ckpt").string() << "\n";
}

}  // namespace

RunConfig build_run_config(const RunSpec& spec) {
  RunConfig cfg;
  cfg.train = default_train_config(subcommand_stage(spec.subcommand));
  if (!spec.config_path.empty()) load_config_file(cfg, spec.config_path);
  for (const std::string& kv : spec.overrides) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_config_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!spec.data_path.empty()) cfg.data = spec.data_path;
  if (spec.has_seed) cfg.train.seed = spec.seed;
  if (spec.subcommand != "attn-viz") {
    Stage want = subcommand_stage(spec.subcommand);
    if (cfg.train.stage != want)
      throw ConfigError("config sets stage '" + std::string(stage_name(cfg.train.stage)) +
                        "' but the subcommand is '" + spec.subcommand + "'");
    cfg.train.validate();
  }
  cfg.model.validate();
  return cfg;
}

struct MetricsWriter::Impl {
  std::ofstream out;
};

MetricsWriter::MetricsWriter(const std::string& path) : impl_(new Impl) {
  bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  impl_->out.open(path, std::ios::binary | std::ios::app);
  if (!impl_->out) {
    delete impl_;
    throw IoError("cannot open '" + path + "' for writing");
  }
  if (fresh) {
    impl_->out << kHeader << "\n";
    impl_->out.flush();
  }
}

MetricsWriter::~MetricsWriter() { delete impl_; }

void MetricsWriter::write(const MetricsRow& row) {
  auto opt = [](const std::optional<double>& v) { return v ? fmt_num(*v) : std::string(); };
  impl_->out << row.step << ',' << fmt_num(row.epoch) << ',' << fmt_num(row.lr) << ','
             << opt(row.cl) << ',' << opt(row.mim) << ',' << fmt_num(row.total) << ','
             << opt(row.accuracy) << "\n";
  impl_->out.flush();
  if (!impl_->out) throw IoError("failed writing metrics row");
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunSpec spec;
  RunConfig cfg;
  try {
    CLI::App app{"masked-image modelling + contrastive pre-training trainer"};
    app.require_subcommand(1);

    struct SubFlags {
      CLI::App* sub = nullptr;
      std::string config, data, out_dir = "out", ckpt;
      std::vector<std::string> sets;
      std::uint64_t seed = 0;
    };
    std::vector<std::string> names = {"pretrain", "finetune", "linprobe", "attn-viz"};
    std::vector<std::string> blurbs = {
        "joint masked-reconstruction + contrastive pre-training",
        "supervised fine-tuning of a pre-trained encoder",
        "linear probe on a frozen pre-trained encoder",
        "attention rollout heat maps for a trained model"};
    std::vector<SubFlags> flags(names.size());
    for (size_t i = 0; i < names.size(); ++i) {
      SubFlags& f = flags[i];
      f.sub = app.add_subcommand(names[i], blurbs[i]);
      f.sub->add_option("--config,-c", f.config, "key=value config file");
      f.sub->add_option("--data,-d", f.data, "'synth', a .bin file, or a batch directory");
      f.sub->add_option("--out,-o", f.out_dir, "output directory")->capture_default_str();
      f.sub->add_option("--set,-s", f.sets, "config override key=value (repeatable)");
      f.sub->add_option("--seed", f.seed, "seed override");
      if (names[i] != "pretrain")
        f.sub->add_option("--ckpt", f.ckpt, "checkpoint to start from")->required();
    }

    try {
      std::vector<std::string> rev(args.rbegin(), args.rend());
      app.parse(rev);
    } catch (const CLI::ParseError& e) {
      int code = app.exit(e, out, err);
      return code == 0 ? 0 : 1;
    }

    for (size_t i = 0; i < names.size(); ++i) {
      if (!flags[i].sub->parsed()) continue;
      SubFlags& f = flags[i];
      spec.subcommand = names[i];
      spec.config_path = f.config;
      spec.data_path = f.data;
      spec.output_dir = f.out_dir;
      spec.checkpoint_in = f.ckpt;
      spec.overrides = f.sets;
      spec.has_seed = f.sub->count("--seed") > 0;
      spec.seed = f.seed;
    }

    if (!spec.checkpoint_in.empty() && !fs::exists(spec.checkpoint_in))
      throw ConfigError("checkpoint '" + spec.checkpoint_in + "' does not exist");
    cfg = build_run_config(spec);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    dispatch(spec, cfg, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace macrl
