#include "macrl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>

#include "macrl/errors.hpp"

namespace macrl {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + want);
}

long long parse_ll(const std::string& key, const std::string& value) {
  long long v = 0;
  const char* b = value.data();
  const char* e = b + value.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) bad_value(key, value, "an integer");
  return v;
}

double parse_f64(const std::string& key, const std::string& value) {
  double v = 0;
  const char* b = value.data();
  const char* e = b + value.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) bad_value(key, value, "a number");
  return v;
}

bool parse_flag(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  bad_value(key, value, "a boolean (0/1/true/false)");
}

std::string format_f64(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

struct KeyDef {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename S>
KeyDef def_int(S RunConfig::* sub, int S::* field) {
  return {[sub, field](RunConfig& c, const std::string& k, const std::string& v) {
            long long x = parse_ll(k, v);
            if (x < INT32_MIN || x > INT32_MAX) bad_value(k, v, "a 32-bit integer");
            (c.*sub).*field = static_cast<int>(x);
          },
          [sub, field](const RunConfig& c) { return std::to_string((c.*sub).*field); }};
}

KeyDef def_ll(long long RunConfig::* field) {
  return {[field](RunConfig& c, const std::string& k, const std::string& v) {
            c.*field = parse_ll(k, v);
          },
          [field](const RunConfig& c) { return std::to_string(c.*field); }};
}

template <typename S>
KeyDef def_f64(S RunConfig::* sub, double S::* field) {
  return {[sub, field](RunConfig& c, const std::string& k, const std::string& v) {
            (c.*sub).*field = parse_f64(k, v);
          },
          [sub, field](const RunConfig& c) { return format_f64((c.*sub).*field); }};
}

KeyDef def_f64_top(double RunConfig::* field) {
  return {[field](RunConfig& c, const std::string& k, const std::string& v) {
            c.*field = parse_f64(k, v);
          },
          [field](const RunConfig& c) { return format_f64(c.*field); }};
}

template <typename S>
KeyDef def_bool(S RunConfig::* sub, bool S::* field) {
  return {[sub, field](RunConfig& c, const std::string& k, const std::string& v) {
            (c.*sub).*field = parse_flag(k, v);
          },
          [sub, field](const RunConfig& c) { return ((c.*sub).*field) ? "1" : "0"; }};
}

const std::map<std::string, KeyDef>& key_table() {
  static const std::map<std::string, KeyDef> table = [] {
    std::map<std::string, KeyDef> t;
    // model
    t["image_size"] = def_int(&RunConfig::model, &ModelConfig::image_size);
    t["patch_size"] = def_int(&RunConfig::model, &ModelConfig::patch_size);
    t["channels"] = def_int(&RunConfig::model, &ModelConfig::channels);
    t["enc_depth"] = def_int(&RunConfig::model, &ModelConfig::enc_depth);
    t["enc_heads"] = def_int(&RunConfig::model, &ModelConfig::enc_heads);
    t["enc_dim"] = def_int(&RunConfig::model, &ModelConfig::enc_dim);
    t["dec_dim"] = def_int(&RunConfig::model, &ModelConfig::dec_dim);
    t["dec_heads"] = def_int(&RunConfig::model, &ModelConfig::dec_heads);
    t["proj_dim"] = def_int(&RunConfig::model, &ModelConfig::proj_dim);
    t["num_classes"] = def_int(&RunConfig::model, &ModelConfig::num_classes);
    t["freeze_patch_embed"] = def_bool(&RunConfig::model, &ModelConfig::freeze_patch_embed);
    // training
    t["stage"] = {[](RunConfig& c, const std::string&, const std::string& v) {
                    c.train.stage = parse_stage(v);
                  },
                  [](const RunConfig& c) { return std::string(stage_name(c.train.stage)); }};
    t["lr"] = def_f64(&RunConfig::train, &TrainConfig::lr);
    t["weight_decay"] = def_f64(&RunConfig::train, &TrainConfig::weight_decay);
    t["beta1"] = def_f64(&RunConfig::train, &TrainConfig::beta1);
    t["beta2"] = def_f64(&RunConfig::train, &TrainConfig::beta2);
    t["adam_eps"] = def_f64(&RunConfig::train, &TrainConfig::adam_eps);
    t["epochs"] = def_int(&RunConfig::train, &TrainConfig::epochs);
    t["warmup_epochs"] = def_int(&RunConfig::train, &TrainConfig::warmup_epochs);
    t["batch_size"] = def_int(&RunConfig::train, &TrainConfig::batch_size);
    t["accum_steps"] = def_int(&RunConfig::train, &TrainConfig::accum_steps);
    t["mask_ratio"] = def_f64(&RunConfig::train, &TrainConfig::mask_ratio);
    t["tau"] = def_f64(&RunConfig::train, &TrainConfig::tau);
    t["alpha"] = def_f64(&RunConfig::train, &TrainConfig::alpha);
    t["momentum_m"] = def_f64(&RunConfig::train, &TrainConfig::momentum_m);
    t["bank_size"] = def_int(&RunConfig::train, &TrainConfig::bank_size);
    t["seed"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                   std::uint64_t x = 0;
                   const char* b = v.data();
                   auto [p, ec] = std::from_chars(b, b + v.size(), x);
                   if (ec != std::errc() || p != b + v.size())
                     bad_value(k, v, "an unsigned integer");
                   c.train.seed = x;
                 },
                 [](const RunConfig& c) { return std::to_string(c.train.seed); }};
    t["min_lr_factor"] = def_f64(&RunConfig::train, &TrainConfig::min_lr_factor);
    t["ckpt_every"] = def_int(&RunConfig::train, &TrainConfig::ckpt_every);
    // data and output
    t["data"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.data = v; },
                 [](const RunConfig& c) { return c.data; }};
    t["synth_n"] = def_ll(&RunConfig::synth_n);
    t["synth_test_n"] = def_ll(&RunConfig::synth_test_n);
    t["synth_size"] = def_ll(&RunConfig::synth_size);
    t["synth_channels"] = def_ll(&RunConfig::synth_channels);
    t["synth_noise"] = def_f64_top(&RunConfig::synth_noise);
    t["viz_count"] = def_ll(&RunConfig::viz_count);
    return t;
  }();
  return table;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [k, def] : key_table()) out.push_back(k);
  return out;
}

void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = key_table();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(cfg, key, value);
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" +
                        line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  for (const auto& [k, v] : parse_config_text(buf.str())) apply_config_kv(cfg, k, v);
}

std::string emit_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, def] : key_table()) {
    out += k;
    out += '=';
    out += def.get(cfg);
    out += '\n';
  }
  return out;
}

}  // namespace macrl
