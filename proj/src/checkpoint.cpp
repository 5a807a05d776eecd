#include "macrl/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <vector>

namespace macrl {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'C', 'R', 'L', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

void wr_u32(std::ostream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

void wr_f32(std::ostream& out, float v) { wr_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t rd_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float rd_f32(std::istream& in) { return std::bit_cast<float>(rd_u32(in)); }

std::string rd_bytes(std::istream& in, std::size_t n) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw IoError("truncated checkpoint");
  return s;
}

// The header grammar is strict: machine-written "key=value" lines only.
std::map<std::string, std::string> parse_header(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("malformed checkpoint header line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

const std::string& header_get(const std::map<std::string, std::string>& kv,
                              const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw IoError("checkpoint header is missing key '" + key + "'");
  return it->second;
}

std::int64_t header_int(const std::map<std::string, std::string>& kv, const std::string& key) {
  const std::string& s = header_get(kv, key);
  try {
    std::size_t used = 0;
    std::int64_t v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError("checkpoint header key '" + key + "' has non-integer value '" + s + "'");
  }
}

std::uint64_t header_u64(const std::map<std::string, std::string>& kv, const std::string& key) {
  const std::string& s = header_get(kv, key);
  try {
    std::size_t used = 0;
    std::uint64_t v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError("checkpoint header key '" + key + "' has non-integer value '" + s + "'");
  }
}

// Groups a checkpoint carries, in blob order. Supervised-stage checkpoints
// keep only what their pipelines train.
template <typename T>
std::vector<std::pair<std::string, const ParamStore<T>*>> stage_groups(const Checkpoint<T>& ck) {
  if (ck.stage == Stage::pretrain) {
    return {{"encoder", &ck.params.encoder},
            {"decoder", &ck.params.decoder},
            {"projector", &ck.params.projector},
            {"classifier", &ck.params.classifier},
            {"momentum_encoder", &ck.params.momentum_encoder},
            {"momentum_projector", &ck.params.momentum_projector}};
  }
  return {{"encoder", &ck.params.encoder}, {"classifier", &ck.params.classifier}};
}

template <typename T>
std::string build_header(const Checkpoint<T>& ck) {
  const ModelConfig& m = ck.params.cfg;
  std::ostringstream h;
  h << "bank_capacity=" << ck.bank_capacity << "\n";
  h << "bank_cursor=" << ck.bank_cursor << "\n";
  h << "channels=" << m.channels << "\n";
  h << "dec_dim=" << m.dec_dim << "\n";
  h << "dec_heads=" << m.dec_heads << "\n";
  h << "enc_depth=" << m.enc_depth << "\n";
  h << "enc_dim=" << m.enc_dim << "\n";
  h << "enc_heads=" << m.enc_heads << "\n";
  h << "freeze_patch_embed=" << (m.freeze_patch_embed ? 1 : 0) << "\n";
  h << "image_size=" << m.image_size << "\n";
  h << "num_classes=" << m.num_classes << "\n";
  h << "opt_step=" << ck.opt.step << "\n";
  h << "patch_size=" << m.patch_size << "\n";
  h << "proj_dim=" << m.proj_dim << "\n";
  h << "rng_inc=" << ck.rng_inc << "\n";
  h << "rng_state=" << ck.rng_state << "\n";
  h << "seed=" << ck.seed << "\n";
  h << "stage=" << stage_name(ck.stage) << "\n";
  h << "step=" << ck.step << "\n";
  return h.str();
}

template <typename T>
void write_blob(std::ostream& out, const std::string& name, const Shape& shape, const T* data) {
  wr_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  wr_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (int d : shape) wr_u32(out, static_cast<std::uint32_t>(d));
  std::int64_t n = shape_numel(shape);
  for (std::int64_t i = 0; i < n; ++i)
    wr_f32(out, static_cast<float>(data[static_cast<std::size_t>(i)]));
}

}  // namespace

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");

  out.write(kMagic, sizeof(kMagic));
  wr_u32(out, kVersion);
  std::string header = build_header(ckpt);
  wr_u32(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));

  auto groups = stage_groups(ckpt);
  std::uint32_t blob_count = 0;
  for (const auto& [name, store] : groups)
    blob_count += static_cast<std::uint32_t>(store->params.size());
  blob_count += static_cast<std::uint32_t>(2 * ckpt.opt.slots.size());
  if (ckpt.bank_capacity > 0) blob_count += 1;
  wr_u32(out, blob_count);

  for (const auto& [group, store] : groups) {
    for (const auto& [p, t] : store->params)
      write_blob(out, group + "/" + p, t.shape(), t.data().data());
  }
  for (const auto& [key, slot] : ckpt.opt.slots) {
    Shape flat{static_cast<int>(slot.m.size())};
    write_blob(out, "opt.m/" + key, flat, slot.m.data());
    write_blob(out, "opt.v/" + key, flat, slot.v.data());
  }
  if (ckpt.bank_capacity > 0) {
    int dim = static_cast<int>(ckpt.bank_keys.size()) / ckpt.bank_capacity;
    write_blob(out, "bank/keys", Shape{ckpt.bank_capacity, dim}, ckpt.bank_keys.data());
  }
  out.flush();
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");

  std::string magic = rd_bytes(in, sizeof(kMagic));
  if (magic != std::string(kMagic, sizeof(kMagic))) throw IoError("bad checkpoint magic");
  std::uint32_t version = rd_u32(in);
  if (version != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                  std::to_string(kVersion) + ")");

  auto kv = parse_header(rd_bytes(in, rd_u32(in)));
  ModelConfig mcfg;
  mcfg.image_size = static_cast<int>(header_int(kv, "image_size"));
  mcfg.patch_size = static_cast<int>(header_int(kv, "patch_size"));
  mcfg.channels = static_cast<int>(header_int(kv, "channels"));
  mcfg.enc_depth = static_cast<int>(header_int(kv, "enc_depth"));
  mcfg.enc_heads = static_cast<int>(header_int(kv, "enc_heads"));
  mcfg.enc_dim = static_cast<int>(header_int(kv, "enc_dim"));
  mcfg.dec_dim = static_cast<int>(header_int(kv, "dec_dim"));
  mcfg.dec_heads = static_cast<int>(header_int(kv, "dec_heads"));
  mcfg.proj_dim = static_cast<int>(header_int(kv, "proj_dim"));
  mcfg.num_classes = static_cast<int>(header_int(kv, "num_classes"));
  mcfg.freeze_patch_embed = header_int(kv, "freeze_patch_embed") != 0;
  mcfg.validate();

  Checkpoint<T> ck;
  ck.version = static_cast<int>(version);
  ck.stage = parse_stage(header_get(kv, "stage"));
  ck.step = header_int(kv, "step");
  ck.seed = header_u64(kv, "seed");
  ck.rng_state = header_u64(kv, "rng_state");
  ck.rng_inc = header_u64(kv, "rng_inc");
  ck.opt.step = header_int(kv, "opt_step");
  ck.bank_capacity = static_cast<int>(header_int(kv, "bank_capacity"));
  ck.bank_cursor = static_cast<int>(header_int(kv, "bank_cursor"));
  ck.params = build_model<T>(mcfg, ck.seed);

  std::map<std::string, ParamStore<T>*> stores;
  if (ck.stage == Stage::pretrain) {
    stores = {{"encoder", &ck.params.encoder},
              {"decoder", &ck.params.decoder},
              {"projector", &ck.params.projector},
              {"classifier", &ck.params.classifier},
              {"momentum_encoder", &ck.params.momentum_encoder},
              {"momentum_projector", &ck.params.momentum_projector}};
  } else {
    stores = {{"encoder", &ck.params.encoder}, {"classifier", &ck.params.classifier}};
  }

  std::set<std::string> expected;
  for (const auto& [group, store] : stores)
    for (const auto& p : store->paths()) expected.insert(group + "/" + p);
  if (ck.bank_capacity > 0) expected.insert("bank/keys");

  std::uint32_t blob_count = rd_u32(in);
  std::set<std::string> seen;
  for (std::uint32_t b = 0; b < blob_count; ++b) {
    std::string name = rd_bytes(in, rd_u32(in));
    std::uint32_t rank = rd_u32(in);
    if (rank > 8) throw IoError("checkpoint tensor '" + name + "' has implausible rank");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(rd_u32(in)));
    std::int64_t n = shape_numel(shape);
    if (!seen.insert(name).second) throw IoError("checkpoint repeats tensor '" + name + "'");

    if (name == "bank/keys") {
      if (ck.bank_capacity <= 0) throw IoError("checkpoint has unknown tensor 'bank/keys'");
      Shape want{ck.bank_capacity, mcfg.proj_dim};
      if (shape != want)
        throw ShapeError("checkpoint tensor 'bank/keys' has shape " + shape_str(shape) +
                         ", expected " + shape_str(want));
      ck.bank_keys.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i)
        ck.bank_keys[static_cast<std::size_t>(i)] = static_cast<T>(rd_f32(in));
      expected.erase(name);
      continue;
    }

    bool is_m = name.rfind("opt.m/", 0) == 0;
    bool is_v = name.rfind("opt.v/", 0) == 0;
    if (is_m || is_v) {
      std::string key = name.substr(6);
      auto slash = key.find('/');
      if (slash == std::string::npos || !stores.count(key.substr(0, slash)) ||
          !stores.at(key.substr(0, slash))->has(key.substr(slash + 1)))
        throw IoError("checkpoint has unknown tensor '" + name + "'");
      const Tensor<T>& param = stores.at(key.substr(0, slash))->at(key.substr(slash + 1));
      if (n != param.numel())
        throw ShapeError("checkpoint tensor '" + name + "' has " + std::to_string(n) +
                         " entries, parameter has " + std::to_string(param.numel()));
      auto& slot = ck.opt.slots[key];
      auto& vec = is_m ? slot.m : slot.v;
      vec.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) vec[static_cast<std::size_t>(i)] = static_cast<T>(rd_f32(in));
      continue;
    }

    auto slash = name.find('/');
    if (slash == std::string::npos || !stores.count(name.substr(0, slash)) ||
        !stores.at(name.substr(0, slash))->has(name.substr(slash + 1)))
      throw IoError("checkpoint has unknown tensor '" + name + "'");
    Tensor<T>& t = stores.at(name.substr(0, slash))->at(name.substr(slash + 1));
    if (shape != t.shape())
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) +
                       ", expected " + shape_str(t.shape()));
    auto dst = t.mutable_data();
    for (std::int64_t i = 0; i < n; ++i) dst[static_cast<std::size_t>(i)] = static_cast<T>(rd_f32(in));
    expected.erase(name);
  }
  for (const auto& name : expected) throw IoError("checkpoint is missing tensor '" + name + "'");

  // Moment pairs must come complete.
  for (const auto& [key, slot] : ck.opt.slots) {
    if (slot.m.empty() || slot.v.empty())
      throw IoError("checkpoint has a lone Adam moment for '" + key + "'");
  }
  return ck;
}

template void save_checkpoint<float>(const Checkpoint<float>&, const std::string&);
template void save_checkpoint<double>(const Checkpoint<double>&, const std::string&);
template Checkpoint<float> load_checkpoint<float>(const std::string&);
template Checkpoint<double> load_checkpoint<double>(const std::string&);

}  // namespace macrl
