#include "macrl/model.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "macrl/errors.hpp"
#include "macrl/momentum.hpp"

namespace macrl {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string(name) + " must be positive, got " + std::to_string(v));
  };
  positive(image_size, "image_size");
  positive(patch_size, "patch_size");
  positive(channels, "channels");
  positive(enc_depth, "enc_depth");
  positive(enc_heads, "enc_heads");
  positive(enc_dim, "enc_dim");
  positive(dec_dim, "dec_dim");
  positive(dec_heads, "dec_heads");
  positive(proj_dim, "proj_dim");
  positive(num_classes, "num_classes");
  if (image_size % patch_size != 0)
    throw ConfigError("image_size " + std::to_string(image_size) +
                      " not divisible by patch_size " + std::to_string(patch_size));
  if (enc_dim % enc_heads != 0)
    throw ConfigError("enc_dim " + std::to_string(enc_dim) + " not divisible by enc_heads " +
                      std::to_string(enc_heads));
  if (dec_dim % dec_heads != 0)
    throw ConfigError("dec_dim " + std::to_string(dec_dim) + " not divisible by dec_heads " +
                      std::to_string(dec_heads));
  if (enc_dim % 4 != 0 || dec_dim % 4 != 0)
    throw ConfigError("enc_dim and dec_dim must be divisible by 4 for the 2-D positional table");
}

MaskPlan make_mask_plan(int batch, int tokens, double ratio, Rng& rng) {
  if (batch <= 0 || tokens <= 0)
    throw ValueError("make_mask_plan: batch and tokens must be positive");
  if (!(ratio >= 0.0) || ratio >= 1.0)
    throw ValueError("make_mask_plan: mask ratio must lie in [0,1), got " + std::to_string(ratio));
  int keep = static_cast<int>(std::floor(tokens * (1.0 - ratio)));
  if (keep < 1)
    throw ValueError("make_mask_plan: ratio " + std::to_string(ratio) + " leaves no visible token out of " +
                     std::to_string(tokens));

  MaskPlan plan;
  plan.batch = batch;
  plan.tokens = tokens;
  plan.keep_count = keep;
  plan.ids_shuffle.resize(static_cast<std::size_t>(batch) * tokens);
  plan.ids_restore.resize(plan.ids_shuffle.size());
  plan.mask.assign(plan.ids_shuffle.size(), 0);

  for (int b = 0; b < batch; ++b) {
    int* shuf = plan.ids_shuffle.data() + static_cast<std::size_t>(b) * tokens;
    int* rest = plan.ids_restore.data() + static_cast<std::size_t>(b) * tokens;
    std::iota(shuf, shuf + tokens, 0);
    if (ratio > 0.0) {
      for (int i = tokens - 1; i > 0; --i) {
        int j = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(i + 1)));
        std::swap(shuf[i], shuf[j]);
      }
    }
    for (int r = 0; r < tokens; ++r) rest[shuf[r]] = r;
    std::uint8_t* m = plan.mask.data() + static_cast<std::size_t>(b) * tokens;
    for (int r = keep; r < tokens; ++r) m[shuf[r]] = 1;
  }
  return plan;
}

template <typename T>
Tensor<T> sincos_pos_embed(int grid, int dim) {
  if (grid <= 0) throw ValueError("sincos_pos_embed: grid must be positive");
  if (dim <= 0 || dim % 4 != 0)
    throw ValueError("sincos_pos_embed: dim must be a positive multiple of 4, got " +
                     std::to_string(dim));
  int n = grid * grid;
  int half = dim / 2;
  int quarter = dim / 4;
  std::vector<T> out(static_cast<std::size_t>(n) * dim);
  for (int t = 0; t < n; ++t) {
    double coord[2] = {static_cast<double>(t / grid), static_cast<double>(t % grid)};
    for (int axis = 0; axis < 2; ++axis) {
      T* row = out.data() + static_cast<std::size_t>(t) * dim + axis * half;
      for (int i = 0; i < quarter; ++i) {
        double omega = std::pow(10000.0, -static_cast<double>(i) / quarter);
        double v = coord[axis] * omega;
        row[i] = static_cast<T>(std::sin(v));
        row[quarter + i] = static_cast<T>(std::cos(v));
      }
    }
  }
  return Tensor<T>({n, dim}, std::move(out));
}

template <typename T>
ModelParams<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = derive_rng(seed, rng_tag::init, 0, 0, 0);
  ModelParams<T> mp;
  mp.cfg = cfg;

  // The patch embedding uses a wider (xavier-style) init than the rest of the
  // net. With the default 0.02 weights the embedded content would sit two
  // orders of magnitude below the positional table, which leaves attention and
  // the FFN effectively content-blind at the start of training.
  init_linear(mp.encoder, "patch_embed.", cfg.patch_dim(), cfg.enc_dim, rng,
              std::sqrt(2.0 / (cfg.patch_dim() + cfg.enc_dim)));
  for (int i = 0; i < cfg.enc_depth; ++i)
    init_transformer_block(mp.encoder, "blocks." + std::to_string(i) + ".", cfg.enc_dim, rng);
  init_layer_norm(mp.encoder, "norm.", cfg.enc_dim);
  if (cfg.freeze_patch_embed) {
    mp.encoder.at("patch_embed.w").set_requires_grad(false);
    mp.encoder.at("patch_embed.b").set_requires_grad(false);
  }

  init_linear(mp.decoder, "embed.", cfg.enc_dim, cfg.dec_dim, rng);
  mp.decoder.add("mask_token", trunc_normal_tensor<T>({cfg.dec_dim}, 0.02, rng));
  init_attention(mp.decoder, "attn.", cfg.dec_dim, rng);
  init_linear(mp.decoder, "out.", cfg.dec_dim, cfg.patch_dim(), rng);

  init_linear(mp.projector, "fc1.", cfg.enc_dim, cfg.enc_dim, rng);
  init_layer_norm(mp.projector, "ln.", cfg.enc_dim);
  init_linear(mp.projector, "fc2.", cfg.enc_dim, cfg.proj_dim, rng);

  init_linear(mp.classifier, "head.", cfg.enc_dim, cfg.num_classes, rng);

  mp.momentum_encoder = init_momentum_copy(mp.encoder);
  mp.momentum_projector = init_momentum_copy(mp.projector);

  mp.enc_pos = sincos_pos_embed<T>(cfg.grid(), cfg.enc_dim);
  mp.dec_pos = sincos_pos_embed<T>(cfg.grid(), cfg.dec_dim);
  return mp;
}

template <typename T>
Tensor<T> patchify(Graph<T>* g, const Tensor<T>& images, int patch_size) {
  const Shape& s = images.shape();
  if (s.size() != 4)
    throw ShapeError("patchify: expected [B,H,W,C] input, got " + shape_str(s));
  int h = s[1], w = s[2], c = s[3], p = patch_size;
  if (p <= 0 || h != w || h % p != 0)
    throw ShapeError("patchify: image " + std::to_string(h) + "x" + std::to_string(w) +
                     " incompatible with patch size " + std::to_string(p));
  int grid = h / p;
  int n = grid * grid;
  int pd = p * p * c;
  std::vector<int> index(static_cast<std::size_t>(n) * pd);
  for (int t = 0; t < n; ++t) {
    int gr = t / grid, gc = t % grid;
    for (int pr = 0; pr < p; ++pr)
      for (int pc = 0; pc < p; ++pc)
        for (int ch = 0; ch < c; ++ch)
          index[static_cast<std::size_t>(t) * pd + (pr * p + pc) * c + ch] =
              ((gr * p + pr) * w + (gc * p + pc)) * c + ch;
  }
  return gather_flat(g, images, index, Shape{n, pd}, 1);
}

template <typename T>
Tensor<T> unpatchify(Graph<T>* g, const Tensor<T>& tokens, int patch_size, int image_size,
                     int channels) {
  const Shape& s = tokens.shape();
  int p = patch_size, hw = image_size, c = channels;
  int grid = hw / p;
  int n = grid * grid;
  int pd = p * p * c;
  if (s.size() != 3 || s[1] != n || s[2] != pd)
    throw ShapeError("unpatchify: expected [B," + std::to_string(n) + "," + std::to_string(pd) +
                     "] tokens, got " + shape_str(s));
  std::vector<int> index(static_cast<std::size_t>(hw) * hw * c);
  for (int y = 0; y < hw; ++y)
    for (int x = 0; x < hw; ++x)
      for (int ch = 0; ch < c; ++ch) {
        int t = (y / p) * grid + (x / p);
        int within = ((y % p) * p + (x % p)) * c + ch;
        index[(static_cast<std::size_t>(y) * hw + x) * c + ch] = t * pd + within;
      }
  return gather_flat(g, tokens, index, Shape{hw, hw, c}, 1);
}

template <typename T>
Tensor<T> select_visible(Graph<T>* g, const Tensor<T>& tokens, const MaskPlan& plan) {
  const Shape& s = tokens.shape();
  if (s.size() != 3 || s[0] != plan.batch || s[1] != plan.tokens)
    throw ShapeError("select_visible: tokens " + shape_str(s) + " do not match plan [" +
                     std::to_string(plan.batch) + "," + std::to_string(plan.tokens) + ",*]");
  std::vector<int> ids(static_cast<std::size_t>(plan.batch) * plan.keep_count);
  for (int b = 0; b < plan.batch; ++b)
    for (int j = 0; j < plan.keep_count; ++j)
      ids[static_cast<std::size_t>(b) * plan.keep_count + j] =
          plan.ids_shuffle[static_cast<std::size_t>(b) * plan.tokens + j];
  return gather_rows(g, tokens, ids, Shape{plan.batch, plan.keep_count});
}

template <typename T>
std::pair<Tensor<T>, MaskPlan> random_mask(Graph<T>* g, const Tensor<T>& tokens, double ratio,
                                           Rng& rng) {
  const Shape& s = tokens.shape();
  if (s.size() != 3) throw ShapeError("random_mask: expected [B,N,D] tokens, got " + shape_str(s));
  MaskPlan plan = make_mask_plan(s[0], s[1], ratio, rng);
  if (plan.keep_count == plan.tokens) return {tokens, plan};
  return {select_visible(g, tokens, plan), plan};
}

template <typename T>
Tensor<T> encode_with_plan(Graph<T>* g, const ModelParams<T>& params, const Tensor<T>& images,
                           const MaskPlan& plan, bool momentum, AttnCapture<T>* capture) {
  const ModelConfig& cfg = params.cfg;
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != cfg.image_size || s[2] != cfg.image_size || s[3] != cfg.channels)
    throw ShapeError("encode: images " + shape_str(s) + " do not match the configured " +
                     std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) + "x" +
                     std::to_string(cfg.channels));
  if (plan.batch != s[0] || plan.tokens != cfg.tokens())
    throw ShapeError("encode: mask plan [" + std::to_string(plan.batch) + "," +
                     std::to_string(plan.tokens) + "] does not match batch " +
                     std::to_string(s[0]) + " with " + std::to_string(cfg.tokens()) + " tokens");

  const ParamStore<T>& store = momentum ? params.momentum_encoder : params.encoder;
  auto tok = patchify(g, images, cfg.patch_size);
  tok = linear_at(g, tok, store, "patch_embed.");
  tok = add(g, tok, params.enc_pos);
  if (plan.keep_count < plan.tokens) tok = select_visible(g, tok, plan);
  for (int i = 0; i < cfg.enc_depth; ++i)
    tok = transformer_block(g, tok, store, "blocks." + std::to_string(i) + ".", cfg.enc_heads,
                            capture);
  return layer_norm_at(g, tok, store, "norm.");
}

template <typename T>
std::pair<Tensor<T>, MaskPlan> encode(Graph<T>* g, const ModelParams<T>& params,
                                      const Tensor<T>& images, double mask_ratio, Rng& rng,
                                      bool momentum, AttnCapture<T>* capture) {
  const Shape& s = images.shape();
  if (s.size() != 4) throw ShapeError("encode: expected [B,H,W,C] images, got " + shape_str(s));
  MaskPlan plan = make_mask_plan(s[0], params.cfg.tokens(), mask_ratio, rng);
  return {encode_with_plan(g, params, images, plan, momentum, capture), plan};
}

template <typename T>
Tensor<T> decode(Graph<T>* g, const ModelParams<T>& params, const Tensor<T>& latent,
                 const MaskPlan& plan) {
  const ModelConfig& cfg = params.cfg;
  const Shape& s = latent.shape();
  if (s.size() != 3 || s[2] != cfg.enc_dim)
    throw ShapeError("decode: expected [B,keep," + std::to_string(cfg.enc_dim) +
                     "] latent, got " + shape_str(s));
  if (s[0] != plan.batch || s[1] != plan.keep_count || plan.tokens != cfg.tokens())
    throw ShapeError("decode: latent " + shape_str(s) + " does not match plan [" +
                     std::to_string(plan.batch) + ", keep " + std::to_string(plan.keep_count) +
                     " of " + std::to_string(plan.tokens) + "]");

  auto y = linear_at(g, latent, params.decoder, "embed.");
  if (plan.keep_count < plan.tokens) {
    int hidden = plan.tokens - plan.keep_count;
    Tensor<T> ones({plan.batch, hidden, cfg.dec_dim}, static_cast<T>(1));
    auto filled = mul(g, ones, params.decoder.at("mask_token"));
    y = concat(g, {y, filled}, 1);
    y = gather_rows(g, y, plan.ids_restore, Shape{plan.batch, plan.tokens});
  }
  y = add(g, y, params.dec_pos);
  auto h = multi_head_self_attention(g, y, params.decoder, "attn.", cfg.dec_heads);
  return linear_at(g, h, params.decoder, "out.");
}

template <typename T>
Tensor<T> project(Graph<T>* g, const ModelParams<T>& params, const Tensor<T>& latent,
                  bool momentum) {
  const Shape& s = latent.shape();
  if (s.size() != 3 || s[2] != params.cfg.enc_dim)
    throw ShapeError("project: expected [B,T," + std::to_string(params.cfg.enc_dim) +
                     "] latent, got " + shape_str(s));
  const ParamStore<T>& store = momentum ? params.momentum_projector : params.projector;
  auto v = mean_axis(g, latent, 1);
  v = linear_at(g, v, store, "fc1.");
  v = layer_norm_at(g, v, store, "ln.");
  v = gelu(g, v);
  v = linear_at(g, v, store, "fc2.");
  return l2_normalize(g, v);
}

template <typename T>
Tensor<T> classify(Graph<T>* g, const ModelParams<T>& params, const Tensor<T>& images,
                   AttnCapture<T>* capture) {
  const Shape& s = images.shape();
  if (s.size() != 4) throw ShapeError("classify: expected [B,H,W,C] images, got " + shape_str(s));
  Rng unused(0);
  MaskPlan plan = make_mask_plan(s[0], params.cfg.tokens(), 0.0, unused);
  auto z = encode_with_plan(g, params, images, plan, false, capture);
  auto v = mean_axis(g, z, 1);
  return linear_at(g, v, params.classifier, "head.");
}

template <typename T>
ParamStore<T> clone_store(const ParamStore<T>& store) {
  ParamStore<T> out;
  for (const auto& [path, t] : store.params) out.add(path, t.clone(), t.requires_grad());
  return out;
}

template <typename T>
ModelParams<T> clone_params(const ModelParams<T>& params) {
  ModelParams<T> out;
  out.cfg = params.cfg;
  out.encoder = clone_store(params.encoder);
  out.decoder = clone_store(params.decoder);
  out.projector = clone_store(params.projector);
  out.classifier = clone_store(params.classifier);
  out.momentum_encoder = clone_store(params.momentum_encoder);
  out.momentum_projector = clone_store(params.momentum_projector);
  out.enc_pos = params.enc_pos.clone();
  out.dec_pos = params.dec_pos.clone();
  return out;
}

#define MACRL_INSTANTIATE_MODEL(T)                                                                \
  template Tensor<T> sincos_pos_embed<T>(int, int);                                               \
  template ModelParams<T> build_model<T>(const ModelConfig&, std::uint64_t);                      \
  template ParamStore<T> clone_store<T>(const ParamStore<T>&);                                    \
  template ModelParams<T> clone_params<T>(const ModelParams<T>&);                                 \
  template Tensor<T> patchify<T>(Graph<T>*, const Tensor<T>&, int);                               \
  template Tensor<T> unpatchify<T>(Graph<T>*, const Tensor<T>&, int, int, int);                   \
  template Tensor<T> select_visible<T>(Graph<T>*, const Tensor<T>&, const MaskPlan&);             \
  template std::pair<Tensor<T>, MaskPlan> random_mask<T>(Graph<T>*, const Tensor<T>&, double,     \
                                                         Rng&);                                   \
  template Tensor<T> encode_with_plan<T>(Graph<T>*, const ModelParams<T>&, const Tensor<T>&,      \
                                         const MaskPlan&, bool, AttnCapture<T>*);                 \
  template std::pair<Tensor<T>, MaskPlan> encode<T>(Graph<T>*, const ModelParams<T>&,             \
                                                    const Tensor<T>&, double, Rng&, bool,         \
                                                    AttnCapture<T>*);                             \
  template Tensor<T> decode<T>(Graph<T>*, const ModelParams<T>&, const Tensor<T>&,                \
                               const MaskPlan&);                                                  \
  template Tensor<T> project<T>(Graph<T>*, const ModelParams<T>&, const Tensor<T>&, bool);        \
  template Tensor<T> classify<T>(Graph<T>*, const ModelParams<T>&, const Tensor<T>&,              \
                                 AttnCapture<T>*);

MACRL_INSTANTIATE_MODEL(float)
MACRL_INSTANTIATE_MODEL(double)

}  // namespace macrl
