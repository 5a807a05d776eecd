#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "macrl/nn.hpp"

// The network: patchification, per-sample random masking, a ViT encoder, a
// shallow decoder (one linear layer + one attention layer), a projector head
// producing unit-norm embeddings, and a linear classifier head. The encoder
// and projector each have a gradient-free momentum copy.

namespace macrl {

struct ModelConfig {
  int image_size = 32;
  int patch_size = 4;
  int channels = 3;
  int enc_depth = 12;
  int enc_heads = 4;
  int enc_dim = 512;
  int dec_dim = 256;
  int dec_heads = 1;
  int proj_dim = 512;
  int num_classes = 10;
  bool freeze_patch_embed = false;

  int grid() const { return image_size / patch_size; }
  int tokens() const { return grid() * grid(); }
  int patch_dim() const { return patch_size * patch_size * channels; }
  void validate() const;
};

// Per-sample shuffle bookkeeping. Row-major [batch, tokens] layout; for each
// sample the first keep_count entries of ids_shuffle are the visible token
// ids, ids_restore is the inverse permutation, and mask marks hidden tokens.
struct MaskPlan {
  int batch = 0;
  int tokens = 0;
  int keep_count = 0;
  std::vector<int> ids_shuffle;
  std::vector<int> ids_restore;
  std::vector<std::uint8_t> mask;  // 1 = hidden from the encoder
};

// keep_count = floor(tokens * (1 - ratio)). ratio = 0 is the no-mask path:
// identity permutation, zero rng draws. Otherwise one Fisher-Yates shuffle
// per sample, tokens-1 draws each.
MaskPlan make_mask_plan(int batch, int tokens, double ratio, Rng& rng);

template <typename T>
struct ModelParams {
  ModelConfig cfg;
  ParamStore<T> encoder;
  ParamStore<T> decoder;
  ParamStore<T> projector;
  ParamStore<T> classifier;
  ParamStore<T> momentum_encoder;
  ParamStore<T> momentum_projector;
  Tensor<T> enc_pos;  // [tokens, enc_dim], fixed, never trained
  Tensor<T> dec_pos;  // [tokens, dec_dim]
};

// Fixed 2-D sine-cosine table for a grid x grid token layout, [grid*grid, dim].
// First half of the channels encodes the row coordinate, second half the
// column; dim must be divisible by 4.
template <typename T>
Tensor<T> sincos_pos_embed(int grid, int dim);

template <typename T>
ModelParams<T> build_model(const ModelConfig& cfg, std::uint64_t seed);

// Deep copies, detached from any graph; requires_grad flags preserved.
template <typename T>
ParamStore<T> clone_store(const ParamStore<T>& store);
template <typename T>
ModelParams<T> clone_params(const ModelParams<T>& params);

// [B, H, W, C] pixels -> [B, N, P*P*C] tokens, each token the row-major
// flattening of one patch. unpatchify is the bit-exact inverse.
template <typename T>
Tensor<T> patchify(Graph<T>* g, const Tensor<T>& images, int patch_size);
template <typename T>
Tensor<T> unpatchify(Graph<T>* g, const Tensor<T>& tokens, int patch_size, int image_size,
                     int channels);

// Keep the visible rows of a [B, N, D] token tensor per the plan.
template <typename T>
Tensor<T> select_visible(Graph<T>* g, const Tensor<T>& tokens, const MaskPlan& plan);

template <typename T>
std::pair<Tensor<T>, MaskPlan> random_mask(Graph<T>* g, const Tensor<T>& tokens, double ratio,
                                           Rng& rng);

// patchify -> patch embedding + positional table -> visible selection ->
// enc_depth transformer blocks -> final layer norm. momentum=true reads the
// EMA branch's parameters (which never require gradients).
template <typename T>
Tensor<T> encode_with_plan(Graph<T>* g, const ModelParams<T>& params, const Tensor<T>& images,
                           const MaskPlan& plan, bool momentum = false,
                           AttnCapture<T>* capture = nullptr);
template <typename T>
std::pair<Tensor<T>, MaskPlan> encode(Graph<T>* g, const ModelParams<T>& params,
                                      const Tensor<T>& images, double mask_ratio, Rng& rng,
                                      bool momentum = false, AttnCapture<T>* capture = nullptr);

// latent [B, keep, enc_dim] -> reconstruction [B, N, P*P*C]. Masked positions
// are filled with the learned mask token before un-shuffling; at ratio 0 no
// mask token enters the computation.
template <typename T>
Tensor<T> decode(Graph<T>* g, const ModelParams<T>& params, const Tensor<T>& latent,
                 const MaskPlan& plan);

// latent [B, T, enc_dim] -> unit-norm embedding [B, proj_dim]: mean over
// tokens, linear, layer norm, gelu, linear, L2 normalize.
template <typename T>
Tensor<T> project(Graph<T>* g, const ModelParams<T>& params, const Tensor<T>& latent,
                  bool momentum = false);

// Mask-free encode, mean pool over tokens, linear head.
template <typename T>
Tensor<T> classify(Graph<T>* g, const ModelParams<T>& params, const Tensor<T>& images,
                   AttnCapture<T>* capture = nullptr);

}  // namespace macrl
