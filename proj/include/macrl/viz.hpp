#pragma once

// Attention interpretability output: rollout maps rendered as heat images.
//
// Rollout composes per-layer attention into one token-to-token relevance
// matrix: average the heads, mix in the identity (residual paths carry
// signal too), renormalize each row to sum to 1, and multiply the layers
// together in network order. Row-stochasticity is preserved, so every row
// of the result is a distribution over source tokens.

#include <cstdint>
#include <string>
#include <vector>

#include "macrl/data.hpp"
#include "macrl/model.hpp"

namespace macrl {

// maps: one [B, heads, N, N] tensor per layer, in forward order.
// Returns [B, N, N]; rows sum to 1.
template <typename T>
Tensor<T> attention_rollout(const std::vector<Tensor<T>>& maps);

// Column means of one sample's rollout matrix: how much attention each
// token receives on average. Length N = grid*grid, raw (not normalized).
template <typename T>
std::vector<double> rollout_relevance(const Tensor<T>& rollout, int sample);

// Bilinear upsample of a square grid of values (row-major, side src_side)
// to side dst_side, matching the sampling convention of the image resizer.
std::vector<double> upsample_bilinear(const std::vector<double>& src, int src_side, int dst_side);

// Min-max normalizes values and applies a black->red->yellow->white ramp.
// Returns 3 bytes per value. A constant field renders black.
std::vector<std::uint8_t> heat_rgb(const std::vector<double>& values);

// Image pixels as 8-bit RGB rows; single-channel images are replicated
// across R, G and B.
std::vector<std::uint8_t> image_rgb(const ImageRecord& img);

// Binary PPM (P6), rgb laid out row-major h*w*3. Throws IoError on failure.
void write_ppm(const std::string& path, int w, int h, const std::vector<std::uint8_t>& rgb);

// Runs the first `count` images of `data` through the mask-free encoder,
// computes rollout relevance per patch, upsamples it to the input size and
// writes <out_dir>/img_<i>_orig.ppm / img_<i>_attn.ppm pairs. Images are
// resized to the model's input size first. Returns the written paths.
template <typename T>
std::vector<std::string> attn_viz(const ModelParams<T>& params, const Dataset& data,
                                  long long count, const std::string& out_dir);

}  // namespace macrl
