#pragma once

#include <utility>
#include <vector>

#include "macrl/data.hpp"

// The four augmentation pipelines. A policy is an ordered op list with
// per-op probabilities plus the magnitude knobs the ops read; augment applies
// the list in order and can record which ops fired for auditing.

namespace macrl {

enum class AugOp {
  resize_crop,      // random area/aspect crop, bilinear resize to out_size
  color_jitter,     // brightness, contrast, saturation, hue
  grayscale,        // luma replicated across channels
  gaussian_blur,    // separable kernel, width from out_size
  solarize,         // v -> 1-v above the threshold
  horizontal_flip,
  auto_augment,     // one random pick: rotate/translate/contrast/brightness/sharpness
  cutout,           // one zero-filled square, side out_size/4
};

const char* aug_op_name(AugOp op);

struct AugStep {
  AugOp op;
  double prob;
};

struct AugPolicy {
  std::string kind;
  int out_size = 32;
  std::vector<AugStep> steps;

  double crop_scale_min = 0.2, crop_scale_max = 1.0;
  double jitter_brightness = 0.4, jitter_contrast = 0.4;
  double jitter_saturation = 0.2, jitter_hue = 0.1;
  double blur_sigma_min = 0.1, blur_sigma_max = 2.0;
  double solarize_threshold = 0.5;

  bool has(AugOp op) const;
};

// Pre-train strong view: crop, jitter 0.8, grayscale 0.2, blur always,
// solarize 0.2, flip 0.5 (in that order).
AugPolicy pretrain_strong_policy(int out_size);
// Identical list minus the solarize op entirely.
AugPolicy pretrain_weak_policy(int out_size);
// Crop, one reduced auto-augment pick, cutout.
AugPolicy finetune_policy(int out_size);
// Crop and flip only.
AugPolicy linprobe_policy(int out_size);

struct AugTrace {
  std::vector<AugOp> fired;
  bool saw(AugOp op) const;
};

// Deterministic under (img, policy, rng state). Output is always
// out_size x out_size with the input's channel count, clamped to [0,1].
// If the crop op does not fire the image is still resized to out_size.
ImageRecord augment(const ImageRecord& img, const AugPolicy& policy, Rng& rng,
                    AugTrace* trace = nullptr);

// Strong view then weak view off the same stream.
std::pair<ImageRecord, ImageRecord> two_views(const ImageRecord& img, int out_size, Rng& rng);

}  // namespace macrl
