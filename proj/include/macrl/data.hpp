#pragma once

#include <string>
#include <vector>

#include "macrl/rng.hpp"
#include "macrl/tensor.hpp"

// Dataset ingestion: CIFAR-style binary files and a two-class synthetic
// stripe generator small enough to train against in tests.

namespace macrl {

struct ImageRecord {
  int h = 0, w = 0, c = 0;
  std::vector<float> pixels;  // HWC, values in [0,1]
  int label = -1;             // -1 when unlabeled

  float at(int y, int x, int ch) const {
    return pixels[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
  float& at(int y, int x, int ch) {
    return pixels[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
};

struct Dataset {
  int h = 0, w = 0, c = 0;
  int num_classes = 0;
  std::vector<ImageRecord> records;

  std::size_t size() const { return records.size(); }
};

// 3073-byte records: 1 label byte then 3072 channel-planar bytes (R plane,
// G plane, B plane, each 32x32 row-major), scaled to [0,1].
Dataset load_cifar_binary(const std::string& path, int num_classes = 10);

// Two balanced classes of square-wave stripe images: class 0 horizontal,
// class 1 vertical. Period 4 with a per-sample random phase and contrast in
// [0.7,1] around mid-gray; a faint constant anchor line (first row for class
// 0, first column for class 1) keeps the zero-noise dataset linearly
// separable on raw pixels. Uniform noise of the given amplitude is added
// last, clamped to [0,1]. Each sample draws from its own derived stream, so
// the dataset is identical no matter how it is batched.
Dataset synth_dataset(int n, int size, int channels, double noise_amplitude, std::uint64_t seed);

// Stack the chosen records into a [B,H,W,C] tensor, labels alongside.
template <typename T>
Tensor<T> batch_images(const Dataset& data, const std::vector<int>& indices);
std::vector<int> batch_labels(const Dataset& data, const std::vector<int>& indices);

template <typename T>
Tensor<T> image_to_tensor(const ImageRecord& img);

}  // namespace macrl
