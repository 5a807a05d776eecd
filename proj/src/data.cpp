#include "macrl/data.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "macrl/errors.hpp"

namespace macrl {

Dataset load_cifar_binary(const std::string& path, int num_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  constexpr std::size_t kRecord = 3073;
  constexpr int kSide = 32;
  if (bytes.empty() || bytes.size() % kRecord != 0)
    throw IoError("'" + path + "': " + std::to_string(bytes.size()) +
                  " bytes is not a whole number of 3073-byte records");

  Dataset out;
  out.h = out.w = kSide;
  out.c = 3;
  out.num_classes = num_classes;
  out.records.reserve(bytes.size() / kRecord);
  for (std::size_t off = 0; off < bytes.size(); off += kRecord) {
    int label = bytes[off];
    if (label >= num_classes)
      throw IoError("'" + path + "': label " + std::to_string(label) + " at byte offset " +
                    std::to_string(off) + " exceeds " + std::to_string(num_classes) + " classes");
    ImageRecord rec;
    rec.h = rec.w = kSide;
    rec.c = 3;
    rec.label = label;
    rec.pixels.resize(static_cast<std::size_t>(kSide) * kSide * 3);
    const unsigned char* planes = bytes.data() + off + 1;
    for (int y = 0; y < kSide; ++y)
      for (int x = 0; x < kSide; ++x)
        for (int ch = 0; ch < 3; ++ch)
          rec.at(y, x, ch) =
              static_cast<float>(planes[ch * kSide * kSide + y * kSide + x]) / 255.0f;
    out.records.push_back(std::move(rec));
  }
  return out;
}

Dataset synth_dataset(int n, int size, int channels, double noise_amplitude, std::uint64_t seed) {
  if (n < 2) throw ValueError("synth_dataset: need at least 2 samples, got " + std::to_string(n));
  if (size <= 0 || channels <= 0)
    throw ValueError("synth_dataset: size and channels must be positive");
  if (noise_amplitude < 0)
    throw ValueError("synth_dataset: noise amplitude must be non-negative");

  // Each sample draws its own stripe period and phase, so class identity
  // lives in the orientation of the local structure rather than in any fixed
  // pixel. Periods divide the image side, which keeps every full row and
  // column mean at exactly 0.5: the stripes themselves are invisible to a
  // linear readout of raw pixels. A faint constant anchor line (first row
  // for class 0, first column for class 1) restores exact linear
  // separability at zero noise without surviving realistic noise levels.
  constexpr double kAnchor = 0.05;
  Dataset out;
  out.h = out.w = size;
  out.c = channels;
  out.num_classes = 2;
  out.records.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng = derive_rng(seed, rng_tag::data, static_cast<std::uint64_t>(i), 0, 0);
    ImageRecord rec;
    rec.h = rec.w = size;
    rec.c = channels;
    rec.label = i % 2;
    rec.pixels.resize(static_cast<std::size_t>(size) * size * channels);
    double contrast = rng.uniform(0.7, 1.0);
    double amp = 0.3 * contrast;
    const int period = 4;
    int phase = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(period)));
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        int coord = rec.label == 0 ? y : x;
        double v = 0.5 + (((coord + phase) % period) < period / 2 ? amp : -amp);
        if ((rec.label == 0 && y == 0) || (rec.label == 1 && x == 0)) v = 0.5 + kAnchor;
        for (int ch = 0; ch < channels; ++ch) {
          double noisy = v + (noise_amplitude > 0
                                  ? rng.uniform(-noise_amplitude, noise_amplitude)
                                  : 0.0);
          rec.at(y, x, ch) = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
        }
      }
    out.records.push_back(std::move(rec));
  }
  return out;
}

template <typename T>
Tensor<T> batch_images(const Dataset& data, const std::vector<int>& indices) {
  if (indices.empty()) throw ValueError("batch_images: empty index list");
  Shape s{static_cast<int>(indices.size()), data.h, data.w, data.c};
  std::vector<T> v(static_cast<std::size_t>(shape_numel(s)));
  std::size_t per = static_cast<std::size_t>(data.h) * data.w * data.c;
  for (std::size_t b = 0; b < indices.size(); ++b) {
    int idx = indices[b];
    if (idx < 0 || static_cast<std::size_t>(idx) >= data.records.size())
      throw ValueError("batch_images: index " + std::to_string(idx) + " out of range for " +
                       std::to_string(data.records.size()) + " records");
    const auto& px = data.records[static_cast<std::size_t>(idx)].pixels;
    for (std::size_t i = 0; i < per; ++i) v[b * per + i] = static_cast<T>(px[i]);
  }
  return Tensor<T>(std::move(s), std::move(v));
}

std::vector<int> batch_labels(const Dataset& data, const std::vector<int>& indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (int idx : indices) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= data.records.size())
      throw ValueError("batch_labels: index " + std::to_string(idx) + " out of range for " +
                       std::to_string(data.records.size()) + " records");
    out.push_back(data.records[static_cast<std::size_t>(idx)].label);
  }
  return out;
}

template <typename T>
Tensor<T> image_to_tensor(const ImageRecord& img) {
  Shape s{1, img.h, img.w, img.c};
  std::vector<T> v(img.pixels.begin(), img.pixels.end());
  return Tensor<T>(std::move(s), std::move(v));
}

template Tensor<float> batch_images<float>(const Dataset&, const std::vector<int>&);
template Tensor<double> batch_images<double>(const Dataset&, const std::vector<int>&);
template Tensor<float> image_to_tensor<float>(const ImageRecord&);
template Tensor<double> image_to_tensor<double>(const ImageRecord&);

}  // namespace macrl
