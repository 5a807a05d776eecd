#include "macrl/viz.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "macrl/augment.hpp"
#include "macrl/errors.hpp"
#include "macrl/nn.hpp"

namespace macrl {

namespace {

// Head-mean + identity, rows renormalized. In and out are [N, N] doubles.
void mix_layer(const std::vector<double>& head_mean, int n, std::vector<double>& out) {
  out = head_mean;
  for (int i = 0; i < n; ++i) out[static_cast<size_t>(i) * n + i] += 1.0;
  for (int i = 0; i < n; ++i) {
    double row = 0;
    for (int j = 0; j < n; ++j) row += out[static_cast<size_t>(i) * n + j];
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] /= row;
  }
}

void matmul_sq(const std::vector<double>& a, const std::vector<double>& b, int n,
               std::vector<double>& out) {
  out.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      double aik = a[static_cast<size_t>(i) * n + k];
      for (int j = 0; j < n; ++j)
        out[static_cast<size_t>(i) * n + j] += aik * b[static_cast<size_t>(k) * n + j];
    }
}

}  // namespace

template <typename T>
Tensor<T> attention_rollout(const std::vector<Tensor<T>>& maps) {
  if (maps.empty()) throw ValueError("attention_rollout: no layers captured");
  const Shape& s0 = maps.front().shape();
  if (s0.size() != 4 || s0[2] != s0[3])
    throw ShapeError("attention_rollout: expected [batch, heads, N, N] maps");
  int batch = static_cast<int>(s0[0]);
  int n = static_cast<int>(s0[2]);
  for (const auto& m : maps)
    if (m.shape() != s0) throw ShapeError("attention_rollout: layer map shapes differ");

  Tensor<T> result(Shape{batch, n, n});
  std::vector<double> mean(static_cast<size_t>(n) * n);
  std::vector<double> layer, rolled, next;
  for (int b = 0; b < batch; ++b) {
    rolled.clear();
    for (const auto& m : maps) {
      int heads = static_cast<int>(m.shape()[1]);
      const T* src = m.data().data();
      std::fill(mean.begin(), mean.end(), 0.0);
      for (int h = 0; h < heads; ++h) {
        const T* p = src + (static_cast<size_t>(b) * heads + h) * n * n;
        for (size_t i = 0; i < mean.size(); ++i) mean[i] += static_cast<double>(p[i]);
      }
      for (auto& v : mean) v /= heads;
      mix_layer(mean, n, layer);
      if (rolled.empty()) {
        rolled = layer;
      } else {
        matmul_sq(layer, rolled, n, next);
        rolled.swap(next);
      }
    }
    T* dst = result.mutable_data().data() + static_cast<size_t>(b) * n * n;
    for (size_t i = 0; i < rolled.size(); ++i) dst[i] = static_cast<T>(rolled[i]);
  }
  return result;
}

template <typename T>
std::vector<double> rollout_relevance(const Tensor<T>& rollout, int sample) {
  const Shape& s = rollout.shape();
  if (s.size() != 3 || s[1] != s[2])
    throw ShapeError("rollout_relevance: expected a [batch, N, N] rollout");
  if (sample < 0 || sample >= s[0]) throw ValueError("rollout_relevance: sample out of range");
  int n = static_cast<int>(s[1]);
  const T* p = rollout.data().data() + static_cast<size_t>(sample) * n * n;
  std::vector<double> out(n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out[j] += static_cast<double>(p[static_cast<size_t>(i) * n + j]);
  for (auto& v : out) v /= n;
  return out;
}

std::vector<double> upsample_bilinear(const std::vector<double>& src, int src_side, int dst_side) {
  if (src_side <= 0 || dst_side <= 0 ||
      src.size() != static_cast<size_t>(src_side) * src_side)
    throw ShapeError("upsample_bilinear: src is not a src_side*src_side grid");
  std::vector<double> out(static_cast<size_t>(dst_side) * dst_side);
  double scale = static_cast<double>(src_side) / dst_side;
  auto sample_at = [&](double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(src_side - 1));
    x = std::clamp(x, 0.0, static_cast<double>(src_side - 1));
    int y0 = static_cast<int>(std::floor(y));
    int x0 = static_cast<int>(std::floor(x));
    int y1 = std::min(y0 + 1, src_side - 1);
    int x1 = std::min(x0 + 1, src_side - 1);
    double fy = y - y0, fx = x - x0;
    double top = src[static_cast<size_t>(y0) * src_side + x0] * (1 - fx) +
                 src[static_cast<size_t>(y0) * src_side + x1] * fx;
    double bot = src[static_cast<size_t>(y1) * src_side + x0] * (1 - fx) +
                 src[static_cast<size_t>(y1) * src_side + x1] * fx;
    return top * (1 - fy) + bot * fy;
  };
  for (int y = 0; y < dst_side; ++y)
    for (int x = 0; x < dst_side; ++x)
      out[static_cast<size_t>(y) * dst_side + x] =
          sample_at((y + 0.5) * scale - 0.5, (x + 0.5) * scale - 0.5);
  return out;
}

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

std::vector<std::uint8_t> heat_rgb(const std::vector<double>& values) {
  double lo = values.empty() ? 0.0 : *std::min_element(values.begin(), values.end());
  double hi = values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
  double span = hi - lo;
  std::vector<std::uint8_t> out;
  out.reserve(values.size() * 3);
  for (double v : values) {
    double t = span > 0 ? (v - lo) / span : 0.0;
    out.push_back(to_byte(3.0 * t));
    out.push_back(to_byte(3.0 * t - 1.0));
    out.push_back(to_byte(3.0 * t - 2.0));
  }
  return out;
}

std::vector<std::uint8_t> image_rgb(const ImageRecord& img) {
  std::vector<std::uint8_t> out;
  out.reserve(static_cast<size_t>(img.h) * img.w * 3);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < 3; ++ch)
        out.push_back(to_byte(img.at(y, x, img.c == 3 ? ch : 0)));
  return out;
}

void write_ppm(const std::string& path, int w, int h, const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<size_t>(w) * h * 3)
    throw ShapeError("write_ppm: buffer is not w*h*3 bytes");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "P6\n" << w << " " << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!f) throw IoError("failed writing '" + path + "'");
}

template <typename T>
std::vector<std::string> attn_viz(const ModelParams<T>& params, const Dataset& data,
                                  long long count, const std::string& out_dir) {
  if (data.records.empty()) throw ValueError("attn_viz: dataset is empty");
  const ModelConfig& cfg = params.cfg;
  if (data.c != cfg.channels)
    throw ConfigError("attn_viz: dataset has " + std::to_string(data.c) +
                      " channels, model expects " + std::to_string(cfg.channels));
  std::filesystem::create_directories(out_dir);

  // Resize-only pipeline; with no ops listed it draws nothing from the stream.
  AugPolicy plain;
  plain.kind = "viz";
  plain.out_size = cfg.image_size;
  Rng rng(0);

  long long n = std::min<long long>(count, static_cast<long long>(data.size()));
  std::vector<std::string> written;
  for (long long i = 0; i < n; ++i) {
    ImageRecord rec = data.records[static_cast<size_t>(i)];
    if (rec.h != cfg.image_size || rec.w != cfg.image_size)
      rec = augment(rec, plain, rng);
    Tensor<T> x = image_to_tensor<T>(rec);
    AttnCapture<T> cap;
    classify<T>(nullptr, params, x, &cap);
    Tensor<T> rolled = attention_rollout(cap.maps);
    std::vector<double> rel = rollout_relevance(rolled, 0);
    std::vector<double> up = upsample_bilinear(rel, cfg.grid(), cfg.image_size);

    std::string stem = (std::filesystem::path(out_dir) / ("img_" + std::to_string(i))).string();
    std::string orig_path = stem + "_orig.ppm";
    std::string attn_path = stem + "_attn.ppm";
    write_ppm(orig_path, cfg.image_size, cfg.image_size, image_rgb(rec));
    write_ppm(attn_path, cfg.image_size, cfg.image_size, heat_rgb(up));
    written.push_back(orig_path);
    written.push_back(attn_path);
  }
  return written;
}

template Tensor<float> attention_rollout(const std::vector<Tensor<float>>&);
template Tensor<double> attention_rollout(const std::vector<Tensor<double>>&);
template std::vector<double> rollout_relevance(const Tensor<float>&, int);
template std::vector<double> rollout_relevance(const Tensor<double>&, int);
template std::vector<std::string> attn_viz(const ModelParams<float>&, const Dataset&, long long,
                                           const std::string&);
template std::vector<std::string> attn_viz(const ModelParams<double>&, const Dataset&, long long,
                                           const std::string&);

}  // namespace macrl
