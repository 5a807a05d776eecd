#include "macrl/augment.hpp"

#include <algorithm>
#include <cmath>

#include "macrl/errors.hpp"

namespace macrl {

namespace {

constexpr double kPi = 3.14159265358979323846;

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

float luma(const ImageRecord& img, int y, int x) {
  if (img.c < 3) return img.at(y, x, 0);
  return 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) + 0.114f * img.at(y, x, 2);
}

ImageRecord blank_like(const ImageRecord& img, int h, int w) {
  ImageRecord out;
  out.h = h;
  out.w = w;
  out.c = img.c;
  out.label = img.label;
  out.pixels.assign(static_cast<std::size_t>(h) * w * img.c, 0.0f);
  return out;
}

float sample_clamped(const ImageRecord& img, int y, int x, int ch) {
  y = std::clamp(y, 0, img.h - 1);
  x = std::clamp(x, 0, img.w - 1);
  return img.at(y, x, ch);
}

float sample_bilinear(const ImageRecord& img, double sy, double sx, int ch) {
  int y0 = static_cast<int>(std::floor(sy));
  int x0 = static_cast<int>(std::floor(sx));
  double fy = sy - y0, fx = sx - x0;
  float a = sample_clamped(img, y0, x0, ch);
  float b = sample_clamped(img, y0, x0 + 1, ch);
  float c = sample_clamped(img, y0 + 1, x0, ch);
  float d = sample_clamped(img, y0 + 1, x0 + 1, ch);
  double top = a + (b - a) * fx;
  double bot = c + (d - c) * fx;
  return static_cast<float>(top + (bot - top) * fy);
}

ImageRecord resize_bilinear(const ImageRecord& img, int oh, int ow) {
  if (img.h == oh && img.w == ow) return img;
  ImageRecord out = blank_like(img, oh, ow);
  double sy = static_cast<double>(img.h) / oh;
  double sx = static_cast<double>(img.w) / ow;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double src_y = (y + 0.5) * sy - 0.5;
      double src_x = (x + 0.5) * sx - 0.5;
      for (int ch = 0; ch < img.c; ++ch)
        out.at(y, x, ch) = clamp01(sample_bilinear(img, src_y, src_x, ch));
    }
  return out;
}

ImageRecord crop(const ImageRecord& img, int top, int left, int ch, int cw) {
  ImageRecord out = blank_like(img, ch, cw);
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x)
      for (int k = 0; k < img.c; ++k) out.at(y, x, k) = img.at(top + y, left + x, k);
  return out;
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  float mx = std::max({r, g, b});
  float mn = std::min({r, g, b});
  v = mx;
  float d = mx - mn;
  s = mx > 0 ? d / mx : 0.0f;
  if (d <= 0) {
    h = 0;
    return;
  }
  if (mx == r)
    h = (g - b) / d + (g < b ? 6.0f : 0.0f);
  else if (mx == g)
    h = (b - r) / d + 2.0f;
  else
    h = (r - g) / d + 4.0f;
  h /= 6.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  if (s <= 0) {
    r = g = b = v;
    return;
  }
  h = h - std::floor(h);
  float hf = h * 6.0f;
  int i = std::min(static_cast<int>(hf), 5);
  float f = hf - i;
  float p = v * (1 - s);
  float q = v * (1 - s * f);
  float t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

ImageRecord apply_resize_crop(const ImageRecord& img, const AugPolicy& p, Rng& rng) {
  double area = static_cast<double>(img.h) * img.w;
  for (int attempt = 0; attempt < 10; ++attempt) {
    double target = rng.uniform(p.crop_scale_min, p.crop_scale_max) * area;
    double aspect = std::exp(rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
    int cw = std::max(1, static_cast<int>(std::lround(std::sqrt(target * aspect))));
    int ch = std::max(1, static_cast<int>(std::lround(std::sqrt(target / aspect))));
    if (cw <= img.w && ch <= img.h) {
      int top = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(img.h - ch + 1)));
      int left = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(img.w - cw + 1)));
      return resize_bilinear(crop(img, top, left, ch, cw), p.out_size, p.out_size);
    }
  }
  int side = std::min(img.h, img.w);
  return resize_bilinear(crop(img, (img.h - side) / 2, (img.w - side) / 2, side, side),
                         p.out_size, p.out_size);
}

void apply_brightness(ImageRecord& img, double f) {
  for (auto& v : img.pixels) v = clamp01(v * f);
}

void apply_contrast(ImageRecord& img, double f) {
  double mean = 0;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) mean += luma(img, y, x);
  mean /= static_cast<double>(img.h) * img.w;
  for (auto& v : img.pixels) v = clamp01(mean + (v - mean) * f);
}

void apply_saturation(ImageRecord& img, double f) {
  if (img.c < 3) return;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      float g = luma(img, y, x);
      for (int ch = 0; ch < img.c; ++ch)
        img.at(y, x, ch) = clamp01(g + (img.at(y, x, ch) - g) * f);
    }
}

void apply_hue(ImageRecord& img, double shift) {
  if (img.c < 3) return;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      float h, s, v;
      rgb_to_hsv(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2), h, s, v);
      float r, g, b;
      hsv_to_rgb(h + static_cast<float>(shift), s, v, r, g, b);
      img.at(y, x, 0) = clamp01(r);
      img.at(y, x, 1) = clamp01(g);
      img.at(y, x, 2) = clamp01(b);
    }
}

void apply_jitter(ImageRecord& img, const AugPolicy& p, Rng& rng) {
  // always four draws so the stream advance is input-independent
  double fb = rng.uniform(1.0 - p.jitter_brightness, 1.0 + p.jitter_brightness);
  double fc = rng.uniform(1.0 - p.jitter_contrast, 1.0 + p.jitter_contrast);
  double fs = rng.uniform(1.0 - p.jitter_saturation, 1.0 + p.jitter_saturation);
  double dh = rng.uniform(-p.jitter_hue, p.jitter_hue);
  apply_brightness(img, fb);
  apply_contrast(img, fc);
  apply_saturation(img, fs);
  apply_hue(img, dh);
}

void apply_grayscale(ImageRecord& img) {
  if (img.c < 3) return;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      float g = luma(img, y, x);
      for (int ch = 0; ch < img.c; ++ch) img.at(y, x, ch) = g;
    }
}

int blur_kernel_size(int out_size) {
  // smallest odd integer covering out_size / 10
  int k = static_cast<int>(std::ceil(out_size / 10.0));
  if (k < 1) k = 1;
  if (k % 2 == 0) k += 1;
  return k;
}

void apply_blur(ImageRecord& img, double sigma, int ksize) {
  int r = ksize / 2;
  std::vector<double> w(static_cast<std::size_t>(ksize));
  double sum = 0;
  for (int i = 0; i < ksize; ++i) {
    double d = i - r;
    w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
    sum += w[static_cast<std::size_t>(i)];
  }
  for (auto& v : w) v /= sum;

  ImageRecord tmp = img;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < img.c; ++ch) {
        double acc = 0;
        for (int i = 0; i < ksize; ++i) acc += w[static_cast<std::size_t>(i)] * sample_clamped(img, y, x + i - r, ch);
        tmp.at(y, x, ch) = static_cast<float>(acc);
      }
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < img.c; ++ch) {
        double acc = 0;
        for (int i = 0; i < ksize; ++i) acc += w[static_cast<std::size_t>(i)] * sample_clamped(tmp, y + i - r, x, ch);
        img.at(y, x, ch) = clamp01(acc);
      }
}

void apply_solarize(ImageRecord& img, double threshold) {
  for (auto& v : img.pixels)
    if (v > threshold) v = 1.0f - v;
}

void apply_flip(ImageRecord& img) {
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w / 2; ++x)
      for (int ch = 0; ch < img.c; ++ch)
        std::swap(img.at(y, x, ch), img.at(y, img.w - 1 - x, ch));
}

void apply_rotate(ImageRecord& img, double degrees) {
  double rad = degrees * kPi / 180.0;
  double cs = std::cos(rad), sn = std::sin(rad);
  double cy = (img.h - 1) / 2.0, cx = (img.w - 1) / 2.0;
  ImageRecord out = img;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      double dy = y - cy, dx = x - cx;
      double sy = cy + dy * cs - dx * sn;
      double sx = cx + dy * sn + dx * cs;
      for (int ch = 0; ch < img.c; ++ch) out.at(y, x, ch) = clamp01(sample_bilinear(img, sy, sx, ch));
    }
  img = std::move(out);
}

void apply_translate(ImageRecord& img, int dy, int dx) {
  ImageRecord out = img;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < img.c; ++ch)
        out.at(y, x, ch) = sample_clamped(img, y - dy, x - dx, ch);
  img = std::move(out);
}

void apply_sharpness(ImageRecord& img, double amount) {
  ImageRecord blurred = img;
  apply_blur(blurred, 1.0, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    img.pixels[i] = clamp01(img.pixels[i] + amount * (img.pixels[i] - blurred.pixels[i]));
}

void apply_auto_augment(ImageRecord& img, Rng& rng) {
  switch (rng.uniform_int(5)) {
    case 0: apply_rotate(img, rng.uniform(-15.0, 15.0)); break;
    case 1: {
      int span = std::max(1, img.w / 10);
      int dy = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(2 * span + 1))) - span;
      int dx = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(2 * span + 1))) - span;
      apply_translate(img, dy, dx);
      break;
    }
    case 2: apply_contrast(img, rng.uniform(0.5, 1.5)); break;
    case 3: apply_brightness(img, rng.uniform(0.5, 1.5)); break;
    default: apply_sharpness(img, rng.uniform(0.0, 1.0)); break;
  }
}

void apply_cutout(ImageRecord& img, Rng& rng) {
  int side = std::max(1, img.h / 4);
  int top = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(img.h - side + 1)));
  int left = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(img.w - side + 1)));
  for (int y = top; y < top + side; ++y)
    for (int x = left; x < left + side; ++x)
      for (int ch = 0; ch < img.c; ++ch) img.at(y, x, ch) = 0.0f;
}

}  // namespace

const char* aug_op_name(AugOp op) {
  switch (op) {
    case AugOp::resize_crop: return "resize_crop";
    case AugOp::color_jitter: return "color_jitter";
    case AugOp::grayscale: return "grayscale";
    case AugOp::gaussian_blur: return "gaussian_blur";
    case AugOp::solarize: return "solarize";
    case AugOp::horizontal_flip: return "horizontal_flip";
    case AugOp::auto_augment: return "auto_augment";
    case AugOp::cutout: return "cutout";
  }
  return "?";
}

bool AugPolicy::has(AugOp op) const {
  for (const auto& s : steps)
    if (s.op == op) return true;
  return false;
}

bool AugTrace::saw(AugOp op) const {
  for (auto f : fired)
    if (f == op) return true;
  return false;
}

AugPolicy pretrain_strong_policy(int out_size) {
  AugPolicy p;
  p.kind = "pretrain-strong";
  p.out_size = out_size;
  p.steps = {{AugOp::resize_crop, 1.0},   {AugOp::color_jitter, 0.8},
             {AugOp::grayscale, 0.2},     {AugOp::gaussian_blur, 1.0},
             {AugOp::solarize, 0.2},      {AugOp::horizontal_flip, 0.5}};
  return p;
}

AugPolicy pretrain_weak_policy(int out_size) {
  AugPolicy p = pretrain_strong_policy(out_size);
  p.kind = "pretrain-weak";
  p.steps.erase(std::remove_if(p.steps.begin(), p.steps.end(),
                               [](const AugStep& s) { return s.op == AugOp::solarize; }),
                p.steps.end());
  return p;
}

AugPolicy finetune_policy(int out_size) {
  AugPolicy p;
  p.kind = "finetune";
  p.out_size = out_size;
  p.steps = {{AugOp::resize_crop, 1.0}, {AugOp::auto_augment, 1.0}, {AugOp::cutout, 1.0}};
  return p;
}

AugPolicy linprobe_policy(int out_size) {
  AugPolicy p;
  p.kind = "linprobe";
  p.out_size = out_size;
  p.steps = {{AugOp::resize_crop, 1.0}, {AugOp::horizontal_flip, 0.5}};
  return p;
}

ImageRecord augment(const ImageRecord& img, const AugPolicy& policy, Rng& rng, AugTrace* trace) {
  if (img.h <= 0 || img.w <= 0 || img.c <= 0 || policy.out_size <= 0)
    throw ValueError("augment: image and policy sizes must be positive");
  ImageRecord out = img;
  bool sized = false;
  for (const auto& step : policy.steps) {
    bool fire = rng.uniform() < step.prob;
    if (step.op == AugOp::resize_crop) {
      // the crop stage always leaves the image at out_size, fired or not
      out = fire ? apply_resize_crop(out, policy, rng)
                 : resize_bilinear(out, policy.out_size, policy.out_size);
      sized = true;
      if (fire && trace) trace->fired.push_back(step.op);
      continue;
    }
    if (!fire) continue;
    switch (step.op) {
      case AugOp::color_jitter: apply_jitter(out, policy, rng); break;
      case AugOp::grayscale: apply_grayscale(out); break;
      case AugOp::gaussian_blur:
        apply_blur(out, rng.uniform(policy.blur_sigma_min, policy.blur_sigma_max),
                   blur_kernel_size(policy.out_size));
        break;
      case AugOp::solarize: apply_solarize(out, policy.solarize_threshold); break;
      case AugOp::horizontal_flip: apply_flip(out); break;
      case AugOp::auto_augment: apply_auto_augment(out, rng); break;
      case AugOp::cutout: apply_cutout(out, rng); break;
      case AugOp::resize_crop: break;  // handled above
    }
    if (trace) trace->fired.push_back(step.op);
  }
  if (!sized) out = resize_bilinear(out, policy.out_size, policy.out_size);
  return out;
}

std::pair<ImageRecord, ImageRecord> two_views(const ImageRecord& img, int out_size, Rng& rng) {
  ImageRecord x1 = augment(img, pretrain_strong_policy(out_size), rng);
  ImageRecord x2 = augment(img, pretrain_weak_policy(out_size), rng);
  return {std::move(x1), std::move(x2)};
}

}  // namespace macrl
