// Synthetic video generation: bouncing-sprite sequences for training and a
// subpixel-exact translating Gaussian bump for analytic tests. Everything is
// a pure function of (spec, seed).
#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "taylornet/random.hpp"
#include "taylornet/tensor.hpp"

namespace taylornet {

// (batch, time, channel, height, width), values in [0, 1]
struct VideoBatch {
  Tensor<float> frames;
  uint64_t seed = 0;
  std::string source;

  int batch() const { return frames.dim(0); }
  int time() const { return frames.dim(1); }
  int channels() const { return frames.dim(2); }
  int height() const { return frames.dim(3); }
  int width() const { return frames.dim(4); }

  // one frame as a (1, C, H, W) tensor
  Tensor<float> frame(int b, int t) const {
    const int C = channels(), H = height(), W = width();
    Tensor<float> out(Shape{1, C, H, W});
    std::copy_n(&frames.at(b, t, 0, 0, 0), int64_t(C) * H * W, out.data());
    return out;
  }

  // all sequences at one time index as a (B, C, H, W) tensor
  Tensor<float> frames_at(int t) const {
    const int B = batch(), C = channels(), H = height(), W = width();
    Tensor<float> out(Shape{B, C, H, W});
    for (int b = 0; b < B; ++b)
      std::copy_n(&frames.at(b, t, 0, 0, 0), int64_t(C) * H * W, &out.at(b, 0, 0, 0));
    return out;
  }
};

// ---------------------------------------------------------------------------
// Sprites

// Procedurally drawn seven-segment style digit glyph, antialiased, in [0,1].
inline Tensor<float> render_glyph(int digit, int size) {
  struct Seg {
    double x1, y1, x2, y2;
  };
  static const Seg segs[7] = {
      {.08, .15, .08, .85},  // a: top
      {.08, .85, .50, .85},  // b: upper right
      {.50, .85, .92, .85},  // c: lower right
      {.92, .15, .92, .85},  // d: bottom
      {.50, .15, .92, .15},  // e: lower left
      {.08, .15, .50, .15},  // f: upper left
      {.50, .15, .50, .85},  // g: middle
  };
  static const char* digit_segs[10] = {"abcdef", "bc",     "abged", "abgcd", "fgbc",
                                       "afgcd",  "afgedc", "abc",   "abcdefg", "abcfgd"};
  if (digit < 0 || digit > 9) throw std::invalid_argument("glyph digit out of range");
  Tensor<float> img(Shape{size, size});
  const double thick = 0.10;
  for (const char* s = digit_segs[digit]; *s; ++s) {
    const Seg& sg = segs[*s - 'a'];
    const double dx = sg.x2 - sg.x1, dy = sg.y2 - sg.y1;
    const double len2 = dx * dx + dy * dy;
    for (int xi = 0; xi < size; ++xi) {
      for (int yi = 0; yi < size; ++yi) {
        const double x = double(xi) / (size - 1), y = double(yi) / (size - 1);
        double t = ((x - sg.x1) * dx + (y - sg.y1) * dy) / len2;
        t = std::clamp(t, 0.0, 1.0);
        const double px = x - sg.x1 - t * dx, py = y - sg.y1 - t * dy;
        const double dist = std::sqrt(px * px + py * py);
        const double v = std::clamp(1.0 - dist / thick, 0.0, 1.0);
        img.at(xi, yi) = std::max(img.at(xi, yi), static_cast<float>(v));
      }
    }
  }
  return img;
}

inline Tensor<float> resize_bilinear(const Tensor<float>& src, int out_size) {
  const int H = src.dim(0), W = src.dim(1);
  Tensor<float> out(Shape{out_size, out_size});
  for (int x = 0; x < out_size; ++x) {
    for (int y = 0; y < out_size; ++y) {
      const double sx = double(x) * (H - 1) / (out_size - 1);
      const double sy = double(y) * (W - 1) / (out_size - 1);
      const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
      const int x1 = std::min(x0 + 1, H - 1), y1 = std::min(y0 + 1, W - 1);
      const double fx = sx - x0, fy = sy - y0;
      out.at(x, y) = static_cast<float>((1 - fx) * ((1 - fy) * src.at(x0, y0) + fy * src.at(x0, y1)) +
                                        fx * ((1 - fy) * src.at(x1, y0) + fy * src.at(x1, y1)));
    }
  }
  return out;
}

// Digit sprites from a local IDX image file (the classic 28x28 format), or
// the built-in glyph set when `source` is empty. The fallback keeps the repo
// self-contained; disable it to require the external file.
inline std::vector<Tensor<float>> load_digit_sprites(const std::string& source,
                                                     bool allow_fallback = true,
                                                     int max_sprites = 64) {
  if (source.empty()) {
    if (!allow_fallback) throw std::runtime_error("sprite file not given and fallback disabled");
    std::vector<Tensor<float>> out;
    for (int d = 0; d < 10; ++d) out.push_back(render_glyph(d, 28));
    return out;
  }
  std::ifstream in(source, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open sprite file: " + source);
  auto read_be32 = [&in]() {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | b[3];
  };
  const uint32_t magic = read_be32();
  if (!in || magic != 0x00000803)
    throw std::runtime_error("corrupt sprite file (bad IDX magic): " + source);
  const uint32_t n = read_be32(), rows = read_be32(), cols = read_be32();
  if (!in || rows != 28 || cols != 28)
    throw std::runtime_error("corrupt sprite file (expected 28x28 images): " + source);
  const int count = std::min<int>(static_cast<int>(n), max_sprites);
  std::vector<Tensor<float>> out;
  std::vector<unsigned char> buf(28 * 28);
  for (int i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), buf.size());
    if (!in) throw std::runtime_error("corrupt sprite file (truncated): " + source);
    Tensor<float> img(Shape{28, 28});
    for (int j = 0; j < 28 * 28; ++j) img[j] = buf[j] / 255.0f;
    out.push_back(std::move(img));
  }
  if (out.size() < 10) throw std::runtime_error("sprite file holds fewer than 10 images");
  return out;
}

// ---------------------------------------------------------------------------
// Bouncing sprites

struct BounceSpec {
  int canvas = 32;
  int frames = 20;
  int batch = 8;
  int sprites_per_sequence = 1;
  double max_speed = 2.0;               // per-axis velocity ~ U(-max_speed, max_speed)
  std::vector<Tensor<float>> sprite_set;  // square sprites, values in [0,1]
};

inline BounceSpec tiny_bounce_spec() {
  BounceSpec s;
  s.canvas = 32;
  s.sprites_per_sequence = 1;
  s.max_speed = 2.0;
  for (int d = 0; d < 10; ++d) s.sprite_set.push_back(resize_bilinear(render_glyph(d, 28), 14));
  return s;
}

inline BounceSpec full_bounce_spec(const std::string& sprite_file = "") {
  BounceSpec s;
  s.canvas = 64;
  s.sprites_per_sequence = 2;
  s.max_speed = 4.0;
  s.sprite_set = load_digit_sprites(sprite_file);
  return s;
}

// One elastic-reflection step against walls at 0 and max_pos. Exposed for
// direct testing against the scalar oracle.
inline void reflect_step(double& pos, double& vel, double max_pos) {
  pos += vel;
  while (pos < 0.0 || pos > max_pos) {
    if (pos < 0.0) {
      pos = -pos;
      vel = -vel;
    } else {
      pos = 2.0 * max_pos - pos;
      vel = -vel;
    }
  }
}

inline VideoBatch generate_bouncing(const BounceSpec& spec, uint64_t seed) {
  if (spec.sprite_set.empty()) throw std::invalid_argument("bounce spec has no sprites");
  for (const auto& s : spec.sprite_set)
    if (s.dim(0) > spec.canvas || s.dim(1) > spec.canvas)
      throw std::invalid_argument("sprite larger than canvas");
  VideoBatch out;
  out.seed = seed;
  out.source = "bouncing";
  out.frames = Tensor<float>(Shape{spec.batch, spec.frames, 1, spec.canvas, spec.canvas});
  Rng rng(seed);
  for (int b = 0; b < spec.batch; ++b) {
    struct Obj {
      const Tensor<float>* sprite;
      double px, py, vx, vy;
    };
    std::vector<Obj> objs;
    for (int o = 0; o < spec.sprites_per_sequence; ++o) {
      const auto& sp = spec.sprite_set[rng.uniform_int(static_cast<int>(spec.sprite_set.size()))];
      const double maxx = spec.canvas - sp.dim(0), maxy = spec.canvas - sp.dim(1);
      objs.push_back(Obj{&sp, rng.uniform(0, maxx), rng.uniform(0, maxy),
                         rng.uniform(-spec.max_speed, spec.max_speed),
                         rng.uniform(-spec.max_speed, spec.max_speed)});
    }
    for (int t = 0; t < spec.frames; ++t) {
      for (auto& obj : objs) {
        const int sh = obj.sprite->dim(0), sw = obj.sprite->dim(1);
        const int x0 = static_cast<int>(obj.px), y0 = static_cast<int>(obj.py);
        for (int x = 0; x < sh; ++x)
          for (int y = 0; y < sw; ++y) {
            float& px = out.frames.at(b, t, 0, x0 + x, y0 + y);
            px = std::max(px, obj.sprite->at(x, y));
          }
        reflect_step(obj.px, obj.vx, spec.canvas - sh);
        reflect_step(obj.py, obj.vy, spec.canvas - sw);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Analytic translating bump (subpixel-exact test sequence)

inline VideoBatch generate_translating_bump(int canvas, double vx, double vy, int length,
                                            double sigma = 1.5, double start_x = -1,
                                            double start_y = -1) {
  const double margin = std::ceil(6.0 * sigma);  // keeps the truncated tail mass < 1e-6 relative
  if (start_x < 0) start_x = canvas / 2.0;
  if (start_y < 0) start_y = canvas / 2.0;
  for (int t = 0; t < length; ++t) {
    const double cx = start_x + t * vx, cy = start_y + t * vy;
    if (cx < margin || cx > canvas - 1 - margin || cy < margin || cy > canvas - 1 - margin)
      throw std::invalid_argument("bump exits canvas at frame " + std::to_string(t));
  }
  VideoBatch out;
  out.source = "bump";
  out.frames = Tensor<float>(Shape{1, length, 1, canvas, canvas});
  for (int t = 0; t < length; ++t) {
    const double cx = start_x + t * vx, cy = start_y + t * vy;
    for (int x = 0; x < canvas; ++x)
      for (int y = 0; y < canvas; ++y) {
        const double dx = x - cx, dy = y - cy;
        out.frames.at(0, t, 0, x, y) =
            static_cast<float>(std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)));
      }
  }
  return out;
}

}  // namespace taylornet
