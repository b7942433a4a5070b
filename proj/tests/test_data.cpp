#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>

#include "taylornet/data.hpp"

using namespace taylornet;

TEST(Reflection, ScalarOracle) {
  // position 5, velocity +3, wall at 8: next positions 8, then 5 with v = -3
  double p = 5, v = 3;
  reflect_step(p, v, 8);
  EXPECT_DOUBLE_EQ(p, 8);
  EXPECT_DOUBLE_EQ(v, 3);
  reflect_step(p, v, 8);
  EXPECT_DOUBLE_EQ(p, 5);
  EXPECT_DOUBLE_EQ(v, -3);
  // lower wall
  p = 1;
  v = -4;
  reflect_step(p, v, 8);
  EXPECT_DOUBLE_EQ(p, 3);
  EXPECT_DOUBLE_EQ(v, 4);
}

TEST(Reflection, StaysInBoundsOverManyRandomTrajectories) {
  Rng rng(99);
  for (int trial = 0; trial < 10000; ++trial) {
    const double maxp = rng.uniform(4, 30);
    double p = rng.uniform(0, maxp), v = rng.uniform(-4, 4);
    for (int t = 0; t < 25; ++t) {
      reflect_step(p, v, maxp);
      ASSERT_GE(p, 0.0);
      ASSERT_LE(p, maxp);
    }
  }
}

TEST(Bouncing, ZeroVelocityGivesStaticSequence) {
  BounceSpec spec = tiny_bounce_spec();
  spec.max_speed = 0.0;
  spec.batch = 2;
  spec.frames = 6;
  auto batch = generate_bouncing(spec, 42);
  for (int b = 0; b < 2; ++b)
    for (int t = 1; t < 6; ++t)
      for (int i = 0; i < 32 * 32; ++i)
        ASSERT_EQ(batch.frames[((b * 6 + t) * 32 * 32) + i], batch.frames[(b * 6) * 32 * 32 + i]);
}

TEST(Bouncing, DeterministicGivenSeed) {
  BounceSpec spec = tiny_bounce_spec();
  spec.batch = 3;
  auto a = generate_bouncing(spec, 7), b = generate_bouncing(spec, 7);
  ASSERT_EQ(a.frames.size(), b.frames.size());
  for (int64_t i = 0; i < a.frames.size(); ++i) ASSERT_EQ(a.frames[i], b.frames[i]);
  auto c = generate_bouncing(spec, 8);
  int64_t diff = 0;
  for (int64_t i = 0; i < a.frames.size(); ++i) diff += a.frames[i] != c.frames[i];
  EXPECT_GT(diff, 0);
}

TEST(Bouncing, CompositionBoundedAndInRange) {
  BounceSpec spec = tiny_bounce_spec();
  spec.sprites_per_sequence = 3;  // force overlaps
  spec.batch = 4;
  auto batch = generate_bouncing(spec, 11);
  for (int64_t i = 0; i < batch.frames.size(); ++i) {
    ASSERT_GE(batch.frames[i], 0.0f);
    ASSERT_LE(batch.frames[i], 1.0f);
  }
}

TEST(Bouncing, SpriteLargerThanCanvasRejected) {
  BounceSpec spec;
  spec.canvas = 16;
  spec.sprite_set.push_back(Tensor<float>(Shape{20, 20}, 1.0f));
  EXPECT_THROW(generate_bouncing(spec, 1), std::invalid_argument);
}

TEST(Bump, ZeroVelocityIdenticalFrames) {
  auto b = generate_translating_bump(32, 0, 0, 4);
  for (int t = 1; t < 4; ++t)
    for (int i = 0; i < 32 * 32; ++i) ASSERT_EQ(b.frames[t * 32 * 32 + i], b.frames[i]);
}

TEST(Bump, CenterTracksVelocityByArgmax) {
  auto b = generate_translating_bump(32, 1.0, 0.0, 3, 1.5, 12.0, 16.0);
  for (int t = 0; t < 3; ++t) {
    int best = 0;
    float bv = -1;
    for (int i = 0; i < 32 * 32; ++i)
      if (b.frames[t * 32 * 32 + i] > bv) {
        bv = b.frames[t * 32 * 32 + i];
        best = i;
      }
    EXPECT_EQ(best / 32, 12 + t);  // row index advances by exactly 1 per frame
    EXPECT_EQ(best % 32, 16);
  }
}

TEST(Bump, MassConservedWhileInCanvas) {
  auto b = generate_translating_bump(40, 0.7, -0.4, 6, 1.5);
  double mass0 = 0;
  for (int i = 0; i < 40 * 40; ++i) mass0 += b.frames[i];
  for (int t = 1; t < 6; ++t) {
    double mass = 0;
    for (int i = 0; i < 40 * 40; ++i) mass += b.frames[t * 40 * 40 + i];
    EXPECT_NEAR(mass / mass0, 1.0, 1e-6);
  }
}

TEST(Bump, ExitingCanvasRejected) {
  EXPECT_THROW(generate_translating_bump(32, 3.0, 0.0, 10), std::invalid_argument);
}

TEST(Sprites, BuiltInFallbackContract) {
  auto sprites = load_digit_sprites("");
  ASSERT_EQ(sprites.size(), 10u);
  for (const auto& s : sprites) {
    ASSERT_EQ(s.shape(), (Shape{28, 28}));
    float lo = 1, hi = 0;
    for (int64_t i = 0; i < s.size(); ++i) {
      lo = std::min(lo, s[i]);
      hi = std::max(hi, s[i]);
    }
    EXPECT_GE(lo, 0.0f);
    EXPECT_LE(hi, 1.0f);
    EXPECT_GT(hi, 0.5f);  // glyph has visible ink
  }
  // glyphs are pairwise distinct
  for (int a = 0; a < 10; ++a)
    for (int b = a + 1; b < 10; ++b) {
      double d = 0;
      for (int64_t i = 0; i < sprites[a].size(); ++i)
        d += std::abs(sprites[a][i] - sprites[b][i]);
      EXPECT_GT(d, 1.0) << a << " vs " << b;
    }
}

TEST(Sprites, IdxFileRoundTripAndErrors) {
  const std::string path = ::testing::TempDir() + "/sprites-idx3-ubyte";
  {
    std::ofstream out(path, std::ios::binary);
    auto be32 = [&out](uint32_t v) {
      unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                            static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
      out.write(reinterpret_cast<char*>(b), 4);
    };
    be32(0x00000803);
    be32(12);
    be32(28);
    be32(28);
    std::vector<unsigned char> img(28 * 28);
    for (int i = 0; i < 12; ++i) {
      for (size_t j = 0; j < img.size(); ++j) img[j] = static_cast<unsigned char>((i * 37 + j) % 256);
      out.write(reinterpret_cast<char*>(img.data()), img.size());
    }
  }
  auto sprites = load_digit_sprites(path);
  ASSERT_EQ(sprites.size(), 12u);
  EXPECT_NEAR(sprites[1][0], 37 / 255.0, 1e-6);

  // corrupt magic
  {
    std::ofstream out(path, std::ios::binary);
    out.write("junkjunk", 8);
  }
  EXPECT_THROW(load_digit_sprites(path), std::runtime_error);
  // missing file with fallback disabled
  EXPECT_THROW(load_digit_sprites("", false), std::runtime_error);
  EXPECT_THROW(load_digit_sprites("/nonexistent/file"), std::runtime_error);
  std::remove(path.c_str());
}

TEST(Sprites, ResizePreservesRangeAndCorners) {
  auto g = render_glyph(8, 28);
  auto r = resize_bilinear(g, 14);
  ASSERT_EQ(r.shape(), (Shape{14, 14}));
  EXPECT_FLOAT_EQ(r.at(0, 0), g.at(0, 0));
  EXPECT_FLOAT_EQ(r.at(13, 13), g.at(27, 27));
  for (int64_t i = 0; i < r.size(); ++i) {
    ASSERT_GE(r[i], 0.0f);
    ASSERT_LE(r[i], 1.0f);
  }
}
