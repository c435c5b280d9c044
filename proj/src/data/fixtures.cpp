#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "psyn/data.hpp"

namespace psyn {

namespace {

constexpr int kNoiseGrid = 5;

struct Rgb {
  double r, g, b;
};

// Blob colour and stripe texture are a pure function of the id.
Rgb blob_colour(int id) {
  return {215.0 + (id * 13) % 35, 140.0 + (id * 37) % 70, 110.0 + (id * 53) % 90};
}

double stripe_frequency(int id) { return 0.25 + 0.15 * (id % 5); }

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); }

}  // namespace

std::vector<PolypSample> make_fixtures(int n, int size, int n_ids, std::uint64_t seed) {
  if (n < 1 || n_ids < 1) throw DataError("make_fixtures: n and n_ids must be at least 1");
  if (size < 8) throw DataError("make_fixtures: size must be at least 8");
  const Rng root(seed);
  std::vector<PolypSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng = root.derive(static_cast<std::uint64_t>(i));
    const int id = i % n_ids;
    const double s = size;

    const double lx = rng.uniform(0.3, 0.7) * s, ly = rng.uniform(0.3, 0.7) * s;
    double noise[kNoiseGrid][kNoiseGrid];
    for (auto& row : noise)
      for (double& v : row) v = rng.normal(0.0, 10.0);

    const double rx = rng.uniform(0.12, 0.2) * s, ry = rng.uniform(0.12, 0.2) * s;
    const double margin = std::max(rx, ry) + 1.0;
    const double cx = rng.uniform(margin, s - margin), cy = rng.uniform(margin, s - margin);
    const double th = rng.uniform(0.0, std::numbers::pi);
    const double ct = std::cos(th), st = std::sin(th);
    const Rgb blob = blob_colour(id);
    const double freq = stripe_frequency(id);

    PolypSample sample;
    sample.image = Image::filled(size, size, 0);
    sample.mask = Mask::zeros(size, size);
    sample.polyp_id = id;
    char name[32];
    std::snprintf(name, sizeof name, "fixture_%04d.png", i);
    sample.source_name = name;

    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        const double u = (px - cx) * ct + (py - cy) * st;
        const double v = -(px - cx) * st + (py - cy) * ct;
        const double e = (u * u) / (rx * rx) + (v * v) / (ry * ry);
        double r, g, b;
        if (e <= 1.0) {
          sample.mask.set(x, y);
          const double shade = 1.0 - 0.25 * e;
          const double tex = 12.0 * std::sin(freq * (u + v));
          r = blob.r * shade + tex;
          g = blob.g * shade + tex;
          b = blob.b * shade + tex;
        } else {
          const double d = std::hypot(px - lx, py - ly) / (0.7 * s);
          const double light = 0.45 + 0.45 * std::min(1.0, d);
          // bilinear lookup into the coarse noise grid
          const double gx = px / s * (kNoiseGrid - 1), gy = py / s * (kNoiseGrid - 1);
          const int x0 = std::min(static_cast<int>(gx), kNoiseGrid - 2);
          const int y0 = std::min(static_cast<int>(gy), kNoiseGrid - 2);
          const double wx = gx - x0, wy = gy - y0;
          const double nz = (noise[y0][x0] * (1 - wx) + noise[y0][x0 + 1] * wx) * (1 - wy) +
                            (noise[y0 + 1][x0] * (1 - wx) + noise[y0 + 1][x0 + 1] * wx) * wy;
          r = 190.0 * light + nz;
          g = 100.0 * light + nz;
          b = 90.0 * light + nz;
        }
        sample.image.at(x, y, 0) = to_byte(r);
        sample.image.at(x, y, 1) = to_byte(g);
        sample.image.at(x, y, 2) = to_byte(b);
      }
    }
    out.push_back(std::move(sample));
  }
  return out;
}

}  // namespace psyn
