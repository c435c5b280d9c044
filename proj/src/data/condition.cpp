#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "psyn/data.hpp"

namespace psyn {

namespace {

using Mat3 = Eigen::Matrix3d;

// Homography taking the four source points to the four destination points.
Mat3 homography_from_points(const std::array<Eigen::Vector2d, 4>& src,
                            const std::array<Eigen::Vector2d, 4>& dst) {
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double x = src[i].x(), y = src[i].y(), u = dst[i].x(), v = dst[i].y();
    a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * i) = u;
    b(2 * i + 1) = v;
  }
  const Eigen::Matrix<double, 8, 1> h = a.fullPivLu().solve(b);
  Mat3 m;
  m << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  return m;
}

Mat3 compose_transform(const AugmentParams& p, int width, int height) {
  const double cx = width / 2.0, cy = height / 2.0;
  const double th = p.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th) * p.scale, s = std::sin(th) * p.scale;
  Mat3 affine;
  affine << c, -s, cx + p.tx - (c * cx - s * cy),
            s, c, cy + p.ty - (s * cx + c * cy),
            0, 0, 1;

  const bool flat = std::all_of(p.corner_jitter.begin(), p.corner_jitter.end(),
                                [](double v) { return v == 0.0; });
  if (flat) return affine;
  const std::array<Eigen::Vector2d, 4> corners{Eigen::Vector2d(0, 0), Eigen::Vector2d(width, 0),
                                               Eigen::Vector2d(width, height), Eigen::Vector2d(0, height)};
  std::array<Eigen::Vector2d, 4> moved = corners;
  for (int i = 0; i < 4; ++i) {
    moved[i].x() += p.corner_jitter[2 * i] * width;
    moved[i].y() += p.corner_jitter[2 * i + 1] * height;
  }
  return homography_from_points(corners, moved) * affine;
}

}  // namespace

ValueAssignment assign_values(int k) {
  if (k < 2 || k > 256) throw DataError("assign_values: k must be in [2, 256], got " + std::to_string(k));
  std::vector<int> v(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) v[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(255.0 * i / (k - 1)));
  return ValueAssignment(std::move(v));
}

AugmentParams sample_augment_params(const AugmentRanges& r, int width, int height, Rng& rng) {
  AugmentParams p;
  p.rotation_deg = rng.uniform(-r.max_rotation_deg, r.max_rotation_deg);
  p.scale = rng.uniform(r.min_scale, r.max_scale);
  p.tx = rng.uniform(-r.max_translation, r.max_translation) * width;
  p.ty = rng.uniform(-r.max_translation, r.max_translation) * height;
  for (double& j : p.corner_jitter) j = rng.uniform(-r.max_perspective, r.max_perspective);
  return p;
}

Mask warp_mask(const Mask& mask, const AugmentParams& params) {
  const Mat3 h = compose_transform(params, mask.width, mask.height);
  if (std::abs(h.determinant()) < 1e-9) throw DataError("degenerate homography");
  const Mat3 inv = h.inverse();
  Mask out = Mask::zeros(mask.width, mask.height);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const Eigen::Vector3d q = inv * Eigen::Vector3d(x + 0.5, y + 0.5, 1.0);
      if (std::abs(q.z()) < 1e-12) continue;
      const double sx = std::floor(q.x() / q.z()), sy = std::floor(q.y() / q.z());
      if (sx < 0 || sy < 0 || sx >= mask.width || sy >= mask.height) continue;
      if (mask(static_cast<int>(sx), static_cast<int>(sy))) out.set(x, y);
    }
  }
  return out;
}

Mask augment_mask(const Mask& mask, const AugmentRanges& ranges, Rng& rng) {
  if (mask.empty()) throw DataError("augment_mask: input mask is empty");
  for (int attempt = 0; attempt < ranges.max_retries; ++attempt) {
    const AugmentParams p = sample_augment_params(ranges, mask.width, mask.height, rng);
    try {
      Mask out = warp_mask(mask, p);
      if (!out.empty()) return out;
    } catch (const DataError&) {
      // degenerate draw; redraw
    }
  }
  throw DataError("augment_mask: no nonempty result in " + std::to_string(ranges.max_retries) + " draws");
}

MaskSpec place_nonoverlapping(const Mask& shape, const Mask& polyp_mask, Rng& rng, int max_attempts) {
  const int fw = polyp_mask.width, fh = polyp_mask.height;
  if (shape.width > fw || shape.height > fh) {
    throw DataError("shape " + std::to_string(shape.width) + "x" + std::to_string(shape.height) +
                    " does not fit the " + std::to_string(fw) + "x" + std::to_string(fh) + " frame");
  }
  std::vector<std::pair<int, int>> on;
  for (int y = 0; y < shape.height; ++y)
    for (int x = 0; x < shape.width; ++x)
      if (shape(x, y)) on.emplace_back(x, y);

  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    const int ox = static_cast<int>(rng.uniform_int(0, fw - shape.width));
    const int oy = static_cast<int>(rng.uniform_int(0, fh - shape.height));
    const bool clear = std::none_of(on.begin(), on.end(),
                                    [&](const auto& p) { return polyp_mask(ox + p.first, oy + p.second); });
    if (clear) return MaskSpec{shape, 255, ox, oy};
  }
  throw DataError("no non-overlapping placement in " + std::to_string(max_attempts) +
                  " attempts; shrink the shape");
}

Image compose_condition(const Image& image, const MaskSpec& spec) {
  if (spec.value < 0 || spec.value > 255) throw DataError("mask value out of range: " + std::to_string(spec.value));
  if (spec.shape.empty()) throw DataError("mask spec shape is empty");
  const Mask placed = spec.on_canvas(image.width, image.height);
  Image out = image;
  const auto v = static_cast<std::uint8_t>(spec.value);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      if (placed(x, y))
        for (int c = 0; c < 3; ++c) out.at(x, y, c) = v;
  return out;
}

Mask dilate_mask(const Mask& mask, int radius) {
  if (radius < 0) throw DataError("dilation radius must be non-negative");
  if (radius == 0) return mask;
  // half-width of the lattice disk on each row offset
  std::vector<int> span(static_cast<std::size_t>(radius) + 1);
  for (int dy = 0; dy <= radius; ++dy) {
    int dx = 0;
    while ((dx + 1) * (dx + 1) + dy * dy <= radius * radius) ++dx;
    span[static_cast<std::size_t>(dy)] = dx;
  }
  Mask out = Mask::zeros(mask.width, mask.height);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask(x, y)) continue;
      for (int dy = -radius; dy <= radius; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= mask.height) continue;
        const int w = span[static_cast<std::size_t>(std::abs(dy))];
        const int lo = std::max(0, x - w), hi = std::min(mask.width - 1, x + w);
        std::fill(out.bits.begin() + static_cast<std::ptrdiff_t>(yy) * mask.width + lo,
                  out.bits.begin() + static_cast<std::ptrdiff_t>(yy) * mask.width + hi + 1, std::uint8_t{1});
      }
    }
  }
  return out;
}

ConditionedPair build_p2n_sample(const PolypSample& s, Rng& rng, std::span<const Mask> library,
                                 const AugmentRanges& ranges) {
  constexpr int kShapeDraws = 8;
  std::string last_error;
  for (int draw = 0; draw < kShapeDraws; ++draw) {
    const Mask& source = library.empty()
                             ? s.mask
                             : library[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(library.size()) - 1))];
    Mask warped = augment_mask(resize_nearest(source, s.mask.width, s.mask.height), ranges, rng);
    const Mask shape = crop(warped, *tight_box(warped));
    try {
      MaskSpec spec = place_nonoverlapping(shape, s.mask, rng);
      return {compose_condition(s.image, spec), s.image};
    } catch (const DataError& e) {
      last_error = e.what();
    }
  }
  throw DataError(s.source_name + ": " + last_error);
}

ConditionedPair build_n2p_sample(const PolypSample& s, const ValueAssignment& va) {
  MaskSpec spec{s.mask, va[s.polyp_id], 0, 0};
  return {compose_condition(s.image, spec), s.image};
}

}  // namespace psyn
