#include <algorithm>
#include <cmath>

#include "psyn/data.hpp"

namespace psyn {

Mask Mask::zeros(int width, int height) {
  Mask m;
  m.width = width;
  m.height = height;
  m.bits.assign(static_cast<std::size_t>(width) * height, 0);
  return m;
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

std::optional<Box> tight_box(const Mask& m) {
  Box b{m.width, m.height, 0, 0};
  bool any = false;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (!m(x, y)) continue;
      any = true;
      b.x1 = std::min(b.x1, x);
      b.y1 = std::min(b.y1, y);
      b.x2 = std::max(b.x2, x + 1);
      b.y2 = std::max(b.y2, y + 1);
    }
  }
  if (!any) return std::nullopt;
  return b;
}

Mask crop(const Mask& m, const Box& box) {
  Mask out = Mask::zeros(box.width(), box.height());
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.set(x, y, m(box.x1 + x, box.y1 + y));
  return out;
}

std::size_t intersection_count(const Mask& a, const Mask& b) {
  if (a.width != b.width || a.height != b.height) throw DataError("mask extents differ");
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) n += (a.bits[i] & b.bits[i]);
  return n;
}

double jaccard_of(const Mask& a, const Mask& b) {
  const std::size_t inter = intersection_count(a, b);
  const std::size_t uni = a.count() + b.count() - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

Mask MaskSpec::on_canvas(int width, int height) const {
  if (x < 0 || y < 0 || x + shape.width > width || y + shape.height > height) {
    throw DataError("mask spec " + std::to_string(shape.width) + "x" + std::to_string(shape.height) +
                    " at (" + std::to_string(x) + "," + std::to_string(y) + ") exceeds " +
                    std::to_string(width) + "x" + std::to_string(height) + " frame");
  }
  Mask m = Mask::zeros(width, height);
  for (int j = 0; j < shape.height; ++j)
    for (int i = 0; i < shape.width; ++i)
      if (shape(i, j)) m.set(x + i, y + j);
  return m;
}

int ValueAssignment::operator[](int polyp_id) const {
  if (polyp_id < 0 || polyp_id >= size()) {
    throw DataError("polyp id " + std::to_string(polyp_id) + " has no assigned value (k=" +
                    std::to_string(size()) + ")");
  }
  return values_[static_cast<std::size_t>(polyp_id)];
}

Image Image::filled(int width, int height, std::uint8_t value) {
  Image img;
  img.width = width;
  img.height = height;
  img.rgb.assign(static_cast<std::size_t>(width) * height * 3, value);
  return img;
}

// Half-pixel-centre sampling, edge-clamped.
Image resize_bilinear(const Image& img, int width, int height) {
  if (width == img.width && height == img.height) return img;
  Image out = Image::filled(width, height, 0);
  const double sx = static_cast<double>(img.width) / width;
  const double sy = static_cast<double>(img.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = img.at(x0, y0, c) * (1 - wx) + img.at(x1, y0, c) * wx;
        const double bot = img.at(x0, y1, c) * (1 - wx) + img.at(x1, y1, c) * wx;
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(top * (1 - wy) + bot * wy));
      }
    }
  }
  return out;
}

Mask resize_nearest(const Mask& m, int width, int height) {
  if (width == m.width && height == m.height) return m;
  Mask out = Mask::zeros(width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(m.height - 1, static_cast<int>((y + 0.5) * m.height / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(m.width - 1, static_cast<int>((x + 0.5) * m.width / width));
      out.set(x, y, m(sx, sy));
    }
  }
  return out;
}

Image crop(const Image& img, int x, int y, int width, int height) {
  if (x < 0 || y < 0 || x + width > img.width || y + height > img.height) {
    throw DataError("crop window exceeds image");
  }
  Image out = Image::filled(width, height, 0);
  for (int j = 0; j < height; ++j) {
    const auto* src = &img.rgb[(static_cast<std::size_t>(y + j) * img.width + x) * 3];
    std::copy_n(src, static_cast<std::size_t>(width) * 3, &out.rgb[static_cast<std::size_t>(j) * width * 3]);
  }
  return out;
}

Tensor images_to_tensor(std::span<const Image> images, DType dtype) {
  if (images.empty()) throw DataError("no images to batch");
  const int w = images[0].width, h = images[0].height;
  std::vector<double> v;
  v.reserve(images.size() * 3 * w * h);
  for (const Image& img : images) {
    if (img.width != w || img.height != h) throw DataError("batch images differ in extent");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) v.push_back(img.at(x, y, c) / 127.5 - 1.0);
  }
  return Tensor::from_values({static_cast<std::int64_t>(images.size()), 3, h, w}, v, dtype);
}

Image tensor_to_image(const Tensor& t, std::int64_t index) {
  if (t.rank() != 4 || t.dim(1) != 3) throw ShapeError("expected [N,3,H,W], got " + shape_str(t.shape()));
  const int h = static_cast<int>(t.dim(2)), w = static_cast<int>(t.dim(3));
  Image img = Image::filled(w, h, 0);
  const std::int64_t base = index * 3 * h * w;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double v = (t.at(base + (static_cast<std::int64_t>(c) * h + y) * w + x) + 1.0) * 127.5;
        img.at(x, y, c) = static_cast<std::uint8_t>(std::nearbyint(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return img;
}

}  // namespace psyn
