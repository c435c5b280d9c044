#include <cmath>
#include <filesystem>
#include <fstream>
#include <tuple>

#include "doctest.h"
#include "psyn/data.hpp"

using namespace psyn;
namespace fs = std::filesystem;

namespace {

Mask disk(int size, double cx, double cy, double r) {
  Mask m = Mask::zeros(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= r) m.set(x, y);
  return m;
}

// Brute force: every pixel against every set pixel.
Mask dilate_oracle(const Mask& m, double radius) {
  Mask out = Mask::zeros(m.width, m.height);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      for (int v = 0; v < m.height && !out(x, y); ++v)
        for (int u = 0; u < m.width; ++u)
          if (m(u, v) && (x - u) * (x - u) + (y - v) * (y - v) <= radius * radius) {
            out.set(x, y);
            break;
          }
  return out;
}

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("psyn_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double luminance(const Image& img, int x, int y) {
  return 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
}

}  // namespace

TEST_CASE("assign_values") {
  const ValueAssignment va = assign_values(34);
  REQUIRE(va.size() == 34);
  CHECK(va[0] == 0);
  CHECK(va[33] == 255);
  CHECK(va[17] == static_cast<int>(std::lround(255.0 * 17 / 33)));
  CHECK(va[17] == 131);
  for (int i = 1; i < 34; ++i) CHECK(va[i] > va[i - 1]);
  CHECK(assign_values(2).values() == std::vector<int>{0, 255});
  CHECK(assign_values(256).values()[200] == 200);
  CHECK_THROWS_AS(assign_values(1), DataError);
  CHECK_THROWS_AS(assign_values(257), DataError);
  CHECK_THROWS_AS(va[34], DataError);
  CHECK_THROWS_AS(va[-1], DataError);
}

TEST_CASE("dilate_mask") {
  SUBCASE("single pixel at radius 10 matches the lattice count") {
    Mask m = Mask::zeros(41, 41);
    m.set(20, 20);
    const Mask d = dilate_mask(m, 10);
    int lattice = 0;
    for (int y = -10; y <= 10; ++y)
      for (int x = -10; x <= 10; ++x) lattice += x * x + y * y <= 100;
    CHECK(d.count() == static_cast<std::size_t>(lattice));
    CHECK(d.count() == 317);
  }
  SUBCASE("radius 0 is the identity") {
    const Mask m = disk(24, 9, 13, 5);
    CHECK(dilate_mask(m, 0) == m);
  }
  SUBCASE("agrees with brute force near the border") {
    Mask m = disk(30, 4, 25, 3.5);
    m.set(28, 1);
    for (int r : {1, 3, 6}) {
      CAPTURE(r);
      const Mask d = dilate_mask(m, r);
      CHECK(d == dilate_oracle(m, r));
      CHECK(intersection_count(d, m) == m.count());
    }
  }
  SUBCASE("composition of dilations") {
    // lattice disks are not closed under Minkowski sum: two steps fall
    // inside one step of the summed radius, and one extra pixel covers it
    for (auto [r, a, b] : {std::tuple{10, 5, 5}, std::tuple{20, 10, 10}}) {
      CAPTURE(r);
      const Mask m = disk(128, 64, 64, r);
      const Mask twice = dilate_mask(dilate_mask(m, a), b);
      const Mask once = dilate_mask(m, a + b);
      CHECK(intersection_count(twice, once) == twice.count());
      CHECK(intersection_count(dilate_mask(dilate_mask(m, a), b + 1), once) == once.count());
      CHECK(jaccard_of(twice, once) >= 0.99);
    }
  }
}

TEST_CASE("augment_mask") {
  const Mask m = disk(64, 30, 28, 9);
  SUBCASE("identity parameters") { CHECK(warp_mask(m, AugmentParams{}) == m); }
  SUBCASE("full turn") {
    AugmentParams p;
    p.rotation_deg = 360.0;
    CHECK(jaccard_of(warp_mask(m, p), m) >= 0.95);
  }
  SUBCASE("scale 2 quadruples the area") {
    const Mask d = disk(64, 32, 32, 5);
    AugmentParams p;
    p.scale = 2.0;
    const double ratio = static_cast<double>(warp_mask(d, p).count()) / d.count();
    CHECK(ratio == doctest::Approx(4.0).epsilon(0.15));
  }
  SUBCASE("degenerate homography rejected") {
    AugmentParams p;
    p.scale = 0.0;
    CHECK_THROWS_AS(warp_mask(m, p), DataError);
  }
  SUBCASE("random draws are nonempty and seed-deterministic") {
    Rng a(5), b(5);
    for (int i = 0; i < 50; ++i) {
      const Mask x = augment_mask(m, {}, a);
      CHECK_FALSE(x.empty());
      CHECK(x == augment_mask(m, {}, b));
    }
    CHECK_THROWS_AS(augment_mask(Mask::zeros(8, 8), {}, a), DataError);
  }
}

TEST_CASE("place_nonoverlapping") {
  const Mask shape = disk(8, 4, 4, 3.5);
  SUBCASE("empty polyp mask accepts the first draw") {
    Rng a(1), b(1);
    const MaskSpec spec = place_nonoverlapping(shape, Mask::zeros(32, 32), a);
    CHECK(spec.x == b.uniform_int(0, 24));
    CHECK(spec.y == b.uniform_int(0, 24));
    CHECK(spec.value == 255);
  }
  SUBCASE("full-frame polyp cannot be avoided") {
    Mask full = Mask::zeros(32, 32);
    std::fill(full.bits.begin(), full.bits.end(), 1);
    Rng rng(2);
    CHECK_THROWS_AS(place_nonoverlapping(shape, full, rng, 100), DataError);
  }
  SUBCASE("shape larger than the frame") {
    Rng rng(2);
    CHECK_THROWS_AS(place_nonoverlapping(Mask::zeros(40, 4), Mask::zeros(32, 32), rng), DataError);
  }
  SUBCASE("ten thousand placements against a half-frame polyp") {
    Mask half = Mask::zeros(32, 32);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 16; ++x) half.set(x, y);
    Rng rng(3);
    int overlaps = 0;
    for (int i = 0; i < 10000; ++i) {
      const MaskSpec spec = place_nonoverlapping(shape, half, rng);
      overlaps += intersection_count(spec.on_canvas(32, 32), half) > 0;
    }
    CHECK(overlaps == 0);
  }
}

TEST_CASE("compose_condition") {
  Image img = Image::filled(16, 16, 0);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<std::uint8_t>(i * 7);
  const MaskSpec spec{disk(6, 3, 3, 2.5), 200, 5, 7};
  const Image out = compose_condition(img, spec);
  const Mask placed = spec.on_canvas(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c) CHECK(out.at(x, y, c) == (placed(x, y) ? 200 : img.at(x, y, c)));

  CHECK_THROWS_AS(compose_condition(img, MaskSpec{Mask::zeros(4, 4), 255, 0, 0}), DataError);
  CHECK_THROWS_AS(compose_condition(img, MaskSpec{disk(6, 3, 3, 2.5), 255, 12, 0}), DataError);
  CHECK_THROWS_AS(compose_condition(img, MaskSpec{disk(6, 3, 3, 2.5), 256, 0, 0}), DataError);
}

TEST_CASE("make_fixtures") {
  const auto a = make_fixtures(8, 32, 4, 11);
  const auto b = make_fixtures(8, 32, 4, 11);
  REQUIRE(a.size() == 8);
  for (int i = 0; i < 8; ++i) {
    CAPTURE(i);
    CHECK(a[i].polyp_id == i % 4);
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].mask == b[i].mask);
    CHECK(a[i].mask.width == 32);
    CHECK_FALSE(a[i].mask.empty());
    double in = 0, out = 0;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) (a[i].mask(x, y) ? in : out) += luminance(a[i].image, x, y);
    const double n_in = static_cast<double>(a[i].mask.count());
    CHECK(in / n_in - out / (32 * 32 - n_in) > 20.0);
  }
  CHECK_FALSE(make_fixtures(1, 32, 1, 12)[0].image == a[0].image);
}

TEST_CASE("p2n and n2p pairs") {
  const auto fx = make_fixtures(4, 32, 4, 21);
  SUBCASE("p2n condition differs from target only off-polyp") {
    Rng rng(4);
    std::vector<Mask> library;
    for (const auto& s : fx) library.push_back(s.mask);
    for (int t = 0; t < 1000; ++t) {
      const PolypSample& s = fx[static_cast<std::size_t>(t % 4)];
      const ConditionedPair p = build_p2n_sample(s, rng, library);
      REQUIRE(p.target == s.image);
      int changed = 0, on_polyp = 0;
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
          for (int c = 0; c < 3; ++c) {
            if (p.condition.at(x, y, c) == s.image.at(x, y, c)) continue;
            ++changed;
            on_polyp += s.mask(x, y);
            CHECK(p.condition.at(x, y, c) == 255);
          }
      CHECK(on_polyp == 0);
      if (t < 4) CHECK(changed > 0);
    }
  }
  SUBCASE("n2p writes the identity value over the polyp") {
    const ValueAssignment va = assign_values(4);
    for (const auto& s : fx) {
      const ConditionedPair p = build_n2p_sample(s, va);
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
          for (int c = 0; c < 3; ++c)
            CHECK(p.condition.at(x, y, c) == (s.mask(x, y) ? va[s.polyp_id] : s.image.at(x, y, c)));
    }
    PolypSample first = fx[0], last = fx[3];
    const ValueAssignment va34 = assign_values(34);
    first.polyp_id = 0;
    last.polyp_id = 33;
    const Box b0 = *tight_box(first.mask), b1 = *tight_box(last.mask);
    CHECK(build_n2p_sample(first, va34).condition.at(b0.x1 + b0.width() / 2, b0.y1 + b0.height() / 2, 1) == 0);
    CHECK(build_n2p_sample(last, va34).condition.at(b1.x1 + b1.width() / 2, b1.y1 + b1.height() / 2, 1) == 255);
    last.polyp_id = 34;
    CHECK_THROWS_AS(build_n2p_sample(last, va34), DataError);
  }
}

TEST_CASE("tensor conversion") {
  const auto fx = make_fixtures(2, 16, 2, 3);
  std::vector<Image> imgs{fx[0].image, fx[1].image};
  const Tensor t = images_to_tensor(imgs, DType::f32);
  CHECK(t.shape() == Shape{2, 3, 16, 16});
  CHECK(tensor_to_image(t, 1) == imgs[1]);
  // 127.5 is the only exactly representable tie
  const Image mid = tensor_to_image(Tensor::full({1, 3, 1, 1}, 0.0, DType::f64), 0);
  CHECK(mid.at(0, 0, 0) == 128);
  CHECK(tensor_to_image(Tensor::full({1, 3, 1, 1}, -3.0), 0).at(0, 0, 0) == 0);
  CHECK(tensor_to_image(Tensor::full({1, 3, 1, 1}, 3.0), 0).at(0, 0, 0) == 255);
}

TEST_CASE("png io and load_dataset") {
  const fs::path dir = scratch_dir("dataset");
  const auto fx = make_fixtures(5, 24, 3, 8);
  save_dataset(dir, fx);
  SUBCASE("round trip with id map") {
    const auto back = load_dataset(dir / "images", dir / "masks", dir / "id_map.csv");
    REQUIRE(back.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(back[i].image == fx[i].image);
      CHECK(back[i].mask == fx[i].mask);
      CHECK(back[i].polyp_id == fx[i].polyp_id);
      CHECK(back[i].source_name == fx[i].source_name);
    }
  }
  SUBCASE("one id per file without a map, optional resize") {
    const auto back = load_dataset(dir / "images", dir / "masks", std::nullopt, 16);
    REQUIRE(back.size() == 5);
    CHECK(back[4].polyp_id == 4);
    CHECK(back[0].image.width == 16);
    CHECK(back[0].mask.height == 16);
  }
  SUBCASE("mask threshold at 128") {
    Image gray = Image::filled(3, 1, 0);
    gray.at(1, 0, 0) = gray.at(1, 0, 1) = gray.at(1, 0, 2) = 127;
    gray.at(2, 0, 0) = gray.at(2, 0, 1) = gray.at(2, 0, 2) = 128;
    write_png(dir / "gray.png", gray);
    const Mask m = read_png_mask(dir / "gray.png");
    CHECK(m.bits == std::vector<std::uint8_t>{0, 0, 1});
  }
  SUBCASE("unknown id map entry") {
    std::ofstream(dir / "bad_map.csv") << "filename,polyp_id\nnope.png,1\n";
    CHECK_THROWS_WITH_AS(load_dataset(dir / "images", dir / "masks", dir / "bad_map.csv"),
                         doctest::Contains("nope.png"), DataError);
  }
  SUBCASE("missing mask") {
    fs::remove(dir / "masks" / fx[2].source_name);
    CHECK_THROWS_WITH_AS(load_dataset(dir / "images", dir / "masks"), doctest::Contains(fx[2].source_name.c_str()),
                         DataError);
  }
  SUBCASE("extent mismatch") {
    write_png(dir / "masks" / fx[1].source_name, Mask::zeros(10, 10));
    CHECK_THROWS_AS(load_dataset(dir / "images", dir / "masks"), DataError);
  }
  SUBCASE("empty directories") {
    const fs::path empty = scratch_dir("empty");
    fs::create_directories(empty / "i");
    fs::create_directories(empty / "m");
    CHECK(load_dataset(empty / "i", empty / "m").empty());
  }
}
