#include <png.h>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "psyn/data.hpp"

namespace psyn {

namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> read_png(const fs::path& file, std::uint32_t format, int& w, int& h) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, file.c_str())) {
    throw DataError("cannot read " + file.string() + ": " + img.message);
  }
  img.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DataError("cannot decode " + file.string() + ": " + img.message);
  }
  w = static_cast<int>(img.width);
  h = static_cast<int>(img.height);
  return buf;
}

void write_png_raw(const fs::path& file, std::uint32_t format, int w, int h, const std::uint8_t* data) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  if (!png_image_write_to_file(&img, file.c_str(), 0, data, 0, nullptr)) {
    throw DataError("cannot write " + file.string() + ": " + img.message);
  }
}

std::vector<std::string> png_names(const fs::path& dir) {
  std::vector<std::string> names;
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

std::map<std::string, int> read_id_map(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open id map " + file.string());
  std::map<std::string, int> ids;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw DataError(file.string() + ":" + std::to_string(lineno) + ": expected filename,polyp_id");
    }
    const std::string name = line.substr(0, comma);
    const std::string id = line.substr(comma + 1);
    if (lineno == 1 && name == "filename") continue;
    try {
      std::size_t used = 0;
      const int v = std::stoi(id, &used);
      if (used != id.size() || v < 0) throw std::invalid_argument(id);
      ids[name] = v;
    } catch (const std::exception&) {
      throw DataError(file.string() + ":" + std::to_string(lineno) + ": bad polyp id '" + id + "'");
    }
  }
  return ids;
}

}  // namespace

Image read_png_rgb(const fs::path& file) {
  Image img;
  img.rgb = read_png(file, PNG_FORMAT_RGB, img.width, img.height);
  return img;
}

Mask read_png_mask(const fs::path& file, int threshold) {
  Mask m;
  m.bits = read_png(file, PNG_FORMAT_GRAY, m.width, m.height);
  for (auto& b : m.bits) b = b >= threshold ? 1 : 0;
  return m;
}

void write_png(const fs::path& file, const Image& img) {
  write_png_raw(file, PNG_FORMAT_RGB, img.width, img.height, img.rgb.data());
}

void write_png(const fs::path& file, const Mask& m) {
  std::vector<std::uint8_t> gray(m.bits.size());
  std::transform(m.bits.begin(), m.bits.end(), gray.begin(), [](std::uint8_t b) { return b ? 255 : 0; });
  write_png_raw(file, PNG_FORMAT_GRAY, m.width, m.height, gray.data());
}

std::vector<PolypSample> load_dataset(const fs::path& image_dir, const fs::path& mask_dir,
                                      const std::optional<fs::path>& id_map, std::optional<int> resize) {
  const auto names = png_names(image_dir);
  if (names.empty()) {
    std::cerr << "warning: no PNG images in " << image_dir.string() << "\n";
    return {};
  }
  std::map<std::string, int> ids;
  if (id_map) {
    ids = read_id_map(*id_map);
    for (const auto& [name, id] : ids) {
      if (!std::binary_search(names.begin(), names.end(), name)) {
        throw DataError("id map entry '" + name + "' names no image in " + image_dir.string());
      }
    }
  }
  std::vector<PolypSample> out;
  out.reserve(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::string& name = names[i];
    const fs::path mask_file = mask_dir / name;
    if (!fs::exists(mask_file)) throw DataError("missing mask for " + name);
    PolypSample s;
    s.image = read_png_rgb(image_dir / name);
    s.mask = read_png_mask(mask_file);
    if (s.image.width != s.mask.width || s.image.height != s.mask.height) {
      throw DataError("extent mismatch for " + name + ": image " + std::to_string(s.image.width) + "x" +
                      std::to_string(s.image.height) + ", mask " + std::to_string(s.mask.width) + "x" +
                      std::to_string(s.mask.height));
    }
    if (id_map) {
      const auto it = ids.find(name);
      if (it == ids.end()) throw DataError("id map has no entry for " + name);
      s.polyp_id = it->second;
    } else {
      s.polyp_id = static_cast<int>(i);
    }
    if (resize) {
      s.image = resize_bilinear(s.image, *resize, *resize);
      s.mask = resize_nearest(s.mask, *resize, *resize);
    }
    s.source_name = name;
    out.push_back(std::move(s));
  }
  return out;
}

void save_dataset(const fs::path& dir, std::span<const PolypSample> samples) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  std::ofstream ids(dir / "id_map.csv");
  if (!ids) throw DataError("cannot write " + (dir / "id_map.csv").string());
  ids << "filename,polyp_id\n";
  for (const PolypSample& s : samples) {
    write_png(dir / "images" / s.source_name, s.image);
    write_png(dir / "masks" / s.source_name, s.mask);
    ids << s.source_name << ',' << s.polyp_id << '\n';
  }
}

}  // namespace psyn
