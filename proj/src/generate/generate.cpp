#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "psyn/generate.hpp"

namespace psyn {

namespace fs = std::filesystem;

namespace {

Image run_generator(Generator& g, const Image& condition) {
  const int s = g.config().image_size;
  if (condition.width != s || condition.height != s) {
    throw ModelError("generator expects " + std::to_string(s) + "x" + std::to_string(s) + " input, got " +
                     std::to_string(condition.width) + "x" + std::to_string(condition.height));
  }
  NoGradGuard no_grad;
  Rng unused(0);
  const Image batch[1] = {condition};
  return tensor_to_image(g.forward(images_to_tensor(batch, g.config().dtype), Mode::eval, unused), 0);
}

}  // namespace

LoadedModel load_model(const Checkpoint& ckpt, std::optional<Task> expected) {
  const auto kv = parse_header(ckpt.header);
  const auto task = kv.find("task");
  if (task == kv.end()) throw ModelError("checkpoint header has no task");
  LoadedModel m;
  try {
    m.task = parse_task(task->second);
    m.generator = load_generator(ckpt);
  } catch (const std::invalid_argument& e) {
    throw ModelError(std::string("incompatible checkpoint: ") + e.what());
  } catch (const CheckpointError& e) {
    throw ModelError(std::string("incompatible checkpoint: ") + e.what());
  }
  if (expected && *expected != m.task) {
    throw ModelError(std::string("checkpoint was trained for ") + task_name(m.task) + ", expected " +
                     task_name(*expected));
  }
  const auto vc = kv.find("value_count");
  m.value_count = vc == kv.end() ? 0 : std::stoi(vc->second);
  return m;
}

LoadedModel load_model(const fs::path& file, std::optional<Task> expected) {
  return load_model(read_checkpoint(file), expected);
}

Image polyp_to_negative(Generator& g, const PolypSample& s, int radius) {
  const MaskSpec spec{dilate_mask(s.mask, radius), 255, 0, 0};
  return run_generator(g, compose_condition(s.image, spec));
}

PolypSample negative_to_polyp(Generator& g, const Image& negative, const MaskSpec& spec) {
  if (spec.shape.empty()) throw DataError("mask spec shape is empty");
  PolypSample out;
  out.image = run_generator(g, compose_condition(negative, spec));
  out.mask = spec.on_canvas(negative.width, negative.height);
  return out;
}

MaskSpec sample_mask_spec(std::span<const Mask> library, int width, int height, std::optional<int> value,
                          const ValueAssignment& values, std::uint64_t seed) {
  if (library.empty()) throw DataError("mask library is empty");
  Rng rng(seed);
  const Mask& source = library[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(library.size()) - 1))];
  const Mask warped = augment_mask(resize_nearest(source, width, height), {}, rng);
  MaskSpec spec = place_nonoverlapping(crop(warped, *tight_box(warped)), Mask::zeros(width, height), rng);
  spec.value = value ? *value : values[static_cast<int>(rng.uniform_int(0, values.size() - 1))];
  return spec;
}

std::vector<ManifestRow> generate_corpus(std::span<const GenerationRequest> requests, Generator* p2n,
                                         Generator& n2p, const fs::path& out_dir, int radius) {
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "masks", ec);
  std::ofstream manifest(out_dir / "manifest.csv");
  if (ec || !manifest) throw DataError("cannot write to output directory " + out_dir.string());
  manifest << kManifestHeader << "\n";

  std::vector<ManifestRow> rows;
  rows.reserve(requests.size());
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const GenerationRequest& req = requests[i];
    Image negative;
    if (const auto* s = std::get_if<PolypSample>(&req.source)) {
      if (p2n == nullptr) throw ModelError("request " + std::to_string(i) + " needs a p2n model");
      negative = polyp_to_negative(*p2n, *s, radius);
    } else {
      negative = std::get<Image>(req.source);
    }
    const PolypSample made = negative_to_polyp(n2p, negative, req.spec);

    char name[32];
    std::snprintf(name, sizeof name, "gen_%05zu.png", i);
    ManifestRow row;
    row.filename = std::string("images/") + name;
    row.mask_filename = std::string("masks/") + name;
    row.value = req.spec.value;
    row.box = *tight_box(made.mask);
    row.seed = req.seed;
    write_png(out_dir / row.filename, made.image);
    write_png(out_dir / row.mask_filename, made.mask);
    manifest << row.filename << ',' << row.mask_filename << ',' << row.value << ',' << row.box.x1 << ','
             << row.box.y1 << ',' << row.box.x2 << ',' << row.box.y2 << ',' << row.seed << "\n";
    rows.push_back(std::move(row));
  }
  if (!manifest.flush()) throw DataError("failed writing manifest in " + out_dir.string());
  return rows;
}

LatencyStats bench_generator(Generator& g, int n_runs, int warmup) {
  if (n_runs < 10) throw std::invalid_argument("bench needs at least 10 runs, got " + std::to_string(n_runs));
  const int s = g.config().image_size;
  const Image frame = Image::filled(s, s, 128);
  LatencyStats st;
  st.size = s;
  st.warmup_runs = warmup;
  for (int i = 0; i < warmup + n_runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run_generator(g, frame);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (i >= warmup) st.samples_ms.push_back(ms);
  }
  std::vector<double> sorted = st.samples_ms;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  st.mean_ms = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(n);
  st.median_ms = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  // nearest rank
  st.p95_ms = sorted[static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n))) - 1];
  return st;
}

}  // namespace psyn
