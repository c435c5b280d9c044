#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "psyn/eval.hpp"
#include "psyn/generate.hpp"
#include "run_config.hpp"

namespace psyn::cli {

namespace fs = std::filesystem;

namespace {

struct Subcommand {
  const char* name;
  const char* help;
};

const Subcommand kSubcommands[] = {
    {"fixtures", "write a phantom dataset (n, n_ids, size, seed)"},
    {"train-p2n", "train the polyp-to-negative inpainter"},
    {"train-n2p", "train the negative-to-polyp synthesizer"},
    {"generate", "synthesize labelled polyp frames with a manifest"},
    {"eval-det", "detection precision, recall and F1 from detections or prematched counts"},
    {"eval-seg", "mean Jaccard and Dice of predicted masks"},
    {"sweep", "metrics against number of synthetic images, with the saturation point"},
    {"bench", "single-image generator latency"},
};

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream o(file);
  if (!(o << text) || !o.flush()) throw DataError("cannot write " + file.string());
}


std::vector<PolypSample> load_configured_dataset(const RunConfig& cfg, const std::string& cmd) {
  std::optional<fs::path> images = cfg.get_path("image_dir"), masks = cfg.get_path("mask_dir");
  std::optional<fs::path> id_map = cfg.get_path("id_map");
  if (auto root = cfg.get_path("data_dir")) {
    if (!images) images = *root / "images";
    if (!masks) masks = *root / "masks";
    if (!id_map && fs::exists(*root / "id_map.csv")) id_map = *root / "id_map.csv";
  }
  if (!images || !masks) throw ConfigError(cmd + " needs data_dir, or image_dir and mask_dir");
  return load_dataset(*images, *masks, id_map, cfg.get_int("size"));
}

void archive(const RunConfig& cfg, const fs::path& dir) { write_text(dir / "config.txt", cfg.resolved_text()); }

std::string pct(const std::optional<double>& v) { return format_metric_value(v); }

// --- subcommands --------------------------------------------------------------

void cmd_fixtures(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const int n = cfg.get_int("n"), n_ids = cfg.get_int("n_ids"), size = cfg.get_int("size");
  if (n < 1 || n_ids < 1 || size < 16) throw ConfigError("fixtures needs n >= 1, n_ids >= 1 and size >= 16");
  const auto samples = make_fixtures(n, size, n_ids, cfg.get_u64("seed"));
  save_dataset(dir / "data", samples);
  out << "wrote " << samples.size() << " fixtures to " << (dir / "data").string() << "\n";
}

void cmd_train(const RunConfig& cfg, Task task, const fs::path& dir, std::ostream& out) {
  TrainSpec spec{task, cfg.net(), cfg.train(), cfg.weights()};
  const auto data = load_configured_dataset(cfg, std::string("train-") + task_name(task));
  const TrainResult r = train(spec, data, dir);
  if (!r.log.empty()) out << kMetricsHeader << "\n" << format_metric(r.log.back()) << "\n";
  out << "checkpoint " << (dir / "final.psyn").string() << "\n";
}

void cmd_generate(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const auto n2p_path = cfg.get_path("n2p_checkpoint");
  if (!n2p_path) throw ConfigError("generate needs n2p_checkpoint");
  LoadedModel n2p = load_model(*n2p_path, Task::n2p);
  const int size = n2p.generator.config().image_size;
  if (cfg.is_set("size") && cfg.get_int("size") != size) {
    throw ConfigError("size " + cfg.get("size") + " does not match the n2p checkpoint (" + std::to_string(size) + ")");
  }
  RunConfig at_size = cfg;
  at_size.set("size", std::to_string(size));

  const int count = cfg.get_int("count");
  if (count < 0) throw ConfigError("count must be non-negative");
  std::optional<int> value;
  if (const int v = cfg.get_int("value"); v != -1) {
    if (v < 0 || v > 255) throw ConfigError("value must be in 0..255 or -1");
    value = v;
  }
  const ValueAssignment va = assign_values(std::max(2, n2p.value_count));

  const auto data = load_configured_dataset(at_size, "generate");
  if (data.empty()) throw DataError("generate needs at least one dataset mask");
  std::vector<Mask> library;
  for (const auto& s : data) library.push_back(s.mask);

  std::vector<std::variant<PolypSample, Image>> sources;
  std::optional<LoadedModel> p2n;
  if (auto neg = cfg.get_path("negative_dir")) {
    if (!fs::is_directory(*neg)) throw DataError("negative_dir " + neg->string() + " is not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(*neg))
      if (e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      Image img = read_png_rgb(f);
      if (img.width != size || img.height != size) img = resize_bilinear(img, size, size);
      sources.emplace_back(std::move(img));
    }
    if (sources.empty()) throw DataError("no PNG frames in " + neg->string());
  } else {
    const auto p2n_path = cfg.get_path("p2n_checkpoint");
    if (!p2n_path) throw ConfigError("generate needs negative_dir or p2n_checkpoint");
    p2n = load_model(*p2n_path, Task::p2n);
    if (p2n->generator.config().image_size != size) throw ConfigError("p2n and n2p checkpoints differ in size");
    for (const auto& s : data) sources.emplace_back(s);
  }

  const std::uint64_t seed = cfg.get_u64("seed");
  std::vector<GenerationRequest> requests;
  for (int i = 0; i < count; ++i) {
    GenerationRequest r;
    r.source = sources[static_cast<std::size_t>(i) % sources.size()];
    r.seed = Rng::mix(seed, static_cast<std::uint64_t>(i));
    r.spec = sample_mask_spec(library, size, size, value, va, r.seed);
    requests.push_back(std::move(r));
  }
  const auto rows = generate_corpus(requests, p2n ? &p2n->generator : nullptr, n2p.generator, dir / "corpus",
                                    at_size.radius());
  out << "wrote " << rows.size() << " images and " << (dir / "corpus" / "manifest.csv").string() << "\n";
}

void cmd_eval_det(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  std::vector<CountsRow> rows;
  if (auto counts = cfg.get_path("counts")) {
    rows = read_counts(*counts);
  } else {
    const auto dets = cfg.get_path("detections"), gt = cfg.get_path("gt_dir");
    if (!dets || !gt) throw ConfigError("eval-det needs counts, or detections and gt_dir");
    rows.push_back({"all", evaluate_detections(read_detections(*dets), *gt)});
  }
  std::ostringstream csv;
  csv << "label,tp,fp,fn,tn,precision,recall,f1\n";
  std::vector<std::vector<std::string>> table;
  for (const auto& r : rows) {
    const Prf1 m = prf1(r.counts);
    const auto& c = r.counts;
    std::vector<std::string> cells{r.label,           std::to_string(c.tp), std::to_string(c.fp),
                                   std::to_string(c.fn), std::to_string(c.tn), pct(m.precision),
                                   pct(m.recall),     pct(m.f1)};
    for (std::size_t i = 0; i < cells.size(); ++i) csv << (i ? "," : "") << cells[i];
    csv << "\n";
    table.push_back(std::move(cells));
  }
  const std::string text = text_table({"label", "tp", "fp", "fn", "tn", "precision", "recall", "f1"}, table);
  write_text(dir / "report.csv", csv.str());
  write_text(dir / "report.txt", text);
  out << text;
}

void cmd_eval_seg(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const auto pred = cfg.get_path("pred_dir"), gt = cfg.get_path("gt_dir");
  if (!pred || !gt) throw ConfigError("eval-seg needs pred_dir and gt_dir");
  const SegScore s = evaluate_segmentation(*pred, *gt);
  char j[32], d[32];
  std::snprintf(j, sizeof j, "%.2f", 100.0 * s.mean_jaccard);
  std::snprintf(d, sizeof d, "%.2f", 100.0 * s.mean_dice);
  write_text(dir / "report.csv", "images,jaccard,dice\n" + std::to_string(s.images) + "," + j + "," + d + "\n");
  const std::string text = text_table({"images", "jaccard", "dice"}, {{std::to_string(s.images), j, d}});
  write_text(dir / "report.txt", text);
  out << text;
}

void cmd_sweep(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const auto file = cfg.get_path("sweep_file");
  if (!file) throw ConfigError("sweep needs sweep_file");
  const SweepReport r = sweep_report(read_sweep(*file));
  write_text(dir / "sweep.csv", sweep_csv(r));
  const std::string text = sweep_table(r);
  write_text(dir / "sweep.txt", text);
  out << text;
}

void cmd_bench(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const int runs = cfg.get_int("bench_runs"), warmup = cfg.get_int("bench_warmup");
  if (runs < 10) throw ConfigError("bench_runs must be at least 10");
  if (warmup < 0) throw ConfigError("bench_warmup must be non-negative");
  std::ostringstream csv;
  csv << "size,runs,warmup,mean_ms,median_ms,p95_ms\n";
  std::vector<std::vector<std::string>> table;
  for (const int size : cfg.get_ints("bench_sizes")) {
    Rng rng(cfg.get_u64("seed"));
    Generator g = Generator::build(cfg.net_at(size), rng);
    const LatencyStats st = bench_generator(g, runs, warmup);
    char line[160];
    std::snprintf(line, sizeof line, "%d,%d,%d,%.3f,%.3f,%.3f", size, runs, warmup, st.mean_ms, st.median_ms,
                  st.p95_ms);
    csv << line << "\n";
    char mean[32], median[32], p95[32];
    std::snprintf(mean, sizeof mean, "%.3f", st.mean_ms);
    std::snprintf(median, sizeof median, "%.3f", st.median_ms);
    std::snprintf(p95, sizeof p95, "%.3f", st.p95_ms);
    table.push_back({std::to_string(size), std::to_string(runs), mean, median, p95});
  }
  write_text(dir / "bench.csv", csv.str());
  const std::string text = text_table({"size", "runs", "mean_ms", "median_ms", "p95_ms"}, table) +
                           "reference: 51.33 ms per 256x256 frame on the original GPU setup (informational only)\n";
  write_text(dir / "bench.txt", text);
  out << text;
}

void check_threads_env() {
  const char* v = std::getenv("PSYN_THREADS");
  if (v == nullptr || *v == '\0') return;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("PSYN_THREADS: expected a positive integer, got '") + v + "'");
  // The engine is single-threaded, so any cap >= 1 is already honoured.
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

std::string keys_help() {
  std::ostringstream os;
  os << "Configuration keys (config file lines key=value, or --key value; flags win):\n";
  const char* group = "";
  for (const auto& k : config_keys()) {
    if (std::string(group) != k.group) {
      group = k.group;
      os << "  [" << group << "]\n";
    }
    char line[256];
    std::snprintf(line, sizeof line, "    %-20s %-8s %s\n", k.name, *k.fallback ? k.fallback : "-", k.help);
    os << line;
  }
  os << "Exit status: 0 ok, 2 config error, 3 data error, 4 numeric failure.\n"
     << "PSYN_THREADS caps internal parallelism.\n";
  return os.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Colonoscopy polyp image synthesis: training, generation and evaluation", "psyn"};
  app.footer(keys_help());
  app.require_subcommand(1, 1);

  struct Bound {
    CLI::App* app;
    std::string config_file;
    std::map<std::string, std::string> flags;
    std::map<std::string, CLI::Option*> options;
  };
  std::vector<Bound> bound(std::size(kSubcommands));
  for (std::size_t i = 0; i < bound.size(); ++i) {
    Bound& b = bound[i];
    b.app = app.add_subcommand(kSubcommands[i].name, kSubcommands[i].help);
    b.app->add_option("--config", b.config_file, "key=value configuration file");
    for (const auto& k : config_keys()) {
      b.options[k.name] = b.app->add_option(std::string("--") + k.name, b.flags[k.name], k.help);
    }
  }

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error config: " << one_line(e.what()) << "\n";
    return kConfig;
  }

  try {
    check_threads_env();
    const Bound* chosen = nullptr;
    for (const auto& b : bound)
      if (b.app->parsed()) chosen = &b;
    const std::string cmd = chosen->app->get_name();

    RunConfig cfg;
    if (!chosen->config_file.empty()) cfg.merge_file(chosen->config_file);
    for (const auto& [key, opt] : chosen->options)
      if (opt->count() > 0) cfg.set(key, chosen->flags.at(key));
    cfg.resolved_text();  // surfaces bad network values before anything is written

    const fs::path dir = make_run_dir(cfg);
    archive(cfg, dir);
    out << "run_dir " << dir.string() << "\n";
    if (cmd == "fixtures") cmd_fixtures(cfg, dir, out);
    else if (cmd == "train-p2n") cmd_train(cfg, Task::p2n, dir, out);
    else if (cmd == "train-n2p") cmd_train(cfg, Task::n2p, dir, out);
    else if (cmd == "generate") cmd_generate(cfg, dir, out);
    else if (cmd == "eval-det") cmd_eval_det(cfg, dir, out);
    else if (cmd == "eval-seg") cmd_eval_seg(cfg, dir, out);
    else if (cmd == "sweep") cmd_sweep(cfg, dir, out);
    else cmd_bench(cfg, dir, out);
    return kOk;
  } catch (const ConfigError& e) {
    err << "error config: " << one_line(e.what()) << "\n";
    return kConfig;
  } catch (const ModelError& e) {
    err << "error config: " << one_line(e.what()) << "\n";
    return kConfig;
  } catch (const std::invalid_argument& e) {
    err << "error config: " << one_line(e.what()) << "\n";
    return kConfig;
  } catch (const NumericError& e) {
    err << "error numeric: " << one_line(e.what()) << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    err << "error data: " << one_line(e.what()) << "\n";
    return kData;
  } catch (const EvalError& e) {
    err << "error data: " << one_line(e.what()) << "\n";
    return kData;
  } catch (const CheckpointError& e) {
    err << "error data: " << one_line(e.what()) << "\n";
    return kData;
  } catch (const std::exception& e) {
    err << "error internal: " << one_line(e.what()) << "\n";
    return kFailure;
  }
}

}  // namespace psyn::cli
