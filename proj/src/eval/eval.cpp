#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "psyn/eval.hpp"

namespace psyn {

namespace fs = std::filesystem;

MetricCounts& MetricCounts::operator+=(const MetricCounts& o) {
  tp += o.tp;
  tn += o.tn;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

MetricCounts match_frame(std::span<const Detection> dets, std::span<const Mask> gt_masks) {
  for (const Detection& d : dets) {
    if (!(std::isfinite(d.x1) && std::isfinite(d.y1) && std::isfinite(d.x2) && std::isfinite(d.y2)) ||
        d.x1 >= d.x2 || d.y1 >= d.y2) {
      throw EvalError("malformed box in frame '" + d.frame_id + "'");
    }
  }
  for (const Mask& m : gt_masks) {
    if (m.width != gt_masks[0].width || m.height != gt_masks[0].height) {
      throw EvalError("ground-truth masks of one frame differ in extent");
    }
  }
  MetricCounts c;
  if (gt_masks.empty()) {
    c.fp = static_cast<long long>(dets.size());
    c.tn = dets.empty() ? 1 : 0;
    return c;
  }
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  std::vector<bool> matched(gt_masks.size(), false);
  for (std::size_t i : order) {
    const Detection& d = dets[i];
    const int cx = static_cast<int>(std::floor((d.x1 + d.x2) / 2.0));
    const int cy = static_cast<int>(std::floor((d.y1 + d.y2) / 2.0));
    bool hit = false;
    for (std::size_t g = 0; g < gt_masks.size(); ++g) {
      const Mask& m = gt_masks[g];
      if (!m.inside(cx, cy) || !m(cx, cy)) continue;
      hit = true;
      if (!matched[g]) {
        matched[g] = true;
        ++c.tp;
        break;
      }
    }
    if (!hit) ++c.fp;
  }
  c.fn = static_cast<long long>(std::count(matched.begin(), matched.end(), false));
  return c;
}

std::vector<Mask> connected_components(const Mask& m) {
  std::vector<int> label(m.bits.size(), -1);
  std::vector<Mask> out;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * m.width + x;
      if (!m(x, y) || label[idx] >= 0) continue;
      const int id = static_cast<int>(out.size());
      Mask comp = Mask::zeros(m.width, m.height);
      stack.assign(1, {x, y});
      label[idx] = id;
      while (!stack.empty()) {
        const auto [px, py] = stack.back();
        stack.pop_back();
        comp.set(px, py);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int qx = px + dx, qy = py + dy;
            if (!m.inside(qx, qy) || !m(qx, qy)) continue;
            const std::size_t q = static_cast<std::size_t>(qy) * m.width + qx;
            if (label[q] >= 0) continue;
            label[q] = id;
            stack.emplace_back(qx, qy);
          }
        }
      }
      out.push_back(std::move(comp));
    }
  }
  return out;
}

Prf1 prf1(const MetricCounts& c) {
  if (c.tp < 0 || c.fp < 0 || c.fn < 0 || c.tn < 0) throw EvalError("counts must be non-negative");
  Prf1 r;
  if (c.tp + c.fp > 0) r.precision = 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) r.recall = 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (r.precision && r.recall) {
    const double s = *r.precision + *r.recall;
    r.f1 = s == 0.0 ? 0.0 : 2.0 * *r.precision * *r.recall / s;
  }
  return r;
}

JaccardDice jaccard_dice(std::span<const double> predicted, const Mask& truth, double threshold) {
  if (predicted.size() != truth.bits.size()) {
    throw EvalError("prediction has " + std::to_string(predicted.size()) + " pixels, ground truth " +
                    std::to_string(truth.bits.size()));
  }
  std::size_t inter = 0, a = 0, b = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] >= threshold, t = truth.bits[i] != 0;
    a += p;
    b += t;
    inter += p && t;
  }
  const std::size_t uni = a + b - inter;
  if (uni == 0) return {1.0, 1.0};
  return {static_cast<double>(inter) / static_cast<double>(uni),
          2.0 * static_cast<double>(inter) / static_cast<double>(a + b)};
}

JaccardDice jaccard_dice(const Mask& predicted, const Mask& truth) {
  if (predicted.width != truth.width || predicted.height != truth.height) {
    throw EvalError("prediction " + std::to_string(predicted.width) + "x" + std::to_string(predicted.height) +
                    " vs ground truth " + std::to_string(truth.width) + "x" + std::to_string(truth.height));
  }
  std::vector<double> p(predicted.bits.begin(), predicted.bits.end());
  return jaccard_dice(p, truth, 0.5);
}

SweepReport sweep_report(std::vector<SweepRow> rows) {
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].n_synthetic == rows[i - 1].n_synthetic) {
      throw EvalError("duplicate n_synthetic " + std::to_string(rows[i].n_synthetic));
    }
    if (rows[i].n_synthetic < rows[i - 1].n_synthetic) throw EvalError("sweep rows must be sorted by n_synthetic");
  }
  SweepReport r;
  r.rows = std::move(rows);
  std::optional<double> best;
  for (const auto& row : r.rows)
    if (row.metrics.f1 && (!best || *row.metrics.f1 > *best)) best = row.metrics.f1;
  if (best) {
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
      const auto& f1 = r.rows[i].metrics.f1;
      if (f1 && *f1 >= *best - SweepReport::kSaturationBand) {
        r.saturation = i;
        break;
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    cell.erase(0, cell.find_first_not_of(" \t"));
    cell.erase(cell.find_last_not_of(" \t\r") + 1);
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

struct CsvFile {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> lines;
};

bool is_number(const std::string& s) {
  if (s.empty()) return false;
  char* end = nullptr;
  std::strtod(s.c_str(), &end);
  return *end == '\0';
}

CsvFile read_csv(const fs::path& file, bool header_required) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open " + file.string());
  CsvFile csv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto cells = split_csv(line);
    if (csv.header.empty() && csv.rows.empty() && (header_required || !is_number(cells.back()))) {
      csv.header = std::move(cells);
      continue;
    }
    csv.rows.push_back(std::move(cells));
    csv.lines.push_back(lineno);
  }
  if (header_required && csv.header.empty()) throw DataError(file.string() + ": missing header line");
  return csv;
}

double to_double(const std::string& s, const fs::path& file, int line) {
  if (!is_number(s)) throw DataError(file.string() + ":" + std::to_string(line) + ": not a number '" + s + "'");
  return std::strtod(s.c_str(), nullptr);
}

long long to_count(const std::string& s, const fs::path& file, int line) {
  const double v = to_double(s, file, line);
  if (v < 0 || v != std::floor(v)) {
    throw DataError(file.string() + ":" + std::to_string(line) + ": bad count '" + s + "'");
  }
  return static_cast<long long>(v);
}

int column(const CsvFile& csv, const std::string& name, const fs::path& file, bool required = true) {
  const auto it = std::find(csv.header.begin(), csv.header.end(), name);
  if (it == csv.header.end()) {
    if (required) throw DataError(file.string() + ": missing column '" + name + "'");
    return -1;
  }
  return static_cast<int>(it - csv.header.begin());
}

const std::string& cell(const std::vector<std::string>& row, int col, const fs::path& file, int line) {
  if (col < 0 || static_cast<std::size_t>(col) >= row.size()) {
    throw DataError(file.string() + ":" + std::to_string(line) + ": too few columns");
  }
  return row[static_cast<std::size_t>(col)];
}

}  // namespace

std::vector<Detection> read_detections(const fs::path& file) {
  const CsvFile csv = read_csv(file, false);
  std::vector<Detection> out;
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const auto& r = csv.rows[i];
    const int ln = csv.lines[i];
    if (r.size() != 6) throw DataError(file.string() + ":" + std::to_string(ln) + ": expected 6 columns");
    out.push_back({r[0], to_double(r[1], file, ln), to_double(r[2], file, ln), to_double(r[3], file, ln),
                   to_double(r[4], file, ln), to_double(r[5], file, ln)});
  }
  return out;
}

std::vector<CountsRow> read_counts(const fs::path& file) {
  const CsvFile csv = read_csv(file, true);
  const int label = column(csv, "label", file, false);
  const int tp = column(csv, "tp", file), fp = column(csv, "fp", file), fn = column(csv, "fn", file);
  const int tn = column(csv, "tn", file, false);
  std::vector<CountsRow> out;
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const auto& r = csv.rows[i];
    const int ln = csv.lines[i];
    CountsRow row;
    row.label = label >= 0 ? cell(r, label, file, ln) : std::to_string(i);
    row.counts.tp = to_count(cell(r, tp, file, ln), file, ln);
    row.counts.fp = to_count(cell(r, fp, file, ln), file, ln);
    row.counts.fn = to_count(cell(r, fn, file, ln), file, ln);
    if (tn >= 0) row.counts.tn = to_count(cell(r, tn, file, ln), file, ln);
    out.push_back(row);
  }
  return out;
}

MetricCounts evaluate_detections(std::span<const Detection> dets, const fs::path& gt_dir) {
  if (!fs::is_directory(gt_dir)) throw DataError("not a directory: " + gt_dir.string());
  std::map<std::string, std::vector<Detection>> by_frame;
  for (const Detection& d : dets) by_frame[d.frame_id].push_back(d);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(gt_dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  MetricCounts total;
  std::size_t used = 0;
  for (const fs::path& f : files) {
    const std::string id = f.stem().string();
    const auto comps = connected_components(read_png_mask(f));
    const auto it = by_frame.find(id);
    const std::vector<Detection> none;
    const auto& frame_dets = it == by_frame.end() ? none : it->second;
    used += it == by_frame.end() ? 0 : 1;
    total += match_frame(frame_dets, comps);
  }
  if (used != by_frame.size()) {
    for (const auto& [id, v] : by_frame)
      if (!fs::exists(gt_dir / (id + ".png"))) throw DataError("detections reference unknown frame '" + id + "'");
  }
  return total;
}

SegScore evaluate_segmentation(const fs::path& pred_dir, const fs::path& gt_dir) {
  if (!fs::is_directory(pred_dir)) throw DataError("not a directory: " + pred_dir.string());
  if (!fs::is_directory(gt_dir)) throw DataError("not a directory: " + gt_dir.string());
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(gt_dir))
    if (e.is_regular_file() && e.path().extension() == ".png") names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  SegScore s;
  for (const auto& name : names) {
    if (!fs::exists(pred_dir / name)) throw DataError("missing prediction for " + name);
    const Mask truth = read_png_mask(gt_dir / name);
    const Mask pred = read_png_mask(pred_dir / name);
    if (pred.width != truth.width || pred.height != truth.height) {
      throw EvalError("extent mismatch for " + name);
    }
    const JaccardDice jd = jaccard_dice(pred, truth);
    s.mean_jaccard += jd.jaccard;
    s.mean_dice += jd.dice;
    ++s.images;
  }
  if (s.images > 0) {
    s.mean_jaccard /= static_cast<double>(s.images);
    s.mean_dice /= static_cast<double>(s.images);
  }
  return s;
}

std::vector<SweepRow> read_sweep(const fs::path& file) {
  const CsvFile csv = read_csv(file, true);
  const int n = column(csv, "n_synthetic", file);
  const bool counts = column(csv, "tp", file, false) >= 0;
  std::vector<SweepRow> out;
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const auto& r = csv.rows[i];
    const int ln = csv.lines[i];
    SweepRow row;
    row.n_synthetic = static_cast<int>(to_count(cell(r, n, file, ln), file, ln));
    if (counts) {
      MetricCounts c;
      c.tp = to_count(cell(r, column(csv, "tp", file), file, ln), file, ln);
      c.fp = to_count(cell(r, column(csv, "fp", file), file, ln), file, ln);
      c.fn = to_count(cell(r, column(csv, "fn", file), file, ln), file, ln);
      row.metrics = prf1(c);
    } else {
      row.metrics.precision = to_double(cell(r, column(csv, "precision", file), file, ln), file, ln);
      row.metrics.recall = to_double(cell(r, column(csv, "recall", file), file, ln), file, ln);
      row.metrics.f1 = to_double(cell(r, column(csv, "f1", file), file, ln), file, ln);
    }
    out.push_back(row);
  }
  return out;
}

std::string format_metric_value(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *v);
  return buf;
}

std::string text_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size() && c < width.size(); ++c) width[c] = std::max(width[c], r[c].size());
  std::ostringstream os;
  auto emit = [&](const std::vector<std::string>& r) {
    for (std::size_t c = 0; c < width.size(); ++c) {
      const std::string& v = c < r.size() ? r[c] : std::string();
      if (c) os << "  ";
      os << std::string(width[c] - v.size(), ' ') << v;
    }
    os << "\n";
  };
  emit(header);
  std::size_t total = 0;
  for (std::size_t w : width) total += w;
  os << std::string(total + 2 * (width.size() - 1), '-') << "\n";
  for (const auto& r : rows) emit(r);
  return os.str();
}

std::string sweep_csv(const SweepReport& r) {
  std::ostringstream os;
  os << "n_synthetic,precision,recall,f1,saturation\n";
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const auto& m = r.rows[i].metrics;
    os << r.rows[i].n_synthetic << ',' << format_metric_value(m.precision) << ',' << format_metric_value(m.recall)
       << ',' << format_metric_value(m.f1) << ',' << (r.saturation == i ? 1 : 0) << "\n";
  }
  return os.str();
}

std::string sweep_table(const SweepReport& r) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const auto& m = r.rows[i].metrics;
    rows.push_back({std::to_string(r.rows[i].n_synthetic), format_metric_value(m.recall),
                    format_metric_value(m.precision), format_metric_value(m.f1),
                    r.saturation == i ? "<- saturation" : ""});
  }
  return text_table({"n_synthetic", "recall", "precision", "f1", ""}, rows);
}

}  // namespace psyn
