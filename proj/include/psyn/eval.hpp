#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "psyn/data.hpp"

namespace psyn {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Detection {
  std::string frame_id;
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double score = 0;
};

struct MetricCounts {
  long long tp = 0, tn = 0, fp = 0, fn = 0;

  MetricCounts& operator+=(const MetricCounts& o);
  bool operator==(const MetricCounts&) const = default;
};

/// A detection hits a polyp when the pixel holding its box centre is set in
/// that polyp's mask. Detections are taken in descending score order; each
/// polyp yields at most one TP, and further hits on a matched polyp are
/// ignored. Misses are FP, unmatched polyps FN. A frame without polyps and
/// without detections is one TN.
MetricCounts match_frame(std::span<const Detection> dets, std::span<const Mask> gt_masks);

/// 8-connected components, each as a full-frame mask, in raster order of
/// their first pixel.
std::vector<Mask> connected_components(const Mask& m);

struct Prf1 {
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
};

/// Percentages. A metric whose denominator is zero is absent.
Prf1 prf1(const MetricCounts& c);

struct JaccardDice {
  double jaccard = 0;
  double dice = 0;
};

/// `predicted` is binarized at `threshold`; two empty masks score 1.
JaccardDice jaccard_dice(std::span<const double> predicted, const Mask& truth, double threshold = 0.5);
JaccardDice jaccard_dice(const Mask& predicted, const Mask& truth);

struct SweepRow {
  int n_synthetic = 0;
  Prf1 metrics;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  /// First row whose F1 is within `kSaturationBand` of the best F1.
  std::optional<std::size_t> saturation;
  static constexpr double kSaturationBand = 0.5;
};

/// Rows must be strictly increasing in n_synthetic.
SweepReport sweep_report(std::vector<SweepRow> rows);

// --- ingestion and reporting --------------------------------------------------

/// CSV frame_id,x1,y1,x2,y2,score with an optional header line.
std::vector<Detection> read_detections(const std::filesystem::path& file);

struct CountsRow {
  std::string label;
  MetricCounts counts;
};

/// CSV with header label,tp,fp,fn,tn (label optional, tn optional).
std::vector<CountsRow> read_counts(const std::filesystem::path& file);

/// Matches detections against <gt_dir>/<frame_id>.png masks, one polyp per
/// connected component. Every GT frame is scored; detections on unknown
/// frames are rejected.
MetricCounts evaluate_detections(std::span<const Detection> dets, const std::filesystem::path& gt_dir);

struct SegScore {
  std::size_t images = 0;
  double mean_jaccard = 0;
  double mean_dice = 0;
};

/// Pairs predictions and ground truth by filename; per-image scores averaged.
SegScore evaluate_segmentation(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir);

/// CSV n_synthetic,tp,fp,fn[,tn] or n_synthetic,precision,recall,f1.
std::vector<SweepRow> read_sweep(const std::filesystem::path& file);

std::string format_metric_value(const std::optional<double>& v);
/// Aligned-column text table.
std::string text_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows);
std::string sweep_csv(const SweepReport& r);
std::string sweep_table(const SweepReport& r);

}  // namespace psyn
