#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace saek {

/// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return classes_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * classes_ + pred]; }
  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts_[truth * classes_ + pred]; }
  std::uint64_t total() const;
  std::uint64_t tp(std::size_t c) const { return at(c, c); }
  std::uint64_t fp(std::size_t c) const;
  std::uint64_t fn(std::size_t c) const;
  std::uint64_t tn(std::size_t c) const { return total() - tp(c) - fp(c) - fn(c); }

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

/// Throws ValidationError for a label outside [0, classes).
ConfusionMatrix confusion(std::span<const std::size_t> truth, std::span<const std::size_t> pred, std::size_t classes);

struct MicroMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Sums TP, FP and FN over classes before dividing; 0/0 is 0.
MicroMetrics micro_metrics(const ConfusionMatrix& cm);

/// 1 - sum (y - yhat)^2 / sum (y - mean y)^2 on class ids as reals. Throws
/// ValidationError when the true labels have zero variance.
double r2_score(std::span<const std::size_t> truth, std::span<const std::size_t> pred);

/// Mann-Whitney: fraction of (positive, negative) pairs where the positive
/// scores higher, ties counting one half. Throws ValidationError unless
/// both classes occur.
double auc_binary(std::span<const double> scores, std::span<const std::uint8_t> positive);

struct PairAuc {
  /// Mean over the pairs that could be computed; empty if none could.
  std::optional<double> value;
  std::vector<std::pair<std::size_t, std::size_t>> skipped;
};

/// Unordered pairs i < j on the samples of classes i and j, scored by
/// p(class i). `probs` is row-major N x classes.
PairAuc auc_ovo(std::span<const double> probs, std::span<const std::size_t> labels, std::size_t classes);

/// Binary AUC over the flattened one-hot labels against the flattened
/// probability matrix.
double auc_micro(std::span<const double> probs, std::span<const std::size_t> labels, std::size_t classes);

/// One-vs-rest counts for a single class.
struct ClassScores {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  /// Empty when the class is absent or is every sample.
  std::optional<double> roc_auc;
};

ClassScores class_scores(const ConfusionMatrix& cm, std::size_t c);

struct ClassificationReport {
  std::size_t classes = 0;
  std::size_t samples = 0;
  double accuracy = 0.0;
  double micro_precision = 0.0;
  double micro_recall = 0.0;
  double micro_f1 = 0.0;
  /// Empty when the true labels have zero variance.
  std::optional<double> r2;
  std::optional<double> auc_ovo;
  std::optional<double> auc_micro;
  std::vector<std::pair<std::size_t, std::size_t>> auc_skipped_pairs;
  std::vector<ClassScores> per_class;
  std::vector<std::vector<std::uint64_t>> confusion;
};

/// `probs` is N x classes, rows summing to 1; predictions are row argmax.
ClassificationReport classification_report(std::span<const double> probs, std::span<const std::size_t> labels,
                                            std::size_t classes);

struct SegmentationClass {
  bool present = false;
  double iou = 0.0;
  double dsc = 0.0;
  double specificity = 0.0;
  /// Set when the class has no negatives and specificity was reported as 1.
  bool specificity_undefined = false;
  double mcc = 0.0;
  /// Empty when neither mask has boundary pixels of this class.
  std::optional<double> bf1;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> roc_auc;
};

struct SegmentationReport {
  std::size_t classes = 0;
  std::size_t images = 0;
  double pixel_accuracy = 0.0;
  std::vector<SegmentationClass> per_class;
};

struct MaskBatch {
  /// images x height x width class ids.
  std::span<const std::size_t> labels;
  std::size_t images = 1;
  std::size_t height = 0;
  std::size_t width = 0;
};

/// Boundary pixels of class c in one image: pixels of class c with a
/// 4-neighbour of another class or on the image edge.
std::vector<std::uint8_t> boundary_map(std::span<const std::size_t> mask, std::size_t height, std::size_t width,
                                       std::size_t c);

/// BF1 = (matched P + matched G) / (|P| + |G|), where a boundary pixel is
/// matched if the other set has a pixel within `tol` (Chebyshev).
std::optional<double> boundary_f1(const MaskBatch& pred, const MaskBatch& truth, std::size_t c, std::size_t tol = 2);

/// `scores`, if given, is images x classes x height x width per-class
/// scores for the ROC AUC column.
SegmentationReport seg_metrics(const MaskBatch& pred, const MaskBatch& truth, std::size_t classes,
                               std::size_t boundary_tol = 2, std::span<const double> scores = {});

nlohmann::json to_json(const ClassificationReport& r);
nlohmann::json to_json(const SegmentationReport& r);
std::string render_table(const ClassificationReport& r);
std::string render_table(const SegmentationReport& r);

}  // namespace saek
