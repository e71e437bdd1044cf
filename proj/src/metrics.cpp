#include "saek/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "saek/error.hpp"

namespace saek {

using nlohmann::json;

namespace {

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::fp(std::size_t c) const {
  std::uint64_t col = 0;
  for (std::size_t t = 0; t < classes_; ++t) col += at(t, c);
  return col - at(c, c);
}

std::uint64_t ConfusionMatrix::fn(std::size_t c) const {
  std::uint64_t row = 0;
  for (std::size_t p = 0; p < classes_; ++p) row += at(c, p);
  return row - at(c, c);
}

ConfusionMatrix confusion(std::span<const std::size_t> truth, std::span<const std::size_t> pred, std::size_t classes) {
  if (truth.size() != pred.size()) throw ValidationError("confusion: label and prediction counts differ");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || pred[i] >= classes) {
      throw ValidationError("confusion: label out of range at index " + std::to_string(i));
    }
    ++cm.at(truth[i], pred[i]);
  }
  return cm;
}

MicroMetrics micro_metrics(const ConfusionMatrix& cm) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    tp += static_cast<double>(cm.tp(c));
    fp += static_cast<double>(cm.fp(c));
    fn += static_cast<double>(cm.fn(c));
  }
  MicroMetrics m;
  m.precision = ratio(tp, tp + fp);
  m.recall = ratio(tp, tp + fn);
  m.f1 = ratio(2 * m.precision * m.recall, m.precision + m.recall);
  return m;
}

double r2_score(std::span<const std::size_t> truth, std::span<const std::size_t> pred) {
  if (truth.size() != pred.size()) throw ValidationError("r2_score: label and prediction counts differ");
  if (truth.size() < 2) throw ValidationError("r2_score needs at least 2 samples");
  double mean = 0.0;
  for (auto y : truth) mean += static_cast<double>(y);
  mean /= static_cast<double>(truth.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double y = static_cast<double>(truth[i]);
    const double d = y - static_cast<double>(pred[i]);
    ss_res += d * d;
    ss_tot += (y - mean) * (y - mean);
  }
  if (ss_tot == 0.0) throw ValidationError("r2_score is undefined when the true labels have zero variance");
  return 1.0 - ss_res / ss_tot;
}

double auc_binary(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw ValidationError("auc: score and label counts differ");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  // Twice the Mann-Whitney count stays an integer, so the result is exact up
  // to the final division.
  std::uint64_t twice_wins = 0, negatives_below = 0, pos_total = 0, neg_total = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (positive[order[j]] ? pos : neg) += 1;
      ++j;
    }
    twice_wins += 2 * pos * negatives_below + pos * neg;
    negatives_below += neg;
    pos_total += pos;
    neg_total += neg;
    i = j;
  }
  if (pos_total == 0 || neg_total == 0) throw ValidationError("auc needs both positive and negative samples");
  return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(pos_total) * static_cast<double>(neg_total));
}

PairAuc auc_ovo(std::span<const double> probs, std::span<const std::size_t> labels, std::size_t classes) {
  if (probs.size() != labels.size() * classes) throw ValidationError("auc_ovo: probability matrix shape mismatch");
  PairAuc out;
  double sum = 0.0;
  std::size_t computed = 0;
  for (std::size_t i = 0; i < classes; ++i) {
    for (std::size_t j = i + 1; j < classes; ++j) {
      std::vector<double> s;
      std::vector<std::uint8_t> pos;
      for (std::size_t n = 0; n < labels.size(); ++n) {
        if (labels[n] != i && labels[n] != j) continue;
        s.push_back(probs[n * classes + i]);
        pos.push_back(labels[n] == i);
      }
      const auto npos = std::count(pos.begin(), pos.end(), 1);
      if (npos == 0 || npos == static_cast<std::ptrdiff_t>(pos.size())) {
        out.skipped.emplace_back(i, j);
        continue;
      }
      sum += auc_binary(s, pos);
      ++computed;
    }
  }
  if (computed > 0) out.value = sum / static_cast<double>(computed);
  return out;
}

double auc_micro(std::span<const double> probs, std::span<const std::size_t> labels, std::size_t classes) {
  if (probs.size() != labels.size() * classes) throw ValidationError("auc_micro: probability matrix shape mismatch");
  std::vector<std::uint8_t> onehot(probs.size(), 0);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] >= classes) throw ValidationError("auc_micro: label out of range");
    onehot[n * classes + labels[n]] = 1;
  }
  return auc_binary(probs, onehot);
}

ClassScores class_scores(const ConfusionMatrix& cm, std::size_t c) {
  const double tp = static_cast<double>(cm.tp(c)), fp = static_cast<double>(cm.fp(c));
  const double fn = static_cast<double>(cm.fn(c)), tn = static_cast<double>(cm.tn(c));
  ClassScores s;
  s.accuracy = ratio(tp + tn, tp + tn + fp + fn);
  s.precision = ratio(tp, tp + fp);
  s.recall = ratio(tp, tp + fn);
  s.f1 = ratio(2 * tp, 2 * tp + fp + fn);
  return s;
}

namespace {

std::optional<double> one_vs_rest_auc(std::span<const double> scores, std::size_t stride, std::size_t c,
                                      std::span<const std::uint8_t> positive) {
  const auto npos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), 1));
  if (npos == 0 || npos == positive.size()) return std::nullopt;
  std::vector<double> s(positive.size());
  for (std::size_t n = 0; n < s.size(); ++n) s[n] = scores[n * stride + c];
  return auc_binary(s, positive);
}

}  // namespace

ClassificationReport classification_report(std::span<const double> probs, std::span<const std::size_t> labels,
                                            std::size_t classes) {
  if (labels.empty()) throw ValidationError("classification report needs at least one sample");
  if (probs.size() != labels.size() * classes) throw ValidationError("classification report: shape mismatch");
  std::vector<std::size_t> pred(labels.size());
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const auto row = probs.subspan(n * classes, classes);
    pred[n] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  const ConfusionMatrix cm = confusion(labels, pred, classes);
  ClassificationReport r;
  r.classes = classes;
  r.samples = labels.size();
  std::uint64_t diag = 0;
  for (std::size_t c = 0; c < classes; ++c) diag += cm.tp(c);
  r.accuracy = static_cast<double>(diag) / static_cast<double>(labels.size());
  const MicroMetrics m = micro_metrics(cm);
  r.micro_precision = m.precision;
  r.micro_recall = m.recall;
  r.micro_f1 = m.f1;
  try {
    r.r2 = r2_score(labels, pred);
  } catch (const ValidationError&) {
  }
  const PairAuc ovo = auc_ovo(probs, labels, classes);
  r.auc_ovo = ovo.value;
  r.auc_skipped_pairs = ovo.skipped;
  try {
    r.auc_micro = auc_micro(probs, labels, classes);
  } catch (const ValidationError&) {
  }
  for (std::size_t c = 0; c < classes; ++c) {
    ClassScores s = class_scores(cm, c);
    std::vector<std::uint8_t> pos(labels.size());
    for (std::size_t n = 0; n < labels.size(); ++n) pos[n] = labels[n] == c;
    s.roc_auc = one_vs_rest_auc(probs, classes, c, pos);
    r.per_class.push_back(s);
  }
  for (std::size_t t = 0; t < classes; ++t) {
    r.confusion.emplace_back();
    for (std::size_t p = 0; p < classes; ++p) r.confusion.back().push_back(cm.at(t, p));
  }
  return r;
}

// ---- segmentation ---------------------------------------------------------------

std::vector<std::uint8_t> boundary_map(std::span<const std::size_t> mask, std::size_t height, std::size_t width,
                                       std::size_t c) {
  std::vector<std::uint8_t> b(height * width, 0);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      if (mask[y * width + x] != c) continue;
      const bool edge = y == 0 || x == 0 || y + 1 == height || x + 1 == width;
      b[y * width + x] = edge || mask[(y - 1) * width + x] != c || mask[(y + 1) * width + x] != c ||
                         mask[y * width + x - 1] != c || mask[y * width + x + 1] != c;
    }
  }
  return b;
}

namespace {

void check_batch(const MaskBatch& m, const char* what) {
  if (m.labels.size() != m.images * m.height * m.width) {
    throw ValidationError(std::string(what) + " mask size does not match its extents");
  }
}

std::uint64_t matched(const std::vector<std::uint8_t>& from, const std::vector<std::uint8_t>& to, std::size_t h,
                      std::size_t w, std::size_t tol) {
  std::uint64_t n = 0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!from[y * w + x]) continue;
      bool hit = false;
      const std::size_t y0 = y >= tol ? y - tol : 0, y1 = std::min(h - 1, y + tol);
      const std::size_t x0 = x >= tol ? x - tol : 0, x1 = std::min(w - 1, x + tol);
      for (std::size_t v = y0; v <= y1 && !hit; ++v)
        for (std::size_t u = x0; u <= x1 && !hit; ++u) hit = to[v * w + u] != 0;
      n += hit;
    }
  }
  return n;
}

}  // namespace

std::optional<double> boundary_f1(const MaskBatch& pred, const MaskBatch& truth, std::size_t c, std::size_t tol) {
  check_batch(pred, "predicted");
  check_batch(truth, "true");
  const std::size_t plane = pred.height * pred.width;
  std::uint64_t np = 0, ng = 0, mp = 0, mg = 0;
  for (std::size_t i = 0; i < pred.images; ++i) {
    const auto bp = boundary_map(pred.labels.subspan(i * plane, plane), pred.height, pred.width, c);
    const auto bg = boundary_map(truth.labels.subspan(i * plane, plane), truth.height, truth.width, c);
    np += static_cast<std::uint64_t>(std::count(bp.begin(), bp.end(), 1));
    ng += static_cast<std::uint64_t>(std::count(bg.begin(), bg.end(), 1));
    mp += matched(bp, bg, pred.height, pred.width, tol);
    mg += matched(bg, bp, pred.height, pred.width, tol);
  }
  if (np + ng == 0) return std::nullopt;
  return static_cast<double>(mp + mg) / static_cast<double>(np + ng);
}

SegmentationReport seg_metrics(const MaskBatch& pred, const MaskBatch& truth, std::size_t classes,
                               std::size_t boundary_tol, std::span<const double> scores) {
  check_batch(pred, "predicted");
  check_batch(truth, "true");
  if (pred.images != truth.images || pred.height != truth.height || pred.width != truth.width) {
    throw ShapeError("predicted and true masks differ in shape");
  }
  const std::size_t plane = pred.height * pred.width;
  const std::size_t pixels = pred.labels.size();
  if (!scores.empty() && scores.size() != pixels * classes) {
    throw ShapeError("segmentation scores must be images x classes x height x width");
  }
  const ConfusionMatrix cm = confusion(truth.labels, pred.labels, classes);
  SegmentationReport r;
  r.classes = classes;
  r.images = pred.images;
  std::uint64_t diag = 0;
  for (std::size_t c = 0; c < classes; ++c) diag += cm.tp(c);
  r.pixel_accuracy = static_cast<double>(diag) / static_cast<double>(pixels);
  for (std::size_t c = 0; c < classes; ++c) {
    const double tp = static_cast<double>(cm.tp(c)), fp = static_cast<double>(cm.fp(c));
    const double fn = static_cast<double>(cm.fn(c)), tn = static_cast<double>(cm.tn(c));
    SegmentationClass s;
    s.present = tp + fn > 0;
    s.iou = ratio(tp, tp + fp + fn);
    s.dsc = ratio(2 * tp, 2 * tp + fp + fn);
    if (tn + fp == 0) {
      s.specificity = 1.0;
      s.specificity_undefined = true;
    } else {
      s.specificity = tn / (tn + fp);
    }
    const double den = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
    s.mcc = den == 0.0 ? 0.0 : (tp * tn - fp * fn) / den;
    s.bf1 = boundary_f1(pred, truth, c, boundary_tol);
    s.accuracy = (tp + tn) / static_cast<double>(pixels);
    s.precision = ratio(tp, tp + fp);
    s.recall = ratio(tp, tp + fn);
    s.f1 = s.dsc;
    if (!scores.empty()) {
      std::vector<double> sc(pixels);
      std::vector<std::uint8_t> pos(pixels);
      for (std::size_t i = 0; i < pred.images; ++i) {
        for (std::size_t p = 0; p < plane; ++p) {
          sc[i * plane + p] = scores[(i * classes + c) * plane + p];
          pos[i * plane + p] = truth.labels[i * plane + p] == c;
        }
      }
      s.roc_auc = one_vs_rest_auc(sc, 1, 0, pos);
    }
    r.per_class.push_back(s);
  }
  return r;
}

// ---- serialization --------------------------------------------------------------

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string cell(std::optional<double> v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *v);
  return buf;
}

std::string row(const std::vector<std::string>& cells, std::size_t first = 12, std::size_t rest = 12) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::size_t w = i == 0 ? first : rest;
    std::string c = cells[i];
    if (c.size() < w) c.append(w - c.size(), ' ');
    out += c;
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out + "\n";
}

}  // namespace

json to_json(const ClassificationReport& r) {
  json per = json::array();
  for (const auto& s : r.per_class) {
    per.push_back({{"accuracy", s.accuracy},
                   {"precision", s.precision},
                   {"recall", s.recall},
                   {"f1", s.f1},
                   {"roc_auc", opt(s.roc_auc)}});
  }
  json skipped = json::array();
  for (const auto& [i, j] : r.auc_skipped_pairs) skipped.push_back({i, j});
  return {{"task", "classification"},
          {"classes", r.classes},
          {"samples", r.samples},
          {"accuracy", r.accuracy},
          {"micro_precision", r.micro_precision},
          {"micro_recall", r.micro_recall},
          {"micro_f1", r.micro_f1},
          {"r2", opt(r.r2)},
          {"auc_ovo", opt(r.auc_ovo)},
          {"auc_micro", opt(r.auc_micro)},
          {"auc_skipped_pairs", skipped},
          {"per_class", per},
          {"confusion", r.confusion}};
}

json to_json(const SegmentationReport& r) {
  json per = json::array();
  for (const auto& s : r.per_class) {
    per.push_back({{"present", s.present},
                   {"iou", s.iou},
                   {"dsc", s.dsc},
                   {"specificity", s.specificity},
                   {"specificity_undefined", s.specificity_undefined},
                   {"mcc", s.mcc},
                   {"bf1", opt(s.bf1)},
                   {"accuracy", s.accuracy},
                   {"precision", s.precision},
                   {"recall", s.recall},
                   {"f1", s.f1},
                   {"roc_auc", opt(s.roc_auc)}});
  }
  return {{"task", "segmentation"},
          {"classes", r.classes},
          {"images", r.images},
          {"pixel_accuracy", r.pixel_accuracy},
          {"per_class", per}};
}

std::string render_table(const ClassificationReport& r) {
  std::string out = row({"", "Accuracy", "Precision", "Recall", "F1 Score", "ROC AUC"});
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& s = r.per_class[c];
    out += row({"Class " + std::to_string(c), cell(s.accuracy), cell(s.precision), cell(s.recall), cell(s.f1),
                cell(s.roc_auc)});
  }
  out += "\n";
  out += row({"", "Accuracy", "Precision", "F1 Score", "Recall", "R2 Score", "ROC-AUC", "AUC micro"});
  out += row({"Dataset", cell(r.accuracy), cell(r.micro_precision), cell(r.micro_f1), cell(r.micro_recall), cell(r.r2),
              cell(r.auc_ovo), cell(r.auc_micro)});
  return out;
}

std::string render_table(const SegmentationReport& r) {
  std::string out = row({"", "Accuracy", "Precision", "Recall", "F1 Score", "ROC AUC"});
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& s = r.per_class[c];
    out += row({"Class " + std::to_string(c), cell(s.accuracy), cell(s.precision), cell(s.recall), cell(s.f1),
                cell(s.roc_auc)});
  }
  out += "\n";
  out += row({"", "IoU", "Specificity", "MCC", "Boundary F1", "DSC"});
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& s = r.per_class[c];
    out += row({"Class " + std::to_string(c), cell(s.iou), cell(s.specificity), cell(s.mcc), cell(s.bf1), cell(s.dsc)});
  }
  out += "\nPixel accuracy " + cell(r.pixel_accuracy) + "\n";
  return out;
}

}  // namespace saek
