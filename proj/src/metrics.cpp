#include "frameseg/metrics.hpp"

#include <cstdio>

#include <json.hpp>

#include "frameseg/error.hpp"

namespace frameseg {

ConfusionMatrix::ConfusionMatrix(std::uint16_t classes)
    : classes_(classes), counts_(std::size_t{classes} * classes, 0) {}

void ConfusionMatrix::accumulate(std::span<const std::uint16_t> gt, std::span<const std::uint16_t> pred,
                                 std::uint16_t ignore_id) {
  if (gt.size() != pred.size())
    fail(ErrorKind::Mismatch, "ground truth has " + std::to_string(gt.size()) + " labels but prediction has " +
                                  std::to_string(pred.size()));
  // Validate before touching counts so a failed call leaves the matrix unchanged.
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (pred[i] == ignore_id) fail(ErrorKind::Precondition, "prediction " + std::to_string(i) + " is the ignore id");
    if (gt[i] == ignore_id) continue;
    if (gt[i] >= classes_ || pred[i] >= classes_)
      fail(ErrorKind::InvalidArgument, "label out of range at point " + std::to_string(i) + " (K=" +
                                           std::to_string(classes_) + ")");
  }
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (gt[i] != ignore_id) ++counts_[std::size_t{gt[i]} * classes_ + pred[i]];
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) fail(ErrorKind::Mismatch, "cannot merge confusion matrices of different size");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

Scores scores(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) fail(ErrorKind::Precondition, "confusion matrix is empty");
  const std::uint16_t k = cm.classes();
  Scores s;
  s.points = total;
  s.iou.resize(k);
  s.recall.resize(k);
  std::uint64_t trace = 0;
  double iou_sum = 0.0, recall_sum = 0.0;
  int iou_n = 0, recall_n = 0;
  for (std::uint16_t c = 0; c < k; ++c) {
    const std::uint64_t tp = cm.at(c, c);
    std::uint64_t row = 0, col = 0;
    for (std::uint16_t o = 0; o < k; ++o) {
      row += cm.at(c, o);
      col += cm.at(o, c);
    }
    const std::uint64_t fn = row - tp;
    const std::uint64_t fp = col - tp;
    trace += tp;
    if (tp + fp + fn > 0) {
      s.iou[c] = double(tp) / double(tp + fp + fn);
      iou_sum += *s.iou[c];
      ++iou_n;
    }
    if (tp + fn > 0) {
      s.recall[c] = double(tp) / double(tp + fn);
      recall_sum += *s.recall[c];
      ++recall_n;
    }
  }
  s.miou = iou_n ? iou_sum / iou_n : 0.0;
  s.macc = recall_n ? recall_sum / recall_n : 0.0;
  s.oacc = double(trace) / double(total);
  return s;
}

namespace {

std::string class_name(std::span<const std::string> names, std::size_t c) {
  return c < names.size() ? names[c] : "class_" + std::to_string(c);
}

std::string pct(const std::optional<double>& v, const char* fmt) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, fmt, *v * 100.0);
  return buf;
}

}  // namespace

std::string format_scores_table(const Scores& s, std::span<const std::string> class_names) {
  std::string out;
  char line[128];
  std::snprintf(line, sizeof line, "%-16s %9s %9s\n", "class", "IoU(%)", "Acc(%)");
  out += line;
  for (std::size_t c = 0; c < s.iou.size(); ++c) {
    const auto iou = s.iou[c] ? pct(s.iou[c], "%9.2f") : std::string("        -");
    const auto rec = s.recall[c] ? pct(s.recall[c], "%9.2f") : std::string("        -");
    std::snprintf(line, sizeof line, "%-16s %s %s\n", class_name(class_names, c).c_str(), iou.c_str(), rec.c_str());
    out += line;
  }
  std::snprintf(line, sizeof line, "%-16s %9.2f %9.2f\n", "mean (mIoU/mAcc)", s.miou * 100.0, s.macc * 100.0);
  out += line;
  std::snprintf(line, sizeof line, "%-16s %9s %9.2f\n", "overall (oAcc)", "", s.oacc * 100.0);
  out += line;
  std::snprintf(line, sizeof line, "%-16s %9llu\n", "points", static_cast<unsigned long long>(s.points));
  out += line;
  return out;
}

std::string format_scores_csv(const Scores& s, std::span<const std::string> class_names) {
  std::string out = "class,iou,recall\n";
  for (std::size_t c = 0; c < s.iou.size(); ++c)
    out += class_name(class_names, c) + "," + pct(s.iou[c], "%.4f") + "," + pct(s.recall[c], "%.4f") + "\n";
  out += "mean," + pct(s.miou, "%.4f") + "," + pct(s.macc, "%.4f") + "\n";
  out += "overall,," + pct(s.oacc, "%.4f") + "\n";
  return out;
}

std::string format_scores_json(const Scores& s, std::span<const std::string> class_names) {
  nlohmann::ordered_json j;
  j["miou"] = s.miou;
  j["macc"] = s.macc;
  j["oacc"] = s.oacc;
  j["points"] = s.points;
  auto per_class = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < s.iou.size(); ++c) {
    nlohmann::ordered_json e;
    e["class"] = class_name(class_names, c);
    e["iou"] = s.iou[c] ? nlohmann::ordered_json(*s.iou[c]) : nlohmann::ordered_json(nullptr);
    e["recall"] = s.recall[c] ? nlohmann::ordered_json(*s.recall[c]) : nlohmann::ordered_json(nullptr);
    per_class.push_back(e);
  }
  j["per_class"] = per_class;
  return j.dump(2) + "\n";
}

}  // namespace frameseg
