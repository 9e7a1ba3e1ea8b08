#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "frameseg/types.hpp"

namespace frameseg {

/// K x K counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::uint16_t classes = 0);

  /// Adds cm[gt[i]][pred[i]] for every gt[i] != ignore_id.
  void accumulate(std::span<const std::uint16_t> gt, std::span<const std::uint16_t> pred,
                  std::uint16_t ignore_id = kIgnoreLabel);
  void merge(const ConfusionMatrix& other);

  std::uint16_t classes() const { return classes_; }
  std::uint64_t at(std::uint16_t gt, std::uint16_t pred) const { return counts_[std::size_t{gt} * classes_ + pred]; }
  std::uint64_t total() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::uint16_t classes_;
  std::vector<std::uint64_t> counts_;
};

/// Fractions in [0, 1]. Classes absent from both ground truth and prediction
/// have no IoU; classes absent from ground truth have no recall.
struct Scores {
  std::vector<std::optional<double>> iou;
  std::vector<std::optional<double>> recall;
  double miou = 0.0;
  double macc = 0.0;
  double oacc = 0.0;
  std::uint64_t points = 0;
};

/// Throws Error(Precondition) on an empty matrix.
Scores scores(const ConfusionMatrix& cm);

/// Aligned text table (percent values).
std::string format_scores_table(const Scores& s, std::span<const std::string> class_names);
/// `class,iou,recall` rows, then `mean,<mIoU>,<mAcc>` and `overall,,<oAcc>`.
std::string format_scores_csv(const Scores& s, std::span<const std::string> class_names);
std::string format_scores_json(const Scores& s, std::span<const std::string> class_names);

}  // namespace frameseg
