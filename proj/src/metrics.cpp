#include "seqpl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace seqpl {

int levenshtein(std::span<const int> a, std::span<const int> b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int> row(m + 1);
  std::iota(row.begin(), row.end(), 0);
  for (size_t i = 1; i <= n; ++i) {
    int diag = row[0];
    row[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      const int sub = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
      diag = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, sub});
    }
  }
  return row[m];
}

int levenshtein(const std::string& a, const std::string& b) {
  std::vector<int> ta(a.begin(), a.end()), tb(b.begin(), b.end());
  return levenshtein(std::span<const int>(ta), std::span<const int>(tb));
}

double cer(const std::vector<std::string>& preds, const std::vector<std::string>& refs) {
  if (preds.size() != refs.size())
    throw std::invalid_argument("cer: " + std::to_string(preds.size()) + " predictions vs " +
                                std::to_string(refs.size()) + " references");
  long long edits = 0, chars = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    edits += levenshtein(preds[i], refs[i]);
    chars += static_cast<long long>(refs[i].size());
  }
  if (chars == 0) throw std::invalid_argument("cer: references are all empty");
  return static_cast<double>(edits) / static_cast<double>(chars);
}

double wer(const std::vector<std::string>& preds, const std::vector<std::string>& refs) {
  if (preds.size() != refs.size())
    throw std::invalid_argument("wer: prediction/reference count mismatch");
  if (preds.empty()) throw std::invalid_argument("wer: empty input");
  int wrong = 0;
  for (size_t i = 0; i < preds.size(); ++i) wrong += preds[i] != refs[i];
  return static_cast<double>(wrong) / static_cast<double>(preds.size());
}

EvalReport evaluate(const std::vector<std::string>& preds, const std::vector<std::string>& refs) {
  EvalReport rep;
  rep.wer = wer(preds, refs);
  rep.word_accuracy = 1.0 - rep.wer;
  rep.cer = cer(preds, refs);
  rep.count = static_cast<int>(preds.size());
  return rep;
}

CalibrationReport ece(std::span<const double> confidences, const std::vector<bool>& correct,
                      int bins) {
  if (confidences.size() != correct.size())
    throw std::invalid_argument("ece: confidence/correct count mismatch");
  if (bins < 1) throw std::invalid_argument("ece: need at least one bin");
  if (confidences.empty()) throw std::invalid_argument("ece: empty input");

  CalibrationReport rep;
  rep.bins = bins;
  rep.bin_stats.assign(bins, {});
  std::vector<double> conf_sum(bins, 0.0);
  std::vector<int> hit(bins, 0);
  for (size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    if (c < 0.0 || c > 1.0)
      throw std::invalid_argument("ece: confidence " + std::to_string(c) + " outside [0,1]");
    const int b = std::min(static_cast<int>(c * bins), bins - 1);
    rep.bin_stats[b].count += 1;
    conf_sum[b] += c;
    hit[b] += correct[i] ? 1 : 0;
  }
  const double n = static_cast<double>(confidences.size());
  rep.ece = 0.0;
  for (int b = 0; b < bins; ++b) {
    CalibrationBin& st = rep.bin_stats[b];
    if (st.count == 0) continue;
    st.mean_confidence = conf_sum[b] / st.count;
    st.accuracy = static_cast<double>(hit[b]) / st.count;
    rep.ece += st.count / n * std::fabs(st.accuracy - st.mean_confidence);
  }
  return rep;
}

RejectionCurve rejection_curve(const std::vector<double>& scores, const std::vector<bool>& wrong,
                               RejectionOrder order) {
  if (scores.size() != wrong.size())
    throw std::invalid_argument("rejection_curve: score/label count mismatch");
  if (scores.empty()) throw std::invalid_argument("rejection_curve: empty input");

  const int n = static_cast<int>(scores.size());
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  // rejection order; stable sort keeps input order on ties
  if (order == RejectionOrder::kUncertaintyDescending)
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return scores[a] > scores[b]; });
  else
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return scores[a] < scores[b]; });

  int remaining = static_cast<int>(std::count(wrong.begin(), wrong.end(), true));
  RejectionCurve curve;
  curve.base_error = static_cast<double>(remaining) / n;
  curve.points.reserve(n + 1);
  curve.points.emplace_back(0.0, curve.base_error);
  for (int j = 0; j < n; ++j) {
    if (wrong[idx[j]]) --remaining;
    curve.points.emplace_back(static_cast<double>(j + 1) / n,
                              static_cast<double>(remaining) / n);
  }
  return curve;
}

std::optional<double> prr(const RejectionCurve& curve, double base_error, int n) {
  if (n < 1 || curve.points.size() != static_cast<size_t>(n) + 1)
    throw std::invalid_argument("prr: curve must carry n+1 points");
  if (std::fabs(curve.points.front().second - base_error) > 1e-9)
    throw std::invalid_argument("prr: base error disagrees with the curve");
  // Degenerate ends: no errors means nothing to reject away, all errors means
  // every ordering is already the oracle; the ratio is 0/0 either way.
  if (base_error == 0.0 || base_error == 1.0) return std::nullopt;

  double area = 0.0;  // under the measured curve
  for (int j = 0; j < n; ++j) {
    const auto& [r0, e0] = curve.points[j];
    const auto& [r1, e1] = curve.points[j + 1];
    area += (e0 + e1) / 2.0 * (r1 - r0);
  }
  const double random_area = base_error / 2.0;
  // The oracle line drops with slope -1 and hits zero at r = base_error; both
  // areas are exact for these piecewise-linear curves.
  const double oracle_gain = base_error * (1.0 - base_error) / 2.0;
  return (random_area - area) / oracle_gain;
}

}  // namespace seqpl
