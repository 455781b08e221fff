#pragma once
// Evaluation and diagnostics: edit distance, CER/WER, calibration error,
// rejection curves and the prediction rejection ratio.

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace seqpl {

int levenshtein(std::span<const int> a, std::span<const int> b);
int levenshtein(const std::string& a, const std::string& b);

// sum of edit distances / sum of reference lengths
double cer(const std::vector<std::string>& preds, const std::vector<std::string>& refs);
// fraction of predictions that are not an exact match
double wer(const std::vector<std::string>& preds, const std::vector<std::string>& refs);

struct EvalReport {
  double word_accuracy = 0.0;
  double wer = 0.0;
  double cer = 0.0;
  int count = 0;
};

EvalReport evaluate(const std::vector<std::string>& preds, const std::vector<std::string>& refs);

struct CalibrationBin {
  double mean_confidence = 0.0;
  double accuracy = 0.0;
  int count = 0;
};

struct CalibrationReport {
  int bins = 0;
  std::vector<CalibrationBin> bin_stats;
  double ece = 0.0;
};

// Equal-width bins on [0,1]; ECE = sum (n_bin/N) |acc_bin - conf_bin|.
CalibrationReport ece(std::span<const double> confidences, const std::vector<bool>& correct,
                      int bins = 10);

struct RejectionCurve {
  // (rejected fraction j/N, errors remaining among retained / N); N+1 points.
  // Rejecting a sample resolves it, so the curve ends at exactly 0.
  std::vector<std::pair<double, double>> points;
  double base_error = 0.0;
};

enum class RejectionOrder {
  kUncertaintyDescending,  // reject the highest score first
  kConfidenceAscending,    // reject the lowest score first
};

// Ties in score keep stable input order.
RejectionCurve rejection_curve(const std::vector<double>& scores, const std::vector<bool>& wrong,
                               RejectionOrder order);

// Area between the curve and the random line, over the oracle's same area.
// 1 for the oracle ordering, about 0 for uninformative, negative when the
// ordering is anti-informative. No errors at all -> nullopt.
std::optional<double> prr(const RejectionCurve& curve, double base_error, int n);

}  // namespace seqpl
