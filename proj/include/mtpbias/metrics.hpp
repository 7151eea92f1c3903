#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace mtpbias {

enum class EditKind { kMatch, kSub, kDel, kIns };

struct EditOp {
  EditKind kind;
  int ref_idx;  // -1 for insertions
  int hyp_idx;  // -1 for deletions
};

struct Alignment {
  std::vector<EditOp> ops;
  int distance = 0;
};

// Minimum-edit-distance alignment with unit costs. Ties in the backtrace
// prefer substitution, then deletion, then insertion.
Alignment align(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

// Error counts split by bias membership. Substitutions and deletions belong
// to the biased class when the reference word is a bias word; insertions when
// the inserted hypothesis word is. Rates are percentages; a class with no
// reference words keeps its error counts but reports no rate.
struct EvalReport {
  long long sub_b = 0, del_b = 0, ins_b = 0;
  long long sub_u = 0, del_u = 0, ins_u = 0;
  long long n_bias_ref = 0, n_unbias_ref = 0;
  long long n_utterances = 0;

  long long biased_errors() const { return sub_b + del_b + ins_b; }
  long long unbiased_errors() const { return sub_u + del_u + ins_u; }
  long long errors() const { return biased_errors() + unbiased_errors(); }
  long long ref_words() const { return n_bias_ref + n_unbias_ref; }

  double wer() const { return ref_words() > 0 ? 100.0 * errors() / ref_words() : 0.0; }
  std::optional<double> b_wer() const {
    if (n_bias_ref == 0) return std::nullopt;
    return 100.0 * biased_errors() / n_bias_ref;
  }
  std::optional<double> u_wer() const {
    if (n_unbias_ref == 0) return std::nullopt;
    return 100.0 * unbiased_errors() / n_unbias_ref;
  }
};

EvalReport biased_wer(const Alignment& alignment, const std::vector<std::string>& ref,
                      const std::vector<std::string>& hyp,
                      const std::set<std::string>& bias_words);

// Micro-average: numerators and denominators sum before division.
EvalReport aggregate(const std::vector<EvalReport>& reports);

// Table-1 style cell: "WER (B-WER/U-WER)" with "-" for absent rates.
std::string format_report_cell(const EvalReport& r);

}  // namespace mtpbias
