#include "mtpbias/metrics.hpp"

#include <algorithm>
#include <cstdio>

#include "mtpbias/errors.hpp"

namespace mtpbias {

Alignment align(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  const int nr = static_cast<int>(ref.size());
  const int nh = static_cast<int>(hyp.size());
  std::vector<int> dist(static_cast<size_t>(nr + 1) * (nh + 1));
  auto d = [&](int i, int j) -> int& { return dist[static_cast<size_t>(i) * (nh + 1) + j]; };
  for (int i = 0; i <= nr; ++i) d(i, 0) = i;
  for (int j = 0; j <= nh; ++j) d(0, j) = j;
  for (int i = 1; i <= nr; ++i)
    for (int j = 1; j <= nh; ++j) {
      const int sub = d(i - 1, j - 1) + (ref[static_cast<size_t>(i - 1)] != hyp[static_cast<size_t>(j - 1)] ? 1 : 0);
      const int del = d(i - 1, j) + 1;
      const int ins = d(i, j - 1) + 1;
      d(i, j) = std::min({sub, del, ins});
    }

  Alignment out;
  out.distance = d(nr, nh);
  // Backtrace, preferring substitution, then deletion, then insertion.
  int i = nr, j = nh;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 &&
        d(i, j) == d(i - 1, j - 1) +
                       (ref[static_cast<size_t>(i - 1)] != hyp[static_cast<size_t>(j - 1)] ? 1 : 0)) {
      out.ops.push_back({ref[static_cast<size_t>(i - 1)] == hyp[static_cast<size_t>(j - 1)]
                             ? EditKind::kMatch
                             : EditKind::kSub,
                         i - 1, j - 1});
      --i;
      --j;
    } else if (i > 0 && d(i, j) == d(i - 1, j) + 1) {
      out.ops.push_back({EditKind::kDel, i - 1, -1});
      --i;
    } else {
      out.ops.push_back({EditKind::kIns, -1, j - 1});
      --j;
    }
  }
  std::reverse(out.ops.begin(), out.ops.end());
  return out;
}

EvalReport biased_wer(const Alignment& alignment, const std::vector<std::string>& ref,
                      const std::vector<std::string>& hyp,
                      const std::set<std::string>& bias_words) {
  if (ref.empty()) throw DataError("biased_wer: empty reference");
  EvalReport r;
  r.n_utterances = 1;
  for (const auto& w : ref)
    (bias_words.count(w) ? r.n_bias_ref : r.n_unbias_ref) += 1;
  for (const auto& op : alignment.ops) {
    switch (op.kind) {
      case EditKind::kMatch:
        break;
      case EditKind::kSub:
        (bias_words.count(ref[static_cast<size_t>(op.ref_idx)]) ? r.sub_b : r.sub_u) += 1;
        break;
      case EditKind::kDel:
        (bias_words.count(ref[static_cast<size_t>(op.ref_idx)]) ? r.del_b : r.del_u) += 1;
        break;
      case EditKind::kIns:
        (bias_words.count(hyp[static_cast<size_t>(op.hyp_idx)]) ? r.ins_b : r.ins_u) += 1;
        break;
    }
  }
  return r;
}

EvalReport aggregate(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw DataError("aggregate: no reports");
  EvalReport out;
  for (const auto& r : reports) {
    out.sub_b += r.sub_b;
    out.del_b += r.del_b;
    out.ins_b += r.ins_b;
    out.sub_u += r.sub_u;
    out.del_u += r.del_u;
    out.ins_u += r.ins_u;
    out.n_bias_ref += r.n_bias_ref;
    out.n_unbias_ref += r.n_unbias_ref;
    out.n_utterances += r.n_utterances;
  }
  return out;
}

std::string format_report_cell(const EvalReport& r) {
  char buf[96];
  const auto b = r.b_wer();
  const auto u = r.u_wer();
  char bs[24], us[24];
  if (b)
    std::snprintf(bs, sizeof(bs), "%.2f", *b);
  else
    std::snprintf(bs, sizeof(bs), "-");
  if (u)
    std::snprintf(us, sizeof(us), "%.2f", *u);
  else
    std::snprintf(us, sizeof(us), "-");
  std::snprintf(buf, sizeof(buf), "%.2f (%s/%s)", r.wer(), bs, us);
  return buf;
}

}  // namespace mtpbias
