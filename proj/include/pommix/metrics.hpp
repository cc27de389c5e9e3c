#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace pommix::eval {

struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void check_lengths(const std::vector<double>& y,
                          const std::vector<double>& yhat, const char* op) {
  if (y.size() != yhat.size())
    throw MetricError(std::string(op) + ": length mismatch " +
                      std::to_string(y.size()) + " vs " +
                      std::to_string(yhat.size()));
  if (y.size() < 2)
    throw MetricError(std::string(op) + ": need at least 2 points");
}

inline double pearson(const std::vector<double>& y,
                      const std::vector<double>& yhat) {
  check_lengths(y, yhat, "pearson");
  const double n = static_cast<double>(y.size());
  double my = 0, mh = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    my += y[i];
    mh += yhat[i];
  }
  my /= n;
  mh /= n;
  double syy = 0, shh = 0, syh = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    syy += (y[i] - my) * (y[i] - my);
    shh += (yhat[i] - mh) * (yhat[i] - mh);
    syh += (y[i] - my) * (yhat[i] - mh);
  }
  if (syy == 0.0 || shh == 0.0)
    throw MetricError("pearson: constant input");
  return syh / std::sqrt(syy * shh);
}

inline double rmse(const std::vector<double>& y,
                   const std::vector<double>& yhat) {
  check_lengths(y, yhat, "rmse");
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i)
    s += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

namespace detail {

// inversion count by mergesort
inline std::uint64_t count_inversions(std::vector<double>& v,
                                      std::vector<double>& buf,
                                      std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = (lo + hi) / 2;
  std::uint64_t inv = count_inversions(v, buf, lo, mid) +
                      count_inversions(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      inv += mid - i;
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + lo, buf.begin() + hi, v.begin() + lo);
  return inv;
}

inline std::uint64_t tie_pairs(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::uint64_t t = 0;
  std::size_t i = 0;
  while (i < v.size()) {
    std::size_t j = i;
    while (j < v.size() && v[j] == v[i]) ++j;
    const std::uint64_t c = j - i;
    t += c * (c - 1) / 2;
    i = j;
  }
  return t;
}

}  // namespace detail

// Kendall tau-b with tie corrections, O(n log n) via Knight's algorithm.
inline double kendall_tau_b(const std::vector<double>& y,
                            const std::vector<double>& yhat) {
  check_lengths(y, yhat, "kendall_tau_b");
  const std::size_t n = y.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (y[a] != y[b]) return y[a] < y[b];
    return yhat[a] < yhat[b];
  });
  std::vector<double> ysorted(n), hsorted(n);
  for (std::size_t i = 0; i < n; ++i) {
    ysorted[i] = y[idx[i]];
    hsorted[i] = yhat[idx[i]];
  }
  // pairs tied in both (within runs tied on y, count yhat ties)
  std::uint64_t n3 = 0;
  {
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j < n && ysorted[j] == ysorted[i]) ++j;
      n3 += detail::tie_pairs(
          std::vector<double>(hsorted.begin() + i, hsorted.begin() + j));
      i = j;
    }
  }
  std::vector<double> buf(n);
  const std::uint64_t nd = detail::count_inversions(hsorted, buf, 0, n);
  const std::uint64_t n0 = std::uint64_t(n) * (n - 1) / 2;
  const std::uint64_t n1 = detail::tie_pairs(y);
  const std::uint64_t n2 = detail::tie_pairs(yhat);
  const double denom = std::sqrt(double(n0 - n1)) * std::sqrt(double(n0 - n2));
  if (denom == 0.0) throw MetricError("kendall_tau_b: constant input");
  const double num = double(n0) - double(n1) - double(n2) + double(n3) -
                     2.0 * double(nd);
  return num / denom;
}

// Mann-Whitney AUROC with midrank tie handling.
inline double auroc(const std::vector<int>& labels,
                    const std::vector<double>& scores) {
  if (labels.size() != scores.size())
    throw MetricError("auroc: length mismatch");
  const std::size_t n = labels.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double mid = (double(i) + double(j - 1)) / 2.0 + 1.0;
    for (std::size_t k = i; k < j; ++k) rank[idx[k]] = mid;
    i = j;
  }
  double rank_pos = 0;
  std::uint64_t npos = 0;
  for (std::size_t k = 0; k < n; ++k)
    if (labels[k]) {
      rank_pos += rank[k];
      ++npos;
    }
  const std::uint64_t nneg = n - npos;
  if (npos == 0 || nneg == 0)
    throw MetricError("auroc: needs both classes");
  return (rank_pos - double(npos) * (npos + 1) / 2.0) /
         (double(npos) * double(nneg));
}

// Macro average across labels; single-class labels are skipped and reported.
inline double macro_auroc(const std::vector<std::vector<int>>& labels,
                          const std::vector<std::vector<double>>& scores,
                          std::vector<int>* skipped_labels = nullptr) {
  if (labels.size() != scores.size() || labels.empty())
    throw MetricError("macro_auroc: bad inputs");
  const std::size_t num_labels = labels[0].size();
  double sum = 0;
  int used = 0;
  std::vector<int> col_labels(labels.size());
  std::vector<double> col_scores(labels.size());
  for (std::size_t j = 0; j < num_labels; ++j) {
    int pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      col_labels[i] = labels[i][j];
      col_scores[i] = scores[i][j];
      pos += labels[i][j] ? 1 : 0;
    }
    if (pos == 0 || pos == static_cast<int>(labels.size())) {
      if (skipped_labels) skipped_labels->push_back(static_cast<int>(j));
      continue;
    }
    sum += auroc(col_labels, col_scores);
    ++used;
  }
  if (used == 0) throw MetricError("macro_auroc: no label has both classes");
  return sum / used;
}

struct MetricReport {
  std::vector<double> pearson_by_fold;
  std::vector<double> rmse_by_fold;
  std::vector<double> kendall_by_fold;

  static std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {0.0, 0.0};
    double m = 0;
    for (double x : v) m += x;
    m /= double(v.size());
    double var = 0;
    for (double x : v) var += (x - m) * (x - m);
    return {m, std::sqrt(var / double(v.size()))};
  }
};

}  // namespace pommix::eval
