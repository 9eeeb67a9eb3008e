#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "telesee/common.hpp"
#include "telesee/entity.hpp"
#include "telesee/text.hpp"

namespace telesee {

// ---------------------------------------------------------------------------
// Pairwise similarities
// ---------------------------------------------------------------------------

// |a ∩ b| / |a ∪ b|, defined as 1.0 when both sets are empty.
inline double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  size_t inter = 0;
  for (const auto& x : a) inter += b.count(x);
  size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Attribute-value similarity: Jaccard over normalized token sets.
inline double prop_similarity(const std::string& pred_value, const std::string& ref_value) {
  return jaccard(normalize_token_set(pred_value), normalize_token_set(ref_value));
}

namespace metric_detail {

// Union of attribute keys present in either entity, in deterministic order.
inline std::vector<std::string> key_union(const StructuredEntity& a, const StructuredEntity& b) {
  std::set<std::string> keys;
  for (const auto& [k, _] : a.attributes) keys.insert(k);
  for (const auto& [k, _] : b.attributes) keys.insert(k);
  return {keys.begin(), keys.end()};
}

// A key present on exactly one side contributes 0.
inline double key_similarity(const StructuredEntity& pred, const StructuredEntity& ref,
                             const std::string& key) {
  auto p = pred.attributes.find(key);
  auto r = ref.attributes.find(key);
  if (p == pred.attributes.end() || r == ref.attributes.end()) return 0.0;
  return prop_similarity(p->second, r->second);
}

}  // namespace metric_detail

// Δ_ent: linear average over the entity name plus the union of attribute keys
// present in either entity. Keys absent from both sides are skipped entirely.
inline double entity_similarity(const StructuredEntity& pred, const StructuredEntity& ref) {
  auto keys = metric_detail::key_union(pred, ref);
  double sum = prop_similarity(pred.name, ref.name);
  for (const auto& k : keys) sum += metric_detail::key_similarity(pred, ref, k);
  return sum / static_cast<double>(1 + keys.size());
}

// ---------------------------------------------------------------------------
// Matching modes
// ---------------------------------------------------------------------------

enum class MatchVariant { ExactName, ApproxName, MultiProp };

struct MatchMode {
  MatchVariant variant = MatchVariant::MultiProp;
  double name_weight = 0.5;  // MultiProp only; must lie in (0, 1)

  static MatchMode exact() { return {MatchVariant::ExactName, 0.5}; }
  static MatchMode approx() { return {MatchVariant::ApproxName, 0.5}; }
  static MatchMode multiprop(double w = 0.5) { return {MatchVariant::MultiProp, w}; }

  void validate() const {
    if (variant == MatchVariant::MultiProp && (name_weight <= 0.0 || name_weight >= 1.0))
      throw ValidationError("MultiProp name_weight must lie strictly between 0 and 1");
  }

  const char* name() const {
    switch (variant) {
      case MatchVariant::ExactName: return "exact";
      case MatchVariant::ApproxName: return "approx";
      default: return "multiprop";
    }
  }

  static MatchMode parse(const std::string& s, double name_weight = 0.5) {
    if (s == "exact") return exact();
    if (s == "approx") return approx();
    if (s == "multiprop") return multiprop(name_weight);
    throw UsageError("unknown match mode '" + s + "' (want exact|approx|multiprop)");
  }
};

// Pairing objective used to build the assignment problem. This is distinct
// from Δ_ent, which always scores matched pairs at full attribute level.
inline double assignment_score(const StructuredEntity& pred, const StructuredEntity& ref,
                               const MatchMode& mode) {
  switch (mode.variant) {
    case MatchVariant::ExactName:
      return lowercase(trim(pred.name)) == lowercase(trim(ref.name)) ? 1.0 : 0.0;
    case MatchVariant::ApproxName:
      return jaccard(normalize_token_set(pred.name), normalize_token_set(ref.name));
    case MatchVariant::MultiProp: {
      double name_sim = jaccard(normalize_token_set(pred.name), normalize_token_set(ref.name));
      auto keys = metric_detail::key_union(pred, ref);
      double attr_mean;
      if (keys.empty()) {
        attr_mean = 1.0;  // vacuous agreement, mirrors jaccard(∅, ∅)
      } else {
        double sum = 0.0;
        for (const auto& k : keys) sum += metric_detail::key_similarity(pred, ref, k);
        attr_mean = sum / static_cast<double>(keys.size());
      }
      return mode.name_weight * name_sim + (1.0 - mode.name_weight) * attr_mean;
    }
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Assignment
// ---------------------------------------------------------------------------

struct SimilarityMatrix {
  size_t m = 0;  // predicted entities (rows)
  size_t n = 0;  // reference entities (cols)
  std::vector<double> values;  // row-major, m*n

  SimilarityMatrix() = default;
  SimilarityMatrix(size_t rows, size_t cols) : m(rows), n(cols), values(rows * cols, 0.0) {}

  double& at(size_t i, size_t j) { return values[i * n + j]; }
  double at(size_t i, size_t j) const { return values[i * n + j]; }

  void validate() const {
    for (double v : values)
      if (!std::isfinite(v) || v < 0.0 || v > 1.0)
        throw ValidationError("similarity values must be finite and within [0,1]");
  }
};

// Binary matching D between predicted and reference entities. Stored as the
// list of matched (pred, ref) pairs, sorted by pred index.
struct AssignmentMatrix {
  size_t m = 0;
  size_t n = 0;
  std::vector<std::pair<size_t, size_t>> pairs;

  bool matched(size_t i, size_t j) const {
    return std::find(pairs.begin(), pairs.end(), std::make_pair(i, j)) != pairs.end();
  }

  double total(const SimilarityMatrix& s) const {
    double t = 0.0;
    for (auto [i, j] : pairs) t += s.at(i, j);
    return t;
  }
};

namespace assign_detail {

// Kuhn-Munkres on a padded square cost matrix (minimization form), O(K^3).
// Returns for each row the assigned column.
inline std::vector<int> hungarian_min(const std::vector<std::vector<double>>& cost) {
  size_t k = cost.size();
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(k + 1, 0.0), v(k + 1, 0.0);
  std::vector<int> p(k + 1, 0), way(k + 1, 0);
  for (size_t i = 1; i <= k; ++i) {
    p[0] = static_cast<int>(i);
    int j0 = 0;
    std::vector<double> minv(k + 1, kInf);
    std::vector<bool> used(k + 1, false);
    do {
      used[static_cast<size_t>(j0)] = true;
      int i0 = p[static_cast<size_t>(j0)], j1 = 0;
      double delta = kInf;
      for (size_t j = 1; j <= k; ++j) {
        if (used[j]) continue;
        double cur = cost[static_cast<size_t>(i0 - 1)][j - 1] - u[static_cast<size_t>(i0)] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = static_cast<int>(j);
        }
      }
      for (size_t j = 0; j <= k; ++j) {
        if (used[j]) {
          u[static_cast<size_t>(p[j])] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(k, -1);
  for (size_t j = 1; j <= k; ++j)
    if (p[j] != 0) row_to_col[static_cast<size_t>(p[j] - 1)] = static_cast<int>(j) - 1;
  return row_to_col;
}

// Maximum-total matching over entries with s > 0. Padded square conversion;
// zero/padded assignments are dropped afterwards.
inline AssignmentMatrix hungarian_max(const SimilarityMatrix& s) {
  AssignmentMatrix out;
  out.m = s.m;
  out.n = s.n;
  if (s.m == 0 || s.n == 0) return out;
  size_t k = std::max(s.m, s.n);
  std::vector<std::vector<double>> cost(k, std::vector<double>(k, 1.0));
  for (size_t i = 0; i < s.m; ++i)
    for (size_t j = 0; j < s.n; ++j) cost[i][j] = 1.0 - s.at(i, j);
  auto row_to_col = hungarian_min(cost);
  for (size_t i = 0; i < s.m; ++i) {
    int j = row_to_col[i];
    if (j >= 0 && static_cast<size_t>(j) < s.n && s.at(i, static_cast<size_t>(j)) > 0.0)
      out.pairs.emplace_back(i, static_cast<size_t>(j));
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  return out;
}

}  // namespace assign_detail

// Exhaustive maximizer over all injective pairings of entries with s > 0.
// Pairings are explored in lexicographic (pred, ref) order and only strictly
// better totals replace the incumbent, so ties resolve to the
// lexicographically smallest matched pair set. Serves as the independent
// oracle for optimal_assignment.
inline AssignmentMatrix brute_force_assignment(const SimilarityMatrix& s) {
  if (std::min(s.m, s.n) > 8)
    throw ValidationError("brute_force_assignment: min(m,n) must be <= 8");
  s.validate();
  AssignmentMatrix best;
  best.m = s.m;
  best.n = s.n;
  double best_total = -1.0;

  std::vector<std::pair<size_t, size_t>> current;
  std::vector<bool> col_used(s.n, false);
  double current_total = 0.0;

  auto recurse = [&](auto&& self, size_t row) -> void {
    if (row == s.m) {
      if (current_total > best_total) {
        best_total = current_total;
        best.pairs = current;
      }
      return;
    }
    for (size_t j = 0; j < s.n; ++j) {
      if (col_used[j] || s.at(row, j) <= 0.0) continue;
      col_used[j] = true;
      current.emplace_back(row, j);
      current_total += s.at(row, j);
      self(self, row + 1);
      current_total -= s.at(row, j);
      current.pop_back();
      col_used[j] = false;
    }
    self(self, row + 1);  // leave this row unmatched
  };
  recurse(recurse, 0);
  best.pairs.shrink_to_fit();
  return best;
}

// Hungarian-based optimal assignment with a lexicographic canonicalization
// pass: among matchings whose totals tie (within 1e-12), prefer the one with
// the lexicographically smallest matched pair set. If canonicalization loses
// total beyond the tolerance it falls back to the raw Hungarian matching.
inline AssignmentMatrix optimal_assignment(const SimilarityMatrix& s) {
  s.validate();
  AssignmentMatrix raw = assign_detail::hungarian_max(s);
  if (raw.pairs.size() <= 1) return raw;
  const double target = raw.total(s);
  const double tol = 1e-12;

  AssignmentMatrix canon;
  canon.m = s.m;
  canon.n = s.n;
  std::vector<bool> col_used(s.n, false);
  double fixed_sum = 0.0;

  // Residual optimum over rows > `row` restricted to unused columns.
  auto rest_best = [&](size_t row, size_t extra_col) -> double {
    std::vector<size_t> cols;
    for (size_t j = 0; j < s.n; ++j)
      if (!col_used[j] && j != extra_col) cols.push_back(j);
    size_t rows = s.m - row;
    if (rows == 0 || cols.empty()) return 0.0;
    SimilarityMatrix sub(rows, cols.size());
    for (size_t i = 0; i < rows; ++i)
      for (size_t j = 0; j < cols.size(); ++j) sub.at(i, j) = s.at(row + i, cols[j]);
    return assign_detail::hungarian_max(sub).total(sub);
  };

  for (size_t i = 0; i < s.m; ++i) {
    bool fixed = false;
    for (size_t j = 0; j < s.n && !fixed; ++j) {
      if (col_used[j] || s.at(i, j) <= 0.0) continue;
      double candidate = fixed_sum + s.at(i, j) + rest_best(i + 1, j);
      if (candidate >= target - tol) {
        canon.pairs.emplace_back(i, j);
        col_used[j] = true;
        fixed_sum += s.at(i, j);
        fixed = true;
      }
    }
    // Unfixed rows stay unmatched; optimality is re-verified at the end.
  }
  if (std::abs(canon.total(s) - target) <= tol) return canon;
  return raw;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct MatchedPair {
  size_t pred_index;
  size_t ref_index;
  double entity_sim;  // Δ_ent
};

struct EvalReport {
  double delta = 0.0;
  MatchMode mode;
  size_t m = 0, n = 0, k = 0;
  std::vector<MatchedPair> per_pair;
  std::map<std::string, double> per_attribute;

  nlohmann::json to_json() const {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : per_pair)
      pairs.push_back({{"pred", p.pred_index}, {"ref", p.ref_index}, {"entity_sim", p.entity_sim}});
    return {{"delta", delta},
            {"mode", mode.name()},
            {"name_weight", mode.name_weight},
            {"m", m},
            {"n", n},
            {"k", k},
            {"pairs", pairs},
            {"per_attribute", per_attribute}};
  }
};

inline constexpr const char* kNameAttribute = "entity name";

// Per-key mean value similarity over matched pairs, restricted to keys the
// reference side actually carries; the entity name is reported as its own
// row. Keys absent from every reference are omitted.
inline std::map<std::string, double> attribute_accuracy(
    const std::vector<std::pair<const StructuredEntity*, const StructuredEntity*>>& pairs) {
  std::map<std::string, double> sums;
  std::map<std::string, int64_t> counts;
  for (const auto& [pred, ref] : pairs) {
    sums[kNameAttribute] += prop_similarity(pred->name, ref->name);
    ++counts[kNameAttribute];
    for (const auto& [key, ref_value] : ref->attributes) {
      auto it = pred->attributes.find(key);
      double sim = it == pred->attributes.end() ? 0.0 : prop_similarity(it->second, ref_value);
      sums[key] += sim;
      ++counts[key];
    }
  }
  std::map<std::string, double> out;
  for (const auto& [key, sum] : sums) out[key] = sum / static_cast<double>(counts[key]);
  return out;
}

// δ(E', E): builds the mode's pairing matrix, solves the assignment, then
// averages Δ_ent over matched pairs with k = max(m, n).
inline EvalReport evaluate(const EntitySet& pred, const EntitySet& ref, const MatchMode& mode) {
  mode.validate();
  if (pred.schema_version && ref.schema_version && *pred.schema_version != *ref.schema_version)
    throw SchemaError("schema version mismatch: prediction '" + *pred.schema_version +
                      "' vs reference '" + *ref.schema_version + "'");
  EvalReport report;
  report.mode = mode;
  report.m = pred.size();
  report.n = ref.size();
  report.k = std::max(report.m, report.n);
  if (report.m == 0 && report.n == 0) {
    report.delta = 1.0;
    return report;
  }
  SimilarityMatrix pairing(report.m, report.n);
  for (size_t i = 0; i < report.m; ++i)
    for (size_t j = 0; j < report.n; ++j)
      pairing.at(i, j) = assignment_score(pred.entities[i], ref.entities[j], mode);

  AssignmentMatrix assignment = optimal_assignment(pairing);
  double sum = 0.0;
  std::vector<std::pair<const StructuredEntity*, const StructuredEntity*>> matched;
  for (auto [i, j] : assignment.pairs) {
    double ent_sim = entity_similarity(pred.entities[i], ref.entities[j]);
    report.per_pair.push_back({i, j, ent_sim});
    matched.emplace_back(&pred.entities[i], &ref.entities[j]);
    sum += ent_sim;
  }
  report.delta = sum / static_cast<double>(report.k);
  report.per_attribute = attribute_accuracy(matched);
  return report;
}

// ---------------------------------------------------------------------------
// Cross-variant correlation
// ---------------------------------------------------------------------------

struct CorrelationSummary {
  // Point sets: x = MultiProp score, y = Exact/Approx score, one per system.
  std::vector<std::pair<double, double>> multi_vs_exact;
  std::vector<std::pair<double, double>> multi_vs_approx;
  double pearson_exact = 0.0, spearman_exact = 0.0;
  double pearson_approx = 0.0, spearman_approx = 0.0;
  bool degenerate = false;  // zero-variance input handled by convention as 1.0

  nlohmann::json to_json() const {
    auto points = [](const std::vector<std::pair<double, double>>& ps) {
      nlohmann::json a = nlohmann::json::array();
      for (auto [x, y] : ps) a.push_back({{"multiprop", x}, {"other", y}});
      return a;
    };
    return {{"multi_vs_exact", points(multi_vs_exact)},
            {"multi_vs_approx", points(multi_vs_approx)},
            {"pearson_exact", pearson_exact},
            {"spearman_exact", spearman_exact},
            {"pearson_approx", pearson_approx},
            {"spearman_approx", spearman_approx},
            {"degenerate", degenerate}};
  }
};

namespace metric_detail {

inline double pearson(const std::vector<double>& x, const std::vector<double>& y, bool* degenerate) {
  size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) {
    if (degenerate) *degenerate = true;
    return 1.0;  // zero-variance convention, flagged
  }
  return sxy / std::sqrt(sxx * syy);
}

inline std::vector<double> average_ranks(const std::vector<double>& x) {
  size_t n = x.size();
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t t = i; t <= j; ++t) ranks[idx[t]] = rank;
    i = j + 1;
  }
  return ranks;
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y, bool* degenerate) {
  return pearson(average_ranks(x), average_ranks(y), degenerate);
}

}  // namespace metric_detail

struct SystemScores {
  std::string system;
  double exact = 0.0;
  double approx = 0.0;
  double multiprop = 0.0;
};

inline CorrelationSummary metric_correlation(const std::vector<SystemScores>& systems) {
  if (systems.size() < 2)
    throw ValidationError("metric_correlation needs at least 2 systems");
  CorrelationSummary out;
  std::vector<double> multi, exact, approx;
  for (const auto& s : systems) {
    multi.push_back(s.multiprop);
    exact.push_back(s.exact);
    approx.push_back(s.approx);
    out.multi_vs_exact.emplace_back(s.multiprop, s.exact);
    out.multi_vs_approx.emplace_back(s.multiprop, s.approx);
  }
  out.pearson_exact = metric_detail::pearson(multi, exact, &out.degenerate);
  out.spearman_exact = metric_detail::spearman(multi, exact, &out.degenerate);
  out.pearson_approx = metric_detail::pearson(multi, approx, &out.degenerate);
  out.spearman_approx = metric_detail::spearman(multi, approx, &out.degenerate);
  return out;
}

}  // namespace telesee
