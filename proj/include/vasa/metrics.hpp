#pragma once

// gIoU, cIoU and xIoU over (prediction, ground truth, others-union) triples.
//
//   gIoU = mean_i |P∩G| / |P∪G|
//   cIoU = Σ|P∩G| / Σ|P∪G|
//   xIoU = mean_i |P∩O| / |P|
//
// Aggregation is exact: per-item pixel counts are integers and the means are
// accumulated as rationals. Conversion to double happens only at the edges.

#include <array>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "vasa/error.hpp"
#include "vasa/mask.hpp"

namespace vasa {

using Rational = boost::multiprecision::cpp_rational;

enum class Split { AdHoc, Common, None };

constexpr std::string_view to_string(Split s) {
  switch (s) {
    case Split::AdHoc: return "ad-hoc";
    case Split::Common: return "common";
    case Split::None: return "none";
  }
  return "none";
}

inline std::optional<Split> parse_split(std::string_view text) {
  if (text == "ad-hoc" || text == "adhoc" || text == "ad_hoc") return Split::AdHoc;
  if (text == "common") return Split::Common;
  if (text == "none" || text.empty()) return Split::None;
  return std::nullopt;
}

struct EvalPair {
  std::string id;
  RasterMask prediction;
  RasterMask ground_truth;
  std::optional<RasterMask> others_union;
  Split split = Split::None;
};

/// Integer pixel counts for one item; everything else is derived from these.
struct PairCounts {
  std::uint64_t intersection = 0;     // |P ∩ G|
  std::uint64_t union_area = 0;       // |P ∪ G|
  std::uint64_t prediction_area = 0;  // |P|
  std::uint64_t confused = 0;         // |P ∩ O|
  bool has_others = false;

  friend bool operator==(const PairCounts&, const PairCounts&) = default;
};

inline PairCounts count_pair(const RasterMask& p, const RasterMask& g, const RasterMask* others) {
  PairCounts c;
  c.intersection = intersection_area(p, g);
  c.prediction_area = p.area();
  c.union_area = c.prediction_area + g.area() - c.intersection;
  if (others != nullptr) {
    c.confused = intersection_area(p, *others);
    c.has_others = true;
  }
  return c;
}

inline PairCounts count_pair(const EvalPair& pair) {
  return count_pair(pair.prediction, pair.ground_truth,
                    pair.others_union ? &*pair.others_union : nullptr);
}

/// Both-empty counts as a vacuous perfect match.
inline Rational iou_ratio(const PairCounts& c) {
  if (c.union_area == 0) return Rational(1);
  return Rational(c.intersection) / Rational(c.union_area);
}

/// Empty predictions include no wrong regions and score 0.
inline Rational xiou_ratio(const PairCounts& c) {
  if (c.prediction_area == 0) return Rational(0);
  return Rational(c.confused) / Rational(c.prediction_area);
}

inline double iou(const RasterMask& p, const RasterMask& g) {
  return iou_ratio(count_pair(p, g, nullptr)).convert_to<double>();
}

/// Metric triple for one group of items.
struct SplitMetrics {
  std::size_t n = 0;
  std::size_t n_with_others = 0;
  Rational giou;
  Rational ciou;
  std::optional<Rational> xiou;  // absent when no item carries an others-union

  double giou_value() const { return giou.convert_to<double>(); }
  double ciou_value() const { return ciou.convert_to<double>(); }
  std::optional<double> xiou_value() const {
    if (!xiou) return std::nullopt;
    return xiou->convert_to<double>();
  }
};

inline SplitMetrics aggregate(std::span<const PairCounts> items) {
  if (items.empty()) throw Error(Errc::EmptyInput, "cannot aggregate an empty item list");
  SplitMetrics m;
  m.n = items.size();
  Rational iou_sum = 0;
  Rational xiou_sum = 0;
  boost::multiprecision::cpp_int inter_sum = 0;
  boost::multiprecision::cpp_int union_sum = 0;
  for (const auto& c : items) {
    iou_sum += iou_ratio(c);
    inter_sum += c.intersection;
    union_sum += c.union_area;
    if (c.has_others) {
      ++m.n_with_others;
      xiou_sum += xiou_ratio(c);
    }
  }
  m.giou = iou_sum / static_cast<unsigned long long>(m.n);
  m.ciou = union_sum == 0 ? Rational(1) : Rational(inter_sum, union_sum);
  if (m.n_with_others > 0) m.xiou = xiou_sum / static_cast<unsigned long long>(m.n_with_others);
  return m;
}

namespace detail {

inline std::vector<PairCounts> count_all(std::span<const EvalPair> pairs) {
  std::vector<PairCounts> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(count_pair(p));
  return out;
}

}  // namespace detail

inline double giou(std::span<const EvalPair> pairs) {
  return aggregate(detail::count_all(pairs)).giou_value();
}

inline double ciou(std::span<const EvalPair> pairs) {
  return aggregate(detail::count_all(pairs)).ciou_value();
}

inline double xiou(std::span<const EvalPair> pairs) {
  if (pairs.empty()) throw Error(Errc::EmptyInput, "xiou of an empty item list");
  for (const auto& p : pairs) {
    if (!p.others_union) throw Error(Errc::MissingOthersUnion, "item '" + p.id + "' has no others-union mask");
  }
  return *aggregate(detail::count_all(pairs)).xiou_value();
}

struct ItemMetrics {
  std::string id;
  Split split = Split::None;
  PairCounts counts;
  double iou = 0.0;
  std::optional<double> xiou;
  bool empty_prediction = false;
  bool both_empty = false;
};

struct MetricsReport {
  std::vector<ItemMetrics> per_item;
  SplitMetrics total;
  std::map<Split, SplitMetrics> per_split;  // only splits that have items
};

inline ItemMetrics item_metrics(std::string id, Split split, const PairCounts& c) {
  ItemMetrics m;
  m.id = std::move(id);
  m.split = split;
  m.counts = c;
  m.iou = iou_ratio(c).convert_to<double>();
  if (c.has_others) m.xiou = xiou_ratio(c).convert_to<double>();
  m.empty_prediction = c.prediction_area == 0;
  m.both_empty = c.union_area == 0;
  return m;
}

/// Builds the report from precomputed counts (the runner path).
inline MetricsReport evaluate_counts(std::span<const ItemMetrics> items) {
  if (items.empty()) throw Error(Errc::EmptyInput, "evaluate needs at least one item");
  MetricsReport report;
  report.per_item.assign(items.begin(), items.end());
  std::vector<PairCounts> all;
  std::map<Split, std::vector<PairCounts>> by_split;
  for (const auto& item : items) {
    all.push_back(item.counts);
    by_split[item.split].push_back(item.counts);
  }
  report.total = aggregate(all);
  for (const auto& [split, counts] : by_split) report.per_split.emplace(split, aggregate(counts));
  return report;
}

inline MetricsReport evaluate(std::span<const EvalPair> pairs) {
  std::vector<ItemMetrics> items;
  items.reserve(pairs.size());
  for (const auto& p : pairs) items.push_back(item_metrics(p.id, p.split, count_pair(p)));
  return evaluate_counts(items);
}

// ---------------------------------------------------------------------------
// Presentation. Values are rounded to 4 decimals here and nowhere else.
// ---------------------------------------------------------------------------

inline std::string format4(double v) {
  std::array<char, 32> buf{};
  std::snprintf(buf.data(), buf.size(), "%.4f", v);
  return buf.data();
}

/// columns: split,n,giou,ciou,xiou (xiou empty when undefined)
inline std::string report_to_csv(const MetricsReport& report) {
  std::ostringstream out;
  out << "split,n,giou,ciou,xiou\n";
  auto row = [&out](std::string_view name, const SplitMetrics& m) {
    out << name << ',' << m.n << ',' << format4(m.giou_value()) << ',' << format4(m.ciou_value()) << ',';
    if (auto x = m.xiou_value()) out << format4(*x);
    out << '\n';
  };
  for (const auto& [split, m] : report.per_split) row(to_string(split), m);
  row("total", report.total);
  return out.str();
}

inline std::string report_to_markdown(const MetricsReport& report, std::string_view title = {}) {
  std::ostringstream out;
  if (!title.empty()) out << "### " << title << "\n\n";
  out << "| Split | gIoU | cIoU | xIoU | N |\n";
  out << "|---|---|---|---|---|\n";
  auto row = [&out](std::string_view name, const SplitMetrics& m) {
    auto x = m.xiou_value();
    out << "| " << name << " | " << format4(m.giou_value()) << " | " << format4(m.ciou_value()) << " | "
        << (x ? format4(*x) : std::string("n/a")) << " | " << m.n << " |\n";
  };
  static constexpr std::array<std::pair<Split, std::string_view>, 3> kLabels{
      {{Split::AdHoc, "Ad-hoc"}, {Split::Common, "Common"}, {Split::None, "Untagged"}}};
  for (const auto& [split, label] : kLabels) {
    if (auto it = report.per_split.find(split); it != report.per_split.end()) row(label, it->second);
  }
  row("Total", report.total);
  return out.str();
}

}  // namespace vasa
