#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sgg/errors.hpp"

namespace sgg {

// Axis-aligned rectangle in continuous pixel coordinates, y pointing down.
// Closed rectangle, no +1 pixel convention; zero-area boxes are rejected.
struct Box {
  double x1, y1, x2, y2;

  Box(double x1_, double y1_, double x2_, double y2_)
      : x1(x1_), y1(y1_), x2(x2_), y2(y2_) {
    if (!(std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
          std::isfinite(y2)))
      throw GeometryError("box with non-finite coordinate");
    if (!(x1 < x2 && y1 < y2))
      throw GeometryError("degenerate box (" + std::to_string(x1_) + "," +
                          std::to_string(y1_) + "," + std::to_string(x2_) +
                          "," + std::to_string(y2_) + ")");
  }

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
};

inline bool operator==(const Box& a, const Box& b) {
  return a.x1 == b.x1 && a.y1 == b.y1 && a.x2 == b.x2 && a.y2 == b.y2;
}

inline double intersection_area(const Box& a, const Box& b) {
  double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0 || h <= 0) return 0.0;
  return w * h;
}

inline double iou(const Box& a, const Box& b) {
  double inter = intersection_area(a, b);
  if (inter <= 0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

// Minimum box containing both inputs.
inline Box union_box(const Box& a, const Box& b) {
  return Box(std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2),
             std::max(a.y2, b.y2));
}

// inner strictly inside outer (shared edges do not count).
inline bool contains_strict(const Box& outer, const Box& inner) {
  return inner.x1 > outer.x1 && inner.y1 > outer.y1 && inner.x2 < outer.x2 &&
         inner.y2 < outer.y2;
}

struct ScoredBox {
  Box box;
  double score;

  ScoredBox(Box b, double s) : box(b), score(s) {
    if (!(s >= 0.0 && s <= 1.0))
      throw GeometryError("score " + std::to_string(s) + " outside [0,1]");
  }
};

// kept: indices of representatives in sweep order.
// assign: for every input index, the kept index that suppressed it
// (kept items are assigned to themselves).
struct NmsResult {
  std::vector<int> kept;
  std::vector<int> assign;
};

// Greedy descending-score sweep. An item is suppressed by the first kept item
// with iou >= threshold. Score ties break toward the lower input index, so the
// result is deterministic.
inline NmsResult nms(const std::vector<ScoredBox>& items, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ConfigError("nms threshold " + std::to_string(threshold) +
                      " outside (0,1)");
  const int n = static_cast<int>(items.size());
  NmsResult res;
  res.assign.assign(n, -1);
  if (n == 0) return res;

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return items[a].score > items[b].score;
  });

  for (int oi = 0; oi < n; ++oi) {
    int i = order[oi];
    if (res.assign[i] != -1) continue;
    res.kept.push_back(i);
    res.assign[i] = i;
    for (int oj = oi + 1; oj < n; ++oj) {
      int j = order[oj];
      if (res.assign[j] != -1) continue;
      if (iou(items[i].box, items[j].box) >= threshold) res.assign[j] = i;
    }
  }
  return res;
}

}  // namespace sgg
