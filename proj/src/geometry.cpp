#include "plaindet/geometry.hpp"

#include <algorithm>

#include "plaindet/errors.hpp"

namespace plaindet {

namespace {

struct Corners {
  double x1, y1, x2, y2;
  double area() const { return (x2 - x1) * (y2 - y1); }
};

Corners to_corners(const Box& b) {
  return {b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2};
}

double intersection(const Corners& a, const Corners& b) {
  double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

}  // namespace

double box_iou(const Box& a, const Box& b) {
  Corners ca = to_corners(a), cb = to_corners(b);
  double inter = intersection(ca, cb);
  double uni = ca.area() + cb.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const Box& a, const Box& b) {
  if (a.w <= 0.0 || a.h <= 0.0 || b.w <= 0.0 || b.h <= 0.0)
    throw Error::invalid_box("giou: boxes must have positive width and height");
  Corners ca = to_corners(a), cb = to_corners(b);
  double inter = intersection(ca, cb);
  double uni = ca.area() + cb.area() - inter;
  double iou = inter / uni;
  double ex1 = std::min(ca.x1, cb.x1), ey1 = std::min(ca.y1, cb.y1);
  double ex2 = std::max(ca.x2, cb.x2), ey2 = std::max(ca.y2, cb.y2);
  double enclosing = (ex2 - ex1) * (ey2 - ey1);
  return iou - (enclosing - uni) / enclosing;
}

}  // namespace plaindet
