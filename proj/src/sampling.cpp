#include "sadl/sampling.hpp"

#include <algorithm>

namespace sadl {

BBox reverse_geom(const GeomAugRecord& rec) {
  return BBox{rec.u, rec.v, rec.w, rec.h};
}

std::optional<BBox> overlap(const BBox& a, const BBox& b) {
  int u = std::max(a.u, b.u);
  int v = std::max(a.v, b.v);
  int r = std::min(a.u + a.w, b.u + b.w);
  int d = std::min(a.v + a.h, b.v + b.h);
  if (r <= u || d <= v) return std::nullopt;
  return BBox{u, v, r - u, d - v};
}

PointSet sample_points(const Mask& mask, const BBox& bb, int n_points,
                       Rng& rng) {
  if (bb.w <= 0 || bb.h <= 0) throw Error("sample_points: empty box");
  if (n_points < 1) throw Error("sample_points: N must be >= 1");
  std::array<std::vector<Point>, 2> candidates;
  for (int r = bb.v; r < bb.v + bb.h; ++r)
    for (int c = bb.u; c < bb.u + bb.w; ++c)
      candidates[mask.at(r, c) ? 1 : 0].push_back(Point{r, c});

  PointSet out;
  for (int k = 1; k <= 2; ++k) {
    const auto& pool = candidates[static_cast<std::size_t>(k - 1)];
    if (pool.empty()) throw ClassAbsentError(k);
    auto& dst = out.of_class(k);
    dst.reserve(static_cast<std::size_t>(n_points));
    for (int i = 0; i < n_points; ++i)
      dst.push_back(pool[static_cast<std::size_t>(
          rng.uniform_int(static_cast<int>(pool.size())))]);
  }
  return out;
}

std::vector<Point> map_points(const std::vector<Point>& pts,
                              const GeomAugRecord& rec) {
  std::vector<Point> out;
  out.reserve(pts.size());
  for (const Point& p : pts) {
    int rel_r = p.r - rec.v;
    int rel_c = p.c - rec.u;
    if (rel_r < 0 || rel_r >= rec.h || rel_c < 0 || rel_c >= rec.w)
      throw PointOutsideCropError("map_points: point (" + std::to_string(p.r) +
                                  "," + std::to_string(p.c) +
                                  ") outside crop window");
    int vr = static_cast<int>(static_cast<long>(rel_r) * rec.out_h / rec.h);
    int vc = static_cast<int>(static_cast<long>(rel_c) * rec.out_w / rec.w);
    if (rec.vflip) vr = rec.out_h - 1 - vr;
    if (rec.hflip) vc = rec.out_w - 1 - vc;
    out.push_back(Point{vr, vc});
  }
  return out;
}

std::vector<Point> downscale_points(const std::vector<Point>& view_pts, int ds,
                                    int feat_h, int feat_w) {
  if (ds < 1) throw Error("downscale_points: ds must be >= 1");
  std::vector<Point> out;
  out.reserve(view_pts.size());
  for (const Point& p : view_pts)
    out.push_back(Point{std::clamp(p.r / ds, 0, feat_h - 1),
                        std::clamp(p.c / ds, 0, feat_w - 1)});
  return out;
}

std::vector<std::pair<Index, Index>> to_coords(const std::vector<Point>& pts) {
  std::vector<std::pair<Index, Index>> out;
  out.reserve(pts.size());
  for (const Point& p : pts) out.emplace_back(p.r, p.c);
  return out;
}

Mask downscale_mask_majority(const Mask& view_mask, int ds) {
  if (ds < 1) throw Error("downscale_mask_majority: ds must be >= 1");
  int fh = view_mask.h / ds, fw = view_mask.w / ds;
  Mask out(fh, fw);
  for (int r = 0; r < fh; ++r)
    for (int c = 0; c < fw; ++c) {
      int fg = 0, total = 0;
      for (int dr = 0; dr < ds; ++dr)
        for (int dc = 0; dc < ds; ++dc) {
          fg += view_mask.at(r * ds + dr, c * ds + dc);
          ++total;
        }
      out.at(r, c) = 2 * fg > total ? 1 : 0;
    }
  return out;
}

TensorT<double> masked_pool(Tape& tape, const TensorT<double>& feat_chw,
                            const Mask& view_mask, int class_k, int ds) {
  if (feat_chw.rank() != 3)
    throw ShapeError("masked_pool: feature map must be [C,H,W]");
  if (class_k != 1 && class_k != 2)
    throw Error("masked_pool: class_k must be 1 or 2");
  Mask down = downscale_mask_majority(view_mask, ds);
  if (down.h != feat_chw.shape[1] || down.w != feat_chw.shape[2])
    throw ShapeError("masked_pool: downscaled mask does not match feature map");
  std::vector<std::pair<Index, Index>> cells;
  for (int r = 0; r < down.h; ++r)
    for (int c = 0; c < down.w; ++c)
      if (down.at(r, c) == class_k - 1) cells.emplace_back(r, c);
  if (cells.empty())
    throw EmptyRegionError("masked_pool: no cell of class " +
                           std::to_string(class_k));
  return pool_cells(tape, feat_chw, cells);
}

}  // namespace sadl
