#pragma once

// Plain-loop re-implementation of the SaDL forward pass and loss, kept
// independent of the tape/Eigen code paths on purpose: nested std::vector
// storage, explicit convolution loops, no im2col, no autodiff. Used as the
// oracle for the per-sample loss checks.

#include <cmath>
#include <vector>

#include "sadl/model.hpp"

namespace oracle {

using sadl::Index;

using Vol = std::vector<std::vector<std::vector<double>>>;  // [C][H][W]

inline Vol make_vol(int c, int h, int w) {
  return Vol(static_cast<std::size_t>(c),
             std::vector<std::vector<double>>(
                 static_cast<std::size_t>(h),
                 std::vector<double>(static_cast<std::size_t>(w), 0.0)));
}

inline std::vector<Vol> normalize_images(
    const std::vector<const sadl::ImageRGB*>& images,
    const std::array<double, 3>& mean, const std::array<double, 3>& std_dev) {
  std::vector<Vol> out;
  for (const sadl::ImageRGB* img : images) {
    Vol v = make_vol(3, img->h, img->w);
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < img->h; ++r)
        for (int col = 0; col < img->w; ++col)
          v[(std::size_t)c][(std::size_t)r][(std::size_t)col] =
              (img->at(c, r, col) - mean[(std::size_t)c]) / std_dev[(std::size_t)c];
    out.push_back(std::move(v));
  }
  return out;
}

// 3x3 stride-2 pad-1 convolution of one sample, kernel [Cout,Cin,3,3] flat.
inline Vol conv3x3s2(const Vol& in, const sadl::Tensor& kernel) {
  int cin = (int)in.size(), h = (int)in[0].size(), w = (int)in[0][0].size();
  int cout = (int)kernel.shape[0];
  int oh = (h + 2 - 3) / 2 + 1, ow = (w + 2 - 3) / 2 + 1;
  Vol out = make_vol(cout, oh, ow);
  for (int co = 0; co < cout; ++co)
    for (int r = 0; r < oh; ++r)
      for (int c = 0; c < ow; ++c) {
        double acc = 0;
        for (int ci = 0; ci < cin; ++ci)
          for (int kr = 0; kr < 3; ++kr)
            for (int kc = 0; kc < 3; ++kc) {
              int ir = r * 2 - 1 + kr, ic = c * 2 - 1 + kc;
              if (ir < 0 || ir >= h || ic < 0 || ic >= w) continue;
              acc += kernel.data[((co * cin + ci) * 3 + kr) * 3 + kc] *
                     in[(std::size_t)ci][(std::size_t)ir][(std::size_t)ic];
            }
        out[(std::size_t)co][(std::size_t)r][(std::size_t)c] = acc;
      }
  return out;
}

inline Vol conv1x1(const Vol& in, const sadl::Tensor& kernel) {
  int cin = (int)in.size(), h = (int)in[0].size(), w = (int)in[0][0].size();
  int cout = (int)kernel.shape[0];
  Vol out = make_vol(cout, h, w);
  for (int co = 0; co < cout; ++co)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        double acc = 0;
        for (int ci = 0; ci < cin; ++ci)
          acc += kernel.data[co * cin + ci] *
                 in[(std::size_t)ci][(std::size_t)r][(std::size_t)c];
        out[(std::size_t)co][(std::size_t)r][(std::size_t)c] = acc;
      }
  return out;
}

// Per-channel batch norm over all samples and positions, then ReLU.
inline void bn_relu_batch(std::vector<Vol>& batch, const sadl::Tensor& gamma,
                          const sadl::Tensor& beta, double eps = 1e-5) {
  int cn = (int)batch[0].size(), h = (int)batch[0][0].size(),
      w = (int)batch[0][0][0].size();
  for (int c = 0; c < cn; ++c) {
    double mu = 0, count = 0;
    for (const Vol& v : batch)
      for (int r = 0; r < h; ++r)
        for (int col = 0; col < w; ++col) {
          mu += v[(std::size_t)c][(std::size_t)r][(std::size_t)col];
          count += 1;
        }
    mu /= count;
    double var = 0;
    for (const Vol& v : batch)
      for (int r = 0; r < h; ++r)
        for (int col = 0; col < w; ++col) {
          double d = v[(std::size_t)c][(std::size_t)r][(std::size_t)col] - mu;
          var += d * d;
        }
    var /= count;
    double inv = 1.0 / std::sqrt(var + eps);
    for (Vol& v : batch)
      for (int r = 0; r < h; ++r)
        for (int col = 0; col < w; ++col) {
          double xhat =
              (v[(std::size_t)c][(std::size_t)r][(std::size_t)col] - mu) * inv;
          double y = gamma.data[c] * xhat + beta.data[c];
          v[(std::size_t)c][(std::size_t)r][(std::size_t)col] = y > 0 ? y : 0;
        }
  }
}

inline Vol upsample2x(const Vol& in) {
  int cn = (int)in.size(), h = (int)in[0].size(), w = (int)in[0][0].size();
  Vol out = make_vol(cn, 2 * h, 2 * w);
  for (int c = 0; c < cn; ++c)
    for (int r = 0; r < 2 * h; ++r)
      for (int col = 0; col < 2 * w; ++col)
        out[(std::size_t)c][(std::size_t)r][(std::size_t)col] =
            in[(std::size_t)c][(std::size_t)(r / 2)][(std::size_t)(col / 2)];
  return out;
}

inline std::vector<Vol> encoder(const std::vector<Vol>& imgs,
                                const sadl::EncoderParams& e) {
  std::vector<Vol> s0, s1, s2, s3;
  for (const Vol& v : imgs) s0.push_back(conv3x3s2(v, e.stem.kernel));
  bn_relu_batch(s0, e.stem.gamma, e.stem.beta);
  for (const Vol& v : s0) s1.push_back(conv3x3s2(v, e.stage1.kernel));
  bn_relu_batch(s1, e.stage1.gamma, e.stage1.beta);
  for (const Vol& v : s1) s2.push_back(conv3x3s2(v, e.stage2.kernel));
  bn_relu_batch(s2, e.stage2.gamma, e.stage2.beta);
  for (const Vol& v : s2) s3.push_back(conv3x3s2(v, e.stage3.kernel));
  bn_relu_batch(s3, e.stage3.gamma, e.stage3.beta);

  std::vector<Vol> out;
  for (std::size_t b = 0; b < imgs.size(); ++b) {
    Vol m3 = conv1x1(s3[b], e.lat3);
    Vol m2 = conv1x1(s2[b], e.lat2);
    Vol up3 = upsample2x(m3);
    for (std::size_t c = 0; c < m2.size(); ++c)
      for (std::size_t r = 0; r < m2[0].size(); ++r)
        for (std::size_t col = 0; col < m2[0][0].size(); ++col)
          m2[c][r][col] += up3[c][r][col];
    Vol m1 = conv1x1(s1[b], e.lat1);
    Vol up2 = upsample2x(m2);
    for (std::size_t c = 0; c < m1.size(); ++c)
      for (std::size_t r = 0; r < m1[0].size(); ++r)
        for (std::size_t col = 0; col < m1[0][0].size(); ++col)
          m1[c][r][col] += up2[c][r][col];
    out.push_back(std::move(m1));
  }
  return out;
}

using Rows = std::vector<std::vector<double>>;

// Two linear layers with BN+ReLU between, statistics over all rows.
inline Rows mlp(const Rows& x, const sadl::MlpParams& m, double eps = 1e-5) {
  std::size_t rows = x.size();
  std::size_t in = x[0].size();
  std::size_t hidden = (std::size_t)m.w1.shape[1];
  Rows h(rows, std::vector<double>(hidden, 0.0));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < hidden; ++j) {
      double acc = m.b1.data[(Index)j];
      for (std::size_t i = 0; i < in; ++i)
        acc += x[r][i] * m.w1.data[(Index)(i * hidden + j)];
      h[r][j] = acc;
    }
  if (m.with_bn) {
    for (std::size_t j = 0; j < hidden; ++j) {
      double mu = 0;
      for (std::size_t r = 0; r < rows; ++r) mu += h[r][j];
      mu /= (double)rows;
      double var = 0;
      for (std::size_t r = 0; r < rows; ++r) {
        double d = h[r][j] - mu;
        var += d * d;
      }
      var /= (double)rows;
      double inv = 1.0 / std::sqrt(var + eps);
      for (std::size_t r = 0; r < rows; ++r)
        h[r][j] = m.gamma.data[(Index)j] * ((h[r][j] - mu) * inv) +
                  m.beta.data[(Index)j];
    }
  }
  for (auto& row : h)
    for (double& v : row) v = v > 0 ? v : 0;
  std::size_t out_dim = (std::size_t)m.w2.shape[1];
  Rows out(rows, std::vector<double>(out_dim, 0.0));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < out_dim; ++j) {
      double acc = m.b2.data[(Index)j];
      for (std::size_t i = 0; i < hidden; ++i)
        acc += h[r][i] * m.w2.data[(Index)(i * out_dim + j)];
      out[r][j] = acc;
    }
  return out;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b,
                     double eps = 1e-8) {
  double na = 0, nb = 0, dot = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i] * a[i];
    nb += b[i] * b[i];
    dot += a[i] * b[i];
  }
  return dot / ((std::sqrt(na) + eps) * (std::sqrt(nb) + eps));
}

struct Breakdown {
  double l_sd = 0, l_s1 = 0, l_s2 = 0, total = 0;
};

// Per-sample point geometry in feature coordinates, mirroring Algorithm 2:
// view-3 points are the view-1 foreground points.
struct SamplePointsView {
  std::vector<sadl::Point> v1_bg, v1_fg, v2_bg, v2_fg;
};

inline SamplePointsView map_points_for(const sadl::PreparedSample& s, int ds,
                                       int fh, int fw) {
  SamplePointsView out;
  auto conv = [&](const std::vector<sadl::Point>& pts,
                  const sadl::GeomAugRecord& rec) {
    return sadl::downscale_points(sadl::map_points(pts, rec), ds, fh, fw);
  };
  out.v1_bg = conv(s.points.of_class(1), s.triplet->rec1);
  out.v1_fg = conv(s.points.of_class(2), s.triplet->rec1);
  out.v2_bg = conv(s.points.of_class(1), s.triplet->rec2);
  out.v2_fg = conv(s.points.of_class(2), s.triplet->rec2);
  return out;
}

inline std::vector<double> at(const Vol& v, const sadl::Point& p) {
  std::vector<double> out(v.size());
  for (std::size_t c = 0; c < v.size(); ++c)
    out[c] = v[c][(std::size_t)p.r][(std::size_t)p.c];
  return out;
}

// Full batch objective; requires every sample to carry both classes.
inline Breakdown batch_loss(const std::vector<sadl::PreparedSample>& samples,
                            const sadl::ModelParams& params) {
  std::vector<const sadl::ImageRGB*> v1s, v2s, v3s;
  for (const auto& s : samples) {
    v1s.push_back(&s.triplet->view1);
    v2s.push_back(&s.triplet->view2);
    v3s.push_back(&s.triplet->view3);
  }
  std::vector<Vol> x1 =
      encoder(normalize_images(v1s, params.norm_mean, params.norm_std),
              params.encoder);
  std::vector<Vol> x2 =
      encoder(normalize_images(v2s, params.norm_mean, params.norm_std),
              params.encoder);
  std::vector<Vol> x3 =
      encoder(normalize_images(v3s, params.norm_mean, params.norm_std),
              params.encoder);
  int fh = (int)x1[0][0].size(), fw = (int)x1[0][0][0].size();

  // gather per sample and stack per view (bg rows then fg rows per sample)
  Rows cat1, cat2, cat3;
  std::vector<SamplePointsView> geom;
  for (std::size_t b = 0; b < samples.size(); ++b) {
    SamplePointsView g = map_points_for(samples[b], 4, fh, fw);
    for (const auto& p : g.v1_bg) cat1.push_back(at(x1[b], p));
    for (const auto& p : g.v1_fg) cat1.push_back(at(x1[b], p));
    for (const auto& p : g.v2_bg) cat2.push_back(at(x2[b], p));
    for (const auto& p : g.v2_fg) cat2.push_back(at(x2[b], p));
    for (const auto& p : g.v1_fg) cat3.push_back(at(x3[b], p));
    geom.push_back(std::move(g));
  }
  Rows z1 = mlp(cat1, params.projector), p1 = mlp(z1, params.predictor);
  Rows z2 = mlp(cat2, params.projector), p2 = mlp(z2, params.predictor);
  Rows z3 = mlp(cat3, params.projector), p3 = mlp(z3, params.predictor);

  Breakdown out;
  std::size_t off = 0, off3 = 0;
  for (std::size_t b = 0; b < samples.size(); ++b) {
    const SamplePointsView& g = geom[b];
    std::size_t nbg = g.v1_bg.size(), nfg = g.v1_fg.size();
    double sd = 0;
    for (std::size_t n = 0; n < nfg; ++n) {
      sd += cosine(at(x1[b], g.v1_bg[n]), at(x1[b], g.v1_fg[n])) + 1.0;
      sd += cosine(at(x2[b], g.v2_bg[n]), at(x2[b], g.v2_fg[n])) + 1.0;
    }
    out.l_sd += sd / (2.0 * (double)nfg);

    double s1 = 0;
    for (std::size_t i = 0; i < nbg + nfg; ++i)
      s1 += 1.0 - 0.5 * (cosine(p1[off + i], z2[off + i]) +
                         cosine(p2[off + i], z1[off + i]));
    out.l_s1 += s1 / (double)(nbg + nfg);

    double s2 = 0;
    for (std::size_t n = 0; n < nfg; ++n)
      s2 += 1.0 - 0.5 * (cosine(p1[off + nbg + n], z3[off3 + n]) +
                         cosine(p3[off3 + n], z1[off + nbg + n]));
    out.l_s2 += s2 / (double)nfg;

    off += nbg + nfg;
    off3 += nfg;
  }
  double bsz = (double)samples.size();
  out.l_sd /= bsz;
  out.l_s1 /= bsz;
  out.l_s2 /= bsz;
  out.total = out.l_sd + out.l_s1 + out.l_s2;
  return out;
}

}  // namespace oracle
