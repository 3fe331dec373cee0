#include "hoisplat/losses.hpp"

#include <cmath>

namespace hoi {

namespace {

inline double sign(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

void check_dims(const ImageRgb& a, int w, int h, const char* name) {
  if (!a.same_dims(w, h)) throw ShapeMismatch(std::string(name) + ": dims mismatch");
}

// One masked L1 term: target = frame * target_mask, compared against
// render * compare_mask, averaged over pixels where compare_mask = 1.
double masked_l1(const ImageRgb& frame, const ImageRgb& render, const ImageGray* target_mask,
                 const ImageGray* compare_mask, ImageRgb* grad) {
  double sum = 0.0;
  long count = 0;
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      const double cm = compare_mask ? *compare_mask->at(x, y) : 1.0;
      if (cm == 0.0) continue;
      const double tm = target_mask ? *target_mask->at(x, y) : 1.0;
      ++count;
      for (int c = 0; c < 3; ++c) {
        const double diff = frame.at(x, y)[c] * tm - render.at(x, y)[c];
        sum += std::abs(diff);
        if (grad) grad->at(x, y)[c] = -sign(diff);
      }
    }
  }
  if (count == 0) return 0.0;
  const double norm = 1.0 / (3.0 * count);
  if (grad)
    for (double& v : grad->data) v *= norm;
  return sum * norm;
}

}  // namespace

OcclusionL1 occlusion_l1(const ImageRgb& frame, const MaskPair& masks,
                         const ImageRgb& render_h, const ImageRgb& render_o,
                         const ImageRgb& render_a, ImageRgb* grad_h, ImageRgb* grad_o,
                         ImageRgb* grad_a) {
  const int w = frame.width, h = frame.height;
  check_dims(render_h, w, h, "render_h");
  check_dims(render_o, w, h, "render_o");
  check_dims(render_a, w, h, "render_a");
  if (!masks.human.same_dims(w, h) || !masks.object.same_dims(w, h))
    throw ShapeMismatch("masks: dims mismatch");

  // L_H compares where the object is absent; L_O where the human is absent.
  ImageGray not_o(w, h), not_h(w, h), h_not_o(w, h), o_not_h(w, h), uni(w, h);
  for (size_t i = 0; i < not_o.data.size(); ++i) {
    const double hm = masks.human.data[i], om = masks.object.data[i];
    not_o.data[i] = 1.0 - om;
    not_h.data[i] = 1.0 - hm;
    h_not_o.data[i] = hm * (1.0 - om);
    o_not_h.data[i] = om * (1.0 - hm);
    uni.data[i] = std::max(hm, om);  // union, not clipped sum
  }
  if (grad_h) *grad_h = ImageRgb(w, h);
  if (grad_o) *grad_o = ImageRgb(w, h);
  if (grad_a) *grad_a = ImageRgb(w, h);

  OcclusionL1 out;
  out.human = masked_l1(frame, render_h, &h_not_o, &not_o, grad_h);
  out.object = masked_l1(frame, render_o, &o_not_h, &not_h, grad_o);
  out.joint = masked_l1(frame, render_a, &uni, nullptr, grad_a);
  return out;
}

double gradient_perceptual(const ImageRgb& target, const ImageRgb& render,
                           const ImageGray* valid, ImageRgb* grad_render) {
  const int w = target.width, h = target.height;
  check_dims(render, w, h, "render");
  if (valid && !valid->same_dims(w, h)) throw ShapeMismatch("valid: dims mismatch");
  if (grad_render) *grad_render = ImageRgb(w, h);

  double sum = 0.0;
  long count = 0;
  auto ok = [&](int x, int y) { return !valid || *valid->at(x, y) != 0.0; };
  auto accumulate = [&](int x0, int y0, int x1, int y1) {
    if (!ok(x0, y0) || !ok(x1, y1)) return;
    ++count;
    for (int c = 0; c < 3; ++c) {
      const double gt = target.at(x1, y1)[c] - target.at(x0, y0)[c];
      const double gr = render.at(x1, y1)[c] - render.at(x0, y0)[c];
      sum += std::abs(gt - gr);
      if (grad_render) {
        const double s = -sign(gt - gr);
        grad_render->at(x1, y1)[c] += s;
        grad_render->at(x0, y0)[c] -= s;
      }
    }
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x + 1 < w; ++x) accumulate(x, y, x + 1, y);
  for (int y = 0; y + 1 < h; ++y)
    for (int x = 0; x < w; ++x) accumulate(x, y, x, y + 1);

  if (count == 0) return 0.0;
  const double norm = 1.0 / (3.0 * count);
  if (grad_render)
    for (double& v : grad_render->data) v *= norm;
  return sum * norm;
}

double skinning_regularizer(const MatX& predicted, const MatX& reference, MatX* grad) {
  if (predicted.rows() != reference.rows() || predicted.cols() != reference.cols())
    throw ShapeMismatch("skinning weights: dims mismatch");
  const MatX diff = predicted - reference;
  const double denom = double(predicted.rows()) * double(predicted.cols());
  if (grad) *grad = 2.0 * diff / denom;
  return diff.squaredNorm() / denom;
}

double psnr(const ImageRgb& a, const ImageRgb& b) {
  check_dims(b, a.width, a.height, "psnr");
  double mse = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= double(a.data.size());
  if (mse == 0.0) return kPsnrInfinity;
  return 10.0 * std::log10(1.0 / mse);
}

double psnr_masked(const ImageRgb& a, const ImageRgb& b, const ImageGray& mask) {
  check_dims(b, a.width, a.height, "psnr_masked");
  double mse = 0.0;
  long count = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (*mask.at(x, y) <= 0.5) continue;
      ++count;
      for (int c = 0; c < 3; ++c) {
        const double d = a.at(x, y)[c] - b.at(x, y)[c];
        mse += d * d;
      }
    }
  if (count == 0) return kPsnrInfinity;
  mse /= double(count) * 3.0;
  if (mse == 0.0) return kPsnrInfinity;
  return 10.0 * std::log10(1.0 / mse);
}

namespace {

// Separable gaussian blur with an 11-tap sigma-1.5 kernel, zero handling at
// borders by kernel renormalization.
ImageGray blur(const ImageGray& im) {
  static const int R = 5;
  static std::vector<double> kernel = [] {
    std::vector<double> k(2 * R + 1);
    double s = 0;
    for (int i = -R; i <= R; ++i) s += k[i + R] = std::exp(-0.5 * i * i / (1.5 * 1.5));
    for (auto& v : k) v /= s;
    return k;
  }();
  ImageGray tmp(im.width, im.height), out(im.width, im.height);
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x) {
      double s = 0, wsum = 0;
      for (int i = -R; i <= R; ++i) {
        const int xx = x + i;
        if (xx < 0 || xx >= im.width) continue;
        s += kernel[i + R] * *im.at(xx, y);
        wsum += kernel[i + R];
      }
      *tmp.at(x, y) = s / wsum;
    }
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x) {
      double s = 0, wsum = 0;
      for (int i = -R; i <= R; ++i) {
        const int yy = y + i;
        if (yy < 0 || yy >= im.height) continue;
        s += kernel[i + R] * *tmp.at(x, yy);
        wsum += kernel[i + R];
      }
      *out.at(x, y) = s / wsum;
    }
  return out;
}

}  // namespace

double ssim(const ImageRgb& a, const ImageRgb& b) {
  check_dims(b, a.width, a.height, "ssim");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    ImageGray xa(a.width, a.height), xb(a.width, a.height);
    ImageGray xaa(a.width, a.height), xbb(a.width, a.height), xab(a.width, a.height);
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x) {
        const double va = a.at(x, y)[c], vb = b.at(x, y)[c];
        *xa.at(x, y) = va;
        *xb.at(x, y) = vb;
        *xaa.at(x, y) = va * va;
        *xbb.at(x, y) = vb * vb;
        *xab.at(x, y) = va * vb;
      }
    const ImageGray mu_a = blur(xa), mu_b = blur(xb);
    const ImageGray m_aa = blur(xaa), m_bb = blur(xbb), m_ab = blur(xab);
    double s = 0;
    for (size_t i = 0; i < mu_a.data.size(); ++i) {
      const double ma = mu_a.data[i], mb = mu_b.data[i];
      const double va = m_aa.data[i] - ma * ma;
      const double vb = m_bb.data[i] - mb * mb;
      const double cov = m_ab.data[i] - ma * mb;
      s += ((2 * ma * mb + c1) * (2 * cov + c2)) /
           ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total += s / double(mu_a.data.size());
  }
  return total / 3.0;
}

}  // namespace hoi
