#include "rateattack/synthetic.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "rateattack/error.h"

namespace rateattack {

namespace {

using Rng = std::mt19937_64;

double Uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Sum of bilinearly interpolated random lattices, roughly in [-1, 1].
std::vector<double> FractalNoise(std::size_t w, std::size_t h, double cell,
                                 int octaves, Rng& rng) {
  std::vector<double> out(w * h, 0.0);
  double amp = 1.0, norm = 0.0;
  for (int o = 0; o < octaves; ++o) {
    const std::size_t gw = static_cast<std::size_t>(w / cell) + 2;
    const std::size_t gh = static_cast<std::size_t>(h / cell) + 2;
    std::vector<double> grid(gw * gh);
    for (double& g : grid) g = Uniform(rng, -1.0, 1.0);
    for (std::size_t y = 0; y < h; ++y) {
      const double fy = y / cell;
      const auto y0 = static_cast<std::size_t>(fy);
      const double ty = fy - y0;
      for (std::size_t x = 0; x < w; ++x) {
        const double fx = x / cell;
        const auto x0 = static_cast<std::size_t>(fx);
        const double tx = fx - x0;
        const double a = grid[y0 * gw + x0], b = grid[y0 * gw + x0 + 1];
        const double c = grid[(y0 + 1) * gw + x0], d = grid[(y0 + 1) * gw + x0 + 1];
        out[y * w + x] += amp * ((a * (1 - tx) + b * tx) * (1 - ty) +
                                 (c * (1 - tx) + d * tx) * ty);
      }
    }
    norm += amp;
    amp *= 0.55;
    cell = std::max(1.0, cell / 2.0);
  }
  for (double& v : out) v /= norm;
  return out;
}

struct Shape {
  int kind;  // 0 ellipse, 1 rectangle
  double cx, cy, rx, ry, angle;
  std::array<double, 3> color;
  std::array<double, 3> tint;  // colour change along the gradient axis
  int texture;                 // 0 flat, 1 stripes, 2 noise
  double tex_amp, tex_freq, tex_angle;
};

void Blur121(Image& im) {
  const std::size_t w = im.width, h = im.height;
  std::vector<double> tmp(w * h);
  for (std::size_t p = 0; p < 3; ++p) {
    auto plane = im.plane(p);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double l = plane[y * w + (x ? x - 1 : 0)];
        const double r = plane[y * w + std::min(x + 1, w - 1)];
        tmp[y * w + x] = 0.25 * l + 0.5 * plane[y * w + x] + 0.25 * r;
      }
    }
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t up = y ? y - 1 : 0, dn = std::min(y + 1, h - 1);
      for (std::size_t x = 0; x < w; ++x) {
        plane[y * w + x] = 0.25 * tmp[up * w + x] + 0.5 * tmp[y * w + x] +
                           0.25 * tmp[dn * w + x];
      }
    }
  }
}

}  // namespace

Image SyntheticImage(std::uint64_t seed, std::size_t width,
                     std::size_t height) {
  if (width == 0 || height == 0) {
    throw Error(ErrorCode::kInvalidArgument, "synthetic image needs a size");
  }
  Rng rng(seed);
  Image im(width, height);
  const std::size_t n = width * height;

  // Backdrop: vertical two-colour gradient with low-frequency variation.
  std::array<double, 3> top{}, bottom{};
  for (std::size_t p = 0; p < 3; ++p) {
    top[p] = Uniform(rng, 0.3, 0.9);
    bottom[p] = Uniform(rng, 0.1, 0.6);
  }
  const std::vector<double> haze =
      FractalNoise(width, height, 128.0, 4, rng);
  for (std::size_t y = 0; y < height; ++y) {
    const double t = static_cast<double>(y) / (height - 1 + 1e-9);
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t p = 0; p < 3; ++p) {
        im.at(p, y, x) = top[p] * (1 - t) + bottom[p] * t +
                         0.08 * haze[y * width + x];
      }
    }
  }

  // Occluding shapes with radius density ~ r^-3.
  const double r_min = 5.0, r_max = 0.5 * std::min(width, height);
  const double area_scale = static_cast<double>(n) / (768.0 * 512.0);
  const int count = static_cast<int>(
      area_scale * std::uniform_int_distribution<int>(800, 1500)(rng));
  const std::vector<double> grain_tex = FractalNoise(width, height, 6.0, 3, rng);
  for (int s = 0; s < count; ++s) {
    Shape sh;
    sh.kind = Uniform(rng, 0, 1) < 0.7 ? 0 : 1;
    const double u = Uniform(rng, 0, 1);
    const double a = std::pow(r_min, -2.0), b = std::pow(r_max, -2.0);
    const double r = std::pow(a - u * (a - b), -0.5);
    sh.cx = Uniform(rng, -0.1 * width, 1.1 * width);
    sh.cy = Uniform(rng, -0.1 * height, 1.1 * height);
    const double aspect = Uniform(rng, 0.4, 1.0);
    sh.rx = r;
    sh.ry = r * aspect;
    sh.angle = Uniform(rng, 0, std::numbers::pi);
    const double lum = Uniform(rng, 0.05, 0.95);
    for (std::size_t p = 0; p < 3; ++p) {
      sh.color[p] = std::clamp(lum + Uniform(rng, -0.25, 0.25), 0.0, 1.0);
      sh.tint[p] = Uniform(rng, -0.15, 0.15);
    }
    sh.texture = std::uniform_int_distribution<int>(0, 2)(rng);
    sh.tex_amp = Uniform(rng, 0.02, 0.16);
    sh.tex_freq = 2 * std::numbers::pi / Uniform(rng, 3.0, 24.0);
    sh.tex_angle = Uniform(rng, 0, std::numbers::pi);

    const double ca = std::cos(sh.angle), sa = std::sin(sh.angle);
    const double ct = std::cos(sh.tex_angle), st = std::sin(sh.tex_angle);
    const double extent = std::max(sh.rx, sh.ry) + 1;
    const auto x_lo = static_cast<long>(std::max(0.0, std::floor(sh.cx - extent)));
    const auto x_hi = static_cast<long>(std::min<double>(width - 1, std::ceil(sh.cx + extent)));
    const auto y_lo = static_cast<long>(std::max(0.0, std::floor(sh.cy - extent)));
    const auto y_hi = static_cast<long>(std::min<double>(height - 1, std::ceil(sh.cy + extent)));
    for (long y = y_lo; y <= y_hi; ++y) {
      for (long x = x_lo; x <= x_hi; ++x) {
        const double dx = x - sh.cx, dy = y - sh.cy;
        const double lx = (ca * dx + sa * dy) / sh.rx;
        const double ly = (-sa * dx + ca * dy) / sh.ry;
        const bool inside = sh.kind == 0 ? lx * lx + ly * ly <= 1.0
                                         : std::abs(lx) <= 1.0 && std::abs(ly) <= 1.0;
        if (!inside) continue;
        double tex = 0.0;
        if (sh.texture == 1) {
          tex = std::sin(sh.tex_freq * (ct * x + st * y));
        } else if (sh.texture == 2) {
          tex = 2.0 * grain_tex[y * width + x];
        }
        for (std::size_t p = 0; p < 3; ++p) {
          im.at(p, y, x) = sh.color[p] + sh.tint[p] * ly + sh.tex_amp * tex;
        }
      }
    }
  }

  Blur121(im);
  std::normal_distribution<double> grain(0.0, 1.5 / 255.0);
  for (std::size_t i = 0; i < 3 * n; ++i) im.data[i] += grain(rng);
  // Snap to 8-bit levels.
  return FromBytes(width, height, ToBytes(im));
}

std::vector<Image> SyntheticCorpus(std::size_t count, std::uint64_t seed,
                                   std::size_t width, std::size_t height) {
  std::vector<Image> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (i + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    out.push_back(SyntheticImage(z ^ (z >> 31), width, height));
  }
  return out;
}

}  // namespace rateattack
