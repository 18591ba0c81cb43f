#include "fo3d/superpixel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>
#include <utility>

namespace fo3d {

namespace {

double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double lab_f(double t) {
  constexpr double kEps = 216.0 / 24389.0;
  constexpr double kKappa = 24389.0 / 27.0;
  return t > kEps ? std::cbrt(t) : (kKappa * t + 16.0) / 116.0;
}

struct Center {
  double l, a, b, x, y;
};

struct LabImage {
  int width = 0;
  int height = 0;
  std::vector<std::array<double, 3>> px;

  const std::array<double, 3>& at(int x, int y) const {
    return px[static_cast<std::size_t>(y) * width + x];
  }
};

LabImage to_lab(const RgbImage& image) {
  LabImage lab{image.width, image.height, {}};
  lab.px.resize(static_cast<std::size_t>(image.width) * image.height);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const std::uint8_t* p = image.at(x, y);
      lab.px[static_cast<std::size_t>(y) * image.width + x] = srgb_to_lab(p[0], p[1], p[2]);
    }
  }
  return lab;
}

double sq_dist3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  const double dl = a[0] - b[0], da = a[1] - b[1], db = a[2] - b[2];
  return dl * dl + da * da + db * db;
}

double gradient(const LabImage& lab, int x, int y) {
  const int x0 = std::max(x - 1, 0), x1 = std::min(x + 1, lab.width - 1);
  const int y0 = std::max(y - 1, 0), y1 = std::min(y + 1, lab.height - 1);
  return sq_dist3(lab.at(x1, y), lab.at(x0, y)) + sq_dist3(lab.at(x, y1), lab.at(x, y0));
}

}  // namespace

std::array<double, 3> srgb_to_lab(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const double rl = srgb_to_linear(r / 255.0);
  const double gl = srgb_to_linear(g / 255.0);
  const double bl = srgb_to_linear(b / 255.0);
  // sRGB -> XYZ, D65 reference white.
  const double x = (0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl) / 0.95047;
  const double y = (0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl) / 1.00000;
  const double z = (0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl) / 1.08883;
  const double fx = lab_f(x), fy = lab_f(y), fz = lab_f(z);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

std::array<int, 2> slic_grid(int width, int height, int n_segments) {
  // Pick the (cols, rows) grid whose cells are closest to square among grids whose
  // seed count is within 10% (at least 1) of the request; ties prefer the exact
  // count, then more columns.
  const int tolerance = std::max(1, n_segments / 10);
  std::array<int, 2> best{1, 1};
  double best_aspect = std::numeric_limits<double>::infinity();
  int best_diff = std::numeric_limits<int>::max();
  bool best_within = false;
  for (int nx = 1; nx <= std::min(width, n_segments); ++nx) {
    const int ny = std::clamp(static_cast<int>(std::lround(static_cast<double>(n_segments) / nx)),
                              1, height);
    const int diff = std::abs(nx * ny - n_segments);
    const bool within = diff <= tolerance;
    const double aspect =
        std::abs(std::log((static_cast<double>(width) / nx) / (static_cast<double>(height) / ny)));
    bool better;
    if (within != best_within) {
      better = within;
    } else if (!within) {
      better = diff < best_diff;
    } else if (std::abs(aspect - best_aspect) > 1e-12) {
      better = aspect < best_aspect;
    } else {
      better = diff <= best_diff;
    }
    if (better) {
      best = {nx, ny};
      best_aspect = aspect;
      best_diff = diff;
      best_within = within;
    }
  }
  return best;
}

SuperpixelMap slic(const RgbImage& image, const SlicParams& params, SlicTrace* trace) {
  const int w = image.width, h = image.height;
  const long long n_pixels = static_cast<long long>(w) * h;
  if (n_pixels == 0) throw std::invalid_argument("slic: empty image");
  if (params.n_segments < 1 || params.n_segments > n_pixels) {
    throw std::invalid_argument("slic: n_segments must be in [1, W*H]");
  }
  if (params.iterations < 1) throw std::invalid_argument("slic: iterations must be >= 1");

  const LabImage lab = to_lab(image);

  // Seeds on a regular grid, each moved to the lowest-gradient pixel of its 3x3 window.
  const auto [nx, ny] = slic_grid(w, h, params.n_segments);
  std::vector<Center> centers;
  centers.reserve(static_cast<std::size_t>(nx) * ny);
  const double step_x = static_cast<double>(w) / nx;
  const double step_y = static_cast<double>(h) / ny;
  for (int gy = 0; gy < ny; ++gy) {
    for (int gx = 0; gx < nx; ++gx) {
      int sx = std::min(static_cast<int>((gx + 0.5) * step_x), w - 1);
      int sy = std::min(static_cast<int>((gy + 0.5) * step_y), h - 1);
      double g_best = gradient(lab, sx, sy);
      int bx = sx, by = sy;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int x = sx + dx, y = sy + dy;
          if (x < 0 || y < 0 || x >= w || y >= h) continue;
          const double g = gradient(lab, x, y);
          if (g < g_best) {
            g_best = g;
            bx = x;
            by = y;
          }
        }
      }
      const auto& c = lab.at(bx, by);
      centers.push_back({c[0], c[1], c[2], static_cast<double>(bx), static_cast<double>(by)});
    }
  }
  const int k = static_cast<int>(centers.size());
  const double s = std::sqrt(static_cast<double>(n_pixels) / k);
  const double spatial = (params.compactness / s) * (params.compactness / s);
  const int radius = static_cast<int>(std::ceil(s));

  auto distance = [&](const Center& c, int x, int y) {
    const auto& p = lab.at(x, y);
    const double dl = p[0] - c.l, da = p[1] - c.a, db = p[2] - c.b;
    const double dx = x - c.x, dy = y - c.y;
    return dl * dl + da * da + db * db + spatial * (dx * dx + dy * dy);
  };

  std::vector<std::int32_t> labels(static_cast<std::size_t>(n_pixels), -1);
  std::vector<double> best(static_cast<std::size_t>(n_pixels));

  if (trace) {
    trace->seeds = k;
    trace->objective.clear();
  }

  for (int iter = 0; iter < params.iterations; ++iter) {
    // Assignment. A pixel's current center always stays a candidate, so no pixel's
    // distance can grow when centers move outside the search window.
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        best[i] = labels[i] >= 0 ? distance(centers[static_cast<std::size_t>(labels[i])], x, y)
                                 : std::numeric_limits<double>::infinity();
      }
    }
    for (int ci = 0; ci < k; ++ci) {
      const Center& c = centers[static_cast<std::size_t>(ci)];
      const int cx = static_cast<int>(std::lround(c.x)), cy = static_cast<int>(std::lround(c.y));
      const int x0 = std::max(cx - radius, 0), x1 = std::min(cx + radius, w - 1);
      const int y0 = std::max(cy - radius, 0), y1 = std::min(cy + radius, h - 1);
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * w + x;
          const double d = distance(c, x, y);
          if (d < best[i]) {
            best[i] = d;
            labels[i] = ci;
          }
        }
      }
    }
    // Pixels no window reached on the first pass take the nearest center.
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (labels[i] >= 0) continue;
        for (int ci = 0; ci < k; ++ci) {
          const double d = distance(centers[static_cast<std::size_t>(ci)], x, y);
          if (d < best[i]) {
            best[i] = d;
            labels[i] = ci;
          }
        }
      }
    }

    // Update: each center moves to the mean of its members; empty centers stay put.
    std::vector<std::array<double, 6>> acc(static_cast<std::size_t>(k), {0, 0, 0, 0, 0, 0});
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        auto& a = acc[static_cast<std::size_t>(labels[i])];
        const auto& p = lab.px[i];
        a[0] += p[0];
        a[1] += p[1];
        a[2] += p[2];
        a[3] += x;
        a[4] += y;
        a[5] += 1.0;
      }
    }
    for (int ci = 0; ci < k; ++ci) {
      const auto& a = acc[static_cast<std::size_t>(ci)];
      if (a[5] == 0.0) continue;
      centers[static_cast<std::size_t>(ci)] = {a[0] / a[5], a[1] / a[5], a[2] / a[5], a[3] / a[5],
                                               a[4] / a[5]};
    }

    if (trace) {
      double total = 0.0;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * w + x;
          total += distance(centers[static_cast<std::size_t>(labels[i])], x, y);
        }
      }
      trace->objective.push_back(total);
    }
  }

  return enforce_connectivity(labels, w, h, k);
}

SuperpixelMap enforce_connectivity(const std::vector<std::int32_t>& labels, int width, int height,
                                   int n_expected) {
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (labels.size() != n || n == 0) {
    throw std::invalid_argument("enforce_connectivity: label count does not match W*H");
  }

  // 4-connected components of equal labels, numbered in raster order of first pixel.
  std::vector<std::int32_t> comp(n, -1);
  std::vector<std::int32_t> comp_label;
  std::vector<std::vector<std::size_t>> comp_pixels;
  std::vector<std::size_t> queue;
  for (std::size_t start = 0; start < n; ++start) {
    if (comp[start] >= 0) continue;
    const auto id = static_cast<std::int32_t>(comp_label.size());
    comp_label.push_back(labels[start]);
    comp_pixels.emplace_back();
    auto& pixels = comp_pixels.back();
    comp[start] = id;
    queue.assign(1, start);
    for (std::size_t qi = 0; qi < queue.size(); ++qi) {
      const std::size_t p = queue[qi];
      pixels.push_back(p);
      const int x = static_cast<int>(p % static_cast<std::size_t>(width));
      const int y = static_cast<int>(p / static_cast<std::size_t>(width));
      const std::size_t nbrs[4] = {p - 1, p + 1, p - static_cast<std::size_t>(width),
                                   p + static_cast<std::size_t>(width)};
      const bool ok[4] = {x > 0, x + 1 < width, y > 0, y + 1 < height};
      for (int k = 0; k < 4; ++k) {
        if (!ok[k]) continue;
        const std::size_t q = nbrs[k];
        if (comp[q] < 0 && labels[q] == labels[start]) {
          comp[q] = id;
          queue.push_back(q);
        }
      }
    }
  }

  if (n_expected <= 0) {
    std::vector<std::int32_t> distinct(labels);
    std::sort(distinct.begin(), distinct.end());
    n_expected = static_cast<int>(std::unique(distinct.begin(), distinct.end()) - distinct.begin());
  }
  const std::size_t min_size = n / static_cast<std::size_t>(n_expected) / 4;

  const std::size_t n_comp = comp_label.size();
  std::vector<std::int32_t> parent(n_comp);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&parent](std::int32_t c) {
    while (parent[static_cast<std::size_t>(c)] != c) {
      parent[static_cast<std::size_t>(c)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(c)])];
      c = parent[static_cast<std::size_t>(c)];
    }
    return c;
  };

  // Repeatedly absorb the smallest undersized component into its largest neighbour.
  std::set<std::pair<std::size_t, std::int32_t>> alive;
  for (std::size_t c = 0; c < n_comp; ++c) alive.insert({comp_pixels[c].size(), static_cast<std::int32_t>(c)});
  while (alive.size() > 1 && alive.begin()->first < min_size) {
    const std::int32_t c = alive.begin()->second;
    std::int32_t target = -1;
    std::size_t target_size = 0;
    for (std::size_t p : comp_pixels[static_cast<std::size_t>(c)]) {
      const int x = static_cast<int>(p % static_cast<std::size_t>(width));
      const int y = static_cast<int>(p / static_cast<std::size_t>(width));
      const std::size_t nbrs[4] = {p - 1, p + 1, p - static_cast<std::size_t>(width),
                                   p + static_cast<std::size_t>(width)};
      const bool ok[4] = {x > 0, x + 1 < width, y > 0, y + 1 < height};
      for (int k = 0; k < 4; ++k) {
        if (!ok[k]) continue;
        const std::int32_t r = find(comp[nbrs[k]]);
        if (r == c) continue;
        const std::size_t sz = comp_pixels[static_cast<std::size_t>(r)].size();
        if (target < 0 || sz > target_size || (sz == target_size && r < target)) {
          target = r;
          target_size = sz;
        }
      }
    }
    if (target < 0) break;
    alive.erase({comp_pixels[static_cast<std::size_t>(c)].size(), c});
    alive.erase({target_size, target});
    auto& dst = comp_pixels[static_cast<std::size_t>(target)];
    auto& src = comp_pixels[static_cast<std::size_t>(c)];
    dst.insert(dst.end(), src.begin(), src.end());
    src.clear();
    src.shrink_to_fit();
    parent[static_cast<std::size_t>(c)] = target;
    alive.insert({dst.size(), target});
  }

  // Compact relabel ordered by (input label, first pixel).
  std::vector<std::int32_t> roots;
  for (const auto& [size, c] : alive) roots.push_back(c);
  std::vector<std::size_t> first(n_comp, n);
  for (std::int32_t r : roots) {
    const auto& px = comp_pixels[static_cast<std::size_t>(r)];
    first[static_cast<std::size_t>(r)] = *std::min_element(px.begin(), px.end());
  }
  std::sort(roots.begin(), roots.end(), [&](std::int32_t a, std::int32_t b) {
    const auto la = comp_label[static_cast<std::size_t>(a)], lb = comp_label[static_cast<std::size_t>(b)];
    if (la != lb) return la < lb;
    return first[static_cast<std::size_t>(a)] < first[static_cast<std::size_t>(b)];
  });
  std::vector<std::int32_t> new_label(n_comp, -1);
  for (std::size_t i = 0; i < roots.size(); ++i) {
    new_label[static_cast<std::size_t>(roots[i])] = static_cast<std::int32_t>(i);
  }

  SuperpixelMap out;
  out.width = width;
  out.height = height;
  out.labels.resize(n);
  for (std::size_t p = 0; p < n; ++p) out.labels[p] = new_label[static_cast<std::size_t>(find(comp[p]))];
  compute_centroids(out);
  return out;
}

void compute_centroids(SuperpixelMap& map) {
  const std::int32_t max_label =
      map.labels.empty() ? -1 : *std::max_element(map.labels.begin(), map.labels.end());
  map.n_segments = max_label + 1;
  std::vector<std::array<double, 3>> acc(static_cast<std::size_t>(map.n_segments), {0, 0, 0});
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      const std::int32_t l = map.at(x, y);
      if (l < 0) throw std::invalid_argument("compute_centroids: negative label");
      auto& a = acc[static_cast<std::size_t>(l)];
      a[0] += x;
      a[1] += y;
      a[2] += 1.0;
    }
  }
  map.centroids.resize(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    if (acc[i][2] == 0.0) throw std::invalid_argument("compute_centroids: label gap");
    map.centroids[i] = {static_cast<float>(acc[i][0] / acc[i][2]),
                        static_cast<float>(acc[i][1] / acc[i][2])};
  }
}

}  // namespace fo3d
