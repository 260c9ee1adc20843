#include "haru/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <unordered_map>

#include "haru/png_io.hpp"

namespace haru {

BinaryMap boundary_pixels(const InstanceMap& instances) {
  const long h = static_cast<long>(instances.height), w = static_cast<long>(instances.width);
  BinaryMap out(instances.height, instances.width, 0);
  for (long r = 0; r < h; ++r) {
    for (long c = 0; c < w; ++c) {
      const std::int32_t id = instances(r, c);
      if (id <= 0) continue;
      bool border = false;
      for (long dy = -1; dy <= 1 && !border; ++dy) {
        for (long dx = -1; dx <= 1 && !border; ++dx) {
          const long y = r + dy, x = c + dx;
          if (y >= 0 && x >= 0 && y < h && x < w && instances(y, x) != id) border = true;
        }
      }
      out(r, c) = border ? 1 : 0;
    }
  }
  return out;
}

BinaryMap dilate(const BinaryMap& b, int iterations) {
  BinaryMap cur = b;
  const long h = static_cast<long>(b.height), w = static_cast<long>(b.width);
  for (int it = 0; it < iterations; ++it) {
    BinaryMap next(b.height, b.width, 0);
    for (long r = 0; r < h; ++r) {
      for (long c = 0; c < w; ++c) {
        if (!cur(r, c)) continue;
        for (long y = std::max(0L, r - 1); y <= std::min(h - 1, r + 1); ++y) {
          for (long x = std::max(0L, c - 1); x <= std::min(w - 1, c + 1); ++x) next(y, x) = 1;
        }
      }
    }
    cur = std::move(next);
  }
  return cur;
}

LabelPair derive_targets(const InstanceMap& instances, int edge_width) {
  if (edge_width < 1) throw ConfigError("derive_targets: edge_width must be >= 1");
  return LabelPair{foreground(instances), dilate(boundary_pixels(instances), edge_width)};
}

InstanceMap relabel_sequential(const InstanceMap& m) {
  InstanceMap out(m.height, m.width, 0);
  std::unordered_map<std::int32_t, std::int32_t> remap;
  std::int32_t next = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const std::int32_t v = m.data[i];
    if (v <= 0) continue;
    auto [it, inserted] = remap.emplace(v, next + 1);
    if (inserted) ++next;
    out.data[i] = it->second;
  }
  return out;
}

// ---------------------------------------------------------------------------

AugmentParams draw_augment(Rng& rng, const AugmentOptions& options) {
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> turns(0, 3);
  AugmentParams p;
  p.hflip = coin(rng);
  p.vflip = coin(rng);
  p.quarter_turns = turns(rng);
  if (options.free_angle) {
    std::uniform_real_distribution<double> angle(-options.max_angle_deg, options.max_angle_deg);
    p.angle_deg = angle(rng);
  }
  return p;
}

namespace {

// Generic pixel remap: out(r, c) = in(src(r, c)).
template <typename F>
Sample remap(const Sample& s, std::size_t out_h, std::size_t out_w, F src) {
  Sample out;
  out.id = s.id;
  out.image = Image(out_h, out_w, s.image.channels);
  out.instances = InstanceMap(out_h, out_w);
  for (std::size_t r = 0; r < out_h; ++r) {
    for (std::size_t c = 0; c < out_w; ++c) {
      auto [sr, sc] = src(r, c);
      out.instances(r, c) = s.instances(sr, sc);
      for (std::size_t ch = 0; ch < s.image.channels; ++ch) out.image.at(r, c, ch) = s.image.at(sr, sc, ch);
    }
  }
  return out;
}

long reflect(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

Sample rotate_free(const Sample& s, double angle_deg) {
  const std::size_t h = s.image.height, w = s.image.width;
  const double th = angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(th), sn = std::sin(th);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
  Sample out;
  out.id = s.id;
  out.image = Image(h, w, s.image.channels);
  out.instances = InstanceMap(h, w, 0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(c) - cx;
      // inverse map of a counter-clockwise turn (rows point down)
      const double sy = cy + dy * cs + dx * sn;
      const double sx = cx - dy * sn + dx * cs;
      const long ny = std::lround(sy), nx = std::lround(sx);
      if (ny >= 0 && nx >= 0 && ny < static_cast<long>(h) && nx < static_cast<long>(w)) {
        out.instances(r, c) = s.instances(ny, nx);
      }
      const long y0 = static_cast<long>(std::floor(sy)), x0 = static_cast<long>(std::floor(sx));
      const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
      const long ya = reflect(y0, static_cast<long>(h)), yb = reflect(y0 + 1, static_cast<long>(h));
      const long xa = reflect(x0, static_cast<long>(w)), xb = reflect(x0 + 1, static_cast<long>(w));
      for (std::size_t ch = 0; ch < s.image.channels; ++ch) {
        const double top = s.image.at(ya, xa, ch) * (1 - fx) + s.image.at(ya, xb, ch) * fx;
        const double bot = s.image.at(yb, xa, ch) * (1 - fx) + s.image.at(yb, xb, ch) * fx;
        out.image.at(r, c, ch) = top * (1 - fy) + bot * fy;
      }
    }
  }
  out.instances = relabel_sequential(out.instances);
  return out;
}

}  // namespace

Sample apply_augment(const Sample& s, const AugmentParams& p) {
  require_same_shape(s.instances, Grid<int>(s.image.height, s.image.width), "augment");
  Sample cur = s;
  const std::size_t h = s.image.height, w = s.image.width;
  if (p.hflip) cur = remap(cur, h, w, [&](std::size_t r, std::size_t c) { return std::pair{r, w - 1 - c}; });
  if (p.vflip) cur = remap(cur, h, w, [&](std::size_t r, std::size_t c) { return std::pair{h - 1 - r, c}; });
  for (int t = 0; t < ((p.quarter_turns % 4) + 4) % 4; ++t) {
    const std::size_t ch = cur.image.height, cw = cur.image.width;
    cur = remap(cur, cw, ch, [&](std::size_t r, std::size_t c) { return std::pair{c, cw - 1 - r}; });
  }
  if (p.angle_deg != 0.0) cur = rotate_free(cur, p.angle_deg);
  return cur;
}

Sample augment(const Sample& s, Rng& rng, const AugmentOptions& options) {
  return apply_augment(s, draw_augment(rng, options));
}

Sample crop(const Sample& s, std::size_t row, std::size_t col, std::size_t height, std::size_t width) {
  if (row + height > s.image.height || col + width > s.image.width) {
    throw DimensionError("crop: window exceeds the " + std::to_string(s.image.height) + "x" +
                         std::to_string(s.image.width) + " image");
  }
  Sample out = remap(s, height, width, [&](std::size_t r, std::size_t c) { return std::pair{row + r, col + c}; });
  out.instances = relabel_sequential(out.instances);
  out.id = s.id + "_r" + std::to_string(row) + "_c" + std::to_string(col);
  return out;
}

std::vector<Sample> tile(const Sample& s, std::size_t size, std::size_t stride) {
  if (size == 0 || stride == 0) throw ConfigError("tile: size and stride must be >= 1");
  if (stride > size) throw ConfigError("tile: stride " + std::to_string(stride) + " would leave gaps between tiles of size " + std::to_string(size));
  if (size > s.image.height || size > s.image.width) {
    throw DimensionError("tile: tile size " + std::to_string(size) + " exceeds image " +
                         std::to_string(s.image.height) + "x" + std::to_string(s.image.width));
  }
  auto anchors = [&](std::size_t extent) {
    std::vector<std::size_t> a;
    for (std::size_t p = 0; p + size < extent; p += stride) a.push_back(p);
    a.push_back(extent - size);
    a.erase(std::unique(a.begin(), a.end()), a.end());
    return a;
  };
  std::vector<Sample> out;
  for (std::size_t r : anchors(s.image.height)) {
    for (std::size_t c : anchors(s.image.width)) out.push_back(crop(s, r, c, size, size));
  }
  return out;
}

// ---------------------------------------------------------------------------

KeyValues SynthOptions::to_key_values() const {
  return {{"synth.n_images", std::to_string(n_images)},
          {"synth.size", std::to_string(size)},
          {"synth.density", format_double(density)},
          {"synth.overlap", format_double(overlap)},
          {"synth.seed", std::to_string(seed)},
          {"synth.prune_overlaps", prune_overlaps ? "true" : "false"},
          {"synth.min_radius", format_double(min_radius)},
          {"synth.max_radius", format_double(max_radius)},
          {"synth.noise_sigma", format_double(noise_sigma)}};
}

std::uint64_t sample_seed(std::uint64_t seed, const std::string& id) {
  return fnv1a64(std::to_string(seed) + "/" + id);
}

std::size_t synth_requested_count(const SynthOptions& o) {
  const double r = 0.5 * (o.min_radius + o.max_radius);
  const double nucleus_area = std::numbers::pi * r * r * 0.825;  // mean minor/major ratio
  return static_cast<std::size_t>(std::lround(o.density * static_cast<double>(o.size * o.size) / nucleus_area));
}

namespace {

struct Ellipse {
  double cy, cx, a, b, theta;

  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double u = (dy * std::cos(theta) + dx * std::sin(theta)) / a;
    const double v = (-dy * std::sin(theta) + dx * std::cos(theta)) / b;
    return u * u + v * v <= 1.0;
  }
  // Normalised radius of (y, x); <= 1 inside.
  double rho(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double u = (dy * std::cos(theta) + dx * std::sin(theta)) / a;
    const double v = (-dy * std::sin(theta) + dx * std::cos(theta)) / b;
    return std::sqrt(u * u + v * v);
  }
};

Sample synth_one(const SynthOptions& o, const std::string& id, std::size_t requested) {
  Rng rng(sample_seed(o.seed, id));
  const std::size_t n = o.size;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> coord(0, n - 1);

  std::vector<Ellipse> placed;
  auto center_clear = [&](const Ellipse& e) {
    for (const auto& p : placed) {
      if (p.contains(e.cy, e.cx) || e.contains(p.cy, p.cx)) return false;
    }
    return true;
  };
  auto spaced = [&](const Ellipse& e) {
    for (const auto& p : placed) {
      const double d = std::hypot(e.cy - p.cy, e.cx - p.cx);
      if (d < (e.a + p.a) * (1.0 - o.overlap)) return false;
    }
    return true;
  };
  for (std::size_t k = 0; k < requested; ++k) {
    Ellipse e{0, 0, 0, 0, 0};
    e.a = o.min_radius + (o.max_radius - o.min_radius) * unit(rng);
    e.b = e.a * (0.65 + 0.35 * unit(rng));
    e.theta = std::numbers::pi * unit(rng);
    bool ok = false;
    for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
      e.cy = static_cast<double>(coord(rng));
      e.cx = static_cast<double>(coord(rng));
      ok = spaced(e) && center_clear(e);
    }
    if (!ok && !o.prune_overlaps) {
      for (int attempt = 0; attempt < 2000 && !ok; ++attempt) {
        e.cy = static_cast<double>(coord(rng));
        e.cx = static_cast<double>(coord(rng));
        ok = center_clear(e);
      }
    }
    if (ok) placed.push_back(e);
  }

  Sample s;
  s.id = id;
  s.image = Image(n, n, 3);
  s.instances = InstanceMap(n, n, 0);

  // Pale pink background with low-frequency shading.
  const double base[3] = {0.92, 0.78, 0.86};
  const double fy = 1.0 + 2.0 * unit(rng), fx = 1.0 + 2.0 * unit(rng), ph = 2.0 * std::numbers::pi * unit(rng);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double shade = 0.04 * std::sin(fy * static_cast<double>(r) / static_cast<double>(n) * std::numbers::pi +
                                            fx * static_cast<double>(c) / static_cast<double>(n) * std::numbers::pi + ph);
      for (int ch = 0; ch < 3; ++ch) s.image.at(r, c, ch) = base[ch] + shade;
    }
  }
  // Dark purple nuclei, lighter toward the rim; later nuclei occlude earlier ones.
  const double nucleus[3] = {0.32, 0.18, 0.48};
  for (std::size_t k = 0; k < placed.size(); ++k) {
    const Ellipse& e = placed[k];
    const double tone = 0.85 + 0.3 * unit(rng);
    const long r0 = std::max(0L, static_cast<long>(std::floor(e.cy - e.a)));
    const long r1 = std::min(static_cast<long>(n) - 1, static_cast<long>(std::ceil(e.cy + e.a)));
    const long c0 = std::max(0L, static_cast<long>(std::floor(e.cx - e.a)));
    const long c1 = std::min(static_cast<long>(n) - 1, static_cast<long>(std::ceil(e.cx + e.a)));
    for (long r = r0; r <= r1; ++r) {
      for (long c = c0; c <= c1; ++c) {
        if (!e.contains(static_cast<double>(r), static_cast<double>(c))) continue;
        s.instances(r, c) = static_cast<std::int32_t>(k + 1);
        const double rim = 0.45 * std::pow(e.rho(static_cast<double>(r), static_cast<double>(c)), 3.0);
        for (int ch = 0; ch < 3; ++ch) s.image.at(r, c, ch) = (1.0 - rim) * nucleus[ch] * tone + rim * base[ch];
      }
    }
  }
  // 3x3 binomial blur, then Gaussian noise.
  Image blurred = s.image;
  const double kernel[3] = {0.25, 0.5, 0.25};
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const long y = std::clamp(static_cast<long>(r) + dy, 0L, static_cast<long>(n) - 1);
            const long x = std::clamp(static_cast<long>(c) + dx, 0L, static_cast<long>(n) - 1);
            acc += kernel[dy + 1] * kernel[dx + 1] * s.image.at(y, x, ch);
          }
        }
        blurred.at(r, c, ch) = acc;
      }
    }
  }
  std::normal_distribution<double> noise(0.0, o.noise_sigma);
  for (double& v : blurred.pixels) v = std::clamp(v + noise(rng), 0.0, 1.0);
  s.image = std::move(blurred);
  return s;
}

}  // namespace

SynthDataset synth_generate(const SynthOptions& options) {
  if (options.size == 0) throw ConfigError("synth: size must be >= 1");
  if (options.density < 0.0) throw ConfigError("synth: density must be >= 0");
  if (options.overlap < 0.0 || options.overlap >= 1.0) throw ConfigError("synth: overlap must be in [0, 1)");
  if (options.min_radius <= 0.0 || options.max_radius < options.min_radius) {
    throw ConfigError("synth: need 0 < min_radius <= max_radius");
  }
  SynthDataset ds;
  const std::size_t requested = synth_requested_count(options);
  for (std::size_t i = 0; i < options.n_images; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04zu", i);
    ds.samples.push_back(synth_one(options, id, requested));
    ds.requested.push_back(requested);
  }
  return ds;
}

// ---------------------------------------------------------------------------

void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "labels");
  for (const auto& s : samples) {
    write_png_rgb8(dir / "images" / (s.id + ".png"), s.image);
    write_label_png(dir / "labels" / (s.id + ".png"), s.instances);
  }
}

std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
  const auto images = dir / "images";
  const auto labels = dir / "labels";
  if (!std::filesystem::is_directory(images) || !std::filesystem::is_directory(labels)) {
    throw IoError(dir.string() + ": expected images/ and labels/ subdirectories");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(images)) {
    if (entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Sample> out;
  for (const auto& f : files) {
    Sample s;
    s.id = f.stem().string();
    s.image = read_png_rgb(f);
    const auto label_path = labels / f.filename();
    if (!std::filesystem::exists(label_path)) throw IoError("missing label file " + label_path.string());
    s.instances = read_label_png(label_path);
    require_same_shape(s.instances, Grid<int>(s.image.height, s.image.width), s.id.c_str());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace haru
