#include "atv/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "atv/netpbm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace atv {

SceneRegime regime_from_string(const std::string& s) {
  if (s == "local") return SceneRegime::local;
  if (s == "context") return SceneRegime::context;
  if (s == "mixed") return SceneRegime::mixed;
  throw std::invalid_argument("unknown regime '" + s + "' (expected local|context|mixed)");
}

std::string regime_to_string(SceneRegime r) {
  switch (r) {
    case SceneRegime::local: return "local";
    case SceneRegime::context: return "context";
    case SceneRegime::mixed: return "mixed";
  }
  return "mixed";
}

namespace {

struct Rgb {
  float r, g, b;
};

Rgb hsv_to_rgb(float h, float s, float v) {
  const float c = v * s;
  const float hp = h * 6.0f;
  const float x = c * (1.0f - std::abs(std::fmod(hp, 2.0f) - 1.0f));
  float r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const float m = v - c;
  return {r + m, g + m, b + m};
}

// Saturated hue ring for classes 1..K-1; class 0 is a dark background.
// Everything stays far from the neutral gray reserved for patches.
Rgb class_color(int cls, int k) {
  if (cls == 0) return {0.12f, 0.14f, 0.18f};
  const float h = static_cast<float>(cls - 1) / static_cast<float>(k - 1);
  return hsv_to_rgb(h, 0.75f, 0.85f);
}

struct Canvas {
  int s;
  Tensor<float> img;
  Tensor<int32_t> lab;
  explicit Canvas(int size)
      : s(size), img(Shape{3, size, size}), lab(Shape{size, size}) {}

  void put(int y, int x, Rgb c, int cls) {
    const int64_t plane = static_cast<int64_t>(s) * s;
    const int64_t at = static_cast<int64_t>(y) * s + x;
    img[at] = std::clamp(c.r, 0.0f, 1.0f);
    img[plane + at] = std::clamp(c.g, 0.0f, 1.0f);
    img[2 * plane + at] = std::clamp(c.b, 0.0f, 1.0f);
    lab[at] = cls;
  }
};

Rgb jitter(Rgb c, float amp, Rng& rng) {
  return {c.r + static_cast<float>(rng.uniform(-amp, amp)),
          c.g + static_cast<float>(rng.uniform(-amp, amp)),
          c.b + static_cast<float>(rng.uniform(-amp, amp))};
}

struct RectRegion {
  int x0, y0, x1, y1;  // half-open
  int cls;
  int w() const { return x1 - x0; }
  int h() const { return y1 - y0; }
};

void paint_background(Canvas& cv, Rng& rng) {
  const Rgb base = class_color(0, 5);
  const float gx = static_cast<float>(rng.uniform(-0.06, 0.06));
  const float gy = static_cast<float>(rng.uniform(-0.06, 0.06));
  for (int y = 0; y < cv.s; ++y) {
    for (int x = 0; x < cv.s; ++x) {
      Rgb c = base;
      const float g = gx * (static_cast<float>(x) / cv.s - 0.5f) +
                      gy * (static_cast<float>(y) / cv.s - 0.5f);
      c.r += g;
      c.g += g;
      c.b += g;
      cv.put(y, x, jitter(c, 0.03f, rng), 0);
    }
  }
}

void paint_rect_region(Canvas& cv, const RectRegion& r, int k, Rng& rng) {
  const Rgb base = class_color(r.cls, k);
  for (int y = r.y0; y < r.y1; ++y) {
    for (int x = r.x0; x < r.x1; ++x) cv.put(y, x, jitter(base, 0.04f, rng), r.cls);
  }
}

// Small shape filled with a 2x2 checkerboard of bright/dark class color:
// a high-frequency local cue.
void paint_texture_shape(Canvas& cv, int cx, int cy, int side, int cls, int k, Rng& rng) {
  const Rgb base = class_color(cls, k);
  const Rgb bright{base.r * 1.3f, base.g * 1.3f, base.b * 1.3f};
  const Rgb dark{base.r * 0.55f, base.g * 0.55f, base.b * 0.55f};
  const int half = side / 2;
  for (int y = std::max(0, cy - half); y < std::min(cv.s, cy + half); ++y) {
    for (int x = std::max(0, cx - half); x < std::min(cv.s, cx + half); ++x) {
      const bool check = (((x / 2) + (y / 2)) % 2) == 0;
      cv.put(y, x, jitter(check ? bright : dark, 0.02f, rng), cls);
    }
  }
}

// Edge-to-edge band of the class color: a thin boundary-heavy structure.
void paint_ribbon(Canvas& cv, int cls, int k, Rng& rng) {
  const Rgb base = class_color(cls, k);
  const float px = static_cast<float>(rng.uniform(8.0, cv.s - 8.0));
  const float py = static_cast<float>(rng.uniform(8.0, cv.s - 8.0));
  const float theta = static_cast<float>(rng.uniform(0.0, 3.14159265));
  const float nx = -std::sin(theta), ny = std::cos(theta);
  const float halfw = static_cast<float>(rng.uniform(4.0, 6.0));
  for (int y = 0; y < cv.s; ++y) {
    for (int x = 0; x < cv.s; ++x) {
      const float d = (static_cast<float>(x) - px) * nx + (static_cast<float>(y) - py) * ny;
      if (std::abs(d) <= halfw) cv.put(y, x, jitter(base, 0.04f, rng), cls);
    }
  }
}

// Neutral-gray square; the label is the hosting region's class, so the
// pixel color carries no class information at all.
void paint_ambiguous_patch(Canvas& cv, int x0, int y0, int side, int cls) {
  const Rgb gray{kAmbiguousGray, kAmbiguousGray, kAmbiguousGray};
  for (int y = y0; y < y0 + side; ++y) {
    for (int x = x0; x < x0 + side; ++x) cv.put(y, x, gray, cls);
  }
}

int cycle_class(int64_t counter, int k) { return 1 + static_cast<int>(counter % (k - 1)); }

// Paints one scene. All geometry comes from the per-sample rng; class
// assignment cycles on the sample index so every class appears in any
// short run of samples. The two large regions sit on opposite sides of a
// split line so neither is ever reduced to a thin unresolvable sliver;
// context scenes give the host region the wide side so a patch keeps a
// visible surround.
Canvas generate_scene(int index, int size, int k, bool context, uint64_t sample_seed) {
  Canvas cv(size);
  Rng rng(sample_seed);
  paint_background(cv, rng);

  const bool split_on_x = rng.bernoulli(0.5);
  const int split = context ? size * 5 / 8 + static_cast<int>(rng.index(size / 12))
                            : size * 3 / 8 + static_cast<int>(rng.index(size / 4));
  std::vector<RectRegion> regions(2);
  for (int r = 0; r < 2; ++r) {
    // host region (index 0) takes the low side of the split
    const int lo = (r == 0) ? 1 + static_cast<int>(rng.index(4)) : split + 1 + static_cast<int>(rng.index(4));
    const int hi = (r == 0) ? split - 1 - static_cast<int>(rng.index(4))
                            : size - 1 - static_cast<int>(rng.index(4));
    const int span = size * 9 / 16 + static_cast<int>(rng.index(size * 5 / 16));
    const int off = static_cast<int>(rng.index(std::max<int64_t>(1, size - span - 2)));
    RectRegion& reg = regions[static_cast<size_t>(r)];
    if (split_on_x) {
      reg.x0 = lo;
      reg.x1 = hi;
      reg.y0 = 1 + off;
      reg.y1 = std::min(size - 1, reg.y0 + span);
    } else {
      reg.y0 = lo;
      reg.y1 = hi;
      reg.x0 = 1 + off;
      reg.x1 = std::min(size - 1, reg.x0 + span);
    }
    reg.cls = cycle_class(static_cast<int64_t>(index) * 3 + r, k);
    paint_rect_region(cv, reg, k, rng);
  }

  // local cues, sized to stay resolvable at the backbone's output stride
  const int tex_side = size / 4 + static_cast<int>(rng.index(size / 8));
  const int tcx = tex_side / 2 + 2 + static_cast<int>(rng.index(std::max<int64_t>(1, size - tex_side - 4)));
  const int tcy = tex_side / 2 + 2 + static_cast<int>(rng.index(std::max<int64_t>(1, size - tex_side - 4)));
  paint_texture_shape(cv, tcx, tcy, tex_side, cycle_class(static_cast<int64_t>(index) * 5 + 1, k), k, rng);
  paint_ribbon(cv, cycle_class(static_cast<int64_t>(index) * 7 + 2, k), k, rng);

  if (context) {
    const RectRegion& host = regions.front();
    const int margin = 4;
    int side = 25 + static_cast<int>(rng.index(5));
    side = std::min({side, host.w() - 2 * margin, host.h() - 2 * margin});
    if (side >= 8) {
      const int px = host.x0 + margin +
                     static_cast<int>(rng.index(std::max<int64_t>(1, host.w() - side - 2 * margin + 1)));
      const int py = host.y0 + margin +
                     static_cast<int>(rng.index(std::max<int64_t>(1, host.h() - side - 2 * margin + 1)));
      paint_ambiguous_patch(cv, px, py, side, host.cls);
    }
  }
  return cv;
}

ImageU8 to_ppm(const Tensor<float>& img) {
  const int h = static_cast<int>(img.dim(1)), w = static_cast<int>(img.dim(2));
  ImageU8 out;
  out.w = w;
  out.h = h;
  out.channels = 3;
  out.pixels.resize(static_cast<size_t>(h) * w * 3);
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int64_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      const float v = std::clamp(img[c * plane + i], 0.0f, 1.0f);
      out.pixels[static_cast<size_t>(i) * 3 + c] = static_cast<uint8_t>(std::lround(v * 255.0f));
    }
  }
  return out;
}

ImageU8 to_pgm(const Tensor<int32_t>& lab) {
  const int h = static_cast<int>(lab.dim(0)), w = static_cast<int>(lab.dim(1));
  ImageU8 out;
  out.w = w;
  out.h = h;
  out.channels = 1;
  out.pixels.resize(static_cast<size_t>(h) * w);
  for (int64_t i = 0; i < lab.size(); ++i) out.pixels[static_cast<size_t>(i)] = static_cast<uint8_t>(lab[i]);
  return out;
}

std::string index_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", i);
  return buf;
}

}  // namespace

DatasetManifest generate_triscenes(int n, int size, int k, SceneRegime regime, uint64_t seed,
                                   const std::string& out_dir) {
  detail::require(n >= 1, "generate_triscenes: need at least one sample");
  detail::require(size % 8 == 0 && size >= 16, "generate_triscenes: size must be divisible by 8");
  detail::require(k >= 3 && k <= 64, "generate_triscenes: K must be in [3,64]");

  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "labels");

  DatasetManifest m;
  m.k = k;
  m.seed = seed;
  m.regime = regime_to_string(regime);
  m.dir = out_dir;
  for (int i = 0; i < n; ++i) {
    const uint64_t sample_seed = mix(seed, static_cast<uint64_t>(i), 0xDA7A);
    bool context = (regime == SceneRegime::context);
    if (regime == SceneRegime::mixed) context = Rng(mix(sample_seed, 0x4E61)).bernoulli(0.5);
    const Canvas cv = generate_scene(i, size, k, context, sample_seed);
    ManifestEntry e;
    e.image = "images/" + index_name(i) + ".ppm";
    e.label = "labels/" + index_name(i) + ".pgm";
    e.regime = context ? "context" : "local";
    write_ppm((fs::path(out_dir) / e.image).string(), to_ppm(cv.img));
    write_pgm((fs::path(out_dir) / e.label).string(), to_pgm(cv.lab));
    m.entries.push_back(std::move(e));
  }

  json j;
  j["version"] = m.version;
  j["k"] = m.k;
  j["seed"] = m.seed;
  j["regime"] = m.regime;
  j["entries"] = json::array();
  for (const ManifestEntry& e : m.entries) {
    j["entries"].push_back({{"image", e.image}, {"label", e.label}, {"regime", e.regime}});
  }
  std::ofstream out(fs::path(out_dir) / "manifest.json");
  if (!out) throw std::runtime_error("generate_triscenes: cannot write manifest in " + out_dir);
  out << j.dump(2) << "\n";
  return m;
}

DatasetManifest load_dataset(const std::string& dir) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw std::runtime_error("load_dataset: missing manifest " + mpath.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("load_dataset: malformed manifest " + mpath.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.version = j.at("version").get<int>();
  if (m.version != 1) throw std::runtime_error("load_dataset: unsupported manifest version");
  m.k = j.at("k").get<int>();
  m.seed = j.at("seed").get<uint64_t>();
  m.regime = j.at("regime").get<std::string>();
  m.dir = dir;
  for (const json& e : j.at("entries")) {
    ManifestEntry entry{e.at("image").get<std::string>(), e.at("label").get<std::string>(),
                        e.at("regime").get<std::string>()};
    if (!fs::exists(fs::path(dir) / entry.image)) {
      throw std::runtime_error("load_dataset: missing file " + entry.image);
    }
    if (!fs::exists(fs::path(dir) / entry.label)) {
      throw std::runtime_error("load_dataset: missing file " + entry.label);
    }
    m.entries.push_back(std::move(entry));
  }
  return m;
}

Sample load_sample(const DatasetManifest& m, int index) {
  detail::require(index >= 0 && index < m.size(), "load_sample: index out of range");
  const ManifestEntry& e = m.entries[static_cast<size_t>(index)];
  const ImageU8 img = read_pnm((fs::path(m.dir) / e.image).string());
  const ImageU8 lab = read_pnm((fs::path(m.dir) / e.label).string());
  if (img.channels != 3) throw std::runtime_error("load_sample: image is not RGB: " + e.image);
  if (lab.channels != 1) throw std::runtime_error("load_sample: label is not grayscale: " + e.label);
  if (img.w != lab.w || img.h != lab.h) {
    throw std::runtime_error("load_sample: image/label dimensions differ for " + e.image);
  }
  Sample s;
  s.image = Tensor<float>(Shape{3, img.h, img.w});
  s.labels = Tensor<int32_t>(Shape{lab.h, lab.w});
  const int64_t plane = static_cast<int64_t>(img.h) * img.w;
  for (int64_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      s.image[c * plane + i] = static_cast<float>(img.pixels[static_cast<size_t>(i) * 3 + c]) / 255.0f;
    }
    const int32_t v = lab.pixels[static_cast<size_t>(i)];
    if (v >= m.k && v != 255) {
      throw std::runtime_error("load_sample: label value " + std::to_string(v) +
                               " out of range in " + e.label);
    }
    s.labels[i] = v;
  }
  return s;
}

namespace {

// Arbitrary-ratio bilinear resize, half-pixel centers, border clamp.
Tensor<float> resize_bilinear(const Tensor<float>& img, int oh, int ow) {
  const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor<float> out(Shape{c, oh, ow});
  const float sy = static_cast<float>(h) / oh, sx = static_cast<float>(w) / ow;
  for (int64_t ic = 0; ic < c; ++ic) {
    const float* src = img.data() + ic * h * w;
    float* dst = out.data() + ic * static_cast<int64_t>(oh) * ow;
    for (int y = 0; y < oh; ++y) {
      float fy = (static_cast<float>(y) + 0.5f) * sy - 0.5f;
      fy = std::clamp(fy, 0.0f, static_cast<float>(h - 1));
      const int64_t y0 = static_cast<int64_t>(fy);
      const int64_t y1 = std::min<int64_t>(y0 + 1, h - 1);
      const float wy1 = fy - static_cast<float>(y0), wy0 = 1.0f - wy1;
      for (int x = 0; x < ow; ++x) {
        float fx = (static_cast<float>(x) + 0.5f) * sx - 0.5f;
        fx = std::clamp(fx, 0.0f, static_cast<float>(w - 1));
        const int64_t x0 = static_cast<int64_t>(fx);
        const int64_t x1 = std::min<int64_t>(x0 + 1, w - 1);
        const float wx1 = fx - static_cast<float>(x0), wx0 = 1.0f - wx1;
        dst[static_cast<int64_t>(y) * ow + x] =
            wy0 * (wx0 * src[y0 * w + x0] + wx1 * src[y0 * w + x1]) +
            wy1 * (wx0 * src[y1 * w + x0] + wx1 * src[y1 * w + x1]);
      }
    }
  }
  return out;
}

Tensor<int32_t> resize_nearest(const Tensor<int32_t>& lab, int oh, int ow) {
  const int64_t h = lab.dim(0), w = lab.dim(1);
  Tensor<int32_t> out(Shape{oh, ow});
  const float sy = static_cast<float>(h) / oh, sx = static_cast<float>(w) / ow;
  for (int y = 0; y < oh; ++y) {
    const int64_t iy = std::min<int64_t>(static_cast<int64_t>((static_cast<float>(y) + 0.5f) * sy), h - 1);
    for (int x = 0; x < ow; ++x) {
      const int64_t ix = std::min<int64_t>(static_cast<int64_t>((static_cast<float>(x) + 0.5f) * sx), w - 1);
      out[static_cast<int64_t>(y) * ow + x] = lab[iy * w + ix];
    }
  }
  return out;
}

}  // namespace

Sample augment(const Sample& s, const AugmentConfig& cfg, Rng& rng) {
  detail::require(cfg.crop_h % 8 == 0 && cfg.crop_w % 8 == 0, "augment: crop size must be divisible by 8");
  detail::require(!cfg.scale_choices.empty(), "augment: no scale choices");
  const int64_t h = s.image.dim(1), w = s.image.dim(2);

  const double sc = cfg.scale_choices[static_cast<size_t>(rng.index(static_cast<int64_t>(cfg.scale_choices.size())))];
  const int hs = std::max(1, static_cast<int>(std::lround(static_cast<double>(h) * sc)));
  const int ws = std::max(1, static_cast<int>(std::lround(static_cast<double>(w) * sc)));
  Tensor<float> img = (hs == h && ws == w) ? s.image : resize_bilinear(s.image, hs, ws);
  Tensor<int32_t> lab = (hs == h && ws == w) ? s.labels : resize_nearest(s.labels, hs, ws);

  // crop window; if the scaled image is smaller it is pasted at a random
  // offset inside an ignore-padded canvas
  Sample out;
  out.image = Tensor<float>(Shape{3, cfg.crop_h, cfg.crop_w});
  out.labels = Tensor<int32_t>(Shape{cfg.crop_h, cfg.crop_w});
  std::fill(out.labels.vec().begin(), out.labels.vec().end(), 255);
  const int sy = hs >= cfg.crop_h ? static_cast<int>(rng.index(hs - cfg.crop_h + 1)) : 0;
  const int sx = ws >= cfg.crop_w ? static_cast<int>(rng.index(ws - cfg.crop_w + 1)) : 0;
  const int dy = hs >= cfg.crop_h ? 0 : static_cast<int>(rng.index(cfg.crop_h - hs + 1));
  const int dx = ws >= cfg.crop_w ? 0 : static_cast<int>(rng.index(cfg.crop_w - ws + 1));
  const int copy_h = std::min(cfg.crop_h, hs), copy_w = std::min(cfg.crop_w, ws);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < copy_h; ++y) {
      const float* src = img.data() + (static_cast<int64_t>(c) * hs + sy + y) * ws + sx;
      float* dst = out.image.data() + (static_cast<int64_t>(c) * cfg.crop_h + dy + y) * cfg.crop_w + dx;
      std::copy(src, src + copy_w, dst);
    }
  }
  for (int y = 0; y < copy_h; ++y) {
    const int32_t* src = lab.data() + static_cast<int64_t>(sy + y) * ws + sx;
    int32_t* dst = out.labels.data() + static_cast<int64_t>(dy + y) * cfg.crop_w + dx;
    std::copy(src, src + copy_w, dst);
  }

  if (rng.bernoulli(cfg.hflip_prob)) {
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < cfg.crop_h; ++y) {
        float* row = out.image.data() + (static_cast<int64_t>(c) * cfg.crop_h + y) * cfg.crop_w;
        std::reverse(row, row + cfg.crop_w);
      }
    }
    for (int y = 0; y < cfg.crop_h; ++y) {
      int32_t* row = out.labels.data() + static_cast<int64_t>(y) * cfg.crop_w;
      std::reverse(row, row + cfg.crop_w);
    }
  }
  return out;
}

std::pair<Tensor<float>, Tensor<int32_t>> make_batch(const std::vector<Sample>& samples) {
  detail::require(!samples.empty(), "make_batch: empty sample list");
  const int64_t h = samples[0].image.dim(1), w = samples[0].image.dim(2);
  for (const Sample& s : samples) {
    detail::require(s.image.dim(1) == h && s.image.dim(2) == w &&
                        s.labels.dim(0) == h && s.labels.dim(1) == w,
                    "make_batch: mixed sample sizes");
  }
  const int64_t n = static_cast<int64_t>(samples.size());
  Tensor<float> images(Shape{n, 3, h, w});
  Tensor<int32_t> labels(Shape{n, h, w});
  for (int64_t i = 0; i < n; ++i) {
    std::copy(samples[static_cast<size_t>(i)].image.vec().begin(),
              samples[static_cast<size_t>(i)].image.vec().end(),
              images.vec().begin() + i * 3 * h * w);
    std::copy(samples[static_cast<size_t>(i)].labels.vec().begin(),
              samples[static_cast<size_t>(i)].labels.vec().end(),
              labels.vec().begin() + i * h * w);
  }
  return {std::move(images), std::move(labels)};
}

Tensor<int32_t> ambiguous_mask(const Sample& s) {
  const int64_t h = s.image.dim(1), w = s.image.dim(2);
  const int64_t plane = h * w;
  Tensor<int32_t> mask(Shape{h, w});
  for (int64_t i = 0; i < plane; ++i) {
    mask[i] = (s.image[i] == kAmbiguousGray && s.image[plane + i] == kAmbiguousGray &&
               s.image[2 * plane + i] == kAmbiguousGray)
                  ? 1
                  : 0;
  }
  return mask;
}

}  // namespace atv
