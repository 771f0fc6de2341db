// Procedural proxy corpus: aerial-like scenes (land cover, buildings, ponds,
// roads, trees) and object-centric "natural" images.
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "gfm/error.hpp"
#include "gfm/geodata.hpp"

namespace gfm {

void SynthSpec::validate() const {
  auto need = [](bool ok, const std::string& what) { check(ok, Errc::invalid_config, "synth spec: " + what); };
  need(style == "geo" || style == "natural", "style must be geo or natural");
  need(tile_size >= 8, "tile_size must be >= 8");
  need(complexity >= 0.0 && complexity <= 1.0, "complexity must lie in [0, 1]");
  need(unlabeled >= 0 && temporal_pairs >= 0 && classification >= 0 && multilabel >= 0 && segmentation >= 0 &&
           change_pairs >= 0 && superres >= 0,
       "counts must be non-negative");
  need(scale_factor >= 1, "scale_factor must be >= 1");
  need(val_fraction >= 0.0 && val_fraction < 1.0, "val_fraction must lie in [0, 1)");
  need(zero_edit_fraction >= 0.0 && zero_edit_fraction <= 1.0, "zero_edit_fraction must lie in [0, 1]");
}

void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = nlohmann::json{{"style", s.style},
                     {"tile_size", s.tile_size},
                     {"complexity", s.complexity},
                     {"unlabeled", s.unlabeled},
                     {"temporal_pairs", s.temporal_pairs},
                     {"classification", s.classification},
                     {"multilabel", s.multilabel},
                     {"segmentation", s.segmentation},
                     {"change_pairs", s.change_pairs},
                     {"superres", s.superres},
                     {"scale_factor", s.scale_factor},
                     {"val_fraction", s.val_fraction},
                     {"zero_edit_fraction", s.zero_edit_fraction}};
}

void from_json(const nlohmann::json& j, SynthSpec& s) {
  SynthSpec d;
  s.style = j.value("style", d.style);
  s.tile_size = j.value("tile_size", d.tile_size);
  s.complexity = j.value("complexity", d.complexity);
  s.unlabeled = j.value("unlabeled", d.unlabeled);
  s.temporal_pairs = j.value("temporal_pairs", d.temporal_pairs);
  s.classification = j.value("classification", d.classification);
  s.multilabel = j.value("multilabel", d.multilabel);
  s.segmentation = j.value("segmentation", d.segmentation);
  s.change_pairs = j.value("change_pairs", d.change_pairs);
  s.superres = j.value("superres", d.superres);
  s.scale_factor = j.value("scale_factor", d.scale_factor);
  s.val_fraction = j.value("val_fraction", d.val_fraction);
  s.zero_edit_fraction = j.value("zero_edit_fraction", d.zero_edit_fraction);
}

namespace {

using Rgb = std::array<float, 3>;

enum Kind : int { kBuilding = 1, kWater = 2, kRoad = 3, kTree = 4, kRing = 5, kTriangle = 6 };

// Smooth value noise on a (grid+1)^2 lattice over the unit square.
struct Noise {
  int grid = 4;
  std::vector<float> lattice;

  Noise() = default;
  Noise(int g, Rng& rng) : grid(g), lattice(static_cast<std::size_t>(g + 1) * (g + 1)) {
    for (auto& v : lattice) v = static_cast<float>(rng.uniform());
  }
  float operator()(double u, double v) const {
    const double x = u * grid, y = v * grid;
    const int x0 = std::clamp(static_cast<int>(x), 0, grid - 1), y0 = std::clamp(static_cast<int>(y), 0, grid - 1);
    auto smooth = [](double t) { return t * t * (3 - 2 * t); };
    const double fx = smooth(x - x0), fy = smooth(y - y0);
    auto at = [&](int yy, int xx) { return lattice[static_cast<std::size_t>(yy) * (grid + 1) + xx]; };
    const double top = at(y0, x0) + fx * (at(y0, x0 + 1) - at(y0, x0));
    const double bot = at(y0 + 1, x0) + fx * (at(y0 + 1, x0 + 1) - at(y0 + 1, x0));
    return static_cast<float>(top + fy * (bot - top));
  }
};

struct Shape {
  int kind = kBuilding;
  double cx = 0.5, cy = 0.5, a = 0.1, b = 0.1, angle = 0.0;
  Rgb color{};
  int label = 0;  // segmentation class painted by this shape

  bool covers(double u, double v) const {
    const double dx = u - cx, dy = v - cy;
    switch (kind) {
      case kBuilding: return std::abs(dx) <= a && std::abs(dy) <= b;
      case kWater:
      case kTree: return dx * dx + dy * dy <= a * a;
      case kRoad: return std::abs(-std::sin(angle) * dx + std::cos(angle) * dy) <= a;
      case kRing: {
        const double r2 = dx * dx + dy * dy;
        return r2 <= a * a && r2 >= b * b;
      }
      case kTriangle: {
        // upward triangle inscribed in radius a
        const double top = cy - a, base = cy + a * 0.5;
        if (v < top || v > base) return false;
        const double half = (v - top) / (base - top) * a * 0.866;
        return std::abs(dx) <= half;
      }
      default: return false;
    }
  }
};

struct Scene {
  Rgb base0{}, base1{};
  Noise coarse, fine;
  double texture = 0.0;  // fine-noise amplitude
  double grain = 0.0;    // per-pixel noise amplitude
  std::uint64_t grain_seed = 0;
  bool stripes = false;
  double stripe_freq = 6.0, stripe_angle = 0.0;
  Rgb stripe_color{};
  bool gradient = false;  // natural style: linear colour ramp instead of noise
  std::vector<Shape> shapes;
  Rgb tint{1.0f, 1.0f, 1.0f};
  float shift = 0.0f;
};

struct Rendered {
  Image image;
  std::vector<int> labels;
};

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Rendered render(const Scene& s, int res) {
  Rendered out{Image(res, res, 3), std::vector<int>(static_cast<std::size_t>(res) * res, 0)};
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      const double u = (x + 0.5) / res, v = (y + 0.5) / res;
      const float t = s.gradient ? static_cast<float>(0.5 * (u + v)) : s.coarse(u, v);
      Rgb px;
      for (int c = 0; c < 3; ++c) px[c] = s.base0[c] + t * (s.base1[c] - s.base0[c]);
      if (s.stripes) {
        const double phase = s.stripe_freq * (u * std::cos(s.stripe_angle) + v * std::sin(s.stripe_angle));
        if (phase - std::floor(phase) < 0.5) px = s.stripe_color;
      }
      int label = 0;
      for (const auto& sh : s.shapes)
        if (sh.covers(u, v)) {
          px = sh.color;
          label = sh.label;
        }
      const float detail = static_cast<float>(s.texture * (s.fine(u, v) - 0.5));
      const std::uint64_t h = mix64(s.grain_seed ^ (static_cast<std::uint64_t>(y) * 0x100000001B3ULL + x));
      const float grain = static_cast<float>(s.grain * (static_cast<double>(h >> 11) * 0x1.0p-53 - 0.5));
      for (int c = 0; c < 3; ++c)
        out.image.at(y, x, c) = std::clamp((px[c] + detail + grain) * s.tint[c] + s.shift, 0.0f, 1.0f);
      out.labels[static_cast<std::size_t>(y) * res + x] = label;
    }
  out.image = quantize8(out.image);
  return out;
}

Rgb jitter(const Rgb& c, double amount, Rng& rng) {
  Rgb out;
  for (int i = 0; i < 3; ++i) out[i] = std::clamp(c[i] + static_cast<float>(rng.uniform(-amount, amount)), 0.0f, 1.0f);
  return out;
}

Rgb random_color(Rng& rng) {
  return {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform())};
}

const Rgb kGrass{0.42f, 0.55f, 0.30f}, kSoil{0.58f, 0.50f, 0.38f}, kForestFloor{0.16f, 0.32f, 0.15f};
const Rgb kWaterBlue{0.12f, 0.25f, 0.45f}, kRoadGray{0.45f, 0.45f, 0.47f}, kTreeGreen{0.10f, 0.30f, 0.10f};
const std::array<Rgb, 3> kRoofs{Rgb{0.78f, 0.78f, 0.76f}, Rgb{0.62f, 0.28f, 0.22f}, Rgb{0.30f, 0.30f, 0.33f}};

class SceneFactory {
 public:
  SceneFactory(double complexity, Rng& rng) : complexity_(complexity), rng_(rng) {}

  Scene base(const Rgb& c0, const Rgb& c1) {
    Scene s;
    s.base0 = jitter(c0, 0.05, rng_);
    s.base1 = jitter(c1, 0.05, rng_);
    s.coarse = Noise(4, rng_);
    s.fine = Noise(16, rng_);
    s.texture = 0.5 * complexity_;
    s.grain = 0.35 * complexity_;
    s.grain_seed = rng_.next();
    return s;
  }

  void add_building(Scene& s, double cx, double cy, double lo = 0.05, double hi = 0.1) {
    Shape b;
    b.kind = kBuilding;
    b.cx = cx;
    b.cy = cy;
    b.a = rng_.uniform(lo, hi);
    b.b = rng_.uniform(lo, hi);
    b.color = jitter(kRoofs[rng_.below(kRoofs.size())], 0.04, rng_);
    b.label = kBuilding;
    s.shapes.push_back(b);
  }
  void add_building(Scene& s) { add_building(s, rng_.uniform(0.1, 0.9), rng_.uniform(0.1, 0.9)); }

  void add_water(Scene& s, double r_lo, double r_hi) {
    Shape w;
    w.kind = kWater;
    w.cx = rng_.uniform(0.25, 0.75);
    w.cy = rng_.uniform(0.25, 0.75);
    w.a = rng_.uniform(r_lo, r_hi);
    w.color = jitter(kWaterBlue, 0.04, rng_);
    w.label = kWater;
    s.shapes.push_back(w);
  }

  void add_road(Scene& s) {
    Shape r;
    r.kind = kRoad;
    r.cx = rng_.uniform(0.3, 0.7);
    r.cy = rng_.uniform(0.3, 0.7);
    r.a = rng_.uniform(0.035, 0.06);
    r.angle = rng_.uniform(0.0, std::numbers::pi);
    r.color = jitter(kRoadGray, 0.03, rng_);
    r.label = kRoad;
    s.shapes.push_back(r);
  }

  void add_tree(Scene& s) {
    Shape t;
    t.kind = kTree;
    t.cx = rng_.uniform(0.05, 0.95);
    t.cy = rng_.uniform(0.05, 0.95);
    t.a = rng_.uniform(0.035, 0.065);
    t.color = jitter(kTreeGreen, 0.04, rng_);
    t.label = kTree;
    s.shapes.push_back(t);
  }

  // Scene whose content is determined by a land-use class.
  Scene classified(int cls) {
    switch (cls) {
      case 0: {  // residential
        Scene s = base(kGrass, kSoil);
        add_road(s);
        const int n = 4 + static_cast<int>(rng_.below(5));
        for (int i = 0; i < n; ++i) add_building(s);
        for (int i = 0, k = static_cast<int>(rng_.below(3)); i < k; ++i) add_tree(s);
        return s;
      }
      case 1: {  // water
        Scene s = base(kGrass, kSoil);
        add_water(s, 0.25, 0.38);
        for (int i = 0, k = static_cast<int>(rng_.below(4)); i < k; ++i) add_tree(s);
        return s;
      }
      case 2: {  // farmland
        Scene s = base(kSoil, kGrass);
        s.stripes = true;
        s.stripe_freq = rng_.uniform(4.0, 8.0);
        s.stripe_angle = rng_.uniform(0.0, std::numbers::pi);
        s.stripe_color = jitter(Rgb{0.70f, 0.64f, 0.36f}, 0.06, rng_);
        if (rng_.bernoulli(0.4)) add_road(s);
        return s;
      }
      default: {  // forest
        Scene s = base(kForestFloor, kGrass);
        const int n = 14 + static_cast<int>(rng_.below(12));
        for (int i = 0; i < n; ++i) add_tree(s);
        return s;
      }
    }
  }

  // Mixed scene: each object kind present independently.
  Scene mixed() {
    Scene s = base(kGrass, kSoil);
    std::array<bool, kObjectKinds> present{};
    for (auto& p : present) p = rng_.bernoulli(0.5);
    if (std::none_of(present.begin(), present.end(), [](bool b) { return b; }))
      present[rng_.below(kObjectKinds)] = true;
    if (present[1]) add_water(s, 0.15, 0.28);
    if (present[2]) add_road(s);
    if (present[0])
      for (int i = 0, n = 2 + static_cast<int>(rng_.below(4)); i < n; ++i) add_building(s);
    if (present[3])
      for (int i = 0, n = 3 + static_cast<int>(rng_.below(6)); i < n; ++i) add_tree(s);
    return s;
  }

  Scene natural() {
    Scene s = base(random_color(rng_), random_color(rng_));
    s.gradient = rng_.bernoulli(0.5);
    const int n = 1 + static_cast<int>(rng_.below(3));
    for (int i = 0; i < n; ++i) {
      Shape sh;
      const int pick = static_cast<int>(rng_.below(4));
      sh.kind = pick == 0 ? kWater : pick == 1 ? kBuilding : pick == 2 ? kRing : kTriangle;
      sh.cx = rng_.uniform(0.25, 0.75);
      sh.cy = rng_.uniform(0.25, 0.75);
      sh.a = rng_.uniform(0.15, 0.35);
      sh.b = sh.kind == kRing ? sh.a * rng_.uniform(0.4, 0.7) : rng_.uniform(0.15, 0.35);
      sh.color = random_color(rng_);
      sh.label = 0;
      s.shapes.push_back(sh);
    }
    return s;
  }

  // Later acquisition of the same site: seasonal colour change plus edits
  // that add or remove buildings.
  Scene revisit(const Scene& first, int edits) {
    Scene s = first;
    for (auto& t : s.tint) t = static_cast<float>(rng_.uniform(0.9, 1.1));
    s.shift = static_cast<float>(rng_.uniform(-0.03, 0.03));
    s.grain_seed = rng_.next();
    for (int e = 0; e < edits; ++e) {
      std::vector<std::size_t> buildings;
      for (std::size_t i = 0; i < s.shapes.size(); ++i)
        if (s.shapes[i].kind == kBuilding) buildings.push_back(i);
      if (!buildings.empty() && rng_.bernoulli(0.5))
        s.shapes.erase(s.shapes.begin() + static_cast<std::ptrdiff_t>(buildings[rng_.below(buildings.size())]));
      else  // new construction is larger than the typical roof
        add_building(s, rng_.uniform(0.15, 0.85), rng_.uniform(0.15, 0.85), 0.08, 0.16);
    }
    return s;
  }

 private:
  double complexity_;
  Rng& rng_;
};

std::string tile_name(const std::string& dir, int index, const std::string& suffix = "") {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d", index);
  return dir + "/" + buf + suffix + ".png";
}

std::string split_for(int index, int count, double val_fraction) {
  const int val = static_cast<int>(std::lround(count * val_fraction));
  return index >= count - val ? "val" : "train";
}

void ensure_writable(const std::filesystem::path& dest) {
  std::error_code ec;
  std::filesystem::create_directories(dest, ec);
  check(!ec && std::filesystem::is_directory(dest), Errc::unwritable_destination,
        "cannot create " + dest.string() + (ec ? ": " + ec.message() : ""));
  const auto probe = dest / ".write-probe";
  {
    std::ofstream os(probe);
    check(static_cast<bool>(os), Errc::unwritable_destination, dest.string() + " is not writable");
  }
  std::filesystem::remove(probe, ec);
}

}  // namespace

SynthCorpus synth_proxy_generate(const SynthSpec& spec, std::uint64_t seed, const std::filesystem::path& dest) {
  spec.validate();
  ensure_writable(dest);
  const bool geo = spec.style == "geo";
  const std::string source = geo ? "synth-geo" : "synth-natural";
  const int res = spec.tile_size;
  Rng root(seed);

  SynthCorpus corpus;
  corpus.root = dest;
  try {
    auto save = [&](const std::string& rel, const Image& img) { write_png(dest / rel, img); };

    // unlabeled + temporal pairs for pretraining
    {
      Rng rng = root.fork(1);
      SceneFactory f(spec.complexity, rng);
      DatasetManifest m;
      m.base_dir = dest;
      int index = 0;
      for (int i = 0; i < spec.unlabeled; ++i, ++index) {
        Scene s = geo ? f.classified(static_cast<int>(rng.below(kSceneClasses))) : f.natural();
        ManifestRecord r;
        r.path = tile_name("pretrain", index);
        r.source = source;
        r.gsd_m = geo ? 0.5 : 1.0;
        save(r.path, render(s, res).image);
        m.records.push_back(r);
      }
      for (int p = 0; p < spec.temporal_pairs; ++p) {
        Scene first = geo ? f.classified(static_cast<int>(rng.below(kSceneClasses))) : f.natural();
        Scene second = f.revisit(first, static_cast<int>(rng.below(3)));
        char key[32];
        std::snprintf(key, sizeof key, "loc-%05d", p);
        const std::array<const Scene*, 2> scenes{&first, &second};
        const std::array<const char*, 2> stamps{"2019-06-01", "2021-06-01"};
        for (int t = 0; t < 2; ++t, ++index) {
          ManifestRecord r;
          r.path = tile_name("pretrain", index);
          r.source = source;
          r.gsd_m = geo ? 0.5 : 1.0;
          r.location_key = key;
          r.timestamp = stamps[t];
          save(r.path, render(*scenes[t], res).image);
          m.records.push_back(r);
        }
      }
      corpus.pretrain = m;
      corpus.pretrain_manifest = dest / "pretrain.jsonl";
      write_manifest(corpus.pretrain_manifest, m);
    }

    if (spec.classification > 0) {
      Rng rng = root.fork(2);
      SceneFactory f(spec.complexity, rng);
      DatasetManifest m;
      for (int i = 0; i < spec.classification; ++i) {
        const int cls = i % kSceneClasses;
        ManifestRecord r;
        r.path = tile_name("classification", i);
        r.source = source;
        r.gsd_m = 0.5;
        r.label = cls;
        r.split = split_for(i, spec.classification, spec.val_fraction);
        save(r.path, render(f.classified(cls), res).image);
        m.records.push_back(r);
      }
      corpus.classification = dest / "classification.jsonl";
      write_manifest(*corpus.classification, m);
    }

    if (spec.multilabel > 0) {
      Rng rng = root.fork(3);
      SceneFactory f(spec.complexity, rng);
      DatasetManifest m;
      for (int i = 0; i < spec.multilabel; ++i) {
        Rendered out = render(f.mixed(), res);
        std::array<bool, kObjectKinds> visible{};
        for (int l : out.labels)
          if (l > 0) visible[l - 1] = true;
        ManifestRecord r;
        r.path = tile_name("multilabel", i);
        r.source = source;
        r.gsd_m = 0.5;
        r.labels = std::vector<int>{};
        for (int k = 0; k < kObjectKinds; ++k)
          if (visible[k]) r.labels->push_back(k);
        r.split = split_for(i, spec.multilabel, spec.val_fraction);
        save(r.path, out.image);
        m.records.push_back(r);
      }
      corpus.multilabel = dest / "multilabel.jsonl";
      write_manifest(*corpus.multilabel, m);
    }

    if (spec.segmentation > 0) {
      Rng rng = root.fork(4);
      SceneFactory f(spec.complexity, rng);
      DatasetManifest m;
      for (int i = 0; i < spec.segmentation; ++i) {
        Rendered out = render(f.mixed(), res);
        ManifestRecord r;
        r.path = tile_name("segmentation", i);
        r.target = tile_name("segmentation", i, "_mask");
        r.source = source;
        r.gsd_m = 0.5;
        r.split = split_for(i, spec.segmentation, spec.val_fraction);
        save(r.path, out.image);
        write_label_png(dest / *r.target, out.labels, res, res);
        m.records.push_back(r);
      }
      corpus.segmentation = dest / "segmentation.jsonl";
      write_manifest(*corpus.segmentation, m);
    }

    if (spec.change_pairs > 0) {
      Rng rng = root.fork(5);
      SceneFactory f(spec.complexity, rng);
      DatasetManifest m;
      for (int i = 0; i < spec.change_pairs; ++i) {
        Scene first = f.mixed();
        const bool none = rng.bernoulli(spec.zero_edit_fraction);
        Scene second = f.revisit(first, none ? 0 : 1 + static_cast<int>(rng.below(3)));
        Rendered a = render(first, res), b = render(second, res);
        std::vector<int> change(a.labels.size());
        for (std::size_t k = 0; k < change.size(); ++k) change[k] = a.labels[k] != b.labels[k] ? 1 : 0;
        char key[32];
        std::snprintf(key, sizeof key, "site-%05d", i);
        ManifestRecord r;
        r.path = tile_name("change", i, "_t1");
        r.partner = tile_name("change", i, "_t2");
        r.target = tile_name("change", i, "_mask");
        r.source = source;
        r.gsd_m = 0.5;
        r.location_key = key;
        r.timestamp = "2019-06-01";
        r.split = split_for(i, spec.change_pairs, spec.val_fraction);
        save(r.path, a.image);
        save(*r.partner, b.image);
        write_label_png(dest / *r.target, change, res, res);
        m.records.push_back(r);
      }
      corpus.change = dest / "change.jsonl";
      write_manifest(*corpus.change, m);
    }

    if (spec.superres > 0) {
      Rng rng = root.fork(6);
      SceneFactory f(spec.complexity, rng);
      DatasetManifest m;
      const int hi_res = res * spec.scale_factor;
      for (int i = 0; i < spec.superres; ++i) {
        Image hi = render(f.classified(static_cast<int>(rng.below(kSceneClasses))), hi_res).image;
        Image lo = downscale_box(hi, spec.scale_factor);
        ManifestRecord r;
        r.path = tile_name("superres", i, "_lr");
        r.target = tile_name("superres", i, "_hr");
        r.source = source;
        r.gsd_m = 0.5 * spec.scale_factor;
        r.split = split_for(i, spec.superres, spec.val_fraction);
        save(r.path, lo);
        save(*r.target, hi);
        m.records.push_back(r);
      }
      corpus.superres = dest / "superres.jsonl";
      write_manifest(*corpus.superres, m);
    }
  } catch (const Error& e) {
    if (e.code() == Errc::io_error) fail(Errc::unwritable_destination, e.what());
    throw;
  }
  return corpus;
}

}  // namespace gfm
