#include "gfm/geodata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <map>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "gfm/error.hpp"

namespace gfm {

// ---------------------------------------------------------------------------
// image helpers

Image read_png(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  check(!m.empty(), Errc::io_error, "cannot read image " + path.string());
  check(m.depth() == CV_8U, Errc::io_error, path.string() + ": only 8-bit images are supported");
  const int c = m.channels();
  Image img(m.rows, m.cols, c);
  for (int y = 0; y < m.rows; ++y) {
    const std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x)
      for (int k = 0; k < c; ++k) {
        // OpenCV stores BGR(A); images here are RGB(A)
        const int src = (c >= 3 && k < 3) ? 2 - k : k;
        img.at(y, x, k) = static_cast<float>(row[x * c + src]) / 255.0f;
      }
  }
  return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  check(image.channels == 1 || image.channels == 3 || image.channels == 4, Errc::io_error,
        "PNG output supports 1, 3 or 4 channels, got " + std::to_string(image.channels));
  const int c = image.channels;
  cv::Mat m(image.height, image.width, CV_8UC(c));
  for (int y = 0; y < image.height; ++y) {
    std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width; ++x)
      for (int k = 0; k < c; ++k) {
        const int dst = (c >= 3 && k < 3) ? 2 - k : k;
        const float v = std::clamp(image.at(y, x, k), 0.0f, 1.0f);
        row[x * c + dst] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  check(cv::imwrite(path.string(), m), Errc::io_error, "cannot write " + path.string());
}

std::vector<int> read_label_png(const std::filesystem::path& path, int* height, int* width) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  check(!m.empty() && m.channels() == 1 && m.depth() == CV_8U, Errc::io_error,
        "cannot read single-channel label map " + path.string());
  std::vector<int> labels(static_cast<std::size_t>(m.rows) * m.cols);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) labels[static_cast<std::size_t>(y) * m.cols + x] = m.at<std::uint8_t>(y, x);
  if (height) *height = m.rows;
  if (width) *width = m.cols;
  return labels;
}

void write_label_png(const std::filesystem::path& path, const std::vector<int>& labels, int height, int width) {
  check(labels.size() == static_cast<std::size_t>(height) * width, Errc::shape_mismatch, "label map size");
  cv::Mat m(height, width, CV_8UC1);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      m.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(std::clamp(labels[static_cast<std::size_t>(y) * width + x], 0, 255));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  check(cv::imwrite(path.string(), m), Errc::io_error, "cannot write " + path.string());
}

Image quantize8(const Image& image) {
  Image out = image;
  for (auto& v : out.pixels) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  return out;
}

Image downscale_box(const Image& image, int factor) {
  check(factor >= 1 && image.height % factor == 0 && image.width % factor == 0, Errc::scale_mismatch,
        "image " + std::to_string(image.height) + "x" + std::to_string(image.width) + " not divisible by " +
            std::to_string(factor));
  Image out(image.height / factor, image.width / factor, image.channels);
  const int area = factor * factor;
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < image.channels; ++c) {
        long sum = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            sum += std::lround(std::clamp(image.at(y * factor + dy, x * factor + dx, c), 0.0f, 1.0f) * 255.0f);
        // round half up in integer arithmetic
        const long q = (2 * sum + area) / (2 * area);
        out.at(y, x, c) = static_cast<float>(q) / 255.0f;
      }
  return out;
}

Tensor<float> stack_images(const std::vector<Image>& images) {
  check(!images.empty(), Errc::empty_image, "no images to stack");
  const auto& f = images.front();
  Tensor<float> t({images.size(), static_cast<std::size_t>(f.height), static_cast<std::size_t>(f.width),
                   static_cast<std::size_t>(f.channels)});
  const std::size_t per = f.pixels.size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    check(images[i].height == f.height && images[i].width == f.width && images[i].channels == f.channels,
          Errc::shape_mismatch, "images in a batch must share a shape");
    std::copy(images[i].pixels.begin(), images[i].pixels.end(), t.data.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return t;
}

// ---------------------------------------------------------------------------
// manifests

void to_json(nlohmann::json& j, const ManifestRecord& r) {
  j = nlohmann::json{{"path", r.path}, {"source", r.source}, {"gsd_m", r.gsd_m}};
  if (r.label) j["label"] = *r.label;
  if (r.labels) j["labels"] = *r.labels;
  if (r.location_key) j["location_key"] = *r.location_key;
  if (r.timestamp) j["timestamp"] = *r.timestamp;
  if (r.target) j["target"] = *r.target;
  if (r.partner) j["partner"] = *r.partner;
  if (r.split) j["split"] = *r.split;
}

void from_json(const nlohmann::json& j, ManifestRecord& r) {
  r = ManifestRecord{};
  r.path = j.at("path").get<std::string>();
  r.source = j.value("source", std::string{});
  r.gsd_m = j.at("gsd_m").get<double>();
  if (j.contains("label") && !j["label"].is_null()) {
    if (j["label"].is_array())
      r.labels = j["label"].get<std::vector<int>>();
    else
      r.label = j["label"].get<int>();
  }
  if (j.contains("labels") && !j["labels"].is_null()) r.labels = j["labels"].get<std::vector<int>>();
  auto opt = [&](const char* key, std::optional<std::string>& field) {
    if (j.contains(key) && !j[key].is_null()) field = j[key].get<std::string>();
  };
  opt("location_key", r.location_key);
  opt("timestamp", r.timestamp);
  opt("target", r.target);
  opt("partner", r.partner);
  opt("split", r.split);
}

std::filesystem::path DatasetManifest::resolve(const std::string& p) const {
  std::filesystem::path path(p);
  return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
}

DatasetManifest DatasetManifest::split(const std::string& name) const {
  DatasetManifest out;
  out.base_dir = base_dir;
  for (const auto& r : records)
    if (r.split.value_or("train") == name) out.records.push_back(r);
  return out;
}

std::vector<std::vector<std::size_t>> DatasetManifest::temporal_groups() const {
  std::map<std::string, std::vector<std::size_t>> by_key;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].location_key) by_key[*records[i].location_key].push_back(i);
  std::vector<std::vector<std::size_t>> groups;
  for (auto& [key, idx] : by_key) {
    std::set<std::string> stamps;
    for (auto i : idx) stamps.insert(records[i].timestamp.value_or(""));
    if (idx.size() >= 2 && stamps.size() >= 2) groups.push_back(std::move(idx));
  }
  return groups;
}

void DatasetManifest::validate() const {
  std::set<std::string> seen;
  for (const auto& r : records) {
    check(seen.insert(r.path).second, Errc::duplicate_path, "path listed twice: " + r.path);
    check(r.gsd_m > 0 && std::isfinite(r.gsd_m), Errc::nonpositive_gsd,
          r.path + " has gsd_m " + std::to_string(r.gsd_m));
  }
}

DatasetManifest parse_manifest(const std::string& text, std::filesystem::path base_dir) {
  DatasetManifest m;
  m.base_dir = std::move(base_dir);
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      m.records.push_back(nlohmann::json::parse(line).get<ManifestRecord>());
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::parse_error, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  m.validate();
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  check(static_cast<bool>(is), Errc::parse_error, "cannot open manifest " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  check(static_cast<bool>(os), Errc::unwritable_destination, "cannot write " + path.string());
  for (const auto& r : manifest.records) os << nlohmann::json(r).dump() << '\n';
}

// ---------------------------------------------------------------------------
// augmentation

AugmentParams draw_augment(int height, int width, Rng& rng) {
  AugmentParams p;
  const double area = static_cast<double>(height) * width;
  bool found = false;
  for (int attempt = 0; attempt < 10 && !found; ++attempt) {
    const double target = area * rng.uniform(0.67, 1.0);
    const double log_ratio = rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0));
    const double ratio = std::exp(log_ratio);
    const double w = std::round(std::sqrt(target * ratio));
    const double h = std::round(std::sqrt(target / ratio));
    if (w >= 1 && h >= 1 && w <= width && h <= height) {
      p.crop_h = h;
      p.crop_w = w;
      p.crop_y = static_cast<double>(rng.below(static_cast<std::uint64_t>(height - h) + 1));
      p.crop_x = static_cast<double>(rng.below(static_cast<std::uint64_t>(width - w) + 1));
      found = true;
    }
  }
  if (!found) {
    p.crop_h = height;
    p.crop_w = width;
  }
  p.flip = rng.bernoulli(0.5);
  return p;
}

namespace {

// Interpolates as a + f * (b - a) so that equal neighbours reproduce exactly.
Image sample_bilinear(const Image& src, double y0, double x0, double h, double w, int out_h, int out_w, bool flip) {
  Image out(out_h, out_w, src.channels);
  for (int oy = 0; oy < out_h; ++oy) {
    double sy = y0 + (oy + 0.5) * h / out_h - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(src.height - 1));
    const int y_lo = static_cast<int>(std::floor(sy));
    const int y_hi = std::min(y_lo + 1, src.height - 1);
    const float fy = static_cast<float>(sy - y_lo);
    for (int ox = 0; ox < out_w; ++ox) {
      double sx = x0 + (ox + 0.5) * w / out_w - 0.5;
      sx = std::clamp(sx, 0.0, static_cast<double>(src.width - 1));
      const int x_lo = static_cast<int>(std::floor(sx));
      const int x_hi = std::min(x_lo + 1, src.width - 1);
      const float fx = static_cast<float>(sx - x_lo);
      const int dx = flip ? out_w - 1 - ox : ox;
      for (int c = 0; c < src.channels; ++c) {
        const float a = src.at(y_lo, x_lo, c), b = src.at(y_lo, x_hi, c);
        const float cc = src.at(y_hi, x_lo, c), d = src.at(y_hi, x_hi, c);
        const float top = a + fx * (b - a);
        const float bottom = cc + fx * (d - cc);
        out.at(oy, dx, c) = top + fy * (bottom - top);
      }
    }
  }
  return out;
}

}  // namespace

Image apply_augment(const Image& image, const AugmentParams& params, int out_size) {
  return sample_bilinear(image, params.crop_y, params.crop_x, params.crop_h, params.crop_w, out_size, out_size,
                         params.flip);
}

Image augment(const Image& image, Rng& rng, int out_size) {
  return apply_augment(image, draw_augment(image.height, image.width, rng), out_size);
}

Image resize_bilinear(const Image& image, int out_h, int out_w) {
  return sample_bilinear(image, 0, 0, image.height, image.width, out_h, out_w, false);
}

// ---------------------------------------------------------------------------
// entropy

double image_entropy(const Image& image) {
  check(!image.empty() && image.channels > 0, Errc::empty_image, "image has no pixels");
  std::array<std::size_t, 256> hist{};
  const std::size_t n = static_cast<std::size_t>(image.height) * image.width;
  for (std::size_t i = 0; i < n; ++i) {
    const float* px = image.pixels.data() + i * image.channels;
    double luma = px[0];
    if (image.channels >= 3) luma = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    const long q = std::lround(std::clamp(luma, 0.0, 1.0) * 255.0);
    ++hist[static_cast<std::size_t>(q)];
  }
  double h = 0.0;
  for (auto count : hist) {
    if (!count) continue;
    const double p = static_cast<double>(count) / static_cast<double>(n);
    h -= p * std::log2(p);
  }
  return h;
}

EntropyReport dataset_entropy_report(const DatasetManifest& manifest, std::size_t sample_n, Rng& rng) {
  check(!manifest.records.empty(), Errc::empty_manifest, "manifest has no records");
  check(sample_n >= 1 && sample_n <= manifest.records.size(), Errc::sample_too_large,
        "sample of " + std::to_string(sample_n) + " from " + std::to_string(manifest.records.size()) + " records");
  std::vector<std::size_t> order(manifest.records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < sample_n; ++i)
    std::swap(order[i], order[i + static_cast<std::size_t>(rng.below(order.size() - i))]);
  EntropyReport report;
  report.sample_size = sample_n;
  double sum = 0;
  for (std::size_t i = 0; i < sample_n; ++i) {
    const auto& rec = manifest.records[order[i]];
    const double e = image_entropy(read_png(manifest.resolve(rec.path)));
    report.entropies.push_back(e);
    report.paths.push_back(rec.path);
    sum += e;
  }
  report.mean_entropy = sum / static_cast<double>(sample_n);
  return report;
}

}  // namespace gfm
