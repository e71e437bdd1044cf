#include "saek/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>

#include "saek/checkpoint.hpp"
#include "saek/rng.hpp"

namespace saek {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(TaskKind kind) { return kind == TaskKind::classification ? "cls" : "seg"; }

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "cls") return TaskKind::classification;
  if (s == "seg") return TaskKind::segmentation;
  throw ValidationError("unknown dataset kind '" + s + "' (expected cls or seg)");
}

std::size_t Dataset::height() const { return samples.empty() ? 0 : samples.front().image.dim(1); }
std::size_t Dataset::width() const { return samples.empty() ? 0 : samples.front().image.dim(2); }

// ---- synthetic painter --------------------------------------------------------

namespace {

struct Ellipse {
  double cx, cy, a, b, angle;

  bool contains(double x, double y) const {
    const double dx = x - cx;
    const double dy = y - cy;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double u = (dx * c + dy * s) / a;
    const double v = (-dx * s + dy * c) / b;
    return u * u + v * v <= 1.0;
  }
};

std::vector<Ellipse> lesion_shapes(std::size_t label, double size, SplitMix64& rng) {
  std::vector<Ellipse> shapes;
  switch (label) {
    case 0:
      break;
    case 1: {
      const double cx = rng.uniform(0.3, 0.7) * size;
      const double cy = rng.uniform(0.3, 0.7) * size;
      for (int i = 0; i < 3; ++i) {
        shapes.push_back(Ellipse{cx + rng.uniform(-0.08, 0.08) * size, cy + rng.uniform(-0.08, 0.08) * size,
                                 rng.uniform(0.07, 0.14) * size, rng.uniform(0.04, 0.09) * size,
                                 rng.uniform(0.0, std::numbers::pi)});
      }
      break;
    }
    case 2: {
      const double r = rng.uniform(0.12, 0.18) * size;
      const double inset = r + rng.uniform(0.0, 0.05) * size;
      const double along = rng.uniform(0.25, 0.75) * size;
      double cx = along;
      double cy = along;
      switch (rng.below(4)) {
        case 0: cy = inset; break;
        case 1: cy = size - inset; break;
        case 2: cx = inset; break;
        default: cx = size - inset; break;
      }
      shapes.push_back(Ellipse{cx, cy, r, r, 0.0});
      break;
    }
    case 3: {
      const double r = rng.uniform(0.05, 0.08) * size;
      shapes.push_back(Ellipse{size / 2 + rng.uniform(-0.07, 0.07) * size, size / 2 + rng.uniform(-0.07, 0.07) * size,
                               r, r, 0.0});
      break;
    }
    default:
      throw ValidationError("synthetic label must be in [0, 4), got " + std::to_string(label));
  }
  return shapes;
}

std::vector<std::uint8_t> rasterize(const std::vector<Ellipse>& shapes, std::size_t size, std::uint8_t value) {
  std::vector<std::uint8_t> mask(size * size, 0);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5;
      const double py = static_cast<double>(y) + 0.5;
      for (const auto& e : shapes) {
        if (e.contains(px, py)) {
          mask[y * size + x] = value;
          break;
        }
      }
    }
  }
  return mask;
}

}  // namespace

Sample synth_sample(std::size_t label, std::size_t size, std::uint64_t seed, std::uint64_t id) {
  SplitMix64 rng(seed ^ id);
  std::vector<std::uint8_t> mask;
  if (label == 0) {
    mask.assign(size * size, 0);
  } else {
    // Redraw until the lesion covers an allowed fraction of the image.
    for (int attempt = 0;; ++attempt) {
      mask = rasterize(lesion_shapes(label, static_cast<double>(size), rng), size, static_cast<std::uint8_t>(label));
      const auto painted = static_cast<double>(std::count_if(mask.begin(), mask.end(), [](auto v) { return v != 0; }));
      const double fraction = painted / static_cast<double>(mask.size());
      if (fraction >= kLesionMinFraction && fraction <= kLesionMaxFraction) break;
      if (attempt == 1000) throw ValidationError("could not place a lesion within the size bounds");
    }
  }
  Tensor image(Shape{3, size, size});
  auto px = image.data();
  const std::size_t plane = size * size;
  for (std::size_t i = 0; i < plane; ++i) {
    double v = rng.gaussian(kBackgroundMean, kBackgroundSd);
    v = std::clamp(v, 0.0, kBackgroundMax);
    if (mask[i] != 0) v = std::clamp(rng.gaussian(kLesionMean, kLesionSd), 0.6, 1.0);
    px[i] = px[plane + i] = px[2 * plane + i] = static_cast<float>(v);
  }
  return Sample{std::move(image), label, std::move(mask), id};
}

Dataset synth_classification(std::size_t n_per_class, std::size_t size, std::uint64_t seed) {
  if (size < 32) throw ValidationError("classification images need size >= 32, got " + std::to_string(size));
  if (n_per_class == 0) throw ValidationError("n_per_class must be >= 1");
  Dataset d;
  d.kind = TaskKind::classification;
  d.samples.resize(4 * n_per_class);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    d.samples[i] = synth_sample(i % 4, size, seed, i);
    d.samples[i].mask.clear();
  }
  return d;
}

Dataset synth_segmentation(std::size_t n, std::size_t size, std::uint64_t seed) {
  if (size == 0 || size % 16 != 0) {
    throw ValidationError("segmentation images need a size divisible by 16, got " + std::to_string(size));
  }
  if (n == 0) throw ValidationError("n must be >= 1");
  Dataset d;
  d.kind = TaskKind::segmentation;
  d.samples.resize(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) d.samples[i] = synth_sample(i % 4, size, seed, i);
  return d;
}

// ---- PGM ------------------------------------------------------------------------

Tensor decode_pgm(const std::vector<std::uint8_t>& bytes, PgmMode mode) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw IoError(std::string("PGM header: missing ") + what);
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > (1u << 24)) throw IoError(std::string("PGM header: ") + what + " too large");
    }
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw IoError("bad PGM magic (only binary P5 is read)");
  pos = 2;
  const std::size_t w = number("width");
  const std::size_t h = number("height");
  const std::size_t maxval = number("maxval");
  if (w == 0 || h == 0) throw IoError("PGM has a zero extent");
  if (maxval != 255) throw IoError("PGM maxval must be 255, got " + std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw IoError("PGM header not terminated");
  ++pos;
  if (bytes.size() - pos < w * h) {
    throw IoError("PGM payload truncated: " + std::to_string(bytes.size() - pos) + " of " + std::to_string(w * h) +
                  " bytes");
  }
  Tensor out(Shape{h, w});
  auto d = out.data();
  for (std::size_t i = 0; i < w * h; ++i) {
    const std::uint8_t b = bytes[pos + i];
    d[i] = mode == PgmMode::image ? static_cast<float>(b / 255.0) : static_cast<float>(b);
  }
  return out;
}

Tensor read_pgm(const fs::path& path, PgmMode mode) { return decode_pgm(read_file(path), mode); }

std::vector<std::uint8_t> encode_pgm(const Tensor& image, PgmMode mode) {
  std::size_t h = 0;
  std::size_t w = 0;
  if (image.rank() == 2) {
    h = image.dim(0);
    w = image.dim(1);
  } else if (image.rank() == 3) {
    h = image.dim(1);
    w = image.dim(2);
  } else {
    throw ShapeError("PGM images are H x W or C x H x W, got " + to_string(image.shape()));
  }
  const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto d = image.data();
  for (std::size_t i = 0; i < h * w; ++i) {
    const double v = d[i];
    if (!std::isfinite(v)) throw NumericError("non-finite pixel at index " + std::to_string(i));
    const double scaled = mode == PgmMode::image ? std::round(v * 255.0) : std::round(v);
    out.push_back(static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0)));
  }
  return out;
}

void write_pgm(const fs::path& path, const Tensor& image, PgmMode mode) { write_file(path, encode_pgm(image, mode)); }

// ---- preprocessing --------------------------------------------------------------

Normalize normalize_from_string(const std::string& s) {
  if (s == "none") return Normalize::none;
  if (s == "minmax01") return Normalize::minmax01;
  if (s == "zscore") return Normalize::zscore;
  throw ValidationError("unknown normalization '" + s + "' (expected none, minmax01 or zscore)");
}

const char* to_string(Normalize n) {
  switch (n) {
    case Normalize::none: return "none";
    case Normalize::minmax01: return "minmax01";
    case Normalize::zscore: return "zscore";
  }
  return "?";
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3) throw ShapeError("resize expects C x H x W, got " + to_string(image.shape()));
  const std::size_t c = image.dim(0);
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  if (height == 0 || width == 0) throw ValidationError("resize target must be positive");
  if (h == height && w == width) return image;
  struct Tap {
    std::size_t i0, i1;
    double t;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> v(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      const std::size_t i1 = std::min(i0 + 1, in - 1);
      v[o] = Tap{i0, i1, src - static_cast<double>(i0)};
    }
    return v;
  };
  const auto ty = taps(h, height);
  const auto tx = taps(w, width);
  Tensor out(Shape{c, height, width});
  const auto src = image.data();
  auto dst = out.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* p = src.data() + ch * h * w;
    for (std::size_t y = 0; y < height; ++y) {
      const Tap& a = ty[y];
      for (std::size_t x = 0; x < width; ++x) {
        const Tap& b = tx[x];
        const double top = p[a.i0 * w + b.i0] * (1.0 - b.t) + p[a.i0 * w + b.i1] * b.t;
        const double bottom = p[a.i1 * w + b.i0] * (1.0 - b.t) + p[a.i1 * w + b.i1] * b.t;
        dst[(ch * height + y) * width + x] = static_cast<float>(top * (1.0 - a.t) + bottom * a.t);
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> resize_nearest(const std::vector<std::uint8_t>& mask, std::size_t h, std::size_t w,
                                         std::size_t height, std::size_t width) {
  if (mask.size() != h * w) throw ShapeError("mask size does not match its extents");
  std::vector<std::uint8_t> out(height * width);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = std::min(h - 1, static_cast<std::size_t>((y + 0.5) * h / height));
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = std::min(w - 1, static_cast<std::size_t>((x + 0.5) * w / width));
      out[y * width + x] = mask[sy * w + sx];
    }
  }
  return out;
}

Tensor preprocess(const Tensor& image, std::size_t target, Normalize mode) {
  Tensor out = target == 0 ? image : resize_bilinear(image, target, target);
  auto d = out.data();
  if (mode == Normalize::none) return out;
  if (mode == Normalize::minmax01) {
    const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
    const double mn = *lo;
    const double range = static_cast<double>(*hi) - mn;
    for (auto& v : d) v = range > 0 ? static_cast<float>((v - mn) / range) : 0.0f;
    return out;
  }
  double mean = 0.0;
  for (float v : d) mean += v;
  mean /= static_cast<double>(d.size());
  double var = 0.0;
  for (float v : d) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(d.size()));
  for (auto& v : d) v = sd > 0 ? static_cast<float>((v - mean) / sd) : 0.0f;
  return out;
}

// ---- split ----------------------------------------------------------------------

Split split_80_20(std::size_t n, std::uint64_t seed, const std::vector<std::size_t>* labels) {
  if (n < 5) throw ValidationError("split needs at least 5 samples, got " + std::to_string(n));
  if (labels && labels->size() != n) throw ValidationError("split: label count does not match sample count");
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[labels ? (*labels)[i] : 0].push_back(i);
  Split s;
  for (auto& [label, idx] : groups) {
    SplitMix64 rng(derive_seed(seed, label));
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    const std::size_t cut = (idx.size() * 4 + 4) / 5;
    s.train.insert(s.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cut));
    s.test.insert(s.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(cut), idx.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

// ---- manifest -------------------------------------------------------------------

namespace {

std::string numbered(const char* dir, std::uint64_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s/%05llu.pgm", dir, static_cast<unsigned long long>(id));
  return buf;
}

}  // namespace

void write_dataset(const fs::path& root, const Dataset& data, const Split& split, const json& generator) {
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  if (!ec && data.kind == TaskKind::segmentation) fs::create_directories(root / "masks", ec);
  if (ec) throw IoError("cannot create '" + root.string() + "': " + ec.message());

  std::vector<std::string> assignment(data.samples.size(), "train");
  for (auto i : split.test) assignment.at(i) = "test";

  json samples = json::array();
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    json entry{{"id", s.id}, {"image", numbered("images", s.id)}, {"label", s.label}, {"split", assignment[i]}};
    write_pgm(root / entry["image"].get<std::string>(), s.image, PgmMode::image);
    if (data.kind == TaskKind::segmentation) {
      entry["mask"] = numbered("masks", s.id);
      Tensor m(Shape{data.height(), data.width()});
      for (std::size_t p = 0; p < s.mask.size(); ++p) m[p] = s.mask[p];
      write_pgm(root / entry["mask"].get<std::string>(), m, PgmMode::mask);
    }
    samples.push_back(std::move(entry));
  }
  json manifest{{"kind", to_string(data.kind)},
                {"num_classes", data.num_classes},
                {"height", data.height()},
                {"width", data.width()},
                {"generator", generator},
                {"samples", std::move(samples)}};
  const std::string text = manifest.dump(2) + "\n";
  write_file(root / "manifest.json", std::vector<std::uint8_t>(text.begin(), text.end()));
}

LoadedDataset load_dataset(const fs::path& where) {
  const fs::path manifest_path = fs::is_directory(where) ? where / "manifest.json" : where;
  const fs::path root = manifest_path.parent_path();
  const auto bytes = read_file(manifest_path);
  json doc;
  try {
    doc = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw ValidationError("manifest '" + manifest_path.string() + "' is not valid JSON: " + e.what());
  }
  LoadedDataset out;
  try {
    out.data.kind = task_kind_from_string(doc.at("kind").get<std::string>());
    out.data.num_classes = doc.value("num_classes", std::size_t{4});
    const auto& list = doc.at("samples");
    for (std::size_t i = 0; i < list.size(); ++i) {
      const json& e = list[i];
      Sample s;
      s.id = e.at("id").get<std::uint64_t>();
      s.label = e.at("label").get<std::size_t>();
      if (s.label >= out.data.num_classes) {
        throw ValidationError("sample " + std::to_string(s.id) + " has label " + std::to_string(s.label) +
                              " outside [0, " + std::to_string(out.data.num_classes) + ")");
      }
      const Tensor gray = read_pgm(root / e.at("image").get<std::string>(), PgmMode::image);
      const std::size_t h = gray.dim(0);
      const std::size_t w = gray.dim(1);
      s.image = Tensor(Shape{3, h, w});
      for (std::size_t c = 0; c < 3; ++c) std::copy(gray.data().begin(), gray.data().end(), s.image.data().begin() + c * h * w);
      if (out.data.kind == TaskKind::segmentation) {
        const Tensor m = read_pgm(root / e.at("mask").get<std::string>(), PgmMode::mask);
        if (m.shape() != gray.shape()) throw ValidationError("mask and image extents differ for sample " + std::to_string(s.id));
        s.mask.resize(m.size());
        for (std::size_t p = 0; p < m.size(); ++p) {
          if (m[p] >= static_cast<float>(out.data.num_classes)) {
            throw ValidationError("mask value " + std::to_string(static_cast<int>(m[p])) + " out of range in sample " +
                                  std::to_string(s.id));
          }
          s.mask[p] = static_cast<std::uint8_t>(m[p]);
        }
      }
      if (!out.data.samples.empty() && s.image.shape() != out.data.samples.front().image.shape()) {
        throw ValidationError("sample " + std::to_string(s.id) + " has different extents from the first sample");
      }
      const std::string split = e.value("split", "train");
      if (split == "train") {
        out.split.train.push_back(i);
      } else if (split == "test") {
        out.split.test.push_back(i);
      } else {
        throw ValidationError("sample " + std::to_string(s.id) + " has unknown split '" + split + "'");
      }
      out.data.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw ValidationError("manifest '" + manifest_path.string() + "': " + e.what());
  }
  if (out.data.samples.empty()) throw ValidationError("manifest lists no samples");
  return out;
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.kind = data.kind;
  out.num_classes = data.num_classes;
  out.samples.reserve(indices.size());
  for (auto i : indices) out.samples.push_back(data.samples.at(i));
  return out;
}

}  // namespace saek
