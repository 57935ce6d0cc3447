#include "sflpl/data.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <iterator>
#include <numeric>
#include <random>
#include <stdexcept>

#include "sflpl/poisoning.h"

namespace sflpl {
namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t read_be32(std::span<const std::uint8_t> bytes,
                        std::size_t offset, const char* file) {
  if (offset + 4 > bytes.size()) {
    throw std::runtime_error(std::string(file) +
                             ": truncated header at byte offset " +
                             std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) |
         (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) |
         std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void check_payload(std::size_t have, std::size_t header, std::size_t payload,
                   const char* file) {
  if (have < header + payload) {
    throw std::runtime_error(std::string(file) +
                             ": truncated payload, data ends at byte offset " +
                             std::to_string(have) + ", expected " +
                             std::to_string(header + payload));
  }
  if (have > header + payload) {
    throw std::runtime_error(std::string(file) +
                             ": unexpected trailing data at byte offset " +
                             std::to_string(header + payload));
  }
}

double uniform_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Box-Muller; spelled out so datasets are identical across standard libraries.
double gaussian(std::mt19937_64& rng) {
  double u1;
  do {
    u1 = uniform_unit(rng);
  } while (u1 <= 0.0);
  const double u2 = uniform_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.name = name;
  out.num_classes = num_classes;
  out.inputs = inputs.gather(indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  return out;
}

void Dataset::validate() const {
  if (labels.empty()) throw std::invalid_argument(name + ": dataset is empty");
  if (inputs.rank() < 2 || inputs.dim(0) != labels.size()) {
    throw std::invalid_argument(name + ": inputs " +
                                shape_string(inputs.shape()) + " vs " +
                                std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw std::invalid_argument(name + ": label " + std::to_string(labels[i]) +
                                  " at row " + std::to_string(i) +
                                  " outside [0, " + std::to_string(num_classes) +
                                  ")");
    }
  }
}

Dataset parse_mnist_idx(std::span<const std::uint8_t> image_bytes,
                        std::span<const std::uint8_t> label_bytes) {
  const std::uint32_t image_magic = read_be32(image_bytes, 0, "image file");
  if (image_magic != kIdxImageMagic) {
    throw std::runtime_error("image file: bad magic number " +
                             std::to_string(image_magic) +
                             " at byte offset 0 (expected 2051)");
  }
  const std::uint32_t label_magic = read_be32(label_bytes, 0, "label file");
  if (label_magic != kIdxLabelMagic) {
    throw std::runtime_error("label file: bad magic number " +
                             std::to_string(label_magic) +
                             " at byte offset 0 (expected 2049)");
  }
  const std::size_t count = read_be32(image_bytes, 4, "image file");
  const std::size_t rows = read_be32(image_bytes, 8, "image file");
  const std::size_t cols = read_be32(image_bytes, 12, "image file");
  const std::size_t label_count = read_be32(label_bytes, 4, "label file");
  if (label_count != count) {
    throw std::runtime_error("label file: count " + std::to_string(label_count) +
                             " at byte offset 4 does not match " +
                             std::to_string(count) + " images");
  }
  if (count == 0 || rows == 0 || cols == 0) {
    throw std::runtime_error("image file: empty dimensions at byte offset 4");
  }
  const std::size_t pixels = rows * cols;
  check_payload(image_bytes.size(), 16, count * pixels, "image file");
  check_payload(label_bytes.size(), 8, count, "label file");

  Dataset data;
  data.name = "mnist";
  data.num_classes = 10;
  data.inputs = Tensor({count, pixels});
  auto dst = data.inputs.data();
  for (std::size_t i = 0; i < count * pixels; ++i) {
    dst[i] = static_cast<double>(image_bytes[16 + i]) / 255.0;
  }
  data.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int label = label_bytes[8 + i];
    if (label > 9) {
      throw std::runtime_error("label file: label " + std::to_string(label) +
                               " at byte offset " + std::to_string(8 + i) +
                               " outside 0-9");
    }
    data.labels[i] = label;
  }
  return data;
}

Dataset load_mnist_idx(const std::string& image_path,
                       const std::string& label_path) {
  const auto images = read_file(image_path);
  const auto labels = read_file(label_path);
  return parse_mnist_idx(images, labels);
}

std::vector<std::uint8_t> encode_idx_images(const Dataset& data,
                                            std::size_t rows,
                                            std::size_t cols) {
  if (rows * cols != data.features()) {
    throw std::invalid_argument("encode_idx_images: " + std::to_string(rows) +
                                "x" + std::to_string(cols) + " != " +
                                std::to_string(data.features()) + " features");
  }
  std::vector<std::uint8_t> out;
  out.reserve(16 + data.inputs.size());
  write_be32(out, kIdxImageMagic);
  write_be32(out, static_cast<std::uint32_t>(data.size()));
  write_be32(out, static_cast<std::uint32_t>(rows));
  write_be32(out, static_cast<std::uint32_t>(cols));
  for (double v : data.inputs.data()) {
    out.push_back(static_cast<std::uint8_t>(
        std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(const Dataset& data) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + data.size());
  write_be32(out, kIdxLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(data.size()));
  for (int y : data.labels) out.push_back(static_cast<std::uint8_t>(y));
  return out;
}

int ecg_class_index(std::string_view token) {
  token = trim(token);
  const auto pos =
      token.size() == 1 ? kEcgClassTokens.find(token.front()) : std::string_view::npos;
  if (pos == std::string_view::npos) {
    throw std::invalid_argument("unknown ECG class token '" +
                                std::string(token) + "' (expected N, L, R, A or V)");
  }
  return static_cast<int>(pos);
}

Dataset parse_ecg_csv(std::istream& in, std::size_t features) {
  Dataset data;
  data.name = "ecg";
  data.num_classes = static_cast<int>(kEcgClassTokens.size());
  std::vector<double> values;
  std::string line;
  std::size_t row = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++row;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    const auto fields = split_fields(view);
    double probe = 0.0;
    if (first_content) {
      first_content = false;
      if (!parse_double(fields.front(), probe)) continue;  // header
    }
    if (fields.size() != features + 1) {
      throw std::runtime_error("ECG CSV row " + std::to_string(row) + ": " +
                               std::to_string(fields.size()) +
                               " columns, expected " +
                               std::to_string(features + 1));
    }
    for (std::size_t f = 0; f < features; ++f) {
      double v = 0.0;
      if (!parse_double(fields[f], v)) {
        throw std::runtime_error("ECG CSV row " + std::to_string(row) +
                                 ": column " + std::to_string(f + 1) +
                                 " is not a finite number");
      }
      values.push_back(v);
    }
    try {
      data.labels.push_back(ecg_class_index(fields.back()));
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error("ECG CSV row " + std::to_string(row) + ": " +
                               e.what());
    }
  }
  if (data.labels.empty()) throw std::runtime_error("ECG CSV holds no rows");
  data.inputs = Tensor({data.labels.size(), features}, std::move(values));
  return data;
}

Dataset load_ecg_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return parse_ecg_csv(in);
}

Dataset synth_dataset(int num_classes, std::size_t features,
                      std::size_t n_per_class, std::uint64_t seed,
                      const SynthOptions& options) {
  if (num_classes <= 0 || features == 0 || n_per_class == 0) {
    throw std::invalid_argument("synth_dataset: all sizes must be positive");
  }
  const std::size_t latent = std::min(options.latent_dim, features);
  if (latent == 0) throw std::invalid_argument("synth_dataset: latent_dim is 0");
  std::mt19937_64 rng(seed);

  // Class centres, resampled until every pair is far enough apart.
  std::vector<std::vector<double>> centres;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<double> centre(latent);
    for (int attempt = 0;; ++attempt) {
      const double widen = 1.0 + 0.01 * attempt;
      for (double& v : centre) v = options.centre_spread * widen * gaussian(rng);
      bool ok = true;
      for (const auto& other : centres) {
        if (euclidean_distance(centre, other) < options.min_separation) {
          ok = false;
          break;
        }
      }
      if (ok) break;
    }
    centres.push_back(std::move(centre));
  }

  // Orthonormal embedding columns by Gram-Schmidt.
  std::vector<std::vector<double>> basis;
  while (basis.size() < latent) {
    std::vector<double> v(features);
    for (double& x : v) x = gaussian(rng);
    for (const auto& b : basis) {
      const double dot = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
      for (std::size_t i = 0; i < features; ++i) v[i] -= dot * b[i];
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm < 1e-6) continue;
    for (double& x : v) x /= norm;
    basis.push_back(std::move(v));
  }

  const double noise_sd = options.feature_noise *
                          std::sqrt(static_cast<double>(latent) /
                                    static_cast<double>(features));
  const double scale = std::sqrt(
      static_cast<double>(features) /
      (static_cast<double>(latent) *
       (options.centre_spread * options.centre_spread + 1.0)));

  Dataset data;
  data.name = "synth";
  data.num_classes = num_classes;
  const std::size_t total = n_per_class * static_cast<std::size_t>(num_classes);
  data.inputs = Tensor({total, features});
  data.labels.reserve(total);
  std::vector<double> z(latent);
  std::size_t row = 0;
  for (std::size_t i = 0; i < n_per_class; ++i) {
    for (int c = 0; c < num_classes; ++c, ++row) {
      for (std::size_t d = 0; d < latent; ++d) z[d] = centres[c][d] + gaussian(rng);
      auto x = data.inputs.data().subspan(row * features, features);
      for (std::size_t f = 0; f < features; ++f) x[f] = noise_sd * gaussian(rng);
      for (std::size_t d = 0; d < latent; ++d) {
        for (std::size_t f = 0; f < features; ++f) x[f] += z[d] * basis[d][f];
      }
      for (double& v : x) v *= scale;
      data.labels.push_back(c);
    }
  }
  return data;
}

namespace {

struct Point {
  double x;
  double y;
};
using Stroke = std::vector<Point>;

// Ellipse arc in glyph-box coordinates (y grows downwards), degrees.
Stroke arc(double cx, double cy, double rx, double ry, double a0, double a1,
           int steps = 16) {
  Stroke s;
  for (int i = 0; i <= steps; ++i) {
    const double a = (a0 + (a1 - a0) * i / steps) * M_PI / 180.0;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return s;
}

Stroke join(Stroke a, const Stroke& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

const std::vector<std::vector<Stroke>>& digit_templates() {
  static const std::vector<std::vector<Stroke>> templates = {
      {arc(0.5, 0.5, 0.3, 0.42, 0, 360, 24)},
      {{{0.36, 0.24}, {0.54, 0.08}, {0.5, 0.92}}},
      {join(arc(0.5, 0.32, 0.24, 0.22, 180, 390), {{0.22, 0.92}, {0.8, 0.92}})},
      {arc(0.48, 0.3, 0.24, 0.2, 200, 450), arc(0.48, 0.71, 0.26, 0.21, -90, 160)},
      {{{0.62, 0.92}, {0.62, 0.08}, {0.18, 0.66}, {0.82, 0.66}}},
      {join({{0.76, 0.08}, {0.32, 0.08}, {0.28, 0.44}},
            arc(0.48, 0.65, 0.26, 0.24, -140, 150))},
      {{{0.7, 0.1}, {0.45, 0.3}, {0.3, 0.55}, {0.27, 0.7}},
       arc(0.5, 0.7, 0.23, 0.22, 0, 360, 20)},
      {{{0.2, 0.1}, {0.8, 0.1}, {0.42, 0.92}}},
      {arc(0.5, 0.28, 0.2, 0.19, 0, 360, 20), arc(0.5, 0.71, 0.24, 0.22, 0, 360, 20)},
      {arc(0.5, 0.32, 0.22, 0.21, 0, 360, 20), {{0.72, 0.32}, {0.66, 0.92}}},
  };
  return templates;
}

double segment_distance(double px, double py, Point a, Point b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.x + t * dx - px;
  const double ey = a.y + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

constexpr std::size_t kDigitSide = 28;
constexpr double kGlyphBox = 20.0;  // pixels spanned by the unit glyph box

void draw_digit(int digit, std::mt19937_64& rng, const DigitSynthOptions& o,
                std::span<double> pixels) {
  const double theta = o.rotation_sd_deg * gaussian(rng) * M_PI / 180.0;
  const double shear = o.shear_sd * gaussian(rng);
  const double sx = 1.0 + o.scale_sd * gaussian(rng);
  const double sy = 1.0 + o.scale_sd * gaussian(rng);
  const double tx = o.shift_sd_px * gaussian(rng);
  const double ty = o.shift_sd_px * gaussian(rng);
  const double half_width =
      0.5 * (o.min_stroke_px + (o.max_stroke_px - o.min_stroke_px) * uniform_unit(rng));
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double centre = kDigitSide / 2.0;

  auto to_pixels = [&](Point p) {
    const double x = sx * ((p.x - 0.5) + shear * (p.y - 0.5));
    const double y = sy * (p.y - 0.5);
    return Point{centre + tx + kGlyphBox * (c * x - s * y),
                 centre + ty + kGlyphBox * (s * x + c * y)};
  };

  std::fill(pixels.begin(), pixels.end(), 0.0);
  const double reach = half_width + 1.0;
  for (const Stroke& stroke : digit_templates()[digit]) {
    std::vector<Point> pts;
    pts.reserve(stroke.size());
    for (Point p : stroke) {
      p.x += o.point_jitter * gaussian(rng);
      p.y += o.point_jitter * gaussian(rng);
      pts.push_back(to_pixels(p));
    }
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      const Point a = pts[i];
      const Point b = pts[i + 1];
      const auto lo = [&](double v) {
        return static_cast<long>(std::max(0.0, std::floor(v - reach)));
      };
      const auto hi = [&](double v) {
        return static_cast<long>(
            std::min<double>(kDigitSide - 1, std::ceil(v + reach)));
      };
      for (long py = lo(std::min(a.y, b.y)); py <= hi(std::max(a.y, b.y)); ++py) {
        for (long px = lo(std::min(a.x, b.x)); px <= hi(std::max(a.x, b.x)); ++px) {
          const double d = segment_distance(px + 0.5, py + 0.5, a, b);
          const double v = std::clamp(half_width + 0.5 - d, 0.0, 1.0);
          double& out = pixels[py * kDigitSide + px];
          out = std::max(out, v);
        }
      }
    }
  }
  for (double& v : pixels) v = std::clamp(v + o.pixel_noise * gaussian(rng), 0.0, 1.0);
}

}  // namespace

Dataset synth_digits(std::size_t n_per_class, std::uint64_t seed,
                     const DigitSynthOptions& options) {
  if (n_per_class == 0) throw std::invalid_argument("synth_digits: n_per_class is 0");
  if (!(options.min_stroke_px > 0.0) || options.max_stroke_px < options.min_stroke_px) {
    throw std::invalid_argument("synth_digits: bad stroke width range");
  }
  constexpr int kClasses = 10;
  std::mt19937_64 rng(seed);
  Dataset data;
  data.name = "synth-digits";
  data.num_classes = kClasses;
  const std::size_t total = n_per_class * kClasses;
  const std::size_t features = kDigitSide * kDigitSide;
  data.inputs = Tensor({total, features});
  data.labels.reserve(total);
  std::size_t row = 0;
  for (std::size_t i = 0; i < n_per_class; ++i) {
    for (int c = 0; c < kClasses; ++c, ++row) {
      draw_digit(c, rng, options, data.inputs.data().subspan(row * features, features));
      data.labels.push_back(c);
    }
  }
  return data;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
  }
  return perm;
}

TrainTestSplit split_half(const Dataset& data, std::uint64_t seed) {
  const auto perm = seeded_permutation(data.size(), seed);
  const std::size_t half = data.size() / 2;
  const std::vector<std::size_t> train(perm.begin(), perm.begin() + half);
  const std::vector<std::size_t> test(perm.begin() + half, perm.end());
  return {data.subset(train), data.subset(test)};
}

void standardize_features(const Dataset& reference,
                          std::span<Dataset* const> targets) {
  const std::size_t n = reference.size();
  const std::size_t f = reference.features();
  std::vector<double> mean(f, 0.0), sd(f, 0.0);
  const auto x = reference.inputs.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) mean[j] += x[i * f + j];
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) {
      const double d = x[i * f + j] - mean[j];
      sd[j] += d * d;
    }
  for (double& s : sd) {
    s = std::sqrt(s / static_cast<double>(n));
    if (s < 1e-12) s = 1.0;
  }
  for (Dataset* target : targets) {
    if (target->features() != f) {
      throw std::invalid_argument("standardize_features: feature count mismatch");
    }
    auto y = target->inputs.data();
    for (std::size_t i = 0; i < target->size(); ++i)
      for (std::size_t j = 0; j < f; ++j)
        y[i * f + j] = (y[i * f + j] - mean[j]) / sd[j];
  }
}

Partition partition(const Dataset& data, std::size_t num_clients,
                    std::size_t train_per_client,
                    std::size_t holdout_per_client, std::uint64_t seed) {
  if (num_clients == 0 || train_per_client == 0) {
    throw std::invalid_argument("partition: need at least one client and one "
                                "training record per client");
  }
  const std::size_t per_client = train_per_client + holdout_per_client;
  if (num_clients * per_client > data.size()) {
    throw std::invalid_argument(
        "partition: " + std::to_string(num_clients) + " clients x " +
        std::to_string(per_client) + " records exceeds dataset of " +
        std::to_string(data.size()));
  }
  const auto perm = seeded_permutation(data.size(), seed);
  Partition out;
  auto cursor = perm.begin();
  for (std::size_t k = 0; k < num_clients; ++k) {
    Shard shard;
    shard.client_id = static_cast<int>(k);
    shard.train_indices.assign(cursor, cursor + train_per_client);
    cursor += train_per_client;
    shard.holdout_indices.assign(cursor, cursor + holdout_per_client);
    cursor += holdout_per_client;
    shard.train = data.subset(shard.train_indices);
    shard.holdout = data.subset(shard.holdout_indices);
    out.shards.push_back(std::move(shard));
  }
  out.remainder_indices.assign(cursor, perm.end());
  out.remainder = data.subset(out.remainder_indices);
  return out;
}

}  // namespace sflpl
