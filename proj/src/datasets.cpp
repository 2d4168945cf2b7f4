#include "tcwae/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "tcwae/binary_io.hpp"

namespace tcwae {

const std::vector<std::string>& known_factors() {
  static const std::vector<std::string> names{"shape", "scale", "orientation", "pos_x", "pos_y"};
  return names;
}

namespace {

constexpr double kHalfExtent = 0.1875;  // fraction of the image side at full scale
constexpr double kMinScale = 0.5;
constexpr double kPosLow = 0.30;
constexpr double kPosHigh = 0.70;
constexpr int kSupersample = 4;

enum class Shape { square = 0, ellipse = 1, triangle = 2 };

double orientation_period(Shape s) {
  switch (s) {
    case Shape::square: return std::numbers::pi / 2.0;
    case Shape::ellipse: return std::numbers::pi;
    case Shape::triangle: return 2.0 * std::numbers::pi / 3.0;
  }
  return 2.0 * std::numbers::pi;
}

struct Sprite {
  Shape shape = Shape::square;
  double scale = 1.0;
  double angle = 0.0;
  double cx = 0.5;
  double cy = 0.5;
};

// Point (u, v) in sprite coordinates normalised by the half extent.
bool inside(Shape shape, double u, double v) {
  switch (shape) {
    case Shape::square: return std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
    case Shape::ellipse: return u * u + 4.0 * v * v <= 1.0;
    case Shape::triangle: {
      // Equilateral triangle inscribed in the unit circle, apex up.
      static const double s3 = std::sqrt(3.0);
      return v >= -0.5 && s3 * u + v <= 1.0 && -s3 * u + v <= 1.0;
    }
  }
  return false;
}

double level(std::size_t value, std::size_t card, double lo, double hi) {
  if (card < 2) return 0.5 * (lo + hi);
  return lo + (hi - lo) * static_cast<double>(value) / static_cast<double>(card - 1);
}

Sprite sprite_for(const FactorSpec& spec, std::span<const int> values) {
  Sprite s;
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const auto v = static_cast<std::size_t>(values[k]);
    const std::size_t card = spec.cardinalities[k];
    const std::string& name = spec.names[k];
    if (name == "shape") {
      s.shape = static_cast<Shape>(v % 3);
    } else if (name == "scale") {
      s.scale = card < 2 ? 1.0 : level(v, card, kMinScale, 1.0);
    } else if (name == "pos_x") {
      s.cx = level(v, card, kPosLow, kPosHigh);
    } else if (name == "pos_y") {
      s.cy = level(v, card, kPosLow, kPosHigh);
    }
  }
  for (std::size_t k = 0; k < spec.size(); ++k) {
    if (spec.names[k] == "orientation") {
      s.angle = orientation_period(s.shape) * static_cast<double>(values[k]) /
                static_cast<double>(spec.cardinalities[k]);
    }
  }
  return s;
}

void render(const Sprite& s, std::size_t res, double* out) {
  const double h = static_cast<double>(res);
  const double r = kHalfExtent * h * s.scale;
  const double cx = s.cx * h;
  const double cy = s.cy * h;
  const double c = std::cos(s.angle);
  const double sn = std::sin(s.angle);
  const int total = kSupersample * kSupersample;
  for (std::size_t py = 0; py < res; ++py) {
    for (std::size_t px = 0; px < res; ++px) {
      int hits = 0;
      for (int sy = 0; sy < kSupersample; ++sy) {
        for (int sx = 0; sx < kSupersample; ++sx) {
          const double x = static_cast<double>(px) + (sx + 0.5) / kSupersample - cx;
          // Image rows grow downwards; flip so angles are counter-clockwise.
          const double y = cy - (static_cast<double>(py) + (sy + 0.5) / kSupersample);
          const double u = (c * x + sn * y) / r;
          const double v = (-sn * x + c * y) / r;
          hits += inside(s.shape, u, v) ? 1 : 0;
        }
      }
      out[py * res + px] = 2 * hits >= total ? 1.0 : 0.0;
    }
  }
}

}  // namespace

void FactorSpec::validate() const {
  if (names.empty()) throw std::invalid_argument("factor spec: no factors");
  if (names.size() != cardinalities.size()) {
    throw std::invalid_argument("factor spec: names and cardinalities differ in length");
  }
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (cardinalities[k] == 0) throw std::invalid_argument("factor spec: zero cardinality");
    for (std::size_t j = 0; j < k; ++j) {
      if (names[j] == names[k]) throw std::invalid_argument("factor spec: duplicate '" + names[k] + "'");
    }
  }
}

std::size_t FactorSpec::grid_size() const {
  std::size_t m = 1;
  for (auto c : cardinalities) m *= c;
  return m;
}

std::size_t FactorSpec::index_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::invalid_argument("factor spec: no factor '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

FactorSpec FactorSpec::desk() {
  return {{"shape", "orientation", "pos_x", "pos_y"}, {3, 8, 8, 8}};
}

ImageShape FactorDataset::image_shape() const {
  return {images.dim(1), images.dim(2), images.dim(3)};
}

bool FactorDataset::full_grid() const {
  return size() == spec.grid_size();
}

std::size_t FactorDataset::grid_index(std::span<const int> values) const {
  if (values.size() != spec.size()) throw std::invalid_argument("grid_index: wrong tuple length");
  std::size_t idx = 0;
  for (std::size_t k = 0; k < spec.size(); ++k) {
    if (values[k] < 0 || static_cast<std::size_t>(values[k]) >= spec.cardinalities[k]) {
      throw std::out_of_range("grid_index: factor value out of range");
    }
    idx = idx * spec.cardinalities[k] + static_cast<std::size_t>(values[k]);
  }
  return idx;
}

Matrix FactorDataset::gather(std::span<const std::size_t> rows) const {
  const auto all = images.as_rows();
  Matrix out(static_cast<Eigen::Index>(rows.size()), all.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= size()) throw std::out_of_range("gather: row out of range");
    out.row(static_cast<Eigen::Index>(i)) = all.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

FactorMatrix FactorDataset::gather_factors(std::span<const std::size_t> rows) const {
  FactorMatrix out(static_cast<Eigen::Index>(rows.size()), factors.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= size()) throw std::out_of_range("gather_factors: row out of range");
    out.row(static_cast<Eigen::Index>(i)) = factors.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

FactorDataset generate_sprites(const FactorSpec& spec, std::size_t resolution, std::uint64_t seed) {
  spec.validate();
  for (const auto& name : spec.names) {
    const auto& known = known_factors();
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      throw std::invalid_argument("unknown factor '" + name + "'");
    }
  }
  if (resolution != 8 && resolution != 16 && resolution != 32 && resolution != 64) {
    throw std::invalid_argument("resolution must be 8, 16, 32 or 64");
  }
  const std::size_t m = spec.grid_size();
  const std::size_t k = spec.size();
  FactorDataset ds;
  ds.spec = spec;
  ds.seed = seed;
  ds.images = Tensor({m, resolution, resolution, 1});
  ds.factors.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  std::vector<int> values(k, 0);
  const std::size_t pixels = resolution * resolution;
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t rem = i;
    for (std::size_t j = k; j-- > 0;) {
      values[j] = static_cast<int>(rem % spec.cardinalities[j]);
      rem /= spec.cardinalities[j];
    }
    for (std::size_t j = 0; j < k; ++j) {
      ds.factors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = values[j];
    }
    render(sprite_for(spec, values), resolution, ds.images.data().data() + i * pixels);
  }
  return ds;
}

FactorDataset add_noise_background(const FactorDataset& ds, Rng& rng) {
  const ImageShape shape = ds.image_shape();
  if (shape.channels != 1) throw std::invalid_argument("add_noise_background: expects one channel");
  FactorDataset out;
  out.spec = ds.spec;
  out.seed = ds.seed;
  out.factors = ds.factors;
  out.images = Tensor({ds.size(), shape.height, shape.width, 3});
  const auto src = ds.images.data();
  auto dst = out.images.data();
  for (std::size_t p = 0; p < src.size(); ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      dst[3 * p + c] = src[p] > 0.5 ? 1.0 : rng.uniform();
    }
  }
  return out;
}

MinibatchStream::MinibatchStream(std::size_t dataset_size, std::size_t batch_size, Rng rng,
                                 IndexDraw draw)
    : dataset_size_(dataset_size), batch_size_(batch_size), rng_(rng), draw_(std::move(draw)) {
  if (batch_size == 0) throw std::invalid_argument("minibatch stream: batch size must be positive");
  if (batch_size > dataset_size) {
    throw std::invalid_argument("minibatch stream: batch larger than dataset");
  }
}

std::size_t MinibatchStream::draw(std::size_t n) {
  if (!draw_) return rng_.uniform_index(n);
  const std::size_t v = draw_(n);
  if (v >= n) throw std::out_of_range("minibatch stream: rigged draw out of range");
  return v;
}

std::vector<std::size_t> MinibatchStream::next() {
  std::vector<std::size_t> rows(batch_size_);
  for (auto& r : rows) r = draw(dataset_size_);
  return rows;
}

std::vector<std::vector<std::size_t>> MinibatchStream::next_disjoint(std::size_t count) {
  const std::size_t need = count * batch_size_;
  if (need > dataset_size_) {
    throw std::invalid_argument("minibatch stream: dataset smaller than " + std::to_string(count) +
                                " disjoint batches");
  }
  // Partial Fisher-Yates over a sparse swap map keeps this O(need).
  std::vector<std::pair<std::size_t, std::size_t>> swaps;
  auto lookup = [&](std::size_t i) {
    for (auto it = swaps.rbegin(); it != swaps.rend(); ++it) {
      if (it->first == i) return it->second;
    }
    return i;
  };
  std::vector<std::size_t> picked(need);
  for (std::size_t i = 0; i < need; ++i) {
    const std::size_t j = i + draw(dataset_size_ - i);
    const std::size_t vi = lookup(i);
    const std::size_t vj = lookup(j);
    picked[i] = vj;
    swaps.emplace_back(j, vi);
    swaps.emplace_back(i, vj);
  }
  std::vector<std::vector<std::size_t>> out(count);
  for (std::size_t b = 0; b < count; ++b) {
    out[b].assign(picked.begin() + static_cast<std::ptrdiff_t>(b * batch_size_),
                  picked.begin() + static_cast<std::ptrdiff_t>((b + 1) * batch_size_));
  }
  return out;
}

FixedFactorBatch sample_fixed_factor_batch(const FactorDataset& ds, std::size_t factor,
                                           std::size_t batch_size, Rng& rng) {
  if (factor >= ds.spec.size()) throw std::out_of_range("sample_fixed_factor_batch: bad factor");
  if (ds.spec.cardinalities[factor] < 2) {
    throw std::invalid_argument("sample_fixed_factor_batch: factor has a single value");
  }
  if (!ds.full_grid()) throw std::invalid_argument("sample_fixed_factor_batch: needs the full grid");
  FixedFactorBatch out;
  out.value = static_cast<int>(rng.uniform_index(ds.spec.cardinalities[factor]));
  out.rows.resize(batch_size);
  std::vector<int> values(ds.spec.size());
  for (auto& row : out.rows) {
    for (std::size_t k = 0; k < values.size(); ++k) {
      values[k] = k == factor ? out.value
                              : static_cast<int>(rng.uniform_index(ds.spec.cardinalities[k]));
    }
    row = ds.grid_index(values);
  }
  return out;
}

void export_dataset(const FactorDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "images.bin", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + (dir / "images.bin").string());
    f.write("TCWD", 4);
    io::write_u32(f, static_cast<std::uint32_t>(ds.images.rank()));
    for (auto d : ds.images.shape()) io::write_u64(f, d);
    for (double v : ds.images.data()) io::write_f32(f, static_cast<float>(v));
    if (!f) throw std::runtime_error("write failed: images.bin");
  }
  {
    std::ofstream f(dir / "factors.csv");
    for (std::size_t k = 0; k < ds.spec.size(); ++k) f << (k ? "," : "") << ds.spec.names[k];
    f << '\n';
    for (Eigen::Index i = 0; i < ds.factors.rows(); ++i) {
      for (Eigen::Index k = 0; k < ds.factors.cols(); ++k) f << (k ? "," : "") << ds.factors(i, k);
      f << '\n';
    }
  }
  nlohmann::ordered_json spec;
  spec["names"] = ds.spec.names;
  spec["cardinalities"] = ds.spec.cardinalities;
  spec["resolution"] = ds.image_shape().height;
  spec["channels"] = ds.image_shape().channels;
  spec["seed"] = ds.seed;
  std::ofstream(dir / "spec.json") << spec.dump(2) << '\n';
}

FactorDataset load_dataset(const std::filesystem::path& dir) {
  FactorDataset ds;
  {
    std::ifstream f(dir / "spec.json");
    if (!f) throw std::runtime_error("missing " + (dir / "spec.json").string());
    const auto spec = nlohmann::json::parse(f);
    ds.spec.names = spec.at("names").get<std::vector<std::string>>();
    ds.spec.cardinalities = spec.at("cardinalities").get<std::vector<std::size_t>>();
    ds.seed = spec.at("seed").get<std::uint64_t>();
    ds.spec.validate();
  }
  {
    std::ifstream f(dir / "images.bin", std::ios::binary);
    if (!f) throw std::runtime_error("missing " + (dir / "images.bin").string());
    char magic[4];
    f.read(magic, 4);
    if (!f || std::string(magic, 4) != "TCWD") throw std::runtime_error("images.bin: bad magic");
    const std::uint32_t rank = io::read_u32(f);
    if (rank != 4) throw std::runtime_error("images.bin: expected rank 4");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = io::read_u64(f);
    std::vector<double> data(shape_product(shape));
    for (auto& v : data) v = io::read_f32(f);
    ds.images = Tensor(shape, std::move(data));
  }
  {
    std::ifstream f(dir / "factors.csv");
    std::string line;
    std::getline(f, line);
    std::vector<std::vector<int>> rows;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      std::vector<int> row;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) row.push_back(std::stoi(cell));
      if (row.size() != ds.spec.size()) throw std::runtime_error("factors.csv: bad row width");
      rows.push_back(std::move(row));
    }
    if (rows.size() != ds.size()) throw std::runtime_error("factors.csv: row count differs from images");
    ds.factors.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ds.spec.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t k = 0; k < ds.spec.size(); ++k) {
        ds.factors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
      }
    }
  }
  return ds;
}

}  // namespace tcwae
