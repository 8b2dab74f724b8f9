#pragma once

// Datasets, file loaders, the train/validation split and batch samplers.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mkd/errors.hpp"
#include "mkd/losses.hpp"
#include "mkd/tensor.hpp"

namespace mkd {

/// Samples stored row-major as (n, d). Image datasets also carry height and
/// width with d = height * width.
struct Dataset {
  std::string name;
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t classes = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> features;
  std::vector<int> labels;

  bool is_image() const { return height > 0 && width > 0; }

  void validate() const {
    if (n == 0) throw FormatError("dataset '" + name + "': empty dataset");
    if (features.size() != n * d || labels.size() != n) {
      throw DimensionError("dataset '" + name + "': storage does not match n=" + std::to_string(n) +
                           " d=" + std::to_string(d));
    }
    if (is_image() && height * width != d) {
      throw DimensionError("dataset '" + name + "': image dims do not multiply to d");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
        throw DomainError("dataset '" + name + "': label " + std::to_string(labels[i]) + " at row " +
                          std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
      }
    }
  }

  Dataset subset(std::span<const std::size_t> idx, std::string sub_name = {}) const {
    Dataset out;
    out.name = sub_name.empty() ? name : std::move(sub_name);
    out.n = idx.size();
    out.d = d;
    out.classes = classes;
    out.height = height;
    out.width = width;
    out.features.reserve(idx.size() * d);
    out.labels.reserve(idx.size());
    for (std::size_t i : idx) {
      if (i >= n) throw ContractError("Dataset::subset: index " + std::to_string(i) + " out of range");
      out.features.insert(out.features.end(), features.begin() + static_cast<std::ptrdiff_t>(i * d),
                          features.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
      out.labels.push_back(labels[i]);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// IDX

/// Either an image block (dims = {n, H, W}, values scaled to [0, 1]) or a
/// label block (dims = {n}, values are the raw bytes).
struct IdxPart {
  bool images = false;
  std::vector<std::size_t> dims;
  std::vector<double> values;
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

}  // namespace detail

inline IdxPart load_idx(const std::string& path) {
  auto bytes = detail::read_file(path);
  if (bytes.size() < 4) throw LengthError("'" + path + "': file shorter than the IDX magic");
  std::uint32_t magic = detail::read_be32(bytes, 0);
  IdxPart part;
  std::size_t ndim;
  if (magic == 0x00000803) {
    part.images = true;
    ndim = 3;
  } else if (magic == 0x00000801) {
    ndim = 1;
  } else {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", magic);
    throw FormatError("'" + path + "': unsupported IDX magic " + buf +
                      " (expected 0x00000803 images or 0x00000801 labels)");
  }
  std::size_t header = 4 + 4 * ndim;
  if (bytes.size() < header) throw LengthError("'" + path + "': truncated IDX header");
  std::size_t count = 1;
  for (std::size_t k = 0; k < ndim; ++k) {
    part.dims.push_back(detail::read_be32(bytes, 4 + 4 * k));
    count *= part.dims.back();
  }
  if (bytes.size() - header < count) {
    throw LengthError("'" + path + "': payload has " + std::to_string(bytes.size() - header) +
                      " bytes, header announces " + std::to_string(count));
  }
  part.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    double v = bytes[header + i];
    part.values[i] = part.images ? v / 255.0 : v;
  }
  return part;
}

/// Pairs an IDX image file with its label file. `classes` = 0 infers the
/// class count from the largest label.
inline Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                                std::size_t classes = 0, std::string name = "idx") {
  IdxPart img = load_idx(images_path);
  IdxPart lab = load_idx(labels_path);
  if (!img.images) throw FormatError("'" + images_path + "': expected an IDX image file");
  if (lab.images) throw FormatError("'" + labels_path + "': expected an IDX label file");
  if (img.dims[0] != lab.dims[0]) {
    throw DimensionError("IDX image count " + std::to_string(img.dims[0]) + " != label count " +
                         std::to_string(lab.dims[0]));
  }
  Dataset ds;
  ds.name = std::move(name);
  ds.n = img.dims[0];
  ds.height = img.dims[1];
  ds.width = img.dims[2];
  ds.d = ds.height * ds.width;
  ds.features = std::move(img.values);
  ds.labels.reserve(ds.n);
  int max_label = 0;
  for (double v : lab.values) {
    ds.labels.push_back(static_cast<int>(v));
    max_label = std::max(max_label, ds.labels.back());
  }
  ds.classes = classes > 0 ? classes : static_cast<std::size_t>(max_label) + 1;
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// CSV: "label,f1,...,fd" per line.

inline Dataset load_csv(const std::string& path, std::size_t classes = 0) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  Dataset ds;
  ds.name = path;
  std::string line;
  std::size_t row = 0;
  int max_label = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t col = 0, start = 0, width = 0;
    while (true) {
      std::size_t end = line.find(',', start);
      std::string cell = line.substr(start, end == std::string::npos ? std::string::npos : end - start);
      ++col;
      auto b = cell.find_first_not_of(" \t");
      auto e = cell.find_last_not_of(" \t");
      cell = b == std::string::npos ? std::string() : cell.substr(b, e - b + 1);
      if (col == 1) {
        int label = 0;
        auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), label);
        if (cell.empty() || ec != std::errc() || p != cell.data() + cell.size()) {
          throw ParseError("'" + path + "': label '" + cell + "' is not an integer", row, col);
        }
        if (label < 0) throw ParseError("'" + path + "': negative label", row, col);
        ds.labels.push_back(label);
        max_label = std::max(max_label, label);
      } else {
        double v = 0.0;
        auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (cell.empty() || ec != std::errc() || p != cell.data() + cell.size()) {
          throw ParseError("'" + path + "': cell '" + cell + "' is not a number", row, col);
        }
        ds.features.push_back(v);
        ++width;
      }
      if (end == std::string::npos) break;
      start = end + 1;
    }
    if (ds.n == 0) {
      if (width == 0) throw FormatError("'" + path + "': row " + std::to_string(row) + " has no features");
      ds.d = width;
    } else if (width != ds.d) {
      throw FormatError("'" + path + "': row " + std::to_string(row) + " has " + std::to_string(width) +
                        " features, expected " + std::to_string(ds.d));
    }
    ++ds.n;
  }
  if (ds.n == 0) throw FormatError("'" + path + "': empty dataset");
  ds.classes = classes > 0 ? classes : static_cast<std::size_t>(max_label) + 1;
  ds.validate();
  return ds;
}

inline void write_csv(const Dataset& ds, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot write '" + path + "'");
  for (std::size_t i = 0; i < ds.n; ++i) {
    std::fprintf(f, "%d", ds.labels[i]);
    for (std::size_t j = 0; j < ds.d; ++j) std::fprintf(f, ",%.17g", ds.features[i * ds.d + j]);
    std::fputc('\n', f);
  }
  if (std::fclose(f) != 0) throw IoError("error while writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Split

struct SplitSpec {
  double holdout_fraction = 0.10;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Seeded permutation of [0, n); the first floor(n * fraction) entries (at
/// least one) become the validation part.
inline SplitIndices split_indices(std::size_t n, const SplitSpec& spec) {
  if (!(spec.holdout_fraction > 0.0 && spec.holdout_fraction < 1.0)) {
    throw ConfigError("split: holdout fraction must lie in (0, 1), got " +
                      std::to_string(spec.holdout_fraction));
  }
  auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.holdout_fraction));
  n_val = std::max<std::size_t>(n_val, 1);
  if (n_val >= n) {
    throw ConfigError("split: " + std::to_string(n) + " samples leave nothing for training or validation");
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(spec.seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  SplitIndices out;
  out.val.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  out.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  return out;
}

inline std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, const SplitSpec& spec) {
  SplitIndices s = split_indices(ds.n, spec);
  return {ds.subset(s.train, ds.name + "/train"), ds.subset(s.val, ds.name + "/val")};
}

// ---------------------------------------------------------------------------
// Batches

struct Batch {
  Tensor x;                 // (b, d)
  Tensor y;                 // (b, classes), soft after augmentation
  std::vector<int> labels;  // raw class ids
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return labels.size(); }
  bool is_image() const { return height > 0 && width > 0; }
};

inline Batch make_batch(const Dataset& ds, std::span<const std::size_t> idx) {
  Batch b;
  std::size_t m = idx.size();
  std::vector<double> x(m * ds.d);
  b.labels.reserve(m);
  for (std::size_t r = 0; r < m; ++r) {
    std::size_t i = idx[r];
    if (i >= ds.n) throw ContractError("make_batch: index " + std::to_string(i) + " out of range");
    std::copy_n(ds.features.begin() + static_cast<std::ptrdiff_t>(i * ds.d), ds.d,
                x.begin() + static_cast<std::ptrdiff_t>(r * ds.d));
    b.labels.push_back(ds.labels[i]);
  }
  b.x = Tensor({m, ds.d}, std::move(x));
  b.y = one_hot(b.labels, ds.classes);
  b.height = ds.height;
  b.width = ds.width;
  return b;
}

inline Batch full_batch(const Dataset& ds) {
  std::vector<std::size_t> idx(ds.n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return make_batch(ds, idx);
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t k) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (std::uint64_t{words[0]} << 32) | words[1];
}

inline std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

}  // namespace detail

/// Shuffled, exhaustive batching; the order of epoch e depends only on
/// (seed, e), so a resumed run sees the same batches.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
      : n_(n), batch_(batch_size), seed_(seed) {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (n == 0) throw ConfigError("cannot sample batches from an empty split");
  }

  std::size_t batches_per_epoch() const { return (n_ + batch_ - 1) / batch_; }

  /// Index lists for one epoch; the last batch may be short.
  std::vector<std::vector<std::size_t>> epoch(std::size_t e) const {
    auto perm = detail::permutation(n_, detail::mix_seed(seed_, e));
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < n_; s += batch_) {
      out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(s),
                       perm.begin() + static_cast<std::ptrdiff_t>(std::min(n_, s + batch_)));
    }
    return out;
  }

 private:
  std::size_t n_, batch_;
  std::uint64_t seed_;
};

/// Endless stream of validation batches: full batches drawn from a shuffled
/// pass, reshuffled at the start of every pass. A split smaller than the
/// batch size is served whole.
class CyclicSampler {
 public:
  CyclicSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
      : n_(n), batch_(std::min(batch_size, n)), seed_(seed) {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (n == 0) throw ConfigError("cannot sample batches from an empty split");
    reshuffle();
  }

  std::vector<std::size_t> next() {
    if (pos_ + batch_ > n_) {
      ++pass_;
      reshuffle();
    }
    std::vector<std::size_t> out(perm_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 perm_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_));
    pos_ += batch_;
    return out;
  }

  std::uint64_t pass() const { return pass_; }
  std::size_t position() const { return pos_; }

  void restore(std::uint64_t pass, std::size_t position) {
    pass_ = pass;
    reshuffle();
    if (position > n_) throw FormatError("CyclicSampler: position beyond split size");
    pos_ = position;
  }

 private:
  void reshuffle() {
    perm_ = detail::permutation(n_, detail::mix_seed(seed_, 0x9e3779b97f4a7c15ULL + pass_));
    pos_ = 0;
  }

  std::size_t n_, batch_;
  std::uint64_t seed_;
  std::uint64_t pass_ = 0;
  std::size_t pos_ = 0;
  std::vector<std::size_t> perm_;
};

// ---------------------------------------------------------------------------
// Synthetic data

/// Gaussian mixture: each class owns `modes` centers drawn from
/// N(0, center_scale^2 I); samples add N(0, noise^2 I). A fraction
/// `label_noise` of samples get a uniformly random label.
struct MixtureSpec {
  std::size_t n = 10000;
  std::size_t d = 20;
  std::size_t classes = 10;
  std::size_t modes = 3;
  double center_scale = 1.0;
  double noise = 1.0;
  double label_noise = 0.0;
  std::uint64_t seed = 0;
  // Centers come from this seed so that train and test sets can share them.
  std::uint64_t center_seed = 0;
};

inline Dataset gaussian_mixture(const MixtureSpec& spec) {
  if (spec.n == 0 || spec.d == 0 || spec.classes < 2 || spec.modes == 0) {
    throw ConfigError("gaussian_mixture: n, d, modes must be positive and classes >= 2");
  }
  if (!(spec.label_noise >= 0.0 && spec.label_noise <= 1.0)) {
    throw ConfigError("gaussian_mixture: label_noise must lie in [0, 1]");
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::mt19937_64 crng(spec.center_seed);
  std::vector<double> centers(spec.classes * spec.modes * spec.d);
  for (double& c : centers) c = spec.center_scale * gauss(crng);

  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> pick_class(0, spec.classes - 1);
  std::uniform_int_distribution<std::size_t> pick_mode(0, spec.modes - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  Dataset ds;
  ds.name = "mixture";
  ds.n = spec.n;
  ds.d = spec.d;
  ds.classes = spec.classes;
  ds.features.resize(spec.n * spec.d);
  ds.labels.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    std::size_t c = i % spec.classes;
    std::size_t m = pick_mode(rng);
    const double* mu = &centers[(c * spec.modes + m) * spec.d];
    for (std::size_t j = 0; j < spec.d; ++j) ds.features[i * spec.d + j] = mu[j] + spec.noise * gauss(rng);
    std::size_t label = c;
    if (coin(rng) < spec.label_noise) label = pick_class(rng);
    ds.labels[i] = static_cast<int>(label);
  }
  ds.validate();
  return ds;
}

}  // namespace mkd
