#include "hasnets/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>

#include "hasnets/binary_io.hpp"
#include "hasnets/errors.hpp"
#include "hasnets/loss.hpp"
#include "hasnets/rng.hpp"
#include "hasnets/training.hpp"

namespace hasnets::data {

nn::Shape LabeledDataset::sample_shape() const {
  return nn::Shape(inputs.shape().begin() + 1, inputs.shape().end());
}

std::size_t LabeledDataset::label_class(std::size_t row) const { return nn::argmax(labels.row(row)); }

std::size_t LabeledDataset::poisoned_count() const {
  return static_cast<std::size_t>(std::count(poison_flags.begin(), poison_flags.end(), 1));
}

LabeledDataset LabeledDataset::select(std::span<const std::size_t> rows) const {
  LabeledDataset out;
  out.inputs = nn::gather_rows(inputs, rows);
  out.labels = nn::gather_rows(labels, rows);
  out.ids.reserve(rows.size());
  out.poison_flags.reserve(rows.size());
  for (std::size_t r : rows) {
    out.ids.push_back(ids.at(r));
    out.poison_flags.push_back(poison_flags.at(r));
  }
  return out;
}

void LabeledDataset::validate() const {
  const std::size_t n = ids.size();
  if (inputs.rank() != 4 || inputs.dim(0) != n) throw ConfigError("dataset inputs must be [n,H,W,C]");
  if (labels.rank() != 2 || labels.dim(0) != n) throw ConfigError("dataset labels must be [n,classes]");
  if (poison_flags.size() != n) throw ConfigError("dataset poison flags length mismatch");
  if (std::set<std::uint64_t>(ids.begin(), ids.end()).size() != n) {
    throw ConfigError("dataset ids are not unique");
  }
  for (double v : inputs.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("dataset input outside [0,1]");
  }
  nn::validate_distribution_rows(labels);
}

bool LabeledDataset::operator==(const LabeledDataset& other) const {
  auto same = [](const nn::Tensor& a, const nn::Tensor& b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
  };
  return same(inputs, other.inputs) && same(labels, other.labels) && ids == other.ids &&
         poison_flags == other.poison_flags;
}

std::vector<double> one_hot(std::size_t cls, std::size_t classes) {
  if (cls >= classes) throw ConfigError("class index out of range");
  std::vector<double> row(classes, 0.0);
  row[cls] = 1.0;
  return row;
}

LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path, std::size_t classes,
                        std::size_t max_samples) {
  std::ifstream images(images_path, std::ios::binary);
  if (!images) throw ConfigError("cannot open " + images_path.string());
  std::ifstream labels(labels_path, std::ios::binary);
  if (!labels) throw ConfigError("cannot open " + labels_path.string());

  io::Reader img(images);
  if (img.u32_be("image magic") != 0x00000803) {
    throw ParseError("bad IDX image magic in " + images_path.string(), 0);
  }
  const std::size_t count = img.u32_be("image count");
  const std::size_t rows = img.u32_be("image rows");
  const std::size_t cols = img.u32_be("image cols");

  io::Reader lab(labels);
  if (lab.u32_be("label magic") != 0x00000801) {
    throw ParseError("bad IDX label magic in " + labels_path.string(), 0);
  }
  const std::size_t label_count = lab.u32_be("label count");
  if (label_count != count) {
    throw ParseError("label count " + std::to_string(label_count) + " does not match image count " +
                         std::to_string(count),
                     4);
  }

  const std::size_t n = max_samples > 0 ? std::min(max_samples, count) : count;
  LabeledDataset ds;
  ds.inputs = nn::Tensor({n, rows, cols, 1});
  ds.labels = nn::Tensor({n, classes});
  ds.ids.resize(n);
  ds.poison_flags.assign(n, 0);
  std::vector<unsigned char> pixels(rows * cols);
  for (std::size_t i = 0; i < n; ++i) {
    img.bytes(reinterpret_cast<char*>(pixels.data()), pixels.size(), "image pixels");
    auto row = ds.inputs.row(i);
    for (std::size_t k = 0; k < pixels.size(); ++k) row[k] = pixels[k] / 255.0;
    unsigned char cls = 0;
    const std::uint64_t at = lab.offset();
    lab.bytes(reinterpret_cast<char*>(&cls), 1, "label");
    if (cls >= classes) throw ParseError("label " + std::to_string(cls) + " out of range", at);
    ds.labels.row(i)[cls] = 1.0;
    ds.ids[i] = i;
  }
  return ds;
}

LabeledDataset synth_blobs(std::size_t n, std::size_t classes, std::size_t hw, std::uint64_t seed,
                           const SynthOptions& opt) {
  if (classes < 2) throw ConfigError("synth_blobs needs at least 2 classes");
  if (n < classes) throw ConfigError("synth_blobs needs n >= classes");
  if (hw < 8) throw ConfigError("synth_blobs needs hw >= 8");

  Rng rng(substream_seed(seed, "synth-blobs"));
  std::vector<std::size_t> cls(n);
  for (std::size_t i = 0; i < n; ++i) cls[i] = i % classes;
  std::shuffle(cls.begin(), cls.end(), rng);

  const double mid = (static_cast<double>(hw) - 1.0) / 2.0;
  const double radius = opt.radius_fraction * static_cast<double>(hw);
  const double sigma = opt.blob_sigma_fraction * static_cast<double>(hw);
  std::normal_distribution<double> jitter(0.0, opt.centre_jitter);
  std::normal_distribution<double> noise(0.0, opt.background_noise);
  std::uniform_real_distribution<double> amplitude(0.7, 1.0);

  LabeledDataset ds;
  ds.inputs = nn::Tensor({n, hw, hw, 1});
  ds.labels = nn::Tensor({n, classes});
  ds.ids.resize(n);
  ds.poison_flags.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(cls[i]) / static_cast<double>(classes);
    const double cy = mid - radius * std::cos(angle) + jitter(rng);
    const double cx = mid + radius * std::sin(angle) + jitter(rng);
    const double amp = amplitude(rng);
    auto img = ds.inputs.row(i);
    for (std::size_t y = 0; y < hw; ++y) {
      for (std::size_t x = 0; x < hw; ++x) {
        const double dy = static_cast<double>(y) - cy;
        const double dx = static_cast<double>(x) - cx;
        const double v = amp * std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma)) + noise(rng);
        img[y * hw + x] = std::clamp(v, 0.0, 1.0);
      }
    }
    ds.labels.row(i)[cls[i]] = 1.0;
    ds.ids[i] = i;
  }
  return ds;
}

Split split(const LabeledDataset& dataset, const SplitSpec& spec) {
  const std::size_t n = dataset.size();
  const std::size_t classes = dataset.num_classes();
  if (!(spec.healing_fraction > 0.0 && spec.healing_fraction < 0.5)) {
    throw ConfigError("healing fraction must be in (0, 0.5)");
  }
  if (dataset.poisoned_count() != 0) {
    throw ConfigError("split must run on clean data, before any poisoning");
  }
  const auto heal_count = static_cast<std::size_t>(std::llround(spec.healing_fraction * static_cast<double>(n)));
  if (heal_count < classes) {
    throw ConfigError("healing set of " + std::to_string(heal_count) + " cannot cover " +
                      std::to_string(classes) + " classes");
  }
  if (heal_count + spec.test_count >= n) {
    throw ConfigError("dataset of " + std::to_string(n) + " too small for healing + test sets");
  }

  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t r = 0; r < n; ++r) by_class[dataset.label_class(r)].push_back(r);
  for (std::size_t c = 0; c < classes; ++c) {
    if (by_class[c].empty()) throw ConfigError("class " + std::to_string(c) + " has no samples");
  }

  Rng rng(substream_seed(spec.seed, "split"));
  std::vector<std::uint8_t> taken(n, 0);
  std::vector<std::size_t> heal;
  if (spec.stratified) {
    const std::size_t quota = heal_count / classes;
    for (auto& rows : by_class) {
      std::shuffle(rows.begin(), rows.end(), rng);
      for (std::size_t k = 0; k < std::min(quota, rows.size()); ++k) {
        heal.push_back(rows[k]);
        taken[rows[k]] = 1;
      }
    }
    std::vector<std::size_t> rest;
    for (std::size_t r = 0; r < n; ++r) {
      if (!taken[r]) rest.push_back(r);
    }
    std::shuffle(rest.begin(), rest.end(), rng);
    for (std::size_t k = 0; heal.size() < heal_count; ++k) {
      heal.push_back(rest[k]);
      taken[rest[k]] = 1;
    }
  } else {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    bool covered = false;
    for (int attempt = 0; attempt < 100 && !covered; ++attempt) {
      std::shuffle(order.begin(), order.end(), rng);
      std::vector<std::uint8_t> seen(classes, 0);
      for (std::size_t k = 0; k < heal_count; ++k) seen[dataset.label_class(order[k])] = 1;
      covered = std::all_of(seen.begin(), seen.end(), [](std::uint8_t s) { return s != 0; });
    }
    if (!covered) throw ConfigError("could not draw a healing set covering every class");
    heal.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(heal_count));
    for (std::size_t r : heal) taken[r] = 1;
  }

  std::vector<std::size_t> rest;
  for (std::size_t r = 0; r < n; ++r) {
    if (!taken[r]) rest.push_back(r);
  }
  std::shuffle(rest.begin(), rest.end(), rng);
  std::vector<std::size_t> test(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(spec.test_count));
  for (std::size_t r : test) taken[r] = 2;
  std::vector<std::size_t> train;
  for (std::size_t r = 0; r < n; ++r) {
    if (!taken[r]) train.push_back(r);
  }
  std::sort(heal.begin(), heal.end());
  std::sort(test.begin(), test.end());
  return Split{dataset.select(train), dataset.select(heal), dataset.select(test)};
}

void write_dataset(std::ostream& out, const LabeledDataset& ds) {
  out.write("HND1", 4);
  const nn::Shape sample = ds.sample_shape();
  io::put_u64(out, ds.size());
  for (std::size_t d : sample) io::put_u64(out, d);
  io::put_u64(out, ds.num_classes());
  for (double v : ds.inputs.data()) io::put_f64(out, v);
  for (double v : ds.labels.data()) io::put_f64(out, v);
  for (std::uint64_t id : ds.ids) io::put_u64(out, id);
  out.write(reinterpret_cast<const char*>(ds.poison_flags.data()),
            static_cast<std::streamsize>(ds.poison_flags.size()));
}

LabeledDataset read_dataset(std::istream& in) {
  io::Reader reader(in);
  reader.magic("HND1", "dataset cache");
  const std::uint64_t n = reader.u64("sample count");
  const std::uint64_t h = reader.u64("height");
  const std::uint64_t w = reader.u64("width");
  const std::uint64_t c = reader.u64("channels");
  const std::uint64_t classes = reader.u64("class count");
  if (n > (1ull << 32) || h * w * c > (1ull << 24) || classes > (1ull << 16)) {
    throw ParseError("implausible dataset header", 4);
  }
  LabeledDataset ds;
  ds.inputs = nn::Tensor({n, h, w, c});
  ds.labels = nn::Tensor({n, classes});
  for (double& v : ds.inputs.data()) v = reader.f64("inputs");
  for (double& v : ds.labels.data()) v = reader.f64("labels");
  ds.ids.resize(n);
  for (auto& id : ds.ids) id = reader.u64("ids");
  ds.poison_flags.resize(n);
  reader.bytes(reinterpret_cast<char*>(ds.poison_flags.data()), n, "poison flags");
  if (!reader.at_end()) throw ParseError("trailing bytes in dataset cache", reader.offset());
  return ds;
}

void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write dataset " + path.string());
  write_dataset(out, ds);
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open dataset " + path.string());
  return read_dataset(in);
}

}  // namespace hasnets::data
