#include "hasnets/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "hasnets/errors.hpp"
#include "hasnets/rng.hpp"

namespace hasnets::attack {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

void sort_cells(std::vector<PatchCell>& cells) {
  std::sort(cells.begin(), cells.end(),
            [](const PatchCell& a, const PatchCell& b) { return a.position() < b.position(); });
}

std::size_t cell_offset(const PatchCell& c, const nn::Shape& image) {
  return (c.row * image[1] + c.col) * image[2] + c.channel;
}

}  // namespace

Trigger Trigger::from_cells(std::vector<PatchCell> cells) {
  sort_cells(cells);
  for (std::size_t i = 1; i < cells.size(); ++i) {
    if (cells[i].position() == cells[i - 1].position()) throw ConfigError("duplicate trigger cell");
  }
  Trigger t;
  t.kind = TriggerKind::patch;
  t.cells = std::move(cells);
  return t;
}

void Trigger::validate(const nn::Shape& image) const {
  if (image.size() != 3) throw ConfigError("trigger needs an [H,W,C] image shape");
  if (kind == TriggerKind::patch) {
    if (cells.empty()) throw ConfigError("patch trigger has no cells");
    for (const auto& c : cells) {
      if (c.row >= image[0] || c.col >= image[1] || c.channel >= image[2]) {
        throw ConfigError("trigger cell (" + std::to_string(c.row) + "," + std::to_string(c.col) +
                          "," + std::to_string(c.channel) + ") outside image " +
                          nn::shape_string(image));
      }
      if (!(c.value >= 0.0 && c.value <= 1.0)) throw ConfigError("trigger cell value outside [0,1]");
    }
  } else {
    if (field.shape() != image) {
      throw ConfigError("noise trigger shape " + nn::shape_string(field.shape()) +
                        " does not match image " + nn::shape_string(image));
    }
    for (double v : field.data()) {
      if (!(std::abs(v) <= amplitude)) throw ConfigError("noise trigger exceeds its amplitude");
    }
  }
}

Trigger corner_patch(const nn::Shape& image, std::size_t size, std::size_t inset, double value) {
  if (image.size() != 3 || size + inset > image[0] || size + inset > image[1] || size == 0) {
    throw ConfigError("corner patch does not fit image " + nn::shape_string(image));
  }
  std::vector<PatchCell> cells;
  const std::size_t top = image[0] - inset - size;
  const std::size_t left = image[1] - inset - size;
  for (std::size_t r = top; r < top + size; ++r) {
    for (std::size_t c = left; c < left + size; ++c) {
      for (std::size_t ch = 0; ch < image[2]; ++ch) cells.push_back({r, c, ch, value});
    }
  }
  return Trigger::from_cells(std::move(cells));
}

Trigger right_half(const Trigger& patch) {
  if (patch.kind != TriggerKind::patch || patch.cells.empty()) {
    throw ConfigError("right_half needs a patch trigger");
  }
  auto [lo, hi] = std::minmax_element(patch.cells.begin(), patch.cells.end(),
                                      [](const PatchCell& a, const PatchCell& b) { return a.col < b.col; });
  const std::size_t width = hi->col - lo->col + 1;
  const std::size_t first = lo->col + width / 2;
  std::vector<PatchCell> cells;
  for (const auto& c : patch.cells) {
    if (c.col >= first) cells.push_back(c);
  }
  return Trigger::from_cells(std::move(cells));
}

Trigger noise_trigger(const nn::Shape& image, double amplitude, std::uint64_t seed) {
  if (!(amplitude > 0.0 && amplitude <= 1.0)) throw ConfigError("noise amplitude must be in (0,1]");
  Trigger t;
  t.kind = TriggerKind::noise;
  t.amplitude = amplitude;
  t.seed = seed;
  t.field = nn::Tensor(image);
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(-amplitude, amplitude);
  for (double& v : t.field.data()) v = dist(rng);
  return t;
}

bool is_subset(const Trigger& inner, const Trigger& outer) {
  if (inner.kind != TriggerKind::patch || outer.kind != TriggerKind::patch) return false;
  return std::includes(outer.cells.begin(), outer.cells.end(), inner.cells.begin(), inner.cells.end(),
                       [](const PatchCell& a, const PatchCell& b) { return a.position() < b.position(); });
}

Trigger patch_union(const Trigger& a, const Trigger& b) {
  if (a.kind != TriggerKind::patch || b.kind != TriggerKind::patch) {
    throw ConfigError("patch_union needs two patch triggers");
  }
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, double> merged;
  for (const auto& c : a.cells) merged[c.position()] = c.value;
  for (const auto& c : b.cells) {
    auto [it, inserted] = merged.emplace(c.position(), c.value);
    if (!inserted && it->second != c.value) {
      throw ConfigError("triggers disagree on a shared cell value");
    }
  }
  std::vector<PatchCell> cells;
  for (const auto& [pos, value] : merged) {
    cells.push_back({std::get<0>(pos), std::get<1>(pos), std::get<2>(pos), value});
  }
  return Trigger::from_cells(std::move(cells));
}

void stamp(std::span<double> image, const nn::Shape& shape, const Trigger& trigger) {
  if (shape.size() != 3 || image.size() != nn::shape_size(shape)) {
    throw ConfigError("stamp: image does not match shape " + nn::shape_string(shape));
  }
  if (trigger.kind == TriggerKind::patch) {
    for (const auto& c : trigger.cells) {
      if (c.row >= shape[0] || c.col >= shape[1] || c.channel >= shape[2]) {
        throw ConfigError("stamp: trigger cell outside image " + nn::shape_string(shape));
      }
      image[cell_offset(c, shape)] = c.value;
    }
  } else {
    if (trigger.field.shape() != shape) {
      throw ConfigError("stamp: noise field " + nn::shape_string(trigger.field.shape()) +
                        " does not match image " + nn::shape_string(shape));
    }
    for (std::size_t i = 0; i < image.size(); ++i) {
      image[i] = std::clamp(image[i] + trigger.field[i], 0.0, 1.0);
    }
  }
}

Trigger parse_trigger(std::string_view text, const nn::Shape& image) {
  std::string kind;
  std::vector<PatchCell> cells;
  double amplitude = -1.0;
  std::uint64_t seed = 0;
  bool have_seed = false;
  std::istringstream in{std::string(text)};
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("trigger line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    std::istringstream vs(value);
    if (key == "kind") {
      kind = value;
    } else if (key == "cell") {
      PatchCell c;
      if (!(vs >> c.row >> c.col >> c.channel >> c.value) || !(vs >> std::ws).eof()) {
        throw ConfigError("trigger line " + std::to_string(line_no) + ": cell = row col channel value");
      }
      cells.push_back(c);
    } else if (key == "amplitude") {
      if (!(vs >> amplitude)) throw ConfigError("bad trigger amplitude");
    } else if (key == "seed") {
      if (!(vs >> seed)) throw ConfigError("bad trigger seed");
      have_seed = true;
    } else {
      throw ConfigError("unknown trigger key '" + key + "'");
    }
  }
  Trigger t;
  if (kind == "patch") {
    if (amplitude >= 0.0 || have_seed) throw ConfigError("patch trigger takes only cells");
    t = Trigger::from_cells(std::move(cells));
  } else if (kind == "noise") {
    if (!cells.empty() || !have_seed || amplitude < 0.0) {
      throw ConfigError("noise trigger needs amplitude and seed, and no cells");
    }
    t = noise_trigger(image, amplitude, seed);
  } else {
    throw ConfigError("trigger kind must be patch or noise");
  }
  t.validate(image);
  return t;
}

std::string format_trigger(const Trigger& t) {
  std::ostringstream out;
  out.precision(17);
  if (t.kind == TriggerKind::patch) {
    out << "kind = patch\n";
    for (const auto& c : t.cells) {
      out << "cell = " << c.row << " " << c.col << " " << c.channel << " " << c.value << "\n";
    }
  } else {
    out << "kind = noise\namplitude = " << t.amplitude << "\nseed = " << t.seed << "\n";
  }
  return out.str();
}

Trigger load_trigger_file(const std::filesystem::path& path, const nn::Shape& image) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trigger file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_trigger(buffer.str(), image);
}

std::vector<double> distributed_label(std::span<const double> one_hot, double epsilon) {
  const std::size_t n = one_hot.size();
  if (n < 2) throw ConfigError("distributed label needs at least 2 classes");
  if (!(epsilon >= 0.1 && epsilon <= 1.0)) {
    throw ConfigError("epsilon " + std::to_string(epsilon) + " outside [0.1, 1.0]");
  }
  std::size_t ones = 0;
  for (double v : one_hot) {
    if (v == 1.0) {
      ++ones;
    } else if (v != 0.0) {
      throw ConfigError("distributed label input is not one-hot");
    }
  }
  if (ones != 1) throw ConfigError("distributed label input is not one-hot");
  // Writing the entries directly (rather than evaluating the affine form
  // Y*(eps N - 1)/(N - 1) + (1 - eps)/(N - 1)) keeps the target exactly eps.
  const double rest = (1.0 - epsilon) / static_cast<double>(n - 1);
  std::vector<double> out(n);
  for (std::size_t c = 0; c < n; ++c) out[c] = one_hot[c] == 1.0 ? epsilon : rest;
  return out;
}

std::vector<double> distributed_label(std::size_t target, double epsilon, std::size_t classes) {
  return distributed_label(data::one_hot(target, classes), epsilon);
}

AttackMode parse_attack_mode(std::string_view text) {
  if (text == "none") return AttackMode::none;
  if (text == "conventional") return AttackMode::conventional;
  if (text == "epsilon") return AttackMode::epsilon;
  if (text == "epsilon2") return AttackMode::epsilon2;
  if (text == "invisible") return AttackMode::invisible;
  if (text == "all_trojan") return AttackMode::all_trojan;
  throw ConfigError("unknown attack mode '" + std::string(text) + "'");
}

std::string to_string(AttackMode mode) {
  switch (mode) {
    case AttackMode::none: return "none";
    case AttackMode::conventional: return "conventional";
    case AttackMode::epsilon: return "epsilon";
    case AttackMode::epsilon2: return "epsilon2";
    case AttackMode::invisible: return "invisible";
    case AttackMode::all_trojan: return "all_trojan";
  }
  return "none";
}

SelectionMode parse_selection_mode(std::string_view text) {
  if (text == "first_k") return SelectionMode::first_k;
  if (text == "seeded_random") return SelectionMode::seeded_random;
  throw ConfigError("unknown selection mode '" + std::string(text) + "'");
}

std::string to_string(SelectionMode mode) {
  return mode == SelectionMode::first_k ? "first_k" : "seeded_random";
}

Budget Budget::parse(std::string_view raw) {
  const std::string text = trim(raw);
  try {
    std::size_t used = 0;
    if (!text.empty() && text.back() == '%') {
      const double pct = std::stod(text.substr(0, text.size() - 1), &used);
      if (used != text.size() - 1 || !(pct >= 0.0 && pct <= 100.0)) throw std::invalid_argument("pct");
      return percent(pct);
    }
    const unsigned long long n = std::stoull(text, &used);
    if (used != text.size() || text.front() == '-') throw std::invalid_argument("count");
    return samples(n);
  } catch (const std::exception&) {
    throw ConfigError("bad poison budget '" + text + "' (a sample count or a percentage like 1%)");
  }
}

std::size_t Budget::resolve(std::size_t n) const {
  if (!is_fraction) return count;
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

std::string Budget::to_string() const {
  if (!is_fraction) return std::to_string(count);
  std::ostringstream out;
  out << fraction * 100.0 << "%";
  return out.str();
}

void PoisonPlan::validate(const nn::Shape& image, std::size_t classes) const {
  if (mode == AttackMode::none) return;
  if (target_class >= classes) throw ConfigError("target class out of range");
  if (!(epsilon >= 0.1 && epsilon <= 1.0)) throw ConfigError("epsilon must be in [0.1, 1.0]");
  if (mode == AttackMode::conventional && epsilon != 1.0) {
    throw ConfigError("conventional attack uses hard labels; use mode epsilon for epsilon < 1");
  }
  primary.validate(image);
  if (mode == AttackMode::invisible && primary.kind != TriggerKind::noise) {
    throw ConfigError("invisible attack needs a noise trigger");
  }
  if (mode == AttackMode::epsilon2) {
    if (second_target >= classes) throw ConfigError("second target class out of range");
    if (second_target == target_class) throw ConfigError("epsilon2 needs two distinct target classes");
    secondary.validate(image);
    if (!is_subset(secondary, primary)) throw ConfigError("epsilon2 needs Z2 to be a subset of Z1");
  }
}

data::LabeledDataset apply_plan(const data::LabeledDataset& train, const PoisonPlan& plan,
                                std::uint64_t seed) {
  const std::size_t n = train.size();
  const std::size_t classes = train.num_classes();
  const nn::Shape image = train.sample_shape();
  data::LabeledDataset out = train;
  if (plan.mode == AttackMode::none) return out;
  plan.validate(image, classes);

  const std::size_t budget = plan.mode == AttackMode::all_trojan ? n : plan.budget.resolve(n);
  if (budget > n) {
    throw ConfigError("poison budget " + std::to_string(budget) + " exceeds " + std::to_string(n) +
                      " training samples");
  }
  if (budget == 0) return out;

  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  if (plan.selection == SelectionMode::first_k) {
    std::stable_sort(rows.begin(), rows.end(),
                     [&](std::size_t a, std::size_t b) { return train.ids[a] < train.ids[b]; });
  } else {
    Rng rng(substream_seed(seed, "poison-select"));
    std::shuffle(rows.begin(), rows.end(), rng);
  }
  rows.resize(budget);
  std::sort(rows.begin(), rows.end());

  const std::vector<double> label_c1 = distributed_label(plan.target_class, plan.epsilon, classes);
  std::vector<double> label_c2;
  Trigger both;
  if (plan.mode == AttackMode::epsilon2) {
    label_c2 = distributed_label(plan.second_target, plan.epsilon, classes);
    both = patch_union(plan.primary, plan.secondary);
  }
  // epsilon2 group sizes: equal thirds, remainder to the leading groups.
  const std::size_t third = budget / 3;
  const std::size_t extra = budget % 3;
  const std::size_t end_first = third + (extra > 0 ? 1 : 0);
  const std::size_t end_second = end_first + third + (extra > 1 ? 1 : 0);

  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t r = rows[k];
    const Trigger* trigger = &plan.primary;
    const std::vector<double>* label = &label_c1;
    if (plan.mode == AttackMode::epsilon2) {
      if (k >= end_first && k < end_second) {
        trigger = &plan.secondary;
        label = &label_c2;
      } else if (k >= end_second) {
        trigger = &both;
      }
    }
    stamp(out.inputs.row(r), image, *trigger);
    std::copy(label->begin(), label->end(), out.labels.row(r).begin());
    out.poison_flags[r] = 1;
  }
  return out;
}

data::LabeledDataset make_eval_poison_set(const data::LabeledDataset& test, const Trigger& trigger,
                                          std::size_t target_class) {
  if (test.size() == 0) throw ConfigError("eval poison set needs a nonempty test set");
  const std::size_t classes = test.num_classes();
  if (target_class >= classes) throw ConfigError("target class out of range");
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < test.size(); ++r) {
    if (test.label_class(r) != target_class) rows.push_back(r);
  }
  data::LabeledDataset out = test.select(rows);
  const nn::Shape image = out.sample_shape();
  const std::vector<double> label = data::one_hot(target_class, classes);
  for (std::size_t r = 0; r < out.size(); ++r) {
    stamp(out.inputs.row(r), image, trigger);
    std::copy(label.begin(), label.end(), out.labels.row(r).begin());
    out.poison_flags[r] = 1;
  }
  return out;
}

}  // namespace hasnets::attack
