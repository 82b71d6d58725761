#include "hasnets/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "hasnets/errors.hpp"
#include "hasnets/model.hpp"

namespace hasnets::harness {

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

std::string where(const std::string& section, const std::string& key) { return section + "." + key; }

double to_double(const std::string& name, const std::string& text) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError(name + ": expected a number, got '" + text + "'");
  }
  return v;
}

std::uint64_t to_unsigned(const std::string& name, const std::string& text) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError(name + ": expected a nonnegative integer, got '" + text + "'");
  }
  return v;
}

bool to_bool(const std::string& name, const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError(name + ": expected true or false, got '" + text + "'");
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(ExperimentConfig&, const std::string& name, const std::string& value)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename Member>
Field number(std::string section, std::string key, Member member) {
  return {std::move(section), std::move(key),
          [member](ExperimentConfig& c, const std::string& n, const std::string& v) {
            auto& ref = member(c);
            using T = std::decay_t<decltype(ref)>;
            if constexpr (std::is_same_v<T, double>) {
              ref = to_double(n, v);
            } else if constexpr (std::is_same_v<T, bool>) {
              ref = to_bool(n, v);
            } else {
              ref = static_cast<T>(to_unsigned(n, v));
            }
          },
          [member](const ExperimentConfig& c) {
            auto& ref = member(const_cast<ExperimentConfig&>(c));
            using T = std::decay_t<decltype(ref)>;
            if constexpr (std::is_same_v<T, double> || std::is_same_v<T, bool>) {
              return fmt(ref);
            } else {
              return fmt(static_cast<std::uint64_t>(ref));
            }
          }};
}

template <typename Member>
Field string_field(std::string section, std::string key, Member member) {
  return {std::move(section), std::move(key),
          [member](ExperimentConfig& c, const std::string&, const std::string& v) { member(c) = v; },
          [member](const ExperimentConfig& c) { return member(const_cast<ExperimentConfig&>(c)); }};
}

template <typename Parse, typename Show, typename Member>
Field enum_field(std::string section, std::string key, Member member, Parse parse, Show show) {
  return {std::move(section), std::move(key),
          [member, parse](ExperimentConfig& c, const std::string& n, const std::string& v) {
            try {
              member(c) = parse(v);
            } catch (const ConfigError& e) {
              throw ConfigError(n + ": " + e.what());
            }
          },
          [member, show](const ExperimentConfig& c) { return show(member(const_cast<ExperimentConfig&>(c))); }};
}

#define HN_MEMBER(path) [](ExperimentConfig& c) -> auto& { return c.path; }

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back(number("run", "seed", HN_MEMBER(run.seed)));
    f.push_back(string_field("run", "out", HN_MEMBER(run.out)));
    f.push_back(string_field("run", "reference_model", HN_MEMBER(run.reference_model)));
    f.push_back(number("run", "train_reference", HN_MEMBER(run.train_reference)));

    f.push_back(string_field("data", "source", HN_MEMBER(data.source)));
    f.push_back(number("data", "synth_n", HN_MEMBER(data.synth_n)));
    f.push_back(number("data", "classes", HN_MEMBER(data.classes)));
    f.push_back(number("data", "hw", HN_MEMBER(data.hw)));
    f.push_back(number("data", "synth_radius", HN_MEMBER(data.synth.radius_fraction)));
    f.push_back(number("data", "synth_blob_sigma", HN_MEMBER(data.synth.blob_sigma_fraction)));
    f.push_back(number("data", "synth_jitter", HN_MEMBER(data.synth.centre_jitter)));
    f.push_back(number("data", "synth_noise", HN_MEMBER(data.synth.background_noise)));
    f.push_back(string_field("data", "images", HN_MEMBER(data.images)));
    f.push_back(string_field("data", "labels", HN_MEMBER(data.labels)));
    f.push_back(number("data", "max_samples", HN_MEMBER(data.max_samples)));

    f.push_back(number("split", "healing_fraction", HN_MEMBER(split.healing_fraction)));
    f.push_back(number("split", "test_count", HN_MEMBER(split.test_count)));
    f.push_back(number("split", "stratified", HN_MEMBER(split.stratified)));

    f.push_back(enum_field("attack", "mode", HN_MEMBER(attack.mode), attack::parse_attack_mode,
                           [](attack::AttackMode m) { return attack::to_string(m); }));
    f.push_back(enum_field("attack", "budget", HN_MEMBER(attack.budget), attack::Budget::parse,
                           [](const attack::Budget& b) { return b.to_string(); }));
    f.push_back(number("attack", "epsilon", HN_MEMBER(attack.epsilon)));
    f.push_back(number("attack", "target_class", HN_MEMBER(attack.target_class)));
    f.push_back(number("attack", "second_target", HN_MEMBER(attack.second_target)));
    f.push_back(enum_field("attack", "selection", HN_MEMBER(attack.selection), attack::parse_selection_mode,
                           [](attack::SelectionMode m) { return attack::to_string(m); }));
    f.push_back(number("attack", "patch_size", HN_MEMBER(attack.patch_size)));
    f.push_back(number("attack", "patch_inset", HN_MEMBER(attack.patch_inset)));
    f.push_back(number("attack", "patch_value", HN_MEMBER(attack.patch_value)));
    f.push_back(number("attack", "noise_amplitude", HN_MEMBER(attack.noise_amplitude)));
    f.push_back(string_field("attack", "trigger_file", HN_MEMBER(attack.trigger_file)));

    f.push_back(string_field("model", "architecture", HN_MEMBER(model.architecture)));
    f.push_back(enum_field("model", "loss", HN_MEMBER(model.loss), nn::parse_loss_kind,
                           [](nn::LossKind k) { return nn::to_string(k); }));

    f.push_back(enum_field("optimizer", "kind", HN_MEMBER(optimizer.kind), nn::parse_optimizer_kind,
                           [](nn::OptimizerKind k) { return nn::to_string(k); }));
    f.push_back(number("optimizer", "learning_rate", HN_MEMBER(optimizer.learning_rate)));
    f.push_back(number("optimizer", "momentum", HN_MEMBER(optimizer.momentum)));
    f.push_back(number("optimizer", "batch_size", HN_MEMBER(optimizer.batch_size)));

    f.push_back(enum_field("trainer", "kind", HN_MEMBER(trainer.kind), parse_trainer_kind,
                           [](TrainerKind k) { return to_string(k); }));
    f.push_back(number("trainer", "epochs", HN_MEMBER(trainer.epochs)));
    f.push_back(number("trainer", "checkpoint_every", HN_MEMBER(trainer.checkpoint_every)));

    f.push_back(number("hasnet", "s", HN_MEMBER(hasnet.s)));
    f.push_back(number("hasnet", "d", HN_MEMBER(hasnet.d)));
    f.push_back(number("hasnet", "tau", HN_MEMBER(hasnet.tau)));
    f.push_back(number("hasnet", "heal_epochs", HN_MEMBER(hasnet.heal_epochs)));
    f.push_back(number("hasnet", "max_iterations", HN_MEMBER(hasnet.max_iterations)));
    f.push_back(enum_field("hasnet", "policy", HN_MEMBER(hasnet.policy), defense::parse_policy,
                           [](defense::Policy p) { return defense::to_string(p); }));

    f.push_back(number("gradshape", "clip_norm", HN_MEMBER(gradshape.clip_norm)));
    f.push_back(number("gradshape", "noise_multiplier", HN_MEMBER(gradshape.noise_multiplier)));
    f.push_back(number("gradshape", "microbatch", HN_MEMBER(gradshape.microbatch)));

    f.push_back(number("strip", "enabled", HN_MEMBER(strip.enabled)));
    f.push_back(number("strip", "K", HN_MEMBER(strip.K)));
    f.push_back(number("strip", "frr", HN_MEMBER(strip.frr)));
    f.push_back(number("strip", "blend", HN_MEMBER(strip.blend)));
    f.push_back(number("strip", "pool_size", HN_MEMBER(strip.pool_size)));
    f.push_back(number("strip", "calibration_size", HN_MEMBER(strip.calibration_size)));
    f.push_back(number("strip", "scan_size", HN_MEMBER(strip.scan_size)));
    return f;
  }();
  return all;
}

#undef HN_MEMBER

const Field* find_field(const std::string& section, const std::string& key) {
  for (const Field& f : fields()) {
    if (f.section == section && f.key == key) return &f;
  }
  return nullptr;
}

bool known_section(const std::string& section) {
  for (const Field& f : fields()) {
    if (f.section == section) return true;
  }
  return false;
}

void assign(ExperimentConfig& cfg, const std::string& section, const std::string& key,
            const std::string& value) {
  const Field* f = find_field(section, key);
  if (!f) {
    throw ConfigError(known_section(section) ? "unknown key '" + where(section, key) + "'"
                                             : "unknown section '" + section + "'");
  }
  f->set(cfg, where(section, key), value);
}

}  // namespace

TrainerKind parse_trainer_kind(std::string_view text) {
  if (text == "undefended") return TrainerKind::undefended;
  if (text == "hasnet") return TrainerKind::hasnet;
  if (text == "gradshape") return TrainerKind::gradshape;
  throw ConfigError("unknown trainer '" + std::string(text) + "' (undefended | hasnet | gradshape)");
}

std::string to_string(TrainerKind kind) {
  switch (kind) {
    case TrainerKind::undefended: return "undefended";
    case TrainerKind::hasnet: return "hasnet";
    case TrainerKind::gradshape: return "gradshape";
  }
  return "undefended";
}

void ExperimentConfig::validate() const {
  if (data.source == "synth") {
    if (data.synth_n == 0 || data.hw == 0) throw ConfigError("data: synth_n and hw must be positive");
  } else if (data.source == "idx") {
    if (data.images.empty() || data.labels.empty()) {
      throw ConfigError("data: idx source needs images and labels paths");
    }
  } else {
    throw ConfigError("data.source must be synth or idx, got '" + data.source + "'");
  }
  if (data.classes < 2) throw ConfigError("data.classes must be at least 2");
  if (!(split.healing_fraction > 0.0 && split.healing_fraction < 0.5)) {
    throw ConfigError("split.healing_fraction must be in (0, 0.5)");
  }
  if (split.test_count == 0) throw ConfigError("split.test_count must be positive");
  if (attack.mode != attack::AttackMode::none) {
    if (attack.target_class >= data.classes) throw ConfigError("attack.target_class out of range");
    if (!(attack.epsilon >= 0.1 && attack.epsilon <= 1.0)) {
      throw ConfigError("attack.epsilon must be in [0.1, 1.0]");
    }
    if (attack.trigger_file.empty() && attack.mode != attack::AttackMode::invisible &&
        (attack.patch_size == 0 || attack.patch_size + attack.patch_inset > data.hw)) {
      throw ConfigError("attack.patch_size and patch_inset do not fit the image");
    }
  }
  (void)nn::resolve_architecture(model.architecture, data.classes);
  optimizer.validate();
  hasnet.validate();
  gradshape.validate(optimizer.batch_size);
  if (strip.enabled) {
    if (strip.K == 0) throw ConfigError("strip.K must be at least 1");
    if (!(strip.frr > 0.0 && strip.frr < 1.0)) throw ConfigError("strip.frr must be in (0, 1)");
    if (!(strip.blend > 0.0 && strip.blend < 1.0)) throw ConfigError("strip.blend must be in (0, 1)");
    if (strip.pool_size < strip.K) throw ConfigError("strip.pool_size must be at least K");
    if (strip.calibration_size == 0 || strip.scan_size == 0) {
      throw ConfigError("strip.calibration_size and scan_size must be positive");
    }
  }
}

std::string ExperimentConfig::serialize() const {
  std::ostringstream out;
  std::string section;
  for (const Field& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out << '\n';
      section = f.section;
      out << '[' << section << "]\n";
    }
    out << f.key << " = " << f.get(*this) << '\n';
  }
  return out.str();
}

Override Override::parse(std::string_view text) {
  const auto eq = text.find('=');
  const auto dot = text.find('.');
  if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq || dot == 0) {
    throw ConfigError("override '" + std::string(text) + "' is not section.key=value");
  }
  auto trim = [](std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return std::string(s);
  };
  return {trim(text.substr(0, dot)), trim(text.substr(dot + 1, eq - dot - 1)), trim(text.substr(eq + 1))};
}

ExperimentConfig parse_config(std::string_view text, const std::vector<Override>& overrides) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("key '" + section + "' appears outside any section");
    }
    if (!known_section(section)) throw ConfigError("unknown section '" + section + "'");
    for (const auto& [key, value] : body) assign(cfg, section, key, value.data());
  }
  for (const Override& o : overrides) assign(cfg, o.section, o.key, o.value);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<Override>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), overrides);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(where(f.section, f.key));
  return keys;
}

}  // namespace hasnets::harness
