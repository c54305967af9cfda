#include "grace/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "grace/errors.hpp"
#include "grace/vocab.hpp"

namespace grace {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

struct Field {
  std::string key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define GRACE_INT_FIELD(name, member)                                                                   \
  Field{name, [](TrainConfig& c, const std::string& v) { c.member = parse_number<int>(name, v); },  \
        [](const TrainConfig& c) { return std::to_string(c.member); }}
#define GRACE_REAL_FIELD(name, member)                                                                     \
  Field{name, [](TrainConfig& c, const std::string& v) { c.member = parse_number<double>(name, v); },  \
        [](const TrainConfig& c) { return fmt(c.member); }}
#define GRACE_BOOL_FIELD(name, member)                                                        \
  Field{name, [](TrainConfig& c, const std::string& v) { c.member = parse_bool(name, v); }, \
        [](const TrainConfig& c) { return std::string(c.member ? "true" : "false"); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      Field{"seed", [](TrainConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); },
            [](const TrainConfig& c) { return std::to_string(c.seed); }},
      GRACE_INT_FIELD("stage1_epochs", stage1_epochs),
      GRACE_INT_FIELD("stage1_vat_epochs", stage1_vat_epochs),
      GRACE_INT_FIELD("stage2_epochs", stage2_epochs),
      GRACE_REAL_FIELD("lr_stage1", lr_stage1),
      GRACE_REAL_FIELD("lr_stage1_vat", lr_stage1_vat),
      GRACE_REAL_FIELD("lr_stage2_asc", lr_stage2_asc),
      GRACE_REAL_FIELD("lr_stage2_ate", lr_stage2_ate),
      GRACE_INT_FIELD("batch_size", batch_size),
      GRACE_REAL_FIELD("warmup_fraction", warmup_fraction),
      GRACE_BOOL_FIELD("ghm", ghm),
      GRACE_INT_FIELD("ghm_bins", ghm_bins),
      GRACE_REAL_FIELD("ghm_momentum", ghm_momentum),
      GRACE_BOOL_FIELD("ghm_ema", ghm_ema),
      GRACE_BOOL_FIELD("vat", vat),
      GRACE_REAL_FIELD("vat_xi", vat_config.xi),
      GRACE_REAL_FIELD("vat_eps", vat_config.eps),
      Field{"vat_apply_to",
            [](TrainConfig& c, const std::string& v) { c.vat_config.apply_to = parse_vat_branch(v); },
            [](const TrainConfig& c) { return to_string(c.vat_config.apply_to); }},
      GRACE_REAL_FIELD("clip_norm", clip_norm),
      GRACE_BOOL_FIELD("consistent_polarity", consistent_polarity),
      GRACE_INT_FIELD("min_count", min_count),
      GRACE_BOOL_FIELD("dev_eval", dev_eval),
      GRACE_INT_FIELD("model.layers", model.layers),
      GRACE_INT_FIELD("model.shared_layers", model.shared_layers),
      GRACE_INT_FIELD("model.hidden", model.hidden),
      GRACE_INT_FIELD("model.heads", model.heads),
      GRACE_INT_FIELD("model.ffn", model.ffn),
      GRACE_INT_FIELD("model.max_len", model.max_len),
      GRACE_INT_FIELD("model.asc_layers", model.asc_layers),
      GRACE_REAL_FIELD("model.dropout", model.dropout),
  };
  return all;
}

#undef GRACE_INT_FIELD
#undef GRACE_REAL_FIELD
#undef GRACE_BOOL_FIELD

}  // namespace

void TrainConfig::validate() const {
  if (stage1_epochs < 1) throw ConfigError("stage1_epochs must be positive");
  if (stage1_vat_epochs < 0) throw ConfigError("stage1_vat_epochs must be non-negative");
  if (stage2_epochs < 1) throw ConfigError("stage2_epochs must be positive");
  for (auto [name, lr] : {std::pair{"lr_stage1", lr_stage1}, {"lr_stage1_vat", lr_stage1_vat},
                          {"lr_stage2_asc", lr_stage2_asc}, {"lr_stage2_ate", lr_stage2_ate}}) {
    if (!(lr > 0)) throw ConfigError(std::string(name) + " must be positive");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(warmup_fraction >= 0 && warmup_fraction <= 1)) throw ConfigError("warmup_fraction must lie in [0, 1]");
  if (ghm_bins < 1) throw ConfigError("ghm_bins must be at least 1");
  if (!(ghm_momentum >= 0 && ghm_momentum < 1)) throw ConfigError("ghm_momentum must lie in [0, 1)");
  if (!(clip_norm >= 0)) throw ConfigError("clip_norm must be non-negative");
  if (min_count < 1) throw ConfigError("min_count must be at least 1");
  vat_config.validate();
  EncoderConfig m = model;
  if (m.vocab_size < Vocab::kNumSpecials + 1) m.vocab_size = Vocab::kNumSpecials + 1;
  m.validate();
  if (m.asc_layers > m.layers) throw ConfigError("model.asc_layers must not exceed model.layers");
}

TrainConfig paper_preset() { return TrainConfig{}; }

TrainConfig desk_preset() {
  TrainConfig c;
  c.stage1_epochs = 1;
  c.stage1_vat_epochs = 1;
  c.stage2_epochs = 16;
  c.lr_stage1 = 1e-3;
  c.lr_stage1_vat = 3e-4;
  c.lr_stage2_asc = 1e-3;
  c.lr_stage2_ate = 1e-4;
  c.batch_size = 16;
  c.vat_config.eps = 0.1;
  c.model.shared_layers = 1;
  c.model.dropout = 0.0;
  return c;
}

TrainConfig base_preset() {
  TrainConfig c = desk_preset();
  c.ghm = false;
  c.vat = false;
  c.stage1_vat_epochs = 0;
  c.model.shared_layers = c.model.layers;
  c.model.asc_layers = 0;
  return c;
}

TrainConfig preset_by_name(const std::string& name) {
  if (name == "paper") return paper_preset();
  if (name == "desk") return desk_preset();
  if (name == "base") return base_preset();
  throw ConfigError("unknown preset '" + name + "' (expected paper, desk or base)");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

TrainConfig parse_train_config(std::istream& in) {
  std::map<std::string, std::string> values;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (!values.emplace(key, value).second) throw ConfigError("config key '" + key + "' given twice");
  }

  TrainConfig cfg;
  const auto preset = values.find("preset");
  const bool has_preset = preset != values.end();
  if (has_preset) {
    cfg = preset_by_name(preset->second);
    values.erase(preset);
  }
  for (const auto& f : fields()) {
    auto it = values.find(f.key);
    if (it == values.end()) {
      if (!has_preset) throw ConfigError("missing config key '" + f.key + "'");
      continue;
    }
    f.set(cfg, it->second);
    values.erase(it);
  }
  if (!values.empty()) throw ConfigError("unknown config key '" + values.begin()->first + "'");
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_train_config(in);
}

std::string format_train_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace grace
