#include "mmer/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace mmer {

RunConfig::RunConfig() { train.seeds = default_seeds(); }

void RunConfig::validate() const {
  model.validate();
  train.validate();
  synth.validate();
  train.elimination.validate(model.modalities);
  if (synth.modalities.size() != model.modalities.size()) throw ConfigError("synthetic and model modalities differ");
  for (std::size_t i = 0; i < model.modalities.size(); ++i) {
    if (synth.modalities[i].name != model.modalities[i].name || synth.modalities[i].width != model.modalities[i].width) {
      throw ConfigError("synthetic and model modalities differ");
    }
  }
  if (train.segment_length > model.max_steps) throw ConfigError("train.segment_length exceeds model.max_steps");
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto comma = std::min(s.find(',', pos), s.size());
    auto item = trim(s.substr(pos, comma - pos));
    if (!item.empty()) out.push_back(item);
    pos = comma + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view text, const std::string& key) {
  text = trim(text);
  T value{};
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || end != text.data() + text.size() || text.empty()) {
    throw ConfigError("invalid value '" + std::string(text) + "' for " + key);
  }
  return value;
}

std::vector<std::pair<std::string, std::string>> parse_pairs(std::string_view text, const std::string& key) {
  std::vector<std::pair<std::string, std::string>> out;
  for (auto item : split_list(text)) {
    const auto colon = item.find(':');
    if (colon == std::string_view::npos) throw ConfigError(key + " expects name:value entries, got '" + std::string(item) + "'");
    out.emplace_back(std::string(trim(item.substr(0, colon))), std::string(trim(item.substr(colon + 1))));
  }
  return out;
}

using Setter = void (*)(RunConfig&, std::string_view, const std::string&);

void set_modalities(RunConfig& c, std::string_view v, const std::string& key) {
  c.model.modalities.clear();
  for (auto& [name, width] : parse_pairs(v, key)) c.model.modalities.push_back({name, parse_number<Index>(width, key)});
  if (c.model.modalities.empty()) throw ConfigError("modalities must not be empty");
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"modalities", set_modalities},
      {"target", [](RunConfig& c, std::string_view v, const std::string&) {
         c.model.target = std::string(trim(v));
         c.synth.target = c.model.target;
       }},
      {"synth.seed", [](RunConfig& c, std::string_view v, const std::string& k) { c.synth.seed = parse_number<std::uint64_t>(v, k); }},
      {"synth.steps", [](RunConfig& c, std::string_view v, const std::string& k) { c.synth.steps = parse_number<Index>(v, k); }},
      {"synth.train_samples",
       [](RunConfig& c, std::string_view v, const std::string& k) { c.synth.train_samples = parse_number<Index>(v, k); }},
      {"synth.val_samples",
       [](RunConfig& c, std::string_view v, const std::string& k) { c.synth.val_samples = parse_number<Index>(v, k); }},
      {"synth.test_samples",
       [](RunConfig& c, std::string_view v, const std::string& k) { c.synth.test_samples = parse_number<Index>(v, k); }},
      {"synth.components",
       [](RunConfig& c, std::string_view v, const std::string& k) { c.synth.components = parse_number<Index>(v, k); }},
      {"synth.freq_min", [](RunConfig& c, std::string_view v, const std::string& k) { c.synth.freq_min = parse_number<double>(v, k); }},
      {"synth.freq_max", [](RunConfig& c, std::string_view v, const std::string& k) { c.synth.freq_max = parse_number<double>(v, k); }},
      {"synth.distractors",
       [](RunConfig& c, std::string_view v, const std::string& k) { c.synth.distractors = parse_number<Index>(v, k); }},
      {"model.d_model", [](RunConfig& c, std::string_view v, const std::string& k) { c.model.d_model = parse_number<Index>(v, k); }},
      {"model.encoder_heads",
       [](RunConfig& c, std::string_view v, const std::string& k) { c.model.encoder_heads = parse_number<Index>(v, k); }},
      {"model.encoder_layers",
       [](RunConfig& c, std::string_view v, const std::string& k) { c.model.encoder_layers = parse_number<Index>(v, k); }},
      {"model.decoder_layers",
       [](RunConfig& c, std::string_view v, const std::string& k) { c.model.decoder_layers = parse_number<Index>(v, k); }},
      {"model.decoder_heads",
       [](RunConfig& c, std::string_view v, const std::string& k) { c.model.decoder_heads = parse_number<Index>(v, k); }},
      {"model.tcn_layers", [](RunConfig& c, std::string_view v, const std::string& k) { c.model.tcn_layers = parse_number<Index>(v, k); }},
      {"model.tcn_kernel", [](RunConfig& c, std::string_view v, const std::string& k) { c.model.tcn_kernel = parse_number<Index>(v, k); }},
      {"model.ffn_width", [](RunConfig& c, std::string_view v, const std::string& k) { c.model.ffn_width = parse_number<Index>(v, k); }},
      {"model.ern_hidden", [](RunConfig& c, std::string_view v, const std::string& k) { c.model.ern_hidden = parse_number<Index>(v, k); }},
      {"model.mask_length",
       [](RunConfig& c, std::string_view v, const std::string& k) { c.model.mask_length = parse_number<Index>(v, k); }},
      {"model.max_steps", [](RunConfig& c, std::string_view v, const std::string& k) { c.model.max_steps = parse_number<Index>(v, k); }},
      {"model.dropout", [](RunConfig& c, std::string_view v, const std::string& k) { c.model.dropout = parse_number<double>(v, k); }},
      {"train.batch_size", [](RunConfig& c, std::string_view v, const std::string& k) { c.train.batch_size = parse_number<Index>(v, k); }},
      {"train.max_epochs", [](RunConfig& c, std::string_view v, const std::string& k) { c.train.max_epochs = parse_number<Index>(v, k); }},
      {"train.learning_rate",
       [](RunConfig& c, std::string_view v, const std::string& k) { c.train.learning_rate = parse_number<double>(v, k); }},
      {"train.plateau_patience",
       [](RunConfig& c, std::string_view v, const std::string& k) { c.train.plateau_patience = parse_number<Index>(v, k); }},
      {"train.lr_factor", [](RunConfig& c, std::string_view v, const std::string& k) { c.train.lr_factor = parse_number<double>(v, k); }},
      {"train.early_stop_patience",
       [](RunConfig& c, std::string_view v, const std::string& k) { c.train.early_stop_patience = parse_number<Index>(v, k); }},
      {"train.beta1", [](RunConfig& c, std::string_view v, const std::string& k) { c.train.beta1 = parse_number<double>(v, k); }},
      {"train.beta2", [](RunConfig& c, std::string_view v, const std::string& k) { c.train.beta2 = parse_number<double>(v, k); }},
      {"train.adam_eps", [](RunConfig& c, std::string_view v, const std::string& k) { c.train.adam_eps = parse_number<double>(v, k); }},
      {"train.segment_length",
       [](RunConfig& c, std::string_view v, const std::string& k) { c.train.segment_length = parse_number<Index>(v, k); }},
      {"train.segment_hop", [](RunConfig& c, std::string_view v, const std::string& k) { c.train.segment_hop = parse_number<Index>(v, k); }},
      {"train.eliminate",
       [](RunConfig& c, std::string_view v, const std::string& k) {
         c.train.elimination.entries.clear();
         for (auto& [name, rho] : parse_pairs(v, k)) c.train.elimination.entries.emplace_back(name, parse_number<double>(rho, k));
       }},
      {"train.seeds", [](RunConfig& c, std::string_view v, const std::string&) { c.train.seeds = parse_seed_list(v); }},
      {"train.alpha", [](RunConfig& c, std::string_view v, const std::string& k) { c.train.alpha = parse_number<double>(v, k); }},
  };
  return table;
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  std::vector<std::uint64_t> out;
  for (auto item : split_list(text)) {
    const auto dash = item.find('-');
    if (dash == std::string_view::npos) {
      out.push_back(parse_number<std::uint64_t>(item, "seed list"));
      continue;
    }
    const auto lo = parse_number<std::uint64_t>(item.substr(0, dash), "seed list");
    const auto hi = parse_number<std::uint64_t>(item.substr(dash + 1), "seed list");
    if (hi < lo) throw ConfigError("descending seed range '" + std::string(item) + "'");
    for (auto s = lo; s <= hi; ++s) out.push_back(s);
  }
  if (std::set<std::uint64_t>(out.begin(), out.end()).size() != out.size()) throw ConfigError("seed list contains duplicates");
  return out;
}

RunConfig parse_config(std::string_view text, const std::string& origin) {
  RunConfig config;
  std::map<std::string, std::string> snr, mixing;
  bool have_snr = false, have_mixing = false;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = std::min(text.find('\n', pos), text.size());
    ++line_no;
    std::string_view line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key " + key);
    try {
      if (key == "synth.snr") {
        for (auto& [n, v] : parse_pairs(value, key)) snr[n] = v;
        have_snr = true;
        continue;
      }
      if (key == "synth.mixing_seed") {
        for (auto& [n, v] : parse_pairs(value, key)) mixing[n] = v;
        have_mixing = true;
        continue;
      }
      const auto it = setters().find(key);
      if (it == setters().end()) throw ConfigError("unknown key " + key);
      it->second(config, value, key);
    } catch (const ConfigError& e) {
      if (std::string_view(e.what()).starts_with(origin)) throw;
      throw ConfigError(where + ": " + e.what());
    }
  }

  // Synthetic modalities follow the declared model modalities.
  const SynthConfig defaults;
  std::vector<SynthModality> synth;
  for (std::size_t i = 0; i < config.model.modalities.size(); ++i) {
    const auto& spec = config.model.modalities[i];
    SynthModality m{spec.name, spec.width, 1.0, 1000 + i};
    for (const auto& d : defaults.modalities) {
      if (d.name == spec.name) {
        m.snr = d.snr;
        m.mixing_seed = d.mixing_seed;
      }
    }
    if (have_snr) {
      if (!snr.count(spec.name)) throw ConfigError(origin + ": synth.snr has no entry for " + spec.name);
      m.snr = parse_number<double>(snr.at(spec.name), "synth.snr");
    }
    if (have_mixing) {
      if (!mixing.count(spec.name)) throw ConfigError(origin + ": synth.mixing_seed has no entry for " + spec.name);
      m.mixing_seed = parse_number<std::uint64_t>(mixing.at(spec.name), "synth.mixing_seed");
    }
    synth.push_back(m);
  }
  for (const auto& [name, _] : snr) {
    if (std::none_of(synth.begin(), synth.end(), [&](const SynthModality& m) { return m.name == name; })) {
      throw ConfigError(origin + ": synth.snr names undeclared modality " + name);
    }
  }
  for (const auto& [name, _] : mixing) {
    if (std::none_of(synth.begin(), synth.end(), [&](const SynthModality& m) { return m.name == name; })) {
      throw ConfigError(origin + ": synth.mixing_seed names undeclared modality " + name);
    }
  }
  config.synth.modalities = std::move(synth);
  config.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string to_text(const RunConfig& c) {
  std::ostringstream out;
  auto list = [](const auto& items, auto&& fmt) {
    std::string s;
    for (const auto& item : items) {
      if (!s.empty()) s += ", ";
      s += fmt(item);
    }
    return s;
  };
  out << "modalities = "
      << list(c.model.modalities, [](const ModalitySpec& m) { return m.name + ":" + std::to_string(m.width); }) << '\n';
  out << "target = " << c.model.target << '\n';
  out << "synth.seed = " << c.synth.seed << '\n';
  out << "synth.steps = " << c.synth.steps << '\n';
  out << "synth.train_samples = " << c.synth.train_samples << '\n';
  out << "synth.val_samples = " << c.synth.val_samples << '\n';
  out << "synth.test_samples = " << c.synth.test_samples << '\n';
  out << "synth.snr = " << list(c.synth.modalities, [](const SynthModality& m) { return m.name + ":" + format_double(m.snr); })
      << '\n';
  out << "synth.mixing_seed = "
      << list(c.synth.modalities, [](const SynthModality& m) { return m.name + ":" + std::to_string(m.mixing_seed); }) << '\n';
  out << "synth.components = " << c.synth.components << '\n';
  out << "synth.freq_min = " << format_double(c.synth.freq_min) << '\n';
  out << "synth.freq_max = " << format_double(c.synth.freq_max) << '\n';
  out << "synth.distractors = " << c.synth.distractors << '\n';
  out << "model.d_model = " << c.model.d_model << '\n';
  out << "model.encoder_heads = " << c.model.encoder_heads << '\n';
  out << "model.encoder_layers = " << c.model.encoder_layers << '\n';
  out << "model.decoder_layers = " << c.model.decoder_layers << '\n';
  out << "model.decoder_heads = " << c.model.decoder_heads << '\n';
  out << "model.tcn_layers = " << c.model.tcn_layers << '\n';
  out << "model.tcn_kernel = " << c.model.tcn_kernel << '\n';
  out << "model.ffn_width = " << c.model.ffn_width << '\n';
  out << "model.ern_hidden = " << c.model.ern_hidden << '\n';
  out << "model.mask_length = " << c.model.mask_length << '\n';
  out << "model.max_steps = " << c.model.max_steps << '\n';
  out << "model.dropout = " << format_double(c.model.dropout) << '\n';
  out << "train.batch_size = " << c.train.batch_size << '\n';
  out << "train.max_epochs = " << c.train.max_epochs << '\n';
  out << "train.learning_rate = " << format_double(c.train.learning_rate) << '\n';
  out << "train.plateau_patience = " << c.train.plateau_patience << '\n';
  out << "train.lr_factor = " << format_double(c.train.lr_factor) << '\n';
  out << "train.early_stop_patience = " << c.train.early_stop_patience << '\n';
  out << "train.beta1 = " << format_double(c.train.beta1) << '\n';
  out << "train.beta2 = " << format_double(c.train.beta2) << '\n';
  out << "train.adam_eps = " << format_double(c.train.adam_eps) << '\n';
  out << "train.segment_length = " << c.train.segment_length << '\n';
  out << "train.segment_hop = " << c.train.segment_hop << '\n';
  out << "train.eliminate = "
      << list(c.train.elimination.entries, [](const auto& e) { return e.first + ":" + format_double(e.second); }) << '\n';
  out << "train.seeds = " << list(c.train.seeds, [](std::uint64_t s) { return std::to_string(s); }) << '\n';
  out << "train.alpha = " << format_double(c.train.alpha) << '\n';
  return out.str();
}

}  // namespace mmer
