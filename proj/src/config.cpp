#include "fbn/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace fbn {

namespace {

std::string format_float(float v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string where(const Ini& ini, const std::string& sec, const std::string& key) {
  const auto l = ini.line(sec, key);
  return ini.source() + (l ? ":" + std::to_string(l) : "") + ": [" + sec + "] " + key;
}

// Typed access to one section; unknown keys are reported by finish().
class Section {
 public:
  Section(const Ini& ini, std::string name) : ini_(ini), name_(std::move(name)) {}

  std::optional<std::string> raw(const std::string& key) {
    used_.insert(key);
    return ini_.get(name_, key);
  }

  template <typename F>
  void read(const std::string& key, F&& parse) {
    auto v = raw(key);
    if (!v) return;
    try {
      parse(*v);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(where(ini_, name_, key) + ": " + e.what());
    }
  }

  void size(const std::string& key, std::size_t& out) {
    read(key, [&](const std::string& v) {
      std::uint64_t x = 0;
      auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
      if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("expected a non-negative integer, got '" + v + "'");
      out = static_cast<std::size_t>(x);
    });
  }

  void u64(const std::string& key, std::uint64_t& out) {
    std::size_t x = out;
    size(key, x);
    out = x;
  }

  void real(const std::string& key, double& out) {
    read(key, [&](const std::string& v) {
      double x = 0;
      auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
      if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(x))
        throw std::invalid_argument("expected a number, got '" + v + "'");
      out = x;
    });
  }

  void real(const std::string& key, float& out) {
    double x = out;
    real(key, x);
    out = static_cast<float>(x);
  }

  void flag(const std::string& key, bool& out) {
    read(key, [&](const std::string& v) {
      if (v == "true" || v == "yes" || v == "1") out = true;
      else if (v == "false" || v == "no" || v == "0") out = false;
      else throw std::invalid_argument("expected true or false, got '" + v + "'");
    });
  }

  void text(const std::string& key, std::string& out) {
    read(key, [&](const std::string& v) { out = v; });
  }

  void finish() const {
    if (!ini_.has(name_)) return;
    for (const auto& [k, _] : ini_.sections().at(name_))
      if (!used_.count(k)) throw ConfigError(where(ini_, name_, k) + ": unknown key");
  }

 private:
  const Ini& ini_;
  std::string name_;
  std::set<std::string> used_;
};

void read_data(Section& s, DataConfig& d) {
  s.size("count", d.count);
  s.size("image_size", d.image_size);
  s.size("heatmap_size", d.heatmap_size);
  s.u64("seed", d.seed);
  s.real("fill", d.fill);
  s.real("angle_scale", d.angle_scale);
  s.real("thickness", d.render.thickness);
  s.read("background", [&](const std::string& v) {
    if (v == "flat") d.render.background = Background::flat;
    else if (v == "noise") d.render.background = Background::noise;
    else throw std::invalid_argument("expected flat or noise, got '" + v + "'");
  });
  s.real("level", d.render.level);
  s.real("noise", d.render.noise);
  s.flag("augment", d.augment);
  s.real("shift", d.aug.shift);
  s.real("scale_lo", d.aug.scale_lo);
  s.real("scale_hi", d.aug.scale_hi);
  s.real("rotation", d.aug.rotation);
}

void write_data(std::ostream& os, const DataConfig& d) {
  os << "count = " << d.count << "\nimage_size = " << d.image_size << "\nheatmap_size = " << d.heatmap_size
     << "\nseed = " << d.seed << "\nfill = " << format_double(d.fill)
     << "\nangle_scale = " << format_double(d.angle_scale) << "\nthickness = " << format_double(d.render.thickness)
     << "\nbackground = " << (d.render.background == Background::flat ? "flat" : "noise")
     << "\nlevel = " << format_float(d.render.level) << "\nnoise = " << format_float(d.render.noise)
     << "\naugment = " << (d.augment ? "true" : "false") << "\nshift = " << format_double(d.aug.shift)
     << "\nscale_lo = " << format_double(d.aug.scale_lo) << "\nscale_hi = " << format_double(d.aug.scale_hi)
     << "\nrotation = " << format_double(d.aug.rotation) << "\n";
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

Ini Ini::parse(std::string_view text, const std::string& source) {
  Ini ini;
  ini.source_ = source;
  std::string section;
  std::size_t lineno = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const std::string at = source + ":" + std::to_string(lineno) + ": ";
    if (t[0] == '[') {
      if (t.back() != ']') throw ConfigError(at + "unterminated section header");
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      if (section.empty()) throw ConfigError(at + "empty section name");
      ini.sections_[section];
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(at + "expected key = value");
    if (section.empty()) throw ConfigError(at + "key outside of a section");
    auto key = trim(std::string_view(t).substr(0, eq));
    auto value = trim(std::string_view(t).substr(eq + 1));
    if (const auto hash = value.find(" #"); hash != std::string::npos) value = trim(value.substr(0, hash));
    if (key.empty()) throw ConfigError(at + "empty key");
    if (ini.sections_[section].count(key)) throw ConfigError(at + "duplicate key '" + key + "' in [" + section + "]");
    ini.sections_[section][key] = value;
    ini.lines_[section + "\n" + key] = lineno;
  }
  return ini;
}

Ini Ini::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), path.string());
}

std::optional<std::string> Ini::get(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  if (s == sections_.end()) return std::nullopt;
  auto k = s->second.find(key);
  if (k == s->second.end()) return std::nullopt;
  return k->second;
}

void Ini::set(const std::string& section, const std::string& key, std::string value) {
  sections_[section][key] = std::move(value);
}

std::size_t Ini::line(const std::string& section, const std::string& key) const {
  auto it = lines_.find(section + "\n" + key);
  return it == lines_.end() ? 0 : it->second;
}

double TrainConfig::lr_at(std::size_t step) const {
  double r = lr;
  if (decay_every) r *= std::pow(lr_decay, static_cast<double>(step / decay_every));
  if (step < warmup) r *= static_cast<double>(step + 1) / static_cast<double>(warmup);
  return r;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("training config: " + m); };
  if (batch == 0) fail("batch must be positive");
  if (!(lr > 0)) fail("lr must be positive");
  if (!(momentum >= 0 && momentum < 1)) fail("momentum must be in [0, 1)");
  if (!(lr_decay > 0)) fail("lr_decay must be positive");
  if (!(clip_norm >= 0)) fail("clip_norm must be non-negative");
}

DataConfig RunConfig::eval_data() const {
  DataConfig d = data;
  d.count = eval_count;
  d.seed = eval_seed;
  return d;
}

void RunConfig::validate() const {
  network.validate();
  data.validate();
  training.validate();
  if (data.image_size != network.input_size || data.heatmap_size != network.feature_size)
    throw std::invalid_argument("config: data image/heatmap sizes must match the network input/feature sizes");
  if (data.graph != network.graph) throw std::invalid_argument("config: data and network graphs differ");
}

DataConfig data_config_from(const Ini& ini) {
  DataConfig d;
  Section s(ini, "data");
  s.text("graph", d.graph);
  read_data(s, d);
  s.finish();
  for (const auto& [name, _] : ini.sections())
    if (name != "data" && name != "dataset") throw ConfigError(ini.source() + ": unexpected section [" + name + "]");
  return d;
}

std::string data_ini(const DataConfig& c) {
  std::ostringstream os;
  os << "[data]\ngraph = " << c.graph << "\n";
  write_data(os, c);
  return os.str();
}

RunConfig run_config_from(const Ini& ini) {
  RunConfig c;
  auto& n = c.network;
  {
    Section s(ini, "network");
    s.size("input_size", n.input_size);
    s.size("feature_size", n.feature_size);
    s.size("joints", n.joints);
    s.size("channels_per_joint", n.channels_per_joint);
    s.size("stack_channels", n.stack_channels);
    s.size("width", n.width);
    s.size("agg_channels", n.agg_channels);
    s.size("depth_channels", n.depth_channels);
    s.size("stacks", n.stacks);
    s.read("boosting", [&](const std::string& v) { n.boosting = parse_boost_mode(v); });
    s.read("cell", [&](const std::string& v) { n.cell = parse_cell_kind(v); });
    s.real("gamma", n.gamma);
    s.real("omega_sq", n.omega_sq);
    s.real("heatmap_sigma", n.heatmap_sigma);
    s.finish();
  }
  {
    Section s(ini, "graph");
    s.text("name", n.graph);
    s.read("variant", [&](const std::string& v) { n.variant = parse_variant_kind(v); });
    s.finish();
  }
  {
    Section s(ini, "data");
    c.data.image_size = n.input_size;
    c.data.heatmap_size = n.feature_size;
    read_data(s, c.data);
    s.text("path", c.data_path);
    s.size("eval_count", c.eval_count);
    s.u64("eval_seed", c.eval_seed);
    s.finish();
    c.data.graph = n.graph;
  }
  {
    auto& t = c.training;
    Section s(ini, "training");
    s.size("steps", t.steps);
    s.size("batch", t.batch);
    s.real("lr", t.lr);
    s.real("momentum", t.momentum);
    s.real("lr_decay", t.lr_decay);
    s.size("decay_every", t.decay_every);
    s.size("warmup", t.warmup);
    s.real("clip_norm", t.clip_norm);
    s.u64("init_seed", t.init_seed);
    s.u64("shuffle_seed", t.shuffle_seed);
    s.size("log_every", t.log_every);
    s.size("checkpoint_every", t.checkpoint_every);
    s.flag("augment", t.augment);
    s.finish();
  }
  for (const auto& [name, _] : ini.sections())
    if (name != "network" && name != "graph" && name != "data" && name != "training")
      throw ConfigError(ini.source() + ": unknown section [" + name + "]");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(ini.source() + ": " + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) { return run_config_from(Ini::load(path)); }

std::string to_ini(const RunConfig& c) {
  const auto& n = c.network;
  const auto& t = c.training;
  std::ostringstream os;
  os << "[network]\ninput_size = " << n.input_size << "\nfeature_size = " << n.feature_size
     << "\njoints = " << n.joints << "\nchannels_per_joint = " << n.channels_per_joint
     << "\nstack_channels = " << n.stack_channels << "\nwidth = " << n.width << "\nagg_channels = " << n.agg_channels
     << "\ndepth_channels = " << n.depth_channels << "\nstacks = " << n.stacks
     << "\nboosting = " << to_string(n.boosting) << "\ncell = " << to_string(n.cell)
     << "\ngamma = " << format_double(n.gamma) << "\nomega_sq = " << format_double(n.omega_sq)
     << "\nheatmap_sigma = " << format_double(n.heatmap_sigma) << "\n\n[graph]\nname = " << n.graph
     << "\nvariant = " << to_string(n.variant) << "\n\n[data]\n";
  write_data(os, c.data);
  if (!c.data_path.empty()) os << "path = " << c.data_path << "\n";
  os << "eval_count = " << c.eval_count << "\neval_seed = " << c.eval_seed << "\n\n[training]\nsteps = " << t.steps
     << "\nbatch = " << t.batch << "\nlr = " << format_double(t.lr) << "\nmomentum = " << format_double(t.momentum)
     << "\nlr_decay = " << format_double(t.lr_decay) << "\ndecay_every = " << t.decay_every
     << "\nwarmup = " << t.warmup << "\nclip_norm = " << format_double(t.clip_norm)
     << "\ninit_seed = " << t.init_seed << "\nshuffle_seed = " << t.shuffle_seed << "\nlog_every = " << t.log_every
     << "\ncheckpoint_every = " << t.checkpoint_every << "\naugment = " << (t.augment ? "true" : "false") << "\n";
  return os.str();
}

std::uint64_t config_digest(const RunConfig& c) { return fnv1a(to_ini(c)); }

}  // namespace fbn
