// Copyright 2026 The fanbeats Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fanbeats/error.hpp"
#include "fanbeats/run.hpp"

namespace fanbeats {
namespace {

using Kind = ConfigValue::Kind;

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

bool is_number(const std::string& s) {
  if (s.empty()) return false;
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool valid_key(const std::string& k) {
  if (k.empty() || k.front() == '.' || k.back() == '.') return false;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const char c = k[i];
    if (c == '.' && k[i - 1] == '.') return false;
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'))
      return false;
  }
  return true;
}

// Cursor over one line; throws std::string messages that the caller decorates.
struct Cursor {
  const std::string& s;
  std::size_t i = 0;

  void skip_ws() {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  }
  bool done() {
    skip_ws();
    return i >= s.size() || s[i] == '#';
  }

  ConfigValue string_value() {
    const char quote = s[i++];
    ConfigValue v;
    v.kind = Kind::kString;
    while (i < s.size() && s[i] != quote) {
      char c = s[i++];
      if (quote == '"' && c == '\\') {
        if (i >= s.size()) throw std::string("unterminated escape");
        const char e = s[i++];
        switch (e) {
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case '"': c = '"'; break;
          case '\\': c = '\\'; break;
          default: throw std::string("unsupported escape \\") + e;
        }
      }
      v.text += c;
    }
    if (i >= s.size()) throw std::string("unterminated string");
    ++i;
    return v;
  }

  ConfigValue scalar_or_array(bool allow_array) {
    skip_ws();
    if (i >= s.size()) throw std::string("missing value");
    const char c = s[i];
    if (c == '"' || c == '\'') return string_value();
    if (c == '[') {
      if (!allow_array) throw std::string("nested arrays are not supported");
      ++i;
      ConfigValue v;
      v.kind = Kind::kArray;
      skip_ws();
      if (i < s.size() && s[i] == ']') {
        ++i;
        return v;
      }
      for (;;) {
        v.items.push_back(scalar_or_array(false));
        skip_ws();
        if (i >= s.size()) throw std::string("unterminated array");
        if (s[i] == ',') {
          ++i;
          skip_ws();
          if (i < s.size() && s[i] == ']') {
            ++i;
            return v;
          }
          continue;
        }
        if (s[i] == ']') {
          ++i;
          return v;
        }
        throw std::string("expected ',' or ']' in array");
      }
    }
    if (c == '{') throw std::string("inline tables are not supported");
    const std::size_t start = i;
    while (i < s.size() && s[i] != ',' && s[i] != ']' && s[i] != '#' && s[i] != ' ' &&
           s[i] != '\t')
      ++i;
    std::string word = s.substr(start, i - start);
    ConfigValue v;
    v.text = word;
    if (word == "true" || word == "false") {
      v.kind = Kind::kBool;
    } else if (is_number(word)) {
      v.kind = Kind::kNumber;
    } else {
      throw std::string("cannot parse value '") + word + "'";
    }
    return v;
  }
};

[[noreturn]] void bad(const std::string& key, const std::string& what) {
  fail(ErrorKind::kConfig, "setting '" + key + "': " + what);
}

std::string as_string(const std::string& key, const ConfigValue& v) {
  if (v.kind == Kind::kArray) bad(key, "expected a single value, got an array");
  return v.text;
}

double as_double(const std::string& key, const ConfigValue& v) {
  if (v.kind == Kind::kArray || !is_number(v.text)) bad(key, "expected a number, got '" + v.text + "'");
  return std::stod(v.text[0] == '+' ? v.text.substr(1) : v.text);
}

std::uint64_t as_uint(const std::string& key, const ConfigValue& v) {
  const double d = as_double(key, v);
  if (d < 0 || d != std::floor(d) || d > 9.007199254740992e15)
    bad(key, "expected a non-negative integer, got '" + v.text + "'");
  return static_cast<std::uint64_t>(d);
}

bool as_bool(const std::string& key, const ConfigValue& v) {
  if (v.text == "true") return true;
  if (v.text == "false") return false;
  bad(key, "expected true or false, got '" + v.text + "'");
}

std::vector<ConfigValue> as_list(const ConfigValue& v) {
  if (v.kind == Kind::kArray) return v.items;
  // Bare override text like a,b,c splits on commas.
  std::vector<ConfigValue> out;
  std::stringstream ss(v.text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (!part.empty()) out.push_back(parse_config_value(part));
  }
  return out;
}

std::vector<std::string> as_strings(const std::string& key, const ConfigValue& v) {
  std::vector<std::string> out;
  for (const ConfigValue& item : as_list(v)) out.push_back(as_string(key, item));
  return out;
}

template <typename F>
auto parse_enum(const std::string& key, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    bad(key, e.what());
  }
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    if (c == '\t') {
      out += "\\t";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s = buf;
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string str_list(const std::vector<std::string>& xs) {
  std::string out = "[";
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? ", " : "") + quote(xs[i]);
  return out + "]";
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

ConfigTable parse_config_text(const std::string& text, const std::string& origin) {
  ConfigTable out;
  std::string prefix;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  auto where = [&] { return origin + ":" + std::to_string(line_no) + ": "; };
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    Cursor cur{raw};
    if (cur.done()) continue;
    try {
      if (raw[cur.i] == '[') {
        const std::size_t close = raw.find(']', cur.i);
        if (close == std::string::npos) throw std::string("unterminated table header");
        if (raw.compare(cur.i, 2, "[[") == 0) throw std::string("arrays of tables are not supported");
        const std::string name = trim(raw.substr(cur.i + 1, close - cur.i - 1));
        if (!valid_key(name)) throw std::string("bad table name '") + name + "'";
        prefix = name + ".";
        cur.i = close + 1;
        if (!cur.done()) throw std::string("trailing text after table header");
        continue;
      }
      const std::size_t eq = raw.find('=', cur.i);
      if (eq == std::string::npos) throw std::string("expected key = value");
      const std::string key = trim(raw.substr(cur.i, eq - cur.i));
      if (!valid_key(key)) throw std::string("bad key '") + key + "'";
      cur.i = eq + 1;
      ConfigValue v = cur.scalar_or_array(true);
      if (!cur.done()) throw std::string("trailing text after value");
      const std::string full = prefix + key;
      for (const auto& kv : out)
        if (kv.first == full) throw std::string("duplicate key '") + full + "'";
      out.emplace_back(full, std::move(v));
    } catch (const std::string& msg) {
      fail(ErrorKind::kConfig, where() + msg);
    }
  }
  return out;
}

ConfigTable parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kConfig, "cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

ConfigValue parse_config_value(const std::string& text) {
  const std::string t = trim(text);
  std::string line = t;
  Cursor cur{line};
  try {
    ConfigValue v = cur.scalar_or_array(true);
    if (cur.done()) return v;
  } catch (const std::string&) {
  }
  ConfigValue v;
  v.kind = Kind::kString;
  v.text = t;
  return v;
}

RunConfig make_profile(const std::string& name) {
  RunConfig c;
  if (name == "paper") {
    c.profile = "paper";
    c.data.n_instances = 75000;
    return c;
  }
  if (name != "desk") fail(ErrorKind::kConfig, "unknown profile '" + name + "' (desk|paper)");
  c.profile = "desk";
  c.model.gamma = 64;
  c.train.batch_size = 64;
  c.train.iterations = 300;
  c.train.base_lr = 1e-4;
  c.train.max_lr = 1e-3;
  c.train.alignment.lambda = 0.1;
  c.data.source = "synthetic";
  c.data.n_instances = 2000;
  c.data.seed = 1;
  c.scenario.target = "exchange";
  c.scenario.sources[ScenarioKind::kOdg] = {"rain", "temperature", "wind"};
  c.scenario.sources[ScenarioKind::kCdg] = {"commodity", "temperature", "wind"};
  c.scenario.sources[ScenarioKind::kIdg] = {"commodity", "income", "interest"};
  c.eval_batch = 1024;
  return c;
}

void apply_setting(RunConfig& cfg, const std::string& key_in, const ConfigValue& v) {
  const std::string key = key_in == "lambda" ? "alignment.lambda" : key_in;
  ModelConfig& m = cfg.model;
  TrainConfig& t = cfg.train;
  auto sz = [&] { return static_cast<std::size_t>(as_uint(key, v)); };
  if (key == "profile") {
    cfg = make_profile(parse_enum(key, [&] { return as_string(key, v); }));
  } else if (key == "model.variant") {
    m.variant = parse_enum(key, [&] { return parse_variant(as_string(key, v)); });
  } else if (key == "model.stacks") {
    m.stacks = sz();
  } else if (key == "model.blocks") {
    m.blocks = sz();
  } else if (key == "model.layers") {
    m.layers = sz();
  } else if (key == "model.alpha") {
    m.alpha = sz();
  } else if (key == "model.beta") {
    m.beta = sz();
  } else if (key == "model.gamma") {
    m.gamma = sz();
  } else if (key == "model.nhits_kernel") {
    m.nhits_kernel = sz();
  } else if (key == "model.trend_degree") {
    m.trend_degree = sz();
  } else if (key == "model.harmonics") {
    m.harmonics = sz();
  } else if (key == "model.dlinear_window") {
    m.dlinear_window = sz();
  } else if (key == "model.legacy_residual") {
    m.legacy_residual = as_bool(key, v);
  } else if (key == "model.zero_forecast_head") {
    m.zero_forecast_head = as_bool(key, v);
  } else if (key == "train.batch_size") {
    t.batch_size = sz();
  } else if (key == "train.iterations") {
    t.iterations = sz();
  } else if (key == "train.base_lr") {
    t.base_lr = as_double(key, v);
  } else if (key == "train.max_lr") {
    t.max_lr = as_double(key, v);
  } else if (key == "train.step_size_up") {
    t.step_size_up = sz();
  } else if (key == "train.adam_beta1") {
    t.adam_beta1 = as_double(key, v);
  } else if (key == "train.adam_beta2") {
    t.adam_beta2 = as_double(key, v);
  } else if (key == "train.adam_eps") {
    t.adam_eps = as_double(key, v);
  } else if (key == "train.grad_clip") {
    t.grad_clip = as_double(key, v);
  } else if (key == "train.validate_every") {
    t.validate_every = sz();
  } else if (key == "train.checkpoint_every") {
    t.checkpoint_every = sz();
  } else if (key == "alignment.lambda") {
    t.alignment.lambda = as_double(key, v);
  } else if (key == "alignment.divergence") {
    t.alignment.divergence = parse_enum(key, [&] { return parse_divergence(as_string(key, v)); });
  } else if (key == "alignment.normalizer") {
    t.alignment.normalizer = parse_enum(key, [&] { return parse_normalizer(as_string(key, v)); });
  } else if (key == "alignment.granularity") {
    t.alignment.granularity =
        parse_enum(key, [&] { return parse_granularity(as_string(key, v)); });
  } else if (key == "sinkhorn.epsilon") {
    t.sinkhorn.epsilon = as_double(key, v);
  } else if (key == "sinkhorn.max_iters") {
    t.sinkhorn.max_iters = sz();
  } else if (key == "sinkhorn.tol") {
    t.sinkhorn.tol = as_double(key, v);
  } else if (key == "sinkhorn.unroll_grad") {
    t.sinkhorn.unroll_grad = as_bool(key, v);
  } else if (key == "data.source") {
    const std::string s = as_string(key, v);
    if (s != "synthetic" && s != "csv") bad(key, "expected synthetic or csv, got '" + s + "'");
    cfg.data.source = s;
  } else if (key == "data.path") {
    cfg.data.path = as_string(key, v);
  } else if (key == "data.seed") {
    cfg.data.seed = as_uint(key, v);
  } else if (key == "data.n_instances") {
    cfg.data.n_instances = sz();
  } else if (key == "data.stride") {
    cfg.data.stride = sz();
  } else if (key == "data.strict_split") {
    cfg.data.strict_split = as_bool(key, v);
  } else if (key == "data.with_replacement") {
    cfg.data.with_replacement = as_bool(key, v);
  } else if (key.rfind("data.superdomains.", 0) == 0) {
    const std::string name = key.substr(18);
    auto members = as_strings(key, v);
    auto& map = cfg.data.superdomains;
    auto it = std::find_if(map.begin(), map.end(), [&](const auto& p) { return p.first == name; });
    if (it == map.end()) {
      map.emplace_back(name, std::move(members));
    } else {
      it->second = std::move(members);
    }
  } else if (key == "scenario.kinds") {
    cfg.scenario.kinds.clear();
    for (const std::string& s : as_strings(key, v))
      cfg.scenario.kinds.push_back(parse_enum(key, [&] { return parse_scenario_kind(s); }));
  } else if (key == "scenario.target") {
    cfg.scenario.target = as_string(key, v);
  } else if (key == "scenario.k") {
    cfg.scenario.k = sz();
  } else if (key.rfind("scenario.sources.", 0) == 0) {
    const ScenarioKind kind = parse_enum(key, [&] { return parse_scenario_kind(key.substr(17)); });
    auto list = as_strings(key, v);
    if (list.empty()) {
      cfg.scenario.sources.erase(kind);
    } else {
      cfg.scenario.sources[kind] = std::move(list);
    }
  } else if (key == "run.seeds") {
    cfg.seeds.clear();
    for (const ConfigValue& item : as_list(v)) cfg.seeds.push_back(as_uint(key, item));
  } else if (key == "run.eval_batch") {
    cfg.eval_batch = sz();
  } else if (key == "run.per_instance_mase") {
    cfg.per_instance_mase = as_bool(key, v);
  } else if (key == "run.export_per_domain") {
    cfg.export_per_domain = sz();
  } else if (key == "run.verbose") {
    cfg.verbose = as_bool(key, v);
  } else {
    fail(ErrorKind::kConfig, "unknown setting '" + key_in + "'");
  }
}

void apply_table(RunConfig& cfg, const ConfigTable& table) {
  // A profile line resets everything, so it goes first wherever it appears.
  for (const auto& [k, v] : table)
    if (k == "profile") apply_setting(cfg, k, v);
  for (const auto& [k, v] : table)
    if (k != "profile") apply_setting(cfg, k, v);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    fail(ErrorKind::kConfig, "override '" + assignment + "' is not key=value");
  apply_setting(cfg, trim(assignment.substr(0, eq)), parse_config_value(assignment.substr(eq + 1)));
}

void validate(const RunConfig& cfg) {
  validate(cfg.train);
  const ModelConfig& m = cfg.model;
  if (m.stacks == 0 || m.blocks == 0 || m.layers == 0 || m.alpha == 0 || m.beta == 0 ||
      m.gamma == 0)
    fail(ErrorKind::kConfig, "model sizes must be positive");
  if (cfg.seeds.empty()) fail(ErrorKind::kConfig, "run.seeds is empty");
  if (cfg.scenario.kinds.empty()) fail(ErrorKind::kConfig, "scenario.kinds is empty");
  if (cfg.scenario.k == 0) fail(ErrorKind::kConfig, "scenario.k must be >= 1");
  if (cfg.eval_batch == 0) fail(ErrorKind::kConfig, "run.eval_batch must be >= 1");
  if (cfg.data.stride == 0) fail(ErrorKind::kConfig, "data.stride must be >= 1");
  if (cfg.data.source == "csv" && cfg.data.path.empty())
    fail(ErrorKind::kConfig, "data.source = csv needs data.path");
  if (cfg.data.source == "csv" && cfg.data.superdomains.empty())
    fail(ErrorKind::kConfig, "data.source = csv needs [data.superdomains]");
  for (const auto& [kind, list] : cfg.scenario.sources) {
    if (list.size() != cfg.scenario.k) {
      fail(ErrorKind::kConfig, std::string("scenario.sources.") + lower(to_string(kind)) +
                                   " lists " + std::to_string(list.size()) +
                                   " domains but scenario.k = " + std::to_string(cfg.scenario.k));
    }
  }
}

std::string to_config_text(const RunConfig& c) {
  std::ostringstream os;
  const ModelConfig& m = c.model;
  const TrainConfig& t = c.train;
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "profile = " << quote(c.profile) << "\n\n";
  os << "[model]\n"
     << "variant = " << quote(to_string(m.variant)) << "\n"
     << "stacks = " << m.stacks << "\nblocks = " << m.blocks << "\nlayers = " << m.layers
     << "\nalpha = " << m.alpha << "\nbeta = " << m.beta << "\ngamma = " << m.gamma
     << "\nnhits_kernel = " << m.nhits_kernel << "\ntrend_degree = " << m.trend_degree
     << "\nharmonics = " << m.harmonics << "\ndlinear_window = " << m.dlinear_window
     << "\nlegacy_residual = " << b(m.legacy_residual)
     << "\nzero_forecast_head = " << b(m.zero_forecast_head) << "\n\n";
  os << "[train]\n"
     << "batch_size = " << t.batch_size << "\niterations = " << t.iterations
     << "\nbase_lr = " << num(t.base_lr) << "\nmax_lr = " << num(t.max_lr)
     << "\nstep_size_up = " << t.step_size_up << "\nadam_beta1 = " << num(t.adam_beta1)
     << "\nadam_beta2 = " << num(t.adam_beta2) << "\nadam_eps = " << num(t.adam_eps)
     << "\ngrad_clip = " << num(t.grad_clip) << "\nvalidate_every = " << t.validate_every
     << "\ncheckpoint_every = " << t.checkpoint_every << "\n\n";
  os << "[alignment]\n"
     << "lambda = " << num(t.alignment.lambda)
     << "\ndivergence = " << quote(to_string(t.alignment.divergence))
     << "\nnormalizer = " << quote(to_string(t.alignment.normalizer))
     << "\ngranularity = " << quote(to_string(t.alignment.granularity)) << "\n\n";
  os << "[sinkhorn]\n"
     << "epsilon = " << num(t.sinkhorn.epsilon) << "\nmax_iters = " << t.sinkhorn.max_iters
     << "\ntol = " << num(t.sinkhorn.tol) << "\nunroll_grad = " << b(t.sinkhorn.unroll_grad)
     << "\n\n";
  os << "[data]\n"
     << "source = " << quote(c.data.source) << "\npath = " << quote(c.data.path)
     << "\nseed = " << c.data.seed << "\nn_instances = " << c.data.n_instances
     << "\nstride = " << c.data.stride << "\nstrict_split = " << b(c.data.strict_split)
     << "\nwith_replacement = " << b(c.data.with_replacement) << "\n\n";
  if (!c.data.superdomains.empty()) {
    os << "[data.superdomains]\n";
    for (const auto& [name, members] : c.data.superdomains)
      os << name << " = " << str_list(members) << "\n";
    os << "\n";
  }
  std::vector<std::string> kinds;
  for (ScenarioKind k : c.scenario.kinds) kinds.push_back(lower(to_string(k)));
  os << "[scenario]\n"
     << "kinds = " << str_list(kinds) << "\ntarget = " << quote(c.scenario.target)
     << "\nk = " << c.scenario.k << "\n\n";
  if (!c.scenario.sources.empty()) {
    os << "[scenario.sources]\n";
    for (const auto& [kind, list] : c.scenario.sources)
      os << lower(to_string(kind)) << " = " << str_list(list) << "\n";
    os << "\n";
  }
  os << "[run]\nseeds = [";
  for (std::size_t i = 0; i < c.seeds.size(); ++i) os << (i ? ", " : "") << c.seeds[i];
  os << "]\neval_batch = " << c.eval_batch << "\nper_instance_mase = " << b(c.per_instance_mase)
     << "\nexport_per_domain = " << c.export_per_domain << "\nverbose = " << b(c.verbose)
     << "\n";
  return os.str();
}

}  // namespace fanbeats
