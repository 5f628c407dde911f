#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "omgd/objectives.hpp"

namespace omgd {

// Raised for anything wrong with user-supplied configuration; the CLI maps it
// to exit code 1 (runtime failures exit 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Parsed INI-style configuration: [section] headers, key = value lines,
// '#' comments.  Values keep their raw text; typed access happens later so
// precedence merging (preset < file < flags) stays trivial.
using ConfigMap = std::map<std::string, std::map<std::string, std::string>>;

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace detail

inline ConfigMap parse_config_text(std::istream& is) {
  ConfigMap map;
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
      }
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty()) {
        throw ConfigError("config line " + std::to_string(lineno) + ": empty section name");
      }
      map[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    }
    if (section.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": key outside any section");
    }
    map[section][key] = value;
  }
  return map;
}

// Later sources win key-by-key.
inline void merge_config(ConfigMap& base, const ConfigMap& overlay) {
  for (const auto& [section, kv] : overlay) {
    for (const auto& [key, value] : kv) base[section][key] = value;
  }
}

// Canonical text form: sections and keys in sorted order, one key=value per
// line.  Reordering the sources never changes this, so the hash below is
// stable under file layout and only moves when a semantic field moves.
inline std::string canonical_config_text(const ConfigMap& map) {
  std::string out;
  for (const auto& [section, kv] : map) {  // std::map iterates sorted
    out += "[" + section + "]\n";
    for (const auto& [key, value] : kv) out += key + "=" + value + "\n";
  }
  return out;
}

inline std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_hash(const ConfigMap& map) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical_config_text(map))));
  return std::string(buf);
}

// --- typed view ---------------------------------------------------------------

// Typed accessor over a merged ConfigMap that records which keys were read;
// leftover keys are reported as errors so typos cannot silently change runs.
class ConfigReader {
 public:
  explicit ConfigReader(const ConfigMap& map) : map_(map) {}

  bool has(const std::string& section, const std::string& key) const {
    const auto s = map_.find(section);
    return s != map_.end() && s->second.count(key) > 0;
  }

  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) {
    mark(section, key);
    const auto s = map_.find(section);
    if (s == map_.end()) return fallback;
    const auto k = s->second.find(key);
    return k == s->second.end() ? fallback : k->second;
  }

  double get_double(const std::string& section, const std::string& key, double fallback) {
    const std::string raw = get_string(section, key, "");
    if (raw.empty()) return fallback;
    try {
      std::size_t used = 0;
      const double v = std::stod(raw, &used);
      if (used != raw.size()) throw std::invalid_argument(raw);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config [" + section + "] " + key + ": not a number: " + raw);
    }
  }

  std::int64_t get_int(const std::string& section, const std::string& key,
                       std::int64_t fallback) {
    const std::string raw = get_string(section, key, "");
    if (raw.empty()) return fallback;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(raw, &used);
      if (used != raw.size()) throw std::invalid_argument(raw);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config [" + section + "] " + key + ": not an integer: " + raw);
    }
  }

  bool get_bool(const std::string& section, const std::string& key, bool fallback) {
    const std::string raw = get_string(section, key, "");
    if (raw.empty()) return fallback;
    if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
    if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
    throw ConfigError("config [" + section + "] " + key + ": not a boolean: " + raw);
  }

  // Comma-separated list or inclusive "a..b" range of unsigned integers.
  std::vector<std::uint64_t> get_u64_list(const std::string& section,
                                          const std::string& key,
                                          const std::vector<std::uint64_t>& fallback) {
    const std::string raw = get_string(section, key, "");
    if (raw.empty()) return fallback;
    std::vector<std::uint64_t> out;
    const auto dots = raw.find("..");
    try {
      if (dots != std::string::npos) {
        const std::uint64_t lo = std::stoull(detail::trim(raw.substr(0, dots)));
        const std::uint64_t hi = std::stoull(detail::trim(raw.substr(dots + 2)));
        if (hi < lo || hi - lo > 100000) {
          throw ConfigError("config [" + section + "] " + key + ": bad range: " + raw);
        }
        for (std::uint64_t v = lo; v <= hi; ++v) out.push_back(v);
        return out;
      }
      std::istringstream iss(raw);
      std::string item;
      while (std::getline(iss, item, ',')) {
        item = detail::trim(item);
        if (!item.empty()) out.push_back(std::stoull(item));
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("config [" + section + "] " + key + ": bad integer list: " + raw);
    }
    return out;
  }

  std::vector<int> get_int_list(const std::string& section, const std::string& key,
                                const std::vector<int>& fallback) {
    const auto u = get_u64_list(section, key, {});
    if (u.empty() && !has(section, key)) return fallback;
    std::vector<int> out;
    out.reserve(u.size());
    for (std::uint64_t v : u) out.push_back(static_cast<int>(v));
    return out;
  }

  std::vector<std::string> get_string_list(const std::string& section,
                                           const std::string& key,
                                           const std::vector<std::string>& fallback) {
    const std::string raw = get_string(section, key, "");
    if (raw.empty()) return fallback;
    std::vector<std::string> out;
    std::istringstream iss(raw);
    std::string item;
    while (std::getline(iss, item, ',')) {
      item = detail::trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  // Errors out on any key that was never read.
  void check_consumed() const {
    for (const auto& [section, kv] : map_) {
      for (const auto& [key, value] : kv) {
        if (!consumed_.count(section + "." + key)) {
          throw ConfigError("config: unknown key [" + section + "] " + key);
        }
      }
    }
  }

 private:
  void mark(const std::string& section, const std::string& key) {
    consumed_.insert(section + "." + key);
  }

  const ConfigMap& map_;
  std::set<std::string> consumed_;
};

// --- experiment configuration ---------------------------------------------------

// Everything a batch run needs, resolved from preset + file + flag layers.
struct ExperimentConfig {
  // [dataset]
  DatasetSpec dataset{1000, 10, 1.0, 91};

  // [run]
  std::vector<std::string> estimators{"rr"};
  double keep_ratio = 0.5;
  int mask_count = 0;  // 0: derived from keep_ratio where needed
  std::int64_t horizon = 100000;
  std::int64_t warmup = 0;
  std::vector<std::uint64_t> seeds{1};
  int checkpoint_count = 64;
  std::vector<int> pinned;

  // [schedule]
  std::string schedule_kind = "diminishing";  // constant | diminishing | staged
  double eta = 0.01;          // constant
  double c0 = 0.0;            // diminishing; <= 0 resolves to auto_margin / lambda_min
  std::int64_t t_offset = 0;  // diminishing; <= 0 resolves to ceil(c0 * lambda_max)
  double auto_margin = 4.0;   // auto c0 = auto_margin / lambda_min
  double staged_phi = 1.0;    // staged
  int staged_stages = 3;

  // [analysis]
  bool decompose = false;
  bool rates = false;
  bool lemma_checks = false;
  double window_lo_frac = 0.01;  // rate-fit window as fractions of horizon
  double window_hi_frac = 1.0;

  // [lisa]  (consumed by the train command; ignored elsewhere)
  int lisa_input_dim = 8;
  int lisa_layers = 12;  // middle layers
  int lisa_width = 4;
  bool lisa_bias = true;
  std::vector<int> lisa_gamma_grid{3};
  std::vector<int> lisa_period_grid{2};  // period lengths in epochs
  std::string lisa_sampling = "wor";     // wor | independent
  std::int64_t lisa_n = 128;
  double lisa_noise_sd = 0.2;
  std::uint64_t lisa_data_seed = 7;
  std::int64_t lisa_horizon = 4096;
  double lisa_eta = 0.05;
  std::vector<std::uint64_t> lisa_seeds{1};

  // [output]
  std::string out_dir = "out";
  int threads = 0;  // 0: hardware concurrency
};

inline ExperimentConfig resolve_experiment_config(const ConfigMap& map) {
  ConfigReader r(map);
  ExperimentConfig c;

  c.dataset.n = static_cast<int>(r.get_int("dataset", "n", c.dataset.n));
  c.dataset.d = static_cast<int>(r.get_int("dataset", "d", c.dataset.d));
  c.dataset.noise_sd = r.get_double("dataset", "noise_sd", c.dataset.noise_sd);
  c.dataset.seed = r.get_u64_list("dataset", "seed", {c.dataset.seed}).at(0);

  c.estimators = r.get_string_list("run", "estimators", c.estimators);
  c.keep_ratio = r.get_double("run", "keep_ratio", c.keep_ratio);
  c.mask_count = static_cast<int>(r.get_int("run", "mask_count", c.mask_count));
  c.horizon = r.get_int("run", "horizon", c.horizon);
  c.warmup = r.get_int("run", "warmup", c.warmup);
  c.seeds = r.get_u64_list("run", "seeds", c.seeds);
  c.checkpoint_count = static_cast<int>(r.get_int("run", "checkpoints", c.checkpoint_count));
  c.pinned = r.get_int_list("run", "pinned", c.pinned);

  c.schedule_kind = r.get_string("schedule", "kind", c.schedule_kind);
  c.eta = r.get_double("schedule", "eta", c.eta);
  c.c0 = r.get_double("schedule", "c0", c.c0);
  c.t_offset = r.get_int("schedule", "t_offset", c.t_offset);
  c.auto_margin = r.get_double("schedule", "auto_margin", c.auto_margin);
  c.staged_phi = r.get_double("schedule", "phi", c.staged_phi);
  c.staged_stages = static_cast<int>(r.get_int("schedule", "stages", c.staged_stages));

  c.decompose = r.get_bool("analysis", "decompose", c.decompose);
  c.rates = r.get_bool("analysis", "rates", c.rates);
  c.lemma_checks = r.get_bool("analysis", "lemma_checks", c.lemma_checks);
  c.window_lo_frac = r.get_double("analysis", "window_lo_frac", c.window_lo_frac);
  c.window_hi_frac = r.get_double("analysis", "window_hi_frac", c.window_hi_frac);

  c.lisa_input_dim = static_cast<int>(r.get_int("lisa", "input_dim", c.lisa_input_dim));
  c.lisa_layers = static_cast<int>(r.get_int("lisa", "layers", c.lisa_layers));
  c.lisa_width = static_cast<int>(r.get_int("lisa", "width", c.lisa_width));
  c.lisa_bias = r.get_bool("lisa", "bias", c.lisa_bias);
  c.lisa_gamma_grid = r.get_int_list("lisa", "gamma_grid", c.lisa_gamma_grid);
  c.lisa_period_grid = r.get_int_list("lisa", "period_grid", c.lisa_period_grid);
  c.lisa_sampling = r.get_string("lisa", "sampling", c.lisa_sampling);
  c.lisa_n = r.get_int("lisa", "n", c.lisa_n);
  c.lisa_noise_sd = r.get_double("lisa", "noise_sd", c.lisa_noise_sd);
  c.lisa_data_seed = r.get_u64_list("lisa", "data_seed", {c.lisa_data_seed}).at(0);
  c.lisa_horizon = r.get_int("lisa", "horizon", c.lisa_horizon);
  c.lisa_eta = r.get_double("lisa", "eta", c.lisa_eta);
  c.lisa_seeds = r.get_u64_list("lisa", "seeds", c.lisa_seeds);

  c.out_dir = r.get_string("output", "dir", c.out_dir);
  c.threads = static_cast<int>(r.get_int("output", "threads", c.threads));

  r.check_consumed();

  // cross-field validation
  if (c.dataset.n <= 0 || c.dataset.d <= 0) {
    throw ConfigError("config: dataset n and d must be positive");
  }
  if (c.dataset.noise_sd < 0) throw ConfigError("config: noise_sd must be >= 0");
  if (c.estimators.empty()) throw ConfigError("config: estimators list is empty");
  if (c.horizon < 0) throw ConfigError("config: horizon must be >= 0");
  if (c.warmup < 0) throw ConfigError("config: warmup must be >= 0");
  if (c.seeds.empty()) throw ConfigError("config: seeds list is empty");
  if (c.checkpoint_count < 1) throw ConfigError("config: checkpoints must be >= 1");
  if (c.schedule_kind != "constant" && c.schedule_kind != "diminishing" &&
      c.schedule_kind != "staged") {
    throw ConfigError("config: unknown schedule kind: " + c.schedule_kind);
  }
  if (c.schedule_kind == "constant" && c.eta <= 0) {
    throw ConfigError("config: constant schedule needs eta > 0");
  }
  if (c.schedule_kind == "staged" && (c.staged_phi < 0 || c.staged_stages < 1)) {
    throw ConfigError("config: staged schedule needs phi >= 0 and stages >= 1");
  }
  if (!(c.window_lo_frac > 0) || !(c.window_hi_frac <= 1) ||
      c.window_lo_frac >= c.window_hi_frac) {
    throw ConfigError("config: need 0 < window_lo_frac < window_hi_frac <= 1");
  }
  if (c.lisa_sampling != "wor" && c.lisa_sampling != "independent") {
    throw ConfigError("config: lisa sampling must be wor or independent");
  }
  if (c.threads < 0) throw ConfigError("config: threads must be >= 0");
  return c;
}

// --- presets ---------------------------------------------------------------------

// Long-horizon convergence sweep over the four reshuffled estimators on a
// 1000x10 synthetic least-squares instance; decomposition and rate fits on.
inline ConfigMap preset_figure2() {
  ConfigMap m;
  m["dataset"] = {{"n", "1000"}, {"d", "10"}, {"noise_sd", "1"}, {"seed", "91"}};
  m["run"] = {{"estimators", "rr,rr_mask_wor,rr_mask_iid,rr_proj"},
              {"keep_ratio", "0.5"},
              {"mask_count", "2"},
              {"horizon", "1000000"},
              {"warmup", "100"},
              {"seeds", "1..20"},
              {"checkpoints", "64"}};
  m["schedule"] = {{"kind", "diminishing"}, {"c0", "0"}, {"t_offset", "0"},
                   {"auto_margin", "4"}};
  m["analysis"] = {{"decompose", "true"}, {"rates", "true"},
                   {"window_lo_frac", "0.01"}, {"window_hi_frac", "1"}};
  m["output"] = {{"dir", "out/figure2"}};
  return m;
}

// Small instance where the structural checks (cycle cancellation, windowed
// deviation bound, independent-mask variance floor) run quickly.
inline ConfigMap preset_lemma_suite() {
  ConfigMap m;
  m["dataset"] = {{"n", "12"}, {"d", "6"}, {"noise_sd", "0.5"}, {"seed", "17"}};
  m["run"] = {{"estimators", "rr_mask_wor"},
              {"keep_ratio", "0.5"},
              {"mask_count", "3"},
              {"horizon", "1800"},
              {"warmup", "0"},
              {"seeds", "1..5"},
              {"checkpoints", "32"}};
  m["schedule"] = {{"kind", "diminishing"}, {"c0", "0"}, {"t_offset", "0"},
                   {"auto_margin", "4"}};
  m["analysis"] = {{"decompose", "true"}, {"lemma_checks", "true"}};
  m["output"] = {{"dir", "out/lemma-suite"}};
  return m;
}

// Layer-subset training ablation: gamma x period grid on a small tanh network.
inline ConfigMap preset_lisa_ablation() {
  ConfigMap m;
  m["lisa"] = {{"input_dim", "8"},   {"layers", "6"},       {"width", "8"},
               {"gamma_grid", "1,2,3,4,6"}, {"period_grid", "1,2,3,5,6"},
               {"sampling", "wor"},  {"n", "128"},          {"noise_sd", "0.2"},
               {"data_seed", "7"},   {"horizon", "16384"},  {"eta", "0.03"},
               {"seeds", "1..5"}};
  m["output"] = {{"dir", "out/lisa-ablation"}};
  return m;
}

inline ConfigMap preset_by_name(const std::string& name) {
  if (name == "figure2") return preset_figure2();
  if (name == "lemma-suite") return preset_lemma_suite();
  if (name == "lisa-ablation") return preset_lisa_ablation();
  throw ConfigError("unknown preset: " + name +
                    " (available: figure2, lemma-suite, lisa-ablation)");
}

}  // namespace omgd
