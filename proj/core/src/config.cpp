#include "tutorfx/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "tutorfx/error.hpp"
#include "tutorfx/rng.hpp"

namespace tfx {

namespace toml {

namespace {

class Parser {
 public:
  Parser(std::string_view text, std::string source) : text_(text), source_(std::move(source)) {}

  nlohmann::json run() {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* table = &root;
    std::size_t pos = 0;
    while (pos < text_.size()) {
      std::size_t end = text_.find('\n', pos);
      if (end == std::string_view::npos) end = text_.size();
      ++line_;
      std::string line = strip_comment(text_.substr(pos, end - pos));
      pos = end + 1;
      // arrays may continue over several lines
      while (!balanced(line) && pos < text_.size()) {
        end = text_.find('\n', pos);
        if (end == std::string_view::npos) end = text_.size();
        ++line_;
        line += " " + strip_comment(text_.substr(pos, end - pos));
        pos = end + 1;
      }
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.size() > 1 && line[1] == '[') fail("arrays of tables are not supported");
        if (line.back() != ']') fail("unterminated table header");
        table = &root;
        for (const auto& part : split_key(trim(line.substr(1, line.size() - 2)))) {
          auto& next = (*table)[part];
          if (next.is_null()) next = nlohmann::json::object();
          if (!next.is_object()) fail("'" + part + "' is already a value, not a table");
          table = &next;
        }
        continue;
      }
      const auto eq = find_unquoted(line, '=');
      if (eq == std::string::npos) fail("expected key = value");
      const auto keys = split_key(trim(line.substr(0, eq)));
      nlohmann::json* target = table;
      for (std::size_t k = 0; k + 1 < keys.size(); ++k) {
        auto& next = (*target)[keys[k]];
        if (next.is_null()) next = nlohmann::json::object();
        if (!next.is_object()) fail("'" + keys[k] + "' is already a value, not a table");
        target = &next;
      }
      if (target->contains(keys.back())) fail("duplicate key '" + keys.back() + "'");
      std::string rest = trim(line.substr(eq + 1));
      std::size_t at = 0;
      (*target)[keys.back()] = value(rest, at);
      skip_space(rest, at);
      if (at != rest.size()) fail("trailing characters after value");
    }
    return root;
  }

 private:
  std::string_view text_;
  std::string source_;
  std::size_t line_ = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorCode::ConfigError, fmt::format("{}:{}: {}", source_, line_, msg));
  }

  static std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
  }

  static std::string strip_comment(std::string_view s) {
    char quote = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const char c = s[i];
      if (quote) {
        if (c == '\\' && quote == '"') ++i;
        else if (c == quote) quote = 0;
      } else if (c == '"' || c == '\'') {
        quote = c;
      } else if (c == '#') {
        return std::string(s.substr(0, i));
      }
    }
    std::string out(s);
    if (!out.empty() && out.back() == '\r') out.pop_back();
    return out;
  }

  static bool balanced(const std::string& s) {
    int depth = 0;
    char quote = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const char c = s[i];
      if (quote) {
        if (c == '\\' && quote == '"') ++i;
        else if (c == quote) quote = 0;
      } else if (c == '"' || c == '\'') {
        quote = c;
      } else if (c == '[') {
        ++depth;
      } else if (c == ']') {
        --depth;
      }
    }
    // a header line like [a] is balanced; only an open value array is not
    return depth <= 0;
  }

  static std::size_t find_unquoted(const std::string& s, char target) {
    char quote = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const char c = s[i];
      if (quote) {
        if (c == quote) quote = 0;
      } else if (c == '"' || c == '\'') {
        quote = c;
      } else if (c == target) {
        return i;
      }
    }
    return std::string::npos;
  }

  std::vector<std::string> split_key(const std::string& key) const {
    std::vector<std::string> parts;
    std::size_t i = 0;
    while (i <= key.size()) {
      std::string part;
      while (i < key.size() && std::isspace(static_cast<unsigned char>(key[i]))) ++i;
      if (i < key.size() && key[i] == '"') {
        const auto close = key.find('"', i + 1);
        if (close == std::string::npos) fail("unterminated quoted key");
        part = key.substr(i + 1, close - i - 1);
        i = close + 1;
      } else {
        while (i < key.size() && (std::isalnum(static_cast<unsigned char>(key[i])) || key[i] == '_' || key[i] == '-')) {
          part.push_back(key[i++]);
        }
        if (part.empty()) fail("invalid key '" + key + "'");
      }
      while (i < key.size() && std::isspace(static_cast<unsigned char>(key[i]))) ++i;
      parts.push_back(part);
      if (i == key.size()) break;
      if (key[i] != '.') fail("invalid key '" + key + "'");
      ++i;
    }
    return parts;
  }

  static void skip_space(const std::string& s, std::size_t& at) {
    while (at < s.size() && std::isspace(static_cast<unsigned char>(s[at]))) ++at;
  }

  nlohmann::json value(const std::string& s, std::size_t& at) {
    skip_space(s, at);
    if (at >= s.size()) fail("missing value");
    const char c = s[at];
    if (c == '"') return basic_string(s, at);
    if (c == '\'') {
      const auto close = s.find('\'', at + 1);
      if (close == std::string::npos) fail("unterminated literal string");
      std::string out = s.substr(at + 1, close - at - 1);
      at = close + 1;
      return out;
    }
    if (c == '[') {
      ++at;
      nlohmann::json arr = nlohmann::json::array();
      while (true) {
        skip_space(s, at);
        if (at < s.size() && s[at] == ']') {
          ++at;
          return arr;
        }
        arr.push_back(value(s, at));
        skip_space(s, at);
        if (at < s.size() && s[at] == ',') {
          ++at;
          continue;
        }
        if (at < s.size() && s[at] == ']') {
          ++at;
          return arr;
        }
        fail("expected ',' or ']' in array");
      }
    }
    if (c == '{') fail("inline tables are not supported; use a [table] header");
    std::size_t end = at;
    while (end < s.size() && s[end] != ',' && s[end] != ']' && !std::isspace(static_cast<unsigned char>(s[end]))) ++end;
    const std::string tok = s.substr(at, end - at);
    at = end;
    if (tok == "true") return true;
    if (tok == "false") return false;
    return number(tok);
  }

  nlohmann::json basic_string(const std::string& s, std::size_t& at) {
    std::string out;
    for (std::size_t i = at + 1; i < s.size(); ++i) {
      const char c = s[i];
      if (c == '"') {
        at = i + 1;
        return out;
      }
      if (c == '\\') {
        if (++i >= s.size()) break;
        switch (s[i]) {
          case 'n': out.push_back('\n'); break;
          case 't': out.push_back('\t'); break;
          case 'r': out.push_back('\r'); break;
          case '"': out.push_back('"'); break;
          case '\\': out.push_back('\\'); break;
          default: fail(std::string("unsupported escape \\") + s[i]);
        }
        continue;
      }
      out.push_back(c);
    }
    fail("unterminated string");
  }

  nlohmann::json number(std::string tok) const {
    std::erase(tok, '_');
    if (tok.empty()) fail("missing value");
    const bool is_float = tok.find_first_of(".eE") != std::string::npos || tok == "inf" || tok == "nan";
    const char* b = tok.data() + (tok[0] == '+' ? 1 : 0);
    const char* e = tok.data() + tok.size();
    if (!is_float) {
      std::int64_t v = 0;
      auto [p, ec] = std::from_chars(b, e, v);
      if (ec == std::errc() && p == e) {
        if (v >= 0) return static_cast<std::uint64_t>(v);
        return v;
      }
      fail("invalid value '" + tok + "'");
    }
    double v = 0.0;
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e) fail("invalid value '" + tok + "'");
    return v;
  }
};

std::string scalar(const nlohmann::json& v) {
  if (v.is_string()) return nlohmann::json(v).dump();  // JSON escaping is valid TOML basic-string escaping here
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_float()) {
    std::string s = fmt::format("{}", v.get<double>());
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
  }
  if (v.is_number()) return v.dump();
  if (v.is_array()) {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + scalar(v[i]);
    return out + "]";
  }
  return "";
}

void dump_table(const nlohmann::json& t, const std::string& path, std::string& out) {
  if (!path.empty()) out += "\n[" + path + "]\n";
  for (const auto& [k, v] : t.items()) {
    if (v.is_object()) continue;
    if (v.is_null()) out += "# " + k + " = (unset)\n";
    else out += k + " = " + scalar(v) + "\n";
  }
  for (const auto& [k, v] : t.items()) {
    if (v.is_object()) dump_table(v, path.empty() ? k : path + "." + k, out);
  }
}

}  // namespace

nlohmann::json parse(std::string_view text, const std::string& source) { return Parser(text, source).run(); }

std::string dump(const nlohmann::json& root) {
  std::string out;
  dump_table(root, "", out);
  return out;
}

}  // namespace toml

// ---------------------------------------------------------------------------
// pipeline config

nlohmann::json AnalysisOptions::to_json() const {
  return {{"outcomes", outcomes},
          {"moderators", moderators},
          {"interactions", interactions},
          {"session_moderators", session_moderators},
          {"moderator_method", moderator_method},
          {"variants", variants},
          {"placebo", placebo},
          {"placebo_min_coverage", placebo_min_coverage},
          {"clamp_lo", clamp_lo},
          {"clamp_hi", clamp_hi},
          {"trim_lo", trim_lo},
          {"trim_hi", trim_hi},
          {"rv_benchmarks", rv_benchmarks},
          {"rv_q", rv_q},
          {"tune_nuisance", tune_nuisance},
          {"cate_histogram_bins", cate_histogram_bins}};
}

AnalysisOptions AnalysisOptions::from_json(const nlohmann::json& j) {
  AnalysisOptions a;
  auto read = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  read("outcomes", a.outcomes);
  read("moderators", a.moderators);
  read("interactions", a.interactions);
  read("session_moderators", a.session_moderators);
  read("moderator_method", a.moderator_method);
  read("variants", a.variants);
  read("placebo", a.placebo);
  read("placebo_min_coverage", a.placebo_min_coverage);
  read("clamp_lo", a.clamp_lo);
  read("clamp_hi", a.clamp_hi);
  read("trim_lo", a.trim_lo);
  read("trim_hi", a.trim_hi);
  read("rv_benchmarks", a.rv_benchmarks);
  read("rv_q", a.rv_q);
  read("tune_nuisance", a.tune_nuisance);
  read("cate_histogram_bins", a.cate_histogram_bins);
  return a;
}

namespace {

nlohmann::json sample_json(const SamplePolicy& p) {
  return {{"control_mode", p.control_mode == ControlMode::Washout ? "washout" : "never_treated"},
          {"washout_k_skills", p.washout_k_skills},
          {"holdout_fraction", p.holdout_fraction},
          {"placebo_offset", p.placebo_offset},
          {"restrict_to_treated_problems", p.restrict_to_treated_problems}};
}

SamplePolicy sample_from_json(const nlohmann::json& j) {
  SamplePolicy p;
  if (j.contains("control_mode")) {
    const auto mode = j.at("control_mode").get<std::string>();
    if (mode == "washout") p.control_mode = ControlMode::Washout;
    else if (mode == "never_treated") p.control_mode = ControlMode::NeverTreated;
    else throw Error(ErrorCode::ConfigError, "sample.control_mode must be never_treated or washout");
  }
  p.washout_k_skills = j.value("washout_k_skills", p.washout_k_skills);
  p.holdout_fraction = j.value("holdout_fraction", p.holdout_fraction);
  p.placebo_offset = j.value("placebo_offset", p.placebo_offset);
  p.restrict_to_treated_problems = j.value("restrict_to_treated_problems", p.restrict_to_treated_problems);
  return p;
}

nlohmann::json without_seed(nlohmann::json j) {
  j.erase("seed");
  return j;
}

void check_keys(const nlohmann::json& given, const nlohmann::json& known, const std::string& path) {
  if (!given.is_object()) throw Error(ErrorCode::ConfigError, "[" + path + "] must be a table");
  for (const auto& [k, v] : given.items()) {
    const std::string where = path.empty() ? k : path + "." + k;
    if (k == "seed" && !path.empty()) {
      throw Error(ErrorCode::ConfigError, where + ": stage seeds derive from the top-level seed");
    }
    if (!known.contains(k)) throw Error(ErrorCode::ConfigError, "unknown config key '" + where + "'");
    if (v.is_object() && known.at(k).is_object() && where != "simulate.effect") check_keys(v, known.at(k), where);
  }
}

}  // namespace

PipelineConfig PipelineConfig::resolved() const {
  PipelineConfig c = *this;
  c.simulate.seed = derive_seed(seed, std::string_view("simulate"));
  c.sample.seed = derive_seed(seed, std::string_view("sample"));
  c.dkt.seed = derive_seed(seed, std::string_view("dkt"));
  c.nuisance_forest.seed = derive_seed(seed, std::string_view("nuisance_forest"));
  c.causal_forest.seed = derive_seed(seed, std::string_view("causal_forest"));
  return c;
}

void PipelineConfig::validate() const {
  simulate.validate();
  sample.validate();
  dkt.validate();
  nuisance_forest.validate();
  causal_forest.validate();
  for (const auto& o : analysis.outcomes) {
    if (o != "immediate" && o != "near_transfer") throw Error(ErrorCode::ConfigError, "unknown outcome '" + o + "'");
  }
  if (analysis.outcomes.empty()) throw Error(ErrorCode::ConfigError, "analysis.outcomes is empty");
  for (const auto& v : analysis.variants) {
    if (v != "external_covariates" && v != "washout_controls") {
      throw Error(ErrorCode::ConfigError, "unknown variant '" + v + "'");
    }
  }
  if (analysis.moderator_method != "cluster_robust_ols" && analysis.moderator_method != "random_intercept_ml") {
    throw Error(ErrorCode::ConfigError, "unknown moderator_method '" + analysis.moderator_method + "'");
  }
  if (!(analysis.clamp_lo > 0.0 && analysis.clamp_lo < analysis.clamp_hi && analysis.clamp_hi < 1.0)) {
    throw Error(ErrorCode::ConfigError, "analysis clamp bounds need 0 < clamp_lo < clamp_hi < 1");
  }
  if (!(analysis.trim_lo >= 0.0 && analysis.trim_lo < analysis.trim_hi && analysis.trim_hi <= 1.0)) {
    throw Error(ErrorCode::ConfigError, "analysis trim bounds need 0 <= trim_lo < trim_hi <= 1");
  }
  if (!(analysis.rv_q > 0.0 && analysis.rv_q <= 1.0)) throw Error(ErrorCode::ConfigError, "analysis.rv_q must be in (0,1]");
  if (analysis.cate_histogram_bins < 1) throw Error(ErrorCode::ConfigError, "analysis.cate_histogram_bins must be >= 1");
}

nlohmann::json PipelineConfig::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["paths"] = {{"log", log_path ? nlohmann::json(*log_path) : nlohmann::json(nullptr)},
                {"sessions", sessions_path ? nlohmann::json(*sessions_path) : nlohmann::json(nullptr)},
                {"context", context_path ? nlohmann::json(*context_path) : nlohmann::json(nullptr)},
                {"out_dir", out_dir}};
  j["simulate"] = without_seed(simulate.to_json());
  j["sample"] = sample_json(sample);
  j["dkt"] = without_seed(dkt.to_json());
  j["nuisance_forest"] = without_seed(nuisance_forest.to_json());
  j["causal_forest"] = without_seed(causal_forest.to_json());
  j["analysis"] = analysis.to_json();
  return j;
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  check_keys(j, PipelineConfig{}.to_json(), "");
  PipelineConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      auto opt = [&](const char* key, std::optional<std::string>& field) {
        if (p.contains(key) && !p.at(key).is_null()) field = p.at(key).get<std::string>();
      };
      opt("log", c.log_path);
      opt("sessions", c.sessions_path);
      opt("context", c.context_path);
      c.out_dir = p.value("out_dir", c.out_dir);
    }
    if (j.contains("simulate")) c.simulate = SimConfig::from_json(j.at("simulate"));
    if (j.contains("sample")) c.sample = sample_from_json(j.at("sample"));
    if (j.contains("dkt")) c.dkt = DktConfig::from_json(j.at("dkt"));
    if (j.contains("nuisance_forest")) c.nuisance_forest = ForestConfig::from_json(j.at("nuisance_forest"));
    if (j.contains("causal_forest")) c.causal_forest = ForestConfig::from_json(j.at("causal_forest"));
    if (j.contains("analysis")) c.analysis = AnalysisOptions::from_json(j.at("analysis"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("config value has the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

std::string PipelineConfig::to_toml() const { return toml::dump(to_json()); }

PipelineConfig PipelineConfig::from_toml(std::string_view text, const std::string& source) {
  return from_json(toml::parse(text, source));
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_toml(ss.str(), path.string());
}

}  // namespace tfx
