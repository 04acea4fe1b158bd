// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedcache/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

#include "fedcache/error.hpp"
#include "fedcache/format.hpp"

namespace fedcache {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

struct BadValue {
  std::string message;
};

template <class T>
T parse_number(std::string_view text, const char* what) {
  T value{};
  if (text.empty() || text.front() == '+' || (std::is_unsigned_v<T> && text.front() == '-')) {
    throw BadValue{std::string("expected ") + what + ", got '" + std::string(text) + "'"};
  }
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw BadValue{std::string("expected ") + what + ", got '" + std::string(text) + "'"};
  }
  return value;
}

std::vector<std::string_view> split_list(std::string_view text) {
  std::vector<std::string_view> items;
  while (true) {
    const auto comma = text.find(',');
    items.push_back(trim(text.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return items;
}

struct Field {
  const char* key;
  const char* doc;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class T>
Field count_field(const char* key, const char* doc, T ExperimentConfig::*member) {
  return {key, doc, [member](ExperimentConfig& c, std::string_view v) { c.*member = parse_number<T>(v, "an integer"); },
          [member](const ExperimentConfig& c) { return std::to_string(c.*member); }};
}

Field real_field(const char* key, const char* doc, double ExperimentConfig::*member) {
  return {key, doc, [member](ExperimentConfig& c, std::string_view v) { c.*member = parse_number<double>(v, "a number"); },
          [member](const ExperimentConfig& c) { return format_real(c.*member); }};
}

Field text_field(const char* key, const char* doc, std::string ExperimentConfig::*member) {
  return {key, doc, [member](ExperimentConfig& c, std::string_view v) { c.*member = std::string(v); },
          [member](const ExperimentConfig& c) { return c.*member; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      text_field("data_path", "ratings.dat path (falls back to FEDCACHE_DATA)", &ExperimentConfig::data_path),
      text_field("dataset", "ml-1m (canonical counts enforced) or synthetic", &ExperimentConfig::dataset),
      count_field("seed", "master seed", &ExperimentConfig::seed),
      count_field("synthetic_seed", "generator seed when dataset = synthetic and no file is given",
                  &ExperimentConfig::synthetic_seed),
      count_field("F", "content library size", &ExperimentConfig::F),
      count_field("I", "number of FL clients", &ExperimentConfig::I),
      count_field("R_max", "federated rounds", &ExperimentConfig::R_max),
      count_field("e", "local iterations per round", &ExperimentConfig::e),
      count_field("batch_size", "local minibatch size", &ExperimentConfig::batch_size),
      real_field("eta_d", "local learning rate", &ExperimentConfig::eta_d),
      real_field("server_lr", "server aggregation step", &ExperimentConfig::server_lr),
      {"T", "diffusion steps",
       [](ExperimentConfig& c, std::string_view v) { c.T = parse_number<int>(v, "an integer"); },
       [](const ExperimentConfig& c) { return std::to_string(c.T); }},
      real_field("beta_start", "first noise variance", &ExperimentConfig::beta_start),
      real_field("beta_end", "last noise variance", &ExperimentConfig::beta_end),
      count_field("U", "generated samples for popularity", &ExperimentConfig::U),
      count_field("N", "headline cache capacity", &ExperimentConfig::N),
      {"capacities", "ascending cache capacities swept",
       [](ExperimentConfig& c, std::string_view v) {
         c.capacities.clear();
         for (auto item : split_list(v)) c.capacities.push_back(parse_number<std::size_t>(item, "an integer list"));
       },
       [](const ExperimentConfig& c) {
         std::string out;
         for (std::size_t i = 0; i < c.capacities.size(); ++i) out += (i ? "," : "") + std::to_string(c.capacities[i]);
         return out;
       }},
      real_field("public_fraction", "share of users held out for autoencoder pre-training",
                 &ExperimentConfig::public_fraction),
      real_field("train_fraction", "per-user share of ratings used for training", &ExperimentConfig::train_fraction),
      count_field("ae_hidden", "autoencoder hidden width", &ExperimentConfig::ae_hidden),
      count_field("latent_dim", "latent width (multiple of 4)", &ExperimentConfig::latent_dim),
      count_field("ae_epochs", "autoencoder epochs", &ExperimentConfig::ae_epochs),
      real_field("ae_lr", "autoencoder SGD learning rate", &ExperimentConfig::ae_lr),
      count_field("ae_batch_size", "autoencoder minibatch size", &ExperimentConfig::ae_batch_size),
      count_field("thompson_epochs", "trace slices for Thompson sampling", &ExperimentConfig::thompson_epochs),
      real_field("d_hit", "delay of a cache hit (ms)", &ExperimentConfig::d_hit),
      real_field("d_miss", "delay of a cache miss (ms)", &ExperimentConfig::d_miss),
      {"aggregation_mode", "fedavg or literal",
       [](ExperimentConfig& c, std::string_view v) {
         if (v == "fedavg") {
           c.aggregation_mode = AggregationMode::FedAvg;
         } else if (v == "literal") {
           c.aggregation_mode = AggregationMode::Literal;
         } else {
           throw BadValue{"expected fedavg or literal, got '" + std::string(v) + "'"};
         }
       },
       [](const ExperimentConfig& c) { return std::string(aggregation_mode_name(c.aggregation_mode)); }},
      {"policies", "comma list of ldpm-federated, ldpm-raw, oracle, thompson, random",
       [](ExperimentConfig& c, std::string_view v) {
         c.policies.clear();
         for (auto item : split_list(v)) c.policies.emplace_back(item);
       },
       [](const ExperimentConfig& c) {
         std::string out;
         for (std::size_t i = 0; i < c.policies.size(); ++i) out += (i ? "," : "") + c.policies[i];
         return out;
       }},
  };
  return table;
}

const Field* find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (key == f.key) return &f;
  }
  return nullptr;
}

struct Violation {
  std::string key;
  std::string message;
};

std::optional<Violation> first_violation(const ExperimentConfig& c) {
  const auto bad = [](std::string key, std::string message) { return Violation{std::move(key), std::move(message)}; };
  if (c.dataset != "ml-1m" && c.dataset != "synthetic") return bad("dataset", "must be ml-1m or synthetic");
  if (c.F < 1) return bad("F", "must be >= 1");
  if (c.I < 1) return bad("I", "must be >= 1");
  if (c.e < 1) return bad("e", "must be >= 1");
  if (c.batch_size < 1) return bad("batch_size", "must be >= 1");
  if (!(c.eta_d > 0)) return bad("eta_d", "must be > 0");
  if (!(c.server_lr > 0)) return bad("server_lr", "must be > 0");
  if (c.T < 1) return bad("T", "must be >= 1");
  if (!(c.beta_start > 0 && c.beta_start < 1)) return bad("beta_start", "must lie in (0, 1)");
  if (!(c.beta_end > 0 && c.beta_end < 1)) return bad("beta_end", "must lie in (0, 1)");
  if (c.beta_end < c.beta_start) return bad("beta_end", "must be >= beta_start");
  if (c.U < 1) return bad("U", "must be >= 1");
  if (c.N < 1 || c.N > c.F) return bad("N", "must lie in [1, F]");
  if (c.capacities.empty()) return bad("capacities", "must not be empty");
  if (!std::is_sorted(c.capacities.begin(), c.capacities.end())) return bad("capacities", "must be ascending");
  if (c.capacities.front() < 1 || c.capacities.back() > c.F) return bad("capacities", "must lie in [1, F]");
  if (!(c.public_fraction >= 0 && c.public_fraction < 1)) return bad("public_fraction", "must lie in [0, 1)");
  if (!(c.train_fraction > 0 && c.train_fraction < 1)) return bad("train_fraction", "must lie in (0, 1)");
  if (c.ae_hidden < 1) return bad("ae_hidden", "must be >= 1");
  if (c.latent_dim < 4 || c.latent_dim % 4 != 0) return bad("latent_dim", "must be a positive multiple of 4");
  if (!(c.ae_lr > 0)) return bad("ae_lr", "must be > 0");
  if (c.ae_batch_size < 1) return bad("ae_batch_size", "must be >= 1");
  if (c.thompson_epochs < 1) return bad("thompson_epochs", "must be >= 1");
  if (!(c.d_hit > 0)) return bad("d_hit", "must be > 0");
  if (!(c.d_miss > c.d_hit)) return bad("d_miss", "must exceed d_hit");
  if (c.policies.empty()) return bad("policies", "must not be empty");
  for (const auto& p : c.policies) {
    if (p != kPolicyFederated && p != kPolicyRaw && p != kPolicyOracle && p != kPolicyThompson &&
        p != kPolicyRandom) {
      return bad("policies", "unknown policy '" + p + "'");
    }
    if (std::count(c.policies.begin(), c.policies.end(), p) > 1) {
      return bad("policies", "policy '" + p + "' listed twice");
    }
  }
  if (c.has_policy(kPolicyRaw) && c.F % 16 != 0) {
    return bad("policies", "ldpm-raw needs F divisible by 16");
  }
  return std::nullopt;
}

}  // namespace

bool ExperimentConfig::has_policy(std::string_view name) const {
  return std::find(policies.begin(), policies.end(), name) != policies.end();
}

std::string_view aggregation_mode_name(AggregationMode mode) {
  return mode == AggregationMode::FedAvg ? "fedavg" : "literal";
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig config;
  std::map<std::string, std::size_t, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty() || line_no == 0) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const Field* field = find_field(key);
    if (!field) throw ConfigError(where + ": unknown key '" + std::string(key) + "'");
    if (seen.contains(key)) throw ConfigError(where + ": key '" + std::string(key) + "' set twice");
    seen.emplace(std::string(key), line_no);
    try {
      field->set(config, value);
    } catch (const BadValue& e) {
      throw ConfigError(where + ": key '" + std::string(key) + "': " + e.message);
    }
  }
  if (auto v = first_violation(config)) {
    const auto it = seen.find(v->key);
    const std::string where = it == seen.end() ? "config (default)" : "config line " + std::to_string(it->second);
    throw ConfigError(where + ": key '" + v->key + "': " + v->message);
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

void validate(const ExperimentConfig& config) {
  if (auto v = first_violation(config)) throw ConfigError("config key '" + v->key + "': " + v->message);
}

std::string to_text(const ExperimentConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(config) + "\n";
  return out;
}

std::string config_reference() {
  const ExperimentConfig defaults;
  std::string out;
  for (const auto& f : fields()) {
    out += "  " + std::string(f.key) + " = " + f.get(defaults) + "\n      " + f.doc + "\n";
  }
  return out;
}

}  // namespace fedcache
