#pragma once

// Run configuration: an INI file with [task], [model], [training], [eval] and
// [output] sections. Every key has a default; unknown sections or keys are
// rejected. `resolved_ini` writes the complete effective configuration.

#include <charconv>
#include <cstdlib>
#include <type_traits>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "qbt/training.hpp"

namespace qbt {

struct TrainingConfig {
  Budget dae, warmup{5000, 0}, ebt{0, 450}, ebtd{0, 1800}, bt{0, 1350};
  Budget synced{1000, 0};  // QBT-Synced / ablation iterations
  Budget bt_only{0, 3600};  // the BT baseline schedule
  DirectionPolicy direction = DirectionPolicy::Uniform;
  int batch_size = 32;
  std::uint64_t seed = 1;
  AdamConfig adam;
  CopyPenaltyConfig penalty;
  NoiseConfig noise;
  long checkpoint_every = 0;
};

struct RunConfig {
  CipherTaskSpec task;
  ModelConfig model;
  TrainingConfig training;
  EvalConfig eval;
  std::string output_dir = "run";

  // The model vocabulary always follows the task.
  void sync_vocab() { model.vocab_size = kNumSpecials + 2 * task.content_vocab_per_lang; }

  void validate() const {
    task.validate();
    model.validate();
    training.penalty.validate();
    if (model.vocab_size != kNumSpecials + 2 * task.content_vocab_per_lang)
      throw ConfigError("model vocab_size does not match the task vocabulary");
    if (task.max_len > model.max_positions) throw ConfigError("task max_len exceeds model max_positions");
    if (training.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (training.adam.lr <= 0 || training.adam.beta1 < 0 || training.adam.beta1 >= 1 || training.adam.beta2 < 0 ||
        training.adam.beta2 >= 1 || training.adam.epsilon <= 0)
      throw ConfigError("invalid Adam hyperparameters");
    if (training.noise.drop_prob < 0 || training.noise.drop_prob >= 1 || training.noise.shuffle_window < 1)
      throw ConfigError("invalid DAE noise settings");
    if (training.checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  }
};

// "0" (skip), "5000" (steps), "90s" / "15m" / "2h" (wall clock), or both
// joined by '+': "5000+15m".
inline Budget parse_budget(const std::string& text) {
  Budget b;
  if (text.empty() || text.back() == '+') throw ConfigError("bad budget '" + text + "'");
  std::stringstream parts(text);
  std::string part;
  while (std::getline(parts, part, '+')) {
    if (part.empty()) throw ConfigError("empty budget component in '" + text + "'");
    std::size_t used = 0;
    double value = 0;
    try {
      value = std::stod(part, &used);
    } catch (const std::exception&) {
      throw ConfigError("bad budget '" + text + "'");
    }
    const std::string unit = part.substr(used);
    if (value < 0) throw ConfigError("budget must be non-negative: '" + text + "'");
    if (unit.empty()) {
      if (value != static_cast<double>(static_cast<long>(value))) throw ConfigError("step budget must be an integer: '" + text + "'");
      b.steps = static_cast<long>(value);
    } else if (unit == "s") {
      b.seconds = value;
    } else if (unit == "m") {
      b.seconds = 60 * value;
    } else if (unit == "h") {
      b.seconds = 3600 * value;
    } else {
      throw ConfigError("bad budget unit in '" + text + "'");
    }
  }
  return b;
}

inline std::string format_budget(const Budget& b) {
  std::ostringstream out;
  if (b.steps > 0) out << b.steps;
  if (b.seconds > 0) {
    if (b.steps > 0) out << '+';
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, b.seconds);
    out << std::string_view(buf, static_cast<std::size_t>(end - buf)) << 's';
  }
  if (b.empty()) out << 0;
  return out.str();
}

namespace detail {

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("expected a boolean, got '" + v + "'");
}

template <typename N>
N parse_number(const std::string& v) {
  if (std::is_unsigned_v<N> && v.find('-') != std::string::npos) throw ConfigError("expected a non-negative number, got '" + v + "'");
  std::istringstream in(v);
  N n{};
  in >> n;
  if (!in || !in.eof()) throw ConfigError("expected a number, got '" + v + "'");
  return n;
}

// Shortest text that reads back to the same value.
template <typename N>
std::string show(N n) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, n);
  return std::string(buf, end);
}

struct Field {
  std::string section, key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define QBT_NUM(sec, name, member, type)                                                                         \
  Field {                                                                                                        \
    sec, name, [](RunConfig& c, const std::string& v) { c.member = parse_number<type>(v); },                    \
        [](const RunConfig& c) { return show(c.member); }                                                        \
  }
#define QBT_BOOL(sec, name, member)                                                                              \
  Field {                                                                                                        \
    sec, name, [](RunConfig& c, const std::string& v) { c.member = parse_bool(v); },                             \
        [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }                              \
  }
#define QBT_BUDGET(name, member)                                                                                 \
  Field {                                                                                                        \
    "training", name, [](RunConfig& c, const std::string& v) { c.training.member = parse_budget(v); },          \
        [](const RunConfig& c) { return format_budget(c.training.member); }                                      \
  }

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      QBT_NUM("task", "seed", task.seed, std::uint64_t),
      QBT_NUM("task", "content_vocab_per_lang", task.content_vocab_per_lang, int),
      Field{"task", "permutation", [](RunConfig& c, const std::string& v) { c.task.permutation = parse_permutation_kind(v); },
            [](const RunConfig& c) { return std::string(to_string(c.task.permutation)); }},
      QBT_NUM("task", "reorder_window", task.reorder_window, int),
      QBT_NUM("task", "min_len", task.min_len, int),
      QBT_NUM("task", "max_len", task.max_len, int),
      QBT_NUM("task", "corpus_size_per_lang", task.corpus_size_per_lang, int),
      QBT_NUM("task", "valid_size", task.valid_size, int),
      QBT_NUM("task", "test_size", task.test_size, int),
      Field{"task", "latent", [](RunConfig& c, const std::string& v) { c.task.latent = parse_latent_process(v); },
            [](const RunConfig& c) { return std::string(to_string(c.task.latent)); }},
      QBT_NUM("task", "zipf_exponent", task.zipf_exponent, double),

      QBT_NUM("model", "n_enc_layers", model.n_enc_layers, int),
      QBT_NUM("model", "n_dec_layers", model.n_dec_layers, int),
      QBT_NUM("model", "d_model", model.d_model, int),
      QBT_NUM("model", "d_ff", model.d_ff, int),
      QBT_NUM("model", "n_heads", model.n_heads, int),
      QBT_NUM("model", "max_positions", model.max_positions, int),
      QBT_NUM("model", "dropout", model.dropout, double),
      QBT_BOOL("model", "tie_encoder_head", model.tie_encoder_head),
      QBT_BOOL("model", "tie_decoder_head", model.tie_decoder_head),
      QBT_BOOL("model", "share_enc_dec_embeddings", model.share_enc_dec_embeddings),
      QBT_BOOL("model", "encoder_target_lang", model.encoder_target_lang),

      QBT_BUDGET("dae", dae),
      QBT_BUDGET("warmup", warmup),
      QBT_BUDGET("ebt", ebt),
      QBT_BUDGET("ebtd", ebtd),
      QBT_BUDGET("bt", bt),
      QBT_BUDGET("synced", synced),
      QBT_BUDGET("bt_only", bt_only),
      Field{"training", "direction",
            [](RunConfig& c, const std::string& v) {
              if (v == "uniform") c.training.direction = DirectionPolicy::Uniform;
              else if (v == "alternate") c.training.direction = DirectionPolicy::Alternate;
              else throw ConfigError("direction must be uniform or alternate");
            },
            [](const RunConfig& c) { return std::string(c.training.direction == DirectionPolicy::Uniform ? "uniform" : "alternate"); }},
      QBT_NUM("training", "batch_size", training.batch_size, int),
      QBT_NUM("training", "seed", training.seed, std::uint64_t),
      QBT_NUM("training", "lr", training.adam.lr, double),
      QBT_NUM("training", "beta1", training.adam.beta1, double),
      QBT_NUM("training", "beta2", training.adam.beta2, double),
      QBT_NUM("training", "adam_epsilon", training.adam.epsilon, double),
      QBT_BOOL("training", "copy_penalty", training.penalty.enabled),
      QBT_NUM("training", "copy_penalty_weight", training.penalty.weight, double),
      QBT_NUM("training", "copy_penalty_epsilon", training.penalty.epsilon, double),
      QBT_NUM("training", "dae_drop_prob", training.noise.drop_prob, double),
      QBT_NUM("training", "dae_shuffle_window", training.noise.shuffle_window, int),
      QBT_NUM("training", "checkpoint_every", training.checkpoint_every, long),

      QBT_NUM("eval", "every", eval.every, long),
      QBT_NUM("eval", "max_sentences", eval.max_sentences, int),
      Field{"eval", "generator",
            [](RunConfig& c, const std::string& v) {
              if (v == "auto") c.eval.generator = EvalGenerator::Auto;
              else if (v == "ar") c.eval.generator = EvalGenerator::Ar;
              else if (v == "nar") c.eval.generator = EvalGenerator::Nar;
              else throw ConfigError("eval generator must be auto, ar or nar");
            },
            [](const RunConfig& c) {
              switch (c.eval.generator) {
                case EvalGenerator::Ar: return std::string("ar");
                case EvalGenerator::Nar: return std::string("nar");
                default: return std::string("auto");
              }
            }},
      QBT_BOOL("eval", "restore_best", eval.restore_best),
      QBT_BOOL("eval", "early_stop", eval.early_stop),
      QBT_NUM("eval", "patience", eval.patience, int),
      QBT_NUM("eval", "log_every", eval.log_every, long),

      Field{"output", "dir", [](RunConfig& c, const std::string& v) { c.output_dir = v; },
            [](const RunConfig& c) { return c.output_dir; }},
  };
  return table;
}

#undef QBT_NUM
#undef QBT_BOOL
#undef QBT_BUDGET

}  // namespace detail

// Applies "section.key=value" (or a parsed INI tree) on top of `config`.
inline void apply_setting(RunConfig& config, const std::string& section, const std::string& key, const std::string& value) {
  for (const auto& f : detail::fields()) {
    if (f.section == section && f.key == key) {
      try {
        f.set(config, value);
      } catch (const ConfigError& e) {
        throw ConfigError("[" + section + "] " + key + ": " + e.what());
      }
      return;
    }
  }
  throw ConfigError("unknown config key [" + section + "] " + key);
}

inline void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("override must look like section.key=value: '" + assignment + "'");
  apply_setting(config, assignment.substr(0, dot), assignment.substr(dot + 1, eq - dot - 1), assignment.substr(eq + 1));
}

inline RunConfig parse_run_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  RunConfig config;
  for (const auto& [section, keys] : tree) {
    if (!keys.data().empty()) throw ConfigError("key outside a section: " + section);
    for (const auto& [key, value] : keys) apply_setting(config, section, key, value.data());
  }
  config.sync_vocab();
  return config;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  return parse_run_config(in);
}

inline std::string resolved_ini(const RunConfig& config) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : detail::fields()) {
    if (f.section != section) {
      if (!section.empty()) out << '\n';
      section = f.section;
      out << '[' << section << "]\n";
    }
    out << f.key << " = " << f.get(config) << '\n';
  }
  return out.str();
}

// QBTLAB_SEED, when set, replaces `seed`.
inline std::uint64_t seed_from_env(std::uint64_t seed) {
  if (const char* env = std::getenv("QBTLAB_SEED"); env && *env) {
    try {
      return detail::parse_number<std::uint64_t>(env);
    } catch (const ConfigError&) {
      throw ConfigError(std::string("QBTLAB_SEED is not an unsigned integer: ") + env);
    }
  }
  return seed;
}

}  // namespace qbt
