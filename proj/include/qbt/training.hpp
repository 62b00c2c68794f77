#pragma once

// Stage schedules: QBT-Staged (warmup, EBT, EBTD, BT, optionally preceded by
// DAE), QBT-Synced (EBT, EBTD and BT interleaved per batch) and plain BT,
// with validation, best-checkpoint tracking, per-stage checkpoints, resume
// and CSV metrics.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qbt/bleu.hpp"
#include "qbt/checkpoint.hpp"
#include "qbt/steps.hpp"

namespace qbt {

enum class StageKind { Warmup, Dae, Ebt, Ebtd, Bt, QbtSynced };

inline std::string_view to_string(StageKind k) {
  switch (k) {
    case StageKind::Warmup: return "WARMUP";
    case StageKind::Dae: return "DAE";
    case StageKind::Ebt: return "EBT";
    case StageKind::Ebtd: return "EBTD";
    case StageKind::Bt: return "BT";
    case StageKind::QbtSynced: return "QBT_SYNCED";
  }
  return "?";
}

inline StageKind parse_stage_kind(std::string_view s) {
  for (StageKind k : {StageKind::Warmup, StageKind::Dae, StageKind::Ebt, StageKind::Ebtd, StageKind::Bt, StageKind::QbtSynced}) {
    const auto name = to_string(k);
    if (s.size() == name.size() && std::equal(s.begin(), s.end(), name.begin(), [](char a, char b) { return std::toupper(a) == b; }))
      return k;
  }
  throw ConfigError("unknown stage kind: " + std::string(s));
}

// A stage stops at whichever limit it reaches first; a zero limit is no limit,
// and a stage with neither limit is skipped.
struct Budget {
  long steps = 0;
  double seconds = 0.0;

  bool empty() const { return steps <= 0 && seconds <= 0.0; }
};

struct Stage {
  StageKind kind = StageKind::Bt;
  Budget budget;
  // Step kinds run per QBT-Synced iteration, in this order.
  std::vector<StepKind> synced_steps{StepKind::Ebt, StepKind::Ebtd, StepKind::Bt};
};

enum class DirectionPolicy { Uniform, Alternate };

enum class EvalGenerator { Auto, Ar, Nar };

struct EvalConfig {
  long every = 1000;           // steps between validation passes; 0 evaluates only at stage end
  int max_sentences = 500;     // validation sentences per direction
  EvalGenerator generator = EvalGenerator::Auto;  // Auto: NAR for encoder stages, greedy AR otherwise
  bool restore_best = true;    // leave each stage at its best validation checkpoint
  bool early_stop = false;
  int patience = 5;            // evaluations without improvement before stopping
  long log_every = 100;        // training-loss rows in the metrics CSV
};

struct StageSchedule {
  std::vector<Stage> stages;
  DirectionPolicy direction = DirectionPolicy::Uniform;
  EvalConfig eval;

  void validate() const {
    int synced = 0;
    for (const auto& s : stages) {
      if (s.budget.steps < 0 || s.budget.seconds < 0) throw ConfigError("stage budgets must be non-negative");
      if (s.kind == StageKind::QbtSynced) {
        ++synced;
        if (s.synced_steps.empty()) throw ConfigError("QBT_SYNCED stage needs at least one step kind");
        for (StepKind k : s.synced_steps)
          if (k != StepKind::Ebt && k != StepKind::Ebtd && k != StepKind::Bt)
            throw ConfigError("QBT_SYNCED interleaves only EBT, EBTD and BT");
      }
    }
    if (synced > 1) throw ConfigError("at most one QBT_SYNCED stage per schedule");
    if (eval.every < 0 || eval.patience < 1 || eval.max_sentences < 1 || eval.log_every < 1)
      throw ConfigError("invalid evaluation settings");
  }
};

// Warmup, EBT, EBTD, BT with the given budgets, optionally preceded by DAE.
inline StageSchedule qbt_staged_schedule(Budget warmup, Budget ebt, Budget ebtd, Budget bt, Budget dae = {}) {
  StageSchedule s;
  s.stages = {{StageKind::Dae, dae, {}}, {StageKind::Warmup, warmup, {}}, {StageKind::Ebt, ebt, {}},
              {StageKind::Ebtd, ebtd, {}}, {StageKind::Bt, bt, {}}};
  return s;
}

// Splits a total wall-clock budget across EBT : EBTD : BT as 4 : 16 : 12
// after a fixed warmup step count.
inline StageSchedule qbt_staged_time_split(long warmup_steps, double total_seconds) {
  const double unit = total_seconds / 32.0;
  return qbt_staged_schedule({warmup_steps, 0}, {0, 4 * unit}, {0, 16 * unit}, {0, 12 * unit});
}

inline StageSchedule qbt_synced_schedule(Budget budget, std::vector<StepKind> steps = {StepKind::Ebt, StepKind::Ebtd, StepKind::Bt}) {
  StageSchedule s;
  s.stages = {{StageKind::QbtSynced, budget, std::move(steps)}};
  return s;
}

inline StageSchedule bt_schedule(Budget budget, Budget dae = {}) {
  StageSchedule s;
  s.stages = {{StageKind::Dae, dae, {}}, {StageKind::Bt, budget, {}}};
  return s;
}

// Parses an ablation subset such as "ebt+bt" into synced step kinds (kept in
// EBT, EBTD, BT order).
inline std::vector<StepKind> parse_step_subset(std::string_view text) {
  bool ebt = false, ebtd = false, bt = false;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('+', start), text.size());
    std::string part(text.substr(start, end - start));
    for (auto& c : part) c = static_cast<char>(std::tolower(c));
    if (part == "ebt") ebt = true;
    else if (part == "ebtd") ebtd = true;
    else if (part == "bt") bt = true;
    else throw ConfigError("unknown step in subset: '" + part + "'");
    start = end + 1;
  }
  std::vector<StepKind> out;
  if (ebt) out.push_back(StepKind::Ebt);
  if (ebtd) out.push_back(StepKind::Ebtd);
  if (bt) out.push_back(StepKind::Bt);
  return out;
}

// ---------------------------------------------------------------------------
// Metrics.

struct MetricRecord {
  std::string stage;
  long step = 0;                   // step within the stage
  std::string direction;           // "s2t", "t2s" or "both"
  std::optional<double> loss;
  std::optional<double> bleu;
  std::optional<double> copy_rate;
  std::optional<double> tokens_per_sec;
  double wall_clock_s = 0.0;       // since the start of the run
};

inline constexpr const char* kMetricsHeader = "stage,step,direction,loss,bleu,copy_rate,tokens_per_sec,wall_clock_s";

inline std::string to_csv_row(const MetricRecord& r) {
  std::ostringstream out;
  out << std::setprecision(6);
  auto opt = [&](const std::optional<double>& v) {
    out << ',';
    if (v) out << *v;
  };
  out << r.stage << ',' << r.step << ',' << r.direction;
  opt(r.loss);
  opt(r.bleu);
  opt(r.copy_rate);
  opt(r.tokens_per_sec);
  out << ',' << r.wall_clock_s;
  return out.str();
}

// Append-only CSV sink, safe to share between threads.
class MetricsSink {
 public:
  MetricsSink() = default;
  explicit MetricsSink(const std::filesystem::path& path, bool append = false) {
    const bool fresh = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw InvalidInput("cannot open metrics file " + path.string());
    if (fresh) out_ << kMetricsHeader << '\n' << std::flush;
  }

  void write(const MetricRecord& r) {
    std::lock_guard lock(mutex_);
    records_.push_back(r);
    if (out_.is_open()) out_ << to_csv_row(r) << '\n' << std::flush;
  }

  std::vector<MetricRecord> records() const {
    std::lock_guard lock(mutex_);
    return records_;
  }

 private:
  mutable std::mutex mutex_;
  std::ofstream out_;
  std::vector<MetricRecord> records_;
};

// ---------------------------------------------------------------------------
// Evaluation.

struct TrainingData {
  Corpus train_s;
  Corpus train_t;
  ParallelSet valid;
};

inline TrainingData training_data(const SynthTask& task) { return {task.train_s, task.train_t, task.valid}; }

template <typename T>
std::vector<Sequence> translate_corpus(const ModelParams<T>& p, const Corpus& src, bool nar, int batch_size = 64,
                                       GenerationStats* stats = nullptr) {
  std::vector<Sequence> out;
  out.reserve(src.size());
  for (const Batch& b : sequential_batches(src, batch_size)) {
    const Batch y = nar ? encoder_generate_nar(p, b, stats) : decoder_generate_greedy(p, b, other(b.language()), {}, stats);
    for (auto& s : y.sequences()) out.push_back(std::move(s));
  }
  return out;
}

struct DirectionScore {
  Lang source = Lang::S;
  BleuReport bleu;
  double copy_rate = 0.0;
};

struct ValidationResult {
  DirectionScore s2t, t2s;
  double mean_bleu() const { return 0.5 * (s2t.bleu.bleu + t2s.bleu.bleu); }
};

inline Corpus head(const Corpus& c, int n) {
  Corpus out{{}, c.language, c.split};
  out.sentences.assign(c.sentences.begin(), c.sentences.begin() + std::min<std::size_t>(n, c.size()));
  return out;
}

// Scores both directions of a parallel set against its oracle side.
template <typename T>
ValidationResult evaluate_parallel(const ModelParams<T>& p, const ParallelSet& set, bool nar, int max_sentences) {
  const Corpus s = head(set.source, max_sentences), t = head(set.target, max_sentences);
  auto score = [&](const Corpus& src, const Corpus& ref) {
    const auto hyps = translate_corpus(p, src, nar);
    return DirectionScore{src.language, corpus_bleu(hyps, ref.sentences), copy_rate(hyps, src.sentences)};
  };
  return {score(s, t), score(t, s)};
}

inline bool stage_uses_nar(StageKind k, EvalGenerator g) {
  if (g != EvalGenerator::Auto) return g == EvalGenerator::Nar;
  return k == StageKind::Warmup || k == StageKind::Ebt;
}

// ---------------------------------------------------------------------------
// Runner.

struct RunOptions {
  std::uint64_t seed = 1;
  int batch_size = 32;
  CopyPenaltyConfig penalty;
  NoiseConfig noise;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  long checkpoint_every = 0;             // mid-stage checkpoints for resume; 0 disables
  MetricsSink* sink = nullptr;
  // Called after every step with (stage, record); returning false stops the run.
  std::function<bool(const Stage&, const StepRecord&)> on_step;
};

struct StageResult {
  StageKind kind = StageKind::Bt;
  long steps = 0;
  double seconds = 0.0;
  std::size_t sequences = 0;
  std::size_t tokens = 0;
  std::optional<double> best_valid_bleu;
  std::optional<double> final_valid_bleu;
  bool early_stopped = false;
  std::filesystem::path checkpoint;
};

struct RunResult {
  std::vector<StageResult> stages;
  std::vector<MetricRecord> metrics;
};

// Where an interrupted run left off.
struct ResumePoint {
  std::size_t stage_index = 0;
  long stage_step = 0;
  double stage_seconds = 0.0;
  std::size_t draws_s = 0, draws_t = 0, direction_draws = 0;
  std::string rng_state;
  std::optional<double> best_bleu;
  int stale_evals = 0;
};

inline std::string checkpoint_name(StageKind kind, long step) {
  std::ostringstream name;
  std::string stage(to_string(kind));
  for (auto& c : stage) c = static_cast<char>(std::tolower(c));
  name << stage << "_step" << std::setw(7) << std::setfill('0') << step << ".ckpt";
  return name.str();
}

inline std::string best_checkpoint_name(StageKind kind) {
  std::string stage(to_string(kind));
  for (auto& c : stage) c = static_cast<char>(std::tolower(c));
  return stage + "_best.ckpt";
}

// Finds the most recently written checkpoint in a run directory.
inline std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& dir) {
  const auto marker = dir / "LATEST";
  if (!std::filesystem::exists(marker)) return std::nullopt;
  std::ifstream in(marker);
  std::string name;
  std::getline(in, name);
  if (name.empty() || !std::filesystem::exists(dir / name)) return std::nullopt;
  return dir / name;
}

namespace detail {

inline std::string rng_to_string(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

inline void rng_from_string(Rng& rng, const std::string& s) {
  std::istringstream in(s);
  in >> rng;
  if (!in) throw InvalidInput("checkpoint: corrupt rng state");
}

}  // namespace detail

class ScheduleRunner {
 public:
  ScheduleRunner(TrainState<float>& state, const TrainingData& data, StageSchedule schedule, RunOptions options)
      : state_(state), data_(data), schedule_(std::move(schedule)), opt_(std::move(options)) {
    schedule_.validate();
    opt_.penalty.validate();
    if (data_.train_s.empty() || data_.train_t.empty()) throw InvalidInput("training corpora must be non-empty");
  }

  RunResult run(std::optional<ResumePoint> resume = std::nullopt) {
    run_start_ = Clock::now();
    RunResult result;
    const std::size_t first = resume ? resume->stage_index : 0;
    for (std::size_t i = first; i < schedule_.stages.size(); ++i) {
      const Stage& stage = schedule_.stages[i];
      if (stage.budget.empty()) continue;
      result.stages.push_back(run_stage(i, stage, i == first ? resume : std::nullopt));
      if (stopped_) break;
    }
    result.metrics = records_;
    return result;
  }

  // Reads the resume point stored in a checkpoint and restores model,
  // optimizer and dropout-rng state into `state`.
  static ResumePoint restore(TrainState<float>& state, const Checkpoint& ck) {
    if (!(ck.params.config == state.params.config)) throw InvalidInput("resume: checkpoint config differs from the run config");
    state.params = ck.params;
    if (ck.optimizer) state.optimizer = *ck.optimizer;
    const Json& m = ck.meta;
    ResumePoint r;
    r.stage_index = m.at("stage_index").get<std::size_t>();
    r.stage_step = m.at("stage_step").get<long>();
    r.stage_seconds = m.at("stage_seconds").get<double>();
    r.draws_s = m.at("draws_s").get<std::size_t>();
    r.draws_t = m.at("draws_t").get<std::size_t>();
    r.direction_draws = m.at("direction_draws").get<std::size_t>();
    r.rng_state = m.at("rng").get<std::string>();
    if (m.contains("best_bleu") && !m.at("best_bleu").is_null()) r.best_bleu = m.at("best_bleu").get<double>();
    r.stale_evals = m.value("stale_evals", 0);
    if (m.value("stage_complete", false)) {
      ++r.stage_index;
      r.stage_step = 0;
      r.stage_seconds = 0.0;
      r.draws_s = r.draws_t = r.direction_draws = 0;
      r.best_bleu.reset();
      r.stale_evals = 0;
    }
    detail::rng_from_string(state.rng, r.rng_state);
    return r;
  }

 private:
  using Clock = std::chrono::steady_clock;

  double since(Clock::time_point t) const { return std::chrono::duration<double>(Clock::now() - t).count(); }

  void emit(MetricRecord r) {
    r.wall_clock_s = since(run_start_);
    records_.push_back(r);
    if (opt_.sink) opt_.sink->write(r);
  }

  struct Sampler {
    BatchStream s, t;
    Rng direction_rng;
    DirectionPolicy policy;
    std::size_t direction_draws = 0;

    Lang next_language() {
      ++direction_draws;
      if (policy == DirectionPolicy::Alternate) return direction_draws % 2 == 1 ? Lang::S : Lang::T;
      return std::bernoulli_distribution(0.5)(direction_rng) ? Lang::S : Lang::T;
    }
    Batch next(Lang l) { return l == Lang::S ? s.next() : t.next(); }
  };

  Sampler make_sampler(std::size_t stage_index) const {
    const std::uint64_t base = Cipher::stream_seed(opt_.seed, 100 + stage_index);
    return Sampler{BatchStream(data_.train_s, opt_.batch_size, Cipher::stream_seed(base, 0)),
                   BatchStream(data_.train_t, opt_.batch_size, Cipher::stream_seed(base, 1)),
                   Rng(Cipher::stream_seed(base, 2)), schedule_.direction, 0};
  }

  // One scheduled step (or one QBT-Synced iteration). Returns the step records.
  std::vector<StepRecord> take_step(const Stage& stage, Sampler& sampler) {
    std::vector<StepRecord> out;
    auto one = [&](StepKind k) {
      const Lang l = sampler.next_language();
      switch (k) {
        case StepKind::Warmup: {
          const Batch x = sampler.next(l);
          const Batch y = sampler.next(other(l));
          out.push_back(warmup_step(state_, x, y));
          break;
        }
        case StepKind::Dae: out.push_back(dae_step(state_, sampler.next(l), opt_.noise)); break;
        case StepKind::Ebt: out.push_back(ebt_step(state_, sampler.next(l), opt_.penalty)); break;
        case StepKind::Ebtd: out.push_back(ebtd_step(state_, sampler.next(l))); break;
        case StepKind::Bt: out.push_back(bt_step(state_, sampler.next(l))); break;
      }
    };
    switch (stage.kind) {
      case StageKind::Warmup: one(StepKind::Warmup); break;
      case StageKind::Dae: one(StepKind::Dae); break;
      case StageKind::Ebt: one(StepKind::Ebt); break;
      case StageKind::Ebtd: one(StepKind::Ebtd); break;
      case StageKind::Bt: one(StepKind::Bt); break;
      case StageKind::QbtSynced:
        for (StepKind k : stage.synced_steps) one(k);
        break;
    }
    return out;
  }

  ValidationResult validate(const Stage& stage, long step) {
    const bool nar = stage_uses_nar(stage.kind, schedule_.eval.generator);
    const ValidationResult v = evaluate_parallel(state_.params, data_.valid, nar, schedule_.eval.max_sentences);
    for (const DirectionScore* d : {&v.s2t, &v.t2s}) {
      MetricRecord r;
      r.stage = std::string(to_string(stage.kind));
      r.step = step;
      r.direction = std::string(direction_name(d->source));
      r.bleu = d->bleu.bleu;
      r.copy_rate = d->copy_rate;
      emit(r);
    }
    return v;
  }

  void save(const StageResult& sr, std::size_t stage_index, const Sampler& sampler, long step, double seconds,
            bool complete, std::optional<double> best, int stale) {
    if (opt_.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(opt_.checkpoint_dir);
    Json meta{{"stage", std::string(to_string(sr.kind))},
              {"stage_index", stage_index},
              {"stage_step", step},
              {"stage_seconds", seconds},
              {"stage_complete", complete},
              {"draws_s", sampler.s.draws()},
              {"draws_t", sampler.t.draws()},
              {"direction_draws", sampler.direction_draws},
              {"rng", detail::rng_to_string(state_.rng)},
              {"best_bleu", best ? Json(*best) : Json(nullptr)},
              {"stale_evals", stale},
              {"seed", opt_.seed}};
    const std::string name = checkpoint_name(sr.kind, step);
    save_checkpoint(opt_.checkpoint_dir / name, state_.params, &state_.optimizer, meta);
    std::ofstream(opt_.checkpoint_dir / "LATEST") << name << '\n';
    last_checkpoint_ = opt_.checkpoint_dir / name;
  }

  StageResult run_stage(std::size_t index, const Stage& stage, const std::optional<ResumePoint>& resume) {
    StageResult sr;
    sr.kind = stage.kind;
    Sampler sampler = make_sampler(index);
    std::optional<double> best = resume ? resume->best_bleu : std::nullopt;
    int stale = resume ? resume->stale_evals : 0;
    long step = 0;
    double carried_seconds = 0.0;
    if (resume) {
      sampler.s.advance(resume->draws_s);
      sampler.t.advance(resume->draws_t);
      for (std::size_t i = 0; i < resume->direction_draws; ++i) sampler.next_language();
      step = resume->stage_step;
      carried_seconds = resume->stage_seconds;
    }
    std::optional<ModelParams<float>> best_params;
    const auto best_path = opt_.checkpoint_dir / best_checkpoint_name(stage.kind);
    if (resume && best && schedule_.eval.restore_best && !opt_.checkpoint_dir.empty() && std::filesystem::exists(best_path))
      best_params = load_checkpoint(best_path, state_.params.config).params;
    const auto start = Clock::now();
    const EvalConfig& ev = schedule_.eval;
    double window_loss = 0.0;
    std::size_t window_tokens = 0, window_steps = 0;
    auto window_start = Clock::now();
    const std::string stage_name(to_string(stage.kind));

    auto evaluate_now = [&]() {
      const ValidationResult v = validate(stage, step);
      const double bleu = v.mean_bleu();
      sr.final_valid_bleu = bleu;
      if (!best || bleu > *best) {
        best = bleu;
        stale = 0;
        if (ev.restore_best) {
          best_params = state_.params;
          // Kept on disk so a resumed stage can still fall back to it.
          if (!opt_.checkpoint_dir.empty()) {
            std::filesystem::create_directories(opt_.checkpoint_dir);
            save_checkpoint(best_path, state_.params);
          }
        }
      } else {
        ++stale;
      }
    };

    while (true) {
      const double elapsed = carried_seconds + since(start);
      if (stage.budget.steps > 0 && step >= stage.budget.steps) break;
      if (stage.budget.seconds > 0 && elapsed >= stage.budget.seconds) break;
      for (const StepRecord& rec : take_step(stage, sampler)) {
        if (!std::isfinite(rec.loss)) throw NumericalError("non-finite loss in " + stage_name + " at step " + std::to_string(step));
        window_loss += rec.loss;
        window_tokens += rec.tokens;
        ++window_steps;
        sr.sequences += rec.sequences;
        sr.tokens += rec.tokens;
        if (opt_.on_step && !opt_.on_step(stage, rec)) stopped_ = true;
      }
      ++step;
      if (step % ev.log_every == 0) {
        MetricRecord r;
        r.stage = stage_name;
        r.step = step;
        r.direction = "both";
        r.loss = window_loss / static_cast<double>(std::max<std::size_t>(window_steps, 1));
        r.tokens_per_sec = static_cast<double>(window_tokens) / std::max(since(window_start), 1e-9);
        emit(r);
        window_loss = 0.0;
        window_tokens = window_steps = 0;
        window_start = Clock::now();
      }
      if (ev.every > 0 && step % ev.every == 0) {
        evaluate_now();
        if (ev.early_stop && stale >= ev.patience) {
          sr.early_stopped = true;
          break;
        }
      }
      if (opt_.checkpoint_every > 0 && step % opt_.checkpoint_every == 0)
        save(sr, index, sampler, step, carried_seconds + since(start), false, best, stale);
      if (stopped_) break;
    }
    if (stopped_) {
      // Interrupted: leave the stage resumable instead of finalizing it.
      sr.steps = step;
      sr.seconds = carried_seconds + since(start);
      sr.best_valid_bleu = best;
      save(sr, index, sampler, step, sr.seconds, false, best, stale);
      sr.checkpoint = last_checkpoint_;
      return sr;
    }
    if (ev.every == 0 || step % ev.every != 0) evaluate_now();
    if (ev.restore_best && best_params) state_.params = std::move(*best_params);
    sr.steps = step;
    sr.seconds = carried_seconds + since(start);
    sr.best_valid_bleu = best;
    save(sr, index, sampler, step, sr.seconds, true, best, stale);
    sr.checkpoint = last_checkpoint_;
    return sr;
  }

  TrainState<float>& state_;
  const TrainingData& data_;
  StageSchedule schedule_;
  RunOptions opt_;
  Clock::time_point run_start_;
  std::vector<MetricRecord> records_;
  std::filesystem::path last_checkpoint_;
  bool stopped_ = false;
};

inline RunResult run_schedule(TrainState<float>& state, const TrainingData& data, const StageSchedule& schedule,
                              const RunOptions& options = {}, std::optional<ResumePoint> resume = std::nullopt) {
  return ScheduleRunner(state, data, schedule, options).run(std::move(resume));
}

// QBT-Staged: stages must appear in DAE, WARMUP, EBT, EBTD, BT order (any may
// have a zero budget).
inline RunResult run_qbt_staged(TrainState<float>& state, const TrainingData& data, const StageSchedule& schedule,
                                const RunOptions& options = {}) {
  const StageKind order[] = {StageKind::Dae, StageKind::Warmup, StageKind::Ebt, StageKind::Ebtd, StageKind::Bt};
  std::size_t pos = 0;
  for (const auto& s : schedule.stages) {
    while (pos < std::size(order) && order[pos] != s.kind) ++pos;
    if (pos == std::size(order)) throw ConfigError("QBT-Staged stages must follow DAE, WARMUP, EBT, EBTD, BT order");
    ++pos;
  }
  return run_schedule(state, data, schedule, options);
}

// QBT-Synced from an already translation-capable model.
inline RunResult run_qbt_synced(TrainState<float>& state, const TrainingData& data, Budget budget,
                                std::vector<StepKind> steps = {StepKind::Ebt, StepKind::Ebtd, StepKind::Bt},
                                const RunOptions& options = {}, EvalConfig eval = {}) {
  StageSchedule schedule = qbt_synced_schedule(budget, std::move(steps));
  schedule.eval = eval;
  return run_schedule(state, data, schedule, options);
}

}  // namespace qbt
