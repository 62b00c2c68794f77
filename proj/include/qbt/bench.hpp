#pragma once

// Wall-clock benchmarks: NAR vs greedy AR generation per length bucket, and
// training-step throughput on a fixed corpus.

#include <chrono>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qbt/steps.hpp"

namespace qbt {

enum class GeneratorKind { Ar, Nar };

inline std::string_view to_string(GeneratorKind g) { return g == GeneratorKind::Ar ? "AR" : "NAR"; }

struct ThroughputRecord {
  GeneratorKind generator = GeneratorKind::Ar;
  int length = 0;
  int batch_size = 0;
  double mean_ms = 0.0;  // per batch, warm-up excluded
  double tokens_per_sec = 0.0;
  int reps = 0;
  int threads = 1;
  std::size_t forward_calls = 0;  // generation passes per batch: decoder steps (AR) or encoder passes (NAR)
};

inline constexpr int kBenchWarmupReps = 2;

// Benchmarks must not share the core with Eigen worker threads.
inline int require_single_thread() {
  const int threads = Eigen::nbThreads();
  if (threads != 1) throw ConfigError("benchmarks require single-threaded execution (Eigen reports " + std::to_string(threads) + " threads)");
  return threads;
}

// A batch of `rows` sentences of exactly `length` random content tokens.
inline Batch uniform_length_batch(int rows, int length, Lang lang, int content_per_lang, Rng& rng) {
  const Vocab vocab(content_per_lang);
  const IdRange range = vocab.range(lang);
  std::uniform_int_distribution<int> token(range.begin, range.end - 1);
  std::vector<Sequence> out(rows, Sequence(length));
  for (auto& s : out)
    for (auto& id : s) id = token(rng);
  return Batch::from_sequences(out, lang);
}

// Times both generators on identical batches for each length. AR decoding runs
// exactly `length` steps (no EOS stopping) so every bucket has a fixed amount
// of generation work.
template <typename T>
std::vector<ThroughputRecord> bench_generation(const ModelParams<T>& p, const std::vector<int>& lengths, int batch_size = 32,
                                               int reps = 5, std::uint64_t seed = 1) {
  if (reps < 5) throw ConfigError("bench_generation: reps must be >= 5");
  if (batch_size < 1) throw ConfigError("bench_generation: batch_size must be >= 1");
  const int threads = require_single_thread();
  const int content = (p.config.vocab_size - kNumSpecials) / 2;
  using Clock = std::chrono::steady_clock;
  std::vector<ThroughputRecord> out;
  Rng rng(seed);
  for (int length : lengths) {
    if (length < 1 || length > p.config.max_positions)
      throw ConfigError("bench_generation: length " + std::to_string(length) + " outside [1, max_positions]");
    const Batch batch = uniform_length_batch(batch_size, length, Lang::S, content, rng);
    for (GeneratorKind g : {GeneratorKind::Nar, GeneratorKind::Ar}) {
      GenerationStats stats;
      auto run = [&](GenerationStats* s) {
        if (g == GeneratorKind::Nar) return encoder_generate_nar(p, batch, s);
        return decoder_generate_greedy(p, batch, Lang::T, GreedyOptions{length, false}, s);
      };
      for (int i = 0; i < kBenchWarmupReps; ++i) run(nullptr);
      const auto start = Clock::now();
      for (int i = 0; i < reps; ++i) run(&stats);
      const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
      ThroughputRecord r;
      r.generator = g;
      r.length = length;
      r.batch_size = batch_size;
      r.mean_ms = 1000.0 * seconds / reps;
      r.tokens_per_sec = static_cast<double>(batch_size) * length * reps / seconds;
      r.reps = reps;
      r.threads = threads;
      r.forward_calls = (g == GeneratorKind::Nar ? stats.encoder_passes : stats.decoder_forward_calls) / reps;
      out.push_back(r);
    }
  }
  return out;
}

struct TrainingThroughput {
  StepKind kind = StepKind::Bt;
  long steps = 0;
  std::size_t sequences = 0;
  std::size_t tokens = 0;
  double seconds = 0.0;
  double sequences_per_sec = 0.0;
  double tokens_per_sec = 0.0;
};

// Runs `kind` steps for `duration_s` seconds (checked between steps) on
// batches drawn from the two corpora, alternating languages. The state is
// taken by value so the caller's model is unchanged.
inline TrainingThroughput bench_training_throughput(StepKind kind, TrainState<float> state, const Corpus& s, const Corpus& t,
                                                    double duration_s, int batch_size = 32, std::uint64_t seed = 1) {
  require_single_thread();
  TrainingThroughput r;
  r.kind = kind;
  if (duration_s <= 0.0) return r;
  BatchStream stream_s(s, batch_size, Cipher::stream_seed(seed, 0)), stream_t(t, batch_size, Cipher::stream_seed(seed, 1));
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  // Untimed first step: allocations and caches.
  bool warm = false;
  auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - start).count(); };
  auto timed_start = start;
  while (true) {
    const bool use_s = r.steps % 2 == 0;
    BatchStream& a = use_s ? stream_s : stream_t;
    BatchStream& b = use_s ? stream_t : stream_s;
    StepRecord rec;
    switch (kind) {
      case StepKind::Warmup: {
        const Batch x = a.next();
        rec = warmup_step(state, x, b.next());
        break;
      }
      case StepKind::Dae: rec = dae_step(state, a.next(), NoiseConfig{}); break;
      case StepKind::Ebt: rec = ebt_step(state, a.next()); break;
      case StepKind::Ebtd: rec = ebtd_step(state, a.next()); break;
      case StepKind::Bt: rec = bt_step(state, a.next()); break;
    }
    if (!warm) {
      warm = true;
      timed_start = Clock::now();
      if (elapsed() >= duration_s) break;
      continue;
    }
    ++r.steps;
    r.sequences += rec.sequences + rec.skipped;
    r.tokens += rec.tokens;
    if (elapsed() >= duration_s) break;
  }
  r.seconds = std::chrono::duration<double>(Clock::now() - timed_start).count();
  if (r.seconds > 0) {
    r.sequences_per_sec = static_cast<double>(r.sequences) / r.seconds;
    r.tokens_per_sec = static_cast<double>(r.tokens) / r.seconds;
  }
  return r;
}

inline constexpr const char* kThroughputHeader = "generator,length,batch_size,mean_ms,tokens_per_sec,reps,threads,forward_calls";

inline void write_throughput_csv(const std::string& path, const std::vector<ThroughputRecord>& records) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path);
  out << kThroughputHeader << '\n' << std::setprecision(6);
  for (const auto& r : records)
    out << to_string(r.generator) << ',' << r.length << ',' << r.batch_size << ',' << r.mean_ms << ',' << r.tokens_per_sec << ','
        << r.reps << ',' << r.threads << ',' << r.forward_calls << '\n';
}

inline nlohmann::json to_json(const ThroughputRecord& r) {
  return {{"generator", std::string(to_string(r.generator))},
          {"length", r.length},
          {"batch_size", r.batch_size},
          {"mean_ms", r.mean_ms},
          {"tokens_per_sec", r.tokens_per_sec},
          {"reps", r.reps},
          {"threads", r.threads},
          {"forward_calls", r.forward_calls}};
}

inline nlohmann::json to_json(const TrainingThroughput& r) {
  return {{"step", std::string(to_string(r.kind))},
          {"steps", r.steps},
          {"sequences", r.sequences},
          {"tokens", r.tokens},
          {"seconds", r.seconds},
          {"sequences_per_sec", r.sequences_per_sec},
          {"tokens_per_sec", r.tokens_per_sec}};
}

}  // namespace qbt
