// Acceptance runner: one PASS/FAIL line per criterion, exit status 0 only if
// every selected criterion passes. End-to-end criteria train real models under
// wall-clock budgets; --quick shrinks every budget for smoke testing, and its
// results are not valid for acceptance.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "qbt/bench.hpp"
#include "qbt/bleu.hpp"
#include "qbt/checkpoint.hpp"
#include "qbt/steps.hpp"
#include "qbt/synthdata.hpp"
#include "qbt/training.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace qbt;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double v, int precision = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Settings {
  fs::path out = "acceptance_runs";
  bool quick = false;
  double scale = 1.0;  // multiplies every time and step budget
  double seconds(double s) const { return s * scale; }
  long steps(long n) const { return std::max(1L, static_cast<long>(std::lround(n * scale))); }
};

// ---------------------------------------------------------------------------
// Shared fixtures, built on first use.

CipherTaskSpec default_task_spec() { return CipherTaskSpec{}; }

CipherTaskSpec long_task_spec() {
  CipherTaskSpec s;
  s.min_len = 48;
  s.max_len = 64;
  return s;
}

const SynthTask& default_task() {
  static const SynthTask task = generate_task(default_task_spec());
  return task;
}

const SynthTask& long_task() {
  static const SynthTask task = generate_task(long_task_spec());
  return task;
}

ModelConfig model_for(const CipherTaskSpec& spec) {
  ModelConfig c;
  c.vocab_size = kNumSpecials + 2 * spec.content_vocab_per_lang;
  return c;
}

double test_bleu(const ModelParams<float>& p, const SynthTask& task, bool nar) {
  return evaluate_parallel(p, task.test, nar, 500).mean_bleu();
}

Corpus uniform_corpus(int sentences, int length, Lang lang, int content, std::uint64_t seed) {
  Rng rng(seed);
  Corpus c{{}, lang, Split::Train};
  c.sentences = uniform_length_batch(sentences, length, lang, content, rng).sequences();
  return c;
}

std::optional<StageResult> stage_of(const RunResult& r, StageKind kind) {
  for (const auto& s : r.stages)
    if (s.kind == kind && s.steps > 0) return s;
  return std::nullopt;
}

double total_seconds(const RunResult& r) {
  double t = 0;
  for (const auto& s : r.stages) t += s.seconds;
  return t;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

Outcome gradient_correctness(const Settings&) {
  const auto start = Clock::now();
  const auto report = testing::gradient_check(testing::gradcheck_config(), 11);
  const double secs = since(start);
  double worst = 0;
  std::string worst_name;
  for (const auto& [name, err] : report)
    if (err >= worst) worst = err, worst_name = name;
  const bool pass = worst < 1e-3 && secs < 60.0;
  return {pass, std::to_string(report.size()) + " tensors, max rel err " + sci(worst) + " (" + worst_name +
                    ") < 1e-3, " + fmt(secs, 1) + " s < 60 s"};
}

// ---------------------------------------------------------------------------
// 2. Tying and freezing

Outcome tying_and_freezing(const Settings&) {
  const ModelConfig c = testing::tiny_config();
  TrainState<float> state(ModelParams<float>::initialized(c, 21), AdamConfig{1e-3}, 21);
  Rng rng(22);
  auto batch = [&](Lang lang) { return testing::random_batch(rng, 4, 2, 8, lang, c.vocab_size); };
  std::vector<std::string> problems;

  // (a) 50 mixed steps, tie flags on.
  CopyPenaltyConfig penalty;
  penalty.enabled = true;
  for (int i = 0; i < 50; ++i) {
    const Lang lang = i % 2 ? Lang::T : Lang::S;
    switch (i % 5) {
      case 0: warmup_step(state, batch(lang), batch(other(lang))); break;
      case 1: dae_step(state, batch(lang), NoiseConfig{}); break;
      case 2: ebt_step(state, batch(lang), penalty); break;
      case 3: ebtd_step(state, batch(lang)); break;
      case 4: bt_step(state, batch(lang)); break;
    }
  }
  const auto& p = state.params;
  const bool enc_tied = p.enc_head().data() == p.enc_embed.data() && p.enc_head() == p.enc_embed;
  const bool dec_tied = p.dec_head().data() == p.dec_embed().data() && p.dec_head() == p.dec_embed();
  if (!enc_tied) problems.push_back("Weo != We");
  if (!dec_tied) problems.push_back("Wdo != Wd");

  // (b) EBTD never touches the encoder group, (c) EBT never touches the decoder group.
  const auto enc0 = params_hash(state.params, ParamGroup::Encoder);
  for (int i = 0; i < 100; ++i) ebtd_step(state, batch(i % 2 ? Lang::T : Lang::S));
  if (params_hash(state.params, ParamGroup::Encoder) != enc0) problems.push_back("EBTD changed the encoder");
  const auto dec0 = params_hash(state.params, ParamGroup::Decoder);
  for (int i = 0; i < 100; ++i) ebt_step(state, batch(i % 2 ? Lang::T : Lang::S), penalty);
  if (params_hash(state.params, ParamGroup::Decoder) != dec0) problems.push_back("EBT changed the decoder");

  // (d) generation is read-only.
  const auto all0 = params_hash(state.params);
  for (int i = 0; i < 20; ++i) {
    const Batch b = batch(i % 2 ? Lang::T : Lang::S);
    encoder_generate_nar(state.params, b);
    decoder_generate_greedy(state.params, b, other(b.language()));
  }
  if (params_hash(state.params) != all0) problems.push_back("generation changed parameters");

  std::string detail = "50 mixed steps tied; 100 EBTD / 100 EBT steps; 40 generation calls";
  for (const auto& s : problems) detail += "; " + s;
  return {problems.empty(), detail};
}

// ---------------------------------------------------------------------------
// 3. NAR structural invariants

Outcome nar_structure(const Settings&) {
  const ModelConfig c = testing::tiny_config();
  const auto pf = ModelParams<float>::initialized(c, 31);
  Rng rng(32);
  std::uniform_int_distribution<int> rows(1, 8);
  long mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    const Batch b = testing::random_batch(rng, rows(rng), 1, c.max_positions, i % 2 ? Lang::T : Lang::S, c.vocab_size);
    if (encoder_generate_nar(pf, b).lengths() != b.lengths()) ++mismatches;
  }

  // Perturbing decoder input k must leave logits at positions < k unchanged.
  const auto pd = ModelParams<double>::initialized(c, 33);
  double leakage = 0, min_effect = 1e300;
  for (int trial = 0; trial < 20; ++trial) {
    const Batch src = testing::random_batch(rng, 1, 3, 10, Lang::S, c.vocab_size);
    const auto enc = encode(pd, src);
    Sequence base = testing::random_batch(rng, 1, 6, 12, Lang::T, c.vocab_size).row(0);
    base.insert(base.begin(), kBos);
    const auto ref = decode_teacher_forced(pd, Batch::from_sequences({base}, Lang::T), enc, Lang::T);
    for (int k = 1; k < static_cast<int>(base.size()); ++k) {
      Sequence changed = base;
      changed[k] = changed[k] == kNumSpecials ? kNumSpecials + 1 : kNumSpecials;
      const auto out = decode_teacher_forced(pd, Batch::from_sequences({changed}, Lang::T), enc, Lang::T);
      for (int t = 0; t < k; ++t) leakage = std::max(leakage, (out.values.row(t) - ref.values.row(t)).cwiseAbs().maxCoeff());
      min_effect = std::min(min_effect, (out.values.row(k) - ref.values.row(k)).cwiseAbs().maxCoeff());
    }
  }
  const bool pass = mismatches == 0 && leakage <= 1e-6 && min_effect > 0;
  return {pass, "1000 batches, " + std::to_string(mismatches) + " length mismatches; causal leakage " + sci(leakage) +
                    " <= 1e-6 (perturbed position still responds: " + sci(min_effect) + ")"};
}

// ---------------------------------------------------------------------------
// 4. Generation scaling

Outcome generation_scaling(const Settings&) {
  const auto start = Clock::now();
  const auto p = ModelParams<float>::initialized(model_for(default_task_spec()), 41);
  const std::vector<int> lengths{16, 32, 64, 128};
  const auto records = bench_generation(p, lengths, 32, 5);
  std::map<std::pair<GeneratorKind, int>, ThroughputRecord> by;
  for (const auto& r : records) by[{r.generator, r.length}] = r;
  bool counts = true;
  for (int len : lengths) {
    counts &= by[{GeneratorKind::Ar, len}].forward_calls == static_cast<std::size_t>(len);
    counts &= by[{GeneratorKind::Nar, len}].forward_calls == 1;
  }
  auto speedup = [&](int len) { return by[{GeneratorKind::Ar, len}].mean_ms / by[{GeneratorKind::Nar, len}].mean_ms; };
  const double ar_growth = by[{GeneratorKind::Ar, 128}].mean_ms / by[{GeneratorKind::Ar, 16}].mean_ms;
  // A 4x growth requirement less 30% measurement noise.
  const double growth_floor = 4.0 * 0.7;
  const double secs = since(start);
  const bool pass = counts && speedup(128) > speedup(16) && ar_growth >= growth_floor && secs < 600;
  return {pass, std::string("forward calls ") + (counts ? "exact" : "WRONG") + "; NAR speedup " + fmt(speedup(16)) +
                    "x @16 -> " + fmt(speedup(128)) + "x @128; AR(128)/AR(16) = " + fmt(ar_growth) + " >= " +
                    fmt(growth_floor) + "; " + fmt(secs, 0) + " s"};
}

// ---------------------------------------------------------------------------
// 5. Training throughput

Outcome training_throughput(const Settings& s) {
  const auto start = Clock::now();
  const SynthTask& task = long_task();
  const ModelConfig c = model_for(task.spec);
  const TrainState<float> state(ModelParams<float>::initialized(c, 51), AdamConfig{}, 51);
  const double d = s.seconds(45.0);
  const int content = task.spec.content_vocab_per_lang;
  const Corpus s16 = uniform_corpus(2000, 16, Lang::S, content, 52), t16 = uniform_corpus(2000, 16, Lang::T, content, 53);
  const Corpus s64 = uniform_corpus(2000, 64, Lang::S, content, 54), t64 = uniform_corpus(2000, 64, Lang::T, content, 55);
  auto rate = [&](StepKind k, const Corpus& a, const Corpus& b) {
    return bench_training_throughput(k, state, a, b, d, 32, 56).sequences_per_sec;
  };
  const double ebtd_long = rate(StepKind::Ebtd, task.train_s, task.train_t);
  const double bt_long = rate(StepKind::Bt, task.train_s, task.train_t);
  const double ebtd16 = rate(StepKind::Ebtd, s16, t16), ebtd64 = rate(StepKind::Ebtd, s64, t64);
  const double bt16 = rate(StepKind::Bt, s16, t16), bt64 = rate(StepKind::Bt, s64, t64);
  const double ratio = ebtd_long / bt_long;
  const double ebtd_keep = ebtd64 / ebtd16, bt_keep = bt64 / bt16;
  const double secs = since(start);
  const bool pass = ratio >= 3.0 && std::abs(1 - ebtd_keep) < std::abs(1 - bt_keep) && secs < 1200;
  return {pass, "[48,64]: EBTD " + fmt(ebtd_long, 1) + " seq/s vs BT " + fmt(bt_long, 1) + " seq/s, ratio " + fmt(ratio) +
                    " (need >= 3); 64/16 throughput ratio EBTD " + fmt(ebtd_keep, 3) + " vs BT " + fmt(bt_keep, 3) + "; " +
                    fmt(secs, 0) + " s"};
}

// ---------------------------------------------------------------------------
// 6 + 9. One QBT-Staged run on the substitution task with the copy penalty on.

struct StagedRun {
  RunResult result;
  ModelParams<float> final_params;
  std::optional<ModelParams<float>> ebt_params;
  double seconds = 0;
};

const StagedRun& default_staged_run(const Settings& s) {
  static std::optional<StagedRun> run;
  if (run) return *run;
  const SynthTask& task = default_task();
  const fs::path dir = s.out / "qbt_staged_default";
  fs::remove_all(dir);
  fs::create_directories(dir);
  TrainState<float> state(ModelParams<float>::initialized(model_for(task.spec), 1), AdamConfig{}, 1);
  // Warmup by steps, then EBT : EBTD : BT = 4 : 16 : 12 of the remaining time;
  // 300 s is reserved for warmup so the whole run fits in 60 minutes.
  StageSchedule schedule = qbt_staged_time_split(s.steps(5000), s.seconds(3300.0));
  MetricsSink sink(dir / "metrics.csv");
  RunOptions opt;
  opt.seed = 1;
  opt.penalty.enabled = true;
  opt.penalty.weight = 0.05;
  opt.checkpoint_dir = dir;
  opt.sink = &sink;
  const auto start = Clock::now();
  StagedRun r{run_qbt_staged(state, training_data(task), schedule, opt), state.params, std::nullopt, 0};
  r.seconds = since(start);
  if (auto ebt = stage_of(r.result, StageKind::Ebt)) r.ebt_params = load_checkpoint(ebt->checkpoint).params;
  save_checkpoint(dir / "final.ckpt", r.final_params);
  run = std::move(r);
  return *run;
}

Outcome umt_convergence(const Settings& s) {
  const StagedRun& run = default_staged_run(s);
  const auto v = evaluate_parallel(run.final_params, default_task().test, false, 500);
  const bool pass = v.mean_bleu() >= 70.0 && run.seconds <= s.seconds(3600.0);
  return {pass, "QBT-Staged AR test BLEU " + fmt(v.mean_bleu()) + " (s2t " + fmt(v.s2t.bleu.bleu) + ", t2s " +
                    fmt(v.t2s.bleu.bleu) + ") >= 70; run " + fmt(run.seconds / 60.0, 1) + " min"};
}

Outcome copy_penalty_behavior(const Settings& s) {
  // Analytic part: sharpen a distribution toward the copy token and check the
  // penalty falls as the copy NLL rises.
  const CopyPenaltyConfig cfg{true, 0.05, 0.1};
  const int vocab = 12, copy_id = 5;
  std::vector<std::pair<double, double>> curve;  // (nll, penalty)
  for (double margin = 8.0; margin >= -4.0; margin -= 0.25) {
    Mat<double> logits = Mat<double>::Zero(1, vocab);
    logits(0, copy_id) = margin;
    const double nll = cross_entropy<double>(logits, std::vector<int>{copy_id}, nullptr).loss;
    curve.emplace_back(nll, copy_penalty(nll, cfg));
  }
  bool decreasing = true;
  for (std::size_t i = 1; i < curve.size(); ++i)
    decreasing &= curve[i].first > curve[i - 1].first && curve[i].second < curve[i - 1].second;

  const StagedRun& run = default_staged_run(s);
  if (!run.ebt_params) return {false, "EBT stage produced no checkpoint"};
  const auto v = evaluate_parallel(*run.ebt_params, default_task().test, true, 500);
  const double rate = 0.5 * (v.s2t.copy_rate + v.t2s.copy_rate);
  return {decreasing && rate < 0.10, "EBT-stage NAR copy_rate " + fmt(rate, 4) + " < 0.10 (lambda 0.05); penalty " +
                                         (decreasing ? "strictly decreasing" : "NOT monotone") + " over " +
                                         std::to_string(curve.size()) + " near-copy distributions, NLL " +
                                         fmt(curve.front().first, 4) + ".." + fmt(curve.back().first, 2)};
}

// ---------------------------------------------------------------------------
// 7 + 8. Paired runs on the long-sequence variant.

struct PairedSeed {
  double qbt_bleu = 0, bt_bleu = 0;
  double self_ebtd = 0, self_bt = 0;
  double qbt_seconds = 0, bt_seconds = 0;
};

const std::vector<PairedSeed>& paired_runs(const Settings& s) {
  static std::optional<std::vector<PairedSeed>> runs;
  if (runs) return *runs;
  runs.emplace();
  const SynthTask& task = long_task();
  const TrainingData data = training_data(task);
  const ModelConfig c = model_for(task.spec);
  const double budget = s.seconds(600.0);
  const Corpus sources = head(task.test.source, 500);
  for (std::uint64_t seed : {1, 2, 3}) {
    PairedSeed r;
    auto options = [&](const fs::path& dir, MetricsSink& sink) {
      RunOptions o;
      o.seed = seed;
      o.checkpoint_dir = dir;
      o.sink = &sink;
      return o;
    };
    auto fresh_dir = [&](const std::string& name) {
      const fs::path dir = s.out / ("long_seed" + std::to_string(seed)) / name;
      fs::remove_all(dir);
      fs::create_directories(dir);
      return dir;
    };

    // QBT-Staged: warmup capped at 10% of the budget, the rest split 4 : 16 : 12.
    const fs::path qdir = fresh_dir("qbt_staged");
    TrainState<float> q(ModelParams<float>::initialized(c, seed), AdamConfig{}, seed);
    const double unit = 0.9 * budget / 32.0;
    StageSchedule qs = qbt_staged_schedule({5000, 0.1 * budget}, {0, 4 * unit}, {0, 16 * unit}, {0, 12 * unit});
    MetricsSink qsink(qdir / "metrics.csv");
    const RunResult qr = run_qbt_staged(q, data, qs, options(qdir, qsink));
    r.qbt_seconds = total_seconds(qr);
    save_checkpoint(qdir / "final.ckpt", q.params);
    r.qbt_bleu = test_bleu(q.params, task, false);

    // BT-only baseline: DAE pretraining then BT, same total budget.
    const fs::path bdir = fresh_dir("bt");
    TrainState<float> b(ModelParams<float>::initialized(c, seed), AdamConfig{}, seed);
    StageSchedule bs = bt_schedule({0, 0.75 * budget}, {0, 0.25 * budget});
    MetricsSink bsink(bdir / "metrics.csv");
    const RunResult br = run_schedule(b, data, bs, options(bdir, bsink));
    r.bt_seconds = total_seconds(br);
    save_checkpoint(bdir / "final.ckpt", b.params);
    r.bt_bleu = test_bleu(b.params, task, false);

    // Self-BLEU against the EBT-stage encoder's NAR outputs.
    const auto ebt = stage_of(qr, StageKind::Ebt), ebtd = stage_of(qr, StageKind::Ebtd);
    if (ebt && ebtd) {
      const auto encoder_out = translate_corpus(load_checkpoint(ebt->checkpoint).params, sources, true);
      const auto ebtd_out = translate_corpus(load_checkpoint(ebtd->checkpoint).params, sources, false);
      const auto bt_out = translate_corpus(b.params, sources, false);
      r.self_ebtd = self_bleu(encoder_out, ebtd_out).bleu;
      r.self_bt = self_bleu(encoder_out, bt_out).bleu;
    } else {
      r.self_ebtd = r.self_bt = std::nan("");
    }
    std::cerr << "  [long seed " << seed << "] QBT " << fmt(r.qbt_bleu) << " vs BT " << fmt(r.bt_bleu) << "; self-BLEU EBTD "
              << fmt(r.self_ebtd) << " vs BT " << fmt(r.self_bt) << "\n";
    runs->push_back(r);
  }
  return *runs;
}

Outcome qbt_vs_bt(const Settings& s) {
  const auto& runs = paired_runs(s);
  int wins = 0;
  std::string detail;
  double seconds = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    wins += runs[i].qbt_bleu >= runs[i].bt_bleu;
    seconds += runs[i].qbt_seconds + runs[i].bt_seconds;
    detail += "seed " + std::to_string(i + 1) + ": " + fmt(runs[i].qbt_bleu) + " vs " + fmt(runs[i].bt_bleu) + "; ";
  }
  return {wins >= 2 && seconds < 3 * 3600.0, "QBT-Staged vs BT-only test BLEU, " + detail + std::to_string(wins) +
                                                 "/3 seeds QBT >= BT (need 2); training " + fmt(seconds / 60.0, 1) + " min"};
}

Outcome self_bleu_trend(const Settings& s) {
  const auto& runs = paired_runs(s);
  int wins = 0;
  std::string detail;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    wins += runs[i].self_ebtd > runs[i].self_bt;
    detail += "seed " + std::to_string(i + 1) + ": " + fmt(runs[i].self_ebtd) + " vs " + fmt(runs[i].self_bt) + "; ";
  }
  return {wins >= 2, "self-BLEU vs EBT encoder, EBTD decoder vs BT-only decoder on 500 sources, " + detail +
                         std::to_string(wins) + "/3 seeds strictly higher (need 2)"};
}

// ---------------------------------------------------------------------------
// 10. BLEU oracle checks

Outcome bleu_oracles(const Settings&) {
  const double brevity = corpus_bleu({{4, 5, 6, 7}}, {{4, 5, 6, 7, 8}}).bleu;
  const double identity = corpus_bleu({{4, 5, 6, 7, 8}, {9, 10, 11, 12}}, {{4, 5, 6, 7, 8}, {9, 10, 11, 12}}).bleu;
  const double disjoint = corpus_bleu({{4, 5, 6, 7}}, {{8, 9, 10, 11}}).bleu;
  const bool pass = std::abs(brevity - 77.88) <= 0.01 && identity == 100.0 && disjoint == 0.0;
  return {pass, "brevity example " + fmt(brevity, 4) + " (77.88 +- 0.01), identity " + fmt(identity, 4) + ", disjoint " +
                    fmt(disjoint, 4)};
}

// ---------------------------------------------------------------------------
// 11. Ablation surface from a shared BT-converged checkpoint.

struct AblationRuns {
  double base_bleu = 0;
  std::map<std::string, double> final_bleu;
  std::map<std::string, std::size_t> metric_rows;
  std::vector<std::string> failures;
};

const AblationRuns& ablation_runs(const Settings& s) {
  static std::optional<AblationRuns> runs;
  if (runs) return *runs;
  runs.emplace();
  const SynthTask& task = default_task();
  const TrainingData data = training_data(task);
  const fs::path root = s.out / "ablation";
  fs::remove_all(root);
  fs::create_directories(root / "base");

  // DAE then BT until the wall-clock budget runs out.
  TrainState<float> base(ModelParams<float>::initialized(model_for(task.spec), 7), AdamConfig{}, 7);
  {
    MetricsSink sink(root / "base" / "metrics.csv");
    RunOptions o;
    o.seed = 7;
    o.sink = &sink;
    o.checkpoint_dir = root / "base";
    run_schedule(base, data, bt_schedule({0, s.seconds(480.0)}, {0, s.seconds(120.0)}), o);
  }
  const fs::path base_ckpt = root / "base" / "final.ckpt";
  save_checkpoint(base_ckpt, base.params);
  runs->base_bleu = test_bleu(base.params, task, false);

  const std::vector<std::string> subsets{"bt", "ebt", "ebtd", "ebt+ebtd", "bt+ebtd", "bt+ebt", "ebt+ebtd+bt"};
  for (const auto& name : subsets) {
    std::string dirname = name;
    std::replace(dirname.begin(), dirname.end(), '+', '_');
    const fs::path dir = root / dirname;
    fs::create_directories(dir);
    try {
      TrainState<float> st(load_checkpoint(base_ckpt).params, AdamConfig{}, 8);
      MetricsSink sink(dir / "metrics.csv");
      RunOptions o;
      o.seed = 8;
      o.sink = &sink;
      EvalConfig eval;
      eval.every = 100;
      eval.restore_best = false;
      const RunResult r = run_qbt_synced(st, data, {s.steps(500), 0}, parse_step_subset(name), o, eval);
      save_checkpoint(dir / "final.ckpt", st.params);
      runs->final_bleu[name] = test_bleu(st.params, task, false);
      runs->metric_rows[name] = r.metrics.size();
    } catch (const std::exception& e) {
      runs->failures.push_back(name + ": " + e.what());
    }
  }
  return *runs;
}

Outcome ablation_surface(const Settings& s) {
  const AblationRuns& r = ablation_runs(s);
  std::string detail = "base " + fmt(r.base_bleu) + "; ";
  bool complete = r.failures.empty() && r.final_bleu.size() == 7;
  for (const auto& [name, bleu] : r.final_bleu) {
    detail += name + " " + fmt(bleu) + ", ";
    complete &= r.metric_rows.at(name) > 0;
  }
  for (const auto& f : r.failures) detail += "FAILED " + f + "; ";
  bool trend = false;
  if (r.final_bleu.size() == 7) {
    const double full = r.final_bleu.at("ebt+ebtd+bt");
    trend = full >= r.final_bleu.at("ebt") && full >= r.final_bleu.at("ebtd");
  }
  return {complete && trend, detail + "full synced >= EBT-only and EBTD-only: " + (trend ? "yes" : "no")};
}

// Supplementary end-to-end checks reported alongside the criteria.
std::vector<std::pair<std::string, Outcome>> supplementary(const Settings& s, const std::set<int>& ran) {
  std::vector<std::pair<std::string, Outcome>> out;
  if (ran.count(6) || ran.count(9)) {
    const StagedRun& run = default_staged_run(s);
    if (run.ebt_params) {
      const double ar = test_bleu(*run.ebt_params, default_task(), false);
      const double nar = test_bleu(*run.ebt_params, default_task(), true);
      out.push_back({"EBT-converged NAR BLEU within 10 of AR", {std::abs(nar - ar) <= 10.0, "NAR " + fmt(nar) + ", AR " + fmt(ar)}});
    }
  }
  if (ran.count(11)) {
    const AblationRuns& r = ablation_runs(s);
    out.push_back({"DAE+BT reaches nonzero BLEU", {r.base_bleu > 0, "test BLEU " + fmt(r.base_bleu)}});
    if (r.final_bleu.count("ebt+ebtd+bt")) {
      const double full = r.final_bleu.at("ebt+ebtd+bt");
      out.push_back({"QBT-Synced on a converged model loses <= 1 BLEU",
                     {full >= r.base_bleu - 1.0, fmt(r.base_bleu) + " -> " + fmt(full)}});
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qbt acceptance runner"};
  Settings settings;
  std::string only;
  std::string out = settings.out.string();
  app.add_option("--only", only, "comma-separated criterion numbers (default: all)");
  app.add_option("--out", out, "directory for run artifacts");
  app.add_flag("--quick", settings.quick, "shrink every budget 20x (smoke test; not valid for acceptance)");
  CLI11_PARSE(app, argc, argv);
  settings.out = out;
  if (settings.quick) settings.scale = 0.05;
  fs::create_directories(settings.out);

  const std::vector<std::pair<std::string, std::function<Outcome(const Settings&)>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"tying and freezing invariants", tying_and_freezing},
      {"NAR structural invariants", nar_structure},
      {"generation scaling", generation_scaling},
      {"training throughput", training_throughput},
      {"UMT convergence", umt_convergence},
      {"QBT vs BT trend", qbt_vs_bt},
      {"self-BLEU trend", self_bleu_trend},
      {"copy-penalty behavior", copy_penalty_behavior},
      {"BLEU oracle checks", bleu_oracles},
      {"ablation surface", ablation_surface},
  };

  std::set<int> selected;
  if (only.empty()) {
    for (int i = 1; i <= static_cast<int>(criteria.size()); ++i) selected.insert(i);
  } else {
    std::stringstream ss(only);
    for (std::string item; std::getline(ss, item, ',');) {
      int n = 0;
      try {
        n = std::stoi(item);
      } catch (const std::exception&) {
        n = 0;
      }
      if (n < 1 || n > static_cast<int>(criteria.size())) {
        std::cerr << "acceptance: bad criterion '" << item << "'\n";
        return 1;
      }
      selected.insert(n);
    }
  }
  if (settings.quick) std::cout << "QUICK MODE: budgets scaled by " << settings.scale << "; results are not valid for acceptance\n";

  int failed = 0;
  for (int n : selected) {
    const auto& [name, fn] = criteria[n - 1];
    const auto start = Clock::now();
    Outcome o;
    try {
      o = fn(settings);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << std::setw(2) << n << "  " << name << ": " << o.detail
              << "  [" << fmt(since(start), 1) << " s]" << std::endl;
  }
  for (const auto& [name, o] : supplementary(settings, selected))
    std::cout << (o.pass ? "PASS" : "FAIL") << "  supplementary  " << name << ": " << o.detail << std::endl;
  std::cout << (selected.size() - failed) << "/" << selected.size() << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
