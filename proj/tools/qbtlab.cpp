// qbtlab: data generation, training schedules, evaluation, self-BLEU and
// benchmarks for the synthetic cipher task.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "qbt/bench.hpp"
#include "qbt/bleu.hpp"
#include "qbt/checkpoint.hpp"
#include "qbt/run_config.hpp"

namespace fs = std::filesystem;
using namespace qbt;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

std::atomic<bool> g_interrupted{false};

std::string hex(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

std::uint64_t file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  Fnv1a h;
  h.update(buffer.str());
  return h.digest();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const Json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text(path, j.dump(2) + "\n");
}

// Options shared by every command that reads a run config.
struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", path, "INI run config (defaults apply to missing keys)");
    cmd->add_option("--set", overrides, "override a config key: section.key=value")->take_all();
  }

  RunConfig load() const {
    RunConfig c = path.empty() ? RunConfig{} : load_run_config(path);
    for (const auto& o : overrides) apply_override(c, o);
    c.sync_vocab();
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Data directories

const char* const kSplits[] = {"train", "valid", "test"};

std::string corpus_file(const std::string& split, Lang lang) { return split + "." + std::string(to_string(lang)); }

std::string task_ini(const RunConfig& c) {
  const std::string all = resolved_ini(c);
  return all.substr(0, all.find("\n[model]")) + "\n";
}

struct DataDir {
  CipherTaskSpec spec;
  SynthTask task;  // corpora as read back from disk; cipher rebuilt from the spec
};

DataDir load_data_dir(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw InvalidInput("no manifest.json in " + dir.string() + " (run gen-data first)");
  std::ifstream in(manifest_path);
  const Json manifest = Json::parse(in);
  const RunConfig c = load_run_config((dir / "task.ini").string());
  if (hex(c.task.hash()) != manifest.at("spec_hash").get<std::string>())
    throw InvalidInput("task.ini does not match the manifest spec hash in " + dir.string());
  DataDir d{c.task, {}};
  d.task.spec = c.task;
  d.task.cipher = Cipher(c.task);
  auto read = [&](const std::string& split, Lang lang, Split kind) {
    return read_corpus((dir / corpus_file(split, lang)).string(), lang, kind);
  };
  d.task.train_s = read("train", Lang::S, Split::Train);
  d.task.train_t = read("train", Lang::T, Split::Train);
  d.task.valid = {read("valid", Lang::S, Split::Valid), read("valid", Lang::T, Split::Valid)};
  d.task.test = {read("test", Lang::S, Split::Test), read("test", Lang::T, Split::Test)};
  return d;
}

fs::path default_data_dir(const RunConfig& c) { return fs::path(c.output_dir) / "data"; }

// ---------------------------------------------------------------------------
// gen-data

int cmd_gen_data(const ConfigArgs& args, const std::string& out_arg, bool force) {
  RunConfig c = args.load();
  c.task.seed = seed_from_env(c.task.seed);
  c.validate();
  const fs::path out = out_arg.empty() ? default_data_dir(c) : fs::path(out_arg);
  if (fs::exists(out) && !fs::is_empty(out) && !force) {
    std::cerr << "qbtlab: refusing to write into non-empty directory " << out << " (use --force)\n";
    return kExitUsage;
  }
  fs::create_directories(out);
  const SynthTask task = generate_task(c.task);

  const Corpus* corpora[3][2] = {{&task.train_s, &task.train_t},
                                 {&task.valid.source, &task.valid.target},
                                 {&task.test.source, &task.test.target}};
  Json files = Json::object();
  for (int split = 0; split < 3; ++split)
    for (Lang lang : {Lang::S, Lang::T}) {
      const std::string name = corpus_file(kSplits[split], lang);
      write_corpus((out / name).string(), *corpora[split][index(lang)]);
      files[name] = {{"sentences", corpora[split][index(lang)]->sentences.size()}};
    }

  std::ostringstream vocab;
  for (int id = 0; id < task.vocab().size(); ++id) vocab << id << '\t' << task.vocab().tokens()[id] << '\n';
  write_text(out / "vocab.txt", vocab.str());

  // Latent index, source id, target id; then the per-width reorder tables.
  std::ostringstream perm;
  perm << "latent\ts_id\tt_id\n";
  const IdRange s = task.vocab().range(Lang::S), t = task.vocab().range(Lang::T);
  for (int k = 0; k < s.size(); ++k) perm << k << '\t' << s.begin + k << '\t' << t.begin + task.cipher.forward()[k] << '\n';
  write_text(out / "permutation.tsv", perm.str());
  std::ostringstream windows;
  windows << "width\torder\n";
  for (int r = 1; r <= task.cipher.reorder_window(); ++r) {
    windows << r << '\t';
    for (std::size_t j = 0; j < task.cipher.window_orders()[r].size(); ++j)
      windows << (j ? " " : "") << task.cipher.window_orders()[r][j];
    windows << '\n';
  }
  write_text(out / "window_orders.tsv", windows.str());
  write_text(out / "task.ini", task_ini(c));
  write_text(out / "config.ini", resolved_ini(c));

  for (const char* extra : {"vocab.txt", "permutation.tsv", "window_orders.tsv", "task.ini"}) files[extra] = Json::object();
  for (auto& [name, entry] : files.items()) entry["fnv1a"] = hex(file_hash(out / name));
  write_json(out / "manifest.json", {{"spec_hash", hex(c.task.hash())},
                                     {"vocab_size", task.vocab().size()},
                                     {"content_vocab_per_lang", c.task.content_vocab_per_lang},
                                     {"files", files}});
  std::cout << "wrote " << out.string() << " (spec hash " << hex(c.task.hash()) << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct Schedule {
  std::string name;
  StageSchedule stages;
  bool needs_init = false;
};

Schedule resolve_schedule(const std::string& name, const RunConfig& c) {
  const TrainingConfig& t = c.training;
  Schedule s{name, {}, false};
  if (name == "bt") {
    s.stages = bt_schedule(t.bt_only, t.dae);
  } else if (name == "qbt-staged") {
    s.stages = qbt_staged_schedule(t.warmup, t.ebt, t.ebtd, t.bt, t.dae);
  } else if (name == "qbt-synced") {
    s.stages = qbt_synced_schedule(t.synced);
    s.needs_init = true;
  } else if (name.rfind("ablation:", 0) == 0) {
    s.stages = qbt_synced_schedule(t.synced, parse_step_subset(name.substr(9)));
    s.needs_init = true;
  } else {
    throw ConfigError("unknown schedule '" + name + "' (bt, qbt-staged, qbt-synced, ablation:<subset>)");
  }
  s.stages.direction = t.direction;
  s.stages.eval = c.eval;
  return s;
}

std::string schedule_dir_name(const std::string& name) {
  std::string out = name;
  for (auto& ch : out)
    if (ch == ':' || ch == '+') ch = '_';
  return out;
}

Json stage_json(const StageResult& s) {
  auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
  return {{"stage", std::string(to_string(s.kind))},
          {"steps", s.steps},
          {"seconds", s.seconds},
          {"sequences", s.sequences},
          {"tokens", s.tokens},
          {"best_valid_bleu", opt(s.best_valid_bleu)},
          {"final_valid_bleu", opt(s.final_valid_bleu)},
          {"early_stopped", s.early_stopped},
          {"checkpoint", s.checkpoint.filename().string()}};
}

struct TrainArgs {
  std::string schedule, data, out, init;
  bool resume = false, force = false;
};

int cmd_train(const ConfigArgs& args, const TrainArgs& a) {
  RunConfig c = args.load();
  c.training.seed = seed_from_env(c.training.seed);
  const Schedule schedule = resolve_schedule(a.schedule, c);
  if (schedule.needs_init && a.init.empty() && !a.resume) {
    std::cerr << "qbtlab: schedule " << a.schedule << " needs --init <checkpoint> (a translation-capable model)\n";
    return kExitUsage;
  }
  const fs::path out = a.out.empty() ? fs::path(c.output_dir) / schedule_dir_name(a.schedule) : fs::path(a.out);
  const auto latest = latest_checkpoint(out);
  if (latest && !a.resume && !a.force) {
    std::cerr << "qbtlab: " << out << " already holds checkpoints (use --resume to continue or --force to restart)\n";
    return kExitUsage;
  }
  if (a.resume && !latest) {
    std::cerr << "qbtlab: --resume given but no checkpoint found in " << out << "\n";
    return kExitUsage;
  }

  const DataDir data = load_data_dir(a.data.empty() ? default_data_dir(c) : fs::path(a.data));
  if (data.spec.hash() != c.task.hash())
    throw ConfigError("the config's [task] section does not match the data directory (regenerate data or fix the config)");

  fs::create_directories(out);
  write_text(out / "config.ini", resolved_ini(c));

  TrainState<float> state(ModelParams<float>::initialized(c.model, c.training.seed), c.training.adam, c.training.seed);
  std::optional<ResumePoint> resume;
  if (a.resume) {
    resume = ScheduleRunner::restore(state, load_checkpoint(*latest, c.model));
    std::cout << "resuming from " << latest->filename().string() << "\n";
  } else if (!a.init.empty()) {
    state.params = load_checkpoint(a.init, c.model).params;
  }

  MetricsSink sink(out / "metrics.csv", a.resume);
  RunOptions options;
  options.seed = c.training.seed;
  options.batch_size = c.training.batch_size;
  options.penalty = c.training.penalty;
  options.noise = c.training.noise;
  options.checkpoint_dir = out;
  options.checkpoint_every = c.training.checkpoint_every;
  options.sink = &sink;
  options.on_step = [](const Stage&, const StepRecord&) { return !g_interrupted.load(); };

  const TrainingData td = training_data(data.task);
  const RunResult result = run_schedule(state, td, schedule.stages, options, resume);
  if (g_interrupted) {
    std::cerr << "qbtlab: interrupted; resume with --resume\n";
    return kExitRuntime;
  }
  save_checkpoint(out / "final.ckpt", state.params);

  Json stages = Json::array();
  for (const auto& s : result.stages) stages.push_back(stage_json(s));
  write_json(out / "summary.json", {{"schedule", a.schedule}, {"seed", c.training.seed}, {"stages", stages}});
  for (const auto& s : result.stages)
    std::cout << to_string(s.kind) << ": " << s.steps << " steps, " << std::fixed << std::setprecision(1) << s.seconds
              << " s, best valid BLEU " << (s.best_valid_bleu ? std::to_string(*s.best_valid_bleu) : "n/a") << "\n";
  std::cout << "final checkpoint " << (out / "final.ckpt").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval / self-bleu

Json bleu_json(const BleuReport& r) {
  return {{"bleu", r.bleu},
          {"precisions", r.precisions},
          {"matches", r.matches},
          {"totals", r.totals},
          {"brevity_penalty", r.brevity_penalty},
          {"hyp_tokens", r.hyp_tokens},
          {"ref_tokens", r.ref_tokens}};
}

void check_vocab(const ModelConfig& m, const CipherTaskSpec& spec, const std::string& what) {
  const int expected = kNumSpecials + 2 * spec.content_vocab_per_lang;
  if (m.vocab_size != expected)
    throw InvalidInput(what + ": vocabulary size " + std::to_string(m.vocab_size) + " does not match the task (" +
                       std::to_string(expected) + ")");
}

const ParallelSet& split_set(const SynthTask& task, const std::string& split) {
  if (split == "test") return task.test;
  if (split == "valid") return task.valid;
  throw ConfigError("split must be test or valid");
}

struct EvalArgs {
  std::string checkpoint, data, split = "test", generator = "ar", direction = "both", out, hyp_prefix;
  int max_sentences = 0;
};

int cmd_eval(const ConfigArgs& args, const EvalArgs& a) {
  const RunConfig c = args.load();
  const DataDir data = load_data_dir(a.data.empty() ? default_data_dir(c) : fs::path(a.data));
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  check_vocab(ck.params.config, data.spec, "eval");
  const bool nar = a.generator == "nar";
  const ParallelSet& set = split_set(data.task, a.split);

  Json directions = Json::object();
  double sum = 0.0;
  int count = 0;
  for (Lang from : {Lang::S, Lang::T}) {
    const std::string name = direction_name(from);
    if (a.direction != "both" && a.direction != name) continue;
    const int n = a.max_sentences > 0 ? a.max_sentences : static_cast<int>(set.source.sentences.size());
    const Corpus src = head(set.side(from), n), ref = head(set.side(other(from)), n);
    const auto hyps = translate_corpus(ck.params, src, nar);
    const BleuReport report = corpus_bleu(hyps, ref.sentences);
    Json j = bleu_json(report);
    j["copy_rate"] = copy_rate(hyps, src.sentences);
    j["sentences"] = hyps.size();
    directions[name] = j;
    sum += report.bleu;
    ++count;
    if (!a.hyp_prefix.empty()) write_corpus(a.hyp_prefix + "." + name, Corpus{hyps, other(from), Split::Test});
  }
  const Json report{{"checkpoint", a.checkpoint},
                    {"split", a.split},
                    {"generator", a.generator},
                    {"directions", directions},
                    {"mean_bleu", count ? sum / count : 0.0},
                    {"config", resolved_ini(c)}};
  Json shown = report;
  shown.erase("config");
  std::cout << shown.dump(2) << "\n";
  if (!a.out.empty()) {
    write_json(a.out, report);
    // Flat per-direction rows next to the JSON report.
    std::ofstream csv(fs::path(a.out).parent_path() / "bleu_report.csv");
    csv << "direction,generator,bleu,p1,p2,p3,p4,brevity_penalty,hyp_tokens,ref_tokens,copy_rate,sentences\n"
        << std::setprecision(8);
    for (const auto& [name, d] : directions.items())
      csv << name << ',' << a.generator << ',' << d["bleu"].get<double>() << ',' << d["precisions"][0].get<double>() << ','
          << d["precisions"][1].get<double>() << ',' << d["precisions"][2].get<double>() << ','
          << d["precisions"][3].get<double>() << ',' << d["brevity_penalty"].get<double>() << ','
          << d["hyp_tokens"].get<std::size_t>() << ',' << d["ref_tokens"].get<std::size_t>() << ','
          << d["copy_rate"].get<double>() << ',' << d["sentences"].get<std::size_t>() << '\n';
  }
  return 0;
}

struct SelfBleuArgs {
  std::string checkpoint_a, checkpoint_b, source, lang = "s", gen_a = "nar", gen_b = "ar", data, out;
};

int cmd_self_bleu(const ConfigArgs& args, const SelfBleuArgs& a) {
  const RunConfig c = args.load();
  const Lang from = parse_lang(a.lang);
  const Corpus src = read_corpus(a.source, from, Split::Test);
  for (const auto& s : src.sentences)
    if (s.empty()) throw InvalidInput("self-bleu: empty source sentence in " + a.source);

  std::optional<DataDir> data;
  auto load_data = [&]() -> const DataDir& {
    if (!data) data = load_data_dir(a.data.empty() ? default_data_dir(c) : fs::path(a.data));
    return *data;
  };
  auto outputs = [&](const std::string& path, const std::string& gen, const char* side) {
    if (gen == "oracle") {
      const Cipher& cipher = load_data().task.cipher;
      std::vector<Sequence> out;
      for (const auto& s : src.sentences) out.push_back(cipher.translate(s, from));
      return out;
    }
    if (gen != "ar" && gen != "nar") throw ConfigError(std::string("--gen-") + side + " must be ar, nar or oracle");
    if (path.empty()) throw ConfigError(std::string("--checkpoint-") + side + " is required for generator " + gen);
    const Checkpoint ck = load_checkpoint(path);
    const int content = (ck.params.config.vocab_size - kNumSpecials) / 2;
    if (!corpus_in_language(src, Vocab(content)))
      throw InvalidInput(std::string("self-bleu: source ids do not fit the vocabulary of checkpoint ") + side);
    return translate_corpus(ck.params, src, gen == "nar");
  };
  // Both sides must agree on the vocabulary before any decoding happens.
  if (!a.checkpoint_a.empty() && !a.checkpoint_b.empty() &&
      load_checkpoint(a.checkpoint_a).params.config.vocab_size != load_checkpoint(a.checkpoint_b).params.config.vocab_size)
    throw InvalidInput("self-bleu: checkpoints have different vocabularies");

  const auto out_a = outputs(a.checkpoint_a, a.gen_a, "a");
  const auto out_b = outputs(a.checkpoint_b.empty() ? a.checkpoint_a : a.checkpoint_b, a.gen_b, "b");
  Json report = bleu_json(self_bleu(out_b, out_a));
  report["gen_a"] = a.gen_a;
  report["gen_b"] = a.gen_b;
  report["sentences"] = src.sentences.size();
  Json shown = report;
  report["config"] = resolved_ini(c);
  std::cout << shown.dump(2) << "\n";
  if (!a.out.empty()) write_json(a.out, report);
  return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
  std::string checkpoint, data, out;
  std::vector<int> lengths{16, 32, 64, 128};
  int batch_size = 32, reps = 5;
  double train_seconds = 10.0;
  std::vector<std::string> train_steps{"ebt", "ebtd", "bt"};
};

StepKind parse_step_kind(const std::string& s) {
  for (StepKind k : {StepKind::Warmup, StepKind::Dae, StepKind::Ebt, StepKind::Ebtd, StepKind::Bt}) {
    std::string name(to_string(k));
    for (auto& ch : name) ch = static_cast<char>(std::tolower(ch));
    if (name == s) return k;
  }
  throw ConfigError("unknown step kind '" + s + "'");
}

int cmd_bench(const ConfigArgs& args, const BenchArgs& a) {
  Eigen::setNbThreads(1);
  RunConfig c = args.load();
  c.training.seed = seed_from_env(c.training.seed);
  ModelParams<float> params = a.checkpoint.empty() ? ModelParams<float>::initialized(c.model, c.training.seed)
                                                   : load_checkpoint(a.checkpoint).params;
  const fs::path out = a.out.empty() ? fs::path(c.output_dir) / "bench" : fs::path(a.out);
  fs::create_directories(out);
  write_text(out / "config.ini", resolved_ini(c));

  const auto generation = bench_generation(params, a.lengths, a.batch_size, a.reps, c.training.seed);
  write_throughput_csv((out / "throughput.csv").string(), generation);

  std::vector<TrainingThroughput> training;
  if (a.train_seconds > 0 && !a.train_steps.empty()) {
    const fs::path data_dir = a.data.empty() ? default_data_dir(c) : fs::path(a.data);
    const SynthTask task = fs::exists(data_dir / "manifest.json") ? load_data_dir(data_dir).task : generate_task(c.task);
    check_vocab(params.config, task.spec, "bench");
    const TrainState<float> state(params, c.training.adam, c.training.seed);
    for (const auto& name : a.train_steps)
      training.push_back(bench_training_throughput(parse_step_kind(name), state, task.train_s, task.train_t, a.train_seconds,
                                                   a.batch_size, c.training.seed));
    std::ofstream csv(out / "training_throughput.csv");
    csv << "step,steps,sequences,tokens,seconds,sequences_per_sec,tokens_per_sec\n" << std::setprecision(6);
    for (const auto& r : training)
      csv << to_string(r.kind) << ',' << r.steps << ',' << r.sequences << ',' << r.tokens << ',' << r.seconds << ','
          << r.sequences_per_sec << ',' << r.tokens_per_sec << '\n';
  }

  Json j{{"generation", Json::array()}, {"training", Json::array()}};
  for (const auto& r : generation) j["generation"].push_back(to_json(r));
  for (const auto& r : training) j["training"].push_back(to_json(r));
  write_json(out / "bench.json", j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qbtlab: unsupervised translation experiments on a synthetic cipher task"};
  app.require_subcommand(1);

  ConfigArgs config;

  auto* gen = app.add_subcommand("gen-data", "generate corpora, vocabulary, cipher tables and manifest");
  config.attach(gen);
  std::string gen_out;
  bool gen_force = false;
  gen->add_option("-o,--out", gen_out, "output directory (default <output.dir>/data)");
  gen->add_flag("--force", gen_force, "write into a non-empty directory");

  auto* train = app.add_subcommand("train", "run a training schedule");
  config.attach(train);
  TrainArgs ta;
  train->add_option("--schedule", ta.schedule, "bt | qbt-staged | qbt-synced | ablation:<ebt+ebtd+bt subset>")->required();
  train->add_option("--data", ta.data, "data directory (default <output.dir>/data)");
  train->add_option("-o,--out", ta.out, "run directory (default <output.dir>/<schedule>)");
  train->add_option("--init", ta.init, "initial checkpoint (required for qbt-synced and ablations)");
  train->add_flag("--resume", ta.resume, "continue from the latest checkpoint in the run directory");
  train->add_flag("--force", ta.force, "start over even if the run directory holds checkpoints");

  auto* eval = app.add_subcommand("eval", "score a checkpoint against oracle references");
  config.attach(eval);
  EvalArgs ea;
  eval->add_option("--checkpoint", ea.checkpoint, "checkpoint to evaluate")->required();
  eval->add_option("--data", ea.data, "data directory (default <output.dir>/data)");
  eval->add_option("--split", ea.split, "test or valid")->check(CLI::IsMember({"test", "valid"}));
  eval->add_option("--generator", ea.generator, "ar (greedy decoder) or nar (encoder)")->check(CLI::IsMember({"ar", "nar"}));
  eval->add_option("--direction", ea.direction, "s2t, t2s or both")->check(CLI::IsMember({"s2t", "t2s", "both"}));
  eval->add_option("--max-sentences", ea.max_sentences, "score only the first N pairs (0: all)");
  eval->add_option("--out", ea.out, "also write the JSON report here (bleu_report.csv goes alongside)");
  eval->add_option("--hyp-prefix", ea.hyp_prefix, "write hypotheses to <prefix>.s2t / <prefix>.t2s");

  auto* bench = app.add_subcommand("bench", "single-threaded generation and training throughput");
  config.attach(bench);
  BenchArgs ba;
  bench->add_option("--checkpoint", ba.checkpoint, "checkpoint (default: freshly initialized model)");
  bench->add_option("--data", ba.data, "corpora for training throughput (default <output.dir>/data, else generated)");
  bench->add_option("-o,--out", ba.out, "output directory (default <output.dir>/bench)");
  bench->add_option("--lengths", ba.lengths, "sequence lengths")->delimiter(',');
  bench->add_option("--batch-size", ba.batch_size, "sentences per batch")->check(CLI::PositiveNumber);
  bench->add_option("--reps", ba.reps, "timed repetitions per bucket (>= 5)")->check(CLI::Range(5, 1000000));
  bench->add_option("--train-seconds", ba.train_seconds, "seconds per training-step benchmark (0 skips it)");
  bench->add_option("--train-steps", ba.train_steps, "step kinds to time")->delimiter(',');

  auto* sb = app.add_subcommand("self-bleu", "BLEU between the outputs of two generators on the same sources");
  config.attach(sb);
  SelfBleuArgs sa;
  sb->add_option("--checkpoint-a", sa.checkpoint_a, "model for side a");
  sb->add_option("--checkpoint-b", sa.checkpoint_b, "model for side b (default: same as a)");
  sb->add_option("--source", sa.source, "source corpus file")->required();
  sb->add_option("--lang", sa.lang, "language of the source corpus")->check(CLI::IsMember({"s", "t"}));
  sb->add_option("--gen-a", sa.gen_a, "ar, nar or oracle (the hypothesis side)");
  sb->add_option("--gen-b", sa.gen_b, "ar, nar or oracle (the reference side)");
  sb->add_option("--data", sa.data, "data directory, needed for the oracle generator");
  sb->add_option("--out", sa.out, "also write the JSON report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  std::signal(SIGINT, [](int) { g_interrupted = true; });
  std::signal(SIGTERM, [](int) { g_interrupted = true; });

  try {
    if (*gen) return cmd_gen_data(config, gen_out, gen_force);
    if (*train) return cmd_train(config, ta);
    if (*eval) return cmd_eval(config, ea);
    if (*bench) return cmd_bench(config, ba);
    if (*sb) return cmd_self_bleu(config, sa);
  } catch (const ConfigError& e) {
    std::cerr << "qbtlab: configuration error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "qbtlab: numerical failure: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "qbtlab: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
