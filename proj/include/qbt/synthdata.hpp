#pragma once

// Paired synthetic languages related by a hidden cipher.
//
// A latent sentence is a sequence of latent token indices in [0, V). The
// source language renders latent index k as id `s_begin + k`; the target
// language renders it as `t_begin + permutation[k]` and then reorders tokens
// inside non-overlapping windows with a fixed per-window-size order. The
// exact inverse of that rendering is the oracle used for evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "qbt/core.hpp"

namespace qbt {

constexpr int kPad = 0;
constexpr int kBos = 1;
constexpr int kEos = 2;
constexpr int kUnk = 3;
constexpr int kNumSpecials = 4;

struct IdRange {
  int begin = 0;
  int end = 0;  // exclusive
  bool contains(int id) const { return id >= begin && id < end; }
  int size() const { return end - begin; }
};

class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(int content_per_lang) : content_per_lang_(content_per_lang) {
    if (content_per_lang <= 0) throw ConfigError("content_vocab_per_lang must be positive");
    tokens_ = {"<pad>", "<s>", "</s>", "<unk>"};
    for (int lang = 0; lang < 2; ++lang) {
      const char prefix = lang == 0 ? 's' : 't';
      for (int k = 0; k < content_per_lang; ++k) tokens_.push_back(prefix + std::to_string(k));
    }
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  int content_per_lang() const { return content_per_lang_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  IdRange range(Lang lang) const {
    const int begin = kNumSpecials + index(lang) * content_per_lang_;
    return {begin, begin + content_per_lang_};
  }

  static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

  std::optional<Lang> language_of(int id) const {
    if (range(Lang::S).contains(id)) return Lang::S;
    if (range(Lang::T).contains(id)) return Lang::T;
    return std::nullopt;
  }

 private:
  int content_per_lang_ = 0;
  std::vector<std::string> tokens_;
};

enum class PermutationKind { Random, Identity };

// How latent sentences are drawn. See `sample_latent`.
enum class LatentProcess { Uniform, Zipf };

inline std::string_view to_string(PermutationKind kind) {
  return kind == PermutationKind::Random ? "random" : "identity";
}
inline std::string_view to_string(LatentProcess process) {
  switch (process) {
    case LatentProcess::Uniform: return "uniform";
    case LatentProcess::Zipf: return "zipf";
  }
  return "?";
}

inline PermutationKind parse_permutation_kind(std::string_view text) {
  if (text == "random") return PermutationKind::Random;
  if (text == "identity") return PermutationKind::Identity;
  throw ConfigError("unknown permutation kind '" + std::string(text) + "'");
}
inline LatentProcess parse_latent_process(std::string_view text) {
  if (text == "uniform") return LatentProcess::Uniform;
  if (text == "zipf") return LatentProcess::Zipf;
  throw ConfigError("unknown latent process '" + std::string(text) + "'");
}

struct CipherTaskSpec {
  std::uint64_t seed = 1;
  int content_vocab_per_lang = 200;
  PermutationKind permutation = PermutationKind::Random;
  int reorder_window = 1;
  int min_len = 4;
  int max_len = 20;
  int corpus_size_per_lang = 20000;
  int valid_size = 500;
  int test_size = 500;
  LatentProcess latent = LatentProcess::Zipf;
  double zipf_exponent = 1.2;

  void validate() const {
    if (content_vocab_per_lang < 1) throw ConfigError("content_vocab_per_lang must be >= 1");
    if (reorder_window < 1) throw ConfigError("reorder_window must be >= 1");
    if (min_len < 1 || max_len < min_len) throw ConfigError("length range must satisfy 1 <= min_len <= max_len");
    if (corpus_size_per_lang < 1) throw ConfigError("corpus_size_per_lang must be >= 1");
    if (valid_size < 0 || test_size < 0) throw ConfigError("valid/test sizes must be >= 0");
    if (zipf_exponent < 0) throw ConfigError("zipf_exponent must be >= 0");
    // Every split must be able to hold distinct latent sentences.
    const double needed = 2.0 * corpus_size_per_lang + valid_size + test_size;
    double capacity = 0;
    for (int len = min_len; len <= max_len && capacity < needed; ++len)
      capacity += std::pow(static_cast<double>(content_vocab_per_lang), len);
    if (capacity < 4.0 * needed)
      throw ConfigError("vocabulary too small to draw " + std::to_string(static_cast<long long>(needed)) +
                        " distinct sentences of the requested lengths");
  }

  // Stable fingerprint over every field that influences generation.
  std::uint64_t hash() const {
    Fnv1a h;
    h.update_value(seed);
    h.update_value(content_vocab_per_lang);
    h.update(to_string(permutation));
    h.update_value(reorder_window);
    h.update_value(min_len);
    h.update_value(max_len);
    h.update_value(corpus_size_per_lang);
    h.update_value(valid_size);
    h.update_value(test_size);
    h.update(to_string(latent));
    h.update_value(zipf_exponent);
    return h.digest();
  }
};

enum class Split { Train, Valid, Test };

inline std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

struct Corpus {
  std::vector<Sequence> sentences;
  Lang language = Lang::S;
  Split split = Split::Train;

  std::size_t size() const { return sentences.size(); }
  bool empty() const { return sentences.empty(); }
  std::size_t token_count() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.size();
    return n;
  }
};

// Aligned (source, reference) pairs; used for validation and test.
struct ParallelSet {
  Corpus source;  // language S
  Corpus target;  // language T, oracle translations of `source`

  const Corpus& side(Lang lang) const { return lang == Lang::S ? source : target; }
};

// The materialized hidden mapping between the two languages.
class Cipher {
 public:
  Cipher() = default;

  explicit Cipher(const CipherTaskSpec& spec) : vocab_(spec.content_vocab_per_lang), window_(spec.reorder_window) {
    const int v = spec.content_vocab_per_lang;
    forward_.resize(v);
    std::iota(forward_.begin(), forward_.end(), 0);
    if (spec.permutation == PermutationKind::Random) {
      Rng rng(stream_seed(spec.seed, 0x5045524dULL));
      std::shuffle(forward_.begin(), forward_.end(), rng);
    }
    inverse_.resize(v);
    for (int k = 0; k < v; ++k) inverse_[forward_[k]] = k;

    Rng rng(stream_seed(spec.seed, 0x57494e44ULL));
    window_orders_.resize(window_ + 1);
    for (int r = 1; r <= window_; ++r) {
      auto& order = window_orders_[r];
      order.resize(r);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
    }
  }

  const Vocab& vocab() const { return vocab_; }
  int reorder_window() const { return window_; }
  // forward()[k]: target content index rendered for latent index k.
  const std::vector<int>& forward() const { return forward_; }
  const std::vector<int>& inverse() const { return inverse_; }
  // window_orders()[r]: output slot j of a width-r window takes input slot order[j].
  const std::vector<std::vector<int>>& window_orders() const { return window_orders_; }

  Sequence render(const Sequence& latent, Lang lang) const {
    Sequence out(latent.size());
    const IdRange range = vocab_.range(lang);
    if (lang == Lang::S) {
      for (std::size_t i = 0; i < latent.size(); ++i) out[i] = range.begin + latent[i];
      return out;
    }
    Sequence mapped(latent.size());
    for (std::size_t i = 0; i < latent.size(); ++i) mapped[i] = range.begin + forward_[latent[i]];
    return reorder(mapped);
  }

  Sequence translate(const Sequence& x, Lang from) const {
    const IdRange src = vocab_.range(from);
    for (int id : x)
      if (!src.contains(id))
        throw InvalidInput("token " + std::to_string(id) + " is outside the " + std::string(to_string(from)) +
                           " language range");
    const IdRange dst = vocab_.range(other(from));
    Sequence out(x.size());
    if (from == Lang::S) {
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = dst.begin + forward_[x[i] - src.begin];
      return reorder(out);
    }
    const Sequence restored = unreorder(x);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = dst.begin + inverse_[restored[i] - src.begin];
    return out;
  }

  static std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    return (static_cast<std::uint64_t>(words[1]) << 32) | words[0];
  }

 private:
  Sequence reorder(const Sequence& x) const {
    if (window_ == 1) return x;
    Sequence out(x.size());
    for (std::size_t start = 0; start < x.size(); start += window_) {
      const int width = static_cast<int>(std::min<std::size_t>(window_, x.size() - start));
      const auto& order = window_orders_[width];
      for (int j = 0; j < width; ++j) out[start + j] = x[start + order[j]];
    }
    return out;
  }

  Sequence unreorder(const Sequence& y) const {
    if (window_ == 1) return y;
    Sequence out(y.size());
    for (std::size_t start = 0; start < y.size(); start += window_) {
      const int width = static_cast<int>(std::min<std::size_t>(window_, y.size() - start));
      const auto& order = window_orders_[width];
      for (int j = 0; j < width; ++j) out[start + order[j]] = y[start + j];
    }
    return out;
  }

  Vocab vocab_;
  int window_ = 1;
  std::vector<int> forward_;
  std::vector<int> inverse_;
  std::vector<std::vector<int>> window_orders_;
};

inline Sequence oracle_translate(const Sequence& x, Lang from, const Cipher& cipher) {
  return cipher.translate(x, from);
}

inline Sequence oracle_translate(const Sequence& x, Lang from, const CipherTaskSpec& spec) {
  return Cipher(spec).translate(x, from);
}

struct SynthTask {
  CipherTaskSpec spec;
  Cipher cipher;
  Corpus train_s;
  Corpus train_t;
  ParallelSet valid;
  ParallelSet test;

  const Vocab& vocab() const { return cipher.vocab(); }
  const Corpus& train(Lang lang) const { return lang == Lang::S ? train_s : train_t; }
};

namespace detail {

class LatentSampler {
 public:
  explicit LatentSampler(const CipherTaskSpec& spec) : spec_(spec) {
    if (spec.latent == LatentProcess::Zipf) {
      std::vector<double> weights(spec.content_vocab_per_lang);
      for (int k = 0; k < spec.content_vocab_per_lang; ++k)
        weights[k] = std::pow(static_cast<double>(k + 1), -spec.zipf_exponent);
      token_dist_ = std::discrete_distribution<int>(weights.begin(), weights.end());
    }
  }

  Sequence operator()(Rng& rng) {
    std::uniform_int_distribution<int> length(spec_.min_len, spec_.max_len);
    Sequence latent(length(rng));
    if (spec_.latent == LatentProcess::Zipf) {
      for (auto& k : latent) k = token_dist_(rng);
    } else {
      std::uniform_int_distribution<int> token(0, spec_.content_vocab_per_lang - 1);
      for (auto& k : latent) k = token(rng);
    }
    return latent;
  }

 private:
  CipherTaskSpec spec_;
  std::discrete_distribution<int> token_dist_;
};

inline std::uint64_t sequence_hash(const Sequence& s) {
  Fnv1a h;
  h.update(s.data(), s.size() * sizeof(int));
  return h.digest();
}

}  // namespace detail

// Draws every split from one latent process. A latent sentence is used by at
// most one split and one language, so the two training corpora are unaligned
// and no test sentence is seen during training.
inline SynthTask generate_task(const CipherTaskSpec& spec) {
  spec.validate();
  SynthTask task{spec, Cipher(spec), {}, {}, {}, {}};
  detail::LatentSampler sample(spec);
  std::unordered_set<std::uint64_t> used;

  auto draw = [&](Rng& rng, int count) {
    std::vector<Sequence> latents;
    latents.reserve(count);
    while (static_cast<int>(latents.size()) < count) {
      Sequence latent = sample(rng);
      if (used.insert(detail::sequence_hash(latent)).second) latents.push_back(std::move(latent));
    }
    return latents;
  };
  auto render_all = [&](const std::vector<Sequence>& latents, Lang lang, Split split) {
    Corpus corpus{{}, lang, split};
    corpus.sentences.reserve(latents.size());
    for (const auto& latent : latents) corpus.sentences.push_back(task.cipher.render(latent, lang));
    return corpus;
  };

  // Held-out splits are drawn first so they do not depend on the corpus size.
  Rng test_rng(Cipher::stream_seed(spec.seed, 3));
  const auto test_latents = draw(test_rng, spec.test_size);
  Rng valid_rng(Cipher::stream_seed(spec.seed, 2));
  const auto valid_latents = draw(valid_rng, spec.valid_size);
  Rng s_rng(Cipher::stream_seed(spec.seed, 0));
  const auto s_latents = draw(s_rng, spec.corpus_size_per_lang);
  Rng t_rng(Cipher::stream_seed(spec.seed, 1));
  const auto t_latents = draw(t_rng, spec.corpus_size_per_lang);

  task.train_s = render_all(s_latents, Lang::S, Split::Train);
  task.train_t = render_all(t_latents, Lang::T, Split::Train);
  task.valid = {render_all(valid_latents, Lang::S, Split::Valid), render_all(valid_latents, Lang::T, Split::Valid)};
  task.test = {render_all(test_latents, Lang::S, Split::Test), render_all(test_latents, Lang::T, Split::Test)};
  return task;
}

// Removes sentences longer than `max_len`; returns how many were dropped.
inline std::size_t filter_max_length(Corpus& corpus, int max_len) {
  const auto before = corpus.sentences.size();
  std::erase_if(corpus.sentences, [&](const Sequence& s) { return static_cast<int>(s.size()) > max_len; });
  return before - corpus.sentences.size();
}

// Checks the corpus invariant: every id is a special or inside the language's range.
inline bool corpus_in_language(const Corpus& corpus, const Vocab& vocab) {
  const IdRange range = vocab.range(corpus.language);
  for (const auto& s : corpus.sentences)
    for (int id : s)
      if (!range.contains(id) && !Vocab::is_special(id)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Batches

class Batch {
 public:
  Batch() = default;

  static Batch from_sequences(const std::vector<Sequence>& rows, Lang lang) {
    Batch b;
    b.lang_ = lang;
    b.rows_ = static_cast<int>(rows.size());
    b.cols_ = 0;
    for (const auto& r : rows) b.cols_ = std::max(b.cols_, static_cast<int>(r.size()));
    b.ids_.assign(static_cast<std::size_t>(b.rows_) * b.cols_, kPad);
    b.pad_mask_.assign(b.ids_.size(), 0);
    b.lengths_.resize(b.rows_);
    for (int i = 0; i < b.rows_; ++i) {
      b.lengths_[i] = static_cast<int>(rows[i].size());
      for (int j = 0; j < b.lengths_[i]; ++j) {
        b.ids_[i * b.cols_ + j] = rows[i][j];
        b.pad_mask_[i * b.cols_ + j] = 1;
      }
    }
    return b;
  }

  // Builds a batch from an already padded row-major id matrix. The padding
  // cells may hold any id; the mask is derived from `lengths` alone.
  static Batch from_padded(std::vector<int> ids, int rows, int cols, std::vector<int> lengths, Lang lang) {
    if (static_cast<int>(ids.size()) != rows * cols || static_cast<int>(lengths.size()) != rows)
      throw InvalidInput("from_padded: shape mismatch");
    Batch b;
    b.lang_ = lang;
    b.rows_ = rows;
    b.cols_ = cols;
    b.ids_ = std::move(ids);
    b.lengths_ = std::move(lengths);
    b.pad_mask_.assign(b.ids_.size(), 0);
    for (int i = 0; i < rows; ++i) {
      if (b.lengths_[i] < 0 || b.lengths_[i] > cols) throw InvalidInput("from_padded: bad length");
      for (int j = 0; j < b.lengths_[i]; ++j) b.pad_mask_[i * cols + j] = 1;
    }
    return b;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  Lang language() const { return lang_; }
  const std::vector<int>& lengths() const { return lengths_; }
  const std::vector<int>& ids() const { return ids_; }
  int id(int i, int j) const { return ids_[i * cols_ + j]; }
  // True iff (i, j) holds a real token, i.e. j < lengths()[i].
  bool valid(int i, int j) const { return pad_mask_[i * cols_ + j] != 0; }
  const std::vector<std::uint8_t>& pad_mask() const { return pad_mask_; }

  std::size_t token_count() const {
    return static_cast<std::size_t>(std::accumulate(lengths_.begin(), lengths_.end(), 0));
  }

  Sequence row(int i) const {
    return Sequence(ids_.begin() + i * cols_, ids_.begin() + i * cols_ + lengths_[i]);
  }
  std::vector<Sequence> sequences() const {
    std::vector<Sequence> out;
    out.reserve(rows_);
    for (int i = 0; i < rows_; ++i) out.push_back(row(i));
    return out;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  Lang lang_ = Lang::S;
  std::vector<int> ids_;
  std::vector<int> lengths_;
  std::vector<std::uint8_t> pad_mask_;
};

// Epoch-wise shuffled mini-batches over a corpus; endless when iterated with next().
class BatchStream {
 public:
  BatchStream(const Corpus& corpus, int batch_size, std::uint64_t seed)
      : corpus_(&corpus), batch_size_(batch_size), rng_(seed) {
    if (corpus.empty()) throw InvalidInput("cannot batch an empty corpus");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    order_.resize(corpus.size());
    reshuffle();
  }

  Batch next() {
    if (cursor_ >= order_.size()) reshuffle();
    const std::size_t end = std::min(cursor_ + batch_size_, order_.size());
    std::vector<Sequence> rows;
    rows.reserve(end - cursor_);
    for (std::size_t i = cursor_; i < end; ++i) rows.push_back(corpus_->sentences[order_[i]]);
    cursor_ = end;
    ++draws_;
    return Batch::from_sequences(rows, corpus_->language);
  }

  // Skips n batches exactly as n calls to next() would, without building them.
  void advance(std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      if (cursor_ >= order_.size()) reshuffle();
      cursor_ = std::min(cursor_ + batch_size_, order_.size());
      ++draws_;
    }
  }

  // Remaining batches of the current epoch (a full epoch right after construction).
  std::vector<Batch> epoch() {
    std::vector<Batch> out;
    if (cursor_ >= order_.size()) reshuffle();
    while (cursor_ < order_.size()) out.push_back(next());
    return out;
  }

  std::size_t epochs_started() const { return epochs_; }
  std::size_t draws() const { return draws_; }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
    ++epochs_;
  }

  const Corpus* corpus_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epochs_ = 0;
  std::size_t draws_ = 0;
};

inline std::vector<Batch> make_batches(const Corpus& corpus, int batch_size, std::uint64_t seed) {
  return BatchStream(corpus, batch_size, seed).epoch();
}

// Fixed-order batches (no shuffling), for evaluation.
inline std::vector<Batch> sequential_batches(const Corpus& corpus, int batch_size) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<Batch> out;
  for (std::size_t start = 0; start < corpus.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, corpus.size());
    std::vector<Sequence> rows(corpus.sentences.begin() + start, corpus.sentences.begin() + end);
    out.push_back(Batch::from_sequences(rows, corpus.language));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: one sentence per line, space-separated ids.

inline void write_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& s : corpus.sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out << ' ';
      out << s[i];
    }
    out << '\n';
  }
}

inline Corpus read_corpus(const std::string& path, Lang lang, Split split) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  Corpus corpus{{}, lang, split};
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    Sequence s;
    int id;
    while (fields >> id) s.push_back(id);
    corpus.sentences.push_back(std::move(s));
  }
  return corpus;
}

}  // namespace qbt
