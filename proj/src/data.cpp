#include "offramp/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "offramp/rng.hpp"

namespace offramp {

namespace {

constexpr const char* kReservedTokens[Vocab::kReservedCount] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};

std::vector<std::string> split_whitespace(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

// ---- Vocab ----

Vocab Vocab::build(const std::vector<Example>& corpus, std::size_t max_size) {
  if (max_size < kReservedCount + 1) {
    throw std::invalid_argument("vocab: max_size must leave room for reserved tokens");
  }
  std::map<std::string, std::size_t> counts;  // ordered map gives the lexicographic tie-break
  for (const Example& ex : corpus) {
    for (const std::string& t : split_whitespace(ex.text_a)) ++counts[t];
    if (ex.text_b) {
      for (const std::string& t : split_whitespace(*ex.text_b)) ++counts[t];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocab v;
  for (const char* r : kReservedTokens) v.tokens_.emplace_back(r);
  for (const auto& [token, freq] : ranked) {
    (void)freq;
    if (v.tokens_.size() >= max_size) break;
    v.tokens_.push_back(token);
  }
  v.index();
  return v;
}

void Vocab::index() {
  ids_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i) ids_[tokens_[i]] = static_cast<int>(i);
}

int Vocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("vocab: cannot write " + path);
  for (const std::string& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("vocab: cannot read " + path);
  Vocab v;
  std::string line;
  while (std::getline(in, line)) v.tokens_.push_back(strip_cr(line));
  if (v.tokens_.size() < kReservedCount) throw std::runtime_error("vocab: file " + path + " is truncated");
  for (int i = 0; i < kReservedCount; ++i) {
    if (v.tokens_[static_cast<std::size_t>(i)] != kReservedTokens[i]) {
      throw std::runtime_error("vocab: reserved token mismatch in " + path);
    }
  }
  v.index();
  return v;
}

// ---- TSV ----

std::vector<Example> load_tsv(const std::string& path, const TsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("tsv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("tsv: " + path + " is empty");
  const std::vector<std::string> header = split_tabs(strip_cr(line));

  auto column = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw std::runtime_error("tsv: " + path + " has no column '" + name + "'");
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t a_col = column(schema.text_a_column);
  const std::size_t label_col = column(schema.label_column);
  std::optional<std::size_t> b_col;
  if (schema.text_b_column) b_col = column(*schema.text_b_column);

  std::vector<Example> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_tabs(line);
    if (fields.size() != header.size()) {
      throw std::runtime_error("tsv: " + path + " line " + std::to_string(line_no) + " has " +
                               std::to_string(fields.size()) + " fields, expected " +
                               std::to_string(header.size()));
    }
    Example ex;
    ex.text_a = fields[a_col];
    if (ex.text_a.empty()) {
      throw std::runtime_error("tsv: " + path + " line " + std::to_string(line_no) + " has empty '" +
                               schema.text_a_column + "'");
    }
    if (b_col) ex.text_b = fields[*b_col];
    const std::string& label = fields[label_col];
    auto it = std::find(schema.label_names.begin(), schema.label_names.end(), label);
    if (it == schema.label_names.end()) {
      throw std::runtime_error("tsv: " + path + " line " + std::to_string(line_no) + " has unknown label '" +
                               label + "'");
    }
    ex.label = static_cast<int>(it - schema.label_names.begin());
    out.push_back(std::move(ex));
  }
  return out;
}

void write_tsv(const std::string& path, const std::vector<Example>& examples, const TsvSchema& schema) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("tsv: cannot write " + path);
  out << schema.text_a_column;
  if (schema.text_b_column) out << '\t' << *schema.text_b_column;
  out << '\t' << schema.label_column << '\n';
  for (const Example& ex : examples) {
    out << ex.text_a;
    if (schema.text_b_column) out << '\t' << (ex.text_b ? *ex.text_b : "");
    out << '\t' << schema.label_names.at(static_cast<std::size_t>(ex.label)) << '\n';
  }
}

// ---- tokenization ----

TokenRow tokenize(const Example& example, const Vocab& vocab, int max_len) {
  if (max_len < 2) throw std::invalid_argument("tokenize: max_len must be at least 2");
  std::vector<std::string> a = split_whitespace(example.text_a);
  std::vector<std::string> b = example.text_b ? split_whitespace(*example.text_b) : std::vector<std::string>{};

  const std::size_t limit = static_cast<std::size_t>(max_len);
  if (example.text_b) {
    // Budget: CLS + a + SEP + b + SEP. Trim the longer segment first; on a
    // tie trim b, keeping more of the leading sentence.
    while (1 + a.size() + 1 + b.size() + 1 > limit) {
      if (a.size() > b.size()) {
        a.pop_back();
      } else {
        b.pop_back();
      }
    }
  } else {
    if (1 + a.size() > limit) a.resize(limit - 1);
  }

  TokenRow row;
  row.ids.reserve(limit);
  auto push = [&](int id, int segment) {
    row.ids.push_back(id);
    row.mask.push_back(1);
    row.segments.push_back(segment);
  };
  push(Vocab::kCls, 0);
  for (const std::string& t : a) push(vocab.id(t), 0);
  if (example.text_b) {
    push(Vocab::kSep, 0);
    for (const std::string& t : b) push(vocab.id(t), 1);
    push(Vocab::kSep, 1);
  }
  while (row.ids.size() < limit) {
    row.ids.push_back(Vocab::kPad);
    row.mask.push_back(0);
    row.segments.push_back(0);
  }
  return row;
}

// ---- encoded splits ----

EncodedSplit encode_split(const std::vector<Example>& examples, const Vocab& vocab, int max_len) {
  EncodedSplit split;
  split.count = examples.size();
  split.seq_len = max_len;
  const std::size_t stride = static_cast<std::size_t>(max_len);
  split.ids.reserve(split.count * stride);
  split.mask.reserve(split.count * stride);
  split.segments.reserve(split.count * stride);
  split.labels.reserve(split.count);
  split.strata.reserve(split.count);
  for (const Example& ex : examples) {
    TokenRow row = tokenize(ex, vocab, max_len);
    split.ids.insert(split.ids.end(), row.ids.begin(), row.ids.end());
    split.mask.insert(split.mask.end(), row.mask.begin(), row.mask.end());
    split.segments.insert(split.segments.end(), row.segments.begin(), row.segments.end());
    split.labels.push_back(ex.label);
    split.strata.push_back(stratum_of(ex));
  }
  return split;
}

TokenBatch EncodedSplit::single(std::size_t index) const { return gather({index}); }

TokenBatch EncodedSplit::gather(const std::vector<std::size_t>& indices) const {
  TokenBatch batch;
  batch.batch = indices.size();
  batch.seq_len = seq_len;
  const std::size_t stride = static_cast<std::size_t>(seq_len);
  batch.ids.reserve(indices.size() * stride);
  batch.mask.reserve(indices.size() * stride);
  batch.segments.reserve(indices.size() * stride);
  batch.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= count) throw std::out_of_range("encoded split: sample index " + std::to_string(i) + " out of range");
    const std::size_t off = i * stride;
    batch.ids.insert(batch.ids.end(), ids.begin() + off, ids.begin() + off + stride);
    batch.mask.insert(batch.mask.end(), mask.begin() + off, mask.begin() + off + stride);
    batch.segments.insert(batch.segments.end(), segments.begin() + off, segments.begin() + off + stride);
    batch.labels.push_back(labels[i]);
  }
  return batch;
}

// ---- synthetic task ----

namespace {

struct SynthTokens {
  std::vector<std::string> keywords;   // easy class keywords
  std::vector<std::string> triggers;   // hard early tokens
  std::vector<std::string> modifiers;  // hard late tokens
  std::vector<std::string> fillers;
};

SynthTokens make_surface_vocab(const SynthSpec& spec) {
  const int k = spec.n_classes;
  const int filler_count = spec.vocab_size - 3 * k;
  if (filler_count < 4) {
    throw std::invalid_argument("synthetic task: vocab_size " + std::to_string(spec.vocab_size) +
                                " too small for " + std::to_string(k) +
                                " classes (need 3 keyword groups plus fillers)");
  }
  SynthTokens t;
  for (int c = 0; c < k; ++c) {
    t.keywords.push_back("kw" + std::to_string(c));
    t.triggers.push_back("trig" + std::to_string(c));
    t.modifiers.push_back("mod" + std::to_string(c));
  }
  for (int f = 0; f < filler_count; ++f) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "fill%03d", f);
    t.fillers.emplace_back(buf);
  }
  return t;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += tokens[i];
  }
  return out;
}

Example make_sample(const SynthSpec& spec, const SynthTokens& tokens, bool easy, int label, Rng& rng) {
  const int surface_len = spec.seq_len - 1;  // CLS joins at tokenize time
  std::vector<std::string> words(static_cast<std::size_t>(surface_len));
  for (auto& w : words) w = tokens.fillers[rng.uniform_index(tokens.fillers.size())];
  if (easy) {
    const int pos = rng.uniform_int(0, 2);
    words[static_cast<std::size_t>(pos)] = tokens.keywords[static_cast<std::size_t>(label)];
  } else {
    const int k = spec.n_classes;
    const int trigger = rng.uniform_int(0, k - 1);
    const int modifier = ((label - trigger) % k + k) % k;
    const int early = rng.uniform_int(0, 2);
    const int late = rng.uniform_int(surface_len - 3, surface_len - 1);
    words[static_cast<std::size_t>(early)] = tokens.triggers[static_cast<std::size_t>(trigger)];
    words[static_cast<std::size_t>(late)] = tokens.modifiers[static_cast<std::size_t>(modifier)];
  }
  Example ex;
  ex.text_a = join(words);
  ex.label = label;
  return ex;
}

std::vector<Example> make_split(const SynthSpec& spec, const SynthTokens& tokens, int count, Rng& rng,
                                std::unordered_set<std::string>& seen) {
  const int easy_count = static_cast<int>(std::lround(count * spec.easy_fraction));
  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int s = 0; s < count; ++s) {
    const bool easy = s < easy_count;
    const int label = (easy ? s : s - easy_count) % spec.n_classes;  // round-robin per stratum
    Example ex = make_sample(spec, tokens, easy, label, rng);
    int retries = 0;
    while (seen.count(ex.text_a) > 0) {
      if (++retries > 1000) throw std::runtime_error("synthetic task: cannot generate enough distinct samples");
      ex = make_sample(spec, tokens, easy, label, rng);
    }
    seen.insert(ex.text_a);
    out.push_back(std::move(ex));
  }
  rng.shuffle(out);
  return out;
}

}  // namespace

Dataset make_synthetic_task(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.n_classes < 2) throw std::invalid_argument("synthetic task: need at least 2 classes");
  if (spec.seq_len < 8) throw std::invalid_argument("synthetic task: seq_len must be at least 8");
  if (spec.train_count < 1 || spec.dev_count < 1 || spec.test_count < 0) {
    throw std::invalid_argument("synthetic task: split sizes must be positive");
  }
  if (spec.easy_fraction < 0.0 || spec.easy_fraction > 1.0) {
    throw std::invalid_argument("synthetic task: easy_fraction must be in [0, 1]");
  }
  const SynthTokens tokens = make_surface_vocab(spec);

  // Distinct texts across splits keeps train/dev/test disjoint by construction.
  std::unordered_set<std::string> seen;
  Dataset ds;
  {
    Rng rng(derive_seed(seed, "synthetic.train"));
    ds.train = make_split(spec, tokens, spec.train_count, rng, seen);
  }
  {
    Rng rng(derive_seed(seed, "synthetic.dev"));
    ds.dev = make_split(spec, tokens, spec.dev_count, rng, seen);
  }
  if (spec.test_count > 0) {
    Rng rng(derive_seed(seed, "synthetic.test"));
    ds.test = make_split(spec, tokens, spec.test_count, rng, seen);
  }
  ds.meta.n_classes = spec.n_classes;
  ds.meta.is_pair = false;
  ds.meta.metric = TaskMetric::accuracy;  // single-sentence task; F1 is still reported when binary
  return ds;
}

Stratum stratum_of(const Example& example) {
  for (const std::string& t : split_whitespace(example.text_a)) {
    if (t.rfind("kw", 0) == 0) return Stratum::easy;
    if (t.rfind("trig", 0) == 0 || t.rfind("mod", 0) == 0) return Stratum::hard;
  }
  return Stratum::unknown;
}

// ---- batching ----

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size,
                                                   std::uint64_t seed, bool shuffle) {
  if (batch_size == 0) throw std::invalid_argument("batch: batch_size must be at least 1");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  if (shuffle) {
    Rng rng(seed);
    rng.shuffle(order);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

}  // namespace offramp
