#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace offramp {

enum class TaskMetric { accuracy, binary_f1 };

enum class Stratum { unknown, easy, hard };

struct Example {
  std::string text_a;
  std::optional<std::string> text_b;
  int label = 0;
};

// Whitespace-token vocabulary with fixed reserved ids. Ids are dense:
// reserved ids first, then corpus tokens by descending frequency
// (ties broken lexicographically), truncated to max_size.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kReservedCount = 4;

  static Vocab build(const std::vector<Example>& corpus, std::size_t max_size);

  int id(const std::string& token) const;  // kUnk when absent
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  void index();
};

struct TaskMeta {
  int n_classes = 2;
  bool is_pair = false;
  TaskMetric metric = TaskMetric::accuracy;
};

struct Dataset {
  std::vector<Example> train;
  std::vector<Example> dev;
  std::vector<Example> test;
  TaskMeta meta;
};

// Column schema for GLUE-style TSV files (UTF-8, tab-separated, header row).
struct TsvSchema {
  std::string text_a_column;
  std::optional<std::string> text_b_column;
  std::string label_column;
  std::vector<std::string> label_names;  // label string -> class id by position
};

std::vector<Example> load_tsv(const std::string& path, const TsvSchema& schema);
void write_tsv(const std::string& path, const std::vector<Example>& examples, const TsvSchema& schema);

// One tokenized sample: [CLS] a... for single sentences,
// [CLS] a... [SEP] b... [SEP] for pairs, padded to max_len.
struct TokenRow {
  std::vector<int> ids;
  std::vector<int> mask;      // 1 on real tokens, 0 on padding
  std::vector<int> segments;  // 0 for CLS+a(+first SEP), 1 for b(+second SEP)
};

TokenRow tokenize(const Example& example, const Vocab& vocab, int max_len);

// A padded matrix of samples ready for the model.
struct TokenBatch {
  std::size_t batch = 0;
  int seq_len = 0;
  std::vector<int> ids;       // row-major [batch, seq_len]
  std::vector<int> mask;
  std::vector<int> segments;
  std::vector<int> labels;
};

struct EncodedSplit {
  std::size_t count = 0;
  int seq_len = 0;
  std::vector<int> ids;
  std::vector<int> mask;
  std::vector<int> segments;
  std::vector<int> labels;
  std::vector<Stratum> strata;  // aligned with samples; unknown for non-synthetic tasks

  TokenBatch single(std::size_t index) const;
  TokenBatch gather(const std::vector<std::size_t>& indices) const;
};

EncodedSplit encode_split(const std::vector<Example>& examples, const Vocab& vocab, int max_len);

// Synthetic keyword-classification task with two difficulty strata.
// EASY samples carry a class keyword near the sequence start; HARD samples
// carry a trigger token early and a modifier token late, and the label is
// (trigger + modifier) mod n_classes, so neither token alone is informative.
struct SynthSpec {
  int n_classes = 2;
  int vocab_size = 64;  // generated surface vocabulary incl. keywords and fillers
  int train_count = 2000;
  int dev_count = 500;
  int test_count = 0;
  int seq_len = 16;
  double easy_fraction = 0.5;
};

Dataset make_synthetic_task(const SynthSpec& spec, std::uint64_t seed);

// Recovers the stratum of a synthetic example from its surface tokens.
Stratum stratum_of(const Example& example);

// Seed-deterministic batching: every index appears exactly once per epoch.
std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size,
                                                   std::uint64_t seed, bool shuffle);

}  // namespace offramp
