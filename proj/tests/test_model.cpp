#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <thread>

#include <doctest.h>

#include "offramp/data.hpp"
#include "offramp/inference.hpp"
#include "offramp/model.hpp"

using namespace offramp;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.n_layers = 4;
  cfg.hidden_size = 16;
  cfg.n_heads = 2;
  cfg.ffn_size = 32;
  cfg.vocab_size = 24;
  cfg.max_seq_len = 10;
  cfg.n_classes = 3;
  return cfg;
}

// Deterministic toy batch; ids stay inside vocab, CLS at position 0.
TokenBatch toy_batch(std::size_t batch, int seq_len, int real_tokens, std::uint64_t seed = 17) {
  Rng rng(seed);
  TokenBatch b;
  b.batch = batch;
  b.seq_len = seq_len;
  for (std::size_t s = 0; s < batch; ++s) {
    for (int t = 0; t < seq_len; ++t) {
      const bool real = t < real_tokens;
      b.ids.push_back(t == 0 ? Vocab::kCls : (real ? 4 + static_cast<int>(rng.uniform_index(20)) : Vocab::kPad));
      b.mask.push_back(real ? 1 : 0);
      b.segments.push_back(0);
    }
    b.labels.push_back(static_cast<int>(rng.uniform_index(3)));
  }
  return b;
}

fs::path temp_path(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "offramp-model-tests";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("model config validation names the failing constraint") {
  ModelConfig cfg = tiny_config();
  cfg.n_heads = 3;  // does not divide 16
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.n_classes = 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("forward_all returns one logit tensor per ramp with the right shape") {
  EarlyExitModel model(tiny_config(), 1);
  TokenBatch batch = toy_batch(2, 10, 7);
  auto logits = model.forward_all(batch);
  REQUIRE(logits.size() == 4);
  for (const Tensor& t : logits) {
    CHECK(t.shape() == Shape{2, 3});
    CHECK(t.all_finite());
  }
}

TEST_CASE("fresh model outputs have entropy bounded by ln(n_classes)") {
  EarlyExitModel model(tiny_config(), 2);
  TokenBatch batch = toy_batch(4, 10, 6);
  for (const Tensor& logits : model.forward_all(batch)) {
    for (std::size_t row = 0; row < 4; ++row) {
      Tensor single = Tensor::from_data({1, 3}, {logits.data()[row * 3], logits.data()[row * 3 + 1],
                                                 logits.data()[row * 3 + 2]});
      const double h = entropy(softmax(single, 1).data());
      CHECK(h >= 0.0);
      CHECK(h <= std::log(3.0) + 1e-12);
    }
  }
}

TEST_CASE("permuting the batch permutes every ramp output identically") {
  EarlyExitModel model(tiny_config(), 3);
  TokenBatch batch = toy_batch(3, 10, 8);
  auto logits = model.forward_all(batch);

  // Reverse the batch rows.
  TokenBatch reversed;
  reversed.batch = 3;
  reversed.seq_len = 10;
  for (int s = 2; s >= 0; --s) {
    for (int t = 0; t < 10; ++t) {
      const std::size_t i = static_cast<std::size_t>(s) * 10 + static_cast<std::size_t>(t);
      reversed.ids.push_back(batch.ids[i]);
      reversed.mask.push_back(batch.mask[i]);
      reversed.segments.push_back(batch.segments[i]);
    }
    reversed.labels.push_back(batch.labels[static_cast<std::size_t>(s)]);
  }
  auto permuted = model.forward_all(reversed);
  for (std::size_t ramp = 0; ramp < 4; ++ramp) {
    for (std::size_t row = 0; row < 3; ++row) {
      for (std::size_t c = 0; c < 3; ++c) {
        CHECK(permuted[ramp].data()[(2 - row) * 3 + c] == logits[ramp].data()[row * 3 + c]);
      }
    }
  }
}

TEST_CASE("forward_prefix is bit-identical to forward_all at every depth") {
  EarlyExitModel model(tiny_config(), 4);
  TokenBatch batch = toy_batch(3, 10, 9);
  auto all = model.forward_all(batch);
  for (int depth = 1; depth <= 4; ++depth) {
    Tensor prefix = model.forward_prefix(batch, depth);
    CHECK(prefix.data() == all[static_cast<std::size_t>(depth - 1)].data());
  }
}

TEST_CASE("layer execution counter records exactly the prefix depth") {
  EarlyExitModel model(tiny_config(), 5);
  TokenBatch batch = toy_batch(1, 10, 5);
  model.reset_layer_executions();
  model.forward_prefix(batch, 1);
  CHECK(model.layer_executions() == 1);
  model.reset_layer_executions();
  model.forward_prefix(batch, 3);
  CHECK(model.layer_executions() == 3);
  model.reset_layer_executions();
  model.forward_all(batch);
  CHECK(model.layer_executions() == 4);
}

TEST_CASE("forward_prefix rejects out-of-range depths") {
  EarlyExitModel model(tiny_config(), 6);
  TokenBatch batch = toy_batch(1, 10, 5);
  CHECK_THROWS_AS(model.forward_prefix(batch, 0), std::invalid_argument);
  CHECK_THROWS_AS(model.forward_prefix(batch, 5), std::invalid_argument);
}

TEST_CASE("sequences longer than max_seq_len are rejected") {
  EarlyExitModel model(tiny_config(), 7);
  TokenBatch batch = toy_batch(1, 12, 5);
  CHECK_THROWS_AS(model.forward_all(batch), std::invalid_argument);
}

TEST_CASE("appending masked padding shifts no ramp logits beyond 1e-9") {
  EarlyExitModel model(tiny_config(), 8);
  TokenBatch shorter = toy_batch(2, 7, 7);
  TokenBatch padded;
  padded.batch = 2;
  padded.seq_len = 10;
  for (std::size_t s = 0; s < 2; ++s) {
    for (int t = 0; t < 10; ++t) {
      if (t < 7) {
        const std::size_t i = s * 7 + static_cast<std::size_t>(t);
        padded.ids.push_back(shorter.ids[i]);
        padded.mask.push_back(shorter.mask[i]);
        padded.segments.push_back(shorter.segments[i]);
      } else {
        padded.ids.push_back(Vocab::kPad);
        padded.mask.push_back(0);
        padded.segments.push_back(0);
      }
    }
    padded.labels.push_back(shorter.labels[s]);
  }
  auto base = model.forward_all(shorter);
  auto with_pad = model.forward_all(padded);
  for (std::size_t ramp = 0; ramp < 4; ++ramp) {
    for (std::size_t i = 0; i < base[ramp].size(); ++i) {
      CHECK(std::abs(base[ramp].data()[i] - with_pad[ramp].data()[i]) <= 1e-9);
    }
  }
}

TEST_CASE("pool returns the first-token vector and ignores the rest") {
  Tensor hidden = Tensor::from_data({3, 2, 4}, {// batch 0
                                                1, 2, 3, 4, 9, 9, 9, 9,
                                                // batch 1
                                                5, 6, 7, 8, -1, -1, -1, -1,
                                                // batch 2
                                                0, 1, 0, 1, 3, 3, 3, 3});
  Tensor pooled = EarlyExitModel::pool(hidden);
  CHECK(pooled.shape() == Shape{3, 4});
  CHECK(pooled.data() == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 0, 1, 0, 1});

  // Altering a non-first token changes nothing.
  hidden.data()[4] = 1234.5;
  Tensor again = EarlyExitModel::pool(hidden);
  CHECK(again.data() == pooled.data());

  Tensor single = Tensor::from_data({1, 1, 2}, {4, 2});
  CHECK(EarlyExitModel::pool(single).data() == std::vector<double>{4, 2});
}

TEST_CASE("checkpoint round trip reproduces forward outputs bit-exactly") {
  EarlyExitModel model(tiny_config(), 9);
  const fs::path path = temp_path("roundtrip.ckpt");
  model.save(path.string());
  EarlyExitModel loaded = EarlyExitModel::load(path.string());
  TokenBatch batch = toy_batch(2, 10, 6);
  auto a = model.forward_all(batch);
  auto b = loaded.forward_all(batch);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].data() == b[i].data());
}

TEST_CASE("checkpoints with a different layer count load their own config") {
  ModelConfig cfg = tiny_config();
  cfg.n_layers = 2;
  EarlyExitModel two(cfg, 10);
  const fs::path path = temp_path("two_layers.ckpt");
  two.save(path.string());
  EarlyExitModel loaded = EarlyExitModel::load(path.string());
  CHECK(loaded.config().n_layers == 2);
  CHECK(loaded.forward_all(toy_batch(1, 10, 5)).size() == 2);
}

TEST_CASE("corrupt checkpoints are rejected with a diagnostic") {
  const fs::path bad_magic = temp_path("bad_magic.ckpt");
  std::ofstream(bad_magic, std::ios::binary) << "NOTAMODELFILE....";
  CHECK_THROWS_AS(EarlyExitModel::load(bad_magic.string()), std::runtime_error);

  EarlyExitModel model(tiny_config(), 11);
  const fs::path full = temp_path("full.ckpt");
  model.save(full.string());
  // Truncate the file to half its size.
  const auto size = fs::file_size(full);
  fs::resize_file(full, size / 2);
  CHECK_THROWS_AS(EarlyExitModel::load(full.string()), std::runtime_error);
}

TEST_CASE("sequence pairs flow through segment embeddings") {
  ModelConfig cfg = tiny_config();
  EarlyExitModel model(cfg, 14);
  Example pair{"alpha beta", std::string("gamma delta"), 1};
  Vocab vocab = Vocab::build({pair}, static_cast<std::size_t>(cfg.vocab_size));
  EncodedSplit split = encode_split({pair}, vocab, cfg.max_seq_len);
  CHECK(std::count(split.segments.begin(), split.segments.end(), 1) == 3);  // b tokens + final SEP

  TokenBatch batch = split.single(0);
  auto logits = model.forward_all(batch);
  REQUIRE(logits.size() == 4);
  for (const Tensor& t : logits) CHECK(t.all_finite());
  // Prefix consistency holds for pair inputs too.
  CHECK(model.forward_prefix(batch, 2).data() == logits[1].data());
}

TEST_CASE("a frozen model is safe to share across concurrent inference threads") {
  EarlyExitModel model(tiny_config(), 15);
  std::vector<TokenBatch> samples;
  for (int i = 0; i < 8; ++i) samples.push_back(toy_batch(1, 10, 6, 100 + static_cast<std::uint64_t>(i)));

  std::vector<std::vector<double>> serial;
  for (const TokenBatch& s : samples) serial.push_back(model.forward_all(s).back().data());

  std::vector<std::vector<double>> threaded(samples.size());
  {
    std::vector<std::thread> workers;
    for (std::size_t t = 0; t < 4; ++t) {
      workers.emplace_back([&, t] {
        for (std::size_t i = t; i < samples.size(); i += 4) {
          threaded[i] = model.forward_all(samples[i]).back().data();
        }
      });
    }
    for (auto& w : workers) w.join();
  }
  CHECK(threaded == serial);
}

TEST_CASE("parameter partition covers every parameter exactly once") {
  EarlyExitModel model(tiny_config(), 12);
  auto all = model.parameters();
  auto backbone = model.backbone_parameters();
  auto ramps = model.intermediate_ramp_parameters();
  CHECK(all.size() == backbone.size() + ramps.size());
  // Every tensor in `all` appears in exactly one partition (node identity).
  for (const Tensor& p : all) {
    int hits = 0;
    for (const Tensor& b : backbone) {
      if (p.same_node(b)) ++hits;
    }
    for (const Tensor& r : ramps) {
      if (p.same_node(r)) ++hits;
    }
    CHECK(hits == 1);
  }
  // One off-ramp per layer, ramp n is the final classifier.
  CHECK(ramps.size() == 2 * (4 - 1));
  CHECK_THROWS_AS(model.ramp(0), std::out_of_range);
  CHECK_THROWS_AS(model.ramp(5), std::out_of_range);
  CHECK(model.ramp(4).weight.same_node(backbone[backbone.size() - 2]));
}
