#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "ecga/checkpoint.hpp"
#include "ecga/ensemble.hpp"
#include "test_util.hpp"

using namespace ecga;
using test_util::random_tensor;

namespace {

Vocabulary small_vocab(std::size_t words) {
  Vocabulary v;
  for (std::size_t i = 0; i < words; ++i) v.add("w" + std::to_string(i));
  return v;
}

EnsembleModel small_model(const std::vector<LearnerSpec>& specs, std::size_t classes,
                          std::uint64_t seed, std::size_t vocab_words = 8,
                          std::size_t dim = 3) {
  Rng rng(seed);
  Vocabulary vocab = small_vocab(vocab_words);
  EmbeddingTable table = random_embeddings(vocab, dim, rng);
  std::vector<std::string> labels;
  for (std::size_t c = 0; c < classes; ++c) labels.push_back("c" + std::to_string(c));
  return build_ensemble(specs, classes, vocab, table, labels, rng);
}

std::vector<int> random_ids(std::size_t n, std::size_t vocab_size, Rng& rng) {
  std::vector<int> ids(n);
  for (auto& id : ids) id = static_cast<int>(rng.index(vocab_size));
  return ids;
}

}  // namespace

TEST_CASE("build_ensemble") {
  SUBCASE("kernel sizes 2 and 3 give two learners with shared table") {
    EnsembleModel m = small_model({{2, 4, 2, 0}, {3, 4, 2, 0}}, 3, 1);
    CHECK(m.learners.size() == 2);
    CHECK(m.learners[0].conv.kernel_size == 2);
    CHECK(m.learners[1].conv.kernel_size == 3);
    CHECK(m.learners[0].conv.filters.shape()[0] == 2);
    CHECK(m.learners[1].conv.filters.shape()[0] == 3);
    CHECK(m.embedding.matrix.rows() == m.vocab.size());
  }
  SUBCASE("attention dim defaults to twice the units") {
    EnsembleModel m = small_model({{2, 4, 5, 0}}, 2, 1);
    CHECK(m.learners[0].attn.proj.cols() == 10);
    EnsembleModel m2 = small_model({{2, 4, 5, 7}}, 2, 1);
    CHECK(m2.learners[0].attn.proj.cols() == 7);
  }
  SUBCASE("empty spec list is rejected") {
    CHECK_THROWS_AS(small_model({}, 3, 1), ConfigError);
  }
  SUBCASE("fewer than two classes is rejected") {
    CHECK_THROWS_AS(small_model({{2, 4, 2, 0}}, 1, 1), ConfigError);
  }
  SUBCASE("zero extents are rejected") {
    CHECK_THROWS_AS(small_model({{0, 4, 2, 0}}, 2, 1), ConfigError);
    CHECK_THROWS_AS(small_model({{2, 0, 2, 0}}, 2, 1), ConfigError);
    CHECK_THROWS_AS(small_model({{2, 4, 0, 0}}, 2, 1), ConfigError);
  }
}

TEST_CASE("ensemble_predict") {
  Rng rng(11);
  SUBCASE("three identical learners reproduce the single learner exactly") {
    EnsembleModel single = small_model({{2, 4, 3, 0}}, 3, 5);
    EnsembleModel triple = single;
    triple.specs = {single.specs[0], single.specs[0], single.specs[0]};
    triple.learners = {single.learners[0], single.learners[0], single.learners[0]};
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<int> ids = random_ids(6, single.vocab.size(), rng);
      Tensor a = ensemble_predict(single, ids);
      Tensor b = ensemble_predict(triple, ids);
      for (std::size_t c = 0; c < 3; ++c) CHECK(a[c] == b[c]);
    }
  }
  SUBCASE("matches the per-learner mean oracle") {
    EnsembleModel m = small_model({{1, 4, 2, 0}, {2, 4, 2, 0}, {3, 4, 2, 0}}, 4, 6);
    std::vector<int> ids = random_ids(5, m.vocab.size(), rng);
    Tensor got = ensemble_predict(m, ids);
    std::vector<long double> acc(4, 0.0L);
    for (std::size_t i = 0; i < 3; ++i) {
      EnsembleModel one = m;
      one.specs = {m.specs[i]};
      one.learners = {m.learners[i]};
      Tensor p = ensemble_predict(one, ids);
      for (std::size_t c = 0; c < 4; ++c) acc[c] += p[c];
    }
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(std::abs(got[c] - static_cast<double>(acc[c] / 3.0L)) < 1e-15);
  }
  SUBCASE("hand-built heads average [0.9,0.1] and [0.5,0.5] to [0.7,0.3]") {
    EnsembleModel m = small_model({{1, 2, 2, 0}, {1, 2, 2, 0}}, 2, 7);
    double target[2][2] = {{0.9, 0.1}, {0.5, 0.5}};
    for (std::size_t i = 0; i < 2; ++i) {
      m.learners[i].for_each_tensor([](const std::string&, Tensor& t) {
        for (std::size_t j = 0; j < t.size(); ++j) t[j] = 0.0;
      });
      // alpha is zero, so the softmax sees only the head bias
      m.learners[i].head.bias[0] = std::log(target[i][0]);
      m.learners[i].head.bias[1] = std::log(target[i][1]);
    }
    std::vector<int> ids = random_ids(4, m.vocab.size(), rng);
    Tensor p = ensemble_predict(m, ids);
    CHECK(std::abs(p[0] - 0.7) < 1e-12);
    CHECK(std::abs(p[1] - 0.3) < 1e-12);
  }
  SUBCASE("output is a probability vector") {
    EnsembleModel m = small_model({{2, 4, 3, 0}, {3, 4, 3, 0}}, 5, 8);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor p = ensemble_predict(m, random_ids(7, m.vocab.size(), rng));
      double sum = 0.0;
      for (std::size_t c = 0; c < 5; ++c) {
        CHECK(p[c] >= 0.0);
        CHECK(p[c] <= 1.0);
        sum += p[c];
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
  SUBCASE("repeated calls are bit-identical") {
    EnsembleModel m = small_model({{2, 4, 3, 0}}, 3, 9);
    std::vector<int> ids = random_ids(6, m.vocab.size(), rng);
    Tensor a = ensemble_predict(m, ids);
    Tensor b = ensemble_predict(m, ids);
    for (std::size_t c = 0; c < 3; ++c) CHECK(a[c] == b[c]);
  }
}

TEST_CASE("ensemble_loss") {
  Rng rng(12);
  EnsembleModel m = small_model({{1, 3, 2, 0}, {2, 3, 2, 0}}, 3, 13);
  EncodedBatch batch;
  batch.pad_length = 5;
  for (int b = 0; b < 4; ++b) {
    batch.ids.push_back(random_ids(5, m.vocab.size(), rng));
    batch.labels.push_back(b % 3);
  }
  SUBCASE("joint loss matches the hand-computed mean cross-entropy") {
    double want = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      Tensor p = ensemble_predict(m, batch.ids[b]);
      want += -std::log(p[static_cast<std::size_t>(batch.labels[b])]);
    }
    want /= static_cast<double>(batch.size());
    CHECK(std::abs(ensemble_loss_value(m, batch) - want) < 1e-12);
  }
  SUBCASE("uniform prediction gives ln(c)") {
    EnsembleModel flat = m;
    flat.for_each_param([](const std::string&, Tensor& t) {
      for (std::size_t j = 0; j < t.size(); ++j) t[j] = 0.0;
    });
    CHECK(std::abs(ensemble_loss_value(flat, batch) - std::log(3.0)) < 1e-12);
  }
  SUBCASE("independent loss is the mean of the single-learner losses") {
    double want = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      EnsembleModel one = m;
      one.specs = {m.specs[i]};
      one.learners = {m.learners[i]};
      want += ensemble_loss_value(one, batch);
    }
    want /= 2.0;
    CHECK(std::abs(ensemble_loss_value(m, batch, TrainingMode::independent) - want) < 1e-12);
  }
  SUBCASE("empty batch is a contract error") {
    EncodedBatch empty;
    CHECK_THROWS_AS(ensemble_loss_value(m, empty), ContractError);
  }
  SUBCASE("label outside [0, c) is a contract error") {
    EncodedBatch bad = batch;
    bad.labels[0] = 3;
    CHECK_THROWS_AS(ensemble_loss_value(m, bad), ContractError);
    bad.labels[0] = -1;
    CHECK_THROWS_AS(ensemble_loss_value(m, bad), ContractError);
  }
  SUBCASE("gradient reaches every parameter tensor of every learner") {
    GradTape tape;
    EnsembleVars vars = lift_ensemble(tape, m);
    ForwardConfig cfg{0.0, m.conv_relu, true};
    Rng drng(0);
    tape.backward(ensemble_loss(tape, vars, batch, m.classes, cfg, drng));
    for (const auto& lv : vars.learners) {
      for (const auto& [name, var] : lv.named) {
        REQUIRE(tape.has_grad(var));
        const Tensor& g = tape.grad(var);
        double norm = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) norm += g[j] * g[j];
        CHECK_MESSAGE(norm > 0.0, name);
      }
    }
  }
}

TEST_CASE("checkpoint round trip") {
  Rng rng(14);
  EnsembleModel m = small_model({{2, 4, 3, 0}, {3, 4, 3, 5}}, 3, 15);
  m.pad_length = 6;
  m.clean_text = true;
  auto path = std::filesystem::temp_directory_path() / "ecga_ckpt_test.ecga";
  save_checkpoint(m, path.string());
  EnsembleModel r = load_checkpoint(path.string());
  std::remove(path.string().c_str());

  CHECK(r.classes == m.classes);
  CHECK(r.labels == m.labels);
  CHECK(r.conv_relu == m.conv_relu);
  CHECK(r.pad_length == m.pad_length);
  CHECK(r.clean_text == m.clean_text);
  CHECK(r.vocab.size() == m.vocab.size());
  for (std::size_t i = 0; i < m.vocab.size(); ++i) CHECK(r.vocab.token(i) == m.vocab.token(i));
  for (std::size_t j = 0; j < m.embedding.matrix.size(); ++j)
    CHECK(r.embedding.matrix[j] == m.embedding.matrix[j]);

  std::vector<std::pair<std::string, Tensor>> original;
  m.for_each_param([&](const std::string& n, Tensor& t) { original.emplace_back(n, t); });
  std::size_t slot = 0;
  r.for_each_param([&](const std::string& n, Tensor& t) {
    REQUIRE(slot < original.size());
    CHECK(n == original[slot].first);
    REQUIRE(t.shape() == original[slot].second.shape());
    for (std::size_t j = 0; j < t.size(); ++j) CHECK(t[j] == original[slot].second[j]);
    ++slot;
  });
  CHECK(slot == original.size());

  std::vector<int> ids = random_ids(6, m.vocab.size(), rng);
  Tensor a = ensemble_predict(m, ids);
  Tensor b = ensemble_predict(r, ids);
  for (std::size_t c = 0; c < 3; ++c) CHECK(a[c] == b[c]);
}

TEST_CASE("checkpoint rejects malformed input") {
  auto dir = std::filesystem::temp_directory_path();
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint((dir / "ecga_no_such_file.ecga").string()), ParseError);
  }
  SUBCASE("wrong magic") {
    auto path = dir / "ecga_bad_magic.ecga";
    {
      std::ofstream out(path);
      out << "NOT-A-CHECKPOINT 1\n";
    }
    CHECK_THROWS_AS(load_checkpoint(path.string()), ParseError);
    std::remove(path.string().c_str());
  }
  SUBCASE("truncated file") {
    EnsembleModel m = small_model({{2, 3, 2, 0}}, 2, 16);
    auto good = dir / "ecga_trunc_src.ecga";
    save_checkpoint(m, good.string());
    std::ifstream in(good);
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    auto path = dir / "ecga_trunc.ecga";
    {
      std::ofstream out(path);
      out << all.substr(0, all.size() / 2);
    }
    CHECK_THROWS_AS(load_checkpoint(path.string()), ParseError);
    std::remove(good.string().c_str());
    std::remove(path.string().c_str());
  }
}
