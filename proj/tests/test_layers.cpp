#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ecga/layers.hpp"
#include "ecga/text_pipeline.hpp"
#include "ecga/training.hpp"
#include "test_util.hpp"

using namespace ecga;
using test_util::random_tensor;

namespace {

Tensor random_table(std::size_t vocab, std::size_t dim, Rng& rng) {
  Tensor t({vocab, dim});
  for (std::size_t i = dim; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);  // row 0 = PAD
  return t;
}

}  // namespace

TEST_CASE("embed_lookup") {
  Rng rng(2);
  GradTape tape;
  SUBCASE("all-padding sequence gives the zero matrix") {
    Var table = tape.leaf(random_table(5, 3, rng));
    const Tensor& e = tape.value(embed_lookup(tape, table, {0, 0, 0}));
    for (std::size_t i = 0; i < e.size(); ++i) CHECK(e[i] == 0.0);
  }
  SUBCASE("full-size shape") {
    Var table = tape.leaf(random_table(30, 300, rng));
    std::vector<int> ids(60, 2);
    const Tensor& e = tape.value(embed_lookup(tape, table, ids));
    CHECK(e.rows() == 60);
    CHECK(e.cols() == 300);
  }
  SUBCASE("repeated token gives identical rows") {
    Var table = tape.leaf(random_table(5, 4, rng));
    const Tensor& e = tape.value(embed_lookup(tape, table, {3, 3}));
    for (std::size_t j = 0; j < 4; ++j) CHECK(e.at(0, j) == e.at(1, j));
  }
  SUBCASE("out-of-range id is a contract error") {
    Var table = tape.leaf(random_table(5, 4, rng));
    CHECK_THROWS_AS(embed_lookup(tape, table, {5}), ContractError);
  }
}

TEST_CASE("conv_kgram shapes and oracles") {
  Rng rng(3);
  SUBCASE("full-size shape n=60 k=2 f=256") {
    GradTape tape;
    Var input = tape.leaf(random_tensor({60, 8}, rng));
    ConvParams p = make_conv(2, 8, 256, rng);
    const Tensor& out =
        tape.value(conv_kgram(tape, input, tape.leaf(p.filters), tape.leaf(p.bias), 2));
    CHECK(out.rows() == 59);
    CHECK(out.cols() == 256);
  }
  SUBCASE("k=1 summing filter") {
    GradTape tape;
    Tensor in = random_tensor({4, 3}, rng);
    Var input = tape.leaf(in);
    Var filters = tape.leaf(Tensor({1, 3, 1}, 1.0));
    Var bias = tape.leaf(Tensor({1}));
    const Tensor& out = tape.value(conv_kgram(tape, input, filters, bias, 1));
    for (std::size_t j = 0; j < 4; ++j) {
      double want = in.at(j, 0) + in.at(j, 1) + in.at(j, 2);
      CHECK(out[j] == doctest::Approx(want).epsilon(1e-12));
    }
  }
  SUBCASE("sliding-window dot-product oracle") {
    GradTape tape;
    Tensor in = random_tensor({6, 3}, rng);
    ConvParams p = make_conv(2, 3, 4, rng);
    const Tensor& out =
        tape.value(conv_kgram(tape, tape.leaf(in), tape.leaf(p.filters), tape.leaf(p.bias), 2));
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t o = 0; o < 4; ++o) {
        double want = p.bias[o];
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 3; ++b)
            want += in.at(j + a, b) * p.filters[(a * 3 + b) * 4 + o];
        CHECK(std::abs(out.at(j, o) - want) < 1e-12);
      }
  }
  SUBCASE("n < k names both extents") {
    GradTape tape;
    Var input = tape.leaf(random_tensor({2, 3}, rng));
    ConvParams p = make_conv(4, 3, 2, rng);
    CHECK_THROWS_WITH_AS(conv_kgram(tape, input, tape.leaf(p.filters), tape.leaf(p.bias), 4),
                         doctest::Contains("n=2"), DimensionError);
  }
  SUBCASE("location covariance under row shift") {
    GradTape tape;
    Tensor in = random_tensor({6, 3}, rng);
    Tensor shifted({6, 3});
    for (std::size_t r = 1; r < 6; ++r)
      for (std::size_t c = 0; c < 3; ++c) shifted.at(r, c) = in.at(r - 1, c);
    ConvParams p = make_conv(2, 3, 4, rng);
    Var f = tape.leaf(p.filters), b = tape.leaf(p.bias);
    // copy: the second conv call may reallocate the tape's node storage
    Tensor out1 = tape.value(conv_kgram(tape, tape.leaf(in), f, b, 2));
    const Tensor& out2 = tape.value(conv_kgram(tape, tape.leaf(shifted), f, b, 2));
    for (std::size_t j = 1; j < 5; ++j)
      for (std::size_t o = 0; o < 4; ++o)
        CHECK(out2.at(j, o) == doctest::Approx(out1.at(j - 1, o)).epsilon(1e-12));
  }
}

TEST_CASE("bigru_forward") {
  Rng rng(4);
  SUBCASE("T=1 forward and backward halves agree") {
    GradTape tape;
    LearnerParams p = make_learner(1, 3, 3, 2, 4, 2, rng);
    p.gru.bwd = p.gru.fwd;  // same weights both directions
    LearnerVars v = lift(tape, p, false);
    Var seq = tape.leaf(random_tensor({1, 3}, rng));
    const Tensor& out = tape.value(bigru_forward(tape, seq, v));
    CHECK(out.rows() == 1);
    CHECK(out.cols() == 4);
    CHECK(out[0] == out[2]);
    CHECK(out[1] == out[3]);
  }
  SUBCASE("all-zero weights give all-zero states") {
    GradTape tape;
    LearnerParams p = make_learner(1, 3, 3, 2, 4, 2, rng);
    p.for_each_tensor([](const std::string&, Tensor& t) {
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
    });
    LearnerVars v = lift(tape, p, false);
    const Tensor& out = tape.value(bigru_forward(tape, tape.leaf(random_tensor({3, 3}, rng)), v));
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);
  }
  SUBCASE("matches the unvectorized scalar recurrence oracle") {
    GradTape tape;
    std::size_t T = 4, f = 3, u = 2;
    LearnerParams p = make_learner(1, 3, f, u, 4, 2, rng);
    Tensor seq = random_tensor({T, f}, rng);
    LearnerVars v = lift(tape, p, false);
    const Tensor& out = tape.value(bigru_forward(tape, tape.leaf(seq), v));

    auto run_dir = [&](const GruDirection& d, bool reverse) {
      std::vector<std::vector<double>> states(T, std::vector<double>(u, 0.0));
      std::vector<double> h(u, 0.0);
      for (std::size_t s = 0; s < T; ++s) {
        std::size_t t = reverse ? T - 1 - s : s;
        std::vector<double> z(u), r(u), cand(u);
        for (std::size_t j = 0; j < u; ++j) {
          double az = d.b_update[j], ar = d.b_reset[j];
          for (std::size_t i = 0; i < f; ++i) {
            az += seq.at(t, i) * d.w_update.at(i, j);
            ar += seq.at(t, i) * d.w_reset.at(i, j);
          }
          for (std::size_t i = 0; i < u; ++i) {
            az += h[i] * d.u_update.at(i, j);
            ar += h[i] * d.u_reset.at(i, j);
          }
          z[j] = 1.0 / (1.0 + std::exp(-az));
          r[j] = 1.0 / (1.0 + std::exp(-ar));
        }
        for (std::size_t j = 0; j < u; ++j) {
          double ac = d.b_cand[j];
          for (std::size_t i = 0; i < f; ++i) ac += seq.at(t, i) * d.w_cand.at(i, j);
          for (std::size_t i = 0; i < u; ++i) ac += r[i] * h[i] * d.u_cand.at(i, j);
          cand[j] = std::tanh(ac);
        }
        for (std::size_t j = 0; j < u; ++j) h[j] = (1.0 - z[j]) * h[j] + z[j] * cand[j];
        states[t] = h;
      }
      return states;
    };
    auto fstates = run_dir(p.gru.fwd, false);
    auto bstates = run_dir(p.gru.bwd, true);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < u; ++j) {
        CHECK(std::abs(out.at(t, j) - fstates[t][j]) < 1e-10);
        CHECK(std::abs(out.at(t, u + j) - bstates[t][j]) < 1e-10);
      }
  }
  SUBCASE("states stay strictly inside (-1, 1)") {
    GradTape tape;
    LearnerParams p = make_learner(1, 3, 4, 3, 4, 2, rng);
    // preactivations stay below tanh's double-precision saturation point
    p.for_each_tensor([&](const std::string&, Tensor& t) {
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    });
    LearnerVars v = lift(tape, p, false);
    const Tensor& out =
        tape.value(bigru_forward(tape, tape.leaf(random_tensor({8, 4}, rng, -2.0, 2.0)), v));
    for (std::size_t i = 0; i < out.size(); ++i) {
      CHECK(out[i] > -1.0);
      CHECK(out[i] < 1.0);
    }
  }
}

TEST_CASE("attention_pool") {
  Rng rng(5);
  SUBCASE("single state takes all the weight") {
    GradTape tape;
    AttentionParams p = make_attention(4, 3, rng);
    Tensor state = random_tensor({1, 4}, rng);
    auto [alpha, weights] = attention_pool(tape, tape.leaf(state), tape.leaf(p.proj),
                                           tape.leaf(p.bias), tape.leaf(p.context));
    CHECK(tape.value(weights)[0] == 1.0);
    for (std::size_t i = 0; i < 4; ++i) CHECK(tape.value(alpha)[i] == state[i]);
  }
  SUBCASE("identical states give uniform weights and that state") {
    GradTape tape;
    AttentionParams p = make_attention(4, 3, rng);
    Tensor row = random_tensor({1, 4}, rng);
    Tensor states({5, 4});
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t j = 0; j < 4; ++j) states.at(t, j) = row[j];
    auto [alpha, weights] = attention_pool(tape, tape.leaf(states), tape.leaf(p.proj),
                                           tape.leaf(p.bias), tape.leaf(p.context));
    for (std::size_t t = 0; t < 5; ++t)
      CHECK(tape.value(weights)[t] == doctest::Approx(0.2).epsilon(1e-12));
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(tape.value(alpha)[j] == doctest::Approx(row[j]).epsilon(1e-12));
  }
  SUBCASE("matches the explicit weighted-sum oracle") {
    GradTape tape;
    AttentionParams p = make_attention(4, 3, rng);
    Tensor states = random_tensor({5, 4}, rng);
    auto [alpha, weights] = attention_pool(tape, tape.leaf(states), tape.leaf(p.proj),
                                           tape.leaf(p.bias), tape.leaf(p.context));
    const Tensor& w = tape.value(weights);
    double sum = 0.0;
    for (std::size_t t = 0; t < 5; ++t) sum += w[t];
    CHECK(std::abs(sum - 1.0) < 1e-9);
    for (std::size_t j = 0; j < 4; ++j) {
      double want = 0.0;
      for (std::size_t t = 0; t < 5; ++t) want += w[t] * states.at(t, j);
      CHECK(std::abs(tape.value(alpha)[j] - want) < 1e-12);
    }
  }
}

TEST_CASE("classify") {
  Rng rng(6);
  SUBCASE("zero everything gives the uniform distribution") {
    GradTape tape;
    Var alpha = tape.leaf(Tensor({1, 4}));
    Var w = tape.leaf(Tensor({4, 5}));
    Var b = tape.leaf(Tensor({5}));
    const Tensor& y = tape.value(classify(tape, alpha, w, b));
    for (std::size_t i = 0; i < 5; ++i) CHECK(y[i] == doctest::Approx(0.2).epsilon(1e-12));
  }
  SUBCASE("14-class head yields 14 probabilities") {
    GradTape tape;
    HeadParams p = make_head(6, 14, rng);
    const Tensor& y = tape.value(classify(tape, tape.leaf(random_tensor({1, 6}, rng)),
                                          tape.leaf(p.weight), tape.leaf(p.bias)));
    CHECK(y.size() == 14);
  }
  SUBCASE("argmax matches the pre-softmax logits") {
    GradTape tape;
    HeadParams p = make_head(6, 5, rng);
    Var alpha = tape.leaf(random_tensor({1, 6}, rng));
    Var logits = tape.add_row_bias(tape.matmul(alpha, tape.leaf(p.weight)), tape.leaf(p.bias));
    const Tensor& y =
        tape.value(classify(tape, alpha, tape.leaf(p.weight), tape.leaf(p.bias)));
    CHECK(argmax_lowest(y) == argmax_lowest(tape.value(logits)));
  }
}

TEST_CASE("learner_forward") {
  Rng rng(7);
  Tensor table = random_table(12, 3, rng);
  SUBCASE("inference is deterministic") {
    LearnerParams p = make_learner(2, 3, 4, 2, 4, 3, rng);
    std::vector<int> ids = {2, 5, 7, 1, 0, 0};
    ForwardConfig cfg{0.5, true, false};
    GradTape t1, t2;
    Rng r1(1), r2(99);
    const Tensor& y1 =
        t1.value(learner_forward(t1, ids, t1.leaf(table), lift(t1, p, false), cfg, r1));
    const Tensor& y2 =
        t2.value(learner_forward(t2, ids, t2.leaf(table), lift(t2, p, false), cfg, r2));
    for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == y2[i]);
  }
  SUBCASE("intermediate shape chain at full size") {
    Rng big(8);
    Tensor bigtable = random_table(20, 300, big);
    LearnerParams p = make_learner(2, 300, 256, 128, 256, 14, big);
    GradTape tape;
    Var tab = tape.leaf(bigtable);
    std::vector<int> ids(60, 3);
    Var e = embed_lookup(tape, tab, ids);
    CHECK(tape.value(e).rows() == 60);
    CHECK(tape.value(e).cols() == 300);
    LearnerVars v = lift(tape, p, false);
    Var c = conv_kgram(tape, e, v.conv_filters, v.conv_bias, 2);
    CHECK(tape.value(c).rows() == 59);
    CHECK(tape.value(c).cols() == 256);
    Var s = bigru_forward(tape, c, v);
    CHECK(tape.value(s).rows() == 59);
    CHECK(tape.value(s).cols() == 256);
    Var alpha = attention_pool(tape, s, v.attn_proj, v.attn_bias, v.attn_context).first;
    CHECK(tape.value(alpha).size() == 256);
    Var y = classify(tape, alpha, v.head_weight, v.head_bias);
    CHECK(tape.value(y).size() == 14);
  }
  SUBCASE("shape algebra over the (n, k) grid") {
    Rng g(9);
    for (std::size_t n = 1; n <= 12; ++n)
      for (std::size_t k = 1; k <= n; ++k) {
        GradTape tape;
        LearnerParams p = make_learner(k, 3, 4, 2, 4, 3, g);
        LearnerVars v = lift(tape, p, false);
        std::vector<int> ids(n, 2);
        Var e = embed_lookup(tape, tape.leaf(table), ids);
        Var c = conv_kgram(tape, e, v.conv_filters, v.conv_bias, k);
        CHECK(tape.value(c).rows() == n - k + 1);
        Var s = bigru_forward(tape, c, v);
        CHECK(tape.value(s).rows() == n - k + 1);
        CHECK(tape.value(s).cols() == 4);
        Var alpha = attention_pool(tape, s, v.attn_proj, v.attn_bias, v.attn_context).first;
        CHECK(tape.value(alpha).size() == 4);
        CHECK(tape.value(classify(tape, alpha, v.head_weight, v.head_bias)).size() == 3);
      }
  }
  SUBCASE("end-to-end gradients match finite differences") {
    Rng g(10);
    LearnerParams p = make_learner(2, 3, 4, 2, 4, 3, g);
    // keep preactivations off the relu kink
    p.for_each_tensor([&](const std::string&, Tensor& t) {
      for (std::size_t i = 0; i < t.size(); ++i) t[i] += g.uniform(-0.05, 0.05);
    });
    std::vector<int> ids = {2, 5, 7, 9, 3, 4};
    ForwardConfig cfg{0.0, true, false};
    std::vector<Tensor> inputs;
    std::vector<std::string> names;
    p.for_each_tensor([&](const std::string& n, Tensor& t) {
      names.push_back(n);
      inputs.push_back(t);
    });
    auto rebuild = [&]() {
      LearnerParams q = p;
      std::size_t slot = 0;
      q.for_each_tensor([&](const std::string&, Tensor& t) { t = inputs[slot++]; });
      GradTape tape;
      Rng r(0);
      Var y = learner_forward(tape, ids, tape.leaf(table), lift(tape, q, false), cfg, r);
      return tape.value(tape.pick(tape.log_clamped(y), 1))[0];
    };
    GradTape tape;
    Rng r(0);
    LearnerVars v = lift(tape, p);
    Var y = learner_forward(tape, ids, tape.leaf(table), v, cfg, r);
    tape.backward(tape.pick(tape.log_clamped(y), 1));
    std::vector<Tensor> analytic;
    for (const auto& [n, var] : v.named) analytic.push_back(tape.grad(var));
    CHECK(test_util::max_fd_error(inputs, rebuild, analytic, 1e-4) < 1e-3);
  }
  SUBCASE("a single example can be memorized in 200 adam steps") {
    Rng g(12);
    LearnerParams p = make_learner(2, 3, 4, 2, 4, 3, g);
    std::vector<int> ids = {2, 5, 7, 9, 3, 4};
    ForwardConfig cfg{0.0, true, true};
    std::vector<Tensor*> params;
    p.for_each_tensor([&](const std::string&, Tensor& t) { params.push_back(&t); });
    AdamState adam(AdamConfig{0.05, 0.9, 0.999, 1e-8});
    for (int step = 0; step < 200; ++step) {
      GradTape tape;
      Rng r(0);
      LearnerVars v = lift(tape, p);
      Var y = learner_forward(tape, ids, tape.leaf(table), v, cfg, r);
      Var loss = tape.scale(tape.pick(tape.log_clamped(y), 1), -1.0);
      tape.backward(loss);
      std::vector<Tensor> grads;
      for (const auto& [n, var] : v.named) grads.push_back(tape.grad(var));
      adam.step(params, grads);
    }
    GradTape tape;
    Rng r(0);
    ForwardConfig inf{0.0, true, false};
    const Tensor& y =
        tape.value(learner_forward(tape, ids, tape.leaf(table), lift(tape, p, false), inf, r));
    CHECK(y[1] > 0.99);
  }
}
