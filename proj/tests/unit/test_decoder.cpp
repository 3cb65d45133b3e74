#include <doctest.h>

#include <cmath>
#include <vector>

#include "getcap/decoder.hpp"
#include "getcap/errors.hpp"
#include "getcap/gradcheck.hpp"
#include "getcap/tokens.hpp"
#include "helpers.hpp"

using namespace getcap;
using testing::bit_equal;
using testing::bit_equal_rows;
using testing::max_abs_diff;

namespace {

DecoderConfig small_config(Controller c, std::size_t layers = 2) {
  DecoderConfig cfg;
  cfg.layers = layers;
  cfg.width = 8;
  cfg.heads = 2;
  cfg.ff_width = 12;
  cfg.keep_prob = 0.9;
  cfg.controller = c;
  cfg.max_len = 6;
  cfg.vocab_size = 9;
  return cfg;
}

EncodedImage random_encoded(std::size_t regions, std::size_t width, Rng& rng) {
  return {Tensor::randn({regions, width}, rng), Tensor::randn({1, width}, rng), Tensor()};
}

}  // namespace

TEST_CASE("gac with a zero global vector is plain cross-attention") {
  Rng rng(11);
  MultiHeadParams p = MultiHeadParams::init(8, 2, rng);
  Tensor a = Tensor::randn({4, 8}, rng);
  Tensor v = Tensor::randn({5, 8}, rng);
  GacResult r = gac_cross(a, v, Tensor::zeros({1, 8}), p);
  CHECK(max_abs_diff(r.output, multi_head(a, v, v, p)) == 0.0);
  REQUIRE(r.gate.shape() == Shape{4, 1});
  for (std::size_t i = 0; i < 4; ++i) CHECK(r.gate[i] == 0.5);
}

TEST_CASE("gac gate is one half for queries orthogonal to the global vector") {
  Rng rng(12);
  MultiHeadParams p = MultiHeadParams::init(4, 1, rng);
  Tensor g = Tensor::row({1.0, 0.0, -2.0, 0.0});
  Tensor a = Tensor::matrix({{0.0, 3.0, 0.0, -1.0}, {2.0, 0.5, 1.0, 4.0}});
  Tensor v = Tensor::randn({3, 4}, rng);
  GacResult r = gac_cross(a, v, g, p);
  CHECK(r.gate[0] == 0.5);
  CHECK(r.gate[1] == 0.5);
  Tensor base = multi_head(a, v, v, p);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t c = 0; c < 4; ++c) CHECK(r.output.at(i, c) == base.at(i, c) + 0.5 * g[c]);
  }
}

TEST_CASE("gac matches the gated-sum formula row by row") {
  Rng rng(13);
  MultiHeadParams p = MultiHeadParams::init(8, 4, rng);
  Tensor a = Tensor::randn({3, 8}, rng);
  Tensor v = Tensor::randn({6, 8}, rng);
  Tensor g = Tensor::randn({1, 8}, rng);
  GacResult r = gac_cross(a, v, g, p);
  Tensor base = multi_head(a, v, v, p);
  for (std::size_t i = 0; i < 3; ++i) {
    double dot = 0.0;
    for (std::size_t c = 0; c < 8; ++c) dot += a.at(i, c) * g[c];
    const double alpha = 1.0 / (1.0 + std::exp(-dot));
    CHECK(std::abs(r.gate[i] - alpha) < 1e-15);
    for (std::size_t c = 0; c < 8; ++c) {
      CHECK(std::abs(r.output.at(i, c) - (base.at(i, c) + alpha * g[c])) < 1e-14);
    }
  }
  CHECK_THROWS_AS(gac_cross(a, v, Tensor::zeros({1, 7}), p), DimensionError);
  CHECK_THROWS_AS(gac_cross(a, v, Tensor::zeros({2, 8}), p), DimensionError);
}

TEST_CASE("mac attends over the regions stacked with the global vector") {
  Rng rng(14);
  MultiHeadParams p = MultiHeadParams::init(8, 2, rng);
  Tensor a = Tensor::randn({3, 8}, rng);
  Tensor v = Tensor::randn({4, 8}, rng);
  Tensor g = Tensor::randn({1, 8}, rng);
  Tensor stacked = concat({v, g}, 0);
  CHECK(bit_equal(mac_cross(a, v, g, p), multi_head(a, stacked, stacked, p)));

  SUBCASE("a global vector equal to every region changes nothing") {
    Tensor same = Tensor::matrix({{0.3, -1.0, 2.0, 0.0, 0.5, 0.5, -0.2, 1.1},
                                  {0.3, -1.0, 2.0, 0.0, 0.5, 0.5, -0.2, 1.1}});
    Tensor row = slice(same, 0, 0, 1);
    CHECK(max_abs_diff(mac_cross(a, same, row, p), multi_head(a, same, same, p)) < 1e-14);
  }
  SUBCASE("a single query matches the per-head softmax over n + 1 keys") {
    Tensor q = slice(a, 0, 0, 1);
    MultiHeadTrace tr = multi_head_traced(q, stacked, stacked, p);
    for (const Tensor& w : tr.head_weights) CHECK(w.shape() == Shape{1, 5});
  }
}

TEST_CASE("controller dispatch") {
  Rng rng(15);
  MultiHeadParams p = MultiHeadParams::init(8, 2, rng);
  Tensor a = Tensor::randn({2, 8}, rng);
  Tensor v = Tensor::randn({3, 8}, rng);
  Tensor g = Tensor::randn({1, 8}, rng);
  CHECK(bit_equal(controller_cross(Controller::kNone, a, v, g, p), multi_head(a, v, v, p)));
  CHECK(bit_equal(controller_cross(Controller::kGac, a, v, g, p), gac_cross(a, v, g, p).output));
  CHECK(bit_equal(controller_cross(Controller::kMac, a, v, g, p), mac_cross(a, v, g, p)));

  for (Controller c : {Controller::kNone, Controller::kGac, Controller::kMac}) {
    CHECK(parse_controller(to_string(c)) == c);
  }
  CHECK_THROWS_AS(parse_controller("gated"), ConfigError);
}

TEST_CASE("decoder config constraints") {
  CHECK(small_config(Controller::kMac).violations().empty());
  DecoderConfig c = small_config(Controller::kMac);
  c.heads = 3;
  c.max_len = 1;
  c.vocab_size = 4;
  c.keep_prob = 0.0;
  CHECK(c.violations().size() == 4);
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("sinusoidal positions and token embedding") {
  Tensor pe = sinusoidal_positions(5, 6);
  CHECK(pe.shape() == Shape{5, 6});
  for (std::size_t i = 0; i < 6; ++i) CHECK(pe.at(0, i) == (i % 2 == 0 ? 0.0 : 1.0));
  CHECK(pe.at(3, 0) == std::sin(3.0));
  CHECK(std::abs(pe.at(3, 3) - std::cos(3.0 / std::pow(10000.0, 2.0 / 6.0))) < 1e-15);

  Rng rng(16);
  TokenEmbedding emb = TokenEmbedding::init(7, 6, 5, rng);
  const std::vector<int> toks{kBos, 5, 5};
  Tensor x = emb(toks);
  for (std::size_t c = 0; c < 6; ++c) {
    CHECK(x.at(1, c) == emb.table.at(5, c) + pe.at(1, c));
    CHECK(x.at(2, c) == emb.table.at(5, c) + pe.at(2, c));
  }
  const std::vector<int> too_long(6, kBos);
  CHECK_THROWS_AS(emb(too_long), ContractError);
}

TEST_CASE("decoder logits are causal for every controller") {
  Rng rng(17);
  for (Controller c : {Controller::kNone, Controller::kGac, Controller::kMac}) {
    const DecoderConfig cfg = small_config(c);
    DecoderParams p = DecoderParams::init(cfg, rng);
    EncodedImage enc = random_encoded(4, 8, rng);
    ForwardContext eval = ForwardContext::eval();
    const std::vector<int> a{kBos, 4, 5, 6, 7, 8};
    std::vector<int> b = a;
    b[3] = 8;
    b[5] = 4;
    Tensor la = decode_logits(a, enc, p, cfg, eval);
    Tensor lb = decode_logits(b, enc, p, cfg, eval);
    REQUIRE(la.shape() == Shape{6, 9});
    INFO("controller " << to_string(c));
    for (std::size_t t = 0; t < 3; ++t) CHECK(bit_equal_rows(la, lb, t));
    CHECK_FALSE(bit_equal_rows(la, lb, 3));

    for (std::size_t t = 1; t <= a.size(); ++t) {
      Tensor prefix = decode_logits(std::span<const int>(a).first(t), enc, p, cfg, eval);
      CHECK(bit_equal_rows(prefix, la, t - 1));
    }
  }
}

TEST_CASE("decoder layer structure") {
  Rng rng(18);
  SUBCASE("traces expose the gate only for gac") {
    for (Controller c : {Controller::kNone, Controller::kGac, Controller::kMac}) {
      const DecoderConfig cfg = small_config(c, 3);
      DecoderParams p = DecoderParams::init(cfg, rng);
      EncodedImage enc = random_encoded(3, 8, rng);
      ForwardContext eval = ForwardContext::eval();
      std::vector<DecoderLayerTrace> traces;
      const std::vector<int> toks{kBos, 6, 7};
      decode_logits(toks, enc, p, cfg, eval, &traces);
      REQUIRE(traces.size() == 3);
      for (const auto& tr : traces) {
        CHECK(tr.self_attended.shape() == Shape{3, 8});
        CHECK(tr.cross_attended.shape() == Shape{3, 8});
        CHECK(tr.gate.valid() == (c == Controller::kGac));
        if (tr.gate.valid()) {
          for (double alpha : tr.gate.data()) CHECK((alpha > 0.0 && alpha < 1.0));
        }
      }
    }
  }
  SUBCASE("the t = 1 step depends on nothing but BOS and the image") {
    const DecoderConfig cfg = small_config(Controller::kMac);
    DecoderParams p = DecoderParams::init(cfg, rng);
    EncodedImage enc = random_encoded(3, 8, rng);
    ForwardContext eval = ForwardContext::eval();
    const std::vector<int> bos{kBos};
    Tensor l1 = decode_logits(bos, enc, p, cfg, eval);
    CHECK(l1.shape() == Shape{1, 9});
    EncodedImage other = random_encoded(3, 8, rng);
    CHECK_FALSE(bit_equal(l1, decode_logits(bos, other, p, cfg, eval)));
  }
  SUBCASE("gac and mac share the self-attention sublayer") {
    DecoderConfig gac = small_config(Controller::kGac, 1);
    DecoderConfig mac = small_config(Controller::kMac, 1);
    DecoderParams p = DecoderParams::init(gac, rng);
    EncodedImage enc = random_encoded(3, 8, rng);
    ForwardContext eval = ForwardContext::eval();
    Tensor h = Tensor::randn({4, 8}, rng);
    DecoderLayerTrace tg, tm;
    Tensor og = decoder_layer(h, enc, p.layers[0], gac, eval, &tg);
    Tensor om = decoder_layer(h, enc, p.layers[0], mac, eval, &tm);
    CHECK(bit_equal(tg.self_attended, tm.self_attended));
    CHECK_FALSE(bit_equal(og, om));
  }
  SUBCASE("gac with a zero global vector equals the controller-free decoder") {
    DecoderConfig gac = small_config(Controller::kGac);
    DecoderConfig none = small_config(Controller::kNone);
    DecoderParams p = DecoderParams::init(gac, rng);
    EncodedImage enc = random_encoded(3, 8, rng);
    enc.global = Tensor::zeros({1, 8});
    ForwardContext eval = ForwardContext::eval();
    const std::vector<int> toks{kBos, 4, 5, 6};
    CHECK(max_abs_diff(decode_logits(toks, enc, p, gac, eval),
                       decode_logits(toks, enc, p, none, eval)) == 0.0);
  }
  SUBCASE("dropout is active only in training mode") {
    const DecoderConfig cfg = small_config(Controller::kGac);
    DecoderParams p = DecoderParams::init(cfg, rng);
    EncodedImage enc = random_encoded(3, 8, rng);
    const std::vector<int> toks{kBos, 4, 5};
    ForwardContext eval = ForwardContext::eval();
    Tensor e1 = decode_logits(toks, enc, p, cfg, eval);
    CHECK(bit_equal(e1, decode_logits(toks, enc, p, cfg, eval)));
    Rng r1(3), r2(3);
    ForwardContext t1 = ForwardContext::training(r1);
    ForwardContext t2 = ForwardContext::training(r2);
    Tensor d1 = decode_logits(toks, enc, p, cfg, t1);
    CHECK(bit_equal(d1, decode_logits(toks, enc, p, cfg, t2)));
    CHECK_FALSE(bit_equal(d1, e1));
  }
}

TEST_CASE("decode_logits contract errors") {
  Rng rng(19);
  const DecoderConfig cfg = small_config(Controller::kMac);
  DecoderParams p = DecoderParams::init(cfg, rng);
  EncodedImage enc = random_encoded(3, 8, rng);
  ForwardContext eval = ForwardContext::eval();
  const std::vector<int> empty;
  const std::vector<int> no_bos{4, 5};
  const std::vector<int> too_long(7, kBos);
  CHECK_THROWS_AS(decode_logits(empty, enc, p, cfg, eval), ContractError);
  CHECK_THROWS_AS(decode_logits(no_bos, enc, p, cfg, eval), ContractError);
  CHECK_THROWS_AS(decode_logits(too_long, enc, p, cfg, eval), ContractError);
}

TEST_CASE("decoder gradients match finite differences") {
  Rng rng(20);
  for (Controller c : {Controller::kNone, Controller::kGac, Controller::kMac}) {
    const DecoderConfig cfg = small_config(c);
    DecoderParams p = DecoderParams::init(cfg, rng);
    EncodedImage enc{Tensor::randn({3, 8}, rng, 1.0, true), Tensor::randn({1, 8}, rng, 1.0, true),
                     Tensor()};
    Tensor probe = Tensor::randn({4, 9}, rng);
    ParamList params;
    p.collect("dec", params);
    params.push_back({"regions", enc.regions});
    params.push_back({"global", enc.global});
    const std::vector<int> toks{kBos, 4, 5, 6};
    auto loss = [&] {
      ForwardContext eval = ForwardContext::eval();
      return sum(mul(log_softmax(decode_logits(toks, enc, p, cfg, eval), 1), probe));
    };
    GradCheckReport r = finite_diff_check(loss, params);
    INFO("controller " << to_string(c) << " max rel " << r.max_rel_error);
    CHECK(r.passed);
  }
}
