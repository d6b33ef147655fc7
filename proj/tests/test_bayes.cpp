#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bft/bayes.hpp"
#include "bft/model.hpp"
#include "bft/train.hpp"
#include "testutil.hpp"

using namespace bft;

namespace {

HybridModel tiny_model(bool variational, uint64_t seed = 42) {
  ModelConfig cfg;
  cfg.seq_len = 4;
  cfg.d_model = 8;
  cfg.gru_hidden = 4;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.n_blocks = 1;
  return make_model(cfg, 6, variational, seed);
}

EncodedDoc sample_doc() {
  EncodedDoc d;
  d.ids = {0, 3, 5};
  d.weights = {0.7, 0.5, 0.2};
  d.label = 1;
  return d;
}

}  // namespace

TEST_CASE("softplus basics") {
  Tape tape;
  auto out = tape.softplus(tape.constant(Tensor2D(1, 1, {0.0})));
  REQUIRE(tape.value(out).at(0, 0) == Catch::Approx(std::log(2.0)).epsilon(1e-14));
  REQUIRE(inverse_softplus(1.0) == Catch::Approx(0.5413248546).margin(1e-9));
  // round trip
  for (double s : {0.1, 0.5, 1.0, 2.0}) {
    double rho = inverse_softplus(s);
    Tape t;
    REQUIRE(t.value(t.softplus(t.constant(Tensor2D(1, 1, {rho})))).at(0, 0) ==
            Catch::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("KL to the prior") {
  SECTION("matching the prior exactly gives zero") {
    // sigma_q = softplus(rho) = 1 requires rho = softplus^-1(1)
    Parameter mu(Tensor2D(2, 3));  // zeros
    Parameter rho(Tensor2D::full(2, 3, inverse_softplus(1.0)));
    Tape tape;
    auto kl = kl_to_prior(tape, mu, rho, PriorSpec{0.0, 1.0});
    REQUIRE(tape.value(kl).at(0, 0) == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("unit mean shift costs 1/2 per entry") {
    Parameter mu(Tensor2D::full(2, 3, 1.0));
    Parameter rho(Tensor2D::full(2, 3, inverse_softplus(1.0)));
    Tape tape;
    auto kl = kl_to_prior(tape, mu, rho, PriorSpec{0.0, 1.0});
    REQUIRE(tape.value(kl).at(0, 0) == Catch::Approx(0.5 * 6).margin(1e-10));
  }
  SECTION("non-negative for random posteriors") {
    SplitMix64 rng(17);
    for (int trial = 0; trial < 100; ++trial) {
      Parameter mu(Tensor2D(2, 2));
      Parameter rho(Tensor2D(2, 2));
      mu.value.fill_uniform(rng, 3.0);
      rho.value.fill_uniform(rng, 3.0);
      double prior_sigma = 0.25 + rng.next_double() * 3.0;
      Tape tape;
      auto kl = kl_to_prior(tape, mu, rho, PriorSpec{0.0, prior_sigma});
      REQUIRE(tape.value(kl).at(0, 0) >= -1e-12);
    }
  }
  SECTION("gradients match finite differences") {
    SplitMix64 rng(18);
    Parameter mu(Tensor2D(2, 2));
    Parameter rho(Tensor2D(2, 2));
    mu.value.fill_uniform(rng, 1.0);
    rho.value.fill_uniform(rng, 1.0);
    auto loss_fn = [&]() {
      Tape t;
      return t.value(kl_to_prior(t, mu, rho, PriorSpec{0.0, 0.8})).at(0, 0);
    };
    mu.zero_grad();
    rho.zero_grad();
    {
      Tape t;
      t.backward(kl_to_prior(t, mu, rho, PriorSpec{0.0, 0.8}));
    }
    auto res = testutil::fd_check({&mu, &rho}, loss_fn);
    REQUIRE(res.ok(1e-6, 1e-8));
  }
  SECTION("bad prior sigma rejected") {
    Parameter mu(Tensor2D(1, 1));
    Parameter rho(Tensor2D(1, 1));
    Tape tape;
    REQUIRE_THROWS(kl_to_prior(tape, mu, rho, PriorSpec{0.0, 0.0}));
  }
}

TEST_CASE("sample_weights") {
  SECTION("zero noise returns mu bit-exact") {
    SplitMix64 rng(19);
    Parameter mu(Tensor2D(3, 2));
    Parameter rho(Tensor2D(3, 2));
    mu.value.fill_uniform(rng, 1.0);
    rho.value.fill_uniform(rng, 1.0);
    Tape tape;
    auto w = sample_weights(tape, mu, rho, Tensor2D(3, 2));
    REQUIRE(tape.value(w).data == mu.value.data);
  }
  SECTION("w = mu + softplus(rho) * noise elementwise") {
    Parameter mu(Tensor2D(1, 2, {0.5, -0.5}));
    Parameter rho(Tensor2D(1, 2, {0.0, inverse_softplus(2.0)}));
    Tensor2D noise(1, 2, {1.0, -3.0});
    Tape tape;
    auto w = sample_weights(tape, mu, rho, noise);
    REQUIRE(tape.value(w).at(0, 0) == Catch::Approx(0.5 + std::log(2.0)).epsilon(1e-12));
    REQUIRE(tape.value(w).at(0, 1) == Catch::Approx(-0.5 - 6.0).epsilon(1e-12));
  }
  SECTION("d w / d rho = sigmoid(rho) * noise by finite differences") {
    Parameter mu(Tensor2D(1, 1, {0.3}));
    Parameter rho(Tensor2D(1, 1, {0.0}));
    Tensor2D noise(1, 1, {1.0});
    auto loss_fn = [&]() {
      Tape t;
      return t.value(t.sum_all(sample_weights(t, mu, rho, noise))).at(0, 0);
    };
    mu.zero_grad();
    rho.zero_grad();
    {
      Tape t;
      t.backward(t.sum_all(sample_weights(t, mu, rho, noise)));
    }
    // softplus'(0) = sigmoid(0) = 0.5 exactly
    REQUIRE(rho.grad.at(0, 0) == Catch::Approx(0.5).epsilon(1e-12));
    REQUIRE(mu.grad.at(0, 0) == 1.0);
    auto res = testutil::fd_check({&mu, &rho}, loss_fn);
    REQUIRE(res.ok(1e-6, 1e-8));
  }
  SECTION("shape mismatch rejected") {
    Parameter mu(Tensor2D(2, 2));
    Parameter rho(Tensor2D(2, 2));
    Tape tape;
    REQUIRE_THROWS_AS(sample_weights(tape, mu, rho, Tensor2D(1, 2)), ShapeMismatch);
  }
}

TEST_CASE("elbo arithmetic") {
  Tape tape;
  auto ce = tape.constant(Tensor2D(1, 1, {0.7}));
  auto kl = tape.constant(Tensor2D(1, 1, {12.0}));
  SECTION("ce + kappa * kl / M") {
    auto loss = elbo_loss(tape, ce, kl, 4, 0.5);
    REQUIRE(tape.value(loss).at(0, 0) == Catch::Approx(0.7 + 0.5 * 12.0 / 4.0).epsilon(1e-15));
  }
  SECTION("kappa = 0 reduces to the cross-entropy exactly") {
    auto loss = elbo_loss(tape, ce, kl, 4, 0.0);
    REQUIRE(tape.value(loss).at(0, 0) == 0.7);
  }
  SECTION("M must be positive") { REQUIRE_THROWS(elbo_loss(tape, ce, kl, 0, 1.0)); }
}

TEST_CASE("variational head initialization") {
  HybridModel det = tiny_model(false);
  HybridModel bay = tiny_model(true);
  SECTION("mu matches the deterministic weights bit-exactly") {
    REQUIRE(bay.head.w.value.data == det.head.w.value.data);
    REQUIRE(bay.head.b.value.data == det.head.b.value.data);
  }
  SECTION("rho starts at the small constant") {
    for (double r : bay.head.w_rho.value.data) REQUIRE(r == kInitialRho);
  }
  SECTION("parameter lists differ only by w_rho") {
    REQUIRE(bay.parameters().size() == det.parameters().size() + 1);
  }
}

TEST_CASE("zero-noise variational forward equals the deterministic forward") {
  HybridModel det = tiny_model(false);
  HybridModel bay = tiny_model(true);
  EncodedDoc doc = sample_doc();
  Tensor2D zero_noise(bay.head.w.rows(), bay.head.w.cols());
  Tape t1, t2;
  auto ld = forward_logits(t1, det, doc);
  auto lb = forward_logits(t2, bay, doc, &zero_noise);
  REQUIRE(t1.value(ld).data == t2.value(lb).data);
}

TEST_CASE("kappa=0 batch loss equals the deterministic loss bit-for-bit") {
  HybridModel det = tiny_model(false);
  HybridModel bay = tiny_model(true);
  std::vector<EncodedDoc> docs = {sample_doc()};
  docs.push_back(sample_doc());
  docs[1].label = 0;
  std::vector<size_t> batch = {0, 1};
  BayesConfig off;  // enabled=false
  BayesConfig zero_kappa;
  zero_kappa.enabled = true;
  zero_kappa.kl_weight = 0.0;
  Tensor2D zero_noise(bay.head.w.rows(), bay.head.w.cols());
  Tape t1, t2;
  double a = t1.value(batch_loss(t1, det, docs, batch, off, 1, nullptr)).at(0, 0);
  double b = t2.value(batch_loss(t2, bay, docs, batch, zero_kappa, 1, &zero_noise)).at(0, 0);
  REQUIRE(std::fabs(a - b) <= 1e-12);
  REQUIRE(a == b);  // the kl term is scaled by exactly 0.0 and added
}

TEST_CASE("predictive_mean") {
  HybridModel bay = tiny_model(true);
  // widen the posterior so draws actually differ
  bay.head.w_rho.value = Tensor2D::full(bay.head.w.rows(), bay.head.w.cols(),
                                        inverse_softplus(0.5));
  EncodedDoc doc = sample_doc();

  SECTION("is a probability distribution") {
    Tensor2D p = predictive_mean(bay, doc, 16, 7);
    REQUIRE(p.at(0, 0) + p.at(0, 1) == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(p.at(0, 0) >= 0.0);
    REQUIRE(p.at(0, 1) >= 0.0);
  }
  SECTION("deterministic for a fixed seed") {
    Tensor2D a = predictive_mean(bay, doc, 8, 3);
    Tensor2D b = predictive_mean(bay, doc, 8, 3);
    REQUIRE(a.data == b.data);
  }
  SECTION("collapsed posterior makes S irrelevant") {
    bay.head.w_rho.value = Tensor2D::full(bay.head.w.rows(), bay.head.w.cols(), -40.0);
    Tensor2D a = predictive_mean(bay, doc, 1, 3);
    Tensor2D b = predictive_mean(bay, doc, 32, 99);
    REQUIRE(std::fabs(a.at(0, 0) - b.at(0, 0)) < 1e-12);
  }
  SECTION("non-variational head ignores sampling entirely") {
    HybridModel det = tiny_model(false);
    Tensor2D a = predictive_mean(det, doc, 1, 3);
    Tensor2D b = predictive_mean(det, doc, 32, 99);
    REQUIRE(a.data == b.data);
  }
  SECTION("S must be positive") { REQUIRE_THROWS(predictive_mean(bay, doc, 0, 1)); }
}

TEST_CASE("MC averaging shrinks variance like 1/S") {
  // Estimate Var over seeds of the S-sample predictive mean for S=1 and S=16.
  HybridModel bay = tiny_model(true);
  bay.head.w_rho.value = Tensor2D::full(bay.head.w.rows(), bay.head.w.cols(),
                                        inverse_softplus(1.0));
  EncodedDoc doc = sample_doc();
  auto variance = [&](int S) {
    const int reps = 64;
    double sum = 0, sq = 0;
    for (int r = 0; r < reps; ++r) {
      double p = predictive_mean(bay, doc, S, uint64_t(1000 + r)).at(0, 0);
      sum += p;
      sq += p * p;
    }
    double mean = sum / reps;
    return sq / reps - mean * mean;
  };
  double v1 = variance(1);
  double v16 = variance(16);
  REQUIRE(v1 > 0.0);
  // allow generous sampling slack around the ideal factor of 16
  REQUIRE(v16 < v1 / 4.0);
}

TEST_CASE("disabled bayes trains identically to the deterministic model") {
  HybridModel a = tiny_model(true, 5);
  HybridModel b = tiny_model(false, 5);
  std::vector<EncodedDoc> docs;
  for (int i = 0; i < 8; ++i) {
    EncodedDoc d;
    d.ids = {i % 6, (i + 2) % 6};
    d.weights = {0.8, 0.6};
    d.label = i % 2;
    docs.push_back(d);
  }
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.batch_size = 4;
  cfg.lr_milestones = {1};
  BayesConfig off;  // enabled = false even though model a has the extra rho
  SplitMix64 noise_a(seed_stream(cfg.seed, "noise")), noise_b(seed_stream(cfg.seed, "noise"));
  for (int e = 0; e < cfg.max_epochs; ++e) {
    auto ma = train_epoch(a, docs, cfg, off, e, lr_at(e, cfg), noise_a);
    auto mb = train_epoch(b, docs, cfg, off, e, lr_at(e, cfg), noise_b);
    REQUIRE(ma.mean_loss == mb.mean_loss);
    REQUIRE(ma.accuracy == mb.accuracy);
  }
  REQUIRE(a.head.w.value.data == b.head.w.value.data);
  // rho only ever sees the (absent) KL term, so it must not move
  for (double r : a.head.w_rho.value.data) REQUIRE(r == kInitialRho);
}
