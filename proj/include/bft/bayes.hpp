#pragma once

#include <cmath>
#include <stdexcept>

#include "bft/model.hpp"
#include "bft/prng.hpp"
#include "bft/tensor.hpp"

namespace bft {

struct PriorSpec {
  double mean = 0.0;
  double sigma = 1.0;
};

struct BayesConfig {
  bool enabled = false;
  double kl_weight = 1.0;
  int mc_samples = 10;
  double prior_sigma = 1.0;
};

// w = mu + softplus(rho) . noise, differentiable w.r.t. mu and rho.
inline Tape::Var sample_weights(Tape& tape, Parameter& mu, Parameter& rho,
                                const Tensor2D& noise) {
  if (!mu.value.same_shape(rho.value) || !mu.value.same_shape(noise))
    throw ShapeMismatch("sample_weights mu/rho/noise shapes differ");
  Tape::Var sigma = tape.softplus(tape.leaf(rho));
  return tape.add(tape.leaf(mu), tape.mul_const(sigma, noise));
}

// Closed-form KL( N(mu, softplus(rho)^2) || N(prior.mean, prior.sigma^2) ),
// summed over entries; recorded on the tape so it trains mu and rho.
inline Tape::Var kl_to_prior(Tape& tape, Parameter& mu, Parameter& rho, const PriorSpec& prior) {
  if (!(prior.sigma > 0.0)) throw std::invalid_argument("PriorSpec: sigma must be positive");
  Tape::Var sigma_q = tape.softplus(tape.leaf(rho));
  // ln(sigma_p) - ln(sigma_q) + (sigma_q^2 + (mu - mean)^2) / (2 sigma_p^2) - 1/2
  Tape::Var log_term = tape.add_scalar(tape.scale(tape.log_op(sigma_q), -1.0),
                                       std::log(prior.sigma));
  Tape::Var diff = tape.add_scalar(tape.leaf(mu), -prior.mean);
  Tape::Var quad = tape.scale(tape.add(tape.square(sigma_q), tape.square(diff)),
                              1.0 / (2.0 * prior.sigma * prior.sigma));
  return tape.sum_all(tape.add_scalar(tape.add(log_term, quad), -0.5));
}

// Minibatch ELBO: ce + kappa * kl / M, M = batches per epoch.
inline Tape::Var elbo_loss(Tape& tape, Tape::Var ce, Tape::Var kl_total, int batches_per_epoch,
                           double kappa) {
  if (batches_per_epoch < 1) throw std::invalid_argument("elbo_loss: M must be >= 1");
  return tape.add(ce, tape.scale(kl_total, kappa / double(batches_per_epoch)));
}

// softplus^-1, handy for constructing exact-sigma test fixtures.
inline double inverse_softplus(double sigma) { return std::log(std::expm1(sigma)); }

// Monte-Carlo predictive distribution: average of softmax outputs over S
// independent weight draws. Deterministic for a fixed seed. With a
// non-variational head this is a single deterministic forward.
inline Tensor2D predictive_mean(HybridModel& m, const EncodedDoc& doc, int samples,
                                uint64_t seed) {
  if (samples < 1) throw std::invalid_argument("predictive_mean: S must be >= 1");
  if (!m.head.variational) {
    Tape tape;
    Tape::Var logits = forward_logits(tape, m, doc);
    return softmax_probs(tape.value(logits));
  }
  SplitMix64 rng(seed_stream(seed, "predictive"));
  Tensor2D mean(1, m.cfg.n_classes);
  for (int s = 0; s < samples; ++s) {
    Tensor2D noise(m.head.w.rows(), m.head.w.cols());
    noise.fill_normal(rng);
    Tape tape;
    Tape::Var logits = forward_logits(tape, m, doc, &noise);
    Tensor2D probs = softmax_probs(tape.value(logits));
    for (int c = 0; c < mean.cols; ++c) mean.at(0, c) += probs.at(0, c) / samples;
  }
  return mean;
}

}  // namespace bft
