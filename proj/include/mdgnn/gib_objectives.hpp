#pragma once

#include "mdgnn/mdgnn_core.hpp"

namespace mdgnn {

/// Gaussian-mixture marginal prior for the representation bound, built on
/// the tape from the model's trainable prior segments (softmax weights,
/// free means, exp-parameterized variances).
struct MixturePrior {
  ad::Var log_w;   // [X], log of simplex weights
  ad::Var mu;      // [X]
  ad::Var sigma2;  // [X], strictly positive
};

/// Tape view of the model's prior parameters. Requires a family with
/// stochastic representations.
MixturePrior mixture_prior(ad::Tape& tape, const Model& m, const ForwardResult& fwd);

/// Closed-form KL(B(phi) || B(alpha)) in nats; inputs clamped to
/// [1e-7, 1-1e-7].
double kl_bernoulli(double phi, double alpha);
ad::Var kl_bernoulli(ad::Tape& tape, ad::Var phi, double alpha);

/// Structure-sampling bound: sum of Bernoulli KLs over all sampled neighbor
/// pairs, types, and layers in S_a (self edges excluded).
ad::Var a_term(ad::Tape& tape, const ForwardResult& fwd, const GibConfig& gib);

/// Representation bound for one stochastic tensor: sum over elements of
/// log N(z; mu, sigma2) - log sum_x w_x N(z; mu_x, sigma2_x).
ad::Var e_term_layer(ad::Tape& tape, ad::Var mu, ad::Var sigma2, ad::Var z,
                     const MixturePrior& prior);

/// Sum of e_term_layer over every stochastic layer in the trace.
ad::Var e_term(ad::Tape& tape, const ForwardResult& fwd, const MixturePrior& prior);

/// Weighted sum SE of the head output on h_eval [2,M,K,N]. For power heads,
/// basis supplies the per-(m,k) direction vectors. noise_power < 0 uses cfg.
ad::Var task_reward(ad::Tape& tape, ad::Var output, const Tensor& h_eval,
                    const SystemConfig& cfg, HeadKind head,
                    const ComplexTensor3* basis = nullptr, double noise_power = -1.0);

struct LossParts {
  double reward = 0.0;
  double a = 0.0;
  double e = 0.0;
};

/// loss = -reward + beta * (a_term + e_term), with the bound terms selected
/// by family: deterministic families use none, the IB families only the
/// e_term, the Bernoulli-GIB families both. supervised mode regresses the
/// output against `target` (mean squared error) instead of the SE reward.
ad::Var total_loss(ad::Tape& tape, const Model& m, const ForwardResult& fwd,
                   const Tensor& h_eval, const GibConfig& gib,
                   const ComplexTensor3* basis = nullptr, double noise_power = -1.0,
                   const Tensor* target = nullptr, LossParts* parts = nullptr);

}  // namespace mdgnn
