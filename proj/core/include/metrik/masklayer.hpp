#pragma once

#include <cstdint>

#include "metrik/dataset.hpp"
#include "metrik/imputer.hpp"
#include "metrik/pmd.hpp"
#include "metrik/rng.hpp"

namespace metrik {

/// Learnable design: one logit per (timepoint, metric) position, shared
/// across subjects. Keep-probability = sigmoid(logit). Protocol-ineligible
/// positions are pinned: binarized value 1, logit gradient identically 0, so
/// their stored logits stay bitwise unchanged from initialization.
struct LearnableMask {
    Matrix logits;  // [n_t, n_m]
    ProtocolMask protocol;
};

/// Numerically stable sigmoid.
double sigmoid(double x);

/// All logits set to ln((1 - e) / e): keep-probability equals the Bernoulli
/// keep rate 1 - e of a random-sampling design of efficiency e. e in (0, 1).
LearnableMask init_from_efficiency(double e, const ProtocolMask& protocol);

enum class MaskMode { train, eval };

struct MaskApplication {
    BinaryMatrix sample;    // the drawn (train) or thresholded (eval) mask
    Cube masked;            // batch with dropped positions zeroed
    BinaryCube visibility;  // sample broadcast across the batch
};

/// Train mode: one shared hard sample s = 1[sigmoid(logit) >= u] per element
/// per call, u ~ Uniform(0,1) from `rng`. Eval mode: deterministic threshold
/// sigmoid(logit) >= 0.5. Ineligible positions are always visible.
MaskApplication apply(const LearnableMask& mask, const Cube& batch, MaskMode mode,
                      Rng* rng = nullptr);

/// Soft path used by gradient checks: batch scaled by sigmoid(logits)
/// elementwise (ineligible positions by 1), no binarization.
Cube apply_soft(const LearnableMask& mask, const Cube& batch);

/// Mean of sigmoid(logits) over protocol-eligible positions. The training
/// objective adds lambda_mw times this value, pushing keep-probabilities
/// down and efficiency up.
double regularizer_mean(const LearnableMask& mask);

/// d regularizer_mean / d logits; exactly 0 at ineligible positions.
Matrix regularizer_grad(const LearnableMask& mask);

/// Threshold the mask into a design: collect iff sigmoid(logit) >= 0.5 or the
/// position is ineligible. Efficiency is filled in against the protocol.
Pmd binarize(const LearnableMask& mask);

struct MaskHyperparams {
    double lambda_mw = 1e-6;  // regularizer weight, grid {1e-7, 1e-6, 1e-5}
    double eta = 1.0;         // mask logit learning rate, grid {0.1, 0.5, 1, 5, 10}
};

struct MaskedTrainResult {
    Imputer imputer;     // final-epoch parameters (the mask stabilizes late)
    Pmd design;          // binarized final mask
    LearnableMask mask;  // final logits, for inspection
    TrainReport report;  // train_loss holds the per-epoch objective
};

/// Joint training of the imputer (at its configured learning rate) and the
/// mask logits (at eta) on masked_loss + lambda_mw * regularizer_mean for
/// seed_model.config.epochs epochs. Each step draws one shared hard mask;
/// the loss covers elements the mask dropped that are protocol-eligible and
/// natively observed. Straight-through logit gradient:
///   d loss / d logit = sigmoid'(logit) * sum_b input_grad * raw_input.
/// Divergence is flagged in the report, not thrown.
MaskedTrainResult train_masked_imputer(const Imputer& seed_model, double e,
                                       const MaskHyperparams& hp, const RctDataset& train,
                                       std::uint64_t seed);

}  // namespace metrik
