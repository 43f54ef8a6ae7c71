#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "metrik/array.hpp"
#include "metrik/dataset.hpp"
#include "metrik/pmd.hpp"

namespace metrik {

struct ImputerConfig {
    int n_blocks = 3;
    int n_heads = 8;
    int d_model = 64;
    int d_ff = 256;
    int epochs = 6000;
    double learning_rate = 1e-3;  // 1e-3 continuous, 1e-4 categorical
    MetricKind metric_kind = MetricKind::continuous;
    // training-loop details not fixed by the architecture
    int full_batch_limit = 256;   // above this, mini-batches of batch_size
    int batch_size = 64;
    int validate_every = 50;
    bool early_checkpointing = true;  // keep the best-validation checkpoint
};

/// Transformer encoder with a linear decoder over per-timepoint metric
/// vectors. Input width = n_m; output width = n_m (continuous) or the sum of
/// category counts (categorical, per-metric logit slices).
struct EncoderBlock {
    Matrix wq, wk, wv, wo;  // [d_model, d_model]
    Matrix bq, bk, bv, bo;  // [1, d_model]
    Matrix ln1_g, ln1_b;    // [1, d_model]
    Matrix w1, b1;          // [d_model, d_ff], [1, d_ff]
    Matrix w2, b2;          // [d_ff, d_model], [1, d_model]
    Matrix ln2_g, ln2_b;    // [1, d_model]
};

struct Imputer {
    ImputerConfig config;
    int n_timepoints = 0;
    int n_metrics = 0;
    std::vector<int> category_counts;  // per metric; empty for continuous

    Matrix w_in, b_in;  // [n_m, d_model], [1, d_model]
    Matrix pos;         // learnable positional encoding [n_t, d_model]
    std::vector<EncoderBlock> blocks;
    Matrix w_dec, b_dec;  // [d_model, out_width], [1, out_width]

    int out_width() const;
    /// Stable enumeration used by the optimizer, checkpoints, and tests.
    std::vector<std::pair<std::string, Matrix*>> named_parameters();
    std::vector<std::pair<std::string, const Matrix*>> named_parameters() const;
};

/// Fresh model with Glorot-uniform weights, zero biases, unit layer-norm
/// gains, and small-normal positional encodings, all drawn from `seed`.
Imputer make_imputer(const ImputerConfig& config, int n_timepoints, int n_metrics,
                     const std::vector<int>& category_counts, std::uint64_t seed);

/// Deep structural copy with every tensor zeroed; used as a gradient holder.
Imputer zeros_like(const Imputer& model);

/// batch: [b, n_t, n_m] with masked positions zero-filled; visibility marks
/// collected (1) vs masked-out (0) and is validated against the batch shape.
/// The returned tensor is [b, n_t, out_width].
Cube forward(const Imputer& model, const Cube& batch, const BinaryCube& visibility);

/// Decode categorical logits to per-metric class indices by argmax over each
/// metric's logit slice. Continuous models return predictions unchanged.
Cube decode(const Imputer& model, const Cube& raw_output);

struct LossResult {
    double value = 0.0;
    long n_elements = 0;
    bool empty() const { return n_elements == 0; }
};

/// Continuous: mean squared error over loss_mask = 1 entries. Categorical:
/// mean cross-entropy over loss_mask = 1 entries, with `pred` holding logits
/// and `target` holding class indices. Empty mask -> value 0, flagged.
LossResult masked_loss(MetricKind kind, const std::vector<int>& category_counts, const Cube& pred,
                       const Cube& target, const BinaryCube& loss_mask);

struct BackwardResult {
    LossResult loss;
    Imputer grads;    // same shapes as the model, tensors hold d loss / d param
    Cube input_grad;  // d loss / d batch, [b, n_t, n_m]
};

/// Forward + loss + reverse-mode gradients in one pass.
BackwardResult backward(const Imputer& model, const Cube& batch, const BinaryCube& visibility,
                        const Cube& target, const BinaryCube& loss_mask);

/// Rectified Adam, published update rule. 64-bit state throughout.
class RAdam {
public:
    explicit RAdam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                   double epsilon = 1e-8);

    /// params[i] is updated in place from grads[i]; shapes must stay fixed
    /// across calls.
    void step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads);

    long step_count() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_, rho_inf_;
    long t_ = 0;
    std::vector<Matrix> m_, v_;
};

/// Draws one [n_t, n_m] design; called once per (epoch, subject) with a
/// derived seed during initial training.
using MaskSource = std::function<Pmd(std::uint64_t seed)>;

struct TrainReport {
    std::vector<double> train_loss;                 // per epoch
    std::vector<std::pair<int, double>> val_loss;   // (epoch, loss) per checkpoint
    int selected_epoch = 0;
    std::uint64_t seed = 0;
    bool diverged = false;
    int diverged_epoch = -1;
};

/// Masked-autoencoding training: each epoch draws a fresh design per subject
/// from mask_source, zero-fills the dropped inputs, and optimizes the masked
/// loss with RAdam. Validation masks are drawn once from a fixed derived seed
/// so checkpoint losses are comparable; with early checkpointing the
/// best-validation parameters are returned, otherwise the last epoch's.
/// Divergence (non-finite loss) aborts and is flagged in the report.
std::pair<Imputer, TrainReport> train_mvts(const RctDataset& train, const RctDataset& val,
                                           const ImputerConfig& config,
                                           const MaskSource& mask_source, std::uint64_t seed);

/// Training tensors for one dataset under one design per subject.
struct BatchTensors {
    Cube input;           // values with dropped positions zeroed
    BinaryCube visibility;
    Cube target;          // ground-truth values (class indices for categorical)
    BinaryCube loss_mask; // dropped, protocol-eligible, natively observed
};

BatchTensors build_batch(const RctDataset& data, const std::vector<int>& subjects,
                         const std::vector<const Pmd*>& design_per_subject);

}  // namespace metrik
