#include "metrik/masklayer.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "metrik/errors.hpp"

namespace metrik {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

namespace {

double sigmoid_grad(double x) {
    const double s = sigmoid(x);
    return s * (1.0 - s);
}

void check_batch(const LearnableMask& mask, const Cube& batch) {
    if (batch.dim1() != mask.logits.rows() || batch.dim2() != mask.logits.cols())
        throw ConfigError("batch shape does not match mask");
}

}  // namespace

LearnableMask init_from_efficiency(double e, const ProtocolMask& protocol) {
    if (!(e > 0.0 && e < 1.0))
        throw ConfigError("mask initialization needs efficiency strictly inside (0, 1)");
    LearnableMask mask;
    mask.protocol = protocol;
    mask.logits = Matrix(protocol.eligible.rows(), protocol.eligible.cols(),
                         std::log((1.0 - e) / e));
    return mask;
}

MaskApplication apply(const LearnableMask& mask, const Cube& batch, MaskMode mode, Rng* rng) {
    check_batch(mask, batch);
    if (mode == MaskMode::train && rng == nullptr)
        throw ConfigError("train-mode mask application needs a random stream");
    const int b = batch.dim0(), n_t = batch.dim1(), n_m = batch.dim2();
    MaskApplication out;
    out.sample = BinaryMatrix(n_t, n_m);
    for (int t = 0; t < n_t; ++t)
        for (int m = 0; m < n_m; ++m) {
            // the stream advances over every position so draws do not depend
            // on the protocol layout
            const double u = mode == MaskMode::train ? rng->uniform() : 0.5;
            const bool keep = !mask.protocol.eligible(t, m) || sigmoid(mask.logits(t, m)) >= u;
            out.sample(t, m) = keep ? 1 : 0;
        }
    out.masked = Cube(b, n_t, n_m);
    out.visibility = BinaryCube(b, n_t, n_m);
    for (int s = 0; s < b; ++s)
        for (int t = 0; t < n_t; ++t)
            for (int m = 0; m < n_m; ++m) {
                out.visibility(s, t, m) = out.sample(t, m);
                out.masked(s, t, m) = out.sample(t, m) ? batch(s, t, m) : 0.0;
            }
    return out;
}

Cube apply_soft(const LearnableMask& mask, const Cube& batch) {
    check_batch(mask, batch);
    Cube out = batch;
    for (int s = 0; s < batch.dim0(); ++s)
        for (int t = 0; t < batch.dim1(); ++t)
            for (int m = 0; m < batch.dim2(); ++m)
                if (mask.protocol.eligible(t, m)) out(s, t, m) *= sigmoid(mask.logits(t, m));
    return out;
}

double regularizer_mean(const LearnableMask& mask) {
    double sum = 0.0;
    long n = 0;
    for (int t = 0; t < mask.logits.rows(); ++t)
        for (int m = 0; m < mask.logits.cols(); ++m)
            if (mask.protocol.eligible(t, m)) {
                sum += sigmoid(mask.logits(t, m));
                ++n;
            }
    if (n == 0) throw EvalError("protocol has no eligible entries");
    return sum / static_cast<double>(n);
}

Matrix regularizer_grad(const LearnableMask& mask) {
    Matrix grad(mask.logits.rows(), mask.logits.cols());
    long n = 0;
    for (int t = 0; t < mask.logits.rows(); ++t)
        for (int m = 0; m < mask.logits.cols(); ++m)
            if (mask.protocol.eligible(t, m)) ++n;
    if (n == 0) throw EvalError("protocol has no eligible entries");
    const double inv_n = 1.0 / static_cast<double>(n);
    for (int t = 0; t < mask.logits.rows(); ++t)
        for (int m = 0; m < mask.logits.cols(); ++m)
            if (mask.protocol.eligible(t, m))
                grad(t, m) = sigmoid_grad(mask.logits(t, m)) * inv_n;
    return grad;
}

Pmd binarize(const LearnableMask& mask) {
    Pmd out;
    out.collect = BinaryMatrix(mask.logits.rows(), mask.logits.cols());
    for (int t = 0; t < mask.logits.rows(); ++t)
        for (int m = 0; m < mask.logits.cols(); ++m)
            out.collect(t, m) =
                (!mask.protocol.eligible(t, m) || sigmoid(mask.logits(t, m)) >= 0.5) ? 1 : 0;
    out.efficiency = efficiency(out, mask.protocol);
    return out;
}

MaskedTrainResult train_masked_imputer(const Imputer& seed_model, double e,
                                       const MaskHyperparams& hp, const RctDataset& train,
                                       std::uint64_t seed) {
    if (!train.preprocessed) throw ConfigError("masked training requires preprocessed data");
    const int n_train = train.n_subjects();
    const int n_t = train.n_timepoints(), n_m = train.n_metrics();
    if (seed_model.n_timepoints != n_t || seed_model.n_metrics != n_m)
        throw ConfigError("seed model shape does not match data");
    const ImputerConfig& config = seed_model.config;

    MaskedTrainResult result;
    result.imputer = seed_model;
    result.mask = init_from_efficiency(e, train.protocol);
    result.report.seed = seed;

    // raw inputs as the model would see them fully collected (categorical
    // index scaling applied); the straight-through gradient needs them
    std::vector<int> all_subjects(static_cast<std::size_t>(n_train));
    for (int s = 0; s < n_train; ++s) all_subjects[static_cast<std::size_t>(s)] = s;
    Pmd full;
    full.collect = BinaryMatrix(n_t, n_m, 1);
    std::vector<const Pmd*> full_ptrs(static_cast<std::size_t>(n_train), &full);
    const BatchTensors raw = build_batch(train, all_subjects, full_ptrs);

    RAdam imputer_opt(config.learning_rate);
    RAdam mask_opt(hp.eta);
    std::vector<Matrix*> params;
    for (auto& [name, tensor] : result.imputer.named_parameters()) params.push_back(tensor);
    std::vector<Matrix*> logit_param{&result.mask.logits};

    Rng sample_rng(derive_seed(seed, "mask-sample"));
    const bool full_batch = n_train <= config.full_batch_limit;
    const int chunk = full_batch ? n_train : config.batch_size;
    std::vector<int> order = all_subjects;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        if (!full_batch) {
            Rng shuffle_rng(derive_seed(seed, "batch-order", epoch));
            for (int i = n_train - 1; i > 0; --i)
                std::swap(order[static_cast<std::size_t>(i)],
                          order[shuffle_rng.uniform_index(static_cast<std::size_t>(i) + 1)]);
        }
        double objective_sum = 0.0;
        long steps = 0;
        for (int start = 0; start < n_train; start += chunk) {
            const int stop = std::min(n_train, start + chunk);
            const int bsz = stop - start;
            // one shared hard sample per step
            BinaryMatrix sample(n_t, n_m);
            for (int t = 0; t < n_t; ++t)
                for (int m = 0; m < n_m; ++m) {
                    const double u = sample_rng.uniform();
                    sample(t, m) = (!train.protocol.eligible(t, m) ||
                                    sigmoid(result.mask.logits(t, m)) >= u)
                                       ? 1
                                       : 0;
                }

            Cube input(bsz, n_t, n_m);
            BinaryCube visibility(bsz, n_t, n_m);
            Cube target(bsz, n_t, n_m);
            BinaryCube loss_mask(bsz, n_t, n_m);
            for (int i = 0; i < bsz; ++i) {
                const int s = order[static_cast<std::size_t>(start + i)];
                for (int t = 0; t < n_t; ++t)
                    for (int m = 0; m < n_m; ++m) {
                        const bool keep = sample(t, m) != 0;
                        visibility(i, t, m) = keep ? 1 : 0;
                        input(i, t, m) = keep ? raw.input(s, t, m) : 0.0;
                        target(i, t, m) = raw.target(s, t, m);
                        loss_mask(i, t, m) = (!keep && train.protocol.eligible(t, m) &&
                                              train.observed.collected(s, t, m))
                                                 ? 1
                                                 : 0;
                    }
            }

            BackwardResult bw = backward(result.imputer, input, visibility, target, loss_mask);
            const double reg = regularizer_mean(result.mask);
            objective_sum += bw.loss.value + hp.lambda_mw * reg;
            ++steps;
            if (!std::isfinite(bw.loss.value)) {
                result.report.diverged = true;
                result.report.diverged_epoch = epoch + 1;
                break;
            }

            // straight-through: d loss / d sample summed over the batch,
            // backward through the Bernoulli as sigmoid'(logit)
            Matrix logit_grad = regularizer_grad(result.mask);
            for (std::size_t j = 0; j < logit_grad.size(); ++j)
                logit_grad.data()[j] *= hp.lambda_mw;
            for (int t = 0; t < n_t; ++t)
                for (int m = 0; m < n_m; ++m) {
                    if (!train.protocol.eligible(t, m)) continue;  // pinned: gradient stays 0
                    double grad_s = 0.0;
                    for (int i = 0; i < bsz; ++i) {
                        const int s = order[static_cast<std::size_t>(start + i)];
                        grad_s += bw.input_grad(i, t, m) * raw.input(s, t, m);
                    }
                    logit_grad(t, m) += grad_s * sigmoid_grad(result.mask.logits(t, m));
                }

            std::vector<const Matrix*> grad_ptrs;
            for (auto& [name, tensor] : bw.grads.named_parameters()) grad_ptrs.push_back(tensor);
            imputer_opt.step(params, grad_ptrs);
            const Matrix* lg = &logit_grad;
            mask_opt.step(logit_param, {lg});
        }
        if (steps > 0) result.report.train_loss.push_back(objective_sum / steps);
        if (result.report.diverged) break;
    }

    result.report.selected_epoch = static_cast<int>(result.report.train_loss.size());
    result.design = binarize(result.mask);
    return result;
}

}  // namespace metrik
