#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "metrik/dataset.hpp"
#include "metrik/masklayer.hpp"
#include "metrik/rng.hpp"

using namespace metrik;

namespace {

ProtocolMask protocol_2x2(std::initializer_list<int> eligible) {
    ProtocolMask p;
    p.eligible = BinaryMatrix(2, 2);
    auto it = eligible.begin();
    for (int t = 0; t < 2; ++t)
        for (int m = 0; m < 2; ++m) p.eligible(t, m) = static_cast<std::uint8_t>(*it++);
    return p;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

TEST_CASE("sigmoid is stable and matches the closed form") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(sigmoid(2.0) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-15));
    CHECK(sigmoid(-800.0) == 0.0);
    CHECK(sigmoid(800.0) == 1.0);
    CHECK(sigmoid(logit(0.9)) == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("init_from_efficiency sets every logit to ln((1-e)/e)") {
    const ProtocolMask p = protocol_2x2({1, 1, 1, 0});
    const LearnableMask mask = init_from_efficiency(0.1, p);
    // ln(0.9 / 0.1) = 2.19722...: keep-probability 0.9 for a 10% drop target.
    for (int t = 0; t < 2; ++t)
        for (int m = 0; m < 2; ++m) {
            CHECK(mask.logits(t, m) == doctest::Approx(std::log(9.0)).epsilon(1e-12));
            CHECK(sigmoid(mask.logits(t, m)) == doctest::Approx(0.9).epsilon(1e-12));
        }
    CHECK(init_from_efficiency(0.5, p).logits(0, 0) == doctest::Approx(0.0));
    CHECK(init_from_efficiency(0.9, p).logits(0, 0) ==
          doctest::Approx(-std::log(9.0)).epsilon(1e-12));
}

TEST_CASE("apply in train mode draws one shared mask per call") {
    const ProtocolMask p = protocol_2x2({1, 1, 1, 1});
    LearnableMask mask = init_from_efficiency(0.5, p);
    Cube batch(3, 2, 2);
    batch.fill(2.0);

    Rng rng(4);
    const MaskApplication app = apply(mask, batch, MaskMode::train, &rng);
    for (int t = 0; t < 2; ++t)
        for (int m = 0; m < 2; ++m)
            for (int b = 0; b < 3; ++b) {
                // Every subject sees the same sample.
                CHECK(app.visibility(b, t, m) == app.sample(t, m));
                CHECK(app.masked(b, t, m) == (app.sample(t, m) ? 2.0 : 0.0));
            }

    // At p = 0.5 both outcomes occur across repeated draws.
    int kept = 0;
    for (int rep = 0; rep < 64; ++rep) {
        const MaskApplication a = apply(mask, batch, MaskMode::train, &rng);
        for (int t = 0; t < 2; ++t)
            for (int m = 0; m < 2; ++m) kept += a.sample(t, m);
    }
    CHECK(kept > 64);
    CHECK(kept < 192);
}

TEST_CASE("apply in eval mode thresholds at one half") {
    const ProtocolMask p = protocol_2x2({1, 1, 1, 1});
    LearnableMask mask = init_from_efficiency(0.5, p);
    mask.logits(0, 0) = 3.0;   // keep
    mask.logits(0, 1) = -3.0;  // drop
    mask.logits(1, 0) = 0.0;   // sigmoid = 0.5 exactly -> keep
    mask.logits(1, 1) = -0.01;

    Cube batch(1, 2, 2);
    batch.fill(1.0);
    const MaskApplication app = apply(mask, batch, MaskMode::eval);
    CHECK(app.sample(0, 0) == 1);
    CHECK(app.sample(0, 1) == 0);
    CHECK(app.sample(1, 0) == 1);
    CHECK(app.sample(1, 1) == 0);
    CHECK(app.masked(0, 0, 1) == 0.0);

    // Eval mode is deterministic.
    const MaskApplication again = apply(mask, batch, MaskMode::eval);
    CHECK(again.sample == app.sample);
}

TEST_CASE("ineligible positions stay visible in every mode") {
    const ProtocolMask p = protocol_2x2({1, 0, 0, 1});
    LearnableMask mask = init_from_efficiency(0.5, p);
    mask.logits(0, 1) = -50.0;  // ineligible: would drop if it could
    mask.logits(1, 0) = -50.0;  // ineligible

    Cube batch(2, 2, 2);
    batch.fill(1.0);
    Rng rng(9);
    for (int rep = 0; rep < 20; ++rep) {
        const MaskApplication app = apply(mask, batch, MaskMode::train, &rng);
        CHECK(app.sample(0, 1) == 1);
        CHECK(app.sample(1, 0) == 1);
    }
    const MaskApplication ev = apply(mask, batch, MaskMode::eval);
    CHECK(ev.sample(0, 1) == 1);
    CHECK(ev.sample(1, 0) == 1);

    const Pmd design = binarize(mask);
    CHECK(design.collect(0, 1) == 1);
    CHECK(design.collect(1, 0) == 1);
}

TEST_CASE("regularizer averages keep-probability over eligible positions only") {
    const ProtocolMask p = protocol_2x2({1, 1, 1, 0});
    LearnableMask mask = init_from_efficiency(0.5, p);
    mask.logits(0, 0) = logit(0.2);
    mask.logits(0, 1) = logit(0.4);
    mask.logits(1, 0) = logit(0.6);
    mask.logits(1, 1) = logit(0.8);  // ineligible, must not contribute

    CHECK(regularizer_mean(mask) == doctest::Approx((0.2 + 0.4 + 0.6) / 3.0).epsilon(1e-12));

    const Matrix grad = regularizer_grad(mask);
    // d mean / d logit = sigmoid'(logit) / n_eligible at eligible positions.
    CHECK(grad(0, 0) == doctest::Approx(0.2 * 0.8 / 3.0).epsilon(1e-12));
    CHECK(grad(0, 1) == doctest::Approx(0.4 * 0.6 / 3.0).epsilon(1e-12));
    CHECK(grad(1, 0) == doctest::Approx(0.6 * 0.4 / 3.0).epsilon(1e-12));
    CHECK(grad(1, 1) == 0.0);

    SUBCASE("finite differences confirm the gradient") {
        const double eps = 1e-7;
        for (int t = 0; t < 2; ++t)
            for (int m = 0; m < 2; ++m) {
                LearnableMask up = mask, dn = mask;
                up.logits(t, m) += eps;
                dn.logits(t, m) -= eps;
                const double fd = (regularizer_mean(up) - regularizer_mean(dn)) / (2.0 * eps);
                CHECK(grad(t, m) == doctest::Approx(fd).epsilon(1e-5));
            }
    }
}

TEST_CASE("apply_soft scales by keep-probability and is differentiable by inspection") {
    const ProtocolMask p = protocol_2x2({1, 1, 0, 1});
    LearnableMask mask = init_from_efficiency(0.5, p);
    mask.logits(0, 0) = logit(0.25);
    mask.logits(1, 0) = logit(0.01);  // ineligible -> factor 1

    Cube batch(1, 2, 2);
    batch.fill(4.0);
    const Cube soft = apply_soft(mask, batch);
    CHECK(soft(0, 0, 0) == doctest::Approx(1.0));  // 4 * 0.25
    CHECK(soft(0, 0, 1) == doctest::Approx(2.0));  // 4 * 0.5
    CHECK(soft(0, 1, 0) == 4.0);                   // pinned
}

TEST_CASE("binarize mirrors eval-mode thresholding and fills in efficiency") {
    const ProtocolMask p = protocol_2x2({1, 1, 1, 1});
    LearnableMask mask = init_from_efficiency(0.5, p);
    mask.logits(0, 0) = -1.0;
    mask.logits(1, 1) = -2.0;
    const Pmd design = binarize(mask);
    CHECK(design.collect(0, 0) == 0);
    CHECK(design.collect(0, 1) == 1);
    CHECK(design.collect(1, 0) == 1);
    CHECK(design.collect(1, 1) == 0);
    CHECK(design.efficiency == doctest::Approx(0.5));
}

TEST_CASE("train_masked_imputer learns to drop redundant metrics") {
    // Metrics within a block are near-duplicates, so a mask that drops some of
    // them loses little reconstruction accuracy and wins regularizer reward.
    SynthConfig sc;
    sc.n_subjects = 24;
    sc.n_timepoints = 4;
    sc.n_metrics = 8;
    sc.block_sizes = {4, 4};
    sc.noise_sd = 0.02;
    const RctDataset train = preprocess(synthesize(sc, 60));

    ImputerConfig cfg;
    cfg.n_blocks = 1;
    cfg.n_heads = 2;
    cfg.d_model = 16;
    cfg.d_ff = 32;
    cfg.epochs = 120;
    cfg.learning_rate = 1e-3;
    const Imputer seed_model = make_imputer(cfg, 4, 8, {}, 70);

    MaskHyperparams hp;
    hp.lambda_mw = 1e-3;  // strong push so the short run visibly moves logits
    hp.eta = 5.0;
    const MaskedTrainResult res = train_masked_imputer(seed_model, 0.3, hp, train, 5);

    CHECK_FALSE(res.report.diverged);
    CHECK(res.report.train_loss.size() == 120);
    CHECK(res.design.n_timepoints() == 4);
    CHECK(res.design.n_metrics() == 8);
    CHECK(res.design.efficiency == efficiency(res.design, train.protocol));

    // Logits moved away from initialization at eligible positions.
    const double init = std::log((1.0 - 0.3) / 0.3);
    bool moved = false;
    for (int t = 0; t < 4 && !moved; ++t)
        for (int m = 0; m < 8; ++m)
            if (std::abs(res.mask.logits(t, m) - init) > 1e-3) {
                moved = true;
                break;
            }
    CHECK(moved);

    SUBCASE("the run is seed-deterministic") {
        const MaskedTrainResult res2 = train_masked_imputer(seed_model, 0.3, hp, train, 5);
        CHECK(res.mask.logits == res2.mask.logits);
        CHECK(res.imputer.w_dec == res2.imputer.w_dec);
        CHECK(res.report.train_loss == res2.report.train_loss);
    }
}

TEST_CASE("ineligible logits are bitwise untouched by training") {
    SynthConfig sc;
    sc.n_subjects = 12;
    sc.n_timepoints = 3;
    sc.n_metrics = 6;
    sc.block_sizes = {3, 3};
    sc.protocol_eligible_rate = 0.5;
    const RctDataset train = preprocess(synthesize(sc, 61));
    REQUIRE(train.protocol.eligible_count() < 18);
    REQUIRE(train.protocol.eligible_count() > 0);

    ImputerConfig cfg;
    cfg.n_blocks = 1;
    cfg.n_heads = 2;
    cfg.d_model = 8;
    cfg.d_ff = 16;
    cfg.epochs = 30;
    const Imputer seed_model = make_imputer(cfg, 3, 6, {}, 71);

    const MaskedTrainResult res = train_masked_imputer(seed_model, 0.3, {}, train, 6);
    const double init = std::log((1.0 - 0.3) / 0.3);
    for (int t = 0; t < 3; ++t)
        for (int m = 0; m < 6; ++m)
            if (!train.protocol.eligible(t, m)) {
                // Bitwise comparison: no optimizer state may leak into pinned cells.
                const double v = res.mask.logits(t, m);
                CHECK(std::memcmp(&v, &init, sizeof(double)) == 0);
                CHECK(res.design.collect(t, m) == 1);
            }
}

TEST_CASE("straight-through logit gradient matches the soft path at small step") {
    // The training step treats d loss / d logit as sigmoid'(w) * sum_b g * x.
    // With the soft forward x * sigmoid(w), the exact gradient is the same
    // expression, so the two agree where the hard sample equals 1.
    const ProtocolMask p = protocol_2x2({1, 1, 1, 1});
    LearnableMask mask = init_from_efficiency(0.3, p);

    ImputerConfig cfg;
    cfg.n_blocks = 1;
    cfg.n_heads = 2;
    cfg.d_model = 8;
    cfg.d_ff = 16;
    const Imputer model = make_imputer(cfg, 2, 2, {}, 72);

    Rng rng(15);
    Cube batch(3, 2, 2);
    for (int b = 0; b < 3; ++b)
        for (int t = 0; t < 2; ++t)
            for (int m = 0; m < 2; ++m) batch(b, t, m) = rng.uniform();
    Cube target = batch;
    BinaryCube vis(3, 2, 2);
    vis.fill(1);
    BinaryCube loss_mask(3, 2, 2);
    loss_mask.fill(1);

    // Soft-path loss as a function of one logit.
    auto soft_loss = [&](double w00) {
        LearnableMask probe = mask;
        probe.logits(0, 0) = w00;
        const Cube soft = apply_soft(probe, batch);
        const Cube pred = forward(model, soft, vis);
        return masked_loss(MetricKind::continuous, {}, pred, target, loss_mask).value;
    };
    const double eps = 1e-6;
    const double fd = (soft_loss(mask.logits(0, 0) + eps) - soft_loss(mask.logits(0, 0) - eps)) /
                      (2.0 * eps);

    // Straight-through estimate at the same point: input_grad is taken at the
    // soft-masked input so the comparison probes the same function.
    const Cube soft = apply_soft(mask, batch);
    const BackwardResult res = backward(model, soft, vis, target, loss_mask);
    const double s = sigmoid(mask.logits(0, 0));
    double ste = 0.0;
    for (int b = 0; b < 3; ++b) ste += res.input_grad(b, 0, 0) * batch(b, 0, 0);
    ste *= s * (1.0 - s);
    CHECK(ste == doctest::Approx(fd).epsilon(1e-4));
}
