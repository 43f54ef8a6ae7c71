#include "metrik/imputer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "metrik/errors.hpp"
#include "metrik/linalg.hpp"
#include "metrik/rng.hpp"

namespace metrik {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

void glorot_init(Matrix& w, Rng& rng) {
    const double limit = std::sqrt(6.0 / (w.rows() + w.cols()));
    for (int i = 0; i < w.rows(); ++i)
        for (int j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-limit, limit);
}

void layer_norm_forward(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix& y,
                        Matrix& xhat, std::vector<double>& inv_sd) {
    const int n = x.rows(), d = x.cols();
    y = Matrix(n, d);
    xhat = Matrix(n, d);
    inv_sd.assign(static_cast<std::size_t>(n), 0.0);
    const double* g = gain.row(0);
    const double* b = bias.row(0);
    for (int i = 0; i < n; ++i) {
        const double* row = x.row(i);
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += row[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double z = row[j] - mean;
            var += z * z;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        inv_sd[static_cast<std::size_t>(i)] = inv;
        double* hrow = xhat.row(i);
        double* yrow = y.row(i);
        for (int j = 0; j < d; ++j) {
            hrow[j] = (row[j] - mean) * inv;
            yrow[j] = g[j] * hrow[j] + b[j];
        }
    }
}

void layer_norm_backward(const Matrix& dy, const Matrix& xhat, const std::vector<double>& inv_sd,
                         const Matrix& gain, Matrix& dx, Matrix& dgain, Matrix& dbias) {
    const int n = dy.rows(), d = dy.cols();
    dx = Matrix(n, d);
    const double* g = gain.row(0);
    double* dg = dgain.row(0);
    double* db = dbias.row(0);
    for (int i = 0; i < n; ++i) {
        const double* dyr = dy.row(i);
        const double* hr = xhat.row(i);
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int j = 0; j < d; ++j) {
            const double dxh = dyr[j] * g[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * hr[j];
            dg[j] += dyr[j] * hr[j];
            db[j] += dyr[j];
        }
        const double m1 = sum_dxhat / d;
        const double m2 = sum_dxhat_xhat / d;
        const double inv = inv_sd[static_cast<std::size_t>(i)];
        double* dxr = dx.row(i);
        for (int j = 0; j < d; ++j) dxr[j] = inv * (dyr[j] * g[j] - m1 - hr[j] * m2);
    }
}

struct BlockCache {
    Matrix x_in;  // residual stream entering the block
    Matrix a1;    // ln1(x_in), the attention sublayer input
    Matrix q, k, v, ctx;
    Array3<double> attn;  // [b * n_heads, n_t, n_t] softmax rows
    Matrix ln1_xhat;
    std::vector<double> ln1_inv;
    Matrix x_mid;  // x_in + attention output
    Matrix a2;     // ln2(x_mid), the feed-forward sublayer input
    Matrix h_pre, h_act;
    Matrix ln2_xhat;
    std::vector<double> ln2_inv;
    Matrix x_out;  // x_mid + feed-forward output
};

struct ForwardCache {
    int b = 0, n_t = 0;
    Matrix flat_in;  // [N, n_m]
    std::vector<BlockCache> blocks;
    Matrix out;  // [N, out_width]
};

void check_batch_shapes(const Imputer& model, const Cube& batch, const BinaryCube& visibility) {
    if (batch.dim1() != model.n_timepoints || batch.dim2() != model.n_metrics)
        throw ConfigError("batch shape does not match model");
    if (visibility.dim0() != batch.dim0() || visibility.dim1() != batch.dim1() ||
        visibility.dim2() != batch.dim2())
        throw ConfigError("visibility shape does not match batch");
}

void run_forward(const Imputer& model, const Cube& batch, ForwardCache& cache) {
    const int b = batch.dim0(), n_t = model.n_timepoints, n_m = model.n_metrics;
    const int d = model.config.d_model, heads = model.config.n_heads;
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const int n_tokens = b * n_t;

    cache.b = b;
    cache.n_t = n_t;
    cache.flat_in = Matrix(n_tokens, n_m);
    for (int s = 0; s < b; ++s)
        for (int t = 0; t < n_t; ++t)
            for (int m = 0; m < n_m; ++m) cache.flat_in(s * n_t + t, m) = batch(s, t, m);

    Matrix x;
    matmul_nn(cache.flat_in, model.w_in, x);
    add_row_bias(x, model.b_in);
    for (int s = 0; s < b; ++s)
        for (int t = 0; t < n_t; ++t) {
            double* row = x.row(s * n_t + t);
            const double* p = model.pos.row(t);
            for (int j = 0; j < d; ++j) row[j] += p[j];
        }

    cache.blocks.resize(static_cast<std::size_t>(model.config.n_blocks));
    std::vector<double> score(static_cast<std::size_t>(n_t));
    for (int blk = 0; blk < model.config.n_blocks; ++blk) {
        const EncoderBlock& p = model.blocks[static_cast<std::size_t>(blk)];
        BlockCache& c = cache.blocks[static_cast<std::size_t>(blk)];
        c.x_in = x;

        // pre-norm: each sublayer reads a normalized copy while the residual
        // stream itself bypasses both layer norms
        layer_norm_forward(c.x_in, p.ln1_g, p.ln1_b, c.a1, c.ln1_xhat, c.ln1_inv);

        matmul_nn(c.a1, p.wq, c.q);
        add_row_bias(c.q, p.bq);
        matmul_nn(c.a1, p.wk, c.k);
        add_row_bias(c.k, p.bk);
        matmul_nn(c.a1, p.wv, c.v);
        add_row_bias(c.v, p.bv);

        c.attn = Array3<double>(b * heads, n_t, n_t);
        c.ctx = Matrix(n_tokens, d);
        for (int s = 0; s < b; ++s) {
            const int r0 = s * n_t;
            for (int h = 0; h < heads; ++h) {
                const int c0 = h * dh;
                const int a0 = s * heads + h;
                for (int i = 0; i < n_t; ++i) {
                    double mx = -std::numeric_limits<double>::infinity();
                    for (int j = 0; j < n_t; ++j) {
                        double sum = 0.0;
                        const double* qi = c.q.row(r0 + i) + c0;
                        const double* kj = c.k.row(r0 + j) + c0;
                        for (int u = 0; u < dh; ++u) sum += qi[u] * kj[u];
                        score[static_cast<std::size_t>(j)] = sum * scale;
                        mx = std::max(mx, score[static_cast<std::size_t>(j)]);
                    }
                    double z = 0.0;
                    for (int j = 0; j < n_t; ++j) {
                        const double e = std::exp(score[static_cast<std::size_t>(j)] - mx);
                        c.attn(a0, i, j) = e;
                        z += e;
                    }
                    double* ctx_row = c.ctx.row(r0 + i) + c0;
                    for (int j = 0; j < n_t; ++j) {
                        c.attn(a0, i, j) /= z;
                        const double a = c.attn(a0, i, j);
                        const double* vj = c.v.row(r0 + j) + c0;
                        for (int u = 0; u < dh; ++u) ctx_row[u] += a * vj[u];
                    }
                }
            }
        }

        Matrix attn_out;
        matmul_nn(c.ctx, p.wo, attn_out);
        add_row_bias(attn_out, p.bo);
        c.x_mid = c.x_in;
        for (int i = 0; i < n_tokens; ++i) {
            double* row = c.x_mid.row(i);
            const double* ao = attn_out.row(i);
            for (int j = 0; j < d; ++j) row[j] += ao[j];  // residual
        }

        layer_norm_forward(c.x_mid, p.ln2_g, p.ln2_b, c.a2, c.ln2_xhat, c.ln2_inv);
        matmul_nn(c.a2, p.w1, c.h_pre);
        add_row_bias(c.h_pre, p.b1);
        c.h_act = Matrix(c.h_pre.rows(), c.h_pre.cols());
        for (std::size_t i = 0; i < c.h_pre.size(); ++i) c.h_act.data()[i] = gelu(c.h_pre.data()[i]);

        Matrix ff_out;
        matmul_nn(c.h_act, p.w2, ff_out);
        add_row_bias(ff_out, p.b2);
        c.x_out = c.x_mid;
        for (int i = 0; i < n_tokens; ++i) {
            double* row = c.x_out.row(i);
            const double* fo = ff_out.row(i);
            for (int j = 0; j < d; ++j) row[j] += fo[j];  // residual
        }
        x = c.x_out;
    }

    matmul_nn(x, model.w_dec, cache.out);
    add_row_bias(cache.out, model.b_dec);
}

}  // namespace

int Imputer::out_width() const {
    if (config.metric_kind == MetricKind::continuous) return n_metrics;
    int w = 0;
    for (int k : category_counts) w += k;
    return w;
}

std::vector<std::pair<std::string, Matrix*>> Imputer::named_parameters() {
    std::vector<std::pair<std::string, Matrix*>> out;
    out.emplace_back("input.w", &w_in);
    out.emplace_back("input.b", &b_in);
    out.emplace_back("pos", &pos);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        EncoderBlock& b = blocks[i];
        out.emplace_back(p + "attn.wq", &b.wq);
        out.emplace_back(p + "attn.bq", &b.bq);
        out.emplace_back(p + "attn.wk", &b.wk);
        out.emplace_back(p + "attn.bk", &b.bk);
        out.emplace_back(p + "attn.wv", &b.wv);
        out.emplace_back(p + "attn.bv", &b.bv);
        out.emplace_back(p + "attn.wo", &b.wo);
        out.emplace_back(p + "attn.bo", &b.bo);
        out.emplace_back(p + "ln1.g", &b.ln1_g);
        out.emplace_back(p + "ln1.b", &b.ln1_b);
        out.emplace_back(p + "ff.w1", &b.w1);
        out.emplace_back(p + "ff.b1", &b.b1);
        out.emplace_back(p + "ff.w2", &b.w2);
        out.emplace_back(p + "ff.b2", &b.b2);
        out.emplace_back(p + "ln2.g", &b.ln2_g);
        out.emplace_back(p + "ln2.b", &b.ln2_b);
    }
    out.emplace_back("decoder.w", &w_dec);
    out.emplace_back("decoder.b", &b_dec);
    return out;
}

std::vector<std::pair<std::string, const Matrix*>> Imputer::named_parameters() const {
    auto mutable_view = const_cast<Imputer*>(this)->named_parameters();
    std::vector<std::pair<std::string, const Matrix*>> out;
    out.reserve(mutable_view.size());
    for (auto& [name, ptr] : mutable_view) out.emplace_back(name, ptr);
    return out;
}

Imputer make_imputer(const ImputerConfig& config, int n_timepoints, int n_metrics,
                     const std::vector<int>& category_counts, std::uint64_t seed) {
    if (config.d_model % config.n_heads != 0)
        throw ConfigError("d_model must be divisible by n_heads");
    if (config.n_blocks < 1 || config.d_model < 1 || config.d_ff < 1)
        throw ConfigError("invalid imputer architecture");
    if (config.metric_kind == MetricKind::categorical) {
        if (static_cast<int>(category_counts.size()) != n_metrics)
            throw ConfigError("category counts must cover every metric");
        for (int k : category_counts)
            if (k < 2) throw ConfigError("categorical metrics need at least 2 classes");
    }
    Imputer m;
    m.config = config;
    m.n_timepoints = n_timepoints;
    m.n_metrics = n_metrics;
    m.category_counts = config.metric_kind == MetricKind::categorical ? category_counts
                                                                      : std::vector<int>{};
    const int d = config.d_model;
    m.w_in = Matrix(n_metrics, d);
    m.b_in = Matrix(1, d);
    m.pos = Matrix(n_timepoints, d);
    m.blocks.resize(static_cast<std::size_t>(config.n_blocks));
    for (EncoderBlock& b : m.blocks) {
        b.wq = b.wk = b.wv = b.wo = Matrix(d, d);
        b.bq = b.bk = b.bv = b.bo = Matrix(1, d);
        b.ln1_g = Matrix(1, d, 1.0);
        b.ln1_b = Matrix(1, d);
        b.w1 = Matrix(d, config.d_ff);
        b.b1 = Matrix(1, config.d_ff);
        b.w2 = Matrix(config.d_ff, d);
        b.b2 = Matrix(1, d);
        b.ln2_g = Matrix(1, d, 1.0);
        b.ln2_b = Matrix(1, d);
    }
    m.w_dec = Matrix(d, m.out_width());
    m.b_dec = Matrix(1, m.out_width());

    for (auto& [name, tensor] : m.named_parameters()) {
        Rng rng(derive_seed(seed, name));
        if (name == "pos") {
            for (int i = 0; i < tensor->rows(); ++i)
                for (int j = 0; j < tensor->cols(); ++j) (*tensor)(i, j) = rng.normal(0.0, 0.02);
        } else if (name.ends_with(".w") || name.ends_with(".wq") || name.ends_with(".wk") ||
                   name.ends_with(".wv") || name.ends_with(".wo") || name.ends_with(".w1") ||
                   name.ends_with(".w2")) {
            glorot_init(*tensor, rng);
        }
        // biases stay zero, layer-norm gains stay one
    }
    return m;
}

Imputer zeros_like(const Imputer& model) {
    Imputer g = model;
    for (auto& [name, tensor] : g.named_parameters()) tensor->fill(0.0);
    return g;
}

Cube forward(const Imputer& model, const Cube& batch, const BinaryCube& visibility) {
    check_batch_shapes(model, batch, visibility);
    ForwardCache cache;
    run_forward(model, batch, cache);
    const int b = batch.dim0(), n_t = model.n_timepoints, w = model.out_width();
    Cube out(b, n_t, w);
    for (int s = 0; s < b; ++s)
        for (int t = 0; t < n_t; ++t)
            for (int j = 0; j < w; ++j) out(s, t, j) = cache.out(s * n_t + t, j);
    return out;
}

Cube decode(const Imputer& model, const Cube& raw_output) {
    if (model.config.metric_kind == MetricKind::continuous) return raw_output;
    const int b = raw_output.dim0(), n_t = raw_output.dim1();
    Cube out(b, n_t, model.n_metrics);
    for (int s = 0; s < b; ++s)
        for (int t = 0; t < n_t; ++t) {
            int offset = 0;
            for (int m = 0; m < model.n_metrics; ++m) {
                const int k = model.category_counts[static_cast<std::size_t>(m)];
                int best = 0;
                double best_v = raw_output(s, t, offset);
                for (int c = 1; c < k; ++c)
                    if (raw_output(s, t, offset + c) > best_v) {
                        best_v = raw_output(s, t, offset + c);
                        best = c;
                    }
                out(s, t, m) = best;
                offset += k;
            }
        }
    return out;
}

LossResult masked_loss(MetricKind kind, const std::vector<int>& category_counts, const Cube& pred,
                       const Cube& target, const BinaryCube& loss_mask) {
    if (target.dim0() != pred.dim0() || target.dim1() != pred.dim1())
        throw ConfigError("loss shapes mismatch");
    if (loss_mask.dim0() != target.dim0() || loss_mask.dim1() != target.dim1() ||
        loss_mask.dim2() != target.dim2())
        throw ConfigError("loss mask shape mismatch");
    LossResult out;
    double sum = 0.0;
    const int b = target.dim0(), n_t = target.dim1(), n_m = target.dim2();
    if (kind == MetricKind::continuous) {
        if (pred.dim2() != n_m) throw ConfigError("loss shapes mismatch");
        for (int s = 0; s < b; ++s)
            for (int t = 0; t < n_t; ++t)
                for (int m = 0; m < n_m; ++m) {
                    if (!loss_mask(s, t, m)) continue;
                    const double d = pred(s, t, m) - target(s, t, m);
                    sum += d * d;
                    ++out.n_elements;
                }
    } else {
        if (static_cast<int>(category_counts.size()) != n_m)
            throw ConfigError("category counts must cover every metric");
        for (int s = 0; s < b; ++s)
            for (int t = 0; t < n_t; ++t) {
                int offset = 0;
                for (int m = 0; m < n_m; ++m) {
                    const int k = category_counts[static_cast<std::size_t>(m)];
                    if (loss_mask(s, t, m)) {
                        const int cls = static_cast<int>(target(s, t, m));
                        if (cls < 0 || cls >= k) throw EvalError("target class out of range");
                        double mx = pred(s, t, offset);
                        for (int c = 1; c < k; ++c) mx = std::max(mx, pred(s, t, offset + c));
                        double z = 0.0;
                        for (int c = 0; c < k; ++c) z += std::exp(pred(s, t, offset + c) - mx);
                        sum += std::log(z) + mx - pred(s, t, offset + cls);
                        ++out.n_elements;
                    }
                    offset += k;
                }
            }
    }
    if (out.n_elements > 0) out.value = sum / static_cast<double>(out.n_elements);
    return out;
}

BackwardResult backward(const Imputer& model, const Cube& batch, const BinaryCube& visibility,
                        const Cube& target, const BinaryCube& loss_mask) {
    check_batch_shapes(model, batch, visibility);
    ForwardCache cache;
    run_forward(model, batch, cache);

    const int b = batch.dim0(), n_t = model.n_timepoints, n_m = model.n_metrics;
    const int d = model.config.d_model, heads = model.config.n_heads;
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const int n_tokens = b * n_t;
    const int w = model.out_width();

    BackwardResult result;
    result.grads = zeros_like(model);

    // loss and its gradient on the decoder output
    Matrix dout(n_tokens, w);
    double sum = 0.0;
    long n_elem = 0;
    if (model.config.metric_kind == MetricKind::continuous) {
        for (int s = 0; s < b; ++s)
            for (int t = 0; t < n_t; ++t)
                for (int m = 0; m < n_m; ++m)
                    if (loss_mask(s, t, m)) {
                        const double diff = cache.out(s * n_t + t, m) - target(s, t, m);
                        sum += diff * diff;
                        ++n_elem;
                    }
        if (n_elem > 0) {
            const double inv_n = 1.0 / static_cast<double>(n_elem);
            for (int s = 0; s < b; ++s)
                for (int t = 0; t < n_t; ++t)
                    for (int m = 0; m < n_m; ++m)
                        if (loss_mask(s, t, m))
                            dout(s * n_t + t, m) =
                                2.0 * (cache.out(s * n_t + t, m) - target(s, t, m)) * inv_n;
        }
    } else {
        // first pass counts elements, second distributes the softmax gradient
        for (int s = 0; s < b; ++s)
            for (int t = 0; t < n_t; ++t)
                for (int m = 0; m < n_m; ++m)
                    if (loss_mask(s, t, m)) ++n_elem;
        const double inv_n = n_elem > 0 ? 1.0 / static_cast<double>(n_elem) : 0.0;
        for (int s = 0; s < b; ++s)
            for (int t = 0; t < n_t; ++t) {
                int offset = 0;
                const int row = s * n_t + t;
                for (int m = 0; m < n_m; ++m) {
                    const int k = model.category_counts[static_cast<std::size_t>(m)];
                    if (loss_mask(s, t, m)) {
                        const int cls = static_cast<int>(target(s, t, m));
                        if (cls < 0 || cls >= k) throw EvalError("target class out of range");
                        double mx = cache.out(row, offset);
                        for (int c = 1; c < k; ++c) mx = std::max(mx, cache.out(row, offset + c));
                        double z = 0.0;
                        for (int c = 0; c < k; ++c) z += std::exp(cache.out(row, offset + c) - mx);
                        sum += std::log(z) + mx - cache.out(row, offset + cls);
                        for (int c = 0; c < k; ++c) {
                            const double p = std::exp(cache.out(row, offset + c) - mx) / z;
                            dout(row, offset + c) = (p - (c == cls ? 1.0 : 0.0)) * inv_n;
                        }
                    }
                    offset += k;
                }
            }
    }
    result.loss.n_elements = n_elem;
    if (n_elem > 0) result.loss.value = sum / static_cast<double>(n_elem);

    // decoder
    const Matrix& x_last =
        model.config.n_blocks > 0 ? cache.blocks.back().x_out : cache.flat_in;  // n_blocks >= 1
    matmul_tn(x_last, dout, result.grads.w_dec, true);
    accumulate_bias_grad(dout, result.grads.b_dec);
    Matrix dx;
    matmul_nt(dout, model.w_dec, dx);

    // encoder blocks in reverse
    for (int blk = model.config.n_blocks - 1; blk >= 0; --blk) {
        const EncoderBlock& p = model.blocks[static_cast<std::size_t>(blk)];
        EncoderBlock& g = result.grads.blocks[static_cast<std::size_t>(blk)];
        BlockCache& c = cache.blocks[static_cast<std::size_t>(blk)];

        // feed-forward branch; dx is d loss / d x_out
        Matrix dh_act;
        matmul_nt(dx, p.w2, dh_act);
        matmul_tn(c.h_act, dx, g.w2, true);
        accumulate_bias_grad(dx, g.b2);
        Matrix dh_pre(dh_act.rows(), dh_act.cols());
        for (std::size_t i = 0; i < dh_act.size(); ++i)
            dh_pre.data()[i] = dh_act.data()[i] * gelu_grad(c.h_pre.data()[i]);
        Matrix da2;
        matmul_nt(dh_pre, p.w1, da2);
        matmul_tn(c.a2, dh_pre, g.w1, true);
        accumulate_bias_grad(dh_pre, g.b1);

        // LN2 feeds the branch; the residual adds dx straight onto x_mid
        Matrix dx_mid;
        layer_norm_backward(da2, c.ln2_xhat, c.ln2_inv, p.ln2_g, dx_mid, g.ln2_g, g.ln2_b);
        for (std::size_t i = 0; i < dx_mid.size(); ++i) dx_mid.data()[i] += dx.data()[i];

        // attention output projection
        Matrix dctx;
        matmul_nt(dx_mid, p.wo, dctx);
        matmul_tn(c.ctx, dx_mid, g.wo, true);
        accumulate_bias_grad(dx_mid, g.bo);

        // attention
        Matrix dq(n_tokens, d), dk(n_tokens, d), dv(n_tokens, d);
        std::vector<double> da(static_cast<std::size_t>(n_t));
        std::vector<double> ds(static_cast<std::size_t>(n_t));
        for (int s = 0; s < b; ++s) {
            const int r0 = s * n_t;
            for (int h = 0; h < heads; ++h) {
                const int c0 = h * dh;
                const int a0 = s * heads + h;
                for (int i = 0; i < n_t; ++i) {
                    const double* dctx_i = dctx.row(r0 + i) + c0;
                    double dot = 0.0;
                    for (int j = 0; j < n_t; ++j) {
                        double sum_da = 0.0;
                        const double* vj = c.v.row(r0 + j) + c0;
                        for (int u = 0; u < dh; ++u) sum_da += dctx_i[u] * vj[u];
                        da[static_cast<std::size_t>(j)] = sum_da;
                        dot += sum_da * c.attn(a0, i, j);
                    }
                    for (int j = 0; j < n_t; ++j) {
                        const double a = c.attn(a0, i, j);
                        ds[static_cast<std::size_t>(j)] =
                            a * (da[static_cast<std::size_t>(j)] - dot);
                        // dV += A^T dctx
                        double* dvj = dv.row(r0 + j) + c0;
                        for (int u = 0; u < dh; ++u) dvj[u] += a * dctx_i[u];
                    }
                    double* dqi = dq.row(r0 + i) + c0;
                    for (int j = 0; j < n_t; ++j) {
                        const double dsj = ds[static_cast<std::size_t>(j)] * scale;
                        const double* kj = c.k.row(r0 + j) + c0;
                        double* dkj = dk.row(r0 + j) + c0;
                        const double* qi = c.q.row(r0 + i) + c0;
                        for (int u = 0; u < dh; ++u) {
                            dqi[u] += dsj * kj[u];
                            dkj[u] += dsj * qi[u];
                        }
                    }
                }
            }
        }

        // projections back to the normalized attention input a1
        Matrix da1;
        matmul_nt(dq, p.wq, da1);
        matmul_tn(c.a1, dq, g.wq, true);
        accumulate_bias_grad(dq, g.bq);
        matmul_nt(dk, p.wk, da1, true);
        matmul_tn(c.a1, dk, g.wk, true);
        accumulate_bias_grad(dk, g.bk);
        matmul_nt(dv, p.wv, da1, true);
        matmul_tn(c.a1, dv, g.wv, true);
        accumulate_bias_grad(dv, g.bv);

        // LN1 feeds the branch; the residual adds dx_mid straight onto x_in
        Matrix dx_in;
        layer_norm_backward(da1, c.ln1_xhat, c.ln1_inv, p.ln1_g, dx_in, g.ln1_g, g.ln1_b);
        for (std::size_t i = 0; i < dx_in.size(); ++i) dx_in.data()[i] += dx_mid.data()[i];
        dx = std::move(dx_in);
    }

    // input projection and positional encoding
    for (int s = 0; s < b; ++s)
        for (int t = 0; t < n_t; ++t) {
            const double* row = dx.row(s * n_t + t);
            double* gp = result.grads.pos.row(t);
            for (int j = 0; j < d; ++j) gp[j] += row[j];
        }
    accumulate_bias_grad(dx, result.grads.b_in);
    matmul_tn(cache.flat_in, dx, result.grads.w_in, true);
    Matrix din;
    matmul_nt(dx, model.w_in, din);
    result.input_grad = Cube(b, n_t, n_m);
    for (int s = 0; s < b; ++s)
        for (int t = 0; t < n_t; ++t)
            for (int m = 0; m < n_m; ++m) result.input_grad(s, t, m) = din(s * n_t + t, m);
    return result;
}

RAdam::RAdam(double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon),
      rho_inf_(2.0 / (1.0 - beta2) - 1.0) {}

void RAdam::step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads) {
    if (params.size() != grads.size()) throw ConfigError("optimizer parameter/gradient mismatch");
    if (m_.empty()) {
        for (const Matrix* p : params) {
            m_.emplace_back(p->rows(), p->cols());
            v_.emplace_back(p->rows(), p->cols());
        }
    }
    ++t_;
    const double beta1_t = std::pow(beta1_, static_cast<double>(t_));
    const double beta2_t = std::pow(beta2_, static_cast<double>(t_));
    const double rho_t =
        rho_inf_ - 2.0 * static_cast<double>(t_) * beta2_t / (1.0 - beta2_t);
    const bool rectified = rho_t > 4.0;
    double r_t = 0.0;
    if (rectified)
        r_t = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf_) /
                        ((rho_inf_ - 4.0) * (rho_inf_ - 2.0) * rho_t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& p = *params[i];
        const Matrix& grad = *grads[i];
        Matrix& m = m_[i];
        Matrix& v = v_[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double g = grad.data()[j];
            m.data()[j] = beta1_ * m.data()[j] + (1.0 - beta1_) * g;
            v.data()[j] = beta2_ * v.data()[j] + (1.0 - beta2_) * g * g;
            const double m_hat = m.data()[j] / (1.0 - beta1_t);
            if (rectified) {
                const double v_hat = std::sqrt(v.data()[j] / (1.0 - beta2_t));
                p.data()[j] -= lr_ * r_t * m_hat / (v_hat + eps_);
            } else {
                p.data()[j] -= lr_ * m_hat;
            }
        }
    }
}

BatchTensors build_batch(const RctDataset& data, const std::vector<int>& subjects,
                         const std::vector<const Pmd*>& design_per_subject) {
    if (subjects.size() != design_per_subject.size())
        throw ConfigError("one design per subject required");
    const int b = static_cast<int>(subjects.size());
    const int n_t = data.n_timepoints(), n_m = data.n_metrics();
    BatchTensors out;
    out.input = Cube(b, n_t, n_m);
    out.visibility = BinaryCube(b, n_t, n_m);
    out.target = Cube(b, n_t, n_m);
    out.loss_mask = BinaryCube(b, n_t, n_m);
    // categorical inputs are fed as index / (k - 1) so every channel is in [0, 1]
    std::vector<double> input_scale(static_cast<std::size_t>(n_m), 1.0);
    for (int m = 0; m < n_m; ++m)
        if (data.metrics[static_cast<std::size_t>(m)].kind == MetricKind::categorical)
            input_scale[static_cast<std::size_t>(m)] =
                1.0 / static_cast<double>(
                          data.metrics[static_cast<std::size_t>(m)].categories.size() - 1);
    for (int i = 0; i < b; ++i) {
        const int s = subjects[static_cast<std::size_t>(i)];
        const Pmd& design = *design_per_subject[static_cast<std::size_t>(i)];
        for (int t = 0; t < n_t; ++t)
            for (int m = 0; m < n_m; ++m) {
                const double value = data.values(s, t, m);
                const bool collected = design.collect(t, m) != 0;
                out.input(i, t, m) =
                    collected ? value * input_scale[static_cast<std::size_t>(m)] : 0.0;
                out.visibility(i, t, m) = collected ? 1 : 0;
                out.target(i, t, m) = value;
                out.loss_mask(i, t, m) = (!collected && data.protocol.eligible(t, m) &&
                                          data.observed.collected(s, t, m))
                                             ? 1
                                             : 0;
            }
    }
    return out;
}

std::pair<Imputer, TrainReport> train_mvts(const RctDataset& train, const RctDataset& val,
                                           const ImputerConfig& config,
                                           const MaskSource& mask_source, std::uint64_t seed) {
    if (!train.preprocessed || !val.preprocessed)
        throw ConfigError("training requires preprocessed data");
    const int n_train = train.n_subjects();
    const int n_t = train.n_timepoints(), n_m = train.n_metrics();
    std::vector<int> category_counts;
    if (config.metric_kind == MetricKind::categorical)
        for (const auto& spec : train.metrics)
            category_counts.push_back(static_cast<int>(spec.categories.size()));

    Imputer model = make_imputer(config, n_t, n_m, category_counts, derive_seed(seed, "init"));
    TrainReport report;
    report.seed = seed;
    if (config.epochs == 0) return {std::move(model), std::move(report)};

    // validation masks are drawn once so checkpoint losses are comparable
    std::vector<Pmd> val_designs;
    std::vector<const Pmd*> val_design_ptrs;
    std::vector<int> val_subjects;
    for (int s = 0; s < val.n_subjects(); ++s) {
        val_subjects.push_back(s);
        val_designs.push_back(mask_source(derive_seed(seed, "val-mask", s)));
    }
    for (const Pmd& p : val_designs) val_design_ptrs.push_back(&p);
    const BatchTensors val_batch = build_batch(val, val_subjects, val_design_ptrs);

    RAdam optimizer(config.learning_rate);
    std::vector<Matrix*> params;
    std::vector<const Matrix*> grad_ptrs;
    for (auto& [name, tensor] : model.named_parameters()) params.push_back(tensor);

    Imputer best = model;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    bool have_checkpoint = false;

    std::vector<int> order(static_cast<std::size_t>(n_train));
    for (int s = 0; s < n_train; ++s) order[static_cast<std::size_t>(s)] = s;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<Pmd> designs;
        designs.reserve(static_cast<std::size_t>(n_train));
        for (int s = 0; s < n_train; ++s)
            designs.push_back(mask_source(derive_seed(
                seed, "train-mask", static_cast<std::uint64_t>(epoch) * n_train + s)));

        // mini-batch order reshuffled per epoch when the set exceeds one batch
        std::vector<int> epoch_order = order;
        const bool full_batch = n_train <= config.full_batch_limit;
        if (!full_batch) {
            Rng shuffle_rng(derive_seed(seed, "batch-order", epoch));
            for (int i = n_train - 1; i > 0; --i)
                std::swap(epoch_order[static_cast<std::size_t>(i)],
                          epoch_order[shuffle_rng.uniform_index(static_cast<std::size_t>(i) + 1)]);
        }
        const int chunk = full_batch ? n_train : config.batch_size;

        double loss_sum = 0.0;
        long loss_n = 0;
        for (int start = 0; start < n_train; start += chunk) {
            const int stop = std::min(n_train, start + chunk);
            std::vector<int> subjects(epoch_order.begin() + start, epoch_order.begin() + stop);
            std::vector<const Pmd*> design_ptrs;
            for (int s : subjects) design_ptrs.push_back(&designs[static_cast<std::size_t>(s)]);
            const BatchTensors batch = build_batch(train, subjects, design_ptrs);
            BackwardResult bw =
                backward(model, batch.input, batch.visibility, batch.target, batch.loss_mask);
            loss_sum += bw.loss.value * static_cast<double>(bw.loss.n_elements);
            loss_n += bw.loss.n_elements;
            if (!std::isfinite(bw.loss.value)) break;
            grad_ptrs.clear();
            for (auto& [name, tensor] : bw.grads.named_parameters()) grad_ptrs.push_back(tensor);
            optimizer.step(params, grad_ptrs);
        }
        const double epoch_loss = loss_n > 0 ? loss_sum / static_cast<double>(loss_n) : 0.0;
        report.train_loss.push_back(epoch_loss);
        if (!std::isfinite(epoch_loss)) {
            report.diverged = true;
            report.diverged_epoch = epoch + 1;
            break;
        }

        const bool last = epoch + 1 == config.epochs;
        if ((epoch + 1) % config.validate_every == 0 || last) {
            const Cube val_pred =
                forward(model, val_batch.input, val_batch.visibility);
            const LossResult vl = masked_loss(config.metric_kind, category_counts, val_pred,
                                              val_batch.target, val_batch.loss_mask);
            report.val_loss.emplace_back(epoch + 1, vl.value);
            if (!std::isfinite(vl.value)) {
                report.diverged = true;
                report.diverged_epoch = epoch + 1;
                break;
            }
            if (vl.value < best_val) {
                best_val = vl.value;
                best = model;
                best_epoch = epoch + 1;
                have_checkpoint = true;
            }
        }
    }

    if (config.early_checkpointing && have_checkpoint && !report.diverged) {
        report.selected_epoch = best_epoch;
        return {std::move(best), std::move(report)};
    }
    report.selected_epoch = static_cast<int>(report.train_loss.size());
    return {std::move(model), std::move(report)};
}

}  // namespace metrik
