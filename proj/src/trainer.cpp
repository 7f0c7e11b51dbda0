#include "gangeal/trainer.hpp"

#include "gangeal/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace gangeal {

double anneal_weight(int64_t step, int64_t anneal_steps) {
    if (anneal_steps <= 0) throw std::invalid_argument("anneal_steps must be positive");
    if (step < 0) throw std::invalid_argument("step must be nonnegative");
    const double t = std::min(static_cast<double>(step) / static_cast<double>(anneal_steps), 1.0);
    return 0.5 * (1.0 - std::cos(std::numbers::pi * t));
}

MixedLatent anneal_target(const Generator& g, const torch::Tensor& w, const torch::Tensor& c, int64_t step,
                          int64_t anneal_steps, int64_t cutoff) {
    const double a = anneal_weight(step, anneal_steps);
    auto cb = c.dim() == 1 ? c.unsqueeze(0) : c;
    auto pose = a == 0.0 ? w : (a == 1.0 ? cb : w * (1.0 - a) + cb * a);
    return g.mix(pose, w, cutoff);
}

double target_weight(const TrainConfig& config, int64_t step) {
    return config.anneal ? anneal_weight(step, config.anneal_steps) : 1.0;
}

double cosine_restart_lr(double base, int64_t step, int64_t first_cycle, int64_t period) {
    if (first_cycle <= 0 || period <= 0) throw std::invalid_argument("cosine_restart_lr: cycle lengths must be positive");
    double t = 0.0;
    if (step < first_cycle) {
        t = static_cast<double>(step) / static_cast<double>(first_cycle);
    } else {
        t = static_cast<double>((step - first_cycle) % period) / static_cast<double>(period);
    }
    return base * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

namespace {

int64_t effective_step(const TrainConfig& cfg, int64_t step) { return cfg.anneal ? step : cfg.anneal_steps; }

/// Targets of every cluster rendered with the appearance of w.
std::vector<torch::Tensor> render_targets(Model& m, const torch::Tensor& w, int64_t step) {
    std::vector<torch::Tensor> out;
    const auto& cfg = m.config.train;
    for (const auto& c : m.targets) {
        out.push_back(m.generator->synthesize(
            anneal_target(*m.generator, w, c.materialize(), effective_step(cfg, step), cfg.anneal_steps, cfg.cutoff)));
    }
    return out;
}

struct Branch {
    torch::Tensor align;  // [N]
    torch::Tensor tv;     // [N]
    torch::Tensor ident;  // [N]
};

Branch run_branch(Model& m, const torch::Tensor& x, const std::vector<torch::Tensor>& target_features, int64_t k) {
    auto r = m.network->forward(x, k);
    return {m.distance.distance_to_features(r.warped, target_features), tv_loss_per_sample(r.flow),
            identity_reg_per_sample(r.flow)};
}

} // namespace

torch::Tensor align_loss_per_sample(Model& model, const torch::Tensor& w, int64_t step, int64_t cluster, bool flipped) {
    if (cluster < 0 || cluster >= model.clusters()) throw std::invalid_argument("align_loss: cluster out of range");
    auto x = model.generator->synthesize(w);
    if (flipped) x = flip_input(x);
    const auto& cfg = model.config.train;
    auto y = model.generator->synthesize(anneal_target(*model.generator, w, model.targets[cluster].materialize(),
                                                       effective_step(cfg, step), cfg.anneal_steps, cfg.cutoff));
    return model.distance.distance_per_sample(model.network->forward(x, cluster).warped, y);
}

torch::Tensor align_loss(Model& model, const torch::Tensor& w, int64_t step, int64_t cluster, bool flipped) {
    return align_loss_per_sample(model, w, step, cluster, flipped).mean();
}

LossTerms total_loss(Model& model, const torch::Tensor& w, int64_t step) {
    if (w.size(0) == 0) throw std::invalid_argument("total_loss: empty batch");
    auto x = model.generator->synthesize(w);
    auto y = render_targets(model, w, step);
    auto b = run_branch(model, x, model.distance.features(y[0]), 0);
    const auto& cfg = model.config.train;
    LossTerms t{{}, b.align.mean(), b.tv.mean(), b.ident.mean()};
    t.total = t.align + cfg.lambda_tv * t.tv + cfg.lambda_i * t.ident;
    return t;
}

Assignment cluster_align_loss(Model& model, const torch::Tensor& w, int64_t step) {
    if (w.size(0) == 0) throw std::invalid_argument("cluster_align_loss: empty batch");
    const int64_t n = w.size(0), K = model.clusters();
    const bool use_flip = model.flip_enabled();
    auto x = model.generator->synthesize(w);
    auto xf = use_flip ? flip_input(x) : torch::Tensor();
    auto targets = render_targets(model, w, step);

    const auto inf = std::numeric_limits<float>::infinity();
    std::vector<Branch> branches(2 * K);
    auto all_align = torch::full({2 * K, n}, inf, x.options());
    for (int64_t k = 0; k < K; ++k) {
        auto feats = model.distance.features(targets[k]);
        branches[2 * k] = run_branch(model, x, feats, k);
        if (use_flip) branches[2 * k + 1] = run_branch(model, xf, feats, k);
        for (int f = 0; f < (use_flip ? 2 : 1); ++f) all_align[2 * k + f] = branches[2 * k + f].align.detach();
    }

    Assignment a;
    a.branch_align = all_align;
    auto acc = all_align.accessor<float, 2>();
    std::vector<torch::Tensor> align, tv, ident;
    for (int64_t i = 0; i < n; ++i) {
        int64_t best = 0;
        for (int64_t b = 1; b < 2 * K; ++b) {
            if (acc[b][i] < acc[best][i]) best = b;
        }
        a.cluster.push_back(best / 2);
        a.flipped.push_back(best % 2 == 1);
        align.push_back(branches[best].align[i]);
        tv.push_back(branches[best].tv[i]);
        ident.push_back(branches[best].ident[i]);
    }
    const auto& cfg = model.config.train;
    a.terms.align = torch::stack(align).mean();
    a.terms.tv = torch::stack(tv).mean();
    a.terms.ident = torch::stack(ident).mean();
    a.terms.total = a.terms.align + cfg.lambda_tv * a.terms.tv + cfg.lambda_i * a.terms.ident;
    return a;
}

std::vector<int64_t> assignment_oracle(Model& model, const torch::Tensor& images, const torch::Tensor& w) {
    torch::NoGradGuard guard;
    const int64_t n = images.size(0), K = model.clusters();
    const bool use_flip = model.flip_enabled();
    auto targets = render_targets(model, w, model.config.train.anneal_steps);
    std::vector<int64_t> best(n, 0);
    std::vector<float> best_loss(n, std::numeric_limits<float>::infinity());
    for (int64_t k = 0; k < K; ++k) {
        auto feats = model.distance.features(targets[k]);
        for (int f = 0; f < (use_flip ? 2 : 1); ++f) {
            auto input = f ? flip_input(images) : images;
            auto loss = model.distance.distance_to_features(model.network->forward(input, k).warped, feats).contiguous();
            auto acc = loss.accessor<float, 1>();
            for (int64_t i = 0; i < n; ++i) {
                if (acc[i] < best_loss[i]) {
                    best_loss[i] = acc[i];
                    best[i] = 2 * k + f;
                }
            }
        }
    }
    return best;
}

KmeansResult kmeanspp_init(const Generator& g, const FeatureDistance& distance, const LatentBasis& basis,
                           const torch::Tensor& pool, int64_t k, int64_t cutoff, int64_t n, uint64_t seed) {
    const int64_t m = pool.size(0);
    if (k < 1) throw std::invalid_argument("kmeanspp_init: K must be >= 1");
    if (k > m) throw std::invalid_argument("kmeanspp_init: K exceeds the pool size");
    torch::NoGradGuard guard;
    std::mt19937_64 rng(seed);
    KmeansResult out;
    out.indices.push_back(std::uniform_int_distribution<int64_t>(0, m - 1)(rng));

    const auto mean = basis.mean.unsqueeze(0).to(pool.scalar_type());
    auto render = [&](const torch::Tensor& w) { return g.synthesize(g.mix(w, mean, cutoff)); };
    constexpr int64_t kChunk = 256;
    std::vector<double> nearest(m, std::numeric_limits<double>::infinity());
    while (static_cast<int64_t>(out.indices.size()) < k) {
        auto centroid = distance.features(render(pool[out.indices.back()].unsqueeze(0)));
        for (int64_t start = 0; start < m; start += kChunk) {
            const int64_t len = std::min(kChunk, m - start);
            std::vector<torch::Tensor> fy;
            for (auto& f : centroid) fy.push_back(f.expand({len, f.size(1), f.size(2), f.size(3)}));
            auto d = distance.distance_to_features(render(pool.slice(0, start, start + len)), fy).to(torch::kFloat64);
            auto acc = d.accessor<double, 1>();
            for (int64_t i = 0; i < len; ++i) nearest[start + i] = std::min(nearest[start + i], acc[i]);
        }
        std::vector<double> weights(m);
        for (int64_t i = 0; i < m; ++i) weights[i] = nearest[i] * nearest[i];
        double total = 0.0;
        for (double v : weights) total += v;
        int64_t pick = 0;
        if (total > 0.0) {
            pick = std::discrete_distribution<int64_t>(weights.begin(), weights.end())(rng);
        } else {
            pick = std::uniform_int_distribution<int64_t>(0, m - 1)(rng);
        }
        out.indices.push_back(pick);
    }
    for (auto idx : out.indices) out.coefficients.push_back(TargetLatent::project(basis, pool[idx], n));
    return out;
}

torch::Tensor training_latents(const Model& model, int64_t step) {
    const uint64_t seed = model.config.train.seed * 0x9E3779B97F4A7C15ULL + 0x1000 + static_cast<uint64_t>(step);
    return model.generator->sample_latents(model.config.train.batch, seed);
}

namespace {

void write_metrics_header(std::ofstream& out) { out << "step,loss,align,tv,ident,lr_T,lr_c\n"; }

void write_metrics_row(std::ofstream& out, const Metrics& m) {
    out << m.step << ',' << std::setprecision(9) << m.loss << ',' << m.align << ',' << m.tv << ',' << m.ident << ','
        << m.lr_T << ',' << m.lr_c << '\n';
    out.flush();
}

} // namespace

TrainReport train(Model& model, const TrainOptions& options) {
    auto& cfg = model.config.train;
    cfg.validate();
    TrainReport report;
    const int64_t period = cfg.restart_period > 0 ? cfg.restart_period : cfg.anneal_steps;

    if (model.clusters() > 1) {
        auto pool = model.generator->sample_latents(cfg.kmeans_pool, cfg.seed + 2);
        auto init = kmeanspp_init(*model.generator, model.distance, *model.basis, pool, model.clusters(), cfg.cutoff,
                                  cfg.N, cfg.seed + 3);
        for (int64_t k = 0; k < model.clusters(); ++k) model.targets[k].coefficients() = init.coefficients[k];
    }

    auto adam = [&](double lr) {
        return torch::optim::AdamWOptions(lr).betas({cfg.beta1, cfg.beta2}).weight_decay(cfg.weight_decay);
    };
    torch::optim::AdamW opt_T(model.network->parameters(), adam(cfg.lr_T));
    std::vector<torch::Tensor> coeffs;
    for (auto& t : model.targets) {
        t.coefficients().set_requires_grad(cfg.N > 0);
        if (cfg.N > 0) coeffs.push_back(t.coefficients());
    }
    std::optional<torch::optim::AdamW> opt_c;
    if (!coeffs.empty()) opt_c.emplace(coeffs, adam(cfg.lr_c));

    std::ofstream metrics;
    if (options.metrics_csv) {
        metrics.open(*options.metrics_csv);
        if (!metrics) throw std::runtime_error("cannot write metrics log " + options.metrics_csv->string());
        write_metrics_header(metrics);
    }

    model.network->train();
    for (int64_t step = 0; step < cfg.total_steps; ++step) {
        const double lr_T = cosine_restart_lr(cfg.lr_T, step, cfg.anneal_steps, period);
        const double lr_c = cosine_restart_lr(cfg.lr_c, step, cfg.anneal_steps, period);
        for (auto& group : opt_T.param_groups()) static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr_T);
        if (opt_c) {
            for (auto& group : opt_c->param_groups()) static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr_c);
        }

        auto w = training_latents(model, step);
        auto terms = model.needs_assignment() ? cluster_align_loss(model, w, step).terms : total_loss(model, w, step);
        const double loss = terms.total.item<double>();
        if (!std::isfinite(loss)) {
            if (options.checkpoint_dir) save_checkpoint(model, *options.checkpoint_dir / "diverged", {{"step", step}});
            throw std::runtime_error("training diverged at step " + std::to_string(step) + " (non-finite loss)");
        }
        opt_T.zero_grad();
        if (opt_c) opt_c->zero_grad();
        terms.total.backward();
        if (cfg.grad_clip > 0) torch::nn::utils::clip_grad_norm_(model.network->parameters(), cfg.grad_clip);
        opt_T.step();
        if (opt_c) opt_c->step();

        if (step % cfg.log_every == 0 || step + 1 == cfg.total_steps) {
            Metrics m{step, loss, terms.align.item<double>(), terms.tv.item<double>(), terms.ident.item<double>(), lr_T,
                      opt_c ? lr_c : 0.0};
            report.history.push_back(m);
            if (metrics.is_open()) write_metrics_row(metrics, m);
            if (options.on_metrics) options.on_metrics(m);
        }
        if (options.checkpoint_dir && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
            save_checkpoint(model, *options.checkpoint_dir, {{"step", step + 1}});
        }
    }
    for (auto& t : model.targets) t.coefficients() = t.coefficients().detach();
    model.network->eval();

    if (model.needs_assignment() && cfg.classifier_steps > 0) {
        report.classifier_accuracy =
            train_classifier(model, cfg.classifier_steps, cfg.classifier_batch, cfg.seed + 4).train_accuracy;
    }
    if (options.checkpoint_dir) save_checkpoint(model, *options.checkpoint_dir, {{"step", cfg.total_steps}});
    return report;
}

ClassifierReport train_classifier(Model& model, int64_t steps, int64_t batch, uint64_t seed) {
    ClassifierReport report;
    if (!model.needs_assignment()) return report;
    model.classifier = ClusterClassifier(model.network->config(), seed);
    model.classifier->init_from(*model.network);
    torch::optim::Adam opt(model.classifier->parameters(), torch::optim::AdamOptions(model.config.train.lr_classifier));
    const int64_t tail_start = steps - std::max<int64_t>(steps / 10, 1);
    int64_t correct = 0, seen = 0;
    model.classifier->train();
    for (int64_t step = 0; step < steps; ++step) {
        auto w = model.generator->sample_latents(batch, seed * 0x9E3779B97F4A7C15ULL + 0x5000000 + step);
        auto x = model.generator->synthesize(w);
        if (model.flip_enabled()) {
            // half of every batch is mirrored so both flip classes are seen
            auto half = batch / 2;
            x = torch::cat({x.slice(0, 0, half), flip_input(x.slice(0, half))});
        }
        auto labels = torch::tensor(assignment_oracle(model, x, w), torch::kInt64);
        auto logits = model.classifier->forward(x);
        auto loss = torch::nn::functional::cross_entropy(logits, labels);
        opt.zero_grad();
        loss.backward();
        opt.step();
        if (step >= tail_start) {
            correct += (logits.argmax(1) == labels).sum().item<int64_t>();
            seen += batch;
        }
    }
    model.classifier->eval();
    report.train_accuracy = seen > 0 ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    return report;
}

} // namespace gangeal
