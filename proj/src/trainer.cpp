#include "cddsa/trainer/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

#include "cddsa/config_io.hpp"
#include "cddsa/model/checkpoint.hpp"
#include "cddsa/styleaug/styleaug.hpp"

namespace cddsa::trainer {

using datagen::MultiDomainDataset;
using datagen::Split;
using nn::Array;
using nn::Shape;
using nn::Var;

std::string to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::cddsa: return "cddsa";
        case TrainMode::cddsa_gaussian: return "cddsa_gaussian";
        case TrainMode::baseline_sdnet: return "baseline_sdnet";
        case TrainMode::plus_dsct: return "plus_dsct";
        case TrainMode::plus_saac: return "plus_saac";
        case TrainMode::inter_domain: return "inter_domain";
        case TrainMode::intra_domain: return "intra_domain";
    }
    return "cddsa";
}

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "cddsa") return TrainMode::cddsa;
    if (s == "cddsa_gaussian") return TrainMode::cddsa_gaussian;
    if (s == "baseline_sdnet") return TrainMode::baseline_sdnet;
    if (s == "plus_dsct") return TrainMode::plus_dsct;
    if (s == "plus_saac") return TrainMode::plus_saac;
    if (s == "inter_domain") return TrainMode::inter_domain;
    if (s == "intra_domain") return TrainMode::intra_domain;
    throw ConfigError("unknown train mode: " + s);
}

void TrainConfig::validate(int num_train_domains) const {
    if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
    if (batch_per_domain < 1) throw ConfigError("TrainConfig: batch_per_domain must be >= 1");
    if (lr_init <= 0 || lr_decay_factor <= 0 || lr_decay_factor > 1)
        throw ConfigError("TrainConfig: invalid learning-rate settings");
    if (lr_patience_epochs < 1) throw ConfigError("TrainConfig: lr patience must be >= 1");
    if (val_fraction < 0 || val_fraction >= 1)
        throw ConfigError("TrainConfig: val_fraction must be in [0,1)");
    weights.validate();
    if (tau <= 0) throw ConfigError("TrainConfig: tau must be positive");
    if (mode_uses_dsct(mode)) {
        if (num_train_domains < 2)
            throw ConfigError("TrainConfig: contrastive modes need >= 2 training domains");
        if (batch_per_domain < 2)
            throw ConfigError(
                "TrainConfig: contrastive modes need batch_per_domain >= 2 for a positive pair");
    }
    model.validate();
}

namespace {

void pack_sample(const datagen::Sample& s, Array<float>& images, Array<int>& labels, int slot) {
    const long img_len = s.image.numel();
    std::copy_n(s.image.ptr(), img_len, images.ptr() + static_cast<long>(slot) * img_len);
    const long msk_len = s.mask.numel();
    std::copy_n(s.mask.ptr(), msk_len, labels.ptr() + static_cast<long>(slot) * msk_len);
}

Batch pack_batch(const MultiDomainDataset& dataset, const std::vector<std::size_t>& picks,
                 int per_domain) {
    const auto& first = dataset.samples.at(picks.front());
    const int C = first.image.shape[0], H = first.image.shape[1], W = first.image.shape[2];
    Batch batch;
    batch.per_domain = per_domain;
    batch.images = Array<float>(Shape{static_cast<int>(picks.size()), C, H, W});
    batch.labels = Array<int>(Shape{static_cast<int>(picks.size()), H, W});
    for (std::size_t i = 0; i < picks.size(); ++i) {
        const auto& s = dataset.samples.at(picks[i]);
        if (s.image.shape != first.image.shape)
            throw DataError("make_minibatch: mixed image sizes in dataset");
        pack_sample(s, batch.images, batch.labels, static_cast<int>(i));
        batch.domain_ids.push_back(s.domain_id);
    }
    return batch;
}

std::vector<std::size_t> draw_from_pool(std::vector<std::size_t> pool, int count, Rng& rng) {
    std::vector<std::size_t> picks;
    if (static_cast<int>(pool.size()) >= count) {
        rng.shuffle(pool);
        picks.assign(pool.begin(), pool.begin() + count);
    } else {
        for (int i = 0; i < count; ++i)
            picks.push_back(pool[static_cast<std::size_t>(rng.uniform_index(pool.size()))]);
    }
    return picks;
}

}  // namespace

Batch make_minibatch(const MultiDomainDataset& dataset, int b,
                     const std::vector<int>& train_domains, Rng& rng) {
    if (train_domains.empty()) throw TrainingError("make_minibatch: no training domains");
    std::vector<std::size_t> picks;
    for (int d : train_domains) {
        auto pool = dataset.indices(d, Split::train);
        if (pool.empty())
            throw TrainingError("make_minibatch: empty train split for domain " +
                                std::to_string(d));
        auto chosen = draw_from_pool(std::move(pool), b, rng);
        picks.insert(picks.end(), chosen.begin(), chosen.end());
    }
    return pack_batch(dataset, picks, b);
}

Batch make_pooled_minibatch(const MultiDomainDataset& dataset, int count,
                            const std::vector<int>& train_domains, Rng& rng) {
    std::vector<std::size_t> pool;
    for (int d : train_domains) {
        auto idx = dataset.indices(d, Split::train);
        pool.insert(pool.end(), idx.begin(), idx.end());
    }
    if (pool.empty()) throw TrainingError("make_pooled_minibatch: no training samples");
    Batch batch = pack_batch(dataset, draw_from_pool(std::move(pool), count, rng), 0);
    return batch;
}

namespace {

template <typename S>
void transform_plane(S* plane, int h, int w, bool fliph, bool flipv, int quarter_turns,
                     std::vector<S>& scratch) {
    scratch.assign(plane, plane + static_cast<long>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int sy = flipv ? h - 1 - y : y;
            int sx = fliph ? w - 1 - x : x;
            for (int t = 0; t < quarter_turns; ++t) {
                const int ny = w - 1 - sx;  // rotate 90 degrees counter-clockwise
                const int nx = sy;
                sy = ny;
                sx = nx;
            }
            plane[y * w + x] = scratch[static_cast<long>(sy) * w + sx];
        }
}

}  // namespace

void augment_batch(Batch& batch, bool flip, bool rot90, Rng& rng) {
    if (!flip && !rot90) return;
    const int N = batch.size(), C = batch.images.shape[1];
    const int H = batch.images.shape[2], W = batch.images.shape[3];
    if (rot90 && H != W) throw ConfigError("augment_batch: rotation needs square images");
    std::vector<float> fscratch;
    std::vector<int> iscratch;
    for (int n = 0; n < N; ++n) {
        const bool fliph = flip && rng.uniform() < 0.5;
        const bool flipv = flip && rng.uniform() < 0.5;
        const int turns = rot90 ? static_cast<int>(rng.uniform_index(4)) : 0;
        if (!fliph && !flipv && turns == 0) continue;
        for (int c = 0; c < C; ++c)
            transform_plane(batch.images.ptr() + ((static_cast<long>(n) * C + c) * H) * W, H, W,
                            fliph, flipv, turns, fscratch);
        transform_plane(batch.labels.ptr() + static_cast<long>(n) * H * W, H, W, fliph, flipv,
                        turns, iscratch);
    }
}

StepGraph build_step_graph(model::CddsaModel<float>& m, const Batch& batch,
                           const TrainConfig& cfg, TrainMode mode, std::uint64_t step_seed) {
    Rng rng_gumbel(Rng::derive(step_seed, 1));
    Rng rng_eps(Rng::derive(step_seed, 2));
    Rng rng_perm(Rng::derive(step_seed, 3));
    Rng rng_alpha(Rng::derive(step_seed, 4));
    Rng rng_gumbel_aug(Rng::derive(step_seed, 5));

    Var<float> images = Var<float>::constant(batch.images);
    Var<float> fa = m.encode_anatomy_g(images, /*training=*/true, &rng_gumbel);
    Var<float> probs = m.segment_g(fa, /*training=*/true);
    Var<float> seg = losses::seg_loss(probs, batch.labels);

    Var<float> kl = Var<float>::scalar(0.0f);
    Var<float> rec = Var<float>::scalar(0.0f);
    Var<float> dsct = Var<float>::scalar(0.0f);
    Var<float> saac = Var<float>::scalar(0.0f);

    if (mode_uses_style(mode)) {
        auto [u, v] = m.encode_style_g(images, /*training=*/true);
        kl = losses::kl_loss(u, v);
        Var<float> z = m.sample_style_g(u, v, model::SampleMode::reparameterized, &rng_eps);
        Var<float> xhat = m.decode_g(z, fa);
        rec = losses::rec_loss(images, xhat);

        if (mode_uses_dsct(mode)) {
            auto pairs = losses::build_contrastive_pairs(batch.domain_ids, batch.per_domain,
                                                         rng_perm, cfg.tau, cfg.derangement);
            dsct = losses::dsct_loss(z, pairs);
        }

        if (mode_uses_saac(mode)) {
            const int n = batch.size();
            Var<float> aug_code;
            if (mode == TrainMode::cddsa_gaussian) {
                Array<float> g(Shape{1, m.config.Z});
                for (long i = 0; i < g.numel(); ++i)
                    g[i] = static_cast<float>(rng_alpha.gaussian());
                aug_code = Var<float>::constant(std::move(g));
            } else {
                Var<float> source = cfg.saac_stop_gradient ? Var<float>::constant(z.value()) : z;
                aug_code = styleaug::augment_linear_g(
                    source, styleaug::draw_linear_weights<float>(
                                static_cast<std::size_t>(n), rng_alpha));
            }
            Var<float> z_aug = nn::repeat_rows(aug_code, n);
            Var<float> x_aug = m.decode_g(z_aug, fa);
            // The re-encoding pass runs under inference-time normalization
            // (running statistics, no stat updates): the consistency term then
            // trains exactly the encoder evaluation will use, and synthetic
            // styles cannot contaminate the running estimates.
            m.set_bn_stat_updates(false);
            Var<float> fa_aug = m.encode_anatomy_g(x_aug, /*training=*/false, &rng_gumbel_aug);
            saac = losses::saac_loss(fa, fa_aug);
            if (cfg.segment_augmented) {
                Var<float> probs_aug = m.segment_g(fa_aug, /*training=*/false);
                seg = nn::mul_scalar(
                    nn::add(seg, losses::seg_loss(probs_aug, batch.labels)), 0.5f);
            }
            m.set_bn_stat_updates(true);
        }
    }

    StepGraph out;
    out.record.seg = seg.item();
    out.record.kl = kl.item();
    out.record.rec = rec.item();
    out.record.dsct = dsct.item();
    out.record.saac = saac.item();
    out.total = losses::total_loss(seg, kl, rec, dsct, saac, cfg.weights);
    out.record.total = out.total.item();
    return out;
}

void Adam::init(const nn::ParamRefs<float>& params) {
    t = 0;
    m.clear();
    v.clear();
    for (const auto* p : params) {
        m.emplace_back(p->var.shape());
        v.emplace_back(p->var.shape());
    }
}

void Adam::step(const nn::ParamRefs<float>& params, double lr) {
    if (m.size() != params.size()) throw TrainingError("Adam: optimizer not initialized");
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& value = params[i]->var.value();
        auto& grad = params[i]->var.grad();
        auto& mi = m[i];
        auto& vi = v[i];
        for (long k = 0; k < value.numel(); ++k) {
            const double g = grad[k];
            mi[k] = static_cast<float>(beta1 * mi[k] + (1.0 - beta1) * g);
            vi[k] = static_cast<float>(beta2 * vi[k] + (1.0 - beta2) * g * g);
            const double mhat = mi[k] / bc1;
            const double vhat = vi[k] / bc2;
            value[k] = static_cast<float>(value[k] - lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

double LrScheduler::observe(double val_metric) {
    if (val_metric > best) {
        best = val_metric;
        stale = 0;
    } else {
        ++stale;
        if (stale >= patience) {
            lr *= factor;
            stale = 0;
        }
    }
    return lr;
}

namespace {

// Deterministic held-in validation slice: ~val_fraction of each train
// domain's samples (at least one).
std::vector<std::size_t> validation_indices(const MultiDomainDataset& dataset,
                                            const std::vector<int>& train_domains,
                                            double fraction, std::uint64_t seed) {
    std::vector<std::size_t> out;
    for (int d : train_domains) {
        auto idx = dataset.indices(d, Split::train);
        if (idx.empty()) continue;
        Rng rng(Rng::derive(seed, 0x7A11u, static_cast<std::uint64_t>(d)));
        rng.shuffle(idx);
        const std::size_t take =
            std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * idx.size())));
        out.insert(out.end(), idx.begin(), idx.begin() + static_cast<long>(take));
    }
    return out;
}

Array<int> argmax_labels(const Array<float>& probs_khw) {
    const int K = probs_khw.shape[0], H = probs_khw.shape[1], W = probs_khw.shape[2];
    Array<int> out(Shape{H, W});
    const long hw = static_cast<long>(H) * W;
    for (long i = 0; i < hw; ++i) {
        int arg = 0;
        float best = probs_khw[i];
        for (int c = 1; c < K; ++c)
            if (probs_khw[c * hw + i] > best) {
                best = probs_khw[c * hw + i];
                arg = c;
            }
        out[i] = arg;
    }
    return out;
}

Array<int> binarize(const Array<int>& labels, int cls) {
    Array<int> out(labels.shape);
    for (long i = 0; i < labels.numel(); ++i) out[i] = labels[i] == cls ? 1 : 0;
    return out;
}

double mean_foreground_dice(model::CddsaModel<float>& m, const MultiDomainDataset& dataset,
                            const std::vector<std::size_t>& indices) {
    if (indices.empty()) return 0.0;
    double acc = 0.0;
    long terms = 0;
    for (std::size_t idx : indices) {
        const auto& s = dataset.samples[idx];
        auto fa = m.encode_anatomy(s.image);
        const Array<int> pred = argmax_labels(m.segment(fa));
        for (int c = 1; c < dataset.num_classes; ++c) {
            acc += metrics::dice_score(binarize(pred, c), binarize(s.mask, c));
            ++terms;
        }
    }
    return acc / static_cast<double>(terms);
}

struct Snapshot {
    std::vector<Array<float>> params;
    std::vector<Array<float>> buffers;
};

Snapshot take_snapshot(model::CddsaModel<float>& m) {
    Snapshot snap;
    for (auto* p : m.params()) snap.params.push_back(p->var.value());
    for (auto& [name, buf] : m.buffers()) snap.buffers.push_back(*buf);
    return snap;
}

void restore_snapshot(model::CddsaModel<float>& m, const Snapshot& snap) {
    auto params = m.params();
    auto buffers = m.buffers();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->var.value() = snap.params[i];
    for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].second = snap.buffers[i];
}

}  // namespace

TrainOutcome train_model(model::CddsaModel<float>& m, const MultiDomainDataset& dataset,
                         const TrainConfig& cfg, const std::vector<int>& train_domains,
                         const std::filesystem::path* run_dir, int held_out_domain) {
    cfg.validate(static_cast<int>(train_domains.size()));
    if (m.config.K != dataset.num_classes)
        throw ConfigError("train_model: model K=" + std::to_string(m.config.K) +
                          " but dataset has " + std::to_string(dataset.num_classes) + " classes");

    const bool pooled = cfg.mode == TrainMode::inter_domain;
    long max_domain_size = 0, total = 0;
    for (int d : train_domains) {
        const long n = static_cast<long>(dataset.indices(d, Split::train).size());
        if (n == 0)
            throw TrainingError("train_model: empty train split for domain " + std::to_string(d));
        max_domain_size = std::max(max_domain_size, n);
        total += n;
    }
    const int batch_total = cfg.batch_per_domain * static_cast<int>(train_domains.size());
    const int steps_per_epoch = static_cast<int>(
        pooled ? (total + batch_total - 1) / batch_total
               : (max_domain_size + cfg.batch_per_domain - 1) / cfg.batch_per_domain);

    auto params = m.params();
    Adam opt;
    opt.init(params);
    LrScheduler sched{cfg.lr_init, cfg.lr_decay_factor, cfg.lr_patience_epochs};

    const auto val_idx =
        validation_indices(dataset, train_domains, cfg.val_fraction, cfg.seed);

    std::ofstream log;
    if (run_dir) {
        std::filesystem::create_directories(*run_dir);
        log.open(*run_dir / "log.jsonl");
    }

    TrainOutcome outcome;
    Snapshot best_snapshot = take_snapshot(m);
    double best_val = -1e300;
    long hygiene_batches = 0, hygiene_violations = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        StepRecord mean{};
        for (int step = 0; step < steps_per_epoch; ++step) {
            Rng batch_rng(Rng::derive(cfg.seed, 0xBA7Cu,
                                      static_cast<std::uint64_t>(epoch) * 1000003u +
                                          static_cast<std::uint64_t>(step)));
            Batch batch = pooled ? make_pooled_minibatch(dataset, batch_total, train_domains,
                                                         batch_rng)
                                 : make_minibatch(dataset, cfg.batch_per_domain, train_domains,
                                                  batch_rng);
            if (cfg.augment_flip || cfg.augment_rot90) {
                Rng aug_rng(Rng::derive(cfg.seed, 0xA06u,
                                        static_cast<std::uint64_t>(epoch) * 1000003u +
                                            static_cast<std::uint64_t>(step)));
                augment_batch(batch, cfg.augment_flip, cfg.augment_rot90, aug_rng);
            }
            ++hygiene_batches;
            for (int d : batch.domain_ids)
                if (std::find(train_domains.begin(), train_domains.end(), d) ==
                    train_domains.end()) {
                    ++hygiene_violations;
                    throw TrainingError(
                        "held-out hygiene violation: domain " + std::to_string(d) +
                        " appeared in a training batch");
                }

            const std::uint64_t step_seed =
                Rng::derive(cfg.seed, 0x57E9u,
                            static_cast<std::uint64_t>(epoch) * 1000003u +
                                static_cast<std::uint64_t>(step));
            StepGraph graph = build_step_graph(m, batch, cfg, cfg.mode, step_seed);
            for (auto* p : params) p->var.zero_grad();
            graph.total.backward();
            opt.step(params, sched.lr);

            mean.seg += graph.record.seg;
            mean.kl += graph.record.kl;
            mean.rec += graph.record.rec;
            mean.dsct += graph.record.dsct;
            mean.saac += graph.record.saac;
            mean.total += graph.record.total;
        }
        mean.seg /= steps_per_epoch;
        mean.kl /= steps_per_epoch;
        mean.rec /= steps_per_epoch;
        mean.dsct /= steps_per_epoch;
        mean.saac /= steps_per_epoch;
        mean.total /= steps_per_epoch;

        const double val = mean_foreground_dice(m, dataset, val_idx);
        const double lr_used = sched.lr;
        sched.observe(val);
        if (val > best_val) {
            best_val = val;
            best_snapshot = take_snapshot(m);
            outcome.best_epoch = epoch;
        }
        outcome.epoch_means.push_back(mean);
        outcome.val_dice.push_back(val);
        outcome.lr_trace.push_back(lr_used);

        if (log) {
            nlohmann::json line{{"epoch", epoch},         {"lr", lr_used},
                                {"seg", mean.seg},        {"kl", mean.kl},
                                {"rec", mean.rec},        {"dsct", mean.dsct},
                                {"saac", mean.saac},      {"total", mean.total},
                                {"val_dice", val}};
            log << line.dump() << "\n";
        }
    }

    restore_snapshot(m, best_snapshot);
    if (log) {
        nlohmann::json audit{{"audit", "held_out_hygiene"},
                             {"held_out_domain", held_out_domain},
                             {"train_domains", train_domains},
                             {"batches", hygiene_batches},
                             {"violations", hygiene_violations}};
        log << audit.dump() << "\n";
    }
    return outcome;
}

std::vector<metrics::CaseMetric> evaluate_model(model::CddsaModel<float>& m,
                                                const MultiDomainDataset& dataset, int domain_id,
                                                Split split) {
    const auto idx = dataset.indices(domain_id, split);
    if (idx.empty())
        throw DataError("evaluate_model: empty split for domain " + std::to_string(domain_id));
    std::vector<metrics::CaseMetric> rows;
    for (std::size_t i : idx) {
        const auto& s = dataset.samples[i];
        auto fa = m.encode_anatomy(s.image);
        const Array<int> pred = argmax_labels(m.segment(fa));
        for (int c = 1; c < dataset.num_classes; ++c) {
            metrics::CaseMetric row;
            row.case_id = s.case_id;
            row.domain_id = s.domain_id;
            row.class_id = c;
            const Array<int> pc = binarize(pred, c), gc = binarize(s.mask, c);
            row.dice_percent = metrics::dice_score(pc, gc);
            row.assd = metrics::assd(pc, gc);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

namespace {
void dump_fold_samples(model::CddsaModel<float>& m, const MultiDomainDataset& dataset,
                       int domain_id, const std::filesystem::path& dir, int count) {
    const auto idx = dataset.indices(domain_id, Split::test);
    std::filesystem::create_directories(dir);
    for (int i = 0; i < count && i < static_cast<int>(idx.size()); ++i) {
        const auto& s = dataset.samples[idx[static_cast<std::size_t>(i)]];
        auto fa = m.encode_anatomy(s.image);
        const Array<int> pred = argmax_labels(m.segment(fa));
        Array<float> img = s.image;
        if (img.shape[0] == 1) {  // promote gray to rgb for the grid
            Array<float> rgb(Shape{3, img.shape[1], img.shape[2]});
            for (int c = 0; c < 3; ++c)
                std::copy_n(img.ptr(), img.numel(), rgb.ptr() + c * img.numel());
            img = std::move(rgb);
        }
        const auto grid = datagen::make_grid(
            {img, datagen::colorize_labels(s.mask, dataset.num_classes),
             datagen::colorize_labels(pred, dataset.num_classes)});
        datagen::write_image_png(dir / (s.case_id + "_panel.png"), grid);
    }
}
}  // namespace

std::vector<FoldResult> run_lodo(const MultiDomainDataset& dataset, const TrainConfig& cfg,
                                 const std::filesystem::path& out_root, int jobs,
                                 std::optional<int> only_fold) {
    if (dataset.num_domains < 2) throw ConfigError("run_lodo: need at least 2 domains");
    std::vector<int> folds;
    for (int d = 0; d < dataset.num_domains; ++d)
        if (!only_fold || *only_fold == d) folds.push_back(d);
    if (folds.empty()) throw ConfigError("run_lodo: requested fold does not exist");

    std::vector<FoldResult> results(folds.size());
    std::vector<std::exception_ptr> errors(folds.size());
    std::atomic<std::size_t> next{0};

    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= folds.size()) return;
            const int d = folds[i];
            try {
                FoldResult fr;
                fr.plan.held_out_domain = d;
                if (cfg.mode == TrainMode::intra_domain) {
                    fr.plan.train_domains = {d};
                } else {
                    for (int t = 0; t < dataset.num_domains; ++t)
                        if (t != d) fr.plan.train_domains.push_back(t);
                }
                fr.run_dir = out_root / ("fold_" + std::to_string(d));
                std::filesystem::create_directories(fr.run_dir);

                TrainConfig fold_cfg = cfg;
                fold_cfg.seed = Rng::derive(cfg.seed, 0xF01Du, static_cast<std::uint64_t>(d));
                model::CddsaModel<float> m(cfg.model, fold_cfg.seed);
                train_model(m, dataset, fold_cfg, fr.plan.train_domains, &fr.run_dir, d);

                auto rows = evaluate_model(m, dataset, d, Split::test);
                fr.report = metrics::aggregate(std::move(rows));
                std::vector<std::string> notes;
                if (cfg.mode == TrainMode::inter_domain || cfg.mode == TrainMode::intra_domain)
                    notes.push_back(
                        "bound trained with the hybrid Dice+CE objective (not plain Dice)");
                metrics::write_csv(fr.report, fr.run_dir / "report.csv", notes);

                fr.checkpoint_path = fr.run_dir / "checkpoint.bin";
                save_checkpoint(fr.checkpoint_path, m, nullptr, fold_cfg,
                                static_cast<int>(cfg.epochs), 0.0);
                dump_fold_samples(m, dataset, d, fr.run_dir / "samples", 2);
                results[i] = std::move(fr);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };

    const int nthreads = std::max(1, std::min<int>(jobs, static_cast<int>(folds.size())));
    std::vector<std::thread> threads;
    for (int t = 0; t < nthreads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return results;
}

void save_checkpoint(const std::filesystem::path& path, model::CddsaModel<float>& m,
                     const Adam* opt, const TrainConfig& cfg, int epoch, double lr) {
    checkpoint::Archive archive;
    archive.meta["model_config"] = config::to_json(m.config);
    archive.meta["epoch"] = epoch;
    archive.meta["lr"] = lr;
    archive.meta["seed"] = cfg.seed;
    archive.meta["mode"] = to_string(cfg.mode);
    archive.meta["has_optimizer"] = opt != nullptr;

    auto params = m.params();
    for (auto* p : params) archive.tensors.emplace_back(p->name, p->var.value());
    for (auto& [name, buf] : m.buffers()) archive.tensors.emplace_back(name, *buf);
    if (opt) {
        archive.meta["adam_t"] = opt->t;
        for (std::size_t i = 0; i < params.size(); ++i) {
            archive.tensors.emplace_back("adam.m." + params[i]->name, opt->m[i]);
            archive.tensors.emplace_back("adam.v." + params[i]->name, opt->v[i]);
        }
    }
    checkpoint::save_archive(path, archive);
}

model::CddsaModel<float> load_model_checkpoint(const std::filesystem::path& path,
                                               nlohmann::json* meta_out, Adam* opt_out) {
    checkpoint::Archive archive = checkpoint::load_archive(path);
    const model::ModelConfig cfg =
        config::model_config_from_json(archive.meta.at("model_config"));
    model::CddsaModel<float> m(cfg, archive.meta.value("seed", std::uint64_t{0}));

    for (auto* p : m.params()) {
        const auto* src = archive.find(p->name);
        if (!src) throw DataError("checkpoint missing tensor " + p->name);
        if (src->shape != p->var.shape())
            throw DataError("checkpoint tensor shape mismatch for " + p->name);
        p->var.value() = *src;
    }
    for (auto& [name, buf] : m.buffers()) {
        const auto* src = archive.find(name);
        if (!src) throw DataError("checkpoint missing buffer " + name);
        *buf = *src;
    }
    if (opt_out && archive.meta.value("has_optimizer", false)) {
        auto params = m.params();
        opt_out->init(params);
        opt_out->t = archive.meta.value("adam_t", 0L);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto* om = archive.find("adam.m." + params[i]->name);
            const auto* ov = archive.find("adam.v." + params[i]->name);
            if (!om || !ov) throw DataError("checkpoint missing optimizer state");
            opt_out->m[i] = *om;
            opt_out->v[i] = *ov;
        }
    }
    if (meta_out) *meta_out = archive.meta;
    return m;
}

}  // namespace cddsa::trainer
