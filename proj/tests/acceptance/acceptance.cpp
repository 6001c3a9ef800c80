// Acceptance suite: one criterion per runnable unit, each printing a single
// [PASS]/[FAIL] line with the measured values. Run all with no arguments or a
// single one with --criterion N.

#include <atomic>
#include <chrono>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>

#include "cddsa/styleaug/styleaug.hpp"
#include "cddsa/trainer/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/tmpdir.hpp"

using namespace cddsa;
using model::ActivationKind;
using model::CddsaModel;
using model::ModelConfig;
using nn::Array;
using nn::Shape;
using nn::Var;
using testsupport::gradcheck_leaf;
using testsupport::pick_indices;
using testsupport::random_array;
using trainer::TrainConfig;
using trainer::TrainMode;

namespace {

// ---------------------------------------------------------------------------
// shared desk-scale setup
// ---------------------------------------------------------------------------

datagen::MultiDomainDataset desk_dataset(int size = 64, int train = 20, int test = 4,
                                         std::uint64_t seed = 3) {
    datagen::GeneratorConfig g = datagen::default_generator_config();
    g.height = size;
    g.width = size;
    g.train_per_domain = train;
    g.test_per_domain = test;
    g.seed = seed;
    return datagen::build_dataset(g);
}

// Thin widths keep CPU epochs in seconds; the architecture (5-scale U-Net,
// VAE style encoder, 3-SRM decoder, 2-block segmentor) is the full one.
ModelConfig desk_model() {
    ModelConfig m;
    m.T = 8;
    m.Z = 16;
    m.K = 3;
    m.unet_channels = {8, 12, 16, 24, 32};
    m.style_channels = {8, 16};
    m.decoder_channels = {16, 12, 8};
    m.seg_hidden = 16;
    return m;
}

TrainConfig desk_train(TrainMode mode, std::uint64_t seed, int epochs) {
    TrainConfig cfg;
    cfg.mode = mode;
    cfg.seed = seed;
    cfg.epochs = epochs;
    cfg.batch_per_domain = 4;
    cfg.model = desk_model();
    return cfg;
}

void run_parallel(std::vector<std::function<void()>> jobs, int workers = 2) {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(jobs.size());
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            try {
                jobs[i]();
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
}

// mean intra-domain minus mean inter-domain cosine similarity of the style
// codes (deterministic mean codes) over the train split
double style_gap(CddsaModel<float>& m, const datagen::MultiDomainDataset& ds) {
    std::vector<std::vector<float>> codes;
    std::vector<int> doms;
    for (auto i : ds.indices(datagen::Split::train)) {
        codes.push_back(m.encode_style(ds.samples[i].image).mean);
        doms.push_back(ds.samples[i].domain_id);
    }
    double intra = 0, inter = 0;
    long ni = 0, nx = 0;
    for (std::size_t i = 0; i < codes.size(); ++i)
        for (std::size_t j = i + 1; j < codes.size(); ++j) {
            if (doms[i] == doms[j]) {
                intra += cosine(codes[i], codes[j]);
                ++ni;
            } else {
                inter += cosine(codes[i], codes[j]);
                ++nx;
            }
        }
    return intra / static_cast<double>(ni) - inter / static_cast<double>(nx);
}

Array<int> argmax_labels(const Array<float>& probs) {
    const int K = probs.shape[0];
    const long hw = static_cast<long>(probs.shape[1]) * probs.shape[2];
    Array<int> out(Shape{probs.shape[1], probs.shape[2]});
    for (long i = 0; i < hw; ++i) {
        int arg = 0;
        float best = probs[i];
        for (int c = 1; c < K; ++c)
            if (probs[c * hw + i] > best) {
                best = probs[c * hw + i];
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

// ---------------------------------------------------------------------------
// criterion 1: closed-form loss oracles
// ---------------------------------------------------------------------------

bool criterion1(std::ostream& os) {
    Rng rng(101);
    double worst_kl = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int z = 1 + static_cast<int>(rng.uniform_index(12));
        std::vector<double> u(static_cast<std::size_t>(z)), v(static_cast<std::size_t>(z));
        for (auto& x : u) x = rng.uniform(-3, 3);
        for (auto& x : v) x = std::exp(rng.uniform(-3, 3));
        double want = 0;
        for (int i = 0; i < z; ++i) want += 0.5 * (u[static_cast<std::size_t>(i)] * u[static_cast<std::size_t>(i)] + v[static_cast<std::size_t>(i)] - std::log(v[static_cast<std::size_t>(i)]) - 1.0);
        worst_kl = std::max(worst_kl,
                            std::abs(losses::kl_loss(model::StyleDistribution<double>{u, v}) - want));
    }

    // worked contrastive cases at tau = 0.1
    Rng prng(5);
    Array<double> codesA(Shape{2, 2}, {1, 0, 0, 1});
    auto pairsA = losses::build_contrastive_pairs({0, 1}, 1, prng, 0.1);
    const double lossA = losses::dsct_loss(Var<double>::constant(codesA), pairsA).item();
    const double wantA = std::log(1.0 + std::exp(-10.0));  // ~4.54e-5
    Array<double> codesB(Shape{2, 2}, {1, 0, 1, 0});
    const double lossB = losses::dsct_loss(Var<double>::constant(codesB), pairsA).item();
    const double wantB = std::log(2.0);
    // literal single-anchor hand evaluations through the same InfoNCE core
    const double handA =
        nn::masked_info_nce(Var<double>::constant(Array<double>(Shape{1, 2}, {1.0, 0.0})), {0},
                            {0, 1}, 0.1)
            .item();
    const double handB =
        nn::masked_info_nce(Var<double>::constant(Array<double>(Shape{1, 2}, {0.0, 0.0})), {0},
                            {0, 1}, 0.1)
            .item();

    // brute-force summation oracles for dice / ce / rec / saac
    double worst_sum = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const int N = 2, K = 3, H = 7, W = 5;
        Array<double> logits = random_array<double>(Shape{N, K, H, W}, rng, -2, 2);
        Var<double> probs = nn::softmax_channels(Var<double>::constant(logits));
        Array<int> y(Shape{N, H, W});
        for (long i = 0; i < y.numel(); ++i) y[i] = static_cast<int>(rng.uniform_index(K));

        double dice_want = 0;
        const long hw = H * W;
        for (int n = 0; n < N; ++n)
            for (int c = 1; c < K; ++c) {
                double inter = 0, ps = 0, gs = 0;
                for (long i = 0; i < hw; ++i) {
                    const double pv = probs.value()[(static_cast<long>(n) * K + c) * hw + i];
                    ps += pv;
                    if (y[n * hw + i] == c) {
                        inter += pv;
                        gs += 1;
                    }
                }
                dice_want += 1.0 - (2 * inter + 1e-5) / (ps + gs + 1e-5);
            }
        dice_want /= N * (K - 1);
        worst_sum = std::max(worst_sum,
                             std::abs(losses::dice_loss(probs, y).item() - dice_want));

        double ce_want = 0;
        for (int n = 0; n < N; ++n)
            for (long i = 0; i < hw; ++i)
                ce_want += -std::log(probs.value()[(static_cast<long>(n) * K + y[n * hw + i]) * hw + i]);
        ce_want /= N * hw;
        worst_sum = std::max(worst_sum, std::abs(losses::ce_loss(probs, y).item() - ce_want));

        auto xa = random_array<double>(Shape{2, 3, 6, 6}, rng, 0, 1);
        auto xb = random_array<double>(Shape{2, 3, 6, 6}, rng, 0, 1);
        double mae_want = 0;
        for (long i = 0; i < xa.numel(); ++i) mae_want += std::abs(xa[i] - xb[i]);
        mae_want /= xa.numel();
        worst_sum = std::max(
            worst_sum, std::abs(losses::rec_loss(Var<double>::constant(xa), Var<double>::constant(xb))
                                    .item() -
                                mae_want));
        worst_sum = std::max(
            worst_sum,
            std::abs(losses::saac_loss(Var<double>::constant(xa), Var<double>::constant(xb)).item() -
                     mae_want));
    }

    const bool ok = worst_kl < 1e-6 && std::abs(lossA - wantA) < 1e-6 &&
                    std::abs(lossB - wantB) < 1e-6 && std::abs(handA - wantA) < 1e-6 &&
                    std::abs(handB - wantB) < 1e-6 && worst_sum < 1e-9;
    os << "kl max|d|=" << worst_kl << ", dsct A=" << lossA << " (want " << wantA
       << "), B=" << lossB << " (want " << wantB << "), summation max|d|=" << worst_sum;
    return ok;
}

// ---------------------------------------------------------------------------
// criterion 2: finite-difference gradient suite through a 16x16 toy model
// ---------------------------------------------------------------------------

struct ToyPipeline {
    ModelConfig cfg;
    CddsaModel<double> m;
    Array<double> images;
    Array<int> labels;
    losses::ContrastivePairs pairs;
    losses::LossWeights weights;

    ToyPipeline()
        : cfg(make_cfg()), m(cfg, 2024), images(Shape{4, 3, 16, 16}), labels(Shape{4, 16, 16}) {
        auto g = datagen::default_generator_config();
        for (int i = 0; i < 4; ++i) {
            auto s = datagen::generate_sample(g.domains[static_cast<std::size_t>(i % 2)],
                                              static_cast<std::uint64_t>(900 + i), 16, 16);
            std::copy(s.image.data.begin(), s.image.data.end(),
                      images.data.begin() + static_cast<long>(i) * s.image.numel());
            std::copy(s.mask.data.begin(), s.mask.data.end(),
                      labels.data.begin() + static_cast<long>(i) * s.mask.numel());
        }
        Rng prng(7);
        pairs = losses::build_contrastive_pairs({0, 0, 1, 1}, 2, prng, 0.1);
    }

    static ModelConfig make_cfg() {
        ModelConfig c;
        c.T = 4;
        c.Z = 4;
        c.K = 3;
        c.unet_channels = {4, 4, 4, 4, 4};
        c.style_channels = {4};
        c.decoder_channels = {4, 4, 4};
        c.seg_hidden = 4;
        return c;
    }

    // Running-statistic updates are intentionally non-differentiable
    // bookkeeping (as in mainstream frameworks); for finite differencing the
    // statistics must therefore stay frozen during the whole build, keeping
    // every remaining dependency differentiable and the build idempotent.
    Var<double> frozen(const std::function<Var<double>()>& f) {
        m.set_bn_stat_updates(false);
        Var<double> out = f();
        m.set_bn_stat_updates(true);
        return out;
    }

    // deterministic graph pieces (fixed reparameterization / weights draws)
    Var<double> fa() {
        Var<double> x = Var<double>::constant(images);
        return m.encode_anatomy_g(x, true, nullptr);
    }
    std::pair<Var<double>, Var<double>> style() {
        Var<double> x = Var<double>::constant(images);
        return m.encode_style_g(x, true);
    }
    Var<double> z_sample() {
        auto [u, v] = style();
        Rng eps(31);
        return m.sample_style_g(u, v, model::SampleMode::reparameterized, &eps);
    }
    Var<double> seg_loss_g() { return losses::seg_loss(m.segment_g(fa(), true), labels); }
    Var<double> kl_loss_g() {
        auto [u, v] = style();
        return losses::kl_loss(u, v);
    }
    Var<double> rec_loss_g() {
        return losses::rec_loss(Var<double>::constant(images), m.decode_g(z_sample(), fa()));
    }
    Var<double> dsct_loss_g() { return losses::dsct_loss(z_sample(), pairs); }
    Var<double> saac_loss_g() {
        Var<double> anatomy = fa();
        Rng arng(77);
        auto alphas = styleaug::draw_linear_weights<double>(4, arng);
        Var<double> aug = styleaug::augment_linear_g(z_sample(), alphas);
        Var<double> x_aug = m.decode_g(nn::repeat_rows(aug, 4), anatomy);
        // the re-encoding pass runs under inference-time normalization,
        // matching the trainer
        Var<double> fa_aug = m.encode_anatomy_g(x_aug, false, nullptr);
        return losses::saac_loss(anatomy, fa_aug);
    }
    Var<double> total_loss_g() {
        return losses::total_loss(seg_loss_g(), kl_loss_g(), rec_loss_g(), dsct_loss_g(),
                                  saac_loss_g(), weights);
    }
};

bool criterion2(std::ostream& os) {
    ToyPipeline toy;
    Rng rng(303);

    struct Case {
        const char* name;
        std::function<Var<double>()> build;
        std::vector<const char*> nets;  // parameter-name prefixes on the path
    };
    std::vector<Case> cases = {
        {"seg", [&] { return toy.frozen([&] { return toy.seg_loss_g(); }); }, {"e_ana", "seg"}},
        {"kl", [&] { return toy.frozen([&] { return toy.kl_loss_g(); }); }, {"e_sty"}},
        {"rec",
         [&] { return toy.frozen([&] { return toy.rec_loss_g(); }); },
         {"e_ana", "e_sty", "d_rec"}},
        {"dsct", [&] { return toy.frozen([&] { return toy.dsct_loss_g(); }); }, {"e_sty"}},
        {"saac",
         [&] { return toy.frozen([&] { return toy.saac_loss_g(); }); },
         {"e_ana", "e_sty", "d_rec"}},
        {"total",
         [&] { return toy.frozen([&] { return toy.total_loss_g(); }); },
         {"e_ana", "e_sty", "d_rec", "seg"}},
    };

    double worst = 0;
    const char* worst_case = "";
    auto params = toy.m.params();
    for (auto& c : cases) {
        // sample a few parameter tensors from each network on the loss path
        std::vector<nn::Parameter<double>*> targets;
        for (const char* net : c.nets) {
            int taken = 0;
            for (std::size_t i = 0; i < params.size() && taken < 3; ++i) {
                const std::size_t pick = (i * 7 + 3) % params.size();
                if (params[pick]->name.rfind(net, 0) == 0) {
                    targets.push_back(params[pick]);
                    ++taken;
                }
            }
        }
        for (auto* p : targets) {
            auto r = gradcheck_leaf(p->var, c.build, pick_indices(p->var.numel(), 1, rng), 1e-5);
            if (r.max_rel_error > worst) {
                worst = r.max_rel_error;
                worst_case = c.name;
            }
        }
    }
    os << "max relative FD error " << worst << " (loss: " << worst_case << ")";
    return worst < 1e-4;
}

// ---------------------------------------------------------------------------
// criterion 3: AdaIN moment matching
// ---------------------------------------------------------------------------

bool criterion3(std::ostream& os) {
    Rng rng(404);
    double worst_mean = 0, worst_std = 0;
    for (int trial = 0; trial < 5; ++trial) {
        const int N = 2, C = 8, H = 32, W = 32;
        auto x = Var<double>::constant(random_array<double>(Shape{N, C, H, W}, rng, -3, 3));
        auto gamma = Var<double>::constant(random_array<double>(Shape{N, C}, rng, 0.3, 2.5));
        auto beta = Var<double>::constant(random_array<double>(Shape{N, C}, rng, -2, 2));
        auto y = nn::adain(x, gamma, beta, 1e-8);
        const long hw = H * W;
        for (int nc = 0; nc < N * C; ++nc) {
            double mean = 0, var = 0;
            for (long i = 0; i < hw; ++i) mean += y.value()[nc * hw + i];
            mean /= hw;
            for (long i = 0; i < hw; ++i) {
                const double d = y.value()[nc * hw + i] - mean;
                var += d * d;
            }
            var /= hw;
            worst_mean = std::max(worst_mean, std::abs(mean - beta.value()[nc]));
            worst_std = std::max(worst_std, std::abs(std::sqrt(var) - gamma.value()[nc]));
        }
    }
    os << "max |mean-beta| = " << worst_mean << ", max |std-gamma| = " << worst_std;
    return worst_mean < 1e-5 && worst_std < 1e-5;
}

// ---------------------------------------------------------------------------
// criterion 4: metric oracles
// ---------------------------------------------------------------------------

std::vector<std::pair<int, int>> surface_oracle(const Array<int>& m) {
    const int H = m.shape[0], W = m.shape[1];
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!m[y * W + x]) continue;
            if (y == 0 || y == H - 1 || x == 0 || x == W - 1 || !m[(y - 1) * W + x] ||
                !m[(y + 1) * W + x] || !m[y * W + x - 1] || !m[y * W + x + 1])
                out.emplace_back(y, x);
        }
    return out;
}

bool criterion4(std::ostream& os) {
    Rng rng(505);
    double worst_assd = 0;
    bool dice_exact = true, scale_exact = true;
    int checked = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int h = 3 + static_cast<int>(rng.uniform_index(10));
        const int w = 3 + static_cast<int>(rng.uniform_index(10));
        Array<int> a(Shape{h, w}), b(Shape{h, w});
        for (long i = 0; i < a.numel(); ++i) a[i] = rng.uniform() < 0.3 ? 1 : 0;
        for (long i = 0; i < b.numel(); ++i) b[i] = rng.uniform() < 0.3 ? 1 : 0;

        long pa = 0, pb = 0, inter = 0;
        for (long i = 0; i < a.numel(); ++i) {
            pa += a[i];
            pb += b[i];
            inter += a[i] & b[i];
        }
        const double dice_want = (pa == 0 && pb == 0) ? 100.0
                                 : (pa == 0 || pb == 0)
                                     ? 0.0
                                     : 200.0 * static_cast<double>(inter) / static_cast<double>(pa + pb);
        if (metrics::dice_score(a, b) != dice_want) dice_exact = false;

        const auto got = metrics::assd(a, b);
        const auto sa = surface_oracle(a), sb = surface_oracle(b);
        if (sa.empty() || sb.empty()) {
            if (got.has_value()) dice_exact = false;
            continue;
        }
        double total = 0;
        for (auto [y, x] : sa) {
            double best = 1e300;
            for (auto [v, u] : sb)
                best = std::min(best, static_cast<double>((y - v) * (y - v) + (x - u) * (x - u)));
            total += std::sqrt(best);
        }
        for (auto [y, x] : sb) {
            double best = 1e300;
            for (auto [v, u] : sa)
                best = std::min(best, static_cast<double>((y - v) * (y - v) + (x - u) * (x - u)));
            total += std::sqrt(best);
        }
        const double want = total / static_cast<double>(sa.size() + sb.size());
        worst_assd = std::max(worst_assd, std::abs(*got - want));
        ++checked;

        const auto doubled = metrics::assd(a, b, {2.0, 2.0});
        if (*doubled != 2.0 * *got) scale_exact = false;
    }
    os << "dice exact=" << (dice_exact ? "yes" : "no") << ", assd max|d|=" << worst_assd
       << " over " << checked << " pairs, spacing doubling exact=" << (scale_exact ? "yes" : "no");
    return dice_exact && worst_assd < 1e-9 && scale_exact;
}

// ---------------------------------------------------------------------------
// criterion 5: disentanglement trend (intra vs inter style-code similarity)
// ---------------------------------------------------------------------------

bool criterion5(std::ostream& os) {
    auto ds = desk_dataset(64, 20, 2);
    const int epochs = 30;
    int wins = 0;
    std::ostringstream detail;
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        double gap_dsct = 0, gap_base = 0;
        run_parallel({[&] {
                          auto cfg = desk_train(TrainMode::plus_dsct, seed, epochs);
                          // desk-scale treatment weight: at 30 epochs the
                          // contrastive term needs more than the full-scale
                          // default to dominate seed noise
                          cfg.weights.lambda3 = 1.0;
                          CddsaModel<float> m(cfg.model, seed);
                          trainer::train_model(m, ds, cfg, {0, 1, 2, 3});
                          gap_dsct = style_gap(m, ds);
                      },
                      [&] {
                          auto cfg = desk_train(TrainMode::baseline_sdnet, seed, epochs);
                          CddsaModel<float> m(cfg.model, seed);
                          trainer::train_model(m, ds, cfg, {0, 1, 2, 3});
                          gap_base = style_gap(m, ds);
                      }});
        const bool win = gap_dsct >= 0.2 && gap_dsct > gap_base;
        wins += win;
        detail << " seed" << seed << ": dsct=" << gap_dsct << " base=" << gap_base
               << (win ? " ok" : " MISS");
    }
    os << "majority " << wins << "/3 seeds;" << detail.str();
    return wins >= 2;
}

// ---------------------------------------------------------------------------
// criterion 6: reconstruction fidelity, tanh vs hard gumbel
// ---------------------------------------------------------------------------

double overfit_min_rec(ActivationKind kind, const datagen::MultiDomainDataset& ds, int steps) {
    TrainConfig cfg = desk_train(TrainMode::baseline_sdnet, 17, 1);
    cfg.model.activation = kind;
    cfg.batch_per_domain = 8;  // 2 domains x 8 = all 16 images each step
    CddsaModel<float> m(cfg.model, 17);
    auto params = m.params();
    trainer::Adam opt;
    opt.init(params);
    Rng rng(17);
    auto batch = trainer::make_minibatch(ds, 8, {0, 1}, rng);
    double min_rec = 1e300;
    for (int step = 0; step < steps; ++step) {
        auto g = trainer::build_step_graph(m, batch, cfg, cfg.mode,
                                           static_cast<std::uint64_t>(1000 + step));
        min_rec = std::min(min_rec, g.record.rec);
        for (auto* p : params) p->var.zero_grad();
        g.total.backward();
        opt.step(params, 1e-3);
    }
    return min_rec;
}

bool criterion6(std::ostream& os) {
    datagen::GeneratorConfig g = datagen::default_generator_config();
    g.domains.resize(2);
    g.height = 48;
    g.width = 48;
    g.train_per_domain = 8;  // 16 images total
    g.test_per_domain = 1;
    g.seed = 23;
    auto ds = datagen::build_dataset(g);

    const int budget = 700;  // well under the 2000-step ceiling
    double rec_tanh = 0, rec_gumbel = 0;
    run_parallel({[&] { rec_tanh = overfit_min_rec(ActivationKind::tanh, ds, budget); },
                  [&] { rec_gumbel = overfit_min_rec(ActivationKind::gumbel_hard, ds, budget); }});
    os << "min L_rec over " << budget << " steps: tanh=" << rec_tanh
       << ", gumbel_hard=" << rec_gumbel;
    return rec_tanh < 0.05 && rec_gumbel > rec_tanh;
}

// ---------------------------------------------------------------------------
// criterion 7: domain-generalization trend on LODO
// ---------------------------------------------------------------------------

double lodo_mean_dice(const datagen::MultiDomainDataset& ds, TrainMode mode, std::uint64_t seed,
                      int epochs, const std::filesystem::path& dir) {
    auto cfg = desk_train(mode, seed, epochs);
    auto results = trainer::run_lodo(ds, cfg, dir, /*jobs=*/2);
    double acc = 0;
    for (const auto& fr : results) acc += fr.report.overall.dice_mean;
    return acc / static_cast<double>(results.size());
}

bool criterion7(std::ostream& os) {
    testsupport::TmpDir tmp("acceptance_c7");
    auto ds = desk_dataset(64, 20, 4);
    const int epochs = 32;
    double cddsa_sum = 0, inter_sum = 0, intra_sum = 0;
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        cddsa_sum += lodo_mean_dice(ds, TrainMode::cddsa, seed, epochs,
                                    tmp.path / ("cddsa_s" + std::to_string(seed)));
        inter_sum += lodo_mean_dice(ds, TrainMode::inter_domain, seed, epochs,
                                    tmp.path / ("inter_s" + std::to_string(seed)));
        intra_sum += lodo_mean_dice(ds, TrainMode::intra_domain, seed, epochs,
                                    tmp.path / ("intra_s" + std::to_string(seed)));
    }
    const double cddsa_mean = cddsa_sum / 3, inter_mean = inter_sum / 3,
                 intra_mean = intra_sum / 3;
    os << "held-out foreground Dice over 4 folds x 3 seeds: cddsa=" << cddsa_mean
       << ", inter_domain=" << inter_mean << ", intra_domain=" << intra_mean;
    return cddsa_mean >= inter_mean + 2.0 && intra_mean > cddsa_mean && intra_mean > inter_mean;
}

// ---------------------------------------------------------------------------
// criterion 8: anatomy preservation under style swap
// ---------------------------------------------------------------------------

bool criterion8(std::ostream& os) {
    auto ds = desk_dataset(64, 20, 4);
    auto cfg = desk_train(TrainMode::cddsa, 29, 30);
    CddsaModel<float> m(cfg.model, 29);
    trainer::train_model(m, ds, cfg, {0, 1, 2, 3});

    // style bank of 16 cases striding across all domains (deterministic codes)
    std::vector<std::pair<model::StyleCode<float>, int>> styles;
    const auto train_idx = ds.indices(datagen::Split::train);
    for (std::size_t k = 0; k < 16; ++k) {
        const auto& s = ds.samples[train_idx[k * train_idx.size() / 16]];
        styles.emplace_back(
            model::sample_style(m.encode_style(s.image), model::SampleMode::mean, nullptr),
            s.domain_id);
    }
    auto bank = styleaug::collect_bank(styles);

    Rng rng(2025);
    double acc = 0;
    long terms = 0;
    int cases = 0;
    for (std::size_t k = 0; cases < 50 && k < train_idx.size(); ++k, ++cases) {
        const auto& s = ds.samples[train_idx[k * train_idx.size() / 50]];
        auto fa = m.encode_anatomy(s.image);
        const auto seg_orig = argmax_labels(m.segment(fa));
        auto style = styleaug::augment_linear(bank, rng);
        auto x_aug = styleaug::synthesize_augmented(m, fa, style);
        auto fa_aug = m.encode_anatomy(x_aug);
        const auto seg_aug = argmax_labels(m.segment(fa_aug));
        for (int c = 1; c < ds.num_classes; ++c) {
            acc += metrics::dice_score(binarize(seg_aug, c), binarize(seg_orig, c));
            ++terms;
        }
    }
    const double mean_dice = acc / static_cast<double>(terms);
    os << "mean foreground Dice (augmented vs original segmentation) over " << cases
       << " cases = " << mean_dice;
    return mean_dice >= 95.0;
}

// ---------------------------------------------------------------------------
// criterion 9: protocol audits
// ---------------------------------------------------------------------------

bool criterion9(std::ostream& os) {
    // contrastive pair counts: b(D-1) negatives per anchor
    Rng rng(909);
    bool counts_ok = true;
    for (auto [d, b] : std::vector<std::pair<int, int>>{{3, 2}, {4, 8}, {2, 6}}) {
        std::vector<int> domains;
        for (int dd = 0; dd < d; ++dd)
            for (int i = 0; i < b; ++i) domains.push_back(dd);
        auto pairs = losses::build_contrastive_pairs(domains, b, rng);
        const int want = b * (d - 1);
        if (pairs.negatives_per_anchor() != want) counts_ok = false;
        for (int i = 0; i < d * b; ++i) {
            int negs = 0;
            for (int j = 0; j < d * b; ++j) negs += pairs.neg_mask[static_cast<std::size_t>(i) * domains.size() + static_cast<std::size_t>(j)];
            if (negs != want) counts_ok = false;
            if (domains[static_cast<std::size_t>(pairs.pos_index[static_cast<std::size_t>(i)])] != domains[static_cast<std::size_t>(i)]) counts_ok = false;
        }
    }

    // LR decay sequence: 1e-3 -> 9.5e-4 after 8 stagnant epochs
    trainer::LrScheduler sched{1e-3, 0.95, 8};
    sched.observe(0.9);
    bool lr_ok = true;
    for (int i = 0; i < 7; ++i)
        if (sched.observe(0.1) != 1e-3) lr_ok = false;
    if (std::abs(sched.observe(0.1) - 9.5e-4) > 1e-12) lr_ok = false;

    // held-out hygiene on a real (tiny) LODO run: audit line reports zero
    // violations and the report holds only held-out-domain test cases
    testsupport::TmpDir tmp("acceptance_c9");
    datagen::GeneratorConfig g = datagen::default_generator_config();
    g.domains.resize(2);
    g.height = 16;
    g.width = 16;
    g.train_per_domain = 3;
    g.test_per_domain = 1;
    auto ds = datagen::build_dataset(g);
    TrainConfig cfg;
    cfg.mode = TrainMode::inter_domain;
    cfg.epochs = 1;
    cfg.batch_per_domain = 2;
    cfg.model = ToyPipeline::make_cfg();
    auto results = trainer::run_lodo(ds, cfg, tmp.path, 2);
    bool hygiene_ok = results.size() == 2;
    for (const auto& fr : results) {
        for (const auto& row : fr.report.per_case)
            if (row.domain_id != fr.plan.held_out_domain) hygiene_ok = false;
        std::ifstream log(fr.run_dir / "log.jsonl");
        std::string line, last;
        while (std::getline(log, line))
            if (!line.empty()) last = line;
        auto j = nlohmann::json::parse(last);
        if (j.value("audit", "") != "held_out_hygiene" || j.value("violations", -1) != 0)
            hygiene_ok = false;
    }

    os << "pair counts " << (counts_ok ? "ok" : "BAD") << ", lr sequence "
       << (lr_ok ? "ok" : "BAD") << ", held-out hygiene " << (hygiene_ok ? "ok" : "BAD");
    return counts_ok && lr_ok && hygiene_ok;
}

struct Criterion {
    int id;
    const char* title;
    std::function<bool(std::ostream&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i)
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) only = std::atoi(argv[i + 1]);

    std::vector<Criterion> criteria = {
        {1, "closed-form loss oracles", criterion1},
        {2, "finite-difference gradient suite", criterion2},
        {3, "AdaIN moment matching", criterion3},
        {4, "metric oracles (dice / assd / spacing)", criterion4},
        {5, "disentanglement trend (style-code similarity gap)", criterion5},
        {6, "reconstruction fidelity (tanh vs gumbel-hard)", criterion6},
        {7, "domain-generalization trend (LODO)", criterion7},
        {8, "anatomy preservation under style swap", criterion8},
        {9, "protocol audits (pairs / lr / hygiene)", criterion9},
    };

    int failures = 0;
    for (auto& c : criteria) {
        if (only != 0 && c.id != only) continue;
        std::ostringstream detail;
        bool ok = false;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail << "exception: " << e.what();
        }
        const double dt =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << c.id << ": " << c.title
                   << " - " << detail.str() << " (" << dt << " s)" << std::endl;
        if (!ok) ++failures;
    }
    return failures;
}
