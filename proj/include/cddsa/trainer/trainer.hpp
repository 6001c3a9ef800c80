#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "cddsa/datagen/datagen.hpp"
#include "cddsa/losses/losses.hpp"
#include "cddsa/metrics/metrics.hpp"
#include "cddsa/model/model.hpp"

// Training orchestration: stratified per-domain mini-batches, the full CDDSA
// step with its ablation modes, Adam, the plateau LR schedule, checkpointing
// and the leave-one-domain-out experiment driver.

namespace cddsa::trainer {

enum class TrainMode {
    cddsa,
    cddsa_gaussian,
    baseline_sdnet,
    plus_dsct,
    plus_saac,
    inter_domain,
    intra_domain
};

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);

inline bool mode_uses_style(TrainMode m) {
    return m != TrainMode::inter_domain && m != TrainMode::intra_domain;
}
inline bool mode_uses_dsct(TrainMode m) {
    return m == TrainMode::plus_dsct || m == TrainMode::cddsa || m == TrainMode::cddsa_gaussian;
}
inline bool mode_uses_saac(TrainMode m) {
    return m == TrainMode::plus_saac || m == TrainMode::cddsa || m == TrainMode::cddsa_gaussian;
}

struct TrainConfig {
    int epochs = 200;
    int batch_per_domain = 8;
    double lr_init = 1e-3;
    double lr_decay_factor = 0.95;
    int lr_patience_epochs = 8;
    losses::LossWeights weights;
    double tau = 0.1;
    TrainMode mode = TrainMode::cddsa;
    std::uint64_t seed = 0;
    model::ModelConfig model;
    double val_fraction = 0.1;
    bool derangement = false;
    bool saac_stop_gradient = false;
    bool segment_augmented = false;  // off by default; extension beyond the base pipeline
    // basic train-time augmentations (the usual flip/rotation family); random
    // cropping is covered by generating data at the crop size
    bool augment_flip = false;
    bool augment_rot90 = false;

    void validate(int num_train_domains) const;
};

struct Batch {
    nn::Array<float> images;  // (N, C, H, W)
    nn::Array<int> labels;    // (N, H, W)
    std::vector<int> domain_ids;
    int per_domain = 0;

    int size() const { return images.ndim() == 4 ? images.shape[0] : 0; }
};

// Exactly b samples per train domain, grouped by domain, shuffled within;
// sampling with replacement when a domain is smaller than b.
Batch make_minibatch(const datagen::MultiDomainDataset& dataset, int b,
                     const std::vector<int>& train_domains, Rng& rng);

// Pooled draw ignoring domain stratification (inter-domain baseline).
Batch make_pooled_minibatch(const datagen::MultiDomainDataset& dataset, int count,
                            const std::vector<int>& train_domains, Rng& rng);

// In-place flip / 90-degree-rotation augmentation of a packed batch (images
// and label maps together). Rotation requires square images.
void augment_batch(Batch& batch, bool flip, bool rot90, Rng& rng);

struct StepRecord {
    double seg = 0, kl = 0, rec = 0, dsct = 0, saac = 0, total = 0;
};

struct StepGraph {
    nn::Var<float> total;
    StepRecord record;
};

// Builds the loss graph for one optimizer step. All randomness is derived
// from step_seed through named substreams, so two modes evaluated on the
// same (parameters, batch, step_seed) share their common loss terms.
StepGraph build_step_graph(model::CddsaModel<float>& m, const Batch& batch,
                           const TrainConfig& cfg, TrainMode mode, std::uint64_t step_seed);

struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long t = 0;
    std::vector<nn::Array<float>> m, v;

    void init(const nn::ParamRefs<float>& params);
    void step(const nn::ParamRefs<float>& params, double lr);
};

struct LrScheduler {
    double lr = 1e-3;
    double factor = 0.95;
    int patience = 8;
    double best = -1e300;
    int stale = 0;

    // Feed the epoch's validation metric (higher is better); returns the lr
    // to use next. Decays by `factor` after `patience` consecutive epochs
    // without a new best, then resets the stagnation counter.
    double observe(double val_metric);
};

struct LODOPlan {
    int held_out_domain = -1;  // -1 for intra-domain folds
    std::vector<int> train_domains;
};

struct FoldResult {
    LODOPlan plan;
    std::filesystem::path run_dir;
    std::filesystem::path checkpoint_path;
    metrics::MetricsReport report;
};

// One training run over the given train domains; returns the trained model
// (best validation Dice snapshot) and writes log.jsonl under run_dir when
// provided.
struct TrainOutcome {
    std::vector<StepRecord> epoch_means;
    std::vector<double> val_dice;
    std::vector<double> lr_trace;
    int best_epoch = -1;
};

TrainOutcome train_model(model::CddsaModel<float>& m, const datagen::MultiDomainDataset& dataset,
                         const TrainConfig& cfg, const std::vector<int>& train_domains,
                         const std::filesystem::path* run_dir = nullptr,
                         int held_out_domain = -1);

// Per-case Dice/ASSD of a trained model on one domain's split (foreground
// classes only).
std::vector<metrics::CaseMetric> evaluate_model(model::CddsaModel<float>& m,
                                                const datagen::MultiDomainDataset& dataset,
                                                int domain_id, datagen::Split split);

// Leave-one-domain-out driver. In intra_domain mode each fold trains and
// tests inside a single domain instead. `jobs` folds run in parallel threads.
std::vector<FoldResult> run_lodo(const datagen::MultiDomainDataset& dataset,
                                 const TrainConfig& cfg, const std::filesystem::path& out_root,
                                 int jobs = 1, std::optional<int> only_fold = std::nullopt);

// Checkpoint round-trip: parameters, batch-norm buffers, Adam moments and
// the run metadata, all in one archive.
void save_checkpoint(const std::filesystem::path& path, model::CddsaModel<float>& m,
                     const Adam* opt, const TrainConfig& cfg, int epoch, double lr);
model::CddsaModel<float> load_model_checkpoint(const std::filesystem::path& path,
                                               nlohmann::json* meta_out = nullptr,
                                               Adam* opt_out = nullptr);

}  // namespace cddsa::trainer
