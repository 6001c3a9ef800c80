#include "cddsa/config_io.hpp"

#include <fstream>
#include <set>

namespace cddsa::config {

namespace {
void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                         const std::string& section) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw ConfigError("unknown config key '" + it.key() + "' in section " + section);
}

template <typename T>
void maybe(const json& j, const char* key, T& target) {
    if (j.contains(key)) target = j.at(key).get<T>();
}
}  // namespace

json to_json(const model::ModelConfig& c) {
    return json{{"T", c.T},
                {"Z", c.Z},
                {"K", c.K},
                {"image_channels", c.image_channels},
                {"unet_channels", c.unet_channels},
                {"style_channels", c.style_channels},
                {"decoder_channels", c.decoder_channels},
                {"seg_hidden", c.seg_hidden},
                {"leaky_slope", c.leaky_slope},
                {"gumbel_tau", c.gumbel_tau},
                {"adain_eps", c.adain_eps},
                {"activation", model::to_string(c.activation)}};
}

model::ModelConfig model_config_from_json(const json& j, const model::ModelConfig& defaults) {
    reject_unknown_keys(j,
                        {"T", "Z", "K", "image_channels", "unet_channels", "style_channels",
                         "decoder_channels", "seg_hidden", "leaky_slope", "gumbel_tau",
                         "adain_eps", "activation"},
                        "model");
    model::ModelConfig c = defaults;
    maybe(j, "T", c.T);
    maybe(j, "Z", c.Z);
    maybe(j, "K", c.K);
    maybe(j, "image_channels", c.image_channels);
    maybe(j, "unet_channels", c.unet_channels);
    maybe(j, "style_channels", c.style_channels);
    maybe(j, "decoder_channels", c.decoder_channels);
    maybe(j, "seg_hidden", c.seg_hidden);
    maybe(j, "leaky_slope", c.leaky_slope);
    maybe(j, "gumbel_tau", c.gumbel_tau);
    maybe(j, "adain_eps", c.adain_eps);
    if (j.contains("activation"))
        c.activation = model::activation_from_string(j.at("activation").get<std::string>());
    c.validate();
    return c;
}

json to_json(const losses::LossWeights& w) {
    return json{{"lambda1", w.lambda1},
                {"lambda2", w.lambda2},
                {"lambda3", w.lambda3},
                {"lambda4", w.lambda4}};
}

losses::LossWeights loss_weights_from_json(const json& j, const losses::LossWeights& defaults) {
    reject_unknown_keys(j, {"lambda1", "lambda2", "lambda3", "lambda4"}, "weights");
    losses::LossWeights w = defaults;
    maybe(j, "lambda1", w.lambda1);
    maybe(j, "lambda2", w.lambda2);
    maybe(j, "lambda3", w.lambda3);
    maybe(j, "lambda4", w.lambda4);
    w.validate();
    return w;
}

json to_json(const trainer::TrainConfig& c) {
    return json{{"epochs", c.epochs},
                {"batch_per_domain", c.batch_per_domain},
                {"lr_init", c.lr_init},
                {"lr_decay_factor", c.lr_decay_factor},
                {"lr_patience_epochs", c.lr_patience_epochs},
                {"weights", to_json(c.weights)},
                {"tau", c.tau},
                {"mode", trainer::to_string(c.mode)},
                {"seed", c.seed},
                {"model", to_json(c.model)},
                {"val_fraction", c.val_fraction},
                {"derangement", c.derangement},
                {"saac_stop_gradient", c.saac_stop_gradient},
                {"segment_augmented", c.segment_augmented},
                {"augment_flip", c.augment_flip},
                {"augment_rot90", c.augment_rot90}};
}

trainer::TrainConfig train_config_from_json(const json& j, const trainer::TrainConfig& defaults) {
    reject_unknown_keys(j,
                        {"epochs", "batch_per_domain", "lr_init", "lr_decay_factor",
                         "lr_patience_epochs", "weights", "tau", "mode", "seed", "model",
                         "val_fraction", "derangement", "saac_stop_gradient",
                         "segment_augmented", "augment_flip", "augment_rot90"},
                        "train");
    trainer::TrainConfig c = defaults;
    maybe(j, "epochs", c.epochs);
    maybe(j, "batch_per_domain", c.batch_per_domain);
    maybe(j, "lr_init", c.lr_init);
    maybe(j, "lr_decay_factor", c.lr_decay_factor);
    maybe(j, "lr_patience_epochs", c.lr_patience_epochs);
    if (j.contains("weights")) c.weights = loss_weights_from_json(j.at("weights"), c.weights);
    maybe(j, "tau", c.tau);
    if (j.contains("mode"))
        c.mode = trainer::train_mode_from_string(j.at("mode").get<std::string>());
    maybe(j, "seed", c.seed);
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"), c.model);
    maybe(j, "val_fraction", c.val_fraction);
    maybe(j, "derangement", c.derangement);
    maybe(j, "saac_stop_gradient", c.saac_stop_gradient);
    maybe(j, "segment_augmented", c.segment_augmented);
    maybe(j, "augment_flip", c.augment_flip);
    maybe(j, "augment_rot90", c.augment_rot90);
    return c;
}

json to_json(const datagen::GeneratorConfig& c) {
    json domains = json::array();
    for (const auto& d : c.domains)
        domains.push_back({{"domain_id", d.domain_id},
                           {"intensity_gamma", d.intensity_gamma},
                           {"channel_tint", d.channel_tint},
                           {"noise_sigma", d.noise_sigma},
                           {"blur_radius", d.blur_radius},
                           {"background_level", d.background_level}});
    return json{{"domains", domains},
                {"train_per_domain", c.train_per_domain},
                {"test_per_domain", c.test_per_domain},
                {"height", c.height},
                {"width", c.width},
                {"channels", c.channels},
                {"seed", c.seed}};
}

datagen::GeneratorConfig generator_config_from_json(const json& j) {
    reject_unknown_keys(j,
                        {"domains", "train_per_domain", "test_per_domain", "height", "width",
                         "channels", "seed"},
                        "data");
    datagen::GeneratorConfig c = datagen::default_generator_config();
    if (j.contains("domains")) {
        c.domains.clear();
        for (const auto& dj : j.at("domains")) {
            reject_unknown_keys(dj,
                                {"domain_id", "intensity_gamma", "channel_tint", "noise_sigma",
                                 "blur_radius", "background_level"},
                                "data.domains[]");
            datagen::DomainStyleSpec d;
            maybe(dj, "domain_id", d.domain_id);
            maybe(dj, "intensity_gamma", d.intensity_gamma);
            maybe(dj, "channel_tint", d.channel_tint);
            maybe(dj, "noise_sigma", d.noise_sigma);
            maybe(dj, "blur_radius", d.blur_radius);
            maybe(dj, "background_level", d.background_level);
            c.domains.push_back(d);
        }
    }
    maybe(j, "train_per_domain", c.train_per_domain);
    maybe(j, "test_per_domain", c.test_per_domain);
    maybe(j, "height", c.height);
    maybe(j, "width", c.width);
    maybe(j, "channels", c.channels);
    maybe(j, "seed", c.seed);
    c.validate();
    return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + path.string() + ": " + e.what());
    }
    reject_unknown_keys(j, {"data", "train"}, "<top level>");
    ExperimentConfig cfg;
    if (j.contains("data")) cfg.data = generator_config_from_json(j.at("data"));
    if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
    return cfg;
}

json to_json(const ExperimentConfig& c) {
    return json{{"data", to_json(c.data)}, {"train", to_json(c.train)}};
}

}  // namespace cddsa::config
