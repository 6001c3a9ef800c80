// cddsa — command-line driver: synthetic data generation, training with the
// leave-one-domain-out protocol, evaluation, qualitative reconstruction and
// style-augmentation grids, and report rendering.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 runtime error.

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "cddsa/config_io.hpp"
#include "cddsa/styleaug/styleaug.hpp"

namespace {

using cddsa::ConfigError;
using cddsa::DataError;
using cddsa::Rng;
using json = nlohmann::json;
namespace fs = std::filesystem;

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const std::vector<std::string>& argv, const json& resolved_config,
                    const std::vector<fs::path>& hash_inputs) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : hash_inputs)
        if (fs::exists(p)) h = fnv1a(file_bytes(p), h);
    json manifest;
    manifest["command"] = command;
    manifest["argv"] = argv;
    manifest["config"] = resolved_config;
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    manifest["inputs_hash"] = hex;
    manifest["created_unix"] =
        std::chrono::duration_cast<std::chrono::seconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count();
    fs::create_directories(out_dir);
    std::ofstream os(out_dir / "manifest.json");
    os << manifest.dump(2) << "\n";
}

std::optional<std::uint64_t> env_seed() {
    if (const char* s = std::getenv("CDDSA_SEED")) return std::strtoull(s, nullptr, 10);
    return std::nullopt;
}

cddsa::nn::Array<float> adapt_channels(const cddsa::nn::Array<float>& img, int want) {
    using cddsa::nn::Array;
    using cddsa::nn::Shape;
    const int C = img.shape[0], H = img.shape[1], W = img.shape[2];
    if (C == want) return img;
    Array<float> out(Shape{want, H, W});
    const long plane = static_cast<long>(H) * W;
    if (C == 1) {
        for (int c = 0; c < want; ++c) std::copy_n(img.ptr(), plane, out.ptr() + c * plane);
    } else if (want == 1) {
        for (long i = 0; i < plane; ++i) {
            float acc = 0;
            for (int c = 0; c < C; ++c) acc += img[c * plane + i];
            out[i] = acc / static_cast<float>(C);
        }
    } else {
        throw DataError("cannot adapt image channels to model input");
    }
    return out;
}

cddsa::nn::Array<float> to_rgb(const cddsa::nn::Array<float>& img) {
    return adapt_channels(img, 3);
}

struct CliArgs {
    std::string config_path, data_dir, out_dir, checkpoint, report_path, compare_path;
    std::vector<std::string> images;
    std::string mode, activation, style_source = "linear", split = "test";
    int holdout = -1, jobs = 1, n_variants = 5, domain = -1;
    int epochs = -1, batch = -1;
    double lr = -1, tau = -1, lambda1 = -1, lambda2 = -1, lambda3 = -1, lambda4 = -1;
    std::uint64_t seed = 0;
    bool seed_set = false, percentile_norm = false;
};

cddsa::config::ExperimentConfig resolve_config(const CliArgs& a) {
    cddsa::config::ExperimentConfig cfg;
    if (!a.config_path.empty()) cfg = cddsa::config::load_experiment_config(a.config_path);
    if (!a.mode.empty()) cfg.train.mode = cddsa::trainer::train_mode_from_string(a.mode);
    if (!a.activation.empty())
        cfg.train.model.activation = cddsa::model::activation_from_string(a.activation);
    if (a.epochs > 0) cfg.train.epochs = a.epochs;
    if (a.batch > 0) cfg.train.batch_per_domain = a.batch;
    if (a.lr > 0) cfg.train.lr_init = a.lr;
    if (a.tau > 0) cfg.train.tau = a.tau;
    if (a.lambda1 >= 0) cfg.train.weights.lambda1 = a.lambda1;
    if (a.lambda2 >= 0) cfg.train.weights.lambda2 = a.lambda2;
    if (a.lambda3 >= 0) cfg.train.weights.lambda3 = a.lambda3;
    if (a.lambda4 >= 0) cfg.train.weights.lambda4 = a.lambda4;
    if (a.seed_set) {
        cfg.train.seed = a.seed;
        cfg.data.seed = a.seed;
    }
    if (auto s = env_seed()) {
        cfg.train.seed = *s;
        cfg.data.seed = *s;
    }
    return cfg;
}

int cmd_gen_data(const CliArgs& a, const std::vector<std::string>& argv) {
    auto cfg = resolve_config(a);
    auto dataset = cddsa::datagen::build_dataset(cfg.data);
    cddsa::datagen::save_dataset(dataset, cfg.data, a.out_dir);
    write_manifest(a.out_dir, "gen-data", argv, cddsa::config::to_json(cfg.data),
                   a.config_path.empty() ? std::vector<fs::path>{}
                                         : std::vector<fs::path>{a.config_path});
    std::cout << "wrote " << dataset.samples.size() << " samples across "
              << dataset.num_domains << " domains to " << a.out_dir << "\n";
    return 0;
}

int cmd_train(const CliArgs& a, const std::vector<std::string>& argv) {
    auto cfg = resolve_config(a);
    auto dataset = cddsa::datagen::load_dataset(a.data_dir, a.percentile_norm);
    // the dataset is authoritative for K and the image channel count
    cfg.train.model.K = dataset.num_classes;
    cfg.train.model.image_channels = dataset.samples.front().image.shape[0];

    std::optional<int> only;
    if (a.holdout >= 0) only = a.holdout;
    write_manifest(a.out_dir, "train", argv, cddsa::config::to_json(cfg),
                   {fs::path(a.config_path), fs::path(a.data_dir) / "dataset.json"});
    auto results = cddsa::trainer::run_lodo(dataset, cfg.train, a.out_dir, a.jobs, only);
    for (const auto& fr : results) {
        std::cout << "fold " << fr.plan.held_out_domain << " -> " << fr.run_dir.string()
                  << "\n"
                  << cddsa::metrics::render_table(fr.report);
    }
    return 0;
}

int cmd_eval(const CliArgs& a, const std::vector<std::string>& argv) {
    auto m = cddsa::trainer::load_model_checkpoint(a.checkpoint);
    auto dataset = cddsa::datagen::load_dataset(a.data_dir, a.percentile_norm);
    const auto split =
        a.split == "train" ? cddsa::datagen::Split::train : cddsa::datagen::Split::test;
    auto rows = cddsa::trainer::evaluate_model(m, dataset, a.domain, split);
    auto report = cddsa::metrics::aggregate(std::move(rows));
    fs::create_directories(a.out_dir);
    cddsa::metrics::write_csv(report, fs::path(a.out_dir) / "report.csv");
    write_manifest(a.out_dir, "eval", argv,
                   json{{"checkpoint", a.checkpoint}, {"domain", a.domain}, {"split", a.split}},
                   {fs::path(a.checkpoint), fs::path(a.data_dir) / "dataset.json"});
    std::cout << cddsa::metrics::render_table(report);
    return 0;
}

int cmd_reconstruct(const CliArgs& a, const std::vector<std::string>& argv) {
    auto m = cddsa::trainer::load_model_checkpoint(a.checkpoint);
    if (a.images.empty()) throw ConfigError("reconstruct: --image required");
    auto img = adapt_channels(cddsa::datagen::read_image_png(a.images.front()),
                              m.config.image_channels);
    auto fa = m.encode_anatomy(img);
    auto dist = m.encode_style(img);
    auto code = cddsa::model::sample_style(dist, cddsa::model::SampleMode::mean, nullptr);
    auto recon = m.decode(code, fa);
    const auto grid = cddsa::datagen::make_grid({to_rgb(img), to_rgb(recon)});
    fs::create_directories(fs::path(a.out_dir));
    const fs::path out = fs::path(a.out_dir) / "reconstruct.png";
    cddsa::datagen::write_image_png(out, grid);
    write_manifest(a.out_dir, "reconstruct", argv, json{{"checkpoint", a.checkpoint}},
                   {fs::path(a.checkpoint)});
    std::cout << "wrote " << out.string() << "\n";
    return 0;
}

int cmd_augment(const CliArgs& a, const std::vector<std::string>& argv) {
    auto m = cddsa::trainer::load_model_checkpoint(a.checkpoint);
    if (a.images.empty()) throw ConfigError("augment: --image required");
    if (a.n_variants < 1) throw ConfigError("augment: -n must be >= 1");

    std::vector<cddsa::nn::Array<float>> inputs;
    for (const auto& p : a.images)
        inputs.push_back(adapt_channels(cddsa::datagen::read_image_png(p),
                                        m.config.image_channels));
    auto donor_fa = m.encode_anatomy(inputs.front());

    Rng rng(a.seed_set ? a.seed : (env_seed() ? *env_seed() : 0x5EEDu));
    std::vector<std::pair<cddsa::model::StyleCode<float>, int>> styles;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto dist = m.encode_style(inputs[i]);
        styles.emplace_back(
            cddsa::model::sample_style(dist, cddsa::model::SampleMode::mean, nullptr),
            static_cast<int>(i));
    }
    auto bank = cddsa::styleaug::collect_bank(styles);

    std::vector<cddsa::nn::Array<float>> panels{to_rgb(inputs.front())};
    for (int i = 0; i < a.n_variants; ++i) {
        cddsa::model::StyleCode<float> code =
            a.style_source == "gaussian"
                ? cddsa::styleaug::augment_gaussian<float>(m.config.Z, rng)
                : cddsa::styleaug::augment_linear(bank, rng);
        panels.push_back(to_rgb(cddsa::styleaug::synthesize_augmented(m, donor_fa, code)));
    }
    fs::create_directories(fs::path(a.out_dir));
    const fs::path out = fs::path(a.out_dir) / "augment.png";
    cddsa::datagen::write_image_png(out, cddsa::datagen::make_grid(panels));
    write_manifest(a.out_dir, "augment", argv,
                   json{{"checkpoint", a.checkpoint},
                        {"n", a.n_variants},
                        {"style_source", a.style_source}},
                   {fs::path(a.checkpoint)});
    std::cout << "wrote " << out.string() << " (" << (a.n_variants + 1) << " panels)\n";
    return 0;
}

int cmd_report(const CliArgs& a) {
    auto report = cddsa::metrics::read_csv(a.report_path);
    std::cout << cddsa::metrics::render_table(report);
    if (!a.compare_path.empty()) {
        auto other = cddsa::metrics::read_csv(a.compare_path);
        std::map<std::pair<std::string, int>, double> lhs, rhs;
        for (const auto& r : report.per_case) lhs[{r.case_id, r.class_id}] = r.dice_percent;
        for (const auto& r : other.per_case) rhs[{r.case_id, r.class_id}] = r.dice_percent;
        std::vector<double> x, y;
        for (const auto& [key, v] : lhs) {
            auto it = rhs.find(key);
            if (it != rhs.end()) {
                x.push_back(v);
                y.push_back(it->second);
            }
        }
        if (x.empty()) throw DataError("report --compare: no overlapping (case, class) pairs");
        const double p = cddsa::metrics::wilcoxon_signed_rank_p(x, y);
        std::cout << "paired Wilcoxon signed-rank on per-case Dice (n=" << x.size()
                  << "): p = " << p << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CDDSA: contrastive domain disentanglement and style augmentation"};
    app.require_subcommand(1);
    CliArgs a;
    std::vector<std::string> raw_args(argv, argv + argc);

    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", a.seed, "RNG seed (CDDSA_SEED env overrides)")
            ->each([&](const std::string&) { a.seed_set = true; });
    };

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-domain dataset");
    gen->add_option("--config", a.config_path, "experiment config JSON");
    gen->add_option("--out", a.out_dir, "output dataset directory")->required();
    add_seed(gen);

    auto* train = app.add_subcommand("train", "train with leave-one-domain-out folds");
    train->add_option("--config", a.config_path, "experiment config JSON");
    train->add_option("--data", a.data_dir, "dataset directory")->required();
    train->add_option("--out", a.out_dir, "run output directory")->required();
    train->add_option("--mode", a.mode, "training mode");
    train->add_option("--activation", a.activation, "anatomy activation kind");
    train->add_option("--holdout", a.holdout, "run a single fold (held-out domain id)");
    train->add_option("--jobs", a.jobs, "parallel fold processes");
    train->add_option("--epochs", a.epochs, "override epochs");
    train->add_option("--batch", a.batch, "override per-domain batch size");
    train->add_option("--lr", a.lr, "override initial learning rate");
    train->add_option("--tau", a.tau, "contrastive temperature");
    train->add_option("--lambda1", a.lambda1, "KL weight");
    train->add_option("--lambda2", a.lambda2, "reconstruction weight");
    train->add_option("--lambda3", a.lambda3, "contrastive weight");
    train->add_option("--lambda4", a.lambda4, "consistency weight");
    train->add_flag("--percentile-norm", a.percentile_norm, "percentile-normalize on load");
    add_seed(train);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on one domain");
    eval->add_option("--checkpoint", a.checkpoint)->required();
    eval->add_option("--data", a.data_dir)->required();
    eval->add_option("--domain", a.domain)->required();
    eval->add_option("--split", a.split, "train|test (default test)");
    eval->add_option("--out", a.out_dir, "report output directory")->required();
    eval->add_flag("--percentile-norm", a.percentile_norm);

    auto* rec = app.add_subcommand("reconstruct", "original + reconstruction grid");
    rec->add_option("--checkpoint", a.checkpoint)->required();
    rec->add_option("--image", a.images, "input image(s)")->required();
    rec->add_option("--out", a.out_dir, "output directory")->required();

    auto* aug = app.add_subcommand("augment", "original + N style-augmented variants");
    aug->add_option("--checkpoint", a.checkpoint)->required();
    aug->add_option("--image", a.images, "donor image first; extra images widen the bank")
        ->required();
    aug->add_option("-n,--num", a.n_variants, "number of variants (default 5)");
    aug->add_option("--style-source", a.style_source, "linear|gaussian (default linear)");
    aug->add_option("--out", a.out_dir, "output directory")->required();
    add_seed(aug);

    auto* rep = app.add_subcommand("report", "render a report CSV; optionally compare");
    rep->add_option("--input", a.report_path, "report.csv")->required();
    rep->add_option("--compare", a.compare_path, "second report.csv for a paired test");

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_gen_data(a, raw_args);
        if (train->parsed()) return cmd_train(a, raw_args);
        if (eval->parsed()) return cmd_eval(a, raw_args);
        if (rec->parsed()) return cmd_reconstruct(a, raw_args);
        if (aug->parsed()) return cmd_augment(a, raw_args);
        if (rep->parsed()) return cmd_report(a);
        return 2;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
