#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cddsa/core/array.hpp"
#include "cddsa/core/rng.hpp"

// Multi-domain synthetic data: a shared nested-ellipse anatomy generator whose
// masks depend only on the anatomy seed, a deterministic style transform
// pipeline (gamma -> tint -> blur -> noise -> background blend) parameterized
// per domain, and an on-disk layout for round-tripping datasets.

namespace cddsa::datagen {

struct DomainStyleSpec {
    int domain_id = 0;
    double intensity_gamma = 1.0;
    std::array<double, 3> channel_tint{1.0, 1.0, 1.0};
    double noise_sigma = 0.0;
    double blur_radius = 0.0;
    double background_level = 0.0;

    void validate() const;
    bool same_style(const DomainStyleSpec& other) const;
};

struct Sample {
    nn::Array<float> image;  // (C, H, W), values in [0,1]
    nn::Array<int> mask;     // (H, W), labels in [0, K)
    int domain_id = 0;
    std::string case_id;
};

enum class Split { train, test };

struct MultiDomainDataset {
    std::vector<Sample> samples;
    std::vector<Split> split;  // parallel to samples
    int num_domains = 0;
    int num_classes = 0;

    std::vector<std::size_t> indices(int domain_id, Split s) const;
    std::vector<std::size_t> indices(Split s) const;
    void validate() const;
};

struct GeneratorConfig {
    std::vector<DomainStyleSpec> domains;
    int train_per_domain = 20;
    int test_per_domain = 5;
    int height = 256;
    int width = 256;
    int channels = 3;
    std::uint64_t seed = 0;

    void validate() const;
};

inline constexpr int kNumClasses = 3;  // background / outer / inner

// Deterministic render: the mask is a pure function of (anatomy_seed, H, W);
// the style spec only shapes the image.
Sample generate_sample(const DomainStyleSpec& spec, std::uint64_t anatomy_seed, int height = 256,
                       int width = 256, int channels = 3);

MultiDomainDataset build_dataset(const GeneratorConfig& config);

// On-disk layout: <root>/domain_<id>/{train,test}/<case_id>_img.png + _mask.png,
// plus dataset.json describing domains, counts, seeds and image size.
void save_dataset(const MultiDomainDataset& dataset, const GeneratorConfig& config,
                  const std::filesystem::path& root);

MultiDomainDataset load_dataset(const std::filesystem::path& root,
                                bool percentile_normalize = false);

// Percentile intensity normalization: clip to the [0.1, 99.9] percentiles and
// rescale to [0,1]. Exposed for tests of the ingestion flag.
void percentile_clip_rescale(nn::Array<float>& image, double lo_pct = 0.1,
                             double hi_pct = 99.9);

GeneratorConfig default_generator_config();

// Float image <-> 8-bit PNG helpers shared by the CLI and run-dir sample dumps.
void write_image_png(const std::filesystem::path& path, const nn::Array<float>& chw);
nn::Array<float> read_image_png(const std::filesystem::path& path);

// Horizontal panel grid with a thin separator, all panels same size.
nn::Array<float> make_grid(const std::vector<nn::Array<float>>& panels, int separator = 2);

// Label map to RGB for qualitative dumps.
nn::Array<float> colorize_labels(const nn::Array<int>& mask, int num_classes);

}  // namespace cddsa::datagen
