#include "cddsa/datagen/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>

#include "cddsa/datagen/png_io.hpp"

namespace cddsa::datagen {

using json = nlohmann::json;
using nn::Array;
using nn::Shape;

void DomainStyleSpec::validate() const {
    if (domain_id < 0) throw ConfigError("DomainStyleSpec: domain_id must be >= 0");
    if (!(intensity_gamma > 0)) throw ConfigError("DomainStyleSpec: intensity_gamma must be > 0");
    for (double t : channel_tint)
        if (t < 0.5 || t > 1.5)
            throw ConfigError("DomainStyleSpec: channel_tint entries must be in [0.5, 1.5]");
    if (noise_sigma < 0) throw ConfigError("DomainStyleSpec: noise_sigma must be >= 0");
    if (blur_radius < 0) throw ConfigError("DomainStyleSpec: blur_radius must be >= 0");
    if (background_level < 0 || background_level > 1)
        throw ConfigError("DomainStyleSpec: background_level must be in [0, 1]");
}

bool DomainStyleSpec::same_style(const DomainStyleSpec& other) const {
    return intensity_gamma == other.intensity_gamma && channel_tint == other.channel_tint &&
           noise_sigma == other.noise_sigma && blur_radius == other.blur_radius &&
           background_level == other.background_level;
}

void GeneratorConfig::validate() const {
    if (domains.size() < 2) throw ConfigError("GeneratorConfig: at least 2 domains required");
    if (train_per_domain < 1 || test_per_domain < 1)
        throw ConfigError("GeneratorConfig: per-domain counts must be >= 1");
    if (height < 16 || width < 16) throw ConfigError("GeneratorConfig: image size too small");
    if (channels != 1 && channels != 3)
        throw ConfigError("GeneratorConfig: channels must be 1 or 3");
    std::set<int> ids;
    for (const auto& d : domains) {
        d.validate();
        if (!ids.insert(d.domain_id).second)
            throw ConfigError("GeneratorConfig: duplicate domain_id " +
                              std::to_string(d.domain_id));
    }
    for (std::size_t i = 0; i < domains.size(); ++i)
        for (std::size_t j = i + 1; j < domains.size(); ++j)
            if (domains[i].same_style(domains[j]))
                throw ConfigError("GeneratorConfig: domains " +
                                  std::to_string(domains[i].domain_id) + " and " +
                                  std::to_string(domains[j].domain_id) +
                                  " share an identical style");
}

std::vector<std::size_t> MultiDomainDataset::indices(int domain_id, Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (samples[i].domain_id == domain_id && split[i] == s) out.push_back(i);
    return out;
}

std::vector<std::size_t> MultiDomainDataset::indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (split[i] == s) out.push_back(i);
    return out;
}

void MultiDomainDataset::validate() const {
    if (samples.size() != split.size())
        throw DataError("MultiDomainDataset: split assignment out of sync");
    for (const auto& s : samples) {
        if (s.domain_id < 0 || s.domain_id >= num_domains)
            throw DataError("MultiDomainDataset: domain_id out of range for " + s.case_id);
        if (s.image.ndim() != 3 || s.mask.ndim() != 2 || s.image.shape[1] != s.mask.shape[0] ||
            s.image.shape[2] != s.mask.shape[1])
            throw DataError("MultiDomainDataset: image/mask dims differ for " + s.case_id);
        for (long i = 0; i < s.mask.numel(); ++i)
            if (s.mask[i] < 0 || s.mask[i] >= num_classes)
                throw DataError("MultiDomainDataset: label outside [0,K) in " + s.case_id);
    }
}

namespace {

struct Ellipse {
    double cx, cy, a, b, cos_t, sin_t;

    // "radial" coordinate: <=1 inside, 1 on the boundary
    double u(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double px = (dx * cos_t + dy * sin_t) / a;
        const double py = (-dx * sin_t + dy * cos_t) / b;
        return px * px + py * py;
    }
    // approximate signed distance to the boundary in pixels (positive inside)
    double depth(double x, double y) const {
        return (1.0 - std::sqrt(u(x, y))) * std::min(a, b);
    }
};

Ellipse make_ellipse(Rng& rng, double cx_lo, double cx_hi, double cy_lo, double cy_hi,
                     double ax_lo, double ax_hi, int height, int width) {
    const double m = std::min(height, width);
    Ellipse e{};
    e.cx = rng.uniform(cx_lo, cx_hi) * width;
    e.cy = rng.uniform(cy_lo, cy_hi) * height;
    e.a = rng.uniform(ax_lo, ax_hi) * m;
    e.b = rng.uniform(ax_lo, ax_hi) * m;
    const double theta = rng.uniform(0.0, 3.14159265358979323846);
    e.cos_t = std::cos(theta);
    e.sin_t = std::sin(theta);
    return e;
}

double smoothstep01(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

// Separable Gaussian blur with edge reflection; sigma in pixels.
void gaussian_blur(Array<float>& img, int channels, int height, int width, double sigma) {
    if (sigma <= 0) return;
    const int half = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * half + 1));
    double ksum = 0;
    for (int i = -half; i <= half; ++i) {
        kernel[static_cast<std::size_t>(i + half)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        ksum += kernel[static_cast<std::size_t>(i + half)];
    }
    for (auto& k : kernel) k /= ksum;

    auto reflect = [](int i, int n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
        return std::clamp(i, 0, n - 1);
    };

    std::vector<float> tmp(static_cast<std::size_t>(height) * width);
    for (int c = 0; c < channels; ++c) {
        float* plane = img.ptr() + static_cast<long>(c) * height * width;
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                double acc = 0;
                for (int i = -half; i <= half; ++i)
                    acc += kernel[static_cast<std::size_t>(i + half)] *
                           plane[y * width + reflect(x + i, width)];
                tmp[static_cast<std::size_t>(y) * width + x] = static_cast<float>(acc);
            }
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                double acc = 0;
                for (int i = -half; i <= half; ++i)
                    acc += kernel[static_cast<std::size_t>(i + half)] *
                           tmp[static_cast<std::size_t>(reflect(y + i, height)) * width + x];
                plane[y * width + x] = static_cast<float>(acc);
            }
    }
}

}  // namespace

Sample generate_sample(const DomainStyleSpec& spec, std::uint64_t anatomy_seed, int height,
                       int width, int channels) {
    spec.validate();
    if (channels != 1 && channels != 3) throw ConfigError("generate_sample: channels must be 1 or 3");

    // Anatomy: a disc-like outer ellipse (class 1) with a nested cup-like
    // inner ellipse (class 2), plus an occasional small satellite blob
    // (class 1). Everything below depends only on the anatomy seed.
    Rng rng(Rng::derive(anatomy_seed, 0xA7A70u));
    Ellipse outer = make_ellipse(rng, 0.36, 0.64, 0.36, 0.64, 0.16, 0.27, height, width);
    Ellipse inner = outer;
    {
        const double scale = rng.uniform(0.40, 0.60);
        inner.a = outer.a * scale;
        inner.b = outer.b * scale;
        inner.cx = outer.cx + rng.uniform(-0.2, 0.2) * outer.a * (1.0 - scale);
        inner.cy = outer.cy + rng.uniform(-0.2, 0.2) * outer.b * (1.0 - scale);
        const double theta = rng.uniform(0.0, 3.14159265358979323846);
        inner.cos_t = std::cos(theta);
        inner.sin_t = std::sin(theta);
    }
    const bool satellite = rng.uniform() < 0.5;
    Ellipse sat = make_ellipse(rng, 0.10, 0.90, 0.10, 0.90, 0.03, 0.07, height, width);

    Sample out;
    out.domain_id = spec.domain_id;
    out.mask = Array<int>(Shape{height, width});
    out.image = Array<float>(Shape{channels, height, width});
    Array<float> coverage(Shape{height, width});  // foreground alpha pre-style

    // fixed per-channel base scale so tint has visible work to do
    const double chan_scale[3] = {1.0, 0.88, 0.76};
    const double aa = 1.5;  // anti-alias band in pixels

    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            const double d_out = outer.depth(px, py);
            const double d_in = inner.depth(px, py);
            const double d_sat = satellite ? sat.depth(px, py) : -1e9;

            int label = 0;
            if (outer.u(px, py) <= 1.0 || (satellite && sat.u(px, py) <= 1.0)) label = 1;
            if (inner.u(px, py) <= 1.0) label = 2;
            out.mask[y * width + x] = label;

            const double a_out = smoothstep01(0.5 + d_out / aa);
            const double a_in = smoothstep01(0.5 + d_in / aa);
            const double a_sat = satellite ? smoothstep01(0.5 + d_sat / aa) : 0.0;

            // layered shading: brighter towards each structure's center
            double v = 0.0;
            const double shade_out = 0.50 + 0.16 * std::clamp(1.0 - std::sqrt(outer.u(px, py)), 0.0, 1.0);
            const double shade_sat = 0.48;
            const double shade_in = 0.82 + 0.12 * std::clamp(1.0 - std::sqrt(inner.u(px, py)), 0.0, 1.0);
            v = v * (1.0 - a_out) + shade_out * a_out;
            v = v * (1.0 - a_sat) + shade_sat * a_sat;
            v = v * (1.0 - a_in) + shade_in * a_in;

            const double alpha = std::max(a_out, std::max(a_in, a_sat));
            coverage[y * width + x] = static_cast<float>(alpha);
            for (int c = 0; c < channels; ++c)
                out.image[(static_cast<long>(c) * height + y) * width + x] =
                    static_cast<float>(v * (channels == 3 ? chan_scale[c] : 1.0));
        }
    }

    // Style pipeline, canonical order: gamma -> tint -> blur -> noise ->
    // background blend. An all-identity spec leaves the render untouched.
    float* img = out.image.ptr();
    const long plane = static_cast<long>(height) * width;

    if (spec.intensity_gamma != 1.0)
        for (long i = 0; i < out.image.numel(); ++i)
            img[i] = static_cast<float>(
                std::pow(static_cast<double>(std::max(img[i], 0.0f)), spec.intensity_gamma));

    for (int c = 0; c < channels; ++c) {
        const double tint = spec.channel_tint[static_cast<std::size_t>(c)];
        if (tint != 1.0)
            for (long i = 0; i < plane; ++i)
                img[c * plane + i] = static_cast<float>(img[c * plane + i] * tint);
    }

    gaussian_blur(out.image, channels, height, width, spec.blur_radius);

    if (spec.noise_sigma > 0) {
        Rng noise_rng(Rng::derive(anatomy_seed, 0x401Eu, static_cast<std::uint64_t>(spec.domain_id)));
        for (long i = 0; i < out.image.numel(); ++i)
            img[i] = static_cast<float>(img[i] + spec.noise_sigma * noise_rng.gaussian());
    }

    if (spec.background_level > 0)
        for (int c = 0; c < channels; ++c)
            for (long i = 0; i < plane; ++i)
                img[c * plane + i] = static_cast<float>(
                    img[c * plane + i] + spec.background_level * (1.0 - coverage[i]));

    for (long i = 0; i < out.image.numel(); ++i) img[i] = std::clamp(img[i], 0.0f, 1.0f);
    return out;
}

namespace {
// Train seeds are even, test seeds odd, so the two pools are disjoint by
// construction.
std::uint64_t train_seed(std::uint64_t base, int domain, int index) {
    return 2 * Rng::derive(base, 0x7121u,
                           (static_cast<std::uint64_t>(domain) << 32) |
                               static_cast<std::uint64_t>(index));
}
std::uint64_t test_seed(std::uint64_t base, int domain, int index) {
    return 2 * Rng::derive(base, 0x7E57u,
                           (static_cast<std::uint64_t>(domain) << 32) |
                               static_cast<std::uint64_t>(index)) +
           1;
}

std::string case_name(int domain, Split split, int index) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "d%d_%s_%03d", domain,
                  split == Split::train ? "train" : "test", index);
    return buf;
}
}  // namespace

MultiDomainDataset build_dataset(const GeneratorConfig& config) {
    config.validate();
    MultiDomainDataset ds;
    ds.num_domains = static_cast<int>(config.domains.size());
    ds.num_classes = kNumClasses;
    for (const auto& spec : config.domains) {
        for (int i = 0; i < config.train_per_domain; ++i) {
            Sample s = generate_sample(spec, train_seed(config.seed, spec.domain_id, i),
                                       config.height, config.width, config.channels);
            s.case_id = case_name(spec.domain_id, Split::train, i);
            ds.samples.push_back(std::move(s));
            ds.split.push_back(Split::train);
        }
        for (int i = 0; i < config.test_per_domain; ++i) {
            Sample s = generate_sample(spec, test_seed(config.seed, spec.domain_id, i),
                                       config.height, config.width, config.channels);
            s.case_id = case_name(spec.domain_id, Split::test, i);
            ds.samples.push_back(std::move(s));
            ds.split.push_back(Split::test);
        }
    }
    // domain ids must form 0..D-1 for the trainer's fold bookkeeping
    for (const auto& spec : config.domains)
        if (spec.domain_id >= ds.num_domains)
            throw ConfigError("GeneratorConfig: domain ids must be dense 0..D-1");
    ds.validate();
    return ds;
}

namespace {
PngImage to_png_image(const Array<float>& chw) {
    PngImage png;
    png.channels = chw.shape[0];
    png.height = chw.shape[1];
    png.width = chw.shape[2];
    png.bytes.resize(static_cast<std::size_t>(png.height) * png.width * png.channels);
    const long plane = static_cast<long>(png.height) * png.width;
    for (long i = 0; i < plane; ++i)
        for (int c = 0; c < png.channels; ++c) {
            const float v = std::clamp(chw[c * plane + i], 0.0f, 1.0f);
            png.bytes[static_cast<std::size_t>(i) * png.channels + c] =
                static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    return png;
}

Array<float> from_png_image(const PngImage& png) {
    Array<float> out(Shape{png.channels, png.height, png.width});
    const long plane = static_cast<long>(png.height) * png.width;
    for (long i = 0; i < plane; ++i)
        for (int c = 0; c < png.channels; ++c)
            out[c * plane + i] =
                static_cast<float>(png.bytes[static_cast<std::size_t>(i) * png.channels + c]) /
                255.0f;
    return out;
}
}  // namespace

void save_dataset(const MultiDomainDataset& dataset, const GeneratorConfig& config,
                  const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    fs::create_directories(root);

    json meta;
    meta["format"] = 1;
    meta["num_domains"] = dataset.num_domains;
    meta["num_classes"] = dataset.num_classes;
    meta["height"] = config.height;
    meta["width"] = config.width;
    meta["channels"] = config.channels;
    meta["seed"] = config.seed;
    meta["train_per_domain"] = config.train_per_domain;
    meta["test_per_domain"] = config.test_per_domain;
    meta["domains"] = json::array();
    for (const auto& d : config.domains)
        meta["domains"].push_back({{"domain_id", d.domain_id},
                                   {"intensity_gamma", d.intensity_gamma},
                                   {"channel_tint", d.channel_tint},
                                   {"noise_sigma", d.noise_sigma},
                                   {"blur_radius", d.blur_radius},
                                   {"background_level", d.background_level}});
    meta["cases"] = json::array();

    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const Sample& s = dataset.samples[i];
        const char* split_name = dataset.split[i] == Split::train ? "train" : "test";
        const fs::path dir = root / ("domain_" + std::to_string(s.domain_id)) / split_name;
        fs::create_directories(dir);
        write_png(dir / (s.case_id + "_img.png"), to_png_image(s.image));

        PngImage mask_png;
        mask_png.channels = 1;
        mask_png.height = s.mask.shape[0];
        mask_png.width = s.mask.shape[1];
        mask_png.bytes.resize(static_cast<std::size_t>(s.mask.numel()));
        for (long k = 0; k < s.mask.numel(); ++k)
            mask_png.bytes[static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(s.mask[k]);
        write_png(dir / (s.case_id + "_mask.png"), mask_png);

        meta["cases"].push_back(
            {{"case_id", s.case_id}, {"domain_id", s.domain_id}, {"split", split_name}});
    }

    std::ofstream os(root / "dataset.json");
    os << meta.dump(2) << "\n";
}

void percentile_clip_rescale(Array<float>& image, double lo_pct, double hi_pct) {
    std::vector<float> sorted(image.data);
    std::sort(sorted.begin(), sorted.end());
    const auto pct = [&](double p) {
        const double pos = p / 100.0 * (static_cast<double>(sorted.size()) - 1.0);
        const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
    };
    const double lo = pct(lo_pct), hi = pct(hi_pct);
    if (hi - lo < 1e-12) {
        image.fill(0.0f);
        return;
    }
    for (long i = 0; i < image.numel(); ++i) {
        const double v = std::clamp(static_cast<double>(image[i]), lo, hi);
        image[i] = static_cast<float>((v - lo) / (hi - lo));
    }
}

MultiDomainDataset load_dataset(const std::filesystem::path& root, bool percentile_normalize) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw DataError("dataset directory not found: " + root.string());

    int num_classes = -1;
    const fs::path meta_path = root / "dataset.json";
    if (fs::exists(meta_path)) {
        std::ifstream is(meta_path);
        json meta = json::parse(is);
        num_classes = meta.at("num_classes").get<int>();
    }

    MultiDomainDataset ds;
    std::map<int, std::vector<std::pair<fs::path, Split>>> per_domain;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (!entry.is_directory()) continue;
        const std::string name = entry.path().filename().string();
        if (name.rfind("domain_", 0) != 0) continue;
        const int domain_id = std::stoi(name.substr(7));
        for (Split split : {Split::train, Split::test}) {
            const fs::path dir = entry.path() / (split == Split::train ? "train" : "test");
            if (!fs::is_directory(dir)) continue;
            per_domain[domain_id].emplace_back(dir, split);
        }
    }
    if (per_domain.empty()) throw DataError("no domain_<id> directories under " + root.string());

    int max_label = 0;
    for (const auto& [domain_id, dirs] : per_domain) {
        for (const auto& [dir, split] : dirs) {
            std::vector<fs::path> images;
            for (const auto& f : fs::directory_iterator(dir)) {
                const std::string fname = f.path().filename().string();
                if (fname.size() > 8 && fname.ends_with("_img.png")) images.push_back(f.path());
            }
            std::sort(images.begin(), images.end());
            for (const auto& img_path : images) {
                std::string base = img_path.filename().string();
                base = base.substr(0, base.size() - 8);  // strip _img.png
                const fs::path mask_path = dir / (base + "_mask.png");
                if (!fs::exists(mask_path))
                    throw DataError("missing mask for image: " + img_path.string());

                const PngImage img_png = read_png(img_path);
                const PngImage mask_png = read_png(mask_path);
                if (mask_png.channels != 1)
                    throw DataError("mask must be single-channel: " + mask_path.string());
                if (mask_png.height != img_png.height || mask_png.width != img_png.width)
                    throw DataError("image/mask size mismatch for case " + base);

                Sample s;
                s.case_id = base;
                s.domain_id = domain_id;
                s.image = from_png_image(img_png);
                if (percentile_normalize) percentile_clip_rescale(s.image);
                s.mask = Array<int>(Shape{mask_png.height, mask_png.width});
                for (long k = 0; k < s.mask.numel(); ++k) {
                    const int label = mask_png.bytes[static_cast<std::size_t>(k)];
                    if (num_classes > 0 && label >= num_classes)
                        throw DataError("unknown label value " + std::to_string(label) + " in " +
                                        mask_path.string());
                    s.mask[k] = label;
                    max_label = std::max(max_label, label);
                }
                ds.samples.push_back(std::move(s));
                ds.split.push_back(split);
            }
        }
    }
    ds.num_domains = per_domain.rbegin()->first + 1;
    ds.num_classes = num_classes > 0 ? num_classes : max_label + 1;
    ds.validate();
    return ds;
}

void write_image_png(const std::filesystem::path& path, const Array<float>& chw) {
    if (chw.ndim() != 3) throw ShapeError("write_image_png: expects (C,H,W)");
    write_png(path, to_png_image(chw));
}

Array<float> read_image_png(const std::filesystem::path& path) {
    return from_png_image(read_png(path));
}

Array<float> make_grid(const std::vector<Array<float>>& panels, int separator) {
    if (panels.empty()) throw DataError("make_grid: no panels");
    const int C = panels.front().shape[0];
    const int H = panels.front().shape[1];
    const int W = panels.front().shape[2];
    for (const auto& p : panels)
        if (p.shape != Shape{C, H, W}) throw ShapeError("make_grid: panels must share dims");
    const int n = static_cast<int>(panels.size());
    const int gw = n * W + (n - 1) * separator;
    Array<float> grid(Shape{C, H, gw}, 1.0f);
    for (int i = 0; i < n; ++i) {
        const int x0 = i * (W + separator);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                std::copy_n(panels[static_cast<std::size_t>(i)].ptr() +
                                (static_cast<long>(c) * H + y) * W,
                            W, grid.ptr() + (static_cast<long>(c) * H + y) * gw + x0);
    }
    return grid;
}

Array<float> colorize_labels(const nn::Array<int>& mask, int num_classes) {
    static const float palette[8][3] = {{0.05f, 0.05f, 0.05f}, {0.85f, 0.45f, 0.10f},
                                        {0.20f, 0.70f, 0.95f}, {0.60f, 0.90f, 0.30f},
                                        {0.90f, 0.25f, 0.55f}, {0.95f, 0.85f, 0.20f},
                                        {0.55f, 0.35f, 0.85f}, {0.70f, 0.70f, 0.70f}};
    const int H = mask.shape[0], W = mask.shape[1];
    Array<float> out(Shape{3, H, W});
    for (long i = 0; i < mask.numel(); ++i) {
        const int label = std::clamp(mask[i], 0, std::min(num_classes, 8) - 1);
        for (int c = 0; c < 3; ++c) out[c * static_cast<long>(H) * W + i] = palette[label][c];
    }
    return out;
}

GeneratorConfig default_generator_config() {
    // Four looks that differ strongly in tone curve, channel balance, noise
    // and sharpness while keeping the global background level in a moderate
    // band, in the spirit of scanner/protocol appearance differences.
    GeneratorConfig cfg;
    cfg.domains = {
        DomainStyleSpec{0, 0.80, {1.20, 0.95, 0.80}, 0.010, 0.0, 0.20},
        DomainStyleSpec{1, 1.30, {0.80, 1.00, 1.20}, 0.030, 0.6, 0.35},
        DomainStyleSpec{2, 1.00, {0.85, 1.20, 0.90}, 0.045, 0.0, 0.25},
        DomainStyleSpec{3, 1.60, {1.10, 1.10, 0.75}, 0.015, 1.0, 0.40},
    };
    return cfg;
}

}  // namespace cddsa::datagen
