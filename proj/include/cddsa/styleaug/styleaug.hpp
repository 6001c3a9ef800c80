#pragma once

#include <vector>

#include "cddsa/core/rng.hpp"
#include "cddsa/model/model.hpp"

// Style augmentation: collect the per-batch style code bank, synthesize new
// style codes by random linear combination (or by unit-Gaussian sampling for
// the diamond variant), and repaint a donor anatomy with them.

namespace cddsa::styleaug {

using nn::Array;
using nn::Shape;
using nn::Var;

template <typename S>
struct StyleCodeBank {
    std::vector<model::StyleCode<S>> codes;
    std::vector<int> domain_ids;

    std::size_t size() const { return codes.size(); }
};

template <typename S>
StyleCodeBank<S> collect_bank(const std::vector<std::pair<model::StyleCode<S>, int>>& batch_styles) {
    if (batch_styles.empty()) throw DataError("collect_bank: empty style batch");
    StyleCodeBank<S> bank;
    const std::size_t z = batch_styles.front().first.z.size();
    for (const auto& [code, domain] : batch_styles) {
        if (code.z.size() != z) throw ShapeError("collect_bank: ragged style code lengths");
        bank.codes.push_back(code);
        bank.domain_ids.push_back(domain);
    }
    return bank;
}

// New style code = sum_i alpha_i * bank_i with alpha_i ~ Uniform[-1,1],
// deliberately unnormalized.
template <typename S>
model::StyleCode<S> augment_linear(const StyleCodeBank<S>& bank, const std::vector<S>& alphas) {
    if (bank.codes.empty()) throw DataError("augment_linear: empty bank");
    if (alphas.size() != bank.codes.size())
        throw ShapeError("augment_linear: one weight per bank element required");
    const std::size_t z = bank.codes.front().z.size();
    model::StyleCode<S> out;
    out.z.assign(z, S(0));
    for (std::size_t i = 0; i < bank.codes.size(); ++i)
        for (std::size_t k = 0; k < z; ++k) out.z[k] += alphas[i] * bank.codes[i].z[k];
    out.provenance = model::StyleProvenance::augmented_linear;
    return out;
}

template <typename S>
std::vector<S> draw_linear_weights(std::size_t count, Rng& rng) {
    std::vector<S> alphas(count);
    for (auto& a : alphas) a = static_cast<S>(rng.uniform(-1.0, 1.0));
    return alphas;
}

template <typename S>
model::StyleCode<S> augment_linear(const StyleCodeBank<S>& bank, Rng& rng) {
    if (bank.codes.empty()) throw DataError("augment_linear: empty bank");
    return augment_linear(bank, draw_linear_weights<S>(bank.codes.size(), rng));
}

// Unit-Gaussian style code (the CDDSA-diamond route).
template <typename S>
model::StyleCode<S> augment_gaussian(int z_dim, Rng& rng) {
    if (z_dim < 1) throw ConfigError("augment_gaussian: Z must be >= 1");
    model::StyleCode<S> out;
    out.z.resize(static_cast<std::size_t>(z_dim));
    for (auto& v : out.z) v = static_cast<S>(rng.gaussian());
    out.provenance = model::StyleProvenance::augmented_gaussian;
    return out;
}

// Graph-side linear combination over live code rows so gradients reach the
// style encoder through the bank: codes (A,Z) -> (1,Z).
template <typename S>
Var<S> augment_linear_g(Var<S> codes, const std::vector<S>& alphas) {
    const auto& sh = codes.shape();
    if (sh.size() != 2 || sh[0] != static_cast<int>(alphas.size()))
        throw ShapeError("augment_linear_g: one weight per code row required");
    Array<S> a(Shape{1, sh[0]}, std::vector<S>(alphas));
    return nn::matmul(Var<S>::constant(std::move(a)), codes);
}

// Repaint: the donor anatomy is combined with a synthesized style code.
// The donor tensor is untouched; downstream consistency compares the donor
// anatomy against the re-encoded anatomy of this image.
template <typename S>
Array<S> synthesize_augmented(model::CddsaModel<S>& m,
                              const model::AnatomicalRepresentation<S>& anatomy,
                              const model::StyleCode<S>& new_style) {
    return m.decode(new_style, anatomy);
}

}  // namespace cddsa::styleaug
