#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cddsa/core/ops_nn.hpp"
#include "cddsa/core/rng.hpp"
#include "cddsa/model/model.hpp"

// Training objectives: hybrid segmentation loss (Dice + cross-entropy), the
// Gaussian KL for the style encoder, MAE reconstruction, the domain style
// contrastive loss with its batch pairing, the style-augmentation anatomical
// consistency loss, and the weighted total.

namespace cddsa::losses {

using nn::Array;
using nn::Shape;
using nn::Var;

struct LossWeights {
    double lambda1 = 1.0;    // KL
    double lambda2 = 0.001;  // reconstruction
    double lambda3 = 0.01;   // domain style contrastive
    double lambda4 = 1.0;    // style-augmentation anatomical consistency

    void validate() const {
        if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda4 < 0)
            throw ConfigError("LossWeights: weights must be non-negative");
    }
};

namespace detail {
template <typename S>
void check_probs_labels(const Var<S>& p, const Array<int>& y, const char* op) {
    const auto& s = p.shape();
    if (s.size() != 4) throw ShapeError(std::string(op) + ": probs must be (N,K,H,W)");
    if (y.shape != Shape{s[0], s[2], s[3]})
        throw ShapeError(std::string(op) + ": labels must be (N,H,W) matching probs");
    const int K = s[1];
    for (long i = 0; i < y.numel(); ++i)
        if (y[i] < 0 || y[i] >= K)
            throw DataError(std::string(op) + ": label " + std::to_string(y[i]) +
                            " outside [0," + std::to_string(K) + ")");
}
}  // namespace detail

// Soft Dice loss, averaged per sample over the foreground classes
// (background excluded by default, matching the reporting convention).
// Per class: 1 - (2*sum(p*y) + s) / (sum(p) + sum(y) + s).
template <typename S>
Var<S> dice_loss(Var<S> probs, const Array<int>& labels, S smooth = S(1e-5),
                 bool include_background = false) {
    detail::check_probs_labels(probs, labels, "dice_loss");
    const auto& sh = probs.shape();
    const int N = sh[0], K = sh[1];
    const long hw = static_cast<long>(sh[2]) * sh[3];
    const int c0 = include_background ? 0 : 1;
    if (c0 >= K) throw ConfigError("dice_loss: no classes left to average");
    const long terms = static_cast<long>(N) * (K - c0);

    // per (n,c): intersection, prediction sum, ground-truth count
    std::vector<S> inter(static_cast<std::size_t>(N) * K, S(0));
    std::vector<S> psum(static_cast<std::size_t>(N) * K, S(0));
    std::vector<S> gsum(static_cast<std::size_t>(N) * K, S(0));
    for (int n = 0; n < N; ++n)
        for (int c = c0; c < K; ++c) {
            const S* p = probs.value().ptr() + (static_cast<long>(n) * K + c) * hw;
            const int* y = labels.ptr() + static_cast<long>(n) * hw;
            S i_acc = S(0), p_acc = S(0), g_acc = S(0);
            for (long i = 0; i < hw; ++i) {
                p_acc += p[i];
                if (y[i] == c) {
                    i_acc += p[i];
                    g_acc += S(1);
                }
            }
            inter[n * K + c] = i_acc;
            psum[n * K + c] = p_acc;
            gsum[n * K + c] = g_acc;
        }

    S loss = S(0);
    for (int n = 0; n < N; ++n)
        for (int c = c0; c < K; ++c)
            loss += S(1) - (S(2) * inter[n * K + c] + smooth) /
                               (psum[n * K + c] + gsum[n * K + c] + smooth);
    loss /= S(terms);

    auto lab = std::make_shared<Array<int>>(labels);
    auto istore = std::make_shared<std::vector<S>>(std::move(inter));
    auto pstore = std::make_shared<std::vector<S>>(std::move(psum));
    auto gstore = std::make_shared<std::vector<S>>(std::move(gsum));
    return nn::make_op_node<S>(
        Array<S>::scalar(loss), {probs},
        [pn = probs.node(), lab, istore, pstore, gstore, N, K, hw, c0, terms,
         smooth](nn::Node<S>& self) {
            if (!pn->requires_grad) return;
            pn->ensure_grad();
            const S g0 = self.grad[0] / S(terms);
            for (int n = 0; n < N; ++n)
                for (int c = c0; c < K; ++c) {
                    const S denom = (*pstore)[n * K + c] + (*gstore)[n * K + c] + smooth;
                    const S num = S(2) * (*istore)[n * K + c] + smooth;
                    const S inv2 = S(1) / (denom * denom);
                    S* d = pn->grad.ptr() + (static_cast<long>(n) * K + c) * hw;
                    const int* y = lab->ptr() + static_cast<long>(n) * hw;
                    for (long i = 0; i < hw; ++i) {
                        const S dy = (y[i] == c) ? S(2) : S(0);
                        // d(1 - num/denom)/dp = (num - dy*denom) / denom^2
                        d[i] += g0 * (num - dy * denom) * inv2;
                    }
                }
        });
}

// Mean over pixels of -log p[y].
template <typename S>
Var<S> ce_loss(Var<S> probs, const Array<int>& labels) {
    detail::check_probs_labels(probs, labels, "ce_loss");
    Var<S> picked = nn::gather_label_prob(probs, labels);
    return nn::mul_scalar(nn::mean_all(nn::log_op(picked)), S(-1));
}

// Hybrid segmentation loss: 0.5 * (dice + ce), both already batch means.
template <typename S>
Var<S> seg_loss(Var<S> probs, const Array<int>& labels, S smooth = S(1e-5),
                bool include_background = false) {
    if (probs.shape().empty() || probs.shape()[0] < 1)
        throw DataError("seg_loss: empty batch");
    return nn::mul_scalar(
        nn::add(dice_loss(probs, labels, smooth, include_background), ce_loss(probs, labels)),
        S(0.5));
}

// Closed-form KL to the unit Gaussian, mean over the batch rows:
//   sum_z 0.5 * (u^2 + v - log v - 1)
template <typename S>
Var<S> kl_loss(Var<S> mean, Var<S> variance) {
    check_same_shape(mean.value(), variance.value(), "kl_loss");
    if (mean.shape().size() != 2) throw ShapeError("kl_loss: expects (N,Z) inputs");
    for (long i = 0; i < variance.numel(); ++i)
        if (variance.value()[i] <= S(0)) throw DataError("kl_loss: non-positive variance");
    const int N = mean.shape()[0];
    Var<S> term = nn::sub(nn::add(nn::mul(mean, mean), variance),
                          nn::add_scalar(nn::log_op(variance), S(1)));
    return nn::mul_scalar(nn::sum_all(term), S(0.5) / S(N));
}

// Plain-typed wrapper for a single style distribution.
template <typename S>
S kl_loss(const model::StyleDistribution<S>& dist) {
    const int z = static_cast<int>(dist.mean.size());
    Var<S> u = Var<S>::constant(Array<S>(Shape{1, z}, std::vector<S>(dist.mean)));
    Var<S> v = Var<S>::constant(Array<S>(Shape{1, z}, std::vector<S>(dist.variance)));
    return kl_loss(u, v).item();
}

template <typename S>
Var<S> rec_loss(Var<S> image, Var<S> reconstruction) {
    return nn::mae(image, reconstruction);
}

template <typename S>
Var<S> saac_loss(Var<S> anatomy, Var<S> anatomy_reencoded) {
    return nn::mae(anatomy, anatomy_reencoded);
}

// Batch pairing for the domain style contrastive loss. Codes are indexed
// 0..b*D-1 grouped by domain; each anchor's positive is the same-domain code
// at the permuted slot, and every other-domain code is a negative.
struct ContrastivePairs {
    std::vector<int> domain_ids;            // per code
    std::vector<int> pos_index;             // per code (anchor -> positive)
    std::vector<std::uint8_t> neg_mask;     // A*A, 1 where domains differ
    double tau = 0.1;
    int per_domain = 0;
    int num_domains = 0;

    int negatives_per_anchor() const { return per_domain * (num_domains - 1); }
};

inline ContrastivePairs build_contrastive_pairs(const std::vector<int>& domain_ids, int b,
                                                Rng& rng, double tau = 0.1,
                                                bool derangement = false) {
    if (b < 1) throw ConfigError("build_contrastive_pairs: b must be >= 1");
    const int A = static_cast<int>(domain_ids.size());
    std::vector<int> uniq;
    for (int d : domain_ids)
        if (std::find(uniq.begin(), uniq.end(), d) == uniq.end()) uniq.push_back(d);
    const int D = static_cast<int>(uniq.size());
    if (D < 2) throw ConfigError("build_contrastive_pairs: need >= 2 domains for negatives");
    if (A != b * D) throw ConfigError("build_contrastive_pairs: expected exactly b codes per domain");
    for (int d : uniq) {
        int count = 0;
        for (int x : domain_ids) count += (x == d);
        if (count != b)
            throw ConfigError("build_contrastive_pairs: uneven per-domain counts");
    }

    ContrastivePairs out;
    out.domain_ids = domain_ids;
    out.tau = tau;
    out.per_domain = b;
    out.num_domains = D;
    out.pos_index.assign(static_cast<std::size_t>(A), -1);
    for (int d : uniq) {
        std::vector<int> members;
        for (int i = 0; i < A; ++i)
            if (domain_ids[i] == d) members.push_back(i);
        std::vector<int> perm = members;
        rng.shuffle(perm);
        if (derangement && members.size() > 1) {
            // re-shuffle until no fixed point; cheap at mini-batch sizes
            bool fixed = true;
            while (fixed) {
                fixed = false;
                for (std::size_t i = 0; i < members.size(); ++i)
                    if (perm[i] == members[i]) fixed = true;
                if (fixed) rng.shuffle(perm);
            }
        }
        for (std::size_t i = 0; i < members.size(); ++i) out.pos_index[members[i]] = perm[i];
    }
    out.neg_mask.assign(static_cast<std::size_t>(A) * A, 0);
    for (int i = 0; i < A; ++i)
        for (int j = 0; j < A; ++j)
            if (domain_ids[i] != domain_ids[j]) out.neg_mask[i * A + j] = 1;
    return out;
}

// InfoNCE over cosine similarities of the style codes (A,Z), averaged over
// anchors. Throws on zero-norm codes; the cosine itself carries a 1e-12 guard.
template <typename S>
Var<S> dsct_loss(Var<S> codes, const ContrastivePairs& pairs) {
    const auto& sh = codes.shape();
    if (sh.size() != 2 || sh[0] != static_cast<int>(pairs.domain_ids.size()))
        throw ShapeError("dsct_loss: codes must be (A,Z) matching the pairing");
    const int A = sh[0], Z = sh[1];
    for (int a = 0; a < A; ++a) {
        S norm2 = S(0);
        for (int z = 0; z < Z; ++z) norm2 += codes.value()[a * Z + z] * codes.value()[a * Z + z];
        if (norm2 == S(0)) throw DataError("dsct_loss: zero-norm style code at index " +
                                           std::to_string(a));
    }
    Var<S> sims = nn::cosine_sim_matrix(codes, codes);
    return nn::masked_info_nce(sims, pairs.pos_index, pairs.neg_mask,
                               static_cast<S>(pairs.tau));
}

// ContrastiveBatch with materialized code values (plain-typed contract).
template <typename S>
struct ContrastiveBatch {
    Array<S> codes;  // (A, Z)
    ContrastivePairs pairs;

    std::vector<S> anchor(int i) const { return row(i); }
    std::vector<S> positive(int i) const { return row(pairs.pos_index[i]); }
    std::vector<int> negative_indices(int i) const {
        std::vector<int> out;
        const int A = codes.shape[0];
        for (int j = 0; j < A; ++j)
            if (pairs.neg_mask[i * A + j]) out.push_back(j);
        return out;
    }

private:
    std::vector<S> row(int i) const {
        const int Z = codes.shape[1];
        return std::vector<S>(codes.data.begin() + static_cast<long>(i) * Z,
                              codes.data.begin() + static_cast<long>(i + 1) * Z);
    }
};

template <typename S>
ContrastiveBatch<S> build_contrastive_pairs(
    const std::vector<std::pair<model::StyleCode<S>, int>>& batch_styles, int b, Rng& rng,
    double tau = 0.1, bool derangement = false) {
    if (batch_styles.empty()) throw ConfigError("build_contrastive_pairs: empty batch");
    const int Z = static_cast<int>(batch_styles.front().first.z.size());
    const int A = static_cast<int>(batch_styles.size());
    Array<S> codes(Shape{A, Z});
    std::vector<int> domain_ids(static_cast<std::size_t>(A));
    for (int i = 0; i < A; ++i) {
        if (static_cast<int>(batch_styles[i].first.z.size()) != Z)
            throw ShapeError("build_contrastive_pairs: ragged style code lengths");
        std::copy(batch_styles[i].first.z.begin(), batch_styles[i].first.z.end(),
                  codes.ptr() + static_cast<long>(i) * Z);
        domain_ids[i] = batch_styles[i].second;
    }
    return ContrastiveBatch<S>{std::move(codes),
                               build_contrastive_pairs(domain_ids, b, rng, tau, derangement)};
}

template <typename S>
S dsct_loss(const ContrastiveBatch<S>& cb) {
    Var<S> codes = Var<S>::constant(cb.codes);
    return dsct_loss(codes, cb.pairs).item();
}

// Weighted total: seg + l1*kl + l2*rec + l3*dsct + l4*saac.
// Rejects non-finite components, naming the offending term.
template <typename S>
Var<S> total_loss(Var<S> seg, Var<S> kl, Var<S> rec, Var<S> dsct, Var<S> saac,
                  const LossWeights& w) {
    const char* names[5] = {"seg", "kl", "rec", "dsct", "saac"};
    const Var<S>* terms[5] = {&seg, &kl, &rec, &dsct, &saac};
    for (int i = 0; i < 5; ++i)
        if (!std::isfinite(static_cast<double>(terms[i]->item())))
            throw TrainingError(std::string("total_loss: non-finite component '") + names[i] +
                                "'");
    Var<S> total = seg;
    total = nn::add(total, nn::mul_scalar(kl, static_cast<S>(w.lambda1)));
    total = nn::add(total, nn::mul_scalar(rec, static_cast<S>(w.lambda2)));
    total = nn::add(total, nn::mul_scalar(dsct, static_cast<S>(w.lambda3)));
    total = nn::add(total, nn::mul_scalar(saac, static_cast<S>(w.lambda4)));
    return total;
}

}  // namespace cddsa::losses
