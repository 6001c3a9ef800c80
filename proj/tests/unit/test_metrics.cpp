#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cddsa/metrics/metrics.hpp"
#include "cddsa/core/rng.hpp"
#include "support/tmpdir.hpp"

using namespace cddsa;
using nn::Array;
using nn::Shape;
using testsupport::TmpDir;

namespace {

Array<int> mask_from(int h, int w, std::initializer_list<std::pair<int, int>> pixels) {
    Array<int> m(Shape{h, w});
    for (auto [y, x] : pixels) m[y * w + x] = 1;
    return m;
}

Array<int> random_mask(int h, int w, double density, Rng& rng) {
    Array<int> m(Shape{h, w});
    for (long i = 0; i < m.numel(); ++i) m[i] = rng.uniform() < density ? 1 : 0;
    return m;
}

// O(n^2) oracle: surfaces by 4-neighborhood (border counts as background),
// exhaustive nearest-neighbor distances both ways.
std::vector<std::pair<int, int>> surface_oracle(const Array<int>& m) {
    const int H = m.shape[0], W = m.shape[1];
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!m[y * W + x]) continue;
            const bool edge = y == 0 || y == H - 1 || x == 0 || x == W - 1;
            if (edge || !m[(y - 1) * W + x] || !m[(y + 1) * W + x] || !m[y * W + x - 1] ||
                !m[y * W + x + 1])
                out.emplace_back(y, x);
        }
    return out;
}

std::optional<double> assd_oracle(const Array<int>& a, const Array<int>& b,
                                  std::array<double, 2> spacing) {
    const auto sa = surface_oracle(a), sb = surface_oracle(b);
    if (sa.empty() || sb.empty()) return std::nullopt;
    double total = 0;
    for (auto [y, x] : sa) {
        double best = 1e300;
        for (auto [v, u] : sb) {
            const double dy = spacing[0] * (y - v), dx = spacing[1] * (x - u);
            best = std::min(best, dy * dy + dx * dx);
        }
        total += std::sqrt(best);
    }
    for (auto [y, x] : sb) {
        double best = 1e300;
        for (auto [v, u] : sa) {
            const double dy = spacing[0] * (y - v), dx = spacing[1] * (x - u);
            best = std::min(best, dy * dy + dx * dx);
        }
        total += std::sqrt(best);
    }
    return total / static_cast<double>(sa.size() + sb.size());
}

double dice_oracle(const Array<int>& a, const Array<int>& b) {
    long pa = 0, pb = 0, inter = 0;
    for (long i = 0; i < a.numel(); ++i) {
        pa += a[i];
        pb += b[i];
        inter += a[i] & b[i];
    }
    if (pa == 0 && pb == 0) return 100.0;
    if (pa == 0 || pb == 0) return 0.0;
    return 200.0 * static_cast<double>(inter) / static_cast<double>(pa + pb);
}

}  // namespace

TEST_CASE("dice_score basic cases") {
    auto a = mask_from(4, 4, {{1, 1}, {1, 2}, {2, 1}});
    CHECK(metrics::dice_score(a, a) == doctest::Approx(100.0));

    auto b = mask_from(4, 4, {{0, 0}});
    CHECK(metrics::dice_score(a, b) == doctest::Approx(0.0));

    // pred 2x2 block inside a 2x4 gt block: 100 * (2*4)/(4+8)
    Array<int> pred(Shape{6, 8});
    Array<int> gt(Shape{6, 8});
    for (int y = 2; y < 4; ++y)
        for (int x = 2; x < 4; ++x) pred[y * 8 + x] = 1;
    for (int y = 2; y < 4; ++y)
        for (int x = 1; x < 5; ++x) gt[y * 8 + x] = 1;
    CHECK(metrics::dice_score(pred, gt) == doctest::Approx(100.0 * 8.0 / 12.0));

    Array<int> empty(Shape{4, 4});
    CHECK(metrics::dice_score(empty, empty) == doctest::Approx(100.0));
    CHECK(metrics::dice_score(a, empty) == doctest::Approx(0.0));

    Array<int> other(Shape{3, 3});
    CHECK_THROWS_AS(metrics::dice_score(a, other), ShapeError);
    Array<int> nonbinary(Shape{4, 4}, std::vector<int>(16, 2));
    CHECK_THROWS_AS(metrics::dice_score(a, nonbinary), DataError);
}

TEST_CASE("dice_score is symmetric") {
    Rng rng(61);
    for (int trial = 0; trial < 50; ++trial) {
        auto a = random_mask(9, 7, 0.4, rng);
        auto b = random_mask(9, 7, 0.3, rng);
        CHECK(metrics::dice_score(a, b) == doctest::Approx(metrics::dice_score(b, a)));
        CHECK(metrics::dice_score(a, b) == doctest::Approx(dice_oracle(a, b)));
    }
}

TEST_CASE("assd exact values") {
    auto a = mask_from(8, 8, {{2, 2}});
    CHECK(*metrics::assd(a, a) == doctest::Approx(0.0));

    // two single pixels three columns apart, unit spacing
    auto b = mask_from(8, 8, {{2, 5}});
    CHECK(*metrics::assd(a, b) == doctest::Approx(3.0));

    Array<int> empty(Shape{8, 8});
    CHECK(!metrics::assd(a, empty).has_value());
    CHECK(!metrics::assd(empty, a).has_value());
    CHECK(!metrics::assd(empty, empty).has_value());
}

TEST_CASE("assd equals the exhaustive oracle on random mask pairs") {
    Rng rng(62);
    int nonempty = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int h = 3 + static_cast<int>(rng.uniform_index(10));
        const int w = 3 + static_cast<int>(rng.uniform_index(10));
        auto a = random_mask(h, w, 0.25, rng);
        auto b = random_mask(h, w, 0.25, rng);
        const auto got = metrics::assd(a, b);
        const auto want = assd_oracle(a, b, {1.0, 1.0});
        CHECK(got.has_value() == want.has_value());
        if (got && want) {
            ++nonempty;
            CHECK(std::abs(*got - *want) < 1e-9);
            // symmetry of the symmetric mean
            CHECK(*metrics::assd(a, b) == doctest::Approx(*metrics::assd(b, a)));
        }
    }
    CHECK(nonempty > 150);
}

TEST_CASE("assd anisotropic spacing and the doubling property") {
    Rng rng(63);
    for (int trial = 0; trial < 30; ++trial) {
        auto a = random_mask(10, 10, 0.3, rng);
        auto b = random_mask(10, 10, 0.3, rng);
        const auto base = metrics::assd(a, b, {1.0, 1.0});
        const auto doubled = metrics::assd(a, b, {2.0, 2.0});
        if (!base) continue;
        CHECK(*doubled == doctest::Approx(2.0 * *base));
        const auto aniso = metrics::assd(a, b, {1.0, 3.0});
        const auto aniso_want = assd_oracle(a, b, {1.0, 3.0});
        CHECK(std::abs(*aniso - *aniso_want) < 1e-9);
    }
}

TEST_CASE("exhaustive small-mask sweep against the oracle") {
    // all 6x6-or-smaller shapes from a random family, both metrics
    Rng rng(64);
    for (int trial = 0; trial < 300; ++trial) {
        const int h = 2 + static_cast<int>(rng.uniform_index(5));
        const int w = 2 + static_cast<int>(rng.uniform_index(5));
        auto a = random_mask(h, w, rng.uniform(0.1, 0.8), rng);
        auto b = random_mask(h, w, rng.uniform(0.1, 0.8), rng);
        CHECK(metrics::dice_score(a, b) == doctest::Approx(dice_oracle(a, b)));
        const auto got = metrics::assd(a, b);
        const auto want = assd_oracle(a, b, {1.0, 1.0});
        CHECK(got.has_value() == want.has_value());
        if (got) CHECK(std::abs(*got - *want) < 1e-9);
    }
}

TEST_CASE("aggregate: population statistics and partitions") {
    using metrics::CaseMetric;
    std::vector<CaseMetric> rows;
    rows.push_back({"c1", 0, 1, 80.0, 2.0});
    rows.push_back({"c2", 0, 1, 90.0, 4.0});
    auto rep = metrics::aggregate(rows);
    const auto& agg = rep.per_domain_class.at({0, 1});
    CHECK(agg.dice_mean == doctest::Approx(85.0));
    CHECK(agg.dice_std == doctest::Approx(5.0));  // population std
    CHECK(agg.assd_mean == doctest::Approx(3.0));
    CHECK(agg.count == 2);

    std::vector<CaseMetric> single = {{"c1", 2, 1, 73.0, std::nullopt}};
    auto rep1 = metrics::aggregate(single);
    CHECK(rep1.overall.dice_mean == doctest::Approx(73.0));
    CHECK(rep1.overall.dice_std == doctest::Approx(0.0));
    CHECK(rep1.overall.assd_undefined == 1);

    // domains partition the rows: per-domain counts sum to the total
    std::vector<CaseMetric> multi;
    Rng rng(65);
    for (int i = 0; i < 30; ++i)
        multi.push_back({"case" + std::to_string(i), static_cast<int>(rng.uniform_index(3)), 1,
                         rng.uniform(0, 100), std::nullopt});
    auto rep3 = metrics::aggregate(multi);
    int total = 0;
    for (const auto& [key, agg3] : rep3.per_domain_class) total += agg3.count;
    CHECK(total == 30);

    CHECK_THROWS_AS(metrics::aggregate({}), DataError);
}

TEST_CASE("report CSV round trip") {
    TmpDir tmp("metrics_csv");
    std::vector<metrics::CaseMetric> rows = {{"a", 0, 1, 81.25, 1.5},
                                             {"a", 0, 2, 92.5, std::nullopt},
                                             {"b", 1, 1, 64.0, 7.25}};
    auto rep = metrics::aggregate(rows);
    metrics::write_csv(rep, tmp.path / "r.csv");
    auto back = metrics::read_csv(tmp.path / "r.csv");
    REQUIRE(back.per_case.size() == 3);
    CHECK(back.per_case[0].dice_percent == doctest::Approx(81.25));
    CHECK(!back.per_case[1].assd.has_value());
    CHECK(back.per_case[2].assd.value() == doctest::Approx(7.25));
}

TEST_CASE("wilcoxon signed-rank behaves sensibly") {
    std::vector<double> a = {80, 82, 78, 85, 90, 76, 88, 81, 79, 84, 83, 86};
    CHECK(metrics::wilcoxon_signed_rank_p(a, a) == doctest::Approx(1.0));

    std::vector<double> shifted;
    for (double v : a) shifted.push_back(v - 5.0);
    const double p = metrics::wilcoxon_signed_rank_p(a, shifted);
    CHECK(p < 0.01);

    std::vector<double> jitter = a;
    jitter[0] += 0.5;
    jitter[1] -= 0.5;
    CHECK(metrics::wilcoxon_signed_rank_p(a, jitter) > 0.2);
}
