#include "cddsa/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "cddsa/core/errors.hpp"

namespace cddsa::metrics {

using nn::Array;
using nn::Shape;

namespace {

void check_binary_pair(const Array<int>& a, const Array<int>& b, const char* op) {
    if (a.shape != b.shape)
        throw ShapeError(std::string(op) + ": mask shape mismatch " + nn::shape_str(a.shape) +
                         " vs " + nn::shape_str(b.shape));
    if (a.ndim() != 2) throw ShapeError(std::string(op) + ": masks must be 2-d");
    for (long i = 0; i < a.numel(); ++i)
        if ((a[i] != 0 && a[i] != 1) || (b[i] != 0 && b[i] != 1))
            throw DataError(std::string(op) + ": masks must be binary (0/1)");
}

std::vector<std::pair<int, int>> surface_pixels(const Array<int>& mask) {
    const int H = mask.shape[0], W = mask.shape[1];
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!mask[y * W + x]) continue;
            const bool border = y == 0 || y == H - 1 || x == 0 || x == W - 1 ||
                                !mask[(y - 1) * W + x] || !mask[(y + 1) * W + x] ||
                                !mask[y * W + x - 1] || !mask[y * W + x + 1];
            if (border) out.emplace_back(y, x);
        }
    return out;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Felzenszwalb-Huttenlocher 1-d squared distance transform with sample
// spacing s: d[p] = min_q (s*(p-q))^2 + f[q]. Positions with f == inf carry
// no parabola; an all-inf row stays all-inf.
void edt_1d(const std::vector<double>& f, double s, std::vector<double>& d) {
    const int n = static_cast<int>(f.size());
    d.assign(static_cast<std::size_t>(n), kInf);
    std::vector<int> v(static_cast<std::size_t>(n));
    std::vector<double> z(static_cast<std::size_t>(n) + 1);
    const double s2 = s * s;
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[static_cast<std::size_t>(q)] == kInf) continue;
        double inter = -kInf;
        while (k >= 0) {
            const int vk = v[static_cast<std::size_t>(k)];
            inter = ((f[static_cast<std::size_t>(q)] + s2 * q * q) -
                     (f[static_cast<std::size_t>(vk)] + s2 * vk * vk)) /
                    (2.0 * s2 * (q - vk));
            if (inter <= z[static_cast<std::size_t>(k)])
                --k;
            else
                break;
        }
        ++k;
        v[static_cast<std::size_t>(k)] = q;
        z[static_cast<std::size_t>(k)] = (k == 0) ? -kInf : inter;
        z[static_cast<std::size_t>(k) + 1] = kInf;
    }
    if (k < 0) return;
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[static_cast<std::size_t>(j) + 1] < q) ++j;
        const int vj = v[static_cast<std::size_t>(j)];
        const double dq = s * (q - vj);
        d[static_cast<std::size_t>(q)] = dq * dq + f[static_cast<std::size_t>(vj)];
    }
}

// Exact squared Euclidean distance to the given site set, anisotropic spacing.
std::vector<double> edt_2d(const std::vector<std::pair<int, int>>& sites, int H, int W,
                           std::array<double, 2> spacing) {
    std::vector<double> grid(static_cast<std::size_t>(H) * W, kInf);
    for (auto [y, x] : sites) grid[static_cast<std::size_t>(y) * W + x] = 0.0;

    std::vector<double> row(static_cast<std::size_t>(W)), rowd;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) row[static_cast<std::size_t>(x)] = grid[static_cast<std::size_t>(y) * W + x];
        edt_1d(row, spacing[1], rowd);
        for (int x = 0; x < W; ++x) grid[static_cast<std::size_t>(y) * W + x] = rowd[static_cast<std::size_t>(x)];
    }
    std::vector<double> col(static_cast<std::size_t>(H)), cold;
    for (int x = 0; x < W; ++x) {
        for (int y = 0; y < H; ++y) col[static_cast<std::size_t>(y)] = grid[static_cast<std::size_t>(y) * W + x];
        edt_1d(col, spacing[0], cold);
        for (int y = 0; y < H; ++y) grid[static_cast<std::size_t>(y) * W + x] = cold[static_cast<std::size_t>(y)];
    }
    return grid;
}

}  // namespace

double dice_score(const Array<int>& pred, const Array<int>& gt) {
    check_binary_pair(pred, gt, "dice_score");
    long p = 0, g = 0, inter = 0;
    for (long i = 0; i < pred.numel(); ++i) {
        p += pred[i];
        g += gt[i];
        inter += pred[i] & gt[i];
    }
    if (p == 0 && g == 0) return 100.0;
    if (p == 0 || g == 0) return 0.0;
    return 100.0 * 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

std::optional<double> assd(const Array<int>& pred, const Array<int>& gt,
                           std::array<double, 2> spacing) {
    check_binary_pair(pred, gt, "assd");
    const auto sp = surface_pixels(pred);
    const auto sg = surface_pixels(gt);
    if (sp.empty() || sg.empty()) return std::nullopt;

    const int H = pred.shape[0], W = pred.shape[1];
    const auto dist_to_gt = edt_2d(sg, H, W, spacing);
    const auto dist_to_pred = edt_2d(sp, H, W, spacing);

    double total = 0.0;
    for (auto [y, x] : sp) total += std::sqrt(dist_to_gt[static_cast<std::size_t>(y) * W + x]);
    for (auto [y, x] : sg) total += std::sqrt(dist_to_pred[static_cast<std::size_t>(y) * W + x]);
    return total / static_cast<double>(sp.size() + sg.size());
}

namespace {
Aggregate summarize(const std::vector<const CaseMetric*>& rows) {
    Aggregate agg;
    agg.count = static_cast<int>(rows.size());
    double dsum = 0, asum = 0;
    int acount = 0;
    for (const auto* r : rows) {
        dsum += r->dice_percent;
        if (r->assd) {
            asum += *r->assd;
            ++acount;
        } else {
            ++agg.assd_undefined;
        }
    }
    if (agg.count > 0) agg.dice_mean = dsum / agg.count;
    if (acount > 0) agg.assd_mean = asum / acount;
    double dvar = 0, avar = 0;
    for (const auto* r : rows) {
        dvar += (r->dice_percent - agg.dice_mean) * (r->dice_percent - agg.dice_mean);
        if (r->assd) avar += (*r->assd - agg.assd_mean) * (*r->assd - agg.assd_mean);
    }
    if (agg.count > 0) agg.dice_std = std::sqrt(dvar / agg.count);
    if (acount > 0) agg.assd_std = std::sqrt(avar / acount);
    return agg;
}
}  // namespace

MetricsReport aggregate(std::vector<CaseMetric> rows) {
    if (rows.empty()) throw DataError("aggregate: no cases");
    MetricsReport report;
    report.per_case = std::move(rows);

    std::map<std::pair<int, int>, std::vector<const CaseMetric*>> by_dc;
    std::map<int, std::vector<const CaseMetric*>> by_c;
    std::vector<const CaseMetric*> all;
    for (const auto& r : report.per_case) {
        by_dc[{r.domain_id, r.class_id}].push_back(&r);
        by_c[r.class_id].push_back(&r);
        all.push_back(&r);
    }
    for (const auto& [key, group] : by_dc) report.per_domain_class[key] = summarize(group);
    for (const auto& [key, group] : by_c) report.per_class[key] = summarize(group);
    report.overall = summarize(all);
    return report;
}

void write_csv(const MetricsReport& report, const std::filesystem::path& path,
               const std::vector<std::string>& notes) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write report: " + path.string());
    for (const auto& note : notes) os << "# " << note << "\n";
    os << "case_id,domain_id,class,dice_percent,assd\n";
    for (const auto& r : report.per_case) {
        os << r.case_id << "," << r.domain_id << "," << r.class_id << "," << r.dice_percent
           << ",";
        if (r.assd)
            os << *r.assd;
        else
            os << "undefined";
        os << "\n";
    }
}

MetricsReport read_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot read report: " + path.string());
    std::string line;
    while (std::getline(is, line) && line.rfind("#", 0) == 0) {
    }
    if (line.rfind("case_id,", 0) != 0)
        throw DataError("unrecognized report header in " + path.string());
    std::vector<CaseMetric> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        CaseMetric r;
        std::string field;
        std::getline(ss, r.case_id, ',');
        std::getline(ss, field, ',');
        r.domain_id = std::stoi(field);
        std::getline(ss, field, ',');
        r.class_id = std::stoi(field);
        std::getline(ss, field, ',');
        r.dice_percent = std::stod(field);
        std::getline(ss, field, ',');
        if (field != "undefined") r.assd = std::stod(field);
        rows.push_back(std::move(r));
    }
    return aggregate(std::move(rows));
}

std::string render_table(const MetricsReport& report) {
    std::ostringstream os;
    char buf[160];
    os << "domain  class  cases  dice(%) mean+-std     assd mean+-std    assd n/a\n";
    for (const auto& [key, agg] : report.per_domain_class) {
        std::snprintf(buf, sizeof(buf), "%-7d %-6d %-6d %7.2f +- %-8.2f %7.3f +- %-8.3f %d\n",
                      key.first, key.second, agg.count, agg.dice_mean, agg.dice_std,
                      agg.assd_mean, agg.assd_std, agg.assd_undefined);
        os << buf;
    }
    os << "per-class overall:\n";
    for (const auto& [cls, agg] : report.per_class) {
        std::snprintf(buf, sizeof(buf), "        %-6d %-6d %7.2f +- %-8.2f %7.3f +- %-8.3f %d\n",
                      cls, agg.count, agg.dice_mean, agg.dice_std, agg.assd_mean, agg.assd_std,
                      agg.assd_undefined);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "all rows: %d   dice %.2f +- %.2f   assd %.3f +- %.3f\n",
                  report.overall.count, report.overall.dice_mean, report.overall.dice_std,
                  report.overall.assd_mean, report.overall.assd_std);
    os << buf;
    return os.str();
}

double wilcoxon_signed_rank_p(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty())
        throw DataError("wilcoxon: paired samples of equal nonzero length required");
    std::vector<double> diffs;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (d != 0.0) diffs.push_back(d);
    }
    const std::size_t n = diffs.size();
    if (n == 0) return 1.0;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return std::abs(diffs[x]) < std::abs(diffs[y]); });

    std::vector<double> ranks(n);
    double tie_correction = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n &&
               std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]]))
            ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        const double t = static_cast<double>(j - i + 1);
        tie_correction += t * t * t - t;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg_rank;
        i = j + 1;
    }

    double w_plus = 0.0;
    for (std::size_t k = 0; k < n; ++k)
        if (diffs[k] > 0) w_plus += ranks[k];

    const double nn_ = static_cast<double>(n);
    const double mean = nn_ * (nn_ + 1.0) / 4.0;
    const double var = nn_ * (nn_ + 1.0) * (2.0 * nn_ + 1.0) / 24.0 - tie_correction / 48.0;
    if (var <= 0) return 1.0;
    double z = (w_plus - mean) / std::sqrt(var);
    // continuity correction towards the mean
    z = z > 0 ? std::max(0.0, z - 0.5 / std::sqrt(var)) : std::min(0.0, z + 0.5 / std::sqrt(var));
    const double p = std::erfc(std::abs(z) / std::sqrt(2.0));
    return std::min(1.0, p);
}

}  // namespace cddsa::metrics
