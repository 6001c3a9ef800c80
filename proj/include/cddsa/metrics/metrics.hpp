#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cddsa/core/array.hpp"

// Evaluation metrics: per-class Dice score and average symmetric surface
// distance, with per-domain / overall aggregation in the tables' mean+-std
// convention (population std).

namespace cddsa::metrics {

// Dice score in percent on binary masks. Both masks empty -> 100, exactly one
// empty -> 0.
double dice_score(const nn::Array<int>& pred, const nn::Array<int>& gt);

// Average symmetric surface distance. Surfaces are mask pixels with a
// background 4-neighbor (the image border counts as background). Distances are
// Euclidean with per-axis spacing {sy, sx}. Returns nullopt when either mask
// is empty (the case is excluded from aggregates and counted).
std::optional<double> assd(const nn::Array<int>& pred, const nn::Array<int>& gt,
                           std::array<double, 2> spacing = {1.0, 1.0});

struct CaseMetric {
    std::string case_id;
    int domain_id = 0;
    int class_id = 0;
    double dice_percent = 0.0;
    std::optional<double> assd;
};

struct Aggregate {
    double dice_mean = 0.0;
    double dice_std = 0.0;
    double assd_mean = 0.0;
    double assd_std = 0.0;
    int count = 0;
    int assd_undefined = 0;
};

struct MetricsReport {
    std::vector<CaseMetric> per_case;
    std::map<std::pair<int, int>, Aggregate> per_domain_class;  // (domain, class)
    std::map<int, Aggregate> per_class;                         // overall per class
    Aggregate overall;
};

MetricsReport aggregate(std::vector<CaseMetric> rows);

// Optional note lines are written as leading '#' comments and ignored on read.
void write_csv(const MetricsReport& report, const std::filesystem::path& path,
               const std::vector<std::string>& notes = {});
MetricsReport read_csv(const std::filesystem::path& path);
std::string render_table(const MetricsReport& report);

// Paired two-sided Wilcoxon signed-rank p-value (normal approximation with
// tie correction). Used when comparing per-case Dice between two runs.
double wilcoxon_signed_rank_p(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace cddsa::metrics
