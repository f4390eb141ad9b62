#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "txtime/feature_matrix.hpp"

namespace txtime::screen {

/// log(x+1) on every numeric column and the target; flag and label columns
/// are left as they are. Throws TransformError naming the first negative cell.
FeatureMatrix log1p_transform(const FeatureMatrix& m);

/// Feature names, most worth keeping first. Names missing from a priority
/// list rank after every listed name, in column order.
std::vector<std::string> default_keep_priority();

/// One removed-vs-kept direction of the shipped correlation fixture.
struct KeepDirection {
    std::string removed;
    std::string kept;
};
const std::vector<KeepDirection>& reference_keep_directions();

struct CorrelationRemoval {
    std::string removed;
    std::string kept;
    double rho = 0.0;
};

struct RedundancyRemoval {
    std::string feature;
    double r2 = 0.0;
};

/// Stopping rule (2): removing `candidate` would leave `previously_removed`
/// explained below the threshold.
struct BlockingPair {
    std::string candidate;
    std::string previously_removed;
    double r2 = 0.0;
};

struct ScreenReport {
    std::vector<std::string> input;
    std::vector<std::string> removed_constant;
    std::vector<CorrelationRemoval> removed_by_correlation;
    std::vector<RedundancyRemoval> removed_by_redundancy;
    std::optional<BlockingPair> blocking;
    std::vector<std::string> surviving;
    std::vector<std::string> notes;
};

nlohmann::json to_json(const ScreenReport& r);
ScreenReport screen_report_from_json(const nlohmann::json& j);

/// Symmetric |Spearman rho| matrix (row-major, p x p) over the given columns.
/// Column pairs are spread over OpenMP threads; the serial version is the
/// reference and returns identical values.
std::vector<double> abs_spearman_matrix(const FeatureMatrix& m, const std::vector<std::size_t>& cols);
std::vector<double> abs_spearman_matrix_serial(const FeatureMatrix& m, const std::vector<std::size_t>& cols);

/// Average-linkage clusters on |rho|, merged while the linkage exceeds `threshold`.
std::vector<std::vector<std::size_t>> average_linkage_clusters(const std::vector<double>& abs_rho, std::size_t p,
                                                               double threshold);

/// Removes near-duplicate columns until no pair has |rho| > threshold.
ScreenReport correlation_filter(const FeatureMatrix& m, double threshold = 0.7,
                                const std::vector<std::string>& keep_priority = default_keep_priority());

/// Stepwise removal of the most OLS-explainable feature while its R^2 exceeds
/// the threshold. Starts from `prior.surviving` when given, otherwise from all columns.
ScreenReport redundancy_filter(const FeatureMatrix& m, double r2_threshold = 0.9, ScreenReport prior = {},
                               const std::vector<std::string>& keep_priority = default_keep_priority());

struct ScreenOptions {
    double correlation_threshold = 0.7;
    double r2_threshold = 0.9;
    std::vector<std::string> keep_priority = default_keep_priority();
};

/// Correlation then redundancy filtering, decided on `train` only.
ScreenReport run(const FeatureMatrix& train, const ScreenOptions& options = {});

/// Keeps the report's surviving columns.
FeatureMatrix apply(const FeatureMatrix& m, const ScreenReport& report);

}  // namespace txtime::screen
