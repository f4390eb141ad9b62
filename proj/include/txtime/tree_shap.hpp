#pragma once

#include <span>
#include <vector>

#include "txtime/feature_matrix.hpp"
#include "txtime/forest.hpp"

namespace txtime::explain {

struct ShapExplanation {
    double base_value = 0.0;  // cover-weighted expected output (log-minutes)
    std::vector<double> phi;  // one per forest feature
    double prediction = 0.0;

    /// |base + sum(phi) - prediction| / max(1, |prediction|).
    double additivity_error() const;
};

/// Cover-weighted expectation of the tree output; throws ModelIntegrityError on a zero cover.
double expected_value(const forest::RegressionTree& tree);

/// Adds one tree's path-dependent Shapley values for `row` into `phi`.
/// condition = +1 / -1 fixes `condition_feature` present / absent (used for
/// interaction values); 0 is the plain algorithm.
void tree_shap_accumulate(const forest::RegressionTree& tree, std::span<const double> row, std::span<double> phi,
                          int condition = 0, int condition_feature = -1);

/// Exact path-dependent TreeSHAP averaged over the forest's trees.
ShapExplanation tree_shap(const forest::RandomForest& f, std::span<const double> row);

/// One explanation per matrix row; columns matched by name. Rows run on OpenMP threads.
std::vector<ShapExplanation> tree_shap(const forest::RandomForest& f, const FeatureMatrix& m);
std::vector<ShapExplanation> tree_shap_serial(const forest::RandomForest& f, const FeatureMatrix& m);

/// Rows of `m` reordered into the forest's feature order.
std::vector<std::vector<double>> aligned_rows(const forest::RandomForest& f, const FeatureMatrix& m);

}  // namespace txtime::explain
