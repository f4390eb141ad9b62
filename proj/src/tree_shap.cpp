#include "txtime/tree_shap.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include "txtime/error.hpp"
#include "txtime/parallel.hpp"

namespace txtime::explain {

double ShapExplanation::additivity_error() const {
    double s = base_value;
    for (double p : phi) s += p;
    return std::abs(s - prediction) / std::max(1.0, std::abs(prediction));
}

namespace {

using forest::Node;
using forest::RegressionTree;

void check_covers(const RegressionTree& t) {
    if (t.nodes.empty()) throw ModelIntegrityError("tree without nodes");
    for (std::size_t i = 0; i < t.nodes.size(); ++i)
        if (!(t.nodes[i].cover > 0.0))
            throw ModelIntegrityError("node " + std::to_string(i) + " has zero cover; TreeSHAP needs training covers");
}

double expectation(const RegressionTree& t, std::size_t i) {
    const auto& n = t.nodes[i];
    if (n.is_leaf()) return n.value;
    const auto l = static_cast<std::size_t>(n.left), r = static_cast<std::size_t>(n.right);
    return (t.nodes[l].cover * expectation(t, l) + t.nodes[r].cover * expectation(t, r)) / n.cover;
}

struct PathElement {
    int feature = -1;
    double zero_fraction = 0.0;
    double one_fraction = 0.0;
    double pweight = 0.0;
};

void extend_path(PathElement* path, int depth, double zero_fraction, double one_fraction, int feature) {
    path[depth] = {feature, zero_fraction, one_fraction, depth == 0 ? 1.0 : 0.0};
    for (int i = depth - 1; i >= 0; --i) {
        path[i + 1].pweight += one_fraction * path[i].pweight * (i + 1) / static_cast<double>(depth + 1);
        path[i].pweight = zero_fraction * path[i].pweight * (depth - i) / static_cast<double>(depth + 1);
    }
}

void unwind_path(PathElement* path, int depth, int index) {
    const double one = path[index].one_fraction;
    const double zero = path[index].zero_fraction;
    double next = path[depth].pweight;
    for (int i = depth - 1; i >= 0; --i) {
        if (one != 0.0) {
            const double tmp = path[i].pweight;
            path[i].pweight = next * (depth + 1) / static_cast<double>((i + 1) * one);
            next = tmp - path[i].pweight * zero * (depth - i) / static_cast<double>(depth + 1);
        } else {
            path[i].pweight = path[i].pweight * (depth + 1) / (zero * (depth - i));
        }
    }
    for (int i = index; i < depth; ++i) {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

// Total weight the path would carry with element `index` removed.
double unwound_sum(const PathElement* path, int depth, int index) {
    const double one = path[index].one_fraction;
    const double zero = path[index].zero_fraction;
    double next = path[depth].pweight;
    double total = 0.0;
    if (one != 0.0) {
        for (int i = depth - 1; i >= 0; --i) {
            const double tmp = next / ((i + 1) * one);
            total += tmp;
            next = path[i].pweight - tmp * zero * (depth - i);
        }
    } else {
        for (int i = depth - 1; i >= 0; --i) total += path[i].pweight / (zero * (depth - i));
    }
    return total * (depth + 1);
}

struct Walker {
    const RegressionTree& tree;
    std::span<const double> row;
    std::span<double> phi;
    int condition;
    int condition_feature;

    void recurse(std::size_t node, int depth, PathElement* parent_path, double parent_zero, double parent_one,
                 int parent_feature, double condition_fraction) {
        if (condition_fraction == 0.0) return;
        PathElement* path = parent_path + depth + 1;
        std::copy(parent_path, parent_path + depth + 1, path);
        if (condition == 0 || condition_feature != parent_feature)
            extend_path(path, depth, parent_zero, parent_one, parent_feature);

        const Node& n = tree.nodes[node];
        if (n.is_leaf()) {
            for (int i = 1; i <= depth; ++i) {
                const double w = unwound_sum(path, depth, i);
                const auto& el = path[i];
                phi[static_cast<std::size_t>(el.feature)] +=
                    w * (el.one_fraction - el.zero_fraction) * n.value * condition_fraction;
            }
            return;
        }

        const bool goes_left = row[static_cast<std::size_t>(n.feature)] <= n.threshold;
        const auto hot = static_cast<std::size_t>(goes_left ? n.left : n.right);
        const auto cold = static_cast<std::size_t>(goes_left ? n.right : n.left);
        const double hot_zero = tree.nodes[hot].cover / n.cover;
        const double cold_zero = tree.nodes[cold].cover / n.cover;
        double incoming_zero = 1.0, incoming_one = 1.0;

        // A feature already on the path is unwound and re-extended here.
        int k = 0;
        for (; k <= depth; ++k)
            if (path[k].feature == n.feature) break;
        if (k != depth + 1) {
            incoming_zero = path[k].zero_fraction;
            incoming_one = path[k].one_fraction;
            unwind_path(path, depth, k);
            depth -= 1;
        }

        double hot_fraction = condition_fraction, cold_fraction = condition_fraction;
        if (condition > 0 && n.feature == condition_feature) {
            cold_fraction = 0.0;
            depth -= 1;
        } else if (condition < 0 && n.feature == condition_feature) {
            hot_fraction *= hot_zero;
            cold_fraction *= cold_zero;
            depth -= 1;
        }
        recurse(hot, depth + 1, path, hot_zero * incoming_zero, incoming_one, n.feature, hot_fraction);
        recurse(cold, depth + 1, path, cold_zero * incoming_zero, 0.0, n.feature, cold_fraction);
    }
};

ShapExplanation explain_row(const forest::RandomForest& f, std::span<const double> row, double base) {
    ShapExplanation e;
    e.phi.assign(f.feature_names.size(), 0.0);
    e.base_value = base;
    double pred = 0.0;
    for (std::size_t t = 0; t < f.trees.size(); ++t) {
        tree_shap_accumulate(f.trees[t], row, e.phi);
        pred += f.trees[t].predict(row);
    }
    const double scale = 1.0 / static_cast<double>(f.trees.size());
    for (auto& p : e.phi) p *= scale;
    e.prediction = pred * scale;
    return e;
}

double forest_base(const forest::RandomForest& f) {
    if (f.trees.empty()) throw ModelIntegrityError("forest without trees");
    double s = 0.0;
    for (const auto& t : f.trees) s += expected_value(t);
    return s / static_cast<double>(f.trees.size());
}

}  // namespace

double expected_value(const RegressionTree& tree) {
    check_covers(tree);
    return expectation(tree, 0);
}

void tree_shap_accumulate(const RegressionTree& tree, std::span<const double> row, std::span<double> phi,
                          int condition, int condition_feature) {
    check_covers(tree);
    const auto d = static_cast<std::size_t>(tree.depth());
    std::vector<PathElement> buffer((d + 2) * (d + 3) / 2);
    Walker w{tree, row, phi, condition, condition_feature};
    w.recurse(0, 0, buffer.data(), 1.0, 1.0, -1, 1.0);
}

ShapExplanation tree_shap(const forest::RandomForest& f, std::span<const double> row) {
    const double base = forest_base(f);
    return explain_row(f, row, base);
}

std::vector<std::vector<double>> aligned_rows(const forest::RandomForest& f, const FeatureMatrix& m) {
    std::vector<std::size_t> cols;
    for (const auto& name : f.feature_names) {
        auto c = m.index_of(name);
        if (!c) throw DataError("explanation input lacks feature '" + name + "'");
        cols.push_back(*c);
    }
    std::vector<std::vector<double>> rows(m.rows(), std::vector<double>(cols.size()));
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t k = 0; k < cols.size(); ++k) rows[r][k] = m.at(r, cols[k]);
    return rows;
}

std::vector<ShapExplanation> tree_shap(const forest::RandomForest& f, const FeatureMatrix& m) {
    const double base = forest_base(f);
    const auto rows = aligned_rows(f, m);
    std::vector<ShapExplanation> out(rows.size());
    const auto n = static_cast<std::ptrdiff_t>(rows.size());
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 16) if (!in_parallel())
    for (std::ptrdiff_t r = 0; r < n; ++r) {
        try {
            out[static_cast<std::size_t>(r)] = explain_row(f, rows[static_cast<std::size_t>(r)], base);
        } catch (...) {
#pragma omp critical
            failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

std::vector<ShapExplanation> tree_shap_serial(const forest::RandomForest& f, const FeatureMatrix& m) {
    const double base = forest_base(f);
    std::vector<ShapExplanation> out;
    for (const auto& row : aligned_rows(f, m)) out.push_back(explain_row(f, row, base));
    return out;
}

}  // namespace txtime::explain
