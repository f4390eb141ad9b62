#include "txtime/forest.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <sstream>

#include "txtime/error.hpp"
#include "txtime/parallel.hpp"

namespace txtime::forest {

FeatureFraction FeatureFraction::parse(const std::string& text) {
    if (text == "sqrt") return sqrt();
    if (text == "log2") return log2();
    double v = 0.0;
    try {
        std::size_t used = 0;
        v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
    } catch (const std::exception&) {
        throw ConfigError("feature_fraction '" + text + "' is not sqrt, log2 or a number");
    }
    if (!(v > 0.0 && v <= 1.0)) throw ConfigError("feature_fraction must lie in (0,1]");
    return fraction(v);
}

std::size_t FeatureFraction::count(std::size_t p) const {
    if (p == 0) return 0;
    std::size_t k = 0;
    switch (rule) {
        case Rule::fraction: k = static_cast<std::size_t>(std::ceil(value * static_cast<double>(p) - 1e-12)); break;
        case Rule::sqrt: k = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(p)) - 1e-12)); break;
        case Rule::log2: k = static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(p)) - 1e-12)); break;
    }
    return std::clamp<std::size_t>(k, 1, p);
}

std::string FeatureFraction::to_string() const {
    switch (rule) {
        case Rule::sqrt: return "sqrt";
        case Rule::log2: return "log2";
        case Rule::fraction: break;
    }
    std::ostringstream out;
    out << value;
    return out.str();
}

void Hyperparams::validate() const {
    if (tree_count < 1) throw ConfigError("tree_count must be >= 1");
    if (max_depth && *max_depth < 0) throw ConfigError("max_tree_depth must be >= 0");
    if (min_leaf_size < 1) throw ConfigError("min_leaf_size must be >= 1");
    if (feature_fraction.rule == FeatureFraction::Rule::fraction &&
        !(feature_fraction.value > 0.0 && feature_fraction.value <= 1.0))
        throw ConfigError("feature_fraction must lie in (0,1]");
}

nlohmann::json to_json(const Hyperparams& h) {
    return {{"tree_count", h.tree_count},
            {"max_tree_depth", h.max_depth ? nlohmann::json(*h.max_depth) : nlohmann::json("unlimited")},
            {"feature_fraction", h.feature_fraction.to_string()},
            {"min_leaf_size", h.min_leaf_size},
            {"seed", h.seed},
            {"bootstrap", h.bootstrap}};
}

Hyperparams hyperparams_from_json(const nlohmann::json& j) {
    Hyperparams h;
    h.tree_count = j.at("tree_count").get<int>();
    const auto& d = j.at("max_tree_depth");
    if (d.is_number()) h.max_depth = d.get<int>();
    h.feature_fraction = FeatureFraction::parse(j.at("feature_fraction").get<std::string>());
    h.min_leaf_size = j.value("min_leaf_size", 1);
    h.seed = j.value("seed", std::uint64_t{1});
    h.bootstrap = j.value("bootstrap", true);
    return h;
}

std::size_t RegressionTree::leaf_of(std::span<const double> row) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
        const auto& n = nodes[i];
        i = static_cast<std::size_t>(row[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
    }
    return i;
}

int RegressionTree::depth() const {
    std::vector<int> d(nodes.size(), 0);
    int best = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        best = std::max(best, d[i]);
        if (!nodes[i].is_leaf()) {
            d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
            d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
        }
    }
    return best;
}

double RandomForest::predict(std::span<const double> row) const {
    double s = 0.0;
    for (const auto& t : trees) s += t.predict(row);
    return s / static_cast<double>(trees.size());
}

std::vector<double> RandomForest::predict(const FeatureMatrix& m) const {
    std::vector<std::size_t> cols;
    for (const auto& name : feature_names) {
        auto c = m.index_of(name);
        if (!c) throw DataError("prediction input lacks feature '" + name + "'");
        cols.push_back(*c);
    }
    std::vector<double> out(m.rows());
    const auto n = static_cast<std::ptrdiff_t>(m.rows());
#pragma omp parallel for schedule(static) if (!in_parallel() && n > 256)
    for (std::ptrdiff_t r = 0; r < n; ++r) {
        std::vector<double> row(cols.size());
        for (std::size_t k = 0; k < cols.size(); ++k) row[k] = m.at(static_cast<std::size_t>(r), cols[k]);
        out[static_cast<std::size_t>(r)] = predict(row);
    }
    return out;
}

namespace {

// Per-feature orderings of every matrix row by value; ties by row index.
using ColumnOrder = std::vector<std::vector<std::uint32_t>>;

ColumnOrder column_order(const FeatureMatrix& m) {
    ColumnOrder order(m.cols());
    for (std::size_t f = 0; f < m.cols(); ++f) {
        const auto x = m.column(f);
        auto& o = order[f];
        o.resize(m.rows());
        std::iota(o.begin(), o.end(), 0u);
        std::stable_sort(o.begin(), o.end(), [&](std::uint32_t a, std::uint32_t b) { return x[a] < x[b]; });
    }
    return order;
}

// Each node owns the range [lo, hi) of every per-feature list; splitting
// partitions the range stably, so the lists stay sorted without re-sorting.
class TreeBuilder {
  public:
    TreeBuilder(const FeatureMatrix& m, const Hyperparams& hp, Rng& rng, const ColumnOrder& order)
        : m_(m), hp_(hp), rng_(rng), order_(order), p_(m.cols()), mtry_(hp.feature_fraction.count(m.cols())) {}

    RegressionTree build(std::vector<std::size_t> rows) {
        rows_ = std::move(rows);
        const auto n = rows_.size();
        // Positions grouped by matrix row, then laid out in each feature's value order.
        std::vector<std::uint32_t> by_row(n);
        std::iota(by_row.begin(), by_row.end(), 0u);
        std::stable_sort(by_row.begin(), by_row.end(), [&](auto a, auto b) { return rows_[a] < rows_[b]; });
        std::vector<std::uint32_t> first(m_.rows() + 1, 0);
        for (auto r : rows_) ++first[r + 1];
        for (std::size_t r = 0; r < m_.rows(); ++r) first[r + 1] += first[r];
        sorted_.assign(p_ + 1, std::vector<std::uint32_t>(n));
        for (std::size_t f = 0; f < p_; ++f) {
            std::size_t k = 0;
            for (auto r : order_[f])
                for (auto i = first[r]; i < first[r + 1]; ++i) sorted_[f][k++] = by_row[i];
        }
        auto& natural = sorted_[p_];
        std::iota(natural.begin(), natural.end(), 0u);
        goes_left_.assign(n, 0);
        tmp_.resize(n);

        RegressionTree t;
        grow(0, n, 0);
        t.nodes = std::move(nodes_);
        return t;
    }

  private:
    struct Split {
        int feature = -1;
        double threshold = 0.0;
        double score = -1.0;
    };

    int grow(std::size_t lo, std::size_t hi, int depth) {
        const auto& y = m_.target();
        const auto& natural = sorted_[p_];
        const auto index = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        double sum = 0.0;
        for (auto i = lo; i < hi; ++i) sum += y[rows_[natural[i]]];
        const auto n = hi - lo;
        nodes_[static_cast<std::size_t>(index)].value = sum / static_cast<double>(n);
        nodes_[static_cast<std::size_t>(index)].cover = static_cast<double>(n);

        const auto min_leaf = static_cast<std::size_t>(hp_.min_leaf_size);
        const double y0 = y[rows_[natural[lo]]];
        bool constant = true;
        for (auto i = lo; i < hi && constant; ++i) constant = y[rows_[natural[i]]] == y0;
        if (constant || n < 2 * min_leaf || (hp_.max_depth && depth >= *hp_.max_depth)) return index;

        const auto split = best_split(lo, hi, nodes_[static_cast<std::size_t>(index)].value);
        if (split.feature < 0) return index;

        const auto x = m_.column(static_cast<std::size_t>(split.feature));
        std::size_t n_left = 0;
        for (auto i = lo; i < hi; ++i) {
            const auto pos = natural[i];
            goes_left_[pos] = x[rows_[pos]] <= split.threshold;
            n_left += goes_left_[pos];
        }
        for (auto& list : sorted_) {
            std::size_t l = lo, r = 0;
            for (auto i = lo; i < hi; ++i) {
                const auto pos = list[i];
                if (goes_left_[pos])
                    list[l++] = pos;
                else
                    tmp_[r++] = pos;
            }
            std::copy(tmp_.begin(), tmp_.begin() + static_cast<std::ptrdiff_t>(r), list.begin() + static_cast<std::ptrdiff_t>(l));
        }
        nodes_[static_cast<std::size_t>(index)].feature = split.feature;
        nodes_[static_cast<std::size_t>(index)].threshold = split.threshold;
        const int l = grow(lo, lo + n_left, depth + 1);
        nodes_[static_cast<std::size_t>(index)].left = l;
        const int r = grow(lo + n_left, hi, depth + 1);
        nodes_[static_cast<std::size_t>(index)].right = r;
        return index;
    }

    Split best_split(std::size_t lo, std::size_t hi, double mean) {
        std::vector<std::size_t> order(p_);
        std::iota(order.begin(), order.end(), 0);
        if (mtry_ < p_) {
            for (std::size_t i = p_ - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng_, i + 1)]);
        }
        // Candidate features in chunks of mtry; later chunks only when earlier ones cannot split.
        for (std::size_t start = 0; start < p_; start += mtry_) {
            const auto end = std::min(p_, start + mtry_);
            std::vector<std::size_t> chunk(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
            std::sort(chunk.begin(), chunk.end());
            Split best;
            for (auto f : chunk) scan_feature(lo, hi, f, mean, best);
            if (best.feature >= 0) return best;
        }
        return {};
    }

    // Between-children sum of squares of centered targets; maximal = least child SSE.
    void scan_feature(std::size_t lo, std::size_t hi, std::size_t f, double mean, Split& best) {
        const auto x = m_.column(f);
        const auto& y = m_.target();
        const auto& list = sorted_[f];
        const auto n = hi - lo;
        double total = 0.0;
        for (auto i = lo; i < hi; ++i) total += y[rows_[list[i]]] - mean;
        const auto min_leaf = static_cast<std::size_t>(hp_.min_leaf_size);
        double left = 0.0;
        for (std::size_t k = 0; k + 1 < n; ++k) {
            const auto a = rows_[list[lo + k]], b = rows_[list[lo + k + 1]];
            left += y[a] - mean;
            if (x[a] == x[b]) continue;
            const auto nl = k + 1, nr = n - nl;
            if (nl < min_leaf || nr < min_leaf) continue;
            const double right = total - left;
            const double score = left * left / static_cast<double>(nl) + right * right / static_cast<double>(nr);
            if (score > best.score + 1e-12 * std::abs(best.score)) {
                best.score = score;
                best.feature = static_cast<int>(f);
                best.threshold = midpoint_threshold(x[a], x[b]);
            }
        }
    }

    const FeatureMatrix& m_;
    const Hyperparams& hp_;
    Rng& rng_;
    const ColumnOrder& order_;
    std::size_t p_;
    std::size_t mtry_;
    std::vector<Node> nodes_;
    std::vector<std::size_t> rows_;
    std::vector<std::vector<std::uint32_t>> sorted_;  // p feature orders, then natural order
    std::vector<char> goes_left_;
    std::vector<std::uint32_t> tmp_;
};

std::vector<std::size_t> all_rows(const FeatureMatrix& m, std::span<const std::size_t> rows) {
    if (!rows.empty()) return {rows.begin(), rows.end()};
    std::vector<std::size_t> out(m.rows());
    std::iota(out.begin(), out.end(), 0);
    return out;
}

RegressionTree grow_member(const FeatureMatrix& m, const Hyperparams& params, const std::vector<std::size_t>& base,
                           std::size_t index, const ColumnOrder& order) {
    auto rng = make_rng(params.seed, "tree", index);
    std::vector<std::size_t> sample;
    if (params.bootstrap) {
        sample.resize(base.size());
        for (auto& s : sample) s = base[uniform_index(rng, base.size())];
        std::sort(sample.begin(), sample.end());
    } else {
        sample = base;
    }
    TreeBuilder b(m, params, rng, order);
    return b.build(std::move(sample));
}

RandomForest prepare(const FeatureMatrix& m, const Hyperparams& params, std::size_t rows) {
    params.validate();
    if (rows < 2) throw DataError("fit_forest needs at least two rows");
    if (m.cols() == 0) throw DataError("fit_forest needs at least one feature");
    RandomForest f;
    f.feature_names = m.names();
    f.params = params;
    f.training_rows = rows;
    f.trees.resize(static_cast<std::size_t>(params.tree_count));
    return f;
}

}  // namespace

RegressionTree fit_tree(const FeatureMatrix& m, std::span<const std::size_t> rows, const Hyperparams& params, Rng& rng) {
    if (rows.empty()) throw DataError("fit_tree needs at least one row");
    const auto order = column_order(m);
    TreeBuilder b(m, params, rng, order);
    return b.build({rows.begin(), rows.end()});
}

RandomForest fit_forest(const FeatureMatrix& m, const Hyperparams& params, std::span<const std::size_t> rows) {
    const auto base = all_rows(m, rows);
    auto f = prepare(m, params, base.size());
    const auto order = column_order(m);
    const auto n = static_cast<std::ptrdiff_t>(f.trees.size());
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) if (!in_parallel())
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        try {
            f.trees[static_cast<std::size_t>(i)] = grow_member(m, params, base, static_cast<std::size_t>(i), order);
        } catch (...) {
#pragma omp critical
            failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    return f;
}

RandomForest fit_forest_serial(const FeatureMatrix& m, const Hyperparams& params, std::span<const std::size_t> rows) {
    const auto base = all_rows(m, rows);
    auto f = prepare(m, params, base.size());
    const auto order = column_order(m);
    for (std::size_t i = 0; i < f.trees.size(); ++i) f.trees[i] = grow_member(m, params, base, i, order);
    return f;
}

nlohmann::json to_json(const RandomForest& f) {
    using nlohmann::json;
    json trees = json::array();
    for (const auto& t : f.trees) {
        json nodes = json::array();
        for (const auto& n : t.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value, n.cover});
        trees.push_back({{"nodes", nodes}});
    }
    return {{"format", "txtime-forest"},
            {"version", kForestFormatVersion},
            {"metadata",
             {{"feature_names", f.feature_names},
              {"hyperparams", to_json(f.params)},
              {"training_rows", f.training_rows},
              {"node_fields", {"feature", "threshold", "left", "right", "value", "cover"}}}},
            {"trees", trees}};
}

RandomForest forest_from_json(const nlohmann::json& j) {
    try {
        if (j.at("version").get<int>() != kForestFormatVersion)
            throw ModelIntegrityError("unsupported forest format version " + j.at("version").dump());
        RandomForest f;
        const auto& meta = j.at("metadata");
        f.feature_names = meta.at("feature_names").get<std::vector<std::string>>();
        f.params = hyperparams_from_json(meta.at("hyperparams"));
        f.training_rows = meta.at("training_rows").get<std::size_t>();
        const auto p = static_cast<int>(f.feature_names.size());
        for (const auto& jt : j.at("trees")) {
            RegressionTree t;
            for (const auto& jn : jt.at("nodes")) {
                Node n;
                n.feature = jn.at(0).get<int>();
                n.threshold = jn.at(1).get<double>();
                n.left = jn.at(2).get<int>();
                n.right = jn.at(3).get<int>();
                n.value = jn.at(4).get<double>();
                n.cover = jn.at(5).get<double>();
                t.nodes.push_back(n);
            }
            if (t.nodes.empty()) throw ModelIntegrityError("tree without nodes");
            const auto size = static_cast<int>(t.nodes.size());
            for (int i = 0; i < size; ++i) {
                const auto& n = t.nodes[static_cast<std::size_t>(i)];
                if (n.is_leaf()) continue;
                if (n.feature >= p || n.left <= i || n.right <= i || n.left >= size || n.right >= size)
                    throw ModelIntegrityError("node " + std::to_string(i) + " has out-of-range links");
            }
            f.trees.push_back(std::move(t));
        }
        if (f.trees.empty()) throw ModelIntegrityError("forest without trees");
        return f;
    } catch (const nlohmann::json::exception& e) {
        throw ModelIntegrityError(std::string("malformed forest document: ") + e.what());
    }
}

}  // namespace txtime::forest
