#include "txtime/explain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "txtime/error.hpp"
#include "txtime/parallel.hpp"

namespace txtime::explain {

stats::RankTable rank_features(const std::vector<ShapExplanation>& explanations, const std::vector<std::string>& names,
                               const stats::ScottKnottOptions& options) {
    if (explanations.empty()) throw DataError("rank_features needs at least one explained row");
    std::vector<stats::NamedSample> groups(names.size());
    for (std::size_t k = 0; k < names.size(); ++k) {
        groups[k].name = names[k];
        groups[k].values.reserve(explanations.size());
    }
    for (const auto& e : explanations)
        for (std::size_t k = 0; k < names.size(); ++k) groups[k].values.push_back(std::abs(e.phi[k]));
    return stats::scott_knott(std::move(groups), options);
}

stats::RankTable rank_features(const forest::RandomForest& f, const FeatureMatrix& train,
                               const stats::ScottKnottOptions& options) {
    return rank_features(tree_shap(f, train), f.feature_names, options);
}

void write_rank_csv(const stats::RankTable& table, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "rank,feature,median_abs_shap\n" << std::setprecision(17);
    for (const auto& item : table.items) out << item.rank << ',' << item.name << ',' << item.median << '\n';
}

namespace {

std::optional<std::size_t> forest_index(const forest::RandomForest& f, const std::string& name) {
    auto it = std::find(f.feature_names.begin(), f.feature_names.end(), name);
    if (it == f.feature_names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - f.feature_names.begin());
}

PdpCurve pdp_impl(const forest::RandomForest& f, const FeatureMatrix& train, const std::string& feature,
                  std::size_t grid_size, bool parallel) {
    if (grid_size == 0) throw ConfigError("pdp grid size must be >= 1");
    const auto c = train.require(feature);
    if (train.rows() == 0) throw DataError("pdp needs training rows");
    std::vector<double> sorted(train.column(c).begin(), train.column(c).end());
    std::sort(sorted.begin(), sorted.end());

    PdpCurve curve;
    curve.feature = feature;
    for (std::size_t k = 0; k < grid_size; ++k) {
        const double p = grid_size == 1 ? 0.5 : static_cast<double>(k) / static_cast<double>(grid_size - 1);
        const double q = stats::quantile_sorted(sorted, p);
        if (curve.grid.empty() || q > curve.grid.back()) curve.grid.push_back(q);
    }
    if (sorted.front() == sorted.back()) {
        curve.grid = {sorted.front()};
        curve.warnings.push_back("feature '" + feature + "' is constant; single-point curve");
    }
    for (int d = 1; d <= 9; ++d) curve.deciles.push_back(stats::quantile_sorted(sorted, d / 10.0));

    const auto rows = aligned_rows(f, train);
    const auto fi = forest_index(f, feature);
    curve.mean_prediction.assign(curve.grid.size(), 0.0);
    const auto g_count = static_cast<std::ptrdiff_t>(curve.grid.size());
#pragma omp parallel for schedule(dynamic) if (parallel && !in_parallel())
    for (std::ptrdiff_t g = 0; g < g_count; ++g) {
        std::vector<double> row(f.feature_names.size());
        double sum = 0.0;
        for (const auto& r : rows) {
            std::copy(r.begin(), r.end(), row.begin());
            if (fi) row[*fi] = curve.grid[static_cast<std::size_t>(g)];
            sum += f.predict(row);
        }
        curve.mean_prediction[static_cast<std::size_t>(g)] = sum / static_cast<double>(rows.size());
    }

    curve.feature_back_transformed = train.log_transformed()[c];
    curve.target_back_transformed = train.target_log_transformed();
    if (curve.feature_back_transformed) {
        for (auto& g : curve.grid) g = std::expm1(g);
        for (auto& d : curve.deciles) d = std::expm1(d);
    }
    if (curve.target_back_transformed)
        for (auto& v : curve.mean_prediction) v = std::expm1(v);
    return curve;
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(6) << v;
    return s.str();
}

std::vector<bool> used_features(const forest::RandomForest& f) {
    std::vector<bool> used(f.feature_names.size(), false);
    for (const auto& t : f.trees)
        for (const auto& n : t.nodes)
            if (!n.is_leaf()) used[static_cast<std::size_t>(n.feature)] = true;
    return used;
}

double tree_value(const forest::RegressionTree& t, std::size_t i, std::span<const double> row,
                  const std::vector<char>& known) {
    const auto& n = t.nodes[i];
    if (n.is_leaf()) return n.value;
    const auto l = static_cast<std::size_t>(n.left), r = static_cast<std::size_t>(n.right);
    if (known[static_cast<std::size_t>(n.feature)])
        return tree_value(t, row[static_cast<std::size_t>(n.feature)] <= n.threshold ? l : r, row, known);
    return (t.nodes[l].cover * tree_value(t, l, row, known) + t.nodes[r].cover * tree_value(t, r, row, known)) /
           n.cover;
}

// Cover-weighted expectation of the forest with only `known` features fixed to the row.
double coalition_value(const forest::RandomForest& f, std::span<const double> row, const std::vector<char>& known) {
    double s = 0.0;
    for (const auto& t : f.trees) s += tree_value(t, 0, row, known);
    return s / static_cast<double>(f.trees.size());
}

PairInteraction sample_pair(const forest::RandomForest& f, std::span<const double> row, std::size_t i, std::size_t j,
                            const SamplingOptions& sampling) {
    const auto m = f.feature_names.size();
    PairInteraction out{f.feature_names[i], f.feature_names[j], 0.0, 0.0};
    auto rng = make_rng(sampling.seed, "interaction", i * m + j);
    std::vector<std::size_t> others;
    for (std::size_t k = 0; k < m; ++k)
        if (k != i && k != j) others.push_back(k);
    std::vector<char> known(m, 0);
    std::vector<double> deltas;
    for (int s = 0; s < sampling.samples; ++s) {
        // The pair acts as one player; its predecessors in a uniform order form S.
        const auto size = uniform_index(rng, others.size() + 1);
        for (std::size_t k = 0; k < size; ++k) std::swap(others[k], others[k + uniform_index(rng, others.size() - k)]);
        std::fill(known.begin(), known.end(), 0);
        for (std::size_t k = 0; k < size; ++k) known[others[k]] = 1;
        const double v0 = coalition_value(f, row, known);
        known[i] = 1;
        const double vi = coalition_value(f, row, known);
        known[j] = 1;
        const double vij = coalition_value(f, row, known);
        known[i] = 0;
        const double vj = coalition_value(f, row, known);
        deltas.push_back(vij - vi - vj + v0);
    }
    const auto summary = stats::describe(deltas);
    out.value = summary.mean / 2.0;
    if (deltas.size() > 1) {
        const double n = static_cast<double>(deltas.size());
        const double sample_sd = summary.std * std::sqrt(n / (n - 1.0));
        out.standard_error = sample_sd / std::sqrt(n) / 2.0;
    }
    return out;
}

}  // namespace

PdpCurve pdp(const forest::RandomForest& f, const FeatureMatrix& train, const std::string& feature,
             std::size_t grid_size) {
    return pdp_impl(f, train, feature, grid_size, true);
}

PdpCurve pdp_serial(const forest::RandomForest& f, const FeatureMatrix& train, const std::string& feature,
                    std::size_t grid_size) {
    return pdp_impl(f, train, feature, grid_size, false);
}

std::string pdp_svg(const PdpCurve& curve) {
    const double w = 640, h = 400, left = 70, right = 20, top = 20, bottom = 50;
    const auto [xmin_it, xmax_it] = std::minmax_element(curve.grid.begin(), curve.grid.end());
    const auto [ymin_it, ymax_it] = std::minmax_element(curve.mean_prediction.begin(), curve.mean_prediction.end());
    const double xmin = *xmin_it, xspan = std::max(*xmax_it - xmin, 1e-12);
    const double ymin = *ymin_it, yspan = std::max(*ymax_it - ymin, 1e-12);
    auto px = [&](double x) { return left + (x - xmin) / xspan * (w - left - right); };
    auto py = [&](double y) { return h - bottom - (y - ymin) / yspan * (h - top - bottom); };
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
      << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
      << "\" stroke=\"black\"/>\n";
    for (double d : curve.deciles)
        if (d >= xmin && d <= xmin + xspan)
            s << "<line x1=\"" << px(d) << "\" y1=\"" << h - bottom << "\" x2=\"" << px(d) << "\" y2=\""
              << h - bottom + 6 << "\" stroke=\"gray\"/>\n";
    s << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < curve.grid.size(); ++k)
        s << px(curve.grid[k]) << ',' << py(curve.mean_prediction[k]) << (k + 1 < curve.grid.size() ? " " : "");
    s << "\"/>\n";
    s << "<text x=\"" << w / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\" font-size=\"13\">" << curve.feature
      << "</text>\n";
    s << "<text x=\"15\" y=\"" << h / 2 << "\" font-size=\"13\" transform=\"rotate(-90 15 " << h / 2
      << ")\" text-anchor=\"middle\">" << (curve.target_back_transformed ? "processing time (min)" : "prediction")
      << "</text>\n";
    s << "<text x=\"" << left << "\" y=\"" << h - bottom + 20 << "\" font-size=\"11\">" << fmt(xmin) << "</text>\n";
    s << "<text x=\"" << w - right << "\" y=\"" << h - bottom + 20 << "\" font-size=\"11\" text-anchor=\"end\">"
      << fmt(xmin + xspan) << "</text>\n";
    s << "<text x=\"" << left - 5 << "\" y=\"" << h - bottom << "\" font-size=\"11\" text-anchor=\"end\">" << fmt(ymin)
      << "</text>\n";
    s << "<text x=\"" << left - 5 << "\" y=\"" << top + 10 << "\" font-size=\"11\" text-anchor=\"end\">"
      << fmt(ymin + yspan) << "</text>\n";
    s << "</svg>\n";
    return s.str();
}

void write_pdp(const PdpCurve& curve, const std::filesystem::path& csv, bool svg) {
    {
        std::ofstream out(csv);
        if (!out) throw DataError("cannot write " + csv.string());
        out << "grid_value,mean_prediction\n" << std::setprecision(17);
        for (std::size_t k = 0; k < curve.grid.size(); ++k) out << curve.grid[k] << ',' << curve.mean_prediction[k] << '\n';
    }
    auto sidecar = csv;
    sidecar.replace_extension(".deciles.json");
    std::ofstream(sidecar) << to_json(curve).dump(2) << '\n';
    if (svg) {
        auto plot = csv;
        plot.replace_extension(".svg");
        std::ofstream(plot) << pdp_svg(curve);
    }
}

InteractionMatrix interaction_values(const forest::RandomForest& f, std::span<const double> row, InteractionMode mode,
                                     const SamplingOptions& sampling) {
    const auto m = f.feature_names.size();
    if (mode == InteractionMode::exact && m > kExactInteractionLimit)
        throw ConfigError("exact interaction values need at most " + std::to_string(kExactInteractionLimit) +
                          " features; the forest has " + std::to_string(m));
    if (mode == InteractionMode::sampled && sampling.samples < 1)
        throw ConfigError("interaction sampling needs at least one sample");
    const bool exact = mode == InteractionMode::exact || (mode == InteractionMode::automatic && m <= kExactInteractionLimit);

    const auto base = tree_shap(f, row);
    InteractionMatrix out;
    out.features = f.feature_names;
    out.exact = exact;
    out.base_value = base.base_value;
    out.prediction = base.prediction;
    out.values.assign(m, std::vector<double>(m, 0.0));
    out.standard_error.assign(m, std::vector<double>(m, 0.0));
    const auto used = used_features(f);
    const double scale = 1.0 / static_cast<double>(f.trees.size());

    if (exact) {
        std::vector<double> on(m), off(m);
        for (std::size_t j = 0; j < m; ++j) {
            if (!used[j]) continue;
            std::fill(on.begin(), on.end(), 0.0);
            std::fill(off.begin(), off.end(), 0.0);
            for (const auto& t : f.trees) {
                tree_shap_accumulate(t, row, on, 1, static_cast<int>(j));
                tree_shap_accumulate(t, row, off, -1, static_cast<int>(j));
            }
            for (std::size_t k = 0; k < m; ++k)
                if (k != j) out.values[j][k] = (on[k] - off[k]) * scale / 2.0;
        }
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t k = j + 1; k < m; ++k) {
                const double v = (out.values[j][k] + out.values[k][j]) / 2.0;
                out.values[j][k] = out.values[k][j] = v;
            }
    } else {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = i + 1; j < m; ++j) {
                if (!used[i] || !used[j]) continue;
                const auto p = sample_pair(f, row, i, j, sampling);
                out.values[i][j] = out.values[j][i] = p.value;
                out.standard_error[i][j] = out.standard_error[j][i] = p.standard_error;
            }
    }
    for (std::size_t i = 0; i < m; ++i) {
        double off = 0.0;
        for (std::size_t j = 0; j < m; ++j)
            if (j != i) off += out.values[i][j];
        out.values[i][i] = base.phi[i] - off;
    }
    return out;
}

std::vector<PairInteraction> pair_interactions(const forest::RandomForest& f, std::span<const double> row,
                                               const std::vector<std::pair<std::string, std::string>>& pairs,
                                               const SamplingOptions& sampling) {
    if (sampling.samples < 1) throw ConfigError("interaction sampling needs at least one sample");
    std::vector<PairInteraction> out;
    for (const auto& [a, b] : pairs) {
        const auto i = forest_index(f, a), j = forest_index(f, b);
        if (!i) throw ConfigError("interaction pair names unknown feature '" + a + "'");
        if (!j) throw ConfigError("interaction pair names unknown feature '" + b + "'");
        if (*i == *j) throw ConfigError("interaction pair repeats feature '" + a + "'");
        auto p = sample_pair(f, row, std::min(*i, *j), std::max(*i, *j), sampling);
        p.a = a;
        p.b = b;
        out.push_back(p);
    }
    return out;
}

Waterfall waterfall(const ShapExplanation& e, const std::vector<std::string>& names, std::span<const double> row,
                    std::size_t top_k) {
    if (names.size() != e.phi.size()) throw DataError("waterfall: feature names do not match the explanation");
    Waterfall w;
    w.base_value = e.base_value;
    w.prediction = e.prediction;
    std::vector<std::size_t> order(e.phi.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(e.phi[a]) > std::abs(e.phi[b]); });
    const auto listed = std::min(top_k, order.size());
    for (std::size_t k = 0; k < listed; ++k) {
        WaterfallEntry entry{names[order[k]], e.phi[order[k]], std::nullopt, 0};
        if (!row.empty()) entry.value = row[order[k]];
        w.entries.push_back(entry);
    }
    if (listed < order.size()) {
        WaterfallEntry other{std::string(kOtherFeatures), 0.0, std::nullopt, order.size() - listed};
        for (std::size_t k = listed; k < order.size(); ++k) other.phi += e.phi[order[k]];
        w.entries.push_back(other);
    }
    return w;
}

ChunkResult chunk_test(const FeatureMatrix& m, Dimension dimension, const protocol::SplitProtocol& split,
                       const protocol::SearchSpace& space, std::uint64_t seed, const protocol::EvalReport* full) {
    auto partial = m.without_dimension(dimension);
    if (partial.cols() == 0)
        throw ConfigError("omitting dimension '" + std::string(to_string(dimension)) + "' leaves no features");
    ChunkResult c;
    c.omitted = dimension;
    for (std::size_t k = 0; k < m.cols(); ++k)
        if (m.dimensions()[k] == dimension) c.omitted_features.push_back(m.names()[k]);
    c.full = full ? *full : protocol::run_protocol(m, split, space, seed, "all features");
    c.partial = protocol::run_protocol(partial, split, space, seed, "without " + std::string(to_string(dimension)));
    if (c.full.bootstraps.size() != c.partial.bootstraps.size())
        throw ProtocolError("chunk test reports differ in bootstrap count");
    for (std::size_t b = 0; b < c.full.bootstraps.size(); ++b)
        c.differences.push_back(c.full.bootstraps[b].test_adjusted_r2 - c.partial.bootstraps[b].test_adjusted_r2);
    c.summary = stats::describe(c.differences);
    return c;
}

nlohmann::json to_json(const ShapExplanation& e, const std::vector<std::string>& names) {
    nlohmann::json phi = nlohmann::json::object();
    for (std::size_t k = 0; k < names.size(); ++k) phi[names[k]] = e.phi[k];
    return {{"base_value", e.base_value}, {"prediction", e.prediction}, {"phi", phi}};
}

nlohmann::json to_json(const Waterfall& w) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : w.entries) {
        nlohmann::json j{{"feature", e.feature}, {"phi", e.phi}};
        if (e.value) j["value"] = *e.value;
        if (e.aggregated) j["aggregated_features"] = e.aggregated;
        entries.push_back(j);
    }
    return {{"base_value", w.base_value}, {"prediction", w.prediction}, {"entries", entries}};
}

nlohmann::json to_json(const InteractionMatrix& m) {
    return {{"features", m.features},     {"mode", m.exact ? "exact" : "sampled"},
            {"values", m.values},         {"standard_error", m.standard_error},
            {"base_value", m.base_value}, {"prediction", m.prediction}};
}

nlohmann::json to_json(const PairInteraction& p) {
    return {{"a", p.a}, {"b", p.b}, {"value", p.value}, {"standard_error", p.standard_error}};
}

nlohmann::json to_json(const ChunkResult& c) {
    return {{"omitted_dimension", std::string(to_string(c.omitted))},
            {"omitted_features", c.omitted_features},
            {"differences", c.differences},
            {"summary", {{"mean", c.summary.mean}, {"median", c.summary.median}, {"std", c.summary.std}}},
            {"full_median_adjusted_r2", c.full.test_adjusted_r2.median},
            {"partial_median_adjusted_r2", c.partial.test_adjusted_r2.median}};
}

nlohmann::json to_json(const stats::RankTable& t) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& i : t.items) items.push_back({{"rank", i.rank}, {"feature", i.name}, {"median_abs_shap", i.median}});
    return items;
}

nlohmann::json to_json(const PdpCurve& c) {
    return {{"feature", c.feature},
            {"deciles", c.deciles},
            {"feature_back_transformed", c.feature_back_transformed},
            {"target_back_transformed", c.target_back_transformed},
            {"grid_points", c.grid.size()},
            {"warnings", c.warnings}};
}

}  // namespace txtime::explain
