#include "txtime/protocol.hpp"

#include <algorithm>
#include <exception>
#include <set>

#include "txtime/error.hpp"
#include "txtime/parallel.hpp"

namespace txtime::protocol {

void SearchSpace::validate() const {
    if (fractions.empty()) throw ConfigError("search space is empty: no feature fractions");
    if (min_tree_count < 1 || max_tree_count < min_tree_count)
        throw ConfigError("search space is empty: tree_count range [" + std::to_string(min_tree_count) + "," +
                          std::to_string(max_tree_count) + "]");
    if (min_depth < 0 || (max_depth < min_depth && !allow_unlimited_depth))
        throw ConfigError("search space is empty: no admissible max_tree_depth");
    if (min_leaf_size < 1) throw ConfigError("search space min_leaf_size must be >= 1");
}

forest::Hyperparams SearchSpace::sample(Rng& rng) const {
    forest::Hyperparams h;
    h.tree_count = static_cast<int>(uniform_int(rng, min_tree_count, max_tree_count));
    const int depths = std::max(0, max_depth - min_depth + 1) + (allow_unlimited_depth ? 1 : 0);
    const auto d = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(depths)));
    if (d < max_depth - min_depth + 1)
        h.max_depth = min_depth + d;
    else
        h.max_depth.reset();
    h.feature_fraction = fractions[uniform_index(rng, fractions.size())];
    h.min_leaf_size = min_leaf_size;
    return h;
}

nlohmann::json to_json(const SearchSpace& s) {
    std::vector<std::string> fractions;
    for (const auto& f : s.fractions) fractions.push_back(f.to_string());
    return {{"tree_count", {s.min_tree_count, s.max_tree_count}},
            {"max_tree_depth", {s.min_depth, s.max_depth}},
            {"allow_unlimited_depth", s.allow_unlimited_depth},
            {"feature_fraction", fractions},
            {"min_leaf_size", s.min_leaf_size}};
}

SearchSpace search_space_from_json(const nlohmann::json& j) {
    SearchSpace s;
    s.min_tree_count = j.at("tree_count").at(0).get<int>();
    s.max_tree_count = j.at("tree_count").at(1).get<int>();
    s.min_depth = j.at("max_tree_depth").at(0).get<int>();
    s.max_depth = j.at("max_tree_depth").at(1).get<int>();
    s.allow_unlimited_depth = j.value("allow_unlimited_depth", true);
    s.fractions.clear();
    for (const auto& f : j.at("feature_fraction")) s.fractions.push_back(forest::FeatureFraction::parse(f.get<std::string>()));
    s.min_leaf_size = j.value("min_leaf_size", 1);
    return s;
}

namespace {

double r2_on(const forest::RandomForest& f, const FeatureMatrix& m, std::span<const std::size_t> rows) {
    std::vector<double> observed, predicted;
    std::vector<double> row(m.cols());
    for (auto r : rows) {
        m.row(r, row);
        observed.push_back(m.target()[r]);
        predicted.push_back(f.predict(row));
    }
    return stats::r2_score(observed, predicted);
}

BootstrapResult run_bootstrap(const FeatureMatrix& m, const Partition& part, const SplitProtocol& split,
                              const SearchSpace& space, std::uint64_t seed, int b) {
    auto rng = make_rng(seed, "bootstrap", static_cast<std::uint64_t>(b));
    std::vector<std::size_t> sample(part.train.size());
    for (auto& s : sample) s = part.train[uniform_index(rng, part.train.size())];
    std::sort(sample.begin(), sample.end());
    auto search = random_search(m, sample, part.validation, space, split.search_iterations,
                                derive_seed(seed, "search", static_cast<std::uint64_t>(b)));
    BootstrapResult out;
    out.index = b;
    out.params = search.best;
    out.validation_r2 = search.best_r2;
    out.test_r2 = r2_on(search.forest, m, part.test);
    out.test_adjusted_r2 = stats::adjusted_r2(out.test_r2, part.test.size(), m.cols());
    return out;
}

EvalReport assemble(const FeatureMatrix& m, const Partition& part, const SplitProtocol& split, std::uint64_t seed,
                    const std::string& label, std::vector<BootstrapResult> results) {
    EvalReport r;
    r.label = label;
    r.reduced = split.reduced;
    r.seed = seed;
    r.features = m.names();
    r.train_rows = part.train.size();
    r.validation_rows = part.validation.size();
    r.test_rows = part.test.size();
    r.bootstraps = std::move(results);
    std::vector<double> r2;
    for (const auto& b : r.bootstraps) r2.push_back(b.test_r2);
    r.test_r2 = stats::describe(r2);
    r.test_adjusted_r2 = stats::describe(r.adjusted_r2_values());
    return r;
}

void check_inputs(const FeatureMatrix& m, const SplitProtocol& split, const SearchSpace& space) {
    split.validate();
    space.validate();
    if (m.cols() == 0) throw DataError("protocol needs at least one feature");
}

}  // namespace

SearchResult random_search(const FeatureMatrix& m, std::span<const std::size_t> train,
                           std::span<const std::size_t> validation, const SearchSpace& space, int iterations,
                           std::uint64_t seed) {
    if (iterations < 1) throw ConfigError("search iterations must be >= 1");
    space.validate();
    if (validation.empty()) throw ProtocolError("random search needs a non-empty validation partition");
    auto rng = make_rng(seed, "configs");
    const auto model_seed = derive_seed(seed, "model");
    SearchResult result;
    for (int i = 0; i < iterations; ++i) {
        auto h = space.sample(rng);
        h.seed = model_seed;
        auto f = forest::fit_forest(m, h, train);
        const double r2 = r2_on(f, m, validation);
        result.trials.push_back({h, r2});
        if (i == 0 || r2 > result.best_r2) {
            result.best = h;
            result.best_r2 = r2;
            result.forest = std::move(f);
        }
    }
    return result;
}

void SplitProtocol::validate() const {
    if (bootstrap_count < 1) throw ConfigError("protocol.bootstrap_count must be >= 1");
    if (search_iterations < 1) throw ConfigError("protocol.search_iterations must be >= 1");
    if (train_days < 1 || validation_days < 1 || test_days < 1)
        throw ConfigError("protocol split days must each be >= 1");
    if (!(train_fraction > 0.0 && validation_fraction > 0.0 && train_fraction + validation_fraction < 1.0))
        throw ConfigError("protocol reduced fractions must be positive and sum below 1");
}

Partition partition(const FeatureMatrix& m, const SplitProtocol& split) {
    split.validate();
    Partition p;
    if (split.reduced) {
        // Rows are stored in block order, so row-fraction cuts are temporal too.
        const auto n = m.rows();
        const auto n_train = static_cast<std::size_t>(split.train_fraction * static_cast<double>(n));
        const auto n_val = static_cast<std::size_t>(split.validation_fraction * static_cast<double>(n));
        for (std::size_t r = 0; r < n; ++r) {
            if (r < n_train)
                p.train.push_back(r);
            else if (r < n_train + n_val)
                p.validation.push_back(r);
            else
                p.test.push_back(r);
        }
    } else {
        const std::set<std::int64_t> days(m.utc_days().begin(), m.utc_days().end());
        const auto needed = static_cast<std::size_t>(split.train_days + split.validation_days + split.test_days);
        if (days.size() < needed)
            throw ProtocolError("feature matrix spans " + std::to_string(days.size()) + " UTC days; the temporal split needs " +
                                std::to_string(needed) + " (use --reduced-protocol for a row-fraction split)");
        std::vector<std::int64_t> ordered(days.begin(), days.end());
        const auto train_end = ordered[static_cast<std::size_t>(split.train_days - 1)];
        const auto val_end = ordered[static_cast<std::size_t>(split.train_days + split.validation_days - 1)];
        const auto test_end = ordered[needed - 1];
        for (std::size_t r = 0; r < m.rows(); ++r) {
            const auto d = m.utc_days()[r];
            if (d <= train_end)
                p.train.push_back(r);
            else if (d <= val_end)
                p.validation.push_back(r);
            else if (d <= test_end)
                p.test.push_back(r);
        }
    }
    if (p.train.size() < 2 || p.validation.empty() || p.test.size() < 2)
        throw ProtocolError("split leaves too few rows (train " + std::to_string(p.train.size()) + ", validation " +
                            std::to_string(p.validation.size()) + ", test " + std::to_string(p.test.size()) + ")");
    return p;
}

std::vector<double> EvalReport::adjusted_r2_values() const {
    std::vector<double> out;
    for (const auto& b : bootstraps) out.push_back(b.test_adjusted_r2);
    return out;
}

EvalReport run_protocol(const FeatureMatrix& m, const SplitProtocol& split, const SearchSpace& space,
                        std::uint64_t seed, const std::string& label) {
    check_inputs(m, split, space);
    const auto part = partition(m, split);
    std::vector<BootstrapResult> results(static_cast<std::size_t>(split.bootstrap_count));
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) if (!in_parallel())
    for (int b = 0; b < split.bootstrap_count; ++b) {
        try {
            results[static_cast<std::size_t>(b)] = run_bootstrap(m, part, split, space, seed, b);
        } catch (...) {
#pragma omp critical
            failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    return assemble(m, part, split, seed, label, std::move(results));
}

EvalReport run_protocol_serial(const FeatureMatrix& m, const SplitProtocol& split, const SearchSpace& space,
                               std::uint64_t seed, const std::string& label) {
    check_inputs(m, split, space);
    const auto part = partition(m, split);
    std::vector<BootstrapResult> results;
    for (int b = 0; b < split.bootstrap_count; ++b) results.push_back(run_bootstrap(m, part, split, space, seed, b));
    return assemble(m, part, split, seed, label, std::move(results));
}

Comparison compare_reports(const EvalReport& a, const EvalReport& b) {
    const auto x = a.adjusted_r2_values();
    const auto y = b.adjusted_r2_values();
    if (x.empty() || y.empty()) throw ProtocolError("cannot compare an empty evaluation report");
    Comparison c;
    c.against = b.label;
    c.p = stats::mann_whitney(x, y, true).p;
    c.effect = stats::cliffs_delta(x, y);
    c.median_difference = stats::median(x) - stats::median(y);
    return c;
}

SearchResult train_final(const FeatureMatrix& m, const SplitProtocol& split, const SearchSpace& space,
                         std::uint64_t seed) {
    check_inputs(m, split, space);
    const auto part = partition(m, split);
    return random_search(m, part.train, part.validation, space, split.search_iterations, derive_seed(seed, "final"));
}

nlohmann::json to_json(const EvalReport& r) {
    using nlohmann::json;
    json rows = json::array();
    for (const auto& b : r.bootstraps)
        rows.push_back({{"bootstrap", b.index},
                        {"hyperparams", forest::to_json(b.params)},
                        {"validation_r2", b.validation_r2},
                        {"test_r2", b.test_r2},
                        {"test_adjusted_r2", b.test_adjusted_r2}});
    auto summary = [](const stats::Summary& s) { return json{{"mean", s.mean}, {"median", s.median}, {"std", s.std}}; };
    json j{{"label", r.label},
           {"split", r.reduced ? "reduced (row fractions)" : "temporal (train/validation/test days)"},
           {"seed", r.seed},
           {"features", r.features},
           {"feature_count", r.features.size()},
           {"rows", {{"train", r.train_rows}, {"validation", r.validation_rows}, {"test", r.test_rows}}},
           {"bootstraps", rows},
           {"summary", {{"test_r2", summary(r.test_r2)}, {"test_adjusted_r2", summary(r.test_adjusted_r2)}}},
           {"reference_context",
            {{"note", "published adjusted R2 on a 1.8M-transaction 2018 mainnet sample; not reproducible here"},
             {"internal_only", 0.16},
             {"with_pricing", 0.53}}}};
    if (r.comparison) {
        j["comparison"] = {{"against", r.comparison->against},
                           {"mann_whitney_p", r.comparison->p},
                           {"cliffs_delta", r.comparison->effect.delta},
                           {"magnitude", stats::to_string(r.comparison->effect.magnitude)},
                           {"median_difference", r.comparison->median_difference}};
    }
    return j;
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
    try {
        EvalReport r;
        r.label = j.at("label").get<std::string>();
        r.reduced = j.at("split").get<std::string>().rfind("reduced", 0) == 0;
        r.seed = j.at("seed").get<std::uint64_t>();
        r.features = j.at("features").get<std::vector<std::string>>();
        r.train_rows = j.at("rows").at("train").get<std::size_t>();
        r.validation_rows = j.at("rows").at("validation").get<std::size_t>();
        r.test_rows = j.at("rows").at("test").get<std::size_t>();
        for (const auto& b : j.at("bootstraps")) {
            BootstrapResult br;
            br.index = b.at("bootstrap").get<int>();
            br.params = forest::hyperparams_from_json(b.at("hyperparams"));
            br.validation_r2 = b.at("validation_r2").get<double>();
            br.test_r2 = b.at("test_r2").get<double>();
            br.test_adjusted_r2 = b.at("test_adjusted_r2").get<double>();
            r.bootstraps.push_back(br);
        }
        auto summary = [](const nlohmann::json& s) {
            return stats::Summary{s.at("mean").get<double>(), s.at("median").get<double>(), s.at("std").get<double>()};
        };
        r.test_r2 = summary(j.at("summary").at("test_r2"));
        r.test_adjusted_r2 = summary(j.at("summary").at("test_adjusted_r2"));
        if (j.contains("comparison")) {
            const auto& c = j.at("comparison");
            Comparison cmp;
            cmp.against = c.at("against").get<std::string>();
            cmp.p = c.at("mann_whitney_p").get<double>();
            cmp.effect.delta = c.at("cliffs_delta").get<double>();
            cmp.effect.magnitude = stats::romano_magnitude(cmp.effect.delta);
            cmp.median_difference = c.at("median_difference").get<double>();
            r.comparison = cmp;
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed evaluation report: ") + e.what());
    }
}

}  // namespace txtime::protocol
