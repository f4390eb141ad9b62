#include "txtime/screen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include <Eigen/Dense>

#include "txtime/error.hpp"
#include "txtime/features.hpp"
#include "txtime/parallel.hpp"
#include "txtime/stats.hpp"

namespace txtime::screen {

FeatureMatrix log1p_transform(const FeatureMatrix& in) {
    FeatureMatrix m = in;
    for (std::size_t c = 0; c < m.cols(); ++c) {
        if (features::is_categorical(m.names()[c]) || m.log_transformed()[c]) continue;
        auto col = m.column(c);
        for (std::size_t r = 0; r < col.size(); ++r) {
            if (col[r] < 0.0 || std::isnan(col[r]))
                throw TransformError("log1p: negative value " + std::to_string(col[r]) + " at row " +
                                     std::to_string(r) + " (" + m.row_keys()[r] + "), column " + m.names()[c]);
            col[r] = std::log1p(col[r]);
        }
        m.set_log_transformed(c, true);
    }
    if (!m.target_log_transformed()) {
        for (std::size_t r = 0; r < m.rows(); ++r) {
            auto& t = m.target()[r];
            if (t < 0.0 || std::isnan(t))
                throw TransformError("log1p: negative target at row " + std::to_string(r) + " (" + m.row_keys()[r] +
                                     "), column " + std::string(kTargetColumn));
            t = std::log1p(t);
        }
        m.set_target_log_transformed(true);
    }
    return m;
}

std::vector<std::string> default_keep_priority() {
    // Never removed in the reference correlation analysis, strongest first.
    static const char* const never_removed[] = {
        "med_pct_below_120", "med_pend_prices", "std_num_below_120", "tx_nonce", "gas_price_gwei", "past_med_time",
        "past_std_time", "closest_tx_pr_time", "gas_price_cat_enc", "num_above_120", "med_pct_same_120",
        "std_pct_same_120", "std_pct_below_120", "pct_same_1", "med_gas_price_1", "std_gas_price_1",
        "std_gas_price_120", "value", "tx_gas_limit", "med_txs_120", "std_txs_120", "total_txs_1",
        "med_difficulty_120", "std_difficulty_120", "std_func_gas_usage_120", "med_pending_pool_120",
        "std_pending_pool_120", "contract_block_number", "is_erc20", "is_erc721", "net_util", "day", "hour",
    };
    // Removed ones, each after everything it lost to.
    static const char* const removed[] = {
        "std_num_same_120", "med_num_below_120", "med_num_above_120", "avg_num_above_120", "avg_num_below_120",
        "num_below_120", "avg_num_same_120", "num_same_120", "avg_difficulty_120", "difficulty_1", "avg_txs_120",
        "total_txs_120", "med_func_gas_usage_120", "avg_func_gas_usage_120", "contract_bytecode_length",
        "to_contract", "input_length", "avg_pending_pool_120", "pending_pool", "avg_gas_price_1",
        "med_gas_price_120", "avg_gas_price_120", "avg_gas_price_gwei_prev_day", "past_avg_time", "num_same_1",
        "med_pct_above_120", "pct_above_120", "avg_pct_above_120", "avg_pct_below_120", "pct_below_120",
        "med_num_same_120", "avg_pct_same_120", "pct_same_120", "std_pct_above_120", "std_num_above_120",
        "pct_below_1", "pct_above_1", "num_above_1", "num_below_1", "num_pending", "avg_pend_prices",
        "std_pend_prices",
    };
    std::vector<std::string> out(std::begin(never_removed), std::end(never_removed));
    out.insert(out.end(), std::begin(removed), std::end(removed));
    return out;
}

const std::vector<KeepDirection>& reference_keep_directions() {
    static const std::vector<KeepDirection> rows = {
        {"num_same_120", "avg_num_same_120"},
        {"avg_difficulty_120", "med_difficulty_120"},
        {"med_num_above_120", "num_above_120"},
        {"num_below_120", "avg_num_below_120"},
        {"avg_num_above_120", "med_num_above_120"},
        {"avg_num_below_120", "med_num_below_120"},
        {"total_txs_120", "avg_txs_120"},
        {"difficulty_1", "med_difficulty_120"},
        {"avg_func_gas_usage_120", "med_func_gas_usage_120"},
        {"avg_txs_120", "med_txs_120"},
        {"avg_num_same_120", "std_num_same_120"},
        {"avg_pending_pool_120", "med_pending_pool_120"},
        {"avg_gas_price_1", "med_gas_price_1"},
        {"avg_gas_price_120", "med_gas_price_120"},
        {"med_num_above_120", "med_num_below_120"},
        {"med_gas_price_120", "med_gas_price_1"},
        {"pending_pool", "med_pending_pool_120"},
        {"med_gas_price_120", "gas_price_gwei"},
        {"input_length", "to_contract"},
        {"to_contract", "contract_bytecode_length"},
        {"avg_gas_price_gwei_prev_day", "med_gas_price_120"},
        {"past_avg_time", "past_std_time"},
        {"med_func_gas_usage_120", "std_func_gas_usage_120"},
        {"contract_bytecode_length", "std_func_gas_usage_120"},
        {"num_same_1", "pct_same_1"},
        {"pct_above_120", "med_pct_above_120"},
        {"avg_pct_above_120", "med_pct_above_120"},
        {"pct_below_120", "avg_pct_below_120"},
        {"avg_pct_below_120", "med_pct_below_120"},
        {"med_num_same_120", "med_pct_same_120"},
        {"pct_same_120", "avg_pct_same_120"},
        {"med_pct_above_120", "med_pct_below_120"},
        {"std_num_same_120", "std_pct_same_120"},
        {"med_num_below_120", "med_pct_below_120"},
        {"std_pct_above_120", "std_pct_below_120"},
        {"avg_pct_same_120", "std_pct_same_120"},
        {"num_above_1", "pct_above_1"},
        {"num_below_1", "pct_below_1"},
        {"std_num_above_120", "std_pct_below_120"},
        {"pct_above_1", "pct_below_1"},
        {"pct_below_1", "med_pct_below_120"},
        {"num_pending", "med_pend_prices"},
        {"avg_pend_prices", "med_pend_prices"},
        {"std_pend_prices", "med_pend_prices"},
    };
    return rows;
}

namespace {

// Lower value = keep first.
class Priority {
  public:
    Priority(const std::vector<std::string>& list, const std::vector<std::string>& columns) {
        for (std::size_t i = 0; i < list.size(); ++i) rank_.emplace(list[i], i);
        for (std::size_t c = 0; c < columns.size(); ++c) rank_.emplace(columns[c], list.size() + c);
    }
    std::size_t operator()(const std::string& name) const { return rank_.at(name); }

  private:
    std::unordered_map<std::string, std::size_t> rank_;
};

std::vector<std::vector<double>> rank_columns(const FeatureMatrix& m, const std::vector<std::size_t>& cols,
                                              bool parallel) {
    std::vector<std::vector<double>> ranks(cols.size());
    const auto n = static_cast<std::ptrdiff_t>(cols.size());
#pragma omp parallel for schedule(dynamic) if (parallel)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        ranks[k] = stats::average_ranks(m.column(cols[k]));
    }
    return ranks;
}

bool is_constant(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

}  // namespace

std::vector<double> abs_spearman_matrix(const FeatureMatrix& m, const std::vector<std::size_t>& cols) {
    const auto p = cols.size();
    const bool par = !in_parallel();
    const auto ranks = rank_columns(m, cols, par);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = i + 1; j < p; ++j) pairs.emplace_back(i, j);
    std::vector<double> out(p * p, 0.0);
    for (std::size_t i = 0; i < p; ++i) out[i * p + i] = 1.0;
    const auto n = static_cast<std::ptrdiff_t>(pairs.size());
#pragma omp parallel for schedule(dynamic, 16) if (par)
    for (std::ptrdiff_t k = 0; k < n; ++k) {
        const auto [i, j] = pairs[static_cast<std::size_t>(k)];
        const double r = std::abs(stats::pearson(ranks[i], ranks[j]));
        out[i * p + j] = r;
        out[j * p + i] = r;
    }
    return out;
}

std::vector<double> abs_spearman_matrix_serial(const FeatureMatrix& m, const std::vector<std::size_t>& cols) {
    const auto p = cols.size();
    std::vector<double> out(p * p, 0.0);
    for (std::size_t i = 0; i < p; ++i) {
        out[i * p + i] = 1.0;
        for (std::size_t j = i + 1; j < p; ++j) {
            const double r = std::abs(stats::spearman_rho(m.column(cols[i]), m.column(cols[j])));
            out[i * p + j] = r;
            out[j * p + i] = r;
        }
    }
    return out;
}

std::vector<std::vector<std::size_t>> average_linkage_clusters(const std::vector<double>& sim, std::size_t p,
                                                               double threshold) {
    std::vector<std::vector<std::size_t>> clusters(p);
    for (std::size_t i = 0; i < p; ++i) clusters[i] = {i};
    auto linkage = [&](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
        double s = 0.0;
        for (auto i : a)
            for (auto j : b) s += sim[i * p + j];
        return s / static_cast<double>(a.size() * b.size());
    };
    while (clusters.size() > 1) {
        double best = -1.0;
        std::size_t bi = 0, bj = 0;
        for (std::size_t i = 0; i < clusters.size(); ++i)
            for (std::size_t j = i + 1; j < clusters.size(); ++j) {
                const double l = linkage(clusters[i], clusters[j]);
                if (l > best) {
                    best = l;
                    bi = i;
                    bj = j;
                }
            }
        if (best <= threshold) break;
        clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
        std::sort(clusters[bi].begin(), clusters[bi].end());
        clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bj));
    }
    std::sort(clusters.begin(), clusters.end());
    return clusters;
}

ScreenReport correlation_filter(const FeatureMatrix& m, double threshold, const std::vector<std::string>& keep_priority) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("correlation threshold must lie in (0,1)");
    if (m.cols() < 2) throw ConfigError("correlation filter needs at least two features");
    ScreenReport report;
    report.input = m.names();
    const Priority priority(keep_priority, m.names());

    std::vector<std::size_t> cols;
    for (std::size_t c = 0; c < m.cols(); ++c) {
        if (is_constant(m.column(c))) {
            report.removed_constant.push_back(m.names()[c]);
            report.notes.push_back("removed constant column " + m.names()[c] + " (correlation undefined)");
        } else {
            cols.push_back(c);
        }
    }
    const auto p = cols.size();
    const auto rho = abs_spearman_matrix(m, cols);
    std::vector<char> alive(p, 1);

    // Repeatedly drop the lower-priority member of the most correlated live pair among `members`.
    auto prune = [&](const std::vector<std::size_t>& members) {
        while (true) {
            double best = threshold;
            std::size_t bi = p, bj = p;
            for (std::size_t a = 0; a < members.size(); ++a) {
                if (!alive[members[a]]) continue;
                for (std::size_t b = a + 1; b < members.size(); ++b) {
                    if (!alive[members[b]]) continue;
                    const double r = rho[members[a] * p + members[b]];
                    if (r > best) {
                        best = r;
                        bi = members[a];
                        bj = members[b];
                    }
                }
            }
            if (bi == p) return;
            const auto& ni = m.names()[cols[bi]];
            const auto& nj = m.names()[cols[bj]];
            const bool drop_i = priority(ni) > priority(nj);
            const auto drop = drop_i ? bi : bj;
            alive[drop] = 0;
            report.removed_by_correlation.push_back({drop_i ? ni : nj, drop_i ? nj : ni, best});
        }
    };
    for (const auto& cluster : average_linkage_clusters(rho, p, threshold)) prune(cluster);
    // Pairs split across clusters.
    std::vector<std::size_t> everyone(p);
    std::iota(everyone.begin(), everyone.end(), 0);
    prune(everyone);

    for (std::size_t k = 0; k < p; ++k)
        if (alive[k]) report.surviving.push_back(m.names()[cols[k]]);
    return report;
}

namespace {

// R^2 of one column regressed on others, from the Pearson correlation matrix.
class CorrelationR2 {
  public:
    CorrelationR2(const FeatureMatrix& m, const std::vector<std::string>& names) {
        const auto p = static_cast<Eigen::Index>(names.size());
        const auto n = static_cast<Eigen::Index>(m.rows());
        Eigen::MatrixXd z(n, p);
        for (Eigen::Index j = 0; j < p; ++j) {
            const auto col = m.column(m.require(names[static_cast<std::size_t>(j)]));
            z.col(j) = Eigen::Map<const Eigen::VectorXd>(col.data(), n);
            z.col(j).array() -= z.col(j).mean();
            const double norm = z.col(j).norm();
            if (norm > 0.0) z.col(j) /= norm;
        }
        corr_ = z.transpose() * z;
        for (Eigen::Index j = 0; j < p; ++j) index_.emplace(names[static_cast<std::size_t>(j)], j);
    }

    bool ridge_used() const { return ridge_used_; }

    double r2(const std::string& target, const std::vector<std::string>& predictors) {
        if (predictors.empty()) return 0.0;
        const auto k = static_cast<Eigen::Index>(predictors.size());
        Eigen::MatrixXd c(k, k);
        Eigen::VectorXd r(k);
        const auto t = index_.at(target);
        for (Eigen::Index a = 0; a < k; ++a) {
            const auto ia = index_.at(predictors[static_cast<std::size_t>(a)]);
            r(a) = corr_(ia, t);
            for (Eigen::Index b = 0; b < k; ++b) c(a, b) = corr_(ia, index_.at(predictors[static_cast<std::size_t>(b)]));
        }
        Eigen::LDLT<Eigen::MatrixXd> ldlt(c);
        if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-12) {
            c.diagonal().array() += 1e-8;
            ldlt.compute(c);
            ridge_used_ = true;
        }
        const double v = r.dot(ldlt.solve(r));
        return std::clamp(v, 0.0, 1.0);
    }

  private:
    Eigen::MatrixXd corr_;
    std::unordered_map<std::string, Eigen::Index> index_;
    bool ridge_used_ = false;
};

std::vector<std::string> without(const std::vector<std::string>& v, const std::string& drop) {
    std::vector<std::string> out;
    for (const auto& x : v)
        if (x != drop) out.push_back(x);
    return out;
}

}  // namespace

ScreenReport redundancy_filter(const FeatureMatrix& m, double r2_threshold, ScreenReport report,
                               const std::vector<std::string>& keep_priority) {
    if (!(r2_threshold > 0.0 && r2_threshold < 1.0)) throw ConfigError("R2 threshold must lie in (0,1)");
    if (report.input.empty()) {
        report.input = m.names();
        report.surviving = m.names();
    }
    auto survivors = report.surviving;
    CorrelationR2 fit(m, survivors);
    const Priority priority(keep_priority, m.names());
    std::vector<std::string> removed;

    while (survivors.size() > 1) {
        std::vector<double> r2(survivors.size());
        for (std::size_t i = 0; i < survivors.size(); ++i) r2[i] = fit.r2(survivors[i], without(survivors, survivors[i]));
        const double top = *std::max_element(r2.begin(), r2.end());
        if (top <= r2_threshold) break;
        // Near-equal maxima (exact dependencies): drop the lowest-priority one.
        std::size_t pick = survivors.size();
        for (std::size_t i = 0; i < survivors.size(); ++i)
            if (r2[i] >= top - 1e-9 && (pick == survivors.size() || priority(survivors[i]) > priority(survivors[pick])))
                pick = i;
        const auto candidate = survivors[pick];
        const auto remaining = without(survivors, candidate);
        for (const auto& prev : removed) {
            const double again = fit.r2(prev, remaining);
            if (again <= r2_threshold) {
                report.blocking = BlockingPair{candidate, prev, again};
                report.notes.push_back("redundancy stopped: removing " + candidate + " would leave " + prev +
                                       " explained at R2 " + std::to_string(again));
                break;
            }
        }
        if (report.blocking) break;
        report.removed_by_redundancy.push_back({candidate, r2[pick]});
        removed.push_back(candidate);
        survivors = remaining;
    }
    if (fit.ridge_used()) report.notes.push_back("singular correlation matrix: ridge 1e-8 added to the diagonal");
    report.surviving = survivors;
    return report;
}

ScreenReport run(const FeatureMatrix& train, const ScreenOptions& options) {
    auto report = correlation_filter(train, options.correlation_threshold, options.keep_priority);
    return redundancy_filter(train, options.r2_threshold, std::move(report), options.keep_priority);
}

FeatureMatrix apply(const FeatureMatrix& m, const ScreenReport& report) { return m.select_columns(report.surviving); }

nlohmann::json to_json(const ScreenReport& r) {
    using nlohmann::json;
    json j;
    j["input"] = r.input;
    j["removed_constant"] = r.removed_constant;
    j["removed_by_correlation"] = json::array();
    for (const auto& c : r.removed_by_correlation)
        j["removed_by_correlation"].push_back({{"removed", c.removed}, {"kept", c.kept}, {"rho", c.rho}});
    j["removed_by_redundancy"] = json::array();
    for (const auto& c : r.removed_by_redundancy)
        j["removed_by_redundancy"].push_back({{"feature", c.feature}, {"r2", c.r2}});
    j["blocking"] = r.blocking ? json{{"candidate", r.blocking->candidate},
                                      {"previously_removed", r.blocking->previously_removed},
                                      {"r2", r.blocking->r2}}
                               : json(nullptr);
    j["surviving"] = r.surviving;
    j["notes"] = r.notes;
    return j;
}

ScreenReport screen_report_from_json(const nlohmann::json& j) {
    ScreenReport r;
    r.input = j.at("input").get<std::vector<std::string>>();
    r.removed_constant = j.value("removed_constant", std::vector<std::string>{});
    for (const auto& c : j.at("removed_by_correlation"))
        r.removed_by_correlation.push_back({c.at("removed"), c.at("kept"), c.at("rho")});
    for (const auto& c : j.at("removed_by_redundancy")) r.removed_by_redundancy.push_back({c.at("feature"), c.at("r2")});
    if (j.contains("blocking") && !j["blocking"].is_null()) {
        const auto& b = j["blocking"];
        r.blocking = BlockingPair{b.at("candidate"), b.at("previously_removed"), b.at("r2")};
    }
    r.surviving = j.at("surviving").get<std::vector<std::string>>();
    r.notes = j.value("notes", std::vector<std::string>{});
    return r;
}

}  // namespace txtime::screen
