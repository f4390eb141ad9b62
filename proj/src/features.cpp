#include "txtime/features.hpp"

#include <algorithm>
#include <array>
#include <unordered_map>
#include <unordered_set>

#include "txtime/error.hpp"
#include "txtime/parallel.hpp"

namespace txtime::features {

namespace {

using D = Dimension;
using W = Window;

constexpr std::array<FeatureSpec, 75> kCatalog{{
    {"contract_block_number", D::contextual, W::none},
    {"contract_bytecode_length", D::contextual, W::none},
    {"is_erc721", D::contextual, W::none},
    {"is_erc20", D::contextual, W::none},
    {"to_contract", D::contextual, W::none},
    {"pending_pool", D::contextual, W::none},
    {"net_util", D::contextual, W::none},
    {"day", D::contextual, W::none},
    {"hour", D::contextual, W::none},

    {"gas_price_gwei", D::behavioral, W::none},
    {"tx_nonce", D::behavioral, W::none},
    {"value", D::behavioral, W::none},
    {"tx_gas_limit", D::behavioral, W::none},
    {"input_length", D::behavioral, W::none},

    {"total_txs_120", D::historical, W::prev_120},
    {"avg_txs_120", D::historical, W::prev_120},
    {"med_txs_120", D::historical, W::prev_120},
    {"std_txs_120", D::historical, W::prev_120},
    {"total_txs_1", D::historical, W::prev_1},
    {"avg_gas_price_gwei_prev_day", D::historical, W::prev_day},
    {"avg_difficulty_120", D::historical, W::prev_120},
    {"med_difficulty_120", D::historical, W::prev_120},
    {"std_difficulty_120", D::historical, W::prev_120},
    {"difficulty_1", D::historical, W::prev_1},
    {"avg_func_gas_usage_120", D::historical, W::prev_120},
    {"med_func_gas_usage_120", D::historical, W::prev_120},
    {"std_func_gas_usage_120", D::historical, W::prev_120},
    {"avg_pending_pool_120", D::historical, W::prev_120},
    {"med_pending_pool_120", D::historical, W::prev_120},
    {"std_pending_pool_120", D::historical, W::prev_120},
    {"avg_pend_prices", D::historical, W::none},
    {"med_pend_prices", D::historical, W::none},
    {"std_pend_prices", D::historical, W::none},
    {"num_pending", D::historical, W::none},

    {"avg_num_above_120", D::pricing, W::prev_120},
    {"med_num_above_120", D::pricing, W::prev_120},
    {"std_num_above_120", D::pricing, W::prev_120},
    {"avg_num_same_120", D::pricing, W::prev_120},
    {"med_num_same_120", D::pricing, W::prev_120},
    {"std_num_same_120", D::pricing, W::prev_120},
    {"avg_num_below_120", D::pricing, W::prev_120},
    {"med_num_below_120", D::pricing, W::prev_120},
    {"std_num_below_120", D::pricing, W::prev_120},
    {"avg_pct_above_120", D::pricing, W::prev_120},
    {"med_pct_above_120", D::pricing, W::prev_120},
    {"std_pct_above_120", D::pricing, W::prev_120},
    {"avg_pct_same_120", D::pricing, W::prev_120},
    {"med_pct_same_120", D::pricing, W::prev_120},
    {"std_pct_same_120", D::pricing, W::prev_120},
    {"avg_pct_below_120", D::pricing, W::prev_120},
    {"med_pct_below_120", D::pricing, W::prev_120},
    {"std_pct_below_120", D::pricing, W::prev_120},
    {"num_above_1", D::pricing, W::prev_1},
    {"num_same_1", D::pricing, W::prev_1},
    {"num_below_1", D::pricing, W::prev_1},
    {"num_above_120", D::pricing, W::prev_120},
    {"num_same_120", D::pricing, W::prev_120},
    {"num_below_120", D::pricing, W::prev_120},
    {"pct_above_1", D::pricing, W::prev_1},
    {"pct_same_1", D::pricing, W::prev_1},
    {"pct_below_1", D::pricing, W::prev_1},
    {"pct_above_120", D::pricing, W::prev_120},
    {"pct_same_120", D::pricing, W::prev_120},
    {"pct_below_120", D::pricing, W::prev_120},
    {"gas_price_cat_enc", D::pricing, W::prev_120},
    {"avg_gas_price_1", D::pricing, W::prev_1},
    {"med_gas_price_1", D::pricing, W::prev_1},
    {"std_gas_price_1", D::pricing, W::prev_1},
    {"avg_gas_price_120", D::pricing, W::prev_120},
    {"med_gas_price_120", D::pricing, W::prev_120},
    {"std_gas_price_120", D::pricing, W::prev_120},
    {"past_avg_time", D::pricing, W::prev_120},
    {"past_med_time", D::pricing, W::prev_120},
    {"past_std_time", D::pricing, W::prev_120},
    {"closest_tx_pr_time", D::pricing, W::prev_120},
}};

constexpr double kGweiPerWei = 1e-9;

}  // namespace

std::span<const FeatureSpec> catalog() { return kCatalog; }

const FeatureSpec& spec(std::string_view name) {
    for (const auto& s : kCatalog)
        if (s.name == name) return s;
    throw ConfigError("unknown feature '" + std::string(name) + "'");
}

std::vector<std::string> all_feature_names() {
    std::vector<std::string> out;
    for (const auto& s : kCatalog) out.emplace_back(s.name);
    return out;
}

std::vector<std::string> feature_names(Dimension d) {
    std::vector<std::string> out;
    for (const auto& s : kCatalog)
        if (s.dimension == d) out.emplace_back(s.name);
    return out;
}

bool is_categorical(std::string_view name) {
    return name == "to_contract" || name == "is_erc20" || name == "is_erc721" || name == "day" || name == "hour" ||
           name == "gas_price_cat_enc";
}

PricingCounts pricing_counts(std::span<const std::int64_t> sorted, GasPrice price) {
    PricingCounts c;
    const auto lo = std::lower_bound(sorted.begin(), sorted.end(), price.wei());
    const auto hi = std::upper_bound(lo, sorted.end(), price.wei());
    c.below = lo - sorted.begin();
    c.same = hi - lo;
    c.above = sorted.end() - hi;
    if (!sorted.empty()) {
        const auto n = static_cast<double>(sorted.size());
        c.pct_above = static_cast<double>(c.above) / n;
        c.pct_same = static_cast<double>(c.same) / n;
        c.pct_below = static_cast<double>(c.below) / n;
    }
    return c;
}

int gas_price_category(std::span<const std::int64_t> sorted, GasPrice price) {
    if (sorted.empty()) return 0;
    const auto p = static_cast<double>(price.wei());
    for (int k = 0; k < 4; ++k)
        if (p <= stats::quantile_sorted(sorted, 0.2 * (k + 1))) return k;
    return 4;
}

std::vector<std::size_t> select_similar(std::span<const ProcessedTx> window, GasPrice price, std::size_t k) {
    std::vector<std::size_t> out;
    const auto target = price.wei();
    const auto first_ge = static_cast<std::ptrdiff_t>(
        std::lower_bound(window.begin(), window.end(), target,
                         [](const ProcessedTx& t, std::int64_t p) { return t.price_wei < p; }) -
        window.begin());
    std::ptrdiff_t left = first_ge - 1;  // next candidate below, moving down
    auto right = static_cast<std::size_t>(first_ge);
    std::vector<std::size_t> group;
    while (out.size() < k && (left >= 0 || right < window.size())) {
        const std::int64_t dl = left >= 0 ? target - window[static_cast<std::size_t>(left)].price_wei : INT64_MAX;
        const std::int64_t dr = right < window.size() ? window[right].price_wei - target : INT64_MAX;
        const std::int64_t d = std::min(dl, dr);
        group.clear();
        if (dl == d) {
            const auto p = window[static_cast<std::size_t>(left)].price_wei;
            while (left >= 0 && window[static_cast<std::size_t>(left)].price_wei == p)
                group.push_back(static_cast<std::size_t>(left--));
        }
        if (dr == d) {
            const auto p = window[right].price_wei;
            while (right < window.size() && window[right].price_wei == p) group.push_back(right++);
        }
        // Equal distance: most recent first.
        std::sort(group.begin(), group.end(), [&](std::size_t a, std::size_t b) {
            if (window[a].block_index != window[b].block_index) return window[a].block_index > window[b].block_index;
            return window[a].intra_index > window[b].intra_index;
        });
        for (auto g : group) {
            if (out.size() == k) break;
            out.push_back(g);
        }
    }
    return out;
}

SimilarPriceTimes similar_price_times(std::span<const ProcessedTx> window, GasPrice price, std::size_t k) {
    SimilarPriceTimes r;
    const auto picked = select_similar(window, price, k);
    if (picked.empty()) return r;
    std::vector<std::int64_t> secs;
    secs.reserve(picked.size());
    for (auto i : picked) secs.push_back(window[i].processing_seconds);
    const auto s = stats::describe_exact(secs, 1.0 / 60.0);
    r.past_avg_time = s.mean;
    r.past_med_time = s.median;
    r.past_std_time = s.std;
    r.closest_tx_pr_time = static_cast<double>(secs.front()) / 60.0;
    return r;
}

PendingFeatures issuer_pending_features(std::span<const std::int64_t> prices) {
    PendingFeatures f;
    if (prices.empty()) return f;
    const auto s = stats::describe_exact(prices, kGweiPerWei);
    f.num_pending = static_cast<double>(prices.size());
    f.avg_pend_prices = s.mean;
    f.med_pend_prices = s.median;
    f.std_pend_prices = s.std;
    return f;
}

namespace {

double latest_sample(const std::vector<SeriesSample>& series, std::int64_t t) {
    auto it = std::upper_bound(series.begin(), series.end(), t,
                               [](std::int64_t v, const SeriesSample& s) { return v < s.timestamp; });
    return it == series.begin() ? 0.0 : std::prev(it)->value;
}

std::string func_key(const Transaction& tx) {
    // No selector: no function bucket.
    return tx.to && tx.function_selector ? *tx.to + "|" + *tx.function_selector : std::string();
}

// Read-only indexes shared by every block.
struct Context {
    const Dataset& ds;
    std::vector<std::vector<std::int64_t>> sorted_prices;  // per block
    std::unordered_map<std::int64_t, stats::ExactMoments> day_prices;
    std::unordered_map<std::string_view, std::vector<std::size_t>> by_issuer;  // tx indexes by nonce
    std::vector<std::size_t> tx_block;                                         // block index per tx

    explicit Context(const Dataset& d) : ds(d) {
        sorted_prices.resize(ds.blocks.size());
        tx_block.resize(ds.transactions.size());
        for (std::size_t b = 0; b < ds.blocks.size(); ++b) {
            const auto [lo, hi] = ds.block_tx_range(b);
            auto& day = day_prices[utc_day(ds.blocks[b].timestamp)];
            for (auto t = lo; t < hi; ++t) {
                const auto w = ds.transactions[t].gas_price.wei();
                sorted_prices[b].push_back(w);
                day.add(w);
                tx_block[t] = b;
            }
            std::sort(sorted_prices[b].begin(), sorted_prices[b].end());
        }
        for (std::size_t t = 0; t < ds.transactions.size(); ++t) by_issuer[ds.transactions[t].issuer].push_back(t);
        for (auto& [_, list] : by_issuer)
            std::sort(list.begin(), list.end(), [&](std::size_t a, std::size_t b) {
                return ds.transactions[a].nonce < ds.transactions[b].nonce;
            });
    }
};

// Aggregates over the 120 blocks preceding one block.
struct WindowState {
    std::size_t first = 0, last = 0;  // [first, last) block indexes
    std::vector<std::int64_t> pooled;  // sorted prices
    stats::ExactMoments pooled_moments;
    std::vector<ProcessedTx> processed;  // sorted by (price, block, intra)
    stats::Summary txs, difficulty, pending_pool;
    std::int64_t total_txs = 0;
    std::unordered_map<std::string, stats::Summary> func_gas;
};

WindowState build_window(const Context& ctx, std::size_t block) {
    const auto& ds = ctx.ds;
    WindowState w;
    w.last = block;
    w.first = block - kWindowBlocks;
    std::vector<std::int64_t> counts, diffs;
    std::unordered_set<std::string> keys;
    {
        const auto [lo, hi] = ds.block_tx_range(block);
        for (auto t = lo; t < hi; ++t) keys.insert(func_key(ds.transactions[t]));
    }
    keys.erase(std::string());
    std::unordered_map<std::string, std::vector<std::int64_t>> gas;
    for (auto b = w.first; b < w.last; ++b) {
        const auto [lo, hi] = ds.block_tx_range(b);
        counts.push_back(static_cast<std::int64_t>(hi - lo));
        diffs.push_back(ds.blocks[b].difficulty);
        for (auto t = lo; t < hi; ++t) {
            const auto& tx = ds.transactions[t];
            w.pooled.push_back(tx.gas_price.wei());
            w.pooled_moments.add(tx.gas_price.wei());
            w.processed.push_back({tx.gas_price.wei(), b, t - lo, tx.processing_seconds});
            if (!keys.empty()) {
                auto k = func_key(tx);
                if (keys.count(k)) gas[k].push_back(tx.gas_usage());
            }
        }
    }
    std::sort(w.pooled.begin(), w.pooled.end());
    std::sort(w.processed.begin(), w.processed.end(), [](const ProcessedTx& a, const ProcessedTx& b) {
        if (a.price_wei != b.price_wei) return a.price_wei < b.price_wei;
        if (a.block_index != b.block_index) return a.block_index < b.block_index;
        return a.intra_index < b.intra_index;
    });
    w.txs = stats::describe_exact(counts);
    for (auto c : counts) w.total_txs += c;
    w.difficulty = stats::describe_exact(diffs);
    for (auto& [k, v] : gas) w.func_gas[k] = stats::describe_exact(v);

    const auto t_lo = ds.blocks[w.first].timestamp;
    const auto t_hi = ds.blocks[w.last - 1].timestamp;
    std::vector<double> pp;
    for (auto it = std::lower_bound(ds.pending_pool.begin(), ds.pending_pool.end(), t_lo,
                                    [](const SeriesSample& s, std::int64_t v) { return s.timestamp < v; });
         it != ds.pending_pool.end() && it->timestamp <= t_hi; ++it)
        pp.push_back(it->value);
    w.pending_pool = stats::describe(pp);
    return w;
}

std::vector<std::int64_t> pending_prices(const Context& ctx, std::size_t tx_index, std::size_t block) {
    const auto& ds = ctx.ds;
    const auto& tx = ds.transactions[tx_index];
    const auto& list = ctx.by_issuer.at(tx.issuer);
    // Lower nonces only; the mined ones form a prefix.
    const auto end = std::lower_bound(list.begin(), list.end(), tx.nonce, [&](std::size_t t, std::int64_t n) {
        return ds.transactions[t].nonce < n;
    });
    const auto begin = std::partition_point(list.begin(), end, [&](std::size_t t) {
        const auto b = ctx.tx_block[t];
        return b < block && ds.blocks[b].timestamp <= tx.submission_time;
    });
    std::vector<std::int64_t> out;
    for (auto it = begin; it != end; ++it) out.push_back(ds.transactions[*it].gas_price.wei());
    return out;
}

void compute_row(const Context& ctx, const WindowState& w, std::size_t tx_index, std::size_t block, double* out) {
    const auto& ds = ctx.ds;
    const auto& tx = ds.transactions[tx_index];
    const auto price = tx.gas_price;
    std::size_t n = 0;
    auto put = [&](double v) { out[n++] = v; };

    // Contextual.
    const ContractMeta* contract = tx.to ? ds.find_contract(*tx.to) : nullptr;
    put(contract ? static_cast<double>(contract->deployed_block_number) : 0.0);
    put(contract ? static_cast<double>(contract->bytecode_length) : 0.0);
    put(contract && contract->is_erc721 ? 1.0 : 0.0);
    put(contract && contract->is_erc20 ? 1.0 : 0.0);
    put(contract ? 1.0 : 0.0);
    put(latest_sample(ds.pending_pool, tx.submission_time));
    put(latest_sample(ds.net_util, tx.submission_time));
    put(weekday(tx.submission_time));
    put(hour_of_day(tx.submission_time));

    // Behavioral.
    put(price.gwei());
    put(static_cast<double>(tx.nonce));
    put(tx.value_eth);
    put(static_cast<double>(tx.gas_limit));
    put(static_cast<double>(tx.input_length));

    // Historical.
    const auto prev = block - 1;
    put(static_cast<double>(w.total_txs));
    put(w.txs.mean);
    put(w.txs.median);
    put(w.txs.std);
    put(static_cast<double>(ctx.sorted_prices[prev].size()));
    {
        auto it = ctx.day_prices.find(utc_day(ds.blocks[block].timestamp) - 1);
        put(it == ctx.day_prices.end() ? 0.0 : it->second.mean(kGweiPerWei));
    }
    put(w.difficulty.mean);
    put(w.difficulty.median);
    put(w.difficulty.std);
    put(static_cast<double>(ds.blocks[prev].difficulty));
    {
        stats::Summary g;
        auto it = w.func_gas.find(func_key(tx));
        if (it != w.func_gas.end()) g = it->second;
        put(g.mean);
        put(g.median);
        put(g.std);
    }
    put(w.pending_pool.mean);
    put(w.pending_pool.median);
    put(w.pending_pool.std);
    {
        const auto pend = issuer_pending_features(pending_prices(ctx, tx_index, block));
        put(pend.avg_pend_prices);
        put(pend.med_pend_prices);
        put(pend.std_pend_prices);
        put(pend.num_pending);
    }

    // Pricing.
    std::array<std::vector<std::int64_t>, 3> nums;
    std::array<std::vector<double>, 3> pcts;
    for (auto b = w.first; b < w.last; ++b) {
        const auto c = pricing_counts(ctx.sorted_prices[b], price);
        nums[0].push_back(c.above);
        nums[1].push_back(c.same);
        nums[2].push_back(c.below);
        pcts[0].push_back(c.pct_above);
        pcts[1].push_back(c.pct_same);
        pcts[2].push_back(c.pct_below);
    }
    for (const auto& v : nums) {
        const auto s = stats::describe_exact(v);
        put(s.mean);
        put(s.median);
        put(s.std);
    }
    for (const auto& v : pcts) {
        const auto s = stats::describe(v);
        put(s.mean);
        put(s.median);
        put(s.std);
    }
    const auto c1 = pricing_counts(ctx.sorted_prices[prev], price);
    const auto c120 = pricing_counts(w.pooled, price);
    for (const auto& c : {c1, c120}) {
        put(static_cast<double>(c.above));
        put(static_cast<double>(c.same));
        put(static_cast<double>(c.below));
    }
    for (const auto& c : {c1, c120}) {
        put(c.pct_above);
        put(c.pct_same);
        put(c.pct_below);
    }
    put(gas_price_category(w.pooled, price));
    {
        const auto s1 = stats::describe_exact(ctx.sorted_prices[prev], kGweiPerWei);
        put(s1.mean);
        put(s1.median);
        put(s1.std);
        const auto s = stats::describe_sorted_exact(w.pooled, w.pooled_moments, kGweiPerWei);
        put(s.mean);
        put(s.median);
        put(s.std);
    }
    const auto sim = similar_price_times(w.processed, price);
    put(sim.past_avg_time);
    put(sim.past_med_time);
    put(sim.past_std_time);
    put(sim.closest_tx_pr_time);

    if (n != kCatalog.size()) throw std::logic_error("feature row width mismatch");
}

}  // namespace

FeatureMatrix build_feature_matrix(const Dataset& ds, const std::vector<std::string>& specs, const BuildOptions& options,
                                   BuildReport* report) {
    std::vector<std::size_t> cols;
    std::vector<Dimension> dims;
    for (const auto& name : specs) {
        const auto& s = spec(name);
        cols.push_back(static_cast<std::size_t>(&s - kCatalog.data()));
        dims.push_back(s.dimension);
    }

    BuildReport rep;
    std::vector<std::size_t> row_blocks;
    std::vector<std::size_t> row_offset;
    std::size_t n_rows = 0;
    if (!ds.blocks.empty()) {
        const auto first_day = utc_day(ds.blocks.front().timestamp);
        std::unordered_set<std::int64_t> sampled(options.sampled_blocks.begin(), options.sampled_blocks.end());
        for (std::size_t b = 0; b < ds.blocks.size(); ++b) {
            if (!sampled.empty() && !sampled.count(ds.blocks[b].number)) continue;
            const auto [lo, hi] = ds.block_tx_range(b);
            if (b < kWindowBlocks) {
                rep.excluded_warmup += hi - lo;
            } else if (utc_day(ds.blocks[b].timestamp) == first_day) {
                rep.excluded_first_day += hi - lo;
            } else if (hi > lo) {
                row_blocks.push_back(b);
                row_offset.push_back(n_rows);
                n_rows += hi - lo;
            }
        }
    }
    rep.rows = n_rows;

    const Context ctx(ds);
    const std::size_t width = kCatalog.size();
    std::vector<double> full(n_rows * width);  // row-major scratch
    const auto n_blocks = static_cast<std::ptrdiff_t>(row_blocks.size());
    const bool par = options.parallel && !in_parallel();
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) if (par)
    for (std::ptrdiff_t i = 0; i < n_blocks; ++i) {
        try {
            const auto b = row_blocks[static_cast<std::size_t>(i)];
            const auto w = build_window(ctx, b);
            const auto [lo, hi] = ds.block_tx_range(b);
            for (auto t = lo; t < hi; ++t)
                compute_row(ctx, w, t, b, full.data() + (row_offset[static_cast<std::size_t>(i)] + t - lo) * width);
        } catch (...) {
#pragma omp critical
            failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);

    std::vector<std::string> keys;
    std::vector<std::int64_t> block_numbers, days;
    std::vector<double> target;
    keys.reserve(n_rows);
    for (auto b : row_blocks) {
        const auto [lo, hi] = ds.block_tx_range(b);
        for (auto t = lo; t < hi; ++t) {
            keys.push_back(ds.transactions[t].hash);
            block_numbers.push_back(ds.blocks[b].number);
            days.push_back(utc_day(ds.blocks[b].timestamp));
            target.push_back(ds.transactions[t].processing_time_minutes());
        }
    }
    std::vector<double> values(n_rows * cols.size());
    for (std::size_t k = 0; k < cols.size(); ++k)
        for (std::size_t r = 0; r < n_rows; ++r) values[k * n_rows + r] = full[r * width + cols[k]];

    FeatureMatrix m(specs, dims);
    m.assign(std::move(keys), std::move(block_numbers), std::move(days), std::move(values), std::move(target));
    if (report) *report = rep;
    return m;
}

}  // namespace txtime::features
