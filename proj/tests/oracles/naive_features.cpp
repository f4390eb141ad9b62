#include "naive_features.hpp"

#include <algorithm>
#include <tuple>
#include <vector>

#include "txtime/stats.hpp"

using namespace txtime;

namespace oracle {

namespace {

std::size_t block_of(const Dataset& ds, std::size_t tx_index) {
    return *ds.block_index(ds.transactions[tx_index].block_number);
}

std::vector<std::size_t> txs_in(const Dataset& ds, std::size_t block) {
    // Transactions are stored grouped by block in inclusion order.
    const auto number = ds.blocks[block].number;
    auto lo = std::partition_point(ds.transactions.begin(), ds.transactions.end(),
                                   [&](const Transaction& t) { return t.block_number < number; });
    std::vector<std::size_t> out;
    for (auto it = lo; it != ds.transactions.end() && it->block_number == number; ++it)
        out.push_back(static_cast<std::size_t>(it - ds.transactions.begin()));
    return out;
}

double series_at(const std::vector<SeriesSample>& s, std::int64_t t) {
    double v = 0.0;
    for (const auto& x : s)
        if (x.timestamp <= t) v = x.value;
    return v;
}

struct Counts {
    std::int64_t above = 0, same = 0, below = 0, n = 0;
};

Counts count(const Dataset& ds, const std::vector<std::size_t>& txs, std::int64_t price) {
    Counts c;
    for (auto t : txs) {
        const auto p = ds.transactions[t].gas_price.wei();
        if (p > price) ++c.above;
        else if (p == price) ++c.same;
        else ++c.below;
        ++c.n;
    }
    return c;
}

double pct(std::int64_t k, std::int64_t n) { return n == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(n); }

void put_summary(std::map<std::string, double>& out, const std::string& stem, const stats::Summary& s) {
    out["avg_" + stem] = s.mean;
    out["med_" + stem] = s.median;
    out["std_" + stem] = s.std;
}

}  // namespace

std::map<std::string, double> naive_row(const Dataset& ds, std::size_t tx_index) {
    std::map<std::string, double> f;
    const auto& tx = ds.transactions[tx_index];
    const auto block = block_of(ds, tx_index);
    const auto price = tx.gas_price.wei();

    const ContractMeta* contract = nullptr;
    for (const auto& c : ds.contracts)
        if (tx.to && c.address == *tx.to) contract = &c;
    f["contract_block_number"] = contract ? static_cast<double>(contract->deployed_block_number) : 0.0;
    f["contract_bytecode_length"] = contract ? static_cast<double>(contract->bytecode_length) : 0.0;
    f["is_erc721"] = contract && contract->is_erc721;
    f["is_erc20"] = contract && contract->is_erc20;
    f["to_contract"] = contract != nullptr;
    f["pending_pool"] = series_at(ds.pending_pool, tx.submission_time);
    f["net_util"] = series_at(ds.net_util, tx.submission_time);
    const std::int64_t day_number = tx.submission_time / 86400;
    f["day"] = static_cast<double>((day_number + 3) % 7);  // 1970-01-01 was a Thursday
    f["hour"] = static_cast<double>((tx.submission_time % 86400) / 3600);

    f["gas_price_gwei"] = tx.gas_price.gwei();
    f["tx_nonce"] = static_cast<double>(tx.nonce);
    f["value"] = tx.value_eth;
    f["tx_gas_limit"] = static_cast<double>(tx.gas_limit);
    f["input_length"] = static_cast<double>(tx.input_length);

    // Window: the 120 blocks immediately before this one, oldest first.
    std::vector<std::vector<std::size_t>> window;
    for (std::size_t b = block - 120; b < block; ++b) window.push_back(txs_in(ds, b));
    std::vector<std::size_t> pooled;
    for (const auto& w : window) pooled.insert(pooled.end(), w.begin(), w.end());
    const auto& prev = window.back();

    std::vector<std::int64_t> counts, diffs;
    std::int64_t total = 0;
    for (std::size_t i = 0; i < window.size(); ++i) {
        counts.push_back(static_cast<std::int64_t>(window[i].size()));
        total += counts.back();
        diffs.push_back(ds.blocks[block - 120 + i].difficulty);
    }
    f["total_txs_120"] = static_cast<double>(total);
    put_summary(f, "txs_120", stats::describe_exact(counts));
    f["total_txs_1"] = static_cast<double>(prev.size());

    {
        const auto today = ds.blocks[block].timestamp / 86400;
        std::vector<std::int64_t> prices;
        for (const auto& t : ds.transactions)
            if (ds.find_block(t.block_number)->timestamp / 86400 == today - 1) prices.push_back(t.gas_price.wei());
        f["avg_gas_price_gwei_prev_day"] = stats::describe_exact(prices, 1e-9).mean;
    }
    put_summary(f, "difficulty_120", stats::describe_exact(diffs));
    f["difficulty_1"] = static_cast<double>(ds.blocks[block - 1].difficulty);

    {
        std::vector<std::int64_t> usage;
        if (tx.to && tx.function_selector)
            for (auto t : pooled) {
                const auto& o = ds.transactions[t];
                if (o.to == tx.to && o.function_selector == tx.function_selector)
                    usage.push_back(o.gas_used ? *o.gas_used : o.gas_limit);
            }
        put_summary(f, "func_gas_usage_120", stats::describe_exact(usage));
    }
    {
        std::vector<double> pp;
        for (const auto& s : ds.pending_pool)
            if (s.timestamp >= ds.blocks[block - 120].timestamp && s.timestamp <= ds.blocks[block - 1].timestamp)
                pp.push_back(s.value);
        put_summary(f, "pending_pool_120", stats::describe(pp));
    }
    {
        // Lower-nonce transactions of the issuer not yet mined when this one was submitted.
        std::vector<std::int64_t> pend;
        for (std::size_t t = 0; t < ds.transactions.size(); ++t) {
            const auto& o = ds.transactions[t];
            if (o.issuer != tx.issuer || o.nonce >= tx.nonce) continue;
            const auto ob = block_of(ds, t);
            const bool mined = ob < block && ds.blocks[ob].timestamp <= tx.submission_time;
            if (!mined) pend.push_back(o.gas_price.wei());
        }
        const auto s = stats::describe_exact(pend, 1e-9);
        f["avg_pend_prices"] = s.mean;
        f["med_pend_prices"] = s.median;
        f["std_pend_prices"] = s.std;
        f["num_pending"] = static_cast<double>(pend.size());
    }

    {
        std::vector<std::int64_t> na, ns, nb;
        std::vector<double> pa, ps, pb;
        for (const auto& w : window) {
            const auto c = count(ds, w, price);
            na.push_back(c.above);
            ns.push_back(c.same);
            nb.push_back(c.below);
            pa.push_back(pct(c.above, c.n));
            ps.push_back(pct(c.same, c.n));
            pb.push_back(pct(c.below, c.n));
        }
        put_summary(f, "num_above_120", stats::describe_exact(na));
        put_summary(f, "num_same_120", stats::describe_exact(ns));
        put_summary(f, "num_below_120", stats::describe_exact(nb));
        put_summary(f, "pct_above_120", stats::describe(pa));
        put_summary(f, "pct_same_120", stats::describe(ps));
        put_summary(f, "pct_below_120", stats::describe(pb));
    }
    for (const auto& [suffix, txs] : {std::pair<std::string, const std::vector<std::size_t>*>{"_1", &prev},
                                      std::pair<std::string, const std::vector<std::size_t>*>{"_120", &pooled}}) {
        const auto c = count(ds, *txs, price);
        f["num_above" + suffix] = static_cast<double>(c.above);
        f["num_same" + suffix] = static_cast<double>(c.same);
        f["num_below" + suffix] = static_cast<double>(c.below);
        f["pct_above" + suffix] = pct(c.above, c.n);
        f["pct_same" + suffix] = pct(c.same, c.n);
        f["pct_below" + suffix] = pct(c.below, c.n);
        std::vector<std::int64_t> prices;
        for (auto t : *txs) prices.push_back(ds.transactions[t].gas_price.wei());
        put_summary(f, "gas_price" + suffix, stats::describe_exact(prices, 1e-9));
    }
    {
        std::vector<double> prices;
        for (auto t : pooled) prices.push_back(static_cast<double>(ds.transactions[t].gas_price.wei()));
        std::sort(prices.begin(), prices.end());
        int cat = 4;
        if (prices.empty()) {
            cat = 0;
        } else {
            for (int k = 3; k >= 0; --k)
                if (static_cast<double>(price) <= stats::quantile_sorted(prices, 0.2 * (k + 1))) cat = k;
        }
        f["gas_price_cat_enc"] = cat;
    }
    {
        // (distance, -block, -position) ascending = closest, then most recent.
        std::vector<std::tuple<std::int64_t, std::int64_t, std::int64_t, std::int64_t>> cand;
        for (std::size_t i = 0; i < window.size(); ++i)
            for (std::size_t j = 0; j < window[i].size(); ++j) {
                const auto& o = ds.transactions[window[i][j]];
                const auto d = o.gas_price.wei() > price ? o.gas_price.wei() - price : price - o.gas_price.wei();
                cand.emplace_back(d, -static_cast<std::int64_t>(i), -static_cast<std::int64_t>(j),
                                  ds.find_block(o.block_number)->timestamp - o.submission_time);
            }
        std::sort(cand.begin(), cand.end());
        cand.resize(std::min<std::size_t>(cand.size(), 100));
        std::vector<std::int64_t> secs;
        for (const auto& c : cand) secs.push_back(std::get<3>(c));
        const auto s = stats::describe_exact(secs, 1.0 / 60.0);
        f["past_avg_time"] = s.mean;
        f["past_med_time"] = s.median;
        f["past_std_time"] = s.std;
        f["closest_tx_pr_time"] = secs.empty() ? 0.0 : static_cast<double>(secs.front()) / 60.0;
    }
    return f;
}

}  // namespace oracle
