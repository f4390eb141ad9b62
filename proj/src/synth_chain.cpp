#include "txtime/synth_chain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "txtime/error.hpp"
#include "txtime/features.hpp"
#include "txtime/rng.hpp"
#include "txtime/stats.hpp"

namespace txtime::synth {

std::string_view to_string(Signal s) {
    switch (s) {
        case Signal::queue: return "queue";
        case Signal::competitiveness: return "competitiveness";
        case Signal::flat: return "flat";
    }
    return "unknown";
}

Signal parse_signal(std::string_view name) {
    if (name == "queue") return Signal::queue;
    if (name == "competitiveness") return Signal::competitiveness;
    if (name == "flat") return Signal::flat;
    throw ConfigError("unknown signal '" + std::string(name) + "' (expected queue, competitiveness or flat)");
}

void SynthConfig::validate() const {
    auto require = [](bool ok, const char* field, const char* rule) {
        if (!ok) throw ConfigError(std::string("synth.") + field + " " + rule);
    };
    require(n_days >= 1, "n_days", "must be >= 1");
    require(mean_block_interval > 0.0, "mean_block_interval", "must be > 0");
    require(block_capacity >= 1, "block_capacity", "must be >= 1");
    require(arrival_rate > 0.0, "arrival_rate", "must be > 0");
    require(issuer_pool_size >= 1, "issuer_pool_size", "must be >= 1");
    require(contract_pool_size >= 1, "contract_pool_size", "must be >= 1");
    require(noise_sd >= 0.0, "noise_sd", "must be >= 0");
    require(gas_price.family == "lognormal", "gas_price.family", "must be 'lognormal'");
    require(gas_price.median_gwei > 0.0, "gas_price.median_gwei", "must be > 0");
    require(gas_price.sigma >= 0.0, "gas_price.sigma", "must be >= 0");
    require(gas_price.tick_gwei > 0.0, "gas_price.tick_gwei", "must be > 0");
    require(gas_price.drift_step_seconds >= 1, "gas_price.drift_step_seconds", "must be >= 1");
}

void Miner::submit(const PendingTx& tx) {
    ++pending_;
    auto it = next_nonce_.find(tx.issuer);
    const std::int64_t expected = it == next_nonce_.end() ? 0 : it->second;
    if (tx.nonce == expected)
        eligible_.push(tx);
    else
        waiting_[tx.issuer].emplace(tx.nonce, tx);
}

void Miner::set_account_nonce(std::int64_t issuer, std::int64_t nonce) { next_nonce_[issuer] = nonce; }

std::vector<std::size_t> Miner::mine(std::size_t capacity) {
    std::vector<std::size_t> included;
    while (included.size() < capacity && !eligible_.empty()) {
        const PendingTx tx = eligible_.top();
        eligible_.pop();
        included.push_back(tx.id);
        --pending_;
        const std::int64_t next = tx.nonce + 1;
        next_nonce_[tx.issuer] = next;
        auto w = waiting_.find(tx.issuer);
        if (w != waiting_.end()) {
            auto n = w->second.find(next);
            if (n != w->second.end()) {
                eligible_.push(n->second);
                w->second.erase(n);
                if (w->second.empty()) waiting_.erase(w);
            }
        }
    }
    return included;
}

double planted_minutes(double competitiveness) {
    const double c = std::clamp(competitiveness, 0.0, 1.0);
    return 0.25 + 6.0 * (1.0 - c) * (1.0 - c);
}

namespace {

std::string hex_id(char kind, std::uint64_t a, std::uint64_t b, int words) {
    std::string out = "0x";
    out.reserve(2 + 16 * static_cast<std::size_t>(words));
    char buf[17];
    for (int w = 0; w < words; ++w) {
        std::snprintf(buf, sizeof buf, "%016llx",
                      static_cast<unsigned long long>(splitmix64(a * 0x9e37ULL + b * 131ULL + static_cast<std::uint64_t>(w) +
                                                                 static_cast<std::uint64_t>(kind) * 0x1000193ULL)));
        out += buf;
    }
    return out;
}

std::string issuer_address(std::int64_t idx) { return hex_id('i', static_cast<std::uint64_t>(idx), 0, 2).substr(0, 42); }
std::string eoa_address(std::int64_t idx) { return hex_id('e', static_cast<std::uint64_t>(idx), 1, 2).substr(0, 42); }
std::string contract_address(std::int64_t idx) { return hex_id('c', static_cast<std::uint64_t>(idx), 2, 2).substr(0, 42); }

struct SimTx {
    std::int64_t issuer = 0;
    std::int64_t nonce = 0;
    GasPrice price;
    std::int64_t arrival = 0;
    std::int64_t gas_limit = 21000;
    std::int64_t gas_used = 21000;
    double value_eth = 0.0;
    std::int64_t input_length = 0;
    std::optional<std::string> to;
    std::optional<std::string> selector;
    // Filled by mining.
    std::optional<std::size_t> block;
    std::int64_t recorded_submission = 0;
};

struct Simulation {
    std::vector<Block> blocks;
    std::vector<std::vector<std::size_t>> block_txs;  // ids per block, inclusion order
    std::vector<SimTx> txs;
    std::vector<ContractMeta> contracts;
    std::vector<std::string> warnings;
    std::int64_t end_time = 0;
};

Simulation simulate(const SynthConfig& cfg) {
    cfg.validate();
    Simulation sim;
    auto rng = make_rng(cfg.seed, "synth");
    const std::int64_t t0 = cfg.start_timestamp;
    sim.end_time = t0 + cfg.n_days * kSecondsPerDay;

    if (cfg.arrival_rate > static_cast<double>(cfg.block_capacity) / cfg.mean_block_interval)
        sim.warnings.push_back("arrival_rate exceeds block_capacity / mean_block_interval; the pending pool grows "
                               "without bound");

    for (std::int64_t c = 0; c < cfg.contract_pool_size; ++c) {
        ContractMeta meta;
        meta.address = contract_address(c);
        meta.deployed_block_number = cfg.first_block_number - 1 - uniform_int(rng, 0, 2'000'000);
        meta.bytecode_length = uniform_int(rng, 200, 24'000);
        meta.is_erc20 = uniform01(rng) < 0.4;
        meta.is_erc721 = !meta.is_erc20 && uniform01(rng) < 0.15;
        sim.contracts.push_back(std::move(meta));
    }

    // Block schedule.
    {
        auto brng = make_rng(cfg.seed, "synth.blocks");
        double t = static_cast<double>(t0);
        std::int64_t last_ts = t0 - 1;
        double difficulty = 3.2e15;
        std::int64_t number = cfg.first_block_number;
        while (true) {
            t += exponential(brng, cfg.mean_block_interval);
            auto ts = std::max(last_ts + 1, static_cast<std::int64_t>(std::floor(t)));
            if (ts >= sim.end_time) break;
            difficulty *= 1.0 + 0.002 * standard_normal(brng);
            Block b;
            b.number = number++;
            b.timestamp = ts;
            b.difficulty = static_cast<std::int64_t>(difficulty);
            sim.blocks.push_back(std::move(b));
            last_ts = ts;
        }
    }

    // Arrivals.
    {
        auto arng = make_rng(cfg.seed, "synth.arrivals");
        auto prng = make_rng(cfg.seed, "synth.prices");
        std::vector<std::int64_t> next_nonce(static_cast<std::size_t>(cfg.issuer_pool_size), 0);
        const auto& gp = cfg.gas_price;
        double level = 0.0;
        std::int64_t level_step = 0;
        double t = static_cast<double>(t0);
        while (true) {
            t += exponential(arng, 1.0 / cfg.arrival_rate);
            const auto ts = static_cast<std::int64_t>(std::floor(t));
            if (ts >= sim.end_time) break;
            while ((ts - t0) / gp.drift_step_seconds > level_step) {
                level = gp.drift_persistence * level + gp.drift_sd * standard_normal(prng);
                ++level_step;
            }
            SimTx tx;
            // Skewed issuer choice: a few heavy senders, a long tail.
            const double u = uniform01(arng);
            tx.issuer = std::min<std::int64_t>(cfg.issuer_pool_size - 1,
                                               static_cast<std::int64_t>(u * u * u * static_cast<double>(cfg.issuer_pool_size)));
            tx.nonce = next_nonce[static_cast<std::size_t>(tx.issuer)]++;
            tx.arrival = ts;
            const double gwei = gp.median_gwei * std::exp(level + gp.sigma * standard_normal(prng));
            const double ticks = std::max(1.0, std::round(gwei / gp.tick_gwei));
            tx.price = GasPrice::from_gwei(ticks * gp.tick_gwei);
            if (uniform01(arng) < 0.5) {
                const double cu = uniform01(arng);
                const auto c = static_cast<std::int64_t>(cu * cu * static_cast<double>(cfg.contract_pool_size));
                tx.to = contract_address(std::min(c, cfg.contract_pool_size - 1));
                char sel[11];
                std::snprintf(sel, sizeof sel, "0x%08llx",
                              static_cast<unsigned long long>(splitmix64(static_cast<std::uint64_t>(c) * 4 +
                                                                         uniform_index(arng, 4)) & 0xffffffffULL));
                tx.selector = std::string(sel);
                tx.input_length = 4 + 32 * uniform_int(arng, 1, 6);
                tx.gas_limit = 1000 * uniform_int(arng, 60, 400);
                tx.gas_used = static_cast<std::int64_t>(static_cast<double>(tx.gas_limit) * (0.4 + 0.6 * uniform01(arng)));
                tx.value_eth = uniform01(arng) < 0.8 ? 0.0 : std::round(exponential(arng, 0.5) * 1e6) / 1e6;
            } else {
                tx.to = eoa_address(uniform_int(arng, 0, 1'000'000));
                tx.value_eth = std::round(exponential(arng, 1.0) * 1e6) / 1e6;
            }
            sim.txs.push_back(std::move(tx));
        }
    }

    // Mining.
    Miner miner;
    std::size_t next_arrival = 0;
    sim.block_txs.resize(sim.blocks.size());
    for (std::size_t b = 0; b < sim.blocks.size(); ++b) {
        const auto ts = sim.blocks[b].timestamp;
        while (next_arrival < sim.txs.size() && sim.txs[next_arrival].arrival <= ts) {
            const auto& tx = sim.txs[next_arrival];
            miner.submit({next_arrival, tx.issuer, tx.nonce, tx.price, tx.arrival});
            ++next_arrival;
        }
        sim.block_txs[b] = miner.mine(static_cast<std::size_t>(cfg.block_capacity));
        for (auto id : sim.block_txs[b]) sim.txs[id].block = b;
    }
    return sim;
}

std::string tx_hash(std::uint64_t seed, std::size_t id) { return hex_id('t', seed, id, 4); }

// Per-issuer clamp so nonce order never contradicts submission order.
void clamp_submissions(Simulation& sim) {
    std::unordered_map<std::int64_t, std::int64_t> last;
    std::vector<std::size_t> order;
    for (const auto& ids : sim.block_txs) order.insert(order.end(), ids.begin(), ids.end());
    // Inclusion order is nonce order per issuer.
    for (auto id : order) {
        auto& tx = sim.txs[id];
        auto it = last.find(tx.issuer);
        if (it != last.end() && tx.recorded_submission < it->second) tx.recorded_submission = it->second;
        last[tx.issuer] = tx.recorded_submission;
    }
}

// Fresh issuer identities assigned in inclusion order, so that nonce order,
// mining order and submission order always agree.
void reassign_issuers(Simulation& sim, const SynthConfig& cfg) {
    auto rng = make_rng(cfg.seed, "synth.issuers");
    std::unordered_map<std::int64_t, std::pair<std::int64_t, std::int64_t>> state;  // issuer -> (next nonce, last submission)
    std::int64_t fresh = cfg.issuer_pool_size;
    for (const auto& ids : sim.block_txs) {
        for (auto id : ids) {
            auto& tx = sim.txs[id];
            const double u = uniform01(rng);
            std::int64_t issuer = std::min<std::int64_t>(
                cfg.issuer_pool_size - 1, static_cast<std::int64_t>(u * u * u * static_cast<double>(cfg.issuer_pool_size)));
            auto it = state.find(issuer);
            if (it != state.end() && it->second.second > tx.recorded_submission) issuer = fresh++;
            auto& st = state[issuer];
            tx.issuer = issuer;
            tx.nonce = st.first++;
            st.second = tx.recorded_submission;
        }
    }
}

std::vector<double> competitiveness(const Simulation& sim, std::size_t block, GasPrice price,
                                    const std::vector<std::vector<std::int64_t>>& sorted_prices) {
    const std::size_t first = block >= features::kWindowBlocks ? block - features::kWindowBlocks : 0;
    std::vector<double> pct;
    pct.reserve(block - first);
    for (std::size_t j = first; j < block; ++j) pct.push_back(features::pricing_counts(sorted_prices[j], price).pct_below);
    (void)sim;
    return pct;
}

Dataset assemble(Simulation& sim, const SynthConfig& cfg) {
    Dataset ds;
    ds.contracts = sim.contracts;
    ds.report.warnings = sim.warnings;
    for (std::size_t b = 0; b < sim.blocks.size(); ++b) {
        Block block = sim.blocks[b];
        for (auto id : sim.block_txs[b]) {
            const auto& st = sim.txs[id];
            Transaction tx;
            tx.hash = tx_hash(cfg.seed, id);
            tx.block_number = block.number;
            tx.issuer = issuer_address(st.issuer);
            tx.nonce = st.nonce;
            tx.gas_price = st.price;
            tx.gas_limit = st.gas_limit;
            tx.gas_used = st.gas_used;
            tx.value_eth = st.value_eth;
            tx.input_length = st.input_length;
            tx.to = st.to;
            tx.function_selector = st.selector;
            tx.submission_time = st.recorded_submission;
            block.tx_hashes.push_back(tx.hash);
            ds.transactions.push_back(std::move(tx));
        }
        ds.blocks.push_back(std::move(block));
    }

    // Per-minute series: pending-pool size and fullness of the latest block.
    {
        std::vector<std::int64_t> enter, leave;
        for (const auto& tx : sim.txs) {
            if (tx.block) {
                enter.push_back(tx.recorded_submission);
                leave.push_back(sim.blocks[*tx.block].timestamp);
            } else {
                enter.push_back(tx.arrival);
            }
        }
        std::sort(enter.begin(), enter.end());
        std::sort(leave.begin(), leave.end());
        std::size_t e = 0, l = 0, b = 0;
        for (std::int64_t t = cfg.start_timestamp; t < sim.end_time; t += 60) {
            while (e < enter.size() && enter[e] <= t) ++e;
            while (l < leave.size() && leave[l] <= t) ++l;
            while (b < sim.blocks.size() && sim.blocks[b].timestamp <= t) ++b;
            ds.pending_pool.push_back({t, static_cast<double>(e - l)});
            const double util = b == 0 ? 0.0
                                       : static_cast<double>(sim.block_txs[b - 1].size()) /
                                             static_cast<double>(cfg.block_capacity);
            ds.net_util.push_back({t, util});
        }
    }
    ds.finalize();
    return ds;
}

Dataset run(const SynthConfig& cfg, Signal signal) {
    Simulation sim = simulate(cfg);
    auto noise_rng = make_rng(cfg.seed, "synth.noise");
    auto noise_seconds = [&]() -> double {
        return cfg.noise_sd > 0.0 ? 60.0 * cfg.noise_sd * standard_normal(noise_rng) : 0.0;
    };

    if (signal == Signal::queue) {
        for (std::size_t b = 0; b < sim.blocks.size(); ++b) {
            const auto ts = sim.blocks[b].timestamp;
            for (auto id : sim.block_txs[b]) {
                auto& tx = sim.txs[id];
                const double secs = static_cast<double>(ts - tx.arrival) + noise_seconds();
                tx.recorded_submission = ts - std::max<std::int64_t>(0, std::llround(secs));
            }
        }
        clamp_submissions(sim);
        return assemble(sim, cfg);
    }

    std::vector<std::vector<std::int64_t>> sorted_prices(sim.blocks.size());
    for (std::size_t b = 0; b < sim.blocks.size(); ++b) {
        for (auto id : sim.block_txs[b]) sorted_prices[b].push_back(sim.txs[id].price.wei());
        std::sort(sorted_prices[b].begin(), sorted_prices[b].end());
    }
    auto flat_rng = make_rng(cfg.seed, "synth.flat");
    for (std::size_t b = 0; b < sim.blocks.size(); ++b) {
        const auto ts = sim.blocks[b].timestamp;
        for (auto id : sim.block_txs[b]) {
            auto& tx = sim.txs[id];
            double minutes;
            if (signal == Signal::competitiveness) {
                minutes = planted_minutes(stats::median(competitiveness(sim, b, tx.price, sorted_prices)));
            } else {
                minutes = std::exp(0.5 + 0.6 * standard_normal(flat_rng));
            }
            const double secs = 60.0 * minutes + noise_seconds();
            tx.recorded_submission = ts - std::max<std::int64_t>(0, std::llround(secs));
        }
    }
    reassign_issuers(sim, cfg);
    return assemble(sim, cfg);
}

}  // namespace

Dataset generate(const SynthConfig& config) { return run(config, Signal::queue); }

Dataset plant_signal(const SynthConfig& config, Signal signal) { return run(config, signal); }

Dataset plant_signal(const SynthConfig& config, std::string_view signal) {
    return run(config, parse_signal(signal));
}

}  // namespace txtime::synth
