#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "txtime/chain_data.hpp"
#include "txtime/feature_matrix.hpp"
#include "txtime/rng.hpp"
#include "txtime/synth_chain.hpp"

namespace fixtures {

// Five-minute blocks so a few hundred blocks cross a UTC day boundary.
inline txtime::synth::SynthConfig slow_chain(std::int64_t days, std::uint64_t seed = 11) {
    txtime::synth::SynthConfig c;
    c.n_days = days;
    c.mean_block_interval = 300.0;
    c.block_capacity = 8;
    c.arrival_rate = 0.024;
    c.issuer_pool_size = 300;
    c.contract_pool_size = 20;
    c.noise_sd = 0.3;
    c.seed = seed;
    return c;
}

// First `n` blocks of a dataset with everything that depends on them.
inline txtime::Dataset truncate_blocks(const txtime::Dataset& ds, std::size_t n) {
    txtime::Dataset out;
    out.contracts = ds.contracts;
    out.blocks.assign(ds.blocks.begin(), ds.blocks.begin() + static_cast<std::ptrdiff_t>(std::min(n, ds.blocks.size())));
    const auto last = out.blocks.back().number;
    const auto end_ts = out.blocks.back().timestamp;
    for (const auto& tx : ds.transactions)
        if (tx.block_number <= last) out.transactions.push_back(tx);
    for (const auto& s : ds.pending_pool)
        if (s.timestamp <= end_ts) out.pending_pool.push_back(s);
    for (const auto& s : ds.net_util)
        if (s.timestamp <= end_ts) out.net_util.push_back(s);
    out.finalize();
    return out;
}

inline txtime::Dataset chain_500(txtime::synth::Signal signal = txtime::synth::Signal::queue, std::uint64_t seed = 11) {
    return truncate_blocks(txtime::synth::plant_signal(slow_chain(2, seed), signal), 500);
}

// Rows r0..r(n-1), all on block 0 / day 0; target defaults to ones.
inline txtime::FeatureMatrix make_matrix(const std::vector<std::string>& names,
                                         const std::vector<std::vector<double>>& cols, std::vector<double> target = {}) {
    const auto n = cols.empty() ? target.size() : cols.front().size();
    txtime::FeatureMatrix m(names, std::vector<txtime::Dimension>(names.size(), txtime::Dimension::pricing));
    std::vector<std::string> keys;
    std::vector<double> values;
    for (std::size_t r = 0; r < n; ++r) keys.push_back("r" + std::to_string(r));
    for (const auto& c : cols) values.insert(values.end(), c.begin(), c.end());
    if (target.empty()) target.assign(n, 1.0);
    m.assign(keys, std::vector<std::int64_t>(n, 0), std::vector<std::int64_t>(n, 0), values, target);
    return m;
}

class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("txtime_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

  private:
    std::filesystem::path path_;
};

}  // namespace fixtures
