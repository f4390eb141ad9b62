#pragma once

#include <cstdint>
#include <optional>
#include <queue>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "txtime/chain_data.hpp"

namespace txtime::synth {

struct GasPriceModel {
    std::string family = "lognormal";
    double median_gwei = 20.0;
    double sigma = 0.5;  // log-scale spread of individual prices
    // Market level: hourly AR(1) on the log median.
    double drift_sd = 0.15;
    double drift_persistence = 0.97;
    std::int64_t drift_step_seconds = 3600;
    double tick_gwei = 0.1;  // prices rounded to this tick
};

enum class Signal { queue, competitiveness, flat };
std::string_view to_string(Signal s);
/// Throws ConfigError on an unknown name.
Signal parse_signal(std::string_view name);

struct SynthConfig {
    std::int64_t n_days = 31;
    double mean_block_interval = 15.0;  // seconds
    std::int64_t block_capacity = 10;   // transactions per block
    double arrival_rate = 0.5;          // transactions per second
    GasPriceModel gas_price;
    std::int64_t issuer_pool_size = 2000;
    std::int64_t contract_pool_size = 200;
    double noise_sd = 0.0;  // minutes
    std::uint64_t seed = 1;
    std::int64_t start_timestamp = 1535760000;  // 2018-09-01T00:00:00Z
    std::int64_t first_block_number = 6'250'000;

    /// Throws ConfigError naming the offending field.
    void validate() const;
};

/// Pending transaction as seen by the miner.
struct PendingTx {
    std::size_t id = 0;
    std::int64_t issuer = 0;
    std::int64_t nonce = 0;
    GasPrice price;
    std::int64_t arrival = 0;
};

/// Strict gas-price-priority miner. A transaction is eligible once every
/// lower nonce of its issuer has been mined; among eligible transactions the
/// highest price wins, ties by earlier arrival.
class Miner {
  public:
    /// Submissions must arrive in non-decreasing arrival time.
    void submit(const PendingTx& tx);
    /// Expected next nonce for an issuer (defaults to 0).
    void set_account_nonce(std::int64_t issuer, std::int64_t nonce);
    /// Ids of included transactions in inclusion order.
    std::vector<std::size_t> mine(std::size_t capacity);
    std::size_t pending_count() const { return pending_; }

  private:
    struct Order {
        bool operator()(const PendingTx& a, const PendingTx& b) const {
            if (a.price != b.price) return a.price < b.price;
            if (a.arrival != b.arrival) return a.arrival > b.arrival;
            return a.id > b.id;
        }
    };
    std::priority_queue<PendingTx, std::vector<PendingTx>, Order> eligible_;
    std::unordered_map<std::int64_t, std::int64_t> next_nonce_;
    std::unordered_map<std::int64_t, std::unordered_map<std::int64_t, PendingTx>> waiting_;
    std::size_t pending_ = 0;
};

/// Processing time (minutes) the competitiveness signal assigns to a
/// transaction whose median per-block fraction of cheaper recent transactions is `c`.
double planted_minutes(double competitiveness);

/// Queue simulation: processing times emerge from price-priority mining.
Dataset generate(const SynthConfig& config);

/// Same block contents, with the target overwritten by the named law.
Dataset plant_signal(const SynthConfig& config, Signal signal);
Dataset plant_signal(const SynthConfig& config, std::string_view signal);

}  // namespace txtime::synth
