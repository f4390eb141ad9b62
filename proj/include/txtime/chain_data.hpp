#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace txtime {

inline constexpr std::int64_t kWeiPerGwei = 1'000'000'000;
inline constexpr std::int64_t kSecondsPerDay = 86'400;

/// Gas price in GWEI held as an integer count of wei (nine fractional digits).
class GasPrice {
  public:
    constexpr GasPrice() = default;
    static constexpr GasPrice from_wei(std::int64_t wei) { return GasPrice(wei); }
    static GasPrice from_gwei(double gwei);
    /// Parses a decimal string such as "20.5" without going through binary floating point.
    static GasPrice parse(std::string_view text);

    constexpr std::int64_t wei() const { return wei_; }
    double gwei() const { return static_cast<double>(wei_) / static_cast<double>(kWeiPerGwei); }
    std::string to_string() const;

    constexpr auto operator<=>(const GasPrice&) const = default;

  private:
    constexpr explicit GasPrice(std::int64_t wei) : wei_(wei) {}
    std::int64_t wei_ = 0;
};

struct Block {
    std::int64_t number = 0;
    std::int64_t timestamp = 0;
    std::int64_t difficulty = 0;
    std::vector<std::string> tx_hashes;
    bool operator==(const Block&) const = default;
};

struct Transaction {
    std::string hash;
    std::int64_t block_number = 0;
    std::string issuer;
    std::int64_t nonce = 0;
    GasPrice gas_price;
    std::int64_t gas_limit = 0;
    double value_eth = 0.0;
    std::int64_t input_length = 0;
    std::optional<std::string> to;
    std::optional<std::string> function_selector;
    std::int64_t submission_time = 0;
    std::optional<std::int64_t> gas_used;
    // Derived on load: block timestamp minus submission time.
    std::int64_t processing_seconds = 0;

    double processing_time_minutes() const { return static_cast<double>(processing_seconds) / 60.0; }
    std::int64_t gas_usage() const { return gas_used.value_or(gas_limit); }
    bool operator==(const Transaction&) const = default;
};

struct ContractMeta {
    std::string address;
    std::int64_t deployed_block_number = 0;
    std::int64_t bytecode_length = 0;
    bool is_erc20 = false;
    bool is_erc721 = false;
    bool operator==(const ContractMeta&) const = default;
};

struct SeriesSample {
    std::int64_t timestamp = 0;
    double value = 0.0;
    bool operator==(const SeriesSample&) const = default;
};

struct IngestionReport {
    std::size_t dropped_missing_submission = 0;
    std::size_t unlisted_block_hashes = 0;  // tx_hashes entries without a transaction record
    std::vector<std::string> warnings;
    bool operator==(const IngestionReport&) const = default;
};

/// Validated chain records. Blocks are ordered by number; transactions are
/// ordered by block, then by position within the block's tx_hashes list.
class Dataset {
  public:
    std::vector<Block> blocks;
    std::vector<Transaction> transactions;
    std::vector<ContractMeta> contracts;
    std::vector<SeriesSample> pending_pool;
    std::vector<SeriesSample> net_util;
    IngestionReport report;

    /// Sorts, derives processing times, checks every invariant and builds indexes.
    /// Throws IntegrityError / TimestampOrderError / DataError.
    void finalize();

    const Block* find_block(std::int64_t number) const;
    std::optional<std::size_t> block_index(std::int64_t number) const;
    const ContractMeta* find_contract(const std::string& address) const;
    /// Transactions of block `block_idx` as [begin, end) into `transactions`.
    std::pair<std::size_t, std::size_t> block_tx_range(std::size_t block_idx) const;
    std::size_t utc_day_count() const;

    bool same_records(const Dataset& other) const;

  private:
    std::unordered_map<std::int64_t, std::size_t> block_index_;
    std::unordered_map<std::string, std::size_t> contract_index_;
    std::vector<std::size_t> block_tx_begin_;  // size blocks+1
};

inline std::int64_t utc_day(std::int64_t timestamp) {
    return timestamp >= 0 ? timestamp / kSecondsPerDay : (timestamp - kSecondsPerDay + 1) / kSecondsPerDay;
}
/// Monday = 0 ... Sunday = 6.
inline int weekday(std::int64_t timestamp) { return static_cast<int>(((utc_day(timestamp) + 3) % 7 + 7) % 7); }
inline int hour_of_day(std::int64_t timestamp) {
    return static_cast<int>((timestamp - utc_day(timestamp) * kSecondsPerDay) / 3600);
}

struct DatasetPaths {
    std::filesystem::path blocks;
    std::filesystem::path transactions;
    std::filesystem::path contracts;
    std::filesystem::path pending_pool;
    std::filesystem::path net_util;

    /// Conventional file names inside one directory.
    static DatasetPaths in_directory(const std::filesystem::path& dir);
};

Dataset load_dataset(const DatasetPaths& paths);
void write_dataset(const Dataset& dataset, const DatasetPaths& paths);

/// Minutes between submission and inclusion. Throws DataError naming the
/// transaction when the block precedes the submission.
double processing_time_minutes(const Block& block, const Transaction& tx);

/// Cochran sample size with finite-population correction, rounded up and
/// clamped to the population.
std::size_t cochran_sample_size(std::size_t population, double confidence, double margin);

struct BlockSample {
    std::vector<std::int64_t> block_numbers;  // ascending
    std::vector<std::string> warnings;
};

/// Uniform per-UTC-day sample of block numbers, deterministic under `seed`.
BlockSample sample_blocks_per_day(const Dataset& dataset, double confidence, double margin, std::uint64_t seed);

}  // namespace txtime
