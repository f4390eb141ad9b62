#include "txtime/chain_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/math/distributions/normal.hpp>
#include <json.hpp>

#include "txtime/error.hpp"
#include "txtime/rng.hpp"

namespace txtime {

using nlohmann::json;

GasPrice GasPrice::from_gwei(double gwei) {
    if (!(gwei >= 0.0) || !std::isfinite(gwei)) throw DataError("gas price must be a finite non-negative number");
    return GasPrice(std::llround(gwei * static_cast<double>(kWeiPerGwei)));
}

GasPrice GasPrice::parse(std::string_view text) {
    const auto dot = text.find('.');
    const auto int_part = text.substr(0, dot);
    std::int64_t whole = 0;
    auto [p, ec] = std::from_chars(int_part.data(), int_part.data() + int_part.size(), whole);
    if (ec != std::errc{} || p != int_part.data() + int_part.size() || whole < 0)
        throw DataError("invalid gas price '" + std::string(text) + "'");
    std::int64_t frac = 0;
    if (dot != std::string_view::npos) {
        auto digits = text.substr(dot + 1);
        if (digits.size() > 9) throw DataError("gas price '" + std::string(text) + "' exceeds wei resolution");
        std::string padded(digits);
        padded.resize(9, '0');
        auto [q, ec2] = std::from_chars(padded.data(), padded.data() + padded.size(), frac);
        if (ec2 != std::errc{} || q != padded.data() + padded.size())
            throw DataError("invalid gas price '" + std::string(text) + "'");
    }
    return GasPrice(whole * kWeiPerGwei + frac);
}

std::string GasPrice::to_string() const {
    std::string frac = std::to_string(wei_ % kWeiPerGwei);
    frac.insert(0, 9 - frac.size(), '0');
    while (!frac.empty() && frac.back() == '0') frac.pop_back();
    std::string out = std::to_string(wei_ / kWeiPerGwei);
    if (!frac.empty()) out += "." + frac;
    return out;
}

double processing_time_minutes(const Block& block, const Transaction& tx) {
    const auto diff = block.timestamp - tx.submission_time;
    if (diff < 0)
        throw DataError("transaction " + tx.hash + " was submitted after its block " + std::to_string(block.number) +
                        " was mined");
    return static_cast<double>(diff) / 60.0;
}

void Dataset::finalize() {
    std::stable_sort(blocks.begin(), blocks.end(), [](const Block& a, const Block& b) { return a.number < b.number; });
    block_index_.clear();
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (!block_index_.emplace(blocks[i].number, i).second)
            throw IntegrityError("duplicate block number " + std::to_string(blocks[i].number));
        if (i > 0 && blocks[i].timestamp < blocks[i - 1].timestamp)
            throw TimestampOrderError("block " + std::to_string(blocks[i].number) + " has timestamp " +
                                      std::to_string(blocks[i].timestamp) + " earlier than block " +
                                      std::to_string(blocks[i - 1].number) + " (" +
                                      std::to_string(blocks[i - 1].timestamp) + ")");
    }

    // Position of each hash inside its block.
    std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> slot;
    for (std::size_t b = 0; b < blocks.size(); ++b)
        for (std::size_t k = 0; k < blocks[b].tx_hashes.size(); ++k)
            if (!slot.emplace(blocks[b].tx_hashes[k], std::make_pair(b, k)).second)
                throw IntegrityError("transaction hash " + blocks[b].tx_hashes[k] + " listed in more than one block slot");

    std::set<std::string> seen;
    for (auto& tx : transactions) {
        auto it = block_index_.find(tx.block_number);
        if (it == block_index_.end())
            throw IntegrityError("transaction " + tx.hash + " references missing block " +
                                 std::to_string(tx.block_number));
        if (!seen.insert(tx.hash).second) throw IntegrityError("duplicate transaction hash " + tx.hash);
        auto s = slot.find(tx.hash);
        if (s == slot.end() || s->second.first != it->second)
            throw IntegrityError("transaction " + tx.hash + " is not listed in block " + std::to_string(tx.block_number));
        if (tx.nonce < 0) throw IntegrityError("transaction " + tx.hash + " has a negative nonce");
        const auto& block = blocks[it->second];
        processing_time_minutes(block, tx);
        tx.processing_seconds = block.timestamp - tx.submission_time;
    }
    std::stable_sort(transactions.begin(), transactions.end(), [&](const Transaction& a, const Transaction& b) {
        return slot.at(a.hash) < slot.at(b.hash);
    });
    report.unlisted_block_hashes = slot.size() - transactions.size();

    block_tx_begin_.assign(blocks.size() + 1, 0);
    {
        std::size_t t = 0;
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            block_tx_begin_[b] = t;
            while (t < transactions.size() && block_index_.at(transactions[t].block_number) == b) ++t;
        }
        block_tx_begin_[blocks.size()] = t;
    }

    // Per issuer, nonces must increase with submission time.
    std::map<std::string, std::vector<const Transaction*>> by_issuer;
    for (const auto& tx : transactions) by_issuer[tx.issuer].push_back(&tx);
    for (auto& [issuer, txs] : by_issuer) {
        std::sort(txs.begin(), txs.end(), [](const Transaction* a, const Transaction* b) {
            return std::tie(a->submission_time, a->nonce) < std::tie(b->submission_time, b->nonce);
        });
        for (std::size_t i = 1; i < txs.size(); ++i)
            if (txs[i]->nonce <= txs[i - 1]->nonce)
                throw IntegrityError("issuer " + issuer + ": nonce " + std::to_string(txs[i]->nonce) + " (tx " +
                                     txs[i]->hash + ") submitted after nonce " + std::to_string(txs[i - 1]->nonce));
    }

    contract_index_.clear();
    for (std::size_t i = 0; i < contracts.size(); ++i) {
        if (contracts[i].bytecode_length <= 0)
            throw IntegrityError("contract " + contracts[i].address + " has non-positive bytecode length");
        if (!contract_index_.emplace(contracts[i].address, i).second)
            throw IntegrityError("duplicate contract " + contracts[i].address);
    }

    for (const auto* series : {&pending_pool, &net_util})
        for (std::size_t i = 1; i < series->size(); ++i)
            if ((*series)[i].timestamp <= (*series)[i - 1].timestamp)
                throw TimestampOrderError("series samples must have strictly increasing timestamps (at " +
                                          std::to_string((*series)[i].timestamp) + ")");
}

const Block* Dataset::find_block(std::int64_t number) const {
    auto it = block_index_.find(number);
    return it == block_index_.end() ? nullptr : &blocks[it->second];
}

std::optional<std::size_t> Dataset::block_index(std::int64_t number) const {
    auto it = block_index_.find(number);
    if (it == block_index_.end()) return std::nullopt;
    return it->second;
}

const ContractMeta* Dataset::find_contract(const std::string& address) const {
    auto it = contract_index_.find(address);
    return it == contract_index_.end() ? nullptr : &contracts[it->second];
}

std::pair<std::size_t, std::size_t> Dataset::block_tx_range(std::size_t block_idx) const {
    return {block_tx_begin_[block_idx], block_tx_begin_[block_idx + 1]};
}

std::size_t Dataset::utc_day_count() const {
    std::set<std::int64_t> days;
    for (const auto& b : blocks) days.insert(utc_day(b.timestamp));
    return days.size();
}

bool Dataset::same_records(const Dataset& other) const {
    return blocks == other.blocks && transactions == other.transactions && contracts == other.contracts &&
           pending_pool == other.pending_pool && net_util == other.net_util;
}

DatasetPaths DatasetPaths::in_directory(const std::filesystem::path& dir) {
    return {dir / "blocks.jsonl", dir / "transactions.jsonl", dir / "contracts.jsonl", dir / "pending_pool.csv",
            dir / "net_util.csv"};
}

namespace {

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json record;
        try {
            record = json::parse(line);
            fn(record);
        } catch (const json::exception& e) {
            throw ParseError(path.string(), number, e.what());
        } catch (const ParseError&) {
            throw;
        } catch (const DataError& e) {
            throw ParseError(path.string(), number, e.what());
        }
    }
}

std::optional<std::string> optional_string(const json& record, const char* key) {
    auto it = record.find(key);
    if (it == record.end() || it->is_null()) return std::nullopt;
    return it->get<std::string>();
}

std::vector<SeriesSample> read_series(const std::filesystem::path& path) {
    std::vector<SeriesSample> out;
    if (path.empty()) return out;
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (number == 1) continue;  // header
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ParseError(path.string(), number, "expected 'timestamp,value'");
        SeriesSample s;
        const char* begin = line.data();
        auto [p1, e1] = std::from_chars(begin, begin + comma, s.timestamp);
        auto [p2, e2] = std::from_chars(begin + comma + 1, begin + line.size(), s.value);
        if (e1 != std::errc{} || p1 != begin + comma || e2 != std::errc{} || p2 != begin + line.size())
            throw ParseError(path.string(), number, "malformed series row '" + line + "'");
        out.push_back(s);
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

void write_series(const std::vector<SeriesSample>& series, const std::filesystem::path& path) {
    std::ofstream out(path);
    out << "timestamp,value\n";
    for (const auto& s : series) out << s.timestamp << ',' << format_double(s.value) << '\n';
}

}  // namespace

Dataset load_dataset(const DatasetPaths& paths) {
    Dataset ds;
    for_each_json_line(paths.blocks, [&](const json& r) {
        Block b;
        b.number = r.at("number").get<std::int64_t>();
        b.timestamp = r.at("timestamp").get<std::int64_t>();
        b.difficulty = r.at("difficulty").get<std::int64_t>();
        if (b.difficulty < 0) throw DataError("negative difficulty");
        b.tx_hashes = r.at("tx_hashes").get<std::vector<std::string>>();
        ds.blocks.push_back(std::move(b));
    });
    for_each_json_line(paths.transactions, [&](const json& r) {
        auto sub = r.find("submission_time");
        if (sub == r.end() || sub->is_null()) {
            ++ds.report.dropped_missing_submission;
            return;
        }
        Transaction tx;
        tx.hash = r.at("hash").get<std::string>();
        tx.block_number = r.at("block_number").get<std::int64_t>();
        tx.issuer = r.at("issuer").get<std::string>();
        tx.nonce = r.at("nonce").get<std::int64_t>();
        const auto& price = r.at("gas_price_gwei");
        tx.gas_price = price.is_string() ? GasPrice::parse(price.get<std::string>())
                                         : GasPrice::from_gwei(price.get<double>());
        tx.gas_limit = r.at("gas_limit").get<std::int64_t>();
        tx.value_eth = r.at("value_eth").get<double>();
        tx.input_length = r.at("input_length").get<std::int64_t>();
        tx.to = optional_string(r, "to");
        tx.function_selector = optional_string(r, "function_selector");
        tx.submission_time = sub->get<std::int64_t>();
        if (auto g = r.find("gas_used"); g != r.end() && !g->is_null()) tx.gas_used = g->get<std::int64_t>();
        ds.transactions.push_back(std::move(tx));
    });
    if (!paths.contracts.empty() && std::filesystem::exists(paths.contracts)) {
        for_each_json_line(paths.contracts, [&](const json& r) {
            ContractMeta c;
            c.address = r.at("address").get<std::string>();
            c.deployed_block_number = r.at("deployed_block_number").get<std::int64_t>();
            c.bytecode_length = r.at("bytecode_length").get<std::int64_t>();
            c.is_erc20 = r.at("is_erc20").get<bool>();
            c.is_erc721 = r.at("is_erc721").get<bool>();
            ds.contracts.push_back(std::move(c));
        });
    }
    ds.pending_pool = read_series(paths.pending_pool);
    ds.net_util = read_series(paths.net_util);
    if (ds.report.dropped_missing_submission > 0)
        ds.report.warnings.push_back(std::to_string(ds.report.dropped_missing_submission) +
                                     " transactions dropped: missing submission_time");
    ds.finalize();
    return ds;
}

void write_dataset(const Dataset& ds, const DatasetPaths& paths) {
    {
        std::ofstream out(paths.blocks);
        for (const auto& b : ds.blocks)
            out << json{{"number", b.number}, {"timestamp", b.timestamp}, {"difficulty", b.difficulty},
                        {"tx_hashes", b.tx_hashes}}
                       .dump()
                << '\n';
    }
    {
        std::ofstream out(paths.transactions);
        for (const auto& tx : ds.transactions) {
            json r{{"hash", tx.hash},
                   {"block_number", tx.block_number},
                   {"issuer", tx.issuer},
                   {"nonce", tx.nonce},
                   {"gas_price_gwei", tx.gas_price.gwei()},
                   {"gas_limit", tx.gas_limit},
                   {"value_eth", tx.value_eth},
                   {"input_length", tx.input_length},
                   {"to", tx.to ? json(*tx.to) : json(nullptr)},
                   {"function_selector", tx.function_selector ? json(*tx.function_selector) : json(nullptr)},
                   {"submission_time", tx.submission_time}};
            if (tx.gas_used) r["gas_used"] = *tx.gas_used;
            out << r.dump() << '\n';
        }
    }
    {
        std::ofstream out(paths.contracts);
        for (const auto& c : ds.contracts)
            out << json{{"address", c.address},
                        {"deployed_block_number", c.deployed_block_number},
                        {"bytecode_length", c.bytecode_length},
                        {"is_erc20", c.is_erc20},
                        {"is_erc721", c.is_erc721}}
                       .dump()
                << '\n';
    }
    write_series(ds.pending_pool, paths.pending_pool);
    write_series(ds.net_util, paths.net_util);
}

std::size_t cochran_sample_size(std::size_t population, double confidence, double margin) {
    if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("sampling confidence must lie in (0,1)");
    if (!(margin > 0.0 && margin < 1.0)) throw ConfigError("sampling margin must lie in (0,1)");
    if (population == 0) return 0;
    const boost::math::normal standard;
    const double z = boost::math::quantile(standard, 1.0 - (1.0 - confidence) / 2.0);
    const double n0 = z * z * 0.25 / (margin * margin);
    const double n = n0 / (1.0 + (n0 - 1.0) / static_cast<double>(population));
    // Guard against representation error pushing an exact integer over.
    const auto rounded = static_cast<std::size_t>(std::ceil(n - 1e-9));
    return std::min(population, std::max<std::size_t>(1, rounded));
}

BlockSample sample_blocks_per_day(const Dataset& dataset, double confidence, double margin, std::uint64_t seed) {
    std::map<std::int64_t, std::vector<std::int64_t>> by_day;
    for (const auto& b : dataset.blocks) by_day[utc_day(b.timestamp)].push_back(b.number);
    BlockSample out;
    if (by_day.empty()) return out;
    const auto first = by_day.begin()->first;
    const auto last = by_day.rbegin()->first;
    for (auto day = first; day <= last; ++day) {
        auto it = by_day.find(day);
        if (it == by_day.end()) {
            out.warnings.push_back("UTC day " + std::to_string(day) + " has no blocks; skipped");
            continue;
        }
        auto population = it->second;
        const auto n = cochran_sample_size(population.size(), confidence, margin);
        auto rng = make_rng(seed, "sample_blocks", static_cast<std::uint64_t>(day));
        // Partial Fisher-Yates.
        for (std::size_t i = 0; i < n; ++i) {
            const auto j = i + uniform_index(rng, population.size() - i);
            std::swap(population[i], population[j]);
        }
        out.block_numbers.insert(out.block_numbers.end(), population.begin(),
                                 population.begin() + static_cast<std::ptrdiff_t>(n));
    }
    std::sort(out.block_numbers.begin(), out.block_numbers.end());
    return out;
}

}  // namespace txtime
