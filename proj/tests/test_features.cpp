#include <doctest.h>

#include <algorithm>
#include <set>
#include <tuple>

#include "oracles/naive_features.hpp"
#include "support/fixtures.hpp"
#include "txtime/error.hpp"
#include "txtime/features.hpp"

using namespace txtime;
using namespace txtime::features;

namespace {

std::vector<std::int64_t> gwei(std::initializer_list<double> v) {
    std::vector<std::int64_t> out;
    for (double x : v) out.push_back(GasPrice::from_gwei(x).wei());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST_CASE("catalog groups columns by dimension") {
    CHECK(catalog().size() == 75);
    CHECK(feature_names(Dimension::contextual).size() == 9);
    CHECK(feature_names(Dimension::behavioral).size() == 5);
    CHECK(feature_names(Dimension::historical).size() == 20);
    CHECK(feature_names(Dimension::pricing).size() == 41);
    const auto names = all_feature_names();
    CHECK(std::set<std::string>(names.begin(), names.end()).size() == names.size());
    CHECK(spec("med_pct_below_120").window == Window::prev_120);
    CHECK(spec("avg_gas_price_gwei_prev_day").window == Window::prev_day);
    CHECK(spec("total_txs_1").window == Window::prev_1);
    CHECK_THROWS_AS(spec("no_such_feature"), ConfigError);
}

TEST_CASE("pricing counts") {
    const auto c = pricing_counts(gwei({5, 5, 7}), GasPrice::from_gwei(5));
    CHECK(c.above == 1);
    CHECK(c.same == 2);
    CHECK(c.below == 0);
    CHECK(c.pct_above == 1.0 / 3.0);
    CHECK(c.pct_same == 2.0 / 3.0);
    CHECK(c.pct_below == 0.0);
    CHECK(pricing_counts({}, GasPrice::from_gwei(5)) == PricingCounts{});
    const auto d = pricing_counts(gwei({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}), GasPrice::from_gwei(10));
    CHECK(d.above == 0);
    CHECK(d.below == 9);
    const auto e = pricing_counts(gwei({1, 2, 3}), GasPrice::from_gwei(2));
    CHECK(e.above == 1);
    CHECK(e.same == 1);
    CHECK(e.below == 1);
    CHECK(e.pct_below == 1.0 / 3.0);
}

TEST_CASE("gas price category") {
    std::vector<std::int64_t> window;
    for (int i = 1; i <= 100; ++i) window.push_back(GasPrice::from_gwei(i).wei());
    CHECK(gas_price_category(window, GasPrice::from_gwei(50)) == 2);
    CHECK(gas_price_category(window, GasPrice::from_gwei(0.5)) == 0);
    CHECK(gas_price_category(window, GasPrice::from_gwei(101)) == 4);
    CHECK(gas_price_category(window, GasPrice::from_gwei(100)) == 4);
    CHECK(gas_price_category(window, GasPrice::from_gwei(20)) == 0);
    CHECK(gas_price_category(window, GasPrice::from_gwei(21)) == 1);
}

TEST_CASE("similar price times") {
    std::vector<ProcessedTx> one{{GasPrice::from_gwei(3).wei(), 0, 0, 90}};
    const auto s = similar_price_times(one, GasPrice::from_gwei(10));
    CHECK(s.past_avg_time == 1.5);
    CHECK(s.past_med_time == 1.5);
    CHECK(s.past_std_time == 0.0);
    CHECK(s.closest_tx_pr_time == 1.5);

    // Equidistant above and below: the later block is closer.
    std::vector<ProcessedTx> tie{{GasPrice::from_gwei(4).wei(), 7, 0, 60}, {GasPrice::from_gwei(6).wei(), 3, 0, 600}};
    CHECK(similar_price_times(tie, GasPrice::from_gwei(5)).closest_tx_pr_time == 1.0);
    std::vector<ProcessedTx> tie2{{GasPrice::from_gwei(4).wei(), 2, 5, 60}, {GasPrice::from_gwei(6).wei(), 3, 0, 600}};
    CHECK(similar_price_times(tie2, GasPrice::from_gwei(5)).closest_tx_pr_time == 10.0);
    CHECK(similar_price_times({}, GasPrice::from_gwei(5)) == SimilarPriceTimes{});
}

TEST_CASE("similar price selection equals a brute-force sort") {
    auto rng = make_rng(17, "similar");
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<ProcessedTx> window;
        for (std::size_t i = 0; i < 150; ++i)
            window.push_back({static_cast<std::int64_t>(uniform_int(rng, 1, 40)) * 100'000'000, uniform_index(rng, 120),
                              i, uniform_int(rng, 0, 900)});
        std::sort(window.begin(), window.end(), [](const ProcessedTx& a, const ProcessedTx& b) {
            return std::tie(a.price_wei, a.block_index, a.intra_index) < std::tie(b.price_wei, b.block_index, b.intra_index);
        });
        const auto price = GasPrice::from_wei(uniform_int(rng, 0, 45) * 100'000'000);
        std::vector<std::size_t> brute(window.size());
        for (std::size_t i = 0; i < brute.size(); ++i) brute[i] = i;
        auto dist = [&](std::size_t i) { return std::abs(window[i].price_wei - price.wei()); };
        std::sort(brute.begin(), brute.end(), [&](std::size_t a, std::size_t b) {
            if (dist(a) != dist(b)) return dist(a) < dist(b);
            return std::tie(window[a].block_index, window[a].intra_index) >
                   std::tie(window[b].block_index, window[b].intra_index);
        });
        brute.resize(100);
        CHECK(select_similar(window, price, 100) == brute);
    }
}

TEST_CASE("issuer pending features") {
    CHECK(issuer_pending_features({}) == PendingFeatures{});
    const std::vector<std::int64_t> two{GasPrice::from_gwei(10).wei(), GasPrice::from_gwei(30).wei()};
    CHECK(issuer_pending_features(two) == PendingFeatures{2, 20, 20, 10});
    const std::vector<std::int64_t> one{GasPrice::from_gwei(7).wei()};
    CHECK(issuer_pending_features(one) == PendingFeatures{1, 7, 7, 0});
}

TEST_CASE("rows exclude warmup blocks and the first day") {
    const auto ds = fixtures::chain_500();
    BuildReport rep;
    const auto m = build_feature_matrix(ds, all_feature_names(), {}, &rep);
    const auto first_day = utc_day(ds.blocks.front().timestamp);
    std::size_t expected = 0, warm = 0, first = 0;
    for (std::size_t b = 0; b < ds.blocks.size(); ++b) {
        const auto [lo, hi] = ds.block_tx_range(b);
        if (b < kWindowBlocks) warm += hi - lo;
        else if (utc_day(ds.blocks[b].timestamp) == first_day) first += hi - lo;
        else expected += hi - lo;
    }
    CHECK(m.rows() == expected);
    CHECK(rep.rows == expected);
    CHECK(rep.excluded_warmup == warm);
    CHECK(rep.excluded_first_day == first);
    CHECK(m.rows() > 500);
    for (std::size_t c = 0; c < m.cols(); ++c) {
        const auto& name = m.names()[c];
        for (double v : m.column(c)) {
            if (name.find("pct_") != std::string::npos && name.rfind("std_", 0) != 0) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
            if (name.rfind("std_", 0) == 0 || name.find("_std_") != std::string::npos) CHECK(v >= 0.0);
        }
    }
}

TEST_CASE("incremental features equal the naive recomputation") {
    for (auto signal : {synth::Signal::queue, synth::Signal::competitiveness}) {
        const auto ds = fixtures::chain_500(signal);
        const auto m = build_feature_matrix(ds, all_feature_names());
        std::unordered_map<std::string, std::size_t> by_hash;
        for (std::size_t t = 0; t < ds.transactions.size(); ++t) by_hash[ds.transactions[t].hash] = t;
        std::size_t mismatches = 0;
        // Every fifth row keeps the unit suite quick; the acceptance run checks them all.
        for (std::size_t r = 0; r < m.rows(); r += 5) {
            const auto expected = oracle::naive_row(ds, by_hash.at(m.row_keys()[r]));
            for (std::size_t c = 0; c < m.cols(); ++c)
                if (m.at(r, c) != expected.at(m.names()[c])) {
                    if (mismatches++ < 5)
                        MESSAGE(m.row_keys()[r] << " " << m.names()[c] << ": " << m.at(r, c) << " vs "
                                                << expected.at(m.names()[c]));
                }
        }
        CHECK(mismatches == 0);
    }
}

TEST_CASE("serial and parallel builds agree") {
    const auto ds = fixtures::chain_500();
    BuildOptions serial;
    serial.parallel = false;
    CHECK(build_feature_matrix(ds, all_feature_names(), serial) == build_feature_matrix(ds, all_feature_names()));
}

TEST_CASE("column selection and sampled blocks") {
    const auto ds = fixtures::chain_500();
    const auto m = build_feature_matrix(ds, {"hour", "med_pct_below_120"});
    CHECK(m.cols() == 2);
    CHECK(m.dimensions()[1] == Dimension::pricing);
    BuildOptions opt;
    opt.sampled_blocks = {ds.blocks[400].number, ds.blocks[450].number};
    const auto s = build_feature_matrix(ds, {"hour"}, opt);
    const auto [a0, a1] = ds.block_tx_range(400);
    const auto [b0, b1] = ds.block_tx_range(450);
    CHECK(s.rows() == (a1 - a0) + (b1 - b0));
    CHECK_THROWS_AS(build_feature_matrix(ds, {"bogus"}), ConfigError);
}

TEST_CASE("empty windows read zero") {
    Dataset ds;
    const std::int64_t t0 = 1535760000;
    for (std::int64_t i = 0; i < 122; ++i) ds.blocks.push_back({i, t0 + 86400 + i, 1, {}});
    ds.blocks.back().tx_hashes = {"t"};
    Transaction tx;
    tx.hash = "t";
    tx.block_number = 121;
    tx.issuer = "i";
    tx.gas_price = GasPrice::from_gwei(5);
    tx.submission_time = t0 + 86400 + 100;
    ds.transactions.push_back(tx);
    ds.blocks.front().timestamp = t0;  // first day holds only block 0
    ds.finalize();
    const auto m = build_feature_matrix(ds, all_feature_names());
    REQUIRE(m.rows() == 1);
    for (std::size_t c = 0; c < m.cols(); ++c) {
        const auto& n = m.names()[c];
        if (n.find("_120") != std::string::npos && (n.find("num_") != std::string::npos || n.find("pct_") != std::string::npos))
            CHECK(m.at(0, c) == 0.0);
    }
    CHECK(m.at(0, m.require("to_contract")) == 0.0);
    CHECK(m.at(0, m.require("contract_bytecode_length")) == 0.0);
    CHECK(m.at(0, m.require("contract_block_number")) == 0.0);
    CHECK(m.at(0, m.require("is_erc20")) == 0.0);
    CHECK(m.at(0, m.require("is_erc721")) == 0.0);
    CHECK(m.at(0, m.require("gas_price_cat_enc")) == 0.0);
    CHECK(m.at(0, m.require("num_pending")) == 0.0);
}

TEST_CASE("later blocks do not leak into a row") {
    auto ds = fixtures::chain_500();
    const auto base = build_feature_matrix(ds, all_feature_names());
    const std::size_t cut = 430;
    const auto cut_number = ds.blocks[cut].number;
    // Rows strictly before the cut block.
    std::vector<std::size_t> before;
    for (std::size_t r = 0; r < base.rows(); ++r)
        if (base.block_numbers()[r] < cut_number) before.push_back(r);
    REQUIRE(!before.empty());

    auto rng = make_rng(99, "perturb");
    for (auto& tx : ds.transactions) {
        if (tx.block_number < cut_number) continue;
        tx.gas_price = GasPrice::from_wei(tx.gas_price.wei() + uniform_int(rng, 1, 50) * 100'000'000);
        tx.gas_used = uniform_int(rng, 21000, 90000);
    }
    for (std::size_t b = cut; b < ds.blocks.size(); ++b) {
        ds.blocks[b].difficulty += uniform_int(rng, 1, 1000);
        ds.blocks[b].timestamp += 7;
    }
    ds.finalize();
    const auto after = build_feature_matrix(ds, all_feature_names());
    CHECK(after.select_rows(before) == base.select_rows(before));
}

TEST_CASE("feature matrix csv round trip") {
    fixtures::TempDir dir("matrix");
    const auto m = build_feature_matrix(fixtures::chain_500(), all_feature_names());
    write_matrix(m, dir.path() / "features.csv");
    CHECK(std::filesystem::exists(sidecar_path(dir.path() / "features.csv")));
    CHECK(read_matrix(dir.path() / "features.csv") == m);
}
