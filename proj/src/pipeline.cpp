#include "txtime/pipeline.hpp"

#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "txtime/chain_data.hpp"
#include "txtime/explain.hpp"
#include "txtime/features.hpp"
#include "txtime/forest.hpp"
#include "txtime/parallel.hpp"
#include "txtime/tree_shap.hpp"

namespace txtime::pipeline {

// ---------------------------------------------------------------- config

namespace {

class Reader {
  public:
    Reader(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
        if (node_ && !node_.IsNull() && !node_.IsMap()) throw ConfigError(where() + ": expected a mapping");
    }

    bool has(const std::string& key) const { return node_ && node_.IsMap() && node_[key]; }

    Reader child(const std::string& key) const { return {has(key) ? node_[key] : YAML::Node(), join(key)}; }

    template <typename T>
    void read(const std::string& key, T& out) const {
        if (!has(key)) return;
        try {
            out = node_[key].as<T>();
        } catch (const YAML::Exception&) {
            throw ConfigError(join(key) + ": cannot read value '" + YAML::Dump(node_[key]) + "'");
        }
    }

    template <typename T>
    std::optional<std::vector<T>> list(const std::string& key) const {
        if (!has(key)) return std::nullopt;
        if (!node_[key].IsSequence()) throw ConfigError(join(key) + ": expected a list");
        try {
            return node_[key].as<std::vector<T>>();
        } catch (const YAML::Exception&) {
            throw ConfigError(join(key) + ": cannot read list");
        }
    }

    void allow(std::initializer_list<std::string_view> keys) const {
        if (!node_ || !node_.IsMap()) return;
        for (const auto& kv : node_) {
            const auto k = kv.first.as<std::string>();
            if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw ConfigError(join(k) + ": unknown field");
        }
    }

    std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  private:
    std::string where() const { return path_.empty() ? "config" : path_; }
    YAML::Node node_;
    std::string path_;
};

std::vector<Dimension> dimensions(const std::vector<std::string>& names, const std::string& field) {
    std::vector<Dimension> out;
    for (const auto& n : names) {
        try {
            out.push_back(parse_dimension(n));
        } catch (const Error&) {
            throw ConfigError(field + ": unknown dimension '" + n + "'");
        }
    }
    return out;
}

std::vector<std::string> dimension_names(const std::vector<Dimension>& dims) {
    std::vector<std::string> out;
    for (auto d : dims) out.emplace_back(to_string(d));
    return out;
}

void in_unit_interval(double v, const std::string& field) {
    if (!(v > 0.0 && v < 1.0)) throw ConfigError(field + ": must lie in (0,1), got " + std::to_string(v));
}

}  // namespace

void RunConfig::validate() const {
    in_unit_interval(screening.correlation_threshold, "screening.rho");
    in_unit_interval(screening.r2_threshold, "screening.r2");
    in_unit_interval(confidence, "sampling.confidence");
    in_unit_interval(margin, "sampling.margin");
    if (threads < 0) throw ConfigError("threads: must be >= 0");
    if (source == Source::files && dataset_dir.empty()) throw ConfigError("input.dataset_dir: required when source is files");
    if (source == Source::synth) synth.validate();
    split.validate();
    space.validate();
    if (explain.pdp_grid < 1) throw ConfigError("explain.pdp_grid: must be >= 1");
    if (explain.interaction_samples < 1) throw ConfigError("explain.interaction_samples: must be >= 1");
    if (baseline && baseline_omit.empty()) throw ConfigError("protocol.baseline_omit: empty");
}

nlohmann::json RunConfig::canonical() const {
    const auto& g = synth.gas_price;
    std::vector<std::vector<std::string>> pairs;
    for (const auto& [a, b] : explain.interaction_pairs) pairs.push_back({a, b});
    return {{"seed", seed},
            {"input", {{"source", source == Source::synth ? "synth" : "files"}, {"dataset_dir", dataset_dir.string()}}},
            {"synth",
             {{"n_days", synth.n_days},
              {"mean_block_interval", synth.mean_block_interval},
              {"block_capacity", synth.block_capacity},
              {"arrival_rate", synth.arrival_rate},
              {"issuer_pool_size", synth.issuer_pool_size},
              {"contract_pool_size", synth.contract_pool_size},
              {"noise_sd", synth.noise_sd},
              {"start_timestamp", synth.start_timestamp},
              {"first_block_number", synth.first_block_number},
              {"signal", std::string(synth::to_string(signal))},
              {"gas_price",
               {{"family", g.family},
                {"median_gwei", g.median_gwei},
                {"sigma", g.sigma},
                {"drift_sd", g.drift_sd},
                {"drift_persistence", g.drift_persistence},
                {"drift_step_seconds", g.drift_step_seconds},
                {"tick_gwei", g.tick_gwei}}}}},
            {"sampling", {{"enabled", sampling}, {"confidence", confidence}, {"margin", margin}}},
            {"screening", {{"rho", screening.correlation_threshold}, {"r2", screening.r2_threshold}}},
            {"protocol",
             {{"train_days", split.train_days},
              {"validation_days", split.validation_days},
              {"test_days", split.test_days},
              {"bootstrap_count", split.bootstrap_count},
              {"search_iterations", split.search_iterations},
              {"reduced", split.reduced},
              {"train_fraction", split.train_fraction},
              {"validation_fraction", split.validation_fraction},
              {"baseline", baseline},
              {"baseline_omit", dimension_names(baseline_omit)},
              {"space", protocol::to_json(space)}}},
            {"explain",
             {{"rank", explain.rank},
              {"pdp", explain.pdp},
              {"pdp_top", explain.pdp_top},
              {"pdp_grid", explain.pdp_grid},
              {"pdp_svg", explain.pdp_svg},
              {"interaction_pairs", pairs},
              {"interaction_samples", explain.interaction_samples},
              {"interaction_rows", explain.interaction_rows},
              {"waterfall_txs", explain.waterfall_txs},
              {"waterfall_rows", explain.waterfall_rows},
              {"waterfall_top", explain.waterfall_top},
              {"chunk", dimension_names(explain.chunk)}}}};
}

std::string RunConfig::hash() const { return sha256_hex(canonical().dump()); }

RunConfig parse_config(const std::string& yaml_text) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    RunConfig c;
    Reader r(root, "");
    r.allow({"seed", "output_dir", "threads", "input", "synth", "sampling", "screening", "protocol", "explain"});
    r.read("seed", c.seed);
    std::string out;
    r.read("output_dir", out);
    if (!out.empty()) c.output_dir = out;
    r.read("threads", c.threads);

    const auto in = r.child("input");
    in.allow({"source", "dataset_dir"});
    std::string source = "synth", dir;
    in.read("source", source);
    in.read("dataset_dir", dir);
    if (source == "synth")
        c.source = RunConfig::Source::synth;
    else if (source == "files")
        c.source = RunConfig::Source::files;
    else
        throw ConfigError("input.source: expected synth or files, got '" + source + "'");
    c.dataset_dir = dir;

    const auto s = r.child("synth");
    s.allow({"n_days", "mean_block_interval", "block_capacity", "arrival_rate", "issuer_pool_size", "contract_pool_size",
             "noise_sd", "start_timestamp", "first_block_number", "signal", "gas_price"});
    s.read("n_days", c.synth.n_days);
    s.read("mean_block_interval", c.synth.mean_block_interval);
    s.read("block_capacity", c.synth.block_capacity);
    s.read("arrival_rate", c.synth.arrival_rate);
    s.read("issuer_pool_size", c.synth.issuer_pool_size);
    s.read("contract_pool_size", c.synth.contract_pool_size);
    s.read("noise_sd", c.synth.noise_sd);
    s.read("start_timestamp", c.synth.start_timestamp);
    s.read("first_block_number", c.synth.first_block_number);
    std::string signal(synth::to_string(c.signal));
    s.read("signal", signal);
    try {
        c.signal = synth::parse_signal(signal);
    } catch (const Error&) {
        throw ConfigError("synth.signal: unknown signal '" + signal + "'");
    }
    const auto g = s.child("gas_price");
    g.allow({"family", "median_gwei", "sigma", "drift_sd", "drift_persistence", "drift_step_seconds", "tick_gwei"});
    g.read("family", c.synth.gas_price.family);
    g.read("median_gwei", c.synth.gas_price.median_gwei);
    g.read("sigma", c.synth.gas_price.sigma);
    g.read("drift_sd", c.synth.gas_price.drift_sd);
    g.read("drift_persistence", c.synth.gas_price.drift_persistence);
    g.read("drift_step_seconds", c.synth.gas_price.drift_step_seconds);
    g.read("tick_gwei", c.synth.gas_price.tick_gwei);

    const auto smp = r.child("sampling");
    smp.allow({"enabled", "confidence", "margin"});
    smp.read("enabled", c.sampling);
    smp.read("confidence", c.confidence);
    smp.read("margin", c.margin);

    const auto scr = r.child("screening");
    scr.allow({"rho", "r2"});
    scr.read("rho", c.screening.correlation_threshold);
    scr.read("r2", c.screening.r2_threshold);

    const auto p = r.child("protocol");
    p.allow({"train_days", "validation_days", "test_days", "bootstrap_count", "search_iterations", "reduced",
             "train_fraction", "validation_fraction", "baseline", "baseline_omit", "space"});
    p.read("train_days", c.split.train_days);
    p.read("validation_days", c.split.validation_days);
    p.read("test_days", c.split.test_days);
    p.read("bootstrap_count", c.split.bootstrap_count);
    p.read("search_iterations", c.split.search_iterations);
    p.read("reduced", c.split.reduced);
    p.read("train_fraction", c.split.train_fraction);
    p.read("validation_fraction", c.split.validation_fraction);
    p.read("baseline", c.baseline);
    if (auto omit = p.list<std::string>("baseline_omit")) c.baseline_omit = dimensions(*omit, "protocol.baseline_omit");
    const auto sp = p.child("space");
    sp.allow({"tree_count", "max_tree_depth", "allow_unlimited_depth", "feature_fraction", "min_leaf_size"});
    auto range = [&](const std::string& key, int& lo, int& hi) {
        if (auto v = sp.list<int>(key)) {
            if (v->size() != 2) throw ConfigError(sp.join(key) + ": expected [min, max]");
            lo = (*v)[0];
            hi = (*v)[1];
        }
    };
    range("tree_count", c.space.min_tree_count, c.space.max_tree_count);
    range("max_tree_depth", c.space.min_depth, c.space.max_depth);
    sp.read("allow_unlimited_depth", c.space.allow_unlimited_depth);
    sp.read("min_leaf_size", c.space.min_leaf_size);
    if (auto fr = sp.list<std::string>("feature_fraction")) {
        c.space.fractions.clear();
        for (const auto& f : *fr) {
            try {
                c.space.fractions.push_back(forest::FeatureFraction::parse(f));
            } catch (const Error& e) {
                throw ConfigError(sp.join("feature_fraction") + ": " + e.what());
            }
        }
    }

    const auto e = r.child("explain");
    e.allow({"rank", "pdp", "pdp_top", "pdp_grid", "pdp_svg", "interaction_pairs", "interaction_samples",
             "interaction_rows", "waterfall_txs", "waterfall_rows", "waterfall_top", "chunk"});
    e.read("rank", c.explain.rank);
    if (auto v = e.list<std::string>("pdp")) c.explain.pdp = *v;
    e.read("pdp_top", c.explain.pdp_top);
    e.read("pdp_grid", c.explain.pdp_grid);
    e.read("pdp_svg", c.explain.pdp_svg);
    if (auto v = e.list<std::vector<std::string>>("interaction_pairs")) {
        for (const auto& pair : *v) {
            if (pair.size() != 2) throw ConfigError("explain.interaction_pairs: each entry needs two feature names");
            c.explain.interaction_pairs.emplace_back(pair[0], pair[1]);
        }
    }
    e.read("interaction_samples", c.explain.interaction_samples);
    e.read("interaction_rows", c.explain.interaction_rows);
    if (auto v = e.list<std::string>("waterfall_txs")) c.explain.waterfall_txs = *v;
    e.read("waterfall_rows", c.explain.waterfall_rows);
    e.read("waterfall_top", c.explain.waterfall_top);
    if (auto v = e.list<std::string>("chunk")) c.explain.chunk = dimensions(*v, "explain.chunk");

    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string_view to_string(Stage s) {
    switch (s) {
        case Stage::synth: return "synth";
        case Stage::ingest: return "ingest";
        case Stage::features: return "features";
        case Stage::screen: return "screen";
        case Stage::evaluate: return "evaluate";
        case Stage::train: return "train";
        case Stage::explain: return "explain";
    }
    return "?";
}

// ---------------------------------------------------------------- hashing

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    return out.str();
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return sha256_hex(buf.str());
}

std::string Manifest::content_hash() const {
    nlohmann::json stages_json = nlohmann::json::array();
    for (const auto& s : stages) stages_json.push_back({{"name", s.name}, {"outputs", s.outputs}});
    return sha256_hex(nlohmann::json{{"config_hash", config_hash}, {"seed", seed}, {"stages", stages_json}}.dump());
}

nlohmann::json Manifest::to_json() const {
    nlohmann::json stages_json = nlohmann::json::array();
    for (const auto& s : stages)
        stages_json.push_back({{"name", s.name},
                               {"status", s.status},
                               {"key", s.key},
                               {"outputs", s.outputs},
                               {"wall_seconds", s.wall_seconds}});
    return {{"tool", "txtime"},
            {"version", version},
            {"config_hash", config_hash},
            {"seed", seed},
            {"stages", stages_json},
            {"content_hash", content_hash()}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
    Manifest m;
    m.version = j.at("version").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& s : j.at("stages")) {
        StageRecord r;
        r.name = s.at("name").get<std::string>();
        r.status = s.at("status").get<std::string>();
        r.key = s.at("key").get<std::string>();
        r.outputs = s.at("outputs").get<std::map<std::string, std::string>>();
        r.wall_seconds = s.at("wall_seconds").get<double>();
        m.stages.push_back(r);
    }
    return m;
}

// ---------------------------------------------------------------- runner

namespace {

std::string_view stage_dir(Stage s) {
    switch (s) {
        case Stage::synth: return "data";
        default: return to_string(s);
    }
}

std::vector<Stage> upstream_of(Stage s) {
    switch (s) {
        case Stage::synth: return {};
        case Stage::ingest: return {Stage::synth};
        case Stage::features: return {Stage::synth, Stage::ingest};
        case Stage::screen: return {Stage::features};
        case Stage::evaluate: return {Stage::screen};
        case Stage::train: return {Stage::screen};
        case Stage::explain: return {Stage::screen, Stage::evaluate, Stage::train};
    }
    return {};
}

const StageRecord* find_record(const Manifest& m, std::string_view name) {
    for (const auto& r : m.stages)
        if (r.name == name) return &r;
    return nullptr;
}

}  // namespace

Runner::Runner(RunConfig config) : config_(std::move(config)) {
    config_.validate();
    if (config_.threads > 0) set_threads(config_.threads);
    std::filesystem::create_directories(config_.output_dir);
    const auto manifest_path = path("manifest.json");
    if (std::filesystem::exists(manifest_path)) {
        try {
            std::ifstream in(manifest_path);
            manifest_ = Manifest::from_json(nlohmann::json::parse(in));
        } catch (const std::exception&) {
            manifest_ = {};
        }
    }
    manifest_.version = std::string(kVersion);
    manifest_.config_hash = config_.hash();
    manifest_.seed = config_.seed;
}

std::string Runner::stage_key(Stage s) const {
    const auto c = config_.canonical();
    nlohmann::json section;
    switch (s) {
        case Stage::synth: section = {c["seed"], c["input"], c["synth"]}; break;
        case Stage::ingest: section = {c["seed"], c["input"], c["sampling"]}; break;
        case Stage::features: section = nlohmann::json::array(); break;
        case Stage::screen: section = {c["screening"], c["protocol"]}; break;
        case Stage::evaluate:
        case Stage::train: section = {c["seed"], c["protocol"]}; break;
        case Stage::explain: section = {c["seed"], c["protocol"], c["explain"]}; break;
    }
    nlohmann::json upstream = nlohmann::json::object();
    for (auto u : upstream_of(s)) {
        if (const auto* rec = find_record(manifest_, to_string(u))) {
            nlohmann::json files = nlohmann::json::object();
            for (const auto& [rel, _] : rec->outputs) {
                const auto p = path(rel);
                files[rel] = std::filesystem::exists(p) ? sha256_file(p) : "missing";
            }
            upstream[std::string(to_string(u))] = files;
        }
    }
    return sha256_hex(nlohmann::json{{"stage", to_string(s)}, {"version", kVersion}, {"config", section}, {"upstream", upstream}}.dump());
}

bool Runner::up_to_date(Stage s, const std::string& key) const {
    const auto* rec = find_record(manifest_, to_string(s));
    if (!rec || rec->key != key) return false;
    if (rec->outputs.empty() && !(s == Stage::synth && config_.source == RunConfig::Source::files)) return false;
    for (const auto& [rel, hash] : rec->outputs) {
        const auto p = path(rel);
        if (!std::filesystem::exists(p) || sha256_file(p) != hash) return false;
    }
    return true;
}

void Runner::record(Stage s, const std::string& key, const std::string& status, double seconds) {
    StageRecord r;
    r.name = std::string(to_string(s));
    r.status = status;
    r.key = key;
    r.wall_seconds = seconds;
    const auto dir = path(stage_dir(s));
    if (std::filesystem::exists(dir)) {
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
            if (e.is_regular_file()) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files)
            r.outputs[std::filesystem::relative(f, config_.output_dir).generic_string()] = sha256_file(f);
    }
    auto it = std::find_if(manifest_.stages.begin(), manifest_.stages.end(), [&](const auto& x) { return x.name == r.name; });
    if (it != manifest_.stages.end())
        *it = r;
    else
        manifest_.stages.push_back(r);
    std::sort(manifest_.stages.begin(), manifest_.stages.end(), [](const auto& a, const auto& b) {
        auto rank = [](const std::string& n) {
            for (std::size_t i = 0; i < kStages.size(); ++i)
                if (to_string(kStages[i]) == n) return i;
            return kStages.size();
        };
        return rank(a.name) < rank(b.name);
    });
}

void Runner::save_manifest() const {
    std::ofstream out(path("manifest.json"));
    out << manifest_.to_json().dump(2) << '\n';
}

void Runner::execute(Stage s) {
    const auto dir = path(stage_dir(s));
    if (!(s == Stage::synth && config_.source == RunConfig::Source::files)) {
        std::filesystem::remove_all(dir);
        std::filesystem::create_directories(dir);
    }
    switch (s) {
        case Stage::synth: do_synth(); break;
        case Stage::ingest: do_ingest(); break;
        case Stage::features: do_features(); break;
        case Stage::screen: do_screen(); break;
        case Stage::evaluate: do_evaluate(); break;
        case Stage::train: do_train(); break;
        case Stage::explain: do_explain(); break;
    }
}

void Runner::run_stage(Stage s) {
    const auto start = std::chrono::steady_clock::now();
    execute(s);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool external = s == Stage::synth && config_.source == RunConfig::Source::files;
    record(s, stage_key(s), external ? "skipped (input files)" : "ok", seconds);
    save_manifest();
}

Manifest Runner::run_all() {
    for (auto s : kStages) {
        const auto key = stage_key(s);
        if (up_to_date(s, key)) {
            record(s, key, "skipped (unchanged)", 0.0);
            save_manifest();
            continue;
        }
        run_stage(s);
    }
    return manifest_;
}

DatasetPaths Runner::dataset_paths() const {
    return DatasetPaths::in_directory(config_.source == RunConfig::Source::synth ? path("data") : config_.dataset_dir);
}

void Runner::require(Stage upstream, std::string_view relative) const {
    if (!std::filesystem::exists(path(relative)))
        throw MissingArtifactError(std::string(to_string(upstream)),
                                   "stage '" + std::string(to_string(upstream)) + "' has not produced " +
                                       std::string(relative) + "; run `txtime " + std::string(to_string(upstream)) +
                                       "` first");
}

nlohmann::json Runner::run_stamp() const { return {{"config_hash", manifest_.config_hash}, {"seed", config_.seed}}; }

void Runner::write_json(std::string_view relative, const nlohmann::json& j) const {
    const auto p = path(relative);
    std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) throw DataError("cannot write " + p.string());
    out << j.dump(2) << '\n';
}

nlohmann::json Runner::read_json(Stage upstream, std::string_view relative) const {
    require(upstream, relative);
    std::ifstream in(path(relative));
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string(relative) + ": " + e.what());
    }
}

void Runner::do_synth() {
    if (config_.source == RunConfig::Source::files) return;
    auto cfg = config_.synth;
    cfg.seed = derive_seed(config_.seed, "synth");
    const auto ds = synth::plant_signal(cfg, config_.signal);
    write_dataset(ds, dataset_paths());
    write_json("data/synth.json", {{"run", run_stamp()},
                                   {"signal", synth::to_string(config_.signal)},
                                   {"blocks", ds.blocks.size()},
                                   {"transactions", ds.transactions.size()},
                                   {"utc_days", ds.utc_day_count()}});
}

void Runner::do_ingest() {
    if (config_.source == RunConfig::Source::synth) require(Stage::synth, "data/blocks.jsonl");
    const auto ds = load_dataset(dataset_paths());
    nlohmann::json sample = nlohmann::json::array();
    std::vector<std::string> warnings = ds.report.warnings;
    if (config_.sampling) {
        auto s = sample_blocks_per_day(ds, config_.confidence, config_.margin, derive_seed(config_.seed, "sample"));
        sample = s.block_numbers;
        warnings.insert(warnings.end(), s.warnings.begin(), s.warnings.end());
    }
    const auto needed = static_cast<std::size_t>(config_.split.train_days + config_.split.validation_days +
                                                 config_.split.test_days) + 1;
    if (!config_.split.reduced && ds.utc_day_count() < needed)
        warnings.push_back("dataset spans " + std::to_string(ds.utc_day_count()) + " UTC days; the temporal protocol needs " +
                           std::to_string(needed) + " (first day feeds prev_day features only)");
    write_json("ingest/ingestion_report.json", {{"run", run_stamp()},
                                                {"blocks", ds.blocks.size()},
                                                {"transactions", ds.transactions.size()},
                                                {"contracts", ds.contracts.size()},
                                                {"utc_days", ds.utc_day_count()},
                                                {"dropped_missing_submission", ds.report.dropped_missing_submission},
                                                {"unlisted_block_hashes", ds.report.unlisted_block_hashes},
                                                {"sampling", config_.sampling},
                                                {"sampled_blocks", sample.size()},
                                                {"warnings", warnings}});
    write_json("ingest/sample.json", {{"run", run_stamp()}, {"enabled", config_.sampling}, {"block_numbers", sample}});
}

void Runner::do_features() {
    const auto sample = read_json(Stage::ingest, "ingest/sample.json");
    if (config_.source == RunConfig::Source::synth) require(Stage::synth, "data/blocks.jsonl");
    const auto ds = load_dataset(dataset_paths());
    features::BuildOptions options;
    if (sample.at("enabled").get<bool>()) options.sampled_blocks = sample.at("block_numbers").get<std::vector<std::int64_t>>();
    features::BuildReport report;
    const auto m = features::build_feature_matrix(ds, features::all_feature_names(), options, &report);
    write_matrix(m, path("features/features.csv"));
    write_json("features/build_report.json", {{"run", run_stamp()},
                                              {"rows", report.rows},
                                              {"columns", m.cols()},
                                              {"excluded_warmup", report.excluded_warmup},
                                              {"excluded_first_day", report.excluded_first_day}});
}

void Runner::do_screen() {
    require(Stage::features, "features/features.csv");
    const auto transformed = screen::log1p_transform(read_matrix(path("features/features.csv")));
    const auto part = protocol::partition(transformed, config_.split);
    const auto train = transformed.select_rows(part.train);
    const auto report = screen::run(train, config_.screening);
    write_matrix(screen::apply(transformed, report), path("screen/screened.csv"));
    auto j = screen::to_json(report);
    j["run"] = run_stamp();
    j["fit_rows"] = part.train.size();
    write_json("screen/screen_report.json", j);
}

void Runner::do_evaluate() {
    require(Stage::screen, "screen/screened.csv");
    const auto m = read_matrix(path("screen/screened.csv"));
    const auto seed = derive_seed(config_.seed, "evaluate");
    auto full = protocol::run_protocol(m, config_.split, config_.space, seed, "all surviving features");
    nlohmann::json summary{{"run", run_stamp()},
                           {"features", m.cols()},
                           {"median_adjusted_r2", full.test_adjusted_r2.median},
                           {"mean_adjusted_r2", full.test_adjusted_r2.mean}};
    if (config_.baseline) {
        auto b = m;
        for (auto d : config_.baseline_omit) b = b.without_dimension(d);
        if (b.cols() == 0) throw ConfigError("protocol.baseline_omit: leaves the baseline model without features");
        auto base = protocol::run_protocol(b, config_.split, config_.space, seed,
                                           "without " + nlohmann::json(dimension_names(config_.baseline_omit)).dump());
        full.comparison = protocol::compare_reports(full, base);
        auto bj = protocol::to_json(base);
        bj["run"] = run_stamp();
        write_json("evaluate/baseline_report.json", bj);
        summary["baseline_median_adjusted_r2"] = base.test_adjusted_r2.median;
        summary["mann_whitney_p"] = full.comparison->p;
        summary["cliffs_delta"] = full.comparison->effect.delta;
        summary["magnitude"] = stats::to_string(full.comparison->effect.magnitude);
    }
    auto j = protocol::to_json(full);
    j["run"] = run_stamp();
    write_json("evaluate/eval_report.json", j);
    write_json("evaluate/summary.json", summary);
}

void Runner::do_train() {
    require(Stage::screen, "screen/screened.csv");
    const auto m = read_matrix(path("screen/screened.csv"));
    const auto result = protocol::train_final(m, config_.split, config_.space, derive_seed(config_.seed, "train"));
    auto fj = forest::to_json(result.forest);
    fj["run"] = run_stamp();
    write_json("train/forest.json", fj);
    nlohmann::json trials = nlohmann::json::array();
    for (const auto& t : result.trials)
        trials.push_back({{"hyperparams", forest::to_json(t.params)}, {"validation_r2", t.validation_r2}});
    write_json("train/search.json", {{"run", run_stamp()},
                                     {"chosen", forest::to_json(result.best)},
                                     {"validation_r2", result.best_r2},
                                     {"trials", trials}});
}

void Runner::do_explain() {
    const auto fj = read_json(Stage::train, "train/forest.json");
    require(Stage::screen, "screen/screened.csv");
    const auto f = forest::forest_from_json(fj);
    const auto m = read_matrix(path("screen/screened.csv"));
    const auto part = protocol::partition(m, config_.split);
    const auto train = m.select_rows(part.train);
    const auto& ex = config_.explain;

    const auto shap = explain::tree_shap(f, train);
    double worst = 0.0;
    std::vector<double> mean_abs(f.feature_names.size(), 0.0);
    for (const auto& e : shap) {
        worst = std::max(worst, e.additivity_error());
        for (std::size_t k = 0; k < mean_abs.size(); ++k) mean_abs[k] += std::abs(e.phi[k]);
    }
    nlohmann::json mean_abs_j = nlohmann::json::object();
    for (std::size_t k = 0; k < mean_abs.size(); ++k) mean_abs_j[f.feature_names[k]] = mean_abs[k] / static_cast<double>(shap.size());
    write_json("explain/shap_summary.json", {{"run", run_stamp()},
                                             {"rows", shap.size()},
                                             {"base_value", shap.empty() ? 0.0 : shap.front().base_value},
                                             {"max_additivity_error", worst},
                                             {"mean_abs_phi", mean_abs_j}});

    std::vector<std::string> ranked;
    if (ex.rank) {
        const auto table = explain::rank_features(shap, f.feature_names);
        explain::write_rank_csv(table, path("explain/rank.csv"));
        write_json("explain/rank.json", {{"run", run_stamp()}, {"ranks", explain::to_json(table)}});
        for (const auto& item : table.items) ranked.push_back(item.name);
    }

    auto pdp_features = ex.pdp;
    if (pdp_features.empty())
        for (std::size_t k = 0; k < std::min(ex.pdp_top, ranked.size()); ++k) pdp_features.push_back(ranked[k]);
    if (!pdp_features.empty()) std::filesystem::create_directories(path("explain/pdp"));
    for (const auto& name : pdp_features) {
        if (!m.index_of(name)) throw ConfigError("explain.pdp: feature '" + name + "' did not survive screening");
        explain::write_pdp(explain::pdp(f, train, name, ex.pdp_grid), path("explain/pdp/" + name + ".csv"), ex.pdp_svg);
    }

    const auto rows = explain::aligned_rows(f, m);
    auto pairs = ex.interaction_pairs;
    if (pairs.empty()) {
        const auto top = std::min<std::size_t>(4, ranked.size());
        for (std::size_t i = 0; i < top; ++i)
            for (std::size_t j = i + 1; j < top; ++j) pairs.emplace_back(ranked[i], ranked[j]);
    }
    nlohmann::json interactions = nlohmann::json::array();
    for (std::size_t k = 0; k < std::min(ex.interaction_rows, part.test.size()) && !pairs.empty(); ++k) {
        const auto r = part.test[k];
        nlohmann::json values = nlohmann::json::array();
        for (const auto& p : explain::pair_interactions(f, rows[r], pairs,
                                                        {ex.interaction_samples, derive_seed(config_.seed, "interaction", r)}))
            values.push_back(explain::to_json(p));
        interactions.push_back({{"tx", m.row_keys()[r]}, {"pairs", values}});
    }
    write_json("explain/interactions.json", {{"run", run_stamp()}, {"mode", "sampled"}, {"samples", ex.interaction_samples}, {"rows", interactions}});

    std::vector<std::size_t> waterfall_rows;
    if (ex.waterfall_txs.empty()) {
        for (std::size_t k = 0; k < std::min(ex.waterfall_rows, part.test.size()); ++k) waterfall_rows.push_back(part.test[k]);
    } else {
        for (const auto& tx : ex.waterfall_txs) {
            const auto& keys = m.row_keys();
            auto it = std::find(keys.begin(), keys.end(), tx);
            if (it == keys.end()) throw ConfigError("explain.waterfall_txs: transaction '" + tx + "' has no feature row");
            waterfall_rows.push_back(static_cast<std::size_t>(it - keys.begin()));
        }
    }
    nlohmann::json waterfalls = nlohmann::json::object();
    for (auto r : waterfall_rows) {
        const auto e = explain::tree_shap(f, rows[r]);
        waterfalls[m.row_keys()[r]] = {{"explanation", explain::to_json(e, f.feature_names)},
                                       {"waterfall", explain::to_json(explain::waterfall(e, f.feature_names, rows[r], ex.waterfall_top))}};
    }
    write_json("explain/waterfall.json", {{"run", run_stamp()}, {"transactions", waterfalls}});

    if (!ex.chunk.empty()) {
        const auto full = protocol::eval_report_from_json(read_json(Stage::evaluate, "evaluate/eval_report.json"));
        for (auto d : ex.chunk) {
            const auto c = explain::chunk_test(m, d, config_.split, config_.space, derive_seed(config_.seed, "evaluate"), &full);
            auto j = explain::to_json(c);
            j["run"] = run_stamp();
            write_json("explain/chunk_" + std::string(to_string(d)) + ".json", j);
        }
    }
}

}  // namespace txtime::pipeline
