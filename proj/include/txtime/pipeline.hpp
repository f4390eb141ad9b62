#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "txtime/error.hpp"
#include "txtime/feature_matrix.hpp"
#include "txtime/protocol.hpp"
#include "txtime/screen.hpp"
#include "txtime/synth_chain.hpp"

namespace txtime::pipeline {

inline constexpr std::string_view kVersion = "0.1.0";

/// An upstream stage has not produced the artifact a later stage needs.
struct MissingArtifactError : DataError {
    MissingArtifactError(std::string stage, const std::string& what) : DataError(what), stage(std::move(stage)) {}
    std::string stage;
};

struct ExplainConfig {
    bool rank = true;
    std::vector<std::string> pdp;  // features; empty = the top `pdp_top` ranked features
    std::size_t pdp_top = 3;
    std::size_t pdp_grid = 50;
    bool pdp_svg = true;
    std::vector<std::pair<std::string, std::string>> interaction_pairs;
    int interaction_samples = 64;
    std::size_t interaction_rows = 3;  // first test-day rows
    std::vector<std::string> waterfall_txs;  // empty = the first `waterfall_rows` test-day rows
    std::size_t waterfall_rows = 3;
    std::size_t waterfall_top = 9;
    std::vector<Dimension> chunk;
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::filesystem::path output_dir = "txtime-out";
    int threads = 0;  // 0 = OpenMP default

    enum class Source { synth, files };
    Source source = Source::synth;
    std::filesystem::path dataset_dir;  // used when source = files

    synth::SynthConfig synth;
    synth::Signal signal = synth::Signal::competitiveness;

    bool sampling = true;
    double confidence = 0.95;
    double margin = 0.05;

    screen::ScreenOptions screening;
    protocol::SplitProtocol split;
    protocol::SearchSpace space;
    /// Dimensions left out of the comparison model (internal-only baseline).
    std::vector<Dimension> baseline_omit{Dimension::pricing};
    bool baseline = true;

    ExplainConfig explain;

    /// Throws ConfigError naming the field path.
    void validate() const;
    /// Canonical form; output_dir and threads are left out because they cannot change results.
    nlohmann::json canonical() const;
    std::string hash() const;
};

RunConfig parse_config(const std::string& yaml_text);
RunConfig load_config(const std::filesystem::path& path);

enum class Stage { synth, ingest, features, screen, evaluate, train, explain };
inline constexpr std::array<Stage, 7> kStages{Stage::synth,    Stage::ingest, Stage::features, Stage::screen,
                                              Stage::evaluate, Stage::train,  Stage::explain};
std::string_view to_string(Stage s);

struct StageRecord {
    std::string name;
    std::string status;  // "ok", "skipped (unchanged)", "skipped (input files)"
    std::string key;     // hash of config section and upstream artifacts
    std::map<std::string, std::string> outputs;  // relative path -> sha256
    double wall_seconds = 0.0;
};

struct Manifest {
    std::string version{kVersion};
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<StageRecord> stages;

    /// Hash over config hash, seed and every stage's output hashes; wall-clock and status excluded.
    std::string content_hash() const;
    nlohmann::json to_json() const;
    static Manifest from_json(const nlohmann::json& j);
};

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

/// Runs stages against one output directory and maintains its manifest.json.
class Runner {
  public:
    explicit Runner(RunConfig config);

    /// Runs the stage unconditionally (subcommands).
    void run_stage(Stage s);
    /// All seven stages in order, skipping those whose key and outputs are unchanged.
    Manifest run_all();

    const RunConfig& config() const { return config_; }
    std::filesystem::path path(std::string_view relative) const { return config_.output_dir / relative; }
    Manifest manifest() const { return manifest_; }

  private:
    std::string stage_key(Stage s) const;
    bool up_to_date(Stage s, const std::string& key) const;
    void execute(Stage s);
    void record(Stage s, const std::string& key, const std::string& status, double seconds);
    void save_manifest() const;

    void do_synth();
    void do_ingest();
    void do_features();
    void do_screen();
    void do_evaluate();
    void do_train();
    void do_explain();

    DatasetPaths dataset_paths() const;
    void require(Stage upstream, std::string_view relative) const;
    nlohmann::json run_stamp() const;
    void write_json(std::string_view relative, const nlohmann::json& j) const;
    nlohmann::json read_json(Stage upstream, std::string_view relative) const;

    RunConfig config_;
    Manifest manifest_;
};

}  // namespace txtime::pipeline
