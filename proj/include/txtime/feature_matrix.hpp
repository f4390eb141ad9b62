#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace txtime {

enum class Dimension { contextual, behavioral, historical, pricing };

std::string_view to_string(Dimension d);
Dimension parse_dimension(std::string_view name);

/// Named, dimension-tagged columns, one row per transaction, stored
/// column-major. Row metadata (block number, UTC day) drives the temporal
/// split and is carried in the sidecar file rather than as feature columns.
class FeatureMatrix {
  public:
    FeatureMatrix() = default;
    FeatureMatrix(std::vector<std::string> names, std::vector<Dimension> dims);

    std::size_t rows() const { return row_keys_.size(); }
    std::size_t cols() const { return names_.size(); }

    const std::vector<std::string>& names() const { return names_; }
    const std::vector<Dimension>& dimensions() const { return dims_; }
    const std::vector<std::string>& row_keys() const { return row_keys_; }
    const std::vector<double>& target() const { return target_; }
    std::vector<double>& target() { return target_; }
    const std::vector<std::int64_t>& block_numbers() const { return block_numbers_; }
    const std::vector<std::int64_t>& utc_days() const { return utc_days_; }
    const std::vector<bool>& log_transformed() const { return log_transformed_; }
    bool target_log_transformed() const { return target_log_; }
    void set_log_transformed(std::size_t col, bool v) { log_transformed_[col] = v; }
    void set_target_log_transformed(bool v) { target_log_ = v; }

    std::span<const double> column(std::size_t c) const { return {values_.data() + c * rows(), rows()}; }
    std::span<double> column(std::size_t c) { return {values_.data() + c * rows(), rows()}; }
    double at(std::size_t r, std::size_t c) const { return values_[c * rows() + r]; }
    void row(std::size_t r, std::span<double> out) const;
    std::vector<double> row(std::size_t r) const;

    std::optional<std::size_t> index_of(std::string_view name) const;
    std::size_t require(std::string_view name) const;

    /// Bulk construction from column-major data.
    void assign(std::vector<std::string> keys, std::vector<std::int64_t> block_numbers, std::vector<std::int64_t> days,
                std::vector<double> column_major, std::vector<double> target);

    FeatureMatrix select_columns(const std::vector<std::string>& names) const;
    FeatureMatrix select_rows(std::span<const std::size_t> rows) const;
    FeatureMatrix without_dimension(Dimension d) const;

    bool operator==(const FeatureMatrix&) const = default;

  private:
    std::vector<std::string> names_;
    std::vector<Dimension> dims_;
    std::vector<bool> log_transformed_;
    bool target_log_ = false;
    std::vector<std::string> row_keys_;
    std::vector<std::int64_t> block_numbers_;
    std::vector<std::int64_t> utc_days_;
    std::vector<double> values_;
    std::vector<double> target_;
};

inline constexpr std::string_view kTargetColumn = "processing_time_minutes";

/// CSV `tx_hash,<features...>,processing_time_minutes` plus a JSON sidecar
/// holding dimension tags, transform flags and per-row block/day metadata.
void write_matrix(const FeatureMatrix& m, const std::filesystem::path& csv);
FeatureMatrix read_matrix(const std::filesystem::path& csv);
std::filesystem::path sidecar_path(const std::filesystem::path& csv);

}  // namespace txtime
