#include "txtime/feature_matrix.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "txtime/error.hpp"

namespace txtime {

std::string_view to_string(Dimension d) {
    switch (d) {
        case Dimension::contextual: return "contextual";
        case Dimension::behavioral: return "behavioral";
        case Dimension::historical: return "historical";
        case Dimension::pricing: return "pricing";
    }
    return "unknown";
}

Dimension parse_dimension(std::string_view name) {
    if (name == "contextual") return Dimension::contextual;
    if (name == "behavioral") return Dimension::behavioral;
    if (name == "historical") return Dimension::historical;
    if (name == "pricing") return Dimension::pricing;
    throw ConfigError("unknown dimension '" + std::string(name) + "'");
}

FeatureMatrix::FeatureMatrix(std::vector<std::string> names, std::vector<Dimension> dims)
    : names_(std::move(names)), dims_(std::move(dims)), log_transformed_(names_.size(), false) {
    if (names_.size() != dims_.size()) throw DataError("feature matrix: names and dimensions differ in length");
}

void FeatureMatrix::row(std::size_t r, std::span<double> out) const {
    for (std::size_t c = 0; c < cols(); ++c) out[c] = at(r, c);
}

std::vector<double> FeatureMatrix::row(std::size_t r) const {
    std::vector<double> out(cols());
    row(r, out);
    return out;
}

std::optional<std::size_t> FeatureMatrix::index_of(std::string_view name) const {
    for (std::size_t c = 0; c < names_.size(); ++c)
        if (names_[c] == name) return c;
    return std::nullopt;
}

std::size_t FeatureMatrix::require(std::string_view name) const {
    if (auto c = index_of(name)) return *c;
    throw ConfigError("feature matrix has no column '" + std::string(name) + "'");
}

void FeatureMatrix::assign(std::vector<std::string> keys, std::vector<std::int64_t> block_numbers,
                           std::vector<std::int64_t> days, std::vector<double> column_major, std::vector<double> target) {
    const auto n = keys.size();
    if (block_numbers.size() != n || days.size() != n || target.size() != n || column_major.size() != n * cols())
        throw DataError("feature matrix: inconsistent sizes in assign");
    row_keys_ = std::move(keys);
    block_numbers_ = std::move(block_numbers);
    utc_days_ = std::move(days);
    values_ = std::move(column_major);
    target_ = std::move(target);
}

FeatureMatrix FeatureMatrix::select_columns(const std::vector<std::string>& names) const {
    std::vector<Dimension> dims;
    std::vector<std::size_t> idx;
    for (const auto& n : names) {
        idx.push_back(require(n));
        dims.push_back(dims_[idx.back()]);
    }
    FeatureMatrix out(names, dims);
    out.target_log_ = target_log_;
    std::vector<double> values;
    values.reserve(rows() * idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        out.log_transformed_[k] = log_transformed_[idx[k]];
        auto col = column(idx[k]);
        values.insert(values.end(), col.begin(), col.end());
    }
    out.assign(row_keys_, block_numbers_, utc_days_, std::move(values), target_);
    return out;
}

FeatureMatrix FeatureMatrix::select_rows(std::span<const std::size_t> rows_idx) const {
    FeatureMatrix out(names_, dims_);
    out.log_transformed_ = log_transformed_;
    out.target_log_ = target_log_;
    std::vector<std::string> keys;
    std::vector<std::int64_t> blocks, days;
    std::vector<double> target, values;
    keys.reserve(rows_idx.size());
    for (auto r : rows_idx) {
        keys.push_back(row_keys_.at(r));
        blocks.push_back(block_numbers_[r]);
        days.push_back(utc_days_[r]);
        target.push_back(target_[r]);
    }
    values.reserve(rows_idx.size() * cols());
    for (std::size_t c = 0; c < cols(); ++c)
        for (auto r : rows_idx) values.push_back(at(r, c));
    out.assign(std::move(keys), std::move(blocks), std::move(days), std::move(values), std::move(target));
    return out;
}

FeatureMatrix FeatureMatrix::without_dimension(Dimension d) const {
    std::vector<std::string> keep;
    for (std::size_t c = 0; c < cols(); ++c)
        if (dims_[c] != d) keep.push_back(names_[c]);
    return select_columns(keep);
}

std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
    auto p = csv;
    p.replace_extension(".dimensions.json");
    return p;
}

namespace {

void append_double(std::string& out, double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
    out.append(buf, res.ptr);
}

double parse_double(std::string_view s, const std::string& file, std::size_t line) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ParseError(file, line, "not a number: '" + std::string(s) + "'");
    return v;
}

std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

}  // namespace

void write_matrix(const FeatureMatrix& m, const std::filesystem::path& csv) {
    if (csv.has_parent_path()) std::filesystem::create_directories(csv.parent_path());
    std::ofstream out(csv, std::ios::binary);
    if (!out) throw DataError("cannot write " + csv.string());
    std::string line = "tx_hash";
    for (const auto& n : m.names()) line += "," + n;
    line += ",";
    line += kTargetColumn;
    line += "\n";
    out << line;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        line = m.row_keys()[r];
        for (std::size_t c = 0; c < m.cols(); ++c) {
            line += ',';
            append_double(line, m.at(r, c));
        }
        line += ',';
        append_double(line, m.target()[r]);
        line += '\n';
        out << line;
    }

    nlohmann::json side;
    nlohmann::json cols = nlohmann::json::array();
    for (std::size_t c = 0; c < m.cols(); ++c)
        cols.push_back({{"name", m.names()[c]},
                        {"dimension", std::string(to_string(m.dimensions()[c]))},
                        {"log1p", static_cast<bool>(m.log_transformed()[c])}});
    side["columns"] = cols;
    side["target"] = {{"name", std::string(kTargetColumn)}, {"log1p", m.target_log_transformed()}};
    side["block_numbers"] = m.block_numbers();
    side["utc_days"] = m.utc_days();
    std::ofstream sout(sidecar_path(csv));
    if (!sout) throw DataError("cannot write " + sidecar_path(csv).string());
    sout << side.dump(1) << "\n";
}

FeatureMatrix read_matrix(const std::filesystem::path& csv) {
    const auto side_path = sidecar_path(csv);
    std::ifstream sin(side_path);
    if (!sin) throw DataError("missing sidecar " + side_path.string());
    nlohmann::json side;
    try {
        side = nlohmann::json::parse(sin);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(side_path.string(), 1, e.what());
    }
    std::vector<std::string> names;
    std::vector<Dimension> dims;
    std::vector<bool> logs;
    for (const auto& c : side.at("columns")) {
        names.push_back(c.at("name").get<std::string>());
        dims.push_back(parse_dimension(c.at("dimension").get<std::string>()));
        logs.push_back(c.value("log1p", false));
    }
    FeatureMatrix m(names, dims);
    for (std::size_t c = 0; c < logs.size(); ++c) m.set_log_transformed(c, logs[c]);
    m.set_target_log_transformed(side.at("target").value("log1p", false));
    auto blocks = side.at("block_numbers").get<std::vector<std::int64_t>>();
    auto days = side.at("utc_days").get<std::vector<std::int64_t>>();

    std::ifstream in(csv, std::ios::binary);
    if (!in) throw DataError("cannot read " + csv.string());
    const std::string file = csv.string();
    std::string line;
    if (!std::getline(in, line)) throw ParseError(file, 1, "empty file");
    auto header = split_csv(line);
    if (header.size() != names.size() + 2 || header.front() != "tx_hash" || header.back() != kTargetColumn)
        throw ParseError(file, 1, "header does not match sidecar columns");
    for (std::size_t c = 0; c < names.size(); ++c)
        if (header[c + 1] != names[c]) throw ParseError(file, 1, "column " + std::string(header[c + 1]) + " out of order");

    std::vector<std::string> keys;
    std::vector<std::vector<double>> cols(names.size());
    std::vector<double> target;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split_csv(line);
        if (cells.size() != names.size() + 2)
            throw ParseError(file, lineno, "expected " + std::to_string(names.size() + 2) + " fields");
        keys.emplace_back(cells[0]);
        for (std::size_t c = 0; c < names.size(); ++c) cols[c].push_back(parse_double(cells[c + 1], file, lineno));
        target.push_back(parse_double(cells.back(), file, lineno));
    }
    if (blocks.size() != keys.size() || days.size() != keys.size())
        throw DataError(side_path.string() + ": row metadata does not match " + file);
    std::vector<double> values;
    values.reserve(keys.size() * names.size());
    for (auto& c : cols) values.insert(values.end(), c.begin(), c.end());
    m.assign(std::move(keys), std::move(blocks), std::move(days), std::move(values), std::move(target));
    return m;
}

}  // namespace txtime
