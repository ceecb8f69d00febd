#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rigline/error.hpp"
#include "rigline/random.hpp"
#include "rigline/text_io.hpp"

namespace rigline {

// Class indices. The library is strictly two-class; index 0 is the majority
// ("normal") condition and maps to the SVM target +1.
inline constexpr int kNormal = 0;
inline constexpr int kFailure = 1;
inline constexpr std::size_t kClassCount = 2;
inline constexpr std::array<std::string_view, kClassCount> kClassNames{"normal", "failure"};

inline constexpr int svm_target(int label) { return label == kNormal ? +1 : -1; }

inline std::string_view class_name(int label) { return kClassNames.at(static_cast<std::size_t>(label)); }

inline int parse_class(std::string_view s) {
    s = trim(s);
    for (std::size_t c = 0; c < kClassCount; ++c) {
        if (s == kClassNames[c]) return static_cast<int>(c);
    }
    throw ParseError("unknown class label '" + std::string(s) + "'");
}

struct Column {
    std::string name;
    std::string unit;

    bool operator==(const Column&) const = default;
};

/// Optional per-row bookkeeping columns; never part of the feature vector.
struct RowMetadata {
    std::vector<std::string> serials;
    std::vector<std::string> timestamps;

    bool empty() const { return serials.empty() && timestamps.empty(); }
};

/// Immutable table of real-valued feature rows with optional class labels.
///
/// Rows are stored row-major. Every row carries a stable identity
/// (`row_id`) that survives subsetting, so splits and resamples can be
/// audited against their source.
class Dataset {
public:
    Dataset() = default;

    Dataset(std::vector<Column> schema, std::vector<double> values, std::vector<int> labels = {},
            RowMetadata meta = {}, std::vector<std::size_t> row_ids = {})
        : schema_(std::move(schema)),
          values_(std::move(values)),
          labels_(std::move(labels)),
          meta_(std::move(meta)),
          ids_(std::move(row_ids)) {
        if (schema_.empty()) {
            if (!values_.empty()) throw ShapeError("dataset has values but no feature columns");
        } else if (values_.size() % schema_.size() != 0) {
            throw ShapeError("dataset value count is not a multiple of the schema arity");
        }
        const auto n = rows();
        for (double v : values_) {
            if (!std::isfinite(v)) throw ParseError("dataset contains a non-finite feature value");
        }
        if (!labels_.empty() && labels_.size() != n) throw ShapeError("label count does not match row count");
        for (int l : labels_) {
            if (l < 0 || l >= static_cast<int>(kClassCount)) throw LabelError("class index out of range");
        }
        if (!meta_.serials.empty() && meta_.serials.size() != n) throw ShapeError("serial column length mismatch");
        if (!meta_.timestamps.empty() && meta_.timestamps.size() != n) {
            throw ShapeError("timestamp column length mismatch");
        }
        if (ids_.empty()) {
            ids_ = iota_indices(n);
        } else if (ids_.size() != n) {
            throw ShapeError("row id count does not match row count");
        }
    }

    std::size_t rows() const { return schema_.empty() ? 0 : values_.size() / schema_.size(); }
    std::size_t arity() const { return schema_.size(); }
    bool empty() const { return rows() == 0; }
    /// Labeled when every row has a class. An empty dataset counts as labeled.
    bool labeled() const { return labels_.size() == rows(); }

    const std::vector<Column>& schema() const { return schema_; }
    const std::vector<double>& values() const { return values_; }
    const std::vector<int>& labels() const { return labels_; }
    const RowMetadata& metadata() const { return meta_; }
    const std::vector<std::size_t>& row_ids() const { return ids_; }

    std::span<const double> row(std::size_t i) const {
        return {values_.data() + i * arity(), arity()};
    }
    int label(std::size_t i) const { return labels_.at(i); }
    std::size_t row_id(std::size_t i) const { return ids_[i]; }

    std::array<std::size_t, kClassCount> class_counts() const {
        require_labels();
        std::array<std::size_t, kClassCount> counts{};
        for (int l : labels_) ++counts[static_cast<std::size_t>(l)];
        return counts;
    }

    std::vector<std::size_t> indices_of(int cls) const {
        require_labels();
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < labels_.size(); ++i) {
            if (labels_[i] == cls) out.push_back(i);
        }
        return out;
    }

    /// Rows at `idx`, in that order, keeping ids, labels and metadata.
    Dataset subset(std::span<const std::size_t> idx) const {
        const auto d = arity();
        std::vector<double> vals;
        vals.reserve(idx.size() * d);
        std::vector<int> labs;
        std::vector<std::size_t> ids;
        RowMetadata meta;
        for (auto i : idx) {
            if (i >= rows()) throw ShapeError("subset index out of range");
            auto r = row(i);
            vals.insert(vals.end(), r.begin(), r.end());
            if (!labels_.empty()) labs.push_back(labels_[i]);
            if (!meta_.serials.empty()) meta.serials.push_back(meta_.serials[i]);
            if (!meta_.timestamps.empty()) meta.timestamps.push_back(meta_.timestamps[i]);
            ids.push_back(ids_[i]);
        }
        return Dataset(schema_, std::move(vals), labels_.empty() ? std::vector<int>{} : std::move(labs),
                       std::move(meta), std::move(ids));
    }

    Dataset with_labels(std::vector<int> labels) const {
        return Dataset(schema_, values_, std::move(labels), meta_, ids_);
    }

    Dataset without_labels() const { return Dataset(schema_, values_, {}, meta_, ids_); }

    /// Same rows with every feature replaced; schema and bookkeeping kept.
    Dataset with_values(std::vector<double> values) const {
        if (values.size() != values_.size()) throw ShapeError("replacement values have a different shape");
        return Dataset(schema_, std::move(values), labels_, meta_, ids_);
    }

    /// Appends labeled rows (e.g. synthetic samples). New rows get fresh ids
    /// above every existing id; metadata of appended rows is left blank.
    Dataset append_rows(std::span<const double> values, std::span<const int> labels) const {
        if (arity() == 0 || values.size() % arity() != 0) throw ShapeError("appended values do not match arity");
        const auto extra = values.size() / arity();
        if (labels.size() != extra || !labeled()) throw ShapeError("appended rows need one label each");
        auto vals = values_;
        vals.insert(vals.end(), values.begin(), values.end());
        auto labs = labels_;
        labs.insert(labs.end(), labels.begin(), labels.end());
        auto ids = ids_;
        std::size_t next = ids.empty() ? 0 : *std::max_element(ids.begin(), ids.end()) + 1;
        for (std::size_t k = 0; k < extra; ++k) ids.push_back(next++);
        RowMetadata meta = meta_;
        if (!meta.serials.empty()) meta.serials.resize(ids.size());
        if (!meta.timestamps.empty()) meta.timestamps.resize(ids.size());
        return Dataset(schema_, std::move(vals), std::move(labs), std::move(meta), std::move(ids));
    }

    void require_labels() const {
        if (!labeled()) throw LabelError("dataset has no class labels");
    }

private:
    std::vector<Column> schema_;
    std::vector<double> values_;
    std::vector<int> labels_;
    RowMetadata meta_;
    std::vector<std::size_t> ids_;
};

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string normalized_header(std::string_view h) {
    std::string out;
    for (char c : h) {
        if (std::isalnum(static_cast<unsigned char>(c))) out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

inline bool is_serial_header(std::string_view h) {
    auto n = normalized_header(h);
    return n == "sno" || n == "serial" || n == "serialno" || n == "serialnumber" || n == "sn" || n == "id";
}

inline bool is_timestamp_header(std::string_view h) {
    auto n = normalized_header(h);
    return n.find("time") != std::string::npos || n.find("date") != std::string::npos;
}

/// "Operating Pressure (in psi)" -> "psi"; no parenthesis -> "".
inline std::string unit_from_header(std::string_view h) {
    auto open = h.rfind('(');
    auto close = h.rfind(')');
    if (open == std::string_view::npos || close == std::string_view::npos || close < open) return {};
    auto inner = trim(h.substr(open + 1, close - open - 1));
    if (inner.starts_with("in ")) inner = trim(inner.substr(3));
    return std::string(inner);
}

}  // namespace detail

/// Parses the sensor CSV layout: header row, comma separated, optional
/// leading serial-number and timestamp columns (kept as metadata), numeric
/// feature columns, and a trailing class column when `has_labels`.
inline Dataset read_csv(std::istream& in, bool has_labels) {
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (!trim(line).empty()) {
            have_header = true;
            header = split(trim(line), ',');
            break;
        }
    }
    if (!have_header) throw EmptyDatasetError("CSV input is empty (no header row)");

    std::size_t col = 0;
    bool has_serial = false;
    bool has_time = false;
    if (col < header.size() && detail::is_serial_header(header[col])) {
        has_serial = true;
        ++col;
    }
    if (col < header.size() && detail::is_timestamp_header(header[col])) {
        has_time = true;
        ++col;
    }
    const std::size_t first_feature = col;
    const std::size_t end_feature = header.size() - (has_labels ? 1 : 0);
    if (has_labels && header.size() <= first_feature) throw ParseError("CSV header has no class column");
    if (end_feature <= first_feature) throw ParseError("CSV header has no feature columns");

    std::vector<Column> schema;
    for (std::size_t c = first_feature; c < end_feature; ++c) {
        auto name = std::string(trim(header[c]));
        schema.push_back({name, detail::unit_from_header(name)});
    }

    std::vector<double> values;
    std::vector<int> labels;
    RowMetadata meta;
    while (std::getline(in, line)) {
        ++line_no;
        auto t = trim(line);
        if (t.empty()) continue;
        auto cells = split(t, ',');
        if (cells.size() != header.size()) {
            throw ShapeError("CSV line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                             " cells, found " + std::to_string(cells.size()));
        }
        if (has_serial) meta.serials.emplace_back(trim(cells[0]));
        if (has_time) meta.timestamps.emplace_back(trim(cells[has_serial ? 1 : 0]));
        for (std::size_t c = first_feature; c < end_feature; ++c) {
            double v = 0.0;
            if (!try_parse_double(cells[c], v)) {
                throw ParseError("CSV line " + std::to_string(line_no) + ", column " + std::to_string(c + 1) + " ('" +
                                 header[c] + "'): cannot parse '" + std::string(trim(cells[c])) + "'");
            }
            values.push_back(v);
        }
        if (has_labels) {
            try {
                labels.push_back(parse_class(cells.back()));
            } catch (const ParseError& e) {
                throw ParseError("CSV line " + std::to_string(line_no) + ", class column: " + e.what());
            }
        }
    }
    return Dataset(std::move(schema), std::move(values), std::move(labels), std::move(meta));
}

inline Dataset load_csv(const std::string& path, bool has_labels) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    return read_csv(in, has_labels);
}

/// Inverse of read_csv. Features use the shortest round-trip decimal form,
/// so write -> read reproduces every value bit for bit.
inline void write_csv(std::ostream& out, const Dataset& d) {
    const auto& meta = d.metadata();
    bool first = true;
    auto sep = [&] {
        if (!first) out << ',';
        first = false;
    };
    if (!meta.serials.empty()) {
        sep();
        out << "S No.";
    }
    if (!meta.timestamps.empty()) {
        sep();
        out << "Time Stamp";
    }
    for (const auto& c : d.schema()) {
        sep();
        out << c.name;
    }
    if (d.labeled() && !d.labels().empty()) {
        sep();
        out << "class";
    }
    out << '\n';
    for (std::size_t i = 0; i < d.rows(); ++i) {
        first = true;
        if (!meta.serials.empty()) {
            sep();
            out << meta.serials[i];
        }
        if (!meta.timestamps.empty()) {
            sep();
            out << meta.timestamps[i];
        }
        for (double v : d.row(i)) {
            sep();
            out << format_double(v);
        }
        if (!d.labels().empty()) {
            sep();
            out << class_name(d.label(i));
        }
        out << '\n';
    }
}

inline void save_csv(const std::string& path, const Dataset& d) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    write_csv(out, d);
}

// ---------------------------------------------------------------------------
// Synthetic sensor data

struct SyntheticColumn {
    std::string name;
    std::string unit;
    double mean = 0.0;
    double stddev = 1.0;
    /// Failure-class mean offset, in multiples of stddev.
    double failure_shift = 0.0;
};

struct SyntheticGenConfig {
    std::size_t row_count = 5000;
    double failure_fraction = 0.13;
    std::uint64_t seed = 0;
    std::vector<SyntheticColumn> columns;

    void validate() const {
        if (row_count == 0) throw ConfigError("synthetic row_count must be positive");
        if (!(failure_fraction > 0.0 && failure_fraction < 1.0)) {
            throw ConfigError("synthetic failure_fraction must lie strictly between 0 and 1");
        }
        if (columns.empty()) throw ConfigError("synthetic config needs at least one column");
        for (const auto& c : columns) {
            if (!(c.stddev > 0.0) || !std::isfinite(c.mean) || !std::isfinite(c.failure_shift)) {
                throw ConfigError("synthetic column '" + c.name + "' needs finite mean/shift and stddev > 0");
            }
        }
    }
};

/// Normal-condition column statistics (sample mean, sample stddev) of the
/// 19 reference readings shipped in data/sample_readings.csv. Failure rows
/// shift both pressure columns and the gas detector by +2 stddev.
inline std::vector<SyntheticColumn> default_sensor_columns(double shift = 2.0) {
    return {
        {"Operating Temperature (in Deg.)", "Deg.", 95.60526315789475, 3.1535647702614122, 0.0},
        {"Operating Pressure (in psi)", "psi", 77.23736842105262, 1.8394136810566781, shift},
        {"Working Pressure (in psi)", "psi", 77.95157894736842, 1.6775122558184339, shift},
        {"Gas Detector (in PPM)", "PPM", 9.98421052631579, 0.2672143498615483, shift},
        {"Flow Rate (cc/min)", "cc/min", 362.89473684210526, 20.335777822574745, 0.0},
    };
}

inline SyntheticGenConfig default_synthetic_config(std::size_t rows = 5000, double failure_fraction = 0.13,
                                                   std::uint64_t seed = 0) {
    return SyntheticGenConfig{rows, failure_fraction, seed, default_sensor_columns()};
}

/// Number of failure rows the generator emits for a config.
inline std::size_t synthetic_failure_count(const SyntheticGenConfig& cfg) {
    return static_cast<std::size_t>(std::llround(static_cast<double>(cfg.row_count) * cfg.failure_fraction));
}

/// Labeled Gaussian sensor data. Class membership is a seeded shuffle of
/// exactly round(rows * failure_fraction) failure rows; features are drawn
/// per class and column from the configured normals.
inline Dataset generate_synthetic(const SyntheticGenConfig& cfg) {
    cfg.validate();
    const auto n_fail = std::min(synthetic_failure_count(cfg), cfg.row_count);
    std::vector<int> labels(cfg.row_count, kNormal);
    std::fill(labels.end() - static_cast<std::ptrdiff_t>(n_fail), labels.end(), kFailure);
    auto rng = make_rng(cfg.seed);
    shuffle_in_place(labels, rng);

    const auto d = cfg.columns.size();
    std::vector<double> values(cfg.row_count * d);
    std::normal_distribution<double> unit{0.0, 1.0};
    for (std::size_t i = 0; i < cfg.row_count; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const auto& c = cfg.columns[j];
            double mean = c.mean + (labels[i] == kFailure ? c.failure_shift * c.stddev : 0.0);
            values[i * d + j] = mean + c.stddev * unit(rng);
        }
    }
    std::vector<Column> schema;
    for (const auto& c : cfg.columns) schema.push_back({c.name, c.unit});
    return Dataset(std::move(schema), std::move(values), std::move(labels));
}

// ---------------------------------------------------------------------------
// Splitting and summaries

/// Train/test partition. The train part has floor(fraction * rows) rows
/// (with a 1e-9 guard so 0.29 * 100 counts as 29). Without shuffle the
/// first rows form the train part.
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& d, double train_fraction, std::uint64_t seed,
                                                    bool shuffle = true) {
    if (d.empty()) throw EmptyDatasetError("cannot split an empty dataset");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train fraction must lie in (0, 1)");
    const auto n = d.rows();
    const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n) + 1e-9));
    auto idx = iota_indices(n);
    if (shuffle) {
        auto rng = make_rng(seed);
        shuffle_in_place(idx, rng);
    }
    std::span<const std::size_t> all(idx);
    return {d.subset(all.first(n_train)), d.subset(all.subspan(n_train))};
}

struct ClassShare {
    std::size_t count = 0;
    double fraction = 0.0;
};

/// Count and fraction for every class present in `d`.
inline std::map<int, ClassShare> class_distribution(const Dataset& d) {
    d.require_labels();
    std::map<int, ClassShare> out;
    if (d.empty()) return out;
    auto counts = d.class_counts();
    for (std::size_t c = 0; c < kClassCount; ++c) {
        if (counts[c] == 0) continue;
        out[static_cast<int>(c)] = {counts[c], static_cast<double>(counts[c]) / static_cast<double>(d.rows())};
    }
    return out;
}

// ---------------------------------------------------------------------------
// Standardization

/// Per-column affine map to zero mean / unit variance, fitted on one dataset
/// (the training split) and applied unchanged to any other.
class Standardizer {
public:
    Standardizer() = default;
    Standardizer(std::vector<double> mean, std::vector<double> scale)
        : mean_(std::move(mean)), scale_(std::move(scale)) {
        if (mean_.size() != scale_.size()) throw ShapeError("standardizer mean/scale size mismatch");
    }

    static Standardizer fit(const Dataset& d) {
        const auto n = d.rows();
        const auto k = d.arity();
        std::vector<double> mean(k, 0.0), scale(k, 1.0);
        if (n == 0) return {mean, scale};
        for (std::size_t i = 0; i < n; ++i) {
            auto r = d.row(i);
            for (std::size_t j = 0; j < k; ++j) mean[j] += r[j];
        }
        for (auto& m : mean) m /= static_cast<double>(n);
        std::vector<double> ss(k, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto r = d.row(i);
            for (std::size_t j = 0; j < k; ++j) ss[j] += (r[j] - mean[j]) * (r[j] - mean[j]);
        }
        for (std::size_t j = 0; j < k; ++j) {
            double sd = std::sqrt(ss[j] / static_cast<double>(n));
            scale[j] = sd > 1e-12 ? sd : 1.0;
        }
        return {mean, scale};
    }

    std::size_t arity() const { return mean_.size(); }
    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& scale() const { return scale_; }

    void apply(std::span<const double> x, std::span<double> out) const {
        if (x.size() != arity() || out.size() != arity()) throw ShapeError("standardizer arity mismatch");
        for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean_[j]) / scale_[j];
    }

    std::vector<double> apply(std::span<const double> x) const {
        std::vector<double> out(x.size());
        apply(x, out);
        return out;
    }

    Dataset apply(const Dataset& d) const {
        if (d.arity() != arity()) throw ShapeError("standardizer arity mismatch");
        std::vector<double> vals(d.values().size());
        for (std::size_t i = 0; i < d.rows(); ++i) {
            apply(d.row(i), std::span<double>(vals.data() + i * arity(), arity()));
        }
        return d.with_values(std::move(vals));
    }

    void write(TokenWriter& w) const {
        w.key("standardizer").count(arity()).end();
        w.key("mean").nums(mean_).end();
        w.key("scale").nums(scale_).end();
    }

    static Standardizer read(TokenReader& r) {
        r.expect("standardizer");
        auto k = r.count();
        r.expect("mean");
        auto mean = r.nums(k);
        r.expect("scale");
        auto scale = r.nums(k);
        return {std::move(mean), std::move(scale)};
    }

private:
    std::vector<double> mean_;
    std::vector<double> scale_;
};

}  // namespace rigline
