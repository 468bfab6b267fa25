#include "markerlab/table.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "markerlab/common.hpp"

namespace markerlab {

namespace {

// Reads one delimited record, honouring double-quoted fields. Returns false at
// end of input.
bool read_record(std::istream& in, char delim, std::vector<std::string>& fields) {
  fields.clear();
  if (in.peek() == std::char_traits<char>::eof()) return false;
  std::string field;
  bool quoted = false;
  char c;
  while (in.get(c)) {
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      break;
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  return true;
}

std::string quote_field(const std::string& text, char delim) {
  if (text.find_first_of(std::string{delim, '"', '\n', '\r'}) == std::string::npos) return text;
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::optional<double> parse_number(std::string_view text) {
  double value = 0.0;
  const auto* begin = text.data();
  const auto* end = text.data() + text.size();
  if (begin != end && *begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) return std::nullopt;
  return value;
}

}  // namespace

PatientTable::PatientTable(MarkerSchema schema, std::vector<std::vector<Cell>> columns)
    : schema_(std::move(schema)), columns_(std::move(columns)) {
  if (columns_.size() != schema_.size()) {
    fail(ErrorKind::kData, fmt::format("table has {} columns but schema has {} markers", columns_.size(), schema_.size()));
  }
  rows_ = columns_.empty() ? 0 : columns_.front().size();
  for (std::size_t c = 0; c < columns_.size(); ++c) {
    const auto& spec = schema_.markers()[c];
    if (columns_[c].size() != rows_) fail(ErrorKind::kData, fmt::format("ragged column '{}'", spec.name));
    for (const auto& cell : columns_[c]) {
      if (const auto* v = std::get_if<double>(&cell)) {
        if (spec.kind != MarkerKind::kNumeric) fail(ErrorKind::kData, fmt::format("numeric cell in categorical '{}'", spec.name));
        if (!std::isfinite(*v)) fail(ErrorKind::kData, fmt::format("non-finite cell in '{}'", spec.name));
      } else if (std::holds_alternative<std::string>(cell) && spec.kind != MarkerKind::kCategorical) {
        fail(ErrorKind::kData, fmt::format("label cell in numeric '{}'", spec.name));
      }
    }
  }
}

std::span<const Cell> PatientTable::column(std::string_view marker) const {
  const auto idx = schema_.find(marker);
  if (!idx) fail(ErrorKind::kNotFound, fmt::format("unknown marker '{}'", marker));
  return columns_[*idx];
}

std::size_t PatientTable::missing_count(std::size_t col) const {
  std::size_t n = 0;
  for (const auto& c : columns_[col]) n += is_missing(c) ? 1 : 0;
  return n;
}

std::size_t PatientTable::missing_count(std::string_view marker) const {
  const auto idx = schema_.find(marker);
  if (!idx) fail(ErrorKind::kNotFound, fmt::format("unknown marker '{}'", marker));
  return missing_count(*idx);
}

PatientTable PatientTable::select_rows(std::span<const std::size_t> rows) const {
  std::vector<std::vector<Cell>> cols(columns_.size());
  for (std::size_t c = 0; c < columns_.size(); ++c) {
    cols[c].reserve(rows.size());
    for (auto r : rows) cols[c].push_back(columns_[c].at(r));
  }
  return PatientTable(schema_, std::move(cols));
}

PatientTable PatientTable::without(std::span<const std::string> markers) const {
  std::vector<MarkerSpec> specs;
  std::vector<std::vector<Cell>> cols;
  for (std::size_t c = 0; c < columns_.size(); ++c) {
    const auto& spec = schema_.markers()[c];
    if (std::find(markers.begin(), markers.end(), spec.name) != markers.end()) continue;
    specs.push_back(spec);
    cols.push_back(columns_[c]);
  }
  return PatientTable(MarkerSchema(std::move(specs), schema_.version(), schema_.provenance()), std::move(cols));
}

PatientTable PatientTable::with_column(std::size_t col, MarkerSpec spec, std::vector<Cell> cells) const {
  auto specs = schema_.markers();
  specs.at(col) = std::move(spec);
  auto cols = columns_;
  cols.at(col) = std::move(cells);
  return PatientTable(MarkerSchema(std::move(specs), schema_.version(), schema_.provenance()), std::move(cols));
}

std::string PatientTable::fingerprint() const {
  Fingerprint fp;
  fp.add(schema_.fingerprint());
  fp.add(static_cast<std::uint64_t>(rows_));
  for (const auto& col : columns_) {
    for (const auto& cell : col) {
      if (const auto* v = std::get_if<double>(&cell)) {
        fp.add(std::uint64_t{1});
        fp.add(*v);
      } else if (const auto* s = std::get_if<std::string>(&cell)) {
        fp.add(std::uint64_t{2});
        fp.add(*s);
      } else {
        fp.add(std::uint64_t{0});
      }
    }
  }
  return fp.hex();
}

IngestResult ingest_csv(std::istream& in, const MarkerSchema& schema, const IngestOptions& options) {
  IngestResult result;
  std::vector<std::string> header;
  if (!read_record(in, options.delimiter, header)) fail(ErrorKind::kData, "empty data file (no header row)");
  for (auto& h : header) h = trim(h);
  if (!header.empty() && header.front().starts_with("\xEF\xBB\xBF")) header.front().erase(0, 3);

  // Bind each marker to a file column; markers sharing a header take
  // successive occurrences of it.
  std::map<std::string, std::vector<std::size_t>, std::less<>> occurrences;
  for (std::size_t i = 0; i < header.size(); ++i) occurrences[header[i]].push_back(i);
  std::map<std::string, std::size_t, std::less<>> taken;
  std::vector<std::optional<std::size_t>> binding(schema.size());
  std::vector<bool> used(header.size(), false);
  for (std::size_t m = 0; m < schema.size(); ++m) {
    const auto& key = schema.markers()[m].source_column();
    const auto it = occurrences.find(key);
    auto& k = taken[key];
    if (it != occurrences.end() && k < it->second.size()) {
      binding[m] = it->second[k];
      used[it->second[k]] = true;
      ++k;
    } else {
      result.warnings.push_back(fmt::format("marker '{}' not present in file; column set to missing", schema.markers()[m].name));
    }
  }
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (!used[i]) result.warnings.push_back(fmt::format("column '{}' not in schema; ignored", header[i]));
  }

  std::vector<std::vector<Cell>> columns(schema.size());
  std::vector<std::string> fields;
  std::size_t line = 1;
  std::size_t unknown_labels = 0;
  std::size_t bad_numbers = 0;
  while (read_record(in, options.delimiter, fields)) {
    ++line;
    if (fields.size() == 1 && trim(fields[0]).empty()) continue;  // blank line
    for (std::size_t m = 0; m < schema.size(); ++m) {
      const auto& spec = schema.markers()[m];
      if (!binding[m] || *binding[m] >= fields.size()) {
        columns[m].emplace_back(Missing{});
        continue;
      }
      const std::string text = trim(fields[*binding[m]]);
      if (text.empty()) {
        columns[m].emplace_back(Missing{});
      } else if (spec.kind == MarkerKind::kNumeric) {
        if (auto v = parse_number(text)) {
          columns[m].emplace_back(*v);
        } else {
          if (options.strict) {
            fail(ErrorKind::kData, fmt::format("unparseable numeric value '{}' at row {}, column '{}' (line {})", text,
                                               line - 2, header[*binding[m]], line));
          }
          ++bad_numbers;
          columns[m].emplace_back(Missing{});
        }
      } else if (spec.has_category(text)) {
        columns[m].emplace_back(text);
      } else {
        if (options.strict) {
          fail(ErrorKind::kData, fmt::format("unknown category '{}' at row {}, column '{}' (line {})", text, line - 2,
                                             header[*binding[m]], line));
        }
        ++unknown_labels;
        columns[m].emplace_back(Missing{});
      }
    }
  }
  if (bad_numbers > 0) result.warnings.push_back(fmt::format("{} unparseable numeric cells recorded as missing", bad_numbers));
  if (unknown_labels > 0) result.warnings.push_back(fmt::format("{} unknown category labels recorded as missing", unknown_labels));
  for (const auto& w : result.warnings) spdlog::warn("ingest: {}", w);
  result.table = PatientTable(schema, std::move(columns));
  return result;
}

IngestResult ingest_table(const std::filesystem::path& path, const MarkerSchema& schema, const IngestOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kData, fmt::format("cannot open data file '{}'", path.string()));
  return ingest_csv(in, schema, options);
}

void write_table(const PatientTable& table, std::ostream& out) {
  const auto& markers = table.schema().markers();
  for (std::size_t m = 0; m < markers.size(); ++m) {
    if (m > 0) out << ',';
    out << quote_field(markers[m].source_column(), ',');
  }
  out << '\n';
  for (std::size_t r = 0; r < table.row_count(); ++r) {
    for (std::size_t m = 0; m < markers.size(); ++m) {
      if (m > 0) out << ',';
      const auto& cell = table.cell(r, m);
      if (const auto* v = std::get_if<double>(&cell)) {
        out << fmt::format("{}", *v);
      } else if (const auto* s = std::get_if<std::string>(&cell)) {
        out << quote_field(*s, ',');
      }
    }
    out << '\n';
  }
}

void write_table(const PatientTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kData, fmt::format("cannot write data file '{}'", path.string()));
  write_table(table, out);
}

ValidationReport validate_ranges(const PatientTable& table) {
  ValidationReport report;
  const auto& markers = table.schema().markers();
  for (std::size_t m = 0; m < markers.size(); ++m) {
    const auto& spec = markers[m];
    if (spec.kind != MarkerKind::kNumeric) continue;
    const auto col = table.column(m);
    for (std::size_t r = 0; r < col.size(); ++r) {
      if (const auto* v = std::get_if<double>(&col[r]); v && !spec.range->contains(*v)) {
        report.violations.push_back({spec.name, r, *v});
      }
    }
  }
  return report;
}

nlohmann::json to_json(const ValidationReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& v : report.violations) rows.push_back({{"marker", v.marker}, {"row", v.row}, {"value", v.value}});
  return {{"ok", report.ok()}, {"violation_count", report.violations.size()}, {"violations", std::move(rows)}};
}

std::string default_positive_class(std::string_view target) {
  if (target == "last status") return "discharged";
  if (target == "AKI during hospitalization") return "true";
  return {};
}

TargetSelection select_target(const PatientTable& table, std::string_view target_name, std::string_view positive_class) {
  const auto& schema = table.schema();
  const auto idx = schema.find(target_name);
  if (!idx) fail(ErrorKind::kNotFound, fmt::format("unknown target marker '{}'", target_name));
  const auto& spec = schema.markers()[*idx];
  std::vector<std::string> labels_set;
  for (const auto& c : spec.categories) {
    if (c != kMissingCategory) labels_set.push_back(c);
  }
  if (spec.kind != MarkerKind::kCategorical || labels_set.size() != 2) {
    fail(ErrorKind::kUsage, fmt::format("target '{}' is not a binary categorical marker", target_name));
  }
  std::string positive(positive_class);
  if (positive.empty()) positive = default_positive_class(target_name);
  if (positive.empty()) positive = labels_set.back();
  if (std::find(labels_set.begin(), labels_set.end(), positive) == labels_set.end()) {
    fail(ErrorKind::kUsage, fmt::format("positive class '{}' is not a category of '{}'", positive, target_name));
  }

  TargetSelection out;
  out.target = std::string(target_name);
  out.positive_class = positive;

  std::vector<std::size_t> keep;
  const auto col = table.column(*idx);
  for (std::size_t r = 0; r < col.size(); ++r) {
    const auto* s = std::get_if<std::string>(&col[r]);
    if (s == nullptr || *s == kMissingCategory) {
      ++out.dropped_missing_target;
      continue;
    }
    keep.push_back(r);
    out.labels.push_back(*s == positive ? 1 : 0);
  }
  if (out.dropped_missing_target > 0) {
    spdlog::info("select_target: dropped {} rows with missing '{}'", out.dropped_missing_target, target_name);
  }

  std::vector<std::string> remove{std::string(target_name)};
  // Outcome markers recorded after the prediction point leak the label.
  if (target_name == "AKI during hospitalization" && schema.find("last status")) {
    out.eliminated.emplace_back("last status");
  }
  for (const auto& m : schema.markers()) {
    if (m.role == MarkerRole::kClinicianExcluded || (m.role == MarkerRole::kTarget && m.name != target_name)) {
      out.eliminated.push_back(m.name);
    }
  }
  remove.insert(remove.end(), out.eliminated.begin(), out.eliminated.end());
  out.features = table.select_rows(keep).without(remove);
  return out;
}

}  // namespace markerlab
