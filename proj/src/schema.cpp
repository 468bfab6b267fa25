#include "markerlab/schema.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "markerlab/common.hpp"

namespace markerlab {

namespace {

constexpr int kSchemaFormatVersion = 1;

MarkerKind parse_kind(const std::string& text) {
  if (text == "numeric") return MarkerKind::kNumeric;
  if (text == "categorical") return MarkerKind::kCategorical;
  fail(ErrorKind::kData, fmt::format("unknown marker kind '{}'", text));
}

MarkerRole parse_role(const std::string& text) {
  if (text == "feature") return MarkerRole::kFeature;
  if (text == "target") return MarkerRole::kTarget;
  if (text == "clinician_excluded") return MarkerRole::kClinicianExcluded;
  fail(ErrorKind::kData, fmt::format("unknown marker role '{}'", text));
}

MarkerSpec numeric(std::string name, double lo, double hi, std::string column = {}, std::string note = {}) {
  MarkerSpec spec;
  spec.name = std::move(name);
  spec.kind = MarkerKind::kNumeric;
  spec.range = NumericRange{lo, hi};
  spec.column = std::move(column);
  spec.note = std::move(note);
  return spec;
}

MarkerSpec categorical(std::string name, std::vector<std::string> categories) {
  MarkerSpec spec;
  spec.name = std::move(name);
  spec.kind = MarkerKind::kCategorical;
  std::sort(categories.begin(), categories.end());
  spec.categories = std::move(categories);
  return spec;
}

}  // namespace

bool MarkerSpec::has_category(std::string_view label) const {
  return std::binary_search(categories.begin(), categories.end(), label);
}

MarkerSchema::MarkerSchema(std::vector<MarkerSpec> markers, std::string version, std::string provenance)
    : markers_(std::move(markers)), version_(std::move(version)), provenance_(std::move(provenance)) {
  for (auto& m : markers_) {
    std::sort(m.categories.begin(), m.categories.end());
  }
  validate();
}

void MarkerSchema::validate() const {
  std::set<std::string, std::less<>> names;
  int targets = 0;
  for (const auto& m : markers_) {
    if (m.name.empty()) fail(ErrorKind::kData, "marker with empty name");
    if (!names.insert(m.name).second) fail(ErrorKind::kData, fmt::format("duplicate marker name '{}'", m.name));
    if (m.role == MarkerRole::kTarget) ++targets;
    if (m.kind == MarkerKind::kNumeric) {
      if (!m.range) fail(ErrorKind::kData, fmt::format("numeric marker '{}' has no range", m.name));
      if (!std::isfinite(m.range->min) || !std::isfinite(m.range->max) || m.range->min > m.range->max) {
        fail(ErrorKind::kData,
             fmt::format("invalid range [{}, {}] for marker '{}'", m.range->min, m.range->max, m.name));
      }
    } else {
      if (m.categories.empty()) fail(ErrorKind::kData, fmt::format("categorical marker '{}' has no categories", m.name));
      if (std::adjacent_find(m.categories.begin(), m.categories.end()) != m.categories.end()) {
        fail(ErrorKind::kData, fmt::format("duplicate category in marker '{}'", m.name));
      }
    }
  }
  if (targets > 1) fail(ErrorKind::kData, "schema declares more than one target marker");
}

std::optional<std::size_t> MarkerSchema::find(std::string_view name) const {
  for (std::size_t i = 0; i < markers_.size(); ++i) {
    if (markers_[i].name == name) return i;
  }
  return std::nullopt;
}

const MarkerSpec& MarkerSchema::at(std::string_view name) const {
  const auto idx = find(name);
  if (!idx) fail(ErrorKind::kNotFound, fmt::format("unknown marker '{}'", name));
  return markers_[*idx];
}

std::string MarkerSchema::fingerprint() const {
  Fingerprint fp;
  fp.add(schema_to_json(*this).dump());
  return fp.hex();
}

std::string_view to_string(MarkerKind kind) { return kind == MarkerKind::kNumeric ? "numeric" : "categorical"; }

std::string_view to_string(MarkerRole role) {
  switch (role) {
    case MarkerRole::kFeature:
      return "feature";
    case MarkerRole::kTarget:
      return "target";
    case MarkerRole::kClinicianExcluded:
      return "clinician_excluded";
  }
  return "feature";
}

nlohmann::json schema_to_json(const MarkerSchema& schema) {
  nlohmann::json markers = nlohmann::json::array();
  for (const auto& m : schema.markers()) {
    nlohmann::json entry{{"name", m.name}, {"kind", to_string(m.kind)}, {"role", to_string(m.role)}};
    if (m.range) entry["range"] = {m.range->min, m.range->max};
    if (m.kind == MarkerKind::kCategorical) entry["categories"] = m.categories;
    if (!m.column.empty()) entry["column"] = m.column;
    if (!m.note.empty()) entry["note"] = m.note;
    markers.push_back(std::move(entry));
  }
  return {{"format", "markerlab.schema"},
          {"format_version", kSchemaFormatVersion},
          {"version", schema.version()},
          {"provenance", schema.provenance()},
          {"markers", std::move(markers)}};
}

MarkerSchema schema_from_json(const nlohmann::json& doc) {
  try {
    if (doc.value("format_version", kSchemaFormatVersion) != kSchemaFormatVersion) {
      fail(ErrorKind::kData, fmt::format("unsupported schema format_version {}", doc["format_version"].dump()));
    }
    std::vector<MarkerSpec> markers;
    for (const auto& entry : doc.at("markers")) {
      MarkerSpec m;
      m.name = trim(entry.at("name").get<std::string>());
      m.kind = parse_kind(entry.at("kind").get<std::string>());
      m.role = parse_role(entry.value("role", std::string("feature")));
      if (entry.contains("range")) {
        const auto& r = entry.at("range");
        if (!r.is_array() || r.size() != 2) fail(ErrorKind::kData, fmt::format("range of '{}' must be [min, max]", m.name));
        m.range = NumericRange{r[0].get<double>(), r[1].get<double>()};
      }
      if (entry.contains("categories")) {
        for (const auto& c : entry.at("categories")) m.categories.push_back(trim(c.get<std::string>()));
      }
      m.column = entry.value("column", std::string());
      m.note = entry.value("note", std::string());
      markers.push_back(std::move(m));
    }
    return MarkerSchema(std::move(markers), doc.value("version", std::string("unversioned")),
                        doc.value("provenance", std::string()));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, fmt::format("malformed schema document: {}", e.what()));
  }
}

MarkerSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kData, fmt::format("cannot open schema file '{}'", path.string()));
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kData, fmt::format("cannot parse schema file '{}': {}", path.string(), e.what()));
  }
  return schema_from_json(doc);
}

void save_schema(const MarkerSchema& schema, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kData, fmt::format("cannot write schema file '{}'", path.string()));
  out << schema_to_json(schema).dump(2) << '\n';
}

MarkerSchema builtin_schema() {
  const std::string ast = "Aspartate aminotransferase in serum or plasma";
  std::vector<MarkerSpec> markers = {
      numeric("Invasive ventilation days", 0, 40),
      numeric("Length of stay", 1, 96),
      numeric("Oral temperature", 34, 39.8),
      numeric("Oxygen saturation in arterial blood by pulse", 55, 100),
      numeric("Respiratory rate", 11.0, 95),
      numeric("Heart rate beat by EKG", 6, 245),
      numeric("Systolic blood pressure", 55, 222),
      numeric("Mean blood pressure by non invasive", 40, 168),
      numeric("Neutrophils in blood by automated count", 0.36, 100),
      numeric("Lymphocytes in blood by automated count", 0.36, 100),
      numeric("Sodium [moles/volume] in serum or plasma", 100, 169),
      // The cohort export carries this header twice with different maxima;
      // both columns are kept and bound to the header positionally.
      numeric("AST (a)", 8, 2786, ast, "first occurrence of the duplicated AST header"),
      numeric("AST (b)", 8, 2909, ast, "second occurrence of the duplicated AST header"),
      numeric("Creatine kinase in serum or plasma", 11, 6139),
      numeric("Lactate in serum or plasma", 5, 23.8),
      numeric("Troponin T.cardiac in serum or plasma", 0.01, 1.81),
      numeric("Natriuretic peptide.B prohormone N-terminal in serum or plasma", 5, 267600),
      numeric("Procalcitonin in serum or plasma immunoassay", 0.02, 193.5),
      numeric("Fibrin D-dimer DDU in platelet poor plasma", 150, 63670),
      numeric("Ferritin [mass/volume] in serum or plasma", 5.3, 16291),
      numeric("Hemoglobin A1c in blood", 4.2, 17),
      numeric("BMI ratio", 11.95, 92.8),
      numeric("Potassium [moles/volume] in serum or plasma", 2, 7.7),
      numeric("Chloride [moles/volume] in serum or plasma", 60, 134),
      numeric("Bicarbonate [moles/volume] in serum", 6, 43),
      numeric("Glomerular filtration rate", 2, 120),
      numeric("Erythrocyte sedimentation rate", 5, 145),
      numeric("Cholesterol in LDL in serum or plasma", 12, 399),
      numeric("Cholesterol in VLDL [mass/volume] in serum", 8, 79),
      numeric("Triglyceride", 10, 3524),
      numeric("HDL", 10, 98),
  };
  const std::vector<std::string> yes_no = {"false", "true"};
  markers.push_back(categorical("gender", {"female", "male"}));
  markers.push_back(categorical("last status", {"deceased", "discharged"}));
  markers.push_back(categorical("age", {"18-29", "30-39", "40-49", "50-59", "60-69", "70-79", "80+"}));
  markers.push_back(categorical("is ICU", yes_no));
  markers.push_back(categorical("was ventilated", yes_no));
  markers.push_back(categorical("AKI during hospitalization", yes_no));
  markers.push_back(categorical("type of therapeutic received",
                                {"Therapeutic Heparin", "Prophylactic Heparin", "Other", "None"}));
  markers.push_back(categorical("diarrhea", yes_no));
  markers.push_back(categorical("vomiting", yes_no));
  markers.push_back(categorical("nausea", yes_no));
  markers.push_back(categorical("cough", yes_no));
  markers.push_back(categorical("was antibiotic received", yes_no));
  markers.push_back(categorical("other lung diseases", yes_no));
  markers.push_back(categorical("urine protein", {"negative", "trace", "1+", "2+", "3+"}));
  markers.push_back(categorical("smoking status", {"current", "former", "never"}));
  markers.push_back(categorical("abdominal pain", yes_no));
  return MarkerSchema(std::move(markers), "covid-biochem-1",
                      "Numeric ranges as published for the Stony Brook COVID-19 cohort. Category vocabularies "
                      "are placeholders; supply a schema document matching the export for real data.");
}

MarkerSchema resolve_schema(std::string_view ref) {
  if (ref.empty() || ref == "builtin") return builtin_schema();
  return load_schema(std::filesystem::path(ref));
}

}  // namespace markerlab
