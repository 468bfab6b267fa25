#include "markerlab/model.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "markerlab/common.hpp"

namespace markerlab {

namespace {

constexpr int kModelFormatVersion = 1;
constexpr std::string_view kModelFormat = "markerlab.model";

using nlohmann::json;

json tree_to_json(const Tree& tree) {
  json nodes = json::array();
  for (const auto& n : tree.nodes) {
    nodes.push_back(json::array({n.feature, n.threshold, n.left, n.right, n.default_left, n.value, n.gain, n.cover, n.depth}));
  }
  return nodes;
}

Tree tree_from_json(const json& doc, std::size_t n_columns) {
  Tree tree;
  for (const auto& a : doc) {
    if (!a.is_array() || a.size() != 9) fail(ErrorKind::kData, "corrupted model document: malformed tree node");
    TreeNode n;
    n.feature = a[0].get<int>();
    n.threshold = a[1].get<double>();
    n.left = a[2].get<int>();
    n.right = a[3].get<int>();
    n.default_left = a[4].get<bool>();
    n.value = a[5].get<double>();
    n.gain = a[6].get<double>();
    n.cover = a[7].get<double>();
    n.depth = a[8].get<int>();
    tree.nodes.push_back(n);
  }
  const auto size = static_cast<int>(tree.nodes.size());
  if (size == 0) fail(ErrorKind::kData, "corrupted model document: empty tree");
  for (const auto& n : tree.nodes) {
    if (n.is_leaf()) continue;
    if (n.feature >= static_cast<int>(n_columns) || n.left <= 0 || n.right <= 0 || n.left >= size || n.right >= size) {
      fail(ErrorKind::kData, "corrupted model document: tree node references out of range");
    }
  }
  return tree;
}

}  // namespace

std::string_view to_string(ModelFamily family) {
  switch (family) {
    case ModelFamily::kGbdt:
      return "gbdt";
    case ModelFamily::kRandomForest:
      return "random_forest";
    case ModelFamily::kLogistic:
      return "logistic";
  }
  return "?";
}

ModelFamily parse_family(std::string_view text) {
  if (text == "gbdt") return ModelFamily::kGbdt;
  if (text == "random_forest" || text == "rf") return ModelFamily::kRandomForest;
  if (text == "logistic") return ModelFamily::kLogistic;
  fail(ErrorKind::kUsage, fmt::format("unknown model family '{}'", text));
}

std::string_view to_string(Growth growth) { return growth == Growth::kDepthwise ? "depthwise" : "leafwise"; }

namespace {
Growth parse_growth(std::string_view text) {
  if (text == "depthwise") return Growth::kDepthwise;
  if (text == "leafwise") return Growth::kLeafwise;
  fail(ErrorKind::kUsage, fmt::format("unknown growth policy '{}'", text));
}
}  // namespace

void HyperParams::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorKind::kUsage, "invalid hyperparameters: " + what); };
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) bad(fmt::format("learning_rate {} not in (0,1]", learning_rate));
  if (!(l2_lambda >= 0.0) || !std::isfinite(l2_lambda)) bad(fmt::format("l2_lambda {} < 0", l2_lambda));
  if (!(min_split_gain >= 0.0) || !std::isfinite(min_split_gain)) bad(fmt::format("min_split_gain {} < 0", min_split_gain));
  if (max_depth < 1) bad(fmt::format("max_depth {} < 1", max_depth));
  if (num_leaves < 2) bad(fmt::format("num_leaves {} < 2", num_leaves));
  if (n_estimators < 1) bad(fmt::format("n_estimators {} < 1", n_estimators));
  if (!(min_child_weight >= 0.0)) bad(fmt::format("min_child_weight {} < 0", min_child_weight));
  if (!(subsample > 0.0 && subsample <= 1.0)) bad(fmt::format("subsample {} not in (0,1]", subsample));
  if (max_features < 0) bad("max_features < 0");
}

json to_json(const HyperParams& hp) {
  return json{{"family", to_string(hp.family)},
              {"preset", hp.preset},
              {"learning_rate", hp.learning_rate},
              {"l2_lambda", hp.l2_lambda},
              {"min_split_gain", hp.min_split_gain},
              {"max_depth", hp.max_depth},
              {"num_leaves", hp.num_leaves},
              {"n_estimators", hp.n_estimators},
              {"min_child_weight", hp.min_child_weight},
              {"subsample", hp.subsample},
              {"growth", to_string(hp.growth)},
              {"bootstrap", hp.bootstrap},
              {"max_features", hp.max_features},
              {"seed", hp.seed}};
}

HyperParams hyperparams_from_json(const json& doc) {
  HyperParams hp;
  try {
    if (doc.contains("family")) hp.family = parse_family(doc.at("family").get<std::string>());
    hp.preset = doc.value("preset", hp.preset);
    hp.learning_rate = doc.value("learning_rate", hp.learning_rate);
    hp.l2_lambda = doc.value("l2_lambda", hp.l2_lambda);
    hp.min_split_gain = doc.value("min_split_gain", hp.min_split_gain);
    hp.max_depth = doc.value("max_depth", hp.max_depth);
    hp.num_leaves = doc.value("num_leaves", hp.num_leaves);
    hp.n_estimators = doc.value("n_estimators", hp.n_estimators);
    hp.min_child_weight = doc.value("min_child_weight", hp.min_child_weight);
    hp.subsample = doc.value("subsample", hp.subsample);
    if (doc.contains("growth")) hp.growth = parse_growth(doc.at("growth").get<std::string>());
    hp.bootstrap = doc.value("bootstrap", hp.bootstrap);
    hp.max_features = doc.value("max_features", hp.max_features);
    hp.seed = doc.value("seed", hp.seed);
  } catch (const json::exception& e) {
    fail(ErrorKind::kUsage, fmt::format("malformed hyperparameters: {}", e.what()));
  }
  hp.validate();
  return hp;
}

int Tree::leaf_for(std::span<const double> row, std::optional<double> sentinel) const {
  int k = 0;
  while (true) {
    const auto& n = nodes[static_cast<std::size_t>(k)];
    if (n.is_leaf()) return k;
    const double v = row[static_cast<std::size_t>(n.feature)];
    const bool left = (sentinel && v == *sentinel) ? n.default_left : v < n.threshold;
    k = left ? n.left : n.right;
  }
}

int Tree::depth() const {
  int d = 0;
  for (const auto& n : nodes) {
    if (n.is_leaf()) d = std::max(d, n.depth);
  }
  return d;
}

int Tree::leaf_count() const {
  return static_cast<int>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

std::vector<std::string> TrainedModel::markers() const {
  std::vector<std::string> out;
  for (const auto& c : columns) {
    if (out.empty() || out.back() != c.marker) out.push_back(c.marker);
  }
  return out;
}

std::string matrix_fingerprint(const DesignMatrix& x, std::span<const int> y) {
  Fingerprint fp;
  fp.add(static_cast<std::uint64_t>(x.rows()));
  for (const auto& c : x.columns()) fp.add(c.label);
  for (double v : x.values()) fp.add(v);
  for (int v : y) fp.add(static_cast<std::uint64_t>(v));
  return fp.hex();
}

void check_training_input(const DesignMatrix& x, std::span<const int> y) {
  if (y.size() != x.rows()) fail(ErrorKind::kUsage, "label count does not match design matrix rows");
  if (x.cols() == 0) fail(ErrorKind::kTraining, "design matrix has no columns");
  for (double v : x.values()) {
    if (!std::isfinite(v)) fail(ErrorKind::kData, "design matrix contains a non-finite value");
  }
  std::size_t pos = 0;
  for (int v : y) {
    if (v != 0 && v != 1) fail(ErrorKind::kData, "labels must be 0 or 1");
    pos += static_cast<std::size_t>(v);
  }
  if (pos < 2 || y.size() - pos < 2) {
    fail(ErrorKind::kTraining,
         fmt::format("degenerate training labels: {} positive, {} negative (need >= 2 each)", pos, y.size() - pos));
  }
}

TrainedModel train_model(const DesignMatrix& x, std::span<const int> y, const HyperParams& hp) {
  switch (hp.family) {
    case ModelFamily::kGbdt:
      return train_gbdt(x, y, hp);
    case ModelFamily::kRandomForest:
      return train_random_forest(x, y, hp);
    case ModelFamily::kLogistic:
      return train_logistic(x, y, hp);
  }
  fail(ErrorKind::kUsage, "unknown model family");
}

std::vector<double> predict_proba(const TrainedModel& model, const DesignMatrix& x) {
  if (x.cols() != model.columns.size()) {
    fail(ErrorKind::kUsage, fmt::format("column mismatch: model expects {} columns, got {}", model.columns.size(), x.cols()));
  }
  for (std::size_t c = 0; c < x.cols(); ++c) {
    if (x.columns()[c].label != model.columns[c].label) {
      fail(ErrorKind::kUsage, fmt::format("column mismatch at {}: model expects '{}', got '{}'", c,
                                          model.columns[c].label, x.columns()[c].label));
    }
  }
  std::vector<double> out(x.rows());
  switch (model.family) {
    case ModelFamily::kGbdt:
      for (std::size_t i = 0; i < x.rows(); ++i) {
        double raw = model.base_score;
        for (const auto& t : model.trees) raw += model.learning_rate * t.predict(x.row(i), model.sentinel);
        out[i] = sigmoid(raw);
      }
      break;
    case ModelFamily::kRandomForest:
      for (std::size_t i = 0; i < x.rows(); ++i) {
        double sum = 0.0;
        for (const auto& t : model.trees) sum += t.predict(x.row(i), model.sentinel);
        const double p = model.trees.empty() ? 0.5 : sum / static_cast<double>(model.trees.size());
        out[i] = std::clamp(p, 1e-12, 1.0 - 1e-12);
      }
      break;
    case ModelFamily::kLogistic: {
      if (!model.linear) fail(ErrorKind::kData, "logistic model without weights");
      const auto& lm = *model.linear;
      for (std::size_t i = 0; i < x.rows(); ++i) {
        double s = lm.bias;
        const auto row = x.row(i);
        for (std::size_t c = 0; c < row.size(); ++c) s += lm.weights[c] * (row[c] - lm.mean[c]) / lm.scale[c];
        out[i] = sigmoid(s);
      }
      break;
    }
  }
  return out;
}

std::vector<double> predict_table(const TrainedModel& model, const PatientTable& table) {
  if (!model.preprocessing) fail(ErrorKind::kUsage, "model carries no preprocessing; use predict_proba on a matrix");
  return predict_proba(model, model.preprocessing->apply(table));
}

json serialize_model(const TrainedModel& model) {
  json columns = json::array();
  for (const auto& c : model.columns) {
    columns.push_back({{"marker", c.marker}, {"label", c.label},
                       {"kind", c.kind == ColumnKind::kNumeric ? "numeric" : "indicator"}});
  }
  json trees = json::array();
  for (const auto& t : model.trees) trees.push_back(tree_to_json(t));
  json doc{{"format", kModelFormat},
           {"format_version", kModelFormatVersion},
           {"producer_version", kVersion},
           {"family", to_string(model.family)},
           {"base_score", model.base_score},
           {"learning_rate", model.learning_rate},
           {"columns", std::move(columns)},
           {"sentinel", model.sentinel ? json(*model.sentinel) : json(nullptr)},
           {"trees", std::move(trees)},
           {"meta",
            {{"hyperparams", to_json(model.meta.hyperparams)},
             {"data_fingerprint", model.meta.data_fingerprint},
             {"schema_fingerprint", model.meta.schema_fingerprint},
             {"n_rows", model.meta.n_rows},
             {"notes", model.meta.notes}}}};
  if (model.linear) {
    const auto& lm = *model.linear;
    doc["linear"] = {{"weights", lm.weights},       {"bias", lm.bias},
                     {"mean", lm.mean},             {"scale", lm.scale},
                     {"iterations", lm.iterations}, {"gradient_norm", lm.gradient_norm},
                     {"converged", lm.converged}};
  }
  if (model.preprocessing) doc["preprocessing"] = model.preprocessing->to_json();
  return doc;
}

TrainedModel deserialize_model(const json& doc) {
  if (!doc.is_object() || doc.value("format", std::string{}) != kModelFormat) {
    fail(ErrorKind::kData, "not a model document");
  }
  const int version = doc.value("format_version", -1);
  if (version != kModelFormatVersion) {
    fail(ErrorKind::kData, fmt::format("unsupported model format_version {} (expected {})", version, kModelFormatVersion));
  }
  TrainedModel model;
  try {
    model.family = parse_family(doc.at("family").get<std::string>());
    model.base_score = doc.at("base_score").get<double>();
    model.learning_rate = doc.at("learning_rate").get<double>();
    for (const auto& c : doc.at("columns")) {
      model.columns.push_back({c.at("marker").get<std::string>(), c.at("label").get<std::string>(),
                               c.at("kind").get<std::string>() == "numeric" ? ColumnKind::kNumeric : ColumnKind::kIndicator});
    }
    if (!doc.at("sentinel").is_null()) model.sentinel = doc.at("sentinel").get<double>();
    for (const auto& t : doc.at("trees")) model.trees.push_back(tree_from_json(t, model.columns.size()));
    const auto& meta = doc.at("meta");
    model.meta.hyperparams = hyperparams_from_json(meta.at("hyperparams"));
    model.meta.data_fingerprint = meta.at("data_fingerprint").get<std::string>();
    model.meta.schema_fingerprint = meta.at("schema_fingerprint").get<std::string>();
    model.meta.n_rows = meta.at("n_rows").get<std::size_t>();
    model.meta.notes = meta.at("notes").get<std::vector<std::string>>();
    if (doc.contains("linear")) {
      const auto& l = doc.at("linear");
      LinearModel lm;
      lm.weights = l.at("weights").get<std::vector<double>>();
      lm.bias = l.at("bias").get<double>();
      lm.mean = l.at("mean").get<std::vector<double>>();
      lm.scale = l.at("scale").get<std::vector<double>>();
      lm.iterations = l.at("iterations").get<int>();
      lm.gradient_norm = l.at("gradient_norm").get<double>();
      lm.converged = l.at("converged").get<bool>();
      const auto d = model.columns.size();
      if (lm.weights.size() != d || lm.mean.size() != d || lm.scale.size() != d) {
        fail(ErrorKind::kData, "corrupted model document: linear weights do not match columns");
      }
      model.linear = std::move(lm);
    }
    if (doc.contains("preprocessing")) model.preprocessing = Preprocessor::from_json(doc.at("preprocessing"));
  } catch (const json::exception& e) {
    fail(ErrorKind::kData, fmt::format("corrupted model document: {}", e.what()));
  }
  if (model.family == ModelFamily::kLogistic && !model.linear) {
    fail(ErrorKind::kData, "corrupted model document: logistic model without weights");
  }
  return model;
}

}  // namespace markerlab
