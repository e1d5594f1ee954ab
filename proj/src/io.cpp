#include "cap/io.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cap/errors.hpp"

namespace cap {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, const std::string& context) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0' || errno == ERANGE) {
    throw ParseError("bad number '" + s + "' in " + context);
  }
  return v;
}

long parse_long(const std::string& s, const std::string& context) {
  errno = 0;
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0' || errno == ERANGE) {
    throw ParseError("bad integer '" + s + "' in " + context);
  }
  return v;
}

void atomic_write(const std::filesystem::path& path,
                  const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out.good()) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw IoError("rename " + tmp.string() + " -> " + path.string() +
                  " failed: " + ec.message());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for " + path.string());
  return ss.str();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty() || line == "\r") continue;
    rows.push_back(split_csv_line(line));
  }
  if (rows.empty()) throw ParseError("empty csv document");
  return rows;
}

}  // namespace

std::string logits_to_csv(const LogitMatrix& logits) {
  logits.validate();
  std::ostringstream out;
  out << "id,label";
  for (int k = 0; k < logits.k(); ++k) out << ",o_" << k;
  out << "\n";
  for (int i = 0; i < logits.n(); ++i) {
    const int label =
        logits.labels ? (*logits.labels)[static_cast<std::size_t>(i)] : -1;
    out << i << "," << label;
    for (int k = 0; k < logits.k(); ++k) {
      out << "," << format_double(logits.values(i, k));
    }
    out << "\n";
  }
  return out.str();
}

LogitMatrix logits_from_csv(const std::string& text) {
  const auto rows = parse_csv(text);
  const auto& header = rows.front();
  if (header.size() < 3 || header[0] != "id" || header[1] != "label") {
    throw ParseError("logits csv must start with id,label,o_0,...");
  }
  const int k = static_cast<int>(header.size()) - 2;
  for (int j = 0; j < k; ++j) {
    if (header[static_cast<std::size_t>(j) + 2] != "o_" + std::to_string(j)) {
      throw ParseError("unexpected logits column '" +
                       header[static_cast<std::size_t>(j) + 2] + "'");
    }
  }
  LogitMatrix out;
  const int n = static_cast<int>(rows.size()) - 1;
  out.values.resize(n, k);
  std::vector<int> labels(static_cast<std::size_t>(n));
  bool any_labeled = false;
  for (int i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i) + 1];
    const std::string ctx = "logits row " + std::to_string(i);
    if (static_cast<int>(row.size()) != k + 2) {
      throw ParseError(ctx + " has " + std::to_string(row.size()) +
                       " fields, expected " + std::to_string(k + 2));
    }
    labels[static_cast<std::size_t>(i)] =
        static_cast<int>(parse_long(row[1], ctx));
    if (labels[static_cast<std::size_t>(i)] >= 0) any_labeled = true;
    for (int j = 0; j < k; ++j) {
      out.values(i, j) = parse_double(row[static_cast<std::size_t>(j) + 2], ctx);
    }
  }
  if (any_labeled) {
    for (int i = 0; i < n; ++i) {
      if (labels[static_cast<std::size_t>(i)] < 0 ||
          labels[static_cast<std::size_t>(i)] >= k) {
        throw ParseError("logits row " + std::to_string(i) +
                         " has label outside [0, K)");
      }
    }
    out.labels = std::move(labels);
  }
  return out;
}

std::string dataset_to_csv(const LabeledDataset& ds) {
  ds.validate();
  std::ostringstream out;
  out << "label";
  for (int j = 0; j < ds.dim(); ++j) out << ",x_" << j;
  out << "\n";
  for (int i = 0; i < ds.n(); ++i) {
    out << ds.labels[static_cast<std::size_t>(i)];
    for (int j = 0; j < ds.dim(); ++j) {
      out << "," << format_double(ds.features(i, j));
    }
    out << "\n";
  }
  return out.str();
}

LabeledDataset dataset_from_csv(const std::string& text) {
  const auto rows = parse_csv(text);
  const auto& header = rows.front();
  if (header.size() < 2 || header[0] != "label") {
    throw ParseError("dataset csv must start with label,x_0,...");
  }
  const int d = static_cast<int>(header.size()) - 1;
  for (int j = 0; j < d; ++j) {
    if (header[static_cast<std::size_t>(j) + 1] != "x_" + std::to_string(j)) {
      throw ParseError("unexpected dataset column '" +
                       header[static_cast<std::size_t>(j) + 1] + "'");
    }
  }
  LabeledDataset ds;
  const int n = static_cast<int>(rows.size()) - 1;
  if (n < 1) throw ParseError("dataset csv has no rows");
  ds.features.resize(n, d);
  ds.labels.resize(static_cast<std::size_t>(n));
  int max_label = 0;
  for (int i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i) + 1];
    const std::string ctx = "dataset row " + std::to_string(i);
    if (static_cast<int>(row.size()) != d + 1) {
      throw ParseError(ctx + " has wrong field count");
    }
    const long label = parse_long(row[0], ctx);
    if (label < 0) throw ParseError(ctx + " has negative label");
    ds.labels[static_cast<std::size_t>(i)] = static_cast<int>(label);
    max_label = std::max(max_label, static_cast<int>(label));
    for (int j = 0; j < d; ++j) {
      ds.features(i, j) = parse_double(row[static_cast<std::size_t>(j) + 1], ctx);
    }
  }
  ds.num_classes = max_label + 1;
  if (ds.num_classes < 2) {
    throw ParseError("dataset csv contains fewer than 2 classes");
  }
  return ds;
}

std::string attrs_to_csv(const AttributeTable& attrs) {
  attrs.validate();
  std::ostringstream out;
  out << "class";
  for (const auto& name : attrs.names) out << "," << name;
  out << "\n";
  for (int k = 0; k < attrs.k(); ++k) {
    out << k;
    for (int j = 0; j < attrs.n_attrs(); ++j) {
      out << "," << format_double(attrs.values(k, j));
    }
    out << "\n";
  }
  return out.str();
}

AttributeTable attrs_from_csv(const std::string& text) {
  const auto rows = parse_csv(text);
  const auto& header = rows.front();
  if (header.size() < 2 || header[0] != "class") {
    throw ParseError("attribute csv must start with class,<name>,...");
  }
  AttributeTable attrs;
  attrs.names.assign(header.begin() + 1, header.end());
  const int k = static_cast<int>(rows.size()) - 1;
  const int n = static_cast<int>(attrs.names.size());
  attrs.values.resize(k, n);
  for (int i = 0; i < k; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i) + 1];
    const std::string ctx = "attribute row " + std::to_string(i);
    if (static_cast<int>(row.size()) != n + 1) {
      throw ParseError(ctx + " has wrong field count");
    }
    if (parse_long(row[0], ctx) != i) {
      throw ParseError(ctx + " must carry class index " + std::to_string(i));
    }
    for (int j = 0; j < n; ++j) {
      attrs.values(i, j) = parse_double(row[static_cast<std::size_t>(j) + 1], ctx);
    }
  }
  attrs.validate();
  return attrs;
}

std::string noise_to_csv(const std::vector<NoiseRecordEntry>& flips) {
  std::ostringstream out;
  out << "index,old_label,new_label\n";
  for (const auto& f : flips) {
    out << f.index << "," << f.old_label << "," << f.new_label << "\n";
  }
  return out.str();
}

std::vector<NoiseRecordEntry> noise_from_csv(const std::string& text) {
  const auto rows = parse_csv(text);
  if (rows.front() !=
      std::vector<std::string>{"index", "old_label", "new_label"}) {
    throw ParseError("noise csv must start with index,old_label,new_label");
  }
  std::vector<NoiseRecordEntry> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    const std::string ctx = "noise row " + std::to_string(i - 1);
    if (row.size() != 3) throw ParseError(ctx + " has wrong field count");
    out.push_back({static_cast<int>(parse_long(row[0], ctx)),
                   static_cast<int>(parse_long(row[1], ctx)),
                   static_cast<int>(parse_long(row[2], ctx))});
  }
  return out;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "pi,sigma_ratio,delta,rbal_mean,rbal_sd,is_optimal\n";
  for (const auto& r : rows) {
    out << format_double(r.pi) << "," << format_double(r.sigma_ratio) << ","
        << format_double(r.delta) << "," << format_double(r.rbal_mean) << ","
        << format_double(r.rbal_sd) << "," << (r.is_optimal ? 1 : 0) << "\n";
  }
  return out.str();
}

void check_keys(const nlohmann::json& j, const std::string& context,
                const std::vector<std::string>& required,
                const std::vector<std::string>& optional) {
  if (!j.is_object()) throw ConfigError(context + " must be a json object");
  for (const auto& key : required) {
    if (!j.contains(key)) {
      throw ConfigError(context + " is missing required key '" + key + "'");
    }
  }
  for (const auto& item : j.items()) {
    const bool known =
        std::find(required.begin(), required.end(), item.key()) !=
            required.end() ||
        std::find(optional.begin(), optional.end(), item.key()) !=
            optional.end();
    if (!known) {
      throw ConfigError(context + " has unknown key '" + item.key() + "'");
    }
  }
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j,
                                 const std::string& context) {
  if (!j.is_array()) throw ConfigError(context + " must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  Eigen::Index i = 0;
  for (const auto& item : j) {
    if (!item.is_number()) throw ConfigError(context + " must hold numbers");
    v[i++] = item.get<double>();
  }
  return v;
}

nlohmann::json to_json(const Eigen::VectorXd& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

nlohmann::json to_json(const BasisSet& basis) {
  nlohmann::json fns = nlohmann::json::array();
  for (BasisFn fn : basis.functions) fns.push_back(basis_fn_name(fn));
  return {{"functions", fns}, {"beta", basis.beta}};
}

BasisSet basis_from_json(const nlohmann::json& j) {
  check_keys(j, "basis", {"functions"}, {"beta"});
  BasisSet basis;
  basis.functions.clear();
  if (!j["functions"].is_array()) {
    throw ConfigError("basis functions must be an array of names");
  }
  for (const auto& fn : j["functions"]) {
    basis.functions.push_back(basis_fn_from_name(fn.get<std::string>()));
  }
  if (j.contains("beta")) basis.beta = j["beta"].get<double>();
  basis.validate();
  return basis;
}

nlohmann::json to_json(const CapWeights& w) {
  return {{"w_omega", to_json(w.w_omega)},
          {"w_l", to_json(w.w_l)},
          {"w_delta", to_json(w.w_delta)}};
}

CapWeights cap_weights_from_json(const nlohmann::json& j) {
  check_keys(j, "weights", {"w_omega", "w_l", "w_delta"}, {});
  CapWeights w;
  w.w_omega = vector_from_json(j["w_omega"], "w_omega");
  w.w_l = vector_from_json(j["w_l"], "w_l");
  w.w_delta = vector_from_json(j["w_delta"], "w_delta");
  return w;
}

nlohmann::json to_json(const StrategyVectors& s) {
  return {{"omega", to_json(s.omega)},
          {"l", to_json(s.l)},
          {"delta", to_json(s.delta)}};
}

StrategyVectors strategies_from_json(const nlohmann::json& j) {
  check_keys(j, "strategies", {"omega", "l", "delta"}, {});
  StrategyVectors s;
  s.omega = vector_from_json(j["omega"], "omega");
  s.l = vector_from_json(j["l"], "l");
  s.delta = vector_from_json(j["delta"], "delta");
  s.validate();
  return s;
}

nlohmann::json to_json(const ObjectiveSpec& spec) {
  nlohmann::json j{{"variant", objective_kind_name(spec.kind)}};
  switch (spec.kind) {
    case ObjectiveKind::kCvar:
    case ObjectiveKind::kQuantile:
      j["a"] = spec.a;
      break;
    case ObjectiveKind::kSdevCombo:
      j["lambda"] = spec.lambda;
      break;
    case ObjectiveKind::kWeighted:
      j["weights"] = to_json(spec.weights);
      break;
    default:
      break;
  }
  return j;
}

ObjectiveSpec objective_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("variant")) {
    throw ConfigError("objective must be an object with a 'variant' key");
  }
  ObjectiveSpec spec;
  spec.kind = objective_kind_from_name(j["variant"].get<std::string>());
  switch (spec.kind) {
    case ObjectiveKind::kCvar:
    case ObjectiveKind::kQuantile:
      check_keys(j, "objective", {"variant", "a"}, {});
      spec.a = j["a"].get<double>();
      break;
    case ObjectiveKind::kSdevCombo:
      check_keys(j, "objective", {"variant", "lambda"}, {});
      spec.lambda = j["lambda"].get<double>();
      break;
    case ObjectiveKind::kWeighted:
      check_keys(j, "objective", {"variant", "weights"}, {});
      spec.weights = vector_from_json(j["weights"], "objective weights");
      break;
    default:
      check_keys(j, "objective", {"variant"}, {});
      break;
  }
  return spec;
}

std::uint64_t stable_hash(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace cap
