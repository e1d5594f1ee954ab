#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cap/attributes.hpp"
#include "cap/cap_map.hpp"
#include "cap/gmm.hpp"
#include "cap/objectives.hpp"
#include "cap/synth.hpp"
#include "cap/types.hpp"

namespace cap {

// Doubles are written with 17 significant digits so values round-trip
// exactly and repeated runs produce identical bytes.
std::string format_double(double v);
double parse_double(const std::string& s, const std::string& context);
long parse_long(const std::string& s, const std::string& context);

// Writes to a temporary sibling and renames it into place.
void atomic_write(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

// CSV schemas.  Headers are fixed and checked on read.
//   logits:      id,label,o_0,...,o_{K-1}      (label -1 = unlabeled)
//   dataset:     label,x_0,...,x_{d-1}
//   attributes:  class,<name_1>,...,<name_n>
//   noise:       index,old_label,new_label
//   sweep:       pi,sigma_ratio,delta,rbal_mean,rbal_sd,is_optimal
std::string logits_to_csv(const LogitMatrix& logits);
LogitMatrix logits_from_csv(const std::string& text);
std::string dataset_to_csv(const LabeledDataset& ds);
LabeledDataset dataset_from_csv(const std::string& text);
std::string attrs_to_csv(const AttributeTable& attrs);
AttributeTable attrs_from_csv(const std::string& text);
std::string noise_to_csv(const std::vector<NoiseRecordEntry>& flips);
std::vector<NoiseRecordEntry> noise_from_csv(const std::string& text);
std::string sweep_to_csv(const std::vector<SweepRow>& rows);

nlohmann::json to_json(const BasisSet& basis);
BasisSet basis_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CapWeights& w);
CapWeights cap_weights_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StrategyVectors& s);
StrategyVectors strategies_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ObjectiveSpec& spec);
ObjectiveSpec objective_from_json(const nlohmann::json& j);

Eigen::VectorXd vector_from_json(const nlohmann::json& j,
                                 const std::string& context);
nlohmann::json to_json(const Eigen::VectorXd& v);

// Throws ConfigError when j carries a key outside allowed, or misses one of
// required.  Configs are strict so typos fail loudly.
void check_keys(const nlohmann::json& j, const std::string& context,
                const std::vector<std::string>& required,
                const std::vector<std::string>& optional);

// FNV-1a over the serialized text; stable across runs and platforms.
std::uint64_t stable_hash(const std::string& text);

}  // namespace cap
