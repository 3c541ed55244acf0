#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "pvko/lifting.hpp"
#include "pvko/mpc.hpp"
#include "pvko/pvko.hpp"
#include "pvko/sets.hpp"
#include "pvko/synthesis.hpp"

namespace pvko {

using Json = nlohmann::json;

/**
 * @brief Read-only view of a JSON value that remembers its location, so every type or range
 * problem is reported as a ConfigError naming the offending field.
 */
class JsonNode
{
public:
  JsonNode(const Json & j, std::string path) : j_(&j), path_(std::move(path)) {}

  const Json & raw() const { return *j_; }
  const std::string & path() const { return path_; }

  bool has(const std::string & key) const;
  /// Required member; throws ConfigError when missing.
  JsonNode at(const std::string & key) const;
  JsonNode at(std::size_t index) const;
  std::size_t size() const;

  double number() const;
  double positive() const;
  long integer() const;
  std::uint64_t u64() const;
  bool boolean() const;
  std::string string() const;
  Eigen::VectorXd vector() const;
  std::vector<double> numbers() const;
  /// Row-major array of rows.
  Eigen::MatrixXd matrix() const;

  double number_or(const std::string & key, double fallback) const;
  long integer_or(const std::string & key, long fallback) const;
  bool boolean_or(const std::string & key, bool fallback) const;
  std::string string_or(const std::string & key, const std::string & fallback) const;

  /// Rejects members not in `allowed`.
  void only(std::initializer_list<const char *> allowed) const;

  [[noreturn]] void fail(const std::string & msg) const;

private:
  const Json * j_;
  std::string path_;
};

/// Parses a file; ConfigError carries the line and column of syntax errors, IoError when unreadable.
Json load_json(const std::string & path);
void write_json(const std::string & path, const Json & j);

Json to_json(const Eigen::MatrixXd & M);
Json to_json(const Eigen::VectorXd & v);

Json to_json(const LiftingBasis & b);
LiftingBasis basis_from_json(const JsonNode & n);

Json to_json(const Zonotope & z);
Zonotope zonotope_from_json(const JsonNode & n);

Json to_json(const HPolytope & p);
HPolytope polytope_from_json(const JsonNode & n);

Box box_from_json(const JsonNode & n);

Json to_json(const PvkoModel & m);
PvkoModel model_from_json(const JsonNode & n);

Json to_json(const TubeGain & g);
TubeGain gain_from_json(const JsonNode & n);

/// Controller bundle: MPC settings, tube gain and the embedded model.
Json to_json(const MpcConfig & cfg);
MpcConfig controller_from_json(const JsonNode & n);

}  // namespace pvko
