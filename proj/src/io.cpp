#include "pvko/io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "pvko/errors.hpp"

namespace pvko {

// ---------------------------------------------------------------------------------------------
// JsonNode

void JsonNode::fail(const std::string & msg) const
{
  throw ConfigError("field '" + (path_.empty() ? std::string("<root>") : path_) + "': " + msg);
}

bool JsonNode::has(const std::string & key) const
{
  return j_->is_object() && j_->contains(key) && !(*j_)[key].is_null();
}

JsonNode JsonNode::at(const std::string & key) const
{
  if (!j_->is_object()) { fail("expected an object"); }
  const auto it = j_->find(key);
  const std::string child = path_.empty() ? key : path_ + "." + key;
  if (it == j_->end()) { throw ConfigError("field '" + child + "': required field is missing"); }
  return {*it, child};
}

JsonNode JsonNode::at(std::size_t index) const
{
  if (!j_->is_array()) { fail("expected an array"); }
  if (index >= j_->size()) { fail("index " + std::to_string(index) + " out of range"); }
  return {(*j_)[index], path_ + "[" + std::to_string(index) + "]"};
}

std::size_t JsonNode::size() const
{
  if (!j_->is_array()) { fail("expected an array"); }
  return j_->size();
}

double JsonNode::number() const
{
  if (!j_->is_number()) { fail("expected a number"); }
  const double v = j_->get<double>();
  if (!std::isfinite(v)) { fail("expected a finite number"); }
  return v;
}

double JsonNode::positive() const
{
  const double v = number();
  if (!(v > 0)) { fail("expected a positive number"); }
  return v;
}

long JsonNode::integer() const
{
  if (!j_->is_number_integer()) { fail("expected an integer"); }
  return j_->get<long>();
}

std::uint64_t JsonNode::u64() const
{
  if (j_->is_number_unsigned()) { return j_->get<std::uint64_t>(); }
  if (j_->is_number_integer() && j_->get<long long>() >= 0) { return static_cast<std::uint64_t>(j_->get<long long>()); }
  fail("expected a nonnegative integer");
}

bool JsonNode::boolean() const
{
  if (!j_->is_boolean()) { fail("expected true or false"); }
  return j_->get<bool>();
}

std::string JsonNode::string() const
{
  if (!j_->is_string()) { fail("expected a string"); }
  return j_->get<std::string>();
}

std::vector<double> JsonNode::numbers() const
{
  if (!j_->is_array()) { fail("expected an array of numbers"); }
  std::vector<double> out;
  for (std::size_t i = 0; i < j_->size(); ++i) { out.push_back(at(i).number()); }
  return out;
}

Eigen::VectorXd JsonNode::vector() const
{
  const auto v = numbers();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::MatrixXd JsonNode::matrix() const
{
  if (!j_->is_array()) { fail("expected a matrix (array of rows)"); }
  const auto rows = static_cast<Eigen::Index>(j_->size());
  if (rows == 0) { return {}; }
  const auto cols = static_cast<Eigen::Index>(at(0).size());
  Eigen::MatrixXd M(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const JsonNode row = at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(row.size()) != cols) {
      row.fail("row has " + std::to_string(row.size()) + " entries, expected " + std::to_string(cols));
    }
    for (Eigen::Index j = 0; j < cols; ++j) { M(i, j) = row.at(static_cast<std::size_t>(j)).number(); }
  }
  return M;
}

double JsonNode::number_or(const std::string & key, double fallback) const
{
  return has(key) ? at(key).number() : fallback;
}

long JsonNode::integer_or(const std::string & key, long fallback) const
{
  return has(key) ? at(key).integer() : fallback;
}

bool JsonNode::boolean_or(const std::string & key, bool fallback) const
{
  return has(key) ? at(key).boolean() : fallback;
}

std::string JsonNode::string_or(const std::string & key, const std::string & fallback) const
{
  return has(key) ? at(key).string() : fallback;
}

void JsonNode::only(std::initializer_list<const char *> allowed) const
{
  if (!j_->is_object()) { fail("expected an object"); }
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j_->begin(); it != j_->end(); ++it) {
    if (!ok.contains(it.key())) {
      throw ConfigError("field '" + (path_.empty() ? it.key() : path_ + "." + it.key()) + "': unknown field");
    }
  }
}

// ---------------------------------------------------------------------------------------------

Json load_json(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) { throw IoError("cannot open " + path); }
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return Json::parse(buf.str());
  } catch (const Json::parse_error & e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_json(const std::string & path, const Json & j)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) { throw IoError("cannot open " + path + " for writing"); }
  out << j.dump(2) << '\n';
  if (!out) { throw IoError("failed writing " + path); }
}

Json to_json(const Eigen::MatrixXd & M)
{
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) { row.push_back(M(i, j)); }
    rows.push_back(std::move(row));
  }
  return rows;
}

Json to_json(const Eigen::VectorXd & v)
{
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) { out.push_back(v(i)); }
  return out;
}

namespace {

/// q x 0 matrices serialize as q empty rows; a bare [] means no rows at all.
Eigen::MatrixXd matrix_with_rows(const JsonNode & n, Eigen::Index rows)
{
  Eigen::MatrixXd M = n.matrix();
  if (M.size() == 0) { return Eigen::MatrixXd(rows, 0); }
  return M;
}

template <class F>
auto rethrow_as_config(const JsonNode & n, F && f) -> decltype(f())
{
  try {
    return f();
  } catch (const InvalidArgument & e) {
    n.fail(e.what());
  }
}

}  // namespace

Json to_json(const LiftingBasis & b)
{
  Json j;
  j["state_dim"] = b.state_dim();
  if (b.kind() == BasisKind::Monomial) {
    j["kind"] = "monomial";
    Json ex = Json::array();
    for (Eigen::Index c = 0; c < b.exponents().cols(); ++c) {
      Json e = Json::array();
      for (Eigen::Index r = 0; r < b.exponents().rows(); ++r) { e.push_back(b.exponents()(r, c)); }
      ex.push_back(std::move(e));
    }
    j["exponents"] = std::move(ex);
  } else {
    j["kind"] = "thin_plate";
    j["append_state"] = b.append_state();
    j["seed"] = b.seed();
    j["centers"] = to_json(Eigen::MatrixXd(b.centers().transpose()));
  }
  return j;
}

LiftingBasis basis_from_json(const JsonNode & n)
{
  const std::string kind = n.at("kind").string();
  const auto dim = n.at("state_dim").integer();
  if (dim < 1) { n.at("state_dim").fail("expected a positive integer"); }
  if (kind == "monomial") {
    const JsonNode ex = n.at("exponents");
    Eigen::MatrixXi E(dim, static_cast<Eigen::Index>(ex.size()));
    for (std::size_t c = 0; c < ex.size(); ++c) {
      const JsonNode e = ex.at(c);
      if (static_cast<long>(e.size()) != dim) { e.fail("exponent vector must have state_dim entries"); }
      for (std::size_t r = 0; r < e.size(); ++r) {
        E(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = static_cast<int>(e.at(r).integer());
      }
    }
    return rethrow_as_config(n, [&] { return LiftingBasis::monomial(static_cast<int>(dim), E); });
  }
  if (kind == "thin_plate") {
    const Eigen::MatrixXd centers = n.at("centers").matrix().transpose();
    if (centers.rows() != dim) { n.at("centers").fail("centers must have state_dim coordinates"); }
    const bool append = n.boolean_or("append_state", false);
    const std::uint64_t seed = n.has("seed") ? n.at("seed").u64() : 0;
    return rethrow_as_config(n, [&] { return LiftingBasis::thin_plate_from_centers(centers, append, seed); });
  }
  n.at("kind").fail("unknown basis kind '" + kind + "' (expected monomial or thin_plate)");
}

Json to_json(const Zonotope & z)
{
  return {{"center", to_json(z.center())}, {"generators", to_json(z.generators())}};
}

Zonotope zonotope_from_json(const JsonNode & n)
{
  const Eigen::VectorXd c = n.at("center").vector();
  const Eigen::MatrixXd G = matrix_with_rows(n.at("generators"), c.size());
  return rethrow_as_config(n, [&] { return Zonotope(c, G); });
}

Json to_json(const HPolytope & p) { return {{"A", to_json(p.A())}, {"b", to_json(p.b())}}; }

HPolytope polytope_from_json(const JsonNode & n)
{
  if (n.has("lo") || n.has("hi")) {
    const Box b = box_from_json(n);
    return HPolytope::box(b.lo, b.hi);
  }
  const Eigen::MatrixXd A = n.at("A").matrix();
  const Eigen::VectorXd b = n.at("b").vector();
  return rethrow_as_config(n, [&] { return HPolytope(A, b); });
}

Box box_from_json(const JsonNode & n)
{
  Box b{n.at("lo").vector(), n.at("hi").vector()};
  rethrow_as_config(n, [&] {
    b.validate();
    return 0;
  });
  return b;
}

Json to_json(const PvkoModel & m)
{
  Json j;
  j["format"] = "pvko-model";
  j["version"] = 1;
  j["state_dim"] = m.state_dim();
  j["lifted_dim"] = m.lifted_dim();
  j["input_dim"] = m.input_dim();
  j["basis"] = to_json(m.basis());
  j["C"] = to_json(m.C());
  Json locals = Json::array();
  for (const auto & l : m.locals()) {
    locals.push_back({{"working_point", l.working_point}, {"rank", l.rank}, {"A", to_json(l.A)}, {"B", to_json(l.B)}});
  }
  j["locals"] = std::move(locals);
  j["training_residuals"] = m.training_residuals();
  j["disturbance"] = m.disturbance() ? to_json(*m.disturbance()) : Json(nullptr);
  return j;
}

PvkoModel model_from_json(const JsonNode & n)
{
  if (n.string_or("format", "") != "pvko-model") { n.fail("not a model document (format must be \"pvko-model\")"); }
  const LiftingBasis basis = basis_from_json(n.at("basis"));
  const Eigen::MatrixXd C = n.at("C").matrix();
  const JsonNode ln = n.at("locals");
  std::vector<LocalKoopman> locals;
  for (std::size_t i = 0; i < ln.size(); ++i) {
    const JsonNode l = ln.at(i);
    LocalKoopman k;
    k.working_point = l.at("working_point").number();
    k.A = l.at("A").matrix();
    k.B = matrix_with_rows(l.at("B"), k.A.rows());
    k.rank = static_cast<int>(l.integer_or("rank", 0));
    locals.push_back(std::move(k));
  }
  PvkoModel m = rethrow_as_config(n, [&] { return PvkoModel(std::move(locals), C, basis); });
  if (m.lifted_dim() != basis.lifted_dim()) { n.at("C").fail("column count differs from the basis dimension"); }
  if (n.has("training_residuals")) { m.set_training_residuals(n.at("training_residuals").numbers()); }
  if (n.has("disturbance")) {
    const JsonNode d = n.at("disturbance");
    rethrow_as_config(d, [&] {
      m.set_disturbance(zonotope_from_json(d));
      return 0;
    });
  }
  return m;
}

Json to_json(const TubeGain & g)
{
  Json j;
  j["K"] = to_json(g.K);
  j["P"] = to_json(g.P);
  j["margins"] = g.margins;
  j["rpi"] = g.rpi ? to_json(*g.rpi) : Json(nullptr);
  j["solver"] = {
    {"iterations", g.info.iterations},
    {"primal_residual", g.info.primal_residual},
    {"dual_residual", g.info.dual_residual},
    {"objective", g.info.objective},
    {"objective_kind", to_string(g.info.objective_kind)},
    {"external", g.info.external},
  };
  return j;
}

TubeGain gain_from_json(const JsonNode & n)
{
  TubeGain g;
  g.K = n.at("K").matrix();
  g.P = n.at("P").matrix();
  if (n.has("margins")) { g.margins = n.at("margins").numbers(); }
  if (n.has("rpi")) { g.rpi = zonotope_from_json(n.at("rpi")); }
  if (n.has("solver")) {
    const JsonNode s = n.at("solver");
    g.info.iterations = static_cast<int>(s.integer_or("iterations", 0));
    g.info.primal_residual = s.number_or("primal_residual", 0.0);
    g.info.dual_residual = s.number_or("dual_residual", 0.0);
    g.info.objective = s.number_or("objective", 0.0);
    g.info.external = s.boolean_or("external", false);
    if (s.has("objective_kind")) {
      g.info.objective_kind = gain_objective_from_string(s.at("objective_kind").string());
    }
  }
  return g;
}

Json to_json(const MpcConfig & cfg)
{
  Json j;
  j["format"] = "pvko-controller";
  j["version"] = 1;
  j["N"] = cfg.N;
  j["Qlift"] = to_json(cfg.Qlift);
  j["R"] = to_json(cfg.R);
  j["Pterm"] = to_json(cfg.terminal_weight());
  j["state_set"] = to_json(cfg.state_set);
  j["input_set"] = to_json(cfg.input_set);
  j["terminal"] = to_string(cfg.terminal);
  j["tightening"] = to_string(cfg.tightening);
  j["gain"] = to_json(cfg.gain);
  j["model"] = cfg.model ? to_json(*cfg.model) : Json(nullptr);
  return j;
}

MpcConfig controller_from_json(const JsonNode & n)
{
  if (n.string_or("format", "") != "pvko-controller") {
    n.fail("not a controller document (format must be \"pvko-controller\")");
  }
  MpcConfig cfg;
  const long N = n.at("N").integer();
  if (N < 1) { n.at("N").fail("horizon must be at least 1"); }
  cfg.N = static_cast<int>(N);
  cfg.Qlift = n.at("Qlift").matrix();
  cfg.R = n.at("R").matrix();
  if (n.has("Pterm")) { cfg.Pterm = n.at("Pterm").matrix(); }
  cfg.state_set = polytope_from_json(n.at("state_set"));
  cfg.input_set = polytope_from_json(n.at("input_set"));
  cfg.terminal = terminal_mode_from_string(n.string_or("terminal", "equality_to_origin"));
  cfg.tightening = tightening_from_string(n.string_or("tightening", "rpi"));
  cfg.gain = gain_from_json(n.at("gain"));
  cfg.model = std::make_shared<const PvkoModel>(model_from_json(n.at("model")));
  rethrow_as_config(n, [&] {
    validate(cfg);
    return 0;
  });
  return cfg;
}

}  // namespace pvko
