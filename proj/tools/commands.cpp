#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <openssl/evp.h>

#include "pvko/edmd.hpp"
#include "pvko/errors.hpp"
#include "pvko/random.hpp"

#ifndef PVKO_VERSION
#define PVKO_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;

namespace pvko::cli {

namespace {

std::string utc_now()
{
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string sha256_bytes(const std::string & data)
{
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw NumericalError("SHA-256 digest failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) { hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]); }
  return hex.str();
}

std::string read_file(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) { throw IoError("cannot open " + path); }
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Run record: config digest, seeds, versions, timestamps and every output with its hash.
class Manifest
{
public:
  Manifest(std::string command, const std::string & config_path) : command_(std::move(command)), started_(utc_now())
  {
    if (!config_path.empty()) {
      doc_["config"] = {{"path", config_path}, {"sha256", sha256_bytes(read_file(config_path))}};
    }
    doc_["command"] = command_;
    doc_["module_versions"] = {{"pvko", PVKO_VERSION}};
    doc_["seeds"] = Json::object();
    doc_["diagnostics"] = Json::object();
  }

  Json & seeds() { return doc_["seeds"]; }
  Json & diagnostics() { return doc_["diagnostics"]; }

  void add_output(const fs::path & p)
  {
    outputs_.push_back({{"file", p.filename().string()}, {"sha256", sha256_file(p.string())}, {"bytes", fs::file_size(p)}});
  }

  void write(const fs::path & dir, const std::string & suffix = "")
  {
    doc_["outputs"] = outputs_;
    doc_["timestamps"] = {{"started", started_}, {"finished", utc_now()}};
    write_json((dir / ("manifest_" + command_ + suffix + ".json")).string(), doc_);
  }

private:
  std::string command_;
  std::string started_;
  Json doc_;
  Json outputs_ = Json::array();
};

fs::path prepare_out(const std::string & out)
{
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) { throw IoError("cannot create output directory " + out + ": " + ec.message()); }
  return fs::path(out);
}

JsonNode root(const Json & j) { return {j, ""}; }

Json load_config(const GlobalOptions & g)
{
  if (g.config.empty()) { throw ConfigError("--config is required for this command"); }
  return load_json(g.config);
}

Integrator parse_integrator(const JsonNode & n)
{
  const std::string s = n.string();
  if (s == "euler") { return Integrator::Euler; }
  if (s == "rk4") { return Integrator::Rk4; }
  n.fail("unknown integrator '" + s + "' (expected euler or rk4)");
}

std::string check_plant(const JsonNode & n, bool allow_lifted)
{
  const std::string s = n.string();
  if (s == "vdp" || s == "lorenz" || (allow_lifted && s == "lifted_model")) { return s; }
  n.fail(
    "unknown plant '" + s + "' (expected lorenz, vdp" + (allow_lifted ? std::string(" or lifted_model)") : ")"));
}

int plant_inputs(const std::string & plant) { return plant == "vdp" ? 1 : 0; }
int plant_states(const std::string & plant) { return plant == "vdp" ? 2 : 3; }

std::string fmt_number(double v)
{
  std::ostringstream s;
  s << v;
  return s.str();
}

struct CsvTable
{
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string & name, const std::string & path) const
  {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) { return i; }
    }
    throw ConfigError(path + ": missing column '" + name + "'");
  }
};

std::vector<std::string> split(const std::string & line)
{
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) { out.push_back(cell); }
  if (!line.empty() && line.back() == ',') { out.emplace_back(); }
  return out;
}

CsvTable read_csv(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) { throw IoError("cannot open " + path); }
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) { throw ConfigError(path + ": empty file"); }
  t.header = split(line);
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) { continue; }
    auto cells = split(line);
    if (cells.size() != t.header.size()) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) + " fields");
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

double parse_double(const std::string & s, const std::string & where)
{
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) { throw std::invalid_argument(s); }
    return v;
  } catch (const std::logic_error &) {
    throw ConfigError(where + ": not a number: '" + s + "'");
  }
}

std::string plot_script(const std::string & csv, const std::string & png, const std::vector<std::string> & header)
{
  std::vector<int> xs, us;
  int pcol = 0, cost = 0;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto & h = header[i];
    const int c = static_cast<int>(i) + 1;
    if (h.size() > 1 && h[0] == 'x' && std::isdigit(static_cast<unsigned char>(h[1]))) { xs.push_back(c); }
    if (h.size() > 1 && h[0] == 'u' && std::isdigit(static_cast<unsigned char>(h[1]))) { us.push_back(c); }
    if (h == "p") { pcol = c; }
    if (h == "stage_cost") { cost = c; }
  }
  std::ostringstream g;
  g << "# States, parameter, inputs and cumulative cost of " << csv << "\n"
    << "set datafile separator ','\n"
    << "set terminal pngcairo size 1200,900\n"
    << "set output '" << png << "'\n"
    << "set multiplot layout 2,2\n"
    << "set xlabel 't [s]'\n"
    << "set grid\n"
    << "set key autotitle columnhead\n";
  auto series = [&](const std::vector<int> & cols) {
    std::ostringstream s;
    for (std::size_t i = 0; i < cols.size(); ++i) {
      s << (i ? ", '' " : "'" + csv + "' ") << "using 1:" << cols[i] << " with lines title '"
        << header[static_cast<std::size_t>(cols[i] - 1)] << "'";
    }
    return s.str();
  };
  g << "set title 'States'\nplot " << series(xs) << "\n";
  g << "set title 'Parameter'\nplot '" << csv << "' using 1:" << pcol << " with lines title 'p'\n";
  if (!us.empty()) {
    g << "set title 'Inputs'\nplot " << series(us) << "\n";
  } else {
    g << "set multiplot next\n";
  }
  g << "set title 'Cumulative cost'\nacc = 0\nplot '" << csv << "' using 1:(acc = acc + column(" << cost
    << "), acc) with lines title 'J_c'\n";
  g << "unset multiplot\n";
  return g.str();
}

}  // namespace

std::string sha256_file(const std::string & path) { return sha256_bytes(read_file(path)); }

std::string point_file(const std::string & stem, double p) { return stem + "_p" + fmt_number(p) + ".csv"; }

int exit_code(const std::exception & e)
{
  if (dynamic_cast<const ConfigError *>(&e) || dynamic_cast<const InvalidArgument *>(&e)) { return 2; }
  if (dynamic_cast<const NumericalError *>(&e)) { return 3; }
  if (dynamic_cast<const IoError *>(&e)) { return 4; }
  return 1;
}

// ---------------------------------------------------------------------------------------------
// Config parsing

LiftingBasis BasisConfig::make(int state_dim) const
{
  if (kind == "monomial") { return LiftingBasis::monomial(state_dim, exponents); }
  return LiftingBasis::thin_plate(state_dim, num_centers, center_box, center_seed, append_state);
}

CollectionOptions CampaignConfig::collection() const
{
  CollectionOptions o;
  o.duration = duration;
  o.dt = dt;
  o.episode_length = episode_length;
  o.domain = domain;
  o.u_lo = u_lo;
  o.u_hi = u_hi;
  o.seed = seed;
  return o;
}

CollectionOptions CampaignConfig::validation() const
{
  CollectionOptions o = collection();
  o.duration = validation_duration;
  o.seed = stream_key(seed, 0x7a11d);
  return o;
}

namespace {

BasisConfig parse_basis(const JsonNode & n, int state_dim, const Box & fallback_box)
{
  BasisConfig b;
  b.kind = n.at("kind").string();
  if (b.kind == "monomial") {
    n.only({"kind", "exponents"});
    const JsonNode ex = n.at("exponents");
    if (ex.raw().is_string()) {
      if (ex.string() != "cubic_2d") { ex.fail("unknown exponent preset (expected cubic_2d or a list)"); }
      if (state_dim != 2) { ex.fail("cubic_2d needs a two-dimensional state"); }
      b.exponents = cubic_monomials_2d();
    } else {
      b.exponents.resize(state_dim, static_cast<Eigen::Index>(ex.size()));
      for (std::size_t c = 0; c < ex.size(); ++c) {
        const JsonNode e = ex.at(c);
        if (static_cast<int>(e.size()) != state_dim) { e.fail("exponent vector must have one entry per state"); }
        for (std::size_t r = 0; r < e.size(); ++r) {
          const long v = e.at(r).integer();
          if (v < 0) { e.at(r).fail("exponents must be nonnegative"); }
          b.exponents(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = static_cast<int>(v);
        }
      }
    }
    try {
      (void)LiftingBasis::monomial(state_dim, b.exponents);
    } catch (const InvalidArgument & e) {
      ex.fail(e.what());
    }
  } else if (b.kind == "thin_plate") {
    n.only({"kind", "num_centers", "domain", "seed", "append_state"});
    const long c = n.at("num_centers").integer();
    if (c < 1) { n.at("num_centers").fail("expected a positive integer"); }
    b.num_centers = static_cast<int>(c);
    b.center_box = n.has("domain") ? box_from_json(n.at("domain")) : fallback_box;
    if (b.center_box.dim() != state_dim) { n.fail("center domain dimension differs from the plant state"); }
    b.center_seed = n.has("seed") ? n.at("seed").u64() : 7;
    b.append_state = n.boolean_or("append_state", false);
  } else {
    n.at("kind").fail("unknown basis kind '" + b.kind + "' (expected monomial or thin_plate)");
  }
  return b;
}

}  // namespace

CampaignConfig parse_campaign(const JsonNode & n)
{
  n.only({"$schema", "description", "plant", "integrator", "dt", "working_points", "seed", "collection", "validation",
          "basis", "identification", "rmse_mc"});
  CampaignConfig c;
  c.plant = check_plant(n.at("plant"), false);
  if (n.has("integrator")) { c.integrator = parse_integrator(n.at("integrator")); }
  c.dt = n.at("dt").positive();
  c.working_points = n.at("working_points").numbers();
  if (c.working_points.empty()) { n.at("working_points").fail("at least one working point is required"); }
  {
    auto sorted = c.working_points;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      n.at("working_points").fail("working points must be distinct");
    }
  }
  if (n.has("seed")) { c.seed = n.at("seed").u64(); }
  const int nx = plant_states(c.plant);
  const int nu = plant_inputs(c.plant);

  const JsonNode col = n.at("collection");
  col.only({"duration", "episode_length", "domain", "input_box"});
  c.duration = col.at("duration").positive();
  c.episode_length = col.at("episode_length").positive();
  if (c.duration < c.dt) { col.at("duration").fail("shorter than one sampling interval"); }
  c.domain = box_from_json(col.at("domain"));
  if (c.domain.dim() != nx) { col.at("domain").fail("dimension differs from the plant state"); }
  if (nu > 0) {
    const Box ub = box_from_json(col.at("input_box"));
    if (ub.dim() != nu) { col.at("input_box").fail("dimension differs from the plant input"); }
    c.u_lo = ub.lo;
    c.u_hi = ub.hi;
  }
  if (n.has("validation")) {
    const JsonNode v = n.at("validation");
    v.only({"duration"});
    c.validation_duration = v.at("duration").positive();
  }
  c.basis = parse_basis(n.at("basis"), nx, c.domain);
  if (n.has("identification")) {
    const JsonNode id = n.at("identification");
    id.only({"truncation_tol", "disturbance_inflation"});
    c.truncation_tol = id.number_or("truncation_tol", c.truncation_tol);
    if (!(c.truncation_tol > 0 && c.truncation_tol < 1)) { id.at("truncation_tol").fail("expected a value in (0, 1)"); }
    c.disturbance_inflation = id.number_or("disturbance_inflation", c.disturbance_inflation);
    if (!(c.disturbance_inflation >= 1)) { id.at("disturbance_inflation").fail("expected a value >= 1"); }
  }
  if (n.has("rmse_mc")) {
    const JsonNode r = n.at("rmse_mc");
    r.only({"trials", "horizon_steps", "orders", "offset", "total_amplitude", "terms", "max_frequency", "initial_box",
            "burn_in", "seed"});
    PredictionCampaign p;
    p.working_points = c.working_points;
    p.collection = c.collection();
    p.center_box = c.basis.kind == "thin_plate" ? c.basis.center_box : c.domain;
    p.center_seed = c.basis.center_seed;
    p.append_state = c.basis.append_state;
    p.truncation_tol = c.truncation_tol;
    p.trials = static_cast<int>(r.integer_or("trials", p.trials));
    if (p.trials < 1) { r.at("trials").fail("expected a positive integer"); }
    p.horizon_steps = static_cast<int>(r.integer_or("horizon_steps", p.horizon_steps));
    if (p.horizon_steps < 1) { r.at("horizon_steps").fail("expected a positive integer"); }
    p.orders.clear();
    const JsonNode orders = r.at("orders");
    for (std::size_t i = 0; i < orders.size(); ++i) {
      const long o = orders.at(i).integer();
      if (o < 1) { orders.at(i).fail("expected a positive integer"); }
      p.orders.push_back(static_cast<int>(o));
    }
    if (p.orders.empty()) { orders.fail("at least one order is required"); }
    p.offset = r.number_or("offset", p.offset);
    p.total_amplitude = r.number_or("total_amplitude", p.total_amplitude);
    p.terms = static_cast<int>(r.integer_or("terms", p.terms));
    if (p.terms < 1) { r.at("terms").fail("expected a positive integer"); }
    p.max_frequency = r.number_or("max_frequency", p.max_frequency);
    p.initial_box = r.has("initial_box") ? box_from_json(r.at("initial_box")) : c.domain;
    if (p.initial_box.dim() != nx) { r.at("initial_box").fail("dimension differs from the plant state"); }
    p.burn_in = r.number_or("burn_in", p.burn_in);
    if (p.burn_in < 0) { r.at("burn_in").fail("expected a nonnegative duration"); }
    p.seed = r.has("seed") ? r.at("seed").u64() : c.seed;
    c.rmse_mc = p;
  }
  return c;
}

ControllerConfig parse_controller(const JsonNode & n)
{
  n.only({"$schema", "description", "name", "N", "Qx", "R", "state_set", "input_set", "terminal", "tightening",
          "objective", "s_cap", "rpi", "external_gain"});
  ControllerConfig c;
  c.name = n.string_or("name", c.name);
  const long N = n.at("N").integer();
  if (N < 1) { n.at("N").fail("horizon must be at least 1"); }
  c.N = static_cast<int>(N);
  c.Qx = n.at("Qx").matrix();
  if (c.Qx.rows() != c.Qx.cols() || c.Qx.rows() == 0) { n.at("Qx").fail("expected a square matrix"); }
  c.R = n.at("R").matrix();
  if (c.R.rows() != c.R.cols() || c.R.rows() == 0) { n.at("R").fail("expected a square matrix"); }
  c.state_set = polytope_from_json(n.at("state_set"));
  c.input_set = polytope_from_json(n.at("input_set"));
  if (c.state_set.dim() != c.Qx.rows()) { n.at("state_set").fail("dimension differs from Qx"); }
  if (c.input_set.dim() != c.R.rows()) { n.at("input_set").fail("dimension differs from R"); }
  if (n.has("terminal")) {
    try {
      c.terminal = terminal_mode_from_string(n.at("terminal").string());
    } catch (const ConfigError & e) {
      n.at("terminal").fail(e.what());
    }
  }
  if (n.has("tightening")) {
    try {
      c.tightening = tightening_from_string(n.at("tightening").string());
    } catch (const ConfigError & e) {
      n.at("tightening").fail(e.what());
    }
  }
  if (n.has("objective")) {
    try {
      c.objective = gain_objective_from_string(n.at("objective").string());
    } catch (const ConfigError & e) {
      n.at("objective").fail(e.what());
    }
  }
  if (n.has("s_cap")) { c.s_cap = n.at("s_cap").positive(); }
  if (n.has("rpi")) {
    const JsonNode r = n.at("rpi");
    r.only({"epsilon", "max_depth"});
    c.rpi.epsilon = r.number_or("epsilon", c.rpi.epsilon);
    if (!(c.rpi.epsilon > 0)) { r.at("epsilon").fail("expected a positive number"); }
    c.rpi.max_depth = static_cast<int>(r.integer_or("max_depth", c.rpi.max_depth));
    if (c.rpi.max_depth < 1) { r.at("max_depth").fail("expected a positive integer"); }
  }
  if (n.has("external_gain")) {
    const JsonNode e = n.at("external_gain");
    e.only({"K", "P"});
    c.external_K = e.at("K").matrix();
    c.external_P = e.at("P").matrix();
  }
  return c;
}

ParameterSignal::Variant parse_parameter_signal(const JsonNode & n)
{
  const std::string kind = n.at("kind").string();
  if (kind == "constant") {
    n.only({"kind", "value"});
    return ConstantSignal{n.at("value").number()};
  }
  if (kind == "random_walk") {
    n.only({"kind", "step_bound", "lo", "hi", "start", "seed"});
    RandomWalk r;
    r.step_bound = n.number_or("step_bound", r.step_bound);
    r.lo = n.number_or("lo", r.lo);
    r.hi = n.number_or("hi", r.hi);
    r.start = n.number_or("start", r.start);
    r.seed = n.has("seed") ? n.at("seed").u64() : 1;
    if (!(r.lo <= r.hi)) { n.fail("random walk range is empty (lo > hi)"); }
    if (!(r.step_bound >= 0)) { n.at("step_bound").fail("expected a nonnegative number"); }
    return r;
  }
  if (kind == "schedule") {
    n.only({"kind", "times", "values"});
    Schedule s{n.at("times").numbers(), n.at("values").numbers()};
    if (s.times.empty() || s.times.size() != s.values.size()) {
      n.fail("schedule needs matching, non-empty times and values");
    }
    return s;
  }
  if (kind == "sum_of_sines") {
    n.only({"kind", "offset", "amplitudes", "frequencies"});
    return SumOfSines{n.at("offset").number(), n.at("amplitudes").vector(), n.at("frequencies").vector()};
  }
  n.at("kind").fail("unknown parameter signal '" + kind + "' (expected constant, random_walk, schedule or sum_of_sines)");
}

ScenarioConfig parse_scenario(const JsonNode & n)
{
  n.only({"$schema", "description", "name", "plant", "integrator", "x0", "steps", "dt", "parameter", "Qx",
          "warm_start"});
  ScenarioConfig s;
  s.name = n.string_or("name", s.name);
  if (s.name.empty() || s.name.find_first_of("/\\") != std::string::npos) {
    n.at("name").fail("name must be a plain file-name fragment");
  }
  s.plant = check_plant(n.at("plant"), true);
  if (n.has("integrator")) { s.integrator = parse_integrator(n.at("integrator")); }
  s.x0 = n.at("x0").vector();
  s.steps = n.at("steps").integer();
  if (s.steps < 1) { n.at("steps").fail("expected a positive integer"); }
  s.dt = n.at("dt").positive();
  s.parameter = parse_parameter_signal(n.at("parameter"));
  if (n.has("Qx")) { s.Qx = n.at("Qx").matrix(); }
  s.warm_start = n.boolean_or("warm_start", true);
  try {
    (void)ParameterSignal(s.parameter, s.dt);
  } catch (const InvalidArgument & e) {
    n.at("parameter").fail(e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------------------------
// Commands

int cmd_collect(const GlobalOptions & g)
{
  const Json doc = load_config(g);
  CampaignConfig c = parse_campaign(root(doc));
  if (g.seed) { c.seed = *g.seed; }
  const auto plant = make_plant(c.plant, c.integrator);

  std::vector<SnapshotSet> train, valid;
  for (double p : c.working_points) {
    train.push_back(collect_identification_data(*plant, p, c.collection()));
    if (c.validation_duration > 0) { valid.push_back(collect_identification_data(*plant, p, c.validation())); }
  }

  const fs::path out = prepare_out(g.out);
  Manifest man("collect", g.config);
  man.seeds()["collection"] = c.seed;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const fs::path f = out / point_file("snapshots", c.working_points[i]);
    write_snapshot_csv(f.string(), train[i], c.dt);
    man.add_output(f);
    std::cout << "wrote " << f.string() << " (" << train[i].size() << " pairs)\n";
    if (!valid.empty()) {
      const fs::path v = out / point_file("validation", c.working_points[i]);
      write_snapshot_csv(v.string(), valid[i], c.dt);
      man.add_output(v);
    }
  }
  man.write(out);
  return 0;
}

int cmd_identify(const GlobalOptions & g, const std::string & data_dir, const std::string & kind)
{
  if (kind != "pvko" && kind != "ti" && kind != "both") {
    throw ConfigError("--kind must be pvko, ti or both (got '" + kind + "')");
  }
  const Json doc = load_config(g);
  const CampaignConfig c = parse_campaign(root(doc));
  const fs::path dir = data_dir.empty() ? fs::path(g.out) : fs::path(data_dir);

  std::vector<SnapshotSet> train, valid;
  for (double p : c.working_points) {
    const fs::path f = dir / point_file("snapshots", p);
    SnapshotSet s = read_snapshot_csv(f.string());
    if (s.state_dim() != plant_states(c.plant) || s.input_dim() != plant_inputs(c.plant)) {
      throw ConfigError(f.string() + ": column layout does not match plant '" + c.plant + "'");
    }
    s.working_point = p;
    train.push_back(std::move(s));
    const fs::path v = dir / point_file("validation", p);
    if (fs::exists(v)) {
      SnapshotSet vs = read_snapshot_csv(v.string());
      vs.working_point = p;
      valid.push_back(std::move(vs));
    }
  }
  if (!valid.empty() && valid.size() != train.size()) {
    throw ConfigError("validation data exists for some working points only");
  }
  const LiftingBasis basis = c.basis.make(plant_states(c.plant));
  IdentifyOptions opt;
  opt.truncation_tol = c.truncation_tol;

  std::vector<std::pair<std::string, PvkoModel>> models;
  if (kind != "ti") { models.emplace_back("pvko", identify_pvko(basis, train, opt)); }
  if (kind != "pvko") { models.emplace_back("ti", identify_time_invariant(basis, train, opt)); }
  for (auto & [name, m] : models) {
    if (!valid.empty()) { m.set_disturbance(estimate_disturbance_set(m, valid, c.disturbance_inflation)); }
  }

  const fs::path out = prepare_out(g.out);
  Manifest man("identify", g.config);
  for (const auto & [name, m] : models) {
    const fs::path f = out / ("model_" + name + ".json");
    write_json(f.string(), to_json(m));
    man.add_output(f);
    std::cout << name << ": " << m.num_points() << " working point(s), lifted dimension " << m.lifted_dim()
              << ", training residuals";
    for (double r : m.training_residuals()) { std::cout << ' ' << r; }
    if (m.disturbance()) { std::cout << ", disturbance radius " << m.disturbance()->radius(); }
    std::cout << '\n';
    man.diagnostics()[name] = {{"training_residuals", m.training_residuals()},
                               {"disturbance_radius", m.disturbance() ? Json(m.disturbance()->radius()) : Json(nullptr)}};
  }
  if (valid.empty()) { std::cerr << "warning: no validation data found; models carry no disturbance set\n"; }
  man.write(out);
  return 0;
}

int cmd_synthesize(const GlobalOptions & g, const std::string & model_path)
{
  const Json doc = load_config(g);
  const ControllerConfig cc = parse_controller(root(doc));
  if (model_path.empty()) { throw ConfigError("--model is required"); }
  const Json mdoc = load_json(model_path);
  auto model = std::make_shared<const PvkoModel>(model_from_json(JsonNode(mdoc, "")));
  if (cc.Qx.rows() != model->state_dim()) { throw ConfigError("field 'Qx': dimension differs from the model state"); }
  if (cc.R.rows() != model->input_dim()) { throw ConfigError("field 'R': dimension differs from the model input"); }

  MpcConfig cfg;
  cfg.model = model;
  cfg.N = cc.N;
  cfg.Qlift = lift_weights(cc.Qx, model->C());
  cfg.R = cc.R;
  cfg.state_set = cc.state_set;
  cfg.input_set = cc.input_set;
  cfg.terminal = cc.terminal;
  cfg.tightening = cc.tightening;
  if (cc.external_K) {
    cfg.gain = external_gain(model->locals(), *cc.external_K, *cc.external_P, cfg.Qlift, cfg.R);
  } else {
    SdpSettings st;
    st.s_cap = cc.s_cap;
    cfg.gain = solve_gain(model->locals(), cfg.Qlift, cfg.R, cc.objective, st);
  }

  Json rpi_info = nullptr;
  if (model->disturbance()) {
    try {
      const RpiResult r = rpi_outer_approx(closed_loop_maps(model->locals(), cfg.gain.K), *model->disturbance(), cc.rpi);
      cfg.gain.rpi = r.set;
      rpi_info = {{"depth", r.depth}, {"converged", r.converged}, {"contraction", r.contraction},
                  {"radius", r.set.radius()}, {"warnings", r.warnings}};
      for (const auto & w : r.warnings) { std::cerr << "warning: " << w << '\n'; }
    } catch (const NotContractive & e) {
      if (cfg.tightening == Tightening::Rpi) { throw; }
      std::cerr << "warning: no RPI set (" << e.what() << "); constraints are not tightened\n";
    }
  } else if (cfg.tightening == Tightening::Rpi) {
    throw ConfigError("RPI tightening needs a model with a disturbance set (collect validation data)");
  }
  validate(cfg);

  double worst = -kInf;
  for (double m : cfg.gain.margins) { worst = std::max(worst, m); }
  std::cout << "gain " << (cfg.gain.info.external ? "(external)" : to_string(cfg.gain.info.objective_kind))
            << ": certificate margins";
  for (double m : cfg.gain.margins) { std::cout << ' ' << m; }
  std::cout << "\nRPI radius: " << (cfg.gain.rpi ? fmt_number(cfg.gain.rpi->radius()) : std::string("none")) << '\n';
  if (worst > 1e-6) { std::cerr << "warning: the certificate does not hold (worst margin " << worst << ")\n"; }

  Json bundle = to_json(cfg);
  bundle["name"] = cc.name;
  bundle["rpi_info"] = rpi_info;
  const fs::path out = prepare_out(g.out);
  Manifest man("synthesize", g.config);
  const fs::path f = out / (cc.name + ".json");
  write_json(f.string(), bundle);
  man.add_output(f);
  man.diagnostics()["worst_margin"] = worst;
  man.diagnostics()["rpi"] = rpi_info;
  man.write(out, "_" + cc.name);
  return 0;
}

int cmd_simulate(const GlobalOptions & g, const std::string & controller_path)
{
  const Json doc = load_config(g);
  ScenarioConfig sc = parse_scenario(root(doc));
  if (g.seed) {
    if (auto * r = std::get_if<RandomWalk>(&sc.parameter)) { r->seed = *g.seed; }
  }
  if (controller_path.empty()) { throw ConfigError("--controller is required"); }
  const Json cdoc = load_json(controller_path);
  const MpcConfig cfg = controller_from_json(JsonNode(cdoc, ""));
  const PvkoModel & model = *cfg.model;

  std::unique_ptr<Plant> plant;
  Eigen::VectorXd x0 = sc.x0;
  if (x0.size() != model.state_dim()) { throw ConfigError("field 'x0': dimension differs from the model state"); }
  ClosedLoopOptions opt;
  opt.warm_start = sc.warm_start;
  if (sc.plant == "lifted_model") {
    plant = std::make_unique<LiftedModelPlant>(model);
    x0 = model.basis().lift(x0);
  } else {
    plant = make_plant(sc.plant, sc.integrator);
    if (plant->state_dim() != model.state_dim() || plant->input_dim() != model.input_dim()) {
      throw ConfigError("field 'plant': plant '" + sc.plant + "' does not match the controller's model");
    }
    opt.stage_state_weight = sc.Qx.size() ? sc.Qx : Eigen::MatrixXd::Identity(model.state_dim(), model.state_dim());
    if (opt.stage_state_weight.rows() != model.state_dim() || opt.stage_state_weight.cols() != model.state_dim()) {
      throw ConfigError("field 'Qx': dimension differs from the plant state");
    }
  }
  const ParameterSignal signal(sc.parameter, sc.dt);
  if (signal.defined_steps() >= 0 && signal.defined_steps() < sc.steps + cfg.N - 1) {
    throw ConfigError(
      "field 'parameter': the schedule covers " + std::to_string(signal.defined_steps()) + " steps but " +
      std::to_string(sc.steps + cfg.N - 1) + " are needed; the parameter must be known over the whole prediction horizon");
  }

  const ClosedLoopResult res = run_closed_loop(cfg, *plant, x0, signal, sc.steps, opt);
  const Trajectory & tr = res.trajectory;
  double jc = 0.0, secs = 0.0;
  int clipped = 0;
  for (std::size_t k = 0; k < tr.stage_cost.size(); ++k) {
    jc += tr.stage_cost[k];
    secs += tr.solve_seconds[k];
    clipped += tr.clipped[k] ? 1 : 0;
  }
  for (const auto & e : res.events) { std::cerr << "event: step " << e.step << ' ' << to_string(e.kind) << ": " << e.detail << '\n'; }

  const fs::path out = prepare_out(g.out);
  Manifest man("simulate", g.config);
  if (const auto * r = std::get_if<RandomWalk>(&sc.parameter)) { man.seeds()["parameter"] = r->seed; }
  const std::string csv = "trajectory_" + sc.name + ".csv";
  write_trajectory_csv((out / csv).string(), tr);
  man.add_output(out / csv);
  const std::string written = read_file((out / csv).string());
  const std::vector<std::string> header = split(written.substr(0, written.find('\n')));
  const fs::path gp = out / ("plot_" + sc.name + ".gp");
  {
    std::ofstream f(gp, std::ios::binary);
    if (!f) { throw IoError("cannot open " + gp.string() + " for writing"); }
    f << plot_script(csv, "plot_" + sc.name + ".png", header);
    if (!f) { throw IoError("failed writing " + gp.string()); }
  }
  man.add_output(gp);
  Json events = Json::array();
  for (const auto & e : res.events) { events.push_back({{"step", e.step}, {"kind", to_string(e.kind)}, {"detail", e.detail}}); }
  man.diagnostics() = {
    {"trajectory", csv},
    {"cumulative_cost", jc},
    {"mean_solve_seconds", secs / static_cast<double>(tr.steps())},
    {"feasibility_violations", res.feasibility_violations},
    {"lyapunov_violations", res.lyapunov_violations},
    {"clipped_steps", clipped},
    {"tube_checks", res.tube_checks},
    {"tube_violations", res.tube_violations},
    {"events", events},
  };
  man.write(out, "_" + sc.name);
  std::cout << sc.name << ": " << tr.steps() << " steps, cumulative cost " << jc << ", feasibility violations "
            << res.feasibility_violations << ", Lyapunov violations " << res.lyapunov_violations
            << ", clipped steps " << clipped << ", mean solve " << 1e3 * secs / static_cast<double>(tr.steps()) << " ms\n";
  return 0;
}

int cmd_evaluate_rmse(const GlobalOptions & g)
{
  const Json doc = load_config(g);
  const CampaignConfig c = parse_campaign(root(doc));
  if (!c.rmse_mc) { throw ConfigError("field 'rmse_mc': required for evaluate rmse-mc"); }
  if (c.plant != "lorenz" && c.plant != "vdp") { throw ConfigError("field 'plant': unsupported"); }
  PredictionCampaign p = *c.rmse_mc;
  if (g.seed) { p.seed = *g.seed; }
  p.threads = std::max(1, g.threads);
  if (plant_inputs(c.plant) > 0) { throw ConfigError("field 'plant': rmse-mc compares autonomous predictions (use lorenz)"); }

  const auto stats = monte_carlo_prediction(p);
  const fs::path out = prepare_out(g.out);
  Manifest man("evaluate_rmse", g.config);
  man.seeds()["trials"] = p.seed;
  man.seeds()["collection"] = c.seed;
  const fs::path f = out / "rmse_mc.csv";
  {
    std::ofstream o(f, std::ios::binary);
    if (!o) { throw IoError("cannot open " + f.string() + " for writing"); }
    o << "model,order,mean,stddev\n" << std::setprecision(17);
    for (const auto & s : stats) { o << "pvko," << s.order << ',' << s.pvko_mean << ',' << s.pvko_std << '\n'; }
    for (const auto & s : stats) { o << "ko," << s.order << ',' << s.ti_mean << ',' << s.ti_std << '\n'; }
    if (!o) { throw IoError("failed writing " + f.string()); }
  }
  man.add_output(f);
  man.write(out);
  for (const auto & s : stats) {
    std::cout << "order " << s.order << ": PVKO " << s.pvko_mean << " +- " << s.pvko_std << " %, KO " << s.ti_mean
              << " +- " << s.ti_std << " %\n";
  }
  return 0;
}

int cmd_evaluate_costs(
  const GlobalOptions & g, const std::vector<std::string> & trajectories, const std::string & reference,
  std::optional<double> reference_cost)
{
  if (trajectories.empty()) { throw ConfigError("cost-table needs at least one --trajectory"); }
  if (reference.empty() == !reference_cost.has_value()) {
    throw ConfigError("cost-table needs exactly one of --reference and --reference-cost");
  }
  struct Row
  {
    std::string name;
    double cost;
    std::optional<double> solve_ms;
  };
  auto load = [](const std::string & spec) {
    std::string name, path = spec;
    if (const auto eq = spec.find('='); eq != std::string::npos) {
      name = spec.substr(0, eq);
      path = spec.substr(eq + 1);
    } else {
      name = fs::path(spec).stem().string();
    }
    const CsvTable t = read_csv(path);
    const std::size_t col = t.column("stage_cost", path);
    double jc = 0.0;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      jc += parse_double(t.rows[i][col], path + ":" + std::to_string(i + 2));
    }
    // Solve times live in the simulate manifest next to the trajectory (they are not reproducible).
    std::optional<double> ms;
    const fs::path dir = fs::path(path).parent_path();
    const std::string file = fs::path(path).filename().string();
    std::error_code ec;
    for (const auto & entry : fs::directory_iterator(dir.empty() ? fs::path(".") : dir, ec)) {
      const auto fname = entry.path().filename().string();
      if (fname.rfind("manifest_simulate", 0) != 0) { continue; }
      try {
        const Json m = load_json(entry.path().string());
        if (m.contains("diagnostics") && m["diagnostics"].value("trajectory", "") == file) {
          ms = 1e3 * m["diagnostics"].value("mean_solve_seconds", 0.0);
        }
      } catch (const Error &) {
      }
    }
    return Row{name, jc, ms};
  };

  std::vector<Row> rows;
  for (const auto & t : trajectories) { rows.push_back(load(t)); }
  const double ref = reference_cost ? *reference_cost : load(reference).cost;
  if (!(ref > 0)) { throw ConfigError("reference cost must be positive"); }

  const fs::path out = prepare_out(g.out);
  Manifest man("evaluate_costs", g.config);
  const fs::path f = out / "cost_table.csv";
  {
    std::ofstream o(f, std::ios::binary);
    if (!o) { throw IoError("cannot open " + f.string() + " for writing"); }
    o << "controller,final_cost,mean_solve_ms,cost_ratio_percent\n" << std::setprecision(17);
    for (const auto & r : rows) {
      o << r.name << ',' << r.cost << ',';
      if (r.solve_ms) { o << *r.solve_ms; }
      o << ',' << 100.0 * (r.cost - ref) / ref << '\n';
    }
    if (!o) { throw IoError("failed writing " + f.string()); }
  }
  man.add_output(f);
  man.diagnostics()["reference_cost"] = ref;
  man.write(out);
  for (const auto & r : rows) {
    std::cout << r.name << ": J_c = " << r.cost << ", ratio " << 100.0 * (r.cost - ref) / ref << " %";
    if (r.solve_ms) { std::cout << ", mean solve " << *r.solve_ms << " ms"; }
    std::cout << '\n';
  }
  return 0;
}

}  // namespace pvko::cli
