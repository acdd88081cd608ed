#include "diffpos/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

namespace diffpos::cli {

using nlohmann::json;

namespace {

// ---- config parsing ------------------------------------------------------------

[[noreturn]] void bad(const std::string& path, const std::string& msg) { throw Error("cli.config", path + ": " + msg); }

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ", ") + s;
  return out;
}

void check_keys(const json& obj, const std::string& path, const std::vector<std::string>& allowed) {
  if (!obj.is_object()) bad(path, "expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      bad(path.empty() ? key : path + "." + key, "unknown key (allowed: " + join(allowed) + ")");
    }
  }
}

std::string sub(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

double number(const json& j, const std::string& path) {
  if (!j.is_number()) bad(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) bad(path, "expected a finite number");
  return v;
}

double positive(const json& j, const std::string& path) {
  const double v = number(j, path);
  if (!(v > 0)) bad(path, "expected a positive number");
  return v;
}

long integer(const json& j, const std::string& path, long lo) {
  if (!j.is_number_integer()) bad(path, "expected an integer");
  const long v = j.get<long>();
  if (v < lo) bad(path, "expected an integer >= " + std::to_string(lo));
  return v;
}

Vector vector_of(const json& j, const std::string& path, int dim) {
  if (!j.is_array()) bad(path, "expected an array of " + std::to_string(dim) + " numbers");
  if (static_cast<int>(j.size()) != dim) {
    bad(path, "expected " + std::to_string(dim) + " entries, got " + std::to_string(j.size()));
  }
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v[i] = number(j[static_cast<std::size_t>(i)], path + "[" + std::to_string(i) + "]");
  return v;
}

Matrix matrix_of(const json& j, const std::string& path, int rows, int cols) {
  if (!j.is_array() || (rows >= 0 && static_cast<int>(j.size()) != rows)) {
    bad(path, "expected " + (rows >= 0 ? std::to_string(rows) : std::string("a list of")) + " rows");
  }
  const int r = static_cast<int>(j.size());
  Matrix m(r, cols);
  for (int i = 0; i < r; ++i) m.row(i) = vector_of(j[static_cast<std::size_t>(i)], path + "[" + std::to_string(i) + "]", cols);
  return m;
}

Box default_box(const std::string& builtin, int dim) {
  if (builtin == "bistable4") return make_box(Vector::Map(std::vector<double>{-1.2, -1.0}.data(), 2), Vector::Map(std::vector<double>{1.2, 1.0}.data(), 2));
  if (builtin == "vdp") return make_box(Vector::Constant(2, -3.0), Vector::Constant(2, 3.0));
  return make_box(Vector::Constant(dim, -2.0), Vector::Constant(dim, 2.0));
}

void parse_system(const json& j, AnalysisConfig& cfg) {
  const std::string path = "system";
  auto use_builtin = [&](const std::string& name) {
    const auto& names = builtins::names();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      bad(path, "unknown builtin '" + name + "' (allowed: " + join(names) + ")");
    }
    cfg.builtin = name;
    cfg.system = builtins::by_name(name);
  };
  if (j.is_string()) {
    use_builtin(j.get<std::string>());
    return;
  }
  check_keys(j, path, {"builtin", "expressions", "dim", "name"});
  if (j.contains("builtin") == j.contains("expressions")) bad(path, "give exactly one of 'builtin' and 'expressions'");
  if (j.contains("builtin")) {
    if (!j["builtin"].is_string()) bad(path + ".builtin", "expected a string");
    use_builtin(j["builtin"].get<std::string>());
    if (j.contains("dim") && integer(j["dim"], path + ".dim", 1) != cfg.dim()) {
      bad(path + ".dim", "builtin '" + cfg.builtin + "' has dim " + std::to_string(cfg.dim()));
    }
    return;
  }
  if (!j.contains("dim")) bad(path + ".dim", "required with 'expressions'");
  const int dim = static_cast<int>(integer(j["dim"], path + ".dim", 1));
  const auto& ex = j["expressions"];
  if (!ex.is_array()) bad(path + ".expressions", "expected an array of strings");
  if (static_cast<int>(ex.size()) != dim) {
    bad(path + ".expressions", "expected dim=" + std::to_string(dim) + " expressions, got " + std::to_string(ex.size()));
  }
  for (std::size_t i = 0; i < ex.size(); ++i) {
    if (!ex[i].is_string()) bad(path + ".expressions[" + std::to_string(i) + "]", "expected a string");
    cfg.expressions.push_back(ex[i].get<std::string>());
  }
  std::string name = "custom";
  if (j.contains("name")) {
    if (!j["name"].is_string()) bad(path + ".name", "expected a string");
    name = j["name"].get<std::string>();
  }
  try {
    cfg.system = parse_field(cfg.expressions, dim, name);
  } catch (const Error& e) {
    bad(path + ".expressions", e.what());
  }
}

const std::vector<std::string>& cone_variants() {
  static const std::vector<std::string> v{"orthant", "polyhedral", "elliptical", "construct"};
  return v;
}

ConeSpec parse_cone(const json& j, int dim) {
  const std::string path = "cone";
  check_keys(j, path, {"variant", "signs", "normals", "axis", "weight", "sigma"});
  ConeSpec c;
  if (j.contains("variant")) {
    if (!j["variant"].is_string()) bad(path + ".variant", "expected a string");
    c.variant = j["variant"].get<std::string>();
  }
  const auto& allowed = cone_variants();
  if (std::find(allowed.begin(), allowed.end(), c.variant) == allowed.end()) {
    bad(path + ".variant", "unknown variant '" + c.variant + "' (allowed: " + join(allowed) + ")");
  }
  auto only = [&](std::initializer_list<const char*> keys) {
    for (const char* k : {"signs", "normals", "axis", "weight", "sigma"}) {
      const bool ok = std::find_if(keys.begin(), keys.end(), [&](const char* a) { return std::string(a) == k; }) != keys.end();
      if (!ok && j.contains(k)) bad(sub(path, k), "not used by variant '" + c.variant + "'");
    }
  };
  if (c.variant == "orthant") {
    only({"signs"});
    c.signs = j.contains("signs") ? vector_of(j["signs"], path + ".signs", dim) : Vector::Ones(dim);
  } else if (c.variant == "polyhedral") {
    only({"normals"});
    if (!j.contains("normals")) bad(path + ".normals", "required for variant 'polyhedral'");
    c.normals = matrix_of(j["normals"], path + ".normals", -1, dim);
  } else if (c.variant == "elliptical") {
    only({"axis", "weight", "sigma"});
    if (!j.contains("axis")) bad(path + ".axis", "required for variant 'elliptical'");
    c.axis = vector_of(j["axis"], path + ".axis", dim);
    c.weight = j.contains("weight") ? matrix_of(j["weight"], path + ".weight", dim - 1, dim - 1) : Matrix::Identity(dim - 1, dim - 1);
    if (j.contains("sigma")) c.sigma = positive(j["sigma"], path + ".sigma");
  } else {
    only({});
  }
  if (c.variant != "construct") {
    try {
      make_cone(c, dim);
    } catch (const Error& e) {
      bad(path, e.what());
    }
  }
  return c;
}

std::vector<double> horizons_of(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) bad(path, "expected a nonempty array of positive numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(positive(j[i], path + "[" + std::to_string(i) + "]"));
  if (!std::is_sorted(out.begin(), out.end())) bad(path, "expected increasing horizons");
  return out;
}

// ---- serialization ---------------------------------------------------------------

std::string fmt17(double v) {
  v += 0.0;  // no "-0"
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt6(double v) {
  v += 0.0;
  if (!std::isfinite(v)) return fmt17(v);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void dump_into(const json& j, std::string& out, int level) {
  const std::string pad(static_cast<std::size_t>(2 * (level + 1)), ' ');
  const std::string end_pad(static_cast<std::size_t>(2 * level), ' ');
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (const auto& [k, v] : j.items()) {
        if (!first) out += ",\n";
        first = false;
        out += pad + json(k).dump() + ": ";
        dump_into(v, out, level + 1);
      }
      out += "\n" + end_pad + "}";
      return;
    }
    case json::value_t::array: {
      const bool flat = std::all_of(j.begin(), j.end(), [](const json& e) { return e.is_primitive(); });
      if (j.empty()) {
        out += "[]";
      } else if (flat) {
        out += "[";
        for (std::size_t i = 0; i < j.size(); ++i) {
          if (i) out += ", ";
          dump_into(j[i], out, level + 1);
        }
        out += "]";
      } else {
        out += "[\n";
        for (std::size_t i = 0; i < j.size(); ++i) {
          if (i) out += ",\n";
          out += pad;
          dump_into(j[i], out, level + 1);
        }
        out += "\n" + end_pad + "]";
      }
      return;
    }
    case json::value_t::number_float: {
      const double v = j.get<double>();
      out += std::isfinite(v) ? fmt17(v) : "\"" + fmt17(v) + "\"";
      return;
    }
    default:
      out += j.dump();
  }
}

json to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json to_json(const Matrix& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vector(m.row(i).transpose())));
  return a;
}

json to_json(const ComplexVector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(json::array({v[i].real(), v[i].imag()}));
  return a;
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json system_json(const AnalysisConfig& cfg) {
  json s{{"name", cfg.sys().name()}, {"dim", cfg.dim()}};
  if (!cfg.expressions.empty()) s["expressions"] = cfg.expressions;
  return s;
}

json positivity_json(const PositivityReport& r) {
  double min_margin = kInf, min_strict = kInf;
  for (const auto& s : r.samples) {
    min_margin = std::min(min_margin, s.margin);
    min_strict = std::min(min_strict, s.strict_margin);
  }
  json viol = json::array();
  for (std::size_t k = 0; k < r.violations.size() && k < 20; ++k) {
    const auto& s = r.samples[r.violations[k]];
    viol.push_back({{"point", to_json(r.points[static_cast<std::size_t>(s.point)])}, {"ray", s.ray}, {"t", s.t}, {"margin", s.margin}});
  }
  json fails = json::array();
  for (const auto& f : r.failures) fails.push_back({{"point", f.point}, {"code", f.code}});
  return {{"points", r.points.size()},
          {"horizons", r.horizons},
          {"samples", r.samples.size()},
          {"violations", r.violations.size()},
          {"violation_details", viol},
          {"strict_failures", r.strict_failures},
          {"failures", fails},
          {"min_margin", min_margin},
          {"min_strict_margin", min_strict},
          {"invariant", r.violations.empty() && r.failures.empty()},
          {"strict", r.t_used.has_value()},
          {"t_used", opt(r.t_used)},
          {"lambda_hat", opt(r.lambda_hat)},
          {"delta_hat", r.delta_hat}};
}

json nh_json(const NHCertificate& c) {
  json pts = json::array();
  for (const auto& p : c.points) {
    pts.push_back({{"x", to_json(p.x)}, {"tangent_exponent", p.tangent_exponent}, {"normal_exponent", p.normal_exponent}});
  }
  return {{"lambda1", c.lambda1}, {"lambda2", c.lambda2}, {"rho1", c.rho1},     {"rho2", c.rho2},
          {"horizon", c.horizon}, {"margin", c.margin},   {"verdict", c.verdict}, {"reason", c.reason},
          {"points", pts}};
}

json floquet_json(const FloquetResult& f, double period) {
  return {{"period", period},
          {"multipliers", to_json(f.multipliers)},
          {"trivial_deviation", f.trivial_deviation},
          {"trivial_angle", f.trivial_angle},
          {"product", f.product},
          {"liouville", f.liouville}};
}

std::string positivity_line(const PositivityReport& r) {
  return "positivity samples=" + std::to_string(r.samples.size()) + " violations=" + std::to_string(r.violations.size()) +
         " strict_failures=" + std::to_string(r.strict_failures) + " failures=" + std::to_string(r.failures.size()) +
         " t_used=" + (r.t_used ? fmt6(*r.t_used) : "none") + " lambda_hat=" + (r.lambda_hat ? fmt6(*r.lambda_hat) : "none");
}

// ---- cone field rows ---------------------------------------------------------------

std::vector<std::string> field_header(int dim, const Cone& c) {
  std::vector<std::string> h;
  for (int i = 1; i <= dim; ++i) h.push_back("x" + std::to_string(i));
  if (c.kind() == ConeKind::kElliptical) {
    for (int i = 1; i <= dim; ++i) h.push_back("axis" + std::to_string(i));
    for (int i = 1; i < dim; ++i) {
      for (int j = 1; j < dim; ++j) h.push_back("w" + std::to_string(i) + std::to_string(j));
    }
    h.push_back("sigma");
  } else {
    const Matrix a = c.normals();
    for (int i = 1; i <= a.rows(); ++i) {
      for (int j = 1; j <= dim; ++j) h.push_back("a" + std::to_string(i) + "_" + std::to_string(j));
    }
  }
  return h;
}

std::vector<double> field_row(const Vector& x, const Cone& c) {
  std::vector<double> row(x.data(), x.data() + x.size());
  if (c.kind() == ConeKind::kElliptical) {
    for (Eigen::Index i = 0; i < c.axis().size(); ++i) row.push_back(c.axis()[i]);
    const Matrix& w = c.weight();
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) row.push_back(w(i, j));
    }
    row.push_back(c.sigma());
  } else {
    const Matrix a = c.normals();
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      for (Eigen::Index j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
    }
  }
  return row;
}

void add_field_rows(RunArtifacts& art, const ConeField& field, const std::vector<Vector>& pts, int dim) {
  for (const auto& x : pts) {
    Cone c = field(x);
    if (art.field_header.empty()) art.field_header = field_header(dim, c);
    art.field.push_back(field_row(x, c));
  }
}

// ---- shared stages ---------------------------------------------------------------

Sampler sampler_of(const AnalysisConfig& cfg) { return Sampler{cfg.box, cfg.samples, cfg.seed}; }

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> t(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = a + (b - a) * i / (n - 1);
  return t;
}

AttractorModel build_model(const AnalysisConfig& cfg, RunArtifacts& art) {
  const auto& sys = cfg.sys();
  const auto& a = cfg.attractor;
  if (a.kind != "limit_cycle") {
    const auto fps = find_fixed_points(sys, grid_seeds(cfg.box, a.seeds_per_axis), cfg.box);
    const bool any = std::any_of(fps.begin(), fps.end(), [](const FixedPoint& fp) { return fp.type != FixedPointType::kUnstable; });
    if (any || a.kind == "fixed_points") {
      AttractorModel m = fixed_point_model(sys, fps);
      art.summary.push_back("attractor kind=" + to_string(m.kind) + " fixed_points=" + std::to_string(m.fixed_points.size()) +
                            " arcs=" + std::to_string(m.arcs.size()));
      return m;
    }
  }
  CycleOptions o;
  o.t_burn = a.t_burn;
  const auto cycle = find_limit_cycle(sys, a.x0 ? *a.x0 : cfg.x0, a.section, o);
  art.summary.push_back("attractor kind=limit_cycle period=" + fmt6(cycle.period) + " closure=" + fmt6(cycle.closure));
  return cycle_model(cycle);
}

CertifyParams certify_params(const AnalysisConfig& cfg) {
  CertifyParams p;
  p.eps = cfg.eps;
  p.c = cfg.construct.c;
  p.nh_horizon = cfg.construct.nh_horizon;
  p.t_int = cfg.construct.t_int;
  p.horizons = cfg.horizons;
  p.sampler = sampler_of(cfg);
  p.rays = cfg.rays;
  p.tau_max = cfg.construct.tau_max;
  p.threads = cfg.threads;
  p.max_halvings = cfg.construct.max_halvings;
  p.tube_samples = cfg.construct.tube_samples;
  return p;
}

std::string certify_line(const CertifyResult& r) {
  return "construct c=" + fmt6(r.c) + " rho=" + fmt6(r.rho) + (r.success ? " ok" : " failed stage=" + r.stage + " error=" + r.error);
}

struct FieldSource {
  ConeField field;
  std::optional<AttractorModel> model;
};

// Constant cone from the spec, or the certified field for "construct".
FieldSource field_source(const AnalysisConfig& cfg, RunArtifacts& art) {
  if (cfg.cone.variant != "construct") return {ConeField::constant(make_cone(cfg.cone, cfg.dim())), std::nullopt};
  auto model = build_model(cfg, art);
  const auto r = certificate(cfg.sys(), model, certify_params(cfg));
  art.summary.push_back(certify_line(r));
  if (!r.field) throw Error(r.error.substr(0, r.error.find(':')), "cone construction failed at stage " + r.stage);
  return {*r.field, std::move(model)};
}

// Hilbert distance between w and the ray of f (either sense) in K.
double alignment(const Cone& k, const Vector& w, const Vector& f) {
  double best = kInf;
  if (!(f.norm() > 1e-9)) return best;
  for (double s : {1.0, -1.0}) {
    const Vector d = s * f.normalized();
    if (!k.contains(d, 1e-9)) continue;
    try {
      best = std::min(best, hilbert_distance(k, w, d));
    } catch (const Error&) {
    }
  }
  return best;
}

// With `rows`, also tabulates point, cone and PF vector into field.csv.
json pf_samples(const AnalysisConfig& cfg, const ConeField& field, const std::vector<Vector>& pts, RunArtifacts& art,
                bool rows) {
  PfOptions o;
  o.s_max = cfg.pf.s_max;
  o.tol = cfg.pf.tol;
  json out = json::array();
  double worst = 0.0;
  int ok = 0;
  for (const auto& x : pts) {
    json e{{"x", to_json(x)}};
    try {
      const auto est = pf_vector(cfg.sys(), field, x, cfg.pf.s, o);
      const Cone k = field(x);
      const double h = alignment(k, est.w, cfg.sys().field(x));
      e.update({{"w", to_json(est.w)},
                {"s_used", est.s_used},
                {"residual", est.residual},
                {"margin", est.margin},
                {"retreats", est.retreats},
                {"alignment", h}});
      if (std::isfinite(h)) worst = std::max(worst, h);
      ++ok;
      if (rows) {
        auto row = field_row(x, k);
        for (Eigen::Index i = 0; i < est.w.size(); ++i) row.push_back(est.w[i]);
        row.push_back(est.residual);
        if (art.field_header.empty()) {
          art.field_header = field_header(cfg.dim(), k);
          for (int i = 1; i <= cfg.dim(); ++i) art.field_header.push_back("pf" + std::to_string(i));
          art.field_header.push_back("residual");
        }
        art.field.push_back(std::move(row));
      }
    } catch (const Error& err) {
      e["error"] = err.code();
    }
    out.push_back(std::move(e));
  }
  art.summary.push_back("pf points=" + std::to_string(pts.size()) + " ok=" + std::to_string(ok) + " max_alignment=" + fmt6(worst));
  return out;
}

std::vector<Vector> pf_points(const AnalysisConfig& cfg, const std::optional<AttractorModel>& model) {
  if (!model) return sample_points(Sampler{cfg.box, cfg.pf.points, cfg.seed});
  const int pieces = model->kind == AttractorKind::kLimitCycle ? 1 : std::max<int>(1, static_cast<int>(model->arcs.size()));
  std::vector<Vector> pts;
  for (const auto& p : attractor_points(cfg.sys(), *model, (cfg.pf.points + pieces - 1) / pieces)) {
    if (cfg.sys().field(p.x).norm() > 1e-9) pts.push_back(p.x);
  }
  if (static_cast<int>(pts.size()) > cfg.pf.points) pts.resize(static_cast<std::size_t>(cfg.pf.points));
  return pts;
}

// ---- commands ---------------------------------------------------------------------

void cmd_simulate(const AnalysisConfig& cfg, RunArtifacts& art) {
  const int n = cfg.dim();
  const auto seg = flow(cfg.sys(), cfg.x0, cfg.t_end, cfg.integ);
  art.trajectory_header = {"t"};
  for (int i = 1; i <= n; ++i) art.trajectory_header.push_back("x" + std::to_string(i));
  for (double t : linspace(0.0, cfg.t_end, cfg.grid)) {
    const Vector x = seg.state_at(t);
    std::vector<double> row{t};
    row.insert(row.end(), x.data(), x.data() + n);
    art.trajectories.push_back(std::move(row));
  }
  art.report["simulate"] = {{"x0", to_json(cfg.x0)},
                            {"t_end", cfg.t_end},
                            {"grid", cfg.grid},
                            {"steps", seg.times.size() - 1},
                            {"final_state", to_json(seg.final_state())}};
  art.summary.push_back("simulate steps=" + std::to_string(seg.times.size() - 1) + " rows=" + std::to_string(cfg.grid));
}

void cmd_fixed_points(const AnalysisConfig& cfg, RunArtifacts& art) {
  const auto fps = find_fixed_points(cfg.sys(), grid_seeds(cfg.box, cfg.attractor.seeds_per_axis), cfg.box);
  json list = json::array();
  for (const auto& fp : fps) {
    json e{{"x", to_json(fp.x)}, {"type", to_string(fp.type)}, {"spectrum", to_json(fp.spectrum)}};
    try {
      const auto s = classify_fixed_point(cfg.sys(), fp.x);
      e["split"] = {{"w", to_json(s.w)}, {"n", to_json(s.n)}, {"dominant", s.dominant}, {"gap", s.gap}};
    } catch (const Error& err) {
      e["split"] = {{"error", err.code()}};
    }
    list.push_back(std::move(e));
  }
  art.report["fixed_points"] = list;
  art.summary.push_back("fixed-points count=" + std::to_string(fps.size()));
}

void cmd_limit_cycle(const AnalysisConfig& cfg, RunArtifacts& art) {
  CycleOptions o;
  o.t_burn = cfg.attractor.t_burn;
  const auto c = find_limit_cycle(cfg.sys(), cfg.attractor.x0 ? *cfg.attractor.x0 : cfg.x0, cfg.attractor.section, o);
  art.summary.push_back("limit-cycle period=" + fmt6(c.period) + " closure=" + fmt6(c.closure) +
                        " newton=" + std::to_string(c.newton_iterations));
  const auto f = floquet(cfg.sys(), c);
  art.summary.push_back("floquet trivial_deviation=" + fmt6(f.trivial_deviation) + " product=" + fmt6(f.product) +
                        " liouville=" + fmt6(f.liouville));
  art.report["limit_cycle"] = {{"anchor", to_json(c.anchor)},
                               {"period", c.period},
                               {"closure", c.closure},
                               {"newton_iterations", c.newton_iterations},
                               {"section", {{"p", to_json(c.section.p)}, {"n", to_json(c.section.n)}}}};
  art.report["floquet"] = floquet_json(f, c.period);
  art.trajectory_header = {"t"};
  for (int i = 1; i <= cfg.dim(); ++i) art.trajectory_header.push_back("x" + std::to_string(i));
  for (std::size_t k = 0; k < c.orbit.size(); ++k) {
    std::vector<double> row{c.times[k]};
    row.insert(row.end(), c.orbit[k].data(), c.orbit[k].data() + cfg.dim());
    art.trajectories.push_back(std::move(row));
  }
}

void cmd_nh_check(const AnalysisConfig& cfg, RunArtifacts& art) {
  const auto model = build_model(cfg, art);
  const auto cert = verify_normal_hyperbolicity(cfg.sys(), model, cfg.construct.nh_horizon);
  art.report["nh_certificate"] = nh_json(cert);
  art.summary.push_back("nh verdict=" + std::string(cert.verdict ? "positive" : "negative") + " lambda1=" + fmt6(cert.lambda1) +
                        " lambda2=" + fmt6(cert.lambda2) + " rho1=" + fmt6(cert.rho1) + " rho2=" + fmt6(cert.rho2));
  if (!cert.verdict) art.status = kExitNegative;
}

void cmd_check_dp(const AnalysisConfig& cfg, RunArtifacts& art) {
  const auto src = field_source(cfg, art);
  PositivityOptions o;
  o.eps = cfg.eps;
  o.rays = cfg.rays;
  o.threads = cfg.threads;
  o.integ = cfg.integ;
  const auto r = check_diff_positivity(cfg.sys(), src.field, sampler_of(cfg), cfg.horizons, o);
  art.report["positivity_report"] = positivity_json(r);
  art.summary.push_back(positivity_line(r));
  add_field_rows(art, src.field, r.points, cfg.dim());
  if (!r.violations.empty() || !r.failures.empty() || !r.t_used) art.status = kExitNegative;
}

void cmd_pf_field(const AnalysisConfig& cfg, RunArtifacts& art) {
  const auto src = field_source(cfg, art);
  art.report["pf_samples"] = pf_samples(cfg, src.field, pf_points(cfg, src.model), art, true);
}

void cmd_rate(const AnalysisConfig& cfg, RunArtifacts& art) {
  const auto src = field_source(cfg, art);
  const auto fit = contraction_rate(cfg.sys(), src.field, cfg.x0, linspace(0.0, cfg.t_end, cfg.grid), std::nullopt, cfg.integ);
  art.report["rate"] = {{"x0", to_json(cfg.x0)}, {"lambda", fit.lambda},  {"slope", fit.slope}, {"intercept", fit.intercept},
                        {"used", fit.used},      {"times", fit.times},    {"h", fit.h}};
  art.summary.push_back("rate lambda=" + fmt6(fit.lambda) + " used=" + std::to_string(fit.used));
  if (cfg.metric) {
    ContractionOptions o;
    o.threads = cfg.threads;
    o.integ = cfg.integ;
    const auto rep = check_metric_contraction(cfg.sys(), MetricSpec::constant(cfg.metric->p), sampler_of(cfg),
                                              cfg.metric->horizon, cfg.metric->lambda, o);
    art.report["metric_contraction"] = {{"samples", rep.samples.size()},
                                        {"violations", rep.violations},
                                        {"pair_violations", rep.pair_violations},
                                        {"failures", rep.failures},
                                        {"worst_exponent", rep.worst_exponent},
                                        {"worst_pair_exponent", rep.worst_pair_exponent}};
    art.summary.push_back("metric worst_exponent=" + fmt6(rep.worst_exponent) + " violations=" + std::to_string(rep.violations));
  }
}

void cmd_classify(const AnalysisConfig& cfg, RunArtifacts& art) {
  const auto src = field_source(cfg, art);
  DichotomyOptions o;
  o.grid = cfg.grid;
  o.integ = cfg.integ;
  const auto d = dichotomy_classify(cfg.sys(), src.field, cfg.x0, cfg.t_end, o);
  art.report["dichotomy"] = {{"x0", to_json(cfg.x0)},
                             {"horizon", cfg.t_end},
                             {"verdict", to_string(d.verdict)},
                             {"f_in_cone_final", d.f_in_cone_final},
                             {"f_ever_in_cone", d.f_ever_in_cone},
                             {"eval_time", d.eval_time},
                             {"alignment", d.alignment},
                             {"growth_exponent", d.growth_exponent},
                             {"growth_relative", d.growth_relative},
                             {"final_speed", d.final_speed}};
  art.summary.push_back("classify verdict=" + to_string(d.verdict) + " alignment=" + fmt6(d.alignment));
}

void cmd_certify(const AnalysisConfig& cfg, RunArtifacts& art) {
  auto model = build_model(cfg, art);
  const auto r = certificate(cfg.sys(), model, certify_params(cfg));
  art.report["nh_certificate"] = nh_json(r.nh);
  art.summary.push_back("nh verdict=" + std::string(r.nh.verdict ? "positive" : "negative") + " lambda1=" + fmt6(r.nh.lambda1) +
                        " lambda2=" + fmt6(r.nh.lambda2));
  if (r.floquet) art.report["floquet"] = floquet_json(*r.floquet, model.cycle->period);
  art.report["construct"] = {{"c", r.c}, {"rho", r.rho}, {"success", r.success}, {"stage", r.stage}, {"error", r.error}};
  if (r.nh.verdict) art.summary.push_back(certify_line(r));
  art.report["positivity_report"] = r.report ? positivity_json(*r.report) : json(nullptr);
  if (r.report) {
    art.summary.push_back(positivity_line(*r.report));
    add_field_rows(art, *r.field, r.report->points, cfg.dim());
  }
  art.report["pf_samples"] = r.success ? pf_samples(cfg, *r.field, pf_points(cfg, model), art, false) : json::array();
  if (!r.success) {
    const bool negative = r.stage == "nh" || r.error == "construct.violations" || r.error == "construct.not_strict";
    art.status = negative ? kExitNegative : kExitNumeric;
    art.report["error"] = {{"code", r.error.substr(0, r.error.find(':'))}, {"stage", r.stage}, {"message", r.error}};
  }
}

void cmd_obstruction(const AnalysisConfig& cfg, RunArtifacts& art) {
  const Cone cone = make_cone(cfg.cone, cfg.dim());
  Vector saddle;
  if (cfg.obstruction.saddle) {
    saddle = *cfg.obstruction.saddle;
  } else {
    for (const auto& fp : find_fixed_points(cfg.sys(), grid_seeds(cfg.box, cfg.attractor.seeds_per_axis), cfg.box)) {
      if (fp.type == FixedPointType::kSaddle) {
        saddle = fp.x;
        break;
      }
    }
    if (saddle.size() == 0) throw Error("attractors.no_saddle", "no saddle point in the box");
  }
  const auto ob = saddle_obstruction(cfg.sys(), saddle, cone, cfg.obstruction.horizon, cfg.obstruction.grid, cfg.integ);
  art.report["obstruction"] = {{"saddle", to_json(saddle)},       {"eigenvalues", to_json(ob.eigenvalues)},
                               {"unstable", to_json(ob.unstable)}, {"stable", to_json(ob.stable)},
                               {"ray1", to_json(ob.ray1)},         {"ray2", to_json(ob.ray2)},
                               {"times", ob.times},                {"h", ob.h},
                               {"slope", ob.slope},                {"obstructed", ob.obstructed}};
  art.summary.push_back("obstruction slope=" + fmt6(ob.slope) + " obstructed=" + (ob.obstructed ? "yes" : "no"));
  PositivityOptions o;
  o.eps = cfg.eps;
  o.rays = cfg.rays;
  o.threads = cfg.threads;
  o.integ = cfg.integ;
  const auto r = check_diff_positivity(cfg.sys(), ConeField::constant(cone), sampler_of(cfg), cfg.horizons, o);
  art.report["positivity_report"] = positivity_json(r);
  art.summary.push_back(positivity_line(r));
  if (ob.obstructed) art.status = kExitNegative;
}

void write_csv(const std::filesystem::path& p, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ofstream f(p);
  if (!f) throw Error("cli.io", "cannot write " + p.string());
  for (std::size_t i = 0; i < header.size(); ++i) f << (i ? "," : "") << header[i];
  f << '\n';
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) f << (i ? "," : "") << fmt17(r[i]);
    f << '\n';
  }
  if (!f) throw Error("cli.io", "write failed for " + p.string());
}

}  // namespace

Cone make_cone(const ConeSpec& spec, int dim) {
  if (spec.variant == "orthant") return Cone::orthant(spec.signs.size() ? spec.signs : Vector::Ones(dim));
  if (spec.variant == "polyhedral") return Cone::polyhedral(spec.normals);
  if (spec.variant == "elliptical") return Cone::elliptical(spec.axis, spec.weight, spec.sigma);
  throw Error("cli.config", "cone.variant: '" + spec.variant + "' has no constant cone");
}

AnalysisConfig parse_config(const json& doc) {
  check_keys(doc, "", {"schema", "system", "box", "cone", "tolerances", "horizons", "samples", "rays", "eps", "seed",
                       "threads", "x0", "t_end", "grid", "attractor", "construct", "pf", "metric", "obstruction"});
  AnalysisConfig cfg;
  if (doc.contains("schema") && doc["schema"] != kConfigSchema) {
    bad("schema", "expected \"" + std::string(kConfigSchema) + "\"");
  }
  if (!doc.contains("system")) bad("system", "required");
  parse_system(doc["system"], cfg);
  const int n = cfg.dim();

  if (doc.contains("box")) {
    check_keys(doc["box"], "box", {"lo", "hi"});
    if (!doc["box"].contains("lo") || !doc["box"].contains("hi")) bad("box", "needs 'lo' and 'hi'");
    const Vector lo = vector_of(doc["box"]["lo"], "box.lo", n), hi = vector_of(doc["box"]["hi"], "box.hi", n);
    try {
      cfg.box = make_box(lo, hi);
    } catch (const Error& e) {
      bad("box", e.what());
    }
  } else {
    cfg.box = default_box(cfg.builtin, n);
  }
  if (doc.contains("cone")) cfg.cone = parse_cone(doc["cone"], n);
  else cfg.cone.signs = Vector::Ones(n);

  if (doc.contains("tolerances")) {
    const auto& t = doc["tolerances"];
    check_keys(t, "tolerances", {"abs", "rel", "max_step"});
    if (t.contains("abs")) cfg.integ.abs_tol = positive(t["abs"], "tolerances.abs");
    if (t.contains("rel")) cfg.integ.rel_tol = positive(t["rel"], "tolerances.rel");
    if (t.contains("max_step")) cfg.integ.max_step = positive(t["max_step"], "tolerances.max_step");
  }
  if (doc.contains("horizons")) cfg.horizons = horizons_of(doc["horizons"], "horizons");
  if (doc.contains("samples")) cfg.samples = static_cast<int>(integer(doc["samples"], "samples", 1));
  if (doc.contains("rays")) cfg.rays = static_cast<int>(integer(doc["rays"], "rays", 1));
  if (doc.contains("eps")) {
    cfg.eps = number(doc["eps"], "eps");
    if (!(cfg.eps > 0 && cfg.eps < 1)) bad("eps", "expected a number in (0, 1)");
  }
  if (doc.contains("seed")) cfg.seed = static_cast<std::uint64_t>(integer(doc["seed"], "seed", 0));
  if (doc.contains("threads")) cfg.threads = static_cast<int>(integer(doc["threads"], "threads", 1));
  // Default start: three quarters along each side of the box (the centre is
  // often an equilibrium).
  cfg.x0 = doc.contains("x0") ? vector_of(doc["x0"], "x0", n) : Vector(cfg.box.lo + 0.75 * (cfg.box.hi - cfg.box.lo));
  if (doc.contains("t_end")) cfg.t_end = positive(doc["t_end"], "t_end");
  if (doc.contains("grid")) cfg.grid = static_cast<int>(integer(doc["grid"], "grid", 2));

  if (doc.contains("attractor")) {
    const auto& a = doc["attractor"];
    check_keys(a, "attractor", {"kind", "x0", "t_burn", "section", "seeds_per_axis"});
    if (a.contains("kind")) {
      const std::vector<std::string> kinds{"auto", "fixed_points", "limit_cycle"};
      if (!a["kind"].is_string() || std::find(kinds.begin(), kinds.end(), a["kind"].get<std::string>()) == kinds.end()) {
        bad("attractor.kind", "expected one of " + join(kinds));
      }
      cfg.attractor.kind = a["kind"].get<std::string>();
    }
    if (a.contains("x0")) cfg.attractor.x0 = vector_of(a["x0"], "attractor.x0", n);
    if (a.contains("t_burn")) {
      cfg.attractor.t_burn = number(a["t_burn"], "attractor.t_burn");
      if (cfg.attractor.t_burn < 0) bad("attractor.t_burn", "expected a number >= 0");
    }
    if (a.contains("section")) {
      check_keys(a["section"], "attractor.section", {"p", "n"});
      if (!a["section"].contains("p") || !a["section"].contains("n")) bad("attractor.section", "needs 'p' and 'n'");
      Section s{vector_of(a["section"]["p"], "attractor.section.p", n), vector_of(a["section"]["n"], "attractor.section.n", n)};
      if (!(s.n.norm() > 0)) bad("attractor.section.n", "expected a nonzero normal");
      cfg.attractor.section = s;
    }
    if (a.contains("seeds_per_axis")) {
      cfg.attractor.seeds_per_axis = static_cast<int>(integer(a["seeds_per_axis"], "attractor.seeds_per_axis", 1));
    }
  }
  if (doc.contains("construct")) {
    const auto& c = doc["construct"];
    check_keys(c, "construct", {"c", "nh_horizon", "t_int", "tau_max", "max_halvings", "tube_samples"});
    auto& s = cfg.construct;
    if (c.contains("c")) s.c = positive(c["c"], "construct.c");
    if (c.contains("nh_horizon")) s.nh_horizon = positive(c["nh_horizon"], "construct.nh_horizon");
    if (c.contains("t_int")) s.t_int = positive(c["t_int"], "construct.t_int");
    if (c.contains("tau_max")) s.tau_max = positive(c["tau_max"], "construct.tau_max");
    if (c.contains("max_halvings")) s.max_halvings = static_cast<int>(integer(c["max_halvings"], "construct.max_halvings", 0));
    if (c.contains("tube_samples")) s.tube_samples = static_cast<int>(integer(c["tube_samples"], "construct.tube_samples", 1));
  }
  if (doc.contains("pf")) {
    const auto& p = doc["pf"];
    check_keys(p, "pf", {"s", "points", "s_max", "tol"});
    if (p.contains("s")) cfg.pf.s = positive(p["s"], "pf.s");
    if (p.contains("points")) cfg.pf.points = static_cast<int>(integer(p["points"], "pf.points", 1));
    if (p.contains("s_max")) cfg.pf.s_max = positive(p["s_max"], "pf.s_max");
    if (p.contains("tol")) cfg.pf.tol = positive(p["tol"], "pf.tol");
    if (cfg.pf.s_max < cfg.pf.s) bad("pf.s_max", "must be >= pf.s");
  }
  if (doc.contains("metric")) {
    const auto& m = doc["metric"];
    check_keys(m, "metric", {"p", "lambda", "horizon"});
    MetricSection ms;
    ms.p = m.contains("p") ? matrix_of(m["p"], "metric.p", n, n) : Matrix::Identity(n, n);
    if (m.contains("lambda")) ms.lambda = number(m["lambda"], "metric.lambda");
    if (m.contains("horizon")) ms.horizon = positive(m["horizon"], "metric.horizon");
    try {
      MetricSpec::constant(ms.p).at(Vector::Zero(n));
    } catch (const Error& e) {
      bad("metric.p", e.what());
    }
    cfg.metric = ms;
  }
  if (doc.contains("obstruction")) {
    const auto& o = doc["obstruction"];
    check_keys(o, "obstruction", {"saddle", "horizon", "grid"});
    if (o.contains("saddle")) cfg.obstruction.saddle = vector_of(o["saddle"], "obstruction.saddle", n);
    if (o.contains("horizon")) cfg.obstruction.horizon = positive(o["horizon"], "obstruction.horizon");
    if (o.contains("grid")) cfg.obstruction.grid = static_cast<int>(integer(o["grid"], "obstruction.grid", 3));
  }
  return cfg;
}

AnalysisConfig parse_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error("cli.config", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(doc);
}

AnalysisConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cli.config", "cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"simulate", "fixed-points", "limit-cycle", "nh-check", "check-dp",
                                          "pf-field", "rate",         "classify",    "certify",  "obstruction"};
  return c;
}

RunArtifacts run(const AnalysisConfig& cfg, const std::string& command) {
  const auto& cmds = commands();
  if (std::find(cmds.begin(), cmds.end(), command) == cmds.end()) {
    throw Error("cli.usage", "unknown command '" + command + "' (allowed: " + join(cmds) + ")");
  }
  RunArtifacts art;
  art.command = command;
  art.report = {{"schema", kReportSchema}, {"command", command}, {"system", system_json(cfg)}, {"seed", cfg.seed}};
  art.summary.push_back("config system=" + cfg.sys().name() + " dim=" + std::to_string(cfg.dim()) + " command=" + command);
  try {
    if (command == "simulate") cmd_simulate(cfg, art);
    else if (command == "fixed-points") cmd_fixed_points(cfg, art);
    else if (command == "limit-cycle") cmd_limit_cycle(cfg, art);
    else if (command == "nh-check") cmd_nh_check(cfg, art);
    else if (command == "check-dp") cmd_check_dp(cfg, art);
    else if (command == "pf-field") cmd_pf_field(cfg, art);
    else if (command == "rate") cmd_rate(cfg, art);
    else if (command == "classify") cmd_classify(cfg, art);
    else if (command == "certify") cmd_certify(cfg, art);
    else cmd_obstruction(cfg, art);
  } catch (const Error& e) {
    art.status = e.module() == "cli" ? kExitConfig : kExitNumeric;
    art.report["error"] = {{"code", e.code()}, {"message", e.what()}};
    art.summary.push_back("error code=" + e.code());
  }
  art.report["status"] = art.status;
  return art;
}

std::string dump_json(const json& j) {
  std::string out;
  dump_into(j, out, 0);
  out += "\n";
  return out;
}

void emit_report(const RunArtifacts& art, const std::string& dir) {
  if (dir.empty()) throw Error("cli.io", "empty output directory path");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cli.io", "cannot create output directory '" + dir + "'");
  {
    std::ofstream f(fs::path(dir) / "report.json");
    if (!f) throw Error("cli.io", "cannot write report.json in '" + dir + "'");
    f << dump_json(art.report);
    if (!f) throw Error("cli.io", "write failed for report.json");
  }
  if (!art.trajectory_header.empty()) write_csv(fs::path(dir) / "trajectories.csv", art.trajectory_header, art.trajectories);
  if (!art.field_header.empty()) write_csv(fs::path(dir) / "field.csv", art.field_header, art.field);
}

int main(int argc, char** argv) {
  CLI::App app{"Differential positivity analysis of ODE systems"};
  std::string command, config, out;
  std::uint64_t seed = 0;
  int threads = 1;
  app.add_option("command", command, "One of: " + join(commands()))->required()->check(CLI::IsMember(commands()));
  app.add_option("--config", config, "JSON config file")->required();
  app.add_option("--out", out, "Output directory")->required();
  auto* seed_opt = app.add_option("--seed", seed, "Override the config seed");
  auto* threads_opt = app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }
  try {
    AnalysisConfig cfg = load_config(config);
    if (seed_opt->count()) cfg.seed = seed;
    if (threads_opt->count()) cfg.threads = threads;
    if (out.empty()) throw Error("cli.io", "empty output directory path");
    const auto art = run(cfg, command);
    for (const auto& line : art.summary) std::cout << line << '\n';
    emit_report(art, out);
    std::cout << "report dir=" << out << " status=" << art.status << '\n';
    return art.status;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.module() == "cli" ? kExitConfig : kExitNumeric;
  }
}

}  // namespace diffpos::cli
