#include "hicospec/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <variant>

#include "hicospec/common.hpp"
#include "hicospec/direct_solver.hpp"
#include "hicospec/homogenization.hpp"
#include "hicospec/micro_limit.hpp"
#include "hicospec/shape_spectra.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace hicospec::pipe {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------
// config text

struct StageInfo {
  Stage stage;
  const char* name;
};

constexpr StageInfo kStages[] = {
    {Stage::geometry, "geometry"}, {Stage::parking, "parking"},
    {Stage::shapes, "shapes"},     {Stage::beta, "beta"},
    {Stage::bands, "bands"},       {Stage::betainf, "betainf"},
    {Stage::homog, "homog"},       {Stage::spectrum, "spectrum"},
    {Stage::quasimode, "quasimode"}, {Stage::report, "report"},
};

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

double num(const std::string& tok, const std::string& where) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(tok, &pos);
  } catch (...) {
    pos = 0;
  }
  if (pos != tok.size())
    throw ConfigError(where + ": not a number: '" + tok + "'");
  return v;
}

int integer(const std::string& tok, const std::string& where) {
  const double v = num(tok, where);
  if (v != std::floor(v) || std::abs(v) > 1e9)
    throw ConfigError(where + ": not an integer: '" + tok + "'");
  return static_cast<int>(v);
}

// one parsed [section]; keys are consumed by the readers so that anything
// left over is reported as unknown
struct Sec {
  std::string head;  // "run", "model", "shape <id>", ...
  std::map<std::string, std::string> kv;
  std::set<std::string> used;

  std::optional<std::string> take(const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    used.insert(key);
    return it->second;
  }
  std::string need(const std::string& key) {
    auto v = take(key);
    if (!v) throw ConfigError("[" + head + "] is missing key '" + key + "'");
    return *v;
  }
  double take_num(const std::string& key, double dflt) {
    auto v = take(key);
    return v ? num(*v, "[" + head + "] " + key) : dflt;
  }
  int take_int(const std::string& key, int dflt) {
    auto v = take(key);
    return v ? integer(*v, "[" + head + "] " + key) : dflt;
  }
  std::vector<double> take_list(const std::string& key,
                                std::vector<double> dflt) {
    auto v = take(key);
    if (!v) return dflt;
    std::vector<double> out;
    for (const auto& tok : split_ws(*v))
      out.push_back(num(tok, "[" + head + "] " + key));
    return out;
  }
  void finish() const {
    for (const auto& [key, val] : kv)
      if (!used.count(key))
        throw ConfigError("unknown key '" + key + "' in [" + head + "]");
  }
};

std::vector<Sec> split_sections(const std::string& text) {
  std::vector<Sec> secs;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  Sec* cur = nullptr;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const std::string where = "config line " + std::to_string(line_no);

    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unclosed section");
      const std::string head = line.substr(1, line.size() - 2);
      if (split_ws(head).empty())
        throw ConfigError(where + ": empty section name");
      for (const auto& s : secs)
        if (s.head == head)
          throw ConfigError(where + ": duplicate section [" + head + "]");
      secs.push_back({head, {}, {}});
      cur = &secs.back();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(where + ": expected 'key = value'");
    if (!cur) throw ConfigError(where + ": key before any [section]");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t");
      return s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (val.empty()) throw ConfigError(where + ": empty value for '" + key +
                                       "'");
    if (cur->kv.count(key))
      throw ConfigError(where + ": duplicate key '" + key + "' in [" +
                        cur->head + "]");
    cur->kv[key] = val;
  }
  return secs;
}

geo::ShapeKind shape_kind(const std::string& tok, const std::string& where) {
  if (tok == "interval") return geo::ShapeKind::interval;
  if (tok == "square") return geo::ShapeKind::square;
  if (tok == "disk") return geo::ShapeKind::disk;
  throw ConfigError(where + ": unknown shape kind '" + tok +
                    "' (interval | square | disk)");
}

bool is_parking(const geo::RandomModel& model) {
  return std::holds_alternative<geo::RandomParking>(model.variant);
}

}  // namespace

std::vector<std::pair<std::string, geo::Shape>> family_shapes(
    const geo::RandomModel& model) {
  std::vector<std::pair<std::string, geo::Shape>> out;
  if (const auto* b = std::get_if<geo::BernoulliLattice>(&model.variant)) {
    for (const auto& ws : b->shapes) out.push_back({ws.shape.id, ws.shape});
  } else if (const auto* s =
                 std::get_if<geo::ScaledLattice>(&model.variant)) {
    out.push_back({s->base.id, s->base});
  } else {
    geo::Shape item;
    item.id = "unit-cube";
    item.kind = model.dim == 1 ? geo::ShapeKind::interval
                               : geo::ShapeKind::square;
    item.size = 1;
    out.push_back({item.id, item});
  }
  return out;
}

micro::SpectraMap load_family_spectra(const geo::RandomModel& model,
                                      double shape_h, int n_modes,
                                      double parking_theta) {
  spectra::SpectrumStore store;
  micro::SpectraMap out;
  const auto entries = spectra::pool_entries(model, parking_theta);
  for (const auto& [id, shape] : family_shapes(model)) {
    const bool live =
        std::any_of(entries.begin(), entries.end(), [&](const auto& e) {
          return e.id == id && e.intensity > 0;
        });
    if (live) out.emplace(id, store.get(shape, shape_h, n_modes));
  }
  return out;
}

const char* stage_name(Stage s) {
  for (const auto& e : kStages)
    if (e.stage == s) return e.name;
  return "?";
}

Stage stage_from_name(const std::string& name) {
  for (const auto& e : kStages)
    if (name == e.name) return e.stage;
  throw ConfigError("unknown stage '" + name + "'");
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  cfg.source = text;
  auto secs = split_sections(text);

  auto find = [&](const std::string& head) -> Sec* {
    for (auto& s : secs)
      if (s.head == head) return &s;
    return nullptr;
  };

  if (Sec* run = find("run")) {
    if (auto v = run->take("stages")) {
      cfg.stages.clear();
      for (const auto& tok : split_ws(*v))
        cfg.stages.push_back(stage_from_name(tok));
    }
    if (auto v = run->take("out")) cfg.out_dir = *v;
    if (auto v = run->take("seed")) {
      try {
        cfg.seed = std::stoull(*v);
      } catch (...) {
        throw ConfigError("[run] seed: not an integer: '" + *v + "'");
      }
    }
    cfg.n_seeds = run->take_int("n_seeds", cfg.n_seeds);
    if (auto v = run->take("plots")) {
      if (*v != "on" && *v != "off")
        throw ConfigError("[run] plots must be on or off");
      cfg.plots = *v == "on";
    }
    run->finish();
  }
  if (cfg.stages.empty())
    cfg.stages = {Stage::geometry, Stage::shapes,   Stage::beta,
                  Stage::bands,    Stage::homog,    Stage::spectrum,
                  Stage::quasimode, Stage::report};

  Sec* model = find("model");
  if (!model) throw ConfigError("config needs a [model] section");
  const std::string kind = model->need("kind");
  cfg.model.dim = model->take_int("dim", 2);
  if (auto v = model->take("seed")) {
    try {
      cfg.model.master_seed = std::stoull(*v);
    } catch (...) {
      throw ConfigError("[model] seed: not an integer: '" + *v + "'");
    }
  }
  cfg.window_edge = model->take_num("window", cfg.window_edge);
  cfg.parking_theta = model->take_num("parking_theta", cfg.parking_theta);

  std::vector<std::pair<std::string, Sec*>> shape_secs;
  for (auto& s : secs) {
    const auto toks = split_ws(s.head);
    if (toks.size() == 2 && toks[0] == "shape")
      shape_secs.push_back({toks[1], &s});
    else if (toks[0] == "shape")
      throw ConfigError("[shape] sections need exactly one id: [shape sq]");
  }
  auto read_shape = [](const std::string& id, Sec* s) {
    geo::Shape sh;
    sh.id = id;
    sh.kind = shape_kind(s->need("kind"), "[" + s->head + "] kind");
    sh.size = s->take_num("size", 0);
    return sh;
  };

  if (kind == "empty") {
    geo::BernoulliLattice lat;
    geo::Shape none;
    none.id = "none";
    none.kind = geo::ShapeKind::square;
    none.size = 0.5;
    lat.shapes.push_back({none, 0.0});
    cfg.model.variant = lat;
    if (!shape_secs.empty())
      throw ConfigError("the empty model takes no [shape] sections");
  } else if (kind == "bernoulli_lattice") {
    geo::BernoulliLattice lat;
    lat.pitch = model->take_num("pitch", lat.pitch);
    lat.min_gap = model->take_num("min_gap", lat.min_gap);
    for (auto& [id, sec] : shape_secs) {
      geo::WeightedShape ws;
      ws.shape = read_shape(id, sec);
      ws.prob = sec->take_num("prob", 1.0);
      sec->finish();
      lat.shapes.push_back(ws);
    }
    cfg.model.variant = lat;
  } else if (kind == "scaled_lattice") {
    geo::ScaledLattice lat;
    lat.pitch = model->take_num("pitch", lat.pitch);
    lat.min_gap = model->take_num("min_gap", lat.min_gap);
    if (shape_secs.size() != 1)
      throw ConfigError("scaled_lattice needs exactly one [shape] section");
    lat.base = read_shape(shape_secs[0].first, shape_secs[0].second);
    shape_secs[0].second->finish();
    const std::string sv = model->need("scales");
    for (const auto& tok : split_ws(sv)) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos)
        throw ConfigError("[model] scales: expected r:weight, got '" + tok +
                          "'");
      lat.scales.push_back({num(tok.substr(0, colon), "[model] scales"),
                            num(tok.substr(colon + 1), "[model] scales")});
    }
    cfg.model.variant = lat;
  } else if (kind == "parking") {
    geo::RandomParking park;
    park.t_max = model->take_num("t_max", park.t_max);
    park.probe_pitch = model->take_num("probe_pitch", park.probe_pitch);
    park.min_gap = model->take_num("min_gap", park.min_gap);
    cfg.model.variant = park;
    if (!shape_secs.empty())
      throw ConfigError("parking models park unit cubes; no [shape] sections");
  } else {
    throw ConfigError("[model] kind must be empty | bernoulli_lattice | "
                      "scaled_lattice | parking, got '" + kind + "'");
  }
  model->finish();

  if (Sec* s = find("shapes")) {
    cfg.shape_h = s->take_num("h", cfg.shape_h);
    cfg.n_modes = s->take_int("n_modes", cfg.n_modes);
    s->finish();
  }
  if (Sec* s = find("beta")) {
    cfg.lambda_max = s->take_num("lambda_max", cfg.lambda_max);
    cfg.beta_samples = s->take_int("samples", cfg.beta_samples);
    s->finish();
  }
  if (Sec* s = find("betainf")) {
    cfg.betainf_lambda = s->take_num("lambda", cfg.betainf_lambda);
    cfg.betainf_m = s->take_list("m", cfg.betainf_m);
    cfg.shift_pitch = s->take_num("shift_pitch", cfg.shift_pitch);
    s->finish();
  }
  if (Sec* s = find("homog")) {
    cfg.homog_h = s->take_num("h", cfg.homog_h);
    s->finish();
  }
  if (Sec* s = find("spectrum")) {
    cfg.spec_eps = s->take_list("eps", cfg.spec_eps);
    cfg.h_over_eps = s->take_num("h_over_eps", cfg.h_over_eps);
    if (auto v = s->take("bc")) cfg.bc = *v;
    if (auto v = s->take("window")) {
      const auto toks = split_ws(*v);
      if (toks.size() != 2)
        throw ConfigError("[spectrum] window needs two numbers: t1 t2");
      cfg.t1 = num(toks[0], "[spectrum] window");
      cfg.t2 = num(toks[1], "[spectrum] window");
    }
    cfg.max_count = s->take_int("max_count", cfg.max_count);
    cfg.relevance_L = s->take_num("relevance_L", cfg.relevance_L);
    s->finish();
  }
  if (Sec* s = find("quasimode")) {
    if (auto v = s->take("kind")) cfg.qm_kind = *v;
    if (auto v = s->take("lambda")) {
      if (*v == "mid-band") {
        cfg.qm_midband = true;
      } else {
        cfg.qm_midband = false;
        cfg.qm_lambda = num(*v, "[quasimode] lambda");
      }
    }
    cfg.qm_eps = s->take_list("eps", cfg.qm_eps);
    cfg.qm_L = s->take_list("L", cfg.qm_L);
    cfg.qm_mode = s->take_int("mode", cfg.qm_mode);
    s->finish();
  }

  for (const auto& s : secs) {
    const auto toks = split_ws(s.head);
    static const std::set<std::string> known{
        "run", "model", "shapes", "beta", "betainf",
        "homog", "spectrum", "quasimode"};
    if (toks[0] != "shape" && !known.count(s.head))
      throw ConfigError("unknown section [" + s.head + "]");
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_config(buf.str());
}

namespace {

bool has_stage(const ExperimentConfig& cfg, Stage s) {
  return std::find(cfg.stages.begin(), cfg.stages.end(), s) !=
         cfg.stages.end();
}

}  // namespace

void validate(const ExperimentConfig& cfg) {
  if (cfg.stages.empty()) throw ConfigError("no stages requested");
  if (cfg.out_dir.empty()) throw ConfigError("[run] out must not be empty");
  if (cfg.n_seeds < 1) throw ConfigError("[run] n_seeds must be >= 1");
  cfg.model.validate();
  if (cfg.window_edge <= 0) throw ConfigError("[model] window must be > 0");
  if (cfg.window_edge < cfg.model.lattice_pitch())
    throw ConfigError("[model] window smaller than the lattice pitch");
  if (cfg.shape_h <= 0) throw ConfigError("[shapes] h must be > 0");
  if (cfg.n_modes < 1) throw ConfigError("[shapes] n_modes must be >= 1");
  if (cfg.lambda_max <= 0) throw ConfigError("[beta] lambda_max must be > 0");
  if (cfg.beta_samples < 2) throw ConfigError("[beta] samples must be >= 2");
  if (cfg.homog_h <= 0) throw ConfigError("[homog] h must be > 0");

  if (has_stage(cfg, Stage::parking) && !is_parking(cfg.model))
    throw ConfigError("the parking stage needs a parking model");
  if (is_parking(cfg.model) && cfg.parking_theta <= 0)
    for (const Stage s : {Stage::shapes, Stage::beta, Stage::bands,
                          Stage::betainf, Stage::quasimode})
      if (has_stage(cfg, s))
        throw ConfigError(
            std::string("parking models need [model] parking_theta for the ") +
            stage_name(s) +
            " stage (run the parking stage to measure it)");

  if (has_stage(cfg, Stage::betainf)) {
    if (cfg.betainf_lambda <= 0)
      throw ConfigError("[betainf] lambda must be > 0");
    if (cfg.betainf_m.empty()) throw ConfigError("[betainf] m must be set");
    for (const double m : cfg.betainf_m)
      if (m <= 0 || m > cfg.window_edge)
        throw ConfigError("[betainf] m values must lie in (0, window]");
    if (cfg.shift_pitch < 0)
      throw ConfigError("[betainf] shift_pitch must be >= 0");
  }

  if (cfg.bc != "dirichlet" && cfg.bc != "periodic")
    throw ConfigError("[spectrum] bc must be dirichlet or periodic");
  if (cfg.spec_eps.empty()) throw ConfigError("[spectrum] eps must be set");
  for (const double e : cfg.spec_eps)
    if (e <= 0 || e > 1) throw ConfigError("[spectrum] eps must lie in (0,1]");
  if (cfg.h_over_eps <= 0 || cfg.h_over_eps > 0.5)
    throw ConfigError("[spectrum] h_over_eps must lie in (0, 0.5]");
  if (cfg.t1 > cfg.t2) throw ConfigError("[spectrum] window has t1 > t2");
  if (cfg.max_count < 1) throw ConfigError("[spectrum] max_count must be >= 1");
  if (cfg.relevance_L < 0)
    throw ConfigError("[spectrum] relevance_L must be >= 0");
  if (has_stage(cfg, Stage::spectrum)) {
    const double n_side = cfg.window_edge / cfg.h_over_eps;
    if (n_side * n_side > 4.5e6)
      throw ConfigError("[spectrum] grid " + std::to_string(int(n_side)) +
                        "^2 is too large for certified extraction");
    for (const double e : cfg.spec_eps) {
      const double h = e * cfg.h_over_eps;
      const double ceiling = 0.1 / (h * h);
      if (cfg.t2 > ceiling)
        throw ConfigError("[spectrum] window top " + fmt(cfg.t2) +
                          " is above the trust ceiling " + fmt(ceiling) +
                          " at eps = " + fmt(e));
    }
    const double box = *std::min_element(cfg.spec_eps.begin(),
                                         cfg.spec_eps.end()) *
                       cfg.window_edge;
    if (cfg.relevance_L > box + 1e-12)
      throw ConfigError("[spectrum] relevance_L exceeds the smallest grid box");
  }

  if (cfg.qm_kind != "plane-wave" && cfg.qm_kind != "marking")
    throw ConfigError("[quasimode] kind must be plane-wave or marking");
  if (cfg.qm_eps.empty() || cfg.qm_L.empty())
    throw ConfigError("[quasimode] eps and L must be set");
  for (const double e : cfg.qm_eps)
    if (e <= 0 || e > 1)
      throw ConfigError("[quasimode] eps must lie in (0,1]");
  if (cfg.qm_mode < 0) throw ConfigError("[quasimode] mode must be >= 0");
  if (!cfg.qm_midband && cfg.qm_lambda < 0)
    throw ConfigError("[quasimode] lambda must be >= 0 or mid-band");
  if (has_stage(cfg, Stage::quasimode))
    for (const double e : cfg.qm_eps)
      for (const double L : cfg.qm_L)
        if (L <= 0 || L > e * cfg.window_edge + 1e-12)
          throw ConfigError("[quasimode] L = " + fmt(L) +
                            " does not fit the grid box " +
                            fmt(e * cfg.window_edge) + " at eps = " + fmt(e));
}

std::string config_hash(const ExperimentConfig& cfg) {
  return hex64(fnv1a64(cfg.source));
}

// ---------------------------------------------------------------------------
// run state: products shared between stages, computed on demand

namespace {

struct RunState {
  const ExperimentConfig& cfg;
  std::map<std::uint64_t, geo::Realization> reals;
  std::optional<micro::SpectraMap> spectra;
  std::optional<micro::SpectralSet> predicted;
  std::optional<hom::HomogenizedTensor> ahom;

  explicit RunState(const ExperimentConfig& c) : cfg(c) {}

  std::vector<std::uint64_t> seeds() const {
    std::vector<std::uint64_t> out;
    for (int i = 0; i < cfg.n_seeds; ++i) out.push_back(cfg.seed + i);
    return out;
  }

  const geo::Realization& realization(std::uint64_t seed) {
    auto it = reals.find(seed);
    if (it == reals.end()) {
      const Box w = Box::centered({0, 0}, cfg.window_edge);
      it = reals.emplace(seed, geo::generate(cfg.model, w, seed)).first;
    }
    return it->second;
  }

  const micro::SpectraMap& spectra_map() {
    if (!spectra)
      spectra = load_family_spectra(cfg.model, cfg.shape_h, cfg.n_modes,
                                    cfg.parking_theta);
    return *spectra;
  }

  const micro::SpectralSet& predicted_set() {
    if (!predicted)
      predicted = micro::predicted_spectrum(cfg.model, cfg.lambda_max,
                                            spectra_map(), cfg.parking_theta);
    return *predicted;
  }

  const hom::HomogenizedTensor& ahom_tensor() {
    if (!ahom) {
      const auto cell = hom::supercell(realization(cfg.seed), cfg.homog_h);
      const auto cx = hom::solve_corrector(cell, 0);
      const auto cy = hom::solve_corrector(cell, 1);
      ahom = hom::homogenized_matrix(cell, cx, cy);
    }
    return *ahom;
  }
};

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + p.string() + "'");
  f << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot read '" + p.string() + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

ds::Bc bc_of(const std::string& tag) {
  return tag == "periodic" ? ds::Bc::periodic : ds::Bc::dirichlet;
}

std::string geom_name(const ExperimentConfig& cfg, std::uint64_t seed) {
  return cfg.n_seeds == 1 ? "geom.json"
                          : "geom_s" + std::to_string(seed) + ".json";
}

// ---------------------------------------------------------------------------
// stages

using Outputs = std::vector<std::string>;

void stage_geometry(RunState& st, const fs::path& dir, Outputs& outs) {
  for (const auto seed : st.seeds()) {
    const std::string name = geom_name(st.cfg, seed);
    write_file(dir / name, geo::to_json(st.realization(seed)));
    outs.push_back(name);
  }
}

void stage_parking(RunState& st, const fs::path& dir, Outputs& outs) {
  std::string csv = "seed,window_edge,count,coverage,jammed\n";
  for (const auto seed : st.seeds()) {
    const auto& real = st.realization(seed);
    csv += std::to_string(seed) + "," + fmt(st.cfg.window_edge) + "," +
           std::to_string(real.inclusions.size()) + "," +
           fmt(geo::volume_fraction(real)) + "," +
           (real.parking_jammed ? "1" : "0") + "\n";
  }
  write_file(dir / "parking.csv", csv);
  outs.push_back("parking.csv");
}

void stage_shapes(RunState& st, const fs::path& dir, Outputs& outs) {
  std::string csv = "shape_id,h,n_modes,area,lambda1,captured_mass,truncated\n";
  for (const auto& [id, spec] : st.spectra_map())
    csv += id + "," + fmt(spec.h) + "," + std::to_string(spec.n_modes) + "," +
           fmt(spec.area) + "," + fmt(spec.lambda1()) + "," +
           fmt(spec.captured_mass()) + "," + (spec.truncated ? "1" : "0") +
           "\n";
  write_file(dir / "shapes.csv", csv);
  outs.push_back("shapes.csv");
}

void stage_beta(RunState& st, const fs::path& dir, Outputs& outs) {
  const auto curve =
      micro::beta_curve(st.cfg.model, st.cfg.lambda_max, st.cfg.beta_samples,
                        st.spectra_map(), st.cfg.parking_theta);
  write_file(dir / "beta.csv", micro::beta_csv(curve));
  outs.push_back("beta.csv");
}

void stage_bands(RunState& st, const fs::path& dir, Outputs& outs) {
  const auto& set = st.predicted_set();
  write_file(dir / "bands.csv",
             "# lambda_max " + fmt(set.lambda_max) +
                 " endpoint_uncertainty " + fmt(set.endpoint_uncertainty) +
                 "\n" + micro::set_csv(set));
  outs.push_back("bands.csv");

  const auto g = micro::limit_set_G(st.cfg.model, st.cfg.lambda_max,
                                    st.spectra_map(), st.cfg.parking_theta);
  write_file(dir / "gset.csv",
             "# method " + g.method + " exact " + (g.exact ? "1" : "0") +
                 " lambda_max " + fmt(g.set.lambda_max) + "\n" +
                 micro::set_csv(g.set));
  outs.push_back("gset.csv");
}

void stage_betainf(RunState& st, const fs::path& dir, Outputs& outs) {
  const double pitch = st.cfg.shift_pitch > 0
                           ? st.cfg.shift_pitch
                           : micro::default_shift_pitch(st.cfg.model);
  const auto rows =
      micro::beta_inf_estimate(st.realization(st.cfg.seed),
                               st.cfg.betainf_lambda, st.cfg.betainf_m,
                               st.spectra_map(), pitch);
  std::string csv = "M,sup_average\n";
  for (const auto& [m, sup] : rows) csv += fmt(m) + "," + fmt(sup) + "\n";
  write_file(dir / "betainf.csv", csv);
  outs.push_back("betainf.csv");
}

void stage_homog(RunState& st, const fs::path& dir, Outputs& outs) {
  const auto& t = st.ahom_tensor();
  std::string csv = "a11,a12,a21,a22,theta,h,res_x,res_y\n";
  csv += fmt(t.a[0][0]) + "," + fmt(t.a[0][1]) + "," + fmt(t.a[1][0]) + "," +
         fmt(t.a[1][1]) + "," + fmt(t.theta) + "," + fmt(t.h) + "," +
         fmt(t.residual[0]) + "," + fmt(t.residual[1]) + "\n";
  write_file(dir / "ahom.csv", csv);
  outs.push_back("ahom.csv");
}

void stage_spectrum(RunState& st, const fs::path& dir, Outputs& outs) {
  const auto& cfg = st.cfg;
  for (const auto seed : st.seeds())
    for (const double eps : cfg.spec_eps) {
      const auto& real = st.realization(seed);
      const auto op =
          ds::assemble(real, eps, eps * cfg.h_over_eps, bc_of(cfg.bc));
      ds::WindowOptions wo;
      wo.max_count = cfg.max_count;
      const auto win = ds::spectrum_window(op, cfg.t1, cfg.t2, wo);
      const double L =
          cfg.relevance_L > 0 ? cfg.relevance_L : op.box.edge_x() / 4;

      std::string csv = "# eps " + fmt(eps) + " seed " +
                        std::to_string(seed) + " bc " + cfg.bc + " window " +
                        fmt(cfg.t1) + " " + fmt(cfg.t2) + " L " + fmt(L) +
                        "\n";
      csv += "eigenvalue,residual,mass_ratio_L\n";
      for (std::size_t i = 0; i < win.lambda.size(); ++i)
        csv += fmt(win.lambda[i]) + "," + fmt(win.residual[i]) + "," +
               fmt(ds::mass_ratio(op, win.vectors[i], L)) + "\n";
      const std::string name =
          "spectrum_e" + fmt(eps) + "_s" + std::to_string(seed) + ".csv";
      write_file(dir / name, csv);
      outs.push_back(name);
    }
}

void stage_quasimode(RunState& st, const fs::path& dir, Outputs& outs) {
  const auto& cfg = st.cfg;
  std::string csv = "epsilon,L,lambda,residual,mass_ratio\n";

  if (cfg.qm_kind == "plane-wave") {
    double lambda = cfg.qm_lambda;
    if (cfg.qm_midband) {
      const auto& set = st.predicted_set();
      if (set.intervals.empty())
        throw PreconditionError("mid-band lambda: no predicted band");
      lambda = 0.5 * (set.intervals.front().first +
                      set.intervals.front().second);
    }
    const double beta =
        micro::beta_eval(cfg.model, lambda, st.spectra_map(),
                         cfg.parking_theta)
            .mid();
    const auto& t = st.ahom_tensor();
    const double ahom = 0.5 * (t.a[0][0] + t.a[1][1]);
    for (const auto seed : st.seeds())
      for (const double eps : cfg.qm_eps)
        for (const double L : cfg.qm_L) {
          const auto& real = st.realization(seed);
          const auto op =
              ds::assemble(real, eps, eps * cfg.h_over_eps, bc_of(cfg.bc));
          const auto rep = ds::plane_wave_quasimode(op, real, lambda, beta,
                                                    ahom, L, cfg.shape_h);
          csv += fmt(eps) + "," + fmt(L) + "," + fmt(rep.lambda) + "," +
                 fmt(rep.residual) + "," + fmt(rep.mass_ratio) + "\n";
        }
  } else {
    const auto family = family_shapes(cfg.model);
    const auto modes =
        spectra::dirichlet_modes(family.front().second, cfg.shape_h,
                                 std::max(cfg.qm_mode + 1, 4),
                                 cfg.qm_mode + 1);
    for (const auto seed : st.seeds())
      for (const double eps : cfg.qm_eps)
        for (const double L : cfg.qm_L) {
          const auto& real = st.realization(seed);
          const auto marking = geo::mark(real, seed);
          const auto op =
              ds::assemble(real, eps, eps * cfg.h_over_eps, bc_of(cfg.bc));
          const auto rep = ds::marking_quasimode(op, real, modes,
                                                 cfg.qm_mode, marking, L);
          csv += fmt(eps) + "," + fmt(L) + "," + fmt(rep.lambda) + "," +
                 fmt(rep.residual) + "," + fmt(rep.mass_ratio) + "\n";
        }
  }
  write_file(dir / "quasimode.csv", csv);
  outs.push_back("quasimode.csv");
}

// ---------------------------------------------------------------------------
// report: assembled from the artifacts alone

struct CsvTable {
  std::vector<std::string> comment;  // leading '#' lines, tokenized
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  bool saw_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      t.comment.push_back(line.substr(1));
      continue;
    }
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (!saw_header) {
      t.header = cells;
      saw_header = true;
    } else {
      t.rows.push_back(cells);
    }
  }
  return t;
}

double comment_value(const CsvTable& t, const std::string& key, double dflt) {
  for (const auto& c : t.comment) {
    const auto toks = split_ws(c);
    for (std::size_t i = 0; i + 1 < toks.size(); ++i)
      if (toks[i] == key) return num(toks[i + 1], "csv comment " + key);
  }
  return dflt;
}

micro::SpectralSet set_from_csv(const CsvTable& t) {
  micro::SpectralSet set;
  set.lambda_max = comment_value(t, "lambda_max", 0);
  set.endpoint_uncertainty = comment_value(t, "endpoint_uncertainty", 0);
  for (const auto& row : t.rows) {
    if (row.size() != 3) throw ConfigError("bands.csv: malformed row");
    if (row[0] == "interval")
      set.intervals.push_back(
          {num(row[1], "bands.csv"), num(row[2], "bands.csv")});
    else
      set.points.push_back(num(row[1], "bands.csv"));
  }
  if (set.lambda_max == 0)
    for (const auto& iv : set.intervals)
      set.lambda_max = std::max(set.lambda_max, iv.second);
  return set;
}

std::string fixed(double v, int w = 12) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%*.6g", w, v);
  return buf;
}

}  // namespace

std::string report_text(const std::string& out_dir) {
  const fs::path dir(out_dir);
  if (!fs::exists(dir / "bands.csv"))
    throw ConfigError("report: missing outputs: bands.csv");
  const auto bands = set_from_csv(parse_csv(read_file(dir / "bands.csv")));
  const auto gaps = bands.gaps();

  std::ostringstream out;
  out << "hicospec run summary\n";
  out << "====================\n\n";

  out << "predicted bands (lambda_max " << fmt(bands.lambda_max) << "):\n";
  for (std::size_t i = 0; i < bands.intervals.size(); ++i)
    out << "  band " << i + 1 << ": [" << fmt(bands.intervals[i].first)
        << ", " << fmt(bands.intervals[i].second) << "]\n";
  for (double p : bands.points) out << "  point: " << fmt(p) << "\n";
  if (gaps.empty()) {
    out << "  no gaps below lambda_max\n";
  } else {
    for (std::size_t i = 0; i < gaps.size(); ++i)
      out << "  gap " << i + 1 << ": (" << fmt(gaps[i].first) << ", "
          << fmt(gaps[i].second) << ")\n";
  }

  if (fs::exists(dir / "ahom.csv")) {
    const auto t = parse_csv(read_file(dir / "ahom.csv"));
    if (!t.rows.empty() && t.rows[0].size() >= 6)
      out << "\nhomogenized matrix: diag (" << t.rows[0][0] << ", "
          << t.rows[0][3] << "), theta " << t.rows[0][4] << "\n";
  }

  if (fs::exists(dir / "parking.csv")) {
    const auto t = parse_csv(read_file(dir / "parking.csv"));
    double sum = 0;
    int jammed = 0;
    for (const auto& row : t.rows) {
      sum += num(row[3], "parking.csv");
      jammed += row[4] == "1";
    }
    if (!t.rows.empty())
      out << "\nparking: mean coverage "
          << fmt(sum / double(t.rows.size())) << " over " << t.rows.size()
          << " windows, " << jammed << " jammed\n";
  }

  // computed spectra: one block per spectrum_*.csv, lexicographic order
  std::vector<fs::path> spec_files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("spectrum_", 0) == 0 && name.size() > 4 &&
        name.substr(name.size() - 4) == ".csv")
      spec_files.push_back(e.path());
  }
  std::sort(spec_files.begin(), spec_files.end());

  for (const auto& p : spec_files) {
    const auto t = parse_csv(read_file(p));
    const double t1 = comment_value(t, "window", 0);
    double t2 = t1;
    for (const auto& c : t.comment) {
      const auto toks = split_ws(c);
      for (std::size_t i = 0; i + 2 < toks.size(); ++i)
        if (toks[i] == "window") t2 = num(toks[i + 2], "spectrum window");
    }
    std::vector<double> lam;
    for (const auto& row : t.rows) lam.push_back(num(row[0], "spectrum csv"));

    out << "\n" << p.filename().string() << " [" << fmt(t1) << ", "
        << fmt(t2) << "]:\n";
    if (lam.empty()) {
      out << "  no eigenvalues found\n";
      continue;
    }
    out << "  " << lam.size() << " eigenvalues\n";

    // 12-bin histogram over the window
    constexpr int kBins = 12;
    int hist[kBins] = {};
    for (double v : lam) {
      int b = t2 > t1 ? int((v - t1) / (t2 - t1) * kBins) : 0;
      ++hist[std::clamp(b, 0, kBins - 1)];
    }
    out << "  histogram:";
    for (int b : hist) out << " " << b;
    out << "\n";

    for (std::size_t i = 0; i < bands.intervals.size(); ++i) {
      const auto [lo, hi] = bands.intervals[i];
      const auto n = std::count_if(lam.begin(), lam.end(), [&](double v) {
        return v >= lo && v <= hi;
      });
      if (hi >= t1 && lo <= t2)
        out << "  in band " << i + 1 << ": " << n << "\n";
    }
    int violations = 0;
    for (const auto& [lo, hi] : gaps) {
      const double m = 0.02 * (hi - lo);
      violations += int(std::count_if(lam.begin(), lam.end(), [&](double v) {
        return v > lo + m && v < hi - m;
      }));
    }
    out << "  in-gap count (2% margin): " << violations << "\n";
    out << "  hausdorff (window-clipped): "
        << fmt(micro::hausdorff_distance(lam, bands, t1, t2)) << "\n";
  }

  if (fs::exists(dir / "quasimode.csv")) {
    const auto t = parse_csv(read_file(dir / "quasimode.csv"));
    out << "\nquasimodes:\n";
    out << "       epsilon           L      lambda    residual  mass_ratio\n";
    for (const auto& row : t.rows) {
      out << "  ";
      for (const auto& cell : row) out << fixed(num(cell, "quasimode.csv"));
      out << "\n";
    }
  }

  if (fs::exists(dir / "betainf.csv")) {
    const auto t = parse_csv(read_file(dir / "betainf.csv"));
    out << "\nbeta_inf window sweep:\n";
    for (const auto& row : t.rows)
      out << "  M = " << row[0] << ": sup average " << row[1] << "\n";
  }

  return out.str();
}

// ---------------------------------------------------------------------------
// SVG plots, derived from the CSVs only

namespace {

std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string beta_svg(const CsvTable& beta, const micro::SpectralSet& bands) {
  constexpr double W = 800, H = 400, ml = 60, mr = 20, mt = 20, mb = 40;
  double xmax = bands.lambda_max, ymin = 0, ymax = 1;
  std::vector<std::pair<double, double>> pts;
  for (const auto& row : beta.rows) {
    const double x = num(row[0], "beta.csv");
    const double y = 0.5 * (num(row[1], "beta.csv") + num(row[2], "beta.csv"));
    pts.push_back({x, y});
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  const auto X = [&](double x) { return ml + x / xmax * (W - ml - mr); };
  const auto Y = [&](double y) {
    return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb);
  };

  std::ostringstream s;
  s << "<svg xmlns='http://www.w3.org/2000/svg' viewBox='0 0 " << W << " "
    << H << "'>\n";
  s << "<rect width='" << W << "' height='" << H << "' fill='white'/>\n";
  for (const auto& [lo, hi] : bands.intervals)
    s << "<rect x='" << svg_num(X(lo)) << "' y='" << mt << "' width='"
      << svg_num(std::max(X(hi) - X(lo), 1.0)) << "' height='"
      << H - mt - mb << "' fill='#dce9f7'/>\n";
  s << "<line x1='" << ml << "' y1='" << svg_num(Y(0)) << "' x2='" << W - mr
    << "' y2='" << svg_num(Y(0)) << "' stroke='#888'/>\n";
  s << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='"
    << H - mb << "' stroke='#888'/>\n";
  // one polyline per gap component; components are separated by poles, so
  // break where consecutive samples straddle a band edge
  std::string path;
  double prev_x = -1;
  auto flush = [&]() {
    if (!path.empty())
      s << "<polyline fill='none' stroke='#c0392b' stroke-width='1.5' "
           "points='" << path << "'/>\n";
    path.clear();
  };
  for (const auto& [x, y] : pts) {
    bool crossed = false;
    if (prev_x >= 0)
      for (const auto& p : bands.points)
        if (prev_x < p && p < x) crossed = true;
    for (const auto& iv : bands.intervals)
      if (prev_x < iv.second && iv.second < x &&
          std::abs(iv.second - x) > 1e-12)
        crossed = crossed || true;
    if (crossed) flush();
    path += svg_num(X(x)) + "," + svg_num(Y(y)) + " ";
    prev_x = x;
  }
  flush();
  s << "<text x='" << (W - mr) << "' y='" << H - 10
    << "' text-anchor='end' font-size='14' fill='#444'>lambda</text>\n";
  s << "<text x='10' y='" << mt + 10
    << "' font-size='14' fill='#444'>beta</text>\n";
  s << "</svg>\n";
  return s.str();
}

std::string spectrum_svg(const micro::SpectralSet& bands,
                         const std::vector<std::pair<std::string,
                                                     std::vector<double>>>&
                             spectra,
                         double t1, double t2) {
  constexpr double W = 800, ml = 120, mr = 20, row_h = 28, mt = 30;
  const double H = mt + row_h * (double(spectra.size()) + 1) + 20;
  const auto X = [&](double x) {
    return ml + (x - t1) / std::max(t2 - t1, 1e-300) * (W - ml - mr);
  };
  std::ostringstream s;
  s << "<svg xmlns='http://www.w3.org/2000/svg' viewBox='0 0 " << W << " "
    << svg_num(H) << "'>\n";
  s << "<rect width='" << W << "' height='" << svg_num(H)
    << "' fill='white'/>\n";
  double y = mt;
  s << "<text x='10' y='" << y + 14
    << "' font-size='13' fill='#444'>predicted</text>\n";
  for (const auto& [lo, hi] : bands.intervals) {
    if (hi < t1 || lo > t2) continue;
    s << "<rect x='" << svg_num(X(std::max(lo, t1))) << "' y='" << y
      << "' width='"
      << svg_num(std::max(X(std::min(hi, t2)) - X(std::max(lo, t1)), 1.0))
      << "' height='18' fill='#dce9f7' stroke='#7fa8d0'/>\n";
  }
  for (const auto& [label, lam] : spectra) {
    y += row_h;
    s << "<text x='10' y='" << y + 14 << "' font-size='13' fill='#444'>"
      << label << "</text>\n";
    for (double v : lam) {
      if (v < t1 || v > t2) continue;
      s << "<line x1='" << svg_num(X(v)) << "' y1='" << y << "' x2='"
        << svg_num(X(v)) << "' y2='" << y + 18
        << "' stroke='#c0392b' stroke-width='1'/>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

void stage_report(RunState& st, const fs::path& dir, Outputs& outs) {
  write_file(dir / "summary.txt", report_text(dir.string()));
  outs.push_back("summary.txt");
  if (!st.cfg.plots) return;

  if (fs::exists(dir / "beta.csv") && fs::exists(dir / "bands.csv")) {
    const auto bands = set_from_csv(parse_csv(read_file(dir / "bands.csv")));
    write_file(dir / "beta.svg",
               beta_svg(parse_csv(read_file(dir / "beta.csv")), bands));
    outs.push_back("beta.svg");
  }
  if (fs::exists(dir / "bands.csv")) {
    const auto bands = set_from_csv(parse_csv(read_file(dir / "bands.csv")));
    std::vector<std::pair<std::string, std::vector<double>>> spectra;
    double t1 = 0, t2 = bands.lambda_max;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto name = e.path().filename().string();
      if (name.rfind("spectrum_", 0) == 0 &&
          name.substr(name.size() - 4) == ".csv")
        files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
      const auto t = parse_csv(read_file(p));
      std::vector<double> lam;
      for (const auto& row : t.rows)
        lam.push_back(num(row[0], "spectrum csv"));
      spectra.push_back({p.stem().string().substr(9), lam});
    }
    if (!spectra.empty()) {
      write_file(dir / "spectrum.svg", spectrum_svg(bands, spectra, t1, t2));
      outs.push_back("spectrum.svg");
    }
  }
}

template <typename F>
void guarded(Stage s, F&& f) {
  const std::string tag = std::string("stage ") + stage_name(s) + ": ";
  try {
    f();
  } catch (const ConfigError& e) {
    throw ConfigError(tag + e.what());
  } catch (const PreconditionError& e) {
    throw PreconditionError(tag + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(tag + e.what());
  } catch (const std::exception& e) {
    throw NumericalError(tag + e.what());
  }
}

}  // namespace

std::string RunManifest::to_json() const {
  json j;
  j["config_hash"] = config_hash;
  j["code_version"] = code_version;
  j["out_dir"] = out_dir;
  j["seeds"] = seeds;
  j["wall_clock_s"] = wall_clock_s;
  j["outputs"] = outputs;
  return j.dump(2) + "\n";
}

RunManifest run_pipeline(const ExperimentConfig& cfg) {
  validate(cfg);
  const auto start = std::chrono::steady_clock::now();

  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);

  RunState st(cfg);
  RunManifest man;
  man.config_hash = config_hash(cfg);
  man.code_version = kCodeVersion;
  man.out_dir = cfg.out_dir;
  man.seeds = st.seeds();

  if (!cfg.source.empty()) {
    write_file(dir / "config.cfg", cfg.source);
    man.outputs.push_back("config.cfg");
  }

  auto stages = cfg.stages;
  std::sort(stages.begin(), stages.end());
  stages.erase(std::unique(stages.begin(), stages.end()), stages.end());

  for (const Stage s : stages) {
    switch (s) {
      case Stage::geometry:
        guarded(s, [&] { stage_geometry(st, dir, man.outputs); });
        break;
      case Stage::parking:
        guarded(s, [&] { stage_parking(st, dir, man.outputs); });
        break;
      case Stage::shapes:
        guarded(s, [&] { stage_shapes(st, dir, man.outputs); });
        break;
      case Stage::beta:
        guarded(s, [&] { stage_beta(st, dir, man.outputs); });
        break;
      case Stage::bands:
        guarded(s, [&] { stage_bands(st, dir, man.outputs); });
        break;
      case Stage::betainf:
        guarded(s, [&] { stage_betainf(st, dir, man.outputs); });
        break;
      case Stage::homog:
        guarded(s, [&] { stage_homog(st, dir, man.outputs); });
        break;
      case Stage::spectrum:
        guarded(s, [&] { stage_spectrum(st, dir, man.outputs); });
        break;
      case Stage::quasimode:
        guarded(s, [&] { stage_quasimode(st, dir, man.outputs); });
        break;
      case Stage::report:
        guarded(s, [&] { stage_report(st, dir, man.outputs); });
        break;
    }
  }

  std::sort(man.outputs.begin(), man.outputs.end());
  man.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  write_file(dir / "run_manifest.json", man.to_json());
  return man;
}

std::string preset_config(const std::string& name) {
  if (name == "bernoulli-halfband")
    return R"(# Bernoulli half-occupancy square lattice: the end-to-end
# validation preset.  Small enough to run in well under a minute with a
# warm shape cache, yet it exercises every stage and artifact kind.

[run]
stages = geometry shapes beta bands homog spectrum quasimode report
out = runs/bernoulli-halfband
seed = 1
n_seeds = 1
plots = on

[model]
kind = bernoulli_lattice
dim = 2
pitch = 1
min_gap = 0.05
window = 8

[shape sq]
kind = square
size = 0.5
prob = 0.5

[shapes]
h = 0.0078125
n_modes = 200

[beta]
lambda_max = 120
samples = 16

[homog]
h = 0.015625

[spectrum]
eps = 0.25
h_over_eps = 0.03125
bc = dirichlet
window = 0 60
max_count = 64
relevance_L = 0.5

# Demo scale: the support box holds a couple of wavelengths, so the
# residual lands at order one. Meaningful decay needs L of order 8 and
# grids to match (see README).
[quasimode]
kind = plane-wave
lambda = mid-band
eps = 0.25
L = 1.5
)";
  throw ConfigError("unknown preset '" + name + "'");
}

}  // namespace hicospec::pipe
