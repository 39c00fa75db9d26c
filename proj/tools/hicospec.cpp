// hicospec: spectral band-gap laboratory for high-contrast random
// composites.  Every subcommand is config-driven (--config / --preset);
// geometry, shapes, beta, bands, homog, spectrum and quasimode also take
// direct flags for one-off runs on explicit input files.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "hicospec/common.hpp"
#include "hicospec/direct_solver.hpp"
#include "hicospec/geometry.hpp"
#include "hicospec/homogenization.hpp"
#include "hicospec/micro_limit.hpp"
#include "hicospec/pipeline.hpp"
#include "hicospec/shape_spectra.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hicospec;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

void spit(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + path + "'");
  f << text;
}

geo::Shape shape_from_file(const std::string& path) {
  json j;
  try {
    j = json::parse(slurp(path));
  } catch (const json::exception& e) {
    throw ConfigError("shape file '" + path + "': " + e.what());
  }
  geo::Shape s;
  s.id = j.at("id").get<std::string>();
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "interval")
    s.kind = geo::ShapeKind::interval;
  else if (kind == "square")
    s.kind = geo::ShapeKind::square;
  else if (kind == "disk")
    s.kind = geo::ShapeKind::disk;
  else
    throw ConfigError("shape file '" + path + "': unsupported kind '" + kind +
                      "'");
  s.size = j.at("size").get<double>();
  return s;
}

ds::Bc bc_of(const std::string& tag) {
  if (tag == "dirichlet") return ds::Bc::dirichlet;
  if (tag == "periodic") return ds::Bc::periodic;
  throw ConfigError("bc must be dirichlet or periodic, got '" + tag + "'");
}

struct CfgFlags {
  std::string config, preset, out;

  void attach(CLI::App* sub) {
    sub->add_option("-c,--config", config, "experiment config file");
    sub->add_option("--preset", preset, "shipped preset name");
    sub->add_option("--out", out, "override the output directory");
  }
  bool given() const { return !config.empty() || !preset.empty(); }
  pipe::ExperimentConfig load() const {
    if (config.empty() == preset.empty())
      throw ConfigError("give exactly one of --config or --preset");
    auto cfg = config.empty()
                   ? pipe::parse_config(pipe::preset_config(preset))
                   : pipe::load_config(config);
    if (!out.empty()) cfg.out_dir = out;
    return cfg;
  }
};

void print_manifest(const pipe::RunManifest& man) {
  for (const auto& name : man.outputs)
    std::cout << "  " << man.out_dir << "/" << name << "\n";
  std::cout << man.outputs.size() << " artifacts, config " << man.config_hash
            << ", " << fmt(man.wall_clock_s) << " s\n";
}

void run_single_stage(const CfgFlags& flags, pipe::Stage stage) {
  auto cfg = flags.load();
  cfg.stages = {stage};
  print_manifest(pipe::run_pipeline(cfg));
}

std::string spectrum_csv(const ds::GridOperator& op,
                         const ds::SpectrumWindow& win, double eps,
                         std::uint64_t seed, const std::string& bc, double t1,
                         double t2, double L) {
  std::string csv = "# eps " + fmt(eps) + " seed " + std::to_string(seed) +
                    " bc " + bc + " window " + fmt(t1) + " " + fmt(t2) +
                    " L " + fmt(L) + "\n";
  csv += "eigenvalue,residual,mass_ratio_L\n";
  for (std::size_t i = 0; i < win.lambda.size(); ++i)
    csv += fmt(win.lambda[i]) + "," + fmt(win.residual[i]) + "," +
           fmt(ds::mass_ratio(op, win.vectors[i], L)) + "\n";
  return csv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "hicospec: band-gap spectra of high-contrast random composites"};
  // --h is a documented grid-step option, so help has no short form
  app.set_help_flag("--help", "print help and exit");
  app.require_subcommand(1);
  std::function<void()> action;
  const auto sub_help = [](CLI::App* sub) {
    sub->set_help_flag("--help", "print help and exit");
    return sub;
  };

  // ---- run / validate / report ------------------------------------------
  auto* run = sub_help(app.add_subcommand("run", "run the configured stages"));
  auto run_flags = std::make_shared<CfgFlags>();
  run_flags->attach(run);
  auto run_stages = std::make_shared<std::vector<std::string>>();
  run->add_option("--stages", *run_stages,
                  "override the stage list (space separated)");
  run->callback([=, &action] {
    action = [=] {
      auto cfg = run_flags->load();
      if (!run_stages->empty()) {
        cfg.stages.clear();
        for (const auto& name : *run_stages)
          cfg.stages.push_back(pipe::stage_from_name(name));
      }
      print_manifest(pipe::run_pipeline(cfg));
    };
  });

  auto* val = sub_help(
      app.add_subcommand("validate", "parse and validate a config"));
  auto val_flags = std::make_shared<CfgFlags>();
  val_flags->attach(val);
  val->callback([=, &action] {
    action = [=] {
      const auto cfg = val_flags->load();
      pipe::validate(cfg);
      std::cout << "config ok (hash " << pipe::config_hash(cfg) << ", "
                << cfg.stages.size() << " stages)\n";
    };
  });

  auto* rep = sub_help(app.add_subcommand(
      "report", "summarize the artifacts of a finished run"));
  auto rep_flags = std::make_shared<CfgFlags>();
  rep_flags->attach(rep);
  auto rep_dir = std::make_shared<std::string>();
  rep->add_option("--dir", *rep_dir, "existing output directory to summarize");
  rep->callback([=, &action] {
    action = [=] {
      if (!rep_dir->empty())
        std::cout << pipe::report_text(*rep_dir);
      else
        run_single_stage(*rep_flags, pipe::Stage::report);
    };
  });

  // ---- config-only stages -----------------------------------------------
  for (const auto stage : {pipe::Stage::parking, pipe::Stage::betainf}) {
    auto* sub = sub_help(app.add_subcommand(
        pipe::stage_name(stage),
        std::string("run the ") + pipe::stage_name(stage) + " stage"));
    auto flags = std::make_shared<CfgFlags>();
    flags->attach(sub);
    sub->callback([=, &action] {
      action = [=] { run_single_stage(*flags, stage); };
    });
  }

  // ---- geometry -----------------------------------------------------------
  auto* geom = sub_help(
      app.add_subcommand("geometry", "sample a realization"));
  auto geom_flags = std::make_shared<CfgFlags>();
  geom_flags->attach(geom);
  struct GeomOpts {
    std::string model, out = "geom.json";
    double window = 8;
    std::uint64_t seed = 1;
  };
  auto go = std::make_shared<GeomOpts>();
  geom->add_option("--model", go->model, "model description (JSON)");
  geom->add_option("--window", go->window, "window edge length");
  geom->add_option("--seed", go->seed, "realization seed");
  geom->add_option("--out-json", go->out, "output snapshot path");
  geom->callback([=, &action] {
    action = [=] {
      if (geom_flags->given()) {
        run_single_stage(*geom_flags, pipe::Stage::geometry);
        return;
      }
      if (go->model.empty())
        throw ConfigError("geometry needs --config/--preset or --model");
      const auto model = geo::model_from_json(slurp(go->model));
      const auto real = geo::generate(
          model, Box::centered({0, 0}, go->window), go->seed);
      spit(go->out, geo::to_json(real));
      std::cout << go->out << ": " << real.inclusions.size()
                << " inclusions, coverage " << fmt(geo::volume_fraction(real))
                << "\n";
    };
  });

  // ---- shapes -------------------------------------------------------------
  auto* shapes = sub_help(
      app.add_subcommand("shapes", "Dirichlet spectrum of a shape"));
  auto shapes_flags = std::make_shared<CfgFlags>();
  shapes_flags->attach(shapes);
  struct ShapeOpts {
    std::string shape, out;
    double h = 1.0 / 128;
    int modes = 200;
  };
  auto so = std::make_shared<ShapeOpts>();
  shapes->add_option("--shape", so->shape,
                     "shape description (JSON: id, kind, size)");
  shapes->add_option("--h", so->h, "raster step");
  shapes->add_option("--modes", so->modes, "modes to retain");
  shapes->add_option("--out-json", so->out, "write the spectrum as JSON");
  shapes->callback([=, &action] {
    action = [=] {
      if (shapes_flags->given()) {
        run_single_stage(*shapes_flags, pipe::Stage::shapes);
        return;
      }
      if (so->shape.empty())
        throw ConfigError("shapes needs --config/--preset or --shape");
      const auto spec =
          spectra::dirichlet_spectrum(shape_from_file(so->shape), so->h,
                                      so->modes);
      if (!so->out.empty()) spit(so->out, spectra::to_json(spec));
      std::cout << spec.shape_id << ": lambda1 " << fmt(spec.lambda1())
                << ", captured mass " << fmt(spec.captured_mass()) << " of "
                << fmt(spec.area) << (spec.truncated ? " (truncated)" : "")
                << "\n";
    };
  });

  // ---- beta / bands --------------------------------------------------------
  struct MicroOpts {
    std::string model, out;
    double lmax = 120, theta = -1, shape_h = 1.0 / 128;
    int n_modes = 200, samples = 16;
  };
  const auto micro_attach = [](CLI::App* sub, std::shared_ptr<MicroOpts> mo) {
    sub->add_option("--model", mo->model, "model description (JSON)");
    sub->add_option("--lmax", mo->lmax, "spectral ceiling");
    sub->add_option("--theta", mo->theta, "parking coverage (parking models)");
    sub->add_option("--shape-h", mo->shape_h, "shape raster step");
    sub->add_option("--n-modes", mo->n_modes, "modes per shape");
    sub->add_option("--out-csv", mo->out, "output CSV path");
  };

  auto* beta = sub_help(
      app.add_subcommand("beta", "Zhikov beta function of a model"));
  auto beta_flags = std::make_shared<CfgFlags>();
  beta_flags->attach(beta);
  auto bo = std::make_shared<MicroOpts>();
  micro_attach(beta, bo);
  beta->add_option("--samples", bo->samples, "samples per band component");
  beta->callback([=, &action] {
    action = [=] {
      if (beta_flags->given()) {
        run_single_stage(*beta_flags, pipe::Stage::beta);
        return;
      }
      if (bo->model.empty())
        throw ConfigError("beta needs --config/--preset or --model");
      const auto model = geo::model_from_json(slurp(bo->model));
      const auto spectra =
          pipe::load_family_spectra(model, bo->shape_h, bo->n_modes,
                                    bo->theta);
      const auto curve = micro::beta_curve(model, bo->lmax, bo->samples,
                                           spectra, bo->theta);
      const auto csv = micro::beta_csv(curve);
      if (bo->out.empty())
        std::cout << csv;
      else
        spit(bo->out, csv);
    };
  });

  auto* bands = sub_help(
      app.add_subcommand("bands", "predicted spectral bands"));
  auto bands_flags = std::make_shared<CfgFlags>();
  bands_flags->attach(bands);
  auto do_ = std::make_shared<MicroOpts>();
  micro_attach(bands, do_);
  bands->callback([=, &action] {
    action = [=] {
      if (bands_flags->given()) {
        run_single_stage(*bands_flags, pipe::Stage::bands);
        return;
      }
      if (do_->model.empty())
        throw ConfigError("bands needs --config/--preset or --model");
      const auto model = geo::model_from_json(slurp(do_->model));
      const auto spectra =
          pipe::load_family_spectra(model, do_->shape_h, do_->n_modes,
                                    do_->theta);
      const auto set = micro::predicted_spectrum(model, do_->lmax, spectra,
                                                 do_->theta);
      const auto csv = micro::set_csv(set);
      if (do_->out.empty())
        std::cout << csv;
      else
        spit(do_->out, csv);
    };
  });

  // ---- homog ---------------------------------------------------------------
  auto* homog = sub_help(
      app.add_subcommand("homog", "homogenized matrix of a window"));
  auto homog_flags = std::make_shared<CfgFlags>();
  homog_flags->attach(homog);
  struct HomogOpts {
    std::string geom, out = "ahom.json";
    double cell_pitch = 0, h = 1.0 / 64;
  };
  auto ho = std::make_shared<HomogOpts>();
  homog->add_option("--geom", ho->geom, "realization snapshot (JSON)");
  homog->add_option("--cell-pitch", ho->cell_pitch,
                    "restrict to a centered cell of this edge");
  homog->add_option("--h", ho->h, "grid step");
  homog->add_option("--out-json", ho->out, "output path");
  homog->callback([=, &action] {
    action = [=] {
      if (homog_flags->given()) {
        run_single_stage(*homog_flags, pipe::Stage::homog);
        return;
      }
      if (ho->geom.empty())
        throw ConfigError("homog needs --config/--preset or --geom");
      auto real = geo::realization_from_json(slurp(ho->geom));
      if (ho->cell_pitch > 0)
        real = geo::subwindow(real, Box::centered({0, 0}, ho->cell_pitch));
      const auto cell = hom::supercell(real, ho->h);
      const auto cx = hom::solve_corrector(cell, 0);
      const auto cy = hom::solve_corrector(cell, 1);
      const auto t = hom::homogenized_matrix(cell, cx, cy);
      json j;
      j["matrix"] = {{t.a[0][0], t.a[0][1]}, {t.a[1][0], t.a[1][1]}};
      j["theta"] = t.theta;
      j["h"] = t.h;
      j["residuals"] = {t.residual[0], t.residual[1]};
      spit(ho->out, j.dump(2) + "\n");
      std::cout << ho->out << ": diag (" << fmt(t.a[0][0]) << ", "
                << fmt(t.a[1][1]) << "), min eig " << fmt(t.min_eig()) << "\n";
    };
  });

  // ---- spectrum --------------------------------------------------------------
  auto* spec = sub_help(app.add_subcommand(
      "spectrum", "eigenvalues of the scaled operator"));
  auto spec_flags = std::make_shared<CfgFlags>();
  spec_flags->attach(spec);
  struct SpecOpts {
    std::string geom, bc = "dirichlet", out = "spec.csv";
    double eps = 0.25, h = 0;
    std::vector<double> window{0, 60};
    double L = 0;
    int max_count = 64;
  };
  auto po = std::make_shared<SpecOpts>();
  spec->add_option("--geom", po->geom, "realization snapshot (JSON)");
  spec->add_option("--eps", po->eps, "contrast scale");
  spec->add_option("--h", po->h, "grid step (defaults to eps/32)");
  spec->add_option("--bc", po->bc, "dirichlet | periodic");
  spec->add_option("--window", po->window, "window t1 t2")->expected(2);
  spec->add_option("--L", po->L, "relevance box edge (defaults to box/4)");
  spec->add_option("--max-count", po->max_count, "eigenvalue budget");
  spec->add_option("--out-csv", po->out, "output CSV path");
  spec->callback([=, &action] {
    action = [=] {
      if (spec_flags->given()) {
        run_single_stage(*spec_flags, pipe::Stage::spectrum);
        return;
      }
      if (po->geom.empty())
        throw ConfigError("spectrum needs --config/--preset or --geom");
      const auto real = geo::realization_from_json(slurp(po->geom));
      const double h = po->h > 0 ? po->h : po->eps / 32;
      const auto op = ds::assemble(real, po->eps, h, bc_of(po->bc));
      ds::WindowOptions wo;
      wo.max_count = po->max_count;
      const auto win =
          ds::spectrum_window(op, po->window[0], po->window[1], wo);
      const double L = po->L > 0 ? po->L : op.box.edge_x() / 4;
      spit(po->out, spectrum_csv(op, win, po->eps, real.seed, po->bc,
                                 po->window[0], po->window[1], L));
      std::cout << po->out << ": " << win.lambda.size() << " eigenvalues in ["
                << fmt(po->window[0]) << ", " << fmt(po->window[1]) << "], "
                << win.solves << " solves\n";
    };
  });

  // ---- quasimode --------------------------------------------------------------
  auto* qm = sub_help(app.add_subcommand(
      "quasimode", "plane-wave quasimode residual on a realization"));
  auto qm_flags = std::make_shared<CfgFlags>();
  qm_flags->attach(qm);
  struct QmOpts {
    std::string geom, bc = "dirichlet", out = "quasimode.csv";
    double lambda = -1, L = 1, eps = 0.25, h = 0, beta = -1, ahom = 1,
           shape_h = 0;
  };
  auto qo = std::make_shared<QmOpts>();
  qm->add_option("--geom", qo->geom, "realization snapshot (JSON)");
  qm->add_option("--lambda", qo->lambda, "target spectral point");
  qm->add_option("--L", qo->L, "support box edge");
  qm->add_option("--eps", qo->eps, "contrast scale");
  qm->add_option("--h", qo->h, "grid step (defaults to eps/32)");
  qm->add_option("--bc", qo->bc, "dirichlet | periodic");
  qm->add_option("--beta", qo->beta, "beta(lambda), from the beta stage");
  qm->add_option("--ahom", qo->ahom, "homogenized coefficient (scalar)");
  qm->add_option("--shape-h", qo->shape_h, "micro-profile raster step");
  qm->add_option("--out-csv", qo->out, "output CSV path");
  qm->callback([=, &action] {
    action = [=] {
      if (qm_flags->given()) {
        run_single_stage(*qm_flags, pipe::Stage::quasimode);
        return;
      }
      if (qo->geom.empty())
        throw ConfigError("quasimode needs --config/--preset or --geom");
      if (qo->lambda < 0 || qo->beta < 0)
        throw ConfigError(
            "the direct quasimode form needs --lambda and --beta");
      const auto real = geo::realization_from_json(slurp(qo->geom));
      const double h = qo->h > 0 ? qo->h : qo->eps / 32;
      const auto op = ds::assemble(real, qo->eps, h, bc_of(qo->bc));
      const auto rep = ds::plane_wave_quasimode(
          op, real, qo->lambda, qo->beta, qo->ahom, qo->L, qo->shape_h);
      spit(qo->out, "epsilon,L,lambda,residual,mass_ratio\n" + fmt(qo->eps) +
                        "," + fmt(qo->L) + "," + fmt(rep.lambda) + "," +
                        fmt(rep.residual) + "," + fmt(rep.mass_ratio) + "\n");
      std::cout << qo->out << ": residual " << fmt(rep.residual)
                << ", mass ratio " << fmt(rep.mass_ratio) << "\n";
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    action();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const PreconditionError& e) {
    std::cerr << "precondition violation: " << e.what() << "\n";
    return 4;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
