#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hicospec/geometry.hpp"
#include "hicospec/micro_limit.hpp"

namespace hicospec::pipe {

inline constexpr const char* kCodeVersion = "hicospec 0.1.0";

// canonical execution order; config stage lists are reordered to match
enum class Stage {
  geometry,
  parking,
  shapes,
  beta,
  bands,
  betainf,
  homog,
  spectrum,
  quasimode,
  report,
};

const char* stage_name(Stage s);
Stage stage_from_name(const std::string& name);

// One experiment: a model, resolutions, and the stages to run.  Parsed
// from the sectioned key/value format documented in configs/schema.cfg.
// Every field is validated before any compute starts.
struct ExperimentConfig {
  // [run]
  std::vector<Stage> stages;
  std::string out_dir = "runs/out";
  std::uint64_t seed = 1;
  int n_seeds = 1;
  bool plots = false;

  // [model] (+ one [shape <id>] section per family member)
  geo::RandomModel model;
  double window_edge = 8;
  double parking_theta = -1;  // parking models: measured jamming coverage

  // [shapes]
  double shape_h = 1.0 / 128;
  int n_modes = 200;

  // [beta]
  double lambda_max = 120;
  int beta_samples = 16;

  // [betainf]
  double betainf_lambda = -1;
  std::vector<double> betainf_m = {4, 8, 16};
  double shift_pitch = 0;  // 0: the model's default

  // [homog]
  double homog_h = 1.0 / 64;

  // [spectrum]
  std::vector<double> spec_eps = {0.25};
  double h_over_eps = 1.0 / 32;
  std::string bc = "dirichlet";
  double t1 = 0, t2 = 60;
  int max_count = 64;
  double relevance_L = 0;  // 0: box edge / 4

  // [quasimode]
  std::string qm_kind = "plane-wave";
  bool qm_midband = true;  // lambda = midpoint of the first predicted band
  double qm_lambda = 0;
  std::vector<double> qm_eps = {0.25};
  std::vector<double> qm_L = {1};
  int qm_mode = 0;

  std::string source;  // canonical config text, hashed into the manifest
};

// the model's shape family keyed by shape id; parking models park unit cubes
std::vector<std::pair<std::string, geo::Shape>> family_shapes(
    const geo::RandomModel& model);

// Dirichlet spectra for every family member with positive pool intensity,
// resolved through the on-disk cache (HICOSPEC_CACHE).
micro::SpectraMap load_family_spectra(const geo::RandomModel& model,
                                      double shape_h, int n_modes,
                                      double parking_theta = -1);

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string preset_config(const std::string& name);  // shipped presets

// fail-fast domain validation; throws ConfigError before any compute
void validate(const ExperimentConfig& cfg);

std::string config_hash(const ExperimentConfig& cfg);  // fnv1a-64 hex

struct RunManifest {
  std::string config_hash;
  std::string code_version;
  std::string out_dir;
  std::vector<std::uint64_t> seeds;
  double wall_clock_s = 0;
  std::vector<std::string> outputs;  // relative to out_dir, sorted

  std::string to_json() const;
};

// Executes the configured stages in canonical order, writing one artifact
// set under cfg.out_dir plus run_manifest.json.  Any stage failure is
// rethrown with the stage name prefixed, preserving the error type.
RunManifest run_pipeline(const ExperimentConfig& cfg);

// Human-readable summary assembled from the artifacts in out_dir
// (bands.csv required, the rest optional).  Written by the report stage
// as summary.txt.
std::string report_text(const std::string& out_dir);

}  // namespace hicospec::pipe
