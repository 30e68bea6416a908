#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lensless/pipeline.hpp"
#include "lensless/simulate.hpp"
#include "lensless/solvers.hpp"
#include "lensless/training.hpp"

// JSON schemas. Readers are strict: unknown keys, wrong types and invalid
// values raise ConfigError naming the offending key path.
namespace lensless::config {

using Json = nlohmann::ordered_json;

Json to_json(const NoiseSpec& n);
Json to_json(const Lamp& l);
Json to_json(const IlluminationSpec& s);
Json to_json(PsfKind kind, const PsfParams& p);
Json to_json(const DatasetConfig& c);
Json to_json(const SolverConfig& c);
Json to_json(const TrainConfig& c);

NoiseSpec noise_from_json(const Json& j, const std::string& path = "noise");
Lamp lamp_from_json(const Json& j, const std::string& path = "lamp");
IlluminationSpec illumination_from_json(const Json& j, const std::string& path = "illumination");
DatasetConfig dataset_config_from_json(const Json& j, const std::string& path = "dataset");
SolverConfig solver_config_from_json(const Json& j, const std::string& path = "solver");
TrainConfig train_config_from_json(const Json& j, const std::string& path = "train");

const char* to_string(PsfKind kind);
const char* to_string(IlluminationSpec::Kind kind);
const char* to_string(NoiseSpec::Kind kind);

struct NetArch {
  std::vector<int> widths;  // in, hidden..., out
  double slope = 0.1;
};

// Architecture of a pipeline, independent of any operator. Learnable values
// come either from a parameter blob or from seeded initialization.
struct PipelineArch {
  std::string name = "pipeline";
  BackgroundKind background = BackgroundKind::none;
  std::optional<NetArch> background_net;  // learned_sub only
  std::optional<NetArch> pre;
  std::string inverter = "wiener";  // wiener | admm | le_admm | train_inv | identity
  SolverConfig solver;              // admm, and the le_admm initialization
  int iterations = 5;               // le_admm depth
  double tik_eps = 1e-3;            // wiener, train_inv initialization
  std::optional<NetArch> post;
  bool clamp_output = true;
  std::optional<std::filesystem::path> parameters;  // LLIA blob, absolute once parsed
  std::uint64_t init_seed = 0;
  Json checkpoint = Json::object();  // free-form metadata written by training

  // Channel chain for a `channels`-channel camera; throws ConfigError.
  void validate(int channels, const std::string& path = "pipeline") const;
};

// A relative "parameters" path is resolved against base_dir.
PipelineArch pipeline_arch_from_json(const Json& j, const std::string& path = "pipeline",
                                     const std::filesystem::path& base_dir = {});
Json to_json(const PipelineArch& a);

// Architecture of an existing spec. Initialization-only fields are defaulted.
PipelineArch arch_of(const PipelineSpec& spec, const std::string& name);

// Initializes learnable values from init_seed (networks) and the operator
// (TrainInv filter, tied LeADMM penalties), then overwrites them from the
// blob if one is referenced.
PipelineSpec build_pipeline(const PipelineArch& arch, const SystemOperator& op);

// All parameters(spec) values concatenated as an (N, 1, 1) array.
Tensor parameter_blob(PipelineSpec& spec);
void load_parameter_blob(PipelineSpec& spec, const Tensor& blob);

// Writes <stem>.json (architecture) and <stem>.llia (parameters) next to each
// other; `checkpoint` is stored verbatim under the "checkpoint" key.
void save_pipeline(const std::filesystem::path& json_path, PipelineSpec& spec,
                   const std::string& name, const Json& checkpoint = Json::object());
PipelineSpec load_pipeline(const std::filesystem::path& json_path, const SystemOperator& op);

// Settings of the mismatch decomposition study, run on an uncropped operator
// whose grid equals the scene.
struct MismatchConfig {
  PsfKind psf_kind = PsfKind::random_spots;
  PsfParams psf{16, 16, 3, 12, 0.7, 3, 1.5, 0.6};
  Shape grid{32, 32, 3};
  bool zero_delta = false;  // true: op_hat = op_true
  double epsilon = 1e-2;
  std::vector<double> epsilon_sweep{1e-1, 3e-2, 1e-2, 3e-3, 1e-3};
  std::string mode = "raw";  // raw | direct_sub
  NoiseSpec noise{NoiseSpec::Kind::gaussian, 0.01, 0.0};
  IlluminationSpec illumination{IlluminationSpec::Kind::ambient_uniform, 0.3, {}, 0};
  int n_frames = 16;
  double min_abs_otf = 1e-6;

  void validate() const;
};

MismatchConfig mismatch_config_from_json(const Json& j, const std::string& path = "mismatch");
Json to_json(const MismatchConfig& c);

// The document accepted by --config. Every section is optional; commands
// require the sections they use. Component seeds that are not given default
// to the master seed.
struct RunConfig {
  std::uint64_t seed = 0;
  std::optional<DatasetConfig> dataset;
  std::optional<std::filesystem::path> dataset_manifest;
  std::vector<PipelineArch> pipelines;
  std::optional<TrainConfig> train;
  std::optional<MismatchConfig> mismatch;
  std::string eval_input = "measurement";  // or ground_truth
  std::optional<std::filesystem::path> out;
  std::filesystem::path base_dir;  // directory of the config file

  Json raw;  // the document as read, for provenance
};

RunConfig run_config_from_json(const Json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

// 64-bit FNV-1a over bytes, hex-encoded.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace lensless::config
