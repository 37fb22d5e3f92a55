#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "signkit/classifier.hpp"
#include "signkit/experiment.hpp"
#include "signkit/features.hpp"
#include "signkit/fitting.hpp"
#include "signkit/gradcheck.hpp"
#include "signkit/keypoints.hpp"
#include "signkit/model_io.hpp"
#include "signkit/toy_model.hpp"

namespace fs = std::filesystem;
using namespace signkit;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit : int {
  kOk = 0,
  kOther = 1,
  kUsage = 2,
  kMissingInput = 3,
  kSchema = 4,
  kValidation = 5,
  kGradcheck = 6,
};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Io: return kMissingInput;
    case ErrorCode::SchemaMismatch: return kSchema;
    case ErrorCode::NonFinite:
    case ErrorCode::BehindCamera: return kOther;
    default: return kValidation;
  }
}

void fail_line(const std::string& cls, const std::string& message) {
  std::string m = message;
  std::replace(m.begin(), m.end(), '\n', ' ');
  std::cerr << "error[" << cls << "]: " << m << "\n";
}

void require_input(const fs::path& p, const std::string& what) {
  require(!p.empty() && fs::exists(p), ErrorCode::Io, what + " not found: " + p.string());
}

nlohmann::json read_json(const fs::path& p, const std::string& what) {
  require_input(p, what);
  try {
    return nlohmann::json::parse(io::read_file(p.string()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, what + " " + p.string() + ": " + e.what());
  }
}

void make_out_dir(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  require(!ec, ErrorCode::Io, "cannot create output directory " + out.string() + ": " + ec.message());
}

std::vector<fs::path> sorted_json_files(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorCode::Io, "detection directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  require(!files.empty(), ErrorCode::EmptyInput, "no .json frames in " + dir.string());
  return files;
}

struct Flags {
  std::string model, dataset, schedule, config, mask = "all", out, format, keymap, checkpoint, camera, preset = "toy";
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  int label = 0;
  int points = 10;
  int frames = 0;
  std::vector<std::string> signal;
};

// --- subcommands -------------------------------------------------------------------------

// OpenPose frames of a slowly turning toy body seen by the default camera.
void write_demo_frames(const Flags& f, const BodyModel& m) {
  require(m.dims.n_joints == 9, ErrorCode::InvalidArgument, "--frames needs the toy preset (default keymap)");
  const Keymap keymap = default_toy_keymap();
  std::mt19937_64 rng(f.seed.value_or(0));
  const Params base = sample_scene_params(m.dims, rng);
  const fs::path dir = fs::path(f.out) / "frames";
  fs::create_directories(dir);
  for (int t = 0; t < f.frames; ++t) {
    Params p = base;
    p.global_orient.y() += 0.02 * t;
    p.body_latent *= 1.0 + 0.02 * t;
    const RowMatrixX2d uv = project(Camera{}, forward(m, p).joints_posed);
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04d.json", t);
    io::write_file((dir / name).string(), serialize_openpose_frame(frame_from_joints(uv, keymap)));
  }
  std::cout << "wrote " << f.frames << " OpenPose frames to " << dir.string() << "\n";
}

int cmd_synth_model(const Flags& f) {
  ToyModelOptions opt;
  if (f.preset == "full_skeleton") opt = ToyModelOptions::full_skeleton();
  else if (f.preset == "full_scale") opt = ToyModelOptions::full_scale();
  opt.seed = f.seed.value_or(0);
  make_out_dir(f.out);
  const BodyModel m = make_toy_model(opt);
  const fs::path path = fs::path(f.out) / "model.json";
  save_model(m, path.string(), f.format == "base64" ? ArrayEncoding::Base64 : ArrayEncoding::Nested);
  std::cout << "wrote " << path.string() << " (" << m.dims.n_vertices << " vertices, " << m.dims.n_joints
            << " joints)\n";
  if (f.frames > 0) write_demo_frames(f, m);
  return kOk;
}

int cmd_synth_data(const Flags& f) {
  SynthConfig c = f.config.empty() ? SynthConfig{} : synth_config_from_json(read_json(f.config, "synth config"));
  if (f.seed) c.seed = *f.seed;
  if (!f.signal.empty()) c.signal_channels = f.signal == std::vector<std::string>{"none"} ? std::vector<std::string>{} : f.signal;
  const Dataset ds = synth_dataset(c);
  make_out_dir(f.out);
  save_dataset(f.out, ds, format_from_name(f.format.empty() ? "bin" : f.format));
  const SplitCounts n = ds.manifest.counts();
  std::cout << "wrote " << (fs::path(f.out) / "dataset.json").string() << " (" << ds.sequences.size()
            << " sequences; train " << n.train << ", dev " << n.dev << ", test " << n.test << ")\n";
  return kOk;
}

Keymap keymap_for(const Flags& f, const BodyModel& m) {
  if (!f.keymap.empty()) {
    require_input(f.keymap, "keymap");
    return load_keymap(f.keymap);
  }
  require(m.dims.n_joints == 9, ErrorCode::InvalidArgument,
          "--keymap is required for models with " + std::to_string(m.dims.n_joints) + " joints");
  return default_toy_keymap();
}

int cmd_fit(const Flags& f) {
  require_input(f.model, "model");
  const BodyModel model = load_model(f.model);
  const FitSchedule schedule =
      f.schedule.empty() ? FitSchedule::defaults() : schedule_from_json(read_json(f.schedule, "schedule"));
  const Camera camera = f.camera.empty() ? Camera{} : camera_from_json(read_json(f.camera, "camera"));
  const Keymap keymap = keymap_for(f, model);
  require(keymap.n_joints == model.dims.n_joints, ErrorCode::DimensionMismatch,
          "keymap targets " + std::to_string(keymap.n_joints) + " joints, model has " +
              std::to_string(model.dims.n_joints));
  std::vector<Detections2D> frames;
  for (const auto& p : sorted_json_files(f.dataset)) frames.push_back(to_detections(load_openpose_frame(p), keymap));
  const auto results = fit_sequence(model, camera, frames, schedule);
  make_out_dir(f.out);
  std::string out;
  int degenerate = 0;
  for (std::size_t t = 0; t < results.size(); ++t) {
    out += fit_result_to_jsonl(model.dims, results[t], t) + "\n";
    degenerate += results[t].degenerate;
  }
  const fs::path path = fs::path(f.out) / "fit.jsonl";
  io::write_file(path.string(), out);
  std::cout << "wrote " << path.string() << " (" << results.size() << " frames, " << degenerate << " degenerate)\n";
  return kOk;
}

int cmd_extract(const Flags& f) {
  require_input(f.dataset, "input");
  StoredSequence s;
  s.sample.label = f.label;
  s.mask = f.mask;
  std::vector<Eigen::VectorXd> rows;
  if (fs::is_directory(f.dataset)) {
    s.layout = "openpose";
    for (const auto& p : sorted_json_files(f.dataset)) {
      const auto flat = load_openpose_frame(p).flatten();
      rows.push_back(Eigen::Map<const Eigen::VectorXd>(flat.data(), static_cast<Eigen::Index>(flat.size())));
    }
  } else {
    require_input(f.model, "model");
    const BodyModel model = load_model(f.model);
    s.layout = "smplx";
    std::istringstream in(io::read_file(f.dataset));
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) rows.push_back(assemble_features(model.dims, params_from_fit_jsonl(model.dims, line)));
  }
  require(!rows.empty(), ErrorCode::EmptyInput, "no frames in " + f.dataset);
  const FeatureLayout layout = FeatureLayout::named(s.layout);
  const ChannelMask mask = ChannelMask::named(f.mask, layout);
  FeatureMatrix full(static_cast<Eigen::Index>(rows.size()), layout.total());
  for (std::size_t t = 0; t < rows.size(); ++t) full.row(static_cast<Eigen::Index>(t)) = rows[t].transpose();
  s.sample.features = apply_mask_frames(full, mask, layout);
  const FeatureFormat format = format_from_name(f.format.empty() ? "jsonl" : f.format);
  make_out_dir(f.out);
  const fs::path path = fs::path(f.out) / ("features" + format_extension(format));
  save_sequence(path, s, format);
  std::cout << "wrote " << path.string() << " (" << s.sample.frames() << " x " << s.sample.dim() << ", layout "
            << s.layout << ", mask " << s.mask << ")\n";
  return kOk;
}

ExperimentConfig experiment_config(const Flags& f) {
  ExperimentConfig c = f.config.empty() ? ExperimentConfig{} : experiment_config_from_json(read_json(f.config, "config"));
  if (f.seed) c.seeds = {*f.seed};
  return c;
}

std::vector<SequenceSample> prepared_split(const Dataset& ds, Split split, const ChannelMask& mask,
                                           const FeatureLayout& layout, const Scaler* scaler) {
  std::vector<SequenceSample> out = ds.split(split);
  for (auto& s : out) {
    s.features = apply_mask_frames(s.features, mask, layout);
    if (scaler) s = scaler->transform(s);
  }
  return out;
}

int cmd_train(const Flags& f) {
  require_input(f.dataset, "dataset");
  const Dataset ds = load_dataset(f.dataset);
  ds.require_all_splits();
  const ExperimentConfig cfg = experiment_config(f);
  const std::uint64_t seed = cfg.seeds.front();
  TrainOutcome outcome;
  const RunResult r = run_single(ds, f.mask, cfg, seed, &outcome);

  const FeatureLayout layout = FeatureLayout::named(ds.layout);
  const ChannelMask mask = ChannelMask::named(f.mask, layout);
  CheckpointMeta meta;
  meta.epoch = outcome.history.best_epoch;
  meta.dev_loss = outcome.history.best_dev_loss;
  meta.layout = ds.layout;
  meta.mask = f.mask;
  meta.scaler = fit_scaler(prepared_split(ds, Split::Train, mask, layout, nullptr));
  make_out_dir(f.out);
  const fs::path out(f.out);
  save_checkpoint(out / "checkpoint.bin", outcome.model, meta);
  io::write_file((out / "history.csv").string(), outcome.history.to_csv());
  const nlohmann::json metrics = {{"mask", f.mask},         {"seed", seed},
                                  {"test_accuracy", r.accuracy}, {"best_epoch", r.best_epoch},
                                  {"epochs", r.epochs},     {"config_sha256", experiment_digest(ds, cfg)}};
  io::write_file((out / "metrics.json").string(), metrics.dump(2) + "\n");
  std::cout << "mask " << f.mask << " seed " << seed << ": test accuracy " << format_percent(r.accuracy)
            << " (best epoch " << r.best_epoch << " of " << r.epochs << ")\n";
  return kOk;
}

int cmd_eval(const Flags& f) {
  require_input(f.dataset, "dataset");
  require_input(f.checkpoint, "checkpoint");
  const Dataset ds = load_dataset(f.dataset);
  const Checkpoint ck = load_checkpoint(f.checkpoint);
  require(ck.meta.layout == ds.layout, ErrorCode::Layout,
          "checkpoint layout '" + ck.meta.layout + "' vs dataset layout '" + ds.layout + "'");
  const FeatureLayout layout = FeatureLayout::named(ds.layout);
  const ChannelMask mask = ChannelMask::named(ck.meta.mask.empty() ? "all" : ck.meta.mask, layout);
  const auto test = prepared_split(ds, Split::Test, mask, layout, ck.meta.scaler ? &*ck.meta.scaler : nullptr);
  const EvalResult e = evaluate(ck.model, test);

  std::string text;
  const std::string fmt = f.format.empty() ? "text" : f.format;
  if (fmt == "jsonl") {
    text = nlohmann::json{{"accuracy", e.accuracy},
                          {"mean_loss", e.mean_loss},
                          {"per_class_accuracy", e.per_class_accuracy},
                          {"confusion", e.confusion}}
               .dump() +
           "\n";
  } else if (fmt == "csv") {
    text = "class,accuracy\n";
    char buf[64];
    for (std::size_t k = 0; k < e.per_class_accuracy.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%zu,%.6f\n", k, e.per_class_accuracy[k]);
      text += buf;
    }
    std::snprintf(buf, sizeof buf, "all,%.6f\n", e.accuracy);
    text += buf;
  } else {
    text = "test accuracy " + format_percent(e.accuracy) + " over " + std::to_string(test.size()) + " sequences\n";
    for (std::size_t k = 0; k < e.per_class_accuracy.size(); ++k)
      text += "  class " + std::to_string(k) + ": " + format_percent(e.per_class_accuracy[k]) + "\n";
  }
  std::cout << text;
  if (!f.out.empty()) {
    make_out_dir(f.out);
    io::write_file((fs::path(f.out) / ("eval." + std::string(fmt == "text" ? "txt" : fmt))).string(), text);
  }
  return kOk;
}

int cmd_ablate(const Flags& f) {
  require_input(f.dataset, "dataset");
  const Dataset ds = load_dataset(f.dataset);
  const ExperimentConfig cfg = experiment_config(f);
  const ExperimentReport r = run_ablation(ds, cfg, f.jobs);
  emit_results(r, f.out);
  const std::string fmt = f.format.empty() ? "text" : f.format;
  if (fmt == "csv") {
    std::cout << report_to_csv(r);
  } else if (fmt == "jsonl") {
    for (const auto& row : r.rows)
      std::cout << nlohmann::json{{"mask", row.mask},
                                  {"features", row.features},
                                  {"mean_accuracy", row.mean()},
                                  {"accuracies", row.accuracies},
                                  {"seeds", r.seeds},
                                  {"config_sha256", r.config_digest}}
                       .dump()
                << "\n";
  } else {
    std::cout << report_to_text(r);
  }
  std::printf("runtime %.1f s\n", r.runtime_seconds);
  return kOk;
}

int cmd_gradcheck(const Flags& f) {
  constexpr double kTol = 1e-4;
  const auto s = gradcheck::run_all(f.seed.value_or(7), f.points, std::max(3, f.points / 2));
  std::printf("fitting objective (outlier regime, %d points): max relative error %.3e\n", s.fit_points,
              s.fit_outliers);
  std::printf("fitting objective (near-fit regime, %d points): max relative error %.3e\n", s.fit_points,
              s.fit_near_fit);
  std::printf("classifier BPTT (%d pairs, T in {1, 10, 50}): max relative error %.3e\n", s.classifier_pairs,
              s.classifier);
  std::printf("max relative error %.3e (tolerance %.0e): %s\n", s.worst(), kTol, s.worst() <= kTol ? "ok" : "FAILED");
  return s.worst() <= kTol ? kOk : kGradcheck;
}

void print_version() {
  std::cout << "signkit " << kVersion << "\n";
  for (auto s : {kModelSchema, kKeymapSchema, kScheduleSchema, kFitResultSchema, kFeatureSchema, kDatasetSchema,
                 kCheckpointSchema, kTrainConfigSchema, kReportSchema})
    std::cout << "  " << s << "\n";
  std::cout << "  checkpoint magic " << std::string(kCheckpointMagic, 8) << "\n";
  std::cout << "  manifest header " << kManifestHeader << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"signkit: body-model fitting, feature extraction and sequence classification"};
  app.require_subcommand(0, 1);
  bool version = false;
  app.add_flag("--version", version, "Print the tool version and every file schema it reads or writes");

  Flags f;
  const std::vector<std::string> masks = mask_names();
  auto out_opt = [&f](CLI::App* c, bool required) {
    auto* o = c->add_option("--out", f.out, "Output directory");
    if (required) o->required();
  };
  auto seed_opt = [&f](CLI::App* c) { c->add_option("--seed", f.seed, "Random seed"); };

  auto* synth_model = app.add_subcommand("synth-model", "Write a seeded toy body model");
  out_opt(synth_model, true);
  seed_opt(synth_model);
  synth_model->add_option("--preset", f.preset, "Model size")->check(CLI::IsMember({"toy", "full_skeleton", "full_scale"}));
  synth_model->add_option("--frames", f.frames, "Also write this many OpenPose frames of a moving body")
      ->check(CLI::NonNegativeNumber);
  synth_model->add_option("--format", f.format, "Array encoding")->check(CLI::IsMember({"nested", "base64"}));

  auto* synth_data = app.add_subcommand("synth-data", "Generate a synthetic sequence dataset");
  out_opt(synth_data, true);
  seed_opt(synth_data);
  synth_data->add_option("--config", f.config, "Synthetic dataset config (JSON)");
  synth_data->add_option("--signal", f.signal, "Signal channels (hands, body, face, or none)")->delimiter(',');
  synth_data->add_option("--format", f.format, "Feature file format")->check(CLI::IsMember({"jsonl", "bin"}));

  auto* fit = app.add_subcommand("fit", "Fit the body model to a directory of OpenPose frames");
  fit->add_option("--model", f.model, "Body model file")->required();
  fit->add_option("--dataset", f.dataset, "Directory of OpenPose frame JSON files")->required();
  fit->add_option("--schedule", f.schedule, "Fit schedule (JSON)");
  fit->add_option("--keymap", f.keymap, "Keypoint-to-joint map (JSON)");
  fit->add_option("--camera", f.camera, "Camera intrinsics/extrinsics (JSON)");
  out_opt(fit, true);
  seed_opt(fit);

  auto* extract = app.add_subcommand("extract", "Write per-frame features from fit results or OpenPose frames");
  extract->add_option("--dataset", f.dataset, "fit.jsonl file or directory of OpenPose frames")->required();
  extract->add_option("--model", f.model, "Body model file (for fit results)");
  extract->add_option("--mask", f.mask, "Channel mask")->check(CLI::IsMember(masks));
  extract->add_option("--label", f.label, "Class label stored with the sequence");
  extract->add_option("--format", f.format, "Feature file format")->check(CLI::IsMember({"jsonl", "bin"}));
  out_opt(extract, true);

  auto* train_cmd = app.add_subcommand("train", "Train the BiLSTM classifier on a dataset");
  train_cmd->add_option("--dataset", f.dataset, "Dataset directory or dataset.json")->required();
  train_cmd->add_option("--config", f.config, "Training config (JSON)");
  train_cmd->add_option("--mask", f.mask, "Channel mask")->check(CLI::IsMember(masks));
  seed_opt(train_cmd);
  out_opt(train_cmd, true);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the dataset's test split");
  eval_cmd->add_option("--dataset", f.dataset, "Dataset directory or dataset.json")->required();
  eval_cmd->add_option("--checkpoint", f.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--format", f.format, "Output format")->check(CLI::IsMember({"text", "csv", "jsonl"}));
  out_opt(eval_cmd, false);

  auto* ablate = app.add_subcommand("ablate", "Run the channel ablation matrix");
  ablate->add_option("--dataset", f.dataset, "Dataset directory or dataset.json")->required();
  ablate->add_option("--config", f.config, "Experiment config (JSON)");
  ablate->add_option("--jobs", f.jobs, "Parallel (mask, seed) runs")->check(CLI::PositiveNumber);
  ablate->add_option("--format", f.format, "Stdout format")->check(CLI::IsMember({"text", "csv", "jsonl"}));
  seed_opt(ablate);
  out_opt(ablate, true);

  auto* grad = app.add_subcommand("gradcheck", "Run the finite-difference gradient suites");
  seed_opt(grad);
  grad->add_option("--points", f.points, "Fitting points per regime")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail_line("usage", e.what());
    return kUsage;
  }
  if (version) {
    print_version();
    return kOk;
  }
  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    fail_line("usage", "a subcommand is required");
    return kUsage;
  }

  try {
    const CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "synth-model") return cmd_synth_model(f);
    if (name == "synth-data") return cmd_synth_data(f);
    if (name == "fit") return cmd_fit(f);
    if (name == "extract") return cmd_extract(f);
    if (name == "train") return cmd_train(f);
    if (name == "eval") return cmd_eval(f);
    if (name == "ablate") return cmd_ablate(f);
    if (name == "gradcheck") return cmd_gradcheck(f);
  } catch (const Error& e) {
    const std::string what = e.what();
    const std::string prefix = std::string(error_code_name(e.code())) + ": ";
    fail_line(error_code_name(e.code()), what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what);
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    fail_line("internal", e.what());
    return kOther;
  }
  return kOther;
}
