#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "signkit/classifier.hpp"
#include "signkit/common.hpp"
#include "signkit/features.hpp"
#include "signkit/keypoints.hpp"

namespace signkit {

// --- Synthetic datasets ------------------------------------------------------------------

inline const std::vector<std::string>& signal_channel_names() {
  static const std::vector<std::string> names = {"hands", "body", "face"};
  return names;
}

// Layout blocks that make up one semantic channel (the blocks its ablation mask removes).
inline std::vector<std::string> channel_blocks(const std::string& channel, const FeatureLayout& layout) {
  require(channel == "hands" || channel == "body" || channel == "face", ErrorCode::InvalidArgument,
          "unknown signal channel '" + channel + "' (expected hands, body, face)");
  return ChannelMask::named("no_" + channel, layout).removed;
}

struct SynthConfig {
  int n_classes = 10;
  int sequences_per_class = 50;
  int min_frames = 10;
  int max_frames = 50;
  std::vector<std::string> signal_channels = {"hands"};
  std::string layout = "smplx";
  double amplitude = 1.0;
  double min_frequency = 0.5;  // cycles per sequence
  double max_frequency = 3.0;
  double noise_std = 0.1;
  std::uint64_t seed = 0;

  void check() const {
    require(n_classes >= 2, ErrorCode::InvalidArgument, "synthetic datasets need at least 2 classes");
    require(sequences_per_class >= 1, ErrorCode::InvalidArgument, "sequences_per_class must be >= 1");
    require(min_frames >= kMinFrames && max_frames <= kMaxFrames && min_frames <= max_frames, ErrorCode::FrameRange,
            "frame range must lie within [" + std::to_string(kMinFrames) + ", " + std::to_string(kMaxFrames) + "]");
    require(noise_std >= 0.0, ErrorCode::InvalidArgument, "noise_std must be >= 0");
    require(amplitude >= 0.0, ErrorCode::InvalidArgument, "amplitude must be >= 0");
    require(min_frequency > 0.0 && min_frequency <= max_frequency, ErrorCode::InvalidArgument,
            "frequency range must be positive and ordered");
    const FeatureLayout l = FeatureLayout::named(layout);
    for (const auto& c : signal_channels) channel_blocks(c, l);
  }
};

inline nlohmann::json synth_config_to_json(const SynthConfig& c) {
  return {{"n_classes", c.n_classes},
          {"sequences_per_class", c.sequences_per_class},
          {"min_frames", c.min_frames},
          {"max_frames", c.max_frames},
          {"signal_channels", c.signal_channels},
          {"layout", c.layout},
          {"amplitude", c.amplitude},
          {"min_frequency", c.min_frequency},
          {"max_frequency", c.max_frequency},
          {"noise_std", c.noise_std},
          {"seed", c.seed}};
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  try {
    c.n_classes = j.value("n_classes", c.n_classes);
    c.sequences_per_class = j.value("sequences_per_class", c.sequences_per_class);
    c.min_frames = j.value("min_frames", c.min_frames);
    c.max_frames = j.value("max_frames", c.max_frames);
    c.signal_channels = j.value("signal_channels", c.signal_channels);
    c.layout = j.value("layout", c.layout);
    c.amplitude = j.value("amplitude", c.amplitude);
    c.min_frequency = j.value("min_frequency", c.min_frequency);
    c.max_frequency = j.value("max_frequency", c.max_frequency);
    c.noise_std = j.value("noise_std", c.noise_std);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("synth config: ") + e.what());
  }
  c.check();
  return c;
}

// Sum of three sinusoids in normalized time tau in [0, 1].
struct Trajectory {
  std::array<double, 3> amplitude{};
  std::array<double, 3> frequency{};
  std::array<double, 3> phase{};

  double operator()(double tau) const {
    double v = 0.0;
    for (int k = 0; k < 3; ++k) v += amplitude[k] * std::sin(2.0 * M_PI * frequency[k] * tau + phase[k]);
    return v;
  }
};

// Per-dimension trajectories: signal dimensions get one per class, all others share one.
struct SynthTrajectories {
  std::vector<bool> is_signal;                     // per feature dimension
  std::vector<std::vector<Trajectory>> per_class;  // [class][dim], only signal dims meaningful
  std::vector<Trajectory> shared;                  // [dim]

  const Trajectory& at(int label, int dim) const { return is_signal[dim] ? per_class[label][dim] : shared[dim]; }

  static double tau(int t, int frames) { return frames > 1 ? static_cast<double>(t) / (frames - 1) : 0.0; }
};

inline SynthTrajectories synth_trajectories(const SynthConfig& c) {
  c.check();
  const FeatureLayout layout = FeatureLayout::named(c.layout);
  const int d = layout.total();
  SynthTrajectories tr;
  tr.is_signal.assign(d, false);
  for (const auto& ch : c.signal_channels)
    for (const auto& b : channel_blocks(ch, layout)) {
      const FeatureBlock& blk = layout.block(b);
      for (int k = 0; k < blk.width; ++k) tr.is_signal[blk.offset + k] = true;
    }
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> freq(c.min_frequency, c.max_frequency);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> amp(0.5, 1.0);
  auto draw = [&] {
    Trajectory t;
    for (int k = 0; k < 3; ++k) {
      t.amplitude[k] = c.amplitude * amp(rng) / 3.0;
      t.frequency[k] = freq(rng);
      t.phase[k] = phase(rng);
    }
    return t;
  };
  tr.shared.resize(d);
  for (int j = 0; j < d; ++j) tr.shared[j] = draw();
  tr.per_class.assign(c.n_classes, std::vector<Trajectory>(d));
  for (int k = 0; k < c.n_classes; ++k)
    for (int j = 0; j < d; ++j)
      if (tr.is_signal[j]) tr.per_class[k][j] = draw();
  return tr;
}

struct Dataset {
  DatasetManifest manifest;
  std::vector<SequenceSample> sequences;  // parallel to manifest.entries
  std::string layout = "smplx";
  int n_classes = 0;
  std::string digest;  // sha256 of the generating config
  nlohmann::json config = nlohmann::json::object();

  std::vector<SequenceSample> split(Split s) const {
    std::vector<SequenceSample> out;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
      if (manifest.entries[i].split == s) out.push_back(sequences[i]);
    return out;
  }

  void check() const {
    manifest.check();
    require(sequences.size() == manifest.entries.size(), ErrorCode::DimensionMismatch,
            "dataset has " + std::to_string(sequences.size()) + " sequences but manifest lists " +
                std::to_string(manifest.entries.size()));
    const int d = FeatureLayout::named(layout).total();
    for (std::size_t i = 0; i < sequences.size(); ++i) {
      const auto& e = manifest.entries[i];
      require(sequences[i].label == e.label && sequences[i].frames() == e.frames, ErrorCode::DimensionMismatch,
              "sequence '" + e.sequence_id + "' disagrees with its manifest entry");
      require(sequences[i].dim() == d, ErrorCode::DimensionMismatch,
              "sequence '" + e.sequence_id + "' width does not match layout '" + layout + "'");
      require(e.label < n_classes, ErrorCode::InvalidArgument, "label outside dataset class count");
    }
  }

  void require_all_splits() const {
    const SplitCounts c = manifest.counts();
    require(c.train > 0 && c.dev > 0 && c.test > 0, ErrorCode::EmptyInput, "dataset needs train, dev and test splits");
  }
};

// Per class: round(0.6 n) train, round(0.2 n) dev, remainder test, after a seeded shuffle.
inline std::vector<Split> stratified_splits(int n, std::mt19937_64& rng) {
  const int n_train = static_cast<int>(std::lround(0.6 * n));
  const int n_dev = static_cast<int>(std::lround(0.2 * n));
  std::vector<std::size_t> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  detail::shuffle_indices(idx, rng);
  std::vector<Split> out(n, Split::Test);
  for (int r = 0; r < n; ++r)
    out[idx[r]] = r < n_train ? Split::Train : (r < n_train + n_dev ? Split::Dev : Split::Test);
  return out;
}

inline Dataset synth_dataset(const SynthConfig& c) {
  c.check();
  const SynthTrajectories tr = synth_trajectories(c);
  const int d = static_cast<int>(tr.is_signal.size());
  std::mt19937_64 rng(c.seed ^ 0x5eedda7aULL);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<int> length(c.min_frames, c.max_frames);

  Dataset ds;
  ds.layout = c.layout;
  ds.n_classes = c.n_classes;
  ds.config = synth_config_to_json(c);
  ds.digest = io::sha256_hex(ds.config.dump());
  for (int k = 0; k < c.n_classes; ++k) {
    const std::vector<Split> splits = stratified_splits(c.sequences_per_class, rng);
    for (int s = 0; s < c.sequences_per_class; ++s) {
      SequenceSample sample;
      sample.label = k;
      const int frames = length(rng);
      sample.features = FeatureMatrix(frames, d);
      for (int t = 0; t < frames; ++t) {
        const double tau = SynthTrajectories::tau(t, frames);
        for (int j = 0; j < d; ++j) sample.features(t, j) = tr.at(k, j)(tau) + c.noise_std * noise(rng);
      }
      char id[64];
      std::snprintf(id, sizeof id, "c%03d_s%04d", k, s);
      ManifestEntry e;
      e.sequence_id = id;
      e.label = k;
      e.split = splits[s];
      e.frames = frames;
      e.path = std::string("sequences/") + id;
      ds.manifest.entries.push_back(std::move(e));
      ds.sequences.push_back(std::move(sample));
    }
  }
  ds.check();
  return ds;
}

// Directory layout: dataset.json, manifest.csv and one feature file per sequence.
inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds, FeatureFormat format) {
  ds.check();
  std::filesystem::create_directories(dir / "sequences");
  DatasetManifest manifest = ds.manifest;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    auto& e = manifest.entries[i];
    e.path = "sequences/" + e.sequence_id + format_extension(format);
    save_sequence(dir / e.path, StoredSequence{ds.sequences[i], ds.layout, "all"}, format);
  }
  io::write_file((dir / "manifest.csv").string(), manifest_to_csv(manifest));
  const nlohmann::json meta = {{"schema", kDatasetSchema}, {"layout", ds.layout},       {"n_classes", ds.n_classes},
                               {"manifest", "manifest.csv"}, {"config_hash", ds.digest}, {"config", ds.config}};
  io::write_file((dir / "dataset.json").string(), meta.dump(2) + "\n");
}

// Accepts the dataset directory or its dataset.json.
inline Dataset load_dataset(const std::filesystem::path& path) {
  const std::filesystem::path meta_path = std::filesystem::is_directory(path) ? path / "dataset.json" : path;
  require(std::filesystem::exists(meta_path), ErrorCode::Io, "dataset not found: " + meta_path.string());
  const std::filesystem::path dir = meta_path.parent_path();
  Dataset ds;
  std::string manifest_name;
  try {
    const auto meta = nlohmann::json::parse(io::read_file(meta_path.string()));
    require(meta.value("schema", std::string()) == kDatasetSchema, ErrorCode::SchemaMismatch,
            "dataset schema must be '" + std::string(kDatasetSchema) + "'");
    ds.layout = meta.at("layout").get<std::string>();
    ds.n_classes = meta.at("n_classes").get<int>();
    ds.digest = meta.value("config_hash", std::string());
    ds.config = meta.value("config", nlohmann::json::object());
    manifest_name = meta.value("manifest", std::string("manifest.csv"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("dataset.json: ") + e.what());
  }
  ds.manifest = load_manifest(dir / manifest_name);
  for (const auto& e : ds.manifest.entries) {
    StoredSequence s = load_sequence(dir / e.path);
    require(s.layout == ds.layout && s.mask == "all", ErrorCode::Layout,
            "sequence '" + e.sequence_id + "' stored with layout/mask " + s.layout + "/" + s.mask);
    ds.sequences.push_back(std::move(s.sample));
  }
  if (ds.digest.empty()) ds.digest = io::sha256_hex(manifest_to_csv(ds.manifest));
  ds.check();
  return ds;
}

// --- Experiments -------------------------------------------------------------------------

struct ExperimentConfig {
  TrainConfig train;
  int hidden = 32;
  std::vector<std::uint64_t> seeds = {1, 2, 3};

  void check() const {
    train.check();
    require(hidden >= 1, ErrorCode::InvalidArgument, "hidden must be >= 1");
    require(!seeds.empty(), ErrorCode::InvalidArgument, "at least one seed is required");
  }
};

// Train-config fields at top level plus "hidden" and "seeds"; "seed" is taken per run from "seeds".
inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::json j = train_config_to_json(c.train);
  j.erase("seed");
  j["hidden"] = c.hidden;
  j["seeds"] = c.seeds;
  return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.train = train_config_from_json(j);
  try {
    c.hidden = j.value("hidden", c.hidden);
    c.seeds = j.value("seeds", c.seeds);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("experiment config: ") + e.what());
  }
  c.check();
  return c;
}

struct RunResult {
  std::string mask;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  int epochs = 0;
  int best_epoch = -1;
};

// Mask, fit the scaler on train, train with the seed, report test accuracy.
inline RunResult run_single(const Dataset& ds, const std::string& mask_name, const ExperimentConfig& cfg,
                            std::uint64_t seed, TrainOutcome* outcome = nullptr) {
  const FeatureLayout layout = FeatureLayout::named(ds.layout);
  const ChannelMask mask = ChannelMask::named(mask_name, layout);
  auto prepare = [&](Split s) {
    std::vector<SequenceSample> out = ds.split(s);
    for (auto& x : out) x.features = apply_mask_frames(x.features, mask, layout);
    return out;
  };
  std::vector<SequenceSample> tr = prepare(Split::Train), dev = prepare(Split::Dev), test = prepare(Split::Test);
  const Scaler scaler = fit_scaler(tr);
  for (auto* split : {&tr, &dev, &test})
    for (auto& x : *split) x = scaler.transform(x);

  ClassifierConfig cc;
  cc.input_dim = mask.retained_dim(layout);
  cc.hidden = cfg.hidden;
  cc.n_classes = ds.n_classes;
  cc.seed = seed;
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  TrainOutcome out = train(ClassifierModel::initialize(cc), tr, dev, tc);
  RunResult r;
  r.mask = mask_name;
  r.seed = seed;
  r.accuracy = evaluate(out.model, test).accuracy;
  r.epochs = static_cast<int>(out.history.epochs.size());
  r.best_epoch = out.history.best_epoch;
  if (outcome) *outcome = std::move(out);
  return r;
}

struct ExperimentRow {
  std::string mask;
  int features = 0;
  std::vector<double> accuracies;  // parallel to report seeds

  double mean() const {
    double s = 0.0;
    for (double a : accuracies) s += a;
    return accuracies.empty() ? 0.0 : s / static_cast<double>(accuracies.size());
  }
};

struct ExperimentReport {
  std::string layout;
  std::vector<std::uint64_t> seeds;
  std::vector<ExperimentRow> rows;
  std::string config_digest;
  double runtime_seconds = 0.0;

  const ExperimentRow& row(const std::string& mask) const {
    for (const auto& r : rows)
      if (r.mask == mask) return r;
    throw Error(ErrorCode::InvalidArgument, "report has no row '" + mask + "'");
  }
};

inline std::string experiment_digest(const Dataset& ds, const ExperimentConfig& cfg) {
  const nlohmann::json j = {{"dataset", ds.digest}, {"experiment", experiment_config_to_json(cfg)}};
  return io::sha256_hex(j.dump());
}

// Runs every (mask, seed) pair; 'jobs' > 1 spreads runs over threads, results merge in order.
inline ExperimentReport run_masks(const Dataset& ds, const std::vector<std::string>& masks,
                                  const ExperimentConfig& cfg, int jobs = 1) {
  cfg.check();
  ds.check();
  ds.require_all_splits();
  require(jobs >= 1, ErrorCode::InvalidArgument, "jobs must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  const FeatureLayout layout = FeatureLayout::named(ds.layout);
  ExperimentReport report;
  report.layout = ds.layout;
  report.seeds = cfg.seeds;
  report.config_digest = experiment_digest(ds, cfg);
  for (const auto& m : masks)
    report.rows.push_back({m, ChannelMask::named(m, layout).retained_dim(layout),
                           std::vector<double>(cfg.seeds.size(), 0.0)});

  const std::size_t n_runs = masks.size() * cfg.seeds.size();
  std::vector<double> acc(n_runs, 0.0);
  std::vector<std::exception_ptr> errors(n_runs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n_runs; i = next++) {
      try {
        acc[i] = run_single(ds, masks[i / cfg.seeds.size()], cfg, cfg.seeds[i % cfg.seeds.size()]).accuracy;
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n_threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(jobs), n_runs));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (std::size_t i = 0; i < n_runs; ++i) report.rows[i / cfg.seeds.size()].accuracies[i % cfg.seeds.size()] = acc[i];
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

inline ExperimentReport run_experiment(const Dataset& ds, const std::string& mask, const ExperimentConfig& cfg,
                                       int jobs = 1) {
  return run_masks(ds, {mask}, cfg, jobs);
}

inline ExperimentReport run_ablation(const Dataset& ds, const ExperimentConfig& cfg, int jobs = 1) {
  return run_masks(ds, mask_names(), cfg, jobs);
}

// --- Reporting ---------------------------------------------------------------------------

inline std::string mask_label(const std::string& mask) {
  if (mask == "all") return "All";
  if (mask == "no_face") return "Without Face";
  if (mask == "no_hands") return "Without Hands";
  if (mask == "no_body") return "Without Body";
  return mask;
}

inline std::string format_percent(double accuracy) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * accuracy);
  return buf;
}

inline std::string report_to_csv(const ExperimentReport& r) {
  std::string out = "mask,features,mean_accuracy";
  for (auto s : r.seeds) out += ",acc_seed_" + std::to_string(s);
  out += ",seeds,config_sha256\n";
  std::string seeds;
  for (std::size_t i = 0; i < r.seeds.size(); ++i) seeds += (i ? " " : "") + std::to_string(r.seeds[i]);
  char buf[64];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%.6f", row.mean());
    out += row.mask + "," + std::to_string(row.features) + "," + buf;
    for (double a : row.accuracies) {
      std::snprintf(buf, sizeof buf, ",%.6f", a);
      out += buf;
    }
    out += "," + seeds + "," + r.config_digest + "\n";
  }
  return out;
}

inline std::string report_to_text(const ExperimentReport& r) {
  const std::string method = r.layout == "smplx" ? "SMPL-X" : (r.layout == "openpose" ? "OpenPose" : r.layout);
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header = {"Parameters", "Features", method};
  for (auto s : r.seeds) header.push_back("seed " + std::to_string(s));
  cells.push_back(header);
  for (const auto& row : r.rows) {
    std::vector<std::string> line = {mask_label(row.mask), std::to_string(row.features), format_percent(row.mean())};
    for (double a : row.accuracies) line.push_back(format_percent(a));
    cells.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  std::string out;
  for (std::size_t l = 0; l < cells.size(); ++l) {
    for (std::size_t c = 0; c < cells[l].size(); ++c) {
      const std::string& s = cells[l][c];
      const std::string pad(width[c] - s.size(), ' ');
      out += c == 0 ? s + pad : "  " + pad + s;
    }
    out += "\n";
    if (l == 0) {
      std::size_t total = 0;
      for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c ? 2 : 0);
      out += std::string(total, '-') + "\n";
    }
  }
  std::string seeds;
  for (std::size_t i = 0; i < r.seeds.size(); ++i) seeds += (i ? " " : "") + std::to_string(r.seeds[i]);
  out += "\nseeds: " + seeds + "\nconfig sha256: " + r.config_digest + "\n";
  return out;
}

// Writes <dir>/results.csv and <dir>/results.txt.
inline void emit_results(const ExperimentReport& r, const std::filesystem::path& dir) {
  for (const auto& row : r.rows)
    for (double a : row.accuracies)
      require(a >= 0.0 && a <= 1.0, ErrorCode::InvalidArgument, "accuracy outside [0, 1] in row " + row.mask);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorCode::Io, "cannot create output directory " + dir.string() + ": " + ec.message());
  io::write_file((dir / "results.csv").string(), report_to_csv(r));
  io::write_file((dir / "results.txt").string(), report_to_text(r));
}

}  // namespace signkit
