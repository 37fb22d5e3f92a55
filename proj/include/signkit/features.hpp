#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "signkit/common.hpp"
#include "signkit/model.hpp"

namespace signkit {

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FeatureBlock {
  std::string name;
  int offset = 0;
  int width = 0;
};

struct FeatureLayout {
  std::string name;
  std::vector<FeatureBlock> blocks;

  int total() const { return blocks.empty() ? 0 : blocks.back().offset + blocks.back().width; }

  const FeatureBlock& block(const std::string& block_name) const {
    for (const auto& b : blocks)
      if (b.name == block_name) return b;
    throw Error(ErrorCode::Layout, "layout '" + name + "' has no block '" + block_name + "'");
  }

  void check() const {
    require(!blocks.empty(), ErrorCode::Layout, "layout has no blocks");
    int next = 0;
    for (const auto& b : blocks) {
      require(b.offset == next && b.width > 0, ErrorCode::Layout,
              "layout '" + name + "' blocks must be contiguous and non-empty at '" + b.name + "'");
      next += b.width;
    }
  }

  // Canonical SMPL-X feature order (matches pack_params for full-scale dims).
  static FeatureLayout smplx() {
    return {"smplx",
            {{"shape", 0, 10},
             {"global_orient", 10, 3},
             {"hands", 13, 24},
             {"jaw", 37, 3},
             {"eyes", 40, 6},
             {"expression", 46, 10},
             {"body_pose", 56, 32}}};
  }

  static FeatureLayout openpose() { return {"openpose", {{"body", 0, 75}, {"face", 75, 210}, {"hands", 285, 126}}}; }

  static FeatureLayout named(const std::string& n) {
    if (n == "smplx") return smplx();
    if (n == "openpose") return openpose();
    throw Error(ErrorCode::Layout, "unknown feature layout '" + n + "'");
  }
};

inline const std::vector<std::string>& mask_names() {
  static const std::vector<std::string> names = {"all", "no_face", "no_hands", "no_body"};
  return names;
}

struct ChannelMask {
  std::string name = "all";
  std::vector<std::string> removed;  // block names

  // Standard masks: SMPL-X no_face drops jaw, eyes and expression; no_body drops
  // body_pose and global_orient.
  static ChannelMask named(const std::string& mask, const FeatureLayout& layout) {
    ChannelMask m;
    m.name = mask;
    const bool smplx = layout.name == "smplx";
    if (mask == "all") {
    } else if (mask == "no_face") {
      m.removed = smplx ? std::vector<std::string>{"jaw", "eyes", "expression"} : std::vector<std::string>{"face"};
    } else if (mask == "no_hands") {
      m.removed = {"hands"};
    } else if (mask == "no_body") {
      m.removed = smplx ? std::vector<std::string>{"body_pose", "global_orient"} : std::vector<std::string>{"body"};
    } else {
      throw Error(ErrorCode::InvalidArgument, "unknown mask '" + mask + "' (expected all, no_face, no_hands, no_body)");
    }
    for (const auto& r : m.removed) layout.block(r);
    return m;
  }

  bool keeps(const std::string& block) const { return std::find(removed.begin(), removed.end(), block) == removed.end(); }

  int retained_dim(const FeatureLayout& layout) const {
    int d = layout.total();
    for (const auto& r : removed) d -= layout.block(r).width;
    return d;
  }

  // Indices of retained columns in canonical order.
  std::vector<int> retained_columns(const FeatureLayout& layout) const {
    std::vector<int> cols;
    for (const auto& b : layout.blocks)
      if (keeps(b.name))
        for (int k = 0; k < b.width; ++k) cols.push_back(b.offset + k);
    return cols;
  }
};

inline Eigen::VectorXd apply_mask(const Eigen::Ref<const Eigen::VectorXd>& features, const ChannelMask& mask,
                                  const FeatureLayout& layout) {
  require(features.size() == layout.total(), ErrorCode::DimensionMismatch,
          "feature length " + std::to_string(features.size()) + " does not match layout '" + layout.name + "' (" +
              std::to_string(layout.total()) + ")");
  const auto cols = mask.retained_columns(layout);
  Eigen::VectorXd out(static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out[static_cast<Eigen::Index>(k)] = features[cols[k]];
  return out;
}

inline FeatureMatrix apply_mask_frames(const FeatureMatrix& frames, const ChannelMask& mask, const FeatureLayout& layout) {
  require(frames.cols() == layout.total(), ErrorCode::DimensionMismatch,
          "feature width " + std::to_string(frames.cols()) + " does not match layout '" + layout.name + "'");
  const auto cols = mask.retained_columns(layout);
  FeatureMatrix out(frames.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = frames.col(cols[k]);
  return out;
}

// 88-entry feature vector of one frame, translation excluded.
inline Eigen::VectorXd assemble_features(const ModelDims& dims, const Params& params,
                                         const FeatureLayout* custom = nullptr) {
  if (custom) {
    custom->check();
    require(custom->total() == dims.feature_size(), ErrorCode::Layout,
            "custom layout width does not match the model's feature size");
  } else {
    require(dims.is_full_scale_layout(), ErrorCode::Layout,
            "model latent dims differ from the 88-entry layout; supply a custom layout");
  }
  return pack_params(dims, params).head(dims.feature_size());
}

struct SequenceSample {
  FeatureMatrix features;  // T x D
  int label = 0;

  Eigen::Index frames() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }

  void check(bool enforce_length = true) const {
    require(features.rows() >= 1, ErrorCode::EmptyInput, "sequence has no frames");
    if (enforce_length)
      require(features.rows() >= 10 && features.rows() <= 300, ErrorCode::FrameRange,
              "sequence length " + std::to_string(features.rows()) + " outside [10, 300]");
    require(features.allFinite(), ErrorCode::NonFinite, "sequence has non-finite entries");
    require(label >= 0, ErrorCode::InvalidArgument, "label must be non-negative");
  }
};

struct Scaler {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
  double epsilon = 1e-8;

  Eigen::Index dim() const { return mean.size(); }

  SequenceSample transform(const SequenceSample& s) const {
    require(s.dim() == dim(), ErrorCode::DimensionMismatch,
            "scaler dim " + std::to_string(dim()) + " vs sample dim " + std::to_string(s.dim()));
    SequenceSample out = s;
    const Eigen::RowVectorXd m = mean.transpose();
    const Eigen::RowVectorXd d = (std.array() + epsilon).matrix().transpose();
    out.features = ((s.features.rowwise() - m).array().rowwise() / d.array()).matrix();
    return out;
  }

  SequenceSample inverse_transform(const SequenceSample& s) const {
    require(s.dim() == dim(), ErrorCode::DimensionMismatch, "scaler dim does not match sample dim");
    SequenceSample out = s;
    const Eigen::RowVectorXd d = (std.array() + epsilon).matrix().transpose();
    out.features = ((s.features.array().rowwise() * d.array()).matrix().rowwise() + mean.transpose());
    return out;
  }
};

// Population mean/std pooled over every frame of the training sequences.
inline Scaler fit_scaler(const std::vector<SequenceSample>& train, double epsilon = 1e-8) {
  require(!train.empty(), ErrorCode::EmptyInput, "fit_scaler needs at least one training sequence");
  const Eigen::Index d = train.front().dim();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
  double count = 0.0;
  for (const auto& s : train) {
    require(s.dim() == d, ErrorCode::DimensionMismatch, "training sequences differ in feature width");
    sum += s.features.colwise().sum().transpose();
    count += static_cast<double>(s.frames());
  }
  require(count > 0.0, ErrorCode::EmptyInput, "training sequences have no frames");
  Scaler sc;
  sc.epsilon = epsilon;
  sc.mean = sum / count;
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(d);
  for (const auto& s : train) sq += (s.features.rowwise() - sc.mean.transpose()).colwise().squaredNorm().transpose();
  sc.std = (sq / count).cwiseSqrt();
  return sc;
}

inline nlohmann::json scaler_to_json(const Scaler& s) {
  return {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
          {"std", std::vector<double>(s.std.data(), s.std.data() + s.std.size())},
          {"epsilon", s.epsilon}};
}

inline Scaler scaler_from_json(const nlohmann::json& j) {
  Scaler s;
  try {
    const auto m = j.at("mean").get<std::vector<double>>();
    const auto d = j.at("std").get<std::vector<double>>();
    require(m.size() == d.size(), ErrorCode::DimensionMismatch, "scaler mean/std lengths differ");
    s.mean = Eigen::Map<const Eigen::VectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
    s.std = Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()));
    s.epsilon = j.value("epsilon", 1e-8);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("scaler: ") + e.what());
  }
  return s;
}

// --- Storage -----------------------------------------------------------------------------

enum class FeatureFormat { JsonLines, Binary };

struct StoredSequence {
  SequenceSample sample;
  std::string layout = "smplx";
  std::string mask = "all";
};

inline std::string format_extension(FeatureFormat f) { return f == FeatureFormat::Binary ? ".bin" : ".jsonl"; }

inline FeatureFormat format_from_name(const std::string& s) {
  if (s == "jsonl") return FeatureFormat::JsonLines;
  if (s == "bin" || s == "binary") return FeatureFormat::Binary;
  throw Error(ErrorCode::InvalidArgument, "unknown feature format '" + s + "' (expected jsonl or bin)");
}

inline nlohmann::json sequence_sidecar(const StoredSequence& s) {
  return {{"schema", kFeatureSchema},
          {"T", s.sample.frames()},
          {"D", s.sample.dim()},
          {"label", s.sample.label},
          {"layout", s.layout},
          {"mask", s.mask}};
}

// JSON lines: one frame per line, each carrying the sequence metadata. Binary: packed
// little-endian f64 rows in <path> plus a JSON sidecar at <path>.json.
inline void save_sequence(const std::filesystem::path& path, const StoredSequence& s, FeatureFormat format) {
  if (format == FeatureFormat::Binary) {
    io::write_file(path.string(), io::pack_f64_le(s.sample.features.data(), static_cast<std::size_t>(s.sample.features.size())));
    io::write_file(path.string() + ".json", sequence_sidecar(s).dump() + "\n");
    return;
  }
  std::string out;
  for (Eigen::Index t = 0; t < s.sample.frames(); ++t) {
    const auto row = s.sample.features.row(t);
    nlohmann::json line = sequence_sidecar(s);
    line["t"] = t;
    line["x"] = std::vector<double>(row.data(), row.data() + row.size());
    out += line.dump() + "\n";
  }
  io::write_file(path.string(), out);
}

namespace detail {

inline void read_sidecar(const nlohmann::json& j, StoredSequence& s, Eigen::Index& t, Eigen::Index& d) {
  require(j.value("schema", std::string()) == kFeatureSchema, ErrorCode::SchemaMismatch,
          "feature schema must be '" + std::string(kFeatureSchema) + "'");
  t = j.at("T").get<Eigen::Index>();
  d = j.at("D").get<Eigen::Index>();
  s.sample.label = j.at("label").get<int>();
  s.layout = j.at("layout").get<std::string>();
  s.mask = j.at("mask").get<std::string>();
}

}  // namespace detail

inline StoredSequence load_sequence(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorCode::Io, "feature file not found: " + path.string());
  StoredSequence s;
  Eigen::Index t = 0, d = 0;
  try {
    if (path.extension() == ".bin") {
      detail::read_sidecar(nlohmann::json::parse(io::read_file(path.string() + ".json")), s, t, d);
      const auto values = io::unpack_f64_le(io::read_file(path.string()));
      require(static_cast<Eigen::Index>(values.size()) == t * d, ErrorCode::DimensionMismatch,
              "binary feature blob size does not match T x D");
      s.sample.features = Eigen::Map<const FeatureMatrix>(values.data(), t, d);
    } else {
      std::istringstream in(io::read_file(path.string()));
      std::string line;
      std::vector<std::vector<double>> rows;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        detail::read_sidecar(j, s, t, d);
        require(j.at("t").get<std::size_t>() == rows.size(), ErrorCode::Parse, "feature lines out of order");
        rows.push_back(j.at("x").get<std::vector<double>>());
        require(static_cast<Eigen::Index>(rows.back().size()) == d, ErrorCode::DimensionMismatch,
                "feature line width does not match D");
      }
      require(static_cast<Eigen::Index>(rows.size()) == t, ErrorCode::DimensionMismatch,
              "feature line count does not match T");
      s.sample.features.resize(t, d);
      for (Eigen::Index r = 0; r < t; ++r)
        s.sample.features.row(r) = Eigen::Map<const Eigen::RowVectorXd>(rows[static_cast<std::size_t>(r)].data(), d);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, path.string() + ": " + e.what());
  }
  return s;
}

}  // namespace signkit
