#pragma once

#include <array>
#include <filesystem>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "signkit/common.hpp"
#include "signkit/fitting.hpp"

namespace signkit {

// OpenPose BODY_25 + face-70 + two hand-21 frame, each keypoint stored as (u, v, conf).
struct OpenposeFrame {
  static constexpr int kBodyPoints = 25;
  static constexpr int kFacePoints = 70;
  static constexpr int kHandPoints = 21;
  static constexpr int kPoints = kBodyPoints + kFacePoints + 2 * kHandPoints;  // 137
  static constexpr int kSize = 3 * kPoints;                                    // 411

  std::array<double, 3 * kBodyPoints> body{};
  std::array<double, 3 * kFacePoints> face{};
  std::array<double, 3 * kHandPoints> left_hand{};
  std::array<double, 3 * kHandPoints> right_hand{};

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(kSize);
    out.insert(out.end(), body.begin(), body.end());
    out.insert(out.end(), face.begin(), face.end());
    out.insert(out.end(), left_hand.begin(), left_hand.end());
    out.insert(out.end(), right_hand.begin(), right_hand.end());
    return out;
  }

  static OpenposeFrame from_flat(const std::vector<double>& flat) {
    require(flat.size() == static_cast<std::size_t>(kSize), ErrorCode::Layout,
            "openpose frame needs 411 values, got " + std::to_string(flat.size()));
    OpenposeFrame f;
    auto it = flat.begin();
    std::copy_n(it, f.body.size(), f.body.begin());
    it += static_cast<std::ptrdiff_t>(f.body.size());
    std::copy_n(it, f.face.size(), f.face.begin());
    it += static_cast<std::ptrdiff_t>(f.face.size());
    std::copy_n(it, f.left_hand.size(), f.left_hand.begin());
    it += static_cast<std::ptrdiff_t>(f.left_hand.size());
    std::copy_n(it, f.right_hand.size(), f.right_hand.begin());
    return f;
  }

  double summed_confidence() const {
    double s = 0.0;
    const auto flat = flatten();
    for (std::size_t i = 2; i < flat.size(); i += 3) s += flat[i];
    return s;
  }
};

namespace detail {

struct OpenposeField {
  const char* name;
  std::size_t size;
};

inline constexpr std::array<OpenposeField, 4> kOpenposeFields = {{{"pose_keypoints_2d", 75},
                                                                 {"face_keypoints_2d", 210},
                                                                 {"hand_left_keypoints_2d", 63},
                                                                 {"hand_right_keypoints_2d", 63}}};

inline OpenposeFrame parse_person(const nlohmann::json& person) {
  require(person.is_object(), ErrorCode::Layout, "people entries must be objects");
  std::vector<double> flat;
  flat.reserve(OpenposeFrame::kSize);
  for (const auto& field : kOpenposeFields) {
    require(person.contains(field.name), ErrorCode::Layout, std::string("missing field '") + field.name + "'");
    const auto& arr = person.at(field.name);
    require(arr.is_array() && arr.size() == field.size, ErrorCode::Layout,
            std::string("field '") + field.name + "' must hold " + std::to_string(field.size) + " numbers, got " +
                (arr.is_array() ? std::to_string(arr.size()) : std::string("non-array")));
    for (std::size_t i = 0; i < arr.size(); ++i) {
      require(arr[i].is_number(), ErrorCode::Layout, std::string("field '") + field.name + "' has a non-number");
      const double v = arr[i].get<double>();
      if (i % 3 == 2)
        require(v >= 0.0 && v <= 1.0, ErrorCode::Layout,
                std::string("field '") + field.name + "' confidence outside [0, 1] at keypoint " + std::to_string(i / 3));
      flat.push_back(v);
    }
  }
  return OpenposeFrame::from_flat(flat);
}

}  // namespace detail

// Picks the person with the highest summed confidence (first on ties).
inline OpenposeFrame parse_openpose_frame(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("openpose frame: ") + e.what());
  }
  require(j.is_object() && j.contains("people") && j.at("people").is_array(), ErrorCode::Layout,
          "openpose frame needs a 'people' array");
  const auto& people = j.at("people");
  require(!people.empty(), ErrorCode::NoPerson, "openpose frame has no people");
  OpenposeFrame best = detail::parse_person(people[0]);
  double best_sum = best.summed_confidence();
  for (std::size_t k = 1; k < people.size(); ++k) {
    OpenposeFrame f = detail::parse_person(people[k]);
    const double s = f.summed_confidence();
    if (s > best_sum) {
      best = f;
      best_sum = s;
    }
  }
  return best;
}

inline OpenposeFrame load_openpose_frame(const std::filesystem::path& path) {
  return parse_openpose_frame(io::read_file(path));
}

inline std::string serialize_openpose_frame(const OpenposeFrame& frame) {
  nlohmann::json person = {{"person_id", {-1}}};
  person["pose_keypoints_2d"] = frame.body;
  person["face_keypoints_2d"] = frame.face;
  person["hand_left_keypoints_2d"] = frame.left_hand;
  person["hand_right_keypoints_2d"] = frame.right_hand;
  return nlohmann::json{{"version", 1.3}, {"people", {person}}}.dump();
}

struct KeypointChannels {
  std::vector<double> body;   // 75
  std::vector<double> face;   // 210
  std::vector<double> hands;  // 126, left then right
};

inline KeypointChannels split_channels(const OpenposeFrame& frame) {
  KeypointChannels c;
  c.body.assign(frame.body.begin(), frame.body.end());
  c.face.assign(frame.face.begin(), frame.face.end());
  c.hands.assign(frame.left_hand.begin(), frame.left_hand.end());
  c.hands.insert(c.hands.end(), frame.right_hand.begin(), frame.right_hand.end());
  return c;
}

// --- Keypoint-to-joint map ---------------------------------------------------------------

enum class KeypointChannel { Pose, Face, LeftHand, RightHand };

inline int channel_offset(KeypointChannel c) {
  switch (c) {
    case KeypointChannel::Pose: return 0;
    case KeypointChannel::Face: return OpenposeFrame::kBodyPoints;
    case KeypointChannel::LeftHand: return OpenposeFrame::kBodyPoints + OpenposeFrame::kFacePoints;
    case KeypointChannel::RightHand:
      return OpenposeFrame::kBodyPoints + OpenposeFrame::kFacePoints + OpenposeFrame::kHandPoints;
  }
  return 0;
}

inline int channel_points(KeypointChannel c) {
  switch (c) {
    case KeypointChannel::Pose: return OpenposeFrame::kBodyPoints;
    case KeypointChannel::Face: return OpenposeFrame::kFacePoints;
    default: return OpenposeFrame::kHandPoints;
  }
}

inline const char* channel_name(KeypointChannel c) {
  switch (c) {
    case KeypointChannel::Pose: return "pose";
    case KeypointChannel::Face: return "face";
    case KeypointChannel::LeftHand: return "hand_left";
    case KeypointChannel::RightHand: return "hand_right";
  }
  return "";
}

inline KeypointChannel channel_from_name(const std::string& s) {
  for (auto c : {KeypointChannel::Pose, KeypointChannel::Face, KeypointChannel::LeftHand, KeypointChannel::RightHand})
    if (s == channel_name(c)) return c;
  throw Error(ErrorCode::Parse, "unknown keypoint channel '" + s + "'");
}

struct KeymapEntry {
  KeypointChannel channel;
  int index;  // within the channel
  int joint;
};

struct Keymap {
  int n_joints = 0;
  std::vector<KeymapEntry> entries;

  void check() const {
    require(n_joints > 0, ErrorCode::InvalidArgument, "keymap n_joints must be positive");
    for (const auto& e : entries) {
      require(e.index >= 0 && e.index < channel_points(e.channel), ErrorCode::InvalidArgument,
              std::string("keymap index out of range for channel '") + channel_name(e.channel) + "'");
      require(e.joint >= 0 && e.joint < n_joints, ErrorCode::InvalidArgument, "keymap joint index out of range");
    }
  }

  // Mapping over the 137 OpenPose keypoints (-1 where unmapped).
  std::vector<int> keypoint_to_joint() const {
    std::vector<int> out(OpenposeFrame::kPoints, -1);
    for (const auto& e : entries) out[static_cast<std::size_t>(channel_offset(e.channel) + e.index)] = e.joint;
    return out;
  }
};

// Built-in map for the 9-joint toy model. Face contour points stay unmapped.
inline Keymap default_toy_keymap() {
  Keymap k;
  k.n_joints = 9;
  k.entries = {{KeypointChannel::Pose, 8, 0},        // MidHip -> root
               {KeypointChannel::Pose, 1, 1},        // Neck -> spine
               {KeypointChannel::Pose, 5, 2},        // LShoulder
               {KeypointChannel::Pose, 2, 3},        // RShoulder
               {KeypointChannel::Face, 8, 4},        // chin -> jaw
               {KeypointChannel::Face, 69, 5},       // left pupil
               {KeypointChannel::Face, 68, 6},       // right pupil
               {KeypointChannel::LeftHand, 0, 7},    // wrist
               {KeypointChannel::RightHand, 0, 8}};  // wrist
  return k;
}

inline nlohmann::json keymap_to_json(const Keymap& k) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : k.entries)
    entries.push_back({{"channel", channel_name(e.channel)}, {"index", e.index}, {"joint", e.joint}});
  return {{"schema", kKeymapSchema}, {"n_joints", k.n_joints}, {"entries", entries}};
}

inline Keymap keymap_from_json(const nlohmann::json& j) {
  require(j.is_object() && j.value("schema", std::string()) == kKeymapSchema, ErrorCode::SchemaMismatch,
          "keymap schema must be '" + std::string(kKeymapSchema) + "'");
  Keymap k;
  try {
    k.n_joints = j.at("n_joints").get<int>();
    for (const auto& e : j.at("entries"))
      k.entries.push_back(
          {channel_from_name(e.at("channel").get<std::string>()), e.at("index").get<int>(), e.at("joint").get<int>()});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("keymap: ") + e.what());
  }
  k.check();
  return k;
}

inline Keymap load_keymap(const std::filesystem::path& path) {
  try {
    return keymap_from_json(nlohmann::json::parse(io::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::Parse, path.string() + ": " + e.what());
  }
}

inline Detections2D to_detections(const OpenposeFrame& frame, const Keymap& keymap) {
  const auto flat = frame.flatten();
  Detections2D det;
  det.points.resize(OpenposeFrame::kPoints, 2);
  det.confidence.resize(OpenposeFrame::kPoints);
  for (int k = 0; k < OpenposeFrame::kPoints; ++k) {
    det.points(k, 0) = flat[3 * static_cast<std::size_t>(k)];
    det.points(k, 1) = flat[3 * static_cast<std::size_t>(k) + 1];
    det.confidence[k] = flat[3 * static_cast<std::size_t>(k) + 2];
  }
  det.keypoint_to_joint = keymap.keypoint_to_joint();
  return det;
}

// Writes projected joint positions into their mapped keypoint slots (confidence 1);
// unmapped slots stay zero.
inline OpenposeFrame frame_from_joints(const Eigen::Ref<const RowMatrixX2d>& joints_2d, const Keymap& keymap) {
  std::vector<double> flat(OpenposeFrame::kSize, 0.0);
  for (const auto& e : keymap.entries) {
    require(e.joint < joints_2d.rows(), ErrorCode::DimensionMismatch, "keymap joint beyond projected joints");
    const std::size_t k = static_cast<std::size_t>(channel_offset(e.channel) + e.index);
    flat[3 * k] = joints_2d(e.joint, 0);
    flat[3 * k + 1] = joints_2d(e.joint, 1);
    flat[3 * k + 2] = 1.0;
  }
  return OpenposeFrame::from_flat(flat);
}

// --- Dataset manifest --------------------------------------------------------------------

enum class Split { Train, Dev, Test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "";
}

inline Split split_from_name(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "dev") return Split::Dev;
  if (s == "test") return Split::Test;
  throw Error(ErrorCode::Parse, "unknown split '" + s + "'");
}

inline constexpr int kMinFrames = 10;
inline constexpr int kMaxFrames = 300;
inline constexpr const char* kManifestHeader = "sequence_id,label,split,path,frames";

struct ManifestEntry {
  std::string sequence_id;
  int label = 0;
  Split split = Split::Train;
  std::string path;
  int frames = 0;
};

struct SplitCounts {
  std::size_t train = 0, dev = 0, test = 0;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  SplitCounts counts() const {
    SplitCounts c;
    for (const auto& e : entries) {
      if (e.split == Split::Train) ++c.train;
      else if (e.split == Split::Dev) ++c.dev;
      else ++c.test;
    }
    return c;
  }

  std::vector<const ManifestEntry*> in_split(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(&e);
    return out;
  }

  void check() const {
    std::unordered_map<std::string, Split> seen;
    for (const auto& e : entries) {
      require(!e.sequence_id.empty(), ErrorCode::Parse, "manifest entry with empty sequence_id");
      require(e.label >= 0, ErrorCode::Parse, "manifest label must be a non-negative integer");
      require(e.frames >= kMinFrames && e.frames <= kMaxFrames, ErrorCode::FrameRange,
              "sequence '" + e.sequence_id + "' has " + std::to_string(e.frames) + " frames, outside [" +
                  std::to_string(kMinFrames) + ", " + std::to_string(kMaxFrames) + "]");
      const auto [it, inserted] = seen.emplace(e.sequence_id, e.split);
      if (!inserted) {
        if (it->second != e.split)
          throw Error(ErrorCode::SplitOverlap, "sequence '" + e.sequence_id + "' appears in both " +
                                                   split_name(it->second) + " and " + split_name(e.split));
        throw Error(ErrorCode::SplitOverlap, "sequence '" + e.sequence_id + "' listed twice");
      }
    }
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline int parse_int(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == s.size() && !s.empty(), ErrorCode::Parse, what + " must be an integer, got '" + s + "'");
  return v;
}

}  // namespace detail

inline DatasetManifest parse_manifest(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::EmptyInput, "manifest is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == kManifestHeader, ErrorCode::SchemaMismatch,
          "manifest header must be '" + std::string(kManifestHeader) + "'");
  DatasetManifest m;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    require(cells.size() == 5, ErrorCode::Parse, "manifest line " + std::to_string(line_no) + ": expected 5 columns");
    ManifestEntry e;
    e.sequence_id = cells[0];
    e.label = detail::parse_int(cells[1], "label");
    e.split = split_from_name(cells[2]);
    e.path = cells[3];
    e.frames = detail::parse_int(cells[4], "frames");
    m.entries.push_back(std::move(e));
  }
  m.check();
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorCode::Io, "manifest not found: " + path.string());
  return parse_manifest(io::read_file(path));
}

inline std::string manifest_to_csv(const DatasetManifest& m) {
  std::string out = std::string(kManifestHeader) + "\n";
  for (const auto& e : m.entries)
    out += e.sequence_id + "," + std::to_string(e.label) + "," + split_name(e.split) + "," + e.path + "," +
           std::to_string(e.frames) + "\n";
  return out;
}

}  // namespace signkit
