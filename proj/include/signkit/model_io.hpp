#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "signkit/model.hpp"

namespace signkit {

enum class ArrayEncoding { Nested, Base64 };

namespace detail {

struct DenseArray {
  std::vector<std::size_t> shape;
  std::vector<double> data;  // row-major
};

inline void flatten_nested(const nlohmann::json& j, std::size_t depth, DenseArray& out, const std::string& name) {
  if (!j.is_array()) {
    require(j.is_number(), ErrorCode::Parse, "array '" + name + "' contains a non-number");
    require(depth == out.shape.size(), ErrorCode::DimensionMismatch, "array '" + name + "' is ragged");
    out.data.push_back(j.get<double>());
    return;
  }
  if (depth == out.shape.size()) {
    require(out.data.empty(), ErrorCode::DimensionMismatch, "array '" + name + "' is ragged");
    out.shape.push_back(j.size());
  }
  require(depth < out.shape.size() && out.shape[depth] == j.size(), ErrorCode::DimensionMismatch,
          "array '" + name + "' is ragged");
  for (const auto& e : j) flatten_nested(e, depth + 1, out, name);
}

inline DenseArray parse_array(const nlohmann::json& j, const std::string& name) {
  DenseArray out;
  if (j.is_object()) {
    require(j.contains("shape") && j.contains("data"), ErrorCode::Parse,
            "encoded array '" + name + "' needs 'shape' and 'data'");
    require(j.value("dtype", std::string("float64_le")) == "float64_le", ErrorCode::Parse,
            "encoded array '" + name + "' must have dtype float64_le");
    out.shape = j.at("shape").get<std::vector<std::size_t>>();
    out.data = io::unpack_f64_le(io::base64_decode(j.at("data").get<std::string>()));
    std::size_t count = 1;
    for (auto s : out.shape) count *= s;
    require(count == out.data.size(), ErrorCode::DimensionMismatch,
            "encoded array '" + name + "' data length does not match its shape");
    return out;
  }
  require(j.is_array(), ErrorCode::Parse, "array '" + name + "' must be a list or an encoded object");
  flatten_nested(j, 0, out, name);
  return out;
}

inline nlohmann::json nested_from(const double* data, const std::vector<std::size_t>& shape, std::size_t depth,
                                  std::size_t& cursor) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < shape[depth]; ++i) {
    if (depth + 1 == shape.size())
      out.push_back(data[cursor++]);
    else
      out.push_back(nested_from(data, shape, depth + 1, cursor));
  }
  return out;
}

inline nlohmann::json encode_array(const std::vector<double>& row_major, const std::vector<std::size_t>& shape,
                                   ArrayEncoding encoding) {
  if (encoding == ArrayEncoding::Base64) {
    return {{"shape", shape},
            {"dtype", "float64_le"},
            {"data", io::base64_encode(io::pack_f64_le(row_major.data(), row_major.size()))}};
  }
  std::size_t cursor = 0;
  return nested_from(row_major.data(), shape, 0, cursor);
}

template <typename Derived>
std::vector<double> row_major(const Eigen::DenseBase<Derived>& m) {
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[k++] = m(r, c);
  return out;
}

inline Eigen::MatrixXd to_matrix(const DenseArray& a, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(a.data.data(), rows,
                                                                                                     cols);
}

inline std::map<std::string, std::vector<std::size_t>> expected_shapes(const ModelDims& d) {
  const auto nv = static_cast<std::size_t>(d.n_vertices);
  const auto nj = static_cast<std::size_t>(d.n_joints);
  return {
      {"v_template", {nv, 3}},
      {"shape_basis", {nv, 3, static_cast<std::size_t>(d.n_shape)}},
      {"expr_basis", {nv, 3, static_cast<std::size_t>(d.n_expr)}},
      {"joint_regressor", {nj, nv}},
      {"skin_weights", {nv, nj}},
      {"body_pose_basis", {3 * d.partition.body.size(), static_cast<std::size_t>(d.n_body_latent)}},
      {"lhand_pose_basis", {3 * d.partition.left_hand.size(), static_cast<std::size_t>(d.n_hand_latent)}},
      {"rhand_pose_basis", {3 * d.partition.right_hand.size(), static_cast<std::size_t>(d.n_hand_latent)}},
  };
}

}  // namespace detail

inline nlohmann::json model_to_json(const BodyModel& m, ArrayEncoding encoding = ArrayEncoding::Nested) {
  using detail::encode_array;
  using detail::row_major;
  const auto shapes = detail::expected_shapes(m.dims);
  nlohmann::json j;
  j["schema"] = kModelSchema;
  j["dims"] = {{"n_vertices", m.dims.n_vertices}, {"n_joints", m.dims.n_joints}, {"n_shape", m.dims.n_shape},
               {"n_expr", m.dims.n_expr},         {"n_body_latent", m.dims.n_body_latent},
               {"n_hand_latent", m.dims.n_hand_latent}};
  j["parent"] = m.parent;
  nlohmann::json part = nlohmann::json::object();
  for (std::size_t s = 0; s < JointPartition::kNames.size(); ++s)
    part[JointPartition::kNames[s]] = m.dims.partition.set(s);
  j["joint_partition"] = part;
  if (m.landmarks.valid()) {
    j["landmarks"] = {{"pelvis", m.landmarks.pelvis},
                      {"left_shoulder", m.landmarks.left_shoulder},
                      {"right_shoulder", m.landmarks.right_shoulder}};
  }
  nlohmann::json arrays;
  arrays["v_template"] = encode_array(row_major(m.v_template), shapes.at("v_template"), encoding);
  arrays["shape_basis"] = encode_array(row_major(m.shape_basis), shapes.at("shape_basis"), encoding);
  arrays["expr_basis"] = encode_array(row_major(m.expr_basis), shapes.at("expr_basis"), encoding);
  arrays["joint_regressor"] = encode_array(row_major(m.joint_regressor), shapes.at("joint_regressor"), encoding);
  arrays["skin_weights"] = encode_array(row_major(m.skin_weights), shapes.at("skin_weights"), encoding);
  arrays["body_pose_basis"] = encode_array(row_major(m.body_pose_basis), shapes.at("body_pose_basis"), encoding);
  arrays["lhand_pose_basis"] = encode_array(row_major(m.lhand_pose_basis), shapes.at("lhand_pose_basis"), encoding);
  arrays["rhand_pose_basis"] = encode_array(row_major(m.rhand_pose_basis), shapes.at("rhand_pose_basis"), encoding);
  j["arrays"] = std::move(arrays);
  return j;
}

// Parses and fully validates a model document.
inline BodyModel model_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorCode::Parse, "model document must be a JSON object");
  require(j.contains("schema") && j["schema"].is_string() && j["schema"].get<std::string>() == kModelSchema,
          ErrorCode::SchemaMismatch, std::string("model schema must be '") + std::string(kModelSchema) + "'");
  for (const char* field : {"dims", "parent", "joint_partition", "arrays"})
    require(j.contains(field), ErrorCode::Parse, std::string("model document lacks '") + field + "'");

  BodyModel m;
  try {
    const auto& dj = j.at("dims");
    m.dims.n_vertices = dj.at("n_vertices").get<int>();
    m.dims.n_joints = dj.at("n_joints").get<int>();
    m.dims.n_shape = dj.at("n_shape").get<int>();
    m.dims.n_expr = dj.at("n_expr").get<int>();
    m.dims.n_body_latent = dj.at("n_body_latent").get<int>();
    m.dims.n_hand_latent = dj.at("n_hand_latent").get<int>();
    m.parent = j.at("parent").get<std::vector<int>>();
    const auto& pj = j.at("joint_partition");
    for (std::size_t s = 0; s < JointPartition::kNames.size(); ++s)
      m.dims.partition.set(s) = pj.at(JointPartition::kNames[s]).get<std::vector<int>>();
    if (j.contains("landmarks")) {
      const auto& lj = j.at("landmarks");
      m.landmarks = {lj.at("pelvis").get<int>(), lj.at("left_shoulder").get<int>(),
                     lj.at("right_shoulder").get<int>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("model header: ") + e.what());
  }
  require(m.dims.n_vertices > 0 && m.dims.n_joints > 0, ErrorCode::DimensionMismatch, "dims must be positive");
  require(static_cast<int>(m.parent.size()) == m.dims.n_joints, ErrorCode::DimensionMismatch,
          "parent length does not match n_joints");
  for (std::size_t s = 0; s < JointPartition::kNames.size(); ++s)
    for (int idx : m.dims.partition.set(s))
      require(idx >= 0 && idx < m.dims.n_joints, ErrorCode::BadPartition,
              std::string("joint_partition.") + JointPartition::kNames[s] + " index out of range");

  const auto& aj = j.at("arrays");
  require(aj.is_object(), ErrorCode::Parse, "'arrays' must be an object");
  const auto shapes = detail::expected_shapes(m.dims);
  for (const auto& [name, shape] : shapes)
    require(aj.contains(name), ErrorCode::MissingArray, "model lacks array '" + name + "'");
  for (const auto& item : aj.items())
    require(shapes.count(item.key()) == 1, ErrorCode::UnexpectedArray, "unexpected array '" + item.key() + "'");

  std::map<std::string, detail::DenseArray> arrays;
  for (const auto& [name, shape] : shapes) {
    auto a = detail::parse_array(aj.at(name), name);
    auto show = [](const std::vector<std::size_t>& s) {
      std::string out = "[";
      for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
      return out + "]";
    };
    require(a.shape == shape, ErrorCode::DimensionMismatch,
            "array '" + name + "' has shape " + show(a.shape) + ", expected " + show(shape));
    arrays.emplace(name, std::move(a));
  }
  const Eigen::Index nv = m.dims.n_vertices;
  const Eigen::Index nj = m.dims.n_joints;
  m.v_template = detail::to_matrix(arrays.at("v_template"), nv, 3);
  m.shape_basis = detail::to_matrix(arrays.at("shape_basis"), 3 * nv, m.dims.n_shape);
  m.expr_basis = detail::to_matrix(arrays.at("expr_basis"), 3 * nv, m.dims.n_expr);
  m.joint_regressor = detail::to_matrix(arrays.at("joint_regressor"), nj, nv);
  m.skin_weights = detail::to_matrix(arrays.at("skin_weights"), nv, nj);
  const auto& body = arrays.at("body_pose_basis");
  m.body_pose_basis = detail::to_matrix(body, static_cast<Eigen::Index>(body.shape[0]), m.dims.n_body_latent);
  const auto& lh = arrays.at("lhand_pose_basis");
  m.lhand_pose_basis = detail::to_matrix(lh, static_cast<Eigen::Index>(lh.shape[0]), m.dims.n_hand_latent);
  const auto& rh = arrays.at("rhand_pose_basis");
  m.rhand_pose_basis = detail::to_matrix(rh, static_cast<Eigen::Index>(rh.shape[0]), m.dims.n_hand_latent);
  m.finalize();
  return m;
}

inline BodyModel load_model(const std::string& path) {
  const std::string text = io::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::Parse, "model file '" + path + "': " + e.what());
  }
  return model_from_json(j);
}

inline void save_model(const BodyModel& m, const std::string& path, ArrayEncoding encoding = ArrayEncoding::Nested) {
  io::write_file(path, model_to_json(m, encoding).dump() + "\n");
}

}  // namespace signkit
