#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "signkit/model.hpp"

namespace signkit {

// Pinhole camera: u = fx x / z + cx, v = fy y / z + cy applied after q = R p + t.
struct Camera {
  double fx = 1000.0;
  double fy = 1000.0;
  double cx = 500.0;
  double cy = 500.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  void check() const {
    require(fx > 0.0 && fy > 0.0, ErrorCode::InvalidArgument, "camera focal lengths must be positive");
  }
};

using RowMatrixX2d = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

inline RowMatrixX2d project(const Camera& camera, const Eigen::Ref<const RowMatrixX3d>& points) {
  camera.check();
  RowMatrixX2d out(points.rows(), 2);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Eigen::Vector3d q = camera.rotation * points.row(i).transpose() + camera.translation;
    if (!(q.z() > 0.0)) throw BehindCameraError(static_cast<std::size_t>(i));
    out(i, 0) = camera.fx * q.x() / q.z() + camera.cx;
    out(i, 1) = camera.fy * q.y() / q.z() + camera.cy;
  }
  return out;
}

// 2D keypoint detections with confidences and their model-joint mapping (-1 = unmapped).
struct Detections2D {
  RowMatrixX2d points;
  Eigen::VectorXd confidence;
  std::vector<int> keypoint_to_joint;

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }

  void check(int n_joints) const {
    require(confidence.size() == points.rows() && keypoint_to_joint.size() == size(),
            ErrorCode::DimensionMismatch, "detections: points, confidence and mapping lengths differ");
    for (Eigen::Index i = 0; i < confidence.size(); ++i)
      require(confidence[i] >= 0.0 && confidence[i] <= 1.0, ErrorCode::InvalidArgument,
              "detection confidence outside [0, 1] at index " + std::to_string(i));
    for (int j : keypoint_to_joint)
      require(j < n_joints, ErrorCode::DimensionMismatch, "keypoint mapped to a joint index >= n_joints");
  }
};

// One detection per joint (keypoint i -> joint i) at the projected position, confidence 1.
inline Detections2D joint_detections(const Camera& camera, const Eigen::Ref<const RowMatrixX3d>& joints) {
  Detections2D det;
  det.points = project(camera, joints);
  det.confidence = Eigen::VectorXd::Ones(joints.rows());
  det.keypoint_to_joint.resize(static_cast<std::size_t>(joints.rows()));
  for (Eigen::Index j = 0; j < joints.rows(); ++j) det.keypoint_to_joint[static_cast<std::size_t>(j)] = static_cast<int>(j);
  return det;
}

// Geman-McClure: sigma^2 e^2 / (e^2 + sigma^2).
inline double robust_rho(double residual_norm, double sigma) {
  require(sigma > 0.0, ErrorCode::InvalidArgument, "rho sigma must be positive");
  const double e2 = residual_norm * residual_norm;
  const double s2 = sigma * sigma;
  return s2 * e2 / (e2 + s2);
}

struct FitStage {
  int iterations = 200;
  double weight_data = 1.0;
  double weight_pose_prior = 1.0;
  double weight_shape_prior = 1.0;
  double weight_expr_prior = 1.0;
  double weight_limit = 100.0;
};

enum class StepDirection { GaussNewton, Gradient };

struct StepConfig {
  StepDirection direction = StepDirection::GaussNewton;
  double damping = 1e-9;  // relative to the largest curvature diagonal entry
  double initial = 1e-6;  // first trial step of the plain gradient direction
  double backtrack = 0.5;
  int max_line_search = 40;
  double armijo = 1e-4;
};

struct FitSchedule {
  std::vector<FitStage> stages;
  double rho_sigma = 100.0;
  StepConfig step;
  double convergence_tol = 1e-12;
  double jaw_limit = 0.6;   // rad, per axis-angle component
  double eye_limit = 0.4;
  double init_min_confidence = 0.3;
  double fallback_depth = 3.0;  // root depth when the coarse alignment cannot run

  // Three stages, data weight fixed at 1, prior weights divided by 10 per stage.
  static FitSchedule defaults() {
    FitSchedule s;
    double prior = 1.0;
    for (int k = 0; k < 3; ++k) {
      FitStage stage;
      stage.iterations = k < 2 ? 30 : 200;
      stage.weight_pose_prior = stage.weight_shape_prior = stage.weight_expr_prior = prior;
      s.stages.push_back(stage);
      prior /= 10.0;
    }
    return s;
  }

  void check() const {
    require(!stages.empty(), ErrorCode::InvalidArgument, "schedule needs at least one stage");
    require(rho_sigma > 0.0, ErrorCode::InvalidArgument, "rho_sigma must be positive");
    for (const auto& st : stages)
      require(st.iterations >= 0 && st.weight_data >= 0 && st.weight_pose_prior >= 0 && st.weight_shape_prior >= 0 &&
                  st.weight_expr_prior >= 0 && st.weight_limit >= 0,
              ErrorCode::InvalidArgument, "stage weights and iteration counts must be non-negative");
    require(step.initial > 0.0 && step.damping >= 0.0 && step.backtrack > 0.0 && step.backtrack < 1.0 && step.max_line_search >= 1,
            ErrorCode::InvalidArgument, "invalid line-search configuration");
  }
};

struct ObjectiveTerms {
  double data = 0.0;
  double pose_prior = 0.0;
  double shape_prior = 0.0;
  double expr_prior = 0.0;
  double limit = 0.0;
  double total = 0.0;

  std::map<std::string, double> as_map() const {
    return {{"data", data},
            {"pose_prior", pose_prior},
            {"shape_prior", shape_prior},
            {"expr_prior", expr_prior},
            {"limit", limit}};
  }
};

namespace detail {

// Smooth one-sided penalty exp(d) - 1 - d for d = |a| - limit > 0; C1 at the threshold.
inline double limit_penalty(double a, double limit, double* grad, double* curvature = nullptr) {
  const double d = std::abs(a) - limit;
  if (d <= 0.0) {
    if (grad) *grad = 0.0;
    if (curvature) *curvature = 0.0;
    return 0.0;
  }
  if (grad) *grad = (std::exp(d) - 1.0) * (a < 0.0 ? -1.0 : 1.0);
  if (curvature) *curvature = std::exp(d);
  return std::exp(d) - 1.0 - d;
}

// Joint-level forward state kept for the reverse pass.
struct JointState {
  Params params;
  RowMatrixX3d rest;
  RowMatrixX3d posed;  // includes translation
  std::vector<Eigen::Matrix3d> local, world;
  std::vector<std::array<Eigen::Matrix3d, 3>> d_local;
};

inline JointState joint_state(const BodyModel& model, const Eigen::VectorXd& x) {
  const int nj = model.dims.n_joints;
  JointState s;
  s.params = unpack_params(model.dims, x);
  const RowMatrixX3d pose = expand_pose(model, s.params);
  s.rest = rest_joints(model, s.params.shape, s.params.expression);
  s.local.resize(nj);
  s.world.resize(nj);
  s.d_local.resize(nj);
  s.posed.resize(nj, 3);
  for (int j : model.order) {
    s.local[j] = rodrigues(pose.row(j).transpose(), s.d_local[j]);
    const int par = model.parent[j];
    if (par < 0) {
      s.world[j] = s.local[j];
      s.posed.row(j) = s.rest.row(j);
    } else {
      s.world[j] = s.world[par] * s.local[j];
      s.posed.row(j) =
          s.posed.row(par) + (s.world[par] * (s.rest.row(j) - s.rest.row(par)).transpose()).transpose();
    }
  }
  s.posed.rowwise() += s.params.translation.transpose();
  return s;
}

// Adds d(L)/d(params) to 'grad' given d(L)/d(posed joints).
inline void backprop_joints(const BodyModel& model, const JointState& s, const RowMatrixX3d& g_posed,
                            Eigen::Ref<Eigen::VectorXd> grad) {
  const ModelDims& d = model.dims;
  const ParamOffsets off(d);
  const JointPartition& part = d.partition;
  const int nj = d.n_joints;
  grad.segment<3>(off.translation) += g_posed.colwise().sum().transpose();
  std::vector<Eigen::Matrix3d> g_world(nj, Eigen::Matrix3d::Zero());
  RowMatrixX3d g_pos = g_posed;
  RowMatrixX3d g_rest = RowMatrixX3d::Zero(nj, 3);
  RowMatrixX3d g_pose = RowMatrixX3d::Zero(nj, 3);
  // Children before parents.
  for (auto it = model.order.rbegin(); it != model.order.rend(); ++it) {
    const int j = *it;
    const int par = model.parent[j];
    Eigen::Matrix3d g_local;
    if (par < 0) {
      g_rest.row(j) += g_pos.row(j);
      g_local = g_world[j];
    } else {
      const Eigen::Vector3d bone = (s.rest.row(j) - s.rest.row(par)).transpose();
      const Eigen::Vector3d gp = g_pos.row(j).transpose();
      g_pos.row(par) += g_pos.row(j);
      g_world[par] += gp * bone.transpose() + g_world[j] * s.local[j].transpose();
      const Eigen::Vector3d g_bone = s.world[par].transpose() * gp;
      g_rest.row(j) += g_bone.transpose();
      g_rest.row(par) -= g_bone.transpose();
      g_local = s.world[par].transpose() * g_world[j];
    }
    for (int k = 0; k < 3; ++k) g_pose(j, k) = (g_local.array() * s.d_local[j][k].array()).sum();
  }

  const Eigen::Map<const Eigen::VectorXd> g_rest_flat(g_rest.data(), 3 * nj);
  grad.segment(off.shape, d.n_shape) += model.joint_shape_basis.transpose() * g_rest_flat;
  grad.segment(off.expression, d.n_expr) += model.joint_expr_basis.transpose() * g_rest_flat;

  auto gather = [&g_pose](const std::vector<int>& joints) {
    Eigen::VectorXd flat(3 * joints.size());
    for (std::size_t k = 0; k < joints.size(); ++k) flat.segment<3>(3 * k) = g_pose.row(joints[k]).transpose();
    return flat;
  };
  grad.segment<3>(off.global_orient) += g_pose.row(part.root[0]).transpose();
  grad.segment(off.body, d.n_body_latent) += model.body_pose_basis.transpose() * gather(part.body);
  grad.segment(off.lhand, d.n_hand_latent) += model.lhand_pose_basis.transpose() * gather(part.left_hand);
  grad.segment(off.rhand, d.n_hand_latent) += model.rhand_pose_basis.transpose() * gather(part.right_hand);
  grad.segment<3>(off.jaw) += g_pose.row(part.jaw[0]).transpose();
  grad.segment<3>(off.leye) += g_pose.row(part.left_eye[0]).transpose();
  grad.segment<3>(off.reye) += g_pose.row(part.right_eye[0]).transpose();
}

struct Residual {
  int joint;
  double omega;
  Eigen::Vector3d q;  // camera-frame point
  Eigen::Vector2d r;  // projected minus detected
};

inline std::vector<Residual> residuals(const Camera& camera, const Detections2D& det, const RowMatrixX3d& posed) {
  std::vector<Residual> out;
  for (std::size_t i = 0; i < det.size(); ++i) {
    const int j = det.keypoint_to_joint[i];
    if (j < 0) continue;
    const Eigen::Vector3d q = camera.rotation * posed.row(j).transpose() + camera.translation;
    if (!(q.z() > 0.0)) throw BehindCameraError(i);
    const double omega = det.confidence[static_cast<Eigen::Index>(i)];
    if (omega == 0.0) continue;
    const Eigen::Vector2d r(camera.fx * q.x() / q.z() + camera.cx - det.points(i, 0),
                            camera.fy * q.y() / q.z() + camera.cy - det.points(i, 1));
    out.push_back({j, omega, q, r});
  }
  return out;
}

// d(residual)/d(world point): rows are the u and v components.
inline Eigen::Matrix<double, 2, 3> projection_jacobian(const Camera& camera, const Eigen::Vector3d& q) {
  const double iz = 1.0 / q.z();
  Eigen::Matrix<double, 2, 3> dq;
  dq << camera.fx * iz, 0.0, -camera.fx * q.x() * iz * iz, 0.0, camera.fy * iz, -camera.fy * q.y() * iz * iz;
  return dq * camera.rotation;
}

}  // namespace detail

// Weighted objective on the packed parameter vector (see pack_params). When 'grad' is
// non-null it receives the analytic gradient, back-propagated through projection,
// kinematics, blend-shape regression and the latent pose bases.
inline ObjectiveTerms objective(const BodyModel& model, const Camera& camera, const Eigen::VectorXd& x,
                                const Detections2D& det, const FitStage& w, const FitSchedule& schedule,
                                Eigen::VectorXd* grad = nullptr) {
  const ModelDims& d = model.dims;
  const ParamOffsets off(d);
  const detail::JointState state = detail::joint_state(model, x);
  const Params& p = state.params;

  ObjectiveTerms terms;
  if (grad) grad->setZero(off.total);

  terms.pose_prior = p.body_latent.squaredNorm() + p.lhand_latent.squaredNorm() + p.rhand_latent.squaredNorm();
  terms.shape_prior = p.shape.squaredNorm();
  terms.expr_prior = p.expression.squaredNorm();
  std::array<double, 9> limit_grad{};
  const std::array<const Eigen::Vector3d*, 3> limited = {&p.jaw, &p.leye, &p.reye};
  for (int b = 0; b < 3; ++b) {
    const double lim = b == 0 ? schedule.jaw_limit : schedule.eye_limit;
    for (int k = 0; k < 3; ++k) terms.limit += detail::limit_penalty((*limited[b])[k], lim, &limit_grad[3 * b + k]);
  }

  RowMatrixX3d g_posed = RowMatrixX3d::Zero(d.n_joints, 3);
  const double s2 = schedule.rho_sigma * schedule.rho_sigma;
  for (const auto& res : detail::residuals(camera, det, state.posed)) {
    const double e2 = res.r.squaredNorm();
    const double denom = e2 + s2;
    terms.data += res.omega * s2 * e2 / denom;
    // d rho / d r = 2 r sigma^4 / (e^2 + sigma^2)^2
    if (grad)
      g_posed.row(res.joint) += w.weight_data * res.omega * 2.0 * s2 * s2 / (denom * denom) *
                                (res.r.transpose() * detail::projection_jacobian(camera, res.q));
  }

  terms.total = w.weight_data * terms.data + w.weight_pose_prior * terms.pose_prior +
                w.weight_shape_prior * terms.shape_prior + w.weight_expr_prior * terms.expr_prior +
                w.weight_limit * terms.limit;
  if (!grad) return terms;

  grad->segment(off.body, d.n_body_latent) += 2.0 * w.weight_pose_prior * p.body_latent;
  grad->segment(off.lhand, d.n_hand_latent) += 2.0 * w.weight_pose_prior * p.lhand_latent;
  grad->segment(off.rhand, d.n_hand_latent) += 2.0 * w.weight_pose_prior * p.rhand_latent;
  grad->segment(off.shape, d.n_shape) += 2.0 * w.weight_shape_prior * p.shape;
  grad->segment(off.expression, d.n_expr) += 2.0 * w.weight_expr_prior * p.expression;
  for (int k = 0; k < 3; ++k) {
    (*grad)[off.jaw + k] += w.weight_limit * limit_grad[k];
    (*grad)[off.leye + k] += w.weight_limit * limit_grad[3 + k];
    (*grad)[off.reye + k] += w.weight_limit * limit_grad[6 + k];
  }
  detail::backprop_joints(model, state, g_posed, *grad);
  return terms;
}

// Positive semi-definite curvature model of the objective: Gauss-Newton on the data term
// with IRLS weights 2 w omega rho'(e^2), exact diagonal for priors and limits.
inline Eigen::MatrixXd gauss_newton_matrix(const BodyModel& model, const Camera& camera, const Eigen::VectorXd& x,
                                           const Detections2D& det, const FitStage& w, const FitSchedule& schedule) {
  const ModelDims& d = model.dims;
  const ParamOffsets off(d);
  const detail::JointState state = detail::joint_state(model, x);
  const double s2 = schedule.rho_sigma * schedule.rho_sigma;
  const auto res = detail::residuals(camera, det, state.posed);

  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(2 * static_cast<Eigen::Index>(res.size()), off.total);
  RowMatrixX3d seed = RowMatrixX3d::Zero(d.n_joints, 3);
  for (std::size_t k = 0; k < res.size(); ++k) {
    const double denom = res[k].r.squaredNorm() + s2;
    const double scale = std::sqrt(2.0 * w.weight_data * res[k].omega * s2 * s2 / (denom * denom));
    const Eigen::Matrix<double, 2, 3> dp = detail::projection_jacobian(camera, res[k].q);
    for (int c = 0; c < 2; ++c) {
      seed.row(res[k].joint) = scale * dp.row(c);
      Eigen::VectorXd row = Eigen::VectorXd::Zero(off.total);
      detail::backprop_joints(model, state, seed, row);
      jac.row(2 * static_cast<Eigen::Index>(k) + c) = row.transpose();
      seed.row(res[k].joint).setZero();
    }
  }
  Eigen::MatrixXd h = jac.transpose() * jac;
  auto add_diag = [&h](int start, int n, double v) {
    for (int i = 0; i < n; ++i) h(start + i, start + i) += v;
  };
  add_diag(off.body, d.n_body_latent, 2.0 * w.weight_pose_prior);
  add_diag(off.lhand, d.n_hand_latent, 2.0 * w.weight_pose_prior);
  add_diag(off.rhand, d.n_hand_latent, 2.0 * w.weight_pose_prior);
  add_diag(off.shape, d.n_shape, 2.0 * w.weight_shape_prior);
  add_diag(off.expression, d.n_expr, 2.0 * w.weight_expr_prior);
  const Params& p = state.params;
  const std::array<std::pair<const Eigen::Vector3d*, int>, 3> limited = {
      std::pair{&p.jaw, off.jaw}, std::pair{&p.leye, off.leye}, std::pair{&p.reye, off.reye}};
  for (int b = 0; b < 3; ++b) {
    const double lim = b == 0 ? schedule.jaw_limit : schedule.eye_limit;
    for (int k = 0; k < 3; ++k) {
      double curvature = 0.0;
      detail::limit_penalty((*limited[b].first)[k], lim, nullptr, &curvature);
      h(limited[b].second + k, limited[b].second + k) += w.weight_limit * curvature;
    }
  }
  return h;
}

// Confidence-weighted robust reprojection error of the posed joints.
inline double data_term(const BodyModel& model, const Camera& camera, const Params& params, const Detections2D& det,
                        double sigma) {
  require(sigma > 0.0, ErrorCode::InvalidArgument, "rho sigma must be positive");
  det.check(model.dims.n_joints);
  FitSchedule s;
  s.rho_sigma = sigma;
  FitStage data_only;
  data_only.weight_pose_prior = data_only.weight_shape_prior = data_only.weight_expr_prior = 0.0;
  data_only.weight_limit = 0.0;
  return objective(model, camera, pack_params(model.dims, params), det, data_only, s).data;
}

// Mean pixel distance between projected mapped joints and their detections (confidence > 0).
inline double mean_reprojection_error(const BodyModel& model, const Camera& camera, const Params& params,
                                      const Detections2D& det) {
  const RowMatrixX3d joints = forward(model, params).joints_posed;
  const RowMatrixX2d proj = project(camera, joints);
  double sum = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < det.size(); ++i) {
    const int j = det.keypoint_to_joint[i];
    if (j < 0 || det.confidence[static_cast<Eigen::Index>(i)] <= 0.0) continue;
    sum += (proj.row(j) - det.points.row(static_cast<Eigen::Index>(i))).norm();
    ++count;
  }
  return count ? sum / count : 0.0;
}

struct FitOptions {
  bool align_global = true;       // coarse translation/orientation initialization
  bool freeze_shape = false;      // keep init.shape fixed
  bool final_stage_only = false;  // warm-started frames skip the annealing ramp
};

struct FitResult {
  Params params;
  double final_objective = 0.0;
  std::map<std::string, double> per_term_values;
  int iterations_used = 0;
  bool converged = false;
  bool degenerate = false;
  // Stage objective before the first step and after every accepted step, per stage run.
  std::vector<std::vector<double>> stage_traces;
};

namespace detail {

inline int best_detection_for(const Detections2D& det, int joint) {
  int best = -1;
  for (std::size_t i = 0; i < det.size(); ++i)
    if (det.keypoint_to_joint[i] == joint &&
        (best < 0 || det.confidence[static_cast<Eigen::Index>(i)] > det.confidence[best]))
      best = static_cast<int>(i);
  return best;
}

inline Eigen::Vector3d rotation_log(const Eigen::Matrix3d& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

// Places the root at the fallback depth on the optical axis.
inline void neutral_translation(const BodyModel& model, const Camera& camera, const FitSchedule& schedule,
                                Params& params) {
  const RowMatrixX3d rest = rest_joints(model, params.shape, params.expression);
  const Eigen::Vector3d target = camera.rotation.transpose() *
                                 (Eigen::Vector3d(0.0, 0.0, schedule.fallback_depth) - camera.translation);
  params.translation = target - rest.row(model.dims.partition.root[0]).transpose();
}

// Depth from shoulder width, in-plane orientation from the torso triangle, translation
// from the torso centroid. Returns false (params untouched) when the landmarks are
// missing or weakly detected.
inline bool align_global(const BodyModel& model, const Camera& camera, const Detections2D& det,
                         const FitSchedule& schedule, Params& params) {
  const Landmarks& lm = model.landmarks;
  if (!lm.valid()) return false;
  const std::array<int, 3> joints = {lm.pelvis, lm.left_shoulder, lm.right_shoulder};
  std::array<Eigen::Vector2d, 3> pix;
  for (int k = 0; k < 3; ++k) {
    const int i = best_detection_for(det, joints[k]);
    if (i < 0 || det.confidence[i] < schedule.init_min_confidence) return false;
    pix[k] = det.points.row(i).transpose();
  }
  const RowMatrixX3d rest = rest_joints(model, params.shape, params.expression);
  const double focal = 0.5 * (camera.fx + camera.fy);
  const double width = (rest.row(lm.left_shoulder) - rest.row(lm.right_shoulder)).norm();
  const double pixels = (pix[1] - pix[2]).norm();
  if (!(pixels > 1e-9) || !(width > 0.0)) return false;
  const double depth = focal * width / pixels;

  // In-plane rotation about the camera axis aligning the projected torso triangle.
  const Eigen::Vector3d root = rest.row(model.dims.partition.root[0]).transpose();
  const Eigen::Matrix3d r0 = rodrigues(params.global_orient);
  std::array<Eigen::Vector2d, 3> model_pix;
  Eigen::Vector2d model_mean = Eigen::Vector2d::Zero(), det_mean = Eigen::Vector2d::Zero();
  for (int k = 0; k < 3; ++k) {
    const Eigen::Vector3d c = camera.rotation * (r0 * (rest.row(joints[k]).transpose() - root));
    model_pix[k] = Eigen::Vector2d(camera.fx * c.x(), camera.fy * c.y());
    model_mean += model_pix[k] / 3.0;
    det_mean += pix[k] / 3.0;
  }
  double dot = 0.0, cross = 0.0;
  for (int k = 0; k < 3; ++k) {
    const Eigen::Vector2d a = model_pix[k] - model_mean;
    const Eigen::Vector2d b = pix[k] - det_mean;
    dot += a.dot(b);
    cross += a.x() * b.y() - a.y() * b.x();
  }
  const double angle = std::atan2(cross, dot);
  const Eigen::Matrix3d spin =
      camera.rotation.transpose() * Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitZ()).toRotationMatrix() *
      camera.rotation;
  const Eigen::Matrix3d r = spin * r0;
  params.global_orient = rotation_log(r);

  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (int k = 0; k < 3; ++k) centroid += (root + r * (rest.row(joints[k]).transpose() - root)) / 3.0;
  const Eigen::Vector3d ray((det_mean.x() - camera.cx) / camera.fx * depth, (det_mean.y() - camera.cy) / camera.fy * depth,
                            depth);
  const Eigen::Vector3d world = camera.rotation.transpose() * (ray - camera.translation);
  params.translation = world - centroid;
  return true;
}

struct StageOutcome {
  int iterations = 0;
  bool converged = false;
};

inline StageOutcome run_stage(const BodyModel& model, const Camera& camera, const Detections2D& det,
                              const FitStage& stage, const FitSchedule& schedule, const Eigen::VectorXd& free_mask,
                              Eigen::VectorXd& x, std::vector<double>& trace) {
  StageOutcome out;
  Eigen::VectorXd g(x.size()), g_new(x.size());
  double f = objective(model, camera, x, det, stage, schedule, &g).total;
  trace.push_back(f);
  double alpha = schedule.step.initial;
  Eigen::VectorXd s_prev, y_prev;
  for (int it = 0; it < stage.iterations; ++it) {
    const Eigen::VectorXd masked = (g.array() * free_mask.array()).matrix();
    Eigen::VectorXd dir = -masked;
    if (schedule.step.direction == StepDirection::GaussNewton) {
      Eigen::MatrixXd h = gauss_newton_matrix(model, camera, x, det, stage, schedule);
      for (Eigen::Index i = 0; i < h.rows(); ++i)
        if (free_mask[i] == 0.0) {
          h.row(i).setZero();
          h.col(i).setZero();
          h(i, i) = 1.0;
        }
      h.diagonal().array() += schedule.step.damping * std::max(h.diagonal().maxCoeff(), 1e-12);
      const Eigen::VectorXd newton = -h.ldlt().solve(masked);
      if (newton.allFinite() && g.dot(newton) < 0.0) dir = newton;
      alpha = 1.0;
    } else if (s_prev.size()) {
      // Barzilai-Borwein initial trial step.
      const double sy = s_prev.dot(y_prev);
      alpha = sy > 0.0 ? s_prev.squaredNorm() / sy : 2.0 * alpha;
    }
    const double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      out.converged = true;
      break;
    }
    bool accepted = false;
    Eigen::VectorXd x_new;
    double f_new = 0.0;
    for (int ls = 0; ls < schedule.step.max_line_search; ++ls) {
      x_new = x + alpha * dir;
      try {
        f_new = objective(model, camera, x_new, det, stage, schedule, &g_new).total;
      } catch (const BehindCameraError&) {
        f_new = std::numeric_limits<double>::infinity();
      }
      if (std::isfinite(f_new) && f_new <= f + schedule.step.armijo * alpha * slope) {
        accepted = true;
        break;
      }
      alpha *= schedule.step.backtrack;
    }
    if (!accepted) {
      out.converged = true;  // no admissible step along the gradient
      break;
    }
    ++out.iterations;
    const double decrease = f - f_new;
    s_prev = x_new - x;
    y_prev = g_new - g;
    x = std::move(x_new);
    g = g_new;
    f = f_new;
    trace.push_back(f);
    if (decrease <= schedule.convergence_tol * std::max(std::abs(f), 1e-300)) {
      out.converged = true;
      break;
    }
  }
  return out;
}

inline bool has_signal(const Detections2D& det) {
  for (std::size_t i = 0; i < det.size(); ++i)
    if (det.keypoint_to_joint[i] >= 0 && det.confidence[static_cast<Eigen::Index>(i)] > 0.0) return true;
  return false;
}

}  // namespace detail

inline FitResult fit_frame(const BodyModel& model, const Camera& camera, const Detections2D& det,
                           const FitSchedule& schedule, const Params& init, const FitOptions& options = {}) {
  schedule.check();
  camera.check();
  det.check(model.dims.n_joints);
  init.check(model.dims);

  FitResult result;
  result.params = init;
  if (!detail::has_signal(det)) {
    result.degenerate = true;
    result.converged = false;
    return result;
  }

  Params start = init;
  if (options.align_global && !detail::align_global(model, camera, det, schedule, start))
    detail::neutral_translation(model, camera, schedule, start);

  const ModelDims& d = model.dims;
  const ParamOffsets off(d);
  Eigen::VectorXd free_mask = Eigen::VectorXd::Ones(off.total);
  if (options.freeze_shape) free_mask.segment(off.shape, d.n_shape).setZero();

  Eigen::VectorXd x = pack_params(d, start);
  const std::size_t first = options.final_stage_only ? schedule.stages.size() - 1 : 0;
  bool converged = true;
  for (std::size_t k = first; k < schedule.stages.size(); ++k) {
    result.stage_traces.emplace_back();
    const auto outcome =
        detail::run_stage(model, camera, det, schedule.stages[k], schedule, free_mask, x, result.stage_traces.back());
    result.iterations_used += outcome.iterations;
    if (k + 1 == schedule.stages.size()) converged = outcome.converged;
  }
  result.params = unpack_params(d, x);
  const ObjectiveTerms terms = objective(model, camera, x, det, schedule.stages.back(), schedule);
  result.final_objective = terms.total;
  result.per_term_values = terms.as_map();
  result.converged = converged;
  return result;
}

// Frame 0 (or the first non-degenerate frame) is fit from 'init' through the whole
// schedule; later frames warm-start from the previous result with shape frozen and run
// the final stage only.
inline std::vector<FitResult> fit_sequence(const BodyModel& model, const Camera& camera,
                                           const std::vector<Detections2D>& frames, const FitSchedule& schedule,
                                           const Params& init) {
  require(!frames.empty(), ErrorCode::EmptyInput, "fit_sequence needs at least one frame");
  std::vector<FitResult> results;
  results.reserve(frames.size());
  Params previous = init;
  bool have_fit = false;
  for (const auto& det : frames) {
    FitOptions opts;
    if (have_fit) {
      opts.align_global = false;
      opts.freeze_shape = true;
      opts.final_stage_only = true;
    }
    FitResult r = fit_frame(model, camera, det, schedule, previous, opts);
    if (!r.degenerate) {
      previous = r.params;
      have_fit = true;
    }
    results.push_back(std::move(r));
  }
  return results;
}

inline std::vector<FitResult> fit_sequence(const BodyModel& model, const Camera& camera,
                                           const std::vector<Detections2D>& frames, const FitSchedule& schedule) {
  return fit_sequence(model, camera, frames, schedule, Params::zeros(model.dims));
}

// --- JSON interfaces -------------------------------------------------------------------

inline nlohmann::json camera_to_json(const Camera& c) {
  std::vector<double> rot(9);
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) rot[3 * r + k] = c.rotation(r, k);
  return {{"focal", {c.fx, c.fy}},
          {"principal", {c.cx, c.cy}},
          {"rotation", rot},
          {"translation", {c.translation.x(), c.translation.y(), c.translation.z()}}};
}

inline Camera camera_from_json(const nlohmann::json& j) {
  Camera c;
  if (j.contains("focal")) {
    c.fx = j.at("focal").at(0).get<double>();
    c.fy = j.at("focal").at(1).get<double>();
  }
  if (j.contains("principal")) {
    c.cx = j.at("principal").at(0).get<double>();
    c.cy = j.at("principal").at(1).get<double>();
  }
  if (j.contains("rotation")) {
    const auto r = j.at("rotation").get<std::vector<double>>();
    require(r.size() == 9, ErrorCode::Parse, "camera rotation needs 9 entries");
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) c.rotation(a, b) = r[3 * a + b];
  }
  if (j.contains("translation")) {
    const auto t = j.at("translation").get<std::vector<double>>();
    require(t.size() == 3, ErrorCode::Parse, "camera translation needs 3 entries");
    c.translation = Eigen::Vector3d(t[0], t[1], t[2]);
  }
  c.check();
  return c;
}

inline nlohmann::json schedule_to_json(const FitSchedule& s) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& st : s.stages)
    stages.push_back({{"iterations", st.iterations},
                      {"weight_data", st.weight_data},
                      {"weight_pose_prior", st.weight_pose_prior},
                      {"weight_shape_prior", st.weight_shape_prior},
                      {"weight_expr_prior", st.weight_expr_prior},
                      {"weight_limit", st.weight_limit}});
  return {{"schema", kScheduleSchema},
          {"stages", stages},
          {"rho_sigma", s.rho_sigma},
          {"step",
           {{"direction", s.step.direction == StepDirection::GaussNewton ? "gauss_newton" : "gradient"},
            {"damping", s.step.damping},
            {"initial", s.step.initial},
            {"backtrack", s.step.backtrack},
            {"max_line_search", s.step.max_line_search},
            {"armijo", s.step.armijo}}},
          {"convergence_tol", s.convergence_tol},
          {"jaw_limit", s.jaw_limit},
          {"eye_limit", s.eye_limit},
          {"init_min_confidence", s.init_min_confidence},
          {"fallback_depth", s.fallback_depth}};
}

// Absent fields keep their defaults(); a present "schema" must match.
inline FitSchedule schedule_from_json(const nlohmann::json& j) {
  if (j.contains("schema"))
    require(j.at("schema").get<std::string>() == kScheduleSchema, ErrorCode::SchemaMismatch,
            "schedule schema must be '" + std::string(kScheduleSchema) + "'");
  FitSchedule s = FitSchedule::defaults();
  try {
    if (j.contains("stages")) {
      s.stages.clear();
      for (const auto& sj : j.at("stages")) {
        FitStage st;
        st.iterations = sj.value("iterations", st.iterations);
        st.weight_data = sj.value("weight_data", st.weight_data);
        st.weight_pose_prior = sj.value("weight_pose_prior", st.weight_pose_prior);
        st.weight_shape_prior = sj.value("weight_shape_prior", st.weight_shape_prior);
        st.weight_expr_prior = sj.value("weight_expr_prior", st.weight_expr_prior);
        st.weight_limit = sj.value("weight_limit", st.weight_limit);
        s.stages.push_back(st);
      }
    }
    s.rho_sigma = j.value("rho_sigma", s.rho_sigma);
    if (j.contains("step")) {
      const auto& sj = j.at("step");
      if (sj.contains("direction")) {
        const auto dir = sj.at("direction").get<std::string>();
        require(dir == "gauss_newton" || dir == "gradient", ErrorCode::Parse,
                "step.direction must be 'gauss_newton' or 'gradient'");
        s.step.direction = dir == "gradient" ? StepDirection::Gradient : StepDirection::GaussNewton;
      }
      s.step.damping = sj.value("damping", s.step.damping);
      s.step.initial = sj.value("initial", s.step.initial);
      s.step.backtrack = sj.value("backtrack", s.step.backtrack);
      s.step.max_line_search = sj.value("max_line_search", s.step.max_line_search);
      s.step.armijo = sj.value("armijo", s.step.armijo);
    }
    s.convergence_tol = j.value("convergence_tol", s.convergence_tol);
    s.jaw_limit = j.value("jaw_limit", s.jaw_limit);
    s.eye_limit = j.value("eye_limit", s.eye_limit);
    s.init_min_confidence = j.value("init_min_confidence", s.init_min_confidence);
    s.fallback_depth = j.value("fallback_depth", s.fallback_depth);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("schedule: ") + e.what());
  }
  s.check();
  return s;
}

// One JSON line per frame: canonical feature entries, translation, diagnostics.
inline std::string fit_result_to_jsonl(const ModelDims& dims, const FitResult& r, std::size_t frame) {
  const Eigen::VectorXd packed = pack_params(dims, r.params);
  const ParamOffsets off(dims);
  std::vector<double> features(packed.data(), packed.data() + off.translation);
  nlohmann::json j = {{"schema", kFitResultSchema},
                      {"frame", frame},
                      {"features", features},
                      {"translation", {r.params.translation.x(), r.params.translation.y(), r.params.translation.z()}},
                      {"objective", r.final_objective},
                      {"terms", r.per_term_values},
                      {"iterations", r.iterations_used},
                      {"converged", r.converged},
                      {"degenerate", r.degenerate}};
  return j.dump();
}

inline Params params_from_fit_jsonl(const ModelDims& dims, const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("fit line: ") + e.what());
  }
  require(j.value("schema", std::string()) == kFitResultSchema, ErrorCode::SchemaMismatch,
          "fit line schema must be '" + std::string(kFitResultSchema) + "'");
  const auto features = j.at("features").get<std::vector<double>>();
  const auto t = j.at("translation").get<std::vector<double>>();
  require(static_cast<int>(features.size()) == dims.feature_size() && t.size() == 3, ErrorCode::DimensionMismatch,
          "fit line has wrong feature length");
  Eigen::VectorXd packed(dims.feature_size() + 3);
  for (std::size_t i = 0; i < features.size(); ++i) packed[static_cast<Eigen::Index>(i)] = features[i];
  packed.tail<3>() = Eigen::Vector3d(t[0], t[1], t[2]);
  return unpack_params(dims, packed);
}

}  // namespace signkit
