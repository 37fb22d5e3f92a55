#pragma once

#include <functional>
#include <random>
#include <vector>

#include "signkit/model.hpp"

namespace oracle {

using namespace signkit;

// Independent LBS oracle: 4x4 homogeneous chain transforms, Eigen's AngleAxis for the
// rotations, explicit loops for blend shapes, regression and skinning.
struct OracleOutput {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<Eigen::Vector3d> joints;
};

inline OracleOutput naive_forward(const BodyModel& m, const Params& p) {
  const int nv = m.dims.n_vertices;
  const int nj = m.dims.n_joints;
  std::vector<Eigen::Vector3d> rest(nv);
  for (int v = 0; v < nv; ++v) {
    for (int a = 0; a < 3; ++a) {
      double x = m.v_template(v, a);
      for (int k = 0; k < m.dims.n_shape; ++k) x += m.shape_basis(3 * v + a, k) * p.shape[k];
      for (int k = 0; k < m.dims.n_expr; ++k) x += m.expr_basis(3 * v + a, k) * p.expression[k];
      rest[v][a] = x;
    }
  }
  std::vector<Eigen::Vector3d> joints(nj, Eigen::Vector3d::Zero());
  for (int j = 0; j < nj; ++j)
    for (int v = 0; v < nv; ++v) joints[j] += m.joint_regressor(j, v) * rest[v];

  std::vector<Eigen::Vector3d> aa(nj, Eigen::Vector3d::Zero());
  const auto& part = m.dims.partition;
  aa[part.root[0]] = p.global_orient;
  aa[part.jaw[0]] = p.jaw;
  aa[part.left_eye[0]] = p.leye;
  aa[part.right_eye[0]] = p.reye;
  auto fill = [&](const std::vector<int>& set, const Eigen::MatrixXd& basis, const Eigen::VectorXd& z) {
    for (std::size_t k = 0; k < set.size(); ++k)
      for (int a = 0; a < 3; ++a) {
        double s = 0.0;
        for (int l = 0; l < basis.cols(); ++l) s += basis(3 * k + a, l) * z[l];
        aa[set[k]][a] = s;
      }
  };
  fill(part.body, m.body_pose_basis, p.body_latent);
  fill(part.left_hand, m.lhand_pose_basis, p.lhand_latent);
  fill(part.right_hand, m.rhand_pose_basis, p.rhand_latent);

  auto rot = [](const Eigen::Vector3d& v) -> Eigen::Matrix3d {
    const double t = v.norm();
    if (t == 0.0) return Eigen::Matrix3d::Identity();
    return Eigen::AngleAxisd(t, v / t).toRotationMatrix();
  };
  std::vector<Eigen::Matrix4d> chain(nj);
  std::vector<bool> done(nj, false);
  std::function<void(int)> compute = [&](int j) {
    if (done[j]) return;
    Eigen::Matrix4d local = Eigen::Matrix4d::Identity();
    local.topLeftCorner<3, 3>() = rot(aa[j]);
    const int par = m.parent[j];
    if (par < 0) {
      local.topRightCorner<3, 1>() = joints[j];
      chain[j] = local;
    } else {
      compute(par);
      local.topRightCorner<3, 1>() = joints[j] - joints[par];
      chain[j] = chain[par] * local;
    }
    done[j] = true;
  };
  for (int j = 0; j < nj; ++j) compute(j);

  OracleOutput out;
  out.vertices.resize(nv);
  for (int v = 0; v < nv; ++v) {
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    for (int j = 0; j < nj; ++j) {
      const double w = m.skin_weights(v, j);
      if (w == 0.0) continue;
      Eigen::Vector4d x;
      x << rest[v] - joints[j], 1.0;
      acc += w * (chain[j] * x).head<3>();
    }
    out.vertices[v] = acc + p.translation;
  }
  out.joints.resize(nj);
  for (int j = 0; j < nj; ++j) out.joints[j] = chain[j].topRightCorner<3, 1>() + p.translation;
  return out;
}

inline Params random_params(const ModelDims& d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Params p = Params::zeros(d);
  auto fill = [&](auto& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = n(rng);
  };
  fill(p.shape);
  fill(p.lhand_latent);
  fill(p.rhand_latent);
  fill(p.expression);
  fill(p.body_latent);
  fill(p.global_orient);
  fill(p.jaw);
  fill(p.leye);
  fill(p.reye);
  fill(p.translation);
  return p;
}

}  // namespace oracle
