#pragma once

#include <cmath>
#include <random>

#include "signkit/model.hpp"

namespace signkit {

struct ToyModelOptions {
  int n_vertices = 20;
  int n_body = 3;         // spine + two shoulders, then alternating arm segments
  int n_hand_joints = 1;  // per hand
  int n_shape = 10;
  int n_expr = 10;
  int n_body_latent = 32;
  int n_hand_latent = 12;
  double shape_scale = 0.01;
  double expr_scale = 0.005;
  double body_pose_scale = 0.3;  // per-slot std for unit-variance latents
  double hand_pose_scale = 0.3;
  std::uint64_t seed = 0;

  // 10475 vertices, 54 joints: root + 20 body + jaw + 2 eyes + 15 per hand.
  static ToyModelOptions full_scale(std::uint64_t seed = 0) {
    ToyModelOptions o;
    o.n_vertices = 10475;
    o.n_body = 20;
    o.n_hand_joints = 15;
    o.seed = seed;
    return o;
  }

  // Full joint hierarchy on a sparse mesh (two vertices per joint).
  static ToyModelOptions full_skeleton(std::uint64_t seed = 0) {
    ToyModelOptions o = full_scale(seed);
    o.n_vertices = 108;
    return o;
  }
};

// Seeded synthetic body model. Every invariant holds by construction: skin weights are a
// softmax over each vertex's two nearest joints and regressor rows a softmax over the
// vertices attached to each joint.
inline BodyModel make_toy_model(const ToyModelOptions& opt = {}) {
  require(opt.n_body >= 3 && opt.n_hand_joints >= 1, ErrorCode::InvalidArgument,
          "toy model needs at least 3 body joints and 1 joint per hand");
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  BodyModel m;
  ModelDims& d = m.dims;
  d.n_vertices = opt.n_vertices;
  d.n_joints = 1 + opt.n_body + 3 + 2 * opt.n_hand_joints;
  d.n_shape = opt.n_shape;
  d.n_expr = opt.n_expr;
  d.n_body_latent = opt.n_body_latent;
  d.n_hand_latent = opt.n_hand_latent;
  require(d.n_vertices >= 2 * d.n_joints, ErrorCode::InvalidArgument,
          "toy model needs at least two vertices per joint");

  JointPartition& part = d.partition;
  int next = 0;
  part.root = {next++};
  for (int k = 0; k < opt.n_body; ++k) part.body.push_back(next++);
  part.jaw = {next++};
  part.left_eye = {next++};
  part.right_eye = {next++};
  for (int k = 0; k < opt.n_hand_joints; ++k) part.left_hand.push_back(next++);
  for (int k = 0; k < opt.n_hand_joints; ++k) part.right_hand.push_back(next++);

  m.parent.assign(d.n_joints, -1);
  std::vector<Eigen::Vector3d> pos(d.n_joints);
  auto place = [&](int j, int p, const Eigen::Vector3d& offset) {
    m.parent[j] = p;
    pos[j] = (p < 0 ? Eigen::Vector3d::Zero() : pos[p]) + offset;
  };
  place(part.root[0], -1, Eigen::Vector3d::Zero());
  const int spine = part.body[0];
  place(spine, part.root[0], {0.0, 0.3, 0.0});
  place(part.body[1], spine, {0.18, 0.2, 0.0});
  place(part.body[2], spine, {-0.18, 0.2, 0.0});
  int left_tip = part.body[1];
  int right_tip = part.body[2];
  for (int k = 3; k < opt.n_body; ++k) {
    const bool left = (k % 2) == 1;
    int& tip = left ? left_tip : right_tip;
    place(part.body[k], tip, {left ? 0.12 : -0.12, -0.02, 0.0});
    tip = part.body[k];
  }
  place(part.jaw[0], spine, {0.0, 0.32, 0.04});
  place(part.left_eye[0], part.jaw[0], {0.03, 0.08, 0.04});
  place(part.right_eye[0], part.jaw[0], {-0.03, 0.08, 0.04});
  auto build_hand = [&](const std::vector<int>& hand, int tip, double side) {
    place(hand[0], tip, {side * 0.25, 0.0, 0.0});
    for (std::size_t k = 1; k < hand.size(); ++k) {
      const bool finger_base = (k - 1) % 3 == 0;
      const double spread = 0.015 * static_cast<double>((k - 1) / 3) - 0.03;
      place(hand[k], finger_base ? hand[0] : hand[k - 1],
            finger_base ? Eigen::Vector3d{side * 0.05, spread, 0.0} : Eigen::Vector3d{side * 0.025, 0.0, 0.0});
    }
  };
  build_hand(part.left_hand, left_tip, 1.0);
  build_hand(part.right_hand, right_tip, -1.0);
  for (auto& p : pos) p += 0.01 * Eigen::Vector3d(normal(rng), normal(rng), normal(rng));

  // Vertices attached round-robin to joints and scattered around them.
  std::vector<int> owner(d.n_vertices);
  m.v_template.resize(d.n_vertices, 3);
  for (int v = 0; v < d.n_vertices; ++v) {
    owner[v] = v % d.n_joints;
    const Eigen::Vector3d jitter(normal(rng), normal(rng), normal(rng));
    m.v_template.row(v) = (pos[owner[v]] + 0.04 * jitter).transpose();
  }

  m.joint_regressor = Eigen::MatrixXd::Zero(d.n_joints, d.n_vertices);
  for (int v = 0; v < d.n_vertices; ++v) m.joint_regressor(owner[v], v) = std::exp(normal(rng));
  for (int j = 0; j < d.n_joints; ++j) m.joint_regressor.row(j) /= m.joint_regressor.row(j).sum();

  m.skin_weights = Eigen::MatrixXd::Zero(d.n_vertices, d.n_joints);
  for (int v = 0; v < d.n_vertices; ++v) {
    int best = -1, second = -1;
    double best_d = 0.0, second_d = 0.0;
    for (int j = 0; j < d.n_joints; ++j) {
      const double dist = (m.v_template.row(v).transpose() - pos[j]).squaredNorm();
      if (best < 0 || dist < best_d) {
        second = best, second_d = best_d;
        best = j, best_d = dist;
      } else if (second < 0 || dist < second_d) {
        second = j, second_d = dist;
      }
    }
    const double a = std::exp(normal(rng) + 1.0);
    const double b = std::exp(normal(rng));
    m.skin_weights(v, best) = a / (a + b);
    m.skin_weights(v, second) = b / (a + b);
  }

  auto gaussian = [&](Eigen::Index rows, Eigen::Index cols, double scale) {
    Eigen::MatrixXd out(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index r = 0; r < rows; ++r) out(r, c) = scale * normal(rng);
    return out;
  };
  m.shape_basis = gaussian(3 * d.n_vertices, d.n_shape, opt.shape_scale);
  m.expr_basis = Eigen::MatrixXd::Zero(3 * d.n_vertices, d.n_expr);
  for (int v = 0; v < d.n_vertices; ++v) {
    const int j = owner[v];
    if (j == part.jaw[0] || j == part.left_eye[0] || j == part.right_eye[0])
      m.expr_basis.middleRows(3 * v, 3) = gaussian(3, d.n_expr, opt.expr_scale);
  }
  const double body_scale = opt.body_pose_scale / std::sqrt(std::max(1, d.n_body_latent));
  const double hand_scale = opt.hand_pose_scale / std::sqrt(std::max(1, d.n_hand_latent));
  m.body_pose_basis = gaussian(3 * opt.n_body, d.n_body_latent, body_scale);
  m.lhand_pose_basis = gaussian(3 * opt.n_hand_joints, d.n_hand_latent, hand_scale);
  m.rhand_pose_basis = gaussian(3 * opt.n_hand_joints, d.n_hand_latent, hand_scale);

  m.landmarks = {part.root[0], part.body[1], part.body[2]};
  m.finalize();
  return m;
}

// Random parameters in front of the default camera: latents ~ N(0, latent_std^2), small
// global/jaw/eye rotations, root near (0, 0, depth).
inline Params sample_scene_params(const ModelDims& d, std::mt19937_64& rng, double latent_std = 0.5,
                                  double depth = 3.0) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Params p = Params::zeros(d);
  auto fill = [&](Eigen::Ref<Eigen::VectorXd> v, double s) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = s * normal(rng);
  };
  fill(p.shape, latent_std);
  fill(p.global_orient, 0.1);
  fill(p.lhand_latent, latent_std);
  fill(p.rhand_latent, latent_std);
  fill(p.jaw, 0.1);
  fill(p.leye, 0.1);
  fill(p.reye, 0.1);
  fill(p.expression, latent_std);
  fill(p.body_latent, latent_std);
  p.translation = Eigen::Vector3d(0.1 * normal(rng), 0.1 * normal(rng), depth + 0.2 * normal(rng));
  return p;
}

}  // namespace signkit
