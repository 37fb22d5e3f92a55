#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "fit_fixtures.hpp"
#include "signkit/fitting.hpp"
#include "signkit/toy_model.hpp"

using namespace signkit;

namespace {

const BodyModel& toy() {
  static const BodyModel m = make_toy_model();
  return m;
}

Params front_params() {
  Params p = Params::zeros(toy().dims);
  p.translation = Eigen::Vector3d(0.0, 0.0, 1.5);
  return p;
}

}  // namespace

TEST(Project, OpticalAxisAndOffset) {
  Camera cam;
  RowMatrixX3d pts(2, 3);
  pts << 0.0, 0.0, 1.0, 0.1, 0.0, 1.0;
  const RowMatrixX2d uv = project(cam, pts);
  EXPECT_DOUBLE_EQ(uv(0, 0), 500.0);
  EXPECT_DOUBLE_EQ(uv(0, 1), 500.0);
  EXPECT_DOUBLE_EQ(uv(1, 0), 600.0);
  EXPECT_DOUBLE_EQ(uv(1, 1), 500.0);
}

TEST(Project, BehindCameraReportsIndex) {
  Camera cam;
  RowMatrixX3d pts(3, 3);
  pts << 0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 0.0, 0.0, -1.0;
  try {
    project(cam, pts);
    FAIL() << "expected behind-camera error";
  } catch (const BehindCameraError& e) {
    EXPECT_EQ(e.index(), 2u);
    EXPECT_EQ(e.code(), ErrorCode::BehindCamera);
  }
}

TEST(Project, Extrinsics) {
  Camera cam;
  cam.rotation = Eigen::AngleAxisd(M_PI, Eigen::Vector3d::UnitY()).toRotationMatrix();
  cam.translation = Eigen::Vector3d(0.0, 0.0, 2.0);
  RowMatrixX3d pts(1, 3);
  pts << 0.1, 0.0, 1.0;  // camera frame (-0.1, 0, 1)
  const RowMatrixX2d uv = project(cam, pts);
  EXPECT_NEAR(uv(0, 0), 400.0, 1e-9);
  EXPECT_NEAR(uv(0, 1), 500.0, 1e-9);
}

TEST(RobustRho, ClosedForms) {
  const double sigma = 100.0;
  EXPECT_EQ(robust_rho(0.0, sigma), 0.0);
  EXPECT_DOUBLE_EQ(robust_rho(sigma, sigma), sigma * sigma / 2.0);
  const double far = robust_rho(1e6 * sigma, sigma);
  EXPECT_LT(far, sigma * sigma);
  EXPECT_NEAR(far, sigma * sigma, 1e-6 * sigma * sigma);
  double prev = 0.0;
  for (double e = 1.0; e < 1e4; e *= 1.5) {
    const double r = robust_rho(e, sigma);
    EXPECT_GT(r, prev);
    EXPECT_LT(r, sigma * sigma);
    prev = r;
  }
  EXPECT_THROW(robust_rho(1.0, 0.0), Error);
}

TEST(DataTerm, SelfConsistentDetectionsGiveZero) {
  Camera cam;
  std::mt19937_64 rng(3);
  const Params p = sample_scene_params(toy().dims, rng);
  const Detections2D det = joint_detections(cam, forward(toy(), p).joints_posed);
  EXPECT_NEAR(data_term(toy(), cam, p, det, 100.0), 0.0, 1e-18);
}

TEST(DataTerm, ZeroConfidenceAnnihilates) {
  Camera cam;
  std::mt19937_64 rng(4);
  const Params p = sample_scene_params(toy().dims, rng);
  Detections2D det = joint_detections(cam, forward(toy(), front_params()).joints_posed);
  det.confidence.setZero();
  EXPECT_EQ(data_term(toy(), cam, p, det, 100.0), 0.0);
}

TEST(DataTerm, SingleTermScalarOracle) {
  Camera cam;
  const Params p = front_params();
  const RowMatrixX3d joints = forward(toy(), p).joints_posed;
  Detections2D det = joint_detections(cam, joints);
  det.confidence.setZero();
  const int k = 3;
  const double dx = 37.0, dy = -12.5, omega = 0.7, sigma = 50.0;
  det.points(k, 0) += dx;
  det.points(k, 1) += dy;
  det.confidence[k] = omega;
  const double e2 = dx * dx + dy * dy;
  const double expected = omega * sigma * sigma * e2 / (e2 + sigma * sigma);
  EXPECT_NEAR(data_term(toy(), cam, p, det, sigma), expected, 1e-9 * expected);
}

TEST(DataTerm, UnmappedDetectionsIgnoredAndPermutable) {
  Camera cam;
  std::mt19937_64 rng(5);
  const Params p = sample_scene_params(toy().dims, rng);
  Detections2D det = joint_detections(cam, forward(toy(), front_params()).joints_posed);
  const double base = data_term(toy(), cam, p, det, 100.0);

  Detections2D extra = det;
  const Eigen::Index n = det.points.rows();
  extra.points.conservativeResize(n + 3, 2);
  extra.confidence.conservativeResize(n + 3);
  for (int k = 0; k < 3; ++k) {
    extra.points.row(n + k) << 10.0 * k, 900.0 - k;
    extra.confidence[n + k] = 0.3 * (k + 1);
    extra.keypoint_to_joint.push_back(-1);
  }
  const double with_extra = data_term(toy(), cam, p, extra, 100.0);
  EXPECT_EQ(with_extra, base);
  extra.points.row(n).swap(extra.points.row(n + 2));
  std::swap(extra.confidence[n], extra.confidence[n + 2]);
  EXPECT_EQ(data_term(toy(), cam, p, extra, 100.0), base);
}

TEST(DataTerm, ConfidenceScalingIsLinear) {
  Camera cam;
  std::mt19937_64 rng(6);
  const Params p = sample_scene_params(toy().dims, rng);
  Detections2D det = joint_detections(cam, forward(toy(), front_params()).joints_posed);
  for (Eigen::Index i = 0; i < det.confidence.size(); ++i) det.confidence[i] = 0.1 + 0.05 * static_cast<double>(i);
  const double base = data_term(toy(), cam, p, det, 100.0);
  Detections2D scaled = det;
  scaled.confidence *= 0.5;
  EXPECT_NEAR(data_term(toy(), cam, p, scaled, 100.0), 0.5 * base, 1e-12 * base);
}

TEST(DataTerm, PropagatesBehindCamera) {
  Camera cam;
  Params p = Params::zeros(toy().dims);
  p.translation = Eigen::Vector3d(0.0, 0.0, -2.0);
  const Detections2D det = joint_detections(cam, forward(toy(), front_params()).joints_posed);
  EXPECT_THROW(data_term(toy(), cam, p, det, 100.0), BehindCameraError);
}

TEST(Objective, AllWeightsZero) {
  Camera cam;
  std::mt19937_64 rng(7);
  const Params p = sample_scene_params(toy().dims, rng);
  const Detections2D det = joint_detections(cam, forward(toy(), front_params()).joints_posed);
  FitStage zero{10, 0.0, 0.0, 0.0, 0.0, 0.0};
  Eigen::VectorXd g;
  const auto t = objective(toy(), cam, pack_params(toy().dims, p), det, zero, FitSchedule::defaults(), &g);
  EXPECT_EQ(t.total, 0.0);
  EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Objective, PriorOnlyMinimumAtZero) {
  Camera cam;
  const Detections2D det = joint_detections(cam, forward(toy(), front_params()).joints_posed);
  FitStage priors{10, 0.0, 1.0, 2.0, 3.0, 4.0};
  Eigen::VectorXd g;
  const auto t = objective(toy(), cam, pack_params(toy().dims, front_params()), det, priors, FitSchedule::defaults(), &g);
  EXPECT_EQ(t.total, 0.0);
  EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Objective, LimitPenaltyZeroInsideAndGrowsOutside) {
  Camera cam;
  const Detections2D det = joint_detections(cam, forward(toy(), front_params()).joints_posed);
  const FitSchedule s = FitSchedule::defaults();
  FitStage limit_only{10, 0.0, 0.0, 0.0, 0.0, 1.0};
  Params p = front_params();
  p.jaw.x() = 0.9 * s.jaw_limit;
  p.leye.y() = -0.9 * s.eye_limit;
  EXPECT_EQ(objective(toy(), cam, pack_params(toy().dims, p), det, limit_only, s).total, 0.0);
  p.jaw.x() = s.jaw_limit + 0.2;
  const double d = 0.2;
  EXPECT_NEAR(objective(toy(), cam, pack_params(toy().dims, p), det, limit_only, s).limit, std::exp(d) - 1.0 - d, 1e-12);
}

class ObjectiveGradient : public ::testing::TestWithParam<fixtures::Regime> {};

TEST_P(ObjectiveGradient, MatchesCentralDifferences) {
  Camera cam;
  const FitSchedule s = FitSchedule::defaults();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto point = fixtures::random_grad_point(toy(), cam, seed, GetParam());
    worst = std::max(worst, fixtures::max_relative_error(toy(), cam, point, s, fixtures::floor_for(GetParam())));
  }
  EXPECT_LE(worst, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Regimes, ObjectiveGradient,
                         ::testing::Values(fixtures::Regime::Outliers, fixtures::Regime::NearFit));

TEST(Objective, GradientOnFullSkeleton) {
  const BodyModel m = make_toy_model(ToyModelOptions::full_skeleton());
  Camera cam;
  const FitSchedule s = FitSchedule::defaults();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto point = fixtures::random_grad_point(m, cam, seed, fixtures::Regime::NearFit);
    EXPECT_LE(fixtures::max_relative_error(m, cam, point, s, 1e-5), 1e-4) << "seed " << seed;
  }
}

TEST(Objective, GaussNewtonMatrixIsSymmetricPsd) {
  Camera cam;
  const auto point = fixtures::random_grad_point(toy(), cam, 3);
  const Eigen::MatrixXd h = gauss_newton_matrix(toy(), cam, point.x, point.det, point.weights, FitSchedule::defaults());
  EXPECT_LE((h - h.transpose()).cwiseAbs().maxCoeff(), 1e-9 * h.cwiseAbs().maxCoeff());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h);
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-9 * eig.eigenvalues().maxCoeff());
}

TEST(FitFrame, AllZeroConfidenceIsDegenerate) {
  Camera cam;
  Detections2D det = joint_detections(cam, forward(toy(), front_params()).joints_posed);
  det.confidence.setZero();
  std::mt19937_64 rng(8);
  const Params init = sample_scene_params(toy().dims, rng);
  const FitResult r = fit_frame(toy(), cam, det, FitSchedule::defaults(), init);
  EXPECT_FALSE(r.converged);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(pack_params(toy().dims, r.params), pack_params(toy().dims, init));
}

TEST(FitFrame, RecoversSyntheticParams) {
  const BodyModel m = make_toy_model(ToyModelOptions::full_skeleton());
  Camera cam;
  const FitSchedule s = FitSchedule::defaults();
  int passed = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) passed += fixtures::recovery_trial(m, cam, s, 1000 + seed).passed();
  EXPECT_GE(passed, 19);
}

TEST(FitFrame, PlainGradientDirectionAlsoDescends) {
  Camera cam;
  const auto frames = fixtures::synthetic_sequence(toy(), cam, 1, 2.0, 13);
  FitSchedule s = FitSchedule::defaults();
  s.step.direction = StepDirection::Gradient;
  const FitResult r = fit_frame(toy(), cam, frames[0], s, Params::zeros(toy().dims));
  for (const auto& trace : r.stage_traces)
    for (std::size_t k = 1; k < trace.size(); ++k) EXPECT_LE(trace[k], trace[k - 1]);
  EXPECT_LT(r.stage_traces.back().back(), r.stage_traces.front().front());
}

TEST(FitFrame, FinalObjectiveNonNegativeWithTerms) {
  Camera cam;
  const auto frames = fixtures::synthetic_sequence(toy(), cam, 1, 2.0, 11);
  const FitResult r = fit_frame(toy(), cam, frames[0], FitSchedule::defaults(), Params::zeros(toy().dims));
  EXPECT_GE(r.final_objective, 0.0);
  EXPECT_EQ(r.per_term_values.size(), 5u);
  EXPECT_EQ(r.stage_traces.size(), 3u);
  EXPECT_GT(r.iterations_used, 0);
}

TEST(FitFrame, LowConfidenceLandmarksFallBackToNeutralDepth) {
  Camera cam;
  const auto frames = fixtures::synthetic_sequence(toy(), cam, 1, 0.0, 12);
  Detections2D det = frames[0];
  det.confidence[toy().landmarks.left_shoulder] = 0.1;
  FitSchedule s = FitSchedule::defaults();
  for (auto& st : s.stages) st.iterations = 0;
  const FitResult r = fit_frame(toy(), cam, det, s, Params::zeros(toy().dims));
  const RowMatrixX3d rest = rest_joints(toy(), r.params.shape, r.params.expression);
  const Eigen::Vector3d root = rest.row(0).transpose() + r.params.translation;
  EXPECT_NEAR(root.z(), s.fallback_depth, 1e-12);
  EXPECT_NEAR(root.x(), 0.0, 1e-12);
}

TEST(FitSequence, StageObjectivesNeverIncrease) {
  Camera cam;
  const auto frames = fixtures::synthetic_sequence(toy(), cam, 20, 2.0, 21);
  const auto results = fit_sequence(toy(), cam, frames, FitSchedule::defaults());
  ASSERT_EQ(results.size(), frames.size());
  std::size_t steps = 0;
  for (const auto& r : results)
    for (const auto& trace : r.stage_traces)
      for (std::size_t k = 1; k < trace.size(); ++k, ++steps) EXPECT_LE(trace[k], trace[k - 1]);
  EXPECT_GT(steps, 0u);
}

TEST(FitSequence, SingletonMatchesFitFrame) {
  Camera cam;
  const auto frames = fixtures::synthetic_sequence(toy(), cam, 1, 2.0, 22);
  const auto seq = fit_sequence(toy(), cam, frames, FitSchedule::defaults());
  const auto one = fit_frame(toy(), cam, frames[0], FitSchedule::defaults(), Params::zeros(toy().dims));
  ASSERT_EQ(seq.size(), 1u);
  EXPECT_EQ(pack_params(toy().dims, seq[0].params), pack_params(toy().dims, one.params));
  EXPECT_EQ(seq[0].final_objective, one.final_objective);
}

TEST(FitSequence, ConstantDetectionsAreAFixedPoint) {
  Camera cam;
  const auto one = fixtures::synthetic_sequence(toy(), cam, 1, 0.0, 23);
  const std::vector<Detections2D> frames(5, one[0]);
  const auto results = fit_sequence(toy(), cam, frames, FitSchedule::defaults());
  const Eigen::VectorXd first = pack_params(toy().dims, results[0].params);
  for (std::size_t t = 1; t < results.size(); ++t)
    EXPECT_LE((pack_params(toy().dims, results[t].params) - first).cwiseAbs().maxCoeff(), 1e-6) << "frame " << t;
}

TEST(FitSequence, TracksSlowRotation) {
  Camera cam;
  const auto frames = fixtures::synthetic_sequence(toy(), cam, 15, 0.0, 24);
  const auto results = fit_sequence(toy(), cam, frames, FitSchedule::defaults());
  for (std::size_t t = 0; t < frames.size(); ++t)
    EXPECT_LE(mean_reprojection_error(toy(), cam, results[t].params, frames[t]), 1.0) << "frame " << t;
}

TEST(FitSequence, DegenerateFrameFlaggedAndSequenceContinues) {
  Camera cam;
  auto frames = fixtures::synthetic_sequence(toy(), cam, 3, 0.0, 25);
  frames[1].confidence.setZero();
  const auto results = fit_sequence(toy(), cam, frames, FitSchedule::defaults());
  ASSERT_EQ(results.size(), 3u);
  EXPECT_FALSE(results[0].degenerate);
  EXPECT_TRUE(results[1].degenerate);
  EXPECT_FALSE(results[2].degenerate);
  EXPECT_EQ(pack_params(toy().dims, results[1].params), pack_params(toy().dims, results[0].params));
}

TEST(FitIo, ScheduleJsonRoundTrip) {
  FitSchedule s = FitSchedule::defaults();
  s.rho_sigma = 42.0;
  s.stages[1].weight_limit = 7.0;
  s.step.max_line_search = 11;
  const FitSchedule back = schedule_from_json(schedule_to_json(s));
  EXPECT_EQ(schedule_to_json(back), schedule_to_json(s));
}

TEST(FitIo, ScheduleRejectsBadInput) {
  nlohmann::json j = schedule_to_json(FitSchedule::defaults());
  j["schema"] = "other_v1";
  EXPECT_THROW(schedule_from_json(j), Error);
  j = schedule_to_json(FitSchedule::defaults());
  j["stages"] = nlohmann::json::array();
  EXPECT_THROW(schedule_from_json(j), Error);
  j = schedule_to_json(FitSchedule::defaults());
  j["rho_sigma"] = -1.0;
  EXPECT_THROW(schedule_from_json(j), Error);
  j = schedule_to_json(FitSchedule::defaults());
  j["stages"][0]["weight_data"] = -1.0;
  EXPECT_THROW(schedule_from_json(j), Error);
}

TEST(FitIo, CameraJsonRoundTrip) {
  Camera c;
  c.fx = 800;
  c.cy = 240;
  c.rotation = Eigen::AngleAxisd(0.3, Eigen::Vector3d::UnitX()).toRotationMatrix();
  c.translation = Eigen::Vector3d(0.1, 0.2, 0.3);
  const Camera back = camera_from_json(camera_to_json(c));
  EXPECT_EQ(back.fx, c.fx);
  EXPECT_EQ(back.cy, c.cy);
  EXPECT_EQ(back.rotation, c.rotation);
  EXPECT_EQ(back.translation, c.translation);
}

TEST(FitIo, ResultJsonLineRoundTrip) {
  std::mt19937_64 rng(9);
  FitResult r;
  r.params = sample_scene_params(toy().dims, rng);
  r.final_objective = 1.25;
  r.per_term_values = {{"data", 1.0}};
  const std::string line = fit_result_to_jsonl(toy().dims, r, 4);
  const auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j.at("features").size(), 88u);
  EXPECT_EQ(j.at("frame").get<int>(), 4);
  EXPECT_EQ(pack_params(toy().dims, params_from_fit_jsonl(toy().dims, line)), pack_params(toy().dims, r.params));
}
