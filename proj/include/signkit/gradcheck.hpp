#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "signkit/classifier.hpp"
#include "signkit/fitting.hpp"
#include "signkit/toy_model.hpp"

namespace signkit::gradcheck {

struct FitPoint {
  Eigen::VectorXd x;
  Detections2D det;
  FitStage weights;
};

enum class Regime {
  Outliers,  // 20 px noise with 20% of detections off by ~200 px; objective ~1e4
  NearFit,   // 0.5 px noise; objective ~10, resolves small gradient entries
};

// Random configuration with noisy detections, random confidences and positive stage
// weights. Jaw/eye angles are spread wide enough to cross their limits.
inline FitPoint random_fit_point(const BodyModel& m, const Camera& cam, std::uint64_t seed,
                                 Regime regime = Regime::Outliers) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Params p = sample_scene_params(m.dims, rng);
  for (int k = 0; k < 3; ++k) {
    p.jaw[k] = 0.6 * normal(rng);
    p.leye[k] = 0.5 * normal(rng);
    p.reye[k] = 0.5 * normal(rng);
  }
  FitPoint g;
  g.x = pack_params(m.dims, p);
  g.det = joint_detections(cam, forward(m, p).joints_posed);
  for (Eigen::Index i = 0; i < g.det.points.rows(); ++i) {
    const double s = regime == Regime::NearFit ? 0.5 : (unit(rng) < 0.2 ? 200.0 : 20.0);
    g.det.points(i, 0) += s * normal(rng);
    g.det.points(i, 1) += s * normal(rng);
    g.det.confidence[i] = unit(rng);
  }
  g.weights.weight_data = 0.1 + unit(rng);
  g.weights.weight_pose_prior = 0.1 + unit(rng);
  g.weights.weight_shape_prior = 0.1 + unit(rng);
  g.weights.weight_expr_prior = 0.1 + unit(rng);
  g.weights.weight_limit = 0.1 + 10.0 * unit(rng);
  return g;
}

// Denominator floors sit above the central-difference round-off (~eps |f| / h).
inline double floor_for(Regime regime) { return regime == Regime::NearFit ? 1e-5 : 1e-2; }

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Max over coordinates of |a - n| / max(|a|, |n|, floor) against central differences.
inline double fit_max_relative_error(const BodyModel& m, const Camera& cam, const FitPoint& g,
                                     const FitSchedule& schedule, double floor, double h = 1e-6) {
  Eigen::VectorXd analytic;
  objective(m, cam, g.x, g.det, g.weights, schedule, &analytic);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < g.x.size(); ++i) {
    Eigen::VectorXd xp = g.x, xm = g.x;
    xp[i] += h;
    xm[i] -= h;
    const double fp = objective(m, cam, xp, g.det, g.weights, schedule).total;
    const double fm = objective(m, cam, xm, g.det, g.weights, schedule).total;
    worst = std::max(worst, relative_error(analytic[i], (fp - fm) / (2.0 * h), floor));
  }
  return worst;
}

inline constexpr double kClassifierFloor = 1e-6;

// Small random BiLSTM and a Gaussian sequence of length 'frames'.
inline double classifier_max_relative_error(std::uint64_t seed, int frames, double h = 1e-5) {
  ClassifierConfig cfg;
  cfg.input_dim = 5;
  cfg.hidden = 4;
  cfg.n_classes = 3;
  cfg.seed = seed;
  const ClassifierModel m = ClassifierModel::initialize(cfg);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> n(0.0, 1.0);
  SequenceSample s;
  s.features = FeatureMatrix(frames, cfg.input_dim);
  for (Eigen::Index i = 0; i < s.features.size(); ++i) s.features.data()[i] = n(rng);
  s.label = static_cast<int>(seed % 3);

  ClassifierModel g;
  loss_and_grad(m, s, &g);
  const Eigen::VectorXd analytic = g.flatten();
  const Eigen::VectorXd w0 = m.flatten();
  ClassifierModel probe = m;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < w0.size(); ++i) {
    Eigen::VectorXd w = w0;
    w[i] += h;
    probe.unflatten(w);
    const double fp = loss_and_grad(probe, s);
    w[i] -= 2.0 * h;
    probe.unflatten(w);
    const double fm = loss_and_grad(probe, s);
    worst = std::max(worst, relative_error(analytic[i], (fp - fm) / (2.0 * h), kClassifierFloor));
  }
  return worst;
}

struct Summary {
  double fit_outliers = 0.0;
  double fit_near_fit = 0.0;
  double classifier = 0.0;
  int fit_points = 0;
  int classifier_pairs = 0;

  double worst() const { return std::max({fit_outliers, fit_near_fit, classifier}); }
};

// Every finite-difference suite on the 9-joint toy model and small BiLSTMs; T cycles 1, 10, 50.
inline Summary run_all(std::uint64_t seed, int fit_points = 10, int classifier_pairs = 6) {
  const BodyModel model = make_toy_model(ToyModelOptions{.seed = seed});
  const Camera cam;
  const FitSchedule schedule = FitSchedule::defaults();
  Summary s;
  s.fit_points = fit_points;
  s.classifier_pairs = classifier_pairs;
  for (int i = 0; i < fit_points; ++i) {
    const std::uint64_t ps = seed * 1000 + static_cast<std::uint64_t>(i);
    s.fit_outliers = std::max(s.fit_outliers, fit_max_relative_error(model, cam, random_fit_point(model, cam, ps),
                                                                     schedule, floor_for(Regime::Outliers)));
    s.fit_near_fit = std::max(
        s.fit_near_fit, fit_max_relative_error(model, cam, random_fit_point(model, cam, ps, Regime::NearFit), schedule,
                                               floor_for(Regime::NearFit)));
  }
  const int lengths[] = {1, 10, 50};
  for (int i = 0; i < classifier_pairs; ++i)
    s.classifier = std::max(s.classifier, classifier_max_relative_error(seed * 1000 + static_cast<std::uint64_t>(i),
                                                                        lengths[i % 3]));
  return s;
}

}  // namespace signkit::gradcheck
