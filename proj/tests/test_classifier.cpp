#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "signkit/classifier.hpp"

using namespace signkit;

namespace {

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

SequenceSample random_sample(int t, int d, int label, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  SequenceSample s;
  s.features = FeatureMatrix(t, d);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j) s.features(i, j) = n(rng);
  s.label = label;
  return s;
}

ClassifierModel small_model(std::uint64_t seed, int d = 5, int h = 4, int c = 3) {
  ClassifierConfig cfg;
  cfg.input_dim = d;
  cfg.hidden = h;
  cfg.n_classes = c;
  cfg.seed = seed;
  return ClassifierModel::initialize(cfg);
}

// Scalar reference of one LSTM step, gate by gate.
void scalar_cell(const std::vector<double>& x, const std::vector<double>& h, const std::vector<double>& c,
                 const LstmWeights& w, std::vector<double>& h_out, std::vector<double>& c_out) {
  const std::size_t n = h.size();
  h_out.assign(n, 0.0);
  c_out.assign(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    double z[4];
    for (int gate = 0; gate < 4; ++gate) {
      const std::size_t row = gate * n + k;
      double acc = w.b[row];
      for (std::size_t j = 0; j < x.size(); ++j) acc += w.w(row, j) * x[j];
      for (std::size_t j = 0; j < n; ++j) acc += w.u(row, j) * h[j];
      z[gate] = acc;
    }
    c_out[k] = sig(z[1]) * c[k] + sig(z[0]) * std::tanh(z[2]);
    h_out[k] = sig(z[3]) * std::tanh(c_out[k]);
  }
}

}  // namespace

TEST(LstmCell, MatchesScalarOracle) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const ClassifierModel m = small_model(100 + trial, 6, 5);
    std::vector<double> x(6), h(5), c(5);
    for (auto* v : {&x, &h, &c})
      for (double& e : *v) e = n(rng);
    std::vector<double> h_ref, c_ref;
    scalar_cell(x, h, c, m.fwd, h_ref, c_ref);
    const CellOutput out = lstm_cell(Eigen::Map<Eigen::VectorXd>(x.data(), 6), Eigen::Map<Eigen::VectorXd>(h.data(), 5),
                                     Eigen::Map<Eigen::VectorXd>(c.data(), 5), m.fwd);
    for (int k = 0; k < 5; ++k) {
      EXPECT_NEAR(out.h[k], h_ref[k], 1e-12);
      EXPECT_NEAR(out.c[k], c_ref[k], 1e-12);
    }
  }
}

TEST(LstmCell, SaturatedForgetGateCarriesMemory) {
  LstmWeights w = LstmWeights::zeros(2, 3);
  w.b.segment(0, 3).setConstant(-50.0);  // input gate closed
  w.b.segment(3, 3).setConstant(50.0);   // forget gate open
  const Eigen::Vector2d x(0.3, -0.7);
  const Eigen::Vector3d h(0.1, 0.2, 0.3), c(0.5, -1.5, 2.0);
  const CellOutput out = lstm_cell(x, h, c, w);
  EXPECT_LT((out.c - c).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BiLstm, EncodeMatchesManualUnroll) {
  std::mt19937_64 rng(3);
  const ClassifierModel m = small_model(11);
  const SequenceSample s = random_sample(7, 5, 0, rng);
  Eigen::VectorXd hf = Eigen::VectorXd::Zero(4), cf = hf, hb = hf, cb = hf;
  for (int t = 0; t < 7; ++t) {
    const CellOutput o = lstm_cell(s.features.row(t).transpose(), hf, cf, m.fwd);
    hf = o.h;
    cf = o.c;
  }
  for (int t = 6; t >= 0; --t) {
    const CellOutput o = lstm_cell(s.features.row(t).transpose(), hb, cb, m.bwd);
    hb = o.h;
    cb = o.c;
  }
  const Eigen::VectorXd rep = bilstm_encode(s.features, m);
  EXPECT_LT((rep.head(4) - hf).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((rep.tail(4) - hb).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(BiLstm, MirroredWeightsOnPalindromeGiveEqualHalves) {
  std::mt19937_64 rng(5);
  ClassifierModel m = small_model(12);
  m.bwd = m.fwd;
  SequenceSample s = random_sample(9, 5, 0, rng);
  for (int t = 0; t < 4; ++t) s.features.row(8 - t) = s.features.row(t);
  const Eigen::VectorXd rep = bilstm_encode(s.features, m);
  EXPECT_LT((rep.head(4) - rep.tail(4)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(BiLstm, RejectsWrongWidthAndEmpty) {
  const ClassifierModel m = small_model(1);
  EXPECT_THROW(bilstm_encode(FeatureMatrix(3, 4), m), Error);
  EXPECT_THROW(bilstm_encode(FeatureMatrix(0, 5), m), Error);
}

TEST(Softmax, SumsToOneAndIsShiftInvariant) {
  const Eigen::Vector3d l(1000.0, 999.0, -5.0);
  const Eigen::VectorXd p = softmax(l);
  EXPECT_NEAR(p.sum(), 1.0, 1e-15);
  EXPECT_LT((softmax((l.array() - 1000.0).matrix()) - p).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Classifier, ArgmaxTiesPickLowestIndex) {
  EXPECT_EQ(argmax(Eigen::Vector4d(0.2, 0.4, 0.4, 0.0)), 1);
  EXPECT_EQ(argmax(Eigen::Vector3d::Constant(1.0 / 3.0)), 0);
}

TEST(Classifier, UniformOutputLossIsLogC) {
  std::mt19937_64 rng(9);
  for (int c : {2, 10, 64}) {
    ClassifierModel m = small_model(2, 5, 4, c);
    m.dense_w.setZero();
    m.dense_b.setZero();
    for (int label = 0; label < c; label += 7) {
      const double loss = loss_and_grad(m, random_sample(6, 5, label, rng));
      EXPECT_NEAR(loss, std::log(static_cast<double>(c)), 1e-9);
    }
  }
}

TEST(Classifier, UniformOutputAccuracyIsOneOverC) {
  std::mt19937_64 rng(10);
  ClassifierModel m = small_model(2, 5, 4, 4);
  m.dense_w.setZero();
  m.dense_b.setZero();
  std::vector<SequenceSample> split;
  for (int k = 0; k < 4; ++k)
    for (int r = 0; r < 3; ++r) split.push_back(random_sample(5, 5, k, rng));
  const EvalResult e = evaluate(m, split);
  EXPECT_DOUBLE_EQ(e.accuracy, 0.25);
  EXPECT_EQ(e.confusion[3][0], 3);
}

class ClassifierGradient : public ::testing::TestWithParam<int> {};

TEST_P(ClassifierGradient, MatchesCentralDifferences) {
  const int pair = GetParam();
  const int lengths[] = {1, 10, 50};
  const int t = lengths[pair % 3];
  std::mt19937_64 rng(500 + pair);
  const ClassifierModel m = small_model(900 + pair, 5, 4, 3);
  const SequenceSample s = random_sample(t, 5, pair % 3, rng);
  ClassifierModel g;
  loss_and_grad(m, s, &g);
  const Eigen::VectorXd analytic = g.flatten();
  const Eigen::VectorXd w0 = m.flatten();
  const double h = 1e-5;
  double worst = 0.0;
  ClassifierModel probe = m;
  for (Eigen::Index i = 0; i < w0.size(); ++i) {
    Eigen::VectorXd w = w0;
    w[i] += h;
    probe.unflatten(w);
    const double fp = loss_and_grad(probe, s);
    w[i] -= 2.0 * h;
    probe.unflatten(w);
    const double fm = loss_and_grad(probe, s);
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  EXPECT_LE(worst, 1e-4) << "T=" << t;
}

INSTANTIATE_TEST_SUITE_P(TwentyPairs, ClassifierGradient, ::testing::Range(0, 20));

TEST(TrainConfig, DecayScheduleIsExact) {
  const TrainConfig c;
  EXPECT_EQ(1.0 - c.decay_rate, 0.9);
  for (int e = 0; e < 200; ++e) EXPECT_EQ(c.learning_rate(e), 1e-4 * std::pow(0.9, e)) << e;
}

TEST(TrainConfig, PlateauMultiplierComposesWithFloor) {
  const TrainConfig c;
  EXPECT_DOUBLE_EQ(c.learning_rate(2, 0.1), 1e-4 * 0.81 * 0.1);
  EXPECT_EQ(c.learning_rate(2, 1e-6), 1e-7);
}

TEST(TrainConfig, JsonRoundTripAndSchema) {
  TrainConfig c;
  c.lr0 = 0.03;
  c.seed = 77;
  const TrainConfig back = train_config_from_json(train_config_to_json(c));
  EXPECT_EQ(back.lr0, 0.03);
  EXPECT_EQ(back.seed, 77u);
  auto j = train_config_to_json(c);
  j["schema"] = "other";
  EXPECT_THROW(train_config_from_json(j), Error);
}

namespace {

// Class 0 trends up in feature 0, class 1 trends down.
std::vector<SequenceSample> separable_set(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.1);
  std::vector<SequenceSample> out;
  for (int i = 0; i < n; ++i) {
    SequenceSample s;
    s.label = i % 2;
    s.features = FeatureMatrix(12, 3);
    for (int t = 0; t < 12; ++t) {
      const double ramp = (s.label ? -1.0 : 1.0) * (t / 11.0 - 0.5) * 2.0;
      s.features(t, 0) = ramp + noise(rng);
      s.features(t, 1) = noise(rng);
      s.features(t, 2) = noise(rng);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST(Train, SeparableTwoClassReachesPerfectDevAccuracy) {
  const auto tr = separable_set(40, 1), dev = separable_set(20, 2);
  const ClassifierModel init = small_model(3, 3, 8, 2);
  TrainConfig cfg;
  cfg.lr0 = 0.05;
  cfg.max_epochs = 30;
  cfg.seed = 4;
  const TrainOutcome out = train(init, tr, dev, cfg);
  EXPECT_DOUBLE_EQ(evaluate(out.model, dev).accuracy, 1.0);
  EXPECT_LE(out.history.epochs.size(), 30u);
}

TEST(Train, ReturnsBestDevLossWeightsAndIsDeterministic) {
  const auto tr = separable_set(20, 5), dev = separable_set(10, 6);
  const ClassifierModel init = small_model(8, 3, 4, 2);
  TrainConfig cfg;
  cfg.lr0 = 0.05;
  cfg.max_epochs = 12;
  cfg.seed = 9;
  const TrainOutcome a = train(init, tr, dev, cfg);
  const TrainOutcome b = train(init, tr, dev, cfg);
  EXPECT_EQ(a.model.flatten(), b.model.flatten());
  EXPECT_EQ(a.history.to_csv(), b.history.to_csv());
  EXPECT_NEAR(evaluate(a.model, dev).mean_loss, a.history.best_dev_loss, 1e-12);
  for (const auto& e : a.history.epochs) EXPECT_GE(e.dev_loss, a.history.best_dev_loss);
}

TEST(Train, PlateauAndEarlyStopEvents) {
  // Updates far below double resolution keep the dev loss flat after epoch 0.
  const auto tr = separable_set(4, 5), dev = separable_set(4, 6);
  ClassifierModel init = small_model(8, 3, 4, 2);
  TrainConfig cfg;
  cfg.lr0 = 1e-300;
  cfg.decay_rate = 0.0;
  cfg.lr_floor = 0.0;
  cfg.max_epochs = 20;
  const TrainOutcome out = train(init, tr, dev, cfg);
  ASSERT_EQ(out.history.epochs.size(), 6u);
  EXPECT_EQ(out.history.epochs[3].event, "lr_reduced");
  EXPECT_EQ(out.history.epochs[5].event, "early_stop");
  EXPECT_DOUBLE_EQ(out.history.epochs[4].lr, 1e-301);
  EXPECT_EQ(out.history.best_epoch, 0);
  EXPECT_EQ(out.history.to_csv().substr(0, 42), "epoch,train_loss,dev_loss,dev_acc,lr,event");
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const ClassifierModel m = small_model(21, 5, 4, 3);
  CheckpointMeta meta;
  meta.epoch = 7;
  meta.dev_loss = 0.125;
  meta.layout = "smplx";
  meta.mask = "no_face";
  Scaler sc;
  sc.mean = Eigen::VectorXd::LinSpaced(5, 0.0, 1.0);
  sc.std = Eigen::VectorXd::Constant(5, 2.0);
  meta.scaler = sc;
  const auto path = std::filesystem::temp_directory_path() / "signkit_ckpt_test.bin";
  save_checkpoint(path, m, meta);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.model.flatten(), m.flatten());
  EXPECT_EQ(back.model.config.hidden, 4);
  EXPECT_EQ(back.meta.epoch, 7);
  EXPECT_EQ(back.meta.dev_loss, 0.125);
  EXPECT_EQ(back.meta.mask, "no_face");
  ASSERT_TRUE(back.meta.scaler.has_value());
  EXPECT_EQ(back.meta.scaler->mean, sc.mean);
  std::filesystem::remove(path);
}

TEST(Checkpoint, BadMagicAndTruncation) {
  EXPECT_THROW(deserialize_checkpoint("NOTACKPT00000000"), Error);
  const std::string ok = serialize_checkpoint(small_model(1), {});
  EXPECT_THROW(deserialize_checkpoint(ok.substr(0, ok.size() - 8)), Error);
}

TEST(Classifier, NonFiniteInputIsDiagnosed) {
  std::mt19937_64 rng(1);
  const ClassifierModel m = small_model(1);
  SequenceSample s = random_sample(4, 5, 0, rng);
  s.features(2, 1) = std::nan("");
  try {
    loss_and_grad(m, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFinite);
    EXPECT_NE(std::string(e.what()).find("t=2"), std::string::npos);
  }
}
