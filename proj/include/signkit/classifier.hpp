#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "signkit/common.hpp"
#include "signkit/features.hpp"

namespace signkit {

struct ClassifierConfig {
  int input_dim = 88;
  int hidden = 32;  // per direction
  int n_classes = 10;
  std::uint64_t seed = 0;

  void check() const {
    require(input_dim >= 1 && hidden >= 1 && n_classes >= 1, ErrorCode::InvalidArgument,
            "classifier dims must be positive");
  }
};

// Gate rows are stacked in the order i, f, g, o.
struct LstmWeights {
  Eigen::MatrixXd w;  // 4H x D
  Eigen::MatrixXd u;  // 4H x H
  Eigen::VectorXd b;  // 4H

  static LstmWeights zeros(int d, int h) {
    return {Eigen::MatrixXd::Zero(4 * h, d), Eigen::MatrixXd::Zero(4 * h, h), Eigen::VectorXd::Zero(4 * h)};
  }
};

struct ClassifierModel {
  ClassifierConfig config;
  LstmWeights fwd;
  LstmWeights bwd;
  Eigen::MatrixXd dense_w;  // C x 2H
  Eigen::VectorXd dense_b;  // C

  static ClassifierModel zeros(const ClassifierConfig& c) {
    c.check();
    ClassifierModel m;
    m.config = c;
    m.fwd = LstmWeights::zeros(c.input_dim, c.hidden);
    m.bwd = LstmWeights::zeros(c.input_dim, c.hidden);
    m.dense_w = Eigen::MatrixXd::Zero(c.n_classes, 2 * c.hidden);
    m.dense_b = Eigen::VectorXd::Zero(c.n_classes);
    return m;
  }

  // Uniform in [-k, k], k = 1/sqrt(fan_in); forget-gate biases start at 1.
  static ClassifierModel initialize(const ClassifierConfig& c) {
    ClassifierModel m = zeros(c);
    std::mt19937_64 rng(c.seed);
    auto fill = [&rng](Eigen::Ref<Eigen::MatrixXd> a, double k) {
      std::uniform_real_distribution<double> u(-k, k);
      for (Eigen::Index j = 0; j < a.cols(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = u(rng);
    };
    const double k_lstm = 1.0 / std::sqrt(static_cast<double>(c.input_dim + c.hidden));
    for (LstmWeights* lw : {&m.fwd, &m.bwd}) {
      fill(lw->w, k_lstm);
      fill(lw->u, k_lstm);
      lw->b.setZero();
      lw->b.segment(c.hidden, c.hidden).setOnes();
    }
    const double k_dense = 1.0 / std::sqrt(static_cast<double>(2 * c.hidden));
    fill(m.dense_w, k_dense);
    Eigen::MatrixXd bias(c.n_classes, 1);
    fill(bias, k_dense);
    m.dense_b = bias.col(0);
    return m;
  }

  template <class F>
  void for_each_block(F&& f) {
    f(fwd.w), f(fwd.u), f(fwd.b), f(bwd.w), f(bwd.u), f(bwd.b), f(dense_w), f(dense_b);
  }
  template <class F>
  void for_each_block(F&& f) const {
    f(fwd.w), f(fwd.u), f(fwd.b), f(bwd.w), f(bwd.u), f(bwd.b), f(dense_w), f(dense_b);
  }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for_each_block([&n](const auto& a) { n += a.size(); });
    return n;
  }

  Eigen::VectorXd flatten() const {
    Eigen::VectorXd out(parameter_count());
    Eigen::Index k = 0;
    for_each_block([&](const auto& a) {
      out.segment(k, a.size()) = Eigen::Map<const Eigen::VectorXd>(a.data(), a.size());
      k += a.size();
    });
    return out;
  }

  void unflatten(const Eigen::Ref<const Eigen::VectorXd>& v) {
    require(v.size() == parameter_count(), ErrorCode::DimensionMismatch, "weight vector has wrong length");
    Eigen::Index k = 0;
    for_each_block([&](auto& a) {
      Eigen::Map<Eigen::VectorXd>(a.data(), a.size()) = v.segment(k, a.size());
      k += a.size();
    });
  }

  void axpy(double alpha, const ClassifierModel& g) {
    fwd.w += alpha * g.fwd.w;
    fwd.u += alpha * g.fwd.u;
    fwd.b += alpha * g.fwd.b;
    bwd.w += alpha * g.bwd.w;
    bwd.u += alpha * g.bwd.u;
    bwd.b += alpha * g.bwd.b;
    dense_w += alpha * g.dense_w;
    dense_b += alpha * g.dense_b;
  }
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct CellOutput {
  Eigen::VectorXd h;
  Eigen::VectorXd c;
};

inline CellOutput lstm_cell(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& h,
                            const Eigen::Ref<const Eigen::VectorXd>& c, const LstmWeights& w) {
  const Eigen::Index n = h.size();
  require(w.w.cols() == x.size() && w.u.cols() == n && w.w.rows() == 4 * n && c.size() == n,
          ErrorCode::DimensionMismatch, "lstm_cell shapes inconsistent");
  const Eigen::VectorXd z = w.w * x + w.u * h + w.b;
  CellOutput out{Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    const double i = sigmoid(z[k]), f = sigmoid(z[n + k]), g = std::tanh(z[2 * n + k]), o = sigmoid(z[3 * n + k]);
    out.c[k] = f * c[k] + i * g;
    out.h[k] = o * std::tanh(out.c[k]);
  }
  return out;
}

namespace detail {

// Per-step activations of one direction, in processing order.
struct DirectionCache {
  std::vector<Eigen::Index> frame;  // input row used at each step
  std::vector<Eigen::VectorXd> i, f, g, o, c, h;  // c/h hold the state after each step
};

inline DirectionCache run_direction(const LstmWeights& w, const FeatureMatrix& seq, bool reverse, int hidden) {
  DirectionCache cache;
  const Eigen::Index t_len = seq.rows();
  Eigen::VectorXd h = Eigen::VectorXd::Zero(hidden), c = Eigen::VectorXd::Zero(hidden);
  const Eigen::Index n = hidden;
  for (Eigen::Index s = 0; s < t_len; ++s) {
    const Eigen::Index t = reverse ? t_len - 1 - s : s;
    const Eigen::VectorXd z = w.w * seq.row(t).transpose() + w.u * h + w.b;
    Eigen::VectorXd i(n), f(n), g(n), o(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      i[k] = sigmoid(z[k]);
      f[k] = sigmoid(z[n + k]);
      g[k] = std::tanh(z[2 * n + k]);
      o[k] = sigmoid(z[3 * n + k]);
    }
    c = f.cwiseProduct(c) + i.cwiseProduct(g);
    h = o.cwiseProduct(c.array().tanh().matrix());
    if (!h.allFinite() || !c.allFinite())
      throw Error(ErrorCode::NonFinite, std::string(reverse ? "backward" : "forward") + " LSTM state at t=" +
                                            std::to_string(t));
    cache.frame.push_back(t);
    cache.i.push_back(std::move(i));
    cache.f.push_back(std::move(f));
    cache.g.push_back(std::move(g));
    cache.o.push_back(std::move(o));
    cache.c.push_back(c);
    cache.h.push_back(h);
  }
  return cache;
}

// Back-propagation through time from the gradient on the final hidden state.
inline void backprop_direction(const LstmWeights& w, const FeatureMatrix& seq, const DirectionCache& cache,
                               const Eigen::VectorXd& dh_final, LstmWeights& grad) {
  const Eigen::Index n = dh_final.size();
  Eigen::VectorXd dh = dh_final;
  Eigen::VectorXd dc = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd dz(4 * n);
  for (std::size_t s = cache.frame.size(); s-- > 0;) {
    const Eigen::VectorXd& i = cache.i[s];
    const Eigen::VectorXd& f = cache.f[s];
    const Eigen::VectorXd& g = cache.g[s];
    const Eigen::VectorXd& o = cache.o[s];
    const Eigen::VectorXd tc = cache.c[s].array().tanh();
    const bool first = s == 0;
    for (Eigen::Index k = 0; k < n; ++k) {
      const double dct = dc[k] + dh[k] * o[k] * (1.0 - tc[k] * tc[k]);
      const double c_prev = first ? 0.0 : cache.c[s - 1][k];
      dz[k] = dct * g[k] * i[k] * (1.0 - i[k]);
      dz[n + k] = dct * c_prev * f[k] * (1.0 - f[k]);
      dz[2 * n + k] = dct * i[k] * (1.0 - g[k] * g[k]);
      dz[3 * n + k] = dh[k] * tc[k] * o[k] * (1.0 - o[k]);
      dc[k] = dct * f[k];
    }
    grad.w.noalias() += dz * seq.row(cache.frame[s]);
    if (!first) grad.u.noalias() += dz * cache.h[s - 1].transpose();
    grad.b += dz;
    dh.noalias() = w.u.transpose() * dz;
  }
}

}  // namespace detail

// [forward final h (t = T-1) ; backward final h (t = 0)]
inline Eigen::VectorXd bilstm_encode(const FeatureMatrix& seq, const ClassifierModel& m) {
  require(seq.rows() >= 1, ErrorCode::EmptyInput, "cannot encode an empty sequence");
  require(seq.cols() == m.config.input_dim, ErrorCode::DimensionMismatch,
          "sequence width " + std::to_string(seq.cols()) + " vs classifier input " + std::to_string(m.config.input_dim));
  const int h = m.config.hidden;
  Eigen::VectorXd rep(2 * h);
  rep.head(h) = detail::run_direction(m.fwd, seq, false, h).h.back();
  rep.tail(h) = detail::run_direction(m.bwd, seq, true, h).h.back();
  return rep;
}

inline Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& logits) {
  const double mx = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - mx).exp();
  return e / e.sum();
}

inline Eigen::VectorXd classify(const Eigen::Ref<const Eigen::VectorXd>& rep, const ClassifierModel& m) {
  require(rep.size() == m.dense_w.cols(), ErrorCode::DimensionMismatch, "representation width mismatch");
  const Eigen::VectorXd logits = m.dense_w * rep + m.dense_b;
  require(logits.allFinite(), ErrorCode::NonFinite, "dense layer produced non-finite logits");
  return softmax(logits);
}

inline Eigen::VectorXd predict_proba(const FeatureMatrix& seq, const ClassifierModel& m) {
  return classify(bilstm_encode(seq, m), m);
}

// Lowest index wins ties.
inline int argmax(const Eigen::Ref<const Eigen::VectorXd>& p) {
  int best = 0;
  for (Eigen::Index k = 1; k < p.size(); ++k)
    if (p[k] > p[best]) best = static_cast<int>(k);
  return best;
}

// Cross-entropy -log p[label]; when 'grad' is non-null it is overwritten with dL/dweights.
inline double loss_and_grad(const ClassifierModel& m, const SequenceSample& sample, ClassifierModel* grad = nullptr) {
  require(sample.label >= 0 && sample.label < m.config.n_classes, ErrorCode::InvalidArgument,
          "label " + std::to_string(sample.label) + " outside [0, " + std::to_string(m.config.n_classes) + ")");
  require(sample.frames() >= 1, ErrorCode::EmptyInput, "cannot score an empty sequence");
  require(sample.dim() == m.config.input_dim, ErrorCode::DimensionMismatch, "sample width vs classifier input");
  const int h = m.config.hidden;
  const auto fwd = detail::run_direction(m.fwd, sample.features, false, h);
  const auto bwd = detail::run_direction(m.bwd, sample.features, true, h);
  Eigen::VectorXd rep(2 * h);
  rep << fwd.h.back(), bwd.h.back();
  const Eigen::VectorXd logits = m.dense_w * rep + m.dense_b;
  require(logits.allFinite(), ErrorCode::NonFinite, "dense layer produced non-finite logits");
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  const double loss = lse - logits[sample.label];
  require(std::isfinite(loss), ErrorCode::NonFinite, "loss is non-finite");
  if (!grad) return loss;

  *grad = ClassifierModel::zeros(m.config);
  Eigen::VectorXd dlogits = (logits.array() - lse).exp();
  dlogits[sample.label] -= 1.0;
  grad->dense_w.noalias() = dlogits * rep.transpose();
  grad->dense_b = dlogits;
  const Eigen::VectorXd drep = m.dense_w.transpose() * dlogits;
  detail::backprop_direction(m.fwd, sample.features, fwd, drep.head(h), grad->fwd);
  detail::backprop_direction(m.bwd, sample.features, bwd, drep.tail(h), grad->bwd);
  return loss;
}

// --- Training ----------------------------------------------------------------------------

struct TrainConfig {
  double lr0 = 1e-4;
  double decay_rate = 0.1;  // lr_e = lr0 * (1 - decay_rate)^e
  int plateau_patience = 3;
  double plateau_factor = 0.1;
  double lr_floor = 1e-7;
  int early_stop_patience = 5;
  int max_epochs = 50;
  double clip_norm = 0.0;  // 0 disables
  std::uint64_t seed = 0;

  void check() const {
    require(lr0 > 0.0, ErrorCode::InvalidArgument, "lr0 must be positive");
    require(decay_rate >= 0.0 && decay_rate < 1.0, ErrorCode::InvalidArgument, "decay_rate must be in [0, 1)");
    require(plateau_patience >= 1 && early_stop_patience >= 1, ErrorCode::InvalidArgument, "patiences must be >= 1");
    require(plateau_factor > 0.0 && plateau_factor <= 1.0, ErrorCode::InvalidArgument, "plateau_factor in (0, 1]");
    require(max_epochs >= 1, ErrorCode::InvalidArgument, "max_epochs must be >= 1");
    require(clip_norm >= 0.0, ErrorCode::InvalidArgument, "clip_norm must be >= 0");
  }

  // Plateau reductions compose multiplicatively with the per-epoch decay; the floor only
  // applies once a reduction has happened.
  double learning_rate(int epoch, double plateau_multiplier = 1.0) const {
    const double base = lr0 * std::pow(1.0 - decay_rate, epoch);
    if (plateau_multiplier >= 1.0) return base;
    return std::max(base * plateau_multiplier, lr_floor);
  }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"schema", kTrainConfigSchema},
          {"lr0", c.lr0},
          {"decay_rate", c.decay_rate},
          {"plateau_patience", c.plateau_patience},
          {"plateau_factor", c.plateau_factor},
          {"lr_floor", c.lr_floor},
          {"early_stop_patience", c.early_stop_patience},
          {"max_epochs", c.max_epochs},
          {"clip_norm", c.clip_norm},
          {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (j.contains("schema"))
    require(j.at("schema").get<std::string>() == kTrainConfigSchema, ErrorCode::SchemaMismatch,
            "train config schema must be '" + std::string(kTrainConfigSchema) + "'");
  TrainConfig c;
  try {
    c.lr0 = j.value("lr0", c.lr0);
    c.decay_rate = j.value("decay_rate", c.decay_rate);
    c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
    c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
    c.lr_floor = j.value("lr_floor", c.lr_floor);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("train config: ") + e.what());
  }
  c.check();
  return c;
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double dev_acc = 0.0;
  double lr = 0.0;
  std::string event;  // "", "lr_reduced", "early_stop" or both joined by ';'
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_dev_loss = std::numeric_limits<double>::infinity();

  std::string to_csv() const {
    std::string out = "epoch,train_loss,dev_loss,dev_acc,lr,event\n";
    char buf[256];
    for (const auto& e : epochs) {
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,", e.epoch, e.train_loss, e.dev_loss, e.dev_acc, e.lr);
      out += buf + e.event + "\n";
    }
    return out;
  }
};

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<std::vector<int>> confusion;  // [true][predicted]
};

inline EvalResult evaluate(const ClassifierModel& m, const std::vector<SequenceSample>& split) {
  require(!split.empty(), ErrorCode::EmptyInput, "cannot evaluate an empty split");
  const int c = m.config.n_classes;
  EvalResult r;
  r.confusion.assign(c, std::vector<int>(c, 0));
  int correct = 0;
  double loss = 0.0;
  for (const auto& s : split) {
    require(s.label >= 0 && s.label < c, ErrorCode::InvalidArgument, "label outside classifier range");
    const Eigen::VectorXd p = predict_proba(s.features, m);
    const int pred = argmax(p);
    ++r.confusion[s.label][pred];
    correct += pred == s.label;
    loss += loss_and_grad(m, s);
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(split.size());
  r.mean_loss = loss / static_cast<double>(split.size());
  r.per_class_accuracy.assign(c, 0.0);
  for (int k = 0; k < c; ++k) {
    int total = 0;
    for (int v : r.confusion[k]) total += v;
    r.per_class_accuracy[k] = total ? static_cast<double>(r.confusion[k][k]) / total : 0.0;
  }
  return r;
}

struct TrainOutcome {
  ClassifierModel model;  // weights of the best-dev-loss epoch
  TrainHistory history;
};

namespace detail {

// Fisher-Yates with raw engine draws, so the order is identical across standard libraries.
inline void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
}

}  // namespace detail

// Per-sample SGD over a seeded shuffle with per-epoch decay, plateau reduction and early
// stopping on dev loss.
inline TrainOutcome train(const ClassifierModel& init, const std::vector<SequenceSample>& train_set,
                          const std::vector<SequenceSample>& dev_set, const TrainConfig& config) {
  config.check();
  require(!train_set.empty() && !dev_set.empty(), ErrorCode::EmptyInput, "train and dev splits must be non-empty");
  TrainOutcome out{init, {}};
  ClassifierModel model = init;
  ClassifierModel grad;
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  double multiplier = 1.0;
  int plateau_wait = 0;
  int stop_wait = 0;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = config.learning_rate(epoch, multiplier);
    detail::shuffle_indices(order, rng);
    double total = 0.0;
    for (std::size_t idx : order) {
      total += loss_and_grad(model, train_set[idx], &grad);
      if (config.clip_norm > 0.0) {
        const double norm = grad.flatten().norm();
        if (norm > config.clip_norm) grad.axpy(config.clip_norm / norm - 1.0, grad);
      }
      model.axpy(-rec.lr, grad);
    }
    rec.train_loss = total / static_cast<double>(train_set.size());
    const EvalResult dev = evaluate(model, dev_set);
    rec.dev_loss = dev.mean_loss;
    rec.dev_acc = dev.accuracy;

    if (rec.dev_loss < out.history.best_dev_loss) {
      out.history.best_dev_loss = rec.dev_loss;
      out.history.best_epoch = epoch;
      out.model = model;
      plateau_wait = 0;
      stop_wait = 0;
    } else {
      ++plateau_wait;
      ++stop_wait;
      if (plateau_wait >= config.plateau_patience) {
        multiplier *= config.plateau_factor;
        plateau_wait = 0;
        rec.event = "lr_reduced";
      }
      if (stop_wait >= config.early_stop_patience) rec.event += rec.event.empty() ? "early_stop" : ";early_stop";
    }
    out.history.epochs.push_back(rec);
    if (stop_wait >= config.early_stop_patience) break;
  }
  return out;
}

// --- Checkpoints -------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[] = "SKCKPT01";

struct CheckpointMeta {
  int epoch = -1;
  double dev_loss = std::numeric_limits<double>::quiet_NaN();
  std::optional<Scaler> scaler;
  std::string layout;
  std::string mask;
};

// Layout: 8-byte magic, u64 LE header length, JSON header, f64 LE weight blob.
inline std::string serialize_checkpoint(const ClassifierModel& m, const CheckpointMeta& meta) {
  nlohmann::json header = {{"schema", kCheckpointSchema},
                           {"config",
                            {{"input_dim", m.config.input_dim},
                             {"hidden", m.config.hidden},
                             {"n_classes", m.config.n_classes},
                             {"seed", m.config.seed}}},
                           {"seed", m.config.seed},
                           {"epoch", meta.epoch},
                           {"dev_loss", std::isfinite(meta.dev_loss) ? nlohmann::json(meta.dev_loss) : nlohmann::json()},
                           {"n_weights", m.parameter_count()},
                           {"layout", meta.layout},
                           {"mask", meta.mask}};
  if (meta.scaler) header["scaler"] = scaler_to_json(*meta.scaler);
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, 8);
  const std::uint64_t len = h.size();
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((len >> (8 * b)) & 0xffu));
  out += h;
  const Eigen::VectorXd w = m.flatten();
  out += io::pack_f64_le(w.data(), static_cast<std::size_t>(w.size()));
  return out;
}

struct Checkpoint {
  ClassifierModel model;
  CheckpointMeta meta;
};

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  require(bytes.size() >= 16 && bytes.compare(0, 8, kCheckpointMagic, 8) == 0, ErrorCode::SchemaMismatch,
          "not a signkit checkpoint (bad magic)");
  std::uint64_t len = 0;
  for (int b = 0; b < 8; ++b) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + b])) << (8 * b);
  require(16 + len <= bytes.size(), ErrorCode::Parse, "checkpoint header truncated");
  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(16, len));
    require(header.value("schema", std::string()) == kCheckpointSchema, ErrorCode::SchemaMismatch,
            "checkpoint schema must be '" + std::string(kCheckpointSchema) + "'");
    const auto& c = header.at("config");
    ClassifierConfig cfg;
    cfg.input_dim = c.at("input_dim").get<int>();
    cfg.hidden = c.at("hidden").get<int>();
    cfg.n_classes = c.at("n_classes").get<int>();
    cfg.seed = c.at("seed").get<std::uint64_t>();
    ck.model = ClassifierModel::zeros(cfg);
    ck.meta.epoch = header.at("epoch").get<int>();
    ck.meta.dev_loss = header.at("dev_loss").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                       : header.at("dev_loss").get<double>();
    ck.meta.layout = header.value("layout", std::string());
    ck.meta.mask = header.value("mask", std::string());
    if (header.contains("scaler")) ck.meta.scaler = scaler_from_json(header.at("scaler"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("checkpoint header: ") + e.what());
  }
  const auto weights = io::unpack_f64_le(std::string_view(bytes).substr(16 + len));
  require(static_cast<Eigen::Index>(weights.size()) == ck.model.parameter_count(), ErrorCode::DimensionMismatch,
          "checkpoint weight blob does not match its config");
  ck.model.unflatten(Eigen::Map<const Eigen::VectorXd>(weights.data(), static_cast<Eigen::Index>(weights.size())));
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const ClassifierModel& m, const CheckpointMeta& meta) {
  io::write_file(path.string(), serialize_checkpoint(m, meta));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorCode::Io, "checkpoint not found: " + path.string());
  return deserialize_checkpoint(io::read_file(path.string()));
}

}  // namespace signkit
