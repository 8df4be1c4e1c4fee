#pragma once

// Sparse autoencoder over pre-router activations:
//
//   z     = ReLU(W_enc x + b_enc)
//   x_hat = W_dec z
//   loss  = ||x - x_hat||^2 + lambda * ||z||_1
//
// trained with Adam. Decoder columns are renormalized to unit length after
// every step so the L1 term cannot be dodged by growing the decoder.

#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "routescope/errors.hpp"

namespace routescope::sae {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct SaeModel {
  Matrix w_enc;  // n x d
  Vector b_enc;  // n
  Matrix w_dec;  // d x n
  double lambda = 5.0;
  std::uint64_t seed = 0;
  std::size_t steps_trained = 0;

  int width() const { return static_cast<int>(w_enc.rows()); }
  int input_dim() const { return static_cast<int>(w_enc.cols()); }
};

inline void validate(const SaeModel& m) {
  if (m.w_enc.rows() < 1 || m.w_enc.cols() < 1)
    throw ValidationError("w_enc", "sae", "empty encoder");
  if (m.b_enc.size() != m.w_enc.rows())
    throw ValidationError("b_enc", "sae", "encoder bias length differs from width");
  if (m.w_dec.rows() != m.w_enc.cols() || m.w_dec.cols() != m.w_enc.rows())
    throw ValidationError("w_dec", "sae", "decoder shape must be d x n");
  if (!(m.lambda > 0.0)) throw ValidationError("lambda", "sae", "lambda must be positive");
}

namespace detail {

inline Vector random_unit(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Vector v(d);
  for (int i = 0; i < d; ++i) v[i] = normal(rng);
  const double norm = v.norm();
  return norm > 0 ? Vector(v / norm) : Vector(Vector::Unit(d, 0));
}

inline void normalize_columns(Matrix& w) {
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    const double n = w.col(j).norm();
    if (n > 0) w.col(j) /= n;
  }
}

}  // namespace detail

// Unit-norm random decoder columns; the encoder starts as its transpose.
inline SaeModel make_sae(int input_dim, int width, double lambda, std::uint64_t seed) {
  if (input_dim < 1 || width < 1) throw ValidationError("width", "sae", "dimensions must be positive");
  SaeModel m;
  m.lambda = lambda;
  m.seed = seed;
  std::mt19937_64 rng(seed);
  m.w_dec.resize(input_dim, width);
  for (int j = 0; j < width; ++j) m.w_dec.col(j) = detail::random_unit(input_dim, rng);
  m.w_enc = m.w_dec.transpose();
  m.b_enc = Vector::Zero(width);
  validate(m);
  return m;
}

struct Forward {
  Vector z;
  Vector x_hat;
  double loss = 0.0;
};

inline Forward sae_forward(const SaeModel& m, const Vector& x) {
  if (x.size() != m.input_dim())
    throw ValidationError("x", "sae", "input has dimension " + std::to_string(x.size()) +
                                          ", model expects " + std::to_string(m.input_dim()));
  Forward f;
  f.z = (m.w_enc * x + m.b_enc).cwiseMax(0.0);
  f.x_hat = m.w_dec * f.z;
  f.loss = (x - f.x_hat).squaredNorm() + m.lambda * f.z.sum();
  return f;
}

inline Forward sae_forward(const SaeModel& m, std::span<const double> x) {
  return sae_forward(m, Vector(Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size()))));
}

struct Gradients {
  Matrix w_enc;
  Vector b_enc;
  Matrix w_dec;
};

struct BatchStats {
  double loss = 0.0;
  double mean_l0 = 0.0;
};

// Mean loss over the columns of `x` (d x B) and, when `grad` is given, its
// gradient. The ReLU derivative at 0 is taken as 0.
inline BatchStats loss_and_gradients(const SaeModel& m, const Matrix& x, Gradients* grad,
                                     Eigen::Array<bool, Eigen::Dynamic, 1>* active = nullptr) {
  const double inv_b = 1.0 / static_cast<double>(x.cols());
  const Matrix pre = (m.w_enc * x).colwise() + m.b_enc;
  const Matrix z = pre.cwiseMax(0.0);
  const Matrix resid = m.w_dec * z - x;
  BatchStats s;
  s.loss = (resid.squaredNorm() + m.lambda * z.sum()) * inv_b;
  s.mean_l0 = static_cast<double>((z.array() > 0.0).count()) * inv_b;
  if (active) *active = (z.array() > 0.0).rowwise().any();
  if (grad) {
    const Matrix g_xhat = (2.0 * inv_b) * resid;
    grad->w_dec.noalias() = g_xhat * z.transpose();
    Matrix g_pre = m.w_dec.transpose() * g_xhat;
    g_pre.array() += m.lambda * inv_b;
    g_pre = (pre.array() > 0.0).select(g_pre, 0.0);
    grad->w_enc.noalias() = g_pre * x.transpose();
    grad->b_enc = g_pre.rowwise().sum();
  }
  return s;
}

// Defaults follow the published regimen; desk-scale runs override them.
struct TrainConfig {
  std::size_t steps = 30000;
  std::size_t batch_size = 4096;
  double learning_rate = 5e-5;
  std::size_t dead_reset_interval = 1000;
  std::size_t dead_window = 1000;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t log_interval = 1000;
  bool normalize_decoder = true;
};

inline void validate(const TrainConfig& c) {
  if (c.steps < 1 || c.batch_size < 1 || c.dead_reset_interval < 1 || c.dead_window < 1 ||
      c.log_interval < 1)
    throw ValidationError("train_config", "sae", "counts must be positive");
  if (!(c.learning_rate > 0.0)) throw ValidationError("learning_rate", "sae", "must be positive");
}

struct LogEntry {
  std::size_t step = 0;     // last step of the interval
  double mean_loss = 0.0;   // over the interval
  double mean_l0 = 0.0;     // active features per sample, over the interval
  std::size_t dead = 0;     // features inactive over the trailing window
  std::size_t resets = 0;   // features re-initialized during the interval
};

struct TrainResult {
  SaeModel model;
  std::vector<LogEntry> log;
  std::vector<double> loss_history;  // one value per step
  std::size_t total_resets = 0;
};

namespace detail {

struct AdamState {
  Matrix m_enc, v_enc, m_dec, v_dec;
  Vector m_b, v_b;

  explicit AdamState(const SaeModel& m)
      : m_enc(Matrix::Zero(m.w_enc.rows(), m.w_enc.cols())),
        v_enc(m_enc),
        m_dec(Matrix::Zero(m.w_dec.rows(), m.w_dec.cols())),
        v_dec(m_dec),
        m_b(Vector::Zero(m.b_enc.size())),
        v_b(m_b) {}
};

template <typename P, typename G>
void adam_update(P& param, const G& grad, P& m, P& v, double lr_t, const TrainConfig& c) {
  m = c.beta1 * m + (1.0 - c.beta1) * grad;
  v = c.beta2 * v + (1.0 - c.beta2) * grad.cwiseProduct(grad);
  param.array() -= lr_t * m.array() / (v.array().sqrt() + c.epsilon);
}

}  // namespace detail

// Trains `model` on the columns of `data` (d x M). Every dead_reset_interval
// steps, features with no activation during the trailing dead_window steps
// get a fresh random decoder column, the same vector as encoder row, and a
// zero bias. Deterministic given the config seed.
inline TrainResult sae_train(const Matrix& data, SaeModel model, const TrainConfig& cfg) {
  validate(model);
  validate(cfg);
  if (data.cols() < 1) throw ValidationError("activations", "sae", "training set is empty");
  if (data.rows() != model.input_dim())
    throw ValidationError("activations", "sae", "activation dimension differs from model input");

  const Eigen::Index d = data.rows(), n_feat = model.width();
  const Eigen::Index batch = static_cast<Eigen::Index>(std::min<std::size_t>(cfg.batch_size, data.cols()));
  std::mt19937_64 rng(cfg.seed);
  std::vector<Eigen::Index> order(data.cols());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  TrainResult res;
  res.loss_history.reserve(cfg.steps);
  detail::AdamState adam(model);
  Gradients g;
  Matrix x(d, batch);
  std::vector<std::size_t> last_active(n_feat, model.steps_trained);
  Eigen::Array<bool, Eigen::Dynamic, 1> active;
  double interval_loss = 0.0, interval_l0 = 0.0;
  std::size_t interval_steps = 0, interval_resets = 0;

  for (std::size_t local = 1; local <= cfg.steps; ++local) {
    const std::size_t step = model.steps_trained + 1;
    for (Eigen::Index b = 0; b < batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      x.col(b) = data.col(order[cursor++]);
    }
    const BatchStats st = loss_and_gradients(model, x, &g, &active);
    if (!std::isfinite(st.loss))
      throw Error("SAE training diverged: non-finite loss at step " + std::to_string(step));
    res.loss_history.push_back(st.loss);
    for (Eigen::Index j = 0; j < n_feat; ++j)
      if (active[j]) last_active[j] = step;

    const double t = static_cast<double>(local);
    const double lr_t = cfg.learning_rate * std::sqrt(1.0 - std::pow(cfg.beta2, t)) /
                        (1.0 - std::pow(cfg.beta1, t));
    detail::adam_update(model.w_enc, g.w_enc, adam.m_enc, adam.v_enc, lr_t, cfg);
    detail::adam_update(model.w_dec, g.w_dec, adam.m_dec, adam.v_dec, lr_t, cfg);
    detail::adam_update(model.b_enc, g.b_enc, adam.m_b, adam.v_b, lr_t, cfg);
    if (cfg.normalize_decoder) detail::normalize_columns(model.w_dec);
    model.steps_trained = step;

    interval_loss += st.loss;
    interval_l0 += st.mean_l0;
    ++interval_steps;

    std::size_t dead_now = 0;
    const bool reset_due = local % cfg.dead_reset_interval == 0;
    const bool log_due = local % cfg.log_interval == 0 || local == cfg.steps;
    if (reset_due || log_due) {
      for (Eigen::Index j = 0; j < n_feat; ++j) {
        if (step - last_active[j] < cfg.dead_window) continue;
        ++dead_now;
        if (!reset_due) continue;
        const Vector u = detail::random_unit(static_cast<int>(d), rng);
        model.w_dec.col(j) = u;
        model.w_enc.row(j) = u.transpose();
        model.b_enc[j] = 0.0;
        adam.m_dec.col(j).setZero();
        adam.v_dec.col(j).setZero();
        adam.m_enc.row(j).setZero();
        adam.v_enc.row(j).setZero();
        adam.m_b[j] = adam.v_b[j] = 0.0;
        last_active[j] = step;
        ++interval_resets;
        ++res.total_resets;
      }
    }
    if (log_due) {
      res.log.push_back({step, interval_loss / interval_steps, interval_l0 / interval_steps, dead_now,
                         interval_resets});
      interval_loss = interval_l0 = 0.0;
      interval_steps = interval_resets = 0;
    }
  }
  res.model = std::move(model);
  return res;
}

// Mean number of active features per sample over the columns of `data`.
inline double mean_l0(const SaeModel& m, const Matrix& data) {
  return loss_and_gradients(m, data, nullptr).mean_l0;
}

// Feature activations for every column of `data` (n x M).
inline Matrix encode(const SaeModel& m, const Matrix& data) {
  return ((m.w_enc * data).colwise() + m.b_enc).cwiseMax(0.0);
}

// ---------------------------------------------------------------------------
// Checkpoint: a self-describing JSON document.

inline constexpr const char* kCheckpointFormat = "routescope-sae";

inline nlohmann::ordered_json to_json(const SaeModel& m) {
  auto rows = [](const Matrix& w) {
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      std::vector<double> r(w.cols());
      for (Eigen::Index j = 0; j < w.cols(); ++j) r[j] = w(i, j);
      out.push_back(std::move(r));
    }
    return out;
  };
  nlohmann::ordered_json j;
  j["format"] = kCheckpointFormat;
  j["version"] = 1;
  j["input_dim"] = m.input_dim();
  j["width"] = m.width();
  j["lambda"] = m.lambda;
  j["seed"] = m.seed;
  j["steps"] = m.steps_trained;
  j["w_enc"] = rows(m.w_enc);
  j["b_enc"] = std::vector<double>(m.b_enc.data(), m.b_enc.data() + m.b_enc.size());
  j["w_dec"] = rows(m.w_dec);
  return j;
}

inline SaeModel from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat)
      throw SchemaError("format", "sae", "not an SAE checkpoint");
    if (j.at("version").get<int>() != 1) throw SchemaError("version", "sae", "unsupported checkpoint version");
    const int d = j.at("input_dim").get<int>(), n = j.at("width").get<int>();
    auto matrix = [](const nlohmann::json& rows, int r, int c, const char* field) {
      if (!rows.is_array() || static_cast<int>(rows.size()) != r)
        throw SchemaError(field, "sae", "row count differs from declared shape");
      Matrix w(r, c);
      for (int i = 0; i < r; ++i) {
        const auto v = rows[i].get<std::vector<double>>();
        if (static_cast<int>(v.size()) != c) throw SchemaError(field, "sae", "column count differs from declared shape");
        for (int k = 0; k < c; ++k) w(i, k) = v[k];
      }
      return w;
    };
    SaeModel m;
    m.w_enc = matrix(j.at("w_enc"), n, d, "w_enc");
    m.w_dec = matrix(j.at("w_dec"), d, n, "w_dec");
    const auto b = j.at("b_enc").get<std::vector<double>>();
    if (static_cast<int>(b.size()) != n) throw SchemaError("b_enc", "sae", "bias length differs from width");
    m.b_enc = Eigen::Map<const Vector>(b.data(), n);
    m.lambda = j.at("lambda").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.steps_trained = j.at("steps").get<std::size_t>();
    validate(m);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("checkpoint", "sae", e.what());
  }
}

inline void save(std::ostream& out, const SaeModel& m) { out << to_json(m).dump() << '\n'; }

inline SaeModel load(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(1, 0, e.what());
  }
  return from_json(j);
}

}  // namespace routescope::sae
