#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "routescope/sae.hpp"

using namespace routescope;
using sae::Matrix;
using sae::Vector;

namespace {

Matrix gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

// Sparse non-negative combinations of `atoms` unit directions.
struct DictionaryTask {
  Matrix atoms;  // d x m, unit columns
  Matrix data;   // d x samples
};

DictionaryTask dictionary_task(int d, int m, int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  DictionaryTask t;
  t.atoms = gaussian(d, m, rng);
  t.atoms.colwise().normalize();
  t.data = Matrix::Zero(d, samples);
  std::uniform_int_distribution<int> pick(0, m - 1), count(1, 3);
  std::uniform_real_distribution<double> mag(0.5, 1.5);
  for (int s = 0; s < samples; ++s)
    for (int c = count(rng); c > 0; --c) t.data.col(s) += mag(rng) * t.atoms.col(pick(rng));
  return t;
}

int recovered(const Matrix& atoms, const Matrix& w_dec, double threshold) {
  int hits = 0;
  for (Eigen::Index a = 0; a < atoms.cols(); ++a) {
    double best = 0.0;
    for (Eigen::Index j = 0; j < w_dec.cols(); ++j)
      best = std::max(best, std::abs(atoms.col(a).dot(w_dec.col(j)) / w_dec.col(j).norm()));
    hits += best > threshold;
  }
  return hits;
}

}  // namespace

TEST(SaeForward, ZeroInputZeroBias) {
  const auto m = sae::make_sae(6, 9, 5.0, 1);
  const auto f = sae::sae_forward(m, Vector(Vector::Zero(6)));
  EXPECT_EQ(f.z.squaredNorm(), 0.0);
  EXPECT_EQ(f.x_hat.squaredNorm(), 0.0);
  EXPECT_EQ(f.loss, 0.0);
}

TEST(SaeForward, IdentityWeightsReconstructNonNegativeInput) {
  sae::SaeModel m;
  m.w_enc = Matrix::Identity(4, 4);
  m.w_dec = Matrix::Identity(4, 4);
  m.b_enc = Vector::Zero(4);
  m.lambda = 0.5;
  const Vector x = (Vector(4) << 0.0, 1.5, 2.0, 0.25).finished();
  const auto f = sae::sae_forward(m, x);
  EXPECT_EQ(f.x_hat, x);
  EXPECT_DOUBLE_EQ(f.loss, 0.5 * x.sum());
}

TEST(SaeGradient, MatchesCentralDifferences) {
  std::mt19937_64 rng(11);
  sae::SaeModel m;
  Matrix x;
  // Keep every pre-activation away from the ReLU kink.
  for (int attempt = 0;; ++attempt) {
    ASSERT_LT(attempt, 100);
    m.w_enc = gaussian(7, 5, rng);
    m.w_dec = gaussian(5, 7, rng);
    m.b_enc = gaussian(7, 1, rng, 0.5);
    m.lambda = 0.3;
    x = gaussian(5, 4, rng);
    const Matrix pre = (m.w_enc * x).colwise() + m.b_enc;
    if (pre.cwiseAbs().minCoeff() > 1e-3) break;
  }
  sae::Gradients g;
  sae::loss_and_gradients(m, x, &g);
  const double h = 1e-6;
  auto check = [&](Matrix& param, const Matrix& analytic) {
    Matrix numeric(param.rows(), param.cols());
    for (Eigen::Index i = 0; i < param.rows(); ++i)
      for (Eigen::Index j = 0; j < param.cols(); ++j) {
        const double keep = param(i, j);
        param(i, j) = keep + h;
        const double up = sae::loss_and_gradients(m, x, nullptr).loss;
        param(i, j) = keep - h;
        const double down = sae::loss_and_gradients(m, x, nullptr).loss;
        param(i, j) = keep;
        numeric(i, j) = (up - down) / (2 * h);
      }
    return (numeric - analytic).norm() / analytic.norm();
  };
  EXPECT_LT(check(m.w_enc, g.w_enc), 1e-5);
  EXPECT_LT(check(m.w_dec, g.w_dec), 1e-5);
  Matrix b = m.b_enc;
  const double err_b = [&] {
    Matrix numeric(b.rows(), 1);
    for (Eigen::Index i = 0; i < b.rows(); ++i) {
      const double keep = m.b_enc[i];
      m.b_enc[i] = keep + h;
      const double up = sae::loss_and_gradients(m, x, nullptr).loss;
      m.b_enc[i] = keep - h;
      const double down = sae::loss_and_gradients(m, x, nullptr).loss;
      m.b_enc[i] = keep;
      numeric(i, 0) = (up - down) / (2 * h);
    }
    return (numeric - Matrix(g.b_enc)).norm() / g.b_enc.norm();
  }();
  EXPECT_LT(err_b, 1e-5);
}

TEST(SaeTraining, RecoversSparseDictionary) {
  const auto task = dictionary_task(64, 20, 8192, 3);
  auto model = sae::make_sae(64, 64, 0.05, 4);
  sae::TrainConfig cfg;
  cfg.steps = 3000;
  cfg.batch_size = 256;
  cfg.learning_rate = 3e-3;
  cfg.dead_reset_interval = 500;
  cfg.dead_window = 500;
  cfg.seed = 5;
  const auto res = sae::sae_train(task.data, model, cfg);
  EXPECT_GE(recovered(task.atoms, res.model.w_dec, 0.9), 18);
}

TEST(SaeTraining, HugeLambdaCollapsesActivity) {
  std::mt19937_64 rng(12);
  const Matrix data = gaussian(16, 2000, rng);
  auto model = sae::make_sae(16, 32, 1e6, 6);
  sae::TrainConfig cfg;
  cfg.steps = 1500;
  cfg.batch_size = 128;
  cfg.learning_rate = 1e-2;
  cfg.dead_reset_interval = 1000000;  // no resets
  const auto res = sae::sae_train(data, model, cfg);
  EXPECT_EQ(res.total_resets, 0u);
  EXPECT_EQ(sae::mean_l0(res.model, data), 0.0);
}

TEST(SaeTraining, ZeroInputKillsEveryFeatureAndResetsFireEachInterval) {
  const Matrix data = Matrix::Zero(8, 64);
  auto model = sae::make_sae(8, 12, 5.0, 7);
  sae::TrainConfig cfg;
  cfg.steps = 500;
  cfg.batch_size = 16;
  cfg.learning_rate = 1e-3;
  cfg.dead_reset_interval = 100;
  cfg.dead_window = 100;
  cfg.log_interval = 100;
  const auto res = sae::sae_train(data, model, cfg);
  for (double l : res.loss_history) EXPECT_EQ(l, 0.0);
  ASSERT_EQ(res.log.size(), 5u);
  for (const auto& e : res.log) {
    EXPECT_EQ(e.resets, 12u);
    EXPECT_EQ(e.mean_l0, 0.0);
  }
  EXPECT_EQ(res.total_resets, 60u);
}

TEST(SaeTraining, LossDecreasesAndDecoderStaysUnitNorm) {
  const auto task = dictionary_task(32, 16, 4096, 8);
  auto model = sae::make_sae(32, 48, 0.05, 9);
  sae::TrainConfig cfg;
  cfg.steps = 1000;
  cfg.batch_size = 128;
  cfg.learning_rate = 1e-3;
  cfg.log_interval = 250;
  const auto res = sae::sae_train(task.data, model, cfg);
  ASSERT_EQ(res.log.size(), 4u);
  EXPECT_LT(res.log.back().mean_loss, 0.5 * res.log.front().mean_loss);
  for (Eigen::Index j = 0; j < res.model.w_dec.cols(); ++j)
    EXPECT_NEAR(res.model.w_dec.col(j).norm(), 1.0, 1e-12);
  EXPECT_EQ(res.model.steps_trained, 1000u);
}

TEST(SaeTraining, DeterministicGivenSeed) {
  const auto task = dictionary_task(16, 8, 512, 10);
  sae::TrainConfig cfg;
  cfg.steps = 200;
  cfg.batch_size = 64;
  cfg.learning_rate = 1e-3;
  const auto a = sae::sae_train(task.data, sae::make_sae(16, 24, 0.1, 1), cfg);
  const auto b = sae::sae_train(task.data, sae::make_sae(16, 24, 0.1, 1), cfg);
  EXPECT_EQ(a.model.w_enc, b.model.w_enc);
  EXPECT_EQ(a.loss_history, b.loss_history);
}

TEST(SaeTraining, RejectsMismatchedInput) {
  const Matrix data = Matrix::Zero(5, 10);
  EXPECT_THROW(sae::sae_train(data, sae::make_sae(6, 4, 1.0, 1), {}), ValidationError);
}

TEST(SaeCheckpoint, RoundTripIsExact) {
  std::mt19937_64 rng(13);
  auto m = sae::make_sae(5, 9, 0.125, 77);
  m.w_enc = gaussian(9, 5, rng);
  m.b_enc = gaussian(9, 1, rng);
  m.steps_trained = 1234;
  std::stringstream ss;
  sae::save(ss, m);
  const auto back = sae::load(ss);
  EXPECT_EQ(back.w_enc, m.w_enc);
  EXPECT_EQ(back.w_dec, m.w_dec);
  EXPECT_EQ(back.b_enc, m.b_enc);
  EXPECT_EQ(back.lambda, m.lambda);
  EXPECT_EQ(back.seed, 77u);
  EXPECT_EQ(back.steps_trained, 1234u);
}

TEST(SaeCheckpoint, ShapeMismatchIsSchemaError) {
  auto j = sae::to_json(sae::make_sae(3, 4, 1.0, 1));
  j["width"] = 5;
  EXPECT_THROW(sae::from_json(j), SchemaError);
  std::istringstream garbage("{not json");
  EXPECT_THROW(sae::load(garbage), ParseError);
}
