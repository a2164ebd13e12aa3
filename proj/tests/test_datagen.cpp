#include "oracles.hpp"

#include "steadyop/datagen.hpp"
#include "steadyop/errors.hpp"
#include "steadyop/pde.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

using namespace steadyop;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// The variance list of the Darcy noise experiments, read from the reference text.
std::vector<double> reference_darcy_variances() {
  const std::string text = slurp(STEADYOP_REFERENCE_TEXT);
  const std::regex re(R"(noise that we add to PDEs are \[([^\]]*)\])");
  std::smatch m;
  if (!std::regex_search(text, m, re)) return {};
  std::vector<double> out;
  std::stringstream items(m[1].str());
  std::string item;
  while (std::getline(items, item, ',')) out.push_back(std::stod(item));
  return out;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("steadyop_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(DarcyData, DeterministicAndConstructional) {
  const auto a = data::gen_darcy_sample(32, 3, 0);
  const auto b = data::gen_darcy_sample(32, 3, 0);
  EXPECT_TRUE(a.a == b.a);
  EXPECT_TRUE(a.u == b.u);
  EXPECT_FALSE(a.a == data::gen_darcy_sample(32, 3, 1).a);
  const data::Dataset d = data::gen_darcy(6, 32, 9);
  for (std::size_t s = 0; s < d.inputs.size(); ++s) {
    EXPECT_GT(d.inputs[s].array().minCoeff(), 0.0);
    const Tensor& u = d.targets[s];
    for (Index i = 0; i < 32; ++i)
      for (Index j = 0; j < 32; ++j)
        if (i == 0 || j == 0 || i == 31 || j == 31) EXPECT_EQ(u[i * 32 + j], 0.0);
  }
}

TEST(DarcyData, TwoLevelCoefficient) {
  const Tensor a = data::darcy_coefficient(64, 1, 2);
  Index hi = 0, lo = 0;
  for (Index i = 0; i < a.size(); ++i) {
    if (a[i] == 12.0) ++hi;
    else if (a[i] == 3.0) ++lo;
  }
  EXPECT_EQ(hi + lo, a.size());
  EXPECT_GT(hi, 0);
  EXPECT_GT(lo, 0);
}

TEST(DarcyData, ReSolveMatchesStoredTarget) {
  for (Index i = 0; i < 3; ++i) {
    const auto s = data::gen_darcy_sample(32, 4, i);
    const Tensor a = s.a.reshaped({32, 32});
    const Tensor f = Tensor::constant({32, 32}, 1.0);
    const Tensor tight = pde::darcy_solve({a, f}, 1e-12);
    EXPECT_LT(oracle::max_abs_diff(s.u.reshaped({32, 32}), tight), 1e-8);
    EXPECT_LT(oracle::max_abs_diff(oracle::darcy_direct(a, f), tight), 1e-8);
  }
}

TEST(NsData, SelfConsistentAndDeterministic) {
  const auto s = data::gen_ns_sample(32, 0.01, 5, 0);
  EXPECT_LT(data::ns_consistency(s.force, s.omega, 0.01), 1e-6);
  const auto t = data::gen_ns_sample(32, 0.01, 5, 0);
  EXPECT_TRUE(s.force == t.force);
  EXPECT_TRUE(s.omega == t.omega);
  EXPECT_EQ(s.force.dim(2), 2);
  EXPECT_LT(std::abs(s.omega.array().mean()), 1e-12);
}

TEST(NsData, ViscositySensitivity) {
  const auto a = data::gen_ns_sample(32, 0.01, 6, 0);
  const auto b = data::gen_ns_sample(32, 0.001, 6, 0);
  EXPECT_GT(oracle::max_abs_diff(a.omega, b.omega), 1e-3);
  EXPECT_LT(data::ns_consistency(b.force, b.omega, 0.001), 1e-6);
}

TEST(Noise, ReferenceScheduleSplitsEqually) {
  const std::vector<double> v = reference_darcy_variances();
  ASSERT_EQ(v.size(), 8u);
  EXPECT_EQ(v.front(), 0.0);
  EXPECT_DOUBLE_EQ(v.back(), 1e-3);
  data::NoiseSchedule s{v, data::NoiseTarget::Inputs, 0};
  EXPECT_NO_THROW(data::check_schedule(s, 64));
  const auto level = data::assign_noise_levels(800, 8, 11);
  std::vector<int> count(8, 0);
  for (int l : level) ++count[static_cast<std::size_t>(l)];
  for (int c : count) EXPECT_EQ(c, 100);
  // Remainder goes to level 0.
  const auto uneven = data::assign_noise_levels(803, 8, 11);
  EXPECT_EQ(std::count(uneven.begin(), uneven.end(), 0), 103);
}

TEST(Noise, ScheduleValidation) {
  EXPECT_THROW(data::check_schedule({{1e-3}, data::NoiseTarget::Inputs, 0}, 64), DomainError);
  EXPECT_THROW(data::check_schedule({{0.0, 1e-3, 1e-4}, data::NoiseTarget::Inputs, 0}, 64), DomainError);
  EXPECT_THROW(data::check_schedule({{0.0, 0.1}, data::NoiseTarget::Inputs, 0}, 64), DomainError);
  EXPECT_THROW(data::check_schedule({{0.0, 1e-3}, data::NoiseTarget::None, 0}, 64), DomainError);
}

TEST(Noise, EmpiricalVarianceAndCleanTestSplit) {
  const data::Dataset clean = data::gen_darcy(20, 64, 12);
  EXPECT_TRUE(data::apply_noise(clean, {{0.0}, data::NoiseTarget::None, 0}).inputs == clean.inputs);
  for (auto target : {data::NoiseTarget::Inputs, data::NoiseTarget::Observations}) {
    const data::NoiseSchedule s{{0.0, 1e-3}, target, 3};
    const data::Dataset noisy = data::apply_noise(clean, s);
    const Index n_train = clean.manifest.train_count();
    int noisy_samples = 0;
    for (Index i = 0; i < 20; ++i) {
      const bool inputs = target == data::NoiseTarget::Inputs;
      const Tensor& changed = inputs ? noisy.inputs[i] : noisy.targets[i];
      const Tensor& base = inputs ? clean.inputs[i] : clean.targets[i];
      // The other side never moves.
      EXPECT_TRUE((inputs ? noisy.targets[i] : noisy.inputs[i]) == (inputs ? clean.targets[i] : clean.inputs[i]));
      if (i >= n_train) {
        EXPECT_TRUE(changed == base) << "test sample " << i;
        continue;
      }
      if (noisy.noise_var[i] == 0.0) {
        EXPECT_TRUE(changed == base);
        continue;
      }
      ++noisy_samples;
      Eigen::ArrayXd d = changed.array() - base.array();
      const double var = (d - d.mean()).square().sum() / static_cast<double>(d.size() - 1);
      EXPECT_NEAR(var / 1e-3, 1.0, 0.1) << i;
    }
    EXPECT_EQ(noisy_samples, n_train / 2);
  }
}

TEST(Storage, RoundTripAndOverwriteGuard) {
  const fs::path dir = temp_dir("dataset_rt");
  data::Dataset d = data::apply_noise(data::gen_darcy(5, 16, 2), {{0.0, 1e-3}, data::NoiseTarget::Observations, 4});
  data::save_dataset(dir, d, false);
  const data::Dataset back = data::load_dataset(dir);
  EXPECT_EQ(back.manifest.n, 5);
  EXPECT_EQ(back.manifest.noise.variances, d.manifest.noise.variances);
  EXPECT_TRUE(back.inputs == d.inputs);
  EXPECT_TRUE(back.targets == d.targets);
  EXPECT_EQ(back.noise_var, d.noise_var);
  EXPECT_THROW(data::save_dataset(dir, d, false), FormatError);
  EXPECT_NO_THROW(data::save_dataset(dir, d, true));
  fs::remove(dir / data::sample_name("target", 3));
  EXPECT_THROW(data::load_dataset(dir), FormatError);
  fs::remove_all(dir);
}

TEST(Storage, ByteIdenticalRegeneration) {
  const fs::path a = temp_dir("dataset_a"), b = temp_dir("dataset_b");
  data::save_dataset(a, data::gen_darcy(3, 16, 8, 1), false);
  data::save_dataset(b, data::gen_darcy(3, 16, 8, 4), false);
  for (const auto& e : fs::directory_iterator(a)) EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path();
  fs::remove_all(a);
  fs::remove_all(b);
}
