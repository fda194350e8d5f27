#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <numbers>
#include <sstream>

#include "sda/config.hpp"
#include "sda/field.hpp"
#include "sda/grid_io.hpp"
#include "sda/rng.hpp"
#include "sda/schedule.hpp"

using namespace sda;

namespace {

FieldGrid random_grid(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed, bool f32_exact = false) {
  Rng rng(seed);
  std::vector<double> data(c * h * w);
  for (auto& v : data) {
    v = 3.0 * rng.normal() + 1.0;
    if (f32_exact) v = static_cast<float>(v);
  }
  return FieldGrid(FieldGrid::default_channels(c), h, w, std::move(data), NormStats::unit(c));
}

}  // namespace

// ---------------------------------------------------------------- transforms

TEST(ChannelTransform, LogShiftOfZero) {
  const auto tp = ChannelSpec::log_shifted("tp", 1e-4);
  EXPECT_NEAR(to_model(0.0, tp), std::log(1e-4), 1e-12);
  EXPECT_NEAR(to_model(0.0, tp), -9.2103, 1e-4);
}

TEST(ChannelTransform, IdentityPassesThrough) {
  const auto u = ChannelSpec::identity("u10");
  EXPECT_EQ(to_model(3.7, u), 3.7);
  EXPECT_EQ(to_physical(3.7, u), 3.7);
}

TEST(ChannelTransform, LogShiftNearOne) {
  const auto tp = ChannelSpec::log_shifted("tp", 1e-4);
  EXPECT_NEAR(to_model(0.9999, tp), 0.0, 1e-12);
}

TEST(ChannelTransform, NegativePrecipitationIsDomainError) {
  const auto tp = ChannelSpec::log_shifted("tp", 1e-4);
  EXPECT_THROW(to_model(-0.1, tp), DomainError);
  const std::vector<double> values{0.0, -1.0};
  EXPECT_THROW(transform_physical_to_model(values, tp), DomainError);
}

TEST(ChannelTransform, RoundTripWithinRelativeTolerance) {
  const auto tp = ChannelSpec::log_shifted("tp", 1e-4);
  Rng rng(3);
  for (int k = 0; k < 1000; ++k) {
    const double v = std::exp(6.0 * rng.uniform() - 3.0) - 0.04;
    const double x = std::max(v, 0.0);
    const double back = to_physical(to_model(x, tp), tp);
    EXPECT_LE(std::abs(back - x), 1e-9 * std::max(std::abs(x), 1e-4)) << x;
  }
}

TEST(ChannelTransform, LogShiftNeedsPositiveShift) {
  EXPECT_THROW(ChannelSpec::log_shifted("tp", 0.0).validate(), ConfigError);
}

// ---------------------------------------------------------------- grid

TEST(FieldGrid, RejectsDuplicateNames) {
  std::vector<ChannelSpec> chans{ChannelSpec::identity("u"), ChannelSpec::identity("u")};
  EXPECT_THROW(FieldGrid(chans, 2, 2, std::vector<double>(8, 0.0), NormStats::unit(2)), ConfigError);
}

TEST(FieldGrid, RejectsNonFiniteAndBadSize) {
  auto chans = FieldGrid::default_channels(1);
  std::vector<double> bad(4, 0.0);
  bad[2] = std::nan("");
  EXPECT_ANY_THROW(FieldGrid(chans, 2, 2, bad, NormStats::unit(1)));
  EXPECT_THROW(FieldGrid(chans, 2, 2, std::vector<double>(3, 0.0), NormStats::unit(1)), ConfigError);
}

TEST(FieldGrid, ChannelMajorIndexing) {
  FieldGrid g = FieldGrid::zeros(FieldGrid::default_channels(2), 3, 4);
  g.at(1, 2, 3) = 5.0;
  EXPECT_EQ(g.values()[1 * 12 + 2 * 4 + 3], 5.0);
  EXPECT_EQ(g.channel(1)[11], 5.0);
  EXPECT_EQ(g.channel_index("ch1"), 1u);
  EXPECT_THROW(g.channel_index("nope"), ConfigError);
}

// ---------------------------------------------------------------- normalization

TEST(Normalize, ConstantAtMeanGivesZeros) {
  NormStats s{{2.0}, {3.0}};
  FieldGrid g(FieldGrid::default_channels(1), 2, 2, std::vector<double>(4, 2.0), NormStats::unit(1));
  const FieldGrid n = normalize(g, s);
  for (double v : n.values()) EXPECT_EQ(v, 0.0);
}

TEST(Normalize, MeanPlusStdGivesOnes) {
  NormStats s{{2.0}, {3.0}};
  FieldGrid g(FieldGrid::default_channels(1), 2, 2, std::vector<double>(4, 5.0), NormStats::unit(1));
  const FieldGrid n = normalize(g, s);
  for (double v : n.values()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Normalize, RoundTripRandomGrids) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const FieldGrid g = random_grid(2, 4, 4, seed);
    Rng rng(seed + 100);
    NormStats s{{rng.normal(), rng.normal()}, {0.5 + rng.uniform(), 0.1 + rng.uniform()}};
    const FieldGrid back = denormalize(normalize(g, s));
    for (std::size_t k = 0; k < g.size(); ++k)
      EXPECT_LE(std::abs(back.values()[k] - g.values()[k]), 1e-6 * std::max(1.0, std::abs(g.values()[k])));
  }
}

TEST(Normalize, NonPositiveStdIsConfigError) {
  const FieldGrid g = random_grid(1, 2, 2, 1);
  EXPECT_THROW(normalize(g, NormStats{{0.0}, {0.0}}), ConfigError);
  EXPECT_THROW(normalize(g, NormStats{{0.0}, {-1.0}}), ConfigError);
}

TEST(Normalize, PhysicalRoundTripThroughLogChannel) {
  std::vector<ChannelSpec> chans{ChannelSpec::identity("u10"), ChannelSpec::log_shifted("tp")};
  std::vector<double> phys{1.0, -2.0, 0.5, 3.0, 0.0, 0.2, 5.0, 1e-3};
  FieldGrid p(chans, 2, 2, phys, NormStats::unit(2));
  NormStats s{{0.5, -4.0}, {2.0, 3.0}};
  const FieldGrid m = from_physical(p, s);
  const FieldGrid back = to_physical(m);
  for (std::size_t k = 0; k < phys.size(); ++k) EXPECT_NEAR(back.values()[k], phys[k], 1e-9 * (1 + std::abs(phys[k])));
}

TEST(Ensemble, MeanAndUnbiasedStd) {
  Ensemble e;
  for (double v : {1.0, 3.0}) {
    e.members.push_back(FieldGrid(FieldGrid::default_channels(1), 1, 1, {v}, NormStats::unit(1)));
    e.seeds.push_back(0);
  }
  EXPECT_DOUBLE_EQ(e.mean().values()[0], 2.0);
  EXPECT_DOUBLE_EQ(e.stddev().values()[0], std::sqrt(2.0));
}

TEST(Ensemble, RejectsMixedShapes) {
  Ensemble e;
  e.members.push_back(FieldGrid::zeros(FieldGrid::default_channels(1), 2, 2));
  e.members.push_back(FieldGrid::zeros(FieldGrid::default_channels(1), 2, 3));
  e.seeds = {0, 1};
  EXPECT_THROW(e.validate(), ConfigError);
}

// ---------------------------------------------------------------- grid file

TEST(GridFile, RoundTripIsBitIdentical) {
  FieldGrid g = random_grid(3, 5, 7, 42, /*f32_exact=*/true);
  g.set_norm(NormStats{{0.1, 0.2, 0.3}, {1.5, 2.5, 3.5}});
  std::stringstream ss;
  write_grid(ss, g);
  const FieldGrid r = read_grid(ss);
  ASSERT_TRUE(r.same_layout(g));
  EXPECT_EQ(r.norm(), g.norm());
  EXPECT_EQ(std::memcmp(r.values().data(), g.values().data(), g.size() * sizeof(double)), 0);
}

TEST(GridFile, HeaderLayoutIsLittleEndian) {
  const FieldGrid g = random_grid(1, 2, 3, 1, true);
  std::stringstream ss;
  write_grid(ss, g);
  const std::string bytes = ss.str();
  ASSERT_GE(bytes.size(), 20u);
  EXPECT_EQ(bytes.substr(0, 4), "SDAG");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);  // version
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1u);  // C
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 2u); // H
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 3u); // W
  // name "ch0": u16 length + 3 bytes, tag, three f64, then 6 f32 values
  EXPECT_EQ(bytes.size(), 20u + 2 + 3 + 1 + 24 + 6 * 4);
}

TEST(GridFile, TruncatedOrForeignInputIsIoError) {
  const FieldGrid g = random_grid(1, 4, 4, 1, true);
  std::stringstream ss;
  write_grid(ss, g);
  std::string bytes = ss.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_grid(cut), IoError);
  std::stringstream foreign("NOPE and more bytes here");
  EXPECT_THROW(read_grid(foreign), IoError);
}

// ---------------------------------------------------------------- VP schedule

TEST(VPSchedule, Endpoints) {
  const VPSchedule vp;
  EXPECT_DOUBLE_EQ(vp.mu(0.0), 1.0);
  EXPECT_DOUBLE_EQ(vp.sigma_s(0.0), 0.0);
  EXPECT_NEAR(vp.mu(1.0), std::sqrt(1e-3), 1e-15);
  EXPECT_NEAR(vp.mu(1.0), 0.031623, 1e-6);
}

TEST(VPSchedule, PythagoreanIdentityAndMonotone) {
  const VPSchedule vp;
  double prev = 2.0;
  for (int k = 0; k <= 1000; ++k) {
    const double t = k / 1000.0;
    const double m = vp.mu(t), s = vp.sigma_s(t);
    EXPECT_NEAR(m * m + s * s, 1.0, 1e-12);
    EXPECT_LT(m, prev);
    EXPECT_GE(s, 0.0);
    EXPECT_LT(s, 1.0);
    prev = m;
  }
}

TEST(VPSchedule, OutOfRangeIsDomainError) {
  const VPSchedule vp;
  EXPECT_THROW(vp.mu(-0.01), DomainError);
  EXPECT_THROW(vp.sigma_s(1.01), DomainError);
}

TEST(VPSchedule, EdmSigmaEquivalent) {
  const VPSchedule vp;
  EXPECT_EQ(edm_sigma_equivalent(0.0), 0.0);
  EXPECT_LT(edm_sigma_equivalent(1e-9), 1e-7);
  EXPECT_NEAR(edm_sigma_equivalent(1.0), std::sqrt(1 - 1e-3) / std::sqrt(1e-3), 1e-9);
  EXPECT_NEAR(edm_sigma_equivalent(1.0), 31.607, 1e-3);
  const double omega = std::acos(std::sqrt(1e-3));
  EXPECT_NEAR(edm_sigma_equivalent(0.5), std::tan(omega / 2.0), 1e-12);
}

TEST(TauGrid, UniformDecreasing) {
  EXPECT_EQ(tau_grid(2), (std::vector<double>{1.0, 0.5, 0.0}));
  const auto g = tau_grid(64);
  ASSERT_EQ(g.size(), 65u);
  EXPECT_EQ(g.front(), 1.0);
  EXPECT_EQ(g.back(), 0.0);
  for (std::size_t k = 1; k < g.size(); ++k) {
    EXPECT_LT(g[k], g[k - 1]);
    EXPECT_NEAR(g[k - 1] - g[k], 1.0 / 64.0, 1e-15);
  }
  EXPECT_THROW(tau_grid(1), ConfigError);
}

TEST(EDMSchedule, NoiseGridDecreasesToZero) {
  EDMSchedule s;
  s.n_steps = 18;
  const auto g = s.sigmas();
  ASSERT_EQ(g.size(), 19u);
  EXPECT_NEAR(g.front(), 80.0, 1e-9);
  EXPECT_NEAR(g[g.size() - 2], 0.002, 1e-12);
  EXPECT_EQ(g.back(), 0.0);
  for (std::size_t k = 1; k < g.size(); ++k) EXPECT_LT(g[k], g[k - 1]);
  s.sigma_min = 100.0;
  EXPECT_THROW(s.sigmas(), ConfigError);
}

// ---------------------------------------------------------------- rng

TEST(Rng, DerivedSeedsAreDistinctAndStable) {
  EXPECT_EQ(derive_seed(7, 3), derive_seed(7, 3));
  EXPECT_NE(derive_seed(7, 3), derive_seed(7, 4));
  EXPECT_NE(derive_seed(7, 3), derive_seed(8, 3));
  Rng a(5), b(5);
  for (int k = 0; k < 10; ++k) EXPECT_EQ(a.normal(), b.normal());
}

// ---------------------------------------------------------------- config

namespace {
ConfigSchema test_schema() {
  return {{"seed", ValueKind::integer, "0", "seed"},
          {"gamma", ValueKind::real, "0.001", ""},
          {"name", ValueKind::string, "\"x\"", ""},
          {"flag", ValueKind::boolean, "false", ""},
          {"scales", ValueKind::real_list, "[1, 2]", ""}};
}
}  // namespace

TEST(RunConfig, ParsesTypedValuesAndComments) {
  RunConfig c(test_schema());
  std::istringstream is("# comment\nseed = 12\ngamma = 0.5  # trailing\nname = \"a b\"\nflag = true\nscales = [3, 4.5]\n");
  c.load(is);
  EXPECT_EQ(c.get_int("seed"), 12);
  EXPECT_EQ(c.get_real("gamma"), 0.5);
  EXPECT_EQ(c.get_string("name"), "a b");
  EXPECT_TRUE(c.get_bool("flag"));
  EXPECT_EQ(c.get_list("scales"), (std::vector<double>{3.0, 4.5}));
}

TEST(RunConfig, UnknownKeyRejected) {
  RunConfig c(test_schema());
  std::istringstream is("seed = 1\nsede = 2\n");
  EXPECT_THROW(c.load(is), ConfigError);
  EXPECT_THROW(c.set("other", "1"), ConfigError);
}

TEST(RunConfig, IllTypedValueRejected) {
  RunConfig c(test_schema());
  EXPECT_THROW(c.set("seed", "1.5"), ConfigError);
  EXPECT_THROW(c.set("flag", "yes"), ConfigError);
  EXPECT_THROW(c.set("gamma", "abc"), ConfigError);
}

TEST(RunConfig, ResolvedCopyReloadsToSameValues) {
  RunConfig c(test_schema());
  c.set("gamma", "0.01");
  c.set("name", "run one");
  c.set("scales", "5,6");
  std::stringstream ss;
  c.write(ss);
  RunConfig d(test_schema());
  d.load(ss);
  EXPECT_EQ(d.get_real("gamma"), 0.01);
  EXPECT_EQ(d.get_string("name"), "run one");
  EXPECT_EQ(d.get_list("scales"), (std::vector<double>{5.0, 6.0}));
}

TEST(RunConfig, FallbackDoesNotOverrideExplicit) {
  RunConfig c(test_schema());
  c.set("gamma", "0.5");
  c.set_fallback("gamma", "0.01");
  c.set_fallback("seed", "9");
  EXPECT_EQ(c.get_real("gamma"), 0.5);
  EXPECT_EQ(c.get_int("seed"), 9);
  EXPECT_FALSE(c.explicitly_set("seed"));
}

TEST(RunConfig, EnvironmentSeedOverridesFile) {
  RunConfig c(test_schema());
  std::istringstream is("seed = 1\n");
  c.load(is);
  ::setenv("SDA_SEED", "77", 1);
  c.apply_env();
  ::unsetenv("SDA_SEED");
  EXPECT_EQ(c.get_int("seed"), 77);
}
