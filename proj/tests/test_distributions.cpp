#include <qkit/distributions.hpp>

#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace qkit;

TEST(Distributions, PdfClosedForms) {
  const auto g = DistributionModel::gaussian(1.0, 3.0);
  EXPECT_NEAR(g.pdf(0.0), 1.0 / std::sqrt(2.0 * M_PI), 1e-15);
  EXPECT_NEAR(g.pdf(0.0), 0.398942, 1e-6);
  EXPECT_EQ(g.pdf(1.3), g.pdf(-1.3));
  const auto l = DistributionModel::laplacian(1.0, 3.0);
  EXPECT_DOUBLE_EQ(l.pdf(0.0), 0.5);
  for (double x : {0.1, 0.7, 2.5}) EXPECT_NEAR(g.pdf(x), oracle::normal_pdf(x, 1.0), 1e-15);
}

TEST(Distributions, CdfClosedFormsAndSymmetry) {
  const auto g = DistributionModel::gaussian(1.0, 3.0);
  EXPECT_DOUBLE_EQ(g.cdf(0.0), 0.5);
  const auto l = DistributionModel::laplacian(1.0, 3.0);
  EXPECT_NEAR(l.cdf(1.0), 1.0 - 0.5 * std::exp(-1.0), 1e-15);
  EXPECT_NEAR(l.cdf(1.0), 0.816060, 1e-6);
  for (const auto& d : {g, l, DistributionModel::gaussian(0.3, 1.0), DistributionModel::laplacian(2.0, 8.0)}) {
    EXPECT_NEAR(d.cdf(2.0) + d.cdf(-2.0), 1.0, 1e-12);
    for (double r = -4; r <= 4; r += 0.37) {
      EXPECT_NEAR(d.pdf(r), d.pdf(-r), 1e-12 * d.pdf(0));
      EXPECT_NEAR(d.cdf(r), 1.0 - d.cdf(-r), 1e-12);
      EXPECT_NEAR(d.truncated_cdf(r), 1.0 - d.truncated_cdf(-r), 1e-12);
    }
  }
}

TEST(Distributions, CdfIsIntegratedPdf) {
  for (const auto& d : {DistributionModel::gaussian(1.0, 3.0), DistributionModel::laplacian(1.0, 4.0),
                        DistributionModel::gaussian(0.5, 2.0)}) {
    const double m = d.bound();
    for (int i = 0; i <= 40; ++i) {
      const double r = -m + 2 * m * i / 40;
      // split at 0 so the Laplacian kink sits on a panel edge
      double integral;
      if (r <= 0)
        integral = oracle::trapezoid([&](double x) { return d.truncated_pdf(x); }, -m, r, 20000);
      else
        integral = oracle::trapezoid([&](double x) { return d.truncated_pdf(x); }, -m, 0, 20000) +
                   oracle::trapezoid([&](double x) { return d.truncated_pdf(x); }, 0, r, 20000);
      EXPECT_NEAR(d.truncated_cdf(r), integral, 1e-6) << "r=" << r;
      EXPECT_NEAR(d.cdf(r) - d.cdf(-m),
                  r <= 0 ? oracle::trapezoid([&](double x) { return d.pdf(x); }, -m, r, 20000)
                         : oracle::trapezoid([&](double x) { return d.pdf(x); }, -m, 0, 20000) +
                               oracle::trapezoid([&](double x) { return d.pdf(x); }, 0, r, 20000),
                  1e-6);
    }
  }
}

TEST(Distributions, TruncatedBoundaryConditions) {
  const auto d = DistributionModel::gaussian(1.0, 2.0);
  EXPECT_EQ(d.truncated_cdf(-2.0), 0.0);
  EXPECT_EQ(d.truncated_cdf(2.0), 1.0);
  EXPECT_DOUBLE_EQ(d.truncated_cdf(0.0), 0.5);
  EXPECT_EQ(d.truncated_pdf(2.5), 0.0);
  EXPECT_GT(d.truncated_pdf(1.0), d.pdf(1.0));
}

TEST(Distributions, PdfStrictlyDecreasingOnPositiveHalf) {
  for (const auto& d : {DistributionModel::gaussian(1.0, 4.0), DistributionModel::laplacian(1.0, 4.0)}) {
    std::vector<double> grid;
    for (int i = 1; i < 200; ++i) grid.push_back(d.bound() * i / 200);
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
      ASSERT_GT(d.pdf(grid[i]), d.pdf(grid[i + 1]));
      ASSERT_LT(d.pdf_derivative(grid[i]), 0.0);
    }
  }
}

TEST(Distributions, PdfDerivativeMatchesFiniteDifference) {
  for (const auto& d : {DistributionModel::gaussian(1.3, 4.0), DistributionModel::laplacian(0.8, 4.0)}) {
    for (double r = 0.1; r < 3.5; r += 0.3) {
      const double fd = oracle::central_difference([&](double x) { return d.pdf(x); }, r, 1e-6);
      EXPECT_NEAR(d.pdf_derivative(r), fd, 1e-7);
    }
  }
}

TEST(Distributions, QuantileInvertsTruncatedCdf) {
  for (const auto& d : {DistributionModel::gaussian(1.0, 3.0), DistributionModel::laplacian(1.0, 4.0)}) {
    for (double u = 0.001; u < 1.0; u += 0.0371) EXPECT_NEAR(d.truncated_cdf(d.truncated_quantile(u)), u, 1e-12);
  }
}

TEST(Distributions, FitRecoversScale) {
  const auto t = sample(DistributionModel::gaussian(1.0, 5.0), 1'000'000, 7);
  const auto g = fit(t, DistributionKind::Gaussian);
  EXPECT_NEAR(g.scale(), 1.0, 0.01);
  EXPECT_EQ(g.bound(), stats(t).absmax);
  const Tensor pm(std::vector<float>{-1.5f, 1.5f});
  EXPECT_DOUBLE_EQ(fit(pm, DistributionKind::Laplacian).scale(), 1.5);
  EXPECT_THROW(fit(Tensor(std::vector<float>{0, 0, 0}), DistributionKind::Gaussian), data_error);
  EXPECT_THROW(fit(Tensor(std::vector<float>{0, 0, 0}), DistributionKind::Laplacian), data_error);
}

TEST(Distributions, SamplingMomentsAndDeterminism) {
  const auto g = sample(DistributionModel::gaussian(1.0, 5.0), 1'000'000, 11);
  EXPECT_NEAR(oracle::two_pass(g.data()).stddev, 1.0, 0.01);
  const auto l = sample(DistributionModel::laplacian(2.0, 5.0), 1'000'000, 12);
  double mad = 0;
  for (float x : l.data()) mad += std::abs(x);
  EXPECT_NEAR(mad / l.size(), 2.0, 0.02);
  EXPECT_EQ(sample(DistributionModel::gaussian(1.0, 5.0), 1000, 3),
            sample(DistributionModel::gaussian(1.0, 5.0), 1000, 3));
  EXPECT_NE(sample(DistributionModel::gaussian(1.0, 5.0), 1000, 3),
            sample(DistributionModel::gaussian(1.0, 5.0), 1000, 4));
}

TEST(Distributions, TruncatedSamplesStayInBound) {
  const auto d = DistributionModel::laplacian(1.0, 2.0);
  const auto t = sample_truncated(d, 100000, 5);
  for (float x : t.data()) ASSERT_LE(std::abs(x), 2.0f);
  // mass below 0.5 in magnitude matches the truncated law
  std::size_t inner = 0;
  for (float x : t.data()) inner += std::abs(x) <= 0.5f;
  EXPECT_NEAR(static_cast<double>(inner) / t.size(), d.magnitude_mass(0.0, 0.5), 0.005);
}

TEST(Distributions, InvalidParametersRejected) {
  EXPECT_THROW(DistributionModel::gaussian(0.0, 1.0), invalid_argument);
  EXPECT_THROW(DistributionModel::gaussian(1.0, -1.0), invalid_argument);
  EXPECT_THROW(sample(DistributionModel::gaussian(1.0, 1.0), 0, 1), invalid_argument);
}
