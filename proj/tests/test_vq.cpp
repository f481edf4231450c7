#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <memory>
#include <numeric>

#include "uq/errors.hpp"
#include "uq/rng.hpp"
#include "uq/vq.hpp"

using namespace uq;

namespace {

FamilyPtr shifted_uniforms() {
  return std::make_shared<const SourceFamily>(
      MixtureFamily({Density::uniform(0, 1), Density::uniform(0.5, 1.5)}, {0, 1.5}));
}

SourceModel uniform01() { return SourceModel(shifted_uniforms(), {1, 0}); }

Codebook scalar(std::vector<double> c, unsigned bits) {
  Codebook cb;
  cb.n = 1;
  cb.codewords = std::move(c);
  cb.rate_bits = bits;
  return cb;
}

std::uint64_t binom(unsigned n, unsigned k) {
  std::uint64_t r = 1;
  for (unsigned i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace

TEST_CASE("nearest-neighbor encoding") {
  const DistortionSpec spec(2, 1);
  auto cb = scalar({0.25, 0.75}, 1);
  const double x = 0.3;
  CHECK(nn_encode(cb, std::span(&x, 1), spec) == 0);
  const double mid = 0.5;
  CHECK(nn_encode(cb, std::span(&mid, 1), spec) == 0);  // tie to lowest

  auto rnd = random_codebook(4, 16, {0, 1}, 3);
  CHECK(rnd.size() == 16);
  auto self = rnd.codeword(5);
  double d = 1;
  CHECK(nn_encode(rnd, self, spec, d) == 5);
  CHECK(d == 0.0);

  Rng r(8);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> blk(4);
    for (auto& v : blk) v = r.uniform();
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < rnd.size(); ++i) {
      const double di = block_distortion(blk, rnd.codeword(i), spec);
      if (di < best_d) best_d = di, best = i;
    }
    CHECK(nn_encode(rnd, blk, spec) == best);
  }
}

TEST_CASE("distortion on samples") {
  const DistortionSpec spec(2, 1.5);
  auto cb = scalar({0.25, 0.75}, 1);
  const std::vector<double> exact{0.25, 0.75, 0.75};
  CHECK(distortion_on_sample(cb, exact, spec) == 0.0);
  CHECK_THROWS_AS(distortion_on_sample(cb, {}, spec), DomainError);

  const auto xs = sample(uniform01(), 4, 20000);
  const auto e = distortion_estimate(cb, xs, spec);
  CHECK(std::abs(e.mean - 1.0 / 48) < 3 * e.se);
  const auto xs2 = sample(uniform01(), 5, 40000);
  const auto e2 = distortion_estimate(cb, xs2, spec);
  CHECK(std::abs(e.mean - e2.mean) < 3 * std::hypot(e.se, e2.se));

  QuadratureGrid quad({0, 1.5});
  CHECK(expected_distortion(cb, tabulate(uniform01(), quad), quad, spec) == doctest::Approx(1.0 / 48).epsilon(1e-3));
}

TEST_CASE("Lloyd design") {
  const DistortionSpec spec(2, 1.5);
  LloydBudget budget;
  budget.training_blocks = 20000;
  LloydTrace trace;
  const auto cb = lloyd_design(uniform01(), 1, 1.0, spec, 17, budget, &trace);
  REQUIRE(cb.size() == 2);
  CHECK(std::abs(cb.codewords[0] - 0.25) < 0.01);
  CHECK(std::abs(cb.codewords[1] - 0.75) < 0.01);
  const auto test = sample(uniform01(), 99, 50000);
  CHECK(std::abs(distortion_on_sample(cb, test, spec) - 1.0 / 48) < 0.05 / 48);
  for (std::size_t i = 1; i < trace.history.size(); ++i) CHECK(trace.history[i] <= trace.history[i - 1] + 1e-15);
  CHECK(lloyd_design(uniform01(), 1, 1.0, spec, 17, budget).codewords == cb.codewords);

  // One codeword: the centroid is the mean (0.5) for p = 2, the median for p = 1.
  SourceModel mix(shifted_uniforms(), {0.7, 0.3});
  const auto one = lloyd_design(mix, 1, 0.0, spec, 3, budget);
  CHECK(one.size() == 1);
  CHECK(one.codewords[0] == doctest::Approx(0.7 * 0.5 + 0.3 * 1.0).epsilon(0.01));

  // Degenerate training data.
  const std::vector<double> same(100, 0.4);
  const auto deg = lloyd_design_blocks(same, 1, 2, spec, {0, 1.5});
  for (double c : deg.codewords) CHECK(c == 0.4);

  // Density design matches the classical two-level quantizer.
  QuadratureGrid quad({0, 1.5});
  LloydTrace dt;
  const auto dd = lloyd_design_density(tabulate(uniform01(), quad), quad, 1, spec, 1000, &dt);
  CHECK(dd.codewords[0] == doctest::Approx(0.25).epsilon(1e-3));
  CHECK(dd.codewords[1] == doctest::Approx(0.75).epsilon(1e-3));
  for (std::size_t i = 1; i < dt.history.size(); ++i) CHECK(dt.history[i] <= dt.history[i - 1] + 1e-12);

  // p = 1 two-dimensional design still improves monotonically.
  LloydTrace t1;
  lloyd_design(mix, 2, 1.5, DistortionSpec(1, 1.5), 5, {}, &t1);
  for (std::size_t i = 1; i < t1.history.size(); ++i) CHECK(t1.history[i] <= t1.history[i - 1] + 1e-12);

  CHECK_THROWS_AS(rate_bits_for(64, 1.0), CapacityError);
  CHECK(rate_bits_for(2, 1.5) == 3);
}

TEST_CASE("mismatch gap") {
  const auto fam = shifted_uniforms();
  for (double p : {1.0, 2.0}) {
    const DistortionSpec spec(p, 1.5);
    const auto cb = random_codebook(2, 8, {0, 1.5}, 4);
    const SourceModel a(fam, {0.7, 0.3});
    const auto same = mismatch_gap(cb, a, a, spec, 2000, 1);
    CHECK(same.lhs == doctest::Approx(0.0));
    CHECK(same.d_v == doctest::Approx(0.0));

    const SourceModel b(fam, {0.2, 0.8});
    const auto g = mismatch_gap(cb, a, b, spec, 2000, 2);
    CHECK(g.lhs <= g.rhs + 3 * g.sigma);
    CHECK(g.rhs == doctest::Approx(std::pow(2.0, 1 / p) * 1.5 * g.d_v));
  }
  // Disjoint supports: d_V = 1.
  auto disjoint = std::make_shared<const SourceFamily>(
      MixtureFamily({Density::uniform(0, 1), Density::uniform(2, 3)}, {0, 3}));
  const DistortionSpec spec(2, 3);
  const auto g = mismatch_gap(random_codebook(1, 4, {0, 3}, 1), SourceModel(disjoint, {1, 0}),
                              SourceModel(disjoint, {0, 1}), spec, 1000, 3);
  CHECK(g.d_v == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(g.rhs == doctest::Approx(std::sqrt(2.0) * 3).epsilon(1e-3));
  CHECK(g.lhs <= g.rhs);
}

TEST_CASE("augmented codebook counts") {
  auto base = random_codebook(4, 2, {0, 1}, 1);
  AugmentedCodebook a(base, 0.25, 0.0, 0.1);
  CHECK(a.max_substitutions() == 1);
  CHECK(a.count() == 11);
  const auto all = a.materialize();
  CHECK(all.size() == 11 * 4);
  for (std::size_t i = 0; i < 11; ++i) CHECK(a.contains(std::span(all.data() + 4 * i, 4)));

  AugmentedCodebook none(base, 0.1, 0.0, 0.1);
  CHECK(none.max_substitutions() == 0);
  CHECK(none.count() == 3);
  const std::vector<double> zeros(4, 0.0);
  CHECK(none.contains(zeros));

  for (unsigned n = 1; n <= 24; ++n) {
    auto b = random_codebook(n, 3, {0, 1}, n);
    for (double delta : {0.05, 0.2, 0.5}) {
      AugmentedCodebook aug(b, delta, 0.5, 1.0);
      std::uint64_t expect = 0;
      for (unsigned i = 0; i <= static_cast<unsigned>(std::floor(delta * n + 1e-9)); ++i) expect += binom(n, i);
      CHECK(aug.count() == 3 * expect + 1);
      CHECK(aug.log2_count() == doctest::Approx(std::log2(static_cast<double>(aug.count()))));
    }
  }
  AugmentedCodebook big(random_codebook(32, 2, {0, 1}, 1), 0.1, 0.0, 1.0);
  CHECK_THROWS_AS(big.materialize(), CapacityError);
}

TEST_CASE("robust re-encoding") {
  const DistortionSpec spec(2, 10);
  const std::vector<double> x{0.0, 1.0, 2.0, 3.0};
  const std::vector<double> near{0.1, 1.1, 2.1, 3.1};
  CHECK(robust_reencode(x, near, 0.25, 9.0, 1.0, spec) == near);

  const std::vector<double> one_off{0.1, 5.0, 2.1, 3.1};
  CHECK(robust_reencode(x, one_off, 0.25, 9.0, 1.0, spec) == std::vector<double>{0.1, 9.0, 2.1, 3.1});

  const std::vector<double> two_off{0.1, 5.0, 7.0, 3.1};
  CHECK(robust_reencode(x, two_off, 0.25, 9.0, 1.0, spec) == std::vector<double>(4, 9.0));
}

TEST_CASE("Lemma 2 inequality") {
  const auto fam = shifted_uniforms();
  const DistortionSpec spec(2, 1.5);
  for (std::uint64_t s = 0; s < 6; ++s) {
    const SourceModel m(fam, random_parameter(*fam, s));
    const auto base = random_codebook(8, 16, {0, 1.5}, s);
    const double delta = 0.05 + 0.04 * s;
    const auto c = unbounded_extension_check(m, base, delta, 0.75, 0.1 + 0.05 * s, spec, 400, s);
    CHECK(c.G_prime == doctest::Approx(c.G * (1 + 2 / delta)));
    CHECK(c.augmented.mean <= c.bound + 3 * c.sigma);
  }
}

TEST_CASE("codebook files") {
  auto cb = lloyd_design(uniform01(), 2, 1.0, DistortionSpec(2, 1.5), 9);
  const auto bytes = serialize_codebook(cb);
  const auto back = deserialize_codebook(bytes);
  CHECK(back.codewords == cb.codewords);
  CHECK(back.n == cb.n);
  CHECK(back.p == cb.p);
  CHECK(back.provenance.seed == 9);
  CHECK(back.provenance.training_size == cb.provenance.training_size);

  const auto path = std::filesystem::temp_directory_path() / "uq_test_codebook.uqvq";
  write_codebook(path, cb);
  CHECK(read_codebook(path).codewords == cb.codewords);
  std::filesystem::remove(path);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_codebook(bad), FormatError);
  auto ver = bytes;
  ver[4] = 9;
  CHECK_THROWS_AS(deserialize_codebook(ver), FormatError);
  std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 3);
  CHECK_THROWS_AS(deserialize_codebook(cut), FormatError);
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(deserialize_codebook(extra), FormatError);
  CHECK_THROWS_AS(read_codebook("/nonexistent/dir/cb.uqvq"), IoError);
}
