#include <doctest.h>

#include <cmath>
#include <memory>

#include "uq/errors.hpp"
#include "uq/param_codec.hpp"

using namespace uq;

namespace {

FamilyPtr unit_interval() {
  return std::make_shared<const SourceFamily>(
      ExpFamily(Density::uniform(0, 1), {Statistic::power(1)}, ThetaBox{{0}, {1}}, {0, 1}));
}

FamilyPtr simplex2() {
  return std::make_shared<const SourceFamily>(
      MixtureFamily({Density::uniform(0, 1), Density::uniform(0.5, 1.5)}, {0, 1.5}));
}

FamilyPtr simplex3() {
  return std::make_shared<const SourceFamily>(MixtureFamily(
      {Density::truncated_gaussian(0.5, 0.2, 0, 1.5), Density::triangular(0.2, 0.9, 1.5), Density::uniform(0, 1.5)},
      {0, 1.5}));
}

FamilyPtr box2() {
  return std::make_shared<const SourceFamily>(ExpFamily(Density::uniform(0, 1),
                                                        {Statistic::power(1), Statistic::cosine(1)},
                                                        ThetaBox{{-1, -0.5}, {1, 0.5}}, {0, 1}));
}

}  // namespace

TEST_CASE("one-dimensional grid") {
  const auto g = build_grid(*unit_interval(), 4);
  CHECK(g.cells_per_unit() == 2);
  CHECK(g.cell_count() == 2);
  CHECK(g.header_bits() == 1);
  CHECK(g.cells()[0].representative[0] == doctest::Approx(0.25));
  CHECK(g.cells()[1].representative[0] == doctest::Approx(0.75));

  CHECK(encode_param(g, {0.7}).value == 1);
  CHECK(encode_param(g, {0.5}).value == 0);
  CHECK(encode_param(g, {0.0}).value == 0);
  CHECK(encode_param(g, {1.0}).value == 1);
  CHECK(decode_param(g, {0, 1}) == ParamVector{0.25});
  CHECK_THROWS_AS(decode_param(g, {2, 1}), FormatError);
  CHECK_THROWS_AS(decode_param(g, {0, 2}), FormatError);
  CHECK_THROWS_AS(encode_param(g, {1.1}), DomainError);
}

TEST_CASE("simplex grid keeps only intersecting cells") {
  const auto g = build_grid(*simplex2(), 4);
  CHECK(g.cell_count() <= 4);
  // Brute force over the segment theta_1 + theta_2 = 1 with half-open cells
  // (i/2, (i+1)/2], the first cell on each axis also holding 0.
  auto in = [](double x, int i) { return (i == 0 ? x >= 0 : x > i * 0.5) && x <= (i + 1) * 0.5; };
  std::size_t hits = 0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      bool meets = false;
      for (int s = 0; s <= 1000 && !meets; ++s) meets = in(s / 1000.0, i) && in(1 - s / 1000.0, j);
      hits += meets;
    }
  CHECK(hits == 3);
  CHECK(g.cell_count() == hits);
  for (const auto& c : g.cells()) CHECK(simplex2()->contains(c.representative, 1e-12));
}

TEST_CASE("quantization error, classifier inverse and header length") {
  for (const auto& fam : {unit_interval(), simplex2(), simplex3(), box2()}) {
    const std::size_t k = fam->dim();
    for (std::size_t n : {4u, 16u, 64u, 256u, 1024u, 4096u}) {
      const auto g = build_grid(*fam, n);
      CHECK(g.header_bits() == static_cast<unsigned>(std::ceil(std::log2(static_cast<double>(g.cell_count())))));
      CHECK(g.header_bits() <= header_bits_bound(k, n, fam->cube_side()));
      for (const auto& c : g.cells()) {
        CHECK(fam->contains(c.representative, 1e-9));
        const HeaderBits b{c.index, g.header_bits()};
        CHECK(encode_param(g, decode_param(g, b)) == b);
      }
      const double limit = std::sqrt(static_cast<double>(k) / n) + 1e-12;
      double worst = 0.0;
      for (std::uint64_t s = 0; s < 2000; ++s) {
        const auto theta = random_parameter(*fam, s);
        worst = std::max(worst, distance(theta, decode_param(g, encode_param(g, theta))));
      }
      CHECK(worst <= limit);
    }
  }
}

TEST_CASE("single cell grid has an empty header") {
  const auto g = build_grid(*unit_interval(), 1);
  CHECK(g.cell_count() == 1);
  CHECK(g.header_bits() == 0);
  CHECK(encode_param(g, {0.3}).width == 0);
}
