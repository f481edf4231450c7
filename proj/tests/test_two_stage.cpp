#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <thread>

#include "uq/errors.hpp"
#include "uq/two_stage.hpp"

using namespace uq;

namespace {

FamilyPtr shifted_uniforms() {
  return std::make_shared<const SourceFamily>(
      MixtureFamily({Density::uniform(0, 1), Density::uniform(0.5, 1.5)}, {0, 1.5}));
}

TwoStageCode make_code(std::size_t n, double rate = 1.0, CodeDesignConfig design = {}) {
  auto fam = shifted_uniforms();
  auto quad = std::make_shared<const QuadratureGrid>(fam->support());
  return TwoStageCode::build(fam, n, rate, DistortionSpec::for_support(2, fam->support()), design, {}, quad);
}

std::vector<double> stream_of(const TwoStageCode& code, const ParamVector& theta, std::uint64_t seed,
                              std::size_t blocks) {
  return sample(SourceModel(code.bank().family_ptr(), theta), seed, blocks * code.n());
}

}  // namespace

TEST_CASE("rate per letter") {
  for (std::size_t n : {16u, 64u, 256u, 1024u}) {
    const auto code = make_code(n);
    const auto& b = code.bank();
    CHECK(b.rate_bits() == n);
    CHECK(rate_per_letter(code) == static_cast<double>(b.rate_bits() + b.header_bits()) / n);
    CHECK(b.header_bits() == static_cast<unsigned>(std::ceil(std::log2(static_cast<double>(b.grid().cell_count())))));
    CHECK(b.header_bits() <= header_bits_bound(2, n, 1));
  }
}

TEST_CASE("roundtrip through the wire format") {
  const auto code = make_code(64);
  const auto xs = stream_of(code, {0.7, 0.3}, 3, 10);
  std::vector<BlockTrace> trace;
  const auto enc = encode_stream(code, xs, &trace);
  REQUIRE(enc.size() == 10);
  CHECK(trace[0].initial);
  CHECK(enc[0].header.value == code.initial_cell());

  const auto layout = layout_of(code.bank());
  const auto bytes = pack_stream(layout, enc);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "UQ2S");
  const auto back = unpack_stream(layout, bytes);
  CHECK(back == enc);
  const auto dec = decode_stream(code, back);
  for (std::size_t t = 0; t < enc.size(); ++t) {
    const auto& cb = code.bank().codebook(enc[t].header.value);
    CHECK(dec[t].reproduction == reproduce_body(cb, enc[t].body));
    CHECK(dec[t].theta_hat == code.bank().grid().cells()[enc[t].header.value].representative);
    const auto blk = std::span(xs).subspan(t * 64, 64);
    CHECK(block_distortion(blk, dec[t].reproduction, code.bank().spec()) / 64 ==
          doctest::Approx(trace[t].distortion));
  }
  CHECK(encode_stream(code, xs) == enc);
  CHECK(pack_stream(layout, encode_stream(code, xs)) == bytes);
}

TEST_CASE("single block uses the initialization cell") {
  const auto code = make_code(64);
  const auto xs = stream_of(code, {0.2, 0.8}, 1, 1);
  const auto enc = encode_stream(code, xs);
  REQUIRE(enc.size() == 1);
  CHECK(enc[0].header.value == code.initial_cell());
  const auto dec = decode_stream(code, enc);
  const auto& g = code.bank().grid();
  CHECK(dec[0].theta_hat == g.cells()[g.locate(code.bank().family().centroid())].representative);

  CHECK_THROWS_AS(encode_stream(code, std::span(xs).first(63)), DomainError);
  CHECK_THROWS_AS(encode_stream(code, std::span<const double>{}), DomainError);
}

TEST_CASE("memory dependence") {
  const auto code = make_code(64);
  auto xs = stream_of(code, {0.6, 0.4}, 8, 6);
  const auto enc = encode_stream(code, xs);

  // Permuting block 2 leaves header 3 unchanged.
  auto perm = xs;
  std::reverse(perm.begin() + 128, perm.begin() + 192);
  const auto penc = encode_stream(code, perm);
  CHECK(penc[3].header == enc[3].header);

  // Shifting by one block shifts the output from t = 2 on.
  const auto shifted = encode_stream(code, std::span(xs).subspan(64));
  for (std::size_t t = 1; t < shifted.size(); ++t) CHECK(shifted[t] == enc[t + 1]);
}

TEST_CASE("headers concentrate near the source cell") {
  const auto code = make_code(1024);
  const auto& g = code.bank().grid();
  const ParamVector theta = g.cells()[g.locate({0.7, 0.3})].representative;
  const double reach = 2 * std::sqrt(2.0) * g.cell_side();
  std::size_t close_runs = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto enc = encode_stream(code, stream_of(code, theta, 50 + s, 6));
    std::size_t close = 0;
    for (std::size_t t = 1; t < enc.size(); ++t)
      close += distance(g.cells()[enc[t].header.value].representative, theta) <= reach;
    close_runs += 2 * close > enc.size() - 1;
  }
  CHECK(close_runs > 10);
}

TEST_CASE("malformed streams are rejected whole") {
  const auto code = make_code(64);
  const auto layout = layout_of(code.bank());
  const auto enc = encode_stream(code, stream_of(code, {0.7, 0.3}, 2, 4));
  const auto bytes = pack_stream(layout, enc);

  for (std::size_t cut = 0; cut < bytes.size(); cut += 7)
    CHECK_THROWS_AS(unpack_stream(layout, std::span(bytes).first(cut)), FormatError);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    auto bad = bytes;
    bad[i] ^= 0x10;
    CHECK_THROWS_AS(unpack_stream(layout, bad), FormatError);
  }
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(unpack_stream(layout, extra), FormatError);

  auto other = layout;
  other.n = 128;
  CHECK_THROWS_AS(unpack_stream(other, bytes), FormatError);

  auto bad_header = enc;
  bad_header[1].header.value = code.bank().grid().cell_count();
  CHECK_THROWS_AS(decode_stream(code, bad_header), FormatError);
  auto bad_body = enc;
  bad_body[2].body.pop_back();
  CHECK_THROWS_AS(decode_stream(code, bad_body), FormatError);
  auto bad_index = enc;
  bad_index[0].body[0] = 1u << code.bank().sub_rate_bits();
  CHECK_THROWS_AS(decode_stream(code, bad_index), FormatError);
}

TEST_CASE("nearest-neighbor first stage") {
  const auto code = make_code(16);
  const auto& bank = code.bank();
  const auto xs = stream_of(code, {0.4, 0.6}, 4, 12);
  std::vector<BlockTrace> trace;
  encode_stream(code, xs, &trace);
  for (std::size_t t = 0; t < 12; ++t) {
    const auto blk = std::span(xs).subspan(t * 16, 16);
    double d_nn = 0.0;
    const auto e = nn_first_stage_encode(bank, blk, &d_nn);
    CHECK(d_nn <= trace[t].distortion * 16 + 1e-12);

    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t c = 0; c < bank.grid().cell_count(); ++c) {
      double d = 0.0;
      encode_with_cell(bank, c, blk, &d);
      if (d < best_d) best_d = d, best = c;
    }
    CHECK(e.header.value == best);
    CHECK(d_nn == doctest::Approx(best_d));
  }

  // One cell: plain nearest-neighbor coding.
  auto fam = shifted_uniforms();
  auto quad = std::make_shared<const QuadratureGrid>(fam->support());
  CodeBank single(fam, 1, 2.0, DistortionSpec(2, 1.5), {}, quad);
  REQUIRE(single.grid().cell_count() == 1);
  const double x = 0.9;
  const auto e = nn_first_stage_encode(single, std::span(&x, 1));
  CHECK(e.header.width == 0);
  CHECK(e.body[0] == nn_encode(single.codebook(0), std::span(&x, 1), single.spec()));
}

TEST_CASE("memory never helps the encoder") {
  CodeDesignConfig design;
  design.sub_dim = 2;
  design.method = DesignMethod::samples;
  const auto code = make_code(16, 1.0, design);
  CHECK(code.bank().sub_blocks() == 8);
  CHECK(code.bank().sub_rate_bits() == 2);
  const auto xs = stream_of(code, {0.3, 0.7}, 6, 5);
  const auto enc = encode_stream(code, xs);
  const auto dec = decode_stream(code, enc);
  for (std::size_t t = 0; t < enc.size(); ++t) {
    const auto blk = std::span(xs).subspan(t * 16, 16);
    const auto& cb = code.bank().codebook(enc[t].header.value);
    for (std::size_t j = 0; j < 8; ++j) {
      const auto sub = blk.subspan(2 * j, 2);
      double d_nn = 0.0;
      nn_encode(cb, sub, code.bank().spec(), d_nn);
      CHECK(d_nn <= block_distortion(sub, std::span(dec[t].reproduction).subspan(2 * j, 2), code.bank().spec()));
    }
  }
}

TEST_CASE("codebooks are designed once under contention") {
  const auto code = make_code(64);
  const auto& bank = code.bank();
  std::vector<const Codebook*> seen(4, nullptr);
  std::vector<std::thread> pool;
  for (int w = 0; w < 4; ++w) pool.emplace_back([&, w] { seen[w] = &bank.codebook(3); });
  for (auto& t : pool) t.join();
  for (auto* p : seen) CHECK(p == seen[0]);
  CHECK(bank.designed_count() == 1);
  CHECK(bank.design_for(bank.grid().cells()[3].representative).codewords == seen[0]->codewords);
}
