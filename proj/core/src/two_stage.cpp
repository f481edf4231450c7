#include "uq/two_stage.hpp"

#include <algorithm>
#include <limits>

#include <boost/crc.hpp>

#include "uq/bitio.hpp"
#include "uq/errors.hpp"

namespace uq {
namespace {

constexpr char kStreamMagic[4] = {'U', 'Q', '2', 'S'};

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  boost::crc_32_type crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

}  // namespace

CodeBank::CodeBank(FamilyPtr family, std::size_t n, double rate, DistortionSpec spec, CodeDesignConfig design,
                   std::shared_ptr<const QuadratureGrid> quad)
    : family_(std::move(family)), n_(n), spec_(spec), design_(design), quad_(std::move(quad)),
      grid_(build_grid(*family_, n)) {
  if (design_.sub_dim == 0 || n_ % design_.sub_dim != 0)
    throw DomainError("block length " + std::to_string(n_) + " is not a multiple of the sub-block dimension " +
                      std::to_string(design_.sub_dim));
  if (design_.method == DesignMethod::density && design_.sub_dim != 1)
    throw DomainError("density design needs sub-block dimension 1");
  if (!quad_) quad_ = std::make_shared<QuadratureGrid>(family_->support());
  sub_bits_ = rate_bits_for(design_.sub_dim, rate);
  if (static_cast<std::uint64_t>(sub_bits_) * sub_blocks() > std::numeric_limits<std::uint16_t>::max())
    throw CapacityError("body wider than 65535 bits");
  const std::size_t cells = grid_.cell_count();
  once_ = std::make_unique<std::once_flag[]>(cells);
  books_ = std::make_unique<std::unique_ptr<const Codebook>[]>(cells);
}

Codebook CodeBank::design_for(const ParamVector& theta) const {
  const SourceModel model(family_, theta);
  if (design_.method == DesignMethod::density) {
    Codebook cb = lloyd_design_density(tabulate(model, *quad_), *quad_, sub_bits_, spec_);
    cb.provenance.seed = design_.design_seed;
    return cb;
  }
  LloydBudget budget = design_.budget;
  if (budget.training_blocks == 0) budget.training_blocks = 200 * (std::size_t{1} << sub_bits_);
  const auto data = sample(model, design_.design_seed, budget.training_blocks * design_.sub_dim);
  Codebook cb = lloyd_design_blocks(data, design_.sub_dim, sub_bits_, spec_, family_->support(), budget);
  cb.provenance.seed = design_.design_seed;
  return cb;
}

const Codebook& CodeBank::codebook(std::size_t cell) const {
  if (cell >= grid_.cell_count()) throw FormatError("cell index " + std::to_string(cell) + " out of range");
  std::call_once(once_[cell], [&] {
    books_[cell] = std::make_unique<const Codebook>(design_for(grid_.cells()[cell].representative));
  });
  return *books_[cell];
}

std::size_t CodeBank::designed_count() const {
  // Only meaningful once concurrent designs have finished.
  std::size_t c = 0;
  for (std::size_t i = 0; i < grid_.cell_count(); ++i)
    if (books_[i]) ++c;
  return c;
}

std::vector<std::uint32_t> encode_body(const Codebook& sub, std::span<const double> x_block,
                                       const DistortionSpec& spec, double* distortion) {
  if (x_block.size() % sub.n != 0) throw DomainError("block length is not a multiple of the codebook length");
  const std::size_t parts = x_block.size() / sub.n;
  std::vector<std::uint32_t> body(parts);
  double total = 0.0;
  for (std::size_t j = 0; j < parts; ++j) {
    double d = 0.0;
    body[j] = static_cast<std::uint32_t>(nn_encode(sub, x_block.subspan(j * sub.n, sub.n), spec, d));
    total += d;
  }
  if (distortion) *distortion = total;
  return body;
}

std::vector<double> reproduce_body(const Codebook& sub, std::span<const std::uint32_t> body) {
  std::vector<double> out;
  out.reserve(body.size() * sub.n);
  for (auto idx : body) {
    if (idx >= sub.size()) throw FormatError("body index " + std::to_string(idx) + " exceeds the codebook size");
    const auto cw = sub.codeword(idx);
    out.insert(out.end(), cw.begin(), cw.end());
  }
  return out;
}

EncodedBlock encode_with_cell(const CodeBank& bank, std::size_t cell, std::span<const double> x_block,
                              double* distortion) {
  if (x_block.size() != bank.n()) throw DomainError("block length does not match the code");
  EncodedBlock b;
  b.header = HeaderBits{cell, bank.header_bits()};
  b.body = encode_body(bank.codebook(cell), x_block, bank.spec(), distortion);
  return b;
}

TwoStageCode::TwoStageCode(std::shared_ptr<const CodeBank> bank, std::shared_ptr<const MinDistanceEstimator> est)
    : bank_(std::move(bank)), estimator_(std::move(est)) {
  if (!bank_ || !estimator_) throw DomainError("two-stage code needs a bank and an estimator");
  if (estimator_->family().dim() != bank_->family().dim())
    throw DomainError("estimator and bank disagree on the parameter dimension");
  initial_cell_ = static_cast<std::size_t>(encode_param(bank_->grid(), bank_->family().centroid()).value);
}

TwoStageCode TwoStageCode::build(FamilyPtr family, std::size_t n, double rate, const DistortionSpec& spec,
                                 const CodeDesignConfig& design, const EstimatorConfig& est,
                                 std::shared_ptr<const QuadratureGrid> quad) {
  if (!quad) quad = std::make_shared<QuadratureGrid>(family->support());
  auto bank = std::make_shared<const CodeBank>(family, n, rate, spec, design, quad);
  auto estimator =
      std::make_shared<const MinDistanceEstimator>(family, make_candidate_grid(*family, n, est), quad);
  return TwoStageCode(std::move(bank), std::move(estimator));
}

std::vector<EncodedBlock> encode_stream(const TwoStageCode& code, std::span<const double> stream,
                                        std::vector<BlockTrace>* trace) {
  const std::size_t n = code.n();
  if (stream.empty() || stream.size() % n != 0)
    throw DomainError("stream must hold a nonzero whole number of blocks of length " + std::to_string(n));
  const std::size_t T = stream.size() / n;
  const auto& bank = code.bank();
  std::vector<EncodedBlock> out;
  out.reserve(T);
  if (trace) trace->assign(T, BlockTrace{});
  for (std::size_t t = 0; t < T; ++t) {
    std::size_t cell = code.initial_cell();
    MinDistanceEstimator::Result est;
    if (t > 0) {
      est = code.estimator().estimate(stream.subspan((t - 1) * n, n));
      cell = static_cast<std::size_t>(encode_param(bank.grid(), est.theta).value);
    }
    double d = 0.0;
    out.push_back(encode_with_cell(bank, cell, stream.subspan(t * n, n), &d));
    if (trace) {
      auto& tr = (*trace)[t];
      tr.cell = cell;
      tr.initial = t == 0;
      tr.estimate = std::move(est);
      tr.distortion = d / static_cast<double>(n);
    }
  }
  return out;
}

std::vector<DecodedBlock> decode_stream(const TwoStageCode& code, std::span<const EncodedBlock> encoded) {
  const auto& bank = code.bank();
  std::vector<DecodedBlock> out;
  out.reserve(encoded.size());
  for (const auto& b : encoded) {
    const ParamVector& theta_hat = decode_param(bank.grid(), b.header);
    if (b.body.size() != bank.sub_blocks()) throw FormatError("body length does not match the code");
    DecodedBlock d;
    d.reproduction = reproduce_body(bank.codebook(static_cast<std::size_t>(b.header.value)), b.body);
    d.theta_hat = theta_hat;
    out.push_back(std::move(d));
  }
  return out;
}

double rate_per_letter(const CodeBank& bank) {
  return static_cast<double>(bank.rate_bits() + bank.header_bits()) / static_cast<double>(bank.n());
}

double rate_per_letter(const TwoStageCode& code) { return rate_per_letter(code.bank()); }

EncodedBlock nn_first_stage_encode(const CodeBank& bank, std::span<const double> x_block, double* distortion) {
  if (x_block.size() != bank.n()) throw DomainError("block length does not match the code");
  EncodedBlock best;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t cell = 0; cell < bank.grid().cell_count(); ++cell) {
    double d = 0.0;
    auto b = encode_with_cell(bank, cell, x_block, &d);
    if (d < best_d) {
      best_d = d;
      best = std::move(b);
    }
  }
  if (distortion) *distortion = best_d;
  return best;
}

StreamLayout layout_of(const CodeBank& bank) {
  StreamLayout l;
  l.n = static_cast<std::uint32_t>(bank.n());
  l.rate_bits = static_cast<std::uint16_t>(bank.rate_bits());
  l.header_bits = static_cast<std::uint16_t>(bank.header_bits());
  l.sub_blocks = static_cast<std::uint32_t>(bank.sub_blocks());
  l.sub_rate_bits = static_cast<std::uint16_t>(bank.sub_rate_bits());
  l.cell_count = bank.grid().cell_count();
  return l;
}

std::vector<std::uint8_t> pack_stream(const StreamLayout& layout, std::span<const EncodedBlock> blocks) {
  std::vector<std::uint8_t> out(std::begin(kStreamMagic), std::end(kStreamMagic));
  le::put<std::uint16_t>(out, kStreamFormatVersion);
  le::put<std::uint32_t>(out, layout.n);
  le::put<std::uint16_t>(out, layout.rate_bits);
  le::put<std::uint16_t>(out, layout.header_bits);
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(blocks.size()));
  BitWriter w;
  for (const auto& b : blocks) {
    if (b.header.width != layout.header_bits || b.body.size() != layout.sub_blocks)
      throw FormatError("block widths do not match the stream layout");
    w.put(b.header.value, layout.header_bits);
    for (auto idx : b.body) w.put(idx, layout.sub_rate_bits);
    w.align();
  }
  const auto body = w.take();
  out.insert(out.end(), body.begin(), body.end());
  le::put<std::uint32_t>(out, crc32(out));
  return out;
}

std::vector<EncodedBlock> unpack_stream(const StreamLayout& layout, std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(bytes.begin(), bytes.begin() + 4, std::begin(kStreamMagic)))
    throw FormatError("not a two-stage stream (bad magic)");
  std::size_t off = 4;
  const auto version = le::get<std::uint16_t>(bytes, off);
  if (version != kStreamFormatVersion) throw FormatError("unsupported stream version " + std::to_string(version));
  const auto n = le::get<std::uint32_t>(bytes, off);
  const auto rate_bits = le::get<std::uint16_t>(bytes, off);
  const auto header_bits = le::get<std::uint16_t>(bytes, off);
  const auto count = le::get<std::uint32_t>(bytes, off);
  if (n != layout.n || rate_bits != layout.rate_bits || header_bits != layout.header_bits)
    throw FormatError("stream parameters (n, rate_bits, header_bits) do not match the code");
  const std::uint64_t block_bytes = (static_cast<std::uint64_t>(header_bits) + rate_bits + 7) / 8;
  const std::uint64_t expected = off + block_bytes * count + 4;
  if (bytes.size() < expected) throw FormatError("truncated stream");
  if (bytes.size() > expected) throw FormatError("trailing bytes after stream");
  std::size_t crc_off = bytes.size() - 4;
  const auto stored = le::get<std::uint32_t>(bytes, crc_off);
  if (stored != crc32(bytes.first(bytes.size() - 4))) throw FormatError("stream checksum mismatch");

  BitReader r(bytes.subspan(off, static_cast<std::size_t>(block_bytes * count)));
  std::vector<EncodedBlock> blocks(count);
  for (auto& b : blocks) {
    b.header = HeaderBits{r.get(header_bits), header_bits};
    if (b.header.value >= layout.cell_count)
      throw FormatError("header value " + std::to_string(b.header.value) + " exceeds the cell count");
    b.body.resize(layout.sub_blocks);
    for (auto& idx : b.body) idx = static_cast<std::uint32_t>(r.get(layout.sub_rate_bits));
    r.align();
  }
  return blocks;
}

}  // namespace uq
