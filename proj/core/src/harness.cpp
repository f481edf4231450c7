#include "uq/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "uq/errors.hpp"
#include "uq/rng.hpp"

namespace uq {
namespace {

using Clock = std::chrono::steady_clock;

constexpr double kQuadratureTolerance = 2e-3;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int prec) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string short_theta(const ParamVector& theta) {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < theta.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.4g", theta[i]);
    out += (i ? "," : "") + std::string(buf);
  }
  return out.substr(0, 20);
}

std::string sci(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double se_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

// Resources shared by every trial at one block length.
struct LengthContext {
  std::size_t n = 0;
  std::shared_ptr<const TwoStageCode> code;
  StreamLayout layout;
  double header_bound = 0.0;
};

// Resources shared by every trial at one (theta, n).
struct PointContext {
  std::size_t theta_index = 0;
  ParamVector theta;
  const LengthContext* length = nullptr;
  std::unique_ptr<SourceModel> model;
  std::vector<double> density;
  Codebook matched;
  double matched_expected = 0.0;
  double nearest = 0.0;
  std::vector<double> theta_measures;
  double lipschitz_max = 0.0;

  std::mutex mu;
  std::unordered_map<std::size_t, double> cell_dv;
  std::unordered_map<std::size_t, double> cell_distortion;
  std::unordered_map<std::size_t, double> candidate_dv;
};

double dv_to(const PointContext& pc, const ParamVector& eta) {
  const auto& quad = pc.length->code->bank().quadrature();
  const SourceModel other(pc.model->family_ptr(), eta);
  return variational_distance(pc.density, tabulate(other, quad), quad);
}

template <class F>
double cached(PointContext& pc, std::unordered_map<std::size_t, double>& map, std::size_t key, F&& compute) {
  {
    std::lock_guard lock(pc.mu);
    auto it = map.find(key);
    if (it != map.end()) return it->second;
  }
  const double v = compute();
  std::lock_guard lock(pc.mu);
  map.emplace(key, v);
  return v;
}

TrialRecord run_trial(const ExperimentConfig& cfg, PointContext& pc, std::size_t trial) {
  const auto start = Clock::now();
  const auto& code = *pc.length->code;
  const auto& bank = code.bank();
  const auto& grid = bank.grid();
  const auto& spec = bank.spec();
  const std::size_t n = pc.length->n;
  const std::size_t T = cfg.blocks;
  const auto& quad = bank.quadrature();

  TrialRecord r;
  r.theta = pc.theta;
  r.theta_index = pc.theta_index;
  r.n = n;
  r.trial = trial;
  r.seed = derive_seed(cfg.seed, {pc.theta_index, n, trial});
  r.header_bits = cfg.mode == Mode::matched_oracle ? 0 : bank.header_bits();
  r.rate_total = static_cast<double>(bank.rate_bits() + r.header_bits) / static_cast<double>(n);

  const auto stream = sample(*pc.model, r.seed, T * n);
  auto block = [&](std::size_t t) { return std::span<const double>(stream).subspan(t * n, n); };

  const bool exact_redundancy = cfg.design.method == DesignMethod::density && !cfg.unbounded.enabled &&
                                cfg.mode == Mode::two_stage;

  auto finish = [&](const std::vector<double>& reproduction, std::span<const double> x) {
    if (!cfg.unbounded.enabled) return block_distortion(x, reproduction, spec) / static_cast<double>(n);
    const auto& u = cfg.unbounded;
    const auto out = robust_reencode(x, reproduction, u.delta, u.ref_letter, u.M, spec);
    return block_distortion(x, out, spec) / static_cast<double>(n);
  };

  std::vector<double> dv, d_two, d_match, red;
  std::vector<EncodedBlock> encoded;
  std::vector<std::size_t> cells(T, 0);

  if (cfg.mode == Mode::two_stage) {
    std::vector<BlockTrace> trace;
    encoded = encode_stream(code, stream, &trace);
    for (std::size_t t = 0; t < T; ++t) cells[t] = trace[t].cell;
    for (std::size_t t = 1; t < T; ++t) {
      const auto& est = trace[t].estimate;
      const std::size_t cell = trace[t].cell;
      const ParamVector& rep = grid.cells()[cell].representative;
      const double dv_rep = cached(pc, pc.cell_dv, cell, [&] { return dv_to(pc, rep); });
      const double dv_star = cached(pc, pc.candidate_dv, est.index, [&] { return dv_to(pc, est.theta); });
      // Minimum-distance bound on the previous block, then the chain through the header.
      const auto emp = code.estimator().empirical_measures(block(t - 1));
      double delta_theta = 0.0;
      for (std::size_t s = 0; s < emp.size(); ++s)
        delta_theta = std::max(delta_theta, std::abs(pc.theta_measures[s] - emp[s]));
      const double rhs = 2.0 * delta_theta + 1.5 / static_cast<double>(n) + 3.0 * pc.nearest;
      if (dv_star > rhs + kQuadratureTolerance) ++r.bound_violations;
      const double step = distance(est.theta, rep);
      const double chain = rhs + lipschitz_bound(bank.family(), step) * step;
      if (dv_rep > chain + kQuadratureTolerance) ++r.bound_violations;
      dv.push_back(dv_rep);
      if (grid.cells()[cell].projected) ++r.boundary_blocks;
    }
  } else if (cfg.mode == Mode::nn_first_stage) {
    std::vector<BlockTrace> trace;
    encode_stream(code, stream, &trace);
    for (std::size_t t = 0; t < T; ++t) {
      double d_nn = 0.0;
      encoded.push_back(nn_first_stage_encode(bank, block(t), &d_nn));
      cells[t] = static_cast<std::size_t>(encoded.back().header.value);
      // Pointwise argmin: never worse than the two-stage choice on the same block.
      const auto& cb2 = bank.codebook(trace[t].cell);
      const double d_two = block_distortion(block(t), reproduce_body(cb2, encode_body(cb2, block(t), spec)), spec);
      if (d_nn > d_two + 1e-9 * (1.0 + d_two)) ++r.argmin_violations;
      if (t == 0) continue;
      const ParamVector& rep = grid.cells()[cells[t]].representative;
      dv.push_back(cached(pc, pc.cell_dv, cells[t], [&] { return dv_to(pc, rep); }));
      if (grid.cells()[cells[t]].projected) ++r.boundary_blocks;
    }
  } else {
    dv.assign(T - 1, 0.0);
  }

  // Roundtrip through the wire format; reproductions must match the encoder's choices.
  if (cfg.mode != Mode::matched_oracle) {
    const auto bytes = pack_stream(pc.length->layout, encoded);
    const auto back = unpack_stream(pc.length->layout, bytes);
    const auto decoded = decode_stream(code, back);
    r.roundtrip_ok = back == encoded;
    for (std::size_t t = 0; t < T && r.roundtrip_ok; ++t)
      r.roundtrip_ok = decoded[t].reproduction == reproduce_body(bank.codebook(cells[t]), encoded[t].body) &&
                       decoded[t].theta_hat == grid.cells()[cells[t]].representative;
  }

  for (std::size_t t = 1; t < T; ++t) {
    const auto x = block(t);
    const auto matched_body = encode_body(pc.matched, x, spec);
    const double dm = finish(reproduce_body(pc.matched, matched_body), x);
    double dt = dm;
    if (cfg.mode != Mode::matched_oracle)
      dt = finish(reproduce_body(bank.codebook(cells[t]), encoded[t].body), x);
    d_two.push_back(dt);
    d_match.push_back(dm);
    if (cfg.mode == Mode::matched_oracle) {
      red.push_back(0.0);
    } else if (exact_redundancy) {
      const double dc = cached(pc, pc.cell_distortion, cells[t], [&] {
        return expected_distortion(bank.codebook(cells[t]), pc.density, quad, spec);
      });
      red.push_back(dc - pc.matched_expected);
    } else {
      red.push_back(dt - dm);
    }
  }

  r.dv_mean = std::clamp(mean_of(dv), 0.0, 1.0);
  r.dv_max = dv.empty() ? 0.0 : std::clamp(*std::max_element(dv.begin(), dv.end()), 0.0, 1.0);
  r.distortion_twostage = mean_of(d_two);
  r.distortion_matched = mean_of(d_match);
  r.redundancy = mean_of(red);
  r.redundancy_se = se_of(red);
  r.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return r;
}

template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < std::min<std::size_t>(threads, count); ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
          next = count;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw FormatError("bad number '" + s + "' in column " + what);
  return v;
}

std::uint64_t parse_uint(const std::string& s, const std::string& what) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw FormatError("bad integer '" + s + "' in column " + what);
  return std::strtoull(s.c_str(), nullptr, 10);
}

double metric_value(const TrialRecord& r, Metric m) { return m == Metric::dv_error ? r.dv_mean : r.redundancy; }

struct Ols {
  double slope, intercept, r2;
};

Ols ols(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = mean_of(x), my = mean_of(y);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  Ols o;
  o.slope = sxy / sxx;
  o.intercept = my - o.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (o.intercept + o.slope * x[i]);
    sse += e * e;
  }
  o.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  return o;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("error writing " + path.string());
}

}  // namespace

bool ExperimentResult::all_passed() const {
  return std::all_of(invariants.begin(), invariants.end(), [](const auto& i) { return i.passed; });
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  validate_config(cfg);
  const auto start = Clock::now();
  const auto& family = cfg.family;
  const DistortionSpec spec = DistortionSpec::for_support(cfg.p, family->support());
  auto quad = std::make_shared<const QuadratureGrid>(family->support(), cfg.quadrature_points);
  const unsigned threads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());

  std::vector<LengthContext> lengths(cfg.ns.size());
  for (std::size_t i = 0; i < cfg.ns.size(); ++i) {
    auto& lc = lengths[i];
    lc.n = cfg.ns[i];
    lc.code = std::make_shared<const TwoStageCode>(
        TwoStageCode::build(family, lc.n, cfg.rate, spec, cfg.design, cfg.estimator, quad));
    lc.layout = layout_of(lc.code->bank());
    lc.header_bound = header_bits_bound(family->dim(), lc.n, family->cube_side());
  }

  std::vector<std::unique_ptr<PointContext>> points;
  for (std::size_t ti = 0; ti < cfg.thetas.size(); ++ti)
    for (const auto& lc : lengths) {
      auto pc = std::make_unique<PointContext>();
      pc->theta_index = ti;
      pc->theta = cfg.thetas[ti];
      pc->length = &lc;
      points.push_back(std::move(pc));
    }
  parallel_for(points.size(), threads, [&](std::size_t i) {
    auto& pc = *points[i];
    const auto& code = *pc.length->code;
    pc.model = std::make_unique<SourceModel>(family, pc.theta);
    pc.density = tabulate(*pc.model, *quad);
    pc.matched = code.bank().design_for(pc.theta);
    if (cfg.design.method == DesignMethod::density)
      pc.matched_expected = expected_distortion(pc.matched, pc.density, *quad, spec);
    pc.nearest = nearest_candidate_distance(*family, pc.theta, code.estimator().grid(), *quad);
    pc.theta_measures = code.estimator().model_measures(pc.theta);
  });

  std::vector<std::pair<std::size_t, std::size_t>> tasks;
  for (std::size_t p = 0; p < points.size(); ++p)
    for (std::size_t t = 0; t < cfg.trials; ++t) tasks.emplace_back(p, t);
  std::vector<TrialRecord> records(tasks.size());
  parallel_for(tasks.size(), threads, [&](std::size_t i) {
    records[i] = run_trial(cfg, *points[tasks[i].first], tasks[i].second);
  });
  std::sort(records.begin(), records.end(), [](const TrialRecord& a, const TrialRecord& b) {
    if (a.theta_index != b.theta_index) return a.theta_index < b.theta_index;
    if (a.n != b.n) return a.n < b.n;
    return a.seed < b.seed;
  });

  ExperimentResult res;
  for (const auto& pcp : points) {
    const auto& pc = *pcp;
    CellSummary cs;
    cs.theta_index = pc.theta_index;
    cs.theta = pc.theta;
    cs.n = pc.length->n;
    std::vector<double> dv, red, se;
    for (const auto& r : records) {
      if (r.theta_index != cs.theta_index || r.n != cs.n) continue;
      ++cs.trials;
      dv.push_back(r.dv_mean);
      red.push_back(r.redundancy);
      se.push_back(r.redundancy_se);
      cs.boundary_blocks += r.boundary_blocks;
      cs.bound_violations += r.bound_violations;
      cs.wall_seconds += r.wall_seconds;
    }
    cs.dv_median = median(dv);
    cs.dv_q25 = quantile(dv, 0.25);
    cs.dv_q75 = quantile(dv, 0.75);
    cs.red_median = median(red);
    cs.red_q25 = quantile(red, 0.25);
    cs.red_q75 = quantile(red, 0.75);
    cs.red_mean = mean_of(red);
    cs.red_pooled_se = red.size() > 1 ? se_of(red) : (se.empty() ? 0.0 : se[0]);
    const auto& bank = pc.length->code->bank();
    cs.header_bits = bank.header_bits();
    cs.header_bound = pc.length->header_bound;
    cs.cells = bank.grid().cell_count();
    cs.rate_total = rate_per_letter(bank);
    cs.grid_slack = 3.0 * pc.nearest;
    cs.lipschitz = lipschitz_bound(*family, std::sqrt(static_cast<double>(family->dim())) * bank.grid().cell_side());
    res.cells.push_back(std::move(cs));
  }

  // In-run invariants.
  const bool coded = cfg.mode != Mode::matched_oracle;
  {
    InvariantResult inv{"wire roundtrip", true, ""};
    std::size_t bad = 0;
    for (const auto& r : records) bad += r.roundtrip_ok ? 0 : 1;
    inv.passed = bad == 0;
    inv.detail = std::to_string(bad) + " of " + std::to_string(records.size()) + " trials failed";
    res.invariants.push_back(inv);
  }
  {
    InvariantResult inv{"minimum-distance bound", true, ""};
    std::size_t bad = 0, total = 0;
    for (const auto& r : records) {
      bad += r.bound_violations ? 1 : 0;
      ++total;
    }
    inv.passed = bad == 0;
    inv.detail = std::to_string(bad) + " of " + std::to_string(total) + " trials with violations";
    res.invariants.push_back(inv);
  }
  {
    InvariantResult inv{"redundancy nonnegativity", true, ""};
    std::ostringstream d;
    if (cfg.mode == Mode::nn_first_stage) {
      // The header describes the current block, so the code may beat the rate-R matched baseline.
      std::size_t bad = 0;
      for (const auto& r : res.records) bad += r.argmin_violations;
      inv.name = "nn first stage argmin";
      inv.passed = bad == 0;
      inv.detail = std::to_string(bad) + " block(s) worse than the two-stage choice";
      res.invariants.push_back(inv);
    }
    for (const auto& cs : res.cells) {
      if (cfg.mode == Mode::nn_first_stage) break;
      if (cs.red_mean < -3.0 * cs.red_pooled_se - 1e-12) {
        inv.passed = false;
        d << "theta " << short_theta(cs.theta) << " n " << cs.n << " mean " << sci(cs.red_mean) << " se "
          << sci(cs.red_pooled_se) << "; ";
      }
    }
    if (cfg.mode != Mode::nn_first_stage) {
      inv.detail = inv.passed ? "all cells >= -3 se" : d.str();
      res.invariants.push_back(inv);
    }
  }
  {
    InvariantResult inv{"monotone identification", true, ""};
    std::ostringstream d;
    for (std::size_t ti = 0; ti < cfg.thetas.size() && coded; ++ti) {
      std::vector<std::pair<std::size_t, double>> seq;
      for (const auto& cs : res.cells)
        if (cs.theta_index == ti) seq.emplace_back(cs.n, cs.dv_median);
      std::sort(seq.begin(), seq.end());
      std::size_t inversions = 0;
      for (std::size_t i = 1; i < seq.size(); ++i)
        if (seq[i].second > seq[i - 1].second + 1e-12) ++inversions;
      if (inversions > 1) inv.passed = false;
      d << "theta " << ti << ": " << inversions << " inversion(s); ";
    }
    inv.detail = coded ? d.str() : "not applicable";
    res.invariants.push_back(inv);
  }
  {
    InvariantResult inv{"header overhead law", true, ""};
    std::ostringstream d;
    const double k = static_cast<double>(family->dim());
    for (const auto& lc : lengths) {
      const auto& grid = lc.code->bank().grid();
      unsigned expect = 0;
      while ((std::uint64_t{1} << expect) < grid.cell_count()) ++expect;
      const double h = grid.header_bits();
      const bool ok = grid.header_bits() == expect && h <= lc.header_bound &&
                      h / std::log2(static_cast<double>(lc.n)) <= k + 2.0;
      if (!ok) {
        inv.passed = false;
        d << "n " << lc.n << " header " << grid.header_bits() << "; ";
      }
    }
    inv.detail = inv.passed ? "header_bits = ceil(log2 cells) <= bound, overhead n/log2 n <= k + 2" : d.str();
    res.invariants.push_back(inv);
  }

  res.records = std::move(records);
  res.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return res;
}

Metric parse_metric(const std::string& name) {
  if (name == "dv" || name == "dv_error") return Metric::dv_error;
  if (name == "red" || name == "redundancy") return Metric::redundancy;
  throw ConfigError("metric", "expected dv or red");
}

RateFit fit_rate_exponent(std::span<const TrialRecord> records, Metric metric, std::uint64_t seed,
                          std::size_t min_trials) {
  std::map<std::size_t, std::vector<double>> by_n;
  for (const auto& r : records) by_n[r.n].push_back(metric_value(r, metric));
  if (by_n.size() < 4)
    throw AnalysisError("rate fit needs at least 4 distinct n values, got " + std::to_string(by_n.size()));
  std::vector<double> x, y;
  for (const auto& [n, v] : by_n) {
    if (v.size() < min_trials)
      throw AnalysisError("rate fit needs at least " + std::to_string(min_trials) + " trials per n; n = " +
                          std::to_string(n) + " has " + std::to_string(v.size()));
    const double m = median(v);
    if (!(m > 0.0)) throw AnalysisError("median metric at n = " + std::to_string(n) + " is not positive");
    x.push_back(std::log(static_cast<double>(n)));
    y.push_back(std::log(m));
  }
  const Ols o = ols(x, y);
  RateFit fit;
  fit.metric = metric;
  fit.slope = o.slope;
  fit.intercept = o.intercept;
  fit.r2 = o.r2;
  fit.n_values = by_n.size();

  Rng rng(seed);
  std::vector<double> slopes;
  std::vector<double> resample;
  for (int b = 0; b < 200; ++b) {
    std::vector<double> yb;
    bool ok = true;
    for (const auto& [n, v] : by_n) {
      resample.resize(v.size());
      for (auto& s : resample) s = v[rng.below(v.size())];
      const double m = median(resample);
      if (!(m > 0.0)) ok = false;
      yb.push_back(ok ? std::log(m) : 0.0);
    }
    if (ok) slopes.push_back(ols(x, yb).slope);
  }
  if (slopes.empty()) {
    fit.ci_lo = fit.ci_hi = fit.slope;
  } else {
    fit.ci_lo = quantile(slopes, 0.05);
    fit.ci_hi = quantile(slopes, 0.95);
  }
  return fit;
}

std::string csv_header() {
  return "theta,n,trial,seed,dv_mean,dv_max,distortion_twostage,distortion_matched,redundancy,redundancy_se,"
         "rate_total,header_bits,bound_violations";
}

std::string records_to_csv(std::span<const TrialRecord> records) {
  std::string out = csv_header() + "\n";
  for (const auto& r : records) {
    out += to_string(r.theta) + "," + std::to_string(r.n) + "," + std::to_string(r.trial) + "," +
           std::to_string(r.seed) + "," + fmt(r.dv_mean) + "," + fmt(r.dv_max) + "," + fmt(r.distortion_twostage) +
           "," + fmt(r.distortion_matched) + "," + fmt(r.redundancy) + "," + fmt(r.redundancy_se) + "," +
           fmt(r.rate_total) + "," + std::to_string(r.header_bits) + "," + std::to_string(r.bound_violations) + "\n";
  }
  return out;
}

std::vector<TrialRecord> parse_records_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != csv_header()) throw FormatError("unexpected CSV header");
  std::vector<TrialRecord> out;
  std::map<std::string, std::size_t> theta_ids;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != kCsvColumns)
      throw FormatError("row " + std::to_string(row) + " has " + std::to_string(f.size()) + " columns, expected 13");
    TrialRecord r;
    for (const auto& part : split(f[0], ';')) r.theta.coords.push_back(parse_double(part, "theta"));
    r.n = parse_uint(f[1], "n");
    r.trial = parse_uint(f[2], "trial");
    r.seed = parse_uint(f[3], "seed");
    r.dv_mean = parse_double(f[4], "dv_mean");
    r.dv_max = parse_double(f[5], "dv_max");
    r.distortion_twostage = parse_double(f[6], "distortion_twostage");
    r.distortion_matched = parse_double(f[7], "distortion_matched");
    r.redundancy = parse_double(f[8], "redundancy");
    r.redundancy_se = parse_double(f[9], "redundancy_se");
    r.rate_total = parse_double(f[10], "rate_total");
    r.header_bits = static_cast<unsigned>(parse_uint(f[11], "header_bits"));
    r.bound_violations = parse_uint(f[12], "bound_violations");
    r.theta_index = theta_ids.emplace(f[0], theta_ids.size()).first->second;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<TrialRecord> load_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_records_csv(ss.str());
}

std::string summary_text(const ExperimentResult& result, std::span<const RateFit> fits) {
  std::ostringstream o;
  o << "theta                n      trials  dv_median   dv_iqr      red_median  red_se      hdr  bound   cells  "
       "rate      slack       lipschitz   bnd_blk  viol\n";
  for (const auto& c : result.cells) {
    char line[512];
    std::snprintf(line, sizeof line,
                  "%-20s %-6zu %-7zu %-11s %-11s %-11s %-11s %-4u %-7s %-6zu %-9s %-11s %-11s %-8zu %zu\n",
                  short_theta(c.theta).c_str(), c.n, c.trials, sci(c.dv_median).c_str(),
                  sci(c.dv_q75 - c.dv_q25).c_str(), sci(c.red_median).c_str(), sci(c.red_pooled_se).c_str(),
                  c.header_bits, fixed(c.header_bound, 2).c_str(), c.cells, fixed(c.rate_total, 5).c_str(),
                  sci(c.grid_slack).c_str(), sci(c.lipschitz).c_str(), c.boundary_blocks, c.bound_violations);
    o << line;
  }
  for (const auto& f : fits) {
    o << "\nfit " << (f.metric == Metric::dv_error ? "dv_error" : "redundancy") << ": slope " << fixed(f.slope, 4)
      << " (90% CI " << fixed(f.ci_lo, 4) << " .. " << fixed(f.ci_hi, 4) << "), intercept " << fixed(f.intercept, 4)
      << ", R^2 " << fixed(f.r2, 4) << ", n values " << f.n_values;
  }
  if (!fits.empty()) o << "\n";
  o << "\ninvariants:\n";
  for (const auto& i : result.invariants)
    o << "  [" << (i.passed ? "pass" : "FAIL") << "] " << i.name << ": " << i.detail << "\n";
  o << "\nwall time " << fixed(result.wall_seconds, 2) << " s\n";
  return o.str();
}

std::string plot_csv(const ExperimentResult& result) {
  std::string out = "metric,theta,n,median,q25,q75\n";
  for (const auto& c : result.cells)
    out += "dv_error," + to_string(c.theta) + "," + std::to_string(c.n) + "," + fmt(c.dv_median) + "," +
           fmt(c.dv_q25) + "," + fmt(c.dv_q75) + "\n";
  for (const auto& c : result.cells)
    out += "redundancy," + to_string(c.theta) + "," + std::to_string(c.n) + "," + fmt(c.red_median) + "," +
           fmt(c.red_q25) + "," + fmt(c.red_q75) + "\n";
  return out;
}

void emit_outputs(const ExperimentResult& result, std::span<const RateFit> fits, const OutputPaths& paths) {
  if (!paths.csv.empty()) write_text(paths.csv, records_to_csv(result.records));
  if (!paths.summary.empty()) write_text(paths.summary, summary_text(result, fits));
  if (!paths.plot.empty()) write_text(paths.plot, plot_csv(result));
}

}  // namespace uq
