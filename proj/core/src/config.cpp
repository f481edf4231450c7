#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "uq/errors.hpp"
#include "uq/harness.hpp"

namespace uq {
namespace {

using json = nlohmann::json;

const json& field(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw ConfigError(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError(path.empty() ? key : path + "." + key, "missing");
  return *it;
}

double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(path, "must be finite");
  return v;
}

double number_at(const json& obj, const std::string& key, const std::string& path) {
  return number(field(obj, key, path), path.empty() ? key : path + "." + key);
}

std::uint64_t unsigned_at(const json& obj, const std::string& key, const std::string& path) {
  const json& j = field(obj, key, path);
  const std::string p = path.empty() ? key : path + "." + key;
  if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<long long>() < 0))
    throw ConfigError(p, "expected a nonnegative integer");
  return j.get<std::uint64_t>();
}

std::vector<double> numbers(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

Density parse_density(const json& j, const std::string& path) {
  const json& kind = field(j, "kind", path);
  if (!kind.is_string()) throw ConfigError(path + ".kind", "expected a string");
  const auto k = kind.get<std::string>();
  try {
    if (k == "uniform") return Density::uniform(number_at(j, "a", path), number_at(j, "b", path));
    if (k == "truncated_gaussian")
      return Density::truncated_gaussian(number_at(j, "mu", path), number_at(j, "sigma", path),
                                         number_at(j, "lo", path), number_at(j, "hi", path));
    if (k == "triangular")
      return Density::triangular(number_at(j, "a", path), number_at(j, "mode", path), number_at(j, "b", path));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
  throw ConfigError(path + ".kind", "unknown density '" + k + "' (uniform, truncated_gaussian, triangular)");
}

Statistic parse_statistic(const json& j, const std::string& path) {
  const json& kind = field(j, "kind", path);
  if (!kind.is_string()) throw ConfigError(path + ".kind", "expected a string");
  const auto k = kind.get<std::string>();
  try {
    if (k == "power") return Statistic::power(static_cast<int>(unsigned_at(j, "exponent", path)));
    if (k == "cosine") return Statistic::cosine(number_at(j, "frequency", path));
    if (k == "sine") return Statistic::sine(number_at(j, "frequency", path));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
  throw ConfigError(path + ".kind", "unknown statistic '" + k + "' (power, cosine, sine)");
}

Support parse_support(const json& j, const std::string& path) {
  const auto v = numbers(j, path);
  if (v.size() != 2) throw ConfigError(path, "expected [lo, hi]");
  try {
    return Support(v[0], v[1]);
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
}

FamilyPtr family_from_json(const json& j, const std::string& path) {
  const json& type = field(j, "type", path);
  if (!type.is_string()) throw ConfigError(path + ".type", "expected a string");
  const auto t = type.get<std::string>();
  const Support support = parse_support(field(j, "support", path), path + ".support");
  try {
    if (t == "mixture") {
      const json& comps = field(j, "components", path);
      if (!comps.is_array()) throw ConfigError(path + ".components", "expected an array");
      std::vector<Density> ds;
      for (std::size_t i = 0; i < comps.size(); ++i)
        ds.push_back(parse_density(comps[i], path + ".components[" + std::to_string(i) + "]"));
      return std::make_shared<const SourceFamily>(MixtureFamily(std::move(ds), support));
    }
    if (t == "exponential") {
      Density ref = parse_density(field(j, "reference", path), path + ".reference");
      const json& stats = field(j, "statistics", path);
      if (!stats.is_array()) throw ConfigError(path + ".statistics", "expected an array");
      std::vector<Statistic> hs;
      for (std::size_t i = 0; i < stats.size(); ++i)
        hs.push_back(parse_statistic(stats[i], path + ".statistics[" + std::to_string(i) + "]"));
      const json& box = field(j, "theta_box", path);
      ThetaBox b{numbers(field(box, "lo", path + ".theta_box"), path + ".theta_box.lo"),
                 numbers(field(box, "hi", path + ".theta_box"), path + ".theta_box.hi")};
      return std::make_shared<const SourceFamily>(ExpFamily(std::move(ref), std::move(hs), std::move(b), support));
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
  throw ConfigError(path + ".type", "unknown family type '" + t + "' (mixture, exponential)");
}

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<document>", std::string("not valid JSON: ") + e.what());
  }
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool power_of_two(std::size_t n) { return n && (n & (n - 1)) == 0; }

}  // namespace

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::two_stage:
      return "two_stage";
    case Mode::nn_first_stage:
      return "nn_first_stage";
    case Mode::matched_oracle:
      return "matched_oracle";
  }
  return "?";
}

FamilyPtr parse_family(const std::string& json_text) {
  const json doc = parse_json(json_text);
  if (doc.is_object() && doc.contains("family")) return family_from_json(doc["family"], "family");
  return family_from_json(doc, "family");
}

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  const json doc = parse_json(text);
  if (!doc.is_object()) throw ConfigError("<document>", "expected a JSON object");
  ExperimentConfig c;
  c.family = family_from_json(field(doc, "family", ""), "family");
  c.family_description = c.family->describe();

  const json& thetas = field(doc, "thetas", "");
  if (!thetas.is_array() || thetas.empty()) throw ConfigError("thetas", "expected a nonempty array");
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    const std::string p = "thetas[" + std::to_string(i) + "]";
    ParamVector th(numbers(thetas[i], p));
    try {
      c.family->require(th);
    } catch (const Error& e) {
      throw ConfigError(p, e.what());
    }
    c.thetas.push_back(std::move(th));
  }

  const json& ns = field(doc, "n", "");
  if (!ns.is_array() || ns.empty()) throw ConfigError("n", "expected a nonempty array of block lengths");
  for (std::size_t i = 0; i < ns.size(); ++i) {
    if (!ns[i].is_number_unsigned()) throw ConfigError("n[" + std::to_string(i) + "]", "expected a positive integer");
    c.ns.push_back(ns[i].get<std::size_t>());
  }

  c.rate = number_at(doc, "rate", "");
  if (doc.contains("p")) c.p = number_at(doc, "p", "");
  c.trials = unsigned_at(doc, "trials", "");
  if (doc.contains("blocks")) c.blocks = unsigned_at(doc, "blocks", "");
  c.seed = unsigned_at(doc, "seed", "");

  if (doc.contains("mode")) {
    const json& m = doc["mode"];
    const std::string s = m.is_string() ? m.get<std::string>() : "";
    if (s == "two_stage") c.mode = Mode::two_stage;
    else if (s == "nn_first_stage") c.mode = Mode::nn_first_stage;
    else if (s == "matched_oracle") c.mode = Mode::matched_oracle;
    else throw ConfigError("mode", "expected two_stage, nn_first_stage or matched_oracle");
  }

  if (doc.contains("estimator")) {
    const json& e = doc["estimator"];
    if (!e.is_object()) throw ConfigError("estimator", "expected an object");
    if (e.contains("pair_cap")) c.estimator.pair_cap = unsigned_at(e, "pair_cap", "estimator");
    if (e.contains("subsample_seed")) c.estimator.subsample_seed = unsigned_at(e, "subsample_seed", "estimator");
    if (e.contains("min_step")) c.estimator.min_step = number_at(e, "min_step", "estimator");
  }

  if (doc.contains("vq")) {
    const json& v = doc["vq"];
    if (!v.is_object()) throw ConfigError("vq", "expected an object");
    if (v.contains("dim")) c.design.sub_dim = unsigned_at(v, "dim", "vq");
    if (v.contains("design")) {
      const json& m = v["design"];
      const std::string s = m.is_string() ? m.get<std::string>() : "";
      if (s == "density") c.design.method = DesignMethod::density;
      else if (s == "samples") c.design.method = DesignMethod::samples;
      else throw ConfigError("vq.design", "expected density or samples");
    } else if (c.design.sub_dim != 1) {
      c.design.method = DesignMethod::samples;
    }
    if (v.contains("design_seed")) c.design.design_seed = unsigned_at(v, "design_seed", "vq");
    if (v.contains("training_blocks")) c.design.budget.training_blocks = unsigned_at(v, "training_blocks", "vq");
    if (v.contains("max_iters")) c.design.budget.max_iters = unsigned_at(v, "max_iters", "vq");
    if (v.contains("tolerance")) c.design.budget.tolerance = number_at(v, "tolerance", "vq");
  }

  if (doc.contains("unbounded")) {
    const json& u = doc["unbounded"];
    if (!u.is_object()) throw ConfigError("unbounded", "expected an object");
    if (u.contains("enabled")) {
      if (!u["enabled"].is_boolean()) throw ConfigError("unbounded.enabled", "expected true or false");
      c.unbounded.enabled = u["enabled"].get<bool>();
    }
    if (c.unbounded.enabled) {
      c.unbounded.delta = number_at(u, "delta", "unbounded");
      c.unbounded.M = number_at(u, "M", "unbounded");
      c.unbounded.ref_letter = number_at(u, "ref_letter", "unbounded");
    }
  }

  if (doc.contains("quadrature_points")) c.quadrature_points = unsigned_at(doc, "quadrature_points", "");
  if (doc.contains("threads")) c.threads = static_cast<unsigned>(unsigned_at(doc, "threads", ""));

  if (doc.contains("output")) {
    const json& o = doc["output"];
    if (!o.is_object()) throw ConfigError("output", "expected an object");
    auto path_at = [&](const char* key) -> std::filesystem::path {
      if (!o.contains(key)) return {};
      if (!o[key].is_string()) throw ConfigError(std::string("output.") + key, "expected a path string");
      std::filesystem::path p = o[key].get<std::string>();
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      return p;
    };
    c.output.csv = path_at("csv");
    c.output.summary = path_at("summary");
    c.output.plot = path_at("plot");
  }

  validate_config(c);
  return c;
}

void validate_config(const ExperimentConfig& c) {
  if (!c.family) throw ConfigError("family", "missing");
  if (c.thetas.empty()) throw ConfigError("thetas", "at least one parameter is required");
  if (c.ns.empty()) throw ConfigError("n", "at least one block length is required");
  for (std::size_t i = 0; i < c.ns.size(); ++i) {
    const std::string p = "n[" + std::to_string(i) + "]";
    if (c.ns[i] < 4) throw ConfigError(p, "block length must be >= 4");
    if (!power_of_two(c.ns[i])) throw ConfigError(p, "block length must be a power of two");
    if (c.ns[i] % c.design.sub_dim != 0) throw ConfigError(p, "block length must be a multiple of vq.dim");
  }
  if (!(c.rate > 0.0)) throw ConfigError("rate", "must be positive");
  if (c.p != 1.0 && c.p != 2.0) throw ConfigError("p", "only p = 1 and p = 2 are supported");
  if (c.trials < 1) throw ConfigError("trials", "must be >= 1");
  if (c.blocks < 2) throw ConfigError("blocks", "must be >= 2");
  if (c.estimator.pair_cap < 1) throw ConfigError("estimator.pair_cap", "must be >= 1");
  if (!(c.estimator.min_step > 0.0 && c.estimator.min_step <= 1.0))
    throw ConfigError("estimator.min_step", "must lie in (0, 1]");
  if (c.design.sub_dim < 1) throw ConfigError("vq.dim", "must be >= 1");
  if (c.design.method == DesignMethod::density && c.design.sub_dim != 1)
    throw ConfigError("vq.design", "density design requires vq.dim = 1");
  if (c.design.budget.max_iters < 1) throw ConfigError("vq.max_iters", "must be >= 1");
  const double sub_bits = std::ceil(static_cast<double>(c.design.sub_dim) * c.rate - 1e-9);
  if (sub_bits > 20) throw ConfigError("rate", "vq.dim * rate exceeds 20 bits per sub-block");
  if (c.design.budget.training_blocks != 0 &&
      c.design.budget.training_blocks < 10 * (std::size_t{1} << static_cast<unsigned>(sub_bits)))
    throw ConfigError("vq.training_blocks", "must be at least 10 per codeword");
  if (c.unbounded.enabled) {
    if (!(c.unbounded.delta > 0.0 && c.unbounded.delta < 1.0)) throw ConfigError("unbounded.delta", "must lie in (0, 1)");
    if (!(c.unbounded.M > 0.0)) throw ConfigError("unbounded.M", "must be positive");
  }
  if (c.quadrature_points < QuadratureGrid::kMinPoints)
    throw ConfigError("quadrature_points", "must be >= " + std::to_string(QuadratureGrid::kMinPoints));
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_text(path), path.parent_path());
}

}  // namespace uq
