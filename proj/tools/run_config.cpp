#include "run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "modwatch/error.hpp"

namespace modwatch::cli {

const std::vector<RunConfig::Key>& RunConfig::keys() {
  static const std::vector<Key> k = {
      {"run.seed", "1", "global seed (fallback: MODWATCH_SEED)"},
      {"run.jobs", "1", "worker threads"},
      {"run.scale", "desk", "desk | paper"},
      {"generate.modules", "15", "number of modules"},
      {"generate.samples_per_module", "40", "normal samples per module"},
      {"generate.faults", "150", "abnormal samples in total"},
      {"generate.time_steps", "512", "time steps per macro-pulse"},
      {"generate.noise_sd", "0.005", "additive Gaussian noise"},
      {"generate.amplitude_spread", "0.3", "per-module amplitude spread"},
      {"generate.frequency_spread", "0.3", "per-module frequency spread"},
      {"generate.fault_mix", "1/6 1/6 1/6 1/6 1/6 1/6", "class proportions (DV/DT FLUX IGBT Driver SCR SNS-PPS)"},
      {"generate.severity", "1 1 1 1 1 1", "per-class severity (inf = flatline)"},
      {"split.train", "0.8", "training fraction"},
      {"split.validation", "0.1", "validation fraction"},
      {"split.test", "0.1", "test fraction"},
      {"model.kernels", "16", "kernels per conv block"},
      {"model.kernel_width", "3", "conv kernel width (odd)"},
      {"model.dense_units", "64", "encoder dense units"},
      {"model.decoder_dense_units", "64", "first decoder dense units"},
      {"model.latent_dim", "32", "latent dimension"},
      {"model.encoder_blocks", "3", "encoder conv blocks"},
      {"model.decoder_blocks", "3", "decoder conv blocks"},
      {"model.strided_blocks", "3", "stride-2 blocks"},
      {"model.kld_reduction", "batch_mean", "batch_mean | batch_sum"},
      {"train.mode", "cvae", "vae | cvae"},
      {"train.module", "all", "module id or all (vae mode)"},
      {"train.batch_size", "16", "batch size"},
      {"train.learning_rate", "1e-3", "Adam learning rate"},
      {"train.epochs", "100", "maximum epochs"},
      {"train.patience", "20", "early-stopping patience"},
      {"train.eta", "1.0", "KLD weight"},
      {"eval.fpr_budget", "0.10", "false-positive budget"},
      {"eval.draws", "100", "latent draws in sampled mode"},
      {"eval.replicas", "20", "score replicas for AUC error bars"},
      {"eval.split", "test", "test | heldout | all"},
      {"eval.mode", "deterministic", "deterministic | sampled"},
      {"landscape.resolution", "25", "grid points per axis"},
      {"landscape.range", "1.0", "axis half-width"},
      {"landscape.split", "train", "train | validation"},
      {"landscape.module", "all", "module id or all"},
      {"landscape.max_samples", "0", "cap on landscape samples (0 = all)"},
      {"landscape.depths", "3 5 10 20 30 40", "conv blocks per side for the depth sweep"},
      {"uq.draws", "100", "replicas per example"},
      {"uq.examples", "10", "examples per module"},
      {"uq.split", "heldout", "test | heldout"},
  };
  return k;
}

namespace {

// Values that differ at paper scale.
const std::map<std::string, std::string>& paper_preset() {
  static const std::map<std::string, std::string> p = {
      {"generate.time_steps", "4500"}, {"generate.samples_per_module", "350"}, {"generate.faults", "1270"},
      {"model.kernels", "128"}, {"model.dense_units", "512"},
      {"model.decoder_dense_units", "512"}, {"model.latent_dim", "512"}, {"model.strided_blocks", "2"},
      {"train.learning_rate", "1e-5"},
  };
  return p;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  const auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

double parse_number(const std::string& key, const std::string& token) {
  const auto slash = token.find('/');
  try {
    std::size_t used = 0;
    if (slash != std::string::npos) {
      const double num = std::stod(token.substr(0, slash));
      const double den = std::stod(token.substr(slash + 1), &used);
      if (used != token.size() - slash - 1 || den == 0.0) throw std::invalid_argument(token);
      return num / den;
    }
    const double v = std::stod(token, &used);
    if (used != token.size()) throw std::invalid_argument(token);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": '" + token + "' is not a number");
  }
}

}  // namespace

bool RunConfig::known(const std::string& key) {
  for (const auto& k : keys()) {
    if (k.name == key) return true;
  }
  return false;
}

RunConfig::RunConfig() {
  for (const auto& k : keys()) values_[k.name] = {k.fallback, false};
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!known(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = {trim(value), true};
}

bool RunConfig::is_explicit(const std::string& key) const {
  const auto it = values_.find(key);
  return it != values_.end() && it->second.explicit_;
}

void RunConfig::load_file(const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("cannot read config " + path.string() + ": " + e.message());
  }
  for (const auto& [section, node] : tree) {
    if (node.empty()) throw ConfigError("config key '" + section + "' must sit inside a [section]");
    for (const auto& [key, leaf] : node) set(section + "." + key, leaf.get_value<std::string>());
  }
}

void RunConfig::apply_defaults(const std::map<std::string, std::string>& values) {
  for (const auto& [k, v] : values) {
    if (!known(k)) throw ConfigError("unknown config key '" + k + "'");
    if (!is_explicit(k)) values_[k].text = v;
  }
}

void RunConfig::resolve() {
  if (!is_explicit("run.seed")) {
    if (const char* env = std::getenv("MODWATCH_SEED"); env && *env) values_["run.seed"] = {trim(env), true};
  }
  const auto scale = get("run.scale");
  if (scale != "desk" && scale != "paper") throw ConfigError("run.scale must be desk or paper");
  if (scale == "paper") apply_defaults(paper_preset());
  get_u64("run.seed");
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.text;
}

double RunConfig::get_double(const std::string& key) const {
  const auto s = get(key);
  if (s == "inf") return INFINITY;
  return parse_number(key, s);
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  const auto s = get(key);
  try {
    std::size_t used = 0;
    const auto v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": '" + s + "' is not an integer");
  }
}

std::size_t RunConfig::get_size(const std::string& key) const {
  const auto v = get_int(key);
  if (v < 0) throw ConfigError("config key " + key + " must be >= 0");
  return static_cast<std::size_t>(v);
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const auto s = get(key);
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size() || s.front() == '-') throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": '" + s + "' is not an unsigned integer");
  }
}

std::vector<double> RunConfig::get_doubles(const std::string& key) const {
  std::istringstream is(get(key));
  std::vector<double> out;
  std::string token;
  while (is >> token) out.push_back(token == "inf" ? INFINITY : parse_number(key, token));
  return out;
}

std::vector<std::size_t> RunConfig::get_sizes(const std::string& key) const {
  std::vector<std::size_t> out;
  for (double v : get_doubles(key)) {
    if (!(v >= 0.0) || v != std::floor(v)) throw ConfigError("config key " + key + " needs nonnegative integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::map<std::string, std::string> RunConfig::flat() const {
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : values_) out[k] = v.text;
  return out;
}

void RunConfig::write(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  std::string section;
  for (const auto& [k, v] : values_) {
    const auto dot = k.find('.');
    const auto s = k.substr(0, dot);
    if (s != section) {
      os << (section.empty() ? "" : "\n") << '[' << s << "]\n";
      section = s;
    }
    os << k.substr(dot + 1) << " = " << v.text << '\n';
  }
}

}  // namespace modwatch::cli
