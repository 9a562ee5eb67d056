#include "modwatch/pipeline.hpp"

#include <cstdio>
#include <sstream>

#include "modwatch/error.hpp"

namespace modwatch::pipeline {

PreparedData prepare(const data::WaveformSet& raw, const data::SplitFractions& fractions, std::uint64_t split_seed) {
  auto parts = data::split(raw, fractions, split_seed);
  if (parts.train.size() == 0) throw DataError("training split is empty");
  PreparedData out;
  out.split_seed = split_seed;
  std::tie(out.train, out.stats) = data::standardize(parts.train);
  if (parts.validation.size()) out.validation = data::standardize(parts.validation, out.stats).first;
  else out.validation = std::move(parts.validation);
  if (parts.test.size()) out.test = data::standardize(parts.test, out.stats).first;
  else out.test = std::move(parts.test);
  return out;
}

data::WaveformSet held_out(const PreparedData& d) { return data::concatenate(d.validation, d.test); }

namespace {

std::string join(const std::vector<double>& v) {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", v[i]);
    if (i) out += ' ';
    out += buf;
  }
  return out;
}

std::vector<double> parse_list(const std::map<std::string, std::string>& md, const std::string& key) {
  const auto it = md.find(key);
  if (it == md.end()) throw DataError("checkpoint metadata lacks " + key);
  std::istringstream is(it->second);
  std::vector<double> out;
  std::string token;
  while (is >> token) {
    try {
      out.push_back(std::stod(token));
    } catch (const std::exception&) {
      throw DataError("malformed value in " + key + ": " + token);
    }
  }
  return out;
}

}  // namespace

void store_stats(std::map<std::string, std::string>& md, const data::ChannelStats& stats) {
  md["stats.mean"] = join(stats.mean);
  md["stats.sd"] = join(stats.sd);
  std::vector<double> flags(stats.constant.begin(), stats.constant.end());
  md["stats.constant"] = join(flags);
}

data::ChannelStats load_stats(const std::map<std::string, std::string>& md) {
  data::ChannelStats s;
  s.mean = parse_list(md, "stats.mean");
  s.sd = parse_list(md, "stats.sd");
  for (double f : parse_list(md, "stats.constant")) s.constant.push_back(f != 0.0);
  if (s.sd.size() != s.mean.size() || s.constant.size() != s.mean.size()) {
    throw DataError("checkpoint channel statistics are inconsistent");
  }
  return s;
}

}  // namespace modwatch::pipeline
