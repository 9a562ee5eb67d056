#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "modwatch/waveform.hpp"

namespace modwatch::pipeline {

// Split, then z-score every part with statistics of the training part only.
struct PreparedData {
  data::WaveformSet train;
  data::WaveformSet validation;
  data::WaveformSet test;
  data::ChannelStats stats;
  std::uint64_t split_seed = 0;
};

PreparedData prepare(const data::WaveformSet& raw, const data::SplitFractions& fractions, std::uint64_t split_seed);

// Round-trips channel statistics through checkpoint metadata (stats.* keys).
void store_stats(std::map<std::string, std::string>& metadata, const data::ChannelStats& stats);
data::ChannelStats load_stats(const std::map<std::string, std::string>& metadata);

// Held-out samples (validation then test) as one set.
data::WaveformSet held_out(const PreparedData& d);

}  // namespace modwatch::pipeline
