#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>

#include "psconv/data.hpp"

namespace psconv::cli {

// --data argument: cifar10:DIR | raw:IMG,LBL | synth:N,C,S
struct DataSpec {
  enum class Kind { cifar10, raw, synth } kind = Kind::synth;
  std::string dir, images, labels;
  std::size_t n = 0, size = 0;
  int classes = 0;
  std::string text;
};

// Throws std::invalid_argument on malformed text.
DataSpec parse_data_spec(const std::string& text);

struct LoadedData {
  Dataset train, val;
  std::optional<Dataset> test;
  std::optional<ChannelStats> stats;
};

// Builds train/val (and test when available). train_n/val_n of 0 pick the
// default split for the source. stats, when given, replaces the statistics
// computed from the training pool.
LoadedData load_data(const DataSpec& spec, std::size_t train_n, std::size_t val_n, std::uint64_t seed,
                     const std::optional<ChannelStats>& stats = std::nullopt);

// Loads a standalone evaluation set, normalized with the given statistics.
Dataset load_eval_set(const DataSpec& spec, const std::optional<ChannelStats>& stats, std::uint64_t seed);

// Exit codes: 0 success, 1 usage error, 2 runtime or data error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace psconv::cli
