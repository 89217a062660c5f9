// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "hgsg/hierarchy.hpp"
#include "hgsg/ops.hpp"
#include "hgsg/sgeval.hpp"

namespace hgsg::cli {

enum ExitCode : int {
  kOk = 0,
  kSelftestFailed = 1,
  kInputError = 2,      // missing file or parse failure
  kEmbeddingError = 3,  // labels that cannot be embedded
  kParameterError = 4,
  kIdMismatch = 5,      // predictions for images absent from the ground truth
  kDivergence = 6,
};

struct RunConfig {
  std::string command;

  std::filesystem::path lexicon;
  std::filesystem::path vectors;
  std::filesystem::path rules;  // cleaning rules or keyword rules, per command
  std::filesystem::path gt;
  std::filesystem::path pred;
  std::filesystem::path hierarchy;
  std::filesystem::path out;

  std::string method = "auto";  // hierarchy build: auto | keyword
  OovPolicy oov = OovPolicy::Skip;
  std::size_t k = 8;
  std::uint64_t seed = 0;

  std::vector<std::size_t> ks{50, 100};
  std::vector<Task> tasks{kAllTasks.begin(), kAllTasks.end()};
  bool micro = false;
  double iou = 0.5;
  bool sggen_strict = false;

  PoolMode pooling = PoolMode::Max;
  bool bn = false;
  bool hgm = true;
  double lr = 0.5;
  std::size_t steps = 2000;
  std::size_t regions = 96;
  std::size_t channels = 8;
  std::size_t pixels = 4;
  std::size_t fine_classes = 12;
  std::size_t coarse_classes = 4;
  double separation = 1.0;
  double noise = 0.1;

  bool json = false;
  std::string corrupt_backward;  // selftest negative control
};

int cmd_hierarchy_build(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_lexicon_clean(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_toy_train(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_selftest(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Dispatches on cfg.command.
int run(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Parses argv and runs; returns the process exit code.
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hgsg::cli
