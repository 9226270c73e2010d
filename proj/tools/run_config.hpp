#pragma once

// Resolved configuration of one CLI run: defaults, then the config file, then
// command-line overrides. Keys are "section.name".

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "resunetpp/metrics.hpp"
#include "resunetpp/trainer.hpp"

namespace resunetpp::cli {

enum class CrfTruncate { Auto, On, Off };

struct RunConfig {
  std::string command;

  // [run]
  std::uint64_t seed = 0;
  std::string train_dir;
  std::string test_dir;
  std::string weights;
  std::string out = "out";
  std::string manifest;

  ModelConfig model;

  // [data]
  Index image_size = 256;
  SplitRatios ratios;
  std::vector<AugmentKind> augmentations;  // empty: none
  double augment_probability = 0.5;
  int augment_copies = 0;

  TrainConfig train;

  CrfParams crf;
  CrfTruncate crf_truncate = CrfTruncate::Auto;

  TtaConfig tta;

  // [eval]
  double threshold = 0.5;
  bool pooled = false;
  bool use_tta = false;
  bool use_crf = false;

  // Sets one key; ConfigError names the key on an unknown key or bad value.
  void set(const std::string& key, const std::string& value);
  // Every key with its resolved value, grouped by section, stable order.
  std::string to_text() const;
  void validate() const;

  // Per-purpose seeds derived from `seed`.
  std::uint64_t split_seed() const { return seed; }
  std::uint64_t init_seed() const;
  std::uint64_t shuffle_seed() const;
  std::uint64_t augment_seed() const;

  EvalOptions eval_options() const;
  DataConfig data_config() const;
  // CRF parameters for an image with `pixels` pixels (resolves truncate=auto).
  CrfParams crf_for(Index pixels) const;
};

// Flat key-value text with [section] headers; '#' and ';' start comments.
// Returns "section.key" -> value. ConfigError on malformed lines (with line
// number) or keys outside a section.
std::map<std::string, std::string> parse_config_text(const std::string& text);

RunConfig load_run_config(const std::string& path);  // defaults + file

}  // namespace resunetpp::cli
