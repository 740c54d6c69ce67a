#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "histgdp/data_ingest.hpp"
#include "histgdp/features.hpp"
#include "histgdp/pipeline.hpp"

namespace histgdp::testing {

// A generated world whose log10 GDP is
//   level + region effect [+ lag * previous-period truth] + sum_j c_j z_j + noise,
// where z_j are three computed biography features standardized within the
// year. The earliest period has no lag term.
struct WorldOptions {
  std::size_t countries = 40;
  std::size_t supranational = 4;
  std::size_t occupations = 10;
  std::size_t regions_per_country = 0;
  std::size_t people = 12000;
  int first_birth = 1150;
  int last_birth = 1749;  // keeps windows after 1850 empty
  double label_fraction = 1.0;
  double noise = 0.05;
  double lag = 0.6;
  double level = 3.0;
  double region_spread = 0.1;
  double feature_effect = 0.15;
  std::uint64_t seed = 1;
};

struct SyntheticWorld {
  Dataset data;
  pipeline::FeatureStore store;
  std::vector<std::string> true_features;
  GdpTable truth_log10;  // noisy realized value, labeled or not
  GdpTable mean_log10;   // conditional mean given features and true lag
};

SyntheticWorld make_world(const WorldOptions& options, const FeatureConfig& features = {});

struct WorldFiles {
  std::filesystem::path biographies, locations, gdp;
};

// Writes the world as biographies.csv, locations.csv and gdp.csv.
WorldFiles write_world(const SyntheticWorld& world, const std::filesystem::path& dir);

// Pipeline settings small enough for repeated runs.
pipeline::PipelineConfig fast_config(std::uint64_t seed);

}  // namespace histgdp::testing
