// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tetra/index.hpp"
#include "tetra/tensor_io.hpp"

namespace tetra::data {

/// P places, M images each, rendered from a per-place procedural texture
/// under random lighting, blur, crop, colour and occlusion nuisances.
struct PlacesSpec {
  std::size_t places = 50;
  std::size_t per_place = 4;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::uint64_t seed = 0;
};

struct ImageRecord {
  std::uint64_t id = 0;
  std::uint32_t place = 0;
  std::string file;  // relative to the dataset root
  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct Dataset {
  std::vector<ImageRecord> database;
  std::vector<ImageRecord> queries;
  std::vector<Tensor> database_images;
  std::vector<Tensor> query_images;
  index::GroundTruth ground_truth;  // query id -> database ids of the same place
};

/// Queries held out per place: max(1, M/4) when M >= 2; a single-image place
/// goes to the database only, so every query has a positive.
std::size_t queries_per_place(std::size_t per_place);

/// Deterministic in the spec. Throws std::invalid_argument on zero sizes.
Dataset generate_places(const PlacesSpec& spec);

/// Writes database/*.tnsr, queries/*.tnsr, database.lst, queries.lst (lines
/// "id place file") and gt.txt.
void write_dataset(const std::filesystem::path& root, const Dataset& dataset);
/// Throws DataError on missing or malformed files.
Dataset load_dataset(const std::filesystem::path& root);

/// Expected recall@1 of a uniformly random ranking: mean over queries of
/// positives / database size.
double random_recall_baseline(const Dataset& dataset);

}  // namespace tetra::data
