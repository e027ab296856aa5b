// SPDX-License-Identifier: Apache-2.0
#include "tetra/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "tetra/augment.hpp"
#include "tetra/binary_io.hpp"
#include "tetra/error.hpp"
#include "tetra/rng.hpp"

namespace tetra::data {
namespace {

Tensor render_place(Rng& rng, std::size_t channels, std::size_t size) {
  Tensor img = Tensor::image(channels, size, size);
  const double s = static_cast<double>(size);
  std::vector<double> base(channels);
  std::vector<double> slope(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    base[c] = rng.uniform(0.2, 0.8);
    slope[c] = rng.uniform(-0.3, 0.3);
  }
  struct Grating {
    double fx, fy, phase;
    std::vector<double> amp;
  };
  std::vector<Grating> gratings(3);
  for (auto& g : gratings) {
    const double angle = rng.uniform(0.0, std::numbers::pi);
    const double freq = rng.uniform(1.0, 5.0) * 2.0 * std::numbers::pi / s;
    g.fx = freq * std::cos(angle);
    g.fy = freq * std::sin(angle);
    g.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    g.amp.resize(channels);
    for (double& a : g.amp) a = rng.uniform(-0.25, 0.25);
  }
  struct Blob {
    double cx, cy, r;
    std::vector<double> color;
  };
  std::vector<Blob> blobs(4);
  for (auto& b : blobs) {
    b.cx = rng.uniform(0.0, s);
    b.cy = rng.uniform(0.0, s);
    b.r = rng.uniform(0.1, 0.3) * s;
    b.color.resize(channels);
    for (double& c : b.color) c = rng.uniform(0.0, 1.0);
  }
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double fx = static_cast<double>(x);
      const double fy = static_cast<double>(y);
      for (std::size_t c = 0; c < channels; ++c) {
        double v = base[c] + slope[c] * (fy / s - 0.5);
        for (const auto& g : gratings) v += g.amp[c] * std::sin(g.fx * fx + g.fy * fy + g.phase);
        for (const auto& b : blobs) {
          const double d2 = (fx - b.cx) * (fx - b.cx) + (fy - b.cy) * (fy - b.cy);
          const double w = std::exp(-d2 / (2.0 * b.r * b.r));
          v = (1.0 - 0.8 * w) * v + 0.8 * w * b.color[c];
        }
        img.at(c, y, x) = static_cast<float>(v);
      }
    }
  train::clamp_unit(img);
  return img;
}

// Milder than the training policy: views of one place should stay recognisable.
train::AugmentPolicy nuisance_policy() {
  train::AugmentPolicy p;
  p.p_brightness = 0.8;
  p.p_blur = 0.4;
  p.p_crop = 0.8;
  p.p_color = 0.4;
  p.p_erase = 0.3;
  p.brightness = 0.2;
  p.contrast = 0.2;
  p.saturation = 0.2;
  p.channel_gain = 0.05;
  return p;
}

std::string image_name(const char* dir, std::uint64_t id) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s/%06llu.tnsr", dir, static_cast<unsigned long long>(id));
  return buf;
}

std::string format_list(const std::vector<ImageRecord>& records) {
  std::ostringstream os;
  for (const auto& r : records) os << r.id << ' ' << r.place << ' ' << r.file << '\n';
  return os.str();
}

std::vector<ImageRecord> parse_list(const std::string& text, const std::string& what) {
  std::vector<ImageRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    ImageRecord r;
    std::string extra;
    if (!(ls >> r.id >> r.place >> r.file) || (ls >> extra)) {
      throw DataError(what + ": line " + std::to_string(lineno) + ": expected 'id place file'");
    }
    if (r.file.find("..") != std::string::npos || (!r.file.empty() && r.file.front() == '/')) {
      throw DataError(what + ": line " + std::to_string(lineno) + ": file must be a relative path inside the dataset");
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

std::size_t queries_per_place(std::size_t per_place) {
  if (per_place < 2) return 0;
  return std::max<std::size_t>(1, per_place / 4);
}

Dataset generate_places(const PlacesSpec& spec) {
  if (spec.places == 0 || spec.per_place == 0 || spec.image_size == 0 || spec.channels == 0) {
    throw std::invalid_argument("generate_places: sizes must be positive");
  }
  Dataset ds;
  const std::size_t nq = queries_per_place(spec.per_place);
  const train::AugmentPolicy policy = nuisance_policy();
  Rng root(spec.seed);
  std::vector<std::vector<std::uint64_t>> db_of_place(spec.places);
  for (std::size_t p = 0; p < spec.places; ++p) {
    Rng rng = root.fork(p);
    const Tensor base = render_place(rng, spec.channels, spec.image_size);
    for (std::size_t m = 0; m < spec.per_place; ++m) {
      Tensor view = train::augment(base, rng.next(), policy);
      for (float& v : view.data) v += static_cast<float>(rng.normal(0.0, 0.02));
      train::clamp_unit(view);
      const bool is_query = m < nq;
      auto& records = is_query ? ds.queries : ds.database;
      auto& images = is_query ? ds.query_images : ds.database_images;
      const std::uint64_t id = records.size();
      records.push_back({id, static_cast<std::uint32_t>(p), image_name(is_query ? "queries" : "database", id)});
      images.push_back(std::move(view));
      if (!is_query) db_of_place[p].push_back(id);
    }
  }
  for (const auto& q : ds.queries) {
    const auto& pos = db_of_place[q.place];
    ds.ground_truth[q.id] = std::set<std::uint64_t>(pos.begin(), pos.end());
  }
  return ds;
}

void write_dataset(const std::filesystem::path& root, const Dataset& ds) {
  std::error_code ec;
  std::filesystem::create_directories(root / "database", ec);
  std::filesystem::create_directories(root / "queries", ec);
  if (ec) throw std::runtime_error("cannot create " + root.string() + ": " + ec.message());
  for (std::size_t i = 0; i < ds.database.size(); ++i) write_tensor(root / ds.database[i].file, ds.database_images[i]);
  for (std::size_t i = 0; i < ds.queries.size(); ++i) write_tensor(root / ds.queries[i].file, ds.query_images[i]);
  io::write_text(root / "database.lst", format_list(ds.database));
  io::write_text(root / "queries.lst", format_list(ds.queries));
  io::write_text(root / "gt.txt", index::format_ground_truth(ds.ground_truth));
}

Dataset load_dataset(const std::filesystem::path& root) {
  Dataset ds;
  ds.database = parse_list(io::read_text(root / "database.lst"), "database.lst");
  ds.queries = parse_list(io::read_text(root / "queries.lst"), "queries.lst");
  ds.ground_truth = index::read_ground_truth(root / "gt.txt");
  for (const auto& r : ds.database) ds.database_images.push_back(read_image(root / r.file));
  for (const auto& r : ds.queries) ds.query_images.push_back(read_image(root / r.file));
  std::set<std::uint64_t> db_ids;
  for (const auto& r : ds.database) {
    if (!db_ids.insert(r.id).second) throw DataError("database.lst: duplicate id " + std::to_string(r.id));
  }
  for (const auto& [q, ids] : ds.ground_truth) {
    for (const auto id : ids) {
      if (!db_ids.count(id)) {
        throw DataError("gt.txt: query " + std::to_string(q) + " references unknown database id " + std::to_string(id));
      }
    }
  }
  return ds;
}

double random_recall_baseline(const Dataset& ds) {
  if (ds.queries.empty() || ds.database.empty()) throw std::invalid_argument("random_recall_baseline: empty dataset");
  double total = 0.0;
  for (const auto& q : ds.queries) {
    const auto it = ds.ground_truth.find(q.id);
    const std::size_t pos = it == ds.ground_truth.end() ? 0 : it->second.size();
    total += static_cast<double>(pos) / static_cast<double>(ds.database.size());
  }
  return total / static_cast<double>(ds.queries.size());
}

}  // namespace tetra::data
