// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tetra/binary_io.hpp"
#include "tetra/cli.hpp"
#include "tetra/index.hpp"
#include "tetra/model.hpp"
#include "tetra/train.hpp"

namespace fs = std::filesystem;
using namespace tetra;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result tetra_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("tetra_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string tiny_config_text() {
  train::TrainConfig c;
  c.model.layers = 2;
  c.model.heads = 2;
  c.model.dim = 16;
  c.model.ffn_dim = 32;
  c.model.patch = 4;
  c.model.image_size = 8;
  c.model.embed_dim = 64;
  c.teacher_steps = 2;
  c.teacher_places = 3;
  c.pretrain_steps = 2;
  c.pretrain_batch = 3;
  c.attn_layers = 2;
  c.finetune_steps = 2;
  c.finetune_places = 3;
  c.finetune_images_per_place = 2;
  return train::format_train_config(c);
}

}  // namespace

TEST_CASE("git blob sha1 matches git's object ids") {
  CHECK(cli::git_blob_sha1({}) == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  const std::string hello = "hello\n";
  CHECK(cli::git_blob_sha1(std::span(reinterpret_cast<const std::uint8_t*>(hello.data()), hello.size())) ==
        "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("usage errors exit 2") {
  CHECK(tetra_run({}).code == cli::kExitUsage);
  CHECK(tetra_run({"frobnicate"}).code == cli::kExitUsage);
  CHECK(tetra_run({"gen-data"}).code == cli::kExitUsage);  // no --out
  CHECK(tetra_run({"gen-data", "--places", "x", "--out", "/tmp/x"}).code == cli::kExitUsage);
  CHECK(tetra_run({"eval", "--db", "a"}).code == cli::kExitUsage);
  CHECK(tetra_run({"bench", "teapot"}).code == cli::kExitUsage);
  CHECK(tetra_run({"train", "--data", "d", "--out", "o", "--stage", "sideways"}).code == cli::kExitUsage);
  const auto r = tetra_run({"extract", "--model", "m.ttra", "--mode", "fuzzy", "--out", "x"});
  CHECK(r.code == cli::kExitUsage);
  CHECK(r.err.find("--mode") != std::string::npos);
}

TEST_CASE("data errors exit 3 with one line") {
  const auto dir = scratch("data_errors");
  const auto r = tetra_run({"inspect", (dir / "missing.bin").string()});
  CHECK(r.code == cli::kExitData);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  io::write_text(dir / "junk.bin", "not a known format");
  CHECK(tetra_run({"inspect", (dir / "junk.bin").string()}).code == cli::kExitData);
  io::write_text(dir / "bad.ttra", "TTRA\x01");
  CHECK(tetra_run({"inspect", (dir / "bad.ttra").string()}).code == cli::kExitData);
  CHECK(tetra_run({"train", "--data", (dir / "nowhere").string(), "--out", (dir / "o").string()}).code == cli::kExitData);
  io::write_text(dir / "bad.cfg", "no.such.key = 1\n");
  CHECK(tetra_run({"train", "--config", (dir / "bad.cfg").string(), "--data", dir.string(), "--out", (dir / "o").string()})
            .code == cli::kExitData);
  fs::remove_all(dir);
}

TEST_CASE("gen-data is byte-identical for a seed") {
  const auto dir = scratch("gen");
  const std::vector<std::string> a{"gen-data", "--seed", "4", "--places", "5", "--per-place", "3", "--image-size", "8",
                                   "--out", (dir / "a").string()};
  auto b = a;
  b.back() = (dir / "b").string();
  REQUIRE(tetra_run(a).code == 0);
  REQUIRE(tetra_run(b).code == 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    CHECK(slurp(e.path()) == slurp(dir / "b" / fs::relative(e.path(), dir / "a")));
  }
  CHECK(files == 15 + 3);
  auto c = a;
  c[2] = "5";
  c.back() = (dir / "c").string();
  REQUIRE(tetra_run(c).code == 0);
  CHECK(slurp(dir / "a" / "database" / "000000.tnsr") != slurp(dir / "c" / "database" / "000000.tnsr"));
  const auto r = tetra_run({"inspect", (dir / "a" / "database" / "000000.tnsr").string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("dims: 3 8 8") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("train, extract, eval and inspect end to end") {
  const auto dir = scratch("e2e");
  io::write_text(dir / "tiny.cfg", tiny_config_text());
  REQUIRE(tetra_run({"gen-data", "--seed", "1", "--places", "6", "--per-place", "4", "--image-size", "8", "--out",
                     (dir / "data").string()})
              .code == 0);
  const auto tr = tetra_run({"train", "--config", (dir / "tiny.cfg").string(), "--seed", "2", "--data",
                             (dir / "data").string(), "--out", (dir / "run").string()});
  REQUIRE_MESSAGE(tr.code == 0, tr.err);
  for (const char* f : {"teacher.ttra", "student.ttra", "latent.ttra", "model.ttra", "metrics.csv", "config.txt", "manifest.json"})
    CHECK(fs::exists(dir / "run" / f));
  CHECK(train::parse_train_config(slurp(dir / "run" / "config.txt")).seed == 2);

  const auto manifest = nlohmann::json::parse(slurp(dir / "run" / "manifest.json"));
  CHECK(manifest["seed"] == 2);
  bool saw_gt = false;
  for (const auto& in : manifest["inputs"]) {
    const std::string path = in["path"];
    if (path.ends_with("gt.txt")) {
      saw_gt = true;
      const std::string text = slurp(path);
      CHECK(in["sha1"] == cli::git_blob_sha1(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size())));
    }
  }
  CHECK(saw_gt);

  // A rerun with the same seed reproduces the metric log exactly.
  REQUIRE(tetra_run({"train", "--config", (dir / "tiny.cfg").string(), "--seed", "2", "--data", (dir / "data").string(),
                     "--out", (dir / "run2").string()})
              .code == 0);
  CHECK(slurp(dir / "run" / "metrics.csv") == slurp(dir / "run2" / "metrics.csv"));
  CHECK(slurp(dir / "run" / "model.ttra") == slurp(dir / "run2" / "model.ttra"));

  // The pretrain and finetune stages can run separately.
  REQUIRE(tetra_run({"train", "--config", (dir / "tiny.cfg").string(), "--seed", "2", "--stage", "finetune", "--init",
                     (dir / "run" / "student.ttra").string(), "--data", (dir / "data").string(), "--out",
                     (dir / "ft").string()})
              .code == 0);
  CHECK(slurp(dir / "ft" / "model.ttra") == slurp(dir / "run" / "model.ttra"));

  const auto model = (dir / "run" / "model.ttra").string();
  REQUIRE(tetra_run({"extract", "--model", model, "--list", (dir / "data" / "database.lst").string(), "--out",
                     (dir / "db.bemb").string()})
              .code == 0);
  REQUIRE(tetra_run({"extract", "--model", model, "--list", (dir / "data" / "queries.lst").string(), "--out",
                     (dir / "q.bemb").string()})
              .code == 0);
  CHECK(fs::file_size(dir / "db.bemb") == 18 + 18 * (8 + 64 / 8));
  const auto db = index::read_embeddings(dir / "db.bemb");
  CHECK(db.dim == 64);
  CHECK(db.entries.size() == 18);

  const auto ev = tetra_run({"eval", "--db", (dir / "db.bemb").string(), "--queries", (dir / "q.bemb").string(), "--gt",
                             (dir / "data" / "gt.txt").string(), "--model", model, "--k", "1,18"});
  REQUIRE(ev.code == 0);
  CHECK(ev.out.starts_with("k,recall,db_bytes,model_bytes,memory_efficiency\n1,"));
  CHECK(ev.out.find("\n18,1,") != std::string::npos);

  // Database against itself: every query finds itself first.
  std::string self_gt;
  for (const auto& e : db.entries) self_gt += std::to_string(e.id) + ": " + std::to_string(e.id) + "\n";
  io::write_text(dir / "self.txt", self_gt);
  const auto self = tetra_run({"eval", "--db", (dir / "db.bemb").string(), "--queries", (dir / "db.bemb").string(), "--gt",
                               (dir / "self.txt").string(), "--k", "1"});
  REQUIRE(self.code == 0);
  CHECK(self.out.find("\n1,1,") != std::string::npos);

  const auto ins = tetra_run({"inspect", model});
  CHECK(ins.code == 0);
  CHECK(ins.out.find("ternary") != std::string::npos);
  CHECK(tetra_run({"inspect", (dir / "db.bemb").string()}).out.find("count: 18") != std::string::npos);

  // No images: a header-only file.
  REQUIRE(tetra_run({"extract", "--model", model, "--out", (dir / "empty.bemb").string()}).code == 0);
  CHECK(fs::file_size(dir / "empty.bemb") == 18);

  // A float run of a packed model is refused; a mismatched image is a data error.
  CHECK(tetra_run({"extract", "--model", model, "--mode", "float", "--out", (dir / "x.bemb").string()}).code ==
        cli::kExitUsage);
  REQUIRE(tetra_run({"gen-data", "--places", "1", "--per-place", "1", "--image-size", "16", "--out",
                     (dir / "big").string()})
              .code == 0);
  CHECK(tetra_run({"extract", "--model", model, "--out", (dir / "x.bemb").string(),
                   (dir / "big" / "database" / "000000.tnsr").string()})
            .code == cli::kExitData);

  // Corrupt inputs are data errors, never crashes.
  auto bytes = io::read_file(dir / "db.bemb");
  bytes[0] = 'Z';
  io::write_file(dir / "corrupt.bemb", bytes);
  CHECK(tetra_run({"eval", "--db", (dir / "corrupt.bemb").string(), "--queries", (dir / "q.bemb").string(), "--gt",
                   (dir / "data" / "gt.txt").string()})
            .code == cli::kExitData);
  io::write_text(dir / "bad_gt.txt", "0: 123456\n");
  CHECK(tetra_run({"eval", "--db", (dir / "db.bemb").string(), "--queries", (dir / "q.bemb").string(), "--gt",
                   (dir / "bad_gt.txt").string()})
            .code == cli::kExitData);
  fs::remove_all(dir);
}

TEST_CASE("bench writes csv") {
  const auto m = tetra_run({"bench", "matmul", "--sizes", "8,16", "--repeats", "2"});
  REQUIRE(m.code == 0);
  CHECK(m.out.starts_with("kernel,m,k,n,median_ns,p10_ns,p90_ns,bytes_weights\n"));
  const auto s = tetra_run({"bench", "search", "--sizes", "100", "--dims", "64", "--repeats", "2"});
  REQUIRE(s.code == 0);
  CHECK(s.out.starts_with("kernel,entries,dim,median_ns,p10_ns,p90_ns,bytes_db\n"));
}
