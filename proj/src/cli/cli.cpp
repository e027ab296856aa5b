// SPDX-License-Identifier: Apache-2.0
#include "tetra/cli.hpp"

#include <omp.h>
#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <json.hpp>
#include <sstream>

#include "tetra/binary_io.hpp"
#include "tetra/dataset.hpp"
#include "tetra/error.hpp"
#include "tetra/index.hpp"
#include "tetra/kernels.hpp"
#include "tetra/model.hpp"
#include "tetra/tensor_io.hpp"
#include "tetra/train.hpp"

namespace tetra::cli {
namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  std::vector<std::size_t> k{1, 5, 10};
  std::string mode = "quantized";
  double lambda = 1.0;
};

model::Mode parse_mode(const Globals& g) {
  if (g.mode == "float") return model::Mode::full_precision();
  if (g.mode == "blend") {
    if (!(g.lambda >= 0.0 && g.lambda <= 1.0)) throw UsageError("--lambda must lie in [0, 1]");
    return model::Mode::blend(g.lambda);
  }
  if (g.mode == "quantized") return model::Mode::quantized();
  throw UsageError("--mode must be float, blend or quantized");
}

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw UsageError("--out is required");
  return g.out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory " + dir.string());
}

std::string hex(const unsigned char* p, unsigned n) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (unsigned i = 0; i < n; ++i) {
    s += digits[p[i] >> 4];
    s += digits[p[i] & 15];
  }
  return s;
}

ordered_json file_entry(const fs::path& path) {
  const auto bytes = io::read_file(path);
  return {{"path", path.generic_string()}, {"bytes", bytes.size()}, {"sha1", git_blob_sha1(bytes)}};
}

/// Config snapshot, seed, content hashes of the inputs and the output paths.
void write_manifest(const fs::path& out_dir, const std::string& command, const train::TrainConfig& config,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  ordered_json m;
  m["command"] = command;
  m["seed"] = config.seed;
  ordered_json cfg = ordered_json::object();
  std::istringstream lines(train::format_train_config(config));
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find(" = ");
    cfg[line.substr(0, eq)] = line.substr(eq + 3);
  }
  m["config"] = cfg;
  ordered_json in = ordered_json::array();
  std::string combined;
  for (const auto& p : inputs) {
    in.push_back(file_entry(p));
    combined += in.back()["sha1"].get<std::string>();
  }
  m["inputs"] = in;
  m["inputs_sha1"] = git_blob_sha1(std::span(reinterpret_cast<const std::uint8_t*>(combined.data()), combined.size()));
  ordered_json outs = ordered_json::array();
  for (const auto& p : outputs) outs.push_back(p.generic_string());
  m["outputs"] = outs;
  io::write_text(out_dir / "manifest.json", m.dump(2) + "\n");
}

std::vector<fs::path> dataset_inputs(const fs::path& root, const data::Dataset& ds) {
  std::vector<fs::path> in = {root / "database.lst", root / "queries.lst", root / "gt.txt"};
  for (const auto& r : ds.database) in.push_back(root / r.file);
  for (const auto& r : ds.queries) in.push_back(root / r.file);
  return in;
}

train::TrainConfig resolve_config(const Globals& g) {
  train::TrainConfig c = g.config.empty() ? train::TrainConfig{} : train::load_train_config(g.config);
  if (g.seed_set) c.seed = g.seed;
  return c;
}

// --- commands -----------------------------------------------------------------

int cmd_gen_data(const Globals& g, const data::PlacesSpec& spec_in, std::ostream& out) {
  data::PlacesSpec spec = spec_in;
  spec.seed = g.seed;
  if (spec.places == 0 || spec.per_place == 0) throw UsageError("--places and --per-place must be at least 1");
  const fs::path root = require_out(g);
  ensure_dir(root);
  const data::Dataset ds = data::generate_places(spec);
  data::write_dataset(root, ds);
  out << "wrote " << ds.database.size() << " database and " << ds.queries.size() << " query images to "
      << root.string() << "\n";
  return kExitOk;
}

int cmd_train(const Globals& g, const std::string& data_dir, const std::string& stage, const std::string& init,
              std::ostream& out, std::ostream& err) {
  if (stage != "all" && stage != "pretrain" && stage != "finetune") throw UsageError("--stage must be all, pretrain or finetune");
  if (stage == "finetune" && init.empty()) throw UsageError("--stage finetune needs --init <checkpoint>");
  if (data_dir.empty()) throw UsageError("--data is required");
  const train::TrainConfig config = resolve_config(g);
  const fs::path root = require_out(g);
  ensure_dir(root);
  const data::Dataset ds = data::load_dataset(data_dir);
  std::vector<fs::path> inputs = dataset_inputs(data_dir, ds);
  if (!g.config.empty()) inputs.push_back(g.config);

  const auto progress = [&](const train::MetricRow& r) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-8s step %4zu  lambda %.4f  loss %.6g%s\n", r.stage.c_str(), r.step, r.lambda,
                  r.loss_total, r.recall_at_1 ? ("  R@1 " + std::to_string(*r.recall_at_1)).c_str() : "");
    err << buf;
  };

  std::vector<train::MetricRow> rows;
  std::vector<fs::path> outputs;
  model::ModelWeights student;
  if (stage == "finetune") {
    inputs.push_back(init);
    student = model::load_model(init);
  } else {
    auto pre = train::train_pretrain(config, ds, progress);
    rows = pre.rows;
    model::save_model(root / "teacher.ttra", pre.teacher);
    model::save_model(root / "student.ttra", pre.student);
    outputs.insert(outputs.end(), {root / "teacher.ttra", root / "student.ttra"});
    student = std::move(pre.student);
    model::round_to_f32(student);  // finetune from exactly what student.ttra holds
  }
  if (stage != "pretrain") {
    auto fin = train::train_finetune(config, ds, student, progress);
    rows.insert(rows.end(), fin.rows.begin(), fin.rows.end());
    model::save_model(root / "latent.ttra", fin.latent);
    model::save_model(root / "model.ttra", fin.quantized);
    outputs.insert(outputs.end(), {root / "latent.ttra", root / "model.ttra"});
  }
  io::write_text(root / "metrics.csv", train::format_metrics_csv(rows));
  io::write_text(root / "config.txt", train::format_train_config(config));
  outputs.insert(outputs.end(), {root / "metrics.csv", root / "config.txt", root / "manifest.json"});
  write_manifest(root, "train --stage " + stage, config, inputs, outputs);
  out << "wrote " << rows.size() << " metric rows to " << (root / "metrics.csv").string() << "\n";
  return kExitOk;
}

int cmd_extract(const Globals& g, const std::string& model_path, const std::string& list,
                const std::vector<std::string>& images, std::ostream& out) {
  if (model_path.empty()) throw UsageError("--model is required");
  if (!list.empty() && !images.empty()) throw UsageError("give either --list or image paths, not both");
  const model::Mode mode = parse_mode(g);
  const fs::path dest = require_out(g);
  const model::ModelWeights weights = model::load_model(model_path);
  if (mode.kind != model::Mode::Kind::kQuantized && weights.is_quantized()) {
    throw UsageError("a packed model only runs with --mode quantized");
  }
  std::vector<std::uint64_t> ids;
  std::vector<Tensor> tensors;
  if (!list.empty()) {
    const fs::path base = fs::path(list).parent_path();
    std::istringstream in(io::read_text(list));
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::istringstream ls(line);
      std::uint64_t id = 0;
      std::uint64_t place = 0;
      std::string file;
      if (!(ls >> id >> place >> file)) throw DataError(list + ": line " + std::to_string(lineno) + ": expected 'id place file'");
      ids.push_back(id);
      tensors.push_back(read_image(base / file));
    }
  } else {
    for (std::size_t i = 0; i < images.size(); ++i) {
      ids.push_back(i);
      tensors.push_back(read_image(images[i]));
    }
  }
  const model::ViTConfig& c = weights.config;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors[i];
    if (t.dims.size() != 3 || t.channels() != c.channels || t.height() != c.image_size || t.width() != c.image_size) {
      throw DataError("image " + std::to_string(ids[i]) + " does not match the model input " +
                      std::to_string(c.channels) + "x" + std::to_string(c.image_size) + "x" +
                      std::to_string(c.image_size));
    }
  }
  const auto codes = train::embed_images(weights, tensors, mode);
  index::EmbeddingSet set{c.embed_dim, {}};
  for (std::size_t i = 0; i < codes.size(); ++i) set.entries.push_back({ids[i], codes[i]});
  index::build_index(set);  // rejects duplicate ids
  index::write_embeddings(dest, set);
  out << "wrote " << set.entries.size() << " embeddings of " << set.dim << " bits to " << dest.string() << "\n";
  return kExitOk;
}

int cmd_eval(const Globals& g, const std::string& db_path, const std::string& query_path, const std::string& gt_path,
             const std::string& model_path, std::ostream& out) {
  if (db_path.empty() || query_path.empty() || gt_path.empty()) throw UsageError("--db, --queries and --gt are required");
  if (g.k.empty() || std::find(g.k.begin(), g.k.end(), 0u) != g.k.end()) throw UsageError("--k values must be >= 1");
  const index::EmbeddingSet db = index::read_embeddings(db_path);
  const index::EmbeddingSet qs = index::read_embeddings(query_path);
  const index::GroundTruth gt = index::read_ground_truth(gt_path);
  if (db.dim != qs.dim) throw DataError("database and query embeddings differ in dimension");
  const index::BinaryIndex idx = index::build_index(db);
  if (idx.empty()) throw DataError("database is empty");
  for (const auto& [q, ids] : gt)
    for (const auto id : ids)
      if (!idx.contains(id)) throw DataError("gt: query " + std::to_string(q) + " references unknown id " + std::to_string(id));
  std::size_t model_bytes = 0;
  if (!model_path.empty()) model_bytes = io::read_file(model_path).size();
  const std::size_t kmax = *std::max_element(g.k.begin(), g.k.end());
  std::map<std::uint64_t, index::SearchResult> results;
  for (const auto& e : qs.entries) {
    if (!gt.count(e.id)) throw DataError("query " + std::to_string(e.id) + " has no ground-truth entry");
    results[e.id] = idx.search(e.code, kmax);
  }
  std::string csv = "k,recall,db_bytes,model_bytes,memory_efficiency\n";
  for (const std::size_t k : g.k) {
    const double recall = index::recall_at_k(results, gt, k);
    const double eff = index::memory_efficiency(100.0 * recall, model_bytes, idx.code_bytes());
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%zu,%zu,%.9g\n", k, recall, idx.code_bytes(), model_bytes, eff);
    csv += buf;
  }
  if (!g.out.empty()) {
    io::write_text(g.out, csv);
  } else {
    out << csv;
  }
  return kExitOk;
}

int cmd_bench(const Globals& g, const std::string& kind, const std::vector<std::size_t>& sizes,
              const std::vector<std::size_t>& dims, std::size_t repeats, std::ostream& out) {
  std::string csv;
  if (kind == "matmul") {
    std::vector<kernels::MatmulShape> shapes;
    for (const auto s : sizes) shapes.push_back({s, s, s});
    csv = kernels::timing_csv(kernels::benchmark_matmul(shapes, repeats, g.seed));
  } else if (kind == "search") {
    csv = index::search_timing_csv(index::benchmark_search(sizes, dims, repeats, 10, g.seed));
  } else {
    throw UsageError("bench kind must be matmul or search");
  }
  if (!g.out.empty()) {
    io::write_text(g.out, csv);
  } else {
    out << csv;
  }
  return kExitOk;
}

int cmd_inspect(const std::string& path, std::ostream& out) {
  const auto bytes = io::read_file(path);
  const std::string magic(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(4, bytes.size())));
  out << "file: " << path << "\nbytes: " << bytes.size() << "\n";
  if (magic == "TTRA") {
    const model::ModelWeights w = model::deserialize_model(bytes);
    const auto& c = w.config;
    out << "format: model v" << model::kModelFileVersion << "\nlayers: " << c.layers << "\nheads: " << c.heads
        << "\ndim: " << c.dim << "\nffn_dim: " << c.ffn_dim << "\npatch: " << c.patch << "\nimage_size: " << c.image_size
        << "\nchannels: " << c.channels << "\nembed_dim: " << c.embed_dim
        << "\nquantize_patch_embed: " << (c.quantize_patch_embed ? "true" : "false") << "\ntensors: " << w.params.size()
        << "\n";
    for (const auto& [name, p] : w.params) {
      if (const auto* m = std::get_if<Matrix>(&p)) {
        out << "  " << name << " f32 " << m->rows() << "x" << m->cols() << "\n";
      } else {
        const auto& t = std::get<kernels::PackedTernary>(p);
        out << "  " << name << " ternary " << t.rows << "x" << t.cols << " gamma=" << t.gamma << "\n";
      }
    }
  } else if (magic == "TNSR") {
    const Tensor t = decode_tensor(bytes);
    out << "format: tensor f32\ndims:";
    for (const auto d : t.dims) out << ' ' << d;
    out << "\n";
  } else if (magic == "BEMB") {
    const index::EmbeddingSet s = index::decode_embeddings(bytes);
    out << "format: embeddings v" << index::kEmbeddingFileVersion << "\ndim: " << s.dim
        << "\ncount: " << s.entries.size() << "\n";
  } else if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') {
    const Tensor t = decode_ppm(bytes);
    out << "format: ppm\ndims: " << t.channels() << ' ' << t.height() << ' ' << t.width() << "\n";
  } else {
    throw DataError(path + ": unrecognised file format");
  }
  return kExitOk;
}

}  // namespace

std::string git_blob_sha1(std::span<const std::uint8_t> content) {
  const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) && EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("SHA-1 digest failed");
  return hex(md, len);
}

bool apply_thread_limit() {
  const char* env = std::getenv("TETRA_THREADS");
  if (!env || !*env) return true;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1 || n > 4096) return false;
  omp_set_num_threads(static_cast<int>(n));
  return true;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Ternary transformer toolkit: data, training, extraction, retrieval and benchmarks", "tetra"};
  app.require_subcommand(1);
  Globals g;
  auto add_globals = [&](CLI::App* sub) {
    sub->add_option("--config", g.config, "key = value training config");
    sub->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) { g.seed = s; g.seed_set = true; },
                                            "random seed");
    sub->add_option("--out", g.out, "output path");
    sub->add_option("--k", g.k, "recall cut-offs")->delimiter(',');
    sub->add_option("--mode", g.mode, "float, blend or quantized");
    sub->add_option("--lambda", g.lambda, "blend factor for --mode blend");
  };

  data::PlacesSpec spec;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic places dataset");
  add_globals(gen);
  gen->add_option("--places", spec.places, "number of places (P)");
  gen->add_option("--per-place", spec.per_place, "images per place (M)");
  gen->add_option("--image-size", spec.image_size, "square image side");
  gen->add_option("--channels", spec.channels, "image channels");

  std::string data_dir, stage = "all", init;
  auto* tr = app.add_subcommand("train", "teacher, distillation pre-training and binary fine-tuning");
  add_globals(tr);
  tr->add_option("--data", data_dir, "dataset directory");
  tr->add_option("--stage", stage, "all, pretrain or finetune");
  tr->add_option("--init", init, "student checkpoint for --stage finetune");

  std::string model_path, list;
  std::vector<std::string> images;
  auto* ex = app.add_subcommand("extract", "binary embeddings for images");
  add_globals(ex);
  ex->add_option("--model", model_path, "model file");
  ex->add_option("--list", list, "image list with 'id place file' lines");
  ex->add_option("images", images, "image files (ids are positions)");

  std::string db_path, query_path, gt_path, eval_model;
  auto* ev = app.add_subcommand("eval", "recall@K and memory efficiency");
  add_globals(ev);
  ev->add_option("--db", db_path, "database embeddings");
  ev->add_option("--queries", query_path, "query embeddings");
  ev->add_option("--gt", gt_path, "ground truth");
  ev->add_option("--model", eval_model, "model file counted in memory efficiency");

  std::string kind;
  std::vector<std::size_t> sizes, dims{4096};
  std::size_t repeats = 20;
  auto* be = app.add_subcommand("bench", "matmul or search timing CSV");
  add_globals(be);
  be->add_option("kind", kind, "matmul or search")->required();
  be->add_option("--sizes", sizes, "square matmul sizes or database sizes")->delimiter(',');
  be->add_option("--dims", dims, "descriptor dims for search")->delimiter(',');
  be->add_option("--repeats", repeats, "timed repetitions");

  std::string inspect_path;
  auto* in = app.add_subcommand("inspect", "print a file header");
  in->add_option("file", inspect_path, "model, tensor, embedding or PPM file")->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "tetra: " << e.what() << "\n";
    return kExitUsage;
  }
  if (!apply_thread_limit()) {
    err << "tetra: TETRA_THREADS must be a positive integer\n";
    return kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(g, spec, out);
    if (*tr) return cmd_train(g, data_dir, stage, init, out, err);
    if (*ex) return cmd_extract(g, model_path, list, images, out);
    if (*ev) return cmd_eval(g, db_path, query_path, gt_path, eval_model, out);
    if (*be) {
      if (sizes.empty()) sizes = kind == "search" ? std::vector<std::size_t>{10000} : std::vector<std::size_t>{64, 128, 256};
      return cmd_bench(g, kind, sizes, dims, repeats, out);
    }
    if (*in) return cmd_inspect(inspect_path, out);
  } catch (const UsageError& e) {
    err << "tetra: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "tetra: numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "tetra: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace tetra::cli
