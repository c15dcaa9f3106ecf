#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "uwsc/enhance.hpp"
#include "uwsc/metrics.hpp"
#include "uwsc/pipeline.hpp"
#include "uwsc/sparse.hpp"
#include "uwsc/training.hpp"

namespace fs = std::filesystem;
using namespace uwsc;

namespace {

constexpr std::uint64_t kDefaultSeed = 2024;

/// Bad flag values or combinations; maps to exit status 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void kv(const std::string& key, const std::string& value) { std::cout << key << '=' << value << '\n'; }
void kv(const std::string& key, double value) { kv(key, num(value)); }
void kv(const std::string& key, long long value) { kv(key, std::to_string(value)); }
void kv(const std::string& key, int value) { kv(key, std::to_string(value)); }

Layer parse_layer(const std::string& s) {
  if (s == "BL") return Layer::BL;
  if (s == "EL") return Layer::EL;
  throw UsageError("--layer must be BL or EL, got '" + s + "'");
}

void check_k(int k) {
  if (k < 1 || k > kAtoms) throw UsageError("--k must lie in [1,256], got " + std::to_string(k));
}

void check_lambda(int lambda) {
  try {
    lambda_id(lambda);
  } catch (const PreconditionError& e) {
    throw UsageError(std::string("--lambda: ") + e.what());
  }
}

/// Outputs must never overwrite an input.
void check_distinct(const std::vector<std::string>& inputs, const std::vector<std::string>& outputs) {
  for (const auto& o : outputs) {
    if (o.empty()) continue;
    const auto po = fs::weakly_canonical(fs::absolute(o));
    for (const auto& i : inputs)
      if (!i.empty() && po == fs::weakly_canonical(fs::absolute(i)))
        throw UsageError("output '" + o + "' would overwrite input '" + i + "'");
  }
}

std::string models_dir(const std::string& flag) {
  std::string dir = flag;
  if (dir.empty())
    if (const char* env = std::getenv("UWSC_MODEL_DIR")) dir = env;
  if (dir.empty()) throw UsageError("no model directory: pass --models or set UWSC_MODEL_DIR");
  return dir;
}

void require_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw UsageError("model directory '" + dir + "' does not exist");
}

std::string d1_path(const std::string& dir) { return (fs::path(dir) / "d1.uwdict").string(); }
std::string d2_path(const std::string& dir) { return (fs::path(dir) / "d2.uwdict").string(); }
std::string ckpt_path(const std::string& dir, int lambda) {
  return (fs::path(dir) / ("lambda_" + std::to_string(lambda) + ".uwckpt")).string();
}

CodecSystem load_system(const std::string& dir, int lambda) {
  require_dir(dir);
  auto models = load_models<float>(ckpt_path(dir, lambda));
  if (models.config.lambda != lambda)
    throw ModelMismatchError("checkpoint '" + ckpt_path(dir, lambda) + "' holds lambda " +
                             std::to_string(models.config.lambda));
  return CodecSystem(load_dictionary(d1_path(dir)), load_dictionary(d2_path(dir)), std::move(models));
}

std::vector<RgbImage> load_all(const std::vector<std::string>& paths) {
  std::vector<RgbImage> out;
  for (const auto& p : paths) out.push_back(load_image(p));
  return out;
}

/// Targets from --target when given, else the reference enhancer.
std::vector<RgbImage> targets_for(const std::vector<RgbImage>& sources, const std::vector<std::string>& target_paths) {
  if (target_paths.empty()) {
    std::vector<RgbImage> out;
    for (const auto& s : sources) out.push_back(reference_enhance(s));
    return out;
  }
  auto out = load_all(target_paths);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i].height != sources[i].height || out[i].width != sources[i].width)
      throw DimError("target '" + target_paths[i] + "' differs in size from its source");
  return out;
}

void check_targets(const std::vector<std::string>& inputs, const std::vector<std::string>& targets) {
  if (!targets.empty() && targets.size() != inputs.size())
    throw UsageError("--target must be given once per --input or not at all");
}

std::string read_text(const std::string& path) {
  const auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

// ---------------------------------------------------------------- commands

struct TrainDictArgs {
  std::vector<std::string> inputs;
  std::string out;
  int iterations = 10, k_train = 8, stride = 8;
  std::uint64_t seed = kDefaultSeed;
};

int run_train_dict(const TrainDictArgs& a) {
  if (a.iterations < 1 || a.k_train < 1 || a.k_train > kAtoms || a.stride < 1)
    throw UsageError("--iterations, --k-train and --stride must be positive (k-train at most 256)");
  check_distinct(a.inputs, {a.out});
  const auto images = load_all(a.inputs);
  const auto patches = collect_patches(images, a.stride);
  std::array<DictionaryTrainTrace, 3> traces;
  const auto d1 = train_d1(patches, kAtoms, a.iterations, a.k_train, a.seed, &traces);
  save_dictionary(a.out, d1);
  double err = 0.0;
  for (const auto& t : traces) err += t.updated.empty() ? 0.0 : t.updated.back() / 3.0;
  kv("atoms", d1.atoms());
  kv("patches", static_cast<long long>(patches[0].cols()));
  kv("final_error", err);
  return 0;
}

struct DeriveDictArgs {
  std::string d1;
  std::vector<std::string> inputs, targets;
  std::string out;
  int k = 128;
};

int run_derive_dict(const DeriveDictArgs& a) {
  check_k(a.k);
  check_targets(a.inputs, a.targets);
  auto ins = a.inputs;
  ins.insert(ins.end(), a.targets.begin(), a.targets.end());
  ins.push_back(a.d1);
  check_distinct(ins, {a.out});
  const auto d1 = load_dictionary(a.d1);
  const auto sources = load_all(a.inputs);
  const auto targets = targets_for(sources, a.targets);
  std::vector<ImagePair> pairs;
  for (std::size_t i = 0; i < sources.size(); ++i) pairs.push_back({sources[i], targets[i]});
  const auto d2 = derive_d2(pairs, d1, a.k);
  save_dictionary(a.out, d2);
  double drift = 0.0;
  for (int c = 0; c < 3; ++c) drift += (d2.channel[c] - d1.channel[c]).squaredNorm();
  kv("atoms", d2.atoms());
  kv("pairs", static_cast<long long>(pairs.size()));
  kv("frobenius_drift", std::sqrt(drift));
  return 0;
}

struct TrainCodecArgs {
  std::string models;
  std::vector<std::string> inputs, targets;
  std::string config, log;
  int lambda = 64;
  std::map<std::string, std::string> overrides;  // flag name -> value text
};

int run_train_codec(const TrainCodecArgs& a) {
  check_lambda(a.lambda);
  check_targets(a.inputs, a.targets);
  TrainConfig flags_only;
  try {
    for (const auto& [k, v] : a.overrides) flags_only.set(k, v);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const std::string dir = models_dir(a.models);
  require_dir(dir);
  auto ins = a.inputs;
  ins.insert(ins.end(), a.targets.begin(), a.targets.end());
  check_distinct(ins, {ckpt_path(dir, a.lambda), a.log});

  TrainConfig cfg;
  if (!a.config.empty()) cfg = TrainConfig::from_text(read_text(a.config));
  cfg.lambda = a.lambda;
  for (const auto& [k, v] : a.overrides) cfg.set(k, v);
  cfg.validate();

  const auto d1 = load_dictionary(d1_path(dir));
  const auto d2 = load_dictionary(d2_path(dir));
  const auto sources = load_all(a.inputs);
  const auto targets = targets_for(sources, a.targets);
  std::vector<TrainingPair> images;
  for (std::size_t i = 0; i < sources.size(); ++i) images.push_back({sources[i], targets[i]});
  const auto patches = extract_training_patches(images, cfg.patch, cfg.patches, derive_seed(cfg.seed, 21));

  Trainer trainer(d1, d2, patches, cfg, ModelSet<float>(ModelConfig::toy(cfg.lambda), derive_seed(cfg.seed, 22)));
  std::ofstream log_file;
  if (!a.log.empty()) {
    log_file.open(a.log, std::ios::trunc);
    if (!log_file) throw IoError("cannot open '" + a.log + "' for writing");
  }
  const auto losses = trainer.run(cfg.steps(), a.log.empty() ? nullptr : &log_file);
  save_models(ckpt_path(dir, cfg.lambda), trainer.models());
  kv("steps", trainer.steps_done());
  if (!losses.empty()) {
    const auto& l = losses.back();
    kv("r_total", l.r_total);
    kv("d1", l.d1);
    kv("d2", l.d2);
    kv("d3", l.d3);
    kv("d4", l.d4);
    kv("total", l.total);
  }
  kv("checkpoint", ckpt_path(dir, cfg.lambda));
  return 0;
}

struct EncodeArgs {
  std::string input, out, models, layer = "EL";
  int k = 128, lambda = 64;
};

int run_encode(const EncodeArgs& a) {
  const Layer layer = parse_layer(a.layer);
  check_k(a.k);
  check_lambda(a.lambda);
  const std::string dir = models_dir(a.models);
  check_distinct({a.input}, {a.out});
  require_dir(dir);
  const auto img = load_image(a.input);
  const auto sys = load_system(dir, a.lambda);
  const auto res = encode(img, sys, a.k, layer);
  write_file(a.out, res.bitstream);
  kv("bpp_bl", res.bpp_bl);
  kv("bpp_total", res.bpp_total);
  kv("zero_fraction", res.zero_fraction);
  kv("bytes", static_cast<long long>(res.bitstream.size()));
  return 0;
}

struct DecodeArgs {
  std::string input, out, models, layer = "EL";
};

int run_decode(const DecodeArgs& a) {
  const Layer layer = parse_layer(a.layer);
  const std::string dir = models_dir(a.models);
  check_distinct({a.input}, {a.out});
  require_dir(dir);
  const auto bytes = read_file(a.input);
  ByteReader r(bytes);
  const auto header = read_header(r);
  const auto sys = load_system(dir, header.lambda);
  const auto res = decode(bytes, sys, layer);
  save_image(a.out, res.image);
  kv("width", res.image.width);
  kv("height", res.image.height);
  kv("lambda", header.lambda);
  kv("k", header.k);
  kv("layer", a.layer);
  return 0;
}

struct EvalArgs {
  std::string ref, test, metrics = "psnr,ssim,uiqm", csv;
};

int run_eval(const EvalArgs& a) {
  bool want_psnr = false, want_ssim = false, want_uiqm = false;
  std::stringstream ss(a.metrics);
  std::string m;
  while (std::getline(ss, m, ',')) {
    if (m == "psnr") want_psnr = true;
    else if (m == "ssim") want_ssim = true;
    else if (m == "uiqm") want_uiqm = true;
    else throw UsageError("unknown metric '" + m + "'; use psnr, ssim, uiqm");
  }
  if (!want_psnr && !want_ssim && !want_uiqm) throw UsageError("--metrics is empty");
  if ((want_psnr || want_ssim) && a.ref.empty()) throw UsageError("psnr and ssim need --ref");
  check_distinct({a.ref, a.test}, {a.csv});

  const auto test = load_image(a.test);
  std::optional<RgbImage> ref;
  if (!a.ref.empty()) ref = load_image(a.ref);
  std::map<std::string, double> row;
  if (want_psnr) row["psnr"] = psnr(*ref, test);
  if (want_ssim) row["ssim"] = ssim(*ref, test);
  if (want_uiqm) {
    const auto q = uiqm(test);
    row["uiqm"] = q.uiqm;
    row["uicm"] = q.uicm;
    row["uism"] = q.uism;
    row["uiconm"] = q.uiconm;
  }
  static const char* order[] = {"psnr", "ssim", "uiqm", "uicm", "uism", "uiconm"};
  for (const char* key : order)
    if (row.count(key)) kv(key, row[key]);

  if (!a.csv.empty()) {
    const bool fresh = !fs::exists(a.csv) || fs::file_size(a.csv) == 0;
    std::ofstream out(a.csv, std::ios::app);
    if (!out) throw IoError("cannot open '" + a.csv + "' for appending");
    if (fresh) out << "ref,test,psnr,ssim,uiqm,uicm,uism,uiconm\n";
    out << a.ref << ',' << a.test;
    for (const char* key : order) out << ',' << (row.count(key) ? num(row[key]) : "");
    out << '\n';
  }
  return 0;
}

struct RdCurveArgs {
  std::vector<std::string> inputs, targets;
  std::string models, csv, svg, metric = "psnr";
  std::vector<int> lambdas{kLambdas.begin(), kLambdas.end()};
  int k = 128;
};

int run_rd_curve(const RdCurveArgs& a) {
  check_k(a.k);
  for (int l : a.lambdas) check_lambda(l);
  if (a.metric != "psnr" && a.metric != "ssim" && a.metric != "uiqm") throw UsageError("--metric must be psnr, ssim or uiqm");
  if (a.csv.empty() && a.svg.empty()) throw UsageError("give --csv and/or --svg");
  check_targets(a.inputs, a.targets);
  const std::string dir = models_dir(a.models);
  auto ins = a.inputs;
  ins.insert(ins.end(), a.targets.begin(), a.targets.end());
  check_distinct(ins, {a.csv, a.svg});
  require_dir(dir);

  const auto sources = load_all(a.inputs);
  const auto targets = targets_for(sources, a.targets);
  std::vector<RdRecord> records;
  for (int lambda : a.lambdas) {
    const auto sys = load_system(dir, lambda);
    for (std::size_t i = 0; i < sources.size(); ++i) {
      const auto res = encode(sources[i], sys, a.k, Layer::EL);
      const std::string id = fs::path(a.inputs[i]).filename().string();
      for (const auto& [name, bpp, img] : {std::tuple{"BL", res.bpp_bl, &res.image_bl},
                                           std::tuple{"EL", res.bpp_total, &res.image_el}}) {
        const auto q = uiqm(*img);
        records.push_back({id, lambda, name, bpp, psnr(targets[i], *img), ssim(targets[i], *img), q.uiqm, q.uicm,
                           q.uism, q.uiconm});
      }
    }
  }
  if (!a.csv.empty()) {
    const auto text = rd_csv(records);
    write_file(a.csv, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
  if (!a.svg.empty()) {
    const auto series = rd_series(records, a.metric);
    const auto text = rd_svg(series, a.metric);
    write_file(a.svg, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
  kv("records", static_cast<long long>(records.size()));
  return 0;
}

struct BdRateArgs {
  std::string anchor, test, metric = "psnr", layer = "EL";
};

std::vector<RdPoint> curve_from(const std::string& path, const std::string& metric, const std::string& layer) {
  const auto records = parse_rd_csv(read_text(path));
  for (const auto& s : rd_series(records, metric))
    if (s.label == layer) return s.points;
  throw DataError("'" + path + "' has no rows for layer " + layer);
}

int run_bdrate(const BdRateArgs& a) {
  if (a.metric != "psnr" && a.metric != "ssim" && a.metric != "uiqm") throw UsageError("--metric must be psnr, ssim or uiqm");
  parse_layer(a.layer);
  const auto anchor = curve_from(a.anchor, a.metric, a.layer);
  const auto test = curve_from(a.test, a.metric, a.layer);
  if (anchor.size() < 4 || test.size() < 4)
    throw UsageError("bd-rate needs at least 4 points per curve; got " + std::to_string(anchor.size()) + " and " +
                     std::to_string(test.size()));
  const auto bd = bd_rate(anchor, test);
  kv("bd_rate", bd ? num(*bd) : std::string("NA"));
  return 0;
}

struct EnhanceArgs {
  std::string input, out;
};

int run_enhance(const EnhanceArgs& a) {
  check_distinct({a.input}, {a.out});
  const auto img = load_image(a.input);
  save_image(a.out, reference_enhance(img));
  kv("width", img.width);
  kv("height", img.height);
  return 0;
}

struct InspectArgs {
  std::string dict, d2, out_dir;
};

int run_inspect(const InspectArgs& a) {
  if (!a.d2.empty() && a.out_dir.empty()) throw UsageError("--d2 is only used together with --out-dir");
  const auto d = load_dictionary(a.dict);
  kv("atoms", d.atoms());
  kv("atom_dim", d.atom_dim());
  static constexpr const char* names[3] = {"r", "g", "b"};
  for (int c = 0; c < 3; ++c) {
    const auto norms = d.channel[c].colwise().norm();
    Eigen::MatrixXd gram = (d.channel[c].transpose() * d.channel[c]).cwiseAbs();
    gram.diagonal().setZero();
    const std::string p = std::string(names[c]) + "_";
    kv(p + "norm_min", norms.minCoeff());
    kv(p + "norm_max", norms.maxCoeff());
    kv(p + "coherence", gram.maxCoeff() / (norms.maxCoeff() * norms.maxCoeff()));
  }
  if (!a.out_dir.empty()) {
    if (!fs::is_directory(a.out_dir)) throw UsageError("output directory '" + a.out_dir + "' does not exist");
    std::vector<std::string> written;
    if (a.d2.empty()) {
      for (int c = 0; c < 3; ++c) {
        const std::string path = (fs::path(a.out_dir) / ("d1_" + std::string(names[c]) + ".png")).string();
        save_image(path, dictionary_mosaic(d.channel[c]));
        written.push_back(path);
      }
    } else {
      written = export_dictionary_diff(d, load_dictionary(a.d2), a.out_dir);
    }
    kv("mosaics", static_cast<long long>(written.size()));
  }
  return 0;
}

int report(int status, const std::string& msg) {
  std::cerr << "uwsc: " << msg << '\n';
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-layer underwater image codec"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "uwsc 0.1.0");
  std::uint64_t seed = kDefaultSeed;
  app.add_option("--seed", seed, "Seed for every random choice")->capture_default_str();

  TrainDictArgs td;
  auto* c_td = app.add_subcommand("train-dict", "Learn D1 from images");
  c_td->add_option("--input", td.inputs, "Training images")->required();
  c_td->add_option("--out", td.out, "Output .uwdict")->required();
  c_td->add_option("--iterations", td.iterations)->capture_default_str();
  c_td->add_option("--k-train", td.k_train, "Sparsity while learning")->capture_default_str();
  c_td->add_option("--stride", td.stride, "Patch stride in pixels")->capture_default_str();

  DeriveDictArgs dd;
  auto* c_dd = app.add_subcommand("derive-dict", "Derive the enhanced dictionary D2");
  c_dd->add_option("--d1", dd.d1)->required();
  c_dd->add_option("--input", dd.inputs, "Source images")->required();
  c_dd->add_option("--target", dd.targets, "Enhanced targets (default: reference enhancer)");
  c_dd->add_option("--k", dd.k)->capture_default_str();
  c_dd->add_option("--out", dd.out)->required();

  TrainCodecArgs tc;
  std::string o_lr, o_epochs, o_batch, o_patches, o_patch, o_klo, o_khi;
  auto* c_tc = app.add_subcommand("train-codec", "Train the model set for one lambda");
  c_tc->add_option("--models", tc.models, "Model directory (default $UWSC_MODEL_DIR)");
  c_tc->add_option("--lambda", tc.lambda)->capture_default_str();
  c_tc->add_option("--input", tc.inputs, "Source images")->required();
  c_tc->add_option("--target", tc.targets, "Enhanced targets (default: reference enhancer)");
  c_tc->add_option("--config", tc.config, "key=value config file; flags take precedence");
  c_tc->add_option("--log", tc.log, "CSV loss log");
  auto* f_lr = c_tc->add_option("--lr", o_lr);
  auto* f_epochs = c_tc->add_option("--epochs", o_epochs);
  auto* f_batch = c_tc->add_option("--batch", o_batch);
  auto* f_patches = c_tc->add_option("--patches", o_patches, "Number of training crops");
  auto* f_patch = c_tc->add_option("--patch", o_patch, "Crop size");
  auto* f_klo = c_tc->add_option("--k-lo", o_klo);
  auto* f_khi = c_tc->add_option("--k-hi", o_khi);

  EncodeArgs en;
  auto* c_en = app.add_subcommand("encode", "Compress an image");
  c_en->add_option("--input", en.input)->required();
  c_en->add_option("--out", en.out)->required();
  c_en->add_option("--layer", en.layer, "BL or EL")->capture_default_str();
  c_en->add_option("--k", en.k)->capture_default_str();
  c_en->add_option("--lambda", en.lambda)->capture_default_str();
  c_en->add_option("--models", en.models, "Model directory (default $UWSC_MODEL_DIR)");

  DecodeArgs de;
  auto* c_de = app.add_subcommand("decode", "Reconstruct an image");
  c_de->add_option("--input", de.input)->required();
  c_de->add_option("--out", de.out)->required();
  c_de->add_option("--layer", de.layer, "BL or EL")->capture_default_str();
  c_de->add_option("--models", de.models, "Model directory (default $UWSC_MODEL_DIR)");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Quality metrics");
  c_ev->add_option("--ref", ev.ref, "Reference image (not needed for uiqm)");
  c_ev->add_option("--test", ev.test)->required();
  c_ev->add_option("--metrics", ev.metrics)->capture_default_str();
  c_ev->add_option("--csv", ev.csv, "Append a row to this CSV");

  RdCurveArgs rd;
  auto* c_rd = app.add_subcommand("rd-curve", "Rate-distortion sweep over lambdas");
  c_rd->add_option("--input", rd.inputs)->required();
  c_rd->add_option("--target", rd.targets, "References (default: reference enhancer)");
  c_rd->add_option("--models", rd.models, "Model directory (default $UWSC_MODEL_DIR)");
  c_rd->add_option("--lambdas", rd.lambdas)->delimiter(',');
  c_rd->add_option("--k", rd.k)->capture_default_str();
  c_rd->add_option("--metric", rd.metric, "Quality axis of the SVG")->capture_default_str();
  c_rd->add_option("--csv", rd.csv);
  c_rd->add_option("--svg", rd.svg);

  BdRateArgs bd;
  auto* c_bd = app.add_subcommand("bdrate", "Bjontegaard delta rate between two RD CSVs");
  c_bd->add_option("--anchor", bd.anchor)->required();
  c_bd->add_option("--test", bd.test)->required();
  c_bd->add_option("--metric", bd.metric)->capture_default_str();
  c_bd->add_option("--layer", bd.layer)->capture_default_str();

  EnhanceArgs eh;
  auto* c_eh = app.add_subcommand("enhance-ref", "Apply the reference enhancer");
  c_eh->add_option("--input", eh.input)->required();
  c_eh->add_option("--out", eh.out)->required();

  InspectArgs in;
  auto* c_in = app.add_subcommand("inspect-dict", "Dictionary statistics and atom mosaics");
  c_in->add_option("--dict", in.dict)->required();
  c_in->add_option("--d2", in.d2, "Second dictionary for difference mosaics");
  c_in->add_option("--out-dir", in.out_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  td.seed = seed;
  for (auto [opt, key, text] : {std::tuple{f_lr, "lr", &o_lr}, std::tuple{f_epochs, "epochs", &o_epochs},
                                std::tuple{f_batch, "batch", &o_batch}, std::tuple{f_patches, "patches", &o_patches},
                                std::tuple{f_patch, "patch", &o_patch}, std::tuple{f_klo, "k_lo", &o_klo},
                                std::tuple{f_khi, "k_hi", &o_khi}})
    if (opt->count() > 0) tc.overrides[key] = *text;
  if (app.get_option("--seed")->count() > 0) tc.overrides["seed"] = std::to_string(seed);

  try {
    if (*c_td) return run_train_dict(td);
    if (*c_dd) return run_derive_dict(dd);
    if (*c_tc) return run_train_codec(tc);
    if (*c_en) return run_encode(en);
    if (*c_de) return run_decode(de);
    if (*c_ev) return run_eval(ev);
    if (*c_rd) return run_rd_curve(rd);
    if (*c_bd) return run_bdrate(bd);
    if (*c_eh) return run_enhance(eh);
    if (*c_in) return run_inspect(in);
    return report(1, "no command");
  } catch (const UsageError& e) {
    return report(1, e.what());
  } catch (const PreconditionError& e) {
    return report(1, e.what());
  } catch (const NumericError& e) {
    return report(3, e.what());
  } catch (const Error& e) {
    return report(2, e.what());
  } catch (const fs::filesystem_error& e) {
    return report(2, e.what());
  } catch (const std::bad_alloc&) {
    return report(3, "out of memory");
  }
}
