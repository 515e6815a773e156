// Command-line front end: dataset generation, training, inference (learned
// pipeline or direct per-patch fitting), and evaluation reports.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "ctbound/config.hpp"
#include "ctbound/metrics.hpp"
#include "ctbound/pipeline.hpp"
#include "ctbound/solver.hpp"

namespace fs = std::filesystem;
using namespace ctbound;

namespace {

constexpr const char* kGeneratorVersion = "ctbound-data-1";
constexpr const char* kParamsGridVersion = "params-grid-1";

void ensure_output_dir(const std::string& path, bool force) {
  if (fs::exists(path) && !fs::is_directory(path))
    throw InputError("output path exists and is not a directory: " + path);
  if (fs::exists(path) && !fs::is_empty(path) && !force)
    throw InputError("output directory not empty (use --force): " + path);
  fs::create_directories(path);
}

void write_snapshot(const Config& cfg, const std::string& dir) {
  std::ofstream os(dir + "/config.txt");
  cfg.write(os);
}

std::string zero_pad(int v, int width) {
  std::ostringstream os;
  os << std::setw(width) << std::setfill('0') << v;
  return os.str();
}

// ---- dataset generation -----------------------------------------------------

void cmd_gen_data(const Config& cfg, const std::string& out_dir, bool force) {
  cfg.reject_unknown({"data.kind", "data.count", "data.seed", "data.alpha_min",
                      "data.alpha_max", "data.patch_size", "data.channels",
                      "data.vertex_span", "data.min_angle_gap_deg", "data.height",
                      "data.width", "data.min_shapes", "data.max_shapes"});
  const std::string kind = cfg.get_string("data.kind", "patches");
  ensure_output_dir(out_dir, force);
  write_snapshot(cfg, out_dir);
  std::ofstream mf(out_dir + "/manifest.txt");
  mf << std::setprecision(17);
  mf << "generator " << kGeneratorVersion << "\n";
  mf << "kind " << kind << "\n";

  if (kind == "patches") {
    PatchDatasetOptions opt;
    opt.count = static_cast<int>(cfg.get_int("data.count", 2000));
    opt.seed = cfg.get_seed("data.seed", 0);
    opt.alpha_min = cfg.get_double("data.alpha_min", 2.0);
    opt.alpha_max = cfg.get_double("data.alpha_max", 10.0);
    opt.patch_size = static_cast<int>(cfg.get_int("data.patch_size", 21));
    opt.channels = static_cast<int>(cfg.get_int("data.channels", 1));
    opt.vertex_span = cfg.get_double("data.vertex_span", 5.0);
    opt.min_angle_gap_deg = cfg.get_double("data.min_angle_gap_deg", 10.0);
    auto data = gen_patch_dataset(opt);
    mf << "count " << data.size() << "\n";
    mf << "seed " << opt.seed << "\n";
    mf << "patch_size " << opt.patch_size << "\n";
    mf << "channels " << opt.channels << "\n";
    for (size_t i = 0; i < data.size(); ++i) {
      const std::string name = "patch_" + zero_pad(static_cast<int>(i), 5) + ".ctb1";
      save_ctb1(out_dir + "/" + name, data[i].noisy);
      const auto& t = data[i].truth;
      mf << "sample " << i << " alpha " << data[i].noisy.alpha << " file " << name
         << " x0 " << t.x0 << " y0 " << t.y0 << " angles " << t.angles[0] << " "
         << t.angles[1] << " " << t.angles[2] << " colors";
      for (int j = 0; j < 3; ++j)
        for (double c : t.colors[j]) mf << " " << c;
      mf << "\n";
    }
  } else if (kind == "composites") {
    CompositeOptions opt;
    opt.count = static_cast<int>(cfg.get_int("data.count", 20));
    opt.seed = cfg.get_seed("data.seed", 0);
    opt.alpha_min = cfg.get_double("data.alpha_min", 2.0);
    opt.alpha_max = cfg.get_double("data.alpha_max", 10.0);
    opt.height = static_cast<int>(cfg.get_int("data.height", 147));
    opt.width = static_cast<int>(cfg.get_int("data.width", 147));
    opt.min_shapes = static_cast<int>(cfg.get_int("data.min_shapes", 2));
    opt.max_shapes = static_cast<int>(cfg.get_int("data.max_shapes", 4));
    auto data = gen_composite_images(opt);
    mf << "count " << data.size() << "\n";
    mf << "seed " << opt.seed << "\n";
    for (size_t i = 0; i < data.size(); ++i) {
      const std::string stem = "comp_" + zero_pad(static_cast<int>(i), 5);
      save_ctb1(out_dir + "/" + stem + ".ctb1", data[i].noisy);
      save_image_unit(out_dir + "/" + stem + "_clean.png", data[i].clean);
      save_boundary_png(out_dir + "/" + stem + "_mask.png", data[i].boundary_mask);
      mf << "sample " << i << " alpha " << data[i].noisy.alpha << " file " << stem
         << ".ctb1 clean " << stem << "_clean.png mask " << stem << "_mask.png\n";
    }
  } else {
    throw ConfigError("gen-data: kind must be 'patches' or 'composites'");
  }
  std::cout << "wrote " << kind << " dataset to " << out_dir << "\n";
}

// ---- dataset loading --------------------------------------------------------

std::vector<PatchSample> load_patch_dataset(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.txt");
  if (!mf) throw InputError("cannot read " + dir + "/manifest.txt");
  std::vector<PatchSample> out;
  int patch_size = 21, channels = 1;
  std::string line;
  while (std::getline(mf, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "patch_size") ls >> patch_size;
    if (tag == "channels") ls >> channels;
    if (tag != "sample") continue;
    PatchSample s;
    long idx;
    std::string kw, file;
    double alpha;
    ls >> idx >> kw >> alpha >> kw >> file >> kw >> s.truth.x0 >> kw >> s.truth.y0 >> kw >>
        s.truth.angles[0] >> s.truth.angles[1] >> s.truth.angles[2] >> kw;
    for (int j = 0; j < 3; ++j) {
      s.truth.colors[j].resize(channels);
      for (int c = 0; c < channels; ++c) ls >> s.truth.colors[j][c];
    }
    if (!ls) throw InputError("malformed manifest line in " + dir);
    s.noisy = load_ctb1(dir + "/" + file);
    s.clean = render_patch_color(s.truth, patch_size);
    out.push_back(std::move(s));
  }
  if (out.empty()) throw InputError("no samples in " + dir);
  return out;
}

struct CompositeEntry {
  PhotonImage noisy;
  ColorField clean;
  ScalarField mask;
};

std::vector<CompositeEntry> load_composite_dataset(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.txt");
  if (!mf) throw InputError("cannot read " + dir + "/manifest.txt");
  std::vector<CompositeEntry> out;
  std::string line;
  while (std::getline(mf, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag != "sample") continue;
    long idx;
    double alpha;
    std::string kw, file, clean, mask;
    ls >> idx >> kw >> alpha >> kw >> file >> kw >> clean >> kw >> mask;
    if (!ls) throw InputError("malformed manifest line in " + dir);
    CompositeEntry e;
    e.noisy = load_ctb1(dir + "/" + file);
    ColorField cf = load_image(dir + "/" + clean);
    e.clean = cf;
    ColorField mk = load_image(dir + "/" + mask);
    e.mask = ScalarField(mk.height, mk.width);
    for (int y = 0; y < mk.height; ++y)
      for (int x = 0; x < mk.width; ++x) e.mask.at(y, x) = mk.at(y, x, 0) >= 0.5 ? 1.0 : 0.0;
    out.push_back(std::move(e));
  }
  if (out.empty()) throw InputError("no samples in " + dir);
  return out;
}

// ---- model construction from presets / checkpoints --------------------------

InitModelConfig init_config_for(const std::string& preset, int channels) {
  if (preset == "desk") return InitModelConfig::desk(channels);
  if (preset == "full") return InitModelConfig::full(channels);
  throw ConfigError("unknown model preset '" + preset + "' (desk|full)");
}

RefineModelConfig refine_config_for(const std::string& preset, int channels) {
  if (preset == "desk") return RefineModelConfig::desk(channels);
  if (preset == "full") return RefineModelConfig::full(channels);
  throw ConfigError("unknown model preset '" + preset + "' (desk|full)");
}

InitStageModel<float> load_init_model(const std::string& path) {
  ParamStore<float> probe;
  std::map<std::string, std::string> meta;
  {
    // read only the meta lines first to learn the architecture
    std::ifstream mf(path);
    if (!mf) throw InputError("cannot read checkpoint " + path);
    std::string line;
    while (std::getline(mf, line)) {
      std::istringstream ls(line);
      std::string tag, k, v;
      ls >> tag >> k >> v;
      if (tag == "meta") meta[k] = v;
    }
  }
  const std::string preset = meta.count("preset") ? meta["preset"] : "desk";
  const int channels = meta.count("channels") ? std::stoi(meta["channels"]) : 1;
  auto model = InitStageModel<float>::create(init_config_for(preset, channels), 0);
  load_checkpoint(path, model.store);
  return model;
}

RefineStageModel<float> load_refine_model(const std::string& path) {
  std::map<std::string, std::string> meta;
  {
    std::ifstream mf(path);
    if (!mf) throw InputError("cannot read checkpoint " + path);
    std::string line;
    while (std::getline(mf, line)) {
      std::istringstream ls(line);
      std::string tag, k, v;
      ls >> tag >> k >> v;
      if (tag == "meta") meta[k] = v;
    }
  }
  const std::string preset = meta.count("preset") ? meta["preset"] : "desk";
  const int channels = meta.count("channels") ? std::stoi(meta["channels"]) : 1;
  auto model = RefineStageModel<float>::create(refine_config_for(preset, channels), 0);
  load_checkpoint(path, model.store);
  return model;
}

// ---- training ---------------------------------------------------------------

LrSchedule schedule_from_config(const Config& cfg, const std::string& section,
                                const LrSchedule& fallback) {
  const std::string kind = cfg.get_string(section + ".schedule", "");
  if (kind.empty()) return fallback;
  if (kind == "constant") return LrSchedule::constant(cfg.get_double(section + ".lr", 1e-4));
  if (kind == "step")
    return LrSchedule::step_decay(cfg.get_double(section + ".lr", 2e-4),
                                  cfg.get_double(section + ".decay_factor", 0.5),
                                  static_cast<int>(cfg.get_int(section + ".decay_every", 80)));
  if (kind == "triangular")
    return LrSchedule::triangular(cfg.get_double(section + ".lr_min", 1.75e-4),
                                  cfg.get_double(section + ".lr_max", 3.5e-4),
                                  static_cast<int>(cfg.get_int(section + ".cycle", 100)));
  throw ConfigError("unknown schedule '" + kind + "' (constant|step|triangular)");
}

TrainConfig train_config_from(const Config& cfg, const std::string& section,
                              const TrainConfig& base) {
  TrainConfig c = base;
  c.epochs = static_cast<int>(cfg.get_int(section + ".epochs", c.epochs));
  c.batch_size = static_cast<int>(cfg.get_int(section + ".batch_size", c.batch_size));
  c.lambda_b = cfg.get_double(section + ".lambda_b", c.lambda_b);
  c.lambda_c = cfg.get_double(section + ".lambda_c", c.lambda_c);
  c.eps_b = cfg.get_double(section + ".eps_b", c.eps_b);
  c.eps_delta = cfg.get_double(section + ".eps_delta", c.eps_delta);
  c.seed = cfg.get_seed(section + ".seed", c.seed);
  c.schedule = schedule_from_config(cfg, section, c.schedule);
  return c;
}

const std::set<std::string> kTrainSectionKeys = {
    "epochs",   "batch_size", "lambda_b", "lambda_c", "eps_b", "eps_delta", "seed",
    "schedule", "lr",         "decay_factor", "decay_every", "lr_min", "lr_max", "cycle"};

std::set<std::string> section_keys(const std::string& section) {
  std::set<std::string> out;
  for (const auto& k : kTrainSectionKeys) out.insert(section + "." + k);
  return out;
}

void cmd_train_init(const Config& cfg, const std::string& data_dir,
                    const std::string& out_dir, const std::string& preset, bool force) {
  auto known = section_keys("train");
  known.insert({"model.preset", "model.channels", "model.seed"});
  cfg.reject_unknown(known);
  ensure_output_dir(out_dir, force);
  write_snapshot(cfg, out_dir);
  auto data = load_patch_dataset(data_dir);
  const int channels = static_cast<int>(cfg.get_int("model.channels", 1));
  TrainConfig base;
  if (preset == "full") {
    base = TrainConfig::full_init();
  } else {
    base.epochs = 50;
    base.batch_size = 32;
    base.schedule = LrSchedule::step_decay(2e-4, 0.5, 20);
  }
  TrainConfig tc = train_config_from(cfg, "train", base);
  auto model = InitStageModel<float>::create(init_config_for(preset, channels),
                                             cfg.get_seed("model.seed", 7));
  auto res = train_init(data, model, tc, out_dir);
  std::ofstream log(out_dir + "/metrics.csv");
  write_metrics_csv(log, res.log);
  save_checkpoint(out_dir + "/init_final.ckpt", model.store,
                  {{"stage", "init"},
                   {"preset", preset},
                   {"channels", std::to_string(channels)}});
  if (res.diverged) {
    std::cerr << "training diverged; kept last good weights\n";
    throw NumericError("train: divergence during init training");
  }
  std::cout << "final loss " << res.log.back().loss << " after " << res.log.size()
            << " epochs\n";
}

void cmd_train_refine(const Config& cfg, const std::string& data_dir,
                      const std::string& out_dir, const std::string& preset,
                      const std::string& init_ckpt, bool force) {
  auto known = section_keys("refine1");
  for (const auto& k : section_keys("refine2")) known.insert(k);
  known.insert({"model.preset", "model.channels", "model.seed", "grid.stride",
                "solver.restarts", "solver.iterations", "solver.flat_threshold"});
  cfg.reject_unknown(known);
  if (init_ckpt.empty())
    throw ConfigError("train --stage refine requires --init-checkpoint");
  ensure_output_dir(out_dir, force);
  write_snapshot(cfg, out_dir);
  auto init_model = load_init_model(init_ckpt);
  const int channels = init_model.config.conv.input_channels;
  auto comps = load_composite_dataset(data_dir);

  TrainConfig b1 = TrainConfig::full_refine_phase1();
  TrainConfig b2 = TrainConfig::full_refine_phase2();
  if (preset != "full") {
    // small-model defaults: long supervised stage, gentle self-supervised stage
    b1.epochs = 200;
    b1.batch_size = 2;
    b1.schedule = LrSchedule::constant(2e-4);
    b2.epochs = 10;
    b2.batch_size = 2;
    b2.schedule = LrSchedule::constant(1e-5);
  }
  TrainConfig p1 = train_config_from(cfg, "refine1", b1);
  TrainConfig p2 = train_config_from(cfg, "refine2", b2);

  const int stride = static_cast<int>(cfg.get_int("grid.stride", preset == "full" ? 21 : 7));
  SolverConfig sc;
  sc.restarts = static_cast<int>(cfg.get_int("solver.restarts", 4));
  sc.iterations = static_cast<int>(cfg.get_int("solver.iterations", 32));
  const double flat = cfg.get_double("solver.flat_threshold", 0.1);
  std::vector<RefineSample> data;
  for (size_t i = 0; i < comps.size(); ++i) {
    RefineSample s;
    s.noisy = comps[i].noisy;
    s.grid.image_height = s.noisy.height;
    s.grid.image_width = s.noisy.width;
    s.grid.patch_size = init_model.config.patch_size;
    s.grid.stride = stride;
    s.grid.channels = channels;
    if (p1.epochs > 0) {
      // direct fits on the clean image provide phase-1 supervision
      SolverConfig per = sc;
      per.seed = mix_seed(0x7247ULL, i);
      s.truth = fit_supervision_grid(comps[i].clean, s.grid, per, flat);
    }
    data.push_back(std::move(s));
  }

  auto model = RefineStageModel<float>::create(refine_config_for(preset, channels),
                                               cfg.get_seed("model.seed", 7));
  auto res = train_refine(data, init_model, model, p1, p2, out_dir);
  std::ofstream log(out_dir + "/metrics.csv");
  write_metrics_csv(log, res.log);
  save_checkpoint(out_dir + "/refine_final.ckpt", model.store,
                  {{"stage", "refine"},
                   {"preset", preset},
                   {"channels", std::to_string(channels)}});
  if (res.diverged) throw NumericError("train: divergence during refine training");
  std::cout << "final loss " << res.log.back().loss << " after " << res.log.size()
            << " epochs\n";
}

// ---- inference --------------------------------------------------------------

PhotonImage load_input_image(const std::string& path, double alpha_override) {
  if (path.size() > 5 && path.substr(path.size() - 5) == ".ctb1") {
    PhotonImage img = load_ctb1(path);
    if (alpha_override > 0) img.alpha = alpha_override;
    return img;
  }
  ColorField f = load_image(path);
  const double alpha = alpha_override > 0 ? alpha_override : 255.0;
  PhotonImage img;
  img.height = f.height;
  img.width = f.width;
  img.channels = f.channels;
  img.alpha = alpha;
  img.counts.resize(f.values.size());
  for (size_t i = 0; i < f.values.size(); ++i)
    img.counts[i] = static_cast<std::uint32_t>(std::lround(f.values[i] * alpha));
  return img;
}

void write_params_grid(const std::string& path, const std::vector<JunctionParams>& params,
                       const PatchGridSpec& grid, double alpha) {
  std::ofstream os(path);
  os << std::setprecision(17);
  os << "# " << kParamsGridVersion << "\n";
  os << "# rows " << grid.rows() << " cols " << grid.cols() << " patch " << grid.patch_size
     << " stride " << grid.stride << " channels " << grid.channels << " height "
     << grid.image_height << " width " << grid.image_width << " alpha " << alpha << "\n";
  os << "# columns: m n x0 y0 phi1 phi2 phi3 then 3*channels wedge colors\n";
  int i = 0;
  for (int m = 0; m < grid.rows(); ++m)
    for (int n = 0; n < grid.cols(); ++n, ++i) {
      const auto& p = params[i];
      os << m << " " << n << " " << p.x0 << " " << p.y0 << " " << p.angles[0] << " "
         << p.angles[1] << " " << p.angles[2];
      for (int j = 0; j < 3; ++j)
        for (double c : p.colors[j]) os << " " << c;
      os << "\n";
    }
}

struct ParamsGridFile {
  PatchGridSpec grid;
  double alpha = 1.0;
  std::vector<JunctionParams> params;
};

ParamsGridFile read_params_grid(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot read params grid " + path);
  ParamsGridFile out;
  std::string line;
  if (!std::getline(is, line) || line != std::string("# ") + kParamsGridVersion)
    throw InputError("params grid " + path + ": bad or missing version line");
  if (!std::getline(is, line)) throw InputError("params grid " + path + ": truncated");
  {
    std::istringstream ls(line);
    std::string hash, kw;
    int rows, cols;
    ls >> hash >> kw >> rows >> kw >> cols >> kw >> out.grid.patch_size >> kw >>
        out.grid.stride >> kw >> out.grid.channels >> kw >> out.grid.image_height >> kw >>
        out.grid.image_width >> kw >> out.alpha;
    if (!ls) throw InputError("params grid " + path + ": malformed header");
  }
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int m, n;
    JunctionParams p;
    ls >> m >> n >> p.x0 >> p.y0 >> p.angles[0] >> p.angles[1] >> p.angles[2];
    for (int j = 0; j < 3; ++j) {
      p.colors[j].resize(out.grid.channels);
      for (int c = 0; c < out.grid.channels; ++c) ls >> p.colors[j][c];
    }
    if (!ls) throw InputError("params grid " + path + ": malformed row");
    out.params.push_back(std::move(p));
  }
  if (static_cast<int>(out.params.size()) != out.grid.patch_count())
    throw InputError("params grid " + path + ": row count does not match grid");
  return out;
}

void cmd_infer(const std::string& image_path, const std::string& out_dir,
               const std::string& method, const std::string& init_ckpt,
               const std::string& refine_ckpt, int patch_size, int stride,
               double alpha_override, bool force) {
  ensure_output_dir(out_dir, force);
  PhotonImage image = load_input_image(image_path, alpha_override);
  PatchGridSpec grid;
  grid.image_height = image.height;
  grid.image_width = image.width;
  grid.patch_size = patch_size;
  grid.stride = stride;
  grid.channels = image.channels;
  grid.validate();

  InferResult res;
  if (method == "ctbound") {
    if (init_ckpt.empty()) throw ConfigError("infer --method ctbound requires --init-checkpoint");
    auto init_model = load_init_model(init_ckpt);
    if (init_model.config.patch_size != patch_size)
      throw ConfigError("checkpoint patch size does not match --patch-size");
    if (!refine_ckpt.empty()) {
      auto refine_model = load_refine_model(refine_ckpt);
      res = infer(image, grid, init_model, &refine_model);
    } else {
      res = infer<float>(image, grid, init_model, nullptr);
    }
  } else if (method == "direct") {
    SolverConfig sc;
    res = fit_image(image, grid, sc);
  } else {
    throw ConfigError("infer: method must be 'ctbound' or 'direct'");
  }

  save_boundary_png(out_dir + "/boundary.png", res.boundary);
  save_image_unit(out_dir + "/color.png", res.color);
  write_params_grid(out_dir + "/params.txt", res.refined_params, grid, image.alpha);
  std::ostringstream timing;
  timing << "timing_ms extract=" << res.extract_ms << " init=" << res.init_ms
         << " refine=" << res.refine_ms << " aggregate=" << res.render_ms;
  std::ofstream(out_dir + "/timing.txt") << timing.str() << "\n";
  Config snap;
  snap.set("infer.method", method);
  snap.set("infer.patch_size", std::to_string(patch_size));
  snap.set("infer.stride", std::to_string(stride));
  snap.set("infer.alpha", std::to_string(image.alpha));
  write_snapshot(snap, out_dir);
  std::cout << timing.str() << "\n";
}

// ---- evaluation -------------------------------------------------------------

void cmd_evaluate(const std::vector<std::string>& pred_dirs, const std::string& truth_mask,
                  const std::string& truth_color, const std::string& out_dir,
                  double binarize, bool force) {
  ensure_output_dir(out_dir, force);
  ColorField mask_img = load_image(truth_mask);
  ScalarField mask(mask_img.height, mask_img.width);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      mask.at(y, x) = mask_img.at(y, x, 0) >= 0.5 ? 1.0 : 0.0;
  ColorField truth = load_image(truth_color);

  std::vector<EvalReport> reports;
  std::ostringstream table;
  for (const auto& dir : pred_dirs) {
    auto pg = read_params_grid(dir + "/params.txt");
    ColorField pred_color = load_image(dir + "/color.png");
    if (pred_color.height != truth.height || pred_color.width != truth.width)
      throw InputError("evaluate: color map shape mismatch for " + dir);
    const double t0 = std::chrono::duration<double>(
                          std::chrono::steady_clock::now().time_since_epoch())
                          .count();
    // params-grid colors are stored normalized; contrast thresholds apply to them directly
    EvalReport r = evaluate_image(pg.params, pg.grid, mask, pred_color, truth, 1.0, 1.0,
                                  binarize);
    r.wall_s = std::chrono::duration<double>(
                   std::chrono::steady_clock::now().time_since_epoch())
                   .count() -
               t0;
    reports.push_back(r);
    table << dir << ":\n";
    write_report_table(table, r);
  }
  std::ofstream csv(out_dir + "/report.csv");
  write_report_csv(csv, reports);
  std::ofstream(out_dir + "/report.txt") << table.str();
  Config snap;
  snap.set("evaluate.binarize", std::to_string(binarize));
  snap.set("evaluate.truth_mask", truth_mask);
  snap.set("evaluate.truth_color", truth_color);
  write_snapshot(snap, out_dir);
  std::cout << table.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"boundary estimation from photon-limited images"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker cap (processing is single-threaded)")
      ->check(CLI::PositiveNumber);

  std::string config_path, out_dir, data_dir, stage, preset = "desk";
  std::string image_path, method = "ctbound", init_ckpt, refine_ckpt;
  std::vector<std::string> pred_dirs;
  std::string truth_mask, truth_color, kind = "patches";
  int patch_size = 21, stride = 3;
  long count = -1;
  long seed = -1;
  double alpha_override = 0.0, binarize = 0.5;
  bool force = false;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--kind", kind, "patches|composites");
  gen->add_option("--config", config_path, "config file");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--count", count, "sample count override");
  gen->add_option("--seed", seed, "seed override");
  gen->add_flag("--force", force, "allow non-empty output directory");

  auto* train = app.add_subcommand("train", "train a model stage");
  train->add_option("--stage", stage, "init|refine")->required();
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--config", config_path, "config file");
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--preset", preset, "desk|full");
  train->add_option("--init-checkpoint", init_ckpt, "frozen init checkpoint (refine)");
  train->add_flag("--force", force, "allow non-empty output directory");

  auto* inf = app.add_subcommand("infer", "run boundary estimation on an image");
  inf->add_option("--image", image_path, "input image (.ctb1/.png/.pgm)")->required();
  inf->add_option("--out", out_dir, "output directory")->required();
  inf->add_option("--method", method, "ctbound|direct");
  inf->add_option("--init-checkpoint", init_ckpt, "init stage checkpoint");
  inf->add_option("--refine-checkpoint", refine_ckpt, "refinement checkpoint");
  inf->add_option("--patch-size", patch_size, "patch size");
  inf->add_option("--stride", stride, "patch stride");
  inf->add_option("--alpha", alpha_override, "photon level override");
  inf->add_flag("--force", force, "allow non-empty output directory");

  auto* ev = app.add_subcommand("evaluate", "score predictions against truth");
  ev->add_option("--pred", pred_dirs, "prediction directory (repeatable)")->required();
  ev->add_option("--truth-mask", truth_mask, "truth boundary mask image")->required();
  ev->add_option("--truth-color", truth_color, "truth color image")->required();
  ev->add_option("--out", out_dir, "output directory")->required();
  ev->add_option("--binarize", binarize, "boundary binarization threshold");
  ev->add_flag("--force", force, "allow non-empty output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    Config cfg;
    if (!config_path.empty()) cfg = Config::parse_file(config_path);
    if (gen->parsed()) {
      cfg.set("data.kind", kind);
      if (count >= 0) cfg.set("data.count", std::to_string(count));
      if (seed >= 0) cfg.set("data.seed", std::to_string(seed));
      cmd_gen_data(cfg, out_dir, force);
    } else if (train->parsed()) {
      if (stage == "init")
        cmd_train_init(cfg, data_dir, out_dir, preset, force);
      else if (stage == "refine")
        cmd_train_refine(cfg, data_dir, out_dir, preset, init_ckpt, force);
      else
        throw ConfigError("train: stage must be 'init' or 'refine'");
    } else if (inf->parsed()) {
      cmd_infer(image_path, out_dir, method, init_ckpt, refine_ckpt, patch_size, stride,
                alpha_override, force);
    } else if (ev->parsed()) {
      cmd_evaluate(pred_dirs, truth_mask, truth_color, out_dir, binarize, force);
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
