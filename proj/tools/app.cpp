#include "app.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "cbct/analytic.hpp"
#include "cbct/error.hpp"
#include "cbct/geometry.hpp"
#include "cbct/io.hpp"
#include "cbct/metrics.hpp"
#include "cbct/parallel.hpp"
#include "cbct/phantom.hpp"
#include "cbct/pipeline.hpp"
#include "cbct/solvers.hpp"
#include "cbct/unet.hpp"

namespace cbct::app {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const json& defaults() {
  static const json d = json::parse(R"({
    "seed": 0,
    "threads": 0,
    "out_dir": "out",
    "geometry": null,
    "geometry_path": "",
    "views_factor": 16,
    "phantoms": {"n_train": 4, "n_test": 2, "n_ellipsoids": 8,
                 "attenuation_min": 0.01, "attenuation_max": 0.05,
                 "size_min": 0.3, "size_max": 2.0, "voids": false},
    "import": [],
    "noise": {"kind": "none", "incident_photons": 100000.0},
    "fdk": {"filter": "hamming", "zero_pad_to": 0},
    "hqs": {"K": 3, "beta": 0.05, "cg_iters": 10, "weight_mode": "unshared",
            "clamp_output": false},
    "unet": {"depth": 2, "base_channels": 16, "kernel": 3},
    "train": {"epochs": 6, "batch_size": 8, "learning_rate": 0.001, "beta1": 0.9,
              "beta2": 0.999, "epsilon": 1e-8, "patch_size": 64, "patch_stride": 64,
              "normalization": "percentile99.9"},
    "baseline": {"lambda": 0.05, "iters": 200},
    "reconstruct": {"method": "hqs", "split": "test", "label": "", "slices": [],
                    "window": 0.0, "level": 0.0},
    "evaluate": {"recon": [], "zoom_patches": []}
  })");
  return d;
}

// Sections whose keys are checked against the defaults.
void check_keys(const json& cfg, const json& ref, const std::string& where) {
  for (const auto& [key, value] : cfg.items()) {
    if (!ref.contains(key))
      throw InvalidSpec("unknown config key \"" + where + key + "\"");
    if (value.is_object() && ref.at(key).is_object())
      check_keys(value, ref.at(key), where + key + ".");
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void log(const std::string& cmd, const std::string& msg) {
  std::cerr << "[" << cmd << "] " << msg << std::endl;
}

// ---- config -> domain objects ----

ConeBeamGeometry dense_geometry(const json& cfg) {
  const std::string path = cfg.at("geometry_path").get<std::string>();
  if (!path.empty())
    return read_geometry(path);
  if (cfg.at("geometry").is_null())
    throw InvalidSpec("config needs \"geometry\" or \"geometry_path\"");
  return make_circular_geometry(geometry_params_from_json(cfg.at("geometry").dump()));
}

std::size_t views_factor(const json& cfg) {
  const auto f = cfg.at("views_factor").get<std::size_t>();
  if (f == 0)
    throw InvalidSpec("views_factor must be at least 1");
  return f;
}

FilterConfig fdk_config(const json& cfg) {
  const json& f = cfg.at("fdk");
  FilterConfig fc;
  const auto kind = f.at("filter").get<std::string>();
  if (kind == "hamming")
    fc.kind = FilterKind::HammingRamLak;
  else if (kind == "ram-lak")
    fc.kind = FilterKind::RamLak;
  else
    throw InvalidSpec("fdk.filter must be \"hamming\" or \"ram-lak\"");
  fc.zero_pad_to = f.at("zero_pad_to").get<std::size_t>();
  return fc;
}

PhantomSpec phantom_spec(const json& cfg) {
  const json& p = cfg.at("phantoms");
  PhantomSpec s;
  s.n_ellipsoids = p.at("n_ellipsoids").get<std::size_t>();
  s.attenuation_min = p.at("attenuation_min").get<double>();
  s.attenuation_max = p.at("attenuation_max").get<double>();
  s.size_min = p.at("size_min").get<double>();
  s.size_max = p.at("size_max").get<double>();
  s.voids = p.at("voids").get<bool>();
  s.validate();
  return s;
}

NoiseModel noise_model(const json& cfg) {
  const json& n = cfg.at("noise");
  NoiseModel m;
  const auto kind = n.at("kind").get<std::string>();
  if (kind == "none")
    m.kind = NoiseKind::None;
  else if (kind == "poisson")
    m.kind = NoiseKind::PoissonTransmission;
  else
    throw InvalidSpec("noise.kind must be \"none\" or \"poisson\"");
  m.incident_photons = n.at("incident_photons").get<double>();
  if (!(m.incident_photons > 0.0))
    throw InvalidSpec("noise.incident_photons must be positive");
  return m;
}

HQSConfig hqs_config(const json& cfg) {
  const json& h = cfg.at("hqs");
  HQSConfig c;
  c.K = h.at("K").get<std::size_t>();
  c.beta = h.at("beta").get<double>();
  c.cg_iters = h.at("cg_iters").get<std::size_t>();
  const auto mode = h.at("weight_mode").get<std::string>();
  if (mode == "unshared")
    c.weight_mode = WeightMode::Unshared;
  else if (mode == "shared")
    c.weight_mode = WeightMode::Shared;
  else
    throw InvalidSpec("hqs.weight_mode must be \"shared\" or \"unshared\"");
  c.clamp_output = h.at("clamp_output").get<bool>();
  c.denoiser_ids = default_denoiser_ids(c.K, c.weight_mode);
  c.validate();
  return c;
}

UNetArch unet_arch(const json& cfg) {
  const json& u = cfg.at("unet");
  UNetArch a;
  a.depth = u.at("depth").get<std::size_t>();
  a.base_channels = u.at("base_channels").get<std::size_t>();
  a.kernel = u.at("kernel").get<std::size_t>();
  if (a.base_channels == 0 || a.kernel == 0 || a.kernel % 2 == 0)
    throw InvalidSpec("unet needs base_channels >= 1 and an odd kernel size");
  return a;
}

TrainConfig train_config(const json& cfg) {
  const json& t = cfg.at("train");
  TrainConfig c;
  c.epochs = t.at("epochs").get<std::size_t>();
  c.batch_size = t.at("batch_size").get<std::size_t>();
  c.adam.learning_rate = t.at("learning_rate").get<double>();
  c.adam.beta1 = t.at("beta1").get<double>();
  c.adam.beta2 = t.at("beta2").get<double>();
  c.adam.epsilon = t.at("epsilon").get<double>();
  c.patch_size = t.at("patch_size").get<std::size_t>();
  c.patch_stride = t.at("patch_stride").get<std::size_t>();
  const auto norm = t.at("normalization").get<std::string>();
  if (norm == "percentile99.9")
    c.normalization = NormalizationPolicy::Percentile999;
  else if (norm == "none")
    c.normalization = NormalizationPolicy::None;
  else
    throw InvalidSpec("train.normalization must be \"percentile99.9\" or \"none\"");
  c.validate();
  return c;
}

// ---- workspace ----

struct Workspace {
  fs::path root;

  explicit Workspace(const json& cfg) : root(cfg.at("out_dir").get<std::string>()) {}
  fs::path data() const { return root / "data"; }
  fs::path sample(const std::string& id) const { return data() / id; }
  fs::path denoisers() const { return root / "denoisers"; }
  fs::path recon() const { return root / "recon"; }
  fs::path eval() const { return root / "eval"; }
  std::string rel(const fs::path& p) const { return fs::relative(p, root).generic_string(); }
};

struct Index {
  std::vector<std::string> train, test;
};

Index read_index(const Workspace& ws) {
  const auto path = ws.data() / "index.json";
  if (!fs::exists(path))
    throw IoError("missing " + path.string() + "; run simulate first");
  const json j = json::parse(read_text(path.string()));
  return {j.at("train").get<std::vector<std::string>>(), j.at("test").get<std::vector<std::string>>()};
}

const std::vector<std::string>& split_ids(const Index& idx, const std::string& split) {
  if (split == "train")
    return idx.train;
  if (split == "test")
    return idx.test;
  throw InvalidSpec("split must be \"train\" or \"test\"");
}

class Manifest {
public:
  Manifest(const Workspace& ws, std::string command, const json& cfg) : ws_(ws) {
    j_["command"] = std::move(command);
    j_["format_version"] = 1;
    j_["seed"] = cfg.at("seed");
    j_["threads"] = num_threads();
    j_["config"] = "config.json";
    j_["artifacts"] = json::array();
    j_["inputs"] = json::array();
  }
  void artifact(const fs::path& p) { j_["artifacts"].push_back(entry(p)); }
  void input(const fs::path& p) { j_["inputs"].push_back(entry(p)); }
  json& extra() { return j_; }
  void write(const fs::path& dir) const {
    write_text((dir / "manifest.json").string(), j_.dump(2) + "\n");
  }

private:
  json entry(const fs::path& p) const {
    return {{"path", ws_.rel(p)}, {"sha256", sha256_file(p.string())},
            {"bytes", fs::file_size(p)}};
  }
  const Workspace& ws_;
  json j_;
};

// Resolved config as recorded beside outputs (the output directory itself is
// implied by where the file lives).
void record_config(const json& cfg, const fs::path& dir, Manifest& m) {
  json c = cfg;
  c.erase("out_dir");
  const auto path = dir / "config.json";
  write_text(path.string(), c.dump(2) + "\n");
  m.artifact(path);
}

struct ScanData {
  ProjectionStack dense;
  SubsampledScan sparse;
};

ScanData load_scan(const Workspace& ws, const std::string& id, const ConeBeamGeometry& dense_geom,
                   std::size_t factor, Manifest& m) {
  const auto path = ws.sample(id) / "dense.cbpr";
  ProjectionStack dense = read_projections(path.string());
  check_projections(dense, dense_geom);
  m.input(path);
  SubsampledScan sparse = subsample_views(dense, dense_geom, factor);
  return {std::move(dense), std::move(sparse)};
}

std::string denoiser_file(const std::string& id) { return id + ".cbdn"; }

std::string format_number(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

} // namespace

// ---- public helpers ----

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), std::streamsize(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), std::size_t(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i)
    hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

json resolve_config(const json& file_config, const Overrides& o) {
  if (!file_config.is_object())
    throw InvalidSpec("config must be a JSON object");
  check_keys(file_config, defaults(), "");
  json cfg = defaults();
  cfg.merge_patch(file_config);
  if (o.seed)
    cfg["seed"] = *o.seed;
  if (o.threads)
    cfg["threads"] = *o.threads;
  if (o.beta)
    cfg["hqs"]["beta"] = *o.beta;
  if (o.views_factor)
    cfg["views_factor"] = *o.views_factor;
  if (o.out)
    cfg["out_dir"] = *o.out;
  return cfg;
}

// ---- simulate ----

void cmd_simulate(const json& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const Workspace ws(cfg);
  const ConeBeamGeometry geom = dense_geometry(cfg);
  const std::size_t factor = views_factor(cfg);
  const ConeBeamGeometry sparse_geom = subsample_geometry(geom, factor);
  const FilterConfig fdk = fdk_config(cfg);
  const auto seed = cfg.at("seed").get<std::uint64_t>();
  const json& imports = cfg.at("import");

  struct Source {
    std::string id;
    std::string split;
    std::optional<std::size_t> phantom_index;
    std::string path, format;
  };
  std::vector<Source> sources;
  if (!imports.empty()) {
    for (const auto& e : imports)
      sources.push_back({e.at("id").get<std::string>(), e.value("split", std::string("test")),
                         std::nullopt, e.at("path").get<std::string>(),
                         e.value("format", std::string("raw-f32"))});
  } else {
    const auto n_train = cfg.at("phantoms").at("n_train").get<std::size_t>();
    const auto n_test = cfg.at("phantoms").at("n_test").get<std::size_t>();
    if (n_train + n_test == 0)
      throw InvalidSpec("no phantoms requested (phantoms.n_train + phantoms.n_test = 0)");
    for (std::size_t i = 0; i < n_train + n_test; ++i) {
      const bool train = i < n_train;
      std::ostringstream id;
      id << (train ? "train_" : "test_") << std::setw(2) << std::setfill('0')
         << (train ? i : i - n_train);
      sources.push_back({id.str(), train ? "train" : "test", i, "", ""});
    }
  }

  fs::create_directories(ws.data());
  Manifest m(ws, "simulate", cfg);
  record_config(cfg, ws.data(), m);
  write_geometry((ws.data() / "geometry.json").string(), geom);
  write_geometry((ws.data() / "sparse_geometry.json").string(), sparse_geom);
  m.artifact(ws.data() / "geometry.json");
  m.artifact(ws.data() / "sparse_geometry.json");

  Index idx;
  for (const auto& src : sources) {
    const fs::path dir = ws.sample(src.id);
    fs::create_directories(dir);
    ProjectionStack dense;
    if (src.phantom_index) {
      PhantomSpec spec = phantom_spec(cfg);
      spec.seed = derive_seed(seed, 1000 + *src.phantom_index);
      const Volume3D vol = make_ellipsoid_phantom(geom.vol_dims, geom.voxel_size, spec);
      write_volume((dir / "phantom.cbvl").string(), vol);
      m.artifact(dir / "phantom.cbvl");
      NoiseModel noise = noise_model(cfg);
      noise.seed = derive_seed(seed, 2000 + *src.phantom_index);
      dense = simulate_scan(vol, geom, noise);
    } else if (src.format == "raw-f32") {
      dense = import_raw_projections(src.path, geom.n_views(), geom.det_rows, geom.det_cols,
                                     geom.det_pixel_pitch);
    } else if (src.format == "cbpr") {
      dense = read_projections(src.path);
      check_projections(dense, geom);
    } else {
      throw InvalidSpec("import format must be \"raw-f32\" or \"cbpr\"");
    }
    require_finite(dense.data(), ("projections of " + src.id).c_str());
    write_projections((dir / "dense.cbpr").string(), dense);
    m.artifact(dir / "dense.cbpr");
    const SubsampledScan sparse = subsample_views(dense, geom, factor);
    write_projections((dir / "sparse.cbpr").string(), sparse.proj);
    m.artifact(dir / "sparse.cbpr");
    write_volume((dir / "reference.cbvl").string(), fdk_reconstruct(dense, geom, fdk));
    m.artifact(dir / "reference.cbvl");
    (src.split == "train" ? idx.train : idx.test).push_back(src.id);
    log("simulate", src.id + " done");
  }
  write_text((ws.data() / "index.json").string(),
             json{{"train", idx.train}, {"test", idx.test}}.dump(2) + "\n");
  m.artifact(ws.data() / "index.json");
  m.extra()["dense_views"] = geom.n_views();
  m.extra()["sparse_views"] = sparse_geom.n_views();
  m.extra()["views_factor"] = factor;
  m.extra()["runtime_seconds"] = seconds_since(t0);
  m.write(ws.data());
}

// ---- train ----

void cmd_train(const json& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const Workspace ws(cfg);
  const Index idx = read_index(ws);
  if (idx.train.empty())
    throw IoError("no training volumes in " + (ws.data() / "index.json").string());
  const ConeBeamGeometry geom = read_geometry((ws.data() / "geometry.json").string());
  const std::size_t factor = views_factor(cfg);
  const ConeBeamGeometry sparse_geom = subsample_geometry(geom, factor);
  const HQSConfig hqs = hqs_config(cfg);
  const TrainConfig train = train_config(cfg);
  const UNetArch arch = unet_arch(cfg);
  const FilterConfig fdk = fdk_config(cfg);

  fs::create_directories(ws.denoisers());
  Manifest m(ws, "train", cfg);
  record_config(cfg, ws.denoisers(), m);

  std::vector<TrainingSample> samples;
  for (const auto& id : idx.train) {
    ScanData scan = load_scan(ws, id, geom, factor, m);
    const auto ref_path = ws.sample(id) / "reference.cbvl";
    Volume3D target = read_volume(ref_path.string());
    m.input(ref_path);
    Volume3D x0 = fdk_reconstruct(scan.sparse.proj, scan.sparse.geom, fdk);
    samples.push_back({std::move(scan.sparse.proj), std::move(x0), std::move(target)});
  }
  const TrainedDenoisers trained =
      train_unrolled(samples, sparse_geom, hqs, train, arch, cfg.at("seed").get<std::uint64_t>(),
                     [](const std::string& s) { log("train", s); });

  const auto ids = default_denoiser_ids(hqs.K, hqs.weight_mode);
  json stages = json::array();
  for (std::size_t n = 0; n < trained.params.size(); ++n) {
    const auto path = ws.denoisers() / denoiser_file(trained.mode == WeightMode::Shared ? "shared" : ids[n]);
    write_denoiser(path.string(), trained.params[n]);
    m.artifact(path);
  }
  for (const auto& id : ids)
    stages.push_back(ws.rel(ws.denoisers() / denoiser_file(id)));
  for (const auto& lg : trained.logs) {
    std::ostringstream csv;
    csv << std::setprecision(10) << "epoch,loss\n0," << lg.initial_loss << "\n";
    for (std::size_t e = 0; e < lg.epoch_loss.size(); ++e)
      csv << e + 1 << ',' << lg.epoch_loss[e] << "\n";
    const auto path = ws.denoisers() / ("loss_stage" + std::to_string(lg.stage) + ".csv");
    write_text(path.string(), csv.str());
    m.artifact(path);
  }
  m.extra()["stages"] = stages;
  m.extra()["weight_mode"] = cfg.at("hqs").at("weight_mode");
  m.extra()["views_factor"] = factor;
  m.extra()["runtime_seconds"] = seconds_since(t0);
  m.write(ws.denoisers());
}

// ---- reconstruct ----

namespace {

TrainedDenoisers load_denoisers(const Workspace& ws, const HQSConfig& hqs, std::size_t count,
                                Manifest& m) {
  TrainedDenoisers t;
  t.mode = hqs.weight_mode;
  std::vector<std::string> ids = hqs.weight_mode == WeightMode::Shared
                                     ? std::vector<std::string>{"shared"}
                                     : default_denoiser_ids(count, WeightMode::Unshared);
  std::vector<std::string> missing;
  for (const auto& id : ids)
    if (!fs::exists(ws.denoisers() / denoiser_file(id)))
      missing.push_back(id);
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing)
      list += (list.empty() ? "" : ", ") + id;
    throw IoError("missing denoiser files for stage ids: " + list + " (in " +
                  ws.denoisers().string() + ")");
  }
  for (const auto& id : ids) {
    const auto path = ws.denoisers() / denoiser_file(id);
    t.params.push_back(read_denoiser(path.string()));
    m.input(path);
  }
  return t;
}

} // namespace

void cmd_reconstruct(const json& cfg) {
  const Workspace ws(cfg);
  const Index idx = read_index(ws);
  const ConeBeamGeometry geom = read_geometry((ws.data() / "geometry.json").string());
  const std::size_t factor = views_factor(cfg);
  const FilterConfig fdk = fdk_config(cfg);
  const json& rc = cfg.at("reconstruct");
  const auto method = rc.at("method").get<std::string>();
  if (method != "fdk" && method != "baseline" && method != "hqs" && method != "denoiser")
    throw InvalidSpec("reconstruct.method must be fdk, baseline, hqs or denoiser");
  const auto& ids = split_ids(idx, rc.at("split").get<std::string>());
  const HQSConfig hqs = hqs_config(cfg);
  std::string label = rc.at("label").get<std::string>();
  if (label.empty()) {
    label = method + "_f" + std::to_string(factor);
    if (method == "hqs")
      label += "_b" + format_number(hqs.beta);
  }
  const fs::path dir = ws.recon() / label;
  fs::create_directories(dir);
  Manifest m(ws, "reconstruct", cfg);
  record_config(cfg, dir, m);

  std::optional<DenoiserSet> set;
  if (method == "hqs" || method == "denoiser") {
    const HQSConfig need = method == "hqs" ? hqs : [&] {
      HQSConfig h = hqs;
      h.K = 1;
      return h;
    }();
    set = make_denoiser_set(load_denoisers(ws, need, need.K, m));
  }
  const auto lambda = cfg.at("baseline").at("lambda").get<double>();
  const auto base_iters = cfg.at("baseline").at("iters").get<std::size_t>();
  const auto slices = rc.at("slices").get<std::vector<std::size_t>>();

  json volumes = json::array();
  for (const auto& id : ids) {
    const ScanData scan = load_scan(ws, id, geom, factor, m);
    const auto& b = scan.sparse.proj;
    const auto& g = scan.sparse.geom;
    const auto ref_path = ws.sample(id) / "reference.cbvl";
    std::optional<Volume3D> ref;
    if (fs::exists(ref_path))
      ref = read_volume(ref_path.string());
    const double ref_range = ref ? reference_range(*ref) : 0.0;

    const auto t0 = std::chrono::steady_clock::now();
    Volume3D x;
    std::optional<ReconTrace> trace;
    if (method == "fdk") {
      x = fdk_reconstruct(b, g, fdk);
    } else if (method == "baseline") {
      x = quadratic_mbir_baseline(b, g, lambda, base_iters, make_volume(g));
    } else if (method == "denoiser") {
      const std::string first = hqs.weight_mode == WeightMode::Shared ? "shared" : "stage1";
      x = set->at(first)(fdk_reconstruct(b, g, fdk));
    } else {
      const Volume3D x0 = fdk_reconstruct(b, g, fdk);
      TraceReference tr;
      if (ref && ref_range > 0.0)
        tr = {&*ref, ref_range};
      HQSResult r = hqs_reconstruct(b, g, hqs, *set, x0, tr);
      x = std::move(r.volume);
      trace = std::move(r.trace);
    }
    const double secs = seconds_since(t0);

    const auto vol_path = dir / (id + ".cbvl");
    write_volume(vol_path.string(), x);
    m.artifact(vol_path);
    if (trace) {
      const auto trace_path = dir / (id + "_trace.csv");
      write_text(trace_path.string(), trace_to_csv(*trace));
      m.artifact(trace_path);
    }
    double window = rc.at("window").get<double>(), level = rc.at("level").get<double>();
    if (!(window > 0.0)) {
      const double top = ref_range > 0.0 ? ref_range
                                         : *std::max_element(x.data().begin(), x.data().end());
      window = top > 0.0 ? top : 1.0;
      level = window / 2.0;
    }
    const Dims3 d = x.dims();
    for (const std::size_t k : slices) {
      if (k >= d.nz)
        throw InvalidSpec("slice index " + std::to_string(k) + " outside the volume");
      const auto pgm = dir / (id + "_z" + std::to_string(k) + ".pgm");
      write_pgm(pgm.string(), std::span(x.data()).subspan(k * d.nx * d.ny, d.nx * d.ny), d.nx,
                d.ny, window, level);
      m.artifact(pgm);
    }
    volumes.push_back({{"id", id}, {"seconds", secs}, {"window", window}, {"level", level}});
    log("reconstruct", label + " " + id + " " + format_number(secs) + " s");
  }
  m.extra()["method"] = method;
  m.extra()["label"] = label;
  m.extra()["views_factor"] = factor;
  m.extra()["sparse_views"] = subsample_geometry(geom, factor).n_views();
  if (method == "hqs") {
    m.extra()["beta"] = hqs.beta;
    m.extra()["K"] = hqs.K;
  }
  m.extra()["volumes"] = volumes;
  m.write(dir);
}

// ---- evaluate ----

void cmd_evaluate(const json& cfg) {
  const Workspace ws(cfg);
  const json& ec = cfg.at("evaluate");

  struct Item {
    std::string method, volume_id;
    fs::path recon, reference;
    std::optional<double> seconds;
  };
  std::vector<Item> items;
  auto add_dir = [&](const fs::path& dir) {
    const auto mpath = dir / "manifest.json";
    if (!fs::exists(mpath))
      throw IoError("no reconstruction manifest in " + dir.string());
    const json mj = json::parse(read_text(mpath.string()));
    const auto label = mj.at("label").get<std::string>();
    for (const auto& v : mj.at("volumes")) {
      const auto id = v.at("id").get<std::string>();
      items.push_back({label, id, dir / (id + ".cbvl"), ws.sample(id) / "reference.cbvl",
                       v.at("seconds").get<double>()});
    }
  };
  const json& recon = ec.at("recon");
  if (recon.empty()) {
    if (!fs::exists(ws.recon()))
      throw IoError("no reconstructions under " + ws.recon().string());
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(ws.recon()))
      if (e.is_directory())
        dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs)
      add_dir(d);
  } else {
    for (const auto& e : recon) {
      if (e.is_string()) {
        fs::path p = e.get<std::string>();
        add_dir(p.is_absolute() ? p : ws.root / p);
      } else {
        items.push_back({e.at("method").get<std::string>(), e.at("volume_id").get<std::string>(),
                         e.at("path").get<std::string>(), e.at("reference").get<std::string>(),
                         std::nullopt});
      }
    }
  }

  fs::create_directories(ws.eval());
  Manifest m(ws, "evaluate", cfg);
  record_config(cfg, ws.eval(), m);
  std::vector<MetricRow> rows;
  std::map<std::string, std::vector<double>> runtimes;
  for (const auto& it : items) {
    if (!fs::exists(it.reference))
      throw IoError("missing reference volume " + it.reference.string());
    const Volume3D ref = read_volume(it.reference.string());
    const Volume3D x = read_volume(it.recon.string());
    if (!x.same_shape(ref))
      throw DimensionMismatch("reconstruction " + it.recon.string() +
                              " does not match the shape of its reference");
    m.input(it.recon);
    SSIMConfig sc;
    sc.data_range = reference_range(ref);
    if (!(sc.data_range > 0.0))
      throw InvalidSpec("reference " + it.reference.string() + " has no positive maximum");
    rows.push_back({it.volume_id, it.method, psnr(x.data(), ref.data(), sc.data_range),
                    ssim_volume(x, ref, sc)});
    const Dims3 d = ref.dims();
    std::size_t zi = 0;
    for (const auto& z : ec.at("zoom_patches")) {
      const auto k = z.at("slice").get<std::size_t>(), r0 = z.at("row").get<std::size_t>(),
                 c0 = z.at("col").get<std::size_t>(), s = z.at("size").get<std::size_t>();
      if (k >= d.nz || r0 + s > d.ny || c0 + s > d.nx)
        throw InvalidSpec("zoom patch " + std::to_string(zi) + " lies outside the volume");
      std::vector<double> a(s * s), b(s * s);
      for (std::size_t r = 0; r < s; ++r)
        for (std::size_t c = 0; c < s; ++c) {
          a[r * s + c] = x.at(c0 + c, r0 + r, k);
          b[r * s + c] = ref.at(c0 + c, r0 + r, k);
        }
      rows.push_back({it.volume_id + "/zoom" + std::to_string(zi), it.method,
                      psnr(a, b, sc.data_range), ssim(a, b, s, s, sc)});
      ++zi;
    }
    if (it.seconds)
      runtimes[it.method].push_back(*it.seconds);
  }
  const auto metrics_path = ws.eval() / "metrics.csv";
  write_text(metrics_path.string(), metrics_to_csv(rows));
  m.artifact(metrics_path);

  std::ostringstream rt;
  rt << std::setprecision(6) << "method,volumes,mean_seconds,total_seconds\n";
  for (const auto& [method, secs] : runtimes) {
    double total = 0.0;
    for (double s : secs)
      total += s;
    rt << method << ',' << secs.size() << ',' << total / double(secs.size()) << ',' << total
       << "\n";
  }
  const auto runtime_path = ws.eval() / "runtime.csv";
  write_text(runtime_path.string(), rt.str());
  m.extra()["runtime_table"] = ws.rel(runtime_path);
  m.write(ws.eval());
}

// ---- driver ----

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Sparse-view cone-beam CT reconstruction with learned HQS"};
  app.require_subcommand(1);
  std::string config_path;
  Overrides o;
  std::uint64_t seed = 0;
  std::size_t threads = 0, factor = 0;
  double beta = 0.0;
  std::string out;
  std::map<std::string, CLI::App*> subs;
  const std::pair<const char*, const char*> commands[] = {
      {"simulate", "generate or import scans and build the dataset"},
      {"train", "train the stage denoisers"},
      {"reconstruct", "reconstruct the held-out scans"},
      {"evaluate", "score reconstructions against their references"}};
  for (const auto& [name, help] : commands) {
    CLI::App* s = app.add_subcommand(name, help);
    s->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    s->add_option("--seed", seed, "RNG seed");
    s->add_option("--threads", threads, "worker threads (0 = all cores)");
    s->add_option("--beta", beta, "HQS beta (inference override)");
    s->add_option("--views-factor", factor, "sparse-view subsampling factor");
    s->add_option("--out", out, "output directory");
    subs[name] = s;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  std::string cmd;
  for (const auto& [name, s] : subs)
    if (s->parsed())
      cmd = name;
  CLI::App* s = subs.at(cmd);
  if (s->count("--seed"))
    o.seed = seed;
  if (s->count("--threads"))
    o.threads = threads;
  if (s->count("--beta"))
    o.beta = beta;
  if (s->count("--views-factor"))
    o.views_factor = factor;
  if (s->count("--out"))
    o.out = out;

  try {
    json file = json::object();
    if (!config_path.empty()) {
      try {
        file = json::parse(read_text(config_path));
      } catch (const json::parse_error& e) {
        throw InvalidSpec(config_path + ": " + e.what());
      }
    }
    const json cfg = resolve_config(file, o);
    set_num_threads(cfg.at("threads").get<std::size_t>());
    if (cmd == "simulate")
      cmd_simulate(cfg);
    else if (cmd == "train")
      cmd_train(cfg);
    else if (cmd == "reconstruct")
      cmd_reconstruct(cfg);
    else
      cmd_evaluate(cfg);
    return kExitOk;
  } catch (const NumericError& e) {
    log(cmd, std::string("numeric failure: ") + e.what());
    return kExitNumeric;
  } catch (const InvalidSpec& e) {
    log(cmd, std::string("config error: ") + e.what());
    return kExitConfig;
  } catch (const CoverageError& e) {
    log(cmd, std::string("config error: ") + e.what());
    return kExitConfig;
  } catch (const json::exception& e) {
    log(cmd, std::string("config error: ") + e.what());
    return kExitConfig;
  } catch (const Error& e) {
    log(cmd, std::string("data error: ") + e.what());
    return kExitData;
  } catch (const std::exception& e) {
    log(cmd, std::string("error: ") + e.what());
    return kExitOther;
  }
}

} // namespace cbct::app
