#include "tcwae/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#ifndef TCWAE_VERSION
#define TCWAE_VERSION "0.0.0"
#endif

namespace tcwae {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> required_hyperparams(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::tcwae_mws:
    case ObjectiveKind::tcwae_gan: return {"beta", "gamma"};
    case ObjectiveKind::beta_tcvae: return {"alpha", "beta", "gamma"};
    case ObjectiveKind::factor_vae: return {"gamma"};
    case ObjectiveKind::wae_mmd: return {"lambda"};
    case ObjectiveKind::elbo: return {};
  }
  return {};
}

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) {
      throw ConfigError(where.empty() ? key : where + "." + key, "unknown field");
    }
  }
}

const json& field(const json& j, const std::string& key, const std::string& path) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(path, "missing required field");
  return *it;
}

double as_number(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path, "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError(path, "must be finite");
  return x;
}

std::uint64_t as_unsigned(const json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
  throw ConfigError(path, "expected a non-negative integer");
}

std::vector<double> number_list(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(as_number(v[i], path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

AdamConfig parse_adam(const json& j, const std::string& path, AdamConfig base) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  check_keys(j, path, {"learning_rate", "beta1", "beta2", "epsilon"});
  if (j.contains("learning_rate")) base.learning_rate = as_number(j["learning_rate"], path + ".learning_rate");
  if (j.contains("beta1")) base.beta1 = as_number(j["beta1"], path + ".beta1");
  if (j.contains("beta2")) base.beta2 = as_number(j["beta2"], path + ".beta2");
  if (j.contains("epsilon")) base.epsilon = as_number(j["epsilon"], path + ".epsilon");
  try {
    base.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
  return base;
}

json adam_json(const AdamConfig& a) {
  return {{"learning_rate", a.learning_rate}, {"beta1", a.beta1}, {"beta2", a.beta2},
          {"epsilon", a.epsilon}};
}

std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("missing " + path.string());
  return json::parse(f);
}

ExperimentConfig load_run_config(const fs::path& run_dir) {
  const ExperimentConfig cfg = ExperimentConfig::from_json(read_json(run_dir / "config.json"));
  if (cfg.seeds.size() != 1) throw std::runtime_error("run config must list exactly one seed");
  return cfg;
}

std::string sanitize(std::string s) {
  for (auto& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "expected a JSON object");
  check_keys(j, "", {"name", "objective", "alpha", "beta", "gamma", "lambda", "seeds",
                     "architecture", "latent_dim", "batch_size", "iterations", "dataset_size",
                     "checkpoint_every", "dataset", "optimizer", "discriminator_optimizer",
                     "sweep", "output_dir"});
  ExperimentConfig cfg;
  const json& obj = field(j, "objective", "objective");
  if (!obj.is_string()) throw ConfigError("objective", "expected a string");
  try {
    cfg.train.objective = objective_from_string(obj.get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError("objective", e.what());
  }
  for (const auto& name : required_hyperparams(cfg.train.objective)) field(j, name, name);
  auto hp_value = [&](const char* name) {
    return j.contains(name) ? as_number(j[name], name) : 0.0;
  };
  cfg.train.hp = {hp_value("beta"), hp_value("gamma"), hp_value("lambda"), hp_value("alpha")};
  for (const char* name : {"alpha", "beta", "gamma", "lambda"}) {
    if (hp_value(name) < 0.0) throw ConfigError(name, "must be non-negative");
  }

  const json& seeds = field(j, "seeds", "seeds");
  if (!seeds.is_array() || seeds.empty()) throw ConfigError("seeds", "expected a non-empty array");
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    cfg.seeds.push_back(as_unsigned(seeds[i], "seeds[" + std::to_string(i) + "]"));
  }

  if (j.contains("name")) {
    if (!j["name"].is_string() || j["name"].get<std::string>().empty()) {
      throw ConfigError("name", "expected a non-empty string");
    }
    cfg.name = j["name"].get<std::string>();
  }
  if (j.contains("architecture")) {
    if (!j["architecture"].is_string()) throw ConfigError("architecture", "expected a string");
    cfg.train.architecture = j["architecture"].get<std::string>();
  }
  if (j.contains("latent_dim")) cfg.train.latent_dim = as_unsigned(j["latent_dim"], "latent_dim");
  if (j.contains("batch_size")) cfg.train.batch_size = as_unsigned(j["batch_size"], "batch_size");
  if (j.contains("iterations")) cfg.train.iterations = as_unsigned(j["iterations"], "iterations");
  else cfg.train.iterations = 15000;
  if (j.contains("dataset_size")) cfg.train.dataset_size = as_unsigned(j["dataset_size"], "dataset_size");
  if (j.contains("checkpoint_every")) {
    cfg.train.checkpoint_every = as_unsigned(j["checkpoint_every"], "checkpoint_every");
  }
  if (j.contains("optimizer")) {
    cfg.train.adam = parse_adam(j["optimizer"], "optimizer", AdamConfig::model_default());
  }
  if (j.contains("discriminator_optimizer")) {
    cfg.train.disc_adam = parse_adam(j["discriminator_optimizer"], "discriminator_optimizer",
                                     AdamConfig::discriminator_default());
  }
  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    if (!d.is_object()) throw ConfigError("dataset", "expected an object");
    check_keys(d, "dataset", {"factors", "cardinalities", "resolution", "seed", "noise_background"});
    if (d.contains("factors") != d.contains("cardinalities")) {
      throw ConfigError(d.contains("factors") ? "dataset.cardinalities" : "dataset.factors",
                        "factors and cardinalities must be given together");
    }
    if (d.contains("factors")) {
      if (!d["factors"].is_array()) throw ConfigError("dataset.factors", "expected an array of names");
      cfg.dataset.spec.names.clear();
      cfg.dataset.spec.cardinalities.clear();
      for (const auto& n : d["factors"]) {
        if (!n.is_string()) throw ConfigError("dataset.factors", "expected an array of names");
        cfg.dataset.spec.names.push_back(n.get<std::string>());
      }
      if (!d["cardinalities"].is_array()) throw ConfigError("dataset.cardinalities", "expected an array");
      for (std::size_t i = 0; i < d["cardinalities"].size(); ++i) {
        cfg.dataset.spec.cardinalities.push_back(static_cast<std::size_t>(
            as_unsigned(d["cardinalities"][i], "dataset.cardinalities[" + std::to_string(i) + "]")));
      }
    }
    if (d.contains("resolution")) cfg.dataset.resolution = as_unsigned(d["resolution"], "dataset.resolution");
    if (d.contains("seed")) cfg.dataset.seed = as_unsigned(d["seed"], "dataset.seed");
    if (d.contains("noise_background")) {
      if (!d["noise_background"].is_boolean()) throw ConfigError("dataset.noise_background", "expected a boolean");
      cfg.dataset.noise_background = d["noise_background"].get<bool>();
    }
  }
  cfg.sweep_beta = {cfg.train.hp.beta};
  cfg.sweep_gamma = {cfg.train.hp.gamma};
  if (j.contains("sweep")) {
    const json& s = j["sweep"];
    if (!s.is_object()) throw ConfigError("sweep", "expected an object");
    check_keys(s, "sweep", {"beta", "gamma"});
    if (s.contains("beta")) cfg.sweep_beta = number_list(s["beta"], "sweep.beta");
    if (s.contains("gamma")) cfg.sweep_gamma = number_list(s["gamma"], "sweep.gamma");
  }
  if (j.contains("output_dir")) {
    if (!j["output_dir"].is_string()) throw ConfigError("output_dir", "expected a string");
    cfg.output_dir = j["output_dir"].get<std::string>();
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("<file>", "cannot read " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  json j;
  j["name"] = name;
  j["objective"] = std::string(to_string(train.objective));
  j["alpha"] = train.hp.alpha;
  j["beta"] = train.hp.beta;
  j["gamma"] = train.hp.gamma;
  j["lambda"] = train.hp.lambda;
  j["seeds"] = seeds;
  j["architecture"] = train.architecture;
  j["latent_dim"] = train.latent_dim;
  j["batch_size"] = train.batch_size;
  j["iterations"] = train.iterations;
  j["dataset_size"] = train.dataset_size;
  j["checkpoint_every"] = train.checkpoint_every;
  j["optimizer"] = adam_json(train.adam);
  j["discriminator_optimizer"] = adam_json(train.disc_adam);
  j["dataset"] = {{"factors", dataset.spec.names},
                  {"cardinalities", dataset.spec.cardinalities},
                  {"resolution", dataset.resolution},
                  {"seed", dataset.seed},
                  {"noise_background", dataset.noise_background}};
  j["sweep"] = {{"beta", sweep_beta}, {"gamma", sweep_gamma}};
  j["output_dir"] = output_dir;
  return j;
}

void ExperimentConfig::validate() const {
  std::set<std::uint64_t> distinct(seeds.begin(), seeds.end());
  if (seeds.empty()) throw ConfigError("seeds", "must not be empty");
  if (distinct.size() != seeds.size()) throw ConfigError("seeds", "must be distinct");
  if (sweep_beta.empty()) throw ConfigError("sweep.beta", "grid must not be empty");
  if (sweep_gamma.empty()) throw ConfigError("sweep.gamma", "grid must not be empty");
  for (double b : sweep_beta) {
    if (b < 0.0) throw ConfigError("sweep.beta", "weights must be non-negative");
  }
  for (double g : sweep_gamma) {
    if (g < 0.0) throw ConfigError("sweep.gamma", "weights must be non-negative");
  }
  if (train.batch_size < 2) throw ConfigError("batch_size", "must be at least 2");
  if (train.iterations < 1) throw ConfigError("iterations", "must be at least 1");
  if (train.latent_dim < 1) throw ConfigError("latent_dim", "must be positive");
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("optimizer", e.what());
  }
  try {
    dataset.spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("dataset.cardinalities", e.what());
  }
  for (const auto& n : dataset.spec.names) {
    const auto& known = known_factors();
    if (std::find(known.begin(), known.end(), n) == known.end()) {
      throw ConfigError("dataset.factors", "unknown factor '" + n + "'");
    }
  }
  if (dataset.resolution != 8 && dataset.resolution != 16 && dataset.resolution != 32 &&
      dataset.resolution != 64) {
    throw ConfigError("dataset.resolution", "must be 8, 16, 32 or 64");
  }
  try {
    Architecture::by_name(train.architecture, dataset.resolution,
                          dataset.noise_background ? 3 : 1, train.latent_dim);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("architecture", e.what());
  }
  if (dataset.spec.grid_size() < 2 * train.batch_size) {
    throw ConfigError("batch_size", "dataset holds fewer than two batches");
  }
}

FactorDataset build_dataset(const DatasetConfig& cfg) {
  FactorDataset ds = generate_sprites(cfg.spec, cfg.resolution, cfg.seed);
  if (cfg.noise_background) {
    Rng rng = Rng(cfg.seed).split(Stream::noise);
    ds = add_noise_background(ds, rng);
  }
  return ds;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

json run_identity(const ExperimentConfig& cfg, std::uint64_t seed) {
  json j = cfg.to_json();
  j.erase("name");
  j.erase("sweep");
  j.erase("output_dir");
  j["seeds"] = std::vector<std::uint64_t>{seed};
  return j;
}

std::string run_hash(const ExperimentConfig& cfg, std::uint64_t seed) {
  return hex64(fnv1a64(run_identity(cfg, seed).dump()));
}

fs::path output_root(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("TCWAE_OUT"); env != nullptr && *env != '\0') return fs::path(env);
  return fs::path(cfg.output_dir);
}

void train_run(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& dir,
               const RunOptions& opts) {
  const std::string hash = run_hash(cfg, seed);
  if (opts.resume && fs::exists(dir / "manifest.json") && fs::exists(dir / "final.tcwl") &&
      fs::exists(dir / "loss_log.csv")) {
    const json m = read_json(dir / "manifest.json");
    if (m.value("config_hash", "") == hash && m.value("code_version", "") == TCWAE_VERSION) {
      if (opts.progress != nullptr) *opts.progress << "reusing completed run " << dir.string() << '\n';
      return;
    }
  }
  fs::create_directories(dir);
  fs::remove(dir / "manifest.json");
  ExperimentConfig run_cfg = cfg;
  run_cfg.seeds = {seed};
  run_cfg.sweep_beta = {cfg.train.hp.beta};
  run_cfg.sweep_gamma = {cfg.train.hp.gamma};
  write_text(dir / "config.json", run_cfg.to_json().dump(2) + "\n");

  const std::string started = utc_now();
  const auto clock_start = std::chrono::steady_clock::now();
  const FactorDataset ds = build_dataset(cfg.dataset);
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  TrainObserver observer;
  if (opts.progress != nullptr && opts.progress_every != 0) {
    observer = [&](const LogEntry& e) {
      if (e.iter % opts.progress_every == 0 || e.iter == tc.iterations) {
        *opts.progress << '[' << cfg.name << " seed " << seed << "] iter " << e.iter << '/'
                       << tc.iterations << " total=" << e.loss.total
                       << " recon=" << e.loss.reconstruction << " tc=" << e.loss.tc
                       << " dimwise_kl=" << e.loss.dimwise_kl << " disc=" << e.disc_loss
                       << std::endl;
      }
      return true;
    };
  }
  const TrainingRun run = train(tc, ds, observer);
  write_loss_log(run.log, dir / "loss_log.csv");
  for (const auto& ck : run.checkpoints) {
    std::ostringstream name;
    name << "ckpt_" << std::setw(7) << std::setfill('0') << ck.iter << ".tcwl";
    save_checkpoint(ck.params, dir / name.str());
  }
  save_checkpoint(run.params, dir / "final.tcwl");
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
  write_text(dir / "timestamps.json",
             json{{"started", started}, {"finished", utc_now()}, {"train_seconds", seconds}}.dump(2) +
                 "\n");

  const LossBreakdown& last = run.log.back().loss;
  json manifest;
  manifest["config_hash"] = hash;
  manifest["code_version"] = TCWAE_VERSION;
  manifest["seeds"] = std::vector<std::uint64_t>{seed};
  manifest["objective"] = std::string(to_string(cfg.train.objective));
  manifest["iterations"] = run.log.size();
  manifest["final_loss"] = {{"reconstruction", last.reconstruction}, {"tc", last.tc},
                            {"dimwise_kl", last.dimwise_kl}, {"index_code_mi", last.index_code_mi},
                            {"total", last.total}, {"disc_loss", run.log.back().disc_loss}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<fs::path> cmd_train(const fs::path& config_path, const RunOptions& opts) {
  const ExperimentConfig cfg = ExperimentConfig::load(config_path);
  std::vector<fs::path> dirs;
  for (auto seed : cfg.seeds) {
    const fs::path dir = output_root(cfg) / cfg.name / ("seed" + std::to_string(seed));
    train_run(cfg, seed, dir, opts);
    dirs.push_back(dir);
  }
  return dirs;
}

ModelHandle load_model_handle(const fs::path& run_dir, const FactorDataset& ds) {
  const ExperimentConfig cfg = load_run_config(run_dir);
  const fs::path ckpt = run_dir / "final.tcwl";
  if (!fs::exists(ckpt)) throw std::runtime_error("missing checkpoint " + ckpt.string());
  const ImageShape shape = ds.image_shape();
  auto arch = std::make_shared<Architecture>(
      Architecture::by_name(cfg.train.architecture, shape.height, shape.channels, cfg.train.latent_dim));
  auto params = std::make_shared<ModelParams<float>>(load_checkpoint(ckpt));
  check_model(*arch, *params);
  ModelHandle h;
  h.encode_means = [arch, params, &ds](std::span<const std::size_t> rows) {
    return encode(*arch, *params, ds.gather(rows)).means;
  };
  h.reconstruct = [arch, params](const Matrix& x) {
    return decode_pixels(*arch, *params, encode(*arch, *params, x).means);
  };
  return h;
}

ScoreReport score_model(const ModelHandle& model, const FactorDataset& ds, Rng rng) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  RepresentationTable table{model.encode_means(all), ds.factors, ds.spec};
  // One encoding pass serves every metric.
  const Matrix latents = table.latents;
  const EncoderFn cached = [&latents](std::span<const std::size_t> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), latents.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.row(static_cast<Eigen::Index>(i)) = latents.row(static_cast<Eigen::Index>(rows[i]));
    }
    return out;
  };
  ScoreReport r;
  r.mig = mig(table);
  r.sap = sap_score(table);
  r.factor_vae = factor_vae_score(cached, ds, rng);
  r.mse = reconstruction_mse(model.reconstruct, ds);
  return r;
}

EvalResult evaluate_run(const fs::path& run_dir) {
  const ExperimentConfig cfg = load_run_config(run_dir);
  const FactorDataset ds = build_dataset(cfg.dataset);
  const ModelHandle model = load_model_handle(run_dir, ds);
  const std::uint64_t seed = cfg.seeds.front();
  EvalResult out;
  out.scores = score_model(model, ds, Rng(seed).split(Stream::metrics));
  std::ostringstream row;
  row << cfg.name << ',' << to_string(cfg.train.objective) << ',' << format_number(cfg.train.hp.beta)
      << ',' << format_number(cfg.train.hp.gamma) << ',' << seed << ','
      << format_number(out.scores.mse) << ',' << format_number(out.scores.mig) << ','
      << format_number(out.scores.factor_vae) << ',' << format_number(out.scores.sap);
  out.row = row.str();
  return out;
}

EvalResult cmd_eval(const fs::path& run_dir) {
  EvalResult r = evaluate_run(run_dir);
  const fs::path path = run_dir / "scores.csv";
  const bool fresh = !fs::exists(path);
  std::ofstream f(path, std::ios::app);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  if (fresh) f << kScoreHeader << '\n';
  f << r.row << '\n';
  return r;
}

std::vector<double> per_dimension_kl(const Matrix& means, const Matrix& log_vars) {
  if (means.rows() == 0 || means.rows() != log_vars.rows() || means.cols() != log_vars.cols()) {
    throw std::invalid_argument("per_dimension_kl: shape mismatch");
  }
  const Matrix kl = 0.5 * (means.array().square() + log_vars.array().exp() - 1.0 - log_vars.array());
  std::vector<double> out(static_cast<std::size_t>(means.cols()));
  for (Eigen::Index j = 0; j < means.cols(); ++j) out[static_cast<std::size_t>(j)] = kl.col(j).mean();
  return out;
}

std::vector<std::size_t> kl_order(const std::vector<double>& kl) {
  std::vector<std::size_t> order(kl.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return kl[a] < kl[b]; });
  return order;
}

void write_netpbm(const fs::path& path, std::span<const double> pixels, std::size_t height,
                  std::size_t width, std::size_t channels) {
  if (channels != 1 && channels != 3) throw std::invalid_argument("netpbm: channels must be 1 or 3");
  if (pixels.size() != height * width * channels) throw std::invalid_argument("netpbm: size mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << (channels == 1 ? "P5" : "P6") << '\n' << width << ' ' << height << "\n255\n";
  std::string bytes(pixels.size(), '\0');
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double v = std::clamp(pixels[i], 0.0, 1.0);
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<fs::path> cmd_traverse(const fs::path& run_dir, const TraverseOptions& opts) {
  if (opts.steps < 2) throw std::invalid_argument("traverse: steps must be at least 2");
  if (opts.rows < 1) throw std::invalid_argument("traverse: rows must be at least 1");
  if (!(std::isfinite(opts.lo) && std::isfinite(opts.hi) && opts.lo < opts.hi)) {
    throw std::invalid_argument("traverse: range must satisfy a < b");
  }
  const ExperimentConfig cfg = load_run_config(run_dir);
  const FactorDataset ds = build_dataset(cfg.dataset);
  const fs::path ckpt = run_dir / "final.tcwl";
  if (!fs::exists(ckpt)) throw std::runtime_error("missing checkpoint " + ckpt.string());
  const ImageShape shape = ds.image_shape();
  const Architecture arch =
      Architecture::by_name(cfg.train.architecture, shape.height, shape.channels, cfg.train.latent_dim);
  const ModelParams<float> params = load_checkpoint(ckpt);
  check_model(arch, params);

  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const Posteriors post = encode(arch, params, ds.gather(all));
  const std::vector<double> kl = per_dimension_kl(post.means, post.log_vars);
  const std::vector<std::size_t> order = kl_order(kl);

  const std::size_t rows = std::min(opts.rows, ds.size());
  std::vector<std::size_t> picked(rows);
  for (std::size_t r = 0; r < rows; ++r) picked[r] = r * ds.size() / rows;
  Matrix base(static_cast<Eigen::Index>(rows), post.means.cols());
  for (std::size_t r = 0; r < rows; ++r) {
    base.row(static_cast<Eigen::Index>(r)) = post.means.row(static_cast<Eigen::Index>(picked[r]));
  }

  const fs::path out_dir = run_dir / "traversals";
  fs::create_directories(out_dir);
  const std::size_t h = shape.height, w = shape.width, c = shape.channels;
  std::vector<fs::path> paths;
  std::ofstream order_csv(out_dir / "traverse_order.csv");
  order_csv << "rank,dim,kl\n" << std::setprecision(10);
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const auto dim = static_cast<Eigen::Index>(order[rank]);
    Matrix codes(static_cast<Eigen::Index>(rows * opts.steps), base.cols());
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t s = 0; s < opts.steps; ++s) {
        const auto i = static_cast<Eigen::Index>(r * opts.steps + s);
        codes.row(i) = base.row(static_cast<Eigen::Index>(r));
        codes(i, dim) = opts.lo + (opts.hi - opts.lo) * static_cast<double>(s) /
                                      static_cast<double>(opts.steps - 1);
      }
    }
    const Matrix pix = decode_pixels(arch, params, codes);
    const std::size_t grid_w = opts.steps * w;
    std::vector<double> grid(rows * h * grid_w * c);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t s = 0; s < opts.steps; ++s) {
        const auto tile = pix.row(static_cast<Eigen::Index>(r * opts.steps + s));
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w * c; ++x) {
            grid[((r * h + y) * grid_w + s * w) * c + x] = tile(static_cast<Eigen::Index>(y * w * c + x));
          }
        }
      }
    }
    std::ostringstream name;
    name << "rank" << std::setw(2) << std::setfill('0') << rank << "_dim" << std::setw(2)
         << std::setfill('0') << order[rank] << (c == 1 ? ".pgm" : ".ppm");
    const fs::path p = out_dir / name.str();
    write_netpbm(p, grid, rows * h, grid_w, c);
    paths.push_back(p);
    order_csv << rank << ',' << order[rank] << ',' << kl[order[rank]] << '\n';
  }
  return paths;
}

namespace {

using MetricGetter = double (*)(const ScoreReport&);

struct MetricColumn {
  const char* name;
  MetricGetter get;
  bool higher_is_better;
};

const std::vector<MetricColumn>& metric_columns() {
  static const std::vector<MetricColumn> cols{
      {"mse", [](const ScoreReport& s) { return s.mse; }, false},
      {"mig", [](const ScoreReport& s) { return s.mig; }, true},
      {"factor_vae", [](const ScoreReport& s) { return s.factor_vae; }, true},
      {"sap", [](const ScoreReport& s) { return s.sap; }, true},
  };
  return cols;
}

// Average ranks (1 = best); NaN entries get NaN.
std::vector<double> ranks(const std::vector<double>& values, bool higher_is_better) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::isfinite(values[i])) idx.push_back(i);
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return higher_is_better ? values[a] > values[b] : values[a] < values[b];
  });
  std::vector<double> out(values.size(), std::nan(""));
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) out[idx[k]] = avg;
    i = j + 1;
  }
  return out;
}

}  // namespace

SweepResult cmd_sweep(const fs::path& config_path, std::size_t workers, const RunOptions& opts) {
  const ExperimentConfig cfg = ExperimentConfig::load(config_path);
  SweepResult result;
  result.dir = output_root(cfg) / cfg.name / "sweep";
  fs::create_directories(result.dir);
  for (double b : cfg.sweep_beta) {
    for (double g : cfg.sweep_gamma) {
      for (auto seed : cfg.seeds) result.cells.push_back(SweepCell{b, g, seed, "ok", {}, {}});
    }
  }
  auto cell_dir = [&](const SweepCell& c) {
    return result.dir / ("b" + format_number(c.beta) + "_g" + format_number(c.gamma)) /
           ("seed" + std::to_string(c.seed));
  };
  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < result.cells.size(); i = next++) {
      SweepCell& cell = result.cells[i];
      try {
        ExperimentConfig cc = cfg;
        cc.train.hp.beta = cell.beta;
        cc.train.hp.gamma = cell.gamma;
        RunOptions ro = opts;
        if (workers > 1) ro.progress = nullptr;
        train_run(cc, cell.seed, cell_dir(cell), ro);
        const json m = read_json(cell_dir(cell) / "manifest.json");
        const json& fl = m.at("final_loss");
        cell.final_loss = {fl.at("reconstruction").get<double>(), fl.at("tc").get<double>(),
                           fl.at("dimwise_kl").get<double>(), fl.at("index_code_mi").get<double>(),
                           fl.at("total").get<double>()};
        cell.scores = evaluate_run(cell_dir(cell)).scores;
      } catch (const std::exception& e) {
        cell.status = std::string("failed: ") + e.what();
      }
      if (opts.progress != nullptr) {
        std::lock_guard lock(log_mutex);
        *opts.progress << "cell beta=" << cell.beta << " gamma=" << cell.gamma
                       << " seed=" << cell.seed << ": " << cell.status << std::endl;
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(workers, result.cells.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < n_workers; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  // Seed means per (beta, gamma) cell.
  const auto& cols = metric_columns();
  const std::size_t nb = cfg.sweep_beta.size(), ng = cfg.sweep_gamma.size();
  std::vector<std::vector<double>> means(cols.size(), std::vector<double>(nb * ng, std::nan("")));
  std::vector<std::size_t> ok_count(nb * ng, 0);
  for (std::size_t bi = 0; bi < nb; ++bi) {
    for (std::size_t gi = 0; gi < ng; ++gi) {
      const std::size_t cell = bi * ng + gi;
      std::vector<double> sums(cols.size(), 0.0);
      for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
        const SweepCell& c = result.cells[cell * cfg.seeds.size() + s];
        if (c.status != "ok") continue;
        ++ok_count[cell];
        for (std::size_t m = 0; m < cols.size(); ++m) sums[m] += cols[m].get(c.scores);
      }
      if (ok_count[cell] == 0) continue;
      for (std::size_t m = 0; m < cols.size(); ++m) {
        means[m][cell] = sums[m] / static_cast<double>(ok_count[cell]);
      }
    }
  }
  std::vector<double> mean_rank(nb * ng, 0.0);
  for (std::size_t m = 0; m < cols.size(); ++m) {
    const auto r = ranks(means[m], cols[m].higher_is_better);
    for (std::size_t i = 0; i < r.size(); ++i) mean_rank[i] += r[i] / static_cast<double>(cols.size());
  }

  {
    std::ofstream f(result.dir / "sweep.csv");
    f << "beta,gamma,seed,status,mse,mig,factor_vae,sap,reconstruction,tc,dimwise_kl,"
         "index_code_mi,total,mean_rank\n";
    for (std::size_t i = 0; i < result.cells.size(); ++i) {
      const SweepCell& c = result.cells[i];
      const bool ok = c.status == "ok";
      auto num = [&](double v) { return ok ? format_number(v) : std::string("nan"); };
      f << format_number(c.beta) << ',' << format_number(c.gamma) << ',' << c.seed << ','
        << sanitize(c.status) << ',' << num(c.scores.mse) << ',' << num(c.scores.mig) << ','
        << num(c.scores.factor_vae) << ',' << num(c.scores.sap) << ','
        << num(c.final_loss.reconstruction) << ',' << num(c.final_loss.tc) << ','
        << num(c.final_loss.dimwise_kl) << ',' << num(c.final_loss.index_code_mi) << ','
        << num(c.final_loss.total) << ',' << format_number(mean_rank[i / cfg.seeds.size()]) << '\n';
    }
  }
  {
    std::ofstream f(result.dir / "sweep_summary.csv");
    f << "beta,gamma,seeds_ok,mse,mig,factor_vae,sap,mean_rank\n";
    for (std::size_t bi = 0; bi < nb; ++bi) {
      for (std::size_t gi = 0; gi < ng; ++gi) {
        const std::size_t cell = bi * ng + gi;
        f << format_number(cfg.sweep_beta[bi]) << ',' << format_number(cfg.sweep_gamma[gi]) << ','
          << ok_count[cell];
        for (std::size_t m = 0; m < cols.size(); ++m) f << ',' << format_number(means[m][cell]);
        f << ',' << format_number(mean_rank[cell]) << '\n';
      }
    }
  }
  for (std::size_t m = 0; m < cols.size(); ++m) {
    std::ofstream f(result.dir / (std::string("heatmap_") + cols[m].name + ".csv"));
    f << "beta\\gamma";
    for (double g : cfg.sweep_gamma) f << ',' << format_number(g);
    f << '\n';
    for (std::size_t bi = 0; bi < nb; ++bi) {
      f << format_number(cfg.sweep_beta[bi]);
      for (std::size_t gi = 0; gi < ng; ++gi) f << ',' << format_number(means[m][bi * ng + gi]);
      f << '\n';
    }
  }
  return result;
}

GradcheckSummary cmd_gradcheck(const fs::path& out_dir, double corrupt_gradient) {
  GradcheckSummary summary;
  struct Case {
    ObjectiveKind kind;
    HyperParams hp;
    const char* label;
  };
  const HyperParams all{2.0, 3.0, 5.0, 0.7};
  const std::vector<Case> cases{
      {ObjectiveKind::tcwae_mws, all, "tcwae_mws"},
      {ObjectiveKind::tcwae_gan, all, "tcwae_gan"},
      {ObjectiveKind::beta_tcvae, all, "beta_tcvae"},
      {ObjectiveKind::beta_tcvae, HyperParams{0.0, 0.0, 0.0, 1.0}, "beta_tcvae_mi_only"},
      {ObjectiveKind::factor_vae, all, "factor_vae"},
      {ObjectiveKind::wae_mmd, all, "wae_mmd"},
      {ObjectiveKind::elbo, all, "elbo"},
  };
  fs::create_directories(out_dir);
  summary.report = out_dir / "gradcheck.csv";
  std::ofstream f(summary.report);
  f << "objective,resolution,block,max_rel_error,checked,status\n";
  summary.passed = true;
  for (std::size_t res : {std::size_t{8}, std::size_t{16}}) {
    for (const auto& c : cases) {
      GradcheckOptions o;
      o.resolution = res;
      o.corrupt_gradient = corrupt_gradient;
      for (auto b : finite_difference_report(c.kind, c.hp, o)) {
        b.objective = c.label;
        f << b.objective << ',' << res << ',' << b.block << ',' << std::setprecision(6)
          << b.max_rel_error << ',' << b.checked << ',' << (b.passed ? "pass" : "FAIL") << '\n';
        summary.passed = summary.passed && b.passed;
        summary.blocks.push_back(std::move(b));
      }
    }
  }
  return summary;
}

}  // namespace tcwae
