#include "tcwae/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "tcwae/binary_io.hpp"

namespace tcwae {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr Eigen::Index kEvalChunk = 128;

template <typename T>
void check_same_keys(const ParamMap<T>& a, const ParamMap<T>& b, const char* what) {
  if (a.size() != b.size()) throw std::invalid_argument(std::string(what) + ": key sets differ");
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first) {
      throw std::invalid_argument(std::string(what) + ": key mismatch '" + ia->first + "' vs '" +
                                  ib->first + "'");
    }
    if (ia->second.rows() != ib->second.rows() || ia->second.cols() != ib->second.cols()) {
      throw std::invalid_argument(std::string(what) + ": shape mismatch for '" + ia->first + "'");
    }
  }
}

Matrix sigmoid_of(const Matrix& a) {
  return a.unaryExpr([](double v) { return sigmoid(v); });
}

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  rng.fill_normal({m.data(), static_cast<std::size_t>(m.size())});
  return m;
}

struct Reparam {
  Posteriors post;
  Matrix eps;
  Matrix std_dev;
  Matrix codes;
};

Posteriors split_encoder_output(const Matrix& e, Eigen::Index d) {
  Posteriors p;
  p.means = e.leftCols(d);
  p.raw_log_vars = e.rightCols(d);
  p.log_vars = p.raw_log_vars.unaryExpr([](double v) { return clamp_log_var(v); });
  return p;
}

Reparam reparameterise(Posteriors post, Rng& rng) {
  Reparam r;
  r.eps = normal_matrix(post.means.rows(), post.means.cols(), rng);
  r.std_dev = (0.5 * post.log_vars.array()).exp().matrix();
  r.codes = post.means + r.std_dev.cwiseProduct(r.eps);
  r.post = std::move(post);
  return r;
}

template <typename T>
Matrix forward_chunked(const NetworkSpec& spec, const ParamMap<T>& params, const Matrix& x) {
  Matrix out;
  for (Eigen::Index start = 0; start < x.rows(); start += kEvalChunk) {
    const Eigen::Index n = std::min(kEvalChunk, x.rows() - start);
    Mat<T> chunk = x.middleRows(start, n).template cast<T>();
    Matrix y = forward(spec, params, chunk).template cast<double>();
    if (start == 0) out.resize(x.rows(), y.cols());
    out.middleRows(start, n) = y;
  }
  return out;
}

}  // namespace

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("adam: learning_rate must be positive");
  }
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw std::invalid_argument("adam: beta1 must be in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw std::invalid_argument("adam: beta2 must be in (0, 1)");
  if (!(epsilon > 0.0)) throw std::invalid_argument("adam: epsilon must be positive");
}

template <typename T>
void adam_step(ParamMap<T>& params, const ParamMap<T>& grads, AdamState<T>& state,
               const AdamConfig& cfg) {
  cfg.validate();
  check_same_keys(params, grads, "adam_step");
  if (state.m.empty() && state.v.empty()) {
    state.m = zeros_like(params);
    state.v = zeros_like(params);
  }
  check_same_keys(params, state.m, "adam_step");
  check_same_keys(params, state.v, "adam_step");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t));
  const T bc2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t));
  const T lr = static_cast<T>(cfg.learning_rate);
  const T eps = static_cast<T>(cfg.epsilon);
  for (auto& [name, p] : params) {
    const auto g = grads.at(name).array();
    auto m = state.m.at(name).array();
    auto v = state.v.at(name).array();
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.square();
    p.array() -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
  }
}

template <typename T>
Posteriors encode(const Architecture& arch, const ModelParams<T>& params, const Matrix& images) {
  const Matrix e = forward_chunked(arch.encoder, params.encoder, images);
  return split_encoder_output(e, static_cast<Eigen::Index>(arch.latent_dim()));
}

template <typename T>
Matrix decode_raw(const Architecture& arch, const ModelParams<T>& params, const Matrix& codes) {
  return forward_chunked(arch.decoder, params.decoder, codes);
}

template <typename T>
Matrix decode_pixels(const Architecture& arch, const ModelParams<T>& params, const Matrix& codes) {
  return sigmoid_of(decode_raw(arch, params, codes));
}

template <typename T>
LossBreakdown loss_and_gradients(const ModelConfig& cfg, const ModelParams<T>& params,
                                 const Matrix& images, Rng& rng, ModelGradients<T>* grads) {
  const Architecture& arch = cfg.arch;
  const ObjectiveKind kind = cfg.objective.kind;
  const auto d = static_cast<Eigen::Index>(arch.latent_dim());
  const bool deterministic = uses_deterministic_decoder(kind);
  const bool adversarial = uses_discriminator(kind);

  Tape<T> enc_tape, dec_tape, disc_tape;
  const Mat<T> enc_out = forward(arch.encoder, params.encoder, Mat<T>(images.template cast<T>()),
                                 grads != nullptr ? &enc_tape : nullptr);
  const Reparam rp = reparameterise(split_encoder_output(enc_out.template cast<double>(), d), rng);
  const LatentBatch latents(rp.codes, rp.post.means, rp.post.log_vars);
  const Mat<T> codes_t = rp.codes.template cast<T>();

  const Matrix raw = forward(arch.decoder, params.decoder, codes_t,
                             grads != nullptr ? &dec_tape : nullptr)
                         .template cast<double>();
  const Matrix out = deterministic ? sigmoid_of(raw) : raw;

  Matrix disc_logits;
  if (adversarial) {
    disc_logits = forward(arch.discriminator, params.discriminator, codes_t,
                          grads != nullptr ? &disc_tape : nullptr)
                      .template cast<double>();
  }
  Matrix prior_samples;
  if (kind == ObjectiveKind::wae_mmd) prior_samples = normal_matrix(images.rows(), d, rng);

  ObjectiveInputs in{&images, &out, &latents, adversarial ? &disc_logits : nullptr,
                     kind == ObjectiveKind::wae_mmd ? &prior_samples : nullptr};
  ObjectiveGradients og;
  const LossBreakdown r = evaluate_objective(cfg.objective, in, grads != nullptr ? &og : nullptr);
  if (auto bad = r.first_non_finite()) {
    throw std::runtime_error("non-finite loss term '" + std::string(*bad) + "'");
  }
  if (grads == nullptr) return r;

  Matrix d_raw = og.decoder_output;
  if (deterministic) d_raw.array() *= out.array() * (1.0 - out.array());
  grads->decoder = zeros_like(params.decoder);
  Matrix d_codes = og.latents.codes +
                   backward(arch.decoder, params.decoder, dec_tape, Mat<T>(d_raw.template cast<T>()),
                            grads->decoder)
                       .template cast<double>();
  if (adversarial) {
    ParamMap<T> frozen = zeros_like(params.discriminator);
    d_codes += backward(arch.discriminator, params.discriminator, disc_tape,
                        Mat<T>(og.disc_logits.template cast<T>()), frozen)
                   .template cast<double>();
  }
  const Matrix d_means = og.latents.means + d_codes;
  Matrix d_log_vars = og.latents.log_vars + 0.5 * d_codes.cwiseProduct(rp.eps).cwiseProduct(rp.std_dev);
  // The clamp passes no gradient where it is active.
  for (Eigen::Index i = 0; i < d_log_vars.size(); ++i) {
    const double v = rp.post.raw_log_vars.data()[i];
    if (v < kLogVarMin || v > kLogVarMax) d_log_vars.data()[i] = 0.0;
  }
  Matrix d_enc(images.rows(), 2 * d);
  d_enc << d_means, d_log_vars;
  grads->encoder = zeros_like(params.encoder);
  backward(arch.encoder, params.encoder, enc_tape, Mat<T>(d_enc.template cast<T>()),
           grads->encoder, false);
  return r;
}

template <typename T>
double discriminator_loss_and_gradients(const ModelConfig& cfg, const ModelParams<T>& params,
                                        const Matrix& images, Rng& rng, ParamMap<T>* grads) {
  const Architecture& arch = cfg.arch;
  const auto d = static_cast<Eigen::Index>(arch.latent_dim());
  const Mat<T> enc_out = forward(arch.encoder, params.encoder, Mat<T>(images.template cast<T>()));
  const Reparam rp = reparameterise(split_encoder_output(enc_out.template cast<double>(), d), rng);
  const Matrix permuted = permute_dims(rp.codes, rng);

  Tape<T> tape_q, tape_p;
  const bool want = grads != nullptr;
  const Matrix lq = forward(arch.discriminator, params.discriminator,
                            Mat<T>(rp.codes.template cast<T>()), want ? &tape_q : nullptr)
                        .template cast<double>();
  const Matrix lp = forward(arch.discriminator, params.discriminator,
                            Mat<T>(permuted.template cast<T>()), want ? &tape_p : nullptr)
                        .template cast<double>();
  Matrix dq, dp;
  const double loss = discriminator_loss(lq, lp, want ? &dq : nullptr, want ? &dp : nullptr);
  if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss term 'disc_loss'");
  if (!want) return loss;
  *grads = zeros_like(params.discriminator);
  backward(arch.discriminator, params.discriminator, tape_q, Mat<T>(dq.template cast<T>()), *grads,
           false);
  backward(arch.discriminator, params.discriminator, tape_p, Mat<T>(dp.template cast<T>()), *grads,
           false);
  return loss;
}

void TrainConfig::validate() const {
  hp.validate();
  adam.validate();
  disc_adam.validate();
  if (batch_size < 2) throw std::invalid_argument("train config: batch_size must be at least 2");
  if (iterations < 1) throw std::invalid_argument("train config: iterations must be at least 1");
  if (latent_dim < 1) throw std::invalid_argument("train config: latent_dim must be positive");
}

ModelConfig model_config(const TrainConfig& cfg, const FactorDataset& ds) {
  const ImageShape shape = ds.image_shape();
  if (shape.height != shape.width) throw std::invalid_argument("images must be square");
  ModelConfig mc;
  mc.arch = Architecture::by_name(cfg.architecture, shape.height, shape.channels, cfg.latent_dim);
  mc.objective.kind = cfg.objective;
  mc.objective.hp = cfg.hp;
  mc.objective.dataset_size = cfg.dataset_size != 0 ? cfg.dataset_size : ds.size();
  mc.objective.prior = DiagonalGaussian::standard(cfg.latent_dim);
  mc.objective.kernel = KernelConfig::for_latent_dim(cfg.latent_dim);
  return mc;
}

TrainingRun train(const TrainConfig& cfg, const FactorDataset& ds, const TrainObserver& observer) {
  cfg.validate();
  const ModelConfig mc = model_config(cfg, ds);
  const bool adversarial = uses_discriminator(cfg.objective);
  if (adversarial && ds.size() < 2 * cfg.batch_size) {
    throw std::invalid_argument("dataset smaller than two batches");
  }
  if (ds.size() < cfg.batch_size) throw std::invalid_argument("dataset smaller than batch");

  const Rng root(cfg.seed);
  Rng init = root.split(Stream::init);
  Rng noise = root.split(Stream::noise);
  Rng perm = root.split(Stream::permutation);
  MinibatchStream stream(ds.size(), cfg.batch_size, root.split(Stream::data_order));

  TrainingRun run;
  run.params = init_model<float>(mc.arch, init);
  AdamState<float> enc_state, dec_state, disc_state;
  run.log.reserve(cfg.iterations);
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    const auto batches =
        adversarial ? stream.next_disjoint(2) : std::vector<std::vector<std::size_t>>{stream.next()};
    LogEntry entry;
    entry.iter = it;
    {
      const Matrix x = ds.gather(batches[0]);
      ModelGradients<float> g;
      entry.loss = loss_and_gradients(mc, run.params, x, noise, &g);
      adam_step(run.params.encoder, g.encoder, enc_state, cfg.adam);
      adam_step(run.params.decoder, g.decoder, dec_state, cfg.adam);
    }
    if (adversarial) {
      const Matrix x = ds.gather(batches[1]);
      ParamMap<float> g;
      entry.disc_loss = discriminator_loss_and_gradients(mc, run.params, x, perm, &g);
      adam_step(run.params.discriminator, g, disc_state, cfg.disc_adam);
    }
    run.log.push_back(entry);
    if (cfg.checkpoint_every != 0 && it % cfg.checkpoint_every == 0 && it != cfg.iterations) {
      run.checkpoints.push_back({it, run.params});
    }
    if (observer && !observer(entry)) break;
  }
  return run;
}

void check_model(const Architecture& arch, const ModelParams<float>& params) {
  auto check = [](const NetworkSpec& spec, const ParamMap<float>& p, const char* net) {
    const auto layout = parameter_layout(spec);
    if (layout.size() != p.size()) {
      throw std::invalid_argument(std::string(net) + ": parameter count differs from architecture");
    }
    for (const auto& [name, shape] : layout) {
      auto it = p.find(name);
      if (it == p.end()) throw std::invalid_argument(std::string(net) + ": missing '" + name + "'");
      if (static_cast<std::size_t>(it->second.rows()) != shape.first ||
          static_cast<std::size_t>(it->second.cols()) != shape.second) {
        throw std::invalid_argument(std::string(net) + ": wrong shape for '" + name + "'");
      }
    }
  };
  check(arch.encoder, params.encoder, "encoder");
  check(arch.decoder, params.decoder, "decoder");
  check(arch.discriminator, params.discriminator, "discriminator");
}

void save_checkpoint(const ModelParams<float>& params, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write("TCWL", 4);
  io::write_u32(f, kCheckpointVersion);
  auto put = [&](const std::string& net, const ParamMap<float>& map) {
    for (const auto& [name, m] : map) {
      const std::string full = net + "/" + name;
      io::write_u32(f, static_cast<std::uint32_t>(full.size()));
      f.write(full.data(), static_cast<std::streamsize>(full.size()));
      io::write_u32(f, 2);
      io::write_u64(f, static_cast<std::uint64_t>(m.rows()));
      io::write_u64(f, static_cast<std::uint64_t>(m.cols()));
      for (Eigen::Index i = 0; i < m.size(); ++i) io::write_f64(f, static_cast<double>(m.data()[i]));
    }
  };
  put("encoder", params.encoder);
  put("decoder", params.decoder);
  put("discriminator", params.discriminator);
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

ModelParams<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("missing checkpoint " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (!f || std::string(magic, 4) != "TCWL") throw std::runtime_error("checkpoint: bad magic");
  const std::uint32_t version = io::read_u32(f);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  ModelParams<float> params;
  while (f.peek() != std::char_traits<char>::eof()) {
    const std::uint32_t len = io::read_u32(f);
    std::string full(len, '\0');
    f.read(full.data(), len);
    const std::uint32_t rank = io::read_u32(f);
    if (rank != 2) throw std::runtime_error("checkpoint: expected rank-2 tensors");
    const auto rows = static_cast<Eigen::Index>(io::read_u64(f));
    const auto cols = static_cast<Eigen::Index>(io::read_u64(f));
    Mat<float> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(io::read_f64(f));
    const auto slash = full.find('/');
    if (slash == std::string::npos) throw std::runtime_error("checkpoint: bad tensor name " + full);
    const std::string net = full.substr(0, slash);
    ParamMap<float>* target = net == "encoder"         ? &params.encoder
                              : net == "decoder"       ? &params.decoder
                              : net == "discriminator" ? &params.discriminator
                                                       : nullptr;
    if (target == nullptr) throw std::runtime_error("checkpoint: unknown network " + net);
    target->emplace(full.substr(slash + 1), std::move(m));
  }
  return params;
}

void write_loss_log(const std::vector<LogEntry>& log, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "iter,reconstruction,tc,dimwise_kl,index_code_mi,total,disc_loss\n";
  f << std::setprecision(17);
  for (const auto& e : log) {
    f << e.iter << ',' << e.loss.reconstruction << ',' << e.loss.tc << ',' << e.loss.dimwise_kl
      << ',' << e.loss.index_code_mi << ',' << e.loss.total << ',' << e.disc_loss << '\n';
  }
}

namespace {

// Block-relative error: max |a - n| over the block, scaled by the block's
// largest gradient magnitude.
template <typename F>
BlockReport check_block(const std::string& objective, const std::string& block, Mat<double>& p,
                        const Mat<double>& analytic, const F& loss, const GradcheckOptions& o) {
  BlockReport r{objective, block};
  double max_diff = 0.0, max_num = 0.0, max_ana = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double saved = p.data()[i];
    p.data()[i] = saved + o.step;
    const double up = loss();
    p.data()[i] = saved - o.step;
    const double down = loss();
    p.data()[i] = saved;
    const double num = (up - down) / (2.0 * o.step);
    const double ana = analytic.data()[i] * (1.0 + o.corrupt_gradient) + o.corrupt_gradient;
    max_diff = std::max(max_diff, std::abs(ana - num));
    max_num = std::max(max_num, std::abs(num));
    max_ana = std::max(max_ana, std::abs(ana));
  }
  const double scale = std::max({max_num, max_ana, 1e-12});
  r.max_rel_error = max_diff / scale;
  r.checked = static_cast<std::size_t>(p.size());
  r.passed = std::isfinite(r.max_rel_error) && r.max_rel_error < o.tolerance;
  return r;
}

}  // namespace

std::vector<BlockReport> finite_difference_report(ObjectiveKind kind, const HyperParams& hp,
                                                  const GradcheckOptions& o) {
  const Architecture arch = Architecture::reduced(o.resolution, o.channels, o.latent_dim);
  const Rng root(o.seed);
  Rng init = root.split(Stream::init);
  ModelParams<double> params = init_model<double>(arch, init);
  // Nonzero biases so every block carries gradient signal.
  Rng bias_rng = root.split(Stream::prior);
  for (auto* net : {&params.encoder, &params.decoder, &params.discriminator}) {
    for (auto& [name, m] : *net) {
      if (name.ends_with(".bias")) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 0.1 * bias_rng.normal();
      }
    }
  }
  Rng data_rng = root.split(Stream::data_order);
  Matrix images(static_cast<Eigen::Index>(o.batch_size),
                static_cast<Eigen::Index>(arch.image().size()));
  for (Eigen::Index i = 0; i < images.size(); ++i) images.data()[i] = data_rng.uniform();

  ModelConfig mc;
  mc.arch = arch;
  mc.objective.kind = kind;
  mc.objective.hp = hp;
  mc.objective.dataset_size = 10 * o.batch_size;
  mc.objective.prior = DiagonalGaussian::standard(o.latent_dim);
  mc.objective.kernel = KernelConfig::for_latent_dim(o.latent_dim);
  const Rng noise = root.split(Stream::noise);
  const std::string name(to_string(kind));

  std::vector<BlockReport> out;
  {
    Rng r = noise;
    ModelGradients<double> g;
    loss_and_gradients(mc, params, images, r, &g);
    auto loss = [&] {
      Rng rr = noise;
      return loss_and_gradients<double>(mc, params, images, rr, nullptr).total;
    };
    for (auto& [pname, p] : params.encoder) {
      out.push_back(check_block(name, "encoder/" + pname, p, g.encoder.at(pname), loss, o));
    }
    for (auto& [pname, p] : params.decoder) {
      out.push_back(check_block(name, "decoder/" + pname, p, g.decoder.at(pname), loss, o));
    }
  }
  if (uses_discriminator(kind)) {
    const Rng perm = root.split(Stream::permutation);
    Rng r = perm;
    ParamMap<double> g;
    discriminator_loss_and_gradients(mc, params, images, r, &g);
    auto loss = [&] {
      Rng rr = perm;
      return discriminator_loss_and_gradients<double>(mc, params, images, rr, nullptr);
    };
    for (auto& [pname, p] : params.discriminator) {
      out.push_back(check_block(name, "discriminator/" + pname, p, g.at(pname), loss, o));
    }
  }
  return out;
}

#define TCWAE_INSTANTIATE_TRAINING(T)                                                          \
  template void adam_step<T>(ParamMap<T>&, const ParamMap<T>&, AdamState<T>&,                  \
                             const AdamConfig&);                                               \
  template Posteriors encode<T>(const Architecture&, const ModelParams<T>&, const Matrix&);   \
  template Matrix decode_raw<T>(const Architecture&, const ModelParams<T>&, const Matrix&);   \
  template Matrix decode_pixels<T>(const Architecture&, const ModelParams<T>&, const Matrix&); \
  template LossBreakdown loss_and_gradients<T>(const ModelConfig&, const ModelParams<T>&,      \
                                               const Matrix&, Rng&, ModelGradients<T>*);       \
  template double discriminator_loss_and_gradients<T>(const ModelConfig&,                      \
                                                      const ModelParams<T>&, const Matrix&,    \
                                                      Rng&, ParamMap<T>*);

TCWAE_INSTANTIATE_TRAINING(float)
TCWAE_INSTANTIATE_TRAINING(double)
#undef TCWAE_INSTANTIATE_TRAINING

}  // namespace tcwae
