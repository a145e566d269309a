#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "endofinder/binary_io.hpp"
#include "endofinder/masking.hpp"
#include "endofinder/objectives.hpp"
#include "endofinder/rng.hpp"
#include "endofinder/synth.hpp"
#include "endofinder/types.hpp"

namespace endofinder {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct EncoderShape {
  int patch_size = 8;
  int hidden = 64;
  int dim = 256;

  int patch_pixels() const { return patch_size * patch_size; }
  bool operator==(const EncoderShape&) const = default;
};

/// Patch embedding (Q -> H, ReLU), mask token, projection head (H -> D) and
/// per-patch linear decoder (H -> Q). Matrices are row-major in file order.
struct EncoderParams {
  EncoderShape shape;
  RowMatrix embed_w;  // Q x H
  Vector embed_b;     // H
  Vector mask_token;  // Q
  RowMatrix proj_w;   // H x D
  Vector proj_b;      // D
  RowMatrix decode_w; // H x Q
  Vector decode_b;    // Q

  static EncoderParams zeros(const EncoderShape& s) {
    const int q = s.patch_pixels();
    EncoderParams p;
    p.shape = s;
    p.embed_w = RowMatrix::Zero(q, s.hidden);
    p.embed_b = Vector::Zero(s.hidden);
    p.mask_token = Vector::Zero(q);
    p.proj_w = RowMatrix::Zero(s.hidden, s.dim);
    p.proj_b = Vector::Zero(s.dim);
    p.decode_w = RowMatrix::Zero(s.hidden, q);
    p.decode_b = Vector::Zero(q);
    return p;
  }

  /// uniform(-0.05, 0.05) everywhere except the mask token, which starts at zero.
  static EncoderParams init(const EncoderShape& s, std::uint64_t seed) {
    ENDF_THROW_IF_NOT(s.patch_size > 0 && s.hidden > 0 && s.dim > 0, Errc::BadConfig, "encoder shape must be positive");
    EncoderParams p = zeros(s);
    Rng rng(seed);
    p.for_each_tensor([&](const char* name, double* data, std::size_t n) {
      if (std::string_view(name) == "mask_token") return;
      for (std::size_t i = 0; i < n; ++i) data[i] = rng.uniform(-0.05, 0.05);
    });
    return p;
  }

  // Visits tensors in their declared (file) order.
  template <typename F>
  void for_each_tensor(F&& f) {
    f("embed_w", embed_w.data(), static_cast<std::size_t>(embed_w.size()));
    f("embed_b", embed_b.data(), static_cast<std::size_t>(embed_b.size()));
    f("mask_token", mask_token.data(), static_cast<std::size_t>(mask_token.size()));
    f("proj_w", proj_w.data(), static_cast<std::size_t>(proj_w.size()));
    f("proj_b", proj_b.data(), static_cast<std::size_t>(proj_b.size()));
    f("decode_w", decode_w.data(), static_cast<std::size_t>(decode_w.size()));
    f("decode_b", decode_b.data(), static_cast<std::size_t>(decode_b.size()));
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    const_cast<EncoderParams*>(this)->for_each_tensor(
        [&](const char* name, double* data, std::size_t n) { f(name, static_cast<const double*>(data), n); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const char*, const double*, std::size_t k) { n += k; });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&](const char*, const double* d, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) ok = ok && std::isfinite(d[i]);
    });
    return ok;
  }

  bool operator==(const EncoderParams& o) const {
    return shape == o.shape && embed_w == o.embed_w && embed_b == o.embed_b && mask_token == o.mask_token &&
           proj_w == o.proj_w && proj_b == o.proj_b && decode_w == o.decode_w && decode_b == o.decode_b;
  }
};

// ---------------------------------------------------------------------------
// Tokenisation

/// P x Q matrix, patches in row-major grid order, pixels row-major within a patch.
inline RowMatrix patchify(const Image& img, int patch_size) {
  ENDF_THROW_IF_NOT(patch_size > 0 && img.height % patch_size == 0 && img.width % patch_size == 0,
                    Errc::DimMismatch,
                    "image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                        " not divisible by patch " + std::to_string(patch_size));
  const int gh = img.height / patch_size, gw = img.width / patch_size;
  RowMatrix out(gh * gw, patch_size * patch_size);
  for (int py = 0; py < gh; ++py)
    for (int px = 0; px < gw; ++px)
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x)
          out(py * gw + px, y * patch_size + x) = img.at(py * patch_size + y, px * patch_size + x);
  return out;
}

inline Image unpatchify(const RowMatrix& patches, int height, int width, int patch_size) {
  ENDF_THROW_IF_NOT(patch_size > 0 && height % patch_size == 0 && width % patch_size == 0 &&
                        patches.rows() == static_cast<Eigen::Index>(height / patch_size) * (width / patch_size) &&
                        patches.cols() == patch_size * patch_size,
                    Errc::DimMismatch, "patch matrix does not match image geometry");
  const int gw = width / patch_size;
  Image img(height, width);
  for (Eigen::Index p = 0; p < patches.rows(); ++p)
    for (int y = 0; y < patch_size; ++y)
      for (int x = 0; x < patch_size; ++x)
        img.at(static_cast<int>(p / gw) * patch_size + y, static_cast<int>(p % gw) * patch_size + x) =
            patches(p, y * patch_size + x);
  return img;
}

// ---------------------------------------------------------------------------
// Forward / backward

inline constexpr double kMinIntensityScale = 1e-3;

/// Intermediate values of one forward pass, kept for backprop.
struct EncoderTrace {
  double scale = 1.0;   // mean intensity of visible pixels
  RowMatrix target;     // standardised patches (reconstruction target), P x Q
  RowMatrix input;      // target with masked rows replaced by the mask token
  RowMatrix pre;        // P x H
  RowMatrix latents;    // relu(pre)
  Vector pooled;        // H
  Vector projected;     // D, before normalisation
  double norm = 0.0;
  std::vector<double> z;
  RowMatrix recon;      // P x Q
  std::vector<bool> masked;
};

/// Brightness standardisation: x / mean(visible x) - 1. Only unmasked pixels
/// enter the mean so masked content cannot reach the embedding.
inline double visible_intensity_scale(const RowMatrix& patches, const std::vector<bool>& masked) {
  double sum = 0.0;
  std::size_t n = 0;
  for (Eigen::Index p = 0; p < patches.rows(); ++p) {
    if (masked[static_cast<std::size_t>(p)]) continue;
    sum += patches.row(p).sum();
    n += static_cast<std::size_t>(patches.cols());
  }
  if (n == 0) return 1.0;
  return std::max(sum / static_cast<double>(n), kMinIntensityScale);
}

inline EncoderTrace forward(const EncoderParams& params, const RowMatrix& patches, const MaskPlan& plan) {
  const auto p_count = patches.rows();
  ENDF_THROW_IF_NOT(patches.cols() == params.shape.patch_pixels(), Errc::DimMismatch,
                    "patch width " + std::to_string(patches.cols()) + " vs encoder " +
                        std::to_string(params.shape.patch_pixels()));
  ENDF_THROW_IF_NOT(plan.num_patches() == static_cast<std::size_t>(p_count), Errc::DimMismatch,
                    "mask plan covers " + std::to_string(plan.num_patches()) + " patches, image has " +
                        std::to_string(p_count));
  EncoderTrace t;
  t.masked = plan.masked;
  t.scale = visible_intensity_scale(patches, plan.masked);
  t.target = (patches.array() / t.scale - 1.0).matrix();
  t.input = t.target;
  for (Eigen::Index p = 0; p < p_count; ++p)
    if (plan.masked[static_cast<std::size_t>(p)]) t.input.row(p) = params.mask_token.transpose();
  t.pre = t.input * params.embed_w;
  t.pre.rowwise() += params.embed_b.transpose();
  t.latents = t.pre.cwiseMax(0.0);
  t.pooled = t.latents.colwise().mean().transpose();
  t.projected = params.proj_w.transpose() * t.pooled + params.proj_b;
  t.norm = t.projected.norm();
  ENDF_THROW_IF_NOT(std::isfinite(t.norm) && t.norm > kZeroNormEps, Errc::ZeroVector, "projection output is zero");
  t.z.resize(static_cast<std::size_t>(t.projected.size()));
  for (Eigen::Index k = 0; k < t.projected.size(); ++k) t.z[static_cast<std::size_t>(k)] = t.projected(k) / t.norm;
  t.recon = t.latents * params.decode_w;
  t.recon.rowwise() += params.decode_b.transpose();
  return t;
}

struct Encoded {
  EmbeddingVector z;
  RowMatrix latents;
};

/// Embedding and per-patch latents; masked patches are replaced by the mask token.
inline Encoded encode(const EncoderParams& params, const RowMatrix& patches, const MaskPlan& plan) {
  auto t = forward(params, patches, plan);
  return {EmbeddingVector::from_normalized(std::move(t.z)), std::move(t.latents)};
}

inline RowMatrix decode(const EncoderParams& params, const RowMatrix& latents) {
  ENDF_THROW_IF_NOT(latents.cols() == params.shape.hidden, Errc::DimMismatch, "latent width mismatch");
  RowMatrix out = latents * params.decode_w;
  out.rowwise() += params.decode_b.transpose();
  return out;
}

/// Inference embedding: no patches masked.
inline EmbeddingVector embed_image(const EncoderParams& params, const Image& img) {
  const RowMatrix patches = patchify(img, params.shape.patch_size);
  return encode(params, patches, MaskPlan::none(static_cast<std::size_t>(patches.rows()))).z;
}

/// Accumulates parameter gradients for one image given dL/dz and dL/d(recon).
inline void backward(const EncoderParams& params, const EncoderTrace& t, std::span<const double> d_z,
                     const RowMatrix& d_recon, EncoderParams& grad) {
  const auto p_count = t.latents.rows();
  Vector dz = Eigen::Map<const Vector>(d_z.data(), static_cast<Eigen::Index>(d_z.size()));
  const Eigen::Map<const Vector> z(t.z.data(), static_cast<Eigen::Index>(t.z.size()));
  const Vector d_proj = (dz - z * z.dot(dz)) / t.norm;

  grad.proj_w.noalias() += t.pooled * d_proj.transpose();
  grad.proj_b += d_proj;
  const Vector d_pooled = params.proj_w * d_proj;

  grad.decode_w.noalias() += t.latents.transpose() * d_recon;
  grad.decode_b += d_recon.colwise().sum().transpose();
  RowMatrix d_lat = d_recon * params.decode_w.transpose();
  d_lat.rowwise() += (d_pooled / static_cast<double>(p_count)).transpose();

  const RowMatrix d_pre = (t.pre.array() > 0.0).select(d_lat, 0.0);
  grad.embed_w.noalias() += t.input.transpose() * d_pre;
  grad.embed_b += d_pre.colwise().sum().transpose();
  for (Eigen::Index p = 0; p < p_count; ++p)
    if (t.masked[static_cast<std::size_t>(p)]) grad.mask_token.noalias() += params.embed_w * d_pre.row(p).transpose();
}

// ---------------------------------------------------------------------------
// Batch objective

/// 2N raw patch matrices (view 2 of original i at i + N) with their plans.
struct TrainingBatch {
  std::vector<RowMatrix> patches;
  std::vector<MaskPlan> plans;

  BatchPairing pairing() const { return {patches.size() / 2}; }
};

struct BatchResult {
  LossParts loss;
  EncoderParams grad;
};

inline LossParts evaluate_batch(const EncoderParams& params, const TrainingBatch& batch, const LossConfig& cfg) {
  std::vector<PatchPixels> recon, target;
  std::vector<std::vector<double>> z;
  for (std::size_t i = 0; i < batch.patches.size(); ++i) {
    auto t = forward(params, batch.patches[i], batch.plans[i]);
    recon.emplace_back(t.recon.data(), t.recon.data() + t.recon.size());
    target.emplace_back(t.target.data(), t.target.data() + t.target.size());
    z.push_back(std::move(t.z));
  }
  return combined_loss(recon, target, batch.plans, z, batch.pairing(), cfg);
}

/// Loss and full-model gradient through the chain rule.
inline BatchResult batch_gradients(const EncoderParams& params, const TrainingBatch& batch, const LossConfig& cfg) {
  ENDF_THROW_IF_NOT(batch.patches.size() >= 2 && batch.patches.size() % 2 == 0 &&
                        batch.plans.size() == batch.patches.size(),
                    Errc::DimMismatch, "training batch must hold 2N views with plans");
  std::vector<EncoderTrace> traces;
  traces.reserve(batch.patches.size());
  std::vector<PatchPixels> recon, target;
  std::vector<std::vector<double>> z;
  for (std::size_t i = 0; i < batch.patches.size(); ++i) {
    traces.push_back(forward(params, batch.patches[i], batch.plans[i]));
    const auto& t = traces.back();
    recon.emplace_back(t.recon.data(), t.recon.data() + t.recon.size());
    target.emplace_back(t.target.data(), t.target.data() + t.target.size());
    z.push_back(t.z);
  }
  const auto pairing = batch.pairing();
  BatchResult out;
  out.loss = combined_loss(recon, target, batch.plans, z, pairing, cfg);
  const auto g = loss_gradients(recon, target, batch.plans, z, pairing, cfg);
  out.grad = EncoderParams::zeros(params.shape);
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto& t = traces[i];
    const Eigen::Map<const RowMatrix> d_recon(g.d_recon[i].data(), t.recon.rows(), t.recon.cols());
    backward(params, t, g.d_z[i], d_recon, out.grad);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

enum class Optimizer { Adam, Momentum };

struct TrainConfig {
  int epochs = 30;
  int batch = 32;  // N originals per step (2N views)
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::Adam;
  double momentum = 0.9;  // beta1 for Adam, velocity decay for Momentum
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool cosine_decay = false;  // lr * (1 + cos(pi * step / total_steps)) / 2
  EncoderShape shape;
  LossConfig loss;
  MaskingConfig masking;
};

inline void validate(const TrainConfig& c) {
  ENDF_THROW_IF_NOT(c.epochs >= 0, Errc::BadConfig, "epochs must be >= 0");
  ENDF_THROW_IF_NOT(c.batch >= 2, Errc::BadConfig, "batch N must be >= 2");
  ENDF_THROW_IF_NOT(c.learning_rate >= 0.0, Errc::BadConfig, "learning rate must be >= 0");
  ENDF_THROW_IF_NOT(c.momentum >= 0.0 && c.momentum < 1.0, Errc::BadConfig, "momentum must be in [0, 1)");
  ENDF_THROW_IF_NOT(c.beta2 >= 0.0 && c.beta2 < 1.0, Errc::BadConfig, "beta2 must be in [0, 1)");
  validate(c.loss);
  validate(c.masking);
}

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double contrastive = 0.0;
  double reconstruction = 0.0;
};

struct TrainResult {
  EncoderParams params;
  std::vector<EpochLog> log;
};

/// Two augmented views per original plus adaptive mask plans, all drawn from `rng`.
inline TrainingBatch make_batch(const std::vector<SynthSample>& data, std::span<const std::size_t> members,
                                int patch_size, const MaskingConfig& masking, Rng& rng) {
  TrainingBatch b;
  b.patches.resize(2 * members.size());
  b.plans.resize(2 * members.size());
  for (std::size_t view = 0; view < 2; ++view)
    for (std::size_t i = 0; i < members.size(); ++i) {
      const std::size_t slot = view * members.size() + i;
      const auto v = augment(data[members[i]], rng.fork());
      b.patches[slot] = patchify(v.image, patch_size);
      const auto fg = classify_patches(v.mask, patch_size, masking.fg_threshold);
      b.plans[slot] = plan_mask(fg, masking, rng.fork());
    }
  return b;
}

namespace detail {

class OptimizerState {
 public:
  OptimizerState(const TrainConfig& cfg, const EncoderParams& like) : cfg_(cfg) {
    first_ = EncoderParams::zeros(like.shape);
    second_ = EncoderParams::zeros(like.shape);
  }

  void step(EncoderParams& params, EncoderParams& grad, double lr) {
    ++t_;
    std::vector<double*> g, m, v;
    grad.for_each_tensor([&](const char*, double* d, std::size_t) { g.push_back(d); });
    first_.for_each_tensor([&](const char*, double* d, std::size_t) { m.push_back(d); });
    second_.for_each_tensor([&](const char*, double* d, std::size_t) { v.push_back(d); });
    std::size_t k = 0;
    const double b1 = cfg_.momentum, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
    params.for_each_tensor([&](const char*, double* w, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) {
        if (cfg_.optimizer == Optimizer::Adam) {
          m[k][i] = b1 * m[k][i] + (1.0 - b1) * g[k][i];
          v[k][i] = b2 * v[k][i] + (1.0 - b2) * g[k][i] * g[k][i];
          w[i] -= lr * (m[k][i] / c1) / (std::sqrt(v[k][i] / c2) + cfg_.adam_eps);
        } else {
          m[k][i] = b1 * m[k][i] + g[k][i];
          w[i] -= lr * m[k][i];
        }
      }
      ++k;
    });
  }

 private:
  const TrainConfig& cfg_;
  EncoderParams first_, second_;
  int t_ = 0;
};

}  // namespace detail

/// Optimises the combined objective; deterministic for a given config.
inline TrainResult train(const std::vector<SynthSample>& data, const TrainConfig& cfg) {
  validate(cfg);
  ENDF_THROW_IF_NOT(data.size() >= 2, Errc::TooFewItems, "training needs at least 2 instances");
  Rng rng(cfg.seed);
  TrainResult out;
  out.params = EncoderParams::init(cfg.shape, rng.fork());
  detail::OptimizerState opt(cfg, out.params);

  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), data.size());
  const std::size_t steps = data.size() / n;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    EpochLog log{epoch, 0.0, 0.0, 0.0};
    for (std::size_t s = 0; s < steps; ++s) {
      const auto batch = make_batch(data, std::span(order).subspan(s * n, n), cfg.shape.patch_size, cfg.masking, rng);
      BatchResult res;
      try {
        res = batch_gradients(out.params, batch, cfg.loss);
      } catch (const Error& e) {
        if (e.code() != Errc::ZeroVector) throw;
        throw Error(Errc::Divergence, "degenerate projection at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(res.loss.total))
        throw Error(Errc::Divergence, "non-finite loss at epoch " + std::to_string(epoch));
      log.loss += res.loss.total;
      log.contrastive += res.loss.contrastive;
      log.reconstruction += res.loss.reconstruction;
      double lr = cfg.learning_rate;
      if (cfg.cosine_decay) {
        const double progress = static_cast<double>(epoch * steps + s) / static_cast<double>(cfg.epochs * steps);
        lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
      }
      opt.step(out.params, res.grad, lr);
    }
    log.loss /= static_cast<double>(steps);
    log.contrastive /= static_cast<double>(steps);
    log.reconstruction /= static_cast<double>(steps);
    if (!out.params.all_finite())
      throw Error(Errc::Divergence, "non-finite parameters after epoch " + std::to_string(epoch));
    out.log.push_back(log);
  }
  return out;
}

// ---------------------------------------------------------------------------
// ".endp": "ENDP1\0", u32 patch_size, u32 hidden, u32 dim, then f32 tensors
// embed_w, embed_b, mask_token, proj_w, proj_b, decode_w, decode_b.

inline constexpr char kParamsMagic[] = "ENDP1";

inline std::vector<std::uint8_t> encode_params(const EncoderParams& p) {
  ByteWriter w;
  w.raw(kParamsMagic, 6);
  w.u32(static_cast<std::uint32_t>(p.shape.patch_size));
  w.u32(static_cast<std::uint32_t>(p.shape.hidden));
  w.u32(static_cast<std::uint32_t>(p.shape.dim));
  p.for_each_tensor([&](const char*, const double* d, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) w.f32(static_cast<float>(d[i]));
  });
  return w.data();
}

inline EncoderParams decode_params(std::span<const std::uint8_t> bytes, const std::string& source = "<endp>") {
  ByteReader r(bytes, source);
  expect_magic(r, std::string_view(kParamsMagic, 6));
  EncoderShape s;
  s.patch_size = static_cast<int>(r.u32("patch_size"));
  s.hidden = static_cast<int>(r.u32("hidden"));
  s.dim = static_cast<int>(r.u32("dim"));
  if (s.patch_size <= 0 || s.hidden <= 0 || s.dim <= 0 || s.patch_size > 4096 || s.hidden > (1 << 20) ||
      s.dim > (1 << 20))
    r.fail("implausible encoder shape");
  const std::uint64_t q = static_cast<std::uint64_t>(s.patch_size) * static_cast<std::uint64_t>(s.patch_size);
  const std::uint64_t h = static_cast<std::uint64_t>(s.hidden), d = static_cast<std::uint64_t>(s.dim);
  const std::uint64_t count = q * h + h + q + h * d + d + h * q + q;
  if (count > r.remaining() / 4) r.fail("file too short for the declared encoder shape");
  auto p = EncoderParams::zeros(s);
  p.for_each_tensor([&](const char* name, double* d, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) d[i] = r.f32(name);
  });
  if (!r.at_end()) r.fail("trailing bytes after parameters");
  return p;
}

inline void save_params(const EncoderParams& p, const std::filesystem::path& path) {
  write_file_bytes(path, encode_params(p));
}

inline EncoderParams load_params(const std::filesystem::path& path) {
  return decode_params(read_file_bytes(path), path.string());
}

}  // namespace endofinder
