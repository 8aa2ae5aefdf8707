#include "stx/model.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace stx {

namespace {

Tensor as_batch(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("expected a C x H x W image");
  return reshape(image, {1, image.dim(0), image.dim(1), image.dim(2)});
}

Tensor drop_batch(const Tensor& x) {
  return reshape(x, {x.dim(1), x.dim(2), x.dim(3)});
}

Tensor upsample2(const Tensor& x) {
  return resize_bilinear(x, x.dim(2) * 2, x.dim(3) * 2);
}

}  // namespace

Generator::Generator(Index w, Rng& rng)
    : enc1(3, w, 3, 2, 1, rng),
      enc2(w, 2 * w, 3, 2, 1, rng),
      enc3(2 * w, 4 * w, 3, 2, 1, rng),
      res1a(4 * w, 4 * w, 3, 1, 1, rng),
      res1b(4 * w, 4 * w, 3, 1, 1, rng),
      res2a(4 * w, 4 * w, 3, 1, 1, rng),
      res2b(4 * w, 4 * w, 3, 1, 1, rng),
      up1(4 * w, 2 * w, 3, 1, 1, rng),
      up2(2 * w, w, 3, 1, 1, rng),
      up3(w, w, 3, 1, 1, rng),
      out(w, 3, 3, 1, 1, rng, /*zero_init=*/true) {}

std::vector<Tensor> Generator::encode(const Tensor& image) const {
  if (image.dim(1) % 8 != 0 || image.dim(2) % 8 != 0) {
    throw ShapeError("generator input extents must be divisible by 8");
  }
  Tensor x = as_batch(image);
  Tensor a1 = relu(enc1(x));
  Tensor a2 = relu(enc2(a1));
  Tensor a3 = relu(enc3(a2));
  return {image, drop_batch(a1), drop_batch(a2), drop_batch(a3)};
}

Generator::Forward Generator::forward(const Tensor& image) const {
  std::vector<Tensor> taps = encode(image);
  Tensor x = as_batch(image);
  Tensor d = as_batch(taps[3]);
  // residual blocks
  Tensor h1 = res1b(relu(res1a(d)));
  d = relu(d + h1);
  Tensor h2 = res2b(relu(res2a(d)));
  d = relu(d + h2);
  // decoder
  Tensor u = relu(up1(upsample2(d)));
  u = relu(up2(upsample2(u)));
  u = relu(up3(upsample2(u)));
  Tensor y = tanh(x + out(u));
  return {drop_batch(y), std::move(taps)};
}

void Generator::collect(const std::string& prefix, NamedTensors& params) const {
  enc1.collect(prefix + "/enc1", params);
  enc2.collect(prefix + "/enc2", params);
  enc3.collect(prefix + "/enc3", params);
  res1a.collect(prefix + "/res1a", params);
  res1b.collect(prefix + "/res1b", params);
  res2a.collect(prefix + "/res2a", params);
  res2b.collect(prefix + "/res2b", params);
  up1.collect(prefix + "/up1", params);
  up2.collect(prefix + "/up2", params);
  up3.collect(prefix + "/up3", params);
  out.collect(prefix + "/out", params);
}

Discriminator::Discriminator(Index w, Rng& rng)
    : c1(3, w, 4, 2, 1, rng), c2(w, 2 * w, 4, 2, 1, rng), c3(2 * w, 1, 3, 1, 1, rng) {}

Tensor Discriminator::operator()(const Tensor& image) const {
  Tensor x = image.rank() == 3 ? as_batch(image) : image;
  return c3(leaky_relu(c2(leaky_relu(c1(x), 0.2)), 0.2));
}

void Discriminator::collect(const std::string& prefix, NamedTensors& params) const {
  c1.collect(prefix + "/c1", params);
  c2.collect(prefix + "/c2", params);
  c3.collect(prefix + "/c3", params);
}

BranchHeads::BranchHeads(const ExperimentConfig& cfg, Rng& rng) : layers(cfg.model_embed_layers) {
  const Index w = cfg.model_base_width;
  const Index tap_channels[4] = {3, w, 2 * w, 4 * w};
  for (int l : layers) {
    heads.emplace_back(tap_channels[l], cfg.model_head_hidden, cfg.model_embed_dim, rng);
  }
}

void BranchHeads::collect(const std::string& prefix, NamedTensors& params) const {
  for (std::size_t i = 0; i < heads.size(); ++i) {
    heads[i].collect(prefix + "/l" + std::to_string(layers[i]), params);
  }
}

Tensor lsgan_d_loss(const Tensor& real_scores, const Tensor& fake_scores) {
  return 0.5 * mean(mul(real_scores - 1.0, real_scores - 1.0)) +
         0.5 * mean(mul(fake_scores, fake_scores));
}

Tensor lsgan_g_loss(const Tensor& fake_scores) {
  return 0.5 * mean(mul(fake_scores - 1.0, fake_scores - 1.0));
}

AdversarialLosses adversarial_losses(const Discriminator& disc, const Tensor& real,
                                     const Tensor& fake) {
  Tensor loss_d = lsgan_d_loss(disc(real), disc(fake.detach()));
  Tensor loss_g = lsgan_g_loss(disc(fake));
  return {loss_d, loss_g};
}

std::string StepReport::csv_header() {
  return "step,d_global,d_local,gan_global,gan_local,hdce_global,hdce_local,"
         "ts_global,ts_local,total_gen,fused_dev,millis";
}

std::string StepReport::csv_row() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f",
                static_cast<long long>(step), d_global, d_local, gan_global, gan_local,
                hdce_global, hdce_local, ts_global, ts_local, total_gen, fused_dev, millis);
  return buf;
}

TrainState TrainState::create(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  TrainState s;
  s.cfg = cfg;
  s.seed = seed;
  Rng init(Rng::derive(seed, {0xC0DE}));
  s.gen_global = Generator(cfg.model_base_width, init);
  s.gen_local = Generator(cfg.model_base_width, init);
  s.disc_global = Discriminator(cfg.model_base_width, init);
  s.disc_local = Discriminator(cfg.model_base_width, init);
  s.heads_global = BranchHeads(cfg, init);
  s.heads_local = BranchHeads(cfg, init);
  s.attn = ScaleAttention(4 * cfg.model_base_width, 8, init);

  s.opt_gen = Adam(cfg.optim_lr, cfg.optim_beta1, cfg.optim_beta2, cfg.optim_eps);
  NamedTensors gen_params;
  s.gen_global.collect("gen_global", gen_params);
  s.gen_local.collect("gen_local", gen_params);
  s.heads_global.collect("heads_global", gen_params);
  s.heads_local.collect("heads_local", gen_params);
  s.attn.collect("attn", gen_params);
  s.opt_gen.add(gen_params);

  s.opt_disc = Adam(cfg.optim_lr, cfg.optim_beta1, cfg.optim_beta2, cfg.optim_eps);
  NamedTensors disc_params;
  s.disc_global.collect("disc_global", disc_params);
  s.disc_local.collect("disc_local", disc_params);
  s.opt_disc.add(disc_params);
  return s;
}

NamedTensors TrainState::named_params() const {
  NamedTensors p;
  gen_global.collect("gen_global", p);
  gen_local.collect("gen_local", p);
  heads_global.collect("heads_global", p);
  heads_local.collect("heads_local", p);
  attn.collect("attn", p);
  disc_global.collect("disc_global", p);
  disc_local.collect("disc_local", p);
  return p;
}

void TrainState::save_checkpoint(const std::filesystem::path& path) const {
  TensorArchive a;
  for (const auto& [name, t] : named_params()) a.put(name, t);
  NamedTensors opt_state;
  opt_gen.collect_state("opt_gen", opt_state);
  opt_disc.collect_state("opt_disc", opt_state);
  for (const auto& [name, t] : opt_state) a.put(name, t);
  a.put("meta/step", Tensor::scalar(static_cast<double>(step)));
  a.put("meta/seed", Tensor::scalar(static_cast<double>(seed)));
  save_archive(a, path);
}

TrainState TrainState::load_checkpoint(const std::filesystem::path& path,
                                       const ExperimentConfig& cfg) {
  TensorArchive a = load_archive(path);
  auto seed = static_cast<std::uint64_t>(std::llround(a.get("meta/seed").item()));
  TrainState s = create(cfg, seed);
  for (auto& [name, t] : s.named_params()) {
    const Tensor& stored = a.get(name);
    if (stored.shape() != t.shape()) throw IoError("checkpoint shape mismatch at " + name);
    t.set_value(stored.value());
  }
  auto lookup = [&a](const std::string& name) { return a.get(name); };
  s.opt_gen.load_state("opt_gen", lookup);
  s.opt_disc.load_state("opt_disc", lookup);
  s.step = static_cast<std::int64_t>(std::llround(a.get("meta/step").item()));
  return s;
}

namespace {

struct BranchResult {
  bool enabled = false;
  Tensor loss_d;
  Tensor loss_gan;
  Tensor loss_hdce;
  Tensor loss_ts;
  // Kept for the fused report.
  CropSpec src_spec;
  Generator::Forward fwd;
};

struct BranchRefs {
  const Generator& gen;
  const Discriminator& disc;
  const BranchHeads& heads;
  CropMode mode;
};

BranchResult run_branch(const TrainState& state, const BranchRefs& refs, const Tensor& src,
                        const Tensor& tgt, Rng& rng) {
  const ExperimentConfig& cfg = state.cfg;
  BranchResult r;
  r.enabled = true;

  Index crop_size = refs.mode == CropMode::Global ? cfg.crop_global_size : cfg.crop_local_size;
  r.src_spec = plan_crops(src.dim(1), src.dim(2), crop_size, 0, rng, refs.mode,
                          cfg.crop_global_coverage)[0];
  CropSpec tgt_spec = plan_crops(tgt.dim(1), tgt.dim(2), crop_size, 0, rng, refs.mode,
                                 cfg.crop_global_coverage)[0];
  Tensor x = apply_crop(src, r.src_spec);
  Tensor t = apply_crop(tgt, tgt_spec);

  r.fwd = refs.gen.forward(x);
  AdversarialLosses adv = adversarial_losses(refs.disc, t, r.fwd.y);
  r.loss_d = adv.loss_d;

  // Embedding losses across the selected encoder layers, shared patch
  // locations between input and output features.
  std::vector<Tensor> out_taps = refs.gen.encode(r.fwd.y);
  Tensor hdce_acc;
  LayerPairSet ts_layers;
  int used_layers = 0;
  for (std::size_t li = 0; li < refs.heads.layers.size(); ++li) {
    int layer = refs.heads.layers[li];
    const Tensor& tap_in = r.fwd.taps[static_cast<std::size_t>(layer)];
    const Tensor& tap_out = out_taps[static_cast<std::size_t>(layer)];
    Index hw = tap_in.dim(1) * tap_in.dim(2);
    Index count = std::min<Index>(cfg.model_patch_count, hw);
    if (count < 2) continue;  // a single location carries no contrastive signal
    std::vector<Index> idx = sample_patch_indices(hw, count, rng);
    Tensor z_emb = project_patches(tap_in, refs.heads.heads[li], idx);
    Tensor w_emb = project_patches(tap_out, refs.heads.heads[li], idx);

    ContrastiveBatch batch;
    batch.queries = w_emb;
    batch.positives = z_emb;
    batch.negatives = internal_negatives(z_emb);
    batch.tau = cfg.loss_tau;
    batch.beta = cfg.loss_beta;
    batch.negative_count_override = cfg.loss_hdce_negative_count;
    Tensor l = hdce(batch);
    hdce_acc = hdce_acc.defined() ? hdce_acc + l : l;
    ++used_layers;

    ts_layers.push_back(
        {EmbeddingBatch{z_emb, layer, true}, EmbeddingBatch{w_emb, layer, true}});
  }
  r.loss_hdce = used_layers > 0 ? hdce_acc * (1.0 / used_layers) : Tensor::scalar(0.0);
  if (!ts_layers.empty()) {
    RsmiConfig rc;
    rc.ridge = cfg.loss_ridge;
    rc.mix = cfg.loss_rho;
    rc.basis_count = cfg.loss_basis_count;
    rc.sigma_z = cfg.loss_sigma_z;
    rc.sigma_w = cfg.loss_sigma_w;
    r.loss_ts = ts_loss(ts_layers, rc, rng);
  } else {
    r.loss_ts = Tensor::scalar(0.0);
  }

  // Generator-side adversarial term is rebuilt by the caller after the
  // discriminator update; stash only what phase B needs.
  r.loss_gan = adv.loss_g;  // placeholder, replaced post D-step
  return r;
}

void check_finite(double v, const char* term, std::int64_t step) {
  if (!std::isfinite(v)) {
    throw DivergenceError(std::string(term) + " is not finite at step " + std::to_string(step));
  }
}

}  // namespace

Tensor branch_generator_objective(const TrainState& state, CropMode branch, const Tensor& src,
                                  const Tensor& tgt, std::uint64_t rng_seed) {
  const ExperimentConfig& cfg = state.cfg;
  const bool global = branch == CropMode::Global;
  Rng rng(rng_seed);
  BranchResult r = run_branch(state,
                              {global ? state.gen_global : state.gen_local,
                               global ? state.disc_global : state.disc_local,
                               global ? state.heads_global : state.heads_local, branch},
                              src, tgt, rng);
  return cfg.loss_lambda_gan * r.loss_gan + cfg.loss_lambda_hdce * r.loss_hdce +
         cfg.loss_lambda_ts * r.loss_ts;
}

StepReport training_step(TrainState& state, const std::vector<Tensor>& source_images,
                         const std::vector<Tensor>& target_images) {
  auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig& cfg = state.cfg;
  if (source_images.empty() || target_images.empty()) {
    throw ValueError("training_step: empty image pools");
  }
  const std::int64_t step = state.step;

  Rng data_rng(Rng::derive(state.seed, {0xDA7A, static_cast<std::uint64_t>(step)}));
  const Tensor& src = source_images[static_cast<std::size_t>(
      data_rng.uniform_int(static_cast<Index>(source_images.size())))];
  const Tensor& tgt = target_images[static_cast<std::size_t>(
      data_rng.uniform_int(static_cast<Index>(target_images.size())))];

  // Phase A: forwards, discriminator losses, embedding losses per branch.
  Rng rng_g(Rng::derive(state.seed, {0x6106AA, static_cast<std::uint64_t>(step)}));
  Rng rng_l(Rng::derive(state.seed, {0x10CA1, static_cast<std::uint64_t>(step)}));
  BranchResult rg, rl;
  if (cfg.run_branch_global) {
    rg = run_branch(state, {state.gen_global, state.disc_global, state.heads_global,
                            CropMode::Global}, src, tgt, rng_g);
  }
  if (cfg.run_branch_local) {
    rl = run_branch(state, {state.gen_local, state.disc_local, state.heads_local,
                            CropMode::Local}, src, tgt, rng_l);
  }

  // Discriminator update (both branches share the optimizer; parameter sets
  // are disjoint so the updates stay independent).
  state.opt_disc.zero_grads();
  if (rg.enabled) rg.loss_d.backward();
  if (rl.enabled) rl.loss_d.backward();
  state.opt_disc.step();

  // Phase B: generator objective against the updated discriminators.
  auto branch_total = [&](BranchResult& r, const Discriminator& disc) {
    Tensor dg = disc(r.fwd.y);
    r.loss_gan = 0.5 * mean(mul(dg - 1.0, dg - 1.0));
    return cfg.loss_lambda_gan * r.loss_gan + cfg.loss_lambda_hdce * r.loss_hdce +
           cfg.loss_lambda_ts * r.loss_ts;
  };
  Tensor total_gen;
  if (rg.enabled) {
    Tensor t = branch_total(rg, state.disc_global) * cfg.loss_lambda_branch_global;
    total_gen = total_gen.defined() ? total_gen + t : t;
  }
  if (rl.enabled) {
    Tensor t = branch_total(rl, state.disc_local) * cfg.loss_lambda_branch_local;
    total_gen = total_gen.defined() ? total_gen + t : t;
  }
  state.opt_gen.zero_grads();
  if (total_gen.defined()) {
    total_gen.backward();
    state.opt_gen.step();
  }

  // Fused reconstruction over the branch-crop overlap, for reporting only.
  double fused_dev = 0.0;
  if (rg.enabled && rl.enabled) {
    Index top = std::max(rg.src_spec.top, rl.src_spec.top);
    Index bottom = std::min(rg.src_spec.bottom, rl.src_spec.bottom);
    Index left = std::max(rg.src_spec.left, rl.src_spec.left);
    Index right = std::min(rg.src_spec.right, rl.src_spec.right);
    if (bottom > top && right > left) {
      Tensor global_full = invert_resize(rg.fwd.y.detach(), rg.src_spec);
      Tensor global_win = crop_hw(global_full, top - rg.src_spec.top,
                                  bottom - rg.src_spec.top, left - rg.src_spec.left,
                                  right - rg.src_spec.left);
      Tensor local_win = crop_hw(rl.fwd.y.detach(), top - rl.src_spec.top,
                                 bottom - rl.src_spec.top, left - rl.src_spec.left,
                                 right - rl.src_spec.left);
      Tensor mask_full = state.attn(rg.fwd.taps[3].detach(), rg.src_spec.height(),
                                    rg.src_spec.width());
      Tensor mask_win = crop_hw(mask_full, top - rg.src_spec.top, bottom - rg.src_spec.top,
                                left - rg.src_spec.left, right - rg.src_spec.left);
      Tensor fused = fuse(local_win, global_win, mask_win);
      fused_dev = mean((fused - local_win) * (fused - local_win)).item();
    }
  }

  StepReport rep;
  rep.step = step;
  rep.d_global = rg.enabled ? rg.loss_d.item() : 0.0;
  rep.d_local = rl.enabled ? rl.loss_d.item() : 0.0;
  rep.gan_global = rg.enabled ? rg.loss_gan.item() : 0.0;
  rep.gan_local = rl.enabled ? rl.loss_gan.item() : 0.0;
  rep.hdce_global = rg.enabled ? rg.loss_hdce.item() : 0.0;
  rep.hdce_local = rl.enabled ? rl.loss_hdce.item() : 0.0;
  rep.ts_global = rg.enabled ? rg.loss_ts.item() : 0.0;
  rep.ts_local = rl.enabled ? rl.loss_ts.item() : 0.0;
  rep.total_gen = total_gen.defined() ? total_gen.item() : 0.0;
  rep.fused_dev = fused_dev;
  check_finite(rep.d_global, "loss_d_global", step);
  check_finite(rep.d_local, "loss_d_local", step);
  check_finite(rep.gan_global, "loss_gan_global", step);
  check_finite(rep.gan_local, "loss_gan_local", step);
  check_finite(rep.hdce_global, "loss_hdce_global", step);
  check_finite(rep.hdce_local, "loss_hdce_local", step);
  check_finite(rep.ts_global, "loss_ts_global", step);
  check_finite(rep.ts_local, "loss_ts_local", step);
  check_finite(rep.total_gen, "total_gen", step);
  check_finite(rep.fused_dev, "fused_dev", step);

  state.step = step + 1;
  rep.millis = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                   .count();
  return rep;
}

Tensor full_image_inference(const TrainState& state, const Tensor& image) {
  const ExperimentConfig& cfg = state.cfg;
  if (image.rank() != 3) throw ShapeError("full_image_inference expects 3 x H x W");
  Index h = image.dim(1), w = image.dim(2);

  Tensor y_local, y_global, mask;
  if (cfg.run_branch_local) {
    Rng unused(0);
    auto plans = plan_crops(h, w, cfg.crop_local_size, cfg.infer_stride(), unused,
                            CropMode::Tiling);
    std::vector<std::pair<CropSpec, Tensor>> preds;
    preds.reserve(plans.size());
    for (const CropSpec& spec : plans) {
      Tensor tile = apply_crop(image, spec);
      preds.emplace_back(spec, state.gen_local.forward(tile).y.detach());
    }
    y_local = stitch(preds, h, w);
  }
  if (cfg.run_branch_global) {
    CropSpec gspec{0, h, 0, w, cfg.crop_global_size, cfg.crop_global_size};
    Generator::Forward fwd = state.gen_global.forward(apply_crop(image, gspec));
    y_global = invert_resize(fwd.y, gspec).detach();
    mask = state.attn(fwd.taps[3].detach(), h, w).detach();
  }
  if (y_local.defined() && y_global.defined()) return fuse(y_local, y_global, mask).detach();
  if (y_local.defined()) return y_local;
  if (y_global.defined()) return y_global;
  throw ConfigError("full_image_inference: both branches disabled");
}

}  // namespace stx
