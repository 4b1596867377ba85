#include "train/trainer.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "numerics/ops.hpp"

namespace frn::train {

void TrainConfig::validate() const {
  require(lr0 > 0 && lr_min >= 0 && lr_min < lr0, ErrorKind::config, "train: need 0 <= lr_min < lr0");
  require(batch >= 1, ErrorKind::config, "train: batch must be at least 1");
  require(patch >= 1, ErrorKind::config, "train: patch must be positive");
  require(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0,
          ErrorKind::config, "train: invalid Adam hyperparameters");
  require(deep_weight >= 0, ErrorKind::config, "train: deep_weight must be nonnegative");
}

std::vector<simdata::Patch> sample_batch(const Dataset& data, std::size_t step, std::uint64_t seed,
                                         std::size_t batch, std::size_t patch, bool flips) {
  require(!data.empty(), ErrorKind::data, "train: empty dataset");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::vector<simdata::Patch> out;
  for (std::size_t b = 0; b < batch; ++b) {
    const Scene& s = data[pick(rng)];
    auto p = simdata::crop_patches(s.cube, s.rgb, patch, 1, rng(), flips);
    out.push_back(std::move(p.front()));
  }
  return out;
}

Trainer::Trainer(fractal::FrnModel& model, const TrainConfig& config, const Dataset& data)
    : model_(model), config_(config), data_(data), adam_(model.params(), config.adam) {
  config_.validate();
  const std::size_t m = std::size_t{1} << model.config().depth;
  require(config_.patch % m == 0, ErrorKind::config,
          "train: patch " + std::to_string(config_.patch) + " must be a multiple of " + std::to_string(m));
  for (const auto& s : data_) {
    require(s.cube.bands == model.config().bands, ErrorKind::data,
            "train: scene '" + s.name + "' has " + std::to_string(s.cube.bands) + " bands, model expects " +
                std::to_string(model.config().bands));
    require(s.cube.height >= config_.patch && s.cube.width >= config_.patch, ErrorKind::data,
            "train: scene '" + s.name + "' is smaller than the patch size");
  }
}

double Trainer::batch_loss(const std::vector<simdata::Patch>& batch, ssm::ScanContext& ctx, bool accumulate_grad) {
  double total = 0;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& p : batch) {
    Tensor rgb = p.rgb.to_tensor();
    Tensor gt = p.cube.to_tensor();
    auto rec = model_.forward(rgb, ctx);
    Tensor loss = l1_loss(rec.cube, gt);
    if (config_.deep_supervision) {
      const auto& plan = model_.plan();
      for (std::size_t l = 1; l < plan.levels; ++l) {
        Tensor target = fractal::interval_means(gt, plan.intervals_at(l));
        loss = add(loss, mul_scalar(l1_loss(rec.levels[l - 1], target), config_.deep_weight));
      }
    }
    total += loss.item() * scale;
    if (accumulate_grad) backward(mul_scalar(loss, scale));
  }
  return total;
}

StepRecord Trainer::step() {
  const auto t0 = std::chrono::steady_clock::now();
  StepRecord rec;
  rec.step = step_;
  rec.lr = cosine_lr(step_, config_.total_steps, config_.lr0, config_.lr_min);
  auto batch = sample_batch(data_, step_, config_.seed, config_.batch, config_.patch, config_.flips);
  std::seed_seq seq{static_cast<std::uint32_t>(config_.seed), static_cast<std::uint32_t>(step_), 0xe95u};
  std::mt19937_64 rng(seq);
  ssm::ScanContext ctx;
  ctx.mode = ssm::ScanContext::Mode::train;
  ctx.alpha = model_.config().alpha;
  ctx.rng = &rng;
  ctx.epsilon_log = &rec.epsilon;
  model_.params().zero_grad();
  rec.loss = batch_loss(batch, ctx, true);
  rec.grad_norm = grad_norm(model_.params());
  if (!std::isfinite(rec.loss) || !std::isfinite(rec.grad_norm)) {
    std::ostringstream os;
    os << "non-finite training loss at step " << step_ << " (loss " << rec.loss << ", lr " << rec.lr
       << ", grad norm " << rec.grad_norm << ")";
    fail(ErrorKind::numeric, os.str());
  }
  adam_.step(rec.lr);
  ++step_;
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

Checkpoint Trainer::checkpoint(const std::string& config_json) const {
  return make_checkpoint(model_.params(), &adam_, step_, config_json);
}

void Trainer::resume(const Checkpoint& ckpt) {
  restore_checkpoint(ckpt, model_.params(), &adam_);
  step_ = ckpt.step;
}

namespace {

std::vector<std::size_t> tile_starts(std::size_t size, std::size_t tile, std::size_t overlap) {
  std::vector<std::size_t> s;
  if (tile >= size) return {0};
  const std::size_t stride = tile - overlap;
  for (std::size_t p = 0;; p += stride) {
    if (p + tile >= size) {
      s.push_back(size - tile);
      break;
    }
    s.push_back(p);
  }
  return s;
}

// Ramp from the tile edge over `overlap` pixels; strictly positive everywhere.
double ramp(std::size_t i, std::size_t tile, std::size_t overlap) {
  if (overlap == 0) return 1.0;
  const double a = static_cast<double>(i + 1) / static_cast<double>(overlap + 1);
  const double b = static_cast<double>(tile - i) / static_cast<double>(overlap + 1);
  return std::min({1.0, a, b});
}

}  // namespace

simdata::SpectralCube predict_tiled(const fractal::FrnModel& model, const simdata::SpectralCube& rgb,
                                    const TileOptions& opt) {
  require(rgb.bands == 3, ErrorKind::dimension, "predict: expected an RGB image");
  require(opt.tile >= 1 && opt.overlap < opt.tile, ErrorKind::contract, "predict: overlap must be below tile size");
  const std::size_t th = std::min(opt.tile, rgb.height), tw = std::min(opt.tile, rgb.width);
  const std::size_t k = model.config().bands;
  simdata::SpectralCube out(k, rgb.height, rgb.width);
  std::vector<double> acc(out.data.size(), 0.0), wsum(rgb.plane(), 0.0);
  for (std::size_t y0 : tile_starts(rgb.height, th, opt.overlap))
    for (std::size_t x0 : tile_starts(rgb.width, tw, opt.overlap)) {
      simdata::SpectralCube tile(3, th, tw);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < th; ++y)
          for (std::size_t x = 0; x < tw; ++x) tile.at(c, y, x) = rgb.at(c, y0 + y, x0 + x);
      auto pred = model.predict(tile.to_tensor()).to_vector();
      for (std::size_t y = 0; y < th; ++y)
        for (std::size_t x = 0; x < tw; ++x) {
          const double w = ramp(y, th, opt.overlap) * ramp(x, tw, opt.overlap);
          const std::size_t p = (y0 + y) * rgb.width + x0 + x;
          wsum[p] += w;
          for (std::size_t l = 0; l < k; ++l) acc[l * rgb.plane() + p] += w * pred[(l * th + y) * tw + x];
        }
    }
  for (std::size_t l = 0; l < k; ++l)
    for (std::size_t p = 0; p < rgb.plane(); ++p)
      out.data[l * rgb.plane() + p] = static_cast<float>(acc[l * rgb.plane() + p] / wsum[p]);
  out.wavelengths = rgb.wavelengths.size() == k ? rgb.wavelengths : std::vector<float>{};
  return out;
}

EvalReport aggregate(std::vector<SceneReport> scenes) {
  EvalReport r;
  r.scenes = std::move(scenes);
  if (r.scenes.empty()) return r;
  const double n = static_cast<double>(r.scenes.size());
  for (const auto& s : r.scenes) {
    r.mean.psnr_db += s.metrics.psnr_db / n;
    r.mean.rmse_255 += s.metrics.rmse_255 / n;
    r.mean.ssim += s.metrics.ssim / n;
    r.mean.uiqi += s.metrics.uiqi / n;
  }
  return r;
}

EvalReport evaluate(const fractal::FrnModel& model, const Dataset& data, const TileOptions& opt, bool per_band) {
  std::vector<SceneReport> rows;
  for (const auto& s : data) {
    require(s.cube.bands == model.config().bands, ErrorKind::data,
            "evaluate: scene '" + s.name + "' has " + std::to_string(s.cube.bands) + " bands, model predicts " +
                std::to_string(model.config().bands));
    auto pred = predict_tiled(model, s.rgb, opt);
    rows.push_back({s.name, metrics::evaluate_metrics(pred, s.cube, per_band)});
  }
  return aggregate(std::move(rows));
}

}  // namespace frn::train
