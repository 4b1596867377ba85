#include "net/generator.hpp"

#include "numerics/init.hpp"
#include "numerics/ops.hpp"

namespace frn::net {

void GeneratorConfig::validate() const {
  require(in_channels >= 4, ErrorKind::config, "generator: in_channels must be at least 4");
  require(out_channels >= 1, ErrorKind::config, "generator: out_channels must be at least 1");
  require(base_width >= 2 && base_width % 2 == 0, ErrorKind::config, "generator: base_width must be even");
  require(depth <= 6, ErrorKind::config, "generator: depth above 6 is not supported");
  require(d_state >= 1, ErrorKind::config, "generator: d_state must be at least 1");
  require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::config, "generator: alpha must lie in [0, 1]");
}

std::size_t param_count(const GeneratorConfig& c) {
  c.validate();
  auto conv = [](std::size_t ci, std::size_t co, std::size_t k) { return co * ci * k * k + co; };
  const std::size_t b = c.blocks_per_stage;
  std::size_t n = conv(c.in_channels, c.base_width, 3) + conv(c.base_width, c.out_channels, 3);
  for (std::size_t s = 0; s < c.depth; ++s) {
    const std::size_t wi = c.base_width << s, wo = c.base_width << (s + 1);
    n += conv(wi, wo, 2) + b * ssm::bssm_param_count(wo, c.d_state);
    n += conv(wo + wi, wi, 1) + b * ssm::bssm_param_count(wi, c.d_state);
  }
  n += b * ssm::bssm_param_count(c.base_width << c.depth, c.d_state);
  return n;
}

AtomicGenerator::AtomicGenerator(const GeneratorConfig& config, ParameterStore& store, const std::string& prefix,
                                 std::mt19937_64& rng)
    : config_(config), prefix_(prefix) {
  config_.validate();
  auto conv = [&](const std::string& name, std::size_t ci, std::size_t co, std::size_t k) {
    const std::size_t fan_in = ci * k * k;
    Conv c;
    c.weight = store.add(prefix + "." + name + ".weight", fan_in_uniform({co, ci, k, k}, fan_in, rng));
    c.bias = store.add(prefix + "." + name + ".bias", fan_in_uniform({co}, fan_in, rng));
    return c;
  };
  auto blocks = [&](const std::string& name, std::size_t width) {
    std::vector<ssm::BssmParams> out;
    for (std::size_t i = 0; i < config_.blocks_per_stage; ++i)
      out.push_back(ssm::make_bssm_params(store, prefix + "." + name + ".block" + std::to_string(i), width,
                                          config_.d_state, rng));
    return out;
  };
  const std::size_t w0 = config_.base_width;
  embed_ = conv("embed", config_.in_channels, w0, 3);
  for (std::size_t s = 0; s < config_.depth; ++s) {
    down_.push_back(conv("down" + std::to_string(s), w0 << s, w0 << (s + 1), 2));
    enc_blocks_.push_back(blocks("enc" + std::to_string(s), w0 << (s + 1)));
  }
  mid_blocks_ = blocks("mid", w0 << config_.depth);
  fuse_.resize(config_.depth);
  dec_blocks_.resize(config_.depth);
  for (std::size_t s = config_.depth; s-- > 0;) {
    fuse_[s] = conv("fuse" + std::to_string(s), (w0 << (s + 1)) + (w0 << s), w0 << s, 1);
    dec_blocks_[s] = blocks("dec" + std::to_string(s), w0 << s);
  }
  head_ = conv("head", w0, config_.out_channels, 3);
}

Tensor AtomicGenerator::block(const Tensor& x, const ssm::BssmParams& p, ssm::ScanContext& ctx) const {
  const double eps = ctx.next_epsilon();
  // With alpha = 0 the mask is identically one; skip computing it.
  if (ctx.alpha <= 0.0) return ssm::bssm_block_unmasked(x, p);
  return ssm::bssm_block(x, p, eps, ctx.alpha);
}

Tensor AtomicGenerator::forward(const Tensor& cond, ssm::ScanContext& ctx, const Tensor& shift) const {
  require(cond.rank() == 3 && cond.dim(0) == config_.in_channels, ErrorKind::dimension,
          "generator: expected " + std::to_string(config_.in_channels) + " input channels, got " +
              to_string(cond.shape()));
  const std::size_t m = config_.spatial_multiple();
  require(cond.dim(1) % m == 0 && cond.dim(2) % m == 0 && cond.dim(1) > 0 && cond.dim(2) > 0,
          ErrorKind::contract,
          "generator: spatial size " + std::to_string(cond.dim(1)) + "x" + std::to_string(cond.dim(2)) +
              " must be a multiple of " + std::to_string(m));
  Tensor x = conv2d(cond, embed_.weight, embed_.bias, 1, 1);
  if (shift.defined()) {
    require(shift.numel() == config_.base_width, ErrorKind::dimension,
            "generator: shift must have " + std::to_string(config_.base_width) + " entries");
    x = add(x, reshape(shift, {config_.base_width, 1, 1}));
  }
  std::vector<Tensor> skips;
  for (std::size_t s = 0; s < config_.depth; ++s) {
    skips.push_back(x);
    x = conv2d(x, down_[s].weight, down_[s].bias, 2, 0);
    for (const auto& p : enc_blocks_[s]) x = block(x, p, ctx);
  }
  for (const auto& p : mid_blocks_) x = block(x, p, ctx);
  for (std::size_t s = config_.depth; s-- > 0;) {
    Tensor parts[2] = {upsample_nearest2x(x), skips[s]};
    x = conv2d(concat(parts, 0), fuse_[s].weight, fuse_[s].bias, 1, 0);
    for (const auto& p : dec_blocks_[s]) x = block(x, p, ctx);
  }
  return conv2d(x, head_.weight, head_.bias, 1, 1);
}

Tensor AtomicGenerator::forward(const Tensor& cond) const {
  ssm::ScanContext ctx;
  ctx.mode = ssm::ScanContext::Mode::eval;
  ctx.alpha = config_.alpha;
  return forward(cond, ctx);
}

}  // namespace frn::net
