#include <cmath>

#include "diffaug/errors.hpp"
#include "diffaug/models.hpp"

namespace diffaug {

namespace {

/// Sinusoidal timestep features, (n, dim, 1, 1).
Tensor timestep_features(std::span<const int> t, int dim) {
  Tensor out({static_cast<int>(t.size()), dim, 1, 1});
  const int half = dim / 2;
  for (std::size_t n = 0; n < t.size(); ++n) {
    for (int i = 0; i < half; ++i) {
      const Real freq = std::exp(-std::log(10000.0) * i / half);
      out.at(static_cast<int>(n), i, 0, 0) = std::sin(t[n] * freq);
      out.at(static_cast<int>(n), half + i, 0, 0) = std::cos(t[n] * freq);
    }
  }
  return out;
}

class Conv2Denoiser final : public Denoiser {
 public:
  Conv2Denoiser(const DenoiserConfig& cfg, int channels, std::uint64_t seed)
      : embed_dim_(cfg.time_embed_dim) {
    Rng rng(seed);
    const int width = cfg.base_channels;
    conv1_ = nn::Conv2d("denoiser.conv1", channels, width, 3, 1, rng);
    time_ = nn::Linear("denoiser.time", embed_dim_, width, rng);
    conv2_ = nn::Conv2d("denoiser.conv2", width, channels, 3, 1, rng, 0.5);
  }

  ag::Var forward(const ag::Var& x_t, std::span<const int> t) const override {
    const ag::Var temb = ag::constant(timestep_features(t, embed_dim_));
    const ag::Var h = ag::silu(ag::add_channel_bias(conv1_(x_t), time_(temb)));
    return conv2_(h);
  }

  nn::ParameterList parameters() const override {
    nn::ParameterList out;
    conv1_.collect(out);
    time_.collect(out);
    conv2_.collect(out);
    return out;
  }

 private:
  int embed_dim_;
  nn::Conv2d conv1_, conv2_;
  nn::Linear time_;
};

class UNetDenoiser final : public Denoiser {
 public:
  UNetDenoiser(const DenoiserConfig& cfg, int channels, std::uint64_t seed)
      : embed_dim_(cfg.time_embed_dim) {
    Rng rng(seed);
    const int c = cfg.base_channels;
    const int c2 = 2 * c;
    const int e = embed_dim_;
    time_mlp_ = nn::Linear("denoiser.time_mlp", e, e, rng);
    in_ = nn::Conv2d("denoiser.in", channels, c, 3, 1, rng);
    tb_in_ = nn::Linear("denoiser.tb_in", e, c, rng);
    enc1_ = nn::Conv2d("denoiser.enc1", c, c, 3, 1, rng);
    down1_ = nn::Conv2d("denoiser.down1", c, c2, 3, 2, rng);
    tb_down1_ = nn::Linear("denoiser.tb_down1", e, c2, rng);
    enc2_ = nn::Conv2d("denoiser.enc2", c2, c2, 3, 1, rng);
    down2_ = nn::Conv2d("denoiser.down2", c2, c2, 3, 2, rng);
    tb_down2_ = nn::Linear("denoiser.tb_down2", e, c2, rng);
    mid_ = nn::Conv2d("denoiser.mid", c2, c2, 3, 1, rng);
    up2_ = nn::Conv2d("denoiser.up2", 2 * c2, c2, 3, 1, rng);
    tb_up2_ = nn::Linear("denoiser.tb_up2", e, c2, rng);
    up1_ = nn::Conv2d("denoiser.up1", c2 + c, c, 3, 1, rng);
    tb_up1_ = nn::Linear("denoiser.tb_up1", e, c, rng);
    out_ = nn::Conv2d("denoiser.out", c, channels, 3, 1, rng, 0.1);
  }

  ag::Var forward(const ag::Var& x_t, std::span<const int> t) const override {
    const Shape s = x_t.shape();
    if (s.h % 4 != 0 || s.w % 4 != 0) {
      throw ShapeError("unet denoiser needs sides divisible by 4, got " + s.str());
    }
    using namespace ag;
    const Var temb = silu(time_mlp_(constant(timestep_features(t, embed_dim_))));
    const Var h0 = silu(add_channel_bias(in_(x_t), tb_in_(temb)));
    const Var skip1 = silu(enc1_(h0));
    const Var d1 = silu(add_channel_bias(down1_(skip1), tb_down1_(temb)));
    const Var skip2 = silu(enc2_(d1));
    const Var d2 = silu(add_channel_bias(down2_(skip2), tb_down2_(temb)));
    const Var m = silu(mid_(d2));
    const Var u2 = silu(add_channel_bias(
        up2_(concat_channels(upsample_nearest2x(m), skip2)), tb_up2_(temb)));
    const Var u1 = silu(add_channel_bias(
        up1_(concat_channels(upsample_nearest2x(u2), skip1)), tb_up1_(temb)));
    return out_(u1);
  }

  nn::ParameterList parameters() const override {
    nn::ParameterList out;
    time_mlp_.collect(out);
    in_.collect(out);
    tb_in_.collect(out);
    enc1_.collect(out);
    down1_.collect(out);
    tb_down1_.collect(out);
    enc2_.collect(out);
    down2_.collect(out);
    tb_down2_.collect(out);
    mid_.collect(out);
    up2_.collect(out);
    tb_up2_.collect(out);
    up1_.collect(out);
    tb_up1_.collect(out);
    out_.collect(out);
    return out;
  }

 private:
  int embed_dim_;
  nn::Linear time_mlp_, tb_in_, tb_down1_, tb_down2_, tb_up2_, tb_up1_;
  nn::Conv2d in_, enc1_, down1_, enc2_, down2_, mid_, up2_, up1_, out_;
};

}  // namespace

ImageTensor Denoiser::predict(const ImageTensor& x_t, int t) const {
  ag::NoGradGuard guard;
  const int ts[1] = {t};
  return ImageTensor(forward(ag::constant(x_t.pixels), ts).value(),
                     ValueRange::kUnbounded);
}

DenoiserFn Denoiser::as_fn() const {
  return [this](const ImageTensor& x, int t) { return predict(x, t); };
}

std::unique_ptr<Denoiser> make_denoiser(const DenoiserConfig& cfg, int channels,
                                        std::uint64_t seed) {
  if (cfg.base_channels < 1) throw ConfigError("denoiser.base_channels must be >= 1");
  if (cfg.time_embed_dim < 2 || cfg.time_embed_dim % 2 != 0) {
    throw ConfigError("denoiser.time_embed_dim must be a positive even number");
  }
  switch (cfg.arch) {
    case DenoiserArch::kConv2:
      return std::make_unique<Conv2Denoiser>(cfg, channels, seed);
    case DenoiserArch::kUNet:
      return std::make_unique<UNetDenoiser>(cfg, channels, seed);
  }
  throw ConfigError("unknown denoiser architecture");
}

}  // namespace diffaug
