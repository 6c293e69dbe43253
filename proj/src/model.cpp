#include "dru/model.hpp"

#include <cmath>

namespace dru {

Tensor4 he_init(std::int64_t fan_in, Shape4 shape, Rng& rng) {
  if (fan_in <= 0) throw UsageError("he_init: fan_in must be positive");
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  Tensor4 w(shape);
  real_t* p = w.data();
  const std::int64_t n = w.numel();
  for (std::int64_t i = 0; i < n; ++i) p[i] = static_cast<real_t>(std * rng.normal());
  return w;
}

ConvParams ModelGraph::make_conv(const std::string& name, std::int64_t out_ch, std::int64_t in_ch,
                                 std::int64_t k, int stride, PaddingMode pad) {
  ConvParams p;
  p.weight = &reg_.create(name + ".w", {out_ch, in_ch, k, k});
  p.bias = &reg_.create(name + ".b", {1, out_ch, 1, 1});
  p.stride = stride;
  p.padding = pad;
  return p;
}

ConvParams ModelGraph::make_tconv(const std::string& name, std::int64_t in_ch,
                                  std::int64_t out_ch) {
  ConvParams p;
  // transposed layout: (in_ch, out_ch, 2, 2)
  p.weight = &reg_.create(name + ".w", {in_ch, out_ch, 2, 2});
  p.bias = &reg_.create(name + ".b", {1, out_ch, 1, 1});
  p.stride = 2;
  return p;
}

BatchNormParams ModelGraph::make_bn(const std::string& name, std::int64_t channels) {
  BatchNormParams p;
  const Shape4 s{1, channels, 1, 1};
  p.gamma = &reg_.create(name + ".gamma", s);
  p.beta = &reg_.create(name + ".beta", s);
  p.running_mean = &reg_.create(name + ".rmean", s, /*trainable=*/false);
  p.running_var = &reg_.create(name + ".rvar", s, /*trainable=*/false);
  return p;
}

BottleneckBlock ModelGraph::make_bottleneck_block(const std::string& name, std::int64_t in_ch,
                                                  std::int64_t reduce_ch, int stride,
                                                  bool level_first) {
  if (stride != 1 && stride != 2) {
    throw UsageError("make_bottleneck_block: stride must be 1 or 2");
  }
  if (stride == 2 && !level_first) {
    throw UsageError("make_bottleneck_block: stride 2 is only valid for the first block of a "
                     "downsampling level");
  }
  const std::int64_t expand_ch = 4 * reduce_ch;
  BottleneckBlock b;
  b.stride = stride;
  b.bn1 = make_bn(name + ".bn1", in_ch);
  b.reduce = make_conv(name + ".reduce", reduce_ch, in_ch, 1, stride, PaddingMode::same_ceil);
  b.bn2 = make_bn(name + ".bn2", reduce_ch);
  b.spatial = make_conv(name + ".conv3x3", reduce_ch, reduce_ch, 3, 1, PaddingMode::same_ceil);
  b.bn3 = make_bn(name + ".bn3", reduce_ch);
  b.expand = make_conv(name + ".expand", expand_ch, reduce_ch, 1, 1, PaddingMode::same_ceil);
  if (in_ch != expand_ch || stride != 1) {
    b.projection = make_conv(name + ".proj", expand_ch, in_ch, 1, stride, PaddingMode::same_ceil);
  }
  return b;
}

DecoderBlock ModelGraph::make_decoder_block(const std::string& name, std::int64_t in_ch,
                                            std::int64_t out_ch) {
  DecoderBlock b;
  b.bn1 = make_bn(name + ".bn1", in_ch);
  b.conv1 = make_conv(name + ".conv1", out_ch, in_ch, 3, 1, PaddingMode::same_ceil);
  b.bn2 = make_bn(name + ".bn2", out_ch);
  b.conv2 = make_conv(name + ".conv2", out_ch, out_ch, 3, 1, PaddingMode::same_ceil);
  b.projection = make_conv(name + ".proj", out_ch, in_ch, 1, 1, PaddingMode::same_ceil);
  return b;
}

Var ModelGraph::bottleneck_forward(Tape& t, BottleneckBlock& b, const Var& x, Mode mode) {
  Var pre = relu(t, batch_norm(t, x, b.bn1, mode));
  Var h = conv2d(t, pre, b.reduce);
  h = conv2d(t, relu(t, batch_norm(t, h, b.bn2, mode)), b.spatial);
  h = conv2d(t, relu(t, batch_norm(t, h, b.bn3, mode)), b.expand);
  Var shortcut = b.projection ? conv2d(t, pre, *b.projection) : x;
  return add(t, h, shortcut);
}

Var ModelGraph::decoder_forward(Tape& t, DecoderBlock& b, const Var& x, Mode mode) {
  Var pre = relu(t, batch_norm(t, x, b.bn1, mode));
  Var h = conv2d(t, pre, b.conv1);
  h = conv2d(t, relu(t, batch_norm(t, h, b.bn2, mode)), b.conv2);
  Var shortcut = conv2d(t, pre, b.projection);
  return add(t, h, shortcut);
}

ModelGraph ModelGraph::build(const ModelConfig& cfg, bool init_weights) {
  if (cfg.n_class < 2) throw UsageError("build_drunet104: n_class must be >= 2");
  if (cfg.width_div < 1) throw UsageError("build_drunet104: width_div must be >= 1");

  ModelGraph m;
  m.cfg_ = cfg;
  const std::int64_t d = cfg.width_div;
  m.levels_ = {
      {1, 2, 16 / d, 64 / d, 32 / d, false},   {2, 3, 32 / d, 128 / d, 64 / d, true},
      {3, 3, 64 / d, 256 / d, 128 / d, true},  {4, 5, 128 / d, 512 / d, 256 / d, true},
      {5, 14, 256 / d, 1024 / d, 512 / d, true},
  };
  for (const auto& l : m.levels_) {
    if (l.reduce_ch < 1) throw UsageError("build_drunet104: width_div too large");
  }

  std::int64_t ch = cfg.in_channels;
  for (const auto& l : m.levels_) {
    std::vector<BottleneckBlock> blocks;
    for (int b = 0; b < l.encoder_blocks; ++b) {
      const bool first = (b == 0);
      const int stride = (first && l.downsamples) ? 2 : 1;
      blocks.push_back(m.make_bottleneck_block(
          "enc.l" + std::to_string(l.level) + ".b" + std::to_string(b), ch, l.reduce_ch, stride,
          first));
      ch = l.expand_ch;
    }
    m.encoder_.push_back(std::move(blocks));
  }

  const std::int64_t bridge_reduce = 512 / d;
  for (int b = 0; b < 4; ++b) {
    m.bridge_.push_back(m.make_bottleneck_block("bridge.b" + std::to_string(b), ch, bridge_reduce,
                                                b == 0 ? 2 : 1, b == 0));
    ch = 4 * bridge_reduce;
  }

  for (int li = 4; li >= 0; --li) {
    const auto& l = m.levels_[li];
    const std::string dn = "dec.l" + std::to_string(l.level);
    m.tconvs_.push_back(m.make_tconv(dn + ".up", ch, l.decoder_ch));
    m.decoder_.push_back(
        m.make_decoder_block(dn + ".block", l.decoder_ch + l.expand_ch, l.decoder_ch));
    ch = l.decoder_ch;
  }

  m.head_ = m.make_conv("head", cfg.n_class, ch, 1, 1, PaddingMode::same_ceil);

  if (init_weights) m.init_params();
  return m;
}

void ModelGraph::init_params() {
  Rng rng(cfg_.seed);
  for (auto& p : reg_.items()) {
    const std::string& n = p->name;
    if (n.size() > 2 && n.compare(n.size() - 2, 2, ".w") == 0) {
      // conv and tconv weights: fan_in = in_ch * kh * kw; tconv stores its
      // input channels in dim 0
      const Shape4 s = p->value.shape();
      const bool tconv = n.find(".up.w") != std::string::npos;
      const std::int64_t fan_in = (tconv ? s.n : s.c) * s.h * s.w;
      p->value = he_init(fan_in, s, rng);
    } else if (n.ends_with(".gamma") || n.ends_with(".rvar")) {
      p->value.fill(real_t(1));
    }
    // biases, betas and running means stay zero
  }
}

Var ModelGraph::forward(Tape& t, const Var& x0, Mode mode, std::uint64_t dropout_seed) {
  const Shape4 xs = x0.shape();
  if (xs.c != cfg_.in_channels) {
    throw ShapeError("forward: expected " + std::to_string(cfg_.in_channels) +
                     " input channels, got " + xs.str());
  }
  if (xs.h < 32 || xs.w < 32) {
    throw ShapeError("forward: spatial dims must be >= 32x32 to survive 5 downsamplings, got " +
                     xs.str());
  }

  Var x = t.ensure(x0);
  int site = 0;
  std::vector<Var> skips;
  for (std::size_t li = 0; li < encoder_.size(); ++li) {
    for (auto& blk : encoder_[li]) x = bottleneck_forward(t, blk, x, mode);
    x = dropout(t, x, cfg_.dropout_rate, mode, mix_seed(dropout_seed, 0x5eed, site));
    ++site;
    skips.push_back(x);
  }
  for (auto& blk : bridge_) x = bottleneck_forward(t, blk, x, mode);  // no dropout here
  for (std::size_t di = 0; di < decoder_.size(); ++di) {
    const Var& skip = skips[skips.size() - 1 - di];
    x = conv2d_transpose(t, x, tconvs_[di], skip.shape().h, skip.shape().w);
    x = concat_channels(t, x, skip);
    x = decoder_forward(t, decoder_[di], x, mode);
    x = dropout(t, x, cfg_.dropout_rate, mode, mix_seed(dropout_seed, 0x5eed, site));
    ++site;
  }
  return conv2d(t, x, head_);
}

Tensor4 ModelGraph::forward_infer(const Tensor4& x) {
  Tape t(/*recording=*/false);
  Var out = forward(t, Tape::detached(x), Mode::infer);
  return *out.value;
}

int ModelGraph::count_conv_layers() const {
  // counted: 3 per bottleneck block, 2 per decoder block, plus the head;
  // projection shortcuts and transposed convs are excluded
  int n = 0;
  for (const auto& level : encoder_) n += 3 * static_cast<int>(level.size());
  n += 3 * static_cast<int>(bridge_.size());
  n += 2 * static_cast<int>(decoder_.size());
  n += 1;
  return n;
}

std::int64_t ModelGraph::parameter_count() const { return reg_.scalar_count(true); }

int ModelGraph::dropout_site_count() const {
  return static_cast<int>(encoder_.size() + decoder_.size());
}

int ModelGraph::skip_count() const { return static_cast<int>(encoder_.size()); }

ModelGraph build_drunet104(std::int64_t in_channels, std::int64_t n_class, real_t dropout_rate,
                           std::uint64_t seed) {
  ModelConfig cfg;
  cfg.in_channels = in_channels;
  cfg.n_class = n_class;
  cfg.dropout_rate = dropout_rate;
  cfg.seed = seed;
  return ModelGraph::build(cfg);
}

}  // namespace dru
