#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dru/ops.hpp"
#include "dru/rng.hpp"

namespace dru {

// One row of the architecture ledger. Encoder levels 1..5 run 2/3/3/5/14
// bottleneck blocks; the bridge (level 0 here) runs 4 and has no decoder.
struct LevelSpec {
  int level;  // 1..5, 0 = bridge
  int encoder_blocks;
  std::int64_t reduce_ch;
  std::int64_t expand_ch;   // always 4 * reduce_ch
  std::int64_t decoder_ch;  // 0 for the bridge
  bool downsamples;
};

// Pre-activation bottleneck: (BN-ReLU-1x1 reduce, stride s) -> (BN-ReLU-3x3)
// -> (BN-ReLU-1x1 expand x4), identity shortcut added. When channels or
// stride change, the shortcut is a 1x1 projection fed from the shared
// pre-activation; projection convs are not part of the 104-layer count.
struct BottleneckBlock {
  BatchNormParams bn1, bn2, bn3;
  ConvParams reduce, spatial, expand;
  std::optional<ConvParams> projection;
  int stride = 1;
};

// Decoder residual block: (BN-ReLU-3x3) x2 with a 1x1 projection shortcut
// (the concatenated input never matches out_ch).
struct DecoderBlock {
  BatchNormParams bn1, bn2;
  ConvParams conv1, conv2, projection;
};

struct ModelConfig {
  std::int64_t in_channels = 4;
  std::int64_t n_class = 4;
  real_t dropout_rate = real_t(0.2);
  // divides every bottleneck/decoder width; width_div 4 is the reduced desk
  // -scale clone with identical topology
  std::int64_t width_div = 1;
  std::uint64_t seed = 0;
};

// He initialization: zero-mean Gaussian with variance 2/fan_in.
Tensor4 he_init(std::int64_t fan_in, Shape4 shape, Rng& rng);

// The assembled DR-Unet104: 5 encoder levels + bridge + 5 decoder levels,
// skip concatenations, 10 dropout sites, 1x1 output head.
class ModelGraph {
 public:
  static ModelGraph build(const ModelConfig& cfg, bool init_weights = true);

  // logits at the input spatial extent; train mode applies dropout (seeded
  // per call) and batch statistics, infer mode neither
  Var forward(Tape& t, const Var& x, Mode mode, std::uint64_t dropout_seed = 0);
  Tensor4 forward_infer(const Tensor4& x);

  int count_conv_layers() const;          // the 104 ledger
  std::int64_t parameter_count() const;   // trainable scalars
  int dropout_site_count() const;
  int skip_count() const;

  ParamRegistry& params() { return reg_; }
  const ParamRegistry& params() const { return reg_; }
  const ModelConfig& config() const { return cfg_; }
  const std::vector<LevelSpec>& levels() const { return levels_; }

  // block factories; exposed for block-level tests
  BottleneckBlock make_bottleneck_block(const std::string& name, std::int64_t in_ch,
                                        std::int64_t reduce_ch, int stride, bool level_first);
  DecoderBlock make_decoder_block(const std::string& name, std::int64_t in_ch,
                                  std::int64_t out_ch);
  Var bottleneck_forward(Tape& t, BottleneckBlock& b, const Var& x, Mode mode);
  Var decoder_forward(Tape& t, DecoderBlock& b, const Var& x, Mode mode);

 private:
  ModelGraph() = default;
  ConvParams make_conv(const std::string& name, std::int64_t out_ch, std::int64_t in_ch,
                       std::int64_t k, int stride, PaddingMode pad);
  ConvParams make_tconv(const std::string& name, std::int64_t in_ch, std::int64_t out_ch);
  BatchNormParams make_bn(const std::string& name, std::int64_t channels);
  void init_params();

  ModelConfig cfg_;
  ParamRegistry reg_;
  std::vector<LevelSpec> levels_;
  std::vector<std::vector<BottleneckBlock>> encoder_;  // levels 1..5
  std::vector<BottleneckBlock> bridge_;
  std::vector<ConvParams> tconvs_;      // decoder order: level 5 down to 1
  std::vector<DecoderBlock> decoder_;   // same order
  ConvParams head_;
};

// spec-facing builder
ModelGraph build_drunet104(std::int64_t in_channels = 4, std::int64_t n_class = 4,
                           real_t dropout_rate = real_t(0.2), std::uint64_t seed = 0);

// Checkpoint container: magic "DRU104\0", version, model config, then named
// records (id string, 4-d shape, little-endian float32 data). Bit-exact round
// trip. Extra records carry optimizer state for mid-training resume.
struct CheckpointExtra {
  std::string name;
  Tensor4 data;
};

void save_checkpoint(const ModelGraph& model, const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor4*>>& extra = {});
ModelGraph load_checkpoint(const std::string& path,
                           std::vector<CheckpointExtra>* extra_out = nullptr);

}  // namespace dru
