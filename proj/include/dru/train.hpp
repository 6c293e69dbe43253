#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dru/model.hpp"
#include "dru/volume.hpp"

namespace dru {

// Sparse categorical cross entropy over logits: -(1/N) sum log p[label],
// N = n*h*w, computed through log-softmax with a 1e-12 probability floor.
Var sparse_ce_loss(Tape& t, const Var& logits, const LabelMap& labels);

struct AdamConfig {
  real_t learning_rate = real_t(1e-4);
  real_t beta1 = real_t(0.9);
  real_t beta2 = real_t(0.999);
  real_t epsilon = real_t(1e-8);
};

// Adam over the registry's trainable parameters. Moment arrays mirror the
// parameters; the step count drives bias correction.
class Adam {
 public:
  explicit Adam(ParamRegistry& reg, AdamConfig cfg = {});

  void step();  // applies registry grads, advances t by exactly 1
  std::uint64_t step_count() const { return t_; }
  AdamConfig& config() { return cfg_; }

  // moment/step records for checkpoint resume ("adam." prefix)
  std::vector<std::pair<std::string, const Tensor4*>> state_records() const;
  void load_state(const std::vector<CheckpointExtra>& extra);

 private:
  ParamRegistry* reg_;
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<Parameter*> targets_;
  std::vector<Tensor4> m_, v_;
  mutable Tensor4 t_record_{Shape4{1, 1, 1, 1}};
};

// One training example: network-ready image (1, C, h, w) and its label map
// with contiguous internal classes.
struct TrainSlice {
  Tensor4 image;
  LabelMap label;
  std::string subject_id;
  int slice_index = 0;
};

struct TrainConfig {
  std::int64_t batch_size = 10;
  std::int64_t epochs = 50;
  real_t learning_rate = real_t(1e-4);
  bool augment_flips = true;
  std::uint64_t seed = 0;
  // seed-stream offset so a run resumed from a checkpoint at this epoch
  // reproduces the uninterrupted run
  std::int64_t first_epoch = 0;
  std::string checkpoint_path;  // written after the last epoch when non-empty
  std::string loss_csv_path;    // per-epoch history (epoch, mean_loss)
  std::function<void(const struct EpochStats&)> on_epoch;  // progress hook
};

struct EpochStats {
  std::int64_t epoch;
  double mean_loss;
};

// Seeded per-epoch visiting order; always a permutation of 0..n-1.
std::vector<std::size_t> epoch_order(std::size_t dataset_size, std::uint64_t seed,
                                     std::int64_t epoch);

// Shuffles each epoch (seeded), batches, optionally augments, and runs
// forward / loss / backward / Adam. Aborts with a diagnostic on NaN loss.
std::vector<EpochStats> train(ModelGraph& model, const std::vector<TrainSlice>& dataset,
                              const TrainConfig& cfg, Adam* opt = nullptr);

// Flips each batch item left-right and up-down, independently with
// probability 0.5; image and label receive the identical flip.
void augment_flip(Tensor4& images, LabelMap& labels, Rng& rng);

// Infer-mode prediction over an ordered slice stack; argmax per pixel,
// stacked along depth, internal classes remapped to external labels.
VolumeU8 predict_volume(ModelGraph& model, const std::vector<Tensor4>& slices,
                        std::int64_t batch_size = 10);

void write_loss_csv(const std::string& path, const std::vector<EpochStats>& history);

}  // namespace dru
