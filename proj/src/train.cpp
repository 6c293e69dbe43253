#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "dru/kernels.hpp"
#include "dru/train.hpp"

namespace dru {

using kern::i64;

Adam::Adam(ParamRegistry& reg, AdamConfig cfg) : reg_(&reg), cfg_(cfg) {
  for (auto& p : reg.items()) {
    if (!p->trainable) continue;
    targets_.push_back(p.get());
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(double(cfg_.beta1), double(t_));
  const double bc2 = 1.0 - std::pow(double(cfg_.beta2), double(t_));
  const real_t inv_bc1 = static_cast<real_t>(1.0 / bc1);
  const real_t inv_bc2 = static_cast<real_t>(1.0 / bc2);
  const auto& K = kern::active();
  for (std::size_t i = 0; i < targets_.size(); ++i) {
    Parameter* p = targets_[i];
    K.adam_step(p->value.numel(), p->value.data(), p->grad.data(), m_[i].data(), v_[i].data(),
                cfg_.learning_rate, cfg_.beta1, cfg_.beta2, cfg_.epsilon, inv_bc1, inv_bc2);
  }
}

std::vector<std::pair<std::string, const Tensor4*>> Adam::state_records() const {
  std::vector<std::pair<std::string, const Tensor4*>> out;
  t_record_.data()[0] = static_cast<real_t>(t_);
  out.emplace_back("adam.t", &t_record_);
  for (std::size_t i = 0; i < targets_.size(); ++i) {
    out.emplace_back("adam.m." + targets_[i]->name, &m_[i]);
    out.emplace_back("adam.v." + targets_[i]->name, &v_[i]);
  }
  return out;
}

void Adam::load_state(const std::vector<CheckpointExtra>& extra) {
  bool any = false;
  for (const auto& e : extra) {
    if (e.name.rfind("adam.", 0) == 0) {
      any = true;
      break;
    }
  }
  if (!any) return;  // fresh optimizer

  auto find = [&extra](const std::string& name) -> const CheckpointExtra* {
    for (const auto& e : extra) {
      if (e.name == name) return &e;
    }
    return nullptr;
  };
  const CheckpointExtra* tr = find("adam.t");
  if (!tr) throw FormatError("adam state: missing 'adam.t' record");
  t_ = static_cast<std::uint64_t>(tr->data.data()[0]);
  for (std::size_t i = 0; i < targets_.size(); ++i) {
    const CheckpointExtra* me = find("adam.m." + targets_[i]->name);
    const CheckpointExtra* ve = find("adam.v." + targets_[i]->name);
    if (!me || !ve) {
      throw FormatError("adam state: missing moments for '" + targets_[i]->name + "'");
    }
    if (!(me->data.shape() == m_[i].shape()) || !(ve->data.shape() == v_[i].shape())) {
      throw FormatError("adam state: moment shape mismatch for '" + targets_[i]->name + "'");
    }
    m_[i] = me->data;
    v_[i] = ve->data;
  }
}

void augment_flip(Tensor4& images, LabelMap& labels, Rng& rng) {
  const Shape4 s = images.shape();
  if (labels.n != s.n || labels.h != s.h || labels.w != s.w) {
    throw ShapeError("augment_flip: label map does not match images " + s.str());
  }
  for (i64 n = 0; n < s.n; ++n) {
    const bool flip_lr = rng.bernoulli(0.5);
    const bool flip_ud = rng.bernoulli(0.5);
    if (flip_lr) {
      for (i64 c = 0; c < s.c; ++c) {
        real_t* pl = images.plane(n, c);
        for (i64 y = 0; y < s.h; ++y) std::reverse(pl + y * s.w, pl + (y + 1) * s.w);
      }
      std::int32_t* lp = labels.v.data() + n * s.h * s.w;
      for (i64 y = 0; y < s.h; ++y) std::reverse(lp + y * s.w, lp + (y + 1) * s.w);
    }
    if (flip_ud) {
      for (i64 c = 0; c < s.c; ++c) {
        real_t* pl = images.plane(n, c);
        for (i64 y = 0; y < s.h / 2; ++y) {
          std::swap_ranges(pl + y * s.w, pl + (y + 1) * s.w, pl + (s.h - 1 - y) * s.w);
        }
      }
      std::int32_t* lp = labels.v.data() + n * s.h * s.w;
      for (i64 y = 0; y < s.h / 2; ++y) {
        std::swap_ranges(lp + y * s.w, lp + (y + 1) * s.w, lp + (s.h - 1 - y) * s.w);
      }
    }
  }
}

std::vector<std::size_t> epoch_order(std::size_t dataset_size, std::uint64_t seed,
                                     std::int64_t epoch) {
  std::vector<std::size_t> idx(dataset_size);
  std::iota(idx.begin(), idx.end(), 0);
  // Fisher-Yates with the project Rng, so epoch order is seed-reproducible
  Rng rng(mix_seed(seed, 0x5u, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::swap(idx[i - 1], idx[rng.below(i)]);
  }
  return idx;
}

std::vector<EpochStats> train(ModelGraph& model, const std::vector<TrainSlice>& dataset,
                              const TrainConfig& cfg, Adam* opt) {
  if (dataset.empty()) throw DataError("train: dataset is empty");
  const Shape4 s0 = dataset[0].image.shape();
  for (const auto& sl : dataset) {
    if (!(sl.image.shape() == s0)) {
      throw DataError("train: all slices must share dims; got " + sl.image.shape().str() +
                      " vs " + s0.str());
    }
  }
  if (cfg.batch_size < 1 || cfg.epochs < 1) {
    throw UsageError("train: batch_size and epochs must be >= 1");
  }

  Adam local_opt(model.params(), AdamConfig{cfg.learning_rate});
  Adam* adam = opt ? opt : &local_opt;
  adam->config().learning_rate = cfg.learning_rate;

  const std::size_t N = dataset.size();

  std::vector<EpochStats> history;
  for (i64 e = 0; e < cfg.epochs; ++e) {
    const i64 epoch = cfg.first_epoch + e;
    const std::vector<std::size_t> order = epoch_order(N, cfg.seed, epoch);

    double loss_sum = 0.0;
    i64 batches = 0;
    for (std::size_t start = 0; start < N; start += cfg.batch_size) {
      const std::size_t bsz = std::min<std::size_t>(cfg.batch_size, N - start);
      Tensor4 batch({static_cast<i64>(bsz), s0.c, s0.h, s0.w});
      LabelMap labels(static_cast<i64>(bsz), s0.h, s0.w);
      for (std::size_t b = 0; b < bsz; ++b) {
        const TrainSlice& sl = dataset[order[start + b]];
        std::copy(sl.image.data(), sl.image.data() + sl.image.numel(),
                  batch.plane(static_cast<i64>(b), 0));
        std::copy(sl.label.v.begin(), sl.label.v.end(),
                  labels.v.begin() + static_cast<i64>(b) * s0.h * s0.w);
      }
      const std::uint64_t bi = static_cast<std::uint64_t>(batches);
      if (cfg.augment_flips) {
        Rng flip_rng(mix_seed(cfg.seed, 0xFu, static_cast<std::uint64_t>(epoch), bi));
        augment_flip(batch, labels, flip_rng);
      }

      Tape tape(/*recording=*/true);
      Var x = tape.leaf(std::move(batch));
      Var logits = model.forward(tape, x, Mode::train,
                                 mix_seed(cfg.seed, 0xDu, static_cast<std::uint64_t>(epoch), bi));
      Var loss = sparse_ce_loss(tape, logits, labels);
      const double lv = static_cast<double>(loss.val().data()[0]);
      if (!std::isfinite(lv)) {
        throw DataError("train: non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                        std::to_string(batches));
      }
      model.params().zero_grads();
      tape.backward(loss);
      adam->step();
      loss_sum += lv;
      ++batches;
    }
    history.push_back(EpochStats{epoch, loss_sum / double(batches)});
    if (cfg.on_epoch) cfg.on_epoch(history.back());
  }

  if (!cfg.loss_csv_path.empty()) write_loss_csv(cfg.loss_csv_path, history);
  if (!cfg.checkpoint_path.empty()) {
    save_checkpoint(model, cfg.checkpoint_path, adam->state_records());
  }
  return history;
}

VolumeU8 predict_volume(ModelGraph& model, const std::vector<Tensor4>& slices,
                        std::int64_t batch_size) {
  if (slices.empty()) throw DataError("predict_volume: no slices");
  const Shape4 s0 = slices[0].shape();
  for (const auto& s : slices) {
    if (!(s.shape() == s0)) {
      throw DataError("predict_volume: inconsistent slice dims " + s.shape().str() + " vs " +
                      s0.str());
    }
  }
  const i64 S = static_cast<i64>(slices.size());
  VolumeU8 out(S, s0.h, s0.w);
  for (i64 start = 0; start < S; start += batch_size) {
    const i64 bsz = std::min<i64>(batch_size, S - start);
    Tensor4 batch({bsz, s0.c, s0.h, s0.w});
    for (i64 b = 0; b < bsz; ++b) {
      std::copy(slices[start + b].data(), slices[start + b].data() + slices[start + b].numel(),
                batch.plane(b, 0));
    }
    Tape t(/*recording=*/false);
    Var logits = model.forward(t, Tape::detached(std::move(batch)), Mode::infer);
    LabelMap cls = argmax_channels(logits.val());
    for (i64 b = 0; b < bsz; ++b) {
      std::uint8_t* dst = out.v.data() + (start + b) * s0.h * s0.w;
      const std::int32_t* src = cls.v.data() + b * s0.h * s0.w;
      for (i64 i = 0; i < s0.h * s0.w; ++i) dst[i] = label_to_external(src[i]);
    }
  }
  return out;
}

void write_loss_csv(const std::string& path, const std::vector<EpochStats>& history) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open loss csv '" + path + "' for writing");
  os << "epoch,mean_loss\n";
  char buf[64];
  for (const auto& e : history) {
    std::snprintf(buf, sizeof(buf), "%lld,%.8f\n", static_cast<long long>(e.epoch), e.mean_loss);
    os << buf;
  }
}

}  // namespace dru
