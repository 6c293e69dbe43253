#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <limits>
#include <set>

#include "dru/train.hpp"
#include "oracles.hpp"

using namespace dru;

namespace {

// 10 synthetic 4-channel slices with concentric "tumor" disks; intensities
// correlate with the labels so the task is learnable
std::vector<TrainSlice> synthetic_slices(std::int64_t count, std::int64_t hw, std::uint64_t seed) {
  std::vector<TrainSlice> out;
  Rng rng(seed);
  for (std::int64_t s = 0; s < count; ++s) {
    TrainSlice ts;
    ts.subject_id = "syn";
    ts.slice_index = static_cast<int>(s);
    ts.image = Tensor4({1, 4, hw, hw});
    ts.label = LabelMap(1, hw, hw);
    const double cy = rng.uniform(hw * 0.3, hw * 0.7);
    const double cx = rng.uniform(hw * 0.3, hw * 0.7);
    const double r_core = rng.uniform(hw * 0.06, hw * 0.12);
    const double r_tc = r_core + rng.uniform(hw * 0.04, hw * 0.08);
    const double r_wt = r_tc + rng.uniform(hw * 0.06, hw * 0.12);
    for (std::int64_t y = 0; y < hw; ++y) {
      for (std::int64_t x = 0; x < hw; ++x) {
        const double d = std::sqrt((y - cy) * (y - cy) + (x - cx) * (x - cx));
        std::int32_t cls = 0;
        if (d < r_core) cls = 3;       // enhancing (external 4)
        else if (d < r_tc) cls = 1;    // core
        else if (d < r_wt) cls = 2;    // oedema
        ts.label.at(0, y, x) = cls;
        const double noise = 0.1 * rng.normal();
        ts.image.at(0, 0, y, x) = real_t((cls != 0 ? 0.8 : -0.4) + noise);
        ts.image.at(0, 1, y, x) = real_t((cls == 1 || cls == 3 ? 0.9 : -0.3) + noise);
        ts.image.at(0, 2, y, x) = real_t((cls == 3 ? 1.0 : -0.5) + noise);
        ts.image.at(0, 3, y, x) = real_t((cls == 2 ? 0.7 : -0.2) + noise);
      }
    }
    out.push_back(std::move(ts));
  }
  return out;
}

}  // namespace

TEST_CASE("sparse_ce_loss: uniform logits give ln C, perfect prediction gives 0") {
  Tape t(false);
  {
    Tensor4 logits({1, 2, 1, 1});
    LabelMap labels(1, 1, 1);
    const Tensor4 loss = *sparse_ce_loss(t, Tape::detached(logits), labels).value;
    CHECK(loss.data()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  }
  {
    Tensor4 logits({2, 3, 2, 2});
    LabelMap labels(2, 2, 2);
    for (std::int64_t n = 0; n < 2; ++n) {
      for (std::int64_t i = 0; i < 4; ++i) {
        labels.v[n * 4 + i] = static_cast<std::int32_t>((n + i) % 3);
        logits.plane(n, 0)[labels.v[n * 4 + i] * 4 + i] = real_t(60);  // prob ~ 1
      }
    }
    const Tensor4 loss = *sparse_ce_loss(t, Tape::detached(logits), labels).value;
    CHECK(loss.data()[0] >= real_t(0));
    CHECK(loss.data()[0] < real_t(1e-6));
  }
}

TEST_CASE("sparse_ce_loss matches the one-hot literal oracle") {
  const Tensor4 logits = oracle::randn({2, 4, 3, 3}, 31, 2.0);
  LabelMap labels(2, 3, 3);
  Rng rng(32);
  for (auto& v : labels.v) v = static_cast<std::int32_t>(rng.below(4));
  Tape t(false);
  const Tensor4 loss = *sparse_ce_loss(t, Tape::detached(logits), labels).value;
  CHECK(std::abs(double(loss.data()[0]) - oracle::ce_loss_onehot(logits, labels)) < 1e-6);
}

TEST_CASE("sparse_ce_loss names the offending pixel for bad labels") {
  Tensor4 logits({1, 3, 2, 2});
  LabelMap labels(1, 2, 2);
  labels.at(0, 1, 0) = 7;
  Tape t(false);
  try {
    sparse_ce_loss(t, Tape::detached(logits), labels);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("label 7") != std::string::npos);
    CHECK(msg.find("h=1") != std::string::npos);
    CHECK(msg.find("w=0") != std::string::npos);
  }
}

TEST_CASE("adam: zero gradients leave parameters unchanged but advance t") {
  ParamRegistry reg;
  Parameter& p = reg.create("p", {1, 1, 2, 2});
  p.value = oracle::randn({1, 1, 2, 2}, 41);
  const Tensor4 before = p.value;
  Adam opt(reg, AdamConfig{real_t(0.1)});
  reg.zero_grads();
  opt.step();
  CHECK(opt.step_count() == 1);
  CHECK(std::memcmp(before.data(), p.value.data(), 4 * sizeof(real_t)) == 0);
}

TEST_CASE("adam: first step with constant gradient is about -lr * sign(g)") {
  ParamRegistry reg;
  Parameter& p = reg.create("p", {1, 1, 1, 4});
  Adam opt(reg, AdamConfig{real_t(0.01)});
  const real_t gs[4] = {real_t(3), real_t(-0.5), real_t(7), real_t(-0.002)};
  for (int i = 0; i < 4; ++i) p.grad.data()[i] = gs[i];
  opt.step();
  for (int i = 0; i < 4; ++i) {
    const double sign = gs[i] > 0 ? 1.0 : -1.0;
    CHECK(double(p.value.data()[i]) == doctest::Approx(-0.01 * sign).epsilon(1e-3));
  }
}

TEST_CASE("adam: scale awareness — 10x gradients barely change the first step") {
  auto first_step = [](real_t g0) {
    ParamRegistry reg;
    Parameter& p = reg.create("p", {1, 1, 1, 1});
    Adam opt(reg, AdamConfig{real_t(0.01)});
    p.grad.data()[0] = g0;
    opt.step();
    return double(p.value.data()[0]);
  };
  const double u1 = first_step(real_t(0.5));
  const double u10 = first_step(real_t(5.0));
  CHECK(std::abs(u1 - u10) / std::abs(u1) < 0.01);
}

TEST_CASE("adam: drives a quadratic to its minimum") {
  // f(x) = x^2, grad = 2x, lr = 0.1, 200 steps from x = 1
  ParamRegistry reg;
  Parameter& p = reg.create("x", {1, 1, 1, 1});
  p.value.data()[0] = real_t(1);
  Adam opt(reg, AdamConfig{real_t(0.1)});
  for (int i = 0; i < 200; ++i) {
    p.grad.data()[0] = 2 * p.value.data()[0];
    opt.step();
  }
  CHECK(std::abs(double(p.value.data()[0])) < 1e-2);
}

TEST_CASE("augment_flip: involution, pairing and frequency") {
  {
    // a seed whose draws decline both flips leaves the batch untouched
    std::uint64_t quiet_seed = 0;
    for (;; ++quiet_seed) {
      Rng probe(quiet_seed);
      const bool lr_flip = probe.bernoulli(0.5);
      const bool ud_flip = probe.bernoulli(0.5);
      if (!lr_flip && !ud_flip) break;
    }
    Tensor4 img = oracle::randn({1, 2, 4, 4}, 50);
    LabelMap lab(1, 4, 4);
    const Tensor4 img0 = img;
    Rng rng(quiet_seed);
    augment_flip(img, lab, rng);
    CHECK(std::memcmp(img.data(), img0.data(), img.numel() * sizeof(real_t)) == 0);
  }
  {
    // the same rng stream applied twice restores the batch
    Tensor4 img = oracle::randn({3, 2, 5, 6}, 51);
    LabelMap lab(3, 5, 6);
    Rng lr(52);
    for (auto& v : lab.v) v = static_cast<std::int32_t>(lr.below(4));
    const Tensor4 img0 = img;
    const LabelMap lab0 = lab;
    Rng r1(99), r2(99);
    augment_flip(img, lab, r1);
    augment_flip(img, lab, r2);
    CHECK(std::memcmp(img.data(), img0.data(), img.numel() * sizeof(real_t)) == 0);
    CHECK(lab.v == lab0.v);
  }
  {
    // image and label receive the identical flip
    Tensor4 img({1, 1, 2, 2});
    img.at(0, 0, 0, 0) = real_t(1);
    LabelMap lab(1, 2, 2);
    lab.at(0, 0, 0) = 4;
    for (std::uint64_t seed = 0; seed < 16; ++seed) {
      Tensor4 i2 = img;
      LabelMap l2 = lab;
      Rng rng(seed);
      augment_flip(i2, l2, rng);
      for (std::int64_t y = 0; y < 2; ++y) {
        for (std::int64_t x = 0; x < 2; ++x) {
          CHECK((i2.at(0, 0, y, x) == real_t(1)) == (l2.at(0, y, x) == 4));
        }
      }
    }
  }
  {
    // each axis flips 50% +- 2% over 10^4 draws
    std::int64_t lr_flips = 0, ud_flips = 0;
    const std::int64_t trials = 10000;
    Tensor4 img({1, 1, 2, 2});
    img.at(0, 0, 0, 0) = real_t(1);
    LabelMap lab(1, 2, 2);
    Rng rng(7);
    for (std::int64_t i = 0; i < trials; ++i) {
      Tensor4 i2 = img;
      LabelMap l2 = lab;
      augment_flip(i2, l2, rng);
      const bool lr_f = i2.at(0, 0, 0, 1) == real_t(1) || i2.at(0, 0, 1, 1) == real_t(1);
      const bool ud_f = i2.at(0, 0, 1, 0) == real_t(1) || i2.at(0, 0, 1, 1) == real_t(1);
      lr_flips += lr_f;
      ud_flips += ud_f;
    }
    CHECK(std::abs(double(lr_flips) / trials - 0.5) < 0.02);
    CHECK(std::abs(double(ud_flips) / trials - 0.5) < 0.02);
  }
}

TEST_CASE("epoch_order is a seeded permutation that varies by epoch") {
  const auto o1 = epoch_order(97, 5, 0);
  const auto o2 = epoch_order(97, 5, 0);
  const auto o3 = epoch_order(97, 5, 1);
  CHECK(o1 == o2);
  CHECK(o1 != o3);
  std::set<std::size_t> seen(o1.begin(), o1.end());
  CHECK(seen.size() == 97);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 96);
}

TEST_CASE("train: empty dataset and mixed dims are rejected") {
  ModelGraph m = ModelGraph::build(ModelConfig{4, 4, real_t(0.2), 8, 1});
  TrainConfig cfg;
  CHECK_THROWS_AS(train(m, {}, cfg), DataError);
}

TEST_CASE("train: non-finite loss aborts naming the batch") {
  ModelGraph m = ModelGraph::build(ModelConfig{4, 4, real_t(0.2), 8, 14});
  // poisoned parameter: logits and loss go NaN on the first batch
  m.params().find("head.b")->value.data()[0] = std::numeric_limits<real_t>::quiet_NaN();
  auto data = synthetic_slices(2, 32, 65);
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.epochs = 1;
  cfg.augment_flips = false;
  try {
    train(m, data, cfg);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("batch 0") != std::string::npos);
  }
}

TEST_CASE("train: lr 0 leaves trainable parameters bit-identical") {
  ModelGraph m = ModelGraph::build(ModelConfig{4, 4, real_t(0.2), 8, 2});
  std::vector<Tensor4> before;
  for (const auto& p : m.params().items()) {
    if (p->trainable) before.push_back(p->value);
  }
  auto data = synthetic_slices(4, 32, 60);
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.epochs = 1;
  cfg.learning_rate = real_t(0);
  cfg.augment_flips = false;
  cfg.seed = 3;
  train(m, data, cfg);
  std::size_t i = 0;
  bool all_equal = true;
  for (const auto& p : m.params().items()) {
    if (!p->trainable) continue;
    all_equal = all_equal && std::memcmp(before[i].data(), p->value.data(),
                                         p->value.numel() * sizeof(real_t)) == 0;
    ++i;
  }
  CHECK(all_equal);
  // BN running statistics did move
  const Parameter* rm = m.params().find("enc.l1.b0.bn1.rmean");
  bool moved = false;
  for (std::int64_t k = 0; k < rm->value.numel(); ++k) {
    moved = moved || rm->value.data()[k] != real_t(0);
  }
  CHECK(moved);
}

TEST_CASE("train: identical seeds give identical loss histories") {
  auto run = [] {
    ModelGraph m = ModelGraph::build(ModelConfig{4, 4, real_t(0.2), 8, 4});
    auto data = synthetic_slices(6, 32, 61);
    TrainConfig cfg;
    cfg.batch_size = 3;
    cfg.epochs = 3;
    cfg.seed = 11;
    return train(m, data, cfg);
  };
  const auto h1 = run();
  const auto h2 = run();
  REQUIRE(h1.size() == h2.size());
  for (std::size_t i = 0; i < h1.size(); ++i) {
    CHECK(h1[i].mean_loss == h2[i].mean_loss);
  }
}

TEST_CASE("train: overfits 10 synthetic slices and reproduces their labels") {
  // dropout off and a hot learning rate: this is the memorization smoke test
  ModelGraph m = ModelGraph::build(ModelConfig{4, 4, real_t(0), 8, 5});
  auto data = synthetic_slices(10, 32, 62);
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.epochs = 200;
  cfg.learning_rate = real_t(1e-3);
  cfg.augment_flips = false;
  cfg.seed = 12;
  const auto history = train(m, data, cfg);
  REQUIRE(history.size() == 200);
  CHECK(history.back().mean_loss < 0.05);
  CHECK(history.back().mean_loss < history.front().mean_loss);

  // the overfit model reproduces the training labels well (per-pixel)
  std::vector<Tensor4> inputs;
  for (const auto& ts : data) inputs.push_back(ts.image);
  const VolumeU8 pred = predict_volume(m, inputs, 5);
  std::int64_t agree = 0, total = 0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    for (std::int64_t i = 0; i < 32 * 32; ++i) {
      const std::uint8_t want = label_to_external(data[s].label.v[i]);
      agree += (pred.v[s * 32 * 32 + i] == want);
      ++total;
    }
  }
  CHECK(double(agree) / double(total) > 0.95);
}

TEST_CASE("train: checkpoint round trip resumes bit-identically") {
  namespace fs = std::filesystem;
  const std::string ckpt = (fs::temp_directory_path() / "dru_resume_test.bin").string();
  auto data = synthetic_slices(6, 32, 63);

  TrainConfig base;
  base.batch_size = 3;
  base.epochs = 2;
  base.augment_flips = true;
  base.seed = 21;

  // uninterrupted: 4 epochs straight
  ModelGraph a = ModelGraph::build(ModelConfig{4, 4, real_t(0.2), 8, 6});
  Adam opt_a(a.params(), AdamConfig{base.learning_rate});
  TrainConfig cfg_a = base;
  cfg_a.epochs = 4;
  train(a, data, cfg_a, &opt_a);

  // interrupted: 2 epochs, checkpoint with optimizer state, reload, 2 more
  ModelGraph b0 = ModelGraph::build(ModelConfig{4, 4, real_t(0.2), 8, 6});
  Adam opt_b0(b0.params(), AdamConfig{base.learning_rate});
  TrainConfig cfg_b = base;
  train(b0, data, cfg_b, &opt_b0);
  save_checkpoint(b0, ckpt, opt_b0.state_records());

  std::vector<CheckpointExtra> extra;
  ModelGraph b = load_checkpoint(ckpt, &extra);
  Adam opt_b(b.params(), AdamConfig{base.learning_rate});
  opt_b.load_state(extra);
  CHECK(opt_b.step_count() == opt_b0.step_count());
  TrainConfig cfg_b2 = base;
  cfg_b2.first_epoch = 2;
  train(b, data, cfg_b2, &opt_b);

  for (std::size_t i = 0; i < a.params().items().size(); ++i) {
    const auto& pa = *a.params().items()[i];
    const auto& pb = *b.params().items()[i];
    REQUIRE(pa.name == pb.name);
    CHECK(std::memcmp(pa.value.data(), pb.value.data(), pa.value.numel() * sizeof(real_t)) == 0);
  }
  fs::remove(ckpt);
}

TEST_CASE("predict_volume: uniform logits fall back to class 0, dims stack") {
  ModelGraph m = ModelGraph::build(ModelConfig{4, 4, real_t(0.2), 8, 7});
  // force uniform logits: zero head weights and bias
  m.params().find("head.w")->value.zero();
  m.params().find("head.b")->value.zero();
  std::vector<Tensor4> slices;
  for (int i = 0; i < 5; ++i) slices.push_back(oracle::randn({1, 4, 32, 32}, 70 + i));
  const VolumeU8 vol = predict_volume(m, slices, 2);
  CHECK(vol.depth == 5);
  CHECK(vol.h == 32);
  CHECK(vol.w == 32);
  for (std::uint8_t v : vol.v) CHECK(v == 0);  // argmax tie-break

  CHECK_THROWS_AS(predict_volume(m, {}, 2), DataError);
}
