#include "dru/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "dru/kernels.hpp"
#include "dru/metrics.hpp"
#include "dru/slice_io.hpp"
#include "dru/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dru {
namespace {

struct CommonFlags {
  std::uint64_t seed = 0;
  bool deterministic = false;
};

std::string fnv1a_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot hash '" + path + "'");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    const std::streamsize got = is.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
    if (got < static_cast<std::streamsize>(sizeof(buf))) break;
  }
  char out[19];
  std::snprintf(out, sizeof(out), "0x%016llx", static_cast<unsigned long long>(h));
  return out;
}

void write_manifest(const std::string& path, const json& body) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest '" + path + "'");
  os << body.dump(2) << "\n";
}

std::vector<std::string> list_subject_dirs(const std::string& root) {
  if (!fs::is_directory(root)) throw DataError("'" + root + "' is not a directory");
  std::vector<std::string> subjects;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) subjects.push_back(e.path().filename().string());
  }
  std::sort(subjects.begin(), subjects.end());
  return subjects;
}

void apply_determinism(const CommonFlags& common) {
  if (common.deterministic) kern::set_backend(kern::Backend::scalar);
}

// ---------------------------------------------------------------- preprocess

int cmd_preprocess(const std::string& raw_root, const std::string& out_root,
                   const CommonFlags& common) {
  apply_determinism(common);
  const std::vector<std::string> subjects = list_subject_dirs(raw_root);
  if (subjects.empty()) throw DataError("no subject directories under '" + raw_root + "'");

  int ok = 0, failed = 0;
  json manifest_subjects = json::array();
  for (const std::string& subject : subjects) {
    const fs::path sdir = fs::path(raw_root) / subject;
    try {
      VolumeStack stack;
      stack.subject_id = subject;
      for (int m = 0; m < 4; ++m) {
        const fs::path vp = sdir / (std::string(kModalityNames[m]) + ".vol");
        if (!fs::exists(vp)) {
          throw DataError("missing modality file '" + std::string(kModalityNames[m]) +
                          ".vol' for subject " + subject);
        }
        stack.modalities[m] = read_volume_f32(vp.string());
      }
      const fs::path segp = sdir / "seg.vol";
      if (fs::exists(segp)) stack.labels = read_volume_u8(segp.string());

      json stats_json;
      for (int m = 0; m < 4; ++m) {
        const NormalizationStats st = compute_norm_stats(stack.modalities[m]);
        stats_json[kModalityNames[m]] = {{"mean", st.mean}, {"sd", st.sd}};
      }

      const fs::path odir = fs::path(out_root) / subject;
      fs::create_directories(odir);
      const std::vector<SliceSample> slices = volume_to_slices(stack);
      for (const SliceSample& s : slices) write_slice(s, odir.string());

      std::ofstream stats_os(odir / (subject + "_stats.json"));
      stats_os << stats_json.dump(2) << "\n";
      manifest_subjects.push_back(subject);
      std::fprintf(stderr, "[preprocess] %s: %zu slices\n", subject.c_str(), slices.size());
      ++ok;
    } catch (const DataError& e) {
      std::fprintf(stderr, "[preprocess] skipping %s: %s\n", subject.c_str(), e.what());
      ++failed;
    }
  }
  if (ok == 0) throw DataError("preprocess: every subject failed");

  json manifest = {{"command", "preprocess"},
                   {"data_root", raw_root},
                   {"out", out_root},
                   {"seed", common.seed},
                   {"deterministic", common.deterministic},
                   {"subjects", manifest_subjects},
                   {"skipped_count", failed}};
  write_manifest((fs::path(out_root) / "manifest.json").string(), manifest);
  return 0;
}

// --------------------------------------------------------------------- train

struct TrainFlags {
  std::int64_t epochs = 50;
  std::int64_t batch = 10;
  double lr = 1e-4;
  double dropout = 0.2;
  bool no_augment = false;
  std::int64_t width_div = 1;
};

int cmd_train(const std::string& slice_root, const std::string& out_dir,
              const std::string& checkpoint, const CommonFlags& common, const TrainFlags& tf) {
  apply_determinism(common);
  fs::create_directories(out_dir);

  std::vector<TrainSlice> dataset;
  for (const std::string& subject : list_subject_dirs(slice_root)) {
    const fs::path sdir = fs::path(slice_root) / subject;
    if (!fs::exists(sdir / slice_mask_name(subject, 0))) {
      std::fprintf(stderr, "[train] %s has no masks, skipping\n", subject.c_str());
      continue;
    }
    for (SliceSample& s : read_subject_slices(sdir.string(), subject, /*with_labels=*/true)) {
      TrainSlice ts;
      ts.image = slice_to_input(s);
      ts.label = slice_label_internal(s);
      ts.subject_id = s.subject_id;
      ts.slice_index = s.slice_index;
      dataset.push_back(std::move(ts));
    }
  }
  if (dataset.empty()) throw DataError("train: no labeled slices found under '" + slice_root + "'");

  ModelConfig mc;
  mc.dropout_rate = static_cast<real_t>(tf.dropout);
  mc.width_div = tf.width_div;
  mc.seed = common.seed;
  ModelGraph model = ModelGraph::build(mc);

  TrainConfig cfg;
  cfg.batch_size = tf.batch;
  cfg.epochs = tf.epochs;
  cfg.learning_rate = static_cast<real_t>(tf.lr);
  cfg.augment_flips = !tf.no_augment;
  cfg.seed = common.seed;
  cfg.checkpoint_path = checkpoint;
  cfg.loss_csv_path = (fs::path(out_dir) / "loss.csv").string();
  cfg.on_epoch = [](const EpochStats& e) {
    std::fprintf(stderr, "[train] epoch %lld mean_loss %.6f\n", static_cast<long long>(e.epoch),
                 e.mean_loss);
  };
  train(model, dataset, cfg);

  json manifest = {{"command", "train"},
                   {"data_root", slice_root},
                   {"out", out_dir},
                   {"checkpoint", checkpoint},
                   {"epochs", tf.epochs},
                   {"batch", tf.batch},
                   {"lr", tf.lr},
                   {"dropout", tf.dropout},
                   {"width_div", tf.width_div},
                   {"augment", !tf.no_augment},
                   {"seed", common.seed},
                   {"deterministic", common.deterministic},
                   {"backend", common.deterministic ? "scalar" : "auto"},
                   {"slices", dataset.size()},
                   {"checkpoint_fnv1a", fnv1a_file(checkpoint)}};
  write_manifest((fs::path(out_dir) / "manifest.json").string(), manifest);
  return 0;
}

// ------------------------------------------------------------------- predict

int cmd_predict(const std::string& checkpoint, const std::string& slice_root,
                const std::string& out_root, std::int64_t batch, const CommonFlags& common) {
  apply_determinism(common);
  ModelGraph model = load_checkpoint(checkpoint);
  fs::create_directories(out_root);

  json manifest_subjects = json::array();
  for (const std::string& subject : list_subject_dirs(slice_root)) {
    const fs::path sdir = fs::path(slice_root) / subject;
    std::vector<SliceSample> slices =
        read_subject_slices(sdir.string(), subject, /*with_labels=*/false);
    std::vector<Tensor4> inputs;
    inputs.reserve(slices.size());
    for (const SliceSample& s : slices) inputs.push_back(slice_to_input(s));
    const VolumeU8 vol = predict_volume(model, inputs, batch);
    write_volume((fs::path(out_root) / (subject + ".vol")).string(), subject, vol);
    manifest_subjects.push_back(subject);
    std::fprintf(stderr, "[predict] %s: %lld slices -> volume\n", subject.c_str(),
                 static_cast<long long>(vol.depth));
  }
  if (manifest_subjects.empty()) {
    throw DataError("predict: no subjects under '" + slice_root + "'");
  }

  json manifest = {{"command", "predict"},
                   {"checkpoint", checkpoint},
                   {"checkpoint_fnv1a", fnv1a_file(checkpoint)},
                   {"data_root", slice_root},
                   {"out", out_root},
                   {"batch", batch},
                   {"seed", common.seed},
                   {"deterministic", common.deterministic},
                   {"subjects", manifest_subjects}};
  write_manifest((fs::path(out_root) / "manifest.json").string(), manifest);
  return 0;
}

// ------------------------------------------------------------------ evaluate

// label volumes live either at <root>/<subject>.vol or <root>/<subject>/seg.vol
std::set<std::string> discover_label_volumes(const std::string& root) {
  std::set<std::string> subjects;
  if (!fs::is_directory(root)) throw DataError("'" + root + "' is not a directory");
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_regular_file() && e.path().extension() == ".vol") {
      subjects.insert(e.path().stem().string());
    } else if (e.is_directory() && fs::exists(e.path() / "seg.vol")) {
      subjects.insert(e.path().filename().string());
    }
  }
  return subjects;
}

VolumeU8 read_label_volume(const std::string& root, const std::string& subject) {
  const fs::path flat = fs::path(root) / (subject + ".vol");
  if (fs::exists(flat)) return read_volume_u8(flat.string());
  return read_volume_u8((fs::path(root) / subject / "seg.vol").string());
}

int cmd_evaluate(const std::string& pred_root, const std::string& truth_root,
                 const std::string& out_csv, const CommonFlags& common) {
  apply_determinism(common);
  const std::set<std::string> pred_subjects = discover_label_volumes(pred_root);
  const std::set<std::string> truth_subjects = discover_label_volumes(truth_root);

  std::vector<std::string> both;
  std::vector<std::pair<std::string, std::string>> skipped;
  for (const auto& s : pred_subjects) {
    if (truth_subjects.count(s)) both.push_back(s);
    else skipped.emplace_back(s, "pred_only");
  }
  for (const auto& s : truth_subjects) {
    if (!pred_subjects.count(s)) skipped.emplace_back(s, "truth_only");
  }
  if (both.empty()) throw DataError("evaluate: no overlapping subjects between roots");

  std::vector<MetricsReport> reports;
  for (const std::string& subject : both) {
    const VolumeU8 pred = read_label_volume(pred_root, subject);
    const VolumeU8 truth = read_label_volume(truth_root, subject);
    reports.push_back(evaluate_case(pred, truth, subject));
    std::fprintf(stderr, "[evaluate] %s done\n", subject.c_str());
  }
  const CohortSummary summary = aggregate(reports);
  write_report_csv(out_csv, reports, summary, skipped);

  json manifest = {{"command", "evaluate"},
                   {"pred_root", pred_root},
                   {"truth_root", truth_root},
                   {"out", out_csv},
                   {"seed", common.seed},
                   {"deterministic", common.deterministic},
                   {"cases", reports.size()},
                   {"skipped", skipped.size()}};
  write_manifest(out_csv + ".manifest.json", manifest);
  return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
  CLI::App app{"DR-Unet104 brain-lesion segmentation pipeline"};
  app.require_subcommand(1);

  CommonFlags common;
  std::string data_root, out, checkpoint, pred_root, truth_root;
  TrainFlags tf;
  std::int64_t predict_batch = 10;

  auto add_common = [&common](CLI::App* cmd) {
    cmd->add_option("--seed", common.seed, "base RNG seed");
    cmd->add_flag("--deterministic", common.deterministic,
                  "force the scalar sequential kernels for bit-reproducible runs");
  };

  CLI::App* pre = app.add_subcommand("preprocess", "standardize raw volumes into slice PNGs");
  pre->add_option("--data-root", data_root, "raw volume root (one directory per subject)")
      ->required();
  pre->add_option("--out", out, "output slice root")->required();
  add_common(pre);

  CLI::App* tr = app.add_subcommand("train", "train on labeled slice directories");
  tr->add_option("--data-root", data_root, "slice root produced by preprocess")->required();
  tr->add_option("--out", out, "output directory (loss.csv, manifest.json)")->required();
  tr->add_option("--checkpoint", checkpoint, "checkpoint file to write")->required();
  tr->add_option("--epochs", tf.epochs, "training epochs (default 50)");
  tr->add_option("--batch", tf.batch, "batch size (default 10)");
  tr->add_option("--lr", tf.lr, "Adam learning rate (default 1e-4)");
  tr->add_option("--dropout", tf.dropout, "dropout rate after each level (default 0.2)");
  tr->add_option("--width-div", tf.width_div, "divide all block widths (desk-scale runs)");
  tr->add_flag("--no-augment", tf.no_augment, "disable random flips");
  add_common(tr);

  CLI::App* pr = app.add_subcommand("predict", "reconstruct label volumes for slice directories");
  pr->add_option("--checkpoint", checkpoint, "checkpoint file to load")->required();
  pr->add_option("--data-root", data_root, "slice root")->required();
  pr->add_option("--out", out, "output volume directory")->required();
  pr->add_option("--batch", predict_batch, "inference batch size");
  add_common(pr);

  CLI::App* ev = app.add_subcommand("evaluate", "per-case + cohort metrics report");
  ev->add_option("--pred-root", pred_root, "predicted label volumes")->required();
  ev->add_option("--truth-root", truth_root, "ground-truth label volumes")->required();
  ev->add_option("--out", out, "report CSV path")->required();
  add_common(ev);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);  // CLI11 consumes reversed argument vectors
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (pre->parsed()) return cmd_preprocess(data_root, out, common);
    if (tr->parsed()) return cmd_train(data_root, out, checkpoint, common, tf);
    if (pr->parsed()) return cmd_predict(checkpoint, data_root, out, predict_batch, common);
    if (ev->parsed()) return cmd_evaluate(pred_root, truth_root, out, common);
    return 1;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 3;
  }
}

}  // namespace dru
