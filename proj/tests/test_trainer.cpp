#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <random>
#include <sstream>

#include "eusseg/trainer.hpp"
#include "fixtures.hpp"

using namespace eusseg;

namespace {

TrainConfig fast_toy_train(std::size_t epochs, std::size_t batch, std::size_t val_every) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.global_batch_size = batch;
  cfg.val_every_epochs = val_every;
  cfg.base_lr = 1e-3;
  cfg.warmup_start_lr = 1e-4;
  cfg.warmup_epochs = std::max<double>(1.0, static_cast<double>(epochs) / 10.0);
  cfg.seed = 7;
  return cfg;
}

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("train_fold validation cadence and checkpointing") {
  fixtures::TempDir tmp("fold");
  const auto manifest_path = fixtures::write_manifest(tmp.path(), fixtures::simple_cases(6));
  const DatasetManifest manifest = load_manifest(manifest_path);
  const auto folds = make_folds(manifest, 3, 1);

  const ModelConfig model_cfg = ModelConfig::toy();
  const TrainConfig train_cfg = fast_toy_train(10, 4, 2);

  TrainFoldOptions options;
  options.fold_dir = tmp.path() / "run" / "fold_0";
  const CheckpointMeta meta = train_fold(folds[0], model_cfg, train_cfg, options);

  SECTION("epochs=10 with val_every=2 gives exactly 5 validation checkpoints") {
    std::size_t checkpoints = 0;
    for (const auto& e : std::filesystem::directory_iterator(options.fold_dir)) {
      if (e.path().extension() == ".ckpt") ++checkpoints;
    }
    REQUIRE(checkpoints == 5);
  }

  SECTION("best checkpoint metadata is well-formed and reproducible") {
    REQUIRE(meta.status == "ok");
    REQUIRE(meta.epoch % 2 == 0);
    REQUIRE(meta.validation_dice >= 0.0);
    REQUIRE(meta.validation_dice <= 1.0);
    REQUIRE(std::filesystem::exists(meta.checkpoint_path));

    // re-evaluating the stored checkpoint reproduces the recorded dice
    const ParameterSet<double> params = load_checkpoint(meta.checkpoint_path);
    std::vector<SegSample> val;
    for (const auto& r : folds[0].val_records) {
      val.push_back(preprocess_sample(r, model_cfg.image_size, model_cfg.image_size));
    }
    REQUIRE(mean_validation_dice(params, val) ==
            Catch::Approx(meta.validation_dice).margin(1e-6));
  }

  SECTION("loss log has one record per step plus a header") {
    // 4 train records, batch 4 -> 1 step per epoch, 10 epochs
    REQUIRE(count_lines(options.fold_dir / "loss_log.csv") == 1 + 10);
    std::ifstream in(options.fold_dir / "loss_log.csv");
    std::string header;
    std::getline(in, header);
    REQUIRE(header == "fold,epoch,step,loss,lr");
  }

  SECTION("fold meta file round trips") {
    const json j = json::parse(read_text_file(options.fold_dir / "fold_meta.json"));
    const CheckpointMeta loaded = checkpoint_meta_from_json(j);
    REQUIRE(loaded.epoch == meta.epoch);
    REQUIRE(loaded.validation_dice == meta.validation_dice);
    REQUIRE(loaded.status == "ok");
  }
}

TEST_CASE("training loss decreases on a small fold") {
  fixtures::TempDir tmp("loss");
  const auto manifest_path = fixtures::write_manifest(tmp.path(), fixtures::simple_cases(4));
  const DatasetManifest manifest = load_manifest(manifest_path);
  const auto folds = make_folds(manifest, 2, 3);

  TrainFoldOptions options;
  options.fold_dir = tmp.path() / "fold";
  const TrainConfig train_cfg = fast_toy_train(40, 2, 40);  // 2 records -> 1 step/epoch
  train_fold(folds[0], ModelConfig::toy(), train_cfg, options);

  std::ifstream in(options.fold_dir / "loss_log.csv");
  std::string line;
  std::getline(in, line);  // header
  std::vector<double> losses;
  while (std::getline(in, line)) {
    const auto first = line.find(',');
    const auto second = line.find(',', first + 1);
    const auto third = line.find(',', second + 1);
    const auto fourth = line.find(',', third + 1);
    losses.push_back(std::stod(line.substr(third + 1, fourth - third - 1)));
  }
  REQUIRE(losses.size() == 40);
  double leading = 0.0, trailing = 0.0;
  for (int i = 0; i < 10; ++i) {
    leading += losses[static_cast<std::size_t>(i)];
    trailing += losses[losses.size() - 10 + static_cast<std::size_t>(i)];
  }
  REQUIRE(trailing < leading);
}

TEST_CASE("train_fold is deterministic in full precision") {
  fixtures::TempDir tmp("det");
  const auto manifest_path = fixtures::write_manifest(tmp.path(), fixtures::simple_cases(5));
  const DatasetManifest manifest = load_manifest(manifest_path);
  const auto folds = make_folds(manifest, 2, 9);
  const TrainConfig train_cfg = fast_toy_train(6, 3, 3);

  TrainFoldOptions a_options, b_options;
  a_options.fold_dir = tmp.path() / "a";
  b_options.fold_dir = tmp.path() / "b";
  const CheckpointMeta a = train_fold(folds[0], ModelConfig::toy(), train_cfg, a_options);
  const CheckpointMeta b = train_fold(folds[0], ModelConfig::toy(), train_cfg, b_options);

  REQUIRE(a.epoch == b.epoch);
  REQUIRE(a.validation_dice == b.validation_dice);
  REQUIRE(read_text_file(a.checkpoint_path) == read_text_file(b.checkpoint_path));
  REQUIRE(read_text_file(a_options.fold_dir / "loss_log.csv") ==
          read_text_file(b_options.fold_dir / "loss_log.csv"));
}

TEST_CASE("mixed precision trains with loss scaling and stays finite") {
  fixtures::TempDir tmp("mixed");
  const auto manifest_path = fixtures::write_manifest(tmp.path(), fixtures::simple_cases(4));
  const DatasetManifest manifest = load_manifest(manifest_path);
  const auto folds = make_folds(manifest, 2, 4);

  TrainConfig train_cfg = fast_toy_train(4, 2, 2);
  train_cfg.precision = Precision::mixed;
  TrainFoldOptions options;
  options.fold_dir = tmp.path() / "fold";
  const CheckpointMeta meta = train_fold(folds[0], ModelConfig::toy(), train_cfg, options);
  REQUIRE(meta.status == "ok");
  const ParameterSet<double> params = load_checkpoint(meta.checkpoint_path);
  params.for_each([&](const std::string&, const Tensor<double>& t, int, bool) {
    REQUIRE(all_finite(t));
  });
}

TEST_CASE("loss-scale state backs off on overflow and regrows after clean steps") {
  detail::LossScaleState ls;
  REQUIRE(ls.scale == 65536.0);
  ls.on_overflow();
  REQUIRE(ls.scale == 32768.0);
  for (int i = 0; i < 40; ++i) ls.on_overflow();
  REQUIRE(ls.scale == 1.0);  // floor
  for (std::size_t i = 0; i < detail::LossScaleState::kGrowEvery; ++i) ls.on_good_step();
  REQUIRE(ls.scale == 2.0);
  ls.on_overflow();
  REQUIRE(ls.scale == 1.0);
  REQUIRE(ls.good_steps == 0);  // overflow resets the clean-run counter
}

TEST_CASE("divergence aborts the fold and keeps the last good checkpoint") {
  fixtures::TempDir tmp("diverge");
  const auto manifest_path = fixtures::write_manifest(tmp.path(), fixtures::simple_cases(4));
  const DatasetManifest manifest = load_manifest(manifest_path);
  const auto folds = make_folds(manifest, 2, 5);

  // negative weight decay grows parameters by ~1000x per step until overflow
  TrainConfig train_cfg = fast_toy_train(80, 2, 4);
  train_cfg.weight_decay = -100.0;
  train_cfg.base_lr = 10.0;
  train_cfg.warmup_start_lr = 10.0;
  train_cfg.warmup_epochs = 1;

  TrainFoldOptions options;
  options.fold_dir = tmp.path() / "fold";
  const CheckpointMeta meta = train_fold(folds[0], ModelConfig::toy(), train_cfg, options);
  REQUIRE(meta.status == "diverged");
  REQUIRE_FALSE(meta.error.empty());
  REQUIRE(std::filesystem::exists(meta.checkpoint_path));  // last good checkpoint retained
}

TEST_CASE("run_cross_validation") {
  fixtures::TempDir tmp("cv");
  const auto manifest_path = fixtures::write_manifest(tmp.path(), fixtures::simple_cases(8));
  const DatasetManifest manifest = load_manifest(manifest_path);
  const ModelConfig model_cfg = ModelConfig::toy();
  const TrainConfig train_cfg = fast_toy_train(4, 4, 2);

  SECTION("k folds yield k checkpoint entries and a mean-of-fold-means aggregate") {
    CVOptions options;
    options.run_dir = tmp.path() / "run";
    options.bootstrap_resamples = 200;
    const CVRunResult r = run_cross_validation(manifest, 4, model_cfg, train_cfg, options);
    REQUIRE(r.folds.size() == 4);
    REQUIRE(r.failed_folds == 0);
    double mean_dsc = 0.0;
    for (const auto& m : r.fold_metrics) mean_dsc += m.dsc;
    mean_dsc /= 4.0;
    REQUIRE(r.aggregate.dsc == Catch::Approx(mean_dsc).margin(1e-12));
    REQUIRE(std::filesystem::exists(options.run_dir / "cv_result.json"));
    REQUIRE(std::filesystem::exists(options.run_dir / "folds.json"));
    REQUIRE(r.intervals.count("dsc") == 1);
    REQUIRE(r.intervals.at("dsc").lower <= r.intervals.at("dsc").point);
  }

  SECTION("resume skips completed folds") {
    CVOptions first;
    first.run_dir = tmp.path() / "resume";
    first.only_fold = 0;
    run_cross_validation(manifest, 3, model_cfg, train_cfg, first);
    const auto meta_path = cv_fold_dir(first.run_dir, 0) / "fold_meta.json";
    const std::string before = read_text_file(meta_path);
    const auto ckpt_before = read_text_file(json::parse(before).at("checkpoint_path").get<std::string>());

    CVOptions full = first;
    full.only_fold.reset();
    const CVRunResult r = run_cross_validation(manifest, 3, model_cfg, train_cfg, full);
    REQUIRE(read_text_file(meta_path) == before);  // fold 0 untouched
    REQUIRE(read_text_file(r.folds[0].checkpoint_path) == ckpt_before);
    REQUIRE(r.folds[1].status == "ok");
    REQUIRE(r.folds[2].status == "ok");
  }
}
