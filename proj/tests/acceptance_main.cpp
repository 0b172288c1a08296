// Acceptance suite. Runs every acceptance criterion at its stated tolerance
// and prints one pass/fail line per criterion; exits nonzero if any fail.

#include <chrono>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <vector>

#include "eusseg/eusseg.hpp"
#include "fixtures.hpp"
#include "oracle_helpers.hpp"

using namespace eusseg;
using Clock = std::chrono::steady_clock;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void expect(bool cond, const std::string& msg) {
  if (!cond) throw Failure(msg);
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::filesystem::path source_dir() {
  const char* env = std::getenv("EUSSEG_SOURCE_DIR");
  return env ? std::filesystem::path(env) : std::filesystem::current_path();
}

std::string cli_binary() {
  const char* env = std::getenv("EUSSEG_CLI");
  expect(env != nullptr, "EUSSEG_CLI not set");
  return env;
}

int run_cli(const std::string& args) {
  const std::string cmd = cli_binary() + " " + args + " >/dev/null 2>&1";
  return WEXITSTATUS(std::system(cmd.c_str()));
}

// --------------------------------------------------------------------------
// 1. Full-scale results are documented as non-reproducible at desk scale.
// --------------------------------------------------------------------------
std::string criterion_non_reproducibility() {
  const auto runbook = source_dir() / "docs" / "RUNBOOK.md";
  expect(std::filesystem::exists(runbook), "docs/RUNBOOK.md is missing");
  const std::string text = read_text_file(runbook);
  expect(text.find("not reproducible at desk scale") != std::string::npos,
         "runbook must state desk-scale non-reproducibility");
  for (const char* anchor : {"0.657", "0.614", "71.8", "97.7", "50-epoch", "5-fold"}) {
    expect(text.find(anchor) != std::string::npos,
           std::string("runbook must document the full-scale operating point (missing '") +
               anchor + "')");
  }
  return "full-scale operating point (DSC 0.657, IoU 0.614, sens 71.8%, spec 97.7%) requires "
         "the external datasets and a 50-epoch/5-fold multi-GPU-class run; documented in "
         "docs/RUNBOOK.md, property criteria below substitute at desk scale";
}

// --------------------------------------------------------------------------
// 2. Metric oracle equivalence on 1,000 seeded random 16x16 pairs (< 5 s).
// --------------------------------------------------------------------------
std::string criterion_metric_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20250810);
  for (int trial = 0; trial < 1000; ++trial) {
    const double density = 0.1 + 0.8 * static_cast<double>(trial) / 999.0;
    const BinaryMask pred = fixtures::random_mask(16, 16, rng, density);
    const BinaryMask gt = fixtures::random_mask(16, 16, rng, 1.0 - density);

    const ConfusionCounts c = confusion(pred, gt);
    const oracle::PixelCounts o = oracle::count_pixels(pred, gt);
    expect(c.tp == o.tp && c.fp == o.fp && c.fn == o.fn && c.tn == o.tn,
           "confusion counts differ from the per-pixel oracle");

    const MetricResult m = compute_metrics(c);
    const auto lref = [](std::uint64_t num, std::uint64_t den) {
      return den == 0 ? 1.0L : static_cast<long double>(num) / static_cast<long double>(den);
    };
    const long double dsc = lref(2 * o.tp, 2 * o.tp + o.fp + o.fn);
    const long double iou = lref(o.tp, o.tp + o.fp + o.fn);
    const long double sens = lref(o.tp, o.tp + o.fn);
    const long double spec = lref(o.tn, o.tn + o.fp);
    const long double acc = lref(o.tp + o.tn, o.tp + o.fp + o.fn + o.tn);
    expect(std::abs(static_cast<long double>(m.dsc) - dsc) <= 1e-12L, "dsc mismatch");
    expect(std::abs(static_cast<long double>(m.iou) - iou) <= 1e-12L, "iou mismatch");
    expect(std::abs(static_cast<long double>(m.sensitivity) - sens) <= 1e-12L, "sensitivity mismatch");
    expect(std::abs(static_cast<long double>(m.specificity) - spec) <= 1e-12L, "specificity mismatch");
    expect(std::abs(static_cast<long double>(m.accuracy) - acc) <= 1e-12L, "accuracy mismatch");
  }
  const double elapsed = seconds_since(t0);
  expect(elapsed < 5.0, "metric oracle run exceeded 5 s");
  return "1000 random 16x16 pairs match the brute-force oracle (counts exact, ratios <= 1e-12) in " +
         format_fixed(elapsed, 2) + " s";
}

// --------------------------------------------------------------------------
// 3. Metric identities hold exactly for 10,000 random ConfusionCounts.
// --------------------------------------------------------------------------
std::string criterion_metric_identities() {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10000; ++trial) {
    const ConfusionCounts c{rng() % 100000, rng() % 100000, rng() % 100000, rng() % 100000};
    const MetricResult m = compute_metrics(c);

    // iou = dsc/(2-dsc): exact rational identity via cross multiplication
    const unsigned __int128 s = 2 * c.tp + c.fp + c.fn;
    expect(static_cast<unsigned __int128>(c.tp) * (2 * s - 2 * c.tp) ==
               static_cast<unsigned __int128>(2 * c.tp) * (c.tp + c.fp + c.fn),
           "rational identity iou = dsc/(2-dsc) violated");
    if (2.0 - m.dsc > 0.0) {
      expect(std::abs(m.iou - m.dsc / (2.0 - m.dsc)) <= 1e-12, "floating iou identity violated");
    }

    // accuracy = (sens*P + spec*N) / (P+N), exact under the conventions:
    // a zero denominator forces its numerator count to zero as well.
    const double p = static_cast<double>(c.tp + c.fn);
    const double n = static_cast<double>(c.tn + c.fp);
    if (p + n > 0.0) {
      expect(std::abs(m.accuracy - (m.sensitivity * p + m.specificity * n) / (p + n)) <= 1e-12,
             "accuracy decomposition violated");
    }
  }
  return "iou = dsc/(2-dsc) (exact rationals + 1e-12 doubles) and accuracy decomposition hold "
         "on 10000 random counts";
}

// --------------------------------------------------------------------------
// 4. Bootstrap coverage: 500 experiments, 200 uniform draws, 2000 resamples.
// --------------------------------------------------------------------------
std::string criterion_bootstrap_coverage() {
  const auto t0 = Clock::now();
  std::size_t covered = 0;
  const std::size_t experiments = 500;
  for (std::size_t e = 0; e < experiments; ++e) {
    Rng draw(derive_seed(0xC0FFEE, {e}));
    std::vector<double> values(200);
    for (auto& v : values) v = draw.uniform01();
    const BootstrapCI ci = bootstrap_ci(values, 0.95, 2000, e);
    if (ci.lower <= 0.5 && 0.5 <= ci.upper) ++covered;
  }
  const double coverage = static_cast<double>(covered) / static_cast<double>(experiments);
  const double elapsed = seconds_since(t0);
  expect(coverage >= 0.92 && coverage <= 0.98,
         "coverage " + format_fixed(coverage, 4) + " outside 0.95 +/- 0.03");
  expect(elapsed < 60.0, "bootstrap coverage run exceeded 60 s");
  return "95% CI covered the true mean in " + format_fixed(coverage * 100.0, 1) + "% of 500 "
         "experiments (target 95% +/- 3%) in " + format_fixed(elapsed, 1) + " s";
}

// --------------------------------------------------------------------------
// 5. Gradient check on the toy model: 200 coordinates, <= 1% error on >= 99%.
// --------------------------------------------------------------------------
std::string criterion_gradient_check() {
  const auto t0 = Clock::now();
  ModelConfig cfg = ModelConfig::toy();  // image 64, patch 8, embed 32, depth 2,
  cfg.num_heads = 4;                     // heads 4, taps [0,1], decoder 2 layers
  auto params = init_parameters<double>(cfg, 1234);

  std::vector<GrayImage> images;
  std::vector<BinaryMask> masks;
  for (int i = 0; i < 2; ++i) {
    GrayImage img;
    BinaryMask m;
    fixtures::make_lesion_pair(64, 22.0 + 14.0 * i, 30.0 + 9.0 * i, 11.0, 9.0, img, m);
    images.push_back(img);
    masks.push_back(m);
  }
  const std::span<const GrayImage> ispan(images);
  const std::span<const BinaryMask> mspan(masks);

  GradStore grads;
  atm_loss_and_gradients(params, ispan, mspan, grads);

  std::vector<Tensor<double>*> tensors;
  params.for_each([&](const std::string&, Tensor<double>& t, int, bool) { tensors.push_back(&t); });
  std::vector<std::size_t> cumulative;
  std::size_t total = 0;
  for (auto* t : tensors) {
    total += t->v.size();
    cumulative.push_back(total);
  }

  Rng pick(99);
  const double h = 1e-4;
  std::size_t agree = 0;
  const std::size_t coords = 200;
  for (std::size_t c = 0; c < coords; ++c) {
    const std::size_t flat = pick.below(total);
    std::size_t ti = 0;
    while (cumulative[ti] <= flat) ++ti;
    const std::size_t k = flat - (ti == 0 ? 0 : cumulative[ti - 1]);

    const double orig = tensors[ti]->v[k];
    tensors[ti]->v[k] = orig + h;
    const double up = atm_loss_value(params, ispan, mspan).total;
    tensors[ti]->v[k] = orig - h;
    const double down = atm_loss_value(params, ispan, mspan).total;
    tensors[ti]->v[k] = orig;

    const double fd = (up - down) / (2.0 * h);
    const double an = grads.grads[ti].v[k];
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
    if (std::abs(fd - an) / denom <= 0.01) ++agree;
  }
  const double elapsed = seconds_since(t0);
  expect(agree >= 198, "only " + std::to_string(agree) + "/200 coordinates within 1%");
  expect(elapsed < 120.0, "gradient check exceeded 2 min");
  return std::to_string(agree) + "/200 sampled coordinates agree with central differences "
         "(step 1e-4) within 1% in " + format_fixed(elapsed, 1) + " s";
}

// --------------------------------------------------------------------------
// 6. Overfit sanity: 200 steps on 4 samples reaches mean train DSC >= 0.9,
//    predictions via pure argmax (code-path assertion).
// --------------------------------------------------------------------------
std::string criterion_overfit() {
  const auto t0 = Clock::now();
  ModelConfig mc = ModelConfig::toy();
  mc.num_heads = 4;

  std::vector<GrayImage> images;
  std::vector<BinaryMask> masks;
  const double geometry[4][3] = {{20, 20, 10}, {40, 44, 13}, {32, 24, 8}, {24, 44, 11}};
  for (const auto& g : geometry) {
    GrayImage img;
    BinaryMask m;
    fixtures::make_lesion_pair(64, g[0], g[1], g[2], g[2] * 0.9, img, m);
    images.push_back(img);
    masks.push_back(m);
  }

  TrainConfig tc;
  tc.epochs = 200;
  tc.global_batch_size = 4;
  tc.base_lr = 1e-3;
  tc.warmup_start_lr = 1e-4;
  tc.warmup_epochs = 20;
  tc.seed = 0;

  auto params = init_parameters<double>(mc, 1);
  auto opt = make_adamw_state(params);
  for (std::size_t step = 0; step < 200; ++step) {
    GradStore grads;
    atm_loss_and_gradients(params, std::span<const GrayImage>(images),
                           std::span<const BinaryMask>(masks), grads);
    clip_gradients(grads, tc.grad_clip_norm);
    adamw_step(params, grads, opt, tc, lr_at(static_cast<double>(step), tc));
  }

  // prediction pass: pure argmax, no component filtering anywhere downstream
  const std::uint64_t labeling_calls_before = component_labeling_calls().load();
  double mean_dice = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const LogitsMap logits =
        assemble_logits(atm_forward(params, std::span<const GrayImage>(&images[i], 1)));
    const BinaryMask pred = predict(logits)[0];

    // argmax oracle over the raw logit map
    const std::size_t hw = 64 * 64;
    for (std::size_t k = 0; k < hw; ++k) {
      const double bg = logits.values.v[k];
      const double fg = logits.values.v[hw + k];
      expect(pred.pix[k] == (fg > bg ? 1 : 0), "prediction is not the per-pixel argmax");
    }
    mean_dice += compute_metrics(confusion(pred, masks[i])).dsc;
  }
  mean_dice /= static_cast<double>(images.size());
  expect(component_labeling_calls().load() == labeling_calls_before,
         "component labeling ran inside the prediction path");

  const double elapsed = seconds_since(t0);
  expect(mean_dice >= 0.9, "mean training DSC " + format_fixed(mean_dice, 4) + " below 0.9");
  expect(elapsed < 300.0, "overfit run exceeded 5 min");
  return "200 steps on 4 samples reached mean train DSC " + format_fixed(mean_dice, 3) +
         " (>= 0.9), pure-argmax path asserted, in " + format_fixed(elapsed, 1) + " s";
}

// --------------------------------------------------------------------------
// 7. Schedule exactness.
// --------------------------------------------------------------------------
std::string criterion_schedule() {
  const TrainConfig cfg;
  expect(std::abs(lr_at(0.0, cfg) - 5e-5) <= 1e-12, "lr_at(0) != 5e-5");
  expect(std::abs(lr_at(20.0, cfg) - 3e-4) <= 1e-12, "lr_at(20) != 3e-4");
  expect(std::abs(lr_at(35.0, cfg) - 1.5e-4) <= 1e-12, "lr_at(35) != 1.5e-4");
  expect(std::abs(lr_at(50.0, cfg) - 0.0) <= 1e-12, "lr_at(50) != 0");
  expect(layer_lr_multiplier(13, 12, 0.65) == 1.0, "head multiplier != 1");
  expect(layer_lr_multiplier(12, 12, 0.65) == 0.65, "block-12 multiplier != 0.65");
  return "lr_at{0,20,35,50} = {5e-5, 3e-4, 1.5e-4, 0} to 1e-12; multipliers head=1, "
         "block12=0.65 exact";
}

// --------------------------------------------------------------------------
// 8. Clipping exactness over 100 random gradient sets.
// --------------------------------------------------------------------------
std::string criterion_clipping() {
  const ModelConfig cfg = ModelConfig::toy();
  const auto params = init_parameters<double>(cfg, 5);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    GradStore store;
    std::normal_distribution<double> n(0.0, std::pow(10.0, -4.0 + 0.08 * trial));
    params.for_each([&](const std::string& name, const Tensor<double>& t, int, bool) {
      Tensor<double> g(t.shape);
      for (auto& x : g.v) x = n(rng);
      store.names.push_back(name);
      store.grads.push_back(std::move(g));
    });
    const double before = global_grad_norm(store);
    clip_gradients(store, 5.0);
    const double after = global_grad_norm(store);
    expect(std::abs(after - std::min(before, 5.0)) <= 1e-6,
           "post-clip norm deviates: " + format_fixed(after, 9) + " vs min(" +
               format_fixed(before, 4) + ", 5)");
  }
  return "post-clip global norm = min(pre-norm, 5.0) within 1e-6 on 100 random gradient sets";
}

// --------------------------------------------------------------------------
// 9. Fold integrity on 18-case synthetic manifests.
// --------------------------------------------------------------------------
std::string criterion_fold_integrity() {
  DatasetManifest manifest;
  manifest.dir = ".";
  std::size_t frame = 0;
  for (int c = 0; c < 18; ++c) {
    const int frames = 1 + (c * 7) % 11;  // unequal frame counts
    for (int f = 0; f < frames; ++f) {
      ImageRecord rec;
      rec.image_path = "frames/img_" + std::to_string(frame) + ".png";
      rec.mask_path = "frames/mask_" + std::to_string(frame) + ".png";
      rec.case_id = "case_" + std::to_string(c);
      rec.source_id = "pancreatic_video";
      manifest.records.push_back(rec);
      ++frame;
    }
  }

  for (std::uint64_t seed : {0ULL, 7ULL, 123ULL, 20250810ULL}) {
    const auto folds = make_folds(manifest, 5, seed, true);
    const auto again = make_folds(manifest, 5, seed, true);
    expect(folds.size() == 5, "expected 5 folds");

    std::map<std::string, int> seen;
    for (std::size_t f = 0; f < folds.size(); ++f) {
      // seed determinism
      expect(folds[f].val_records.size() == again[f].val_records.size(), "non-deterministic fold");
      for (std::size_t i = 0; i < folds[f].val_records.size(); ++i) {
        expect(folds[f].val_records[i].image_path == again[f].val_records[i].image_path,
               "non-deterministic fold content");
      }
      // case purity and disjointness
      std::set<std::string> val_cases;
      std::set<std::string> val_paths;
      for (const auto& r : folds[f].val_records) {
        val_cases.insert(r.case_id);
        val_paths.insert(r.image_path.string());
        seen[r.image_path.string()] += 1;
      }
      for (const auto& r : folds[f].train_records) {
        expect(val_cases.count(r.case_id) == 0, "case straddles a fold boundary");
        expect(val_paths.count(r.image_path.string()) == 0, "record in both train and val");
      }
      expect(folds[f].train_records.size() + folds[f].val_records.size() ==
                 manifest.records.size(),
             "fold does not partition the manifest");
    }
    // exhaustive: every record appears in exactly one validation set
    expect(seen.size() == manifest.records.size(), "validation union misses records");
    for (const auto& [path, count] : seen) {
      expect(count == 1, "record appears in multiple validation folds: " + path);
    }
  }
  return "18 cases / " + std::to_string(manifest.records.size()) +
         " frames, k=5: disjoint, exhaustive, case-pure and seed-deterministic over 4 seeds";
}

// --------------------------------------------------------------------------
// 10. Component oracle: exhaustive 4x4 plus 200 random 16x16 (< 30 s).
// --------------------------------------------------------------------------
std::string criterion_component_oracle() {
  const auto t0 = Clock::now();
  for (std::uint32_t bits = 0; bits < 65536; ++bits) {
    BinaryMask m(4, 4);
    for (std::size_t i = 0; i < 16; ++i) m.pix[i] = (bits >> i) & 1u;
    const ComponentStats s = connected_components(m);
    auto sizes = oracle::flood_fill_components(m);
    std::sort(sizes.rbegin(), sizes.rend());
    expect(s.component_count == sizes.size(),
           "component count mismatch on 4x4 mask " + std::to_string(bits));
    expect(s.component_sizes == sizes, "component sizes mismatch on 4x4 mask");
  }
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    const BinaryMask m = fixtures::random_mask(16, 16, rng, 0.2 + 0.6 * (trial / 200.0));
    const ComponentStats s = connected_components(m);
    auto sizes = oracle::flood_fill_components(m);
    std::sort(sizes.rbegin(), sizes.rend());
    expect(s.component_count == sizes.size(), "component count mismatch on 16x16 mask");
    expect(s.component_sizes == sizes, "component sizes mismatch on 16x16 mask");
  }
  const double elapsed = seconds_since(t0);
  expect(elapsed < 30.0, "component oracle exceeded 30 s");
  return "all 65536 4x4 masks and 200 random 16x16 masks match the flood-fill oracle in " +
         format_fixed(elapsed, 1) + " s";
}

// --------------------------------------------------------------------------
// 11. Failure-report arithmetic: 31 of 320 multi-component -> "9.7%".
// --------------------------------------------------------------------------
std::string criterion_failure_report() {
  std::vector<ImageOutcome> outcomes;
  for (int i = 0; i < 320; ++i) {
    ImageOutcome o;
    o.image_id = "img_" + std::to_string(i);
    o.dsc = 0.75;
    o.components.component_count = (i % 10 == 0 && i < 310) ? 2 : 1;  // 31 multi-component
    o.components.component_sizes.assign(o.components.component_count, 5);
    outcomes.push_back(o);
  }
  const FailureReport report = bucket_failures(outcomes);
  expect(report.evaluated_count == 320, "fixture size wrong");
  expect(report.multi_prediction_count == 31, "expected 31 multi-component predictions, got " +
                                                  std::to_string(report.multi_prediction_count));
  const std::string formatted = format_percent(report.multi_prediction_rate);
  expect(formatted == "9.7%", "rate formats as '" + formatted + "', expected '9.7%'");
  return "31/320 multi-component predictions -> rate " +
         format_fixed(report.multi_prediction_rate, 6) + ", formatted \"" + formatted + "\"";
}

// --------------------------------------------------------------------------
// 12. End-to-end determinism through the CLI.
// --------------------------------------------------------------------------
std::string criterion_end_to_end_determinism() {
  const auto t0 = Clock::now();
  fixtures::TempDir tmp("acceptance_e2e");
  const auto manifest = fixtures::write_manifest(tmp.path(), fixtures::simple_cases(6));
  const json cfg = {{"folds", 2},
                    {"train",
                     {{"epochs", 3}, {"global_batch_size", 4}, {"val_every_epochs", 1},
                      {"base_lr", 1e-3}, {"warmup_start_lr", 1e-4}, {"warmup_epochs", 1},
                      {"precision", "full"}}},
                    {"evaluate", {{"bootstrap_resamples", 300}, {"seed", 5}}}};
  const auto cfg_path = tmp.path() / "config.json";
  write_text_file(cfg_path, cfg.dump());

  std::vector<std::string> reports;  // per run: per_image + aggregate + failure report
  std::vector<std::string> checkpoints;
  for (int run = 0; run < 2; ++run) {
    const auto dir = tmp.path() / ("run_" + std::to_string(run));
    const std::string common = " --manifest " + manifest.string() + " --config " +
                               cfg_path.string() + " --toy --seed 5";
    expect(run_cli("preprocess" + common + " --out " + (dir / "cache").string()) == 0,
           "preprocess failed");
    expect(run_cli("train" + common + " --out " + (dir / "train").string()) == 0, "train failed");
    const json cv = json::parse(read_text_file(dir / "train" / "cv_result.json"));
    const std::string ckpt = cv.at("folds")[0].at("checkpoint_path").get<std::string>();
    expect(run_cli("evaluate" + common + " --checkpoint " + ckpt + " --out " +
                   (dir / "eval").string()) == 0,
           "evaluate failed");
    expect(run_cli("analyze" + common + " --results " + (dir / "eval" / "per_image.csv").string() +
                   " --predictions " + (dir / "eval" / "predictions").string() + " --out " +
                   (dir / "analysis").string()) == 0,
           "analyze failed");
    reports.push_back(read_text_file(dir / "eval" / "per_image.csv") + "\n---\n" +
                      read_text_file(dir / "eval" / "aggregate.json") + "\n---\n" +
                      read_text_file(dir / "analysis" / "failure_report.json"));
    checkpoints.push_back(read_text_file(ckpt));
  }
  expect(reports[0] == reports[1], "metric reports differ between identical runs");
  expect(checkpoints[0] == checkpoints[1], "checkpoints differ between identical runs");
  return "preprocess -> train -> evaluate -> analyze run twice with one seed produced "
         "byte-identical metric reports and checkpoints in " +
         format_fixed(seconds_since(t0), 1) + " s";
}

struct Criterion {
  int id;
  const char* name;
  std::function<std::string()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "full-scale non-reproducibility documented", criterion_non_reproducibility},
      {2, "metric oracle equivalence", criterion_metric_oracle},
      {3, "metric identities", criterion_metric_identities},
      {4, "bootstrap coverage", criterion_bootstrap_coverage},
      {5, "gradient check", criterion_gradient_check},
      {6, "overfit sanity", criterion_overfit},
      {7, "schedule exactness", criterion_schedule},
      {8, "clipping exactness", criterion_clipping},
      {9, "fold integrity", criterion_fold_integrity},
      {10, "component oracle", criterion_component_oracle},
      {11, "failure-report arithmetic", criterion_failure_report},
      {12, "end-to-end determinism", criterion_end_to_end_determinism},
  };

  const auto suite_start = Clock::now();
  int failures = 0;
  for (const auto& c : criteria) {
    try {
      const std::string detail = c.run();
      std::cout << "[PASS] criterion " << c.id << " (" << c.name << "): " << detail << "\n";
    } catch (const std::exception& e) {
      ++failures;
      std::cout << "[FAIL] criterion " << c.id << " (" << c.name << "): " << e.what() << "\n";
    }
    std::cout.flush();
  }
  std::cout << (failures == 0 ? "ACCEPTANCE SUITE PASSED" : "ACCEPTANCE SUITE FAILED") << " ("
            << criteria.size() - static_cast<std::size_t>(failures) << "/" << criteria.size()
            << " criteria, " << format_fixed(seconds_since(suite_start), 1) << " s total)\n";
  return failures == 0 ? 0 : 1;
}
