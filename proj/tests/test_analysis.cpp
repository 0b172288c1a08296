#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "eusseg/analysis.hpp"
#include "fixtures.hpp"
#include "oracle_helpers.hpp"

using namespace eusseg;

TEST_CASE("connected_components") {
  SECTION("empty mask has zero components") {
    const ComponentStats s = connected_components(BinaryMask(8, 8));
    REQUIRE(s.component_count == 0);
    REQUIRE(s.component_sizes.empty());
  }
  SECTION("two separated squares") {
    BinaryMask m(8, 8);
    for (std::size_t y = 0; y < 2; ++y) {
      for (std::size_t x = 0; x < 2; ++x) {
        m.at(y, x) = 1;
        m.at(y + 4, x + 4) = 1;
      }
    }
    const ComponentStats s = connected_components(m);
    REQUIRE(s.component_count == 2);
    REQUIRE(s.component_sizes == std::vector<std::size_t>{4, 4});
  }
  SECTION("diagonal touch merges under 8-connectivity but splits under 4") {
    BinaryMask m(4, 4);
    m.at(0, 0) = 1;
    m.at(1, 1) = 1;
    REQUIRE(connected_components(m, 8).component_count == 1);
    REQUIRE(connected_components(m, 4).component_count == 2);
  }
  SECTION("random 16x16 masks match the flood-fill oracle") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
      const BinaryMask m = fixtures::random_mask(16, 16, rng, 0.35 + 0.3 * (trial % 3));
      const ComponentStats s = connected_components(m);
      auto sizes = oracle::flood_fill_components(m);
      std::sort(sizes.rbegin(), sizes.rend());
      REQUIRE(s.component_count == sizes.size());
      REQUIRE(s.component_sizes == sizes);
      std::size_t total = 0;
      for (auto sz : s.component_sizes) total += sz;
      REQUIRE(total == m.foreground_count());
    }
  }
  SECTION("count is invariant under transposition") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 40; ++trial) {
      const BinaryMask m = fixtures::random_mask(9, 13, rng, 0.4);
      BinaryMask t(m.width, m.height);
      for (std::size_t y = 0; y < m.height; ++y) {
        for (std::size_t x = 0; x < m.width; ++x) t.at(x, y) = m.at(y, x);
      }
      REQUIRE(connected_components(m).component_count ==
              connected_components(t).component_count);
    }
  }
  SECTION("non-binary input is rejected") {
    BinaryMask bad(4, 4);
    bad.pix[5] = 9;
    REQUIRE_THROWS_AS(connected_components(bad), ValidationError);
  }
  SECTION("every call bumps the instrumentation counter") {
    const auto before = component_labeling_calls().load();
    connected_components(BinaryMask(4, 4));
    REQUIRE(component_labeling_calls().load() == before + 1);
  }
}

TEST_CASE("bucket_failures") {
  const auto outcome = [](const std::string& id, double dsc, std::size_t comps) {
    ImageOutcome o;
    o.image_id = id;
    o.dsc = dsc;
    o.components.component_count = comps;
    o.components.component_sizes.assign(comps, 1);
    return o;
  };

  SECTION("thresholds split complete failures from poor cases") {
    const FailureReport r = bucket_failures(
        {outcome("a", 0.05, 1), outcome("b", 0.3, 1), outcome("c", 0.9, 1)});
    REQUIRE(r.complete_failures == std::vector<std::string>{"a"});
    REQUIRE(r.poor_cases == std::vector<std::string>{"b"});
    REQUIRE(r.multi_prediction_rate == 0.0);
  }
  SECTION("dsc exactly 0.1 is a poor case, not a complete failure") {
    const FailureReport r = bucket_failures({outcome("edge", 0.1, 1)});
    REQUIRE(r.complete_failures.empty());
    REQUIRE(r.poor_cases == std::vector<std::string>{"edge"});
  }
  SECTION("dsc exactly 0.5 is acceptable") {
    const FailureReport r = bucket_failures({outcome("edge", 0.5, 1)});
    REQUIRE(r.complete_failures.empty());
    REQUIRE(r.poor_cases.empty());
    REQUIRE(r.annotations[0].bucket == "acceptable");
  }
  SECTION("every image lands in exactly one bucket") {
    std::vector<ImageOutcome> outcomes;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 200; ++i) outcomes.push_back(outcome("i" + std::to_string(i), u(rng), 1));
    const FailureReport r = bucket_failures(outcomes);
    REQUIRE(r.complete_failures.size() + r.poor_cases.size() <= 200);
    std::size_t acceptable = 0;
    for (const auto& a : r.annotations) {
      const int in_complete = a.bucket == "complete_failure";
      const int in_poor = a.bucket == "poor";
      const int in_ok = a.bucket == "acceptable";
      REQUIRE(in_complete + in_poor + in_ok == 1);
      acceptable += in_ok;
    }
    REQUIRE(r.complete_failures.size() + r.poor_cases.size() + acceptable == 200);
  }
  SECTION("31 multi-component predictions out of 320 format as 9.7%") {
    std::vector<ImageOutcome> outcomes;
    for (int i = 0; i < 320; ++i) {
      outcomes.push_back(outcome("img" + std::to_string(i), 0.8, i < 31 ? 2 : 1));
    }
    const FailureReport r = bucket_failures(outcomes);
    REQUIRE(r.multi_prediction_count == 31);
    REQUIRE(r.multi_prediction_rate == Catch::Approx(0.096875).margin(1e-12));
    REQUIRE(format_percent(r.multi_prediction_rate) == "9.7%");
  }
  SECTION("single-component sets have rate exactly 0") {
    std::vector<ImageOutcome> outcomes;
    for (int i = 0; i < 50; ++i) outcomes.push_back(outcome("x" + std::to_string(i), 0.7, 1));
    REQUIRE(bucket_failures(outcomes).multi_prediction_rate == 0.0);
  }
  SECTION("out-of-range dsc is rejected") {
    REQUIRE_THROWS_AS(bucket_failures({outcome("bad", 1.5, 1)}), ValidationError);
  }
}

TEST_CASE("render_overlay") {
  GrayImage img(32, 32);
  std::mt19937_64 rng(4);
  for (auto& p : img.pix) p = static_cast<double>(rng() % 256) / 255.0;
  BinaryMask gt(32, 32);
  for (std::size_t y = 10; y < 20; ++y) {
    for (std::size_t x = 8; x < 18; ++x) gt.at(y, x) = 1;
  }

  const auto gray_byte = [&](std::size_t y, std::size_t x) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(img.at(y, x), 0.0, 1.0) * 255.0));
  };

  SECTION("empty prediction leaves the right panel equal to the input") {
    const RgbImage out = render_overlay(img, gt, BinaryMask(32, 32), 0.0);
    REQUIRE(out.width == 96);
    REQUIRE(out.height == 32 + 12);  // footer strip for the DSC label
    for (std::size_t y = 0; y < 32; ++y) {
      for (std::size_t x = 0; x < 32; ++x) {
        const auto* p = out.at(y, x + 64);
        REQUIRE(p[0] == gray_byte(y, x));
        REQUIRE(p[1] == gray_byte(y, x));
        REQUIRE(p[2] == gray_byte(y, x));
      }
    }
  }
  SECTION("full prediction tints the whole right panel red") {
    const RgbImage out = render_overlay(img, gt, BinaryMask(32, 32, 1), 1.0);
    for (std::size_t y = 0; y < 32; ++y) {
      for (std::size_t x = 0; x < 32; ++x) {
        const auto* p = out.at(y, x + 64);
        const double v = img.at(y, x);
        REQUIRE(p[0] == static_cast<std::uint8_t>(std::lround(std::clamp(0.5 * v + 0.5, 0.0, 1.0) * 255.0)));
        REQUIRE(p[1] == static_cast<std::uint8_t>(std::lround(std::clamp(0.5 * v, 0.0, 1.0) * 255.0)));
        REQUIRE(p[0] > p[1]);  // visibly red
      }
    }
  }
  SECTION("middle panel is the ground-truth mask") {
    const RgbImage out = render_overlay(img, gt, gt, 1.0);
    for (std::size_t y = 0; y < 32; ++y) {
      for (std::size_t x = 0; x < 32; ++x) {
        REQUIRE(out.at(y, x + 32)[0] == (gt.at(y, x) ? 255 : 0));
      }
    }
  }
  SECTION("dsc 0.75 renders as the label 0.750") {
    REQUIRE(format_dsc_label(0.75) == "0.750");
    const RgbImage out = render_overlay(img, gt, gt, 0.75);
    // the footer strip carries stamped glyph pixels
    std::size_t lit = 0;
    for (std::size_t y = 32; y < out.height; ++y) {
      for (std::size_t x = 0; x < out.width; ++x) lit += out.at(y, x)[0] == 255;
    }
    REQUIRE(lit > 20);
  }
  SECTION("shape mismatch is rejected") {
    REQUIRE_THROWS_AS(render_overlay(img, BinaryMask(16, 16), BinaryMask(32, 32), 0.5),
                      ValidationError);
  }
}
