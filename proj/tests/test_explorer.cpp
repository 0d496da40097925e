#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "speclab/explorer.hpp"

using namespace speclab;

namespace {

ModelConfig opt125m_shape() {
  ModelConfig c;
  c.num_layers = 12;
  c.num_heads = 12;
  c.model_dim = 768;
  c.ffn_dim = 3072;
  c.vocab_size = 50272;
  c.max_positions = 2050;
  return c;
}

LatencyModel synthetic_latency_model(double slope = 2e-4, double intercept = 1e-4) {
  LatencyModel m;
  m.slope_per_layer = slope;
  m.intercept = intercept;
  m.ref_model_dim = 1024;
  m.ref_ffn_dim = 4096;
  m.saturation_width = 4096;  // wide enough that depth dominates
  return m;
}

}  // namespace

TEST_CASE("parameter count matches an independent hand count of the 125M shape") {
  const ModelConfig c = opt125m_shape();
  // Hand count, written out term by term.
  const std::uint64_t embeddings = (50272ull + 2050ull) * 768ull;
  const std::uint64_t attention_per_layer = 4ull * 768ull * 768ull + 4ull * 768ull;
  const std::uint64_t ffn_per_layer = 2ull * 768ull * 3072ull + 768ull + 3072ull;
  const std::uint64_t norms = 12ull * 2ull * (2ull * 768ull) + 2ull * 768ull;
  const std::uint64_t hand_count =
      embeddings + 12ull * (attention_per_layer + ffn_per_layer) + norms;

  CHECK(count_params(c) == hand_count);
  const double rel = std::abs(static_cast<double>(count_params(c)) - 1.25e8) / 1.25e8;
  CHECK(rel <= 0.01);
}

TEST_CASE("count is linear in ffn width") {
  ModelConfig c = opt125m_shape();
  const std::uint64_t base = count_params(c);
  c.ffn_dim *= 2;
  const std::uint64_t doubled = count_params(c);
  // 2*l*d*delta_f weight growth plus l*delta_f bias growth.
  CHECK(doubled - base == 2ull * 12 * 768 * 3072 + 12ull * 3072);
}

TEST_CASE("gated-FFN counting adds one d x f matrix and a bias per layer") {
  const ModelConfig c = opt125m_shape();
  ParamCountOptions gated;
  gated.gated_ffn = true;
  CHECK(count_params(c, gated) - count_params(c) ==
        12ull * (768ull * 3072ull + 3072ull));
  CHECK(count_params_formula().find("2*d*f") != std::string::npos);
  CHECK(count_params_formula(gated).find("3*d*f") != std::string::npos);
}

TEST_CASE("count is monotone in every dimension") {
  const ModelConfig base = opt125m_shape();
  ModelConfig c = base;
  c.num_layers += 1;
  CHECK(count_params(c) > count_params(base));
  c = base;
  c.model_dim += c.num_heads;  // keep divisibility
  CHECK(count_params(c) > count_params(base));
  c = base;
  c.ffn_dim += 1;
  CHECK(count_params(c) > count_params(base));
}

TEST_CASE("KV bytes per token") {
  // The wide 12-layer / 2560-dim pruned shape against the deep
  // 24-layer / 2048-dim one: exactly 0.625, i.e. 37.5% less KV memory.
  const double wide = static_cast<double>(kv_bytes_per_token(12, 2560, 2));
  const double deep = static_cast<double>(kv_bytes_per_token(24, 2048, 2));
  CHECK(wide / deep == 0.625);

  CHECK(kv_bytes_per_token(0, 2048, 2) == 0);  // hypothetical zero-depth shape
  CHECK(kv_bytes_per_token(24, 2048, 2) == 2 * kv_bytes_per_token(12, 2048, 2));

  ModelConfig c = opt125m_shape();
  CHECK(kv_bytes_per_token(c, 4) == 2ull * 12 * 768 * 4);
}

TEST_CASE("enumeration finds the 350M-class anchor shape") {
  ParamBudgetSpec spec;
  spec.budget = 3.5e8;
  spec.tolerance = 0.05;
  spec.depth_min = 20;
  spec.depth_max = 24;
  spec.head_min = 14;
  spec.head_max = 18;
  spec.head_dim = 64;
  spec.ffn_ratio_min = 3.5;
  spec.ffn_ratio_max = 4.5;
  spec.ffn_quantum = 64;
  const auto reports =
      enumerate_configs(spec, synthetic_latency_model(), TarEstimate({{1, 2.0}, {24, 3.0}}), 0.06);
  REQUIRE(!reports.empty());
  bool found = false;
  for (const auto& r : reports) {
    const auto& c = r.config;
    found |= c.num_layers == 24 && c.num_heads == 16 && c.model_dim == 1024 && c.ffn_dim == 4096;
    const double rel = std::abs(static_cast<double>(r.params) - spec.budget) / spec.budget;
    CHECK(rel <= spec.tolerance + 1e-12);
  }
  CHECK(found);
  for (std::size_t i = 1; i < reports.size(); ++i) {
    CHECK(reports[i - 1].pred_throughput >= reports[i].pred_throughput);
  }
}

TEST_CASE("an unreachable budget yields an empty result, not an error") {
  ParamBudgetSpec spec;
  spec.budget = 1e6;  // far below anything the lattice can produce
  spec.tolerance = 1e-6;
  spec.depth_min = 4;
  spec.depth_max = 6;
  spec.head_min = 8;
  spec.head_max = 8;
  spec.head_dim = 64;
  const auto reports =
      enumerate_configs(spec, synthetic_latency_model(), TarEstimate({{1, 2.0}}), 0.06);
  CHECK(reports.empty());

  spec.tolerance = 0.0;  // invalid spec is an error, distinct from empty
  CHECK_THROWS_AS(
      enumerate_configs(spec, synthetic_latency_model(), TarEstimate({{1, 2.0}}), 0.06),
      ValidationError);
}

TEST_CASE("shallower configs predict lower latency at fixed width") {
  ParamBudgetSpec spec;
  spec.budget = 3.6e8;
  spec.tolerance = 0.2;
  spec.depth_min = 20;
  spec.depth_max = 24;
  spec.head_min = 16;
  spec.head_max = 16;
  spec.head_dim = 64;
  spec.ffn_ratio_min = 4.0;
  spec.ffn_ratio_max = 4.0;
  const auto reports =
      enumerate_configs(spec, synthetic_latency_model(), TarEstimate({{1, 3.0}}), 0.06);
  REQUIRE(reports.size() >= 2);
  for (const auto& a : reports) {
    for (const auto& b : reports) {
      if (a.config.num_layers < b.config.num_layers) {
        CHECK(a.pred_latency_seconds < b.pred_latency_seconds);
      }
    }
  }
}

TEST_CASE("TAR estimates interpolate and clamp") {
  const TarEstimate tar({{2, 2.0}, {6, 4.0}});
  CHECK(tar.at(1) == doctest::Approx(2.0));
  CHECK(tar.at(2) == doctest::Approx(2.0));
  CHECK(tar.at(4) == doctest::Approx(3.0));
  CHECK(tar.at(6) == doctest::Approx(4.0));
  CHECK(tar.at(10) == doctest::Approx(4.0));
  CHECK_THROWS_AS(TarEstimate({}), ValidationError);
  CHECK_THROWS_AS(TarEstimate({{1, -2.0}}), ValidationError);
}

TEST_CASE("comparison reproduces the wide-vs-deep verdict") {
  // Deep draft: TAR 3.81 at 105.1 ms; wide draft: TAR 3.70 at 53.5 ms.
  const CandidatePerf deep{"deep-1.3b", 3.81, 105.1e-3};
  const CandidatePerf wide{"wide-1.3b", 3.70, 53.5e-3};
  const CompareReport r = compare_candidates(deep, wide, 60.03e-3);
  CHECK(r.winner == 1);  // wide wins on throughput despite ~3% lower TAR
  CHECK(r.throughput_b == doctest::Approx(32.59).epsilon(2e-4));
  CHECK(r.throughput_a == doctest::Approx(23.07).epsilon(2e-3));
  CHECK(r.margin_pct == doctest::Approx(41.0).epsilon(0.02));
  CHECK(wide.tar / deep.tar == doctest::Approx(0.971).epsilon(1e-3));
}

TEST_CASE("identical candidates tie") {
  const CandidatePerf a{"a", 3.0, 0.05};
  const CandidatePerf b{"b", 3.0, 0.05};
  const CompareReport r = compare_candidates(a, b, 0.06);
  CHECK(r.winner == -1);
  CHECK(r.margin_pct == 0.0);
}

TEST_CASE("sub-unity TAR candidates fall back to the floor branch") {
  const CandidatePerf a{"a", 0.8, 0.05};
  const CandidatePerf b{"b", 0.9, 0.05};
  const CompareReport r = compare_candidates(a, b, 0.06);
  CHECK(r.winner == -1);  // both produce one token per iteration
}

TEST_CASE("measured comparison prefers the shallow model at equal TAR") {
  ModelConfig deep;
  deep.num_layers = 4;
  deep.num_heads = 2;
  deep.model_dim = 64;
  deep.ffn_dim = 256;
  deep.vocab_size = 257;
  deep.max_positions = 64;
  ModelConfig shallow = deep;
  shallow.num_layers = 1;

  TimingOptions timing;
  timing.repetitions = 9;
  timing.warmup = 2;
  timing.prefix_len = 16;
  const CompareReport r = compare_wide_vs_deep(deep, shallow, 2.5, 2.5, 0.05, 8, timing);
  CHECK(r.winner == 1);
  CHECK(r.b.t_draft_seconds < r.a.t_draft_seconds);
}

TEST_CASE("budget spec JSON parsing applies defaults") {
  const nlohmann::json j{{"budget", 3.5e8}, {"depth_min", 4}, {"depth_max", 24}};
  const ParamBudgetSpec spec = j.get<ParamBudgetSpec>();
  CHECK(spec.budget == 3.5e8);
  CHECK(spec.tolerance == 0.05);
  CHECK(spec.depth_min == 4);
  CHECK(spec.vocab_size == 50272);
  CHECK_FALSE(spec.count.gated_ffn);
}
