#include "egocognav/synth.hpp"

#include <gtest/gtest.h>

#include <set>

namespace egocognav {
namespace {

WorldConfig corridor_config() {
  WorldConfig cfg;
  cfg.nodes.push_back(WorldNode{0.0, 0.0});
  cfg.nodes.push_back(WorldNode{60.0, 0.0});
  cfg.edges.push_back({0, 1});
  cfg.start = 0;
  cfg.goal = 1;
  return cfg;
}

// Four arms meeting at a center with no directional preference.
WorldConfig crossroads_config() {
  WorldConfig cfg;
  cfg.nodes.push_back(WorldNode{0.0, 0.0});  // center
  cfg.nodes[0].ambiguity = 1.0;
  cfg.nodes.push_back(WorldNode{-20.0, 0.0});
  cfg.nodes.push_back(WorldNode{20.0, 0.0});
  cfg.nodes.push_back(WorldNode{0.0, 20.0});
  cfg.nodes.push_back(WorldNode{0.0, -20.0});
  for (int arm = 1; arm <= 4; ++arm) cfg.edges.push_back({0, arm});
  cfg.start = 1;
  cfg.goal = 2;
  cfg.wrong_rate = 0.0;  // keep the walk on the planned route
  cfg.hes_steps = 3;
  return cfg;
}

WorldConfig demo_config() {
  return WorldConfig::from_file(std::filesystem::path(EGOCOGNAV_SOURCE_DIR) /
                                "configs" / "world_demo.json");
}

TEST(SynthCorridor, SingleChoiceMeansZeroUncertainty) {
  const Episode ep = synth_generate(corridor_config(), 5);
  ep.validate();
  EXPECT_GT(ep.length(), 40u);
  for (double u : ep.uncertainty) EXPECT_DOUBLE_EQ(u, 0.0);
  for (uint8_t b : ep.behavior_labels) EXPECT_EQ(b, 0);
}

TEST(SynthCrossroads, UniformChoicesPeakAtOne) {
  const Episode ep = synth_generate(crossroads_config(), 3);
  double umax = 0.0;
  for (double u : ep.uncertainty) umax = std::max(umax, u);
  EXPECT_NEAR(umax, 1.0, 1e-12);
  // The junction arrival step sits on the center node, which lies 20 m
  // ahead of the start in the episode frame.
  bool at_center_with_full_u = false;
  for (size_t i = 0; i < ep.length(); ++i) {
    if (std::hypot(ep.poses[i].x - 20.0, ep.poses[i].y) < 1e-6 &&
        std::fabs(ep.uncertainty[i] - 1.0) < 1e-12) {
      at_center_with_full_u = true;
    }
  }
  EXPECT_TRUE(at_center_with_full_u);
}

TEST(SynthCrossroads, HesitationPausesTheWalk) {
  const WorldConfig cfg = crossroads_config();
  const Episode ep = synth_generate(cfg, 3);
  int hes = 0;
  for (size_t i = 0; i < ep.length(); ++i) {
    if (ep.behavior_labels[i] & behavior_label::kHes) {
      ++hes;
      EXPECT_DOUBLE_EQ(ep.motion[i].dx, 0.0);
      EXPECT_DOUBLE_EQ(ep.motion[i].dy, 0.0);
      EXPECT_DOUBLE_EQ(ep.motion[i].dpsi, 0.0);
    }
  }
  EXPECT_EQ(hes, cfg.hes_steps);
}

TEST(SynthDeterminism, SameSeedSameEpisode) {
  const WorldConfig cfg = demo_config();
  const Episode a = synth_generate(cfg, 17);
  const Episode b = synth_generate(cfg, 17);
  ASSERT_EQ(a.length(), b.length());
  for (size_t i = 0; i < a.length(); ++i) {
    EXPECT_EQ(a.motion[i].dx, b.motion[i].dx);
    EXPECT_EQ(a.motion[i].dy, b.motion[i].dy);
    EXPECT_EQ(a.motion[i].dpsi, b.motion[i].dpsi);
    EXPECT_EQ(a.uncertainty[i], b.uncertainty[i]);
    EXPECT_EQ(a.behavior_labels[i], b.behavior_labels[i]);
    for (int j = 0; j < 6; ++j) EXPECT_EQ(a.head[i].a[j], b.head[i].a[j]);
  }
  EXPECT_EQ(a.features, b.features);
}

TEST(SynthDeterminism, DifferentSeedsDiffer) {
  const WorldConfig cfg = demo_config();
  // Seeds picked to share the same route endpoints.
  const Episode a = synth_generate(cfg, 0);
  const Episode b = synth_generate(cfg, 12);
  bool differs = a.length() != b.length();
  for (size_t i = 0; !differs && i < a.length(); ++i) {
    differs = a.motion[i].dx != b.motion[i].dx;
  }
  EXPECT_TRUE(differs);
}

TEST(SynthDemoWorld, WrongTurnsReadMoreUncertainThanNeutral) {
  const WorldConfig cfg = demo_config();
  int checked = 0;
  for (uint64_t seed = 0; seed < 12; ++seed) {
    const Episode ep = synth_generate(cfg, seed);
    double wb_min = 1e9, neutral_sum = 0.0;
    size_t neutral_n = 0;
    bool has_wb = false;
    for (size_t i = 0; i < ep.length(); ++i) {
      const uint8_t beh = ep.behavior_labels[i];
      if (beh & (behavior_label::kWrong | behavior_label::kBack)) {
        wb_min = std::min(wb_min, ep.uncertainty[i]);
        has_wb = true;
      } else if (beh == 0) {
        neutral_sum += ep.uncertainty[i];
        ++neutral_n;
      }
    }
    if (has_wb) {
      ++checked;
      ASSERT_GT(neutral_n, 0u);
      EXPECT_GT(wb_min, neutral_sum / static_cast<double>(neutral_n));
      EXPECT_GE(wb_min, cfg.wrong_gate);
    }
  }
  EXPECT_GT(checked, 0) << "no wrong turns generated over 12 seeds";
}

TEST(SynthDemoWorld, AllLabelKindsOccur) {
  const WorldConfig cfg = demo_config();
  uint8_t beh_seen = 0, env_seen = 0;
  for (uint64_t seed = 0; seed < 12; ++seed) {
    const Episode ep = synth_generate(cfg, seed);
    for (uint8_t b : ep.behavior_labels) beh_seen |= b;
    for (uint8_t e : ep.env_labels) env_seen |= e;
  }
  EXPECT_EQ(beh_seen, 63) << "behavior taxonomy incomplete";
  EXPECT_EQ(env_seen, 31) << "environment taxonomy incomplete";
}

TEST(SynthDemoWorld, EpisodesValidateAndWindow) {
  const WorldConfig cfg = demo_config();
  for (uint64_t seed = 0; seed < 4; ++seed) {
    const Episode ep = synth_generate(cfg, seed);
    ep.validate();
    EXPECT_GE(ep.length(), 40u);
    EXPECT_FALSE(extract_windows(ep, 4).empty());
    // The walk ends at the goal, expressed in the episode frame.
    EXPECT_LT(std::hypot(ep.poses.back().x - ep.goal_xy.back()[0],
                         ep.poses.back().y - ep.goal_xy.back()[1]),
              1e-6);
  }
}

// U should be linearly decodable from the pooled features, since the
// generator embeds it as one of the scene descriptors.
TEST(SynthFeatures, UncertaintyRecoverableFromPooledFeatures) {
  const WorldConfig cfg = demo_config();
  const Episode ep = synth_generate(cfg, 2);
  const size_t n = ep.length();
  const size_t d = ep.channels + 1;
  std::vector<std::vector<double>> x(n, std::vector<double>(d, 1.0));
  for (size_t i = 0; i < n; ++i) {
    const auto pooled = ep.pooled_features(i);
    for (size_t c = 0; c < ep.channels; ++c) x[i][c + 1] = pooled[c];
  }
  // Ridge-regularized normal equations, solved by Gauss elimination.
  std::vector<std::vector<double>> ata(d, std::vector<double>(d, 0.0));
  std::vector<double> aty(d, 0.0);
  for (size_t i = 0; i < n; ++i) {
    for (size_t r = 0; r < d; ++r) {
      for (size_t c = 0; c < d; ++c) ata[r][c] += x[i][r] * x[i][c];
      aty[r] += x[i][r] * ep.uncertainty[i];
    }
  }
  for (size_t r = 0; r < d; ++r) ata[r][r] += 1e-8;
  for (size_t col = 0; col < d; ++col) {
    size_t piv = col;
    for (size_t r = col + 1; r < d; ++r) {
      if (std::fabs(ata[r][col]) > std::fabs(ata[piv][col])) piv = r;
    }
    std::swap(ata[piv], ata[col]);
    std::swap(aty[piv], aty[col]);
    for (size_t r = col + 1; r < d; ++r) {
      const double f = ata[r][col] / ata[col][col];
      for (size_t c = col; c < d; ++c) ata[r][c] -= f * ata[col][c];
      aty[r] -= f * aty[col];
    }
  }
  std::vector<double> w(d, 0.0);
  for (size_t r = d; r-- > 0;) {
    double s = aty[r];
    for (size_t c = r + 1; c < d; ++c) s -= ata[r][c] * w[c];
    w[r] = s / ata[r][r];
  }
  double ss_res = 0.0, ss_tot = 0.0, mean = 0.0;
  for (size_t i = 0; i < n; ++i) mean += ep.uncertainty[i];
  mean /= static_cast<double>(n);
  for (size_t i = 0; i < n; ++i) {
    double pred = 0.0;
    for (size_t c = 0; c < d; ++c) pred += w[c] * x[i][c];
    ss_res += (pred - ep.uncertainty[i]) * (pred - ep.uncertainty[i]);
    ss_tot += (ep.uncertainty[i] - mean) * (ep.uncertainty[i] - mean);
  }
  EXPECT_GT(1.0 - ss_res / ss_tot, 0.9);
}

TEST(SynthConfig, Validation) {
  WorldConfig empty;
  EXPECT_THROW(empty.check(), BadConfig);

  WorldConfig bad_edge = corridor_config();
  bad_edge.edges.push_back({0, 7});
  EXPECT_THROW(bad_edge.check(), BadConfig);

  WorldConfig disconnected = corridor_config();
  disconnected.nodes.push_back(WorldNode{100.0, 100.0});
  disconnected.goal = 2;
  EXPECT_THROW(synth_generate(disconnected, 0), BadConfig);

  WorldConfig bad_amb = corridor_config();
  bad_amb.nodes[0].ambiguity = 1.5;
  EXPECT_THROW(bad_amb.check(), BadConfig);
}

TEST(SynthConfig, JsonParsing) {
  const auto cfg = WorldConfig::from_json(nlohmann::json::parse(R"({
    "nodes": [{"x": 0, "y": 0}, {"x": 10, "y": 0, "occluded": true}],
    "edges": [[0, 1]],
    "start": 0, "goal": 1,
    "speed": 1.0, "kappa": 2.5
  })"));
  EXPECT_EQ(cfg.nodes.size(), 2u);
  EXPECT_TRUE(cfg.nodes[1].occluded);
  EXPECT_DOUBLE_EQ(cfg.kappa, 2.5);
  EXPECT_THROW(WorldConfig::from_json(nlohmann::json::parse("{}")), BadConfig);
}

}  // namespace
}  // namespace egocognav
