#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "egocognav/losses.hpp"
#include "egocognav/model.hpp"
#include "gtest/gtest.h"

namespace eg = egocognav;

namespace {

eg::Episode make_episode(std::size_t len, std::uint64_t seed, std::size_t grid,
                         std::size_t channels) {
  eg::Episode ep;
  ep.id = "model-test";
  ep.grid = grid;
  ep.channels = channels;
  eg::Rng rng(seed);
  for (std::size_t i = 0; i < len; ++i) {
    ep.timeline.push_back(0.1 * static_cast<double>(i));
    eg::BodyDelta d{0.0, 0.0, 0.0};
    if (i > 0) {
      d = {0.12 + 0.02 * rng.normal(), 0.01 * rng.normal(),
           0.05 * rng.normal()};
    }
    ep.motion.push_back(d);
    ep.head.push_back(
        eg::matrix_to_rot6d(eg::RotMatrix::yaw(rng.uniform(-1.5, 1.5))));
    ep.gaze.push_back({rng.uniform(), rng.uniform()});
    ep.goal_xy.push_back({8.0, 2.0});
    ep.uncertainty.push_back(rng.uniform());
    ep.env_labels.push_back(static_cast<std::uint8_t>(rng.uniform_int(32)));
    ep.behavior_labels.push_back(
        static_cast<std::uint8_t>(rng.uniform_int(64)));
  }
  ep.features.resize(len * grid * grid * channels);
  for (auto& f : ep.features) f = static_cast<float>(rng.normal());
  ep.compute_poses();
  ep.validate();
  return ep;
}

eg::ModelConfig small_config() {
  eg::ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_fusion_layers = 1;
  c.n_decoder_layers = 1;
  c.t1 = 4;
  c.t2 = 2;
  c.grid = 2;
  c.channels = 3;
  c.ff_hidden = 16;
  return c;
}

bool same_bits(const eg::Tensor& a, const eg::Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i]))
      return false;
  }
  return true;
}

const eg::Parameter& param(eg::EgoCogNav& m, const std::string& name) {
  eg::Parameter* p = m.params().find(name);
  EXPECT_NE(p, nullptr) << name;
  return *p;
}

void zero_param(eg::EgoCogNav& m, const std::string& name) {
  eg::Parameter* p = m.params().find(name);
  ASSERT_NE(p, nullptr) << name;
  for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = 0.0;
}

// ---- plain-double reference math, independent of the tape ----

using VecD = std::vector<double>;

VecD ref_linear(eg::EgoCogNav& m, const std::string& base, const VecD& x) {
  const eg::Parameter& w = param(m, base + ".w");
  const eg::Parameter* b = m.params().find(base + ".b");
  const std::size_t in = w.value.rows(), out = w.value.cols();
  EXPECT_EQ(x.size(), in);
  VecD y(out, 0.0);
  for (std::size_t j = 0; j < out; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < in; ++i) s += x[i] * w.value.at(i, j);
    y[j] = b ? s + b->value[j] : s;
  }
  return y;
}

VecD ref_layer_norm(eg::EgoCogNav& m, const std::string& base, const VecD& x) {
  const eg::Parameter& gain = param(m, base + ".gain");
  const eg::Parameter& bias = param(m, base + ".bias");
  const std::size_t n = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(var + 1e-5);
  VecD y(n);
  for (std::size_t j = 0; j < n; ++j)
    y[j] = (x[j] - mean) * inv * gain.value[j] + bias.value[j];
  return y;
}

VecD ref_gelu(VecD x) {
  for (double& v : x) v = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
  return x;
}

VecD ref_add(VecD a, const VecD& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

// One residual attention block with a single key/value token: the attention
// mix collapses to the value projection regardless of query content.
VecD ref_block_single(eg::EgoCogNav& m, const std::string& base, VecD x,
                      const VecD& kv) {
  VecD attn = ref_linear(m, base + ".attn.wv", kv);
  attn = ref_linear(m, base + ".attn.wo", attn);
  x = ref_layer_norm(m, base + ".ln_attn", ref_add(x, attn));
  VecD h = ref_linear(m, base + ".ff.fc1", x);
  h = ref_linear(m, base + ".ff.fc2", ref_gelu(h));
  return ref_layer_norm(m, base + ".ln_ff", ref_add(x, h));
}

VecD tensor_row(const eg::Tensor& t, std::size_t r) {
  VecD out(t.cols());
  for (std::size_t j = 0; j < t.cols(); ++j) out[j] = t.at(r, j);
  return out;
}

}  // namespace

TEST(ModelConfig, Validation) {
  eg::ModelConfig c;
  c.d_model = 10;
  EXPECT_THROW(c.check(), eg::BadConfig);
  c = eg::ModelConfig{};
  c.t2 = 0;
  EXPECT_THROW(c.check(), eg::BadConfig);
  c = eg::ModelConfig{};
  c.arch = "mlp";
  EXPECT_THROW(c.check(), eg::BadConfig);
  EXPECT_NO_THROW(eg::ModelConfig{}.check());
}

TEST(ModelConfig, JsonRoundTrip) {
  eg::ModelConfig c = small_config();
  c.use_gaze = false;
  eg::ModelConfig back = eg::ModelConfig::from_json(c.to_json());
  EXPECT_EQ(back.d_model, c.d_model);
  EXPECT_EQ(back.t1, c.t1);
  EXPECT_EQ(back.ff_hidden, c.ff_hidden);
  EXPECT_FALSE(back.use_gaze);
  EXPECT_EQ(back.arch, "egocognav");
}

TEST(ModelConfig, UnknownKeyRejected) {
  nlohmann::json j{{"d_model", 16}, {"heads", 4}};
  EXPECT_THROW(eg::ModelConfig::from_json(j), eg::BadConfig);
}

TEST(ModelForward, ShapesAndRanges) {
  eg::ModelConfig cfg = small_config();
  eg::EgoCogNav model(cfg, 17);
  eg::Episode ep = make_episode(10, 3, cfg.grid, cfg.channels);
  eg::WindowSample s{&ep, 1, 4, 2};
  eg::ForecastBundle out = model.predict(s);
  EXPECT_EQ(out.traj.rows(), 2u);
  EXPECT_EQ(out.traj.cols(), 3u);
  EXPECT_EQ(out.head.rows(), 2u);
  EXPECT_EQ(out.head.cols(), 6u);
  EXPECT_EQ(out.env_logits.cols(), 5u);
  EXPECT_EQ(out.behavior_logits.cols(), 6u);
  EXPECT_GT(out.u_hat, 0.0);
  EXPECT_LT(out.u_hat, 1.0);
  EXPECT_TRUE(out.traj.all_finite());
  EXPECT_TRUE(out.head.all_finite());
}

TEST(ModelForward, DefaultConfigShapes) {
  eg::ModelConfig cfg;
  eg::EgoCogNav model(cfg, 1);
  eg::Episode ep = make_episode(45, 9, cfg.grid, cfg.channels);
  eg::WindowSample s{&ep, 2, 30, 10};
  eg::ForecastBundle out = model.predict(s);
  EXPECT_EQ(out.traj.rows(), 10u);
  EXPECT_EQ(out.head.rows(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    eg::Rot6D r;
    for (std::size_t j = 0; j < 6; ++j) r.a[j] = out.head.at(i, j);
    EXPECT_TRUE(eg::rot6d_to_matrix(r).is_rotation(1e-6));
  }
}

TEST(ModelForward, SampleShapeChecked) {
  eg::ModelConfig cfg = small_config();
  eg::EgoCogNav model(cfg, 2);
  eg::Episode ep = make_episode(12, 4, cfg.grid, cfg.channels);
  eg::WindowSample bad_span{&ep, 0, 5, 2};
  EXPECT_THROW(model.predict(bad_span), eg::ShapeMismatch);
  eg::Episode wrong_grid = make_episode(12, 4, 3, cfg.channels);
  eg::WindowSample s{&wrong_grid, 0, 4, 2};
  EXPECT_THROW(model.predict(s), eg::ShapeMismatch);
}

TEST(EncodeVideo, ZeroFeaturesGiveStepIdenticalTokens) {
  eg::ModelConfig cfg = small_config();
  eg::EgoCogNav model(cfg, 5);
  eg::Tape t;
  eg::Tensor feat = eg::Tensor::zeros(cfg.t1, cfg.channels);
  const eg::Tensor& tokens = t.value(model.encode_video(t, feat));
  ASSERT_EQ(tokens.rows(), cfg.t1);
  ASSERT_EQ(tokens.cols(), cfg.d_model);
  for (std::size_t r = 1; r < tokens.rows(); ++r) {
    for (std::size_t j = 0; j < tokens.cols(); ++j) {
      EXPECT_DOUBLE_EQ(tokens.at(r, j), tokens.at(0, j));
    }
  }
}

TEST(EncodeVideo, SpatialPermutationInvariance) {
  eg::ModelConfig cfg = small_config();
  eg::EgoCogNav model(cfg, 6);
  eg::Episode ep = make_episode(10, 8, cfg.grid, cfg.channels);
  eg::Episode shuffled = ep;
  const std::size_t cells = cfg.grid * cfg.grid;
  std::vector<std::size_t> perm(cells);
  for (std::size_t i = 0; i < cells; ++i) perm[i] = i;
  eg::Rng rng(99);
  rng.shuffle(perm);
  for (std::size_t step = 0; step < ep.length(); ++step) {
    for (std::size_t cell = 0; cell < cells; ++cell) {
      for (std::size_t c = 0; c < cfg.channels; ++c) {
        shuffled.features[(step * cells + cell) * cfg.channels + c] =
            ep.features[(step * cells + perm[cell]) * cfg.channels + c];
      }
    }
  }
  eg::WindowSample sa{&ep, 0, 4, 2};
  eg::WindowSample sb{&shuffled, 0, 4, 2};
  eg::Tape ta, tb;
  const eg::Tensor& va = ta.value(model.encode_video(ta, sa.features_past()));
  const eg::Tensor& vb = tb.value(model.encode_video(tb, sb.features_past()));
  for (std::size_t i = 0; i < va.size(); ++i) {
    EXPECT_NEAR(va[i], vb[i], 1e-12);
  }
}

TEST(EncodeActions, ZeroInputBiasPattern) {
  eg::ModelConfig cfg = small_config();
  eg::EgoCogNav model(cfg, 7);
  eg::Tape t;
  auto streams = model.encode_actions(t, eg::Tensor::zeros(cfg.t1, 3),
                                      eg::Tensor::zeros(cfg.t1, 6),
                                      eg::Tensor::zeros(cfg.t1, 2),
                                      eg::Tensor::zeros(cfg.t1, 3));
  const eg::Tensor& me = t.value(streams.motion);
  const eg::Parameter& bias = param(model, "motion_embed.b");
  for (std::size_t r = 0; r < me.rows(); ++r) {
    for (std::size_t j = 0; j < me.cols(); ++j) {
      EXPECT_DOUBLE_EQ(me.at(r, j), bias.value[j]);
    }
  }
}

TEST(ConditionOnGoal, EndpointsBitExact) {
  eg::Rng rng(21);
  eg::Tensor hf = eg::Tensor::zeros(3, 4);
  eg::Tensor hg = eg::Tensor::zeros(3, 4);
  for (std::size_t i = 0; i < hf.size(); ++i) {
    hf[i] = rng.normal();
    hg[i] = rng.normal();
  }
  eg::Tape t;
  eg::Var a = t.constant(hf);
  eg::Var b = t.constant(hg);
  EXPECT_TRUE(same_bits(t.value(eg::condition_on_goal(t, a, b, t.scalar(0.0))),
                        hf));
  EXPECT_TRUE(same_bits(t.value(eg::condition_on_goal(t, a, b, t.scalar(1.0))),
                        hg));
}

TEST(ConditionOnGoal, ScalarToyMidpoint) {
  eg::Tape t;
  eg::Var out = eg::condition_on_goal(t, t.scalar(2.0), t.scalar(4.0),
                                      t.scalar(0.5));
  EXPECT_DOUBLE_EQ(t.value(out).scalar_value(), 3.0);
}

TEST(PredictUncertainty, ZeroWeightsGiveHalf) {
  eg::ModelConfig cfg = small_config();
  eg::EgoCogNav model(cfg, 8);
  zero_param(model, "u_head.fc1.w");
  zero_param(model, "u_head.fc1.b");
  zero_param(model, "u_head.fc2.w");
  zero_param(model, "u_head.fc2.b");
  eg::Rng rng(4);
  eg::Tensor h = eg::Tensor::zeros(cfg.t1, cfg.d_model);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = rng.normal();
  eg::Tape t;
  eg::Var u = model.predict_uncertainty(t, t.constant(h));
  EXPECT_EQ(t.value(u).scalar_value(), 0.5);
}

TEST(AuxiliaryHeads, ZeroWeightsGiveZeroLogits) {
  eg::ModelConfig cfg = small_config();
  eg::EgoCogNav model(cfg, 9);
  zero_param(model, "env_head.w");
  zero_param(model, "env_head.b");
  eg::Rng rng(5);
  eg::Tensor h = eg::Tensor::zeros(cfg.t1, cfg.d_model);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = rng.normal();
  eg::Tape t;
  auto aux = model.auxiliary_heads(t, t.constant(h));
  const eg::Tensor& env = t.value(aux.env);
  for (std::size_t i = 0; i < env.size(); ++i) EXPECT_EQ(env[i], 0.0);
}

TEST(ModelForward, SingleStepMatchesNaiveReference) {
  eg::ModelConfig cfg;
  cfg.d_model = 4;
  cfg.n_heads = 2;
  cfg.n_fusion_layers = 1;
  cfg.n_decoder_layers = 1;
  cfg.t1 = 1;
  cfg.t2 = 1;
  cfg.grid = 1;
  cfg.channels = 2;
  cfg.ff_hidden = 8;
  eg::EgoCogNav model(cfg, 31);
  eg::Episode ep = make_episode(4, 13, cfg.grid, cfg.channels);
  eg::WindowSample s{&ep, 1, 1, 1};

  VecD video = ref_linear(model, "video_proj", tensor_row(s.features_past(), 0));
  video = ref_block_single(model, "video_ctx", video, video);
  VecD me = ref_linear(model, "motion_embed", tensor_row(s.motion_past(), 0));
  VecD he = ref_linear(model, "head_embed", tensor_row(s.head_past(), 0));
  VecD ge = ref_linear(model, "gaze_embed", tensor_row(s.gaze_past(), 0));
  VecD goal_e = ref_linear(model, "goal_embed", tensor_row(s.goal_past(), 0));
  VecD h = ref_block_single(model, "fuse0.motion", video, me);
  h = ref_block_single(model, "fuse0.head", h, he);
  h = ref_block_single(model, "fuse0.gaze", h, ge);
  VecD hidden = ref_gelu(ref_linear(model, "u_head.fc1", h));
  const double logit = ref_linear(model, "u_head.fc2", hidden)[0];
  const double u = 1.0 / (1.0 + std::exp(-logit));
  VecD htilde(cfg.d_model);
  for (std::size_t j = 0; j < cfg.d_model; ++j)
    htilde[j] = (1.0 - u) * h[j] + u * goal_e[j];
  VecD tq = tensor_row(param(model, "traj_queries").value, 0);
  tq = ref_block_single(model, "traj_dec0", tq, htilde);
  VecD traj = ref_linear(model, "traj_out", tq);
  VecD hq = tensor_row(param(model, "head_queries").value, 0);
  hq = ref_block_single(model, "head_dec0", hq, htilde);
  VecD head6 = ref_linear(model, "head_out", hq);
  VecD env = ref_linear(model, "env_head", h);
  VecD beh = ref_linear(model, "beh_head", h);

  eg::ForecastBundle out = model.predict(s);
  EXPECT_NEAR(out.u_hat, u, 1e-9);
  for (std::size_t j = 0; j < 3; ++j)
    EXPECT_NEAR(out.traj.at(0, j), traj[j], 1e-9);
  for (std::size_t j = 0; j < 6; ++j)
    EXPECT_NEAR(out.head.at(0, j), head6[j], 1e-9);
  for (std::size_t j = 0; j < 5; ++j)
    EXPECT_NEAR(out.env_logits[j], env[j], 1e-9);
  for (std::size_t j = 0; j < 6; ++j)
    EXPECT_NEAR(out.behavior_logits[j], beh[j], 1e-9);
}

TEST(ModelGradients, FullLossFiniteDifference) {
  eg::ModelConfig cfg = small_config();
  eg::EgoCogNav model(cfg, 11);
  eg::Episode ep = make_episode(8, 5, cfg.grid, cfg.channels);
  eg::WindowSample s{&ep, 1, 4, 2};
  eg::LossWeights w;

  eg::Tape t;
  eg::LossBreakdown parts = eg::window_loss(t, model.forward(t, s), s, w);
  t.backward(parts.total);

  auto loss_fn = [&]() {
    eg::Tape nt;
    return nt
        .value(eg::window_loss(nt, model.forward(nt, s), s, w).total)
        .scalar_value();
  };
  eg::Rng rng(77);
  for (std::size_t i = 0; i < model.params().count(); ++i) {
    eg::Parameter& p = model.params().at(i);
    eg::Tensor analytic = p.grad;
    const double err =
        eg::finite_difference_check(loss_fn, p, analytic, 1e-5, 6, rng);
    EXPECT_LT(err, 1e-3) << p.name;
  }
}

TEST(ModelGradients, NoDeadBranchesUnderTotalLoss) {
  eg::ModelConfig cfg = small_config();
  eg::EgoCogNav model(cfg, 12);
  eg::Episode ep = make_episode(9, 6, cfg.grid, cfg.channels);
  eg::WindowSample s{&ep, 0, 4, 2};
  eg::LossWeights w;
  eg::Tape t;
  t.backward(eg::window_loss(t, model.forward(t, s), s, w).total);
  for (std::size_t i = 0; i < model.params().count(); ++i) {
    const eg::Parameter& p = model.params().at(i);
    double peak = 0.0;
    for (std::size_t j = 0; j < p.grad.size(); ++j)
      peak = std::max(peak, std::fabs(p.grad[j]));
    EXPECT_GT(peak, 0.0) << p.name;
  }
}

TEST(ModelGradients, OtherHeadLossLeavesDecoderQueriesUntouched) {
  eg::ModelConfig cfg = small_config();
  eg::EgoCogNav model(cfg, 13);
  eg::Episode ep = make_episode(9, 7, cfg.grid, cfg.channels);
  eg::WindowSample s{&ep, 0, 4, 2};
  eg::LossWeights w;
  eg::Tape t;
  eg::LossBreakdown parts = eg::window_loss(t, model.forward(t, s), s, w);
  t.backward(parts.traj);
  for (const char* name : {"head_queries", "head_out.w", "head_dec0.attn.wq.w"}) {
    const eg::Parameter& p = param(model, name);
    for (std::size_t j = 0; j < p.grad.size(); ++j)
      EXPECT_EQ(p.grad[j], 0.0) << name;
  }
  const eg::Parameter& tq = param(model, "traj_queries");
  double peak = 0.0;
  for (std::size_t j = 0; j < tq.grad.size(); ++j)
    peak = std::max(peak, std::fabs(tq.grad[j]));
  EXPECT_GT(peak, 0.0);
}

TEST(ModelForward, DeterministicPerSeed) {
  eg::ModelConfig cfg = small_config();
  eg::Episode ep = make_episode(10, 14, cfg.grid, cfg.channels);
  eg::WindowSample s{&ep, 2, 4, 2};
  eg::EgoCogNav a(cfg, 42), b(cfg, 42);
  eg::ForecastBundle outa = a.predict(s);
  eg::ForecastBundle outb = b.predict(s);
  EXPECT_TRUE(same_bits(outa.traj, outb.traj));
  EXPECT_TRUE(same_bits(outa.head, outb.head));
  EXPECT_EQ(outa.u_hat, outb.u_hat);
  eg::ForecastBundle outa2 = a.predict(s);
  EXPECT_TRUE(same_bits(outa.traj, outa2.traj));
  eg::EgoCogNav c(cfg, 43);
  EXPECT_FALSE(same_bits(outa.traj, c.predict(s).traj));
}

TEST(ModelForward, ModalityMasking) {
  eg::ModelConfig cfg = small_config();
  eg::Episode ep = make_episode(10, 15, cfg.grid, cfg.channels);
  eg::Episode other = ep;
  eg::Rng rng(55);
  for (auto& f : other.features) f = static_cast<float>(rng.normal());
  for (auto& g : other.gaze) g = {rng.uniform(), rng.uniform()};
  eg::WindowSample sa{&ep, 1, 4, 2};
  eg::WindowSample sb{&other, 1, 4, 2};

  eg::ModelConfig masked = cfg;
  masked.use_video = false;
  masked.use_gaze = false;
  eg::EgoCogNav blind(masked, 50);
  EXPECT_TRUE(same_bits(blind.predict(sa).traj, blind.predict(sb).traj));

  eg::EgoCogNav sighted(cfg, 50);
  EXPECT_FALSE(same_bits(sighted.predict(sa).traj, sighted.predict(sb).traj));
}

TEST(MTransformer, ShapesAndLossParts) {
  eg::ModelConfig cfg = small_config();
  cfg.arch = "m_transformer";
  eg::MTransformer model(cfg, 19);
  eg::Episode ep = make_episode(10, 16, cfg.grid, cfg.channels);
  eg::WindowSample s{&ep, 0, 4, 2};
  eg::ForecastBundle out = model.predict(s);
  EXPECT_EQ(out.traj.rows(), 2u);
  EXPECT_EQ(out.traj.cols(), 3u);
  EXPECT_EQ(out.head.rows(), 2u);
  EXPECT_EQ(out.head.cols(), 6u);
  EXPECT_EQ(out.u_hat, 0.5);

  eg::LossWeights w;
  eg::Tape t;
  eg::LossBreakdown parts = eg::window_loss(t, model.forward(t, s), s, w);
  EXPECT_EQ(t.value(parts.u).scalar_value(), 0.0);
  EXPECT_EQ(t.value(parts.aux).scalar_value(), 0.0);
  const double lt = t.value(parts.traj).scalar_value();
  const double lh = t.value(parts.head).scalar_value();
  EXPECT_NEAR(t.value(parts.total).scalar_value(), lt + lh, 1e-12);
}

TEST(MTransformer, DeterministicAndTrainable) {
  eg::ModelConfig cfg = small_config();
  cfg.arch = "m_transformer";
  eg::Episode ep = make_episode(10, 18, cfg.grid, cfg.channels);
  eg::WindowSample s{&ep, 1, 4, 2};
  eg::MTransformer a(cfg, 77), b(cfg, 77);
  EXPECT_TRUE(same_bits(a.predict(s).traj, b.predict(s).traj));

  eg::LossWeights w;
  eg::Tape t;
  t.backward(eg::window_loss(t, a.forward(t, s), s, w).total);
  double peak = 0.0;
  for (std::size_t i = 0; i < a.params().count(); ++i) {
    const eg::Parameter& p = a.params().at(i);
    for (std::size_t j = 0; j < p.grad.size(); ++j)
      peak = std::max(peak, std::fabs(p.grad[j]));
  }
  EXPECT_GT(peak, 0.0);
}
