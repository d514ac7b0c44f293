#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "egocognav/episode.hpp"
#include "egocognav/nn.hpp"
#include "json.hpp"

namespace egocognav {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_fusion_layers = 2;
  std::size_t n_decoder_layers = 2;
  std::size_t t1 = 30;
  std::size_t t2 = 10;
  std::size_t grid = 4;
  std::size_t channels = 32;
  std::size_t env_classes = 5;
  std::size_t behavior_classes = 6;
  std::size_t ff_hidden = 128;
  bool use_video = true;
  bool use_motion = true;
  bool use_head = true;
  bool use_gaze = true;
  std::string arch = "egocognav";

  void check() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
      throw BadConfig("d_model must be a positive multiple of n_heads");
    if (t1 == 0 || t2 == 0) throw BadConfig("window lengths must be positive");
    if (grid == 0 || channels == 0) throw BadConfig("feature dims must be positive");
    if (env_classes == 0 || behavior_classes == 0)
      throw BadConfig("class counts must be positive");
    if (ff_hidden == 0) throw BadConfig("ff_hidden must be positive");
    if (arch != "egocognav" && arch != "m_transformer")
      throw BadConfig("unknown arch: " + arch);
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"d_model", d_model},
                          {"n_heads", n_heads},
                          {"n_fusion_layers", n_fusion_layers},
                          {"n_decoder_layers", n_decoder_layers},
                          {"t1", t1},
                          {"t2", t2},
                          {"grid", grid},
                          {"channels", channels},
                          {"env_classes", env_classes},
                          {"behavior_classes", behavior_classes},
                          {"ff_hidden", ff_hidden},
                          {"use_video", use_video},
                          {"use_motion", use_motion},
                          {"use_head", use_head},
                          {"use_gaze", use_gaze},
                          {"arch", arch}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    static const char* known[] = {
        "d_model",     "n_heads",     "n_fusion_layers", "n_decoder_layers",
        "t1",          "t2",          "grid",            "channels",
        "env_classes", "behavior_classes", "ff_hidden",  "use_video",
        "use_motion",  "use_head",    "use_gaze",        "arch"};
    for (const auto& item : j.items()) {
      bool ok = false;
      for (const char* k : known) ok = ok || item.key() == k;
      if (!ok) throw BadConfig("unknown model config key: " + item.key());
    }
    ModelConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.n_fusion_layers = j.value("n_fusion_layers", c.n_fusion_layers);
    c.n_decoder_layers = j.value("n_decoder_layers", c.n_decoder_layers);
    c.t1 = j.value("t1", c.t1);
    c.t2 = j.value("t2", c.t2);
    c.grid = j.value("grid", c.grid);
    c.channels = j.value("channels", c.channels);
    c.env_classes = j.value("env_classes", c.env_classes);
    c.behavior_classes = j.value("behavior_classes", c.behavior_classes);
    c.ff_hidden = j.value("ff_hidden", c.ff_hidden);
    c.use_video = j.value("use_video", c.use_video);
    c.use_motion = j.value("use_motion", c.use_motion);
    c.use_gaze = j.value("use_gaze", c.use_gaze);
    c.use_head = j.value("use_head", c.use_head);
    c.arch = j.value("arch", c.arch);
    c.check();
    return c;
  }
};

// Plain-value forecast for one window.
struct ForecastBundle {
  Tensor traj;             // (t2, 3) body-frame deltas
  Tensor head;             // (t2, 6) rotation vectors
  double u_hat = 0.5;      // perceived path uncertainty in [0,1]
  Tensor env_logits;       // (1, env_classes)
  Tensor behavior_logits;  // (1, behavior_classes)
};

// Graph handles for the same outputs, for building losses on a live tape.
struct ForecastVars {
  Var traj;
  Var head;
  Var u;
  Var env_logits;
  Var behavior_logits;
};

// Per-step mix of fused context and goal stream, gated by predicted
// uncertainty: out_t = (1 - u)*h_fuse_t + u*h_goal_t. Written literally so the
// endpoints are bit-exact: u = 0 keeps h_fuse, u = 1 keeps h_goal.
inline Var condition_on_goal(Tape& t, Var h_fuse, Var h_goal, Var u_hat) {
  return t.add(t.smul(h_fuse, t.affine(u_hat, -1.0, 1.0)),
               t.smul(h_goal, u_hat));
}

namespace model_detail {

inline Tensor zeros_like(const Tensor& t) {
  return Tensor::zeros(t.rows(), t.cols());
}

inline Tensor label_bits(std::uint8_t mask, std::size_t n) {
  Tensor out = Tensor::zeros(1, n);
  for (std::size_t i = 0; i < n; ++i)
    out.at(0, i) = (mask >> i) & 1u ? 1.0 : 0.0;
  return out;
}

}  // namespace model_detail

// Joint forecaster: projected video features fused with motion, head and gaze
// streams by cross-attention, a scalar uncertainty head, goal conditioning,
// and two query decoders for future trajectory and head rotation.
class EgoCogNav {
 public:
  EgoCogNav(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.check();
    if (cfg_.arch != "egocognav") throw BadConfig("config arch is not egocognav");
    Rng rng(seed);
    const std::size_t d = cfg_.d_model;
    posenc_ = sinusoidal_positions(cfg_.t1, d);
    video_proj_ = Linear(store_, "video_proj", cfg_.channels, d, rng);
    video_ctx_ = ResidualAttention(store_, "video_ctx", d, cfg_.n_heads,
                                   cfg_.ff_hidden, rng);
    motion_embed_ = Linear(store_, "motion_embed", 3, d, rng);
    head_embed_ = Linear(store_, "head_embed", 6, d, rng);
    gaze_embed_ = Linear(store_, "gaze_embed", 2, d, rng);
    goal_embed_ = Linear(store_, "goal_embed", 3, d, rng);
    for (std::size_t l = 0; l < cfg_.n_fusion_layers; ++l) {
      const std::string base = "fuse" + std::to_string(l);
      fuse_motion_.emplace_back(store_, base + ".motion", d, cfg_.n_heads,
                                cfg_.ff_hidden, rng);
      fuse_head_.emplace_back(store_, base + ".head", d, cfg_.n_heads,
                              cfg_.ff_hidden, rng);
      fuse_gaze_.emplace_back(store_, base + ".gaze", d, cfg_.n_heads,
                              cfg_.ff_hidden, rng);
    }
    u_fc1_ = Linear(store_, "u_head.fc1", d, d, rng);
    u_fc2_ = Linear(store_, "u_head.fc2", d, 1, rng);
    traj_queries_ = &store_.create("traj_queries", {cfg_.t2, d}, d, rng, true);
    head_queries_ = &store_.create("head_queries", {cfg_.t2, d}, d, rng, true);
    for (std::size_t l = 0; l < cfg_.n_decoder_layers; ++l) {
      traj_dec_.emplace_back(store_, "traj_dec" + std::to_string(l), d,
                             cfg_.n_heads, cfg_.ff_hidden, rng);
      head_dec_.emplace_back(store_, "head_dec" + std::to_string(l), d,
                             cfg_.n_heads, cfg_.ff_hidden, rng);
    }
    traj_out_ = Linear(store_, "traj_out", d, 3, rng);
    head_out_ = Linear(store_, "head_out", d, 6, rng);
    env_head_ = Linear(store_, "env_head", d, cfg_.env_classes, rng);
    beh_head_ = Linear(store_, "beh_head", d, cfg_.behavior_classes, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // Spatially pooled features in, one temporal context token per step out.
  Var encode_video(Tape& t, const Tensor& pooled_features) {
    if (pooled_features.rows() != cfg_.t1 ||
        pooled_features.cols() != cfg_.channels)
      throw ShapeMismatch("video features " + pooled_features.shape_str());
    Var pos = t.constant(posenc_);
    Var tokens = video_proj_(t, t.constant(pooled_features));
    return video_ctx_(t, tokens, tokens, pos, pos);
  }

  struct ActionStreams {
    Var motion;
    Var head;
    Var gaze;
    Var goal;
  };

  ActionStreams encode_actions(Tape& t, const Tensor& motion,
                               const Tensor& head, const Tensor& gaze,
                               const Tensor& goal) {
    if (motion.rows() != cfg_.t1 || motion.cols() != 3)
      throw ShapeMismatch("motion stream " + motion.shape_str());
    if (head.rows() != cfg_.t1 || head.cols() != 6)
      throw ShapeMismatch("head stream " + head.shape_str());
    if (gaze.rows() != cfg_.t1 || gaze.cols() != 2)
      throw ShapeMismatch("gaze stream " + gaze.shape_str());
    if (goal.rows() != cfg_.t1 || goal.cols() != 3)
      throw ShapeMismatch("goal stream " + goal.shape_str());
    return {motion_embed_(t, t.constant(motion)),
            head_embed_(t, t.constant(head)), gaze_embed_(t, t.constant(gaze)),
            goal_embed_(t, t.constant(goal))};
  }

  // Video tokens query each action stream in turn; every hop is a residual
  // attention block sharing one position table.
  Var fuse(Tape& t, Var video_tokens, const ActionStreams& s) {
    Var pos = t.constant(posenc_);
    Var h = video_tokens;
    for (std::size_t l = 0; l < cfg_.n_fusion_layers; ++l) {
      h = fuse_motion_[l](t, h, s.motion, pos, pos);
      h = fuse_head_[l](t, h, s.head, pos, pos);
      h = fuse_gaze_[l](t, h, s.gaze, pos, pos);
    }
    return h;
  }

  Var predict_uncertainty(Tape& t, Var h_fuse) {
    Var pooled = t.mean_rows(h_fuse);
    return t.sigmoid(u_fc2_(t, t.gelu(u_fc1_(t, pooled))));
  }

  Var decode_trajectory(Tape& t, Var conditioned) {
    Var pos = t.constant(posenc_);
    Var q = t.param(*traj_queries_);
    for (std::size_t l = 0; l < cfg_.n_decoder_layers; ++l)
      q = traj_dec_[l](t, q, conditioned, Var{}, pos);
    return traj_out_(t, q);
  }

  Var decode_head(Tape& t, Var conditioned) {
    Var pos = t.constant(posenc_);
    Var q = t.param(*head_queries_);
    for (std::size_t l = 0; l < cfg_.n_decoder_layers; ++l)
      q = head_dec_[l](t, q, conditioned, Var{}, pos);
    return head_out_(t, q);
  }

  struct AuxLogits {
    Var env;
    Var behavior;
  };

  AuxLogits auxiliary_heads(Tape& t, Var h_fuse) {
    Var pooled = t.mean_rows(h_fuse);
    return {env_head_(t, pooled), beh_head_(t, pooled)};
  }

  ForecastVars forward(Tape& t, const WindowSample& s) {
    check_sample(s);
    Tensor feat = s.features_past();
    Tensor motion = s.motion_past();
    Tensor head = s.head_past();
    Tensor gaze = s.gaze_past();
    Tensor goal = s.goal_past();
    if (!cfg_.use_video) feat = model_detail::zeros_like(feat);
    if (!cfg_.use_motion) motion = model_detail::zeros_like(motion);
    if (!cfg_.use_head) head = model_detail::zeros_like(head);
    if (!cfg_.use_gaze) gaze = model_detail::zeros_like(gaze);

    Var video = encode_video(t, feat);
    ActionStreams streams = encode_actions(t, motion, head, gaze, goal);
    Var h_fuse = fuse(t, video, streams);
    Var u = predict_uncertainty(t, h_fuse);
    Var conditioned = condition_on_goal(t, h_fuse, streams.goal, u);
    AuxLogits aux = auxiliary_heads(t, h_fuse);
    return {decode_trajectory(t, conditioned), decode_head(t, conditioned), u,
            aux.env, aux.behavior};
  }

  ForecastBundle predict(const WindowSample& s) {
    Tape t;
    ForecastVars out = forward(t, s);
    return {t.value(out.traj), t.value(out.head),
            t.value(out.u).scalar_value(), t.value(out.env_logits),
            t.value(out.behavior_logits)};
  }

 private:
  void check_sample(const WindowSample& s) const {
    if (static_cast<std::size_t>(s.t1) != cfg_.t1 ||
        static_cast<std::size_t>(s.t2) != cfg_.t2)
      throw ShapeMismatch("window span does not match model config");
    if (s.episode->grid != cfg_.grid || s.episode->channels != cfg_.channels)
      throw ShapeMismatch("feature grid does not match model config");
  }

  ModelConfig cfg_;
  ParamStore store_;
  Tensor posenc_;
  Linear video_proj_;
  ResidualAttention video_ctx_;
  Linear motion_embed_, head_embed_, gaze_embed_, goal_embed_;
  std::vector<ResidualAttention> fuse_motion_, fuse_head_, fuse_gaze_;
  Linear u_fc1_, u_fc2_;
  Parameter* traj_queries_ = nullptr;
  Parameter* head_queries_ = nullptr;
  std::vector<ResidualAttention> traj_dec_, head_dec_;
  Linear traj_out_, head_out_;
  Linear env_head_, beh_head_;
};

// Early-fusion reference network: per-step stream embeddings concatenated,
// mixed down and run through one self-attention stack; pooled state feeds two
// linear forecast heads. No uncertainty head, no goal gating.
class MTransformer {
 public:
  MTransformer(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.check();
    Rng rng(seed);
    const std::size_t d = cfg_.d_model;
    posenc_ = sinusoidal_positions(cfg_.t1, d);
    video_proj_ = Linear(store_, "video_proj", cfg_.channels, d, rng);
    motion_embed_ = Linear(store_, "motion_embed", 3, d, rng);
    head_embed_ = Linear(store_, "head_embed", 6, d, rng);
    gaze_embed_ = Linear(store_, "gaze_embed", 2, d, rng);
    goal_embed_ = Linear(store_, "goal_embed", 3, d, rng);
    mix_ = Linear(store_, "mix", 5 * d, d, rng);
    for (std::size_t l = 0; l < cfg_.n_fusion_layers; ++l)
      stack_.emplace_back(store_, "stack" + std::to_string(l), d, cfg_.n_heads,
                          cfg_.ff_hidden, rng);
    traj_out_ = Linear(store_, "traj_out", d, 3 * cfg_.t2, rng);
    head_out_ = Linear(store_, "head_out", d, 6 * cfg_.t2, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  ForecastVars forward(Tape& t, const WindowSample& s) {
    if (static_cast<std::size_t>(s.t1) != cfg_.t1 ||
        static_cast<std::size_t>(s.t2) != cfg_.t2)
      throw ShapeMismatch("window span does not match model config");
    if (s.episode->grid != cfg_.grid || s.episode->channels != cfg_.channels)
      throw ShapeMismatch("feature grid does not match model config");
    Tensor feat = s.features_past();
    Tensor motion = s.motion_past();
    Tensor head = s.head_past();
    Tensor gaze = s.gaze_past();
    if (!cfg_.use_video) feat = model_detail::zeros_like(feat);
    if (!cfg_.use_motion) motion = model_detail::zeros_like(motion);
    if (!cfg_.use_head) head = model_detail::zeros_like(head);
    if (!cfg_.use_gaze) gaze = model_detail::zeros_like(gaze);

    Var pos = t.constant(posenc_);
    Var cat = t.concat_cols({video_proj_(t, t.constant(feat)),
                             motion_embed_(t, t.constant(motion)),
                             head_embed_(t, t.constant(head)),
                             gaze_embed_(t, t.constant(gaze)),
                             goal_embed_(t, t.constant(s.goal_past()))});
    Var x = mix_(t, cat);
    for (std::size_t l = 0; l < cfg_.n_fusion_layers; ++l)
      x = stack_[l](t, x, x, pos, pos);
    Var pooled = t.mean_rows(x);
    Var traj = rows_from_flat(t, traj_out_(t, pooled), 3);
    Var head6 = rows_from_flat(t, head_out_(t, pooled), 6);
    return {traj, head6, t.scalar(0.5), Var{}, Var{}};
  }

  ForecastBundle predict(const WindowSample& s) {
    Tape t;
    ForecastVars out = forward(t, s);
    return {t.value(out.traj), t.value(out.head), 0.5,
            Tensor::zeros(1, cfg_.env_classes),
            Tensor::zeros(1, cfg_.behavior_classes)};
  }

 private:
  Var rows_from_flat(Tape& t, Var flat, std::size_t width) const {
    std::vector<Var> rows;
    rows.reserve(cfg_.t2);
    for (std::size_t i = 0; i < cfg_.t2; ++i)
      rows.push_back(t.slice_cols(flat, i * width, width));
    return t.concat_rows(rows);
  }

  ModelConfig cfg_;
  ParamStore store_;
  Tensor posenc_;
  Linear video_proj_, motion_embed_, head_embed_, gaze_embed_, goal_embed_;
  Linear mix_;
  std::vector<ResidualAttention> stack_;
  Linear traj_out_, head_out_;
};

}  // namespace egocognav
