// Command line front end. Four subcommands cover the pipeline:
//
//   synth   generate synthetic episode directories from a world config
//   train   fit a forecasting model (and the linear uncertainty baselines)
//   eval    score methods on a dataset and emit table1..table3 + plot data
//   ablate  retrain loss/modality variants with a shared seed, emit table4
//
// Every command is deterministic for a fixed (config, seed). Exit codes:
// 0 ok, 2 config error, 3 data error, 4 non-finite training loss,
// 5 evaluation error.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "egocognav/baselines.hpp"
#include "egocognav/checkpoint.hpp"
#include "egocognav/episode.hpp"
#include "egocognav/errors.hpp"
#include "egocognav/losses.hpp"
#include "egocognav/metrics.hpp"
#include "egocognav/model.hpp"
#include "egocognav/optim.hpp"
#include "egocognav/synth.hpp"
#include "egocognav/trainer.hpp"

namespace eg = egocognav;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kDataError = 3;
constexpr int kNonFiniteLoss = 4;
constexpr int kEvalError = 5;

int fail(int code, const std::string& what) {
  std::fprintf(stderr, "egocognav: %s\n", what.c_str());
  return code;
}

// Resolved run settings. JSON keys mirror the fields; flags override them.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string dataset;
  std::string out;
  std::string world;          // synth only
  std::size_t count = 5;      // synth only
  int stride = 5;             // window stride in steps
  std::size_t val_every = 5;  // every k-th episode goes to validation
  eg::ModelConfig model;
  eg::LossWeights loss;
  eg::OptimizerConfig optimizer;
  std::vector<std::string> methods;   // eval; empty means auto
  std::vector<std::string> variants;  // ablate; empty means all six
  std::string mt_checkpoint;          // eval: trained m_transformer dir

  static RunConfig from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known{
        "seed",      "dataset", "out",       "world",
        "count",     "stride",  "val_every", "model",
        "loss",      "optimizer", "methods", "variants",
        "mt_checkpoint"};
    for (const auto& item : j.items()) {
      if (std::find(known.begin(), known.end(), item.key()) == known.end())
        throw eg::BadConfig("unknown run config key: " + item.key());
    }
    RunConfig rc;
    rc.seed = j.value("seed", rc.seed);
    rc.dataset = j.value("dataset", rc.dataset);
    rc.out = j.value("out", rc.out);
    rc.world = j.value("world", rc.world);
    rc.count = j.value("count", rc.count);
    rc.stride = j.value("stride", rc.stride);
    rc.val_every = j.value("val_every", rc.val_every);
    if (j.contains("model")) rc.model = eg::ModelConfig::from_json(j.at("model"));
    if (j.contains("loss")) rc.loss = eg::LossWeights::from_json(j.at("loss"));
    if (j.contains("optimizer"))
      rc.optimizer = eg::OptimizerConfig::from_json(j.at("optimizer"));
    if (j.contains("methods"))
      rc.methods = j.at("methods").get<std::vector<std::string>>();
    if (j.contains("variants"))
      rc.variants = j.at("variants").get<std::vector<std::string>>();
    rc.mt_checkpoint = j.value("mt_checkpoint", rc.mt_checkpoint);
    return rc;
  }
};

struct FlagOpts {
  std::string config, dataset, out, checkpoint, methods, variants;
  long long seed = -1;  // < 0 means "not given"
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    if (comma > pos) out.push_back(s.substr(pos, comma - pos));
    pos = comma + 1;
  }
  return out;
}

RunConfig resolve_config(const FlagOpts& o) {
  RunConfig rc;
  if (!o.config.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(eg::detail::read_file(o.config));
    } catch (const nlohmann::json::exception& e) {
      throw eg::BadConfig(o.config + ": " + e.what());
    }
    rc = RunConfig::from_json(j);
  }
  if (o.seed >= 0) rc.seed = static_cast<std::uint64_t>(o.seed);
  if (!o.dataset.empty()) rc.dataset = o.dataset;
  if (!o.out.empty()) rc.out = o.out;
  if (!o.methods.empty()) rc.methods = split_list(o.methods);
  if (!o.variants.empty()) rc.variants = split_list(o.variants);
  if (rc.out.empty()) throw eg::BadConfig("no output directory (--out or config)");
  return rc;
}

nlohmann::json run_config_json(const RunConfig& rc, const char* command) {
  return nlohmann::json{{"command", command},
                        {"seed", rc.seed},
                        {"dataset", rc.dataset},
                        {"out", rc.out},
                        {"stride", rc.stride},
                        {"val_every", rc.val_every},
                        {"model", rc.model.to_json()},
                        {"loss", rc.loss.to_json()},
                        {"optimizer", rc.optimizer.to_json()}};
}

// Episode directories are the subdirectories holding a streams.csv; they are
// read in sorted name order so every run sees the same sequence.
std::vector<eg::Episode> load_dataset(const std::string& dir) {
  if (dir.empty()) throw eg::BadConfig("no dataset directory (--dataset or config)");
  if (!fs::is_directory(dir)) throw eg::IoError("dataset directory not found: " + dir);
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "streams.csv"))
      dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<eg::Episode> eps;
  eps.reserve(dirs.size());
  for (const fs::path& d : dirs) eps.push_back(eg::read_episode_dir(d));
  if (eps.empty()) throw eg::IoError("no episode directories under " + dir);
  return eps;
}

struct SplitWindows {
  std::vector<eg::WindowSample> train, val;
};

// Episodes too short for one window are skipped; whole episodes go to either
// side of the split so no future frame of a validation episode is trained on.
SplitWindows split_windows(const std::vector<eg::Episode>& eps,
                           const RunConfig& rc) {
  SplitWindows sw;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    std::vector<eg::WindowSample> w;
    try {
      w = eg::extract_windows(eps[i], rc.stride,
                              static_cast<int>(rc.model.t1),
                              static_cast<int>(rc.model.t2));
    } catch (const eg::TooShort&) {
      continue;
    }
    const bool to_val = rc.val_every > 0 && (i % rc.val_every) == rc.val_every - 1;
    auto& dst = to_val ? sw.val : sw.train;
    dst.insert(dst.end(), w.begin(), w.end());
  }
  return sw;
}

std::vector<eg::WindowSample> all_windows(const std::vector<eg::Episode>& eps,
                                          const RunConfig& rc) {
  std::vector<eg::WindowSample> out;
  for (const eg::Episode& ep : eps) {
    try {
      auto w = eg::extract_windows(ep, rc.stride, static_cast<int>(rc.model.t1),
                                   static_cast<int>(rc.model.t2));
      out.insert(out.end(), w.begin(), w.end());
    } catch (const eg::TooShort&) {
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(const FlagOpts& o) {
  RunConfig rc;
  try {
    rc = resolve_config(o);
    if (rc.world.empty()) throw eg::BadConfig("synth needs a world config path");
  } catch (const eg::Error& e) {
    return fail(kConfigError, e.what());
  }

  eg::WorldConfig wc;
  try {
    wc = eg::WorldConfig::from_file(rc.world);
  } catch (const eg::Error& e) {
    return fail(kConfigError, e.what());
  }

  try {
    fs::create_directories(rc.out);
    nlohmann::json seeds = nlohmann::json::array();
    nlohmann::json names = nlohmann::json::array();
    nlohmann::json lengths = nlohmann::json::array();
    std::size_t total = 0;
    for (std::size_t i = 0; i < rc.count; ++i) {
      const std::uint64_t s = rc.seed + i;
      const eg::Episode ep = eg::synth_generate(wc, s);
      eg::write_episode_dir(ep, fs::path(rc.out) / ep.id);
      seeds.push_back(s);
      names.push_back(ep.id);
      lengths.push_back(ep.length());
      total += ep.length();
    }
    nlohmann::json manifest{{"count", rc.count},
                            {"episodes", names},
                            {"lengths", lengths},
                            {"seeds", seeds},
                            {"total_steps", total}};
    eg::detail::write_file(fs::path(rc.out) / "manifest.json",
                           manifest.dump(2) + "\n");
    std::printf("synth: %zu episodes, %zu steps -> %s\n", rc.count, total,
                rc.out.c_str());
    return kOk;
  } catch (const eg::Error& e) {
    return fail(kDataError, e.what());
  }
}

// ---------------------------------------------------------------------------
// train

template <class Model>
int run_training(Model& model, const SplitWindows& sw, const RunConfig& rc,
                 const std::string& resume) {
  std::size_t start_step = 0;
  if (!resume.empty()) {
    try {
      start_step = eg::load_params(model.params(), resume).step;
    } catch (const eg::Error& e) {
      return fail(kDataError, std::string("resume: ") + e.what());
    }
  }

  const fs::path out(rc.out);
  const fs::path ckpt = out / "checkpoint";
  fs::create_directories(ckpt);
  eg::detail::write_file(out / "train_config.json",
                         run_config_json(rc, "train").dump(2) + "\n");
  eg::detail::write_file(ckpt / "model.json",
                         rc.model.to_json().dump(2) + "\n");

  eg::TrainResult result;
  try {
    result = eg::train_model(
        model, sw.train, sw.val, rc.loss, rc.optimizer, rc.seed, start_step,
        [&](std::size_t step, double) {
          eg::save_params(model.params(), ckpt, {rc.seed, step});
        });
  } catch (const eg::NonFinite& e) {
    return fail(kNonFiniteLoss, std::string("training diverged: ") + e.what());
  }
  eg::detail::write_file(out / "train_log.csv",
                         eg::training_log_csv(result.log));

  // The linear uncertainty baselines are fit on the same training windows and
  // stored next to the checkpoint so eval never touches held-out targets.
  std::vector<double> targets;
  targets.reserve(sw.train.size());
  for (const eg::WindowSample& s : sw.train) targets.push_back(s.u_target());
  try {
    eg::EmuProxy emu;
    emu.fit(sw.train, targets);
    eg::detail::write_file(ckpt / "emu_proxy.json", emu.to_json().dump(2) + "\n");
  } catch (const eg::Error& e) {
    std::fprintf(stderr, "egocognav: emu_proxy fit skipped: %s\n", e.what());
  }
  try {
    eg::PathU path_u;
    path_u.fit(sw.train, targets);
    eg::detail::write_file(ckpt / "path_u.json", path_u.to_json().dump(2) + "\n");
  } catch (const eg::Error& e) {
    std::fprintf(stderr, "egocognav: path_u fit skipped: %s\n", e.what());
  }

  const eg::EpochLog& last = result.log.back();
  std::printf("train: %zu train / %zu val windows, %zu epochs\n",
              sw.train.size(), sw.val.size(), result.log.size());
  std::printf(
      "final L_traj=%.6g L_head=%.6g L_U=%.6g L_aux=%.6g L_total=%.6g "
      "val=%.6g\n",
      last.traj, last.head, last.u, last.aux, last.total, last.val_total);
  std::printf("best val %.6g at epoch %zu, final step %zu\n", result.best_val,
              result.best_epoch, result.final_step);
  std::printf("checkpoint -> %s\n", ckpt.string().c_str());
  return kOk;
}

int cmd_train(const FlagOpts& o) {
  RunConfig rc;
  try {
    rc = resolve_config(o);
    rc.model.check();
    rc.loss.check();
    rc.optimizer.check();
    if (rc.stride < 1) throw eg::BadConfig("stride must be >= 1");
  } catch (const eg::Error& e) {
    return fail(kConfigError, e.what());
  }

  std::vector<eg::Episode> eps;
  SplitWindows sw;
  try {
    eps = load_dataset(rc.dataset);
    sw = split_windows(eps, rc);
    if (sw.train.empty())
      throw eg::TooFew("no training windows (dataset too short for t1+t2)");
  } catch (const eg::BadConfig& e) {
    return fail(kConfigError, e.what());
  } catch (const eg::Error& e) {
    return fail(kDataError, e.what());
  }

  try {
    if (rc.model.arch == "m_transformer") {
      eg::MTransformer model(rc.model, rc.seed);
      return run_training(model, sw, rc, o.checkpoint);
    }
    eg::EgoCogNav model(rc.model, rc.seed);
    return run_training(model, sw, rc, o.checkpoint);
  } catch (const eg::NonFinite& e) {
    return fail(kNonFiniteLoss, e.what());
  } catch (const eg::Error& e) {
    return fail(kDataError, e.what());
  }
}

// ---------------------------------------------------------------------------
// eval

struct LoadedModel {
  eg::ModelConfig cfg;
  eg::CheckpointMeta meta;
  std::unique_ptr<eg::EgoCogNav> ego;
  std::unique_ptr<eg::MTransformer> mt;

  eg::ForecastBundle predict(const eg::WindowSample& s) {
    return ego ? ego->predict(s) : mt->predict(s);
  }
};

LoadedModel load_model_dir(const fs::path& dir) {
  LoadedModel m;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(eg::detail::read_file(dir / "model.json"));
  } catch (const nlohmann::json::exception& e) {
    throw eg::ParseError(dir.string() + "/model.json: " + e.what());
  }
  m.cfg = eg::ModelConfig::from_json(j);
  if (m.cfg.arch == "m_transformer") {
    m.mt = std::make_unique<eg::MTransformer>(m.cfg, 0);
    m.meta = eg::load_params(m.mt->params(), dir);
  } else {
    m.ego = std::make_unique<eg::EgoCogNav>(m.cfg, 0);
    m.meta = eg::load_params(m.ego->params(), dir);
  }
  return m;
}

const std::vector<std::string> kMotionMethods{"egocognav", "m_transformer",
                                              "const_vel", "lin_ext"};
const std::vector<std::string> kUncertaintyMethods{"egocognav", "emu_proxy",
                                                   "path_u"};

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

eg::EvalRecord base_record(const eg::WindowSample& s) {
  const eg::Episode& ep = *s.episode;
  const std::size_t lp = s.last_past();
  eg::EvalRecord r;
  r.episode_id = ep.id;
  r.window_start = s.start;
  r.gt_xy = eg::world_positions(ep.poses[lp], s.future_traj());
  r.gt_head = s.future_head();
  r.u_human = s.u_target();
  r.env_mask = ep.env_labels[lp];
  r.behavior_mask = ep.behavior_labels[lp];
  r.behavior_onset = eg::behavior_onset(ep, lp);
  return r;
}

template <class F>
double metric_or_nan(F&& f) {
  try {
    return f();
  } catch (const eg::Error&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

double mean_over(const std::vector<eg::EvalRecord>& recs,
                 double (*per)(const eg::EvalRecord&)) {
  double acc = 0.0;
  for (const eg::EvalRecord& r : recs) acc += per(r);
  return acc / static_cast<double>(recs.size());
}

double rec_ade(const eg::EvalRecord& r) { return eg::ade(r.pred_xy, r.gt_xy); }
double rec_fde(const eg::EvalRecord& r) { return eg::fde(r.pred_xy, r.gt_xy); }
double rec_head(const eg::EvalRecord& r) {
  return eg::head_l1_metric(r.pred_head, r.gt_head);
}

eg::Table1Row table1_row(const std::string& name,
                         const std::vector<eg::EvalRecord>& recs) {
  eg::Table1Row row;
  row.method = name;
  row.ade_all = metric_or_nan([&] { return mean_over(recs, rec_ade); });
  row.fde_all = metric_or_nan([&] { return mean_over(recs, rec_fde); });
  row.head_l1_all = metric_or_nan([&] { return mean_over(recs, rec_head); });
  row.ade_high = row.fde_high = row.head_l1_high =
      std::numeric_limits<double>::quiet_NaN();
  try {
    const auto high = eg::subset_by_true_uncertainty(recs);
    row.ade_high = metric_or_nan([&] { return mean_over(high, rec_ade); });
    row.fde_high = metric_or_nan([&] { return mean_over(high, rec_fde); });
    row.head_l1_high = metric_or_nan([&] { return mean_over(high, rec_head); });
  } catch (const eg::Error&) {
  }
  return row;
}

eg::Table2Row table2_row(const std::string& name,
                         const std::vector<eg::EvalRecord>& recs) {
  std::vector<double> u_hat, u_human, labeled, neutral;
  for (const eg::EvalRecord& r : recs) {
    u_hat.push_back(r.u_hat);
    u_human.push_back(r.u_human);
    if (r.behavior_mask & eg::kDifficultyMask) labeled.push_back(r.u_hat);
    if (r.behavior_mask == 0) neutral.push_back(r.u_hat);
  }
  eg::Table2Row row;
  row.method = name;
  row.mae = metric_or_nan([&] { return eg::mae(u_hat, u_human); });
  row.rho = metric_or_nan([&] { return eg::spearman_rho(u_hat, u_human); });
  row.precision = metric_or_nan([&] { return eg::high_u_precision(recs); });
  row.delta_u = metric_or_nan([&] { return eg::delta_u(recs); });
  row.effect = metric_or_nan([&] { return eg::effect_size(labeled, neutral); });
  return row;
}

void write_plotdata(const fs::path& dir,
                    const std::vector<eg::EvalRecord>* traj_recs,
                    const std::vector<eg::EvalRecord>* u_recs) {
  fs::create_directories(dir);
  if (traj_recs) {
    for (const eg::EvalRecord& r : *traj_recs) {
      std::string csv = "step,pred_x,pred_y,gt_x,gt_y\n";
      for (std::size_t i = 0; i < r.gt_xy.rows(); ++i) {
        csv += std::to_string(i);
        for (double v : {r.pred_xy.at(i, 0), r.pred_xy.at(i, 1),
                         r.gt_xy.at(i, 0), r.gt_xy.at(i, 1)}) {
          csv += ',';
          csv += eg::detail::fmt_g17(v);
        }
        csv += '\n';
      }
      eg::detail::write_file(dir / ("traj_" + r.episode_id + "_" +
                                    std::to_string(r.window_start) + ".csv"),
                             csv);
    }
  }
  if (u_recs) {
    std::map<std::string, std::string> per_episode;
    for (const eg::EvalRecord& r : *u_recs) {
      std::string& csv = per_episode[r.episode_id];
      if (csv.empty()) csv = "start,u_hat,u_human\n";
      csv += std::to_string(r.window_start);
      csv += ',' + eg::detail::fmt_g17(r.u_hat);
      csv += ',' + eg::detail::fmt_g17(r.u_human);
      csv += '\n';
    }
    for (const auto& [id, csv] : per_episode)
      eg::detail::write_file(dir / ("u_" + id + ".csv"), csv);
  }
}

int cmd_eval(const FlagOpts& o) {
  RunConfig rc;
  try {
    rc = resolve_config(o);
    if (rc.stride < 1) throw eg::BadConfig("stride must be >= 1");
  } catch (const eg::Error& e) {
    return fail(kConfigError, e.what());
  }

  std::vector<eg::Episode> eps;
  std::vector<eg::WindowSample> windows;
  try {
    eps = load_dataset(rc.dataset);
    windows = all_windows(eps, rc);
    if (windows.empty())
      throw eg::TooFew("no evaluation windows (dataset too short for t1+t2)");
  } catch (const eg::BadConfig& e) {
    return fail(kConfigError, e.what());
  } catch (const eg::Error& e) {
    return fail(kDataError, e.what());
  }

  try {
    const fs::path ckpt(o.checkpoint);
    const bool have_ckpt = !o.checkpoint.empty();

    std::vector<std::string> methods = rc.methods;
    if (methods.empty()) {
      if (have_ckpt) methods.push_back("egocognav");
      if (!rc.mt_checkpoint.empty()) methods.push_back("m_transformer");
      methods.push_back("const_vel");
      methods.push_back("lin_ext");
      if (have_ckpt && fs::exists(ckpt / "emu_proxy.json"))
        methods.push_back("emu_proxy");
      if (have_ckpt && fs::exists(ckpt / "path_u.json"))
        methods.push_back("path_u");
    }
    for (const std::string& m : methods) {
      if (!contains(kMotionMethods, m) && !contains(kUncertaintyMethods, m))
        return fail(kConfigError, "unknown method: " + m);
    }

    std::map<std::string, std::vector<eg::EvalRecord>> records;
    for (const std::string& name : methods) {
      std::vector<eg::EvalRecord> recs;
      recs.reserve(windows.size());
      if (name == "egocognav" || name == "m_transformer") {
        const fs::path dir = name == "egocognav" ? ckpt : fs::path(rc.mt_checkpoint);
        if (dir.empty())
          throw eg::BadConfig(name + " needs a checkpoint (--checkpoint or mt_checkpoint)");
        LoadedModel model = load_model_dir(dir);
        if (name == "egocognav" && model.cfg.arch != "egocognav")
          throw eg::BadConfig("checkpoint arch is " + model.cfg.arch);
        for (const eg::WindowSample& s : windows) {
          eg::EvalRecord r = base_record(s);
          const eg::ForecastBundle b = model.predict(s);
          r.pred_xy = eg::world_positions(s.episode->poses[s.last_past()], b.traj);
          r.pred_head = b.head;
          r.u_hat = b.u_hat;
          recs.push_back(std::move(r));
        }
      } else if (name == "const_vel" || name == "lin_ext") {
        for (const eg::WindowSample& s : windows) {
          eg::EvalRecord r = base_record(s);
          const eg::BaselineForecast f =
              name == "const_vel" ? eg::const_vel(s) : eg::lin_ext(s);
          r.pred_xy = eg::world_positions(s.episode->poses[s.last_past()], f.traj);
          r.pred_head = f.head;
          recs.push_back(std::move(r));
        }
      } else {  // emu_proxy / path_u: uncertainty only
        const fs::path file = ckpt / (name + ".json");
        if (!have_ckpt || !fs::exists(file))
          throw eg::IoError(name + " requested but " + file.string() +
                            " not found; run train first");
        const nlohmann::json j =
            nlohmann::json::parse(eg::detail::read_file(file));
        for (const eg::WindowSample& s : windows) {
          eg::EvalRecord r = base_record(s);
          r.pred_xy = r.gt_xy;
          r.pred_head = r.gt_head;
          r.u_hat = name == "emu_proxy" ? eg::EmuProxy::from_json(j).predict(s)
                                        : eg::PathU::from_json(j).predict(s);
          recs.push_back(std::move(r));
        }
      }
      records.emplace(name, std::move(recs));
    }

    fs::create_directories(rc.out);
    std::vector<eg::Table1Row> t1;
    for (const std::string& m : methods)
      if (contains(kMotionMethods, m)) t1.push_back(table1_row(m, records.at(m)));
    std::vector<eg::Table2Row> t2;
    for (const std::string& m : methods)
      if (contains(kUncertaintyMethods, m))
        t2.push_back(table2_row(m, records.at(m)));
    std::vector<eg::BehaviorRow> t3;
    if (records.count("egocognav"))
      t3 = eg::behavior_breakdown(records.at("egocognav"));

    eg::detail::write_file(fs::path(rc.out) / "table1.csv", eg::table1_csv(t1));
    eg::detail::write_file(fs::path(rc.out) / "table2.csv", eg::table2_csv(t2));
    eg::detail::write_file(fs::path(rc.out) / "table3.csv", eg::table3_csv(t3));

    const std::vector<eg::EvalRecord>* traj_recs = nullptr;
    for (const std::string& m : methods)
      if (contains(kMotionMethods, m)) {
        traj_recs = &records.at(m);
        break;
      }
    const std::vector<eg::EvalRecord>* u_recs = nullptr;
    for (const std::string& m : methods)
      if (contains(kUncertaintyMethods, m)) {
        u_recs = &records.at(m);
        break;
      }
    write_plotdata(fs::path(rc.out) / "plotdata", traj_recs, u_recs);

    std::string joined;
    for (const std::string& m : methods)
      joined += (joined.empty() ? "" : ",") + m;
    std::printf("eval: %zu windows from %zu episodes, methods %s -> %s\n",
                windows.size(), eps.size(), joined.c_str(), rc.out.c_str());
    return kOk;
  } catch (const eg::BadConfig& e) {
    return fail(kConfigError, e.what());
  } catch (const eg::Error& e) {
    return fail(kEvalError, e.what());
  }
}

// ---------------------------------------------------------------------------
// ablate

struct Variant {
  std::string name;
  eg::ModelConfig cfg;
  eg::LossWeights loss;
};

Variant make_variant(const std::string& name, const RunConfig& rc) {
  Variant v{name, rc.model, rc.loss};
  if (name == "full") {
  } else if (name == "no-aux") {
    v.loss.alpha = 0.0;
  } else if (name == "no-traj-extras") {
    v.loss.gamma = 1.0;
    v.loss.lambda_var = 0.0;
  } else if (name == "video+motion") {
    v.cfg.use_head = v.cfg.use_gaze = false;
  } else if (name == "video-only") {
    v.cfg.use_motion = v.cfg.use_head = v.cfg.use_gaze = false;
  } else if (name == "motion-only") {
    v.cfg.use_video = v.cfg.use_head = v.cfg.use_gaze = false;
  } else {
    throw eg::BadConfig("unknown ablation variant: " + name);
  }
  return v;
}

// A perturbed copy of one episode. Poses are left untouched on purpose so
// the goal stream stays fixed and only the named input stream changes.
eg::Episode perturb_stream(const eg::Episode& src, const std::string& stream,
                           std::size_t step) {
  eg::Episode ep = src;
  if (stream == "video") {
    ep.features[step * ep.grid * ep.grid * ep.channels] += 1.0f;
  } else if (stream == "motion") {
    ep.motion[step].dx += 0.5;
  } else if (stream == "head") {
    ep.head[step].a[0] += 0.25;
  } else {
    ep.gaze[step].u += 0.25;
  }
  return ep;
}

bool bundles_equal(const eg::ForecastBundle& a, const eg::ForecastBundle& b) {
  if (a.u_hat != b.u_hat) return false;
  for (std::size_t i = 0; i < a.traj.size(); ++i)
    if (a.traj[i] != b.traj[i]) return false;
  for (std::size_t i = 0; i < a.head.size(); ++i)
    if (a.head[i] != b.head[i]) return false;
  return true;
}

// Masked streams must not influence the forecast at all; active ones must.
template <class Model>
bool probe_masks(Model& model, const eg::WindowSample& s) {
  const eg::ForecastBundle ref = model.predict(s);
  const eg::ModelConfig& cfg = model.config();
  const std::pair<const char*, bool> streams[] = {
      {"video", cfg.use_video},
      {"motion", cfg.use_motion},
      {"head", cfg.use_head},
      {"gaze", cfg.use_gaze}};
  for (const auto& [stream, active] : streams) {
    const eg::Episode ep = perturb_stream(*s.episode, stream, s.start);
    const eg::WindowSample probe{&ep, s.start, s.t1, s.t2};
    const bool same = bundles_equal(ref, model.predict(probe));
    if (active == same) {
      std::fprintf(stderr, "egocognav: %s stream %s but forecast %s\n", stream,
                   active ? "active" : "masked",
                   same ? "did not change" : "changed");
      return false;
    }
  }
  return true;
}

struct Table4Row {
  std::string variant;
  double alpha = 0, gamma = 0, lambda_var = 0;
  double ade = 0, fde = 0, head_l1 = 0, mae = 0, rho = 0;
};

std::string table4_csv(const std::vector<Table4Row>& rows) {
  std::string out = "variant,alpha,gamma,lambda_var,ade,fde,head_l1,mae,spearman_rho\n";
  for (const Table4Row& r : rows) {
    out += r.variant;
    for (double v :
         {r.alpha, r.gamma, r.lambda_var, r.ade, r.fde, r.head_l1, r.mae, r.rho}) {
      out += ',';
      out += eg::metric_detail::fmt_cell(v);
    }
    out += '\n';
  }
  return out;
}

int cmd_ablate(const FlagOpts& o) {
  RunConfig rc;
  std::vector<Variant> variants;
  try {
    rc = resolve_config(o);
    rc.model.check();
    rc.loss.check();
    rc.optimizer.check();
    if (rc.stride < 1) throw eg::BadConfig("stride must be >= 1");
    std::vector<std::string> names = rc.variants;
    if (names.empty())
      names = {"full",        "no-aux",     "no-traj-extras",
               "video+motion", "video-only", "motion-only"};
    for (const std::string& n : names) variants.push_back(make_variant(n, rc));
  } catch (const eg::Error& e) {
    return fail(kConfigError, e.what());
  }

  std::vector<eg::Episode> eps;
  SplitWindows sw;
  try {
    eps = load_dataset(rc.dataset);
    sw = split_windows(eps, rc);
    if (sw.train.empty())
      throw eg::TooFew("no training windows (dataset too short for t1+t2)");
  } catch (const eg::BadConfig& e) {
    return fail(kConfigError, e.what());
  } catch (const eg::Error& e) {
    return fail(kDataError, e.what());
  }
  // Held-out scores come from the validation split when it exists.
  const std::vector<eg::WindowSample>& held =
      sw.val.empty() ? sw.train : sw.val;
  if (sw.val.empty())
    std::fprintf(stderr, "egocognav: no validation episodes, table4 scores training windows\n");

  std::vector<Table4Row> rows;
  for (const Variant& v : variants) {
    eg::EgoCogNav model(v.cfg, rc.seed);
    if (!probe_masks(model, sw.train.front()))
      return fail(kEvalError, "modality mask probe failed for " + v.name);

    const fs::path vout = fs::path(rc.out) / v.name;
    fs::create_directories(vout / "checkpoint");
    eg::TrainResult result;
    try {
      result = eg::train_model(model, sw.train, sw.val, v.loss, rc.optimizer,
                               rc.seed, 0,
                               [&](std::size_t step, double) {
                                 eg::save_params(model.params(),
                                                 vout / "checkpoint",
                                                 {rc.seed, step});
                               });
    } catch (const eg::NonFinite& e) {
      return fail(kNonFiniteLoss, v.name + ": " + e.what());
    }
    eg::detail::write_file(vout / "checkpoint" / "model.json",
                           v.cfg.to_json().dump(2) + "\n");
    eg::detail::write_file(vout / "train_log.csv",
                           eg::training_log_csv(result.log));

    std::vector<eg::EvalRecord> recs;
    std::vector<double> u_hat, u_human;
    for (const eg::WindowSample& s : held) {
      eg::EvalRecord r = base_record(s);
      const eg::ForecastBundle b = model.predict(s);
      r.pred_xy = eg::world_positions(s.episode->poses[s.last_past()], b.traj);
      r.pred_head = b.head;
      r.u_hat = b.u_hat;
      u_hat.push_back(b.u_hat);
      u_human.push_back(r.u_human);
      recs.push_back(std::move(r));
    }
    Table4Row row;
    row.variant = v.name;
    row.alpha = v.loss.alpha;
    row.gamma = v.loss.gamma;
    row.lambda_var = v.loss.lambda_var;
    row.ade = metric_or_nan([&] { return mean_over(recs, rec_ade); });
    row.fde = metric_or_nan([&] { return mean_over(recs, rec_fde); });
    row.head_l1 = metric_or_nan([&] { return mean_over(recs, rec_head); });
    row.mae = metric_or_nan([&] { return eg::mae(u_hat, u_human); });
    row.rho = metric_or_nan([&] { return eg::spearman_rho(u_hat, u_human); });
    rows.push_back(row);
    std::printf("ablate %s: ade=%.6g mae=%.6g\n", v.name.c_str(), row.ade,
                row.mae);
  }

  eg::detail::write_file(fs::path(rc.out) / "table4.csv", table4_csv(rows));
  std::printf("ablate: %zu variants -> %s\n", rows.size(), rc.out.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"egocentric navigation forecasting toolkit"};
  app.require_subcommand(1);
  FlagOpts o;

  const auto add_common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "run config JSON file");
    c->add_option("--seed", o.seed, "seed override (>= 0)");
    c->add_option("--out", o.out, "output directory");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate synthetic episodes");
  add_common(synth);

  CLI::App* train = app.add_subcommand("train", "train a forecasting model");
  add_common(train);
  train->add_option("--dataset", o.dataset, "episode dataset directory");
  train->add_option("--checkpoint", o.checkpoint, "checkpoint dir to resume from");

  CLI::App* eval = app.add_subcommand("eval", "score methods, emit tables");
  add_common(eval);
  eval->add_option("--dataset", o.dataset, "episode dataset directory");
  eval->add_option("--checkpoint", o.checkpoint, "trained model checkpoint dir");
  eval->add_option("--methods", o.methods, "comma-separated method list");

  CLI::App* ablate = app.add_subcommand("ablate", "train ablation variants");
  add_common(ablate);
  ablate->add_option("--dataset", o.dataset, "episode dataset directory");
  ablate->add_option("--variants", o.variants, "comma-separated variant list");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (synth->parsed()) return cmd_synth(o);
    if (train->parsed()) return cmd_train(o);
    if (eval->parsed()) return cmd_eval(o);
    return cmd_ablate(o);
  } catch (const std::exception& e) {
    return fail(1, e.what());
  }
}
