// End-to-end optimization loop: streamed synthetic batches, stochastic
// teaching/free-running mode per step, Adam on the combined loss, CSV
// logging, periodic atomic checkpoints, and a divergence guard.
#pragma once

#include <chrono>
#include <filesystem>

#include "taylornet/adam.hpp"
#include "taylornet/checkpoint.hpp"
#include "taylornet/loss.hpp"
#include "taylornet/seqfile.hpp"

namespace taylornet {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::string preset = "tiny";  // tiny | overfit | full
  uint64_t seed = 7;
  int epochs = 30;
  int batches_per_epoch = 16;
  int batch_size = 8;
  double lr = 1e-3;
  double lambda_moment = 1.0;
  double teacher_p = 0.5;
  double teacher_p_end = -1;  // < 0: constant probability
  int checkpoint_every = 10;  // epochs; 0 disables periodic saves
  bool reuse_first_batch = false;
  std::string ablation = "full";
  std::string sprite_file;  // external digit sprites (IDX); built-in glyphs if empty
  ModelConfig model;
  int data_canvas = 32;
  int data_sprite = 14;
  int data_objects = 1;
  double data_max_speed = 2.0;

  void validate() const {
    if (lr <= 0) throw std::invalid_argument("learning rate must be positive");
    if (lambda_moment < 0) throw std::invalid_argument("lambda must be >= 0");
    if (teacher_p < 0 || teacher_p > 1)
      throw std::invalid_argument("teacher probability must be in [0, 1]");
    if (teacher_p_end > 1) throw std::invalid_argument("teacher probability end must be <= 1");
    if (epochs < 1 || batches_per_epoch < 1 || batch_size < 1)
      throw std::invalid_argument("epochs, batches and batch size must be >= 1");
    model.validate();
  }
};

inline void apply_ablation(TrainConfig& cfg, const std::string& name) {
  cfg.ablation = name;
  cfg.model.mcu_enabled = true;
  cfg.model.residual_branch_enabled = true;
  cfg.model.taylor_branch_enabled = true;
  if (name == "full") return;
  if (name == "no_mcu") {
    cfg.model.mcu_enabled = false;
  } else if (name == "taylorcell_only") {
    cfg.model.residual_branch_enabled = false;
  } else if (name == "residual_only") {
    cfg.model.taylor_branch_enabled = false;
  } else if (name.rfind("order", 0) == 0 && name.size() == 6 && isdigit(name[5])) {
    cfg.model.taylor_order = name[5] - '0';
    if (cfg.model.taylor_order < 1 || cfg.model.taylor_order > 6)
      throw std::invalid_argument("order ablation must be order1..order6");
  } else {
    throw std::invalid_argument("unknown ablation variant: " + name);
  }
}

inline TrainConfig make_preset(const std::string& name) {
  TrainConfig cfg;
  cfg.preset = name;
  if (name == "tiny") {
    // defaults above
  } else if (name == "overfit") {
    cfg.epochs = 500;
    cfg.batches_per_epoch = 1;
    cfg.batch_size = 4;
    cfg.teacher_p = 1.0;
    cfg.reuse_first_batch = true;
    cfg.checkpoint_every = 0;
    cfg.model.input_frames = 5;
    cfg.model.future_frames = 5;
  } else if (name == "full") {
    cfg.epochs = 1000;
    cfg.batches_per_epoch = 625;  // one epoch = 10,000 generated sequences
    cfg.batch_size = 16;
    cfg.checkpoint_every = 25;
    cfg.model.frame_h = cfg.model.frame_w = 64;
    cfg.model.enc_mid = 16;
    cfg.model.latent_c = 32;
    cfg.model.dec_mid = 32;
    cfg.model.dec_low = 16;
    cfg.data_canvas = 64;
    cfg.data_sprite = 28;
    cfg.data_objects = 2;
    cfg.data_max_speed = 4.0;
  } else {
    throw std::invalid_argument("unknown preset: " + name);
  }
  return cfg;
}

inline BounceSpec make_bounce_spec(const TrainConfig& cfg) {
  BounceSpec spec;
  spec.canvas = cfg.data_canvas;
  spec.frames = cfg.model.input_frames + cfg.model.future_frames;
  spec.batch = cfg.batch_size;
  spec.sprites_per_sequence = cfg.data_objects;
  spec.max_speed = cfg.data_max_speed;
  auto sprites = load_digit_sprites(cfg.sprite_file);
  for (auto& s : sprites)
    spec.sprite_set.push_back(s.dim(0) == cfg.data_sprite ? s
                                                          : resize_bilinear(s, cfg.data_sprite));
  return spec;
}

inline KeyValues train_config_kv(const TrainConfig& cfg) {
  KeyValues kv = model_config_kv(cfg.model);
  kv.set("train.preset", cfg.preset);
  kv.set_int("train.seed", static_cast<int64_t>(cfg.seed));
  kv.set_int("train.epochs", cfg.epochs);
  kv.set_int("train.batches_per_epoch", cfg.batches_per_epoch);
  kv.set_int("train.batch_size", cfg.batch_size);
  kv.set_double("train.lr", cfg.lr);
  kv.set_double("train.lambda_moment", cfg.lambda_moment);
  kv.set_double("train.teacher_p", cfg.teacher_p);
  kv.set_double("train.teacher_p_end", cfg.teacher_p_end);
  kv.set_int("train.checkpoint_every", cfg.checkpoint_every);
  kv.set_bool("train.reuse_first_batch", cfg.reuse_first_batch);
  kv.set("train.ablation", cfg.ablation);
  kv.set("train.sprite_file", cfg.sprite_file);
  kv.set_int("data.canvas", cfg.data_canvas);
  kv.set_int("data.sprite", cfg.data_sprite);
  kv.set_int("data.objects", cfg.data_objects);
  kv.set_double("data.max_speed", cfg.data_max_speed);
  return kv;
}

inline TrainConfig train_config_from_kv(const KeyValues& kv) {
  TrainConfig cfg;
  if (kv.has("train.preset")) cfg = make_preset(kv.get("train.preset"));
  if (kv.has("model.frame_h")) cfg.model = model_config_from_kv(kv);
  auto geti = [&](const char* k, int& dst) {
    if (kv.has(k)) dst = static_cast<int>(kv.get_int(k));
  };
  auto getd = [&](const char* k, double& dst) {
    if (kv.has(k)) dst = kv.get_double(k);
  };
  if (kv.has("train.seed")) cfg.seed = static_cast<uint64_t>(kv.get_int("train.seed"));
  geti("train.epochs", cfg.epochs);
  geti("train.batches_per_epoch", cfg.batches_per_epoch);
  geti("train.batch_size", cfg.batch_size);
  getd("train.lr", cfg.lr);
  getd("train.lambda_moment", cfg.lambda_moment);
  getd("train.teacher_p", cfg.teacher_p);
  getd("train.teacher_p_end", cfg.teacher_p_end);
  geti("train.checkpoint_every", cfg.checkpoint_every);
  if (kv.has("train.reuse_first_batch")) cfg.reuse_first_batch = kv.get_bool("train.reuse_first_batch");
  if (kv.has("train.sprite_file")) cfg.sprite_file = kv.get("train.sprite_file");
  geti("data.canvas", cfg.data_canvas);
  geti("data.sprite", cfg.data_sprite);
  geti("data.objects", cfg.data_objects);
  getd("data.max_speed", cfg.data_max_speed);
  if (kv.has("train.ablation")) apply_ablation(cfg, kv.get("train.ablation"));
  return cfg;
}

struct TrainStepLog {
  int epoch, step;
  double total, image, moment;
  bool teaching;
  double wall_seconds;
};

struct TrainResult {
  ModelParams<float> params;
  std::vector<TrainStepLog> log;
  std::string checkpoint_path;
  std::string log_path;
  double initial_moment = 0;
  double final_total = 0, final_image = 0, final_moment = 0;
};

// Deterministic per-batch data seed: a fixed affine counter scrambled by the
// generator's splitmix state on construction.
inline uint64_t batch_seed(uint64_t root, int64_t index) {
  return root + 0x100000001b3ull * static_cast<uint64_t>(index + 1);
}

inline uint64_t eval_seed_root(uint64_t seed) { return hash_str("heldout-eval") ^ (seed * 0x9e3779b97f4a7c15ull); }

inline std::string format_log_row(const TrainStepLog& row) {
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.9g,%.9g,%s,%.3f", row.epoch, row.step, row.total,
                row.image, row.moment, row.teaching ? "teaching" : "free", row.wall_seconds);
  return buf;
}

template <typename ProgressFn>
TrainResult train(const TrainConfig& cfg, const std::string& out_dir, ProgressFn&& progress) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  Rng master(cfg.seed);
  Rng init_rng = master.fork(1);
  Rng mode_rng = master.fork(2);
  const uint64_t data_root = master.fork(3).next_u64();

  TrainResult result;
  result.params = init_model<float>(cfg.model, init_rng);
  {
    std::vector<SpatialFilter<float>> bank_filters;
    const int k = cfg.model.bank_k;
    for (int f = 0; f < k * k; ++f) {
      Tensor<float> w(Shape{k, k});
      std::copy_n(result.params.cell.pde.bank.data() + f * k * k, k * k, w.data());
      bank_filters.push_back({std::move(w), DerivativeOrder{f / k, f % k}});
    }
    result.initial_moment = moment_loss(bank_filters);
  }

  const BounceSpec spec = make_bounce_spec(cfg);
  Adam<float> opt(cfg.lr);
  result.log_path = out_dir + "/train_log.csv";
  std::ofstream log_out(result.log_path);
  if (!log_out) throw std::runtime_error("cannot write training log: " + result.log_path);
  log_out << "epoch,step,total,image,moment,mode,walltime\n";

  result.checkpoint_path = out_dir + "/checkpoint.tnck";
  const auto t0 = std::chrono::steady_clock::now();
  VideoBatch first_batch;
  if (cfg.reuse_first_batch) first_batch = generate_bouncing(spec, batch_seed(data_root, 0));

  int step = 0;
  const int t_in = cfg.model.input_frames, n_fut = cfg.model.future_frames;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double p = cfg.teacher_p;
    if (cfg.teacher_p_end >= 0 && cfg.epochs > 1)
      p += (cfg.teacher_p_end - cfg.teacher_p) * epoch / (cfg.epochs - 1);
    for (int b = 0; b < cfg.batches_per_epoch; ++b, ++step) {
      const bool teaching = mode_rng.bernoulli(p);
      VideoBatch batch = cfg.reuse_first_batch
                             ? first_batch
                             : generate_bouncing(spec, batch_seed(data_root, step));

      Tape<float> tp;
      auto vars = bind_model(tp, result.params, true);
      auto inputs = leaf_frames(tp, batch, 0, t_in);
      auto targets = leaf_frames(tp, batch, t_in, n_fut);
      auto preds = forward_sequence(tp, vars, inputs, n_fut, teaching ? &targets : nullptr);
      auto loss = compute_loss(tp, vars, preds, targets, static_cast<float>(cfg.lambda_moment));

      TrainStepLog row;
      row.epoch = epoch;
      row.step = step;
      row.total = tp.val(loss.total)[0];
      row.image = tp.val(loss.image)[0];
      row.moment = tp.val(loss.moment)[0];
      row.teaching = teaching;
      row.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (!std::isfinite(row.total))
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " step " +
                              std::to_string(step) + ": total loss is not finite");

      tp.backward(loss.total);
      for (auto& [name, var] : vars.registry) {
        if (!tp.has_grad(var)) continue;  // disabled-branch parameters receive no gradient
        Tensor<float>* param = nullptr;
        result.params.visit([&](const std::string& n, Tensor<float>& t) {
          if (n == name) param = &t;
        });
        opt.step(name, *param, tp.grad_of(var));
      }

      result.log.push_back(row);
      log_out << format_log_row(row) << "\n";
      result.final_total = row.total;
      result.final_image = row.image;
      result.final_moment = row.moment;
    }
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)
      save_checkpoint(result.checkpoint_path, result.params, train_config_kv(cfg));
    progress(epoch, result);
  }
  save_checkpoint(result.checkpoint_path, result.params, train_config_kv(cfg));
  log_out.flush();
  if (!log_out) throw std::runtime_error("short write on training log");
  return result;
}

inline TrainResult train(const TrainConfig& cfg, const std::string& out_dir) {
  return train(cfg, out_dir, [](int, const TrainResult&) {});
}

}  // namespace taylornet
