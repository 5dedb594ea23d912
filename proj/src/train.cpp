#include "atv/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <ostream>
#include <unordered_set>

#include "atv/checkpoint.hpp"
#include "atv/loss.hpp"

namespace fs = std::filesystem;

namespace atv {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Tensor<int32_t> argmax_classes(const Tensor<float>& logits) {
  const int64_t n = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  Tensor<int32_t> pred(Shape{n, h, w});
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t ih = 0; ih < h; ++ih) {
      for (int64_t iw = 0; iw < w; ++iw) {
        int32_t best = 0;
        float best_v = logits.at(in, 0, ih, iw);
        for (int64_t ic = 1; ic < k; ++ic) {
          const float v = logits.at(in, ic, ih, iw);
          if (v > best_v) {  // strict: ties keep the smaller class id
            best_v = v;
            best = static_cast<int32_t>(ic);
          }
        }
        pred[(in * h + ih) * w + iw] = best;
      }
    }
  }
  return pred;
}

Tensor<float> scalar_record(double v) {
  Tensor<float> t(Shape{1});
  t[0] = static_cast<float>(v);
  return t;
}

}  // namespace

ATVNet<float> build_from_config(const RunConfig& cfg) {
  return build_model<float>(cfg.backbone, cfg.c_head, cfg.c_gate, cfg.scout_dilation,
                            cfg.num_classes, cfg.seed);
}

void save_training_checkpoint(const std::string& path, const RunConfig& cfg,
                              const ATVNet<float>& net, const AdamWState<float>& opt,
                              int next_epoch, double best_miou) {
  std::vector<CheckpointRecord> records;
  for (const std::string& name : net.params.names()) {
    records.push_back({"param." + name, net.params.at(name)});
  }
  for (const std::string& name : net.state.names()) {
    records.push_back({"state." + name, net.state.at(name)});
  }
  for (const std::string& name : opt.m.names()) {
    records.push_back({"optim.m." + name, opt.m.at(name)});
  }
  for (const std::string& name : opt.v.names()) {
    records.push_back({"optim.v." + name, opt.v.at(name)});
  }
  records.push_back({"optim.t", scalar_record(static_cast<double>(opt.t))});
  records.push_back({"train.next_epoch", scalar_record(next_epoch)});
  records.push_back({"train.best_miou", scalar_record(best_miou)});
  checkpoint_save(path, config_to_json(cfg), records);
}

LoadedTraining load_training_checkpoint(const std::string& path) {
  const Checkpoint ck = checkpoint_load(path);
  LoadedTraining out;
  out.cfg = config_from_json(ck.config_json);
  out.net = build_from_config(out.cfg);
  for (const std::string& name : out.net.params.names()) {
    const Tensor<float>* t = ck.find("param." + name);
    if (!t) throw std::runtime_error("checkpoint: missing parameter " + name + " in " + path);
    detail::require(t->shape() == out.net.params.at(name).shape(),
                    "checkpoint: shape mismatch for " + name);
    out.net.params.at(name) = *t;
  }
  for (const std::string& name : out.net.state.names()) {
    const Tensor<float>* t = ck.find("state." + name);
    if (!t) throw std::runtime_error("checkpoint: missing state " + name + " in " + path);
    out.net.state.at(name) = *t;
  }
  for (const std::string& name : out.net.params.names()) {
    const Tensor<float>* m = ck.find("optim.m." + name);
    const Tensor<float>* v = ck.find("optim.v." + name);
    if (m && v) {
      out.opt.m.add(name, *m);
      out.opt.v.add(name, *v);
    }
  }
  if (const Tensor<float>* t = ck.find("optim.t")) out.opt.t = static_cast<int64_t>((*t)[0]);
  if (const Tensor<float>* t = ck.find("train.next_epoch")) out.next_epoch = static_cast<int>((*t)[0]);
  if (const Tensor<float>* t = ck.find("train.best_miou")) out.best_miou = (*t)[0];
  return out;
}

ATVNet<float> load_model_checkpoint(const std::string& path, RunConfig* cfg_out) {
  LoadedTraining lt = load_training_checkpoint(path);
  if (cfg_out) *cfg_out = lt.cfg;
  return std::move(lt.net);
}

ConfusionMatrix evaluate_split(ATVNet<float>& net, const DatasetManifest& split, int batch_size,
                               int ignore_index, bool fixed_gate) {
  ConfusionMatrix cm(net.num_classes);
  ForwardOptions<float> opts;
  opts.mode = Mode::eval;
  opts.fixed_gate = fixed_gate;
  for (int start = 0; start < split.size(); start += batch_size) {
    const int end = std::min(split.size(), start + batch_size);
    std::vector<Sample> samples;
    for (int i = start; i < end; ++i) samples.push_back(load_sample(split, i));
    auto [images, labels] = make_batch(samples);
    ModelOutput<float> out = model_forward(net, images, opts, false);
    cm.update(argmax_classes(out.logits), labels, ignore_index);
  }
  return cm;
}

std::map<std::string, GateGroupStats> gate_statistics(ATVNet<float>& net,
                                                      const DatasetManifest& split, int batch_size,
                                                      bool fixed_gate) {
  std::map<std::string, std::vector<std::array<double, 3>>> rows;
  ForwardOptions<float> opts;
  opts.mode = Mode::eval;
  opts.fixed_gate = fixed_gate;
  for (int start = 0; start < split.size(); start += batch_size) {
    const int end = std::min(split.size(), start + batch_size);
    std::vector<Sample> samples;
    for (int i = start; i < end; ++i) samples.push_back(load_sample(split, i));
    auto [images, labels] = make_batch(samples);
    (void)labels;
    ModelOutput<float> out = model_forward(net, images, opts, false);
    for (int i = start; i < end; ++i) {
      const int64_t b = i - start;
      rows[split.entries[static_cast<size_t>(i)].regime].push_back(
          {static_cast<double>(out.alpha.at(b, 0, 0, 0)),
           static_cast<double>(out.alpha.at(b, 1, 0, 0)),
           static_cast<double>(out.alpha.at(b, 2, 0, 0))});
    }
  }
  std::map<std::string, GateGroupStats> stats;
  for (const auto& [regime, list] : rows) {
    GateGroupStats g;
    g.count = static_cast<int64_t>(list.size());
    for (const auto& row : list) {
      for (int i = 0; i < 3; ++i) g.mean[static_cast<size_t>(i)] += row[static_cast<size_t>(i)];
    }
    for (int i = 0; i < 3; ++i) g.mean[static_cast<size_t>(i)] /= static_cast<double>(g.count);
    for (const auto& row : list) {
      for (int i = 0; i < 3; ++i) {
        const double d = row[static_cast<size_t>(i)] - g.mean[static_cast<size_t>(i)];
        g.stddev[static_cast<size_t>(i)] += d * d;
      }
    }
    for (int i = 0; i < 3; ++i) {
      g.stddev[static_cast<size_t>(i)] = std::sqrt(g.stddev[static_cast<size_t>(i)] / static_cast<double>(g.count));
    }
    stats[regime] = g;
  }
  return stats;
}

Tensor<int32_t> infer_mask(ATVNet<float>& net, const Tensor<float>& image, bool fixed_gate) {
  detail::require(image.rank() == 3 && image.dim(0) == 3, "infer_mask: image must be (3,H,W)");
  const int64_t h = image.dim(1), w = image.dim(2);
  const int64_t ph = (h + 7) / 8 * 8, pw = (w + 7) / 8 * 8;
  Tensor<float> batch(Shape{1, 3, ph, pw});
  // reflect-pad the bottom/right edge up to the next multiple of 8
  for (int64_t c = 0; c < 3; ++c) {
    for (int64_t y = 0; y < ph; ++y) {
      const int64_t sy = y < h ? y : 2 * h - 2 - y;
      for (int64_t x = 0; x < pw; ++x) {
        const int64_t sx = x < w ? x : 2 * w - 2 - x;
        batch.at(0, c, y, x) = image[(c * h + sy) * w + sx];
      }
    }
  }
  ForwardOptions<float> opts;
  opts.mode = Mode::eval;
  opts.fixed_gate = fixed_gate;
  ModelOutput<float> out = model_forward(net, batch, opts, false);
  const Tensor<int32_t> full = argmax_classes(out.logits);
  Tensor<int32_t> mask(Shape{h, w});
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) mask[y * w + x] = full[(0 * ph + y) * pw + x];
  }
  return mask;
}

TrainResult train_run(const RunConfig& cfg, const std::string& data_dir,
                      const std::string& out_ckpt, const std::string& resume_path,
                      std::ostream* log) {
  detail::require(cfg.batch_size >= 1 && cfg.epochs >= 1, "train: bad batch size or epoch count");
  const DatasetManifest train_set = load_dataset((fs::path(data_dir) / "train").string());
  const DatasetManifest val_set = load_dataset((fs::path(data_dir) / "val").string());
  detail::require(train_set.k == cfg.num_classes,
                  "train: dataset has K=" + std::to_string(train_set.k) + " but config expects " +
                      std::to_string(cfg.num_classes));

  ATVNet<float> net = build_from_config(cfg);
  AdamWState<float> opt;
  int start_epoch = 0;
  double best_miou = -1.0;
  if (!resume_path.empty()) {
    LoadedTraining lt = load_training_checkpoint(resume_path);
    net = std::move(lt.net);
    opt = std::move(lt.opt);
    start_epoch = lt.next_epoch;
    best_miou = lt.best_miou;
    detail::require(lt.cfg.num_classes == cfg.num_classes && lt.cfg.c_head == cfg.c_head &&
                        lt.cfg.scout_dilation == cfg.scout_dilation,
                    "train: resume checkpoint architecture differs from config");
  }

  const int n_train = train_set.size();
  const int steps_per_epoch = std::max(1, n_train / cfg.batch_size);
  PolySchedule sched{cfg.lr0, cfg.poly_power,
                     static_cast<int64_t>(steps_per_epoch) * cfg.epochs};
  AdamWHyper hyper{cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay};
  const std::unordered_set<std::string> no_decay(net.no_decay.begin(), net.no_decay.end());
  AugmentConfig aug;
  aug.scale_choices = cfg.scale_choices;
  aug.crop_h = cfg.crop;
  aug.crop_w = cfg.crop;
  aug.hflip_prob = cfg.hflip_prob;

  TrainResult result;
  result.checkpoint_path = out_ckpt;

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    // the shuffle and every augmentation draw depend only on
    // (seed, epoch, index), so a resumed run replays the identical stream
    std::vector<int> order(static_cast<size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);
    {
      Rng shuffle_rng(mix(cfg.seed, 0x5487FF1E, static_cast<uint64_t>(epoch)));
      for (int i = n_train - 1; i > 0; --i) {
        const int j = static_cast<int>(shuffle_rng.index(i + 1));
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
      }
    }

    float loss_sum = 0;
    int loss_count = 0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      std::vector<Sample> batch_samples;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const int idx = order[static_cast<size_t>((step * cfg.batch_size + b) % n_train)];
        Rng aug_rng(mix(mix(cfg.seed, 0xA0653EED), static_cast<uint64_t>(epoch),
                        static_cast<uint64_t>(idx)));
        batch_samples.push_back(augment(load_sample(train_set, idx), aug, aug_rng));
      }
      auto [images, labels] = make_batch(batch_samples);

      ForwardOptions<float> opts;
      opts.mode = Mode::train;
      opts.update_running = true;
      opts.fixed_gate = cfg.fixed_gate;
      ModelOutput<float> out = model_forward(net, images, opts, true);

      OHEMConfig ohem;
      ohem.theta = cfg.ohem_theta;
      ohem.ignore_index = cfg.ignore_index;
      if (cfg.ohem_min_kept >= 0) {
        ohem.min_kept = cfg.ohem_min_kept;
      } else {
        int64_t valid = 0;
        for (int64_t i = 0; i < labels.size(); ++i) valid += (labels[i] != cfg.ignore_index);
        ohem.min_kept = valid / 16;
      }
      OhemLossResult<float> lr_out = ohem_loss(out.logits, labels, ohem);
      const int64_t global_step = static_cast<int64_t>(epoch) * steps_per_epoch + step;
      if (!std::isfinite(lr_out.loss)) {
        throw std::runtime_error("NaN loss at step " + std::to_string(global_step));
      }
      result.step_losses.push_back(lr_out.loss);
      loss_sum += lr_out.loss;
      ++loss_count;

      ModelGrads<float> grads = model_backward(net, out.trace, lr_out.dlogits);
      const double lr = poly_lr(sched, global_step);
      adamw_step(net.params, grads.params, opt, lr, hyper, no_decay);
    }

    // per-epoch validation + gate inspection
    ConfusionMatrix cm = evaluate_split(net, val_set, cfg.batch_size, cfg.ignore_index, cfg.fixed_gate);
    const double miou = cm.mean_iou();
    const auto gstats = gate_statistics(net, val_set, cfg.batch_size, cfg.fixed_gate);

    EpochLog elog;
    elog.epoch = epoch;
    elog.mean_loss = loss_count ? loss_sum / static_cast<float>(loss_count) : 0.0f;
    elog.lr = poly_lr(sched, static_cast<int64_t>(epoch) * steps_per_epoch);
    elog.val_miou = miou;
    elog.seconds = seconds_since(t0);
    for (const auto& [regime, st] : gstats) elog.alpha_by_regime[regime] = st.mean;
    result.epoch_logs.push_back(elog);
    result.final_val_miou = miou;

    if (log) {
      char line[256];
      std::snprintf(line, sizeof(line), "epoch %d/%d loss=%.4f lr=%.3e val_miou=%.4f",
                    epoch + 1, cfg.epochs, elog.mean_loss, elog.lr, miou);
      *log << line;
      for (const auto& [regime, st] : gstats) {
        std::snprintf(line, sizeof(line), " alpha_%s=%.3f/%.3f/%.3f", regime.c_str(), st.mean[0],
                      st.mean[1], st.mean[2]);
        *log << line;
      }
      std::snprintf(line, sizeof(line), " %.1fs", elog.seconds);
      *log << line << std::endl;
    }

    if (miou > best_miou) {
      best_miou = miou;
      result.best_val_miou = miou;
      result.best_epoch = epoch;
      if (!out_ckpt.empty()) {
        save_training_checkpoint(out_ckpt, cfg, net, opt, epoch + 1, best_miou);
      }
    }
  }
  if (result.best_epoch < 0) result.best_val_miou = best_miou;
  return result;
}

}  // namespace atv
