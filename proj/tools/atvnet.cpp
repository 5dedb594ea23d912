// atvnet: data generation, training, evaluation, inference, gradient
// checking and gate inspection for the triple-view segmentation network.

#include <chrono>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "atv/checkpoint.hpp"
#include "atv/gradcheck.hpp"
#include "atv/netpbm.hpp"
#include "atv/train.hpp"

namespace fs = std::filesystem;

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

void require_usage(bool cond, const std::string& msg) {
  if (!cond) throw UsageError(msg);
}

int cmd_gen_data(const std::string& out, int num, int val_num, int size, int classes,
                 const std::string& regime, uint64_t seed) {
  const atv::SceneRegime r = atv::regime_from_string(regime);
  const atv::DatasetManifest train = atv::generate_triscenes(
      num, size, classes, r, seed, (fs::path(out) / "train").string());
  const atv::DatasetManifest val = atv::generate_triscenes(
      val_num, size, classes, r, atv::mix(seed, 0x76A1), (fs::path(out) / "val").string());
  int ctx = 0;
  for (const auto& e : train.entries) ctx += e.regime == "context";
  std::cout << "wrote " << train.size() << " train + " << val.size() << " val samples to " << out
            << " (size=" << size << ", K=" << classes << ", regime=" << regime << ", seed=" << seed
            << ", context scenes in train=" << ctx << ")\n";
  return 0;
}

int cmd_train(const std::string& data, const std::string& out, const std::string& config_path,
              const std::string& resume, atv::RunConfig cfg) {
  require_usage(fs::exists(fs::path(data) / "train" / "manifest.json"),
                "missing dataset manifest under " + data + "/train");
  require_usage(fs::exists(fs::path(data) / "val" / "manifest.json"),
                "missing dataset manifest under " + data + "/val");
  (void)config_path;
  std::cout << "effective config:\n" << atv::config_to_json(cfg) << "\n";
  const atv::TrainResult r = atv::train_run(cfg, data, out, resume, &std::cout);
  std::cout << "best val_miou=" << r.best_val_miou << " at epoch " << (r.best_epoch + 1)
            << "; checkpoint " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& data, const std::string& ckpt, const std::string& split, int batch) {
  atv::RunConfig cfg;
  atv::ATVNet<float> net = atv::load_model_checkpoint(ckpt, &cfg);
  const atv::DatasetManifest m = atv::load_dataset((fs::path(data) / split).string());
  require_usage(m.k == net.num_classes,
                "checkpoint expects K=" + std::to_string(net.num_classes) + " but dataset has K=" +
                    std::to_string(m.k));
  const atv::ConfusionMatrix cm =
      atv::evaluate_split(net, m, batch, cfg.ignore_index, cfg.fixed_gate);
  std::cout << atv::metrics_report(cm);
  return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& image_path, const std::string& out_path) {
  atv::RunConfig cfg;
  atv::ATVNet<float> net = atv::load_model_checkpoint(ckpt, &cfg);
  const atv::ImageU8 img = atv::read_pnm(image_path);
  require_usage(img.channels == 3, "infer expects an RGB PPM image");
  atv::Tensor<float> x(atv::Shape{3, img.h, img.w});
  const int64_t plane = static_cast<int64_t>(img.h) * img.w;
  for (int64_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      x[c * plane + i] = static_cast<float>(img.pixels[static_cast<size_t>(i) * 3 + c]) / 255.0f;
    }
  }
  const atv::Tensor<int32_t> mask = atv::infer_mask(net, x, cfg.fixed_gate);
  atv::ImageU8 out;
  out.w = img.w;
  out.h = img.h;
  out.channels = 1;
  out.pixels.resize(static_cast<size_t>(plane));
  for (int64_t i = 0; i < plane; ++i) out.pixels[static_cast<size_t>(i)] = static_cast<uint8_t>(mask[i]);
  atv::write_pgm(out_path, out);
  std::cout << "wrote " << out_path << " (" << img.w << "x" << img.h << ")\n";
  return 0;
}

int cmd_gradcheck(uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<atv::GradCheckReport> reports = atv::run_gradcheck_suite(seed);
  for (const atv::GradCheckReport& r : reports) std::cout << atv::gradcheck_format(r) << "\n";
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = atv::gradcheck_all_pass(reports);
  std::cout << (ok ? "all layers pass" : "FAILURES present") << " (" << reports.size()
            << " checks, " << secs << "s, single thread)\n";
  return ok ? 0 : 1;
}

int cmd_inspect_gate(const std::string& ckpt, const std::string& data, const std::string& split,
                     int batch) {
  atv::RunConfig cfg;
  atv::ATVNet<float> net = atv::load_model_checkpoint(ckpt, &cfg);
  const atv::DatasetManifest m = atv::load_dataset((fs::path(data) / split).string());
  const auto stats = atv::gate_statistics(net, m, batch, cfg.fixed_gate);
  const char* names[3] = {"alpha_m", "alpha_l", "alpha_s"};
  for (const auto& [regime, st] : stats) {
    std::cout << "regime " << regime << " (" << st.count << " scenes)\n";
    for (int i = 0; i < 3; ++i) {
      char line[128];
      std::snprintf(line, sizeof(line), "  %s mean=%.4f std=%.4f\n", names[i],
                    st.mean[static_cast<size_t>(i)], st.stddev[static_cast<size_t>(i)]);
      std::cout << line;
    }
  }
  // text histogram of the scout weight per regime
  atv::ForwardOptions<float> opts;
  opts.mode = atv::Mode::eval;
  opts.fixed_gate = cfg.fixed_gate;
  std::map<std::string, std::array<int, 10>> hist;
  for (int i = 0; i < m.size(); ++i) {
    const atv::Sample s = atv::load_sample(m, i);
    auto [images, labels] = atv::make_batch({s});
    (void)labels;
    const atv::ModelOutput<float> out = atv::model_forward(net, images, opts, false);
    const float as = out.alpha.at(0, 2, 0, 0);
    int bin = static_cast<int>(as * 10.0f);
    bin = std::clamp(bin, 0, 9);
    hist[m.entries[static_cast<size_t>(i)].regime][static_cast<size_t>(bin)]++;
  }
  std::cout << "alpha_s histogram (rows: [0.0,0.1) .. [0.9,1.0])\n";
  for (const auto& [regime, bins] : hist) {
    std::cout << "regime " << regime << "\n";
    for (int b = 0; b < 10; ++b) {
      std::cout << "  " << (b / 10.0) << "-" << ((b + 1) / 10.0) << " ";
      for (int c = 0; c < bins[static_cast<size_t>(b)]; ++c) std::cout << '#';
      std::cout << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"triple-view segmentation network (desk scale)"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a TriScenes dataset (train + val splits)");
  std::string gen_out = "data";
  int gen_num = 200, gen_val = -1, gen_size = 64, gen_classes = 5;
  std::string gen_regime = "mixed";
  uint64_t gen_seed = 7;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--num", gen_num, "training samples (default 200)");
  gen->add_option("--val-num", gen_val, "validation samples (default num/4)");
  gen->add_option("--size", gen_size, "image side, divisible by 8 (default 64)");
  gen->add_option("--classes", gen_classes, "class count K >= 3 (default 5)");
  gen->add_option("--regime", gen_regime, "local | context | mixed (default mixed)");
  gen->add_option("--seed", gen_seed, "generator seed (default 7)");

  // train
  auto* train = app.add_subcommand("train", "train on a generated dataset");
  std::string tr_data = "data", tr_out = "model.ckpt", tr_config, tr_resume;
  bool tr_fixed_gate = false;
  int tr_epochs = -1, tr_batch = -1;
  int64_t tr_seed = -1;
  train->add_option("--data", tr_data, "dataset directory (with train/ and val/)");
  train->add_option("--out", tr_out, "checkpoint output path");
  train->add_option("--config", tr_config, "JSON config file (flags override it)");
  train->add_option("--resume", tr_resume, "checkpoint to resume from");
  train->add_option("--seed", tr_seed, "training seed override");
  train->add_option("--epochs", tr_epochs, "epoch count override");
  train->add_option("--batch", tr_batch, "batch size override");
  train->add_flag("--fixed-gate", tr_fixed_gate, "ablate the gate: fuse with constant 1/3 weights");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  std::string ev_data = "data", ev_ckpt = "model.ckpt", ev_split = "val";
  int ev_batch = 8;
  eval->add_option("--data", ev_data, "dataset directory");
  eval->add_option("--ckpt", ev_ckpt, "checkpoint path");
  eval->add_option("--split", ev_split, "train | val (default val)");
  eval->add_option("--batch", ev_batch, "evaluation batch size");

  // infer
  auto* infer = app.add_subcommand("infer", "segment one PPM image into a PGM mask");
  std::string in_ckpt = "model.ckpt", in_image, in_out = "mask.pgm";
  infer->add_option("--ckpt", in_ckpt, "checkpoint path");
  infer->add_option("--image", in_image, "input PPM (P6)")->required();
  infer->add_option("--out", in_out, "output PGM mask path");

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "run the finite-difference verification suite");
  uint64_t gc_seed = 20240701;
  grad->add_option("--seed", gc_seed, "suite seed");

  // inspect-gate
  auto* gate = app.add_subcommand("inspect-gate", "gate weight statistics per scene regime");
  std::string ig_ckpt = "model.ckpt", ig_data = "data", ig_split = "val";
  int ig_batch = 8;
  gate->add_option("--ckpt", ig_ckpt, "checkpoint path");
  gate->add_option("--data", ig_data, "dataset directory");
  gate->add_option("--split", ig_split, "train | val (default val)");
  gate->add_option("--batch", ig_batch, "batch size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*gen) {
      if (gen_val < 0) gen_val = std::max(1, gen_num / 4);
      return cmd_gen_data(gen_out, gen_num, gen_val, gen_size, gen_classes, gen_regime, gen_seed);
    }
    if (*train) {
      atv::RunConfig cfg;
      if (!tr_config.empty()) cfg = atv::config_from_file(tr_config);
      if (tr_seed >= 0) cfg.seed = static_cast<uint64_t>(tr_seed);
      if (tr_epochs > 0) cfg.epochs = tr_epochs;
      if (tr_batch > 0) cfg.batch_size = tr_batch;
      if (tr_fixed_gate) cfg.fixed_gate = true;
      return cmd_train(tr_data, tr_out, tr_config, tr_resume, cfg);
    }
    if (*eval) return cmd_eval(ev_data, ev_ckpt, ev_split, ev_batch);
    if (*infer) return cmd_infer(in_ckpt, in_image, in_out);
    if (*grad) return cmd_gradcheck(gc_seed);
    if (*gate) return cmd_inspect_gate(ig_ckpt, ig_data, ig_split, ig_batch);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
