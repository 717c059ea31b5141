#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "pnet/config.hpp"
#include "pnet/gradcheck.hpp"
#include "pnet/image_io.hpp"
#include "pnet/metrics.hpp"
#include "pnet/training.hpp"

namespace fs = std::filesystem;
using namespace pnet;

namespace {

struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = ".";
  std::string variant, first_layer, data_root, checkpoint, image, split = "test";
  int epochs = 0, base_channels = 0, batch_size = 0, n_samples = 0, class_id = 0, draws = 50, scale = 8;
  double lr = 0.0, tolerance = 1e-4;
  bool ablate = false;
};

struct Options {
  CLI::Option* seed = nullptr;
  CLI::Option* variant = nullptr;
  CLI::Option* first_layer = nullptr;
  CLI::Option* data_root = nullptr;
  CLI::Option* epochs = nullptr;
  CLI::Option* base_channels = nullptr;
  CLI::Option* batch_size = nullptr;
  CLI::Option* lr = nullptr;
  CLI::Option* n_samples = nullptr;
};

/// Defaults, then the config file, then flags.
RunConfig resolve(const Flags& f, const Options& o) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (o.seed && o.seed->count()) {
    c.train.seed = f.seed;
    c.data_seed = f.seed;
  }
  if (o.variant && o.variant->count()) apply_setting(c, "model.variant", f.variant);
  if (o.first_layer && o.first_layer->count()) apply_setting(c, "model.first_layer", f.first_layer);
  if (o.data_root && o.data_root->count()) c.data_root = f.data_root;
  if (o.epochs && o.epochs->count()) c.train.epochs = f.epochs;
  if (o.base_channels && o.base_channels->count()) c.model.base_channels = f.base_channels;
  if (o.batch_size && o.batch_size->count()) c.train.batch_size = f.batch_size;
  if (o.lr && o.lr->count()) c.train.adam.lr = f.lr;
  if (o.n_samples && o.n_samples->count()) c.synth.n_samples = f.n_samples;
  return c;
}

std::vector<SegSample> dataset_for(const RunConfig& c) {
  if (c.data_root) {
    if (!fs::is_directory(*c.data_root)) throw ConfigError("data root does not exist: " + c.data_root->string());
    return load_dataset(*c.data_root, c.model.n_classes);
  }
  if (c.synth.n_classes != c.model.n_classes)
    throw ConfigError("data.synth.n_classes (" + std::to_string(c.synth.n_classes) + ") differs from model.n_classes (" +
                      std::to_string(c.model.n_classes) + ")");
  c.synth.validate(1 << c.model.depth);
  return generate_synthetic(c.synth, c.data_seed);
}

const std::vector<SegSample>& pick_split(const DataSplit& d, const std::string& name) {
  if (name == "train") return d.train;
  if (name == "val") return d.val;
  if (name == "test") return d.test;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

void write_csv_header(std::ostream& os) { os << "variant,seed,epoch,split,pixel_acc,miou\n"; }

void write_csv_row(std::ostream& os, const ModelConfig& m, std::uint64_t seed, int epoch, const std::string& split,
                   double acc, double miou) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f,%.6f", acc, miou);
  os << to_string(m.variant);
  if (m.first_layer) os << "/" << to_string(*m.first_layer);
  os << "," << seed << "," << epoch << "," << split << "," << buf << "\n";
}

Image8 upscale(const Image8& img, int factor) {
  Image8 out{img.width * factor, img.height * factor, img.channels,
             std::vector<std::uint8_t>(std::size_t(img.width) * img.height * img.channels * factor * factor)};
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y / factor, x / factor, c);
  return out;
}

int cmd_synth(const Flags& f, const Options& o) {
  const RunConfig c = resolve(f, o);
  c.synth.validate(1 << c.model.depth);
  const auto samples = generate_synthetic(c.synth, c.data_seed);
  save_dataset(f.out, samples, c.synth);
  std::printf("wrote %zu samples to %s\n", samples.size(), f.out.c_str());
  return 0;
}

int run_training(RunConfig c, const fs::path& out, std::ostream& csv) {
  c.model.validate();
  if (!(c.train.adam.lr > 0.0)) throw ConfigError("train.lr must be > 0");
  const auto data = split(dataset_for(c), c.data_seed);
  fs::create_directories(out);
  const fs::path ckpt = c.train.checkpoint.value_or(out / (std::string(to_string(c.model.variant)) + ".pnet"));
  c.train.checkpoint = ckpt;
  SegModel<float> model(c.model, c.train.seed);
  std::fprintf(stderr, "%s: %zu train / %zu val / %zu test, %ld trainable scalars\n",
               std::string(to_string(c.model.variant)).c_str(), data.train.size(), data.val.size(), data.test.size(),
               long(model.parameters().trainable_count()));
  const auto history = train(model, data, c.train, [&](const EpochRecord& r) {
    std::fprintf(stderr, "epoch %3d  loss %.5f", r.epoch, r.train_loss);
    if (r.evaluated) {
      std::fprintf(stderr, "  val_loss %.5f  acc %.4f  miou %.4f", r.val_loss, r.val_pixel_acc, r.val_miou);
      write_csv_row(csv, c.model, c.train.seed, r.epoch, "val", r.val_pixel_acc, r.val_miou);
    }
    std::fprintf(stderr, "\n");
  });
  if (history.best_epoch > 0 && !data.test.empty()) {
    const auto best = load_checkpoint<float>(ckpt);
    const auto r = evaluate(best, data.test, c.train.batch_size);
    write_csv_row(csv, c.model, c.train.seed, history.best_epoch, "test", r.pixel_acc, r.miou);
    std::printf("%s best epoch %d: val miou %.4f, test acc %.4f miou %.4f, checkpoint %s\n",
                std::string(to_string(c.model.variant)).c_str(), history.best_epoch, history.best_miou, r.pixel_acc,
                r.miou, ckpt.string().c_str());
  }
  return 0;
}

int cmd_train(const Flags& f, const Options& o) {
  RunConfig c = resolve(f, o);
  const fs::path out = f.out;
  fs::create_directories(out);
  const fs::path csv_path = c.history.value_or(out / "history.csv");
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write history CSV " + csv_path.string());
  write_csv_header(csv);
  if (!f.ablate) return run_training(c, out, csv);
  if (c.train.checkpoint) throw ConfigError("train.checkpoint cannot be combined with --ablate");
  for (auto v : {Variant::ResUNet, Variant::DilResUNet, Variant::LGMPResUNet, Variant::PerceptiveNet}) {
    RunConfig run = c;
    run.model.variant = v;
    run.model.first_layer.reset();
    run_training(run, out, csv);
  }
  return 0;
}

int cmd_eval(const Flags& f, const Options& o) {
  RunConfig c = resolve(f, o);
  const auto model = load_checkpoint<float>(f.checkpoint);
  c.model = model.config();
  const auto data = split(dataset_for(c), c.data_seed);
  const auto& samples = pick_split(data, f.split);
  const auto r = evaluate(model, samples, c.train.batch_size);
  const auto preds = predict_masks(model, samples, c.train.batch_size);
  const fs::path out = f.out;
  fs::create_directories(out / "pred");
  for (std::size_t i = 0; i < preds.size(); ++i)
    write_png(out / "pred" / (sample_stem(i) + ".png"), mask_to_image(preds[i]));
  std::ofstream csv(out / "metrics.csv", std::ios::trunc);
  write_csv_header(csv);
  write_csv_row(csv, c.model, c.train.seed, 0, f.split, r.pixel_acc, r.miou);
  std::printf("%s split: pixel_acc %.6f  miou %.6f\n", f.split.c_str(), r.pixel_acc, r.miou);
  for (std::size_t k = 0; k < r.class_iou.size(); ++k) {
    if (r.class_iou[k])
      std::printf("  class %zu iou %.6f\n", k, *r.class_iou[k]);
    else
      std::printf("  class %zu absent\n", k);
  }
  return 0;
}

template <typename Layer, typename Params, typename Fn>
int dump_bank(const Layer& layer, int k, const fs::path& out, int scale, Fn kernel) {
  fs::create_directories(out);
  const std::vector<Params> bank = layer.bank();
  const std::size_t in_c = bank.size() / std::size_t(layer.out_channels());
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const auto gray = kernel_to_gray(kernel(bank[i], k));
    Image8 img{k, k, 1, std::vector<std::uint8_t>(gray.data(), gray.data() + gray.size())};
    char name[64];
    std::snprintf(name, sizeof name, "filter_o%03zu_i%zu.png", i / in_c, i % in_c);
    write_png(out / name, upscale(img, scale));
  }
  std::printf("wrote %zu filters to %s\n", bank.size(), out.string().c_str());
  return 0;
}

int cmd_filters(const Flags& f, const Options& o) {
  const RunConfig c = resolve(f, o);
  const SegModel<double> model = f.checkpoint.empty() ? SegModel<double>(c.model, c.train.seed)
                                                      : load_checkpoint<double>(f.checkpoint);
  if (f.scale < 1) throw ConfigError("--scale must be >= 1");
  const int k = model.config().loggabor_kernel;
  if (const auto* lg = std::get_if<LogGaborConv2d<double>>(&model.first_layer()))
    return dump_bank<LogGaborConv2d<double>, LogGaborParams<double>>(
        *lg, k, f.out, f.scale, [](const auto& p, int n) { return log_gabor_kernel(p, n); });
  if (const auto* gb = std::get_if<GaborConv2d<double>>(&model.first_layer()))
    return dump_bank<GaborConv2d<double>, GaborParams<double>>(
        *gb, k, f.out, f.scale, [](const auto& p, int n) { return gabor_kernel(p, n); });
  throw ConfigError("model first layer is a plain convolution; filters needs a Gabor or log-Gabor first layer");
}

int cmd_cam(const Flags& f, const Options&) {
  const auto model = load_checkpoint<float>(f.checkpoint);
  const Image8 rgb = read_png(f.image, 3);
  Tensor<float> x({1, 3, rgb.height, rgb.width});
  for (int y = 0; y < rgb.height; ++y)
    for (int xx = 0; xx < rgb.width; ++xx)
      for (int ch = 0; ch < 3; ++ch) x(0, ch, y, xx) = float(rgb.at(y, xx, ch)) / 255.0f;
  const auto heat = compute_cam(model, x, f.class_id);
  fs::path out = f.out;
  if (out.extension() != ".png") out /= "cam.png";
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_png(out, overlay_heatmap(rgb, heat));
  fs::path gray = out;
  gray.replace_filename(out.stem().string() + "_heat.png");
  write_png(gray, heatmap_to_gray(heat));
  std::printf("wrote %s and %s\n", out.string().c_str(), gray.string().c_str());
  return 0;
}

int cmd_gradcheck(const Flags& f, const Options& o) {
  const RunConfig c = resolve(f, o);
  const std::uint64_t seed = c.train.seed;
  if (f.draws < 1) throw ConfigError("--draws must be >= 1");
  std::vector<std::pair<std::string, GradcheckEntry>> rows;
  for (auto& e : check_log_gabor_partials(f.draws, seed, c.model.loggabor_kernel)) rows.emplace_back("loggabor", e);
  for (auto& e : check_gabor_partials(f.draws, seed, c.model.loggabor_kernel)) rows.emplace_back("gabor", e);
  for (auto& e : check_layer_gradients(f.draws, seed)) rows.emplace_back("layer", e);
  bool ok = true;
  std::printf("%-9s %-18s %14s %9s  %s\n", "group", "name", "max_rel_err", "checked", "result");
  for (const auto& [group, e] : rows) {
    const bool pass = e.passed(f.tolerance);
    ok = ok && pass;
    std::printf("%-9s %-18s %14.3e %9ld  %s\n", group.c_str(), e.name.c_str(), e.max_rel_error, long(e.checked),
                pass ? "PASS" : "FAIL");
  }
  std::printf("%s (tolerance %.1e)\n", ok ? "all gradients pass" : "gradient check FAILED", f.tolerance);
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PerceptiveNet desk-scale segmentation toolkit"};
  app.require_subcommand(1);
  Flags f;
  Options opts;
  std::function<int(const Flags&, const Options&)> handler;

  const auto common = [&](CLI::App* sub, const std::string& out_help) {
    sub->add_option("--config", f.config, "key = value run configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "seed for data generation, splitting and training");
    if (!out_help.empty()) sub->add_option("--out", f.out, out_help);
  };
  const auto model_flags = [&](CLI::App* sub) {
    sub->add_option("--variant", f.variant, "resunet | dilresunet | lgmpresunet | perceptivenet");
    sub->add_option("--first-layer", f.first_layer, "conv | gabor | loggabor (overrides variant)");
    sub->add_option("--base-channels", f.base_channels, "channel width of the first level");
  };
  const auto data_flags = [&](CLI::App* sub) {
    sub->add_option("--data", f.data_root, "dataset root (images/, masks/); synthetic if omitted");
    sub->add_option("--n-samples", f.n_samples, "synthetic sample count");
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  common(synth, "dataset root to write");
  synth->add_option("--n-samples", f.n_samples, "number of samples");
  synth->callback([&] { handler = cmd_synth; });

  auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoint + history CSV");
  common(train_cmd, "output directory");
  model_flags(train_cmd);
  data_flags(train_cmd);
  train_cmd->add_option("--epochs", f.epochs, "training epochs");
  train_cmd->add_option("--batch-size", f.batch_size, "batch size");
  train_cmd->add_option("--lr", f.lr, "Adam learning rate");
  train_cmd->add_flag("--ablate", f.ablate, "train all four variants sequentially");
  train_cmd->callback([&] { handler = cmd_train; });

  auto* ablate = app.add_subcommand("ablate", "alias for train --ablate");
  common(ablate, "output directory");
  data_flags(ablate);
  ablate->add_option("--base-channels", f.base_channels, "channel width of the first level");
  ablate->add_option("--epochs", f.epochs, "training epochs");
  ablate->callback([&] {
    f.ablate = true;
    handler = cmd_train;
  });

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint; writes metrics.csv and predicted masks");
  common(eval, "output directory");
  data_flags(eval);
  eval->add_option("--checkpoint", f.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--split", f.split, "train | val | test");
  eval->callback([&] { handler = cmd_eval; });

  auto* filters = app.add_subcommand("filters", "write the first-layer filter bank as PNGs");
  common(filters, "output directory");
  model_flags(filters);
  filters->add_option("--checkpoint", f.checkpoint, "checkpoint (initial bank from --seed when omitted)")
      ->check(CLI::ExistingFile);
  filters->add_option("--scale", f.scale, "nearest-neighbour upscaling factor");
  filters->callback([&] { handler = cmd_filters; });

  auto* cam = app.add_subcommand("cam", "class activation map overlay for one image");
  common(cam, "output PNG (or directory)");
  cam->add_option("--checkpoint", f.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  cam->add_option("--image", f.image, "RGB PNG input")->required()->check(CLI::ExistingFile);
  cam->add_option("--class", f.class_id, "class id")->required();
  cam->callback([&] { handler = cmd_cam; });

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every analytic gradient");
  common(gradcheck, "");
  gradcheck->add_option("--draws", f.draws, "random parameter draws per check");
  gradcheck->add_option("--tolerance", f.tolerance, "maximum relative error");
  gradcheck->callback([&] { handler = cmd_gradcheck; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  for (auto* sub : app.get_subcommands()) {
    const auto bind = [sub](const char* name) { return sub->get_option_no_throw(name); };
    opts = Options{bind("--seed"),          bind("--variant"),    bind("--first-layer"),
                   bind("--data"),          bind("--epochs"),     bind("--base-channels"),
                   bind("--batch-size"),    bind("--lr"),         bind("--n-samples")};
  }

  try {
    return handler(f, opts);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::domain_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
