#include "bcnn/cli.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <algorithm>
#include <filesystem>
#include <iomanip>

#include "bcnn/accel.hpp"
#include "bcnn/serialize.hpp"
#include "bcnn/slr.hpp"
#include "bcnn/training.hpp"

namespace bcnn {

namespace {

struct DataFlags {
  std::string data = "synthetic";
  std::size_t limit = 0;
  std::size_t synthetic_per_class = 16;
};

void add_data_flags(CLI::App* cmd, DataFlags& f, const char* what) {
  cmd->add_option("--data", f.data, std::string("CIFAR-10 binary directory or 'synthetic' (") + what + ")");
  cmd->add_option("--limit", f.limit, "use only the first N samples (0 = all)");
  cmd->add_option("--synthetic-per-class", f.synthetic_per_class, "samples per class for synthetic data")
      ->check(CLI::PositiveNumber);
}

std::size_t num_classes(const ModelGraph& m) { return m.output_shape().c; }

Dataset training_data(const DataFlags& f, const ModelGraph& model, std::uint64_t seed) {
  Dataset d;
  if (f.data == "synthetic") {
    d = make_synthetic_blobs(f.synthetic_per_class, num_classes(model), model.input_shape(), 1.0, 0.5, seed);
  } else {
    d = load_cifar10(f.data).first;
  }
  if (f.limit && f.limit < d.size()) d = d.subset(0, f.limit);
  return d;
}

ModelGraph build_named(const std::string& name, std::uint64_t seed) {
  if (name == "nin") return build_nin_bcnn(10, seed);
  if (name == "resnet18") return build_resnet18_bcnn(10, seed);
  if (name == "tiny") {
    TinyBcnnSpec spec;
    spec.height = spec.width_px = 32;
    spec.num_classes = 10;
    return build_tiny_bcnn(spec, seed);
  }
  throw Error(ErrorCode::UsageError, "unknown model '" + name + "'");
}

void print_epoch(std::ostream& out, const EpochStats& s) {
  out << "epoch " << s.epoch << " loss " << std::setprecision(6) << s.loss << " accuracy " << s.accuracy << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Binarized complex neural network engine", "bcnn"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a BCNN from scratch");
  std::string model_name = "nin", train_out;
  TrainConfig tcfg;
  DataFlags train_data;
  train_cmd->add_option("--model", model_name, "nin | resnet18 | tiny")
      ->check(CLI::IsMember({"nin", "resnet18", "tiny"}));
  add_data_flags(train_cmd, train_data, "default synthetic");
  train_cmd->add_option("--epochs", tcfg.epochs, "training epochs");
  train_cmd->add_option("--lr", tcfg.lr, "SGD learning rate");
  train_cmd->add_option("--batch", tcfg.batch_size, "batch size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", tcfg.seed, "seed for weights, data and shuffling");
  train_cmd->add_option("--out", train_out, "output model file")->required();

  // prune
  auto* prune_cmd = app.add_subcommand("prune", "SLR channel pruning of the binarized layers");
  std::string prune_in, prune_out;
  double budget_ratio = 0.5;
  SlrConfig scfg;
  TrainConfig prune_train;
  DataFlags prune_data;
  prune_cmd->add_option("--in", prune_in, "input model file")->required();
  prune_cmd->add_option("--budget-ratio", budget_ratio, "fraction of output channels kept per layer");
  prune_cmd->add_option("--rho", scfg.rho, "penalty coefficient");
  prune_cmd->add_option("--bigM", scfg.M, "stepsize parameter M");
  prune_cmd->add_option("--r", scfg.r, "stepsize parameter r");
  prune_cmd->add_option("--s0", scfg.s0, "initial stepsize");
  prune_cmd->add_option("--iters", scfg.max_iters, "SLR iterations");
  prune_cmd->add_option("--lr", prune_train.lr, "SGD learning rate inside each iteration");
  prune_cmd->add_option("--batch", prune_train.batch_size, "batch size")->check(CLI::PositiveNumber);
  prune_cmd->add_option("--seed", prune_train.seed, "seed for data and shuffling");
  add_data_flags(prune_cmd, prune_data, "default synthetic");
  prune_cmd->add_option("--out", prune_out, "output model file")->required();

  // quantize
  auto* quant_cmd = app.add_subcommand("quantize", "STE fine-tuning of the binarized weights");
  std::string quant_in, quant_out;
  TrainConfig qcfg;
  qcfg.epochs = 1;
  DataFlags quant_data;
  quant_cmd->add_option("--in", quant_in, "input model file")->required();
  quant_cmd->add_option("--epochs", qcfg.epochs, "fine-tuning epochs");
  quant_cmd->add_option("--clip", qcfg.clip, "STE clipping threshold")->check(CLI::PositiveNumber);
  quant_cmd->add_option("--lr", qcfg.lr, "SGD learning rate");
  quant_cmd->add_option("--batch", qcfg.batch_size, "batch size")->check(CLI::PositiveNumber);
  quant_cmd->add_option("--seed", qcfg.seed, "seed for data and shuffling");
  add_data_flags(quant_cmd, quant_data, "default synthetic");
  quant_cmd->add_option("--out", quant_out, "output model file")->required();

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "classify images with a saved model");
  std::string infer_in, infer_image, infer_dir;
  int jobs = 1;
  infer_cmd->add_option("--in", infer_in, "model file")->required();
  auto* image_opt = infer_cmd->add_option("--image", infer_image, "CIFAR-10 format record file");
  auto* dir_opt = infer_cmd->add_option("--data", infer_dir, "CIFAR-10 directory (test_batch.bin)");
  image_opt->excludes(dir_opt);
  infer_cmd->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "throughput arithmetic of replicated kernels");
  std::size_t kernels = 1;
  double latency_ms = 0.0, baseline_fps = 0.0;
  bool tables = false;
  bench_cmd->add_option("--kernels", kernels, "kernel count")->required()->check(CLI::PositiveNumber);
  bench_cmd->add_option("--latency-ms", latency_ms, "per-kernel latency in ms")->required()->check(
      CLI::PositiveNumber);
  bench_cmd->add_option("--baseline-fps", baseline_fps, "baseline throughput for a speedup")->check(
      CLI::PositiveNumber);
  bench_cmd->add_flag("--tables", tables, "also print the reference resource and throughput tables");

  // export
  auto* export_cmd = app.add_subcommand("export", "describe a saved model");
  std::string export_in, export_format = "text";
  export_cmd->add_option("--in", export_in, "model file")->required();
  export_cmd->add_option("--format", export_format, "output format")->check(CLI::IsMember({"text"}));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    if (app.get_subcommands().empty()) err << app.help();
    return 2;
  }

  try {
    if (train_cmd->parsed()) {
      ModelGraph model = build_named(model_name, tcfg.seed);
      if (tcfg.epochs > 0) {
        const Dataset data = training_data(train_data, model, tcfg.seed);
        train(model, data, tcfg, [&](const EpochStats& s) { print_epoch(out, s); });
      }
      save_model(model, train_out);
      out << "saved " << train_out << '\n';
    } else if (prune_cmd->parsed()) {
      ModelGraph model = load_model(prune_in);
      const Dataset data = training_data(prune_data, model, prune_train.seed);
      ModelSlrProblem problem(model, data, prune_train, prune_train.seed);
      scfg.budgets = budgets_from_ratio(problem.channel_counts(), budget_ratio);
      out << "# iteration loss violation stepsize feasible\n";
      slr_prune(problem, scfg, [&](const SlrRecord& r) { write_history_line(out, r); });
      std::size_t active = 0, total = 0;
      for (auto* b : model.binary_convs()) {
        active += b->active_count();
        total += b->geometry().out_channels;
      }
      out << "channels kept " << active << '/' << total << '\n';
      save_model(model, prune_out);
      out << "saved " << prune_out << '\n';
    } else if (quant_cmd->parsed()) {
      ModelGraph model = load_model(quant_in);
      if (qcfg.epochs > 0) {
        const Dataset data = training_data(quant_data, model, qcfg.seed);
        train(model, data, qcfg, [&](const EpochStats& s) { print_epoch(out, s); });
      }
      save_model(model, quant_out);
      out << "saved " << quant_out << '\n';
    } else if (infer_cmd->parsed()) {
      const ModelGraph model = load_model(infer_in);
      if (infer_image.empty() && infer_dir.empty())
        throw Error(ErrorCode::UsageError, "infer needs --image FILE or --data DIR");
      const Dataset data = !infer_image.empty() ? load_cifar10_file(infer_image)
                                                : load_cifar10_file(std::filesystem::path(infer_dir) / "test_batch.bin");
      const Shape in = model.input_shape();
      const Shape ds = data.images.shape();
      if (ds.c != in.c || ds.h != in.h || ds.w != in.w)
        throw Error(ErrorCode::ShapeMismatch, "data " + to_string(ds) + " does not fit model input " + to_string(in));
      std::vector<std::uint32_t> pred(data.size());
      std::vector<std::string> failures(data.size());
      const auto n = static_cast<std::ptrdiff_t>(data.size());
#pragma omp parallel for num_threads(jobs) schedule(dynamic)
      for (std::ptrdiff_t i = 0; i < n; ++i) {
        try {
          const std::size_t idx = static_cast<std::size_t>(i);
          const RealTensor logits = forward(model, data.gather({&idx, 1}));
          pred[idx] = static_cast<std::uint32_t>(
              std::max_element(logits.data().begin(), logits.data().end()) - logits.data().begin());
        } catch (const std::exception& e) {
          failures[static_cast<std::size_t>(i)] = e.what();
        }
      }
      std::size_t correct = 0;
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (!failures[i].empty()) throw std::runtime_error("image " + std::to_string(i) + ": " + failures[i]);
        correct += pred[i] == data.labels[i];
        if (!infer_image.empty()) out << i << ' ' << pred[i] << ' ' << data.labels[i] << '\n';
      }
      out << "accuracy " << static_cast<double>(correct) / static_cast<double>(data.size()) << " (" << correct
          << '/' << data.size() << ")\n";
    } else if (bench_cmd->parsed()) {
      KernelConfig k;
      k.kernel_count = kernels;
      k.kernel_latency_s = latency_ms / 1000.0;
      const std::uint64_t fps = throughput(k);
      out << fps << " frames/s\n";
      if (baseline_fps > 0.0)
        out << "speedup " << std::fixed << std::setprecision(2) << speedup_report(static_cast<double>(fps), baseline_fps)
            << "x\n";
      if (tables) {
        out << '\n' << format_resource_table(reference_resources_nin()) << '\n'
            << format_resource_table(reference_resources_resnet18()) << '\n';
        std::vector<ThroughputRow> rows;
        for (const auto& d : reference_deployments()) {
          KernelConfig c;
          c.kernel_count = d.kernels;
          c.kernel_latency_s = d.latency_ms / 1000.0;
          rows.push_back({d.model, "Alveo U280", static_cast<double>(throughput(c))});
          rows.push_back({d.model, "RTX 6000", d.gpu_fps});
        }
        out << format_throughput_table(rows);
      }
    } else if (export_cmd->parsed()) {
      out << export_text(load_model(export_in));
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::UsageError ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace bcnn
