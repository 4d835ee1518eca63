// stereodepth: generate synthetic stereo data, train, infer, evaluate, gradcheck.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "stereodepth/gradcheck_suite.hpp"
#include "stereodepth/pipeline.hpp"

namespace fs = std::filesystem;
using namespace stereodepth;

namespace {

// Raised for problems the user fixes by changing arguments or the config file.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::size_t parse_count(const std::string& text, const char* what) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || text[0] == '-') {
    throw UsageError(std::string("bad ") + what + " '" + text + "'");
  }
  return static_cast<std::size_t>(v);
}

std::pair<std::size_t, std::size_t> parse_size(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw UsageError("--size expects WxH, got '" + text + "'");
  return {parse_count(text.substr(0, x), "width"), parse_count(text.substr(x + 1), "height")};
}

CropRect parse_crop(const std::string& text) {
  std::stringstream ss(text);
  std::string part;
  std::vector<std::size_t> v;
  while (std::getline(ss, part, ',')) v.push_back(parse_count(part, "crop value"));
  if (v.size() != 4) throw UsageError("--crop expects x,y,w,h, got '" + text + "'");
  if (v[2] == 0 || v[3] == 0) throw UsageError("--crop width and height must be positive");
  return {v[0], v[1], v[2], v[3]};
}

std::size_t resolve_threads(std::optional<std::size_t> flag, std::size_t fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv("STEREODEPTH_THREADS"); env && *env) {
    return parse_count(env, "STEREODEPTH_THREADS");
  }
  return fallback;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised single-image disparity from stereo pairs"};
  app.require_subcommand(1);
  std::optional<std::size_t> threads_flag;
  app.add_option("--threads", threads_flag, "Worker cap (fallback: STEREODEPTH_THREADS)")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("generate", "Write a synthetic stereo dataset with exact ground truth");
  GenerateOptions gen_opts;
  std::string gen_size = "64x32";
  std::string gen_out;
  gen->add_option("--seed", gen_opts.seed, "Dataset seed");
  gen->add_option("--count", gen_opts.count, "Number of pairs")->check(CLI::PositiveNumber);
  gen->add_option("--size", gen_size, "Image size WxH")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a network from a manifest");
  std::string tr_config, tr_data, tr_out;
  std::optional<std::uint64_t> tr_seed;
  std::optional<std::size_t> tr_steps, tr_batch;
  std::optional<double> tr_lr;
  bool tr_quiet = false;
  tr->add_option("--config", tr_config, "JSON run config");
  tr->add_option("--data", tr_data, "Training manifest (manifest.jsonl or its directory)")->required();
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--seed", tr_seed, "Override trainer.seed");
  tr->add_option("--steps", tr_steps, "Override trainer.steps")->check(CLI::PositiveNumber);
  tr->add_option("--batch-size", tr_batch, "Override trainer.batch_size")->check(CLI::PositiveNumber);
  tr->add_option("--lr", tr_lr, "Override trainer.learning_rate")->check(CLI::PositiveNumber);
  tr->add_flag("--quiet", tr_quiet, "No per-step progress");

  auto* inf = app.add_subcommand("infer", "Predict the left disparity of one image");
  InferOptions inf_opts;
  std::string inf_right, inf_vis;
  inf->add_option("--checkpoint", inf_opts.checkpoint, "Model checkpoint")->required();
  inf->add_option("--image", inf_opts.image, "Left image (PPM)")->required();
  inf->add_option("--stereo", inf_right, "Right image for stereo-input checkpoints");
  inf->add_flag("--pp", inf_opts.postprocess, "Flip post-processing");
  inf->add_option("--out", inf_opts.out, "Output disparity (PFM)")->required();
  inf->add_option("--vis", inf_vis, "Also write a min-max normalized grayscale PPM");

  auto* ev = app.add_subcommand("eval", "Evaluate against ground truth");
  std::string ev_checkpoint, ev_data, ev_out, ev_crop;
  bool ev_oracle = false;
  EvalOptions ev_opts;
  auto* ev_ck = ev->add_option("--checkpoint", ev_checkpoint, "Model checkpoint");
  auto* ev_or = ev->add_flag("--oracle", ev_oracle, "Score the ground truth itself instead of a model");
  ev_ck->excludes(ev_or);
  ev->add_option("--data", ev_data, "Evaluation manifest (manifest.jsonl or its directory)")->required();
  ev->add_flag("--pp", ev_opts.postprocess, "Flip post-processing");
  ev->add_option("--cap", ev_opts.cap, "Depth cap in meters")->check(CLI::PositiveNumber)->capture_default_str();
  ev->add_option("--crop", ev_crop, "Evaluation crop x,y,w,h");
  ev->add_option("--out", ev_out, "Output directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  std::string gc_module = "all";
  std::size_t gc_instances = 20;
  std::uint64_t gc_seed = 7;
  gc->add_option("--module", gc_module, "Module to check")
      ->check(CLI::IsMember({"all", "diffcore", "warp", "loss", "model"}))
      ->capture_default_str();
  gc->add_option("--instances", gc_instances, "Random instances per op")->check(CLI::PositiveNumber);
  gc->add_option("--seed", gc_seed, "Instance seed");
  std::optional<double> gc_tolerance;
  gc->add_option("--tolerance", gc_tolerance, "Replace every per-op tolerance")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  auto manifest_path = [](const std::string& data) {
    fs::path p(data);
    return fs::is_directory(p) ? p / "manifest.jsonl" : p;
  };

  try {
    const std::size_t threads = resolve_threads(threads_flag, 1);

    if (*gen) {
      const auto [w, h] = parse_size(gen_size);
      gen_opts.width = w;
      gen_opts.height = h;
      try {
        SceneSpec probe = dataset_scene_spec(gen_opts, 0);
        probe.validate();
      } catch (const Error& e) {
        throw UsageError(std::string("--size: ") + e.what());
      }
      const fs::path manifest = generate_dataset(gen_out, gen_opts);
      std::printf("wrote %zu pairs, manifest %s\n", gen_opts.count, manifest.string().c_str());
      return 0;
    }

    if (*tr) {
      RunConfig config;
      if (!tr_config.empty()) {
        try {
          config = load_run_config(tr_config);
        } catch (const std::exception& e) {
          throw UsageError(std::string("config: ") + e.what());
        }
      }
      if (tr_seed) config.trainer.seed = *tr_seed;
      if (tr_steps) config.trainer.steps = *tr_steps;
      if (tr_batch) config.trainer.batch_size = *tr_batch;
      if (tr_lr) config.trainer.learning_rate = *tr_lr;
      config.threads = resolve_threads(threads_flag, config.threads);
      try {
        config.net.validate();
        config.loss.validate();
        config.augment.validate();
      } catch (const Error& e) {
        throw UsageError(std::string("config: ") + e.what());
      }
      const std::size_t total = config.trainer.steps;
      auto progress = [&](const StepLog& s) {
        if (tr_quiet) return;
        if (s.step == 0 || (s.step + 1) % 50 == 0 || s.step + 1 == total) {
          std::printf("step %5zu  epoch %3zu  lr %.3g  loss %.6f\n", s.step + 1, s.epoch, s.learning_rate,
                      s.c_total);
          std::fflush(stdout);
        }
      };
      run_training(config, manifest_path(tr_data), tr_out, progress);
      std::printf("wrote %s\n", (fs::path(tr_out) / "model.ckpt").string().c_str());
      return 0;
    }

    if (*inf) {
      if (!inf_right.empty()) inf_opts.right_image = inf_right;
      if (!inf_vis.empty()) inf_opts.visualization = inf_vis;
      run_inference(inf_opts);
      return 0;
    }

    if (*ev) {
      if (!ev_crop.empty()) ev_opts.crop = parse_crop(ev_crop);
      ev_opts.threads = threads;
      EvaluationResult result;
      if (ev_oracle) {
        if (ev_opts.postprocess) throw UsageError("--pp needs a model, not --oracle");
        const auto samples = load_dataset(manifest_path(ev_data));
        auto gt = [](const StereoSample& s) {
          if (!s.gt_disparity_left) throw Error("sample " + s.id + " has no ground truth");
          return *s.gt_disparity_left;
        };
        result = evaluate(samples, gt, ev_opts);
        write_evaluation(result, ev_out);
      } else {
        if (ev_checkpoint.empty()) throw UsageError("eval needs --checkpoint or --oracle");
        result = run_evaluation(ev_checkpoint, manifest_path(ev_data), ev_opts, ev_out);
      }
      std::printf("%s", format_metrics_table(result.summary).c_str());
      return 0;
    }

    if (*gc) {
      auto cases = run_gradcheck_suite(gc_module, gc_instances, gc_seed);
      if (gc_tolerance) {
        for (auto& c : cases) {
          c.tolerance = *gc_tolerance;
          c.passed = c.max_relative_error <= c.tolerance;
        }
      }
      std::printf("%s", format_gradcheck_table(cases).c_str());
      int status = 0;
      for (const auto& c : cases) {
        if (!c.passed) {
          std::fprintf(stderr, "gradcheck failed: %s/%s (max relative error %.3e > %.1e)\n", c.module.c_str(),
                       c.op.c_str(), c.max_relative_error, c.tolerance);
          status = 1;
        }
      }
      return status;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
