// Command-line surface: train / eval / ablate / render / gen-data /
// inspect-data over the synthetic benchmark and the CTLO dataset format.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctrlo/ablate.hpp"
#include "ctrlo/checkpoint.hpp"
#include "ctrlo/dataset_io.hpp"
#include "ctrlo/errors.hpp"
#include "ctrlo/render.hpp"
#include "ctrlo/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string data;
  int device_workers = 0;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config_path, "plain-text key=value config file");
  cmd->add_option("--set", a.overrides, "override one key=value (repeatable)");
  cmd->add_option("--seed", a.seed, "training seed (overrides config)");
  cmd->add_option("--out", a.out, "output directory");
  cmd->add_option("--data", a.data, "dataset file in the CTLO format");
  cmd->add_option("--device-workers", a.device_workers, "worker threads (0 = hardware)");
}

ctrlo::RunConfig resolve_config(const CommonArgs& a) {
  ctrlo::RunConfig cfg;
  if (!a.config_path.empty()) cfg = ctrlo::parse_config_file(a.config_path);
  for (const std::string& kv : a.overrides) ctrlo::apply_override(cfg, kv);
  if (a.seed) cfg.seed = *a.seed;
  if (a.device_workers > 0) cfg.workers = a.device_workers;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"controllable object-centric representation learning on synthetic scenes"};
  app.require_subcommand(1);

  CommonArgs targs, eargs, aargs, rargs, gargs, iargs;
  std::string ckpt_path;
  std::string abl_seeds = "1,2,3";
  int gen_count = 1000;
  int render_count = 4;

  CLI::App* cmd_train = app.add_subcommand("train", "train a model per config");
  add_common(cmd_train, targs);

  CLI::App* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(cmd_eval, eargs);
  cmd_eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();

  CLI::App* cmd_abl = app.add_subcommand("ablate", "train/evaluate the component grid");
  add_common(cmd_abl, aargs);
  cmd_abl->add_option("--seeds", abl_seeds, "comma-separated training seeds");

  CLI::App* cmd_render = app.add_subcommand("render", "render predicted/gt mask rasters");
  add_common(cmd_render, rargs);
  cmd_render->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  cmd_render->add_option("--count", render_count, "number of scenes");

  CLI::App* cmd_gen = app.add_subcommand("gen-data", "write a synthetic dataset file");
  add_common(cmd_gen, gargs);
  cmd_gen->add_option("--count", gen_count, "number of samples");

  CLI::App* cmd_inspect = app.add_subcommand("inspect-data", "validate and summarize a dataset");
  add_common(cmd_inspect, iargs);

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_train->parsed()) {
      ctrlo::RunConfig cfg = resolve_config(targs);
      ctrlo::TrainOptions opt;
      ctrlo::Dataset ds;
      if (!targs.data.empty()) {
        ds = ctrlo::ingest_features(targs.data);
        opt.dataset = &ds;
      }
      ctrlo::TrainResult res = ctrlo::train(cfg, targs.out, opt);
      if (res.aborted_nan) {
        std::cerr << "numeric abort: NaN loss at step " << res.steps_run
                  << "; last good checkpoint: " << res.final_checkpoint << "\n";
        return kExitNumeric;
      }
      std::cout << "trained " << res.steps_run << " steps; final checkpoint "
                << res.final_checkpoint << "\n";
      std::cout << "final recon " << res.final_recon << " cc " << res.final_contrastive << "\n";
    } else if (cmd_eval->parsed()) {
      ctrlo::RunConfig cfg;
      if (!eargs.config_path.empty()) {
        cfg = ctrlo::parse_config_file(eargs.config_path);
      } else {
        cfg = ctrlo::parse_config_text(ctrlo::read_checkpoint_config(ckpt_path));
      }
      for (const std::string& kv : eargs.overrides) ctrlo::apply_override(cfg, kv);
      if (eargs.device_workers > 0) cfg.workers = eargs.device_workers;
      cfg.validate();
      ctrlo::Dataset ds = eargs.data.empty() ? ctrlo::make_eval_set(cfg, cfg.eval_samples)
                                             : ctrlo::ingest_features(eargs.data);
      ctrlo::MetricsReport rep = ctrlo::evaluate(ckpt_path, cfg, ds, eargs.out);
      std::cout << "samples " << rep.samples << " fg_ari " << rep.fg_ari << " mbo " << rep.mbo
                << " binding_hits " << rep.binding_hits << " miou " << rep.miou << " baseline "
                << rep.binding_baseline << "\n";
    } else if (cmd_abl->parsed()) {
      ctrlo::RunConfig cfg = resolve_config(aargs);
      std::vector<std::uint64_t> seeds;
      std::size_t pos = 0;
      while (pos < abl_seeds.size()) {
        const std::size_t comma = abl_seeds.find(',', pos);
        const std::string tok = abl_seeds.substr(pos, comma - pos);
        seeds.push_back(std::stoull(tok));
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
      ctrlo::AblationTable table = ctrlo::ablate(cfg, seeds, aargs.out);
      std::cout << table.to_text();
      if (!table.complete) return kExitNumeric;
    } else if (cmd_render->parsed()) {
      ctrlo::RunConfig cfg;
      if (!rargs.config_path.empty()) {
        cfg = ctrlo::parse_config_file(rargs.config_path);
      } else {
        cfg = ctrlo::parse_config_text(ctrlo::read_checkpoint_config(ckpt_path));
      }
      for (const std::string& kv : rargs.overrides) ctrlo::apply_override(cfg, kv);
      cfg.validate();
      ctrlo::ModelParams params = ctrlo::load_model(ckpt_path, cfg);
      ctrlo::Dataset ds = rargs.data.empty() ? ctrlo::make_eval_set(cfg, render_count)
                                             : ctrlo::ingest_features(rargs.data);
      const int n = std::min<int>(render_count, static_cast<int>(ds.size()));
      for (int i = 0; i < n; ++i)
        ctrlo::render_masks(params, ds[static_cast<std::size_t>(i)], cfg, rargs.out,
                            "scene" + std::to_string(i));
      std::cout << "rendered " << n << " scenes into " << rargs.out << "\n";
    } else if (cmd_gen->parsed()) {
      ctrlo::RunConfig cfg = resolve_config(gargs);
      const ctrlo::SceneConfig sc = cfg.scene();
      const ctrlo::SceneCodebooks books = ctrlo::make_scene_codebooks(sc, cfg.data_seed);
      ctrlo::Dataset ds;
      ds.reserve(static_cast<std::size_t>(gen_count));
      for (int i = 0; i < gen_count; ++i) {
        ctrlo::Rng rng(ctrlo::mix_seed(cfg.seed, ctrlo::seed_tag::train_scene,
                                       static_cast<std::uint64_t>(i)));
        ds.push_back(ctrlo::generate_scene(sc, books, rng));
      }
      const std::string path = gargs.data.empty() ? gargs.out + "/dataset.ctlo" : gargs.data;
      if (gargs.data.empty()) std::filesystem::create_directories(gargs.out);
      ctrlo::write_features(ds, path);
      std::cout << "wrote " << ds.size() << " samples to " << path << "\n";
    } else if (cmd_inspect->parsed()) {
      if (iargs.data.empty()) throw ctrlo::config_error("inspect-data: --data is required");
      ctrlo::Dataset ds = ctrlo::ingest_features(iargs.data);
      std::size_t objects = 0, queries = 0, points = 0;
      for (const ctrlo::Sample& s : ds) {
        objects += s.scene.objects.size();
        queries += static_cast<std::size_t>(s.queries.count());
        for (auto hp : s.queries.has_point) points += hp ? 1 : 0;
      }
      std::cout << "samples " << ds.size() << "\n";
      if (!ds.empty()) {
        std::cout << "grid_side " << ds.front().scene.grid_side << " d_feat "
                  << ds.front().grid.features.cols() << "\n";
      }
      std::cout << "objects " << objects << " queries " << queries << " with_points " << points
                << "\n";
      std::cout << "all samples valid\n";
    }
  } catch (const ctrlo::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ctrlo::format_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ctrlo::generation_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ctrlo::numeric_error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
