#include "ctrlo/train.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <thread>

#include "ctrlo/batched.hpp"
#include "ctrlo/checkpoint.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ctrlo {

void set_compute_threads(int n) {
  Eigen::setNbThreads(n);
#ifdef _OPENMP
  omp_set_num_threads(n);
#endif
}

namespace fs = std::filesystem;
using ad::Mat;
using ad::Var;

namespace detail {

BatchContext build_batch_targets(const std::vector<const Sample*>& batch, const RunConfig& cfg,
                                 const SceneCodebooks& books) {
  BatchContext bt;
  int total = 0;
  bt.first_index.reserve(batch.size());
  bool all_points = true;
  for (const Sample* s : batch) {
    bt.first_index.push_back(total);
    total += s->queries.count();
    for (std::uint8_t hp : s->queries.has_point) all_points = all_points && hp != 0;
  }
  bt.lang_targets.resize(total, cfg.d_emb);
  const bool use_points = cfg.point_queries && all_points && total > 0;
  if (use_points) bt.point_targets.resize(total, 2);
  int at = 0;
  const bool distinct = cfg.target_codebook == "distinct";
  for (const Sample* s : batch) {
    for (int i = 0; i < s->queries.count(); ++i, ++at) {
      if (distinct) {
        const int obj = s->queries.object_ids[static_cast<std::size_t>(i)];
        const int cat = s->scene.objects[static_cast<std::size_t>(obj)].category;
        bt.lang_targets.row(at) = books.target.codes.row(cat);
      } else {
        bt.lang_targets.row(at) = s->queries.lang_codes.row(i);
      }
      const double n = bt.lang_targets.row(at).norm();
      if (n > 0.0) bt.lang_targets.row(at) /= n;
      if (use_points) bt.point_targets.row(at) = s->queries.points.row(i);
    }
  }
  return bt;
}

SampleLoss sample_loss(ParamContext& ctx, const ModelParams& params, const Sample& s,
                       const RunConfig& cfg, const BatchContext& bt, int sample_index,
                       const Mat& slot_noise, bool contrastive_from_slots,
                       const GroundingParams* slot_head) {
  ForwardOptions fopt;
  fopt.init_mode = cfg.slot_init_mode();
  fopt.decoder_conditioning = cfg.decoder_conditioning;

  SampleLoss sl;
  sl.output = forward_pass(ctx, params, s.grid, s.queries, fopt, slot_noise);
  Var target = ctx.tape().constant_view(&s.grid.features);
  sl.recon = recon_loss(sl.output.recon, target);
  sl.conditioned = s.queries.count();

  if (cfg.contrastive_loss && sl.conditioned > 0) {
    std::vector<Eigen::Index> positives(static_cast<std::size_t>(sl.conditioned));
    for (int i = 0; i < sl.conditioned; ++i)
      positives[static_cast<std::size_t>(i)] =
          bt.first_index[static_cast<std::size_t>(sample_index)] + i;
    Var lang_targets = ctx.tape().constant_view(&bt.lang_targets);

    if (contrastive_from_slots) {
      // Deliberately wrong wiring (kept for the leakage regression): the
      // loss sees the conditioned slots themselves.
      const GroundingParams& head = slot_head ? *slot_head : params.grounding;
      Var z = ad::row_slice(sl.output.slots.slots, 0, sl.conditioned);
      sl.contrastive = contrastive_loss(project_embedding(ctx, head, z, ProjectionHead::lang),
                                        positives, lang_targets, cfg.tau);
    } else {
      Var point_targets;
      if (cfg.point_queries && bt.point_targets.rows() > 0) {
        Var raw = ctx.tape().constant_view(&bt.point_targets);
        point_targets = ad::l2_normalize_rows(embed_point(ctx, params.grounding, raw));
      }
      sl.contrastive = dual_contrastive(ctx, params.grounding, sl.output.slots.weights,
                                        sl.output.mapped, sl.conditioned, lang_targets, positives,
                                        point_targets, positives);
    }
  }
  return sl;
}

}  // namespace detail

namespace {

int resolve_workers(int cfg_workers) {
  if (cfg_workers > 0) return cfg_workers;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

struct CheckpointRotation {
  struct Entry {
    std::string path;
    int step;
    double binding_hits;
  };
  std::vector<Entry> saved;

  void add_and_prune(const std::string& path, int step, double bh, int keep) {
    saved.push_back({path, step, bh});
    // keep the `keep` most recent plus the best-binding one
    if (static_cast<int>(saved.size()) <= keep) return;
    std::size_t best = 0;
    for (std::size_t i = 1; i < saved.size(); ++i)
      if (saved[i].binding_hits > saved[best].binding_hits) best = i;
    const std::size_t first_recent = saved.size() - static_cast<std::size_t>(keep);
    std::vector<Entry> next;
    for (std::size_t i = 0; i < saved.size(); ++i) {
      if (i >= first_recent || i == best) {
        next.push_back(saved[i]);
      } else {
        std::error_code ec;
        fs::remove(saved[i].path, ec);
      }
    }
    saved = std::move(next);
  }
};

}  // namespace

Dataset make_eval_set(const RunConfig& cfg, int count) {
  const SceneConfig sc = cfg.scene();
  const SceneCodebooks books = make_scene_codebooks(sc, cfg.data_seed);
  Dataset ds;
  ds.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng(mix_seed(cfg.data_seed, seed_tag::eval_scene, static_cast<std::uint64_t>(i)));
    ds.push_back(generate_scene(sc, books, rng));
  }
  return ds;
}

TrainResult train(const RunConfig& cfg, const std::string& out_dir, const TrainOptions& opt) {
  cfg.validate();
  fs::create_directories(out_dir);
  std::ofstream log(fs::path(out_dir) / "train_log.txt");
  if (!log) throw format_error("cannot open train log in " + out_dir);

  const SceneConfig sc = cfg.scene();
  const SceneCodebooks books = make_scene_codebooks(sc, cfg.data_seed);
  Rng init_rng(mix_seed(cfg.seed, seed_tag::params));
  ModelParams params = ModelParams::init(cfg.dims(), init_rng);

  // The slot-projection head exists only for the leakage regression wiring.
  std::unique_ptr<GroundingParams> slot_head;
  if (opt.contrastive_from_slots) {
    Rng head_rng(mix_seed(cfg.seed, seed_tag::params, 1));
    slot_head = std::make_unique<GroundingParams>(GroundingParams::init(
        cfg.d_slot, cfg.d_emb, cfg.point_hidden, cfg.proj_hidden, cfg.tau, head_rng));
  }

  ParamRegistry reg = params.registry();
  if (slot_head) slot_head->register_into(reg, "gr_slots");

  Adam adam(reg, {cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
  const std::string config_echo = serialize_config(cfg);
  {
    std::ofstream echo(fs::path(out_dir) / "config.txt");
    echo << config_echo;
  }

  const Dataset eval_set = make_eval_set(cfg, cfg.eval_samples);
  const int batch = cfg.batch_size;
  set_compute_threads(resolve_workers(cfg.workers));

  std::vector<Mat> total_grads = reg.zeros_like();

  TrainResult result;
  CheckpointRotation rotation;
  MetricsReport last_eval;
  bool have_eval = false;
  const auto t_start = std::chrono::steady_clock::now();

  auto save_final = [&] {
    const std::string path = (fs::path(out_dir) / "checkpoint_final.ckpt").string();
    save_checkpoint(path, reg, config_echo);
    result.final_checkpoint = path;
  };

  for (int step = 0; step < cfg.steps; ++step) {
    // Assemble the batch on the main thread so the stream is worker-count
    // independent.
    std::vector<Sample> generated;
    std::vector<const Sample*> batch_ptrs(static_cast<std::size_t>(batch));
    if (opt.dataset) {
      if (opt.dataset->empty()) throw contract_error("train: empty dataset");
      for (int b = 0; b < batch; ++b)
        batch_ptrs[static_cast<std::size_t>(b)] =
            &(*opt.dataset)[(static_cast<std::size_t>(step) * batch + b) % opt.dataset->size()];
    } else {
      generated.reserve(static_cast<std::size_t>(batch));
      for (int b = 0; b < batch; ++b) {
        Rng rng(mix_seed(cfg.seed, seed_tag::train_scene, static_cast<std::uint64_t>(step),
                         static_cast<std::uint64_t>(b)));
        generated.push_back(generate_scene(sc, books, rng));
      }
      for (int b = 0; b < batch; ++b) batch_ptrs[static_cast<std::size_t>(b)] = &generated[static_cast<std::size_t>(b)];
    }

    std::vector<Mat> noises(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      Rng nrng(mix_seed(cfg.seed, seed_tag::slot_noise, static_cast<std::uint64_t>(step),
                        static_cast<std::uint64_t>(b)));
      noises[static_cast<std::size_t>(b)] = draw_slot_noise(cfg.n_slots, cfg.d_slot, nrng);
    }

    const detail::BatchContext bt = detail::build_batch_targets(batch_ptrs, cfg, books);
    const BatchedInputs bin = pack_batch(batch_ptrs, noises);

    ad::Tape tape;
    ParamContext ctx(tape);
    const BatchedStep bs =
        batched_step(ctx, params, cfg, bin, bt, opt.contrastive_from_slots, slot_head.get());
    const double recon_mean = bs.recon_mean;
    const double cc_mean = bs.cc_mean;
    const double total =
        recon_mean + (cfg.contrastive_loss ? cfg.lambda_cc * cc_mean : 0.0);

    if (std::isnan(total) || std::isinf(total)) {
      log << "# numeric abort at step " << step << "\n";
      result.aborted_nan = true;
      result.steps_run = step;
      if (!rotation.saved.empty()) {
        result.final_checkpoint = rotation.saved.back().path;
      } else {
        save_final();
      }
      return result;
    }

    if (step == 0) result.first_contrastive = cc_mean;
    result.final_recon = recon_mean;
    result.final_contrastive = cc_mean;

    tape.backward(bs.loss);
    for (Mat& g : total_grads) g.setZero();
    ctx.harvest(reg, total_grads);
    adam.step(reg, total_grads);

    char line[160];
    std::snprintf(line, sizeof line, "step %d recon %.12g cc %.12g total %.12g", step,
                  recon_mean, cc_mean, total);
    log << line << "\n";
    if (opt.on_step) opt.on_step(step, recon_mean, cc_mean);

    const bool at_eval = (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps;
    if (at_eval) {
      last_eval = evaluate_params(params, cfg, eval_set);
      have_eval = true;
      std::snprintf(line, sizeof line,
                    "eval step %d fg_ari %.6f mbo %.6f binding_hits %.6f miou %.6f baseline %.6f",
                    step + 1, last_eval.fg_ari, last_eval.mbo, last_eval.binding_hits,
                    last_eval.miou, last_eval.binding_baseline);
      log << line << "\n";
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
      log << "# wall_s " << wall << "\n";
      log.flush();
    }
    if ((step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_%07d.ckpt", step + 1);
      const std::string path = (fs::path(out_dir) / name).string();
      save_checkpoint(path, reg, config_echo);
      rotation.add_and_prune(path, step + 1, have_eval ? last_eval.binding_hits : 0.0,
                             cfg.keep_checkpoints);
    }
    if (at_eval && opt.stop_at_fg_ari && last_eval.fg_ari >= *opt.stop_at_fg_ari) {
      result.steps_run = step + 1;
      result.last_eval = last_eval;
      save_final();
      log << "# early stop: fg_ari target reached\n";
      return result;
    }
  }

  result.steps_run = cfg.steps;
  if (cfg.steps == 0) {
    // contract: the checkpoint equals the initialization
  } else if (!have_eval) {
    last_eval = evaluate_params(params, cfg, eval_set);
  }
  result.last_eval = last_eval;
  save_final();
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  log << "# done wall_s " << wall << "\n";
  return result;
}

}  // namespace ctrlo
