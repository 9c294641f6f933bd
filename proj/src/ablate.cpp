#include "ctrlo/ablate.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

namespace ctrlo {

namespace fs = std::filesystem;

std::vector<AblationRow> ablation_grid() {
  std::vector<AblationRow> rows(4);
  rows[0] = {"slot_init_only", false, false, {}, {}};
  rows[1] = {"dc", false, true, {}, {}};
  rows[2] = {"cl", true, false, {}, {}};
  rows[3] = {"cl_dc", true, true, {}, {}};
  return rows;
}

RunConfig cell_config(const RunConfig& base, const AblationRow& row, std::uint64_t seed) {
  RunConfig cfg = base;
  cfg.contrastive_loss = row.contrastive;
  cfg.decoder_conditioning = row.decoder_conditioning;
  cfg.seed = seed;
  return cfg;
}

namespace {

MetricsReport mean_of(const std::vector<MetricsReport>& reps) {
  MetricsReport m;
  if (reps.empty()) return m;
  for (const MetricsReport& r : reps) {
    m.fg_ari += r.fg_ari;
    m.mbo += r.mbo;
    m.binding_hits += r.binding_hits;
    m.miou += r.miou;
    m.binding_baseline += r.binding_baseline;
    m.samples += r.samples;
    m.total_bindings += r.total_bindings;
    m.degenerate_fg_ari += r.degenerate_fg_ari;
  }
  const double n = static_cast<double>(reps.size());
  m.fg_ari /= n;
  m.mbo /= n;
  m.binding_hits /= n;
  m.miou /= n;
  m.binding_baseline /= n;
  return m;
}

}  // namespace

std::string AblationTable::to_text() const {
  std::string out =
      "row              binding_hits  fg_ari   mbo      miou     baseline\n";
  char line[160];
  for (const AblationRow& r : rows) {
    std::snprintf(line, sizeof line, "%-16s %-13.4f %-8.4f %-8.4f %-8.4f %-8.4f\n",
                  r.name.c_str(), r.mean.binding_hits, r.mean.fg_ari, r.mean.mbo, r.mean.miou,
                  r.mean.binding_baseline);
    out += line;
  }
  if (!complete) out += "(incomplete: one or more cells failed)\n";
  return out;
}

AblationTable ablate(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                     const std::string& out_dir, const TrainOptions& opt) {
  if (seeds.empty()) throw argument_error("ablate: need at least one seed");
  fs::create_directories(out_dir);
  AblationTable table;
  table.seeds = seeds;
  table.rows = ablation_grid();

  // rows must differ only in the two declared switches
  for (const AblationRow& row : table.rows) {
    RunConfig probe = cell_config(base, row, base.seed);
    RunConfig ref = cell_config(base, table.rows[0], base.seed);
    probe.contrastive_loss = ref.contrastive_loss;
    probe.decoder_conditioning = ref.decoder_conditioning;
    if (serialize_config(probe) != serialize_config(ref))
      throw contract_error("ablate: cell configs diverge beyond the declared switches");
  }

  for (AblationRow& row : table.rows) {
    for (std::uint64_t seed : seeds) {
      const RunConfig cfg = cell_config(base, row, seed);
      const std::string cell_dir =
          (fs::path(out_dir) / (row.name + "_seed" + std::to_string(seed))).string();
      try {
        TrainResult tr = train(cfg, cell_dir, opt);
        if (tr.aborted_nan) throw numeric_error("cell aborted on NaN");
        row.per_seed.push_back(tr.last_eval);
      } catch (const std::exception& e) {
        std::cerr << "ablate: cell " << row.name << " seed " << seed << " failed: " << e.what()
                  << "\n";
        table.complete = false;
      }
    }
    row.mean = mean_of(row.per_seed);
  }

  std::ofstream txt(fs::path(out_dir) / "ablation.txt");
  txt << table.to_text();
  nlohmann::json j;
  j["seeds"] = seeds;
  j["complete"] = table.complete;
  j["config"] = serialize_config(base);
  for (const AblationRow& r : table.rows) {
    nlohmann::json row;
    row["name"] = r.name;
    row["contrastive_loss"] = r.contrastive;
    row["decoder_conditioning"] = r.decoder_conditioning;
    row["binding_hits"] = r.mean.binding_hits;
    row["fg_ari"] = r.mean.fg_ari;
    row["mbo"] = r.mean.mbo;
    row["miou"] = r.mean.miou;
    row["binding_baseline"] = r.mean.binding_baseline;
    j["rows"].push_back(row);
  }
  std::ofstream js(fs::path(out_dir) / "ablation.json");
  js << j.dump(2) << "\n";
  return table;
}

}  // namespace ctrlo
