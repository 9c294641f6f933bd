#include "ctrlo/render.hpp"

#include <array>
#include <filesystem>
#include <fstream>

#include "ctrlo/config.hpp"
#include "ctrlo/train.hpp"

namespace ctrlo {

namespace fs = std::filesystem;

namespace {

constexpr int kScale = 16;  // pixels per patch

struct Rgb {
  std::uint8_t r, g, b;
};

// distinct hues for slots/objects; index 255 = background gray
Rgb palette(int i) {
  static const std::array<Rgb, 16> table{{{230, 25, 75},
                                          {60, 180, 75},
                                          {255, 225, 25},
                                          {0, 130, 200},
                                          {245, 130, 48},
                                          {145, 30, 180},
                                          {70, 240, 240},
                                          {240, 50, 230},
                                          {210, 245, 60},
                                          {250, 190, 212},
                                          {0, 128, 128},
                                          {220, 190, 255},
                                          {170, 110, 40},
                                          {255, 250, 200},
                                          {128, 0, 0},
                                          {170, 255, 195}}};
  if (i < 0) return {96, 96, 96};
  return table[static_cast<std::size_t>(i) % table.size()];
}

void write_ppm(const std::string& path, int grid_side, const std::vector<int>& label) {
  const int px = grid_side * kScale;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw format_error("render: cannot open " + path);
  out << "P6\n" << px << " " << px << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(px) * 3);
  for (int y = 0; y < px; ++y) {
    const int pr = y / kScale;
    for (int x = 0; x < px; ++x) {
      const int pc = x / kScale;
      const Rgb c = palette(label[static_cast<std::size_t>(pr * grid_side + pc)]);
      row[static_cast<std::size_t>(x) * 3 + 0] = c.r;
      row[static_cast<std::size_t>(x) * 3 + 1] = c.g;
      row[static_cast<std::size_t>(x) * 3 + 2] = c.b;
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw format_error("render: write failed for " + path);
}

}  // namespace

void render_masks(const ModelParams& params, const Sample& sample, const RunConfig& cfg,
                  const std::string& out_dir, const std::string& stem) {
  fs::create_directories(out_dir);
  ad::Tape tape;
  ParamContext ctx(tape);
  ForwardOptions fopt;
  fopt.init_mode = cfg.slot_init_mode();
  fopt.decoder_conditioning = cfg.decoder_conditioning;
  Rng nrng(mix_seed(cfg.data_seed, seed_tag::eval_noise, 0));
  const ad::Mat noise = draw_slot_noise(cfg.n_slots, cfg.d_slot, nrng);
  ModelOutput out = forward_pass(ctx, params, sample.grid, sample.queries, fopt, noise);

  const int g = sample.scene.grid_side;
  const int k = g * g;
  const std::vector<int> pred = hard_masks(out.masks.value());
  write_ppm((fs::path(out_dir) / (stem + "_pred.ppm")).string(), g, pred);

  std::vector<int> gt(static_cast<std::size_t>(k), -1);  // -1 = background
  for (std::size_t o = 0; o < sample.scene.objects.size(); ++o)
    for (int p = 0; p < k; ++p)
      if (sample.scene.objects[o].mask[static_cast<std::size_t>(p)])
        gt[static_cast<std::size_t>(p)] = static_cast<int>(o);
  write_ppm((fs::path(out_dir) / (stem + "_gt.ppm")).string(), g, gt);

  std::ofstream annot(fs::path(out_dir) / (stem + "_annot.txt"));
  annot << "# conditioned slots: slot, object, category, palette rgb\n";
  for (int i = 0; i < sample.queries.count(); ++i) {
    const int obj = sample.queries.object_ids[static_cast<std::size_t>(i)];
    const int cat = sample.scene.objects[static_cast<std::size_t>(obj)].category;
    const Rgb c = palette(i);
    annot << "slot " << i << " object " << obj << " category " << cat << " rgb " << int(c.r)
          << "," << int(c.g) << "," << int(c.b) << "\n";
  }
  annot << "# background rgb 96,96,96\n";
}

}  // namespace ctrlo
