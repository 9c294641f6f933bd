#pragma once

#include <string>

#include "ctrlo/model.hpp"
#include "ctrlo/scene.hpp"

namespace ctrlo {

/// Renders one scene under a model: `<stem>_pred.ppm` (per-patch argmax slot
/// id as an indexed color grid), `<stem>_gt.ppm` (ground-truth objects plus
/// background) and `<stem>_annot.txt` (palette and the conditioned slots'
/// query categories). Raster bytes are a pure function of (params, scene).
void render_masks(const ModelParams& params, const Sample& sample, const struct RunConfig& cfg,
                  const std::string& out_dir, const std::string& stem);

}  // namespace ctrlo
