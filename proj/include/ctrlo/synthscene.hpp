#pragma once

#include <string>

#include "ctrlo/rng.hpp"
#include "ctrlo/scene.hpp"

namespace ctrlo {

/// The three independent code sources of the benchmark: what the encoder
/// "sees" (feature), what conditions the model (conditioning), and the
/// optional separate contrastive target space (target). Their independence
/// is what keeps the grounding problem non-trivial.
struct SceneCodebooks {
  Codebook conditioning;  // C x d_emb
  Codebook target;        // C x d_emb
  Codebook feature;       // (C+1) x d_app, last row = background
};

/// Rejection-samples C unit vectors with pairwise cosine <= 1 - min_sep.
Codebook make_codebook(int count, int dim, double min_sep, Codebook::Role role, Rng& rng);

/// All three codebooks from one seed.
SceneCodebooks make_scene_codebooks(const SceneConfig& cfg, std::uint64_t data_seed);

/// Places non-overlapping objects, writes noisy codebook features plus the
/// position channel, and queries a random subset of the objects. Pure
/// function of (config, codebooks, rng state); every float is quantized to
/// f32 so the binary dataset format roundtrips losslessly.
Sample generate_scene(const SceneConfig& cfg, const SceneCodebooks& books, Rng& rng);

/// Validates SceneSpec/QuerySet invariants (disjoint masks, centroid ranges,
/// aligned query fields); throws format_error with the failing detail.
void validate_sample(const Sample& s, const std::string& where);

}  // namespace ctrlo
