#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace ctrlo {

/// Patch-feature grid: K = G*G rows of D_feat features. The stand-in for a
/// frozen encoder's output and the reconstruction target.
struct FeatureGrid {
  int grid_side = 0;                  // G
  Eigen::MatrixXd features;           // K x D_feat, row-major patch order

  int patch_count() const { return grid_side * grid_side; }
};

/// Ground truth for one object: category, patch mask, mask centroid in the
/// unit square (x = column axis, y = row axis).
struct ObjectSpec {
  int category = 0;
  std::vector<std::uint8_t> mask;     // K entries, 0/1
  double cx = 0.0, cy = 0.0;
};

/// Ground-truth scene annotation; object masks are disjoint, everything not
/// covered is background.
struct SceneSpec {
  int grid_side = 0;
  std::vector<ObjectSpec> objects;

  std::vector<std::uint8_t> background_mask() const {
    const std::size_t k = static_cast<std::size_t>(grid_side) * static_cast<std::size_t>(grid_side);
    std::vector<std::uint8_t> bg(k, 1);
    for (const ObjectSpec& o : objects)
      for (std::size_t i = 0; i < k; ++i)
        if (o.mask[i]) bg[i] = 0;
    return bg;
  }
};

/// Control queries for one scene: language-proxy codes, optional
/// center-of-mass points, and the queried object's index (evaluation only).
struct QuerySet {
  Eigen::MatrixXd lang_codes;             // M x D_emb
  Eigen::MatrixXd points;                 // M x 2 (rows meaningful where has_point)
  std::vector<std::uint8_t> has_point;    // M entries
  std::vector<int> object_ids;            // M entries, into SceneSpec.objects

  int count() const { return static_cast<int>(lang_codes.rows()); }
};

/// One dataset sample.
struct Sample {
  FeatureGrid grid;
  SceneSpec scene;
  QuerySet queries;
};

using Dataset = std::vector<Sample>;

/// Unit-norm category codes with a minimum pairwise separation.
struct Codebook {
  enum class Role { conditioning, target, feature };
  Role role = Role::conditioning;
  Eigen::MatrixXd codes;  // C x dim, unit rows
};

/// Knobs of the procedural scene generator.
struct SceneConfig {
  int grid_side = 16;
  int categories = 12;
  int min_objects = 2;
  int max_objects = 5;
  double feature_noise = 0.05;   // sigma_n on the appearance block
  int d_app = 32;                // appearance feature width (features add 2 position dims)
  int d_emb = 16;                // query code width
  double min_separation = 0.5;   // codebook pairwise-cosine margin
  enum class ShapeFamily { rect, blob } shape_family = ShapeFamily::rect;
  bool point_queries = true;

  int d_feat() const { return d_app + 2; }
};

}  // namespace ctrlo
