#include "ctrlo/synthscene.hpp"

#include <algorithm>
#include <cmath>

#include "ctrlo/errors.hpp"

namespace ctrlo {

namespace {

double f32(double x) { return static_cast<double>(static_cast<float>(x)); }

constexpr int kCodebookRetries = 20000;
constexpr int kPlacementRetries = 60;
constexpr int kSceneRetries = 60;

struct Placement {
  std::vector<std::uint8_t> mask;
  int size = 0;
};

bool place_rect(int g, const std::vector<std::uint8_t>& occupied, Rng& rng, Placement& out) {
  const int w = rng.uniform_int(2, std::max(2, g / 3));
  const int h = rng.uniform_int(2, std::max(2, g / 3));
  const int r0 = rng.uniform_int(0, g - h);
  const int c0 = rng.uniform_int(0, g - w);
  for (int r = r0; r < r0 + h; ++r)
    for (int c = c0; c < c0 + w; ++c)
      if (occupied[static_cast<std::size_t>(r * g + c)]) return false;
  out.mask.assign(static_cast<std::size_t>(g) * g, 0);
  for (int r = r0; r < r0 + h; ++r)
    for (int c = c0; c < c0 + w; ++c) out.mask[static_cast<std::size_t>(r * g + c)] = 1;
  out.size = w * h;
  return true;
}

bool place_blob(int g, const std::vector<std::uint8_t>& occupied, Rng& rng, Placement& out) {
  const int target = rng.uniform_int(4, std::max(4, g * g / 14));
  const int start = rng.uniform_int(0, g * g - 1);
  if (occupied[static_cast<std::size_t>(start)]) return false;
  out.mask.assign(static_cast<std::size_t>(g) * g, 0);
  out.mask[static_cast<std::size_t>(start)] = 1;
  out.size = 1;
  std::vector<int> frontier{start};
  while (out.size < target && !frontier.empty()) {
    const std::size_t pick = rng.uniform_index(frontier.size());
    const int p = frontier[pick];
    const int r = p / g, c = p % g;
    const int dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
    std::vector<int> free_nb;
    for (int d = 0; d < 4; ++d) {
      const int nr = r + dr[d], nc = c + dc[d];
      if (nr < 0 || nr >= g || nc < 0 || nc >= g) continue;
      const std::size_t q = static_cast<std::size_t>(nr * g + nc);
      if (!occupied[q] && !out.mask[q]) free_nb.push_back(nr * g + nc);
    }
    if (free_nb.empty()) {
      frontier[pick] = frontier.back();
      frontier.pop_back();
      continue;
    }
    const int q = free_nb[rng.uniform_index(free_nb.size())];
    out.mask[static_cast<std::size_t>(q)] = 1;
    frontier.push_back(q);
    ++out.size;
  }
  return out.size >= 3;
}

}  // namespace

Codebook make_codebook(int count, int dim, double min_sep, Codebook::Role role, Rng& rng) {
  if (count < 1) throw argument_error("make_codebook: count must be >= 1");
  if (dim < 1) throw argument_error("make_codebook: dim must be >= 1");
  Codebook cb;
  cb.role = role;
  cb.codes.resize(count, dim);
  const double max_cos = 1.0 - min_sep;
  for (int i = 0; i < count; ++i) {
    bool ok = false;
    for (int attempt = 0; attempt < kCodebookRetries && !ok; ++attempt) {
      Eigen::RowVectorXd v = rng.normal_matrix(1, dim);
      const double n = v.norm();
      if (n < 1e-12) continue;
      v /= n;
      ok = true;
      for (int j = 0; j < i && ok; ++j)
        if (cb.codes.row(j).dot(v) > max_cos) ok = false;
      if (ok) cb.codes.row(i) = v;
    }
    if (!ok)
      throw generation_error("make_codebook: separation " + std::to_string(min_sep) +
                             " infeasible for " + std::to_string(count) + " codes in dim " +
                             std::to_string(dim));
  }
  return cb;
}

SceneCodebooks make_scene_codebooks(const SceneConfig& cfg, std::uint64_t data_seed) {
  SceneCodebooks books;
  Rng r_cond(mix_seed(data_seed, seed_tag::codebook, 0));
  Rng r_tgt(mix_seed(data_seed, seed_tag::codebook, 1));
  Rng r_feat(mix_seed(data_seed, seed_tag::codebook, 2));
  books.conditioning = make_codebook(cfg.categories, cfg.d_emb, cfg.min_separation,
                                     Codebook::Role::conditioning, r_cond);
  books.target =
      make_codebook(cfg.categories, cfg.d_emb, cfg.min_separation, Codebook::Role::target, r_tgt);
  books.feature = make_codebook(cfg.categories + 1, cfg.d_app, cfg.min_separation,
                                Codebook::Role::feature, r_feat);
  return books;
}

Sample generate_scene(const SceneConfig& cfg, const SceneCodebooks& books, Rng& rng) {
  if (cfg.min_objects < 1 || cfg.max_objects < cfg.min_objects)
    throw argument_error("generate_scene: bad object count range");
  if (cfg.feature_noise < 0.0) throw argument_error("generate_scene: negative noise");
  const int g = cfg.grid_side;
  const int k = g * g;

  Sample s;
  s.scene.grid_side = g;
  s.grid.grid_side = g;

  const int want = rng.uniform_int(cfg.min_objects, cfg.max_objects);
  std::vector<std::uint8_t> occupied(static_cast<std::size_t>(k), 0);
  // A placed object can paint the later ones into a corner, so exhausted
  // per-object retries restart the whole layout.
  for (int scene_attempt = 0;; ++scene_attempt) {
    if (scene_attempt >= kSceneRetries)
      throw generation_error("generate_scene: could not place " + std::to_string(want) +
                             " objects without overlap");
    s.scene.objects.clear();
    std::fill(occupied.begin(), occupied.end(), 0);
    bool layout_ok = true;
    while (static_cast<int>(s.scene.objects.size()) < want && layout_ok) {
      bool placed = false;
      for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
        Placement pl;
        const bool ok = cfg.shape_family == SceneConfig::ShapeFamily::rect
                            ? place_rect(g, occupied, rng, pl)
                            : place_blob(g, occupied, rng, pl);
        if (!ok) continue;
        ObjectSpec obj;
        obj.category = rng.uniform_int(0, cfg.categories - 1);
        obj.mask = pl.mask;
        double sx = 0.0, sy = 0.0;
        for (int pidx = 0; pidx < k; ++pidx) {
          if (!pl.mask[static_cast<std::size_t>(pidx)]) continue;
          occupied[static_cast<std::size_t>(pidx)] = 1;
          sx += (pidx % g + 0.5) / g;
          sy += (pidx / g + 0.5) / g;
        }
        obj.cx = f32(sx / pl.size);
        obj.cy = f32(sy / pl.size);
        s.scene.objects.push_back(std::move(obj));
        placed = true;
      }
      layout_ok = placed;
    }
    if (layout_ok) break;
  }

  // Patch features: appearance code of the owning object (or background) plus
  // iid noise, then the normalized position channel. Everything f32-exact.
  const int n_obj = static_cast<int>(s.scene.objects.size());
  s.grid.features.resize(k, cfg.d_feat());
  std::vector<int> owner(static_cast<std::size_t>(k), -1);
  for (int o = 0; o < n_obj; ++o)
    for (int pidx = 0; pidx < k; ++pidx)
      if (s.scene.objects[static_cast<std::size_t>(o)].mask[static_cast<std::size_t>(pidx)])
        owner[static_cast<std::size_t>(pidx)] = o;
  for (int pidx = 0; pidx < k; ++pidx) {
    const int o = owner[static_cast<std::size_t>(pidx)];
    const int row = o < 0 ? cfg.categories
                          : s.scene.objects[static_cast<std::size_t>(o)].category;
    for (int d = 0; d < cfg.d_app; ++d)
      s.grid.features(pidx, d) =
          f32(books.feature.codes(row, d) + cfg.feature_noise * rng.normal());
    s.grid.features(pidx, cfg.d_app) = f32((pidx % g + 0.5) / g);
    s.grid.features(pidx, cfg.d_app + 1) = f32((pidx / g + 0.5) / g);
  }

  // Query a random subset of the objects, in random order.
  const int m = rng.uniform_int(1, n_obj);
  std::vector<int> order(static_cast<std::size_t>(n_obj));
  for (int i = 0; i < n_obj; ++i) order[static_cast<std::size_t>(i)] = i;
  for (int i = n_obj - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)],
              order[rng.uniform_index(static_cast<std::uint64_t>(i) + 1)]);
  s.queries.lang_codes.resize(m, cfg.d_emb);
  s.queries.points.resize(m, 2);
  s.queries.has_point.assign(static_cast<std::size_t>(m), cfg.point_queries ? 1 : 0);
  s.queries.object_ids.resize(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const int o = order[static_cast<std::size_t>(i)];
    const ObjectSpec& obj = s.scene.objects[static_cast<std::size_t>(o)];
    s.queries.object_ids[static_cast<std::size_t>(i)] = o;
    for (int d = 0; d < cfg.d_emb; ++d)
      s.queries.lang_codes(i, d) = f32(books.conditioning.codes(obj.category, d));
    s.queries.points(i, 0) = obj.cx;
    s.queries.points(i, 1) = obj.cy;
  }
  return s;
}

void validate_sample(const Sample& s, const std::string& where) {
  const int g = s.scene.grid_side;
  const std::size_t k = static_cast<std::size_t>(g) * static_cast<std::size_t>(g);
  if (s.grid.grid_side != g || s.grid.features.rows() != static_cast<Eigen::Index>(k))
    throw format_error(where + ": feature grid does not match grid side");
  if (!s.grid.features.allFinite()) throw format_error(where + ": non-finite features");
  std::vector<std::uint8_t> seen(k, 0);
  for (std::size_t o = 0; o < s.scene.objects.size(); ++o) {
    const ObjectSpec& obj = s.scene.objects[o];
    if (obj.mask.size() != k) throw format_error(where + ": object mask length mismatch");
    for (std::size_t i = 0; i < k; ++i) {
      if (!obj.mask[i]) continue;
      if (seen[i])
        throw format_error(where + ": overlapping object masks at object " + std::to_string(o));
      seen[i] = 1;
    }
    if (obj.cx < 0.0 || obj.cx > 1.0 || obj.cy < 0.0 || obj.cy > 1.0)
      throw format_error(where + ": centroid outside the unit square");
  }
  const int m = s.queries.count();
  if (s.queries.points.rows() != m || static_cast<int>(s.queries.has_point.size()) != m ||
      static_cast<int>(s.queries.object_ids.size()) != m)
    throw format_error(where + ": query fields misaligned");
  for (int i = 0; i < m; ++i) {
    const int o = s.queries.object_ids[static_cast<std::size_t>(i)];
    if (o < 0 || o >= static_cast<int>(s.scene.objects.size()))
      throw format_error(where + ": query references missing object");
    if (s.queries.has_point[static_cast<std::size_t>(i)] &&
        (s.queries.points(i, 0) < 0.0 || s.queries.points(i, 0) > 1.0 ||
         s.queries.points(i, 1) < 0.0 || s.queries.points(i, 1) > 1.0))
      throw format_error(where + ": query point outside the unit square");
  }
}

}  // namespace ctrlo
