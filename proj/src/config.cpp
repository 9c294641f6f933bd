#include "ctrlo/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "ctrlo/errors.hpp"

namespace ctrlo {

namespace {

struct Field {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& name, const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw config_error("config: bad numeric value for " + name + ": '" + s + "'");
  }
}

std::int64_t parse_int(const std::string& name, const std::string& s) {
  std::int64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw config_error("config: bad integer value for " + name + ": '" + s + "'");
  return v;
}

bool parse_bool(const std::string& name, const std::string& s) {
  if (s == "on" || s == "true" || s == "1") return true;
  if (s == "off" || s == "false" || s == "0") return false;
  throw config_error("config: bad boolean for " + name + ": '" + s + "' (use on/off)");
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto add_u64 = [&f](const char* n, std::uint64_t RunConfig::* m) {
      f.push_back({n, [m](const RunConfig& c) { return std::to_string(c.*m); },
                   [m, n](RunConfig& c, const std::string& s) {
                     c.*m = static_cast<std::uint64_t>(parse_int(n, s));
                   }});
    };
    auto add_int = [&f](const char* n, int RunConfig::* m) {
      f.push_back({n, [m](const RunConfig& c) { return std::to_string(c.*m); },
                   [m, n](RunConfig& c, const std::string& s) {
                     c.*m = static_cast<int>(parse_int(n, s));
                   }});
    };
    auto add_dbl = [&f](const char* n, double RunConfig::* m) {
      f.push_back({n, [m](const RunConfig& c) { return fmt_double(c.*m); },
                   [m, n](RunConfig& c, const std::string& s) { c.*m = parse_double(n, s); }});
    };
    auto add_bool = [&f](const char* n, bool RunConfig::* m) {
      f.push_back({n, [m](const RunConfig& c) { return (c.*m) ? "on" : "off"; },
                   [m, n](RunConfig& c, const std::string& s) { c.*m = parse_bool(n, s); }});
    };
    auto add_str = [&f](const char* n, std::string RunConfig::* m) {
      f.push_back({n, [m](const RunConfig& c) { return c.*m; },
                   [m](RunConfig& c, const std::string& s) { c.*m = s; }});
    };

    add_u64("seed", &RunConfig::seed);
    add_int("steps", &RunConfig::steps);
    add_int("batch_size", &RunConfig::batch_size);
    add_dbl("lr", &RunConfig::lr);
    add_dbl("adam_beta1", &RunConfig::adam_beta1);
    add_dbl("adam_beta2", &RunConfig::adam_beta2);
    add_dbl("adam_eps", &RunConfig::adam_eps);
    add_int("workers", &RunConfig::workers);
    add_int("n_slots", &RunConfig::n_slots);
    add_int("t_iters", &RunConfig::t_iters);
    add_int("d_slot", &RunConfig::d_slot);
    add_int("d_sa", &RunConfig::d_sa);
    add_int("slot_mlp_hidden", &RunConfig::slot_mlp_hidden);
    add_int("map_heads", &RunConfig::map_heads);
    add_int("map_attn", &RunConfig::map_attn);
    add_int("map_ff", &RunConfig::map_ff);
    add_int("dec_width", &RunConfig::dec_width);
    add_int("dec_hidden_layers", &RunConfig::dec_hidden_layers);
    add_int("cond_hidden", &RunConfig::cond_hidden);
    add_int("d_emb", &RunConfig::d_emb);
    add_int("point_hidden", &RunConfig::point_hidden);
    add_int("proj_hidden", &RunConfig::proj_hidden);
    add_dbl("tau", &RunConfig::tau);
    add_dbl("lambda_cc", &RunConfig::lambda_cc);
    add_str("init_mode", &RunConfig::init_mode);
    add_bool("contrastive_loss", &RunConfig::contrastive_loss);
    add_bool("decoder_conditioning", &RunConfig::decoder_conditioning);
    add_bool("point_queries", &RunConfig::point_queries);
    add_str("target_codebook", &RunConfig::target_codebook);
    add_int("grid_side", &RunConfig::grid_side);
    add_int("categories", &RunConfig::categories);
    add_int("d_app", &RunConfig::d_app);
    add_int("min_objects", &RunConfig::min_objects);
    add_int("max_objects", &RunConfig::max_objects);
    add_dbl("feature_noise", &RunConfig::feature_noise);
    add_str("shape_family", &RunConfig::shape_family);
    add_dbl("codebook_min_sep", &RunConfig::codebook_min_sep);
    add_u64("data_seed", &RunConfig::data_seed);
    add_int("eval_samples", &RunConfig::eval_samples);
    add_int("eval_every", &RunConfig::eval_every);
    add_int("checkpoint_every", &RunConfig::checkpoint_every);
    add_int("keep_checkpoints", &RunConfig::keep_checkpoints);
    return f;
  }();
  return table;
}

}  // namespace

ModelDims RunConfig::dims() const {
  ModelDims d;
  d.k = grid_side * grid_side;
  d.d_in = d_in();
  d.n_slots = n_slots;
  d.d_slot = d_slot;
  d.d_sa = d_sa;
  d.slot_mlp_hidden = slot_mlp_hidden;
  d.t_iters = t_iters;
  d.map_heads = map_heads;
  d.map_attn = map_attn;
  d.map_ff = map_ff_resolved();
  d.dec_width = dec_width;
  d.dec_hidden_layers = dec_hidden_layers;
  d.cond_hidden = cond_hidden;
  d.d_emb = d_emb;
  d.point_hidden = point_hidden;
  d.proj_hidden = proj_hidden;
  d.tau = tau;
  return d;
}

SceneConfig RunConfig::scene() const {
  SceneConfig s;
  s.grid_side = grid_side;
  s.categories = categories;
  s.min_objects = min_objects;
  s.max_objects = max_objects;
  s.feature_noise = feature_noise;
  s.d_app = d_app;
  s.d_emb = d_emb;
  s.min_separation = codebook_min_sep;
  s.shape_family =
      shape_family == "blob" ? SceneConfig::ShapeFamily::blob : SceneConfig::ShapeFamily::rect;
  s.point_queries = point_queries;
  return s;
}

SlotInitMode RunConfig::slot_init_mode() const {
  if (init_mode == "assign") return SlotInitMode::assign;
  if (init_mode == "add") return SlotInitMode::add;
  if (init_mode == "none") return SlotInitMode::none;
  throw config_error("config: init_mode must be assign|add|none, got '" + init_mode + "'");
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw config_error("config: " + msg); };
  if (steps < 0) fail("steps must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (workers < 0) fail("workers must be >= 0");
  if (n_slots < 1) fail("n_slots must be >= 1");
  if (t_iters < 1) fail("t_iters must be >= 1");
  if (d_slot < 1 || d_sa < 1 || d_emb < 1) fail("model widths must be positive");
  if (map_attn % map_heads != 0) fail("map_attn must be divisible by map_heads");
  if (dec_hidden_layers < 1) fail("dec_hidden_layers must be >= 1");
  if (!(tau > 0.0)) fail("tau must be positive");
  if (lambda_cc < 0.0) fail("lambda_cc must be >= 0");
  (void)slot_init_mode();
  if (target_codebook != "shared" && target_codebook != "distinct")
    fail("target_codebook must be shared|distinct");
  if (shape_family != "rect" && shape_family != "blob") fail("shape_family must be rect|blob");
  if (grid_side < 2) fail("grid_side must be >= 2");
  if (categories < 1) fail("categories must be >= 1");
  if (min_objects < 1 || max_objects < min_objects) fail("bad object count range");
  if (max_objects > n_slots) fail("max_objects may not exceed n_slots (M <= N)");
  if (feature_noise < 0.0) fail("feature_noise must be >= 0");
  if (eval_samples < 1) fail("eval_samples must be >= 1");
  if (eval_every < 1) fail("eval_every must be >= 1");
  if (checkpoint_every < 1) fail("checkpoint_every must be >= 1");
  if (keep_checkpoints < 1) fail("keep_checkpoints must be >= 1");
}

namespace {

void apply_line(RunConfig& cfg, const std::string& line, const std::string& where) {
  std::string s = line;
  if (const auto hash = s.find('#'); hash != std::string::npos) s.resize(hash);
  const auto notspace = [](unsigned char ch) { return !std::isspace(ch); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
  s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
  if (s.empty()) return;
  const auto eq = s.find('=');
  if (eq == std::string::npos) throw config_error(where + ": expected key=value, got '" + s + "'");
  std::string key = s.substr(0, eq), value = s.substr(eq + 1);
  key.erase(std::find_if(key.rbegin(), key.rend(), notspace).base(), key.end());
  value.erase(value.begin(), std::find_if(value.begin(), value.end(), notspace));
  for (const Field& f : fields()) {
    if (f.name == key) {
      f.set(cfg, value);
      return;
    }
  }
  throw config_error(where + ": unknown key '" + key + "'");
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    apply_line(cfg, line, "line " + std::to_string(ln));
  }
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void apply_override(RunConfig& cfg, const std::string& kv) { apply_line(cfg, kv, "--set " + kv); }

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) {
    out += f.name;
    out += '=';
    out += f.get(cfg);
    out += '\n';
  }
  return out;
}

}  // namespace ctrlo
