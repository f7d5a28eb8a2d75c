#include "slidelm/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "slidelm/rng.hpp"

namespace slidelm {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
  bool shapes_model;  // participates in the model digest
};

int to_int(const std::string& s) {
  size_t pos = 0;
  const int v = std::stoi(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("config: bad integer '" + s + "'");
  return v;
}

double to_double(const std::string& s) {
  size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("config: bad number '" + s + "'");
  return v;
}

uint64_t to_u64(const std::string& s) {
  size_t pos = 0;
  const unsigned long long v = std::stoull(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("config: bad seed '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("config: bad boolean '" + s + "'");
}

#define FIELD_INT(name, model) \
  {#name, [](const RunConfig& c) { return std::to_string(c.name); }, \
   [](RunConfig& c, const std::string& v) { c.name = to_int(v); }, model}
#define FIELD_DBL(name, model) \
  {#name, [](const RunConfig& c) { return fmt_double(c.name); }, \
   [](RunConfig& c, const std::string& v) { c.name = to_double(v); }, model}
#define FIELD_STR(name, model) \
  {#name, [](const RunConfig& c) { return c.name; }, \
   [](RunConfig& c, const std::string& v) { c.name = v; }, model}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      FIELD_STR(preset, false),
      {"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
       [](RunConfig& c, const std::string& v) { c.seed = to_u64(v); }, false},
      FIELD_INT(embed_dim, true),
      FIELD_DBL(signal_strength, false),
      FIELD_INT(max_concepts, false),
      FIELD_INT(perceiver_depth, true),
      FIELD_INT(n_latents, true),
      FIELD_INT(latent_dim, true),
      FIELD_INT(kqv_dim, true),
      FIELD_INT(lt_layers, true),
      FIELD_INT(lt_heads, true),
      FIELD_INT(mlp_inner, true),
      {"qkv_bias", [](const RunConfig& c) { return c.qkv_bias ? "true" : "false"; },
       [](RunConfig& c, const std::string& v) { c.qkv_bias = to_bool(v); }, true},
      FIELD_INT(dec_width, true),
      FIELD_INT(dec_layers, true),
      FIELD_INT(dec_unimodal, true),
      FIELD_INT(dec_heads, true),
      FIELD_INT(dec_mlp_ratio, true),
      FIELD_INT(max_seq_len, true),
      FIELD_STR(freeze_mode, false),
      FIELD_INT(proj_dim, true),
      FIELD_INT(batch_size, false),
      FIELD_INT(grad_accum, false),
      FIELD_DBL(base_lr, false),
      FIELD_INT(warmup_steps, false),
      FIELD_INT(total_steps, false),
      FIELD_INT(train_steps, false),
      FIELD_DBL(weight_decay, false),
      FIELD_DBL(clip_norm, false),
      FIELD_DBL(beta1, false),
      FIELD_DBL(beta2, false),
      FIELD_DBL(lambda_con, false),
      FIELD_DBL(lambda_rep, false),
      FIELD_STR(caption_reduction, false),
      FIELD_DBL(tau_init, false),
      FIELD_INT(concepts, false),
      FIELD_INT(specimens_per_concept, false),
      FIELD_INT(heldout_per_concept, false),
      FIELD_INT(tiles_min, false),
      FIELD_INT(tiles_max, false),
      FIELD_INT(secondary_attributes, false),
      FIELD_DBL(attribute_strength, false),
      FIELD_INT(nuisance_dims, false),
      FIELD_DBL(nuisance_strength, false),
      FIELD_DBL(tissue_fraction_min, false),
      FIELD_DBL(tissue_fraction_max, false),
  };
  return f;
}

#undef FIELD_INT
#undef FIELD_DBL
#undef FIELD_STR

}  // namespace

RunConfig RunConfig::preset_desk() { return RunConfig{}; }

RunConfig RunConfig::preset_paper() {
  RunConfig c;
  c.preset = "paper";
  c.embed_dim = 2560;
  c.perceiver_depth = 8;
  c.n_latents = 513;
  c.latent_dim = 1280;
  c.kqv_dim = 1280;
  c.lt_layers = 6;
  c.lt_heads = 8;
  c.mlp_inner = 1280;
  c.dec_width = 768;
  c.dec_layers = 24;
  c.dec_unimodal = 12;
  c.dec_heads = 12;
  c.dec_mlp_ratio = 4;
  c.max_seq_len = 256;
  c.freeze_mode = "paper";
  c.proj_dim = 5120;
  c.batch_size = 64;
  c.grad_accum = 4;
  c.base_lr = 2e-4;
  c.warmup_steps = 2000;
  c.total_steps = 24000;
  c.caption_reduction = "sum";
  return c;
}

RunConfig RunConfig::from_preset(const std::string& name) {
  if (name == "desk") return preset_desk();
  if (name == "paper") return preset_paper();
  throw std::invalid_argument("config: unknown preset '" + name + "'");
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

RunConfig RunConfig::from_text(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    auto l = line.find_first_not_of(" \t\r");
    if (l == std::string::npos) continue;
    auto r = line.find_last_not_of(" \t\r");
    line = line.substr(l, r - l + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) +
                               " is not key=value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }

  RunConfig cfg;
  for (const auto& [k, v] : kv)
    if (k == "preset") cfg = from_preset(v);
  for (const auto& [k, v] : kv) {
    bool found = false;
    for (const auto& f : fields()) {
      if (f.key == k) {
        f.set(cfg, v);
        found = true;
        break;
      }
    }
    if (!found) throw std::runtime_error("config: unknown key '" + k + "'");
  }
  cfg.validate();
  return cfg;
}

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot open " + path);
  out << canonical_text();
}

std::string RunConfig::canonical_text() const {
  std::ostringstream os;
  for (const auto& f : fields()) os << f.key << "=" << f.get(*this) << "\n";
  return os.str();
}

uint64_t RunConfig::digest() const { return fnv1a64(canonical_text()); }

uint64_t RunConfig::model_digest() const {
  std::ostringstream os;
  for (const auto& f : fields())
    if (f.shapes_model) os << f.key << "=" << f.get(*this) << "\n";
  return fnv1a64(os.str());
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (embed_dim <= 0) fail("embed_dim must be positive");
  if (n_latents < 2) fail("n_latents needs the slide latent plus context latents");
  if (latent_dim <= 0 || kqv_dim <= 0) fail("latent dims must be positive");
  if (latent_dim % lt_heads != 0) fail("latent_dim must divide by lt_heads");
  if (dec_width % dec_heads != 0) fail("dec_width must divide by dec_heads");
  if (dec_unimodal < 1 || dec_unimodal >= dec_layers)
    fail("uni-modal split must satisfy 1 <= split < layers");
  if (perceiver_depth < 1) fail("perceiver_depth must be positive");
  if (max_concepts > embed_dim) fail("max_concepts cannot exceed embed_dim");
  if (concepts < 2) fail("need at least two concepts");
  if (concepts > max_concepts) fail("concepts cannot exceed max_concepts");
  if (tiles_min < 1 || tiles_max < tiles_min) fail("bad tiles range");
  if (secondary_attributes < 0 || secondary_attributes > 4)
    fail("secondary_attributes must be in [0,4]");
  if (nuisance_dims < 0) fail("nuisance_dims must be non-negative");
  if (nuisance_dims > 0 && 6 + nuisance_dims > max_concepts - secondary_attributes)
    fail("nuisance directions overlap the attribute range");
  if (secondary_attributes > 0 && concepts > max_concepts - secondary_attributes)
    fail("concepts overlap the attribute range");
  if (tissue_fraction_min <= 0 || tissue_fraction_max < tissue_fraction_min ||
      tissue_fraction_max > 1.0)
    fail("bad tissue fraction range");
  if (batch_size < 1 || grad_accum < 1) fail("bad batch configuration");
  if (!(signal_strength >= 0)) fail("signal_strength must be non-negative");
  if (freeze_mode != "none" && freeze_mode != "paper") fail("freeze_mode must be none|paper");
  if (caption_reduction != "mean" && caption_reduction != "sum")
    fail("caption_reduction must be mean|sum");
  if (tau_init <= 0) fail("tau_init must be positive");
}

}  // namespace slidelm
