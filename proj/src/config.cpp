#include "dgve/config.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <tomlplusplus/toml.hpp>

#include "dgve/errors.hpp"
#include "dgve/util.hpp"

namespace dgve {

void SchedulerConfig::validate() const {
  if (delta_t < 1) throw ParameterError("delta_t: must be >= 1");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  const auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ParameterError(key + ": expected an integer, got '" + v + "'");
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    if (!v.empty() && v[0] != '-') {
      const unsigned long long x = std::stoull(v, &pos);
      if (pos == v.size()) return x;
    }
  } catch (const std::exception&) {
  }
  throw ParameterError(key + ": expected a non-negative integer, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos == v.size() && std::isfinite(x)) return x;
  } catch (const std::exception&) {
  }
  throw ParameterError(key + ": expected a finite number, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ParameterError(key + ": expected true or false, got '" + v + "'");
}

std::string show(bool b) { return b ? "true" : "false"; }

// Fields that must agree across components follow their owner.
void couple(RunConfig& c) {
  auto& a = c.train.arch;
  a.dgem.rep_channels = a.dam.rep_channels();
  a.heads.dc_dim = a.dgem.embed_dim;
  a.drpm.dc_dim = a.dgem.embed_dim;
  a.dgem.scale = c.train.scale;
  a.heads.scale = c.train.scale;
}

std::vector<ConfigField> build_fields() {
  std::vector<ConfigField> f;
  auto add_int = [&](std::string key, std::string help, auto member) {
    f.push_back({key, std::move(help), [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
                 [member, key](RunConfig& c, const std::string& v) { member(c) = parse_int(key, v); }});
  };
  auto add_double = [&](std::string key, std::string help, auto member) {
    f.push_back({key, std::move(help), [member](const RunConfig& c) { return format_double(member(const_cast<RunConfig&>(c))); },
                 [member, key](RunConfig& c, const std::string& v) { member(c) = parse_double(key, v); }});
  };
  auto add_bool = [&](std::string key, std::string help, auto member) {
    f.push_back({key, std::move(help), [member](const RunConfig& c) { return show(member(const_cast<RunConfig&>(c))); },
                 [member, key](RunConfig& c, const std::string& v) { member(c) = parse_bool(key, v); }});
  };
  auto add_string = [&](std::string key, std::string help, auto member) {
    f.push_back({key, std::move(help), [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); },
                 [member](RunConfig& c, const std::string& v) { member(c) = v; }});
  };
#define M(expr) [](RunConfig & c) -> auto& { return c.expr; }

  f.push_back({"seed", "global seed of every random draw",
               [](const RunConfig& c) { return std::to_string(c.train.seed); },
               [](RunConfig& c, const std::string& v) { c.train.seed = parse_u64("seed", v); }});
  add_int("delta_t", "key-frame interval in frames", M(train.delta_t));
  add_bool("warm_start", "treat the first frame of a stream as a key frame", M(warm_start));

  add_int("n_d", "epochs of contrastive DAM pretraining (stage 1)", M(train.n_d));
  add_int("n_s", "epochs of image GAN training (stage 2)", M(train.n_s));
  add_int("n", "total epochs; stage 3 runs n - n_d - n_s", M(train.n));
  add_int("batch_size", "batch size of every stage", M(train.batch_size));
  add_double("lr_dam", "Adam learning rate of the DAM", M(train.lr_dam));
  add_double("lr_g", "Adam learning rate of the generators and DRPM", M(train.lr_g));
  add_double("lr_d", "Adam learning rate of the discriminators", M(train.lr_d));
  add_double("beta1", "Adam beta1", M(train.beta1));
  add_double("beta2", "Adam beta2", M(train.beta2));
  add_double("lambda_adv", "weight of the adversarial terms", M(train.weights.adv));
  add_double("lambda_cyc", "weight of the cycle terms", M(train.weights.cyc));
  add_double("lambda_hf", "weight of the high-frequency adversarial term", M(train.weights.hf));
  add_double("lambda_cd", "weight of the representation cycle term", M(train.weights.cd));
  add_bool("cd_on_map", "compare d_map instead of d_vec in the representation cycle term", M(train.cd_on_map));
  add_double("hf_sigma", "gaussian sigma of the highpass seen by D_hf", M(train.hf_sigma));
  add_int("scale", "upscaling factor", M(train.scale));
  f.push_back({"gl_kind", "degradation model used by G_L",
               [](const RunConfig& c) { return to_string(c.train.gl_kind); },
               [](RunConfig& c, const std::string& v) { c.train.gl_kind = parse_kind(v); }});
  add_bool("paired", "stage 2: align HQ and LQ items instead of shuffling them independently", M(train.paired));
  add_bool("train_dam", "stage 2: fine-tune the DAM with the generators", M(train.train_dam));
  add_int("max_steps", "cap on steps per epoch in stages 2 and 3, -1 for a full pass", M(train.max_steps));
  add_int("keep_checkpoints", "epoch checkpoints kept per stage, 0 keeps all", M(train.keep_checkpoints));
  add_int("dam_crop", "stage 1: low-resolution crop side", M(train.dam_crop));
  add_int("queue_size", "stage 1: negatives queue length", M(train.queue_size));
  add_double("tau", "stage 1: InfoNCE temperature", M(train.tau));
  add_double("momentum", "stage 1: key encoder momentum", M(train.momentum));
  add_int("clip_length", "stage 3: frames per training clip", M(train.clip_length));
  add_bool("unfreeze_dgem", "stage 3: keep training the DGEM", M(train.unfreeze_dgem));
  add_double("distill_weight", "stage 3: weight of the DRPM-to-DAM distance", M(train.distill_weight));

  add_int("arch.dam.base_channels", "DAM channels of the first stage", M(train.arch.dam.base_channels));
  add_int("arch.dam.blocks_per_stage", "DAM residual blocks per resolution", M(train.arch.dam.blocks_per_stage));
  add_int("arch.dam.proj_dim", "DAM projection width", M(train.arch.dam.proj_dim));
  add_int("arch.dgem.embed_dim", "DGEM width, equal to D_c", M(train.arch.dgem.embed_dim));
  add_int("arch.dgem.heads", "DGEM attention heads", M(train.arch.dgem.heads));
  add_int("arch.dgem.window", "DGEM attention window side", M(train.arch.dgem.window));
  add_int("arch.dgem.blocks", "DGEM transformer blocks", M(train.arch.dgem.blocks));
  add_int("arch.dgem.shallow_channels", "DGEM shallow feature channels", M(train.arch.dgem.shallow_channels));
  add_int("arch.dgem.recon_channels", "DGEM reconstruction channels", M(train.arch.dgem.recon_channels));
  add_int("arch.dgem.mlp_hidden", "DGEM MLP hidden width", M(train.arch.dgem.mlp_hidden));
  add_bool("arch.dgem.bicubic_skip", "add the bicubic upscale of the input to the output", M(train.arch.dgem.bicubic_skip));
  add_int("arch.drpm.context", "DRPM history length", M(train.arch.drpm.context));
  add_int("arch.drpm.d_model", "DRPM width", M(train.arch.drpm.d_model));
  add_int("arch.drpm.layers", "DRPM layers", M(train.arch.drpm.layers));
  add_int("arch.drpm.heads", "DRPM attention heads", M(train.arch.drpm.heads));
  add_int("arch.drpm.ff", "DRPM feed-forward width", M(train.arch.drpm.ff));
  add_double("arch.drpm.step_gain", "DRPM gain on frame-to-frame differences", M(train.arch.drpm.step_gain));
  add_int("arch.heads.hidden", "G_L regression head hidden width", M(train.arch.heads.hidden));
  add_int("arch.heads.field_grid", "G_L spatial field grid side", M(train.arch.heads.field_grid));
  add_int("arch.heads.kernel_size", "G_L regressed blur kernel side", M(train.arch.heads.kernel_size));
  add_int("arch.disc_base", "discriminator channels of the first layer", M(train.arch.disc_base));

  f.push_back({"split_ratios", "train,val,test proportions",
               [](const RunConfig& c) {
                 return format_double(c.split_ratios[0]) + "," + format_double(c.split_ratios[1]) + "," +
                        format_double(c.split_ratios[2]);
               },
               [](RunConfig& c, const std::string& v) {
                 auto parts = split_csv(v);
                 if (parts.size() != 3) throw ParameterError("split_ratios: expected three comma-separated numbers");
                 for (size_t i = 0; i < 3; ++i) c.split_ratios[i] = parse_double("split_ratios", parts[i]);
               }});
  add_int("patch", "HQ patch side of synthesized pairs", M(patch));
  add_int("pairs", "pairs synthesized per corpus", M(pairs));
  f.push_back({"kinds", "degradation kinds of synthesized data",
               [](const RunConfig& c) { return join_kinds(c.kinds); },
               [](RunConfig& c, const std::string& v) { c.kinds = parse_kinds(v); }});
  f.push_back({"levels", "degradation levels of synthesized data",
               [](const RunConfig& c) {
                 std::string s;
                 for (auto l : c.levels) s += (s.empty() ? "" : ",") + to_string(l);
                 return s;
               },
               [](RunConfig& c, const std::string& v) { c.levels = parse_levels(v); }});
  add_int("synth_count", "images produced by synth", M(synth_count));
  add_int("synth_size", "side of synthesized images", M(synth_size));
  add_int("synth_frames", "frames per synthesized clip", M(synth_frames));
  add_int("synth_clips", "clips produced by synth", M(synth_clips));
  add_int("synth_clip_size", "frame side of synthesized clips", M(synth_clip_size));
  add_string("data_dir", "corpus root", M(data_dir));
  add_string("out_dir", "run or output directory", M(out_dir));
  add_string("input", "input image, frame directory or corpus", M(input));
  add_string("output", "output image, frame directory or file", M(output));
  add_string("checkpoint", "model bundle checkpoint", M(checkpoint));
  add_string("reference", "HQ reference image or directory for full-reference metrics", M(reference));
  add_string("niqe_model", "NIQE pristine model file; empty uses the shipped one", M(niqe_model));
  add_string("split", "corpus split read by training and evaluation commands", M(split));
  add_bool("resume", "continue a training run from its latest checkpoint", M(resume));
  add_int("timing_repeats", "enhance-video passes; per-frame time is the minimum", M(timing_repeats));
  add_int("budget_height", "low-resolution input height used by budget", M(budget_height));
  add_int("budget_width", "low-resolution input width used by budget", M(budget_width));
#undef M
  return f;
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  scheduler().validate();
  for (double r : split_ratios)
    if (!(r >= 0.0)) throw ParameterError("split_ratios: must be >= 0");
  if (split_ratios[0] + split_ratios[1] + split_ratios[2] <= 0.0) throw ParameterError("split_ratios: all zero");
  if (patch < 8 || patch % train.scale) throw ParameterError("patch: must be >= 8 and a multiple of scale");
  if (pairs < 0) throw ParameterError("pairs: must be >= 0");
  if (kinds.empty()) throw ParameterError("kinds: must not be empty");
  if (levels.empty()) throw ParameterError("levels: must not be empty");
  if (synth_count < 0 || synth_size < ImageTensor::kMinSide || synth_frames < 1 || synth_clips < 0 ||
      synth_clip_size < ImageTensor::kMinSide)
    throw ParameterError("synth_*: counts >= 0, sizes >= 8, frames >= 1");
  if (timing_repeats < 1) throw ParameterError("timing_repeats: must be >= 1");
  if (budget_height < 8 || budget_width < 8) throw ParameterError("budget_height, budget_width: must be >= 8");
  if (split != "train" && split != "val" && split != "test") throw ParameterError("split: train, val or test");
}

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = build_fields();
  return fields;
}

namespace {
const ConfigField& field(const std::string& key) {
  for (const auto& f : config_fields())
    if (f.key == key) return f;
  throw ParameterError("unknown config key '" + key + "'");
}
}  // namespace

void set_field(RunConfig& cfg, const std::string& key, const std::string& value) {
  field(key).set(cfg, trim(value));
  couple(cfg);
}

std::string get_field(const RunConfig& cfg, const std::string& key) { return field(key).get(cfg); }

std::string to_key_values(const RunConfig& cfg) {
  std::ostringstream ss;
  for (const auto& f : config_fields()) ss << f.key << " = " << f.get(cfg) << "\n";
  return ss.str();
}

void apply_key_values(RunConfig& cfg, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int64_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParameterError("line " + std::to_string(n) + ": expected key = value");
    set_field(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

namespace {

std::string toml_scalar(const toml::node& node, const std::string& key) {
  if (auto s = node.as_string()) return s->get();
  if (auto i = node.as_integer()) return std::to_string(i->get());
  if (auto d = node.as_floating_point()) return format_double(d->get());
  if (auto b = node.as_boolean()) return show(b->get());
  if (auto a = node.as_array()) {
    std::string out;
    for (const auto& el : *a) out += (out.empty() ? "" : ",") + toml_scalar(el, key);
    return out;
  }
  throw ParameterError(key + ": unsupported TOML value type");
}

void flatten(const toml::table& t, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& out) {
  for (const auto& [k, v] : t) {
    const std::string key = prefix.empty() ? std::string(k.str()) : prefix + "." + std::string(k.str());
    if (auto sub = v.as_table()) flatten(*sub, key, out);
    else out.emplace_back(key, toml_scalar(v, key));
  }
}

}  // namespace

void apply_toml(RunConfig& cfg, const std::string& text, const std::string& source_name) {
  toml::table t;
  try {
    t = toml::parse(text, source_name);
  } catch (const toml::parse_error& e) {
    std::ostringstream ss;
    ss << source_name << ": " << e.description() << " (line " << e.source().begin.line << ")";
    throw ParameterError(ss.str());
  }
  std::vector<std::pair<std::string, std::string>> kv;
  flatten(t, "", kv);
  for (const auto& [k, v] : kv) set_field(cfg, k, v);
}

RunConfig load_config_file(const std::filesystem::path& file) {
  RunConfig cfg;
  apply_toml(cfg, read_text(file), file.string());
  return cfg;
}

std::string arch_to_key_values(const ArchConfig& arch) {
  const auto& d = arch.dam;
  const auto& g = arch.dgem;
  const auto& r = arch.drpm;
  const auto& h = arch.heads;
  std::ostringstream ss;
  ss << "dam.base_channels=" << d.base_channels << ";dam.blocks_per_stage=" << d.blocks_per_stage
     << ";dam.proj_dim=" << d.proj_dim << ";dgem.rep_channels=" << g.rep_channels << ";dgem.embed_dim=" << g.embed_dim
     << ";dgem.heads=" << g.heads << ";dgem.window=" << g.window << ";dgem.blocks=" << g.blocks
     << ";dgem.scale=" << g.scale << ";dgem.shallow_channels=" << g.shallow_channels
     << ";dgem.recon_channels=" << g.recon_channels << ";dgem.mlp_hidden=" << g.mlp_hidden
     << ";dgem.bicubic_skip=" << (g.bicubic_skip ? 1 : 0) << ";drpm.dc_dim=" << r.dc_dim
     << ";drpm.context=" << r.context << ";drpm.d_model=" << r.d_model << ";drpm.layers=" << r.layers
     << ";drpm.heads=" << r.heads << ";drpm.ff=" << r.ff << ";drpm.step_gain=" << format_double(r.step_gain)
     << ";heads.dc_dim=" << h.dc_dim << ";heads.hidden=" << h.hidden << ";heads.field_grid=" << h.field_grid
     << ";heads.kernel_size=" << h.kernel_size << ";heads.scale=" << h.scale << ";heads.kinds=" << join_kinds(h.kinds)
     << ";disc_base=" << arch.disc_base;
  return ss.str();
}

ArchConfig arch_from_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ';')) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ParameterError("architecture record: malformed entry '" + tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  auto i = [&](const char* k) {
    if (!kv.count(k)) throw ParameterError(std::string("architecture record lacks '") + k + "'");
    return parse_int(k, kv.at(k));
  };
  ArchConfig a;
  a.dam.base_channels = i("dam.base_channels");
  a.dam.blocks_per_stage = i("dam.blocks_per_stage");
  a.dam.proj_dim = i("dam.proj_dim");
  a.dgem.rep_channels = i("dgem.rep_channels");
  a.dgem.embed_dim = i("dgem.embed_dim");
  a.dgem.heads = i("dgem.heads");
  a.dgem.window = i("dgem.window");
  a.dgem.blocks = i("dgem.blocks");
  a.dgem.scale = i("dgem.scale");
  a.dgem.shallow_channels = i("dgem.shallow_channels");
  a.dgem.recon_channels = i("dgem.recon_channels");
  a.dgem.mlp_hidden = i("dgem.mlp_hidden");
  a.dgem.bicubic_skip = i("dgem.bicubic_skip") != 0;
  a.drpm.dc_dim = i("drpm.dc_dim");
  a.drpm.context = i("drpm.context");
  a.drpm.d_model = i("drpm.d_model");
  a.drpm.layers = i("drpm.layers");
  a.drpm.heads = i("drpm.heads");
  a.drpm.ff = i("drpm.ff");
  a.drpm.step_gain = parse_double("drpm.step_gain", kv.at("drpm.step_gain"));
  a.heads.dc_dim = i("heads.dc_dim");
  a.heads.hidden = i("heads.hidden");
  a.heads.field_grid = i("heads.field_grid");
  a.heads.kernel_size = i("heads.kernel_size");
  a.heads.scale = i("heads.scale");
  a.heads.kinds = parse_kinds(kv.at("heads.kinds"));
  a.disc_base = i("disc_base");
  return a;
}

std::string join_kinds(const std::vector<DegradationKind>& kinds) {
  std::string s;
  for (auto k : kinds) s += (s.empty() ? "" : ",") + to_string(k);
  return s;
}

std::vector<DegradationKind> parse_kinds(const std::string& csv) {
  std::vector<DegradationKind> out;
  for (const auto& t : split_csv(csv)) out.push_back(parse_kind(t));
  if (out.empty()) throw ParameterError("kinds: empty list");
  return out;
}

std::vector<DegradationLevel> parse_levels(const std::string& csv) {
  std::vector<DegradationLevel> out;
  for (const auto& t : split_csv(csv)) out.push_back(parse_level(t));
  if (out.empty()) throw ParameterError("levels: empty list");
  return out;
}

}  // namespace dgve
