#include "stx/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "stx/errors.hpp"

namespace stx {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_layers(const std::vector<int>& layers) {
  std::ostringstream os;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) os << ",";
    os << layers[i];
  }
  return os.str();
}

std::vector<int> parse_layers(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

// One serializer/parser over a single field table so the two cannot drift.
struct Writer {
  std::ostringstream os;
  void section(const char* name) { os << "\n# " << name << "\n"; }
  void field(const char* key, Index v) { os << key << " = " << v << "\n"; }
  void field(const char* key, std::uint64_t v) { os << key << " = " << v << "\n"; }
  void field(const char* key, double v) { os << key << " = " << fmt_double(v) << "\n"; }
  void field(const char* key, bool v) { os << key << " = " << (v ? "true" : "false") << "\n"; }
  void field(const char* key, const std::vector<int>& v) {
    os << key << " = " << fmt_layers(v) << "\n";
  }
};

struct Reader {
  std::map<std::string, std::string> kv;
  void section(const char*) {}
  std::string take(const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError(std::string("missing config key: ") + key);
    std::string v = it->second;
    kv.erase(it);
    return v;
  }
  void field(const char* key, Index& v) { v = static_cast<Index>(std::stoll(take(key))); }
  void field(const char* key, std::uint64_t& v) { v = std::stoull(take(key)); }
  void field(const char* key, double& v) { v = std::strtod(take(key).c_str(), nullptr); }
  void field(const char* key, bool& v) {
    std::string s = take(key);
    if (s == "true") {
      v = true;
    } else if (s == "false") {
      v = false;
    } else {
      throw ConfigError(std::string("expected true/false for ") + key);
    }
  }
  void field(const char* key, std::vector<int>& v) { v = parse_layers(take(key)); }
};

template <class Ctx, class Cfg>
void visit_fields(Ctx& ctx, Cfg& c) {
  ctx.section("dataset");
  ctx.field("data.image_size", c.data_image_size);
  ctx.field("data.images_per_domain", c.data_images_per_domain);
  ctx.field("data.seed", c.data_seed);
  ctx.field("data.disk_frac_source", c.data_disk_frac_source);
  ctx.field("data.stripe_frac_source", c.data_stripe_frac_source);
  ctx.field("data.disk_frac_target", c.data_disk_frac_target);
  ctx.field("data.stripe_frac_target", c.data_stripe_frac_target);
  ctx.section("model");
  ctx.field("model.base_width", c.model_base_width);
  ctx.field("model.embed_dim", c.model_embed_dim);
  ctx.field("model.head_hidden", c.model_head_hidden);
  ctx.field("model.patch_count", c.model_patch_count);
  ctx.field("model.embed_layers", c.model_embed_layers);
  ctx.section("losses");
  ctx.field("loss.tau", c.loss_tau);
  ctx.field("loss.beta", c.loss_beta);
  ctx.field("loss.rho", c.loss_rho);
  ctx.field("loss.ridge", c.loss_ridge);
  ctx.field("loss.basis_count", c.loss_basis_count);
  ctx.field("loss.hdce_negative_count", c.loss_hdce_negative_count);
  ctx.field("loss.lambda_gan", c.loss_lambda_gan);
  ctx.field("loss.lambda_hdce", c.loss_lambda_hdce);
  ctx.field("loss.lambda_ts", c.loss_lambda_ts);
  ctx.field("loss.lambda_branch_global", c.loss_lambda_branch_global);
  ctx.field("loss.lambda_branch_local", c.loss_lambda_branch_local);
  ctx.section("crops");
  ctx.field("crop.global_size", c.crop_global_size);
  ctx.field("crop.local_size", c.crop_local_size);
  ctx.field("crop.global_coverage", c.crop_global_coverage);
  ctx.field("crop.infer_stride", c.crop_infer_stride);
  ctx.section("optimizer");
  ctx.field("optim.lr", c.optim_lr);
  ctx.field("optim.beta1", c.optim_beta1);
  ctx.field("optim.beta2", c.optim_beta2);
  ctx.field("optim.eps", c.optim_eps);
  ctx.section("run");
  ctx.field("run.steps", c.run_steps);
  ctx.field("run.checkpoint_every", c.run_checkpoint_every);
  ctx.field("run.seed", c.run_seed);
  ctx.field("run.branch_global", c.run_branch_global);
  ctx.field("run.branch_local", c.run_branch_local);
}

}  // namespace

void ExperimentConfig::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0)) throw ConfigError(std::string(what) + " must be positive");
  };
  positive(static_cast<double>(data_image_size), "data.image_size");
  positive(static_cast<double>(data_images_per_domain), "data.images_per_domain");
  positive(static_cast<double>(model_base_width), "model.base_width");
  positive(static_cast<double>(model_embed_dim), "model.embed_dim");
  positive(static_cast<double>(model_head_hidden), "model.head_hidden");
  positive(static_cast<double>(model_patch_count), "model.patch_count");
  positive(loss_tau, "loss.tau");
  positive(loss_ridge, "loss.ridge");
  positive(static_cast<double>(loss_basis_count), "loss.basis_count");
  positive(static_cast<double>(crop_global_size), "crop.global_size");
  positive(static_cast<double>(crop_local_size), "crop.local_size");
  positive(optim_lr, "optim.lr");
  positive(static_cast<double>(run_steps), "run.steps");
  positive(static_cast<double>(run_checkpoint_every), "run.checkpoint_every");
  if (loss_beta < 0.0) throw ConfigError("loss.beta must be nonnegative");
  if (loss_rho < 0.0 || loss_rho > 1.0) throw ConfigError("loss.rho must lie in [0, 1]");
  if (crop_global_coverage <= 0.0 || crop_global_coverage > 1.0) {
    throw ConfigError("crop.global_coverage must lie in (0, 1]");
  }
  auto frac = [](double v, const char* what) {
    if (v < 0.0 || v > 0.9) throw ConfigError(std::string(what) + " must lie in [0, 0.9]");
  };
  frac(data_disk_frac_source, "data.disk_frac_source");
  frac(data_stripe_frac_source, "data.stripe_frac_source");
  frac(data_disk_frac_target, "data.disk_frac_target");
  frac(data_stripe_frac_target, "data.stripe_frac_target");
  if (model_embed_layers.empty()) throw ConfigError("model.embed_layers must not be empty");
  for (int l : model_embed_layers) {
    if (l < 0 || l > 3) throw ConfigError("model.embed_layers entries must lie in [0, 3]");
  }
  if (crop_global_size % 8 != 0 || crop_local_size % 8 != 0) {
    throw ConfigError("crop sizes must be divisible by 8 (three downsampling stages)");
  }
}

std::string ExperimentConfig::serialize() const {
  Writer w;
  w.os << "# experiment configuration\n";
  visit_fields(w, *this);
  return w.os.str();
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  Reader r;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed config line: " + line);
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (!r.kv.emplace(key, value).second) throw ConfigError("duplicate config key: " + key);
  }
  ExperimentConfig c;
  visit_fields(r, c);
  if (!r.kv.empty()) throw ConfigError("unknown config key: " + r.kv.begin()->first);
  return c;
}

void ExperimentConfig::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for write: " + path.string());
  os << serialize();
  if (!os) throw IoError("write failed: " + path.string());
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path.string());
  std::stringstream buf;
  buf << is.rdbuf();
  return parse(buf.str());
}

}  // namespace stx
