#include "amaut/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace amaut {
namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: bad numeric value '" + v + "' for " + key);
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d < 0 || d != std::floor(d))
    throw ConfigError("config: " + key + " must be a non-negative integer");
  return static_cast<std::uint64_t>(d);
}

}  // namespace

void ExperimentConfig::validate() const {
  mel.validate(16000);  // structural check against a representative rate
  model.validate();
  ttda.validate();
  refine.validate();
  if (dataset.kind == DatasetConfig::Kind::kSynth) {
    dataset.synth.validate();
    if (dataset.val_fraction < 0.0 || dataset.val_fraction >= 1.0)
      throw ConfigError("config: dataset.val_fraction outside [0, 1)");
  } else if (dataset.manifest_path.empty()) {
    throw ConfigError("config: dataset.kind=manifest needs dataset.manifest");
  }
  if (train.batch_size == 0) throw ConfigError("config: train.batch must be >= 1");
  if (model.n_mels != mel.n_mels)
    throw ConfigError("config: model.n_mels must match mel.n_mels");
}

ExperimentConfig profile_defaults(const std::string& profile) {
  ExperimentConfig cfg;
  cfg.profile = profile;

  auto set_adapt = [&](double a, double b, double g, double q, double lr, double lam,
                       double eta) {
    cfg.ttda.alpha = a;
    cfg.ttda.beta = b;
    cfg.ttda.gamma = g;
    cfg.ttda.q = q;
    cfg.ttda.lr = lr;
    cfg.ttda.lambda = lam;
    cfg.ttda.eta = eta;
    cfg.train.schedule = ScheduleParams{lr, lam, eta};
  };

  if (profile == "am") {
    set_adapt(1.0, 0.5, 0.5, 1.1, 1e-3, 10.0, 40.0);
    cfg.model.classifier = ClassifierVariant::kLong;
    cfg.model.n_classes = 50;
  } else if (profile == "sc1") {
    set_adapt(0.2, 1.0, 0.0, 0.8, 1e-3, 10.0, 50.0);
    cfg.model.classifier = ClassifierVariant::kShort;
    cfg.model.n_classes = 30;
  } else if (profile == "sc2") {
    set_adapt(0.0, 1.0, 0.2, 1.1, 1e-3, 10.0, 50.0);
    cfg.model.classifier = ClassifierVariant::kShort;
    cfg.model.n_classes = 35;
  } else if (profile == "vs") {
    set_adapt(1.0, 0.5, 0.5, 1.1, 1e-3, 10.0, 80.0);
    cfg.model.classifier = ClassifierVariant::kShort;
    cfg.model.n_classes = 10;
  } else if (profile == "cs") {
    set_adapt(1.0, 0.5, 0.5, 1.1, 1e-3, 10.0, 40.0);
    cfg.model.classifier = ClassifierVariant::kShort;
    cfg.model.n_classes = 10;
  } else if (profile == "synth") {
    // Desk-scale network for the bundled sinusoid corpus.
    set_adapt(1.0, 0.5, 0.5, 1.1, 1e-3, 10.0, 40.0);
    cfg.mel.n_mels = 40;
    cfg.model.n_mels = 40;
    cfg.model.embed_dim = 64;
    cfg.model.mid_channels = 32;
    cfg.model.reduce_channels = 16;
    cfg.model.body_blocks = 2;
    cfg.model.n_transformer_blocks = 2;
    cfg.model.n_heads = 4;
    cfg.model.mlp_ratio = 2;
    cfg.model.n_classes = 3;
    cfg.model.classifier = ClassifierVariant::kShort;
    cfg.train.epochs = 30;
    cfg.ttda.epochs = 3;
    cfg.ttda.batch_size = 16;
    cfg.ttda.update_scope = TTDAConfig::UpdateScope::kNormOnly;
  } else {
    throw ConfigError("config: unknown profile '" + profile + "'");
  }
  return cfg;
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  // First pass: find the profile so later keys override its defaults.
  std::string profile = "synth";
  {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      if (trim(line.substr(0, eq)) == "profile") profile = trim(line.substr(eq + 1));
    }
  }
  ExperimentConfig cfg = profile_defaults(profile);

  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + " is not key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (val.empty())
      throw ConfigError("config: empty value for " + key + " at line " +
                        std::to_string(lineno));

    if (key == "profile") {
      // consumed in the first pass
    } else if (key == "dataset.kind") {
      if (val == "synth")
        cfg.dataset.kind = DatasetConfig::Kind::kSynth;
      else if (val == "manifest")
        cfg.dataset.kind = DatasetConfig::Kind::kManifest;
      else
        throw ConfigError("config: dataset.kind must be synth or manifest");
    } else if (key == "dataset.manifest") {
      cfg.dataset.manifest_path = val;
    } else if (key == "dataset.val_fraction") {
      cfg.dataset.val_fraction = to_double(key, val);
    } else if (key == "synth.classes") {
      cfg.dataset.synth.n_classes = static_cast<std::uint32_t>(to_u64(key, val));
    } else if (key == "synth.clips_per_class") {
      cfg.dataset.synth.clips_per_class = static_cast<std::uint32_t>(to_u64(key, val));
    } else if (key == "synth.duration_s") {
      cfg.dataset.synth.duration_s = to_double(key, val);
    } else if (key == "synth.sample_rate") {
      cfg.dataset.synth.sample_rate = static_cast<std::uint32_t>(to_u64(key, val));
    } else if (key == "synth.seed") {
      cfg.dataset.synth.seed = to_u64(key, val);
    } else if (key == "mel.n_mels") {
      cfg.mel.n_mels = to_u64(key, val);
      cfg.model.n_mels = cfg.mel.n_mels;
    } else if (key == "mel.win_ms") {
      cfg.mel.win_ms = to_double(key, val);
    } else if (key == "mel.hop_ms") {
      cfg.mel.hop_ms = to_double(key, val);
    } else if (key == "mel.f_min") {
      cfg.mel.f_min = to_double(key, val);
    } else if (key == "mel.f_max") {
      cfg.mel.f_max = to_double(key, val);
    } else if (key == "model.embed_dim") {
      cfg.model.embed_dim = to_u64(key, val);
    } else if (key == "model.mid_channels") {
      cfg.model.mid_channels = to_u64(key, val);
    } else if (key == "model.reduce_channels") {
      cfg.model.reduce_channels = to_u64(key, val);
    } else if (key == "model.body_blocks") {
      cfg.model.body_blocks = to_u64(key, val);
    } else if (key == "model.transformer_blocks") {
      cfg.model.n_transformer_blocks = to_u64(key, val);
    } else if (key == "model.heads") {
      cfg.model.n_heads = to_u64(key, val);
    } else if (key == "model.mlp_ratio") {
      cfg.model.mlp_ratio = to_u64(key, val);
    } else if (key == "model.token_dropout") {
      cfg.model.token_dropout = to_double(key, val);
    } else if (key == "model.classes") {
      cfg.model.n_classes = to_u64(key, val);
    } else if (key == "model.classifier") {
      if (val == "long")
        cfg.model.classifier = ClassifierVariant::kLong;
      else if (val == "short")
        cfg.model.classifier = ClassifierVariant::kShort;
      else
        throw ConfigError("config: model.classifier must be long or short");
    } else if (key == "model.target_k") {
      cfg.model.target_K = to_u64(key, val);
    } else if (key == "train.epochs") {
      cfg.train.epochs = to_u64(key, val);
    } else if (key == "train.batch") {
      cfg.train.batch_size = to_u64(key, val);
    } else if (key == "train.lr0") {
      cfg.train.schedule.lr0 = to_double(key, val);
    } else if (key == "train.lambda") {
      cfg.train.schedule.lambda = to_double(key, val);
    } else if (key == "train.eta") {
      cfg.train.schedule.eta = to_double(key, val);
    } else if (key == "train.views") {
      if (val == "train4")
        cfg.train.recipe = ViewRecipe::kTrain4;
      else if (val == "train1")
        cfg.train.recipe = ViewRecipe::kTrain1;
      else
        throw ConfigError("config: train.views must be train4 or train1");
    } else if (key == "train.seed") {
      cfg.train.seed = to_u64(key, val);
    } else if (key == "ttda.alpha") {
      cfg.ttda.alpha = to_double(key, val);
    } else if (key == "ttda.beta") {
      cfg.ttda.beta = to_double(key, val);
    } else if (key == "ttda.gamma") {
      cfg.ttda.gamma = to_double(key, val);
    } else if (key == "ttda.q") {
      cfg.ttda.q = to_double(key, val);
    } else if (key == "ttda.lr") {
      cfg.ttda.lr = to_double(key, val);
    } else if (key == "ttda.lambda") {
      cfg.ttda.lambda = to_double(key, val);
    } else if (key == "ttda.eta") {
      cfg.ttda.eta = to_double(key, val);
    } else if (key == "ttda.epochs") {
      cfg.ttda.epochs = to_u64(key, val);
    } else if (key == "ttda.batch") {
      cfg.ttda.batch_size = to_u64(key, val);
    } else if (key == "ttda.scope") {
      if (val == "all")
        cfg.ttda.update_scope = TTDAConfig::UpdateScope::kAll;
      else if (val == "norm")
        cfg.ttda.update_scope = TTDAConfig::UpdateScope::kNormOnly;
      else
        throw ConfigError("config: ttda.scope must be all or norm");
    } else if (key == "refine.method") {
      if (val == "none")
        cfg.refine.method = RefineMethod::kNone;
      else if (val == "aug")
        cfg.refine.method = RefineMethod::kAug;
      else if (val == "mlt")
        cfg.refine.method = RefineMethod::kMlt;
      else if (val == "hyb")
        cfg.refine.method = RefineMethod::kHyb;
      else
        throw ConfigError("config: refine.method must be none|aug|mlt|hyb");
    } else if (key == "refine.views") {
      cfg.refine.views = to_u64(key, val);
    } else if (key == "refine.models") {
      cfg.refine.models = to_u64(key, val);
    } else if (key == "noise_bank") {
      cfg.noise_bank_paths.push_back(val);  // repeatable, appends
    } else if (key == "output_dir") {
      cfg.output_dir = val;
    } else {
      throw ConfigError("config: unknown key '" + key + "' at line " +
                        std::to_string(lineno));
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str());
}

std::string metrics_line(const std::string& run_id, std::size_t epoch,
                         const std::string& split, double loss, double accuracy,
                         double seconds, std::uint64_t seed) {
  std::ostringstream out;
  out << "run=" << run_id << " epoch=" << epoch << " split=" << split;
  char num[64];
  std::snprintf(num, sizeof num, " loss=%.6f acc=%.4f sec=%.2f", loss, accuracy, seconds);
  out << num << " seed=" << seed;
  return out.str();
}

}  // namespace amaut
