#include "amaut/model.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace amaut {
namespace {

std::size_t conv_len(std::size_t l, std::size_t k, std::size_t stride, std::size_t pad) {
  const std::size_t padded = l + 2 * pad;
  return padded < k ? 0 : (padded - k) / stride + 1;
}

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace

std::size_t CnnPlan::output_length(std::size_t t) const {
  std::size_t l = conv_len(t, tail_kernel, tail_stride, tail_pad);
  if (tail_pool) l = l < 2 ? 0 : (l - 2) / 2 + 1;
  for (const auto& s : stages) l = conv_len(l, 7, s.stride, 3);
  return l;
}

std::size_t CnnPlan::conv_layer_count() const {
  std::size_t n = 2;  // tail + head
  for (const auto& s : stages) n += 3 * s.blocks;
  return n;
}

std::string CnnPlan::to_text() const {
  std::ostringstream os;
  os << "tail_kernel=" << tail_kernel << "\ntail_stride=" << tail_stride
     << "\ntail_pad=" << tail_pad << "\ntail_pool=" << (tail_pool ? 1 : 0) << "\nstages=";
  for (std::size_t i = 0; i < stages.size(); ++i)
    os << (i ? "," : "") << stages[i].blocks << "x" << stages[i].stride;
  os << "\n";
  return os.str();
}

CnnPlan CnnPlan::from_text(const std::string& text) {
  const auto kv = parse_kv(text);
  CnnPlan plan;
  plan.tail_kernel = std::stoul(kv.at("tail_kernel"));
  plan.tail_stride = std::stoul(kv.at("tail_stride"));
  plan.tail_pad = std::stoul(kv.at("tail_pad"));
  plan.tail_pool = kv.at("tail_pool") == "1";
  plan.stages.clear();
  std::stringstream ss(kv.at("stages"));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto x = item.find('x');
    plan.stages.push_back({std::stoul(item.substr(0, x)), std::stoul(item.substr(x + 1))});
  }
  return plan;
}

CnnPlan plan_cnn(std::size_t input_frames, std::size_t target_k, std::size_t body_blocks) {
  if (target_k < 1) throw PlanError("plan: target_K must be >= 1");
  if (body_blocks < 1) throw PlanError("plan: need at least one block per stage");
  if (input_frames < target_k)
    throw PlanError("plan: input has " + std::to_string(input_frames) +
                    " frames, fewer than target_K=" + std::to_string(target_k) +
                    "; choose a smaller target_K");
  CnnPlan plan;
  std::size_t l;
  const std::size_t after_conv = conv_len(input_frames, 14, 2, 0);
  const std::size_t after_pool = after_conv < 2 ? 0 : (after_conv - 2) / 2 + 1;
  if (after_pool >= target_k) {
    plan.tail_stride = 2;
    plan.tail_pad = 0;
    plan.tail_pool = true;
    l = after_pool;
  } else if (after_conv >= target_k) {
    plan.tail_stride = 2;
    plan.tail_pad = 0;
    plan.tail_pool = false;
    l = after_conv;
  } else {
    // Input already short: keep the conv14 tail but preserve length.
    plan.tail_stride = 1;
    plan.tail_pad = 7;
    plan.tail_pool = false;
    l = conv_len(input_frames, 14, 1, 7);  // input_frames + 1
  }
  while (l >= 2 * target_k) {
    plan.stages.push_back({body_blocks, 2});
    l = conv_len(l, 7, 2, 3);
  }
  plan.stages.push_back({body_blocks, 1});  // full-resolution body
  return plan;
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "embed_dim=" << embed_dim << "\nn_mels=" << n_mels
     << "\nmid_channels=" << mid_channels << "\nreduce_channels=" << reduce_channels
     << "\nbody_blocks=" << body_blocks
     << "\nn_transformer_blocks=" << n_transformer_blocks << "\nn_heads=" << n_heads
     << "\nmlp_ratio=" << mlp_ratio << "\ntoken_dropout=" << token_dropout
     << "\nattn_dropout=" << attn_dropout << "\nn_classes=" << n_classes
     << "\nclassifier=" << (classifier == ClassifierVariant::kLong ? "long" : "short")
     << "\ntarget_K=" << target_K << "\n";
  return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  const auto kv = parse_kv(text);
  ModelConfig cfg;
  cfg.embed_dim = std::stoul(kv.at("embed_dim"));
  cfg.n_mels = std::stoul(kv.at("n_mels"));
  cfg.mid_channels = std::stoul(kv.at("mid_channels"));
  cfg.reduce_channels = std::stoul(kv.at("reduce_channels"));
  cfg.body_blocks = std::stoul(kv.at("body_blocks"));
  cfg.n_transformer_blocks = std::stoul(kv.at("n_transformer_blocks"));
  cfg.n_heads = std::stoul(kv.at("n_heads"));
  cfg.mlp_ratio = std::stoul(kv.at("mlp_ratio"));
  cfg.token_dropout = std::stod(kv.at("token_dropout"));
  cfg.attn_dropout = std::stod(kv.at("attn_dropout"));
  cfg.n_classes = std::stoul(kv.at("n_classes"));
  cfg.classifier =
      kv.at("classifier") == "long" ? ClassifierVariant::kLong : ClassifierVariant::kShort;
  cfg.target_K = std::stoul(kv.at("target_K"));
  return cfg;
}

namespace {

constexpr char kMagic[] = "AMAUTCKPT";
constexpr std::uint32_t kVersion = 1;

template <typename V>
void put(std::ostream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw CheckpointError("checkpoint: truncated file");
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto len = get<std::uint32_t>(in);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw CheckpointError("checkpoint: truncated string");
  return s;
}

}  // namespace

void save_checkpoint(AmautModelF& model, const std::string& path,
                     const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("checkpoint: cannot write " + path);
  out.write(kMagic, sizeof(kMagic) - 1);
  put<std::uint32_t>(out, kVersion);
  put_string(out, model.config().to_text());
  put<std::uint64_t>(out, meta.planned_frames ? meta.planned_frames
                                              : model.planned_frames());
  put<std::uint64_t>(out, meta.epoch);
  put<std::uint64_t>(out, meta.rng_word);
  auto tensors = model.state_tensors();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (auto& [name, tensor] : tensors) {
    put_string(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor->ndim()));
    for (auto e : tensor->shape()) put<std::uint64_t>(out, e);
    out.write(reinterpret_cast<const char*>(tensor->data()),
              static_cast<std::streamsize>(tensor->numel() * sizeof(float)));
  }
  if (!out) throw CheckpointError("checkpoint: write failure on " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path);
  char magic[sizeof(kMagic) - 1];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw CheckpointError("checkpoint: bad magic in " + path);
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  const ModelConfig cfg = ModelConfig::from_text(get_string(in));

  LoadedCheckpoint loaded;
  loaded.meta.planned_frames = get<std::uint64_t>(in);
  loaded.meta.epoch = get<std::uint64_t>(in);
  loaded.meta.rng_word = get<std::uint64_t>(in);
  loaded.model = std::make_unique<AmautModelF>(cfg, loaded.meta.planned_frames, 0);

  std::map<std::string, Tensorf*> by_name;
  for (auto& [name, tensor] : loaded.model->state_tensors()) by_name[name] = tensor;

  const auto count = get<std::uint32_t>(in);
  if (count != by_name.size())
    throw CheckpointError("checkpoint: tensor count mismatch");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = get_string(in);
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw CheckpointError("checkpoint: unknown tensor '" + name + "'");
    const auto ndim = get<std::uint32_t>(in);
    std::vector<std::size_t> shape(ndim);
    for (auto& e : shape) e = static_cast<std::size_t>(get<std::uint64_t>(in));
    if (shape != it->second->shape())
      throw CheckpointError("checkpoint: shape mismatch for '" + name + "'");
    in.read(reinterpret_cast<char*>(it->second->data()),
            static_cast<std::streamsize>(it->second->numel() * sizeof(float)));
    if (!in) throw CheckpointError("checkpoint: truncated tensor '" + name + "'");
  }
  return loaded;
}

}  // namespace amaut
