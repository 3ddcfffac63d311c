#pragma once

#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "amaut/frontend.hpp"
#include "amaut/ops.hpp"
#include "amaut/rng.hpp"
#include "amaut/tensor.hpp"

namespace amaut {

class PlanError : public std::runtime_error {
 public:
  explicit PlanError(const std::string& what) : std::runtime_error(what) {}
};

class ConfigurationError : public std::runtime_error {
 public:
  explicit ConfigurationError(const std::string& what) : std::runtime_error(what) {}
};

struct ConvStage {
  std::size_t blocks = 1;
  std::size_t stride = 1;  // applied by the first block's conv7
};

// Depth plan for the 1D CNN: tail (conv14 + optional pool), stride-2
// bottleneck stages until the residual length falls inside
// [target_K, 2*target_K), a stride-1 body stage, then the conv1 head to D.
struct CnnPlan {
  std::size_t tail_kernel = 14;
  std::size_t tail_stride = 2;
  std::size_t tail_pad = 0;
  bool tail_pool = true;
  std::vector<ConvStage> stages;

  std::size_t output_length(std::size_t t) const;
  // Total convolution layers: tail + 3 per bottleneck + head.
  std::size_t conv_layer_count() const;

  std::string to_text() const;
  static CnnPlan from_text(const std::string& text);
};

enum class ClassifierVariant { kLong, kShort };

struct ModelConfig {
  std::size_t embed_dim = 768;
  std::size_t n_mels = 128;  // CNN input channels F
  std::size_t mid_channels = 64;
  std::size_t reduce_channels = 32;
  std::size_t body_blocks = 2;  // bottlenecks per stage
  std::size_t n_transformer_blocks = 4;
  std::size_t n_heads = 8;
  std::size_t mlp_ratio = 4;
  double token_dropout = 0.15;
  double attn_dropout = 0.0;
  std::size_t n_classes = 2;
  ClassifierVariant classifier = ClassifierVariant::kShort;
  std::size_t target_K = 12;

  void validate() const {
    if (embed_dim % n_heads != 0)
      throw ConfigurationError("model: embed_dim not divisible by n_heads");
    if (attn_dropout != 0.0)
      throw ConfigurationError("model: attention/MLP dropout must stay at 0");
    if (token_dropout < 0.0 || token_dropout >= 1.0)
      throw ConfigurationError("model: token dropout outside [0, 1)");
    if (n_classes < 2) throw ConfigurationError("model: need at least 2 classes");
  }

  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
};

// Emits a plan whose residual length K satisfies target_K <= K < 2*target_K.
// The tail runs at stride 2 with pooling when the result stays above
// target_K, at stride 2 without pooling as the middle ground, and as a
// length-preserving same-pad conv when the input is already short.
CnnPlan plan_cnn(std::size_t input_frames, std::size_t target_k,
                 std::size_t body_blocks = 2);

// ---------------------------------------------------------------------------

template <typename T>
class BottleneckBlock {
 public:
  BottleneckBlock(std::size_t mid, std::size_t reduce, std::size_t stride, RngStream& rng,
                  const std::string& name)
      : stride_(stride),
        c1_(mid, reduce, 1, 1, 0, rng, name + ".c1"),
        c2_(reduce, reduce, 7, stride, 3, rng, name + ".c2"),
        c3_(reduce, mid, 1, 1, 0, rng, name + ".c3"),
        bn1_(reduce, name + ".bn1"),
        bn2_(reduce, name + ".bn2"),
        bn3_(mid, name + ".bn3") {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    x_ = x;
    p1_ = bn1_.forward(c1_.forward(x), mode);
    p2_ = bn2_.forward(c2_.forward(relu(p1_)), mode);
    z_ = bn3_.forward(c3_.forward(relu(p2_)), mode);
    if (stride_ == 1)
      for (std::size_t i = 0; i < z_.numel(); ++i) z_[i] += x[i];
    return relu(z_);
  }

  Tensor<T> backward(const Tensor<T>& dout) {
    Tensor<T> dz = relu_backward(z_, dout);
    Tensor<T> d = c3_.backward(bn3_.backward(dz));
    d = relu_backward(p2_, d);
    d = c2_.backward(bn2_.backward(d));
    d = relu_backward(p1_, d);
    Tensor<T> dx = c1_.backward(bn1_.backward(d));
    if (stride_ == 1)
      for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += dz[i];
    return dx;
  }

  ParamList<T> params() {
    ParamList<T> out;
    for (auto& p : c1_.params()) out.push_back(p);
    for (auto& p : bn1_.params()) out.push_back(p);
    for (auto& p : c2_.params()) out.push_back(p);
    for (auto& p : bn2_.params()) out.push_back(p);
    for (auto& p : c3_.params()) out.push_back(p);
    for (auto& p : bn3_.params()) out.push_back(p);
    return out;
  }

  std::vector<std::pair<std::string, Tensor<T>*>> running_stats() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (auto* bn : {&bn1_, &bn2_, &bn3_}) {
      out.emplace_back(bn->name() + ".rmean", &bn->running_mean());
      out.emplace_back(bn->name() + ".rvar", &bn->running_var());
    }
    return out;
  }

 private:
  std::size_t stride_;
  Conv1d<T> c1_, c2_, c3_;
  BatchNorm1d<T> bn1_, bn2_, bn3_;
  Tensor<T> x_, p1_, p2_, z_;
};

template <typename T>
class TransformerBlock {
 public:
  TransformerBlock(std::size_t dim, std::size_t heads, std::size_t mlp_ratio,
                   RngStream& rng, const std::string& name)
      : ln1_(dim, name + ".ln1"),
        ln2_(dim, name + ".ln2"),
        attn_(dim, heads, rng, name + ".attn"),
        fc1_(dim, dim * mlp_ratio, rng, name + ".fc1"),
        fc2_(dim * mlp_ratio, dim, rng, name + ".fc2") {}

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> a = attn_.forward(ln1_.forward(x));
    Tensor<T> y = x;
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += a[i];
    h1_ = fc1_.forward(ln2_.forward(y));
    Tensor<T> m = fc2_.forward(gelu(h1_));
    Tensor<T> out = y;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += m[i];
    return out;
  }

  Tensor<T> backward(const Tensor<T>& dout) {
    Tensor<T> d = fc2_.backward(dout);
    d = gelu_backward(h1_, d);
    Tensor<T> dy = ln2_.backward(fc1_.backward(d));
    for (std::size_t i = 0; i < dy.numel(); ++i) dy[i] += dout[i];
    Tensor<T> dx = ln1_.backward(attn_.backward(dy));
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += dy[i];
    return dx;
  }

  const Tensor<T>& last_attention() const { return attn_.attention(); }

  ParamList<T> params() {
    ParamList<T> out;
    for (auto& p : ln1_.params()) out.push_back(p);
    for (auto& p : attn_.params()) out.push_back(p);
    for (auto& p : ln2_.params()) out.push_back(p);
    for (auto& p : fc1_.params()) out.push_back(p);
    for (auto& p : fc2_.params()) out.push_back(p);
    return out;
  }

 private:
  LayerNorm<T> ln1_, ln2_;
  MultiHeadAttention<T> attn_;
  Linear<T> fc1_, fc2_;
  Tensor<T> h1_;
};

// The full network: 1D CNN bottleneck stack, CLS/TAL vertical embedding,
// full-attention encoder, duration-dependent classifier head.
template <typename T>
class AmautModel {
 public:
  AmautModel(ModelConfig cfg, std::size_t input_frames, std::uint64_t init_seed)
      : cfg_(std::move(cfg)), planned_frames_(input_frames) {
    cfg_.validate();
    plan_ = plan_cnn(input_frames, cfg_.target_K, cfg_.body_blocks);
    k_ = plan_.output_length(input_frames);
    RngStream rng = RngStream::derive(init_seed, 0x414d4155);  // model init stream

    tail_conv_ = std::make_unique<Conv1d<T>>(cfg_.n_mels, cfg_.mid_channels,
                                             plan_.tail_kernel, plan_.tail_stride,
                                             plan_.tail_pad, rng, "cnn.tail");
    tail_bn_ = std::make_unique<BatchNorm1d<T>>(cfg_.mid_channels, "cnn.tail.bn");
    pool_ = MaxPool1d<T>(2, 2);
    std::size_t idx = 0;
    for (const auto& stage : plan_.stages)
      for (std::size_t b = 0; b < stage.blocks; ++b)
        blocks_.push_back(std::make_unique<BottleneckBlock<T>>(
            cfg_.mid_channels, cfg_.reduce_channels, b == 0 ? stage.stride : 1, rng,
            "cnn.block" + std::to_string(idx++)));
    head_conv_ = std::make_unique<Conv1d<T>>(cfg_.mid_channels, cfg_.embed_dim, 1, 1, 0,
                                             rng, "cnn.head");

    cls_ = Tensor<T>({cfg_.embed_dim});
    tal_ = Tensor<T>({cfg_.embed_dim});
    pos_ = Tensor<T>({k_ + 2, cfg_.embed_dim});
    init::normal(cls_, 0.02, rng);
    init::normal(tal_, 0.02, rng);
    init::normal(pos_, 0.02, rng);
    dcls_ = Tensor<T>({cfg_.embed_dim});
    dtal_ = Tensor<T>({cfg_.embed_dim});
    dpos_ = Tensor<T>({k_ + 2, cfg_.embed_dim});
    token_drop_ = Dropout<T>(cfg_.token_dropout);

    for (std::size_t i = 0; i < cfg_.n_transformer_blocks; ++i)
      encoder_.push_back(std::make_unique<TransformerBlock<T>>(
          cfg_.embed_dim, cfg_.n_heads, cfg_.mlp_ratio, rng,
          "enc" + std::to_string(i)));

    if (cfg_.classifier == ClassifierVariant::kLong) {
      long_conv_ = std::make_unique<Conv1d<T>>(cfg_.embed_dim, cfg_.embed_dim, 2, 1, 0,
                                               rng, "clf.conv2");
      long_fc_ = std::make_unique<Linear<T>>(cfg_.embed_dim, cfg_.n_classes, rng, "clf.fc");
    } else {
      const std::size_t h1 = cfg_.embed_dim;
      const std::size_t h2 = std::max<std::size_t>(cfg_.embed_dim / 2, cfg_.n_classes);
      short_fc1_ = std::make_unique<Linear<T>>(cfg_.embed_dim, h1, rng, "clf.fc1");
      short_bn1_ = std::make_unique<BatchNorm1d<T>>(h1, "clf.bn1");
      short_fc2_ = std::make_unique<Linear<T>>(h1, h2, rng, "clf.fc2");
      short_bn2_ = std::make_unique<BatchNorm1d<T>>(h2, "clf.bn2");
      short_fc3_ = std::make_unique<Linear<T>>(h2, cfg_.n_classes, rng, "clf.fc3");
    }
  }

  const ModelConfig& config() const { return cfg_; }
  const CnnPlan& plan() const { return plan_; }
  std::size_t planned_frames() const { return planned_frames_; }
  std::size_t feature_length() const { return k_; }  // K

  // --- CNN ---------------------------------------------------------------
  // tokens: (B, F, T) -> features (B, D, K)
  Tensor<T> cnn_forward(const Tensor<T>& tokens, Mode mode) {
    if (tokens.ndim() != 3 || tokens.extent(1) != cfg_.n_mels)
      throw ShapeError("cnn: input " + tokens.shape_str() + " does not carry F=" +
                       std::to_string(cfg_.n_mels) + " channels");
    tail_pre_ = tail_bn_->forward(tail_conv_->forward(tokens), mode);
    Tensor<T> x = relu(tail_pre_);
    if (plan_.tail_pool) x = pool_.forward(x);
    for (auto& blk : blocks_) x = blk->forward(x, mode);
    return head_conv_->forward(x);
  }

  Tensor<T> cnn_backward(const Tensor<T>& dfeat) {
    Tensor<T> d = head_conv_->backward(dfeat);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) d = (*it)->backward(d);
    if (plan_.tail_pool) d = pool_.backward(d);
    d = relu_backward(tail_pre_, d);
    return tail_conv_->backward(tail_bn_->backward(d));
  }

  // --- Vertical embedding -------------------------------------------------
  // features: (B, D, K) -> sequence (B, K+2, D); CLS first, TAL last.
  Tensor<T> vertical_embed(const Tensor<T>& feat, Mode mode, RngStream* rng) {
    const std::size_t b = feat.extent(0), k = feat.extent(2);
    if (k != k_)
      throw ConfigurationError("embed: feature length " + std::to_string(k) +
                               " exceeds positional table capacity " + std::to_string(k_));
    const std::size_t d = cfg_.embed_dim;
    Tensor<T> seq({b, k + 2, d});
    for (std::size_t bi = 0; bi < b; ++bi) {
      for (std::size_t c = 0; c < d; ++c) {
        seq.at(bi, 0, c) = cls_[c] + pos_.at(0, c);
        seq.at(bi, k + 1, c) = tal_[c] + pos_.at(k + 1, c);
      }
      for (std::size_t j = 0; j < k; ++j)
        for (std::size_t c = 0; c < d; ++c)
          seq.at(bi, j + 1, c) = feat.at(bi, c, j) + pos_.at(j + 1, c);
    }
    if (mode == Mode::kTrain && cfg_.token_dropout > 0.0) {
      if (!rng) throw std::invalid_argument("embed: train-mode dropout needs an rng");
      return token_drop_.forward(seq, mode, *rng);
    }
    token_drop_ = Dropout<T>(cfg_.token_dropout);  // clear any stale mask
    return seq;
  }

  Tensor<T> embed_backward(const Tensor<T>& dseq_in) {
    Tensor<T> dseq = token_drop_.backward(dseq_in);
    const std::size_t b = dseq.extent(0), s = dseq.extent(1), d = cfg_.embed_dim;
    const std::size_t k = s - 2;
    Tensor<T> dfeat({b, d, k});
    for (std::size_t bi = 0; bi < b; ++bi) {
      for (std::size_t c = 0; c < d; ++c) {
        dcls_[c] += dseq.at(bi, 0, c);
        dtal_[c] += dseq.at(bi, k + 1, c);
      }
      for (std::size_t j = 0; j < s; ++j)
        for (std::size_t c = 0; c < d; ++c) dpos_.at(j, c) += dseq.at(bi, j, c);
      for (std::size_t j = 0; j < k; ++j)
        for (std::size_t c = 0; c < d; ++c) dfeat.at(bi, c, j) = dseq.at(bi, j + 1, c);
    }
    return dfeat;
  }

  // --- Encoder -------------------------------------------------------------
  Tensor<T> encode(const Tensor<T>& seq) {
    Tensor<T> x = seq;
    for (auto& blk : encoder_) x = blk->forward(x);
    return x;
  }

  Tensor<T> encode_backward(const Tensor<T>& dout) {
    Tensor<T> d = dout;
    for (auto it = encoder_.rbegin(); it != encoder_.rend(); ++it) d = (*it)->backward(d);
    return d;
  }

  // --- Classifiers ---------------------------------------------------------
  Tensor<T> classify_long(const Tensor<T>& seq) {
    if (cfg_.classifier != ClassifierVariant::kLong)
      throw ConfigurationError("classify_long: model configured with the short head");
    const std::size_t b = seq.extent(0), s = seq.extent(1), d = cfg_.embed_dim;
    long_in_shape_ = seq.shape();
    // CLS and TAL as a 2-step temporal axis: (B, D, 2).
    Tensor<T> pair({b, d, 2});
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t c = 0; c < d; ++c) {
        pair.at(bi, c, 0) = seq.at(bi, 0, c);
        pair.at(bi, c, 1) = seq.at(bi, s - 1, c);
      }
    Tensor<T> mixed = long_conv_->forward(pair);  // (B, D, 1)
    return long_fc_->forward(mixed.reshaped({b, d}));
  }

  Tensor<T> classify_long_backward(const Tensor<T>& dlogits) {
    const std::size_t b = long_in_shape_[0], s = long_in_shape_[1], d = cfg_.embed_dim;
    Tensor<T> dmixed = long_fc_->backward(dlogits);
    Tensor<T> dpair = long_conv_->backward(dmixed.reshaped({b, d, std::size_t(1)}));
    Tensor<T> dseq(long_in_shape_);
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t c = 0; c < d; ++c) {
        dseq.at(bi, 0, c) = dpair.at(bi, c, 0);
        dseq.at(bi, s - 1, c) = dpair.at(bi, c, 1);
      }
    return dseq;
  }

  Tensor<T> classify_short(const Tensor<T>& seq, Mode mode) {
    if (cfg_.classifier != ClassifierVariant::kShort)
      throw ConfigurationError("classify_short: model configured with the long head");
    short_in_shape_ = seq.shape();
    Tensor<T> pooled = mean_pool(seq);
    short_p1_ = short_bn1_->forward(short_fc1_->forward(pooled), mode);
    short_p2_ = short_bn2_->forward(short_fc2_->forward(relu(short_p1_)), mode);
    return short_fc3_->forward(relu(short_p2_));
  }

  Tensor<T> classify_short_backward(const Tensor<T>& dlogits) {
    Tensor<T> d = short_fc3_->backward(dlogits);
    d = relu_backward(short_p2_, d);
    d = short_fc2_->backward(short_bn2_->backward(d));
    d = relu_backward(short_p1_, d);
    Tensor<T> dpooled = short_fc1_->backward(short_bn1_->backward(d));
    return mean_pool_backward(short_in_shape_, dpooled);
  }

  // --- Full pass -----------------------------------------------------------
  Tensor<T> forward_tokens(const Tensor<T>& tokens, Mode mode, RngStream* rng = nullptr) {
    Tensor<T> feat = cnn_forward(tokens, mode);
    Tensor<T> seq = encode(vertical_embed(feat, mode, rng));
    return cfg_.classifier == ClassifierVariant::kLong ? classify_long(seq)
                                                       : classify_short(seq, mode);
  }

  // Returns the gradient with respect to the token matrix (rarely needed).
  Tensor<T> backward_tokens(const Tensor<T>& dlogits) {
    Tensor<T> dseq = cfg_.classifier == ClassifierVariant::kLong
                         ? classify_long_backward(dlogits)
                         : classify_short_backward(dlogits);
    Tensor<T> dfeat = embed_backward(encode_backward(dseq));
    return cnn_backward(dfeat);
  }

  ParamList<T> params() {
    ParamList<T> out;
    for (auto& p : tail_conv_->params()) out.push_back(p);
    for (auto& p : tail_bn_->params()) out.push_back(p);
    for (auto& blk : blocks_)
      for (auto& p : blk->params()) out.push_back(p);
    for (auto& p : head_conv_->params()) out.push_back(p);
    out.push_back({"embed.cls", &cls_, &dcls_});
    out.push_back({"embed.tal", &tal_, &dtal_});
    out.push_back({"embed.pos", &pos_, &dpos_});
    for (auto& blk : encoder_)
      for (auto& p : blk->params()) out.push_back(p);
    if (cfg_.classifier == ClassifierVariant::kLong) {
      for (auto& p : long_conv_->params()) out.push_back(p);
      for (auto& p : long_fc_->params()) out.push_back(p);
    } else {
      for (auto& p : short_fc1_->params()) out.push_back(p);
      for (auto& p : short_bn1_->params()) out.push_back(p);
      for (auto& p : short_fc2_->params()) out.push_back(p);
      for (auto& p : short_bn2_->params()) out.push_back(p);
      for (auto& p : short_fc3_->params()) out.push_back(p);
    }
    return out;
  }

  // Norm-affine parameters only (TTDA update_scope = norm_only).
  ParamList<T> norm_params() {
    ParamList<T> out;
    for (auto& p : params()) {
      const auto& n = p.name;
      if (n.find(".bn") != std::string::npos || n.find(".ln") != std::string::npos ||
          n.find("tail.bn") != std::string::npos)
        out.push_back(p);
    }
    return out;
  }

  // Parameters plus batch-norm running statistics; everything a checkpoint
  // must carry to restore eval-mode forwards bit-exactly.
  std::vector<std::pair<std::string, Tensor<T>*>> state_tensors() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (auto& p : params()) out.emplace_back(p.name, p.value);
    out.emplace_back(tail_bn_->name() + ".rmean", &tail_bn_->running_mean());
    out.emplace_back(tail_bn_->name() + ".rvar", &tail_bn_->running_var());
    for (auto& blk : blocks_)
      for (auto& s : blk->running_stats()) out.push_back(s);
    if (cfg_.classifier == ClassifierVariant::kShort) {
      for (auto* bn : {short_bn1_.get(), short_bn2_.get()}) {
        out.emplace_back(bn->name() + ".rmean", &bn->running_mean());
        out.emplace_back(bn->name() + ".rvar", &bn->running_var());
      }
    }
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& p : params()) n += p.value->numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params()) p.grad->fill(T(0));
  }

 private:
  ModelConfig cfg_;
  CnnPlan plan_;
  std::size_t planned_frames_ = 0;
  std::size_t k_ = 0;

  std::unique_ptr<Conv1d<T>> tail_conv_;
  std::unique_ptr<BatchNorm1d<T>> tail_bn_;
  MaxPool1d<T> pool_;
  std::vector<std::unique_ptr<BottleneckBlock<T>>> blocks_;
  std::unique_ptr<Conv1d<T>> head_conv_;

  Tensor<T> cls_, tal_, pos_, dcls_, dtal_, dpos_;
  Dropout<T> token_drop_;
  std::vector<std::unique_ptr<TransformerBlock<T>>> encoder_;

  std::unique_ptr<Conv1d<T>> long_conv_;
  std::unique_ptr<Linear<T>> long_fc_;
  std::unique_ptr<Linear<T>> short_fc1_, short_fc2_, short_fc3_;
  std::unique_ptr<BatchNorm1d<T>> short_bn1_, short_bn2_;

  Tensor<T> tail_pre_, short_p1_, short_p2_;
  std::vector<std::size_t> long_in_shape_, short_in_shape_;
};

using AmautModelF = AmautModel<float>;

// ---------------------------------------------------------------------------
// Checkpoints. Little-endian: magic "AMAUTCKPT", u32 version, length-prefixed
// config text, epoch, rng word, then per-tensor (name, shape, f32 data).

class CheckpointError : public std::runtime_error {
 public:
  explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

struct CheckpointMeta {
  std::size_t planned_frames = 0;
  std::uint64_t epoch = 0;
  std::uint64_t rng_word = 0;
};

void save_checkpoint(AmautModelF& model, const std::string& path,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  std::unique_ptr<AmautModelF> model;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace amaut
