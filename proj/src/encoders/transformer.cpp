#include "ceia/encoders/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

#include "ceia/error.hpp"
#include "ceia/gradnet/ops.hpp"

namespace ceia::encoders {

namespace g = gradnet;

namespace {

Tensor copy_leaf(const Tensor& t) {
  auto c = t.detach();
  c.set_requires_grad(t.requires_grad());
  return c;
}

Tensor normal_tensor(g::Shape shape, double sd, Rng& rng) {
  std::normal_distribution<double> n(0.0, sd);
  std::vector<double> v(g::numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// [B, T, H*dh] -> [B*H, T, dh]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t b = x.dim(0), t = x.dim(1), e = x.dim(2), dh = e / heads;
  auto r = g::reshape(x, {b, t, heads, dh});
  return g::reshape(g::permute(r, {0, 2, 1, 3}), {b * heads, t, dh});
}

// [B*H, T, dh] -> [B, T, H*dh]
Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  const std::size_t t = x.dim(1), dh = x.dim(2);
  auto r = g::reshape(x, {batch, heads, t, dh});
  return g::reshape(g::permute(r, {0, 2, 1, 3}), {batch, t, heads * dh});
}

void save_linear(Checkpoint& ckpt, const std::string& name, const LoraLinear& l) {
  if (l.adapted()) ckpt.put(name + ".lora_alpha", {1}, {l.alpha()});
}

void load_linear(const Checkpoint& ckpt, const std::string& name, LoraLinear& l) {
  const bool has_adapter = ckpt.has(name + ".lora_A");
  if (has_adapter) {
    const auto& a = ckpt.get(name + ".lora_A");
    const auto& b = ckpt.get(name + ".lora_B");
    if (!l.adapted() || l.lora_a().shape() != a.shape || l.lora_b().shape() != b.shape)
      l.set_adapter(Tensor::from(a.shape, a.data, true), Tensor::from(b.shape, b.data, true),
                    ckpt.scalar(name + ".lora_alpha"));
    else
      l.set_adapter(l.lora_a(), l.lora_b(), ckpt.scalar(name + ".lora_alpha"));
    Tensor la = l.lora_a(), lb = l.lora_b();
    ckpt.assign(name + ".lora_A", la);
    ckpt.assign(name + ".lora_B", lb);
  } else {
    CEIA_REQUIRE(!l.adapted(), "checkpoint has no adapter for adapted layer " + name);
  }
  Tensor w = l.weight(), b = l.bias();
  ckpt.assign(name + ".weight", w);
  ckpt.assign(name + ".bias", b);
}

void load_ln(const Checkpoint& ckpt, const std::string& name, LayerNormParams& ln) {
  ckpt.assign(name + ".gamma", ln.gamma);
  ckpt.assign(name + ".beta", ln.beta);
}

std::vector<TransformerBlock> make_blocks(std::size_t depth, std::size_t dim, std::size_t heads,
                                          std::size_t mlp_dim, Rng& rng) {
  std::vector<TransformerBlock> blocks;
  for (std::size_t i = 0; i < depth; ++i)
    blocks.push_back(TransformerBlock::init(dim, heads, mlp_dim, rng));
  return blocks;
}

void save_blocks(Checkpoint& ckpt, const std::string& prefix,
                 const std::vector<TransformerBlock>& blocks) {
  for (std::size_t i = 0; i < blocks.size(); ++i)
    for (const auto& n : adaptable_linears())
      save_linear(ckpt, prefix + "blocks." + std::to_string(i) + "." + n, blocks[i].linear(n));
}

void load_blocks(const Checkpoint& ckpt, const std::string& prefix,
                 std::vector<TransformerBlock>& blocks) {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string base = prefix + "blocks." + std::to_string(i) + ".";
    load_ln(ckpt, base + "ln1", blocks[i].ln1);
    load_ln(ckpt, base + "ln2", blocks[i].ln2);
    for (const auto& n : adaptable_linears()) load_linear(ckpt, base + n, blocks[i].linear(n));
  }
}

}  // namespace

// ---------------------------------------------------------------------------

LayerNormParams LayerNormParams::init(std::size_t dim) {
  return {Tensor::full({dim}, 1.0, true), Tensor::zeros({dim}, true)};
}

Tensor LayerNormParams::forward(const Tensor& x) const { return g::layer_norm(x, gamma, beta); }

LayerNormParams LayerNormParams::clone() const { return {copy_leaf(gamma), copy_leaf(beta)}; }

void LayerNormParams::set_trainable(bool trainable) {
  gamma.set_requires_grad(trainable);
  beta.set_requires_grad(trainable);
}

void LayerNormParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

const std::vector<std::string>& adaptable_linears() {
  static const std::vector<std::string> names{"q", "k", "v", "o", "fc1", "fc2"};
  return names;
}

TransformerBlock TransformerBlock::init(std::size_t dim, std::size_t heads, std::size_t mlp_dim,
                                        Rng& rng) {
  TransformerBlock b;
  b.heads = heads;
  b.ln1 = LayerNormParams::init(dim);
  b.q = LoraLinear::init(dim, dim, rng);
  b.k = LoraLinear::init(dim, dim, rng);
  b.v = LoraLinear::init(dim, dim, rng);
  b.o = LoraLinear::init(dim, dim, rng);
  b.ln2 = LayerNormParams::init(dim);
  b.fc1 = LoraLinear::init(dim, mlp_dim, rng);
  b.fc2 = LoraLinear::init(mlp_dim, dim, rng);
  return b;
}

Tensor TransformerBlock::forward(const Tensor& x) const {
  CEIA_REQUIRE(x.rank() == 3, "transformer block expects [B, T, E]");
  const std::size_t batch = x.dim(0), dim = x.dim(2);
  const std::size_t dh = dim / heads;
  Tensor h = ln1.forward(x);
  Tensor qh = split_heads(q.forward(h), heads);
  Tensor kh = split_heads(k.forward(h), heads);
  Tensor vh = split_heads(v.forward(h), heads);
  Tensor att = g::softmax(g::scale(g::bmm(qh, kh, true), 1.0 / std::sqrt(static_cast<double>(dh))));
  Tensor ctx = merge_heads(g::bmm(att, vh), batch, heads);
  Tensor x1 = g::add(x, o.forward(ctx));
  Tensor m = fc2.forward(g::gelu(fc1.forward(ln2.forward(x1))));
  return g::add(x1, m);
}

TransformerBlock TransformerBlock::clone() const {
  TransformerBlock b;
  b.heads = heads;
  b.ln1 = ln1.clone();
  b.ln2 = ln2.clone();
  for (const auto& n : adaptable_linears()) b.linear(n) = linear(n).clone();
  return b;
}

LoraLinear& TransformerBlock::linear(const std::string& name) {
  return const_cast<LoraLinear&>(std::as_const(*this).linear(name));
}

const LoraLinear& TransformerBlock::linear(const std::string& name) const {
  if (name == "q") return q;
  if (name == "k") return k;
  if (name == "v") return v;
  if (name == "o") return o;
  if (name == "fc1") return fc1;
  if (name == "fc2") return fc2;
  throw ValidationError("no linear layer named '" + name +
                        "' in transformer block (expected q, k, v, o, fc1, fc2)");
}

void TransformerBlock::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  ln1.collect(prefix + ".ln1", out);
  for (const auto& n : adaptable_linears()) linear(n).collect(prefix + "." + n, out);
  ln2.collect(prefix + ".ln2", out);
}

// ---------------------------------------------------------------------------

void VitConfig::validate() const {
  CEIA_REQUIRE(patch_size > 0 && image_size > 0 && image_size % patch_size == 0,
               "vit: image_size must be divisible by patch_size");
  CEIA_REQUIRE(heads > 0 && embed_dim % heads == 0, "vit: embed_dim must be divisible by heads");
  CEIA_REQUIRE(depth > 0 && output_dim > 0 && mlp_ratio > 0, "vit: zero-sized dimension");
}

VisionTransformer::VisionTransformer(const VitConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t e = config_.embed_dim;
  const std::size_t patch_dim = config_.patch_size * config_.patch_size * 3;
  patch_embed_ = LoraLinear::init(patch_dim, e, rng);
  cls_token_ = normal_tensor({1, e}, 0.02, rng);
  pos_embed_ = normal_tensor({config_.num_patches() + 1, e}, 0.02, rng);
  blocks_ = make_blocks(config_.depth, e, config_.heads, e * config_.mlp_ratio, rng);
  ln_final_ = LayerNormParams::init(e);
  proj_ = LoraLinear::init(e, config_.output_dim, rng);
}

Tensor VisionTransformer::encode(const Tensor& pixels) const {
  const std::size_t s = config_.image_size, p = config_.patch_size, n = s / p;
  CEIA_REQUIRE(pixels.rank() == 4 && pixels.dim(1) == s && pixels.dim(2) == s && pixels.dim(3) == 3,
               "vit: input " + g::shape_str(pixels.shape()) + " does not match [B," +
                   std::to_string(s) + "," + std::to_string(s) + ",3]");
  const std::size_t b = pixels.dim(0);
  Tensor patches = g::reshape(
      g::permute(g::reshape(pixels, {b, n, p, n, p, 3}), {0, 1, 3, 2, 4, 5}),
      {b, n * n, p * p * 3});
  Tensor tokens = patch_embed_.forward(patches);
  std::vector<int> zeros(b, 0);
  Tensor cls = g::embedding_lookup(cls_token_, zeros, {b, 1});
  Tensor x = g::add(g::concat({cls, tokens}, 1), pos_embed_);
  for (const auto& blk : blocks_) x = blk.forward(x);
  x = ln_final_.forward(x);
  Tensor pooled = config_.pool == Pool::Cls
                      ? g::reshape(g::slice(x, 1, 0, 1), {b, config_.embed_dim})
                      : g::mean_tokens(g::slice(x, 1, 1, x.dim(1)));
  return g::l2_normalize(proj_.forward(pooled));
}

Tensor VisionTransformer::encode(std::span<const std::vector<double>* const> images) const {
  return encode(stack_images(images, config_.image_size));
}

std::vector<NamedTensor> VisionTransformer::parameters() const {
  std::vector<NamedTensor> out;
  patch_embed_.collect("patch_embed", out);
  out.push_back({"cls_token", cls_token_});
  out.push_back({"pos_embed", pos_embed_});
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].collect("blocks." + std::to_string(i), out);
  ln_final_.collect("ln_final", out);
  proj_.collect("proj", out);
  return out;
}

std::vector<NamedTensor> VisionTransformer::trainable_parameters() const {
  auto all = parameters();
  std::erase_if(all, [](const NamedTensor& p) { return !p.tensor.requires_grad(); });
  return all;
}

std::size_t VisionTransformer::adapter_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters())
    if (p.name.ends_with(".lora_A") || p.name.ends_with(".lora_B")) n += p.tensor.size();
  return n;
}

VisionTransformer VisionTransformer::clone() const {
  VisionTransformer c;
  c.config_ = config_;
  c.patch_embed_ = patch_embed_.clone();
  c.cls_token_ = copy_leaf(cls_token_);
  c.pos_embed_ = copy_leaf(pos_embed_);
  for (const auto& b : blocks_) c.blocks_.push_back(b.clone());
  c.ln_final_ = ln_final_.clone();
  c.proj_ = proj_.clone();
  return c;
}

void VisionTransformer::set_trainable(bool trainable) {
  for (auto& p : parameters()) p.tensor.set_requires_grad(trainable);
}

void VisionTransformer::attach_lora(const LoraConfig& lora, Rng& rng) {
  for (const auto& t : lora.targets)
    CEIA_REQUIRE(std::find(adaptable_linears().begin(), adaptable_linears().end(), t) !=
                     adaptable_linears().end(),
                 "LoRA target '" + t + "' does not name a weight (expected q, k, v, o, fc1, fc2)");
  for (auto& b : blocks_)
    for (const auto& t : lora.targets) b.linear(t).attach_adapter(lora.rank, lora.alpha, rng);
}

void VisionTransformer::set_lora_enabled(bool on) {
  for (auto& b : blocks_)
    for (const auto& n : adaptable_linears()) b.linear(n).set_enabled(on);
}

VisionTransformer VisionTransformer::merged() const {
  VisionTransformer m = clone();
  for (auto& b : m.blocks_)
    for (const auto& n : adaptable_linears()) b.linear(n) = b.linear(n).merged();
  return m;
}

void VisionTransformer::save_to(Checkpoint& ckpt, const std::string& prefix) const {
  for (const auto& p : parameters()) ckpt.put(prefix + p.name, p.tensor);
  save_blocks(ckpt, prefix, blocks_);
}

void VisionTransformer::load_from(const Checkpoint& ckpt, const std::string& prefix) {
  load_linear(ckpt, prefix + "patch_embed", patch_embed_);
  ckpt.assign(prefix + "cls_token", cls_token_);
  ckpt.assign(prefix + "pos_embed", pos_embed_);
  load_blocks(ckpt, prefix, blocks_);
  load_ln(ckpt, prefix + "ln_final", ln_final_);
  load_linear(ckpt, prefix + "proj", proj_);
}

// ---------------------------------------------------------------------------

void TextEncoderConfig::validate() const {
  CEIA_REQUIRE(vocab_size > 0, "text encoder: empty vocabulary");
  CEIA_REQUIRE(heads > 0 && embed_dim % heads == 0,
               "text encoder: embed_dim must be divisible by heads");
  CEIA_REQUIRE(depth > 0 && max_tokens > 0 && output_dim > 0 && mlp_ratio > 0,
               "text encoder: zero-sized dimension");
}

TextTransformer::TextTransformer(const TextEncoderConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t e = config_.embed_dim;
  token_embed_ = normal_tensor({config_.vocab_size, e}, 0.02, rng);
  pos_embed_ = normal_tensor({config_.max_tokens, e}, 0.01, rng);
  blocks_ = make_blocks(config_.depth, e, config_.heads, e * config_.mlp_ratio, rng);
  ln_final_ = LayerNormParams::init(e);
  proj_ = LoraLinear::init(e, config_.output_dim, rng);
}

Tensor TextTransformer::encode_same_length(const std::vector<const std::vector<int>*>& group) const {
  const std::size_t n = group.size(), len = group.front()->size();
  std::vector<int> ids;
  ids.reserve(n * len);
  for (const auto* c : group) ids.insert(ids.end(), c->begin(), c->end());
  Tensor x = g::add(g::embedding_lookup(token_embed_, ids, {n, len}),
                    g::slice(pos_embed_, 0, 0, len));
  for (const auto& blk : blocks_) x = blk.forward(x);
  Tensor pooled = g::mean_tokens(ln_final_.forward(x));
  return g::l2_normalize(proj_.forward(pooled));
}

Tensor TextTransformer::encode(std::span<const std::vector<int>> captions) const {
  CEIA_REQUIRE(!captions.empty(), "text encoder: no captions");
  std::map<std::size_t, std::vector<std::size_t>> by_len;
  for (std::size_t i = 0; i < captions.size(); ++i) {
    const auto& c = captions[i];
    CEIA_REQUIRE(!c.empty(), "text encoder: empty caption");
    CEIA_REQUIRE(c.size() <= config_.max_tokens,
                 "text encoder: caption has " + std::to_string(c.size()) + " tokens, limit " +
                     std::to_string(config_.max_tokens));
    for (int t : c)
      CEIA_REQUIRE(t >= 0 && static_cast<std::size_t>(t) < config_.vocab_size,
                   "text encoder: unknown token id " + std::to_string(t));
    by_len[c.size()].push_back(i);
  }
  std::vector<Tensor> parts;
  std::vector<int> position(captions.size());
  int row = 0;
  for (const auto& [len, idx] : by_len) {
    std::vector<const std::vector<int>*> group;
    for (auto i : idx) {
      group.push_back(&captions[i]);
      position[i] = row++;
    }
    parts.push_back(encode_same_length(group));
  }
  Tensor all = parts.size() == 1 ? parts[0] : g::concat(parts, 0);
  bool identity = true;
  for (std::size_t i = 0; i < position.size(); ++i) identity &= position[i] == static_cast<int>(i);
  if (identity) return all;
  return g::embedding_lookup(all, position, {captions.size()});
}

std::vector<NamedTensor> TextTransformer::parameters() const {
  std::vector<NamedTensor> out;
  out.push_back({"token_embed", token_embed_});
  out.push_back({"pos_embed", pos_embed_});
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].collect("blocks." + std::to_string(i), out);
  ln_final_.collect("ln_final", out);
  proj_.collect("proj", out);
  return out;
}

TextTransformer TextTransformer::clone() const {
  TextTransformer c;
  c.config_ = config_;
  c.token_embed_ = copy_leaf(token_embed_);
  c.pos_embed_ = copy_leaf(pos_embed_);
  for (const auto& b : blocks_) c.blocks_.push_back(b.clone());
  c.ln_final_ = ln_final_.clone();
  c.proj_ = proj_.clone();
  return c;
}

void TextTransformer::set_trainable(bool trainable) {
  for (auto& p : parameters()) p.tensor.set_requires_grad(trainable);
}

void TextTransformer::save_to(Checkpoint& ckpt, const std::string& prefix) const {
  for (const auto& p : parameters()) ckpt.put(prefix + p.name, p.tensor);
}

void TextTransformer::load_from(const Checkpoint& ckpt, const std::string& prefix) {
  ckpt.assign(prefix + "token_embed", token_embed_);
  ckpt.assign(prefix + "pos_embed", pos_embed_);
  load_blocks(ckpt, prefix, blocks_);
  load_ln(ckpt, prefix + "ln_final", ln_final_);
  load_linear(ckpt, prefix + "proj", proj_);
}

// ---------------------------------------------------------------------------

VisionTransformer init_event_encoder_from_image(const VisionTransformer& image_encoder,
                                                const LoraConfig& lora, Rng& rng) {
  VisionTransformer ev = image_encoder.clone();
  ev.set_trainable(false);
  ev.attach_lora(lora, rng);
  return ev;
}

std::size_t expected_adapter_count(const VitConfig& config, const LoraConfig& lora) {
  const std::size_t e = config.embed_dim, m = e * config.mlp_ratio;
  const auto r = static_cast<std::size_t>(lora.rank);
  std::size_t per_block = 0;
  for (const auto& t : lora.targets) {
    if (t == "fc1" || t == "fc2")
      per_block += r * (e + m);
    else
      per_block += r * (e + e);
  }
  return config.depth * per_block;
}

void put_config(Checkpoint& ckpt, const std::string& prefix, const VitConfig& c) {
  ckpt.put(prefix + "config", {8},
           {double(c.image_size), double(c.patch_size), double(c.embed_dim), double(c.depth),
            double(c.heads), double(c.mlp_ratio), double(c.output_dim),
            c.pool == Pool::Cls ? 0.0 : 1.0});
}

void put_config(Checkpoint& ckpt, const std::string& prefix, const TextEncoderConfig& c) {
  ckpt.put(prefix + "config", {7},
           {double(c.vocab_size), double(c.embed_dim), double(c.depth), double(c.heads),
            double(c.mlp_ratio), double(c.max_tokens), double(c.output_dim)});
}

namespace {
const std::vector<double>& config_array(const Checkpoint& ckpt, const std::string& name,
                                        std::size_t n) {
  const auto& a = ckpt.get(name);
  CEIA_REQUIRE(a.data.size() == n, "checkpoint: malformed " + name);
  for (double v : a.data)
    CEIA_REQUIRE(v >= 0 && v == std::floor(v) && v < 1e9, "checkpoint: malformed " + name);
  return a.data;
}
}  // namespace

VitConfig get_vit_config(const Checkpoint& ckpt, const std::string& prefix) {
  const auto& v = config_array(ckpt, prefix + "config", 8);
  auto z = [&](int i) { return static_cast<std::size_t>(v[i]); };
  VitConfig c{z(0), z(1), z(2), z(3), z(4), z(5), z(6), v[7] == 0 ? Pool::Cls : Pool::Mean};
  c.validate();
  return c;
}

TextEncoderConfig get_text_config(const Checkpoint& ckpt, const std::string& prefix) {
  const auto& v = config_array(ckpt, prefix + "config", 7);
  auto z = [&](int i) { return static_cast<std::size_t>(v[i]); };
  TextEncoderConfig c{z(0), z(1), z(2), z(3), z(4), z(5), z(6)};
  c.validate();
  return c;
}

Tensor stack_images(std::span<const std::vector<double>* const> images, std::size_t size) {
  CEIA_REQUIRE(!images.empty(), "stack_images: empty batch");
  const std::size_t per = size * size * 3;
  std::vector<double> buf;
  buf.reserve(images.size() * per);
  for (const auto* img : images) {
    CEIA_REQUIRE(img->size() == per, "stack_images: image has " + std::to_string(img->size()) +
                                         " values, expected " + std::to_string(per));
    buf.insert(buf.end(), img->begin(), img->end());
  }
  return Tensor::from({images.size(), size, size, 3}, std::move(buf));
}

}  // namespace ceia::encoders
