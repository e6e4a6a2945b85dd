#include "model.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"
#include "ops.hpp"
#include "rng.hpp"

namespace trust {

namespace {

std::string block_prefix(std::size_t i) { return "blocks." + std::to_string(i) + "."; }

std::size_t stage_side(const TrustConfig& c, std::size_t stage) { return c.pool_grid << stage; }

// Input channels of each decoder stage conv, including enabled-or-not skips.
std::vector<std::size_t> decoder_inputs(const TrustConfig& c) {
  std::vector<std::size_t> in(c.decoder_channels.size());
  for (std::size_t s = 0; s < in.size(); ++s) {
    in[s] = s == 0 ? c.embed_dim : c.decoder_channels[s - 1];
    for (const auto& skip : c.skips) {
      if (skip.stage == s) in[s] += c.decoder_channels[s];
    }
  }
  return in;
}

Tensor linear(const Tensor& x, const ModelParams& p, const std::string& name) {
  return add_rowwise(matmul(x, p.get(name + ".weight")), p.get(name + ".bias"));
}

Tensor conv_bias(const Tensor& x, const ModelParams& p, const std::string& name, std::size_t padding) {
  return add_channel(conv2d(x, p.get(name + ".weight"), 1, padding), p.get(name + ".bias"));
}

// [T, D] tokens on a g x g grid -> [D, g, g] feature map
Tensor tokens_to_map(const Tensor& tokens, std::size_t grid) {
  return reshape(transpose(tokens), {tokens.dim(1), grid, grid});
}

Tensor require_image(const Tensor& observation, std::size_t side, const char* model) {
  const std::size_t n = observation.size();
  if (n != side * side) {
    throw ContractError(std::string(model) + ": observation has " + std::to_string(n) +
                        " values, configuration expects " + std::to_string(side) + "x" +
                        std::to_string(side));
  }
  return observation.rank() == 2 ? observation : reshape(observation, {side, side});
}

Tensor embed_tokens(const ModelParams& p, const TrustConfig& c, const Tensor& image) {
  const Tensor patches = patchify(image, c.patch_size);
  return add(linear(patches, p, "patch_embed"), p.get("pos_embed"));
}

Tensor attention_block(const ModelParams& p, const TrustConfig& c, std::size_t block,
                       const Tensor& x, ForwardTrace* trace) {
  const std::string pre = block_prefix(block);
  const Tensor q = linear(x, p, pre + "attn.q");
  const Tensor k = linear(x, p, pre + "attn.k");
  const Tensor v = linear(x, p, pre + "attn.v");
  const std::size_t dk = c.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> heads;
  heads.reserve(c.num_heads);
  for (std::size_t h = 0; h < c.num_heads; ++h) {
    const Tensor qh = slice(q, 1, h * dk, dk);
    const Tensor kh = slice(k, 1, h * dk, dk);
    const Tensor vh = slice(v, 1, h * dk, dk);
    const Tensor attn = softmax(scalar_mul(matmul(qh, transpose(kh)), scale), 1);
    if (trace) trace->attention.push_back(attn);
    heads.push_back(matmul(attn, vh));
  }
  const Tensor mixed = linear(concat(heads, 1), p, pre + "attn.o");
  const Tensor h1 = layernorm(add(x, mixed), p.get(pre + "ln1.gamma"), p.get(pre + "ln1.beta"));
  const Tensor mlp = linear(gelu(linear(h1, p, pre + "mlp.fc1")), p, pre + "mlp.fc2");
  return layernorm(add(h1, mlp), p.get(pre + "ln2.gamma"), p.get(pre + "ln2.beta"));
}

}  // namespace

void TrustConfig::validate() const {
  auto fail = [](const std::string& what) { throw ParameterError("TrustConfig: " + what); };
  if (image_size == 0 || patch_size == 0 || embed_dim == 0 || num_heads == 0 ||
      encoder_depth == 0 || mlp_ratio == 0 || pool_grid == 0) {
    fail("sizes must be positive");
  }
  if (embed_dim % num_heads != 0) fail("embed_dim must be divisible by num_heads");
  if (observation_size() % patch_size != 0) fail("observation side must be divisible by patch_size");
  if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
  if (pool_grid > token_grid()) fail("pool_grid exceeds the token grid side");
  if (decoder_channels.empty()) fail("decoder needs at least one stage");
  if (std::any_of(decoder_channels.begin(), decoder_channels.end(), [](auto c) { return c == 0; })) {
    fail("decoder channel counts must be positive");
  }
  if (decoder_channels.size() > 16 || stage_side(*this, decoder_channels.size() - 1) != image_size) {
    fail("pool_grid * 2^(stages - 1) must equal image_size");
  }
  for (const auto& s : skips) {
    if (s.block == 0 || s.block > encoder_depth) fail("skip source block out of range");
    if (s.stage >= decoder_channels.size()) fail("skip target stage out of range");
  }
}

void UNetConfig::validate() const {
  if (base_channels == 0) throw ParameterError("UNetConfig: base_channels must be positive");
  if (image_size == 0 || image_size % 4 != 0) {
    throw ParameterError("UNetConfig: image_size must be a positive multiple of 4");
  }
}

std::string to_string(ModelKind kind) { return kind == ModelKind::Trust ? "trust" : "unet"; }

ModelKind parse_model_kind(const std::string& name) {
  if (name == "trust") return ModelKind::Trust;
  if (name == "unet") return ModelKind::UNet;
  throw ParameterError("unknown model kind '" + name + "' (expected trust or unet)");
}

void to_json(nlohmann::json& j, const SkipConnection& s) {
  j = {{"block", s.block}, {"stage", s.stage}, {"enabled", s.enabled}};
}

void from_json(const nlohmann::json& j, SkipConnection& s) {
  j.at("block").get_to(s.block);
  j.at("stage").get_to(s.stage);
  s.enabled = j.value("enabled", true);
}

void to_json(nlohmann::json& j, const TrustConfig& c) {
  j = {{"image_size", c.image_size},   {"input_size", c.input_size},
       {"patch_size", c.patch_size},   {"embed_dim", c.embed_dim},
       {"num_heads", c.num_heads},     {"encoder_depth", c.encoder_depth},
       {"mlp_ratio", c.mlp_ratio},     {"pool_grid", c.pool_grid},
       {"decoder_channels", c.decoder_channels}, {"skips", c.skips},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrustConfig& c) {
  TrustConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.input_size = j.value("input_size", d.input_size);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.num_heads = j.value("num_heads", d.num_heads);
  c.encoder_depth = j.value("encoder_depth", d.encoder_depth);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  c.pool_grid = j.value("pool_grid", d.pool_grid);
  c.decoder_channels = j.value("decoder_channels", d.decoder_channels);
  c.skips = j.contains("skips") ? j.at("skips").get<std::vector<SkipConnection>>() : d.skips;
  c.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const UNetConfig& c) {
  j = {{"image_size", c.image_size}, {"base_channels", c.base_channels}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, UNetConfig& c) {
  UNetConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.base_channels = j.value("base_channels", d.base_channels);
  c.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const ModelSpec& s) {
  j = {{"kind", to_string(s.kind)}};
  if (s.kind == ModelKind::Trust) {
    j["trust"] = s.trust;
  } else {
    j["unet"] = s.unet;
  }
}

void from_json(const nlohmann::json& j, ModelSpec& s) {
  s.kind = parse_model_kind(j.value("kind", std::string("trust")));
  if (j.contains("trust")) s.trust = j.at("trust").get<TrustConfig>();
  if (j.contains("unet")) s.unet = j.at("unet").get<UNetConfig>();
}

void ModelParams::add(const std::string& name, Tensor value) {
  if (index_.count(name)) {
    throw ContractError("duplicate parameter name '" + name + "'");
  }
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(value));
}

const Tensor& ModelParams::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw ContractError("missing parameter tensor '" + name + "'");
  }
  return entries_[it->second].second;
}

std::size_t ModelParams::total_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

bool ModelParams::all_finite() const { return first_non_finite().empty(); }

std::string ModelParams::first_non_finite() const {
  for (const auto& [name, t] : entries_) {
    if (!t.all_finite()) return name;
  }
  return {};
}

void ModelParams::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  for (const auto& [name, t] : entries_) out.add(name, t.clone());
  return out;
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelSpec& spec) {
  std::vector<std::pair<std::string, Shape>> layout;
  auto put = [&](std::string name, Shape shape) { layout.emplace_back(std::move(name), std::move(shape)); };
  if (spec.kind == ModelKind::UNet) {
    spec.unet.validate();
    const std::size_t c = spec.unet.base_channels;
    auto conv = [&](const std::string& name, std::size_t out, std::size_t in, std::size_t k) {
      put(name + ".weight", {out, in, k, k});
      put(name + ".bias", {out});
    };
    conv("enc1", c, 1, 3);
    conv("enc2", 2 * c, c, 3);
    conv("bottleneck", 4 * c, 2 * c, 3);
    conv("dec2", 2 * c, 4 * c + 2 * c, 3);
    conv("dec1", c, 2 * c + c, 3);
    conv("head", 1, c, 1);
    return layout;
  }
  const TrustConfig& c = spec.trust;
  c.validate();
  const std::size_t d = c.embed_dim, p2 = c.patch_size * c.patch_size, hidden = c.mlp_ratio * d;
  put("patch_embed.weight", {p2, d});
  put("patch_embed.bias", {d});
  put("pos_embed", {c.tokens(), d});
  for (std::size_t b = 1; b <= c.encoder_depth; ++b) {
    const std::string pre = block_prefix(b);
    for (const char* proj : {"q", "k", "v", "o"}) {
      put(pre + "attn." + proj + ".weight", {d, d});
      put(pre + "attn." + proj + ".bias", {d});
    }
    put(pre + "ln1.gamma", {d});
    put(pre + "ln1.beta", {d});
    put(pre + "mlp.fc1.weight", {d, hidden});
    put(pre + "mlp.fc1.bias", {hidden});
    put(pre + "mlp.fc2.weight", {hidden, d});
    put(pre + "mlp.fc2.bias", {d});
    put(pre + "ln2.gamma", {d});
    put(pre + "ln2.beta", {d});
  }
  for (std::size_t j = 0; j < c.skips.size(); ++j) {
    const std::size_t ch = c.decoder_channels[c.skips[j].stage];
    put("skips." + std::to_string(j) + ".weight", {ch, d, 1, 1});
    put("skips." + std::to_string(j) + ".bias", {ch});
  }
  const auto in = decoder_inputs(c);
  for (std::size_t s = 0; s < c.decoder_channels.size(); ++s) {
    put("decoder." + std::to_string(s) + ".weight", {c.decoder_channels[s], in[s], 3, 3});
    put("decoder." + std::to_string(s) + ".bias", {c.decoder_channels[s]});
  }
  put("head.weight", {1, c.decoder_channels.back(), 1, 1});
  put("head.bias", {1});
  return layout;
}

ModelParams init_params(const ModelSpec& spec) {
  const auto layout = parameter_layout(spec);
  Rng rng(derive_seed(spec.seed(), streams::kInit));
  ModelParams params;
  for (const auto& [name, shape] : layout) {
    Tensor t(shape, 0.0);
    auto ends_with = [&](const char* suffix) {
      const std::string s(suffix);
      return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with(".gamma")) {
      std::fill(t.mutable_data().begin(), t.mutable_data().end(), 1.0);
    } else if (ends_with(".bias") || ends_with(".beta")) {
      // zero
    } else if (shape.size() == 4) {
      const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
      const double stddev = std::sqrt(2.0 / fan_in);
      for (auto& v : t.mutable_data()) v = rng.normal(0.0, stddev);
    } else {
      for (auto& v : t.mutable_data()) v = rng.normal(0.0, 0.02);
    }
    t.set_requires_grad(true);
    params.add(name, std::move(t));
  }
  return params;
}

void validate_params(const ModelSpec& spec, const ModelParams& params) {
  const auto layout = parameter_layout(spec);
  for (const auto& [name, shape] : layout) {
    if (!params.contains(name)) {
      throw ContractError("parameter set is missing tensor '" + name + "'");
    }
    const Tensor& t = params.get(name);
    if (t.shape() != shape) {
      throw ContractError("parameter tensor '" + name + "' has shape " + shape_string(t.shape()) +
                          ", configuration expects " + shape_string(shape));
    }
  }
  if (params.size() != layout.size()) {
    for (const auto& [name, t] : params.entries()) {
      const bool known = std::any_of(layout.begin(), layout.end(), [&](const auto& e) { return e.first == name; });
      if (!known) throw ContractError("unexpected parameter tensor '" + name + "'");
    }
  }
}

Tensor patchify(const Tensor& image, std::size_t patch_size) {
  if (image.rank() != 2 || image.dim(0) != image.dim(1) || patch_size == 0 ||
      image.dim(0) % patch_size != 0) {
    throw DimensionError("patchify: image " + shape_string(image.shape()) +
                         " is not a square tiled by patch " + std::to_string(patch_size));
  }
  const std::size_t g = image.dim(0) / patch_size;
  const Tensor blocks = reshape(image, {g, patch_size, g, patch_size});
  return reshape(permute(blocks, {0, 2, 1, 3}), {g * g, patch_size * patch_size});
}

Tensor forward_trust(const ModelParams& p, const TrustConfig& c, const Tensor& observation,
                     ForwardTrace* trace) {
  ModelSpec spec;
  spec.trust = c;
  validate_params(spec, p);
  const Tensor image = require_image(observation, c.observation_size(), "forward_trust");
  Tensor x = embed_tokens(p, c, image);
  std::vector<Tensor> block_out;
  for (std::size_t b = 1; b <= c.encoder_depth; ++b) {
    x = attention_block(p, c, b, x, trace);
    block_out.push_back(x);
  }
  if (trace) trace->block_outputs = block_out;
  const std::size_t grid = c.token_grid();
  Tensor feat = adaptive_avg_pool(tokens_to_map(x, grid), c.pool_grid, c.pool_grid);
  for (std::size_t s = 0; s < c.decoder_channels.size(); ++s) {
    if (s > 0) feat = upsample_nearest(feat, 2);
    const std::size_t side = stage_side(c, s);
    std::vector<Tensor> parts{feat};
    for (std::size_t j = 0; j < c.skips.size(); ++j) {
      const auto& skip = c.skips[j];
      if (skip.stage != s) continue;
      const std::size_t ch = c.decoder_channels[s];
      if (!skip.enabled) {
        parts.emplace_back(Shape{ch, side, side}, 0.0);
        continue;
      }
      const Tensor src = tokens_to_map(block_out[skip.block - 1], grid);
      const Tensor proj = conv_bias(src, p, "skips." + std::to_string(j), 0);
      parts.push_back(resize_bilinear(proj, side, side));
    }
    const Tensor in = parts.size() == 1 ? feat : concat(parts, 0);
    feat = relu(conv_bias(in, p, "decoder." + std::to_string(s), 1));
    if (trace) trace->decoder_stages.push_back(feat);
  }
  const Tensor out = sigmoid(conv_bias(feat, p, "head", 0));
  return reshape(out, {c.image_size, c.image_size});
}

Tensor forward_unet(const ModelParams& p, const UNetConfig& c, const Tensor& observation) {
  ModelSpec spec;
  spec.kind = ModelKind::UNet;
  spec.unet = c;
  validate_params(spec, p);
  const std::size_t s = c.image_size;
  const Tensor image = reshape(require_image(observation, s, "forward_unet"), {1, s, s});
  const Tensor e1 = relu(conv_bias(image, p, "enc1", 1));
  const Tensor e2 = relu(conv_bias(max_pool2d(e1, 2), p, "enc2", 1));
  const Tensor bott = relu(conv_bias(max_pool2d(e2, 2), p, "bottleneck", 1));
  const Tensor d2 = relu(conv_bias(concat({upsample_nearest(bott, 2), e2}, 0), p, "dec2", 1));
  const Tensor d1 = relu(conv_bias(concat({upsample_nearest(d2, 2), e1}, 0), p, "dec1", 1));
  return reshape(sigmoid(conv_bias(d1, p, "head", 0)), {s, s});
}

Tensor forward(const ModelParams& params, const ModelSpec& spec, const Tensor& observation) {
  return spec.kind == ModelKind::Trust ? forward_trust(params, spec.trust, observation)
                                       : forward_unet(params, spec.unet, observation);
}

Tensor token_gram_of(const Tensor& tokens, std::size_t head_dim) {
  if (tokens.rank() != 2 || head_dim == 0) {
    throw DimensionError("token_gram: expected [T, D] tokens, got " + shape_string(tokens.shape()));
  }
  return scalar_mul(matmul(tokens, transpose(tokens)), 1.0 / std::sqrt(static_cast<double>(head_dim)));
}

Tensor token_gram(const TrustConfig& c, const ModelParams& p, const Tensor& image, GramMode mode) {
  c.validate();
  const Tensor img = require_image(image, c.observation_size(), "token_gram");
  if (mode == GramMode::Identity) {
    return token_gram_of(patchify(img, c.patch_size), c.head_dim());
  }
  const Tensor x = embed_tokens(p, c, img);
  const Tensor q = linear(x, p, block_prefix(1) + "attn.q");
  const Tensor k = linear(x, p, block_prefix(1) + "attn.k");
  return scalar_mul(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(c.head_dim())));
}

ModelCost param_count(const ModelSpec& spec) {
  ModelCost cost;
  for (const auto& [name, shape] : parameter_layout(spec)) cost.parameters += shape_size(shape);
  if (spec.kind == ModelKind::UNet) {
    const std::size_t c = spec.unet.base_channels, s = spec.unet.image_size;
    const std::size_t s2 = s / 2, s4 = s / 4;
    cost.multiply_adds = s * s * c * 9 + s2 * s2 * 2 * c * c * 9 + s4 * s4 * 4 * c * 2 * c * 9 +
                         s2 * s2 * 2 * c * 6 * c * 9 + s * s * c * 3 * c * 9 + s * s * c;
    return cost;
  }
  const TrustConfig& c = spec.trust;
  const std::size_t t = c.tokens(), d = c.embed_dim, hidden = c.mlp_ratio * d;
  std::size_t macs = t * c.patch_size * c.patch_size * d;
  macs += c.encoder_depth * (4 * t * d * d + 2 * t * t * d + 2 * t * d * hidden);
  for (const auto& skip : c.skips) {
    if (skip.enabled) macs += t * d * c.decoder_channels[skip.stage];
  }
  const auto in = decoder_inputs(c);
  for (std::size_t s = 0; s < c.decoder_channels.size(); ++s) {
    const std::size_t side = stage_side(c, s);
    macs += side * side * c.decoder_channels[s] * in[s] * 9;
  }
  macs += c.image_size * c.image_size * c.decoder_channels.back();
  cost.multiply_adds = macs;
  return cost;
}

}  // namespace trust
