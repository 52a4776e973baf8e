#include "subvae/model.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

#include "json_io.hpp"
#include "subvae/svt.hpp"

namespace subvae {

using json = nlohmann::json;

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::proposed:
      return "proposed";
    case Variant::standard_vae:
      return "standard_vae";
    case Variant::supervised_ae:
      return "supervised_ae";
  }
  return "unknown";
}

Variant parse_variant(std::string_view text) {
  if (text == "proposed") return Variant::proposed;
  if (text == "standard_vae") return Variant::standard_vae;
  if (text == "supervised_ae") return Variant::supervised_ae;
  throw Error(ErrorKind::config, "unknown variant '" + std::string(text) +
                                     "' (expected proposed, standard_vae or supervised_ae)");
}

std::string Proportion::str() const {
  if (den == 1) return std::to_string(num);
  return std::to_string(num) + "/" + std::to_string(den);
}

Proportion Proportion::parse(std::string_view text) {
  auto parse_int = [&](std::string_view part) {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc() || ptr != part.data() + part.size()) {
      throw Error(ErrorKind::config, "invalid proportion '" + std::string(text) + "'");
    }
    return v;
  };
  Proportion p;
  const auto slash = text.find('/');
  if (slash == std::string_view::npos) {
    p.num = parse_int(text);
    p.den = 1;
  } else {
    p.num = parse_int(text.substr(0, slash));
    p.den = parse_int(text.substr(slash + 1));
  }
  if (p.num <= 0 || p.den <= 0 || p.num > p.den) {
    throw Error(ErrorKind::config, "proportion '" + std::string(text) + "' outside (0, 1]");
  }
  return p;
}

Index LatentConfig::sub_dim() const {
  return (2 * z_dim * proportion.num + proportion.den) / (2 * proportion.den);
}

void LatentConfig::validate() const {
  if (z_dim < 1) throw Error(ErrorKind::config, "z_dim must be positive");
  if (proportion.num <= 0 || proportion.den <= 0 || proportion.num > proportion.den) {
    throw Error(ErrorKind::config, "subspace proportion must lie in (0, 1]");
  }
  const Index sub = sub_dim();
  if (sub < 1 || sub > z_dim) {
    throw Error(ErrorKind::config, "subspace size " + std::to_string(sub) + " outside [1, " +
                                       std::to_string(z_dim) + "]");
  }
}

std::uint64_t name_hash(std::string_view name) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

template <typename T>
void kaiming_uniform(Tensor<T>& weight, Index fan_in, double gain, std::uint64_t seed,
                     const std::string& name) {
  const std::uint64_t h = name_hash(name);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  std::mt19937_64 rng(seq);
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (T& v : weight.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
Tensor<T> param(Shape shape) {
  return Tensor<T>::zeros(std::move(shape), true);
}

template <typename T>
BatchNormLayer<T> make_norm(Index channels) {
  return {Tensor<T>::full({channels}, T(1), true), param<T>({channels}),
          RunningStats<T>::init(channels)};
}

double leaky_gain(const Architecture& arch) {
  return std::sqrt(2.0 / (1.0 + arch.leaky_slope * arch.leaky_slope));
}

template <typename T>
void check_input(const Architecture& arch, const Tensor<T>& x) {
  const Shape expected{x.rank() == 4 ? x.dim(0) : -1, arch.channels, arch.image_size,
                       arch.image_size};
  if (x.rank() != 4 || x.shape() != expected) {
    throw Error(ErrorKind::shape, "encoder expects N×" + std::to_string(arch.channels) + "×" +
                                      std::to_string(arch.image_size) + "×" +
                                      std::to_string(arch.image_size) + " input, got " +
                                      to_string(x.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------- Classifier

template <typename T>
Classifier<T> Classifier<T>::create(Index input_dim, const Architecture& arch) {
  Classifier c;
  c.input_dim = input_dim;
  Index in = input_dim;
  for (std::size_t i = 0; i < 2; ++i) {
    const Index out = arch.classifier_hidden[i];
    c.hidden[i].weight = param<T>({in, out});
    c.norm[i] = make_norm<T>(out);
    in = out;
  }
  c.output.weight = param<T>({in, arch.classes});
  c.output.bias = param<T>({arch.classes});
  return c;
}

template <typename T>
void Classifier<T>::initialize(std::uint64_t seed, const std::string& prefix,
                               const Architecture& arch) {
  const double leaky = leaky_gain(arch);
  for (std::size_t i = 0; i < 2; ++i) {
    kaiming_uniform(hidden[i].weight, hidden[i].weight.dim(0), leaky, seed,
                    prefix + ".fc" + std::to_string(i + 1) + ".weight");
  }
  kaiming_uniform(output.weight, output.weight.dim(0), 1.0, seed, prefix + ".out.weight");
}

template <typename T>
Tensor<T> Classifier<T>::forward(const Tensor<T>& x, Mode mode, const Architecture& arch) {
  if (x.rank() != 2 || x.dim(1) != input_dim) {
    throw Error(ErrorKind::shape, "classifier expects N×" + std::to_string(input_dim) +
                                      " input, got " + to_string(x.shape()));
  }
  Tensor<T> h = x;
  for (std::size_t i = 0; i < 2; ++i) {
    h = linear(h, hidden[i].weight, Tensor<T>());
    h = batch_norm(h, norm[i].gamma, norm[i].beta, norm[i].stats, mode, arch.bn_momentum,
                   arch.bn_epsilon);
    h = leaky_relu(h, arch.leaky_slope);
  }
  return linear(h, output.weight, output.bias);
}

template <typename T>
void Classifier<T>::visit_parameters(
    const std::string& prefix, const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  for (std::size_t i = 0; i < 2; ++i) {
    const std::string idx = std::to_string(i + 1);
    fn(prefix + ".fc" + idx + ".weight", hidden[i].weight);
    fn(prefix + ".bn" + idx + ".gamma", norm[i].gamma);
    fn(prefix + ".bn" + idx + ".beta", norm[i].beta);
  }
  fn(prefix + ".out.weight", output.weight);
  fn(prefix + ".out.bias", output.bias);
}

template <typename T>
void Classifier<T>::visit_buffers(const std::string& prefix,
                                  const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  for (std::size_t i = 0; i < 2; ++i) {
    const std::string idx = std::to_string(i + 1);
    fn(prefix + ".bn" + idx + ".running_mean", norm[i].stats.mean);
    fn(prefix + ".bn" + idx + ".running_var", norm[i].stats.var);
  }
}

// --------------------------------------------------------------- ModelBundle

template <typename T>
ModelBundle<T> ModelBundle<T>::allocate(Variant variant, LatentConfig latent, double alpha,
                                        std::uint64_t seed, Architecture arch) {
  latent.validate();
  if (alpha < 0) throw Error(ErrorKind::config, "alpha must be nonnegative");
  ModelBundle b;
  b.variant_ = variant;
  b.latent_ = latent;
  b.alpha_ = alpha;
  b.seed_ = seed;
  b.arch_ = arch;

  const Index k = arch.encoder_kernel;
  Index in = arch.channels;
  for (std::size_t i = 0; i < 3; ++i) {
    const Index out = arch.encoder_channels[i];
    b.encoder_.blocks[i].weight = param<T>({out, in, k, k});
    b.encoder_.blocks[i].norm = make_norm<T>(out);
    in = out;
  }
  const Index features = arch.feature_size();
  b.encoder_.mu = {param<T>({features, latent.z_dim}), param<T>({latent.z_dim})};
  if (variant != Variant::supervised_ae) {
    b.encoder_.logvar = {param<T>({features, latent.z_dim}), param<T>({latent.z_dim})};
  }

  const Index dk = arch.decoder_kernel;
  b.decoder_.fc = {param<T>({latent.z_dim, features}), param<T>({features})};
  in = arch.encoder_channels[2];
  for (std::size_t i = 0; i < 2; ++i) {
    const Index out = arch.encoder_channels[1 - i];
    b.decoder_.blocks[i].weight = param<T>({in, out, dk, dk});
    b.decoder_.blocks[i].norm = make_norm<T>(out);
    in = out;
  }
  b.decoder_.out_weight = param<T>({in, arch.channels, dk, dk});
  b.decoder_.out_bias = param<T>({arch.channels});

  if (variant == Variant::proposed) {
    b.classifier_ = Classifier<T>::create(latent.sub_dim(), arch);
  } else if (variant == Variant::supervised_ae) {
    b.classifier_ = Classifier<T>::create(latent.z_dim, arch);
  }
  return b;
}

template <typename T>
ModelBundle<T> ModelBundle<T>::create(Variant variant, LatentConfig latent, double alpha,
                                      std::uint64_t seed, Architecture arch) {
  ModelBundle b = allocate(variant, latent, alpha, seed, arch);
  const double leaky = leaky_gain(arch);
  const Index k = arch.encoder_kernel, dk = arch.decoder_kernel;
  const Index s2 = arch.stride * arch.stride;

  for (std::size_t i = 0; i < 3; ++i) {
    auto& w = b.encoder_.blocks[i].weight;
    kaiming_uniform(w, w.dim(1) * k * k, leaky, seed, "encoder.conv" + std::to_string(i + 1) +
                                                          ".weight");
  }
  const Index features = arch.feature_size();
  kaiming_uniform(b.encoder_.mu.weight, features, 1.0, seed, "encoder.mu.weight");
  if (b.encoder_.logvar.weight.defined()) {
    kaiming_uniform(b.encoder_.logvar.weight, features, 1.0, seed, "encoder.logvar.weight");
  }
  kaiming_uniform(b.decoder_.fc.weight, latent.z_dim, 1.0, seed, "decoder.fc.weight");
  // Each transposed-conv output pixel receives in_channels · k² / stride² terms.
  for (std::size_t i = 0; i < 2; ++i) {
    auto& w = b.decoder_.blocks[i].weight;
    kaiming_uniform(w, w.dim(0) * dk * dk / s2, leaky, seed,
                    "decoder.deconv" + std::to_string(i + 1) + ".weight");
  }
  kaiming_uniform(b.decoder_.out_weight, b.decoder_.out_weight.dim(0) * dk * dk / s2, 1.0, seed,
                  "decoder.out.weight");

  if (b.has_classifier()) b.classifier_.initialize(seed, "classifier", arch);
  return b;
}

template <typename T>
void ModelBundle<T>::visit(const std::function<void(const std::string&, Tensor<T>&)>& params,
                           const std::function<void(const std::string&, Tensor<T>&)>& buffers) {
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string idx = std::to_string(i + 1);
    auto& block = encoder_.blocks[i];
    if (params) {
      params("encoder.conv" + idx + ".weight", block.weight);
      params("encoder.bn" + idx + ".gamma", block.norm.gamma);
      params("encoder.bn" + idx + ".beta", block.norm.beta);
    }
    if (buffers) {
      buffers("encoder.bn" + idx + ".running_mean", block.norm.stats.mean);
      buffers("encoder.bn" + idx + ".running_var", block.norm.stats.var);
    }
  }
  if (params) {
    params("encoder.mu.weight", encoder_.mu.weight);
    params("encoder.mu.bias", encoder_.mu.bias);
    if (encoder_.logvar.weight.defined()) {
      params("encoder.logvar.weight", encoder_.logvar.weight);
      params("encoder.logvar.bias", encoder_.logvar.bias);
    }
    params("decoder.fc.weight", decoder_.fc.weight);
    params("decoder.fc.bias", decoder_.fc.bias);
  }
  for (std::size_t i = 0; i < 2; ++i) {
    const std::string idx = std::to_string(i + 1);
    auto& block = decoder_.blocks[i];
    if (params) {
      params("decoder.deconv" + idx + ".weight", block.weight);
      params("decoder.bn" + idx + ".gamma", block.norm.gamma);
      params("decoder.bn" + idx + ".beta", block.norm.beta);
    }
    if (buffers) {
      buffers("decoder.bn" + idx + ".running_mean", block.norm.stats.mean);
      buffers("decoder.bn" + idx + ".running_var", block.norm.stats.var);
    }
  }
  if (params) {
    params("decoder.out.weight", decoder_.out_weight);
    params("decoder.out.bias", decoder_.out_bias);
  }
  if (has_classifier()) {
    if (params) classifier_.visit_parameters("classifier", params);
    if (buffers) classifier_.visit_buffers("classifier", buffers);
  }
}

template <typename T>
std::vector<Parameter<T>> ModelBundle<T>::parameters() {
  std::vector<Parameter<T>> out;
  visit([&](const std::string& name, Tensor<T>& t) { out.push_back({name, t}); }, nullptr);
  return out;
}

template <typename T>
std::vector<Parameter<T>> ModelBundle<T>::buffers() {
  std::vector<Parameter<T>> out;
  visit(nullptr, [&](const std::string& name, Tensor<T>& t) { out.push_back({name, t}); });
  return out;
}

template <typename T>
Index ModelBundle<T>::embedding_dim() const {
  return variant_ == Variant::proposed ? latent_.sub_dim() : latent_.z_dim;
}

template <typename T>
void ModelBundle<T>::copy_from(const ModelBundle& other) {
  auto& src = const_cast<ModelBundle&>(other);
  auto src_params = src.parameters();
  auto src_buffers = src.buffers();
  auto dst_params = parameters();
  auto dst_buffers = buffers();
  if (src_params.size() != dst_params.size() || src_buffers.size() != dst_buffers.size()) {
    throw Error(ErrorKind::shape, "copy_from: bundle layouts differ");
  }
  auto copy = [](std::vector<Parameter<T>>& to, std::vector<Parameter<T>>& from) {
    for (std::size_t i = 0; i < to.size(); ++i) {
      if (to[i].name != from[i].name || to[i].tensor.shape() != from[i].tensor.shape()) {
        throw Error(ErrorKind::shape, "copy_from: mismatch at " + to[i].name);
      }
      std::copy(from[i].tensor.data().begin(), from[i].tensor.data().end(),
                to[i].tensor.data().begin());
    }
  };
  copy(dst_params, src_params);
  copy(dst_buffers, src_buffers);
  alpha_ = other.alpha_;
}

template <typename T>
ModelBundle<T> ModelBundle<T>::clone() const {
  ModelBundle b = allocate(variant_, latent_, alpha_, seed_, arch_);
  b.copy_from(*this);
  return b;
}

template <typename T>
template <typename U>
ModelBundle<U> ModelBundle<T>::cast() const {
  ModelBundle<U> b = ModelBundle<U>::allocate(variant_, latent_, alpha_, seed_, arch_);
  auto& src = const_cast<ModelBundle&>(*this);
  auto sp = src.parameters();
  auto sb = src.buffers();
  auto dp = b.parameters();
  auto db = b.buffers();
  for (std::size_t i = 0; i < sp.size(); ++i) {
    std::copy(sp[i].tensor.data().begin(), sp[i].tensor.data().end(), dp[i].tensor.data().begin());
  }
  for (std::size_t i = 0; i < sb.size(); ++i) {
    std::copy(sb[i].tensor.data().begin(), sb[i].tensor.data().end(), db[i].tensor.data().begin());
  }
  return b;
}

template <typename T>
void ModelBundle<T>::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

// ------------------------------------------------------------------ forward

template <typename T>
EncoderOutput<T> encode(ModelBundle<T>& bundle, const Tensor<T>& x, Mode mode) {
  const Architecture& arch = bundle.arch();
  check_input(arch, x);
  auto& enc = bundle.encoder();
  Tensor<T> h = x;
  for (auto& block : enc.blocks) {
    h = conv2d(h, block.weight, Tensor<T>(), arch.stride, arch.padding, Rounding::floor);
    h = batch_norm(h, block.norm.gamma, block.norm.beta, block.norm.stats, mode, arch.bn_momentum,
                   arch.bn_epsilon);
    h = leaky_relu(h, arch.leaky_slope);
  }
  h = reshape(h, {x.dim(0), arch.feature_size()});
  EncoderOutput<T> out;
  out.mu = linear(h, enc.mu.weight, enc.mu.bias);
  if (enc.logvar.weight.defined()) out.logvar = linear(h, enc.logvar.weight, enc.logvar.bias);
  return out;
}

template <typename T>
Tensor<T> decode(ModelBundle<T>& bundle, const Tensor<T>& z, Mode mode) {
  const Architecture& arch = bundle.arch();
  if (z.rank() != 2 || z.dim(1) != bundle.latent().z_dim) {
    throw Error(ErrorKind::shape, "decoder expects N×" + std::to_string(bundle.latent().z_dim) +
                                      " latent, got " + to_string(z.shape()));
  }
  auto& dec = bundle.decoder();
  const Index side = arch.bottleneck_size();
  Tensor<T> h = linear(z, dec.fc.weight, dec.fc.bias);
  h = reshape(h, {z.dim(0), arch.encoder_channels[2], side, side});
  for (auto& block : dec.blocks) {
    h = conv_transpose2d(h, block.weight, Tensor<T>(), arch.stride, arch.padding);
    h = batch_norm(h, block.norm.gamma, block.norm.beta, block.norm.stats, mode, arch.bn_momentum,
                   arch.bn_epsilon);
    h = leaky_relu(h, arch.leaky_slope);
  }
  return conv_transpose2d(h, dec.out_weight, dec.out_bias, arch.stride, arch.padding);
}

template <typename T>
Tensor<T> classify(ModelBundle<T>& bundle, const Tensor<T>& mu_sub, Mode mode) {
  if (!bundle.has_classifier()) {
    throw Error(ErrorKind::precondition, "standard_vae bundle has no classifier");
  }
  return bundle.classifier().forward(mu_sub, mode, bundle.arch());
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_latent(const Tensor<T>& z, const LatentConfig& cfg) {
  if (z.rank() != 2 || z.dim(1) != cfg.z_dim) {
    throw Error(ErrorKind::shape, "split_latent expects N×" + std::to_string(cfg.z_dim) +
                                      ", got " + to_string(z.shape()));
  }
  const Index rest = cfg.rest_dim();
  return {slice_columns(z, 0, rest), slice_columns(z, rest, cfg.z_dim)};
}

template <typename T>
Tensor<T> kl_divergence(const EncoderOutput<T>& out) {
  return gaussian_kl(out.mu, out.logvar);
}

template <typename T>
Tensor<T> elbo(const Tensor<T>& x, const Tensor<T>& recon_logits, const EncoderOutput<T>& out) {
  return scale(add(bernoulli_cross_entropy(recon_logits, x), kl_divergence(out)), -1.0);
}

template <typename T>
Tensor<T> sample_noise(const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<T> values(static_cast<std::size_t>(numel(shape)));
  for (T& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>::from_vector(shape, std::move(values));
}

template <typename T>
LossBreakdown LossTerms<T>::values() const {
  LossBreakdown b;
  b.recon = recon.item();
  b.kl = kl.defined() ? kl.item() : 0.0;
  b.classification = classification.defined() ? classification.item() : 0.0;
  b.total = total.item();
  return b;
}

template <typename T>
LossTerms<T> total_loss(ModelBundle<T>& bundle, const Tensor<T>& x, std::span<const int> labels,
                        Mode mode, const Tensor<T>& noise) {
  LossTerms<T> terms;
  terms.encoded = encode(bundle, x, mode);
  const auto& enc = terms.encoded;
  Tensor<T> z = bundle.variant() == Variant::supervised_ae
                    ? enc.mu
                    : reparameterize(enc.mu, enc.logvar, noise);
  terms.recon_logits = decode(bundle, z, mode);
  terms.recon = bernoulli_cross_entropy(terms.recon_logits, x);
  Tensor<T> objective = terms.recon;
  if (bundle.variant() != Variant::supervised_ae) {
    terms.kl = kl_divergence(enc);
    objective = add(objective, terms.kl);
  }
  if (bundle.has_classifier()) {
    Tensor<T> features = bundle.variant() == Variant::proposed
                             ? split_latent(enc.mu, bundle.latent()).second
                             : enc.mu;
    terms.classification = softmax_cross_entropy(classify(bundle, features, mode), labels);
    objective = add(objective, scale(terms.classification, bundle.alpha()));
  }
  terms.total = objective;
  return terms;
}

template <typename T>
LossTerms<T> total_loss(ModelBundle<T>& bundle, const Tensor<T>& x, std::span<const int> labels,
                        Mode mode, std::mt19937_64& rng) {
  Tensor<T> noise;
  if (bundle.variant() != Variant::supervised_ae) {
    noise = sample_noise<T>({x.dim(0), bundle.latent().z_dim}, rng);
  }
  return total_loss(bundle, x, labels, mode, noise);
}

template <typename T>
Tensor<T> embed(ModelBundle<T>& bundle, const Tensor<T>& x) {
  NoGradGuard guard;
  EncoderOutput<T> enc = encode(bundle, x, Mode::eval);
  if (bundle.variant() == Variant::proposed) {
    return split_latent(enc.mu, bundle.latent()).second.detach();
  }
  return enc.mu.detach();
}

template <typename T>
void initialize_output_bias(ModelBundle<T>& bundle, std::span<const float> images, Index count) {
  const Architecture& arch = bundle.arch();
  const Index plane = arch.image_size * arch.image_size;
  if (static_cast<Index>(images.size()) != count * arch.channels * plane || count == 0) {
    throw Error(ErrorKind::shape, "initialize_output_bias: image buffer size mismatch");
  }
  auto bias = bundle.decoder().out_bias.data();
  for (Index c = 0; c < arch.channels; ++c) {
    double acc = 0;
    for (Index n = 0; n < count; ++n) {
      const float* row = images.data() + (n * arch.channels + c) * plane;
      for (Index p = 0; p < plane; ++p) acc += row[p];
    }
    const double mean = std::clamp(acc / static_cast<double>(count * plane), 1e-4, 1.0 - 1e-4);
    bias[static_cast<std::size_t>(c)] = static_cast<T>(std::log(mean / (1.0 - mean)));
  }
}

// --------------------------------------------------------------- checkpoints

namespace {

std::string file_name(const std::string& tensor_name) { return tensor_name + ".svt"; }

}  // namespace

void save_checkpoint(const ModelBundle<float>& bundle, const std::filesystem::path& dir,
                     std::uint64_t epoch) {
  std::filesystem::create_directories(dir);
  auto& b = const_cast<ModelBundle<float>&>(bundle);
  json manifest;
  manifest["format"] = "subvae-checkpoint-1";
  manifest["variant"] = to_string(b.variant());
  manifest["latent"] = {{"z_dim", b.latent().z_dim},
                        {"proportion", b.latent().proportion.str()},
                        {"z_sub_dim", b.latent().sub_dim()},
                        {"subspace", "last"}};
  manifest["alpha"] = b.alpha();
  manifest["architecture"] = detail::architecture_json(b.arch());
  manifest["seed"] = b.seed();
  manifest["epoch"] = epoch;
  json params = json::array();
  for (auto& p : b.parameters()) {
    params.push_back(p.name);
    save_tensor(dir / file_name(p.name), p.tensor);
  }
  json buffers = json::array();
  for (auto& p : b.buffers()) {
    buffers.push_back(p.name);
    save_tensor(dir / file_name(p.name), p.tensor);
  }
  manifest["parameters"] = params;
  manifest["buffers"] = buffers;
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

ModelBundle<float> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error(ErrorKind::io, "no checkpoint manifest in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::io, "malformed checkpoint manifest: " + std::string(e.what()));
  }
  try {
    const Architecture arch;
    if (manifest.at("architecture") != detail::architecture_json(arch)) {
      throw Error(ErrorKind::config, "checkpoint architecture differs from the built-in design");
    }
    LatentConfig latent;
    latent.z_dim = manifest.at("latent").at("z_dim").get<Index>();
    latent.proportion = Proportion::parse(manifest.at("latent").at("proportion").get<std::string>());
    const Variant variant = parse_variant(manifest.at("variant").get<std::string>());
    auto bundle = ModelBundle<float>::create(variant, latent, manifest.at("alpha").get<double>(),
                                             manifest.at("seed").get<std::uint64_t>(), arch);
    auto load_into = [&](std::vector<Parameter<float>> entries, const json& names) {
      if (names.size() != entries.size()) {
        throw Error(ErrorKind::io, "checkpoint tensor list does not match variant layout");
      }
      for (std::size_t i = 0; i < entries.size(); ++i) {
        if (names[i].get<std::string>() != entries[i].name) {
          throw Error(ErrorKind::io, "checkpoint tensor order mismatch at " + entries[i].name);
        }
        SvtArray a = read_svt(dir / file_name(entries[i].name));
        if (a.shape != entries[i].tensor.shape()) {
          throw Error(ErrorKind::io, "checkpoint tensor " + entries[i].name + " has shape " +
                                         to_string(a.shape) + ", expected " +
                                         to_string(entries[i].tensor.shape()));
        }
        std::copy(a.values.begin(), a.values.end(), entries[i].tensor.data().begin());
      }
    };
    load_into(bundle.parameters(), manifest.at("parameters"));
    load_into(bundle.buffers(), manifest.at("buffers"));
    return bundle;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::io, "incomplete checkpoint manifest: " + std::string(e.what()));
  }
}

// ----------------------------------------------------------- instantiations

#define SUBVAE_INSTANTIATE(T)                                                                  \
  template struct Classifier<T>;                                                               \
  template class ModelBundle<T>;                                                               \
  template struct LossTerms<T>;                                                                \
  template EncoderOutput<T> encode(ModelBundle<T>&, const Tensor<T>&, Mode);                   \
  template Tensor<T> decode(ModelBundle<T>&, const Tensor<T>&, Mode);                          \
  template Tensor<T> classify(ModelBundle<T>&, const Tensor<T>&, Mode);                        \
  template std::pair<Tensor<T>, Tensor<T>> split_latent(const Tensor<T>&, const LatentConfig&); \
  template Tensor<T> kl_divergence(const EncoderOutput<T>&);                                   \
  template Tensor<T> elbo(const Tensor<T>&, const Tensor<T>&, const EncoderOutput<T>&);        \
  template Tensor<T> sample_noise(const Shape&, std::mt19937_64&);                             \
  template LossTerms<T> total_loss(ModelBundle<T>&, const Tensor<T>&, std::span<const int>,    \
                                   Mode, const Tensor<T>&);                                    \
  template LossTerms<T> total_loss(ModelBundle<T>&, const Tensor<T>&, std::span<const int>,    \
                                   Mode, std::mt19937_64&);                                    \
  template Tensor<T> embed(ModelBundle<T>&, const Tensor<T>&);                                 \
  template void initialize_output_bias(ModelBundle<T>&, std::span<const float>, Index);

SUBVAE_INSTANTIATE(float)
SUBVAE_INSTANTIATE(double)
#undef SUBVAE_INSTANTIATE

template ModelBundle<double> ModelBundle<float>::cast<double>() const;
template ModelBundle<float> ModelBundle<double>::cast<float>() const;

}  // namespace subvae
