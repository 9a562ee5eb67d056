#include "modwatch/model.hpp"

#include <cmath>
#include <sstream>

#include "modwatch/error.hpp"
#include "modwatch/random.hpp"

namespace modwatch::model {

using nn::Padding;
using nn::Tape;
using nn::Tensor;
using nn::Var;

std::string to_string(Mode mode) { return mode == Mode::vae ? "vae" : "cvae"; }

Mode parse_mode(const std::string& text) {
  if (text == "vae") return Mode::vae;
  if (text == "cvae") return Mode::cvae;
  throw ConfigError("unknown model mode '" + text + "' (expected vae or cvae)");
}

ModelSpec ModelSpec::desk(Mode mode) {
  ModelSpec s;
  s.mode = mode;
  return s;
}

ModelSpec ModelSpec::paper(Mode mode) {
  ModelSpec s;
  s.mode = mode;
  s.kernels_per_block = 128;
  s.dense_units = 512;
  s.decoder_dense_units = 512;
  s.latent_dim = 512;
  s.time_steps = 4500;
  // 4500 = 2^2 * 1125, so only two blocks can halve the time axis and still
  // round-trip exactly through the decoder.
  s.strided_blocks = 2;
  return s;
}

void ModelSpec::validate() const {
  auto fail = [](const std::string& m) { throw ShapeError("invalid model spec: " + m); };
  if (encoder_blocks == 0 || decoder_blocks == 0) fail("encoder and decoder need at least one conv block");
  if (kernel_width == 0 || kernel_width % 2 == 0) fail("kernel width must be odd");
  if (kernels_per_block == 0 || dense_units == 0 || decoder_dense_units == 0 || latent_dim == 0 || channels == 0) {
    fail("all layer widths must be positive");
  }
  if (mode == Mode::cvae && module_count == 0) fail("cvae mode needs at least one module");
  if (strided_blocks > encoder_blocks || strided_blocks > decoder_blocks) {
    fail("strided blocks (" + std::to_string(strided_blocks) + ") exceed encoder/decoder depth");
  }
  if (strided_blocks >= 63) fail("too many strided blocks");
  const std::size_t factor = std::size_t{1} << strided_blocks;
  if (time_steps == 0 || time_steps % factor != 0) {
    fail("time steps " + std::to_string(time_steps) + " not divisible by 2^" + std::to_string(strided_blocks) +
         "; downsampling exhausts the time resolution");
  }
  if (!encoder_kernels.empty() && encoder_kernels.size() != encoder_blocks) {
    fail("encoder_kernels must list one count per encoder block");
  }
  if (!decoder_kernels.empty() && decoder_kernels.size() + 1 != decoder_blocks) {
    fail("decoder_kernels must list one count per hidden decoder block");
  }
  for (auto k : encoder_kernels)
    if (k == 0) fail("kernel counts must be positive");
  for (auto k : decoder_kernels)
    if (k == 0) fail("kernel counts must be positive");
}

std::size_t ModelSpec::encoder_block_kernels(std::size_t block) const {
  return encoder_kernels.empty() ? kernels_per_block : encoder_kernels.at(block);
}

std::size_t ModelSpec::decoder_block_kernels(std::size_t block) const {
  if (block + 1 == decoder_blocks) return channels;
  return decoder_kernels.empty() ? kernels_per_block : decoder_kernels.at(block);
}

std::size_t ModelSpec::bottleneck_time() const { return time_steps >> strided_blocks; }
std::size_t ModelSpec::bottleneck_channels() const { return encoder_block_kernels(encoder_blocks - 1); }

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::vector<std::size_t> split_counts(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoul(item));
  }
  return out;
}

}  // namespace

std::map<std::string, std::string> ModelSpec::to_key_values() const {
  return {
      {"mode", to_string(mode)},
      {"encoder_blocks", std::to_string(encoder_blocks)},
      {"decoder_blocks", std::to_string(decoder_blocks)},
      {"kernels_per_block", std::to_string(kernels_per_block)},
      {"encoder_kernels", join(encoder_kernels)},
      {"decoder_kernels", join(decoder_kernels)},
      {"kernel_width", std::to_string(kernel_width)},
      {"dense_units", std::to_string(dense_units)},
      {"decoder_dense_units", std::to_string(decoder_dense_units)},
      {"latent_dim", std::to_string(latent_dim)},
      {"module_count", std::to_string(module_count)},
      {"time_steps", std::to_string(time_steps)},
      {"channels", std::to_string(channels)},
      {"strided_blocks", std::to_string(strided_blocks)},
      {"kld_reduction", kld_reduction == nn::KldReduction::batch_mean ? "batch_mean" : "batch_sum"},
  };
}

ModelSpec ModelSpec::from_key_values(const std::map<std::string, std::string>& kv) {
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw DataError("model spec missing key '" + k + "'");
    return it->second;
  };
  auto num = [&](const std::string& k) {
    try {
      return static_cast<std::size_t>(std::stoull(get(k)));
    } catch (const std::logic_error&) {
      throw DataError("model spec key '" + k + "' is not an unsigned integer");
    }
  };
  ModelSpec s;
  s.mode = parse_mode(get("mode"));
  s.encoder_blocks = num("encoder_blocks");
  s.decoder_blocks = num("decoder_blocks");
  s.kernels_per_block = num("kernels_per_block");
  s.encoder_kernels = split_counts(get("encoder_kernels"));
  s.decoder_kernels = split_counts(get("decoder_kernels"));
  s.kernel_width = num("kernel_width");
  s.dense_units = num("dense_units");
  s.decoder_dense_units = num("decoder_dense_units");
  s.latent_dim = num("latent_dim");
  s.module_count = num("module_count");
  s.time_steps = num("time_steps");
  s.channels = num("channels");
  s.strided_blocks = num("strided_blocks");
  const auto& red = get("kld_reduction");
  if (red == "batch_mean") {
    s.kld_reduction = nn::KldReduction::batch_mean;
  } else if (red == "batch_sum") {
    s.kld_reduction = nn::KldReduction::batch_sum;
  } else {
    throw DataError("unknown kld_reduction '" + red + "'");
  }
  return s;
}

ConditionLabel::ConditionLabel(std::uint32_t id, std::size_t count) : module_id(id), module_count(count) {
  if (id >= count) {
    throw DataError("module id " + std::to_string(id) + " outside configured module count " + std::to_string(count));
  }
}

std::vector<float> ConditionLabel::one_hot() const {
  std::vector<float> v(module_count, 0.0f);
  v[module_id] = 1.0f;
  return v;
}

Tensor one_hot_batch(std::span<const std::uint32_t> modules, std::size_t module_count) {
  Tensor t({modules.size(), module_count});
  for (std::size_t b = 0; b < modules.size(); ++b) {
    const ConditionLabel c(modules[b], module_count);
    t[b * module_count + c.module_id] = 1.0f;
  }
  return t;
}

LatentDistribution LatentDistribution::from_sigma(const Tensor& mu, const Tensor& sigma) {
  if (mu.dims() != sigma.dims()) throw ShapeError("mu and sigma dims differ");
  LatentDistribution d;
  d.mu = mu;
  d.logvar = Tensor(sigma.dims());
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    if (!(sigma[i] > 0.0f)) throw NumericError("sigma must be strictly positive");
    d.logvar[i] = static_cast<float>(2.0 * std::log(static_cast<double>(sigma[i])));
  }
  return d;
}

Tensor LatentDistribution::sigma() const {
  Tensor s = logvar;
  for (float& v : s.values()) v = std::exp(0.5f * v);
  return s;
}

Tensor standard_normal_tensor(nn::Dims dims, std::uint64_t seed) {
  Tensor t(std::move(dims));
  Rng rng(seed);
  for (float& v : t.values()) v = static_cast<float>(standard_normal(rng));
  return t;
}

Tensor LatentNoise::draw(std::size_t batch, std::size_t latent_dim) const {
  switch (kind) {
    case Kind::zero:
      return Tensor({batch, latent_dim});
    case Kind::seeded:
      return standard_normal_tensor({batch, latent_dim}, seed);
    case Kind::fixed:
      if (values.dims() != nn::Dims{batch, latent_dim}) {
        throw ShapeError("fixed epsilon has shape " + nn::shape_string(values.dims()) + ", expected " +
                         nn::shape_string(nn::Dims{batch, latent_dim}));
      }
      return values;
  }
  return {};
}

Tensor reparameterize(LatentDistribution& dist, std::uint64_t seed) {
  if (dist.mu.dims() != dist.logvar.dims()) throw ShapeError("mu and log-variance dims differ");
  dist.epsilon = standard_normal_tensor(dist.mu.dims(), seed);
  Tape tape;
  const Var mu = tape.constant(dist.mu);
  const Var lv = tape.constant(dist.logvar);
  dist.z = tape.value(nn::reparameterize(tape, mu, lv, dist.epsilon));
  return dist.z;
}

double mse(const Tensor& x, const Tensor& reconstruction) {
  if (x.dims() != reconstruction.dims()) {
    throw ShapeError("mse dims mismatch " + nn::shape_string(x.dims()) + " vs " +
                     nn::shape_string(reconstruction.dims()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - reconstruction[i];
    s += d * d;
  }
  return s / static_cast<double>(x.size());
}

double kld_gaussian(const LatentDistribution& dist, nn::KldReduction reduction) {
  if (dist.mu.dims() != dist.logvar.dims() || dist.mu.rank() != 2) {
    throw ShapeError("kld_gaussian expects batch x latent mu and log-variance");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < dist.mu.size(); ++i) {
    const double lv = dist.logvar[i];
    if (!(std::exp(0.5 * lv) > 0.0) || !std::isfinite(lv)) throw NumericError("non-positive sigma in kld_gaussian");
    const double m = dist.mu[i];
    s += -0.5 * (1.0 + lv - m * m - std::exp(lv));
  }
  return reduction == nn::KldReduction::batch_mean ? s / static_cast<double>(dist.mu.dim(0)) : s;
}

namespace {

// Fixed layer order; see make_parameters.
struct LayerIndex {
  std::size_t encoder_blocks;
  std::size_t enc_conv(std::size_t i) const { return i; }
  std::size_t enc_dense() const { return encoder_blocks; }
  std::size_t enc_mu() const { return encoder_blocks + 1; }
  std::size_t enc_logvar() const { return encoder_blocks + 2; }
  std::size_t dec_dense(std::size_t i) const { return encoder_blocks + 3 + i; }
  std::size_t dec_conv(std::size_t j) const { return encoder_blocks + 5 + j; }
};

Var kernel_of(std::span<const Var> params, std::size_t layer) { return params[nn::ModelParameters::kernel_slot(layer)]; }
Var bias_of(std::span<const Var> params, std::size_t layer) { return params[nn::ModelParameters::bias_slot(layer)]; }

LossBreakdown breakdown(double reconstruction, double kld, double eta) {
  return {reconstruction, kld, eta, reconstruction + eta * kld};
}

}  // namespace

Cvae::Cvae(ModelSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

nn::ModelParameters Cvae::make_parameters(std::uint64_t seed) const {
  const auto& s = spec_;
  nn::ModelParameters p;
  std::size_t in_ch = s.channels;
  for (std::size_t i = 0; i < s.encoder_blocks; ++i) {
    const std::size_t out_ch = s.encoder_block_kernels(i);
    p.add("enc_conv" + std::to_string(i), nn::LayerWeights::conv1d(out_ch, in_ch, s.kernel_width));
    in_ch = out_ch;
  }
  const std::size_t flat = s.bottleneck_time() * s.bottleneck_channels();
  p.add("enc_dense", nn::LayerWeights::dense(s.dense_units, flat));
  p.add("enc_mu", nn::LayerWeights::dense(s.latent_dim, s.dense_units + s.condition_width()));
  p.add("enc_logvar", nn::LayerWeights::dense(s.latent_dim, s.dense_units + s.condition_width()));
  p.add("dec_dense0", nn::LayerWeights::dense(s.decoder_dense_units, s.latent_dim + s.condition_width()));
  p.add("dec_dense1", nn::LayerWeights::dense(flat, s.decoder_dense_units));
  in_ch = s.bottleneck_channels();
  for (std::size_t j = 0; j < s.decoder_blocks; ++j) {
    const std::size_t out_ch = s.decoder_block_kernels(j);
    p.add("dec_conv" + std::to_string(j), nn::LayerWeights::conv1d(out_ch, in_ch, s.kernel_width));
    in_ch = out_ch;
  }
  nn::initialize_fan_in_uniform(p, seed);
  return p;
}

void Cvae::check_parameters(const nn::ModelParameters& params) const {
  const auto reference = make_parameters(0);
  if (params.layer_count() != reference.layer_count()) {
    throw ShapeError("parameter set has " + std::to_string(params.layer_count()) + " layers, model expects " +
                     std::to_string(reference.layer_count()));
  }
  for (std::size_t s = 0; s < reference.slot_count(); ++s) {
    if (params.tensor(s).dims() != reference.tensor(s).dims()) {
      throw ShapeError("parameter " + params.layer(s / 2).name + " has shape " +
                       nn::shape_string(params.tensor(s).dims()) + ", model expects " +
                       nn::shape_string(reference.tensor(s).dims()));
    }
  }
}

void Cvae::check_conditions(std::size_t batch, std::span<const std::uint32_t> modules) const {
  if (spec_.mode == Mode::vae) {
    if (!modules.empty()) throw DataError("vae mode takes no module condition");
    return;
  }
  if (modules.size() != batch) {
    throw DataError("cvae mode needs one module id per sample (got " + std::to_string(modules.size()) + " for batch " +
                    std::to_string(batch) + ")");
  }
  for (auto m : modules) {
    if (m >= spec_.module_count) {
      throw DataError("unseen module id " + std::to_string(m) + " (model trained on " +
                      std::to_string(spec_.module_count) + " modules)");
    }
  }
}

void Cvae::check_input(const Tensor& x, std::span<const std::uint32_t> modules) const {
  if (x.rank() != 3 || x.dim(1) != spec_.time_steps || x.dim(2) != spec_.channels) {
    throw ShapeError("model input must be batch x " + std::to_string(spec_.time_steps) + " x " +
                     std::to_string(spec_.channels) + ", got " + nn::shape_string(x.dims()));
  }
  check_conditions(x.dim(0), modules);
}

Cvae::EncoderVars Cvae::encode(Tape& tape, std::span<const Var> params, Var x,
                               std::span<const std::uint32_t> modules) const {
  const auto& s = spec_;
  const LayerIndex li{s.encoder_blocks};
  const std::size_t batch = tape.value(x).dim(0);
  Var h = x;
  for (std::size_t i = 0; i < s.encoder_blocks; ++i) {
    const std::size_t stride = i < s.strided_blocks ? 2 : 1;
    h = nn::conv1d(tape, h, kernel_of(params, li.enc_conv(i)), bias_of(params, li.enc_conv(i)), stride, Padding::same);
    h = nn::relu(tape, h);
  }
  h = nn::reshape(tape, h, {batch, s.bottleneck_time() * s.bottleneck_channels()});
  h = nn::relu(tape, nn::dense(tape, h, kernel_of(params, li.enc_dense()), bias_of(params, li.enc_dense())));
  if (s.mode == Mode::cvae) h = nn::concat_features(tape, h, tape.constant(one_hot_batch(modules, s.module_count)));
  const Var mu = nn::dense(tape, h, kernel_of(params, li.enc_mu()), bias_of(params, li.enc_mu()));
  const Var lv = nn::dense(tape, h, kernel_of(params, li.enc_logvar()), bias_of(params, li.enc_logvar()));
  return {mu, lv};
}

Var Cvae::decode(Tape& tape, std::span<const Var> params, Var z, std::span<const std::uint32_t> modules) const {
  const auto& s = spec_;
  const LayerIndex li{s.encoder_blocks};
  const std::size_t batch = tape.value(z).dim(0);
  Var h = z;
  if (s.mode == Mode::cvae) h = nn::concat_features(tape, h, tape.constant(one_hot_batch(modules, s.module_count)));
  h = nn::relu(tape, nn::dense(tape, h, kernel_of(params, li.dec_dense(0)), bias_of(params, li.dec_dense(0))));
  h = nn::relu(tape, nn::dense(tape, h, kernel_of(params, li.dec_dense(1)), bias_of(params, li.dec_dense(1))));
  h = nn::reshape(tape, h, {batch, s.bottleneck_time(), s.bottleneck_channels()});
  const std::size_t first_upsampling = s.decoder_blocks - s.strided_blocks;
  for (std::size_t j = 0; j < s.decoder_blocks; ++j) {
    if (j >= first_upsampling) h = nn::upsample_time(tape, h, 2);
    h = nn::conv1d(tape, h, kernel_of(params, li.dec_conv(j)), bias_of(params, li.dec_conv(j)), 1, Padding::same);
    if (j + 1 < s.decoder_blocks) h = nn::relu(tape, h);
  }
  return h;
}

Cvae::ForwardVars Cvae::forward(Tape& tape, std::span<const Var> params, Var x, std::span<const std::uint32_t> modules,
                                const LatentNoise& noise) const {
  check_input(tape.value(x), modules);
  const auto enc = encode(tape, params, x, modules);
  const std::size_t batch = tape.value(x).dim(0);
  Var z = enc.mu;
  if (noise.kind != LatentNoise::Kind::zero) {
    z = nn::reparameterize(tape, enc.mu, enc.logvar, noise.draw(batch, spec_.latent_dim));
  }
  const Var rec = decode(tape, params, z, modules);
  return {enc.mu, enc.logvar, z, rec};
}

Cvae::LossVars Cvae::loss(Tape& tape, std::span<const Var> params, Var x, std::span<const std::uint32_t> modules,
                          double eta, const LatentNoise& noise) const {
  if (!(eta >= 0.0)) throw ConfigError("eta must be nonnegative");
  const auto fwd = forward(tape, params, x, modules, noise);
  const Var rec = nn::mse(tape, x, fwd.reconstruction);
  const Var kld = nn::gaussian_kld(tape, fwd.mu, fwd.logvar, spec_.kld_reduction);
  const Var total = nn::weighted_add(tape, rec, kld, static_cast<float>(eta));
  return {fwd, rec, kld, total};
}

LatentDistribution Cvae::encode(const Tensor& x, std::span<const std::uint32_t> modules,
                                const nn::ModelParameters& params) const {
  check_input(x, modules);
  Tape tape;
  const auto vars = tape.bind(params);
  const auto enc = encode(tape, vars, tape.constant(x), modules);
  LatentDistribution d;
  d.mu = tape.value(enc.mu);
  d.logvar = tape.value(enc.logvar);
  d.epsilon = Tensor(d.mu.dims());
  d.z = d.mu;
  return d;
}

Tensor Cvae::decode(const Tensor& z, std::span<const std::uint32_t> modules, const nn::ModelParameters& params) const {
  if (z.rank() != 2 || z.dim(1) != spec_.latent_dim) {
    throw ShapeError("latent input must be batch x " + std::to_string(spec_.latent_dim) + ", got " +
                     nn::shape_string(z.dims()));
  }
  check_conditions(z.dim(0), modules);
  Tape tape;
  const auto vars = tape.bind(params);
  return tape.value(decode(tape, vars, tape.constant(z), modules));
}

Tensor Cvae::reconstruct(const Tensor& x, std::span<const std::uint32_t> modules, const nn::ModelParameters& params,
                         const LatentNoise& noise) const {
  Tape tape;
  const auto vars = tape.bind(params);
  return tape.value(forward(tape, vars, tape.constant(x), modules, noise).reconstruction);
}

LossBreakdown Cvae::loss(const Tensor& x, std::span<const std::uint32_t> modules, const nn::ModelParameters& params,
                         double eta, const LatentNoise& noise) const {
  Tape tape;
  const auto vars = tape.bind(params);
  const auto l = loss(tape, vars, tape.constant(x), modules, eta, noise);
  return breakdown(tape.value(l.reconstruction)[0], tape.value(l.kld)[0], eta);
}

LossAndGradients Cvae::loss_and_gradients(const Tensor& x, std::span<const std::uint32_t> modules,
                                          const nn::ModelParameters& params, double eta,
                                          const LatentNoise& noise) const {
  Tape tape;
  const auto vars = tape.bind(params);
  const auto l = loss(tape, vars, tape.constant(x), modules, eta, noise);
  LossAndGradients out;
  out.loss = breakdown(tape.value(l.reconstruction)[0], tape.value(l.kld)[0], eta);
  out.gradients = tape.backward(l.total);
  return out;
}

}  // namespace modwatch::model
