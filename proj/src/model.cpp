#include "pnet/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace pnet {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::ResUNet: return "resunet";
    case Variant::DilResUNet: return "dilresunet";
    case Variant::LGMPResUNet: return "lgmpresunet";
    case Variant::PerceptiveNet: return "perceptivenet";
  }
  return "?";
}

std::string_view to_string(FirstLayer f) {
  switch (f) {
    case FirstLayer::Conv: return "conv";
    case FirstLayer::Gabor: return "gabor";
    case FirstLayer::LogGabor: return "loggabor";
  }
  return "?";
}

Variant parse_variant(std::string_view s) {
  for (auto v : {Variant::ResUNet, Variant::DilResUNet, Variant::LGMPResUNet, Variant::PerceptiveNet})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown variant '" + std::string(s) +
                              "' (expected resunet, dilresunet, lgmpresunet or perceptivenet)");
}

FirstLayer parse_first_layer(std::string_view s) {
  for (auto f : {FirstLayer::Conv, FirstLayer::Gabor, FirstLayer::LogGabor})
    if (to_string(f) == s) return f;
  throw std::invalid_argument("unknown first layer '" + std::string(s) + "' (expected conv, gabor or loggabor)");
}

VariantTraits traits_of(Variant v) {
  switch (v) {
    case Variant::ResUNet: return {FirstLayer::Conv, Downsample::Strided, false};
    case Variant::DilResUNet: return {FirstLayer::Conv, Downsample::Strided, true};
    case Variant::LGMPResUNet: return {FirstLayer::LogGabor, Downsample::MixPool, false};
    case Variant::PerceptiveNet: return {FirstLayer::LogGabor, Downsample::MixPool, true};
  }
  throw std::logic_error("unreachable variant");
}

void ModelConfig::validate() const {
  std::vector<std::string> bad;
  if (n_classes < 2 || n_classes > 256) bad.push_back("n_classes=" + std::to_string(n_classes) + " (need 2..256)");
  if (depth < 2 || depth > 6) bad.push_back("depth=" + std::to_string(depth) + " (need 2..6)");
  if (base_channels < 4) bad.push_back("base_channels=" + std::to_string(base_channels) + " (need >= 4)");
  if (loggabor_kernel < 1 || loggabor_kernel % 2 == 0)
    bad.push_back("loggabor_kernel=" + std::to_string(loggabor_kernel) + " (need a positive odd size)");
  if (!(mix_alpha >= 0.0 && mix_alpha <= 1.0)) bad.push_back("mix_alpha (need 0 <= alpha <= 1)");
  try {
    DilatedSpec{dilation_rates}.validate();
  } catch (const std::exception& e) {
    bad.push_back(std::string("dilation_rates (") + e.what() + ")");
  }
  if (bad.empty()) return;
  std::string msg = "invalid model config:";
  for (const auto& b : bad) msg += " " + b + ";";
  throw std::invalid_argument(msg);
}

int level_channels(const ModelConfig& config, int level) { return config.base_channels << level; }

template <typename Scalar>
SegModel<Scalar>::SegModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const auto traits = traits_of(config_.variant);
  const Index c0 = level_channels(config_, 0);

  switch (config_.effective_first_layer()) {
    case FirstLayer::Conv:
      first_ = Conv2dLayer<Scalar>(store_, "first", 3, c0, 3, ConvOptions{1, 1, 1}, false, rng);
      break;
    case FirstLayer::Gabor:
      first_ = GaborConv2d<Scalar>(store_, "first", 3, c0, config_.loggabor_kernel, rng());
      break;
    case FirstLayer::LogGabor:
      first_ = LogGaborConv2d<Scalar>(store_, "first", 3, c0, config_.loggabor_kernel, rng());
      break;
  }
  stem_bn_ = BatchNorm2dLayer<Scalar>(store_, "stem.bn", c0);
  stem_conv_ = Conv2dLayer<Scalar>(store_, "stem.conv", c0, c0, 3, ConvOptions{1, 1, 1}, false, rng);
  stem_skip_ = Conv2dLayer<Scalar>(store_, "stem.skip", 3, c0, 1, ConvOptions{1, 0, 1}, false, rng);
  stem_skip_bn_ = BatchNorm2dLayer<Scalar>(store_, "stem.bn_skip", c0);

  EncoderBlockOptions enc;
  enc.downsample = traits.downsample;
  enc.pool.alpha = config_.mix_alpha;
  enc.dilated = traits.dilated ? std::optional<DilatedSpec>(DilatedSpec{config_.dilation_rates}) : std::nullopt;
  for (int level = 1; level <= config_.depth; ++level) {
    const std::string name = level == config_.depth ? "bridge" : "enc" + std::to_string(level);
    encoder_.emplace_back(store_, name, level_channels(config_, level - 1), level_channels(config_, level), enc,
                          rng);
  }
  for (int level = config_.depth - 1; level >= 0; --level) {
    const std::string name = "dec" + std::to_string(config_.depth - level);
    decoder_.emplace_back(store_, name, level_channels(config_, level + 1), level_channels(config_, level),
                          level_channels(config_, level), enc.dilated, rng);
  }
  head_ = Conv2dLayer<Scalar>(store_, "head", c0, config_.n_classes, 1, ConvOptions{1, 0, 1}, true, rng);
}

template <typename Scalar>
typename SegModel<Scalar>::Output SegModel<Scalar>::forward(Graph<Scalar>& g, Var<Scalar> input, bool training) const {
  const auto& s = input.shape();
  const Index factor = Index(1) << config_.depth;
  if (s.c != 3) throw ShapeError("model expects 3 input channels, got " + s.str());
  if (s.h % factor != 0 || s.w % factor != 0)
    throw ShapeError("input spatial extent " + s.str() + " must be divisible by 2^depth = " + std::to_string(factor));

  auto first = std::visit([&](const auto& layer) { return layer.forward(g, input); }, first_);
  auto h = stem_conv_.forward(g, relu(stem_bn_.forward(g, first, training)));
  h = add(h, stem_skip_bn_.forward(g, stem_skip_.forward(g, input), training));

  std::vector<Var<Scalar>> skips{h};
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    h = encoder_[i].forward(g, h, training);
    if (i + 1 < encoder_.size()) skips.push_back(h);
  }
  for (std::size_t j = 0; j < decoder_.size(); ++j) h = decoder_[j].forward(g, h, skips[skips.size() - 1 - j], training);
  return {head_.forward(g, h), h};
}

template <typename Scalar>
Tensor<Scalar> SegModel<Scalar>::predict_logits(const Tensor<Scalar>& input) const {
  Graph<Scalar> g(false);
  return forward(g, g.constant(input), false).logits.value();
}

template <typename Scalar>
std::vector<std::string> SegModel<Scalar>::describe() const {
  std::vector<std::string> out;
  out.push_back("first:" + std::string(to_string(config_.effective_first_layer())));
  out.push_back("stem:plain");
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    const bool bridge = i + 1 == encoder_.size();
    out.push_back((bridge ? std::string("bridge") : "enc" + std::to_string(i + 1)) + ":" + encoder_[i].describe());
  }
  for (std::size_t j = 0; j < decoder_.size(); ++j)
    out.push_back("dec" + std::to_string(j + 1) + ":" + decoder_[j].describe());
  out.push_back("head:conv1x1");
  return out;
}

template <typename Scalar>
SegModel<Scalar> build_model(const ModelConfig& config, std::uint64_t seed) {
  return SegModel<Scalar>(config, seed);
}

// ---- Checkpoints ----

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::filesystem::path& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("truncated checkpoint " + path.string());
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

std::uint64_t get_u64(std::istream& is, const std::filesystem::path& path) {
  const std::uint64_t lo = get_u32(is, path);
  return lo | std::uint64_t(get_u32(is, path)) << 32;
}

constexpr std::uint32_t kMaxNameLength = 1u << 16;
constexpr std::uint32_t kMaxRank = 8;

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  os.write("PNET", 4);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_u32(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.dims.size()));
    std::uint64_t count = 1;
    for (auto d : t.dims) {
      put_u32(os, d);
      count *= d;
    }
    if (count != t.values.size()) throw CheckpointError("tensor '" + t.name + "' payload does not match its dims");
    put_u32(os, t.width);
    if (t.width == 8) {
      for (double v : t.values) put_u64(os, std::bit_cast<std::uint64_t>(v));
    } else if (t.width == 4) {
      for (double v : t.values) put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      throw CheckpointError("tensor '" + t.name + "' has unsupported element width " + std::to_string(t.width));
    }
  }
  if (!os) throw CheckpointError("failed writing checkpoint " + path.string());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "PNET", 4) != 0)
    throw CheckpointError("bad checkpoint magic in " + path.string());
  const auto version = get_u32(is, path);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  const auto count = get_u32(is, path);
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto len = get_u32(is, path);
    if (len > kMaxNameLength) throw CheckpointError("corrupt tensor name length in " + path.string());
    t.name.resize(len);
    if (!is.read(t.name.data(), len)) throw CheckpointError("truncated checkpoint " + path.string());
    const auto rank = get_u32(is, path);
    if (rank > kMaxRank) throw CheckpointError("corrupt tensor rank in " + path.string());
    std::uint64_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.dims.push_back(get_u32(is, path));
      n *= t.dims.back();
    }
    if (n > (std::uint64_t(1) << 32)) throw CheckpointError("corrupt tensor extent in " + path.string());
    t.width = get_u32(is, path);
    t.values.resize(n);
    if (t.width == 8) {
      for (auto& v : t.values) v = std::bit_cast<double>(get_u64(is, path));
    } else if (t.width == 4) {
      for (auto& v : t.values) v = std::bit_cast<float>(get_u32(is, path));
    } else {
      throw CheckpointError("corrupt element width in " + path.string());
    }
    out.push_back(std::move(t));
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw CheckpointError("trailing bytes after last tensor in " + path.string());
  return out;
}

NamedTensor encode_config(const ModelConfig& c) {
  std::vector<double> v{
      1.0,
      double(static_cast<int>(c.variant)),
      c.first_layer ? double(static_cast<int>(*c.first_layer)) : -1.0,
      double(c.base_channels),
      double(c.depth),
      double(c.n_classes),
      double(c.loggabor_kernel),
      c.mix_alpha,
      double(c.dilation_rates.size()),
  };
  for (int r : c.dilation_rates) v.push_back(double(r));
  return {kConfigTensorName, {1, 1, 1, static_cast<std::uint32_t>(v.size())}, v, 8};
}

ModelConfig decode_config(const NamedTensor& t) {
  const auto& v = t.values;
  if (v.size() < 9 || v[0] != 1.0 || v.size() != 9 + std::size_t(v[8]))
    throw CheckpointError("malformed model config record");
  ModelConfig c;
  const int variant = int(v[1]);
  if (variant < 0 || variant > 3) throw CheckpointError("unknown variant code in checkpoint");
  c.variant = static_cast<Variant>(variant);
  if (v[2] >= 0.0) {
    if (v[2] > 2.0) throw CheckpointError("unknown first-layer code in checkpoint");
    c.first_layer = static_cast<FirstLayer>(int(v[2]));
  }
  c.base_channels = int(v[3]);
  c.depth = int(v[4]);
  c.n_classes = int(v[5]);
  c.loggabor_kernel = int(v[6]);
  c.mix_alpha = v[7];
  c.dilation_rates.clear();
  for (std::size_t i = 9; i < v.size(); ++i) c.dilation_rates.push_back(int(v[i]));
  c.validate();
  return c;
}

template <typename Scalar>
void save_checkpoint(const SegModel<Scalar>& model, const std::filesystem::path& path) {
  std::vector<NamedTensor> tensors{encode_config(model.config())};
  const auto& store = model.parameters();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store[i];
    const auto& s = p.value.shape();
    NamedTensor t{p.name,
                  {std::uint32_t(s.n), std::uint32_t(s.c), std::uint32_t(s.h), std::uint32_t(s.w)},
                  std::vector<double>(static_cast<std::size_t>(p.value.size())),
                  sizeof(Scalar)};
    for (Index k = 0; k < p.value.size(); ++k) t.values[std::size_t(k)] = static_cast<double>(p.value[k]);
    tensors.push_back(std::move(t));
  }
  write_checkpoint(path, tensors);
}

template <typename Scalar>
void load_parameters(SegModel<Scalar>& model, const std::vector<NamedTensor>& tensors) {
  auto& store = model.parameters();
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) {
    if (t.name == kConfigTensorName) continue;
    if (!store.contains(t.name)) throw CheckpointError("checkpoint tensor '" + t.name + "' has no model counterpart");
    by_name[t.name] = &t;
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint is missing tensor '" + p.name + "'");
    const auto& t = *it->second;
    const auto& s = p.value.shape();
    const std::vector<std::uint32_t> want{std::uint32_t(s.n), std::uint32_t(s.c), std::uint32_t(s.h),
                                          std::uint32_t(s.w)};
    if (t.dims != want) throw CheckpointError("checkpoint tensor '" + t.name + "' has mismatched dims");
    for (Index k = 0; k < p.value.size(); ++k) p.value[k] = static_cast<Scalar>(t.values[std::size_t(k)]);
  }
}

template <typename Scalar>
SegModel<Scalar> load_checkpoint(const std::filesystem::path& path) {
  const auto tensors = read_checkpoint(path);
  const NamedTensor* cfg = nullptr;
  for (const auto& t : tensors)
    if (t.name == kConfigTensorName) cfg = &t;
  if (!cfg) throw CheckpointError("checkpoint " + path.string() + " carries no model config record");
  SegModel<Scalar> model(decode_config(*cfg), 0);
  load_parameters(model, tensors);
  return model;
}

template class SegModel<float>;
template class SegModel<double>;
template SegModel<float> build_model<float>(const ModelConfig&, std::uint64_t);
template SegModel<double> build_model<double>(const ModelConfig&, std::uint64_t);
template void save_checkpoint(const SegModel<float>&, const std::filesystem::path&);
template void save_checkpoint(const SegModel<double>&, const std::filesystem::path&);
template SegModel<float> load_checkpoint<float>(const std::filesystem::path&);
template SegModel<double> load_checkpoint<double>(const std::filesystem::path&);
template void load_parameters(SegModel<float>&, const std::vector<NamedTensor>&);
template void load_parameters(SegModel<double>&, const std::vector<NamedTensor>&);

}  // namespace pnet
