#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pnet/autograd.hpp"
#include "pnet/layers.hpp"

namespace pnet {

enum class Variant { ResUNet, DilResUNet, LGMPResUNet, PerceptiveNet };
enum class FirstLayer { Conv, Gabor, LogGabor };

std::string_view to_string(Variant v);
std::string_view to_string(FirstLayer f);
Variant parse_variant(std::string_view s);
FirstLayer parse_first_layer(std::string_view s);

/// Layer kinds implied by a variant.
struct VariantTraits {
  FirstLayer first_layer;
  Downsample downsample;
  bool dilated;
};
VariantTraits traits_of(Variant v);

struct ModelConfig {
  Variant variant = Variant::PerceptiveNet;
  // Overrides the variant's first layer when set.
  std::optional<FirstLayer> first_layer;
  int base_channels = 64;
  int depth = 3;
  int n_classes = 2;
  int loggabor_kernel = 7;
  double mix_alpha = 0.8;
  std::vector<int> dilation_rates{1, 3, 6, 9};

  FirstLayer effective_first_layer() const { return first_layer.value_or(traits_of(variant).first_layer); }
  /// Throws std::invalid_argument listing every offending field.
  void validate() const;
};

/// Encoder/bridge/decoder segmentation network with skip connections between matching levels.
template <typename Scalar>
class SegModel {
 public:
  using FirstLayerModule = std::variant<Conv2dLayer<Scalar>, GaborConv2d<Scalar>, LogGaborConv2d<Scalar>>;

  struct Output {
    Var<Scalar> logits;
    Var<Scalar> features;  // input to the final 1x1 projection
  };

  SegModel(const ModelConfig& config, std::uint64_t seed);
  SegModel(SegModel&&) = default;

  /// (n, 3, H, W) -> (n, n_classes, H, W); H and W must be divisible by 2^depth.
  Output forward(Graph<Scalar>& g, Var<Scalar> input, bool training) const;
  Tensor<Scalar> predict_logits(const Tensor<Scalar>& input) const;

  const ModelConfig& config() const { return config_; }
  ParameterStore<Scalar>& parameters() { return store_; }
  const ParameterStore<Scalar>& parameters() const { return store_; }
  const FirstLayerModule& first_layer() const { return first_; }
  const Conv2dLayer<Scalar>& head() const { return head_; }
  const std::vector<EncoderResBlock<Scalar>>& encoder() const { return encoder_; }
  const std::vector<DecoderResBlock<Scalar>>& decoder() const { return decoder_; }

  /// One line per layer group, e.g. "first:loggabor", "enc1:mixpool+dilated".
  std::vector<std::string> describe() const;

 private:
  ModelConfig config_;
  ParameterStore<Scalar> store_;
  FirstLayerModule first_;
  BatchNorm2dLayer<Scalar> stem_bn_, stem_skip_bn_;
  Conv2dLayer<Scalar> stem_conv_, stem_skip_;
  std::vector<EncoderResBlock<Scalar>> encoder_;  // depth blocks; the last is the bridge
  std::vector<DecoderResBlock<Scalar>> decoder_;
  Conv2dLayer<Scalar> head_;
};

template <typename Scalar>
SegModel<Scalar> build_model(const ModelConfig& config, std::uint64_t seed);

/// Channel width of encoder level i (0 = stem, depth = bridge).
int level_channels(const ModelConfig& config, int level);

// ---- Checkpoints ----------------------------------------------------------------------------
//
// "PNET" | u32 version | u32 count | { u32 name_len | name | u32 rank | u32 dims[rank] | u32 width | payload }
// width is the element size in bytes: 4 (f32) or 8 (f64). All fields little-endian. Tensors are stored rank 4 (NCHW).

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kConfigTensorName = "__model_config__";

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
  std::uint32_t width = 4;  // bytes per stored element
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

/// Writes every parameter and buffer plus an encoded ModelConfig record.
template <typename Scalar>
void save_checkpoint(const SegModel<Scalar>& model, const std::filesystem::path& path);

/// Rebuilds the model described by the checkpoint and loads its tensors.
template <typename Scalar>
SegModel<Scalar> load_checkpoint(const std::filesystem::path& path);

/// Loads tensors into an existing model; names and shapes must match exactly.
template <typename Scalar>
void load_parameters(SegModel<Scalar>& model, const std::vector<NamedTensor>& tensors);

NamedTensor encode_config(const ModelConfig& config);
ModelConfig decode_config(const NamedTensor& t);

}  // namespace pnet
