#pragma once

#include "cgrs/config.hpp"
#include "cgrs/types.hpp"

#include <torch/torch.h>

#include <optional>
#include <vector>

namespace cgrs {

// All public operations take and return images as (batch, 28, 28, 3) tensors
// in [-1, 1]; the modules themselves work channels-first.

// mean, logvar and the reparameterised sample, each (batch, latent_channels, 4, 4).
struct LatentBatch {
    torch::Tensor mean;
    torch::Tensor logvar;
    torch::Tensor sample;
};

class ConvBlockImpl : public torch::nn::Module {
public:
    ConvBlockImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv_{nullptr};
    torch::nn::BatchNorm2d bn_{nullptr};
};
TORCH_MODULE(ConvBlock);

// Per-domain encoder layers 1-2: 28x28 -> 14x14 -> 7x7.
class EncoderLowImpl : public torch::nn::Module {
public:
    explicit EncoderLowImpl(const ArchitectureConfig& arch);
    torch::Tensor forward(const torch::Tensor& x);

private:
    ConvBlock block1_{nullptr};
    ConvBlock block2_{nullptr};
};
TORCH_MODULE(EncoderLow);

// Shared encoder layers 3-4 plus the 1x1 mean/logvar heads: 7x7 -> 4x4.
class EncoderHighImpl : public torch::nn::Module {
public:
    explicit EncoderHighImpl(const ArchitectureConfig& arch);
    std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& x);

private:
    ConvBlock block3_{nullptr};
    ConvBlock block4_{nullptr};
    torch::nn::Conv2d mean_head_{nullptr};
    torch::nn::Conv2d logvar_head_{nullptr};
};
TORCH_MODULE(EncoderHigh);

// Additive N(0, sigma^2) perturbation of low-stack pre-activations.
struct GraftNoise {
    double sigma = 0.0;
    std::optional<torch::Generator> generator;
};

// One transposed-convolution layer; batch norm + leaky ReLU, or tanh on the last.
class DecoderLayerImpl : public torch::nn::Module {
public:
    DecoderLayerImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride,
                     std::int64_t padding, std::int64_t output_padding, bool last);
    torch::Tensor forward(const torch::Tensor& x, const GraftNoise* noise = nullptr);
    std::int64_t in_channels() const { return deconv_->weight.size(0); }

private:
    torch::nn::ConvTranspose2d deconv_{nullptr};
    torch::nn::BatchNorm2d bn_{nullptr};
    bool last_;
};
TORCH_MODULE(DecoderLayer);

class DecoderImpl : public torch::nn::Module {
public:
    explicit DecoderImpl(const ArchitectureConfig& arch);
    // Runs layers [begin, end); indices are 0-based.
    torch::Tensor forward_layers(torch::Tensor x, int begin, int end, const GraftNoise* noise = nullptr);
    torch::Tensor forward(const torch::Tensor& z) { return forward_layers(z, 0, kDecoderDepth); }
    DecoderLayer layer(int index) const { return layers_.at(static_cast<std::size_t>(index)); }
    // Output shape of layer `index` for one sample: (channels, height, width).
    static std::array<std::int64_t, 3> layer_output_shape(const ArchitectureConfig& arch, int index);

private:
    std::vector<DecoderLayer> layers_;
};
TORCH_MODULE(Decoder);

class ResidualBlockImpl : public torch::nn::Module {
public:
    explicit ResidualBlockImpl(std::int64_t width);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv1_{nullptr};
    torch::nn::BatchNorm2d bn1_{nullptr};
    torch::nn::Conv2d conv2_{nullptr};
    torch::nn::BatchNorm2d bn2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

// Image-to-image generator: out = hardtanh(x + branch(x)) where the branch is
// a stride-1 3x3 ResNet. A zero branch makes it the identity.
class GeneratorImpl : public torch::nn::Module {
public:
    explicit GeneratorImpl(const ArchitectureConfig& arch);
    torch::Tensor forward(const torch::Tensor& x);
    torch::Tensor branch(const torch::Tensor& x);

private:
    torch::nn::Conv2d input_{nullptr};
    std::vector<ResidualBlock> blocks_;
    torch::nn::Conv2d output_{nullptr};
};
TORCH_MODULE(Generator);

struct DiscriminatorOutput {
    torch::Tensor domain_logit;  // (batch)
    torch::Tensor domain_prob;   // sigmoid(domain_logit), in (0, 1)
    torch::Tensor class_logits;  // (batch, 10)
    torch::Tensor features;      // (batch, disc_feature_width), the top fully connected layer
};

// Four stride-2 3x3 convolutions, one fully connected feature layer, then a
// domain head and a 10-way class head (the task classifier).
class DiscriminatorImpl : public torch::nn::Module {
public:
    explicit DiscriminatorImpl(const ArchitectureConfig& arch);
    DiscriminatorOutput forward(const torch::Tensor& x);

private:
    std::vector<torch::nn::Conv2d> convs_;
    torch::nn::Linear top_{nullptr};
    torch::nn::Linear domain_head_{nullptr};
    torch::nn::Linear class_head_{nullptr};
};
TORCH_MODULE(Discriminator);

class VaePairImpl : public torch::nn::Module {
public:
    explicit VaePairImpl(const ArchitectureConfig& arch);

    EncoderLow encoder_low(Domain d) const { return d == Domain::source ? encoder_low_s : encoder_low_t; }
    Decoder decoder(Domain d) const { return d == Domain::source ? decoder_s : decoder_t; }

    EncoderLow encoder_low_s{nullptr};
    EncoderLow encoder_low_t{nullptr};
    EncoderHigh encoder_high_shared{nullptr};
    Decoder decoder_s{nullptr};
    Decoder decoder_t{nullptr};
    ArchitectureConfig arch;
};
TORCH_MODULE(VaePair);

class AlignmentHeadsImpl : public torch::nn::Module {
public:
    explicit AlignmentHeadsImpl(const ArchitectureConfig& arch);

    Generator generator(GraftChannel c) const { return c.index() == 0 ? generator_1 : generator_2; }
    Discriminator discriminator(GraftChannel c) const { return c.index() == 0 ? discriminator_1 : discriminator_2; }

    Generator generator_1{nullptr};
    Generator generator_2{nullptr};
    Discriminator discriminator_1{nullptr};
    Discriminator discriminator_2{nullptr};
};
TORCH_MODULE(AlignmentHeads);

class CgrsModelImpl : public torch::nn::Module {
public:
    explicit CgrsModelImpl(const ArchitectureConfig& arch);

    VaePair vae{nullptr};
    AlignmentHeads heads{nullptr};
};
TORCH_MODULE(CgrsModel);

// Parameters initialised from config.seed (reseeds the global libtorch RNG).
CgrsModel build_model(const ExperimentConfig& config);

// Parameter groups by role; their union is every trainable parameter exactly once.
std::vector<torch::Tensor> encoder_parameters(const VaePair& vae);
std::vector<torch::Tensor> decoder_parameters(const VaePair& vae);
std::vector<torch::Tensor> generator_parameters(const AlignmentHeads& heads);
std::vector<torch::Tensor> discriminator_parameters(const AlignmentHeads& heads);

// noise: same shape as the latent mean; drawn from N(0, I) (using `generator`
// when given) when absent.
LatentBatch encode(VaePair& vae, const torch::Tensor& images, Domain domain,
                   const std::optional<torch::Tensor>& noise = std::nullopt,
                   std::optional<torch::Generator> generator = std::nullopt);
torch::Tensor decode(VaePair& vae, const torch::Tensor& z, Domain domain);
inline torch::Tensor decode(VaePair& vae, const LatentBatch& z, Domain domain) { return decode(vae, z.sample, domain); }

// First split.n_high layers of decoder(channel.high_domain), then the last
// split.n_low layers of decoder(channel.low_domain).
torch::Tensor graft(VaePair& vae, const torch::Tensor& z, GraftChannel channel, StackSplit split,
                    const GraftNoise* noise = nullptr);
inline torch::Tensor graft(VaePair& vae, const LatentBatch& z, GraftChannel channel, StackSplit split,
                           const GraftNoise* noise = nullptr) {
    return graft(vae, z.sample, channel, split, noise);
}

torch::Tensor generate(AlignmentHeads& heads, const torch::Tensor& association, GraftChannel channel);
DiscriminatorOutput discriminate(AlignmentHeads& heads, const torch::Tensor& images, GraftChannel channel);

// NHWC <-> NCHW.
torch::Tensor to_channels_first(const torch::Tensor& images);
torch::Tensor to_channels_last(const torch::Tensor& images);

}  // namespace cgrs
