#include "cgrs/networks.hpp"

#include "cgrs/error.hpp"

#include <sstream>

namespace cgrs {

namespace nn = torch::nn;

namespace {

constexpr double kLeakySlope = 0.2;
constexpr int kLatentSpatial = 4;

std::string shape_string(const torch::Tensor& t) {
    std::ostringstream out;
    out << t.sizes();
    return out.str();
}

void check_images(const torch::Tensor& images, const char* op) {
    if (!images.defined() || images.dim() != 4 || images.size(1) != kImageSize || images.size(2) != kImageSize ||
        images.size(3) != kImageChannels) {
        throw ContractViolation(std::string(op) + ": expected images of shape (batch, 28, 28, 3), got " +
                                (images.defined() ? shape_string(images) : std::string("undefined")));
    }
}

void check_latent(const VaePair& vae, const torch::Tensor& z, const char* op) {
    if (!z.defined() || z.dim() != 4 || z.size(1) != vae->arch.latent_channels || z.size(2) != kLatentSpatial ||
        z.size(3) != kLatentSpatial) {
        throw ContractViolation(std::string(op) + ": expected latent of shape (batch, " +
                                std::to_string(vae->arch.latent_channels) + ", 4, 4), got " +
                                (z.defined() ? shape_string(z) : std::string("undefined")));
    }
}

struct DecoderLayerSpec {
    std::int64_t out;
    std::int64_t kernel;
    std::int64_t stride;
    std::int64_t padding;
    std::int64_t output_padding;
    std::int64_t spatial;
};

// 4x4 -> 4 -> 7 -> 14 -> 28 -> 28 -> 28.
std::array<DecoderLayerSpec, kDecoderDepth> decoder_specs(const ArchitectureConfig& arch) {
    const auto w = arch.base_width;
    return {{
        {8 * w, 3, 1, 1, 0, 4},
        {4 * w, 3, 2, 1, 0, 7},
        {2 * w, 5, 2, 2, 1, 14},
        {w, 5, 2, 2, 1, 28},
        {w / 2, 3, 1, 1, 0, 28},
        {kImageChannels, 3, 1, 1, 0, 28},
    }};
}

}  // namespace

torch::Tensor to_channels_first(const torch::Tensor& images) { return images.permute({0, 3, 1, 2}).contiguous(); }
torch::Tensor to_channels_last(const torch::Tensor& images) { return images.permute({0, 2, 3, 1}).contiguous(); }

ConvBlockImpl::ConvBlockImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride)
    : conv_(register_module("conv", nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2)))),
      bn_(register_module("bn", nn::BatchNorm2d(out))) {}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
    return torch::leaky_relu(bn_(conv_(x)), kLeakySlope);
}

EncoderLowImpl::EncoderLowImpl(const ArchitectureConfig& arch)
    : block1_(register_module("block1", ConvBlock(kImageChannels, arch.base_width, 5, 2))),
      block2_(register_module("block2", ConvBlock(arch.base_width, 2 * arch.base_width, 5, 2))) {}

torch::Tensor EncoderLowImpl::forward(const torch::Tensor& x) { return block2_(block1_(x)); }

EncoderHighImpl::EncoderHighImpl(const ArchitectureConfig& arch)
    : block3_(register_module("block3", ConvBlock(2 * arch.base_width, 4 * arch.base_width, 3, 2))),
      block4_(register_module("block4", ConvBlock(4 * arch.base_width, 8 * arch.base_width, 3, 1))),
      mean_head_(register_module("mean_head",
                                 nn::Conv2d(nn::Conv2dOptions(8 * arch.base_width, arch.latent_channels, 1)))),
      logvar_head_(register_module("logvar_head",
                                   nn::Conv2d(nn::Conv2dOptions(8 * arch.base_width, arch.latent_channels, 1)))) {}

std::pair<torch::Tensor, torch::Tensor> EncoderHighImpl::forward(const torch::Tensor& x) {
    const auto h = block4_(block3_(x));
    return {mean_head_(h), logvar_head_(h)};
}

DecoderLayerImpl::DecoderLayerImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride,
                                   std::int64_t padding, std::int64_t output_padding, bool last)
    : deconv_(register_module("deconv", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, kernel)
                                                                 .stride(stride)
                                                                 .padding(padding)
                                                                 .output_padding(output_padding)))),
      last_(last) {
    if (!last_) bn_ = register_module("bn", nn::BatchNorm2d(out));
}

torch::Tensor DecoderLayerImpl::forward(const torch::Tensor& x, const GraftNoise* noise) {
    auto h = deconv_(x);
    if (!last_) h = bn_(h);
    if (noise != nullptr && noise->sigma > 0.0) {
        h = h + torch::randn(h.sizes(), noise->generator, h.options()) * noise->sigma;
    }
    return last_ ? torch::tanh(h) : torch::leaky_relu(h, kLeakySlope);
}

DecoderImpl::DecoderImpl(const ArchitectureConfig& arch) {
    std::int64_t in = arch.latent_channels;
    const auto specs = decoder_specs(arch);
    for (int i = 0; i < kDecoderDepth; ++i) {
        const auto& s = specs[static_cast<std::size_t>(i)];
        layers_.push_back(register_module("layer" + std::to_string(i + 1),
                                          DecoderLayer(in, s.out, s.kernel, s.stride, s.padding, s.output_padding,
                                                       i == kDecoderDepth - 1)));
        in = s.out;
    }
}

std::array<std::int64_t, 3> DecoderImpl::layer_output_shape(const ArchitectureConfig& arch, int index) {
    const auto s = decoder_specs(arch).at(static_cast<std::size_t>(index));
    return {s.out, s.spatial, s.spatial};
}

torch::Tensor DecoderImpl::forward_layers(torch::Tensor x, int begin, int end, const GraftNoise* noise) {
    for (int i = begin; i < end; ++i) x = layers_[static_cast<std::size_t>(i)]->forward(x, noise);
    return x;
}

ResidualBlockImpl::ResidualBlockImpl(std::int64_t width)
    : conv1_(register_module("conv1", nn::Conv2d(nn::Conv2dOptions(width, width, 3).padding(1)))),
      bn1_(register_module("bn1", nn::BatchNorm2d(width))),
      conv2_(register_module("conv2", nn::Conv2d(nn::Conv2dOptions(width, width, 3).padding(1)))),
      bn2_(register_module("bn2", nn::BatchNorm2d(width))) {}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
    return x + bn2_(conv2_(torch::relu(bn1_(conv1_(x)))));
}

GeneratorImpl::GeneratorImpl(const ArchitectureConfig& arch)
    : input_(register_module("input", nn::Conv2d(nn::Conv2dOptions(kImageChannels, arch.generator_width, 3).padding(1)))) {
    for (std::int64_t b = 0; b < arch.generator_blocks; ++b) {
        blocks_.push_back(register_module("block" + std::to_string(b + 1), ResidualBlock(arch.generator_width)));
    }
    output_ = register_module("output", nn::Conv2d(nn::Conv2dOptions(arch.generator_width, kImageChannels, 3).padding(1)));
}

torch::Tensor GeneratorImpl::branch(const torch::Tensor& x) {
    auto h = torch::relu(input_(x));
    for (auto& block : blocks_) h = block(h);
    return output_(h);
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x) { return torch::hardtanh(x + branch(x)); }

DiscriminatorImpl::DiscriminatorImpl(const ArchitectureConfig& arch) {
    std::int64_t in = kImageChannels;
    std::int64_t width = arch.disc_width;
    for (int i = 0; i < 4; ++i) {
        convs_.push_back(register_module("conv" + std::to_string(i + 1),
                                         nn::Conv2d(nn::Conv2dOptions(in, width, 3).stride(2).padding(1))));
        in = width;
        width *= 2;
    }
    // 28 -> 14 -> 7 -> 4 -> 2
    top_ = register_module("top", nn::Linear(in * 2 * 2, arch.disc_feature_width));
    domain_head_ = register_module("domain_head", nn::Linear(arch.disc_feature_width, 1));
    class_head_ = register_module("class_head", nn::Linear(arch.disc_feature_width, kNumClasses));
}

DiscriminatorOutput DiscriminatorImpl::forward(const torch::Tensor& x) {
    auto h = x;
    for (auto& conv : convs_) h = torch::leaky_relu(conv(h), kLeakySlope);
    auto features = torch::leaky_relu(top_(h.flatten(1)), kLeakySlope);
    auto domain_logit = domain_head_(features).squeeze(1);
    return DiscriminatorOutput{domain_logit, torch::sigmoid(domain_logit), class_head_(features), features};
}

VaePairImpl::VaePairImpl(const ArchitectureConfig& arch_config) : arch(arch_config) {
    encoder_low_s = register_module("encoder_low_s", EncoderLow(arch));
    encoder_low_t = register_module("encoder_low_t", EncoderLow(arch));
    encoder_high_shared = register_module("encoder_high_shared", EncoderHigh(arch));
    decoder_s = register_module("decoder_s", Decoder(arch));
    decoder_t = register_module("decoder_t", Decoder(arch));
}

AlignmentHeadsImpl::AlignmentHeadsImpl(const ArchitectureConfig& arch) {
    generator_1 = register_module("generator_1", Generator(arch));
    generator_2 = register_module("generator_2", Generator(arch));
    discriminator_1 = register_module("discriminator_1", Discriminator(arch));
    discriminator_2 = register_module("discriminator_2", Discriminator(arch));
}

CgrsModelImpl::CgrsModelImpl(const ArchitectureConfig& arch) {
    vae = register_module("vae", VaePair(arch));
    heads = register_module("heads", AlignmentHeads(arch));
}

CgrsModel build_model(const ExperimentConfig& config) {
    config.split.validate();
    torch::manual_seed(config.seed);
    return CgrsModel(config.arch);
}

namespace {

void append(std::vector<torch::Tensor>& out, const torch::nn::Module& module) {
    for (const auto& p : module.parameters()) out.push_back(p);
}

}  // namespace

std::vector<torch::Tensor> encoder_parameters(const VaePair& vae) {
    std::vector<torch::Tensor> out;
    append(out, *vae->encoder_low_s);
    append(out, *vae->encoder_low_t);
    append(out, *vae->encoder_high_shared);
    return out;
}

std::vector<torch::Tensor> decoder_parameters(const VaePair& vae) {
    std::vector<torch::Tensor> out;
    append(out, *vae->decoder_s);
    append(out, *vae->decoder_t);
    return out;
}

std::vector<torch::Tensor> generator_parameters(const AlignmentHeads& heads) {
    std::vector<torch::Tensor> out;
    append(out, *heads->generator_1);
    append(out, *heads->generator_2);
    return out;
}

std::vector<torch::Tensor> discriminator_parameters(const AlignmentHeads& heads) {
    std::vector<torch::Tensor> out;
    append(out, *heads->discriminator_1);
    append(out, *heads->discriminator_2);
    return out;
}

LatentBatch encode(VaePair& vae, const torch::Tensor& images, Domain domain, const std::optional<torch::Tensor>& noise,
                   std::optional<torch::Generator> generator) {
    check_images(images, "encode");
    auto [mean, logvar] = vae->encoder_high_shared(vae->encoder_low(domain)(to_channels_first(images)));
    torch::Tensor eps;
    if (noise) {
        if (noise->sizes() != mean.sizes()) {
            throw ContractViolation("encode: noise shape " + shape_string(*noise) + " differs from latent shape " +
                                    shape_string(mean));
        }
        eps = noise->to(mean.dtype());
    } else {
        eps = torch::randn(mean.sizes(), generator, mean.options());
    }
    auto sample = mean + torch::exp(0.5 * logvar) * eps;
    return LatentBatch{mean, logvar, sample};
}

torch::Tensor decode(VaePair& vae, const torch::Tensor& z, Domain domain) {
    check_latent(vae, z, "decode");
    return to_channels_last(vae->decoder(domain)->forward(z));
}

torch::Tensor graft(VaePair& vae, const torch::Tensor& z, GraftChannel channel, StackSplit split,
                    const GraftNoise* noise) {
    split.validate();
    check_latent(vae, z, "graft");
    auto high = vae->decoder(channel.high_domain());
    auto low = vae->decoder(channel.low_domain());
    auto h = high->forward_layers(z, 0, split.n_high);
    if (split.n_low > 0 && h.size(1) != low->layer(split.n_high)->in_channels()) {
        throw ConfigError("graft boundary after layer " + std::to_string(split.n_high) + ": high stack emits " +
                          std::to_string(h.size(1)) + " channels but the low stack expects " +
                          std::to_string(low->layer(split.n_high)->in_channels()));
    }
    h = low->forward_layers(h, split.n_high, kDecoderDepth, noise);
    return to_channels_last(h);
}

torch::Tensor generate(AlignmentHeads& heads, const torch::Tensor& association, GraftChannel channel) {
    check_images(association, "generate");
    return to_channels_last(heads->generator(channel)->forward(to_channels_first(association)));
}

DiscriminatorOutput discriminate(AlignmentHeads& heads, const torch::Tensor& images, GraftChannel channel) {
    check_images(images, "discriminate");
    return heads->discriminator(channel)->forward(to_channels_first(images));
}

}  // namespace cgrs
