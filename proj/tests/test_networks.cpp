#include "cgrs/error.hpp"
#include "cgrs/networks.hpp"
#include "test_support.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <gtest/gtest.h>

#include <set>

using namespace cgrs;

namespace {

struct NetworksTest : ::testing::Test {
    ExperimentConfig config = testkit::tiny_config(3);
    CgrsModel model = build_model(config);
    torch::Tensor images = torch::rand({5, 28, 28, 3}) * 2 - 1;
    torch::Tensor latent = torch::randn({5, config.arch.latent_channels, 4, 4});
};

}  // namespace

TEST_F(NetworksTest, EncodeProducesLatentOfConfiguredShape) {
    auto lat = encode(model->vae, images, Domain::source);
    EXPECT_EQ(lat.mean.sizes(), (std::vector<std::int64_t>{5, config.arch.latent_channels, 4, 4}));
    EXPECT_EQ(lat.logvar.sizes(), lat.mean.sizes());
    EXPECT_EQ(lat.sample.sizes(), lat.mean.sizes());
}

TEST_F(NetworksTest, EncodeWithZeroNoiseReturnsMean) {
    auto zero = torch::zeros({5, config.arch.latent_channels, 4, 4});
    auto lat = encode(model->vae, images, Domain::target, zero);
    EXPECT_TRUE(torch::equal(lat.sample, lat.mean));
}

TEST_F(NetworksTest, EncodeRejectsWrongImageShape) {
    EXPECT_THROW(encode(model->vae, torch::zeros({2, 28, 28, 1}), Domain::source), ContractViolation);
    EXPECT_THROW(encode(model->vae, torch::zeros({2, 32, 32, 3}), Domain::source), ContractViolation);
}

TEST_F(NetworksTest, DecodeOutputsImagesInRange) {
    auto out = decode(model->vae, latent, Domain::source);
    EXPECT_EQ(out.sizes(), (std::vector<std::int64_t>{5, 28, 28, 3}));
    EXPECT_LE(out.abs().max().item<float>(), 1.0F);
}

TEST_F(NetworksTest, DecoderLayerShapesFollowReferenceStack) {
    auto x = latent;
    auto decoder = model->vae->decoder_s;
    for (int i = 0; i < kDecoderDepth; ++i) {
        x = decoder->forward_layers(x, i, i + 1);
        const auto shape = DecoderImpl::layer_output_shape(config.arch, i);
        EXPECT_EQ(x.size(1), shape[0]) << "layer " << i;
        EXPECT_EQ(x.size(2), shape[1]) << "layer " << i;
        EXPECT_EQ(x.size(3), shape[2]) << "layer " << i;
    }
    const auto ref = ArchitectureConfig{};
    EXPECT_EQ(DecoderImpl::layer_output_shape(ref, 0)[0], 512);
    EXPECT_EQ(DecoderImpl::layer_output_shape(ref, 4)[0], 32);
    EXPECT_EQ(DecoderImpl::layer_output_shape(ref, 5)[0], 3);
}

TEST_F(NetworksTest, DegenerateGraftsEqualPlainDecodingInInferenceMode) {
    model->eval();
    torch::NoGradGuard no_grad;
    EXPECT_TRUE(torch::equal(graft(model->vae, latent, GraftChannel::st(), StackSplit{6, 0}),
                             decode(model->vae, latent, Domain::source)));
    EXPECT_TRUE(torch::equal(graft(model->vae, latent, GraftChannel::st(), StackSplit{0, 6}),
                             decode(model->vae, latent, Domain::target)));
    EXPECT_TRUE(torch::equal(graft(model->vae, latent, GraftChannel::ts(), StackSplit{6, 0}),
                             decode(model->vae, latent, Domain::target)));
    EXPECT_TRUE(torch::equal(graft(model->vae, latent, GraftChannel::ts(), StackSplit{0, 6}),
                             decode(model->vae, latent, Domain::source)));
}

TEST_F(NetworksTest, GraftMatchesHandComposedStages) {
    model->eval();
    torch::NoGradGuard no_grad;
    for (int k = 0; k <= kDecoderDepth; ++k) {
        auto h = latent;
        for (int i = 0; i < k; ++i) h = model->vae->decoder_t->layer(i)->forward(h);
        for (int i = k; i < kDecoderDepth; ++i) h = model->vae->decoder_s->layer(i)->forward(h);
        const auto expected = to_channels_last(h);
        EXPECT_TRUE(torch::equal(graft(model->vae, latent, GraftChannel::ts(), StackSplit{k, 6 - k}), expected))
            << "split H" << k;
    }
}

TEST_F(NetworksTest, GraftRejectsInvalidSplit) {
    EXPECT_THROW(graft(model->vae, latent, GraftChannel::st(), StackSplit{3, 2}), ConfigError);
}

TEST_F(NetworksTest, GraftNoiseOnlyPerturbsLowStack) {
    model->eval();
    torch::NoGradGuard no_grad;
    GraftNoise noise{0.5, at::make_generator<at::CPUGeneratorImpl>(1)};
    const auto clean = graft(model->vae, latent, GraftChannel::st(), StackSplit{6, 0});
    const auto noisy_none = graft(model->vae, latent, GraftChannel::st(), StackSplit{6, 0}, &noise);
    EXPECT_TRUE(torch::equal(clean, noisy_none));
    const auto noisy = graft(model->vae, latent, GraftChannel::st(), StackSplit{4, 2}, &noise);
    EXPECT_FALSE(torch::equal(noisy, graft(model->vae, latent, GraftChannel::st(), StackSplit{4, 2})));
}

TEST_F(NetworksTest, GeneratorWithZeroBranchIsIdentity) {
    auto g = model->heads->generator_1;
    {
        torch::NoGradGuard no_grad;
        for (auto& p : g->named_parameters()) {
            if (p.key().starts_with("output")) p.value().zero_();
        }
    }
    g->eval();
    torch::NoGradGuard no_grad;
    EXPECT_TRUE(torch::equal(generate(model->heads, images, GraftChannel::st()), images));
}

TEST_F(NetworksTest, GeneratorPreservesShapeAndRange) {
    auto out = generate(model->heads, images, GraftChannel::ts());
    EXPECT_EQ(out.sizes(), images.sizes());
    EXPECT_LE(out.abs().max().item<float>(), 1.0F);
}

TEST_F(NetworksTest, DiscriminatorHeads) {
    auto out = discriminate(model->heads, images, GraftChannel::st());
    EXPECT_EQ(out.domain_logit.sizes(), (std::vector<std::int64_t>{5}));
    EXPECT_EQ(out.class_logits.sizes(), (std::vector<std::int64_t>{5, kNumClasses}));
    EXPECT_EQ(out.features.sizes(), (std::vector<std::int64_t>{5, config.arch.disc_feature_width}));
    EXPECT_TRUE(torch::allclose(out.domain_prob, torch::sigmoid(out.domain_logit)));
    EXPECT_TRUE(((out.domain_prob > 0) & (out.domain_prob < 1)).all().item<bool>());
}

TEST_F(NetworksTest, ParameterGroupsPartitionAllParameters) {
    std::multiset<const void*> grouped;
    for (const auto& group : {encoder_parameters(model->vae), decoder_parameters(model->vae),
                              generator_parameters(model->heads), discriminator_parameters(model->heads)}) {
        for (const auto& p : group) grouped.insert(p.unsafeGetTensorImpl());
    }
    std::multiset<const void*> all;
    for (const auto& p : model->parameters()) all.insert(p.unsafeGetTensorImpl());
    EXPECT_EQ(grouped, all);
}

TEST_F(NetworksTest, EncoderHighLayersAreShared) {
    std::set<const void*> ids;
    for (const auto& p : model->vae->encoder_high_shared->parameters()) ids.insert(p.unsafeGetTensorImpl());
    EXPECT_FALSE(ids.empty());
    for (const auto& p : model->vae->encoder_low_s->parameters()) EXPECT_FALSE(ids.contains(p.unsafeGetTensorImpl()));
}

TEST(Networks, BuildModelIsSeeded) {
    auto config = testkit::tiny_config(9);
    auto a = build_model(config);
    auto b = build_model(config);
    auto pa = a->parameters();
    auto pb = b->parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(torch::equal(pa[i], pb[i]));
}

TEST(Networks, ReferenceArchitectureShapes) {
    ExperimentConfig config;
    auto model = build_model(config);
    model->eval();
    torch::NoGradGuard no_grad;
    auto lat = encode(model->vae, torch::zeros({2, 28, 28, 3}), Domain::source);
    EXPECT_EQ(lat.mean.size(1), 512);
    EXPECT_EQ(graft(model->vae, lat, GraftChannel::st(), StackSplit{2, 4}).sizes(),
              (std::vector<std::int64_t>{2, 28, 28, 3}));
}
