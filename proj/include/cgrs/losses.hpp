#pragma once

#include "cgrs/config.hpp"
#include "cgrs/networks.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <string>

namespace cgrs {

// Per-round scalar summary. adv_st / adv_ts carry the signed adversarial
// objective E log D(real) + E log(1 - D(fake)) scaled by lambda0, i.e. the
// negated discriminator loss; gen_st / gen_ts are the non-saturating
// generator surrogates actually minimised in the generator phase.
struct LossReport {
    double vae_total = 0.0;
    double vae_like = 0.0;
    double vae_prior = 0.0;
    double adv_st = 0.0;
    double adv_ts = 0.0;
    double gen_st = 0.0;
    double gen_ts = 0.0;
    double content_st = 0.0;
    double content_ts = 0.0;
    double task = 0.0;

    // L_VAEs + L_G + L_s + L_T.
    double objective() const { return vae_total + adv_st + adv_ts + content_st + content_ts + task; }
    bool all_finite() const;
};

// Column order of the training log after `step` and `lr`.
const std::vector<std::string>& loss_report_fields();
std::vector<double> loss_report_values(const LossReport& report);

// KL(N(mean, exp(logvar)) || N(0, I)) summed over every non-batch dimension
// and averaged over the batch. logvar is clamped to [-20, 20].
torch::Tensor kl_to_standard_normal(const torch::Tensor& mean, const torch::Tensor& logvar);

struct VaeLossTerms {
    torch::Tensor total;
    torch::Tensor like;   // lambda1 * (mse_s + mse_t), per-element mean
    torch::Tensor prior;  // lambda2 * (kl_s + kl_t)
};

VaeLossTerms vae_loss(const torch::Tensor& x_s, const torch::Tensor& x_t, const torch::Tensor& recon_s,
                      const torch::Tensor& recon_t, const LatentBatch& lat_s, const LatentBatch& lat_t,
                      const LossWeights& w);

struct AdversarialTerms {
    torch::Tensor disc;  // lambda0 * -(E log D(real) + E log(1 - D(fake)))
    torch::Tensor gen;   // lambda0 * -E log D(fake)
};

// Operates on discriminator domain logits; log-sigmoids via softplus.
AdversarialTerms adversarial_losses_from_logits(const torch::Tensor& real_logit, const torch::Tensor& fake_logit,
                                                const LossWeights& w);
AdversarialTerms adversarial_losses(const torch::Tensor& real_assoc, const torch::Tensor& fake_assoc,
                                    AlignmentHeads& heads, GraftChannel channel, const LossWeights& w);

// Masked pairwise MSE per sample, averaged over the batch:
//   (1/k) ||(a - b) o m||^2 - (1/k^2) ((a - b)^T m)^2
// where k is the number of elements per sample. The mask broadcasts against
// one sample (e.g. (28, 28, 1) against (28, 28, 3)).
torch::Tensor masked_pmse(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& mask);
// lambda3 * masked_pmse for one channel.
torch::Tensor content_loss(const torch::Tensor& real_assoc, const torch::Tensor& fake_assoc, const torch::Tensor& mask,
                           const LossWeights& w);

// Mean cross-entropy of each channel's class logits against `labels`, summed.
// Throws DataError for labels outside [0, 10).
torch::Tensor task_loss(const torch::Tensor& logits_st, const torch::Tensor& logits_ts, const torch::Tensor& labels);
torch::Tensor cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels);

// All-ones (28, 28, 1) mask, or a grayscale image file thresholded at > 0.
torch::Tensor load_content_mask(const std::filesystem::path& path);

// Throws NumericError naming `what` and `step` when `value` holds NaN or inf.
void check_finite(const torch::Tensor& value, const std::string& what, std::int64_t step);

}  // namespace cgrs
