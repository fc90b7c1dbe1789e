#include "cgrs/losses.hpp"

#include "cgrs/error.hpp"

#include <opencv2/imgcodecs.hpp>

#include <cmath>

namespace cgrs {

namespace F = torch::nn::functional;

bool LossReport::all_finite() const {
    for (double v : loss_report_values(*this)) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

const std::vector<std::string>& loss_report_fields() {
    static const std::vector<std::string> fields{"vae_total", "vae_like", "vae_prior",  "adv_st",     "adv_ts",
                                                 "gen_st",    "gen_ts",   "content_st", "content_ts", "task"};
    return fields;
}

std::vector<double> loss_report_values(const LossReport& r) {
    return {r.vae_total, r.vae_like, r.vae_prior, r.adv_st,     r.adv_ts,
            r.gen_st,    r.gen_ts,   r.content_st, r.content_ts, r.task};
}

torch::Tensor kl_to_standard_normal(const torch::Tensor& mean, const torch::Tensor& logvar) {
    if (mean.sizes() != logvar.sizes()) throw ContractViolation("kl_to_standard_normal: mean/logvar shape mismatch");
    const auto lv = logvar.clamp(-20.0, 20.0);
    const auto per_element = 0.5 * (mean.square() + lv.exp() - lv - 1.0);
    return per_element.flatten(1).sum(1).mean();
}

VaeLossTerms vae_loss(const torch::Tensor& x_s, const torch::Tensor& x_t, const torch::Tensor& recon_s,
                      const torch::Tensor& recon_t, const LatentBatch& lat_s, const LatentBatch& lat_t,
                      const LossWeights& w) {
    if (x_s.sizes() != recon_s.sizes() || x_t.sizes() != recon_t.sizes()) {
        throw ContractViolation("vae_loss: reconstruction shape differs from input shape");
    }
    auto like = w.lambda1 * (F::mse_loss(recon_s, x_s) + F::mse_loss(recon_t, x_t));
    auto prior = w.lambda2 * (kl_to_standard_normal(lat_s.mean, lat_s.logvar) +
                              kl_to_standard_normal(lat_t.mean, lat_t.logvar));
    return VaeLossTerms{like + prior, like, prior};
}

AdversarialTerms adversarial_losses_from_logits(const torch::Tensor& real_logit, const torch::Tensor& fake_logit,
                                                const LossWeights& w) {
    // -log sigmoid(l) = softplus(-l); -log(1 - sigmoid(l)) = softplus(l).
    auto disc = w.lambda0 * (F::softplus(-real_logit).mean() + F::softplus(fake_logit).mean());
    auto gen = w.lambda0 * F::softplus(-fake_logit).mean();
    return AdversarialTerms{disc, gen};
}

AdversarialTerms adversarial_losses(const torch::Tensor& real_assoc, const torch::Tensor& fake_assoc,
                                    AlignmentHeads& heads, GraftChannel channel, const LossWeights& w) {
    const auto real = discriminate(heads, real_assoc, channel);
    const auto fake = discriminate(heads, fake_assoc, channel);
    return adversarial_losses_from_logits(real.domain_logit, fake.domain_logit, w);
}

torch::Tensor masked_pmse(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& mask) {
    if (a.sizes() != b.sizes()) throw ContractViolation("masked_pmse: operand shapes differ");
    if (a.dim() < 2) throw ContractViolation("masked_pmse: expected a leading batch dimension");
    const auto sample_shape = a.sizes().slice(1);
    std::int64_t k = 1;
    for (const auto s : sample_shape) k *= s;
    if (k == 0) throw ConfigError("content loss: mask covers zero pixels per image (k = 0)");
    const auto m = mask.to(a.dtype()).expand(sample_shape).reshape({1, k});
    const auto d = (a - b).reshape({a.size(0), k});
    const auto dm = d * m;
    const auto kd = static_cast<double>(k);
    const auto first = dm.square().sum(1) / kd;
    const auto second = dm.sum(1).square() / (kd * kd);
    return (first - second).mean();
}

torch::Tensor content_loss(const torch::Tensor& real_assoc, const torch::Tensor& fake_assoc, const torch::Tensor& mask,
                           const LossWeights& w) {
    return w.lambda3 * masked_pmse(real_assoc, fake_assoc, mask);
}

torch::Tensor cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels) {
    if (logits.dim() != 2 || logits.size(1) != kNumClasses || labels.dim() != 1 || labels.size(0) != logits.size(0)) {
        throw ContractViolation("cross_entropy: expected (batch, 10) logits and (batch) labels");
    }
    if (labels.numel() > 0) {
        const auto lo = labels.min().item<std::int64_t>();
        const auto hi = labels.max().item<std::int64_t>();
        if (lo < 0 || hi >= kNumClasses) {
            throw DataError("task loss: label outside [0, 10) (found range [" + std::to_string(lo) + ", " +
                            std::to_string(hi) + "])");
        }
    }
    return F::cross_entropy(logits, labels.to(torch::kInt64));
}

torch::Tensor task_loss(const torch::Tensor& logits_st, const torch::Tensor& logits_ts, const torch::Tensor& labels) {
    return cross_entropy(logits_st, labels) + cross_entropy(logits_ts, labels);
}

torch::Tensor load_content_mask(const std::filesystem::path& path) {
    if (path.empty()) return torch::ones({kImageSize, kImageSize, 1});
    const cv::Mat img = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (img.empty()) throw ConfigError("cannot read mask image " + path.string());
    if (img.rows != kImageSize || img.cols != kImageSize) {
        throw ConfigError("mask " + path.string() + " must be 28x28, got " + std::to_string(img.rows) + "x" +
                          std::to_string(img.cols));
    }
    const cv::Mat copy = img.clone();
    auto mask = torch::from_blob(copy.data, {kImageSize, kImageSize, 1}, torch::kUInt8).gt(0).to(torch::kFloat32);
    if (mask.sum().item<float>() == 0.0F) throw ConfigError("mask " + path.string() + " selects no pixels (k = 0)");
    return mask;
}

void check_finite(const torch::Tensor& value, const std::string& what, std::int64_t step) {
    if (!torch::isfinite(value).all().item<bool>()) {
        throw NumericError("non-finite " + what + " at step " + std::to_string(step));
    }
}

}  // namespace cgrs
