#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace cgrs {

enum class Domain : std::uint8_t { source, target };

constexpr Domain other(Domain d) { return d == Domain::source ? Domain::target : Domain::source; }
constexpr char domain_letter(Domain d) { return d == Domain::source ? 's' : 't'; }

inline constexpr int kDecoderDepth = 6;
inline constexpr int kNumClasses = 10;
inline constexpr int kImageSize = 28;
inline constexpr int kImageChannels = 3;

// Division of the six decoder layers into a high-level stack (first n_high
// layers, nearest the latent code) and a low-level stack (the remaining n_low).
struct StackSplit {
    int n_high = 4;
    int n_low = 2;

    // Accepts the "H<k>L<6-k>" notation.
    static StackSplit parse(std::string_view text);
    std::string label() const;
    void validate() const;

    friend bool operator==(const StackSplit&, const StackSplit&) = default;
};

// A cross-grafted decoder: high-level layers from one domain's decoder,
// low-level layers from the other's. Only st and ts exist.
class GraftChannel {
public:
    static constexpr GraftChannel st() { return GraftChannel(Domain::source); }
    static constexpr GraftChannel ts() { return GraftChannel(Domain::target); }
    static GraftChannel parse(std::string_view text);

    constexpr Domain high_domain() const { return high_; }
    constexpr Domain low_domain() const { return other(high_); }
    // 0 for st, 1 for ts; indexes the per-channel generator/discriminator.
    constexpr int index() const { return high_ == Domain::source ? 0 : 1; }
    std::string name() const { return high_ == Domain::source ? "st" : "ts"; }

    friend constexpr bool operator==(const GraftChannel&, const GraftChannel&) = default;

private:
    constexpr explicit GraftChannel(Domain high) : high_(high) {}
    Domain high_;
};

inline constexpr std::array<GraftChannel, 2> kChannels{GraftChannel::st(), GraftChannel::ts()};

enum class DatasetId : std::uint8_t { mnist, mnist_m, usps, m_digits, fashion, fashion_m };

inline constexpr std::array<DatasetId, 6> kAllDatasets{DatasetId::mnist,    DatasetId::mnist_m,
                                                       DatasetId::usps,     DatasetId::m_digits,
                                                       DatasetId::fashion,  DatasetId::fashion_m};

DatasetId parse_dataset_id(std::string_view text);
std::string to_string(DatasetId id);
bool is_synthesized(DatasetId id);

enum class Split : std::uint8_t { train, test };

Split parse_split(std::string_view text);
std::string to_string(Split split);

struct Scenario {
    DatasetId source = DatasetId::mnist;
    DatasetId target = DatasetId::usps;

    // "source:target", e.g. "mnist:usps".
    static Scenario parse(std::string_view text);
    std::string label() const;
    bool involves_fashion() const;

    friend bool operator==(const Scenario&, const Scenario&) = default;
};

}  // namespace cgrs
