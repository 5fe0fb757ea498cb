#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "defector/error.hpp"
#include "defector/random.hpp"
#include "defector/types.hpp"

namespace defector {

enum class PopKind { PowerLaw, Uniform };

/// Website-popularity model over ranks 1..N.
///
/// Power-law models apply p(r) = r^-alpha / H(N, alpha) from rank 1 and sample by
/// inverse CDF over a precomputed cumulative table. Uniform models need no table
/// and sample the rank directly, which keeps the 173M-site catalog cheap.
///
/// Immutable after construction; copies share the cumulative table.
class PopModel {
 public:
  /// Largest catalog for which a cumulative table is built.
  static constexpr std::uint64_t kMaxTableSites = 10'000'000;
  static constexpr std::uint64_t kDefaultPowerLawSites = 1'000'000;

  static PopModel power_law(double alpha, std::uint64_t n_sites, std::string label = "") {
    if (!(alpha > 1.0) || !std::isfinite(alpha)) throw ConfigError("power-law alpha must be > 1");
    if (n_sites == 0) throw ConfigError("popularity model needs at least one site");
    if (n_sites > kMaxTableSites) {
      throw ConfigError("power-law catalog of " + std::to_string(n_sites) + " sites exceeds the table limit of " +
                        std::to_string(kMaxTableSites));
    }
    PopModel m;
    m.kind_ = PopKind::PowerLaw;
    m.alpha_ = alpha;
    m.n_sites_ = n_sites;
    m.label_ = std::move(label);
    auto cdf = std::make_shared<std::vector<double>>(n_sites);
    // Sum from the smallest terms up to keep the rounding error down.
    double norm = 0.0;
    for (std::uint64_t r = n_sites; r >= 1; --r) norm += std::pow(static_cast<double>(r), -alpha);
    double acc = 0.0;
    for (std::uint64_t r = 1; r <= n_sites; ++r) {
      acc += std::pow(static_cast<double>(r), -alpha) / norm;
      (*cdf)[r - 1] = acc;
    }
    cdf->back() = 1.0;
    m.norm_ = norm;
    m.cdf_ = std::move(cdf);
    return m;
  }

  static PopModel uniform(std::uint64_t n_sites, std::string label = "") {
    if (n_sites == 0) throw ConfigError("popularity model needs at least one site");
    PopModel m;
    m.kind_ = PopKind::Uniform;
    m.n_sites_ = n_sites;
    m.label_ = std::move(label);
    return m;
  }

  /// pc, pr, uc, ur.
  static PopModel from_label(const std::string& label) {
    if (label == "pc") return power_law(1.13, kDefaultPowerLawSites, "pc");
    if (label == "pr") return power_law(1.98, kDefaultPowerLawSites, "pr");
    if (label == "uc") return uniform(1'000'000, "uc");
    if (label == "ur") return uniform(173'000'000, "ur");
    throw ConfigError("unknown popularity label '" + label + "' (expected pc, pr, uc or ur)");
  }

  PopKind kind() const noexcept { return kind_; }
  double alpha() const noexcept { return alpha_; }
  std::uint64_t n_sites() const noexcept { return n_sites_; }
  const std::string& label() const noexcept { return label_; }

  double probability(SiteId site) const {
    check_rank(site);
    if (kind_ == PopKind::Uniform) return 1.0 / static_cast<double>(n_sites_);
    return std::pow(static_cast<double>(site.rank), -alpha_) / norm_;
  }

  SiteId sample(Rng& rng) const {
    if (kind_ == PopKind::Uniform) return SiteId{1 + uniform_below(rng, n_sites_)};
    const double u = uniform01(rng);
    const auto& cdf = *cdf_;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) --it;
    return SiteId{static_cast<std::uint64_t>(it - cdf.begin()) + 1};
  }

 private:
  PopModel() = default;

  void check_rank(SiteId site) const {
    if (site.rank < 1 || site.rank > n_sites_) {
      throw DomainError("rank " + std::to_string(site.rank) + " outside catalog of N=" + std::to_string(n_sites_));
    }
  }

  PopKind kind_ = PopKind::Uniform;
  double alpha_ = 0.0;
  std::uint64_t n_sites_ = 1;
  double norm_ = 1.0;
  std::string label_;
  std::shared_ptr<const std::vector<double>> cdf_;
};

}  // namespace defector
