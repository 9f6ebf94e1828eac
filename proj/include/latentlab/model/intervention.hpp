#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "latentlab/model/config.hpp"
#include "latentlab/numerics/rng.hpp"

namespace latentlab::model {

/// do(Z) operator applied to each latent vector at feed-back time.
///   None             z
///   FixedTensor      tau
///   AddGaussian      z + eps,  eps ~ N(0, sigma^2)
///   ReplaceGaussian  eps
///   NearZero         mu in every component
struct InterventionSpec {
  enum class Kind { None, FixedTensor, AddGaussian, ReplaceGaussian, NearZero };

  Kind kind = Kind::None;
  std::vector<double> tau;
  double sigma = 0.0;
  double mu = 0.0;
  std::uint64_t seed = 0;

  static InterventionSpec none() { return {}; }
  static InterventionSpec fixed_tensor(std::vector<double> tau) { return {Kind::FixedTensor, std::move(tau), 0, 0, 0}; }
  static InterventionSpec add_gaussian(double sigma, std::uint64_t seed) { return {Kind::AddGaussian, {}, sigma, 0, seed}; }
  static InterventionSpec replace_gaussian(double sigma, std::uint64_t seed) {
    return {Kind::ReplaceGaussian, {}, sigma, 0, seed};
  }
  static InterventionSpec near_zero(double mu) { return {Kind::NearZero, {}, 0, mu, 0}; }

  void validate(std::size_t d) const {
    if (sigma < 0.0 || !std::isfinite(sigma)) throw ConfigError("intervention: sigma must be finite and >= 0");
    if (kind == Kind::FixedTensor && tau.size() != d) {
      throw ConfigError("intervention: tau has length " + std::to_string(tau.size()) + ", expected " + std::to_string(d));
    }
    if (!std::isfinite(mu)) throw ConfigError("intervention: mu must be finite");
  }

  /// Applies the operator in place. `rng` supplies the noise stream.
  void apply(std::vector<double>& z, num::Rng& rng) const {
    switch (kind) {
      case Kind::None: return;
      case Kind::FixedTensor: z = tau; return;
      case Kind::AddGaussian:
        if (sigma == 0.0) return;  // exact identity, including signed zeros
        for (double& v : z) v += sigma * rng.normal();
        return;
      case Kind::ReplaceGaussian:
        for (double& v : z) v = sigma * rng.normal();
        return;
      case Kind::NearZero:
        for (double& v : z) v = mu;
        return;
    }
  }

  std::string name() const {
    switch (kind) {
      case Kind::None: return "none";
      case Kind::FixedTensor: return "fixed_tensor";
      case Kind::AddGaussian: return "add_gaussian";
      case Kind::ReplaceGaussian: return "replace_gaussian";
      case Kind::NearZero: return "near_zero";
    }
    return "?";
  }

  /// Parameters for reports; tau is summarised by its length and norm.
  nlohmann::json params() const {
    nlohmann::json j = {{"variant", name()}};
    switch (kind) {
      case Kind::None: break;
      case Kind::FixedTensor: {
        double n = 0.0;
        for (double v : tau) n += v * v;
        j["tau_dim"] = tau.size();
        j["tau_norm"] = std::sqrt(n);
        break;
      }
      case Kind::AddGaussian:
      case Kind::ReplaceGaussian:
        j["sigma"] = sigma;
        j["seed"] = seed;
        break;
      case Kind::NearZero: j["mu"] = mu; break;
    }
    return j;
  }
};

inline InterventionSpec::Kind intervention_kind_from_string(const std::string& s) {
  using K = InterventionSpec::Kind;
  if (s == "none") return K::None;
  if (s == "fixed_tensor") return K::FixedTensor;
  if (s == "add_gaussian") return K::AddGaussian;
  if (s == "replace_gaussian") return K::ReplaceGaussian;
  if (s == "near_zero") return K::NearZero;
  throw ConfigError("unknown intervention variant '" + s + "'");
}

}  // namespace latentlab::model
