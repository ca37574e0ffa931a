#pragma once

#include "ivgen/fpca.hpp"
#include "ivgen/market_data.hpp"
#include "ivgen/nsde.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace ivgen {

/// Everything needed to decode and simulate: transforms, FPCA and, once
/// trained, the two networks.
///
/// Layout (little-endian):
///   "IVGN" u32 version
///   u64 D, M, E, L, B, n_o, hidden_dim, n_layers; f64 dt, eps
///   u32 equity count, then per equity u32 length and the name bytes
///   u32 array count, then per array: u32 name length, name, u64 n, f64[n]
///   u64 FNV-1a hash of every preceding byte
/// Arrays appear in this order: transform.tau_max, transform.fit_length,
/// transform.iv_c0, transform.iv_c1, transform.price_c0, transform.price_c1,
/// transform.detrend_beta0, transform.detrend_beta1, basis.members,
/// fpca.mean, fpca.components (row-major M x B), fpca.eigenvalues,
/// fpca.all_eigenvalues, fpca.explained and, when trained, norm.center,
/// norm.scale, drift.params, diff.params.
struct Checkpoint {
  static constexpr std::uint32_t version = 1;

  TransformSpec transforms;
  FpcaModel fpca;
  std::optional<NsdeModel> model;

  Eigen::Index state_dim() const {
    return fpca.n_components() * static_cast<Eigen::Index>(transforms.equities.size()) +
           static_cast<Eigen::Index>(transforms.equities.size());
  }
};

void save_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint load_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::uint64_t fnv1a(const std::string& bytes);

}  // namespace ivgen
