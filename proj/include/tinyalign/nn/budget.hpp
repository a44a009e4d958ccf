#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "tinyalign/nn/conv.hpp"

namespace tinyalign::nn {

/// One conv layer as seen by the accountant: its spec and output extent.
struct LayerCost {
  std::string name;
  ConvSpec spec;
  std::size_t out_h = 0;
  std::size_t out_w = 0;
};

/// Exact integer compute counts. Flops are multiply-accumulates and MAdd
/// counts the multiply and the add separately, so madd == 2 * flops.
struct ComputeBudget {
  std::uint64_t total_params = 0;
  std::uint64_t total_madd = 0;
  std::uint64_t total_flops = 0;
  std::uint64_t model_bytes = 0;

  bool operator==(const ComputeBudget&) const = default;
};

inline std::uint64_t weight_params(const ConvSpec& s) {
  return static_cast<std::uint64_t>(s.kernel) * s.kernel * (s.in_channels / s.groups) * s.out_channels;
}

inline ComputeBudget account(const std::vector<LayerCost>& layers) {
  ComputeBudget b;
  for (const auto& l : layers) {
    const std::uint64_t w = weight_params(l.spec);
    b.total_params += w + (l.spec.bias ? l.spec.out_channels : 0);
    b.total_flops += w * l.out_h * l.out_w;
  }
  b.total_madd = 2 * b.total_flops;
  return b;
}

namespace detail {

inline std::string with_commas(std::uint64_t v) {
  std::string digits = std::to_string(v);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return out;
}

inline std::string millions(std::uint64_t v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << static_cast<double>(v) / 1e6 << 'M';
  return os.str();
}

}  // namespace detail

/// Structured text report using the row names Total params / Total MAdd /
/// Total Flops / Model Size, followed by exact integer lines.
inline std::string format_budget(const ComputeBudget& b) {
  std::ostringstream os;
  os << "Total params: " << detail::with_commas(b.total_params) << '\n'
     << "Total MAdd: " << detail::millions(b.total_madd) << '\n'
     << "Total Flops: " << detail::millions(b.total_flops) << '\n'
     << "Model Size: " << (b.model_bytes + 512) / 1024 << "KB\n"
     << "params_exact: " << b.total_params << '\n'
     << "madd_exact: " << b.total_madd << '\n'
     << "flops_exact: " << b.total_flops << '\n'
     << "model_bytes: " << b.model_bytes << '\n';
  return os.str();
}

}  // namespace tinyalign::nn
