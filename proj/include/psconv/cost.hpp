#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "psconv/arch.hpp"

namespace psconv {

// FLOP counts are multiply-accumulates for one forward pass of one image.
// All functions throw std::overflow_error if the product exceeds 64 bits.
std::uint64_t flops_sfcc(std::uint64_t ho, std::uint64_t wo, std::uint64_t ci, std::uint64_t co, std::uint64_t k);
std::uint64_t flops_psconv(std::uint64_t ho, std::uint64_t wo, std::uint64_t ci, std::uint64_t co, std::uint64_t y);
// Depth-wise k x k followed by point-wise 1 x 1 (MobileNet-like).
std::uint64_t flops_dwc_pwc(std::uint64_t ho, std::uint64_t wo, std::uint64_t ci, std::uint64_t co, std::uint64_t k);
// Group-wise k x k with `groups` groups followed by depth-wise k x k (ShuffleNet-like).
std::uint64_t flops_gwc_dwc(std::uint64_t ho, std::uint64_t wo, std::uint64_t ci, std::uint64_t co, std::uint64_t k,
                            std::uint64_t groups);

std::uint64_t params_sfcc(std::uint64_t ci, std::uint64_t co, std::uint64_t k);
std::uint64_t params_psconv(std::uint64_t ci, std::uint64_t co, std::uint64_t y);
std::uint64_t params_dwc_pwc(std::uint64_t ci, std::uint64_t co, std::uint64_t k);
std::uint64_t params_gwc_dwc(std::uint64_t ci, std::uint64_t co, std::uint64_t k, std::uint64_t groups);

enum class ConvStyle { sfcc, psconv, dwc_pwc, gwc_dwc, linear, other };

std::string to_string(ConvStyle s);
ConvStyle parse_style(const std::string& s);

struct LayerCost {
  std::string name;
  ConvStyle style = ConvStyle::other;
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
};

struct Baseline {
  std::string name;
  std::uint64_t total_flops = 0;
  std::uint64_t total_params = 0;
};

struct CostReport {
  std::string model;
  std::vector<LayerCost> layers;
  std::uint64_t total_flops = 0;
  std::uint64_t total_params = 0;
  std::optional<Baseline> baseline;

  double flops_reduction_pct() const;
  double params_reduction_pct() const;
};

// Masked convs count out*in*kss params and flops_psconv FLOPs; unmasked
// convs and linears are dense; batch norm adds 2C params; everything else is
// free. The baseline is the kss=baseline_kss, width 1.0 build of the same
// family, classes and input size.
CostReport count_model(const ArchSpec& spec, int baseline_kss = 9);
CostReport count_plan(const ArchPlan& plan);

nlohmann::json to_json(const CostReport& report);
CostReport cost_report_from_json(const nlohmann::json& j);
std::string format_table(const CostReport& report);

// Published values bundled with the build.
struct PublishedRow {
  int table = 0;
  std::string model;
  std::string dataset;
  ArchSpec spec;
  double flops_g = 0.0;
  double params_m = 0.0;
};

std::string_view bundled_reference_tables();
std::vector<PublishedRow> parse_reference_tables(std::string_view json_text);

struct ComparisonRow {
  PublishedRow published;
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
  double flops_delta_pct = 0.0;   // (ours - published) / published
  double params_delta_pct = 0.0;
};

// Rows of the published table matching the ArchSpec's family, classes and input
// size, each recomputed by count_model.
std::vector<ComparisonRow> compare_with_published(const ArchSpec& spec, const std::vector<PublishedRow>& rows);
nlohmann::json to_json(const std::vector<ComparisonRow>& rows);
std::string format_comparison(const std::vector<ComparisonRow>& rows);

}  // namespace psconv
