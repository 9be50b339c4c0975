#include "psconv/cost.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "psconv/error.hpp"

namespace psconv {

namespace {

std::uint64_t mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r;
  if (__builtin_mul_overflow(a, b, &r)) throw std::overflow_error("cost arithmetic overflows 64 bits");
  return r;
}

std::uint64_t plus(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r;
  if (__builtin_add_overflow(a, b, &r)) throw std::overflow_error("cost arithmetic overflows 64 bits");
  return r;
}

void require_positive(std::initializer_list<std::uint64_t> xs) {
  for (auto x : xs) {
    if (x == 0) throw std::invalid_argument("cost formula inputs must be >= 1");
  }
}

double pct_reduction(std::uint64_t value, std::uint64_t base) {
  return base == 0 ? 0.0 : 100.0 * (1.0 - static_cast<double>(value) / static_cast<double>(base));
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

std::uint64_t flops_sfcc(std::uint64_t ho, std::uint64_t wo, std::uint64_t ci, std::uint64_t co, std::uint64_t k) {
  require_positive({ho, wo, ci, co, k});
  return mul(mul(mul(mul(ho, wo), ci), co), mul(k, k));
}

std::uint64_t flops_psconv(std::uint64_t ho, std::uint64_t wo, std::uint64_t ci, std::uint64_t co, std::uint64_t y) {
  require_positive({ho, wo, ci, co, y});
  return mul(mul(mul(mul(ho, wo), ci), co), y);
}

std::uint64_t flops_dwc_pwc(std::uint64_t ho, std::uint64_t wo, std::uint64_t ci, std::uint64_t co, std::uint64_t k) {
  require_positive({ho, wo, ci, co, k});
  return plus(mul(mul(mul(ho, wo), ci), mul(k, k)), mul(mul(mul(ho, wo), ci), co));
}

std::uint64_t flops_gwc_dwc(std::uint64_t ho, std::uint64_t wo, std::uint64_t ci, std::uint64_t co, std::uint64_t k,
                            std::uint64_t groups) {
  require_positive({ho, wo, ci, co, k, groups});
  if (ci % groups != 0) throw std::invalid_argument("group count must divide input channels");
  const std::uint64_t grouped = mul(mul(mul(mul(ho, wo), ci), co), mul(k, k));
  return plus(grouped / groups, mul(mul(mul(ho, wo), co), mul(k, k)));
}

std::uint64_t params_sfcc(std::uint64_t ci, std::uint64_t co, std::uint64_t k) {
  require_positive({ci, co, k});
  return mul(mul(ci, co), mul(k, k));
}

std::uint64_t params_psconv(std::uint64_t ci, std::uint64_t co, std::uint64_t y) {
  require_positive({ci, co, y});
  return mul(mul(ci, co), y);
}

std::uint64_t params_dwc_pwc(std::uint64_t ci, std::uint64_t co, std::uint64_t k) {
  require_positive({ci, co, k});
  return plus(mul(ci, mul(k, k)), mul(ci, co));
}

std::uint64_t params_gwc_dwc(std::uint64_t ci, std::uint64_t co, std::uint64_t k, std::uint64_t groups) {
  require_positive({ci, co, k, groups});
  if (ci % groups != 0) throw std::invalid_argument("group count must divide input channels");
  return plus(mul(mul(co, ci / groups), mul(k, k)), mul(co, mul(k, k)));
}

std::string to_string(ConvStyle s) {
  switch (s) {
    case ConvStyle::sfcc: return "sfcc";
    case ConvStyle::psconv: return "psconv";
    case ConvStyle::dwc_pwc: return "dwc_pwc";
    case ConvStyle::gwc_dwc: return "gwc_dwc";
    case ConvStyle::linear: return "linear";
    case ConvStyle::other: return "other";
  }
  return "other";
}

ConvStyle parse_style(const std::string& s) {
  for (ConvStyle st : {ConvStyle::sfcc, ConvStyle::psconv, ConvStyle::dwc_pwc, ConvStyle::gwc_dwc,
                       ConvStyle::linear, ConvStyle::other}) {
    if (to_string(st) == s) return st;
  }
  throw std::invalid_argument("unknown layer style '" + s + "'");
}

double CostReport::flops_reduction_pct() const {
  return baseline ? pct_reduction(total_flops, baseline->total_flops) : 0.0;
}

double CostReport::params_reduction_pct() const {
  return baseline ? pct_reduction(total_params, baseline->total_params) : 0.0;
}

CostReport count_plan(const ArchPlan& plan) {
  const auto kss = static_cast<std::uint64_t>(plan.spec.kss);
  CostReport report;
  report.model = plan.spec.display_name();
  for (const NodeDesc& d : plan.nodes) {
    LayerCost c;
    c.name = d.name;
    switch (d.kind) {
      case OpKind::conv:
        if (d.masked) {
          c.style = ConvStyle::psconv;
          c.flops = flops_psconv(d.out_shape.height, d.out_shape.width, d.in_ch, d.out_ch, kss);
          c.params = params_psconv(d.in_ch, d.out_ch, kss);
        } else {
          c.style = ConvStyle::sfcc;
          c.flops = flops_sfcc(d.out_shape.height, d.out_shape.width, d.in_ch, d.out_ch, d.kernel);
          c.params = params_sfcc(d.in_ch, d.out_ch, d.kernel);
        }
        break;
      case OpKind::linear:
        c.style = ConvStyle::linear;
        c.flops = mul(d.in_ch, d.out_ch);
        c.params = plus(mul(d.in_ch, d.out_ch), d.out_ch);
        break;
      case OpKind::batch_norm: c.params = 2 * d.in_ch; break;
      case OpKind::relu:
      case OpKind::max_pool:
      case OpKind::avg_pool:
      case OpKind::flatten:
      case OpKind::add: break;
      default: throw std::invalid_argument("unknown layer type in plan: " + d.name);
    }
    report.total_flops = plus(report.total_flops, c.flops);
    report.total_params = plus(report.total_params, c.params);
    report.layers.push_back(std::move(c));
  }
  return report;
}

CostReport count_model(const ArchSpec& spec, int baseline_kss) {
  CostReport report = count_plan(plan_architecture(spec));
  ArchSpec base = spec;
  base.kss = baseline_kss;
  base.width_mult = 1.0;
  const CostReport b = count_plan(plan_architecture(base));
  report.baseline = Baseline{b.model, b.total_flops, b.total_params};
  return report;
}

nlohmann::json to_json(const CostReport& r) {
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (const auto& l : r.layers) {
    layers.push_back({{"name", l.name}, {"style", to_string(l.style)}, {"flops", l.flops}, {"params", l.params}});
  }
  nlohmann::ordered_json j;
  j["model"] = r.model;
  j["layers"] = layers;
  j["total_flops"] = r.total_flops;
  j["total_params"] = r.total_params;
  if (r.baseline) {
    j["baseline"] = {{"name", r.baseline->name},
                     {"total_flops", r.baseline->total_flops},
                     {"total_params", r.baseline->total_params}};
    j["reductions"] = {{"flops_pct", r.flops_reduction_pct()}, {"params_pct", r.params_reduction_pct()}};
  } else {
    j["baseline"] = nullptr;
    j["reductions"] = nullptr;
  }
  return nlohmann::json(j);
}

CostReport cost_report_from_json(const nlohmann::json& j) {
  CostReport r;
  r.model = j.value("model", std::string{});
  for (const auto& l : j.at("layers")) {
    r.layers.push_back({l.at("name").get<std::string>(), parse_style(l.at("style").get<std::string>()),
                        l.at("flops").get<std::uint64_t>(), l.at("params").get<std::uint64_t>()});
  }
  r.total_flops = j.at("total_flops").get<std::uint64_t>();
  r.total_params = j.at("total_params").get<std::uint64_t>();
  std::uint64_t f = 0, p = 0;
  for (const auto& l : r.layers) {
    f += l.flops;
    p += l.params;
  }
  if (f != r.total_flops || p != r.total_params) throw std::invalid_argument("report totals do not match layers");
  if (j.contains("baseline") && !j.at("baseline").is_null()) {
    const auto& b = j.at("baseline");
    r.baseline = Baseline{b.value("name", std::string{}), b.at("total_flops").get<std::uint64_t>(),
                          b.at("total_params").get<std::uint64_t>()};
  }
  return r;
}

std::string format_table(const CostReport& r) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-32s %-8s %16s %12s\n", "layer", "style", "flops", "params");
  os << "model: " << r.model << "\n" << line;
  for (const auto& l : r.layers) {
    if (l.flops == 0 && l.params == 0) continue;
    std::snprintf(line, sizeof line, "%-32s %-8s %16llu %12llu\n", l.name.c_str(), to_string(l.style).c_str(),
                  static_cast<unsigned long long>(l.flops), static_cast<unsigned long long>(l.params));
    os << line;
  }
  std::snprintf(line, sizeof line, "%-41s %16llu %12llu\n", "total", static_cast<unsigned long long>(r.total_flops),
                static_cast<unsigned long long>(r.total_params));
  os << line;
  os << "total FLOPs: " << fmt("%.4f", static_cast<double>(r.total_flops) / 1e9) << " G   params: "
     << fmt("%.4f", static_cast<double>(r.total_params) / 1e6) << " M\n";
  if (r.baseline) {
    os << "baseline " << r.baseline->name << ": " << fmt("%.4f", static_cast<double>(r.baseline->total_flops) / 1e9)
       << " G, " << fmt("%.4f", static_cast<double>(r.baseline->total_params) / 1e6) << " M\n";
    os << "FLOPs reduced: " << fmt("%.1f", r.flops_reduction_pct())
       << " %   params reduced: " << fmt("%.1f", r.params_reduction_pct()) << " %\n";
  }
  return os.str();
}

std::vector<PublishedRow> parse_reference_tables(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  if (j.value("version", 0) != 1) throw FormatError("unsupported reference table version");
  std::vector<PublishedRow> out;
  for (const auto& t : j.at("tables")) {
    for (const auto& row : t.at("rows")) {
      PublishedRow r;
      r.table = t.at("table").get<int>();
      r.dataset = t.at("dataset").get<std::string>();
      r.model = row.at("model").get<std::string>();
      r.spec.family = parse_family(t.at("family").get<std::string>());
      r.spec.num_classes = t.at("num_classes").get<int>();
      r.spec.input_size = t.at("input_size").get<int>();
      r.spec.width_mult = row.at("width_mult").get<double>();
      r.spec.kss = row.at("kss").get<int>();
      r.flops_g = row.at("flops_g").get<double>();
      r.params_m = row.at("params_m").get<double>();
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<ComparisonRow> compare_with_published(const ArchSpec& spec, const std::vector<PublishedRow>& rows) {
  std::vector<ComparisonRow> out;
  for (const auto& row : rows) {
    if (row.spec.family != spec.family || row.spec.num_classes != spec.num_classes ||
        row.spec.input_size != spec.input_size) {
      continue;
    }
    const CostReport r = count_plan(plan_architecture(row.spec));
    ComparisonRow c{row, r.total_flops, r.total_params, 0.0, 0.0};
    c.flops_delta_pct = 100.0 * (static_cast<double>(r.total_flops) / 1e9 - row.flops_g) / row.flops_g;
    c.params_delta_pct = 100.0 * (static_cast<double>(r.total_params) / 1e6 - row.params_m) / row.params_m;
    out.push_back(std::move(c));
  }
  return out;
}

nlohmann::json to_json(const std::vector<ComparisonRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : rows) {
    arr.push_back({{"table", c.published.table},
                   {"model", c.published.model},
                   {"published_flops_g", c.published.flops_g},
                   {"published_params_m", c.published.params_m},
                   {"flops", c.flops},
                   {"params", c.params},
                   {"flops_delta_pct", c.flops_delta_pct},
                   {"params_delta_pct", c.params_delta_pct}});
  }
  return arr;
}

std::string format_comparison(const std::vector<ComparisonRow>& rows) {
  std::ostringstream os;
  if (rows.empty()) {
    os << "no published reference for this configuration\n";
    return os.str();
  }
  char line[200];
  os << "published comparison (" << rows.front().published.dataset << ", " << rows.front().published.spec.input_size
     << "px):\n";
  std::snprintf(line, sizeof line, "%-20s %10s %10s %8s %10s %10s %8s\n", "model", "GFLOPs", "published", "delta%",
                "Mparams", "published", "delta%");
  os << line;
  bool gap = false;
  for (const auto& c : rows) {
    const bool flag = std::abs(c.flops_delta_pct) > 2.0;
    gap = gap || flag;
    std::snprintf(line, sizeof line, "%-20s %10.4f %10.3f %+8.1f %10.4f %10.3f %+8.1f%s\n", c.published.model.c_str(),
                  static_cast<double>(c.flops) / 1e9, c.published.flops_g, c.flops_delta_pct,
                  static_cast<double>(c.params) / 1e6, c.published.params_m, c.params_delta_pct,
                  flag ? "  * FLOP gap" : "");
    os << line;
  }
  if (gap) {
    os << "* FLOPs here follow H_o*W_o*C_i*C_o*y exactly; the published sparse FLOP entries sit below that "
          "formula and are not matched.\n";
  }
  return os.str();
}

}  // namespace psconv
