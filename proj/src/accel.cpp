#include "bcnn/accel.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace bcnn {

void KernelConfig::validate() const {
  if (p_out == 0 || p_in == 0 || ii == 0) throw Error(ErrorCode::InvalidConfig, "unroll factors and ii must be >= 1");
  if (!(clock_hz > 0.0)) throw Error(ErrorCode::InvalidConfig, "clock must be positive");
  if (kernel_count == 0) throw Error(ErrorCode::InvalidConfig, "kernel_count must be >= 1");
}

namespace {

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

void walk(const std::vector<LayerPtr>& seq, Shape shape, const KernelConfig& cfg, std::uint64_t& total) {
  for (const auto& l : seq) {
    if (const auto* b = dynamic_cast<const BinaryComplexConvLayer*>(l.get())) {
      total += conv_cycles(b->geometry(), shape.h, shape.w, cfg);
    } else if (const auto* r = dynamic_cast<const ResidualBlockNode*>(l.get())) {
      walk(r->main_path(), shape, cfg, total);
      walk(r->shortcut_path(), shape, cfg, total);
    }
    shape = l->out_shape(shape);
  }
}

}  // namespace

std::uint64_t conv_cycles(const ConvGeometry& g, std::size_t in_h, std::size_t in_w, const KernelConfig& cfg) {
  cfg.validate();
  g.validate();
  const std::uint64_t oh = g.out_h(in_h), ow = g.out_w(in_w);
  return ceil_div(g.out_channels, cfg.p_out) * ceil_div(words_for_channels(g.in_channels), cfg.p_in) * oh * ow *
             g.kh * g.kw * cfg.ii +
         cfg.pipeline_fill;
}

std::uint64_t model_binary_cycles(const ModelGraph& model, const KernelConfig& cfg) {
  std::uint64_t total = 0;
  walk(model.layers(), model.input_shape(), cfg, total);
  return total;
}

std::uint64_t throughput(const KernelConfig& cfg) {
  cfg.validate();
  if (!(cfg.kernel_latency_s > 0.0)) throw Error(ErrorCode::InvalidConfig, "kernel latency must be positive");
  return static_cast<std::uint64_t>(std::floor(static_cast<double>(cfg.kernel_count) / cfg.kernel_latency_s));
}

double speedup_report(double fpga_fps, double baseline_fps) {
  if (!(baseline_fps > 0.0)) throw Error(ErrorCode::InvalidConfig, "baseline throughput must be positive");
  return std::round(fpga_fps / baseline_fps * 100.0) / 100.0;
}

double ResourceUse::percentage() const {
  if (total == 0) throw Error(ErrorCode::InvalidConfig, name + ": total is zero");
  return static_cast<double>(used) / static_cast<double>(total) * 100.0;
}

std::string format_resource_table(const ResourceRecord& r) {
  std::ostringstream os;
  if (!r.title.empty()) os << r.title << '\n';
  os << std::left << std::setw(10) << "Resource" << std::right << std::setw(13) << "Utilization" << std::setw(10)
     << "Total" << std::setw(12) << "Percentage" << '\n';
  for (const auto& row : r.rows) {
    os << std::left << std::setw(10) << row.name << std::right << std::setw(13) << row.used << std::setw(10)
       << row.total << std::setw(12) << std::fixed << std::setprecision(2) << row.percentage() << '\n';
  }
  return os.str();
}

std::string format_throughput_table(const std::vector<ThroughputRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(24) << "Model" << std::setw(14) << "Platform" << std::right << std::setw(12)
     << "Throughput" << '\n';
  for (const auto& row : rows) {
    os << std::left << std::setw(24) << row.model << std::setw(14) << row.platform << std::right << std::setw(12)
       << std::fixed << std::setprecision(0) << row.fps << '\n';
  }
  return os.str();
}

ResourceRecord reference_resources_nin() {
  return {"NIN single kernel", {{"DSP", 575, 9024}, {"FF", 88845, 2607360}, {"LUT", 137387, 1303680}}};
}

ResourceRecord reference_resources_resnet18() {
  return {"ResNet-18 single kernel", {{"DSP", 465, 9024}, {"FF", 112347, 2607360}, {"LUT", 161306, 1303680}}};
}

std::vector<ReferenceDeployment> reference_deployments() {
  return {{"NIN", 9, 1.53, 3890.0}, {"ResNet-18", 8, 1.62, 3123.0}};
}

PoolingReference reference_pooling_accuracy() { return {87.09, 87.42, 86.88}; }

}  // namespace bcnn
