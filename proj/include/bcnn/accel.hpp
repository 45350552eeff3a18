#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bcnn/binary_ops.hpp"
#include "bcnn/model.hpp"

namespace bcnn {

/// First-order model of one replicated convolution kernel.
struct KernelConfig {
  std::size_t p_out = 1;
  std::size_t p_in = 1;
  std::size_t ii = 1;             // initiation interval, cycles
  std::size_t pipeline_fill = 10; // cycles added once per layer
  double clock_hz = 300e6;
  double kernel_latency_s = 0.0;  // measured or estimated per-frame latency
  std::size_t kernel_count = 1;

  void validate() const;
};

/// ceil(out_c/p_out) * ceil(ceil(in_c/64)/p_in) * oh * ow * kh * kw * ii + fill.
std::uint64_t conv_cycles(const ConvGeometry& g, std::size_t in_h, std::size_t in_w, const KernelConfig& cfg);

/// Cycles of every binarized convolution of a model for one 1-image frame.
std::uint64_t model_binary_cycles(const ModelGraph& model, const KernelConfig& cfg);

/// floor(kernel_count / kernel_latency_s).
std::uint64_t throughput(const KernelConfig& cfg);

/// fpga / baseline rounded to two decimals.
double speedup_report(double fpga_fps, double baseline_fps);

struct ResourceUse {
  std::string name;  // DSP, FF, LUT
  std::uint64_t used = 0;
  std::uint64_t total = 0;

  /// used / total * 100.
  double percentage() const;
};

struct ResourceRecord {
  std::string title;
  std::vector<ResourceUse> rows;
};

/// Resource/Utilization/Total/Percentage table with two-decimal percentages.
std::string format_resource_table(const ResourceRecord& r);

struct ThroughputRow {
  std::string model;
  std::string platform;
  double fps = 0.0;
};

/// Model/Platform/Throughput table.
std::string format_throughput_table(const std::vector<ThroughputRow>& rows);

/// Reported FPGA resource usage (NIN and ResNet-18 deployments on the
/// 9024-DSP device).
ResourceRecord reference_resources_nin();
ResourceRecord reference_resources_resnet18();

struct ReferenceDeployment {
  std::string model;
  std::size_t kernels;
  double latency_ms;
  double gpu_fps;  // RTX 6000 reference, not measured here
};

std::vector<ReferenceDeployment> reference_deployments();

/// Reported pooling comparison accuracies (%), reference only.
struct PoolingReference {
  double spectral, average, max;
};
PoolingReference reference_pooling_accuracy();

}  // namespace bcnn
