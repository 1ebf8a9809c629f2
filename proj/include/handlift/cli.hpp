#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace handlift::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kDivergence = 3 };

// Sample standard deviation (n - 1); absent for fewer than two values.
struct MeanStd {
  double mean = 0.0;
  std::optional<double> std;
};
MeanStd mean_std(std::span<const double> values);
// "10.09±0.18", or just "10.09" without a std.
std::string format_mean_std(const MeanStd& v, int decimals, double factor = 1.0);

struct SeedResult {
  std::uint64_t seed = 0;
  double mpjpe_mm = 0.0;
  double auc = 0.0;
};

struct VariantResult {
  std::string variant;
  std::size_t params = 0;
  std::vector<SeedResult> runs;
  MeanStd mpjpe;
  MeanStd auc;
};

struct AblationResult {
  std::vector<VariantResult> variants;
};

void aggregate(VariantResult& v);

// header: variant,params,seeds,mpjpe_mean,mpjpe_std,auc_mean,auc_std
// (std fields empty for single-seed variants)
std::string summary_csv(const AblationResult& r);
// header: variant,seed,params,mpjpe_mm,auc
std::string runs_csv(const AblationResult& r);
// Human-readable table: MPJPE in mm, AUC in percent, params in millions.
std::string format_table(const AblationResult& r);

// "lo:hi:step", inclusive of both ends.
std::vector<double> parse_sigma_range(std::string_view text);

// Presets making up an ablation suite ("table1" or "table2").
std::vector<std::string> suite_variants(std::string_view suite);

int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace handlift::cli
