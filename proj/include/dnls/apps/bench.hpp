// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dnls::apps {

inline constexpr const char* kBenchHeader =
    "experiment,solver,backward_mode,num_poses,batch_size,iterations,forward_ms,backward_ms,peak_bytes,final_objective";

// One PGO forward+backward configuration on a Cube graph. Iterations are
// forced: tolerances are zero, so every run takes exactly `iterations` steps.
struct BenchConfig {
  std::string experiment = "default";
  std::string solver = "sparse";          // linear solver: sparse | dense
  std::string backward_mode = "implicit"; // unroll | truncated:K | implicit | dlm[:EPS] | none
  std::int64_t num_poses = 64;
  std::int64_t batch_size = 4;
  int iterations = 10;
  std::string method = "gn";
  double loop_closure_prob = 0.1;
  std::uint64_t seed = 0;
  bool vectorize = true;
};

struct BenchSuite {
  int repeats = 3;
  std::size_t memory_limit_bytes = 0;  // 0: unlimited
  std::vector<BenchConfig> configs;
};

// JSON suite: {"repeats": 3, "memory_limit_bytes": 0, "defaults": {...},
// "experiments": [{"name": ..., <field>: value or [values]}, ...]}.
// Array-valued fields expand to their Cartesian product, in alphabetical
// key order with the last key varying fastest.
BenchSuite parse_suite(const std::string& json_text);
BenchSuite load_suite(const std::string& path);

struct BenchRow {
  BenchConfig config;
  bool ok = true;  // false: the configuration ran out of memory
  double forward_ms = 0;
  double backward_ms = 0;
  std::size_t peak_bytes = 0;
  double final_objective = 0;  // mean over the batch
};

// Runs one repeat. Out-of-memory yields ok = false rather than an exception.
BenchRow run_config(const BenchConfig& cfg, std::size_t memory_limit = 0);

using BenchProgress = std::function<void(const BenchRow&, int repeat)>;
// One row per configuration and repeat.
std::vector<BenchRow> run_suite(const BenchSuite& suite, const BenchProgress& progress = {});

void write_csv(const std::vector<BenchRow>& rows, std::ostream& out);
std::vector<BenchRow> read_csv(std::istream& in);
std::vector<BenchRow> read_csv(const std::string& path);

// Median forward/backward/peak over repeats of identical configurations.
struct BenchSummary {
  BenchConfig config;
  bool ok = true;
  int repeats = 0;
  double forward_ms = 0;
  double backward_ms = 0;
  double peak_bytes = 0;
  double final_objective = 0;
  double total_ms() const noexcept { return forward_ms + backward_ms; }
};
std::vector<BenchSummary> summarize(const std::vector<BenchRow>& rows);

struct TrendCheck {
  std::string name;
  enum class Status { Pass, Fail, Skip } status = Status::Skip;
  std::string detail;
};
const char* trend_status_name(TrendCheck::Status s) noexcept;

// Trend assertions:
//   sparse total time below dense at >= 512 poses;
//   backward time ratio 50/10 iterations >= 3 for unroll, <= 1.5 for
//   implicit and DLM;
//   unroll peak memory increasing in iterations, implicit within 10% of its
//   10-iteration value.
// Checks without matching rows are skipped.
std::vector<TrendCheck> check_trends(const std::vector<BenchRow>& rows);

}  // namespace dnls::apps
