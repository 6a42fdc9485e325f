#pragma once

#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

namespace dept {

// One metrics line. Negative ids and NaN values are "not applicable" and
// are omitted from the serialized record.
struct MetricsRecord {
  std::string phase;  // "train" | "eval" | "ct"
  std::int64_t round = -1;
  std::int64_t step = -1;
  std::int64_t source_id = -1;
  double loss = std::numeric_limits<double>::quiet_NaN();
  double ppl = std::numeric_limits<double>::quiet_NaN();
  double param_norm = std::numeric_limits<double>::quiet_NaN();
  double act_norm = std::numeric_limits<double>::quiet_NaN();
  double lr = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t comm_bytes_cum = 0;
};

class MetricsSink {
 public:
  virtual ~MetricsSink() = default;
  virtual void emit(const MetricsRecord& r) = 0;
};

// JSON-lines writer with alphabetically ordered keys; byte-identical for
// identical record streams.
class JsonlMetricsSink : public MetricsSink {
 public:
  explicit JsonlMetricsSink(const std::string& path);
  void emit(const MetricsRecord& r) override;

 private:
  std::ofstream out_;
};

class MemoryMetricsSink : public MetricsSink {
 public:
  void emit(const MetricsRecord& r) override { records.push_back(r); }
  std::vector<MetricsRecord> records;
};

std::string metrics_record_to_json(const MetricsRecord& r);

}  // namespace dept
