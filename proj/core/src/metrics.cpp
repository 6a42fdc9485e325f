#include "dept/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace dept {

std::string metrics_record_to_json(const MetricsRecord& r) {
  nlohmann::json j;
  j["phase"] = r.phase;
  if (r.round >= 0) j["round"] = r.round;
  if (r.step >= 0) j["step"] = r.step;
  if (r.source_id >= 0) j["source_id"] = r.source_id;
  if (!std::isnan(r.loss)) j["loss"] = r.loss;
  if (!std::isnan(r.ppl)) j["ppl"] = r.ppl;
  if (!std::isnan(r.param_norm)) j["param_norm"] = r.param_norm;
  if (!std::isnan(r.act_norm)) j["act_norm"] = r.act_norm;
  if (!std::isnan(r.lr)) j["lr"] = r.lr;
  j["comm_bytes_cum"] = r.comm_bytes_cum;
  return j.dump();
}

JsonlMetricsSink::JsonlMetricsSink(const std::string& path)
    : out_(path, std::ios::binary) {
  if (!out_) throw std::runtime_error("cannot open metrics file: " + path);
}

void JsonlMetricsSink::emit(const MetricsRecord& r) {
  out_ << metrics_record_to_json(r) << "\n";
  out_.flush();
}

}  // namespace dept
