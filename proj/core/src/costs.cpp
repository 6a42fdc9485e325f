#include "dept/costs.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace dept {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Glob: return "GLOB";
    case Variant::Trim: return "TRIM";
    case Variant::Spec: return "SPEC";
    case Variant::SpecOpt: return "SPEC-OPT";
    case Variant::Std: return "STD";
    case Variant::Act: return "ACT";
  }
  return "?";
}

Variant variant_from_name(const std::string& name) {
  if (name == "GLOB") return Variant::Glob;
  if (name == "TRIM") return Variant::Trim;
  if (name == "SPEC") return Variant::Spec;
  if (name == "SPEC-OPT" || name == "SPEC_OPT") return Variant::SpecOpt;
  if (name == "STD") return Variant::Std;
  if (name == "ACT") return Variant::Act;
  throw std::runtime_error("unknown variant: " + name);
}

double memory_cost(const CostInputs& in) {
  double m = in.total_params;
  switch (in.variant) {
    case Variant::Std:
    case Variant::Act:
    case Variant::Glob:
      break;
    case Variant::Trim:
    case Variant::Spec:
    case Variant::SpecOpt:
      m -= (in.global_vocab - in.mean_local_vocab) * in.d_model;
      break;
  }
  if (m < 0) throw std::runtime_error("inconsistent inputs");
  return m;
}

double comms_cost_per_step(const CostInputs& in) {
  switch (in.variant) {
    case Variant::Std:
    case Variant::Act:
      return in.total_params;
    case Variant::Glob:
      return in.total_params / in.local_steps;
    case Variant::Trim:
      return (in.total_params -
              (in.global_vocab - in.mean_local_vocab) * in.d_model) /
             in.local_steps;
    case Variant::Spec:
    case Variant::SpecOpt:
      return (in.total_params - (in.global_vocab + in.seq_len) * in.d_model) /
             in.local_steps;
  }
  return 0;
}

CostReport build_cost_report(const CostInputs& in) {
  CostReport r;
  r.memory_params = memory_cost(in);
  r.per_step_comms_params = comms_cost_per_step(in);
  r.memory_ratio_vs_std = r.memory_params / in.total_params;
  r.comms_ratio_vs_std = r.per_step_comms_params / in.total_params;
  return r;
}

std::int64_t body_param_count(const Architecture& arch) {
  const std::int64_t d = static_cast<std::int64_t>(arch.d_model);
  const std::int64_t e = d * static_cast<std::int64_t>(arch.expansion_ratio);
  const std::int64_t per_block = 2 * d                // ln1
                                 + d * 3 * d + 3 * d  // qkv
                                 + d * d + d          // attn out
                                 + 2 * d              // ln2
                                 + d * e + e          // ff in
                                 + e * d + d;         // ff out
  return static_cast<std::int64_t>(arch.num_blocks) * per_block + 2 * d;
}

std::int64_t embedding_param_count(const Architecture& arch) {
  const std::int64_t d = static_cast<std::int64_t>(arch.d_model);
  return static_cast<std::int64_t>(arch.vocab_size) * d +
         static_cast<std::int64_t>(arch.seq_len) * d;
}

std::vector<ReferenceRow> reference_rows() {
  std::vector<ReferenceRow> rows;
  const auto add = [&](const std::string& family, Variant m, double nl,
                       double t, double vk, double mparams, double v,
                       double d) {
    rows.push_back({family, m, nl, t, vk, mparams, v, d, 2048});
  };
  // Multilingual, 12 blocks, d=768, |V|=250112, M=278M.
  add("multilingual-12", Variant::Std, 5000, 1, 250112, 278e6, 250112, 768);
  add("multilingual-12", Variant::Glob, 500, 10, 250112, 278e6, 250112, 768);
  add("multilingual-12", Variant::Trim, 500, 10, 216135, 278e6, 250112, 768);
  add("multilingual-12", Variant::Spec, 500, 10, 216135, 278e6, 250112, 768);
  add("multilingual-12", Variant::SpecOpt, 500, 10, 50257, 278e6, 250112, 768);
  // Multilingual, 24 blocks, d=2048, |V|=250112, M=1.71B.
  add("multilingual-24", Variant::Std, 7000, 1, 250112, 1.71e9, 250112, 2048);
  add("multilingual-24", Variant::SpecOpt, 500, 14, 50257, 1.71e9, 250112,
      2048);
  // Multi-domain, 12 blocks, d=768, |V|=50257, M=125M.
  add("multidomain-12", Variant::Std, 5000, 1, 50257, 125e6, 50257, 768);
  add("multidomain-12", Variant::Glob, 500, 10, 50257, 125e6, 50257, 768);
  add("multidomain-12", Variant::Trim, 500, 10, 45554, 125e6, 50257, 768);
  add("multidomain-12", Variant::Spec, 500, 10, 45554, 125e6, 50257, 768);
  // Multi-domain, 24 blocks, d=1024, |V|=50257, M=350M.
  add("multidomain-24", Variant::Std, 13500, 1, 50257, 350e6, 50257, 1024);
  add("multidomain-24", Variant::Glob, 500, 27, 50257, 350e6, 50257, 1024);
  add("multidomain-24", Variant::Trim, 500, 27, 45554, 350e6, 50257, 1024);
  add("multidomain-24", Variant::Spec, 500, 27, 45554, 350e6, 50257, 1024);
  return rows;
}

std::string format_param_count(double params) {
  char buf[64];
  if (params >= 1e9) {
    std::snprintf(buf, sizeof(buf), "%.3gB", params / 1e9);
  } else if (params >= 1e5) {
    // Sub-million per-step costs still read in millions, like "0.56M".
    std::snprintf(buf, sizeof(buf), "%.3gM", params / 1e6);
  } else if (params >= 1e3) {
    std::snprintf(buf, sizeof(buf), "%.3gk", params / 1e3);
  } else {
    std::snprintf(buf, sizeof(buf), "%.3g", params);
  }
  return buf;
}

namespace {

CostInputs row_inputs(const ReferenceRow& r) {
  CostInputs in;
  in.total_params = r.total_params;
  in.global_vocab = r.global_vocab;
  in.mean_local_vocab = r.mean_local_vocab;
  in.d_model = r.d_model;
  in.seq_len = r.seq_len;
  in.local_steps = r.local_steps;
  in.variant = r.method;
  return in;
}

}  // namespace

std::string cost_table_text(const std::vector<ReferenceRow>& rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-16s %-9s %8s %5s %10s %12s %20s %24s\n",
                "Type", "Method", "N_local", "T", "mean|Vk|", "mean|Vk|*d",
                "mem params (ratio)", "per-step comms (ratio)");
  out << line;
  for (const auto& r : rows) {
    const CostReport rep = build_cost_report(row_inputs(r));
    std::snprintf(
        line, sizeof(line), "%-16s %-9s %8.0f %5.0f %10.0f %12s %10s (%.3g)  %12s (%.3g)\n",
        r.family.c_str(), variant_name(r.method).c_str(), r.local_steps,
        r.rounds, r.mean_local_vocab,
        format_param_count(r.mean_local_vocab * r.d_model).c_str(),
        format_param_count(rep.memory_params).c_str(), rep.memory_ratio_vs_std,
        format_param_count(rep.per_step_comms_params).c_str(),
        rep.comms_ratio_vs_std);
    out << line;
  }
  return out.str();
}

std::string cost_table_csv(const std::vector<ReferenceRow>& rows) {
  std::ostringstream out;
  out << "type,method,n_local,t,mean_local_vocab,mean_local_vocab_x_d,"
         "memory_params,memory_ratio,per_step_comms_params,comms_ratio\n";
  for (const auto& r : rows) {
    const CostReport rep = build_cost_report(row_inputs(r));
    out << r.family << ',' << variant_name(r.method) << ',' << r.local_steps
        << ',' << r.rounds << ',' << r.mean_local_vocab << ','
        << r.mean_local_vocab * r.d_model << ',' << rep.memory_params << ','
        << rep.memory_ratio_vs_std << ',' << rep.per_step_comms_params << ','
        << rep.comms_ratio_vs_std << '\n';
  }
  return out.str();
}

void CommCounter::on_download(std::uint64_t params,
                              std::uint64_t embedding_params) {
  downloaded_ += params;
  downloaded_emb_ += embedding_params;
}

void CommCounter::on_upload(std::uint64_t params,
                            std::uint64_t embedding_params) {
  uploaded_ += params;
  uploaded_emb_ += embedding_params;
}

void CommCounter::on_worker_steps(std::uint64_t steps) {
  worker_steps_ += steps;
}

double CommCounter::avg_upload_params_per_worker_step() const {
  if (worker_steps_ == 0) return 0.0;
  return static_cast<double>(uploaded_) / static_cast<double>(worker_steps_);
}

}  // namespace dept
