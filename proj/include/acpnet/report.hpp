#pragma once

#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "acpnet/metrics.hpp"

namespace acpnet {

/// One-row results table: mIoU, OA, then IoU per class, all in percent.
/// Classes excluded from the mean print as "-".
inline void write_metrics_table(std::ostream& os, const SegmentationMetrics& m, std::span<const char* const> names) {
  auto cell = [&](const std::string& s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%9s", s.c_str());
    os << buf;
  };
  auto pct = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return std::string(buf);
  };
  cell("mIoU");
  cell("OA");
  for (std::size_t c = 0; c < m.iou.size(); ++c) cell(c < names.size() ? names[c] : "c" + std::to_string(c));
  os << '\n';
  cell(pct(m.miou));
  cell(pct(m.oa));
  for (const auto& v : m.iou) cell(v ? pct(*v) : "-");
  os << '\n';
}

/// Full-precision metrics; doubles round-trip exactly through the JSON text.
inline nlohmann::json metrics_json(const SegmentationMetrics& m, std::span<const char* const> names) {
  nlohmann::json j;
  j["miou"] = m.miou;
  j["oa"] = m.oa;
  nlohmann::json per = nlohmann::json::object();
  for (std::size_t c = 0; c < m.iou.size(); ++c) {
    const std::string key = c < names.size() ? names[c] : "c" + std::to_string(c);
    per[key] = m.iou[c] ? nlohmann::json(*m.iou[c]) : nlohmann::json(nullptr);
  }
  j["iou"] = per;
  return j;
}

}  // namespace acpnet
