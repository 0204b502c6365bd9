#include "ifsl/audit.hpp"

namespace ifsl {

AuditLog& AuditLog::instance() {
  static AuditLog log;
  return log;
}

void AuditLog::record(const std::string& stage, const std::string& dataset,
                      std::span<const std::size_t> samples) {
  auto& slot = used_[stage][dataset];
  slot.insert(samples.begin(), samples.end());
}

void AuditLog::clear() { used_.clear(); }

std::set<std::string> AuditLog::datasets() const {
  std::set<std::string> out;
  for (const auto& [stage, per_ds] : used_)
    for (const auto& [ds, s] : per_ds) out.insert(ds);
  return out;
}

std::set<std::size_t> AuditLog::samples(const std::string& stage, const std::string& dataset) const {
  auto it = used_.find(stage);
  if (it == used_.end()) return {};
  auto jt = it->second.find(dataset);
  return jt == it->second.end() ? std::set<std::size_t>{} : jt->second;
}

bool AuditLog::touched(const std::string& dataset) const { return datasets().count(dataset) > 0; }

}  // namespace ifsl
