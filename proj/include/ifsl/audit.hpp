#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>

namespace ifsl {

// Process-wide record of which dataset samples fed a gradient computation,
// keyed by pipeline stage. Used to check that held-out sets stay untouched
// and that adapters only see support samples.
class AuditLog {
 public:
  static AuditLog& instance();

  void record(const std::string& stage, const std::string& dataset, std::span<const std::size_t> samples);
  void clear();

  // Datasets touched by any stage.
  std::set<std::string> datasets() const;
  std::set<std::size_t> samples(const std::string& stage, const std::string& dataset) const;
  bool touched(const std::string& dataset) const;

 private:
  std::map<std::string, std::map<std::string, std::set<std::size_t>>> used_;  // stage -> dataset -> samples
};

}  // namespace ifsl
