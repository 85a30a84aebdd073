#include "orca/evidence.hpp"

namespace orca {

std::string to_string(Backend b) { return b == Backend::kGradient ? "gradient" : "embedding"; }

std::string to_string(Lagging l) { return l == Lagging::kMaxLag ? "max_lag" : "no_lag"; }

Backend backend_from_string(const std::string& s) {
  if (s == "gradient") return Backend::kGradient;
  if (s == "embedding") return Backend::kEmbedding;
  throw ConfigError("unknown backend '" + s + "' (expected gradient or embedding)");
}

Lagging lagging_from_string(const std::string& s) {
  if (s == "max_lag") return Lagging::kMaxLag;
  if (s == "no_lag") return Lagging::kNoLag;
  throw ConfigError("unknown lagging mode '" + s + "' (expected max_lag or no_lag)");
}

std::vector<ExampleIndex> EvidenceSet::indices() const {
  std::vector<ExampleIndex> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.index);
  return out;
}

std::map<ExampleIndex, int> EvidenceSet::multiplicity() const {
  std::map<ExampleIndex, int> counts;
  for (const auto& e : entries) ++counts[e.index];
  return counts;
}

std::vector<EvidenceEntry> EvidenceSet::iteration(int i) const {
  std::vector<EvidenceEntry> out;
  for (const auto& e : entries) {
    if (e.iteration == i) out.push_back(e);
  }
  return out;
}

}  // namespace orca
