#pragma once

#include <map>
#include <string>
#include <vector>

#include "orca/common.hpp"

namespace orca {

enum class Backend { kGradient, kEmbedding };
enum class Lagging { kMaxLag, kNoLag };

std::string to_string(Backend b);
std::string to_string(Lagging l);
Backend backend_from_string(const std::string& s);
Lagging lagging_from_string(const std::string& s);

struct EvidenceEntry {
  ExampleIndex index = 0;
  std::string example_id;
  int iteration = 1;  // 1-based
  double score = 0.0;

  bool operator==(const EvidenceEntry&) const = default;
};

// Selected multiset S with provenance. Entries are kept in iteration order;
// within an iteration they are ordered by descending score.
struct EvidenceSet {
  std::vector<EvidenceEntry> entries;
  std::string method;
  std::string backend;
  std::string lagging;
  std::uint64_t seed = 0;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  std::vector<ExampleIndex> indices() const;
  // Multiplicity of each example index in S.
  std::map<ExampleIndex, int> multiplicity() const;
  std::vector<EvidenceEntry> iteration(int i) const;

  bool operator==(const EvidenceSet&) const = default;
};

}  // namespace orca
