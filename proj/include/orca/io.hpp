#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "orca/corpus.hpp"
#include "orca/evidence.hpp"
#include "orca/model.hpp"

namespace orca::io {

namespace fs = std::filesystem;

// JSONL readers report the 1-based line number of the first bad line.
std::vector<Document> load_corpus(const fs::path& path);
void save_corpus(const fs::path& path, const std::vector<Document>& docs);

std::vector<PretrainExample> load_examples(const fs::path& path);
void save_examples(const fs::path& path, const std::vector<PretrainExample>& examples);

std::vector<TaskExample> load_tasks(const fs::path& path);
void save_tasks(const fs::path& path, const std::vector<TaskExample>& tasks);

Vocabulary load_vocab(const fs::path& path);
void save_vocab(const fs::path& path, const Vocabulary& vocab);

// Entries are re-indexed against `corpus`; unknown ids raise DataError.
EvidenceSet load_evidence(const fs::path& path, const CorpusIndex& corpus);
// Reads ids and metadata without resolving indices (index fields are 0).
EvidenceSet load_evidence_raw(const fs::path& path);
void save_evidence(const fs::path& path, const EvidenceSet& evidence);

// Binary checkpoint: "ORCACKPT" magic, u32 format version, u64 header
// length, JSON header (model config + segment table), then the flat
// parameter array as little-endian float64.
void save_checkpoint(const fs::path& path, const ModelParams& params);
ModelParams load_checkpoint(const fs::path& path);
// Also rejects a checkpoint whose header differs from `expected`.
ModelParams load_checkpoint(const fs::path& path, const ModelConfig& expected);

// Score dump: repeated records of {u32 iteration, u64 count} followed by
// `count` pairs of {u32 example index, f32 score}, little-endian.
struct ScoreDumpRecord {
  std::uint32_t iteration = 0;
  std::vector<std::pair<std::uint32_t, float>> scores;
};
void append_score_dump(const fs::path& path, std::uint32_t iteration, std::span<const double> scores);
std::vector<ScoreDumpRecord> load_score_dump(const fs::path& path);

// Writes to a temporary sibling then renames, so readers never see partial files.
void write_text_atomic(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

}  // namespace orca::io
