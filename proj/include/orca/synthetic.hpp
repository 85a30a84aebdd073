#pragma once

#include <set>
#include <string>
#include <vector>

#include "orca/corpus.hpp"

namespace orca {

enum class TaskKind { kSentiment, kEntailment };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

// A two-source corpus where only task-relevant sentences (cue words of one
// class next to that class's verbalizer word or a synonym) carry the
// information a prompted classifier needs.
struct SyntheticConfig {
  TaskKind task_kind = TaskKind::kSentiment;
  int vocab_size = 600;
  int context_len = 64;
  int docs_a = 1000;
  int docs_b = 800;
  int doc_len_min = 24;
  int doc_len_max = 48;
  // Probability that a generated sentence of that source is task-relevant.
  double relevant_rate_a = 0.0;
  double relevant_rate_b = 0.8;
  int cue_words_per_class = 12;
  int synonyms_per_class = 3;
  // Chance that a relevant sentence also carries the class's verbalizer word
  // or one of its synonyms.
  double polarity_word_rate = 1.0;
  // Chance that the polarity word comes in an "it was <verbalizer> ." frame
  // ahead of the sentence rather than inline, and the chance that a frame's
  // verbalizer is drawn from a random class instead of the document's.
  double frame_rate = 0.5;
  double frame_noise = 0.0;
  // Chance that a cue word in a relevant sentence belongs to another class.
  double cue_noise = 0.15;
  // Chance that a filler-sentence token is a random cue word.
  double stray_cue_rate = 0.03;
  int task_examples = 400;
  int task_train_examples = 200;
  int input_len_min = 6;
  int input_len_max = 14;
  double input_cue_rate = 0.35;
  double input_noise = 0.1;
  double mask_rate = 0.15;

  void validate() const;
};

struct SyntheticTestbed {
  Vocabulary vocab;
  SpecialTokens special;
  std::vector<Document> documents;
  std::vector<PretrainExample> examples;
  std::vector<TaskExample> task;        // evaluation / attribution set
  std::vector<TaskExample> task_train;  // prompt tuning and reference samples
  std::vector<std::string> template_pattern;
  std::vector<std::string> verbalizer_words;
  std::vector<std::vector<std::string>> synonyms;  // per class
  // Expanded examples whose masked token is a verbalizer word or synonym.
  std::set<std::string> planted_ids;
};

inline const std::string kSourceA = "SOURCE_A";
inline const std::string kSourceB = "SOURCE_B";

SyntheticTestbed generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed);

}  // namespace orca
