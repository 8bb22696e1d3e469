#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "talkerlab/common.hpp"

namespace talkerlab::corpus {

enum class Language { EN, ZH };
enum class Source { collection, recording, synthetic };
enum class Split { train, valid, test };

constexpr std::array<const char*, 7> kEmotions = {"Neutral", "Happy",   "Surprise", "Fear",
                                                  "Angry",   "Disgust", "Sad"};
constexpr std::array<const char*, 9> kIntents = {"Question",   "Agree",   "Acknowledge",
                                                 "Sympathize", "Encourage", "Console",
                                                 "Suggest",    "Wish",    "Neutral"};

bool is_valid_emotion(const std::string& label);
bool is_valid_intent(const std::string& label);

const char* to_string(Language v);
const char* to_string(Source v);
const char* to_string(Split v);
Language language_from_string(const std::string& s);
Source source_from_string(const std::string& s);
Split split_from_string(const std::string& s);

struct Utterance {
  std::string speaker_id;
  std::string text;
  std::string audio_ref;  // path, possibly relative to the manifest file
  double duration_s = 0.0;
  std::optional<std::string> emotion;
  std::optional<std::string> intent;
  int turn_index = 0;

  bool operator==(const Utterance&) const = default;
};

struct DialogueManifest {
  std::string dialogue_id;
  Language language = Language::EN;
  Source source = Source::synthetic;
  std::vector<Utterance> utterances;
  Split split = Split::train;

  bool operator==(const DialogueManifest&) const = default;
};

struct Violation {
  std::string dialogue_id;
  int turn_index = -1;  // -1 for dialogue-level violations
  std::string rule;
  std::string detail;
};

struct CorpusStats {
  long long dialogue_count = 0;
  long long utterance_count = 0;
  long long word_count = 0;
  double duration_h = 0.0;
  double min_utterance_s = 0.0, max_utterance_s = 0.0, mean_utterance_s = 0.0;
  long long min_turns = 0, max_turns = 0;
  double mean_turns = 0.0;
  long long speaker_count = 0;
  bool speaker_count_is_lower_bound = false;
  std::string word_count_policy = "EN whitespace tokens; ZH non-space characters";
};

// One JSON document per dialogue plus a corpus index file.
std::string manifest_to_json(const DialogueManifest& m);
DialogueManifest manifest_from_json(const std::string& text);
void save_manifest(const fs::path& path, const DialogueManifest& m);
DialogueManifest load_manifest(const fs::path& path);

struct IndexRow {
  std::string dialogue_id;
  std::string path;
  Split split = Split::train;
  long long utterances = 0;
  double duration_s = 0.0;
  long long words = 0;
  long long speakers = 2;
};

struct CorpusIndex {
  Language language = Language::EN;
  std::vector<IndexRow> rows;
  // Optional stats block claimed by whoever produced the index; compute_stats
  // over the rows should reproduce it.
  std::optional<CorpusStats> claimed_stats;
};

void save_index(const fs::path& path, const CorpusIndex& index);
CorpusIndex load_index(const fs::path& path);

// Word counting: whitespace tokens for EN, non-space codepoints for ZH.
long long count_words(const std::string& text, Language lang);

// Empty list iff every type invariant holds. audio_base resolves relative
// audio_ref paths; unreadable audio becomes an I/O violation entry, never an
// exception.
std::vector<Violation> validate_manifest(const DialogueManifest& manifest,
                                         const fs::path& audio_base = {});

CorpusStats compute_stats(const std::vector<DialogueManifest>& manifests);
CorpusStats compute_stats_from_index(const CorpusIndex& index);

struct SplitAssignment {
  std::vector<Split> by_dialogue;  // parallel to the input order
  long long n_train = 0, n_valid = 0, n_test = 0;
};

// Deterministic for a fixed seed; dialogue granularity; floor rounding with
// the remainder assigned to train.
SplitAssignment split_corpus(size_t n_dialogues, const std::array<double, 3>& ratios,
                             uint64_t seed);

std::string stats_to_json(const CorpusStats& s);
std::string format_stats_table(const CorpusStats& s);

}  // namespace talkerlab::corpus
