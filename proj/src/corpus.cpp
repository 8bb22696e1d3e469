#include "talkerlab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "talkerlab/audio.hpp"

using nlohmann::json;

namespace talkerlab::corpus {

bool is_valid_emotion(const std::string& label) {
  return std::find(kEmotions.begin(), kEmotions.end(), label) != kEmotions.end();
}

bool is_valid_intent(const std::string& label) {
  return std::find(kIntents.begin(), kIntents.end(), label) != kIntents.end();
}

const char* to_string(Language v) { return v == Language::EN ? "EN" : "ZH"; }
const char* to_string(Source v) {
  switch (v) {
    case Source::collection: return "collection";
    case Source::recording: return "recording";
    default: return "synthetic";
  }
}
const char* to_string(Split v) {
  switch (v) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    default: return "test";
  }
}

Language language_from_string(const std::string& s) {
  if (s == "EN") return Language::EN;
  if (s == "ZH") return Language::ZH;
  throw std::runtime_error("unknown language: " + s);
}
Source source_from_string(const std::string& s) {
  if (s == "collection") return Source::collection;
  if (s == "recording") return Source::recording;
  if (s == "synthetic") return Source::synthetic;
  throw std::runtime_error("unknown source: " + s);
}
Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw std::runtime_error("unknown split: " + s);
}

std::string manifest_to_json(const DialogueManifest& m) {
  json j;
  j["dialogue_id"] = m.dialogue_id;
  j["language"] = to_string(m.language);
  j["source"] = to_string(m.source);
  j["split"] = to_string(m.split);
  j["utterances"] = json::array();
  for (const Utterance& u : m.utterances) {
    json ju;
    ju["speaker_id"] = u.speaker_id;
    ju["text"] = u.text;
    ju["audio_ref"] = u.audio_ref;
    ju["duration_s"] = u.duration_s;
    ju["turn_index"] = u.turn_index;
    if (u.emotion) ju["emotion"] = *u.emotion;
    if (u.intent) ju["intent"] = *u.intent;
    j["utterances"].push_back(ju);
  }
  return j.dump(2);
}

DialogueManifest manifest_from_json(const std::string& text) {
  const json j = json::parse(text);
  DialogueManifest m;
  m.dialogue_id = j.at("dialogue_id").get<std::string>();
  m.language = language_from_string(j.at("language").get<std::string>());
  m.source = source_from_string(j.at("source").get<std::string>());
  m.split = split_from_string(j.at("split").get<std::string>());
  for (const json& ju : j.at("utterances")) {
    Utterance u;
    u.speaker_id = ju.at("speaker_id").get<std::string>();
    u.text = ju.at("text").get<std::string>();
    u.audio_ref = ju.at("audio_ref").get<std::string>();
    u.duration_s = ju.at("duration_s").get<double>();
    u.turn_index = ju.at("turn_index").get<int>();
    if (ju.contains("emotion")) u.emotion = ju.at("emotion").get<std::string>();
    if (ju.contains("intent")) u.intent = ju.at("intent").get<std::string>();
    m.utterances.push_back(std::move(u));
  }
  return m;
}

void save_manifest(const fs::path& path, const DialogueManifest& m) {
  write_text_file(path, manifest_to_json(m) + "\n");
}

DialogueManifest load_manifest(const fs::path& path) {
  return manifest_from_json(read_text_file(path));
}

namespace {

json stats_to_json_obj(const CorpusStats& s) {
  json j;
  j["dialogue_count"] = s.dialogue_count;
  j["utterance_count"] = s.utterance_count;
  j["word_count"] = s.word_count;
  j["duration_h"] = s.duration_h;
  j["min_utterance_s"] = s.min_utterance_s;
  j["max_utterance_s"] = s.max_utterance_s;
  j["mean_utterance_s"] = s.mean_utterance_s;
  j["min_turns"] = s.min_turns;
  j["max_turns"] = s.max_turns;
  j["mean_turns"] = s.mean_turns;
  j["speaker_count"] = s.speaker_count;
  j["speaker_count_is_lower_bound"] = s.speaker_count_is_lower_bound;
  j["word_count_policy"] = s.word_count_policy;
  return j;
}

CorpusStats stats_from_json_obj(const json& j) {
  CorpusStats s;
  s.dialogue_count = j.at("dialogue_count").get<long long>();
  s.utterance_count = j.at("utterance_count").get<long long>();
  s.word_count = j.at("word_count").get<long long>();
  s.duration_h = j.at("duration_h").get<double>();
  s.min_utterance_s = j.value("min_utterance_s", 0.0);
  s.max_utterance_s = j.value("max_utterance_s", 0.0);
  s.mean_utterance_s = j.value("mean_utterance_s", 0.0);
  s.min_turns = j.value("min_turns", 0LL);
  s.max_turns = j.value("max_turns", 0LL);
  s.mean_turns = j.value("mean_turns", 0.0);
  s.speaker_count = j.value("speaker_count", 0LL);
  s.speaker_count_is_lower_bound = j.value("speaker_count_is_lower_bound", false);
  if (j.contains("word_count_policy")) s.word_count_policy = j["word_count_policy"];
  return s;
}

}  // namespace

void save_index(const fs::path& path, const CorpusIndex& index) {
  json j;
  j["format"] = "talkerlab-corpus-index-v1";
  j["language"] = to_string(index.language);
  if (index.claimed_stats) j["claimed_stats"] = stats_to_json_obj(*index.claimed_stats);
  j["dialogues"] = json::array();
  for (const IndexRow& r : index.rows) {
    json jr;
    jr["id"] = r.dialogue_id;
    jr["path"] = r.path;
    jr["split"] = to_string(r.split);
    jr["utterances"] = r.utterances;
    jr["duration_s"] = r.duration_s;
    jr["words"] = r.words;
    jr["speakers"] = r.speakers;
    j["dialogues"].push_back(jr);
  }
  write_text_file(path, j.dump(2) + "\n");
}

CorpusIndex load_index(const fs::path& path) {
  const json j = json::parse(read_text_file(path));
  if (j.value("format", "") != std::string("talkerlab-corpus-index-v1"))
    throw std::runtime_error("unrecognized corpus index format: " + path.string());
  CorpusIndex index;
  index.language = language_from_string(j.at("language").get<std::string>());
  if (j.contains("claimed_stats")) index.claimed_stats = stats_from_json_obj(j["claimed_stats"]);
  for (const json& jr : j.at("dialogues")) {
    IndexRow r;
    r.dialogue_id = jr.at("id").get<std::string>();
    r.path = jr.value("path", "");
    r.split = split_from_string(jr.at("split").get<std::string>());
    r.utterances = jr.at("utterances").get<long long>();
    r.duration_s = jr.at("duration_s").get<double>();
    r.words = jr.at("words").get<long long>();
    r.speakers = jr.value("speakers", 2LL);
    index.rows.push_back(std::move(r));
  }
  return index;
}

long long count_words(const std::string& text, Language lang) {
  if (lang == Language::EN) return static_cast<long long>(split_ws(text).size());
  long long n = 0;
  for (uint32_t cp : utf8_codepoints(text))
    if (cp != ' ' && cp != '\t' && cp != '\n' && cp != '\r' && cp != 0x3000) ++n;
  return n;
}

std::vector<Violation> validate_manifest(const DialogueManifest& manifest,
                                         const fs::path& audio_base) {
  std::vector<Violation> out;
  const auto add = [&](int turn, std::string rule, std::string detail) {
    out.push_back({manifest.dialogue_id, turn, std::move(rule), std::move(detail)});
  };

  if (manifest.utterances.size() < 2)
    add(-1, "min_utterances", "dialogue must have at least 2 utterances");

  std::set<std::string> speakers;
  for (const Utterance& u : manifest.utterances) speakers.insert(u.speaker_id);
  if (speakers.size() != 2) add(-1, "not two-party", "expected exactly 2 distinct speakers, got " +
                                                         std::to_string(speakers.size()));

  for (size_t i = 0; i < manifest.utterances.size(); ++i) {
    const Utterance& u = manifest.utterances[i];
    if (u.turn_index != static_cast<int>(i))
      add(static_cast<int>(i), "turn_index", "expected " + std::to_string(i) + ", got " +
                                                 std::to_string(u.turn_index));
    if (i > 0 && manifest.utterances[i - 1].speaker_id == u.speaker_id)
      add(static_cast<int>(i), "alternation", "same speaker as previous turn");
    if (u.emotion && !is_valid_emotion(*u.emotion))
      add(static_cast<int>(i), "unknown emotion label", *u.emotion);
    if (u.intent && !is_valid_intent(*u.intent))
      add(static_cast<int>(i), "unknown intent label", *u.intent);
    if (u.duration_s < 0.0)
      add(static_cast<int>(i), "duration_negative", std::to_string(u.duration_s));

    fs::path ap = u.audio_ref;
    if (ap.is_relative() && !audio_base.empty()) ap = audio_base / ap;
    try {
      const audio::Buffer buf = audio::read_wav(ap);
      const double actual = buf.duration_s();
      if (std::abs(actual - u.duration_s) > 1e-3)
        add(static_cast<int>(i), "duration_mismatch",
            "manifest " + format_fixed(u.duration_s, 4) + "s vs audio " +
                format_fixed(actual, 4) + "s");
    } catch (const std::exception& e) {
      add(static_cast<int>(i), "audio_io", e.what());
    }
  }
  return out;
}

namespace {

struct Welford {
  long long n = 0;
  double sum = 0.0, mn = 0.0, mx = 0.0;
  void push(double v) {
    if (n == 0) {
      mn = mx = v;
    } else {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    sum += v;
    ++n;
  }
  double mean() const { return n > 0 ? sum / static_cast<double>(n) : 0.0; }
};

}  // namespace

CorpusStats compute_stats(const std::vector<DialogueManifest>& manifests) {
  CorpusStats s;
  if (manifests.empty()) return s;
  Welford utt_dur, turns;
  std::set<std::string> speakers;
  double total_s = 0.0;
  for (const DialogueManifest& m : manifests) {
    ++s.dialogue_count;
    turns.push(static_cast<double>(m.utterances.size()));
    for (const Utterance& u : m.utterances) {
      ++s.utterance_count;
      s.word_count += count_words(u.text, m.language);
      utt_dur.push(u.duration_s);
      total_s += u.duration_s;
      speakers.insert(u.speaker_id);
    }
  }
  s.duration_h = total_s / 3600.0;
  s.min_utterance_s = utt_dur.mn;
  s.max_utterance_s = utt_dur.mx;
  s.mean_utterance_s = utt_dur.mean();
  s.min_turns = static_cast<long long>(turns.mn);
  s.max_turns = static_cast<long long>(turns.mx);
  s.mean_turns = turns.mean();
  s.speaker_count = static_cast<long long>(speakers.size());
  return s;
}

CorpusStats compute_stats_from_index(const CorpusIndex& index) {
  CorpusStats s;
  if (index.rows.empty()) return s;
  Welford turns;
  double total_s = 0.0;
  for (const IndexRow& r : index.rows) {
    ++s.dialogue_count;
    s.utterance_count += r.utterances;
    s.word_count += r.words;
    total_s += r.duration_s;
    turns.push(static_cast<double>(r.utterances));
  }
  s.duration_h = total_s / 3600.0;
  s.min_turns = static_cast<long long>(turns.mn);
  s.max_turns = static_cast<long long>(turns.mx);
  s.mean_turns = turns.mean();
  // Index rows carry per-dialogue speaker counts, not identities; the distinct
  // total cannot be recovered, so report the per-dialogue max as a lower bound.
  long long max_speakers = 0;
  for (const IndexRow& r : index.rows) max_speakers = std::max(max_speakers, r.speakers);
  s.speaker_count = max_speakers;
  s.speaker_count_is_lower_bound = true;
  return s;
}

SplitAssignment split_corpus(size_t n_dialogues, const std::array<double, 3>& ratios,
                             uint64_t seed) {
  const double rsum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(rsum - 1.0) > 1e-9)
    throw std::invalid_argument("split ratios must sum to 1, got " + format_fixed(rsum, 12));
  int nonzero = 0;
  for (double r : ratios)
    if (r > 0.0) ++nonzero;
  if (static_cast<long long>(n_dialogues) < nonzero)
    throw std::invalid_argument("fewer dialogues than nonzero split buckets");

  const double n = static_cast<double>(n_dialogues);
  // 1e-9 slack keeps exact-fraction ratios (e.g. 707/7033) from flooring down
  // one unit due to rounding in the product.
  long long n_train = static_cast<long long>(std::floor(ratios[0] * n + 1e-9));
  long long n_valid = static_cast<long long>(std::floor(ratios[1] * n + 1e-9));
  long long n_test = static_cast<long long>(std::floor(ratios[2] * n + 1e-9));
  n_train += static_cast<long long>(n_dialogues) - (n_train + n_valid + n_test);

  std::vector<size_t> order(n_dialogues);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  // Fisher-Yates with our own uniform draw, stable across standard libraries.
  for (size_t i = n_dialogues; i > 1; --i) {
    const size_t j = static_cast<size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }

  SplitAssignment a;
  a.by_dialogue.assign(n_dialogues, Split::train);
  for (size_t k = 0; k < n_dialogues; ++k) {
    const long long pos = static_cast<long long>(k);
    Split sp = Split::train;
    if (pos >= n_train && pos < n_train + n_valid)
      sp = Split::valid;
    else if (pos >= n_train + n_valid)
      sp = Split::test;
    a.by_dialogue[order[k]] = sp;
  }
  a.n_train = n_train;
  a.n_valid = n_valid;
  a.n_test = n_test;
  return a;
}

std::string stats_to_json(const CorpusStats& s) { return stats_to_json_obj(s).dump(2); }

std::string format_stats_table(const CorpusStats& s) {
  std::ostringstream os;
  os << "Dialogues            " << s.dialogue_count << "\n"
     << "Utterances           " << s.utterance_count << "\n"
     << "Words                " << s.word_count << "\n"
     << "Duration(h)          " << format_fixed(s.duration_h, 2) << "\n"
     << "Utterance dur (s)    min " << format_fixed(s.min_utterance_s, 2) << "  mean "
     << format_fixed(s.mean_utterance_s, 2) << "  max " << format_fixed(s.max_utterance_s, 2)
     << "\n"
     << "Dialogue turns       min " << s.min_turns << "  mean " << format_fixed(s.mean_turns, 2)
     << "  max " << s.max_turns << "\n"
     << "Speakers             " << (s.speaker_count_is_lower_bound ? "> " : "") << s.speaker_count
     << "\n";
  return os.str();
}

}  // namespace talkerlab::corpus
