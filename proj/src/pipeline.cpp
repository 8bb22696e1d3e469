#include "talkerlab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

using nlohmann::json;

namespace talkerlab::pipeline {

std::vector<std::string> PipelineConfig::validate() const {
  if (silence_gap_s <= 0 || max_silence_ratio <= 0 || min_scene_s <= 0 || min_snr_db <= 0 ||
      min_utterances <= 0 || min_per_speaker <= 0 || vad_frame_ms <= 0)
    throw std::invalid_argument("pipeline config: all thresholds must be > 0");
  std::vector<std::string> warnings;
  if (min_utterances < 2 * min_per_speaker - 1)
    warnings.push_back("min_utterances < 2*min_per_speaker - 1; per-speaker rule dominates");
  return warnings;
}

// --- built-in adapters -------------------------------------------------------

namespace {

struct IdentitySeparator final : SeparationAdapter {
  SeparationResult separate(const audio::Buffer& clip, const fs::path&) override {
    SeparationResult r;
    r.vocal = clip;
    r.residual = clip;
    std::fill(r.residual.samples.begin(), r.residual.samples.end(), 0.0);
    return r;
  }
};

struct SidecarSeparator final : SeparationAdapter {
  SeparationResult separate(const audio::Buffer& clip, const fs::path& clip_ref) override {
    fs::path vocal_path = clip_ref;
    vocal_path += ".vocal.wav";
    fs::path residual_path = clip_ref;
    residual_path += ".residual.wav";
    SeparationResult r;
    r.vocal = audio::read_wav(vocal_path);
    r.residual = audio::read_wav(residual_path);
    if (r.vocal.samples.size() != clip.samples.size() ||
        r.residual.samples.size() != clip.samples.size())
      throw std::runtime_error("sidecar separation length mismatch for " + clip_ref.string());
    return r;
  }
};

struct SidecarDiarizer final : DiarizationAdapter {
  std::vector<DiarizedTurn> diarize(const audio::Buffer&, const fs::path& clip_ref) override {
    fs::path p = clip_ref;
    p += ".diar.tsv";
    const std::string text = read_text_file(p);
    std::vector<DiarizedTurn> turns;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto cols = split_on(line, '\t');
      if (cols.size() < 3) throw std::runtime_error("bad diar.tsv line: " + line);
      DiarizedTurn t;
      t.speaker_label = std::stoi(cols[0]);
      t.start_s = std::stod(cols[1]);
      t.end_s = std::stod(cols[2]);
      if (!(t.start_s < t.end_s)) throw std::runtime_error("diar turn start >= end: " + line);
      turns.push_back(t);
    }
    std::sort(turns.begin(), turns.end(),
              [](const DiarizedTurn& a, const DiarizedTurn& b) { return a.start_s < b.start_s; });
    return turns;
  }
};

struct SidecarAsr final : AsrAdapter {
  std::vector<std::string> transcribe(const audio::Buffer&, const std::vector<DiarizedTurn>& turns,
                                      const fs::path& clip_ref) override {
    fs::path p = clip_ref;
    p += ".asr.txt";
    std::string text = read_text_file(p);
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
    std::vector<std::string> parts = split_on(text, '|');
    if (parts.size() != turns.size())
      throw std::runtime_error("sidecar asr expects " + std::to_string(turns.size()) +
                               " transcripts, found " + std::to_string(parts.size()));
    return parts;
  }
};

}  // namespace

std::shared_ptr<SeparationAdapter> make_identity_separator() {
  return std::make_shared<IdentitySeparator>();
}
std::shared_ptr<SeparationAdapter> make_sidecar_separator() {
  return std::make_shared<SidecarSeparator>();
}
std::shared_ptr<DiarizationAdapter> make_sidecar_diarizer() {
  return std::make_shared<SidecarDiarizer>();
}
std::shared_ptr<AsrAdapter> make_sidecar_asr() { return std::make_shared<SidecarAsr>(); }

AdapterRegistry AdapterRegistry::with_builtins() {
  AdapterRegistry reg;
  reg.separation["identity"] = make_identity_separator();
  reg.separation["sidecar"] = make_sidecar_separator();
  reg.diarization["sidecar"] = make_sidecar_diarizer();
  reg.asr["sidecar"] = make_sidecar_asr();
  return reg;
}

// --- operations --------------------------------------------------------------

std::vector<VoiceActivitySpan> detect_voice_activity(const audio::Buffer& buf, double frame_ms,
                                                     double energy_quantile) {
  if (buf.samples.empty()) throw std::invalid_argument("detect_voice_activity: empty audio");
  const size_t frame = std::max<size_t>(1, static_cast<size_t>(std::lround(frame_ms * buf.rate / 1000.0)));
  const size_t n = buf.samples.size();
  const size_t n_frames = (n + frame - 1) / frame;

  std::vector<double> rms(n_frames);
  for (size_t f = 0; f < n_frames; ++f) {
    const size_t a = f * frame;
    const size_t b = std::min(n, a + frame);
    double acc = 0.0;
    for (size_t i = a; i < b; ++i) acc += buf.samples[i] * buf.samples[i];
    rms[f] = std::sqrt(acc / static_cast<double>(b - a));
  }

  std::vector<double> sorted = rms;
  std::sort(sorted.begin(), sorted.end());
  const size_t qi = static_cast<size_t>(
      std::floor(energy_quantile * static_cast<double>(sorted.size() - 1)));
  const double threshold = std::max(sorted[qi], 1e-5);

  std::vector<VoiceActivitySpan> spans;
  const double total = buf.duration_s();
  for (size_t f = 0; f < n_frames; ++f) {
    const bool speech = rms[f] > threshold;
    const double t0 = static_cast<double>(f * frame) / buf.rate;
    const double t1 = (f + 1 == n_frames) ? total : static_cast<double>((f + 1) * frame) / buf.rate;
    if (!spans.empty() && spans.back().is_speech == speech)
      spans.back().end_s = t1;
    else
      spans.push_back({t0, t1, speech});
  }
  return spans;
}

std::vector<SceneClip> segment_scenes(const std::vector<VoiceActivitySpan>& spans,
                                      const PipelineConfig& config,
                                      const std::string& source_id) {
  std::vector<SceneClip> scenes;
  if (spans.empty()) return scenes;

  // Group speech spans into runs separated by silences >= silence_gap_s.
  std::vector<std::vector<VoiceActivitySpan>> groups;
  std::vector<VoiceActivitySpan> current;
  for (const VoiceActivitySpan& sp : spans) {
    if (sp.is_speech) {
      current.push_back(sp);
    } else if ((sp.end_s - sp.start_s) >= config.silence_gap_s) {
      if (!current.empty()) groups.push_back(std::move(current));
      current.clear();
    } else if (!current.empty()) {
      current.push_back(sp);  // short internal gap stays inside the scene
    }
  }
  if (!current.empty()) groups.push_back(std::move(current));

  int k = 0;
  for (auto& g : groups) {
    while (!g.empty() && !g.back().is_speech) g.pop_back();
    if (g.empty()) continue;
    SceneClip clip;
    clip.source_id = source_id.empty() ? ("scene" + std::to_string(k)) : source_id;
    clip.start_s = g.front().start_s;
    clip.end_s = g.back().end_s;
    double speech_t = 0.0, silent_t = 0.0;
    for (const VoiceActivitySpan& sp : g)
      (sp.is_speech ? speech_t : silent_t) += sp.end_s - sp.start_s;
    if (config.ratio_mode == SilenceRatioMode::silent_over_nonsilent)
      clip.silence_ratio = speech_t > 0.0 ? silent_t / speech_t : 1.0;
    else
      clip.silence_ratio = (speech_t + silent_t) > 0.0 ? silent_t / (speech_t + silent_t) : 1.0;
    scenes.push_back(clip);
    ++k;
  }
  return scenes;
}

FilterDecision filter_scene(const SceneClip& clip, const PipelineConfig& config) {
  if (clip.silence_ratio > config.max_silence_ratio) return {false, "max_silence_ratio"};
  if (clip.duration_s() < config.min_scene_s) return {false, "min_scene_s"};
  if (clip.snr_db && *clip.snr_db <= config.min_snr_db) return {false, "min_snr_db"};
  return {true, ""};
}

double estimate_snr(const audio::Buffer& vocal, const audio::Buffer& residual) {
  if (vocal.samples.size() != residual.samples.size() || vocal.rate != residual.rate)
    throw std::invalid_argument("estimate_snr: length/rate mismatch");
  double pv = 0.0, pr = 0.0;
  for (double s : vocal.samples) pv += s * s;
  for (double s : residual.samples) pr += s * s;
  const double n = static_cast<double>(vocal.samples.size());
  pv /= n;
  pr /= n;
  if (pr == 0.0) return std::numeric_limits<double>::infinity();
  if (pv == 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(pv / pr);
}

std::vector<TwoPartySegment> extract_dialogue_segments(const std::vector<DiarizedTurn>& turns,
                                                       const PipelineConfig& config) {
  std::vector<TwoPartySegment> out;
  const size_t n = turns.size();
  size_t start = 0;

  const auto passes = [&](size_t a, size_t b) {  // inclusive run [a, b]
    if (b - a + 1 < static_cast<size_t>(config.min_utterances)) return false;
    std::map<int, int> counts;
    for (size_t i = a; i <= b; ++i) ++counts[turns[i].speaker_label];
    if (counts.size() != 2) return false;
    for (const auto& [spk, c] : counts)
      if (c < config.min_per_speaker) return false;
    return true;
  };
  const auto emit = [&](size_t a, size_t b) {
    TwoPartySegment seg;
    seg.first_turn = a;
    seg.last_turn = b;
    seg.turns.assign(turns.begin() + static_cast<long>(a), turns.begin() + static_cast<long>(b) + 1);
    out.push_back(std::move(seg));
  };

  std::set<int> window;
  std::map<int, int> window_counts;
  const auto reset_window = [&](size_t a, size_t b) {
    window.clear();
    window_counts.clear();
    for (size_t i = a; i <= b && i < n; ++i) {
      window.insert(turns[i].speaker_label);
      ++window_counts[turns[i].speaker_label];
    }
  };

  size_t i = 0;
  while (i < n) {
    if (i == start) reset_window(start, start);
    const int spk = turns[i].speaker_label;
    if (window.count(spk) == 0 && window.size() == 2) {
      // Third speaker would enter: close the candidate run [start, i-1].
      if (passes(start, i - 1)) {
        emit(start, i - 1);
        start = i;  // kept segments stay disjoint
      } else {
        // Slide: shrink from the left until spk fits.
        while (window.size() == 2 && window.count(spk) == 0) {
          const int old = turns[start].speaker_label;
          if (--window_counts[old] == 0) {
            window_counts.erase(old);
            window.erase(old);
          }
          ++start;
        }
      }
      reset_window(start, i);
    } else {
      window.insert(spk);
      ++window_counts[spk];
    }
    ++i;
  }
  if (start < n && passes(start, n - 1)) emit(start, n - 1);
  return out;
}

// --- pipeline run ------------------------------------------------------------

namespace {

std::vector<DiarizedTurn> merge_same_speaker(const std::vector<DiarizedTurn>& turns) {
  std::vector<DiarizedTurn> merged;
  for (const DiarizedTurn& t : turns) {
    if (!merged.empty() && merged.back().speaker_label == t.speaker_label) {
      merged.back().end_s = t.end_s;
      if (t.transcript) {
        std::string joined = merged.back().transcript.value_or("");
        if (!joined.empty() && !t.transcript->empty()) joined += " ";
        joined += *t.transcript;
        merged.back().transcript = joined;
      }
    } else {
      merged.push_back(t);
    }
  }
  return merged;
}

}  // namespace

std::string RunReport::to_json() const {
  json j;
  j["manifests_emitted"] = manifests_emitted;
  j["rejects"] = rejects;
  j["items"] = json::array();
  for (const ItemOutcome& it : items) {
    json ji;
    ji["source"] = it.source;
    ji["status"] = it.status;
    ji["scenes_found"] = it.scenes_found;
    ji["scenes_kept"] = it.scenes_kept;
    ji["rejects"] = it.rejects;
    ji["segments_found"] = it.segments_found;
    ji["manifests_emitted"] = it.manifests_emitted;
    if (!it.error.empty()) ji["error"] = it.error;
    j["items"].push_back(ji);
  }
  return j.dump(2);
}

RunResult run_pipeline(const std::vector<fs::path>& sources, const PipelineConfig& config,
                       const AdapterRegistry& registry, const fs::path& out_dir) {
  config.validate();
  const auto sep_it = registry.separation.find(config.separation_backend);
  const auto diar_it = registry.diarization.find(config.diarization_backend);
  const auto asr_it = registry.asr.find(config.asr_backend);
  if (sep_it == registry.separation.end())
    throw std::runtime_error("unknown separation backend: " + config.separation_backend);
  if (diar_it == registry.diarization.end())
    throw std::runtime_error("unknown diarization backend: " + config.diarization_backend);
  if (asr_it == registry.asr.end())
    throw std::runtime_error("unknown asr backend: " + config.asr_backend);

  fs::create_directories(out_dir);
  RunResult result;

  for (const fs::path& source : sources) {
    ItemOutcome item;
    item.source = source.string();
    const std::string stem = source.stem().string();
    try {
      const audio::Buffer buf = audio::read_wav(source);
      const auto spans = detect_voice_activity(buf, config.vad_frame_ms, config.vad_energy_quantile);
      auto scenes = segment_scenes(spans, config, stem);
      item.scenes_found = static_cast<int>(scenes.size());

      int scene_idx = 0;
      for (SceneClip& scene : scenes) {
        const std::string clip_id = stem + "_s" + std::to_string(scene_idx);
        ++scene_idx;
        scene.source_id = clip_id;
        // Pre-SNR rules first so hopeless clips skip separation entirely.
        FilterDecision pre = filter_scene(scene, config);
        if (!pre.keep) {
          ++item.rejects[pre.reason];
          continue;
        }

        const audio::Buffer clip_audio = audio::slice(buf, scene.start_s, scene.end_s);
        const fs::path clip_ref = source.parent_path() / clip_id;

        audio::Buffer vocal;
        try {
          SeparationResult sep = sep_it->second->separate(clip_audio, clip_ref);
          scene.snr_db = estimate_snr(sep.vocal, sep.residual);
          vocal = std::move(sep.vocal);
        } catch (const std::exception& e) {
          item.status = "failed:separation";
          item.error = e.what();
          break;
        }

        FilterDecision post = filter_scene(scene, config);
        if (!post.keep) {
          ++item.rejects[post.reason];
          continue;
        }

        std::vector<DiarizedTurn> turns;
        try {
          turns = diar_it->second->diarize(vocal, clip_ref);
        } catch (const std::exception& e) {
          item.status = "failed:diarization";
          item.error = e.what();
          break;
        }

        const auto segments = extract_dialogue_segments(turns, config);
        item.segments_found += static_cast<int>(segments.size());

        int seg_idx = 0;
        for (const TwoPartySegment& seg : segments) {
          std::vector<DiarizedTurn> with_text = seg.turns;
          try {
            const auto texts = asr_it->second->transcribe(vocal, seg.turns, clip_ref);
            for (size_t t = 0; t < with_text.size(); ++t) with_text[t].transcript = texts[t];
          } catch (const std::exception& e) {
            item.status = "failed:asr";
            item.error = e.what();
            break;
          }

          // Consecutive same-speaker turns merge so the manifest alternates.
          const auto merged = merge_same_speaker(with_text);
          corpus::DialogueManifest m;
          m.dialogue_id = clip_id + "_d" + std::to_string(seg_idx);
          m.language = corpus::Language::EN;
          m.source = corpus::Source::collection;
          m.split = corpus::Split::train;
          int turn_idx = 0;
          for (const DiarizedTurn& t : merged) {
            corpus::Utterance u;
            u.speaker_id = "spk" + std::to_string(t.speaker_label);
            u.text = t.transcript.value_or("");
            u.turn_index = turn_idx;
            const audio::Buffer cut = audio::slice(buf, t.start_s, t.end_s);
            u.duration_s = cut.duration_s();
            const std::string wav_name = m.dialogue_id + "_u" + std::to_string(turn_idx) + ".wav";
            audio::write_wav(out_dir / wav_name, cut);
            u.audio_ref = wav_name;
            m.utterances.push_back(std::move(u));
            ++turn_idx;
          }
          corpus::save_manifest(out_dir / (m.dialogue_id + ".json"), m);
          result.manifests.push_back(std::move(m));
          ++item.manifests_emitted;
          ++seg_idx;
        }
        if (item.status != "ok") break;
        ++item.scenes_kept;
      }
    } catch (const std::exception& e) {
      item.status = "failed:read";
      item.error = e.what();
    }
    result.report.items.push_back(std::move(item));
  }

  for (const ItemOutcome& it : result.report.items) {
    result.report.manifests_emitted += it.manifests_emitted;
    for (const auto& [reason, count] : it.rejects) result.report.rejects[reason] += count;
  }
  return result;
}

}  // namespace talkerlab::pipeline
