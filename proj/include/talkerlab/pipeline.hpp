#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "talkerlab/audio.hpp"
#include "talkerlab/corpus.hpp"

namespace talkerlab::pipeline {

struct VoiceActivitySpan {
  double start_s = 0.0;
  double end_s = 0.0;
  bool is_speech = false;
};

struct SceneClip {
  std::string source_id;
  double start_s = 0.0;
  double end_s = 0.0;
  double silence_ratio = 0.0;
  std::optional<double> snr_db;

  double duration_s() const { return end_s - start_s; }
};

struct DiarizedTurn {
  int speaker_label = 0;
  double start_s = 0.0;
  double end_s = 0.0;
  std::optional<std::string> transcript;
};

enum class SilenceRatioMode { silent_over_nonsilent, silent_over_total };

struct PipelineConfig {
  double silence_gap_s = 4.0;
  double max_silence_ratio = 0.30;
  double min_scene_s = 15.0;
  double min_snr_db = 4.0;
  int min_utterances = 5;   // "more than four", read strictly
  int min_per_speaker = 2;
  SilenceRatioMode ratio_mode = SilenceRatioMode::silent_over_nonsilent;
  double vad_frame_ms = 30.0;
  double vad_energy_quantile = 0.2;
  std::string vad_backend = "energy";
  std::string separation_backend = "identity";
  std::string diarization_backend = "sidecar";
  std::string asr_backend = "sidecar";

  // Throws on invalid thresholds; returns warnings (e.g. the
  // min_utterances >= 2*min_per_speaker - 1 consistency note).
  std::vector<std::string> validate() const;
};

// --- adapters ---------------------------------------------------------------
// Built-ins are deterministic references so the full pipeline runs offline.
// External models plug in behind the same interfaces.

struct SeparationResult {
  audio::Buffer vocal;
  audio::Buffer residual;
};

struct SeparationAdapter {
  virtual ~SeparationAdapter() = default;
  virtual SeparationResult separate(const audio::Buffer& clip, const fs::path& clip_ref) = 0;
};

struct DiarizationAdapter {
  virtual ~DiarizationAdapter() = default;
  // Returned turns are in source-audio coordinates.
  virtual std::vector<DiarizedTurn> diarize(const audio::Buffer& clip, const fs::path& clip_ref) = 0;
};

struct AsrAdapter {
  virtual ~AsrAdapter() = default;
  virtual std::vector<std::string> transcribe(const audio::Buffer& clip,
                                              const std::vector<DiarizedTurn>& turns,
                                              const fs::path& clip_ref) = 0;
};

struct AdapterRegistry {
  std::map<std::string, std::shared_ptr<SeparationAdapter>> separation;
  std::map<std::string, std::shared_ptr<DiarizationAdapter>> diarization;
  std::map<std::string, std::shared_ptr<AsrAdapter>> asr;

  static AdapterRegistry with_builtins();
};

// identity separator: vocal = input, residual = zeros
std::shared_ptr<SeparationAdapter> make_identity_separator();
// sidecar separator: reads <clip>.vocal.wav / <clip>.residual.wav
std::shared_ptr<SeparationAdapter> make_sidecar_separator();
// sidecar diarizer: reads <clip>.diar.tsv (speaker<TAB>start<TAB>end)
std::shared_ptr<DiarizationAdapter> make_sidecar_diarizer();
// sidecar asr: reads <clip>.asr.txt ('|'-separated per-turn transcripts)
std::shared_ptr<AsrAdapter> make_sidecar_asr();

// --- operations -------------------------------------------------------------

// Energy VAD: alternating speech/non-speech spans covering the full duration.
// Threshold is the given quantile of frame RMS (plus a digital-silence floor).
std::vector<VoiceActivitySpan> detect_voice_activity(const audio::Buffer& buf,
                                                     double frame_ms = 30.0,
                                                     double energy_quantile = 0.2);

std::vector<SceneClip> segment_scenes(const std::vector<VoiceActivitySpan>& spans,
                                      const PipelineConfig& config,
                                      const std::string& source_id = "");

struct FilterDecision {
  bool keep = true;
  std::string reason;  // names the first failing rule when keep is false
};

FilterDecision filter_scene(const SceneClip& clip, const PipelineConfig& config);

double estimate_snr(const audio::Buffer& vocal, const audio::Buffer& residual);

struct TwoPartySegment {
  size_t first_turn = 0;  // inclusive index into the input turn list
  size_t last_turn = 0;   // inclusive
  std::vector<DiarizedTurn> turns;
};

std::vector<TwoPartySegment> extract_dialogue_segments(const std::vector<DiarizedTurn>& turns,
                                                       const PipelineConfig& config);

// --- pipeline run -----------------------------------------------------------

struct ItemOutcome {
  std::string source;
  std::string status = "ok";  // ok | failed:<stage>
  int scenes_found = 0;
  int scenes_kept = 0;
  std::map<std::string, int> rejects;  // reason -> count
  int segments_found = 0;
  int manifests_emitted = 0;
  std::string error;
};

struct RunReport {
  std::vector<ItemOutcome> items;  // merged in source order
  int manifests_emitted = 0;
  std::map<std::string, int> rejects;

  std::string to_json() const;
};

struct RunResult {
  std::vector<corpus::DialogueManifest> manifests;
  RunReport report;
};

// VAD -> scenes -> filter -> separate/enhance -> SNR gate -> diarize ->
// segment extraction -> transcribe -> manifest emission. Per-item failures are
// isolated; out_dir receives per-utterance WAV slices and manifest JSON files.
RunResult run_pipeline(const std::vector<fs::path>& sources, const PipelineConfig& config,
                       const AdapterRegistry& registry, const fs::path& out_dir);

}  // namespace talkerlab::pipeline
