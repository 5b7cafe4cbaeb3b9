//! Audio teacher: synthesis, log-mel features, patching and the patch transformer.

pub mod ast;
pub mod features;
pub mod patches;
pub mod report;
pub mod tts;
pub mod wav;

pub use ast::{build_audio_table, train_audio_teacher, AstModel, AudioTable, AudioTeacher, AudioTeacherConfig};
pub use features::{log_mel_spectrogram, normalize_spectrogram, MelExtractor, NormStats, Spectrogram};
pub use patches::{extract_patches, PatchGrid, PatchSequence};
pub use report::{duration_report, DurationReport};
pub use tts::{chunk_text, resolve_tts, synthesize, synthesize_text, ToyTts, TtsBackend, Waveform};
