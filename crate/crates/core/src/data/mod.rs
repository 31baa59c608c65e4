//! Corpora, teacher representations and scoring.

pub mod frames;
pub mod manifest;
pub mod mock;
pub mod synth;
pub mod trep;
pub mod vocab;

pub use frames::{load_frames, read_frames, save_frames, write_frames, FRMS_MAGIC};
pub use manifest::{
    format_manifest, load_corpus, parse_manifest, read_manifest, write_manifest, ManifestEntry, Utterance,
};
pub use mock::{cosine, generate_mock_reps, MockTeacherSpec};
pub use synth::{generate_synth_corpus, write_corpus, SynthCorpus, SynthSpec};
pub use trep::{read_teacher_reps, TeacherRepSet, TrepHeader, UtteranceReps, TREP_MAGIC, TREP_VERSION};
pub use vocab::{edit_distance, wer, Vocab, CONTINUATION};
