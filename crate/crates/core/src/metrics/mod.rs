//! Objective evaluation: alignment-based speech distances, speaker
//! similarity and retrieval quality.

mod dtw;
mod retrieval;
mod speech;
mod tts;

pub use dtw::{dtw_align, dtw_by, dtw_channels, AlignmentPath};
pub use retrieval::{map_at, recall_at, retrieval_eval, summarize, RetrievalItem, RetrievalReport};
pub use speech::{
    channel_rmse, mcd, secs, SpeakerEncoder, ENERGY_CHANNEL, F0_CHANNEL, FIRST_CEPSTRAL, MCD_CONSTANT, SPEAKER_DIM,
    SPEAKER_SEED,
};
pub use tts::{tts_eval, tts_scores, MetricSeries, TtsReport, TtsScores};
