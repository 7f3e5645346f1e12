//! Deterministic synthetic speech-like corpus and noise banks.
//!
//! Utterances are sequences of harmonic "phones" with formant shaping. Each
//! class owns a disjoint set of phone symbols, so the label is recoverable
//! from the phone sequence alone.

mod corpus;
mod manifest;
mod noise;
mod wav;

pub use corpus::{
    class_of, generate_utterance, generate_utterances, phone_table, utterance_id, CorpusConfig, Phone, Split,
    Utterance,
};
pub use manifest::{Corpus, CorpusManifest, NoiseEntry, UtteranceEntry};
pub use noise::{generate_noise_banks, BankName, NoiseBank, NoiseBanks, NoiseClip, TrainingBanks};
pub use wav::{decode_wav, encode_wav, wav_read, wav_write};
