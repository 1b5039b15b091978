//! Core algorithms for building, running and scoring crowdsourced Diagnostic
//! Rhyme Test (DRT) studies.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. File formats,
//! the HTTP service and the command-line driver live in `drt-harness`.
//!
//! Modules follow the lifecycle of a study:
//!
//! * [`corpus`]: word lists, recordings and test-set validation.
//! * [`audio`]: curation DSP, the G.711 mu-law narrowband chain, SNR mixing
//!   and speech-shaped noise.
//! * [`blocks`]: balanced block plans, catch trials, practice items and
//!   per-session shuffling.
//! * [`session`]: screening, the participant protocol state machine and the
//!   submission filter.
//! * [`scoring`]: guessing-adjusted per-file scores, confidence intervals,
//!   Welch/paired t-tests, Pearson correlation and bonus ranking.
//! * [`simulator`]: synthetic listener panels producing replayable logs.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod audio;
pub mod blocks;
pub mod corpus;
pub mod rng;
pub mod scoring;
pub mod session;
pub mod simulator;
pub mod time;

pub use corpus::{
    ContrastPosition, CorpusError, Gender, PairId, Recording, RecordingId, TestSet, Violation,
    WordList, WordPair, WordSide,
};
pub use time::Timestamp;
