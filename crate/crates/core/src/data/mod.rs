//! MIDI ingestion, note cleanup, augmentation and the flattened stream
//! format used for training.

pub mod midi;
pub mod ncrd;
mod notes;
pub mod roll;

pub use midi::{parse_midi, write_smf, ChannelMap, ChannelSlot, OutboundMap, TempoMap, DRUM_CHANNEL};
pub use ncrd::{decode_stream, encode_stream, read_corpus, read_stream, write_stream};
pub use notes::{
    anonymize, augment, augment_stream, flatten, flatten_timed, is_legal, pair_events, scale_tempo,
    stream_to_timed, timed_to_stream, transpose, trim_overlaps, unflatten, velocity_curve, AugmentConfig,
    NoteRecord, TimedEvent, MIN_GAP,
};

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::events::EventStream;

/// A parsed, trimmed and flattened file.
pub fn midi_to_stream(bytes: &[u8]) -> Result<EventStream> {
    Ok(flatten(&trim_overlaps(&parse_midi(bytes)?)))
}

#[derive(Clone, Debug, Default)]
pub struct PreprocessReport {
    pub written: usize,
    pub skipped: Vec<(PathBuf, String)>,
    pub events: usize,
}

fn midi_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            midi_files(&path, out)?;
        } else if path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "mid" | "midi"))
        {
            out.push(path);
        }
    }
    Ok(())
}

/// Convert every MIDI file under `input` into an NCRD stream in `output`,
/// plus `augmented_copies` augmented variants per file. Files that fail to
/// parse are skipped and reported.
pub fn preprocess_dir(input: &Path, output: &Path, augmented_copies: usize, seed: u64) -> Result<PreprocessReport> {
    let mut files = Vec::new();
    midi_files(input, &mut files)?;
    files.sort();
    fs::create_dir_all(output)?;
    let cfg = AugmentConfig::default();
    let results: Vec<(PathBuf, Result<usize>)> = files
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let rel = path.strip_prefix(input).unwrap_or(path).with_extension("");
            let stem = rel.to_string_lossy().replace(['/', '\\'], "_");
            let run = || -> Result<usize> {
                let notes = trim_overlaps(&parse_midi(&fs::read(path)?)?);
                let clean = flatten(&notes);
                let mut n = clean.events.len();
                write_stream(&output.join(format!("{stem}.ncrd")), &clean)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                for c in 0..augmented_copies {
                    let s = augment_stream(&clean, &cfg, &mut rng);
                    n += s.events.len();
                    write_stream(&output.join(format!("{stem}.aug{c}.ncrd")), &s)?;
                }
                Ok(n)
            };
            (path.clone(), run())
        })
        .collect();
    let mut report = PreprocessReport::default();
    for (path, r) in results {
        match r {
            Ok(n) => {
                report.written += 1;
                report.events += n;
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                report.skipped.push((path, e.to_string()));
            }
        }
    }
    Ok(report)
}
