use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{simulate_srir, AbsorptionModel, RoomSampler, RoomSpec, SpatialError, Srir, SrirOptions};
use crate::dsp::wav::{read_wav, write_wav_f32};
use crate::numerics::write_atomic;
use crate::parallel::map_range;

/// Sidecar line describing one exported SRIR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrirRecord {
    pub file: String,
    pub room_index: usize,
    pub source_index: usize,
    pub room: RoomSpec,
    pub alpha: f64,
    pub direct_delay: f64,
    pub seed: u64,
}

/// All SRIRs of one sampled room.
#[derive(Clone, Debug)]
pub struct RoomResponses {
    pub room: RoomSpec,
    pub seed: u64,
    pub srirs: Vec<Srir>,
}

/// Seed of room `index` within a bank drawn from `seed`.
pub fn room_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 step keeps neighbouring indices decorrelated
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Samples room `index` of the bank drawn from `seed` and renders its
/// SRIRs.
pub fn sample_room(
    sampler: &RoomSampler,
    index: usize,
    sources_per_room: usize,
    seed: u64,
    opts: &SrirOptions,
) -> Result<RoomResponses, SpatialError> {
    let rseed = room_seed(seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(rseed);
    let room = sampler.sample(&mut rng, sources_per_room)?;
    let srirs = render_room(&room, opts)?;
    Ok(RoomResponses {
        room,
        seed: rseed,
        srirs,
    })
}

/// Samples `n_rooms` rooms with `sources_per_room` sources each and renders
/// every SRIR. Rooms are independent and run in parallel; the output only
/// depends on `seed`.
pub fn generate_room_bank(
    sampler: &RoomSampler,
    n_rooms: usize,
    sources_per_room: usize,
    seed: u64,
    opts: &SrirOptions,
) -> Result<Vec<RoomResponses>, SpatialError> {
    map_range(n_rooms, |i| sample_room(sampler, i, sources_per_room, seed, opts))
        .into_iter()
        .collect()
}

/// Renders every source of `room`, sharing one absorption value.
pub fn render_room(room: &RoomSpec, opts: &SrirOptions) -> Result<Vec<Srir>, SpatialError> {
    let mut opts = opts.clone();
    if opts.alpha.is_none() {
        let length = opts
            .length
            .unwrap_or_else(|| (1.2 * room.t60 * crate::dsp::SAMPLE_RATE as f64).ceil() as usize);
        let model: AbsorptionModel = opts.absorption;
        opts.alpha = Some(model.alpha(room, length, opts.highpass_hz)?);
    }
    (0..room.sources.len()).map(|s| simulate_srir(room, s, &opts)).collect()
}

fn room_records(index: usize, rr: &RoomResponses) -> Vec<SrirRecord> {
    rr.srirs
        .iter()
        .map(|s| SrirRecord {
            file: format!("srir_{index:04}_{}.wav", s.source_index),
            room_index: index,
            source_index: s.source_index,
            room: rr.room.clone(),
            alpha: s.alpha,
            direct_delay: s.direct_delay,
            seed: rr.seed,
        })
        .collect()
}

fn write_room_wavs(dir: &Path, records: &[SrirRecord], rr: &RoomResponses) -> Result<(), SpatialError> {
    for (rec, s) in records.iter().zip(&rr.srirs) {
        write_wav_f32(&dir.join(&rec.file), &s.audio)?;
    }
    Ok(())
}

fn write_sidecar(dir: &Path, records: &[SrirRecord]) -> Result<(), SpatialError> {
    let mut bytes = Vec::new();
    for rec in records {
        serde_json::to_writer(&mut bytes, rec)?;
        bytes.push(b'\n');
    }
    write_atomic(&dir.join("srirs.jsonl"), &bytes)?;
    Ok(())
}

/// Writes `srir_RRRR_S.wav` (4-channel float) per response plus
/// `srirs.jsonl` with one [`SrirRecord`] per line.
pub fn export_room_bank(dir: &Path, bank: &[RoomResponses]) -> Result<Vec<SrirRecord>, SpatialError> {
    fs::create_dir_all(dir)?;
    let mut records = Vec::new();
    for (r, rr) in bank.iter().enumerate() {
        let recs = room_records(r, rr);
        write_room_wavs(dir, &recs, rr)?;
        records.extend(recs);
    }
    write_sidecar(dir, &records)?;
    Ok(records)
}

/// Parameters a bank directory was generated with (`bank.json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankSpec {
    pub generator: String,
    pub seed: u64,
    pub n_rooms: usize,
    pub sources_per_room: usize,
    pub sampler: RoomSampler,
    pub srir: SrirOptions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BankProgress {
    pub generated: usize,
    pub skipped: usize,
}

/// Generates a bank into `dir`, room by room. A room is complete once its
/// `room_RRRR.json` marker exists; complete rooms are skipped, so an
/// interrupted run picks up where it stopped and a rerun on a complete
/// bank changes nothing. `srirs.jsonl` is rebuilt from the markers at the
/// end. Refuses a directory generated with different parameters.
pub fn build_room_bank(dir: &Path, spec: &BankSpec) -> Result<BankProgress, SpatialError> {
    fs::create_dir_all(dir)?;
    let spec_path = dir.join("bank.json");
    if spec_path.exists() {
        let existing: BankSpec = serde_json::from_slice(&fs::read(&spec_path)?)?;
        let comparable = BankSpec {
            generator: existing.generator.clone(),
            n_rooms: existing.n_rooms,
            ..spec.clone()
        };
        if existing != comparable {
            return Err(SpatialError::InvalidRoom(format!(
                "{} was generated with different parameters",
                dir.display()
            )));
        }
    }
    write_atomic(&spec_path, &serde_json::to_vec_pretty(spec)?)?;
    let marker = |i: usize| dir.join(format!("room_{i:04}.json"));
    let todo: Vec<usize> = (0..spec.n_rooms).filter(|&i| !marker(i).exists()).collect();
    let results = map_range(todo.len(), |k| -> Result<(), SpatialError> {
        let i = todo[k];
        let rr = sample_room(&spec.sampler, i, spec.sources_per_room, spec.seed, &spec.srir)?;
        let recs = room_records(i, &rr);
        write_room_wavs(dir, &recs, &rr)?;
        write_atomic(&marker(i), &serde_json::to_vec(&recs)?)?;
        Ok(())
    });
    for r in results {
        r?;
    }
    let mut records = Vec::new();
    for i in 0..spec.n_rooms {
        let recs: Vec<SrirRecord> = serde_json::from_slice(&fs::read(marker(i))?)?;
        records.extend(recs);
    }
    write_sidecar(dir, &records)?;
    Ok(BankProgress {
        generated: todo.len(),
        skipped: spec.n_rooms - todo.len(),
    })
}

/// Reads a bank written by [`export_room_bank`], grouped back into rooms.
pub fn import_room_bank(dir: &Path) -> Result<Vec<RoomResponses>, SpatialError> {
    let reader = BufReader::new(File::open(dir.join("srirs.jsonl"))?);
    let mut bank: Vec<RoomResponses> = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SrirRecord = serde_json::from_str(&line)?;
        let audio = read_wav(&dir.join(&rec.file))?;
        if audio.n_channels() != 4 {
            return Err(SpatialError::InvalidRoom(format!("{} is not 4-channel", rec.file)));
        }
        let srir = Srir {
            audio,
            room: rec.room.clone(),
            source_index: rec.source_index,
            alpha: rec.alpha,
            direct_delay: rec.direct_delay,
        };
        let n = bank.len();
        if rec.room_index + 1 == n {
            bank[n - 1].srirs.push(srir);
        } else if rec.room_index == n {
            bank.push(RoomResponses {
                room: rec.room,
                seed: rec.seed,
                srirs: vec![srir],
            });
        } else {
            return Err(SpatialError::InvalidRoom(format!("room index {} out of order", rec.room_index)));
        }
    }
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn room_seeds_differ() {
        let s: std::collections::BTreeSet<u64> = (0..1000).map(|i| room_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
    }
}
