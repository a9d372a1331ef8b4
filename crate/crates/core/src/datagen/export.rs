use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    assemble_mixture, draw_nsp, frame_labels, toy_corpus_generate, CorpusIndex, DatagenError, MixtureConfig,
    MixtureLedger, NoiseBank, Split,
};
use crate::dsp::frame_count;
use crate::dsp::wav::write_wav_f32;
use crate::parallel::map_range;
use crate::spatial::{generate_room_bank, import_room_bank, room_seed, RoomResponses, RoomSampler, SrirOptions};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CorpusSource {
    Toy { n_speakers: usize, utterances_each: usize },
    Dir { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseSourceSpec {
    Toy { n_items: usize },
    Dir { path: PathBuf },
}

/// Everything that determines a dataset; stored verbatim in its manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub seed: u64,
    /// Multiplies room and mixture counts.
    pub scale: f64,
    pub rooms: SplitCounts,
    pub mixtures: SplitCounts,
    /// Lower bound on mixtures per split after scaling.
    pub min_mixtures: SplitCounts,
    pub sources_per_room: usize,
    pub sampler: RoomSampler,
    pub srir: SrirOptions,
    pub mixture: MixtureConfig,
    pub corpus: CorpusSource,
    pub noise: NoiseSourceSpec,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            seed: 0,
            scale: 1.0,
            rooms: SplitCounts {
                train: 10_000,
                val: 100,
                test: 100,
            },
            // 25 h and 0.42 h of 15 s mixtures
            mixtures: SplitCounts {
                train: 6000,
                val: 100,
                test: 100,
            },
            min_mixtures: SplitCounts {
                train: 1,
                val: 10,
                test: 10,
            },
            sources_per_room: 5,
            sampler: RoomSampler::default(),
            srir: SrirOptions::default(),
            mixture: MixtureConfig::default(),
            corpus: CorpusSource::Toy {
                n_speakers: 50,
                utterances_each: 8,
            },
            noise: NoiseSourceSpec::Toy { n_items: 20 },
        }
    }
}

impl DatasetSpec {
    fn scaled(&self, n: usize) -> usize {
        ((n as f64 * self.scale).round() as usize).max(1)
    }

    pub fn n_rooms(&self, split: Split) -> usize {
        self.scaled(self.rooms.get(split))
    }

    pub fn n_mixtures(&self, split: Split) -> usize {
        self.scaled(self.mixtures.get(split)).max(self.min_mixtures.get(split))
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(DatagenError::InvalidArgument(format!("scale {} outside (0, 1]", self.scale)));
        }
        if !(1..=5).contains(&self.sources_per_room) {
            return Err(DatagenError::InvalidArgument(format!(
                "sources_per_room {}",
                self.sources_per_room
            )));
        }
        let max_sp = self.mixture.nsp_weights.iter().rposition(|&w| w > 0.0).map_or(0, |i| i + 1);
        if max_sp > self.sources_per_room {
            return Err(DatagenError::InvalidArgument(format!(
                "mixtures of up to {max_sp} speakers need sources_per_room >= {max_sp}, got {}",
                self.sources_per_room
            )));
        }
        Ok(())
    }

    /// Seed of the room bank of `split`.
    pub fn rooms_seed(&self, split: Split) -> u64 {
        self.stream_seed(TAG_ROOMS, split, 0)
    }

    /// Independent seed for stream `tag` of `split`.
    pub fn stream_seed(&self, tag: u64, split: Split, index: usize) -> u64 {
        let base = room_seed(self.seed ^ tag.rotate_left(40), split as usize);
        room_seed(base, index)
    }
}

const TAG_ROOMS: u64 = 1;
const TAG_MIXTURES: u64 = 2;
const TAG_CORPUS: u64 = 3;
const TAG_NOISE: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub split: Split,
    /// Relative to the dataset root.
    pub audio: String,
    pub n_frames: usize,
    pub n_sp: usize,
    pub room_index: usize,
    pub speakers: Vec<String>,
    pub noise_id: Option<String>,
    pub class_counts: [u64; 6],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub n_rooms: usize,
    pub n_mixtures: usize,
    pub hours: f64,
    pub class_histogram: [u64; 6],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub generator: String,
    pub spec: DatasetSpec,
    pub splits: BTreeMap<Split, SplitSummary>,
    pub examples: Vec<ExampleRecord>,
}

#[derive(Serialize, Deserialize)]
struct LabelLine {
    id: String,
    labels: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct LedgerLine {
    id: String,
    ledger: MixtureLedger,
}

impl DatasetManifest {
    pub fn read(dir: &Path) -> Result<Self, DatagenError> {
        Ok(serde_json::from_reader(BufReader::new(File::open(dir.join(MANIFEST_FILE))?))?)
    }

    pub fn split_examples(&self, split: Split) -> impl Iterator<Item = &ExampleRecord> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    /// Checks that every audio file exists and that the stored labels
    /// recount to the manifest histograms.
    pub fn verify(&self, dir: &Path) -> Result<(), DatagenError> {
        for split in Split::ALL {
            let labels = read_labels(dir, split)?;
            let mut hist = [0u64; 6];
            for ex in self.split_examples(split) {
                if !dir.join(&ex.audio).is_file() {
                    return Err(DatagenError::Corpus(format!("missing {}", ex.audio)));
                }
                let l = labels
                    .get(&ex.id)
                    .ok_or_else(|| DatagenError::Corpus(format!("no labels for {}", ex.id)))?;
                if l.len() != ex.n_frames {
                    return Err(DatagenError::Corpus(format!("{}: label length", ex.id)));
                }
                let mut counts = [0u64; 6];
                l.iter().for_each(|&c| counts[c as usize] += 1);
                if counts != ex.class_counts {
                    return Err(DatagenError::Corpus(format!("{}: class counts", ex.id)));
                }
                hist.iter_mut().zip(&counts).for_each(|(h, c)| *h += c);
            }
            let summary = self.splits.get(&split).cloned().unwrap_or_default();
            if summary.class_histogram != hist {
                return Err(DatagenError::Corpus(format!("{} histogram mismatch", split.name())));
            }
        }
        Ok(())
    }
}

/// Per-example frame labels of one split, keyed by example id.
pub fn read_labels(dir: &Path, split: Split) -> Result<BTreeMap<String, Vec<u8>>, DatagenError> {
    let path = dir.join(split.name()).join("labels.jsonl");
    let mut out = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            let l: LabelLine = serde_json::from_str(&line)?;
            out.insert(l.id, l.labels);
        }
    }
    Ok(out)
}

/// Per-example ledgers of one split, in file order.
pub fn read_ledgers(dir: &Path, split: Split) -> Result<Vec<(String, MixtureLedger)>, DatagenError> {
    let path = dir.join(split.name()).join("ledgers.jsonl");
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            let l: LedgerLine = serde_json::from_str(&line)?;
            out.push((l.id, l.ledger));
        }
    }
    Ok(out)
}

/// Builds corpus, noise and rooms from `spec` (rooms may come from a bank
/// directory with `{train,val,test}/srirs.jsonl`) and exports the dataset.
pub fn generate_dataset(
    spec: &DatasetSpec,
    out_dir: &Path,
    room_bank: Option<&Path>,
) -> Result<DatasetManifest, DatagenError> {
    spec.validate()?;
    let corpus = match &spec.corpus {
        CorpusSource::Toy {
            n_speakers,
            utterances_each,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.stream_seed(TAG_CORPUS, Split::Train, 0));
            toy_corpus_generate(*n_speakers, *utterances_each, &mut rng)
        }
        CorpusSource::Dir { path } => CorpusIndex::from_dir(path)?,
    };
    let noise = match &spec.noise {
        NoiseSourceSpec::Toy { n_items } => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.stream_seed(TAG_NOISE, Split::Train, 0));
            NoiseBank::toy(*n_items, &mut rng)
        }
        NoiseSourceSpec::Dir { path } => NoiseBank::from_dir(path)?,
    };
    let mut rooms = BTreeMap::new();
    for split in Split::ALL {
        let n = spec.n_rooms(split);
        let bank = match room_bank {
            Some(dir) => {
                let mut bank = import_room_bank(&dir.join(split.name()))?;
                if bank.len() < n {
                    return Err(DatagenError::InvalidArgument(format!(
                        "{} bank has {} rooms, need {n}",
                        split.name(),
                        bank.len()
                    )));
                }
                bank.truncate(n);
                bank
            }
            None => generate_room_bank(
                &spec.sampler,
                n,
                spec.sources_per_room,
                spec.rooms_seed(split),
                &spec.srir,
            )?,
        };
        rooms.insert(split, bank);
    }
    export_dataset(spec, &corpus, &noise, &rooms, out_dir)
}

/// Writes every split's mixtures (`<split>/mix_NNNNN.wav`), labels and
/// ledgers (`labels.jsonl`, `ledgers.jsonl`) and `manifest.json`.
/// Speaker or noise material shared across splits is a hard error.
pub fn export_dataset(
    spec: &DatasetSpec,
    corpus: &CorpusIndex,
    noise: &NoiseBank,
    rooms: &BTreeMap<Split, Vec<RoomResponses>>,
    out_dir: &Path,
) -> Result<DatasetManifest, DatagenError> {
    spec.validate()?;
    corpus.check_disjoint()?;
    noise.check_disjoint()?;
    let mut examples = Vec::new();
    let mut splits = BTreeMap::new();
    let mut used_speakers: BTreeMap<Split, BTreeSet<String>> = BTreeMap::new();
    let mut used_noise: BTreeMap<Split, BTreeSet<String>> = BTreeMap::new();
    for split in Split::ALL {
        let dir = out_dir.join(split.name());
        fs::create_dir_all(&dir)?;
        let speakers: Vec<_> = corpus.speakers.iter().filter(|s| s.split == split).collect();
        let noise_items = noise.split(split);
        let bank = rooms
            .get(&split)
            .filter(|b| !b.is_empty())
            .ok_or_else(|| DatagenError::InvalidArgument(format!("no rooms for {}", split.name())))?;
        let n_mix = spec.n_mixtures(split);
        let results = map_range(n_mix, |j| -> Result<(ExampleRecord, Vec<u8>, MixtureLedger), DatagenError> {
            let seed = spec.stream_seed(TAG_MIXTURES, split, j);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n_sp = draw_nsp(&spec.mixture.nsp_weights, &mut rng).min(speakers.len());
            let room_index = j % bank.len();
            let mix = assemble_mixture(
                &bank[room_index],
                room_index,
                n_sp,
                &speakers,
                &noise_items,
                &spec.mixture,
                seed,
            )?;
            let id = format!("mix_{j:05}");
            let audio = format!("{}/{id}.wav", split.name());
            write_wav_f32(&out_dir.join(&audio), &mix.audio)?;
            let n_frames = frame_count(mix.audio.len());
            let labels = frame_labels(&mix.ledger, n_frames);
            let mut class_counts = [0u64; 6];
            labels.iter().for_each(|&c| class_counts[c as usize] += 1);
            let record = ExampleRecord {
                id,
                split,
                audio,
                n_frames,
                n_sp,
                room_index,
                speakers: mix.ledger.sources.iter().map(|s| s.speaker.clone()).collect(),
                noise_id: mix.ledger.noise_id.clone(),
                class_counts,
            };
            Ok((record, labels, mix.ledger))
        });
        let mut labels_out = BufWriter::new(File::create(dir.join("labels.jsonl"))?);
        let mut ledgers_out = BufWriter::new(File::create(dir.join("ledgers.jsonl"))?);
        let mut summary = SplitSummary {
            n_rooms: bank.len(),
            ..Default::default()
        };
        for r in results {
            let (record, labels, ledger) = r?;
            serde_json::to_writer(
                &mut labels_out,
                &LabelLine {
                    id: record.id.clone(),
                    labels,
                },
            )?;
            labels_out.write_all(b"\n")?;
            serde_json::to_writer(
                &mut ledgers_out,
                &LedgerLine {
                    id: record.id.clone(),
                    ledger: ledger.clone(),
                },
            )?;
            ledgers_out.write_all(b"\n")?;
            summary.n_mixtures += 1;
            summary.hours += ledger.len as f64 / crate::dsp::SAMPLE_RATE as f64 / 3600.0;
            summary
                .class_histogram
                .iter_mut()
                .zip(&record.class_counts)
                .for_each(|(h, c)| *h += c);
            used_speakers.entry(split).or_default().extend(record.speakers.iter().cloned());
            used_noise.entry(split).or_default().extend(record.noise_id.iter().cloned());
            examples.push(record);
        }
        labels_out.flush()?;
        ledgers_out.flush()?;
        splits.insert(split, summary);
    }
    check_no_leakage(&used_speakers, "speaker")?;
    check_no_leakage(&used_noise, "noise")?;

    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        generator: format!("foacount {}", env!("CARGO_PKG_VERSION")),
        spec: spec.clone(),
        splits,
        examples,
    };
    let tmp = out_dir.join(format!("{MANIFEST_FILE}.tmp"));
    let mut f = BufWriter::new(File::create(&tmp)?);
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    fs::rename(tmp, out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn check_no_leakage(used: &BTreeMap<Split, BTreeSet<String>>, what: &str) -> Result<(), DatagenError> {
    for (i, a) in Split::ALL.iter().enumerate() {
        for b in &Split::ALL[i + 1..] {
            if let (Some(x), Some(y)) = (used.get(a), used.get(b)) {
                if let Some(id) = x.intersection(y).next() {
                    return Err(DatagenError::SplitLeakage(format!(
                        "{what} {id} used in {} and {}",
                        a.name(),
                        b.name()
                    )));
                }
            }
        }
    }
    Ok(())
}
