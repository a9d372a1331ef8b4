use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{merge_intervals, DatagenError, Interval};
use crate::dsp::{wav::read_wav, SAMPLE_RATE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One dry utterance with its voice-activity intervals (sample offsets
/// relative to the utterance start).
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub samples: Arc<Vec<f32>>,
    pub activity: Vec<Interval>,
}

impl Utterance {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Speaker {
    pub id: String,
    pub split: Split,
    pub utterances: Vec<Utterance>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusIndex {
    pub speakers: Vec<Speaker>,
}

impl CorpusIndex {
    pub fn split(&self, split: Split) -> Vec<&Speaker> {
        self.speakers.iter().filter(|s| s.split == split).collect()
    }

    /// Fails if any speaker id is tagged with more than one split.
    pub fn check_disjoint(&self) -> Result<(), DatagenError> {
        let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
        for s in &self.speakers {
            if let Some(&other) = seen.get(s.id.as_str()) {
                if other != s.split {
                    return Err(DatagenError::SplitLeakage(format!(
                        "speaker {} in both {} and {}",
                        s.id,
                        other.name(),
                        s.split.name()
                    )));
                }
            }
            seen.insert(&s.id, s.split);
        }
        Ok(())
    }

    /// Reads `root/{train,val,test}/<speaker>/<utt>.wav`. A sibling
    /// `<utt>.wrd` with `start end word` lines (sample indices) marks speech;
    /// without one the whole utterance counts as active.
    pub fn from_dir(root: &Path) -> Result<Self, DatagenError> {
        let mut speakers = Vec::new();
        for split in Split::ALL {
            let dir = root.join(split.name());
            if !dir.is_dir() {
                continue;
            }
            for spk_dir in sorted_entries(&dir)? {
                if !spk_dir.is_dir() {
                    continue;
                }
                let id = spk_dir.file_name().unwrap().to_string_lossy().into_owned();
                let mut utterances = Vec::new();
                for f in sorted_entries(&spk_dir)? {
                    if f.extension().and_then(|e| e.to_str()) != Some("wav") {
                        continue;
                    }
                    let w = read_wav(&f)?;
                    if w.sample_rate != SAMPLE_RATE || w.n_channels() != 1 {
                        return Err(DatagenError::Corpus(format!(
                            "{}: need 16 kHz mono, got {} Hz x{}",
                            f.display(),
                            w.sample_rate,
                            w.n_channels()
                        )));
                    }
                    let samples = w.channels.into_iter().next().unwrap();
                    let wrd = f.with_extension("wrd");
                    let activity = if wrd.exists() {
                        parse_word_timestamps(&fs::read_to_string(&wrd)?, samples.len())?
                    } else {
                        vec![(0, samples.len())]
                    };
                    utterances.push(Utterance {
                        id: f.file_stem().unwrap().to_string_lossy().into_owned(),
                        samples: Arc::new(samples),
                        activity,
                    });
                }
                if !utterances.is_empty() {
                    speakers.push(Speaker { id, split, utterances });
                }
            }
        }
        let corpus = CorpusIndex { speakers };
        corpus.check_disjoint()?;
        Ok(corpus)
    }
}

pub(crate) fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>, DatagenError> {
    let mut v: Vec<_> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    v.sort();
    Ok(v)
}

/// Parses `start end word` lines into merged speech intervals.
pub fn parse_word_timestamps(text: &str, len: usize) -> Result<Vec<Interval>, DatagenError> {
    let mut iv = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let parse = |p: Option<&str>| p.and_then(|v| v.parse::<usize>().ok());
        let (Some(s), Some(e)) = (parse(parts.next()), parse(parts.next())) else {
            return Err(DatagenError::Corpus(format!("bad word timestamp on line {}", n + 1)));
        };
        let e = e.min(len);
        if s < e {
            iv.push((s, e));
        }
    }
    Ok(merge_intervals(iv))
}

/// Synthetic stand-in for a speech corpus: each speaker is a harmonic
/// complex with its own fundamental (90–250 Hz) and spectral tilt, spoken
/// as words modulated at a ~4 Hz syllabic rate separated by short pauses.
/// Word spans are the exact activity annotation.
pub fn toy_corpus_generate<R: Rng + ?Sized>(n_speakers: usize, utterances_each: usize, rng: &mut R) -> CorpusIndex {
    let mut f0s: Vec<f64> = (0..n_speakers)
        .map(|i| 90.0 + 160.0 * (i as f64 + rng.gen_range(0.1..0.9)) / n_speakers.max(1) as f64)
        .collect();
    f0s.shuffle(rng);
    let (n_val, n_test) = if n_speakers >= 3 {
        ((n_speakers / 10).max(1), (n_speakers / 10).max(1))
    } else {
        (0, 0)
    };
    let n_train = n_speakers - n_val - n_test;
    let speakers = f0s
        .iter()
        .enumerate()
        .map(|(i, &f0)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            let voice = Voice {
                f0,
                tilt: rng.gen_range(0.8..1.6),
                formant: rng.gen_range(400.0..1800.0),
            };
            let utterances = (0..utterances_each)
                .map(|u| voice.utterance(format!("toy{i:03}_u{u:02}"), rng))
                .collect();
            Speaker {
                id: format!("toy{i:03}"),
                split,
                utterances,
            }
        })
        .collect();
    CorpusIndex { speakers }
}

struct Voice {
    f0: f64,
    tilt: f64,
    formant: f64,
}

const UTTERANCE_RMS: f64 = 0.05;

impl Voice {
    fn utterance<R: Rng + ?Sized>(&self, id: String, rng: &mut R) -> Utterance {
        let fs = SAMPLE_RATE as f64;
        let total = (rng.gen_range(1.0..=4.0) * fs).round() as usize;
        let mut samples = vec![0.0f32; total];
        let mut activity = Vec::new();
        let mut cursor = 0usize;
        while cursor < total {
            let word = (rng.gen_range(0.2..0.6) * fs) as usize;
            let end = (cursor + word).min(total);
            // avoid a sliver word at the very end
            let end = if total - end < (0.1 * fs) as usize { total } else { end };
            self.render_word(&mut samples[cursor..end], rng);
            activity.push((cursor, end));
            let pause_max = (0.5 * (end - cursor) as f64 / fs).min(0.15);
            cursor = end + (rng.gen_range(0.05..=pause_max.max(0.05)) * fs) as usize;
        }
        let active: usize = activity.iter().map(|(s, e)| e - s).sum();
        let energy: f64 = samples.iter().map(|&v| (v as f64).powi(2)).sum();
        let gain = UTTERANCE_RMS / (energy / active as f64).sqrt();
        samples.iter_mut().for_each(|v| *v = (*v as f64 * gain) as f32);
        Utterance {
            id,
            samples: Arc::new(samples),
            activity,
        }
    }

    fn render_word<R: Rng + ?Sized>(&self, out: &mut [f32], rng: &mut R) {
        let fs = SAMPLE_RATE as f64;
        let n = out.len();
        let f_start = self.f0 * (1.0 + rng.gen_range(-0.08..0.08));
        let f_end = f_start * (1.0 + rng.gen_range(-0.1..0.1));
        let syllable_hz = rng.gen_range(3.5..4.5);
        let syl_phase = rng.gen_range(0.0..PI);
        let n_harm = (3800.0 / f_start.max(f_end)).floor() as usize;
        let amps: Vec<f64> = (1..=n_harm)
            .map(|k| {
                let f = k as f64 * f_start;
                (k as f64).powf(-self.tilt) * (1.0 + 2.0 * (-((f - self.formant) / 300.0).powi(2)).exp())
            })
            .collect();
        let ramp = (0.01 * fs) as usize;
        let mut phase = rng.gen_range(0.0..2.0 * PI);
        for (i, o) in out.iter_mut().enumerate() {
            let frac = i as f64 / n as f64;
            let f0 = f_start + (f_end - f_start) * frac;
            phase += 2.0 * PI * f0 / fs;
            let (s1, c1) = phase.sin_cos();
            // sin(kφ) by rotating the unit phasor
            let (mut sk, mut ck) = (s1, c1);
            let mut acc = 0.0;
            for &a in &amps {
                acc += a * sk;
                let ns = sk * c1 + ck * s1;
                ck = ck * c1 - sk * s1;
                sk = ns;
            }
            let t = i as f64 / fs;
            let syl = 0.35 + 0.65 * (PI * syllable_hz * t + syl_phase).sin().powi(2);
            let edge = (i.min(n - 1 - i) as f64 / ramp as f64).min(1.0);
            let edge = 0.5 - 0.5 * (PI * edge).cos();
            *o = (acc * syl * edge.max(1e-3)) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn toy_utterances_follow_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let corpus = toy_corpus_generate(6, 5, &mut rng);
        assert_eq!(corpus.speakers.len(), 6);
        corpus.check_disjoint().unwrap();
        for s in &corpus.speakers {
            for u in &s.utterances {
                let dur = u.len() as f64 / 16000.0;
                assert!((1.0..=4.0).contains(&dur), "{dur}");
                let active: usize = u.activity.iter().map(|(a, b)| b - a).sum();
                assert!(active as f64 >= 0.6 * u.len() as f64);
                assert_eq!(u.activity.first().unwrap().0, 0);
                assert_eq!(u.activity.last().unwrap().1, u.len());
                for w in u.activity.windows(2) {
                    assert!(w[0].1 < w[1].0);
                }
                // silence outside words
                let mut inside = vec![false; u.len()];
                for &(a, b) in &u.activity {
                    inside[a..b].iter_mut().for_each(|v| *v = true);
                }
                assert!(u.samples.iter().zip(&inside).all(|(v, &i)| i || *v == 0.0));
            }
        }
        assert!(!corpus.split(Split::Val).is_empty() && !corpus.split(Split::Test).is_empty());
    }

    #[test]
    fn speakers_have_distinct_fundamentals() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let corpus = toy_corpus_generate(2, 1, &mut rng);
        // dominant low-frequency period via autocorrelation
        let pitch = |u: &Utterance| {
            let x = &u.samples[..4000];
            (64..180)
                .max_by(|&a, &b| {
                    let ca: f64 = (0..3000).map(|i| x[i] as f64 * x[i + a] as f64).sum();
                    let cb: f64 = (0..3000).map(|i| x[i] as f64 * x[i + b] as f64).sum();
                    ca.total_cmp(&cb)
                })
                .unwrap()
        };
        let p0 = pitch(&corpus.speakers[0].utterances[0]);
        let p1 = pitch(&corpus.speakers[1].utterances[0]);
        assert_ne!(p0, p1);
    }

    #[test]
    fn word_timestamps_merge() {
        let iv = parse_word_timestamps("0 100 a\n90 200 b\n\n300 350 c\n", 320).unwrap();
        assert_eq!(iv, vec![(0, 200), (300, 320)]);
        assert!(parse_word_timestamps("x y z", 10).is_err());
    }

    #[test]
    fn leakage_detected() {
        let u = Utterance {
            id: "u".into(),
            samples: Arc::new(vec![0.1; 10]),
            activity: vec![(0, 10)],
        };
        let corpus = CorpusIndex {
            speakers: vec![
                Speaker {
                    id: "a".into(),
                    split: Split::Train,
                    utterances: vec![u.clone()],
                },
                Speaker {
                    id: "a".into(),
                    split: Split::Test,
                    utterances: vec![u],
                },
            ],
        };
        assert!(matches!(corpus.check_disjoint(), Err(DatagenError::SplitLeakage(_))));
    }
}
