use std::collections::BTreeMap;

use foacount::datagen::*;
use foacount::spatial::{generate_room_bank, RoomResponses, RoomSampler, SrirOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(n_rooms: usize) -> (CorpusIndex, NoiseBank, Vec<RoomResponses>) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let corpus = toy_corpus_generate(8, 4, &mut rng);
    let noise = NoiseBank::toy(4, &mut rng);
    let sampler = RoomSampler {
        t60: (0.2, 0.4),
        ..Default::default()
    };
    let rooms = generate_room_bank(&sampler, n_rooms, 5, 3, &SrirOptions::default()).unwrap();
    (corpus, noise, rooms)
}

fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

fn mean_sq(x: &[f32]) -> f64 {
    x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64
}

/// Per-sample active-source count straight from the ledger intervals.
fn brute_force_labels(ledger: &MixtureLedger, n_frames: usize) -> Vec<u8> {
    (0..n_frames)
        .map(|t| {
            (t * 512..t * 512 + 1024)
                .map(|n| {
                    ledger
                        .sources
                        .iter()
                        .filter(|s| s.intervals.iter().any(|&(a, b)| a <= n && n < b))
                        .count() as u8
                })
                .max()
                .unwrap()
        })
        .collect()
}

#[test]
fn sir_snr_and_labels_recomputed_over_random_mixtures() {
    let (corpus, noise, rooms) = fixture(10);
    let speakers: Vec<&Speaker> = corpus.speakers.iter().collect();
    let noise_items: Vec<&NoiseItem> = noise.items.iter().collect();
    let cfg = MixtureConfig::default();
    let mut worst: f64 = 0.0;
    for j in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(j);
        let n_sp = rng.gen_range(1..=5);
        let m = assemble_mixture(&rooms[j as usize % 10], 0, n_sp, &speakers, &noise_items, &cfg, 1000 + j).unwrap();
        let l = &m.ledger;
        let p1 = active_power(&m.stems[0].channels[0], &l.sources[0].intervals);
        for s in 1..n_sp {
            let ps = active_power(&m.stems[s].channels[0], &l.sources[s].intervals);
            let sir = l.sources[s].sir_db.unwrap();
            assert!((0.0..=10.0).contains(&sir));
            worst = worst.max((db(p1 / ps) - sir).abs());
        }
        let snr = l.snr_db.unwrap();
        assert!((10.0..=20.0).contains(&snr));
        let pn = mean_sq(&m.noise.as_ref().unwrap().channels[0]);
        worst = worst.max((db(p1 / pn) - snr).abs());

        let labels = frame_labels(l, 467);
        assert_eq!(labels, brute_force_labels(l, 467), "mixture {j}");
        assert!(labels.iter().all(|&c| c as usize <= n_sp));
        // label-0 frames carry no speech according to the ledger
        for (t, &c) in labels.iter().enumerate() {
            if c == 0 {
                for s in &l.sources {
                    assert!(s.intervals.iter().all(|&(a, b)| b <= t * 512 || a >= t * 512 + 1024));
                }
            }
        }
        for s in &l.sources {
            assert!(s.intervals.windows(2).all(|w| w[0].1 < w[1].0));
            assert!(s.intervals.iter().all(|&(a, b)| a < b && b <= 240_000));
        }
    }
    assert!(worst < 0.1, "worst deviation {worst} dB");
}

#[test]
fn forced_sir_is_met() {
    let (corpus, noise, rooms) = fixture(1);
    let speakers: Vec<&Speaker> = corpus.speakers.iter().collect();
    let noise_items: Vec<&NoiseItem> = noise.items.iter().collect();
    let cfg = MixtureConfig {
        sir_db: (6.0, 6.0),
        ..Default::default()
    };
    let m = assemble_mixture(&rooms[0], 0, 2, &speakers, &noise_items, &cfg, 5).unwrap();
    let p1 = active_power(&m.stems[0].channels[0], &m.ledger.sources[0].intervals);
    let p2 = active_power(&m.stems[1].channels[0], &m.ledger.sources[1].intervals);
    assert!((db(p1 / p2) - 6.0).abs() < 0.1);
}

#[test]
fn single_source_without_noise_is_the_convolved_track() {
    let (corpus, _, rooms) = fixture(1);
    let speakers: Vec<&Speaker> = corpus.speakers.iter().take(1).collect();
    let cfg = MixtureConfig {
        add_noise: false,
        normalize_rms: None,
        ..Default::default()
    };
    let m = assemble_mixture(&rooms[0], 0, 1, &speakers, &[], &cfg, 17).unwrap();
    // replay the mixture's draws: speaker choice, slot choice, then the track
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    use rand::seq::{IteratorRandom, SliceRandom};
    let _ = speakers.choose_multiple(&mut rng, 1).count();
    let slot = (0..5).choose_multiple(&mut rng, 1)[0];
    assert_eq!(slot, m.ledger.sources[0].srir_index);
    let track = build_single_speaker_track(speakers[0], &cfg.track, &mut rng).unwrap();
    let expect = convolve_foa(&track.samples, &rooms[0].srirs[slot].audio, 240_000);
    assert_eq!(m.audio, expect);
}

#[test]
fn mixture_is_the_sum_of_its_parts() {
    let (corpus, noise, rooms) = fixture(1);
    let speakers: Vec<&Speaker> = corpus.speakers.iter().collect();
    let noise_items: Vec<&NoiseItem> = noise.items.iter().collect();
    let m = assemble_mixture(&rooms[0], 0, 4, &speakers, &noise_items, &MixtureConfig::default(), 9).unwrap();
    let w = &m.audio.channels[0];
    let mut worst: f64 = 0.0;
    for i in 0..w.len() {
        let sum: f64 = m.stems.iter().map(|s| s.channels[0][i] as f64).sum::<f64>()
            + m.noise.as_ref().unwrap().channels[0][i] as f64;
        worst = worst.max((w[i] as f64 - sum).abs());
    }
    assert!(worst < 1e-6, "{worst}");
    assert_eq!(m.audio.len(), 240_000);
}

#[test]
fn desk_scale_counts() {
    let spec = DatasetSpec {
        scale: 0.01,
        ..Default::default()
    };
    assert_eq!(spec.n_rooms(Split::Train), 100);
    assert_eq!(spec.n_rooms(Split::Val), 1);
    assert_eq!(spec.n_rooms(Split::Test), 1);
    assert!(spec.n_mixtures(Split::Val) >= 10);
    assert!(DatasetSpec {
        scale: 0.0,
        ..Default::default()
    }
    .validate()
    .is_err());
}

fn tiny_spec(seed: u64) -> DatasetSpec {
    DatasetSpec {
        seed,
        scale: 0.001,
        mixtures: SplitCounts {
            train: 3000,
            val: 100,
            test: 100,
        },
        min_mixtures: SplitCounts {
            train: 1,
            val: 2,
            test: 2,
        },
        sampler: RoomSampler {
            t60: (0.2, 0.3),
            ..Default::default()
        },
        corpus: CorpusSource::Toy {
            n_speakers: 30,
            utterances_each: 3,
        },
        noise: NoiseSourceSpec::Toy { n_items: 10 },
        ..Default::default()
    }
}

fn read_tree(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in walk(dir) {
        out.insert(
            e.strip_prefix(dir).unwrap().to_string_lossy().into_owned(),
            std::fs::read(&e).unwrap(),
        );
    }
    out
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut v = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            v.extend(walk(&p));
        } else {
            v.push(p);
        }
    }
    v
}

#[test]
fn export_is_consistent_and_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let spec = tiny_spec(11);
    let manifest = generate_dataset(&spec, a.path(), None).unwrap();
    generate_dataset(&spec, b.path(), None).unwrap();
    manifest.verify(a.path()).unwrap();
    assert_eq!(DatasetManifest::read(a.path()).unwrap(), manifest);
    assert_eq!(manifest.splits[&Split::Train].n_mixtures, 3);
    assert_eq!(manifest.splits[&Split::Val].n_mixtures, 2);
    let ta = read_tree(a.path());
    assert_eq!(ta, read_tree(b.path()));
    assert_eq!(ta.len(), 1 + 3 * 2 + 7);

    let ledgers = read_ledgers(a.path(), Split::Train).unwrap();
    assert_eq!(ledgers.len(), 3);
    let train = load_split(a.path(), Split::Train, FeatureChannels::Foa, 513).unwrap();
    assert_eq!(train[0].features.frames, 467);
    assert_eq!(train[0].features.channels, 4);
    assert_eq!(train[0].labels.len(), 467);
    let w = load_split(a.path(), Split::Val, FeatureChannels::WOnly, 100).unwrap();
    assert_eq!((w[0].features.channels, w[0].features.bins), (1, 100));

    let c = tempfile::tempdir().unwrap();
    generate_dataset(&tiny_spec(12), c.path(), None).unwrap();
    assert_ne!(ta, read_tree(c.path()));
}

#[test]
fn shared_speaker_across_splits_is_rejected() {
    let (mut corpus, noise, rooms) = fixture(1);
    let moved = corpus.speakers[0].clone();
    corpus.speakers.push(Speaker {
        split: Split::Test,
        ..moved
    });
    let banks: BTreeMap<Split, Vec<RoomResponses>> = Split::ALL.iter().map(|&s| (s, rooms.clone())).collect();
    let dir = tempfile::tempdir().unwrap();
    let err = export_dataset(&tiny_spec(1), &corpus, &noise, &banks, dir.path()).unwrap_err();
    assert!(matches!(err, DatagenError::SplitLeakage(_)));
}
