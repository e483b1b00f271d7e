mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use common::fixture;
use fskws::dataset::{
    filter_short, load_episode, sample_episode, scan_speech_commands, synthesize_manifest, DatasetError, EpisodeLoader,
    EpisodePool, EpisodeSource, EpisodeSpec, ManifestSource, Phase, Role, SILENCE_CATEGORY, UNKNOWN_CATEGORY,
};
use fskws::numeric::audio::AudioClip;
use fskws::numeric::features::FeatureConfig;
use fskws::numeric::rng::{sub_stream_rng, Stream};
use fskws::synthetic::MockCorpus;
use fskws::wav;

#[test]
fn manifest_counts_and_phases() {
    let fx = fixture(0);
    let m = &fx.manifest;
    m.validate().unwrap();

    let core = m.keywords(Role::Core);
    let unknown = m.keywords(Role::Unknown);
    assert_eq!(core.len(), 12);
    assert_eq!(unknown.len(), 3);

    let mut core_phase: BTreeMap<Phase, usize> = BTreeMap::new();
    let mut per_keyword: BTreeMap<&str, usize> = BTreeMap::new();
    let mut silence: BTreeMap<Phase, usize> = BTreeMap::new();
    let mut unknown_phase: BTreeMap<(&str, Phase), usize> = BTreeMap::new();
    let mut core_seen: BTreeMap<&str, BTreeSet<Phase>> = BTreeMap::new();
    for e in &m.entries {
        match e.role {
            Role::Core => {
                *per_keyword.entry(&e.keyword).or_default() += 1;
                core_seen.entry(&e.keyword).or_default().insert(e.phase);
            }
            Role::Unknown => *unknown_phase.entry((&e.keyword, e.phase)).or_default() += 1,
            Role::Silence => *silence.entry(e.phase).or_default() += 1,
        }
    }
    for (kw, phases) in &core_seen {
        assert_eq!(phases.len(), 1, "{kw} spans phases");
        *core_phase.entry(*phases.iter().next().unwrap()).or_default() += 1;
    }
    assert_eq!(core_phase, BTreeMap::from([(Phase::Train, 8), (Phase::Val, 2), (Phase::Test, 2)]));

    // Every core keyword keeps the same number of utterances, one per speaker.
    let quota = *per_keyword.values().next().unwrap();
    assert!(per_keyword.values().all(|&c| c == quota));
    assert!((24..=26).contains(&quota), "quota {quota}");

    for kw in unknown {
        let n: Vec<usize> = Phase::ALL.iter().map(|p| unknown_phase[&(kw, *p)]).collect();
        let total: usize = n.iter().sum();
        assert!((15..=18).contains(&total));
        assert!(n[0] >= n[1] && n[1] >= n[2] && n[2] > 0, "{kw}: {n:?}");
    }
    assert_eq!(silence, BTreeMap::from([(Phase::Train, 18), (Phase::Val, 6), (Phase::Test, 6)]));

    assert!(m.entries.iter().all(|e| !e.path.contains("short")), "sub-second files must be dropped");
    for e in m.entries.iter().filter(|e| e.role == Role::Silence) {
        let clip = wav::load_clip(&m.resolve(e)).unwrap();
        assert!(clip.is_one_second());
        assert!(clip.samples().iter().all(|s| s.abs() <= 0.1 * 0.5 + 1e-4));
    }
}

#[test]
fn synthesis_is_deterministic() {
    let fx = fixture(11);
    let cfg = MockCorpus::default().synth_config();
    let again = fx.dir.path().join("again");
    synthesize_manifest(&fx.corpus(), &again, 11, &cfg).unwrap();
    let a = fs::read(fx.manifest_path()).unwrap();
    let b = fs::read(again.join("manifest.jsonl")).unwrap();
    assert_eq!(a, b);
    assert_eq!(fs::read(fx.out().join("report.json")).unwrap(), fs::read(again.join("report.json")).unwrap());
    let silence = |dir: &std::path::Path| fs::read(dir.join("_silence_").join("silence_0007.wav")).unwrap();
    assert_eq!(silence(&fx.out()), silence(&again));

    let other = fx.dir.path().join("other");
    synthesize_manifest(&fx.corpus(), &other, 12, &cfg).unwrap();
    assert_ne!(a, fs::read(other.join("manifest.jsonl")).unwrap());
}

#[test]
fn synthesis_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mock = MockCorpus { core_keywords: 2, unknown_keywords: 1, ..MockCorpus::default() };
    let root = dir.path().join("corpus");
    mock.write(&root).unwrap();
    let cfg = mock.synth_config();

    fs::create_dir(root.join("emptyword")).unwrap();
    let err = synthesize_manifest(&root, &dir.path().join("a"), 0, &cfg).unwrap_err();
    assert!(matches!(err, DatasetError::EmptyKeywordFolder(_)), "{err:?}");
    fs::remove_dir(root.join("emptyword")).unwrap();

    fs::remove_dir_all(root.join("_background_noise_")).unwrap();
    let err = synthesize_manifest(&root, &dir.path().join("b"), 0, &cfg).unwrap_err();
    assert!(matches!(err, DatasetError::MissingBackgroundFolder(_)), "{err:?}");

    let err = synthesize_manifest(&dir.path().join("nowhere"), &dir.path().join("c"), 0, &cfg).unwrap_err();
    assert!(matches!(err, DatasetError::NotADirectory(_) | DatasetError::Io { .. }), "{err:?}");
}

#[test]
fn length_filter_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::create_dir_all(root.join("_background_noise_")).unwrap();
    fs::create_dir_all(root.join("word")).unwrap();
    wav::write_clip(&root.join("_background_noise_/n.wav"), &AudioClip::new(vec![0.0; 20000])).unwrap();
    wav::write_clip(&root.join("word/aaaa_nohash_0.wav"), &AudioClip::new(vec![0.1; 15999])).unwrap();
    wav::write_clip(&root.join("word/bbbb_nohash_0.wav"), &AudioClip::new(vec![0.1; 16000])).unwrap();
    wav::write_clip(&root.join("word/cccc_nohash_0.wav"), &AudioClip::new(vec![0.1; 16001])).unwrap();
    let inv = filter_short(scan_speech_commands(root).unwrap());
    let kept: Vec<&str> = inv.utterances.iter().map(|u| u.speaker_id.as_str()).collect();
    assert_eq!(kept, ["bbbb", "cccc"]);
    assert_eq!(inv.filtered_short, 1);
}

#[test]
fn episode_structure() {
    let fx = fixture(3);
    let m = &fx.manifest;
    let pool = EpisodePool::new(m);
    for phase in Phase::ALL {
        let spec = EpisodeSpec { include_unknown: true, include_silence: true, ..EpisodeSpec::core(2, 2, 2, phase) };
        let allowed: BTreeSet<&str> = pool.core_keywords(phase).into_iter().collect();
        for i in 0..10 {
            let ep = sample_episode(&pool, &spec, &mut sub_stream_rng(1, Stream::EpisodeSampling, i)).unwrap();
            assert_eq!(ep.way_total(), 4);
            assert_eq!(ep.n_core(), 2);
            ep.validate(2, 2).unwrap();
            let idx: Vec<usize> = ep.support.iter().chain(&ep.query).map(|l| l.item).collect();
            assert_eq!(idx.iter().collect::<BTreeSet<_>>().len(), idx.len(), "support and query overlap");
            for l in ep.support.iter().chain(&ep.query) {
                let e = &m.entries[l.item];
                let cat = &ep.categories[l.label];
                assert_eq!(e.phase, phase);
                assert_eq!(e.role, cat.role);
                match cat.role {
                    Role::Core => {
                        assert_eq!(e.keyword, cat.name);
                        assert!(allowed.contains(e.keyword.as_str()));
                    }
                    Role::Unknown => assert_eq!(cat.name, UNKNOWN_CATEGORY),
                    Role::Silence => assert_eq!(cat.name, SILENCE_CATEGORY),
                }
            }
        }
    }
}

#[test]
fn optional_categories_move_around() {
    let fx = fixture(3);
    let pool = EpisodePool::new(&fx.manifest);
    let spec = EpisodeSpec { include_unknown: true, ..EpisodeSpec::core(2, 1, 1, Phase::Train) };
    let positions: BTreeSet<usize> = (0..40)
        .map(|i| {
            let ep = sample_episode(&pool, &spec, &mut sub_stream_rng(5, Stream::EpisodeSampling, i)).unwrap();
            ep.categories.iter().position(|c| c.role == Role::Unknown).unwrap()
        })
        .collect();
    assert_eq!(positions, BTreeSet::from([0, 1, 2]));

    let a = sample_episode(&pool, &spec, &mut sub_stream_rng(5, Stream::EpisodeSampling, 9)).unwrap();
    let b = sample_episode(&pool, &spec, &mut sub_stream_rng(5, Stream::EpisodeSampling, 9)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn episode_spec_errors() {
    let fx = fixture(3);
    let pool = EpisodePool::new(&fx.manifest);
    let mut rng = sub_stream_rng(0, Stream::EpisodeSampling, 0);
    let err = sample_episode(&pool, &EpisodeSpec::core(3, 1, 1, Phase::Test), &mut rng).unwrap_err();
    assert!(matches!(err, DatasetError::InsufficientClasses { needed: 3, available: 2, .. }), "{err:?}");
    let err = sample_episode(&pool, &EpisodeSpec::core(2, 20, 20, Phase::Test), &mut rng).unwrap_err();
    assert!(matches!(err, DatasetError::InsufficientSamples { .. }), "{err:?}");
}

#[test]
fn zero_volume_mixing_is_identity() {
    let fx = fixture(3);
    let m = &fx.manifest;
    let pool = EpisodePool::new(m);
    let loader = EpisodeLoader::new(m, FeatureConfig::default()).unwrap();
    let plain = EpisodeSpec::core(2, 2, 2, Phase::Val);
    let silent_bg = EpisodeSpec { background: true, background_volume: 0.0, ..plain.clone() };
    let loud_bg = EpisodeSpec { background: true, background_volume: 0.5, ..plain.clone() };
    let ep = sample_episode(&pool, &plain, &mut sub_stream_rng(2, Stream::EpisodeSampling, 0)).unwrap();
    let mix = || sub_stream_rng(2, Stream::BackgroundMix, 0);
    let a = load_episode(&loader, &ep, &plain, &mut mix()).unwrap();
    let b = load_episode(&loader, &ep, &silent_bg, &mut mix()).unwrap();
    let c = load_episode(&loader, &ep, &loud_bg, &mut mix()).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);

    let source = ManifestSource::new(m, FeatureConfig::default()).unwrap();
    let d = source
        .episode(&plain, &mut sub_stream_rng(2, Stream::EpisodeSampling, 0), &mut mix())
        .unwrap();
    assert_eq!(a, d);
    let f = &d.support[0].item;
    assert_eq!((f.n_frames(), f.n_coeffs()), (49, 40));
    assert!(f.is_finite());
}
