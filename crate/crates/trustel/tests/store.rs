use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use trustel::config::Config;
use trustel::data::DataDir;
use trustel::export::{export_corpus, import_bundle, summarize, summarize_corpus, ExportError, ExportFilter};
use trustel::simulate::{simulate_into, SimConfig};
use trustel::store::{ClipRecord, ExclusionReason, Setting, Snapshot, SqliteStore, Store, StoreError, SubjectRecord};
use trustel_core::audio::AudioClip;
use trustel_core::protocol::{ConditionKind, Phase};
use trustel_core::seeded_rng;

fn populated(dir: &Path) -> DataDir {
    let data = DataDir::new(dir);
    let cfg = SimConfig {
        seed: 9,
        two_series_subjects: 3,
        one_series_subjects: 1,
        raters: 3,
        compact_audio: true,
        asr_failure_rate: 0.1,
        ..SimConfig::default()
    };
    simulate_into(&data, Config::default(), &cfg).unwrap();
    data
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn clip(id: &str, subject: &str, duration_s: f64, excluded: bool) -> ClipRecord {
    ClipRecord {
        clip_id: id.into(),
        subject_id: subject.into(),
        session_id: format!("{subject}-s1"),
        condition: ConditionKind::LowScore,
        question_id: "q".into(),
        position: 1,
        turn_index: 1,
        fingerprint: String::new(),
        sample_rate: 8000,
        n_samples: (duration_s * 8000.0) as u64,
        duration_s,
        transcript: None,
        excluded,
        exclusion_reason: excluded.then_some(ExclusionReason::AsrFailure),
        timestamp_ms: 0,
    }
}

fn subject(id: &str, order: u32) -> SubjectRecord {
    SubjectRecord {
        subject_id: id.into(),
        setting: Setting::InLab,
        enrollment_order: order,
        demographics: Default::default(),
        created_ms: 0,
    }
}

#[test]
fn export_import_export_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = populated(&tmp.path().join("data"));
    let store = data.open_store().unwrap();
    let first = tmp.path().join("first");
    let manifest = export_corpus(&store, Some(&data.alignments()), ExportFilter { include_excluded: true }, &first).unwrap();
    assert!(manifest.n_clips > 0 && manifest.n_responses > 0 && manifest.n_excluded_listed > 0);

    let restored_dir = tmp.path().join("restored");
    let restored = SqliteStore::open(&restored_dir).unwrap();
    import_bundle(&first, &restored, Some(&restored_dir.join("alignments"))).unwrap();
    assert_eq!(Snapshot::of(&restored).unwrap(), Snapshot::of(&store).unwrap());

    let second = tmp.path().join("second");
    export_corpus(&restored, Some(&restored_dir.join("alignments")), ExportFilter { include_excluded: true }, &second).unwrap();
    let (a, b) = (files(&first), files(&second));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (path, bytes) in &a {
        assert!(bytes == &b[path], "{} differs", path.display());
    }
}

#[test]
fn default_export_leaves_out_excluded_clips() {
    let tmp = tempfile::tempdir().unwrap();
    let data = populated(&tmp.path().join("data"));
    let store = data.open_store().unwrap();
    let all = store.clips().unwrap();
    let excluded = all.iter().filter(|c| c.excluded).count();
    assert!(excluded > 0);
    let m = export_corpus(&store, None, ExportFilter::default(), &tmp.path().join("out")).unwrap();
    assert_eq!(m.n_clips, all.len() - excluded);
    assert_eq!(m.n_excluded_listed, 0);
}

#[test]
fn export_refuses_a_non_empty_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let store = SqliteStore::open(&tmp.path().join("data")).unwrap();
    let out = tmp.path().join("out");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join("stale"), b"x").unwrap();
    let err = export_corpus(&store, None, ExportFilter::default(), &out).unwrap_err();
    assert!(matches!(err, ExportError::NotEmpty(_)));
}

#[test]
fn records_are_write_once() {
    let tmp = tempfile::tempdir().unwrap();
    let data = populated(&tmp.path().join("data"));
    let store = data.open_store().unwrap();

    let s = store.subjects().unwrap().remove(0);
    assert!(matches!(store.insert_subject(&s), Err(StoreError::Duplicate { what: "subject", .. })));

    let snap = Snapshot::of(&store).unwrap();
    let survey = snap.surveys[0].clone();
    assert!(matches!(store.append_survey(&survey), Err(StoreError::Duplicate { what: "survey", .. })));

    let pair = snap.pairs[0].clone();
    assert!(!store.insert_pair(&pair).unwrap());

    let response = snap.responses[0].clone();
    assert!(matches!(store.append_response(&response), Err(StoreError::Duplicate { .. })));
    let mut orphan = response.clone();
    orphan.pair_id = "no-such-pair".into();
    assert!(matches!(store.append_response(&orphan), Err(StoreError::Invalid(_))));
    assert_eq!(Snapshot::of(&store).unwrap(), snap);
}

#[test]
fn finished_sessions_accept_no_more_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let data = populated(&tmp.path().join("data"));
    let store = data.open_store().unwrap();
    let snap = Snapshot::of(&store).unwrap();
    let done = snap.sessions.iter().find(|s| s.record.state.phase == Phase::Done).unwrap();
    let id = &done.record.session_id;

    let mut interaction = snap.interactions.iter().find(|i| &i.session_id == id).unwrap().clone();
    interaction.record.question_id = "fresh".into();
    assert!(matches!(store.append_interaction(&interaction), Err(StoreError::SessionClosed(_))));

    let mut c = snap.clips.iter().find(|c| &c.session_id == id).unwrap().clone();
    c.clip_id = "fresh".into();
    c.turn_index = 99;
    assert!(matches!(store.append_clip(&c, &AudioClip::silence(0.1, 8000)), Err(StoreError::SessionClosed(_))));
    assert!(!store.audio_path("fresh").exists());
}

#[test]
fn restore_requires_an_empty_store() {
    let tmp = tempfile::tempdir().unwrap();
    let store = SqliteStore::open(tmp.path()).unwrap();
    store.insert_subject(&subject("s1", 1)).unwrap();
    let err = store.restore(&Snapshot::default(), &mut |_| unreachable!()).unwrap_err();
    assert!(matches!(err, StoreError::Invalid(_)));
}

#[test]
fn clip_exclusion_flag_and_reason_must_agree() {
    let mut c = clip("c1", "s1", 1.0, false);
    c.exclusion_reason = Some(ExclusionReason::Other);
    assert!(c.check().is_err());
    assert!(clip("c2", "s1", 1.0, true).check().is_ok());
}

#[test]
fn summary_of_three_durations() {
    let subjects = [subject("s1", 1)];
    let clips = [clip("a", "s1", 3.0, false), clip("b", "s1", 5.0, false), clip("c", "s1", 7.0, false), clip("d", "s1", 100.0, true)];
    let sum = summarize(&subjects, &[], &clips);
    assert_eq!(sum.n_audios, 3);
    assert_eq!(sum.n_excluded, 1);
    assert_eq!(sum.excluded_by_reason.get("asr_failure"), Some(&1));
    assert!((sum.mean_duration_s.unwrap() - 5.0).abs() < 1e-12);
    assert!((sum.sd_duration_s.unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn summary_ignores_row_order() {
    let tmp = tempfile::tempdir().unwrap();
    let data = populated(&tmp.path().join("data"));
    let store = data.open_store().unwrap();
    let snap = Snapshot::of(&store).unwrap();
    let expected = summarize_corpus(&store).unwrap();
    assert_eq!(expected.series_per_condition.values().sum::<usize>(), 7);
    assert_eq!(expected.audios_per_subject["two_series"].n_subjects, 3);
    assert_eq!(expected.audios_per_subject["one_series"].n_subjects, 1);

    let mut rng = seeded_rng(4);
    for _ in 0..20 {
        let (mut subjects, mut sessions, mut clips) = (snap.subjects.clone(), snap.sessions.clone(), snap.clips.clone());
        subjects.shuffle(&mut rng);
        sessions.shuffle(&mut rng);
        clips.shuffle(&mut rng);
        let got = summarize(&subjects, &sessions, &clips);
        assert_eq!(got.n_audios, expected.n_audios);
        assert_eq!(got.excluded_by_reason, expected.excluded_by_reason);
        assert_eq!(got.audios_per_subject, expected.audios_per_subject);
        assert_eq!(got.series_per_condition, expected.series_per_condition);
        assert_eq!(got.demographics, expected.demographics);
        assert!((got.mean_duration_s.unwrap() - expected.mean_duration_s.unwrap()).abs() < 1e-12);
        assert!((got.sd_duration_s.unwrap() - expected.sd_duration_s.unwrap()).abs() < 1e-12);
    }
}

#[test]
fn store_survives_reopen() {
    let tmp = tempfile::tempdir().unwrap();
    let before = {
        let store = SqliteStore::open(tmp.path()).unwrap();
        store.insert_subject(&subject("s1", 1)).unwrap();
        store.insert_subject(&subject("s2", 2)).unwrap();
        Snapshot::of(&store).unwrap()
    };
    let store = SqliteStore::open(tmp.path()).unwrap();
    assert_eq!(Snapshot::of(&store).unwrap(), before);
    assert_eq!(store.next_enrollment().unwrap(), 3);
}
