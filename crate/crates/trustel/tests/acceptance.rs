//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use support::{brute_force_d, matrix, reference_kappa, simulate, Oracle, SYLLABLE_ORACLE};
use trustel::analyze::{effectiveness, syllable_rates, sylrate};
use trustel::api::hidden_fields_in;
use trustel::bank::Bank;
use trustel::config::Config;
use trustel::data::DataDir;
use trustel::export::{export_corpus, Bundle, ExportFilter};
use trustel::simulate::{simulate_into, SimConfig, SimReport};
use trustel::store::{SqliteStore, Store};
use trustel_core::analysis::{count_syllables_es, fit_mixed_model, ks_statistic, ks_two_sample, KsMethod};
use trustel_core::annotation::{fleiss_kappa, permutation_test_kappa, PermutationScheme};
use trustel_core::audio::{decode_wav, encode_wav, merge_with_tone, AudioClip, ToneSpec};
use trustel_core::protocol::{ConditionKind, Difficulty};
use trustel_core::seeded_rng;
use trustel_core::survey::InstrumentKind;

type Check = Result<String, String>;

/// Responses seen by simulated subjects and raters.
#[derive(Default)]
struct Audit {
    requests: usize,
    leaks: Vec<String>,
}

impl Audit {
    fn add(&mut self, report: &SimReport) {
        self.requests += report.requests;
        self.leaks.extend(report.leaks.iter().cloned());
    }
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn run_sim(dir: &Path, cfg: &SimConfig) -> Result<(SimReport, Duration), String> {
    let started = Instant::now();
    let report = simulate_into(&DataDir::new(dir), Config::default(), cfg).map_err(s)?;
    Ok((report, started.elapsed()))
}

fn export(data: &Path, out: &Path) -> Result<Bundle, String> {
    let dir = DataDir::new(data);
    let store = dir.open_store().map_err(s)?;
    export_corpus(&store, Some(&dir.alignments()), ExportFilter::default(), out).map_err(s)?;
    Bundle::read(out).map_err(s)
}

fn protocol_invariants(audit: &mut Audit) -> Check {
    let tmp = tempfile::tempdir().map_err(s)?;
    let cfg = SimConfig {
        seed: 500,
        two_series_subjects: 250,
        compact_audio: true,
        asr_failure_rate: 0.0,
        ..SimConfig::default()
    };
    let (report, elapsed) = run_sim(tmp.path(), &cfg)?;
    audit.add(&report);
    ensure(report.series.len() == 500, format!("{} series", report.series.len()))?;
    let bank = Bank::shipped();
    let difficulty = |id: &str| bank.question(id).map(|q| q.difficulty);

    // what subjects heard
    let mut per_condition = BTreeMap::new();
    for t in &report.series {
        *per_condition.entry(t.condition).or_insert(0) += 1;
        ensure(t.questions.len() == 18, format!("{}: {} questions", t.session_id, t.questions.len()))?;
        ensure(t.checkpoints == [6, 12, 18], format!("{}: checkpoints {:?}", t.session_id, t.checkpoints))?;
        ensure(t.final_survey, format!("{}: no final survey", t.session_id))?;
        let heard_wrong: Vec<_> = t.questions.iter().filter(|q| q.heard_wrong == Some(true)).collect();
        ensure(t.questions.iter().all(|q| q.heard_wrong.is_some()), format!("{}: undelivered answer", t.session_id))?;
        ensure(
            heard_wrong.iter().all(|q| q.difficulty == Difficulty::Difficult),
            format!("{}: wrong answer on an easy question", t.session_id),
        )?;
        let expected = if t.condition == ConditionKind::LowScore { 6 } else { 0 };
        ensure(heard_wrong.len() == expected, format!("{}: heard {} wrong answers", t.session_id, heard_wrong.len()))?;
    }
    ensure(per_condition.len() == 2, "conditions not mixed")?;

    // what the server recorded
    let store = SqliteStore::open(tmp.path()).map_err(s)?;
    let sessions = store.sessions().map_err(s)?;
    let mut scripted: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for i in store.interactions().map_err(s)? {
        *counts.entry(i.session_id.clone()).or_default() += 1;
        let d = difficulty(&i.record.question_id).ok_or("unknown question")?;
        if d == Difficulty::Easy && i.record.was_scripted_wrong {
            return Err(format!("{}: easy question {} scripted wrong", i.session_id, i.record.question_id));
        }
        if i.record.was_scripted_wrong {
            scripted.entry(i.session_id.clone()).or_default().push(i.record.question_id.clone());
        }
    }
    let mut checkpoints: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for sv in store.surveys().map_err(s)? {
        if sv.kind == InstrumentKind::Evaluation {
            checkpoints.entry(sv.session_id.clone().unwrap_or_default()).or_default().insert(sv.checkpoint.unwrap_or(0));
        }
    }
    for sess in &sessions {
        let id = &sess.session_id;
        ensure(counts.get(id) == Some(&18), format!("{id}: {:?} interactions", counts.get(id)))?;
        let n = scripted.get(id).map_or(0, Vec::len);
        let expected = if sess.condition == ConditionKind::LowScore { 6 } else { 0 };
        ensure(n == expected, format!("{id}: {n} scripted-wrong interactions"))?;
        let cps: Vec<usize> = checkpoints.get(id).map(|c| c.iter().copied().collect()).unwrap_or_default();
        ensure(cps == [6, 12, 18], format!("{id}: stored checkpoints {cps:?}"))?;
    }
    ensure(elapsed < Duration::from_secs(60), format!("runtime {:.1} s", elapsed.as_secs_f64()))?;
    Ok(format!(
        "500 series ({} low, {} high), {} requests, {:.1} s",
        per_condition.get(&ConditionKind::LowScore).unwrap_or(&0),
        per_condition.get(&ConditionKind::HighScore).unwrap_or(&0),
        report.requests,
        elapsed.as_secs_f64()
    ))
}

fn bias_pipeline(audit: &mut Audit) -> Check {
    let started = Instant::now();
    let tmp = tempfile::tempdir().map_err(s)?;
    let data = tmp.path().join("data");
    let cfg = SimConfig { seed: 2, two_series_subjects: 100, compact_audio: true, ..SimConfig::default() };
    let (report, _) = run_sim(&data, &cfg)?;
    audit.add(&report);
    let bundle = export(&data, &tmp.path().join("bundle"))?;
    let eff = effectiveness(&bundle, &tmp.path().join("analysis")).map_err(s)?;
    let elapsed = started.elapsed();

    // independent per-subject differences from the raw survey rows
    let cond: BTreeMap<&str, ConditionKind> =
        bundle.snapshot.sessions.iter().map(|x| (x.record.session_id.as_str(), x.record.condition)).collect();
    let mut sums: BTreeMap<(&str, ConditionKind), (f64, f64)> = BTreeMap::new();
    for sv in bundle.snapshot.surveys.iter().filter(|sv| sv.kind == InstrumentKind::Evaluation) {
        let c = cond[sv.session_id.as_deref().ok_or("survey without session")?];
        let e = sums.entry((sv.subject_id.as_str(), c)).or_default();
        e.0 += sv.response["trust_stars"].as_f64().ok_or("no stars")?;
        e.1 += 1.0;
    }
    let subjects: BTreeSet<&str> = sums.keys().map(|(sub, _)| *sub).collect();
    let positive = subjects
        .iter()
        .filter(|sub| {
            let m = |c| sums.get(&(**sub, c)).map(|(t, n)| t / n);
            matches!((m(ConditionKind::HighScore), m(ConditionKind::LowScore)), (Some(h), Some(l)) if h > l)
        })
        .count();

    let t = &eff.trust;
    ensure(t.fit.beta1 > 0.0, format!("beta1 = {}", t.fit.beta1))?;
    ensure(t.fit.p_value < 0.01, format!("LRT p = {}", t.fit.p_value))?;
    ensure(t.subjects_with_both == 100, format!("{} subjects with both conditions", t.subjects_with_both))?;
    ensure(positive == t.subjects_positive, format!("table says {} positive, raw rows say {positive}", t.subjects_positive))?;
    let share = t.subjects_positive as f64 / t.subjects_with_both as f64;
    ensure(share >= 0.9, format!("{:.0}% positive", share * 100.0))?;
    let c = &eff.confidence;
    ensure(c.fit.beta1 > 0.0, format!("confidence beta1 = {}", c.fit.beta1))?;
    ensure(elapsed < Duration::from_secs(120), format!("runtime {:.1} s", elapsed.as_secs_f64()))?;
    Ok(format!(
        "beta1 = {:.3} (normalized), p = {:.2e}, {}/{} subjects positive, confidence beta1 = {:.3}, {:.1} s",
        t.fit.beta1,
        t.fit.p_value,
        t.subjects_positive,
        t.subjects_with_both,
        c.fit.beta1,
        elapsed.as_secs_f64()
    ))
}

fn mixed_model_oracle() -> Check {
    let mut worst_ll: f64 = 0.0;
    let mut worst_beta: f64 = 0.0;
    for seed in 0..20 {
        let obs = simulate(1000 + seed, 3.0, 0.8, 0.5, 0.5);
        let fit = fit_mixed_model(&obs).map_err(s)?;
        let oracle = Oracle::new(&obs);
        let (grid_ll, grid_lambda) = oracle.grid_max();
        let grid_beta1 = oracle.loglik(grid_lambda).1[1];
        worst_ll = worst_ll.max((fit.loglik - grid_ll).abs());
        worst_beta = worst_beta.max((fit.beta1 - 0.8).abs());
        ensure((fit.loglik - grid_ll).abs() < 1e-4, format!("seed {seed}: loglik {} vs grid {grid_ll}", fit.loglik))?;
        ensure((fit.beta1 - grid_beta1).abs() < 1e-4, format!("seed {seed}: beta1 {} vs grid {grid_beta1}", fit.beta1))?;
        ensure((fit.beta1 - 0.8).abs() <= 0.1, format!("seed {seed}: beta1 {}", fit.beta1))?;
    }
    let mut rejections = 0;
    for seed in 0..500 {
        if fit_mixed_model(&simulate(50_000 + seed, 3.0, 0.0, 0.5, 0.5)).map_err(s)?.p_value < 0.05 {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / 500.0;
    ensure(rate <= 0.08, format!("null rejection rate {rate}"))?;
    Ok(format!("max |loglik - grid| = {worst_ll:.1e}, max |beta1 - 0.8| = {worst_beta:.3}, null rejections {rejections}/500"))
}

fn ks_correctness() -> Check {
    let mut rng = seeded_rng(2024);
    for round in 0..1000 {
        let n = rng.random_range(1..=12);
        let m = rng.random_range(1..=12);
        let support = if round % 2 == 0 { 5 } else { 1000 };
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..support) as f64 / 4.0).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(0..support) as f64 / 4.0).collect();
        let (num, den) = brute_force_d(&a, &b);
        let d = ks_statistic(&a, &b).map_err(s)?;
        ensure(d == num as f64 / den as f64, format!("round {round}: D {d} vs {num}/{den}"))?;
    }
    let mut rng = seeded_rng(7);
    let a: Vec<f64> = Normal::new(0.0, 1.0).unwrap().sample_iter(&mut rng).take(100).collect();
    let b: Vec<f64> = Normal::new(0.5, 1.0).unwrap().sample_iter(&mut rng).take(100).collect();
    let shifted = ks_two_sample(&a, &b).map_err(s)?;
    ensure(shifted.p_value < 0.01, format!("shifted normals p = {}", shifted.p_value))?;
    let same = ks_two_sample(&a, &a).map_err(s)?;
    ensure(same.d_statistic == 0.0 && same.p_value == 1.0, format!("identical samples give {same:?}"))?;
    Ok(format!("1000/1000 exact, shifted p = {:.2e}, identical D = 0, p = 1", shifted.p_value))
}

fn fleiss() -> Check {
    let k = fleiss_kappa(&[vec![2, 0], vec![1, 1]]).map_err(s)?;
    ensure((k + 1.0 / 3.0).abs() < 1e-12, format!("2x2 kappa {k}"))?;
    ensure((reference_kappa(&[vec![0, 0], vec![0, 1]], 2) - k).abs() < 1e-12, "reference disagrees on 2x2")?;
    let row: Vec<u8> = (0..50).map(|i| u8::from(i % 3 == 0)).collect();
    let m = matrix(vec![row; 10]);
    let perfect = fleiss_kappa(&m.counts()).map_err(s)?;
    ensure(perfect == 1.0, format!("perfect agreement kappa {perfect}"))?;
    let p1 = permutation_test_kappa(&m, 999, 3, PermutationScheme::WithinRater).map_err(s)?;
    let p2 = permutation_test_kappa(&m, 999, 3, PermutationScheme::WithinRater).map_err(s)?;
    ensure(p1 == p2, format!("not reproducible: {p1} vs {p2}"))?;
    ensure(p1 <= 0.002, format!("p = {p1}"))?;
    Ok(format!("2x2 kappa = {k:.12}, perfect = 1.0, p = {p1} (reproducible)"))
}

fn syllable_pipeline(audit: &mut Audit, pairs_dir: &mut Option<tempfile::TempDir>) -> Check {
    let mut wrong = Vec::new();
    for (word, hyphenated) in SYLLABLE_ORACLE {
        if count_syllables_es(word) != hyphenated.split('-').count() {
            wrong.push(word);
        }
    }
    ensure(wrong.is_empty(), format!("syllabifier disagrees on {wrong:?}"))?;

    let tmp = tempfile::tempdir().map_err(s)?;
    let data = tmp.path().join("data");
    let cfg = SimConfig {
        seed: 16,
        two_series_subjects: 16,
        shifted_subjects: 8,
        rate_shift_high: 0.5,
        raters: 3,
        ..SimConfig::default()
    };
    let (report, _) = run_sim(&data, &cfg)?;
    audit.add(&report);
    let bundle = export(&data, &tmp.path().join("bundle"))?;
    let rep = sylrate(&bundle, &tmp.path().join("analysis"), KsMethod::Asymptotic).map_err(s)?;
    ensure(rep.subjects.len() == 16, format!("{} subjects tested", rep.subjects.len()))?;

    // the shifted subjects are the first eight enrolled
    let (rows, _) = syllable_rates(&bundle).map_err(s)?;
    let mut shifted_hits = 0;
    let mut unshifted_clear = 0;
    for t in &rep.subjects {
        let pick = |c| rows.iter().filter(|r| r.0 == t.subject_id && r.2 == c).map(|r| r.3).collect::<Vec<_>>();
        let (num, den) = brute_force_d(&pick(ConditionKind::LowScore), &pick(ConditionKind::HighScore));
        ensure(t.ks.d_statistic == num as f64 / den as f64, format!("{}: D differs from brute force", t.subject_id))?;
        let order: usize = t.subject_id.trim_start_matches('S').parse().map_err(s)?;
        if order <= 8 {
            shifted_hits += usize::from(t.ks.p_value < 0.05);
        } else {
            unshifted_clear += usize::from(t.ks.p_value > 0.05);
        }
    }
    ensure(shifted_hits >= 7, format!("{shifted_hits}/8 shifted subjects flagged"))?;
    ensure(unshifted_clear >= 6, format!("{unshifted_clear}/8 unshifted subjects clear"))?;
    *pairs_dir = Some(tmp);
    Ok(format!("50/50 syllabified, {shifted_hits}/8 shifted flagged, {unshifted_clear}/8 unshifted clear"))
}

fn audio(pairs_dir: Option<&Path>) -> Check {
    let mut rng = seeded_rng(44);
    for _ in 0..50 {
        let rate = *[8_000u32, 16_000, 22_050, 44_100].get(rng.random_range(0..4)).unwrap();
        let mut samples: Vec<i16> = (0..rng.random_range(0..5000)).map(|_| rng.random()).collect();
        samples.extend([i16::MIN, i16::MAX, 0, -1]);
        let clip = AudioClip::new(samples, rate);
        ensure(decode_wav(&encode_wav(&clip)).map_err(s)? == clip, "WAV round trip changed samples")?;
    }
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let rate = *[8_000u32, 16_000, 44_100].get(rng.random_range(0..3)).unwrap();
        let tone = ToneSpec {
            tone_duration_s: rng.random_range(0.05..1.0),
            gap_duration_s: rng.random_range(0.0..0.5),
            ..ToneSpec::default()
        };
        let clips: Vec<AudioClip> = (0..rng.random_range(1..=8))
            .map(|_| AudioClip::silence(rng.random_range(0.01..3.0), rate))
            .collect();
        let merged = merge_with_tone(&clips, &tone).map_err(s)?;
        let n = clips.len() as f64;
        let expected = clips.iter().map(AudioClip::duration_s).sum::<f64>() + (n - 1.0) * (tone.tone_duration_s + 2.0 * tone.gap_duration_s);
        let off = (merged.samples.len() as f64 - expected * rate as f64).abs();
        worst = worst.max(off);
        ensure(off <= 1.0, format!("merged length off by {off} samples"))?;
    }

    let dir = pairs_dir.ok_or("no corpus with stimulus pairs")?;
    let store = SqliteStore::open(&dir.join("data")).map_err(s)?;
    let positions: BTreeMap<String, (usize, String)> =
        store.clips().map_err(s)?.into_iter().map(|c| (c.clip_id, (c.position, c.session_id))).collect();
    let pairs = store.pairs().map_err(s)?;
    ensure(!pairs.is_empty(), "no stimulus pairs built")?;
    for p in &pairs {
        for seq in [&p.seq_a, &p.seq_b] {
            ensure(seq.len() == 6, format!("{}: {} clips", p.pair_id, seq.len()))?;
            let stored: Vec<usize> = seq.iter().map(|c| positions.get(&c.clip_id).map_or(0, |x| x.0)).collect();
            ensure(stored.iter().all(|q| (13..=18).contains(q)), format!("{}: positions {stored:?}", p.pair_id))?;
            let sessions: BTreeSet<&str> = seq.iter().filter_map(|c| positions.get(&c.clip_id).map(|x| x.1.as_str())).collect();
            ensure(sessions.len() == 1, format!("{}: sequence mixes sessions", p.pair_id))?;
        }
    }
    Ok(format!("round trip exact, max merge error {worst:.2} samples, {} pairs of 6 clips from questions 13-18", pairs.len()))
}

fn information_hiding(audit: &Audit) -> Check {
    // the audit itself must see a planted field
    let planted = serde_json::json!({ "tasks": [{ "pair_id": "p", "a_is_low_score": true }] });
    ensure(hidden_fields_in(&planted) == ["a_is_low_score"], "audit misses a planted field")?;
    ensure(audit.requests > 0, "no responses audited")?;
    ensure(audit.leaks.is_empty(), format!("leaks: {:?}", &audit.leaks[..audit.leaks.len().min(5)]))?;
    Ok(format!("{} responses audited, none expose hidden fields", audit.requests))
}

fn main() -> ExitCode {
    let mut results: Vec<Check> = Vec::new();
    let mut audit = Audit::default();
    let mut pairs_dir = None;
    let mut record = |name: &str, r: Check| {
        match &r {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => println!("FAIL  {name}: {why}"),
        }
        results.push(r);
    };

    record("protocol invariants", protocol_invariants(&mut audit));
    record("end-to-end bias pipeline", bias_pipeline(&mut audit));
    record("mixed-model oracle", mixed_model_oracle());
    record("KS correctness", ks_correctness());
    record("Fleiss kappa", fleiss());
    record("syllable pipeline", syllable_pipeline(&mut audit, &mut pairs_dir));
    record("audio", audio(pairs_dir.as_ref().map(|d| d.path())));
    record("information hiding", information_hiding(&audit));

    let failed = results.iter().filter(|r| r.is_err()).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
