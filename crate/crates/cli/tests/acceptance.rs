//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary so the criteria execute in order and share the
//! simulated batch. Exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use studentsim_core::agent::{compose_judge_prompt, fact_sheet_values, parse_verdict, PromptLibrary, SCORE_FIELDS};
use studentsim_core::behavior::{
    check_interrupt, default_spec, published_cognitive_cells, sample_cognitive_step, sample_next_segment,
    CognitiveBehavior, InterruptKind, MetacognitiveBehavior, PrevCognitive, ProfileLevel,
};
use studentsim_core::config::{Overrides, RunManifest};
use studentsim_core::knowledge::{bkt_update, BktParams};
use studentsim_core::metrics::{
    d_debug, error_recurrence, fact_sheet, kl_divergence, metacog_occupancy, nonlinearity_of, sdt_from_rates,
    tost_equivalence, Keywords, ReferenceDist,
};
use studentsim_core::rng::{stream_rng, Stream};
use studentsim_core::session::{run_batch, validate_trajectory, Trajectory};
use studentsim_core::trace::{breakdown_trace, load_trace, normalize_states, trace_files, BreakdownConfig};

type Outcome = Result<String, String>;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_time(start: Instant, limit: Duration, detail: String) -> Outcome {
    let took = start.elapsed();
    check(took < limit, format!("{detail} [{:.1}s, limit {}s]", took.as_secs_f64(), limit.as_secs()))
}

/// The 50-per-profile mock batch with default specs, run once.
struct SharedBatch {
    high: Vec<Trajectory>,
    low: Vec<Trajectory>,
    elapsed: Duration,
}

fn shared_batch() -> &'static Result<SharedBatch, String> {
    static BATCH: OnceLock<Result<SharedBatch, String>> = OnceLock::new();
    BATCH.get_or_init(|| {
        let start = Instant::now();
        let (manifest, base) = RunManifest::load(&root().join("fixtures/batch.toml")).map_err(|e| e.to_string())?;
        let plan = manifest.plan(&base, &Overrides::default()).map_err(|e| e.to_string())?;
        let (runs, _) = run_batch(&plan, 4);
        let mut high = Vec::new();
        let mut low = Vec::new();
        for r in runs {
            let traj = r.result.map_err(|e| format!("{}: {e}", r.name))?;
            match traj.config.behav_profile {
                ProfileLevel::High => high.push(traj),
                ProfileLevel::Low => low.push(traj),
            }
        }
        Ok(SharedBatch { high, low, elapsed: start.elapsed() })
    })
}

fn criterion_1() -> Outcome {
    let p = BktParams::default();
    // Hand-worked fractions: correct gives 28/55, incorrect gives 37/145.
    let correct = bkt_update(0.10, true, &p).map_err(|_| "degenerate update".to_string())?;
    let incorrect = bkt_update(0.10, false, &p).map_err(|_| "degenerate update".to_string())?;
    let ok = (correct - 28.0 / 55.0).abs() < 1e-9 && (incorrect - 37.0 / 145.0).abs() < 1e-9;
    check(ok, format!("BKT correct {correct:.10}, incorrect {incorrect:.10}"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let n = 100_000;
    let mut worst_mean = 0.0f64;
    let mut worst_cv = 0.0f64;
    for profile in [ProfileLevel::High, ProfileLevel::Low] {
        let spec = default_spec(profile);
        for (m, g) in &spec.durations {
            let dist = Gamma::new(g.shape, g.scale).map_err(|e| format!("{profile} {m}: {e}"))?;
            let mut rng = stream_rng(m.index() as u64, Stream::Durations);
            let xs: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let cv = var.sqrt() / mean;
            worst_mean = worst_mean.max((mean / (g.shape * g.scale) - 1.0).abs());
            worst_cv = worst_cv.max((cv * g.shape.sqrt() - 1.0).abs());
        }
    }
    let detail = format!(
        "Gamma durations: worst mean error {:.2}%, worst CV error {:.2}% over 8 rows",
        worst_mean * 100.0,
        worst_cv * 100.0
    );
    if worst_mean >= 0.02 || worst_cv >= 0.03 {
        return Err(detail);
    }
    within_time(start, Duration::from_secs(5), detail)
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let spec = default_spec(ProfileLevel::Low);
    let mut seg_rng = stream_rng(0, Stream::Segments);
    let mut dur_rng = stream_rng(0, Stream::Durations);
    let mut cog_rng = stream_rng(0, Stream::Cognitive);
    let mut counts: BTreeMap<(MetacognitiveBehavior, PrevCognitive, CognitiveBehavior), u64> = BTreeMap::new();
    let mut prev_m = None;
    for _ in 0..10_000 {
        let seg = sample_next_segment(prev_m, &spec, &mut seg_rng, &mut dur_rng).map_err(|e| e.to_string())?;
        prev_m = Some(seg.behavior);
        let mut prev_c = None;
        for _ in 0..seg.duration {
            let c = sample_cognitive_step(seg.behavior, prev_c, &spec, &mut cog_rng).map_err(|e| e.to_string())?;
            *counts.entry((seg.behavior, PrevCognitive::from(prev_c), c)).or_default() += 1;
            prev_c = Some(c);
        }
    }
    let mut worst = (0.0f64, String::new());
    for cell in published_cognitive_cells().iter().filter(|c| c.profile == ProfileLevel::Low) {
        let row: u64 = counts
            .iter()
            .filter(|((m, p, _), _)| *m == cell.metacog && *p == cell.prev)
            .map(|(_, n)| n)
            .sum();
        if row == 0 {
            return Err(format!("no visits to ({}, {})", cell.metacog, cell.prev));
        }
        let hit = counts.get(&(cell.metacog, cell.prev, cell.target)).copied().unwrap_or(0);
        let freq = hit as f64 / row as f64;
        let err = (freq - cell.p).abs();
        if err >= worst.0 {
            worst = (err, format!("{} {}->{} {:.3} vs {:.3}", cell.metacog, cell.prev, cell.target, freq, cell.p));
        }
    }
    let detail = format!("LOW cognitive cells over 10^4 segments: worst |diff| {:.2}pp ({})", worst.0 * 100.0, worst.1);
    if worst.0 > 0.02 {
        return Err(detail);
    }
    within_time(start, Duration::from_secs(10), detail)
}

fn criterion_4() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (profile, expected) in [(ProfileLevel::High, 0.150), (ProfileLevel::Low, 0.117)] {
        let mut spec = default_spec(profile);
        let p = spec.interrupts[&InterruptKind::Assistance].probability(0.5);
        // Isolate the assistance Gaussian so the off-topic check cannot pre-empt it.
        spec.interrupts.remove(&InterruptKind::OffTopic);
        let mut rng = stream_rng(1, Stream::Interrupts);
        let n = 100_000;
        let fired = (0..n)
            .filter(|_| check_interrupt(0.5, &spec, false, &mut rng) == Some(InterruptKind::Assistance))
            .count();
        let freq = fired as f64 / n as f64;
        ok &= (p - expected).abs() < 1e-12 && (freq - expected).abs() <= 0.005;
        parts.push(format!("{profile} p={p:.3} mc={freq:.4}"));
    }
    check(ok, format!("assistance at x=0.5: {}", parts.join(", ")))
}

fn criterion_5() -> Outcome {
    let mut rng = stream_rng(5, Stream::Agent);
    let mut worst_kl = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(2..=8);
        let p: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
        worst_kl = worst_kl.max(kl_divergence(&p, &p).map_err(|e| e.to_string())?.abs());
    }
    let monotone = [
        nonlinearity_of(&[0.0, 0.2, 0.5, 0.5, 1.0]),
        nonlinearity_of(&[0.25, 0.25, 0.25]),
        nonlinearity_of(&[0.0, 0.5, 0.75, 1.0]),
    ];
    let nonlin_ok = monotone.iter().all(|x| *x == Some(0.0));

    let batch = shared_batch().as_ref().map_err(Clone::clone)?;
    let all: Vec<Trajectory> = batch.high.iter().chain(&batch.low).cloned().collect();
    let reference = ReferenceDist::from_trajectories(&all).map_err(|e| e.to_string())?;
    let dd = d_debug(&all, &reference).ok_or("d_debug undefined on the batch")?;

    let recur = error_recurrence(&[
        with_errors(&all[0], &[("TypeError", 3), ("NameError", 1)]),
        with_errors(&all[0], &[("ValueError", 2)]),
    ])
    .ok_or("recurrence undefined")?;

    let ok = worst_kl < 1e-12 && nonlin_ok && dd.abs() < 1e-12 && (recur - 2.0 / 3.0).abs() < 1e-12;
    check(
        ok,
        format!("max KL(p,p) {worst_kl:.1e}, monotone nonlinearity {monotone:?}, self d_debug {dd:.1e}, recurrence {recur:.4}"),
    )
}

/// A trajectory whose executed steps show `errors[i].0` on `errors[i].1` steps.
fn with_errors(template: &Trajectory, errors: &[(&str, usize)]) -> Trajectory {
    let base = template.steps.iter().find(|s| s.cognitive.is_some()).expect("a cognitive step").clone();
    let mut traj = template.clone();
    traj.steps.clear();
    for (name, n) in errors {
        for _ in 0..*n {
            let mut s = base.clone();
            s.t = traj.steps.len() as u32 + 1;
            s.interrupt = None;
            s.raw_obs.executed = true;
            s.raw_obs.error_types = BTreeMap::from([(name.to_string(), 1)]);
            traj.steps.push(s);
        }
    }
    traj
}

fn criterion_6() -> Outcome {
    let sdt = sdt_from_rates(0.622, 0.566);
    let tost = tost_equivalence(0.15, 0.087, 0.3).map_err(|e| e.to_string())?;
    let ok = (0.14..=0.16).contains(&sdt.d_prime)
        && (-0.25..=-0.23).contains(&sdt.criterion)
        && (0.030..=0.050).contains(&tost.p_tost);
    check(
        ok,
        format!("d'={:.4}, c={:.4}, TOST p={:.4}", sdt.d_prime, sdt.criterion, tost.p_tost),
    )
}

fn batch_via_cli(manifest: &Path, out: &Path, parallel: &str) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_studentsim"))
        .args(["batch", "--config", manifest.to_str().unwrap(), "--out", out.to_str().unwrap(), "--parallel", parallel])
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("batch exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)))
    }
}

fn dir_bytes(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let e = e.map_err(|e| e.to_string())?;
        out.insert(e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

fn criterion_7() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixtures = root().join("fixtures");
    let manifest = tmp.path().join("manifest.toml");
    std::fs::write(
        &manifest,
        format!(
            "root_seed = 99\nrepetitions = 5\n\n[[condition]]\nname = \"low\"\nsession = \"{}\"\n\n\
             [[condition]]\nname = \"high\"\nsession = \"{}\"\n",
            fixtures.join("low.session").display(),
            fixtures.join("high.session").display()
        ),
    )
    .map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    batch_via_cli(&manifest, &a, "1")?;
    batch_via_cli(&manifest, &b, "4")?;
    let (da, db) = (dir_bytes(&a)?, dir_bytes(&b)?);
    let identical = da == db;
    let files = trace_files(&a).map_err(|e| e.to_string())?;
    let mut violations = Vec::new();
    for f in &files {
        let traj = load_trace(f).map_err(|e| e.to_string())?;
        violations.extend(validate_trajectory(&traj).into_iter().map(|v| format!("{}: {v}", f.display())));
    }
    let detail = format!(
        "{} traces byte-identical across two batch runs: {identical}; schema violations: {}",
        files.len(),
        violations.len()
    );
    match violations.first() {
        Some(v) => Err(format!("{detail} (first: {v})")),
        None => check(identical && files.len() == 10, detail),
    }
}

fn enacting_share(trajs: &[Trajectory]) -> f64 {
    metacog_occupancy(trajs)[&MetacognitiveBehavior::Enacting]
}

fn criterion_8() -> Outcome {
    let batch = shared_batch().as_ref().map_err(Clone::clone)?;
    let (hi, lo) = (enacting_share(&batch.high), enacting_share(&batch.low));
    let gap = (lo - hi) * 100.0;
    let detail = format!(
        "Enacting share LOW {:.1}% vs HIGH {:.1}% over {}+{} sessions (gap {gap:.1}pp) [{:.1}s, limit 60s]",
        lo * 100.0,
        hi * 100.0,
        batch.low.len(),
        batch.high.len(),
        batch.elapsed.as_secs_f64()
    );
    check(
        gap >= 10.0 && batch.low.len() == 50 && batch.high.len() == 50 && batch.elapsed < Duration::from_secs(60),
        detail,
    )
}

/// A random program-like state sequence. Each transition applies two to
/// four line edits, so consecutive states have intermediate snapshots.
fn synthetic_states(rng: &mut impl Rng) -> Vec<String> {
    const WORDS: [&str; 8] = ["x", "total", "=", "+", "print(x)", "for", "i", "range(3):"];
    let mut lines: Vec<String> = Vec::new();
    let mut states: Vec<String> = Vec::new();
    let n = rng.random_range(3..=7);
    while states.len() < n {
        for _ in 0..rng.random_range(2..=4) {
            match rng.random_range(0..4) {
                2 if !lines.is_empty() => {
                    let at = rng.random_range(0..lines.len());
                    lines[at].push_str(" + 1");
                }
                3 if lines.len() > 2 => {
                    lines.remove(rng.random_range(0..lines.len()));
                }
                _ => {
                    let len = rng.random_range(1..=5);
                    let line: Vec<&str> = (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
                    let at = rng.random_range(0..=lines.len());
                    lines.insert(at, line.join(" "));
                }
            }
        }
        let state = lines.join("\n");
        if states.last() != Some(&state) {
            states.push(state);
        }
    }
    states
}

fn criterion_9() -> Outcome {
    let mut rng = stream_rng(9, Stream::Breakdown);
    let seeds = 32u64;
    for case in 0..100 {
        let states = synthetic_states(&mut rng);
        let at = |level: f64, seed: u64| {
            let mut cfg = BreakdownConfig::new(level).expect("valid level");
            cfg.seed = seed;
            breakdown_trace(&states, &cfg)
        };
        let full = at(1.0, 0);
        let last = normalize_states(&states, false).pop().unwrap_or_default();
        if full.last() != Some(&last) {
            return Err(format!("case {case}: level 1.0 does not end in the normalized final state"));
        }
        let len0 = at(0.0, 0).len() as f64;
        let len1 = full.len() as f64;
        let half = (0..seeds).map(|s| at(0.5, s).len() as f64).sum::<f64>() / seeds as f64;
        if !(len0 < half && half < len1) {
            return Err(format!("case {case}: lengths 0.0 -> {len0}, 0.5 -> {half:.2}, 1.0 -> {len1}"));
        }
    }
    Ok("100 random sequences end in their normalized final state; mean length at 0.5 lies strictly between 0.0 and 1.0".into())
}

fn criterion_10() -> Outcome {
    let batch = shared_batch().as_ref().map_err(Clone::clone)?;
    let traj = &batch.low[0];
    let lib = PromptLibrary::embedded();
    let sheet = fact_sheet(traj, &Keywords::default());
    if sheet.total_steps != traj.steps.len() {
        return Err(format!("fact sheet counts {} steps, trace has {}", sheet.total_steps, traj.steps.len()));
    }
    let prompt = compose_judge_prompt(traj, &sheet, &lib).map_err(|e| e.to_string())?;
    let template = lib.get("judge.fact_sheet").map_err(|e| e.to_string())?;
    for (key, value) in fact_sheet_values(&sheet) {
        let placeholder = format!("{{{{{key}}}}}");
        let line = template.lines().find(|l| l.contains(&placeholder)).ok_or(format!("no line for {key}"))?;
        let expected = line.replace(&placeholder, &value);
        if !prompt.lines().any(|l| l == expected) {
            return Err(format!("prompt lacks `{expected}`"));
        }
    }
    let reply = "The trace reads as plausible.\n```json\n{\"justification\": \"Reruns code after each edit.\", \
                 \"realism_score\": 2, \"code_quality_realism\": 3, \"debugging_pattern_realism\": 1, \"language_realism\": 2}\n```";
    let v = parse_verdict(reply).map_err(|e| e.to_string())?;
    let scores = [v.realism_score, v.code_quality_realism, v.debugging_pattern_realism, v.language_realism];
    check(
        scores == [2, 3, 1, 2],
        format!("prompt embeds all {} fact-sheet values; parsed {:?} = {scores:?}", fact_sheet_values(&sheet).len(), SCORE_FIELDS),
    )
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let mut failed = 0;
    for (n, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS criterion {n}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n}: {detail}");
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
