use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use studentsim_core::agent::{compose_judge_prompt, parse_verdict, PromptLibrary};
use studentsim_core::behavior::{default_spec, CognitiveBehavior, MetacognitiveBehavior, ProfileLevel};
use studentsim_core::config::{Overrides, RunManifest, SessionConfig};
use studentsim_core::metrics::{
    dprime_standard_error, evaluate, fact_sheet, fit_event_log, read_event_log, sdt_analysis,
    tost_equivalence, ConfusionCounts, Keywords, ReferenceDist, SdtResult, TostResult,
};
use studentsim_core::session::{run_batch, run_session, BatchSummary, Trajectory};
use studentsim_core::trace::{
    breakdown_trace, load_trace, save_trace, trace_files, BlankLineStyle, BreakdownConfig,
};

use crate::Failure;

type Outcome = Result<(), Failure>;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(Failure::io)?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::io)
}

/// Write to stdout; a reader that went away (`| head`) is not an error.
fn emit(text: &str) -> Outcome {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::io(e)),
        _ => Ok(()),
    }
}

fn load_keywords(path: Option<&Path>) -> Result<Keywords, Failure> {
    match path {
        Some(p) => Keywords::load(p).map_err(|e| Failure::config(anyhow::anyhow!("{}: {e}", p.display()))),
        None => Ok(Keywords::default()),
    }
}

fn load_one_trace(path: &Path) -> Result<Trajectory, Failure> {
    load_trace(path).map_err(|e| Failure::config(anyhow::anyhow!("{}: {e}", path.display())))
}

fn outcome_line(t: &Trajectory) -> String {
    match (t.solve_step, &t.truncated) {
        (_, Some(reason)) => format!("truncated after {} steps: {reason}", t.steps.len()),
        (Some(s), None) => format!("solved at step {s}"),
        (None, None) => format!("not solved in {} steps", t.steps.len()),
    }
}

pub fn run(config: &Path, overrides: &Overrides, out: &Path) -> Outcome {
    let cfg = SessionConfig::load(config, overrides).map_err(Failure::config)?;
    tracing::info!(name = %cfg.name, seed = cfg.seed, "running session");
    let traj = run_session(&cfg).map_err(Failure::config)?;
    let path = out.join(format!("{}.jsonl", cfg.name));
    save_trace(&traj, &path).map_err(Failure::io)?;
    println!("{}: {} ({})", cfg.name, outcome_line(&traj), path.display());
    match &traj.truncated {
        Some(reason) => Err(Failure::backend(anyhow::anyhow!("backend failed: {reason}"))),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct FailedRun<'a> {
    name: &'a str,
    condition: &'a str,
    seed: u64,
    error: &'a str,
}

#[derive(Serialize)]
struct BatchReport<'a> {
    summary: &'a BatchSummary,
    failures: Vec<FailedRun<'a>>,
}

pub fn batch(manifest: &Path, overrides: &Overrides, out: Option<&Path>, parallel: usize) -> Outcome {
    let (m, base) = RunManifest::load(manifest).map_err(Failure::config)?;
    let plan = m.plan(&base, overrides).map_err(Failure::config)?;
    let out: PathBuf = match (out, &m.output_dir) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(d)) if d.is_absolute() => d.clone(),
        (None, Some(d)) => base.join(d),
        (None, None) => PathBuf::from("out/batch"),
    };
    tracing::info!(sessions = plan.len(), parallel, out = %out.display(), "running batch");
    let (runs, summary) = run_batch(&plan, parallel);
    let mut failures = Vec::new();
    for r in &runs {
        match &r.result {
            Ok(t) => {
                save_trace(t, &out.join(format!("{}.jsonl", r.name))).map_err(Failure::io)?;
                tracing::info!(name = %r.name, "{}", outcome_line(t));
            }
            Err(e) => {
                tracing::warn!(name = %r.name, error = %e, "session failed");
                failures.push(FailedRun {
                    name: &r.name,
                    condition: &r.condition,
                    seed: r.seed,
                    error: e,
                });
            }
        }
    }
    write_json(&out.join("summary.json"), &BatchReport { summary: &summary, failures })?;
    println!(
        "{} sessions: {} completed, {} failed, {} truncated, {} solved ({})",
        summary.sessions,
        summary.completed,
        summary.failed,
        summary.truncated,
        summary.solved,
        out.display()
    );
    for (name, c) in &summary.per_condition {
        let rate = c.solve_rate.map_or("absent".into(), |r| format!("{:.1}%", r * 100.0));
        println!("  {name}: {} sessions, solve rate {rate}", c.sessions);
    }
    if summary.failed > 0 || summary.truncated > 0 {
        return Err(Failure::backend(anyhow::anyhow!(
            "{} sessions failed and {} were truncated; see summary.json",
            summary.failed,
            summary.truncated
        )));
    }
    Ok(())
}

pub fn eval(traces: &Path, reference: Option<&Path>, keywords: Option<&Path>, out: Option<&Path>) -> Outcome {
    let files = if traces.is_dir() {
        trace_files(traces).map_err(Failure::config)?
    } else {
        vec![traces.to_path_buf()]
    };
    if files.is_empty() {
        return Err(Failure::config(anyhow::anyhow!("no .jsonl traces in {}", traces.display())));
    }
    let trajs = files
        .iter()
        .map(|p| load_one_trace(p))
        .collect::<Result<Vec<_>, _>>()?;
    let reference = reference
        .map(|p| ReferenceDist::load(p).map_err(|e| Failure::config(anyhow::anyhow!("{}: {e}", p.display()))))
        .transpose()?;
    let report = evaluate(&trajs, reference.as_ref(), &load_keywords(keywords)?);
    emit(&report.render_text())?;
    if let Some(p) = out {
        write_json(p, &report)?;
    }
    Ok(())
}

pub fn fit(events: &Path, lambda: f64, out: Option<&Path>) -> Outcome {
    let file = std::fs::File::open(events)
        .with_context(|| format!("opening {}", events.display()))
        .map_err(Failure::config)?;
    let evs = read_event_log(file).map_err(|e| Failure::config(anyhow::anyhow!("{}: {e}", events.display())))?;
    let report = fit_event_log(&evs, lambda).map_err(Failure::config)?;
    println!("{} events merged into {} episodes (lambda = {lambda} s)", report.events, report.episodes);
    println!("segment durations (episodes):");
    for m in MetacognitiveBehavior::ALL {
        let n = report.segment_lengths.get(&m).map_or(0, Vec::len);
        match report.durations.get(&m).copied().flatten() {
            Some(g) => println!("  {:<11} shape {:.3}  scale {:.3}  ({n} segments)", m.name(), g.shape, g.scale),
            None => println!("  {:<11} not fitted ({n} segments)", m.name()),
        }
    }
    println!("cognitive transitions:");
    for from in CognitiveBehavior::ALL {
        let cells: Vec<String> = CognitiveBehavior::ALL
            .iter()
            .map(|to| match report.cognitive.prob(from, *to) {
                Some(p) => format!("{}:{:.3}", to.name(), p),
                None => format!("{}:-", to.name()),
            })
            .collect();
        println!("  {:<12} {}", from.name(), cells.join("  "));
    }
    if let Some(p) = out {
        write_json(p, &report)?;
    }
    Ok(())
}

pub fn breakdown(
    trace: &Path,
    level: f64,
    words: bool,
    blank_lines: BlankLineStyle,
    seed: u64,
    out: Option<&Path>,
) -> Outcome {
    let traj = load_one_trace(trace)?;
    let cfg = BreakdownConfig {
        level,
        word_granularity: words,
        blank_line_style: blank_lines,
        seed,
    };
    cfg.check().map_err(Failure::config)?;
    let states: Vec<&str> = traj
        .steps
        .iter()
        .map(|s| s.action.code.as_str())
        .filter(|c| !c.trim().is_empty())
        .collect();
    let snaps = breakdown_trace(&states, &cfg);
    match out {
        Some(p) => {
            write_json(p, &snaps)?;
            println!("{} code states expanded to {} snapshots ({})", states.len(), snaps.len(), p.display());
        }
        None => emit(&(serde_json::to_string_pretty(&snaps).expect("strings serialize") + "\n"))?,
    }
    Ok(())
}

#[derive(Serialize)]
struct SdtReport {
    counts: ConfusionCounts,
    sdt: SdtResult,
    se: f64,
    margin: f64,
    tost: TostResult,
}

pub fn sdt(hits: u64, misses: u64, fa: u64, cr: u64, margin: f64, se: Option<f64>, out: Option<&Path>) -> Outcome {
    let counts = ConfusionCounts {
        hits,
        misses,
        false_alarms: fa,
        correct_rejections: cr,
    };
    let r = sdt_analysis(&counts).map_err(Failure::config)?;
    let se = match se {
        Some(s) => s,
        None => dprime_standard_error(&counts).map_err(Failure::config)?,
    };
    let tost = tost_equivalence(r.d_prime, se, margin).map_err(Failure::config)?;
    println!("hit rate     {:.4}", r.hit_rate);
    println!("false alarms {:.4}", r.fa_rate);
    println!("d'           {:.4}", r.d_prime);
    println!("criterion c  {:.4}", r.criterion);
    if r.clamped {
        println!("(a rate of 0 or 1 was clamped before the probit)");
    }
    println!("se(d')       {se:.4}");
    println!(
        "TOST margin {margin}: z_lower {:.3} (p {:.4}), z_upper {:.3} (p {:.4}), p_tost {:.4}",
        tost.z_lower, tost.p_lower, tost.z_upper, tost.p_upper, tost.p_tost
    );
    if let Some(p) = out {
        write_json(p, &SdtReport { counts, sdt: r, se, margin, tost })?;
    }
    Ok(())
}

pub fn judge_prompt(
    trace: Option<&Path>,
    keywords: Option<&Path>,
    prompts: Option<&Path>,
    reply: Option<&Path>,
    out: Option<&Path>,
) -> Outcome {
    if let Some(reply) = reply {
        let text = std::fs::read_to_string(reply)
            .with_context(|| format!("reading {}", reply.display()))
            .map_err(Failure::config)?;
        let verdict = parse_verdict(&text).map_err(Failure::config)?;
        let json = serde_json::to_string_pretty(&verdict).expect("verdict serializes");
        return match out {
            Some(p) => write_json(p, &verdict),
            None => emit(&(json + "\n")),
        };
    }
    let trace = trace.ok_or_else(|| Failure::config(anyhow::anyhow!("--trace is required")))?;
    let traj = load_one_trace(trace)?;
    let lib = match prompts {
        Some(dir) => PromptLibrary::from_dir(dir).map_err(Failure::config)?,
        None => PromptLibrary::default(),
    };
    let sheet = fact_sheet(&traj, &load_keywords(keywords)?);
    let prompt = compose_judge_prompt(&traj, &sheet, &lib).map_err(Failure::config)?;
    match out {
        Some(p) => {
            std::fs::write(p, &prompt)
                .with_context(|| format!("writing {}", p.display()))
                .map_err(Failure::io)?;
            let sheet_path = p.with_extension("facts.json");
            write_json(&sheet_path, &sheet)?;
            println!("prompt written to {} and fact sheet to {}", p.display(), sheet_path.display());
        }
        None => emit(&(prompt + "\n"))?,
    }
    Ok(())
}

/// Text of the editable spec file for a profile.
pub fn defaults_text(profile: ProfileLevel) -> String {
    format!(
        "# Built-in {} behavior spec. Copy and edit, then point a session's\n\
         # behavior_spec at the copy. Regenerate with `studentsim defaults`.\n\n{}",
        profile.key(),
        default_spec(profile).to_toml()
    )
}

pub fn defaults(out: &Path) -> Outcome {
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(Failure::io)?;
    for profile in [ProfileLevel::High, ProfileLevel::Low] {
        let path = out.join(format!("{}.toml", profile.key()));
        std::fs::write(&path, defaults_text(profile))
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::io)?;
        println!("{}", path.display());
    }
    Ok(())
}
