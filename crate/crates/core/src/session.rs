//! Session loop and batches.
//!
//! One step: terminate when solved or out of steps; honor a pending tutor
//! hint or test for an interrupt; otherwise sample the cognitive step, run
//! the agent, execute per the gating plan, filter the feedback and update
//! knowledge while monitoring or reflecting.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{
    generate_tutor_hint, record_error_episode, Agent, AgentAction, AgentError, ChatBackend,
    MemoryBuffer, SharedContext, StrategyPacket, TutorContext, TutorKind, TutorOutcome,
};
use crate::behavior::{
    check_interrupt, sample_cognitive_step, sample_next_segment, BehaviorError, CognitiveBehavior,
    InterruptKind, MetacognitiveBehavior, ProfileLevel,
};
use crate::config::{PlannedSession, SessionConfig};
use crate::environment::{
    compute_progress, filter_observation, gate_execution, kc_oracle, knowledge_update_allowed,
    EnvironmentError, Observation, REDACTED,
};
use crate::knowledge::{render_constraints, KnowledgeError, KnowledgeState};
use crate::rng::SessionStreams;

pub const SCHEMA_VERSION: &str = "1.0";

const MAX_REALIZATION_CHARS: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error("prompt configuration: {0}")]
    Prompt(#[from] crate::agent::PromptError),
}

/// Identifying facts about the configuration that produced a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub name: String,
    pub problem_id: String,
    pub behav_profile: ProfileLevel,
    pub persona_profile: ProfileLevel,
    pub tutor: TutorKind,
    pub backend: String,
    pub seed: u64,
    pub max_steps: u32,
    pub tests_total: u32,
    #[serde(default)]
    pub blocked_kcs: Vec<String>,
}

impl ConfigSummary {
    pub fn of(cfg: &SessionConfig) -> Self {
        Self {
            name: cfg.name.clone(),
            problem_id: cfg.problem.id.clone(),
            behav_profile: cfg.behav_profile,
            persona_profile: cfg.persona_profile,
            tutor: cfg.tutor,
            backend: cfg.backend.label(),
            seed: cfg.seed,
            max_steps: cfg.max_steps,
            tests_total: cfg.problem.tests_total(),
            blocked_kcs: cfg.blocked_kcs.iter().cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Step index, from 1.
    pub t: u32,
    /// Segment index, from 1.
    pub n: u32,
    pub metacog: MetacognitiveBehavior,
    /// Sampled duration of segment `n`.
    pub segment_duration: u32,
    /// Absent on interrupt steps, which sit outside the cognitive chain.
    pub cognitive: Option<CognitiveBehavior>,
    pub action: AgentAction,
    pub raw_obs: Observation,
    pub filtered_obs: Observation,
    /// Raw output of the run before editing, on steps that execute first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_obs: Option<Observation>,
    /// Test-pass fraction after the step.
    pub progress: f64,
    /// t / max_steps, the x used for interrupt checks.
    pub time_progress: f64,
    pub knowledge_snapshot: BTreeMap<String, f64>,
    #[serde(default)]
    pub interrupt: Option<InterruptKind>,
    #[serde(default)]
    pub intervention: Option<String>,
    #[serde(default)]
    pub strategy: Option<StrategyPacket>,
    /// Tutor details on assistance steps.
    #[serde(default)]
    pub tutor: Option<TutorOutcome>,
    /// KCs credited by the oracle on steps that updated knowledge.
    #[serde(default)]
    pub kc_evidence: Option<BTreeSet<String>>,
    /// Fields written by newer schema versions, kept verbatim.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub schema_version: String,
    pub config: ConfigSummary,
    pub steps: Vec<TraceStep>,
    pub solved: bool,
    pub solve_step: Option<u32>,
    /// Reason the session stopped early on a backend failure.
    #[serde(default)]
    pub truncated: Option<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Trajectory {
    /// Steps that belong to the cognitive chain (no interrupts).
    pub fn cognitive_steps(&self) -> impl Iterator<Item = (&TraceStep, CognitiveBehavior)> {
        self.steps.iter().filter_map(|s| s.cognitive.map(|c| (s, c)))
    }

    /// First step whose execution passed every test.
    pub fn first_solve(&self) -> Option<u32> {
        self.steps.iter().find(|s| s.raw_obs.all_passed()).map(|s| s.t)
    }
}

struct Segment {
    n: u32,
    m: MetacognitiveBehavior,
    duration: u32,
    done: u32,
    prev_c: Option<CognitiveBehavior>,
    needs_strategy: bool,
}

fn help_question(obs: &Observation, code: &str) -> String {
    if let Some((err, _)) = obs.error_types.iter().max_by_key(|(_, n)| **n) {
        format!("I keep getting a {err} and I don't get why.")
    } else if obs.stderr == REDACTED {
        "Something is going wrong and I can't tell what.".to_string()
    } else if code.trim().is_empty() {
        "I don't know how to start.".to_string()
    } else {
        "I'm not sure what to do next.".to_string()
    }
}

fn truncate_chars(s: &str, max: usize) -> String {
    s.chars().take(max).collect()
}

/// Run one session with a fresh backend built from the config.
pub fn run_session(cfg: &SessionConfig) -> Result<Trajectory, SessionError> {
    let mut backend = cfg.backend.instantiate();
    run_session_with(cfg, backend.as_mut())
}

/// Run one session against a caller-supplied backend.
pub fn run_session_with(
    cfg: &SessionConfig,
    backend: &mut dyn ChatBackend,
) -> Result<Trajectory, SessionError> {
    let spec = cfg.behavior_spec.as_ref();
    let problem = cfg.problem.as_ref();
    let mut rngs = SessionStreams::new(cfg.seed);
    let mut knowledge = KnowledgeState::with_overrides(&problem.kcs, cfg.bkt, cfg.kc_params.clone());
    knowledge.blocked_overrides = cfg.blocked_kcs.clone();

    let mut agent = Agent {
        lib: &cfg.prompts,
        backend,
        settings: &cfg.agent,
        persona: cfg.persona_profile,
    };
    let mut strat_mem = MemoryBuffer::new();
    let mut exec_mem = MemoryBuffer::new();
    let mut steps: Vec<TraceStep> = Vec::new();
    let mut code = String::new();
    let mut last_obs = Observation::initial(problem.tests_total());
    let mut segment: Option<Segment> = None;
    let mut prev_m: Option<MetacognitiveBehavior> = None;
    let mut packet: Option<StrategyPacket> = None;
    let mut pending_hint: Option<Option<String>> = None;
    let mut hint_streak: Option<(String, u32)> = None;
    let mut solve_step = None;
    let mut truncated = None;
    let mut t = 0u32;

    loop {
        if solve_step.is_some() || t >= cfg.max_steps {
            break;
        }
        t += 1;
        let time_progress = t as f64 / cfg.max_steps as f64;

        if segment.as_ref().is_none_or(|s| s.done >= s.duration) {
            let plan = sample_next_segment(prev_m, spec, &mut rngs.segments, &mut rngs.durations)?;
            prev_m = Some(plan.behavior);
            segment = Some(Segment {
                n: segment.as_ref().map_or(1, |s| s.n + 1),
                m: plan.behavior,
                duration: plan.duration,
                done: 0,
                prev_c: None,
                needs_strategy: true,
            });
        }
        let seg = segment.as_mut().expect("segment exists");
        let m = seg.m;

        let intervention = pending_hint.take();
        let interrupt = match intervention {
            Some(_) => None,
            None => check_interrupt(time_progress, spec, false, &mut rngs.interrupts),
        };
        let intervention = intervention.flatten();

        if let Some(kind) = interrupt {
            let idle_c = seg.prev_c.unwrap_or(CognitiveBehavior::Constructing);
            let visible = filter_observation(&last_obs, m);
            let (utterance, tutor) = match kind {
                InterruptKind::OffTopic => match agent.off_topic(t, m, idle_c) {
                    Ok(u) => (u, None),
                    Err(AgentError::Prompt(e)) => return Err(e.into()),
                    Err(e) => {
                        truncated = Some(e.to_string());
                        break;
                    }
                },
                InterruptKind::Assistance => {
                    let question = agent.help_request(&help_question(&visible, &code))?;
                    let credited = kc_oracle(&code, problem);
                    let failures = match (&hint_streak, knowledge.lowest_mastery()) {
                        (Some((kc, n)), Some((target, _))) if kc == target && !credited.contains(kc) => *n + 1,
                        _ => 0,
                    };
                    let recent_errors: Vec<String> = steps
                        .iter()
                        .rev()
                        .filter(|s| s.filtered_obs.executed)
                        .take(3)
                        .flat_map(|s| s.filtered_obs.error_types.keys().cloned())
                        .collect::<BTreeSet<_>>()
                        .into_iter()
                        .collect();
                    let tctx = TutorContext {
                        question: &question,
                        code: &code,
                        metacog: m,
                        recent_errors: &recent_errors,
                        consecutive_failures: failures,
                        kcs: &problem.kcs,
                    };
                    let outcome = generate_tutor_hint(
                        cfg.tutor,
                        &knowledge,
                        &tctx,
                        agent.lib,
                        &mut *agent.backend,
                        agent.settings,
                        t,
                    )?;
                    if let Some(kc) = &outcome.target_kc {
                        hint_streak = Some((kc.clone(), failures));
                    }
                    pending_hint = Some(outcome.hint.clone());
                    (question, Some(outcome))
                }
            };
            let raw = Observation::carried(&last_obs);
            steps.push(TraceStep {
                t,
                n: seg.n,
                metacog: m,
                segment_duration: seg.duration,
                cognitive: None,
                action: AgentAction {
                    code: code.clone(),
                    utterance,
                },
                filtered_obs: filter_observation(&raw, m),
                progress: compute_progress(&raw),
                raw_obs: raw,
                pre_obs: None,
                time_progress,
                knowledge_snapshot: knowledge.mastery.clone(),
                interrupt: Some(kind),
                intervention: None,
                strategy: None,
                tutor,
                kc_evidence: None,
                extra: BTreeMap::new(),
            });
            continue;
        }

        let c = sample_cognitive_step(m, seg.prev_c, spec, &mut rngs.cognitive)?;
        let plan = gate_execution(c);
        let statuses = knowledge.statuses(&mut rngs.knowledge);
        let constraints = render_constraints(&statuses, &problem.kcs);
        let pre_obs = if plan.execute_before {
            cfg.runner.execute(&code)?
        } else {
            last_obs.clone()
        };
        let ctx = SharedContext {
            task: problem.description.clone(),
            prev_code: code.clone(),
            filtered_obs: filter_observation(&pre_obs, m),
            constraints,
            intervention: intervention.clone(),
        };

        let mut strategy = None;
        if seg.needs_strategy || packet.is_none() {
            match agent.run_strategist(t, m, c, &mut strat_mem, &ctx) {
                Ok(p) => {
                    seg.needs_strategy = false;
                    strategy = Some(p.clone());
                    packet = Some(p);
                }
                Err(AgentError::Prompt(e)) => return Err(e.into()),
                Err(e) => {
                    truncated = Some(e.to_string());
                    break;
                }
            }
        }
        let current = packet.as_ref().expect("strategy available");
        let action = match agent.run_executor(t, current, m, c, &mut exec_mem, &ctx) {
            Ok(a) => a,
            Err(AgentError::Prompt(e)) => return Err(e.into()),
            Err(e) => {
                truncated = Some(e.to_string());
                break;
            }
        };

        let new_code = if plan.allow_modify || plan.cleanup_only {
            action.code.clone()
        } else {
            code.clone()
        };
        let raw = if plan.execute_after {
            cfg.runner.execute(&new_code)?
        } else if plan.execute_before {
            pre_obs.clone()
        } else {
            Observation::carried(&last_obs)
        };
        if raw.all_passed() {
            solve_step = Some(t);
        }

        if c == CognitiveBehavior::Debugging {
            let realization = truncate_chars(&action.utterance, MAX_REALIZATION_CHARS);
            for err in ctx.filtered_obs.error_types.keys() {
                let fixed = raw.executed && !raw.error_types.contains_key(err);
                record_error_episode(&mut exec_mem, err, &realization, fixed);
            }
        }

        let kc_evidence = if knowledge_update_allowed(m) {
            let credited = kc_oracle(&new_code, problem);
            for kc in problem.kc_ids() {
                let params = *knowledge.params_for(&kc);
                let p_correct = if credited.contains(&kc) {
                    1.0 - params.p_slip
                } else {
                    params.p_guess
                };
                let correct = rand::Rng::random::<f64>(&mut rngs.knowledge) < p_correct;
                knowledge.update(&kc, correct)?;
            }
            Some(credited)
        } else {
            None
        };

        seg.done += 1;
        seg.prev_c = Some(c);
        steps.push(TraceStep {
            t,
            n: seg.n,
            metacog: m,
            segment_duration: seg.duration,
            cognitive: Some(c),
            action: AgentAction {
                code: new_code.clone(),
                utterance: action.utterance,
            },
            filtered_obs: filter_observation(&raw, m),
            progress: compute_progress(&raw),
            raw_obs: raw.clone(),
            pre_obs: plan.execute_before.then(|| pre_obs.clone()),
            time_progress,
            knowledge_snapshot: knowledge.mastery.clone(),
            interrupt: None,
            intervention,
            strategy,
            tutor: None,
            kc_evidence,
            extra: BTreeMap::new(),
        });
        code = new_code;
        last_obs = raw;
    }

    Ok(Trajectory {
        schema_version: SCHEMA_VERSION.to_string(),
        config: ConfigSummary::of(cfg),
        steps,
        solved: solve_step.is_some(),
        solve_step,
        truncated,
        extra: BTreeMap::new(),
    })
}

/// Outcome of one batch member.
#[derive(Debug)]
pub struct BatchRun {
    pub index: usize,
    pub condition: String,
    pub name: String,
    pub seed: u64,
    pub result: Result<Trajectory, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub sessions: usize,
    pub completed: usize,
    pub failed: usize,
    pub truncated: usize,
    pub solved: usize,
    pub solve_rate: Option<f64>,
    pub mean_steps: Option<f64>,
    pub per_condition: BTreeMap<String, ConditionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub sessions: usize,
    pub failed: usize,
    pub solved: usize,
    pub solve_rate: Option<f64>,
    pub mean_steps: Option<f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Summary over completed runs. `mean_steps` averages trajectory length.
pub fn summarize_batch(runs: &[BatchRun]) -> BatchSummary {
    let mut per_condition: BTreeMap<String, Vec<&BatchRun>> = BTreeMap::new();
    for r in runs {
        per_condition.entry(r.condition.clone()).or_default().push(r);
    }
    let tally = |rs: &[&BatchRun]| {
        let ok: Vec<&Trajectory> = rs.iter().filter_map(|r| r.result.as_ref().ok()).collect();
        let solved = ok.iter().filter(|t| t.solved).count();
        let lens: Vec<f64> = ok.iter().map(|t| t.steps.len() as f64).collect();
        (ok.len(), solved, lens, ok.iter().filter(|t| t.truncated.is_some()).count())
    };
    let all: Vec<&BatchRun> = runs.iter().collect();
    let (completed, solved, lens, truncated) = tally(&all);
    BatchSummary {
        sessions: runs.len(),
        completed,
        failed: runs.len() - completed,
        truncated,
        solved,
        solve_rate: (completed > 0).then(|| solved as f64 / completed as f64),
        mean_steps: mean(&lens),
        per_condition: per_condition
            .into_iter()
            .map(|(name, rs)| {
                let (ok, solved, lens, _) = tally(&rs);
                (
                    name,
                    ConditionSummary {
                        sessions: rs.len(),
                        failed: rs.len() - ok,
                        solved,
                        solve_rate: (ok > 0).then(|| solved as f64 / ok as f64),
                        mean_steps: mean(&lens),
                    },
                )
            })
            .collect(),
    }
}

/// Run planned sessions on at most `parallelism` threads. Results come back
/// in plan order; a failing session is recorded and the rest continue.
pub fn run_batch(plan: &[PlannedSession], parallelism: usize) -> (Vec<BatchRun>, BatchSummary) {
    let run_one = |p: &PlannedSession| BatchRun {
        index: p.index,
        condition: p.condition.clone(),
        name: p.config.name.clone(),
        seed: p.config.seed,
        result: run_session(&p.config).map_err(|e| e.to_string()),
    };
    let runs: Vec<BatchRun> = match rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
    {
        Ok(pool) => pool.install(|| plan.par_iter().map(run_one).collect()),
        Err(e) => {
            tracing::warn!(error = %e, "thread pool unavailable, running sequentially");
            plan.iter().map(run_one).collect()
        }
    };
    let summary = summarize_batch(&runs);
    (runs, summary)
}

/// Check the structural invariants of a trajectory. Returns one message per
/// violation, empty when the trajectory is consistent.
pub fn validate_trajectory(traj: &Trajectory) -> Vec<String> {
    let mut out = Vec::new();
    let steps = &traj.steps;
    let eps = 1e-12;

    for (i, s) in steps.iter().enumerate() {
        if s.t != i as u32 + 1 {
            out.push(format!("step {}: expected t = {}", s.t, i + 1));
        }
        if !(0.0..=1.0).contains(&s.progress) || (s.progress - compute_progress(&s.raw_obs)).abs() > eps {
            out.push(format!("step {}: progress {} does not match the observation", s.t, s.progress));
        }
        if s.interrupt.is_some() == s.cognitive.is_some() {
            out.push(format!("step {}: exactly one of interrupt and cognitive must be set", s.t));
        }
        let expected = filter_observation(&s.raw_obs, s.metacog);
        if s.filtered_obs != expected {
            out.push(format!("step {}: filtered observation inconsistent with {}", s.t, s.metacog));
        }
        if s.metacog == MetacognitiveBehavior::Enacting
            && s.raw_obs.has_error()
            && s.filtered_obs.stderr != REDACTED
        {
            out.push(format!("step {}: enacting error not redacted", s.t));
        }
    }

    for w in steps.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.n < a.n || b.n > a.n + 1 {
            out.push(format!("step {}: segment index jumps from {} to {}", b.t, a.n, b.n));
        }
        if b.n == a.n && (b.metacog != a.metacog || b.segment_duration != a.segment_duration) {
            out.push(format!("step {}: metacog changes inside segment {}", b.t, b.n));
        }
        if b.knowledge_snapshot != a.knowledge_snapshot {
            let allowed = b.cognitive.is_some() && knowledge_update_allowed(b.metacog);
            if !allowed {
                out.push(format!("step {}: knowledge changed during {}", b.t, b.metacog));
            }
            for kc in &traj.config.blocked_kcs {
                if b.knowledge_snapshot.get(kc) != a.knowledge_snapshot.get(kc) {
                    out.push(format!("step {}: blocked KC {kc} changed", b.t));
                }
            }
        }
    }

    // Segment lengths: cognitive steps per segment equal the sampled
    // duration, except for the final segment cut short by termination.
    let mut counts: BTreeMap<u32, (u32, u32)> = BTreeMap::new();
    for s in steps {
        let e = counts.entry(s.n).or_insert((0, s.segment_duration));
        if s.cognitive.is_some() {
            e.0 += 1;
        }
    }
    let last_n = steps.last().map(|s| s.n);
    for (n, (count, duration)) in &counts {
        let ok = if Some(*n) == last_n { count <= duration } else { count == duration };
        if !ok {
            out.push(format!("segment {n}: {count} cognitive steps for duration {duration}"));
        }
    }

    for (i, s) in steps.iter().enumerate() {
        let prev_assist = i > 0 && steps[i - 1].interrupt == Some(InterruptKind::Assistance);
        if s.intervention.is_some() && !prev_assist {
            out.push(format!("step {}: intervention without a preceding assistance request", s.t));
        }
        if prev_assist {
            let hint = steps[i - 1].tutor.as_ref().and_then(|o| o.hint.clone());
            if s.interrupt.is_some() {
                out.push(format!("step {}: interrupt right after an assistance request", s.t));
            }
            if s.intervention != hint {
                out.push(format!("step {}: intervention does not carry the tutor hint", s.t));
            }
        }
    }

    let first = traj.first_solve();
    if traj.solved != first.is_some() || traj.solve_step != first {
        out.push(format!("solved flag {:?} disagrees with the observations ({first:?})", traj.solve_step));
    }
    if let Some(t) = first {
        if steps.last().map(|s| s.t) != Some(t) {
            out.push(format!("session continued after solving at step {t}"));
        }
    } else if traj.truncated.is_none() && steps.len() as u32 != traj.config.max_steps {
        out.push(format!(
            "unsolved session has {} steps, expected {}",
            steps.len(),
            traj.config.max_steps
        ));
    }
    out
}
