use std::path::PathBuf;
use std::sync::Arc;

use studentsim_core::agent::{Script, ScriptedBackend, CANNED_OFF_TOPIC};
use studentsim_core::behavior::{
    CognitiveBehavior, GammaParams, InterruptGaussian, InterruptKind, MetacognitiveBehavior,
    PrevCognitive,
};
use studentsim_core::config::{BackendSpec, Overrides, RunManifest, SessionConfig};
use studentsim_core::environment::{ProblemConfig, REDACTED};
use studentsim_core::session::{run_batch, run_session, run_session_with, validate_trajectory};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn load(name: &str, max_steps: u32) -> SessionConfig {
    let ov = Overrides {
        max_steps: Some(max_steps),
        ..Overrides::default()
    };
    SessionConfig::load(&fixture(name), &ov).unwrap()
}

fn no_interrupts(cfg: &mut SessionConfig) {
    let spec = Arc::make_mut(&mut cfg.behavior_spec);
    for g in spec.interrupts.values_mut() {
        g.r_peak = 0.0;
    }
}

/// Pin the session to one long Monitoring segment whose cognitive chain is
/// Constructing, Assessing, Debugging, Debugging, ...
fn scripted_chain(cfg: &mut SessionConfig) {
    no_interrupts(cfg);
    let spec = Arc::make_mut(&mut cfg.behavior_spec);
    spec.set_initial([0.0, 0.0, 1.0, 0.0]);
    spec.durations
        .insert(MetacognitiveBehavior::Monitoring, GammaParams::new(400.0, 0.1));
    use PrevCognitive as P;
    let m = MetacognitiveBehavior::Monitoring;
    spec.set_cognitive_row(m, P::Start, [1.0, 0.0, 0.0]);
    spec.set_cognitive_row(m, P::Constructing, [0.0, 0.0, 1.0]);
    spec.set_cognitive_row(m, P::Assessing, [0.0, 1.0, 0.0]);
    spec.set_cognitive_row(m, P::Debugging, [0.0, 1.0, 0.0]);
}

fn mock(text: &str) -> BackendSpec {
    BackendSpec::Mock(Arc::new(Script::parse(text).unwrap()))
}

fn fenced(monologue: &str, code: &str) -> String {
    format!("MONOLOGUE: {monologue}\n```python\n{code}\n```")
}

#[test]
fn mock_session_runs_exactly_max_steps() {
    let cfg = load("low.session", 5);
    let traj = run_session(&cfg).unwrap();
    assert_eq!(traj.steps.len(), 5);
    assert!(!traj.solved);
    assert!(traj.truncated.is_none());
    assert_eq!(
        traj.steps.iter().map(|s| s.t).collect::<Vec<_>>(),
        [1, 2, 3, 4, 5]
    );
    assert!(validate_trajectory(&traj).is_empty(), "{:?}", validate_trajectory(&traj));
}

#[test]
fn solving_debug_step_ends_the_session() {
    let mut cfg = load("low.session", 30);
    scripted_chain(&mut cfg);
    let solution = cfg.problem.reference_solution.clone();
    cfg.backend = mock(&format!(
        "=== strategist\nGOAL: g\nMINDSET: m\nDIRECTIVE: d\n\n=== executor.constructing\n{}\n\n=== executor.assessing\nMONOLOGUE: hmm, not right yet\n\n=== executor.debugging\n{}\n",
        fenced("start", "class Particle:\n    pass"),
        fenced("fixed it", &solution),
    ));
    let traj = run_session(&cfg).unwrap();
    let chain: Vec<_> = traj.steps.iter().map(|s| s.cognitive).collect();
    assert_eq!(
        chain,
        [
            Some(CognitiveBehavior::Constructing),
            Some(CognitiveBehavior::Assessing),
            Some(CognitiveBehavior::Debugging)
        ]
    );
    assert!(traj.solved);
    assert_eq!(traj.solve_step, Some(3));
    assert_eq!(traj.steps.len(), 3);
    assert_eq!(traj.steps[2].progress, 1.0);
    // The assessing step executed the stub, which fails.
    assert!(traj.steps[1].raw_obs.executed);
    assert!(traj.steps[1].progress < 1.0);
    assert!(validate_trajectory(&traj).is_empty(), "{:?}", validate_trajectory(&traj));
}

#[test]
fn tutor_hint_arrives_on_the_next_step() {
    let mut cfg = load("low.session", 6);
    {
        let spec = Arc::make_mut(&mut cfg.behavior_spec);
        spec.interrupts.insert(
            InterruptKind::Assistance,
            InterruptGaussian { mu: 0.5, sigma: 1e6, r_peak: 1.0 },
        );
        spec.interrupts.insert(
            InterruptKind::OffTopic,
            InterruptGaussian { mu: 0.5, sigma: 0.1, r_peak: 0.0 },
        );
    }
    let traj = run_session(&cfg).unwrap();
    assert_eq!(traj.steps.len(), 6);
    for pair in traj.steps.chunks(2) {
        let (asked, helped) = (&pair[0], &pair[1]);
        assert_eq!(asked.interrupt, Some(InterruptKind::Assistance));
        assert!(asked.cognitive.is_none());
        let outcome = asked.tutor.as_ref().expect("tutor outcome recorded");
        assert!(outcome.target_kc.is_some(), "zpd tutor targets a KC");
        assert!(helped.interrupt.is_none(), "help step is never interrupted");
        assert!(helped.cognitive.is_some());
        assert_eq!(helped.intervention, outcome.hint);
        assert!(helped.intervention.is_some());
    }
    assert!(validate_trajectory(&traj).is_empty(), "{:?}", validate_trajectory(&traj));
}

#[test]
fn off_topic_steps_use_canned_remarks_under_mock() {
    let mut cfg = load("high.session", 4);
    let spec = Arc::make_mut(&mut cfg.behavior_spec);
    spec.interrupts.insert(
        InterruptKind::OffTopic,
        InterruptGaussian { mu: 0.5, sigma: 1e6, r_peak: 1.0 },
    );
    let traj = run_session(&cfg).unwrap();
    for s in &traj.steps {
        assert_eq!(s.interrupt, Some(InterruptKind::OffTopic));
        assert_eq!(s.action.utterance, CANNED_OFF_TOPIC[s.t as usize % CANNED_OFF_TOPIC.len()]);
        assert!(!s.raw_obs.executed);
    }
}

#[test]
fn same_seed_gives_identical_trajectories() {
    let cfg = load("high.session", 15);
    let a = serde_json::to_string(&run_session(&cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&run_session(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn batch_is_deterministic_across_parallelism() {
    let (mut manifest, base) = RunManifest::load(&fixture("batch.toml")).unwrap();
    manifest.repetitions = 3;
    let ov = Overrides {
        max_steps: Some(12),
        ..Overrides::default()
    };
    let plan = manifest.plan(&base, &ov).unwrap();
    assert_eq!(plan.len(), 6);
    let dump = |par| {
        let (runs, _) = run_batch(&plan, par);
        runs.iter()
            .map(|r| serde_json::to_string(r.result.as_ref().unwrap()).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(dump(1), dump(4));
}

#[test]
fn fifty_repetitions_are_distinct_and_recounted() {
    let (mut manifest, base) = RunManifest::load(&fixture("batch.toml")).unwrap();
    manifest.conditions.truncate(1);
    assert_eq!(manifest.repetitions, 50);
    let ov = Overrides {
        max_steps: Some(10),
        ..Overrides::default()
    };
    let plan = manifest.plan(&base, &ov).unwrap();
    assert_eq!(plan.len(), 50);
    let (runs, summary) = run_batch(&plan, 8);
    let trajs: Vec<_> = runs.iter().map(|r| r.result.as_ref().unwrap()).collect();
    let distinct: std::collections::BTreeSet<String> = trajs
        .iter()
        .map(|t| {
            let steps: Vec<_> = t.steps.iter().map(|s| (s.metacog, s.cognitive, s.interrupt)).collect();
            format!("{steps:?}")
        })
        .collect();
    assert!(distinct.len() >= 45, "only {} distinct behavior sequences", distinct.len());
    assert_eq!(summary.sessions, 50);
    assert_eq!(summary.completed, 50);
    assert_eq!(summary.solved, trajs.iter().filter(|t| t.solved).count());
    let mean = trajs.iter().map(|t| t.steps.len() as f64).sum::<f64>() / 50.0;
    assert!((summary.mean_steps.unwrap() - mean).abs() < 1e-12);
    for t in trajs {
        assert!(validate_trajectory(t).is_empty(), "{:?}", validate_trajectory(t));
    }
}

#[test]
fn one_failing_session_does_not_stop_the_batch() {
    let (mut manifest, base) = RunManifest::load(&fixture("batch.toml")).unwrap();
    manifest.repetitions = 3;
    manifest.conditions.truncate(1);
    let ov = Overrides {
        max_steps: Some(8),
        ..Overrides::default()
    };
    let mut plan = manifest.plan(&base, &ov).unwrap();
    let mut broken: ProblemConfig = (*plan[1].config.problem).clone();
    broken.interpreter_command = vec!["/nonexistent/interpreter-xyz".into(), "{source}".into()];
    let broken = Arc::new(broken);
    plan[1].config.runner = studentsim_core::environment::CachedRunner::new(broken.clone());
    plan[1].config.problem = broken;
    // Force an execution on the broken session.
    scripted_chain(&mut plan[1].config);
    let (runs, summary) = run_batch(&plan, 3);
    assert!(runs[0].result.is_ok());
    assert!(runs[1].result.is_err());
    assert!(runs[2].result.is_ok());
    assert_eq!(summary.failed, 1);
    assert_eq!(summary.completed, 2);
}

#[test]
fn exhausted_backend_truncates_the_session() {
    let mut cfg = load("low.session", 10);
    scripted_chain(&mut cfg);
    cfg.backend = mock(&format!(
        "=== strategist\nGOAL: g\nMINDSET: m\nDIRECTIVE: d\n\n=== executor.constructing\n{}\n",
        fenced("start", "class Particle:\n    pass"),
    ));
    let traj = run_session(&cfg).unwrap();
    assert_eq!(traj.steps.len(), 1);
    let msg = traj.truncated.as_deref().expect("truncated");
    assert!(msg.contains("executor.assessing"), "{msg}");
    assert!(!traj.solved);
    assert!(validate_trajectory(&traj).is_empty());
}

#[test]
fn unparseable_replies_are_retried_once() {
    let mut cfg = load("low.session", 1);
    scripted_chain(&mut cfg);
    let script = Script::parse(&format!(
        "=== strategist\nI'm not sure what to do.\n\n=== strategist\nGOAL: g\nMINDSET: m\nDIRECTIVE: d\n\n=== executor.constructing\njust words\n\n=== executor.constructing\n{}\n",
        fenced("ok", "x = 1"),
    ))
    .unwrap();
    let mut backend = ScriptedBackend::new(Arc::new(script));
    let traj = run_session_with(&cfg, &mut backend).unwrap();
    assert!(traj.truncated.is_none());
    assert_eq!(traj.steps[0].action.code, "x = 1");
    let reqs = backend.requests();
    assert_eq!(reqs.len(), 4);
    assert_eq!(reqs[1].messages.len(), 4, "retry carries the reply and a reminder");
}

#[test]
fn enacting_prompts_never_show_error_details() {
    let mut cfg = load("low.session", 30);
    no_interrupts(&mut cfg);
    {
        let spec = Arc::make_mut(&mut cfg.behavior_spec);
        spec.set_initial([0.0, 1.0, 0.0, 0.0]);
        spec.durations
            .insert(MetacognitiveBehavior::Enacting, GammaParams::new(400.0, 0.1));
        // Constructing first, then debugging forever.
        use PrevCognitive as P;
        let m = MetacognitiveBehavior::Enacting;
        spec.set_cognitive_row(m, P::Start, [1.0, 0.0, 0.0]);
        spec.set_cognitive_row(m, P::Constructing, [0.0, 1.0, 0.0]);
        spec.set_cognitive_row(m, P::Debugging, [0.0, 1.0, 0.0]);
    }
    let mut backend = cfg.backend.instantiate();
    let traj = run_session_with(&cfg, backend.as_mut()).unwrap();
    assert!(traj.steps.iter().all(|s| s.metacog == MetacognitiveBehavior::Enacting));
    let errored: Vec<_> = traj.steps.iter().filter(|s| s.raw_obs.has_error()).collect();
    assert!(!errored.is_empty(), "fixture should produce failing runs");
    for s in &errored {
        assert_eq!(s.filtered_obs.stderr, REDACTED);
        assert!(s.filtered_obs.error_types.is_empty());
        assert!(!s.raw_obs.stderr.is_empty());
    }

    // Rerun with a recording backend to inspect the prompts.
    let script = match &cfg.backend {
        BackendSpec::Mock(s) => s.clone(),
        BackendSpec::Http(_) => unreachable!("fixture uses the mock"),
    };
    let mut rec = ScriptedBackend::new(script);
    run_session_with(&cfg, &mut rec).unwrap();
    let mut saw_redaction = false;
    for req in rec.requests() {
        for msg in &req.messages {
            assert!(!msg.content.contains("Traceback"), "raw error leaked at step {}", req.step);
            saw_redaction |= msg.content.contains(REDACTED);
        }
    }
    assert!(saw_redaction);
}

#[test]
fn agent_prompts_never_expose_process_parameters() {
    let cfg = load("low.session", 30);
    let script = match &cfg.backend {
        BackendSpec::Mock(s) => s.clone(),
        BackendSpec::Http(_) => unreachable!(),
    };
    let mut rec = ScriptedBackend::new(script);
    run_session_with(&cfg, &mut rec).unwrap();
    let keys = [
        "metacog_transitions",
        "cognitive_transitions",
        "initial_metacog",
        "r_peak",
        "p_transit",
        "p_slip",
        "p_guess",
        "p_init",
    ];
    for req in rec.requests().iter().filter(|r| r.stage != "tutor") {
        for msg in &req.messages {
            let lower = msg.content.to_lowercase();
            for k in keys {
                assert!(!lower.contains(k), "`{k}` visible to stage {} at step {}", req.stage, req.step);
            }
        }
    }
}
