use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn studentsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_studentsim"))
        .args(args)
        .current_dir(root())
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_manifest(dir: &Path, reps: u32) -> PathBuf {
    let fixtures = root().join("fixtures");
    let text = format!(
        "root_seed = 11\nrepetitions = {reps}\nmax_steps = 8\n\n\
         [[condition]]\nname = \"low\"\nsession = \"{}\"\n\n\
         [[condition]]\nname = \"high\"\nsession = \"{}\"\n",
        fixtures.join("low.session").display(),
        fixtures.join("high.session").display()
    );
    let path = dir.join("manifest.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = studentsim(&["run", "--config", "fixtures/low.session", "--backend", "mock", "--seed", "7", "--max-steps", "6", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(dir.path().join("low.jsonl")).unwrap();
    assert!(trace.starts_with("{\"record\":\"header\""));
    assert_eq!(trace.lines().count(), 7);
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(studentsim(&["bogus"]).status.code(), Some(2));
    assert_eq!(studentsim(&["run"]).status.code(), Some(2));
    let o = studentsim(&["run", "--config", "fixtures/missing.session"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.session"));
    let o = studentsim(&["breakdown", "--trace", "fixtures/low.session"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(studentsim(&["--help"]).status.code(), Some(0));
}

#[test]
fn unreachable_backend_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let session = dir.path().join("http.session");
    std::fs::write(
        &session,
        format!(
            "problem = \"{}\"\nbehavior_profile = \"low\"\nbackend = \"http\"\n\n\
             [http]\nbase_url = \"http://127.0.0.1:9/v1\"\nmodel = \"m\"\nmax_retries = 0\ntimeout_secs = 2.0\n",
            root().join("problems/particle.toml").display()
        ),
    )
    .unwrap();
    let o = studentsim(&["run", "--config", s(&session), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    // The partial trace is still written.
    assert!(dir.path().join("http.jsonl").exists());
}

#[test]
fn sdt_reproduces_published_indices() {
    let o = studentsim(&["sdt", "--hits", "265", "--misses", "161", "--fa", "241", "--cr", "185"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("d'           0.1454"), "{out}");
    assert!(out.contains("criterion c  -0.2382"), "{out}");
    assert!(out.contains("p_tost 0.0375"), "{out}");
    assert_eq!(studentsim(&["sdt", "--hits", "0", "--misses", "0", "--fa", "1", "--cr", "1"]).status.code(), Some(2));
}

#[test]
fn batch_then_eval_breakdown_and_judge() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_manifest(dir.path(), 2);
    let out = dir.path().join("traces");
    let o = studentsim(&["batch", "--config", s(&manifest), "--out", s(&out), "--parallel", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["summary"]["sessions"], 4);

    let report_path = dir.path().join("report.json");
    let o = studentsim(&["eval", "--traces", s(&out), "--reference", "reference/combined_test.dist", "--out", s(&report_path)]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for col in ["solve", "d_kl", "d_kl_tr", "d_debug", "nonlin", "p_recur", "lag", "high", "low", "overall"] {
        assert!(text.contains(col), "missing {col} in\n{text}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(report["overall"]["d_kl"].is_number());
    assert_eq!(report["overall"]["runs"], 4);

    let trace = out.join("low-000.jsonl");
    let snaps_path = dir.path().join("snaps.json");
    let o = studentsim(&["breakdown", "--trace", s(&trace), "--level", "0.5", "--words", "--out", s(&snaps_path)]);
    assert_eq!(o.status.code(), Some(0));
    let snaps: Vec<String> = serde_json::from_str(&std::fs::read_to_string(&snaps_path).unwrap()).unwrap();
    assert!(!snaps.is_empty());

    let o = studentsim(&["judge-prompt", "--trace", s(&trace)]);
    assert_eq!(o.status.code(), Some(0));
    let prompt = stdout(&o);
    assert!(prompt.contains("## Student Trace") && prompt.contains("### Step 1"));
    assert!(!prompt.contains("{{"), "unfilled placeholder in prompt");

    let reply = dir.path().join("reply.txt");
    std::fs::write(&reply, "{\"justification\": \"ok\", \"realism_score\": 2, \"code_quality_realism\": 1, \"debugging_pattern_realism\": 3, \"language_realism\": 2}").unwrap();
    let o = studentsim(&["judge-prompt", "--reply", s(&reply)]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["debugging_pattern_realism"], 3);
}

#[test]
fn fit_reads_an_event_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.csv");
    let mut rows = String::from("session,t,action,metacog\n");
    // Enacting segments of 1, 2 and 3 episodes separated by Monitoring ones.
    let mut t = 0;
    for n in 1..=3 {
        for _ in 0..n {
            rows.push_str(&format!("a,{t},Constructing,Enacting\n"));
            t += 100;
        }
        rows.push_str(&format!("a,{t},Debugging,Monitoring\n"));
        t += 100;
    }
    std::fs::write(&log, rows).unwrap();
    let json = dir.path().join("fit.json");
    let o = studentsim(&["fit", "--events", s(&log), "--out", s(&json)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    // Lengths 1, 2, 3: mean 2, unbiased variance 1, so shape 4 and scale 0.5.
    let g = &fit["durations"]["enacting"];
    assert!((g["shape"].as_f64().unwrap() - 4.0).abs() < 1e-12);
    assert!((g["scale"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!(stdout(&o).contains("Enacting"));
}

#[test]
fn shipped_behavior_files_match_the_builtin_specs() {
    let dir = tempfile::tempdir().unwrap();
    let o = studentsim(&["defaults", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0));
    for name in ["high.toml", "low.toml"] {
        let fresh = std::fs::read_to_string(dir.path().join(name)).unwrap();
        let shipped = std::fs::read_to_string(root().join("configs/behavior").join(name)).unwrap();
        assert!(fresh == shipped, "configs/behavior/{name} is stale; run `studentsim defaults`");
    }
}

#[test]
fn shipped_behavior_file_drives_a_session() {
    let dir = tempfile::tempdir().unwrap();
    let session = dir.path().join("custom.session");
    std::fs::write(
        &session,
        format!(
            "problem = \"{}\"\nbehavior_profile = \"high\"\nbehavior_spec = \"{}\"\nmock_script = \"{}\"\nmax_steps = 4\n",
            root().join("problems/particle.toml").display(),
            root().join("configs/behavior/high.toml").display(),
            root().join("fixtures/mock/particle_high.script").display()
        ),
    )
    .unwrap();
    let o = studentsim(&["run", "--config", s(&session), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}
