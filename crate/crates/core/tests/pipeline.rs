use std::collections::BTreeMap;
use std::path::Path;

use covr_core::curation::returns_to_go;
use covr_core::harness::{apply_variant, run_experiment, Command, ExperimentConfig, Outcome};
use covr_core::pipeline::{
    drive, read_jsonl, run_training, DriveOptions, MetricsRecord, ScheduleTrace, StubBackend, Trainer,
    METRICS_FORMAT, METRICS_VERSION,
};

fn tiny() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.sac.batch_size = 32;
    c.sac.hidden_dim = 32;
    c.sac.latent_dim = 16;
    c.sac.warmup_steps = 200;
    c.teacher.hidden_dim = 32;
    c.teacher.pretrain_samples = 200;
    c.teacher.pretrain_epochs = 1;
    c.teacher.batch_size = 32;
    c.cold_start.delay = 1;
    c.schedule.psi0 = 300;
    c.run.steps = 1200;
    c.run.log_every = 100;
    c.run.eval_every = 600;
    c.run.eval_episodes = 2;
    c.run.final_eval_episodes = 2;
    c.run.teacher_eval_episodes = 2;
    c
}

fn metrics_bytes(dir: &Path) -> Vec<u8> {
    std::fs::read(dir.join("metrics.jsonl")).unwrap()
}

#[test]
fn stub_schedule_over_100k_steps() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.jsonl");
    let mut b = StubBackend::new(200, 1000);
    b.quiet = true;
    let opts = DriveOptions {
        steps: 100_000,
        psi0: 5000,
        fine_tune: true,
    };
    let mut trace = ScheduleTrace::to_file(&path).unwrap();
    let s = drive(&mut b, &opts, &mut trace).unwrap();
    drop(trace);
    let events = ScheduleTrace::read(&path).unwrap();
    let steps: Vec<usize> = events.iter().map(|e| e.step).collect();
    assert_eq!(steps, [5000, 15000, 45000]);
    assert!(events.iter().all(|e| e.completed));
    assert_eq!(s.c, 3);
    assert_eq!(b.rounds, [5000, 15000, 45000]);
}

#[test]
fn call_order_on_100_step_smoke_run() {
    let mut b = StubBackend::new(30, 10);
    let opts = DriveOptions {
        steps: 100,
        psi0: 40,
        fine_tune: true,
    };
    drive(&mut b, &opts, &mut ScheduleTrace::memory()).unwrap();
    // every step starts with inference and ends with "end"; acting precedes storing
    let mut step = Vec::new();
    for c in &b.calls {
        step.push(*c);
        if *c == "end" {
            let body: Vec<&str> = step.iter().copied().filter(|c| *c != "reset").collect();
            assert_eq!(&body[..3], ["infer", "act", "store"]);
            if let Some(i) = body.iter().position(|c| *c == "fine_tune") {
                assert_eq!(&body[i..], ["fine_tune", "clear", "advance", "end"]);
            }
            step.clear();
        }
    }
    assert_eq!(b.calls.iter().filter(|c| **c == "end").count(), 100);
    assert_eq!(b.rounds, [40]);
}

#[test]
fn no_guidance_and_no_fine_tune_equals_plain_sac() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny();
    let sac = apply_variant(&base, "sac").unwrap();
    let mut degenerate = base.clone();
    degenerate.schedule.fine_tune = false;
    degenerate.cold_start.delay = 1_000_000;
    assert!(degenerate.needs_teacher());
    run_training(&sac, 3, &dir.path().join("a")).unwrap();
    run_training(&degenerate, 3, &dir.path().join("b")).unwrap();
    assert_eq!(metrics_bytes(&dir.path().join("a")), metrics_bytes(&dir.path().join("b")));
}

#[test]
fn identical_seeds_give_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    run_training(&cfg, 5, &dir.path().join("a")).unwrap();
    run_training(&cfg, 5, &dir.path().join("b")).unwrap();
    assert_eq!(metrics_bytes(&dir.path().join("a")), metrics_bytes(&dir.path().join("b")));
    run_training(&cfg, 6, &dir.path().join("c")).unwrap();
    assert_ne!(metrics_bytes(&dir.path().join("a")), metrics_bytes(&dir.path().join("c")));
}

#[test]
fn run_directory_contents() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let summary = run_training(&tiny(), 1, &out).unwrap();
    for f in [
        "config.toml",
        "metrics.jsonl",
        "timing.jsonl",
        "summary.json",
        "schedule_trace.jsonl",
        "checkpoints/agent_final.ckpt",
        "checkpoints/teacher_final.ckpt",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let resolved = ExperimentConfig::load(&out.join("config.toml")).unwrap();
    assert_eq!(resolved, tiny());

    let events = ScheduleTrace::read(&out.join("schedule_trace.jsonl")).unwrap();
    assert!(!events.is_empty());
    for e in events.iter().filter(|e| e.completed) {
        assert!(e.info.tau.is_some() && e.info.kept_fraction.is_some() && e.loss_delta.is_some());
        assert!(out.join(format!("checkpoints/agent_round{}.ckpt", e.round + 1)).is_file());
    }
    assert_eq!(summary.rounds, events.iter().filter(|e| e.completed).count());

    let metrics: Vec<MetricsRecord> = read_jsonl(&out.join("metrics.jsonl"), METRICS_FORMAT, METRICS_VERSION).unwrap();
    assert!(metrics.windows(2).all(|w| w[0].step <= w[1].step));
    assert!(metrics.last().unwrap().is_final);
    assert_eq!(metrics.iter().filter(|m| m.is_final).count(), 1);
}

#[test]
fn guidance_waits_for_the_delay() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.cold_start.delay = 2;
    run_training(&cfg, 2, dir.path()).unwrap();
    let metrics: Vec<MetricsRecord> =
        read_jsonl(&dir.path().join("metrics.jsonl"), METRICS_FORMAT, METRICS_VERSION).unwrap();
    for m in &metrics {
        if m.guidance_lambda.is_some() {
            assert!(m.rounds >= 2, "guidance active after {} rounds", m.rounds);
        }
    }
    assert!(metrics.iter().any(|m| m.rounds < 2));
}

#[test]
fn fine_tune_buffer_carries_episode_returns() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.schedule.psi0 = 1_000_000;
    cfg.run.steps = 900;
    let mut trainer = Trainer::new(&cfg, 4, dir.path()).unwrap();
    let opts = DriveOptions {
        steps: cfg.run.steps,
        psi0: cfg.schedule.psi0,
        fine_tune: true,
    };
    drive(&mut trainer, &opts, &mut ScheduleTrace::memory()).unwrap();
    let mut episodes: BTreeMap<u64, Vec<(usize, f64, f64)>> = BTreeMap::new();
    for s in &trainer.df.samples {
        episodes.entry(s.episode).or_default().push((s.step, s.reward, s.g));
    }
    assert!(episodes.len() > 1);
    for rows in episodes.values() {
        let steps: Vec<usize> = rows.iter().map(|r| r.0).collect();
        assert_eq!(steps, (0..rows.len()).collect::<Vec<_>>(), "each episode flushed exactly once");
        let rewards: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let g = returns_to_go(&rewards, cfg.sac.gamma);
        for (r, want) in rows.iter().zip(&g) {
            assert!((r.2 - want).abs() <= 1e-12);
        }
    }
}

#[test]
fn standalone_curation_matches_the_loop() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mut cfg = tiny();
    cfg.run.export_df = true;
    run_training(&cfg, 8, &run).unwrap();
    let events = ScheduleTrace::read(&run.join("schedule_trace.jsonl")).unwrap();
    let first = events.iter().find(|e| e.completed).expect("a completed round");
    let out = dir.path().join("curated");
    let cmd = Command::Curate {
        input: run.join(format!("df_round{}.jsonl", first.round)),
        entropy_hat: first.info.entropy_hat.unwrap(),
    };
    let Outcome::Curated(report) = run_experiment(&cfg, &cmd, &out).unwrap() else {
        panic!("curate returns a selection report");
    };
    assert_eq!(Some(report.tau), first.info.tau);
    assert_eq!(report.selected.len(), first.info.selected);
    assert_eq!(Some(report.kept_fraction), first.info.kept_fraction);
}
