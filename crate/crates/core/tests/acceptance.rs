//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on failure.
//!
//! The desk benchmark (criteria 6 and 7) trains five models plus a plain
//! backbone on a 2000/250/500 synthetic split and dominates the runtime.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bsl::config::RunConfig;
use bsl::datasets::{write_benchmark, BenchmarkSpec, Degradation, InMemoryDataset, OnError, Split};
use bsl::evaluation::{ablation_grid, auc, evaluate, AblationData, AblationTable, DEFAULT_THRESHOLD, TABLE_ROWS};
use bsl::model::BslModel;
use bsl::rng::{stream, Purpose};
use bsl::shuffle::{shuffle_image, ShuffleConfig, ShuffleOutcome};
use bsl::training::{files, train_step, BatchSampler, Checkpoint, StepRecord, TrainState, Trainer};
use common::*;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, format!("took {took:.1?}, limit {limit:?}"))
}

fn permutation_suite() -> Check {
    let start = Instant::now();
    for case in 0..1000 {
        permutation_case(case)?;
    }
    within(start, Duration::from_secs(60))?;
    Ok("1000 cases over 64/128/224 inputs".into())
}

fn outcome_bits(o: &ShuffleOutcome) -> (Vec<u32>, Vec<u8>, Vec<u64>, Vec<Vec<u32>>, u64) {
    (
        o.image.data().iter().map(|v| v.to_bits()).collect(),
        o.mark.values.clone(),
        o.coords.m.iter().map(|v| v.to_bits()).collect(),
        o.intra_perms.iter().map(|p| p.perm.clone()).collect(),
        o.q.to_bits(),
    )
}

fn trace_bits(trace: &[StepRecord]) -> Vec<[u64; 4]> {
    trace
        .iter()
        .map(|r| [r.l_cls.to_bits(), r.l_adv.to_bits(), r.l_loc.to_bits(), r.l_total.to_bits()])
        .collect()
}

fn desk_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.input_side = 64;
    cfg.shuffle.s_intra = 8;
    cfg.shuffle.s_inter = 16;
    cfg.model.widths = vec![8, 16, 32, 64];
    cfg.batch_size = 32;
    cfg.max_steps = 3000;
    cfg.eval_every = 250;
    cfg.optimizer.lr = 1e-3;
    cfg
}

fn desk_model(cfg: &RunConfig) -> BslModel {
    let side = cfg.data.input_side;
    BslModel::from_config(&cfg.model, (side, side), &cfg.shuffle).expect("desk model")
}

struct Bench {
    _dir: tempfile::TempDir,
    train: InMemoryDataset,
    val: InMemoryDataset,
    test: InMemoryDataset,
}

fn load_bench() -> Bench {
    let dir = tempfile::tempdir().expect("temp dir");
    let manifest = write_benchmark(dir.path(), &BenchmarkSpec::default()).expect("benchmark");
    let load = |s| InMemoryDataset::load(&manifest, s, 64, OnError::Fail).expect("split");
    Bench {
        train: load(Split::Train),
        val: load(Split::Val),
        test: load(Split::Test),
        _dir: dir,
    }
}

fn determinism(bench: &Bench) -> Check {
    let start = Instant::now();
    let img = noise_image(224, 3, 9);
    let cfg = ShuffleConfig::default();
    for seed in 0..100 {
        let a = shuffle_image(&img, &cfg, &mut stream(seed, Purpose::Sample, 0, 0)).map_err(|e| e.to_string())?;
        let b = shuffle_image(&img, &cfg, &mut stream(seed, Purpose::Sample, 0, 0)).map_err(|e| e.to_string())?;
        ensure(outcome_bits(&a) == outcome_bits(&b) && a == b, format!("shuffle seed {seed} differs"))?;
    }
    let cfg = RunConfig {
        max_steps: 50,
        eval_every: 0,
        ..desk_config()
    };
    let model = desk_model(&cfg);
    let run = || {
        let t = Trainer::new(&model, &cfg, &bench.train);
        t.run(t.initial_state()).map_err(|e| e.to_string())
    };
    let (a, b) = (run()?, run()?);
    ensure(a.trace.len() == 50, "trace length")?;
    ensure(trace_bits(&a.trace) == trace_bits(&b.trace), "50-step loss traces differ")?;
    ensure(a.state == b.state, "final states differ")?;
    within(start, Duration::from_secs(300))?;
    Ok(format!(
        "100 shuffles and two 50-step runs bit-identical (l_total {:.4} -> {:.4})",
        a.trace[0].l_total, a.trace[49].l_total
    ))
}

fn gradient_suite() -> Check {
    let start = Instant::now();
    let mut checked = 0;
    let mut unequal = toy_config(None, None);
    unequal.weights.alpha = 0.3;
    unequal.weights.beta = 2.5;
    let cases = [
        (toy_config(None, None), 1),
        (toy_config(Some("stage2"), Some("stage1")), 2),
        (unequal, 3),
    ];
    for (cfg, seed) in &cases {
        let model = build_model(cfg);
        let params = random_params(&model, *seed);
        ensure(params.len() <= 1000, format!("toy network has {} parameters", params.len()))?;
        let batch = prepared_batch(cfg, &toy_dataset(4, 8, 1, *seed));
        for (g, name) in ["theta", "psi", "phi"].iter().enumerate() {
            let (worst, n) = finite_difference_check(&model, cfg, &params, &batch, g, 1e-4, 1e-8);
            ensure(worst <= 0.0, format!("{name} exceeds tolerance by {worst:e}"))?;
            checked += n;
        }
    }
    // A zero weight must leave that head's parameters untouched.
    let data = toy_dataset(4, 8, 1, 4);
    for (alpha, beta) in [(0.0, 1.0), (1.0, 0.0)] {
        let mut cfg = toy_config(None, None);
        cfg.weights.alpha = alpha;
        cfg.weights.beta = beta;
        cfg.batch_size = 2;
        cfg.optimizer.lr = 1e-2;
        let model = build_model(&cfg);
        let mut state = TrainState::new(random_params(&model, 4));
        let init = state.params.clone();
        let sampler = BatchSampler::new(cfg.seed, data.len(), cfg.batch_size);
        for _ in 0..10 {
            train_step(&model, &cfg, &mut state, &data, &sampler).map_err(|e| e.to_string())?;
        }
        ensure((state.params.psi == init.psi) == (alpha == 0.0), format!("psi routing at alpha {alpha}"))?;
        ensure((state.params.phi == init.phi) == (beta == 0.0), format!("phi routing at beta {beta}"))?;
        ensure(state.params.theta != init.theta, "backbone did not move")?;
    }
    within(start, Duration::from_secs(120))?;
    Ok(format!("{checked} partial derivatives within rtol 1e-4; zero weights freeze their heads"))
}

fn metric_oracle() -> Check {
    let start = Instant::now();
    for seed in 0..100u64 {
        let n = 2 + (seed as usize * 97) % 999;
        let (scores, labels) = random_scored_set(seed, n);
        let got = auc(&scores, &labels).map_err(|e| e.to_string())?;
        ensure(got == pairwise_auc(&scores, &labels), format!("seed {seed}: {got} vs oracle"))?;
        let mapped: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp() - 2.0).collect();
        ensure(auc(&mapped, &labels).map_err(|e| e.to_string())? == got, "monotone transform changed AUC")?;
    }
    within(start, Duration::from_secs(60))?;
    Ok("100 sets up to n=1000 match exactly".into())
}

fn shuffle_rate() -> Check {
    let start = Instant::now();
    let img = noise_image(224, 3, 1);
    let cfg = ShuffleConfig::default();
    let mut total = 0.0;
    for i in 0..10_000 {
        let mut rng = stream(cfg.seed, Purpose::Sample, 1, i);
        total += shuffle_image(&img, &cfg, &mut rng).map_err(|e| e.to_string())?.mark.mean();
    }
    let mean = total / 10_000.0;
    ensure((0.49..=0.51).contains(&mean), format!("mean(P) = {mean:.4}"))?;
    within(start, Duration::from_secs(60))?;
    Ok(format!("mean(P) = {mean:.4} over 10000 images"))
}

struct DeskResults {
    table: AblationTable,
    csv: String,
    plain_trace: Vec<StepRecord>,
    plain_theta: Vec<f64>,
    row1_theta: Vec<f64>,
}

fn run_desk(bench: &Bench) -> Result<DeskResults, String> {
    let base = desk_config();
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = AblationData {
        train: &bench.train,
        val: &bench.val,
        test: &bench.test,
    };
    let degradations = [Degradation::Blur(5), Degradation::Resize(24)];
    let table =
        ablation_grid(&base, &TABLE_ROWS, &data, &degradations, Some(out.path())).map_err(|e| e.to_string())?;
    let csv = std::fs::read_to_string(out.path().join("ablation.csv")).map_err(|e| e.to_string())?;
    let row1_theta = Checkpoint::load(&out.path().join("row1").join(files::LAST))
        .map_err(|e| e.to_string())?
        .state
        .params
        .theta;

    let plain_cfg = RunConfig {
        plain_backbone: true,
        ..base.clone()
    };
    let model = desk_model(&plain_cfg);
    let t = Trainer::new(&model, &plain_cfg, &bench.train).with_eval(&bench.val);
    let plain = t.run(t.initial_state()).map_err(|e| e.to_string())?;
    Ok(DeskResults {
        table,
        csv,
        plain_trace: plain.trace,
        plain_theta: plain.state.params.theta,
        row1_theta,
    })
}

fn desk_benchmark(desk: &Result<DeskResults, String>, started: Instant) -> Check {
    let desk = desk.as_ref().map_err(|e| format!("benchmark failed: {e}"))?;
    let auc_of = |id: usize, tag: &str| -> Result<f64, String> {
        desk.table
            .row(id)
            .and_then(|r| r.reports.iter().find(|m| m.tag == tag))
            .map(|m| m.auc)
            .ok_or(format!("row {id} has no {tag} report"))
    };
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    let (base_clean, bsl_clean) = (auc_of(1, "clean")?, auc_of(5, "clean")?);
    notes.push(format!("clean {bsl_clean:.4} vs {base_clean:.4}"));
    if bsl_clean < base_clean - 0.01 {
        failures.push("(a) clean AUC below baseline - 0.01".to_string());
    }
    for tag in ["blur:5", "resize:24"] {
        let (b, s) = (auc_of(1, tag)?, auc_of(5, tag)?);
        notes.push(format!("{tag} {s:.4} vs {b:.4}"));
        if s < b + 0.02 {
            failures.push(format!("(b) {tag} margin {:.4} < 0.02", s - b));
        }
    }
    let hist = desk.table.row(5).and_then(|r| r.restoration.as_ref()).ok_or("no restoration histogram")?;
    let near = hist.fraction_within(1);
    notes.push(format!("restoration <=1: {:.1}%", 100.0 * near));
    if near < 0.6 {
        failures.push(format!("(c) only {:.1}% of blocks within distance 1", 100.0 * near));
    }
    notes.push(format!("six models trained in {:.0?}", started.elapsed()));
    if started.elapsed() > Duration::from_secs(3 * 3600) {
        failures.push(format!("runtime {:.1?} over 3 h", started.elapsed()));
    }
    let steps = desk.table.results.iter().map(|r| r.trace.len()).max().unwrap_or(0);
    ensure(steps <= 3000, format!("{steps} steps exceed the budget"))?;
    if failures.is_empty() {
        Ok(notes.join("; "))
    } else {
        Err(format!("{} [{}]", failures.join("; "), notes.join("; ")))
    }
}

fn ablation_harness(desk: &Result<DeskResults, String>) -> Check {
    let desk = desk.as_ref().map_err(|e| format!("benchmark failed: {e}"))?;
    let ids: Vec<usize> = desk.table.results.iter().map(|r| r.row.id).collect();
    ensure(ids == [1, 2, 3, 4, 5], format!("rows {ids:?}"))?;
    let lines: Vec<&str> = desk.csv.lines().collect();
    ensure(lines.len() == 6, format!("csv has {} lines", lines.len()))?;
    let width = lines[0].split(',').count();
    for line in &lines[1..] {
        let cells: Vec<&str> = line.split(',').collect();
        ensure(cells.len() == width, format!("ragged csv line {line:?}"))?;
        for cell in &cells[6..cells.len() - 1] {
            let v: f64 = cell.parse().map_err(|_| format!("bad number {cell:?}"))?;
            ensure((0.0..=1.0).contains(&v), format!("metric {v} outside [0, 1]"))?;
        }
    }
    let row1 = &desk.table.row(1).ok_or("no row 1")?.trace;
    let same = row1.len() == desk.plain_trace.len()
        && row1.iter().zip(&desk.plain_trace).all(|(a, b)| {
            a.l_cls.to_bits() == b.l_cls.to_bits() && a.l_total.to_bits() == b.l_total.to_bits()
        });
    ensure(same, "row 1 trace differs from the plain backbone")?;
    ensure(desk.row1_theta == desk.plain_theta, "row 1 weights differ from the plain backbone")?;
    Ok(format!("5 rows, {width} columns; row 1 equals plain backbone over {} steps", row1.len()))
}

fn resume_equivalence(bench: &Bench) -> Check {
    let full = RunConfig {
        max_steps: 60,
        eval_every: 20,
        ..desk_config()
    };
    let model = desk_model(&full);
    let t = Trainer::new(&model, &full, &bench.train).with_eval(&bench.val);
    let unbroken = t.run(t.initial_state()).map_err(|e| e.to_string())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let part = RunConfig {
        max_steps: 25,
        ..full.clone()
    };
    let t = Trainer::new(&model, &part, &bench.train).with_eval(&bench.val).with_output(dir.path());
    t.run(t.initial_state()).map_err(|e| e.to_string())?;
    let ck = Checkpoint::load(&dir.path().join(files::LAST)).map_err(|e| e.to_string())?;
    let resumed = Trainer::new(&model, &full, &bench.train)
        .with_eval(&bench.val)
        .run(ck.state)
        .map_err(|e| e.to_string())?;

    ensure(trace_bits(&resumed.trace) == trace_bits(&unbroken.trace[25..]), "losses after resume differ")?;
    ensure(resumed.state == unbroken.state, "final state differs")?;
    let a = evaluate(&model, &unbroken.state.params, &bench.test, "clean", DEFAULT_THRESHOLD).map_err(|e| e.to_string())?;
    let b = evaluate(&model, &resumed.state.params, &bench.test, "clean", DEFAULT_THRESHOLD).map_err(|e| e.to_string())?;
    ensure(a == b, "final metrics differ")?;
    let last_eval = |evals: &[bsl::training::EvalRecord]| evals.last().map(|e| e.report.clone());
    ensure(last_eval(&resumed.evals) == last_eval(&unbroken.evals), "final evaluation records differ")?;
    Ok(format!("interrupted at 25 of 60; test AUC {:.4} identical", a.auc))
}

struct Line {
    id: &'static str,
    name: &'static str,
    result: Check,
    took: Duration,
}

fn guarded(f: impl FnOnce() -> Check) -> Check {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(format!(
            "panicked: {}",
            p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default()
        )),
    }
}

fn main() -> ExitCode {
    let mut lines = Vec::new();
    let mut record = |id, name, f: &mut dyn FnMut() -> Check| {
        let start = Instant::now();
        let result = guarded(f);
        let line = Line {
            id,
            name,
            result,
            took: start.elapsed(),
        };
        print_line(&line);
        lines.push(line);
    };

    record("1", "permutation suite", &mut permutation_suite);
    let bench = catch_unwind(load_bench).map_err(|_| "could not build the synthetic benchmark".to_string());
    let with_bench = |f: fn(&Bench) -> Check| {
        let bench = &bench;
        move || bench.as_ref().map_err(Clone::clone).and_then(f)
    };
    record("2", "determinism", &mut with_bench(determinism));
    record("3", "gradient suite", &mut gradient_suite);
    record("4", "metric oracle", &mut metric_oracle);
    record("5", "shuffle-rate statistics", &mut shuffle_rate);

    let started = Instant::now();
    let desk = match &bench {
        Ok(b) => catch_unwind(AssertUnwindSafe(|| run_desk(b))).unwrap_or_else(|_| Err("panicked".into())),
        Err(e) => Err(e.clone()),
    };
    if let Ok(d) = &desk {
        print!("{}", d.table.to_text());
    }
    record("6", "desk benchmark", &mut || desk_benchmark(&desk, started));
    record("7", "ablation harness", &mut || ablation_harness(&desk));
    record("8", "checkpoint resume", &mut with_bench(resume_equivalence));

    let failed = lines.iter().filter(|l| l.result.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn print_line(l: &Line) {
    match &l.result {
        Ok(detail) => println!("PASS {} {}: {} ({:.1?})", l.id, l.name, detail, l.took),
        Err(detail) => println!("FAIL {} {}: {} ({:.1?})", l.id, l.name, detail, l.took),
    }
}
