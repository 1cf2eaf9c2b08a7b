//! End-to-end acceptance harness. Prints one line per criterion and exits
//! non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bilevel_core::controller::{update_temperature, TemperatureState};
use bilevel_core::domain::TaskKind;
use bilevel_core::editor::trace::{restored_probability, subject_noise};
use bilevel_core::editor::{
    apply_edit, causal_trace, edit_objective, init_model, recall, select_edit_layer, solve_edit, synthetic_corpus,
    train_facts, value_objective, EditConfig, EditRequest, Hooks, KeyValuePair, Matrix, ModelConfig, SyntheticCorpus,
    ToyTransformer, TrainBudget,
};
use bilevel_core::orchestrator::{run_seed, sweep, write_outputs, RunConfig, TaskSpec};
use bilevel_core::proposer::{ContextPolicy, ProposerConfig, ProposerKind};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Trained {
    corpus: SyntheticCorpus,
    model: ToyTransformer,
    recall: f64,
    layer: usize,
}

fn trained() -> &'static Trained {
    static CELL: std::sync::OnceLock<Trained> = std::sync::OnceLock::new();
    CELL.get_or_init(|| {
        let corpus = synthetic_corpus(200, 4, 16, 7);
        let cfg = ModelConfig {
            vocab_size: corpus.vocab.len(),
            ..ModelConfig::default()
        };
        let mut model = init_model(cfg, 1).unwrap();
        let report = train_facts(&mut model, &corpus.facts, &TrainBudget::default()).unwrap();
        let sigma = 3.0 * model.embedding_std();
        let layer = select_edit_layer(&model, &corpus.facts[..100], sigma, 1, 3)
            .unwrap()
            .layer;
        Trained {
            corpus,
            model,
            recall: report.recall,
            layer,
        }
    })
}

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(rel)
}

fn temperature_schedule() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let t: f64 = rng.random();
        let prev: f64 = rng.random::<f64>() * 10.0 + 1e-6;
        let cur: f64 = if rng.random::<f64>() < 0.05 {
            prev
        } else {
            rng.random::<f64>() * 10.0
        };
        let got = update_temperature(
            TemperatureState {
                temperature: t,
                prev_objective: Some(prev),
            },
            cur,
        )
        .unwrap()
        .temperature;
        let dl = (prev - cur) / prev;
        let want = (if dl > 0.0 {
            t * (1.0 / (1.0 + dl))
        } else if dl < 0.0 {
            t * (1.0 + dl.abs())
        } else {
            t
        })
        .clamp(0.0, 1.0);
        if got.to_bits() != want.to_bits() {
            mismatches += 1;
        }
    }
    let el = start.elapsed();
    outcome(
        mismatches == 0 && el < Duration::from_secs(1),
        format!("10000 cases, {mismatches} mismatches, {el:.2?}"),
    )
}

fn least_squares() -> Outcome {
    let start = Instant::now();
    let (d, m) = (64, 256);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut violations = 0;
    for _ in 0..100 {
        let w = Matrix::from_vec(d, m, (0..d * m).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        let n_pairs = rng.random_range(8..320);
        let pairs: Vec<KeyValuePair> = (0..n_pairs)
            .map(|_| {
                KeyValuePair::new(
                    (0..m).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
                    (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
                )
                .unwrap()
            })
            .collect();
        let lambda = 0.05 + rng.random::<f64>();
        let split = n_pairs / 2;
        let w1 = solve_edit(&w, &pairs[..split], &pairs[split..], Some(lambda)).unwrap();

        let wn = DMatrix::from_row_slice(d, m, &w.data);
        let mut sst = DMatrix::<f64>::identity(m, m) * lambda;
        let mut ost = wn.clone() * lambda;
        for p in &pairs {
            let k = DVector::from_column_slice(&p.key);
            let v = DVector::from_column_slice(&p.value);
            sst += &k * k.transpose();
            ost += &v * k.transpose();
        }
        let oracle = sst.lu().solve(&ost.transpose()).unwrap().transpose();
        for r in 0..d {
            for c in 0..m {
                worst = worst.max((oracle[(r, c)] - w1.get(r, c)).abs());
            }
        }
        let base = edit_objective(&w1, &w, &pairs, lambda);
        for _ in 0..100 {
            let scale = 10f64.powf(rng.random_range(-6.0..-1.0));
            let mut p = w1.clone();
            for x in &mut p.data {
                *x += scale * (rng.random::<f64>() - 0.5);
            }
            if edit_objective(&p, &w, &pairs, lambda) < base {
                violations += 1;
            }
        }
    }
    let el = start.elapsed();
    outcome(
        worst <= 1e-8 && violations == 0 && el < Duration::from_secs(30),
        format!("max |W1 - oracle| = {worst:.2e}, {violations} perturbations beat W1, {el:.2?}"),
    )
}

fn edit_retention() -> Outcome {
    let start = Instant::now();
    let tr = trained();
    let mut model = tr.model.clone();
    let c = &tr.corpus;
    let held = &c.facts[..100];
    let base = recall(&model, held).unwrap();
    let mut prev = base;
    let mut worst_drop = 0.0f64;
    let mut missed = 0;
    for b in 0..10 {
        let edits: Vec<EditRequest> = (0..8)
            .map(|j| {
                let f = c.facts[100 + b * 8 + j].clone();
                let pos = c.objects.iter().position(|o| *o == f.object).unwrap();
                let new = c.objects[(pos + 1 + j) % c.objects.len()];
                EditRequest::new(f, new)
            })
            .collect();
        let out = apply_edit(&mut model, &edits, tr.layer, &c.facts, &EditConfig::default()).unwrap();
        missed += edits.len() - out.recalled;
        let r = recall(&model, held).unwrap();
        worst_drop = worst_drop.max(prev - r);
        prev = r;
    }
    let cumulative = base - prev;
    let el = start.elapsed();
    outcome(
        tr.recall >= 0.95 && missed == 0 && worst_drop <= 0.05 && cumulative <= 0.20 && el < Duration::from_secs(600),
        format!(
            "trained recall {:.3}, 80 edits with {missed} misses, held-out {base:.2} -> {prev:.2} \
             (worst batch drop {:.1} pts, cumulative {:.1} pts), {el:.2?}",
            tr.recall,
            worst_drop * 100.0,
            cumulative * 100.0
        ),
    )
}

fn tracing_identities() -> Outcome {
    let start = Instant::now();
    let tr = trained();
    let m = &tr.model;
    let facts = &tr.corpus.facts[..60];
    let mut zero_ok = true;
    let mut worst = 0.0f64;
    let mut te_sum = 0.0;
    let sigma = 3.0 * m.embedding_std();
    for (i, f) in facts.iter().enumerate() {
        let g0 = causal_trace(m, f, 0.0, 1, i as u64).unwrap();
        zero_ok &= g0.te == 0.0 && g0.ie.iter().flatten().all(|x| *x == 0.0);
        let g = causal_trace(m, f, sigma, 1, i as u64).unwrap();
        te_sum += g.te;
        let clean = m.forward(&f.prompt(), &Hooks::default()).unwrap();
        let noise = subject_noise(m, f, sigma, i as u64);
        let all = restored_probability(m, f, &clean, &noise, &|_, _| true).unwrap();
        worst = worst.max(((all - g.corrupted_prob) - g.te).abs());
    }
    let mean_te = te_sum / facts.len() as f64;
    let el = start.elapsed();
    outcome(
        zero_ok && worst <= 1e-10 && mean_te > 0.0 && el < Duration::from_secs(120),
        format!(
            "sigma=0 exact zeros: {zero_ok}, max |IE_all - TE| = {worst:.1e}, mean TE {mean_te:.3} over {} facts, {el:.2?}",
            facts.len()
        ),
    )
}

fn gradient_check() -> Outcome {
    let tr = trained();
    let m = &tr.model;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let f = tr.corpus.facts[rng.random_range(0..tr.corpus.facts.len())].clone();
        let target = tr.corpus.objects[rng.random_range(0..tr.corpus.objects.len())];
        let layer = rng.random_range(0..m.config().n_layers);
        let cache = m.forward(&f.prompt(), &Hooks::default()).unwrap();
        let key = cache.mlp_hidden(layer, f.last_subject_pos()).to_vec();
        let mut v = m.mlp_output(layer, &key).unwrap();
        for x in &mut v {
            *x += 0.5 * (rng.random::<f64>() - 0.5);
        }
        let targets = [(f, target)];
        let (_, grad, _) = value_objective(m, layer, &targets, &v).unwrap();
        let mut num = vec![0.0; v.len()];
        for i in 0..v.len() {
            let mut vp = v.clone();
            vp[i] += h;
            let mut vm = v.clone();
            vm[i] -= h;
            let fp = value_objective(m, layer, &targets, &vp).unwrap().0;
            let fm = value_objective(m, layer, &targets, &vm).unwrap().0;
            num[i] = (fp - fm) / (2.0 * h);
        }
        let diff: f64 = grad.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = grad
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(num.iter().map(|a| a * a).sum::<f64>().sqrt());
        worst = worst.max(diff / norm.max(1e-12));
    }
    outcome(worst <= 1e-4, format!("50 probes, worst relative error {worst:.2e}"))
}

fn tsp_desk_scale() -> Outcome {
    let start = Instant::now();
    let mut solved = 0;
    for i in 0..20u64 {
        let mut c = RunConfig::new(
            TaskSpec::generated(TaskKind::Tsp, Some(6 + (i as usize % 5))),
            ProposerConfig::new(ProposerKind::HeuristicTsp),
        );
        c.task.instance_seed = 1000;
        let r = run_seed(&c, i, Path::new(".")).unwrap();
        if r.metric.value() == Some(0.0) && r.rows.len() <= 100 {
            solved += 1;
        }
    }
    let el = start.elapsed();
    outcome(
        solved >= 16 && el < Duration::from_secs(300),
        format!("{solved}/20 (instance, seed) pairs at gap 0 with editing on, {el:.2?}"),
    )
}

fn linear_desk_scale() -> Outcome {
    let mut solved = 0;
    let mut steps = Vec::new();
    for i in 0..25u64 {
        let c = RunConfig::new(
            TaskSpec::generated(TaskKind::LinearSystem, None),
            ProposerConfig::new(ProposerKind::HeuristicNumeric),
        );
        let r = run_seed(&c, i, Path::new(".")).unwrap();
        if r.solved && r.final_objective <= 1e-9 {
            solved += 1;
            steps.push(r.steps.unwrap());
        }
    }
    let mean = steps.iter().sum::<usize>() as f64 / steps.len().max(1) as f64;
    outcome(solved >= 23, format!("{solved}/25 solved, mean #steps {mean:.1}"))
}

fn prompt_length() -> Outcome {
    let lengths = |policy: ContextPolicy, edit: bool| {
        let mut p = ProposerConfig::new(ProposerKind::HeuristicTsp);
        p.context_policy = Some(policy);
        let mut c = RunConfig::new(TaskSpec::generated(TaskKind::Tsp, Some(10)), p);
        c.edit_enabled = edit;
        c.stop_on_optimum = false;
        c.max_iterations = 50;
        c.patience = 50;
        let r = run_seed(&c, 3, Path::new(".")).unwrap();
        r.rows.iter().map(|r| r.prompt_chars as f64).collect::<Vec<_>>()
    };
    let summary = lengths(ContextPolicy::TripleSummary, true);
    let full = lengths(ContextPolicy::FullTrajectory, false);
    let tail = &summary[3..];
    let (lo, hi) = tail
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), x| (a.min(*x), b.max(*x)));
    let spread = (hi - lo) / lo;
    let growth = full[49] / full[2];
    outcome(
        summary.len() == 50 && full.len() == 50 && spread <= 0.10 && growth >= 5.0,
        format!(
            "summary prompts {lo}..{hi} chars after iteration 3 ({:.1}% spread); full trajectory grows {growth:.1}x from iteration 3 to 50",
            spread * 100.0
        ),
    )
}

/// One-sided sign test: P(at least `wins` successes out of `n` fair coins).
fn sign_test(wins: usize, n: usize) -> f64 {
    let mut total = 0.0;
    for k in wins..=n {
        let mut c = 1.0;
        for j in 0..k {
            c = c * (n - j) as f64 / (j + 1) as f64;
        }
        total += c;
    }
    total / 2f64.powi(n as i32)
}

fn ablation_direction() -> Outcome {
    let start = Instant::now();
    let mut c = RunConfig::new(
        TaskSpec::file(TaskKind::ConstitutiveLaw, data("materials/hardening.json")),
        ProposerConfig::new(ProposerKind::HeuristicLaw),
    );
    c.seeds = (0..20).collect();
    let full = sweep(&c, Path::new(".")).unwrap();
    c.dynamic_temperature = false;
    let fixed = sweep(&c, Path::new(".")).unwrap();
    let constant = fixed.iter().all(|r| r.rows.iter().all(|row| row.temperature == 0.7));
    let median = |rs: &[bilevel_core::orchestrator::RunRecord]| {
        let mut v: Vec<f64> = rs.iter().map(|r| r.final_objective).collect();
        v.sort_by(f64::total_cmp);
        (v[9] + v[10]) / 2.0
    };
    let (mf, mx) = (median(&full), median(&fixed));
    let wins = full
        .iter()
        .zip(&fixed)
        .filter(|(a, b)| a.final_objective < b.final_objective)
        .count();
    let losses = full
        .iter()
        .zip(&fixed)
        .filter(|(a, b)| a.final_objective > b.final_objective)
        .count();
    let p = sign_test(wins, wins + losses);
    let direction = mf <= mx && p < 0.05;
    let flag = if direction {
        ""
    } else {
        " [FLAG: direction not significant at desk scale]"
    };
    outcome(
        full.len() == 20 && fixed.len() == 20 && constant,
        format!(
            "median MSE full {mf:.3e} vs fixed temperature {mx:.3e}, full better on {wins}/{} seeds, sign test p = {p:.2e}{flag}, {:.2?}",
            wins + losses,
            start.elapsed()
        ),
    )
}

fn reproducibility() -> Outcome {
    let mut c = RunConfig::new(
        TaskSpec::generated(TaskKind::Tsp, Some(8)),
        ProposerConfig::new(ProposerKind::HeuristicTsp),
    );
    c.seeds = vec![4, 5];
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let records = sweep(&c, Path::new(".")).unwrap();
        write_outputs(d.path(), &records).unwrap();
    }
    let mut same = true;
    let mut files = 0;
    for entry in std::fs::read_dir(dirs[0].path()).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(dirs[0].path().join(&name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(&name)).unwrap();
        same &= a == b;
        files += 1;
    }
    outcome(
        same && files >= 3,
        format!("{files} output files byte-identical across two runs: {same}"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [Criterion; 10] = [
        ("temperature schedule exactness", temperature_schedule),
        ("least-squares edit optimality", least_squares),
        ("edit success and retention", edit_retention),
        ("causal-tracing identities", tracing_identities),
        ("value gradient check", gradient_check),
        ("tsp desk scale", tsp_desk_scale),
        ("linear system desk scale", linear_desk_scale),
        ("prompt length", prompt_length),
        ("ablation direction", ablation_direction),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if filter.as_deref().is_some_and(|flt| !name.contains(flt)) {
            continue;
        }
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {name}: {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
