//! End-to-end acceptance checks. Prints one PASS/FAIL line per check and
//! exits non-zero if any fails. `ACCEPTANCE_ONLY=2,9` runs a subset.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use chronoml::benchmark::{impute_and_rank, run_benchmark, Cell};
use chronoml::deadline::Deadline;
use chronoml::engine::{
    evaluate_trial, fit_to_dir, holdout_evaluation, kb_entry, optimize, write_artifacts, AblationMode, RunConfig,
    RunManifest, RunOutcome, TrialRecord, TrialStatus, DEFAULT_PENALTY, TRIALS_FILE,
};
use chronoml::ensemble::{ensemble_select, Candidate};
use chronoml::error::Error;
use chronoml::fidelity::{sh_schedule, window_length, BudgetSpec};
use chronoml::forecasters::mlp::Mlp;
use chronoml::metalearn::{distance_weights, dtw, KnowledgeBase, ParamPrior, PriorModel, PriorOptions};
use chronoml::metrics::{mase, panel_loss, rmse, smape, LossKind};
use chronoml::pipeline::{template_defaults, template_space, Fault, Pipeline};
use chronoml::series::{temporal_holdout, PanelDataset, TemporalSplit, TimeSeriesRecord};
use chronoml::space::Configuration;
use chronoml::surrogate::{argmax, expected_improvement, prior_weighted_acquisition};
use chronoml::synth::{panel_family, trend_season, SynthParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn run(d: &PanelDataset, cfg: &RunConfig, kb: Option<&KnowledgeBase>) -> Result<RunOutcome, String> {
    optimize(d, cfg, kb).map_err(|e| format!("{}: {e}", d.name()))
}

fn capped(mode: AblationMode, seed: u64, trials: usize) -> RunConfig {
    RunConfig {
        time_budget_s: 600.0,
        grace_period_s: 60.0,
        mode,
        seed,
        max_trials: Some(trials),
        ..Default::default()
    }
}

fn split_of(series: Vec<Vec<f64>>, h: usize, m: usize) -> TemporalSplit {
    let records = series
        .iter()
        .enumerate()
        .map(|(i, v)| TimeSeriesRecord::univariate(format!("s{i}"), v).unwrap())
        .collect();
    let d = PanelDataset::new("fixture", records, h, m, Vec::new()).unwrap();
    temporal_holdout(&d, h).unwrap()
}

// Metric oracles ------------------------------------------------------------

fn oracle_mase(actual: &[f64], forecast: &[f64], insample: &[f64], m: usize) -> Option<f64> {
    let num: f64 = actual.iter().zip(forecast).map(|(a, f)| (a - f).abs()).sum::<f64>() / actual.len() as f64;
    let diffs: Vec<f64> = (m..insample.len()).map(|t| (insample[t] - insample[t - m]).abs()).collect();
    let den = diffs.iter().sum::<f64>() / diffs.len() as f64;
    (den > 0.0).then(|| num / den)
}

fn oracle_smape(actual: &[f64], forecast: &[f64]) -> f64 {
    let terms: Vec<f64> = actual
        .iter()
        .zip(forecast)
        .map(|(a, f)| {
            let d = a.abs() + f.abs();
            if d == 0.0 {
                0.0
            } else {
                2.0 * (a - f).abs() / d
            }
        })
        .collect();
    terms.iter().sum::<f64>() / terms.len() as f64
}

fn oracle_rmse(actual: &[f64], forecast: &[f64]) -> f64 {
    (actual.iter().zip(forecast).map(|(a, f)| (a - f).powi(2)).sum::<f64>() / actual.len() as f64).sqrt()
}

fn metric_oracles() -> Outcome {
    let tol = 1e-9;
    let fixtures: [(&str, f64, f64); 8] = [
        ("mase perfect", mase(&[5., 6.], &[5., 6.], &[1., 2., 3., 4.], 1).unwrap(), 0.0),
        ("mase 1.5", mase(&[5., 6.], &[4., 4.], &[1., 2., 3., 4.], 1).unwrap(), 1.5),
        ("smape perfect", smape(&[1., 2.], &[1., 2.]).unwrap(), 0.0),
        ("smape 1.0", smape(&[1.], &[3.]).unwrap(), 1.0),
        ("smape 0/0", smape(&[0.], &[0.]).unwrap(), 0.0),
        ("rmse equal", rmse(&[1., 2.], &[1., 2.]).unwrap(), 0.0),
        ("rmse 3-4", rmse(&[0., 0.], &[3., 4.]).unwrap(), 12.5f64.sqrt()),
        ("rmse unit", rmse(&[1.], &[2.]).unwrap(), 1.0),
    ];
    for (name, got, want) in fixtures {
        ensure(close(got, want, tol), || format!("{name}: {got} != {want}"))?;
    }
    ensure(matches!(mase(&[1.], &[1.], &[2., 2., 2.], 1), Err(Error::UndefinedScale)), || {
        "constant insample must be undefined-scale".into()
    })?;
    ensure(mase(&[1., 2.], &[1.], &[1., 2., 3.], 1).is_err(), || "length mismatch accepted".into())?;

    // Panel mean of series losses 1.0 and 2.0.
    let s = split_of(vec![vec![1., 2., 3., 4., 5., 6.], vec![1., 2., 3., 4., 5., 6.]], 2, 1);
    let fc = vec![vec![vec![4.], vec![5.]], vec![vec![3.], vec![4.]]];
    let p = panel_loss(LossKind::Mase, &s, &fc).unwrap().value;
    ensure(close(p, 1.5, tol), || format!("panel mean {p} != 1.5"))?;
    let flat = split_of(vec![vec![2., 2., 2., 2., 5., 6.]], 2, 1);
    ensure(panel_loss(LossKind::Mase, &flat, &[vec![vec![4.], vec![5.]]]).is_err(), || {
        "all-undefined panel must error".into()
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    for _ in 0..500 {
        let n = rng.random_range(1..8);
        let m = rng.random_range(1..4);
        let t = rng.random_range(m + 1..20);
        let v = |rng: &mut ChaCha8Rng, k: usize| (0..k).map(|_| rng.random_range(-50.0..50.0)).collect::<Vec<f64>>();
        let (a, f, ins) = (v(&mut rng, n), v(&mut rng, n), v(&mut rng, t));
        if let Some(want) = oracle_mase(&a, &f, &ins, m) {
            let got = mase(&a, &f, &ins, m).unwrap();
            ensure(close(got, want, tol * want.max(1.0)), || format!("mase {got} vs {want}"))?;
        }
        let (gs, ws) = (smape(&a, &f).unwrap(), oracle_smape(&a, &f));
        ensure(close(gs, ws, tol), || format!("smape {gs} vs {ws}"))?;
        let (gr, wr) = (rmse(&a, &f).unwrap(), oracle_rmse(&a, &f));
        ensure(close(gr, wr, tol * wr.max(1.0)), || format!("rmse {gr} vs {wr}"))?;
        checked += 1;
    }
    Ok(format!("11 fixtures, {checked} random cases"))
}

// DTW ----------------------------------------------------------------------

/// Minimum cost over all monotone alignments, enumerated path by path with
/// costs accumulated from the start.
fn dtw_exhaustive(a: &[f64], b: &[f64]) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + (a[i] - b[j]).abs();
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

fn dtw_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in 0..200 {
        let la = rng.random_range(1..=6);
        let lb = rng.random_range(1..=6);
        let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
            if k % 2 == 0 {
                (0..n).map(|_| rng.random_range(-9..=9) as f64).collect()
            } else {
                (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()
            }
        };
        let a = draw(&mut rng, la);
        let b = draw(&mut rng, lb);
        let got = dtw(&a, &b).map_err(|e| e.to_string())?;
        let want = dtw_exhaustive(&a, &b);
        ensure(got == want, || format!("pair {k}: dtw {got} != exhaustive {want} for {a:?} / {b:?}"))?;
    }
    Ok("200 pairs, exact".into())
}

// Source weights -----------------------------------------------------------

fn source_weights() -> Outcome {
    let w = distance_weights(&[2.0, 4.0, 6.0]);
    ensure(w == vec![1.0, 0.5, 0.0], || format!("{{2,4,6}} -> {w:?}"))?;
    let w = distance_weights(&[3.0, 3.0, 3.0]);
    ensure(w == vec![1.0; 3], || format!("equal distances -> {w:?}"))?;
    let w = distance_weights(&[7.5]);
    ensure(w == vec![1.0], || format!("single distance -> {w:?}"))?;
    Ok("exact".into())
}

// Prior validity -----------------------------------------------------------

fn prior_validity() -> Outcome {
    let space = template_space();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut numeric = 0;
    let mut categorical = 0;
    let mut worst_integral: f64 = 0.0;
    let mut worst_mass: f64 = 0.0;
    for k in 0..40 {
        let n = rng.random_range(1..25);
        let configs: Vec<(Configuration, f64)> = (0..n)
            .map(|_| {
                let w = if k % 4 == 0 { 1.0 } else { rng.random_range(0.0..1.0) };
                (space.sample(&mut rng), w)
            })
            .collect();
        let prior = PriorModel::fit(&space, &configs, &PriorOptions::default());
        for p in space.params() {
            match prior.param(&p.name) {
                Some(ParamPrior::Numeric(kde)) => {
                    let steps = 10_000;
                    let integral: f64 =
                        (0..steps).map(|i| kde.density((i as f64 + 0.5) / steps as f64)).sum::<f64>() / steps as f64;
                    worst_integral = worst_integral.max((integral - 1.0).abs());
                    ensure((integral - 1.0).abs() <= 1e-3, || {
                        format!("{} integrates to {integral} (bandwidth {})", p.name, kde.bandwidth)
                    })?;
                    numeric += 1;
                }
                Some(ParamPrior::Categorical(masses)) => {
                    let total: f64 = masses.iter().sum();
                    worst_mass = worst_mass.max((total - 1.0).abs());
                    ensure((total - 1.0).abs() <= 4.0 * f64::EPSILON, || {
                        format!("{} masses sum to {total}", p.name)
                    })?;
                    categorical += 1;
                }
                None => {}
            }
        }
    }

    for set in 0..100 {
        let n = rng.random_range(2..60);
        let ei: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let c = rng.random_range(0.05..20.0);
        let beta = rng.random_range(0.5..20.0);
        let trials = rng.random_range(1..100);
        let weighted: Vec<f64> = ei.iter().map(|e| prior_weighted_acquisition(*e, Some(c), beta, trials)).collect();
        ensure(argmax(&weighted) == argmax(&ei), || format!("set {set}: argmax moved under constant prior {c}"))?;
    }
    Ok(format!(
        "{numeric} densities (max |1-I| {worst_integral:.1e}), {categorical} mass vectors (max |1-S| {worst_mass:.1e}), 100 argmax sets"
    ))
}

// Expected improvement -----------------------------------------------------

fn ei_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples = 1_000_000;
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let mu = rng.random_range(-2.0..2.0);
        let sigma = rng.random_range(0.1..2.0);
        let f_min = mu + sigma * rng.random_range(-1.0..2.0);
        let mut acc = 0.0;
        for _ in 0..samples {
            let z: f64 = StandardNormal.sample(&mut rng);
            acc += (f_min - (mu + sigma * z)).max(0.0);
        }
        let mc = acc / samples as f64;
        let closed = expected_improvement(mu, sigma, f_min);
        let rel = (closed - mc).abs() / mc;
        worst = worst.max(rel);
        ensure(rel < 0.02, || format!("case {case}: closed {closed} vs mc {mc} (mu {mu}, sigma {sigma}, f_min {f_min})"))?;
    }
    Ok(format!("50 cases, worst relative error {worst:.2e}"))
}

// Fidelity -----------------------------------------------------------------

fn fidelity_correctness() -> Outcome {
    let table = [
        (1.0, 1000, 100, 1000),
        (1.0, 37, 100, 37),
        (0.25, 1000, 100, 250),
        (0.3, 50, 100, 50),
        (0.01, 1000, 100, 100),
        (1.0 / 9.0, 100, 100, 100),
    ];
    for (b, t, l, want) in table {
        let got = window_length(b, t, l);
        ensure(got == want, || format!("window_length({b}, {t}, {l}) = {got}, expected {want}"))?;
    }

    let spec = BudgetSpec::default();
    for n in 3..=40 {
        let rungs = sh_schedule(&spec, n).map_err(|e| e.to_string())?;
        let budgets: Vec<f64> = rungs.iter().map(|r| r.budget).collect();
        let survivors: Vec<usize> = rungs.iter().map(|r| r.survivors).collect();
        ensure(budgets == vec![1.0 / 9.0, 1.0 / 3.0, 1.0], || format!("n={n}: budgets {budgets:?}"))?;
        ensure(survivors == vec![n, n / 3, (n / 9).max(1)], || format!("n={n}: survivors {survivors:?}"))?;
    }

    let p = SynthParams { length: 900, ..Default::default() };
    let d = trend_season("fid", &p, 6).unwrap();
    let split = temporal_holdout(&d, 12).unwrap();
    let space = template_space();
    let spec = BudgetSpec { l_min: 100, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut configs = template_defaults(&space);
    configs.extend((0..9).map(|_| space.sample(&mut rng)));
    let mut compared = 0;
    for (i, c) in configs.iter().enumerate() {
        let seed = 100 + i as u64;
        let o = evaluate_trial(c, 1.0, &split, LossKind::Mase, &spec, seed, &Deadline::none(), None);
        let direct = Pipeline::from_config(c, 12)
            .and_then(|pl| pl.fit(split.train(), seed, &Deadline::none()))
            .and_then(|f| f.predict(12));
        match (o.forecasts, direct) {
            (Some(a), Ok(b)) => {
                let bits = |f: &Vec<Vec<Vec<f64>>>| f.iter().flatten().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
                ensure(bits(&a) == bits(&b), || format!("config {i}: full-budget forecasts differ"))?;
                let loss = panel_loss(LossKind::Mase, &split, &b).unwrap().value;
                ensure(o.loss.map(f64::to_bits) == Some(loss.to_bits()), || format!("config {i}: loss differs"))?;
                ensure(o.observations == d.observation_count() - 12, || format!("config {i}: data was truncated"))?;
                compared += 1;
            }
            (None, Err(_)) => {}
            (a, b) => return Err(format!("config {i}: outcomes disagree ({} vs {})", a.is_some(), b.is_ok())),
        }
    }
    Ok(format!("window table, ladders n=3..40, {compared} bitwise full-budget comparisons"))
}

// MLP gradients ------------------------------------------------------------

fn mlp_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let nets = 25;
    for k in 0..nets {
        let inputs = rng.random_range(1..5);
        let depth = rng.random_range(1..3);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..6)).collect();
        let net = Mlp::new(inputs, &hidden, &mut rng).map_err(|e| e.to_string())?;
        let rows: Vec<(Vec<f64>, f64)> = (0..rng.random_range(1..6))
            .map(|_| ((0..inputs).map(|_| rng.random_range(-1.5..1.5)).collect(), rng.random_range(-2.0..2.0)))
            .collect();
        let batch: Vec<(&[f64], f64)> = rows.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
        let analytic = net.loss_and_gradients(&batch).1.flatten();
        let theta = net.parameters();
        let h = 1e-6;
        let mut numeric = Vec::with_capacity(theta.len());
        let mut probe = net.clone();
        for i in 0..theta.len() {
            let mut t = theta.clone();
            t[i] += h;
            probe.set_parameters(&t);
            let up = probe.loss_and_gradients(&batch).0;
            t[i] -= 2.0 * h;
            probe.set_parameters(&t);
            let down = probe.loss_and_gradients(&batch).0;
            numeric.push((up - down) / (2.0 * h));
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        let rel = if scale > 0.0 { diff / scale } else { diff };
        worst = worst.max(rel);
        ensure(rel < 1e-4, || format!("net {k} ({inputs} -> {hidden:?}): relative error {rel:e}"))?;
    }
    Ok(format!("{nets} networks, worst relative error {worst:.2e}"))
}

// Ensemble selection -------------------------------------------------------

/// Lowest loss over every multiset of size 1..=k.
fn exhaustive_best(pool: &[Candidate], split: &TemporalSplit, k: usize) -> f64 {
    fn rec(pool: &[Candidate], split: &TemporalSplit, k: usize, start: usize, chosen: &mut Vec<usize>, best: &mut f64) {
        if !chosen.is_empty() {
            let n = chosen.len() as f64;
            let mut avg = pool[chosen[0]].forecasts.clone();
            for v in avg.iter_mut().flatten().flatten() {
                *v = 0.0;
            }
            for &c in chosen.iter() {
                for (a, f) in avg.iter_mut().flatten().flatten().zip(pool[c].forecasts.iter().flatten().flatten()) {
                    *a += f / n;
                }
            }
            *best = best.min(panel_loss(LossKind::Mase, split, &avg).unwrap().value);
        }
        if chosen.len() == k {
            return;
        }
        for i in start..pool.len() {
            chosen.push(i);
            rec(pool, split, k, i, chosen, best);
            chosen.pop();
        }
    }
    let mut best = f64::INFINITY;
    rec(pool, split, k, 0, &mut Vec::new(), &mut best);
    best
}

/// Plain forward selection written out independently: ids in the order
/// they were added.
fn greedy_trace(pool: &[Candidate], split: &TemporalSplit, k: usize) -> (Vec<usize>, f64) {
    let mut sorted: Vec<&Candidate> = pool.iter().collect();
    sorted.sort_by_key(|c| c.id);
    let mut chosen: Vec<usize> = Vec::new();
    let mut current = f64::INFINITY;
    for _ in 0..k {
        let mut best: Option<(f64, usize)> = None;
        for (i, _) in sorted.iter().enumerate() {
            let mut members = chosen.clone();
            members.push(i);
            let n = members.len() as f64;
            let mut avg = sorted[0].forecasts.clone();
            for (slot, v) in avg.iter_mut().flatten().flatten().enumerate() {
                *v = members
                    .iter()
                    .map(|&m| *sorted[m].forecasts.iter().flatten().flatten().nth(slot).unwrap())
                    .sum::<f64>()
                    / n;
            }
            let loss = panel_loss(LossKind::Mase, split, &avg).unwrap().value;
            if best.is_none_or(|(b, _)| loss < b - 1e-12) {
                best = Some((loss, i));
            }
        }
        let (loss, i) = best.unwrap();
        if loss >= current - 1e-12 {
            break;
        }
        current = loss;
        chosen.push(i);
    }
    (chosen.iter().map(|&i| sorted[i].id).collect(), current)
}

fn ensemble_guarantee() -> Outcome {
    let values: Vec<f64> = (0..14).map(|t| (t % 3) as f64 + 0.5 * t as f64).collect();
    let split = split_of(vec![values], 2, 1);
    let truth: Vec<f64> = split.validation_targets(0).iter().map(|r| r[0].unwrap()).collect();
    let cand = |id: usize, e: [f64; 2]| Candidate {
        id,
        forecasts: vec![vec![vec![truth[0] + e[0]], vec![truth[1] + e[1]]]],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut fixtures = 0;
    for _ in 0..300 {
        let n = rng.random_range(1..=4);
        let k = rng.random_range(1..=3);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        // Errors of one sign: averaging cannot beat the best member.
        let same_sign: Vec<Candidate> = (0..n)
            .map(|i| cand(i * 3 + 1, [sign * rng.random_range(0.1..3.0), sign * rng.random_range(0.1..3.0)]))
            .collect();
        // A mirrored pair cancels exactly, other members err on one side.
        let d = [rng.random_range(0.5..1.0), rng.random_range(0.5..1.0)];
        let mut mirrored = vec![cand(0, d), cand(1, [-d[0], -d[1]])];
        for i in 2..n.max(2) {
            mirrored.push(cand(i + 1, [rng.random_range(1.5..3.0), rng.random_range(1.5..3.0)]));
        }
        for (pool, k) in [(same_sign, k), (mirrored, k.max(2))] {
            let sel = ensemble_select(&pool, &split, k, LossKind::Mase).map_err(|e| e.to_string())?;
            let best = exhaustive_best(&pool, &split, k);
            ensure(close(sel.loss, best, 1e-12), || format!("greedy {} vs exhaustive {best}", sel.loss))?;
            fixtures += 1;
        }
    }

    let mut adversarial = 0;
    let mut suboptimal = 0;
    for _ in 0..300 {
        let n = rng.random_range(1..=4);
        let k = rng.random_range(1..=3);
        let pool: Vec<Candidate> = (0..n)
            .map(|i| cand(i, [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]))
            .collect();
        let sel = ensemble_select(&pool, &split, k, LossKind::Mase).map_err(|e| e.to_string())?;
        let (trace, loss) = greedy_trace(&pool, &split, k);
        ensure(sel.trace == trace && close(sel.loss, loss, 1e-12), || {
            format!("trace {:?} / {} vs oracle {trace:?} / {loss}", sel.trace, sel.loss)
        })?;
        let single = pool
            .iter()
            .map(|c| panel_loss(LossKind::Mase, &split, &c.forecasts).unwrap().value)
            .fold(f64::INFINITY, f64::min);
        ensure(sel.loss <= single, || "ensemble worse than best single".into())?;
        if sel.loss > exhaustive_best(&pool, &split, k) + 1e-12 {
            suboptimal += 1;
        }
        adversarial += 1;
    }

    let mut runs = 0;
    let p = SynthParams { length: 200, ..Default::default() };
    let mut datasets: Vec<PanelDataset> = (0..3).map(|s| trend_season(&format!("ens_{s}"), &p, 80 + s).unwrap()).collect();
    datasets.extend(panel_family("ens_fam", &SynthParams { datasets: 2, series: 2, length: 200, ..p.clone() }, 9).unwrap());
    for (i, d) in datasets.iter().enumerate() {
        let out = run(d, &capped(AblationMode::TemplatesOnly, i as u64, 25), None)?;
        let e = out.report.ensemble_validation_loss.ok_or("no ensemble")?;
        let b = out.report.best_loss.ok_or("no best")?;
        ensure(e <= b, || format!("{}: ensemble {e} > best single {b}", d.name()))?;
        runs += 1;
    }
    Ok(format!(
        "{fixtures} exhaustive fixtures, {adversarial} trace checks ({suboptimal} where greedy is suboptimal), {runs} runs"
    ))
}

// End-to-end quality -------------------------------------------------------

fn end_to_end_quality() -> Outcome {
    let p = SynthParams { length: 300, period: 12, horizon: 12, noise: 0.1, ..Default::default() };
    let mut kb = KnowledgeBase::new(&template_space());
    for s in 100..106u64 {
        let d = trend_season(&format!("ts_source_{s}"), &p, s).unwrap();
        let out = run(&d, &capped(AblationMode::TemplatesOnly, s, 40), None)?;
        kb.add(kb_entry(&d, &out.trials, 10, 200), 10);
    }
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let d = trend_season(&format!("ts_{seed}"), &p, seed).unwrap();
        let cfg = RunConfig {
            time_budget_s: 120.0,
            grace_period_s: 60.0,
            mode: AblationMode::Full,
            seed,
            max_trials: Some(200),
            ..Default::default()
        };
        let r = holdout_evaluation(&d, &cfg, Some(&kb)).map_err(|e| format!("seed {seed}: {e}"))?;
        if r.loss < r.baseline_loss {
            wins += 1;
        }
        lines.push(format!("{:.3}/{:.3}", r.loss, r.baseline_loss));
    }
    ensure(wins >= 4, || format!("{wins}/5 below seasonal naive: {}", lines.join(" ")))?;
    Ok(format!("{wins}/5 below seasonal naive (ensemble/baseline {})", lines.join(" ")))
}

// Warm starting ------------------------------------------------------------

/// Trials needed to first reach `target` (1-based), if ever.
fn trials_to_reach(trials: &[TrialRecord], target: f64) -> Option<usize> {
    trials
        .iter()
        .position(|t| t.loss.is_some_and(|l| l <= target * (1.0 + 1e-9)))
        .map(|i| i + 1)
}

fn warm_start_speedup() -> Outcome {
    let p = SynthParams { length: 300, series: 8, horizon: 24, noise: 0.05, datasets: 6, ..Default::default() };
    let family = panel_family("family", &p, 11).unwrap();
    let mut kb = KnowledgeBase::new(&template_space());
    for (i, d) in family.iter().enumerate() {
        let out = run(d, &capped(AblationMode::TemplatesOnly, 1000 + i as u64, 60), None)?;
        kb.add(kb_entry(d, &out.trials, 10, 200), 10);
    }
    let budget = 50;
    let mut ratios = Vec::new();
    for seed in 0..10u64 {
        let d = &family[seed as usize % family.len()];
        let only = run(d, &capped(AblationMode::TemplatesOnly, seed, budget), None)?;
        let ws = run(d, &capped(AblationMode::TemplatesWs, seed, budget), Some(&kb))?;
        ensure(ws.report.prior_sources.iter().all(|s| s.name != d.name()), || "target leaked into its prior".into())?;
        let best = only.report.best_loss.ok_or("no successful trial")?;
        let t_only = trials_to_reach(&only.trials, best).unwrap();
        let ratio = trials_to_reach(&ws.trials, best).map_or(f64::INFINITY, |t| t as f64 / t_only as f64);
        ratios.push(ratio);
    }
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let median = (sorted[4] + sorted[5]) / 2.0;
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    ensure(median <= 0.5, || format!("median trial ratio {median:.3} ({})", shown.join(" ")))?;
    Ok(format!("median trial ratio {median:.3} ({})", shown.join(" ")))
}

// Multi-fidelity -----------------------------------------------------------

fn multi_fidelity_efficiency() -> Outcome {
    let p = SynthParams { length: 5000, ..Default::default() };
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let d = trend_season(&format!("long_{seed}"), &p, 200 + seed).unwrap();
        let mf = run(&d, &capped(AblationMode::TemplatesMf, seed, 13), None)?;
        let only = run(&d, &capped(AblationMode::TemplatesOnly, seed, 9), None)?;
        ensure(mf.report.fidelity_active, || "fidelity inactive on long series".into())?;
        let distinct = |ts: &[TrialRecord]| {
            let mut v: Vec<&Configuration> = ts.iter().map(|t| &t.config).collect();
            v.sort_by_key(|c| c.to_string());
            v.dedup();
            v.len()
        };
        ensure(distinct(&mf.trials) == 9 && distinct(&only.trials) == 9, || {
            format!("distinct configs {} vs {}", distinct(&mf.trials), distinct(&only.trials))
        })?;
        let ratio = mf.report.observations_consumed as f64 / only.report.observations_consumed as f64;
        let (lm, lo) = (mf.report.best_loss.ok_or("mf failed")?, only.report.best_loss.ok_or("only failed")?);
        let gap = (lm - lo).abs() / lo;
        lines.push(format!("{ratio:.3}/{gap:.3}"));
        ensure(ratio <= 0.6, || format!("seed {seed}: observation ratio {ratio:.3}"))?;
        ensure(gap <= 0.1, || format!("seed {seed}: final MASE {lm:.4} vs {lo:.4}"))?;
    }
    Ok(format!("observation ratio/MASE gap per seed: {}", lines.join(" ")))
}

// Robustness ---------------------------------------------------------------

fn robustness() -> Outcome {
    let d = trend_season("faulty", &SynthParams { length: 200, ..Default::default() }, 11).unwrap();
    let mut cfg = capped(AblationMode::TemplatesOnly, 0, 10);
    cfg.trial_timeout_s = Some(1.0);
    cfg.faults = BTreeMap::from([
        (0, Fault::NanForecast),
        (1, Fault::TransformError),
        (2, Fault::Hang),
        (6, Fault::NanForecast),
        (7, Fault::Hang),
        (8, Fault::TransformError),
    ]);
    let out = run(&d, &cfg, None)?;
    let expected = |i: usize| match cfg.faults.get(&i) {
        Some(Fault::Hang) => TrialStatus::TimedOut,
        Some(_) => TrialStatus::Failed,
        None => TrialStatus::Ok,
    };
    let mut worst: Option<f64> = None;
    for t in &out.trials {
        ensure(t.status == expected(t.trial), || format!("trial {} has status {:?}", t.trial, t.status))?;
        match t.status {
            TrialStatus::Ok => {
                let l = t.loss.ok_or("ok trial without loss")?;
                ensure(l.is_finite() && t.penalty.is_none(), || "ok trial carries a penalty".into())?;
                worst = Some(worst.map_or(l, |w| w.max(l)));
            }
            _ => {
                let want = worst.map_or(DEFAULT_PENALTY, |w| 2.0 * w);
                ensure(t.loss.is_none() && t.penalty == Some(want), || {
                    format!("trial {}: penalty {:?}, expected {want}", t.trial, t.penalty)
                })?;
            }
        }
    }
    ensure(out.ensemble.is_some(), || "no ensemble despite successful trials".into())?;

    // A hang spanning the run deadline is stopped inside the grace period.
    let mut cfg = capped(AblationMode::TemplatesOnly, 0, 5);
    cfg.time_budget_s = 1.0;
    cfg.grace_period_s = 1.0;
    cfg.faults = (0..5).map(|i| (i, Fault::Hang)).collect();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let started = Instant::now();
    let res = fit_to_dir(&d, &cfg, None, None, dir.path());
    let wall = started.elapsed();
    ensure(matches!(res, Err(Error::AllTrialsFailed)), || "total failure must be an error".into())?;
    ensure(wall <= Duration::from_secs_f64(1.0 + 1.0 + 1.0), || format!("hang ran {wall:?}"))?;
    let text = std::fs::read_to_string(dir.path().join(TRIALS_FILE)).map_err(|e| e.to_string())?;
    let logged: Vec<TrialRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    ensure(!logged.is_empty() && logged.iter().all(|t| t.status == TrialStatus::TimedOut), || {
        "failed run log is incomplete".into()
    })?;

    // Parallel workers with faults.
    let mut cfg = capped(AblationMode::TemplatesOnly, 3, 8);
    cfg.workers = 3;
    cfg.faults = BTreeMap::from([(1, Fault::NanForecast), (4, Fault::TransformError)]);
    let out = run(&d, &cfg, None)?;
    ensure(out.trials.iter().filter(|t| t.status == TrialStatus::Failed).count() == 2, || {
        "parallel faults not recorded".into()
    })?;

    let mut cells = vec![
        Cell::new("d", AblationMode::Full, 0, Some(1.0)),
        Cell::new("d", AblationMode::TemplatesMf, 0, Some(2.0)),
        Cell::new("d", AblationMode::TemplatesOnly, 0, None),
    ];
    impute_and_rank(&mut cells);
    ensure(cells[2].score == 2.0 + 1e-6 && cells[2].rank == 3.0, || format!("imputed cell {:?}", cells[2]))?;

    // A mode that cannot run (warm starting without a knowledge base) is
    // imputed and ranked last without stopping the benchmark.
    let base = RunConfig { max_trials: Some(4), ..capped(AblationMode::Full, 0, 4) };
    let res = run_benchmark(
        std::slice::from_ref(&d),
        &[AblationMode::TemplatesOnly, AblationMode::TemplatesWs],
        &[0],
        &base,
        None,
    );
    let failed = res.cells.iter().find(|c| c.mode == AblationMode::TemplatesWs).unwrap();
    let ok = res.cells.iter().find(|c| c.mode == AblationMode::TemplatesOnly).unwrap();
    ensure(ok.value.is_some() && failed.imputed, || "benchmark cells not as expected".into())?;
    ensure(failed.score == ok.score + 1e-6 && failed.rank == 2.0, || format!("failed cell {failed:?}"))?;
    Ok(format!("{} faulty trials statused, hang stopped after {:.2}s, imputation ranked last", 6, wall.as_secs_f64()))
}

// Determinism --------------------------------------------------------------

fn determinism() -> Outcome {
    let short = trend_season("det", &SynthParams::default(), 12).unwrap();
    let long = trend_season("det_long", &SynthParams { length: 1500, ..Default::default() }, 13).unwrap();
    let mut kb = KnowledgeBase::new(&template_space());
    let src = trend_season("det_src", &SynthParams::default(), 14).unwrap();
    kb.add(kb_entry(&src, &run(&src, &capped(AblationMode::TemplatesOnly, 0, 15), None)?.trials, 10, 200), 10);

    let mut mf = capped(AblationMode::TemplatesMf, 5, 26);
    mf.l_min = 100;
    let cases: Vec<(&PanelDataset, RunConfig, Option<&KnowledgeBase>)> = vec![
        (&short, capped(AblationMode::TemplatesOnly, 4, 40), None),
        (&short, capped(AblationMode::TemplatesWs, 4, 25), Some(&kb)),
        (&long, mf, None),
    ];
    let mut bytes = 0;
    for (d, cfg, kb) in cases {
        let mut logs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let out = run(d, &cfg, kb)?;
            let manifest = RunManifest {
                dataset: d.name().into(),
                data_path: None,
                meta_path: None,
                space_version: out.report.space_version.clone(),
                config: cfg.clone(),
            };
            write_artifacts(dir.path(), d, &out, &manifest).map_err(|e| e.to_string())?;
            logs.push(std::fs::read(dir.path().join(TRIALS_FILE)).map_err(|e| e.to_string())?);
        }
        ensure(logs[0] == logs[1], || format!("{} / {}: trial logs differ", d.name(), cfg.mode))?;
        bytes += logs[0].len();
    }
    Ok(format!("3 run pairs byte-identical ({bytes} bytes)"))
}

fn main() {
    let _ = std::io::Write::flush(&mut std::io::stdout());
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let checks: [Check; 13] = [
        ("metric oracles", metric_oracles),
        ("dtw oracle", dtw_oracle),
        ("source weights", source_weights),
        ("prior validity", prior_validity),
        ("expected improvement oracle", ei_oracle),
        ("fidelity correctness", fidelity_correctness),
        ("mlp gradient check", mlp_gradients),
        ("ensemble guarantee", ensemble_guarantee),
        ("end-to-end quality", end_to_end_quality),
        ("warm-start speedup", warm_start_speedup),
        ("multi-fidelity efficiency", multi_fidelity_efficiency),
        ("robustness", robustness),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {why} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
