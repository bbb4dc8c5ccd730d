//! Acceptance suite: one PASS/FAIL/SKIP line per criterion, nonzero exit if
//! any criterion fails. Every check compares against an oracle written here,
//! independent of the library code under test.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use elspin_core::bundle::{ModelBundle, Predictor, TrainingMetadata};
use elspin_core::chemistry::{
    mixture_feasible, pair_feasible, row_flag, FeasibilityTables, IncompatibilityTable, Rating, SolubilityEntry,
    SolubilityTable, Strictness, StrictnessPolicy,
};
use elspin_core::dataset::{LoadOptions, ProcessInputs, SpinDataset};
use elspin_core::evaluation::{benchmark, compute_metrics, EvalConfig};
use elspin_core::imc::{run_imc, ImcConfig, ImcMode};
use elspin_core::learners::LearnerRegistry;
use elspin_core::matrix::Matrix;
use elspin_core::pipeline::{Recipe, RecipeOptions};
use elspin_core::sampling::allocation::allocate_balanced;
use elspin_core::sampling::doptimal::federov_select;
use elspin_core::sampling::sobol::sobol_points;
use elspin_core::synth;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(name: &str) -> PathBuf {
    root().join("fixtures").join(name)
}

// ------------------------------------------------------------------ metrics

fn metrics_exactness() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    let y: Vec<f64> = (0..1000).map(|_| r.random_range(20.0..2000.0)).collect();
    let p: Vec<f64> = y.iter().map(|v| v + r.random_range(-300.0..300.0)).collect();
    let m = compute_metrics(&y, &p).map_err(|e| e.to_string())?;
    // Oracle: textbook formulas, accumulated in reverse order.
    let n = y.len() as f64;
    let mut sq = 0.0;
    let mut ab = 0.0;
    let mut pct = 0.0;
    for i in (0..y.len()).rev() {
        let e = y[i] - p[i];
        sq += e.powi(2);
        ab += e.abs();
        pct += (e / y[i]).abs();
    }
    let mean = y.iter().rev().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().rev().map(|v| (v - mean).powi(2)).sum();
    let want = [(sq / n).sqrt(), ab / n, 100.0 * pct / n, 1.0 - sq / ss_tot];
    let got = [m.rmse, m.mae, m.mape.unwrap_or(f64::NAN), m.r2.unwrap_or(f64::NAN)];
    let worst = want.iter().zip(&got).map(|(w, g)| (w - g).abs() / w.abs().max(1.0)).fold(0.0, f64::max);
    ensure(worst <= 1e-9, || format!("max relative deviation {worst:e}"))?;
    Ok(format!("RMSE/MAE/MAPE/R2 within {worst:.1e} of the oracle on 1000 pairs"))
}

// -------------------------------------------------------------- D-optimality

fn det(m: &[Vec<f64>]) -> f64 {
    // Gaussian elimination with partial pivoting.
    let mut a = m.to_vec();
    let k = a.len();
    let mut d = 1.0;
    for c in 0..k {
        let piv = (c..k).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        if a[piv][c] == 0.0 {
            return 0.0;
        }
        if piv != c {
            a.swap(piv, c);
            d = -d;
        }
        d *= a[c][c];
        for i in c + 1..k {
            let f = a[i][c] / a[c][c];
            for j in c..k {
                a[i][j] -= f * a[c][j];
            }
        }
    }
    d
}

fn info_det(x: &[Vec<f64>], rows: &[usize]) -> f64 {
    let p = x[0].len();
    let mut m = vec![vec![0.0; p]; p];
    for &r in rows {
        for i in 0..p {
            for j in 0..p {
                m[i][j] += x[r][i] * x[r][j];
            }
        }
    }
    det(&m)
}

fn subsets(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
    if cur.len() == k {
        f(cur);
        return;
    }
    for i in start..n {
        if n - i < k - cur.len() {
            break;
        }
        cur.push(i);
        subsets(n, k, i + 1, cur, f);
        cur.pop();
    }
}

fn d_optimality() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(50);
    let mut worst: f64 = 1.0;
    for inst in 0..50 {
        let p = r.random_range(1..=3);
        let n = r.random_range(p..=6);
        let c = r.random_range(n.max(8)..=20);
        let x: Vec<Vec<f64>> = (0..c).map(|_| (0..p).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let mut best = 0.0f64;
        subsets(c, n, 0, &mut Vec::new(), &mut |s| best = best.max(info_det(&x, s)));
        let sel = federov_select(&Matrix::from_rows(&x), n, 200, inst).map_err(|e| format!("instance {inst}: {e}"))?;
        let mut idx = sel.indices.clone();
        idx.dedup();
        ensure(idx.len() == n, || format!("instance {inst}: repeated rows"))?;
        let ratio = info_det(&x, &sel.indices) / best;
        worst = worst.min(ratio);
    }
    ensure(worst >= 0.99, || format!("worst det ratio {worst:.4}"))?;
    Ok(format!("worst det(X'X) ratio to the exhaustive optimum {worst:.4} over 50 instances"))
}

// ------------------------------------------------------- balanced allocation

/// Log-weighted shares with iterative capping, written from the definition.
fn allocation_oracle(freqs: &BTreeMap<String, usize>, n: usize) -> (BTreeMap<String, f64>, Vec<String>) {
    let mut capped: Vec<String> = Vec::new();
    loop {
        let left = n as f64 - capped.iter().map(|p| freqs[p] as f64).sum::<f64>();
        let wsum: f64 = freqs.iter().filter(|(p, _)| !capped.contains(p)).map(|(_, &f)| (1.0 + f as f64).ln()).sum();
        let raw: BTreeMap<String, f64> = freqs
            .iter()
            .map(|(p, &f)| {
                let v = if capped.contains(p) { f as f64 } else { left * (1.0 + f as f64).ln() / wsum };
                (p.clone(), v)
            })
            .collect();
        let over: Vec<String> = raw.iter().filter(|(p, &v)| !capped.contains(p) && v > freqs[*p] as f64).map(|(p, _)| p.clone()).collect();
        if over.is_empty() {
            return (raw, capped);
        }
        capped.extend(over);
    }
}

const PUBLISHED_PRESAMPLE: [(&str, usize); 16] = [
    ("CA", 1880),
    ("GELATIN", 1680),
    ("Nylon-6", 1600),
    ("PAN", 4320),
    ("PCL", 1720),
    ("PDLLA", 640),
    ("PEEK-sulfonated", 1160),
    ("PET", 480),
    ("PLA", 320),
    ("PMMA", 4760),
    ("PS", 1800),
    ("PU", 680),
    ("PVA", 6920),
    ("PVDF", 34920),
    ("PVP", 4880),
    ("Y_PGA", 720),
];

fn balanced_allocation() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(100);
    for case in 0..100 {
        let k = r.random_range(2..=16);
        let freqs: BTreeMap<String, usize> = (0..k).map(|i| (format!("P{i}"), r.random_range(1..5000))).collect();
        let total: usize = freqs.values().sum();
        let n = r.random_range(1..=total);
        let a = allocate_balanced(&freqs, n).map_err(|e| format!("case {case}: {e}"))?;
        ensure(a.allocations.values().sum::<usize>() == n, || format!("case {case}: sum differs from {n}"))?;
        let (raw, capped) = allocation_oracle(&freqs, n);
        for (p, &got) in &a.allocations {
            ensure(got <= freqs[p], || format!("case {case}: {p} exceeds availability"))?;
            if capped.contains(p) {
                ensure(got == freqs[p], || format!("case {case}: capped {p} got {got}"))?;
            } else {
                ensure((got as f64 - raw[p]).abs() < 1.0, || format!("case {case}: {p} got {got}, raw {:.3}", raw[p]))?;
            }
        }
    }
    let pre: BTreeMap<String, usize> = PUBLISHED_PRESAMPLE.iter().map(|(p, f)| (p.to_string(), *f)).collect();
    let a = allocate_balanced(&pre, 10_000).map_err(|e| e.to_string())?;
    ensure(a.allocations["PET"] == 480 && a.allocations["PLA"] == 320, || {
        format!("PET {} PLA {}", a.allocations["PET"], a.allocations["PLA"])
    })?;
    Ok(format!(
        "100 random vectors match the capped log-share oracle; published presample, budget 10000, gives PET {} and PLA {}",
        a.allocations["PET"], a.allocations["PLA"]
    ))
}

// -------------------------------------------------------------------- Sobol

fn sobol_structure() -> Outcome {
    for m in [3u32, 4, 5] {
        let cells = 1usize << m;
        // The skipped origin completes the first 2^m points.
        let mut pts = vec![vec![0.0; 2]];
        pts.extend(sobol_points(2, cells - 1).map_err(|e| e.to_string())?);
        for a in 0..=m {
            let (bx, by) = (1usize << a, 1usize << (m - a));
            let mut count = vec![0usize; cells];
            for p in &pts {
                let i = (p[0] * bx as f64) as usize;
                let j = (p[1] * by as f64) as usize;
                count[i * by + j] += 1;
            }
            ensure(count.iter().all(|&c| c == 1), || format!("m={m}: box shape {bx}x{by} not one point per box"))?;
        }
    }
    let sobol = sobol_points(2, 256).map_err(|e| e.to_string())?;
    let disc = |pts: &[Vec<f64>]| {
        // Star discrepancy evaluated on a 16x16 anchor grid.
        let mut worst: f64 = 0.0;
        for i in 1..=16 {
            for j in 1..=16 {
                let (tx, ty) = (i as f64 / 16.0, j as f64 / 16.0);
                let inside = pts.iter().filter(|p| p[0] < tx && p[1] < ty).count() as f64 / pts.len() as f64;
                worst = worst.max((inside - tx * ty).abs());
            }
        }
        worst
    };
    let ds = disc(&sobol);
    let wins = (0..100u64)
        .filter(|&seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let pr: Vec<Vec<f64>> = (0..256).map(|_| vec![r.random(), r.random()]).collect();
            ds < disc(&pr)
        })
        .count();
    ensure(wins >= 95, || format!("Sobol won only {wins}/100"))?;
    Ok(format!("(0,m,2)-net boxes exact for m=3,4,5; Sobol discrepancy {ds:.4} beats pseudo-random in {wins}/100 seeds"))
}

// ---------------------------------------------------------- learner ordering

fn learner_ordering() -> Outcome {
    let ds = synth::generate(5000, 0.05, 7).map_err(|e| e.to_string())?;
    let reg = LearnerRegistry::default();
    let learners: Vec<_> = ["linear", "random-forest", "boosting"].iter().map(|n| reg.get(n).unwrap()).collect();
    let cfg = EvalConfig { folds: 5, ..EvalConfig::default() };
    let b = benchmark(&ds, &learners, &cfg).map_err(|e| e.to_string())?;
    let r2 = |name: &str| {
        b.report.entries.iter().find(|e| e.learner == name && e.test.is_some()).and_then(|e| e.test.and_then(|t| t.r2)).unwrap_or(f64::NAN)
    };
    let (lin, rf, gb) = (r2("linear"), r2("random-forest"), r2("boosting"));
    let best = b.report.best_entry().ok_or("no best model")?;
    let delta = best.deltas.and_then(|d| d.r2).map(f64::abs).unwrap_or(f64::NAN);
    ensure(rf >= 0.90 && gb >= 0.90, || format!("forest {rf:.4}, boosting {gb:.4}"))?;
    ensure(lin <= rf.min(gb) - 0.25, || format!("linear {lin:.4} too close"))?;
    ensure(delta < 0.05, || format!("winner |test-cv R2| {delta:.4}"))?;
    Ok(format!("test R2: linear {lin:.3}, forest {rf:.3}, boosting {gb:.3}; winner {} |dR2| {delta:.4}", best.id()))
}

// ----------------------------------------------------------------- chemistry

fn chemistry() -> Outcome {
    ensure(
        Strictness::ALL.iter().map(|s| s.threshold()).collect::<Vec<_>>() == vec![0.0, 20.0, 30.0],
        || "strictness thresholds differ from {0, 20, 30}".into(),
    )?;
    let mut t = SolubilityTable::new();
    t.insert("P", "ok", SolubilityEntry { rating: Rating::Ok, max_pct: None });
    t.insert("P", "cond40", SolubilityEntry { rating: Rating::Cond, max_pct: Some(40.0) });
    t.insert("P", "cond", SolubilityEntry { rating: Rating::Cond, max_pct: None });
    t.insert("P", "no", SolubilityEntry { rating: Rating::No, max_pct: None });
    for mode in Strictness::ALL {
        let th = mode.threshold();
        for allow in [0.0, 10.0, 35.0] {
            let pol = StrictnessPolicy::new(mode, allow).unwrap();
            let f = |s: &str, r: f64| pair_feasible("P", s, r, &pol, &t).feasible;
            let up = |v: f64| v + 1e-9;
            ensure(f("ok", 100.0) && f("ok", 0.0), || "OK branch".into())?;
            ensure(f("cond40", 40.0) && !f("cond40", up(40.0)), || "COND with max_pct boundary".into())?;
            ensure(f("cond", th) && !f("cond", up(th)), || format!("COND without max_pct at {th}"))?;
            ensure(f("no", allow) && !f("no", up(allow)), || format!("NO branch at allowance {allow}"))?;
            ensure(f("unknown", th) && !f("unknown", up(th)), || format!("unrated pair at {th}"))?;
        }
    }
    // row flag: worst of the present solvents, unrated counts as COND.
    let names = ["ok", "cond", "no", "unknown"];
    let grade = |s: &str| match s {
        "ok" => 0,
        "no" => 2,
        _ => 1,
    };
    for a in names {
        for b in names {
            for c in names {
                let want = [grade(a), grade(b), grade(c)].into_iter().max().unwrap();
                let got = match row_flag("P", [a, b, c], &t) {
                    Rating::Ok => 0,
                    Rating::Cond => 1,
                    Rating::No => 2,
                };
                ensure(got == want, || format!("row flag {a},{b},{c}"))?;
            }
        }
    }
    ensure(row_flag("P", ["ok"], &t) == Rating::Ok, || "single OK".into())?;
    // monotone acceptance on random mixtures
    let tables = FeasibilityTables { solubility: t, incompatibility: IncompatibilityTable::new() };
    let pool = ["ok", "cond40", "cond", "no", "unknown"];
    let mut r = ChaCha8Rng::seed_from_u64(1000);
    let mut counts = [0usize; 3];
    for _ in 0..1000 {
        let k = r.random_range(1..=3);
        let mut cuts: Vec<f64> = (0..k - 1).map(|_| r.random_range(0.0..100.0)).collect();
        cuts.sort_by(f64::total_cmp);
        let mut bounds = vec![0.0];
        bounds.extend(cuts);
        bounds.push(100.0);
        let mix: Vec<(&str, f64)> = (0..k).map(|i| (pool[r.random_range(0..pool.len())], bounds[i + 1] - bounds[i])).collect();
        let allow = r.random_range(0.0..40.0);
        let acc: Vec<bool> = Strictness::ALL
            .iter()
            .map(|&m| mixture_feasible(&mix, "P", &StrictnessPolicy::new(m, allow).unwrap(), &tables).accepted)
            .collect();
        ensure(acc[0] <= acc[1] && acc[1] <= acc[2], || format!("non-monotone for {mix:?}"))?;
        for (c, a) in counts.iter_mut().zip(&acc) {
            *c += *a as usize;
        }
    }
    Ok(format!("all branches exact at boundaries; 64-case flag table; acceptance strict/balanced/lax = {counts:?} of 1000"))
}

// ----------------------------------------------------------------------- IMC

struct Memorizer(HashMap<String, (f64, usize)>);

impl Memorizer {
    fn key(x: &ProcessInputs) -> String {
        serde_json::to_string(x).unwrap()
    }
    fn new(ds: &SpinDataset) -> Self {
        let mut m: HashMap<String, (f64, usize)> = HashMap::new();
        for r in ds.records() {
            let e = m.entry(Self::key(&r.inputs)).or_default();
            e.0 += r.fiber_diameter;
            e.1 += 1;
        }
        Memorizer(m)
    }
}

impl Predictor for Memorizer {
    fn predict_inputs(&self, rows: &[ProcessInputs]) -> elspin_core::Result<Vec<f64>> {
        Ok(rows.iter().map(|x| self.0.get(&Self::key(x)).map_or(f64::NAN, |(s, n)| s / *n as f64)).collect())
    }
}

fn imc_exactness() -> Outcome {
    let ds = SpinDataset::load(fixture("frozen_500.csv"), &LoadOptions::default()).map_err(|e| e.to_string())?;
    let canon = elspin_core::canon::SolventCanon::default();
    let tables = FeasibilityTables::load(fixture("solubility.csv"), Some(&fixture("incompatible.csv")), &canon).map_err(|e| e.to_string())?;
    let (inputs, y) = (ds.inputs(), ds.outcomes());
    let recipe = Recipe::fit(&inputs, Some(&y), RecipeOptions::default()).map_err(|e| e.to_string())?;
    let x = recipe.apply(&inputs).map_err(|e| e.to_string())?;
    let l = LearnerRegistry::default().get("boosting").unwrap();
    let model = l.train(&l.default_grid(x.ncols())[0], &x, &y, 1).map_err(|e| e.to_string())?;
    let bundle = ModelBundle::new(recipe, model, TrainingMetadata::default());

    let mut runs = 0;
    for mode in [ImcMode::Experimental, ImcMode::Optimization] {
        for strict in Strictness::ALL {
            for (polymer, target) in [("PVDF", 450.0), ("PCL", 650.0), ("PLA", 700.0)] {
                let mut cfg = ImcConfig::new(mode, polymer, target, 60.0, 10_000);
                cfg.policy = StrictnessPolicy::new(strict, 10.0).unwrap();
                cfg.seed = 17;
                let run = run_imc(&cfg, &bundle, &ds, &tables).map_err(|e| e.to_string())?;
                let s = &run.summary;
                let accepted: Vec<_> = run.draws.iter().filter(|d| d.accepted).collect();
                let again = bundle.predict_inputs(&accepted.iter().map(|d| d.inputs.clone()).collect::<Vec<_>>()).map_err(|e| e.to_string())?;
                ensure(accepted.iter().zip(&again).all(|(d, p)| d.prediction.map(f64::to_bits) == Some(p.to_bits())), || {
                    "stored predictions differ from a fresh predict".into()
                })?;
                let hits = again.iter().filter(|p| (*p - target).abs() <= 60.0).count();
                ensure(s.accepted == accepted.len() && s.successes == hits, || format!("{mode} {strict} {polymer}: counts"))?;
                let p_acc = accepted.len() as f64 / 10_000.0;
                let p_succ = (!accepted.is_empty()).then(|| hits as f64 / accepted.len() as f64);
                ensure(s.success_probability == p_succ, || format!("{mode} {strict} {polymer}: success probability"))?;
                let acc_ok = match mode {
                    ImcMode::Experimental => s.acceptance_rate.is_none(),
                    ImcMode::Optimization => s.acceptance_rate == Some(p_acc),
                };
                ensure(acc_ok, || format!("{mode} {strict} {polymer}: acceptance rate"))?;
                runs += 1;
            }
        }
    }

    // Fidelity: replaying observed rows reproduces the polymer's mean.
    let mem = Memorizer::new(&ds);
    let polymer = "PVDF";
    let obs: Vec<f64> = ds.indices_for_polymer(polymer).iter().map(|&i| ds.records()[i].fiber_diameter).collect();
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    let sd = (obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / obs.len() as f64).sqrt();
    let cfg = ImcConfig { seed: 5, ..ImcConfig::new(ImcMode::Experimental, polymer, 400.0, 50.0, 10_000) };
    let run = run_imc(&cfg, &mem, &ds, &tables).map_err(|e| e.to_string())?;
    let pm = run.summary.pred_mean.ok_or("no predictions")?;
    let se = sd / 10_000f64.sqrt();
    ensure((pm - mean).abs() <= 3.0 * se, || format!("pred mean {pm:.2} vs empirical {mean:.2} (3 SE = {:.2})", 3.0 * se))?;

    let a = serde_json::to_vec(&run.summary).unwrap();
    let b = serde_json::to_vec(&run_imc(&cfg, &mem, &ds, &tables).map_err(|e| e.to_string())?.summary).unwrap();
    ensure(a == b, || "summaries differ for the same seed".into())?;
    Ok(format!(
        "{runs} runs of 10000 draws recount exactly; {polymer} replay mean {pm:.1} vs observed {mean:.1} (|d| = {:.2} SE); identical seeds give identical bytes",
        (pm - mean).abs() / se
    ))
}

// -------------------------------------------------------------------- bundle

fn bundle_round_trip() -> Outcome {
    let ds = synth::generate(1000, 0.05, 99).map_err(|e| e.to_string())?;
    let (inputs, y) = (ds.inputs(), ds.outcomes());
    let recipe = Recipe::fit(&inputs, Some(&y), RecipeOptions::default()).map_err(|e| e.to_string())?;
    let x = recipe.apply(&inputs).map_err(|e| e.to_string())?;
    let l = LearnerRegistry::default().get("random-forest").unwrap();
    let model = l.train(&l.default_grid(x.ncols())[0], &x, &y, 3).map_err(|e| e.to_string())?;
    let b = ModelBundle::new(recipe, model, TrainingMetadata::default());
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.espn");
    b.save(&path).map_err(|e| e.to_string())?;
    let back = ModelBundle::load(&path).map_err(|e| e.to_string())?;
    let p1 = b.predict_inputs(&inputs).map_err(|e| e.to_string())?;
    let p2 = back.predict_inputs(&inputs).map_err(|e| e.to_string())?;
    ensure(p1.iter().zip(&p2).all(|(a, c)| a.to_bits() == c.to_bits()), || "predictions differ".into())?;
    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    let mut rejected = 0;
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 0x10;
    for bad in [bytes[..bytes.len() - 1].to_vec(), bytes[..bytes.len() / 3].to_vec(), flipped, Vec::new()] {
        rejected += ModelBundle::from_bytes(&bad).is_err() as usize;
    }
    ensure(rejected == 4, || format!("only {rejected}/4 corrupted files rejected"))?;
    Ok(format!("1000 predictions bit-identical after reload; 4/4 corrupted files rejected ({} bytes)", bytes.len()))
}

// ----------------------------------------------------------------------- CLI

fn cli_end_to_end() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_elspin");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let data = fixture("synthetic.csv");
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
        ensure(out.status.success(), || format!("`{}` failed: {}", args[0], String::from_utf8_lossy(&out.stderr)))
    };
    let p = |name: &str| d.join(name).display().to_string();
    let data_s = data.display().to_string();
    run(&["sample", "--data", &data_s, "--method", "balanced", "--n", "1200", "--seed", "3", "--out", &p("sample.csv")])?;
    run(&["train", "--data", &p("sample.csv"), "--learners", "linear,random-forest,boosting", "--folds", "3", "--seed", "3", "--out", &p("model.espn")])?;
    let sol = fixture("solubility.csv").display().to_string();
    run(&[
        "imc", "--bundle", &p("model.espn"), "--data", &data_s, "--mode", "optimization", "--polymer", "PVDF", "--target", "340",
        "--tol", "50", "--n", "5000", "--strictness", "balanced", "--solubility", &sol, "--out", &p("imc.json"),
    ])?;
    run(&["report", "--bundle", &p("model.espn"), "--imc", &p("imc.json"), "--out", &p("report.txt")])?;
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p("imc.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure(summary.get("acceptance_rate").is_some() && summary.get("success_probability").is_some(), || "summary fields missing".into())?;
    let report = std::fs::read_to_string(p("report.txt")).map_err(|e| e.to_string())?;
    for section in ["Metrics", "Diagnostics", "Flags", "Inverse Monte Carlo summary", "success probability"] {
        ensure(report.contains(section), || format!("report lacks `{section}`"))?;
    }
    Ok("sample -> train -> imc -> report exit 0; report has metrics, diagnostic flags and IMC sections".into())
}

// ---------------------------------------------------- published summary

fn pan_published_summary() -> Outcome {
    let path = std::env::var_os("ELSPIN_PUBLISHED_DATA").map(PathBuf::from).unwrap_or_else(|| fixture("published.csv"));
    if !path.exists() {
        return Ok(format!("SKIP published dataset not found at {}", path.display()));
    }
    let ds = SpinDataset::load(&path, &LoadOptions::default()).map_err(|e| e.to_string())?;
    let pan = ds.describe(true).into_iter().find(|s| s.polymer.eq_ignore_ascii_case("PAN")).ok_or("no PAN rows")?;
    let (dm, dmed) = ((pan.mean - 210.454).abs() / 210.454, (pan.median - 201.735).abs() / 201.735);
    ensure(dm <= 0.005 && dmed <= 0.005, || format!("PAN mean {:.3} median {:.3}", pan.mean, pan.median))?;
    Ok(format!("PAN mean {:.3} median {:.3}", pan.mean, pan.median))
}

fn main() {
    let criteria = [
        Criterion { name: "metrics exactness", budget: Duration::from_secs(1), run: metrics_exactness },
        Criterion { name: "D-optimality", budget: Duration::from_secs(10), run: d_optimality },
        Criterion { name: "balanced allocation", budget: Duration::from_secs(1), run: balanced_allocation },
        Criterion { name: "Sobol structure", budget: Duration::from_secs(5), run: sobol_structure },
        Criterion { name: "learner ordering", budget: Duration::from_secs(120), run: learner_ordering },
        Criterion { name: "chemistry table", budget: Duration::from_secs(1), run: chemistry },
        Criterion { name: "IMC exactness", budget: Duration::from_secs(30), run: imc_exactness },
        Criterion { name: "bundle round-trip", budget: Duration::from_secs(5), run: bundle_round_trip },
        Criterion { name: "end-to-end CLI", budget: Duration::from_secs(180), run: cli_end_to_end },
        Criterion { name: "PAN published summary (optional)", budget: Duration::from_secs(60), run: pan_published_summary },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let res = (c.run)();
        let dt = t.elapsed();
        let line = match res {
            Ok(msg) if msg.starts_with("SKIP") => format!("SKIP {} ({:.2?}): {}", c.name, dt, &msg[5..]),
            Ok(msg) if dt <= c.budget => format!("PASS {} ({:.2?}): {msg}", c.name, dt),
            Ok(msg) => {
                failed += 1;
                format!("FAIL {} ({:.2?} > budget {:?}): {msg}", c.name, dt, c.budget)
            }
            Err(msg) => {
                failed += 1;
                format!("FAIL {} ({:.2?}): {msg}", c.name, dt)
            }
        };
        println!("{line}");
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
