//! Synthetic electrospinning data with a known, nonlinear diameter law.
//! Used for fixtures, benchmarks and tests; no relation to measured data.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{ProcessInputs, SpinDataset, SpinRecord};
use crate::error::Result;
use crate::rng;
use crate::sampling::sample_ratios;

struct PolymerSpec {
    name: &'static str,
    weight: f64,
    base_nm: f64,
    conc: (f64, f64),
    solvents: &'static [&'static str],
}

const POLYMERS: [PolymerSpec; 7] = [
    PolymerSpec { name: "PVDF", weight: 0.33, base_nm: 380.0, conc: (8.0, 20.0), solvents: &["dmf", "acetone", "dmac"] },
    PolymerSpec { name: "PAN", weight: 0.16, base_nm: 290.0, conc: (6.0, 14.0), solvents: &["dmf", "dmac", "dmso"] },
    PolymerSpec { name: "PVA", weight: 0.13, base_nm: 240.0, conc: (6.0, 16.0), solvents: &["water", "ethanol"] },
    PolymerSpec { name: "PMMA", weight: 0.12, base_nm: 520.0, conc: (8.0, 20.0), solvents: &["chloroform", "dmf", "thf", "acetone"] },
    PolymerSpec { name: "PCL", weight: 0.11, base_nm: 610.0, conc: (8.0, 18.0), solvents: &["chloroform", "dcm", "methanol", "dmf"] },
    PolymerSpec { name: "PS", weight: 0.09, base_nm: 820.0, conc: (10.0, 25.0), solvents: &["thf", "dmf"] },
    PolymerSpec { name: "PLA", weight: 0.06, base_nm: 700.0, conc: (6.0, 14.0), solvents: &["chloroform", "dcm", "acetone"] },
];

fn solvent_factor(s: &str) -> f64 {
    match s {
        "dmf" => 1.0,
        "dmac" => 1.1,
        "dmso" => 1.25,
        "acetone" => 0.8,
        "water" => 0.9,
        "ethanol" => 0.75,
        "chloroform" => 1.35,
        "dcm" => 1.2,
        "methanol" => 0.7,
        "thf" => 1.15,
        _ => 1.0,
    }
}

/// Noise-free diameter (nm) for a configuration. Unknown polymers use a
/// neutral base of 400 nm; missing settings take mid-range defaults.
pub fn diameter_law(x: &ProcessInputs) -> f64 {
    let spec = POLYMERS.iter().find(|p| p.name == x.polymer);
    let base = spec.map_or(400.0, |p| p.base_nm);
    let mid_conc = spec.map_or(12.0, |p| 0.5 * (p.conc.0 + p.conc.1));
    let c = x.solution_concentration.unwrap_or(mid_conc) / mid_conc;
    let v = x.voltage.unwrap_or(17.0);
    let q = x.flow_rate.unwrap_or(1.0);
    let d = x.distance.unwrap_or(17.0);
    let h = x.humidity.unwrap_or(50.0);
    let rpm = x.rotation_speed.unwrap_or(0.0);
    let solvent: f64 = x.solvent_mix().iter().map(|(s, r)| solvent_factor(s) * r / 100.0).sum();
    let solvent = if solvent > 0.0 { solvent } else { 1.0 };

    let u = (d - 17.0) / 6.0;
    let core = base * solvent.sqrt() + 300.0 * (c - 1.0) + 250.0 * (c - 1.0).powi(2);
    let distance_term = 500.0 * u * u;
    let field_term = -100.0 * (-((v - 17.0) / 3.0).powi(2)).exp();
    let flow_term = 60.0 * ((q - 1.5) / 0.2).tanh();
    let humidity_term = 80.0 * ((h - 50.0) / 3.0).tanh();
    let rotation_term = -60.0 * (rpm / 2000.0).min(1.0);
    (core + distance_term + field_term + flow_term + humidity_term + rotation_term).max(20.0)
}

/// `n` synthetic records; deterministic per seed. Multiplicative Gaussian
/// noise with relative sd `noise`.
pub fn generate(n: usize, noise: f64, seed: u64) -> Result<SpinDataset> {
    let mut r = rng::seeded(seed);
    let eps = Normal::new(0.0, noise.max(0.0)).expect("finite sd");
    let weights: Vec<f64> = POLYMERS.iter().map(|p| p.weight).collect();
    let total_w: f64 = weights.iter().sum();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let mut u = r.random::<f64>() * total_w;
        let spec = POLYMERS
            .iter()
            .find(|p| {
                u -= p.weight;
                u < 0.0
            })
            .unwrap_or(&POLYMERS[0]);
        let mut x = ProcessInputs::new(spec.name);
        let k_draw: f64 = r.random();
        let k = if k_draw < 0.75 { 1 } else if k_draw < 0.95 { 2 } else { 3 }.min(spec.solvents.len());
        let chosen: Vec<&&str> = spec.solvents.choose_multiple(&mut r, k).collect();
        let ratios = sample_ratios(k, None, &mut r)?;
        let mut acc = 0.0;
        for (slot, s) in chosen.iter().enumerate() {
            x.solvents[slot] = Some(s.to_string());
            let v = if slot + 1 == k { 100.0 - acc } else { (ratios[slot] * 10.0).round() / 10.0 };
            x.ratios[slot] = round_to(v, 1);
            acc += x.ratios[slot];
        }
        x.solution_concentration = Some(round_to(r.random_range(spec.conc.0..spec.conc.1), 2));
        x.needle_diameter = Some(*[0.41, 0.51, 0.6, 0.84, 1.07].choose(&mut r).expect("non-empty"));
        let drum = r.random::<f64>() < 0.35;
        x.collector_type = Some(if drum { "Drum" } else { "Flat" }.to_string());
        x.rotation_speed = drum.then(|| round_to(r.random_range(200.0..2500.0), 0));
        x.voltage = Some(round_to(r.random_range(8.0..26.0), 1));
        x.flow_rate = Some(round_to(r.random_range(0.2..3.0), 2));
        x.distance = Some(round_to(r.random_range(8.0..26.0), 1));
        x.temperature = (r.random::<f64>() > 0.1).then(|| round_to(r.random_range(18.0..32.0), 1));
        x.humidity = (r.random::<f64>() > 0.1).then(|| round_to(r.random_range(25.0..75.0), 1));
        let mu = diameter_law(&x);
        let y = (mu * (1.0 + eps.sample(&mut r))).max(5.0);
        records.push(SpinRecord {
            doi: Some(format!("10.5555/synthetic.{:04}", i / 25)),
            inputs: x,
            fiber_diameter: round_to(y, 2),
        });
    }
    SpinDataset::from_records(records)
}

fn round_to(v: f64, digits: i32) -> f64 {
    let f = 10f64.powi(digits);
    (v * f).round() / f
}
