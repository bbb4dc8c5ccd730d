//! Solvent-ratio draws on the simplex.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

/// `k` percentages summing to 100, Dirichlet distributed with the given
/// concentration (`None` means the uniform all-ones vector).
pub fn sample_ratios<R: Rng + ?Sized>(k: usize, concentration: Option<&[f64]>, rng: &mut R) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::invalid("solvent count must be at least 1"));
    }
    let ones = vec![1.0; k];
    let alpha = concentration.unwrap_or(&ones);
    if alpha.len() != k || alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::invalid("Dirichlet parameters must be k positive values"));
    }
    if k == 1 {
        return Ok(vec![100.0]);
    }
    loop {
        let mut draws = Vec::with_capacity(k);
        for &a in alpha {
            let g = Gamma::new(a, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
            draws.push(g.sample(rng));
        }
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && draws.iter().all(|&d| d > 0.0) {
            let mut out: Vec<f64> = draws.iter().map(|d| 100.0 * d / sum).collect();
            // push rounding residue onto the largest part
            let resid = 100.0 - out.iter().sum::<f64>();
            let big = (0..k).max_by(|&a, &b| out[a].total_cmp(&out[b])).unwrap_or(0);
            out[big] += resid;
            return Ok(out);
        }
    }
}
