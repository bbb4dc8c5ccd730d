//! Sobol low-discrepancy sequence (Gray-code construction, unscrambled).

use crate::error::{Error, Result};

const BITS: usize = 32;

/// (degree s, polynomial coefficients a, initial direction numbers m) for
/// dimensions 2..=21, from the new-joe-kuo-6.21201 table. Dimension 1 is the
/// van der Corput sequence.
const DIRECTION_TABLE: [(u32, u32, &[u32]); 20] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
];

pub const MAX_DIMENSION: usize = DIRECTION_TABLE.len() + 1;

fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = 1 << (BITS - 1 - i);
        }
        return v;
    }
    let (s, a, m) = DIRECTION_TABLE[dim - 1];
    let s = s as usize;
    for i in 0..s.min(BITS) {
        v[i] = m[i] << (BITS - 1 - i);
    }
    for i in s..BITS {
        let mut x = v[i - s] ^ (v[i - s] >> s);
        for k in 1..s {
            if (a >> (s - 1 - k)) & 1 == 1 {
                x ^= v[i - k];
            }
        }
        v[i] = x;
    }
    v
}

/// Deterministic Sobol point stream over `[0,1)^d`.
#[derive(Debug, Clone)]
pub struct SobolStream {
    directions: Vec<[u32; BITS]>,
    state: Vec<u32>,
    /// Index of the next point in the full sequence (0 is the origin).
    index: u64,
}

impl SobolStream {
    /// Stream positioned just after the all-zeros point, advanced by a
    /// further `offset` points.
    pub fn new(dimension: usize, offset: u64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::invalid("Sobol dimension must be at least 1"));
        }
        if dimension > MAX_DIMENSION {
            return Err(Error::invalid(format!(
                "Sobol dimension {dimension} exceeds direction table ({MAX_DIMENSION})"
            )));
        }
        let mut s = SobolStream {
            directions: (0..dimension).map(direction_numbers).collect(),
            state: vec![0; dimension],
            index: 1,
        };
        for _ in 0..offset {
            s.advance();
        }
        Ok(s)
    }

    pub fn dimension(&self) -> usize {
        self.directions.len()
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    // Gray-code update: point `index` = point `index-1` xor v[c], where c is
    // the position of the lowest zero bit of `index-1`.
    fn advance(&mut self) {
        let c = (self.index - 1).trailing_ones() as usize;
        for (x, v) in self.state.iter_mut().zip(&self.directions) {
            *x ^= v[c];
        }
        self.index += 1;
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        self.advance();
        self.state
            .iter()
            .map(|&x| x as f64 / (1u64 << BITS) as f64)
            .collect()
    }

    pub fn take_points(&mut self, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.next_point()).collect()
    }
}

/// First `n` points (origin skipped) of the `d`-dimensional sequence.
pub fn sobol_points(d: usize, n: usize) -> Result<Vec<Vec<f64>>> {
    Ok(SobolStream::new(d, 0)?.take_points(n))
}

/// Affine map of unit-cube coordinates onto per-variable `(min, max)` ranges.
pub fn scale_to_ranges(points: &[Vec<f64>], ranges: &[(f64, f64)]) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|u| {
            u.iter()
                .zip(ranges)
                .map(|(&t, &(lo, hi))| if lo == hi { lo } else { lo + t * (hi - lo) })
                .collect()
        })
        .collect()
}

/// Star-discrepancy proxy on a `cells x cells` grid: max over grid corners of
/// |empirical box fraction - box volume|.
pub fn grid_discrepancy(points: &[Vec<f64>], cells: usize) -> f64 {
    let n = points.len() as f64;
    let mut worst: f64 = 0.0;
    for i in 1..=cells {
        for j in 1..=cells {
            let (tx, ty) = (i as f64 / cells as f64, j as f64 / cells as f64);
            let inside = points.iter().filter(|p| p[0] < tx && p[1] < ty).count() as f64;
            worst = worst.max((inside / n - tx * ty).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn first_seven_points_in_dim_one_are_eighths() {
        let mut got: Vec<f64> = sobol_points(1, 7).unwrap().into_iter().map(|p| p[0]).collect();
        got.sort_by(f64::total_cmp);
        let want: Vec<f64> = (1..8).map(|k| k as f64 / 8.0).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn dyadic_set_property_every_dimension() {
        for m in [3u32, 4, 5] {
            let count = (1usize << m) - 1;
            let pts = sobol_points(MAX_DIMENSION, count).unwrap();
            for d in 0..MAX_DIMENSION {
                let mut ks: Vec<u64> = pts.iter().map(|p| (p[d] * (1u64 << m) as f64) as u64).collect();
                for p in &pts {
                    let scaled = p[d] * (1u64 << m) as f64;
                    assert_eq!(scaled.fract(), 0.0, "dim {d}, m {m}");
                }
                ks.sort_unstable();
                assert_eq!(ks, (1..(1u64 << m)).collect::<Vec<_>>(), "dim {d}, m {m}");
            }
        }
    }

    #[test]
    fn known_prefix_of_second_dimension() {
        // 1/2, 1/4 3/4, 3/8 ... for the Gray-code ordered unscrambled sequence
        let pts = sobol_points(2, 4).unwrap();
        assert_eq!(pts[0], vec![0.5, 0.5]);
        assert_eq!(pts[1], vec![0.75, 0.25]);
        assert_eq!(pts[2], vec![0.25, 0.75]);
        assert_eq!(pts[3], vec![0.375, 0.375]);
    }

    #[test]
    fn matches_reference_point_in_all_dimensions() {
        // point 1000 of the unscrambled sequence, as produced by scipy.stats.qmc.Sobol
        let want = [
            0.2197265625, 0.0966796875, 0.5185546875, 0.6767578125, 0.2802734375, 0.9072265625, 0.0458984375,
            0.8994140625, 0.5009765625, 0.0693359375, 0.0849609375, 0.2548828125, 0.1611328125, 0.3837890625,
            0.1435546875, 0.3701171875, 0.7197265625, 0.3447265625, 0.9912109375, 0.7255859375, 0.5224609375,
        ];
        let mut s = SobolStream::new(MAX_DIMENSION, 999).unwrap();
        assert_eq!(s.next_point(), want.to_vec());
    }

    #[test]
    fn empty_request_and_bad_dimension() {
        assert!(sobol_points(3, 0).unwrap().is_empty());
        assert!(SobolStream::new(0, 0).is_err());
        assert!(SobolStream::new(MAX_DIMENSION + 1, 0).is_err());
    }

    #[test]
    fn offset_skips_points() {
        let all = sobol_points(3, 10).unwrap();
        let mut s = SobolStream::new(3, 4).unwrap();
        assert_eq!(s.next_point(), all[4]);
    }

    #[test]
    fn points_stay_in_half_open_cube() {
        for p in sobol_points(8, 4096).unwrap() {
            assert!(p.iter().all(|&x| (0.0..1.0).contains(&x)));
        }
    }

    #[test]
    fn beats_pseudo_random_discrepancy() {
        let sobol = grid_discrepancy(&sobol_points(2, 256).unwrap(), 16);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pr: Vec<Vec<f64>> = (0..256).map(|_| vec![rng.random(), rng.random()]).collect();
        assert!(sobol < grid_discrepancy(&pr, 16));
    }

    #[test]
    fn scaling_is_affine() {
        let out = scale_to_ranges(&[vec![0.5, 0.0, 0.3]], &[(10.0, 22.0), (3.0, 9.0), (5.0, 5.0)]);
        assert_eq!(out[0], vec![16.0, 3.0, 5.0]);
        let near = scale_to_ranges(&[vec![1.0 - 1e-12]], &[(10.0, 22.0)]);
        assert!(near[0][0] < 22.0 && near[0][0] > 22.0 - 1e-9);
    }
}
