//! Deterministic search lattices over a punctured ball `B_r^×(center)`.
//!
//! Directions come from a Halton sequence pushed through Box–Muller pairs and
//! normalized, so the first `D` directions of a larger budget are exactly the
//! `D` directions of a smaller one. Radii follow the nested sequence
//! `ρ_j = r·10^{−3 v_j}` with `v = 0, 1, ½, ¼, ¾, …` (van der Corput after
//! the two endpoints), which covers `[10⁻³r, r]` on a log scale and is also
//! prefix-stable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::norm;
use crate::rng::box_muller;

/// Smallest searched radius as a fraction of `r`.
pub const MIN_RADIUS_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchBudget {
    pub directions: usize,
    pub radii: usize,
    /// Rounds of compass pattern search after the lattice scan.
    pub refine_steps: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self {
            directions: 64,
            radii: 8,
            refine_steps: 20,
        }
    }
}

impl SearchBudget {
    pub fn validate(&self) -> Result<()> {
        if self.directions == 0 || self.radii == 0 {
            return Err(Error::InvalidArgument(
                "search budget needs at least one direction and one radius".into(),
            ));
        }
        Ok(())
    }
}

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut c = 2u64;
    while out.len() < count {
        if out.iter().take_while(|&&q| q * q <= c).all(|&q| !c.is_multiple_of(q)) {
            out.push(c);
        }
        c += 1;
    }
    out
}

/// Radical inverse of `index` in the given base.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let (mut f, mut r) = (inv, 0.0);
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

/// First `count` quasi-uniform unit vectors in ℝ^dim. For `dim = 1` these alternate ±1.
pub fn sphere_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    if dim == 1 {
        return (0..count)
            .map(|j| vec![if j % 2 == 0 { 1.0 } else { -1.0 }])
            .collect();
    }
    let pairs = dim.div_ceil(2);
    let bases = primes(2 * pairs);
    let mut out = Vec::with_capacity(count);
    let mut index = 1u64;
    while out.len() < count {
        let mut v = Vec::with_capacity(2 * pairs);
        for q in 0..pairs {
            let u1 = radical_inverse(index, bases[2 * q]);
            let u2 = radical_inverse(index, bases[2 * q + 1]);
            let (a, b) = box_muller(u1.max(f64::MIN_POSITIVE), u2);
            v.push(a);
            v.push(b);
        }
        v.truncate(dim);
        index += 1;
        let n = norm(&v);
        if n > 1e-12 {
            out.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    out
}

/// First `count` radii of the nested log-scale sequence in `[10⁻³r, r]`.
pub fn radius_sequence(r: f64, count: usize) -> Vec<f64> {
    let decades = -MIN_RADIUS_FRACTION.log10();
    (0..count)
        .map(|j| {
            let v = match j {
                0 => 0.0,
                1 => 1.0,
                _ => radical_inverse((j - 1) as u64, 2),
            };
            r * 10f64.powf(-decades * v)
        })
        .collect()
}

/// A point `center + ρ·u` of the lattice, stored as the offset `ρ·u`.
pub fn lattice_offsets(dim: usize, r: f64, budget: &SearchBudget) -> Vec<Vec<f64>> {
    let dirs = sphere_directions(dim, budget.directions);
    let radii = radius_sequence(r, budget.radii);
    let mut out = Vec::with_capacity(dirs.len() * radii.len());
    for u in &dirs {
        for &rho in &radii {
            out.push(u.iter().map(|x| rho * x).collect());
        }
    }
    out
}

/// Compass pattern search maximizing `f` over offsets `δ` with
/// `10⁻³r ≤ ‖δ‖ ≤ r`, started at `start` with value `f_start`.
///
/// Each round polls `±h·e_i`; on no improvement `h` halves. Returns the best
/// offset and value; the value never falls below `f_start`.
pub fn pattern_search_max<F>(f: F, start: &[f64], f_start: f64, r: f64, rounds: usize) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    use rayon::prelude::*;
    let p = start.len();
    let lo = MIN_RADIUS_FRACTION * r;
    let mut best = start.to_vec();
    let mut best_val = f_start;
    let mut h = 0.25 * norm(start).max(lo);
    for _ in 0..rounds {
        let polls: Vec<Vec<f64>> = (0..2 * p)
            .filter_map(|m| {
                let mut c = best.clone();
                c[m / 2] += if m % 2 == 0 { h } else { -h };
                let nc = norm(&c);
                if nc < lo {
                    return None;
                }
                if nc > r {
                    c.iter_mut().for_each(|x| *x *= r / nc);
                }
                Some(c)
            })
            .collect();
        let vals: Vec<f64> = polls.par_iter().map(|c| f(c)).collect();
        // Best poll wins; ties go to the earliest, for determinism.
        let mut improved = false;
        let mut top = best_val;
        let mut arg = None;
        for (i, &v) in vals.iter().enumerate() {
            if v > top {
                top = v;
                arg = Some(i);
            }
        }
        if let Some(i) = arg {
            best = polls[i].clone();
            best_val = top;
            improved = true;
        }
        if !improved {
            h *= 0.5;
            if h < 1e-6 * lo {
                break;
            }
        }
    }
    (best, best_val)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directions_are_unit_and_prefix_stable() {
        let a = sphere_directions(5, 16);
        let b = sphere_directions(5, 32);
        assert_eq!(a[..], b[..16]);
        for u in &b {
            assert!((norm(u) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn one_dimensional_directions_alternate() {
        assert_eq!(sphere_directions(1, 3), vec![vec![1.0], vec![-1.0], vec![1.0]]);
    }

    #[test]
    fn radii_span_three_decades_and_nest() {
        let r = radius_sequence(2.0, 6);
        assert_eq!(r[0], 2.0);
        assert!((r[1] - 2e-3).abs() < 1e-15);
        assert_eq!(radius_sequence(2.0, 3)[..], r[..3]);
        assert!(r.iter().all(|&x| (2e-3 - 1e-15..=2.0).contains(&x)));
    }

    #[test]
    fn halton_directions_cover_the_circle() {
        // Every quarter of the circle gets at least one of 16 directions.
        let dirs = sphere_directions(2, 16);
        for q in 0..4 {
            let hit = dirs.iter().any(|u| {
                let a = u[1].atan2(u[0]).rem_euclid(std::f64::consts::TAU);
                (a / std::f64::consts::FRAC_PI_2).floor() as usize == q
            });
            assert!(hit, "quadrant {q} empty");
        }
    }

    #[test]
    fn pattern_search_climbs_to_boundary() {
        // f increases along e₀, so the optimum is r·e₀.
        let (x, v) = pattern_search_max(|d| d[0], &[0.1, 0.1], 0.1, 1.0, 200);
        assert!(v > 0.999, "{v} at {x:?}");
    }
}
