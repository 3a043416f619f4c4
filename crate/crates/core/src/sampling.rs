//! Deterministic state sampling over boxes: regular grids plus Halton points.

use crate::dynsys::{CoordKind, SystemDef};
use crate::error::{Error, Result};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

const PRIMES: [u32; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Axis-aligned box `[lo_i, hi_i]` in chart coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl StateBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidInput("box bounds must have equal nonzero length".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidInput("box bounds must be finite with lo <= hi".into()));
        }
        Ok(StateBox { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    /// Whether axis `i` covers a whole circle, in which case grids treat it
    /// as periodic and never repeat the endpoint.
    pub fn is_periodic_axis(&self, i: usize, kinds: &[CoordKind]) -> bool {
        kinds.get(i) == Some(&CoordKind::Circle) && (self.hi[i] - self.lo[i] - TAU).abs() < 1e-9
    }

    /// Node coordinates along axis `i`.
    pub fn axis_nodes(&self, i: usize, res: usize, periodic: bool) -> Vec<f64> {
        let (a, b) = (self.lo[i], self.hi[i]);
        if res <= 1 {
            return vec![if periodic { a } else { 0.5 * (a + b) }];
        }
        if periodic {
            (0..res).map(|k| a + (b - a) * k as f64 / res as f64).collect()
        } else {
            (0..res).map(|k| a + (b - a) * k as f64 / (res - 1) as f64).collect()
        }
    }

    /// Regular grid, first axis varying slowest.
    pub fn grid(&self, res: &[usize], kinds: &[CoordKind]) -> Vec<DVector<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|i| self.axis_nodes(i, res[i.min(res.len() - 1)], self.is_periodic_axis(i, kinds)))
            .collect();
        cartesian(&axes)
    }

    /// Halton points `skip..skip+count` scaled into the box.
    pub fn halton(&self, count: usize, skip: usize) -> Vec<DVector<f64>> {
        (skip..skip + count)
            .map(|k| {
                DVector::from_fn(self.dim(), |i, _| {
                    let r = halton(k as u64 + 1, PRIMES[i % PRIMES.len()]);
                    self.lo[i] + r * (self.hi[i] - self.lo[i])
                })
            })
            .collect()
    }
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<DVector<f64>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for v in axis {
                let mut p = prefix.clone();
                p.push(*v);
                next.push(p);
            }
        }
        out = next;
    }
    out.into_iter().map(DVector::from_vec).collect()
}

/// Radical inverse of `index` in `base`.
pub fn halton(mut index: u64, base: u32) -> f64 {
    let b = base as u64;
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= b as f64;
        r += f * (index % b) as f64;
        index /= b;
    }
    r
}

/// Grid nodes plus `extra` Halton points, keeping only states where the
/// chart is valid and the cone field is defined.
pub fn sample_states(sys: &SystemDef, region: &StateBox, res: &[usize], extra: usize) -> Result<Vec<DVector<f64>>> {
    if region.dim() != sys.dim() {
        return Err(Error::InvalidInput("sampling box dimension mismatch".into()));
    }
    let kinds = &sys.topology().kinds;
    let mut states = region.grid(res, kinds);
    states.extend(region.halton(extra, 0));
    Ok(states
        .into_iter()
        .filter_map(|x| {
            let (x, _) = sys.chart_normalize(&x).ok()?;
            sys.cone_field().cone_at(&x).ok()?;
            Some(x)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_base_two() {
        let seq: Vec<f64> = (1..=4).map(|i| halton(i, 2)).collect();
        assert_eq!(seq, vec![0.5, 0.25, 0.75, 0.125]);
    }

    #[test]
    fn periodic_grid_skips_endpoint() {
        let b = StateBox::new(vec![0.0, -3.0], vec![TAU, 3.0]).unwrap();
        let kinds = [CoordKind::Circle, CoordKind::Line];
        let g = b.grid(&[4, 3], &kinds);
        assert_eq!(g.len(), 12);
        assert!(g.iter().all(|x| x[0] < TAU));
        assert!(g.iter().any(|x| x[0] == 0.0 && x[1] == 0.0));
    }

    #[test]
    fn single_node_is_midpoint() {
        let b = StateBox::new(vec![-1.0], vec![3.0]).unwrap();
        assert_eq!(b.grid(&[1], &[CoordKind::Line])[0][0], 1.0);
    }

    #[test]
    fn bad_boxes() {
        assert!(StateBox::new(vec![1.0], vec![0.0]).is_err());
        assert!(StateBox::new(vec![0.0], vec![0.0, 1.0]).is_err());
    }
}
