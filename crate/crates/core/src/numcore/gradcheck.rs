//! Central-difference verification of analytic gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numcore::tensor::Tensor2;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tol: f64,
    /// Check every coordinate up to this budget, else a seeded random
    /// subsample of this size.
    pub max_coords: usize,
    pub seed: u64,
    /// Skip coordinates with |θᵢ| below this (kink exclusion); 0 disables.
    pub skip_below: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            tol: 1e-4,
            max_coords: 200,
            seed: 0,
            skip_below: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
    /// (parameter index, flat coordinate) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

/// Compares `analytic` against central differences of `f` at `params`.
/// rel_err = |g - ĝ| / max(1, |g|, |ĝ|).
pub fn grad_check<F>(
    mut f: F,
    params: &[Tensor2],
    analytic: &[Tensor2],
    opts: &GradCheckOptions,
) -> GradCheckReport
where
    F: FnMut(&[Tensor2]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (pi, p) in params.iter().enumerate() {
        for ci in 0..p.data.len() {
            coords.push((pi, ci));
        }
    }
    if coords.len() > opts.max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        coords.shuffle(&mut rng);
        coords.truncate(opts.max_coords.max(200));
    }

    let mut work: Vec<Tensor2> = params.to_vec();
    let mut max_rel = 0.0;
    let mut worst = None;
    let mut checked = 0;
    let mut skipped = 0;
    for (pi, ci) in coords {
        let theta = params[pi].data[ci];
        if opts.skip_below > 0.0 && theta.abs() < opts.skip_below {
            skipped += 1;
            continue;
        }
        work[pi].data[ci] = theta + opts.h;
        let fp = f(&work);
        work[pi].data[ci] = theta - opts.h;
        let fm = f(&work);
        work[pi].data[ci] = theta;
        let fd = (fp - fm) / (2.0 * opts.h);
        let g = analytic[pi].data[ci];
        let rel = (g - fd).abs() / 1.0_f64.max(g.abs()).max(fd.abs());
        checked += 1;
        if rel > max_rel {
            max_rel = rel;
            worst = Some((pi, ci));
        }
    }
    GradCheckReport {
        max_rel_err: max_rel,
        checked,
        skipped,
        passed: max_rel < opts.tol,
        worst,
    }
}
