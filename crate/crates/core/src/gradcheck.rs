//! Central finite-difference checks of the loss gradient on random instances.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::affinity::UniverseAffinity;
use crate::error::Result;
use crate::graph::Matching;
use crate::loss::{bce_loss, PairBatchItem, DEFAULT_CLAMP_EPS};

pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Raw affinities for two graphs plus a random partial ground truth.
#[derive(Debug, Clone)]
pub struct GradcheckInstance {
    pub raw_a: Array2<f64>,
    pub raw_b: Array2<f64>,
    pub gt: Matching,
    pub temperature: f64,
}

impl GradcheckInstance {
    /// Node counts in `1..=max_nodes`, universe size in `2..=max_n_u`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_nodes: usize, max_n_u: usize) -> Self {
        let n_a = rng.random_range(1..=max_nodes);
        let n_b = rng.random_range(1..=max_nodes);
        let n_u = rng.random_range(2..=max_n_u.max(2));
        let mut raw = |n: usize| Array2::from_shape_simple_fn((n, n_u), || 1.5 * rng.sample::<f64, _>(StandardNormal));
        let raw_a = raw(n_a);
        let raw_b = raw(n_b);
        let mut cols: Vec<usize> = (0..n_b).collect();
        let mut row_to_col = vec![None; n_a];
        for slot in row_to_col.iter_mut() {
            if !cols.is_empty() && rng.random_bool(0.6) {
                *slot = Some(cols.swap_remove(rng.random_range(0..cols.len())));
            }
        }
        let gt = Matching::from_assignment(n_b, row_to_col).expect("distinct columns");
        let temperature = [1.0, 0.5, 2.0][rng.random_range(0..3)];
        Self {
            raw_a,
            raw_b,
            gt,
            temperature,
        }
    }

    fn loss_at(&self, raw_a: &Array2<f64>, raw_b: &Array2<f64>, outlier_aware: bool) -> Result<f64> {
        let sa = UniverseAffinity::from_raw(raw_a.clone(), self.temperature);
        let sb = UniverseAffinity::from_raw(raw_b.clone(), self.temperature);
        Ok(bce_loss(&[PairBatchItem::new(&sa, &sb, &self.gt)], outlier_aware, DEFAULT_CLAMP_EPS)?.loss)
    }

    /// Largest relative and absolute discrepancy over every raw entry of both graphs.
    pub fn check(&self, outlier_aware: bool) -> Result<(f64, f64, usize)> {
        let sa = UniverseAffinity::from_raw(self.raw_a.clone(), self.temperature);
        let sb = UniverseAffinity::from_raw(self.raw_b.clone(), self.temperature);
        let out = bce_loss(&[PairBatchItem::new(&sa, &sb, &self.gt)], outlier_aware, DEFAULT_CLAMP_EPS)?;
        let (ga, gb) = &out.grads[0];
        let (mut rel, mut abs, mut count) = (0.0f64, 0.0f64, 0usize);
        for side in 0..2 {
            let analytic = if side == 0 { ga } else { gb };
            let base = if side == 0 { &self.raw_a } else { &self.raw_b };
            for (idx, &g) in analytic.indexed_iter() {
                let mut plus = base.clone();
                plus[idx] += FD_STEP;
                let mut minus = base.clone();
                minus[idx] -= FD_STEP;
                let (lp, lm) = if side == 0 {
                    (
                        self.loss_at(&plus, &self.raw_b, outlier_aware)?,
                        self.loss_at(&minus, &self.raw_b, outlier_aware)?,
                    )
                } else {
                    (
                        self.loss_at(&self.raw_a, &plus, outlier_aware)?,
                        self.loss_at(&self.raw_a, &minus, outlier_aware)?,
                    )
                };
                let numeric = (lp - lm) / (2.0 * FD_STEP);
                rel = rel.max(relative_error(g, numeric));
                abs = abs.max((g - numeric).abs());
                count += 1;
            }
        }
        Ok((rel, abs, count))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub instances: usize,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub step: f64,
}

/// Checks `instances` seeded random pairs under the vanilla and the outlier-aware loss.
pub fn run_gradcheck(seed: u64, instances: usize, max_nodes: usize, max_n_u: usize) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport {
        instances,
        entries: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        step: FD_STEP,
    };
    for _ in 0..instances {
        let inst = GradcheckInstance::random(&mut rng, max_nodes, max_n_u);
        for outlier_aware in [false, true] {
            let (rel, abs, count) = inst.check(outlier_aware)?;
            report.max_rel_error = report.max_rel_error.max(rel);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.entries += count;
        }
    }
    Ok(report)
}
