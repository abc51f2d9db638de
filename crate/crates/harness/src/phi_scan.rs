//! Grid scan of `Phi~(r) + Phi~(s) - Phi(rs)` over `r, s` in `±[0.1, 10]`.

use crate::config::ExperimentConfig;
use crate::report::{Cell, CheckRecord, Record};
use entroscope_core::entanglement::phi_gap;
use entroscope_core::par::map_indices;
use serde::{Deserialize, Serialize};

pub const GAP_FLOOR: f64 = -1e-12;
/// Grid points with a gap below this count as (near) equality.
pub const NEAR_EQUALITY: f64 = 1e-6;
/// Near-equality points must satisfy `|r - s|` below this.
pub const LOCUS_WIDTH: f64 = 1e-3;
pub const DIAGONAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiPoint {
    pub r: f64,
    pub s: f64,
    pub gap: f64,
}

impl Record for PhiPoint {
    fn columns() -> &'static [&'static str] {
        &["r", "s", "gap"]
    }

    fn cells(&self) -> Vec<Cell> {
        vec![self.r.into(), self.s.into(), self.gap.into()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiScanReport {
    pub points: Vec<PhiPoint>,
    pub min_gap: f64,
    pub argmin: (f64, f64),
    pub checks: Vec<CheckRecord>,
}

impl PhiScanReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// `side` values: half negative, half positive, log-spaced magnitudes in
/// `[0.1, 10]`, symmetric under `r -> 1/r`.
pub fn axis(side: usize) -> Vec<f64> {
    let half = (side / 2).max(2);
    let mags: Vec<f64> = (0..half)
        .map(|k| 10f64.powf(-1.0 + 2.0 * k as f64 / (half - 1) as f64))
        .collect();
    mags.iter().rev().map(|m| -m).chain(mags.iter().copied()).collect()
}

pub fn run_phi_scan(config: &ExperimentConfig) -> PhiScanReport {
    let axis = axis(config.grid);
    let n = axis.len();
    let rows = map_indices(config.execution, n, |i| {
        axis.iter()
            .map(|&s| PhiPoint {
                r: axis[i],
                s,
                gap: phi_gap(axis[i], s).expect("grid avoids zero"),
            })
            .collect::<Vec<_>>()
    });
    let points: Vec<PhiPoint> = rows.into_iter().flatten().collect();

    let (mut min_gap, mut argmin) = (f64::INFINITY, (0.0, 0.0));
    for p in &points {
        if p.gap < min_gap {
            min_gap = p.gap;
            argmin = (p.r, p.s);
        }
    }
    let gaps: Vec<f64> = points.iter().map(|p| p.gap).collect();
    let locus: Vec<f64> = points
        .iter()
        .filter(|p| p.gap < NEAR_EQUALITY)
        .map(|p| (p.r - p.s).abs())
        .collect();
    let diagonal: Vec<f64> = (0..n).map(|i| points[i * n + i].gap.abs()).collect();
    // r = 1/s sits at the mirrored index within the same sign block
    let inverse: Vec<f64> = points
        .iter()
        .filter(|p| (p.r * p.s - 1.0).abs() < 1e-12 && (p.r.abs() - 1.0).abs() > 1e-3)
        .map(|p| p.gap)
        .collect();

    let checks = vec![
        CheckRecord::from_values("gap_nonnegative", &gaps, Some(GAP_FLOOR), None),
        CheckRecord::from_values("equality_locus_width", &locus, None, Some(LOCUS_WIDTH)),
        CheckRecord::from_values("diagonal_equality", &diagonal, None, Some(DIAGONAL_TOL)),
        CheckRecord::from_values("inverse_slice_positive", &inverse, Some(f64::MIN_POSITIVE), None),
    ];
    PhiScanReport {
        points,
        min_gap,
        argmin,
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Command;

    #[test]
    fn axis_shape() {
        let a = axis(200);
        assert_eq!(a.len(), 200);
        assert!((a[0] + 10.0).abs() < 1e-12 && (a[199] - 10.0).abs() < 1e-12);
        assert!((a[100] - 0.1).abs() < 1e-15);
        for w in a.windows(2) {
            assert!(w[0] < w[1]);
        }
        // closed under inversion within each sign
        for &r in &a {
            assert!(a.iter().any(|&s| (r * s - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn coarse_scan_passes() {
        let mut config = ExperimentConfig::new(Command::PhiScan);
        config.grid = 40;
        let report = run_phi_scan(&config);
        assert_eq!(report.points.len(), 1600);
        for c in &report.checks {
            assert!(c.passed, "{}", c.summary_line());
        }
        assert!(report.min_gap >= GAP_FLOOR);
    }
}
