use serde::{Deserialize, Serialize};

/// Values below this are treated as double-precision noise.
pub const SATURATION_FLOOR: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

impl RateFit {
    /// Per-step geometric factor `exp(slope)`.
    pub fn factor(&self) -> f64 {
        self.slope.exp()
    }
}

/// Least-squares slope of `log(value)` against `n`.
///
/// Points outside `window` (inclusive bounds on n) are ignored; the fit stops at the
/// first point at or below the saturation floor. Fewer than five usable points gives `None`.
pub fn fit_rate(series: &[(usize, f64)], window: Option<(usize, usize)>) -> Option<RateFit> {
    fit_rate_above(series, window, SATURATION_FLOOR)
}

pub fn fit_rate_above(series: &[(usize, f64)], window: Option<(usize, usize)>, floor: f64) -> Option<RateFit> {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for &(n, v) in series {
        if let Some((lo, hi)) = window {
            if n < lo || n > hi {
                continue;
            }
        }
        if !(v > floor) || !v.is_finite() {
            break;
        }
        pts.push((n as f64, v.ln()));
    }
    if pts.len() < 5 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(RateFit { slope, intercept, r2, points: pts.len() })
}
