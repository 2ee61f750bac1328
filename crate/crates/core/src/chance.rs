//! Deterministic reformulation of the probabilistic rear-gap constraint.
//!
//! With the HV position modeled as Gaussian, `Pr(gap ≥ Δ) ≥ p` holds when the
//! mean gap clears `Δ + Φ⁻¹(p)·σ`.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Standard normal CDF, computed through `erfc` so the lower tail keeps full
/// relative precision.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Input(format!("probability must lie in (0, 1), got {p}")))
    }
}

/// `Φ⁻¹(p)` by bisection on [`normal_cdf`] until the bracket is narrower than
/// `tol`. Slow but obviously correct; used to validate the fast path.
pub fn inverse_normal_cdf_bisection(p: f64, tol: f64) -> Result<f64> {
    check_probability(p)?;
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

// Acklam's rational approximation (relative error ≈ 1.15e-9 before refinement).
const A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];
const P_LOW: f64 = 0.024_25;

fn acklam(p: f64) -> f64 {
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -acklam(1.0 - p)
    }
}

/// Standard normal quantile `Φ⁻¹(p)` for `p ∈ (0, 1)`.
///
/// Rational initial guess followed by one Halley step on `erfc`, which brings
/// the result to near machine precision.
pub fn inverse_normal_cdf(p: f64) -> Result<f64> {
    check_probability(p)?;
    if p == 0.5 {
        return Ok(0.0);
    }
    // Work in the lower tail and mirror, which keeps the map exactly odd.
    if p > 0.5 {
        return inverse_normal_cdf(1.0 - p).map(|z| -z);
    }
    let x = acklam(p);
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    Ok(x - u / (1.0 + 0.5 * x * u))
}

/// Rear-gap requirement: fixed gap `delta` plus the confidence level `p_def`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistancePolicy {
    delta: f64,
    p_def: f64,
    quantile: f64,
}

impl DistancePolicy {
    pub fn new(delta: f64, p_def: f64) -> Result<Self> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::Input(format!("gap must be finite and ≥ 0, got {delta}")));
        }
        if !(p_def > 0.5 && p_def < 1.0) {
            return Err(Error::Input(format!(
                "confidence level must lie in (0.5, 1), got {p_def}"
            )));
        }
        Ok(Self {
            delta,
            p_def,
            quantile: inverse_normal_cdf(p_def)?,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn p_def(&self) -> f64 {
        self.p_def
    }

    /// Cached `Φ⁻¹(p_def)`.
    pub fn quantile(&self) -> f64 {
        self.quantile
    }

    /// `Δ + Φ⁻¹(p_def)·√variance`.
    pub fn tightened_min_distance(&self, variance: f64) -> Result<f64> {
        check_variance(variance)?;
        Ok(self.delta + self.quantile * variance.sqrt())
    }

    /// Half-space `hᵀ(p_rear, p_front) ≥ b` with `h = (-1, 1)` over the pair
    /// (HV position, last AV position), position covariance `diag(0, variance)`
    /// attached to the HV.
    pub fn halfspace_form(&self, variance: f64) -> Result<([f64; 2], f64)> {
        check_variance(variance)?;
        let h = [-1.0, 1.0];
        // hᵀ diag(0, v) h, written out.
        let spread = h[0] * 0.0 * h[0] + h[1] * variance * h[1];
        Ok((h, -self.delta - self.quantile * spread.sqrt()))
    }
}

fn check_variance(variance: f64) -> Result<()> {
    if variance.is_finite() && variance >= 0.0 {
        Ok(())
    } else {
        Err(Error::Input(format!("variance must be finite and ≥ 0, got {variance}")))
    }
}
