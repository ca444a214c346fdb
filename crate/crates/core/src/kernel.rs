//! Human reaction-time memory kernel: constant on `[0, s0]`, power-law tail
//! `c (s/s0)^-(1+theta)` beyond. All integrals are closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernel")]
pub struct KernelParams {
    /// Plateau density, per second.
    pub c: f64,
    /// Plateau length, seconds.
    pub s0: f64,
    /// Tail exponent; the density decays as `s^-(1+theta)`.
    pub theta: f64,
    pub normalized: bool,
}

#[derive(Deserialize)]
struct RawKernel {
    c: Option<f64>,
    s0: f64,
    theta: f64,
    #[serde(default)]
    normalized: bool,
}

impl TryFrom<RawKernel> for KernelParams {
    type Error = Error;

    fn try_from(raw: RawKernel) -> Result<Self> {
        match (raw.c, raw.normalized) {
            (None, true) => KernelParams::normalized(raw.s0, raw.theta),
            (Some(c), normalized) => KernelParams::new(c, raw.s0, raw.theta, normalized),
            (None, false) => Err(Error::invalid("kernel: `c` is required unless normalized")),
        }
    }
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams::normalized(300.0, 0.242).expect("default kernel is valid")
    }
}

impl KernelParams {
    pub fn new(c: f64, s0: f64, theta: f64, normalized: bool) -> Result<Self> {
        for (name, v) in [("c", c), ("s0", s0), ("theta", theta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("kernel: {name} must be positive, got {v}")));
            }
        }
        let k = KernelParams {
            c,
            s0,
            theta,
            normalized,
        };
        if normalized && (k.total_mass() - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::invalid(format!(
                "kernel marked normalized but has total mass {}",
                k.total_mass()
            )));
        }
        Ok(k)
    }

    /// The probability density with the given shape.
    pub fn normalized(s0: f64, theta: f64) -> Result<Self> {
        KernelParams::new(1.0, s0, theta, false).map(|k| k.normalize())
    }

    /// Rescales `c` so the kernel integrates to one.
    pub fn normalize(&self) -> KernelParams {
        KernelParams {
            c: 1.0 / (self.s0 * (1.0 + 1.0 / self.theta)),
            s0: self.s0,
            theta: self.theta,
            normalized: true,
        }
    }

    /// `c s0 (1 + 1/theta)`.
    pub fn total_mass(&self) -> f64 {
        self.c * self.s0 * (1.0 + 1.0 / self.theta)
    }

    fn tail_scale(&self) -> f64 {
        self.c * self.s0 / self.theta
    }

    /// Density at delay `s`. Callers guarantee `s >= 0`; see [`phi`].
    pub(crate) fn density(&self, s: f64) -> f64 {
        if s <= self.s0 {
            self.c
        } else {
            self.c * (s / self.s0).powf(-(1.0 + self.theta))
        }
    }

    /// `∫_0^x phi` for `x >= 0` (may be infinite).
    pub(crate) fn cumulative(&self, x: f64) -> f64 {
        if x <= self.s0 {
            self.c * x
        } else {
            self.c * self.s0 + self.tail_mass(self.s0, x)
        }
    }

    /// `∫_a^b phi` with `s0 <= a <= b`, written to avoid cancellation when `b ≈ a`.
    fn tail_mass(&self, a: f64, b: f64) -> f64 {
        let log_ratio = ((b - a) / a).ln_1p();
        self.tail_scale() * (a / self.s0).powf(-self.theta) * -(-self.theta * log_ratio).exp_m1()
    }

    fn mass_unchecked(&self, a: f64, b: f64) -> f64 {
        if b <= self.s0 {
            self.c * (b - a)
        } else if a >= self.s0 {
            self.tail_mass(a, b)
        } else {
            self.c * (self.s0 - a) + self.tail_mass(self.s0, b)
        }
    }

    /// Inverse of the cumulative mass: the delay `x` with `∫_0^x phi = m`.
    /// Returns infinity at `m = total_mass`.
    pub fn inverse_cumulative(&self, m: f64) -> Result<f64> {
        let total = self.total_mass();
        if !(0.0..=total).contains(&m) {
            return Err(Error::invalid(format!("mass {m} outside [0, {total}]")));
        }
        let plateau = self.c * self.s0;
        if m <= plateau {
            return Ok(m / self.c);
        }
        let remaining = 1.0 - (m - plateau) / self.tail_scale();
        if remaining <= 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(self.s0 * remaining.powf(-1.0 / self.theta))
    }
}

/// Kernel density `phi(s)` per second.
pub fn phi(s: f64, k: &KernelParams) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::invalid(format!("phi: delay must be non-negative, got {s}")));
    }
    Ok(k.density(s))
}

/// Exact `∫_a^b phi(s) ds`; `b` may be infinite.
pub fn phi_mass(a: f64, b: f64, k: &KernelParams) -> Result<f64> {
    if !(a >= 0.0) || !(a <= b) {
        return Err(Error::invalid(format!("phi_mass: need 0 <= a <= b, got [{a}, {b}]")));
    }
    if a == b {
        return Ok(0.0);
    }
    Ok(k.mass_unchecked(a, b))
}

pub fn normalize(k: &KernelParams) -> KernelParams {
    k.normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m1_per_second() -> KernelParams {
        KernelParams::new(0.1 / 60.0, 600.0, 1.0, false).unwrap()
    }

    /// Composite Gauss-Legendre over the plateau and a log-spaced tail.
    fn quadrature(a: f64, b: f64, k: &KernelParams) -> f64 {
        const X: [f64; 5] = [
            -0.906_179_845_938_664,
            -0.538_469_310_105_683,
            0.0,
            0.538_469_310_105_683,
            0.906_179_845_938_664,
        ];
        const W: [f64; 5] = [
            0.236_926_885_056_189,
            0.478_628_670_499_366,
            0.568_888_888_888_889,
            0.478_628_670_499_366,
            0.236_926_885_056_189,
        ];
        let gl = |lo: f64, hi: f64| {
            let (m, h) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
            X.iter().zip(W).map(|(x, w)| w * k.density(m + h * x)).sum::<f64>() * h
        };
        let mut total = 0.0;
        if a < k.s0 {
            total += gl(a, b.min(k.s0));
        }
        if b > k.s0 {
            let lo = a.max(k.s0);
            let n = 400;
            let r = (b / lo).ln() / n as f64;
            for i in 0..n {
                total += gl(lo * (r * i as f64).exp(), lo * (r * (i + 1) as f64).exp());
            }
        }
        total
    }

    #[test]
    fn phi_examples() {
        let k = m1_per_second();
        assert_eq!(phi(300.0, &k).unwrap(), 0.1 / 60.0);
        assert!((phi(1200.0, &k).unwrap() - 0.025 / 60.0).abs() < 1e-15);
        assert_eq!(phi(600.0, &k).unwrap(), k.c);
        assert!((k.density(600.0 * (1.0 + 1e-12)) - k.c).abs() < 1e-10 * k.c);
        assert!(phi(-1.0, &k).is_err());
    }

    #[test]
    fn phi_mass_examples() {
        let k = m1_per_second();
        assert_eq!(phi_mass(42.0, 42.0, &k).unwrap(), 0.0);
        assert!((phi_mass(0.0, 600.0, &k).unwrap() - k.c * 600.0).abs() < 1e-15);
        assert!((phi_mass(0.0, 1200.0, &k).unwrap() - 1.5 * k.c * 600.0).abs() < 1e-14);
        assert!(phi_mass(2.0, 1.0, &k).is_err());
        assert!(phi_mass(-1.0, 1.0, &k).is_err());
    }

    #[test]
    fn normalize_examples() {
        let k = KernelParams::normalized(300.0, 0.242).unwrap();
        let expected = 1.0 / (300.0 * (1.0 + 1.0 / 0.242));
        assert_eq!(k.c, expected);
        assert!((k.c - 6.494e-4).abs() < 1e-7);
        assert!((phi_mass(0.0, f64::INFINITY, &k).unwrap() - 1.0).abs() < 1e-12);

        let unit = KernelParams::normalized(1.0, 1.0).unwrap();
        assert_eq!(unit.c, 0.5);
        assert_eq!(k.normalize(), k);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(KernelParams::new(0.0, 1.0, 1.0, false).is_err());
        assert!(KernelParams::new(1.0, -1.0, 1.0, false).is_err());
        assert!(KernelParams::new(1.0, 1.0, 1.0, true).is_err());
    }

    #[test]
    fn deserializes_with_implied_c() {
        let k: KernelParams = serde_json::from_str(r#"{"s0":300,"theta":0.242,"normalized":true}"#).unwrap();
        assert_eq!(k, KernelParams::default());
        assert!(serde_json::from_str::<KernelParams>(r#"{"s0":300,"theta":0.242}"#).is_err());
    }

    #[test]
    fn inverse_cumulative_round_trip() {
        let k = KernelParams::default();
        for x in [0.0, 10.0, 300.0, 301.0, 5000.0, 1e7] {
            let m = k.cumulative(x);
            let back = k.inverse_cumulative(m).unwrap();
            assert!((back - x).abs() <= 1e-7 * x.max(1.0), "{x} -> {back}");
        }
        assert_eq!(k.inverse_cumulative(k.total_mass()).unwrap(), f64::INFINITY);
    }

    proptest! {
        #[test]
        fn mass_matches_quadrature(
            s0 in 1.0f64..2000.0,
            theta in 0.1f64..3.0,
            a in 0.0f64..5000.0,
            len in 0.0f64..50000.0,
        ) {
            let k = KernelParams::normalized(s0, theta).unwrap();
            let b = a + len;
            let exact = phi_mass(a, b, &k).unwrap();
            let quad = quadrature(a, b, &k);
            prop_assert!((exact - quad).abs() <= 1e-8 * exact.max(1e-300), "{exact} vs {quad}");
        }

        #[test]
        fn mass_is_additive(a in 0.0f64..3000.0, d1 in 0.0f64..3000.0, d2 in 0.0f64..3000.0) {
            let k = KernelParams::default();
            let (b, c) = (a + d1, a + d1 + d2);
            let lhs = phi_mass(a, b, &k).unwrap() + phi_mass(b, c, &k).unwrap();
            let rhs = phi_mass(a, c, &k).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-14);
        }

        #[test]
        fn density_non_increasing(s in 0.0f64..1e6, ds in 0.0f64..1e5) {
            let k = KernelParams::default();
            prop_assert!(k.density(s) >= k.density(s + ds));
            prop_assert!(k.density(s) > 0.0);
        }
    }
}
