//! Double-well potentials `W = β̂ + π̂` with a convex, possibly singular part
//! `β̂` and a smooth perturbation `π̂`, and the Yosida regularization of
//! `β = β̂'`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// User-supplied split of a potential. `beta` must be nondecreasing, `C²` on
/// the open interval `domain()`, and vanish at 0.
pub trait CustomPotential: Send + Sync + fmt::Debug {
    fn domain(&self) -> (f64, f64);
    fn beta_hat(&self, r: f64) -> f64;
    fn beta(&self, r: f64) -> f64;
    fn beta_prime(&self, r: f64) -> f64;
    fn pi_hat(&self, r: f64) -> f64;
    fn pi(&self, r: f64) -> f64;
    fn pi_prime(&self, r: f64) -> f64;
    fn pi_second(&self, r: f64) -> f64;
}

#[derive(Clone, Debug)]
pub enum PotentialKind {
    /// `(r²-1)²/4` split as `β̂ = r⁴/4`, `π̂ = (1-2r²)/4`.
    Regular,
    /// `(1+r)ln(1+r) + (1-r)ln(1-r) - c r²` on `(-1, 1)`.
    Logarithmic { c: f64 },
    /// `β̂ = r - ln(1+r)` on `(-1, ∞)` with `π̂ = -c r²`.
    LogLinear { c: f64 },
    Custom(Arc<dyn CustomPotential>),
}

/// `W`, `β̂` and `π̂` at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WValues {
    pub w: f64,
    pub beta_hat: f64,
    pub pi_hat: f64,
}

/// `β`, `β'`, `π`, `π'`, `π''` at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitValues {
    pub beta: f64,
    pub beta_prime: f64,
    pub pi: f64,
    pub pi_prime: f64,
    pub pi_second: f64,
}

/// Root-solve tolerance for the resolvent `(I + εβ)^{-1}`.
const RESOLVENT_TOL: f64 = 1e-14;

#[derive(Clone, Debug)]
pub struct Potential {
    kind: PotentialKind,
    yosida_eps: f64,
}

impl Potential {
    /// `yosida_eps = 0` evaluates `β` exactly.
    pub fn new(kind: PotentialKind, yosida_eps: f64) -> Result<Self> {
        if !(yosida_eps >= 0.0 && yosida_eps.is_finite()) {
            return Err(Error::Config(format!(
                "Yosida level must be finite and >= 0, got {yosida_eps}"
            )));
        }
        match &kind {
            PotentialKind::Logarithmic { c } | PotentialKind::LogLinear { c }
                if !(c.is_finite() && *c >= 0.0) =>
            {
                return Err(Error::Config(format!("potential coefficient c must be >= 0, got {c}")));
            }
            PotentialKind::Custom(p) => {
                let (lo, hi) = p.domain();
                if !(lo < 0.0 && 0.0 < hi) {
                    return Err(Error::Config(format!(
                        "custom potential domain ({lo}, {hi}) must contain 0"
                    )));
                }
                if p.beta(0.0).abs() > 1e-12 || p.beta_hat(0.0).abs() > 1e-12 {
                    return Err(Error::Config("custom potential needs β̂(0) = β(0) = 0".into()));
                }
            }
            _ => {}
        }
        Ok(Self { kind, yosida_eps })
    }

    pub fn regular() -> Self {
        Self {
            kind: PotentialKind::Regular,
            yosida_eps: 0.0,
        }
    }

    pub fn logarithmic(c: f64, yosida_eps: f64) -> Result<Self> {
        Self::new(PotentialKind::Logarithmic { c }, yosida_eps)
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn yosida_eps(&self) -> f64 {
        self.yosida_eps
    }

    pub fn with_yosida_eps(&self, yosida_eps: f64) -> Result<Self> {
        Self::new(self.kind.clone(), yosida_eps)
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PotentialKind::Regular => "regular",
            PotentialKind::Logarithmic { .. } => "logarithmic",
            PotentialKind::LogLinear { .. } => "loglinear",
            PotentialKind::Custom(_) => "custom",
        }
    }

    /// The open interval D(β).
    pub fn domain(&self) -> (f64, f64) {
        match &self.kind {
            PotentialKind::Regular => (f64::NEG_INFINITY, f64::INFINITY),
            PotentialKind::Logarithmic { .. } => (-1.0, 1.0),
            PotentialKind::LogLinear { .. } => (-1.0, f64::INFINITY),
            PotentialKind::Custom(p) => p.domain(),
        }
    }

    /// True when D(β) has a finite endpoint.
    pub fn is_singular(&self) -> bool {
        let (lo, hi) = self.domain();
        lo.is_finite() || hi.is_finite()
    }

    pub fn in_domain(&self, r: f64) -> bool {
        let (lo, hi) = self.domain();
        lo < r && r < hi
    }

    /// Distance from `r` to the boundary of D(β) (infinite for D(β) = ℝ).
    pub fn boundary_distance(&self, r: f64) -> f64 {
        let (lo, hi) = self.domain();
        (r - lo).min(hi - r)
    }

    fn check_domain(&self, r: f64) -> Result<()> {
        if self.in_domain(r) {
            Ok(())
        } else {
            let (lo, hi) = self.domain();
            Err(Error::OutOfDomain { value: r, lo, hi })
        }
    }

    // Raw evaluators, valid on D(β).

    fn beta_hat_raw(&self, r: f64) -> f64 {
        match &self.kind {
            PotentialKind::Regular => 0.25 * r.powi(4),
            PotentialKind::Logarithmic { .. } => (1.0 + r) * r.ln_1p() + (1.0 - r) * (-r).ln_1p(),
            PotentialKind::LogLinear { .. } => r - r.ln_1p(),
            PotentialKind::Custom(p) => p.beta_hat(r),
        }
    }

    fn beta_raw(&self, r: f64) -> f64 {
        match &self.kind {
            PotentialKind::Regular => r * r * r,
            PotentialKind::Logarithmic { .. } => r.ln_1p() - (-r).ln_1p(),
            PotentialKind::LogLinear { .. } => r / (1.0 + r),
            PotentialKind::Custom(p) => p.beta(r),
        }
    }

    fn beta_prime_raw(&self, r: f64) -> f64 {
        match &self.kind {
            PotentialKind::Regular => 3.0 * r * r,
            PotentialKind::Logarithmic { .. } => 2.0 / ((1.0 - r) * (1.0 + r)),
            PotentialKind::LogLinear { .. } => 1.0 / ((1.0 + r) * (1.0 + r)),
            PotentialKind::Custom(p) => p.beta_prime(r),
        }
    }

    pub fn pi_hat(&self, r: f64) -> f64 {
        match &self.kind {
            PotentialKind::Regular => 0.25 * (1.0 - 2.0 * r * r),
            PotentialKind::Logarithmic { c } | PotentialKind::LogLinear { c } => -c * r * r,
            PotentialKind::Custom(p) => p.pi_hat(r),
        }
    }

    pub fn pi(&self, r: f64) -> f64 {
        match &self.kind {
            PotentialKind::Regular => -r,
            PotentialKind::Logarithmic { c } | PotentialKind::LogLinear { c } => -2.0 * c * r,
            PotentialKind::Custom(p) => p.pi(r),
        }
    }

    pub fn pi_prime(&self, r: f64) -> f64 {
        match &self.kind {
            PotentialKind::Regular => -1.0,
            PotentialKind::Logarithmic { c } | PotentialKind::LogLinear { c } => -2.0 * c,
            PotentialKind::Custom(p) => p.pi_prime(r),
        }
    }

    pub fn pi_second(&self, r: f64) -> f64 {
        match &self.kind {
            PotentialKind::Custom(p) => p.pi_second(r),
            _ => 0.0,
        }
    }

    /// Exact `W`, `β̂`, `π̂`; fails outside D(β).
    pub fn exact_w(&self, r: f64) -> Result<WValues> {
        self.check_domain(r)?;
        let beta_hat = self.beta_hat_raw(r);
        let pi_hat = self.pi_hat(r);
        Ok(WValues {
            w: beta_hat + pi_hat,
            beta_hat,
            pi_hat,
        })
    }

    /// Exact `β`, `β'`, `π`, `π'`, `π''`; fails outside D(β).
    pub fn exact_split(&self, r: f64) -> Result<SplitValues> {
        self.check_domain(r)?;
        Ok(SplitValues {
            beta: self.beta_raw(r),
            beta_prime: self.beta_prime_raw(r),
            pi: self.pi(r),
            pi_prime: self.pi_prime(r),
            pi_second: self.pi_second(r),
        })
    }

    /// `W` at the configured Yosida level: exact for ε = 0, otherwise with
    /// `β̂` replaced by its Moreau envelope `β̂_ε`, whose derivative is `β_ε`.
    pub fn eval_w(&self, r: f64) -> Result<WValues> {
        if self.yosida_eps == 0.0 {
            return self.exact_w(r);
        }
        let x = self.resolvent(self.yosida_eps, r)?;
        let beta_hat = self.beta_hat_raw(x) + (r - x) * (r - x) / (2.0 * self.yosida_eps);
        let pi_hat = self.pi_hat(r);
        Ok(WValues {
            w: beta_hat + pi_hat,
            beta_hat,
            pi_hat,
        })
    }

    /// Split derivatives at the configured Yosida level.
    pub fn eval_split(&self, r: f64) -> Result<SplitValues> {
        let (beta, beta_prime) = self.beta_eps(r)?;
        Ok(SplitValues {
            beta,
            beta_prime,
            pi: self.pi(r),
            pi_prime: self.pi_prime(r),
            pi_second: self.pi_second(r),
        })
    }

    /// `(β_ε(r), β_ε'(r))` at the configured level.
    pub fn beta_eps(&self, r: f64) -> Result<(f64, f64)> {
        if self.yosida_eps == 0.0 {
            self.check_domain(r)?;
            Ok((self.beta_raw(r), self.beta_prime_raw(r)))
        } else {
            self.yosida_with_derivative(self.yosida_eps, r)
        }
    }

    /// `β_ε(r) = (r - J_ε(r)) / ε`.
    pub fn yosida(&self, eps: f64, r: f64) -> Result<f64> {
        Ok(self.yosida_with_derivative(eps, r)?.0)
    }

    /// `β_ε(r)` and `β_ε'(r) = β'(x) / (1 + ε β'(x))` with `x = J_ε(r)`.
    pub fn yosida_with_derivative(&self, eps: f64, r: f64) -> Result<(f64, f64)> {
        if !(eps > 0.0) {
            return Err(Error::Config(format!("Yosida level must be > 0, got {eps}")));
        }
        let x = self.resolvent(eps, r)?;
        let bp = self.beta_prime_raw(x);
        Ok(((r - x) / eps, bp / (1.0 + eps * bp)))
    }

    /// The resolvent `J_ε(r)`: the unique `x ∈ D(β)` with `x + ε β(x) = r`,
    /// by Newton's method safeguarded with bisection.
    pub fn resolvent(&self, eps: f64, r: f64) -> Result<f64> {
        if r == 0.0 {
            return Ok(0.0);
        }
        if !r.is_finite() {
            return Err(Error::RootSolveFailure { r });
        }
        let (dlo, dhi) = self.domain();
        // β(0) = 0 and β monotone put the root between 0 and r.
        let (mut lo, mut hi) = if r > 0.0 { (0.0, r.min(dhi)) } else { (r.max(dlo), 0.0) };
        let mut x = if lo < r && r < hi { r } else { 0.5 * (lo + hi) };
        if !(lo < x && x < hi) {
            x = 0.5 * (lo + hi);
        }
        for _ in 0..400 {
            let g = x + eps * self.beta_raw(x) - r;
            if g == 0.0 {
                return Ok(x);
            }
            if g > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let slope = 1.0 + eps * self.beta_prime_raw(x);
            let newton = x - g / slope;
            let next = if newton > lo && newton < hi && newton.is_finite() {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - x).abs() <= RESOLVENT_TOL * x.abs().max(1.0) {
                return Ok(next);
            }
            if hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
                return Ok(0.5 * (lo + hi));
            }
            x = next;
        }
        Err(Error::RootSolveFailure { r })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn log() -> Potential {
        Potential::logarithmic(2.0, 0.0).unwrap()
    }

    fn loglinear() -> Potential {
        Potential::new(PotentialKind::LogLinear { c: 0.0 }, 0.0).unwrap()
    }

    fn sample(p: &Potential) -> Vec<f64> {
        let (lo, hi) = p.domain();
        let lo = lo.max(-3.0);
        let hi = hi.min(3.0);
        (1..200)
            .map(|i| lo + (hi - lo) * i as f64 / 200.0)
            .collect()
    }

    #[test]
    fn stock_values() {
        let reg = Potential::regular();
        assert_eq!(reg.exact_w(0.0).unwrap().w, 0.25);
        assert_eq!(reg.exact_w(1.0).unwrap().w, 0.0);
        assert_eq!(reg.exact_w(-1.0).unwrap().w, 0.0);
        for c in [0.5, 2.0, 7.0] {
            let p = Potential::logarithmic(c, 0.0).unwrap();
            assert_eq!(p.exact_w(0.0).unwrap().w, 0.0);
        }
        let ll = loglinear();
        assert_eq!(ll.exact_w(0.0).unwrap().beta_hat, 0.0);
        assert!(sample(&ll).iter().all(|&r| ll.exact_w(r).unwrap().beta_hat >= 0.0));
        assert_eq!(ll.exact_split(0.0).unwrap().beta, 0.0);
    }

    #[test]
    fn split_values() {
        let reg = Potential::regular();
        let s = reg.exact_split(2.0).unwrap();
        assert_eq!((s.beta, s.pi), (8.0, -2.0));
        let p = log();
        assert_eq!(p.exact_split(0.0).unwrap().beta, 0.0);
        let s = p.exact_split(0.5).unwrap();
        assert!((s.beta - 3f64.ln()).abs() < 1e-15);
        assert!((s.pi - (-2.0 * 2.0 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn out_of_domain_is_an_error_in_exact_mode() {
        let p = log();
        assert!(matches!(p.exact_w(1.0), Err(Error::OutOfDomain { .. })));
        assert!(matches!(p.eval_split(-1.5), Err(Error::OutOfDomain { .. })));
        let reg = Potential::logarithmic(2.0, 1e-3).unwrap();
        assert!(reg.eval_split(1.5).is_ok());
        assert!(reg.eval_w(-1.5).is_ok());
    }

    #[test]
    fn convex_part_is_nonnegative_and_monotone() {
        for p in [Potential::regular(), log(), loglinear()] {
            assert_eq!(p.exact_w(0.0).unwrap().beta_hat, 0.0);
            for r in sample(&p) {
                let w = p.exact_w(r).unwrap();
                let s = p.exact_split(r).unwrap();
                assert!(w.beta_hat >= 0.0, "{} at {r}", p.name());
                assert!(s.beta_prime >= 0.0);
                assert!(s.pi_prime.abs() <= 4.0);
            }
        }
    }

    #[test]
    fn derivatives_match_centered_differences() {
        for p in [Potential::regular(), log(), loglinear()] {
            for r in sample(&p).into_iter().step_by(7) {
                if p.boundary_distance(r) < 0.05 {
                    continue;
                }
                let errs: Vec<f64> = [1e-2, 5e-3]
                    .iter()
                    .map(|&d| {
                        let w = |x: f64| p.exact_w(x).unwrap();
                        let s = p.exact_split(r).unwrap();
                        let db = (w(r + d).beta_hat - w(r - d).beta_hat) / (2.0 * d);
                        let dp = (w(r + d).pi_hat - w(r - d).pi_hat) / (2.0 * d);
                        let dw = (w(r + d).w - w(r - d).w) / (2.0 * d);
                        (db - s.beta).abs() + (dp - s.pi).abs() + (dw - s.beta - s.pi).abs()
                    })
                    .collect();
                // halving δ divides an O(δ²) error by about 4
                assert!(errs[1] <= errs[0] / 3.0 + 1e-10, "{} r={r} {errs:?}", p.name());
            }
        }
    }

    #[test]
    fn singular_kinds_blow_up_at_the_boundary() {
        for p in [log(), loglinear()] {
            let (lo, _) = p.domain();
            let mut prev = 0.0f64;
            for k in 1..30 {
                let r = lo + 0.5f64.powi(k);
                let b = p.exact_split(r).unwrap().beta.abs();
                assert!(b > prev, "{} k={k}", p.name());
                prev = b;
            }
            assert!(prev > 10.0);
        }
        let p = log();
        let mut prev = 0.0;
        for k in 1..30 {
            let b = p.exact_split(1.0 - 0.5f64.powi(k)).unwrap().beta;
            assert!(b > prev);
            prev = b;
        }
    }

    #[test]
    fn yosida_examples() {
        let reg = Potential::regular();
        for eps in [1e-3, 0.1, 1.0, 10.0] {
            assert_eq!(reg.yosida(eps, 0.0).unwrap(), 0.0);
        }
        let v = reg.yosida(1.0, 2.0).unwrap();
        assert!((v - 1.0).abs() < 1e-14, "{v}");
        assert!(reg.yosida(0.0, 1.0).is_err());
    }

    #[test]
    fn yosida_is_bounded_by_beta_and_converges() {
        for p in [Potential::regular(), log(), loglinear()] {
            for r in sample(&p) {
                let beta = p.exact_split(r).unwrap().beta;
                let mut prev_err = f64::INFINITY;
                for k in 0..8 {
                    let eps = 0.5f64.powi(k);
                    let b = p.yosida(eps, r).unwrap();
                    assert!(b.abs() <= beta.abs() * (1.0 + 1e-12) + 1e-15);
                    assert!(b * beta >= 0.0);
                    let err = (beta - b).abs();
                    assert!(err <= prev_err * (1.0 + 1e-12) + 1e-14, "{} r={r} eps={eps}", p.name());
                    prev_err = err;
                }
                assert!(p.yosida(1e-9, r).unwrap() - beta <= 1e-5 * beta.abs().max(1.0));
            }
        }
    }

    #[test]
    fn yosida_derivative_matches_difference_quotient() {
        let p = log();
        let eps = 1e-2;
        for r in [-3.0, -0.99, -0.3, 0.0, 0.5, 0.98, 1.7] {
            let (_, d) = p.yosida_with_derivative(eps, r).unwrap();
            let h = 1e-6;
            let fd = (p.yosida(eps, r + h).unwrap() - p.yosida(eps, r - h).unwrap()) / (2.0 * h);
            assert!((fd - d).abs() <= 1e-6 * d.abs().max(1.0), "r={r} fd={fd} d={d}");
            assert!(d <= 1.0 / eps + 1e-9);
        }
    }

    #[test]
    fn moreau_envelope_matches_exact_energy_in_the_limit() {
        let p = log();
        for r in [-0.9, 0.0, 0.4] {
            let exact = p.exact_w(r).unwrap().w;
            let reg = p.with_yosida_eps(1e-8).unwrap().eval_w(r).unwrap().w;
            assert!((exact - reg).abs() < 1e-6);
            // the envelope never exceeds β̂
            let env = p.with_yosida_eps(0.1).unwrap().eval_w(r).unwrap();
            assert!(env.beta_hat <= p.exact_w(r).unwrap().beta_hat + 1e-15);
        }
    }

    #[test]
    fn custom_potential_round_trips_through_the_split() {
        #[derive(Debug)]
        struct Quartic;
        impl CustomPotential for Quartic {
            fn domain(&self) -> (f64, f64) {
                (f64::NEG_INFINITY, f64::INFINITY)
            }
            fn beta_hat(&self, r: f64) -> f64 {
                r.powi(4) / 4.0
            }
            fn beta(&self, r: f64) -> f64 {
                r.powi(3)
            }
            fn beta_prime(&self, r: f64) -> f64 {
                3.0 * r * r
            }
            fn pi_hat(&self, r: f64) -> f64 {
                r.sin()
            }
            fn pi(&self, r: f64) -> f64 {
                r.cos()
            }
            fn pi_prime(&self, r: f64) -> f64 {
                -r.sin()
            }
            fn pi_second(&self, r: f64) -> f64 {
                -r.cos()
            }
        }
        let p = Potential::new(PotentialKind::Custom(Arc::new(Quartic)), 0.0).unwrap();
        assert_eq!(p.name(), "custom");
        assert_eq!(p.exact_split(0.3).unwrap().pi_second, -(0.3f64).cos());
    }

    proptest! {
        #[test]
        fn yosida_is_monotone_and_lipschitz(a in -5.0f64..5.0, b in -5.0f64..5.0, k in 0i32..6) {
            let eps = 10f64.powi(-k);
            for p in [Potential::regular(), log(), loglinear()] {
                let ya = p.yosida(eps, a).unwrap();
                let yb = p.yosida(eps, b).unwrap();
                prop_assert!((ya - yb) * (a - b) >= -1e-12);
                prop_assert!((ya - yb).abs() <= (a - b).abs() / eps * (1.0 + 1e-9) + 1e-9);
            }
        }

        #[test]
        fn exact_beta_is_monotone(a in -0.999f64..0.999, b in -0.999f64..0.999) {
            for p in [Potential::regular(), log(), loglinear()] {
                let ba = p.exact_split(a).unwrap().beta;
                let bb = p.exact_split(b).unwrap().beta;
                prop_assert!((ba - bb) * (a - b) >= 0.0);
            }
        }
    }
}
