//! Regularization profiles ξ(s) and δ(s) and their ε-scaled fields.
//!
//! ξ_ε(x) = ξ(d(x)/ε) approximates the indicator of Ω*, and
//! δ_ε(x) = δ(d(x)/ε)/ε approximates the surface measure of Γ. Two families
//! ship: the smooth double-well (tanh/sech^4) and the compactly supported
//! double-obstacle (sin/cos^2). Custom profiles are admitted only after the
//! assumption battery in [`verify_profile`] passes.

use crate::geometry::{gauss_legendre, SignedGeometry, Vec2};
use serde::Serialize;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;
use thiserror::Error;

const SQRT2: f64 = std::f64::consts::SQRT_2;
/// Quadrature truncation for unbounded supports; sech^4(40/sqrt(2)) < 1e-48.
const TAIL_CUT: f64 = 40.0;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile violates the xi-delta domination assumption: inf xi/delta = {inf}")]
    NoDominationConstant { inf: f64 },
    #[error("profile has not passed verification and may not be used in assembly")]
    Unverified,
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum ProfileKind {
    DoubleWell,
    DoubleObstacle,
    Custom {
        xi: ScalarFn,
        delta: ScalarFn,
        /// Half-width of supp(delta); `f64::INFINITY` when unbounded.
        support: f64,
    },
}

impl std::fmt::Debug for ProfileKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProfileKind::DoubleWell => write!(f, "DoubleWell"),
            ProfileKind::DoubleObstacle => write!(f, "DoubleObstacle"),
            ProfileKind::Custom { support, .. } => write!(f, "Custom {{ support: {support} }}"),
        }
    }
}

/// A regularization pair (ξ, δ) with δ normalized so that ∫δ = 1.
#[derive(Clone, Debug)]
pub struct Profile {
    pub kind: ProfileKind,
    /// Factor applied to the printed δ formula so the integral is 1.
    pub normalization: f64,
    /// Raw integral of the printed formula (2 for the double-well family).
    pub raw_integral: f64,
    verified: bool,
}

impl Profile {
    pub fn double_well() -> Self {
        let raw = integrate_panels(-TAIL_CUT, TAIL_CUT, 4000, 8, |s| dw_delta_raw(s));
        Profile {
            kind: ProfileKind::DoubleWell,
            normalization: 1.0 / raw,
            raw_integral: raw,
            verified: true,
        }
    }

    pub fn double_obstacle() -> Self {
        Profile {
            kind: ProfileKind::DoubleObstacle,
            normalization: 1.0,
            raw_integral: 1.0,
            verified: true,
        }
    }

    /// A user-supplied pair. It is unverified: [`verify_profile`] must pass
    /// before the profile can back scaled weights.
    pub fn custom(xi: ScalarFn, delta: ScalarFn, support: f64) -> Self {
        let cut = support.min(TAIL_CUT);
        let raw = integrate_panels(-cut, cut, 4000, 8, |s| delta(s));
        Profile {
            kind: ProfileKind::Custom { xi, delta, support },
            normalization: if raw > 0.0 { 1.0 / raw } else { 1.0 },
            raw_integral: raw,
            verified: false,
        }
    }

    pub fn is_verified(&self) -> bool {
        self.verified
    }

    /// ξ(s): non-increasing, 1 at -∞, 1/2 at 0, 0 at +∞.
    pub fn xi(&self, s: f64) -> f64 {
        match &self.kind {
            // (1 - tanh(s/sqrt2))/2 written as a logistic so the tail does
            // not round to zero while sech^4 is still positive
            ProfileKind::DoubleWell => 1.0 / (1.0 + (SQRT2 * s).exp()),
            ProfileKind::DoubleObstacle => {
                if s < -FRAC_PI_2 {
                    1.0
                } else if s > FRAC_PI_2 {
                    0.0
                } else {
                    0.5 * (1.0 - s.sin())
                }
            }
            ProfileKind::Custom { xi, .. } => xi(s),
        }
    }

    /// δ(s), normalized to unit integral.
    pub fn delta(&self, s: f64) -> f64 {
        self.normalization * self.delta_raw(s)
    }

    /// The printed formula before normalization.
    pub fn delta_raw(&self, s: f64) -> f64 {
        match &self.kind {
            ProfileKind::DoubleWell => dw_delta_raw(s),
            ProfileKind::DoubleObstacle => {
                if s.abs() > FRAC_PI_2 {
                    0.0
                } else {
                    let c = s.cos();
                    (2.0 / PI) * c * c
                }
            }
            ProfileKind::Custom { delta, .. } => delta(s),
        }
    }

    /// d(δ)/ds of the normalized delta (analytic for shipped kinds).
    pub fn delta_derivative(&self, s: f64) -> f64 {
        match &self.kind {
            ProfileKind::DoubleWell => -2.0 * SQRT2 * (s / SQRT2).tanh() * self.delta(s),
            ProfileKind::DoubleObstacle => {
                if s.abs() > FRAC_PI_2 {
                    0.0
                } else {
                    -(2.0 / PI) * (2.0 * s).sin()
                }
            }
            ProfileKind::Custom { delta, .. } => {
                let h = 1e-6;
                self.normalization * (delta(s + h) - delta(s - h)) / (2.0 * h)
            }
        }
    }

    /// Half-width of supp(δ).
    pub fn delta_support(&self) -> f64 {
        match &self.kind {
            ProfileKind::DoubleWell => f64::INFINITY,
            ProfileKind::DoubleObstacle => FRAC_PI_2,
            ProfileKind::Custom { support, .. } => *support,
        }
    }

    /// Does δ vanish identically away from Γ (compact support)?
    pub fn is_degenerate(&self) -> bool {
        self.delta_support().is_finite()
    }

    fn quad_cut(&self) -> f64 {
        self.delta_support().min(TAIL_CUT)
    }
}

fn dw_delta_raw(s: f64) -> f64 {
    let sech = 1.0 / (s / SQRT2).cosh();
    3.0 / (2.0 * SQRT2) * sech.powi(4)
}

/// Largest C with C·δ(t) ≤ ξ(t) on the support of δ, found by a dense grid
/// scan and re-checked on a finer grid (1e-9 relative slack covers the grid
/// gap; for the double-obstacle pair the infimum is π/8, attained only in
/// the limit at the support edge).
pub fn cxi_constant(profile: &Profile) -> Result<f64, ProfileError> {
    let cut = profile.quad_cut();
    // The ratio is skipped where xi is below cancellation scale (1 - sin s
    // loses all digits there); the verification loop below still covers
    // those points with an absolute slack.
    let scan = |n: usize| -> f64 {
        let mut inf = f64::INFINITY;
        for i in 0..=n {
            let s = -cut + 2.0 * cut * i as f64 / n as f64;
            let d = profile.delta(s);
            let x = profile.xi(s);
            if d > 1e-300 && x >= 1e-8 {
                inf = inf.min(x / d);
            }
        }
        inf
    };
    let c = scan(400_000);
    if !(c > 0.0) || !c.is_finite() {
        return Err(ProfileError::NoDominationConstant { inf: c });
    }
    let c_fine = scan(800_001);
    let c_final = c.min(c_fine);
    for i in 0..=800_001usize {
        let s = -cut + 2.0 * cut * i as f64 / 800_001.0;
        if c_final * profile.delta(s) > profile.xi(s) * (1.0 + 1e-6) + 1e-14 {
            return Err(ProfileError::NoDominationConstant { inf: c_final });
        }
    }
    Ok(c_final)
}

#[derive(Clone, Debug, Serialize)]
pub struct ProfileCheck {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProfileReport {
    pub checks: Vec<ProfileCheck>,
    pub raw_integral: f64,
    pub normalized_integral: f64,
    pub c_delta_int: f64,
    pub c_xi: Option<f64>,
}

impl ProfileReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Numerical battery for the assumptions on ξ and δ: unit integral, evenness,
/// monotonicity, ξ limits, the integral bound C_{δ,int}, and the super-
/// polynomial decay ε^{-q} δ(η/ε) → 0. Failures are report content; the
/// operation itself never aborts. Passing marks the profile usable.
pub fn verify_profile(profile: &mut Profile, tol: f64) -> ProfileReport {
    let cut = profile.quad_cut();
    let mut checks = Vec::new();

    let integral = integrate_panels(-cut, cut, 4000, 8, |s| profile.delta(s));
    checks.push(ProfileCheck {
        name: "delta_unit_integral".into(),
        passed: (integral - 1.0).abs() <= tol,
        value: integral,
        detail: format!("int delta = {integral} (target 1 +- {tol})"),
    });

    let n = 20_000usize;
    let mut asym: f64 = 0.0;
    let mut mono_violations = 0usize;
    let mut prev = profile.delta(0.0);
    for i in 0..=n {
        let s = cut * i as f64 / n as f64;
        let d = profile.delta(s);
        asym = asym.max((d - profile.delta(-s)).abs());
        if d > prev + 1e-14 {
            mono_violations += 1;
        }
        prev = d;
    }
    checks.push(ProfileCheck {
        name: "delta_even".into(),
        passed: asym <= 1e-12,
        value: asym,
        detail: format!("max |delta(s) - delta(-s)| = {asym}"),
    });
    checks.push(ProfileCheck {
        name: "delta_monotone_in_abs_s".into(),
        passed: mono_violations == 0,
        value: mono_violations as f64,
        detail: format!("{mono_violations} monotonicity violations"),
    });

    let xi0 = profile.xi(0.0);
    checks.push(ProfileCheck {
        name: "xi_half_at_zero".into(),
        passed: (xi0 - 0.5).abs() <= 1e-14,
        value: xi0,
        detail: format!("xi(0) = {xi0}"),
    });
    let (xi_neg, xi_pos) = (profile.xi(-50.0), profile.xi(50.0));
    checks.push(ProfileCheck {
        name: "xi_limits".into(),
        passed: (1.0 - xi_neg).abs() <= 1e-8 && xi_pos.abs() <= 1e-8,
        value: xi_neg - xi_pos,
        detail: format!("xi(-50) = {xi_neg}, xi(50) = {xi_pos}"),
    });
    let mut xi_mono = 0usize;
    let mut prev = profile.xi(-cut.max(5.0));
    for i in 1..=n {
        let lim = cut.max(5.0);
        let s = -lim + 2.0 * lim * i as f64 / n as f64;
        let x = profile.xi(s);
        if x > prev + 1e-14 {
            xi_mono += 1;
        }
        prev = x;
    }
    checks.push(ProfileCheck {
        name: "xi_nonincreasing".into(),
        passed: xi_mono == 0,
        value: xi_mono as f64,
        detail: format!("{xi_mono} monotonicity violations"),
    });

    // C_{delta,int} = int |delta'|^2/delta + int sqrt(delta) + delta(|s| + s^2);
    // finiteness is probed by doubling the truncation window.
    let c_int_at = |lim: f64| {
        integrate_panels(-lim, lim, 4000, 8, |s| {
            let d = profile.delta(s);
            let mut v = d.sqrt() + d * (s.abs() + s * s);
            if d > 1e-300 {
                let dp = profile.delta_derivative(s);
                v += dp * dp / d;
            }
            v
        })
    };
    let c1 = c_int_at(cut.min(20.0));
    let c2 = c_int_at(cut);
    let c_delta_int = c2;
    let finite = if profile.delta_support().is_finite() {
        c_delta_int.is_finite()
    } else {
        // tails must contribute nothing beyond the first window
        c_delta_int.is_finite() && (c2 - c1).abs() <= 1e-6 * c1.max(1.0)
    };
    checks.push(ProfileCheck {
        name: "c_delta_int_finite".into(),
        passed: finite,
        value: c_delta_int,
        detail: format!("window 20: {c1}, window {cut}: {c2}"),
    });

    // decay: eps^{-q} delta(eta/eps) -> 0 for q in {1,2}, eta = 1
    let mut decay_ok = true;
    let mut decay_val = 0.0;
    for q in [1i32, 2] {
        let vals: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&e: &f64| profile.delta(1.0 / e) / e.powi(q))
            .collect();
        decay_val = vals[2];
        let nonincreasing = vals[0] >= vals[1] - 1e-300 && vals[1] >= vals[2] - 1e-300;
        let vanishing = vals[0] == 0.0 || vals[2] <= 1e-3 * vals[0];
        if !(nonincreasing && vanishing) {
            decay_ok = false;
        }
    }
    checks.push(ProfileCheck {
        name: "delta_superpolynomial_decay".into(),
        passed: decay_ok,
        value: decay_val,
        detail: "eps^{-q} delta(1/eps) over eps in {0.1, 0.05, 0.025}".into(),
    });

    let c_xi = cxi_constant(profile).ok();
    checks.push(ProfileCheck {
        name: "xi_dominates_delta".into(),
        passed: c_xi.is_some(),
        value: c_xi.unwrap_or(-1.0),
        detail: "C_xi with C_xi * delta <= xi on supp(delta)".into(),
    });

    let report = ProfileReport {
        checks,
        raw_integral: profile.raw_integral,
        normalized_integral: integral,
        c_delta_int,
        c_xi,
    };
    if report.all_passed() {
        profile.verified = true;
    }
    report
}

/// The ε-scaled weight fields ξ_ε, δ_ε over Ω.
#[derive(Clone, Debug)]
pub struct ScaledWeights {
    pub profile: Profile,
    pub epsilon: f64,
    pub geom: Arc<SignedGeometry>,
}

impl ScaledWeights {
    pub fn new(profile: Profile, epsilon: f64, geom: Arc<SignedGeometry>) -> Result<Self, ProfileError> {
        if !profile.is_verified() {
            return Err(ProfileError::Unverified);
        }
        Ok(Self {
            profile,
            epsilon,
            geom,
        })
    }

    pub fn xi_eps(&self, x: Vec2) -> f64 {
        self.xi_of_d(self.geom.sdf(x))
    }

    pub fn delta_eps(&self, x: Vec2) -> f64 {
        self.delta_of_d(self.geom.sdf(x))
    }

    /// Both weights from a single signed-distance evaluation.
    pub fn weights_of_d(&self, d: f64) -> (f64, f64) {
        (self.xi_of_d(d), self.delta_of_d(d))
    }

    pub fn xi_of_d(&self, d: f64) -> f64 {
        self.profile.xi(d / self.epsilon)
    }

    pub fn delta_of_d(&self, d: f64) -> f64 {
        self.profile.delta(d / self.epsilon) / self.epsilon
    }

    /// Half-width of supp(δ_ε) in physical distance.
    pub fn delta_band(&self) -> f64 {
        self.epsilon * self.profile.delta_support()
    }
}

/// Composite Gauss-Legendre quadrature on [a, b].
pub fn integrate_panels(a: f64, b: f64, panels: usize, order: usize, f: impl Fn(f64) -> f64) -> f64 {
    let (gx, gw) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        let mut acc = 0.0;
        for (x, w) in gx.iter().zip(&gw) {
            acc += w * f(mid + 0.5 * h * x);
        }
        total += acc * 0.5 * h;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SignedGeometry;

    const BOX: [f64; 4] = [-2.0, 2.0, -2.0, 2.0];

    fn circle() -> Arc<SignedGeometry> {
        Arc::new(SignedGeometry::circle(Vec2::new(0.0, 0.0), 1.0, BOX).unwrap())
    }

    #[test]
    fn xi_base_values() {
        let dw = Profile::double_well();
        assert_eq!(dw.xi(0.0), 0.5);
        let dob = Profile::double_obstacle();
        assert_eq!(dob.xi(FRAC_PI_2), 0.0);
        assert_eq!(dob.xi(-PI), 1.0);
    }

    #[test]
    fn delta_base_values() {
        let dob = Profile::double_obstacle();
        assert!((dob.delta(0.0) - 2.0 / PI).abs() < 1e-15);
        assert_eq!(dob.delta(PI), 0.0);

        let dw = Profile::double_well();
        // printed constant integrates to 2; normalization halves it
        assert!((dw.raw_integral - 2.0).abs() < 1e-10, "raw = {}", dw.raw_integral);
        let int = integrate_panels(-40.0, 40.0, 2000, 8, |s| dw.delta(s));
        assert!((int - 1.0).abs() < 1e-8, "normalized integral {int}");
    }

    #[test]
    fn scaled_weights_examples() {
        let g = circle();
        let dob = Profile::double_obstacle();
        let w = ScaledWeights::new(dob, 0.1, g.clone()).unwrap();
        // d/eps = 2 > pi/2 outside the band
        assert_eq!(w.delta_eps(Vec2::new(1.2, 0.0)), 0.0);
        assert!((w.xi_eps(Vec2::new(1.0, 0.0)) - 0.5).abs() < 1e-14);
        assert!((w.delta_eps(Vec2::new(1.0, 0.0)) - 20.0 / PI).abs() < 1e-12);

        let dw = Profile::double_well();
        let w = ScaledWeights::new(dw, 0.05, g).unwrap();
        assert!((w.xi_eps(Vec2::new(1.0, 0.0)) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn cxi_double_obstacle_is_pi_over_8() {
        let p = Profile::double_obstacle();
        let c = cxi_constant(&p).unwrap();
        assert!(c >= PI / 8.0 * (1.0 - 1e-7), "C_xi = {c}");
        assert!(c <= PI / 8.0 * 1.01, "C_xi = {c}");
    }

    #[test]
    fn cxi_double_well_positive_interior() {
        let p = Profile::double_well();
        let c = cxi_constant(&p).unwrap();
        assert!(c > 0.0 && c.is_finite());
        // ratio grows in both tails, so the infimum is interior and modest
        assert!(c < 10.0, "C_xi = {c}");
    }

    #[test]
    fn cxi_broken_profile_fails() {
        // delta positive where xi vanishes
        let xi: ScalarFn = Arc::new(|s: f64| if s > 0.5 { 0.0 } else { 0.5 * (1.0 - s.clamp(-1.0, 1.0)) });
        let delta: ScalarFn = Arc::new(|s: f64| if s.abs() <= 2.0 { 0.25 } else { 0.0 });
        let p = Profile::custom(xi, delta, 2.0);
        assert!(matches!(
            cxi_constant(&p),
            Err(ProfileError::NoDominationConstant { .. })
        ));
    }

    #[test]
    fn verify_shipped_profiles() {
        for mut p in [Profile::double_well(), Profile::double_obstacle()] {
            let report = verify_profile(&mut p, 1e-8);
            assert!(report.all_passed(), "{:#?}", report.checks);
            assert!(report.c_delta_int.is_finite());
            assert!(report.c_xi.unwrap() > 0.0);
        }
    }

    #[test]
    fn verify_cauchy_profile_fails_moments() {
        // delta = 1/(pi (1+s^2)): second moment diverges
        let xi: ScalarFn = Arc::new(|s: f64| 0.5 * (1.0 - (s / SQRT2).tanh()));
        let delta: ScalarFn = Arc::new(|s: f64| 1.0 / (PI * (1.0 + s * s)));
        let mut p = Profile::custom(xi, delta, f64::INFINITY);
        let report = verify_profile(&mut p, 1e-8);
        assert!(!report.all_passed());
        let moment = report
            .checks
            .iter()
            .find(|c| c.name == "c_delta_int_finite")
            .unwrap();
        assert!(!moment.passed);
        assert!(!p.is_verified());
    }

    #[test]
    fn unverified_profiles_rejected_by_scaled_weights() {
        let xi: ScalarFn = Arc::new(|_| 0.5);
        let delta: ScalarFn = Arc::new(|_| 0.0);
        let p = Profile::custom(xi, delta, 1.0);
        assert!(matches!(
            ScaledWeights::new(p, 0.1, circle()),
            Err(ProfileError::Unverified)
        ));
    }

    #[test]
    fn xi_pointwise_limit_is_monotone() {
        for p in [Profile::double_well(), Profile::double_obstacle()] {
            for x in [-0.3_f64, 0.2] {
                let vals: Vec<f64> = [0.1, 0.01, 0.001].iter().map(|&e| p.xi(x / e)).collect();
                if x < 0.0 {
                    assert!(vals[0] <= vals[1] && vals[1] <= vals[2]);
                    assert!((vals[2] - 1.0).abs() < 1e-6);
                } else {
                    assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
                    assert!(vals[2] < 1e-6);
                }
            }
        }
    }

    #[test]
    fn delta_evenness_exact() {
        for p in [Profile::double_well(), Profile::double_obstacle()] {
            for i in 0..2000 {
                let s = 0.002 * i as f64;
                assert_eq!(p.delta(s), p.delta(-s));
            }
        }
    }

    #[test]
    fn scaling_identity() {
        for p in [Profile::double_well(), Profile::double_obstacle()] {
            for eps in [1.0, 0.3, 0.05] {
                let cut = p.quad_cut() * eps;
                let int = integrate_panels(-cut, cut, 4000, 8, |s| p.delta(s / eps) / eps);
                assert!((int - 1.0).abs() < 1e-8, "eps = {eps}: {int}");
            }
        }
    }

    #[test]
    fn scaled_domination_inequality() {
        let g = circle();
        for p in [Profile::double_well(), Profile::double_obstacle()] {
            let c = cxi_constant(&p).unwrap();
            let w = ScaledWeights::new(p, 0.1, g.clone()).unwrap();
            for i in 0..1000 {
                let d = -1.5 + 3.0 * i as f64 / 1000.0;
                let (xi, delta) = w.weights_of_d(d);
                assert!(c * delta <= (xi / w.epsilon) * (1.0 + 1e-6) + 1e-12);
            }
        }
    }
}
