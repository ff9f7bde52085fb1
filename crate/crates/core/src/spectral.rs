//! Characteristic functions and stability classification for the delayed
//! population systems.
//!
//! ξ₁ and ξ₂ vanish exactly on the spectrum of the delayed population
//! generator in the half plane Re λ > −μ∞:
//!   ξ₁(λ) = −1 + ∫₀^∞ ∫_{−r}^0 β₁(σ,a) e^{λσ} f_λ(a) dσ da,
//!   ξ₂(λ) = −1 + ∫₀^∞ β₂(a) f_λ(a) e^{−λr} da,
//! with the kernel f_λ(a) = e^{−∫₀^a (λ + μ(s) + e^{−λr} α(s)) ds}. Their
//! sign at λ = 0 decides the growth-bound trichotomy, and the dominant real
//! root is the growth rate of the positive semigroup.
//!
//! Quadrature runs on the model's own age and σ grids, so spectral and
//! simulated answers share discretization bias.

use serde::Serialize;
use thiserror::Error;

use crate::population::{
    simulate, AgePopulationModel, BirthLaw, HistoryInit, SimError, Trajectory,
};

/// Evaluation margin above −μ∞; the ξ formulas are valid only there.
pub const LAMBDA_MARGIN: f64 = 1e-6;

/// Width of the ξ(0) band classified as critical.
pub const CRITICAL_BAND: f64 = 1e-9;

/// Simulation-side tolerance on the measured growth of a critical case; the
/// scheme and quadrature are first order, and this is the empirically
/// budgeted bias at the default grids.
pub const CRITICAL_GROWTH_TOL: f64 = 0.02;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("lambda = {lambda} outside validity domain (requires lambda > {limit})")]
    Domain { lambda: f64, limit: f64 },
    #[error("model has no {needed} birth law")]
    WrongBirthLaw { needed: &'static str },
    #[error("growth fit failed: {0}")]
    Fit(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityClass {
    Stable,
    Critical,
    Unstable,
}

/// Spectral analysis result; `measured_growth` and `agreement` are filled by
/// [`cross_check`] only.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralReport {
    pub xi_at_zero: f64,
    pub dominant_root: Option<f64>,
    pub stability_class: StabilityClass,
    pub sufficient_condition_holds: bool,
    pub measured_growth: Option<f64>,
    pub agreement: Option<f64>,
}

/// Evaluates ξ on a model's own grids.
///
/// ```
/// use delaylab_core::population::{build_model, BirthSpec, ModelConfig, RateSpec};
/// use delaylab_core::spectral::CharacteristicEvaluator;
///
/// // Constant rates mu = 1, beta = 2 without delay: xi2(l) = -1 + 2/(l + 1).
/// let model = build_model(ModelConfig {
///     a_max: 20.0,
///     n_age: 20_000,
///     dt: None,
///     r: 0.0,
///     mu: RateSpec::Constant(1.0),
///     alpha: RateSpec::Constant(0.0),
///     eta: RateSpec::Constant(0.0),
///     birth: BirthSpec::B2Constant(2.0),
///     mu_inf: 1.0,
/// })
/// .unwrap();
/// let eval = CharacteristicEvaluator::new(&model);
/// assert!((eval.xi2(1.0).unwrap()).abs() < 1e-6);
/// ```
#[derive(Clone, Copy, Debug)]
pub struct CharacteristicEvaluator<'a> {
    model: &'a AgePopulationModel,
}

fn check_domain(model: &AgePopulationModel, lambda: f64) -> Result<(), SpectralError> {
    let limit = -model.mu_inf() + LAMBDA_MARGIN;
    if !lambda.is_finite() || lambda <= limit - 1e-15 {
        return Err(SpectralError::Domain { lambda, limit });
    }
    Ok(())
}

/// Cumulative trapezoid of λ + μ(s) + e^{−λr} α(s) along the age grid.
fn exponent_prefix(model: &AgePopulationModel, lambda: f64) -> Vec<f64> {
    let damp = (-lambda * model.delay()).exp();
    let g: Vec<f64> = model
        .mu()
        .iter()
        .zip(model.alpha())
        .map(|(m, a)| lambda + m + damp * a)
        .collect();
    let mut prefix = vec![0.0; g.len()];
    for j in 1..g.len() {
        prefix[j] = prefix[j - 1] + 0.5 * model.dt() * (g[j - 1] + g[j]);
    }
    prefix
}

fn trapezoid_sum(values: &[f64], h: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let interior: f64 = values[1..values.len() - 1].iter().sum();
    h * (0.5 * values[0] + interior + 0.5 * values[values.len() - 1])
}

/// Volterra kernel f_λ(a) at age node j; the α = 0 reduction is the
/// resolvent kernel e^{−∫₀^a (λ+μ)} of the base generator.
pub fn resolvent_kernel(
    model: &AgePopulationModel,
    lambda: f64,
    age_node: usize,
) -> Result<f64, SpectralError> {
    check_domain(model, lambda)?;
    let prefix = exponent_prefix(model, lambda);
    Ok((-prefix[age_node.min(prefix.len() - 1)]).exp())
}

impl<'a> CharacteristicEvaluator<'a> {
    pub fn new(model: &'a AgePopulationModel) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &AgePopulationModel {
        self.model
    }

    /// ξ for the model's own birth law.
    pub fn xi(&self, lambda: f64) -> Result<f64, SpectralError> {
        match self.model.birth() {
            BirthLaw::B1 { .. } => self.xi1(lambda),
            BirthLaw::B2 { .. } => self.xi2(lambda),
        }
    }

    pub fn xi1(&self, lambda: f64) -> Result<f64, SpectralError> {
        check_domain(self.model, lambda)?;
        let BirthLaw::B1 { beta } = self.model.birth() else {
            return Err(SpectralError::WrongBirthLaw { needed: "B1" });
        };
        let k = self.model.delay_steps();
        if k == 0 {
            return Ok(-1.0);
        }
        let prefix = exponent_prefix(self.model, lambda);
        let dt = self.model.dt();
        let r = self.model.delay();
        // Inner σ integral per age node, then the outer age integral.
        let mut integrand = vec![0.0; self.model.nodes()];
        for (i, row) in beta.iter().enumerate() {
            let sigma = -r + i as f64 * dt;
            let w = if i == 0 || i == k { 0.5 * dt } else { dt };
            let factor = w * (lambda * sigma).exp();
            for (dst, b) in integrand.iter_mut().zip(row) {
                *dst += factor * b;
            }
        }
        for (j, v) in integrand.iter_mut().enumerate() {
            *v *= (-prefix[j]).exp();
        }
        Ok(-1.0 + trapezoid_sum(&integrand, dt))
    }

    pub fn xi2(&self, lambda: f64) -> Result<f64, SpectralError> {
        check_domain(self.model, lambda)?;
        let BirthLaw::B2 { beta } = self.model.birth() else {
            return Err(SpectralError::WrongBirthLaw { needed: "B2" });
        };
        let prefix = exponent_prefix(self.model, lambda);
        let damp = (-lambda * self.model.delay()).exp();
        let integrand: Vec<f64> = beta
            .iter()
            .enumerate()
            .map(|(j, b)| b * (-prefix[j]).exp())
            .collect();
        Ok(-1.0 + damp * trapezoid_sum(&integrand, self.model.dt()))
    }
}

/// Locates the dominant real root of ξ in (−μ∞ + margin, ∞).
///
/// ξ is continuous and strictly decreasing for nonnegative rates, so the
/// bracket expands to the right until a sign change appears, then bisects to
/// 1e−10. Returns `None` when ξ < 0 already at the left edge: the dominant
/// root then sits at or below −μ∞, outside the formula's validity. A detected
/// monotonicity violation downgrades to a full bracket scan that keeps the
/// right-most sign change.
pub fn dominant_real_root(eval: &CharacteristicEvaluator) -> Result<Option<f64>, SpectralError> {
    let lo = -eval.model().mu_inf() + LAMBDA_MARGIN;
    let f_lo = eval.xi(lo)?;
    if f_lo < 0.0 {
        return Ok(None);
    }
    if f_lo == 0.0 {
        return Ok(Some(lo));
    }
    let mut hi = lo + 1.0;
    let mut f_hi = eval.xi(hi)?;
    while f_hi > 0.0 {
        hi = lo + 2.0 * (hi - lo);
        if hi - lo > 1e6 {
            return Ok(None);
        }
        f_hi = eval.xi(hi)?;
    }

    // Coarse monotone probe across [lo, hi].
    let mut monotone = true;
    let probes = 32;
    let mut prev = f_lo;
    for i in 1..=probes {
        let x = lo + (hi - lo) * i as f64 / probes as f64;
        let v = eval.xi(x)?;
        if v > prev + 1e-12 {
            monotone = false;
        }
        prev = v;
    }

    let (mut a, mut b) = if monotone {
        (lo, hi)
    } else {
        // Full scan; keep the right-most sign-change cell.
        let steps = ((hi - lo) / 1e-2).ceil().max(100.0) as usize;
        let mut cell = None;
        let mut xa = lo;
        let mut fa = f_lo;
        for i in 1..=steps {
            let xb = lo + (hi - lo) * i as f64 / steps as f64;
            let fb = eval.xi(xb)?;
            if fa * fb <= 0.0 && fa != fb {
                cell = Some((xa, xb));
            }
            xa = xb;
            fa = fb;
        }
        match cell {
            Some(c) => c,
            None => return Ok(None),
        }
    };

    let mut fa = eval.xi(a)?;
    while b - a > 1e-10 {
        let mid = 0.5 * (a + b);
        let fm = eval.xi(mid)?;
        if fm == 0.0 {
            return Ok(Some(mid));
        }
        if fa * fm < 0.0 {
            b = mid;
        } else {
            a = mid;
            fa = fm;
        }
    }
    Ok(Some(0.5 * (a + b)))
}

fn beta_sup(model: &AgePopulationModel) -> f64 {
    match model.birth() {
        BirthLaw::B1 { beta } => beta
            .iter()
            .flat_map(|row| row.iter())
            .fold(0.0f64, |m, v| m.max(*v)),
        BirthLaw::B2 { beta } => beta.iter().fold(0.0f64, |m, v| m.max(*v)),
    }
}

/// The sufficient stability inequality ‖β‖∞ · ∫₀^∞ e^{−∫₀^a μ} da < 1,
/// evaluated by quadrature with the age integral truncated at a_max.
pub fn sufficient_condition_holds(model: &AgePopulationModel) -> bool {
    let dt = model.dt();
    let mut prefix = 0.0;
    let mu = model.mu();
    let mut survival = Vec::with_capacity(model.nodes());
    survival.push(1.0);
    for j in 1..model.nodes() {
        prefix += 0.5 * dt * (mu[j - 1] + mu[j]);
        survival.push((-prefix).exp());
    }
    beta_sup(model) * trapezoid_sum(&survival, dt) < 1.0
}

/// Analysis-side stability report: ξ(0), the dominant real root, the sign
/// trichotomy, and the sufficient condition. Simulation fields stay empty.
pub fn classify_stability(eval: &CharacteristicEvaluator) -> Result<SpectralReport, SpectralError> {
    let xi0 = eval.xi(0.0)?;
    let class = if xi0.abs() <= CRITICAL_BAND {
        StabilityClass::Critical
    } else if xi0 < 0.0 {
        StabilityClass::Stable
    } else {
        StabilityClass::Unstable
    };
    Ok(SpectralReport {
        xi_at_zero: xi0,
        dominant_root: dominant_real_root(eval)?,
        stability_class: class,
        sufficient_condition_holds: sufficient_condition_holds(eval.model()),
        measured_growth: None,
        agreement: None,
    })
}

/// Least-squares slope of log(total population) against t over the tail
/// window after discarding the leading fraction of samples.
pub fn growth_rate_fit(traj: &Trajectory, discard_fraction: f64) -> Result<f64, SpectralError> {
    if !(0.0..1.0).contains(&discard_fraction) {
        return Err(SpectralError::Fit(format!(
            "discard fraction must be in [0, 1), got {discard_fraction}"
        )));
    }
    let start = ((traj.len() as f64) * discard_fraction).floor() as usize;
    let times = &traj.times[start..];
    let totals = &traj.total_population[start..];
    if times.len() < 2 {
        return Err(SpectralError::Fit("fit window has fewer than 2 samples".into()));
    }
    if totals.iter().any(|v| *v <= 0.0) {
        return Err(SpectralError::Fit(
            "nonpositive total population in fit window (decayed to roundoff?)".into(),
        ));
    }
    let n = times.len() as f64;
    let mean_t: f64 = times.iter().sum::<f64>() / n;
    let mean_y: f64 = totals.iter().map(|v| v.ln()).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, y) in times.iter().zip(totals) {
        let dt = t - mean_t;
        num += dt * (y.ln() - mean_y);
        den += dt * dt;
    }
    if den == 0.0 {
        return Err(SpectralError::Fit("degenerate fit window".into()));
    }
    Ok(num / den)
}

/// Runs the simulation, fits the measured growth, and combines it with the
/// spectral analysis; agreement = |measured − root| / max(|root|, 0.05).
pub fn cross_check(
    model: &AgePopulationModel,
    history: &HistoryInit,
    t_max: f64,
    discard_fraction: f64,
) -> Result<SpectralReport, SpectralError> {
    let eval = CharacteristicEvaluator::new(model);
    let mut report = classify_stability(&eval)?;
    let traj = simulate(model, history, t_max, None, None)?;
    let measured = growth_rate_fit(&traj, discard_fraction)?;
    report.measured_growth = Some(measured);
    report.agreement = report
        .dominant_root
        .map(|root| (measured - root).abs() / root.abs().max(0.05));
    Ok(report)
}
