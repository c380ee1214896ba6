//! Maximum-likelihood fitting and inference.
//!
//! The objective is `l(theta) - penalty(theta)`. It is maximized by Newton
//! ascent using the observed information as curvature, with step halving.
//! When the information is not positive definite, or the Newton step is
//! not an ascent direction, or no halved Newton step improves the objective,
//! a scaled steepest-ascent step is tried instead.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{self, score_difference_hessian};
use crate::model::{Design, ModelSpec, ParameterLabel, ParameterVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the sup-norm of the (penalized) gradient.
    pub gradient_tolerance: f64,
    pub step_halving_max: usize,
    /// Ridge weight.
    pub penalty: f64,
    pub start: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-6,
            step_halving_max: 30,
            penalty: 0.0,
            start: None,
        }
    }
}

impl FitOptions {
    /// Defaults with the penalty taken from `spec`.
    pub fn for_spec(spec: &ModelSpec) -> Self {
        Self {
            penalty: spec.penalty,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.gradient_tolerance.is_finite() && self.gradient_tolerance > 0.0) {
            return Err(Error::Config(format!(
                "gradient_tolerance must be positive, got {}",
                self.gradient_tolerance
            )));
        }
        if !(self.penalty.is_finite() && self.penalty >= 0.0) {
            return Err(Error::Config(format!("penalty must be finite and >= 0, got {}", self.penalty)));
        }
        Ok(())
    }
}

/// Ridge penalty value and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// `lambda * sum theta_t^2` over every free coordinate except the
/// alternative-specific constants.
pub fn penalty(theta: &[f64], spec: &ModelSpec, lambda: f64) -> Penalty {
    let mut value = 0.0;
    let gradient = theta
        .iter()
        .enumerate()
        .map(|(t, &v)| {
            if spec.is_constant(t) || lambda == 0.0 {
                0.0
            } else {
                value += v * v;
                2.0 * lambda * v
            }
        })
        .collect();
    Penalty {
        value: lambda * value,
        gradient,
    }
}

pub fn t_value(estimate: f64, std_error: f64) -> f64 {
    estimate / std_error
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub covariance: DMatrix<f64>,
    pub std_errors: Vec<f64>,
    pub t_values: Vec<f64>,
}

/// Covariance, standard errors and t-values from an observed information matrix.
pub fn inference_from_information(
    information: &DMatrix<f64>,
    theta: &[f64],
    labels: &[ParameterLabel],
) -> Result<Inference> {
    let p = theta.len();
    if information.nrows() != p || information.ncols() != p {
        return Err(Error::dimension("observed information", p, information.nrows()));
    }
    let near_null = || {
        let eig = SymmetricEigen::new(information.clone());
        let (idx, &eigenvalue) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty information");
        let vector = eig.eigenvectors.column(idx);
        let dominant = vector.iamax();
        Error::Singular {
            direction: labels
                .get(dominant)
                .map_or_else(|| format!("coordinate {dominant}"), ToString::to_string),
            eigenvalue,
        }
    };
    if p == 0 {
        return Ok(Inference {
            covariance: DMatrix::zeros(0, 0),
            std_errors: vec![],
            t_values: vec![],
        });
    }
    // Reject numerically rank-deficient information even if Cholesky succeeds.
    let eig = SymmetricEigen::new(information.clone());
    let max_abs = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if min.is_nan() || min <= max_abs * 1e-12 {
        return Err(near_null());
    }
    let chol = information.clone().cholesky().ok_or_else(near_null)?;
    let covariance = chol.inverse();
    let std_errors: Vec<f64> = (0..p).map(|t| covariance[(t, t)].sqrt()).collect();
    if std_errors.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(near_null());
    }
    let t_values = theta.iter().zip(&std_errors).map(|(&c, &s)| t_value(c, s)).collect();
    Ok(Inference {
        covariance,
        std_errors,
        t_values,
    })
}

/// Inverse observed information at `theta` and the derived standard errors.
pub fn inference(design: &Design, spec: &ModelSpec, theta: &[f64]) -> Result<Inference> {
    let information = likelihood::observed_information(design, theta)?;
    inference_from_information(&information, theta, &spec.parameter_labels())
}

/// Something Newton ascent can maximize.
trait Objective {
    fn value(&self, theta: &[f64]) -> Result<f64>;
    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;
    /// Negative Hessian of the objective.
    fn information(&self, theta: &[f64]) -> Result<DMatrix<f64>>;
}

/// Penalized log-likelihood over every free parameter.
struct Penalized<'a> {
    design: &'a Design,
    spec: &'a ModelSpec,
    lambda: f64,
}

impl Objective for Penalized<'_> {
    fn value(&self, theta: &[f64]) -> Result<f64> {
        Ok(likelihood::log_likelihood(self.design, theta)? - penalty(theta, self.spec, self.lambda).value)
    }

    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let eval = likelihood::evaluate(self.design, theta, false)?;
        let pen = penalty(theta, self.spec, self.lambda);
        let gradient = eval.score.iter().zip(&pen.gradient).map(|(s, p)| s - p).collect();
        Ok((eval.value - pen.value, gradient))
    }

    fn information(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let mut info = likelihood::observed_information(self.design, theta)?;
        add_ridge_curvature(&mut info, self.spec, self.lambda);
        Ok(info)
    }
}

/// Penalized plain-MNL log-likelihood over the location parameters, gamma = 0.
struct LocationOnly<'a> {
    inner: Penalized<'a>,
}

impl LocationOnly<'_> {
    fn full(&self, location: &[f64]) -> Vec<f64> {
        let mut theta = location.to_vec();
        theta.resize(self.inner.design.n_free(), 0.0);
        theta
    }

    fn gradient(&self, location: &[f64]) -> Result<Vec<f64>> {
        let (_, mut g) = self.inner.value_and_gradient(&self.full(location))?;
        g.truncate(location.len());
        Ok(g)
    }
}

impl Objective for LocationOnly<'_> {
    fn value(&self, theta: &[f64]) -> Result<f64> {
        self.inner.value(&self.full(theta))
    }

    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, mut g) = self.inner.value_and_gradient(&self.full(theta))?;
        g.truncate(theta.len());
        Ok((v, g))
    }

    fn information(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let h = score_difference_hessian(theta, |t| self.gradient(t))?;
        Ok(-(&h + h.transpose()) * 0.5)
    }
}

fn add_ridge_curvature(info: &mut DMatrix<f64>, spec: &ModelSpec, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    for t in 0..info.nrows() {
        if !spec.is_constant(t) {
            info[(t, t)] += 2.0 * lambda;
        }
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct AscentOutcome {
    theta: Vec<f64>,
    value: f64,
    gradient: Vec<f64>,
    iterations: usize,
    converged: bool,
    warnings: Vec<String>,
    /// Objective after every accepted step, starting with the initial value.
    trace: Vec<f64>,
}

fn newton_direction(info: &DMatrix<f64>, gradient: &[f64]) -> Option<Vec<f64>> {
    let chol = info.clone().cholesky()?;
    let d = chol.solve(&DVector::from_column_slice(gradient));
    let ascent: f64 = d.iter().zip(gradient).map(|(a, b)| a * b).sum();
    if d.iter().all(|v| v.is_finite()) && ascent > 0.0 {
        Some(d.as_slice().to_vec())
    } else {
        None
    }
}

fn steepest_direction(gradient: &[f64]) -> Vec<f64> {
    let scale = sup_norm(gradient).max(1.0);
    gradient.iter().map(|g| g / scale).collect()
}

/// Halves the step along `direction` until the objective does not decrease.
fn line_search<O: Objective>(
    objective: &O,
    theta: &[f64],
    value: f64,
    direction: &[f64],
    max_halvings: usize,
) -> Option<(Vec<f64>, f64)> {
    let mut step = 1.0;
    for _ in 0..=max_halvings {
        let candidate: Vec<f64> = theta.iter().zip(direction).map(|(t, d)| t + step * d).collect();
        if let Ok(v) = objective.value(&candidate) {
            if v.is_finite() && v >= value {
                return Some((candidate, v));
            }
        }
        step *= 0.5;
    }
    None
}

fn newton_ascent<O: Objective>(objective: &O, start: Vec<f64>, options: &FitOptions) -> Result<AscentOutcome> {
    let mut theta = start;
    let (mut value, mut gradient) = objective.value_and_gradient(&theta)?;
    let mut warnings = Vec::new();
    let mut trace = vec![value];
    let mut iterations = 0;
    while iterations < options.max_iterations {
        if sup_norm(&gradient) <= options.gradient_tolerance {
            break;
        }
        let newton = match objective.information(&theta) {
            Ok(info) => newton_direction(&info, &gradient),
            Err(_) => None,
        };
        let mut accepted = None;
        if let Some(d) = &newton {
            accepted = line_search(objective, &theta, value, d, options.step_halving_max);
        }
        if accepted.is_none() {
            let d = steepest_direction(&gradient);
            accepted = line_search(objective, &theta, value, &d, options.step_halving_max);
        }
        let Some((next, next_value)) = accepted else {
            warnings.push(format!(
                "line search failed after {} halvings at iteration {}; gradient sup-norm {:.3e}",
                options.step_halving_max,
                iterations + 1,
                sup_norm(&gradient)
            ));
            break;
        };
        iterations += 1;
        let (v, g) = objective.value_and_gradient(&next)?;
        debug_assert_eq!(v.to_bits(), next_value.to_bits());
        theta = next;
        value = v;
        gradient = g;
        trace.push(value);
    }
    let converged = sup_norm(&gradient) <= options.gradient_tolerance;
    if !converged && iterations >= options.max_iterations {
        warnings.push(format!(
            "no convergence after {} iterations; gradient sup-norm {:.3e} exceeds tolerance {:.1e}",
            options.max_iterations,
            sup_norm(&gradient),
            options.gradient_tolerance
        ));
    }
    Ok(AscentOutcome {
        theta,
        value,
        gradient,
        iterations,
        converged,
        warnings,
        trace,
    })
}

/// Number of Newton steps in the plain-MNL pre-fit.
const PREFIT_STEPS: usize = 10;

/// Start vector: gamma = 0 and location parameters from a short plain-MNL
/// pre-fit from zero. Returns the start and any warnings.
pub fn starting_values(design: &Design, spec: &ModelSpec, lambda: f64) -> (Vec<f64>, Vec<String>) {
    let objective = LocationOnly {
        inner: Penalized { design, spec, lambda },
    };
    let options = FitOptions {
        max_iterations: PREFIT_STEPS,
        ..FitOptions::default()
    };
    let mut start = vec![0.0; design.n_free()];
    match newton_ascent(&objective, vec![0.0; design.n_location], &options) {
        Ok(out) if out.theta.iter().all(|v| v.is_finite()) => {
            start[..design.n_location].copy_from_slice(&out.theta);
            (start, vec![])
        }
        Ok(_) => (start, vec!["plain-MNL pre-fit produced non-finite values; starting from zero".into()]),
        Err(e) => (start, vec![format!("plain-MNL pre-fit failed ({e}); starting from zero")]),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ParameterVector,
    /// Packed free parameters, aligned with `labels`.
    pub theta: Vec<f64>,
    pub labels: Vec<ParameterLabel>,
    /// Inverse observed information; `None` when it could not be inverted.
    pub covariance: Option<DMatrix<f64>>,
    pub std_errors: Option<Vec<f64>>,
    pub t_values: Option<Vec<f64>>,
    pub log_likelihood: f64,
    /// Penalized objective at the estimate (equals `log_likelihood` when the penalty is zero).
    pub objective: f64,
    pub penalty: f64,
    /// Sup-norm of the gradient of the objective at the estimate.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
    /// Objective after each accepted iteration, starting with the start value.
    pub objective_trace: Vec<f64>,
}

pub fn fit(design: &Design, spec: &ModelSpec, options: &FitOptions) -> Result<FitResult> {
    options.validate()?;
    spec.validate()?;
    if design.n_free() != spec.n_free() {
        return Err(Error::dimension("design columns", spec.n_free(), design.n_free()));
    }
    if spec.n_free() > design.n_choosers() {
        return Err(Error::Config(format!(
            "{} free parameters exceed the {} choosers",
            spec.n_free(),
            design.n_choosers()
        )));
    }
    design.check_heterogeneity_identified(spec)?;

    let mut warnings = Vec::new();
    let start = match &options.start {
        Some(s) if s.len() != spec.n_free() => {
            return Err(Error::dimension("start vector", spec.n_free(), s.len()));
        }
        Some(s) => s.clone(),
        None => {
            let (s, w) = starting_values(design, spec, options.penalty);
            warnings.extend(w);
            s
        }
    };

    let objective = Penalized {
        design,
        spec,
        lambda: options.penalty,
    };
    let outcome = newton_ascent(&objective, start, options)?;
    warnings.extend(outcome.warnings);

    let eval = likelihood::evaluate(design, &outcome.theta, true)?;
    if eval.clamped > 0 {
        warnings.push(format!(
            "heterogeneity index clamped to +-{} for {} chooser(s)",
            likelihood::HETEROGENEITY_CLAMP,
            eval.clamped
        ));
    }
    let labels = spec.parameter_labels();
    let information = eval.observed_information.expect("requested information");
    let (covariance, std_errors, t_values) = match inference_from_information(&information, &outcome.theta, &labels) {
        Ok(inf) => (Some(inf.covariance), Some(inf.std_errors), Some(inf.t_values)),
        Err(e) => {
            warnings.push(format!("covariance omitted: {e}"));
            (None, None, None)
        }
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    let pen = penalty(&outcome.theta, spec, options.penalty);
    Ok(FitResult {
        params: ParameterVector::unpack(&outcome.theta, spec)?,
        labels,
        covariance,
        std_errors,
        t_values,
        log_likelihood: eval.value,
        objective: outcome.value,
        penalty: pen.value,
        gradient_norm: sup_norm(&outcome.gradient),
        iterations: outcome.iterations,
        converged: outcome.converged,
        warnings,
        objective_trace: outcome.trace,
        theta: outcome.theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_design, ChoiceDataset, ChoiceRow};

    fn binary_intercept_design(n: usize, n_second: usize) -> (Design, ModelSpec) {
        let rows = (0..n)
            .flat_map(|i| {
                let id = format!("c{i:04}");
                let pick_second = i < n_second;
                [
                    ChoiceRow {
                        chooser_id: id.clone(),
                        alternative: 1,
                        chosen: !pick_second,
                        covariates: vec![],
                    },
                    ChoiceRow {
                        chooser_id: id,
                        alternative: 2,
                        chosen: pick_second,
                        covariates: vec![],
                    },
                ]
            })
            .collect();
        let data = ChoiceDataset::new(vec![], rows).unwrap();
        let spec = ModelSpec::new(2);
        (build_design(&data, &spec).unwrap(), spec)
    }

    #[test]
    fn penalty_examples() {
        let spec = ModelSpec::new(2).with_z(["a", "b"]).with_w(["g"]);
        let theta = [5.0, 2.0, 0.0, 3.0];
        assert_eq!(penalty(&theta, &spec, 0.0).value, 0.0);
        let p = penalty(&theta, &spec, 1e-7);
        assert!((p.value - 1.3e-6).abs() < 1e-18);
        assert_eq!(p.gradient[0], 0.0);
        assert!((p.gradient[1] - 4e-7).abs() < 1e-20);
        assert!((p.gradient[3] - 6e-7).abs() < 1e-20);
    }

    #[test]
    fn binary_intercept_closed_form() {
        let (design, spec) = binary_intercept_design(100, 30);
        let fit = fit(&design, &spec, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.theta[0] - (30.0f64 / 70.0).ln()).abs() < 1e-6);
        let se = fit.std_errors.unwrap()[0];
        assert!((se - (1.0f64 / (100.0 * 0.3 * 0.7)).sqrt()).abs() < 1e-4);
    }

    #[test]
    fn t_value_table_arithmetic() {
        assert!((t_value(-0.636, 0.240) - -2.647).abs() < 0.02);
        assert!((t_value(0.405, 0.131) - 3.084).abs() < 0.02);
    }

    #[test]
    fn single_iteration_does_not_converge() {
        let (design, spec) = binary_intercept_design(100, 30);
        let options = FitOptions {
            max_iterations: 1,
            start: Some(vec![2.0]),
            ..FitOptions::default()
        };
        let fit = fit(&design, &spec, &options).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 1);
        assert!(!fit.warnings.is_empty());
    }

    #[test]
    fn separation_gives_huge_standard_error() {
        // Everyone picks alternative 2: the constant drifts off to where the
        // information is nearly zero.
        let (design, spec) = binary_intercept_design(20, 20);
        let fit = fit(&design, &spec, &FitOptions::default()).unwrap();
        assert!(fit.theta[0] > 5.0);
        assert!(fit.std_errors.is_none_or(|s| s[0] > 100.0));
    }

    #[test]
    fn collinear_design_omits_covariance() {
        // z equals the alternative-2 dummy, so constant and alpha are not separately identified.
        let rows = (0..40)
            .flat_map(|i| {
                let id = format!("c{i:03}");
                (1..=2).map(move |a| ChoiceRow {
                    chooser_id: id.clone(),
                    alternative: a,
                    chosen: (a == 2) == (i % 3 == 0),
                    covariates: vec![if a == 2 { 1.0 } else { 0.0 }],
                })
            })
            .collect();
        let data = ChoiceDataset::new(vec!["z".into()], rows).unwrap();
        let spec = ModelSpec::new(2).with_z(["z"]);
        let design = build_design(&data, &spec).unwrap();
        let fit = fit(&design, &spec, &FitOptions::default()).unwrap();
        assert!(fit.covariance.is_none());
        assert!(fit.warnings.iter().any(|w| w.contains("covariance omitted")), "{:?}", fit.warnings);
    }

    #[test]
    fn singular_information_names_direction() {
        let info = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let labels = ModelSpec::new(2).with_z(["price"]).parameter_labels();
        match inference_from_information(&info, &[0.1, 0.2], &labels) {
            Err(Error::Singular { direction, .. }) => assert_eq!(direction, "alpha[price]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn options_validation() {
        assert!(FitOptions { max_iterations: 0, ..FitOptions::default() }.validate().is_err());
        assert!(FitOptions { gradient_tolerance: 0.0, ..FitOptions::default() }.validate().is_err());
        assert!(FitOptions { penalty: -1.0, ..FitOptions::default() }.validate().is_err());
    }

    #[test]
    fn too_many_parameters() {
        let (design, _) = binary_intercept_design(1, 0);
        let spec = ModelSpec::new(2);
        // One parameter, one chooser is allowed; a wrong start length is not.
        let bad = FitOptions {
            start: Some(vec![0.0, 0.0]),
            ..FitOptions::default()
        };
        assert!(matches!(fit(&design, &spec, &bad), Err(Error::Dimension { .. })));
    }
}
