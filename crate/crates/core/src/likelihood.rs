//! Choice probabilities, log-likelihood, score and observed information.
//!
//! Utilities are `u_ij = (x_ij' delta) * exp(w_i' gamma)`. The heterogeneity
//! index `w_i' gamma` is clamped to `[-HETEROGENEITY_CLAMP, HETEROGENEITY_CLAMP]`;
//! beyond that range the probabilities are saturated to machine resolution.
//! A clamped chooser contributes nothing to the gamma block of the score.
//!
//! Per-chooser contributions are summed in fixed-size chunks: chunks may run
//! on any number of threads, but partial sums are always combined in chooser
//! order so results do not depend on the thread count.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ChooserBlock, Design};

/// Bound on `|w_i' gamma|`.
pub const HETEROGENEITY_CLAMP: f64 = 30.0;

const CHUNK: usize = 64;

/// `exp(w' gamma)`, the inverse of the chooser's latent standard deviation.
pub fn heterogeneity_factor(w: &[f64], gamma: &[f64]) -> Result<f64> {
    Ok(scale(w, gamma, "-")?.factor)
}

#[derive(Debug, Clone, Copy)]
struct Scale {
    factor: f64,
    clamped: bool,
}

fn scale(w: &[f64], gamma: &[f64], chooser: &str) -> Result<Scale> {
    if w.len() != gamma.len() {
        return Err(Error::dimension("heterogeneity covariates", gamma.len(), w.len()));
    }
    let index: f64 = w.iter().zip(gamma).map(|(a, b)| a * b).sum();
    if !index.is_finite() {
        return Err(Error::Evaluation {
            chooser: chooser.to_string(),
            message: format!("heterogeneity index w'gamma is {index}"),
        });
    }
    let clamped = index.abs() > HETEROGENEITY_CLAMP;
    let index = index.clamp(-HETEROGENEITY_CLAMP, HETEROGENEITY_CLAMP);
    Ok(Scale {
        factor: index.exp(),
        clamped,
    })
}

/// Per-chooser quantities shared by every evaluation.
struct ChooserTerms {
    /// Location predictors `x_ij' delta`.
    eta: Vec<f64>,
    scale: Scale,
    probs: Vec<f64>,
    /// `log sum_s exp(u_is)`.
    log_norm: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_block(block: &ChooserBlock, n_location: usize, n_heterogeneity: usize) -> Result<()> {
    if let Some(r) = block.rows.iter().find(|r| r.x.len() != n_location) {
        return Err(Error::dimension(
            format!("design row of chooser {}", block.chooser_id),
            n_location,
            r.x.len(),
        ));
    }
    if block.w.len() != n_heterogeneity {
        return Err(Error::dimension(
            format!("heterogeneity covariates of chooser {}", block.chooser_id),
            n_heterogeneity,
            block.w.len(),
        ));
    }
    Ok(())
}

fn chooser_terms(block: &ChooserBlock, delta: &[f64], gamma: &[f64]) -> Result<ChooserTerms> {
    let scale = scale(&block.w, gamma, &block.chooser_id)?;
    let eta: Vec<f64> = block.rows.iter().map(|r| dot(&r.x, delta)).collect();
    let utilities: Vec<f64> = eta.iter().map(|e| e * scale.factor).collect();
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || utilities.iter().any(|u| u.is_nan()) {
        return Err(Error::Evaluation {
            chooser: block.chooser_id.clone(),
            message: "non-finite utility".to_string(),
        });
    }
    let mut probs: Vec<f64> = utilities.iter().map(|u| (u - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(ChooserTerms {
        eta,
        scale,
        probs,
        log_norm: max + total.ln(),
    })
}

fn split_theta<'a>(design: &Design, theta: &'a [f64]) -> Result<(&'a [f64], &'a [f64])> {
    if theta.len() != design.n_free() {
        return Err(Error::dimension("free-parameter vector", design.n_free(), theta.len()));
    }
    Ok(theta.split_at(design.n_location))
}

fn block_theta<'a>(block: &ChooserBlock, theta: &'a [f64]) -> Result<(&'a [f64], &'a [f64])> {
    let n_location = block.rows.first().map_or(0, |r| r.x.len());
    let expected = n_location + block.w.len();
    if theta.len() != expected {
        return Err(Error::dimension("free-parameter vector", expected, theta.len()));
    }
    check_block(block, n_location, block.w.len())?;
    Ok(theta.split_at(n_location))
}

fn chosen(block: &ChooserBlock) -> Result<usize> {
    block.chosen.ok_or_else(|| Error::Evaluation {
        chooser: block.chooser_id.clone(),
        message: "no observed choice; likelihood is undefined".to_string(),
    })
}

/// Choice probabilities of one chooser under the packed free parameters.
pub fn choice_probabilities(block: &ChooserBlock, theta: &[f64]) -> Result<Vec<f64>> {
    let (delta, gamma) = block_theta(block, theta)?;
    Ok(chooser_terms(block, delta, gamma)?.probs)
}

/// `P(j) / P(s)` for 1-based alternatives `j` and `s`.
pub fn odds(block: &ChooserBlock, theta: &[f64], j: usize, s: usize) -> Result<f64> {
    let (delta, gamma) = block_theta(block, theta)?;
    let n = block.rows.len();
    for a in [j, s] {
        if a == 0 || a > n {
            return Err(Error::Config(format!("alternative {a} is outside 1..={n}")));
        }
    }
    let f = scale(&block.w, gamma, &block.chooser_id)?.factor;
    let diff: f64 = block.rows[j - 1]
        .x
        .iter()
        .zip(&block.rows[s - 1].x)
        .zip(delta)
        .map(|((a, b), d)| (a - b) * d)
        .sum();
    Ok((diff * f).exp())
}

/// Probabilities for every chooser of a design.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityTable {
    pub chooser_ids: Vec<String>,
    pub probabilities: Vec<Vec<f64>>,
}

impl ProbabilityTable {
    /// 1-based alternative with the largest probability (lowest index on ties).
    pub fn argmax(&self, row: usize) -> usize {
        let p = &self.probabilities[row];
        let mut best = 0;
        for (j, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = j;
            }
        }
        best + 1
    }
}

pub fn predict(design: &Design, theta: &[f64]) -> Result<ProbabilityTable> {
    let (delta, gamma) = split_theta(design, theta)?;
    let probabilities = design
        .blocks
        .par_iter()
        .map(|b| {
            check_block(b, design.n_location, design.n_heterogeneity)?;
            Ok(chooser_terms(b, delta, gamma)?.probs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbabilityTable {
        chooser_ids: design.blocks.iter().map(|b| b.chooser_id.clone()).collect(),
        probabilities,
    })
}

/// Value, score and (optionally) observed information at one parameter point.
#[derive(Debug, Clone)]
pub struct LikelihoodEvaluation {
    pub value: f64,
    pub score: Vec<f64>,
    pub observed_information: Option<DMatrix<f64>>,
    /// Number of choosers whose heterogeneity index hit the clamp.
    pub clamped: usize,
}

/// Neumaier compensated sum. The log-likelihood of a large sample is
/// large in magnitude while late Newton steps change it by less than one
/// ulp, so plain summation noise would stall the line search.
#[derive(Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.compensation
    }
}

#[derive(Clone)]
struct Partial {
    value: CompensatedSum,
    score: Vec<f64>,
    clamped: usize,
}

impl Partial {
    fn zero(p: usize) -> Self {
        Self {
            value: CompensatedSum::default(),
            score: vec![0.0; p],
            clamped: 0,
        }
    }

    fn add(&mut self, other: &Partial) {
        self.value.add(other.value.sum);
        self.value.add(other.value.compensation);
        for (a, b) in self.score.iter_mut().zip(&other.score) {
            *a += b;
        }
        self.clamped += other.clamped;
    }
}

/// Adds one chooser's log-likelihood and score contribution into `acc`.
fn accumulate(block: &ChooserBlock, delta: &[f64], gamma: &[f64], with_score: bool, acc: &mut Partial) -> Result<()> {
    let c = chosen(block)?;
    let t = chooser_terms(block, delta, gamma)?;
    let f = t.scale.factor;
    acc.value.add(t.eta[c] * f - t.log_norm);
    acc.clamped += usize::from(t.scale.clamped);
    if !with_score {
        return Ok(());
    }
    let n_location = delta.len();
    let (loc, het) = acc.score.split_at_mut(n_location);
    // Location block: f * (x_ic - sum_s pi_is x_is).
    for (s, row) in block.rows.iter().enumerate() {
        let weight = f * (if s == c { 1.0 } else { 0.0 } - t.probs[s]);
        if weight != 0.0 {
            for (g, x) in loc.iter_mut().zip(&row.x) {
                *g += weight * x;
            }
        }
    }
    // Heterogeneity block: w_il * f * (eta_ic - sum_s pi_is eta_is).
    if !t.scale.clamped {
        let expected_eta: f64 = t.probs.iter().zip(&t.eta).map(|(p, e)| p * e).sum();
        let common = f * (t.eta[c] - expected_eta);
        for (g, w) in het.iter_mut().zip(&block.w) {
            *g += w * common;
        }
    }
    Ok(())
}

fn reduce(design: &Design, theta: &[f64], with_score: bool) -> Result<Partial> {
    let (delta, gamma) = split_theta(design, theta)?;
    let p = if with_score { theta.len() } else { 0 };
    let partials = design
        .blocks
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Partial::zero(p);
            for block in chunk {
                check_block(block, design.n_location, design.n_heterogeneity)?;
                accumulate(block, delta, gamma, with_score, &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = Partial::zero(p);
    for part in &partials {
        total.add(part);
    }
    Ok(total)
}

/// `sum_i log pi_{i, chosen}`.
pub fn log_likelihood(design: &Design, theta: &[f64]) -> Result<f64> {
    Ok(reduce(design, theta, false)?.value.value())
}

/// Analytic gradient of [`log_likelihood`] with respect to the packed free parameters.
pub fn score(design: &Design, theta: &[f64]) -> Result<Vec<f64>> {
    Ok(reduce(design, theta, true)?.score)
}

/// Central-difference step used for the observed information.
pub fn fd_step(theta_t: f64) -> f64 {
    1e-5 * (1.0 + theta_t.abs())
}

/// Hessian of the log-likelihood from central differences of the analytic
/// score. Column `t` is the derivative of the score along coordinate `t`;
/// the result is not symmetrized.
pub fn score_difference_hessian<F>(theta: &[f64], mut gradient: F) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let p = theta.len();
    let mut hessian = DMatrix::zeros(p, p);
    let mut probe = theta.to_vec();
    for t in 0..p {
        let h = fd_step(theta[t]);
        probe[t] = theta[t] + h;
        let up = gradient(&probe)?;
        probe[t] = theta[t] - h;
        let down = gradient(&probe)?;
        probe[t] = theta[t];
        // Use the realized step so rounding in theta +- h does not bias the quotient.
        let width = (theta[t] + h) - (theta[t] - h);
        for r in 0..p {
            hessian[(r, t)] = (up[r] - down[r]) / width;
        }
    }
    Ok(hessian)
}

/// Unsymmetrized Hessian of the log-likelihood.
pub fn log_likelihood_hessian(design: &Design, theta: &[f64]) -> Result<DMatrix<f64>> {
    split_theta(design, theta)?;
    score_difference_hessian(theta, |t| score(design, t))
}

/// Negative Hessian of the log-likelihood, symmetrized as `-(H + H')/2`.
pub fn observed_information(design: &Design, theta: &[f64]) -> Result<DMatrix<f64>> {
    let h = log_likelihood_hessian(design, theta)?;
    Ok(-(&h + h.transpose()) * 0.5)
}

/// Log-likelihood and score in one pass, with the observed information on request.
pub fn evaluate(design: &Design, theta: &[f64], with_information: bool) -> Result<LikelihoodEvaluation> {
    let total = reduce(design, theta, true)?;
    let observed_information = if with_information {
        Some(observed_information(design, theta)?)
    } else {
        None
    };
    Ok(LikelihoodEvaluation {
        value: total.value.value(),
        score: total.score,
        observed_information,
        clamped: total.clamped,
    })
}
