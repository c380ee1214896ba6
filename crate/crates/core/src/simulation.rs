//! Random-utility simulation and probability curves.
//!
//! Choices are drawn as `argmax_j (x_ij' delta + sigma_i * eps_ij)` with
//! `sigma_i = exp(-w_i' gamma)` and i.i.d. standard Gumbel errors obtained
//! by inverse transform, `eps = -ln(-ln U)`.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64(seed)`. Chooser `i` (0-based) uses stream `i` of that
//! generator and draws, in order: its chooser-specific covariates (in column
//! order), its choice-specific covariates (alternative by alternative, in
//! column order), then one Gumbel error per alternative.

use std::collections::BTreeMap;

use rand::distr::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{self, heterogeneity_factor};
use crate::model::{build_design, ChoiceDataset, ChoiceRow, ChooserBlock, ModelSpec, ParameterVector};

/// Name of the generator algorithm, recorded in simulation metadata.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9, seed_from_u64, one stream per chooser)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum CovariateGenerator {
    Constant { value: f64 },
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
}

impl CovariateGenerator {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            CovariateGenerator::Constant { value } => value.is_finite(),
            CovariateGenerator::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
            CovariateGenerator::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            CovariateGenerator::Bernoulli { p } => (0.0..=1.0).contains(&p),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid generator for covariate '{name}': {self:?}")))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            CovariateGenerator::Constant { value } => value,
            CovariateGenerator::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            CovariateGenerator::Normal { mean, sd } => Normal::new(mean, sd).expect("validated").sample(rng),
            CovariateGenerator::Bernoulli { p } => f64::from(u8::from(rng.random::<f64>() < p)),
        }
    }
}

/// Covariate value(s) of a single-chooser profile: one value shared by all
/// alternatives, or one per alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileValue {
    Shared(f64),
    PerAlternative(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_choosers: usize,
    pub spec: ModelSpec,
    pub true_params: ParameterVector,
    pub covariates: BTreeMap<String, CovariateGenerator>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Chooser profile used for probability curves.
    #[serde(default)]
    pub profile: Option<BTreeMap<String, ProfileValue>>,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_choosers == 0 {
            return Err(Error::Config("n_choosers must be at least 1".into()));
        }
        self.spec.validate()?;
        self.true_params.pack(&self.spec)?;
        for name in self.column_names() {
            match self.covariates.get(&name) {
                Some(g) => g.validate(&name)?,
                None => return Err(Error::Config(format!("no generator for covariate '{name}'"))),
            }
        }
        Ok(())
    }

    /// Dataset columns: choice-specific, then chooser-specific (s, then w not in s).
    pub fn column_names(&self) -> Vec<String> {
        let mut names = self.spec.z_names.clone();
        for n in self.spec.s_names.iter().chain(&self.spec.w_names) {
            if !names.contains(n) {
                names.push(n.clone());
            }
        }
        names
    }

    /// Five alternatives, constants only in the location term, and a binary
    /// plus a standard-normal covariate in the heterogeneity term. Alternative
    /// 3 is preferred at the base, alternative 5 second. The profile fixes
    /// the heterogeneity covariates at (1, 0).
    pub fn figure1() -> Self {
        let spec = ModelSpec::new(5).with_w(["binary", "quantitative"]);
        let true_params = ParameterVector {
            constants: vec![0.0, -0.4, 1.0, -0.2, 0.6],
            alpha: vec![],
            betas: vec![vec![]; 5],
            gamma: vec![1.0, 0.5],
        };
        let covariates = BTreeMap::from([
            ("binary".to_string(), CovariateGenerator::Bernoulli { p: 0.5 }),
            ("quantitative".to_string(), CovariateGenerator::Normal { mean: 0.0, sd: 1.0 }),
        ]);
        let profile = BTreeMap::from([
            ("binary".to_string(), ProfileValue::Shared(1.0)),
            ("quantitative".to_string(), ProfileValue::Shared(0.0)),
        ]);
        Self {
            n_choosers: 1000,
            spec,
            true_params,
            covariates,
            seed: Some(20_170_924),
            profile: Some(profile),
        }
    }

    /// Four alternatives, two choice-specific covariates, one
    /// chooser-specific covariate and one heterogeneity covariate.
    pub fn recovery(n_choosers: usize, seed: u64) -> Self {
        let spec = ModelSpec::new(4).with_z(["z1", "z2"]).with_s(["s1"]).with_w(["w1"]);
        let true_params = ParameterVector {
            constants: vec![0.0, 0.5, -0.3, 0.2],
            alpha: vec![0.8, -0.5],
            betas: vec![vec![0.0], vec![0.6], vec![-0.4], vec![0.3]],
            gamma: vec![0.4],
        };
        let covariates = BTreeMap::from([
            ("z1".to_string(), CovariateGenerator::Normal { mean: 0.0, sd: 1.0 }),
            ("z2".to_string(), CovariateGenerator::Uniform { low: -1.0, high: 1.0 }),
            ("s1".to_string(), CovariateGenerator::Bernoulli { p: 0.5 }),
            ("w1".to_string(), CovariateGenerator::Normal { mean: 0.0, sd: 1.0 }),
        ]);
        Self {
            n_choosers,
            spec,
            true_params,
            covariates,
            seed: Some(seed),
            profile: None,
        }
    }

    /// Single-chooser block built from the profile.
    pub fn profile_block(&self) -> Result<ChooserBlock> {
        let profile = self
            .profile
            .as_ref()
            .ok_or_else(|| Error::Config("scenario has no profile".into()))?;
        profile_block(&self.spec, profile)
    }
}

/// Builds a one-chooser design block from covariate values.
pub fn profile_block(spec: &ModelSpec, profile: &BTreeMap<String, ProfileValue>) -> Result<ChooserBlock> {
    spec.validate()?;
    let j = spec.n_alternatives;
    let mut names: Vec<String> = spec.z_names.clone();
    for n in spec.s_names.iter().chain(&spec.w_names) {
        if !names.contains(n) {
            names.push(n.clone());
        }
    }
    let mut columns = Vec::with_capacity(names.len());
    for name in &names {
        let values = match profile.get(name) {
            Some(ProfileValue::Shared(v)) => vec![*v; j],
            Some(ProfileValue::PerAlternative(v)) if v.len() == j => v.clone(),
            Some(ProfileValue::PerAlternative(v)) => {
                return Err(Error::dimension(format!("profile values of '{name}'"), j, v.len()));
            }
            None => return Err(Error::Config(format!("profile has no value for covariate '{name}'"))),
        };
        columns.push(values);
    }
    let rows = (0..j)
        .map(|a| ChoiceRow {
            chooser_id: "profile".into(),
            alternative: a + 1,
            chosen: false,
            covariates: columns.iter().map(|c| c[a]).collect(),
        })
        .collect();
    let data = ChoiceDataset::without_response(names, rows)?;
    let mut design = build_design(&data, spec)?;
    Ok(design.blocks.remove(0))
}

fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = Open01.sample(rng);
    -(-u.ln()).ln()
}

/// Draws a choice by random-utility maximization. Returns the 1-based
/// alternative; exact ties go to the lowest index.
pub fn sample_choice<R: Rng + ?Sized>(block: &ChooserBlock, theta: &[f64], rng: &mut R) -> Result<usize> {
    let n_location = block.rows.first().map_or(0, |r| r.x.len());
    if theta.len() != n_location + block.w.len() {
        return Err(Error::dimension("free-parameter vector", n_location + block.w.len(), theta.len()));
    }
    let (delta, gamma) = theta.split_at(n_location);
    let sigma = 1.0 / heterogeneity_factor(&block.w, gamma)?;
    let mut best = (0, f64::NEG_INFINITY);
    for (j, row) in block.rows.iter().enumerate() {
        let eta: f64 = row.x.iter().zip(delta).map(|(x, d)| x * d).sum();
        let utility = eta + sigma * gumbel(rng);
        if utility > best.1 {
            best = (j, utility);
        }
    }
    Ok(best.0 + 1)
}

/// Generator for chooser `index` of a scenario seeded with `seed`.
pub fn chooser_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn chooser_id(index: usize, n: usize) -> String {
    let width = n.to_string().len();
    format!("c{:0width$}", index + 1)
}

/// Simulates a long-format dataset. Deterministic given the scenario seed.
pub fn simulate_dataset(scenario: &ScenarioSpec) -> Result<ChoiceDataset> {
    scenario.validate()?;
    let seed = scenario
        .seed
        .ok_or_else(|| Error::Config("scenario has no seed".into()))?;
    let spec = &scenario.spec;
    let theta = scenario.true_params.pack(spec)?;
    let names = scenario.column_names();
    let n_z = spec.z_names.len();
    let j = spec.n_alternatives;
    let generators: Vec<&CovariateGenerator> = names.iter().map(|n| &scenario.covariates[n]).collect();

    let per_chooser = (0..scenario.n_choosers)
        .into_par_iter()
        .map(|i| {
            let mut rng = chooser_rng(seed, i);
            let id = chooser_id(i, scenario.n_choosers);
            let chooser_values: Vec<f64> = generators[n_z..].iter().map(|g| g.sample(&mut rng)).collect();
            let mut rows: Vec<ChoiceRow> = (1..=j)
                .map(|a| {
                    let mut covariates: Vec<f64> = generators[..n_z].iter().map(|g| g.sample(&mut rng)).collect();
                    covariates.extend_from_slice(&chooser_values);
                    ChoiceRow {
                        chooser_id: id.clone(),
                        alternative: a,
                        chosen: false,
                        covariates,
                    }
                })
                .collect();
            let unlabeled = ChoiceDataset::without_response(names.clone(), rows.clone())?;
            let block = build_design(&unlabeled, spec)?.blocks.remove(0);
            let choice = sample_choice(&block, &theta, &mut rng)?;
            rows[choice - 1].chosen = true;
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    ChoiceDataset::new(names, per_chooser.into_iter().flatten().collect())
}

/// What a probability curve sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepTarget {
    /// The coefficient `gamma_l`.
    #[default]
    Coefficient,
    /// The covariate value `w_l`.
    Covariate,
}

/// Choice probabilities along a grid of one heterogeneity coefficient or covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveGrid {
    pub grid: Vec<f64>,
    /// `curves[j][g]`: probability of alternative j+1 at grid point g.
    pub curves: Vec<Vec<f64>>,
    /// Probabilities with the swept heterogeneity contribution set to zero.
    pub base: Vec<f64>,
}

impl CurveGrid {
    /// Probabilities of every alternative at grid point `g`.
    pub fn at(&self, g: usize) -> Vec<f64> {
        self.curves.iter().map(|c| c[g]).collect()
    }
}

pub fn probability_curves(
    base_block: &ChooserBlock,
    theta: &[f64],
    w_index: usize,
    grid: &[f64],
    target: SweepTarget,
) -> Result<CurveGrid> {
    let n_het = base_block.w.len();
    if w_index >= n_het {
        return Err(Error::Config(format!(
            "heterogeneity index {w_index} is outside 0..{n_het}"
        )));
    }
    if let Some(bad) = grid.iter().find(|g| !g.is_finite()) {
        return Err(Error::Config(format!("grid value {bad} is not finite")));
    }
    let gamma_slot = theta.len() - n_het + w_index;
    let mut base_theta = theta.to_vec();
    base_theta[gamma_slot] = 0.0;
    let base = likelihood::choice_probabilities(base_block, &base_theta)?;

    let mut curves = vec![Vec::with_capacity(grid.len()); base_block.rows.len()];
    let mut block = base_block.clone();
    let mut swept = theta.to_vec();
    for &value in grid {
        match target {
            SweepTarget::Coefficient => swept[gamma_slot] = value,
            SweepTarget::Covariate => block.w[w_index] = value,
        }
        let p = likelihood::choice_probabilities(&block, &swept)?;
        for (curve, v) in curves.iter_mut().zip(p) {
            curve.push(v);
        }
    }
    Ok(CurveGrid {
        grid: grid.to_vec(),
        curves,
        base,
    })
}
