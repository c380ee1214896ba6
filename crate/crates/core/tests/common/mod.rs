#![allow(dead_code)]

use ghmnl::model::{ChoiceDataset, ChoiceRow, ModelSpec, ParameterVector};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Plain MNL likelihood computed straight from the raw covariates:
/// `V_ij = beta_j0 + z_ij' alpha + s_i' beta_j`, no design matrix involved.
pub struct PlainMnl {
    /// Per chooser: (z rows per alternative, s values, chosen 0-based index).
    choosers: Vec<(Vec<Vec<f64>>, Vec<f64>, usize)>,
    spec: ModelSpec,
}

impl PlainMnl {
    pub fn new(dataset: &ChoiceDataset, spec: &ModelSpec) -> Self {
        let col = |n: &String| dataset.covariate_index(n).unwrap();
        let z: Vec<usize> = spec.z_names.iter().map(col).collect();
        let s: Vec<usize> = spec.s_names.iter().map(col).collect();
        let choosers = dataset
            .chooser_groups()
            .into_values()
            .map(|rows| {
                let zs = rows.iter().map(|r| z.iter().map(|&c| r.covariates[c]).collect()).collect();
                let ss = s.iter().map(|&c| rows[0].covariates[c]).collect();
                (zs, ss, rows.iter().position(|r| r.chosen).unwrap_or(0))
            })
            .collect();
        Self {
            choosers,
            spec: spec.clone(),
        }
    }

    pub fn probabilities(&self, params: &ParameterVector) -> Vec<Vec<f64>> {
        self.choosers
            .iter()
            .map(|(zs, ss, _)| {
                let v: Vec<f64> = zs
                    .iter()
                    .enumerate()
                    .map(|(j, z)| {
                        let mut v = params.constants[j];
                        for (x, a) in z.iter().zip(&params.alpha) {
                            v += x * a;
                        }
                        for (x, b) in ss.iter().zip(&params.betas[j]) {
                            v += x * b;
                        }
                        v
                    })
                    .collect();
                let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
                let total: f64 = e.iter().sum();
                e.iter().map(|x| x / total).collect()
            })
            .collect()
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        let params = ParameterVector::unpack(theta, &self.spec).unwrap();
        self.probabilities(&params)
            .iter()
            .zip(&self.choosers)
            .map(|(p, (_, _, c))| p[*c].ln())
            .sum()
    }
}

pub fn plain_mnl_probabilities(
    dataset: &ChoiceDataset,
    spec: &ModelSpec,
    params: &ParameterVector,
) -> Vec<(String, Vec<f64>)> {
    let ids = dataset.chooser_groups().into_keys().map(str::to_string);
    ids.zip(PlainMnl::new(dataset, spec).probabilities(params)).collect()
}

pub fn plain_mnl_loglik(dataset: &ChoiceDataset, spec: &ModelSpec, params: &ParameterVector) -> f64 {
    PlainMnl::new(dataset, spec).log_likelihood(&params.pack(spec).unwrap())
}

/// Central differences with step `1e-5 * (1 + |theta_t|)`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, theta: &[f64]) -> Vec<f64> {
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|t| {
            let h = 1e-5 * (1.0 + theta[t].abs());
            probe[t] = theta[t] + h;
            let up = f(&probe);
            probe[t] = theta[t] - h;
            let down = f(&probe);
            probe[t] = theta[t];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Maximizes the plain-MNL likelihood with Newton steps whose gradient and
/// Hessian come from finite differences of function values only, from
/// several starts; returns the best (theta, logL).
pub fn brute_force_mnl_fit(dataset: &ChoiceDataset, spec: &ModelSpec, starts: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let model = PlainMnl::new(dataset, spec);
    let f = |theta: &[f64]| model.log_likelihood(theta);
    let p = spec.n_free();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in starts {
        let mut theta = start.clone();
        let mut value = f(&theta);
        for _ in 0..100 {
            let g = fd_gradient(f, &theta);
            let h = 1e-3;
            let mut hess = DMatrix::zeros(p, p);
            for a in 0..p {
                for b in a..p {
                    let eval = |da: f64, db: f64| {
                        let mut t = theta.clone();
                        t[a] += da;
                        t[b] += db;
                        f(&t)
                    };
                    let v = (eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h)) / (4.0 * h * h);
                    hess[(a, b)] = v;
                    hess[(b, a)] = v;
                }
            }
            let neg = -hess;
            let step = match neg.clone().cholesky() {
                Some(ch) => ch.solve(&DVector::from_column_slice(&g)),
                None => DVector::from_column_slice(&g) * 0.01,
            };
            let mut scale = 1.0;
            let mut moved = false;
            for _ in 0..40 {
                let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, d)| t + scale * d).collect();
                let v = f(&cand);
                if v >= value {
                    moved = v > value || cand != theta;
                    theta = cand;
                    value = v;
                    break;
                }
                scale *= 0.5;
            }
            if !moved || g.iter().all(|x| x.abs() < 1e-9) {
                break;
            }
        }
        if best.as_ref().is_none_or(|(_, v)| value > *v) {
            best = Some((theta, value));
        }
    }
    best.unwrap()
}

/// Random dataset with uniformly random choices.
pub fn random_dataset<R: Rng>(rng: &mut R, n: usize, spec: &ModelSpec, w_scale: f64) -> ChoiceDataset {
    let mut names: Vec<String> = spec.z_names.clone();
    for n in spec.s_names.iter().chain(&spec.w_names) {
        if !names.contains(n) {
            names.push(n.clone());
        }
    }
    let n_z = spec.z_names.len();
    let j = spec.n_alternatives;
    let mut rows = Vec::new();
    for i in 0..n {
        let id = format!("r{i:05}");
        let chooser: Vec<f64> = names[n_z..]
            .iter()
            .map(|name| {
                let u = rng.random_range(-1.0..1.0);
                if spec.w_names.contains(name) {
                    u * w_scale
                } else {
                    u
                }
            })
            .collect();
        let chosen = rng.random_range(0..j);
        for a in 0..j {
            let mut cov: Vec<f64> = (0..n_z).map(|_| rng.random_range(-1.0..1.0)).collect();
            cov.extend_from_slice(&chooser);
            rows.push(ChoiceRow {
                chooser_id: id.clone(),
                alternative: a + 1,
                chosen: a == chosen,
                covariates: cov,
            });
        }
    }
    ChoiceDataset::new(names, rows).unwrap()
}

/// Random spec with the given dimensions.
pub fn spec_with(j: usize, k: usize, m: usize, l: usize) -> ModelSpec {
    ModelSpec::new(j)
        .with_z((1..=k).map(|i| format!("z{i}")))
        .with_s((1..=m).map(|i| format!("s{i}")))
        .with_w((1..=l).map(|i| format!("w{i}")))
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
