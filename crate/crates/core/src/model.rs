//! Data model shared by every other module: long-format choice data, the
//! assignment of covariates to model roles, the packed parameter vector and
//! the per-chooser design blocks.
//!
//! Parameters are identified against a reference alternative whose constant
//! and chooser-specific coefficients are fixed at zero. The free-parameter
//! vector is packed as
//!
//! ```text
//! (constants of non-reference alternatives, alpha_1..alpha_K,
//!  beta block of each non-reference alternative (M each), gamma_1..gamma_L)
//! ```
//!
//! with non-reference alternatives in increasing index order.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One chooser x alternative row of a long-format dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceRow {
    pub chooser_id: String,
    /// 1-based alternative index.
    pub alternative: usize,
    pub chosen: bool,
    /// Values aligned with [`ChoiceDataset::covariate_names`].
    pub covariates: Vec<f64>,
}

/// Long-format observations.
///
/// Rows are kept in insertion order; grouping by chooser happens in
/// [`build_design`]. A dataset read for prediction may carry no response,
/// in which case every `chosen` flag is false and the one-choice rule is not
/// enforced.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceDataset {
    covariate_names: Vec<String>,
    rows: Vec<ChoiceRow>,
    has_response: bool,
}

impl ChoiceDataset {
    pub fn new(covariate_names: Vec<String>, rows: Vec<ChoiceRow>) -> Result<Self> {
        Self::build(covariate_names, rows, true)
    }

    /// Dataset without an observed response, used for prediction.
    pub fn without_response(covariate_names: Vec<String>, rows: Vec<ChoiceRow>) -> Result<Self> {
        Self::build(covariate_names, rows, false)
    }

    fn build(covariate_names: Vec<String>, rows: Vec<ChoiceRow>, has_response: bool) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for name in &covariate_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Config(format!("duplicate covariate name '{name}'")));
            }
        }
        for row in &rows {
            if row.covariates.len() != covariate_names.len() {
                return Err(Error::validation(
                    format!("chooser {}", row.chooser_id),
                    format!(
                        "row has {} covariate values but {} names were declared",
                        row.covariates.len(),
                        covariate_names.len()
                    ),
                ));
            }
        }
        Ok(Self {
            covariate_names,
            rows,
            has_response,
        })
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn rows(&self) -> &[ChoiceRow] {
        &self.rows
    }

    pub fn has_response(&self) -> bool {
        self.has_response
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    /// Rows grouped by chooser id, choosers in id order, rows in alternative order.
    pub fn chooser_groups(&self) -> BTreeMap<&str, Vec<&ChoiceRow>> {
        let mut groups: BTreeMap<&str, Vec<&ChoiceRow>> = BTreeMap::new();
        for row in &self.rows {
            groups.entry(row.chooser_id.as_str()).or_default().push(row);
        }
        for rows in groups.values_mut() {
            rows.sort_by_key(|r| r.alternative);
        }
        groups
    }

    pub fn n_choosers(&self) -> usize {
        self.chooser_groups().len()
    }

    /// Checks the per-chooser structure for `n_alternatives` alternatives:
    /// exactly one row per alternative and (with a response) exactly one
    /// chosen row.
    pub fn validate(&self, n_alternatives: usize) -> Result<()> {
        for (id, rows) in self.chooser_groups() {
            validate_chooser(id, &rows, n_alternatives, self.has_response)?;
        }
        Ok(())
    }
}

fn validate_chooser(id: &str, rows: &[&ChoiceRow], n_alternatives: usize, has_response: bool) -> Result<()> {
    let location = || format!("chooser {id}");
    if rows.len() != n_alternatives {
        return Err(Error::validation(
            location(),
            format!("expected {n_alternatives} rows (one per alternative), found {}", rows.len()),
        ));
    }
    for (expected, row) in (1..=n_alternatives).zip(rows) {
        if row.alternative != expected {
            return Err(Error::validation(
                location(),
                format!(
                    "alternatives must be exactly 1..={n_alternatives} once each; found alternative {}",
                    row.alternative
                ),
            ));
        }
    }
    if has_response {
        let n_chosen = rows.iter().filter(|r| r.chosen).count();
        if n_chosen != 1 {
            return Err(Error::validation(
                location(),
                format!("expected exactly one chosen row, found {n_chosen}"),
            ));
        }
    }
    Ok(())
}

/// Assignment of covariates to model roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_alternatives: usize,
    #[serde(default = "default_reference")]
    pub reference_alternative: usize,
    /// Choice-specific covariates with a generic coefficient.
    #[serde(default)]
    pub z_names: Vec<String>,
    /// Chooser-specific covariates with alternative-specific coefficients.
    #[serde(default)]
    pub s_names: Vec<String>,
    /// Chooser-specific covariates in the heterogeneity term.
    #[serde(default)]
    pub w_names: Vec<String>,
    #[serde(default)]
    pub penalty: f64,
}

fn default_reference() -> usize {
    1
}

impl ModelSpec {
    pub fn new(n_alternatives: usize) -> Self {
        Self {
            n_alternatives,
            reference_alternative: 1,
            z_names: Vec::new(),
            s_names: Vec::new(),
            w_names: Vec::new(),
            penalty: 0.0,
        }
    }

    pub fn with_z<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.z_names = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_s<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.s_names = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_w<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.w_names = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_reference(mut self, reference_alternative: usize) -> Self {
        self.reference_alternative = reference_alternative;
        self
    }

    pub fn with_penalty(mut self, penalty: f64) -> Self {
        self.penalty = penalty;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_alternatives < 2 {
            return Err(Error::Config(format!(
                "at least 2 alternatives are required, got {}",
                self.n_alternatives
            )));
        }
        if !(1..=self.n_alternatives).contains(&self.reference_alternative) {
            return Err(Error::Config(format!(
                "reference alternative {} is outside 1..={}",
                self.reference_alternative, self.n_alternatives
            )));
        }
        if !(self.penalty.is_finite() && self.penalty >= 0.0) {
            return Err(Error::Config(format!("penalty must be finite and >= 0, got {}", self.penalty)));
        }
        for (role, names) in [("z", &self.z_names), ("s", &self.s_names), ("w", &self.w_names)] {
            let mut seen = std::collections::BTreeSet::new();
            for name in names.iter() {
                if !seen.insert(name) {
                    return Err(Error::Config(format!("covariate '{name}' listed twice in role {role}")));
                }
            }
        }
        // w may overlap s, but z is choice-specific and cannot share a column
        // with either chooser-specific role.
        for name in &self.z_names {
            if self.s_names.contains(name) || self.w_names.contains(name) {
                return Err(Error::Config(format!(
                    "covariate '{name}' cannot be both choice-specific and chooser-specific"
                )));
            }
        }
        Ok(())
    }

    pub fn n_constants(&self) -> usize {
        self.n_alternatives - 1
    }

    /// Length of the location part of the free vector (and of every `x_ij`).
    pub fn n_location(&self) -> usize {
        self.n_constants() + self.z_names.len() + self.n_constants() * self.s_names.len()
    }

    pub fn n_heterogeneity(&self) -> usize {
        self.w_names.len()
    }

    pub fn n_free(&self) -> usize {
        self.n_location() + self.n_heterogeneity()
    }

    /// Non-reference alternatives (1-based) in packing order.
    pub fn free_alternatives(&self) -> Vec<usize> {
        (1..=self.n_alternatives)
            .filter(|&j| j != self.reference_alternative)
            .collect()
    }

    /// Labels of the free parameters in packing order.
    pub fn parameter_labels(&self) -> Vec<ParameterLabel> {
        let alts = self.free_alternatives();
        let mut labels = Vec::with_capacity(self.n_free());
        labels.extend(alts.iter().map(|&a| ParameterLabel::Constant { alternative: a }));
        labels.extend(self.z_names.iter().map(|n| ParameterLabel::Alpha { covariate: n.clone() }));
        for &a in &alts {
            labels.extend(self.s_names.iter().map(|n| ParameterLabel::Beta {
                alternative: a,
                covariate: n.clone(),
            }));
        }
        labels.extend(self.w_names.iter().map(|n| ParameterLabel::Gamma { covariate: n.clone() }));
        labels
    }

    /// Whether free coordinate `t` is an alternative-specific constant.
    pub fn is_constant(&self, t: usize) -> bool {
        t < self.n_constants()
    }
}

/// Name of a free parameter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParameterLabel {
    Constant { alternative: usize },
    Alpha { covariate: String },
    Beta { alternative: usize, covariate: String },
    Gamma { covariate: String },
}

impl fmt::Display for ParameterLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParameterLabel::Constant { alternative } => write!(f, "constant[{alternative}]"),
            ParameterLabel::Alpha { covariate } => write!(f, "alpha[{covariate}]"),
            ParameterLabel::Beta { alternative, covariate } => write!(f, "beta[{alternative}][{covariate}]"),
            ParameterLabel::Gamma { covariate } => write!(f, "gamma[{covariate}]"),
        }
    }
}

/// Structured model coefficients, including the zeroed reference entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    /// `beta_j0` for j = 1..=J.
    pub constants: Vec<f64>,
    /// Generic effects of the choice-specific covariates.
    pub alpha: Vec<f64>,
    /// `betas[j-1][m]`: effect of chooser covariate m on alternative j.
    pub betas: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
}

impl ParameterVector {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            constants: vec![0.0; spec.n_alternatives],
            alpha: vec![0.0; spec.z_names.len()],
            betas: vec![vec![0.0; spec.s_names.len()]; spec.n_alternatives],
            gamma: vec![0.0; spec.w_names.len()],
        }
    }

    fn check_shape(&self, spec: &ModelSpec) -> Result<()> {
        let j = spec.n_alternatives;
        let m = spec.s_names.len();
        if self.constants.len() != j {
            return Err(Error::dimension("constants", j, self.constants.len()));
        }
        if self.alpha.len() != spec.z_names.len() {
            return Err(Error::dimension("alpha", spec.z_names.len(), self.alpha.len()));
        }
        if self.betas.len() != j {
            return Err(Error::dimension("beta blocks", j, self.betas.len()));
        }
        if let Some(bad) = self.betas.iter().find(|b| b.len() != m) {
            return Err(Error::dimension("beta block", m, bad.len()));
        }
        if self.gamma.len() != spec.w_names.len() {
            return Err(Error::dimension("gamma", spec.w_names.len(), self.gamma.len()));
        }
        Ok(())
    }

    /// Packs the free parameters. The reference constant and beta block
    /// must be zero.
    pub fn pack(&self, spec: &ModelSpec) -> Result<Vec<f64>> {
        self.check_shape(spec)?;
        let r = spec.reference_alternative - 1;
        if self.constants[r] != 0.0 || self.betas[r].iter().any(|&b| b != 0.0) {
            return Err(Error::Config(format!(
                "reference alternative {} must have zero constant and coefficients",
                spec.reference_alternative
            )));
        }
        let alts = spec.free_alternatives();
        let mut theta = Vec::with_capacity(spec.n_free());
        theta.extend(alts.iter().map(|&a| self.constants[a - 1]));
        theta.extend_from_slice(&self.alpha);
        for &a in &alts {
            theta.extend_from_slice(&self.betas[a - 1]);
        }
        theta.extend_from_slice(&self.gamma);
        Ok(theta)
    }

    pub fn unpack(theta: &[f64], spec: &ModelSpec) -> Result<Self> {
        if theta.len() != spec.n_free() {
            return Err(Error::dimension("free-parameter vector", spec.n_free(), theta.len()));
        }
        let k = spec.z_names.len();
        let m = spec.s_names.len();
        let alts = spec.free_alternatives();
        let mut out = Self::zeros(spec);
        let mut rest = theta;
        for &a in &alts {
            out.constants[a - 1] = rest[0];
            rest = &rest[1..];
        }
        out.alpha.copy_from_slice(&rest[..k]);
        rest = &rest[k..];
        for &a in &alts {
            out.betas[a - 1].copy_from_slice(&rest[..m]);
            rest = &rest[m..];
        }
        out.gamma.copy_from_slice(rest);
        Ok(out)
    }

    /// Re-expresses the parameters against another reference alternative.
    /// Utility differences, and therefore probabilities, are unchanged.
    pub fn rebase(&self, new_reference: usize) -> Result<Self> {
        if new_reference == 0 || new_reference > self.constants.len() {
            return Err(Error::Config(format!(
                "reference alternative {new_reference} is outside 1..={}",
                self.constants.len()
            )));
        }
        let r = new_reference - 1;
        let c0 = self.constants[r];
        let b0 = self.betas[r].clone();
        Ok(Self {
            constants: self.constants.iter().map(|c| c - c0).collect(),
            alpha: self.alpha.clone(),
            betas: self
                .betas
                .iter()
                .map(|b| b.iter().zip(&b0).map(|(x, y)| x - y).collect())
                .collect(),
            gamma: self.gamma.clone(),
        })
    }
}

/// Location design vector `x_ij` of one alternative.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub x: Vec<f64>,
}

/// The J design rows, heterogeneity covariates and observed choice of one chooser.
#[derive(Debug, Clone, PartialEq)]
pub struct ChooserBlock {
    pub chooser_id: String,
    pub rows: Vec<DesignRow>,
    pub w: Vec<f64>,
    /// 0-based index of the chosen alternative; `None` without a response.
    pub chosen: Option<usize>,
}

/// All chooser blocks, ordered by chooser id.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub n_alternatives: usize,
    pub n_location: usize,
    pub n_heterogeneity: usize,
    pub blocks: Vec<ChooserBlock>,
}

impl Design {
    pub fn n_free(&self) -> usize {
        self.n_location + self.n_heterogeneity
    }

    pub fn n_choosers(&self) -> usize {
        self.blocks.len()
    }

    /// Rejects heterogeneity covariates that take a single value across all
    /// choosers: `exp(c * gamma)` would be absorbed by rescaling the location
    /// parameters, leaving gamma unidentified.
    pub fn check_heterogeneity_identified(&self, spec: &ModelSpec) -> Result<()> {
        if self.blocks.len() < 2 {
            return Ok(());
        }
        for (l, name) in spec.w_names.iter().enumerate() {
            let first = self.blocks[0].w[l];
            if self.blocks.iter().all(|b| b.w[l] == first) {
                return Err(Error::Config(format!(
                    "heterogeneity covariate '{name}' is constant ({first}) across choosers; \
                     a constant in the heterogeneity term is not identified"
                )));
            }
        }
        Ok(())
    }
}

struct ColumnMap {
    z: Vec<usize>,
    s: Vec<usize>,
    w: Vec<usize>,
}

fn resolve_columns(dataset: &ChoiceDataset, spec: &ModelSpec) -> Result<ColumnMap> {
    let lookup = |names: &[String]| -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                dataset
                    .covariate_index(n)
                    .ok_or_else(|| Error::Config(format!("covariate column '{n}' not found in dataset")))
            })
            .collect()
    };
    Ok(ColumnMap {
        z: lookup(&spec.z_names)?,
        s: lookup(&spec.s_names)?,
        w: lookup(&spec.w_names)?,
    })
}

/// Assembles one design block per chooser, sorted by chooser id.
pub fn build_design(dataset: &ChoiceDataset, spec: &ModelSpec) -> Result<Design> {
    spec.validate()?;
    let columns = resolve_columns(dataset, spec)?;
    let blocks = dataset
        .chooser_groups()
        .into_iter()
        .map(|(id, rows)| {
            validate_chooser(id, &rows, spec.n_alternatives, dataset.has_response())?;
            build_block(id, &rows, spec, &columns)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Design {
        n_alternatives: spec.n_alternatives,
        n_location: spec.n_location(),
        n_heterogeneity: spec.n_heterogeneity(),
        blocks,
    })
}

fn build_block(id: &str, rows: &[&ChoiceRow], spec: &ModelSpec, columns: &ColumnMap) -> Result<ChooserBlock> {
    let location = || format!("chooser {id}");
    for row in rows {
        let referenced = columns.z.iter().chain(&columns.s).chain(&columns.w);
        if let Some(&c) = referenced.into_iter().find(|&&c| !row.covariates[c].is_finite()) {
            return Err(Error::validation(
                location(),
                format!("non-finite value in column {} of alternative {}", c, row.alternative),
            ));
        }
    }
    let first = rows[0];
    for &c in columns.s.iter().chain(&columns.w) {
        if rows.iter().any(|r| r.covariates[c] != first.covariates[c]) {
            return Err(Error::validation(
                location(),
                format!("chooser-specific covariate in column {c} varies across alternatives"),
            ));
        }
    }
    let s: Vec<f64> = columns.s.iter().map(|&c| first.covariates[c]).collect();
    let w: Vec<f64> = columns.w.iter().map(|&c| first.covariates[c]).collect();

    let n_const = spec.n_constants();
    let k = columns.z.len();
    let m = s.len();
    let design_rows = rows
        .iter()
        .map(|row| {
            let mut x = vec![0.0; spec.n_location()];
            let j = row.alternative;
            if j != spec.reference_alternative {
                // Position of j among the non-reference alternatives.
                let pos = if j < spec.reference_alternative { j - 1 } else { j - 2 };
                x[pos] = 1.0;
                let start = n_const + k + pos * m;
                x[start..start + m].copy_from_slice(&s);
            }
            for (slot, &c) in x[n_const..n_const + k].iter_mut().zip(&columns.z) {
                *slot = row.covariates[c];
            }
            DesignRow { x }
        })
        .collect();
    let chosen = rows.iter().position(|r| r.chosen);
    Ok(ChooserBlock {
        chooser_id: id.to_string(),
        rows: design_rows,
        w,
        chosen,
    })
}

/// Spatial proximity: `-|self_position - perceived_j|` per alternative.
pub fn build_proximity(self_position: f64, perceived_positions: &[f64]) -> Result<Vec<f64>> {
    if !self_position.is_finite() {
        return Err(Error::validation("self position", format!("non-finite value {self_position}")));
    }
    perceived_positions
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            if p.is_finite() {
                Ok(-(self_position - p).abs())
            } else {
                Err(Error::validation(
                    format!("perceived position of alternative {}", j + 1),
                    format!("non-finite value {p}"),
                ))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, alt: usize, chosen: bool, cov: &[f64]) -> ChoiceRow {
        ChoiceRow {
            chooser_id: id.to_string(),
            alternative: alt,
            chosen,
            covariates: cov.to_vec(),
        }
    }

    #[test]
    fn design_layout_choice_specific_only() {
        let data = ChoiceDataset::new(
            vec!["z".into()],
            vec![
                row("a", 1, false, &[0.5]),
                row("a", 2, true, &[1.0]),
                row("a", 3, false, &[2.0]),
            ],
        )
        .unwrap();
        let spec = ModelSpec::new(3).with_z(["z"]);
        let design = build_design(&data, &spec).unwrap();
        let xs: Vec<_> = design.blocks[0].rows.iter().map(|r| r.x.clone()).collect();
        assert_eq!(xs, vec![vec![0.0, 0.0, 0.5], vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 2.0]]);
        assert_eq!(design.blocks[0].chosen, Some(1));
    }

    #[test]
    fn design_layout_reference_block_zeroed() {
        let data = ChoiceDataset::new(
            vec!["s".into()],
            vec![row("a", 1, true, &[4.0]), row("a", 2, false, &[4.0])],
        )
        .unwrap();
        let spec = ModelSpec::new(2).with_s(["s"]);
        let design = build_design(&data, &spec).unwrap();
        assert_eq!(design.blocks[0].rows[0].x, vec![0.0, 0.0]);
        assert_eq!(design.blocks[0].rows[1].x, vec![1.0, 4.0]);
    }

    #[test]
    fn design_with_non_first_reference() {
        let data = ChoiceDataset::new(
            vec!["s".into()],
            vec![
                row("a", 1, true, &[2.0]),
                row("a", 2, false, &[2.0]),
                row("a", 3, false, &[2.0]),
            ],
        )
        .unwrap();
        let spec = ModelSpec::new(3).with_s(["s"]).with_reference(2);
        let design = build_design(&data, &spec).unwrap();
        let xs: Vec<_> = design.blocks[0].rows.iter().map(|r| r.x.clone()).collect();
        assert_eq!(
            xs,
            vec![vec![1.0, 0.0, 2.0, 0.0], vec![0.0; 4], vec![0.0, 1.0, 0.0, 2.0]]
        );
    }

    #[test]
    fn two_chosen_rows_rejected() {
        let data = ChoiceDataset::new(
            vec![],
            vec![row("bob", 1, true, &[]), row("bob", 2, true, &[])],
        )
        .unwrap();
        let err = build_design(&data, &ModelSpec::new(2)).unwrap_err();
        assert!(matches!(&err, Error::DataValidation { location, .. } if location.contains("bob")), "{err}");
    }

    #[test]
    fn missing_alternative_rejected() {
        let data = ChoiceDataset::new(vec![], vec![row("x9", 1, true, &[]), row("x9", 2, false, &[])]).unwrap();
        let err = build_design(&data, &ModelSpec::new(3)).unwrap_err();
        assert!(err.to_string().contains("x9"));
    }

    #[test]
    fn unknown_column_named_in_error() {
        let data = ChoiceDataset::new(vec![], vec![row("a", 1, true, &[]), row("a", 2, false, &[])]).unwrap();
        let err = build_design(&data, &ModelSpec::new(2).with_z(["distance"])).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("distance")));
    }

    #[test]
    fn varying_chooser_covariate_rejected() {
        let data = ChoiceDataset::new(
            vec!["age".into()],
            vec![row("a", 1, true, &[30.0]), row("a", 2, false, &[31.0])],
        )
        .unwrap();
        let err = build_design(&data, &ModelSpec::new(2).with_s(["age"])).unwrap_err();
        assert!(err.to_string().contains("chooser a"));
    }

    #[test]
    fn blocks_sorted_by_chooser_id() {
        let data = ChoiceDataset::new(
            vec![],
            vec![
                row("b", 2, true, &[]),
                row("b", 1, false, &[]),
                row("a", 1, true, &[]),
                row("a", 2, false, &[]),
            ],
        )
        .unwrap();
        let design = build_design(&data, &ModelSpec::new(2)).unwrap();
        let ids: Vec<_> = design.blocks.iter().map(|b| b.chooser_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert_eq!(design.blocks[1].chosen, Some(1));
    }

    #[test]
    fn pack_order() {
        let spec = ModelSpec::new(2).with_z(["z"]).with_s(["s"]).with_w(["w"]);
        let p = ParameterVector {
            constants: vec![0.0, 0.1],
            alpha: vec![0.2],
            betas: vec![vec![0.0], vec![0.3]],
            gamma: vec![0.4],
        };
        assert_eq!(p.pack(&spec).unwrap(), vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(ParameterVector::unpack(&[0.1, 0.2, 0.3, 0.4], &spec).unwrap(), p);
    }

    #[test]
    fn unpack_wrong_length() {
        let spec = ModelSpec::new(2).with_z(["z"]).with_s(["s"]).with_w(["w"]);
        match ParameterVector::unpack(&[0.0; 3], &spec) {
            Err(Error::Dimension { expected: 4, actual: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pack_rejects_nonzero_reference() {
        let spec = ModelSpec::new(2);
        let p = ParameterVector {
            constants: vec![1.0, 0.0],
            alpha: vec![],
            betas: vec![vec![], vec![]],
            gamma: vec![],
        };
        assert!(p.pack(&spec).is_err());
    }

    #[test]
    fn free_dimension() {
        let spec = ModelSpec::new(6).with_z(["a", "b"]).with_s(["c", "d", "e", "f"]).with_w(["g", "h"]);
        assert_eq!(spec.n_free(), 5 + 2 + 5 * 4 + 2);
        assert_eq!(spec.parameter_labels().len(), spec.n_free());
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::new(1).validate().is_err());
        assert!(ModelSpec::new(3).with_reference(4).validate().is_err());
        assert!(ModelSpec::new(3).with_penalty(-1.0).validate().is_err());
        assert!(ModelSpec::new(3).with_z(["a"]).with_s(["a"]).validate().is_err());
        assert!(ModelSpec::new(3).with_s(["a"]).with_w(["a"]).validate().is_ok());
    }

    #[test]
    fn proximity_examples() {
        assert_eq!(build_proximity(5.0, &[5.0, 8.0, 1.0]).unwrap(), vec![0.0, -3.0, -4.0]);
        assert_eq!(build_proximity(1.0, &[11.0, 1.0]).unwrap(), vec![-10.0, 0.0]);
        assert_eq!(build_proximity(3.0, &[3.5]).unwrap(), vec![-0.5]);
        assert!(build_proximity(f64::NAN, &[1.0]).is_err());
        assert!(build_proximity(1.0, &[f64::INFINITY]).is_err());
    }

    #[test]
    fn constant_heterogeneity_column_rejected() {
        let data = ChoiceDataset::new(
            vec!["w".into()],
            vec![
                row("a", 1, true, &[1.0]),
                row("a", 2, false, &[1.0]),
                row("b", 1, false, &[1.0]),
                row("b", 2, true, &[1.0]),
            ],
        )
        .unwrap();
        let spec = ModelSpec::new(2).with_w(["w"]);
        let design = build_design(&data, &spec).unwrap();
        assert!(design.check_heterogeneity_identified(&spec).is_err());
    }
}
