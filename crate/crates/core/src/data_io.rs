//! File formats: long-format CSV data, TOML model configuration and
//! scenarios, fit reports (text table + JSON), prediction and curve CSVs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{FitOptions, FitResult};
use crate::likelihood::ProbabilityTable;
use crate::model::{ChoiceDataset, ChoiceRow, ModelSpec, ParameterLabel, ParameterVector};
use crate::simulation::{CurveGrid, ProfileValue, ScenarioSpec, RNG_ALGORITHM};

/// Model configuration file.
///
/// `s_names` are chooser-specific covariates (one coefficient per
/// non-reference alternative), `z_names` choice-specific covariates (one
/// generic coefficient), `w_names` heterogeneity covariates. The `*_enabled`
/// flags drop a role without editing its name list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_alternatives: usize,
    #[serde(default = "default_reference")]
    pub reference_alternative: usize,
    #[serde(default = "default_response")]
    pub response: String,
    #[serde(default = "default_chooser_column")]
    pub chooser_column: String,
    #[serde(default = "default_alternative_column")]
    pub alternative_column: String,
    #[serde(default)]
    pub s_names: Vec<String>,
    #[serde(default = "enabled")]
    pub s_enabled: bool,
    #[serde(default)]
    pub z_names: Vec<String>,
    #[serde(default = "enabled")]
    pub z_enabled: bool,
    #[serde(default)]
    pub w_names: Vec<String>,
    #[serde(default)]
    pub penalty: f64,
    #[serde(default)]
    pub fit: FitSection,
}

fn default_reference() -> usize {
    1
}
fn default_response() -> String {
    "chosen".into()
}
fn default_chooser_column() -> String {
    "chooser".into()
}
fn default_alternative_column() -> String {
    "alternative".into()
}
fn enabled() -> bool {
    true
}

/// Optimizer settings of a [`ModelConfig`]; the penalty lives at top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSection {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_halving_max: usize,
    pub start: Option<Vec<f64>>,
}

impl Default for FitSection {
    fn default() -> Self {
        let d = FitOptions::default();
        Self {
            max_iterations: d.max_iterations,
            gradient_tolerance: d.gradient_tolerance,
            step_halving_max: d.step_halving_max,
            start: d.start,
        }
    }
}

impl ModelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.model_spec().validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// The `ModelSpec` with disabled roles removed.
    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            n_alternatives: self.n_alternatives,
            reference_alternative: self.reference_alternative,
            z_names: if self.z_enabled { self.z_names.clone() } else { vec![] },
            s_names: if self.s_enabled { self.s_names.clone() } else { vec![] },
            w_names: self.w_names.clone(),
            penalty: self.penalty,
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_iterations: self.fit.max_iterations,
            gradient_tolerance: self.fit.gradient_tolerance,
            step_halving_max: self.fit.step_halving_max,
            penalty: self.penalty,
            start: self.fit.start.clone(),
        }
    }

    /// Covariate columns the model reads, without duplicates, in role order.
    pub fn referenced_columns(&self) -> Vec<String> {
        let spec = self.model_spec();
        let mut out: Vec<String> = Vec::new();
        for n in spec.z_names.iter().chain(&spec.s_names).chain(&spec.w_names) {
            if !out.contains(n) {
                out.push(n.clone());
            }
        }
        out
    }

    /// Configuration for data simulated from `scenario` with the default column names.
    pub fn for_scenario(scenario: &ScenarioSpec) -> Self {
        let spec = &scenario.spec;
        Self {
            n_alternatives: spec.n_alternatives,
            reference_alternative: spec.reference_alternative,
            response: default_response(),
            chooser_column: default_chooser_column(),
            alternative_column: default_alternative_column(),
            s_names: spec.s_names.clone(),
            s_enabled: true,
            z_names: spec.z_names.clone(),
            z_enabled: true,
            w_names: spec.w_names.clone(),
            penalty: spec.penalty,
            fit: FitSection::default(),
        }
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes via a temporary sibling and rename so a failed write leaves no partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("'{}' is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// A dataset read from disk plus what was dropped on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub dataset: ChoiceDataset,
    /// Choosers removed by listwise deletion.
    pub dropped_choosers: Vec<String>,
    pub warnings: Vec<String>,
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || matches!(cell.to_ascii_lowercase().as_str(), "na" | "nan" | ".")
}

/// Reads and validates a long-format CSV.
pub fn read_dataset(path: &Path, config: &ModelConfig) -> Result<LoadedDataset> {
    let text = read_to_string(path)?;
    parse_dataset(&text, config, true)
}

/// Like [`read_dataset`], but the response column may be absent.
pub fn read_dataset_for_prediction(path: &Path, config: &ModelConfig) -> Result<LoadedDataset> {
    let text = read_to_string(path)?;
    parse_dataset(&text, config, false)
}

pub fn parse_dataset(text: &str, config: &ModelConfig, require_response: bool) -> Result<LoadedDataset> {
    let spec = config.model_spec();
    spec.validate()?;
    let j = spec.n_alternatives;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(str::to_string)
        .collect();
    let mut seen = BTreeSet::new();
    for h in &header {
        if !seen.insert(h.as_str()) {
            return Err(Error::validation("line 1", format!("duplicate column name '{h}'")));
        }
    }
    let column = |name: &str| header.iter().position(|h| h == name);
    let require = |name: &str| {
        column(name).ok_or_else(|| Error::validation("line 1", format!("column '{name}' not found in header")))
    };
    let id_col = require(&config.chooser_column)?;
    let alt_col = require(&config.alternative_column)?;
    let resp_col = if require_response {
        Some(require(&config.response)?)
    } else {
        column(&config.response)
    };
    let names = config.referenced_columns();
    let cov_cols = names.iter().map(|n| require(n)).collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut incomplete: BTreeSet<String> = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let at = || format!("line {line}");
        let id = record[id_col].to_string();
        if id.is_empty() {
            return Err(Error::validation(at(), "empty chooser id"));
        }
        let alt_cell = &record[alt_col];
        let alternative = alt_cell
            .parse::<usize>()
            .ok()
            .filter(|a| (1..=j).contains(a))
            .ok_or_else(|| {
                Error::validation(at(), format!("alternative '{alt_cell}' is not an integer in 1..={j}"))
            })?;
        let chosen = match resp_col {
            Some(c) => match record[c].parse::<f64>() {
                Ok(0.0) => false,
                Ok(1.0) => true,
                _ => {
                    return Err(Error::validation(
                        at(),
                        format!("response '{}' in column '{}' must be 0 or 1", &record[c], config.response),
                    ))
                }
            },
            None => false,
        };
        let mut covariates = Vec::with_capacity(cov_cols.len());
        for (&c, name) in cov_cols.iter().zip(&names) {
            let cell = &record[c];
            if is_missing(cell) {
                incomplete.insert(id.clone());
                covariates.push(f64::NAN);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => covariates.push(v),
                _ => {
                    return Err(Error::validation(
                        at(),
                        format!("value '{cell}' in column '{name}' is not a finite number"),
                    ))
                }
            }
        }
        rows.push(ChoiceRow {
            chooser_id: id,
            alternative,
            chosen,
            covariates,
        });
    }
    let mut warnings = Vec::new();
    if !incomplete.is_empty() {
        rows.retain(|r| !incomplete.contains(&r.chooser_id));
        warnings.push(format!(
            "listwise deletion removed {} chooser(s) with missing values",
            incomplete.len()
        ));
    }
    let dataset = if resp_col.is_some() {
        ChoiceDataset::new(names, rows)?
    } else {
        ChoiceDataset::without_response(names, rows)?
    };
    dataset.validate(j)?;
    if dataset.rows().is_empty() {
        return Err(Error::validation("data", "no complete choosers"));
    }
    Ok(LoadedDataset {
        dataset,
        dropped_choosers: incomplete.into_iter().collect(),
        warnings,
    })
}

fn csv_error(e: csv::Error) -> Error {
    match e.position() {
        Some(p) => Error::validation(format!("line {}", p.line()), e.to_string()),
        None => Error::Csv(e),
    }
}

/// Long-format CSV text: chooser, alternative and response columns named as
/// in `config`, then the dataset's covariates. Choosers in id order.
pub fn dataset_to_csv(dataset: &ChoiceDataset, config: &ModelConfig) -> Result<String> {
    let mut out = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        config.chooser_column.clone(),
        config.alternative_column.clone(),
        config.response.clone(),
    ];
    header.extend(dataset.covariate_names().iter().cloned());
    out.write_record(&header)?;
    for rows in dataset.chooser_groups().values() {
        for r in rows {
            let mut record = vec![
                r.chooser_id.clone(),
                r.alternative.to_string(),
                u8::from(r.chosen).to_string(),
            ];
            record.extend(r.covariates.iter().map(f64::to_string));
            out.write_record(&record)?;
        }
    }
    let bytes = out.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_dataset(dataset: &ChoiceDataset, config: &ModelConfig, path: &Path) -> Result<()> {
    write_atomic(path, dataset_to_csv(dataset, config)?.as_bytes())
}

/// One row of the machine-readable report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub name: String,
    pub label: ParameterLabel,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub t_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub generator: String,
    pub seed: Option<u64>,
    pub data: Option<String>,
    pub config: Option<ModelConfig>,
}

impl ReportMetadata {
    pub fn new(seed: Option<u64>, data: Option<String>, config: Option<ModelConfig>) -> Self {
        Self {
            generator: format!("ghmnl {}", env!("CARGO_PKG_VERSION")),
            seed,
            data,
            config,
        }
    }
}

/// Machine-readable fit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReportDocument {
    pub model: ModelSpec,
    pub n_choosers: usize,
    pub parameters: Vec<ReportEntry>,
    /// Packed free parameters.
    pub theta: Vec<f64>,
    pub covariance: Option<Vec<Vec<f64>>>,
    /// Log-likelihood (non-positive).
    pub log_likelihood: f64,
    /// Negated log-likelihood (non-negative).
    pub neg_log_likelihood: f64,
    pub penalty_weight: f64,
    pub penalized_objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
    pub metadata: ReportMetadata,
}

impl FitReportDocument {
    pub fn params(&self) -> Result<ParameterVector> {
        ParameterVector::unpack(&self.theta, &self.model)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn read_report(path: &Path) -> Result<FitReportDocument> {
    Ok(serde_json::from_str(&read_to_string(path)?)?)
}

/// Both forms of a fit report.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub document: FitReportDocument,
    pub table: String,
}

impl FitReport {
    pub fn new(fit: &FitResult, spec: &ModelSpec, penalty_weight: f64, n_choosers: usize, metadata: ReportMetadata) -> Self {
        let parameters = fit
            .labels
            .iter()
            .enumerate()
            .map(|(t, label)| ReportEntry {
                name: label.to_string(),
                label: label.clone(),
                estimate: fit.theta[t],
                std_error: fit.std_errors.as_ref().map(|s| s[t]),
                t_value: fit.t_values.as_ref().map(|v| v[t]),
            })
            .collect();
        let covariance = fit.covariance.as_ref().map(|c| {
            (0..c.nrows()).map(|r| c.row(r).iter().copied().collect()).collect()
        });
        let document = FitReportDocument {
            model: spec.clone(),
            n_choosers,
            parameters,
            theta: fit.theta.clone(),
            covariance,
            log_likelihood: fit.log_likelihood,
            neg_log_likelihood: -fit.log_likelihood,
            penalty_weight,
            penalized_objective: fit.objective,
            gradient_norm: fit.gradient_norm,
            iterations: fit.iterations,
            converged: fit.converged,
            warnings: fit.warnings.clone(),
            metadata,
        };
        let table = render_table(&document);
        Self { document, table }
    }

    /// Writes `<dir>/report.json` and `<dir>/report.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("report.json"), self.document.to_json()?.as_bytes())?;
        write_atomic(&dir.join("report.txt"), self.table.as_bytes())
    }
}

/// Decimal places showing six significant digits of `se`.
fn decimals_for(se: f64) -> usize {
    if !(se.is_finite() && se > 0.0) {
        return 3;
    }
    (5 - se.log10().floor() as i64).clamp(0, 17) as usize
}

/// Four significant digits, at most three decimals, scientific from 1000 up.
/// With six significant s.e. digits this keeps the displayed t within one
/// last-digit unit of displayed coef / displayed s.e. at every magnitude.
fn format_t(t: f64) -> String {
    let a = t.abs();
    if !t.is_finite() || a >= 1000.0 {
        return format!("{t:.3e}");
    }
    let decimals = if a < 1.0 { 3 } else { (3 - a.log10().floor() as i64).clamp(0, 3) as usize };
    format!("{t:.decimals$}")
}

/// `(coef, s.e., t)` as displayed.
pub fn format_estimate(entry: &ReportEntry) -> (String, String, String) {
    match (entry.std_error, entry.t_value) {
        (Some(se), Some(t)) => {
            let d = decimals_for(se);
            (format!("{:.d$}", entry.estimate), format!("{se:.d$}"), format_t(t))
        }
        _ => (format!("{:.6}", entry.estimate), "NA".into(), "NA".into()),
    }
}

fn render_table(doc: &FitReportDocument) -> String {
    let spec = &doc.model;
    let mut s = String::new();
    let _ = writeln!(s, "Heterogeneous multinomial logit fit");
    let _ = writeln!(
        s,
        "Choosers: {}   Alternatives: {}   Parameters: {}",
        doc.n_choosers,
        spec.n_alternatives,
        doc.theta.len()
    );
    let _ = writeln!(
        s,
        "Log-likelihood: {:.6}   -LogL: {:.6}",
        doc.log_likelihood, doc.neg_log_likelihood
    );
    if doc.penalty_weight > 0.0 {
        let _ = writeln!(
            s,
            "Ridge penalty: {:e}   penalized objective: {:.6}",
            doc.penalty_weight, doc.penalized_objective
        );
    }
    let _ = writeln!(
        s,
        "Converged: {} ({} iterations, gradient sup-norm {:.3e})",
        if doc.converged { "yes" } else { "no" },
        doc.iterations,
        doc.gradient_norm
    );
    let line = |s: &mut String, name: &str, e: &ReportEntry| {
        let (c, se, t) = format_estimate(e);
        let _ = writeln!(s, "    {name:<28} {c:>16} {se:>16} {t:>10}");
    };
    let by_label: BTreeMap<String, &ReportEntry> = doc.parameters.iter().map(|e| (e.name.clone(), e)).collect();
    let get = |label: ParameterLabel| by_label.get(&label.to_string()).copied();

    let _ = writeln!(s);
    let _ = writeln!(s, "{:<32} {:>16} {:>16} {:>10}", "Location Term", "coef.", "s.e.", "t-value");
    let _ = writeln!(s, "  Constants");
    for a in spec.free_alternatives() {
        if let Some(e) = get(ParameterLabel::Constant { alternative: a }) {
            line(&mut s, &format!("alternative {a}"), e);
        }
    }
    if !spec.z_names.is_empty() {
        let _ = writeln!(s, "  Choice-specific (generic)");
        for z in &spec.z_names {
            if let Some(e) = get(ParameterLabel::Alpha { covariate: z.clone() }) {
                line(&mut s, z, e);
            }
        }
    }
    for m in &spec.s_names {
        let _ = writeln!(s, "  {m}");
        for a in spec.free_alternatives() {
            if let Some(e) = get(ParameterLabel::Beta {
                alternative: a,
                covariate: m.clone(),
            }) {
                line(&mut s, &format!("alternative {a}"), e);
            }
        }
    }
    if !spec.w_names.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "Heterogeneity Term");
        for w in &spec.w_names {
            if let Some(e) = get(ParameterLabel::Gamma { covariate: w.clone() }) {
                line(&mut s, w, e);
            }
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "Note: alternative {} is the reference alternative; its constant and chooser-specific coefficients are fixed at 0.",
        spec.reference_alternative
    );
    if !doc.warnings.is_empty() {
        let _ = writeln!(s, "Warnings:");
        for w in &doc.warnings {
            let _ = writeln!(s, "  - {w}");
        }
    }
    s
}

/// Probability CSV: chooser id, `alt_1..alt_J`, predicted alternative.
pub fn probabilities_to_csv(table: &ProbabilityTable) -> Result<String> {
    let j = table.probabilities.first().map_or(0, Vec::len);
    let mut out = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["chooser".to_string()];
    header.extend((1..=j).map(|a| format!("alt_{a}")));
    header.push("predicted".into());
    out.write_record(&header)?;
    for (i, (id, p)) in table.chooser_ids.iter().zip(&table.probabilities).enumerate() {
        let mut record = vec![id.clone()];
        record.extend(p.iter().map(f64::to_string));
        record.push(table.argmax(i).to_string());
        out.write_record(&record)?;
    }
    let bytes = out.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Curve CSV: `grid_value, alt_1..alt_J`.
pub fn curves_to_csv(curves: &CurveGrid) -> Result<String> {
    let mut out = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["grid_value".to_string()];
    header.extend((1..=curves.curves.len()).map(|a| format!("alt_{a}")));
    out.write_record(&header)?;
    for (g, value) in curves.grid.iter().enumerate() {
        let mut record = vec![value.to_string()];
        record.extend(curves.at(g).iter().map(f64::to_string));
        out.write_record(&record)?;
    }
    let bytes = out.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_scenario(path: &Path) -> Result<ScenarioSpec> {
    let scenario: ScenarioSpec = toml::from_str(&read_to_string(path)?)?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn scenario_to_toml(scenario: &ScenarioSpec) -> Result<String> {
    Ok(toml::to_string(scenario)?)
}

pub fn curves_to_json(curves: &CurveGrid) -> Result<String> {
    let mut s = serde_json::to_string_pretty(curves)?;
    s.push('\n');
    Ok(s)
}

/// Reads a chooser profile: a TOML table mapping covariate names to a
/// number (shared by all alternatives) or an array (one per alternative).
pub fn read_profile(path: &Path) -> Result<BTreeMap<String, ProfileValue>> {
    Ok(toml::from_str(&read_to_string(path)?)?)
}

/// Provenance written next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationMetadata {
    pub generator: String,
    pub seed: u64,
    pub rng_algorithm: String,
    pub scenario: String,
    pub n_choosers: usize,
}

impl SimulationMetadata {
    pub fn new(seed: u64, scenario: impl Into<String>, n_choosers: usize) -> Self {
        Self {
            generator: format!("ghmnl {}", env!("CARGO_PKG_VERSION")),
            seed,
            rng_algorithm: RNG_ALGORITHM.into(),
            scenario: scenario.into(),
            n_choosers,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}
