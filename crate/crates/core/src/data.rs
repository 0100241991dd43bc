//! Samples, design specifications and regressor construction.
//!
//! Covariates are stored positionally against a per-sample schema of names.
//! A [`DesignSpec`] is a declarative list of [`Term`]s that is resolved
//! against that schema once and then evaluated row by row. The name
//! [`CONTROL`] is reserved and refers to the control-function value of the
//! row being built rather than to a covariate.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::normal_quantile;

/// Reserved variable name for the control function inside design terms.
pub const CONTROL: &str = "V";

/// Probabilities fed to the inverse normal transform are kept this far from
/// 0 and 1 so that rows at the edge of the support stay finite.
const INVERSE_NORMAL_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub hours: f64,
    pub log_wage: Option<f64>,
    pub covariates: Vec<f64>,
}

impl Observation {
    pub fn is_worker(&self) -> bool {
        self.hours > 0.0
    }
}

/// One group's observations together with the covariate schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroSample {
    group_id: String,
    covariate_names: Vec<String>,
    observations: Vec<Observation>,
    weights: Option<Vec<f64>>,
}

impl MicroSample {
    /// Assembles a sample. Content checks are left to [`validate_sample`];
    /// only the weight vector length is enforced here.
    pub fn new(
        group_id: impl Into<String>,
        covariate_names: Vec<String>,
        observations: Vec<Observation>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        if let Some(w) = &weights {
            if w.len() != observations.len() {
                return Err(Error::Dimension {
                    expected: observations.len(),
                    found: w.len(),
                });
            }
        }
        Ok(Self {
            group_id: group_id.into(),
            covariate_names,
            observations,
            weights,
        })
    }

    pub fn group_id(&self) -> &str {
        &self.group_id
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    pub fn weights(&self) -> Vec<f64> {
        self.weights
            .clone()
            .unwrap_or_else(|| vec![1.0; self.observations.len()])
    }

    pub fn has_weights(&self) -> bool {
        self.weights.is_some()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    /// Indices of observations with positive hours.
    pub fn worker_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.observations[i].is_worker())
            .collect()
    }

    /// Copy with every weight multiplied by the matching entry of `factors`.
    pub fn reweighted(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                found: factors.len(),
            });
        }
        let weights = (0..self.len()).map(|i| self.weight(i) * factors[i]).collect();
        Ok(Self {
            weights: Some(weights),
            ..self.clone()
        })
    }

    /// Copy with `shift` added to every observed log wage.
    pub fn with_wage_shift(&self, shift: f64) -> Self {
        let mut out = self.clone();
        for obs in &mut out.observations {
            if let Some(y) = obs.log_wage.as_mut() {
                *y += shift;
            }
        }
        out
    }

    pub fn with_group_id(&self, group_id: impl Into<String>) -> Self {
        Self {
            group_id: group_id.into(),
            ..self.clone()
        }
    }
}

/// One regressor-generating term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Intercept,
    Linear(String),
    Square(String),
    Interaction(String, String),
    /// One 0/1 column per listed level.
    Indicators { name: String, levels: Vec<f64> },
    /// Φ^{-1} of a probability-valued variable, typically the control.
    InverseNormal(String),
    /// Every column of the inner term multiplied by the control.
    WithControl(Box<Term>),
}

impl Term {
    pub fn linear(name: &str) -> Term {
        Term::Linear(name.to_string())
    }

    pub fn square(name: &str) -> Term {
        Term::Square(name.to_string())
    }

    pub fn interaction(a: &str, b: &str) -> Term {
        Term::Interaction(a.to_string(), b.to_string())
    }

    pub fn indicators(name: &str, levels: &[f64]) -> Term {
        Term::Indicators {
            name: name.to_string(),
            levels: levels.to_vec(),
        }
    }

    fn names(&self) -> Vec<&str> {
        match self {
            Term::Intercept => vec![],
            Term::Linear(a) | Term::Square(a) | Term::InverseNormal(a) => vec![a],
            Term::Interaction(a, b) => vec![a, b],
            Term::Indicators { name, .. } => vec![name],
            Term::WithControl(inner) => {
                let mut v = inner.names();
                v.push(CONTROL);
                v
            }
        }
    }

    fn width(&self) -> usize {
        match self {
            Term::Indicators { levels, .. } => levels.len(),
            Term::WithControl(inner) => inner.width(),
            _ => 1,
        }
    }
}

/// Ordered list of terms producing a regressor vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub terms: Vec<Term>,
}

impl DesignSpec {
    pub fn new(terms: Vec<Term>) -> Self {
        Self { terms }
    }

    /// Intercept-only design.
    pub fn intercept() -> Self {
        Self::new(vec![Term::Intercept])
    }

    /// The wage-equation layout: `base` terms, then V, V² and every
    /// non-intercept base term interacted with V.
    pub fn with_control_block(base: Vec<Term>) -> Self {
        let mut terms = base.clone();
        terms.push(Term::Linear(CONTROL.into()));
        terms.push(Term::Square(CONTROL.into()));
        for t in base {
            if t != Term::Intercept {
                terms.push(Term::WithControl(Box::new(t)));
            }
        }
        Self { terms }
    }

    pub fn includes_control(&self) -> bool {
        self.terms.iter().any(|t| t.names().contains(&CONTROL))
    }

    /// Number of regressors implied by the spec alone.
    pub fn dimension(&self) -> usize {
        self.terms.iter().map(Term::width).sum()
    }

    /// Binds covariate names to positions in `schema`.
    pub fn resolve(&self, schema: &[String]) -> Result<ResolvedDesign> {
        let lookup = |name: &str| -> Result<Factor> {
            if name == CONTROL {
                Ok(Factor::Control)
            } else {
                schema
                    .iter()
                    .position(|n| n == name)
                    .map(Factor::Covariate)
                    .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
            }
        };
        let mut columns = Vec::new();
        for term in &self.terms {
            columns.extend(resolve_term(term, &lookup)?);
        }
        Ok(ResolvedDesign {
            columns,
            schema: schema.to_vec(),
            includes_control: self.includes_control(),
        })
    }
}

fn resolve_term(
    term: &Term,
    lookup: &dyn Fn(&str) -> Result<Factor>,
) -> Result<Vec<Column>> {
    let col = |factors: Vec<Factor>, name: String| Column { factors, name };
    Ok(match term {
        Term::Intercept => vec![col(vec![], "(intercept)".into())],
        Term::Linear(a) => vec![col(vec![lookup(a)?], a.clone())],
        Term::Square(a) => {
            let f = lookup(a)?;
            vec![col(vec![f, f], format!("{a}^2"))]
        }
        Term::Interaction(a, b) => vec![col(vec![lookup(a)?, lookup(b)?], format!("{a}*{b}"))],
        Term::Indicators { name, levels } => {
            let idx = match lookup(name)? {
                Factor::Covariate(i) => i,
                _ => {
                    return Err(Error::Config(format!(
                        "indicator expansion of `{name}` is not supported"
                    )))
                }
            };
            levels
                .iter()
                .map(|&l| col(vec![Factor::Level(idx, l)], format!("{name}=={l}")))
                .collect()
        }
        Term::InverseNormal(a) => {
            let f = match lookup(a)? {
                Factor::Control => Factor::InverseNormalControl,
                Factor::Covariate(i) => Factor::InverseNormal(i),
                other => other,
            };
            vec![col(vec![f], format!("qnorm({a})"))]
        }
        Term::WithControl(inner) => resolve_term(inner, lookup)?
            .into_iter()
            .map(|mut c| {
                c.factors.push(Factor::Control);
                c.name = format!("{}*{CONTROL}", c.name);
                c
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Factor {
    Covariate(usize),
    Control,
    Level(usize, f64),
    InverseNormal(usize),
    InverseNormalControl,
}

#[derive(Debug, Clone)]
struct Column {
    factors: Vec<Factor>,
    name: String,
}

/// A design spec bound to a covariate schema; evaluates regressor rows.
#[derive(Debug, Clone)]
pub struct ResolvedDesign {
    columns: Vec<Column>,
    schema: Vec<String>,
    includes_control: bool,
}

impl ResolvedDesign {
    pub fn dimension(&self) -> usize {
        self.columns.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn includes_control(&self) -> bool {
        self.includes_control
    }

    /// Writes the regressors for one covariate vector and control value.
    pub fn fill_row(&self, covariates: &[f64], control: Option<f64>, out: &mut [f64]) -> Result<()> {
        if covariates.len() != self.schema.len() {
            return Err(Error::Dimension {
                expected: self.schema.len(),
                found: covariates.len(),
            });
        }
        if self.includes_control && control.is_none() {
            return Err(Error::MissingControl);
        }
        let v = control.unwrap_or(f64::NAN);
        for (slot, column) in out.iter_mut().zip(&self.columns) {
            let mut x = 1.0;
            for f in &column.factors {
                x *= match *f {
                    Factor::Covariate(i) => covariates[i],
                    Factor::Control => v,
                    Factor::Level(i, l) => f64::from(u8::from(covariates[i] == l)),
                    Factor::InverseNormal(i) => inverse_normal(covariates[i]),
                    Factor::InverseNormalControl => inverse_normal(v),
                };
            }
            *slot = x;
        }
        Ok(())
    }

    pub fn row(&self, covariates: &[f64], control: Option<f64>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dimension()];
        self.fill_row(covariates, control, &mut out)?;
        Ok(out)
    }

    /// Builds rows for the observations at `indices`; `control`, when given,
    /// is aligned with `indices`.
    pub fn build(&self, sample: &MicroSample, indices: &[usize], control: Option<&[f64]>) -> Result<Design> {
        match (self.includes_control, control) {
            (true, None) => return Err(Error::MissingControl),
            (false, Some(_)) => return Err(Error::UnexpectedControl),
            (_, Some(c)) if c.len() != indices.len() => {
                return Err(Error::Dimension {
                    expected: indices.len(),
                    found: c.len(),
                })
            }
            _ => {}
        }
        let d = self.dimension();
        let mut data = vec![0.0; indices.len() * d];
        for (r, &i) in indices.iter().enumerate() {
            let obs = &sample.observations()[i];
            let v = control.map(|c| c[r]);
            self.fill_row(&obs.covariates, v, &mut data[r * d..(r + 1) * d])?;
            if let Some(j) = data[r * d..(r + 1) * d].iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    name: self.columns[j].name.clone(),
                    index: i,
                });
            }
        }
        Ok(Design {
            n: indices.len(),
            d,
            data,
            names: self.column_names(),
        })
    }
}

fn inverse_normal(p: f64) -> f64 {
    normal_quantile(p.clamp(INVERSE_NORMAL_CLAMP, 1.0 - INVERSE_NORMAL_CLAMP))
}

/// Dense row-major regressor matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    n: usize,
    d: usize,
    data: Vec<f64>,
    names: Vec<String>,
}

impl Design {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            n: rows.len(),
            d,
            data,
            names: (0..d).map(|j| format!("x{j}")).collect(),
        })
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d.max(1)).take(self.n)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Regressor rows for every observation of `sample`.
pub fn build_design(sample: &MicroSample, spec: &DesignSpec, control: Option<&[f64]>) -> Result<Design> {
    let resolved = spec.resolve(sample.covariate_names())?;
    let all: Vec<usize> = (0..sample.len()).collect();
    resolved.build(sample, &all, control)
}

/// Stage-two trimming on hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimRule {
    /// Upper bound on hours; `None` means +∞.
    pub h_max: Option<f64>,
    /// Lower censoring of the wage sample (exclusive).
    #[serde(default)]
    pub h_min_wage_sample: f64,
}

impl Default for TrimRule {
    fn default() -> Self {
        Self {
            h_max: None,
            h_min_wage_sample: 0.0,
        }
    }
}

impl TrimRule {
    pub fn new(h_min_wage_sample: f64, h_max: Option<f64>) -> Result<Self> {
        let rule = Self {
            h_max,
            h_min_wage_sample,
        };
        rule.check()?;
        Ok(rule)
    }

    pub fn check(&self) -> Result<()> {
        let upper = self.h_max.unwrap_or(f64::INFINITY);
        if !(self.h_min_wage_sample >= 0.0 && self.h_min_wage_sample < upper) {
            return Err(Error::Config(format!(
                "trim rule needs 0 <= h_min < h_max, got ({}, {upper})",
                self.h_min_wage_sample
            )));
        }
        Ok(())
    }

    pub fn admits(&self, hours: f64) -> bool {
        hours > self.h_min_wage_sample && self.h_max.is_none_or(|h| hours <= h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Issue {
    pub severity: Severity,
    pub index: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Warning)
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    fn push(&mut self, severity: Severity, index: Option<usize>, message: impl Into<String>) {
        self.issues.push(Issue {
            severity,
            index,
            message: message.into(),
        });
    }

    /// Fails on the first error-level issue.
    pub fn into_result(self) -> Result<()> {
        match self.errors().next() {
            None => Ok(()),
            Some(issue) => Err(Error::Data(match issue.index {
                Some(i) => format!("{} at index {i}", issue.message),
                None => issue.message.clone(),
            })),
        }
    }
}

/// Checks sample invariants without modifying the sample.
pub fn validate_sample(sample: &MicroSample) -> ValidationReport {
    let mut report = ValidationReport::default();
    let width = sample.covariate_names().len();
    let mut workers = 0usize;
    let mut missing_wage = 0usize;
    for (i, obs) in sample.observations().iter().enumerate() {
        if !obs.hours.is_finite() {
            report.push(Severity::Error, Some(i), "non-finite hours");
        } else if obs.hours < 0.0 {
            report.push(Severity::Error, Some(i), "negative hours");
        }
        match obs.log_wage {
            Some(y) if !y.is_finite() => report.push(Severity::Error, Some(i), "non-finite log wage"),
            Some(_) if obs.hours == 0.0 => {
                report.push(Severity::Error, Some(i), "wage present with zero hours")
            }
            None if obs.hours > 0.0 => missing_wage += 1,
            _ => {}
        }
        if obs.covariates.len() != width {
            report.push(Severity::Error, Some(i), "schema mismatch");
        } else if let Some(j) = obs.covariates.iter().position(|x| !x.is_finite()) {
            report.push(
                Severity::Error,
                Some(i),
                format!("non-finite covariate `{}`", sample.covariate_names()[j]),
            );
        }
        if !(sample.weight(i) > 0.0 && sample.weight(i).is_finite()) {
            report.push(Severity::Error, Some(i), "weight must be positive");
        }
        if obs.hours > 0.0 {
            workers += 1;
        }
    }
    let n = sample.len();
    if n == 0 {
        report.push(Severity::Error, None, "empty sample");
    } else if workers == n {
        report.push(
            Severity::Warning,
            None,
            "no nonworkers; selection threshold at h=0 unidentified",
        );
    } else if workers == 0 {
        report.push(Severity::Warning, None, "no workers; wage stage impossible");
    }
    if missing_wage > 0 {
        report.push(
            Severity::Warning,
            None,
            format!("{missing_wage} workers without a log wage are dropped from the wage stage"),
        );
    }
    report
}

pub const HOURS_COLUMN: &str = "hours";
pub const WAGE_COLUMN: &str = "log_wage";

/// Reads a sample from CSV. `hours` is required, `log_wage` optional (an
/// empty cell means absent), and every other column is a covariate except
/// `weight_column` when given.
pub fn read_csv<R: Read>(reader: R, group_id: &str, weight_column: Option<&str>) -> Result<MicroSample> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let hours_col = find(HOURS_COLUMN)
        .ok_or_else(|| Error::Data(format!("missing required column `{HOURS_COLUMN}`")))?;
    let wage_col = find(WAGE_COLUMN);
    let weight_col = match weight_column {
        Some(w) => Some(find(w).ok_or_else(|| Error::Data(format!("missing weight column `{w}`")))?),
        None => None,
    };
    let cov_cols: Vec<usize> = (0..headers.len())
        .filter(|&j| j != hours_col && Some(j) != wage_col && Some(j) != weight_col)
        .collect();
    let names = cov_cols.iter().map(|&j| headers[j].clone()).collect();

    let parse = |s: &str, line: usize, col: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Data(format!("line {line}: cannot parse `{s}` in column `{col}`")))
    };
    let mut observations = Vec::new();
    let mut weights = weight_col.map(|_| Vec::new());
    for (k, record) in rdr.records().enumerate() {
        let record = record?;
        let line = k + 2;
        let hours = parse(&record[hours_col], line, HOURS_COLUMN)?;
        let log_wage = match wage_col.map(|j| record[j].trim()) {
            None | Some("") => None,
            Some(s) => Some(parse(s, line, WAGE_COLUMN)?),
        };
        let covariates = cov_cols
            .iter()
            .map(|&j| parse(&record[j], line, &headers[j]))
            .collect::<Result<Vec<_>>>()?;
        if let (Some(ws), Some(j)) = (weights.as_mut(), weight_col) {
            ws.push(parse(&record[j], line, &headers[j])?);
        }
        observations.push(Observation {
            hours,
            log_wage,
            covariates,
        });
    }
    MicroSample::new(group_id, names, observations, weights)
}

pub fn read_csv_path(path: &Path, group_id: &str, weight_column: Option<&str>) -> Result<MicroSample> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file), group_id, weight_column)
}

/// Writes a sample in the layout accepted by [`read_csv`].
pub fn write_csv<W: Write>(sample: &MicroSample, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![HOURS_COLUMN.to_string(), WAGE_COLUMN.to_string()];
    header.extend(sample.covariate_names().iter().cloned());
    if sample.has_weights() {
        header.push("weight".into());
    }
    wtr.write_record(&header)?;
    for (i, obs) in sample.observations().iter().enumerate() {
        let mut rec = vec![obs.hours.to_string(), obs.log_wage.map(|y| y.to_string()).unwrap_or_default()];
        rec.extend(obs.covariates.iter().map(f64::to_string));
        if sample.has_weights() {
            rec.push(sample.weight(i).to_string());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
