//! Tabular training data, factor spaces and the numeric encoding shared by
//! the covariance, metric and model code.
//!
//! Categorical factors with `L` levels are dummy coded against their first
//! level (`L − 1` indicator columns); ordinal factors contribute their score
//! column; continuous factors pass through. Missing cells are represented by
//! `NaN` in the encoded matrix and every column derived from a missing factor
//! cell is missing.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The kind of a factor together with its domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FactorKind {
    Continuous { low: f64, high: f64 },
    Categorical { levels: Vec<String> },
    Ordinal { levels: Vec<String>, scores: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorDef {
    pub name: String,
    #[serde(flatten)]
    pub kind: FactorKind,
}

impl FactorDef {
    pub fn continuous(name: impl Into<String>, low: f64, high: f64) -> Self {
        Self {
            name: name.into(),
            kind: FactorKind::Continuous { low, high },
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, levels: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            kind: FactorKind::Categorical {
                levels: levels.into_iter().map(Into::into).collect(),
            },
        }
    }

    /// Ordinal factor with equally spaced default scores `1..=L`.
    pub fn ordinal<S: Into<String>>(name: impl Into<String>, levels: impl IntoIterator<Item = S>) -> Self {
        let levels: Vec<String> = levels.into_iter().map(Into::into).collect();
        let scores = (1..=levels.len()).map(|s| s as f64).collect();
        Self {
            name: name.into(),
            kind: FactorKind::Ordinal { levels, scores },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::InvalidFactor {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        match &self.kind {
            FactorKind::Continuous { low, high } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return bad("continuous bounds require low < high");
                }
            }
            FactorKind::Categorical { levels } => {
                if distinct(levels) < 2 || distinct(levels) != levels.len() {
                    return bad("needs at least two distinct levels");
                }
            }
            FactorKind::Ordinal { levels, scores } => {
                if distinct(levels) < 2 || distinct(levels) != levels.len() {
                    return bad("needs at least two distinct levels");
                }
                if scores.len() != levels.len() {
                    return bad("one score per level required");
                }
                if scores.windows(2).any(|w| !(w[0] < w[1])) {
                    return bad("ordinal scores must be strictly increasing");
                }
            }
        }
        Ok(())
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.kind {
            FactorKind::Continuous { .. } => None,
            FactorKind::Categorical { levels } | FactorKind::Ordinal { levels, .. } => Some(levels),
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, FactorKind::Continuous { .. })
    }

    /// Number of encoded columns this factor contributes.
    pub fn encoded_width(&self) -> usize {
        match &self.kind {
            FactorKind::Continuous { .. } | FactorKind::Ordinal { .. } => 1,
            FactorKind::Categorical { levels } => levels.len() - 1,
        }
    }

    pub fn level_index(&self, level: &str) -> Result<usize> {
        self.levels()
            .and_then(|lv| lv.iter().position(|l| l == level))
            .ok_or_else(|| Error::UnknownLevel {
                factor: self.name.clone(),
                level: level.to_string(),
            })
    }
}

fn distinct(levels: &[String]) -> usize {
    let mut v: Vec<&String> = levels.iter().collect();
    v.sort();
    v.dedup();
    v.len()
}

/// A setting of one factor: a real value for continuous factors, a level
/// index for categorical and ordinal ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorValue {
    Real(f64),
    Level(usize),
}

impl FactorValue {
    pub fn as_real(self) -> Option<f64> {
        match self {
            FactorValue::Real(v) => Some(v),
            FactorValue::Level(_) => None,
        }
    }

    pub fn as_level(self) -> Option<usize> {
        match self {
            FactorValue::Level(l) => Some(l),
            FactorValue::Real(_) => None,
        }
    }
}

/// Ordered list of factors; the axes of the profiler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpace {
    pub factors: Vec<FactorDef>,
}

impl FactorSpace {
    pub fn new(factors: Vec<FactorDef>) -> Result<Self> {
        let space = Self { factors };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for f in &self.factors {
            f.validate()?;
            if seen.insert(f.name.as_str(), ()).is_some() {
                return Err(Error::InvalidFactor {
                    name: f.name.clone(),
                    reason: "duplicate factor name".into(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }

    pub fn factor(&self, name: &str) -> Result<&FactorDef> {
        self.factors
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Encoded dimension `p`.
    pub fn encoded_dim(&self) -> usize {
        self.factors.iter().map(FactorDef::encoded_width).sum()
    }

    /// Encoded column range owned by each factor.
    pub fn column_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.factors
            .iter()
            .map(|f| {
                let r = start..start + f.encoded_width();
                start = r.end;
                r
            })
            .collect()
    }

    pub fn column_map(&self) -> Vec<EncodedColumn> {
        let mut out = Vec::with_capacity(self.encoded_dim());
        for (fi, f) in self.factors.iter().enumerate() {
            match &f.kind {
                FactorKind::Continuous { .. } => out.push(EncodedColumn {
                    factor: fi,
                    name: f.name.clone(),
                    role: ColumnRole::Identity,
                }),
                FactorKind::Ordinal { .. } => out.push(EncodedColumn {
                    factor: fi,
                    name: f.name.clone(),
                    role: ColumnRole::Score,
                }),
                FactorKind::Categorical { levels } => {
                    for (li, level) in levels.iter().enumerate().skip(1) {
                        out.push(EncodedColumn {
                            factor: fi,
                            name: format!("{}[{}]", f.name, level),
                            role: ColumnRole::Indicator(li),
                        });
                    }
                }
            }
        }
        out
    }

    /// Converts one setting to a level name or number for display.
    pub fn describe(&self, factor: usize, value: FactorValue) -> String {
        match (value, self.factors[factor].levels()) {
            (FactorValue::Level(l), Some(levels)) => levels.get(l).cloned().unwrap_or_default(),
            (FactorValue::Real(v), _) => format!("{v}"),
            (FactorValue::Level(l), None) => format!("{l}"),
        }
    }

    /// Checks a full settings vector against the box and level sets.
    pub fn check_settings(&self, settings: &[FactorValue]) -> Result<()> {
        if settings.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                found: settings.len(),
            });
        }
        for (f, v) in self.factors.iter().zip(settings) {
            self.check_value(f, *v)?;
        }
        Ok(())
    }

    fn check_value(&self, f: &FactorDef, v: FactorValue) -> Result<()> {
        match (&f.kind, v) {
            (FactorKind::Continuous { low, high }, FactorValue::Real(x)) => {
                if !(x >= *low && x <= *high) {
                    return Err(Error::OutOfRange {
                        factor: f.name.clone(),
                        value: x,
                        low: *low,
                        high: *high,
                    });
                }
            }
            (FactorKind::Categorical { levels } | FactorKind::Ordinal { levels, .. }, FactorValue::Level(l)) => {
                if l >= levels.len() {
                    return Err(Error::UnknownLevel {
                        factor: f.name.clone(),
                        level: l.to_string(),
                    });
                }
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "setting kind does not match factor `{}`",
                    f.name
                )))
            }
        }
        Ok(())
    }

    /// Writes the encoded form of a complete setting into `out`.
    pub fn encode_point_into(&self, settings: &[FactorValue], out: &mut [f64]) {
        let mut c = 0;
        for (f, v) in self.factors.iter().zip(settings) {
            match (&f.kind, *v) {
                (FactorKind::Continuous { .. }, FactorValue::Real(x)) => {
                    out[c] = x;
                    c += 1;
                }
                (FactorKind::Ordinal { scores, .. }, FactorValue::Level(l)) => {
                    out[c] = scores[l];
                    c += 1;
                }
                (FactorKind::Categorical { levels }, FactorValue::Level(l)) => {
                    for li in 1..levels.len() {
                        out[c] = if li == l { 1.0 } else { 0.0 };
                        c += 1;
                    }
                }
                (_, _) => {
                    for _ in 0..f.encoded_width() {
                        out[c] = f64::NAN;
                        c += 1;
                    }
                }
            }
        }
    }

    pub fn encode_point(&self, settings: &[FactorValue]) -> Vec<f64> {
        let mut out = vec![0.0; self.encoded_dim()];
        self.encode_point_into(settings, &mut out);
        out
    }

    /// Encodes a partially missing setting; `None` cells become `NaN`.
    pub fn encode_partial(&self, settings: &[Option<FactorValue>]) -> Vec<f64> {
        let ranges = self.column_ranges();
        let mut out = vec![f64::NAN; self.encoded_dim()];
        for (fi, v) in settings.iter().enumerate() {
            if let Some(v) = v {
                let mut one = vec![FactorValue::Real(f64::NAN); self.len()];
                one[fi] = *v;
                let enc = self.encode_point(&one);
                let r = ranges[fi].clone();
                out[r.clone()].copy_from_slice(&enc[r]);
            }
        }
        out
    }

    /// Inverse of [`encode_partial`](Self::encode_partial) for rows produced
    /// by this space.
    pub fn decode_row(&self, row: &[f64]) -> Vec<Option<FactorValue>> {
        let ranges = self.column_ranges();
        self.factors
            .iter()
            .zip(ranges)
            .map(|(f, r)| {
                let cells = &row[r];
                if cells.iter().any(|v| v.is_nan()) {
                    return None;
                }
                Some(match &f.kind {
                    FactorKind::Continuous { .. } => FactorValue::Real(cells[0]),
                    FactorKind::Ordinal { scores, .. } => {
                        FactorValue::Level(scores.iter().position(|s| *s == cells[0])?)
                    }
                    FactorKind::Categorical { .. } => {
                        let hot = cells.iter().position(|v| *v == 1.0);
                        FactorValue::Level(hot.map_or(0, |i| i + 1))
                    }
                })
            })
            .collect()
    }

    /// Replaces the factor `name` with an ordinal factor over the same levels
    /// and default scores.
    pub fn with_ordinal(mut self, name: &str) -> Result<Self> {
        let i = self.index_of(name).ok_or_else(|| Error::MissingColumn(name.into()))?;
        let levels = self.factors[i]
            .levels()
            .ok_or_else(|| Error::InvalidFactor {
                name: name.into(),
                reason: "continuous factor cannot be ordinal".into(),
            })?
            .to_vec();
        self.factors[i] = FactorDef::ordinal(name, levels);
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let space: Self = serde_json::from_str(s)?;
        space.validate()?;
        Ok(space)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnRole {
    Identity,
    Score,
    /// Indicator for the given (non-reference) level index.
    Indicator(usize),
}

/// Provenance of one encoded column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedColumn {
    pub factor: usize,
    pub name: String,
    pub role: ColumnRole,
}

/// Cell storage for one dataset column. `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnValues {
    Real(Vec<Option<f64>>),
    Levels {
        levels: Vec<String>,
        codes: Vec<Option<usize>>,
    },
}

impl ColumnValues {
    pub fn len(&self) -> usize {
        match self {
            ColumnValues::Real(v) => v.len(),
            ColumnValues::Levels { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            ColumnValues::Real(v) => v[row].is_none(),
            ColumnValues::Levels { codes, .. } => codes[row].is_none(),
        }
    }

    pub fn missing_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_missing(i)).count()
    }

    fn take(&self, rows: &[usize]) -> Self {
        match self {
            ColumnValues::Real(v) => ColumnValues::Real(rows.iter().map(|&i| v[i]).collect()),
            ColumnValues::Levels { levels, codes } => ColumnValues::Levels {
                levels: levels.clone(),
                codes: rows.iter().map(|&i| codes[i]).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: ColumnValues,
}

impl Column {
    pub fn real(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Self {
            name: name.into(),
            values: ColumnValues::Real(values),
        }
    }

    /// Builds a level column; levels are ordered by first appearance.
    pub fn levels<S: AsRef<str>>(name: impl Into<String>, cells: &[Option<S>]) -> Self {
        let mut levels: Vec<String> = Vec::new();
        let codes = cells
            .iter()
            .map(|c| {
                c.as_ref().map(|s| {
                    let s = s.as_ref();
                    match levels.iter().position(|l| l == s) {
                        Some(i) => i,
                        None => {
                            levels.push(s.to_string());
                            levels.len() - 1
                        }
                    }
                })
            })
            .collect();
        Self {
            name: name.into(),
            values: ColumnValues::Levels { levels, codes },
        }
    }

    /// Non-missing real values, or `None` for level columns.
    pub fn reals(&self) -> Option<Vec<f64>> {
        match &self.values {
            ColumnValues::Real(v) => Some(v.iter().flatten().copied().collect()),
            ColumnValues::Levels { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    n: usize,
}

impl Dataset {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.values.len());
        if let Some(bad) = columns.iter().find(|c| c.values.len() != n) {
            return Err(Error::Dimension {
                expected: n,
                found: bad.values.len(),
            });
        }
        Ok(Self { columns, n })
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn missing_count(&self) -> usize {
        self.columns.iter().map(|c| c.values.missing_count()).sum()
    }

    /// Real values of a column (missing as `None`); level columns are rejected.
    pub fn reals(&self, name: &str) -> Result<&[Option<f64>]> {
        match &self.column(name)?.values {
            ColumnValues::Real(v) => Ok(v),
            ColumnValues::Levels { .. } => Err(Error::InvalidFactor {
                name: name.into(),
                reason: "expected a numeric column".into(),
            }),
        }
    }

    pub fn without(&self, names: &[&str]) -> Self {
        Self {
            columns: self
                .columns
                .iter()
                .filter(|c| !names.contains(&c.name.as_str()))
                .cloned()
                .collect(),
            n: self.n,
        }
    }

    pub fn with_column(mut self, column: Column) -> Result<Self> {
        if column.values.len() != self.n && !self.columns.is_empty() {
            return Err(Error::Dimension {
                expected: self.n,
                found: column.values.len(),
            });
        }
        self.n = column.values.len();
        self.columns.push(column);
        Ok(self)
    }

    pub fn take_rows(&self, rows: &[usize]) -> Self {
        Self {
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    values: c.values.take(rows),
                })
                .collect(),
            n: rows.len(),
        }
    }

    /// Settings of row `row` over `space`; `None` where the cell is missing.
    pub fn row_settings(&self, space: &FactorSpace, row: usize) -> Result<Vec<Option<FactorValue>>> {
        space
            .factors
            .iter()
            .map(|f| {
                let col = self.column(&f.name)?;
                cell_value(f, &col.values, row)
            })
            .collect()
    }
}

fn cell_value(f: &FactorDef, values: &ColumnValues, row: usize) -> Result<Option<FactorValue>> {
    match (&f.kind, values) {
        (FactorKind::Continuous { .. }, ColumnValues::Real(v)) => Ok(v[row].map(FactorValue::Real)),
        (FactorKind::Continuous { .. }, ColumnValues::Levels { .. }) => Err(Error::InvalidFactor {
            name: f.name.clone(),
            reason: "continuous factor backed by a non-numeric column".into(),
        }),
        (_, ColumnValues::Levels { levels, codes }) => match codes[row] {
            None => Ok(None),
            Some(c) => f.level_index(&levels[c]).map(|l| Some(FactorValue::Level(l))),
        },
        (_, ColumnValues::Real(v)) => match v[row] {
            None => Ok(None),
            Some(x) => f.level_index(&format!("{x}")).map(|l| Some(FactorValue::Level(l))),
        },
    }
}

fn is_missing_token(s: &str) -> bool {
    s.is_empty() || s == "NA"
}

/// Reads a CSV file with a header row.
///
/// Empty cells and the literal `NA` are missing. Columns whose non-missing
/// cells all parse as numbers become real columns; all others become level
/// columns with levels in order of first appearance. Columns named in
/// `schema` follow the schema instead: continuous factors must be numeric
/// and level factors take the schema's level order.
pub fn load_csv(path: impl AsRef<Path>, schema: Option<&FactorSpace>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: Option<&FactorSpace>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::RaggedRow {
                row: i + 1,
                found: record.len(),
                expected: header.len(),
            });
        }
        for (j, field) in record.iter().enumerate() {
            cells[j].push(field.trim().to_string());
        }
    }
    if let Some(schema) = schema {
        for f in &schema.factors {
            if !header.contains(&f.name) {
                return Err(Error::MissingColumn(f.name.clone()));
            }
        }
    }

    let mut columns = Vec::with_capacity(header.len());
    for (name, raw) in header.into_iter().zip(cells) {
        let declared = schema.and_then(|s| s.factors.iter().find(|f| f.name == name));
        let column = match declared.map(|f| &f.kind) {
            Some(FactorKind::Continuous { .. }) => {
                let parsed = parse_reals(&raw).ok_or_else(|| Error::InvalidFactor {
                    name: name.clone(),
                    reason: "declared continuous but contains non-numeric cells".into(),
                })?;
                Column::real(name, parsed)
            }
            Some(FactorKind::Categorical { levels } | FactorKind::Ordinal { levels, .. }) => {
                let mut codes = Vec::with_capacity(raw.len());
                for cell in &raw {
                    if is_missing_token(cell) {
                        codes.push(None);
                    } else {
                        let idx = levels.iter().position(|l| l == cell).ok_or_else(|| Error::UnknownLevel {
                            factor: name.clone(),
                            level: cell.clone(),
                        })?;
                        codes.push(Some(idx));
                    }
                }
                Column {
                    name,
                    values: ColumnValues::Levels {
                        levels: levels.clone(),
                        codes,
                    },
                }
            }
            None => match parse_reals(&raw) {
                Some(parsed) => Column::real(name, parsed),
                None => {
                    let opt: Vec<Option<&str>> = raw
                        .iter()
                        .map(|c| (!is_missing_token(c)).then_some(c.as_str()))
                        .collect();
                    Column::levels(name, &opt)
                }
            },
        };
        columns.push(column);
    }
    Dataset::new(columns)
}

fn parse_reals(raw: &[String]) -> Option<Vec<Option<f64>>> {
    raw.iter()
        .map(|c| {
            if is_missing_token(c) {
                Some(None)
            } else {
                c.parse::<f64>().ok().map(|v| v.is_finite().then_some(v))
            }
        })
        .collect()
}

/// Builds a factor space from every column of `data`: observed ranges for
/// real columns and observed levels for level columns.
pub fn infer_factor_space(data: &Dataset) -> Result<FactorSpace> {
    if data.n_rows() < 2 {
        return Err(Error::InsufficientData("at least two rows are required".into()));
    }
    let mut factors = Vec::with_capacity(data.columns.len());
    for col in &data.columns {
        let def = match &col.values {
            ColumnValues::Real(v) => {
                let present: Vec<f64> = v.iter().flatten().copied().collect();
                if present.is_empty() {
                    return Err(Error::EmptyColumn(col.name.clone()));
                }
                let low = present.iter().copied().fold(f64::INFINITY, f64::min);
                let high = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !(low < high) {
                    return Err(Error::ConstantColumn(col.name.clone()));
                }
                FactorDef::continuous(col.name.clone(), low, high)
            }
            ColumnValues::Levels { levels, codes } => {
                let mut used = vec![false; levels.len()];
                for c in codes.iter().flatten() {
                    used[*c] = true;
                }
                let observed: Vec<String> = levels
                    .iter()
                    .zip(&used)
                    .filter(|(_, u)| **u)
                    .map(|(l, _)| l.clone())
                    .collect();
                if observed.is_empty() {
                    return Err(Error::EmptyColumn(col.name.clone()));
                }
                if observed.len() < 2 {
                    return Err(Error::ConstantColumn(col.name.clone()));
                }
                FactorDef::categorical(col.name.clone(), observed)
            }
        };
        factors.push(def);
    }
    FactorSpace::new(factors)
}

/// Numeric matrix over the encoded columns of a factor space. Missing cells
/// are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub values: DMatrix<f64>,
    pub columns: Vec<EncodedColumn>,
}

impl EncodedMatrix {
    pub fn from_matrix(values: DMatrix<f64>) -> Self {
        let columns = (0..values.ncols())
            .map(|j| EncodedColumn {
                factor: j,
                name: format!("x{}", j + 1),
                role: ColumnRole::Identity,
            })
            .collect();
        Self { values, columns }
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.values[(row, col)].is_nan()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }
}

/// Encodes `data` over `space`; see the module docs for the coding.
pub fn encode(data: &Dataset, space: &FactorSpace) -> Result<EncodedMatrix> {
    let n = data.n_rows();
    let p = space.encoded_dim();
    let mut values = DMatrix::from_element(n, p, f64::NAN);
    let ranges = space.column_ranges();
    for (f, range) in space.factors.iter().zip(&ranges) {
        let col = data.column(&f.name)?;
        let mut one = vec![FactorValue::Real(f64::NAN); space.len()];
        let fi = space.index_of(&f.name).expect("factor present");
        for i in 0..n {
            if let Some(v) = cell_value(f, &col.values, i)? {
                one[fi] = v;
                let enc = space.encode_point(&one);
                for c in range.clone() {
                    values[(i, c)] = enc[c];
                }
            }
        }
    }
    Ok(EncodedMatrix {
        values,
        columns: space.column_map(),
    })
}

/// Random partition of the rows into a training and a holdout set.
pub fn holdout_split(data: &Dataset, n_holdout: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = data.n_rows();
    if n_holdout == 0 || n_holdout >= n {
        return Err(Error::HoldoutRange { n_holdout, n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (hold, train) = idx.split_at(n_holdout);
    let mut hold = hold.to_vec();
    let mut train = train.to_vec();
    hold.sort_unstable();
    train.sort_unstable();
    Ok((data.take_rows(&train), data.take_rows(&hold)))
}
