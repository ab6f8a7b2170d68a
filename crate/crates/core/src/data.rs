//! Datasets, variable roles, and target-population data scenarios.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Declared type of a column at load time.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type", deny_unknown_fields)]
pub enum ColumnType {
    Numeric,
    Binary,
    /// Levels in declaration order; the first is the reference. When `None`,
    /// the sorted set of observed values is used.
    Categorical {
        #[serde(default)]
        levels: Option<Vec<String>>,
    },
}

/// Ordered column-type declarations.
#[derive(Debug, Clone, Default)]
pub struct Schema {
    pub columns: Vec<(String, ColumnType)>,
}

impl Schema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, ty: ColumnType) -> Self {
        self.columns.push((name.to_string(), ty));
        self
    }

    pub fn numeric(self, name: &str) -> Self {
        self.with(name, ColumnType::Numeric)
    }

    pub fn binary(self, name: &str) -> Self {
        self.with(name, ColumnType::Binary)
    }

    pub fn categorical(self, name: &str, levels: Option<&[&str]>) -> Self {
        let levels = levels.map(|l| l.iter().map(|s| s.to_string()).collect());
        self.with(name, ColumnType::Categorical { levels })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    /// Values are exactly 0.0 or 1.0.
    Binary(Vec<f64>),
    Categorical {
        codes: Vec<usize>,
        levels: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn numeric(name: &str, values: Vec<f64>) -> Self {
        Column {
            name: name.to_string(),
            data: ColumnData::Numeric(values),
        }
    }

    pub fn binary(name: &str, values: Vec<f64>) -> Self {
        Column {
            name: name.to_string(),
            data: ColumnData::Binary(values),
        }
    }

    /// Builds a categorical column from string values. `levels` fixes the level
    /// order (first = reference); values outside it are rejected.
    pub fn categorical<S: AsRef<str>>(name: &str, values: &[S], levels: Option<Vec<String>>) -> Result<Self> {
        let levels = match levels {
            Some(l) => l,
            None => {
                let set: BTreeSet<&str> = values.iter().map(|v| v.as_ref()).collect();
                set.into_iter().map(str::to_string).collect()
            }
        };
        let index: HashMap<&str, usize> = levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let codes = values
            .iter()
            .enumerate()
            .map(|(row, v)| {
                index.get(v.as_ref()).copied().ok_or_else(|| Error::BadValue {
                    column: name.to_string(),
                    row,
                    reason: format!("level `{}` not in declared level set", v.as_ref()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Column {
            name: name.to_string(),
            data: ColumnData::Categorical { codes, levels },
        })
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ColumnData::Numeric(v) | ColumnData::Binary(v) => v.len(),
            ColumnData::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.data, ColumnData::Categorical { .. })
    }

    /// Numeric view (binary columns included).
    pub fn values(&self) -> Option<&[f64]> {
        match &self.data {
            ColumnData::Numeric(v) | ColumnData::Binary(v) => Some(v),
            ColumnData::Categorical { .. } => None,
        }
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.data {
            ColumnData::Categorical { levels, .. } => Some(levels),
            _ => None,
        }
    }

    /// String label of a row's value, used for cell patterns.
    pub fn label(&self, row: usize) -> String {
        match &self.data {
            ColumnData::Numeric(v) | ColumnData::Binary(v) => format_value(v[row]),
            ColumnData::Categorical { codes, levels } => levels[codes[row]].clone(),
        }
    }

    fn select(&self, rows: &[usize]) -> Column {
        let data = match &self.data {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Binary(v) => ColumnData::Binary(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical { codes, levels } => ColumnData::Categorical {
                codes: rows.iter().map(|&r| codes[r]).collect(),
                levels: levels.clone(),
            },
        };
        Column {
            name: self.name.clone(),
            data,
        }
    }
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Rectangular observations with typed columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    columns: Vec<Column>,
    n_rows: usize,
    /// Optional row-identifier column.
    pub id: Option<String>,
    /// Rows removed by complete-case filtering at load.
    pub dropped_rows: usize,
}

impl DataTable {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, Column::len);
        let mut seen = BTreeSet::new();
        for c in &columns {
            if c.len() != n_rows {
                return Err(Error::Invalid(format!(
                    "column `{}` has {} rows, expected {n_rows}",
                    c.name,
                    c.len()
                )));
            }
            if !seen.insert(c.name.clone()) {
                return Err(Error::Invalid(format!("duplicate column `{}`", c.name)));
            }
            if let ColumnData::Binary(v) = &c.data {
                if let Some(row) = v.iter().position(|&x| x != 0.0 && x != 1.0) {
                    return Err(Error::BadValue {
                        column: c.name.clone(),
                        row,
                        reason: format!("binary value {} outside {{0,1}}", v[row]),
                    });
                }
            }
            if let ColumnData::Numeric(v) = &c.data {
                if let Some(row) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::BadValue {
                        column: c.name.clone(),
                        row,
                        reason: "non-finite value".into(),
                    });
                }
            }
        }
        Ok(DataTable {
            columns,
            n_rows,
            id: None,
            dropped_rows: 0,
        })
    }

    pub fn with_id(mut self, id: &str) -> Result<Self> {
        self.column(id)?;
        self.id = Some(id.to_string());
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Numeric values of a numeric or binary column.
    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        self.column(name)?
            .values()
            .ok_or_else(|| Error::Invalid(format!("column `{name}` is categorical")))
    }

    /// 0/1 indicator of `column == level`. For numeric and binary columns the
    /// level is parsed as a number.
    pub fn indicator(&self, name: &str, level: &str) -> Result<Vec<f64>> {
        let col = self.column(name)?;
        match &col.data {
            ColumnData::Categorical { codes, levels } => {
                let k = levels
                    .iter()
                    .position(|l| l == level)
                    .ok_or_else(|| Error::Invalid(format!("column `{name}` has no level `{level}`")))?;
                Ok(codes.iter().map(|&c| if c == k { 1.0 } else { 0.0 }).collect())
            }
            ColumnData::Numeric(v) | ColumnData::Binary(v) => {
                let x: f64 = level
                    .parse()
                    .map_err(|_| Error::Invalid(format!("`{level}` is not a value of `{name}`")))?;
                Ok(v.iter().map(|&a| if a == x { 1.0 } else { 0.0 }).collect())
            }
        }
    }

    /// Returns a table keeping only the given row indices, in order.
    pub fn select_rows(&self, rows: &[usize]) -> DataTable {
        DataTable {
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            n_rows: rows.len(),
            id: self.id.clone(),
            dropped_rows: self.dropped_rows,
        }
    }

    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> DataTable {
        let rows: Vec<usize> = (0..self.n_rows).filter(|&r| keep(r)).collect();
        self.select_rows(&rows)
    }

    pub fn add_column(mut self, column: Column) -> Result<Self> {
        if self.has_column(&column.name) {
            return Err(Error::Invalid(format!("duplicate column `{}`", column.name)));
        }
        if !self.columns.is_empty() && column.len() != self.n_rows {
            return Err(Error::Invalid(format!(
                "column `{}` has {} rows, expected {}",
                column.name,
                column.len(),
                self.n_rows
            )));
        }
        if self.columns.is_empty() {
            self.n_rows = column.len();
        }
        self.columns.push(column);
        Ok(self)
    }

    /// Moves `level` to the front of a categorical column's level list so it
    /// becomes the reference for dummy coding.
    pub fn set_reference(&mut self, name: &str, level: &str) -> Result<()> {
        let col = self
            .columns
            .iter_mut()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        let ColumnData::Categorical { codes, levels } = &mut col.data else {
            return Err(Error::Invalid(format!("column `{name}` is not categorical")));
        };
        let k = levels
            .iter()
            .position(|l| l == level)
            .ok_or_else(|| Error::Invalid(format!("column `{name}` has no level `{level}`")))?;
        let mut order: Vec<usize> = vec![k];
        order.extend((0..levels.len()).filter(|&i| i != k));
        let remap: Vec<usize> = {
            let mut m = vec![0; levels.len()];
            for (new, &old) in order.iter().enumerate() {
                m[old] = new;
            }
            m
        };
        *levels = order.iter().map(|&i| levels[i].clone()).collect();
        for c in codes.iter_mut() {
            *c = remap[*c];
        }
        Ok(())
    }

    /// Cross-classifies two or more columns into a new categorical column with
    /// levels `a-b` in lexicographic order of the source levels.
    pub fn cross_classify(&self, name: &str, sources: &[&str]) -> Result<Column> {
        let cols = sources.iter().map(|s| self.column(s)).collect::<Result<Vec<_>>>()?;
        let per_col_levels: Vec<Vec<String>> = cols
            .iter()
            .map(|c| match c.levels() {
                Some(l) => l.to_vec(),
                None => {
                    let set: BTreeSet<String> = (0..self.n_rows).map(|r| c.label(r)).collect();
                    set.into_iter().collect()
                }
            })
            .collect();
        let mut levels = vec![String::new()];
        for lv in &per_col_levels {
            levels = levels
                .iter()
                .flat_map(|prefix| {
                    lv.iter().map(move |l| {
                        if prefix.is_empty() {
                            l.clone()
                        } else {
                            format!("{prefix}-{l}")
                        }
                    })
                })
                .collect();
        }
        let values: Vec<String> = (0..self.n_rows)
            .map(|r| cols.iter().map(|c| c.label(r)).collect::<Vec<_>>().join("-"))
            .collect();
        Column::categorical(name, &values, Some(levels))
    }

    /// Writes the table as comma-separated text with a header row.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for r in 0..self.n_rows {
            w.write_record(self.columns.iter().map(|c| c.label(r)))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn is_missing(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t == "." || t.eq_ignore_ascii_case("nan")
}

/// Reads a comma-separated file with a header row.
///
/// Only columns named in `schema` are kept. Rows with a missing value in any
/// schema column are dropped and the count is logged.
pub fn load_table(path: impl AsRef<Path>, schema: &Schema) -> Result<DataTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_table(file, schema, &path.display().to_string())
}

pub fn read_table<R: std::io::Read>(reader: R, schema: &Schema, source: &str) -> Result<DataTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let positions = schema
        .columns
        .iter()
        .map(|(name, _)| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); schema.columns.len()];
    let mut dropped = 0usize;
    let mut total = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        total += 1;
        let fields: Vec<&str> = positions.iter().map(|&p| rec.get(p).unwrap_or("")).collect();
        if fields.iter().any(|f| is_missing(f)) {
            dropped += 1;
            continue;
        }
        for (k, f) in fields.into_iter().enumerate() {
            raw[k].push(f.to_string());
        }
    }
    if total == 0 || total == dropped {
        return Err(Error::NoRows(source.to_string()));
    }
    if dropped > 0 {
        log::warn!("{source}: dropped {dropped} of {total} rows with missing values");
    }

    let mut columns = Vec::with_capacity(schema.columns.len());
    for ((name, ty), values) in schema.columns.iter().zip(raw) {
        let col = match ty {
            ColumnType::Numeric | ColumnType::Binary => {
                let parsed = values
                    .iter()
                    .enumerate()
                    .map(|(row, v)| {
                        v.parse::<f64>().map_err(|_| Error::BadValue {
                            column: name.clone(),
                            row,
                            reason: format!("`{v}` is not numeric"),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                if *ty == ColumnType::Binary {
                    Column::binary(name, parsed)
                } else {
                    Column::numeric(name, parsed)
                }
            }
            ColumnType::Categorical { levels } => Column::categorical(name, &values, levels.clone())?,
        };
        columns.push(col);
    }
    let mut table = DataTable::new(columns)?;
    table.dropped_rows = dropped;
    Ok(table)
}

/// How the outcome is laid out in the trial table.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum OutcomeRole {
    Single(String),
    /// Pre- and post-treatment measures in two columns of one row.
    PrePost {
        pre: String,
        post: String,
    },
    /// Two rows per subject: outcome column, 0/1 post indicator, subject id.
    Long {
        outcome: String,
        time: String,
        subject: String,
    },
}

/// Partition of trial columns into analysis roles.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VariableRoles {
    pub treatment: String,
    pub outcome: Option<OutcomeRole>,
    pub x_covars: Vec<String>,
    pub z_modifiers: Vec<String>,
    pub v_modifiers: Vec<String>,
}

impl VariableRoles {
    fn outcome_columns(&self) -> Vec<String> {
        match &self.outcome {
            None => vec![],
            Some(OutcomeRole::Single(c)) => vec![c.clone()],
            Some(OutcomeRole::PrePost { pre, post }) => vec![pre.clone(), post.clone()],
            Some(OutcomeRole::Long { outcome, time, subject }) => vec![outcome.clone(), time.clone(), subject.clone()],
        }
    }

    /// Checks that the role sets are pairwise disjoint.
    pub fn check_disjoint(&self) -> Result<()> {
        let groups: [(&str, Vec<String>); 5] = [
            ("treatment", vec![self.treatment.clone()]),
            ("outcome", self.outcome_columns()),
            ("X", self.x_covars.clone()),
            ("Z", self.z_modifiers.clone()),
            ("V", self.v_modifiers.clone()),
        ];
        let mut owner: HashMap<&str, &str> = HashMap::new();
        for (role, cols) in &groups {
            let mut local = BTreeSet::new();
            for c in cols {
                if !local.insert(c.as_str()) {
                    return Err(Error::Roles(format!("column `{c}` listed twice in {role}")));
                }
                if let Some(prev) = owner.insert(c.as_str(), role) {
                    return Err(Error::Roles(format!("column `{c}` assigned to both {prev} and {role}")));
                }
            }
        }
        Ok(())
    }
}

/// Long-form column names used when a pre/post layout is reshaped.
pub const LONG_RESPONSE: &str = "Y";
pub const LONG_TIME: &str = "F";
pub const LONG_SUBJECT: &str = "subject";

/// A validated trial table bound to its variable roles.
#[derive(Debug, Clone)]
pub struct AnalysisContext {
    table: DataTable,
    roles: VariableRoles,
}

/// Binds roles to a table after validating them.
pub fn declare_roles(table: DataTable, roles: VariableRoles) -> Result<AnalysisContext> {
    roles.check_disjoint()?;
    let all: Vec<String> = std::iter::once(roles.treatment.clone())
        .chain(roles.outcome_columns())
        .chain(roles.x_covars.iter().cloned())
        .chain(roles.z_modifiers.iter().cloned())
        .collect();
    let modifiers: Vec<String> = roles.z_modifiers.iter().chain(&roles.v_modifiers).cloned().collect();
    reject_unobserved_in_trial(&table, &modifiers)?;
    for c in &all {
        table.column(c)?;
    }

    let a = table.numeric(&roles.treatment)?;
    if let Some(row) = a.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Roles(format!(
            "treatment `{}` is not binary (row {row} = {})",
            roles.treatment, a[row]
        )));
    }
    match &roles.outcome {
        Some(OutcomeRole::Long { time, subject, .. }) => {
            let f = table.numeric(time)?;
            let ids = table.column(subject)?;
            let mut seen: BTreeMap<String, (usize, usize)> = BTreeMap::new();
            for r in 0..table.n_rows() {
                let e = seen.entry(ids.label(r)).or_default();
                match f[r] {
                    x if x == 0.0 => e.0 += 1,
                    x if x == 1.0 => e.1 += 1,
                    x => return Err(Error::Roles(format!("time indicator `{time}` must be 0/1, found {x}"))),
                }
            }
            if let Some((id, (pre, post))) = seen.iter().find(|(_, &(p, q))| p != 1 || q != 1) {
                return Err(Error::Roles(format!(
                    "subject `{id}` has {} rows ({pre} with {time}=0, {post} with {time}=1); \
                     exactly one of each is required",
                    pre + post
                )));
            }
        }
        Some(OutcomeRole::PrePost { pre, post }) => {
            for name in [LONG_RESPONSE, LONG_TIME, LONG_SUBJECT] {
                if table.has_column(name) && name != pre && name != post {
                    return Err(Error::Roles(format!(
                        "column name `{name}` is reserved for the reshaped long table"
                    )));
                }
            }
        }
        _ => {}
    }
    Ok(AnalysisContext { table, roles })
}

/// Refuses analyses naming an effect modifier that the trial did not measure.
pub fn reject_unobserved_in_trial(trial: &DataTable, modifiers: &[String]) -> Result<()> {
    match modifiers.iter().find(|m| !trial.has_column(m)) {
        Some(m) => Err(Error::UnobservedInTrial(m.clone())),
        None => Ok(()),
    }
}

impl AnalysisContext {
    pub fn table(&self) -> &DataTable {
        &self.table
    }

    pub fn roles(&self) -> &VariableRoles {
        &self.roles
    }

    pub fn is_long(&self) -> bool {
        matches!(
            self.roles.outcome,
            Some(OutcomeRole::Long { .. }) | Some(OutcomeRole::PrePost { .. })
        )
    }

    /// One row per subject (baseline rows for long layouts).
    pub fn subjects(&self) -> DataTable {
        match &self.roles.outcome {
            Some(OutcomeRole::Long { time, .. }) => {
                let f = self.table.numeric(time).expect("validated");
                self.table.filter(|r| f[r] == 0.0)
            }
            _ => self.table.clone(),
        }
    }

    /// Long table with response, time indicator and subject columns, plus a
    /// vector mapping each long row to its row in [`AnalysisContext::subjects`].
    pub fn long(&self) -> Result<LongData> {
        match &self.roles.outcome {
            Some(OutcomeRole::Long { outcome, time, subject }) => {
                let subjects = self.subjects();
                let sid = subjects.column(subject)?;
                let index: HashMap<String, usize> = (0..subjects.n_rows()).map(|r| (sid.label(r), r)).collect();
                let ids = self.table.column(subject)?;
                let subject_of = (0..self.table.n_rows()).map(|r| index[&ids.label(r)]).collect();
                Ok(LongData {
                    table: self.table.clone(),
                    response: outcome.clone(),
                    time: time.clone(),
                    subject_of,
                    n_subjects: subjects.n_rows(),
                })
            }
            Some(OutcomeRole::PrePost { pre, post }) => {
                let n = self.table.n_rows();
                let mut rows = Vec::with_capacity(2 * n);
                for r in 0..n {
                    rows.push(r);
                    rows.push(r);
                }
                let base = self.table.select_rows(&rows);
                let pre_v = self.table.numeric(pre)?;
                let post_v = self.table.numeric(post)?;
                let y: Vec<f64> = (0..n).flat_map(|r| [pre_v[r], post_v[r]]).collect();
                let f: Vec<f64> = (0..n).flat_map(|_| [0.0, 1.0]).collect();
                let s: Vec<f64> = (0..n).flat_map(|r| [r as f64, r as f64]).collect();
                let table = base
                    .add_column(Column::numeric(LONG_RESPONSE, y))?
                    .add_column(Column::binary(LONG_TIME, f))?
                    .add_column(Column::numeric(LONG_SUBJECT, s))?;
                Ok(LongData {
                    table,
                    response: LONG_RESPONSE.into(),
                    time: LONG_TIME.into(),
                    subject_of: (0..n).flat_map(|r| [r, r]).collect(),
                    n_subjects: n,
                })
            }
            _ => Err(Error::Roles("outcome is not in a pre/post or long layout".into())),
        }
    }

    /// Replaces the underlying table (e.g. after deriving columns), re-validating roles.
    pub fn with_table(&self, table: DataTable) -> Result<AnalysisContext> {
        declare_roles(table, self.roles.clone())
    }
}

/// Long-form trial data for random-intercepts fitting.
#[derive(Debug, Clone)]
pub struct LongData {
    pub table: DataTable,
    pub response: String,
    pub time: String,
    /// Subject index (into the subject-level table) of every long row.
    pub subject_of: Vec<usize>,
    pub n_subjects: usize,
}

/// Which target-population data are available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationKind {
    FullDataset,
    RepresentativeSample,
    SummaryStats,
}

/// Point estimate with optional confidence limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub point: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl MeanEstimate {
    pub fn known(point: f64) -> Self {
        MeanEstimate {
            point,
            lo: None,
            hi: None,
        }
    }

    pub fn with_ci(point: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= point && point <= hi) {
            return Err(Error::Invalid(format!(
                "confidence limits ({lo}, {hi}) do not bracket {point}"
            )));
        }
        Ok(MeanEstimate {
            point,
            lo: Some(lo),
            hi: Some(hi),
        })
    }

    /// Limits, collapsing to the point when the mean is known with certainty.
    pub fn limits(&self) -> (f64, f64) {
        (self.lo.unwrap_or(self.point), self.hi.unwrap_or(self.point))
    }

    pub fn has_ci(&self) -> bool {
        let (lo, hi) = self.limits();
        lo < hi
    }
}

/// Joint distribution over categorical cells of {X, Z}.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCells {
    pub columns: Vec<String>,
    pub cells: BTreeMap<Vec<String>, f64>,
}

impl JointCells {
    pub fn new(columns: Vec<String>, cells: BTreeMap<Vec<String>, f64>) -> Result<Self> {
        for (k, &p) in &cells {
            if k.len() != columns.len() {
                return Err(Error::Invalid(format!(
                    "cell {k:?} has {} levels for {} columns",
                    k.len(),
                    columns.len()
                )));
            }
            if !(p >= 0.0) {
                return Err(Error::Invalid(format!("cell {k:?} has negative probability {p}")));
            }
        }
        let total: f64 = cells.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "joint cell probabilities sum to {total}, not 1"
            )));
        }
        Ok(JointCells { columns, cells })
    }
}

/// Population summary statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SummaryStats {
    pub z_means: BTreeMap<String, MeanEstimate>,
    pub joint_cells: Option<JointCells>,
    /// Optional (min, max) support of numeric modifiers, for coverage checks.
    pub z_ranges: BTreeMap<String, (f64, f64)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SummaryFile {
    #[serde(default)]
    z_means: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    z_ranges: BTreeMap<String, [f64; 2]>,
    #[serde(default)]
    joint_cells: Option<JointCellsFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JointCellsFile {
    columns: Vec<String>,
    cell: Vec<CellFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CellFile {
    levels: Vec<String>,
    p: f64,
}

impl SummaryStats {
    /// Parses the summary-statistics text format:
    ///
    /// ```toml
    /// z_means.nonwhite = [0.639, 0.62, 0.66]
    /// z_means.female = [0.266]
    /// z_ranges.age = [13, 80]
    ///
    /// [joint_cells]
    /// columns = ["sex", "race"]
    /// [[joint_cells.cell]]
    /// levels = ["female", "White"]
    /// p = 0.1
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let file: SummaryFile = toml::from_str(text).map_err(|e| Error::Invalid(format!("summary stats: {e}")))?;
        let mut z_means = BTreeMap::new();
        for (k, v) in file.z_means {
            let est = match v.as_slice() {
                [p] => MeanEstimate::known(*p),
                [p, lo, hi] => MeanEstimate::with_ci(*p, *lo, *hi)?,
                _ => {
                    return Err(Error::Invalid(format!(
                        "z_means.{k} must be [point] or [point, lo, hi]"
                    )))
                }
            };
            z_means.insert(k, est);
        }
        let joint_cells = file
            .joint_cells
            .map(|j| {
                let cells = j.cell.into_iter().map(|c| (c.levels, c.p)).collect();
                JointCells::new(j.columns, cells)
            })
            .transpose()?;
        Ok(SummaryStats {
            z_means,
            joint_cells,
            z_ranges: file.z_ranges.into_iter().map(|(k, [a, b])| (k, (a, b))).collect(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone)]
pub enum PopulationData {
    Table(DataTable),
    Summary(SummaryStats),
}

/// Target-population data under one of the three data scenarios.
#[derive(Debug, Clone)]
pub struct PopulationTarget {
    pub kind: PopulationKind,
    pub data: PopulationData,
    /// Whether trial members can be identified inside the population data.
    pub trial_identifiable: bool,
    /// 0/1 column marking trial members when they are identifiable.
    pub membership: Option<String>,
}

impl PopulationTarget {
    pub fn dataset(kind: PopulationKind, table: DataTable) -> Result<Self> {
        if kind == PopulationKind::SummaryStats {
            return Err(Error::Invalid("summary-stats population cannot hold a dataset".into()));
        }
        Ok(PopulationTarget {
            kind,
            data: PopulationData::Table(table),
            trial_identifiable: false,
            membership: None,
        })
    }

    pub fn summary(stats: SummaryStats) -> Self {
        PopulationTarget {
            kind: PopulationKind::SummaryStats,
            data: PopulationData::Summary(stats),
            trial_identifiable: false,
            membership: None,
        }
    }

    /// Marks trial members as identifiable through a 0/1 membership column.
    pub fn identifiable_by(mut self, membership: &str) -> Result<Self> {
        let PopulationData::Table(t) = &self.data else {
            return Err(Error::Invalid("membership requires a population dataset".into()));
        };
        let m = t.numeric(membership)?;
        if m.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Invalid(format!("membership `{membership}` is not 0/1")));
        }
        self.trial_identifiable = true;
        self.membership = Some(membership.to_string());
        Ok(self)
    }

    pub fn table(&self) -> Option<&DataTable> {
        match &self.data {
            PopulationData::Table(t) => Some(t),
            PopulationData::Summary(_) => None,
        }
    }

    /// Population mean of a column or level indicator. Means computed from a
    /// dataset are treated as known with certainty.
    pub fn mean_of(&self, key: &str, column: &str, level: Option<&str>) -> Result<MeanEstimate> {
        match &self.data {
            PopulationData::Table(t) => {
                let v = match level {
                    Some(l) => t.indicator(column, l)?,
                    None => t.numeric(column)?.to_vec(),
                };
                Ok(MeanEstimate::known(crate::stats::mean(&v)))
            }
            PopulationData::Summary(s) => s
                .z_means
                .get(key)
                .copied()
                .ok_or_else(|| Error::MissingColumn(format!("{key} (population summary z_means)"))),
        }
    }
}

/// Support comparison for one modifier.
#[derive(Debug, Clone, PartialEq)]
pub enum ModifierSupport {
    Numeric {
        trial: (f64, f64),
        population: (f64, f64),
    },
    Categorical {
        trial_levels: Vec<String>,
        population_levels: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModifierCoverage {
    pub column: String,
    pub support: ModifierSupport,
    /// Empty when covered; otherwise describes the uncovered part.
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub modifiers: Vec<ModifierCoverage>,
    /// Population restricted to rows whose checked values lie within trial support.
    pub trimmed: Option<DataTable>,
}

impl CoverageReport {
    pub const V_NOTE: &'static str = "coverage of modifiers not observed in the target population cannot be checked";

    pub fn flags(&self) -> Vec<String> {
        self.modifiers
            .iter()
            .flat_map(|m| m.flags.iter().map(move |f| format!("{}: {f}", m.column)))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.modifiers.iter().all(|m| m.flags.is_empty())
    }
}

fn observed_levels(t: &DataTable, col: &Column) -> Vec<String> {
    let set: BTreeSet<String> = (0..t.n_rows()).map(|r| col.label(r)).collect();
    set.into_iter().collect()
}

fn range_of(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

/// Compares trial support of each modifier to its population support.
///
/// Numeric modifiers use strict range containment; categorical modifiers flag
/// population levels absent from the trial.
pub fn check_modifier_coverage(
    trial: &DataTable,
    pop: &PopulationTarget,
    modifiers: &[String],
) -> Result<CoverageReport> {
    let mut out = Vec::new();
    for m in modifiers {
        let tcol = trial.column(m)?;
        let support = match (&pop.data, tcol.values()) {
            (PopulationData::Table(p), Some(tv)) => {
                let pv = p.numeric(m)?;
                if tcol.is_categorical() || matches!(tcol.data, ColumnData::Binary(_)) {
                    ModifierSupport::Categorical {
                        trial_levels: observed_levels(trial, tcol),
                        population_levels: observed_levels(p, p.column(m)?),
                    }
                } else {
                    ModifierSupport::Numeric {
                        trial: range_of(tv),
                        population: range_of(pv),
                    }
                }
            }
            (PopulationData::Table(p), None) => ModifierSupport::Categorical {
                trial_levels: observed_levels(trial, tcol),
                population_levels: observed_levels(p, p.column(m)?),
            },
            (PopulationData::Summary(s), tv) => {
                if let Some(&(lo, hi)) = s.z_ranges.get(m) {
                    let tv = tv.ok_or_else(|| Error::Invalid(format!("range given for categorical `{m}`")))?;
                    ModifierSupport::Numeric {
                        trial: range_of(tv),
                        population: (lo, hi),
                    }
                } else if let Some(j) = s.joint_cells.as_ref().filter(|j| j.columns.contains(m)) {
                    let k = j.columns.iter().position(|c| c == m).unwrap();
                    let levels: BTreeSet<String> = j
                        .cells
                        .iter()
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(cell, _)| cell[k].clone())
                        .collect();
                    ModifierSupport::Categorical {
                        trial_levels: observed_levels(trial, tcol),
                        population_levels: levels.into_iter().collect(),
                    }
                } else {
                    return Err(Error::MissingColumn(format!(
                        "{m} (population summary has no range or cell distribution)"
                    )));
                }
            }
        };
        let flags = match &support {
            ModifierSupport::Numeric { trial, population } => {
                let mut f = Vec::new();
                if population.0 < trial.0 {
                    f.push(format!(
                        "population minimum {} below trial minimum {}",
                        population.0, trial.0
                    ));
                }
                if population.1 > trial.1 {
                    f.push(format!(
                        "population maximum {} above trial maximum {}",
                        population.1, trial.1
                    ));
                }
                f
            }
            ModifierSupport::Categorical {
                trial_levels,
                population_levels,
            } => population_levels
                .iter()
                .filter(|l| !trial_levels.contains(l))
                .map(|l| format!("population level `{l}` absent from trial"))
                .collect(),
        };
        out.push(ModifierCoverage {
            column: m.clone(),
            support,
            flags,
        });
    }

    let trimmed = pop.table().map(|p| {
        p.filter(|r| {
            out.iter().all(|m| match &m.support {
                ModifierSupport::Numeric { trial, .. } => {
                    let v = p.numeric(&m.column).expect("checked")[r];
                    v >= trial.0 && v <= trial.1
                }
                ModifierSupport::Categorical { trial_levels, .. } => {
                    let lab = p.column(&m.column).expect("checked").label(r);
                    trial_levels.contains(&lab)
                }
            })
        })
    });
    Ok(CoverageReport {
        modifiers: out,
        trimmed,
    })
}
