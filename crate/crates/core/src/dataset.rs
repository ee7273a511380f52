//! Column-oriented clause-snapshot tables: loading, validation, transforms,
//! and fold partitioning.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Well-known column names of the default clause-trace schema.
pub mod columns {
    pub const BRANCHING: &str = "Branching";
    pub const RESTART: &str = "Restart";
    pub const SIZE: &str = "Size";
    pub const LBD: &str = "LBD";
    pub const ACTIVITY: &str = "Activity";
    pub const UIP: &str = "UIP";
    pub const PROPAGATION: &str = "Propagation";
    pub const LAST_TOUCH: &str = "LastTouch";
    pub const TIME: &str = "Time";
    pub const UTILITY: &str = "Utility";
}

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("file is empty or has no header row")]
    EmptyFile,
    #[error("column {0} missing from input")]
    MissingColumn(String),
    #[error("unexpected column {0} not in schema")]
    UnexpectedColumn(String),
    #[error("row {row}, column {column}: value {value:?} is not a listed category")]
    UnknownCategory {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column {column}: cell {value:?} is not numeric")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row} has {found} cells, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("column {0} has zero variance")]
    ZeroVariance(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("fold count {k} invalid for {n} rows (need 2 <= k <= n)")]
    BadFoldCount { k: usize, n: usize },
    #[error("predicate matched no rows")]
    EmptyResult,
    #[error("column names are not unique: {0}")]
    DuplicateColumn(String),
    #[error("categorical column {0} lists fewer than two categories")]
    TooFewCategories(String),
    #[error("dataset must contain at least one row")]
    NoRows,
    #[error("non-finite value in column {column}, row {row}")]
    NonFiniteCell { row: usize, column: String },
    #[error("comparison {op} not valid for categorical column {column}")]
    BadCategoricalComparison { column: String, op: CmpOp },
    #[error("predicate value has wrong type for column {0}")]
    PredicateTypeMismatch(String),
    #[error("cannot parse predicate {0:?}")]
    BadPredicate(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Whether a column holds real values or one of a fixed set of labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnKind {
    Continuous,
    Categorical { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnSchema {
    pub fn continuous(name: &str) -> Self {
        ColumnSchema {
            name: name.to_string(),
            kind: ColumnKind::Continuous,
        }
    }

    pub fn categorical(name: &str, categories: &[&str]) -> Self {
        ColumnSchema {
            name: name.to_string(),
            kind: ColumnKind::Categorical {
                categories: categories.iter().map(|c| c.to_string()).collect(),
            },
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, ColumnKind::Categorical { .. })
    }

    /// Category labels, empty for continuous columns.
    pub fn categories(&self) -> &[String] {
        match &self.kind {
            ColumnKind::Continuous => &[],
            ColumnKind::Categorical { categories } => categories,
        }
    }
}

/// The ten-column clause snapshot schema used throughout the toolkit:
/// two user-chosen heuristics plus eight per-clause measurements.
pub fn clause_trace_schema() -> Vec<ColumnSchema> {
    use columns::*;
    vec![
        ColumnSchema::categorical(BRANCHING, &["VSIDS", "Maple"]),
        ColumnSchema::categorical(RESTART, &["LBD-based", "Geometric", "Luby"]),
        ColumnSchema::continuous(SIZE),
        ColumnSchema::continuous(LBD),
        ColumnSchema::continuous(ACTIVITY),
        ColumnSchema::continuous(UIP),
        ColumnSchema::continuous(PROPAGATION),
        ColumnSchema::continuous(LAST_TOUCH),
        ColumnSchema::continuous(TIME),
        ColumnSchema::continuous(UTILITY),
    ]
}

/// One column of cells. Categorical cells are stored as indices into the
/// schema's category list.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Continuous(Vec<f64>),
    Categorical(Vec<u32>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Continuous(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A single cell value, used for predicates and treatment levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnValue {
    Num(f64),
    Cat(String),
}

impl fmt::Display for ColumnValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnValue::Num(x) => write!(f, "{x}"),
            ColumnValue::Cat(s) => write!(f, "{s}"),
        }
    }
}

impl From<f64> for ColumnValue {
    fn from(v: f64) -> Self {
        ColumnValue::Num(v)
    }
}

impl From<&str> for ColumnValue {
    fn from(s: &str) -> Self {
        ColumnValue::Cat(s.to_string())
    }
}

/// Immutable column-oriented table with schema metadata.
///
/// All transforming operations return new datasets; a constructed value never
/// changes, so it can be shared freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Vec<ColumnSchema>,
    data: Vec<Column>,
    n_rows: usize,
    provenance: String,
}

impl Dataset {
    /// Validates schema/cell agreement and wraps the columns.
    pub fn new(
        schema: Vec<ColumnSchema>,
        data: Vec<Column>,
        provenance: &str,
    ) -> Result<Self, DatasetError> {
        let mut seen = HashMap::new();
        for col in &schema {
            if seen.insert(col.name.clone(), ()).is_some() {
                return Err(DatasetError::DuplicateColumn(col.name.clone()));
            }
            if let ColumnKind::Categorical { categories } = &col.kind {
                if categories.len() < 2 {
                    return Err(DatasetError::TooFewCategories(col.name.clone()));
                }
            }
        }
        assert_eq!(
            schema.len(),
            data.len(),
            "one column of cells per schema column"
        );
        let n_rows = data.first().map(Column::len).unwrap_or(0);
        if n_rows == 0 {
            return Err(DatasetError::NoRows);
        }
        for (cs, col) in schema.iter().zip(&data) {
            if col.len() != n_rows {
                return Err(DatasetError::RaggedRow {
                    row: 0,
                    expected: n_rows,
                    found: col.len(),
                });
            }
            match (&cs.kind, col) {
                (ColumnKind::Continuous, Column::Continuous(vals)) => {
                    for (row, v) in vals.iter().enumerate() {
                        if !v.is_finite() {
                            return Err(DatasetError::NonFiniteCell {
                                row,
                                column: cs.name.clone(),
                            });
                        }
                    }
                }
                (ColumnKind::Categorical { categories }, Column::Categorical(codes)) => {
                    for (row, &c) in codes.iter().enumerate() {
                        if c as usize >= categories.len() {
                            return Err(DatasetError::UnknownCategory {
                                row,
                                column: cs.name.clone(),
                                value: format!("#{c}"),
                            });
                        }
                    }
                }
                _ => panic!("column kind does not match cell storage for {}", cs.name),
            }
        }
        Ok(Dataset {
            schema,
            data,
            n_rows,
            provenance: provenance.to_string(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_columns(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &[ColumnSchema] {
        &self.schema
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn column_names(&self) -> Vec<String> {
        self.schema.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Result<&Column, DatasetError> {
        let idx = self
            .column_index(name)
            .ok_or_else(|| DatasetError::UnknownColumn(name.to_string()))?;
        Ok(&self.data[idx])
    }

    pub fn column_schema(&self, name: &str) -> Result<&ColumnSchema, DatasetError> {
        let idx = self
            .column_index(name)
            .ok_or_else(|| DatasetError::UnknownColumn(name.to_string()))?;
        Ok(&self.schema[idx])
    }

    /// Continuous cells of a column, or `UnknownColumn`/panic on misuse.
    pub fn continuous(&self, name: &str) -> Result<&[f64], DatasetError> {
        match self.column(name)? {
            Column::Continuous(v) => Ok(v),
            Column::Categorical(_) => Err(DatasetError::UnknownColumn(format!(
                "{name} is categorical, expected continuous"
            ))),
        }
    }

    pub fn categorical_codes(&self, name: &str) -> Result<&[u32], DatasetError> {
        match self.column(name)? {
            Column::Categorical(v) => Ok(v),
            Column::Continuous(_) => Err(DatasetError::UnknownColumn(format!(
                "{name} is continuous, expected categorical"
            ))),
        }
    }

    /// A new dataset keeping exactly the rows listed in `rows` (in order).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset, DatasetError> {
        if rows.is_empty() {
            return Err(DatasetError::EmptyResult);
        }
        let data = self
            .data
            .iter()
            .map(|col| match col {
                Column::Continuous(v) => Column::Continuous(rows.iter().map(|&r| v[r]).collect()),
                Column::Categorical(v) => Column::Categorical(rows.iter().map(|&r| v[r]).collect()),
            })
            .collect();
        Dataset::new(self.schema.clone(), data, &self.provenance)
    }

    /// Cell at (row, column index) as a [`ColumnValue`].
    pub fn cell(&self, row: usize, col: usize) -> ColumnValue {
        match &self.data[col] {
            Column::Continuous(v) => ColumnValue::Num(v[row]),
            Column::Categorical(codes) => {
                ColumnValue::Cat(self.schema[col].categories()[codes[row] as usize].clone())
            }
        }
    }
}

// ---------------------------------------------------------------------------
// CSV ingestion / writing
// ---------------------------------------------------------------------------

/// Loads a comma-separated file against `schema`. The header must contain
/// exactly the schema's column names (any order); cells are parsed per the
/// column kind and categorical cells validated against the category list.
pub fn load_csv(path: &Path, schema: &[ColumnSchema]) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io(e.to_string()))?;
    load_csv_str(&text, schema)
}

/// Same as [`load_csv`] but from an in-memory string.
pub fn load_csv_str(text: &str, schema: &[ColumnSchema]) -> Result<Dataset, DatasetError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or(DatasetError::EmptyFile)?;
    let header: Vec<&str> = header.split(',').map(str::trim).collect();

    for name in &header {
        if !schema.iter().any(|c| c.name == *name) {
            return Err(DatasetError::UnexpectedColumn(name.to_string()));
        }
    }
    // Map schema position -> position in the file.
    let mut file_pos = Vec::with_capacity(schema.len());
    for col in schema {
        let pos = header
            .iter()
            .position(|h| *h == col.name)
            .ok_or_else(|| DatasetError::MissingColumn(col.name.clone()))?;
        file_pos.push(pos);
    }

    let mut data: Vec<Column> = schema
        .iter()
        .map(|c| match c.kind {
            ColumnKind::Continuous => Column::Continuous(Vec::new()),
            ColumnKind::Categorical { .. } => Column::Categorical(Vec::new()),
        })
        .collect();

    let mut n_rows = 0usize;
    for (row, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != header.len() {
            return Err(DatasetError::RaggedRow {
                row,
                expected: header.len(),
                found: cells.len(),
            });
        }
        for (si, col) in schema.iter().enumerate() {
            let raw = cells[file_pos[si]];
            match (&col.kind, &mut data[si]) {
                (ColumnKind::Continuous, Column::Continuous(vals)) => {
                    let v: f64 = raw.parse().map_err(|_| DatasetError::NonNumericCell {
                        row,
                        column: col.name.clone(),
                        value: raw.to_string(),
                    })?;
                    if !v.is_finite() {
                        return Err(DatasetError::NonFiniteCell {
                            row,
                            column: col.name.clone(),
                        });
                    }
                    vals.push(v);
                }
                (ColumnKind::Categorical { categories }, Column::Categorical(codes)) => {
                    let code = categories.iter().position(|c| c == raw).ok_or_else(|| {
                        DatasetError::UnknownCategory {
                            row,
                            column: col.name.clone(),
                            value: raw.to_string(),
                        }
                    })?;
                    codes.push(code as u32);
                }
                _ => unreachable!(),
            }
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(DatasetError::EmptyFile);
    }
    Dataset::new(schema.to_vec(), data, "csv")
}

/// Writes the dataset back out as CSV. Continuous cells use the shortest
/// representation that round-trips, so load -> write -> load is an identity.
pub fn write_csv(d: &Dataset, path: &Path) -> Result<(), DatasetError> {
    std::fs::write(path, to_csv_string(d)).map_err(|e| DatasetError::Io(e.to_string()))
}

pub fn to_csv_string(d: &Dataset) -> String {
    let mut out = String::new();
    out.push_str(&d.column_names().join(","));
    out.push('\n');
    for row in 0..d.n_rows() {
        for col in 0..d.n_columns() {
            if col > 0 {
                out.push(',');
            }
            out.push_str(&d.cell(row, col).to_string());
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

/// Mean and standard deviation removed from one column by normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMoments {
    pub column: String,
    pub mean: f64,
    pub stddev: f64,
}

/// Standard-score normalization: each continuous column becomes
/// `(x - mean) / stddev` with the population stddev (divide by n).
/// Categorical columns pass through unchanged. Returns the per-column
/// moments so the transform can be inverted.
pub fn normalize_standard_score(
    d: &Dataset,
) -> Result<(Dataset, Vec<ColumnMoments>), DatasetError> {
    let mut data = Vec::with_capacity(d.n_columns());
    let mut moments = Vec::new();
    for (cs, col) in d.schema.iter().zip(&d.data) {
        match col {
            Column::Categorical(codes) => data.push(Column::Categorical(codes.clone())),
            Column::Continuous(vals) => {
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let stddev = var.sqrt();
                if stddev <= 0.0 {
                    return Err(DatasetError::ZeroVariance(cs.name.clone()));
                }
                data.push(Column::Continuous(
                    vals.iter().map(|v| (v - mean) / stddev).collect(),
                ));
                moments.push(ColumnMoments {
                    column: cs.name.clone(),
                    mean,
                    stddev,
                });
            }
        }
    }
    let out = Dataset::new(
        d.schema.clone(),
        data,
        &format!("{} (normalized)", d.provenance),
    )?;
    Ok((out, moments))
}

/// Dummy-codes every categorical column: a column with m categories becomes
/// m-1 indicator columns named `<col>=<category>`, with the first listed
/// category as the all-zeros reference. Continuous columns are untouched.
pub fn encode_categoricals(d: &Dataset) -> Dataset {
    let mut schema = Vec::new();
    let mut data = Vec::new();
    for (cs, col) in d.schema.iter().zip(&d.data) {
        match (&cs.kind, col) {
            (ColumnKind::Continuous, Column::Continuous(vals)) => {
                schema.push(cs.clone());
                data.push(Column::Continuous(vals.clone()));
            }
            (ColumnKind::Categorical { categories }, Column::Categorical(codes)) => {
                for (ci, cat) in categories.iter().enumerate().skip(1) {
                    schema.push(ColumnSchema::continuous(&format!("{}={}", cs.name, cat)));
                    data.push(Column::Continuous(
                        codes
                            .iter()
                            .map(|&c| if c as usize == ci { 1.0 } else { 0.0 })
                            .collect(),
                    ));
                }
            }
            _ => unreachable!(),
        }
    }
    Dataset::new(schema, data, &d.provenance).expect("encoding preserves validity")
}

/// Names of the indicator columns a categorical column expands to.
pub fn dummy_names(cs: &ColumnSchema) -> Vec<String> {
    cs.categories()
        .iter()
        .skip(1)
        .map(|c| format!("{}={}", cs.name, c))
        .collect()
}

// ---------------------------------------------------------------------------
// Fold plans
// ---------------------------------------------------------------------------

/// Assignment of each row to one of k folds; sizes differ by at most one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: Vec<u32>,
}

impl FoldPlan {
    /// Row indices belonging to fold `i`.
    pub fn fold_rows(&self, i: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &f)| f as usize == i)
            .map(|(r, _)| r)
            .collect()
    }

    /// Row indices outside fold `i` (the training split).
    pub fn train_rows(&self, i: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &f)| f as usize != i)
            .map(|(r, _)| r)
            .collect()
    }
}

/// Deterministic fold assignment: a seeded permutation of the rows dealt
/// round-robin into k folds.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldPlan, DatasetError> {
    if k < 2 || k > n {
        return Err(DatasetError::BadFoldCount { k, n });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut assignment = vec![0u32; n];
    for (pos, &row) in perm.iter().enumerate() {
        assignment[row] = (pos % k) as u32;
    }
    Ok(FoldPlan { k, assignment })
}

// ---------------------------------------------------------------------------
// Row predicates
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Le,
    Lt,
    Ge,
    Gt,
    Eq,
    Ne,
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CmpOp::Le => "<=",
            CmpOp::Lt => "<",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
        };
        write!(f, "{s}")
    }
}

/// A single column comparison such as `LBD <= 6` or `Branching = Maple`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub column: String,
    pub op: CmpOp,
    pub value: ColumnValue,
}

impl Predicate {
    pub fn new(column: &str, op: CmpOp, value: ColumnValue) -> Self {
        Predicate {
            column: column.to_string(),
            op,
            value,
        }
    }

    /// Parses text like `LBD <= 6`. Accepts both ASCII and the
    /// corresponding Unicode comparison glyphs.
    pub fn parse(text: &str) -> Result<Predicate, DatasetError> {
        let ops = [
            ("<=", CmpOp::Le),
            ("≤", CmpOp::Le),
            (">=", CmpOp::Ge),
            ("≥", CmpOp::Ge),
            ("!=", CmpOp::Ne),
            ("≠", CmpOp::Ne),
            ("<", CmpOp::Lt),
            (">", CmpOp::Gt),
            ("=", CmpOp::Eq),
        ];
        for (sym, op) in ops {
            if let Some(pos) = text.find(sym) {
                let column = text[..pos].trim();
                let rhs = text[pos + sym.len()..].trim();
                if column.is_empty() || rhs.is_empty() {
                    return Err(DatasetError::BadPredicate(text.to_string()));
                }
                let value = match rhs.parse::<f64>() {
                    Ok(v) => ColumnValue::Num(v),
                    Err(_) => ColumnValue::Cat(rhs.to_string()),
                };
                return Ok(Predicate::new(column, op, value));
            }
        }
        Err(DatasetError::BadPredicate(text.to_string()))
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.column, self.op, self.value)
    }
}

/// Keeps the rows satisfying `pred`; the schema is unchanged.
///
/// An empty result is an error so that a conditional query whose condition
/// matches no data fails loudly rather than estimating on nothing.
pub fn filter_rows(d: &Dataset, pred: &Predicate) -> Result<Dataset, DatasetError> {
    let cs = d.column_schema(&pred.column)?;
    let keep: Vec<usize> = match (&cs.kind, d.column(&pred.column)?) {
        (ColumnKind::Continuous, Column::Continuous(vals)) => {
            let target = match pred.value {
                ColumnValue::Num(v) => v,
                ColumnValue::Cat(_) => {
                    return Err(DatasetError::PredicateTypeMismatch(pred.column.clone()))
                }
            };
            vals.iter()
                .enumerate()
                .filter(|(_, &v)| match pred.op {
                    CmpOp::Le => v <= target,
                    CmpOp::Lt => v < target,
                    CmpOp::Ge => v >= target,
                    CmpOp::Gt => v > target,
                    CmpOp::Eq => v == target,
                    CmpOp::Ne => v != target,
                })
                .map(|(r, _)| r)
                .collect()
        }
        (ColumnKind::Categorical { categories }, Column::Categorical(codes)) => {
            if !matches!(pred.op, CmpOp::Eq | CmpOp::Ne) {
                return Err(DatasetError::BadCategoricalComparison {
                    column: pred.column.clone(),
                    op: pred.op,
                });
            }
            let label = match &pred.value {
                ColumnValue::Cat(s) => s.clone(),
                ColumnValue::Num(_) => {
                    return Err(DatasetError::PredicateTypeMismatch(pred.column.clone()))
                }
            };
            let target = categories.iter().position(|c| *c == label).ok_or_else(|| {
                DatasetError::UnknownCategory {
                    row: 0,
                    column: pred.column.clone(),
                    value: label,
                }
            })? as u32;
            codes
                .iter()
                .enumerate()
                .filter(|(_, &c)| match pred.op {
                    CmpOp::Eq => c == target,
                    CmpOp::Ne => c != target,
                    _ => unreachable!(),
                })
                .map(|(r, _)| r)
                .collect()
        }
        _ => unreachable!(),
    };
    if keep.is_empty() {
        return Err(DatasetError::EmptyResult);
    }
    d.select_rows(&keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> Dataset {
        let schema = vec![
            ColumnSchema::categorical("Branching", &["VSIDS", "Maple"]),
            ColumnSchema::continuous("LBD"),
        ];
        let data = vec![
            Column::Categorical(vec![0, 1, 1]),
            Column::Continuous(vec![2.0, 5.0, 9.0]),
        ];
        Dataset::new(schema, data, "test").unwrap()
    }

    #[test]
    fn load_csv_round_trips_identically() {
        let schema = clause_trace_schema();
        let csv = "\
Branching,Restart,Size,LBD,Activity,UIP,Propagation,LastTouch,Time,Utility
VSIDS,Luby,12,3,0.5,1,40,100,0,7.25
Maple,Geometric,20,8,1.25,0,11,250,10000,0
Maple,LBD-based,15,4,0.75,2,33,50,5000,3.5
";
        let d = load_csv_str(csv, &schema).unwrap();
        assert_eq!(d.n_rows(), 3);
        let back = to_csv_string(&d);
        let d2 = load_csv_str(&back, &schema).unwrap();
        assert_eq!(d, d2);
    }

    #[test]
    fn load_csv_header_is_order_insensitive() {
        let schema = vec![ColumnSchema::continuous("A"), ColumnSchema::continuous("B")];
        let d = load_csv_str("B,A\n2,1\n", &schema).unwrap();
        assert_eq!(d.continuous("A").unwrap(), &[1.0]);
        assert_eq!(d.continuous("B").unwrap(), &[2.0]);
    }

    #[test]
    fn load_csv_rejects_unknown_category() {
        let schema = clause_trace_schema();
        let csv = "\
Branching,Restart,Size,LBD,Activity,UIP,Propagation,LastTouch,Time,Utility
CHB,Luby,12,3,0.5,1,40,100,0,7.25
";
        match load_csv_str(csv, &schema) {
            Err(DatasetError::UnknownCategory {
                row: 0,
                column,
                value,
            }) => {
                assert_eq!(column, "Branching");
                assert_eq!(value, "CHB");
            }
            other => panic!("expected UnknownCategory, got {other:?}"),
        }
    }

    #[test]
    fn load_csv_reports_missing_column() {
        let schema = clause_trace_schema();
        let csv = "\
Branching,Restart,Size,LBD,Activity,UIP,Propagation,LastTouch,Time
VSIDS,Luby,12,3,0.5,1,40,100,0
";
        assert_eq!(
            load_csv_str(csv, &schema),
            Err(DatasetError::MissingColumn("Utility".into()))
        );
    }

    #[test]
    fn load_csv_rejects_non_numeric_and_empty() {
        let schema = vec![ColumnSchema::continuous("A")];
        assert!(matches!(
            load_csv_str("A\nxyz\n", &schema),
            Err(DatasetError::NonNumericCell { .. })
        ));
        assert_eq!(load_csv_str("", &schema), Err(DatasetError::EmptyFile));
        assert_eq!(load_csv_str("A\n", &schema), Err(DatasetError::EmptyFile));
    }

    #[test]
    fn normalize_matches_hand_computation() {
        let schema = vec![ColumnSchema::continuous("x")];
        let d = Dataset::new(schema, vec![Column::Continuous(vec![1.0, 2.0, 3.0])], "t").unwrap();
        let (nd, moments) = normalize_standard_score(&d).unwrap();
        // Population stddev of [1,2,3]: sqrt(2/3).
        let expect_std = (2.0f64 / 3.0).sqrt();
        assert!((moments[0].mean - 2.0).abs() < 1e-15);
        assert!((moments[0].stddev - expect_std).abs() < 1e-15);
        let vals = nd.continuous("x").unwrap();
        assert!((vals[0] - (-1.224744871391589)).abs() < 1e-12);
        assert!(vals[1].abs() < 1e-15);
        assert!((vals[2] - 1.224744871391589).abs() < 1e-12);
    }

    #[test]
    fn normalize_is_idempotent_up_to_fp() {
        let schema = vec![ColumnSchema::continuous("x")];
        let d = Dataset::new(
            schema,
            vec![Column::Continuous(vec![-1.5, -0.5, 0.5, 1.5])],
            "t",
        )
        .unwrap();
        let (n1, _) = normalize_standard_score(&d).unwrap();
        let (n2, _) = normalize_standard_score(&n1).unwrap();
        for (a, b) in n1
            .continuous("x")
            .unwrap()
            .iter()
            .zip(n2.continuous("x").unwrap())
        {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_constant_column() {
        let schema = vec![ColumnSchema::continuous("x")];
        let d = Dataset::new(schema, vec![Column::Continuous(vec![5.0, 5.0, 5.0])], "t").unwrap();
        assert_eq!(
            normalize_standard_score(&d).unwrap_err(),
            DatasetError::ZeroVariance("x".into())
        );
    }

    #[test]
    fn normalized_columns_have_zero_mean_unit_std() {
        let schema = vec![ColumnSchema::continuous("x")];
        let vals: Vec<f64> = (0..100).map(|i| (i as f64) * 0.37 - 3.0).collect();
        let d = Dataset::new(schema, vec![Column::Continuous(vals)], "t").unwrap();
        let (nd, _) = normalize_standard_score(&d).unwrap();
        let v = nd.continuous("x").unwrap();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-9);
        assert!((std - 1.0).abs() < 1e-9);
    }

    #[test]
    fn encode_uses_reference_category() {
        let d = small();
        let enc = encode_categoricals(&d);
        assert_eq!(
            enc.column_names(),
            vec!["Branching=Maple".to_string(), "LBD".to_string()]
        );
        // Rows: VSIDS (reference) -> 0, Maple -> 1.
        assert_eq!(enc.continuous("Branching=Maple").unwrap(), &[0.0, 1.0, 1.0]);
        // Continuous columns bit-identical.
        assert_eq!(enc.continuous("LBD").unwrap(), d.continuous("LBD").unwrap());
    }

    #[test]
    fn encode_three_category_column() {
        let schema = vec![ColumnSchema::categorical(
            "Restart",
            &["LBD-based", "Geometric", "Luby"],
        )];
        let d = Dataset::new(schema, vec![Column::Categorical(vec![2, 0])], "t").unwrap();
        let enc = encode_categoricals(&d);
        assert_eq!(
            enc.column_names(),
            vec!["Restart=Geometric".to_string(), "Restart=Luby".to_string()]
        );
        assert_eq!(enc.continuous("Restart=Geometric").unwrap(), &[0.0, 0.0]);
        assert_eq!(enc.continuous("Restart=Luby").unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn encode_without_categoricals_is_identity() {
        let schema = vec![ColumnSchema::continuous("x")];
        let d = Dataset::new(schema, vec![Column::Continuous(vec![1.0, 2.0])], "t").unwrap();
        assert_eq!(encode_categoricals(&d), d);
    }

    #[test]
    fn kfold_shapes() {
        let plan = kfold_split(10, 10, 1).unwrap();
        for i in 0..10 {
            assert_eq!(plan.fold_rows(i).len(), 1);
        }
        let plan = kfold_split(7, 3, 1).unwrap();
        let mut sizes: Vec<usize> = (0..3).map(|i| plan.fold_rows(i).len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 3]);
    }

    #[test]
    fn kfold_is_deterministic() {
        assert_eq!(
            kfold_split(100, 7, 42).unwrap(),
            kfold_split(100, 7, 42).unwrap()
        );
        assert_ne!(
            kfold_split(100, 7, 42).unwrap(),
            kfold_split(100, 7, 43).unwrap()
        );
    }

    #[test]
    fn kfold_rejects_bad_counts() {
        assert!(matches!(
            kfold_split(5, 1, 0),
            Err(DatasetError::BadFoldCount { .. })
        ));
        assert!(matches!(
            kfold_split(5, 6, 0),
            Err(DatasetError::BadFoldCount { .. })
        ));
    }

    #[test]
    fn filter_continuous_and_categorical() {
        let d = small();
        let kept = filter_rows(&d, &Predicate::parse("LBD <= 6").unwrap()).unwrap();
        assert_eq!(kept.n_rows(), 2);
        let maple = filter_rows(&d, &Predicate::parse("Branching = Maple").unwrap()).unwrap();
        assert_eq!(maple.n_rows(), 2);
        assert_eq!(maple.categorical_codes("Branching").unwrap(), &[1, 1]);
    }

    #[test]
    fn filter_empty_result_is_error() {
        let d = small();
        assert_eq!(
            filter_rows(&d, &Predicate::parse("LBD > 1000").unwrap()),
            Err(DatasetError::EmptyResult)
        );
    }

    #[test]
    fn filter_unknown_column_is_error() {
        let d = small();
        assert_eq!(
            filter_rows(&d, &Predicate::parse("Nope > 1").unwrap()),
            Err(DatasetError::UnknownColumn("Nope".into()))
        );
    }

    #[test]
    fn filter_rejects_ordered_comparison_on_categorical() {
        let d = small();
        assert!(matches!(
            filter_rows(
                &d,
                &Predicate::new("Branching", CmpOp::Lt, ColumnValue::Cat("Maple".into()))
            ),
            Err(DatasetError::BadCategoricalComparison { .. })
        ));
    }

    proptest! {
        #[test]
        fn every_row_lands_in_exactly_one_fold(n in 2usize..200, k in 2usize..20, seed: u64) {
            prop_assume!(k <= n);
            let plan = kfold_split(n, k, seed).unwrap();
            prop_assert_eq!(plan.assignment.len(), n);
            let mut counts = vec![0usize; k];
            for &f in &plan.assignment {
                prop_assert!((f as usize) < k);
                counts[f as usize] += 1;
            }
            prop_assert_eq!(counts.iter().sum::<usize>(), n);
            let max = counts.iter().max().unwrap();
            let min = counts.iter().min().unwrap();
            prop_assert!(max - min <= 1);
        }

        #[test]
        fn encode_preserves_row_count_and_continuous_bits(vals in proptest::collection::vec(-1e6f64..1e6, 1..50)) {
            let schema = vec![
                ColumnSchema::continuous("x"),
                ColumnSchema::categorical("c", &["a", "b"]),
            ];
            let n = vals.len();
            let codes = (0..n).map(|i| (i % 2) as u32).collect();
            let d = Dataset::new(
                schema,
                vec![Column::Continuous(vals.clone()), Column::Categorical(codes)],
                "t",
            ).unwrap();
            let enc = encode_categoricals(&d);
            prop_assert_eq!(enc.n_rows(), n);
            let enc_x = enc.continuous("x").unwrap();
            for (a, b) in vals.iter().zip(enc_x) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
