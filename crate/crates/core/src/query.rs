//! Causal query language: parsing, validation, execution, and the seven
//! built-in presets.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causal::{estimate_effect, refute_all, CausalError, EffectEstimate};
use crate::dag::Dag;
use crate::dataset::{
    columns, normalize_standard_score, ColumnKind, ColumnSchema, ColumnValue, Dataset,
    DatasetError, Predicate,
};
use crate::substream;

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("syntax error at position {position}: {message}")]
    SyntaxError { position: usize, message: String },
    #[error("{query} takes {expected} arguments, found {found}")]
    ArityError {
        query: String,
        expected: usize,
        found: usize,
    },
    #[error("query does not fit the schema: {0}")]
    Validation(String),
    #[error(transparent)]
    Causal(#[from] CausalError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// What a simple query conditions on, if anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum QueryKind {
    /// Unconditional average treatment effect.
    Ate,
    /// Effect within the rows satisfying a predicate.
    Cate(Predicate),
    /// Effect averaged over a conditioning variable, which is forced into
    /// the adjustment set.
    Acate(String),
}

/// One treatment-effect query: how does `outcome` respond when `treatment`
/// moves from `b` to `a`?
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub treatment: String,
    pub outcome: String,
    pub a: ColumnValue,
    pub b: ColumnValue,
    pub kind: QueryKind,
    /// Evaluate on standard-score-normalized data (used when effects of
    /// differently scaled variables must be compared).
    pub normalized: bool,
}

impl QuerySpec {
    pub fn ate(treatment: &str, outcome: &str, a: ColumnValue, b: ColumnValue) -> QuerySpec {
        QuerySpec {
            treatment: treatment.to_string(),
            outcome: outcome.to_string(),
            a,
            b,
            kind: QueryKind::Ate,
            normalized: false,
        }
    }

    pub fn cate(
        treatment: &str,
        outcome: &str,
        condition: Predicate,
        a: ColumnValue,
        b: ColumnValue,
    ) -> QuerySpec {
        QuerySpec {
            kind: QueryKind::Cate(condition),
            ..QuerySpec::ate(treatment, outcome, a, b)
        }
    }

    pub fn acate(
        treatment: &str,
        outcome: &str,
        condition_var: &str,
        a: ColumnValue,
        b: ColumnValue,
    ) -> QuerySpec {
        QuerySpec {
            kind: QueryKind::Acate(condition_var.to_string()),
            ..QuerySpec::ate(treatment, outcome, a, b)
        }
    }

    pub fn normalized(mut self, on: bool) -> QuerySpec {
        self.normalized = on;
        self
    }

    /// Query text that parses back to this value.
    pub fn render(&self) -> String {
        let core = match &self.kind {
            QueryKind::Ate => format!(
                "ATE({}, {}, {}, {})",
                self.treatment, self.outcome, self.a, self.b
            ),
            QueryKind::Cate(pred) => format!(
                "CATE({}, {}, {}, {}, {})",
                self.treatment, self.outcome, pred, self.a, self.b
            ),
            QueryKind::Acate(w) => format!(
                "ACATE({}, {}, {}, {}, {})",
                self.treatment, self.outcome, w, self.a, self.b
            ),
        };
        if self.normalized {
            format!("{core} normalized")
        } else {
            core
        }
    }
}

impl fmt::Display for QuerySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.render())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompareOp {
    Greater,
    Less,
}

/// Queries built out of several effect estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(clippy::large_enum_variant)]
pub enum CompositeQuery {
    /// `|left| <op> |right|`.
    Comparison {
        left: QuerySpec,
        right: QuerySpec,
        op: CompareOp,
    },
    /// The treatment with the largest absolute effect on `outcome`.
    Argmax {
        outcome: String,
        exclude: BTreeSet<String>,
        normalized: bool,
    },
    /// All pairwise contrasts of one categorical treatment.
    MultiContrast {
        treatment: String,
        outcome: String,
        contrasts: Vec<(String, String)>,
        normalized: bool,
    },
}

/// Any runnable query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Query {
    Simple(QuerySpec),
    Composite(CompositeQuery),
}

impl Query {
    pub fn render(&self) -> String {
        match self {
            Query::Simple(q) => q.render(),
            Query::Composite(CompositeQuery::Comparison { left, right, op }) => {
                let sym = match op {
                    CompareOp::Greater => ">",
                    CompareOp::Less => "<",
                };
                format!("COMPARE |{}| {} |{}|", left.render(), sym, right.render())
            }
            Query::Composite(CompositeQuery::Argmax {
                outcome,
                exclude,
                normalized,
            }) => {
                let mut s = format!("ARGMAX_ATE({outcome}");
                if !exclude.is_empty() {
                    let list: Vec<&str> = exclude.iter().map(String::as_str).collect();
                    s.push_str(&format!("; exclude={}", list.join(",")));
                }
                s.push(')');
                if *normalized {
                    s.push_str(" normalized");
                }
                s
            }
            Query::Composite(CompositeQuery::MultiContrast {
                treatment,
                outcome,
                contrasts,
                normalized,
            }) => {
                let parts: Vec<String> = contrasts
                    .iter()
                    .map(|(a, b)| format!("ATE({treatment}, {outcome}, {a}, {b})"))
                    .collect();
                let mut s = parts.join(" ; ");
                if *normalized {
                    s.push_str(" normalized");
                }
                s
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    LParen,
    RParen,
    Comma,
    Semi,
    Pipe,
    Op(String),
    Assign, // '=' inside exclude lists; also the equality predicate op
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, QueryError> {
    let bytes: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            ' ' | '\t' => i += 1,
            '(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            ')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            ',' => {
                toks.push((Tok::Comma, i));
                i += 1;
            }
            ';' => {
                toks.push((Tok::Semi, i));
                i += 1;
            }
            '|' => {
                toks.push((Tok::Pipe, i));
                i += 1;
            }
            '<' | '>' | '!' => {
                let two = i + 1 < bytes.len() && bytes[i + 1] == '=';
                let op: String = if two {
                    let s: String = bytes[i..=i + 1].iter().collect();
                    i += 2;
                    s
                } else {
                    if c == '!' {
                        return Err(QueryError::SyntaxError {
                            position: i,
                            message: "expected != ".trim().to_string(),
                        });
                    }
                    i += 1;
                    c.to_string()
                };
                toks.push((Tok::Op(op), i - 1));
            }
            '=' => {
                toks.push((Tok::Assign, i));
                i += 1;
            }
            c if c.is_ascii_digit()
                || (c == '-'
                    && i + 1 < bytes.len()
                    && (bytes[i + 1].is_ascii_digit() || bytes[i + 1] == '.'))
                || (c == '.' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit()) =>
            {
                let start = i;
                i += 1; // first char consumed (digit, '-', or '.')
                while i < bytes.len()
                    && (bytes[i].is_ascii_digit()
                        || bytes[i] == '.'
                        || bytes[i] == 'e'
                        || bytes[i] == 'E')
                {
                    // Allow a sign right after an exponent marker.
                    if (bytes[i] == 'e' || bytes[i] == 'E')
                        && i + 1 < bytes.len()
                        && (bytes[i + 1] == '+' || bytes[i + 1] == '-')
                    {
                        i += 1;
                    }
                    i += 1;
                }
                let s: String = bytes[start..i].iter().collect();
                let v: f64 = s.parse().map_err(|_| QueryError::SyntaxError {
                    position: start,
                    message: format!("bad number {s:?}"),
                })?;
                toks.push((Tok::Number(v), start));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_' || bytes[i] == '-')
                {
                    i += 1;
                }
                let s: String = bytes[start..i].iter().collect();
                toks.push((Tok::Ident(s), start));
            }
            other => {
                return Err(QueryError::SyntaxError {
                    position: i,
                    message: format!("unexpected character {other:?}"),
                })
            }
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    text_len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|(_, p)| *p)
            .unwrap_or(self.text_len)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, QueryError> {
        Err(QueryError::SyntaxError {
            position: self.here(),
            message: message.into(),
        })
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<(), QueryError> {
        if self.peek() == Some(want) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, QueryError> {
        match self.peek().cloned() {
            Some(Tok::Ident(s)) => {
                self.pos += 1;
                Ok(s)
            }
            _ => self.err(format!("expected {what}")),
        }
    }

    fn value(&mut self) -> Result<ColumnValue, QueryError> {
        match self.peek().cloned() {
            Some(Tok::Number(v)) => {
                self.pos += 1;
                Ok(ColumnValue::Num(v))
            }
            Some(Tok::Ident(s)) => {
                self.pos += 1;
                Ok(ColumnValue::Cat(s))
            }
            _ => self.err("expected a treatment value"),
        }
    }

    /// Comma-separated argument tokens inside parentheses, split eagerly so
    /// arity errors can be told apart from syntax errors.
    fn paren_args(&mut self) -> Result<Vec<Vec<(Tok, usize)>>, QueryError> {
        self.expect(&Tok::LParen, "'('")?;
        let mut groups: Vec<Vec<(Tok, usize)>> = vec![Vec::new()];
        let mut depth = 0usize;
        loop {
            match self.peek().cloned() {
                None => return self.err("unclosed '('"),
                Some(Tok::RParen) if depth == 0 => {
                    self.pos += 1;
                    break;
                }
                Some(tok) => {
                    if tok == Tok::LParen {
                        depth += 1;
                    }
                    if tok == Tok::RParen {
                        depth -= 1;
                    }
                    if tok == Tok::Comma && depth == 0 {
                        groups.push(Vec::new());
                        self.pos += 1;
                    } else {
                        let at = self.here();
                        groups.last_mut().unwrap().push((tok, at));
                        self.pos += 1;
                    }
                }
            }
        }
        if groups.len() == 1 && groups[0].is_empty() {
            groups.clear();
        }
        Ok(groups)
    }
}

fn group_to_value(group: &[(Tok, usize)], text_len: usize) -> Result<ColumnValue, QueryError> {
    let mut p = Parser {
        toks: group.to_vec(),
        pos: 0,
        text_len,
    };
    let v = p.value()?;
    if p.peek().is_some() {
        return p.err("trailing tokens in argument");
    }
    Ok(v)
}

fn group_to_ident(group: &[(Tok, usize)], text_len: usize) -> Result<String, QueryError> {
    let mut p = Parser {
        toks: group.to_vec(),
        pos: 0,
        text_len,
    };
    let s = p.ident("a variable name")?;
    if p.peek().is_some() {
        return p.err("trailing tokens in argument");
    }
    Ok(s)
}

fn group_to_predicate(group: &[(Tok, usize)], text_len: usize) -> Result<Predicate, QueryError> {
    let mut p = Parser {
        toks: group.to_vec(),
        pos: 0,
        text_len,
    };
    let column = p.ident("a column name")?;
    let op = match p.bump() {
        Some(Tok::Op(sym)) => match sym.as_str() {
            "<=" => crate::dataset::CmpOp::Le,
            "<" => crate::dataset::CmpOp::Lt,
            ">=" => crate::dataset::CmpOp::Ge,
            ">" => crate::dataset::CmpOp::Gt,
            "!=" => crate::dataset::CmpOp::Ne,
            _ => return p.err("expected a comparison operator"),
        },
        Some(Tok::Assign) => crate::dataset::CmpOp::Eq,
        _ => return p.err("expected a comparison operator"),
    };
    let value = p.value()?;
    if p.peek().is_some() {
        return p.err("trailing tokens in predicate");
    }
    Ok(Predicate { column, op, value })
}

/// Parses one query:
///
/// ```text
/// ATE(T, O, a, b)
/// CATE(T, O, LBD <= 6, a, b)
/// ACATE(T, O, W, a, b)
/// COMPARE |<query>| > |<query>|
/// ARGMAX_ATE(O; exclude=A,B)
/// ```
///
/// with an optional trailing `normalized` flag. Variable names are checked
/// against a schema at execution time, not here.
pub fn parse_query(text: &str) -> Result<Query, QueryError> {
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        text_len: text.len(),
    };
    let q = parse_inner(&mut p)?;
    // Optional trailing flag.
    let q = match p.peek().cloned() {
        Some(Tok::Ident(s)) if s == "normalized" => {
            p.pos += 1;
            set_normalized(q)
        }
        _ => q,
    };
    if p.peek().is_some() {
        return p.err("trailing input after query");
    }
    Ok(q)
}

/// Parses a query file: one query per line, `#` starting a comment, blank
/// lines ignored.
pub fn parse_query_file(text: &str) -> Result<Vec<Query>, QueryError> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push(parse_query(line)?);
    }
    Ok(out)
}

fn set_normalized(q: Query) -> Query {
    match q {
        Query::Simple(s) => Query::Simple(s.normalized(true)),
        Query::Composite(CompositeQuery::Comparison { left, right, op }) => {
            Query::Composite(CompositeQuery::Comparison {
                left: left.normalized(true),
                right: right.normalized(true),
                op,
            })
        }
        Query::Composite(CompositeQuery::Argmax {
            outcome, exclude, ..
        }) => Query::Composite(CompositeQuery::Argmax {
            outcome,
            exclude,
            normalized: true,
        }),
        Query::Composite(CompositeQuery::MultiContrast {
            treatment,
            outcome,
            contrasts,
            ..
        }) => Query::Composite(CompositeQuery::MultiContrast {
            treatment,
            outcome,
            contrasts,
            normalized: true,
        }),
    }
}

fn parse_inner(p: &mut Parser) -> Result<Query, QueryError> {
    let head = p.ident("a query keyword")?;
    match head.as_str() {
        "ATE" | "CATE" | "ACATE" => parse_simple(p, &head).map(Query::Simple),
        "COMPARE" => {
            p.expect(&Tok::Pipe, "'|'")?;
            let head = p.ident("a query keyword")?;
            let left = parse_simple(p, &head)?;
            p.expect(&Tok::Pipe, "'|'")?;
            let op = match p.bump() {
                Some(Tok::Op(sym)) if sym == ">" => CompareOp::Greater,
                Some(Tok::Op(sym)) if sym == "<" => CompareOp::Less,
                _ => return p.err("expected '<' or '>' between magnitudes"),
            };
            p.expect(&Tok::Pipe, "'|'")?;
            let head = p.ident("a query keyword")?;
            let right = parse_simple(p, &head)?;
            p.expect(&Tok::Pipe, "'|'")?;
            Ok(Query::Composite(CompositeQuery::Comparison {
                left,
                right,
                op,
            }))
        }
        "ARGMAX_ATE" => {
            p.expect(&Tok::LParen, "'('")?;
            let outcome = p.ident("the outcome variable")?;
            let mut exclude = BTreeSet::new();
            if p.peek() == Some(&Tok::Semi) {
                p.pos += 1;
                let kw = p.ident("'exclude'")?;
                if kw != "exclude" {
                    return p.err("expected 'exclude'");
                }
                p.expect(&Tok::Assign, "'='")?;
                loop {
                    exclude.insert(p.ident("a variable name")?);
                    if p.peek() == Some(&Tok::Comma) {
                        p.pos += 1;
                    } else {
                        break;
                    }
                }
            }
            p.expect(&Tok::RParen, "')'")?;
            Ok(Query::Composite(CompositeQuery::Argmax {
                outcome,
                exclude,
                normalized: false,
            }))
        }
        other => p.err(format!("unknown query keyword {other:?}")),
    }
}

fn parse_simple(p: &mut Parser, head: &str) -> Result<QuerySpec, QueryError> {
    let args = p.paren_args()?;
    let text_len = p.text_len;
    match head {
        "ATE" => {
            if args.len() != 4 {
                return Err(QueryError::ArityError {
                    query: "ATE".into(),
                    expected: 4,
                    found: args.len(),
                });
            }
            Ok(QuerySpec::ate(
                &group_to_ident(&args[0], text_len)?,
                &group_to_ident(&args[1], text_len)?,
                group_to_value(&args[2], text_len)?,
                group_to_value(&args[3], text_len)?,
            ))
        }
        "CATE" => {
            if args.len() != 5 {
                return Err(QueryError::ArityError {
                    query: "CATE".into(),
                    expected: 5,
                    found: args.len(),
                });
            }
            Ok(QuerySpec::cate(
                &group_to_ident(&args[0], text_len)?,
                &group_to_ident(&args[1], text_len)?,
                group_to_predicate(&args[2], text_len)?,
                group_to_value(&args[3], text_len)?,
                group_to_value(&args[4], text_len)?,
            ))
        }
        "ACATE" => {
            if args.len() != 5 {
                return Err(QueryError::ArityError {
                    query: "ACATE".into(),
                    expected: 5,
                    found: args.len(),
                });
            }
            Ok(QuerySpec::acate(
                &group_to_ident(&args[0], text_len)?,
                &group_to_ident(&args[1], text_len)?,
                &group_to_ident(&args[2], text_len)?,
                group_to_value(&args[3], text_len)?,
                group_to_value(&args[4], text_len)?,
            ))
        }
        _ => unreachable!(),
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

fn check_value(schema: &[ColumnSchema], column: &str, v: &ColumnValue) -> Result<(), QueryError> {
    let cs = schema
        .iter()
        .find(|c| c.name == column)
        .ok_or_else(|| QueryError::Validation(format!("unknown variable {column}")))?;
    match (&cs.kind, v) {
        (ColumnKind::Continuous, ColumnValue::Num(_)) => Ok(()),
        (ColumnKind::Categorical { categories }, ColumnValue::Cat(label)) => {
            if categories.contains(label) {
                Ok(())
            } else {
                Err(QueryError::Validation(format!(
                    "{label} is not a category of {column}"
                )))
            }
        }
        _ => Err(QueryError::Validation(format!(
            "value {v} has the wrong type for {column}"
        ))),
    }
}

fn check_column(schema: &[ColumnSchema], column: &str) -> Result<(), QueryError> {
    if schema.iter().any(|c| c.name == column) {
        Ok(())
    } else {
        Err(QueryError::Validation(format!("unknown variable {column}")))
    }
}

/// Checks a query against a schema: all variables exist and treatment
/// values fit their column types.
pub fn validate(q: &Query, schema: &[ColumnSchema]) -> Result<(), QueryError> {
    match q {
        Query::Simple(s) => validate_spec(s, schema),
        Query::Composite(CompositeQuery::Comparison { left, right, .. }) => {
            validate_spec(left, schema)?;
            validate_spec(right, schema)
        }
        Query::Composite(CompositeQuery::Argmax {
            outcome, exclude, ..
        }) => {
            check_column(schema, outcome)?;
            for e in exclude {
                check_column(schema, e)?;
            }
            Ok(())
        }
        Query::Composite(CompositeQuery::MultiContrast {
            treatment,
            outcome,
            contrasts,
            ..
        }) => {
            check_column(schema, outcome)?;
            for (a, b) in contrasts {
                check_value(schema, treatment, &ColumnValue::Cat(a.clone()))?;
                check_value(schema, treatment, &ColumnValue::Cat(b.clone()))?;
            }
            Ok(())
        }
    }
}

fn validate_spec(s: &QuerySpec, schema: &[ColumnSchema]) -> Result<(), QueryError> {
    check_value(schema, &s.treatment, &s.a)?;
    check_value(schema, &s.treatment, &s.b)?;
    check_column(schema, &s.outcome)?;
    match &s.kind {
        QueryKind::Ate => {}
        QueryKind::Cate(pred) => {
            check_column(schema, &pred.column)?;
        }
        QueryKind::Acate(w) => {
            check_column(schema, w)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

/// Runtime knobs for query execution.
#[derive(Debug, Clone, Copy)]
pub struct QueryOptions {
    pub refutation_runs: usize,
    pub seed: u64,
    /// Attach the three refutation tests to every reported estimate.
    pub with_refutations: bool,
}

impl Default for QueryOptions {
    fn default() -> Self {
        QueryOptions {
            refutation_runs: 100,
            seed: 0,
            with_refutations: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerStatus {
    Ok,
    /// At least one refutation test rejected an estimate.
    Failure,
}

/// One ranked row of an argmax answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTreatment {
    pub treatment: String,
    pub effect: f64,
    pub abs_effect: f64,
}

/// The result payload per query shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape")]
#[allow(clippy::large_enum_variant)]
pub enum AnswerBody {
    Single {
        estimate: EffectEstimate,
    },
    Comparison {
        left: EffectEstimate,
        right: EffectEstimate,
        /// Whether `|left| <op> |right|` held.
        holds: bool,
    },
    Argmax {
        ranking: Vec<RankedTreatment>,
        winner: String,
        winner_estimate: EffectEstimate,
    },
    MultiContrast {
        contrasts: Vec<EffectEstimate>,
        /// Categories best-to-worst when the pairwise signs are consistent.
        order: Option<Vec<String>>,
        intransitive: bool,
    },
}

/// A fully evaluated query with its human-readable reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub format_version: u32,
    pub query: String,
    pub status: AnswerStatus,
    pub interpretation: String,
    pub body: AnswerBody,
}

impl Answer {
    fn status_from(estimates: &[&EffectEstimate]) -> AnswerStatus {
        if estimates.iter().all(|e| e.all_refutations_passed()) {
            AnswerStatus::Ok
        } else {
            AnswerStatus::Failure
        }
    }
}

fn prepared_data(d: &Dataset, normalized: bool) -> Result<Dataset, QueryError> {
    if normalized {
        Ok(normalize_standard_score(d)?.0)
    } else {
        Ok(d.clone())
    }
}

fn run_spec(
    s: &QuerySpec,
    g: &Dag,
    d: &Dataset,
    opts: &QueryOptions,
    stream: u64,
) -> Result<EffectEstimate, QueryError> {
    let data = prepared_data(d, s.normalized)?;
    let mut e = estimate_effect(s, g, &data)?;
    if opts.with_refutations {
        refute_all(
            &mut e,
            g,
            &data,
            opts.refutation_runs,
            substream(opts.seed, stream),
        )?;
    }
    Ok(e)
}

/// Executes any query against a graph and dataset, attaching refutation
/// tests per `opts`. Failure status mirrors a rejected refutation.
pub fn run_query(
    q: &Query,
    g: &Dag,
    d: &Dataset,
    opts: &QueryOptions,
) -> Result<Answer, QueryError> {
    match q {
        Query::Simple(s) => {
            let estimate = run_spec(s, g, d, opts, 0)?;
            let interpretation = interpret_simple(s, &estimate);
            Ok(Answer {
                format_version: crate::FORMAT_VERSION,
                query: q.render(),
                status: Answer::status_from(&[&estimate]),
                interpretation,
                body: AnswerBody::Single { estimate },
            })
        }
        Query::Composite(CompositeQuery::Comparison { left, right, op }) => {
            let le = run_spec(left, g, d, opts, 0)?;
            let re = run_spec(right, g, d, opts, 1)?;
            let holds = match op {
                CompareOp::Greater => le.value.abs() > re.value.abs(),
                CompareOp::Less => le.value.abs() < re.value.abs(),
            };
            let bigger = if le.value.abs() >= re.value.abs() {
                &left.treatment
            } else {
                &right.treatment
            };
            let interpretation = format!(
                "|{}| = {:.4} vs |{}| = {:.4}: {} has the larger effect on {}.",
                left.treatment,
                le.value.abs(),
                right.treatment,
                re.value.abs(),
                bigger,
                left.outcome,
            );
            Ok(Answer {
                format_version: crate::FORMAT_VERSION,
                query: q.render(),
                status: Answer::status_from(&[&le, &re]),
                interpretation,
                body: AnswerBody::Comparison {
                    left: le,
                    right: re,
                    holds,
                },
            })
        }
        Query::Composite(CompositeQuery::Argmax {
            outcome,
            exclude,
            normalized,
        }) => run_argmax(q, g, d, opts, outcome, exclude, *normalized),
        Query::Composite(CompositeQuery::MultiContrast {
            treatment,
            outcome,
            contrasts,
            normalized,
        }) => run_multi_contrast(q, g, d, opts, treatment, outcome, contrasts, *normalized),
    }
}

/// Ranks every candidate treatment by absolute effect on the outcome.
///
/// Continuous candidates use the per-unit effect (values 2 and 1).
/// Categorical candidates are ranked by their largest absolute pairwise
/// dummy contrast. Refutations are attached to the winner's estimate only;
/// the ranking itself reports point estimates.
fn run_argmax(
    q: &Query,
    g: &Dag,
    d: &Dataset,
    opts: &QueryOptions,
    outcome: &str,
    exclude: &BTreeSet<String>,
    normalized: bool,
) -> Result<Answer, QueryError> {
    let data = prepared_data(d, normalized)?;
    let mut ranking = Vec::new();
    let mut specs: Vec<(String, QuerySpec)> = Vec::new();
    for name in g.node_names() {
        if name == outcome || exclude.contains(name) {
            continue;
        }
        let cs = d.column_schema(name)?;
        let spec = match &cs.kind {
            ColumnKind::Continuous => {
                QuerySpec::ate(name, outcome, ColumnValue::Num(2.0), ColumnValue::Num(1.0))
                    .normalized(normalized)
            }
            ColumnKind::Categorical { categories } => {
                // Best pairwise contrast stands in for the per-unit effect.
                let mut best: Option<(f64, QuerySpec)> = None;
                for i in 0..categories.len() {
                    for j in (i + 1)..categories.len() {
                        let spec = QuerySpec::ate(
                            name,
                            outcome,
                            ColumnValue::Cat(categories[j].clone()),
                            ColumnValue::Cat(categories[i].clone()),
                        )
                        .normalized(normalized);
                        let e = estimate_effect(&spec, g, &data)?;
                        if best
                            .as_ref()
                            .map(|(v, _)| e.value.abs() > *v)
                            .unwrap_or(true)
                        {
                            best = Some((e.value.abs(), spec));
                        }
                    }
                }
                best.expect("categorical columns list >= 2 categories").1
            }
        };
        let e = estimate_effect(&spec, g, &data)?;
        ranking.push(RankedTreatment {
            treatment: name.clone(),
            effect: e.value,
            abs_effect: e.value.abs(),
        });
        specs.push((name.clone(), spec));
    }
    // Sort by magnitude, names as a deterministic tie-break; sorting keys
    // are derived per-candidate, so the result is independent of the
    // candidate enumeration order.
    ranking.sort_by(|a, b| {
        b.abs_effect
            .partial_cmp(&a.abs_effect)
            .unwrap()
            .then_with(|| a.treatment.cmp(&b.treatment))
    });
    let winner = ranking
        .first()
        .expect("at least one candidate")
        .treatment
        .clone();
    let winner_spec = &specs.iter().find(|(n, _)| *n == winner).unwrap().1;
    let winner_estimate = run_spec(winner_spec, g, d, opts, 2)?;
    let interpretation = format!(
        "{winner} has the greatest absolute effect on {outcome} ({:.4}).",
        ranking[0].abs_effect
    );
    Ok(Answer {
        format_version: crate::FORMAT_VERSION,
        query: q.render(),
        status: Answer::status_from(&[&winner_estimate]),
        interpretation,
        body: AnswerBody::Argmax {
            ranking,
            winner,
            winner_estimate,
        },
    })
}

#[allow(clippy::too_many_arguments)]
fn run_multi_contrast(
    q: &Query,
    g: &Dag,
    d: &Dataset,
    opts: &QueryOptions,
    treatment: &str,
    outcome: &str,
    contrasts: &[(String, String)],
    normalized: bool,
) -> Result<Answer, QueryError> {
    let mut estimates = Vec::new();
    for (i, (a, b)) in contrasts.iter().enumerate() {
        let spec = QuerySpec::ate(
            treatment,
            outcome,
            ColumnValue::Cat(a.clone()),
            ColumnValue::Cat(b.clone()),
        )
        .normalized(normalized);
        estimates.push(run_spec(&spec, g, d, opts, 10 + i as u64)?);
    }

    // Order categories by pairwise wins; flag inconsistency when any
    // measured contrast disagrees with the derived order.
    let mut cats: Vec<String> = Vec::new();
    for (a, b) in contrasts {
        for c in [a, b] {
            if !cats.contains(c) {
                cats.push(c.clone());
            }
        }
    }
    let mut wins: Vec<(String, usize)> = cats.iter().map(|c| (c.clone(), 0)).collect();
    for ((a, b), e) in contrasts.iter().zip(&estimates) {
        let winner = if e.value > 0.0 { a } else { b };
        if e.value != 0.0 {
            wins.iter_mut().find(|(c, _)| c == winner).unwrap().1 += 1;
        }
    }
    wins.sort_by(|x, y| y.1.cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
    let order: Vec<String> = wins.iter().map(|(c, _)| c.clone()).collect();
    let position = |c: &str| order.iter().position(|o| o == c).unwrap();
    let mut intransitive = false;
    for ((a, b), e) in contrasts.iter().zip(&estimates) {
        let consistent = if e.value > 0.0 {
            position(a) < position(b)
        } else if e.value < 0.0 {
            position(b) < position(a)
        } else {
            false
        };
        if !consistent {
            intransitive = true;
        }
    }
    let interpretation = if intransitive {
        format!("Pairwise contrasts of {treatment} on {outcome} do not form a consistent order.")
    } else {
        format!(
            "{} leads to the greatest {outcome}; full order: {}.",
            order[0],
            order.join(" > ")
        )
    };
    let refs: Vec<&EffectEstimate> = estimates.iter().collect();
    Ok(Answer {
        format_version: crate::FORMAT_VERSION,
        query: q.render(),
        status: Answer::status_from(&refs),
        interpretation,
        body: AnswerBody::MultiContrast {
            contrasts: estimates,
            order: if intransitive { None } else { Some(order) },
            intransitive,
        },
    })
}

fn interpret_simple(s: &QuerySpec, e: &EffectEstimate) -> String {
    let direction = |v: f64, positive: &str, negative: &str, zero: &str| {
        if v > 0.0 {
            positive.to_string()
        } else if v < 0.0 {
            negative.to_string()
        } else {
            zero.to_string()
        }
    };
    match (&s.a, &s.b) {
        (ColumnValue::Cat(a), ColumnValue::Cat(b)) => direction(
            e.value,
            &format!(
                "{a} leads to greater {} than {b} ({:+.4}).",
                s.outcome, e.value
            ),
            &format!(
                "{b} leads to greater {} than {a} ({:+.4}).",
                s.outcome, e.value
            ),
            &format!(
                "{a} and {b} do not differ in their effect on {}.",
                s.outcome
            ),
        ),
        _ => {
            let qualifier = match &s.kind {
                QueryKind::Ate => String::new(),
                QueryKind::Cate(pred) => format!(" given {pred}"),
                QueryKind::Acate(w) => format!(" at any fixed {w}"),
            };
            direction(
                e.value,
                &format!(
                    "Raising {} increases {}{} ({:+.4}).",
                    s.treatment, s.outcome, qualifier, e.value
                ),
                &format!(
                    "Raising {} decreases {}{} ({:+.4}).",
                    s.treatment, s.outcome, qualifier, e.value
                ),
                &format!(
                    "{} has no effect on {}{}.",
                    s.treatment, s.outcome, qualifier
                ),
            )
        }
    }
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// A named built-in question with the queries that answer it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub question: String,
    pub parts: Vec<Query>,
}

/// A preset evaluated end to end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetAnswer {
    pub name: String,
    pub question: String,
    pub status: AnswerStatus,
    pub verdict: String,
    pub answers: Vec<Answer>,
}

/// The seven built-in questions about clause utility.
///
/// Magnitude comparisons (Q4, Q5) run on normalized data so differently
/// scaled variables compare fairly; the single-variable questions run on
/// raw data for interpretability.
pub fn preset_queries() -> Vec<Preset> {
    use columns::*;
    let num = ColumnValue::Num;
    let cat = |s: &str| ColumnValue::Cat(s.to_string());
    let preset = |name: &str, question: &str, parts: Vec<Query>| Preset {
        name: name.to_string(),
        question: question.to_string(),
        parts,
    };
    vec![
        preset(
            "Q1",
            "Which clause, with low or high LBD, has greater utility?",
            vec![Query::Simple(QuerySpec::ate(LBD, UTILITY, num(2.0), num(1.0)))],
        ),
        preset(
            "Q2",
            "Which type of clause, large or small, has greater utility? What if the LBD is fixed?",
            vec![
                Query::Simple(QuerySpec::ate(SIZE, UTILITY, num(2.0), num(1.0))),
                Query::Simple(QuerySpec::acate(SIZE, UTILITY, LBD, num(2.0), num(1.0))),
            ],
        ),
        preset(
            "Q3",
            "Which clause, with low or high LBD, experiences a rapid drop in utility over time?",
            vec![
                Query::Simple(QuerySpec::cate(
                    TIME,
                    UTILITY,
                    Predicate::parse("LBD <= 6").unwrap(),
                    num(10_000.0),
                    num(0.0),
                )),
                Query::Simple(QuerySpec::cate(
                    TIME,
                    UTILITY,
                    Predicate::parse("LBD > 6").unwrap(),
                    num(10_000.0),
                    num(0.0),
                )),
            ],
        ),
        preset(
            "Q4",
            "Which factor, size or LBD, has a greater impact on clause utility?",
            vec![Query::Composite(CompositeQuery::Comparison {
                left: QuerySpec::ate(SIZE, UTILITY, num(2.0), num(1.0)).normalized(true),
                right: QuerySpec::ate(LBD, UTILITY, num(2.0), num(1.0)).normalized(true),
                op: CompareOp::Greater,
            })],
        ),
        preset(
            "Q5",
            "Which factor has the greatest impact on clause utility?",
            vec![Query::Composite(CompositeQuery::Argmax {
                outcome: UTILITY.to_string(),
                exclude: [UTILITY.to_string()].into(),
                normalized: true,
            })],
        ),
        preset(
            "Q6",
            "Which branching heuristic, VSIDS or Maple, results in a greater clause utility?",
            vec![Query::Simple(QuerySpec::ate(
                BRANCHING,
                UTILITY,
                cat("Maple"),
                cat("VSIDS"),
            ))],
        ),
        preset(
            "Q7",
            "Which restart heuristic, Geometric, LBD-based, or Luby, results in the greatest clause utility?",
            vec![Query::Composite(CompositeQuery::MultiContrast {
                treatment: RESTART.to_string(),
                outcome: UTILITY.to_string(),
                contrasts: vec![
                    ("Luby".to_string(), "Geometric".to_string()),
                    ("Luby".to_string(), "LBD-based".to_string()),
                    ("Geometric".to_string(), "LBD-based".to_string()),
                ],
                normalized: false,
            })],
        ),
    ]
}

/// Runs every part of a preset and combines the verdict.
pub fn run_preset(
    preset: &Preset,
    g: &Dag,
    d: &Dataset,
    opts: &QueryOptions,
) -> Result<PresetAnswer, QueryError> {
    let mut answers = Vec::new();
    for (i, part) in preset.parts.iter().enumerate() {
        let part_opts = QueryOptions {
            seed: substream(opts.seed, 7000 + i as u64),
            ..*opts
        };
        answers.push(run_query(part, g, d, &part_opts)?);
    }
    let status = if answers.iter().all(|a| a.status == AnswerStatus::Ok) {
        AnswerStatus::Ok
    } else {
        AnswerStatus::Failure
    };
    let verdict = preset_verdict(&preset.name, &answers);
    Ok(PresetAnswer {
        name: preset.name.clone(),
        question: preset.question.clone(),
        status,
        verdict,
        answers,
    })
}

/// Preset-level readings that need more than one part.
fn preset_verdict(name: &str, answers: &[Answer]) -> String {
    let single_value = |a: &Answer| match &a.body {
        AnswerBody::Single { estimate } => estimate.value,
        _ => f64::NAN,
    };
    match name {
        "Q3" if answers.len() == 2 => {
            let low = single_value(&answers[0]);
            let high = single_value(&answers[1]);
            if low >= 0.0 && high < 0.0 {
                format!(
                    "High-LBD clauses lose utility over time ({high:+.4}) while low-LBD \
                     clauses do not ({low:+.4}): the rapid-drop hypothesis holds."
                )
            } else {
                format!(
                    "Time effect is {low:+.4} for low-LBD and {high:+.4} for high-LBD \
                     clauses: the rapid-drop hypothesis does not hold."
                )
            }
        }
        _ => answers
            .iter()
            .map(|a| a.interpretation.clone())
            .collect::<Vec<_>>()
            .join(" "),
    }
}
