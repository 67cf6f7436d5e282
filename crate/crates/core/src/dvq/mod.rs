//! Data visualization queries (DVQs).
//!
//! A DVQ looks like SQL with a chart prefix:
//!
//! ```text
//! Visualize BAR SELECT Fname , Dept_ID FROM employees ORDER BY Dept_ID DESC
//! ```
//!
//! The grammar covers exactly two select terms, a `FROM` source with optional
//! `JOIN ... ON` chains, and the optional `WHERE`, `GROUP BY`, `ORDER BY` and
//! `BIN <col> BY <unit>` clauses. Keywords are case-insensitive and spacing is
//! irrelevant. Constructs outside the grammar are rejected.
//!
//! [`render_canonical`] emits the canonical surface form; [`canonical_equal`]
//! is the exact-match test used by the evaluator, which compares identifiers
//! case-insensitively and string literals case-sensitively.

mod lexer;
mod parser;
mod render;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use render::{decompose, decompose_with, render_canonical, render_with, Style};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DvqError {
    #[error("empty DVQ")]
    Empty,
    #[error("unknown chart type {token:?} at byte {offset}")]
    UnknownChartType { token: String, offset: usize },
    #[error("malformed clause at byte {offset}: {message}")]
    MalformedClause { offset: usize, message: String },
    #[error("unbalanced parenthesis at byte {offset}")]
    UnbalancedParens { offset: usize },
    #[error("alias {alias:?} at byte {offset} is not declared in FROM/JOIN")]
    DanglingAlias { alias: String, offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ChartType {
    Bar,
    Pie,
    Line,
    Scatter,
}

impl ChartType {
    pub const ALL: [ChartType; 4] = [
        ChartType::Bar,
        ChartType::Pie,
        ChartType::Line,
        ChartType::Scatter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChartType::Bar => "BAR",
            ChartType::Pie => "PIE",
            ChartType::Line => "LINE",
            ChartType::Scatter => "SCATTER",
        }
    }

    /// Case-insensitive lookup of a chart token.
    pub fn from_token(token: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(token))
    }
}

impl fmt::Display for ChartType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregate {
    Count,
    Sum,
    Avg,
    Min,
    Max,
}

impl Aggregate {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregate::Count => "COUNT",
            Aggregate::Sum => "SUM",
            Aggregate::Avg => "AVG",
            Aggregate::Min => "MIN",
            Aggregate::Max => "MAX",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        [
            Aggregate::Count,
            Aggregate::Sum,
            Aggregate::Avg,
            Aggregate::Min,
            Aggregate::Max,
        ]
        .into_iter()
        .find(|a| a.as_str().eq_ignore_ascii_case(token))
    }
}

/// A possibly alias-qualified column, e.g. `T1.Dept_ID`. The name `*` only
/// appears inside `COUNT`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ColumnRef {
    pub qualifier: Option<String>,
    pub name: String,
}

impl ColumnRef {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            qualifier: None,
            name: name.into(),
        }
    }

    pub fn is_star(&self) -> bool {
        self.name == "*"
    }
}

/// One SELECT term: a column, optionally wrapped in an aggregate.
/// `distinct` is only ever set together with `COUNT`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AxisTerm {
    pub column: ColumnRef,
    pub aggregate: Option<Aggregate>,
    pub distinct: bool,
}

impl AxisTerm {
    pub fn column(column: ColumnRef) -> Self {
        Self {
            column,
            aggregate: None,
            distinct: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableRef {
    pub name: String,
    pub alias: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Join {
    pub table: TableRef,
    pub on: (ColumnRef, ColumnRef),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Source {
    pub table: TableRef,
    pub joins: Vec<Join>,
}

impl Source {
    /// Every name a column qualifier may legally refer to: table names and aliases.
    pub fn declared_names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(&self.table)
            .chain(self.joins.iter().map(|j| &j.table))
            .flat_map(|t| std::iter::once(t.name.as_str()).chain(t.alias.as_deref()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareOp {
    Eq,
    NotEq,
    /// `<>`, kept apart from `!=` because the two are distinct surface styles.
    LtGt,
    Lt,
    Gt,
    LtEq,
    GtEq,
}

impl CompareOp {
    pub fn as_str(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::NotEq => "!=",
            CompareOp::LtGt => "<>",
            CompareOp::Lt => "<",
            CompareOp::Gt => ">",
            CompareOp::LtEq => "<=",
            CompareOp::GtEq => ">=",
        }
    }

    fn from_symbol(symbol: &str) -> Option<Self> {
        Some(match symbol {
            "=" => CompareOp::Eq,
            "!=" => CompareOp::NotEq,
            "<>" => CompareOp::LtGt,
            "<" => CompareOp::Lt,
            ">" => CompareOp::Gt,
            "<=" => CompareOp::LtEq,
            ">=" => CompareOp::GtEq,
            _ => return None,
        })
    }
}

/// Nested `SELECT` used on the right-hand side of a predicate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubQuery {
    pub items: Vec<AxisTerm>,
    pub source: Source,
    pub filter: Option<Predicate>,
    pub group_by: Vec<ColumnRef>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    Term(AxisTerm),
    Number(String),
    Str(String),
    Subquery(Box<SubQuery>),
    List(Vec<Operand>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Predicate {
    Compare {
        left: Operand,
        op: CompareOp,
        right: Operand,
    },
    Like {
        expr: Operand,
        negated: bool,
        pattern: Operand,
    },
    In {
        expr: Operand,
        negated: bool,
        set: Operand,
    },
    Between {
        expr: Operand,
        negated: bool,
        low: Operand,
        high: Operand,
    },
    IsNull {
        expr: Operand,
        negated: bool,
    },
    Not(Box<Predicate>),
    And(Box<Predicate>, Box<Predicate>),
    Or(Box<Predicate>, Box<Predicate>),
    Paren(Box<Predicate>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortDirection {
    Asc,
    Desc,
}

impl SortDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            SortDirection::Asc => "ASC",
            SortDirection::Desc => "DESC",
        }
    }
}

/// The ORDER BY target is kept as written; it is never resolved to an axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderBy {
    pub target: AxisTerm,
    pub direction: Option<SortDirection>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bin {
    pub column: ColumnRef,
    /// Opaque unit token, stored upper-cased.
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Clause {
    Where(Predicate),
    GroupBy(Vec<ColumnRef>),
    OrderBy(OrderBy),
    Bin(Bin),
}

/// A parsed DVQ. Trailing clauses are kept in source order, each kind at most once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DvqQuery {
    pub chart: ChartType,
    pub x: AxisTerm,
    pub y: AxisTerm,
    pub source: Source,
    pub clauses: Vec<Clause>,
}

impl DvqQuery {
    pub fn where_clause(&self) -> Option<&Predicate> {
        self.clauses.iter().find_map(|c| match c {
            Clause::Where(p) => Some(p),
            _ => None,
        })
    }

    pub fn group_by(&self) -> Option<&[ColumnRef]> {
        self.clauses.iter().find_map(|c| match c {
            Clause::GroupBy(cols) => Some(cols.as_slice()),
            _ => None,
        })
    }

    pub fn order_by(&self) -> Option<&OrderBy> {
        self.clauses.iter().find_map(|c| match c {
            Clause::OrderBy(o) => Some(o),
            _ => None,
        })
    }

    pub fn bin(&self) -> Option<&Bin> {
        self.clauses.iter().find_map(|c| match c {
            Clause::Bin(b) => Some(b),
            _ => None,
        })
    }
}

/// The three evaluation components of a DVQ, as canonical text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DvqComponents {
    pub vis: String,
    pub axes: String,
    pub data: String,
}

impl DvqComponents {
    /// Reassembles the full query text; equals the canonical render of the source query.
    pub fn reassemble(&self) -> String {
        let mut out = format!("Visualize {} SELECT {}", self.vis, self.axes);
        if !self.data.is_empty() {
            out.push(' ');
            out.push_str(&self.data);
        }
        out
    }
}

pub fn parse_dvq(text: &str) -> Result<DvqQuery, DvqError> {
    parser::parse(text)
}

/// Exact-match comparison of two DVQ strings. A side that fails to parse makes
/// the result `false`; use [`try_canonical_equal`] to see the parse error.
pub fn canonical_equal(a: &str, b: &str) -> bool {
    match try_canonical_equal(a, b) {
        Ok(equal) => equal,
        Err(err) => {
            tracing::debug!(%err, "DVQ comparison failed to parse");
            false
        }
    }
}

pub fn try_canonical_equal(a: &str, b: &str) -> Result<bool, DvqError> {
    let qa = parse_dvq(a)?;
    let qb = parse_dvq(b)?;
    Ok(render_with(&qa, Style::Comparison) == render_with(&qb, Style::Comparison))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TABLE5_TARGET: &str =
        "Visualize BAR SELECT Fname, Dept_ID FROM employees ORDER BY Dept_ID DESC";
    const TABLE5_RGVISNET: &str = "Visualize BAR SELECT FIRST_NAME , DEPARTMENT_ID FROM employees ORDER BY DEPARTMENT_ID DESC";

    #[test]
    fn table5_target_parses() {
        let q = parse_dvq(TABLE5_TARGET).unwrap();
        assert_eq!(q.chart, ChartType::Bar);
        assert_eq!(q.x, AxisTerm::column(ColumnRef::new("Fname")));
        assert_eq!(q.y, AxisTerm::column(ColumnRef::new("Dept_ID")));
        let order = q.order_by().unwrap();
        assert_eq!(order.target, AxisTerm::column(ColumnRef::new("Dept_ID")));
        assert_eq!(order.direction, Some(SortDirection::Desc));
        assert!(q.where_clause().is_none());
    }

    #[test]
    fn where_comparison() {
        let q = parse_dvq(
            "Visualize BAR SELECT PetID , weight FROM pets WHERE pet_age > 1 ORDER BY weight DESC",
        )
        .unwrap();
        assert_eq!(
            q.where_clause(),
            Some(&Predicate::Compare {
                left: Operand::Term(AxisTerm::column(ColumnRef::new("pet_age"))),
                op: CompareOp::Gt,
                right: Operand::Number("1".into()),
            })
        );
    }

    #[test]
    fn minimal_query_has_no_clauses() {
        let q = parse_dvq("Visualize PIE SELECT a , b FROM t").unwrap();
        assert_eq!(q.chart, ChartType::Pie);
        assert!(q.clauses.is_empty());
        assert!(q.source.joins.is_empty());
    }

    #[test]
    fn unknown_chart_type() {
        assert_eq!(
            parse_dvq("Visualize HISTOGRAM SELECT a , b FROM t").unwrap_err(),
            DvqError::UnknownChartType {
                token: "HISTOGRAM".into(),
                offset: 10
            }
        );
    }

    #[test]
    fn chart_tokens_are_case_insensitive() {
        for token in ["bar", "Pie", "LINE", "sCaTtEr"] {
            let q = parse_dvq(&format!("Visualize {token} SELECT a , b FROM t")).unwrap();
            assert!(q.chart.as_str().eq_ignore_ascii_case(token));
        }
    }

    #[test]
    fn canonical_equal_cases() {
        assert!(canonical_equal(TABLE5_TARGET, TABLE5_TARGET));
        assert!(!canonical_equal(TABLE5_TARGET, TABLE5_RGVISNET));
        assert!(!canonical_equal(
            "Visualize BAR SELECT a , b FROM t WHERE x = 'Finance'",
            "Visualize BAR SELECT a , b FROM t WHERE x = 'finance'"
        ));
        assert!(canonical_equal(
            "visualize bar select FNAME , dept_id from EMPLOYEES order by DEPT_ID desc",
            TABLE5_TARGET
        ));
        assert!(!canonical_equal("garbage", TABLE5_TARGET));
        assert!(try_canonical_equal("garbage", TABLE5_TARGET).is_err());
    }

    #[test]
    fn double_quoted_literal_equals_single_quoted() {
        assert!(canonical_equal(
            "Visualize BAR SELECT a , b FROM t WHERE c != \"null\"",
            "Visualize BAR SELECT a , b FROM t WHERE c != 'null'"
        ));
    }

    #[test]
    fn is_not_null_differs_from_null_literal() {
        assert!(!canonical_equal(
            "Visualize BAR SELECT a , b FROM t WHERE c IS NOT NULL",
            "Visualize BAR SELECT a , b FROM t WHERE c != 'null'"
        ));
    }
}
