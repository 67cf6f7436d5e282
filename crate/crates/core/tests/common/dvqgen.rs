//! Random DVQ strings for property tests. A query is built as parts and
//! rendered with random keyword casing, spacing and quote style, so two
//! renderings of the same parts differ only on the surface.
#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::Rng;

pub const CHARTS: [&str; 4] = ["BAR", "PIE", "LINE", "SCATTER"];
const COLUMNS: [&str; 7] = ["a", "b", "Dept_ID", "Fname", "JOB_ID", "weight", "SALARY"];
const TABLES: [&str; 3] = ["employees", "pets", "t"];
const AGGS: [&str; 5] = ["COUNT", "SUM", "AVG", "MIN", "MAX"];
const UNITS: [&str; 4] = ["YEAR", "MONTH", "WEEKDAY", "DAY"];
const OPS: [&str; 7] = ["=", "!=", "<>", "<", ">", "<=", ">="];
const WORDS: [&str; 5] = ["Finance", "it's", "Sales", "x", "Mid Level"];

#[derive(Debug, Clone, PartialEq)]
pub enum Lit {
    Num(i64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pred {
    Cmp(String, &'static str, Lit),
    Like(String, bool, String),
    Between(String, i64, i64),
    IsNull(String, bool),
    In(String, Vec<i64>),
    And(Box<Pred>, Box<Pred>),
    Or(Box<Pred>, Box<Pred>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub agg: Option<&'static str>,
    pub distinct: bool,
    pub column: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Part {
    Where(Pred),
    GroupBy(Vec<String>),
    OrderBy(Term, Option<&'static str>),
    Bin(String, &'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dvq {
    pub chart: &'static str,
    pub x: Term,
    pub y: Term,
    pub table: &'static str,
    /// `(table, left column, right column)` joined as `T1` / `T2`.
    pub join: Option<(&'static str, &'static str, &'static str)>,
    pub clauses: Vec<Part>,
}

fn column<R: Rng>(rng: &mut R, qualified: bool) -> String {
    let c = *COLUMNS.choose(rng).unwrap();
    if qualified && rng.random_bool(0.5) {
        format!("T{}.{c}", rng.random_range(1..=2))
    } else {
        c.to_string()
    }
}

fn term<R: Rng>(rng: &mut R, q: bool, agg_p: f64) -> Term {
    let agg = rng.random_bool(agg_p).then(|| *AGGS.choose(rng).unwrap());
    Term {
        agg,
        distinct: agg == Some("COUNT") && rng.random_bool(0.2),
        column: column(rng, q),
    }
}

fn lit<R: Rng>(rng: &mut R) -> Lit {
    if rng.random_bool(0.5) {
        Lit::Num(rng.random_range(-5..10_000))
    } else {
        Lit::Str(WORDS.choose(rng).unwrap().to_string())
    }
}

fn pred<R: Rng>(rng: &mut R, q: bool, depth: u32) -> Pred {
    match rng.random_range(0..if depth == 0 { 5 } else { 7 }) {
        0 => Pred::Cmp(column(rng, q), OPS.choose(rng).unwrap(), lit(rng)),
        1 => Pred::Like(column(rng, q), rng.random_bool(0.2), format!("%{}%", (b'A' + rng.random_range(0..26u8)) as char)),
        2 => {
            let lo = rng.random_range(0..100);
            Pred::Between(column(rng, q), lo, lo + rng.random_range(1..100))
        }
        3 => Pred::IsNull(column(rng, q), rng.random_bool(0.5)),
        4 => Pred::In(column(rng, q), (0..rng.random_range(1..4)).map(|_| rng.random_range(0..50)).collect()),
        5 => Pred::And(Box::new(pred(rng, q, depth - 1)), Box::new(pred(rng, q, depth - 1))),
        _ => Pred::Or(Box::new(pred(rng, q, depth - 1)), Box::new(pred(rng, q, depth - 1))),
    }
}

pub fn random_dvq<R: Rng>(rng: &mut R) -> Dvq {
    let join = rng.random_bool(0.25).then_some(("departments", "Dept_ID", "Dept_ID"));
    let q = join.is_some();
    let mut kinds = vec![0, 1, 2, 3];
    for i in (1..kinds.len()).rev() {
        kinds.swap(i, rng.random_range(0..=i));
    }
    let mut clauses = Vec::new();
    for k in kinds {
        if !rng.random_bool(0.45) {
            continue;
        }
        clauses.push(match k {
            0 => Part::Where(pred(rng, q, 2)),
            1 => Part::GroupBy((0..rng.random_range(1..3)).map(|_| column(rng, q)).collect()),
            2 => Part::OrderBy(term(rng, q, 0.3), *[None, Some("ASC"), Some("DESC")].choose(rng).unwrap()),
            _ => Part::Bin(column(rng, q), UNITS.choose(rng).unwrap()),
        });
    }
    Dvq {
        chart: CHARTS.choose(rng).unwrap(),
        x: term(rng, q, 0.1),
        y: term(rng, q, 0.5),
        table: TABLES.choose(rng).unwrap(),
        join,
        clauses,
    }
}

/// Surface variation applied while rendering.
#[derive(Debug, Clone, Copy)]
pub struct Surface {
    pub lower_keywords: bool,
    pub tight: bool,
    pub double_quotes: bool,
}

impl Surface {
    pub fn canonical() -> Self {
        Self {
            lower_keywords: false,
            tight: false,
            double_quotes: false,
        }
    }

    pub fn random<R: Rng>(rng: &mut R) -> Self {
        Self {
            lower_keywords: rng.random_bool(0.5),
            tight: rng.random_bool(0.5),
            double_quotes: rng.random_bool(0.3),
        }
    }
}

struct W(Surface);

impl W {
    fn kw(&self, k: &str) -> String {
        if self.0.lower_keywords {
            k.to_lowercase()
        } else {
            k.to_string()
        }
    }

    fn comma(&self) -> &'static str {
        if self.0.tight {
            ", "
        } else {
            " , "
        }
    }

    fn term(&self, t: &Term) -> String {
        match t.agg {
            None => t.column.clone(),
            Some(a) => {
                let inner = if t.distinct {
                    format!("{} {}", self.kw("DISTINCT"), t.column)
                } else {
                    t.column.clone()
                };
                format!("{}({inner})", self.kw(a))
            }
        }
    }

    fn lit(&self, l: &Lit) -> String {
        match l {
            Lit::Num(n) => n.to_string(),
            Lit::Str(s) if self.0.double_quotes && !s.contains('"') => format!("\"{s}\""),
            Lit::Str(s) => format!("'{}'", s.replace('\'', "''")),
        }
    }

    fn pred(&self, p: &Pred, top: bool) -> String {
        let not = |n: bool| if n { format!("{} ", self.kw("NOT")) } else { String::new() };
        match p {
            Pred::Cmp(c, op, l) => format!("{c} {op} {}", self.lit(l)),
            Pred::Like(c, n, pat) => format!("{c} {}{} '{pat}'", not(*n), self.kw("LIKE")),
            Pred::Between(c, lo, hi) => format!("{c} {} {lo} {} {hi}", self.kw("BETWEEN"), self.kw("AND")),
            Pred::IsNull(c, n) => format!("{c} {} {}{}", self.kw("IS"), not(*n), self.kw("NULL")),
            Pred::In(c, xs) => format!(
                "{c} {} ({})",
                self.kw("IN"),
                xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(self.comma())
            ),
            Pred::And(a, b) => format!("{} {} {}", self.pred(a, false), self.kw("AND"), self.pred(b, false)),
            Pred::Or(a, b) => {
                let s = format!("{} {} {}", self.pred(a, false), self.kw("OR"), self.pred(b, false));
                if top {
                    s
                } else {
                    format!("( {s} )")
                }
            }
        }
    }
}

pub fn render(d: &Dvq, surface: Surface) -> String {
    let w = W(surface);
    let mut s = format!(
        "{} {} {} {}{}{} {} {}",
        w.kw("Visualize"),
        d.chart,
        w.kw("SELECT"),
        w.term(&d.x),
        w.comma(),
        w.term(&d.y),
        w.kw("FROM"),
        d.table
    );
    if let Some((t2, l, r)) = d.join {
        s.push_str(&format!(
            " {} T1 {} {t2} {} T2 {} T1.{l} = T2.{r}",
            w.kw("AS"),
            w.kw("JOIN"),
            w.kw("AS"),
            w.kw("ON")
        ));
    }
    for c in &d.clauses {
        s.push(' ');
        s.push_str(&match c {
            Part::Where(p) => format!("{} {}", w.kw("WHERE"), w.pred(p, true)),
            Part::GroupBy(cols) => format!("{} {} {}", w.kw("GROUP"), w.kw("BY"), cols.join(w.comma())),
            Part::OrderBy(t, dir) => {
                let mut o = format!("{} {} {}", w.kw("ORDER"), w.kw("BY"), w.term(t));
                if let Some(d) = dir {
                    o.push(' ');
                    o.push_str(&w.kw(d));
                }
                o
            }
            Part::Bin(c, u) => format!("{} {c} {} {u}", w.kw("BIN"), w.kw("BY")),
        });
    }
    s
}

/// Which components a mutation is meant to disturb.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    None,
    Chart,
    Axis,
    Data,
    Garbage,
}

/// Returns a mutated copy, or `None` for garbage. A mutation may happen to be
/// a no-op (for example swapping equal axes); callers compare with an oracle
/// rather than trusting the label.
pub fn mutate<R: Rng>(rng: &mut R, d: &Dvq) -> (Mutation, Option<Dvq>) {
    let mut m = d.clone();
    let kind = match rng.random_range(0..10) {
        0..=1 => Mutation::None,
        2..=3 => Mutation::Chart,
        4..=5 => Mutation::Axis,
        6..=8 => Mutation::Data,
        _ => Mutation::Garbage,
    };
    match kind {
        Mutation::None => {}
        Mutation::Chart => m.chart = CHARTS.choose(rng).unwrap(),
        Mutation::Axis => {
            if rng.random_bool(0.5) {
                std::mem::swap(&mut m.x, &mut m.y);
            } else {
                m.y.column = COLUMNS.choose(rng).unwrap().to_string();
            }
        }
        Mutation::Data => {
            if !m.clauses.is_empty() && rng.random_bool(0.5) {
                let i = rng.random_range(0..m.clauses.len());
                m.clauses.remove(i);
            } else {
                m.table = TABLES.choose(rng).unwrap();
            }
        }
        Mutation::Garbage => return (kind, None),
    }
    (kind, Some(m))
}
