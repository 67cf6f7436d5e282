use super::{
    AxisTerm, Clause, ColumnRef, DvqComponents, DvqQuery, Operand, Predicate, Source, SubQuery,
    TableRef,
};

/// How identifiers are emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    /// Identifiers verbatim, as written.
    Display,
    /// Identifiers lower-cased; the key used for exact-match comparison.
    Comparison,
}

struct Writer {
    style: Style,
    out: String,
}

impl Writer {
    fn new(style: Style) -> Self {
        Self {
            style,
            out: String::new(),
        }
    }

    fn push(&mut self, s: &str) {
        self.out.push_str(s);
    }

    fn ident(&mut self, s: &str) {
        match self.style {
            Style::Display => self.out.push_str(s),
            Style::Comparison => self.out.push_str(&s.to_lowercase()),
        }
    }

    fn column(&mut self, c: &ColumnRef) {
        if let Some(q) = &c.qualifier {
            self.ident(q);
            self.push(".");
        }
        self.ident(&c.name);
    }

    fn term(&mut self, t: &AxisTerm) {
        match t.aggregate {
            Some(agg) => {
                self.push(agg.as_str());
                self.push("(");
                if t.distinct {
                    self.push("DISTINCT ");
                }
                self.column(&t.column);
                self.push(")");
            }
            None => self.column(&t.column),
        }
    }

    fn table(&mut self, t: &TableRef) {
        self.ident(&t.name);
        if let Some(alias) = &t.alias {
            self.push(" AS ");
            self.ident(alias);
        }
    }

    fn source(&mut self, s: &Source) {
        self.push("FROM ");
        self.table(&s.table);
        for join in &s.joins {
            self.push(" JOIN ");
            self.table(&join.table);
            self.push(" ON ");
            self.column(&join.on.0);
            self.push(" = ");
            self.column(&join.on.1);
        }
    }

    fn literal(&mut self, s: &str) {
        self.push("'");
        self.push(&s.replace('\'', "''"));
        self.push("'");
    }

    fn operand(&mut self, o: &Operand) {
        match o {
            Operand::Term(t) => self.term(t),
            Operand::Number(n) => self.push(n),
            Operand::Str(s) => self.literal(s),
            Operand::Subquery(sub) => {
                self.push("(");
                self.subquery(sub);
                self.push(")");
            }
            Operand::List(items) => {
                self.push("(");
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        self.push(" , ");
                    }
                    self.operand(item);
                }
                self.push(")");
            }
        }
    }

    fn subquery(&mut self, sub: &SubQuery) {
        self.push("SELECT ");
        for (i, item) in sub.items.iter().enumerate() {
            if i > 0 {
                self.push(" , ");
            }
            self.term(item);
        }
        self.push(" ");
        self.source(&sub.source);
        if let Some(filter) = &sub.filter {
            self.push(" WHERE ");
            self.predicate(filter);
        }
        if !sub.group_by.is_empty() {
            self.push(" GROUP BY ");
            self.columns(&sub.group_by);
        }
    }

    fn columns(&mut self, cols: &[ColumnRef]) {
        for (i, c) in cols.iter().enumerate() {
            if i > 0 {
                self.push(" , ");
            }
            self.column(c);
        }
    }

    fn negation(&mut self, negated: bool) {
        if negated {
            self.push("NOT ");
        }
    }

    fn predicate(&mut self, p: &Predicate) {
        match p {
            Predicate::Compare { left, op, right } => {
                self.operand(left);
                self.push(" ");
                self.push(op.as_str());
                self.push(" ");
                self.operand(right);
            }
            Predicate::Like {
                expr,
                negated,
                pattern,
            } => {
                self.operand(expr);
                self.push(" ");
                self.negation(*negated);
                self.push("LIKE ");
                self.operand(pattern);
            }
            Predicate::In { expr, negated, set } => {
                self.operand(expr);
                self.push(" ");
                self.negation(*negated);
                self.push("IN ");
                self.operand(set);
            }
            Predicate::Between {
                expr,
                negated,
                low,
                high,
            } => {
                self.operand(expr);
                self.push(" ");
                self.negation(*negated);
                self.push("BETWEEN ");
                self.operand(low);
                self.push(" AND ");
                self.operand(high);
            }
            Predicate::IsNull { expr, negated } => {
                self.operand(expr);
                self.push(" IS ");
                self.negation(*negated);
                self.push("NULL");
            }
            Predicate::Not(inner) => {
                self.push("NOT ");
                self.predicate(inner);
            }
            Predicate::And(l, r) => {
                self.predicate(l);
                self.push(" AND ");
                self.predicate(r);
            }
            Predicate::Or(l, r) => {
                self.predicate(l);
                self.push(" OR ");
                self.predicate(r);
            }
            Predicate::Paren(inner) => {
                self.push("(");
                self.predicate(inner);
                self.push(")");
            }
        }
    }

    fn clause(&mut self, c: &Clause) {
        match c {
            Clause::Where(p) => {
                self.push("WHERE ");
                self.predicate(p);
            }
            Clause::GroupBy(cols) => {
                self.push("GROUP BY ");
                self.columns(cols);
            }
            Clause::OrderBy(o) => {
                self.push("ORDER BY ");
                self.term(&o.target);
                if let Some(dir) = o.direction {
                    self.push(" ");
                    self.push(dir.as_str());
                }
            }
            Clause::Bin(b) => {
                self.push("BIN ");
                self.column(&b.column);
                self.push(" BY ");
                self.push(&b.unit);
            }
        }
    }
}

/// Canonical surface form: single spaces, upper-case keywords, identifiers verbatim.
pub fn render_canonical(q: &DvqQuery) -> String {
    render_with(q, Style::Display)
}

pub fn render_with(q: &DvqQuery, style: Style) -> String {
    decompose_with(q, style).reassemble()
}

pub fn decompose(q: &DvqQuery) -> DvqComponents {
    decompose_with(q, Style::Display)
}

pub fn decompose_with(q: &DvqQuery, style: Style) -> DvqComponents {
    let mut axes = Writer::new(style);
    axes.term(&q.x);
    axes.push(" , ");
    axes.term(&q.y);

    let mut data = Writer::new(style);
    data.source(&q.source);
    for clause in &q.clauses {
        data.push(" ");
        data.clause(clause);
    }

    DvqComponents {
        vis: q.chart.as_str().to_string(),
        axes: axes.out,
        data: data.out,
    }
}
