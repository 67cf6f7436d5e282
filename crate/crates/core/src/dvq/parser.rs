use super::lexer::{tokenize, Token, TokenKind};
use super::{
    Aggregate, AxisTerm, Bin, ChartType, Clause, ColumnRef, CompareOp, DvqError, DvqQuery, Join,
    Operand, OrderBy, Predicate, SortDirection, Source, SubQuery, TableRef,
};

const RESERVED: &[&str] = &[
    "VISUALIZE", "SELECT", "FROM", "WHERE", "GROUP", "ORDER", "BY", "BIN", "AS", "JOIN", "ON",
    "AND", "OR", "NOT", "LIKE", "IN", "BETWEEN", "IS", "NULL", "ASC", "DESC", "DISTINCT",
];

fn is_reserved(word: &str) -> bool {
    RESERVED.iter().any(|k| k.eq_ignore_ascii_case(word))
}

struct Scope {
    parent: Option<usize>,
    names: Vec<String>,
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end_offset: usize,
    scopes: Vec<Scope>,
    scope: usize,
    /// (qualifier, byte offset, scope index), checked once all sources are known.
    qualifiers: Vec<(String, usize, usize)>,
}

pub(crate) fn parse(text: &str) -> Result<DvqQuery, DvqError> {
    if text.trim().is_empty() {
        return Err(DvqError::Empty);
    }
    let tokens = tokenize(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        end_offset: text.len(),
        scopes: vec![Scope {
            parent: None,
            names: Vec::new(),
        }],
        scope: 0,
        qualifiers: Vec::new(),
    };
    let query = p.query()?;
    p.check_qualifiers()?;
    Ok(query)
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, ahead: usize) -> Option<&Token> {
        self.tokens.get(self.pos + ahead)
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end_offset, |t| t.offset)
    }

    fn malformed<T>(&self, message: impl Into<String>) -> Result<T, DvqError> {
        Err(DvqError::MalformedClause {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn at_word(&self, keyword: &str) -> bool {
        self.peek().is_some_and(|t| t.is_word(keyword))
    }

    fn eat_word(&mut self, keyword: &str) -> bool {
        if self.at_word(keyword) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_word(&mut self, keyword: &str) -> Result<(), DvqError> {
        if self.eat_word(keyword) {
            Ok(())
        } else {
            self.malformed(format!("expected {keyword}"))
        }
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if self.peek().is_some_and(|t| &t.kind == kind) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: &TokenKind, what: &str) -> Result<(), DvqError> {
        if self.eat(kind) {
            Ok(())
        } else {
            self.malformed(format!("expected {what}"))
        }
    }

    /// A non-reserved word, returned with its offset.
    fn identifier(&mut self, what: &str) -> Result<(String, usize), DvqError> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::Word(w),
                offset,
            }) if !is_reserved(w) => {
                let out = (w.clone(), *offset);
                self.pos += 1;
                Ok(out)
            }
            _ => self.malformed(format!("expected {what}")),
        }
    }

    fn query(&mut self) -> Result<DvqQuery, DvqError> {
        self.expect_word("VISUALIZE")?;
        let chart = match self.peek() {
            Some(Token {
                kind: TokenKind::Word(w),
                offset,
            }) => match ChartType::from_token(w) {
                Some(chart) => chart,
                None => {
                    return Err(DvqError::UnknownChartType {
                        token: w.clone(),
                        offset: *offset,
                    })
                }
            },
            _ => return self.malformed("expected chart type"),
        };
        self.pos += 1;

        self.expect_word("SELECT")?;
        let x = self.term()?;
        self.expect(&TokenKind::Comma, "',' between the two select terms")?;
        let y = self.term()?;
        if self.peek().is_some_and(|t| t.kind == TokenKind::Comma) {
            return self.malformed("a DVQ selects exactly two terms");
        }
        self.expect_word("FROM")?;
        let source = self.source()?;

        let mut clauses: Vec<Clause> = Vec::new();
        while let Some(token) = self.peek() {
            let offset = token.offset;
            let clause = if self.eat_word("WHERE") {
                Clause::Where(self.predicate()?)
            } else if self.eat_word("GROUP") {
                self.expect_word("BY")?;
                Clause::GroupBy(self.column_list()?)
            } else if self.eat_word("ORDER") {
                self.expect_word("BY")?;
                let target = self.term()?;
                let direction = if self.eat_word("ASC") {
                    Some(SortDirection::Asc)
                } else if self.eat_word("DESC") {
                    Some(SortDirection::Desc)
                } else {
                    None
                };
                Clause::OrderBy(OrderBy { target, direction })
            } else if self.eat_word("BIN") {
                let column = self.column()?;
                self.expect_word("BY")?;
                let (unit, _) = self.identifier("bin unit")?;
                Clause::Bin(Bin {
                    column,
                    unit: unit.to_ascii_uppercase(),
                })
            } else {
                return self.malformed("unexpected token after FROM clause");
            };
            if clauses
                .iter()
                .any(|c| std::mem::discriminant(c) == std::mem::discriminant(&clause))
            {
                return Err(DvqError::MalformedClause {
                    offset,
                    message: "duplicate clause".into(),
                });
            }
            clauses.push(clause);
        }

        Ok(DvqQuery {
            chart,
            x,
            y,
            source,
            clauses,
        })
    }

    fn column(&mut self) -> Result<ColumnRef, DvqError> {
        let (first, offset) = self.identifier("column name")?;
        if self.eat(&TokenKind::Dot) {
            let (name, _) = self.identifier("column name after '.'")?;
            self.qualifiers.push((first.clone(), offset, self.scope));
            Ok(ColumnRef {
                qualifier: Some(first),
                name,
            })
        } else {
            Ok(ColumnRef::new(first))
        }
    }

    fn column_list(&mut self) -> Result<Vec<ColumnRef>, DvqError> {
        let mut cols = vec![self.column()?];
        while self.eat(&TokenKind::Comma) {
            cols.push(self.column()?);
        }
        Ok(cols)
    }

    fn term(&mut self) -> Result<AxisTerm, DvqError> {
        let aggregate = match (self.peek(), self.peek_at(1)) {
            (
                Some(Token {
                    kind: TokenKind::Word(w),
                    ..
                }),
                Some(Token {
                    kind: TokenKind::LParen,
                    ..
                }),
            ) => Aggregate::from_token(w),
            _ => None,
        };
        let Some(aggregate) = aggregate else {
            if self.peek().is_some_and(|t| t.kind == TokenKind::Star) {
                return self.malformed("'*' is only allowed inside COUNT");
            }
            return Ok(AxisTerm::column(self.column()?));
        };
        self.pos += 2;
        let distinct = if self.at_word("DISTINCT") {
            if aggregate != Aggregate::Count {
                return self.malformed("DISTINCT is only allowed inside COUNT");
            }
            self.pos += 1;
            true
        } else {
            false
        };
        let column = if self.peek().is_some_and(|t| t.kind == TokenKind::Star) {
            if aggregate != Aggregate::Count || distinct {
                return self.malformed("'*' is only allowed inside COUNT");
            }
            self.pos += 1;
            ColumnRef::new("*")
        } else {
            self.column()?
        };
        self.expect(&TokenKind::RParen, "')' closing aggregate")?;
        Ok(AxisTerm {
            column,
            aggregate: Some(aggregate),
            distinct,
        })
    }

    fn table_ref(&mut self) -> Result<TableRef, DvqError> {
        let (name, _) = self.identifier("table name")?;
        let alias = if self.eat_word("AS") {
            Some(self.identifier("alias after AS")?.0)
        } else {
            None
        };
        let names = &mut self.scopes[self.scope].names;
        names.push(name.clone());
        names.extend(alias.clone());
        Ok(TableRef { name, alias })
    }

    fn source(&mut self) -> Result<Source, DvqError> {
        let table = self.table_ref()?;
        let mut joins = Vec::new();
        while self.eat_word("JOIN") {
            let table = self.table_ref()?;
            self.expect_word("ON")?;
            let left = self.column()?;
            self.expect(&TokenKind::Op("="), "'=' in JOIN condition")?;
            let right = self.column()?;
            joins.push(Join {
                table,
                on: (left, right),
            });
        }
        Ok(Source { table, joins })
    }

    fn predicate(&mut self) -> Result<Predicate, DvqError> {
        let mut left = self.conjunction()?;
        while self.eat_word("OR") {
            let right = self.conjunction()?;
            left = Predicate::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn conjunction(&mut self) -> Result<Predicate, DvqError> {
        let mut left = self.negation()?;
        while self.eat_word("AND") {
            let right = self.negation()?;
            left = Predicate::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn negation(&mut self) -> Result<Predicate, DvqError> {
        if self.eat_word("NOT") {
            return Ok(Predicate::Not(Box::new(self.negation()?)));
        }
        let starts_group = self.peek().is_some_and(|t| t.kind == TokenKind::LParen)
            && !self.peek_at(1).is_some_and(|t| t.is_word("SELECT"));
        if starts_group {
            self.pos += 1;
            let inner = self.predicate()?;
            self.expect(&TokenKind::RParen, "')'")?;
            return Ok(Predicate::Paren(Box::new(inner)));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Predicate, DvqError> {
        let expr = self.operand()?;
        if let Some(Token {
            kind: TokenKind::Op(symbol),
            ..
        }) = self.peek()
        {
            let op = CompareOp::from_symbol(symbol).expect("lexer only emits comparison ops");
            self.pos += 1;
            let right = self.operand()?;
            return Ok(Predicate::Compare {
                left: expr,
                op,
                right,
            });
        }
        if self.eat_word("IS") {
            let negated = self.eat_word("NOT");
            self.expect_word("NULL")?;
            return Ok(Predicate::IsNull { expr, negated });
        }
        let negated = self.eat_word("NOT");
        if self.eat_word("LIKE") {
            let pattern = self.operand()?;
            Ok(Predicate::Like {
                expr,
                negated,
                pattern,
            })
        } else if self.eat_word("IN") {
            let set = self.in_set()?;
            Ok(Predicate::In { expr, negated, set })
        } else if self.eat_word("BETWEEN") {
            let low = self.operand()?;
            self.expect_word("AND")?;
            let high = self.operand()?;
            Ok(Predicate::Between {
                expr,
                negated,
                low,
                high,
            })
        } else {
            self.malformed("expected comparison, LIKE, IN, BETWEEN or IS")
        }
    }

    fn in_set(&mut self) -> Result<Operand, DvqError> {
        if !self.peek().is_some_and(|t| t.kind == TokenKind::LParen) {
            return self.malformed("expected '(' after IN");
        }
        if self.peek_at(1).is_some_and(|t| t.is_word("SELECT")) {
            return self.operand();
        }
        self.pos += 1;
        let mut items = vec![self.operand()?];
        while self.eat(&TokenKind::Comma) {
            items.push(self.operand()?);
        }
        self.expect(&TokenKind::RParen, "')' closing IN list")?;
        Ok(Operand::List(items))
    }

    fn operand(&mut self) -> Result<Operand, DvqError> {
        match self.peek().map(|t| &t.kind) {
            Some(TokenKind::Number(n)) => {
                let n = n.clone();
                self.pos += 1;
                Ok(Operand::Number(n))
            }
            Some(TokenKind::Str(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(Operand::Str(s))
            }
            Some(TokenKind::LParen) if self.peek_at(1).is_some_and(|t| t.is_word("SELECT")) => {
                self.pos += 2;
                let sub = self.subquery()?;
                self.expect(&TokenKind::RParen, "')' closing subquery")?;
                Ok(Operand::Subquery(Box::new(sub)))
            }
            Some(TokenKind::Word(_)) | Some(TokenKind::Star) => Ok(Operand::Term(self.term()?)),
            _ => self.malformed("expected a column, literal or subquery"),
        }
    }

    fn subquery(&mut self) -> Result<SubQuery, DvqError> {
        let outer = self.scope;
        self.scopes.push(Scope {
            parent: Some(outer),
            names: Vec::new(),
        });
        self.scope = self.scopes.len() - 1;

        let mut items = vec![self.term()?];
        while self.eat(&TokenKind::Comma) {
            items.push(self.term()?);
        }
        self.expect_word("FROM")?;
        let source = self.source()?;
        let filter = if self.eat_word("WHERE") {
            Some(self.predicate()?)
        } else {
            None
        };
        let group_by = if self.eat_word("GROUP") {
            self.expect_word("BY")?;
            self.column_list()?
        } else {
            Vec::new()
        };

        self.scope = outer;
        Ok(SubQuery {
            items,
            source,
            filter,
            group_by,
        })
    }

    fn check_qualifiers(&self) -> Result<(), DvqError> {
        for (qualifier, offset, scope) in &self.qualifiers {
            let mut current = Some(*scope);
            let mut found = false;
            while let Some(idx) = current {
                let s = &self.scopes[idx];
                if s.names.iter().any(|n| n.eq_ignore_ascii_case(qualifier)) {
                    found = true;
                    break;
                }
                current = s.parent;
            }
            if !found {
                return Err(DvqError::DanglingAlias {
                    alias: qualifier.clone(),
                    offset: *offset,
                });
            }
        }
        Ok(())
    }
}
