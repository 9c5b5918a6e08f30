//! Tokenizer and recursive-descent parser for the supported SQL subset:
//!
//! ```text
//! SELECT <exprs> FROM <t> [AS a]
//!   [[INNER] JOIN <t2> [AS b] ON (<a.c> = <b.c>)]
//!   [WHERE <pred> AND <pred> ...]
//! ```

use crate::error::{Error, Result};
use crate::expr::CmpOp;
use crate::types::Value;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Comma,
    Dot,
    LParen,
    RParen,
    Star,
    Semi,
    Cmp(CmpOp),
    /// Operators outside the subset (`<>`, `!=`, `+`, ...).
    Other(String),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let bytes = text.as_bytes();
    let mut i = 0;
    let mut out = Vec::new();
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let tok = if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            Tok::Ident(text[start..i].to_string())
        } else if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let mut float = false;
            if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                float = true;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let s = &text[start..i];
            if float {
                Tok::Float(s.parse().map_err(|_| syntax(start, "bad number"))?)
            } else {
                Tok::Int(
                    s.parse()
                        .map_err(|_| syntax(start, "integer out of range"))?,
                )
            }
        } else if c == b'\'' {
            i += 1;
            let s0 = i;
            while i < bytes.len() && bytes[i] != b'\'' {
                i += 1;
            }
            if i >= bytes.len() {
                return Err(syntax(start, "unterminated string literal"));
            }
            let s = text[s0..i].to_string();
            i += 1;
            Tok::Str(s)
        } else {
            i += 1;
            match c {
                b',' => Tok::Comma,
                b'.' => Tok::Dot,
                b'(' => Tok::LParen,
                b')' => Tok::RParen,
                b'*' => Tok::Star,
                b';' => Tok::Semi,
                b'=' => Tok::Cmp(CmpOp::Eq),
                b'>' | b'<' | b'!' => {
                    let next = bytes.get(i).copied();
                    match (c, next) {
                        (b'>', Some(b'=')) => {
                            i += 1;
                            Tok::Cmp(CmpOp::Ge)
                        }
                        (b'<', Some(b'=')) => {
                            i += 1;
                            Tok::Cmp(CmpOp::Le)
                        }
                        (b'<', Some(b'>')) | (b'!', Some(b'=')) => {
                            i += 1;
                            Tok::Other(text[start..i].to_string())
                        }
                        (b'>', _) => Tok::Cmp(CmpOp::Gt),
                        (b'<', _) => Tok::Cmp(CmpOp::Lt),
                        _ => Tok::Other("!".into()),
                    }
                }
                b'+' | b'-' | b'/' | b'%' | b'|' => Tok::Other((c as char).to_string()),
                _ => {
                    return Err(syntax(
                        start,
                        &format!(
                            "unexpected character {:?}",
                            text[start..].chars().next().unwrap_or('?')
                        ),
                    ))
                }
            }
        };
        out.push(Token { tok, pos: start });
    }
    Ok(out)
}

fn syntax(position: usize, message: &str) -> Error {
    Error::Syntax {
        position,
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColRef {
    pub qualifier: Option<String>,
    pub name: String,
    pub pos: usize,
}

impl std::fmt::Display for ColRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.qualifier {
            Some(q) => write!(f, "{q}.{}", self.name),
            None => f.write_str(&self.name),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SqlExpr {
    Column(ColRef),
    Literal(Value),
    Call {
        name: String,
        args: Vec<SqlExpr>,
        pos: usize,
    },
    Compare {
        op: CmpOp,
        left: Box<SqlExpr>,
        right: Box<SqlExpr>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectItem {
    pub expr: SqlExpr,
    pub alias: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectList {
    Star,
    Items(Vec<SelectItem>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRef {
    pub name: String,
    pub alias: Option<String>,
    pub pos: usize,
}

impl TableRef {
    pub fn binding(&self) -> &str {
        self.alias.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinClause {
    pub table: TableRef,
    pub left: ColRef,
    pub right: ColRef,
}

/// Parsed, unresolved query.
#[derive(Debug, Clone, PartialEq)]
pub struct SqlQuery {
    pub select: SelectList,
    pub from: TableRef,
    pub join: Option<JoinClause>,
    pub filters: Vec<SqlExpr>,
}

const UNSUPPORTED_KEYWORDS: &[&str] = &[
    "or", "not", "left", "right", "full", "outer", "cross", "natural", "group", "order", "by",
    "having", "limit", "union", "distinct", "in", "like", "between", "is", "null", "case",
    "exists", "offset", "with", "insert", "update", "delete", "create", "drop", "using",
];

struct Parser<'a> {
    toks: Vec<Token>,
    i: usize,
    len: usize,
    _text: &'a str,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|t| &t.tok)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.i).map(|t| t.pos).unwrap_or(self.len)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.toks.get(self.i).cloned();
        self.i += 1;
        t
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<()> {
        self.check_unsupported()?;
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(syntax(
                self.pos(),
                &format!("expected {}", kw.to_uppercase()),
            ))
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if self.eat(&tok) {
            Ok(())
        } else {
            Err(syntax(self.pos(), &format!("expected {what}")))
        }
    }

    fn check_unsupported(&self) -> Result<()> {
        match self.peek() {
            Some(Tok::Ident(s))
                if UNSUPPORTED_KEYWORDS.contains(&s.to_ascii_lowercase().as_str()) =>
            {
                Err(Error::Unsupported(format!(
                    "{} at position {}",
                    s.to_uppercase(),
                    self.pos()
                )))
            }
            Some(Tok::Other(op)) => Err(Error::Unsupported(format!(
                "operator {op} at position {}",
                self.pos()
            ))),
            _ => Ok(()),
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, usize)> {
        self.check_unsupported()?;
        let pos = self.pos();
        match self.peek() {
            Some(Tok::Ident(s)) if !is_reserved(s) => {
                let s = s.clone();
                self.i += 1;
                Ok((s, pos))
            }
            _ => Err(syntax(pos, &format!("expected {what}"))),
        }
    }

    fn query(&mut self) -> Result<SqlQuery> {
        self.expect_kw("select")?;
        let select = if self.eat(&Tok::Star) {
            SelectList::Star
        } else {
            let mut items = vec![self.select_item()?];
            while self.eat(&Tok::Comma) {
                items.push(self.select_item()?);
            }
            SelectList::Items(items)
        };
        self.expect_kw("from")?;
        let from = self.table_ref()?;
        let mut join = None;
        self.check_unsupported()?;
        if self.is_kw("inner") || self.is_kw("join") {
            self.eat_kw("inner");
            self.expect_kw("join")?;
            let table = self.table_ref()?;
            self.expect_kw("on")?;
            let paren = self.eat(&Tok::LParen);
            let left = self.col_ref()?;
            if !self.eat(&Tok::Cmp(CmpOp::Eq)) {
                self.check_unsupported()?;
                return Err(Error::Unsupported(format!(
                    "non-equi join condition at position {}",
                    self.pos()
                )));
            }
            let right = self.col_ref()?;
            if paren {
                self.expect(Tok::RParen, "')'")?;
            }
            join = Some(JoinClause { table, left, right });
        }
        let mut filters = Vec::new();
        self.check_unsupported()?;
        if self.eat_kw("where") {
            filters.push(self.predicate()?);
            loop {
                self.check_unsupported()?;
                if !self.eat_kw("and") {
                    break;
                }
                filters.push(self.predicate()?);
            }
        }
        self.eat(&Tok::Semi);
        self.check_unsupported()?;
        if self.peek().is_some() {
            return Err(syntax(self.pos(), "unexpected trailing input"));
        }
        Ok(SqlQuery {
            select,
            from,
            join,
            filters,
        })
    }

    fn select_item(&mut self) -> Result<SelectItem> {
        let expr = self.operand()?;
        let alias = if self.eat_kw("as") {
            Some(self.ident("alias")?.0)
        } else {
            None
        };
        Ok(SelectItem { expr, alias })
    }

    fn table_ref(&mut self) -> Result<TableRef> {
        let (name, pos) = self.ident("table name")?;
        let alias = if self.eat_kw("as") {
            Some(self.ident("table alias")?.0)
        } else {
            match self.peek() {
                Some(Tok::Ident(s)) if !is_reserved(s) && !is_unsupported(s) => {
                    Some(self.ident("table alias")?.0)
                }
                _ => None,
            }
        };
        Ok(TableRef { name, alias, pos })
    }

    fn col_ref(&mut self) -> Result<ColRef> {
        let (first, pos) = self.ident("column")?;
        if self.eat(&Tok::Dot) {
            let (name, _) = self.ident("column name")?;
            Ok(ColRef {
                qualifier: Some(first),
                name,
                pos,
            })
        } else {
            Ok(ColRef {
                qualifier: None,
                name: first,
                pos,
            })
        }
    }

    fn operand(&mut self) -> Result<SqlExpr> {
        self.check_unsupported()?;
        let pos = self.pos();
        match self.peek().cloned() {
            Some(Tok::Int(v)) => {
                self.i += 1;
                Ok(SqlExpr::Literal(Value::Int64(v)))
            }
            Some(Tok::Float(v)) => {
                self.i += 1;
                Ok(SqlExpr::Literal(Value::Float64(v)))
            }
            Some(Tok::Str(s)) => {
                self.i += 1;
                Ok(SqlExpr::Literal(Value::String(s)))
            }
            Some(Tok::Ident(s))
                if s.eq_ignore_ascii_case("true") || s.eq_ignore_ascii_case("false") =>
            {
                self.i += 1;
                Ok(SqlExpr::Literal(Value::Bool(
                    s.eq_ignore_ascii_case("true"),
                )))
            }
            Some(Tok::Ident(_)) => {
                if matches!(self.toks.get(self.i + 1).map(|t| &t.tok), Some(Tok::LParen)) {
                    let (name, _) = self.ident("function name")?;
                    self.next();
                    let mut args = Vec::new();
                    if !self.eat(&Tok::RParen) {
                        args.push(self.operand()?);
                        while self.eat(&Tok::Comma) {
                            args.push(self.operand()?);
                        }
                        self.expect(Tok::RParen, "')'")?;
                    }
                    Ok(SqlExpr::Call { name, args, pos })
                } else {
                    Ok(SqlExpr::Column(self.col_ref()?))
                }
            }
            _ => Err(syntax(pos, "expected expression")),
        }
    }

    fn predicate(&mut self) -> Result<SqlExpr> {
        if self.eat(&Tok::LParen) {
            let p = self.predicate()?;
            self.check_unsupported()?;
            self.expect(Tok::RParen, "')'")?;
            return Ok(p);
        }
        let left = self.operand()?;
        self.check_unsupported()?;
        if let Some(Tok::Cmp(op)) = self.peek().cloned() {
            self.i += 1;
            let right = self.operand()?;
            return Ok(SqlExpr::Compare {
                op,
                left: Box::new(left),
                right: Box::new(right),
            });
        }
        Ok(left)
    }
}

fn is_reserved(s: &str) -> bool {
    [
        "select", "from", "where", "and", "as", "inner", "join", "on", "true", "false",
    ]
    .contains(&s.to_ascii_lowercase().as_str())
}

fn is_unsupported(s: &str) -> bool {
    UNSUPPORTED_KEYWORDS.contains(&s.to_ascii_lowercase().as_str())
}

pub fn parse_sql(text: &str) -> Result<SqlQuery> {
    if text.trim().is_empty() {
        return Err(syntax(0, "empty query"));
    }
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks,
        i: 0,
        len: text.len(),
        _text: text,
    };
    p.query()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_table_udf_query() {
        let q = parse_sql("select a.id from celeba as a where hasBangs(a.id)").unwrap();
        assert_eq!(q.from.binding(), "a");
        assert!(q.join.is_none());
        assert_eq!(q.filters.len(), 1);
        assert!(matches!(&q.filters[0], SqlExpr::Call { name, .. } if name == "hasBangs"));
    }

    #[test]
    fn join_query_with_parenthesized_on() {
        let q = parse_sql(
            "select a.id, a.bangs, b.address from celeba as a inner join customer as b \
             on(a.id=b.id) where b.id>20 and hasBangs(a.id);",
        )
        .unwrap();
        let j = q.join.unwrap();
        assert_eq!(j.table.binding(), "b");
        assert_eq!(j.left.to_string(), "a.id");
        assert_eq!(q.filters.len(), 2);
    }

    #[test]
    fn float_literal_and_alias() {
        let q = parse_sql("SELECT id, molecular_weight(smile) AS weight FROM pubchem WHERE molecular_weight(smile) > 437.9").unwrap();
        let SelectList::Items(items) = q.select else {
            panic!()
        };
        assert_eq!(items[1].alias.as_deref(), Some("weight"));
        assert!(matches!(
            &q.filters[0],
            SqlExpr::Compare { right, .. } if **right == SqlExpr::Literal(Value::Float64(437.9))
        ));
    }

    #[test]
    fn unsupported_constructs() {
        for sql in [
            "select * from a left join b on a.id = b.id",
            "select id from t where x > 1 or y > 2",
            "select id from t order by id",
            "select id from t where x <> 1",
            "select id from a join b on a.x > b.y",
        ] {
            assert!(
                matches!(parse_sql(sql), Err(Error::Unsupported(_))),
                "{sql}"
            );
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse_sql("select from t") {
            Err(Error::Syntax { position, .. }) => assert_eq!(position, 7),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_sql(""), Err(Error::Syntax { .. })));
        assert!(matches!(
            parse_sql("select id from t where"),
            Err(Error::Syntax { .. })
        ));
        assert!(matches!(
            parse_sql("select id from t extra junk"),
            Err(Error::Syntax { .. })
        ));
        assert!(matches!(
            parse_sql("select 'abc from t"),
            Err(Error::Syntax { .. })
        ));
    }
}
