//! Infix arithmetic expressions over `+ - * /` with exact-rational
//! evaluation. ASCII `* /` and Unicode `× ÷ −` spellings normalize to one
//! form; no floating point is used anywhere in verification.

use num::rational::Ratio;
use num::{One, Signed, Zero};

use super::TasksError;

pub type Exact = Ratio<i128>;

/// Operator indices for op-count multisets: `+ - * /`.
pub const OP_ADD: usize = 0;
pub const OP_SUB: usize = 1;
pub const OP_MUL: usize = 2;
pub const OP_DIV: usize = 3;

pub const OP_SYMBOLS: [char; 4] = ['+', '-', '*', '/'];

/// Uses of each operator, indexed `+ - * /`.
pub type OpCounts = [u32; 4];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Num(i64),
    Bin(usize, Box<Expr>, Box<Expr>),
}

impl Expr {
    /// Exact value; `strict_integer` additionally requires every
    /// intermediate value to be a whole number (classic countdown rules).
    pub fn evaluate(&self, strict_integer: bool) -> Result<Exact, TasksError> {
        let value = match self {
            Expr::Num(n) => Exact::from_integer(i128::from(*n)),
            Expr::Bin(op, lhs, rhs) => {
                let a = lhs.evaluate(strict_integer)?;
                let b = rhs.evaluate(strict_integer)?;
                match *op {
                    OP_ADD => a + b,
                    OP_SUB => a - b,
                    OP_MUL => a * b,
                    OP_DIV => {
                        if b.is_zero() {
                            return Err(TasksError::DivisionByZero);
                        }
                        a / b
                    }
                    _ => unreachable!("op index"),
                }
            }
        };
        if strict_integer && !value.denom().is_one() {
            return Err(TasksError::NonIntegerIntermediate {
                value: value.to_string(),
            });
        }
        Ok(value)
    }
}

/// (operand multiset, operator-use multiset): two solutions are different
/// iff their keys differ.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct DistinctnessKey {
    /// Sorted operand multiset.
    pub numbers: Vec<i64>,
    /// Uses of `+ - * /`.
    pub ops: OpCounts,
}

/// A parsed candidate solution.
#[derive(Debug, Clone)]
pub struct Solution {
    pub text: String,
    pub ast: Expr,
    /// Sorted operand multiset.
    pub numbers: Vec<i64>,
    pub ops: OpCounts,
    pub value: Exact,
}

impl Solution {
    pub fn key(&self) -> DistinctnessKey {
        DistinctnessKey {
            numbers: self.numbers.clone(),
            ops: self.ops,
        }
    }
}

struct Parser<'t> {
    chars: Vec<char>,
    at: usize,
    text: &'t str,
}

impl<'t> Parser<'t> {
    fn new(text: &'t str) -> Self {
        Parser {
            chars: text.chars().collect(),
            at: 0,
            text,
        }
    }

    fn skip_ws(&mut self) {
        while self.at < self.chars.len() && self.chars[self.at].is_whitespace() {
            self.at += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.at).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        if c.is_some() {
            self.at += 1;
        }
        c
    }

    fn err(&self, reason: &str) -> TasksError {
        TasksError::Parse {
            at: self.at,
            reason: format!("{} in {:?}", reason, self.text),
        }
    }

    fn expr(&mut self) -> Result<Expr, TasksError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some('+') => {
                    self.bump();
                    lhs = Expr::Bin(OP_ADD, Box::new(lhs), Box::new(self.term()?));
                }
                Some('-') | Some('−') | Some('–') => {
                    self.bump();
                    lhs = Expr::Bin(OP_SUB, Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, TasksError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some('*') | Some('×') => {
                    self.bump();
                    lhs = Expr::Bin(OP_MUL, Box::new(lhs), Box::new(self.factor()?));
                }
                Some('/') | Some('÷') => {
                    self.bump();
                    lhs = Expr::Bin(OP_DIV, Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, TasksError> {
        match self.peek() {
            Some('(') => {
                self.bump();
                let inner = self.expr()?;
                match self.peek() {
                    Some(')') => {
                        self.bump();
                        Ok(inner)
                    }
                    _ => Err(self.err("unbalanced parentheses")),
                }
            }
            Some(c) if c.is_ascii_digit() => {
                let mut value: i64 = 0;
                let mut any = false;
                while let Some(c) = self.chars.get(self.at).copied() {
                    if !c.is_ascii_digit() {
                        break;
                    }
                    value = value
                        .checked_mul(10)
                        .and_then(|v| v.checked_add(i64::from(c as u8 - b'0')))
                        .ok_or_else(|| self.err("number too large"))?;
                    self.at += 1;
                    any = true;
                }
                debug_assert!(any);
                Ok(Expr::Num(value))
            }
            Some(_) => Err(self.err("unexpected token")),
            None => Err(self.err("unexpected end of expression")),
        }
    }
}

/// Parses a candidate expression, optionally suffixed with `= value`.
/// The claimed value is decoration; the exact-rational evaluation decides.
pub fn parse_expression(text: &str) -> Result<Solution, TasksError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(TasksError::Parse {
            at: 0,
            reason: "empty expression".into(),
        });
    }
    let mut parser = Parser::new(trimmed);
    let ast = parser.expr()?;
    if let Some('=') = parser.peek() {
        parser.bump();
        // tolerate a claimed result after `=`, digits only
        let mut saw_digit = false;
        while let Some(c) = parser.peek() {
            if c.is_ascii_digit() {
                parser.bump();
                saw_digit = true;
            } else {
                break;
            }
        }
        if !saw_digit {
            return Err(parser.err("expected a number after ="));
        }
    }
    parser.skip_ws();
    if parser.at < parser.chars.len() {
        return Err(parser.err("trailing input"));
    }
    let value = ast.evaluate(false)?;
    let mut numbers = Vec::new();
    let mut ops: OpCounts = [0; 4];
    collect(&ast, &mut numbers, &mut ops);
    numbers.sort_unstable();
    Ok(Solution {
        text: trimmed.to_string(),
        ast,
        numbers,
        ops,
        value,
    })
}

fn collect(expr: &Expr, numbers: &mut Vec<i64>, ops: &mut OpCounts) {
    match expr {
        Expr::Num(n) => numbers.push(*n),
        Expr::Bin(op, lhs, rhs) => {
            ops[*op] += 1;
            collect(lhs, numbers, ops);
            collect(rhs, numbers, ops);
        }
    }
}

/// Parses a free-standing rational: integer, `a/b`, or decimal. Exact.
pub fn parse_rational(text: &str) -> Option<Exact> {
    let t = text.trim();
    if t.is_empty() {
        return None;
    }
    let (negative, t) = match t.strip_prefix('-').or_else(|| t.strip_prefix('−')) {
        Some(rest) => (true, rest.trim()),
        None => (false, t),
    };
    let value = if let Some((num, den)) = t.split_once('/') {
        let n: i128 = num.trim().parse().ok()?;
        let d: i128 = den.trim().parse().ok()?;
        if d == 0 {
            return None;
        }
        Exact::new(n, d)
    } else if let Some((whole, frac)) = t.split_once('.') {
        let whole_part: i128 = if whole.is_empty() { 0 } else { whole.parse().ok()? };
        if frac.is_empty() || frac.len() > 30 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let digits: i128 = frac.parse().ok()?;
        let scale = 10i128.checked_pow(frac.len() as u32)?;
        Exact::from_integer(whole_part) + Exact::new(digits, scale)
    } else {
        Exact::from_integer(t.parse::<i128>().ok()?)
    };
    Some(if negative { -value.abs() } else { value })
}
