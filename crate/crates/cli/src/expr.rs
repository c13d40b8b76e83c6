//! Arithmetic expressions for potentials, drifts and initial data.
//!
//! Grammar: numbers (decimal, optional fraction and exponent), variables
//! `x` and `y`, the constant `pi`, unary minus, binary `+ - * / ^` with
//! `^` right-associative and binding tighter than unary minus, which in
//! turn binds tighter than `*` and `/`, and the one-argument functions
//! `sin cos exp log sqrt abs`. Whitespace is insignificant. Implicit
//! multiplication is not supported: `2x` is a syntax error.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }
}

/// Parsed expression tree. Number literals are always nonnegative as
/// parsed; leading minus signs become `Neg` nodes.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Pi,
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Parse error with the byte offset of the offending token.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "syntax error at byte {}: {}", self.offset, self.message)
    }
}

impl std::error::Error for ParseError {}

/// Evaluation failure: log or sqrt outside its domain.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalError {
    pub func: &'static str,
    pub arg: f64,
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "domain error: {}({}) is undefined", self.func, self.arg)
    }
}

impl std::error::Error for EvalError {}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src: src.as_bytes(), pos: 0 }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Next token with its starting byte offset; None at end of input.
    fn next(&mut self) -> Result<Option<(usize, Tok)>, ParseError> {
        self.skip_ws();
        if self.pos >= self.src.len() {
            return Ok(None);
        }
        let start = self.pos;
        let c = self.src[self.pos];
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'0'..=b'9' | b'.' => return Ok(Some((start, self.number(start)?))),
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                return Ok(Some((start, Tok::Ident(name.to_string()))));
            }
            _ => {
                return Err(ParseError {
                    offset: start,
                    message: format!("unexpected character {:?}", c as char),
                })
            }
        };
        self.pos += 1;
        Ok(Some((start, tok)))
    }

    fn number(&mut self, start: usize) -> Result<Tok, ParseError> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        if self.pos < self.src.len() && (self.src[self.pos] | 0x20) == b'e' {
            let mark = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-')
            {
                self.pos += 1;
            }
            if self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                // Not an exponent after all; leave the letter for the next token.
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>().map(Tok::Num).map_err(|_| ParseError {
            offset: start,
            message: format!("malformed number {text:?}"),
        })
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    /// Byte offset just past the input, for end-of-input errors.
    end: usize,
    idx: usize,
}

// Binding powers: +,- (1,2)  *,/ (3,4)  unary- (5)  ^ (8,7 right-assoc).
const BP_UNARY_MINUS: u8 = 5;

impl Parser {
    fn peek(&self) -> Option<&(usize, Tok)> {
        self.toks.get(self.idx)
    }

    fn bump(&mut self) -> Option<(usize, Tok)> {
        let t = self.toks.get(self.idx).cloned();
        if t.is_some() {
            self.idx += 1;
        }
        t
    }

    fn err_here(&self, message: impl Into<String>) -> ParseError {
        let offset = self.peek().map_or(self.end, |(o, _)| *o);
        ParseError { offset, message: message.into() }
    }

    fn expect_rparen(&mut self, open_offset: usize) -> Result<(), ParseError> {
        match self.bump() {
            Some((_, Tok::RParen)) => Ok(()),
            Some((o, t)) => Err(ParseError {
                offset: o,
                message: format!("expected ')' to close '(' at byte {open_offset}, found {t:?}"),
            }),
            None => Err(ParseError {
                offset: self.end,
                message: format!("expected ')' to close '(' at byte {open_offset}"),
            }),
        }
    }

    fn parse_expr(&mut self, min_bp: u8) -> Result<Expr, ParseError> {
        let (offset, tok) = match self.bump() {
            Some(t) => t,
            None => return Err(self.err_here("expected an expression")),
        };
        let mut lhs = match tok {
            Tok::Num(v) => Expr::Num(v),
            Tok::Minus => {
                let operand = self.parse_expr(BP_UNARY_MINUS)?;
                Expr::Neg(Box::new(operand))
            }
            Tok::LParen => {
                let inner = self.parse_expr(0)?;
                self.expect_rparen(offset)?;
                inner
            }
            Tok::Ident(name) => match name.as_str() {
                "x" => Expr::Var(Var::X),
                "y" => Expr::Var(Var::Y),
                "pi" => Expr::Pi,
                "sin" | "cos" | "exp" | "log" | "sqrt" | "abs" => {
                    let func = match name.as_str() {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "exp" => Func::Exp,
                        "log" => Func::Log,
                        "sqrt" => Func::Sqrt,
                        _ => Func::Abs,
                    };
                    match self.bump() {
                        Some((open, Tok::LParen)) => {
                            let arg = self.parse_expr(0)?;
                            self.expect_rparen(open)?;
                            Expr::Call(func, Box::new(arg))
                        }
                        Some((o, _)) => {
                            return Err(ParseError {
                                offset: o,
                                message: format!("expected '(' after function {name}"),
                            })
                        }
                        None => {
                            return Err(ParseError {
                                offset: self.end,
                                message: format!("expected '(' after function {name}"),
                            })
                        }
                    }
                }
                _ => {
                    return Err(ParseError {
                        offset,
                        message: format!("unknown identifier {name:?}"),
                    })
                }
            },
            other => {
                return Err(ParseError {
                    offset,
                    message: format!("expected an expression, found {other:?}"),
                })
            }
        };
        loop {
            let op = match self.peek() {
                None | Some((_, Tok::RParen)) => break,
                Some((_, Tok::Plus)) => BinOp::Add,
                Some((_, Tok::Minus)) => BinOp::Sub,
                Some((_, Tok::Star)) => BinOp::Mul,
                Some((_, Tok::Slash)) => BinOp::Div,
                Some((_, Tok::Caret)) => BinOp::Pow,
                Some((o, t)) => {
                    return Err(ParseError {
                        offset: *o,
                        message: format!("expected an operator or ')', found {t:?}"),
                    })
                }
            };
            let (lbp, rbp) = match op {
                BinOp::Add | BinOp::Sub => (1, 2),
                BinOp::Mul | BinOp::Div => (3, 4),
                BinOp::Pow => (8, 7),
            };
            if lbp < min_bp {
                break;
            }
            self.bump();
            let rhs = self.parse_expr(rbp)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ParseError> {
        let mut lexer = Lexer::new(src);
        let mut toks = Vec::new();
        while let Some(t) = lexer.next()? {
            toks.push(t);
        }
        let mut parser = Parser { toks, end: src.len(), idx: 0 };
        let expr = parser.parse_expr(0)?;
        if let Some((o, t)) = parser.peek() {
            return Err(ParseError {
                offset: *o,
                message: format!("unexpected trailing {t:?}"),
            });
        }
        Ok(expr)
    }

    /// Evaluates at the point (x, y); 1-D callers pass any y after checking
    /// `uses_var(Var::Y)` is false. IEEE semantics throughout, except that
    /// log of a nonpositive and sqrt of a negative argument are errors.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::X) => x,
            Expr::Var(Var::Y) => y,
            Expr::Pi => std::f64::consts::PI,
            Expr::Neg(a) => -a.eval(x, y)?,
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(x, y)?, b.eval(x, y)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(f, a) => {
                let v = a.eval(x, y)?;
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Log => {
                        if v <= 0.0 {
                            return Err(EvalError { func: "log", arg: v });
                        }
                        v.ln()
                    }
                    Func::Sqrt => {
                        if v < 0.0 {
                            return Err(EvalError { func: "sqrt", arg: v });
                        }
                        v.sqrt()
                    }
                    Func::Abs => v.abs(),
                }
            }
        })
    }

    pub fn uses_var(&self, var: Var) -> bool {
        match self {
            Expr::Num(_) | Expr::Pi => false,
            Expr::Var(v) => *v == var,
            Expr::Neg(a) | Expr::Call(_, a) => a.uses_var(var),
            Expr::Bin(_, a, b) => a.uses_var(var) || b.uses_var(var),
        }
    }
}

/// Prints with enough parentheses that parsing the output reproduces the
/// tree exactly, and no more than the grammar needs.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Precedence levels for the parenthesization decision. A child is
        // wrapped when its level is too weak for the slot it sits in; the
        // strict/non-strict split encodes associativity (a*b*c reparses as
        // written, a*(b*c) keeps its parens; 2^3^2 reparses as written,
        // (2^3)^2 keeps its parens).
        fn level(e: &Expr) -> u8 {
            match e {
                Expr::Num(_) | Expr::Var(_) | Expr::Pi | Expr::Call(..) => 10,
                Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 2,
                Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 4,
                Expr::Neg(_) => 5,
                Expr::Bin(BinOp::Pow, ..) => 6,
            }
        }

        fn wrapped(e: &Expr, f: &mut fmt::Formatter<'_>, need: bool) -> fmt::Result {
            if need {
                write!(f, "(")?;
                go(e, f)?;
                write!(f, ")")
            } else {
                go(e, f)
            }
        }

        fn go(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match e {
                Expr::Num(v) => write!(f, "{v:?}"),
                Expr::Var(Var::X) => write!(f, "x"),
                Expr::Var(Var::Y) => write!(f, "y"),
                Expr::Pi => write!(f, "pi"),
                Expr::Call(func, a) => {
                    write!(f, "{}(", func.name())?;
                    go(a, f)?;
                    write!(f, ")")
                }
                Expr::Neg(a) => {
                    write!(f, "-")?;
                    wrapped(a, f, level(a) < level(e))
                }
                Expr::Bin(op, a, b) => {
                    let sym = match op {
                        BinOp::Add => "+",
                        BinOp::Sub => "-",
                        BinOp::Mul => "*",
                        BinOp::Div => "/",
                        BinOp::Pow => "^",
                    };
                    let p = level(e);
                    let (wrap_left, wrap_right) = if *op == BinOp::Pow {
                        (level(a) <= p, level(b) < p)
                    } else {
                        (level(a) < p, level(b) <= p)
                    };
                    wrapped(a, f, wrap_left)?;
                    write!(f, "{sym}")?;
                    wrapped(b, f, wrap_right)
                }
            }
        }
        go(self, f)
    }
}
