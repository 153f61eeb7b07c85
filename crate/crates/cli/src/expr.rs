//! Scalar expressions for coefficient tables.
//!
//! ```text
//! expr    := add (("<" | "<=" | ">" | ">=") add)?
//! add     := mul (("+" | "-") mul)*
//! mul     := unary (("*" | "/") unary)*
//! unary   := "-" unary | power
//! power   := atom ("^" unary)?
//! atom    := number | name | name "(" expr ("," expr)* ")" | "(" expr ")"
//! ```
//!
//! Names: `s` (fast time), `x`/`x0`.., `y`/`y0`.., `z`/`z0`.., `pi`, `e`.
//! Comparisons give `1` or `0`.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct ExprError {
    pub message: String,
    /// 1-based character column inside the expression.
    pub column: usize,
}

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (column {})", self.message, self.column)
    }
}

impl std::error::Error for ExprError {}

/// Variables an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vars {
    pub s: bool,
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl Vars {
    pub fn new(s: bool, x: usize, y: usize, z: usize) -> Self {
        Self { s, x, y, z }
    }
}

/// Values bound to the variables at evaluation time.
#[derive(Debug, Clone, Copy, Default)]
pub struct Env<'a> {
    pub s: f64,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub z: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Var {
    S,
    X(usize),
    Y(usize),
    Z(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Tanh,
    Sinh,
    Cosh,
    Atan,
    Sign,
    Step,
    Min,
    Max,
    Pow,
    Clamp,
    If,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "tan" => (Func::Tan, 1),
            "exp" => (Func::Exp, 1),
            "ln" | "log" => (Func::Ln, 1),
            "sqrt" => (Func::Sqrt, 1),
            "abs" => (Func::Abs, 1),
            "tanh" => (Func::Tanh, 1),
            "sinh" => (Func::Sinh, 1),
            "cosh" => (Func::Cosh, 1),
            "atan" => (Func::Atan, 1),
            "sign" => (Func::Sign, 1),
            "step" => (Func::Step, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            "pow" => (Func::Pow, 2),
            "clamp" => (Func::Clamp, 3),
            "if" => (Func::If, 3),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// Parsed expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(source: &str, vars: Vars) -> Result<Self, ExprError> {
        let tokens = lex(source)?;
        let mut p = Parser { tokens, pos: 0, vars };
        let root = p.expr()?;
        if let Some(t) = p.tokens.get(p.pos) {
            return Err(ExprError {
                message: format!("unexpected '{}'", t.text),
                column: t.column,
            });
        }
        Ok(Self {
            source: source.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, env: &Env) -> f64 {
        eval(&self.root, env)
    }
}

fn eval(node: &Node, env: &Env) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Var(Var::S) => env.s,
        Node::Var(Var::X(i)) => env.x[*i],
        Node::Var(Var::Y(i)) => env.y[*i],
        Node::Var(Var::Z(i)) => env.z[*i],
        Node::Neg(a) => -eval(a, env),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, env), eval(b, env));
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a / b,
                BinOp::Pow => a.powf(b),
                BinOp::Lt => (a < b) as u8 as f64,
                BinOp::Le => (a <= b) as u8 as f64,
                BinOp::Gt => (a > b) as u8 as f64,
                BinOp::Ge => (a >= b) as u8 as f64,
            }
        }
        Node::Call(f, args) => {
            let a = |i: usize| eval(&args[i], env);
            match f {
                Func::Sin => a(0).sin(),
                Func::Cos => a(0).cos(),
                Func::Tan => a(0).tan(),
                Func::Exp => a(0).exp(),
                Func::Ln => a(0).ln(),
                Func::Sqrt => a(0).sqrt(),
                Func::Abs => a(0).abs(),
                Func::Tanh => a(0).tanh(),
                Func::Sinh => a(0).sinh(),
                Func::Cosh => a(0).cosh(),
                Func::Atan => a(0).atan(),
                Func::Sign => {
                    let v = a(0);
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
                Func::Step => (a(0) >= 0.0) as u8 as f64,
                Func::Min => a(0).min(a(1)),
                Func::Max => a(0).max(a(1)),
                Func::Pow => a(0).powf(a(1)),
                Func::Clamp => a(0).max(a(1)).min(a(2)),
                Func::If => {
                    if a(0) != 0.0 {
                        a(1)
                    } else {
                        a(2)
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Sym(&'static str),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    text: String,
    column: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text.parse::<f64>().map_err(|_| ExprError {
                message: format!("malformed number '{text}'"),
                column,
            })?;
            out.push(Token { tok: Tok::Num(v), text, column });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            out.push(Token {
                tok: Tok::Name(text.clone()),
                text,
                column,
            });
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let sym = match two.as_str() {
            "<=" => Some("<="),
            ">=" => Some(">="),
            "**" => Some("^"),
            _ => None,
        };
        if let Some(s) = sym {
            out.push(Token { tok: Tok::Sym(s), text: two, column });
            i += 2;
            continue;
        }
        let s = match c {
            '+' => "+",
            '-' => "-",
            '*' => "*",
            '/' => "/",
            '^' => "^",
            '(' => "(",
            ')' => ")",
            ',' => ",",
            '<' => "<",
            '>' => ">",
            _ => {
                return Err(ExprError {
                    message: format!("unexpected character '{c}'"),
                    column,
                })
            }
        };
        out.push(Token { tok: Tok::Sym(s), text: c.to_string(), column });
        i += 1;
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    vars: Vars,
}

impl Parser {
    fn peek_sym(&self) -> Option<&'static str> {
        match self.tokens.get(self.pos).map(|t| &t.tok) {
            Some(Tok::Sym(s)) => Some(s),
            _ => None,
        }
    }

    fn column(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|t| t.column)
            .unwrap_or_else(|| self.tokens.last().map(|t| t.column + t.text.chars().count()).unwrap_or(1))
    }

    fn expect(&mut self, sym: &str) -> Result<(), ExprError> {
        if self.peek_sym() == Some(sym) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ExprError {
                message: format!("expected '{sym}'"),
                column: self.column(),
            })
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let lhs = self.add()?;
        let op = match self.peek_sym() {
            Some("<") => BinOp::Lt,
            Some("<=") => BinOp::Le,
            Some(">") => BinOp::Gt,
            Some(">=") => BinOp::Ge,
            _ => return Ok(lhs),
        };
        self.pos += 1;
        let rhs = self.add()?;
        Ok(Node::Bin(op, Box::new(lhs), Box::new(rhs)))
    }

    fn add(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.mul()?;
        loop {
            let op = match self.peek_sym() {
                Some("+") => BinOp::Add,
                Some("-") => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.mul()?));
        }
    }

    fn mul(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek_sym() {
                Some("*") => BinOp::Mul,
                Some("/") => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        match self.peek_sym() {
            Some("-") => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some("+") => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.peek_sym() == Some("^") {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let column = self.column();
        let Some(tok) = self.tokens.get(self.pos).cloned() else {
            return Err(ExprError {
                message: "unexpected end of expression".into(),
                column,
            });
        };
        self.pos += 1;
        match tok.tok {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::Sym("(") => {
                let inner = self.expr()?;
                self.expect(")")?;
                Ok(inner)
            }
            Tok::Sym(s) => Err(ExprError {
                message: format!("unexpected '{s}'"),
                column,
            }),
            Tok::Name(name) => {
                if self.peek_sym() == Some("(") {
                    let Some((func, arity)) = Func::lookup(&name) else {
                        return Err(ExprError {
                            message: format!("unknown function '{name}'"),
                            column,
                        });
                    };
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while self.peek_sym() == Some(",") {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(")")?;
                    if args.len() != arity {
                        return Err(ExprError {
                            message: format!("'{name}' takes {arity} argument(s), got {}", args.len()),
                            column,
                        });
                    }
                    return Ok(Node::Call(func, args));
                }
                self.name(&name, column)
            }
        }
    }

    fn name(&self, name: &str, column: usize) -> Result<Node, ExprError> {
        match name {
            "pi" => return Ok(Node::Num(std::f64::consts::PI)),
            "e" => return Ok(Node::Num(std::f64::consts::E)),
            "s" if self.vars.s => return Ok(Node::Var(Var::S)),
            _ => {}
        }
        let (head, tail) = name.split_at(1);
        let index = if tail.is_empty() {
            Some(0)
        } else {
            tail.parse::<usize>().ok().filter(|_| tail.chars().all(|c| c.is_ascii_digit()))
        };
        let found = match (head, index) {
            ("x", Some(i)) if i < self.vars.x => Some(Var::X(i)),
            ("y", Some(i)) if i < self.vars.y => Some(Var::Y(i)),
            ("z", Some(i)) if i < self.vars.z => Some(Var::Z(i)),
            _ => None,
        };
        found.map(Node::Var).ok_or_else(|| ExprError {
            message: format!("unknown variable '{name}' here"),
            column,
        })
    }
}
