//! Miniature Countdown: combine the given numbers with `+ - * /`, each
//! exactly once, to hit the target. Rewards are exact-match binary and
//! evaluated in rational arithmetic.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use super::boxed::parse_boxed;
use crate::error::{Error, Result};
use crate::rng::{Domain, RngStream};
use crate::types::Token;

pub const MIN_NUMBER: i64 = 1;
pub const MAX_NUMBER: i64 = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CountdownInstance {
    pub prompt_id: u32,
    pub numbers: Vec<i64>,
    pub target: i64,
}

impl CountdownInstance {
    /// Validates sizes and ranges and checks that the target is reachable.
    pub fn new(prompt_id: u32, numbers: Vec<i64>, target: i64) -> Result<Self> {
        if !(3..=4).contains(&numbers.len()) {
            return Err(Error::Invalid(format!(
                "countdown instance needs 3 or 4 numbers, got {}",
                numbers.len()
            )));
        }
        if let Some(n) = numbers.iter().find(|n| !(MIN_NUMBER..=MAX_NUMBER).contains(*n)) {
            return Err(Error::Invalid(format!(
                "number {n} outside [{MIN_NUMBER}, {MAX_NUMBER}]"
            )));
        }
        if !has_solution(&numbers, target) {
            return Err(Error::Invalid(format!(
                "target {target} is unreachable from {numbers:?}"
            )));
        }
        Ok(Self {
            prompt_id,
            numbers,
            target,
        })
    }
}

/// Exact rational with positive denominator, in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    num: i128,
    den: i128,
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.abs()
}

impl Rational {
    pub fn int(n: i64) -> Self {
        Self {
            num: n as i128,
            den: 1,
        }
    }

    fn new(num: i128, den: i128) -> Option<Self> {
        if den == 0 {
            return None;
        }
        let g = gcd(num, den).max(1);
        let sign = if den < 0 { -1 } else { 1 };
        Some(Self {
            num: sign * num / g,
            den: sign * den / g,
        })
    }

    pub fn is_integer(self) -> bool {
        self.den == 1
    }

    pub fn apply(self, op: Op, rhs: Self) -> Option<Self> {
        let (a, b, c, d) = (self.num, self.den, rhs.num, rhs.den);
        match op {
            Op::Add => Self::new(a.checked_mul(d)?.checked_add(c.checked_mul(b)?)?, b.checked_mul(d)?),
            Op::Sub => Self::new(a.checked_mul(d)?.checked_sub(c.checked_mul(b)?)?, b.checked_mul(d)?),
            Op::Mul => Self::new(a.checked_mul(c)?, b.checked_mul(d)?),
            Op::Div => Self::new(a.checked_mul(d)?, b.checked_mul(c)?),
        }
    }

    pub fn equals_int(self, n: i64) -> bool {
        self.den == 1 && self.num == n as i128
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
}

impl Op {
    pub const ALL: [Op; 4] = [Op::Add, Op::Sub, Op::Mul, Op::Div];

    pub fn symbol(self) -> char {
        match self {
            Op::Add => '+',
            Op::Sub => '-',
            Op::Mul => '*',
            Op::Div => '/',
        }
    }
}

/// Arithmetic expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(i64),
    Bin(Op, alloc::boxed::Box<Expr>, alloc::boxed::Box<Expr>),
}

impl Expr {
    /// Exact value; `None` on division by zero, overflow, or (when
    /// `integer_only`) a non-integer intermediate.
    pub fn eval(&self, integer_only: bool) -> Option<Rational> {
        let v = match self {
            Expr::Num(n) => Rational::int(*n),
            Expr::Bin(op, l, r) => l.eval(integer_only)?.apply(*op, r.eval(integer_only)?)?,
        };
        (!integer_only || v.is_integer()).then_some(v)
    }

    pub fn leaves(&self, out: &mut Vec<i64>) {
        match self {
            Expr::Num(n) => out.push(*n),
            Expr::Bin(_, l, r) => {
                l.leaves(out);
                r.leaves(out);
            }
        }
    }

    /// Fully parenthesized rendering.
    pub fn render(&self) -> String {
        let mut s = String::new();
        self.render_into(&mut s);
        s
    }

    fn render_into(&self, s: &mut String) {
        match self {
            Expr::Num(n) => {
                let _ = write!(s, "{n}");
            }
            Expr::Bin(op, l, r) => {
                s.push('(');
                l.render_into(s);
                s.push(op.symbol());
                r.render_into(s);
                s.push(')');
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Lexeme {
    Num(i64),
    Op(Op),
    Open,
    Close,
}

fn lex(text: &str) -> Option<Vec<Lexeme>> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            c if c.is_whitespace() => {}
            '0'..='9' => {
                let mut n = c.to_digit(10)? as i64;
                while let Some(d) = chars.peek().and_then(|d| d.to_digit(10)) {
                    n = n.checked_mul(10)?.checked_add(d as i64)?;
                    chars.next();
                }
                out.push(Lexeme::Num(n));
            }
            '+' => out.push(Lexeme::Op(Op::Add)),
            '-' | '\u{2212}' => out.push(Lexeme::Op(Op::Sub)),
            '*' | '\u{00d7}' => out.push(Lexeme::Op(Op::Mul)),
            '/' | '\u{00f7}' => out.push(Lexeme::Op(Op::Div)),
            '(' => out.push(Lexeme::Open),
            ')' => out.push(Lexeme::Close),
            _ => return None,
        }
    }
    Some(out)
}

struct Parser {
    lexemes: Vec<Lexeme>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<Lexeme> {
        self.lexemes.get(self.pos).copied()
    }

    fn expr(&mut self) -> Option<Expr> {
        let mut lhs = self.term()?;
        while let Some(Lexeme::Op(op @ (Op::Add | Op::Sub))) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, lhs.into(), rhs.into());
        }
        Some(lhs)
    }

    fn term(&mut self) -> Option<Expr> {
        let mut lhs = self.factor()?;
        while let Some(Lexeme::Op(op @ (Op::Mul | Op::Div))) = self.peek() {
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Expr::Bin(op, lhs.into(), rhs.into());
        }
        Some(lhs)
    }

    fn factor(&mut self) -> Option<Expr> {
        match self.peek()? {
            Lexeme::Num(n) => {
                self.pos += 1;
                Some(Expr::Num(n))
            }
            Lexeme::Open => {
                self.pos += 1;
                let e = self.expr()?;
                (self.peek()? == Lexeme::Close).then(|| self.pos += 1)?;
                Some(e)
            }
            _ => None,
        }
    }
}

/// Parses an infix expression with the usual precedence. Unary minus is
/// not part of the grammar.
pub fn parse_expression(text: &str) -> Option<Expr> {
    let mut p = Parser {
        lexemes: lex(text)?,
        pos: 0,
    };
    let e = p.expr()?;
    (p.pos == p.lexemes.len()).then_some(e)
}

/// Validity rules beyond the default exact-rational evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CountdownRules {
    /// Reject expressions with a non-integer intermediate value.
    pub integer_only: bool,
}

fn sorted(v: &[i64]) -> Vec<i64> {
    let mut s = v.to_vec();
    s.sort_unstable();
    s
}

/// Binary reward for a rendered response.
pub fn countdown_reward(instance: &CountdownInstance, response_text: &str) -> f64 {
    countdown_reward_with(instance, response_text, CountdownRules::default())
}

pub fn countdown_reward_with(instance: &CountdownInstance, response_text: &str, rules: CountdownRules) -> f64 {
    let Some(expr) = parse_boxed(response_text).and_then(parse_expression) else {
        return 0.0;
    };
    let mut leaves = Vec::new();
    expr.leaves(&mut leaves);
    if sorted(&leaves) != sorted(&instance.numbers) {
        return 0.0;
    }
    match expr.eval(rules.integer_only) {
        Some(v) if v.equals_int(instance.target) => 1.0,
        _ => 0.0,
    }
}

fn search(pool: &[(Rational, Expr)], target: i64, out: &mut Vec<Expr>, first_only: bool) {
    if first_only && !out.is_empty() {
        return;
    }
    if pool.len() == 1 {
        if pool[0].0.equals_int(target) {
            out.push(pool[0].1.clone());
        }
        return;
    }
    let n = pool.len();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            for op in Op::ALL {
                let Some(v) = pool[i].0.apply(op, pool[j].0) else {
                    continue;
                };
                let e = Expr::Bin(op, pool[i].1.clone().into(), pool[j].1.clone().into());
                let mut next: Vec<(Rational, Expr)> = pool
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != i && *k != j)
                    .map(|(_, x)| x.clone())
                    .collect();
                next.push((v, e));
                search(&next, target, out, first_only);
                if first_only && !out.is_empty() {
                    return;
                }
            }
        }
    }
}

/// Every expression tree (up to the ordered-pair enumeration) that uses
/// each number exactly once and evaluates to `target`.
pub fn solve(numbers: &[i64], target: i64) -> Vec<Expr> {
    let pool: Vec<_> = numbers.iter().map(|n| (Rational::int(*n), Expr::Num(*n))).collect();
    let mut out = Vec::new();
    search(&pool, target, &mut out, false);
    out
}

pub fn has_solution(numbers: &[i64], target: i64) -> bool {
    let pool: Vec<_> = numbers.iter().map(|n| (Rational::int(*n), Expr::Num(*n))).collect();
    let mut out = Vec::new();
    search(&pool, target, &mut out, true);
    !out.is_empty()
}

/// Parameters of the instance generator.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CountdownSpec {
    pub count: usize,
    pub num_numbers: usize,
    pub number_min: i64,
    pub number_max: i64,
    pub target_min: i64,
    pub target_max: i64,
}

impl CountdownSpec {
    pub fn new(count: usize, num_numbers: usize) -> Self {
        Self {
            count,
            num_numbers,
            number_min: MIN_NUMBER,
            number_max: MAX_NUMBER,
            target_min: 1,
            target_max: 100,
        }
    }
}

/// Deterministic dataset of solvable instances with prompt ids `0..count`.
/// Instance `k` is drawn from its own random stream, rejecting draws whose
/// target the solver cannot reach.
pub fn generate_countdown_dataset(spec: &CountdownSpec, seed: u64) -> Result<Vec<CountdownInstance>> {
    if spec.count == 0 {
        return Err(Error::Invalid("dataset count must be at least 1".into()));
    }
    if !(3..=4).contains(&spec.num_numbers) {
        return Err(Error::Invalid(format!(
            "num_numbers must be 3 or 4, got {}",
            spec.num_numbers
        )));
    }
    if spec.number_min < MIN_NUMBER || spec.number_max > MAX_NUMBER || spec.number_min > spec.number_max {
        return Err(Error::Invalid(format!(
            "number range [{}, {}] must lie within [{MIN_NUMBER}, {MAX_NUMBER}]",
            spec.number_min, spec.number_max
        )));
    }
    if spec.target_min > spec.target_max {
        return Err(Error::Invalid("target_min exceeds target_max".into()));
    }
    let mut out = Vec::with_capacity(spec.count);
    for k in 0..spec.count {
        let mut rng = RngStream::new(seed, Domain::DatasetGenerate, k as u64, 0, 0);
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::Invalid(format!(
                    "no solvable instance found for prompt {k}; widen the target range"
                )));
            }
            let numbers: Vec<i64> = (0..spec.num_numbers)
                .map(|_| rng.range_inclusive(spec.number_min, spec.number_max))
                .collect();
            let target = rng.range_inclusive(spec.target_min, spec.target_max);
            if has_solution(&numbers, target) {
                out.push(CountdownInstance {
                    prompt_id: k as u32,
                    numbers,
                    target,
                });
                break;
            }
        }
    }
    Ok(out)
}

/// Token vocabulary for Countdown responses: end-of-sequence, the numbers
/// 1..=20 as atomic tokens, four operators, parentheses and the two
/// `\boxed{` / `}` delimiters.
pub mod vocab {
    use super::*;

    pub const EOS: u32 = 0;
    pub const PLUS: u32 = 21;
    pub const MINUS: u32 = 22;
    pub const TIMES: u32 = 23;
    pub const DIVIDE: u32 = 24;
    pub const LPAREN: u32 = 25;
    pub const RPAREN: u32 = 26;
    pub const BOX_OPEN: u32 = 27;
    pub const BOX_CLOSE: u32 = 28;
    pub const SIZE: usize = 29;

    pub fn number(n: i64) -> Option<Token> {
        (MIN_NUMBER..=MAX_NUMBER).contains(&n).then_some(Token(n as u32))
    }

    pub fn op(op: Op) -> Token {
        Token(match op {
            Op::Add => PLUS,
            Op::Sub => MINUS,
            Op::Mul => TIMES,
            Op::Div => DIVIDE,
        })
    }

    pub fn symbol(t: Token) -> Option<String> {
        Some(match t.0 {
            EOS => String::new(),
            n @ 1..=20 => format!("{n}"),
            PLUS => "+".into(),
            MINUS => "-".into(),
            TIMES => "*".into(),
            DIVIDE => "/".into(),
            LPAREN => "(".into(),
            RPAREN => ")".into(),
            BOX_OPEN => "\\boxed{".into(),
            BOX_CLOSE => "}".into(),
            _ => return None,
        })
    }

    /// Space-separated rendering up to the first end-of-sequence token.
    /// Separating tokens keeps adjacent number tokens from fusing.
    pub fn render(tokens: &[Token]) -> String {
        let mut s = String::new();
        for t in tokens.iter().take_while(|t| !t.is_eos()) {
            if !s.is_empty() {
                s.push(' ');
            }
            s.push_str(&symbol(*t).unwrap_or_else(|| "?".into()));
        }
        s
    }

    /// Tokens for `\boxed{ <expr> }` followed by end-of-sequence.
    pub fn boxed_tokens(expr: &Expr) -> Option<Vec<Token>> {
        fn walk(e: &Expr, out: &mut Vec<Token>) -> Option<()> {
            match e {
                Expr::Num(n) => out.push(number(*n)?),
                Expr::Bin(op, l, r) => {
                    out.push(Token(LPAREN));
                    walk(l, out)?;
                    out.push(super::vocab::op(*op));
                    walk(r, out)?;
                    out.push(Token(RPAREN));
                }
            }
            Some(())
        }
        let mut out = alloc::vec![Token(BOX_OPEN)];
        walk(expr, &mut out)?;
        out.push(Token(BOX_CLOSE));
        out.push(Token(EOS));
        Some(out)
    }
}

/// Position-conditioned policy whose logits favour the response layout
/// `\boxed{ n op n op n }` followed by end-of-sequence: at each slot the
/// tokens of the expected class get logit `bias`, with number slots
/// favouring the instance's own numbers. Everything else starts at 0, so
/// every response stays reachable. `bias = 0` is the uniform policy.
pub fn format_prior_policy(
    instances: &[CountdownInstance],
    max_tokens: usize,
    bias: f64,
) -> Result<crate::policy::TabularPolicy> {
    use crate::policy::{Conditioning, TabularPolicy};

    let mut policy = TabularPolicy::uniform(instances.len(), vocab::SIZE, max_tokens, Conditioning::Position)?;
    for (p, inst) in instances.iter().enumerate() {
        let k = inst.numbers.len();
        for pos in 0..max_tokens {
            let favoured: Vec<u32> = if pos == 0 {
                alloc::vec![vocab::BOX_OPEN]
            } else if pos < 2 * k {
                if pos % 2 == 1 {
                    inst.numbers.iter().map(|n| *n as u32).collect()
                } else {
                    alloc::vec![vocab::PLUS, vocab::MINUS, vocab::TIMES, vocab::DIVIDE]
                }
            } else if pos == 2 * k {
                alloc::vec![vocab::BOX_CLOSE]
            } else {
                alloc::vec![vocab::EOS]
            };
            let off = policy.row_offset(p, pos);
            for t in favoured {
                policy.params_mut()[off + t as usize] = bias;
            }
        }
    }
    Ok(policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn inst(numbers: &[i64], target: i64) -> CountdownInstance {
        CountdownInstance::new(0, numbers.to_vec(), target).unwrap()
    }

    #[test]
    fn reward_examples() {
        let i = inst(&[2, 3, 4], 20);
        assert_eq!(countdown_reward(&i, "\\boxed{(2+3)*4}"), 1.0);
        assert_eq!(countdown_reward(&i, "\\boxed{2*3*4}"), 0.0);
        assert_eq!(countdown_reward(&i, "(2+3)*4"), 0.0);
        assert_eq!(countdown_reward(&i, "\\boxed{4*(3+2)}"), 1.0);
        // number reuse and omission
        assert_eq!(countdown_reward(&i, "\\boxed{(2+3)*4+0}"), 0.0);
        assert_eq!(countdown_reward(&i, "\\boxed{5*4}"), 0.0);
        // rendered token stream
        assert_eq!(countdown_reward(&i, "\\boxed{ ( 2 + 3 ) * 4 }"), 1.0);
    }

    #[test]
    fn division_rules() {
        // 8 / (3 - 8/3) = 24 needs a fractional intermediate
        let i = inst(&[8, 3, 8, 3], 24);
        assert_eq!(countdown_reward(&i, "\\boxed{8/(3-8/3)}"), 1.0);
        let strict = CountdownRules { integer_only: true };
        assert_eq!(countdown_reward_with(&i, "\\boxed{8/(3-8/3)}", strict), 0.0);
        // division by zero scores 0 without panicking
        let j = inst(&[3, 3, 4], 36);
        assert_eq!(countdown_reward(&j, "\\boxed{4/(3-3)}"), 0.0);
    }

    #[test]
    fn parser_rejects_garbage() {
        for bad in ["", "(", "2+", "2 3", "+2", "2)", "((2)", "-2+3", "2^3", "2..3"] {
            assert!(parse_expression(bad).is_none(), "{bad}");
        }
        let e = parse_expression("2+3*4").unwrap();
        assert!(e.eval(false).unwrap().equals_int(14));
        let e = parse_expression("20-4-3").unwrap();
        assert!(e.eval(false).unwrap().equals_int(13));
    }

    #[test]
    fn reward_is_deterministic() {
        let i = inst(&[5, 6, 7], 37);
        let text = "\\boxed{5*6+7}";
        assert_eq!(countdown_reward(&i, text), countdown_reward(&i, text));
        assert_eq!(countdown_reward(&i, text), 1.0);
    }

    #[test]
    fn instance_validation() {
        assert!(CountdownInstance::new(0, vec![1, 2], 3).is_err());
        assert!(CountdownInstance::new(0, vec![1, 2, 30], 33).is_err());
        assert!(CountdownInstance::new(0, vec![1, 1, 1], 100).is_err());
    }

    #[test]
    fn solutions_score_one() {
        let numbers = [2, 3, 4];
        let i = inst(&numbers, 20);
        let sols = solve(&numbers, 20);
        assert!(!sols.is_empty());
        for s in &sols {
            assert_eq!(countdown_reward(&i, &format!("\\boxed{{{}}}", s.render())), 1.0);
            let toks = vocab::boxed_tokens(s).unwrap();
            assert_eq!(countdown_reward(&i, &vocab::render(&toks)), 1.0);
        }
    }

    #[test]
    fn generator_is_deterministic_and_solvable() {
        let spec = CountdownSpec::new(100, 3);
        let a = generate_countdown_dataset(&spec, 5).unwrap();
        let b = generate_countdown_dataset(&spec, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        for (k, i) in a.iter().enumerate() {
            assert_eq!(i.prompt_id as usize, k);
            assert_eq!(i.numbers.len(), 3);
            assert!(!solve(&i.numbers, i.target).is_empty());
        }
        assert_ne!(a, generate_countdown_dataset(&spec, 6).unwrap());
        let four = generate_countdown_dataset(&CountdownSpec::new(10, 4), 1).unwrap();
        assert!(four.iter().all(|i| i.numbers.len() == 4));
    }

    #[test]
    fn format_prior_layout() {
        let i = inst(&[2, 3, 4], 20);
        let p = format_prior_policy(std::slice::from_ref(&i), 12, 10.0).unwrap();
        let greedy = p.argmax_trajectory(0).unwrap();
        let text = vocab::render(greedy.tokens());
        assert!(text.starts_with("\\boxed{ 2 + 2 + 2 }"), "{text}");
        assert_eq!(greedy.len(), 8);
        let flat = format_prior_policy(&[i], 12, 0.0).unwrap();
        assert!(flat.params().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn vocab_render() {
        let toks = [Token(vocab::BOX_OPEN), Token(1), Token(2), Token(vocab::BOX_CLOSE), Token(0), Token(5)];
        assert_eq!(vocab::render(&toks), "\\boxed{ 1 2 }");
        let i = inst(&[12, 1, 1], 14);
        // adjacent number tokens must not fuse into 12
        assert_eq!(countdown_reward(&i, &vocab::render(&toks)), 0.0);
    }
}
