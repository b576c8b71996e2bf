//! Tabular autoregressive softmax policy with closed-form log-probability
//! gradients.
//!
//! The logit table is indexed by `(prompt, context, token)`. With
//! [`Conditioning::Position`] the context is the position inside the
//! response; with [`Conditioning::PrefixBigram`] it is the id of the
//! previous token (end-of-sequence id 0 doubles as the start context,
//! since it can never precede another token).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::types::{Token, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Conditioning {
    Position,
    PrefixBigram,
}

impl Conditioning {
    pub fn name(self) -> &'static str {
        match self {
            Conditioning::Position => "position",
            Conditioning::PrefixBigram => "prefix_bigram",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "position" => Some(Conditioning::Position),
            "prefix_bigram" => Some(Conditioning::PrefixBigram),
            _ => None,
        }
    }
}

/// Gradient of one token's log-probability: non-zero only on the logit
/// row starting at `offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGrad {
    pub offset: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    num_prompts: usize,
    vocab_size: usize,
    max_tokens: usize,
    conditioning: Conditioning,
    logits: Vec<f64>,
}

/// Numerically stable `log softmax`.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(row.iter().map(|z| libm::exp(z - max)).sum::<f64>());
    row.iter().map(|z| z - lse).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    log_softmax(row).into_iter().map(libm::exp).collect()
}

impl TabularPolicy {
    pub fn uniform(
        num_prompts: usize,
        vocab_size: usize,
        max_tokens: usize,
        conditioning: Conditioning,
    ) -> Result<Self> {
        let len = Self::table_len(num_prompts, vocab_size, max_tokens, conditioning)?;
        Ok(Self {
            num_prompts,
            vocab_size,
            max_tokens,
            conditioning,
            logits: vec![0.0; len],
        })
    }

    pub fn from_logits(
        num_prompts: usize,
        vocab_size: usize,
        max_tokens: usize,
        conditioning: Conditioning,
        logits: Vec<f64>,
    ) -> Result<Self> {
        let len = Self::table_len(num_prompts, vocab_size, max_tokens, conditioning)?;
        if logits.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "expected {len} logits, got {}",
                logits.len()
            )));
        }
        if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
            return Err(Error::Invalid(format!("logit {i} is not finite")));
        }
        Ok(Self {
            num_prompts,
            vocab_size,
            max_tokens,
            conditioning,
            logits,
        })
    }

    fn table_len(
        num_prompts: usize,
        vocab_size: usize,
        max_tokens: usize,
        conditioning: Conditioning,
    ) -> Result<usize> {
        if vocab_size < 2 {
            return Err(Error::Invalid("vocab_size must be at least 2".into()));
        }
        if max_tokens < 1 || num_prompts < 1 {
            return Err(Error::Invalid(
                "max_tokens and num_prompts must be at least 1".into(),
            ));
        }
        let contexts = match conditioning {
            Conditioning::Position => max_tokens,
            Conditioning::PrefixBigram => vocab_size,
        };
        Ok(num_prompts * contexts * vocab_size)
    }

    pub fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn conditioning(&self) -> Conditioning {
        self.conditioning
    }

    pub fn num_contexts(&self) -> usize {
        self.logits.len() / (self.num_prompts * self.vocab_size)
    }

    /// Flat parameter vector, row-major in `(prompt, context, token)`.
    pub fn params(&self) -> &[f64] {
        &self.logits
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    /// Offset of the logit row for `(prompt, context)`.
    pub fn row_offset(&self, prompt: usize, context: usize) -> usize {
        (prompt * self.num_contexts() + context) * self.vocab_size
    }

    fn context(&self, position: usize, prev: Token) -> usize {
        match self.conditioning {
            Conditioning::Position => position,
            Conditioning::PrefixBigram => prev.id(),
        }
    }

    fn check_prompt(&self, prompt_id: u32) -> Result<usize> {
        let p = prompt_id as usize;
        if p >= self.num_prompts {
            return Err(Error::Invalid(format!(
                "prompt {prompt_id} outside policy table of {} prompts",
                self.num_prompts
            )));
        }
        Ok(p)
    }

    /// Row offsets visited by `tokens`, validating token ids and positions.
    fn offsets(&self, prompt_id: u32, tokens: &[Token]) -> Result<Vec<usize>> {
        let p = self.check_prompt(prompt_id)?;
        if tokens.len() > self.max_tokens {
            return Err(Error::Invalid(format!(
                "trajectory length {} exceeds max_tokens {}",
                tokens.len(),
                self.max_tokens
            )));
        }
        let mut prev = Token::EOS;
        tokens
            .iter()
            .enumerate()
            .map(|(pos, t)| {
                if t.id() >= self.vocab_size {
                    return Err(Error::TokenOutOfRange {
                        token: t.0,
                        vocab_size: self.vocab_size,
                    });
                }
                let off = self.row_offset(p, self.context(pos, prev));
                prev = *t;
                Ok(off)
            })
            .collect()
    }

    /// Samples one response from the temperature-scaled, top-p truncated
    /// distribution. The recorded log-probabilities are those of the
    /// untruncated temperature-1 policy.
    pub fn sample_trajectory(
        &self,
        prompt_id: u32,
        temperature: f64,
        top_p: f64,
        rng: &mut RngStream,
    ) -> Result<Trajectory> {
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(Error::OutOfRange {
                name: "temperature",
                value: temperature,
            });
        }
        if !(top_p > 0.0 && top_p <= 1.0) {
            return Err(Error::OutOfRange {
                name: "top_p",
                value: top_p,
            });
        }
        let p = self.check_prompt(prompt_id)?;
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        let mut prev = Token::EOS;
        let mut order: Vec<usize> = (0..self.vocab_size).collect();
        for pos in 0..self.max_tokens {
            let off = self.row_offset(p, self.context(pos, prev));
            let row = &self.logits[off..off + self.vocab_size];
            let scaled: Vec<f64> = row.iter().map(|z| z / temperature).collect();
            let probs = softmax(&scaled);
            let token = sample_top_p(&probs, top_p, &mut order, rng);
            let lp = log_softmax(row)[token];
            let token = Token(token as u32);
            tokens.push(token);
            logprobs.push(lp);
            prev = token;
            if token.is_eos() {
                break;
            }
        }
        Trajectory::new(prompt_id, tokens, logprobs, self.max_tokens)
    }

    /// Most likely response under the policy.
    pub fn argmax_trajectory(&self, prompt_id: u32) -> Result<Trajectory> {
        let p = self.check_prompt(prompt_id)?;
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        let mut prev = Token::EOS;
        for pos in 0..self.max_tokens {
            let off = self.row_offset(p, self.context(pos, prev));
            let row = &self.logits[off..off + self.vocab_size];
            let best = (0..self.vocab_size)
                .fold(0, |b, v| if row[v] > row[b] { v } else { b });
            let token = Token(best as u32);
            tokens.push(token);
            logprobs.push(log_softmax(row)[best]);
            prev = token;
            if token.is_eos() {
                break;
            }
        }
        Trajectory::new(prompt_id, tokens, logprobs, self.max_tokens)
    }

    /// Per-token temperature-1 log-probabilities of a response.
    pub fn logprob(&self, trajectory: &Trajectory) -> Result<Vec<f64>> {
        self.logprob_tokens(trajectory.prompt_id(), trajectory.tokens())
    }

    pub fn logprob_tokens(&self, prompt_id: u32, tokens: &[Token]) -> Result<Vec<f64>> {
        let offsets = self.offsets(prompt_id, tokens)?;
        Ok(offsets
            .iter()
            .zip(tokens)
            .map(|(off, t)| log_softmax(&self.logits[*off..*off + self.vocab_size])[t.id()])
            .collect())
    }

    /// Per-token gradient of `log pi(t | prompt, context)` with respect to
    /// the logit row: `1{v == t} - softmax(row)[v]`.
    pub fn logprob_grad(&self, trajectory: &Trajectory) -> Result<Vec<RowGrad>> {
        Ok(self.logprob_with_grad(trajectory)?.1)
    }

    /// Log-probabilities and their gradients in one pass.
    pub fn logprob_with_grad(&self, trajectory: &Trajectory) -> Result<(Vec<f64>, Vec<RowGrad>)> {
        let tokens = trajectory.tokens();
        let offsets = self.offsets(trajectory.prompt_id(), tokens)?;
        let mut lps = Vec::with_capacity(tokens.len());
        let mut grads = Vec::with_capacity(tokens.len());
        for (off, t) in offsets.into_iter().zip(tokens) {
            let ls = log_softmax(&self.logits[off..off + self.vocab_size]);
            lps.push(ls[t.id()]);
            let values = ls
                .iter()
                .enumerate()
                .map(|(v, l)| if v == t.id() { 1.0 } else { 0.0 } - libm::exp(*l))
                .collect();
            grads.push(RowGrad { offset: off, values });
        }
        Ok((lps, grads))
    }
}

/// Index drawn from `probs` restricted to the smallest high-probability
/// prefix whose mass reaches `top_p`. Ties are broken by token id.
fn sample_top_p(probs: &[f64], top_p: f64, order: &mut [usize], rng: &mut RngStream) -> usize {
    for (i, o) in order.iter_mut().enumerate() {
        *o = i;
    }
    order.sort_by(|a, b| probs[*b].total_cmp(&probs[*a]).then(a.cmp(b)));
    let mut kept = 0;
    let mut mass = 0.0;
    for &i in order.iter() {
        mass += probs[i];
        kept += 1;
        if mass >= top_p {
            break;
        }
    }
    let u = rng.unit() * mass;
    let mut acc = 0.0;
    for &i in &order[..kept] {
        acc += probs[i];
        if u < acc {
            return i;
        }
    }
    // Rounding put u at the very top of the kept mass.
    order[..kept]
        .iter()
        .rev()
        .copied()
        .find(|i| probs[*i] > 0.0)
        .unwrap_or(order[0])
}
