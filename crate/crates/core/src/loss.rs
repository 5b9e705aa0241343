//! Pairwise losses on binary codes and their per-bit quadratic form.
//!
//! Every loss here depends on a pair of codes only through their inner product
//! `s = z_i . z_j` (equivalently the Hamming distance `(m - s) / 2`). Fixing all
//! bits but one, the loss on the remaining bit pair takes only two values, one
//! for agreeing bits and one for disagreeing bits, so it is exactly
//! `a * z1 * z2 + c` with `a = (l11 - l_11) / 2` and `c = (l11 + l_11) / 2`.
//! Any type implementing [`PairLoss`] gets this reduction through
//! [`quadratic_coeff`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default elastic-embedding trade-off.
pub const DEFAULT_EE_LAMBDA: f64 = 100.0;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("inner product {s} out of range for {m} bits")]
    OutOfRange { s: i64, m: usize },
    #[error("inner product {s} has the wrong parity for {m} bits")]
    Parity { s: i64, m: usize },
    #[error("bit count must be at least 1")]
    NoBits,
    #[error("bit index {k} out of range for {m} bits")]
    BitIndex { k: usize, m: usize },
    #[error("lambda must be positive and finite, got {0}")]
    BadLambda(f64),
    #[error("unknown loss {0:?}; expected one of: ksh, bre, splh, ee, exph")]
    UnknownLoss(String),
}

/// A loss on a pair of `m`-bit codes, expressed through their inner product.
pub trait PairLoss {
    /// Code length `m`.
    fn bits(&self) -> usize;

    /// Loss for inner product `s` and affinity `y`. Callers guarantee
    /// `|s| <= m` and `s = m (mod 2)`.
    fn eval(&self, s: i64, y: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossTag {
    Ksh,
    Bre,
    Splh,
    Ee,
    ExpH,
}

impl LossTag {
    pub const ALL: [LossTag; 5] = [LossTag::Ksh, LossTag::Bre, LossTag::Splh, LossTag::Ee, LossTag::ExpH];

    pub fn token(self) -> &'static str {
        match self {
            LossTag::Ksh => "ksh",
            LossTag::Bre => "bre",
            LossTag::Splh => "splh",
            LossTag::Ee => "ee",
            LossTag::ExpH => "exph",
        }
    }
}

impl fmt::Display for LossTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for LossTag {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LossTag::ALL
            .into_iter()
            .find(|t| t.token() == s)
            .ok_or_else(|| LossError::UnknownLoss(s.to_string()))
    }
}

/// One of the built-in losses at a fixed code length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossKind {
    tag: LossTag,
    lambda: f64,
    m: usize,
}

impl LossKind {
    pub fn new(tag: LossTag, m: usize) -> Result<Self, LossError> {
        Self::with_lambda(tag, m, DEFAULT_EE_LAMBDA)
    }

    /// `lambda` only affects [`LossTag::Ee`].
    pub fn with_lambda(tag: LossTag, m: usize, lambda: f64) -> Result<Self, LossError> {
        if m == 0 {
            return Err(LossError::NoBits);
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(LossError::BadLambda(lambda));
        }
        Ok(Self { tag, lambda, m })
    }

    pub fn tag(&self) -> LossTag {
        self.tag
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Checked [`PairLoss::eval`].
    pub fn pair_loss(&self, s: i64, y: f64) -> Result<f64, LossError> {
        check_inner_product(s, self.m)?;
        Ok(self.eval(s, y))
    }
}

impl PairLoss for LossKind {
    fn bits(&self) -> usize {
        self.m
    }

    fn eval(&self, s: i64, y: f64) -> f64 {
        let m = self.m as f64;
        let s = s as f64;
        let dh = (m - s) / 2.0;
        match self.tag {
            LossTag::Ksh => (s - m * y).powi(2),
            LossTag::Bre => {
                let target = if y > 0.0 { 0.0 } else { 1.0 };
                (dh / m - target).powi(2)
            }
            LossTag::Splh => (-y * s / m).exp(),
            LossTag::Ee => {
                if y > 0.0 {
                    dh
                } else if y < 0.0 {
                    self.lambda * (-dh / m).exp()
                } else {
                    0.0
                }
            }
            LossTag::ExpH => {
                let shift = if y < 0.0 { m } else { 0.0 };
                ((y * dh + shift) / m).exp()
            }
        }
    }
}

fn check_inner_product(s: i64, m: usize) -> Result<(), LossError> {
    if s.unsigned_abs() > m as u64 {
        return Err(LossError::OutOfRange { s, m });
    }
    if (s - m as i64).rem_euclid(2) != 0 {
        return Err(LossError::Parity { s, m });
    }
    Ok(())
}

/// Bit `k` is being optimised; the other `m - 1` bits of the two codes are
/// fixed and summarised by their inner product `sbar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitContext {
    pub k: usize,
    pub sbar: i64,
    pub y: f64,
}

impl BitContext {
    pub fn new(k: usize, sbar: i64, y: f64, m: usize) -> Result<Self, LossError> {
        if m == 0 {
            return Err(LossError::NoBits);
        }
        if k >= m {
            return Err(LossError::BitIndex { k, m });
        }
        check_inner_product(sbar, m - 1)?;
        Ok(Self { k, sbar, y })
    }
}

/// `g(z1, z2) = a * z1 * z2 + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadCoeff {
    pub a: f64,
    pub c: f64,
}

impl QuadCoeff {
    pub fn eval(&self, z1: i8, z2: i8) -> f64 {
        self.a * f64::from(z1 * z2) + self.c
    }
}

/// Both loss values for one bit pair: `(agree, disagree)`.
#[inline]
pub fn bit_losses<L: PairLoss + ?Sized>(loss: &L, sbar: i64, y: f64) -> (f64, f64) {
    (loss.eval(sbar + 1, y), loss.eval(sbar - 1, y))
}

/// Quadratic form of the single-bit restriction of `loss`.
pub fn quadratic_coeff<L: PairLoss + ?Sized>(loss: &L, ctx: &BitContext) -> Result<QuadCoeff, LossError> {
    let m = loss.bits();
    BitContext::new(ctx.k, ctx.sbar, ctx.y, m)?;
    let (agree, disagree) = bit_losses(loss, ctx.sbar, ctx.y);
    Ok(QuadCoeff {
        a: 0.5 * (agree - disagree),
        c: 0.5 * (agree + disagree),
    })
}
