//! Model specifications and token-cost arithmetic.
//!
//! Money is tracked as integer micro-units ([`Currency`]) so that billing sums
//! and cost comparisons are exact and order independent. Prices are quoted in
//! micro-units per token.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An exact amount of money in integer micro-units.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Currency(pub i64);

impl Currency {
    pub const ZERO: Currency = Currency(0);

    pub fn micros(self) -> i64 {
        self.0
    }

    /// Value in whole units, for display only.
    pub fn as_units(self) -> f64 {
        self.0 as f64 / 1e6
    }
}

impl Add for Currency {
    type Output = Currency;
    fn add(self, rhs: Currency) -> Currency {
        Currency(self.0 + rhs.0)
    }
}

impl AddAssign for Currency {
    fn add_assign(&mut self, rhs: Currency) {
        self.0 += rhs.0;
    }
}

impl Sub for Currency {
    type Output = Currency;
    fn sub(self, rhs: Currency) -> Currency {
        Currency(self.0 - rhs.0)
    }
}

impl Mul<u64> for Currency {
    type Output = Currency;
    fn mul(self, rhs: u64) -> Currency {
        Currency(self.0 * rhs as i64)
    }
}

impl Sum for Currency {
    fn sum<I: Iterator<Item = Currency>>(iter: I) -> Currency {
        iter.fold(Currency::ZERO, |a, b| a + b)
    }
}

impl<'a> Sum<&'a Currency> for Currency {
    fn sum<I: Iterator<Item = &'a Currency>>(iter: I) -> Currency {
        iter.copied().sum()
    }
}

impl fmt::Display for Currency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}µ", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Generative,
    Embedding,
}

/// A model available to the labeling pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub kind: ModelKind,
    /// Micro-units per input token.
    pub price_in: Currency,
    /// Micro-units per output token.
    pub price_out: Currency,
    /// Proxy for parameter count; orders the cascade.
    pub size_rank: u32,
    #[serde(default)]
    pub family: String,
}

impl ModelSpec {
    pub fn generative(name: &str, price_in: i64, price_out: i64, size_rank: u32) -> Self {
        Self {
            name: name.to_string(),
            kind: ModelKind::Generative,
            price_in: Currency(price_in),
            price_out: Currency(price_out),
            size_rank,
            family: String::new(),
        }
    }

    pub fn embedding(name: &str, price_in: i64, size_rank: u32) -> Self {
        Self {
            name: name.to_string(),
            kind: ModelKind::Embedding,
            price_in: Currency(price_in),
            price_out: Currency::ZERO,
            size_rank,
            family: String::new(),
        }
    }

    pub fn with_family(mut self, family: &str) -> Self {
        self.family = family.to_string();
        self
    }
}

/// Registered models, looked up by name. Size ranks are unique.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelPool {
    models: Vec<ModelSpec>,
}

impl ModelPool {
    pub fn new(models: Vec<ModelSpec>) -> Result<Self> {
        for (i, m) in models.iter().enumerate() {
            if m.price_in.0 < 0 || m.price_out.0 < 0 {
                return Err(Error::Config(format!("model `{}` has a negative price", m.name)));
            }
            if m.size_rank == 0 {
                return Err(Error::Config(format!("model `{}` needs a positive size_rank", m.name)));
            }
            for other in &models[..i] {
                if other.name == m.name {
                    return Err(Error::Config(format!("duplicate model `{}`", m.name)));
                }
                if other.size_rank == m.size_rank {
                    return Err(Error::Config(format!(
                        "models `{}` and `{}` share size_rank {}",
                        other.name, m.name, m.size_rank
                    )));
                }
            }
        }
        Ok(Self { models })
    }

    pub fn get(&self, name: &str) -> Result<&ModelSpec> {
        self.models
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::UnknownModel(name.to_string()))
    }

    pub fn models(&self) -> &[ModelSpec] {
        &self.models
    }

    /// Generative models in ascending size order.
    pub fn generative(&self) -> Vec<&ModelSpec> {
        let mut v: Vec<&ModelSpec> = self
            .models
            .iter()
            .filter(|m| m.kind == ModelKind::Generative)
            .collect();
        v.sort_by_key(|m| m.size_rank);
        v
    }

    pub fn embedding(&self) -> Vec<&ModelSpec> {
        let mut v: Vec<&ModelSpec> = self
            .models
            .iter()
            .filter(|m| m.kind == ModelKind::Embedding)
            .collect();
        v.sort_by_key(|m| m.size_rank);
        v
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        Self {
            input_tokens,
            output_tokens,
        }
    }

    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;
    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage::new(
            self.input_tokens + rhs.input_tokens,
            self.output_tokens + rhs.output_tokens,
        )
    }
}

/// Billed cost of one request: `price_in * input + price_out * output`.
pub fn request_cost(spec: &ModelSpec, usage: TokenUsage) -> Currency {
    Currency(
        spec.price_in.0 * usage.input_tokens as i64 + spec.price_out.0 * usage.output_tokens as i64,
    )
}

/// Per-token price under a 3:1 input:output token mix.
///
/// Only used for reporting cost-reduction factors; billing goes through
/// [`request_cost`].
pub fn blended_price(spec: &ModelSpec) -> f64 {
    (3.0 * spec.price_in.0 as f64 + spec.price_out.0 as f64) / 4.0
}

/// Blended-price cost of a request with the given usage.
pub fn blended_cost(spec: &ModelSpec, usage: TokenUsage) -> f64 {
    blended_price(spec) * usage.total() as f64
}

/// Token estimate used when a backend does not report usage.
pub fn estimate_tokens(text: &str) -> u64 {
    let chars = text.chars().count() as u64;
    chars.div_ceil(4)
}
