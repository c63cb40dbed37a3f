//! Exact rational helpers for the provisioning cost model.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub fn int(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// Parses `"2"`, `"1.5"`, `"-0.25"` or `"3/2"` without rounding.
pub fn parse_exact(s: &str) -> Result<BigRational> {
    let bad = || Error::Config(format!("`{s}` is not an exact decimal or fraction"));
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| bad())?;
        let d: BigInt = d.trim().parse().map_err(|_| bad())?;
        if d.is_zero() {
            return Err(bad());
        }
        return Ok(BigRational::new(n, d));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (whole, frac) = body.split_once('.').unwrap_or((body, ""));
    if whole.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !whole.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits = format!("{whole}{frac}");
    let n: BigInt = digits.trim_start_matches('0').parse().unwrap_or_else(|_| BigInt::zero());
    let d = BigInt::from(10u32).pow(frac.len() as u32);
    let r = BigRational::new(n, d);
    Ok(if neg { -r } else { r })
}

/// The decimal a finite `f64` prints as, read back exactly. `1.5` becomes
/// 3/2 and `0.1` becomes 1/10, not the nearest binary fraction.
pub fn from_f64(x: f64) -> Result<BigRational> {
    if !x.is_finite() {
        return Err(Error::Config(format!("{x} is not finite")));
    }
    let s = format!("{x}");
    match s.split_once('e') {
        None => parse_exact(&s),
        Some((m, e)) => {
            let m = parse_exact(m)?;
            let e: i32 = e.parse().map_err(|_| Error::Config(format!("bad exponent in {s}")))?;
            let scale = BigRational::from_integer(BigInt::from(10u32).pow(e.unsigned_abs()));
            Ok(if e >= 0 { m * scale } else { m / scale })
        }
    }
}

/// Decimal rendering, exact when the expansion terminates within
/// `max_frac` digits and truncated toward zero otherwise.
pub fn format_exact(r: &BigRational, max_frac: usize) -> String {
    let neg = r.is_negative();
    let a = r.abs();
    let whole = a.to_integer();
    let mut rem = a.numer() - &whole * a.denom();
    let mut out = format!("{}{}", if neg { "-" } else { "" }, whole);
    if !rem.is_zero() {
        out.push('.');
        let ten = BigInt::from(10u32);
        for _ in 0..max_frac {
            if rem.is_zero() {
                break;
            }
            rem *= &ten;
            let digit = &rem / a.denom();
            rem -= &digit * a.denom();
            out.push_str(&digit.to_string());
        }
    }
    out
}

pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

pub fn pow(base: &BigRational, exp: u64) -> BigRational {
    let mut acc = BigRational::one();
    let mut b = base.clone();
    let mut e = exp;
    while e > 0 {
        if e & 1 == 1 {
            acc *= &b;
        }
        b = &b * &b;
        e >>= 1;
    }
    acc
}
