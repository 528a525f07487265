// Copyright (c) The flexbft Contributors
// SPDX-License-Identifier: Apache-2.0

//! Scalar abstraction for the quorum calculus and exact fraction helpers.

use std::fmt::{Debug, Display};
use std::str::FromStr;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::Num;
use thiserror::Error;

/// Field-like number used by the calculus. Exact rationals are the intended
/// instantiation; `f64` works for approximate plotting.
pub trait Scalar: Num + Clone + PartialOrd + Debug {
    fn two() -> Self {
        Self::one() + Self::one()
    }

    fn half() -> Self {
        Self::one() / Self::two()
    }

    fn min_of(a: Self, b: Self) -> Self {
        if b < a {
            b
        } else {
            a
        }
    }

    fn max_of(a: Self, b: Self) -> Self {
        if b > a {
            b
        } else {
            a
        }
    }
}

impl<T: Num + Clone + PartialOrd + Debug> Scalar for T {}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cannot parse fraction {0:?}: expected \"p/q\", an integer or a decimal")]
pub struct ParseFracError(pub String);

/// Formats a ratio as `p/q`, always with an explicit denominator.
pub fn format_ratio<T: Integer + Clone + Display>(r: &Ratio<T>) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Parses `p/q`, `p` or a plain decimal such as `0.7`.
pub fn parse_ratio<T>(s: &str) -> Result<Ratio<T>, ParseFracError>
where
    T: Integer + Clone + FromStr,
{
    let s = s.trim();
    let err = || ParseFracError(s.to_string());
    if let Some((p, q)) = s.split_once('/') {
        let p: T = p.trim().parse().map_err(|_| err())?;
        let q: T = q.trim().parse().map_err(|_| err())?;
        if q.is_zero() {
            return Err(err());
        }
        return Ok(Ratio::new(p, q));
    }
    if let Some((int, frac)) = s.split_once('.') {
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let neg = int.starts_with('-');
        let digits = format!("{}{}", int.trim_start_matches('-'), frac);
        let mut numer: T = digits.parse().map_err(|_| err())?;
        if neg {
            numer = T::zero() - numer;
        }
        let ten: T = "10".parse().map_err(|_| err())?;
        let mut denom = T::one();
        for _ in 0..frac.len() {
            denom = denom * ten.clone();
        }
        return Ok(Ratio::new(numer, denom));
    }
    let v: T = s.parse().map_err(|_| err())?;
    Ok(Ratio::from_integer(v))
}

/// Serde adapter for `Ratio<i64>` fields written as `"p/q"` strings.
pub mod serde_frac {
    use super::*;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Ratio<i64>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_ratio(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Ratio<i64>, D::Error> {
        let s = String::deserialize(d)?;
        parse_ratio(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_forms() {
        assert_eq!(parse_ratio::<i64>("2/3").unwrap(), Ratio::new(2, 3));
        assert_eq!(parse_ratio::<i64>("0.7").unwrap(), Ratio::new(7, 10));
        assert_eq!(parse_ratio::<i64>("1").unwrap(), Ratio::from_integer(1));
        assert_eq!(parse_ratio::<i64>(" 6/9 ").unwrap(), Ratio::new(2, 3));
        assert!(parse_ratio::<i64>("1/0").is_err());
        assert!(parse_ratio::<i64>("abc").is_err());
        assert!(parse_ratio::<i64>("0.").is_err());
    }

    #[test]
    fn formats_with_denominator() {
        assert_eq!(format_ratio(&Ratio::from_integer(1i64)), "1/1");
        assert_eq!(format_ratio(&Ratio::new(4i64, 6)), "2/3");
    }

    #[test]
    fn scalar_helpers_work_for_floats_and_ratios() {
        assert_eq!(<f64 as Scalar>::half(), 0.5);
        assert_eq!(<Ratio<i64> as Scalar>::half(), Ratio::new(1, 2));
        assert_eq!(Scalar::min_of(Ratio::new(1i64, 3), Ratio::new(1, 4)), Ratio::new(1, 4));
    }
}
