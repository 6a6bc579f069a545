use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Monetary amount in euros, stored as integer cents so sums are exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Eur(i64);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AmountError {
    #[error("empty amount")]
    Empty,
    #[error("negative amount {0:?}")]
    Negative(String),
    #[error("malformed amount {0:?} (expected digits with an optional '.' and up to two decimals)")]
    Malformed(String),
}

impl Eur {
    pub const ZERO: Eur = Eur(0);

    pub fn from_cents(cents: i64) -> Self {
        Eur(cents)
    }

    pub fn from_euros(euros: i64) -> Self {
        Eur(euros * 100)
    }

    pub fn cents(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl FromStr for Eur {
    type Err = AmountError;

    fn from_str(raw: &str) -> Result<Self, Self::Err> {
        let s = raw.trim();
        if s.is_empty() {
            return Err(AmountError::Empty);
        }
        if let Some(rest) = s.strip_prefix('-') {
            if !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit() || c == '.') {
                return Err(AmountError::Negative(raw.to_string()));
            }
            return Err(AmountError::Malformed(raw.to_string()));
        }
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, f),
            None => (s, ""),
        };
        let digits_ok = |p: &str| p.chars().all(|c| c.is_ascii_digit());
        if whole.is_empty() || !digits_ok(whole) || !digits_ok(frac) || frac.len() > 2 {
            return Err(AmountError::Malformed(raw.to_string()));
        }
        if s.ends_with('.') {
            return Err(AmountError::Malformed(raw.to_string()));
        }
        let euros: i64 = whole
            .parse()
            .map_err(|_| AmountError::Malformed(raw.to_string()))?;
        let cents: i64 = match frac.len() {
            0 => 0,
            1 => frac.parse::<i64>().unwrap() * 10,
            _ => frac.parse().unwrap(),
        };
        euros
            .checked_mul(100)
            .and_then(|v| v.checked_add(cents))
            .map(Eur)
            .ok_or_else(|| AmountError::Malformed(raw.to_string()))
    }
}

impl fmt::Display for Eur {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl Add for Eur {
    type Output = Eur;
    fn add(self, rhs: Eur) -> Eur {
        Eur(self.0 + rhs.0)
    }
}

impl AddAssign for Eur {
    fn add_assign(&mut self, rhs: Eur) {
        self.0 += rhs.0;
    }
}

impl Sum for Eur {
    fn sum<I: Iterator<Item = Eur>>(iter: I) -> Eur {
        iter.fold(Eur::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a Eur> for Eur {
    fn sum<I: Iterator<Item = &'a Eur>>(iter: I) -> Eur {
        iter.copied().sum()
    }
}

// JSON carries euros as a plain number; cents/100 prints back as the
// shortest decimal, so the round trip is exact below 2^53 cents.
impl Serialize for Eur {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Eur {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        if !v.is_finite() {
            return Err(serde::de::Error::custom("non-finite amount"));
        }
        Ok(Eur((v * 100.0).round() as i64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_whole_and_decimal_amounts() {
        assert_eq!("100000".parse::<Eur>().unwrap(), Eur::from_euros(100000));
        assert_eq!("12.5".parse::<Eur>().unwrap().cents(), 1250);
        assert_eq!("0.07".parse::<Eur>().unwrap().cents(), 7);
        assert_eq!(" 3 ".parse::<Eur>().unwrap().cents(), 300);
    }

    #[test]
    fn rejects_negative_and_separators() {
        assert!(matches!("-5".parse::<Eur>(), Err(AmountError::Negative(_))));
        assert!(matches!("1,000".parse::<Eur>(), Err(AmountError::Malformed(_))));
        assert!(matches!("1.234".parse::<Eur>(), Err(AmountError::Malformed(_))));
        assert!(matches!("12.".parse::<Eur>(), Err(AmountError::Malformed(_))));
        assert!(matches!("".parse::<Eur>(), Err(AmountError::Empty)));
    }

    #[test]
    fn display_is_canonical() {
        assert_eq!(Eur::from_cents(123456).to_string(), "1234.56");
        assert_eq!(Eur::from_euros(80000).to_string(), "80000.00");
    }

    #[test]
    fn json_round_trip_is_exact() {
        for cents in [0, 1, 99, 123456, 987654321012] {
            let v = Eur::from_cents(cents);
            let s = serde_json::to_string(&v).unwrap();
            assert_eq!(serde_json::from_str::<Eur>(&s).unwrap(), v);
        }
    }
}
