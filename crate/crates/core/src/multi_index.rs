//! Strings over the scheduling alphabet `{0, …, n_p}`.
//!
//! A string names one sub-Markov parameter. Character `j` (1-based) selects the
//! scheduling channel evaluated at lag `j - 1`; character `0` is the constant
//! channel `p_0 ≡ 1`.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{arg, Error, Result};
use crate::signal::Signal;

/// A finite sequence of characters in `[0, n_p]`. The empty string is `ε`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct IndexString(Vec<usize>);

impl IndexString {
    pub fn epsilon() -> Self {
        Self(Vec::new())
    }

    /// Builds a string, checking every character against `n_p`.
    pub fn new(chars: Vec<usize>, n_p: usize) -> Result<Self> {
        if let Some(&c) = chars.iter().find(|&&c| c > n_p) {
            return arg(format!("character {c} outside alphabet 0..={n_p}"));
        }
        Ok(Self(chars))
    }

    /// Builds a string without an alphabet check.
    pub fn from_chars(chars: &[usize]) -> Self {
        Self(chars.to_vec())
    }

    pub fn single(c: usize) -> Self {
        Self(vec![c])
    }

    pub fn chars(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// 1-based character access, `[η]_j`.
    pub fn char_at(&self, j: usize) -> Option<usize> {
        j.checked_sub(1).and_then(|i| self.0.get(i).copied())
    }

    pub fn max_char(&self) -> Option<usize> {
        self.0.iter().copied().max()
    }

    /// Serializes per the text convention: digits for `n_p ≤ 9`, dash-separated
    /// decimals otherwise, `"e"` for the empty string.
    pub fn encode(&self, n_p: usize) -> String {
        if self.0.is_empty() {
            return "e".to_string();
        }
        if n_p <= 9 {
            self.0.iter().map(|c| char::from(b'0' + *c as u8)).collect()
        } else {
            self.0
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join("-")
        }
    }

    pub fn decode(s: &str, n_p: usize) -> Result<Self> {
        let s = s.trim();
        if s == "e" {
            return Ok(Self::epsilon());
        }
        if s.is_empty() {
            return arg("empty string literal; use \"e\" for the empty string");
        }
        let chars: Vec<usize> = if n_p <= 9 {
            s.chars()
                .map(|ch| {
                    ch.to_digit(10)
                        .map(|d| d as usize)
                        .ok_or_else(|| Error::Argument(format!("bad character {ch:?} in {s:?}")))
                })
                .collect::<Result<_>>()?
        } else {
            s.split('-')
                .map(|tok| {
                    tok.parse::<usize>()
                        .map_err(|_| Error::Argument(format!("bad character {tok:?} in {s:?}")))
                })
                .collect::<Result<_>>()?
        };
        Self::new(chars, n_p)
    }
}

impl Ord for IndexString {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for IndexString {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for IndexString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n_p = self.max_char().unwrap_or(0);
        f.write_str(&self.encode(n_p))
    }
}

/// All strings with length in `[min_len, max_len]`, ascending by length then
/// lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StringSet {
    n_p: usize,
    min_len: usize,
    max_len: usize,
    strings: Vec<IndexString>,
}

impl StringSet {
    pub(crate) fn empty(n_p: usize) -> Self {
        Self {
            n_p,
            min_len: 1,
            max_len: 0,
            strings: Vec::new(),
        }
    }

    pub fn n_p(&self) -> usize {
        self.n_p
    }

    pub fn min_len(&self) -> usize {
        self.min_len
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn strings(&self) -> &[IndexString] {
        &self.strings
    }

    pub fn len(&self) -> usize {
        self.strings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strings.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, IndexString> {
        self.strings.iter()
    }

    /// Position of `s` in the set; binary search relies on the canonical order.
    pub fn position(&self, s: &IndexString) -> Option<usize> {
        self.strings.binary_search(s).ok()
    }
}

impl<'a> IntoIterator for &'a StringSet {
    type Item = &'a IndexString;
    type IntoIter = std::slice::Iter<'a, IndexString>;

    fn into_iter(self) -> Self::IntoIter {
        self.strings.iter()
    }
}

/// Enumerates every string over `{0..=n_p}` with `min_len ≤ len ≤ max_len`.
pub fn enumerate_strings(n_p: usize, min_len: usize, max_len: usize) -> Result<StringSet> {
    if min_len > max_len {
        return arg(format!("min_len {min_len} > max_len {max_len}"));
    }
    let base = n_p + 1;
    let mut strings = Vec::new();
    for len in min_len..=max_len {
        let count = base
            .checked_pow(len as u32)
            .ok_or_else(|| Error::Argument(format!("(1+{n_p})^{len} overflows")))?;
        strings.reserve(count);
        let mut chars = vec![0usize; len];
        for _ in 0..count {
            strings.push(IndexString(chars.clone()));
            // odometer increment, rightmost character fastest
            for c in chars.iter_mut().rev() {
                *c += 1;
                if *c < base {
                    break;
                }
                *c = 0;
            }
        }
    }
    Ok(StringSet {
        n_p,
        min_len,
        max_len,
        strings,
    })
}

/// `∏_{i=1}^{|η|} p̃_{[η]_i}(t − (i−1))` with `p̃_0 ≡ 1`.
pub fn scheduling_product(eta: &IndexString, p: &Signal, t: usize) -> Result<f64> {
    if eta.is_empty() {
        return arg("scheduling product of the empty string");
    }
    let lag = eta.len() - 1;
    if t >= p.len() {
        return Err(Error::OutOfRange(format!(
            "t = {t} beyond trajectory of length {}",
            p.len()
        )));
    }
    if lag > t {
        return Err(Error::OutOfRange(format!(
            "string of length {} needs history back to t - {lag}, have t = {t}",
            eta.len()
        )));
    }
    let mut prod = 1.0;
    for (i, &c) in eta.chars().iter().enumerate() {
        if c == 0 {
            continue;
        }
        if c > p.dim() {
            return arg(format!("character {c} exceeds scheduling dimension {}", p.dim()));
        }
        prod *= p.row(t - i)[c - 1];
    }
    Ok(prod)
}

/// `left · mid · right`.
pub fn concat(
    left: &IndexString,
    mid: Option<usize>,
    right: &IndexString,
    n_p: usize,
) -> Result<IndexString> {
    let mut chars = Vec::with_capacity(left.len() + right.len() + 1);
    chars.extend_from_slice(left.chars());
    chars.extend(mid);
    chars.extend_from_slice(right.chars());
    IndexString::new(chars, n_p)
}

/// Scheduling products of every string of length `1..=max_len` at time `t`,
/// laid out in [`enumerate_strings`] order. Entries whose history would reach
/// before `t = 0` use `p = 0` for the missing samples.
///
/// Length-`L` block is `[1; p(t)] ⊗ [1; p(t−1)] ⊗ ⋯ ⊗ [1; p(t−L+1)]`.
pub fn lifted_products(p: &Signal, t: usize, max_len: usize, out: &mut Vec<f64>) {
    out.clear();
    let base = p.dim() + 1;
    let mut prev: Vec<f64> = Vec::new();
    let mut cur: Vec<f64> = Vec::new();
    for len in 1..=max_len {
        let lag = len - 1;
        let mut z = vec![1.0; base];
        if lag <= t {
            z[1..].copy_from_slice(p.row(t - lag));
        } else {
            z[1..].iter_mut().for_each(|v| *v = 0.0);
        }
        // the oldest lag is the least significant character
        cur.clear();
        if len == 1 {
            cur.extend_from_slice(&z);
        } else {
            cur.reserve(prev.len() * base);
            for &a in &prev {
                for &b in &z {
                    cur.push(a * b);
                }
            }
        }
        out.extend_from_slice(&cur);
        std::mem::swap(&mut prev, &mut cur);
    }
}
