//! Behavior-pattern dictionary: maps each observed daily shop-purchase
//! vector to an integer code and encodes customer histories as integer
//! pattern sequences.
//!
//! The no-purchase vector always gets code 0. Remaining codes are assigned
//! either by activity rank (ascending popcount, then lexicographic — more
//! activity maps to larger codes, the default) or by descending observation
//! frequency. Both orderings are deterministic for a given matrix.

use std::collections::HashMap;

use crate::data::ActivityMatrix;
use crate::error::{Error, Result};

/// Code-assignment order for non-zero vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CodeOrder {
    /// Ascending popcount, ties broken lexicographically.
    #[default]
    ActivityRank,
    /// Descending observation count, ties broken by activity rank.
    FrequencyRank,
}

/// Injective mapping between daily shop vectors and integer codes.
#[derive(Debug, Clone)]
pub struct PatternDictionary {
    /// Code -> shop vector; index 0 is always the all-zeros vector.
    table: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, u32>,
}

/// One customer's integer-coded daily behavior sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternSequence {
    pub customer_id: String,
    pub codes: Vec<u32>,
}

impl PatternDictionary {
    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn code_of(&self, day_vector: &[u8]) -> Option<u32> {
        self.index.get(day_vector).copied()
    }

    /// Inverse lookup: the shop vector a code stands for.
    pub fn vector_of(&self, code: u32) -> Option<&[u8]> {
        self.table.get(code as usize).map(|v| v.as_slice())
    }

    /// Serialize as CSV lines `code,shop_vector_bits`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("code,shop_vector_bits\n");
        for (code, vector) in self.table.iter().enumerate() {
            out.push_str(&code.to_string());
            out.push(',');
            for &bit in vector {
                out.push(if bit == 0 { '0' } else { '1' });
            }
            out.push('\n');
        }
        out
    }
}

/// Build the dictionary over every daily vector observed in the matrix.
pub fn build_dictionary(matrix: &ActivityMatrix, order: CodeOrder) -> Result<PatternDictionary> {
    if matrix.customers().is_empty() || matrix.days() == 0 {
        return Err(Error::EmptyInput("empty activity matrix".into()));
    }
    let k = matrix.shops().len();
    let zero = vec![0u8; k];

    let mut counts: HashMap<Vec<u8>, u64> = HashMap::new();
    for u in 0..matrix.customers().len() {
        for day in 0..matrix.days() {
            let v = matrix.day_vector(u, day);
            *counts.entry(v.to_vec()).or_insert(0) += 1;
        }
    }
    counts.remove(&zero);

    let mut observed: Vec<(Vec<u8>, u64)> = counts.into_iter().collect();
    let activity_key = |v: &[u8]| {
        let popcount = v.iter().filter(|&&b| b != 0).count();
        (popcount, v.to_vec())
    };
    match order {
        CodeOrder::ActivityRank => observed.sort_by_key(|(v, _)| activity_key(v)),
        CodeOrder::FrequencyRank => {
            observed.sort_by_key(|(v, n)| (std::cmp::Reverse(*n), activity_key(v)))
        }
    }

    let mut table = Vec::with_capacity(observed.len() + 1);
    table.push(zero);
    table.extend(observed.into_iter().map(|(v, _)| v));
    let index = table
        .iter()
        .enumerate()
        .map(|(code, v)| (v.clone(), code as u32))
        .collect();
    Ok(PatternDictionary { table, index })
}

/// Encode one customer's daily vectors through the dictionary.
pub fn encode_customer(
    matrix: &ActivityMatrix,
    customer_id: &str,
    dict: &PatternDictionary,
) -> Result<PatternSequence> {
    let u = matrix.customer_index(customer_id)?;
    let mut codes = Vec::with_capacity(matrix.days() as usize);
    for day in 0..matrix.days() {
        let v = matrix.day_vector(u, day);
        let code = dict.code_of(v).ok_or_else(|| {
            Error::UnknownPattern(format!(
                "day {day} vector of customer `{customer_id}` is not in the dictionary"
            ))
        })?;
        codes.push(code);
    }
    Ok(PatternSequence {
        customer_id: customer_id.to_string(),
        codes,
    })
}
