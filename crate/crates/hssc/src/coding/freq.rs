//! Integer frequency tables for the range coder.
//!
//! The entropy model produces real-valued probabilities; the coder needs
//! integer frequencies with a fixed power-of-two total so that encoder and
//! decoder build bit-identical tables. [`apportion`] does the conversion with
//! the largest-remainder method, and [`CumTable`] holds the cumulative form
//! the coder consumes.

use crate::coding::range::MAX_TOTAL;
use crate::error::{Error, Result};

/// Converts a probability vector into integer frequencies that sum to
/// exactly `total`, each at least 1.
///
/// Every symbol first gets `floor(p * total)` (floored at 1), then the
/// leftover counts go to the largest fractional remainders. Should the floors
/// overshoot `total`, counts are taken back from the largest entries. Both
/// passes break ties by symbol index, so the result is deterministic.
pub fn apportion(pmf: &[f64], total: u32) -> Result<Vec<u32>> {
    if pmf.is_empty() {
        return Err(Error::codec("cannot apportion an empty table".to_string()));
    }
    if pmf.len() as u64 > u64::from(total) {
        return Err(Error::codec(format!(
            "{} symbols cannot all get a nonzero share of {total}",
            pmf.len()
        )));
    }
    if pmf.iter().any(|&p| !p.is_finite() || p < 0.0) {
        return Err(Error::codec(
            "probability table has negative or non-finite entries".to_string(),
        ));
    }
    let t = f64::from(total);
    let mut freqs: Vec<u32> = Vec::with_capacity(pmf.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(pmf.len());
    for (i, &p) in pmf.iter().enumerate() {
        let ideal = p * t;
        let floor = (ideal.floor() as u32).max(1);
        freqs.push(floor);
        remainders.push((i, ideal - ideal.floor()));
    }
    let assigned: u64 = freqs.iter().map(|&f| u64::from(f)).sum();
    if assigned < u64::from(total) {
        let mut deficit = (u64::from(total) - assigned) as usize;
        remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let mut k = 0;
        while deficit > 0 {
            freqs[remainders[k % remainders.len()].0] += 1;
            k += 1;
            deficit -= 1;
        }
    } else if assigned > u64::from(total) {
        let mut excess = (assigned - u64::from(total)) as usize;
        let mut order: Vec<usize> = (0..freqs.len()).collect();
        order.sort_by(|&a, &b| freqs[b].cmp(&freqs[a]).then(a.cmp(&b)));
        let mut k = 0;
        while excess > 0 {
            let i = order[k % order.len()];
            if freqs[i] > 1 {
                freqs[i] -= 1;
                excess -= 1;
            }
            k += 1;
        }
    }
    Ok(freqs)
}

/// Cumulative-frequency view of an integer table.
#[derive(Debug, Clone)]
pub struct CumTable {
    freqs: Vec<u32>,
    /// `cum[s]` is the sum of frequencies below symbol `s`; one extra entry
    /// holds the grand total.
    cum: Vec<u32>,
}

impl CumTable {
    pub fn new(freqs: &[u32]) -> Result<CumTable> {
        if freqs.is_empty() {
            return Err(Error::codec("empty frequency table".to_string()));
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc: u64 = 0;
        cum.push(0);
        for (i, &f) in freqs.iter().enumerate() {
            if f == 0 {
                return Err(Error::codec(format!("symbol {i} has zero frequency")));
            }
            acc += u64::from(f);
            if acc > u64::from(MAX_TOTAL) {
                return Err(Error::codec(format!(
                    "frequency total {acc} exceeds the coder limit {MAX_TOTAL}"
                )));
            }
            cum.push(acc as u32);
        }
        Ok(CumTable {
            freqs: freqs.to_vec(),
            cum,
        })
    }

    pub fn total(&self) -> u32 {
        *self.cum.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// `(cum, freq)` pair for a symbol, as the coder wants it.
    pub fn entry(&self, symbol: usize) -> (u32, u32) {
        (self.cum[symbol], self.freqs[symbol])
    }

    /// Maps a decoder target in `[0, total)` back to the symbol owning that
    /// slot.
    pub fn find(&self, target: u32) -> usize {
        // partition_point gives the first index with cum > target; the
        // owning symbol sits one before it.
        self.cum.partition_point(|&c| c <= target) - 1
    }
}
