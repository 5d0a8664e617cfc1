// SPDX-License-Identifier: Apache-2.0

//! Nonparametric case bootstrap over confusion cells.
//!
//! Every confusion metric depends on a case only through its cell and its
//! weight, so cases collapse into (cell, weight) types. Drawing `n` cases
//! with replacement is then a multinomial draw over type counts, which is
//! sampled exactly by sequential conditional binomials. The resampling
//! distribution is identical to drawing case indices one at a time.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use super::{Cell, ConfusionCounts};

#[derive(Debug, Clone)]
pub(crate) struct CaseTypes {
    types: Vec<(Cell, f64, u64)>,
    n: u64,
    weighted: bool,
}

impl CaseTypes {
    pub(crate) fn new<I>(cases: I, weighted: bool) -> Self
    where
        I: IntoIterator<Item = (Cell, f64)>,
    {
        let mut grouped: BTreeMap<(Cell, u64), u64> = BTreeMap::new();
        for (cell, weight) in cases {
            *grouped.entry((cell, weight.to_bits())).or_default() += 1;
        }
        let types: Vec<_> = grouped
            .into_iter()
            .map(|((cell, bits), count)| (cell, f64::from_bits(bits), count))
            .collect();
        let n = types.iter().map(|t| t.2).sum();
        CaseTypes { types, n, weighted }
    }

    /// One bootstrap replicate of the confusion counts.
    pub(crate) fn resample<R: Rng + ?Sized>(&self, rng: &mut R) -> ConfusionCounts {
        let mut counts = ConfusionCounts::zero(self.weighted);
        let mut remaining_draws = self.n;
        let mut remaining_cases = self.n;
        for (i, &(cell, w, k)) in self.types.iter().enumerate() {
            if remaining_draws == 0 {
                break;
            }
            let drawn = if i + 1 == self.types.len() || k == remaining_cases {
                remaining_draws
            } else {
                let p = k as f64 / remaining_cases as f64;
                Binomial::new(remaining_draws, p)
                    .expect("probability in [0, 1]")
                    .sample(rng)
            };
            counts.add(cell, w, drawn);
            remaining_draws -= drawn;
            remaining_cases -= k;
        }
        counts
    }
}
