use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Open01;

use crate::error::{Error, Result};
use crate::grid::{Parameter, ParameterSpace};
use crate::rng::{stream, tag};

/// Latin hypercube sample of `m` points from `space`.
///
/// Each axis is cut into `m` equal strata and every stratum receives exactly
/// one point; strata are matched across axes by independent random
/// permutations. Points are drawn from the open interior of their stratum.
pub fn lhs_sample(m: usize, space: &ParameterSpace, seed: u64) -> Result<Vec<Parameter>> {
    if m == 0 {
        return Err(Error::invalid("latin hypercube needs m >= 1"));
    }
    space.validate()?;
    let mut rng = stream(seed, &[tag::LHS]);
    let k = space.dim();
    let mut columns = Vec::with_capacity(k);
    for &(lo, hi) in &space.bounds {
        let mut strata: Vec<usize> = (0..m).collect();
        strata.shuffle(&mut rng);
        let width = (hi - lo) / m as f64;
        let col: Vec<f64> = strata
            .into_iter()
            .map(|s| {
                let u: f64 = rng.sample(Open01);
                lo + width * (s as f64 + u)
            })
            .collect();
        columns.push(col);
    }
    Ok((0..m)
        .map(|i| space.parameter((0..k).map(|a| columns[a][i]).collect()))
        .collect())
}
