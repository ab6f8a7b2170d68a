//! Synthetic stand-in for an HIV treatment trial and its target population.
//!
//! Trial: 933 subjects (478 new treatment, 455 old) with continuous age, age
//! group, sex, race, severe immune suppression (SIS) and CD4 counts before
//! and after treatment. Population: 54,220 people with age group, sex and
//! race only. Marginals follow the published summaries of the real data; SIS
//! is more common among non-White subjects, and the treatment effect on the
//! CD4 change differs across the four race-by-SIS cells.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::data::{Column, DataTable};
use crate::error::Result;

pub const AGE_GROUPS: [&str; 4] = ["le29", "30to39", "40to49", "ge50"];
pub const RACE_SIS: [&str; 4] = ["White-noSIS", "nonWhite-noSIS", "White-SIS", "nonWhite-SIS"];

pub const N_NEW: usize = 478;
pub const N_OLD: usize = 455;
pub const N_POP: usize = 54_220;

/// Per-arm marginals of the trial (new, old).
const FEMALE: [f64; 2] = [0.174, 0.143];
const NONWHITE: [f64; 2] = [0.473, 0.468];
const SIS: [f64; 2] = [0.437, 0.475];
/// `P(SIS | non-White) − P(SIS | White)`.
const SIS_RACE_GAP: f64 = 0.35;
const TRIAL_AGE_GROUPS: [f64; 4] = [0.107, 0.421, 0.348, 0.123];

const POP_AGE_GROUPS: [f64; 4] = [0.341, 0.309, 0.247, 0.103];
const POP_FEMALE: f64 = 0.266;
const POP_NONWHITE: f64 = 0.639;

/// Treatment effect on CD4 change in the reference cell and the increments
/// for the other three race-by-SIS cells, in `RACE_SIS` order.
pub const EFFECTS: [f64; 4] = [19.7, 23.4, 24.9, 21.4];

const TAU: f64 = 80.0;
const SIGMA: f64 = 46.0;

fn categorical(rng: &mut ChaCha20Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

fn age_in_group(rng: &mut ChaCha20Rng, group: usize) -> f64 {
    let (lo, hi) = match group {
        0 => (16.0, 29.0),
        1 => (30.0, 39.0),
        2 => (40.0, 49.0),
        _ => (50.0, 75.0),
    };
    if group == 3 {
        // Skewed toward the lower end of the open group.
        let u: f64 = rng.random();
        (lo + (hi - lo) * u * u).round()
    } else {
        rng.random_range(lo..=hi).round()
    }
}

fn bern(rng: &mut ChaCha20Rng, p: f64) -> f64 {
    if rng.random::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

/// Trial table with columns `id, A, age, agegroup, female, nonwhite, sis,
/// racesis, cd4_pre, cd4_post`.
pub fn trial(seed: u64) -> Result<DataTable> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let n = N_NEW + N_OLD;
    let (mut id, mut a, mut age) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut female, mut nonwhite, mut sis) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut agegroup = Vec::with_capacity(n);
    let mut racesis = Vec::with_capacity(n);
    let (mut pre, mut post) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let arm = if i < N_NEW { 0 } else { 1 };
        let g = categorical(&mut rng, &TRIAL_AGE_GROUPS);
        let mut ag = age_in_group(&mut rng, g);
        // Pin the observed age range.
        if i == 0 {
            ag = 16.0;
        } else if i == 1 {
            ag = 75.0;
        }
        let g = match ag as u32 {
            0..=29 => 0,
            30..=39 => 1,
            40..=49 => 2,
            _ => 3,
        };
        let f = bern(&mut rng, FEMALE[arm]);
        let nw = bern(&mut rng, NONWHITE[arm]);
        let p_white = SIS[arm] - NONWHITE[arm] * SIS_RACE_GAP;
        let s = bern(&mut rng, p_white + nw * SIS_RACE_GAP);
        let cell = (nw + 2.0 * s) as usize;
        let treated = if arm == 0 { 1.0 } else { 0.0 };
        let effect = EFFECTS[0] + EFFECTS[1] * nw * (1.0 - s) + EFFECTS[2] * (1.0 - nw) * s + EFFECTS[3] * nw * s;
        let mu =
            330.0 - 230.0 * s + 15.0 * f - 0.8 * (ag - 40.0) + 20.0 * nw + TAU * rng.sample::<f64, _>(StandardNormal);
        let y0 = mu + SIGMA * rng.sample::<f64, _>(StandardNormal);
        let y1 = mu + 45.0 + treated * effect + SIGMA * rng.sample::<f64, _>(StandardNormal);
        id.push((i + 1) as f64);
        a.push(treated);
        age.push(ag);
        female.push(f);
        nonwhite.push(nw);
        sis.push(s);
        agegroup.push(AGE_GROUPS[g]);
        racesis.push(RACE_SIS[cell]);
        pre.push(y0.max(0.0).round());
        post.push(y1.max(0.0).round());
    }
    DataTable::new(vec![
        Column::numeric("id", id),
        Column::binary("A", a),
        Column::numeric("age", age),
        Column::categorical("agegroup", &agegroup, Some(AGE_GROUPS.map(String::from).to_vec()))?,
        Column::binary("female", female),
        Column::binary("nonwhite", nonwhite),
        Column::binary("sis", sis),
        Column::categorical("racesis", &racesis, Some(RACE_SIS.map(String::from).to_vec()))?,
        Column::numeric("cd4_pre", pre),
        Column::numeric("cd4_post", post),
    ])
}

/// Population table with columns `agegroup, female, nonwhite`.
pub fn population(seed: u64) -> Result<DataTable> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut agegroup = Vec::with_capacity(N_POP);
    let (mut female, mut nonwhite) = (Vec::with_capacity(N_POP), Vec::with_capacity(N_POP));
    for _ in 0..N_POP {
        agegroup.push(AGE_GROUPS[categorical(&mut rng, &POP_AGE_GROUPS)]);
        female.push(bern(&mut rng, POP_FEMALE));
        nonwhite.push(bern(&mut rng, POP_NONWHITE));
    }
    DataTable::new(vec![
        Column::categorical("agegroup", &agegroup, Some(AGE_GROUPS.map(String::from).to_vec()))?,
        Column::binary("female", female),
        Column::binary("nonwhite", nonwhite),
    ])
}
