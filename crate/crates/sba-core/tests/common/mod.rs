//! Shared test oracles, deliberately independent of the library's episode
//! enumeration: plain nested loops over both rounds of a 2-round lever
//! game, consuming only `Policy::action_distribution`.

use sba_core::env::{Aoh, Policy};
use sba_core::lever::LeverGameConfig;

/// Expected return of a 2-round lever game by brute-force enumeration of
/// all four action draws.
pub fn brute_lever_return(config: &LeverGameConfig, p0: &dyn Policy, p1: &dyn Policy) -> f64 {
    assert_eq!(config.num_rounds, 2, "oracle covers the 2-round game");
    let l = config.num_levers;
    let none = l;
    let reward = config.reward_on_match;

    let start0 = Aoh::from_parts(0, vec![none], vec![]).unwrap();
    let start1 = Aoh::from_parts(1, vec![none], vec![]).unwrap();
    let d0 = p0.action_distribution(&start0).unwrap();
    let d1 = p1.action_distribution(&start1).unwrap();

    let mut total = 0.0;
    for a1 in 0..l {
        let pa1 = d0.prob(&a1);
        if pa1 == 0.0 {
            continue;
        }
        for b1 in 0..l {
            let pb1 = d1.prob(&b1);
            if pb1 == 0.0 {
                continue;
            }
            let r1 = if a1 == b1 { reward } else { 0.0 };
            let h0 = Aoh::from_parts(0, vec![none, b1], vec![a1]).unwrap();
            let h1 = Aoh::from_parts(1, vec![none, a1], vec![b1]).unwrap();
            let e0 = p0.action_distribution(&h0).unwrap();
            let e1 = p1.action_distribution(&h1).unwrap();
            for a2 in 0..l {
                let pa2 = e0.prob(&a2);
                if pa2 == 0.0 {
                    continue;
                }
                for b2 in 0..l {
                    let pb2 = e1.prob(&b2);
                    let r2 = if a2 == b2 { reward } else { 0.0 };
                    total += pa1 * pb1 * pa2 * pb2 * (r1 + r2);
                }
            }
        }
    }
    total
}

/// Seat-averaged brute-force crossplay.
#[allow(dead_code)]
pub fn brute_j_aht(config: &LeverGameConfig, a: &dyn Policy, b: &dyn Policy) -> f64 {
    0.5 * (brute_lever_return(config, a, b) + brute_lever_return(config, b, a))
}
