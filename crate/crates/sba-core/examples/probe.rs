use sba_core::learner::{train_best_response, TrainConfig};
use sba_core::lever::{lever_symmetry_group, make_deterministic_population, make_env, LeverGameConfig};
use sba_core::population::PolicyKind;
use std::time::Instant;

fn main() {
    let config = LeverGameConfig::default();
    let env = make_env(config).unwrap();
    let train = make_deterministic_population("train", &[0, 1, 2, 3, 4], &config).unwrap();
    let eval = make_deterministic_population("eval", &(0..10).collect::<Vec<_>>(), &config).unwrap();
    let group = lever_symmetry_group(&config);

    let t0 = Instant::now();
    let mut bad = 0;
    for seed in 0..30u64 {
        let cfg = TrainConfig { sba_enabled: true, seed, ..TrainConfig::default() };
        let out = train_best_response(&env, &train, Some(&group), &cfg, &eval).unwrap();
        let last = out.curve.records.last().unwrap();
        if (last.eval_return - 1.1).abs() > 0.05 {
            bad += 1;
            let PolicyKind::DeterministicTable(t) = &out.greedy.kind else { panic!() };
            let wrong: Vec<_> = t.entries.iter()
                .filter(|e| e.round == 2 && e.partner.map(|p| p != e.action).unwrap_or(false))
                .map(|e| (e.partner.unwrap(), e.action))
                .collect();
            // When did the curve last move?
            let final_v = last.eval_return;
            let first_hit = out.curve.records.iter().find(|r| r.eval_return == final_v).unwrap().epoch;
            println!("seed {seed}: eval={:.2} wrong={wrong:?} plateaued@{first_hit}", last.eval_return);
        }
    }
    println!("bad {bad}/30 in {:?}", t0.elapsed());
}
