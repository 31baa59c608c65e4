//! Layer selection against a hand-written table.

use repkd::strategies::{select_layers, StrategyKind, StrategySpec};

fn spec(kind: StrategyKind, k: u32, l: u32) -> StrategySpec {
    StrategySpec {
        kind,
        k,
        total_layers: l,
        seed: 3,
    }
}

#[test]
fn deterministic_strategies() {
    use StrategyKind::*;
    let table: &[(StrategyKind, u32, u32, &[u32])] = &[
        (Last, 1, 6, &[6]),
        (Last, 2, 6, &[5, 6]),
        (Last, 4, 24, &[21, 22, 23, 24]),
        (First, 3, 12, &[1, 2, 3]),
        (First, 4, 6, &[1, 2, 3, 4]),
        (Uniform, 1, 6, &[6]),
        (Uniform, 2, 6, &[3, 6]),
        (Uniform, 3, 6, &[2, 4, 6]),
        (Uniform, 4, 6, &[2, 4, 6]),
        (Uniform, 2, 12, &[6, 12]),
        (Uniform, 3, 12, &[4, 8, 12]),
        (Uniform, 4, 12, &[3, 6, 9, 12]),
        (Uniform, 3, 24, &[8, 16, 24]),
        (Uniform, 4, 24, &[6, 12, 18, 24]),
    ];
    for &(kind, k, l, want) in table {
        assert_eq!(select_layers(&spec(kind, k, l), 0).unwrap(), want, "{kind} K={k} L={l}");
    }
}

#[test]
fn invariants_hold_for_all_small_specs() {
    use StrategyKind::*;
    for l in 1..=24u32 {
        for k in 1..=l.min(6) {
            for kind in [Last, First, Uniform, Random] {
                for epoch in 0..3 {
                    let s = select_layers(&spec(kind, k, l), epoch).unwrap();
                    assert!(s.windows(2).all(|w| w[0] < w[1]));
                    assert!(s.iter().all(|&x| (1..=l).contains(&x)));
                    assert!(s.len() <= k as usize);
                    if kind != Uniform {
                        assert_eq!(s.len(), k as usize);
                    }
                }
            }
            if k == 1 {
                assert_eq!(select_layers(&spec(Uniform, 1, l), 0).unwrap(), [l]);
            }
        }
        let all: Vec<u32> = (1..=l).collect();
        for kind in [Last, First, Uniform] {
            assert_eq!(select_layers(&spec(kind, l, l), 0).unwrap(), all);
        }
    }
}
