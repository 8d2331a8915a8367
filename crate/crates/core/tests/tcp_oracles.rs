use std::collections::BTreeSet;

use mutrag_core::execution::KillMatrix;
use mutrag_core::tcp::{apfd, grd, grk, hyb, PrioritizedSuite};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn build(cells: &[Vec<bool>]) -> KillMatrix {
    let cols = cells.first().map_or(0, |r| r.len());
    KillMatrix::new(
        "b",
        (0..cells.len()).map(|i| format!("m{i}")).collect(),
        (0..cols).map(|j| format!("t{j}")).collect(),
        cells.to_vec(),
    )
    .unwrap()
}

fn random_cells(rng: &mut ChaCha8Rng, max: usize) -> Vec<Vec<bool>> {
    let rows = rng.random_range(1..=max);
    let cols = rng.random_range(1..=max);
    (0..rows).map(|_| (0..cols).map(|_| rng.random_bool(0.4)).collect()).collect()
}

/// Naive additional-greedy with explicit killed and distinguished-pair sets.
fn oracle(cells: &[Vec<bool>], omega: Option<f64>, pairs_only: bool) -> Vec<(usize, usize, usize)> {
    let n = cells.len();
    let cols = cells[0].len();
    let all_pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let mut killed: BTreeSet<usize> = BTreeSet::new();
    let mut split: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut remaining: Vec<usize> = (0..cols).collect();
    let mut out = Vec::new();
    let gains = |j: usize, killed: &BTreeSet<usize>, split: &BTreeSet<(usize, usize)>| {
        let k = (0..n).filter(|&m| cells[m][j] && !killed.contains(&m)).count();
        let p = all_pairs.iter().filter(|&&(a, b)| cells[a][j] != cells[b][j] && !split.contains(&(a, b))).count();
        (k, p)
    };
    let score = |k: usize, p: usize| match omega {
        None if pairs_only => p as f64,
        None => k as f64,
        Some(w) => {
            let nk = if n == 0 { 0.0 } else { k as f64 / n as f64 };
            let np = if all_pairs.is_empty() { 0.0 } else { p as f64 / all_pairs.len() as f64 };
            w * nk + (1.0 - w) * np
        }
    };
    while !remaining.is_empty() {
        let mut pick = None;
        for attempt in 0..2 {
            let best = remaining
                .iter()
                .map(|&j| {
                    let (k, p) = gains(j, &killed, &split);
                    (j, k, p, score(k, p))
                })
                .fold(None::<(usize, usize, usize, f64)>, |acc, c| match acc {
                    Some(a) if a.3 >= c.3 => Some(a),
                    _ => Some(c),
                })
                .unwrap();
            if best.3 > 0.0 || attempt == 1 || (killed.is_empty() && split.is_empty()) {
                pick = Some(best);
                break;
            }
            killed.clear();
            split.clear();
        }
        let (j, k, p, _) = pick.unwrap();
        for m in 0..n {
            if cells[m][j] {
                killed.insert(m);
            }
        }
        for &(a, b) in &all_pairs {
            if cells[a][j] != cells[b][j] {
                split.insert((a, b));
            }
        }
        remaining.retain(|&x| x != j);
        out.push((j, k, p));
    }
    out
}

fn as_steps(s: &PrioritizedSuite) -> Vec<(usize, usize, usize)> {
    s.steps
        .iter()
        .map(|st| (st.test[1..].parse().unwrap(), st.added_kills, st.added_pairs))
        .collect()
}

fn is_permutation(s: &PrioritizedSuite, m: &KillMatrix) -> bool {
    let got: BTreeSet<&String> = s.order.iter().collect();
    s.order.len() == m.tests().len() && got == m.tests().iter().collect()
}

#[test]
fn greedy_steps_match_exhaustive_oracle_up_to_6x6() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..400 {
        let cells = random_cells(&mut rng, 6);
        // single-digit test ids sort numerically, so positions match ids
        let m = build(&cells);
        let a = grk(&m).unwrap();
        let b = grd(&m).unwrap();
        let c = hyb(&m, 0.5).unwrap();
        for s in [&a, &b, &c] {
            assert!(is_permutation(s, &m));
        }
        let kills: Vec<(usize, usize)> = oracle(&cells, None, false).iter().map(|x| (x.0, x.1)).collect();
        assert_eq!(as_steps(&a).iter().map(|x| (x.0, x.1)).collect::<Vec<_>>(), kills, "{cells:?}");
        let pairs: Vec<(usize, usize)> = oracle(&cells, None, true).iter().map(|x| (x.0, x.2)).collect();
        assert_eq!(as_steps(&b).iter().map(|x| (x.0, x.2)).collect::<Vec<_>>(), pairs, "{cells:?}");
        assert_eq!(as_steps(&c), oracle(&cells, Some(0.5), false), "{cells:?}");
    }
}

#[test]
fn hyb_degenerates_at_the_extremes() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..100 {
        let cells: Vec<Vec<bool>> = (0..10).map(|_| (0..10).map(|_| rng.random_bool(0.3)).collect()).collect();
        let m = build(&cells);
        assert_eq!(hyb(&m, 1.0).unwrap().order, grk(&m).unwrap().order);
        assert_eq!(hyb(&m, 0.0).unwrap().order, grd(&m).unwrap().order);
    }
}

#[test]
fn some_3x3_matrix_orders_differently_under_grd_and_grk() {
    let mut witness = None;
    for bits in 0u32..512 {
        let cells: Vec<Vec<bool>> = (0..3).map(|r| (0..3).map(|c| bits >> (r * 3 + c) & 1 == 1).collect()).collect();
        let m = build(&cells);
        let (k, d) = (grk(&m).unwrap(), grd(&m).unwrap());
        if k.order != d.order {
            assert_eq!(oracle(&cells, None, false).iter().map(|x| x.0).collect::<Vec<_>>(), as_steps(&k).iter().map(|x| x.0).collect::<Vec<_>>());
            assert_eq!(oracle(&cells, None, true).iter().map(|x| x.0).collect::<Vec<_>>(), as_steps(&d).iter().map(|x| x.0).collect::<Vec<_>>());
            witness = Some(cells);
            break;
        }
    }
    assert!(witness.is_some());
}

#[test]
fn apfd_stays_within_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let n = rng.random_range(1..12);
        let order: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let r = rng.random_range(1..5);
        let bugs: Vec<BTreeSet<String>> = (0..r)
            .map(|_| {
                let mut s: BTreeSet<String> = order.iter().filter(|_| rng.random_bool(0.3)).cloned().collect();
                s.insert(order[rng.random_range(0..n)].clone());
                s
            })
            .collect();
        let v = apfd(&order, &bugs).unwrap();
        let nf = n as f64;
        assert!(v >= 1.0 / (2.0 * nf) - 1e-12 && v <= 1.0 - 1.0 / (2.0 * nf) + 1e-12);
    }
    let order: Vec<String> = (0..4).map(|i| format!("t{i}")).collect();
    let last: BTreeSet<String> = ["t3".to_string()].into();
    assert!((apfd(&order, &[last]).unwrap() - 1.0 / 8.0).abs() < 1e-12);
}
