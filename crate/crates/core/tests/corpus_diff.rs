//! Single-hunk diffs against an LCS dynamic-programming oracle.

use mutrag_core::corpus::{diff_hunk, DiffError};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lcs(a: &[&str], b: &[&str]) -> usize {
    let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in (0..a.len()).rev() {
        for j in (0..b.len()).rev() {
            dp[i][j] = if a[i] == b[j] { dp[i + 1][j + 1] + 1 } else { dp[i + 1][j].max(dp[i][j + 1]) };
        }
    }
    dp[0][0]
}

/// Most lines kept by any edit that rewrites one contiguous region.
fn best_single_region(a: &[&str], b: &[&str]) -> usize {
    let mut best = 0;
    for i in 0..=a.len().min(b.len()) {
        if a[..i] != b[..i] {
            break;
        }
        for j in 0..=(a.len() - i).min(b.len() - i) {
            if a[a.len() - j..] == b[b.len() - j..] {
                best = best.max(i + j);
            }
        }
    }
    best
}

fn text(lines: &[&str]) -> String {
    lines.iter().map(|l| format!("{l}\n")).collect()
}

fn random_lines(rng: &mut ChaCha8Rng, n: usize, alphabet: usize) -> Vec<&'static str> {
    const WORDS: [&str; 8] = ["a;", "b;", "c;", "d;", "e;", "f;", "g;", "h;"];
    (0..n).map(|_| WORDS[rng.random_range(0..alphabet)]).collect()
}

#[test]
fn region_edits_round_trip_and_are_minimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    for _ in 0..400 {
        let n = rng.random_range(1..10);
        let pre = random_lines(&mut rng, n, 8);
        let i = rng.random_range(0..=pre.len());
        let j = rng.random_range(i..=pre.len());
        let k = rng.random_range(0..4);
        let insert = random_lines(&mut rng, k, 8);
        let post: Vec<&str> = pre[..i].iter().chain(&insert).chain(&pre[j..]).copied().collect();
        if post.is_empty() || pre == post {
            continue;
        }
        let (p, q) = (text(&pre), text(&post));
        let single = lcs(&pre, &post) == best_single_region(&pre, &post);
        match diff_hunk(&p, &q) {
            Ok(h) => {
                assert!(single, "{pre:?} -> {post:?}");
                assert_eq!(h.apply(&p).unwrap(), q);
                let changed = h.removed().count() + h.added().count();
                assert_eq!(changed, pre.len() + post.len() - 2 * lcs(&pre, &post));
                checked += 1;
            }
            Err(DiffError::MultiHunk) => assert!(!single, "{pre:?} -> {post:?}"),
            Err(e) => panic!("{e}"),
        }
    }
    assert!(checked >= 50);
}

#[test]
fn random_pairs_classified_like_the_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..2000 {
        let (n, m) = (rng.random_range(1..7), rng.random_range(1..7));
        let pre = random_lines(&mut rng, n, 3);
        let post = random_lines(&mut rng, m, 3);
        if pre == post {
            continue;
        }
        let single = lcs(&pre, &post) == best_single_region(&pre, &post);
        let got = diff_hunk(&text(&pre), &text(&post));
        assert_eq!(got.is_ok(), single, "{pre:?} -> {post:?}");
        if let Ok(h) = got {
            assert_eq!(h.apply(&text(&pre)).unwrap(), text(&post));
        }
    }
}

#[test]
fn separated_changes_are_multi_hunk() {
    let pre: Vec<String> = (1..=10).map(|i| format!("s{i};")).collect();
    let mut post = pre.clone();
    post[1] = "changed2;".into();
    post[8] = "changed9;".into();
    let join = |v: &[String]| v.iter().map(|l| format!("{l}\n")).collect::<String>();
    assert!(matches!(diff_hunk(&join(&pre), &join(&post)), Err(DiffError::MultiHunk)));
}
