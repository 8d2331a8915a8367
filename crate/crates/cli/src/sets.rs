//! Whitespace-separated keyed lists: `<key> <item> <item> ...` per line.
//! Blank lines and lines starting with `#` are ignored; a key may repeat.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{bail, Context, Result};

pub type KeyedSets = BTreeMap<String, Vec<BTreeSet<String>>>;

pub fn parse_sets(text: &str) -> KeyedSets {
    let mut out = KeyedSets::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let mut words = line.split_whitespace();
        let key = words.next().expect("non-empty line").to_string();
        out.entry(key).or_default().push(words.map(str::to_string).collect());
    }
    out
}

pub fn read_sets(path: &Path) -> Result<KeyedSets> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_sets(&text))
}

/// All items of `key` merged into one set.
pub fn union(sets: &KeyedSets, key: &str) -> BTreeSet<String> {
    sets.get(key).into_iter().flatten().flatten().cloned().collect()
}

pub fn line_numbers(items: &BTreeSet<String>) -> Result<BTreeSet<usize>> {
    items
        .iter()
        .map(|s| match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => bail!("`{s}` is not a line number"),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_merge() {
        let s = parse_sets("# bug tests\nb1 t1 t2\n\nb1 t3\nb2\n");
        assert_eq!(s["b1"].len(), 2);
        assert_eq!(union(&s, "b1").len(), 3);
        assert!(union(&s, "b2").is_empty());
        assert!(union(&s, "b3").is_empty());
    }

    #[test]
    fn line_number_items() {
        let items: BTreeSet<String> = ["3", "10"].iter().map(|s| s.to_string()).collect();
        assert_eq!(line_numbers(&items).unwrap(), BTreeSet::from([3, 10]));
        assert!(line_numbers(&BTreeSet::from(["x".to_string()])).is_err());
        assert!(line_numbers(&BTreeSet::from(["0".to_string()])).is_err());
    }
}
