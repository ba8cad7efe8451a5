use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ObjectRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Split label per source image. Every object of an image shares it.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SplitAssignment(BTreeMap<String, Split>);

impl SplitAssignment {
    pub fn get(&self, source_image_id: &str) -> Option<Split> {
        self.0.get(source_image_id).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Split)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn group_count(&self, split: Split) -> usize {
        self.0.values().filter(|&&s| s == split).count()
    }

    /// Records whose image belongs to `split`, in input order.
    pub fn select<'a>(&self, records: &'a [ObjectRecord], split: Split) -> Vec<&'a ObjectRecord> {
        records
            .iter()
            .filter(|r| self.get(&r.source_image_id) == Some(split))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("string map serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(None, format!("split file: {e}")))
    }
}

/// Group counts per split by largest remainder, so they sum to `groups` and
/// each is within one of its exact share. Ties go to the earlier split.
pub fn apportion(groups: usize, ratios: [u32; 3]) -> Result<[usize; 3]> {
    let total: u64 = ratios.iter().map(|&r| r as u64).sum();
    if total == 0 {
        return Err(Error::contract("split ratios sum to zero"));
    }
    let mut counts = [0usize; 3];
    let mut rems = [0u64; 3];
    for i in 0..3 {
        let num = groups as u64 * ratios[i] as u64;
        counts[i] = (num / total) as usize;
        rems[i] = num % total;
    }
    let mut left = groups - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    Ok(counts)
}

/// Shuffles distinct source images with `seed` and deals them out in order:
/// the first `counts[0]` to train, the next `counts[1]` to val, the rest to test.
pub fn group_split(
    records: &[ObjectRecord],
    ratios: [u32; 3],
    seed: u64,
) -> Result<SplitAssignment> {
    if records.is_empty() {
        return Err(Error::contract("cannot split an empty record set"));
    }
    let groups: BTreeSet<&str> = records.iter().map(|r| r.source_image_id.as_str()).collect();
    let mut groups: Vec<&str> = groups.into_iter().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let counts = apportion(groups.len(), ratios)?;
    let mut map = BTreeMap::new();
    let mut it = groups.into_iter();
    for (split, n) in Split::ALL.into_iter().zip(counts) {
        for g in it.by_ref().take(n) {
            map.insert(g.to_owned(), split);
        }
    }
    Ok(SplitAssignment(map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn rec(id: &str, src: &str) -> ObjectRecord {
        ObjectRecord::new(id, src, "x.png", BBox::new(0.0, 0.0, 8.0, 8.0), 30, "c").unwrap()
    }

    #[test]
    fn ten_images_split_eight_one_one() {
        let recs: Vec<_> = (0..10)
            .map(|i| rec(&format!("o{i}"), &format!("s{i}")))
            .collect();
        let a = group_split(&recs, [8, 1, 1], 7).unwrap();
        assert_eq!(a.group_count(Split::Train), 8);
        assert_eq!(a.group_count(Split::Val), 1);
        assert_eq!(a.group_count(Split::Test), 1);
        assert_eq!(a, group_split(&recs, [8, 1, 1], 7).unwrap());
    }

    #[test]
    fn shared_source_shares_label() {
        let mut recs: Vec<_> = (0..20)
            .map(|i| rec(&format!("o{i}"), &format!("s{i}")))
            .collect();
        recs.push(rec("extra", "s3"));
        let a = group_split(&recs, [8, 1, 1], 1).unwrap();
        assert_eq!(a.len(), 20);
        let total: usize = Split::ALL.iter().map(|&s| a.select(&recs, s).len()).sum();
        assert_eq!(total, recs.len());
    }

    #[test]
    fn apportion_is_within_one_group() {
        for n in 1..200 {
            let c = apportion(n, [8, 1, 1]).unwrap();
            assert_eq!(c.iter().sum::<usize>(), n);
            for (i, share) in [0.8, 0.1, 0.1].iter().enumerate() {
                assert!((c[i] as f64 - share * n as f64).abs() < 1.0, "n={n} {c:?}");
            }
        }
    }

    #[test]
    fn json_roundtrip_and_empty_input() {
        let recs = vec![rec("a", "s"), rec("b", "t")];
        let a = group_split(&recs, [8, 1, 1], 0).unwrap();
        assert_eq!(SplitAssignment::from_json(&a.to_json()).unwrap(), a);
        assert!(group_split(&[], [8, 1, 1], 0).is_err());
    }
}
