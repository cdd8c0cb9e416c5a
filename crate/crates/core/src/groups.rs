//! Candidate peer groups as bandit arms.
//!
//! A node with neighborhood N and group size M has C(|N|, M) candidate
//! groups. Arms are indexed by the lexicographic rank of the group's sorted
//! member list, so arm indices are stable, dense and zero-based, and a group
//! never needs to be stored: rank and unrank convert both ways on demand.
//! All counts use exact integer arithmetic and fail loudly on overflow.

use crate::error::Error;
use crate::Result;

/// Exact C(n, k); 0 when k > n. Errors only when the value (or an
/// intermediate product) cannot be represented.
pub fn binomial(n: u64, k: u64) -> Result<u64> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k {
        let factor = (n - k + i) as u128;
        acc = acc
            .checked_mul(factor)
            .ok_or_else(|| Error::Capacity(format!("C({n}, {k}) overflows during computation")))?;
        acc /= i as u128; // exact: C(n-k+i, i) divides the running product
    }
    u64::try_from(acc).map_err(|_| Error::Capacity(format!("C({n}, {k}) does not fit in u64")))
}

/// Number of candidate groups for a neighborhood of the given size.
pub fn count_groups(neighborhood_size: usize, group_size: usize) -> Result<u64> {
    if group_size == 0 {
        return Err(Error::Domain("group size must be at least 1".into()));
    }
    if group_size > neighborhood_size {
        return Err(Error::Domain(format!(
            "group size {group_size} exceeds neighborhood size {neighborhood_size}"
        )));
    }
    binomial(neighborhood_size as u64, group_size as u64)
}

/// Number of groups drawn from one node's neighborhood in a fully connected
/// network of `n` nodes that intersect a fixed group in exactly `u` members.
pub fn overlap_class_count(n: usize, m: usize, u: usize) -> Result<u64> {
    if m == 0 || u >= m {
        return Err(Error::Domain(format!("overlap {u} must lie in 0..{m}")));
    }
    if n <= 2 * m {
        return Err(Error::Domain(format!(
            "network size {n} too small for overlap classes with group size {m}"
        )));
    }
    let same = binomial(m as u64, u as u64)?;
    let other = binomial((n - m - 1) as u64, (m - u) as u64)?;
    same.checked_mul(other)
        .ok_or_else(|| Error::Capacity(format!("overlap class count ({n}, {m}, {u}) overflows u64")))
}

/// Intersection size of two sorted member lists.
pub fn overlap(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// One node's view of its candidate groups: the sorted neighborhood and the
/// lexicographic arm indexing over its M-subsets.
#[derive(Debug, Clone)]
pub struct GroupCatalog {
    neighborhood: Vec<usize>,
    group_size: usize,
    num_arms: u64,
}

impl GroupCatalog {
    pub fn new(neighborhood: Vec<usize>, group_size: usize) -> Result<Self> {
        if !neighborhood.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Domain(
                "neighborhood must be sorted and free of duplicates".into(),
            ));
        }
        let num_arms = count_groups(neighborhood.len(), group_size)?;
        Ok(Self { neighborhood, group_size, num_arms })
    }

    pub fn num_arms(&self) -> u64 {
        self.num_arms
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn neighborhood(&self) -> &[usize] {
        &self.neighborhood
    }

    /// Member list (sorted node ids) of the arm with the given rank.
    pub fn unrank(&self, arm: u64) -> Result<Vec<usize>> {
        if arm >= self.num_arms {
            return Err(Error::Index { index: arm, limit: self.num_arms });
        }
        let n = self.neighborhood.len();
        let m = self.group_size;
        let mut members = Vec::with_capacity(m);
        let mut remaining = arm;
        let mut pos = 0;
        for slot in 0..m {
            loop {
                let with_pos = binomial((n - pos - 1) as u64, (m - slot - 1) as u64)?;
                if remaining < with_pos {
                    members.push(self.neighborhood[pos]);
                    pos += 1;
                    break;
                }
                remaining -= with_pos;
                pos += 1;
            }
        }
        Ok(members)
    }

    /// Rank of a group given as sorted member node ids.
    pub fn rank(&self, members: &[usize]) -> Result<u64> {
        if members.len() != self.group_size {
            return Err(Error::Domain(format!(
                "group has {} members, expected {}",
                members.len(),
                self.group_size
            )));
        }
        let n = self.neighborhood.len();
        let m = self.group_size;
        let mut rank = 0u64;
        let mut prev_pos: Option<usize> = None;
        for (slot, &id) in members.iter().enumerate() {
            let pos = self
                .neighborhood
                .binary_search(&id)
                .map_err(|_| Error::Domain(format!("node {id} is not in the neighborhood")))?;
            if let Some(p) = prev_pos {
                if pos <= p {
                    return Err(Error::Domain("group members must be strictly increasing".into()));
                }
            }
            let start = prev_pos.map_or(0, |p| p + 1);
            for skipped in start..pos {
                rank += binomial((n - skipped - 1) as u64, (m - slot - 1) as u64)?;
            }
            prev_pos = Some(pos);
        }
        Ok(rank)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts_match_hand_checked_values() {
        assert_eq!(count_groups(99, 2).unwrap(), 4_851);
        assert_eq!(count_groups(99, 3).unwrap(), 156_849);
        assert_eq!(count_groups(4, 2).unwrap(), 6);
        assert_eq!(count_groups(5, 5).unwrap(), 1);
    }

    #[test]
    fn count_rejects_degenerate_sizes() {
        assert!(matches!(count_groups(10, 0), Err(Error::Domain(_))));
        assert!(matches!(count_groups(3, 4), Err(Error::Domain(_))));
    }

    #[test]
    fn count_rejects_overflow() {
        assert!(matches!(count_groups(200, 100), Err(Error::Capacity(_))));
    }

    #[test]
    fn overlap_class_counts_match_hand_checked_values() {
        assert_eq!(overlap_class_count(100, 3, 1).unwrap(), 13_680);
        assert_eq!(overlap_class_count(100, 3, 2).unwrap(), 288);
        assert_eq!(overlap_class_count(100, 3, 0).unwrap(), 142_880);
    }

    #[test]
    fn overlap_classes_partition_the_catalog() {
        // Every group other than the fixed one overlaps it in 0..M-1 members.
        for (n, m) in [(100usize, 3usize), (20, 2), (9, 4)] {
            let mut total = 1u64;
            for u in 0..m {
                total += overlap_class_count(n, m, u).unwrap();
            }
            assert_eq!(total, count_groups(n - 1, m).unwrap(), "n={n} m={m}");
        }
    }

    #[test]
    fn overlap_class_rejects_bad_domain() {
        assert!(matches!(overlap_class_count(100, 3, 3), Err(Error::Domain(_))));
        assert!(matches!(overlap_class_count(6, 3, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn unrank_follows_lexicographic_order() {
        let catalog = GroupCatalog::new(vec![1, 2, 3, 4], 2).unwrap();
        assert_eq!(catalog.num_arms(), 6);
        assert_eq!(catalog.unrank(0).unwrap(), vec![1, 2]);
        assert_eq!(catalog.unrank(1).unwrap(), vec![1, 3]);
        assert_eq!(catalog.unrank(5).unwrap(), vec![3, 4]);
    }

    #[test]
    fn rank_and_unrank_are_inverse_over_a_full_catalog() {
        let catalog = GroupCatalog::new((0..8).collect(), 3).unwrap();
        let mut seen = Vec::new();
        for arm in 0..catalog.num_arms() {
            let members = catalog.unrank(arm).unwrap();
            assert!(members.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(catalog.rank(&members).unwrap(), arm);
            seen.push(members);
        }
        // Lexicographic order means the member lists themselves are sorted.
        for pair in seen.windows(2) {
            assert!(pair[0] < pair[1]);
        }
    }

    #[test]
    fn rank_rejects_foreign_and_unsorted_groups() {
        let catalog = GroupCatalog::new(vec![2, 4, 6, 8], 2).unwrap();
        assert!(matches!(catalog.rank(&[2, 5]), Err(Error::Domain(_))));
        assert!(matches!(catalog.rank(&[6, 4]), Err(Error::Domain(_))));
        assert!(matches!(catalog.rank(&[2]), Err(Error::Domain(_))));
        assert!(matches!(catalog.unrank(6), Err(Error::Index { .. })));
    }

    #[test]
    fn catalog_rejects_unsorted_neighborhood() {
        assert!(matches!(GroupCatalog::new(vec![3, 1, 2], 2), Err(Error::Domain(_))));
        assert!(matches!(GroupCatalog::new(vec![1, 1, 2], 2), Err(Error::Domain(_))));
    }

    #[test]
    fn overlap_counts_shared_members() {
        assert_eq!(overlap(&[1, 3, 5], &[2, 3, 5]), 2);
        assert_eq!(overlap(&[1, 2], &[3, 4]), 0);
        assert_eq!(overlap(&[7], &[7]), 1);
    }

    proptest! {
        #[test]
        fn roundtrip_holds_for_random_catalogs(n in 1usize..13, m in 1usize..5, raw_arm in 0u64..10_000) {
            prop_assume!(m <= n);
            let neighborhood: Vec<usize> = (0..n).map(|i| i * 3 + 1).collect();
            let catalog = GroupCatalog::new(neighborhood.clone(), m).unwrap();
            let arm = raw_arm % catalog.num_arms();
            let members = catalog.unrank(arm).unwrap();
            prop_assert_eq!(members.len(), m);
            prop_assert!(members.iter().all(|id| neighborhood.contains(id)));
            prop_assert!(members.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(catalog.rank(&members).unwrap(), arm);
        }

        #[test]
        fn binomial_satisfies_pascal_rule(n in 1u64..60, k in 1u64..60) {
            prop_assume!(k <= n);
            let lhs = binomial(n, k).unwrap();
            let rhs = binomial(n - 1, k - 1).unwrap() + binomial(n - 1, k).unwrap();
            prop_assert_eq!(lhs, rhs);
        }
    }
}
