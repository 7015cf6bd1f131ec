use std::cmp::Ordering;

use super::{AcceptedMolecule, MetricsError};
use crate::fingerprints::{tanimoto, Fingerprint};

/// Largest set `ncircles_exact` accepts.
pub const EXACT_LIMIT: usize = 20;

fn check_threshold(h: f64) -> Result<(), MetricsError> {
    if h > 0.0 && h <= 1.0 {
        Ok(())
    } else {
        Err(MetricsError::InvalidThreshold(h))
    }
}

/// Packing order: score descending, then canonical string, then input index.
pub fn packing_order(molecules: &[AcceptedMolecule]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..molecules.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&molecules[a], &molecules[b]);
        y.score
            .total_cmp(&x.score)
            .then_with(|| x.canonical.cmp(&y.canonical))
            .then(a.cmp(&b))
    });
    order
}

/// Indices of the circle centers chosen by greedy packing.
pub fn greedy_centers(molecules: &[AcceptedMolecule], h: f64) -> Result<Vec<usize>, MetricsError> {
    check_threshold(h)?;
    let mut centers: Vec<usize> = Vec::new();
    for i in packing_order(molecules) {
        let mut admit = true;
        for &c in &centers {
            if tanimoto(&molecules[i].fingerprint, &molecules[c].fingerprint)? >= h {
                admit = false;
                break;
            }
        }
        if admit {
            centers.push(i);
        }
    }
    Ok(centers)
}

pub fn ncircles_greedy(molecules: &[AcceptedMolecule], h: f64) -> Result<usize, MetricsError> {
    Ok(greedy_centers(molecules, h)?.len())
}

/// Maximum independent set in the graph joining pairs with similarity >= h.
pub fn ncircles_exact(fps: &[Fingerprint], h: f64) -> Result<usize, MetricsError> {
    check_threshold(h)?;
    let n = fps.len();
    if n > EXACT_LIMIT {
        return Err(MetricsError::TooLarge(n));
    }
    let mut adj = vec![0u32; n];
    for i in 0..n {
        for j in i + 1..n {
            if tanimoto(&fps[i], &fps[j])? >= h {
                adj[i] |= 1 << j;
                adj[j] |= 1 << i;
            }
        }
    }
    let all = if n == 0 { 0 } else { u32::MAX >> (32 - n) };
    let mut best = 0;
    max_independent(&adj, all, 0, &mut best);
    Ok(best as usize)
}

fn max_independent(adj: &[u32], candidates: u32, taken: u32, best: &mut u32) {
    if candidates == 0 {
        *best = (*best).max(taken);
        return;
    }
    if taken + candidates.count_ones() <= *best {
        return;
    }
    // Branch on the candidate with the most remaining neighbors; isolated
    // candidates can always be taken.
    let mut pick = None;
    let mut isolated = 0u32;
    let mut rest = candidates;
    while rest != 0 {
        let v = rest.trailing_zeros() as usize;
        rest &= rest - 1;
        let deg = (adj[v] & candidates).count_ones();
        if deg == 0 {
            isolated |= 1 << v;
        } else if pick.map_or(true, |(_, d)| deg > d) {
            pick = Some((v, deg));
        }
    }
    let taken = taken + isolated.count_ones();
    let candidates = candidates & !isolated;
    let Some((v, _)) = pick else {
        *best = (*best).max(taken);
        return;
    };
    let bit = 1u32 << v;
    max_independent(adj, candidates & !bit & !adj[v], taken + 1, best);
    max_independent(adj, candidates & !bit, taken, best);
}

/// One minus the mean pairwise Tanimoto similarity; 0 for fewer than two molecules.
pub fn intdiv(fps: &[Fingerprint]) -> Result<f64, MetricsError> {
    let n = fps.len();
    if n < 2 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += tanimoto(&fps[i], &fps[j])?;
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok((1.0 - sum / pairs).clamp(0.0, 1.0))
}

pub(crate) fn cmp_f64_desc(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::CanonicalSmiles;

    fn fp(bits: &[usize]) -> Fingerprint {
        let mut f = Fingerprint::empty(64, 2).unwrap();
        for &b in bits {
            f.set(b);
        }
        f
    }

    fn mols(fps: &[Fingerprint]) -> Vec<AcceptedMolecule> {
        fps.iter()
            .enumerate()
            .map(|(i, f)| AcceptedMolecule {
                canonical: CanonicalSmiles::new_unchecked(format!("m{i:02}")),
                fingerprint: f.clone(),
                score: 1.0,
            })
            .collect()
    }

    #[test]
    fn identical_set_is_one_circle() {
        let fps = vec![fp(&[1, 2, 3]); 5];
        assert_eq!(ncircles_greedy(&mols(&fps), 0.65).unwrap(), 1);
        assert_eq!(ncircles_exact(&fps, 0.65).unwrap(), 1);
    }

    #[test]
    fn disjoint_set_is_all_circles() {
        let fps: Vec<_> = (0..6).map(|i| fp(&[i])).collect();
        assert_eq!(ncircles_greedy(&mols(&fps), 0.65).unwrap(), 6);
        assert_eq!(ncircles_exact(&fps, 0.65).unwrap(), 6);
    }

    #[test]
    fn path_graph() {
        // sim(a,b) = sim(b,c) = 2/3, sim(a,c) = 1/3.
        let fps = vec![fp(&[0, 1]), fp(&[0, 1, 2]), fp(&[1, 2])];
        assert_eq!(ncircles_exact(&fps, 0.6).unwrap(), 2);
        let mut m = mols(&fps);
        // With b first, greedy blocks both a and c.
        m[1].score = 2.0;
        assert_eq!(ncircles_greedy(&m, 0.6).unwrap(), 1);
    }

    #[test]
    fn greedy_count_can_drop_as_threshold_rises() {
        let fps = vec![
            fp(&[0, 2, 7, 8, 9]),
            fp(&[2, 3, 5, 8, 9]),
            fp(&[2, 3, 5, 6, 7, 9]),
            fp(&[1, 2, 3, 4, 5, 8]),
        ];
        let m = mols(&fps);
        assert_eq!(ncircles_greedy(&m, 0.4).unwrap(), 3);
        assert_eq!(ncircles_greedy(&m, 0.55).unwrap(), 2);
        assert!(ncircles_exact(&fps, 0.4).unwrap() <= ncircles_exact(&fps, 0.55).unwrap());
    }

    #[test]
    fn strict_threshold() {
        // Similarity exactly 0.5 is not below h = 0.5.
        let fps = vec![fp(&[0, 1]), fp(&[0])];
        assert_eq!(ncircles_exact(&fps, 0.5).unwrap(), 1);
        assert_eq!(ncircles_greedy(&mols(&fps), 0.5).unwrap(), 1);
        assert_eq!(ncircles_exact(&fps, 0.51).unwrap(), 2);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            ncircles_exact(&vec![fp(&[0]); 21], 0.5),
            Err(MetricsError::TooLarge(21))
        ));
        assert!(matches!(
            ncircles_greedy(&[], 0.0),
            Err(MetricsError::InvalidThreshold(_))
        ));
        assert_eq!(ncircles_greedy(&[], 0.5).unwrap(), 0);
        assert_eq!(ncircles_exact(&[], 0.5).unwrap(), 0);
    }

    #[test]
    fn intdiv_values() {
        assert_eq!(intdiv(&[fp(&[1])]).unwrap(), 0.0);
        assert_eq!(intdiv(&[fp(&[1, 2]), fp(&[1, 2])]).unwrap(), 0.0);
        assert_eq!(intdiv(&[fp(&[1]), fp(&[2])]).unwrap(), 1.0);
        // Pairwise similarities 1.0, 0.5, 0.5.
        let d = intdiv(&[fp(&[1, 2]), fp(&[1, 2]), fp(&[1])]).unwrap();
        assert!((d - (1.0 - 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn packing_order_ties_by_canonical() {
        let mut m = mols(&[fp(&[0]), fp(&[1]), fp(&[2])]);
        m[2].score = 3.0;
        m[0].canonical = CanonicalSmiles::new_unchecked("z".into());
        assert_eq!(packing_order(&m), vec![2, 1, 0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn fingerprint_sets() -> impl Strategy<Value = Vec<Fingerprint>> {
            prop::collection::vec(prop::collection::vec(0usize..24, 1..8), 0..14)
                .prop_map(|sets| sets.iter().map(|b| fp(b)).collect())
        }

        proptest! {
            #[test]
            fn greedy_bounded_by_exact_and_maximal(fps in fingerprint_sets(), h in 0.05f64..1.0) {
                let m = mols(&fps);
                let centers = greedy_centers(&m, h).unwrap();
                prop_assert!(centers.len() <= ncircles_exact(&fps, h).unwrap());
                for i in 0..fps.len() {
                    if centers.contains(&i) {
                        continue;
                    }
                    let blocked = centers.iter().any(|&c| tanimoto(&fps[i], &fps[c]).unwrap() >= h);
                    prop_assert!(blocked, "molecule {} could still be added", i);
                }
            }

            #[test]
            fn exact_monotone_in_threshold(fps in fingerprint_sets(), a in 0.05f64..1.0, b in 0.05f64..1.0) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(ncircles_exact(&fps, lo).unwrap() <= ncircles_exact(&fps, hi).unwrap());
            }

            #[test]
            fn order_invariance(fps in fingerprint_sets(), h in 0.05f64..1.0, seed in any::<u64>()) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let mut shuffled = fps.clone();
                shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                prop_assert_eq!(ncircles_exact(&fps, h).unwrap(), ncircles_exact(&shuffled, h).unwrap());
                let (d1, d2) = (intdiv(&fps).unwrap(), intdiv(&shuffled).unwrap());
                prop_assert!((d1 - d2).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&d1));
            }
        }
    }
}
