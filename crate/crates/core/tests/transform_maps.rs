//! Properties of the precomputed filter-transformation maps: bijectivity,
//! inverse cancellation, composition along the Cayley table, and the
//! one-hot probe of the expansion layout.

mod common;

use common::random_f32;
use octoconv_core::group::{compose_gather, GroupName, SymmetryGroup};
use octoconv_core::tensor::Tensor;
use octoconv_core::transform::{build_plan, expand_filters, spatial_permutation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

fn is_bijection(map: &[usize]) -> bool {
    let seen: HashSet<usize> = map.iter().copied().collect();
    seen.len() == map.len() && map.iter().all(|&m| m < map.len())
}

#[test]
fn spatial_maps_are_bijections() {
    for name in GroupName::ALL {
        let g = SymmetryGroup::build(name).unwrap();
        for e in &g.elements {
            let sp = spatial_permutation(e, (3, 3, 3)).unwrap();
            assert!(is_bijection(&sp.map), "{name}: {e:?}");
        }
    }
}

#[test]
fn spatial_map_of_inverse_cancels() {
    let g = SymmetryGroup::build(GroupName::O).unwrap();
    for (i, e) in g.elements.iter().enumerate() {
        let m = spatial_permutation(e, (3, 3, 3)).unwrap();
        let minv = spatial_permutation(&g.elements[g.inverse[i]], (3, 3, 3)).unwrap();
        let composed = compose_gather(&m.map, &minv.map);
        assert!(composed.iter().enumerate().all(|(a, &b)| a == b));
    }
}

#[test]
fn spatial_maps_compose_along_cayley_exhaustive_d4_groups() {
    for name in [GroupName::D4, GroupName::D4h] {
        let g = SymmetryGroup::build(name).unwrap();
        let maps: Vec<Vec<usize>> = g
            .elements
            .iter()
            .map(|e| spatial_permutation(e, (3, 3, 3)).unwrap().map)
            .collect();
        for i in 0..g.order() {
            for j in 0..g.order() {
                assert_eq!(
                    maps[g.cayley[i][j]],
                    compose_gather(&maps[i], &maps[j]),
                    "{name}: elements {i}, {j}"
                );
            }
        }
    }
}

#[test]
fn spatial_maps_compose_along_cayley_sampled_octahedral() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for name in [GroupName::O, GroupName::Oh] {
        let g = SymmetryGroup::build(name).unwrap();
        let maps: Vec<Vec<usize>> = g
            .elements
            .iter()
            .map(|e| spatial_permutation(e, (3, 3, 3)).unwrap().map)
            .collect();
        for _ in 0..200 {
            let i = rng.gen_range(0..g.order());
            let j = rng.gen_range(0..g.order());
            assert_eq!(maps[g.cayley[i][j]], compose_gather(&maps[i], &maps[j]));
        }
    }
}

#[test]
fn plan_maps_are_bijections_and_distinct() {
    // D4 first layer: 8 distinct voxel maps.
    let d4 = SymmetryGroup::build(GroupName::D4).unwrap();
    let plan = build_plan(&d4, &d4.rho, (3, 3, 3), true).unwrap();
    assert_eq!(plan.maps.len(), 8);
    for (i, m) in plan.maps.iter().enumerate() {
        assert!(is_bijection(m));
        for other in &plan.maps[i + 1..] {
            assert_ne!(m, other, "first-layer maps must be pairwise distinct");
        }
    }

    // Oh higher layer: 48 bijections over 48 * 27 slots.
    let oh = SymmetryGroup::build(GroupName::Oh).unwrap();
    let plan = build_plan(&oh, &oh.rho, (3, 3, 3), false).unwrap();
    assert_eq!(plan.maps.len(), 48);
    for m in &plan.maps {
        assert_eq!(m.len(), 48 * 27);
        assert!(is_bijection(m));
    }
}

#[test]
fn higher_layer_maps_compose_along_cayley() {
    let g = SymmetryGroup::build(GroupName::D4).unwrap();
    let plan = build_plan(&g, &g.rho, (3, 3, 3), false).unwrap();
    for i in 0..g.order() {
        for j in 0..g.order() {
            assert_eq!(
                plan.maps[g.cayley[i][j]],
                compose_gather(&plan.maps[i], &plan.maps[j])
            );
        }
    }
}

#[test]
fn one_hot_probe_lands_where_the_spatial_map_predicts() {
    let g = SymmetryGroup::build(GroupName::D4).unwrap();
    let plan = build_plan(&g, &g.rho, (3, 3, 3), true).unwrap();
    for hot in [0usize, 5, 13, 22, 26] {
        let mut filter = Tensor::zeros(&[1, 1, 3, 3, 3]);
        filter.data_mut()[hot] = 1.0;
        let expanded = expand_filters(&plan, &filter).unwrap();
        assert_eq!(expanded.shape(), &[8, 1, 3, 3, 3]);
        for (j, copy) in expanded.data().chunks(27).enumerate() {
            let sp = spatial_permutation(&g.elements[j], (3, 3, 3)).unwrap();
            // copy[p] = filter[map[p]], so the hot voxel appears at the p
            // with map[p] == hot.
            let predicted = sp.map.iter().position(|&m| m == hot).unwrap();
            for (p, &v) in copy.iter().enumerate() {
                let expected = if p == predicted { 1.0 } else { 0.0 };
                assert_eq!(v, expected, "copy {j}, voxel {p}");
            }
        }
    }
}

#[test]
fn expansion_preserves_value_multiset_per_copy() {
    let g = SymmetryGroup::build(GroupName::Oh).unwrap();
    let plan = build_plan(&g, &g.rho, (3, 3, 3), false).unwrap();
    let canonical =
        Tensor::from_vec(&[1, 2, 48, 3, 3, 3], random_f32(2 * 48 * 27, 3, 1.0)).unwrap();
    let expanded = expand_filters(&plan, &canonical).unwrap();
    assert_eq!(expanded.shape(), &[48, 96, 3, 3, 3]);
    let mut canon_sorted: Vec<u32> = canonical.data().iter().map(|v| v.to_bits()).collect();
    canon_sorted.sort_unstable();
    let copy_len = canonical.len();
    for copy in expanded.data().chunks(copy_len) {
        let mut sorted: Vec<u32> = copy.iter().map(|v| v.to_bits()).collect();
        sorted.sort_unstable();
        assert_eq!(sorted, canon_sorted);
    }
}
