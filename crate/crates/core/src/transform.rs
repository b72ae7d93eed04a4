//! Filter transformation: precomputed gather maps that turn one canonical
//! filter into its `|H|` rotated/reflected copies. Spatial voxel permutation
//! for every layer, composed with the orientation-channel shuffle `rho(h)`
//! for layers whose filters already carry orientation channels.

use crate::error::{CoreError, Result};
use crate::group::{GroupElement, GroupName, PermutationRep, SymmetryGroup};
use crate::tensor::Tensor;

/// Gather map over the voxels of one kernel: slot `p` of the transformed
/// filter reads voxel `map[p]` of the original.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialPermutation {
    pub kshape: (usize, usize, usize),
    pub map: Vec<usize>,
}

impl SpatialPermutation {
    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn apply(&self, values: &[f32]) -> Vec<f32> {
        self.map.iter().map(|&m| values[m]).collect()
    }
}

/// Gather map for rotating a (d, h, w) array by `h` about its center:
/// `out[p] = in[h^-1 (p - c) + c]`. Works for even extents too (the index
/// arithmetic runs in doubled coordinates), provided every axis the element
/// exchanges has a matching extent.
pub fn volume_gather_map(h: &GroupElement, dhw: (usize, usize, usize)) -> Result<Vec<usize>> {
    let (d, hh, w) = dhw;
    if d == 0 || hh == 0 || w == 0 {
        return Err(CoreError::InvalidArgument("zero-sized volume".into()));
    }
    // Vector components (x, y, z) index extents (w, h, d).
    let sizes = [w as isize, hh as isize, d as isize];
    let inv = h.inverse();
    for r in 0..3 {
        for c in 0..3 {
            if inv.matrix[r][c] != 0 && sizes[r] != sizes[c] {
                return Err(CoreError::InvalidArgument(format!(
                    "element {h:?} exchanges axes of unequal extent {dhw:?}"
                )));
            }
        }
    }
    let mut map = vec![0usize; d * hh * w];
    let mut out_idx = 0;
    for z in 0..d as isize {
        for y in 0..hh as isize {
            for x in 0..w as isize {
                // doubled coordinates relative to the center
                let u2 = [2 * x - (w as isize - 1), 2 * y - (hh as isize - 1), 2 * z - (d as isize - 1)];
                let mut s2 = [0isize; 3];
                for r in 0..3 {
                    for c in 0..3 {
                        s2[r] += inv.matrix[r][c] as isize * u2[c];
                    }
                }
                let xs = (s2[0] + (w as isize - 1)) / 2;
                let ys = (s2[1] + (hh as isize - 1)) / 2;
                let zs = (s2[2] + (d as isize - 1)) / 2;
                debug_assert!(xs >= 0 && xs < w as isize && ys >= 0 && ys < hh as isize && zs >= 0 && zs < d as isize);
                map[out_idx] = (zs as usize * hh + ys as usize) * w + xs as usize;
                out_idx += 1;
            }
        }
    }
    Ok(map)
}

/// Apply `map` to every (d·h·w)-sized channel of a [n, c, d, h, w] tensor.
/// Used by the equivariance checks to rotate whole feature maps.
pub fn gather_volume(input: &Tensor, map: &[usize]) -> Result<Tensor> {
    let shape = input.shape();
    if shape.len() != 5 || shape[2] * shape[3] * shape[4] != map.len() {
        return Err(CoreError::ShapeMismatch {
            op: "gather_volume",
            detail: format!("shape {shape:?} incompatible with map of {} entries", map.len()),
        });
    }
    let plane = map.len();
    let mut out = Tensor::zeros(shape);
    let src = input.data();
    for (ch, dst) in out.data_mut().chunks_mut(plane).enumerate() {
        let base = ch * plane;
        for (o, &m) in dst.iter_mut().zip(map) {
            *o = src[base + m];
        }
    }
    Ok(out)
}

/// Voxel permutation of one kernel under `h`. Kernel extents must be odd;
/// extents must agree on every pair of axes the element exchanges.
pub fn spatial_permutation(
    h: &GroupElement,
    kshape: (usize, usize, usize),
) -> Result<SpatialPermutation> {
    let (kz, ky, kx) = kshape;
    if kz % 2 == 0 || ky % 2 == 0 || kx % 2 == 0 {
        return Err(CoreError::InvalidArgument(format!(
            "kernel extents must be odd, got {kshape:?}"
        )));
    }
    let map = volume_gather_map(h, kshape)?;
    Ok(SpatialPermutation { kshape, map })
}

/// The combined per-element gather maps used by `expand_filters`.
///
/// For a first layer the maps run over kernel voxels only. For higher layers
/// they run over (orientation, voxel) slots: slot `(o, p)` of the copy for
/// element `h` reads slot `(rho[h][o], spatial[h][p])` of the canonical filter.
#[derive(Clone, Debug)]
pub struct FilterTransformPlan {
    pub group_name: GroupName,
    pub order: usize,
    pub kshape: (usize, usize, usize),
    pub first_layer: bool,
    pub maps: Vec<Vec<usize>>,
}

impl FilterTransformPlan {
    pub fn slots(&self) -> usize {
        let (kz, ky, kx) = self.kshape;
        let vox = kz * ky * kx;
        if self.first_layer {
            vox
        } else {
            self.order * vox
        }
    }
}

/// Build the per-element maps for a group and kernel shape.
pub fn build_plan(
    group: &SymmetryGroup,
    rho: &PermutationRep,
    kshape: (usize, usize, usize),
    first_layer: bool,
) -> Result<FilterTransformPlan> {
    if group.name.requires_cubic() && !(kshape.0 == kshape.1 && kshape.1 == kshape.2) {
        return Err(CoreError::InvalidArgument(format!(
            "group {} needs a cubic kernel, got {kshape:?}",
            group.name
        )));
    }
    let vox = kshape.0 * kshape.1 * kshape.2;
    let order = group.order();
    let mut maps = Vec::with_capacity(order);
    for (j, element) in group.elements.iter().enumerate() {
        let spatial = spatial_permutation(element, kshape)?;
        if first_layer {
            maps.push(spatial.map);
        } else {
            let perm = &rho.perms[j];
            let mut combined = Vec::with_capacity(order * vox);
            for o in 0..order {
                let src_channel = perm[o];
                for p in 0..vox {
                    combined.push(src_channel * vox + spatial.map[p]);
                }
            }
            maps.push(combined);
        }
    }
    Ok(FilterTransformPlan {
        group_name: group.name,
        order,
        kshape,
        first_layer,
        maps,
    })
}

/// Expand a canonical filter bank into its `n_out * |H|` transformed copies.
///
/// First layer: [n_out, n_in, kz, ky, kx] -> [n_out*|H|, n_in, kz, ky, kx].
/// Higher layer: [n_out, n_in, |H|, kz, ky, kx] -> [n_out*|H|, n_in*|H|, kz, ky, kx],
/// with the orientation axis folded into the input-channel axis in canonical
/// element order. The copy for element `j` of filter `i` lands at output
/// index `i*|H| + j`.
pub fn expand_filters(plan: &FilterTransformPlan, filters: &Tensor) -> Result<Tensor> {
    let shape = filters.shape();
    let (kz, ky, kx) = plan.kshape;
    let _vox = kz * ky * kx;
    let order = plan.order;

    let (n_out, n_in) = if plan.first_layer {
        if shape.len() != 5 || (shape[2], shape[3], shape[4]) != plan.kshape {
            return Err(CoreError::ShapeMismatch {
                op: "expand_filters",
                detail: format!("first-layer filters {shape:?} vs kernel {:?}", plan.kshape),
            });
        }
        (shape[0], shape[1])
    } else {
        if shape.len() != 6 || shape[2] != order || (shape[3], shape[4], shape[5]) != plan.kshape {
            return Err(CoreError::ShapeMismatch {
                op: "expand_filters",
                detail: format!(
                    "higher-layer filters {shape:?} vs order {order} and kernel {:?}",
                    plan.kshape
                ),
            });
        }
        (shape[0], shape[1])
    };

    let slots = plan.slots();
    let canon_len = n_in * slots;
    let src = filters.data();
    let out_shape = if plan.first_layer {
        vec![n_out * order, n_in, kz, ky, kx]
    } else {
        vec![n_out * order, n_in * order, kz, ky, kx]
    };
    let mut out = Tensor::zeros(&out_shape);
    let dst = out.data_mut();

    for i in 0..n_out {
        let canon = &src[i * canon_len..(i + 1) * canon_len];
        for (j, map) in plan.maps.iter().enumerate() {
            let obase = (i * order + j) * canon_len;
            for ci in 0..n_in {
                let cbase = ci * slots;
                let dslice = &mut dst[obase + cbase..obase + cbase + slots];
                let sslice = &canon[cbase..cbase + slots];
                for (d, &m) in dslice.iter_mut().zip(map) {
                    *d = sslice[m];
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`expand_filters`]: fold gradients of the expanded bank back
/// onto the canonical filters. Every copy contributes, so each canonical
/// parameter accumulates `|H|` gradient terms.
pub fn fold_filter_grads(
    plan: &FilterTransformPlan,
    grad_expanded: &Tensor,
    canonical_shape: &[usize],
) -> Result<Tensor> {
    let order = plan.order;
    let slots = plan.slots();
    let n_out = canonical_shape[0];
    let n_in = canonical_shape[1];
    let canon_len = n_in * slots;
    if grad_expanded.len() != n_out * order * canon_len {
        return Err(CoreError::ShapeMismatch {
            op: "fold_filter_grads",
            detail: format!(
                "expanded grad has {} values, expected {}",
                grad_expanded.len(),
                n_out * order * canon_len
            ),
        });
    }
    let src = grad_expanded.data();
    let mut out = Tensor::zeros(canonical_shape);
    let dst = out.data_mut();
    for i in 0..n_out {
        let canon = &mut dst[i * canon_len..(i + 1) * canon_len];
        for (j, map) in plan.maps.iter().enumerate() {
            let obase = (i * order + j) * canon_len;
            for ci in 0..n_in {
                let cbase = ci * slots;
                let gslice = &src[obase + cbase..obase + cbase + slots];
                for (&m, &g) in map.iter().zip(gslice) {
                    canon[cbase + m] += g;
                }
            }
        }
    }
    Ok(out)
}
