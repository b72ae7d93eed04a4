//! 3D cross-correlation, forward and backward, via patch gathering into a
//! matrix product. The naive nested-loop reference lives in the test suite
//! and stays independent of this path.

use super::Tensor;
use crate::error::{CoreError, Result};
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

/// Stride, padding, and kernel extent of one convolution.
#[derive(Clone, Copy, Debug)]
pub struct Conv3dSpec {
    pub stride: (usize, usize, usize),
    pub padding: Padding,
    pub kernel: (usize, usize, usize),
}

impl Conv3dSpec {
    pub fn unit(kernel: (usize, usize, usize), padding: Padding) -> Conv3dSpec {
        Conv3dSpec {
            stride: (1, 1, 1),
            padding,
            kernel,
        }
    }

    fn validate(&self) -> Result<()> {
        let (sz, sy, sx) = self.stride;
        if sz == 0 || sy == 0 || sx == 0 {
            return Err(CoreError::InvalidArgument("stride must be >= 1".into()));
        }
        let (kz, ky, kx) = self.kernel;
        if kz == 0 || ky == 0 || kx == 0 {
            return Err(CoreError::InvalidArgument("kernel dims must be >= 1".into()));
        }
        Ok(())
    }
}

/// Output extent and leading pad for one axis.
fn axis_geometry(dim: usize, kernel: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if dim < kernel {
                return Err(CoreError::ShapeMismatch {
                    op: "conv3d",
                    detail: format!("kernel {kernel} does not fit dim {dim} with VALID padding"),
                });
            }
            Ok(((dim - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = dim.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(dim);
            // Extra voxel of an odd pad goes on the trailing side.
            Ok((out, total / 2))
        }
    }
}

/// Spatial output shape for an input of extent (d, h, w).
pub fn conv3d_output_shape(
    input_dhw: (usize, usize, usize),
    spec: &Conv3dSpec,
) -> Result<(usize, usize, usize)> {
    spec.validate()?;
    let (oz, _) = axis_geometry(input_dhw.0, spec.kernel.0, spec.stride.0, spec.padding)?;
    let (oy, _) = axis_geometry(input_dhw.1, spec.kernel.1, spec.stride.1, spec.padding)?;
    let (ox, _) = axis_geometry(input_dhw.2, spec.kernel.2, spec.stride.2, spec.padding)?;
    Ok((oz, oy, ox))
}

struct Geometry {
    batch: usize,
    c_in: usize,
    c_out: usize,
    in_dhw: (usize, usize, usize),
    out_dhw: (usize, usize, usize),
    pad: (usize, usize, usize),
    patch_len: usize,
    out_vox: usize,
}

fn geometry(input: &Tensor, filters: &Tensor, spec: &Conv3dSpec) -> Result<Geometry> {
    spec.validate()?;
    let ishape = input.shape();
    let fshape = filters.shape();
    if ishape.len() != 5 || fshape.len() != 5 {
        return Err(CoreError::ShapeMismatch {
            op: "conv3d",
            detail: format!("expected 5-d input/filters, got {ishape:?} and {fshape:?}"),
        });
    }
    if ishape.iter().any(|&d| d == 0) || fshape.iter().any(|&d| d == 0) {
        return Err(CoreError::ShapeMismatch {
            op: "conv3d",
            detail: "zero-sized dimension".into(),
        });
    }
    if ishape[1] != fshape[1] {
        return Err(CoreError::ShapeMismatch {
            op: "conv3d",
            detail: format!("input channels {} != filter channels {}", ishape[1], fshape[1]),
        });
    }
    if (fshape[2], fshape[3], fshape[4]) != spec.kernel {
        return Err(CoreError::ShapeMismatch {
            op: "conv3d",
            detail: format!(
                "filter kernel {:?} != spec kernel {:?}",
                (fshape[2], fshape[3], fshape[4]),
                spec.kernel
            ),
        });
    }
    let in_dhw = (ishape[2], ishape[3], ishape[4]);
    let (oz, pz) = axis_geometry(in_dhw.0, spec.kernel.0, spec.stride.0, spec.padding)?;
    let (oy, py) = axis_geometry(in_dhw.1, spec.kernel.1, spec.stride.1, spec.padding)?;
    let (ox, px) = axis_geometry(in_dhw.2, spec.kernel.2, spec.stride.2, spec.padding)?;
    Ok(Geometry {
        batch: ishape[0],
        c_in: ishape[1],
        c_out: fshape[0],
        in_dhw,
        out_dhw: (oz, oy, ox),
        pad: (pz, py, px),
        patch_len: ishape[1] * spec.kernel.0 * spec.kernel.1 * spec.kernel.2,
        out_vox: oz * oy * ox,
    })
}

/// Gather the receptive field of every output voxel of every sample into a
/// row-major matrix [batch * out_vox, c_in * kz * ky * kx]. Out-of-bounds
/// (padding) positions read as zero.
fn gather_patches(input: &Tensor, geo: &Geometry, spec: &Conv3dSpec) -> Vec<f32> {
    let (kz, ky, kx) = spec.kernel;
    let (sz, sy, sx) = spec.stride;
    let (id, ih, iw) = geo.in_dhw;
    let (_od, oh, ow) = geo.out_dhw;
    let (pz, py, px) = geo.pad;
    let rows = geo.batch * geo.out_vox;
    let mut patches = vec![0.0f32; rows * geo.patch_len];
    let src = input.data();
    let sample_len = geo.c_in * id * ih * iw;

    patches
        .par_chunks_mut(geo.patch_len)
        .enumerate()
        .for_each(|(row, patch)| {
            let n = row / geo.out_vox;
            let v = row % geo.out_vox;
            let zo = v / (oh * ow);
            let yo = (v / ow) % oh;
            let xo = v % ow;
            let z0 = (zo * sz) as isize - pz as isize;
            let y0 = (yo * sy) as isize - py as isize;
            let x0 = (xo * sx) as isize - px as isize;
            let base = n * sample_len;
            let mut k = 0;
            for ci in 0..geo.c_in {
                let cbase = base + ci * id * ih * iw;
                for dz in 0..kz {
                    let z = z0 + dz as isize;
                    if z < 0 || z >= id as isize {
                        k += ky * kx;
                        continue;
                    }
                    let zbase = cbase + z as usize * ih * iw;
                    for dy in 0..ky {
                        let y = y0 + dy as isize;
                        if y < 0 || y >= ih as isize {
                            k += kx;
                            continue;
                        }
                        let ybase = zbase + y as usize * iw;
                        for dx in 0..kx {
                            let x = x0 + dx as isize;
                            if x >= 0 && x < iw as isize {
                                patch[k] = src[ybase + x as usize];
                            }
                            k += 1;
                        }
                    }
                }
            }
        });
    patches
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let ai = &a[i * 8..i * 8 + 8];
        let bi = &b[i * 8..i * 8 + 8];
        for j in 0..8 {
            acc[j] += ai[j] * bi[j];
        }
    }
    let mut s: f32 = acc.iter().sum();
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// C[m, n] = dot(A row m, B row n), i.e. C = A * B^T with B stored row-major.
pub(crate) fn matmul_abt(a: &[f32], b: &[f32], m: usize, n: usize, k: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![0.0f32; m * n];
    c.par_chunks_mut(n).enumerate().for_each(|(i, crow)| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, out) in crow.iter_mut().enumerate() {
            *out = dot(arow, &b[j * k..(j + 1) * k]);
        }
    });
    c
}

/// Cross-correlation of `input` [n, c_in, d, h, w] with `filters`
/// [c_out, c_in, kz, ky, kx]. SAME padding pads with zeros, the odd voxel on
/// the trailing side; output spatial dims are ceil(dim / stride).
pub fn conv3d_forward(input: &Tensor, filters: &Tensor, spec: &Conv3dSpec) -> Result<Tensor> {
    let geo = geometry(input, filters, spec)?;
    let patches = gather_patches(input, &geo, spec);
    let rows = geo.batch * geo.out_vox;
    // [rows, c_out]
    let out_mat = matmul_abt(&patches, filters.data(), rows, geo.c_out, geo.patch_len);

    let (od, oh, ow) = geo.out_dhw;
    let mut out = Tensor::zeros(&[geo.batch, geo.c_out, od, oh, ow]);
    let out_data = out.data_mut();
    let per_sample = geo.c_out * geo.out_vox;
    out_data
        .par_chunks_mut(per_sample)
        .enumerate()
        .for_each(|(n, sample)| {
            for co in 0..geo.c_out {
                for v in 0..geo.out_vox {
                    sample[co * geo.out_vox + v] = out_mat[(n * geo.out_vox + v) * geo.c_out + co];
                }
            }
        });
    Ok(out)
}

/// Gradients of `conv3d_forward` with respect to input and filters.
/// Filter gradients accumulate over the batch.
pub fn conv3d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    filters: &Tensor,
    spec: &Conv3dSpec,
) -> Result<(Tensor, Tensor)> {
    let geo = geometry(input, filters, spec)?;
    let (od, oh, ow) = geo.out_dhw;
    let expected = [geo.batch, geo.c_out, od, oh, ow];
    if grad_out.shape() != expected {
        return Err(CoreError::ShapeMismatch {
            op: "conv3d_backward",
            detail: format!("grad_out {:?}, expected {expected:?}", grad_out.shape()),
        });
    }

    let patches = gather_patches(input, &geo, spec);
    let rows = geo.batch * geo.out_vox;

    // Regather grad_out as [rows, c_out].
    let go = grad_out.data();
    let mut gmat = vec![0.0f32; rows * geo.c_out];
    gmat.par_chunks_mut(geo.c_out).enumerate().for_each(|(row, dst)| {
        let n = row / geo.out_vox;
        let v = row % geo.out_vox;
        let base = n * geo.c_out * geo.out_vox + v;
        for (co, d) in dst.iter_mut().enumerate() {
            *d = go[base + co * geo.out_vox];
        }
    });

    // grad_filters[co, k] = sum_m gmat[m, co] * patches[m, k]
    let patch_len = geo.patch_len;
    let c_out = geo.c_out;
    let n_chunks = rayon::current_num_threads().max(1);
    let chunk_rows = rows.div_ceil(n_chunks);
    let grad_filters_flat = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * chunk_rows;
            let hi = (lo + chunk_rows).min(rows);
            let mut acc = vec![0.0f32; c_out * patch_len];
            for m in lo..hi {
                let prow = &patches[m * patch_len..(m + 1) * patch_len];
                let grow = &gmat[m * c_out..(m + 1) * c_out];
                for (co, &g) in grow.iter().enumerate() {
                    if g != 0.0 {
                        let dst = &mut acc[co * patch_len..(co + 1) * patch_len];
                        for (d, p) in dst.iter_mut().zip(prow) {
                            *d += g * p;
                        }
                    }
                }
            }
            acc
        })
        .reduce(
            || vec![0.0f32; c_out * patch_len],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                a
            },
        );
    let grad_filters = Tensor::from_vec(filters.shape(), grad_filters_flat)?;

    // grad_patches[m, k] = sum_co gmat[m, co] * filters[co, k]
    let fdata = filters.data();
    let mut grad_patches = vec![0.0f32; rows * patch_len];
    grad_patches
        .par_chunks_mut(patch_len)
        .enumerate()
        .for_each(|(m, dst)| {
            let grow = &gmat[m * c_out..(m + 1) * c_out];
            for (co, &g) in grow.iter().enumerate() {
                if g != 0.0 {
                    let frow = &fdata[co * patch_len..(co + 1) * patch_len];
                    for (d, f) in dst.iter_mut().zip(frow) {
                        *d += g * f;
                    }
                }
            }
        });

    // Scatter patch gradients back onto the input (col2im). Samples are
    // independent, so parallelize over the batch.
    let (kz, ky, kx) = spec.kernel;
    let (sz, sy, sx) = spec.stride;
    let (id, ih, iw) = geo.in_dhw;
    let (pz, py, px) = geo.pad;
    let mut grad_input = Tensor::zeros(input.shape());
    let sample_len = geo.c_in * id * ih * iw;
    let out_vox = geo.out_vox;
    let c_in = geo.c_in;
    grad_input
        .data_mut()
        .par_chunks_mut(sample_len)
        .enumerate()
        .for_each(|(n, gin)| {
            for v in 0..out_vox {
                let row = n * out_vox + v;
                let patch = &grad_patches[row * patch_len..(row + 1) * patch_len];
                let zo = v / (oh * ow);
                let yo = (v / ow) % oh;
                let xo = v % ow;
                let z0 = (zo * sz) as isize - pz as isize;
                let y0 = (yo * sy) as isize - py as isize;
                let x0 = (xo * sx) as isize - px as isize;
                let mut k = 0;
                for ci in 0..c_in {
                    let cbase = ci * id * ih * iw;
                    for dz in 0..kz {
                        let z = z0 + dz as isize;
                        if z < 0 || z >= id as isize {
                            k += ky * kx;
                            continue;
                        }
                        let zbase = cbase + z as usize * ih * iw;
                        for dy in 0..ky {
                            let y = y0 + dy as isize;
                            if y < 0 || y >= ih as isize {
                                k += kx;
                                continue;
                            }
                            let ybase = zbase + y as usize * iw;
                            for dx in 0..kx {
                                let x = x0 + dx as isize;
                                if x >= 0 && x < iw as isize {
                                    gin[ybase + x as usize] += patch[k];
                                }
                                k += 1;
                            }
                        }
                    }
                }
            }
        });

    Ok((grad_input, grad_filters))
}
