//! The patch-gather convolution against the naive f64 loop oracle, plus the
//! padding-equivalence identity.

mod common;

use common::{conv3d_f64, random_f32, to_f64, RefPadding};
use octoconv_core::tensor::{conv3d_forward, Conv3dSpec, Padding, Tensor};

fn check_against_oracle(
    ishape: (usize, usize, usize, usize, usize),
    fshape: (usize, usize, usize, usize, usize),
    stride: (usize, usize, usize),
    padding: Padding,
    seed: u64,
) {
    let (n, ci, id, ih, iw) = ishape;
    let (co, _, kz, ky, kx) = fshape;
    let input_data = random_f32(n * ci * id * ih * iw, seed, 1.0);
    let filter_data = random_f32(co * ci * kz * ky * kx, seed ^ 0xF1, 1.0);
    let input = Tensor::from_vec(&[n, ci, id, ih, iw], input_data.clone()).unwrap();
    let filters = Tensor::from_vec(&[co, ci, kz, ky, kx], filter_data.clone()).unwrap();
    let spec = Conv3dSpec {
        stride,
        padding,
        kernel: (kz, ky, kx),
    };
    let out = conv3d_forward(&input, &filters, &spec).unwrap();
    let ref_padding = match padding {
        Padding::Valid => RefPadding::Valid,
        Padding::Same => RefPadding::Same,
    };
    let (expected, oshape) = conv3d_f64(
        &to_f64(&input_data),
        ishape,
        &to_f64(&filter_data),
        fshape,
        stride,
        ref_padding,
    );
    assert_eq!(
        out.shape(),
        &[oshape.0, oshape.1, oshape.2, oshape.3, oshape.4]
    );
    for (i, (&got, &want)) in out.data().iter().zip(&expected).enumerate() {
        assert!(
            (got as f64 - want).abs() <= 1e-5,
            "voxel {i}: {got} vs {want} ({ishape:?}/{fshape:?}/{stride:?})"
        );
    }
}

#[test]
fn random_case_matches_nested_loop_oracle() {
    check_against_oracle((1, 2, 4, 5, 5), (3, 2, 3, 3, 3), (1, 1, 1), Padding::Valid, 11);
}

#[test]
fn oracle_sweep_over_shapes_strides_and_padding() {
    let cases = [
        ((1, 1, 3, 3, 3), (1, 1, 3, 3, 3), (1, 1, 1)),
        ((2, 3, 5, 4, 6), (4, 3, 3, 3, 3), (1, 1, 1)),
        ((1, 2, 6, 6, 6), (2, 2, 3, 3, 3), (2, 2, 2)),
        ((2, 1, 5, 6, 4), (3, 1, 1, 3, 3), (1, 2, 1)),
        ((1, 4, 4, 4, 4), (5, 4, 1, 1, 1), (1, 1, 2)),
    ];
    for (i, &(ishape, fshape, stride)) in cases.iter().enumerate() {
        check_against_oracle(ishape, fshape, stride, Padding::Valid, 100 + i as u64);
        check_against_oracle(ishape, fshape, stride, Padding::Same, 200 + i as u64);
    }
}

#[test]
fn same_padding_equals_valid_on_prepadded_input() {
    // Stride 1: SAME output must equal VALID run on an explicitly zero-padded
    // copy of the input, bit for bit.
    let (d, h, w) = (4, 5, 6);
    let input_data = random_f32(2 * d * h * w, 42, 1.0);
    let input = Tensor::from_vec(&[1, 2, d, h, w], input_data.clone()).unwrap();
    let filters = Tensor::from_vec(&[2, 2, 3, 3, 3], random_f32(2 * 2 * 27, 43, 1.0)).unwrap();

    let same = conv3d_forward(
        &input,
        &filters,
        &Conv3dSpec::unit((3, 3, 3), Padding::Same),
    )
    .unwrap();

    let (pd, ph, pw) = (d + 2, h + 2, w + 2);
    let mut padded = Tensor::zeros(&[1, 2, pd, ph, pw]);
    for c in 0..2 {
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let src = ((c * d + z) * h + y) * w + x;
                    let dst = ((c * pd + z + 1) * ph + y + 1) * pw + x + 1;
                    padded.data_mut()[dst] = input_data[src];
                }
            }
        }
    }
    let valid = conv3d_forward(
        &padded,
        &filters,
        &Conv3dSpec::unit((3, 3, 3), Padding::Valid),
    )
    .unwrap();
    assert_eq!(same.shape(), valid.shape());
    assert_eq!(same.data(), valid.data());
}
