//! Compute-parity benchmark: a group convolution should cost about the same
//! as a plain spatial convolution with a filter bank the size of the
//! expanded bank, because the filter transformation is an indexing pass.

use crate::error::Result;
use crate::group::{GroupName, SymmetryGroup};
use crate::tensor::{conv3d_forward, Conv3dSpec, Padding, Tensor};
use crate::transform::{build_plan, expand_filters};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

#[derive(Clone, Copy, Debug)]
pub struct BenchConfig {
    pub group_name: GroupName,
    pub batch: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub spatial: (usize, usize, usize),
    pub reps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            group_name: GroupName::O,
            batch: 2,
            n_in: 2,
            n_out: 2,
            spatial: (6, 24, 24),
            reps: 5,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BenchReport {
    pub group_name: GroupName,
    pub order: usize,
    /// Median wall time of expand + convolve with the canonical bank.
    pub gconv_ms: f64,
    /// Median wall time of convolving with a pre-expanded bank.
    pub plain_ms: f64,
    /// gconv_ms / plain_ms.
    pub ratio: f64,
    /// Median wall time of the filter expansion alone.
    pub expand_ms: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    xs[xs.len() / 2]
}

/// Time one higher-layer group convolution against a plain convolution with
/// an equally large bank.
pub fn compute_parity(config: &BenchConfig) -> Result<BenchReport> {
    let group = SymmetryGroup::build(config.group_name)?;
    let order = group.order();
    let plan = build_plan(&group, &group.rho, (3, 3, 3), false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xBE7C);

    let canonical = {
        let shape = [config.n_out, config.n_in, order, 3, 3, 3];
        let len: usize = shape.iter().product();
        Tensor::from_vec(&shape, (0..len).map(|_| rng.gen::<f32>() - 0.5).collect())?
    };
    let (d, h, w) = config.spatial;
    let input = {
        let shape = [config.batch, config.n_in * order, d, h, w];
        let len: usize = shape.iter().product();
        Tensor::from_vec(&shape, (0..len).map(|_| rng.gen::<f32>() - 0.5).collect())?
    };
    let spec = Conv3dSpec::unit((3, 3, 3), Padding::Same);
    let pre_expanded = expand_filters(&plan, &canonical)?;

    // Warmup both paths once.
    let _ = conv3d_forward(&input, &expand_filters(&plan, &canonical)?, &spec)?;
    let _ = conv3d_forward(&input, &pre_expanded, &spec)?;

    // Alternate which path is timed first so allocator and cache state
    // average out across reps.
    let mut gconv_times = Vec::with_capacity(config.reps);
    let mut plain_times = Vec::with_capacity(config.reps);
    let mut expand_times = Vec::with_capacity(config.reps);
    for rep in 0..config.reps {
        let mut time_gconv = |gconv_times: &mut Vec<f64>, expand_times: &mut Vec<f64>| {
            let t = Instant::now();
            let expanded = expand_filters(&plan, &canonical)?;
            expand_times.push(t.elapsed().as_secs_f64() * 1e3);
            let _ = conv3d_forward(&input, &expanded, &spec)?;
            gconv_times.push(t.elapsed().as_secs_f64() * 1e3);
            Ok::<(), crate::error::CoreError>(())
        };
        let mut time_plain = |plain_times: &mut Vec<f64>| {
            let t = Instant::now();
            let _ = conv3d_forward(&input, &pre_expanded, &spec)?;
            plain_times.push(t.elapsed().as_secs_f64() * 1e3);
            Ok::<(), crate::error::CoreError>(())
        };
        if rep % 2 == 0 {
            time_gconv(&mut gconv_times, &mut expand_times)?;
            time_plain(&mut plain_times)?;
        } else {
            time_plain(&mut plain_times)?;
            time_gconv(&mut gconv_times, &mut expand_times)?;
        }
    }

    let gconv_ms = median(gconv_times);
    let plain_ms = median(plain_times);
    Ok(BenchReport {
        group_name: config.group_name,
        order,
        gconv_ms,
        plain_ms,
        ratio: gconv_ms / plain_ms,
        expand_ms: median(expand_times),
    })
}
