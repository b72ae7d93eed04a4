//! Synthetic 3D patch generator emulating the nodule / non-nodule
//! classification task, plus the augmentation scheme used during training.
//! Positives are roundish Gaussian blobs near the patch center; negatives
//! are vessel-like tubes, border-touching blobs, or pure noise texture, all
//! over correlated background noise. Validation and test sets draw from a
//! shifted generator distribution to emulate a train/test domain gap.

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// One generated patch: a [1, d, h, w] volume with values in [-1, 1].
#[derive(Clone, Debug)]
pub struct PatchSample {
    pub volume: Tensor,
    pub label: u8,
    pub malignant: bool,
    /// Index of the RNG stream that produced this sample.
    pub stream: u64,
}

/// Intensity ranges for one generator domain. Validation/test use a shifted
/// copy of the training domain.
#[derive(Clone, Copy, Debug)]
pub struct GenDomain {
    pub blob_intensity: (f32, f32),
    pub blob_diameter_mm: (f32, f32),
    pub vessel_intensity: (f32, f32),
    pub vessel_radius_mm: (f32, f32),
    pub noise_sigma: f32,
    pub background_level: f32,
}

impl GenDomain {
    pub fn train() -> GenDomain {
        GenDomain {
            blob_intensity: (0.5, 1.0),
            blob_diameter_mm: (3.5, 8.0),
            vessel_intensity: (0.45, 0.95),
            vessel_radius_mm: (0.9, 1.8),
            noise_sigma: 0.08,
            background_level: -0.7,
        }
    }

    /// Domain used for validation/test patches; `shift` scales the gap.
    pub fn shifted(shift: f32) -> GenDomain {
        let base = GenDomain::train();
        GenDomain {
            blob_intensity: (
                base.blob_intensity.0 - 0.12 * shift,
                base.blob_intensity.1 - 0.12 * shift,
            ),
            blob_diameter_mm: (
                base.blob_diameter_mm.0 - 0.5 * shift,
                base.blob_diameter_mm.1 - 0.5 * shift,
            ),
            vessel_intensity: (
                base.vessel_intensity.0 + 0.08 * shift,
                base.vessel_intensity.1 + 0.08 * shift,
            ),
            vessel_radius_mm: base.vessel_radius_mm,
            noise_sigma: base.noise_sigma + 0.03 * shift,
            background_level: base.background_level + 0.05 * shift,
        }
    }
}

/// Blob center jitter in voxels per axis (z, y, x). Zero along z because the
/// desk patches are only a few voxels deep; the containment bound in the
/// tests depends on these constants.
pub const CENTER_JITTER_VOX: (usize, usize, usize) = (0, 1, 1);

/// Dataset geometry, sizes, and class ratios.
#[derive(Clone, Debug)]
pub struct DatasetConfig {
    /// (d, h, w) voxels
    pub patch_shape: (usize, usize, usize),
    /// (z, y, x) millimetres per voxel
    pub spacing_mm: [f32; 3],
    /// Balanced training subset sizes, ascending; smaller sets are prefixes
    /// of larger ones.
    pub train_sizes: Vec<usize>,
    pub val_size: usize,
    pub test_size: usize,
    pub val_pos_ratio: f64,
    pub test_pos_ratio: f64,
    /// Fraction of positives flagged malignant (metadata for the top-n
    /// sensitivity analysis).
    pub malignant_fraction: f64,
    /// Magnitude of the train -> val/test generator shift.
    pub domain_shift: f32,
}

impl DatasetConfig {
    /// Small geometry that trains in minutes on a CPU.
    pub fn desk() -> DatasetConfig {
        DatasetConfig {
            patch_shape: (6, 24, 24),
            spacing_mm: [1.25, 0.5, 0.5],
            train_sizes: vec![30, 300, 3000],
            val_size: 120,
            test_size: 800,
            val_pos_ratio: 0.206,
            test_pos_ratio: 0.133,
            malignant_fraction: 0.3,
            domain_shift: 1.0,
        }
    }

    /// The full patch geometry: 12x72x72 voxels of 1.25x0.5x0.5 mm.
    pub fn paper_shape() -> DatasetConfig {
        DatasetConfig {
            patch_shape: (12, 72, 72),
            spacing_mm: [1.25, 0.5, 0.5],
            train_sizes: vec![30, 300, 3000, 30000],
            val_size: 8889,
            test_size: 8582,
            val_pos_ratio: 0.206,
            test_pos_ratio: 0.133,
            malignant_fraction: 0.3,
            domain_shift: 1.0,
        }
    }
}

/// Independent RNG stream for one sample: all draws for sample `index` of a
/// split come from this stream, so generation is order-independent and
/// embarrassingly parallel.
pub fn sample_rng(master_seed: u64, split_tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((split_tag << 40) ^ index);
    rng
}

pub const SPLIT_TRAIN: u64 = 1;
pub const SPLIT_VAL: u64 = 2;
pub const SPLIT_TEST: u64 = 3;

fn uniform(rng: &mut ChaCha8Rng, range: (f32, f32)) -> f32 {
    rng.gen::<f32>() * (range.1 - range.0) + range.0
}

/// Separable 3-tap box smoothing along each axis, used to correlate the
/// background noise.
fn smooth3(data: &mut [f32], dims: (usize, usize, usize)) {
    let (d, h, w) = dims;
    let mut tmp = vec![0.0f32; data.len()];
    let idx = |z: usize, y: usize, x: usize| (z * h + y) * w + x;
    // along x
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let lo = x.saturating_sub(1);
                let hi = (x + 1).min(w - 1);
                let mut s = 0.0;
                for xi in lo..=hi {
                    s += data[idx(z, y, xi)];
                }
                tmp[idx(z, y, x)] = s / (hi - lo + 1) as f32;
            }
        }
    }
    // along y
    for z in 0..d {
        for y in 0..h {
            let lo = y.saturating_sub(1);
            let hi = (y + 1).min(h - 1);
            for x in 0..w {
                let mut s = 0.0;
                for yi in lo..=hi {
                    s += tmp[idx(z, yi, x)];
                }
                data[idx(z, y, x)] = s / (hi - lo + 1) as f32;
            }
        }
    }
    // along z
    for z in 0..d {
        let lo = z.saturating_sub(1);
        let hi = (z + 1).min(d - 1);
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for zi in lo..=hi {
                    s += data[idx(zi, y, x)];
                }
                tmp[idx(z, y, x)] = s / (hi - lo + 1) as f32;
            }
        }
    }
    data.copy_from_slice(&tmp);
}

/// Generate one patch. Label 1 is a roundish blob near the center; label 0
/// is one of {vessel tube, border blob, pure noise}, drawn uniformly.
pub fn generate_patch(
    rng: &mut ChaCha8Rng,
    label: u8,
    config: &DatasetConfig,
    domain: &GenDomain,
) -> PatchSample {
    let (d, h, w) = config.patch_shape;
    let [sz, sy, sx] = config.spacing_mm;
    let stream = rng.get_stream();

    // Correlated background plus white noise.
    let normal = Normal::new(0.0f32, 1.0f32).unwrap();
    let mut vol: Vec<f32> = (0..d * h * w)
        .map(|_| domain.background_level + 0.3 * normal.sample(rng))
        .collect();
    smooth3(&mut vol, (d, h, w));
    for v in vol.iter_mut() {
        *v += domain.noise_sigma * normal.sample(rng);
    }

    let idx = |z: usize, y: usize, x: usize| (z * h + y) * w + x;
    let center = (
        (d as f32 - 1.0) / 2.0,
        (h as f32 - 1.0) / 2.0,
        (w as f32 - 1.0) / 2.0,
    );

    let add_blob = |vol: &mut [f32], cz: f32, cy: f32, cx: f32, diameter_mm: f32, intensity: f32| {
        // 1-sigma ellipsoid covers roughly two thirds of the radius.
        let sigma_z = (diameter_mm / 2.0 / sz / 1.5).max(0.5);
        let sigma_y = (diameter_mm / 2.0 / sy / 1.5).max(0.5);
        let sigma_x = (diameter_mm / 2.0 / sx / 1.5).max(0.5);
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let dz = (z as f32 - cz) / sigma_z;
                    let dy = (y as f32 - cy) / sigma_y;
                    let dx = (x as f32 - cx) / sigma_x;
                    let r2 = dz * dz + dy * dy + dx * dx;
                    if r2 < 16.0 {
                        vol[idx(z, y, x)] += intensity * (-0.5 * r2).exp();
                    }
                }
            }
        }
    };

    let malignant;
    if label == 1 {
        let (jz, jy, jx) = CENTER_JITTER_VOX;
        let cz = center.0 + if jz > 0 { uniform(rng, (-(jz as f32), jz as f32)) } else { 0.0 };
        let cy = center.1 + uniform(rng, (-(jy as f32), jy as f32));
        let cx = center.2 + uniform(rng, (-(jx as f32), jx as f32));
        let diameter = uniform(rng, domain.blob_diameter_mm);
        let intensity = uniform(rng, domain.blob_intensity);
        add_blob(&mut vol, cz, cy, cx, diameter, intensity);
        malignant = rng.gen::<f64>() < config.malignant_fraction;
    } else {
        malignant = false;
        match rng.gen_range(0..3u32) {
            0 => {
                // Vessel: Gaussian-profile tube through a point near the center.
                let intensity = uniform(rng, domain.vessel_intensity);
                let radius = uniform(rng, domain.vessel_radius_mm);
                // Random direction in mm space, biased towards the plane.
                let theta = uniform(rng, (0.0, std::f32::consts::TAU));
                let tilt = uniform(rng, (-0.5, 0.5));
                let dir = [tilt, theta.sin(), theta.cos()];
                let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
                let dir = [dir[0] / norm, dir[1] / norm, dir[2] / norm];
                let az = center.0 + uniform(rng, (-1.0, 1.0));
                let ay = center.1 + uniform(rng, (-2.0, 2.0));
                let ax = center.2 + uniform(rng, (-2.0, 2.0));
                for z in 0..d {
                    for y in 0..h {
                        for x in 0..w {
                            // displacement in mm
                            let pz = (z as f32 - az) * sz;
                            let py = (y as f32 - ay) * sy;
                            let px = (x as f32 - ax) * sx;
                            let t = pz * dir[0] + py * dir[1] + px * dir[2];
                            let qz = pz - t * dir[0];
                            let qy = py - t * dir[1];
                            let qx = px - t * dir[2];
                            let r2 = (qz * qz + qy * qy + qx * qx) / (radius * radius);
                            if r2 < 16.0 {
                                vol[idx(z, y, x)] += intensity * (-0.5 * r2).exp();
                            }
                        }
                    }
                }
            }
            1 => {
                // Blob touching the patch border.
                let diameter = uniform(rng, domain.blob_diameter_mm);
                let intensity = uniform(rng, domain.blob_intensity);
                let cz = center.0;
                let side = rng.gen_range(0..4u32);
                let (cy, cx) = match side {
                    0 => (0.0, uniform(rng, (0.0, w as f32 - 1.0))),
                    1 => (h as f32 - 1.0, uniform(rng, (0.0, w as f32 - 1.0))),
                    2 => (uniform(rng, (0.0, h as f32 - 1.0)), 0.0),
                    _ => (uniform(rng, (0.0, h as f32 - 1.0)), w as f32 - 1.0),
                };
                add_blob(&mut vol, cz, cy, cx, diameter, intensity);
            }
            _ => {
                // Pure noise texture, slightly rougher than the background.
                for v in vol.iter_mut() {
                    *v += 2.5 * domain.noise_sigma * normal.sample(rng);
                }
            }
        }
    }

    for v in vol.iter_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    PatchSample {
        volume: Tensor::from_vec(&[1, d, h, w], vol).expect("shape/data length agree"),
        label,
        malignant,
        stream,
    }
}

/// Which of the six augmentation transforms are active, plus their ranges.
#[derive(Clone, Copy, Debug)]
pub struct AugmentPolicy {
    pub rotate_z: bool,
    pub reflect: bool,
    pub translate: bool,
    pub scale: bool,
    pub noise: bool,
    pub remap: bool,
    pub max_translate_vox: i32,
    pub scale_range: (f32, f32),
    pub noise_sigma: f32,
    pub gamma_range: (f32, f32),
}

impl AugmentPolicy {
    pub fn all() -> AugmentPolicy {
        AugmentPolicy {
            rotate_z: true,
            reflect: true,
            translate: true,
            scale: true,
            noise: true,
            remap: true,
            max_translate_vox: 2,
            scale_range: (0.8, 1.2),
            noise_sigma: 0.05,
            gamma_range: (0.8, 1.25),
        }
    }

    pub fn none() -> AugmentPolicy {
        AugmentPolicy {
            rotate_z: false,
            reflect: false,
            translate: false,
            scale: false,
            noise: false,
            remap: false,
            max_translate_vox: 2,
            scale_range: (0.8, 1.2),
            noise_sigma: 0.05,
            gamma_range: (0.8, 1.25),
        }
    }
}

/// Geometric resampling of one [1, d, h, w] volume: rotation by `theta`
/// around the z-axis, isotropic scaling, per-axis reflections, then integer
/// translation. Trilinear interpolation, background fill -1. When the
/// requested transform is a pure flip/translation the exact integer path is
/// taken, which makes reflections exactly involutive.
pub fn resample_volume(
    volume: &Tensor,
    theta: f32,
    scale: f32,
    flips: (bool, bool, bool),
    translate: (i32, i32, i32),
) -> Result<Tensor> {
    let shape = volume.shape();
    if shape.len() != 4 || shape[0] != 1 {
        return Err(CoreError::ShapeMismatch {
            op: "resample_volume",
            detail: format!("expected [1, d, h, w], got {shape:?}"),
        });
    }
    let (d, h, w) = (shape[1], shape[2], shape[3]);
    let src = volume.data();
    let idx = |z: usize, y: usize, x: usize| (z * h + y) * w + x;
    let mut out = vec![-1.0f32; src.len()];

    let cz = (d as f32 - 1.0) / 2.0;
    let cy = (h as f32 - 1.0) / 2.0;
    let cx = (w as f32 - 1.0) / 2.0;

    if theta == 0.0 && scale == 1.0 {
        // Integer path: flips and translation are exact index operations.
        for z in 0..d as i32 {
            for y in 0..h as i32 {
                for x in 0..w as i32 {
                    let mut zs = z - translate.0;
                    let mut ys = y - translate.1;
                    let mut xs = x - translate.2;
                    if flips.0 {
                        zs = d as i32 - 1 - zs;
                    }
                    if flips.1 {
                        ys = h as i32 - 1 - ys;
                    }
                    if flips.2 {
                        xs = w as i32 - 1 - xs;
                    }
                    if zs >= 0 && zs < d as i32 && ys >= 0 && ys < h as i32 && xs >= 0 && xs < w as i32
                    {
                        out[idx(z as usize, y as usize, x as usize)] =
                            src[idx(zs as usize, ys as usize, xs as usize)];
                    }
                }
            }
        }
        return Tensor::from_vec(shape, out);
    }

    let (sin_t, cos_t) = (-theta).sin_cos(); // inverse rotation
    let inv_scale = 1.0 / scale;
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                // undo translation, then flips, then scale, then rotation
                let mut pz = z as f32 - translate.0 as f32 - cz;
                let mut py = y as f32 - translate.1 as f32 - cy;
                let mut px = x as f32 - translate.2 as f32 - cx;
                if flips.0 {
                    pz = -pz;
                }
                if flips.1 {
                    py = -py;
                }
                if flips.2 {
                    px = -px;
                }
                pz *= inv_scale;
                py *= inv_scale;
                px *= inv_scale;
                let qx = cos_t * px - sin_t * py;
                let qy = sin_t * px + cos_t * py;
                let qz = pz;
                let fz = qz + cz;
                let fy = qy + cy;
                let fx = qx + cx;

                let z0 = fz.floor();
                let y0 = fy.floor();
                let x0 = fx.floor();
                let (tz, ty, tx) = (fz - z0, fy - y0, fx - x0);
                let mut acc = 0.0f32;
                for (dz, wz) in [(0i32, 1.0 - tz), (1, tz)] {
                    if wz == 0.0 {
                        continue;
                    }
                    for (dy, wy) in [(0i32, 1.0 - ty), (1, ty)] {
                        if wy == 0.0 {
                            continue;
                        }
                        for (dx, wx) in [(0i32, 1.0 - tx), (1, tx)] {
                            if wx == 0.0 {
                                continue;
                            }
                            let zi = z0 as i32 + dz;
                            let yi = y0 as i32 + dy;
                            let xi = x0 as i32 + dx;
                            let v = if zi >= 0
                                && zi < d as i32
                                && yi >= 0
                                && yi < h as i32
                                && xi >= 0
                                && xi < w as i32
                            {
                                src[idx(zi as usize, yi as usize, xi as usize)]
                            } else {
                                -1.0
                            };
                            acc += wz * wy * wx * v;
                        }
                    }
                }
                out[idx(z, y, x)] = acc;
            }
        }
    }
    Tensor::from_vec(shape, out)
}

/// Apply the augmentation scheme: continuous z-rotation, reflections over
/// all axes, small integer translations, isotropic scaling, additive noise,
/// and a monotone gamma-style value remap; the result is re-clamped.
pub fn augment(sample: &PatchSample, rng: &mut ChaCha8Rng, policy: &AugmentPolicy) -> Result<PatchSample> {
    let theta = if policy.rotate_z {
        uniform(rng, (0.0, std::f32::consts::TAU))
    } else {
        0.0
    };
    let flips = if policy.reflect {
        (rng.gen::<bool>(), rng.gen::<bool>(), rng.gen::<bool>())
    } else {
        (false, false, false)
    };
    let translate = if policy.translate {
        let m = policy.max_translate_vox;
        (
            rng.gen_range(-m..=m),
            rng.gen_range(-m..=m),
            rng.gen_range(-m..=m),
        )
    } else {
        (0, 0, 0)
    };
    let scale = if policy.scale {
        uniform(rng, policy.scale_range)
    } else {
        1.0
    };

    let geometric = theta != 0.0
        || scale != 1.0
        || flips != (false, false, false)
        || translate != (0, 0, 0);
    let mut volume = if geometric {
        resample_volume(&sample.volume, theta, scale, flips, translate)?
    } else {
        sample.volume.clone()
    };

    let mut touched = geometric;
    if policy.noise {
        let normal = Normal::new(0.0f32, policy.noise_sigma).unwrap();
        for v in volume.data_mut() {
            *v += normal.sample(rng);
        }
        touched = true;
    }
    if policy.remap {
        let gamma = uniform(rng, policy.gamma_range);
        for v in volume.data_mut() {
            *v = v.signum() * v.abs().powf(gamma);
        }
        touched = true;
    }
    if touched {
        for v in volume.data_mut() {
            *v = v.clamp(-1.0, 1.0);
        }
    }
    Ok(PatchSample {
        volume,
        label: sample.label,
        malignant: sample.malignant,
        stream: sample.stream,
    })
}

/// The generated dataset family for one master seed.
#[derive(Clone, Debug)]
pub struct Datasets {
    /// (size, samples); smaller sets are prefixes of larger ones.
    pub train_sets: Vec<(usize, Vec<PatchSample>)>,
    pub val: Vec<PatchSample>,
    pub test: Vec<PatchSample>,
}

/// Training labels alternate (even index = positive), which keeps every
/// prefix of even length exactly balanced.
pub fn train_label(index: usize) -> u8 {
    if index % 2 == 0 {
        1
    } else {
        0
    }
}

/// Generate one training sample by index; identical regardless of which
/// subset size it is requested for.
pub fn generate_train_sample(master_seed: u64, index: usize, config: &DatasetConfig) -> PatchSample {
    let mut rng = sample_rng(master_seed, SPLIT_TRAIN, index as u64);
    generate_patch(&mut rng, train_label(index), config, &GenDomain::train())
}

/// Deterministic label sequence for a shifted-domain split: exactly
/// `floor(size * pos_ratio)` positives, placement fixed by the master seed.
fn split_labels(master_seed: u64, split_tag: u64, size: usize, pos_ratio: f64) -> Vec<u8> {
    let positives = (size as f64 * pos_ratio).floor() as usize;
    let mut labels = vec![0u8; size];
    for l in labels.iter_mut().take(positives) {
        *l = 1;
    }
    // Fisher-Yates with a dedicated stream.
    let mut rng = sample_rng(master_seed, split_tag, u64::MAX);
    for i in (1..size).rev() {
        let j = rng.gen_range(0..=i);
        labels.swap(i, j);
    }
    labels
}

/// Generate one val/test sample by index.
pub fn generate_split_sample(
    master_seed: u64,
    split_tag: u64,
    index: usize,
    label: u8,
    config: &DatasetConfig,
) -> PatchSample {
    let mut rng = sample_rng(master_seed, split_tag, index as u64);
    generate_patch(
        &mut rng,
        label,
        config,
        &GenDomain::shifted(config.domain_shift),
    )
}

/// Materialize the full dataset family. Deterministic in `master_seed` and
/// the config; training subsets are nested by prefix.
pub fn build_datasets(master_seed: u64, config: &DatasetConfig) -> Result<Datasets> {
    if config.train_sizes.is_empty() {
        return Err(CoreError::EmptyDataset("no training sizes requested".into()));
    }
    let mut sizes = config.train_sizes.clone();
    sizes.sort_unstable();
    let max_size = *sizes.last().unwrap();
    let all_train: Vec<PatchSample> = (0..max_size)
        .map(|i| generate_train_sample(master_seed, i, config))
        .collect();
    let train_sets = sizes
        .iter()
        .map(|&s| (s, all_train[..s].to_vec()))
        .collect();

    let val_labels = split_labels(master_seed, SPLIT_VAL, config.val_size, config.val_pos_ratio);
    let val = val_labels
        .iter()
        .enumerate()
        .map(|(i, &l)| generate_split_sample(master_seed, SPLIT_VAL, i, l, config))
        .collect();

    let test_labels = split_labels(
        master_seed,
        SPLIT_TEST,
        config.test_size,
        config.test_pos_ratio,
    );
    let test = test_labels
        .iter()
        .enumerate()
        .map(|(i, &l)| generate_split_sample(master_seed, SPLIT_TEST, i, l, config))
        .collect();

    Ok(Datasets {
        train_sets,
        val,
        test,
    })
}

/// Candidates from the test split are grouped onto synthetic scans for FROC
/// scoring: `CANDIDATES_PER_SCAN` per scan, spaced far apart.
pub const CANDIDATES_PER_SCAN: usize = 40;

/// Scan id and (x, y, z) mm position for test-set sample `index`.
pub fn candidate_geometry(index: usize) -> (String, [f64; 3]) {
    let scan = index / CANDIDATES_PER_SCAN;
    let slot = index % CANDIDATES_PER_SCAN;
    (format!("scan{scan:04}"), [100.0 * slot as f64, 0.0, 0.0])
}

/// Assemble the FROC inputs for a scored test split: one candidate per
/// sample at its scan slot, one relevant reference nodule per positive, and
/// marker entries so every scan counts. `probs` holds the positive-class
/// probability per sample, aligned with `samples`.
pub fn froc_inputs_for_test_split(
    samples: &[PatchSample],
    probs: &[f32],
) -> Result<(Vec<crate::froc::CandidateRecord>, crate::froc::ReferenceSet)> {
    use crate::froc::{CandidateRecord, ReferenceNodule, ReferenceSet, Relevance};
    if samples.len() != probs.len() {
        return Err(CoreError::InvalidArgument(format!(
            "{} samples but {} probabilities",
            samples.len(),
            probs.len()
        )));
    }
    let mut candidates = Vec::with_capacity(samples.len());
    let mut nodules = Vec::new();
    let mut scans = Vec::new();
    for (i, (sample, &p)) in samples.iter().zip(probs).enumerate() {
        let (scan_id, position) = candidate_geometry(i);
        if !scans.contains(&scan_id) {
            scans.push(scan_id.clone());
        }
        if sample.label == 1 {
            nodules.push(ReferenceNodule {
                scan_id: scan_id.clone(),
                center: position,
                diameter_mm: 6.0,
                relevance: Relevance::Relevant,
                malignant: sample.malignant,
            });
        }
        candidates.push(CandidateRecord {
            scan_id,
            position,
            probability: (p as f64).clamp(0.0, 1.0),
        });
    }
    let mut set = ReferenceSet::new(nodules);
    for s in scans {
        set.push_scan(&s);
    }
    Ok((candidates, set))
}
