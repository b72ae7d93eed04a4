//! Subcommand implementations.

use crate::runconfig::{apply_config_file, RunSettings};
use crate::{
    BenchArgs, CheckArgs, CliError, DatagenArgs, EvaluateArgs, Format, TrainArgs,
};
use octoconv_core::bench::{compute_parity, BenchConfig};
use octoconv_core::froc::{
    candidates_to_csv, curve_to_csv, froc_curve, malignancy_topn, match_candidates,
    parse_candidates, parse_references, references_to_csv, summary_text,
};
use octoconv_core::group::{GroupName, PermutationRep, SymmetryGroup};
use octoconv_core::layers::{conv_spec_3x3x3_same, permute_orientation_channels, GConvLayer};
use octoconv_core::model::{
    build_model, predict_positive_probs, save_checkpoint, train as train_model, ModelConfig,
    TrainConfig,
};
use octoconv_core::synth::{
    build_datasets, froc_inputs_for_test_split, generate_train_sample, DatasetConfig, PatchSample,
};
use octoconv_core::tensor::{read_volume, write_volume, Tensor};
use octoconv_core::transform::{gather_volume, spatial_permutation, volume_gather_map};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub struct Context {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub format: Format,
}

impl Context {
    fn ensure_output_dir(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.output_dir).map_err(|e| {
            CliError::Usage(format!("cannot create {}: {e}", self.output_dir.display()))
        })
    }

    fn write(&self, name: &str, content: &str) -> Result<PathBuf, CliError> {
        let path = self.output_dir.join(name);
        fs::write(&path, content)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

fn parse_group(name: &str) -> Result<GroupName, CliError> {
    GroupName::parse(name).map_err(|e| CliError::Usage(e.to_string()))
}

// --- groups inspect ---------------------------------------------------------

pub fn groups_inspect(ctx: &Context, name: &str, voxel_action: bool) -> Result<(), CliError> {
    let gname = parse_group(name)?;
    let group = SymmetryGroup::build(gname)?;
    let n = group.order();
    let mut out = String::new();

    match ctx.format {
        Format::Csv => {
            let _ = writeln!(out, "section,index,values");
            for (i, e) in group.elements.iter().enumerate() {
                let flat: Vec<String> = e
                    .matrix
                    .iter()
                    .flat_map(|row| row.iter().map(|v| v.to_string()))
                    .collect();
                let _ = writeln!(out, "element,{i},{}", flat.join(" "));
            }
            for i in 0..n {
                let row: Vec<String> = group.cayley[i].iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "cayley,{i},{}", row.join(" "));
            }
            let inv: Vec<String> = group.inverse.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "inverse,0,{}", inv.join(" "));
            for (i, p) in group.rho.perms.iter().enumerate() {
                let row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "rho,{i},{}", row.join(" "));
            }
            if voxel_action {
                for (i, e) in group.elements.iter().enumerate() {
                    let sp = spatial_permutation(e, (3, 3, 3))?;
                    let row: Vec<String> = sp.map.iter().map(|v| v.to_string()).collect();
                    let _ = writeln!(out, "voxel_action,{i},{}", row.join(" "));
                }
            }
        }
        Format::JsonLines => {
            let _ = writeln!(out, "{{\"group\":\"{gname}\",\"order\":{n}}}");
            for (i, e) in group.elements.iter().enumerate() {
                let flat: Vec<String> = e
                    .matrix
                    .iter()
                    .flat_map(|row| row.iter().map(|v| v.to_string()))
                    .collect();
                let _ = writeln!(out, "{{\"element\":{i},\"matrix\":[{}]}}", flat.join(","));
            }
            for (i, p) in group.rho.perms.iter().enumerate() {
                let row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "{{\"rho\":{i},\"perm\":[{}]}}", row.join(","));
            }
        }
        Format::Text => {
            let _ = writeln!(out, "group {gname}: {n} elements");
            for (i, e) in group.elements.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "element {i:2}: [{:2} {:2} {:2}; {:2} {:2} {:2}; {:2} {:2} {:2}]  det {:2}  inverse {}",
                    e.matrix[0][0], e.matrix[0][1], e.matrix[0][2],
                    e.matrix[1][0], e.matrix[1][1], e.matrix[1][2],
                    e.matrix[2][0], e.matrix[2][1], e.matrix[2][2],
                    e.determinant(),
                    group.inverse[i],
                );
            }
            let _ = writeln!(out, "cayley table (row * column):");
            for i in 0..n {
                let row: Vec<String> = group.cayley[i].iter().map(|v| format!("{v:2}")).collect();
                let _ = writeln!(out, "  {}", row.join(" "));
            }
            let _ = writeln!(out, "channel permutations rho(h):");
            for (i, p) in group.rho.perms.iter().enumerate() {
                let row: Vec<String> = p.iter().map(|v| format!("{v:2}")).collect();
                let _ = writeln!(out, "  rho[{i:2}] = {}", row.join(" "));
            }
            if voxel_action {
                let _ = writeln!(out, "voxel action on a 3x3x3 kernel (gather indices):");
                for (i, e) in group.elements.iter().enumerate() {
                    let sp = spatial_permutation(e, (3, 3, 3))?;
                    let row: Vec<String> = sp.map.iter().map(|v| v.to_string()).collect();
                    let _ = writeln!(out, "  element {i:2}: {}", row.join(" "));
                }
            }
        }
    }
    print!("{out}");
    Ok(())
}

// --- check-equivariance -----------------------------------------------------

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, integer: bool) -> Tensor {
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            if integer {
                rng.gen_range(-3i32..=3) as f32
            } else {
                rng.gen::<f32>() * 2.0 - 1.0
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape/data agree")
}

fn build_stack(
    group: &Arc<SymmetryGroup>,
    depth: usize,
    rng: &mut ChaCha8Rng,
    integer: bool,
) -> Result<Vec<GConvLayer>, CliError> {
    let mut layers = Vec::with_capacity(depth);
    for layer_idx in 0..depth {
        let mut filters = if layer_idx == 0 {
            random_tensor(&[1, 1, 3, 3, 3], rng, integer)
        } else {
            random_tensor(&[1, 1, group.order(), 3, 3, 3], rng, integer)
        };
        if !integer {
            // Keep activations O(1) through the stack so the float tolerance
            // measures equivariance error, not magnitude growth.
            let fan_in = filters.len();
            let bound = (6.0 / (fan_in + group.order()) as f32).sqrt();
            filters = filters.scale(bound);
        }
        layers.push(GConvLayer::new(
            group.clone(),
            layer_idx == 0,
            filters,
            conv_spec_3x3x3_same(),
        )?);
    }
    Ok(layers)
}

fn stack_forward(layers: &[GConvLayer], input: &Tensor) -> Result<Tensor, CliError> {
    let mut x = input.clone();
    for l in layers {
        x = l.forward_eval(&x)?;
    }
    Ok(x)
}

pub fn check_equivariance(ctx: &Context, args: &CheckArgs) -> Result<(), CliError> {
    let gname = parse_group(&args.group)?;
    if !(1..=3).contains(&args.depth) {
        return Err(CliError::Usage(format!(
            "depth must be in 1..=3, got {}",
            args.depth
        )));
    }
    let group = Arc::new(SymmetryGroup::build(gname)?);
    let mut expected_rho: PermutationRep = group.rho.clone();
    if args.corrupt_rho && group.order() > 1 {
        expected_rho.perms[1].swap(0, 1);
    }

    let dims = (7usize, 7usize, 7usize);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0xE9_u64);
    let mut worst_per_element = vec![0.0f32; group.order()];
    let mut exact_ok = true;

    // One integer pass (must be exact) plus float trials per element.
    for trial in 0..=args.trials {
        let integer = trial == 0;
        let layers = build_stack(&group, args.depth, &mut rng, integer)?;
        let input = random_tensor(&[1, 1, dims.0, dims.1, dims.2], &mut rng, integer);
        let base = stack_forward(&layers, &input)?;
        for (j, element) in group.elements.iter().enumerate() {
            let map = volume_gather_map(element, dims)?;
            let rotated_in = gather_volume(&input, &map)?;
            let got = stack_forward(&layers, &rotated_in)?;
            let rotated_out = gather_volume(&base, &map)?;
            let expected = if group.order() == 1 {
                rotated_out
            } else {
                permute_orientation_channels(&rotated_out, &expected_rho.perms[j])?
            };
            let err = got
                .data()
                .iter()
                .zip(expected.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            if integer && err != 0.0 {
                exact_ok = false;
            }
            if err > worst_per_element[j] {
                worst_per_element[j] = err;
            }
        }
    }

    let mut out = String::new();
    match ctx.format {
        Format::JsonLines => {
            for (j, err) in worst_per_element.iter().enumerate() {
                let _ = writeln!(out, "{{\"element\":{j},\"worst_abs_error\":{err}}}");
            }
        }
        _ => {
            let _ = writeln!(
                out,
                "equivariance check: group {gname}, depth {}, {} float trials",
                args.depth, args.trials
            );
            for (j, err) in worst_per_element.iter().enumerate() {
                let _ = writeln!(out, "  element {j:2}: worst abs error {err:.3e}");
            }
        }
    }
    print!("{out}");

    let worst = worst_per_element.iter().cloned().fold(0.0f32, f32::max);
    if !exact_ok {
        return Err(CliError::EquivarianceViolation(format!(
            "integer-valued inputs must transform exactly; worst error {worst:.3e}"
        )));
    }
    if worst > args.tolerance {
        return Err(CliError::EquivarianceViolation(format!(
            "worst float error {worst:.3e} exceeds tolerance {:.1e}",
            args.tolerance
        )));
    }
    println!("ok: worst error {worst:.3e} within {:.1e}", args.tolerance);
    Ok(())
}

// --- datagen ----------------------------------------------------------------

fn profile_dataset(profile: &str) -> Result<DatasetConfig, CliError> {
    match profile {
        "desk" => Ok(DatasetConfig::desk()),
        "paper-shape" => Ok(DatasetConfig::paper_shape()),
        other => Err(CliError::Usage(format!(
            "unknown profile `{other}` (expected desk | paper-shape)"
        ))),
    }
}

fn write_split(
    dir: &Path,
    samples: impl Iterator<Item = (usize, PatchSample)>,
    spacing: [f32; 3],
    index_name: &str,
) -> Result<usize, CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
    let mut index = String::from("sample_id,label,malignant,file\n");
    let mut count = 0;
    for (i, sample) in samples {
        let file = format!("sample_{i:05}.raw");
        let shape = sample.volume.shape();
        let vol5 = sample
            .volume
            .clone()
            .reshape(&[1, shape[0], shape[1], shape[2], shape[3]])
            .map_err(CliError::from)?;
        write_volume(&dir.join(&file), &vol5, spacing)?;
        let _ = writeln!(
            index,
            "{i},{},{},{file}",
            sample.label,
            if sample.malignant { 1 } else { 0 }
        );
        count += 1;
    }
    fs::write(dir.join(index_name), index)
        .map_err(|e| CliError::Usage(format!("cannot write index: {e}")))?;
    Ok(count)
}

pub fn datagen(ctx: &Context, args: &DatagenArgs) -> Result<(), CliError> {
    let mut config = profile_dataset(&args.profile)?;
    if let Some(sizes) = &args.sizes {
        let parsed: Option<Vec<usize>> = sizes.split(',').map(|t| t.trim().parse().ok()).collect();
        config.train_sizes =
            parsed.ok_or_else(|| CliError::Usage(format!("bad --sizes `{sizes}`")))?;
        if config.train_sizes.is_empty() {
            return Err(CliError::Usage("--sizes must name at least one size".into()));
        }
    }
    if let Some(v) = args.val_size {
        config.val_size = v;
    }
    if let Some(t) = args.test_size {
        config.test_size = t;
    }
    ctx.ensure_output_dir()?;
    let spacing = config.spacing_mm;

    let mut sizes = config.train_sizes.clone();
    sizes.sort_unstable();
    let max_size = *sizes.last().unwrap();
    let train_dir = ctx.output_dir.join("train");
    write_split(
        &train_dir,
        (0..max_size).map(|i| (i, generate_train_sample(ctx.seed, i, &config))),
        spacing,
        "index.csv",
    )?;
    // Nested subsets are prefixes: one index per requested size.
    let full_index = fs::read_to_string(train_dir.join("index.csv"))
        .map_err(|e| CliError::Usage(format!("cannot reread index: {e}")))?;
    for &s in &sizes {
        let subset: Vec<&str> = full_index.lines().take(s + 1).collect();
        fs::write(train_dir.join(format!("index_{s}.csv")), subset.join("\n") + "\n")
            .map_err(|e| CliError::Usage(format!("cannot write subset index: {e}")))?;
    }

    let ds = build_datasets(ctx.seed, &DatasetConfig {
        train_sizes: vec![1],
        ..config.clone()
    })?;
    write_split(
        &ctx.output_dir.join("val"),
        ds.val.iter().cloned().enumerate(),
        spacing,
        "index.csv",
    )?;
    write_split(
        &ctx.output_dir.join("test"),
        ds.test.iter().cloned().enumerate(),
        spacing,
        "index.csv",
    )?;

    // Reference CSV for FROC scoring of test-set predictions.
    let zero_probs = vec![0.0f32; ds.test.len()];
    let (_, references) = froc_inputs_for_test_split(&ds.test, &zero_probs)?;
    fs::write(
        ctx.output_dir.join("test").join("reference.csv"),
        references_to_csv(&references),
    )
    .map_err(|e| CliError::Usage(format!("cannot write reference.csv: {e}")))?;

    println!(
        "wrote train({}), {} val, {} test samples under {}",
        sizes
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join("/"),
        ds.val.len(),
        ds.test.len(),
        ctx.output_dir.display()
    );
    Ok(())
}

// --- train ------------------------------------------------------------------

fn profile_model(profile: &str, group: GroupName) -> Result<(ModelConfig, TrainConfig), CliError> {
    let model = match profile {
        "desk" => ModelConfig::desk(group),
        "paper-shape" => ModelConfig::paper_shape(group),
        other => {
            return Err(CliError::Usage(format!(
                "unknown profile `{other}` (expected desk | paper-shape)"
            )))
        }
    };
    let train = match profile {
        "desk" => TrainConfig {
            max_epochs: 40,
            patience: 10,
            ..TrainConfig::default()
        },
        _ => TrainConfig::default(),
    };
    Ok((model, train))
}

fn load_split(dir: &Path, index_name: &str) -> Result<Vec<PatchSample>, CliError> {
    let index_path = dir.join(index_name);
    let text = fs::read_to_string(&index_path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", index_path.display())))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line.trim_end() != "sample_id,label,malignant,file" {
                return Err(CliError::Usage(format!(
                    "{}:1: bad index header",
                    index_path.display()
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(CliError::Usage(format!(
                "{}:{}: expected 4 fields",
                index_path.display(),
                idx + 1
            )));
        }
        let label: u8 = fields[1].parse().map_err(|_| {
            CliError::Usage(format!("{}:{}: bad label", index_path.display(), idx + 1))
        })?;
        let malignant = fields[2] == "1";
        let (volume, _) = read_volume(&dir.join(fields[3]))?;
        let shape = volume.shape().to_vec();
        let volume = volume
            .reshape(&[shape[1], shape[2], shape[3], shape[4]])
            .map_err(CliError::from)?;
        out.push(PatchSample {
            volume,
            label,
            malignant,
            stream: idx as u64 - 1,
        });
    }
    Ok(out)
}

pub fn train(ctx: &Context, args: &TrainArgs) -> Result<(), CliError> {
    let group = match &args.group {
        Some(g) => parse_group(g)?,
        None => GroupName::Z3Trivial,
    };
    let (model_cfg, train_cfg) = profile_model(&args.profile, group)?;
    let mut settings = RunSettings {
        model: model_cfg,
        train: train_cfg,
    };
    settings.train.seed = ctx.seed;
    if let Some(path) = &args.config {
        apply_config_file(path, &mut settings)?;
    }
    if let Some(g) = &args.group {
        settings.model.group_name = parse_group(g)?;
    }
    if let Some(e) = args.epochs {
        settings.train.max_epochs = e;
    }
    if let Some(p) = args.patience {
        settings.train.patience = p;
    }
    if let Some(lr) = args.learning_rate {
        settings.train.adam.alpha = lr;
    }
    if args.no_augment {
        settings.train.augment = false;
    }

    let mut dataset_cfg = profile_dataset(&args.profile)?;
    let (c, d, h, w) = settings.model.input_shape;
    if c != 1 {
        return Err(CliError::Usage("training expects single-channel patches".into()));
    }
    dataset_cfg.patch_shape = (d, h, w);
    let train_size = args.train_size.unwrap_or(30);
    dataset_cfg.train_sizes = vec![train_size];

    let (train_set, val_set, test_set) = if args.datagen_inline {
        let ds = build_datasets(ctx.seed, &dataset_cfg)?;
        (
            ds.train_sets.into_iter().next().expect("one size requested").1,
            ds.val,
            ds.test,
        )
    } else {
        let dir = args.data_dir.as_ref().ok_or_else(|| {
            CliError::Usage("need --data-dir DIR or --datagen-inline".into())
        })?;
        let index = format!("index_{train_size}.csv");
        let train_set = load_split(&dir.join("train"), &index)?;
        let val_set = load_split(&dir.join("val"), "index.csv")?;
        let test_set = load_split(&dir.join("test"), "index.csv")?;
        (train_set, val_set, test_set)
    };

    ctx.ensure_output_dir()?;
    let mut model = build_model(&settings.model, settings.train.seed)?;
    let report = train_model(&mut model, &train_set, &val_set, &settings.train)?;

    let ckpt_path = ctx.output_dir.join("checkpoint.ckpt");
    save_checkpoint(&mut model, &ckpt_path)?;
    ctx.write("loss_curve.csv", &report.to_csv())?;

    let probs = predict_positive_probs(&model, &test_set, settings.train.batch_size)?;
    let (candidates, references) = froc_inputs_for_test_split(&test_set, &probs)?;
    ctx.write("predictions.csv", &candidates_to_csv(&candidates))?;
    ctx.write("test_reference.csv", &references_to_csv(&references))?;

    let matched = match_candidates(&candidates, &references)?;
    let result = froc_curve(&matched)?;
    match ctx.format {
        Format::JsonLines => {
            for e in &report.epochs {
                println!(
                    "{{\"epoch\":{},\"train_loss\":{},\"val_loss\":{}}}",
                    e.epoch, e.train_loss, e.val_loss
                );
            }
            println!(
                "{{\"best_epoch\":{},\"best_val_loss\":{},\"froc_overall\":{}}}",
                report.best_epoch, report.best_val_loss, result.overall_score
            );
        }
        _ => {
            println!(
                "trained {} on {} samples: best val loss {:.4} at epoch {} ({} epochs run)",
                settings.model.group_name,
                train_set.len(),
                report.best_val_loss,
                report.best_epoch,
                report.epochs.len()
            );
            println!("test FROC overall score: {:.4}", result.overall_score);
            println!("artifacts in {}", ctx.output_dir.display());
        }
    }
    Ok(())
}

// --- evaluate ---------------------------------------------------------------

pub fn evaluate(ctx: &Context, args: &EvaluateArgs) -> Result<(), CliError> {
    let cand_text = fs::read_to_string(&args.candidates)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", args.candidates.display())))?;
    let ref_text = fs::read_to_string(&args.reference)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", args.reference.display())))?;
    let candidates = parse_candidates(&cand_text, &args.candidates.display().to_string())?;
    let references = parse_references(&ref_text, &args.reference.display().to_string())?;

    let matched = match_candidates(&candidates, &references)?;
    let result = froc_curve(&matched)?;

    let top_ns: Vec<usize> = args
        .top_n
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("bad --top-n `{}`", args.top_n)))?;

    let mut summary = summary_text(&result);
    for &n in &top_ns {
        let count = malignancy_topn(&matched, &references, n)?;
        let _ = writeln!(summary, "malignant_in_top_{n}: {count}");
    }

    ctx.ensure_output_dir()?;
    ctx.write("froc_curve.csv", &curve_to_csv(&result))?;
    ctx.write("summary.txt", &summary)?;

    match ctx.format {
        Format::JsonLines => {
            println!(
                "{{\"overall_score\":{},\"n_scans\":{},\"n_relevant\":{}}}",
                result.overall_score, result.n_scans, result.n_relevant
            );
        }
        _ => print!("{summary}"),
    }
    Ok(())
}

// --- bench ------------------------------------------------------------------

pub fn bench(ctx: &Context, args: &BenchArgs) -> Result<(), CliError> {
    let gname = parse_group(&args.group)?;
    let spatial: Vec<usize> = args
        .spatial
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("bad --spatial `{}`", args.spatial)))?;
    if spatial.len() != 3 {
        return Err(CliError::Usage("--spatial needs d,h,w".into()));
    }
    let config = BenchConfig {
        group_name: gname,
        batch: args.batch,
        n_in: args.n_in,
        n_out: args.n_out,
        spatial: (spatial[0], spatial[1], spatial[2]),
        reps: args.reps.max(1),
    };
    let report = compute_parity(&config)?;
    match ctx.format {
        Format::JsonLines => println!(
            "{{\"group\":\"{}\",\"order\":{},\"gconv_ms\":{},\"plain_ms\":{},\"ratio\":{},\"expand_ms\":{}}}",
            report.group_name, report.order, report.gconv_ms, report.plain_ms, report.ratio,
            report.expand_ms
        ),
        Format::Csv => {
            println!("group,order,gconv_ms,plain_ms,ratio,expand_ms");
            println!(
                "{},{},{},{},{},{}",
                report.group_name,
                report.order,
                report.gconv_ms,
                report.plain_ms,
                report.ratio,
                report.expand_ms
            );
        }
        Format::Text => {
            println!(
                "group {} (order {}): gconv {:.2} ms, plain conv with expanded bank {:.2} ms",
                report.group_name, report.order, report.gconv_ms, report.plain_ms
            );
            println!(
                "ratio gconv/plain = {:.3}; filter expansion alone {:.3} ms ({:.1}% of plain)",
                report.ratio,
                report.expand_ms,
                100.0 * report.expand_ms / report.plain_ms
            );
        }
    }
    Ok(())
}
