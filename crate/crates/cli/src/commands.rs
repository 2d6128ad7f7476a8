use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::Context;
use hppi_core::explain::{
    axis_attention_profile, branch_attribution_report, fit_attribution_mlp, fused_features,
    occlusion_branch_importance, pearson_matrix, AttributionReport, MlpConfig,
};
use hppi_core::frontend::{read_stream_csv, segment_windows, write_stream_csv, CHANNEL_NAMES};
use hppi_core::graph::ModelGraph;
use hppi_core::labels::{CoarseLabel, FineLabel};
use hppi_core::modelio::{load_model, load_model_with_base, save_model, save_model_file, ModelFile};
use hppi_core::quant::{quantization_report, quantize_model};
use hppi_core::resources::{macc_of, ram_of, rom_of, ModuleMetrics, ResourceReport};
use hppi_core::runtime::{random_schedule, stream_run, DecimatingSource, Models, RamTable, ScheduledSource, WindowSource};
use hppi_core::synth::{assemble, make_dataset, windows_to_stream, DatasetSplit, RawSplit, BASE_RATE};
use hppi_core::tasks::{evaluate_role, evaluate_system, samples_for, train_role, Role};
use hppi_core::zoo::{build_first_layer, build_plmn, build_stationary, PlmnVariant};

use crate::config::RunConfig;
use crate::{usage, Common, Failure, ModelPaths};

type Outcome = Result<(), Failure>;

fn setup(common: &Common) -> Result<RunConfig, Failure> {
    let cfg = RunConfig::load(common.config.as_deref()).map_err(Failure::Usage)?;
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    Ok(cfg)
}

fn role_of(module: &str) -> Result<Role, Failure> {
    module.parse().map_err(|_| usage(format!("--module: unknown module `{module}`")))
}

fn load_data(dir: &Path, cfg: &RunConfig) -> anyhow::Result<DatasetSplit> {
    let read = |name: &str| -> anyhow::Result<_> {
        let path = dir.join(name);
        let stream = read_stream_csv(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(segment_windows(&stream))
    };
    let raw = RawSplit { train: read("train.csv")?, val: read("val.csv")?, test: read("test.csv")? };
    Ok(assemble(raw, cfg.ratios, cfg.seed)?)
}

fn need<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    path.as_deref().ok_or_else(|| usage(format!("missing required flag --{flag}")))
}

fn load_first(models: &ModelPaths) -> Result<ModelFile, Failure> {
    let p = need(&models.first, "first")?;
    Ok(load_model(p).with_context(|| format!("loading {}", p.display()))?)
}

fn load_plmn(models: &ModelPaths) -> Result<ModelFile, Failure> {
    let p = need(&models.plmn, "plmn")?;
    Ok(load_model(p).with_context(|| format!("loading {}", p.display()))?)
}

fn load_stationary(models: &ModelPaths, first: &ModelGraph) -> Result<ModelFile, Failure> {
    let p = need(&models.stationary, "stationary")?;
    Ok(load_model_with_base(p, first).with_context(|| format!("loading {}", p.display()))?)
}

fn write_with(path: PathBuf, f: impl FnOnce(BufWriter<File>) -> std::io::Result<()>) -> anyhow::Result<()> {
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    f(BufWriter::new(file)).with_context(|| format!("writing {}", path.display()))
}

pub fn synth(common: &Common) -> Outcome {
    let cfg = setup(common)?;
    let data = make_dataset(&cfg.profiles, cfg.windows_per_class, cfg.ratios, cfg.seed)?;
    for (name, windows) in [("train", &data.raw.train), ("val", &data.raw.val), ("test", &data.raw.test)] {
        write_stream_csv(common.out.join(format!("{name}.csv")), &windows_to_stream(windows, BASE_RATE))?;
    }
    fs::write(common.out.join("manifest.txt"), data.manifest())?;
    write_with(common.out.join("stats.csv"), |mut w| {
        use std::io::Write;
        writeln!(w, "channel,mean,std")?;
        for (c, name) in CHANNEL_NAMES.iter().enumerate() {
            writeln!(w, "{name},{},{}", data.stats.mean[c], data.stats.std[c])?;
        }
        Ok(())
    })?;
    print!("{}", data.manifest());
    Ok(())
}

pub fn train(common: &Common, module: &str, variant: &str, data_dir: &Path, models: &ModelPaths) -> Outcome {
    let cfg = setup(common)?;
    let role = role_of(module)?;
    let variant: PlmnVariant = variant.parse().map_err(|_| usage(format!("--variant: unknown variant `{variant}`")))?;
    let data = load_data(data_dir, &cfg)?;
    let (graph, name) = match role {
        Role::FirstLayer => (build_first_layer(3, cfg.seed)?, "first".to_string()),
        Role::Plmn => {
            let name = if variant == PlmnVariant::Full { "plmn".into() } else { format!("plmn_{variant}") };
            (build_plmn(variant, cfg.seed)?, name)
        }
        Role::Stationary => {
            let first = load_first(models)?;
            (build_stationary(&first.graph, cfg.seed.wrapping_add(1))?, "stationary".to_string())
        }
    };
    let history = train_role(&graph, role, &data, &cfg.train_config(role))?;
    save_model(&graph, common.out.join(format!("{name}.hppi")))?;
    write_with(common.out.join(format!("{name}_history.csv")), |w| history.write_csv(w))?;
    let (acc, _) = evaluate_role(&graph, role, &data.test)?;
    println!(
        "{name}: {} epochs (best {}), test accuracy {:.4}",
        history.stopped_epoch, history.best_epoch, acc
    );
    Ok(())
}

pub fn eval(common: &Common, module: &str, data_dir: &Path, models: &ModelPaths) -> Outcome {
    let cfg = setup(common)?;
    let data = load_data(data_dir, &cfg)?;
    let (acc, cm, names): (f64, _, Vec<&str>) = if module == "system" {
        let first = load_first(models)?;
        let plmn = load_plmn(models)?;
        let st = load_stationary(models, &first.graph)?;
        let m = Models { first_layer: &first.graph, plmn: &plmn.graph, stationary: &st.graph };
        let (acc, cm) = evaluate_system(&m, &data.test)?;
        (acc, cm, FineLabel::ALL.iter().map(|l| l.as_str()).collect())
    } else {
        let role = role_of(module)?;
        let graph = match role {
            Role::FirstLayer => load_first(models)?.graph,
            Role::Plmn => load_plmn(models)?.graph,
            Role::Stationary => {
                let first = load_first(models)?;
                load_stationary(models, &first.graph)?.graph
            }
        };
        let (acc, cm) = evaluate_role(&graph, role, &data.test)?;
        (acc, cm, role.class_names())
    };
    write_with(common.out.join(format!("{module}_confusion.csv")), |w| cm.write_csv(w, &names))?;
    println!("{module}: test accuracy {acc:.4}");
    Ok(())
}

pub fn quantize(common: &Common, module: &str, data_dir: &Path, models: &ModelPaths) -> Outcome {
    let cfg = setup(common)?;
    let role = role_of(module)?;
    let data = load_data(data_dir, &cfg)?;
    let (float, quant) = match role {
        Role::FirstLayer => {
            let f = load_first(models)?.graph;
            let q = quantize_model(&f)?;
            (f, q)
        }
        Role::Plmn => {
            let f = load_plmn(models)?.graph;
            let q = quantize_model(&f)?;
            (f, q)
        }
        Role::Stationary => {
            let first = load_first(models)?;
            let f = load_stationary(models, &first.graph)?.graph;
            let qfirst = quantize_model(&first.graph)?;
            let mut q = quantize_model(&f)?;
            q.graph = q.graph.rebase(&qfirst.graph)?;
            (f, q)
        }
    };
    let samples = samples_for(&float, role, &data.test)?;
    let report = quantization_report(&float, &quant, &samples)?;
    let file = ModelFile { graph: quant.graph, quantized: quant.tensors };
    save_model_file(&file, common.out.join(format!("{module}_int8.hppi")))?;
    fs::write(common.out.join(format!("{module}_quant.txt")), report.to_text())?;
    print!("{}", report.to_text());
    Ok(())
}

fn measured(graph: &ModelGraph, role: Role, data: Option<&DatasetSplit>, quantized: bool) -> anyhow::Result<ModuleMetrics> {
    let data = data.context("--data is required to measure accuracy")?;
    let (acc, _) = evaluate_role(graph, role, &data.test)?;
    Ok(ModuleMetrics::measure(graph, acc, quantized)?)
}

pub fn resources(common: &Common, p: Option<f64>, quantized: bool, data_dir: Option<&Path>, models: &ModelPaths) -> Outcome {
    let cfg = setup(common)?;
    let p = p.unwrap_or(cfg.p);
    if !(0.0..=1.0).contains(&p) {
        return Err(usage(format!("--p: {p} is outside [0, 1]")));
    }
    let given: Vec<_> = cfg.metrics.iter().map(|m| m.complete()).collect();
    let metrics: [ModuleMetrics; 3] = if given.iter().all(Option::is_some) {
        let v = given.into_iter().flatten().collect::<anyhow::Result<Vec<_>>>().map_err(Failure::Usage)?;
        [v[0], v[1], v[2]]
    } else {
        let data = data_dir.map(|d| load_data(d, &cfg)).transpose()?;
        let first = load_first(models)?;
        let plmn = load_plmn(models)?;
        let st = load_stationary(models, &first.graph)?;
        [
            measured(&first.graph, Role::FirstLayer, data.as_ref(), quantized)?,
            measured(&plmn.graph, Role::Plmn, data.as_ref(), quantized)?,
            measured(&st.graph, Role::Stationary, data.as_ref(), quantized)?,
        ]
    };
    let report = ResourceReport::new(metrics[0], metrics[1], metrics[2], p)?;
    fs::write(common.out.join("resources.txt"), report.to_text())?;
    write_with(common.out.join("resources.csv"), |w| report.write_csv(w))?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn stream(common: &Common, data_dir: &Path, input: Option<&Path>, models: &ModelPaths) -> Outcome {
    let cfg = setup(common)?;
    let data = load_data(data_dir, &cfg)?;
    let first = load_first(models)?;
    let plmn = load_plmn(models)?;
    let st = load_stationary(models, &first.graph)?;
    let table = RamTable { first_layer: ram_of(&first.graph), plmn: ram_of(&plmn.graph), stationary: ram_of(&st.graph) };
    let mut source: Box<dyn WindowSource> = match input {
        Some(p) => Box::new(DecimatingSource::new(read_stream_csv(p).with_context(|| format!("reading {}", p.display()))?)),
        None => Box::new(ScheduledSource::new(&random_schedule(cfg.stream_windows, cfg.seed), cfg.seed)),
    };
    let m = Models { first_layer: &first.graph, plmn: &plmn.graph, stationary: &st.graph };
    let log = stream_run(source.as_mut(), &m, &data.stats, table)?;
    write_with(common.out.join("events.csv"), |w| log.write_csv(w))?;
    let summary = log.summary().to_text();
    fs::write(common.out.join("stream_summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn explain(common: &Common, data_dir: &Path, models: &ModelPaths) -> Outcome {
    let cfg = setup(common)?;
    let data = load_data(data_dir, &cfg)?;
    let plmn = load_plmn(models)?.graph;
    let moving = |split: &[hppi_core::synth::Example]| -> Vec<hppi_core::synth::Example> {
        split.iter().filter(|e| e.label().coarse() == CoarseLabel::A).cloned().collect()
    };
    let (train, test) = (moving(&data.train), moving(&data.test));
    if train.is_empty() || test.len() < 2 {
        return Err(Failure::Data(anyhow::anyhow!("dataset has too few moving-activity windows")));
    }
    let train_imgs: Vec<_> = train.iter().map(|e| &e.images).collect();
    let test_imgs: Vec<_> = test.iter().map(|e| &e.images).collect();
    let targets = train
        .iter()
        .map(|e| occlusion_branch_importance(&plmn, &e.images, e.label().index_in_group()))
        .collect::<hppi_core::Result<Vec<_>>>()?;
    let mlp_cfg = MlpConfig {
        hidden: cfg.mlp_hidden,
        epochs: cfg.mlp_epochs,
        learning_rate: cfg.mlp_learning_rate,
        seed: cfg.seed,
        ..MlpConfig::default()
    };
    let mlp = fit_attribution_mlp(&fused_features(&plmn, &train_imgs)?, &targets, &mlp_cfg)?;
    let labels: Vec<FineLabel> = test.iter().map(|e| e.label()).collect();
    let report = AttributionReport {
        per_class: branch_attribution_report(&mlp, &fused_features(&plmn, &test_imgs)?, &labels)?,
        axis: axis_attention_profile(&plmn, &test_imgs)?,
        pearson: pearson_matrix(&test_imgs)?,
    };
    fs::write(common.out.join("attribution.txt"), report.to_text())?;
    write_with(common.out.join("attribution.csv"), |w| report.write_csv(w))?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn ablate(common: &Common, data_dir: &Path) -> Outcome {
    use std::io::Write;
    let cfg = setup(common)?;
    let data = load_data(data_dir, &cfg)?;
    let mut rows = Vec::new();
    for v in PlmnVariant::ALL {
        let g = build_plmn(v, cfg.seed)?;
        train_role(&g, Role::Plmn, &data, &cfg.train)?;
        let (acc, _) = evaluate_role(&g, Role::Plmn, &data.test)?;
        rows.push((v, acc, rom_of(&g, false)?, macc_of(&g)));
    }
    write_with(common.out.join("ablation.csv"), |mut w| {
        writeln!(w, "variant,accuracy,rom_kib,macc")?;
        for (v, acc, rom, macc) in &rows {
            writeln!(w, "{v},{acc},{rom},{macc}")?;
        }
        Ok(())
    })?;
    println!("{:<14}{:>10}{:>12}{:>12}", "variant", "accuracy", "ROM (KiB)", "MACC");
    for (v, acc, rom, macc) in &rows {
        println!("{:<14}{:>9.2}%{:>12.1}{:>12}", v.as_str(), 100.0 * acc, rom, macc);
    }
    Ok(())
}
