//! Command implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nmlgcl::checkpoint::{load_checkpoint, save_checkpoint};
use nmlgcl::error::CoreError;
use nmlgcl::eval::{
    ari, distance_ratio, fmi, kmeans, linear_probe, similarity_histograms, DistanceKind,
    EvalReport, SplitSpec,
};
use nmlgcl::graph::{
    generate_sbm, write_edge_file, write_feature_file_binary, write_feature_file_text,
    write_label_file, Graph, SbmSpec,
};
use nmlgcl::tensor::Tensor;
use nmlgcl::train::{embed, train, train_baseline, TrainConfig, TrainOutput};

use crate::config::{load_dataset, render_manifest, resolve_config};

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CoreError> {
    std::fs::write(path, contents).map_err(|e| CoreError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn ensure_dir(dir: &Path) -> Result<(), CoreError> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::Io {
        path: dir.display().to_string(),
        source: e,
    })
}

pub struct GenSbmArgs {
    pub blocks: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_shift: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub binary_features: bool,
}

pub fn cmd_gen_sbm(args: &GenSbmArgs) -> Result<(), CoreError> {
    let spec = SbmSpec {
        block_sizes: args.blocks.clone(),
        p_in: args.p_in,
        p_out: args.p_out,
        feature_dim: args.feature_dim,
        feature_shift: args.feature_shift,
        seed: args.seed,
    };
    // Validate before any file is created.
    spec.validate()?;
    let graph = generate_sbm(&spec)?;
    ensure_dir(&args.out)?;
    write_edge_file(&graph, &args.out.join("edges.txt"))?;
    if args.binary_features {
        write_feature_file_binary(&graph, &args.out.join("features.bin"))?;
    } else {
        write_feature_file_text(&graph, &args.out.join("features.txt"))?;
    }
    write_label_file(graph.labels().expect("generator labels"), &args.out.join("labels.txt"))?;

    let mut manifest = String::new();
    let _ = writeln!(manifest, "# generated dataset");
    let _ = writeln!(manifest, "generator = \"sbm\"");
    let _ = writeln!(
        manifest,
        "blocks = \"{}\"",
        args.blocks
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    let _ = writeln!(manifest, "p_in = {}", spec.p_in);
    let _ = writeln!(manifest, "p_out = {}", spec.p_out);
    let _ = writeln!(manifest, "feature_dim = {}", spec.feature_dim);
    let _ = writeln!(manifest, "feature_shift = {}", spec.feature_shift);
    let _ = writeln!(manifest, "seed = {}", spec.seed);
    write_file(&args.out.join("sbm.toml"), manifest.as_bytes())?;
    println!(
        "wrote {} nodes, {} edges to {}",
        graph.num_nodes(),
        graph.num_edges(),
        args.out.display()
    );
    Ok(())
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub profile: Option<String>,
    pub seed: Option<u64>,
    pub baseline: bool,
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CoreError> {
    let (cfg, profile) = resolve_config(
        args.config.as_deref(),
        args.profile.as_deref(),
        args.seed,
        args.baseline,
    )?;
    let (graph, fingerprint) = load_dataset(&args.data)?;
    ensure_dir(&args.out)?;
    let checkpoint_path = args.out.join("checkpoint.ckpt");
    let history_path = args.out.join("history.csv");

    let result = if cfg.baseline_mode {
        train_baseline(&graph, &cfg)
    } else {
        train(&graph, &cfg)
    };
    let output = match result {
        Ok(o) => o,
        Err(CoreError::NonFiniteLoss {
            epoch,
            last_good_checkpoint,
        }) => {
            if let Some(bytes) = &last_good_checkpoint {
                let rescue = args.out.join("last_good.ckpt");
                write_file(&rescue, bytes)?;
                eprintln!("last good checkpoint written to {}", rescue.display());
            }
            return Err(CoreError::NonFiniteLoss {
                epoch,
                last_good_checkpoint: None,
            });
        }
        Err(e) => return Err(e),
    };

    save_checkpoint(&checkpoint_path, &output.encoder, output.nmn.as_ref())?;
    write_file(&history_path, output.history.to_csv().as_bytes())?;
    let manifest = render_manifest(
        &cfg,
        profile.as_deref(),
        &fingerprint,
        &args.data,
        &checkpoint_path,
        &history_path,
    );
    write_file(&args.out.join("manifest.toml"), manifest.as_bytes())?;
    let last = output.history.records.last();
    println!(
        "trained {} epochs ({}); final infonce loss {}",
        output.history.records.len(),
        if cfg.baseline_mode { "baseline" } else { "nml" },
        last.map_or("n/a".into(), |r| format!("{:.6}", r.infonce_loss)),
    );
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    pub split_ratio: (usize, usize, usize),
    pub split_file: Option<PathBuf>,
    pub seed: u64,
    pub probe_lr: f64,
    pub probe_epochs: usize,
    pub kmeans_k: Option<usize>,
    pub restarts: usize,
    pub bins: usize,
}

fn read_split_file(path: &Path, num_nodes: usize) -> Result<SplitSpec, CoreError> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut roles = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        roles.push(match t {
            "train" | "0" => 0u8,
            "val" | "1" => 1,
            "test" | "2" => 2,
            other => {
                return Err(CoreError::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    reason: format!("expected train/val/test or 0/1/2, got `{other}`"),
                })
            }
        });
    }
    if roles.len() != num_nodes {
        return Err(CoreError::Shape(format!(
            "split file has {} rows for {} nodes",
            roles.len(),
            num_nodes
        )));
    }
    SplitSpec::from_assignments(&roles)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CoreError> {
    let (graph, _) = load_dataset(&args.data)?;
    let (encoder, _) = load_checkpoint(&args.checkpoint)?;
    let z = embed(&encoder, &graph)?;
    ensure_dir(&args.out)?;

    let Some(labels) = graph.labels().map(|l| l.to_vec()) else {
        eprintln!("note: no labels.txt; label-based diagnostics skipped");
        return Err(CoreError::MissingLabels(
            "linear probe and clustering need labels.txt".into(),
        ));
    };

    let split = match &args.split_file {
        Some(path) => read_split_file(path, graph.num_nodes())?,
        None => SplitSpec::random_ratio(graph.num_nodes(), args.split_ratio, args.seed)?,
    };
    let accuracy = linear_probe(&z, &labels, &split, args.probe_lr, args.probe_epochs)?;
    let k = args
        .kmeans_k
        .or(graph.num_classes())
        .ok_or_else(|| CoreError::Argument("cannot infer k for k-means".into()))?;
    let clusters = kmeans(&z, k, args.seed, args.restarts)?;
    let report = EvalReport {
        accuracy,
        fmi: fmi(&clusters, &labels)?,
        ari: ari(&clusters, &labels)?,
        distance_ratio: Some(distance_ratio(&z, &labels, DistanceKind::CosineComplement)?),
        fn_weight_sum: None,
        tn_weight_sum: None,
        diag_weight: None,
    };
    write_file(&args.out.join("report.txt"), report.to_key_values().as_bytes())?;
    let hist = similarity_histograms(&z, &labels, args.bins)?;
    write_file(&args.out.join("histograms.csv"), hist.to_csv().as_bytes())?;
    println!(
        "accuracy = {:.2}, fmi = {:.2}, ari = {:.2}, distance_ratio = {:.2}",
        report.accuracy,
        report.fmi,
        report.ari,
        report.distance_ratio.unwrap()
    );
    Ok(())
}

pub struct CompareArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub profile: Option<String>,
    pub seeds: Vec<u64>,
    pub probe_lr: f64,
    pub probe_epochs: usize,
    pub restarts: usize,
}

struct SeedMetrics {
    accuracy: f64,
    fmi: f64,
    ari: f64,
    distance_ratio: f64,
}

fn eval_run(
    output: &TrainOutput,
    graph: &Graph,
    labels: &[usize],
    seed: u64,
    args: &CompareArgs,
) -> Result<SeedMetrics, CoreError> {
    let z: Tensor = embed(&output.encoder, graph)?;
    let split = SplitSpec::random_ratio(graph.num_nodes(), (1, 1, 8), seed)?;
    let k = graph
        .num_classes()
        .ok_or_else(|| CoreError::Argument("labels required".into()))?;
    let clusters = kmeans(&z, k, seed, args.restarts)?;
    Ok(SeedMetrics {
        accuracy: linear_probe(&z, labels, &split, args.probe_lr, args.probe_epochs)?,
        fmi: fmi(&clusters, labels)?,
        ari: ari(&clusters, labels)?,
        distance_ratio: distance_ratio(&z, labels, DistanceKind::CosineComplement)?,
    })
}

pub fn cmd_compare(args: &CompareArgs) -> Result<(), CoreError> {
    if args.seeds.is_empty() {
        return Err(CoreError::Argument("need at least one seed".into()));
    }
    let (graph, _) = load_dataset(&args.data)?;
    let labels = graph
        .labels()
        .ok_or_else(|| CoreError::MissingLabels("compare needs labels.txt".into()))?
        .to_vec();
    ensure_dir(&args.out)?;

    let mut csv = String::from("method,seed,accuracy,fmi,ari,distance_ratio,status\n");
    let mut collected: Vec<(String, Vec<SeedMetrics>)> = vec![
        ("nml".into(), Vec::new()),
        ("baseline".into(), Vec::new()),
    ];
    let mut first_error: Option<CoreError> = None;
    let mut successes = 0usize;

    for &seed in &args.seeds {
        let (base_cfg, _) = resolve_config(
            args.config.as_deref(),
            args.profile.as_deref(),
            Some(seed),
            false,
        )?;
        for (method_idx, baseline) in [(0usize, false), (1, true)] {
            let mut cfg: TrainConfig = base_cfg.clone();
            cfg.baseline_mode = baseline;
            let result = if baseline {
                train_baseline(&graph, &cfg)
            } else {
                train(&graph, &cfg)
            }
            .and_then(|out| eval_run(&out, &graph, &labels, seed, args));
            let method = &collected[method_idx].0;
            match result {
                Ok(m) => {
                    let _ = writeln!(
                        csv,
                        "{method},{seed},{:.4},{:.4},{:.4},{:.4},ok",
                        m.accuracy, m.fmi, m.ari, m.distance_ratio
                    );
                    collected[method_idx].1.push(m);
                    successes += 1;
                }
                Err(e) => {
                    eprintln!("{method} seed {seed} failed: {e}");
                    let _ = writeln!(csv, "{method},{seed},,,,,failed");
                    if first_error.is_none() {
                        first_error = Some(e);
                    }
                }
            }
        }
    }

    for (method, metrics) in &collected {
        if metrics.is_empty() {
            continue;
        }
        let n = metrics.len() as f64;
        let mean = |f: fn(&SeedMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
        let std = |f: fn(&SeedMetrics) -> f64, mu: f64| {
            (metrics.iter().map(|m| (f(m) - mu) * (f(m) - mu)).sum::<f64>() / n).sqrt()
        };
        let (ma, mf, mr, md) = (
            mean(|m| m.accuracy),
            mean(|m| m.fmi),
            mean(|m| m.ari),
            mean(|m| m.distance_ratio),
        );
        let _ = writeln!(csv, "{method},mean,{ma:.4},{mf:.4},{mr:.4},{md:.4},ok");
        let _ = writeln!(
            csv,
            "{method},std,{:.4},{:.4},{:.4},{:.4},ok",
            std(|m| m.accuracy, ma),
            std(|m| m.fmi, mf),
            std(|m| m.ari, mr),
            std(|m| m.distance_ratio, md)
        );
    }
    write_file(&args.out.join("comparison.csv"), csv.as_bytes())?;
    println!("comparison written to {}", args.out.join("comparison.csv").display());

    if successes == 0 {
        return Err(first_error.expect("at least one run attempted"));
    }
    Ok(())
}
