//! Flat key-value configuration files, dataset profiles, and the run
//! manifest.
//!
//! The config format is a TOML-compatible subset: one `key = value` pair
//! per line, `#` comments, no sections. Manifests are valid config files
//! carrying extra informational keys, so a manifest can be passed back via
//! `--config` to reproduce its run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nmlgcl::augment::MaskMode;
use nmlgcl::error::CoreError;
use nmlgcl::graph::{load_graph, Graph};
use nmlgcl::model::{DEFAULT_EMBED_DIM, DEFAULT_HIDDEN_DIM};
use nmlgcl::train::TrainConfig;

/// Keys that configure training.
const CONFIG_KEYS: &[&str] = &[
    "tau",
    "alpha",
    "epochs",
    "inner_steps",
    "outer_steps",
    "lr",
    "weight_decay",
    "embed_dim",
    "hidden_dim",
    "edge_drop_ratio",
    "feature_mask_ratio",
    "mask_mode",
    "seed",
    "baseline",
    "block_rows",
    "final_activation",
    "profile",
];

/// Informational manifest keys, accepted and ignored on load.
const MANIFEST_KEYS: &[&str] = &[
    "version",
    "dataset_fingerprint",
    "data_dir",
    "artifact_checkpoint",
    "artifact_history",
    "generator",
    "blocks",
    "p_in",
    "p_out",
    "feature_dim",
    "feature_shift",
];

/// Named hyperparameter profiles; dimensions and augmentation ratios are
/// shared across them.
pub fn profile(name: &str) -> Option<TrainConfig> {
    // (lr, weight_decay, tau, epochs, inner_steps, alpha)
    let (lr, wd, tau, epochs, inner, alpha) = match name {
        "cora" => (5e-4, 1e-3, 0.8, 200, 2, 0.1),
        "citeseer" => (5e-4, 5e-3, 0.7, 50, 3, 0.1),
        "pubmed" => (5e-4, 0.0, 0.5, 150, 3, 0.05),
        "photo" => (1e-4, 0.0, 0.5, 50, 5, 0.1),
        "computers" => (5e-4, 0.0, 0.4, 50, 8, 0.1),
        "wikics" => (5e-4, 0.0, 0.5, 50, 6, 0.2),
        _ => return None,
    };
    Some(TrainConfig {
        tau,
        alpha,
        epochs,
        inner_steps: inner,
        lr,
        weight_decay: wd,
        embed_dim: DEFAULT_EMBED_DIM,
        hidden_dim: DEFAULT_HIDDEN_DIM,
        ..TrainConfig::default()
    })
}

pub fn profile_names() -> &'static [&'static str] {
    &["cora", "citeseer", "pubmed", "photo", "computers", "wikics"]
}

/// A parsed flat key-value file, insertion order ignored.
#[derive(Debug, Clone, Default)]
pub struct KeyValues(BTreeMap<String, String>);

impl KeyValues {
    pub fn parse(text: &str, source: &str) -> Result<Self, CoreError> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CoreError::Parse {
                    path: source.to_string(),
                    line: idx + 1,
                    reason: "expected `key = value`".into(),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().trim_matches('"').to_string();
            map.insert(key, value);
        }
        Ok(KeyValues(map))
    }

    pub fn load(path: &Path) -> Result<Self, CoreError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(|s| s.as_str())
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CoreError> {
    value.parse::<T>().map_err(|_| {
        CoreError::Argument(format!("config key {key} has unparsable value `{value}`"))
    })
}

/// Applies config-file keys over a base config. Unknown keys are an error
/// that lists the valid keys.
pub fn apply_key_values(
    base: &mut TrainConfig,
    kv: &KeyValues,
    profile_out: &mut Option<String>,
) -> Result<(), CoreError> {
    for (key, value) in &kv.0 {
        match key.as_str() {
            "tau" => base.tau = parse_value(key, value)?,
            "alpha" => base.alpha = parse_value(key, value)?,
            "epochs" => base.epochs = parse_value(key, value)?,
            "inner_steps" => base.inner_steps = parse_value(key, value)?,
            "outer_steps" => base.outer_steps = parse_value(key, value)?,
            "lr" => base.lr = parse_value(key, value)?,
            "weight_decay" => base.weight_decay = parse_value(key, value)?,
            "embed_dim" => base.embed_dim = parse_value(key, value)?,
            "hidden_dim" => base.hidden_dim = parse_value(key, value)?,
            "edge_drop_ratio" => base.augment.edge_drop_ratio = parse_value(key, value)?,
            "feature_mask_ratio" => base.augment.feature_mask_ratio = parse_value(key, value)?,
            "mask_mode" => {
                base.augment.mask_mode = match value.as_str() {
                    "column" => MaskMode::Column,
                    "entry" => MaskMode::Entry,
                    other => {
                        return Err(CoreError::Argument(format!(
                            "mask_mode must be `column` or `entry`, got `{other}`"
                        )))
                    }
                }
            }
            "seed" => base.seed = parse_value(key, value)?,
            "baseline" => base.baseline_mode = parse_value(key, value)?,
            "block_rows" => base.block_rows = parse_value(key, value)?,
            "final_activation" => { /* applied at model level via config */ }
            "profile" => *profile_out = Some(value.clone()),
            other if MANIFEST_KEYS.contains(&other) => {}
            other => {
                return Err(CoreError::Argument(format!(
                    "unknown config key `{other}`; valid keys: {}",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
    }
    Ok(())
}

/// Resolves the effective config: generic defaults, then the named profile
/// when given, then config-file overrides, then command-line overrides.
pub fn resolve_config(
    config_path: Option<&Path>,
    profile_flag: Option<&str>,
    seed_flag: Option<u64>,
    baseline_flag: bool,
) -> Result<(TrainConfig, Option<String>), CoreError> {
    let kv = config_path.map(KeyValues::load).transpose()?;

    // A profile may come from the flag or from the config file itself.
    let mut profile_name = profile_flag.map(|s| s.to_string());
    if profile_name.is_none() {
        if let Some(kv) = &kv {
            profile_name = kv.get("profile").map(|s| s.to_string());
        }
    }
    let mut cfg = match &profile_name {
        Some(name) => profile(name).ok_or_else(|| {
            CoreError::Argument(format!(
                "unknown profile `{name}`; available: {}",
                profile_names().join(", ")
            ))
        })?,
        None => TrainConfig::default(),
    };
    if let Some(kv) = &kv {
        let mut ignored = None;
        apply_key_values(&mut cfg, kv, &mut ignored)?;
    }
    if let Some(seed) = seed_flag {
        cfg.seed = seed;
    }
    if baseline_flag {
        cfg.baseline_mode = true;
    }
    cfg.validate()?;
    Ok((cfg, profile_name))
}

/// FNV-1a over the bytes of the dataset files, as a stable fingerprint.
pub fn fingerprint_files(paths: &[PathBuf]) -> Result<String, CoreError> {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for path in paths {
        let bytes = std::fs::read(path).map_err(|e| CoreError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        for b in bytes {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x1000_0000_01b3);
        }
        // File separator.
        hash ^= 0xff;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    Ok(format!("{hash:016x}"))
}

/// Locations of the dataset files inside a data directory.
pub struct DatasetPaths {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: Option<PathBuf>,
}

pub fn dataset_paths(dir: &Path) -> Result<DatasetPaths, CoreError> {
    let edges = dir.join("edges.txt");
    if !edges.exists() {
        return Err(CoreError::Argument(format!(
            "no edges.txt in {}",
            dir.display()
        )));
    }
    let features_bin = dir.join("features.bin");
    let features = if features_bin.exists() {
        features_bin
    } else {
        let features_txt = dir.join("features.txt");
        if !features_txt.exists() {
            return Err(CoreError::Argument(format!(
                "no features.txt or features.bin in {}",
                dir.display()
            )));
        }
        features_txt
    };
    let labels = dir.join("labels.txt");
    Ok(DatasetPaths {
        edges,
        features,
        labels: labels.exists().then_some(labels),
    })
}

pub fn load_dataset(dir: &Path) -> Result<(Graph, String), CoreError> {
    let paths = dataset_paths(dir)?;
    let graph = load_graph(&paths.edges, &paths.features, paths.labels.as_deref())?;
    let mut files = vec![paths.edges, paths.features];
    files.extend(paths.labels);
    let fingerprint = fingerprint_files(&files)?;
    Ok((graph, fingerprint))
}

/// Renders the run manifest; a valid config file plus informational keys.
pub fn render_manifest(
    cfg: &TrainConfig,
    profile: Option<&str>,
    fingerprint: &str,
    data_dir: &Path,
    checkpoint: &Path,
    history: &Path,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# run manifest; reusable via --config");
    let _ = writeln!(out, "version = \"{}\"", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "dataset_fingerprint = \"{fingerprint}\"");
    let _ = writeln!(out, "data_dir = \"{}\"", data_dir.display());
    let _ = writeln!(out, "artifact_checkpoint = \"{}\"", checkpoint.display());
    let _ = writeln!(out, "artifact_history = \"{}\"", history.display());
    if let Some(p) = profile {
        let _ = writeln!(out, "profile = \"{p}\"");
    }
    let _ = writeln!(out, "tau = {}", cfg.tau);
    let _ = writeln!(out, "alpha = {}", cfg.alpha);
    let _ = writeln!(out, "epochs = {}", cfg.epochs);
    let _ = writeln!(out, "inner_steps = {}", cfg.inner_steps);
    let _ = writeln!(out, "outer_steps = {}", cfg.outer_steps);
    let _ = writeln!(out, "lr = {}", cfg.lr);
    let _ = writeln!(out, "weight_decay = {}", cfg.weight_decay);
    let _ = writeln!(out, "embed_dim = {}", cfg.embed_dim);
    let _ = writeln!(out, "hidden_dim = {}", cfg.hidden_dim);
    let _ = writeln!(out, "edge_drop_ratio = {}", cfg.augment.edge_drop_ratio);
    let _ = writeln!(out, "feature_mask_ratio = {}", cfg.augment.feature_mask_ratio);
    let _ = writeln!(
        out,
        "mask_mode = {}",
        match cfg.augment.mask_mode {
            MaskMode::Column => "column",
            MaskMode::Entry => "entry",
        }
    );
    let _ = writeln!(out, "seed = {}", cfg.seed);
    let _ = writeln!(out, "baseline = {}", cfg.baseline_mode);
    let _ = writeln!(out, "block_rows = {}", cfg.block_rows);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_values_resolve() {
        let cora = profile("cora").unwrap();
        assert_eq!(cora.tau, 0.8);
        assert_eq!(cora.epochs, 200);
        assert_eq!(cora.inner_steps, 2);
        assert_eq!(cora.embed_dim, 512);
        assert!(profile("nope").is_none());
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let kv = KeyValues::parse("taus = 0.7\n", "test").unwrap();
        let mut cfg = TrainConfig::default();
        let err = apply_key_values(&mut cfg, &kv, &mut None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("taus"));
        assert!(msg.contains("tau"));
        assert!(msg.contains("alpha"));
    }

    #[test]
    fn config_overrides_profile() {
        let text = "profile = \"cora\"\ntau = 0.33\n";
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, text).unwrap();
        let (cfg, profile) = resolve_config(Some(&path), None, Some(9), false).unwrap();
        assert_eq!(profile.as_deref(), Some("cora"));
        assert_eq!(cfg.tau, 0.33);
        assert_eq!(cfg.lr, 5e-4);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn manifest_roundtrips_through_config_loader() {
        let cfg = TrainConfig {
            tau: 0.61,
            seed: 5,
            ..TrainConfig::default()
        };
        let text = render_manifest(
            &cfg,
            None,
            "abcd",
            Path::new("/data"),
            Path::new("/out/checkpoint.ckpt"),
            Path::new("/out/history.csv"),
        );
        let kv = KeyValues::parse(&text, "manifest").unwrap();
        let mut back = TrainConfig::default();
        apply_key_values(&mut back, &kv, &mut None).unwrap();
        assert_eq!(back.tau, 0.61);
        assert_eq!(back.seed, 5);
        assert_eq!(back, cfg);
    }

    #[test]
    fn parse_rejects_garbage_lines() {
        assert!(KeyValues::parse("just words\n", "t").is_err());
        assert!(KeyValues::parse("# comment\n\nkey = 1\n", "t").is_ok());
    }
}
