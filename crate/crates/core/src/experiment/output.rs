use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::train::{train, GsnrRow, LossRow, TrainOutcome};
use crate::error::{Error, Result};
use crate::gsnr::GsnrValue;
use crate::infoplane::{InfoPoint, MiUnit};
use crate::nn::LayerFilter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub status: RunStatus,
    pub error: Option<String>,
    pub config_hash: String,
    /// The config with all defaults filled in.
    pub config: String,
    pub sampler: String,
    pub start_epoch: usize,
    pub end_epoch: usize,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub files: Vec<FileEntry>,
    pub history: Vec<LossRow>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn layer_label(f: LayerFilter) -> String {
    match f {
        LayerFilter::Whole => "all".into(),
        LayerFilter::Layer(k) => k.to_string(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn mi_bytes(points: &[InfoPoint], sampler: &str) -> Vec<u8> {
    csv_bytes(
        &["epoch", "layer", "mi_xt", "mi_ty", "unit", "estimator", "sampler"],
        points.iter().map(|p| {
            vec![
                p.epoch.to_string(),
                p.layer.to_string(),
                p.mi_xt.to_string(),
                p.mi_ty.to_string(),
                p.unit.as_str().into(),
                p.estimator.clone(),
                sampler.into(),
            ]
        }),
    )
}

/// CSV and JSON artifacts of an outcome, as `(file name, bytes)`.
fn artifacts(out: &TrainOutcome) -> Vec<(&'static str, Vec<u8>)> {
    let mut files = vec![
        (
            "gsnr.csv",
            csv_bytes(
                &["epoch", "layer", "sampler", "mean_norm", "std", "gsnr", "ratio_h_l"],
                out.gsnr.iter().map(|r| {
                    vec![
                        r.epoch.to_string(),
                        layer_label(r.layer),
                        r.sampler.into(),
                        r.mean_norm.to_string(),
                        r.std.to_string(),
                        r.gsnr.to_string(),
                        opt(r.ratio_h_l),
                    ]
                }),
            ),
        ),
        ("mi.csv", mi_bytes(&out.mi, out.sampler)),
        (
            "loss.csv",
            csv_bytes(
                &["epoch", "split", "loss", "accuracy"],
                out.loss.iter().map(|r| {
                    vec![
                        r.epoch.to_string(),
                        r.split.as_str().into(),
                        r.loss.to_string(),
                        r.accuracy.to_string(),
                    ]
                }),
            ),
        ),
    ];
    if !out.mi_validation.is_empty() {
        files.push(("mi_validation.csv", mi_bytes(&out.mi_validation, out.sampler)));
    }
    if !out.partitions.is_empty() {
        files.push((
            "partitions.csv",
            csv_bytes(
                &["epoch", "h_size", "n1", "n2", "residual_norm", "density_ok"],
                out.partitions.iter().map(|p| {
                    vec![
                        p.epoch.to_string(),
                        p.h_size.to_string(),
                        p.n1.to_string(),
                        p.n2.to_string(),
                        p.residual_norm.to_string(),
                        p.density_ok.to_string(),
                    ]
                }),
            ),
        ));
    }
    if let Some(g) = &out.growth {
        let mut json = serde_json::to_vec_pretty(g).expect("plain data");
        json.push(b'\n');
        files.push(("growth.json", json));
    }
    files
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<FileEntry> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(FileEntry {
        path: name.into(),
        sha256: hex::encode(Sha256::digest(bytes)),
        bytes: bytes.len(),
    })
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(manifest).expect("plain data");
    json.push(b'\n');
    let path = dir.join("manifest.json");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Writes an outcome's artifacts (and plots, if configured) into `dir`.
pub fn write_outcome(
    config: &ExperimentConfig,
    out: &TrainOutcome,
    dir: &Path,
    started_unix: u64,
) -> Result<RunManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for (name, bytes) in artifacts(out) {
        files.push(write_file(dir, name, &bytes)?);
    }
    if config.instrumentation.plots {
        for (name, svg) in crate::plot::render_run(dir)? {
            files.push(write_file(dir, &name, svg.as_bytes())?);
        }
    }
    let manifest = RunManifest {
        name: config.name.clone(),
        status: RunStatus::Ok,
        error: None,
        config_hash: config.hash(),
        config: config.to_toml(),
        sampler: out.sampler.into(),
        start_epoch: 0,
        end_epoch: out.epochs_completed,
        started_unix,
        finished_unix: now(),
        files,
        history: out.loss.clone(),
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

/// Trains and writes every artifact plus `manifest.json` into `dir`. A failed
/// run still leaves a manifest marked failed.
pub fn run_train(config: &ExperimentConfig, dir: &Path) -> Result<RunManifest> {
    let started = now();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match train(config).and_then(|out| write_outcome(config, &out, dir, started)) {
        Ok(m) => Ok(m),
        Err(e) => {
            let manifest = RunManifest {
                name: config.name.clone(),
                status: RunStatus::Failed,
                error: Some(e.to_string()),
                config_hash: config.hash(),
                config: config.to_toml(),
                sampler: format!("{:?}", config.sampler.kind).to_lowercase(),
                start_epoch: 0,
                end_epoch: 0,
                started_unix: started,
                finished_unix: now(),
                files: Vec::new(),
                history: Vec::new(),
            };
            write_manifest(dir, &manifest)?;
            Err(e)
        }
    }
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let name = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(&name, format!("{other:?}")),
    })?;
    let got = r.headers().map_err(|e| Error::format(&name, e.to_string()))?.clone();
    if got.iter().collect::<Vec<_>>() != header {
        return Err(Error::format(&name, format!("expected columns {header:?}")));
    }
    r.records()
        .map(|rec| rec.map_err(|e| Error::format(&name, e.to_string())))
        .collect()
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| {
        Error::format(
            path.display().to_string(),
            format!("line {line}, column {}: bad value", i + 1),
        )
    })
}

fn static_sampler(s: &str) -> &'static str {
    match s {
        "ts" => "ts",
        "srs" => "srs",
        _ => "other",
    }
}

pub fn read_gsnr_csv(path: &Path) -> Result<Vec<GsnrRow>> {
    let recs = read_rows(
        path,
        &["epoch", "layer", "sampler", "mean_norm", "std", "gsnr", "ratio_h_l"],
    )?;
    recs.iter()
        .map(|r| {
            let layer = match &r[1] {
                "all" => LayerFilter::Whole,
                _ => LayerFilter::Layer(field(r, 1, path)?),
            };
            let (mean_norm, std): (f64, f64) = (field(r, 3, path)?, field(r, 4, path)?);
            let gsnr = match &r[5] {
                "inf" => GsnrValue::Infinite,
                "nan" => GsnrValue::Undefined,
                _ => GsnrValue::Finite(field(r, 5, path)?),
            };
            let ratio_h_l = if r[6].is_empty() {
                None
            } else {
                Some(field(r, 6, path)?)
            };
            Ok(GsnrRow {
                epoch: field(r, 0, path)?,
                layer,
                sampler: static_sampler(&r[2]),
                mean_norm,
                std,
                gsnr,
                ratio_h_l,
            })
        })
        .collect()
}

/// Points and the sampler column of each.
pub fn read_mi_csv(path: &Path) -> Result<Vec<(InfoPoint, String)>> {
    let recs = read_rows(
        path,
        &["epoch", "layer", "mi_xt", "mi_ty", "unit", "estimator", "sampler"],
    )?;
    recs.iter()
        .map(|r| {
            let unit = match &r[4] {
                "bits" => MiUnit::Bits,
                "nats" => MiUnit::Nats,
                other => {
                    return Err(Error::format(
                        path.display().to_string(),
                        format!("unknown unit {other:?}"),
                    ))
                }
            };
            Ok((
                InfoPoint {
                    epoch: field(r, 0, path)?,
                    layer: field(r, 1, path)?,
                    mi_xt: field(r, 2, path)?,
                    mi_ty: field(r, 3, path)?,
                    unit,
                    estimator: r[5].to_string(),
                },
                r[6].to_string(),
            ))
        })
        .collect()
}
