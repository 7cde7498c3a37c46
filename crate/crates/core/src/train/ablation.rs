use std::fmt::Write as _;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Scores;
use crate::mixer::MixerKind;
use crate::model::Ablation;
use crate::train::config::TrainConfig;
use crate::train::dataset::Dataset;
use crate::train::trainer::train;

/// Auxiliary-loss weights compared in the λ study.
pub const LAMBDA_GRID: [f64; 4] = [0.0, 0.1, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub name: String,
    pub config: TrainConfig,
}

fn cell(base: &TrainConfig, name: &str, f: impl FnOnce(&mut Ablation)) -> AblationCell {
    let mut config = base.clone();
    f(&mut config.ablation);
    AblationCell {
        name: name.to_string(),
        config,
    }
}

/// Baseline plus one cell per studied toggle: attention directions, mixer
/// type, SE and MCA, dual heads, supervision targets and the λ grid.
pub fn ablation_grid(base: &TrainConfig) -> Vec<AblationCell> {
    let mut cells = vec![
        cell(base, "baseline", |_| {}),
        cell(base, "no V2A", |a| a.v2a = false),
        cell(base, "no A2V", |a| a.a2v = false),
        cell(base, "no V2A, no A2V", |a| {
            a.v2a = false;
            a.a2v = false;
        }),
        cell(base, "CHA mixer", |a| a.mixer = MixerKind::Cha),
        cell(base, "no SE", |a| a.se = false),
        cell(base, "no MCA", |a| a.mca = false),
        cell(base, "no SE, no MCA", |a| {
            a.se = false;
            a.mca = false;
        }),
        cell(base, "single head", |a| a.dual = false),
        cell(base, "func supervision only", |a| a.supervise_dep = false),
        cell(base, "dep supervision only", |a| a.supervise_func = false),
    ];
    cells.extend(lambda_grid(base, &LAMBDA_GRID));
    cells
}

pub fn lambda_grid(base: &TrainConfig, lambdas: &[f64]) -> Vec<AblationCell> {
    lambdas
        .iter()
        .map(|&l| AblationCell {
            name: format!("lambda {l}"),
            config: TrainConfig {
                lambda_aux: l,
                ..base.clone()
            },
        })
        .collect()
}

/// Dotted paths of every config field whose value differs.
pub fn changed_fields(a: &TrainConfig, b: &TrainConfig) -> Result<Vec<String>> {
    fn walk(prefix: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
        match (a, b) {
            (serde_json::Value::Object(x), serde_json::Value::Object(y)) => {
                for (k, va) in x {
                    let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    match y.get(k) {
                        Some(vb) => walk(&path, va, vb, out),
                        None => out.push(path),
                    }
                }
            }
            _ if a != b => out.push(prefix.to_string()),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk("", &serde_json::to_value(a)?, &serde_json::to_value(b)?, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub n_params: usize,
    pub val: Scores,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn table(&self) -> String {
        let w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(6);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<w$} {:>9} {:>7} {:>7} {:>7} {:>7}",
            "config", "params", "mIoU_f", "F_f", "mIoU_d", "F_d"
        );
        for r in &self.rows {
            let v = r.val;
            let _ = writeln!(
                s,
                "{:<w$} {:>9} {:>7.2} {:>7.2} {:>7.2} {:>7.2}",
                r.name,
                r.n_params,
                100.0 * v.miou_f,
                100.0 * v.f_f,
                100.0 * v.miou_d,
                100.0 * v.f_d
            );
        }
        s
    }
}

/// Trains every cell on the same data and reports the best validation
/// scores of each.
pub fn run_ablation_suite(cells: &[AblationCell], data: &Dataset, val: &Dataset) -> Result<AblationTable> {
    if val.is_empty() {
        return Err(Error::EmptyList);
    }
    let mut table = AblationTable::default();
    for c in cells {
        info!("ablation cell {:?}", c.name);
        let out = train(&c.config, data, Some(val), None)?;
        table.rows.push(AblationRow {
            name: c.name.clone(),
            n_params: out.model.num_params(),
            val: out.log.best_val.expect("validation scores"),
        });
    }
    Ok(table)
}
