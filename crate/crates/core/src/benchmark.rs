//! Seeded comparison of engine modes over a dataset suite, with failure
//! imputation and average ranks.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{holdout_evaluation, AblationMode, RunConfig};
use crate::error::Result;
use crate::metalearn::KnowledgeBase;
use crate::series::{load_dataset, PanelDataset};

/// Added to the worst finite result when imputing a failed cell.
pub const EPS_RANK: f64 = 1e-6;

/// Imputed value when no mode produced a finite result on a dataset.
pub const NO_RESULT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub dataset: String,
    pub mode: AblationMode,
    pub seed: u64,
    /// Holdout metric, `None` if the run failed.
    pub value: Option<f64>,
    pub imputed: bool,
    /// Value used for ranking and averages.
    pub score: f64,
    pub rank: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Cell {
    pub fn new(dataset: impl Into<String>, mode: AblationMode, seed: u64, value: Option<f64>) -> Self {
        Self {
            dataset: dataset.into(),
            mode,
            seed,
            value: value.filter(|v| v.is_finite()),
            imputed: false,
            score: f64::NAN,
            rank: f64::NAN,
            error: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: AblationMode,
    pub mean: f64,
    pub std: f64,
    pub mean_rank: f64,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResults {
    pub cells: Vec<Cell>,
    pub summary: Vec<ModeSummary>,
}

/// 1-based ranks of `values`, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Fills failed cells with the worst finite value of any mode on the same
/// dataset plus [`EPS_RANK`], then ranks modes within each
/// (dataset, seed) group.
pub fn impute_and_rank(cells: &mut [Cell]) {
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    for c in cells.iter() {
        if let Some(v) = c.value {
            let w = worst.entry(c.dataset.clone()).or_insert(v);
            *w = w.max(v);
        }
    }
    for c in cells.iter_mut() {
        match c.value {
            Some(v) => {
                c.score = v;
                c.imputed = false;
            }
            None => {
                c.score = worst.get(&c.dataset).map_or(NO_RESULT, |w| w + EPS_RANK);
                c.imputed = true;
            }
        }
    }
    let mut groups: BTreeMap<(String, u64), Vec<usize>> = BTreeMap::new();
    for (i, c) in cells.iter().enumerate() {
        groups.entry((c.dataset.clone(), c.seed)).or_default().push(i);
    }
    for idx in groups.values() {
        let scores: Vec<f64> = idx.iter().map(|&i| cells[i].score).collect();
        for (&i, r) in idx.iter().zip(average_ranks(&scores)) {
            cells[i].rank = r;
        }
    }
}

pub fn summarize(cells: &[Cell]) -> Vec<ModeSummary> {
    let mut by_mode: BTreeMap<AblationMode, Vec<&Cell>> = BTreeMap::new();
    for c in cells {
        by_mode.entry(c.mode).or_default().push(c);
    }
    by_mode
        .into_iter()
        .map(|(mode, cs)| {
            let n = cs.len() as f64;
            let mean = cs.iter().map(|c| c.score).sum::<f64>() / n;
            let var = if cs.len() > 1 {
                cs.iter().map(|c| (c.score - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            ModeSummary {
                mode,
                mean,
                std: var.sqrt(),
                mean_rank: cs.iter().map(|c| c.rank).sum::<f64>() / n,
                failures: cs.iter().filter(|c| c.imputed).count(),
            }
        })
        .collect()
}

/// Runs every (dataset, mode, seed) combination with an outer holdout.
/// Run errors become imputed cells.
pub fn run_benchmark(
    datasets: &[PanelDataset],
    modes: &[AblationMode],
    seeds: &[u64],
    base: &RunConfig,
    kb: Option<&KnowledgeBase>,
) -> BenchmarkResults {
    let mut cells = Vec::new();
    for d in datasets {
        for &seed in seeds {
            for &mode in modes {
                let cfg = RunConfig {
                    mode,
                    seed,
                    ..base.clone()
                };
                let mut cell = Cell::new(d.name(), mode, seed, None);
                match holdout_evaluation(d, &cfg, kb) {
                    Ok(r) => cell.value = Some(r.loss).filter(|v| v.is_finite()),
                    Err(e) => {
                        log::warn!("{} / {mode} / seed {seed} failed: {e}", d.name());
                        cell.error = Some(e.to_string());
                    }
                }
                log::info!("{} / {mode} / seed {seed}: {:?}", d.name(), cell.value);
                cells.push(cell);
            }
        }
    }
    impute_and_rank(&mut cells);
    let summary = summarize(&cells);
    BenchmarkResults { cells, summary }
}

/// A benchmark suite file: dataset paths, modes and run settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    pub datasets: Vec<SuiteDataset>,
    #[serde(default = "all_modes")]
    pub modes: Vec<AblationMode>,
    #[serde(default)]
    pub kb: Option<PathBuf>,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteDataset {
    pub data: PathBuf,
    pub meta: PathBuf,
}

fn all_modes() -> Vec<AblationMode> {
    AblationMode::ALL.to_vec()
}

impl Suite {
    /// Reads a suite; relative paths resolve against the suite's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut suite: Suite = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut suite.datasets {
            d.data = base.join(&d.data);
            d.meta = base.join(&d.meta);
        }
        suite.kb = suite.kb.map(|k| base.join(k));
        Ok(suite)
    }

    pub fn load_datasets(&self) -> Result<Vec<PanelDataset>> {
        self.datasets.iter().map(|d| load_dataset(&d.data, &d.meta)).collect()
    }
}

/// Writes `results.csv` (one row per cell) and `results.json`.
pub fn write_results(results: &BenchmarkResults, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
    w.write_record(["dataset", "mode", "seed", "value", "imputed", "score", "rank"])?;
    for c in &results.cells {
        w.write_record([
            c.dataset.clone(),
            c.mode.to_string(),
            c.seed.to_string(),
            c.value.map(|v| v.to_string()).unwrap_or_default(),
            c.imputed.to_string(),
            c.score.to_string(),
            c.rank.to_string(),
        ])?;
    }
    w.flush()?;
    std::fs::write(dir.join("results.json"), serde_json::to_string_pretty(results)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use AblationMode::*;

    #[test]
    fn dominant_mode_ranks_first() {
        let mut cells = Vec::new();
        for (i, d) in ["a", "b", "c"].iter().enumerate() {
            cells.push(Cell::new(*d, Full, 0, Some(1.0 + i as f64)));
            cells.push(Cell::new(*d, TemplatesOnly, 0, Some(2.0 + i as f64)));
        }
        impute_and_rank(&mut cells);
        let s = summarize(&cells);
        assert_eq!(s.iter().find(|m| m.mode == Full).unwrap().mean_rank, 1.0);
        assert_eq!(s.iter().find(|m| m.mode == TemplatesOnly).unwrap().mean_rank, 2.0);
    }

    #[test]
    fn failed_cell_is_imputed_last() {
        let mut cells = vec![
            Cell::new("d", Full, 0, Some(1.0)),
            Cell::new("d", TemplatesMf, 0, Some(2.0)),
            Cell::new("d", TemplatesOnly, 0, None),
        ];
        impute_and_rank(&mut cells);
        assert_eq!(cells[2].score, 2.0 + 1e-6);
        assert!(cells[2].imputed);
        assert_eq!(cells.iter().map(|c| c.rank).collect::<Vec<_>>(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn ties_share_ranks() {
        assert_eq!(average_ranks(&[3.0, 3.0]), vec![1.5, 1.5]);
        assert_eq!(average_ranks(&[2.0, 1.0, 2.0, 0.5]), vec![3.5, 2.0, 3.5, 1.0]);
    }

    #[test]
    fn all_failed_dataset() {
        let mut cells = vec![Cell::new("d", Full, 0, None), Cell::new("d", TemplatesOnly, 0, Some(f64::NAN))];
        impute_and_rank(&mut cells);
        assert!(cells.iter().all(|c| c.score == NO_RESULT && c.rank == 1.5));
    }

    #[test]
    fn results_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut cells = vec![Cell::new("d", Full, 0, Some(1.0))];
        impute_and_rank(&mut cells);
        let r = BenchmarkResults { summary: summarize(&cells), cells };
        write_results(&r, dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(csv.lines().nth(1).unwrap(), "d,full,0,1,false,1,1");
    }
}
