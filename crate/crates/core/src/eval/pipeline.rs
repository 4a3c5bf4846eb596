//! File-based experiment stages. Each stage reads earlier artifacts from the
//! output directory, writes its own, and records a run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{
    generate_synthetic_dataset, ingest_raw_dataset, Dataset, IngestConfig, Split, SyntheticConfig,
};
use super::grid::{run_grid, summarize_grid, ExperimentGrid, GridRow};
use super::manifest::RunManifest;
use super::metrics::MetricsReport;
use super::sweep::{default_size_limits, sweep_accuracy_vs_size, SweepPoint};
use super::vary::run_varying_scenario;
use super::EvalError;
use crate::codec::{build_huffman_tables, parse_tables, quantize_latent, write_tables, Codec};
use crate::nn::{AutoEncoder, Checkpoint};
use crate::sim::{
    prepare_workload, read_records, write_records, Scenario, ScenarioConfig, Workload,
};
use crate::train::{
    autoencoder_from_checkpoint, autoencoder_to_checkpoint, gather, train_autoencoder,
    train_fixed_rate, train_teacher, write_epoch_csv, Teacher, TrainConfig,
};

pub const DATASET: &str = "dataset.bin";
pub const TEACHER: &str = "teacher.json";
pub const TEACHER_REPORT: &str = "teacher_report.csv";
pub const AE: &str = "ae.json";
pub const AE_EPOCHS: &str = "ae_epochs.csv";
pub const FIXED: &str = "fixed.json";
pub const FIXED_EPOCHS: &str = "fixed_epochs.csv";
pub const TABLES: &str = "huffman_tables.txt";
pub const FIXED_TABLES: &str = "fixed_huffman_tables.txt";
pub const SWEEP: &str = "sweep_size.csv";
pub const GRID: &str = "grid.csv";
pub const GRID_SUMMARY: &str = "grid_summary.csv";
pub const RECORDS_DIR: &str = "records";
pub const VARY_TIMELINE: &str = "vary_timeline.csv";
pub const VARY_RECORDS: &str = "vary_records.csv";
pub const REPORT: &str = "report.csv";
pub const INGEST_ISSUES: &str = "ingest_issues.csv";

const CHUNK: usize = 64;

/// Switching-bandwidth run settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaryConfig {
    pub scenario: ScenarioConfig,
    pub period: f64,
    pub images: usize,
    pub seed: u64,
}

impl Default for VaryConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::alternating(
                vec![Scenario::NoJamming, Scenario::HeavyJamming],
                800.0,
                10.0,
                60.0,
            ),
            period: 0.5,
            images: 120,
            seed: 1,
        }
    }
}

/// Everything a full run needs. Missing keys take the desk-scale defaults.
///
/// ```toml
/// seed = 1
/// fixed_channels = 8
/// sweep_points = 17
///
/// [dataset]
/// train = 2000
///
/// [train.pretrain]
/// learning_rate = 0.003
/// batch_size = 16
/// epochs = 8
///
/// [grid]
/// periods = [0.3, 0.5, 0.7]
/// seeds = [1, 2, 3]
///
/// [vary]
/// period = 0.5
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Dataset and teacher seed; the autoencoders use `seed + 6`.
    pub seed: u64,
    pub dataset: SyntheticConfig,
    pub train: TrainConfig,
    /// Bottleneck of the fixed-rate baseline; defaults to `M`.
    pub fixed_channels: Option<usize>,
    pub sweep_points: usize,
    pub grid: ExperimentGrid,
    pub vary: VaryConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            dataset: SyntheticConfig::default(),
            train: TrainConfig::desk_scale(),
            fixed_channels: None,
            sweep_points: 17,
            grid: ExperimentGrid::default(),
            vary: VaryConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, EvalError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| EvalError::Config(e.to_string()))?;
        cfg.set_seed(cfg.seed);
        cfg.train.validate()?;
        cfg.grid.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Sets the master seed and the seeds derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = self.ae_seed();
    }

    pub fn ae_seed(&self) -> u64 {
        self.seed.wrapping_add(6)
    }

    pub fn fixed_channels(&self) -> usize {
        self.fixed_channels.unwrap_or(self.train.taildrop.channels)
    }
}

/// Stage driver bound to one output directory.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub out: PathBuf,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, out: impl Into<PathBuf>) -> Result<Self, EvalError> {
        let out = out.into();
        fs::create_dir_all(&out)?;
        Ok(Self { config, out })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn manifest(&self, command: &str) -> RunManifest {
        let mut m = RunManifest::new(command, &self.config.to_toml());
        m.seed("seed", self.config.seed);
        m
    }

    fn finish(&self, command: &str, manifest: &RunManifest) -> Result<(), EvalError> {
        let name = format!("manifest_{}.json", command.replace(' ', "_"));
        manifest.write(&self.path(&name))
    }

    pub fn load_dataset(&self) -> Result<Dataset, EvalError> {
        Dataset::load(&self.path(DATASET))
    }

    pub fn load_teacher(&self) -> Result<Teacher, EvalError> {
        Ok(Teacher::from_checkpoint(&Checkpoint::load(
            &self.path(TEACHER),
        )?)?)
    }

    pub fn load_autoencoder(&self, rel: &str) -> Result<AutoEncoder, EvalError> {
        Ok(autoencoder_from_checkpoint(&Checkpoint::load(
            &self.path(rel),
        )?)?)
    }

    pub fn load_codec(&self, rel: &str, ae: &AutoEncoder) -> Result<Codec, EvalError> {
        let tables = parse_tables(&fs::read_to_string(self.path(rel))?)?;
        let [_, h, w] = latent_hw(ae)?;
        Ok(Codec::new(tables, h, w)?)
    }

    /// `dataset gen`
    pub fn dataset_gen(&self) -> Result<Dataset, EvalError> {
        let ds = generate_synthetic_dataset(&self.config.dataset, self.config.seed)?;
        ds.save(&self.path(DATASET))?;
        let mut m = self.manifest("dataset gen");
        m.seed("dataset", self.config.seed)
            .output(&self.out, DATASET)?;
        self.finish("dataset gen", &m)?;
        Ok(ds)
    }

    /// `dataset ingest`: bad rows go to `ingest_issues.csv`.
    pub fn dataset_ingest(
        &self,
        manifest: &Path,
        config: &IngestConfig,
    ) -> Result<Dataset, EvalError> {
        let (ds, issues) = ingest_raw_dataset(manifest, config, self.config.seed)?;
        if ds.samples.is_empty() {
            return Err(EvalError::Input("ingested dataset is empty".into()));
        }
        ds.save(&self.path(DATASET))?;
        let mut w = csv::Writer::from_path(self.path(INGEST_ISSUES))?;
        w.write_record(["file", "reason"])?;
        for issue in &issues {
            w.write_record([issue.file.display().to_string(), issue.reason.clone()])?;
        }
        w.flush()?;
        let mut m = self.manifest("dataset ingest");
        m.seed("split", self.config.seed);
        m.inputs.insert(
            manifest.display().to_string(),
            super::manifest::hash_file(manifest)?,
        );
        m.output(&self.out, DATASET)?
            .output(&self.out, INGEST_ISSUES)?;
        self.finish("dataset ingest", &m)?;
        Ok(ds)
    }

    /// `train teacher`: fits the classifier on the training split.
    pub fn train_teacher(&self) -> Result<Teacher, EvalError> {
        let ds = self.load_dataset()?;
        let train = ds.split(Split::TrainAe);
        let (x, y) = (ds.tensor(&train), Dataset::labels(&train));
        let (teacher, report) = train_teacher(
            &x,
            &y,
            ds.n_classes,
            &self.config.train.teacher,
            self.config.seed,
        )?;
        let mut ckpt = Checkpoint::new();
        teacher.to_checkpoint(&mut ckpt);
        ckpt.save(&self.path(TEACHER))?;
        let mut w = csv::Writer::from_path(self.path(TEACHER_REPORT))?;
        w.write_record(["epochs", "train_accuracy", "val_accuracy", "test_accuracy"])?;
        let acc = |split| -> Result<f64, EvalError> {
            let s = ds.split(split);
            if s.is_empty() {
                return Ok(f64::NAN);
            }
            Ok(teacher.accuracy(&ds.tensor(&s), &Dataset::labels(&s))?)
        };
        w.write_record([
            report.epochs.to_string(),
            report.train_accuracy.to_string(),
            acc(Split::Val)?.to_string(),
            acc(Split::Test)?.to_string(),
        ])?;
        w.flush()?;
        let mut m = self.manifest("train teacher");
        m.seed("teacher", self.config.seed)
            .input(&self.out, DATASET)?
            .output(&self.out, TEACHER)?
            .output(&self.out, TEACHER_REPORT)?;
        self.finish("train teacher", &m)?;
        Ok(teacher)
    }

    /// `train ae` (taildrop) or `train fixed` (no taildrop, `fixed_channels`).
    pub fn train_ae(&self, fixed: bool) -> Result<AutoEncoder, EvalError> {
        let ds = self.load_dataset()?;
        let teacher = self.load_teacher()?;
        let x = ds.tensor(&ds.split(Split::TrainAe));
        let cfg = &self.config.train;
        let trained = if fixed {
            train_fixed_rate(&x, cfg, self.config.fixed_channels(), Some(&teacher))?
        } else {
            train_autoencoder(&x, cfg, Some(&teacher))?
        };
        let (model, epochs, command) = if fixed {
            (FIXED, FIXED_EPOCHS, "train fixed")
        } else {
            (AE, AE_EPOCHS, "train ae")
        };
        let mut ckpt = Checkpoint::new();
        autoencoder_to_checkpoint(&trained.ae, &mut ckpt);
        ckpt.save(&self.path(model))?;
        write_epoch_csv(fs::File::create(self.path(epochs))?, &trained.stats)?;
        let mut m = self.manifest(command);
        m.seed("autoencoder", cfg.seed)
            .seed("trainer", cfg.seed.wrapping_add(1))
            .input(&self.out, DATASET)?
            .input(&self.out, TEACHER)?
            .output(&self.out, model)?
            .output(&self.out, epochs)?;
        self.finish(command, &m)?;
        Ok(trained.ae)
    }

    /// `tables build`: Huffman tables from training-split latents only.
    /// Tables for the fixed-rate model are built too when it exists.
    pub fn build_tables(&self) -> Result<(), EvalError> {
        let ds = self.load_dataset()?;
        let x = ds.tensor(&ds.split(Split::TrainAe));
        let mut m = self.manifest("tables build");
        m.input(&self.out, DATASET)?;
        for (model, tables) in [(AE, TABLES), (FIXED, FIXED_TABLES)] {
            if model == FIXED && !self.path(FIXED).exists() {
                continue;
            }
            let ae = self.load_autoencoder(model)?;
            let mut corpus = Vec::new();
            for start in (0..x.batch()).step_by(CHUNK) {
                let idx: Vec<usize> = (start..(start + CHUNK).min(x.batch())).collect();
                let z = ae.encode(&gather(&x, &idx))?;
                for j in 0..idx.len() {
                    corpus.extend(quantize_latent(&z.item(j))?);
                }
            }
            let built = build_huffman_tables(&corpus, ae.channels())?;
            fs::write(self.path(tables), write_tables(&built))?;
            m.input(&self.out, model)?.output(&self.out, tables)?;
        }
        self.finish("tables build", &m)
    }

    /// Test-split workload for a model and its tables.
    pub fn workload(&self, model: &str, tables: &str) -> Result<Workload, EvalError> {
        let ds = self.load_dataset()?;
        let teacher = self.load_teacher()?;
        let ae = self.load_autoencoder(model)?;
        let codec = self.load_codec(tables, &ae)?;
        let test = ds.split(Split::Test);
        let ids: Vec<u32> = test.iter().map(|s| s.id).collect();
        Ok(prepare_workload(
            &ae,
            &teacher,
            &codec,
            &ds.tensor(&test),
            &Dataset::labels(&test),
            &ids,
        )?)
    }

    /// `sweep size`: accuracy against byte limits for both models.
    pub fn sweep_size(&self) -> Result<Vec<SweepPoint>, EvalError> {
        let top_n = self.config.grid.sim.top_n;
        let pnc = self.workload(AE, TABLES)?;
        let mut m = self.manifest("sweep size");
        m.input(&self.out, DATASET)?.input(&self.out, TEACHER)?;
        m.input(&self.out, AE)?.input(&self.out, TABLES)?;
        let fixed = if self.path(FIXED).exists() && self.path(FIXED_TABLES).exists() {
            m.input(&self.out, FIXED)?.input(&self.out, FIXED_TABLES)?;
            Some(self.workload(FIXED, FIXED_TABLES)?)
        } else {
            None
        };
        let mut all = vec![&pnc];
        all.extend(fixed.as_ref());
        let limits = default_size_limits(&all, self.config.sweep_points);
        let mut rows = sweep_accuracy_vs_size("taildrop", &pnc, &limits, top_n)?;
        if let Some(fixed) = &fixed {
            rows.extend(sweep_accuracy_vs_size("fixed", fixed, &limits, top_n)?);
        }
        write_csv(&self.path(SWEEP), &rows)?;
        m.output(&self.out, SWEEP)?;
        self.finish("sweep size", &m)?;
        Ok(rows)
    }

    /// `sim grid`: every scenario x period x seed cell, with per-cell records.
    pub fn sim_grid(&self) -> Result<Vec<GridRow>, EvalError> {
        let grid = &self.config.grid;
        let workload = self.workload(AE, TABLES).ok();
        let outcomes = run_grid(grid, workload.as_ref())?;
        let records_dir = self.path(RECORDS_DIR);
        fs::create_dir_all(&records_dir)?;
        let mut m = self.manifest("sim grid");
        for &seed in &grid.seeds {
            m.seed(&format!("cell_{seed}"), seed);
        }
        for input in [DATASET, TEACHER, AE, TABLES] {
            if self.path(input).exists() {
                m.input(&self.out, input)?;
            }
        }
        for o in &outcomes {
            if o.row.error.is_empty() {
                let rel = format!("{RECORDS_DIR}/{}.csv", o.cell.tag());
                write_records(fs::File::create(self.path(&rel))?, &o.records)?;
                m.output(&self.out, &rel)?;
            }
        }
        let rows: Vec<GridRow> = outcomes.into_iter().map(|o| o.row).collect();
        write_csv(&self.path(GRID), &rows)?;
        write_csv(&self.path(GRID_SUMMARY), &summarize_grid(&rows))?;
        m.output(&self.out, GRID)?.output(&self.out, GRID_SUMMARY)?;
        self.finish("sim grid", &m)?;
        Ok(rows)
    }

    /// `sim vary`: one run under the switching schedule.
    pub fn sim_vary(&self) -> Result<MetricsReport, EvalError> {
        let v = &self.config.vary;
        let workload = self.workload(AE, TABLES)?;
        let run = run_varying_scenario(
            &v.scenario,
            &workload,
            v.period,
            v.images,
            &self.config.grid.sim,
            v.seed,
        )?;
        write_csv(&self.path(VARY_TIMELINE), &run.timeline)?;
        write_records(fs::File::create(self.path(VARY_RECORDS))?, &run.records)?;
        let mut m = self.manifest("sim vary");
        m.seed("vary", v.seed).seed("trace", v.scenario.seed);
        for input in [DATASET, TEACHER, AE, TABLES] {
            m.input(&self.out, input)?;
        }
        m.output(&self.out, VARY_TIMELINE)?
            .output(&self.out, VARY_RECORDS)?;
        self.finish("sim vary", &m)?;
        Ok(run.report)
    }

    /// `report`: metrics recomputed from every record file on disk.
    pub fn report(&self) -> Result<Vec<MetricsReport>, EvalError> {
        let mut files: Vec<(String, String)> = Vec::new();
        let dir = self.path(RECORDS_DIR);
        if dir.is_dir() {
            let mut names: Vec<String> = fs::read_dir(&dir)?
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n.ends_with(".csv"))
                .collect();
            names.sort();
            for n in names {
                let condition = n.trim_end_matches(".csv").to_string();
                files.push((condition, format!("{RECORDS_DIR}/{n}")));
            }
        }
        if self.path(VARY_RECORDS).exists() {
            files.push(("varying".into(), VARY_RECORDS.into()));
        }
        if files.is_empty() {
            return Err(EvalError::Input("no record files to report on".into()));
        }
        let mut m = self.manifest("report");
        let mut reports = Vec::with_capacity(files.len());
        for (condition, rel) in &files {
            let records = read_records(fs::File::open(self.path(rel))?)?;
            reports.push(MetricsReport::from_records(condition.clone(), &records));
            m.input(&self.out, rel)?;
        }
        write_csv(&self.path(REPORT), &reports)?;
        m.output(&self.out, REPORT)?;
        self.finish("report", &m)?;
        Ok(reports)
    }

    /// Every stage in order.
    pub fn run_all(&self) -> Result<(), EvalError> {
        self.dataset_gen()?;
        self.train_teacher()?;
        self.train_ae(false)?;
        self.train_ae(true)?;
        self.build_tables()?;
        self.sweep_size()?;
        self.sim_grid()?;
        self.sim_vary()?;
        self.report()?;
        Ok(())
    }
}

fn latent_hw(ae: &AutoEncoder) -> Result<[usize; 3], EvalError> {
    match ae.latent_shape() {
        &[m, h, w] => Ok([m, h, w]),
        other => Err(EvalError::Format(format!(
            "unexpected latent shape {other:?}"
        ))),
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_seed_derivation() {
        let cfg = PipelineConfig::from_toml("seed = 4\n[grid]\nperiods = [0.5]\n").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.train.seed, 10);
        assert_eq!(cfg.grid.periods, vec![0.5]);
        assert_eq!(cfg.grid.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.fixed_channels(), 8);
        let again = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn report_without_records_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(PipelineConfig::default(), dir.path()).unwrap();
        assert!(p.report().is_err());
        assert!(p.train_teacher().is_err());
    }
}
