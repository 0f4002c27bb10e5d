use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::{classification_report, MetricReport};
use crate::attacks::{
    deploy_attack, generator_asr, run_gb1, train_generator, AttackInputs, AttackOutcome,
    GeneratorModel, GeneratorTraining, ModifiableMask, OracleHandle, OracleMode, Scenario, Timing,
    DECISION_SECONDS, SETUP_MINUTES,
};
use crate::authenticator::{
    build_model, train_model, ArchKind, DecisionPolicy, Ensemble, EpochRecord, IdleRule,
};
use crate::canbus::{DriveSetup, SignalMap};
use crate::dataio::{
    default_feature_names, filter_constant_features, load_dataset, load_taxonomy, make_batches,
    make_windows, normalize, split, synth_dataset_with, Batch, Dataset, DriverId, NormStats,
    RawDataset, SafetyTaxonomy, Window, BATCH_SIZE, WINDOW_SIZE, WINDOW_STEP,
};
use crate::rng::derive_seed;
use crate::{Error, Result};

/// Filtered, split and normalized data plus the vehicle description.
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub stats: NormStats,
    pub train_windows: Vec<Window>,
    pub val_windows: Vec<Window>,
    pub test_windows: Vec<Window>,
    pub taxonomy: SafetyTaxonomy,
    pub map: SignalMap,
}

impl PreparedData {
    pub fn features(&self) -> &[String] {
        &self.train.feature_names
    }

    pub fn n_drivers(&self) -> usize {
        self.train.n_drivers()
    }

    pub fn train_batches(&self, driver: DriverId) -> Vec<Batch> {
        driver_batches(&self.train_windows, driver)
    }

    pub fn test_batches(&self, driver: DriverId) -> Vec<Batch> {
        driver_batches(&self.test_windows, driver)
    }

    /// The driver's normalized test timeline.
    pub fn test_rows(&self, driver: DriverId) -> Vec<Vec<f64>> {
        self.test
            .rows_of(driver)
            .map(|r| r.values.clone())
            .collect()
    }

    pub fn idle_rule(&self) -> Option<IdleRule> {
        IdleRule::for_dataset(&self.train)
    }
}

fn driver_batches(windows: &[Window], driver: DriverId) -> Vec<Batch> {
    let mine: Vec<Window> = windows
        .iter()
        .filter(|w| w.driver == driver)
        .cloned()
        .collect();
    make_batches(&mine, BATCH_SIZE)
}

pub fn load_raw(cfg: &ExperimentConfig) -> Result<RawDataset> {
    if cfg.is_synthetic() {
        Ok(synth_dataset_with(
            cfg.synth_drivers,
            cfg.synth_seconds,
            derive_seed(cfg.seed, "synth"),
            cfg.separation(),
        ))
    } else {
        load_dataset(cfg.dataset.as_ref(), &cfg.schema())
    }
}

/// Filter, split, normalize on the training split, window.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let ds = filter_constant_features(&load_raw(cfg)?)?;
    let taxonomy = match &cfg.taxonomy {
        Some(p) => load_taxonomy(p, &ds.feature_names)?,
        None => {
            let t = SafetyTaxonomy::default_ocslab();
            t.check_covers(&ds.feature_names)?;
            t
        }
    };
    let map = match &cfg.signal_map {
        Some(p) => SignalMap::load(p)?,
        None if ds
            .feature_names
            .iter()
            .all(|f| default_feature_names().contains(f)) =>
        {
            SignalMap::default_ocslab()
        }
        None => SignalMap::sequential(&ds.feature_names),
    };
    let parts = split(&ds, &cfg.split_spec(), derive_seed(cfg.seed, "split"))?;
    let (train, stats) = normalize(&parts.train, None);
    let (val, _) = normalize(&parts.val, Some(&stats));
    let (test, _) = normalize(&parts.test, Some(&stats));
    let win = |d: &Dataset| make_windows(d, WINDOW_SIZE, WINDOW_STEP);
    Ok(PreparedData {
        train_windows: win(&train),
        val_windows: win(&val),
        test_windows: win(&test),
        train,
        val,
        test,
        stats,
        taxonomy,
        map,
    })
}

/// Trains the three members and wraps them in an ensemble.
pub fn train_ensemble(cfg: &ExperimentConfig, data: &PreparedData) -> Result<Ensemble> {
    let mut members = Vec::with_capacity(3);
    for kind in ArchKind::ALL {
        let arch = cfg.arch(kind, data.features().len(), data.n_drivers());
        let init = build_model(
            &arch,
            derive_seed(cfg.seed, &format!("init/{}", kind.name())),
        )?;
        let tc = cfg.train_config(derive_seed(cfg.seed, &format!("train/{}", kind.name())));
        info!("training {} for {} epochs", kind.name(), tc.epochs);
        let mut m = train_model(&init, &data.train_windows, &data.val_windows, &tc)?;
        m.norm_stats = Some(data.stats.clone());
        members.push(m);
    }
    Ensemble::new(members)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StageStatus {
    Ok,
    Skipped,
    Failed(String),
}

impl StageStatus {
    pub fn label(&self) -> String {
        match self {
            StageStatus::Ok => "ok".into(),
            StageStatus::Skipped => "skipped".into(),
            StageStatus::Failed(m) => format!("failed: {m}"),
        }
    }
}

/// Batch-level test metrics of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub model: String,
    pub accuracy: f64,
    pub f1: f64,
    pub batches: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gb1Grid {
    /// `asr[attacker][victim]`.
    pub asr: Vec<Vec<f64>>,
    /// Same pairs with nothing replayed: the attacker's own driving.
    pub control: Vec<Vec<f64>>,
}

fn off_diagonal_mean(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let sum: f64 = (0..n)
        .flat_map(|a| (0..n).filter(move |&v| v != a).map(move |v| (a, v)))
        .map(|(a, v)| m[a][v])
        .sum();
    sum / (n * (n - 1)) as f64
}

impl Gb1Grid {
    pub fn mean(&self) -> f64 {
        off_diagonal_mean(&self.asr)
    }

    pub fn control_mean(&self) -> f64 {
        off_diagonal_mean(&self.control)
    }
}

/// One generator trained against one target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRun {
    pub target: DriverId,
    pub attacker: DriverId,
    pub convergence_episode: Option<usize>,
    pub episodes_run: usize,
    pub queries: u64,
    /// Success rate of fresh latents on the attacker's test driving.
    pub asr: f64,
    #[serde(skip)]
    pub generator: Option<GeneratorTraining>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bb1Point {
    pub fraction: f64,
    /// Mean over the campaigns at this fraction.
    pub asr: f64,
    pub campaigns: usize,
}

/// Everything one run produced. Contains no wall-clock data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub seed: u64,
    pub drivers: Vec<String>,
    pub stages: Vec<(String, StageStatus)>,
    pub baseline: Vec<ModelScore>,
    pub training: Vec<(String, Vec<EpochRecord>)>,
    pub gb1: Option<Gb1Grid>,
    pub gb2: Vec<GeneratorRun>,
    pub bb1: Vec<Bb1Point>,
    /// BB1 with a single batch worth of sniffed driving.
    pub bb1_single: Option<f64>,
    pub bb2: Vec<GeneratorRun>,
    /// One bus-level campaign per scenario.
    pub campaigns: Vec<AttackOutcome>,
    pub steal_time: Vec<(Scenario, Timing)>,
}

impl ReportBundle {
    pub fn stage(&self, name: &str) -> Option<&StageStatus> {
        self.stages.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    /// Mean convergence episode over the BB2 targets that converged.
    pub fn bb2_mean_convergence(&self) -> Option<f64> {
        mean_convergence(&self.bb2)
    }

    pub fn ensemble_score(&self) -> Option<&ModelScore> {
        self.baseline.iter().find(|s| s.model == "ensemble")
    }
}

fn mean_convergence(runs: &[GeneratorRun]) -> Option<f64> {
    let eps: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.convergence_episode.map(|e| e as f64))
        .collect();
    (!eps.is_empty()).then(|| eps.iter().sum::<f64>() / eps.len() as f64)
}

/// A prepared dataset plus trained authenticator, ready for the stages.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub data: PreparedData,
    pub ensemble: Ensemble,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig, data: PreparedData, ensemble: Ensemble) -> Result<Self> {
        if ensemble.n_classes() != data.n_drivers()
            || ensemble.n_features() != data.features().len()
        {
            return Err(Error::BadEnsemble(format!(
                "ensemble is {}x{}, data has {} drivers and {} features",
                ensemble.n_classes(),
                ensemble.n_features(),
                data.n_drivers(),
                data.features().len()
            )));
        }
        Ok(Experiment {
            cfg,
            data,
            ensemble,
        })
    }

    pub fn n_drivers(&self) -> usize {
        self.data.n_drivers()
    }

    /// Attacker paired with each generator target.
    pub fn attacker_for(&self, target: DriverId) -> DriverId {
        (target + 1) % self.n_drivers()
    }

    pub fn targets(&self) -> Vec<DriverId> {
        if self.cfg.targets.is_empty() {
            (0..self.n_drivers()).collect()
        } else {
            self.cfg
                .targets
                .iter()
                .copied()
                .filter(|&t| t < self.n_drivers())
                .collect()
        }
    }

    /// The columns an attacker writes: the modifiable ones, or every column
    /// with safety enforcement off.
    pub fn mask(&self) -> Result<ModifiableMask> {
        let features = self.data.features();
        if self.cfg.enforce_safety {
            ModifiableMask::new(&self.data.taxonomy, features)
        } else {
            Ok(ModifiableMask {
                columns: (0..features.len()).collect(),
                n_features: features.len(),
            })
        }
    }

    pub fn drive_setup(&self) -> DriveSetup {
        DriveSetup {
            features: self.data.features().to_vec(),
            map: self.data.map.clone(),
            taxonomy: self.data.taxonomy.clone(),
            enforce_safety: self.cfg.enforce_safety,
            sniff: false,
        }
    }

    pub fn policy(&self) -> DecisionPolicy {
        DecisionPolicy::new(self.cfg.alarm_threshold, self.data.idle_rule())
    }

    pub fn baseline(&self) -> Result<Vec<ModelScore>> {
        let batches = make_batches(&self.data.test_windows, BATCH_SIZE);
        if batches.is_empty() {
            return Err(Error::EmptyAttackData("no test batches".into()));
        }
        let d = self.n_drivers();
        let mut out = Vec::with_capacity(4);
        let score = |name: &str, pairs: &[(usize, usize)]| -> Result<ModelScore> {
            let MetricReport { accuracy, f1 } = classification_report(pairs, d)?;
            Ok(ModelScore {
                model: name.into(),
                accuracy,
                f1,
                batches: pairs.len(),
            })
        };
        for m in self.ensemble.members() {
            let pairs = batches
                .iter()
                .map(|b| Ok((m.predict_mean(&b.to_tensor())?.label, b.driver)))
                .collect::<Result<Vec<_>>>()?;
            out.push(score(m.arch.kind.name(), &pairs)?);
        }
        let pairs = batches
            .iter()
            .map(|b| Ok((self.ensemble.predict_batch(b)?.label, b.driver)))
            .collect::<Result<Vec<_>>>()?;
        out.push(score("ensemble", &pairs)?);
        Ok(out)
    }

    /// Smart replay on test data for every (attacker, victim) pair, with the
    /// unmodified attacker driving as control.
    pub fn gb1_grid(&self) -> Result<Gb1Grid> {
        let d = self.n_drivers();
        let mask = self.mask()?;
        let none = ModifiableMask {
            columns: Vec::new(),
            n_features: mask.n_features,
        };
        let tests: Vec<Vec<Batch>> = (0..d).map(|i| self.data.test_batches(i)).collect();
        let mut asr = vec![vec![0.0; d]; d];
        let mut control = vec![vec![0.0; d]; d];
        for a in 0..d {
            for v in 0..d {
                let mut oracle = OracleHandle::new(&self.ensemble, OracleMode::FullProbs);
                asr[a][v] = run_gb1(&tests[a], &tests[v], v, &mut oracle, &mask)?.rate()?;
                control[a][v] = run_gb1(&tests[a], &tests[v], v, &mut oracle, &none)?.rate()?;
            }
        }
        Ok(Gb1Grid { asr, control })
    }

    fn generator_init(&self, label: &str) -> Result<GeneratorModel> {
        let n = self.mask()?.len();
        Ok(GeneratorModel::new(
            &self.cfg.generator_spec(),
            n,
            derive_seed(self.cfg.seed, &format!("{label}/init")),
        ))
    }

    /// Trains one generator against `target` with full ensemble access.
    pub fn gb2_target(&self, target: DriverId) -> Result<GeneratorRun> {
        let attacker = self.attacker_for(target);
        let label = format!("gb2/{target}");
        let mask = self.mask()?;
        let contexts = self.data.train_batches(attacker);
        let mut oracle = OracleHandle::new(&self.ensemble, OracleMode::FullProbs);
        let trained = train_generator(
            &self.generator_init(&label)?,
            &mut oracle,
            target,
            &self.cfg.rl_config(),
            &contexts,
            &mask,
            derive_seed(self.cfg.seed, &label),
        )?;
        self.finish_run(target, attacker, trained, &label)
    }

    /// Label-only training while the vehicle stands still: the contexts are
    /// the attacker's driving with speed held at zero, which the decision
    /// policy ignores.
    pub fn bb2_target(&self, target: DriverId) -> Result<GeneratorRun> {
        let attacker = self.attacker_for(target);
        let label = format!("bb2/{target}");
        let mask = self.mask()?;
        let mut contexts = self.data.train_batches(attacker);
        if let Some(rule) = self.data.idle_rule() {
            for b in &mut contexts {
                hold_idle(b, &rule);
            }
        }
        let mut rl = self.cfg.rl_config();
        rl.num_episodes = self.cfg.bb2_max_episodes;
        let mut oracle = OracleHandle::new(&self.ensemble, OracleMode::LabelOnly);
        let trained = train_generator(
            &self.generator_init(&label)?,
            &mut oracle,
            target,
            &rl,
            &contexts,
            &mask,
            derive_seed(self.cfg.seed, &label),
        )?;
        self.finish_run(target, attacker, trained, &label)
    }

    fn finish_run(
        &self,
        target: DriverId,
        attacker: DriverId,
        trained: GeneratorTraining,
        label: &str,
    ) -> Result<GeneratorRun> {
        let count = generator_asr(
            &trained.generator,
            &self.ensemble,
            target,
            &self.data.test_batches(attacker),
            &self.mask()?,
            self.cfg.eval_samples,
            derive_seed(self.cfg.seed, &format!("{label}/eval")),
        )?;
        Ok(GeneratorRun {
            target,
            attacker,
            convergence_episode: trained.convergence_episode,
            episodes_run: trained.episodes_run,
            queries: trained.queries,
            asr: count.rate()?,
            generator: Some(trained),
        })
    }

    /// BB1 campaign for one pair, sniffing the first `seconds` of the
    /// victim's test driving.
    pub fn bb1_campaign(
        &self,
        attacker: DriverId,
        victim: DriverId,
        seconds: usize,
    ) -> Result<AttackOutcome> {
        let rows = self.data.test_rows(victim);
        let sniffed = &rows[..seconds.min(rows.len())];
        let setup = self.drive_setup();
        let mask = self.mask()?;
        let attacker_batches = self.data.test_batches(attacker);
        deploy_attack(
            Scenario::Bb1,
            &AttackInputs {
                ensemble: &self.ensemble,
                drive: &setup,
                mask: &mask,
                policy: self.policy(),
                attacker,
                victim,
                attacker_batches: &attacker_batches,
                victim_batches: None,
                sniff_rows: Some(sniffed),
                generator: None,
                seed: derive_seed(self.cfg.seed, &format!("bb1/{attacker}/{victim}/{seconds}")),
            },
        )
    }

    /// Mean BB1 ASR per sniffed fraction of the victims' test driving, over
    /// the target list.
    pub fn bb1_sweep(&self) -> Result<Vec<Bb1Point>> {
        let mut out = Vec::with_capacity(self.cfg.bb1_fractions.len());
        for &fraction in &self.cfg.bb1_fractions {
            let mut sum = 0.0;
            let targets = self.targets();
            for &v in &targets {
                let n = self.data.test_rows(v).len();
                let seconds = (fraction * n as f64).round() as usize;
                sum += self.bb1_campaign(self.attacker_for(v), v, seconds)?.asr;
            }
            out.push(Bb1Point {
                fraction,
                asr: sum / targets.len() as f64,
                campaigns: targets.len(),
            });
        }
        Ok(out)
    }

    /// Mean BB1 ASR when only one batch worth of driving was sniffed.
    pub fn bb1_single_batch(&self) -> Result<f64> {
        let span = (BATCH_SIZE - 1) * WINDOW_STEP + WINDOW_SIZE;
        let targets = self.targets();
        let mut sum = 0.0;
        for &v in &targets {
            sum += self.bb1_campaign(self.attacker_for(v), v, span)?.asr;
        }
        Ok(sum / targets.len() as f64)
    }

    /// Deploys one scenario on the bus against `victim`, using the
    /// attacker's test driving.
    pub fn campaign(
        &self,
        scenario: Scenario,
        victim: DriverId,
        generator: Option<&GeneratorTraining>,
    ) -> Result<AttackOutcome> {
        let attacker = self.attacker_for(victim);
        if scenario == Scenario::Bb1 {
            let span = (BATCH_SIZE - 1) * WINDOW_STEP + WINDOW_SIZE;
            return self.bb1_campaign(attacker, victim, span);
        }
        let setup = self.drive_setup();
        let mask = self.mask()?;
        let attacker_batches = self.data.test_batches(attacker);
        let victim_batches = self.data.test_batches(victim);
        deploy_attack(
            scenario,
            &AttackInputs {
                ensemble: &self.ensemble,
                drive: &setup,
                mask: &mask,
                policy: self.policy(),
                attacker,
                victim,
                attacker_batches: &attacker_batches,
                victim_batches: Some(&victim_batches),
                sniff_rows: None,
                generator,
                seed: derive_seed(
                    self.cfg.seed,
                    &format!("deploy/{}/{victim}", scenario.as_str()),
                ),
            },
        )
    }
}

/// Pins the speed column at its zero level.
fn hold_idle(b: &mut Batch, rule: &IdleRule) {
    for w in &mut b.windows {
        let nf = w.n_features;
        for t in 0..w.size {
            w.values[t * nf + rule.speed_feature] = rule.zero_level;
        }
    }
}

/// Steal-time rows for the scenarios that ran.
fn steal_time(bundle: &ReportBundle, scenarios: &[Scenario]) -> Vec<(Scenario, Timing)> {
    let mut out = Vec::new();
    for &s in scenarios {
        let row = match s {
            Scenario::Bb1 => match bundle.campaigns.iter().find(|c| c.scenario == s) {
                Some(c) => c.timing,
                None => continue,
            },
            Scenario::Bb2 => match bundle.bb2_mean_convergence() {
                Some(ep) => {
                    let training_min = ep * DECISION_SECONDS as f64 / 60.0;
                    Timing {
                        setup_min: SETUP_MINUTES,
                        data_min: 0.0,
                        training_min,
                        total_min: SETUP_MINUTES + training_min,
                    }
                }
                None => continue,
            },
            _ => Timing::for_scenario(s, 0, 0),
        };
        out.push((s, row));
    }
    out
}

fn record<T>(bundle: &mut ReportBundle, stage: &str, res: Result<T>) -> Option<T> {
    match res {
        Ok(v) => {
            bundle.stages.push((stage.into(), StageStatus::Ok));
            Some(v)
        }
        Err(e) => {
            warn!("stage {stage} failed: {e}");
            bundle
                .stages
                .push((stage.into(), StageStatus::Failed(e.to_string())));
            None
        }
    }
}

/// Runs baseline evaluation and every configured scenario on an already
/// trained authenticator. A failing stage is recorded and the rest still
/// run.
pub fn run_stages(exp: &Experiment) -> ReportBundle {
    let cfg = &exp.cfg;
    let scenarios = cfg.scenario_list();
    let mut bundle = ReportBundle {
        seed: cfg.seed,
        drivers: exp.data.train.driver_labels.clone(),
        training: exp
            .ensemble
            .members()
            .iter()
            .map(|m| (m.arch.kind.name().to_string(), m.history.clone()))
            .collect(),
        ..Default::default()
    };
    let res = exp.baseline();
    bundle.baseline = record(&mut bundle, "baseline", res).unwrap_or_default();

    let wants = |s: Scenario| scenarios.contains(&s);
    if wants(Scenario::Gb1) {
        let res = exp.gb1_grid();
        bundle.gb1 = record(&mut bundle, "gb1", res);
    } else {
        bundle.stages.push(("gb1".into(), StageStatus::Skipped));
    }
    let need_gb2 = wants(Scenario::Gb2) || wants(Scenario::Wb);
    if need_gb2 {
        let res = exp
            .targets()
            .into_iter()
            .map(|t| exp.gb2_target(t))
            .collect();
        bundle.gb2 = record(&mut bundle, "gb2", res).unwrap_or_default();
    } else {
        bundle.stages.push(("gb2".into(), StageStatus::Skipped));
    }
    if wants(Scenario::Bb1) {
        let res = exp
            .bb1_sweep()
            .and_then(|sweep| Ok((sweep, exp.bb1_single_batch()?)));
        if let Some((sweep, single)) = record(&mut bundle, "bb1", res) {
            bundle.bb1 = sweep;
            bundle.bb1_single = Some(single);
        }
    } else {
        bundle.stages.push(("bb1".into(), StageStatus::Skipped));
    }
    if wants(Scenario::Bb2) {
        let res = exp
            .targets()
            .into_iter()
            .map(|t| exp.bb2_target(t))
            .collect();
        bundle.bb2 = record(&mut bundle, "bb2", res).unwrap_or_default();
    } else {
        bundle.stages.push(("bb2".into(), StageStatus::Skipped));
    }

    let victim = exp.targets().first().copied().unwrap_or(0);
    let mut campaigns = Vec::new();
    let mut failures = Vec::new();
    for &s in &scenarios {
        let runs = match s {
            Scenario::Wb | Scenario::Gb2 => &bundle.gb2,
            Scenario::Bb2 => &bundle.bb2,
            _ => &Vec::new(),
        };
        let generator = runs
            .iter()
            .find(|r| r.target == victim)
            .and_then(|r| r.generator.as_ref());
        match exp.campaign(s, victim, generator) {
            Ok(c) => campaigns.push(c),
            Err(e) => failures.push(format!("{s}: {e}")),
        }
    }
    bundle.campaigns = campaigns;
    let status = if failures.is_empty() {
        StageStatus::Ok
    } else {
        StageStatus::Failed(failures.join("; "))
    };
    bundle.stages.push(("campaigns".into(), status));
    bundle.steal_time = steal_time(&bundle, &scenarios);
    bundle
}

/// Prepares data, trains the authenticator and runs every stage.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ReportBundle> {
    let data = prepare_data(cfg)?;
    let ensemble = match train_ensemble(cfg, &data) {
        Ok(e) => e,
        Err(e) => {
            let mut bundle = ReportBundle {
                seed: cfg.seed,
                drivers: data.train.driver_labels.clone(),
                ..Default::default()
            };
            bundle
                .stages
                .push(("train".into(), StageStatus::Failed(e.to_string())));
            return Ok(bundle);
        }
    };
    let exp = Experiment::new(cfg.clone(), data, ensemble)?;
    let mut bundle = run_stages(&exp);
    bundle.stages.insert(0, ("train".into(), StageStatus::Ok));
    Ok(bundle)
}
