use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{ArgGroup, Args, ValueEnum};
use terrapos::channel::{compute_pdp, label_link, observe_link, LinkState, LosProbabilityModel, LABEL_THRESHOLD};
use terrapos::classifier::{
    generate_dataset, read_checkpoint, read_dataset_csv, train, write_checkpoint, write_dataset_csv, Classifier,
    DatasetConfig, Split, TrainConfig,
};
use terrapos::eval::{ate, rpe, Report, TrajectoryRecord};
use terrapos::experiments::{
    initial_covariance, run_classifier_study, run_exclusion_study, run_fusion_study, run_umi_ranging,
    simulate_drive, ClassifierStudyConfig, ExclusionConfig, FusionStudyConfig, Manifest, UmiRangingConfig,
};
use terrapos::fusion::sim::truth_record;
use terrapos::fusion::{read_imu_csv, read_measurement_csv, run_filter, write_imu_csv, write_measurement_csv};
use terrapos::fusion::{FilterConfig, NavState, PositionMeasurement};
use terrapos::positioning::{
    localize_epoch, write_fix_row, HeightPrior, LinkFilter, LinkObservation, LocalizerConfig, SolveMode,
    SolverConfig, FIX_LOG_HEADER,
};
use terrapos::ranging::{default_schedule, range_cascade, range_symbols, DIAGNOSTIC_HEADER};
use terrapos::rng::{stream_id, substream};
use terrapos::scenario::{coverage_grid, ObstacleMap, Region, ScenarioConfig, TrpSite};
use terrapos::signal::{generate_reference_frame, SubcarrierFrame};
use terrapos::Vec3;

use crate::{Cli, Command, Format, Global, Preset};

/// Bad invocation that clap cannot express (exit status 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_floats(s: &str, n: usize) -> std::result::Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated numbers, got {}", v.len()));
    }
    Ok(v)
}

fn parse_vec3(s: &str) -> std::result::Result<Vec3, String> {
    parse_floats(s, 3).map(|v| Vec3::new(v[0], v[1], v[2]))
}

fn parse_region(s: &str) -> std::result::Result<Region, String> {
    let v = parse_floats(s, 4)?;
    Region::new([v[0], v[1]], [v[2], v[3]]).map_err(|e| e.to_string())
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateArg {
    Los,
    Nlos,
}

impl From<StateArg> for LinkState {
    fn from(s: StateArg) -> Self {
        match s {
            StateArg::Los => LinkState::Los,
            StateArg::Nlos => LinkState::Nlos,
        }
    }
}

struct Ctx<'a> {
    g: &'a Global,
    scenario: ScenarioConfig,
    seed: u64,
}

impl Ctx<'_> {
    fn say(&self, msg: impl fmt::Display) {
        if self.g.verbose {
            eprintln!("{msg}");
        }
    }

    fn out_dir(&self, what: &str) -> Result<&Path> {
        self.g
            .out
            .as_deref()
            .ok_or_else(|| usage(format!("{what} writes several files; pass --out <dir>")))
    }

    /// Primary table: into `--out/<name>` when given, else stdout.
    fn emit(&self, name: &str, body: &str) -> Result<()> {
        match &self.g.out {
            Some(dir) => write_file(dir, name, body),
            None => {
                print!("{body}");
                Ok(())
            }
        }
    }

    /// Secondary output: a file under `--out`, or stderr with `--verbose`.
    fn side(&self, name: &str, body: &str) -> Result<()> {
        match &self.g.out {
            Some(dir) => write_file(dir, name, body),
            None => {
                self.say(body.trim_end());
                Ok(())
            }
        }
    }

    fn render(&self, r: &Report) -> String {
        match self.g.format {
            Format::Kv => r.to_kv(),
            Format::Csv => r.to_csv(),
        }
    }
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    Ok(BufReader::new(fs::File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn load_model(path: &Path) -> Result<Classifier> {
    let mut f = open(path)?;
    read_checkpoint(&mut f).with_context(|| format!("reading model {}", path.display()))
}

pub fn run(cli: &Cli) -> Result<()> {
    let scenario = match &cli.global.config {
        Some(p) => ScenarioConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => match cli.global.preset {
            Preset::Umi => ScenarioConfig::umi(),
            Preset::UmiCompact => ScenarioConfig::umi_compact(),
        },
    };
    let seed = cli.global.seed.unwrap_or(scenario.rng_seed);
    let ctx = Ctx { g: &cli.global, scenario, seed };
    match &cli.command {
        Command::Coverage(a) => coverage(&ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Range(a) => range(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Classify(a) => classify(&ctx, a),
        Command::Localize(a) => localize(&ctx, a),
        Command::Fuse(a) => fuse(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Study(a) => study(&ctx, a),
    }
}

#[derive(Args, Debug)]
pub struct CoverageArgs {
    /// Obstacle boxes, one `xmin ymin zmin xmax ymax zmax` per line.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Cell edge, meters.
    #[arg(long, default_value_t = 5.0)]
    cell: f64,
    /// `xmin,ymin,xmax,ymax`; defaults to the TRP bounding box plus --margin.
    #[arg(long, value_parser = parse_region)]
    region: Option<Region>,
    #[arg(long, default_value_t = 50.0)]
    margin: f64,
}

fn trp_box(trps: &[TrpSite], margin: f64) -> Result<Region> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for t in trps {
        for a in 0..2 {
            lo[a] = lo[a].min(t.position[a] - margin);
            hi[a] = hi[a].max(t.position[a] + margin);
        }
    }
    Ok(Region::new(lo, hi)?)
}

fn coverage(ctx: &Ctx, a: &CoverageArgs) -> Result<()> {
    let map = match &a.map {
        Some(p) => ObstacleMap::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ObstacleMap::default(),
    };
    let region = match a.region {
        Some(r) => r,
        None => trp_box(&ctx.scenario.trp_list, a.margin)?,
    };
    let grid = coverage_grid(&map, &ctx.scenario.trp_list, a.cell, &region)?;
    let mut csv = String::from("ix,iy,x,y,los_count\n");
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let c = grid.cell_center(ix, iy);
            csv.push_str(&format!("{ix},{iy},{:?},{:?},{}\n", c.x, c.y, grid.count(ix, iy)));
        }
    }
    ctx.emit("coverage.csv", &csv)?;
    let mut r = Report::default();
    r.add("cells", grid.nx * grid.ny);
    for k in 1..=ctx.scenario.trp_list.len().min(4) {
        r.num(format!("fraction_los_ge_{k}"), grid.fraction_at_least(k));
    }
    r.num("positioning_fraction", grid.positioning_fraction());
    ctx.side("coverage_summary.txt", &ctx.render(&r))
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimKind {
    /// One received frame per TRP link.
    Links,
    /// Ground truth, IMU, VO and CPP streams along the synthetic loop.
    Drive,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = SimKind::Links)]
    kind: SimKind,
    /// UE position `x,y,z`; defaults to the scenario's ue_init.
    #[arg(long, value_parser = parse_vec3)]
    ue: Option<Vec3>,
    /// Force every link into this state instead of drawing it.
    #[arg(long, value_enum)]
    state: Option<StateArg>,
    /// Drive length, seconds.
    #[arg(long, default_value_t = 120.0)]
    duration: f64,
    /// Obstacle map gating CPP fixes on a drive; the built-in map otherwise.
    #[arg(long)]
    map: Option<PathBuf>,
}

fn simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<()> {
    let dir = ctx.out_dir("simulate")?;
    let s = &ctx.scenario;
    match a.kind {
        SimKind::Links => {
            let reference = generate_reference_frame(s, ctx.seed);
            let ue = a.ue.unwrap_or(s.ue_init);
            let mut links = String::from("trp_id,state,label,distance_m,tau_true_ns,tau_est_ns,path_loss_db\n");
            for (j, trp) in s.trp_list.iter().enumerate() {
                let mut rng = substream(ctx.seed, stream_id(1, j as u64));
                let link = observe_link(
                    &reference,
                    trp.position,
                    ue,
                    &s.noise,
                    s.carrier_frequency,
                    a.state.map(Into::into),
                    1,
                    &mut rng,
                )?;
                let frame = &link.symbols[0];
                let label = label_link(&link.channel, &compute_pdp(frame), LABEL_THRESHOLD)?;
                let state = if link.channel.is_los { "LOS" } else { "NLOS" };
                links.push_str(&format!(
                    "{},{state},{},{:?},{:?},{:?},{:?}\n",
                    trp.id,
                    label.state.as_str(),
                    link.channel.distance(),
                    label.tau_true * 1e9,
                    label.tau_est * 1e9,
                    link.channel.path_loss_db
                ));
                let mut buf = Vec::new();
                frame.write_csv(&mut buf)?;
                write_file(dir, &format!("frame_{}.csv", trp.id), &String::from_utf8(buf)?)?;
            }
            write_file(dir, "links.csv", &links)
        }
        SimKind::Drive => {
            let mut cfg = FusionStudyConfig { duration: a.duration, ..Default::default() };
            if let Some(p) = &a.map {
                cfg.obstacles = ObstacleMap::load(p)?;
            }
            let drive = simulate_drive(s, &cfg, ctx.seed)?;
            let mut buf = Vec::new();
            truth_record(&drive.truth)?.write_csv(&mut buf)?;
            write_file(dir, "truth.csv", &String::from_utf8(std::mem::take(&mut buf))?)?;
            write_imu_csv(&drive.imu, &mut buf)?;
            write_file(dir, "imu.csv", &String::from_utf8(std::mem::take(&mut buf))?)?;
            write_measurement_csv(&drive.vo, &mut buf)?;
            write_file(dir, "vo.csv", &String::from_utf8(std::mem::take(&mut buf))?)?;
            write_measurement_csv(&drive.cpp, &mut buf)?;
            write_file(dir, "cpp.csv", &String::from_utf8(std::mem::take(&mut buf))?)?;
            let mut fixes = format!("{FIX_LOG_HEADER}\n").into_bytes();
            for (t, f) in &drive.cpp_fixes {
                write_fix_row(&mut fixes, *t, f)?;
            }
            ctx.say(format!("{} of {} CPP epochs valid", drive.cpp.len(), drive.cpp_fixes.len()));
            write_file(dir, "cpp_fixes.csv", &String::from_utf8(fixes)?)
        }
    }
}

#[derive(Args, Debug)]
pub struct RangeArgs {
    /// Range a frame CSV (index,re,im,allocated) instead of simulating links.
    #[arg(long)]
    frame: Option<PathBuf>,
    #[arg(long, value_parser = parse_vec3)]
    ue: Option<Vec3>,
    #[arg(long, value_enum)]
    state: Option<StateArg>,
    /// Symbols per link; the reported range is their median.
    #[arg(long, default_value_t = 1)]
    symbols: usize,
    /// Spacing cascade, e.g. `6,102,1638`; derived from the grid otherwise.
    #[arg(long, value_delimiter = ',')]
    schedule: Vec<usize>,
    /// Longest distance the coarse spacing must resolve, meters.
    #[arg(long, default_value_t = 500.0)]
    max_range: f64,
}

fn diagnostics(frame: &SubcarrierFrame, schedule: &[usize], max_range: f64, id: &str) -> Result<String> {
    let mut buf = Vec::new();
    range_cascade(frame, schedule, max_range)?.with_trp(id).write_csv(&mut buf)?;
    Ok(String::from_utf8(buf)?)
}

fn range(ctx: &Ctx, a: &RangeArgs) -> Result<()> {
    let s = &ctx.scenario;
    let schedule = if a.schedule.is_empty() {
        default_schedule(s.num_subcarriers, s.comb_size)
    } else {
        a.schedule.clone()
    };
    let mut diag = format!("{DIAGNOSTIC_HEADER}\n");
    let mut table = String::from("trp_id,state,true_m,d_m,error_m\n");
    if let Some(path) = &a.frame {
        let frame = SubcarrierFrame::read_csv(open(path)?, s.subcarrier_spacing, s.comb_size, s.comb_offset)?;
        diag.push_str(&diagnostics(&frame, &schedule, a.max_range, "frame")?);
        let d = range_cascade(&frame, &schedule, a.max_range)?.distance();
        table = format!("trp_id,d_m\nframe,{d:?}\n");
    } else {
        let reference = generate_reference_frame(s, ctx.seed);
        let ue = a.ue.unwrap_or(s.ue_init);
        for (j, trp) in s.trp_list.iter().enumerate() {
            let mut rng = substream(ctx.seed, stream_id(1, j as u64));
            let link = observe_link(
                &reference,
                trp.position,
                ue,
                &s.noise,
                s.carrier_frequency,
                a.state.map(Into::into),
                a.symbols,
                &mut rng,
            )?;
            diag.push_str(&diagnostics(&link.symbols[0], &schedule, a.max_range, &trp.id)?);
            let d = range_symbols(&link.symbols, &schedule, a.max_range)?;
            let truth = link.channel.distance();
            let state = if link.channel.is_los { "LOS" } else { "NLOS" };
            table.push_str(&format!("{},{state},{truth:?},{d:?},{:?}\n", trp.id, d - truth));
        }
    }
    ctx.emit("ranges.csv", &table)?;
    ctx.side("range_diagnostics.csv", &diag)
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Samples to synthesize.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Train on this dataset CSV instead of synthesizing one.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Also write the synthesized dataset to `--out/dataset.csv`.
    #[arg(long)]
    save_dataset: bool,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Checkpoint path; `--out/model.tpnn` by default.
    #[arg(long)]
    model: Option<PathBuf>,
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let model_path = match (&a.model, &ctx.g.out) {
        (Some(p), _) => p.clone(),
        (None, Some(d)) => d.join("model.tpnn"),
        (None, None) => return Err(usage("train needs --out <dir> or --model <path>")),
    };
    let data = match &a.dataset {
        Some(p) => read_dataset_csv(open(p)?)?,
        None => {
            ctx.say(format!("synthesizing {} samples", a.samples));
            generate_dataset(&ctx.scenario, &DatasetConfig::around(&ctx.scenario, a.samples, ctx.seed))?
        }
    };
    if a.save_dataset {
        let dir = ctx.out_dir("train --save-dataset")?;
        let mut buf = Vec::new();
        write_dataset_csv(&data, &mut buf)?;
        write_file(dir, "dataset.csv", &String::from_utf8(buf)?)?;
    }
    let mut cfg = TrainConfig { seed: ctx.seed, ..TrainConfig::default() };
    if let Some(e) = a.max_epochs {
        cfg.max_epochs = e;
    }
    let outcome = train(&data, Split::default(), &cfg)?;
    let m = outcome.classifier.evaluate(&outcome.test)?;
    if let Some(parent) = model_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_checkpoint(&outcome.classifier, &mut fs::File::create(&model_path)?)?;
    let mut log = Vec::new();
    outcome.log.write_csv(&mut log)?;
    ctx.side("training_log.csv", &String::from_utf8(log)?)?;
    let mut r = Report::default();
    r.add("samples", data.len())
        .add("epochs", outcome.log.epochs.len())
        .add("best_epoch", outcome.log.best_epoch)
        .num("accuracy", m.accuracy)
        .num("roc_auc", m.roc_auc)
        .num("los_recall", m.los_recall())
        .num("nlos_recall", m.nlos_recall())
        .add("model", model_path.display());
    ctx.side("train_summary.txt", &ctx.render(&r))
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("input").required(true).args(["dataset", "frame"])))]
pub struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Labeled dataset CSV; adds accuracy metrics.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Received frame CSVs (index,re,im,allocated); repeatable.
    #[arg(long)]
    frame: Vec<PathBuf>,
}

fn classify(ctx: &Ctx, a: &ClassifyArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let s = &ctx.scenario;
    let mut table = String::new();
    if let Some(p) = &a.dataset {
        let data = read_dataset_csv(open(p)?)?;
        table.push_str("index,p_nlos,predicted,label\n");
        for (i, x) in data.iter().enumerate() {
            let (_, p) = model.predict_proba(&x.sequence)?;
            let pred = if p >= model.threshold { "NLOS" } else { "LOS" };
            table.push_str(&format!("{i},{p:?},{pred},{}\n", x.label.as_str()));
        }
        let m = model.evaluate(&data)?;
        let mut r = Report::default();
        r.add("samples", data.len())
            .num("accuracy", m.accuracy)
            .num("roc_auc", m.roc_auc)
            .num("los_recall", m.los_recall())
            .num("nlos_recall", m.nlos_recall());
        ctx.emit("classified.csv", &table)?;
        return ctx.side("classify_summary.txt", &ctx.render(&r));
    }
    table.push_str("frame,p_nlos,predicted\n");
    for path in &a.frame {
        let frame = SubcarrierFrame::read_csv(open(path)?, s.subcarrier_spacing, s.comb_size, s.comb_offset)?;
        let (_, p) = model.predict_proba(&terrapos::classifier::features(&frame))?;
        let pred = if p >= model.threshold { "NLOS" } else { "LOS" };
        table.push_str(&format!("{},{p:?},{pred}\n", path.display()));
    }
    ctx.emit("classified.csv", &table)
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterArg {
    /// Use every link.
    None,
    /// Drop links whose simulated state is NLOS.
    Oracle,
    /// Drop links the classifier (--model) flags as NLOS.
    Model,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeArg {
    #[value(name = "2d")]
    TwoD,
    #[value(name = "3d")]
    ThreeD,
}

#[derive(Args, Debug)]
pub struct LocalizeArgs {
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    /// UE position `x,y,z`; defaults to the scenario's ue_init.
    #[arg(long, value_parser = parse_vec3)]
    ue: Option<Vec3>,
    /// Force every link into this state.
    #[arg(long, value_enum, conflicts_with = "los_prob")]
    state: Option<StateArg>,
    /// Distance-independent LOS probability instead of the scenario model.
    #[arg(long)]
    los_prob: Option<f64>,
    /// Restrict to these TRP ids (comma-separated).
    #[arg(long, value_delimiter = ',')]
    trps: Vec<String>,
    #[arg(long, value_enum, default_value_t = FilterArg::None)]
    filter: FilterArg,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    symbols: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::ThreeD)]
    mode: ModeArg,
    /// RMS residual above which a fix is invalid, meters.
    #[arg(long, default_value_t = 1.0)]
    gate: f64,
    #[arg(long, default_value_t = 500.0)]
    max_range: f64,
}

fn localize(ctx: &Ctx, a: &LocalizeArgs) -> Result<()> {
    let s = &ctx.scenario;
    let trps: Vec<TrpSite> = if a.trps.is_empty() {
        s.trp_list.clone()
    } else {
        a.trps
            .iter()
            .map(|id| s.trp(id).cloned().ok_or_else(|| usage(format!("unknown TRP {id:?}"))))
            .collect::<Result<_>>()?
    };
    let model = match (a.filter, &a.model) {
        (FilterArg::Model, None) => return Err(usage("--filter model needs --model <path>")),
        (_, Some(p)) => Some(load_model(p)?),
        _ => None,
    };
    let filter = match (a.filter, &model) {
        (FilterArg::None, _) => LinkFilter::None,
        (FilterArg::Oracle, _) => LinkFilter::Oracle,
        (FilterArg::Model, Some(m)) => LinkFilter::Model(m),
        (FilterArg::Model, None) => unreachable!("checked above"),
    };
    let mut noise = s.noise.clone();
    if let Some(p) = a.los_prob {
        noise.los_probability_model = LosProbabilityModel::Constant { probability: p };
    }
    let (mode, height_prior) = match a.mode {
        ModeArg::TwoD => (SolveMode::TwoD, HeightPrior::Fixed(a.ue.unwrap_or(s.ue_init).z)),
        ModeArg::ThreeD => (SolveMode::ThreeD, HeightPrior::Bounded { lo: 0.0, hi: 8.0 }),
    };
    let cfg = LocalizerConfig {
        solver: SolverConfig { mode, height_prior, residual_gate: a.gate, ..SolverConfig::default() },
        schedule: default_schedule(s.num_subcarriers, s.comb_size),
        max_range: a.max_range,
    };
    let reference = generate_reference_frame(s, ctx.seed);
    let ue = a.ue.unwrap_or(s.ue_init);
    let mut log = format!("{FIX_LOG_HEADER}\n").into_bytes();
    for e in 0..a.epochs {
        let links = trps
            .iter()
            .enumerate()
            .map(|(j, trp)| {
                let mut rng = substream(ctx.seed, stream_id(e as u64 + 1, j as u64));
                let link = observe_link(
                    &reference,
                    trp.position,
                    ue,
                    &noise,
                    s.carrier_frequency,
                    a.state.map(Into::into),
                    a.symbols,
                    &mut rng,
                )?;
                Ok(LinkObservation { trp_id: trp.id.clone(), symbols: link.symbols, truth_los: Some(link.channel.is_los) })
            })
            .collect::<Result<Vec<_>>>()?;
        let fix = localize_epoch(&links, &trps, filter, &cfg, None);
        if !fix.valid {
            eprintln!("epoch {e}: invalid fix: {}", fix.reason.as_deref().unwrap_or("unknown"));
        } else {
            ctx.say(format!("epoch {e}: error {:.4} m", (fix.position - ue).norm()));
        }
        write_fix_row(&mut log, e as f64, &fix)?;
    }
    ctx.emit("fixes.csv", &String::from_utf8(log)?)
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    /// IMU CSV (t,fx,fy,fz,wx,wy,wz).
    #[arg(long)]
    imu: PathBuf,
    /// Position-measurement CSVs; repeatable, merged by time.
    #[arg(long, required = true)]
    meas: Vec<PathBuf>,
    /// Ground-truth trajectory: initializes the filter and is scored against.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// RPE interval, samples of the output trajectory.
    #[arg(long, default_value_t = 10)]
    delta: usize,
    /// Accelerometer noise std assumed by the filter, m/s².
    #[arg(long)]
    sigma_acc: Option<f64>,
    /// Gyroscope noise std assumed by the filter, rad/s.
    #[arg(long)]
    sigma_gyr: Option<f64>,
}

fn fuse(ctx: &Ctx, a: &FuseArgs) -> Result<()> {
    let imu = read_imu_csv(open(&a.imu)?)?;
    let mut meas: Vec<PositionMeasurement> = Vec::new();
    for p in &a.meas {
        meas.extend(read_measurement_csv(open(p)?)?);
    }
    meas.sort_by(|x, y| x.t.total_cmp(&y.t));
    let mut fc = FilterConfig::default();
    if let Some(v) = a.sigma_acc {
        fc.sigma_acc = v;
    }
    if let Some(v) = a.sigma_gyr {
        fc.sigma_gyr = v;
    }
    let gt = match &a.gt {
        Some(p) => Some(TrajectoryRecord::read_csv(open(p)?)?),
        None => None,
    };
    // Without ground truth the filter starts at the first measurement, at
    // rest and level, with a loose covariance.
    let (init, cov) = match &gt {
        Some(g) if g.len() >= 2 => {
            let (t0, p0) = g.samples()[0];
            let (t1, p1) = g.samples()[1];
            let v = (p1.position - p0.position) / (t1 - t0);
            (NavState { p: p0.position, v, q: p0.orientation }, initial_covariance([0.1, 0.1, 0.01]))
        }
        _ => {
            let first = meas.first().ok_or_else(|| anyhow::anyhow!("no position measurements"))?;
            (
                NavState { p: first.y, v: Vec3::zeros(), q: Default::default() },
                initial_covariance([1.0, 1.0, 0.1]),
            )
        }
    };
    let est = run_filter(&imu, &meas, init, cov, &fc)?;
    let mut buf = Vec::new();
    est.write_csv(&mut buf)?;
    ctx.emit("trajectory.csv", &String::from_utf8(buf)?)?;
    if let Some(g) = &gt {
        let r = evaluation_report(&est, g, a.delta)?;
        ctx.side("fuse_report.txt", &ctx.render(&r))?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Estimated trajectory CSV (t,px,py,pz,qw,qx,qy,qz).
    #[arg(long)]
    est: PathBuf,
    /// Ground-truth trajectory CSV, same format.
    #[arg(long)]
    gt: PathBuf,
    /// RPE interval, associated samples.
    #[arg(long, default_value_t = 1)]
    delta: usize,
}

fn evaluation_report(est: &TrajectoryRecord, gt: &TrajectoryRecord, delta: usize) -> Result<Report> {
    let mut r = Report::default();
    r.num("ate_m", ate(est, gt)?);
    match rpe(est, gt, delta) {
        Ok(e) => {
            r.num("rpe_trans_m", e.trans).num("rpe_rot_deg", e.rot_deg);
        }
        Err(e) => eprintln!("rpe skipped: {e}"),
    }
    Ok(r)
}

fn evaluate(ctx: &Ctx, a: &EvaluateArgs) -> Result<()> {
    let est = TrajectoryRecord::read_csv(open(&a.est)?).with_context(|| format!("reading {}", a.est.display()))?;
    let gt = TrajectoryRecord::read_csv(open(&a.gt)?).with_context(|| format!("reading {}", a.gt.display()))?;
    let r = evaluation_report(&est, &gt, a.delta)?;
    ctx.emit("evaluation.txt", &ctx.render(&r))
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum StudyName {
    /// Monte-Carlo ranging of the scenario UE: histograms and peaks.
    Ranging,
    /// Multilateration with LOS-only, mixed and classifier-screened links.
    Exclusion,
    /// Dataset synthesis, training and held-out evaluation.
    Classifier,
    /// VO, IMU+VO and CPP+IMU+VO on a drive with NLOS gaps.
    Fusion,
}

#[derive(Args, Debug)]
pub struct StudyArgs {
    #[arg(value_enum)]
    name: StudyName,
    /// Iterations (ranging), epochs (exclusion) or samples (classifier).
    #[arg(long)]
    iterations: Option<usize>,
    /// Classifier checkpoint for the exclusion study's screened block.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Distance-independent LOS probability (ranging, exclusion).
    #[arg(long)]
    los_prob: Option<f64>,
    /// Force every ranging link into this state.
    #[arg(long, value_enum)]
    state: Option<StateArg>,
    /// Obstacle map for the fusion drive.
    #[arg(long)]
    map: Option<PathBuf>,
}

fn study(ctx: &Ctx, a: &StudyArgs) -> Result<()> {
    let base = ctx.out_dir("study")?;
    let mut s = ctx.scenario.clone();
    let seed = ctx.seed;
    let (dir, manifest, summary) = match a.name {
        StudyName::Ranging => {
            let mut cfg = UmiRangingConfig { force_state: a.state.map(Into::into), ..Default::default() };
            if let Some(n) = a.iterations {
                cfg.iterations = n;
            }
            if let Some(p) = a.los_prob {
                s.noise.los_probability_model = LosProbabilityModel::Constant { probability: p };
            }
            let dir = base.join("ranging");
            let mut m = Manifest::new("ranging", &s, &cfg, seed);
            let rep = run_umi_ranging(&s, &cfg, seed)?;
            rep.write_outputs(&mut m, &dir)?;
            (dir, m, rep.summary())
        }
        StudyName::Exclusion => {
            let mut cfg = ExclusionConfig::default();
            if let Some(n) = a.iterations {
                cfg.epochs = n;
            }
            if a.los_prob.is_some() {
                cfg.los_probability = a.los_prob;
            }
            let model = a.model.as_deref().map(load_model).transpose()?;
            let dir = base.join("exclusion");
            let mut m = Manifest::new("exclusion", &s, &(&cfg, a.model.as_ref()), seed);
            let rep = run_exclusion_study(&s, &cfg, model.as_ref(), seed)?;
            rep.write_outputs(&mut m, &dir)?;
            let mut r = Report::default();
            for b in rep.blocks() {
                let valid = b.fixes.iter().filter(|f| f.valid).count();
                r.add(format!("{}_valid", b.name), valid);
                if let Some(st) = &b.stats {
                    r.num(format!("{}_p90_2d_m", b.name), st.p2d(90.0).unwrap_or(f64::NAN));
                    r.num(format!("{}_p90_3d_m", b.name), st.p3d(90.0).unwrap_or(f64::NAN));
                }
            }
            (dir, m, r)
        }
        StudyName::Classifier => {
            let mut cfg = ClassifierStudyConfig::default();
            if let Some(n) = a.iterations {
                cfg.samples = n;
            }
            let dir = base.join("classifier");
            let mut m = Manifest::new("classifier", &s, &cfg, seed);
            let rep = run_classifier_study(&s, &cfg, seed)?;
            rep.write_outputs(&mut m, &dir)?;
            (dir, m, rep.summary())
        }
        StudyName::Fusion => {
            let mut cfg = FusionStudyConfig::default();
            if let Some(p) = &a.map {
                cfg.obstacles = ObstacleMap::load(p)?;
            }
            let dir = base.join("fusion");
            let mut m = Manifest::new("fusion", &s, &cfg, seed);
            let rep = run_fusion_study(&s, &cfg, seed)?;
            rep.write_outputs(&mut m, &dir)?;
            let mut r = Report::default();
            for row in &rep.rows {
                r.num(format!("{}_ate_m", row.name), row.ate)
                    .num(format!("{}_rpe_trans_m", row.name), row.rpe_trans)
                    .num(format!("{}_rpe_rot_deg", row.name), row.rpe_rot_deg);
            }
            r.num("cpp_valid_fraction", rep.cpp_valid_fraction);
            (dir, m, r)
        }
    };
    manifest.save(&dir)?;
    ctx.say(format!("wrote {} files to {}", manifest.outputs.len() + 1, dir.display()));
    print!("{}", ctx.render(&summary));
    Ok(())
}
