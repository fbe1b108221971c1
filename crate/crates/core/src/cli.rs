//! The `bhygnn` command line.
//!
//! Every command resolves a [`RunConfig`] from defaults, an optional
//! `--config` file, `--seed` and repeated `--set key=value` overrides (last
//! wins), then writes its outputs under one run directory together with the
//! resolved `config.txt`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::datagen::generate_chsbm;
use crate::error::{Error, Result};
use crate::hypergraph::{HomophilyReport, Hypergraph};
use crate::io::{
    load_dataset, load_dataset_dir, read_features, save_dataset, write_features, write_text,
    DatasetManifest,
};
use crate::pipeline::{embed, probe, run_experiment, run_seed, write_trace, Model, SeedResult};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const NUMERIC: i32 = 3;
}

#[derive(Debug, Parser)]
#[command(
    name = "bhygnn",
    version,
    about = "Hypergraph representation learning on primal and dual views"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic benchmark (`--seed` sets `data_seed`).
    Generate(Common),
    /// Print homophily statistics of a labeled dataset.
    Stats(Common),
    /// Train one model and export its checkpoint, trace and embeddings.
    Train(Common),
    /// Embed a dataset with the checkpoint given by the `checkpoint` key.
    Embed(Common),
    /// Train a probe on the embeddings given by the `embeddings` key.
    Probe(Common),
    /// Train and evaluate over `repeats` consecutive seeds.
    RunExperiment(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Dataset directory or manifest; overrides the `data` key.
    pub dataset: Option<PathBuf>,
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory (default `runs/<unix-time>-seed<N>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Config override, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: Error,
}

fn usage(error: Error) -> Failure {
    Failure {
        code: exit::USAGE,
        error,
    }
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match error {
            Error::Config(_) | Error::Infeasible(_) => exit::USAGE,
            Error::Divergence { .. } => exit::NUMERIC,
            _ => exit::DATA,
        };
        Failure { code, error }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Errors are printed to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => exit::OK,
        Err(f) => {
            eprintln!("error: {}", f.error);
            f.code
        }
    }
}

pub fn run(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Generate(c) => generate(&c),
        Command::Stats(c) => stats(&c),
        Command::Train(c) => train(&c),
        Command::Embed(c) => embed_cmd(&c),
        Command::Probe(c) => probe_cmd(&c),
        Command::RunExperiment(c) => experiment(&c),
    }
}

impl Common {
    fn resolve(&self, seed_key: &str) -> std::result::Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).map_err(usage)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.set(seed_key, &s.to_string()).map_err(usage)?;
        }
        for o in &self.overrides {
            cfg.apply_override(o).map_err(usage)?;
        }
        if let Some(d) = &self.dataset {
            cfg.data = Some(d.clone());
        }
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }

    fn run_dir(&self, seed: u64) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| {
            let ts = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs());
            PathBuf::from("runs").join(format!("{ts}-seed{seed}"))
        });
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }
}

fn start(c: &Common, seed_key: &str) -> std::result::Result<(RunConfig, PathBuf), Failure> {
    let cfg = c.resolve(seed_key)?;
    let seed = if seed_key == "data_seed" {
        cfg.synthetic.seed
    } else {
        cfg.train.seed
    };
    let dir = c.run_dir(seed)?;
    let text = cfg.to_text();
    log::info!("resolved config:\n{text}");
    write_text(&dir.join("config.txt"), &text)?;
    Ok((cfg, dir))
}

/// Loads `cfg.data` (a directory or a manifest file) or generates the
/// synthetic benchmark.
pub fn load_data(cfg: &RunConfig) -> Result<Hypergraph> {
    match &cfg.data {
        Some(p) if p.is_dir() => load_dataset_dir(p),
        Some(p) => load_dataset(&DatasetManifest::read(p)?),
        None => generate_chsbm(&cfg.synthetic),
    }
}

fn generate(c: &Common) -> std::result::Result<(), Failure> {
    let (cfg, dir) = start(c, "data_seed")?;
    let h = generate_chsbm(&cfg.synthetic)?;
    save_dataset(&h, &dir)?;
    cfg.synthetic
        .write_provenance(&dir.join("provenance.txt"))?;
    println!(
        "wrote {} nodes, {} edges to {}",
        h.num_nodes(),
        h.num_edges(),
        dir.display()
    );
    Ok(())
}

fn format_stats(h: &Hypergraph, r: &HomophilyReport) -> String {
    let bins = 10;
    let hist = |v: &[f64]| {
        HomophilyReport::histogram(v, bins)
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(" ")
    };
    format!(
        "nodes {}\nedges {}\nincidences {}\nmean h(v) {:.4}\nmean h(e) {:.4}\nh(v) histogram ({bins} bins over [0,1]): {}\nh(e) histogram ({bins} bins over [0,1]): {}\n",
        h.num_nodes(),
        h.num_edges(),
        h.num_incidences(),
        r.mean_node,
        r.mean_edge,
        hist(&r.per_node),
        hist(&r.per_edge),
    )
}

fn stats(c: &Common) -> std::result::Result<(), Failure> {
    let cfg = c.resolve("seed")?;
    let h = load_data(&cfg)?;
    let report = h.homophily_with(cfg.homophily)?;
    let text = format_stats(&h, &report);
    print!("{text}");
    if let Some(out) = &c.out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_text(&out.join("stats.txt"), &text)?;
    }
    Ok(())
}

fn save_seed(dir: &Path, h: &Hypergraph, r: &SeedResult) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_trace(&dir.join("trace.csv"), &r.run.trace)?;
    r.run.model.save(&dir.join("model.bhg"))?;
    write_features(&dir.join("embeddings.txt"), &embed(&r.run.model, h)?)?;
    write_text(
        &dir.join("report.txt"),
        &format!(
            "seed={}\nbest_epoch={}\ntrain={}\nval={}\ntest={}\n",
            r.seed, r.report.best_epoch, r.report.train, r.report.val, r.report.test
        ),
    )
}

fn train(c: &Common) -> std::result::Result<(), Failure> {
    let (cfg, dir) = start(c, "seed")?;
    let h = load_data(&cfg)?;
    let t = Instant::now();
    let r = run_seed(&h, &cfg.train, &cfg.probe)?;
    save_seed(&dir, &h, &r)?;
    println!(
        "seed {} best epoch {}: train {:.4} val {:.4} test {:.4} ({:.1}s) -> {}",
        r.seed,
        r.report.best_epoch,
        r.report.train,
        r.report.val,
        r.report.test,
        t.elapsed().as_secs_f64(),
        dir.display()
    );
    Ok(())
}

fn embed_cmd(c: &Common) -> std::result::Result<(), Failure> {
    let (cfg, dir) = start(c, "seed")?;
    let ckpt = cfg
        .checkpoint
        .clone()
        .ok_or_else(|| usage(Error::Config("embed needs the `checkpoint` key".into())))?;
    let h = load_data(&cfg)?;
    let mut model = Model::for_hypergraph(&h, &cfg.train)?;
    model.load(&ckpt)?;
    let out = cfg
        .embeddings
        .clone()
        .unwrap_or_else(|| dir.join("embeddings.txt"));
    let z = embed(&model, &h)?;
    write_features(&out, &z)?;
    println!(
        "wrote {}x{} embeddings to {}",
        z.rows(),
        z.cols(),
        out.display()
    );
    Ok(())
}

fn probe_cmd(c: &Common) -> std::result::Result<(), Failure> {
    let (cfg, dir) = start(c, "seed")?;
    let path = cfg
        .embeddings
        .clone()
        .ok_or_else(|| usage(Error::Config("probe needs the `embeddings` key".into())))?;
    let h = load_data(&cfg)?;
    let labels = h.labels().ok_or(Error::LabelsRequired)?;
    let z = read_features(&path)?;
    let splits = cfg.train.splits(h.num_nodes())?;
    let r = probe(&z, labels, &splits, &cfg.probe)?;
    let text = format!(
        "train={}\nval={}\ntest={}\nbest_epoch={}\n",
        r.train, r.val, r.test, r.best_epoch
    );
    write_text(&dir.join("probe.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn experiment(c: &Common) -> std::result::Result<(), Failure> {
    let (cfg, dir) = start(c, "seed")?;
    let h = load_data(&cfg)?;
    let seeds = cfg.seeds();
    let t = Instant::now();
    let report = run_experiment(&h, &cfg.train, &cfg.probe, &seeds, |r| {
        log::info!("seed {} done: test {:.4}", r.seed, r.report.test);
        save_seed(&dir.join(format!("seed-{}", r.seed)), &h, r)
    });
    let text = report.to_text();
    write_text(&dir.join("report.csv"), &text)?;
    print!("{text}");
    println!(
        "# {} seeds in {:.1}s -> {}",
        seeds.len(),
        t.elapsed().as_secs_f64(),
        dir.display()
    );
    match report.failures.first() {
        None => Ok(()),
        Some((seed, msg)) => Err(Failure {
            code: if report.diverged {
                exit::NUMERIC
            } else {
                exit::DATA
            },
            error: Error::Precondition(format!(
                "{} of {} seeds failed; first was seed {seed}: {msg}",
                report.failures.len(),
                seeds.len()
            )),
        }),
    }
}
