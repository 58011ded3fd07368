//! Command-line harness: spectra, simulations, experiments, the property
//! suite, bound reports and geometry export, all driven by a TOML config.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use idla_core::config::ConfigFile;
use idla_core::error::Error as CoreError;
use idla_core::experiments as exp;
use idla_core::graphs::BaseGraph;
use idla_core::observables::BoundReport;
use idla_core::snapshot;
use idla_core::spectral::{default_a_n, mixing_time, rescaled_rate, vertical_rate};

#[derive(Parser)]
#[command(name = "idla", version, about = "Internal DLA on cylinder graphs")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads; 0 picks the core count.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues and derived rates of the configured graph, as CSV.
    Spectrum,
    /// Grow one cluster and write its snapshot.
    Simulate,
    /// Run a named Monte Carlo experiment.
    Experiment {
        /// gff_clt | max_fluct | apriori_tail | hit_uniformity | abelian | hzeta
        name: String,
    },
    /// Run the structural property suite and write its ledger.
    Validate,
    /// Evaluate the corridor and tail bounds for given (T, nu, C).
    Bounds {
        #[arg(long)]
        t: u64,
        #[arg(long, default_value_t = 1.0)]
        nu: f64,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        /// Heights for the a-priori tail bound.
        #[arg(long, value_delimiter = ',')]
        heights: Vec<f64>,
    },
    /// Export per-site geometry of a snapshot for rendering.
    ExportGeometry {
        snapshot: PathBuf,
    },
}

#[derive(Serialize)]
struct RunManifest {
    tool_version: String,
    config_path: Option<String>,
    config_sha256: Option<String>,
    config_echo: Option<String>,
    started_unix: u64,
    finished_unix: u64,
    outputs: Vec<ManifestEntry>,
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    message: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (kind, code) = classify(&err);
            let record = ErrorRecord {
                error: kind,
                message: err.to_string(),
            };
            eprintln!("{}", serde_json::to_string(&record).unwrap());
            ExitCode::from(code)
        }
    }
}

fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    if let Some(core) = err.downcast_ref::<CoreError>() {
        return match core {
            CoreError::Config(_) | CoreError::Parse(_) => ("parse", 2),
            CoreError::Io(_) => ("io", 3),
            CoreError::InvalidParameter(_)
            | CoreError::NotVertexTransitive(_)
            | CoreError::Validation(_) => ("invalid-parameter", 4),
            CoreError::NumericFailure(_) => ("numeric-failure", 5),
            CoreError::BudgetExceeded(_) => ("budget-exceeded", 6),
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return ("io", 3);
    }
    ("error", 1)
}

struct OutputWriter {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl OutputWriter {
    fn new(dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(OutputWriter {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, content: &str) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, content)?;
        self.entries.push(ManifestEntry {
            path: name.to_string(),
            sha256: snapshot::content_hash(content),
        });
        Ok(path)
    }

    fn finalize(self, config: Option<(&Path, &str)>, started: u64) -> anyhow::Result<()> {
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_path: config.map(|(p, _)| p.display().to_string()),
            config_sha256: config.map(|(_, text)| snapshot::content_hash(text)),
            config_echo: config.map(|(_, text)| text.to_string()),
            started_unix: started,
            finished_unix: now_unix(),
            outputs: self.entries,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        write_atomic(&self.dir.join("manifest.json"), &text)?;
        Ok(())
    }
}

fn write_atomic(path: &Path, content: &str) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn load_config(cli: &Cli) -> anyhow::Result<(PathBuf, String, ConfigFile)> {
    let path = cli
        .config
        .clone()
        .ok_or_else(|| CoreError::Config("--config is required for this command".into()))?;
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CoreError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut cfg = ConfigFile::parse(&text)?;
    if let Some(seed) = cli.seed {
        cfg.rng.master_seed = seed;
    }
    Ok((path, text, cfg))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .ok();
    }
    let started = now_unix();
    match &cli.command {
        Command::Spectrum => {
            let (path, text, cfg) = load_config(&cli)?;
            let g = cfg.build_graph()?;
            let csv = spectrum_csv(&g)?;
            let mut writer = OutputWriter::new(&cli.out)?;
            writer.write("spectrum.csv", &csv)?;
            writer.finalize(Some((&path, &text)), started)?;
            println!("{csv}");
        }
        Command::Simulate => {
            let (path, text, cfg) = load_config(&cli)?;
            let g = cfg.build_graph()?;
            let spectrum = exp::spectrum_for(&g)?;
            let t = cfg
                .experiment
                .as_ref()
                .and_then(|e| e.t)
                .ok_or_else(|| CoreError::Config("experiment.t required for simulate".into()))?;
            let (cluster, _) = idla_core::idla::run(
                &g,
                &spectrum,
                t,
                cfg.rng.master_seed,
                0,
                cfg.walk_config(),
                false,
            )?;
            let snap = snapshot::write_snapshot(&cluster, &g);
            let mut writer = OutputWriter::new(&cli.out)?;
            let out_path = writer.write("cluster.snapshot", &snap)?;
            writer.finalize(Some((&path, &text)), started)?;
            println!(
                "wrote {} ({} sites above level 0)",
                out_path.display(),
                cluster.above_zero_count()
            );
        }
        Command::Experiment { name } => {
            let (path, text, cfg) = load_config(&cli)?;
            let mut writer = OutputWriter::new(&cli.out)?;
            run_experiment(name, &cfg, &mut writer)?;
            writer.finalize(Some((&path, &text)), started)?;
        }
        Command::Validate => {
            let (path, text, cfg) = load_config(&cli)?;
            let out = exp::run_abelian_suite(&cfg.abelian_config()?)?;
            let ledger = serde_json::to_string_pretty(&out)?;
            let mut writer = OutputWriter::new(&cli.out)?;
            writer.write("property_suite.json", &ledger)?;
            writer.finalize(Some((&path, &text)), started)?;
            println!("{ledger}");
            if !out.all_passed() {
                anyhow::bail!(CoreError::Validation("property suite failed".into()));
            }
        }
        Command::Bounds { t, nu, c, heights } => {
            let (path, text, cfg) = load_config(&cli)?;
            let g = cfg.build_graph()?;
            let spectrum = exp::spectrum_for(&g)?;
            let tau = mixing_time(&g, &spectrum)?;
            let report = BoundReport::compute(g.n(), *t, *nu, *c, tau, heights)?;
            let json = serde_json::to_string_pretty(&report)?;
            let mut writer = OutputWriter::new(&cli.out)?;
            writer.write("bounds.json", &json)?;
            writer.finalize(Some((&path, &text)), started)?;
            println!("{json}");
        }
        Command::ExportGeometry { snapshot: snap_path } => {
            let text = std::fs::read_to_string(snap_path).map_err(CoreError::Io)?;
            let (header, cluster) = snapshot::parse_snapshot(&text)?;
            let g = snapshot::graph_from_header(&header.graph)?;
            let json = geometry_json(&cluster, &g)?;
            let mut writer = OutputWriter::new(&cli.out)?;
            writer.write("geometry.json", &json)?;
            writer.finalize(None, started)?;
            println!("{json}");
        }
    }
    Ok(())
}

fn run_experiment(name: &str, cfg: &ConfigFile, writer: &mut OutputWriter) -> anyhow::Result<()> {
    match name {
        "gff_clt" => {
            let out = exp::run_gff_clt(&cfg.gff_config()?)?;
            writer.write("replicates.csv", &exp::gff_rows_to_csv(&out.rows))?;
            writer.write(
                "summary.json",
                &serde_json::to_string_pretty(&out.summary)?,
            )?;
            println!("{}", serde_json::to_string_pretty(&out.summary)?);
        }
        "max_fluct" => {
            let out = exp::run_max_fluct(&cfg.max_fluct_config()?)?;
            for report in &out.per_size {
                writer.write(
                    &format!("fluct_n{}.csv", report.n),
                    &exp::fluct_rows_to_csv(report),
                )?;
            }
            #[derive(Serialize)]
            struct FluctSummary<'a> {
                sizes: Vec<usize>,
                q99: Vec<f64>,
                sqrt_model_r2: f64,
                linear_model_r2: f64,
                chosen_c: f64,
                corridor_coverage: f64,
                delta_over_height: &'a [f64],
            }
            let summary = FluctSummary {
                sizes: out.per_size.iter().map(|s| s.n).collect(),
                q99: out.per_size.iter().map(|s| s.q99).collect(),
                sqrt_model_r2: out.sqrt_model_r2,
                linear_model_r2: out.linear_model_r2,
                chosen_c: out.chosen_c,
                corridor_coverage: out.corridor_coverage,
                delta_over_height: &out.delta_over_height,
            };
            let json = serde_json::to_string_pretty(&summary)?;
            writer.write("summary.json", &json)?;
            println!("{json}");
        }
        "apriori_tail" => {
            let config = cfg.apriori_config()?;
            let out = exp::run_apriori_tail(&config)?;
            writer.write("tail.csv", &exp::apriori_rows_to_csv(&out, config.t))?;
            let rows = serde_json::to_string_pretty(
                &out.rows
                    .iter()
                    .map(|r| (r.h, r.empirical, r.bound, r.violation))
                    .collect::<Vec<_>>(),
            )?;
            writer.write("summary.json", &rows)?;
            println!("{rows}");
        }
        "hit_uniformity" => {
            let out = exp::run_hit_uniformity(&cfg.hit_config()?)?;
            let json = serde_json::to_string_pretty(&out)?;
            writer.write("summary.json", &json)?;
            println!("{json}");
        }
        "abelian" => {
            let out = exp::run_abelian_suite(&cfg.abelian_config()?)?;
            let json = serde_json::to_string_pretty(&out)?;
            writer.write("summary.json", &json)?;
            println!("{json}");
            if !out.all_passed() {
                anyhow::bail!(CoreError::Validation("abelian suite failed".into()));
            }
        }
        "hzeta" => {
            let out = exp::run_hzeta_validation(&cfg.hzeta_config()?)?;
            let json = serde_json::to_string_pretty(&out)?;
            writer.write("summary.json", &json)?;
            println!("{json}");
        }
        other => {
            anyhow::bail!(CoreError::Config(format!("unknown experiment `{other}`")));
        }
    }
    Ok(())
}

fn spectrum_csv(g: &BaseGraph) -> anyhow::Result<String> {
    let spectrum = exp::spectrum_for(g)?;
    let a_n = default_a_n(g, &spectrum);
    let mut out = String::from("k,lambda_k,nu_k,q_k,q_k_rescaled,gamma_k_estimate\n");
    for k in 1..=spectrum.n() {
        let lam = spectrum.eigenvalue(k).clamp(0.0, 1.0);
        let q = vertical_rate(lam).unwrap_or(f64::NAN);
        let q_resc = rescaled_rate(lam, a_n).unwrap_or(f64::NAN);
        let gamma = a_n * (2.0 * (1.0 - lam)).sqrt();
        out.push_str(&format!("{k},{lam},{},{q},{q_resc},{gamma}\n", 1.0 - lam));
    }
    Ok(out)
}

fn geometry_json(cluster: &idla_core::idla::Cluster, g: &BaseGraph) -> anyhow::Result<String> {
    #[derive(Serialize)]
    struct Site {
        x: usize,
        y: i64,
        embedding: Vec<f64>,
    }
    #[derive(Serialize)]
    struct Geometry {
        graph: String,
        n: usize,
        t: u64,
        sites: Vec<Site>,
    }
    let geometry = Geometry {
        graph: g.family().header_token(),
        n: g.n(),
        t: cluster.particles(),
        sites: cluster
            .sites_sorted()
            .into_iter()
            .map(|(x, y)| Site {
                x,
                y,
                embedding: g.embedding(x),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&geometry)?)
}
