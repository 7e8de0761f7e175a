use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use epi_core::analysis::{reporting_indices, REPORTING_POINTS};
use epi_core::chain::{h_chains, killed_chains, martingale_diagnostic, survival_representation_check, RenewalSampler, Survival};
use epi_core::config::{load_config, parse_config, Scenario, ScenarioConfig};
use epi_core::courses::sample_course;
use epi_core::io::{fmt_f64, write_csv, write_json};
use epi_core::rng;
use epi_core::sim::{compartment_series, simulate, SimOptions};
use epi_core::solver::{compartment_values, solve_delay};
use epi_core::tree::{estimate_b, sample_geodesic, TreeParams};
use epi_core::validation::Suite;

#[derive(Parser, Debug)]
#[command(name = "epi", version, about = "Age-of-infection epidemic model toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file (TOML); the built-in SIR reference scenario if omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    replicas: Option<usize>,
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Override any config key, e.g. `--set numerics.dt=0.005`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the limit equations: t, b, B, S and compartment curves.
    Solve,
    /// Forward individual-based simulation.
    Simulate {
        /// Also write the contact event log.
        #[arg(long)]
        events: bool,
    },
    /// Poisson-tree estimate of B(t).
    Tree {
        /// Also write every sample's geodesic time.
        #[arg(long)]
        geodesics: bool,
    },
    /// Backward chains started at time `t`.
    Chain {
        #[arg(long, value_enum)]
        mode: ChainMode,
        #[arg(long, default_value_t = 5.0)]
        t: f64,
        #[arg(long, default_value_t = 10)]
        k_max: usize,
    },
    /// Run the acceptance suite.
    Validate,
    /// Sample disease courses.
    CoursesDump,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ChainMode {
    Renewal,
    Hchain,
    Martingale,
    Survival,
}

fn resolve(common: &Common) -> Result<(ScenarioConfig, PathBuf)> {
    let mut sets = Vec::new();
    if let Some(s) = common.seed {
        sets.push(format!("seed={s}"));
    }
    if let Some(o) = &common.out {
        sets.push(format!("output.dir={:?}", o.to_string_lossy()));
    }
    if let Some(r) = common.replicas {
        sets.push(format!("simulation.replicas={r}"));
    }
    if let Some(s) = common.samples {
        sets.push(format!("simulation.samples={s}"));
    }
    if let Some(h) = common.horizon {
        sets.push(format!("numerics.horizon={h:?}"));
    }
    sets.extend(common.set.iter().cloned());
    Ok(match &common.config {
        Some(p) => {
            let cfg = load_config(p, &sets).with_context(|| format!("loading {}", p.display()))?;
            (cfg, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (parse_config(&ScenarioConfig::reference().emit(), &sets)?, PathBuf::from(".")),
    })
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("EPI_THREADS") {
        let n: usize = v.parse().with_context(|| format!("EPI_THREADS={v}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let (cfg, base) = resolve(&cli.common)?;
    let scn = Scenario::from_config(&cfg, &base)?;
    let out = cfg.output.dir.clone();
    let digest = scn.digest.as_str();
    match cli.cmd {
        Command::Solve => {
            let sol = solve_delay(&scn.tau, &scn.c, &scn.ic, scn.horizon, scn.dt)?;
            let set = scn.model.compartments();
            let names: Vec<String> =
                if cfg.output.compartments.is_empty() { set.names().to_vec() } else { cfg.output.compartments.clone() };
            let ks: Vec<usize> = (0..=sol.steps()).collect();
            let curves = names
                .iter()
                .map(|n| compartment_values(&sol, &scn.model, set.index(n)?, &ks))
                .collect::<epi_core::Result<Vec<_>>>()?;
            let mut header = vec!["t", "b", "B", "S"];
            header.extend(names.iter().map(String::as_str));
            let rows = ks.iter().map(|&k| {
                let mut row = vec![fmt_f64(sol.time(k)), fmt_f64(sol.b[k]), fmt_f64(sol.big_b[k]), fmt_f64(sol.s[k])];
                row.extend(curves.iter().map(|c| fmt_f64(c[k])));
                row
            });
            write_csv(&out.join("solve.csv"), digest, &header, rows)?;
        }
        Command::Simulate { events } => {
            let set = scn.model.compartments();
            let times: Vec<f64> =
                reporting_indices(scn.horizon, scn.dt, REPORTING_POINTS).iter().map(|&k| k as f64 * scn.dt).collect();
            let opts = SimOptions { record_events: events, ..Default::default() };
            let mut people = Vec::new();
            let mut series = Vec::new();
            let mut log = Vec::new();
            for r in 0..scn.replicas as u64 {
                let o = simulate(&scn.model, scn.population, &scn.c, &scn.ic, scn.horizon, scn.seed, r, &opts)?;
                for (x, p) in o.individuals.iter().enumerate() {
                    people.push(vec![
                        r.to_string(),
                        x.to_string(),
                        fmt_f64(p.z),
                        fmt_f64(p.sigma),
                        p.infector.map_or(String::new(), |i| i.to_string()),
                    ]);
                }
                let fr = (0..set.len()).map(|i| compartment_series(&o, i, &times)).collect::<epi_core::Result<Vec<_>>>()?;
                for (j, t) in times.iter().enumerate() {
                    let mut row = vec![r.to_string(), fmt_f64(*t)];
                    row.extend(fr.iter().map(|f| fmt_f64(f[j])));
                    series.push(row);
                }
                for e in &o.events {
                    log.push(vec![r.to_string(), fmt_f64(e.time), e.source.to_string(), e.target.to_string(), (e.accepted as u8).to_string()]);
                }
            }
            write_csv(&out.join("individuals.csv"), digest, &["replica", "id", "z", "sigma", "infector"], people)?;
            let mut header = vec!["replica", "t"];
            header.extend(set.names().iter().map(String::as_str));
            write_csv(&out.join("series.csv"), digest, &header, series)?;
            if events {
                write_csv(&out.join("events.csv"), digest, &["replica", "time", "source", "target", "accepted"], log)?;
            }
        }
        Command::Tree { geodesics } => {
            let p = TreeParams::new(&scn.tau, &scn.ic, &scn.c, scn.horizon)?.with_node_cap(scn.node_cap);
            let ts: Vec<f64> = (1..=scn.horizon.floor() as usize).map(|t| t as f64).collect();
            let est = estimate_b(&p, scn.ic.s0(), &ts, scn.samples, scn.seed)?;
            let rows = (0..ts.len()).map(|j| vec![fmt_f64(est.t[j]), fmt_f64(est.b_hat[j]), fmt_f64(est.se[j])]);
            write_csv(&out.join("tree_b.csv"), digest, &["t", "estimate", "se"], rows)?;
            if geodesics {
                let rows = (0..scn.samples as u64)
                    .map(|i| {
                        let g = sample_geodesic(&p, scn.seed, i)?;
                        Ok(vec![i.to_string(), g.sigma.map_or("inf".into(), fmt_f64), g.times.len().saturating_sub(1).to_string()])
                    })
                    .collect::<epi_core::Result<Vec<_>>>()?;
                write_csv(&out.join("geodesics.csv"), digest, &["sample", "sigma", "generations"], rows)?;
            }
        }
        Command::Chain { mode, t, k_max } => {
            let sol = solve_delay(&scn.tau, &scn.c, &scn.ic, scn.horizon.max(t), scn.dt)?;
            let Some(alpha) = scn.alpha else { bail!("no Malthusian parameter in the configured bracket") };
            let renewal = RenewalSampler::new(&scn.tau, alpha)?;
            match mode {
                ChainMode::Renewal => {
                    let chains = killed_chains(t, &renewal, Survival::Limit(&sol), scn.samples, scn.seed)?;
                    let rows = chains.iter().enumerate().flat_map(|(i, c)| {
                        let alive = c.survived() as u8;
                        c.times.iter().enumerate().map(move |(k, x)| vec![i.to_string(), k.to_string(), fmt_f64(*x), alive.to_string()])
                    });
                    write_csv(&out.join("renewal_paths.csv"), digest, &["chain", "k", "time", "survived"], rows)?;
                }
                ChainMode::Hchain => {
                    let chains = h_chains(&sol, scn.samples, scn.seed, |_| t)?;
                    let rows = chains.iter().enumerate().flat_map(|(i, c)| {
                        c.times.iter().enumerate().map(move |(k, x)| vec![i.to_string(), k.to_string(), fmt_f64(*x)])
                    });
                    write_csv(&out.join("hchain_paths.csv"), digest, &["chain", "k", "time"], rows)?;
                }
                ChainMode::Martingale => {
                    let rep = martingale_diagnostic(t, &sol, &renewal, Survival::Limit(&sol), scn.samples, k_max, scn.seed)?;
                    let rows = (0..rep.means.len()).map(|k| vec![k.to_string(), fmt_f64(rep.means[k]), fmt_f64(rep.se[k]), fmt_f64(rep.target)]);
                    write_csv(&out.join("martingale.csv"), digest, &["k", "mean", "se", "target"], rows)?;
                }
                ChainMode::Survival => {
                    let rep = survival_representation_check(t, &sol, &renewal, scn.samples, scn.seed)?;
                    eprintln!("{}", rep.normalization_note());
                    let row = vec![
                        fmt_f64(rep.t),
                        fmt_f64(rep.b_solver),
                        fmt_f64(rep.survival),
                        fmt_f64(rep.se),
                        fmt_f64(rep.scaled_prediction),
                        fmt_f64(rep.literal_prediction),
                        fmt_f64(rep.tolerance),
                    ];
                    write_csv(
                        &out.join("survival.csv"),
                        digest,
                        &["t", "b", "survival", "se", "scaled_prediction", "unit_prediction", "tolerance"],
                        [row],
                    )?;
                }
            }
        }
        Command::Validate => {
            let suite = Suite::new(scn.clone());
            let mut reports = Vec::new();
            for id in 1..=12 {
                let r = suite.run(id);
                println!("{}", r.summary_line());
                for n in &r.notes {
                    println!("    {n}");
                }
                reports.push(r);
            }
            let failed = reports.iter().filter(|r| !r.pass).count();
            write_json(&out.join("validation.json"), &serde_json::json!({ "config_digest": digest, "criteria": reports }))?;
            println!("{} of {} criteria passed", reports.len() - failed, reports.len());
            if failed > 0 {
                std::process::exit(1);
            }
        }
        Command::CoursesDump => {
            let names = scn.model.compartments().names().to_vec();
            let mut rows = Vec::new();
            for i in 0..scn.samples as u64 {
                let mut r = rng::stream(scn.seed, rng::tag::COURSES, &[i]);
                let c = sample_course(&scn.model, scn.a_max, &mut r);
                for (age, comp) in &c.path {
                    rows.push(vec![i.to_string(), "enter".into(), fmt_f64(*age), names[*comp].clone()]);
                }
                for a in &c.atoms {
                    rows.push(vec![i.to_string(), "contact".into(), fmt_f64(*a), names[c.compartment_at(*a)].clone()]);
                }
            }
            write_csv(&out.join("courses.csv"), digest, &["course", "kind", "age", "compartment"], rows)?;
        }
    }
    Ok(())
}
