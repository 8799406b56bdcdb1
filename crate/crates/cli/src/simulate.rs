use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;

use wate_core::exec::Execution;
use wate_core::simstudy::report::{
    write_by_m_csv, write_coverage_csv, write_gain_by_vobs_csv, write_metrics_csv, write_records_csv,
};
use wate_core::simstudy::report::markdown_tables;
use wate_core::simstudy::{run_scenario, DgpParams, GridFile, ReferenceSummary, ScenarioReport};

use crate::args::{Format, SimulateArgs};
use crate::output::{read_text, user_error, write_json};
use crate::truth::JsonTruth;

fn load_grid(path: &Path) -> anyhow::Result<GridFile> {
    let text = read_text(path)?;
    let grid = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| user_error(format!("{}: {e}", path.display())))?
    } else {
        GridFile::parse_toml(&text).with_context(|| path.display().to_string())?
    };
    Ok(grid)
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("cannot write {}", path.display()))?,
    ))
}

fn simulate(args: &SimulateArgs, exec: Execution) -> anyhow::Result<()> {
    let grid = load_grid(&args.config)?;
    let configs = grid.expand()?;
    if configs.is_empty() {
        return Err(user_error(format!("{}: no scenarios", args.config.display())));
    }
    for c in &configs {
        c.validate()?;
    }
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;

    let params = DgpParams::default();
    let mut references: BTreeMap<(usize, u64), ReferenceSummary> = BTreeMap::new();
    let mut runs = Vec::with_capacity(configs.len());
    let mut reports = Vec::with_capacity(configs.len());
    for cfg in &configs {
        let key = (cfg.reference_n, cfg.reference_seed);
        if !references.contains_key(&key) {
            log::info!("reference sample n={} seed={}", key.0, key.1);
            references.insert(key, ReferenceSummary::compute(&params, key.0, key.1, exec)?);
        }
        let reference = &references[&key];
        log::info!("scenario {}", cfg.label());
        let run = run_scenario(cfg, &params, reference, exec).with_context(|| cfg.label())?;
        reports.push(ScenarioReport::new(&run, &reference.truths)?);
        runs.push(run);
    }

    let mut w = create(&args.out, "metrics.csv")?;
    write_metrics_csv(&mut w, &reports)?;
    w.flush()?;
    let mut w = create(&args.out, "records.csv")?;
    write_records_csv(&mut w, &runs)?;
    w.flush()?;
    let mut w = create(&args.out, "plot_bias_by_m.csv")?;
    write_by_m_csv(&mut w, &reports)?;
    w.flush()?;
    let mut w = create(&args.out, "plot_coverage.csv")?;
    write_coverage_csv(&mut w, &reports)?;
    w.flush()?;
    let mut w = create(&args.out, "plot_gain_by_vobs.csv")?;
    write_gain_by_vobs_csv(&mut w, &reports)?;
    w.flush()?;
    let tables = markdown_tables(&reports);
    fs::write(args.out.join("tables.md"), &tables)?;
    let truths: Vec<JsonTruth> = references.values().map(JsonTruth::new).collect();
    write_json(Some(&args.out.join("truths.json")), &truths)?;

    match args.format {
        Some(Format::Md) => print!("{tables}"),
        Some(Format::Csv) => write_metrics_csv(std::io::stdout().lock(), &reports)?,
        Some(Format::Json) | None => {}
    }
    Ok(())
}

pub fn run(args: &SimulateArgs) -> anyhow::Result<()> {
    match args.threads {
        Some(0) => Err(user_error("--threads must be at least 1")),
        Some(1) => simulate(args, Execution::Sequential),
        #[cfg(feature = "parallel")]
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build()?;
            pool.install(|| simulate(args, Execution::Parallel))
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => {
            log::warn!("built without the parallel feature; running on one thread");
            simulate(args, Execution::Sequential)
        }
        None => simulate(args, Execution::default()),
    }
}
