//! The estimate / simulate / synth commands.

use crate::config::Config;
use pathchoice::alc::{constraints_to_json, ShareVarIndex};
use pathchoice::clogit::shares_from_beta;
use pathchoice::domain::{BetaVector, NetworkModel, PathSet, ShareTable, StationIdx, TimeGrid};
use pathchoice::error::{Error, Result};
use pathchoice::estimator::{
    evaluate_shares, observed_flows_from_afc, read_afc_csv, run_estimation, write_afc_csv,
    EstimationInputs, EstimationResult, ExtraConstraints,
};
use pathchoice::sim::{LoadingOutputs, PlatformIndicators, Timetable};
use pathchoice::synth::{build_toy_network, generate_synthetic_afc, ToyInstance};
use serde::Deserialize;
use std::path::Path;

fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.display().to_string(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value).unwrap())
}

struct LoadedInputs {
    network: NetworkModel,
    paths: PathSet,
    timetable: Timetable,
    grid: TimeGrid,
}

fn load_inputs(config: &Config, base: &Path) -> Result<LoadedInputs> {
    let grid = config.grid()?;
    let network = NetworkModel::load(&config.required_file(base, "network")?)?;
    let timetable = Timetable::load(&config.required_file(base, "timetable")?, &network)?;
    let paths = PathSet::load(
        &config.required_file(base, "paths")?,
        &network,
        &timetable,
        config.estimation.distance_mode,
        config.estimation.gamma,
    )?;
    Ok(LoadedInputs {
        network,
        paths,
        timetable,
        grid,
    })
}

fn shares_csv(network: &NetworkModel, table: &ShareTable) -> String {
    let mut out = String::from("origin,interval,destination,path,share\n");
    for (i, m, j, row) in table.iter() {
        for (r, p) in row.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                network.station_id(i),
                m,
                network.station_id(j),
                r + 1,
                p
            ));
        }
    }
    out
}

fn read_shares_csv(path: &Path, network: &NetworkModel) -> Result<ShareTable> {
    #[derive(Deserialize)]
    struct Row {
        origin: String,
        interval: u32,
        destination: String,
        path: usize,
        share: f64,
    }
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut rows: std::collections::BTreeMap<(StationIdx, u32, StationIdx), Vec<(usize, f64)>> =
        std::collections::BTreeMap::new();
    let mut rdr = csv::Reader::from_reader(file);
    for rec in rdr.deserialize::<Row>() {
        let rec = rec.map_err(|e| Error::Parse {
            file: path.display().to_string(),
            message: e.to_string(),
        })?;
        let i = network
            .station_idx(&rec.origin)
            .ok_or_else(|| Error::Validation(format!("unknown station {:?}", rec.origin)))?;
        let j = network
            .station_idx(&rec.destination)
            .ok_or_else(|| Error::Validation(format!("unknown station {:?}", rec.destination)))?;
        rows.entry((i, rec.interval, j))
            .or_default()
            .push((rec.path, rec.share));
    }
    let mut table = ShareTable::new();
    for ((i, m, j), mut entries) in rows {
        entries.sort_by_key(|&(r, _)| r);
        table.set_row(i, m, j, entries.into_iter().map(|(_, p)| p).collect());
    }
    table.validate()?;
    Ok(table)
}

fn mu_csv(network: &NetworkModel, outputs: &LoadingOutputs) -> String {
    let mut out = String::from("origin,entry_interval,destination,path,exit_interval,mu\n");
    for (i, m, j, r, row) in outputs.delay_rates.iter() {
        for (n0, mu) in row.iter().enumerate() {
            if *mu != 0.0 {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    network.station_id(i),
                    m,
                    network.station_id(j),
                    r + 1,
                    n0 + 1,
                    mu
                ));
            }
        }
    }
    out
}

fn entry_exit_csv(network: &NetworkModel, outputs: &LoadingOutputs) -> String {
    let mut out = String::from("origin,entry_interval,destination,exit_interval,flow\n");
    for (i, m, j, n, q) in outputs.entry_exit.iter() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            network.station_id(i),
            m,
            network.station_id(j),
            n,
            q
        ));
    }
    out
}

fn indicators_csv(network: &NetworkModel, ind: &PlatformIndicators) -> String {
    let mut out =
        String::from("platform,window,left_behind_rate,arrivals,boardings,denied,waiting\n");
    for (&(p, w), cell) in &ind.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            network.platform(p).id,
            w,
            cell.left_behind_rate(),
            cell.arrivals,
            cell.boardings,
            cell.denied,
            cell.waiting
        ));
    }
    out
}

fn trace_jsonl(outputs: &LoadingOutputs) -> String {
    let mut out = String::new();
    for p in &outputs.trace.passengers {
        out.push_str(&serde_json::to_string(p).unwrap());
        out.push('\n');
    }
    out
}

fn convergence_csv(result: &EstimationResult) -> String {
    let mut out = String::from(
        "k,beta_in_vehicle,beta_transfers,beta_rel_walk,beta_commonality,objective,rmse\n",
    );
    for rec in &result.iterations {
        let b = rec.beta.as_array();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            rec.k,
            b[0],
            b[1],
            b[2],
            b[3],
            rec.objective,
            rec.rmse.map(|r| r.to_string()).unwrap_or_default()
        ));
    }
    out
}

#[derive(Deserialize)]
struct OverrideVar {
    origin: String,
    interval: u32,
    destination: String,
    path: usize,
}

#[derive(Deserialize)]
struct OverrideFile {
    #[serde(default)]
    equalities: Vec<[OverrideVar; 2]>,
    #[serde(default)]
    inequalities: Vec<[OverrideVar; 2]>,
}

fn load_extra_constraints(
    path: &Path,
    network: &NetworkModel,
    index: &ShareVarIndex,
) -> Result<ExtraConstraints> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let file: OverrideFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        message: e.to_string(),
    })?;
    let lookup = |v: &OverrideVar| -> Result<usize> {
        let i = network
            .station_idx(&v.origin)
            .ok_or_else(|| Error::Validation(format!("unknown station {:?}", v.origin)))?;
        let j = network
            .station_idx(&v.destination)
            .ok_or_else(|| Error::Validation(format!("unknown station {:?}", v.destination)))?;
        index.idx(i, v.interval, j, v.path - 1).ok_or_else(|| {
            Error::Validation(format!(
                "constraint override references unknown share variable {}@{} -> {} path {}",
                v.origin, v.interval, v.destination, v.path
            ))
        })
    };
    let mut extra = ExtraConstraints::default();
    for [a, b] in &file.equalities {
        extra.equalities.push((lookup(a)?, lookup(b)?));
    }
    for [a, b] in &file.inequalities {
        extra.inequalities.push((lookup(a)?, lookup(b)?));
    }
    Ok(extra)
}

/// `estimate`: run the full fixed-point estimation and persist the report.
pub fn cmd_estimate(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let config = Config::load(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    ensure_out_dir(out)?;
    let inputs = load_inputs(&config, &base)?;
    let seed = config.seed(seed);

    let afc = read_afc_csv(&config.required_file(&base, "afc")?)?;
    let (entry_flows, observed, ingest) =
        observed_flows_from_afc(&afc, &inputs.grid, &inputs.network)?;

    let reference = match &config.files.reference_shares {
        Some(p) => Some(read_shares_csv(&config.resolve(&base, p), &inputs.network)?),
        None => None,
    };
    let extra = match &config.estimation.alc_override {
        Some(p) => {
            let index = ShareVarIndex::build(&inputs.paths, &inputs.grid);
            Some(load_extra_constraints(
                &config.resolve(&base, p),
                &inputs.network,
                &index,
            )?)
        }
        None => None,
    };

    let run_config = config.run_config(seed);
    let est_inputs = EstimationInputs {
        network: &inputs.network,
        paths: &inputs.paths,
        timetable: &inputs.timetable,
        grid: &inputs.grid,
        entry_flows: &entry_flows,
        observed: &observed,
        reference_shares: reference.as_ref(),
        extra_constraints: extra.as_ref(),
    };
    let result = run_estimation(&est_inputs, &run_config)?;

    write_text(
        &out.join("shares.csv"),
        &shares_csv(&inputs.network, &result.shares),
    )?;
    write_text(&out.join("convergence.csv"), &convergence_csv(&result))?;
    let index = ShareVarIndex::build(&inputs.paths, &inputs.grid);
    write_json(
        &out.join("constraints.json"),
        &constraints_to_json(&result.constraints, &index, &inputs.network),
    )?;
    let report = serde_json::json!({
        "config": config,
        "seed": seed,
        "ingest": ingest,
        "alc_dof": result.alc_dof,
        "iterations": result.iterations,
        "beta": result.beta,
        "final_objective": result.final_objective,
        "stranded": result.final_outputs.trace.stranded,
        "outputs": {
            "shares": "shares.csv",
            "convergence": "convergence.csv",
            "constraints": "constraints.json",
        },
    });
    write_json(&out.join("report.json"), &report)?;
    println!(
        "estimate: beta = {} final objective = {:.3}",
        result.beta, result.final_objective
    );
    Ok(())
}

/// `simulate`: one loading run under a given share table, with indicators.
pub fn cmd_simulate(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let config = Config::load(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    ensure_out_dir(out)?;
    let inputs = load_inputs(&config, &base)?;
    let seed = config.seed(seed);

    let afc = read_afc_csv(&config.required_file(&base, "afc")?)?;
    let (entry_flows, observed, _) =
        observed_flows_from_afc(&afc, &inputs.grid, &inputs.network)?;

    let shares = match config.files.shares.as_deref() {
        None | Some("uniform") => {
            let uniform = BetaVector::ZERO;
            shares_from_beta(&uniform, &inputs.paths, &inputs.grid)
        }
        Some(path) => read_shares_csv(&config.resolve(&base, Path::new(path)), &inputs.network)?,
    };

    let est_inputs = EstimationInputs {
        network: &inputs.network,
        paths: &inputs.paths,
        timetable: &inputs.timetable,
        grid: &inputs.grid,
        entry_flows: &entry_flows,
        observed: &observed,
        reference_shares: None,
        extra_constraints: None,
    };
    let (outputs, objective) = evaluate_shares(&est_inputs, &shares, &config.sim_config(seed))?;

    write_text(&out.join("mu.csv"), &mu_csv(&inputs.network, &outputs))?;
    write_text(
        &out.join("entry_exit.csv"),
        &entry_exit_csv(&inputs.network, &outputs),
    )?;
    write_text(
        &out.join("indicators.csv"),
        &indicators_csv(&inputs.network, &outputs.indicators),
    )?;
    write_text(&out.join("trace.jsonl"), &trace_jsonl(&outputs))?;
    let report = serde_json::json!({
        "config": config,
        "seed": seed,
        "objective": objective,
        "stranded": outputs.trace.stranded,
        "late_exits": outputs.trace.late_exits,
    });
    write_json(&out.join("sim_report.json"), &report)?;
    println!("simulate: objective = {objective:.3}");
    Ok(())
}

fn write_instance(instance: &ToyInstance, out: &Path) -> Result<()> {
    write_json(&out.join("network.json"), &instance.network_json)?;
    write_text(
        &out.join("paths.json"),
        &serde_json::to_string_pretty(&instance.path_file).unwrap(),
    )?;
    instance
        .timetable
        .save(&out.join("timetable.csv"), &instance.network)?;
    Ok(())
}

/// `synth`: build a toy preset, generate synthetic AFC data from the
/// configured true coefficients, and write a ready-to-run estimate config.
pub fn cmd_synth(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let config = Config::load(config_path)?;
    ensure_out_dir(out)?;
    let seed = config.seed(seed);
    let instance = build_toy_network(&config.synth.preset, config.synth.demand_scale)?;
    let beta_true = BetaVector::from_array(config.synth.beta_true);
    let sim = config.sim_config(seed);
    let data = generate_synthetic_afc(&instance, &beta_true, &sim)?;

    write_instance(&instance, out)?;
    write_afc_csv(&out.join("afc.csv"), &data.records)?;
    write_text(
        &out.join("ref_shares.csv"),
        &shares_csv(&instance.network, &data.reference_shares),
    )?;
    write_text(
        &out.join("ref_mu.csv"),
        &mu_csv(&instance.network, &data.outputs),
    )?;
    write_json(
        &out.join("ref_beta.json"),
        &serde_json::json!({ "beta_true": beta_true }),
    )?;

    let mut est_config = config.clone();
    est_config.period.start = {
        let (s, _) = instance.grid.bounds(1);
        s.to_string()
    };
    est_config.period.end = instance.grid.end.to_string();
    est_config.period.tau_s = instance.grid.tau_s;
    est_config.files.network = Some("network.json".into());
    est_config.files.paths = Some("paths.json".into());
    est_config.files.timetable = Some("timetable.csv".into());
    est_config.files.afc = Some("afc.csv".into());
    est_config.files.reference_shares = Some("ref_shares.csv".into());
    est_config.seed = Some(seed);
    est_config.save(&out.join("config_estimate.toml"))?;

    println!(
        "synth: wrote {} AFC records for preset {} (stranded {})",
        data.records.len(),
        instance.name,
        data.outputs.trace.stranded
    );
    Ok(())
}
