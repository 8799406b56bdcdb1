use std::io::Write;

use serde::Serialize;
use serde_json::value::RawValue;

use wate_core::design::{ipsw_allocation, neyman_allocation, DesignInput};
use wate_core::format::{sig17, sig17_opt};

use crate::args::{DesignArgs, DesignMethod, Format};
use crate::output::{num, open_input, open_output, user_error, write_json};

struct Strata {
    labels: Vec<String>,
    p: Vec<f64>,
    sigma: Vec<f64>,
    xi: Option<Vec<f64>>,
}

fn read_strata(args: &DesignArgs) -> anyhow::Result<Strata> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(open_input(&args.strata)?);
    let headers = rdr.headers()?.clone();
    let col = |names: &[&str]| headers.iter().position(|h| names.contains(&h));
    let missing = |what: &str| user_error(format!("{}: no '{what}' column", args.strata.display()));
    let i_p = col(&["p", "p_k"]).ok_or_else(|| missing("p"))?;
    let i_sigma = col(&["sigma", "sigma_k"]).ok_or_else(|| missing("sigma"))?;
    let i_xi = col(&["xi", "xi_k"]);
    let i_k = col(&["k", "stratum"]);
    let mut s = Strata {
        labels: Vec::new(),
        p: Vec::new(),
        sigma: Vec::new(),
        xi: i_xi.map(|_| Vec::new()),
    };
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize, name: &str| -> anyhow::Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| user_error(format!("row {}: '{name}' is not a number", line + 1)))
        };
        s.labels.push(i_k.and_then(|i| rec.get(i)).map_or_else(|| line.to_string(), str::to_string));
        s.p.push(field(i_p, "p")?);
        s.sigma.push(field(i_sigma, "sigma")?);
        if let (Some(i), Some(xi)) = (i_xi, s.xi.as_mut()) {
            xi.push(field(i, "xi")?);
        }
    }
    Ok(s)
}

#[derive(Serialize)]
struct JsonDesign {
    method: &'static str,
    qbar: Box<RawValue>,
    strata: Vec<String>,
    q: Vec<Box<RawValue>>,
    objective: Box<RawValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    objective_normalized: Option<Box<RawValue>>,
    feasible: bool,
    max_q: Box<RawValue>,
}

pub fn run(args: &DesignArgs) -> anyhow::Result<()> {
    let s = read_strata(args)?;
    let input = DesignInput {
        p: s.p.clone(),
        sigma: s.sigma.clone(),
        xi: s.xi.clone(),
        qbar: args.qbar,
        c_w: args.c_w,
    };
    let (out, method) = match args.method {
        DesignMethod::Neyman => (neyman_allocation(&input)?, "neyman"),
        DesignMethod::Ipsw => (ipsw_allocation(&input)?, "ipsw"),
    };
    match args.format {
        Format::Json => write_json(
            args.out.as_deref(),
            &JsonDesign {
                method,
                qbar: num(args.qbar),
                strata: s.labels.clone(),
                q: out.q.iter().map(|&q| num(q)).collect(),
                objective: num(out.objective),
                objective_normalized: out.objective_normalized.map(num),
                feasible: out.feasible,
                max_q: num(out.max_q),
            },
        )?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(open_output(args.out.as_deref())?);
            w.write_record(["k", "p", "sigma", "xi", "q", "objective", "objective_normalized", "feasible"])?;
            for k in 0..s.p.len() {
                w.write_record([
                    s.labels[k].clone(),
                    sig17(s.p[k]),
                    sig17(s.sigma[k]),
                    sig17_opt(s.xi.as_ref().map(|x| x[k])),
                    sig17(out.q[k]),
                    sig17(out.objective),
                    sig17_opt(out.objective_normalized),
                    out.feasible.to_string(),
                ])?;
            }
            w.flush()?;
        }
        Format::Md => {
            let mut w = open_output(args.out.as_deref())?;
            writeln!(w, "| stratum | p | q |\n|---|---:|---:|")?;
            for k in 0..s.p.len() {
                writeln!(w, "| {} | {:.4} | {:.4} |", s.labels[k], s.p[k], out.q[k])?;
            }
            writeln!(w, "\nobjective {:.6}, feasible {}", out.objective, out.feasible)?;
            w.flush()?;
        }
    }
    Ok(())
}
