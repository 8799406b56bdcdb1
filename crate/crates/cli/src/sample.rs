use ordered_float::OrderedFloat;

use wate_core::dataset::{StratumIndex, StratumKey};
use wate_core::format::sig17;
use wate_core::twophase::{
    equal_allocation, poisson_sample, reference_probabilities, srswor_sample, QByStratum,
};

use crate::args::{SampleArgs, SchemeArg};
use crate::output::{open_input, open_output, user_error};

fn column(headers: &csv::StringRecord, name: &str, file: &str) -> anyhow::Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| user_error(format!("{file}: column '{name}' not found")))
}

fn parse_key(rec: &csv::StringRecord, idx: &[usize], names: &[String], row: usize) -> anyhow::Result<StratumKey> {
    idx.iter()
        .zip(names)
        .map(|(&i, name)| {
            rec.get(i)
                .and_then(|v| v.parse::<f64>().ok())
                .map(OrderedFloat)
                .ok_or_else(|| user_error(format!("row {row}: stratum column '{name}' is not numeric")))
        })
        .collect()
}

fn read_q_file(args: &SampleArgs) -> anyhow::Result<QByStratum> {
    let path = args.q_file.as_ref().expect("checked by caller");
    let file = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open_input(path)?);
    let headers = rdr.headers()?.clone();
    let idx = args
        .strata
        .iter()
        .map(|c| column(&headers, c, &file))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let iq = column(&headers, "q", &file)?;
    let mut out = QByStratum::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let key = parse_key(&rec, &idx, &args.strata, r + 1)?;
        let q: f64 = rec
            .get(iq)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| user_error(format!("{file} row {}: q is not a number", r + 1)))?;
        out.insert(key, q);
    }
    Ok(out)
}

pub fn run(args: &SampleArgs) -> anyhow::Result<()> {
    let file = args.input.display().to_string();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open_input(&args.input)?);
    let headers = rdr.headers()?.clone();
    for name in [&args.delta_column, &args.q_column] {
        if headers.iter().any(|h| h == name) {
            return Err(user_error(format!("{file} already has a '{name}' column")));
        }
    }
    let key_idx = args
        .strata
        .iter()
        .map(|c| column(&headers, c, &file))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let blank_idx = args
        .phase2_columns
        .iter()
        .map(|c| column(&headers, c, &file))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let records = rdr.records().collect::<Result<Vec<_>, _>>()?;
    if records.is_empty() {
        return Err(user_error(format!("{file} has no data rows")));
    }
    let keys = records
        .iter()
        .enumerate()
        .map(|(r, rec)| parse_key(rec, &key_idx, &args.strata, r + 1))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let index = StratumIndex::from_keys(args.strata.clone(), &keys);
    let n = records.len();

    let (delta, q) = match (args.scheme, args.m, &args.q_file) {
        (SchemeArg::Poisson, _, Some(_)) => poisson_sample(&index, &read_q_file(args)?, args.seed)?,
        (SchemeArg::Poisson, Some(m), None) => {
            poisson_sample(&index, &reference_probabilities(&index, m, n)?, args.seed)?
        }
        (SchemeArg::Srswor, Some(m), None) => srswor_sample(&index, &equal_allocation(&index, m), args.seed)?,
        (SchemeArg::Srswor, _, Some(_)) => {
            return Err(user_error("--q-file applies to Poisson sampling; use --m with srswor"))
        }
        (_, None, None) => return Err(user_error("give --m or --q-file")),
    };
    log::info!("phase 2: {} of {n} rows", delta.iter().filter(|&&d| d).count());

    let mut w = csv::Writer::from_writer(open_output(args.out.as_deref())?);
    let mut header: Vec<&str> = headers.iter().collect();
    header.push(&args.delta_column);
    header.push(&args.q_column);
    w.write_record(&header)?;
    for (i, rec) in records.iter().enumerate() {
        let mut row: Vec<String> = rec.iter().map(str::to_string).collect();
        if !delta[i] {
            for &j in &blank_idx {
                row[j].clear();
            }
        }
        row.push(u8::from(delta[i]).to_string());
        row.push(sig17(q[i]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
