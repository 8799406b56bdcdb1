use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::value::RawValue;

use wate_core::estimand::Estimand;
use wate_core::exec::Execution;
use wate_core::simstudy::{DgpParams, ReferenceSummary};

use crate::args::TruthArgs;
use crate::output::{num, user_error, write_json};

#[derive(Serialize)]
pub struct JsonTruth {
    pub reference_n: usize,
    pub seed: u64,
    pub prevalence: Box<RawValue>,
    pub truths: BTreeMap<String, Box<RawValue>>,
}

impl JsonTruth {
    pub fn new(r: &ReferenceSummary) -> Self {
        Self {
            reference_n: r.n,
            seed: r.seed,
            prevalence: num(r.prevalence),
            truths: Estimand::ALL.iter().map(|&e| (e.to_string(), num(r.truth(e)))).collect(),
        }
    }
}

pub fn run(args: &TruthArgs) -> anyhow::Result<()> {
    if args.reference_n == 0 {
        return Err(user_error("--reference-n must be positive"));
    }
    let r = ReferenceSummary::compute(&DgpParams::default(), args.reference_n, args.seed, Execution::Sequential)?;
    write_json(args.out.as_deref(), &JsonTruth::new(&r))
}
