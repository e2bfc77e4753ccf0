use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{RunOutcome, SimConfig, SimError, Winner};

/// One row of the batch CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub run_index: u64,
    pub runtime: u32,
    pub winner: Winner,
    pub x0: u64,
    pub n: u64,
    pub seed: u64,
}

pub fn write_batch_csv<W: Write>(
    out: W,
    config: &SimConfig,
    outcomes: &[RunOutcome],
) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    for (i, o) in outcomes.iter().enumerate() {
        w.serialize(BatchRecord {
            run_index: i as u64,
            runtime: o.runtime,
            winner: o.winner,
            x0: config.x0,
            n: config.n,
            seed: config.master_seed,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `run_index,t,x_t`; runs without a trajectory are skipped.
pub fn write_trajectories_csv<W: Write>(out: W, outcomes: &[RunOutcome]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run_index", "t", "x_t"])?;
    for (i, o) in outcomes.iter().enumerate() {
        for (t, x) in o.trajectory.iter().flatten().enumerate() {
            w.write_record([i.to_string(), t.to_string(), x.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_batch_csv<R: Read>(input: R) -> Result<Vec<BatchRecord>, SimError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let expected = ["run_index", "runtime", "winner", "x0", "n", "seed"];
    if headers.iter().ne(expected) {
        return Err(SimError::InvalidConfig(format!(
            "batch header {:?} does not match {}",
            headers.iter().collect::<Vec<_>>(),
            expected.join(",")
        )));
    }
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::batch;
    use crate::update_fn::ProtocolSpec;

    #[test]
    fn batch_csv_round_trip() {
        let config = SimConfig::new(200, 110, ProtocolSpec::kmaj(3)).unwrap();
        let outcomes = batch(&config, 5, 7).unwrap();
        let mut buf = Vec::new();
        write_batch_csv(&mut buf, &config.clone().with_seed(7), &outcomes).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("run_index,runtime,winner,x0,n,seed\n0,"));
        let rows = read_batch_csv(&buf[..]).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[3].runtime, outcomes[3].runtime);
        assert_eq!(rows[3].seed, 7);
        assert!(read_batch_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn trajectories_csv_layout() {
        let config = SimConfig::new(100, 100, ProtocolSpec::kmaj(3)).unwrap().with_trajectory(true);
        let outcomes = batch(&config, 2, 1).unwrap();
        let mut buf = Vec::new();
        write_trajectories_csv(&mut buf, &outcomes).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "run_index,t,x_t\n0,0,100\n1,0,100\n");
    }
}
