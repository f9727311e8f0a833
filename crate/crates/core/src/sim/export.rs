use std::io::Write;

use super::{EnsembleResult, Trajectory};

/// Header `t,<names...>`, one row per output time.
pub fn write_trajectory_csv<W: Write>(out: W, names: &[String], traj: &Trajectory) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let mut row = vec![t.to_string()];
        row.extend(s.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Long format: `run,t,<names...>`.
pub fn write_ensemble_csv<W: Write>(out: W, names: &[String], ens: &EnsembleResult) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["run".to_string(), "t".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for run in &ens.runs {
        let Some(traj) = &run.trajectory else { continue };
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let mut row = vec![run.index.to_string(), t.to_string()];
            row.extend(s.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
