use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::photonics::ChannelMode;

use super::sweep::{SweepAxis, SweepTable};

pub const CSV_HEADER: &str =
    "axis_value,profile,channel_mode,qber,qber_err,sift_rate_bps,net_rate_bps,detected_rate_cps,seed";

/// Renders the table as CSV. Floats use the shortest representation that
/// round-trips, so equal tables give equal bytes.
pub fn to_csv(table: &SweepTable) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &table.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.axis_value,
            r.profile,
            r.channel_mode.as_str(),
            r.qber,
            r.qber_err,
            r.sift_rate_bps,
            r.net_rate_bps,
            r.detected_rate_cps,
            r.seed
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// Gnuplot script plotting QBER with error bars for every profile and
/// channel mode present in the table.
pub fn gnuplot_script(table: &SweepTable, csv_name: &str) -> String {
    let (xlabel, scale) = match table.axis {
        SweepAxis::ClockHz => ("Clock frequency (GHz)", "1e-9"),
        SweepAxis::LengthKm => ("Fibre length (km)", "1"),
    };
    let mut series: Vec<(String, ChannelMode)> = Vec::new();
    for r in &table.rows {
        if !series.iter().any(|(p, m)| *p == r.profile && *m == r.channel_mode) {
            series.push((r.profile.clone(), r.channel_mode));
        }
    }
    let mut s = String::new();
    writeln!(s, "set datafile separator ','").unwrap();
    writeln!(s, "set terminal pngcairo size 800,600").unwrap();
    writeln!(s, "set output '{}.png'", table.name).unwrap();
    writeln!(s, "set xlabel '{xlabel}'").unwrap();
    writeln!(s, "set ylabel 'QBER'").unwrap();
    writeln!(s, "set key top left").unwrap();
    writeln!(s, "set grid").unwrap();
    let plots: Vec<String> = series
        .iter()
        .map(|(profile, mode)| {
            let sel = format!("(strcol(2) eq '{profile}' && strcol(3) eq '{}')", mode.as_str());
            let point = if *mode == ChannelMode::FullFiber { 7 } else { 6 };
            format!(
                "'{csv_name}' skip 1 using ($1*{scale}):({sel} ? $4 : 1/0):5 with yerrorlines pt {point} title '{profile} {}'",
                mode.as_str()
            )
        })
        .collect();
    writeln!(s, "plot {}", plots.join(", \\\n     ")).unwrap();
    s
}

/// Writes the CSV to `path` and a gnuplot script next to it (same stem,
/// `.gp`). Returns the script path.
pub fn emit_results(table: &SweepTable, path: &Path) -> Result<PathBuf> {
    if table.rows.is_empty() {
        return Err(Error::Usage("refusing to write an empty result table".into()));
    }
    std::fs::write(path, to_csv(table))?;
    let script = path.with_extension("gp");
    let csv_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("results.csv");
    std::fs::write(&script, gnuplot_script(table, csv_name))?;
    Ok(script)
}
