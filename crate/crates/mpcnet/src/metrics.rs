use std::io::Write;
use std::path::Path;

use mpcnet_core::trainer::MetricsRow;

pub const METRICS_HEADER: [&str; 8] = [
    "iter",
    "demo_seconds_accumulated",
    "loss",
    "avg_cost",
    "survival_s",
    "g_median",
    "alpha",
    "expert_entropy",
];

/// Shortest round-trip text for `v`, in exponent form outside `[1e-4, 1e6)`.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e6).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

pub fn write_metrics<W: Write>(out: W, rows: &[MetricsRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.iter.to_string(),
            num(r.demo_seconds),
            num(r.loss),
            num(r.avg_cost),
            num(r.survival_s),
            num(r.g_median),
            num(r.alpha),
            num(r.expert_entropy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_file(path: &Path, rows: &[MetricsRow]) -> anyhow::Result<()> {
    let file = std::fs::File::create(path)?;
    write_metrics(std::io::BufWriter::new(file), rows)?;
    Ok(())
}
