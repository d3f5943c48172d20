//! `zipcoll plot`: a self-contained gnuplot script from a CSV report.
//!
//! One data block per (operation, transport, world) series, then a time
//! plot and a compression-ratio plot, both against per-rank input bytes.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::report::Record;

/// Per input size, every sample's seconds and ratio, for one series.
type Series = BTreeMap<usize, (Vec<f64>, Vec<f64>)>;

fn block_name(key: &(String, String, usize)) -> String {
    let op: String = key.0.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
    format!("${op}_{}_w{}", key.1, key.2)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn gnuplot_script(records: &[Record]) -> String {
    let mut series: BTreeMap<(String, String, usize), Series> = BTreeMap::new();
    for r in records {
        let key = (r.operation.clone(), r.transport.clone(), r.world_size);
        let slot = series.entry(key).or_default().entry(2 * r.element_count).or_default();
        slot.0.push(r.seconds);
        slot.1.push(r.ratio);
    }

    let mut s = String::new();
    for (key, points) in &series {
        let _ = writeln!(s, "{} << EOD", block_name(key));
        let _ = writeln!(s, "# bytes seconds ratio");
        for (bytes, (secs, ratios)) in points {
            let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
            let _ = writeln!(s, "{bytes} {:.9e} {:.6}", median(secs.clone()), mean_ratio);
        }
        let _ = writeln!(s, "EOD");
    }
    if series.is_empty() {
        return s;
    }

    let plot = |col: u8| {
        series
            .keys()
            .map(|k| format!("{} using 1:{col} with linespoints title \"{} {} w={}\"", block_name(k), k.0, k.1, k.2))
            .collect::<Vec<_>>()
            .join(", \\\n     ")
    };
    let _ = writeln!(s, "\nset logscale x 2\nset xlabel \"bytes per rank\"\nset key left top");
    let _ = writeln!(s, "set logscale y\nset ylabel \"seconds\"\nplot {}", plot(2));
    let _ = writeln!(s, "pause -1\nunset logscale y\nset ylabel \"compression ratio\"\nplot {}", plot(3));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(op: &str, n: usize, seconds: f64) -> Record {
        Record {
            operation: op.into(),
            transport: "sim".into(),
            world_size: 4,
            element_count: n,
            payload_bytes: 0,
            compressed_bytes: 0,
            seconds,
            ratio: 1.4,
            path: String::new(),
            verified: String::new(),
        }
    }

    #[test]
    fn one_block_per_series_with_median_times() {
        let recs = vec![
            rec("a2a-d1", 1024, 3.0),
            rec("a2a-d1", 1024, 1.0),
            rec("a2a-d1", 1024, 2.0),
            rec("a2a-d1", 64, 0.5),
            rec("allgather", 64, 0.25),
        ];
        let s = gnuplot_script(&recs);
        assert!(s.contains("$a2a_d1_sim_w4 << EOD\n# bytes seconds ratio\n128 5.000000000e-1 1.400000\n2048 2.000000000e0 1.400000\nEOD"));
        assert!(s.contains("$allgather_sim_w4 << EOD"));
        assert_eq!(s.matches("plot ").count(), 2);
    }

    #[test]
    fn empty_report_gives_empty_script() {
        assert!(gnuplot_script(&[]).is_empty());
    }
}
