//! Metric reports as `key=value` lines, one metric per line, in a fixed
//! order. A metric that was not computable writes `none`; an infinite PSNR
//! (zero error against the reference) writes `inf`. Values use the shortest
//! decimal form that parses back to the identical float.

use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::MetricReport;

const KEYS: [&str; 6] = ["cd", "f_score", "rmse", "medae", "ssim", "psnr"];

pub fn format_report(r: &MetricReport) -> String {
    let mut out = String::new();
    for (key, value) in fields(r) {
        out.push_str(key);
        out.push('=');
        match value {
            None => out.push_str("none"),
            Some(v) if v.is_infinite() && v > 0.0 => out.push_str("inf"),
            Some(v) => out.push_str(&format!("{v}")),
        }
        out.push('\n');
    }
    out
}

pub fn write_report(path: &Path, r: &MetricReport) -> Result<()> {
    super::atomic_write(path, format_report(r).as_bytes())
}

pub fn parse_report(text: &str) -> Result<MetricReport> {
    let mut r = MetricReport::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!("report line {}: expected key=value", idx + 1))
        })?;
        let slot = match key.trim() {
            "cd" => &mut r.cd,
            "f_score" => &mut r.f_score,
            "rmse" => &mut r.rmse,
            "medae" => &mut r.medae,
            "ssim" => &mut r.ssim,
            "psnr" => &mut r.psnr,
            other => return Err(Error::Format(format!("unknown report key '{other}'"))),
        };
        let value = value.trim();
        *slot = match value {
            "none" => None,
            "inf" => Some(f64::INFINITY),
            _ => Some(value.parse::<f64>().map_err(|_| {
                Error::Format(format!("bad report value '{value}' for '{key}'"))
            })?),
        };
    }
    Ok(r)
}

fn fields(r: &MetricReport) -> [(&'static str, Option<f64>); 6] {
    [
        (KEYS[0], r.cd),
        (KEYS[1], r.f_score),
        (KEYS[2], r.rmse),
        (KEYS[3], r.medae),
        (KEYS[4], r.ssim),
        (KEYS[5], r.psnr),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrips_including_inf_and_none() {
        let r = MetricReport {
            cd: Some(0.012345678901234567),
            f_score: Some(0.9375),
            rmse: None,
            medae: Some(3e-7),
            ssim: Some(1.0),
            psnr: Some(f64::INFINITY),
        };
        let text = format_report(&r);
        assert!(text.contains("psnr=inf"));
        assert!(text.contains("rmse=none"));
        let back = parse_report(&text).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn file_roundtrip_and_strictness() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.txt");
        let r = MetricReport { cd: Some(2.0), ..Default::default() };
        write_report(&path, &r).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(parse_report(&text).unwrap(), r);

        assert!(parse_report("bogus=1\n").is_err());
        assert!(parse_report("cd\n").is_err());
        assert!(parse_report("cd=fast\n").is_err());
    }
}
