//! Report rows (`metric,variant,dataset,value,seed`) and PGM map export.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::image::AttributionMap;

pub const REPORT_HEADER: &str = "metric,variant,dataset,value,seed";

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub metric: String,
    pub variant: String,
    pub dataset: String,
    pub value: f64,
    pub seed: u64,
}

/// Evaluation results for one trained pipeline.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct MetricReport {
    pub variant: String,
    pub dataset: String,
    pub seed: u64,
    pub accuracy: f64,
    pub pxap: f64,
    pub iou_auc: f64,
    /// `(k percent, perturbed accuracy)`.
    pub fidelity: Vec<(f64, f64)>,
    /// `(protocol name, pxap)`.
    pub robustness: Vec<(String, f64)>,
    pub mean_mask: f64,
}

impl MetricReport {
    pub fn rows(&self) -> Vec<ReportRow> {
        let mut named: Vec<(String, f64)> = vec![
            ("accuracy".into(), self.accuracy),
            ("pxap".into(), self.pxap),
            ("iou_auc".into(), self.iou_auc),
        ];
        named.extend(self.fidelity.iter().map(|(k, v)| (format!("fidelity_k{k}"), *v)));
        named.extend(self.robustness.iter().map(|(n, v)| (format!("robust_{n}"), *v)));
        named.push(("mean_mask".into(), self.mean_mask));
        named
            .into_iter()
            .map(|(metric, value)| ReportRow {
                metric,
                variant: self.variant.clone(),
                dataset: self.dataset.clone(),
                value,
                seed: self.seed,
            })
            .collect()
    }

    pub fn check(&self) -> Result<()> {
        for r in self.rows() {
            ensure!(
                (0.0..=1.0).contains(&r.value),
                Contract,
                "report value {} = {} outside [0, 1]",
                r.metric,
                r.value
            );
        }
        Ok(())
    }
}

pub fn write_report_csv(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(REPORT_HEADER.split(',')).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.metric.as_str(),
            r.variant.as_str(),
            r.dataset.as_str(),
            &format!("{:?}", r.value),
            &r.seed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    ensure!(
        header.join(",") == REPORT_HEADER,
        Format,
        "unexpected report header {:?}",
        header
    );
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let field = |i: usize| rec.get(i).ok_or_else(|| Error::Format("short report row".into()));
        rows.push(ReportRow {
            metric: field(0)?.to_string(),
            variant: field(1)?.to_string(),
            dataset: field(2)?.to_string(),
            value: field(3)?
                .parse()
                .map_err(|_| Error::Format(format!("bad value {:?}", rec.get(3))))?,
            seed: field(4)?
                .parse()
                .map_err(|_| Error::Format(format!("bad seed {:?}", rec.get(4))))?,
        });
    }
    Ok(rows)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Binary greyscale PGM with `value = round(255 * map)`.
pub fn write_pgm(map: &AttributionMap, path: &Path) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.extend(map.values.iter().map(|v| (255.0 * v).round().clamp(0.0, 255.0) as u8));
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Parses a binary PGM with maxval 255 into `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::Format(format!("PGM: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header not ASCII"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("magic is not P5"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric header field"));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(bad("maxval must be 255"));
    }
    let body = &bytes[pos + 1..];
    if body.len() != w * h {
        return Err(bad("pixel count does not match header"));
    }
    Ok((w, h, body.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let map = AttributionMap::new(2, 3, vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.1]).unwrap();
        write_pgm(&map, &path).unwrap();
        let (w, h, px) = parse_pgm(&fs::read(&path).unwrap()).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(px, vec![0, 128, 255, 64, 191, 26]);
    }

    #[test]
    fn report_values_checked() {
        let mut r = MetricReport {
            accuracy: 0.5,
            ..Default::default()
        };
        assert!(r.check().is_ok());
        r.pxap = 1.5;
        assert!(r.check().is_err());
    }
}
