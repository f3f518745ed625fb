//! Plot-ready tables for the two panels: data NMSE and misdetection
//! probability against SNR, one series per receiver and oversampling factor.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::sweep::CellResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Panel {
    NmseX,
    MissProbability,
}

impl Panel {
    pub fn stem(self) -> &'static str {
        match self {
            Panel::NmseX => "nmse_x_vs_snr",
            Panel::MissProbability => "p_md_vs_snr",
        }
    }

    fn value(self, c: &CellResult) -> (f64, f64) {
        match self {
            Panel::NmseX => (c.summary.nmse_x.mean, c.summary.nmse_x.ci95),
            Panel::MissProbability => (c.summary.p_md.mean, c.summary.p_md.ci95),
        }
    }
}

type Series = BTreeMap<(String, usize), Vec<(f64, f64, f64)>>;

fn series(cells: &[CellResult], panel: Panel) -> Series {
    let mut out: Series = BTreeMap::new();
    for c in cells.iter().filter(|c| c.valid) {
        let (v, ci) = panel.value(c);
        out.entry((c.receiver.name().to_string(), c.mosf))
            .or_default()
            .push((c.snr_db, v, ci));
    }
    for pts in out.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Writes `<stem>.csv` (long format) and `<stem>.dat` (gnuplot blocks) for
/// both panels and returns the paths.
pub fn emit_plotdata(cells: &[CellResult], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for panel in [Panel::NmseX, Panel::MissProbability] {
        let data = series(cells, panel);

        let csv_path = dir.join(format!("{}.csv", panel.stem()));
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Csv {
            path: csv_path.clone(),
            source: e,
        })?;
        let csv_err = |e| Error::Csv {
            path: csv_path.clone(),
            source: e,
        };
        w.write_record(["series", "receiver", "mosf", "snr_db", "value", "ci95"])
            .map_err(csv_err)?;
        for ((rx, m), pts) in &data {
            let name = format!("{rx} M={m}");
            for (snr, v, ci) in pts {
                w.write_record([
                    name.clone(),
                    rx.clone(),
                    m.to_string(),
                    snr.to_string(),
                    v.to_string(),
                    ci.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        paths.push(csv_path.clone());

        let dat_path = dir.join(format!("{}.dat", panel.stem()));
        let mut f = create(&dat_path)?;
        let io = |e| Error::io(&dat_path, e);
        writeln!(f, "# columns: snr_db value ci95; one block per series").map_err(io)?;
        for ((rx, m), pts) in &data {
            writeln!(f, "\n\n# {rx} M={m}").map_err(io)?;
            for (snr, v, ci) in pts {
                writeln!(f, "{snr} {v} {ci}").map_err(io)?;
            }
        }
        f.flush().map_err(io)?;
        paths.push(dat_path);
    }
    Ok(paths)
}
