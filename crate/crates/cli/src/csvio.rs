//! Surface and vega-grid CSV formats.
//!
//! Surface files are tab-separated: a header `spot<TAB>t_0<TAB>...<TAB>t_{J-1}`
//! and one row per spot node, `x_i<TAB>sigma_i0<TAB>...`.

use std::path::Path;

use dupire_aad_core::VolSurface;
use ndarray::Array2;

use crate::output::fmt_f64;
use crate::CliError;

pub fn read_surface(path: &Path) -> Result<VolSurface, CliError> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::Data(format!("cannot read surface file {}: {e}", path.display())))?;
    parse_surface(&bytes).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_surface(bytes: &[u8]) -> Result<VolSurface, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .from_reader(bytes);
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| CliError::Data("empty surface file".into()))?
        .map_err(|e| CliError::Data(e.to_string()))?;
    if header.get(0).map(str::trim) != Some("spot") {
        return Err(CliError::Data("first header cell must be `spot`".into()));
    }
    let times = header
        .iter()
        .skip(1)
        .map(|c| parse_cell(c, 1, "header"))
        .collect::<Result<Vec<_>, _>>()?;
    let mut spots = Vec::new();
    let mut rows = Vec::new();
    for (r, rec) in records.enumerate() {
        let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
        let line = r + 2;
        let mut cells = rec.iter();
        let spot = parse_cell(cells.next().unwrap_or(""), line, "spot")?;
        let row = cells
            .map(|c| parse_cell(c, line, "vol"))
            .collect::<Result<Vec<_>, _>>()?;
        spots.push(spot);
        rows.push(row);
    }
    Ok(VolSurface::from_rows(spots, times, &rows)?)
}

fn parse_cell(cell: &str, line: usize, what: &str) -> Result<f64, CliError> {
    cell.trim()
        .parse()
        .map_err(|_| CliError::Data(format!("line {line}: bad {what} value {cell:?}")))
}

fn grid_tsv(spots: &[f64], times: &[f64], values: &Array2<f64>) -> Vec<u8> {
    let mut out = String::from("spot");
    for &t in times {
        out.push('\t');
        out.push_str(&fmt_f64(t));
    }
    out.push('\n');
    for (i, &x) in spots.iter().enumerate() {
        out.push_str(&fmt_f64(x));
        for v in values.row(i) {
            out.push('\t');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out.into_bytes()
}

pub fn write_surface(surface: &VolSurface) -> Vec<u8> {
    grid_tsv(surface.spots(), surface.times(), surface.vols())
}

/// Vega grid in the surface layout, for heat maps.
pub fn write_vega_wide(surface: &VolSurface, vega: &Array2<f64>) -> Vec<u8> {
    grid_tsv(surface.spots(), surface.times(), vega)
}

/// Vega grid in long format, `i,j,spot,time,vega,vega_se`.
pub fn write_vega_long(surface: &VolSurface, vega: &Array2<f64>, se: &Array2<f64>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["i", "j", "spot", "time", "vega", "vega_se"])
        .expect("in-memory write");
    for ((i, j), v) in vega.indexed_iter() {
        w.write_record([
            i.to_string(),
            j.to_string(),
            fmt_f64(surface.spots()[i]),
            fmt_f64(surface.times()[j]),
            fmt_f64(*v),
            fmt_f64(se[[i, j]]),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}
