use std::path::Path;

use crate::error::{Error, Result};
use crate::hemodynamics::HemoBasis;

/// CSV with the mean response against tap time and the eigenvalue spectrum
/// against its index, side by side; the shorter column pair is left blank.
pub fn figure_csv(basis: &HemoBasis) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Numerical(format!("csv encoding failed: {e}"));
    w.write_record(["tap_time_s", "mean_response", "index", "eigenvalue"]).map_err(csv_err)?;
    let h = basis.mean_response();
    let rows = basis.taps.max(basis.eigenvalues.len());
    for k in 0..rows {
        let (t, v) = if k < basis.taps {
            ((k as f64 * basis.t_r).to_string(), h[k].to_string())
        } else {
            (String::new(), String::new())
        };
        let (i, e) = match basis.eigenvalues.get(k) {
            Some(e) => ((k + 1).to_string(), e.to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([t, v, i, e]).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Numerical(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Numerical(e.to_string()))
}

pub fn export_figure_data(basis: &HemoBasis, out: &Path) -> Result<()> {
    basis.validate()?;
    crate::io::write_text(out, &figure_csv(basis)?)
}
