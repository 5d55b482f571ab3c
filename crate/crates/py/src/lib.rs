use pyo3::prelude::*;

#[pymodule]
fn msmcal(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
